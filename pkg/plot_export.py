"""
Plot Export
Plot-ready two-column .dat files and optional log-log plotly HTML pages
"""

from pathlib import Path
from typing import List, Sequence, Optional

import numpy as np
import pandas as pd
import plotly.express as px
import logging

logger = logging.getLogger(__name__)

PLOT_DIV_ID = 'homlab-plot'


def write_dat(path: Path, x: Sequence[float], y: Sequence[float], x_label: str, y_label: str) -> Path:
    """Two whitespace-separated columns with a commented header"""
    path = Path(path)
    data = np.column_stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    np.savetxt(path, data, fmt='%.12e', header=f"{x_label} {y_label}", comments='# ')
    return path


def write_table_dats(table: pd.DataFrame, x_column: str, y_columns: Sequence[str],
                     out_dir: Path, stem: str) -> List[Path]:
    """One .dat per y column; columns that are missing or entirely NaN are skipped"""
    written = []
    for column in y_columns:
        if column not in table.columns or table[column].isna().all():
            logger.debug(f"Skipping plot data for '{column}'")
            continue
        rows = table[[x_column, column]].dropna()
        written.append(write_dat(Path(out_dir) / f"{stem}_{column}.dat", rows[x_column], rows[column],
                                 x_column, column))
    return written


def write_loglog_html(table: pd.DataFrame, x_column: str, y_columns: Sequence[str],
                      path: Path, title: str) -> Optional[Path]:
    """Log-log line plot; the div id is fixed and plotly.js comes from the CDN so reruns are byte-identical"""
    columns = [c for c in y_columns if c in table.columns and (table[c] > 0).any()]
    if not columns:
        logger.warning(f"No positive series to plot for '{title}'")
        return None
    long = table[[x_column] + columns].melt(id_vars=x_column, var_name='series', value_name='value')
    long = long[long['value'] > 0]
    fig = px.line(long, x=x_column, y='value', color='series', markers=True, log_x=True, log_y=True, title=title)
    fig.update_layout(template='plotly_white', legend_title_text='')
    path = Path(path)
    fig.write_html(str(path), include_plotlyjs='cdn', full_html=True, div_id=PLOT_DIV_ID)
    return path
