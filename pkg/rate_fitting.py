"""
Least-squares line fits used by every rate and growth study
"""

import math
from typing import Dict, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from lab_errors import ConfigError


def fit_line(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    """Fit y = slope * x + intercept and report r2 and the slope standard error"""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ConfigError(f"fit_line needs matching lengths, got {x.size} and {y.size}")
    if x.size < 2:
        raise ConfigError("fit_line needs at least two points")

    model = LinearRegression()
    model.fit(x.reshape(-1, 1), y)
    predicted = model.predict(x.reshape(-1, 1))

    # r2_score is undefined for constant data; a flat line fits it exactly
    if np.ptp(y) == 0.0:
        r2 = 1.0
    else:
        r2 = float(r2_score(y, predicted))

    slope_stderr = 0.0
    if x.size > 2:
        residual_var = float(np.sum((y - predicted) ** 2)) / (x.size - 2)
        spread = float(np.sum((x - x.mean()) ** 2))
        if spread > 0:
            slope_stderr = math.sqrt(residual_var / spread)

    return {
        'slope': float(model.coef_[0]),
        'intercept': float(model.intercept_),
        'r2': r2,
        'slope_stderr': slope_stderr,
        'n_points': int(x.size),
    }


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    """Fit log(y) against log(x); nonpositive entries are dropped"""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        raise ConfigError("fit_loglog needs at least two positive pairs")
    result = fit_line(np.log(x[keep]), np.log(y[keep]))
    result['dropped'] = int((~keep).sum())
    return result


def expected_exponents(d: int, r: float = 2.0) -> Dict[str, float]:
    """Rate exponents nu_r = min(1, d/r) and log exponent mu_r (0 if r < d, else 1/r)"""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    if r <= 1.0:
        raise ConfigError(f"r must be > 1, got {r}")
    nu_r = min(1.0, d / r)
    mu_r = 0.0 if r < d else 1.0 / r
    return {'nu_r': nu_r, 'mu_r': mu_r}
