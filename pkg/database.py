import sqlite3
import datetime
from typing import List, Dict, Any, Optional


class DatabaseManager:
    """Run log: every CLI run with its artifacts and headline metrics"""

    def __init__(self, db_name='homlab_runs.db'):
        self.db_name = str(db_name)
        self.init_database()

    def get_connection(self):
        return sqlite3.connect(self.db_name)

    def init_database(self):
        """Initialize database with required tables"""
        conn = self.get_connection()
        cursor = conn.cursor()

        # Runs table
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                status TEXT NOT NULL DEFAULT 'running',
                exit_code INTEGER,
                message TEXT,
                started_at TIMESTAMP NOT NULL,
                finished_at TIMESTAMP
            )
        ''')

        # Artifacts table
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS artifacts (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                path TEXT NOT NULL,
                sha256 TEXT NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs (id)
            )
        ''')

        # Metrics table
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                name TEXT NOT NULL,
                value REAL,
                FOREIGN KEY (run_id) REFERENCES runs (id)
            )
        ''')

        conn.commit()
        conn.close()

    def start_run(self, command: str, config_hash: str) -> int:
        """Open a run record"""
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.execute('''
            INSERT INTO runs (command, config_hash, started_at)
            VALUES (?, ?, ?)
        ''', (command, config_hash, datetime.datetime.now().isoformat()))

        run_id = cursor.lastrowid
        conn.commit()
        conn.close()

        return run_id

    def finish_run(self, run_id: int, exit_code: int, message: str = None):
        """Close a run with its exit code"""
        conn = self.get_connection()
        cursor = conn.cursor()

        status = 'completed' if exit_code == 0 else 'failed'
        cursor.execute('''
            UPDATE runs
            SET status = ?, exit_code = ?, message = ?, finished_at = ?
            WHERE id = ?
        ''', (status, exit_code, message, datetime.datetime.now().isoformat(), run_id))

        conn.commit()
        conn.close()

    def add_artifacts(self, run_id: int, files: List[Dict[str, str]]):
        """Record produced files as {'path', 'sha256'} entries"""
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.executemany('''
            INSERT INTO artifacts (run_id, path, sha256)
            VALUES (?, ?, ?)
        ''', [(run_id, f['path'], f['sha256']) for f in files])

        conn.commit()
        conn.close()

    def add_metrics(self, run_id: int, metrics: Dict[str, Any]):
        """Record numeric metrics; non-numeric values are skipped"""
        rows = []
        for name, value in sorted(metrics.items()):
            if isinstance(value, bool):
                value = float(value)
            if isinstance(value, (int, float)):
                rows.append((run_id, name, float(value)))

        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.executemany('INSERT INTO metrics (run_id, name, value) VALUES (?, ?, ?)', rows)
        conn.commit()
        conn.close()

    def get_runs(self, command: str = None, status: str = None) -> List[Dict]:
        """Get runs with optional filters, newest first"""
        conn = self.get_connection()
        cursor = conn.cursor()

        query = 'SELECT id, command, config_hash, status, exit_code, message, started_at, finished_at FROM runs'
        conditions = []
        params = []

        if command:
            conditions.append('command = ?')
            params.append(command)

        if status:
            conditions.append('status = ?')
            params.append(status)

        if conditions:
            query += ' WHERE ' + ' AND '.join(conditions)

        query += ' ORDER BY id DESC'

        cursor.execute(query, params)
        runs = cursor.fetchall()

        conn.close()

        return [
            {
                'id': r[0], 'command': r[1], 'config_hash': r[2], 'status': r[3],
                'exit_code': r[4], 'message': r[5], 'started_at': r[6], 'finished_at': r[7]
            }
            for r in runs
        ]

    def get_metrics(self, run_id: int) -> Dict[str, Optional[float]]:
        """Metrics of one run"""
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.execute('SELECT name, value FROM metrics WHERE run_id = ? ORDER BY name', (run_id,))
        metrics = {name: value for name, value in cursor.fetchall()}

        conn.close()
        return metrics

    def get_artifacts(self, run_id: int) -> List[Dict[str, str]]:
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.execute('SELECT path, sha256 FROM artifacts WHERE run_id = ? ORDER BY path', (run_id,))
        artifacts = [{'path': p, 'sha256': s} for p, s in cursor.fetchall()]

        conn.close()
        return artifacts
