import json
import sqlite3
import threading
import uuid
from datetime import datetime, timezone

UTC = timezone.utc


class RunStore:
    """sqlite registry of CLI invocations.

    Lives beside the outputs, never inside a command's run directory, so the
    timestamps it keeps do not leak into compared artifacts.
    """

    def __init__(self, db_path):
        self.db_path = db_path
        self._lock = threading.Lock()
        self._init_db()

    def _connect(self):
        return sqlite3.connect(self.db_path, check_same_thread=False)

    def _init_db(self):
        with self._connect() as conn:
            conn.execute(
                """
                create table if not exists runs (
                    id text primary key,
                    command text,
                    status text,
                    created_at text,
                    updated_at text,
                    manifest_path text,
                    config_digest text,
                    error text,
                    options text
                )
                """
            )
            version = conn.execute("pragma user_version;").fetchone()[0]
            if version < 1:
                try:
                    conn.execute("alter table runs add column exit_code integer;")
                except sqlite3.OperationalError:
                    pass
                conn.execute("pragma user_version = 1;")

    @staticmethod
    def _now():
        return datetime.now(UTC).replace(tzinfo=None).isoformat()

    def create_run(self, command, options):
        run_id = str(uuid.uuid4())
        now = self._now()
        with self._lock, self._connect() as conn:
            conn.execute(
                """
                insert into runs (id, command, status, created_at, updated_at, options)
                values (?, ?, ?, ?, ?, ?)
                """,
                (run_id, command, "running", now, now, json.dumps(options, sort_keys=True, default=str)),
            )
        return run_id

    def update_run(self, run_id, **fields):
        fields["updated_at"] = self._now()
        keys = ", ".join(f"{key}=?" for key in fields.keys())
        values = list(fields.values()) + [run_id]
        with self._lock, self._connect() as conn:
            conn.execute(f"update runs set {keys} where id=?", values)

    def get_run(self, run_id):
        with self._lock, self._connect() as conn:
            row = conn.execute(
                "select id, command, status, created_at, updated_at, manifest_path, config_digest, "
                "error, options, exit_code from runs where id=?",
                (run_id,),
            ).fetchone()
        if not row:
            return None
        return {
            "id": row[0],
            "command": row[1],
            "status": row[2],
            "created_at": row[3],
            "updated_at": row[4],
            "manifest_path": row[5],
            "config_digest": row[6],
            "error": row[7],
            "options": json.loads(row[8]) if row[8] else {},
            "exit_code": row[9],
        }

    def list_recent_runs(self, limit=50, command=None):
        with self._lock, self._connect() as conn:
            if command:
                rows = conn.execute(
                    "select id, command, status, created_at, exit_code from runs "
                    "where command = ? order by created_at desc limit ?",
                    (command, limit),
                ).fetchall()
            else:
                rows = conn.execute(
                    "select id, command, status, created_at, exit_code from runs "
                    "order by created_at desc limit ?",
                    (limit,),
                ).fetchall()
        return [
            {"id": r[0], "command": r[1], "status": r[2], "created_at": r[3], "exit_code": r[4]}
            for r in rows
        ]
