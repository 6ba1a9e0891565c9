"""Single-file record store for real and synthetic spectra (sqlite, WAL journal)."""
from __future__ import annotations

import csv
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from .spectra import ConditionLabel

DATA_TYPES = ("real", "synthetic")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS spectra (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    data_type TEXT NOT NULL CHECK (data_type IN ('real', 'synthetic')),
    condition TEXT NOT NULL,
    solvent TEXT NOT NULL,
    solute TEXT NOT NULL,
    date TEXT NOT NULL,
    file_name TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS spectra_solvent ON spectra (solvent);
CREATE INDEX IF NOT EXISTS spectra_date ON spectra (date);
"""


class ReferentialIntegrityError(ValueError):
    """The record points at a spectrum file that does not exist."""


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumRecord:
    data_type: str
    condition: str
    solvent: str
    solute: str
    date: str
    file_name: str
    id: int | None = None

    @classmethod
    def for_label(cls, label: ConditionLabel, data_type: str, file_name: str,
                  date: str | None = None) -> "SpectrumRecord":
        return cls(data_type, label.interference, label.solvent, ",".join(label.solutes),
                   date or now_iso(), str(file_name))

    @property
    def solutes(self) -> tuple[str, ...]:
        return tuple(self.solute.split(",")) if self.solute else ()


_COLUMNS = ("id", "data_type", "condition", "solvent", "solute", "date", "file_name")


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(tzinfo=None).isoformat(timespec="seconds")


def _canonical_date(value, what="date") -> str:
    if isinstance(value, datetime):
        return value.isoformat(timespec="seconds")
    try:
        parsed = datetime.fromisoformat(str(value))
    except ValueError as exc:
        raise QueryError(f"malformed {what} {value!r}") from exc
    text = parsed.isoformat(timespec="seconds")
    if text != str(value):
        raise QueryError(f"{what} must be ISO-8601 with seconds (YYYY-MM-DDTHH:MM:SS), got {value!r}")
    return text


def _row(r) -> SpectrumRecord:
    return SpectrumRecord(r[1], r[2], r[3], r[4], r[5], r[6], r[0])


class SpectrumStore:
    """Record table in one database file.

    ``file_name`` values are resolved against ``root`` (default: the
    directory holding the database). One writer at a time; readers may share
    the file concurrently.
    """

    def __init__(self, path, root=None):
        self.path = Path(path)
        self.root = Path(root) if root is not None else self.path.resolve().parent
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._db = sqlite3.connect(self.path)
        self._db.execute("PRAGMA journal_mode=WAL")
        # WAL + NORMAL keeps committed rows across process crashes without an fsync per insert
        self._db.execute("PRAGMA synchronous=NORMAL")
        self._db.executescript(_SCHEMA)

    def close(self):
        self._db.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def insert_record(self, rec: SpectrumRecord) -> int:
        if rec.data_type not in DATA_TYPES:
            raise ValueError(f"data_type must be one of {DATA_TYPES}, got {rec.data_type!r}")
        date = _canonical_date(rec.date)
        target = self.root / rec.file_name
        if not target.is_file():
            raise ReferentialIntegrityError(f"spectrum file {target} does not exist")
        with self._db:
            cur = self._db.execute(
                "INSERT INTO spectra (data_type, condition, solvent, solute, date, file_name)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (rec.data_type, rec.condition, rec.solvent, rec.solute, date, rec.file_name))
        return int(cur.lastrowid)

    def insert_many(self, recs) -> list[int]:
        return [self.insert_record(r) for r in recs]

    def get(self, record_id: int) -> SpectrumRecord | None:
        r = self._db.execute("SELECT * FROM spectra WHERE id = ?", (record_id,)).fetchone()
        return _row(r) if r else None

    def query_records(self, data_type=None, condition=None, solvent=None, solute=None,
                      date_from=None, date_to=None) -> list[SpectrumRecord]:
        """Rows matching every given predicate, in id order.

        ``solute`` matches records whose solute list contains that name; the
        date range is inclusive on both ends.
        """
        where, args = [], []
        for col, val in (("data_type", data_type), ("condition", condition), ("solvent", solvent)):
            if val is not None:
                where.append(f"{col} = ?")
                args.append(val)
        if solute is not None:
            where.append("(',' || solute || ',') LIKE ?")
            args.append(f"%,{solute},%")
        lo = _canonical_date(date_from, "date_from") if date_from is not None else None
        hi = _canonical_date(date_to, "date_to") if date_to is not None else None
        if lo is not None and hi is not None and lo > hi:
            raise QueryError(f"empty date range {lo} > {hi}")
        if lo is not None:
            where.append("date >= ?")
            args.append(lo)
        if hi is not None:
            where.append("date <= ?")
            args.append(hi)
        sql = "SELECT * FROM spectra"
        if where:
            sql += " WHERE " + " AND ".join(where)
        return [_row(r) for r in self._db.execute(sql + " ORDER BY id", args)]

    def __iter__(self) -> Iterator[SpectrumRecord]:
        return iter(self.query_records())

    def __len__(self) -> int:
        return self._db.execute("SELECT COUNT(*) FROM spectra").fetchone()[0]

    def resolve(self, rec: SpectrumRecord) -> Path:
        return self.root / rec.file_name

    def export_csv(self, path) -> int:
        rows = self.query_records()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_COLUMNS)
            for r in rows:
                w.writerow([r.id, r.data_type, r.condition, r.solvent, r.solute, r.date, r.file_name])
        return len(rows)
