"""Per-round regret records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..mnl import Action

CSV_COLUMNS = ("t", "phase", "bin", "assortment", "prices", "chosen", "inst_regret", "cum_regret",
               "opt_in_candidates")


@dataclass(frozen=True)
class TraceRow:
    t: int
    phase: str
    bin: int | None
    action: Action
    chosen: int
    inst_regret: float
    cum_regret: float
    opt_in_candidates: bool | None = None

    def csv_fields(self) -> list[str]:
        return [
            str(self.t),
            self.phase,
            "NA" if self.bin is None else str(self.bin),
            ";".join(str(i) for i in self.action.assortment),
            ";".join(repr(float(p)) for p in self.action.prices),
            str(self.chosen),
            repr(float(self.inst_regret)),
            repr(float(self.cum_regret)),
            "NA" if self.opt_in_candidates is None else str(int(self.opt_in_candidates)),
        ]


@dataclass
class RegretTrace:
    rows: list[TraceRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    state: object = None

    def append(self, t: int, phase: str, bin_: int | None, action: Action, chosen: int,
               inst_regret: float, opt_in_candidates: bool | None = None) -> TraceRow:
        cum = (self.rows[-1].cum_regret if self.rows else 0.0) + inst_regret
        row = TraceRow(t, phase, bin_, action, chosen, float(inst_regret), float(cum), opt_in_candidates)
        self.rows.append(row)
        return row

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def cumulative(self) -> np.ndarray:
        return np.array([r.cum_regret for r in self.rows])

    @property
    def total_regret(self) -> float:
        return self.rows[-1].cum_regret if self.rows else 0.0

    def regret_at(self, t: int) -> float:
        """Cumulative regret after round ``t`` (1-based)."""
        if t < 1:
            return 0.0
        return self.rows[min(t, len(self.rows)) - 1].cum_regret

    def phase_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.rows:
            counts[r.phase] = counts.get(r.phase, 0) + 1
        return counts

    def summary(self) -> dict:
        return {"total_regret": self.total_regret, "rounds": len(self.rows), "phases": self.phase_counts()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(r.csv_fields())
        return buf.getvalue()


def read_trace_csv(text: str) -> list[dict]:
    """Parse a trace CSV into typed row dictionaries."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected trace columns {reader.fieldnames}")
    out = []
    for rec in reader:
        out.append({
            "t": int(rec["t"]),
            "phase": rec["phase"],
            "bin": None if rec["bin"] == "NA" else int(rec["bin"]),
            "assortment": [int(i) for i in rec["assortment"].split(";") if i],
            "prices": [float(p) for p in rec["prices"].split(";") if p],
            "chosen": int(rec["chosen"]),
            "inst_regret": float(rec["inst_regret"]),
            "cum_regret": float(rec["cum_regret"]),
            "opt_in_candidates": None if rec["opt_in_candidates"] == "NA" else rec["opt_in_candidates"] == "1",
        })
    return out
