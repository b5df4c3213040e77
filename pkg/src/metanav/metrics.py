"""Navigation metrics: per-episode navigation score and aggregate reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

from metanav.diagnosis import Outcome

NS_MIN_FACTOR = 2.0
NS_MAX_FACTOR = 8.0
REPORT_COLUMNS = ("NS", "ATT", "SR", "CR", "TR")
_RATE_UNITS = 2 ** 20


@dataclass(frozen=True)
class EpisodeRecord:
    map_seed: int
    difficulty: str
    init_pose: tuple[float, float, float]
    outcome: Outcome
    OT: float
    ATT: float | None = None
    steps: int = 0
    total_return: float = 0.0
    trajectory: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        if not self.OT > 0:
            raise ValueError(f"optimal time must be positive, got {self.OT}")
        if (self.outcome is Outcome.SUCCESS) != (self.ATT is not None):
            raise ValueError("ATT is present exactly for successful episodes")

    def to_json(self) -> dict:
        d = asdict(self)
        d["outcome"] = self.outcome.value
        d["init_pose"] = list(self.init_pose)
        d["trajectory"] = [list(p) for p in self.trajectory]
        return d


def navigation_score(record: EpisodeRecord) -> float:
    """OT / clip(ATT, 2 OT, 8 OT) for a success, else 0."""
    ot = record.OT
    if not ot > 0:
        raise ValueError("optimal time must be positive")
    if record.outcome is not Outcome.SUCCESS:
        return 0.0
    assert record.ATT is not None
    att = min(max(record.ATT, NS_MIN_FACTOR * ot), NS_MAX_FACTOR * ot)
    return ot / att


@dataclass(frozen=True)
class MetricsReport:
    NS: float
    ATT: float | None
    SR: float
    CR: float
    TR: float
    episodes: int

    def row(self) -> dict[str, str]:
        def fmt(v: float | None) -> str:
            return "" if v is None else f"{v:.4f}"
        return {"NS": fmt(self.NS), "ATT": fmt(self.ATT), "SR": fmt(self.SR),
                "CR": fmt(self.CR), "TR": fmt(self.TR)}


def aggregate(records: Sequence[EpisodeRecord]) -> MetricsReport:
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    n = len(records)
    ns = 100.0 * math.fsum(navigation_score(r) for r in records) / n
    succ = [r.ATT for r in records if r.outcome is Outcome.SUCCESS]
    att = math.fsum(succ) / len(succ) if succ else None  # type: ignore[arg-type]
    counts = [sum(r.outcome is o for r in records) for o in Outcome]
    sr, cr, tr = outcome_rates(counts)
    return MetricsReport(NS=ns, ATT=att, SR=sr, CR=cr, TR=tr, episodes=n)


def outcome_rates(counts: Sequence[int]) -> list[float]:
    """Percentages on a 2**-20 grid, allocated by largest remainder.

    Every rate is then an exactly representable float and the rates add up to
    exactly 100 under ordinary float addition.
    """
    n = sum(counts)
    total = 100 * _RATE_UNITS
    alloc = [total * c // n for c in counts]
    rema = [total * c % n for c in counts]
    for i in sorted(range(len(counts)), key=lambda i: -rema[i])[:total - sum(alloc)]:
        alloc[i] += 1
    return [a / _RATE_UNITS for a in alloc]


def reports_to_csv(rows: Sequence[tuple[dict[str, str], MetricsReport]]) -> str:
    """CSV text for labelled reports; label keys become leading columns."""
    buf = io.StringIO()
    label_keys: list[str] = []
    for labels, _ in rows:
        for k in labels:
            if k not in label_keys:
                label_keys.append(k)
    writer = csv.DictWriter(buf, fieldnames=[*label_keys, *REPORT_COLUMNS, "episodes"],
                            lineterminator="\n")
    writer.writeheader()
    for labels, rep in rows:
        writer.writerow({**labels, **rep.row(), "episodes": rep.episodes})
    return buf.getvalue()
