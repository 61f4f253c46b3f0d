"""Exploration/exploitation timeline and per-epoch learning rates.

Inside an exploitation phase the linear schedules place their knots on whole
epochs: ``linear-1`` runs from ``lr_mid`` at ``e = 0`` to ``lr_low`` at
``e = t_ex - 1``; ``linear-fge`` reaches ``lr_mid`` at ``e = t_ex / 2`` and
``lr_low`` at ``e = t_ex - 1``.  Every phase therefore ends exactly on
``lr_low``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass

SCHEDULES = ("stepwise", "cosine", "linear-fge", "linear-1")


class PhaseEvent(str, enum.Enum):
    NONE = "none"
    PERTURB_AND_SNAPSHOT = "perturb-and-snapshot"
    SNAPSHOT_FINAL = "snapshot-final"


@dataclass(frozen=True)
class PhasePlan:
    t0: int = 150
    t_ex: int = 100
    M: int = 3
    lr_high: float = 0.1
    lr_mid: float = 0.01
    lr_low: float = 0.001
    schedule: str = "stepwise"

    def __post_init__(self):
        if self.t0 < 0 or self.t_ex < 2 or self.M < 1:
            raise ValueError("need t0 >= 0, t_ex >= 2 and M >= 1")
        if self.t_ex % 2:
            raise ValueError("t_ex must be even")
        if not (self.lr_high >= self.lr_mid >= self.lr_low > 0):
            raise ValueError("learning rates must satisfy lr_high >= lr_mid >= lr_low > 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")

    @property
    def total_epochs(self) -> int:
        return self.t0 + self.M * self.t_ex

    def phase_of(self, epoch: int) -> tuple[int, int]:
        """(phase, epoch within phase); phase 0 is exploration, 1..M exploitation."""
        self._check(epoch)
        if epoch < self.t0:
            return 0, epoch
        k, e = divmod(epoch - self.t0, self.t_ex)
        return k + 1, e

    def _check(self, epoch: int) -> None:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")

    def to_dict(self) -> dict:
        return asdict(self)


def _lerp(a: float, b: float, s: float) -> float:
    # exact at both ends, unlike a + (b - a) * s
    return (1.0 - s) * a + s * b




def lr_at(plan: PhasePlan, epoch: int) -> float:
    phase, e = plan.phase_of(epoch)
    if phase == 0:
        return plan.lr_high
    if plan.schedule == "stepwise":
        return plan.lr_mid if e < plan.t_ex // 2 else plan.lr_low
    if plan.schedule == "cosine":
        return plan.lr_low + 0.5 * (plan.lr_mid - plan.lr_low) * (1.0 + math.cos(math.pi * e / plan.t_ex))
    if plan.schedule == "linear-1":
        return _lerp(plan.lr_mid, plan.lr_low, e / (plan.t_ex - 1))
    half = plan.t_ex // 2
    if e <= half:
        start = plan.lr_high if phase == 1 else plan.lr_low
        return _lerp(start, plan.lr_mid, e / half)
    return _lerp(plan.lr_mid, plan.lr_low, (e - half) / (plan.t_ex - 1 - half))


def event_at(plan: PhasePlan, epoch: int) -> PhaseEvent:
    """Event fired at the end of ``epoch`` (after its last update)."""
    phase, e = plan.phase_of(epoch)
    if phase == 0 or e != plan.t_ex - 1:
        return PhaseEvent.NONE
    return PhaseEvent.SNAPSHOT_FINAL if phase == plan.M else PhaseEvent.PERTURB_AND_SNAPSHOT


def schedule_rows(plan: PhasePlan) -> list[dict]:
    rows = []
    for epoch in range(plan.total_epochs):
        row = {"epoch": epoch}
        for name in SCHEDULES:
            row[name] = lr_at(PhasePlan(**{**plan.to_dict(), "schedule": name}), epoch)
        row["event"] = event_at(plan, epoch).value
        rows.append(row)
    return rows


def schedule_csv(plan: PhasePlan) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", *SCHEDULES, "event"])
    for row in schedule_rows(plan):
        writer.writerow([row["epoch"], *(repr(row[s]) for s in SCHEDULES), row["event"]])
    return buf.getvalue()
