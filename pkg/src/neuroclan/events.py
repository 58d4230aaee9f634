"""Tagged event records produced by the backward sketch.

The backward pass draws a pair (neuron, threshold) per step. The bare pair is
not enough to replay the history unambiguously once neurons leave and re-enter
the ancestor set, so every draw is tagged with what it did to the set. Kinds:

* ``STIMULUS``          draw (j, 0) with j in the clan; no set change.
* ``CERTIFIED_SPIKE``   draw (j, k>=1), j in the clan, geometric test passed;
                        j removed.
* ``FAILED_CERTIFICATION`` same draw, test failed; no set change.
* ``PRESYN_ADD``        draw (j, k>=1) with j outside the clan but presynaptic
                        to a member; j added.
* ``NULL_OVERLAP``      residual probability mass when a neuron is presynaptic
                        to several members at once; counts as a step, carries
                        no replay effect and never enters the replayable log.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence


class EventKind(IntEnum):
    STIMULUS = 0
    CERTIFIED_SPIKE = 1
    FAILED_CERTIFICATION = 2
    PRESYN_ADD = 3
    NULL_OVERLAP = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    EventKind.STIMULUS: "Stimulus",
    EventKind.CERTIFIED_SPIKE: "CertifiedSpike",
    EventKind.FAILED_CERTIFICATION: "FailedCertification",
    EventKind.PRESYN_ADD: "PresynAdd",
    EventKind.NULL_OVERLAP: "NullOverlap",
}


@dataclass(frozen=True)
class EventRecord:
    """One backward draw: step counter, neuron, threshold, kind, optional
    exponential holding time (present when timing is enabled)."""

    step: int
    j: int
    k: int
    kind: EventKind
    dt: float | None = None

    def replay_key(self) -> tuple[int, int, int]:
        return (int(self.kind), self.j, self.k)


def logs_identical(a: Sequence[EventRecord], b: Sequence[EventRecord]) -> bool:
    """True when the two logs carry the same replayable content."""
    return len(a) == len(b) and all(
        x.replay_key() == y.replay_key() for x, y in zip(a, b)
    )


def write_event_log_csv(log: Iterable[EventRecord], path) -> None:
    """Dump a replayable log as CSV with columns step,j,k,kind,dt."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "j", "k", "kind", "dt"])
        for rec in log:
            writer.writerow(
                [rec.step, rec.j, rec.k, rec.kind.label,
                 "" if rec.dt is None else repr(rec.dt)]
            )
