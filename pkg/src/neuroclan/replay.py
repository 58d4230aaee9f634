"""Forward replay: reconstruct membrane potentials from a backward log.

The log is processed deepest event first (forward in real time). A neuron's
tracked window opens at its certified spike, where its potential is known to
reset to zero, and closes at the event that brought it into the ancestor set;
inside the window every own event is applied and every firing spike
increments the actively tracked postsynaptic neurons. The target neuron's
window reaches time 0, so its final value is the sampled potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ReplayInvariantViolation
from .events import EventKind, EventRecord
from .model import ModelSpec


@dataclass
class ReplayState:
    """Actively tracked neurons and their reconstructed potentials."""

    active: set[int] = field(default_factory=set)
    p: dict[int, int] = field(default_factory=dict)


def _fire(model: ModelSpec, state: ReplayState, j: int, k: int) -> None:
    state.p[j] = 0
    for m in model.post(j, k):
        if m in state.active and m != j:
            state.p[m] += 1


def _replay_pass(model: ModelSpec, log: Sequence[EventRecord]) -> ReplayState:
    state = ReplayState()
    for rec in reversed(log):
        kind, j, k = rec.kind, rec.j, rec.k
        if kind is EventKind.CERTIFIED_SPIKE:
            state.active.add(j)
            _fire(model, state, j, k)
            continue
        if kind is EventKind.NULL_OVERLAP or j not in state.active:
            raise ReplayInvariantViolation(
                f"event {kind.label}({j},{k}) at step {rec.step} touches an "
                "untracked neuron; the log is not a complete backward history"
            )
        if kind is EventKind.STIMULUS:
            state.p[j] += 1
        else:
            if state.p[j] >= k:
                _fire(model, state, j, k)
            if kind is EventKind.PRESYN_ADD:
                state.active.discard(j)
    return state


def replay(model: ModelSpec, log: Sequence[EventRecord], i: int) -> int:
    """Potential of neuron ``i`` at time 0 given its completed backward log."""
    state = _replay_pass(model, log)
    if i not in state.active:
        raise ReplayInvariantViolation(
            f"target neuron {i} is not tracked at time 0; "
            "was the log produced by a run rooted at it?"
        )
    return state.p[i]


def replay_all(model: ModelSpec, log: Sequence[EventRecord]) -> dict[int, int]:
    """Potentials of every neuron still tracked at time 0 (diagnostics)."""
    state = _replay_pass(model, log)
    return {j: state.p[j] for j in sorted(state.active)}
