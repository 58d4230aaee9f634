"""Backward sketch: explore the clan of ancestors of a target neuron.

Starting from ``{i}`` at time 0 and walking into the past, each step draws a
(neuron, threshold) pair from the aggregate event distribution of the current
ancestor set. Own-clock spike attempts of a member are certified with the
geometric test (success probability ``rho_j**k``) and remove the member on
success; presynaptic spike candidates join the set; stimuli and failed
certifications leave it unchanged. The walk ends when the set empties, and the
tagged draw history is the input of the forward replay.

Finite models run on the compiled kernels; countable models (and the
cross-validation tests) use the pure-python engine below, which consumes
random draws in exactly the same order, so both produce identical logs from
identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import kernels
from .errors import BudgetExceeded, ContainmentViolation, EmptyClan
from .events import EventKind, EventRecord
from .model import ModelSpec, big_lambda, rate_at, rho

DEFAULT_MAX_STEPS = 10**6


@dataclass
class ClanState:
    """Mutable ancestor-set state driven by :func:`backward_step`."""

    c: set[int]
    n: int = 0
    log: list[EventRecord] = field(default_factory=list)
    elapsed: float = 0.0


@dataclass(frozen=True)
class EventDistribution:
    """Per-step outcome weights of the backward draw.

    ``outcomes`` maps ``(j, k)`` to ``lambda_j(k)`` for every neuron eligible
    at threshold ``k`` (clan members at k = 0; members plus their presynaptic
    neighbors at k >= 1), in canonical scan order. ``null_weight`` is the
    residual mass left when a neuron is presynaptic to several members at
    once; the weights plus the residual sum to ``total``, the aggregate event
    rate of the ancestor set.
    """

    outcomes: dict[tuple[int, int], float]
    null_weight: float
    total: float


def event_distribution(model: ModelSpec, c: Iterable[int]) -> EventDistribution:
    members = sorted(set(int(u) for u in c))
    if not members:
        raise EmptyClan()
    total = 0.0
    for u in members:
        total += big_lambda(model, u)
    outcomes: dict[tuple[int, int], float] = {}
    weight_sum = 0.0
    for j in members:
        w = rate_at(model, j, 0)
        if w > 0.0:
            outcomes[(j, 0)] = w
            weight_sum += w
    for k in range(1, model.max_threshold + 1):
        eligible = set(members)
        for u in members:
            eligible.update(model.pre(u, k))
        for j in sorted(eligible):
            w = rate_at(model, j, k)
            if w > 0.0:
                outcomes[(j, k)] = w
                weight_sum += w
    return EventDistribution(
        outcomes=outcomes,
        null_weight=max(0.0, total - weight_sum),
        total=total,
    )


def certify(model: ModelSpec, j: int, k: int, rng: np.random.Generator) -> bool:
    """Geometric certification of a threshold-k spike attempt of neuron j.

    Draws own-clock events of j going deeper into the past; succeeds (with
    probability exactly ``rho_j**k``) iff k consecutive stimuli appear before
    any spike attempt. Consumes one uniform per draw, stopping at the first
    non-stimulus.
    """
    rho_j = rho(model, j)
    for _ in range(k):
        if rng.random() >= rho_j:
            return False
    return True


def backward_step(
    model: ModelSpec,
    state: ClanState,
    rng: np.random.Generator,
    with_dt: bool = False,
) -> EventRecord:
    """Advance the ancestor set by one draw; returns the tagged event.

    Draw order is pinned: outcome selection, certification draws, then the
    optional holding time at rate ``total``. Null-overlap draws count as a
    step but are not appended to the replayable log.
    """
    if not state.c:
        raise EmptyClan()
    dist = event_distribution(model, state.c)
    target = rng.random() * dist.total
    sel = None
    cum = 0.0
    for jk, w in dist.outcomes.items():
        cum += w
        if target < cum:
            sel = jk
            break
    if sel is None:
        kind, j, k = EventKind.NULL_OVERLAP, -1, -1
    else:
        j, k = sel
        if k == 0:
            kind = EventKind.STIMULUS
        elif j in state.c:
            if certify(model, j, k, rng):
                kind = EventKind.CERTIFIED_SPIKE
                state.c.discard(j)
            else:
                kind = EventKind.FAILED_CERTIFICATION
        else:
            kind = EventKind.PRESYN_ADD
            state.c.add(j)
    dt = None
    if with_dt:
        dt = -math.log(1.0 - rng.random()) / dist.total
        state.elapsed += dt
    state.n += 1
    record = EventRecord(step=state.n, j=j, k=k, kind=kind, dt=dt)
    if kind is not EventKind.NULL_OVERLAP:
        state.log.append(record)
    return record


@dataclass(frozen=True)
class BackwardRun:
    """Result of a completed backward pass.

    ``log`` holds the replayable events in step order (most recent first,
    oldest last). ``sizes`` tracks the ancestor-set size after each step;
    ``times`` holds the matching cumulative elapsed times when holding times
    were drawn, else None.
    """

    log: list[EventRecord]
    n_stop: int
    sizes: np.ndarray
    times: np.ndarray | None
    max_clan: int
    null_steps: int


@dataclass(frozen=True)
class CoupledBackwardRun:
    """Joint result of a full run mirrored onto a finite window F."""

    log: list[EventRecord]
    log_f: list[EventRecord]
    n_stop: int
    n_stop_f: int
    hit_outside_f: bool
    sizes: np.ndarray
    times: np.ndarray | None
    max_clan: int
    max_clan_f: int
    null_steps: int


def run_backward(
    model: ModelSpec,
    i: int,
    rng: np.random.Generator,
    max_steps: int = DEFAULT_MAX_STEPS,
    with_dt: bool = False,
) -> BackwardRun:
    """Run the backward sketch from ``{i}`` until the ancestor set empties."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if model.is_finite:
        return _run_backward_kernel(model, i, rng, max_steps, with_dt)
    return _run_backward_generic(model, i, rng, max_steps, with_dt)


def run_backward_coupled(
    model: ModelSpec,
    f: Iterable[int],
    i: int,
    rng: np.random.Generator,
    max_steps: int = DEFAULT_MAX_STEPS,
    with_dt: bool = False,
) -> CoupledBackwardRun:
    """Backward sketch with the finite-window copy mirrored on the same draws.

    A draw applies to the restricted set iff its neuron lies in F and either
    sits in the restricted set (certification outcomes reused verbatim) or,
    for additions, is presynaptic to a restricted member. ``hit_outside_f``
    reports whether any applied draw touched a neuron outside F.
    """
    f_set = frozenset(int(x) for x in f)
    if int(i) not in f_set:
        raise ValueError("the target neuron must belong to F")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if model.is_finite:
        return _run_coupled_kernel(model, f_set, i, rng, max_steps, with_dt)
    return _run_coupled_generic(model, f_set, i, rng, max_steps, with_dt)


# --- kernel-backed paths (finite models) -------------------------------------

def _records_from_arrays(cm, ev_kind, ev_j, ev_k, ev_step, n_log, dts, with_dt):
    out = []
    for idx in range(n_log):
        step = int(ev_step[idx])
        out.append(
            EventRecord(
                step=step,
                j=int(cm.ids[ev_j[idx]]),
                k=int(ev_k[idx]),
                kind=EventKind(int(ev_kind[idx])),
                dt=float(dts[step - 1]) if with_dt else None,
            )
        )
    return out


def _run_backward_kernel(model, i, rng, max_steps, with_dt):
    cm = kernels.compile_finite(model)
    (status, step, n_log, ev_kind, ev_j, ev_k, ev_step, sizes, dts,
     max_clan, n_null) = kernels._backward_run(
        cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
        cm.index[int(i)], rng, max_steps, with_dt
    )
    if status == kernels.STATUS_BUDGET:
        raise BudgetExceeded(max_steps)
    log = _records_from_arrays(cm, ev_kind, ev_j, ev_k, ev_step, n_log, dts, with_dt)
    return BackwardRun(
        log=log,
        n_stop=int(step),
        sizes=sizes[:step].copy(),
        times=np.cumsum(dts[:step]) if with_dt else None,
        max_clan=int(max_clan),
        null_steps=int(n_null),
    )


def _run_coupled_kernel(model, f_set, i, rng, max_steps, with_dt):
    cm = kernels.compile_finite(model)
    f_mask = np.zeros(cm.n, dtype=np.bool_)
    for x in f_set:
        if x in cm.index:
            f_mask[cm.index[x]] = True
    (status, step, n_log, ev_kind, ev_j, ev_k, ev_step,
     nf_log, fv_kind, fv_j, fv_k, fv_step, sizes, dts,
     max_clan, max_clan_f, n_null, hit_outside) = kernels._coupled_run(
        cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
        cm.index[int(i)], f_mask, rng, max_steps, with_dt
    )
    if status == kernels.STATUS_BUDGET:
        raise BudgetExceeded(max_steps)
    if status == kernels.STATUS_CONTAINMENT:
        raise ContainmentViolation()
    return CoupledBackwardRun(
        log=_records_from_arrays(cm, ev_kind, ev_j, ev_k, ev_step, n_log, dts, with_dt),
        log_f=_records_from_arrays(cm, fv_kind, fv_j, fv_k, fv_step, nf_log, dts, with_dt),
        n_stop=int(step),
        n_stop_f=int(nf_log),
        hit_outside_f=bool(hit_outside),
        sizes=sizes[:step].copy(),
        times=np.cumsum(dts[:step]) if with_dt else None,
        max_clan=int(max_clan),
        max_clan_f=int(max_clan_f),
        null_steps=int(n_null),
    )


# --- generic engine (any model) -----------------------------------------------

def _run_backward_generic(model, i, rng, max_steps, with_dt):
    state = ClanState(c={int(i)})
    sizes: list[int] = []
    dts: list[float] = []
    max_clan = 1
    n_null = 0
    while state.c:
        if state.n >= max_steps:
            raise BudgetExceeded(max_steps)
        rec = backward_step(model, state, rng, with_dt)
        if rec.kind is EventKind.NULL_OVERLAP:
            n_null += 1
        max_clan = max(max_clan, len(state.c))
        sizes.append(len(state.c))
        if with_dt:
            dts.append(rec.dt)
    return BackwardRun(
        log=state.log,
        n_stop=state.n,
        sizes=np.asarray(sizes, dtype=np.int64),
        times=np.cumsum(np.asarray(dts)) if with_dt else None,
        max_clan=max_clan,
        null_steps=n_null,
    )


def _run_coupled_generic(model, f_set, i, rng, max_steps, with_dt):
    state = ClanState(c={int(i)})
    cf: set[int] = {int(i)}
    log_f: list[EventRecord] = []
    sizes: list[int] = []
    dts: list[float] = []
    max_clan = 1
    max_clan_f = 1
    n_null = 0
    hit_outside = False
    while state.c:
        if state.n >= max_steps:
            raise BudgetExceeded(max_steps)
        rec = backward_step(model, state, rng, with_dt)
        if rec.kind is EventKind.NULL_OVERLAP:
            n_null += 1
        else:
            if rec.j not in f_set:
                hit_outside = True
            elif cf:
                if rec.kind is EventKind.PRESYN_ADD:
                    applies = any(u in cf for u in model.post(rec.j, rec.k))
                else:
                    applies = rec.j in cf
                if applies:
                    if rec.kind is EventKind.CERTIFIED_SPIKE:
                        cf.discard(rec.j)
                    elif rec.kind is EventKind.PRESYN_ADD:
                        cf.add(rec.j)
                        max_clan_f = max(max_clan_f, len(cf))
                    log_f.append(rec)
        if not cf <= state.c:
            raise ContainmentViolation()
        max_clan = max(max_clan, len(state.c))
        sizes.append(len(state.c))
        if with_dt:
            dts.append(rec.dt)
    return CoupledBackwardRun(
        log=state.log,
        log_f=log_f,
        n_stop=state.n,
        n_stop_f=len(log_f),
        hit_outside_f=hit_outside,
        sizes=np.asarray(sizes, dtype=np.int64),
        times=np.cumsum(np.asarray(dts)) if with_dt else None,
        max_clan=max_clan,
        max_clan_f=max_clan_f,
        null_steps=n_null,
    )
