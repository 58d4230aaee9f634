"""Perfect sampling orchestration: streams, single samples, batches.

Randomness is counter-based: every sample owns the Philox stream keyed by
``(seed, sample_index)``, so results are a pure function of model, parameters
and seed, independent of execution order or worker count. Batches aggregate
histograms only; per-sample results are never retained.
"""

from __future__ import annotations

import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import kernels
from .backward import DEFAULT_MAX_STEPS, run_backward, run_backward_coupled
from .errors import (
    BudgetExceeded,
    ConditionViolated,
    ContainmentViolation,
    ReplayInvariantViolation,
)
from .events import logs_identical
from .model import DecayingFeedforward, ModelSpec, check_conditions
from .replay import replay

DEFAULT_TIME_GRID = (0.5, 1.0, 2.0, 4.0)
_CHUNK = 1024


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream for one sample.

    Streams with distinct ``(seed, sample_index)`` keys are statistically
    independent; the draw sequence within a sample is fully determined by the
    engine's fixed draw order.
    """

    seed: int
    sample_index: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.sample_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def stream_counter(gen: np.random.Generator) -> int:
    """Philox block counter consumed so far (diagnostic)."""
    return int(gen.bit_generator.state["state"]["counter"][0])


@dataclass(frozen=True)
class SampleResult:
    """One stationary sample of a neuron's membrane potential."""

    potential: int
    n_stop: int
    max_clan: int
    steps_null: int
    seed_path: tuple[int, int]


@dataclass(frozen=True)
class CoupledSampleResult:
    """Joint sample of the full-system and finite-window potentials."""

    full: SampleResult
    restricted: SampleResult
    agree: bool
    hit_outside_f: bool


_CONDITIONS_OK: "weakref.WeakSet" = weakref.WeakSet()


def ensure_conditions(model: ModelSpec) -> None:
    """Verify stationarity conditions once per model instance."""
    if model in _CONDITIONS_OK:
        return
    if model.is_finite:
        report = check_conditions(model)
        if not report.passed:
            raise ConditionViolated(
                "stationarity conditions fail on this model; "
                "pass force=True to sample anyway"
            )
    elif not isinstance(model, DecayingFeedforward):
        raise ConditionViolated(
            "cannot auto-verify a custom countable model; pass force=True"
        )
    _CONDITIONS_OK.add(model)


def _grid_array(with_dt: bool, time_grid) -> np.ndarray:
    if not with_dt:
        return np.empty(0, dtype=np.float64)
    return np.asarray(sorted(float(t) for t in time_grid), dtype=np.float64)


def _sizes_at_times(sizes, times, grid) -> np.ndarray:
    out = np.zeros(grid.shape[0], dtype=np.int64)
    gi = 0
    t = 0.0
    size = 1
    for st in range(sizes.shape[0]):
        t_next = float(times[st])
        while gi < grid.shape[0] and grid[gi] < t_next:
            out[gi] = size
            gi += 1
        size = int(sizes[st])
        t = t_next
    return out


def perfect_sample(
    model: ModelSpec,
    i: int,
    stream: RngStream,
    max_steps: int = DEFAULT_MAX_STEPS,
    with_dt: bool = False,
    force: bool = False,
) -> SampleResult:
    """Draw one exact stationary sample of neuron ``i``'s potential."""
    if not force:
        ensure_conditions(model)
    gen = stream.generator()
    path = (stream.seed, stream.sample_index)
    if model.is_finite:
        cm = kernels.compile_finite(model)
        grid = np.empty(0, dtype=np.float64)
        status, pot, n_steps, max_clan, n_null, _ = kernels._sample_one(
            cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
            cm.index[int(i)], gen, max_steps, with_dt, grid
        )
        _raise_for_status(status, max_steps)
        return SampleResult(int(pot), int(n_steps), int(max_clan), int(n_null), path)
    run = run_backward(model, i, gen, max_steps, with_dt)
    pot = replay(model, run.log, int(i))
    return SampleResult(pot, run.n_stop, run.max_clan, run.null_steps, path)


def coupled_sample(
    model: ModelSpec,
    f: Iterable[int],
    i: int,
    stream: RngStream,
    max_steps: int = DEFAULT_MAX_STEPS,
    with_dt: bool = False,
    force: bool = False,
) -> CoupledSampleResult:
    """Draw the coupled pair (full-system sample, finite-window sample).

    Both runs share every random draw; when the backward pass never leaves F
    the logs coincide and the pair agrees by construction. ``agree`` compares
    the sampled values themselves, so it may also hold by coincidence.
    """
    if not force:
        ensure_conditions(model)
    f_set = frozenset(int(x) for x in f)
    if int(i) not in f_set:
        raise ValueError("the target neuron must belong to F")
    gen = stream.generator()
    path = (stream.seed, stream.sample_index)
    if model.is_finite:
        cm = kernels.compile_finite(model)
        f_mask = np.zeros(cm.n, dtype=np.bool_)
        for x in f_set:
            if x in cm.index:
                f_mask[cm.index[x]] = True
        (status, pot, pot_f, n_steps, nf_log, max_clan, max_clan_f, n_null,
         hit_outside, _identical) = kernels._coupled_sample(
            cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
            cm.index[int(i)], f_mask, gen, max_steps, with_dt
        )
        _raise_for_status(status, max_steps)
        full = SampleResult(int(pot), int(n_steps), int(max_clan), int(n_null), path)
        restricted = SampleResult(int(pot_f), int(nf_log), int(max_clan_f), 0, path)
        return CoupledSampleResult(
            full=full,
            restricted=restricted,
            agree=full.potential == restricted.potential,
            hit_outside_f=bool(hit_outside),
        )
    run = run_backward_coupled(model, f_set, i, gen, max_steps, with_dt)
    pot = replay(model, run.log, int(i))
    if logs_identical(run.log, run.log_f):
        pot_f = pot
    else:
        pot_f = replay(model, run.log_f, int(i))
    full = SampleResult(pot, run.n_stop, run.max_clan, run.null_steps, path)
    restricted = SampleResult(pot_f, run.n_stop_f, run.max_clan_f, 0, path)
    return CoupledSampleResult(
        full=full,
        restricted=restricted,
        agree=pot == pot_f,
        hit_outside_f=run.hit_outside_f,
    )


def _raise_for_status(status: int, max_steps: int, sample_index=None) -> None:
    if status == kernels.STATUS_OK:
        return
    if status == kernels.STATUS_BUDGET:
        raise BudgetExceeded(max_steps, sample_index)
    if status == kernels.STATUS_CONTAINMENT:
        raise ContainmentViolation(sample_index)
    raise ReplayInvariantViolation(
        f"kernel replay rejected its own log (sample_index={sample_index})"
    )


@dataclass
class BatchStatistics:
    """Deterministic aggregate of a batch of independent samples.

    Histograms are dense arrays indexed by value. ``clan_size_sum`` and
    ``clan_size_sumsq`` accumulate the ancestor-set size at the fixed backward
    times in ``time_grid`` (holding-time mode only). For coupled batches the
    potential histogram refers to the full-system sample.
    """

    neuron: int
    seed: int
    n_samples: int = 0
    coupled: bool = False
    with_dt: bool = False
    time_grid: tuple[float, ...] = ()
    potential_counts: np.ndarray = field(
        default_factory=lambda: np.zeros(8, dtype=np.int64))
    restricted_potential_counts: np.ndarray = field(
        default_factory=lambda: np.zeros(8, dtype=np.int64))
    nstop_counts: np.ndarray = field(
        default_factory=lambda: np.zeros(8, dtype=np.int64))
    max_clan_counts: np.ndarray = field(
        default_factory=lambda: np.zeros(8, dtype=np.int64))
    null_steps_total: int = 0
    disagree_count: int = 0
    hit_outside_count: int = 0
    implication_violations: int = 0
    clan_size_sum: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.float64))
    clan_size_sumsq: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.float64))

    # -- accumulation ---------------------------------------------------------

    @staticmethod
    def _bump(arr: np.ndarray, value: int) -> np.ndarray:
        if value >= arr.shape[0]:
            wider = np.zeros(max(arr.shape[0] * 2, value + 1), dtype=np.int64)
            wider[: arr.shape[0]] = arr
            arr = wider
        arr[value] += 1
        return arr

    def add(self, potential, n_stop, max_clan, n_null, grid_sizes=None,
            restricted_potential=None, agree=None, hit_outside=None) -> None:
        self.n_samples += 1
        self.potential_counts = self._bump(self.potential_counts, potential)
        self.nstop_counts = self._bump(self.nstop_counts, n_stop)
        self.max_clan_counts = self._bump(self.max_clan_counts, max_clan)
        self.null_steps_total += n_null
        if grid_sizes is not None and grid_sizes.shape[0]:
            self.clan_size_sum += grid_sizes
            self.clan_size_sumsq += grid_sizes.astype(np.float64) ** 2
        if restricted_potential is not None:
            self.restricted_potential_counts = self._bump(
                self.restricted_potential_counts, restricted_potential)
            if not agree:
                self.disagree_count += 1
                if not hit_outside:
                    self.implication_violations += 1
            if hit_outside:
                self.hit_outside_count += 1

    def merge(self, other: "BatchStatistics") -> None:
        def _madd(a, b):
            width = max(a.shape[0], b.shape[0])
            out = np.zeros(width, dtype=np.int64)
            out[: a.shape[0]] += a
            out[: b.shape[0]] += b
            return out

        self.n_samples += other.n_samples
        self.potential_counts = _madd(self.potential_counts, other.potential_counts)
        self.restricted_potential_counts = _madd(
            self.restricted_potential_counts, other.restricted_potential_counts)
        self.nstop_counts = _madd(self.nstop_counts, other.nstop_counts)
        self.max_clan_counts = _madd(self.max_clan_counts, other.max_clan_counts)
        self.null_steps_total += other.null_steps_total
        self.disagree_count += other.disagree_count
        self.hit_outside_count += other.hit_outside_count
        self.implication_violations += other.implication_violations
        self.clan_size_sum = self.clan_size_sum + other.clan_size_sum
        self.clan_size_sumsq = self.clan_size_sumsq + other.clan_size_sumsq

    # -- summaries --------------------------------------------------------------

    def potential_probs(self, restricted: bool = False) -> np.ndarray:
        counts = (self.restricted_potential_counts if restricted
                  else self.potential_counts)
        trimmed = np.trim_zeros(counts, "b")
        if trimmed.shape[0] == 0:
            trimmed = counts[:1]
        return trimmed / self.n_samples

    def tail_prob(self, n: int) -> float:
        """Empirical P(n_stop > n)."""
        return float(self.nstop_counts[n + 1:].sum()) / self.n_samples

    @property
    def mean_nstop(self) -> float:
        values = np.arange(self.nstop_counts.shape[0])
        return float((values * self.nstop_counts).sum()) / self.n_samples

    @property
    def stderr_nstop(self) -> float:
        values = np.arange(self.nstop_counts.shape[0])
        mean = self.mean_nstop
        var = float(((values - mean) ** 2 * self.nstop_counts).sum()) / self.n_samples
        return (var / self.n_samples) ** 0.5

    @property
    def disagree_rate(self) -> float:
        return self.disagree_count / self.n_samples

    def clan_size_mean(self, gi: int) -> float:
        return float(self.clan_size_sum[gi]) / self.n_samples

    def clan_size_stderr(self, gi: int) -> float:
        mean = self.clan_size_mean(gi)
        var = float(self.clan_size_sumsq[gi]) / self.n_samples - mean**2
        return (max(var, 0.0) / self.n_samples) ** 0.5

    def to_dict(self) -> dict:
        """Canonical plain-python form (deterministic, JSON-ready)."""
        return {
            "neuron": self.neuron,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "coupled": self.coupled,
            "with_dt": self.with_dt,
            "time_grid": list(self.time_grid),
            "potential_counts": np.trim_zeros(self.potential_counts, "b").tolist(),
            "restricted_potential_counts": np.trim_zeros(
                self.restricted_potential_counts, "b").tolist(),
            "nstop_counts": np.trim_zeros(self.nstop_counts, "b").tolist(),
            "max_clan_counts": np.trim_zeros(self.max_clan_counts, "b").tolist(),
            "null_steps_total": self.null_steps_total,
            "disagree_count": self.disagree_count,
            "hit_outside_count": self.hit_outside_count,
            "implication_violations": self.implication_violations,
            "clan_size_sum": self.clan_size_sum.tolist(),
            "clan_size_sumsq": self.clan_size_sumsq.tolist(),
        }


def run_batch(
    model: ModelSpec,
    i: int,
    n_samples: int,
    seed: int,
    f: Iterable[int] | None = None,
    with_dt: bool = False,
    time_grid: Iterable[float] = DEFAULT_TIME_GRID,
    max_steps: int = DEFAULT_MAX_STEPS,
    workers: int = 1,
    force: bool = False,
) -> BatchStatistics:
    """Run ``n_samples`` independent samples on streams (seed, 0..n-1).

    Samples are processed in fixed-size chunks whose partial statistics are
    merged in chunk order, so the result is identical for any worker count.
    Per-sample failures propagate with the failing ``sample_index`` attached.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not force:
        ensure_conditions(model)
    f_set = frozenset(int(x) for x in f) if f is not None else None
    if f_set is not None and int(i) not in f_set:
        raise ValueError("the target neuron must belong to F")
    grid = _grid_array(with_dt, time_grid)

    chunks = [
        (lo, min(lo + _CHUNK, n_samples)) for lo in range(0, n_samples, _CHUNK)
    ]
    runner = _ChunkRunner(model, int(i), seed, f_set, with_dt, grid, max_steps)
    if workers <= 1:
        partials = [runner.run(lo, hi) for lo, hi in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(lambda c: runner.run(*c), chunks))
    total = _fresh_stats(int(i), seed, f_set is not None, with_dt, grid)
    for part in partials:
        total.merge(part)
    return total


def _fresh_stats(neuron, seed, coupled, with_dt, grid) -> BatchStatistics:
    stats = BatchStatistics(
        neuron=neuron,
        seed=seed,
        coupled=coupled,
        with_dt=with_dt,
        time_grid=tuple(float(t) for t in grid),
    )
    stats.clan_size_sum = np.zeros(grid.shape[0], dtype=np.float64)
    stats.clan_size_sumsq = np.zeros(grid.shape[0], dtype=np.float64)
    return stats


class _ChunkRunner:
    """Stateless per-chunk executor shared by all workers."""

    def __init__(self, model, neuron, seed, f_set, with_dt, grid, max_steps):
        self.model = model
        self.neuron = neuron
        self.seed = seed
        self.f_set = f_set
        self.with_dt = with_dt
        self.grid = grid
        self.max_steps = max_steps
        if model.is_finite:
            self.cm = kernels.compile_finite(model)
            self.root = self.cm.index[neuron]
            if f_set is not None:
                self.f_mask = np.zeros(self.cm.n, dtype=np.bool_)
                for x in f_set:
                    if x in self.cm.index:
                        self.f_mask[self.cm.index[x]] = True
        else:
            self.cm = None

    def run(self, lo: int, hi: int) -> BatchStatistics:
        stats = _fresh_stats(self.neuron, self.seed, self.f_set is not None,
                             self.with_dt, self.grid)
        for idx in range(lo, hi):
            gen = RngStream(self.seed, idx).generator()
            try:
                if self.f_set is None:
                    self._one_plain(gen, stats)
                else:
                    self._one_coupled(gen, stats)
            except BudgetExceeded as err:
                raise BudgetExceeded(self.max_steps, idx) from err
            except ContainmentViolation as err:
                raise ContainmentViolation(idx) from err
        return stats

    def _one_plain(self, gen, stats) -> None:
        if self.cm is not None:
            cm = self.cm
            status, pot, n_steps, max_clan, n_null, gsizes = kernels._sample_one(
                cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
                self.root, gen, self.max_steps, self.with_dt, self.grid
            )
            _raise_for_status(status, self.max_steps)
            stats.add(int(pot), int(n_steps), int(max_clan), int(n_null), gsizes)
            return
        run = run_backward(self.model, self.neuron, gen, self.max_steps, self.with_dt)
        pot = replay(self.model, run.log, self.neuron)
        gsizes = None
        if self.with_dt and self.grid.shape[0]:
            gsizes = _sizes_at_times(run.sizes, run.times, self.grid)
        stats.add(pot, run.n_stop, run.max_clan, run.null_steps, gsizes)

    def _one_coupled(self, gen, stats) -> None:
        if self.cm is not None:
            cm = self.cm
            (status, pot, pot_f, n_steps, nf_log, max_clan, max_clan_f, n_null,
             hit_outside, _identical) = kernels._coupled_sample(
                cm.rates, cm.lam, cm.rho, cm.post_ptr, cm.post_idx, cm.kmax,
                self.root, self.f_mask, gen, self.max_steps, self.with_dt
            )
            _raise_for_status(status, self.max_steps)
            stats.add(int(pot), int(n_steps), int(max_clan), int(n_null), None,
                      restricted_potential=int(pot_f),
                      agree=int(pot) == int(pot_f),
                      hit_outside=bool(hit_outside))
            return
        run = run_backward_coupled(self.model, self.f_set, self.neuron, gen,
                                   self.max_steps, self.with_dt)
        pot = replay(self.model, run.log, self.neuron)
        if logs_identical(run.log, run.log_f):
            pot_f = pot
        else:
            pot_f = replay(self.model, run.log_f, self.neuron)
        stats.add(pot, run.n_stop, run.max_clan, run.null_steps, None,
                  restricted_potential=pot_f, agree=pot == pot_f,
                  hit_outside=run.hit_outside_f)
