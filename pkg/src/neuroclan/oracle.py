"""Independent forward simulator of the finite-window process.

Simulates the continuous-time jump chain of a finite neuron set directly from
its generator: events (i, k) fire at rate ``lambda_i(k)``; a threshold-k event
resets neuron i and increments its in-window postsynaptic neurons when the
potential suffices, and is a null jump otherwise (so the total rate never
depends on the configuration). Long-run time-weighted occupation of a
neuron's potential estimates the stationary marginal, which serves as the
ground-truth reference for the perfect sampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import math

import numpy as np

from . import kernels
from .errors import NeuronOutOfScope, NotNormalized
from .model import FiniteModel, ModelSpec


@dataclass(frozen=True)
class FiniteConfiguration:
    """Membrane potentials of a finite neuron set."""

    potentials: dict[int, int]

    def value(self, i: int) -> int:
        try:
            return self.potentials[i]
        except KeyError:
            raise NeuronOutOfScope(i) from None


def zero_configuration(f: Iterable[int]) -> FiniteConfiguration:
    return FiniteConfiguration({int(i): 0 for i in sorted(set(f))})


def restrict_finite(model: ModelSpec, f: Iterable[int]) -> FiniteModel:
    """Materialize the finite-window model: same rates, synapses cut at F."""
    ids = sorted(set(int(i) for i in f))
    rates = {i: model.rate_vector(i) for i in ids}
    post = {}
    for i in ids:
        for k in range(1, model.max_threshold + 1):
            cut = model.post(i, k) & frozenset(ids)
            if cut:
                post[(i, k)] = cut
    return FiniteModel(rates, post)


def apply_spike(
    model: ModelSpec, config: FiniteConfiguration, i: int, k: int
) -> FiniteConfiguration:
    """Apply the (i, k) transformation restricted to the configuration's set.

    k = 0 increments neuron i. k >= 1 fires only when the potential of i is at
    least k: i resets to 0 and every in-window postsynaptic neuron gains one
    unit; otherwise the configuration is returned unchanged.
    """
    pots = config.potentials
    if i not in pots:
        raise NeuronOutOfScope(i)
    if k == 0:
        out = dict(pots)
        out[i] = pots[i] + 1
        return FiniteConfiguration(out)
    if pots[i] < k:
        return config
    out = dict(pots)
    out[i] = 0
    for m in model.post(i, k):
        if m in out and m != i:
            out[m] += 1
    return FiniteConfiguration(out)


def jump_step(
    model: ModelSpec, config: FiniteConfiguration, rng: np.random.Generator
) -> tuple[FiniteConfiguration, float]:
    """One jump of the embedded chain: holding time, then event (i, k)."""
    ids = sorted(config.potentials)
    total = 0.0
    for i in ids:
        rv = model.rate_vector(i)
        for k in range(rv.shape[0]):
            total += float(rv[k])
    dt = -math.log(1.0 - rng.random()) / total
    target = rng.random() * total
    cum = 0.0
    for i in ids:
        rv = model.rate_vector(i)
        for k in range(rv.shape[0]):
            cum += float(rv[k])
            if target < cum:
                return apply_spike(model, config, i, k), dt
    # unreachable for positive total; guard against pathological rounding
    return config, dt


def estimate_marginal(
    model: ModelSpec,
    f: Iterable[int],
    i: int,
    burn_in_jumps: int,
    n_jumps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Stationary marginal of neuron ``i`` in the window F, by occupation.

    Runs the jump chain from the all-zero configuration, discards
    ``burn_in_jumps`` jumps, then accumulates the holding-time-weighted
    occupation of ``i``'s potential over ``n_jumps`` jumps. Returns a
    normalized histogram (index = potential value).
    """
    if burn_in_jumps < 1 or n_jumps < 1:
        raise ValueError("burn_in_jumps and n_jumps must be >= 1")
    sub = restrict_finite(model, f)
    if int(i) not in sub.neurons:
        raise NeuronOutOfScope(int(i))
    cm = kernels.compile_finite(sub)
    weights_cum = np.cumsum(cm.rates.ravel())
    occ, total_time = kernels._oracle_run(
        weights_cum, weights_cum[-1], cm.post_ptr, cm.post_idx, cm.kmax,
        cm.n, cm.index[int(i)], burn_in_jumps, n_jumps, rng
    )
    trimmed = np.trim_zeros(occ, "b")
    if trimmed.shape[0] == 0:
        trimmed = occ[:1]
    return trimmed / total_time


def tv_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Total variation distance between two normalized histograms."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    for h in (h1, h2):
        total = float(h.sum())
        if abs(total - 1.0) > 1e-9:
            raise NotNormalized(total)
    width = max(h1.shape[0], h2.shape[0])
    a = np.zeros(width)
    b = np.zeros(width)
    a[: h1.shape[0]] = h1
    b[: h2.shape[0]] = h2
    return 0.5 * float(np.abs(a - b).sum())
