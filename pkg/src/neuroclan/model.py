"""Neuron model definitions and derived quantities.

A model assigns every neuron ``i`` a finite rate vector
``(lambda_i(0), lambda_i(1), ..., lambda_i(K))`` and, per threshold ``k >= 1``,
a finite postsynaptic set ``post(i, k)`` (the neurons incremented when ``i``
spikes at threshold ``k``) together with the dual presynaptic set
``pre(i, k) = {j : i in post(j, k)}``. ``lambda_i(0)`` is the external
stimulus rate; ``lambda_i(k)`` for ``k >= 1`` is the rate of a spike attempt
that fires only when the membrane potential is at least ``k``.

Derived per-neuron quantities used throughout the sampler:

* ``big_lambda(i)``: total event rate seen by the backward pass at ``i``,
  own rates plus all incoming spike rates.
* ``rho(i)``: probability that an own-clock event of ``i`` is a stimulus.
* ``alpha``: contraction coefficient of the ancestor-set cardinality; the
  backward pass is guaranteed to terminate when ``alpha < 1``.
* per-neuron margin ``m_i``: certified-removal rate minus incoming-add rate;
  stationarity of the infinite system needs ``m_i >= 0`` everywhere.
* ``delta_f(F)``: worst-case per-step probability that the backward pass
  touches a neuron outside the finite window ``F``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlphaNotContracting,
    ConditionViolated,
    ConditionWarning,
    InertNeuron,
    UnboundedNeighborhood,
)

# Hard cap on pre/post set enumeration; a lazily defined model that yields a
# larger neighborhood is rejected rather than silently iterated.
NEIGHBOR_LIMIT = 1_000_000


class ModelSpec:
    """Interface shared by finite and countable models.

    Implementations must be immutable after construction; every operation in
    this module is a pure function of the model, so instances can be shared
    freely between concurrent workers.
    """

    is_finite: bool = False

    #: sorted tuple of neuron ids for finite models, None for countable ones
    neurons: tuple[int, ...] | None = None

    #: largest threshold k with lambda_.(k) possibly nonzero, over all neurons
    max_threshold: int = 0

    def rate_vector(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def post(self, i: int, k: int) -> frozenset[int]:
        raise NotImplementedError

    def pre(self, i: int, k: int) -> frozenset[int]:
        raise NotImplementedError

    def resolve_scope(self, scope: Iterable[int] | None) -> tuple[int, ...]:
        if scope is None:
            if self.neurons is None:
                raise ValueError(
                    "a representative scope is required for countable models"
                )
            return self.neurons
        out = tuple(sorted(set(int(i) for i in scope)))
        if not out:
            raise ValueError("scope must be nonempty")
        return out


class FiniteModel(ModelSpec):
    """Explicit model over a finite neuron set.

    Presynaptic sets are derived by inverting the given postsynaptic map, so
    synaptic duality holds by construction.
    """

    is_finite = True

    def __init__(
        self,
        rates: dict[int, Sequence[float]],
        post: dict[tuple[int, int], Iterable[int]] | None = None,
    ):
        self.neurons = tuple(sorted(int(i) for i in rates))
        if len(self.neurons) != len(rates):
            raise ValueError("duplicate neuron ids")
        self._rates = {
            int(i): np.asarray(r, dtype=np.float64) for i, r in rates.items()
        }
        for i, rv in self._rates.items():
            if rv.ndim != 1 or rv.shape[0] < 1:
                raise ValueError(f"rate vector of neuron {i} must be 1-d, nonempty")
        self._post: dict[tuple[int, int], frozenset[int]] = {}
        self._pre: dict[tuple[int, int], set[int]] = {}
        for (i, k), targets in (post or {}).items():
            i, k = int(i), int(k)
            if k < 1:
                raise ValueError(f"synapse threshold must be >= 1, got {k}")
            tset = frozenset(int(t) for t in targets)
            if not tset:
                continue
            self._post[(i, k)] = tset
            for t in tset:
                self._pre.setdefault((t, k), set()).add(i)
        self.max_threshold = max(
            [rv.shape[0] - 1 for rv in self._rates.values()]
            + [k for (_, k) in self._post]
            + [0]
        )

    def rate_vector(self, i: int) -> np.ndarray:
        return self._rates[i]

    def post(self, i: int, k: int) -> frozenset[int]:
        return self._post.get((i, k), frozenset())

    def pre(self, i: int, k: int) -> frozenset[int]:
        return frozenset(self._pre.get((i, k), frozenset()))


class DecayingFeedforward(ModelSpec):
    """Countable feedforward family on I = {0, 1, 2, ...}.

    Neuron ``i`` carries rates ``a0 * r**i * s`` and its threshold-k spikes
    feed the ``w_k`` neurons directly below it, so incoming spikes always
    arrive from higher indices with geometrically smaller rates. Build
    instances through :func:`build_decaying_feedforward`, which verifies the
    closed-form stationarity inequality for the whole family.
    """

    is_finite = False

    def __init__(self, a0: float, r: float, s: Sequence[float], window: Sequence[int]):
        self.a0 = float(a0)
        self.r = float(r)
        self.s = np.asarray(s, dtype=np.float64)
        self.window = tuple(int(w) for w in window)
        self.max_threshold = self.s.shape[0] - 1
        self._rate_cache: dict[int, np.ndarray] = {}

    def rate_vector(self, i: int) -> np.ndarray:
        rv = self._rate_cache.get(i)
        if rv is None:
            rv = self.a0 * self.r**i * self.s
            self._rate_cache[i] = rv
        return rv

    def _width(self, k: int) -> int:
        if not 1 <= k <= self.max_threshold:
            return 0
        return self.window[k - 1]

    def post(self, i: int, k: int) -> frozenset[int]:
        w = self._width(k)
        return frozenset(range(max(0, i - w), i))

    def pre(self, i: int, k: int) -> frozenset[int]:
        return frozenset(range(i + 1, i + 1 + self._width(k)))


def build_decaying_feedforward(
    a0: float, r: float, s: Sequence[float], window: Sequence[int]
) -> DecayingFeedforward:
    """Build the countable feedforward family, verifying stationarity.

    With ``rho = s(0) / sum(s)`` uniform over neurons, the per-neuron margin
    condition for the whole family reduces to
    ``r * sum_k w_k s(k) <= sum_k s(k) rho**k``; a family violating it is
    rejected with both sides reported.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if s_arr.ndim != 1 or s_arr.shape[0] < 1:
        raise ValueError("s must be a nonempty 1-d sequence")
    if s_arr[0] <= 0:
        raise ValueError("s(0) must be positive")
    if np.any(s_arr < 0):
        raise ValueError("s entries must be non-negative")
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    window = tuple(int(w) for w in window)
    if len(window) != s_arr.shape[0] - 1:
        raise ValueError("window must list one width per threshold k >= 1")
    if any(w < 0 for w in window):
        raise ValueError("window widths must be >= 0")

    rho_fam = float(s_arr[0] / s_arr.sum())
    lhs = r * sum(w * float(s_arr[k + 1]) for k, w in enumerate(window))
    rhs = sum(float(s_arr[k]) * rho_fam**k for k in range(1, s_arr.shape[0]))
    if lhs > rhs:
        raise ConditionViolated(
            f"decaying feedforward family is not contracting: "
            f"r * sum_k w_k s(k) = {lhs} > sum_k s(k) rho^k = {rhs}"
        )
    return DecayingFeedforward(a0, r, s_arr, window)


# --- elementwise helpers ----------------------------------------------------

def rate_at(model: ModelSpec, j: int, k: int) -> float:
    """lambda_j(k), zero beyond the stored support."""
    rv = model.rate_vector(j)
    return float(rv[k]) if k < rv.shape[0] else 0.0


def _bounded(s: frozenset[int], i: int, k: int) -> frozenset[int]:
    if len(s) > NEIGHBOR_LIMIT:
        raise UnboundedNeighborhood(i, k, NEIGHBOR_LIMIT)
    return s


def incoming_rate(model: ModelSpec, i: int) -> float:
    """Total incoming spike rate sum_k sum_{j in pre(i,k)} lambda_j(k)."""
    total = 0.0
    for k in range(1, model.max_threshold + 1):
        for j in sorted(_bounded(model.pre(i, k), i, k)):
            total += rate_at(model, j, k)
    return total


def big_lambda(model: ModelSpec, i: int) -> float:
    """Backward event rate at neuron i: own rates plus incoming spike rates."""
    rv = model.rate_vector(i)
    total = 0.0
    for k in range(rv.shape[0]):
        total += float(rv[k])
    return total + incoming_rate(model, i)


def rho(model: ModelSpec, i: int) -> float:
    """Probability that an own-clock event of i is an external stimulus."""
    rv = model.rate_vector(i)
    total = float(rv.sum())
    if total <= 0.0:
        raise InertNeuron(i)
    return float(rv[0]) / total


def _alpha_at(model: ModelSpec, i: int) -> float:
    rv = model.rate_vector(i)
    d = incoming_rate(model, i)
    rho_i = rho(model, i)
    num = 2.0 * d + float(rv[0])
    for k in range(1, rv.shape[0]):
        num += float(rv[k]) * (1.0 - rho_i**k)
    return num / big_lambda(model, i)


def _margin_at(model: ModelSpec, i: int) -> float:
    rv = model.rate_vector(i)
    rho_i = rho(model, i)
    certified = 0.0
    for k in range(1, rv.shape[0]):
        certified += float(rv[k]) * rho_i**k
    return certified - incoming_rate(model, i)


def alpha(model: ModelSpec, scope: Iterable[int] | None = None) -> float:
    """Contraction coefficient: sup over the scope of the expected next-step
    ancestor count per current member. Warns when the value reaches 1 (tail
    bounds degenerate) or exceeds it (stationarity conditions fail)."""
    ids = model.resolve_scope(scope)
    value = max(_alpha_at(model, i) for i in ids)
    if value > 1.0:
        warnings.warn(
            f"alpha = {value} > 1: stationarity conditions fail on this scope",
            ConditionWarning,
            stacklevel=2,
        )
    elif value == 1.0:
        warnings.warn(
            "alpha = 1: termination tail bounds degenerate",
            ConditionWarning,
            stacklevel=2,
        )
    return value


def growth_constant(model: ModelSpec, scope: Iterable[int] | None = None) -> float:
    """Exponential growth rate bound for the timed ancestor set: E|C_s| <= e^{c s}."""
    ids = model.resolve_scope(scope)
    return max(-_margin_at(model, i) for i in ids)


@dataclass(frozen=True)
class Diagnostics:
    """Structural validation report; ``passed`` iff every list is empty."""

    duality: tuple[tuple[int, int, int], ...] = ()
    inert: tuple[int, ...] = ()
    negative: tuple[tuple[int, int, float], ...] = ()
    self_synapses: tuple[tuple[int, int], ...] = ()

    @property
    def passed(self) -> bool:
        return not (self.duality or self.inert or self.negative or self.self_synapses)


def validate(model: ModelSpec, scope: Iterable[int] | None = None) -> Diagnostics:
    """Check duality, inertness, rate signs and self-synapses over a scope.

    A violation tuple ``(a, b, k)`` in ``duality`` means ``post(a, k)`` lists
    ``b`` but ``pre(b, k)`` does not list ``a`` back (or the mirror image).
    """
    ids = model.resolve_scope(scope)
    duality: list[tuple[int, int, int]] = []
    inert: list[int] = []
    negative: list[tuple[int, int, float]] = []
    selfs: list[tuple[int, int]] = []
    for i in ids:
        rv = model.rate_vector(i)
        for k in range(rv.shape[0]):
            if rv[k] < 0:
                negative.append((i, k, float(rv[k])))
        if rv.sum() <= 0:
            inert.append(i)
        for k in range(1, model.max_threshold + 1):
            post_set = _bounded(model.post(i, k), i, k)
            pre_set = _bounded(model.pre(i, k), i, k)
            if i in post_set or i in pre_set:
                selfs.append((i, k))
            for j in sorted(post_set):
                if i not in model.pre(j, k):
                    duality.append((i, j, k))
            for j in sorted(pre_set):
                if i not in model.post(j, k):
                    duality.append((j, i, k))
    return Diagnostics(tuple(duality), tuple(inert), tuple(negative), tuple(selfs))


@dataclass(frozen=True)
class ConditionReport:
    """Stationarity check over a scope: rate bound, margins, contraction."""

    scope: tuple[int, ...]
    beta: float
    alpha: float
    growth_c: float
    margins: dict[int, float] = field(repr=False)
    lambdas: dict[int, float] = field(repr=False)
    rhos: dict[int, float] = field(repr=False)
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(m >= 0.0 for m in self.margins.values()) and np.isfinite(self.beta)

    def summary_lines(self) -> list[str]:
        lines = [
            f"scope: {len(self.scope)} neurons "
            f"[{self.scope[0]}..{self.scope[-1]}]",
            f"beta (sup event rate)   : {self.beta:.12g}",
            f"alpha (contraction)     : {self.alpha:.12g}",
            f"growth constant c       : {self.growth_c:.12g}",
        ]
        worst = min(self.margins, key=self.margins.get)
        lines.append(
            f"worst margin            : m_{worst} = {self.margins[worst]:.12g}"
        )
        lines.extend(self.notes)
        lines.append("conditions " + ("PASS" if self.passed else "FAIL"))
        return lines


def check_conditions(
    model: ModelSpec, scope: Iterable[int] | None = None
) -> ConditionReport:
    """Evaluate the stationarity conditions over a scope.

    Passes iff every per-neuron margin ``m_i`` (certified-removal rate minus
    incoming spike rate) is non-negative and the rate bound beta is finite.
    """
    ids = model.resolve_scope(scope)
    lambdas = {i: big_lambda(model, i) for i in ids}
    rhos = {i: rho(model, i) for i in ids}
    margins = {i: _margin_at(model, i) for i in ids}
    beta = max(lambdas.values())
    alpha_val = max(_alpha_at(model, i) for i in ids)
    c_val = max(-m for m in margins.values())
    notes: list[str] = []
    if isinstance(model, DecayingFeedforward):
        notes.append(
            "countable family: closed-form contraction inequality verified at build"
        )
    if alpha_val >= 1.0:
        notes.append(f"warning: alpha = {alpha_val:.12g} >= 1 (degenerate bounds)")
    return ConditionReport(
        scope=ids,
        beta=float(beta),
        alpha=float(alpha_val),
        growth_c=float(c_val),
        margins=margins,
        lambdas=lambdas,
        rhos=rhos,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class DeltaF:
    """Escape rate bound for a finite window F.

    ``delta`` bounds the per-step probability of the backward pass leaving F;
    ``bound = delta / (1 - alpha)`` bounds the probability that the coupled
    finite-window sample disagrees with the full-system sample.
    """

    delta: float
    bound: float


def delta_f(
    model: ModelSpec, f: Iterable[int], scope: Iterable[int] | None = None
) -> DeltaF:
    """Escape bound for a finite window F over a representative scope.

    Computed as ``max_i d_i / big_lambda(i)`` with ``d_i`` the incoming rate
    of i restricted to presynaptic neurons outside F; by the mediant
    inequality this equals the supremum over all finite ancestor sets of the
    aggregated ratio, so no set enumeration is needed.
    """
    f_set = frozenset(int(x) for x in f)
    if not f_set:
        raise ValueError("F must be nonempty")
    ids = model.resolve_scope(scope)
    best = 0.0
    for i in ids:
        d = 0.0
        for k in range(1, model.max_threshold + 1):
            for j in sorted(_bounded(model.pre(i, k), i, k)):
                if j not in f_set:
                    d += rate_at(model, j, k)
        best = max(best, d / big_lambda(model, i))
    a = max(_alpha_at(model, i) for i in ids)
    if a >= 1.0:
        raise AlphaNotContracting(a)
    return DeltaF(delta=best, bound=best / (1.0 - a))
