"""Hot inner loops over array-encoded finite models.

Every kernel below is written as plain numpy/python and compiled with numba
``@njit`` at import time. Setting the environment variable
``NEUROCLAN_DISABLE_NUMBA=1`` skips compilation and runs the identical source
interpreted; because all randomness is drawn through ``Generator.random()``
from per-sample Philox streams, both modes produce bit-identical results.

Kernels receive a :class:`CompiledModel`, a struct-of-arrays encoding of a
finite model: dense neuron indices ``0..n-1`` (sorted external ids), a padded
rate matrix, per-neuron event rates, and the postsynaptic adjacency in CSR
form with one cell per (neuron, threshold) pair.
"""

from __future__ import annotations

import math
import os
import weakref
from dataclasses import dataclass

import numpy as np

NUMBA_DISABLED = os.environ.get("NEUROCLAN_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

if not NUMBA_DISABLED:
    import numba

    def _jit(fn):
        return numba.njit(cache=True, nogil=True)(fn)

else:  # interpreted fallback, same source

    def _jit(fn):
        return fn


# Event kind codes; must match events.EventKind values.
K_STIM = 0
K_CERT = 1
K_FAIL = 2
K_ADD = 3
K_NULL = 4

STATUS_OK = 0
STATUS_BUDGET = 1
STATUS_CONTAINMENT = 2
STATUS_REPLAY = 3


@dataclass(frozen=True)
class CompiledModel:
    """Finite model flattened to arrays for kernel consumption."""

    ids: np.ndarray           # (n,) sorted external neuron ids
    index: dict               # external id -> dense index
    kmax: int
    rates: np.ndarray         # (n, kmax+1) padded rate matrix
    total_rate: np.ndarray    # (n,) own-clock rate per neuron
    lam: np.ndarray           # (n,) backward event rate per neuron
    rho: np.ndarray           # (n,) stimulus fraction per neuron
    post_ptr: np.ndarray      # (n*kmax + 1,) CSR offsets, cell = j*kmax + (k-1)
    post_idx: np.ndarray      # dense postsynaptic indices, sorted per cell

    @property
    def n(self) -> int:
        return self.ids.shape[0]


_COMPILE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def compile_finite(model) -> CompiledModel:
    """Encode a finite model as arrays; cached per model instance."""
    from .model import big_lambda, rho as rho_fn

    cached = _COMPILE_CACHE.get(model)
    if cached is not None:
        return cached
    if model.neurons is None:
        raise ValueError("only finite models can be compiled")
    ids = np.asarray(model.neurons, dtype=np.int64)
    n = ids.shape[0]
    index = {int(e): d for d, e in enumerate(ids)}
    kmax = model.max_threshold
    rates = np.zeros((n, kmax + 1), dtype=np.float64)
    for d, e in enumerate(ids):
        rv = model.rate_vector(int(e))
        rates[d, : rv.shape[0]] = rv
    post_ptr = np.zeros(n * kmax + 1, dtype=np.int64)
    chunks = []
    pos = 0
    for d, e in enumerate(ids):
        for k in range(1, kmax + 1):
            members = sorted(
                index[t] for t in model.post(int(e), k) if t in index
            )
            pos += len(members)
            post_ptr[d * kmax + k] = pos
            chunks.extend(members)
    post_idx = np.asarray(chunks, dtype=np.int64)
    compiled = CompiledModel(
        ids=ids,
        index=index,
        kmax=kmax,
        rates=rates,
        total_rate=rates.sum(axis=1),
        lam=np.asarray([big_lambda(model, int(e)) for e in ids]),
        rho=np.asarray([rho_fn(model, int(e)) for e in ids]),
        post_ptr=post_ptr,
        post_idx=post_idx,
    )
    _COMPILE_CACHE[model] = compiled
    return compiled


# --- primitive helpers -------------------------------------------------------

def _grow_i64(arr):
    out = np.empty(arr.shape[0] * 2, np.int64)
    out[: arr.shape[0]] = arr
    return out


_grow_i64 = _jit(_grow_i64)


def _grow_f64(arr):
    out = np.empty(arr.shape[0] * 2, np.float64)
    out[: arr.shape[0]] = arr
    return out


_grow_f64 = _jit(_grow_f64)


def _certify(gen, rho_j, k):
    # Success (probability rho_j**k) iff k consecutive own-clock draws are
    # stimuli; stops at the first non-stimulus draw.
    for _ in range(k):
        if gen.random() >= rho_j:
            return False
    return True


_certify = _jit(_certify)


def _certify_trials(gen, rho_j, k, trials):
    wins = 0
    for _ in range(trials):
        if _certify(gen, rho_j, k):
            wins += 1
    return wins


_certify_trials = _jit(_certify_trials)


def _select_event(rates, post_ptr, post_idx, kmax, in_c, target):
    # Inverse-CDF scan in canonical order: threshold 0 over clan members in
    # ascending index order, then k = 1..kmax over eligible neurons in
    # ascending order. Returns (-1, -1) for the residual overlap mass.
    n = rates.shape[0]
    cum = 0.0
    for j in range(n):
        if in_c[j]:
            cum += rates[j, 0]
            if target < cum:
                return j, 0
    for k in range(1, kmax + 1):
        for j in range(n):
            w = rates[j, k]
            if w <= 0.0:
                continue
            member = in_c[j]
            if not member:
                for p in range(post_ptr[j * kmax + k - 1], post_ptr[j * kmax + k]):
                    if in_c[post_idx[p]]:
                        member = True
                        break
            if member:
                cum += w
                if target < cum:
                    return j, k
    return -1, -1


_select_event = _jit(_select_event)


def _step_core(rates, lam, rho, post_ptr, post_idx, kmax, in_c, csize, gen, with_dt):
    # One backward step. Draw order is pinned: (1) outcome selection,
    # (2) certification draws, (3) holding time.
    n = rates.shape[0]
    total = 0.0
    for u in range(n):
        if in_c[u]:
            total += lam[u]
    target = gen.random() * total
    j, k = _select_event(rates, post_ptr, post_idx, kmax, in_c, target)
    kind = K_NULL
    if j >= 0:
        if k == 0:
            kind = K_STIM
        elif in_c[j]:
            if _certify(gen, rho[j], k):
                kind = K_CERT
                in_c[j] = False
                csize -= 1
            else:
                kind = K_FAIL
        else:
            kind = K_ADD
            in_c[j] = True
            csize += 1
    dt = 0.0
    if with_dt:
        dt = -math.log(1.0 - gen.random()) / total
    return kind, j, k, csize, dt


_step_core = _jit(_step_core)


def _backward_run(rates, lam, rho, post_ptr, post_idx, kmax, root, gen,
                  max_steps, with_dt):
    n = rates.shape[0]
    in_c = np.zeros(n, np.bool_)
    in_c[root] = True
    csize = 1
    max_clan = 1
    n_null = 0
    ev_kind = np.empty(64, np.int64)
    ev_j = np.empty(64, np.int64)
    ev_k = np.empty(64, np.int64)
    ev_step = np.empty(64, np.int64)
    sizes = np.empty(64, np.int64)
    dts = np.empty(64 if with_dt else 0, np.float64)
    n_log = 0
    step = 0
    status = STATUS_OK
    while csize > 0:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        kind, j, k, csize, dt = _step_core(
            rates, lam, rho, post_ptr, post_idx, kmax, in_c, csize, gen, with_dt
        )
        if csize > max_clan:
            max_clan = csize
        if step >= sizes.shape[0]:
            sizes = _grow_i64(sizes)
            if with_dt:
                dts = _grow_f64(dts)
        sizes[step] = csize
        if with_dt:
            dts[step] = dt
        step += 1
        if kind == K_NULL:
            n_null += 1
        else:
            if n_log >= ev_kind.shape[0]:
                ev_kind = _grow_i64(ev_kind)
                ev_j = _grow_i64(ev_j)
                ev_k = _grow_i64(ev_k)
                ev_step = _grow_i64(ev_step)
            ev_kind[n_log] = kind
            ev_j[n_log] = j
            ev_k[n_log] = k
            ev_step[n_log] = step
            n_log += 1
    return (status, step, n_log, ev_kind, ev_j, ev_k, ev_step, sizes, dts,
            max_clan, n_null)


_backward_run = _jit(_backward_run)


def _bump_post(post_ptr, post_idx, kmax, j, k, active, p):
    for pp in range(post_ptr[j * kmax + k - 1], post_ptr[j * kmax + k]):
        m = post_idx[pp]
        if active[m] and m != j:
            p[m] += 1


_bump_post = _jit(_bump_post)


def _replay(post_ptr, post_idx, kmax, ev_kind, ev_j, ev_k, n_log, root, n):
    # Process the log deepest-first (forward in real time). A neuron's tracked
    # window opens at its certified spike and closes at the event that added
    # it to the clan.
    active = np.zeros(n, np.bool_)
    p = np.zeros(n, np.int64)
    for idx in range(n_log - 1, -1, -1):
        kind = ev_kind[idx]
        j = ev_j[idx]
        k = ev_k[idx]
        if kind == K_CERT:
            active[j] = True
            p[j] = 0
            _bump_post(post_ptr, post_idx, kmax, j, k, active, p)
        else:
            if not active[j]:
                return STATUS_REPLAY, np.int64(-1), p, active
            if kind == K_STIM:
                p[j] += 1
            else:
                if p[j] >= k:
                    p[j] = 0
                    _bump_post(post_ptr, post_idx, kmax, j, k, active, p)
                if kind == K_ADD:
                    active[j] = False
    if not active[root]:
        return STATUS_REPLAY, np.int64(-1), p, active
    return STATUS_OK, p[root], p, active


_replay = _jit(_replay)


def _sizes_at(grid, sizes, dts, n_steps, out):
    # Clan size at backward time s (right-continuous); 0 from the emptying
    # time onwards. grid must be sorted ascending.
    gi = 0
    t = 0.0
    size = 1
    for st in range(n_steps):
        t_next = t + dts[st]
        while gi < grid.shape[0] and grid[gi] < t_next:
            out[gi] = size
            gi += 1
        size = sizes[st]
        t = t_next
    while gi < grid.shape[0]:
        out[gi] = 0
        gi += 1


_sizes_at = _jit(_sizes_at)


def _sample_one(rates, lam, rho, post_ptr, post_idx, kmax, root, gen,
                max_steps, with_dt, grid):
    (status, n_steps, n_log, ev_kind, ev_j, ev_k, ev_step, sizes, dts,
     max_clan, n_null) = _backward_run(
        rates, lam, rho, post_ptr, post_idx, kmax, root, gen, max_steps, with_dt
    )
    gsizes = np.zeros(grid.shape[0], np.int64)
    if status != STATUS_OK:
        return status, np.int64(-1), n_steps, max_clan, n_null, gsizes
    if with_dt and grid.shape[0] > 0:
        _sizes_at(grid, sizes, dts, n_steps, gsizes)
    status, pot, p, active = _replay(
        post_ptr, post_idx, kmax, ev_kind, ev_j, ev_k, n_log, root,
        rates.shape[0]
    )
    return status, pot, n_steps, max_clan, n_null, gsizes


_sample_one = _jit(_sample_one)


def _coupled_run(rates, lam, rho, post_ptr, post_idx, kmax, root, f_mask, gen,
                 max_steps, with_dt):
    # Full backward run with the finite-window copy mirrored on the same
    # draws. A non-null event applies to the restricted set iff its neuron
    # lies in F and either sits in the restricted set (same certification
    # outcome reused) or, for additions, is presynaptic to a restricted
    # member. Containment restricted <= full is asserted every step.
    n = rates.shape[0]
    in_c = np.zeros(n, np.bool_)
    in_cf = np.zeros(n, np.bool_)
    in_c[root] = True
    in_cf[root] = True
    csize = 1
    cfsize = 1
    max_clan = 1
    max_clan_f = 1
    n_null = 0
    hit_outside = False
    ev_kind = np.empty(64, np.int64)
    ev_j = np.empty(64, np.int64)
    ev_k = np.empty(64, np.int64)
    ev_step = np.empty(64, np.int64)
    fv_kind = np.empty(64, np.int64)
    fv_j = np.empty(64, np.int64)
    fv_k = np.empty(64, np.int64)
    fv_step = np.empty(64, np.int64)
    sizes = np.empty(64, np.int64)
    dts = np.empty(64 if with_dt else 0, np.float64)
    n_log = 0
    nf_log = 0
    step = 0
    status = STATUS_OK
    while csize > 0:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        kind, j, k, csize, dt = _step_core(
            rates, lam, rho, post_ptr, post_idx, kmax, in_c, csize, gen, with_dt
        )
        if csize > max_clan:
            max_clan = csize
        if step >= sizes.shape[0]:
            sizes = _grow_i64(sizes)
            if with_dt:
                dts = _grow_f64(dts)
        sizes[step] = csize
        if with_dt:
            dts[step] = dt
        step += 1
        if kind == K_NULL:
            n_null += 1
        else:
            if n_log >= ev_kind.shape[0]:
                ev_kind = _grow_i64(ev_kind)
                ev_j = _grow_i64(ev_j)
                ev_k = _grow_i64(ev_k)
                ev_step = _grow_i64(ev_step)
            ev_kind[n_log] = kind
            ev_j[n_log] = j
            ev_k[n_log] = k
            ev_step[n_log] = step
            n_log += 1
            if not f_mask[j]:
                hit_outside = True
            elif cfsize > 0:
                apply_f = False
                if kind == K_ADD:
                    for pp in range(
                        post_ptr[j * kmax + k - 1], post_ptr[j * kmax + k]
                    ):
                        if in_cf[post_idx[pp]]:
                            apply_f = True
                            break
                else:
                    apply_f = in_cf[j]
                if apply_f:
                    if kind == K_CERT:
                        in_cf[j] = False
                        cfsize -= 1
                    elif kind == K_ADD:
                        in_cf[j] = True
                        cfsize += 1
                        if cfsize > max_clan_f:
                            max_clan_f = cfsize
                    if nf_log >= fv_kind.shape[0]:
                        fv_kind = _grow_i64(fv_kind)
                        fv_j = _grow_i64(fv_j)
                        fv_k = _grow_i64(fv_k)
                        fv_step = _grow_i64(fv_step)
                    fv_kind[nf_log] = kind
                    fv_j[nf_log] = j
                    fv_k[nf_log] = k
                    fv_step[nf_log] = step
                    nf_log += 1
        for u in range(n):
            if in_cf[u] and not in_c[u]:
                status = STATUS_CONTAINMENT
                break
        if status != STATUS_OK:
            break
    return (status, step, n_log, ev_kind, ev_j, ev_k, ev_step,
            nf_log, fv_kind, fv_j, fv_k, fv_step, sizes, dts,
            max_clan, max_clan_f, n_null, hit_outside)


_coupled_run = _jit(_coupled_run)


def _coupled_sample(rates, lam, rho, post_ptr, post_idx, kmax, root, f_mask,
                    gen, max_steps, with_dt):
    (status, step, n_log, ev_kind, ev_j, ev_k, ev_step,
     nf_log, fv_kind, fv_j, fv_k, fv_step, sizes, dts,
     max_clan, max_clan_f, n_null, hit_outside) = _coupled_run(
        rates, lam, rho, post_ptr, post_idx, kmax, root, f_mask, gen,
        max_steps, with_dt
    )
    n = rates.shape[0]
    if status != STATUS_OK:
        return (status, np.int64(-1), np.int64(-1), step, nf_log, max_clan,
                max_clan_f, n_null, hit_outside, False)
    identical = n_log == nf_log
    if identical:
        for idx in range(n_log):
            if (ev_kind[idx] != fv_kind[idx] or ev_j[idx] != fv_j[idx]
                    or ev_k[idx] != fv_k[idx]):
                identical = False
                break
    status, pot, p, active = _replay(
        post_ptr, post_idx, kmax, ev_kind, ev_j, ev_k, n_log, root, n
    )
    if status != STATUS_OK:
        return (status, np.int64(-1), np.int64(-1), step, nf_log, max_clan,
                max_clan_f, n_null, hit_outside, identical)
    if identical:
        pot_f = pot
    else:
        status, pot_f, p2, active2 = _replay(
            post_ptr, post_idx, kmax, fv_kind, fv_j, fv_k, nf_log, root, n
        )
        if status != STATUS_OK:
            return (status, pot, np.int64(-1), step, nf_log, max_clan,
                    max_clan_f, n_null, hit_outside, identical)
    return (STATUS_OK, pot, pot_f, step, nf_log, max_clan, max_clan_f,
            n_null, hit_outside, identical)


_coupled_sample = _jit(_coupled_sample)


def _oracle_run(weights_cum, total_rate, post_ptr, post_idx, kmax, nf,
                target_idx, burn_in, n_jumps, gen):
    # Forward jump chain of the finite-window process from the all-zero
    # configuration. Null spike attempts (insufficient potential) are kept as
    # jumps, so the total event rate is configuration-independent. Draw order
    # per jump: holding time, then event. Returns the raw time-weighted
    # occupation of the target neuron's potential and the accumulated time.
    p = np.zeros(nf, np.int64)
    occ = np.zeros(64, np.float64)
    total_time = 0.0
    for jump in range(burn_in + n_jumps):
        dt = -math.log(1.0 - gen.random()) / total_rate
        target = gen.random() * total_rate
        idx = np.searchsorted(weights_cum, target, side="right")
        if jump >= burn_in:
            pot = p[target_idx]
            while pot >= occ.shape[0]:
                wider = np.zeros(occ.shape[0] * 2, np.float64)
                wider[: occ.shape[0]] = occ
                occ = wider
            occ[pot] += dt
            total_time += dt
        i = idx // (kmax + 1)
        k = idx % (kmax + 1)
        if k == 0:
            p[i] += 1
        elif p[i] >= k:
            p[i] = 0
            for pp in range(post_ptr[i * kmax + k - 1], post_ptr[i * kmax + k]):
                m = post_idx[pp]
                if m != i:
                    p[m] += 1
    return occ, total_time


_oracle_run = _jit(_oracle_run)
