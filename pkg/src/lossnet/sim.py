"""Discrete-event simulation of loss networks with a fictitious overflow system.

Random inputs are generated per replication from counter-based Philox
streams keyed by ``(master_seed, replication, role, class)``; the event loop
itself is a jitted kernel.  Because streams do not depend on the policy,
running several policies with the same seed couples them automatically:
same arrival epochs, same per-arrival service times.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import Scenario, scale_scenario
from .lp import solve_lp
from .policy import (
    CAP_TOL,
    KIND_GREEDY,
    KIND_NETWORK,
    KIND_PENALTY,
    KIND_POLYTOPE,
    KIND_THINNING,
    Policy,
    PolicyDecision,
    RejectCause,
    SimState,
    decide,
    greedy_decide,
    keep_matrix,
    network_penalty_decide,
    penalty_decide,
    thinning_decide,
)

ROLE_ARRIVALS, ROLE_SERVICE, ROLE_THINNING, ROLE_INITIAL = range(4)

STATUS_OK = 0
STATUS_FEASIBILITY = 1
STATUS_ORDER = 2


class FeasibilityFault(RuntimeError):
    """A policy accepted a request that does not fit: an engine or policy bug."""


# --------------------------------------------------------------------------
# random inputs
# --------------------------------------------------------------------------


def stream(master_seed: int, rep: int, role: int, cls: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(rep), int(role), int(cls)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Streams:
    """Merged per-replication inputs: arrival epochs, classes, service draws, thinning draws."""

    t: np.ndarray
    cls: np.ndarray
    service: np.ndarray
    u: np.ndarray
    init_cls: np.ndarray
    init_service: np.ndarray

    def arrival_digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.t, self.cls, self.service):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _poisson_epochs(rng, lam, t_max):
    out = []
    t0 = 0.0
    chunk = max(16, int(lam * t_max + 6 * math.sqrt(lam * t_max + 1) + 16))
    while True:
        gaps = -np.log1p(-rng.random(chunk)) / lam  # inverse transform
        ts = t0 + np.cumsum(gaps)
        out.append(ts)
        if ts[-1] > t_max:
            break
        t0 = ts[-1]
    ts = np.concatenate(out)
    return ts[ts <= t_max]


def make_streams(sc: Scenario, master_seed: int, rep: int, t_max: float, y0) -> Streams:
    ts, cs, ss, us = [], [], [], []
    for i, c in enumerate(sc.classes):
        t = _poisson_epochs(stream(master_seed, rep, ROLE_ARRIVALS, i), c.arrival_rate, t_max)
        ts.append(t)
        cs.append(np.full(t.size, i, np.int64))
        ss.append(c.service.sample(stream(master_seed, rep, ROLE_SERVICE, i), t.size))
        us.append(stream(master_seed, rep, ROLE_THINNING, i).random(t.size))
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    ic, isv = [], []
    for i, c in enumerate(sc.classes):
        k = int(y0[i])
        ic.append(np.full(k, i, np.int64))
        isv.append(c.service.sample(stream(master_seed, rep, ROLE_INITIAL, i), k))
    return Streams(
        t=t[order],
        cls=np.concatenate(cs)[order],
        service=np.concatenate(ss)[order],
        u=np.concatenate(us)[order],
        init_cls=np.concatenate(ic) if ic else np.zeros(0, np.int64),
        init_service=np.concatenate(isv) if isv else np.zeros(0),
    )


# --------------------------------------------------------------------------
# jitted event loop
# --------------------------------------------------------------------------


@njit(cache=True)
def _less(ht, hs, a, b):
    return ht[a] < ht[b] or (ht[a] == ht[b] and hs[a] < hs[b])


@njit(cache=True)
def _swap(ht, hs, hc, hj, a, b):
    ht[a], ht[b] = ht[b], ht[a]
    hs[a], hs[b] = hs[b], hs[a]
    hc[a], hc[b] = hc[b], hc[a]
    hj[a], hj[b] = hj[b], hj[a]


@njit(cache=True)
def _push(ht, hs, hc, hj, n, t, sq, c, j):
    ht[n] = t
    hs[n] = sq
    hc[n] = c
    hj[n] = j
    k = n
    while k > 0:
        p = (k - 1) >> 1
        if _less(ht, hs, k, p):
            _swap(ht, hs, hc, hj, k, p)
            k = p
        else:
            break
    return n + 1


@njit(cache=True)
def _pop(ht, hs, hc, hj, n):
    n -= 1
    _swap(ht, hs, hc, hj, 0, n)
    k = 0
    while True:
        l = 2 * k + 1
        if l >= n:
            break
        c = l
        if l + 1 < n and _less(ht, hs, l + 1, l):
            c = l + 1
        if _less(ht, hs, c, k):
            _swap(ht, hs, hc, hj, c, k)
            k = c
        else:
            break
    return n


@njit(cache=True)
def _record(g, x, y, alloc, cap, xi, eta, thin, narr, ox, oy, oocc, oxi, oeta, othin, oarr):
    m, L, s = alloc.shape
    for i in range(m):
        tot = 0
        for j in range(L):
            tot += x[i, j]
        ox[g, i] = tot
        oy[g, i] = y[i]
        oxi[g, i] = xi[i]
        oeta[g, i] = eta[i]
        othin[g, i] = thin[i]
        oarr[g, i] = narr[i]
    for k in range(s):
        load = 0.0
        for i in range(m):
            for j in range(L):
                load += x[i, j] * alloc[i, j, k]
        oocc[g, k] = load


@njit(cache=True)
def run_kernel(
    at, ac, asv, au, ic, isv, grid, t_max,
    kind, alloc, nalloc, cap, alpha, c0, c1, bsize, keep, beta, Dp, Dm, H, debug,
):  # fmt: skip
    m, L, s = alloc.shape
    G = grid.size
    N = at.size
    cap_n = N + ic.size + 1
    ht = np.empty(cap_n)
    hs = np.empty(cap_n, np.int64)
    hc = np.empty(cap_n, np.int64)
    hj = np.empty(cap_n, np.int64)
    hn = 0
    sq = 0
    x = np.zeros((m, L), np.int64)
    y = np.zeros(m, np.int64)
    xi = np.zeros(m, np.int64)
    eta = np.zeros(m, np.int64)
    thin = np.zeros(m, np.int64)
    narr = np.zeros(m, np.int64)
    ox = np.zeros((G, m), np.int64)
    oy = np.zeros((G, m), np.int64)
    oocc = np.zeros((G, s))
    oxi = np.zeros((G, m), np.int64)
    oeta = np.zeros((G, m), np.int64)
    othin = np.zeros((G, m), np.int64)
    oarr = np.zeros((G, m), np.int64)

    for k in range(ic.size):
        y[ic[k]] += 1
        hn = _push(ht, hs, hc, hj, hn, isv[k], sq, ic[k], -1)
        sq += 1

    status = 0
    ai = 0
    gi = 0
    last = -np.inf
    while True:
        ta = at[ai] if ai < N else np.inf
        td = ht[0] if hn > 0 else np.inf
        tn = min(ta, td)
        while gi < G and grid[gi] < tn:
            _record(gi, x, y, alloc, cap, xi, eta, thin, narr, ox, oy, oocc, oxi, oeta, othin, oarr)
            gi += 1
        if tn == np.inf or tn > t_max:
            break
        if debug:
            if tn < last:
                status = 2
                break
            last = tn
        if td <= ta:
            c = hc[0]
            j = hj[0]
            hn = _pop(ht, hs, hc, hj, hn)
            if j < 0:
                y[c] -= 1
            else:
                x[c, j] -= 1
            continue
        c = ac[ai]
        narr[c] += 1
        code = decide(kind, c, au[ai], x, y, alloc, nalloc, cap, alpha, c0, c1, bsize, keep, beta, Dp, Dm, H)
        if code >= 0:
            x[c, code] += 1
            for k in range(s):
                if cap[k] == np.inf:
                    continue
                load = 0.0
                for a in range(m):
                    for b in range(L):
                        load += x[a, b] * alloc[a, b, k]
                if load > cap[k] + CAP_TOL * max(1.0, cap[k]):
                    status = 1
            if status == 1:
                break
            hn = _push(ht, hs, hc, hj, hn, ta + asv[ai], sq, c, code)
        else:
            if code == -1:
                xi[c] += 1
            elif code == -2:
                eta[c] += 1
            else:
                thin[c] += 1
            y[c] += 1
            hn = _push(ht, hs, hc, hj, hn, ta + asv[ai], sq, c, -1)
        sq += 1
        ai += 1
    while gi < G:
        _record(gi, x, y, alloc, cap, xi, eta, thin, narr, ox, oy, oocc, oxi, oeta, othin, oarr)
        gi += 1
    return status, ox, oy, oocc, oxi, oeta, othin, oarr


_KINDS = {
    "greedy": KIND_GREEDY,
    "thinning": KIND_THINNING,
    "penalty": KIND_PENALTY,
    "network": KIND_NETWORK,
    "polytope": KIND_POLYTOPE,
}


def _pack(sc: Scenario, policy: Policy):
    alloc, nalloc = sc.alloc_array()
    m, s = sc.m, sc.s
    alpha = np.ones(m)
    c0 = np.zeros((m, s))
    c1 = np.zeros(m)
    bsize = alloc[:, 0, :].max(axis=1)
    keep = np.ones((m, sc.max_alloc), np.bool_)
    beta = 1.0
    Dp = np.zeros((1, m))
    Dm = np.zeros((1, m))
    H = np.ones(1)
    if policy.kind == "thinning":
        alpha = np.asarray(policy.alpha, float)
    elif policy.kind in ("penalty", "network"):
        cfg = policy.penalty
        beta = float(cfg.beta)
        c1 = np.asarray(cfg.c1, float)
        if cfg.network:
            c0 = np.asarray(cfg.c0, float)
            keep = keep_matrix(cfg, sc)
        else:
            c0[:, 0] = cfg.c0
            bsize = sc.sizes().astype(float)
    elif policy.kind == "polytope":
        t = policy.tracking
        beta = float(t.beta)
        Dp, Dm, H = t.kernel_arrays()
    elif policy.kind != "greedy":
        raise ValueError(f"unknown policy kind {policy.kind!r}")
    return (_KINDS[policy.kind], alloc, nalloc, sc.cap, alpha, c0, c1, bsize, keep, beta, Dp, Dm, H)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------


@dataclass
class TraceSeries:
    """Per-replication grid samples plus pointwise ensemble summaries."""

    times: np.ndarray
    reward: np.ndarray  # (p, G)
    x: np.ndarray  # (p, G, m) accepted per class
    y: np.ndarray  # (p, G, m) fictitious per class
    occupied: np.ndarray  # (p, G, s)
    xi: np.ndarray
    eta: np.ndarray
    thinned: np.ndarray
    arrivals: np.ndarray
    capacity: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.reward.shape[0]

    @staticmethod
    def _se(a):
        if a.shape[0] < 2:
            return np.full(a.shape[1:], np.nan)
        return a.std(axis=0, ddof=1) / math.sqrt(a.shape[0])

    @property
    def reward_mean(self):
        return self.reward.mean(axis=0)

    @property
    def reward_se(self):
        return self._se(self.reward)

    @property
    def util(self):
        cap = np.where(np.isfinite(self.capacity) & (self.capacity > 0), self.capacity, 1.0)
        return self.occupied / cap

    def mean(self, name: str):
        return getattr(self, name).mean(axis=0)

    def se(self, name: str):
        return self._se(getattr(self, name).astype(float))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        m = self.x.shape[2]
        s = self.occupied.shape[2]
        head = ["t", "mean_reward", "se_reward"]
        head += [f"mean_util_{k + 1}" for k in range(s)]
        for nm in ("x", "y", "xi", "eta"):
            head += [f"mean_{nm}_{i + 1}" for i in range(m)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        cols = [self.times, self.reward_mean, self.reward_se]
        um = self.util.mean(axis=0)
        cols += [um[:, k] for k in range(s)]
        for nm in ("x", "y", "xi", "eta"):
            a = self.mean(nm)
            cols += [a[:, i] for i in range(m)]
        for row in zip(*cols):
            w.writerow([f"{float(v):.10g}" for v in row])
        return buf.getvalue()


def default_grid(sc: Scenario, t_max: float | None = None, n: int = 200):
    if t_max is None:
        t_max = 10.0 / float(sc.mu.min())
    return float(t_max), np.linspace(0.0, float(t_max), int(n))


def _grid_args(sc, t_max, grid):
    if grid is None or np.isscalar(grid):
        return default_grid(sc, t_max, 200 if grid is None else int(grid))
    g = np.asarray(grid, float)
    if np.any(np.diff(g) < 0):
        raise ValueError("grid must be nondecreasing")
    return float(t_max if t_max is not None else g[-1]), g


def _one(sc, policy, packed, master_seed, rep, t_max, grid, debug):
    st = make_streams(sc, master_seed, rep, t_max, policy.initial_load(sc.m))
    status, ox, oy, oocc, oxi, oeta, othin, oarr = run_kernel(
        st.t, st.cls, st.service, st.u, st.init_cls, st.init_service, grid, t_max, *packed, debug
    )
    if status == STATUS_FEASIBILITY:
        raise FeasibilityFault(f"replication {rep}: accepted request exceeds capacity")
    if status == STATUS_ORDER:
        raise RuntimeError(f"replication {rep}: event calendar out of order")
    return st, (ox, oy, oocc, oxi, oeta, othin, oarr)


def simulate_ensemble(
    sc: Scenario,
    policy: Policy,
    p: int = 100,
    master_seed: int = 0,
    t_max: float | None = None,
    grid=None,
    debug: bool = False,
    first_rep: int = 0,
) -> TraceSeries:
    if p < 1:
        raise ValueError("need at least one replication")
    t_max, grid = _grid_args(sc, t_max, grid)
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    packed = _pack(sc, policy)
    r = sc.reward
    parts = [[] for _ in range(7)]
    digest = hashlib.sha256()
    for rep in range(first_rep, first_rep + p):
        st, outs = _one(sc, policy, packed, master_seed, rep, t_max, grid, debug)
        digest.update(st.arrival_digest().encode())
        for acc, o in zip(parts, outs):
            acc.append(o)
    ox, oy, oocc, oxi, oeta, othin, oarr = (np.stack(a) for a in parts)
    reward = ox @ r
    meta = {"seed": master_seed, "p": p, "t_max": t_max, **policy.describe(), "arrival_sha256": digest.hexdigest()}
    return TraceSeries(grid, reward, ox, oy, oocc, oxi, oeta, othin, oarr, sc.cap, meta)


def simulate_run(sc, policy, master_seed=0, t_max=None, grid=None, rep: int = 0, debug=False) -> TraceSeries:
    """A single replication (replication index ``rep`` of the seed's stream family)."""
    return simulate_ensemble(sc, policy, 1, master_seed, t_max, grid, debug, first_rep=rep)


def simulate_coupled(sc, policies, p=100, master_seed=0, t_max=None, grid=None) -> list[TraceSeries]:
    """Run several policies on shared arrival and service streams."""
    if len(policies) < 2:
        raise ValueError("coupling needs at least two policies")
    out = [simulate_ensemble(sc, pol, p, master_seed, t_max, grid) for pol in policies]
    digests = {t.meta["arrival_sha256"] for t in out}
    assert len(digests) == 1, "coupled runs saw different arrival streams"
    return out


def scale_sweep(sc, policy_builder, scales, p=100, master_seed=0, grid=200) -> dict:
    """Simulate ``policy_builder(scaled)`` at each scale; time in 1/mu_min, reward over R*."""
    out = {}
    mu_min = float(sc.mu.min())
    for n in scales:
        if not n > 0:
            raise ValueError("scales must be positive")
        scn = scale_scenario(sc, n)
        tr = simulate_ensemble(scn, policy_builder(scn), p, master_seed, None, grid)
        R = solve_lp(scn).value
        tr.meta.update(scale=n, R_star=R, time_unit="1/mu_min", reward_unit="R*")
        out[n] = normalized(tr, R, mu_min)
    return out


def normalized(tr: TraceSeries, R: float, mu_min: float) -> TraceSeries:
    return TraceSeries(
        tr.times * mu_min, tr.reward / R, tr.x, tr.y, tr.occupied, tr.xi, tr.eta, tr.thinned, tr.arrivals,
        tr.capacity, dict(tr.meta),
    )  # fmt: skip


# --------------------------------------------------------------------------
# pure-Python reference engine
# --------------------------------------------------------------------------


def policy_callable(sc: Scenario, policy: Policy):
    """Adapt a built-in policy to the reference engine's ``(state, i, u)`` signature."""
    if policy.kind == "greedy":
        return lambda st, i, u: greedy_decide(sc, st, i)
    if policy.kind == "thinning":
        return lambda st, i, u: thinning_decide(policy.alpha, sc, st, i, u)
    if policy.kind == "penalty":
        return lambda st, i, u: penalty_decide(policy.penalty, sc, st, i)
    if policy.kind == "network":
        return lambda st, i, u: network_penalty_decide(policy.penalty, sc, st, i)
    if policy.kind == "polytope":
        from .polytope import polytope_penalty_decide

        return lambda st, i, u: polytope_penalty_decide(policy.tracking, sc, st, i)
    raise ValueError(policy.kind)


def simulate_reference(sc: Scenario, decide_fn, streams: Streams, grid, t_max: float, y0=None) -> dict:
    """Slow heapq engine accepting any ``decide_fn(state, i, u) -> PolicyDecision``.

    Every acceptance is checked against capacity; a violation raises
    :class:`FeasibilityFault` instead of being corrected.
    """
    alloc, _ = sc.alloc_array()
    cap = sc.cap
    m, s = sc.m, sc.s
    state = SimState.empty(sc, np.zeros(m, np.int64))
    heap = []
    seq = 0
    for c, d in zip(streams.init_cls, streams.init_service):
        state.y[c] += 1
        heapq.heappush(heap, (float(d), seq, int(c), -1))
        seq += 1
    grid = np.asarray(grid, float)
    G = grid.size
    ox = np.zeros((G, m), np.int64)
    oy = np.zeros((G, m), np.int64)
    oocc = np.zeros((G, s))
    narr = np.zeros(m, np.int64)
    oarr = np.zeros((G, m), np.int64)
    gi = 0
    ai = 0
    N = streams.t.size

    def record():
        nonlocal gi
        ox[gi] = state.x.sum(axis=1)
        oy[gi] = state.y
        oocc[gi] = state.occupied(sc)
        oarr[gi] = narr
        gi += 1

    while True:
        ta = streams.t[ai] if ai < N else math.inf
        td = heap[0][0] if heap else math.inf
        tn = min(ta, td)
        while gi < G and grid[gi] < tn:
            record()
        if tn == math.inf or tn > t_max:
            break
        state.clock = tn
        if td <= ta:
            _, _, c, j = heapq.heappop(heap)
            if j < 0:
                state.y[c] -= 1
            else:
                state.x[c, j] -= 1
            continue
        c = int(streams.cls[ai])
        narr[c] += 1
        dec: PolicyDecision = decide_fn(state, c, float(streams.u[ai]))
        if dec.accepted:
            j = dec.allocation
            state.x[c, j] += 1
            occ = state.occupied(sc)
            lim = cap + CAP_TOL * np.maximum(1.0, cap)
            if np.any(occ > lim):
                raise FeasibilityFault(f"t={tn:.6g}: class {c} accepted on allocation {j} beyond capacity")
            heapq.heappush(heap, (ta + float(streams.service[ai]), seq, c, j))
        else:
            {RejectCause.PENALTY: state.xi, RejectCause.CAPACITY: state.eta, RejectCause.THINNED: state.thinned}[
                dec.cause
            ][c] += 1
            state.y[c] += 1
            heapq.heappush(heap, (ta + float(streams.service[ai]), seq, c, -1))
        seq += 1
        ai += 1
    while gi < G:
        record()
    return {"x": ox, "y": oy, "occupied": oocc, "arrivals": oarr, "state": state}
