"""Random Hopping Dynamics on the hypercube and its jump chain.

State indices follow :mod:`gremlab.environment`: bit ``k < N2`` is the k-th
second-level coordinate and bit ``N2 + k`` the k-th first-level coordinate.
All Boltzmann factors are handled in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import expit, logsumexp

from .environment import GremEnvironment, SpinState, hamiltonian_table

DEFAULT_SOLVER_CAP = 18
DEFAULT_STEP_BUDGET = 10 ** 9


class SolverError(RuntimeError):
    pass


# -- local quantities ------------------------------------------------------------

def log_q_odds(env: GremEnvironment) -> np.ndarray:
    """``log(q*/(1-q*))`` per first-level word, i.e. ``log(N1/N2) - beta |H1|``-type term."""
    pr = env.params
    return -(math.log(pr.N2 / pr.N1) + pr.beta * math.sqrt(pr.a * pr.N) * env.xi1)


def q_star(env: GremEnvironment, sigma1=None):
    """Probability that the jump chain moves at level 1 from ``sigma1``.

    ``sigma1`` may be an int word, an array of words or None (all words).
    """
    q = expit(log_q_odds(env))
    return q if sigma1 is None else q[sigma1]


def log_one_minus_q(env: GremEnvironment) -> np.ndarray:
    """``log(1 - q*)`` per first-level word, accurate when q* is tiny."""
    return -np.logaddexp(0.0, log_q_odds(env))


@dataclass(frozen=True)
class JumpRates:
    neighbors: np.ndarray   # (N,) neighbor indices, level-2 bits first
    log_rates: np.ndarray   # (N,) log of the transition rates
    log_total: float

    @property
    def rates(self) -> np.ndarray:
        return np.exp(self.log_rates)

    @property
    def total(self) -> float:
        return math.exp(self.log_total)


def jump_rates(env: GremEnvironment, sigma: SpinState | int) -> JumpRates:
    pr = env.params
    idx = sigma.index(pr.N2) if isinstance(sigma, SpinState) else int(sigma)
    H1, H2 = hamiltonian_table(env)
    h2 = H2[idx]
    h = H1[idx >> pr.N2] + h2
    logN = math.log(pr.N)
    lr = np.empty(pr.N)
    lr[:pr.N2] = pr.beta * h2 - logN
    lr[pr.N2:] = pr.beta * h - logN
    nb = idx ^ (1 << np.arange(pr.N, dtype=np.int64))
    tot = float(logsumexp(lr))
    if not math.isfinite(tot):
        raise FloatingPointError(f"total jump rate at state {idx} is not representable")
    return JumpRates(nb, lr, tot)


def log_total_rates(env: GremEnvironment) -> np.ndarray:
    """``log w_N(sigma)`` for every state."""
    pr = env.params
    H1, H2 = hamiltonian_table(env)
    H = np.repeat(H1, 1 << pr.N2) + H2
    return np.logaddexp(math.log(pr.N1) + pr.beta * H, math.log(pr.N2) + pr.beta * H2) - math.log(pr.N)


def log_gibbs(env: GremEnvironment) -> np.ndarray:
    """Unnormalised ``-beta H`` per state."""
    pr = env.params
    H1, H2 = hamiltonian_table(env)
    return -pr.beta * (np.repeat(H1, 1 << pr.N2) + H2)


def gibbs_measures(env: GremEnvironment) -> tuple[np.ndarray, np.ndarray]:
    """Normalised Gibbs measure ``G`` and the jump-chain invariant measure ``G*``."""
    pr = env.params
    lg = log_gibbs(env)
    G = np.exp(lg - logsumexp(lg))
    # G* is proportional to 1/q*(sigma1), constant on cylinders
    lgs = np.repeat(-np.log(q_star(env)), 1 << pr.N2)
    Gs = np.exp(lgs - logsumexp(lgs))
    return G, Gs


def jump_kernel(env: GremEnvironment) -> sp.csr_matrix:
    """Sparse transition matrix of the jump chain on all ``2^N`` states."""
    pr = env.params
    n = 1 << pr.N
    q = np.repeat(q_star(env), 1 << pr.N2)
    rows = np.repeat(np.arange(n, dtype=np.int64), pr.N)
    cols = (np.arange(n, dtype=np.int64)[:, None] ^ (1 << np.arange(pr.N, dtype=np.int64))[None, :]).ravel()
    vals = np.empty((n, pr.N))
    vals[:, :pr.N2] = ((1.0 - q) / pr.N2)[:, None]
    vals[:, pr.N2:] = (q / pr.N1)[:, None]
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


@dataclass
class BalanceReport:
    rhd_balance: float     # max relative asymmetry of G(s) w(s, s') over edges
    chain_balance: float   # same for G*(s) P(s, s')
    row_sum: float         # max |sum_s' P(s, s') - 1|
    edges: int


def balance_report(env: GremEnvironment) -> BalanceReport:
    """Check reversibility and stochasticity on every edge and row."""
    pr = env.params
    n = 1 << pr.N
    H1, H2 = hamiltonian_table(env)
    H = np.repeat(H1, 1 << pr.N2) + H2
    idx = np.arange(n, dtype=np.int64)
    lg = log_gibbs(env)
    lgs = np.repeat(-np.log(q_star(env)), 1 << pr.N2)
    P = jump_kernel(env)
    rhd = chain = 0.0
    for b in range(pr.N):
        nb = idx ^ (1 << b)
        level2 = b < pr.N2
        # log rate of the flip of bit b, from sigma and from its neighbour
        lr = pr.beta * (H2 if level2 else H) - math.log(pr.N)
        lr_back = lr[nb]
        lhs, rhs = lg + lr, lg[nb] + lr_back
        rhd = max(rhd, float(np.max(np.abs(np.expm1(lhs - rhs)))))
        p_fwd = np.asarray(P[idx, nb]).ravel()
        p_back = np.asarray(P[nb, idx]).ravel()
        chain = max(chain, float(np.max(np.abs(np.expm1(lgs + np.log(p_fwd) - lgs[nb] - np.log(p_back))))))
    rs = float(np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0)))
    return BalanceReport(rhd, chain, rs, n * pr.N // 2)


# -- simulation -----------------------------------------------------------------------

def flip_choice(env: GremEnvironment, states: np.ndarray, u_level: np.ndarray, u_bit: np.ndarray,
                q: np.ndarray | None = None) -> np.ndarray:
    """Vectorised jump-chain move driven by two uniforms per state."""
    pr = env.params
    if q is None:
        q = q_star(env)
    states = np.asarray(states, dtype=np.int64)
    lvl1 = u_level < q[states >> pr.N2]
    bit = np.where(lvl1,
                   pr.N2 + np.minimum((u_bit * pr.N1).astype(np.int64), pr.N1 - 1),
                   np.minimum((u_bit * pr.N2).astype(np.int64), pr.N2 - 1))
    return states ^ (np.int64(1) << bit)


def jump_chain_step(env: GremEnvironment, sigma: SpinState | int, rng: np.random.Generator):
    """One step of the jump chain; returns the same type as ``sigma``."""
    pr = env.params
    idx = sigma.index(pr.N2) if isinstance(sigma, SpinState) else int(sigma)
    u = rng.random(2)
    nxt = int(flip_choice(env, np.array([idx]), u[:1], u[1:])[0])
    return SpinState.from_index(nxt, pr.N2) if isinstance(sigma, SpinState) else nxt


@dataclass
class Trajectory:
    """Visited states with holding times; ``states[k]`` is held for ``holds[k]``."""

    states: np.ndarray
    holds: np.ndarray
    N2: int
    truncated: bool = False
    hit_index: int | None = None

    @property
    def jump_times(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.holds)[:-1]))

    @property
    def total_time(self) -> float:
        return float(self.holds.sum())

    def rescaled(self, c: float) -> "Trajectory":
        """Same path on the time scale ``t -> c t`` (e.g. ``c = c_2^N``)."""
        return Trajectory(self.states, self.holds * c, self.N2, self.truncated, self.hit_index)

    def occupation(self, n_states: int) -> np.ndarray:
        occ = np.bincount(self.states, weights=self.holds, minlength=n_states)
        return occ / occ.sum()

    def write(self, path) -> None:
        """Columnar export: step, time, w1-hex, w2-hex, holding."""
        mask = (1 << self.N2) - 1
        t = self.jump_times
        with open(path, "w") as fh:
            fh.write("step time w1 w2 holding\n")
            for k, (s, h) in enumerate(zip(self.states, self.holds)):
                fh.write(f"{k} {t[k]:.17g} {int(s) >> self.N2:x} {int(s) & mask:x} {h:.17g}\n")


def simulate_rhd(env: GremEnvironment, start: SpinState | int, rng: np.random.Generator, *,
                 horizon: float | None = None, hit_set=None, max_steps: int = DEFAULT_STEP_BUDGET,
                 chunk: int = 4096) -> Trajectory:
    """Continuous-time RHD from ``start`` until ``horizon`` or until ``hit_set`` is entered.

    Holding times are drawn by inversion, ``-log(1-U)/w``.  With a horizon the
    last holding time is cut at the horizon.
    """
    pr = env.params
    if horizon is None and hit_set is None:
        raise ValueError("need a time horizon or a hitting set")
    idx = start.index(pr.N2) if isinstance(start, SpinState) else int(start)
    q = q_star(env)
    lw = log_total_rates(env)
    target = None
    if hit_set is not None:
        target = np.zeros(1 << pr.N, dtype=bool)
        target[np.asarray(list(hit_set) if not isinstance(hit_set, np.ndarray) else hit_set, dtype=np.int64)] = True
    states, holds = [], []
    t, steps, cur = 0.0, 0, idx
    hit = None
    while True:
        if target is not None and target[cur]:
            hit = len(states)
            states.append(np.array([cur]))
            holds.append(np.array([0.0]))
            break
        n = min(chunk, max_steps - steps)
        if n <= 0:
            break
        u = rng.random((n, 3))
        path = np.empty(n, dtype=np.int64)
        path[0] = cur
        for k in range(1, n):
            path[k] = path[k - 1] ^ (1 << _bit(pr, q[path[k - 1] >> pr.N2], u[k - 1, 0], u[k - 1, 1]))
        h = -np.log1p(-u[:, 2]) * np.exp(-lw[path])
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("holding time overflow; total rate underflowed")
        stop = n
        if target is not None:
            hits = np.flatnonzero(target[path])
            if hits.size:
                stop = int(hits[0])
        if horizon is not None:
            cum = t + np.cumsum(h[:stop])
            over = np.flatnonzero(cum >= horizon)
            if over.size:
                k = int(over[0])
                h = h.copy()
                h[k] = horizon - (cum[k] - h[k])
                states.append(path[:k + 1])
                holds.append(h[:k + 1])
                steps += k + 1
                t = float(horizon)
                break
        states.append(path[:stop])
        holds.append(h[:stop])
        t += float(h[:stop].sum())
        steps += stop
        if stop < n:
            cur = int(path[stop])
            continue
        cur = int(path[-1] ^ (1 << _bit(pr, q[path[-1] >> pr.N2], u[-1, 0], u[-1, 1])))
    truncated = hit is None and (horizon is None or t < horizon) and steps >= max_steps
    st = np.concatenate(states) if states else np.array([idx])
    hd = np.concatenate(holds) if holds else np.array([0.0])
    return Trajectory(st, hd, pr.N2, truncated, None if hit is None else len(st) - 1)


def _bit(pr, q1: float, u_level: float, u_bit: float) -> int:
    if u_level < q1:
        return pr.N2 + min(int(u_bit * pr.N1), pr.N1 - 1)
    return min(int(u_bit * pr.N2), pr.N2 - 1)


def occupation_lockstep(env: GremEnvironment, n_chains: int, n_steps: int, rng: np.random.Generator,
                        burn_in: int = 0, start=None) -> np.ndarray:
    """Time-weighted occupation measure pooled over independent RHD chains.

    Chains start from ``start`` (default: uniform) and advance together; each
    chain contributes ``n_steps`` holding periods after ``burn_in`` jumps.
    """
    pr = env.params
    n = 1 << pr.N
    q = q_star(env)
    inv_w = np.exp(-log_total_rates(env))
    s = rng.integers(0, n, n_chains) if start is None else np.full(n_chains, int(start), dtype=np.int64)
    occ = np.zeros(n)
    for step in range(burn_in + n_steps):
        if step >= burn_in:
            hold = rng.standard_exponential(n_chains) * inv_w[s]
            occ += np.bincount(s, weights=hold, minlength=n)
        u = rng.random((2, n_chains))
        s = flip_choice(env, s, u[0], u[1], q)
    return occ / occ.sum()


# -- hitting probabilities -------------------------------------------------------------------

@dataclass(frozen=True)
class HittingQuery:
    target: np.ndarray
    avoid: np.ndarray
    start: int | None = None

    @classmethod
    def make(cls, target, avoid=(), start=None) -> "HittingQuery":
        A = np.unique(np.asarray(list(target), dtype=np.int64))
        B = np.unique(np.asarray(list(avoid), dtype=np.int64))
        if A.size == 0:
            raise ValueError("empty target set")
        if np.intersect1d(A, B).size:
            raise ValueError("target and avoid sets intersect")
        st = None if start is None else int(start)
        return cls(A, B, st)


def _fwht_last(x: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along the last axis (length a power of 2)."""
    x = np.array(x, dtype=float, copy=True)
    n = x.shape[-1]
    lead = x.shape[:-1]
    h = 1
    while h < n:
        y = x.reshape(*lead, n // (2 * h), 2, h)
        a = y[..., 0, :].copy()
        y[..., 0, :] += y[..., 1, :]
        y[..., 1, :] = a - y[..., 1, :]
        h *= 2
    return x


class _CylinderPreconditioner:
    """Block-Jacobi preconditioner for ``D (I - P_II)``, one block per cylinder.

    For a cylinder fully inside the interior the block is
    ``g_c (I - (1 - q_c) P_2)`` with ``P_2`` the level-2 simple walk, diagonal in
    the Walsh basis with eigenvalues ``1 - 2|k|/N2``.  Cylinders touching the
    boundary are factorised directly when small; larger ones reuse the
    full-cylinder inverse restricted to their interior states, which is still
    symmetric positive definite.
    """

    SPLU_MAX = 4096

    def __init__(self, env: GremEnvironment, interior: np.ndarray, g: np.ndarray, q: np.ndarray):
        pr = env.params
        self.N1, self.N2 = pr.N1, pr.N2
        m2 = 1 << pr.N2
        inter = interior.reshape(1 << pr.N1, m2)
        full = inter.all(axis=1)
        touched = ~full & inter.any(axis=1)
        if m2 > self.SPLU_MAX:
            full, touched = inter.any(axis=1), np.zeros_like(full)
        self.full = np.flatnonzero(full)
        self.partial = np.flatnonzero(touched)
        weight = np.bitwise_count(np.arange(m2, dtype=np.uint64)).astype(float)
        ev = 1.0 - (1.0 - q[:, None]) * (1.0 - 2.0 * weight[None, :] / pr.N2)
        # block inverse eigenvalues for the full cylinders
        self.inv_eig = 1.0 / (g[self.full, None] * np.maximum(ev[self.full], 1e-300) * m2)
        # positions of interior states, used to map between the solve vector and cylinders
        pos = np.full(1 << pr.N, -1, dtype=np.int64)
        pos[interior] = np.arange(int(interior.sum()))
        self.pos = pos.reshape(1 << pr.N1, m2)
        self.lus = []
        P2 = _level2_walk(pr.N2)
        for c in self.partial:
            keep = inter[c]
            blk = sp.identity(m2, format="csr") - (1.0 - q[c]) * P2
            blk = (g[c] * blk[keep][:, keep]).tocsc()
            self.lus.append((self.pos[c, keep], splu(blk)))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        z = np.empty_like(r)
        if self.full.size:
            idx = self.pos[self.full]
            inside = idx >= 0
            v = np.where(inside, r[np.where(inside, idx, 0)], 0.0)
            v = _fwht_last(_fwht_last(v) * self.inv_eig)
            z[idx[inside]] = v[inside]
        for where, lu in self.lus:
            z[where] = lu.solve(r[where])
        return z


def _level2_walk(N2: int) -> sp.csr_matrix:
    m = 1 << N2
    rows = np.repeat(np.arange(m), N2)
    cols = (np.arange(m)[:, None] ^ (1 << np.arange(N2))[None, :]).ravel()
    return sp.csr_matrix((np.full(rows.size, 1.0 / N2), (rows, cols)), shape=(m, m))


@dataclass
class HittingSolution:
    h: np.ndarray        # h(sigma) for every state
    residual: float
    iterations: int
    method: str


def hitting_vector(env: GremEnvironment, target, avoid=(), *, tol: float = 1e-10,
                   cap: int = DEFAULT_SOLVER_CAP, maxiter: int = 5000,
                   dense_below: int = 12) -> HittingSolution:
    """``P_sigma(tau_A < tau_B)`` for the jump chain, for every starting state.

    Solves the harmonic system on the interior by preconditioned conjugate
    gradients on the symmetrised matrix ``diag(G*) (I - P_II)``.  States in
    ``A`` get value 1 and states in ``B`` value 0.  The reported residual is
    the max-norm of ``h - P h`` on the interior.
    """
    pr = env.params
    if pr.N > cap:
        raise SolverError(f"N={pr.N} exceeds the exact-solver cap {cap}")
    q = HittingQuery.make(target, avoid)
    n = 1 << pr.N
    bnd = np.zeros(n, dtype=bool)
    bnd[q.target] = True
    bnd[q.avoid] = True
    interior = ~bnd
    P = jump_kernel(env)
    h = np.zeros(n)
    h[q.target] = 1.0
    if not interior.any():
        return HittingSolution(h, 0.0, 0, "trivial")
    ii = np.flatnonzero(interior)
    P_II = P[ii][:, ii]
    b = np.asarray(P[ii][:, q.target].sum(axis=1)).ravel()
    qs = q_star(env)
    if pr.N <= dense_below:
        A = np.eye(ii.size) - P_II.toarray()
        x = np.linalg.solve(A, b)
        method, its = "dense", 0
    else:
        # G* up to a constant; scale so that the smallest weight is 1
        logg = -np.log(qs)
        g = np.exp(logg - logg.min())
        d = np.repeat(g, 1 << pr.N2)[ii]
        A = (sp.diags(d) @ (sp.identity(ii.size, format="csr") - P_II)).tocsr()
        A = 0.5 * (A + A.T)
        rhs = d * b
        M = _CylinderPreconditioner(env, interior, g, qs)
        x, its = _pcg(A, rhs, M, tol=tol * 1e-2, maxiter=maxiter, scale=d)
        method = "pcg-cylinder"
    h[ii] = x
    res = float(np.max(np.abs(x - P_II @ x - b)))
    if not res < tol:
        raise SolverError(f"hitting solve did not converge: residual {res:.3e} after {its} iterations ({method})")
    return HittingSolution(h, res, its, method)


def _pcg(A, b, M, tol, maxiter, scale):
    """Preconditioned CG stopping on the unsymmetrised residual ``|r / scale|_inf``."""
    x = M(b)
    r = b - A @ x
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        if np.max(np.abs(r / scale)) < tol:
            return x, it - 1
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if it % 50 == 0:
            r = b - A @ x
        z = M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter


def exact_hitting_probability(env: GremEnvironment, query: HittingQuery, **kw) -> float:
    if query.start is None:
        raise ValueError("query has no start state")
    return float(hitting_vector(env, query.target, query.avoid, **kw).h[query.start])


@dataclass
class MCHitting:
    estimate: float
    stderr: float
    replicas: int
    censored: int
    hits: np.ndarray = field(repr=False)


def mc_hitting_probability(env: GremEnvironment, query: HittingQuery, replicas: int,
                           rng: np.random.Generator, max_steps: int = DEFAULT_STEP_BUDGET) -> MCHitting:
    """Jump-chain Monte Carlo of ``P_start(tau_A < tau_B)``.

    Replicas that neither hit ``A`` nor ``B`` within ``max_steps`` are censored
    and excluded from the estimate.
    """
    if replicas < 1:
        raise ValueError("replicas must be positive")
    if query.start is None:
        raise ValueError("query has no start state")
    pr = env.params
    n = 1 << pr.N
    code = np.zeros(n, dtype=np.int8)
    code[query.avoid] = 2
    code[query.target] = 1
    qs = q_star(env)
    s = np.full(replicas, query.start, dtype=np.int64)
    out = code[s].copy()
    active = np.flatnonzero(out == 0)
    steps = 0
    while active.size and steps < max_steps:
        u = rng.random((2, active.size))
        s[active] = flip_choice(env, s[active], u[0], u[1], qs)
        out[active] = code[s[active]]
        active = active[out[active] == 0]
        steps += 1
    done = out != 0
    hits = out == 1
    m = int(done.sum())
    if m == 0:
        return MCHitting(float("nan"), float("nan"), replicas, replicas, hits)
    est = float(hits.sum()) / m
    se = math.sqrt(max(est * (1 - est), 0.0) / m)
    return MCHitting(est, se, replicas, replicas - m, hits)


# -- lumping ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class Lumping:
    labels: np.ndarray   # (n,) class label of every coordinate
    sizes: np.ndarray    # (2^|K|,) class sizes, zeros allowed

    @property
    def empty_classes(self) -> np.ndarray:
        return np.flatnonzero(self.sizes == 0)

    def magnetization(self, word: int) -> np.ndarray:
        """Per-class average of the spins ``2 b_j - 1``; NaN on empty classes."""
        n = self.labels.size
        spins = 2.0 * ((int(word) >> np.arange(n)) & 1) - 1.0
        tot = np.bincount(self.labels, weights=spins, minlength=self.sizes.size)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.sizes > 0, tot / np.maximum(self.sizes, 1), np.nan)


def lump_partition(K, n: int) -> Lumping:
    """Partition coordinates ``0..n-1`` by the column pattern ``(eta_j)_{eta in K}``.

    Coordinate j gets the label ``sum_r bit_j(K[r]) 2^r``.
    """
    K = [int(w) for w in K]
    if not K:
        raise ValueError("K must be non-empty")
    j = np.arange(n)
    labels = np.zeros(n, dtype=np.int64)
    for r, w in enumerate(K):
        labels |= ((w >> j) & 1) << r
    return Lumping(labels, np.bincount(labels, minlength=1 << len(K)))


def distance_chain_projection(walk, target: int) -> np.ndarray:
    """Hamming distance of each visited word to ``target``."""
    w = np.asarray(walk, dtype=np.uint64)
    return np.bitwise_count(w ^ np.uint64(target)).astype(np.int64)


def simple_walk(n: int, start: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Simple random walk on ``{0,1}^n`` as a word sequence of length ``steps + 1``."""
    bits = rng.integers(0, n, steps)
    flips = np.left_shift(np.int64(1), bits.astype(np.int64))
    out = np.empty(steps + 1, dtype=np.int64)
    out[0] = start
    out[1:] = np.bitwise_xor.accumulate(np.concatenate(([start], flips)))[1:]
    return out


__all__ = [name for name in dir() if not name.startswith("_")]
