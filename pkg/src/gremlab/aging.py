"""Two-time correlation on the limit processes, small-time clock scaling, and
the intermediate-temperature law of large numbers.

Replicas are annealed: each one draws a fresh truncated cascade.  Points
beyond a truncation are replaced by their expected contribution, a linear
drift of the clock, when ``compensate_tail`` is set.  A replica is reduced to
the atoms of its clocks in t-time, stored as ``(Gamma(s-), Gamma(s))`` pairs.
The range of a pure-jump clock misses ``(tw, tw + t)`` iff one atom straddles
the whole window.

Rows of the second level are materialised lazily.  The arrival time ``T`` of
the ``K2``-th point of a row is drawn first (it fixes the tail drift); when a
row is needed its earlier arrivals are sorted uniforms on ``[0, T]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import optimize
from scipy.special import gamma as gamma_fn, gammaincc

from .analytics import aging_prediction
from .environment import (ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE, ParameterError, alpha_n,
                          beta_intermediate, critical_betas, derive_params, log_c, ppp_decreasing,
                          ppp_tail_mean, sample_environment)
from .rng import chunk_map, derive_stream

CHUNK = 256          # replicas per derived stream
MIN_REPLICAS = 100
TAIL_FRACTION = 0.05


# -- model and query types ---------------------------------------------------------------------

@dataclass(frozen=True)
class AgingModel:
    """Truncated limit model of one regime.

    ``K1`` truncates the first level (or the ``f3`` points below fine tuning),
    ``K2`` the second level.  ``psi`` is the fine-tuning ratio and only enters
    at fine tuning.
    """

    regime: str
    alpha1: float
    alpha2: float
    p: float
    psi: float = 1.0
    K1: int = 64
    K2: int = 2048
    compensate_tail: bool = True

    def __post_init__(self):
        if self.regime not in (ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE):
            raise ValueError(f"unknown regime {self.regime!r}")
        if not 0 < self.alpha1 < self.alpha2 < 1:
            raise ValueError("need 0 < alpha1 < alpha2 < 1")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.K1 < 1 or self.K2 < 1 or not self.psi > 0:
            raise ValueError("truncations and psi must be positive")

    def prediction(self, theta: float) -> float:
        return aging_prediction(self.regime, theta, self.alpha1, self.alpha2, self.p)

    @property
    def weights(self) -> tuple[float, float, float]:
        """Weights of (N1 and N2, N1 only, N2 only) in the two-time function."""
        if self.regime == INTERMEDIATE:
            return (1.0, 1.0, 0.0)
        return (1.0, self.p, 1.0 - self.p)


@dataclass(frozen=True)
class AgingQuery:
    tw: float
    theta: float
    replicas: int
    regime: str
    K1: int = 64
    K2: int = 2048

    def __post_init__(self):
        if not (self.tw > 0 and self.theta > 0):
            raise ValueError("tw and theta must be positive")
        if self.replicas < MIN_REPLICAS:
            raise ValueError(f"need at least {MIN_REPLICAS} replicas, got {self.replicas}")

    @property
    def t(self) -> float:
        return self.theta * self.tw


@dataclass
class PiEstimate:
    value: float
    stderr: float
    components: tuple[float, float, float]   # P(N1 N2), P(N1 N2^c), P(N1^c N2)
    replicas: int
    bias: float = 0.0                        # expected missed tail atoms in the window
    flagged: bool = False

    def __post_init__(self):
        self.value = float(min(max(self.value, 0.0), 1.0))


# -- point processes ------------------------------------------------------------------------

def tail_hit_rate(weights, y_last, alpha: float, a: float) -> float:
    """Rate of untruncated atoms ``x E >= a`` (``E`` standard exponential).

    Sums ``w * int_0^y exp(-a/x) alpha x^(-1-alpha) dx`` over rows with weight
    ``w`` and last kept point ``y``.
    """
    y = np.asarray(y_last, dtype=float)
    val = alpha * a ** (-alpha) * gamma_fn(alpha) * gammaincc(alpha, a / y)
    return float(np.sum(np.asarray(weights, dtype=float) * val))


def f3_intensity(alpha1: float, alpha2: float, p: float) -> float:
    """Constant ``c``: the points ``gamma1(x) S_x / (1-p)`` form a PPP of intensity ``c alpha1 u^(-1-alpha1)``.

    ``S_x`` is the total of a row, a positive ``alpha2``-stable variable with
    Laplace transform ``exp(-Gamma(1-alpha2) lam^alpha2)``, and ``c = E[(S/(1-p))^alpha1]``.
    """
    q = alpha1
    moment = gamma_fn(1.0 - alpha2) ** (q / alpha2) * gamma_fn(1.0 - q / alpha2) / gamma_fn(1.0 - q)
    return (1.0 - p) ** (-q) * moment


class _LazyRows:
    """Second-level PPP rows drawn on first use."""

    def __init__(self, alpha, n_rows, K, rng):
        self.alpha, self.K, self.rng = alpha, K, rng
        self.T = rng.gamma(K, size=n_rows)
        self.last = self.T ** (-1.0 / alpha)
        self.table = np.empty((n_rows, K))
        self.ready = np.zeros(n_rows, dtype=bool)

    def _fill(self, i):
        arr = np.empty(self.K)
        arr[:-1] = np.sort(self.rng.random(self.K - 1)) * self.T[i]
        arr[-1] = self.T[i]
        self.table[i] = arr ** (-1.0 / self.alpha)
        self.ready[i] = True

    def row(self, i):
        if not self.ready[i]:
            self._fill(i)
        return self.table[i]

    def gather(self, rows, cols):
        for i in np.unique(rows[~self.ready[rows]]):
            self._fill(i)
        return self.table[rows, cols]


def _events(rate, s0, s1, rng):
    n = rng.poisson(rate * (s1 - s0))
    return np.sort(s0 + (s1 - s0) * rng.random(n))


# -- replicas ------------------------------------------------------------------------------------

@dataclass
class ReplicaClocks:
    """Clock atoms of one replica in t-time.

    ``drive1`` / ``drive2`` hold the driving time (s, or r for the inner clock at
    fine tuning) at each atom; ``rate1`` / ``rate2`` map a window length to the rate
    of untruncated atoms at least that long per unit driving time.
    """

    left1: np.ndarray
    right1: np.ndarray
    drive1: np.ndarray
    left2: np.ndarray | None = None
    right2: np.ndarray | None = None
    drive2: np.ndarray | None = None
    rate1: object = None
    rate2: object = None
    shared: bool = False   # level 1 and level 2 are the same clock


def _straddle(left, right, tw, t):
    k = np.searchsorted(right, tw, side="left")
    if k >= right.size:
        return False, right.size
    return bool(left[k] <= tw and right[k] >= tw + t), k


def _cross_index(right, level):
    return min(int(np.searchsorted(right, level, side="left")), right.size - 1)


def _replica_above(m: AgingModel, rng, t_hi: float) -> ReplicaClocks:
    scale = 1.0 - m.p
    g1 = ppp_decreasing(m.alpha1, m.K1, rng)
    rows = _LazyRows(m.alpha2, m.K1, m.K2, rng)
    drift = 0.0
    if m.compensate_tail:
        drift = float(np.sum(g1 * ppp_tail_mean(m.alpha2, rows.last))) / scale
    rate = m.K2 * float(g1.sum())
    cum = np.cumsum(g1) / g1.sum()
    s_parts, m_parts = [], []
    t = 0.0
    s0, s1 = 0.0, 16.0 / rate
    while True:
        s = _events(rate, s0, s1, rng)
        r = np.minimum(np.searchsorted(cum, rng.random(s.size), side="right"), m.K1 - 1)
        c = rng.integers(0, m.K2, s.size)
        mass = rows.gather(r, c) / scale * rng.standard_exponential(s.size)
        s_parts.append(s)
        m_parts.append(mass)
        t += float(mass.sum()) + drift * (s1 - s0)
        if t >= t_hi:
            break
        s0, s1 = s1, 2.0 * s1
    s = np.concatenate(s_parts)
    mass = np.concatenate(m_parts)
    right = np.cumsum(mass) + drift * s
    left = right - mass
    beyond = float(ppp_tail_mean(m.alpha1, g1[-1]))

    def rate1(t):
        a = t * scale
        return (tail_hit_rate(g1, rows.last, m.alpha2, a)
                + beyond * m.alpha2 * a ** (-m.alpha2) * gamma_fn(m.alpha2))

    return ReplicaClocks(left, right, s, rate1=rate1, shared=True)


def _replica_k1(m: AgingModel, rng, t_hi: float, coef: float) -> ReplicaClocks:
    """K process with unit weights and waiting values ``coef * PPP(alpha1)``."""
    P = ppp_decreasing(m.alpha1, m.K1, rng)
    f = coef * P
    drift = coef * float(ppp_tail_mean(m.alpha1, P[-1])) if m.compensate_tail else 0.0
    s_parts, m_parts = [], []
    t = 0.0
    s0, s1 = 0.0, 16.0 / m.K1
    while True:
        s = _events(float(m.K1), s0, s1, rng)
        mass = f[rng.integers(0, m.K1, s.size)] * rng.standard_exponential(s.size)
        s_parts.append(s)
        m_parts.append(mass)
        t += float(mass.sum()) + drift * (s1 - s0)
        if t >= t_hi:
            break
        s0, s1 = s1, 2.0 * s1
    s = np.concatenate(s_parts)
    mass = np.concatenate(m_parts)
    right = np.cumsum(mass) + drift * s
    left = right - mass
    return ReplicaClocks(left, right, s, rate1=lambda t: tail_hit_rate(1.0, P[-1], m.alpha1, t / coef))


def _replica_at(m: AgingModel, rng, t_hi: float) -> ReplicaClocks:
    scale = 1.0 - m.p
    g1 = ppp_decreasing(m.alpha1, m.K1, rng)
    rows = _LazyRows(m.alpha2, m.K1, m.K2, rng)
    d2 = ppp_tail_mean(m.alpha2, rows.last) / scale if m.compensate_tail else np.zeros(m.K1)
    l1, r1, s1_at = [], [], []
    l2, r2, rr2 = [], [], []
    s, r, t = 0.0, 0.0, 0.0
    while t < t_hi:
        s += rng.standard_exponential() / m.K1
        x1 = int(rng.integers(0, m.K1))
        L = m.psi * g1[x1] * rng.standard_exponential()
        t0, done, chunk = t, 0.0, 16.0 / m.K2
        row = rows.row(x1)
        while done < L and t < t_hi:
            dr = min(chunk, L - done)
            n = rng.poisson(m.K2 * dr)
            pos = np.sort(rng.random(n)) * dr
            mass = row[rng.integers(0, m.K2, n)] / scale * rng.standard_exponential(n)
            right = t + np.cumsum(mass) + d2[x1] * pos
            l2.append(right - mass)
            r2.append(right)
            rr2.append(r + done + pos)
            t += float(mass.sum()) + d2[x1] * dr
            done += dr
            chunk *= 2.0
        r += done
        if t > t0:
            l1.append(t0)
            r1.append(t)
            s1_at.append(s)
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
    # an untruncated first-level visit matters once its r-length lets the inner
    # clock cover the window: typical r for a jump of size t is (t scale)^alpha2 / Phi(1)
    phi1 = gamma_fn(1.0 - m.alpha2) * gamma_fn(1.0 + m.alpha2)
    y2 = float(rows.last.max())

    def rate1(t):
        rho = (t * scale) ** m.alpha2 / phi1
        return tail_hit_rate(1.0, g1[-1], m.alpha1, rho / m.psi)

    def rate2(t):
        return tail_hit_rate(1.0, y2, m.alpha2, t * scale)

    return ReplicaClocks(np.array(l1), np.array(r1), np.array(s1_at), cat(l2), cat(r2), cat(rr2),
                         rate1=rate1, rate2=rate2)


def sample_replica(model: AgingModel, rng: np.random.Generator, t_hi: float) -> ReplicaClocks:
    """Simulate one annealed replica until its outer clock exceeds ``t_hi``."""
    if model.regime == ABOVE_FT:
        return _replica_above(model, rng, t_hi)
    if model.regime == AT_FT:
        return _replica_at(model, rng, t_hi)
    if model.regime == BELOW_FT:
        coef = f3_intensity(model.alpha1, model.alpha2, model.p) ** (1.0 / model.alpha1)
        return _replica_k1(model, rng, t_hi, coef)
    return _replica_k1(model, rng, t_hi, 1.0 / model.p)


def replica_events(model: AgingModel, rc: ReplicaClocks, tw: float, t: float):
    """``(N1, N2, bias)`` for one replica and window ``(tw, tw + t)``."""
    n1, k1 = _straddle(rc.left1, rc.right1, tw, t)
    bias = 0.0
    if rc.shared:
        n2 = n1
    elif rc.left2 is None:
        n2 = False
    else:
        n2, _ = _straddle(rc.left2, rc.right2, tw, t)
    if rc.drive2 is None:
        if rc.right1.size:
            bias = rc.rate1(t) * rc.drive1[_cross_index(rc.right1, tw + t)]
    else:
        if rc.right2.size:
            bias += rc.rate2(t) * rc.drive2[_cross_index(rc.right2, tw + t)]
        if rc.right1.size:
            bias += rc.rate1(t) * rc.drive1[_cross_index(rc.right1, tw + t)]
    return n1, n2, bias


@dataclass
class _CellSums:
    both: int = 0
    only1: int = 0
    only2: int = 0
    v: float = 0.0
    v2: float = 0.0
    bias: float = 0.0
    n: int = 0

    def add(self, other: "_CellSums") -> None:
        for name in ("both", "only1", "only2", "v", "v2", "bias", "n"):
            setattr(self, name, getattr(self, name) + getattr(other, name))


def _chunk(job, model: AgingModel, cells, seed: int):
    index, count = job
    rng = derive_stream(seed, f"aging.{model.regime}", index)
    t_hi = max(tw * (1.0 + th) for tw, th in cells)
    w = model.weights
    sums = [_CellSums() for _ in cells]
    for _ in range(count):
        rc = sample_replica(model, rng, t_hi)
        for cs, (tw, th) in zip(sums, cells):
            n1, n2, b = replica_events(model, rc, tw, th * tw)
            val = w[0] * (n1 and n2) + w[1] * (n1 and not n2) + w[2] * (n2 and not n1)
            cs.both += n1 and n2
            cs.only1 += n1 and not n2
            cs.only2 += n2 and not n1
            cs.v += val
            cs.v2 += val * val
            cs.bias += b
            cs.n += 1
    return sums


def _jobs(replicas: int):
    return [(i, min(CHUNK, replicas - i * CHUNK)) for i in range(-(-replicas // CHUNK))]


def _finish(cs: _CellSums) -> PiEstimate:
    n = cs.n
    mean = cs.v / n
    var = max(cs.v2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    stderr = math.sqrt(var / n)
    bias = cs.bias / n
    comps = (cs.both / n, cs.only1 / n, cs.only2 / n)
    return PiEstimate(mean, stderr, comps, n, bias, flagged=bias > stderr)


def estimate_pi_cells(model: AgingModel, cells, replicas: int, seed: int, workers: int = 1) -> list[PiEstimate]:
    """Two-time function for several ``(tw, theta)`` cells on shared replicas.

    Replicas are processed in chunks of ``CHUNK`` with one derived stream each,
    so results do not depend on ``workers``.
    """
    if replicas < MIN_REPLICAS:
        raise ValueError(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
    cells = [(float(tw), float(th)) for tw, th in cells]
    parts = chunk_map(partial(_chunk, model=model, cells=cells, seed=seed), _jobs(replicas), workers)
    total = [_CellSums() for _ in cells]
    for part in parts:
        for acc, cs in zip(total, part):
            acc.add(cs)
    return [_finish(cs) for cs in total]


def estimate_pi(model: AgingModel, query: AgingQuery, seed: int, workers: int = 1) -> PiEstimate:
    if query.regime != model.regime:
        raise ValueError(f"query regime {query.regime} does not match model regime {model.regime}")
    return estimate_pi_cells(model, [(query.tw, query.theta)], query.replicas, seed, workers)[0]


@dataclass
class AgingRow:
    regime: str
    tw: float
    theta: float
    pi_hat: float
    stderr: float
    prediction: float
    gap: float
    bias: float
    flagged: bool


@dataclass
class AgingCurve:
    rows: list
    mean_gaps: list          # theta-averaged gap per tw, in the given tw order
    gaps_shrink: bool

    def as_records(self) -> list[dict]:
        return [r.__dict__.copy() for r in self.rows]


def aging_curve(model: AgingModel, thetas, tws, replicas: int, seed: int, workers: int = 1) -> AgingCurve:
    """Estimated two-time function against its limit on a ``tw x theta`` grid.

    ``tws`` must be decreasing.  The gaps count as shrinking when the
    theta-averaged gap at each ``tw`` does not exceed the previous one by more
    than two combined standard errors; once the model has converged the gaps sit
    at the noise floor and a strict decrease is not observable.
    """
    tws = [float(x) for x in tws]
    if any(b >= a for a, b in zip(tws, tws[1:])):
        raise ValueError("tw sequence must be strictly decreasing")
    cells = [(tw, th) for tw in tws for th in thetas]
    est = estimate_pi_cells(model, cells, replicas, seed, workers)
    rows = []
    for (tw, th), e in zip(cells, est):
        pred = model.prediction(th)
        rows.append(AgingRow(model.regime, tw, th, e.value, e.stderr, pred, abs(e.value - pred), e.bias, e.flagged))
    k = len(thetas)
    mean_gaps, mean_err = [], []
    for i in range(len(tws)):
        block = rows[i * k:(i + 1) * k]
        mean_gaps.append(float(np.mean([r.gap for r in block])))
        mean_err.append(float(np.sqrt(np.sum([r.stderr ** 2 for r in block])) / k))
    shrink = all(
        b <= a + 2.0 * math.hypot(ea, eb)
        for a, b, ea, eb in zip(mean_gaps, mean_gaps[1:], mean_err, mean_err[1:]))
    return AgingCurve(rows, mean_gaps, bool(shrink))


# -- tail-index fitting ----------------------------------------------------------------------------

def kanter_stable(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Positive ``alpha``-stable samples with Laplace transform ``exp(-lam^alpha)``."""
    u = rng.uniform(0.0, math.pi, n)
    e = rng.standard_exponential(n)
    return (np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
            * (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha))


@dataclass
class TailFit:
    index: float
    k: int
    method: str
    fraction: float
    degenerate: bool = False


def _hill(top_log_excess):
    return 1.0 / float(np.mean(top_log_excess))


def tail_index(x, frac: float = TAIL_FRACTION, method: str = "hill2") -> TailFit:
    """Tail index from the top ``frac`` order statistics.

    ``"hill"`` is the Hill estimator.  ``"hill2"`` fits by maximum likelihood the
    exceedance law ``P(X > u y) proportional to y^-a (1 + e y^-a)`` on ``y >= 1``,
    the first correction of a positive stable tail, which removes most of the
    Hill bias at moderate ``frac``.
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    k = int(frac * x.size)
    if k < 10 or x.size < 2:
        return TailFit(float("nan"), k, method, frac, degenerate=True)
    xs = np.sort(x)[::-1]
    u = xs[k]
    if not u > 0:
        return TailFit(float("nan"), k, method, frac, degenerate=True)
    ly = np.log(xs[:k]) - math.log(u)
    if not np.any(ly > 0):
        return TailFit(float("nan"), k, method, frac, degenerate=True)
    a0 = _hill(ly)
    if method == "hill":
        return TailFit(a0, k, method, frac)
    if method != "hill2":
        raise ValueError(f"unknown method {method!r}")

    def nll(par):
        a, e = par
        if a <= 0 or 1.0 + e <= 0:
            return 1e300
        z = np.exp(-a * ly)
        dens = 1.0 + 2.0 * e * z
        if np.any(dens <= 0):
            return 1e300
        return -(k * math.log(a) - (a + 1.0) * ly.sum() + np.log(dens).sum() - k * math.log1p(e))

    res = optimize.minimize(nll, [a0, 0.0], method="Nelder-Mead",
                            options=dict(xatol=1e-8, fatol=1e-10, maxiter=4000))
    a = float(res.x[0])
    return TailFit(a, k, method, frac, degenerate=not (res.success and a > 0))


def synthetic_control(alpha: float, n: int, seed: int, frac: float = TAIL_FRACTION,
                      method: str = "hill2") -> TailFit:
    """Tail fit on an exact stable sample: calibrates :func:`tail_index`."""
    return tail_index(kanter_stable(alpha, n, derive_stream(seed, "aging.synthetic")), frac, method)


# -- small-time clock samples ------------------------------------------------------------------

def _segment_cumsum(values, starts):
    """Cumulative sums restarted wherever ``starts`` is set."""
    cs = np.cumsum(values)
    idx = np.flatnonzero(starts)
    base = cs[idx] - values[idx]
    return cs - base[np.cumsum(starts) - 1]


def _annealed_row_clock(n_rep, rows_weight, K2, alpha, scale, s, compensate, rng):
    """Clock at driving time ``s`` of a weighted K process with annealed rows.

    Row ``i`` carries weight ``rows_weight[i]``; each of its ``K2`` states fires at
    rate equal to the weight and leaves an atom ``gamma2 E / scale``.  Only the
    ranks that fire are materialised, through the Gamma increments of the row's
    arrival times.
    """
    w = np.asarray(rows_weight, dtype=float)
    K1 = w.size
    counts = rng.poisson(K2 * w.sum() * s, n_rep)
    rep = np.repeat(np.arange(n_rep), counts)
    cum = np.cumsum(w) / w.sum()
    row = np.minimum(np.searchsorted(cum, rng.random(rep.size), side="right"), K1 - 1)
    col = rng.integers(0, K2, rep.size)
    seg_key = rep.astype(np.int64) * K1 + row
    order = np.lexsort((col, seg_key))
    seg_key, col, rep = seg_key[order], col[order], rep[order]
    new_seg = np.ones(seg_key.size, dtype=bool)
    new_seg[1:] = seg_key[1:] != seg_key[:-1]
    new_rank = new_seg.copy()
    new_rank[1:] |= col[1:] != col[:-1]
    # distinct (segment, rank) pairs; arrival time at rank col+1
    u_key, u_col, u_seg_start = seg_key[new_rank], col[new_rank], new_seg[new_rank]
    prev = np.empty_like(u_col)
    prev[0] = -1
    prev[1:] = u_col[:-1]
    prev[u_seg_start] = -1
    arrivals = _segment_cumsum(rng.gamma((u_col - prev).astype(float)), u_seg_start)
    values = arrivals ** (-1.0 / alpha)
    which = np.cumsum(new_rank) - 1
    atoms = values[which] / scale * rng.standard_exponential(rep.size)
    total = np.bincount(rep, weights=atoms, minlength=n_rep)
    if compensate:
        T = rng.gamma(K2, size=(n_rep, K1))
        last_of_seg = np.flatnonzero(np.r_[u_seg_start[1:], True])
        keys = u_key[last_of_seg]
        extra = rng.gamma((K2 - 1 - u_col[last_of_seg]).astype(float))
        extra[K2 - 1 - u_col[last_of_seg] == 0] = 0.0
        T[keys // K1, keys % K1] = arrivals[last_of_seg] + extra
        drift = (ppp_tail_mean(alpha, T ** (-1.0 / alpha)) * w).sum(axis=1) / scale
        total += drift * s
    return total


def _gamma1_at(m: AgingModel, s_stop: float, rng) -> float:
    """Outer clock at fine tuning, ``Gamma'`` composed with the first-level clock, at ``s_stop``."""
    scale = 1.0 - m.p
    g1 = ppp_decreasing(m.alpha1, m.K1, rng)
    rows = _LazyRows(m.alpha2, m.K1, m.K2, rng)
    d2 = ppp_tail_mean(m.alpha2, rows.last) / scale if m.compensate_tail else np.zeros(m.K1)
    t = 0.0
    for x1 in rng.integers(0, m.K1, rng.poisson(m.K1 * s_stop)):
        L = m.psi * g1[x1] * rng.standard_exponential()
        row = rows.row(x1)
        if L > 1e12:
            # every state is visited about L times: the law of large numbers is exact to 1e-6
            t += L * float(row.sum()) / scale
        elif m.K2 * L <= 256:
            n = rng.poisson(m.K2 * L)
            t += float(np.sum(row[rng.integers(0, m.K2, n)] * rng.standard_exponential(n))) / scale
        else:
            hits = rng.poisson(L, m.K2)
            t += float(np.sum(row * rng.gamma(hits.astype(float)))) / scale
        t += d2[x1] * L
    return t


CLOCKS = ("gamma_prime", "gamma1", "weighted")


@dataclass
class ScalingRow:
    clock: str
    epsilon: float
    r: float
    quantiles: tuple
    index: float
    target: float
    k: int
    degenerate: bool


QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9, 0.99)


def clock_samples(model: AgingModel, clock: str, epsilon: float, r: float, replicas: int, seed: int,
                  gamma1=None) -> np.ndarray:
    """Samples of ``epsilon^-1 Gamma(epsilon^gamma r)`` for one clock.

    ``gamma_prime``: inner clock at fine tuning, one annealed row, ``gamma = alpha2``.
    ``gamma1``: outer clock at fine tuning, ``gamma = alpha1 alpha2``.
    ``weighted``: clock of the weighted K process above fine tuning, ``gamma = alpha2``;
    the first-level weights ``gamma1`` are held fixed (drawn from ``seed`` when not given)
    while the rows are annealed.
    """
    scale = 1.0 - model.p
    out = np.empty(replicas)
    if clock == "gamma_prime":
        s = epsilon ** model.alpha2 * r
        for j, c in _jobs(replicas):
            rng = derive_stream(seed, "aging.clock.gamma_prime", j)
            out[j * CHUNK:j * CHUNK + c] = _annealed_row_clock(c, [1.0], model.K2, model.alpha2, scale, s,
                                                                model.compensate_tail, rng)
    elif clock == "weighted":
        s = epsilon ** model.alpha2 * r
        if gamma1 is None:
            gamma1 = ppp_decreasing(model.alpha1, model.K1, derive_stream(seed, "aging.clock.gamma1_weights"))
        for j, c in _jobs(replicas):
            rng = derive_stream(seed, "aging.clock.weighted", j)
            out[j * CHUNK:j * CHUNK + c] = _annealed_row_clock(c, gamma1, model.K2, model.alpha2, scale, s,
                                                                model.compensate_tail, rng)
    elif clock == "gamma1":
        s = epsilon ** (model.alpha1 * model.alpha2) * r
        for j, c in _jobs(replicas):
            rng = derive_stream(seed, "aging.clock.gamma1", j)
            out[j * CHUNK:j * CHUNK + c] = [_gamma1_at(model, s, rng) for _ in range(c)]
    else:
        raise ValueError(f"unknown clock {clock!r}; expected one of {CLOCKS}")
    return out / epsilon


def clock_smalltime_scaling(model: AgingModel, epsilons, r: float, replicas: int, seed: int,
                            clocks=CLOCKS, frac: float = TAIL_FRACTION, method: str = "hill2") -> list[ScalingRow]:
    """Quantiles and fitted tail index of each rescaled clock along a decreasing ``epsilon`` grid."""
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon grid must be strictly decreasing")
    targets = {"gamma_prime": model.alpha2, "weighted": model.alpha2,
               "gamma1": model.alpha1 * model.alpha2}
    rows = []
    for clock in clocks:
        for e in eps:
            x = clock_samples(model, clock, e, r, replicas, seed)
            fit = tail_index(x, frac, method)
            rows.append(ScalingRow(clock, e, r, tuple(np.quantile(x, QUANTILES)), fit.index,
                                   targets[clock], fit.k, fit.degenerate))
    return rows


# -- intermediate temperatures -----------------------------------------------------------------

def check_intermediate_beta(p: float, a: float, beta: float) -> None:
    """Raise unless ``beta1_cr < beta < min(beta2_cr, beta_int)``."""
    cb = critical_betas(p, a)
    b_int = beta_intermediate(p, a)
    if beta <= cb.beta1_cr:
        raise ParameterError(f"beta={beta} <= beta1_cr={cb.beta1_cr:.4f}: high-temperature phase")
    if beta >= cb.beta2_cr:
        raise ParameterError(f"beta={beta} >= beta2_cr={cb.beta2_cr:.4f}: low-temperature phase")
    if beta >= b_int:
        raise ParameterError(f"beta={beta} >= beta_int={b_int:.4f}: the law of large numbers does not hold")


@dataclass
class LLNRow:
    t: float
    scaled_sum: float      # mean over environments of the per-environment mean
    stderr: float          # across environments
    rel_gap: float
    steps: int


def intermediate_lln(N: int, p: float, a: float, beta: float, t_grid, n_env: int, walks: int,
                     seed: int) -> list[LLNRow]:
    """Scaled second-level sum along a simple random walk in the top first-level cylinder.

    For each environment the walk starts uniformly in the cylinder of the
    largest first-level field and runs ``floor(t / c1) + 1`` steps; each visited
    state contributes ``exp(-beta sqrt((1-a)N) xi2) T_j``.  The sum is scaled by
    ``c_tilde = c1 exp(-beta^2 N (1-a) / 2)``.
    """
    check_intermediate_beta(p, a, beta)
    params = derive_params(N, p, a, beta)
    lc1 = log_c(params.N1, alpha_n(params.N1, N, a, beta))
    log_ct = lc1 - beta ** 2 * N * (1.0 - a) / 2.0
    steps = [int(math.floor(t * math.exp(-lc1))) + 1 for t in t_grid]
    n_max = max(steps)
    per_env = np.empty((n_env, len(steps)))
    coef = beta * math.sqrt((1.0 - a) * N)
    for e in range(n_env):
        env_seed = int(derive_stream(seed, "lln.environment", e).integers(2 ** 62))
        env = sample_environment(params, env_seed)
        x1 = int(np.argmax(env.xi1))
        xi2 = env.xi2_by_cylinder()[x1]
        rng = derive_stream(seed, "lln.walk", e)
        pos = rng.integers(0, 1 << params.N2, walks)
        acc = np.zeros((walks, n_max))
        for j in range(n_max):
            acc[:, j] = np.exp(log_ct - coef * xi2[pos]) * rng.standard_exponential(walks)
            pos ^= np.left_shift(1, rng.integers(0, params.N2, walks))
        cs = np.cumsum(acc, axis=1)
        per_env[e] = [cs[:, n - 1].mean() for n in steps]
    out = []
    for i, t in enumerate(t_grid):
        v = per_env[:, i]
        mean = float(v.mean())
        out.append(LLNRow(float(t), mean, float(v.std(ddof=1) / math.sqrt(n_env)) if n_env > 1 else float("nan"),
                          abs(mean - t) / t, steps[i]))
    return out


__all__ = [name for name in dir() if not name.startswith("_")]
