"""Weighted, uniform and 2-level K-processes on finite truncations.

Event streams are generated by superposition: over an s-window of length S
the events of independent Poisson streams with rates ``w(x)`` are a Poisson
number ``Poisson(S sum w)`` of uniform times carrying i.i.d. labels drawn
with probabilities ``w / sum w``.  This is equal in law to merging the
individual streams and needs no priority queue.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .environment import ABOVE_FT, AT_FT, BELOW_FT, LimitCascade, ppp_tail_mean

MASS_FLOOR = 1e-300


@dataclass(frozen=True)
class KSpec:
    """K(f, w) on states ``0..n-1``; ``labels`` optionally maps to display tuples."""

    f: np.ndarray
    w: np.ndarray
    labels: list | None = None
    tail_wf: float = 0.0   # expected sum of w f beyond the truncation, if known

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if f.shape != w.shape or f.ndim != 1 or f.size == 0:
            raise ValueError("f and w must be equal-length 1-d arrays")
        if np.any(f <= 0) or np.any(w <= 0):
            raise ValueError("f and w must be strictly positive")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.f.size

    def equilibrium(self) -> np.ndarray:
        m = self.w * self.f
        return m / m.sum()


@dataclass(frozen=True)
class K2Spec:
    """2-level K-process data: ``f`` over level-1 states, ``fprime[x, y]``."""

    f: np.ndarray
    fprime: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        fp = np.asarray(self.fprime, dtype=float)
        if fp.ndim != 2 or fp.shape[0] != f.size:
            raise ValueError("fprime must have shape (len(f), K2)")
        if np.any(f <= 0) or np.any(fp <= 0):
            raise ValueError("waiting functions must be strictly positive")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "fprime", fp)

    @property
    def shape(self) -> tuple[int, int]:
        return self.fprime.shape

    def summability(self) -> tuple[float, float]:
        """``(sum f, sum f f')`` on the truncation."""
        return float(self.f.sum()), float((self.f[:, None] * self.fprime).sum())

    def equilibrium(self) -> np.ndarray:
        m = self.f[:, None] * self.fprime
        return m / m.sum()


@dataclass(frozen=True)
class ProductSpec:
    """Below fine tuning: uniform K(f3, 1) on level 1 and fresh level-2 draws."""

    f3: np.ndarray
    gamma2: np.ndarray

    def equilibrium(self) -> np.ndarray:
        m = self.f3[:, None] * self.gamma2 / self.gamma2.sum(axis=1, keepdims=True)
        return m / m.sum()


def build_limit_specs(cascade: LimitCascade, p: float, psi: float, regime: str):
    """Limit-process data of the three low-temperature regimes."""
    g1 = cascade.gamma1
    g2t = cascade.gamma2_tilde(p)
    K1, K2 = cascade.truncation
    if regime == ABOVE_FT:
        # state x1 K2 + x2 carries waiting value gamma2~(x1 x2) and weight gamma1(x1)
        labels = [(i, j) for i in range(K1) for j in range(K2)]
        tail = float(np.sum(g1 * ppp_tail_mean(cascade.alpha2, cascade.gamma2[:, -1]) / (1 - p)))
        return KSpec(g2t.ravel(), np.repeat(g1, K2), labels, tail)
    if regime == AT_FT:
        return K2Spec(psi * g1, g2t)
    if regime == BELOW_FT:
        return ProductSpec(g1 * g2t.sum(axis=1), cascade.gamma2.copy())
    raise ValueError(f"unknown regime {regime!r}")


# -- clocks ---------------------------------------------------------------------------------

@dataclass
class ClockPath:
    """Pure-jump non-decreasing clock ``Gamma`` given by its atoms.

    ``s`` are the atom positions (sorted), ``mass`` the jumps and ``label``
    the state attached to each atom.  ``horizon`` is the end of the simulated
    window in the clock's own time.
    """

    s: np.ndarray
    label: np.ndarray
    mass: np.ndarray
    horizon: float
    clamped: int = 0
    dropped: int = 0
    cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cum = np.cumsum(self.mass)

    @property
    def total(self) -> float:
        return float(self.cum[-1]) if self.cum.size else 0.0

    def gamma(self, s):
        """``Gamma(s) = nu([0, s])``."""
        c0 = np.concatenate(([0.0], self.cum))
        return c0[np.searchsorted(self.s, s, side="right")]

    def gamma_minus(self, s):
        c0 = np.concatenate(([0.0], self.cum))
        return c0[np.searchsorted(self.s, s, side="left")]

    def atom_index(self, t):
        """Index of the atom whose mass interval ``[Gamma(s-), Gamma(s))`` contains ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("t must be non-negative")
        if np.any(t >= self.total):
            raise ValueError("t lies beyond the simulated clock range")
        return np.searchsorted(self.cum, t, side="right")

    def inverse(self, t):
        """Right-continuous inverse ``phi(t) = inf{s : Gamma(s) > t}``."""
        return self.s[self.atom_index(t)]

    def misses(self, tw, t) -> np.ndarray:
        """True where the range of Gamma avoids ``(tw, tw + t)``.

        This holds iff one atom covers the window: ``Gamma(s-) <= tw`` and
        ``Gamma(s) >= tw + t``.
        """
        tw = np.asarray(tw, dtype=float)
        k = np.searchsorted(self.cum, tw, side="left")
        ok = k < self.cum.size
        k = np.minimum(k, self.cum.size - 1)
        left = np.where(k > 0, self.cum[k - 1], 0.0)
        return ok & (left <= tw) & (self.cum[k] >= tw + t)

    def write_csv(self, path, label_fmt=str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "state", "mass", "Gamma_after"])
            for s, l, m, c in zip(self.s, self.label, self.mass, self.cum):
                w.writerow([repr(float(s)), label_fmt(l), repr(float(m)), repr(float(c))])


@dataclass
class KPath:
    """Piecewise-constant path: ``state[k]`` on ``[entry[k], entry[k] + duration[k])``."""

    entry: np.ndarray
    state: np.ndarray
    duration: np.ndarray

    def occupation(self, n: int, t_max: float | None = None) -> np.ndarray:
        d = self.duration
        if t_max is not None:
            d = np.clip(t_max - self.entry, 0.0, d)
        occ = np.bincount(self.state, weights=d, minlength=n)
        return occ / occ.sum()

    def at(self, t):
        k = np.searchsorted(self.entry + self.duration, t, side="right")
        return self.state[k]

    def write_csv(self, path, K2: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entry_time", "x1", "x2", "duration"])
            for e, s, d in zip(self.entry, self.state, self.duration):
                x1, x2 = (int(s) // K2 + 1, int(s) % K2 + 1) if K2 else (int(s) + 1, "")
                w.writerow([repr(float(e)), x1, x2, repr(float(d))])


def _clock_from_events(s, label, mass, horizon, dropped=0) -> ClockPath:
    small = mass < MASS_FLOOR
    mass = np.where(small, MASS_FLOOR, mass)
    return ClockPath(s, label, mass, horizon, int(small.sum()), dropped)


def path_from_clock(clock: ClockPath) -> KPath:
    entry = clock.cum - clock.mass
    return KPath(entry, clock.label.astype(np.int64), clock.mass)


MAX_EVENTS = 50_000_000


def superposed_events(rates: np.ndarray, horizon: float, rng: np.random.Generator,
                      max_events: int = MAX_EVENTS):
    """Sorted event times and labels of independent Poisson streams on ``[0, horizon]``."""
    tot = float(np.sum(rates))
    if tot * horizon > max_events:
        raise MemoryError(f"expected {tot * horizon:.3g} events exceed the budget {max_events}")
    n = rng.poisson(tot * horizon)
    t = rng.random(n) * horizon
    lab = rng.choice(rates.size, size=n, p=rates / tot)
    order = np.lexsort((lab, t))
    return t[order], lab[order]


def simulate_k(spec: KSpec, horizon: float, rng: np.random.Generator) -> tuple[KPath, ClockPath]:
    """K(f, w) over the s-window ``[0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    s, lab = superposed_events(spec.w, horizon, rng)
    mass = spec.f[lab] * rng.standard_exponential(lab.size)
    clock = _clock_from_events(s, lab, mass, horizon)
    return path_from_clock(clock), clock


@dataclass
class K2Result:
    path: KPath          # X = X1 X2 in t-time, state x1 K2 + x2
    clock: ClockPath     # Gamma', from r-time to t-time
    clock1: ClockPath    # Gamma_1 = Gamma'(Gamma-dot(.)), from s-time to t-time
    level1: ClockPath    # Gamma-dot, clock of the uniform level-1 process (s to r)
    K2: int


def simulate_k2(spec: K2Spec, horizon: float, rng: np.random.Generator) -> K2Result:
    """2-level K-process with the level-1 uniform process run over s in ``[0, horizon]``.

    Level-1 atoms define r-intervals of constancy of the level-1 state; the
    level-2 streams (rate 1 per second-level state) live in r-time and carry
    masses ``f'(x1, y) T``.  Level-1 atoms whose r-interval holds no level-2
    event give a zero jump of ``Gamma_1``; they are dropped and counted.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    K1, K2 = spec.shape
    s1, lab1 = superposed_events(np.ones(K1), horizon, rng)
    m1 = spec.f[lab1] * rng.standard_exponential(lab1.size)
    level1 = _clock_from_events(s1, lab1, m1, horizon)
    R = level1.total
    r2, y = superposed_events(np.ones(K2), R, rng)
    blk = np.searchsorted(level1.cum, r2, side="right")
    blk = np.minimum(blk, lab1.size - 1)
    x1 = lab1[blk] if lab1.size else np.zeros(0, dtype=np.int64)
    m2 = spec.fprime[x1, y] * rng.standard_exponential(y.size)
    state = x1.astype(np.int64) * K2 + y
    clock = _clock_from_events(r2, state, m2, R)
    # Gamma_1 jumps: total level-2 mass inside each level-1 interval
    jump1 = np.bincount(blk, weights=clock.mass, minlength=lab1.size)
    keep = jump1 > 0
    clock1 = ClockPath(s1[keep], lab1[keep], jump1[keep], horizon, 0, int((~keep).sum()))
    return K2Result(path_from_clock(clock), clock, clock1, level1, K2)


@dataclass
class ProductSample:
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    clock: ClockPath


def simulate_product_limit(spec: ProductSpec, query_times, rng: np.random.Generator,
                           horizon: float | None = None) -> ProductSample:
    """Sample ``(X1(t), X2(t))`` at sorted query times.

    ``X1`` is the uniform K(f3, 1) process; ``X2(t)`` is drawn afresh at every
    query time from the normalised ``gamma2`` row of ``X1(t)``.
    """
    t = np.asarray(query_times, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("query times must be sorted")
    K1, K2 = spec.gamma2.shape
    if horizon is None:
        # s-window long enough that Gamma exceeds the last query time
        horizon = max(1.0, 2.0 * t[-1] / spec.f3.sum()) if t.size else 1.0
    while True:
        _, clock = simulate_k(KSpec(spec.f3, np.ones(K1)), horizon, rng)
        if clock.total > (t[-1] if t.size else 0.0):
            break
        horizon *= 2.0
    x1 = clock.label[clock.atom_index(t)].astype(np.int64)
    cdf = np.cumsum(spec.gamma2 / spec.gamma2.sum(axis=1, keepdims=True), axis=1)
    u = rng.random(t.size)
    x2 = np.minimum((cdf[x1] < u[:, None]).sum(axis=1), K2 - 1)
    return ProductSample(t, x1, x2, clock)


def clock_inverse(clock: ClockPath, t):
    return clock.inverse(t)


# -- restricted dynamics ---------------------------------------------------------------------

def restricted_sequence(states: np.ndarray, K2: int, M1: int, M2: int) -> np.ndarray:
    """Visits to the block ``{x1 < M1, x2 < M2}``, relabelled ``x1 M2 + x2``."""
    x1, x2 = states // K2, states % K2
    keep = (x1 < M1) & (x2 < M2)
    return (x1[keep] * M2 + x2[keep]).astype(np.int64)


@dataclass
class RestrictedTransitions:
    counts: np.ndarray
    matrix: np.ndarray
    stderr: np.ndarray
    jumps: int


def restricted_transitions(states: np.ndarray, K2: int, M1: int, M2: int,
                           min_jumps: int = 10 ** 4) -> RestrictedTransitions:
    """Empirical transition matrix of a path watched only on the top block."""
    seq = restricted_sequence(np.asarray(states, dtype=np.int64), K2, M1, M2)
    n = M1 * M2
    jumps = max(seq.size - 1, 0)
    if jumps < min_jumps:
        raise ValueError(f"only {jumps} restricted jumps, need {min_jumps}")
    c = np.zeros((n, n))
    np.add.at(c, (seq[:-1], seq[1:]), 1.0)
    rs = c.sum(axis=1, keepdims=True)
    P = np.divide(c, rs, out=np.zeros_like(c), where=rs > 0)
    se = np.sqrt(np.divide(P * (1 - P), rs, out=np.zeros_like(c), where=rs > 0))
    return RestrictedTransitions(c, P, se, jumps)


def occupation_tv(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.ravel(a) - np.ravel(b)).sum())


__all__ = [name for name in dir() if not name.startswith("_")]
