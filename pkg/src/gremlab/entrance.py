"""Entrance laws into the Top, the trap-model kernel, and their validation.

Ranks ``x1``/``x2`` are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import hitting_vector, log_one_minus_q
from .environment import (ABOVE_FT, AT_FT, BELOW_FT, GremEnvironment, TopSpec,
                          critical_betas, scaled_weights, top_is_degenerate)

# Which block's lambda multiplies the cross-block entries of the trap kernel.
# "departure" keeps rows stochastic; "printed" follows the arrival-block superscript.
KERNEL_CONVENTION = "departure"

CASES = ("i-1", "i-2", "i-3", "i-4", "ii", "iii")


class RegimeError(ValueError):
    """The environment is outside the low-temperature regime the predictions assume."""


# -- lambda and nu ---------------------------------------------------------------------

def lambda_asymptotic(size_a, psi, gamma1x):
    """Probability of leaving a cylinder before finding a subset of size ``size_a``."""
    return 1.0 / (1.0 + np.asarray(size_a) * psi * np.asarray(gamma1x))


def lambda_exact_from_log1mq(log1mq, size_a, N2: int):
    u = np.asarray(log1mq, dtype=float)
    if np.any(u == 0.0):
        raise ValueError("q* = 1: exit probability undefined")
    s = np.abs(u) * 2.0 ** N2 / np.asarray(size_a, dtype=float) * (1.0 + 1.0 / N2)
    return s / (1.0 + s)


def lambda_exact(env: GremEnvironment, x1: int, size_a: int) -> float:
    """Finite-N exit probability from the ``x1``-th ranked cylinder."""
    w1 = int(np.argsort(-env.xi1, kind="stable")[x1])
    return float(lambda_exact_from_log1mq(log_one_minus_q(env)[w1], size_a, env.params.N2))


@dataclass(frozen=True)
class EntranceParams:
    """Exit probabilities of the top cylinders.

    ``lam`` uses ``|A| = M2`` and ``lam_minus`` uses ``|A| = M2 - 1``.
    ``excluded`` is the rank pair of an excluded Top state, if any.
    """

    M1: int
    M2: int
    lam: np.ndarray
    lam_minus: np.ndarray
    excluded: tuple[int, int] | None = None
    psi: float | None = None
    gamma1_top: np.ndarray | None = None

    def with_excluded(self, excluded) -> "EntranceParams":
        return EntranceParams(self.M1, self.M2, self.lam, self.lam_minus, excluded, self.psi, self.gamma1_top)


def entrance_params_asymptotic(M1: int, M2: int, psi: float, gamma1_top, excluded=None) -> EntranceParams:
    g = np.asarray(gamma1_top, dtype=float)
    if g.size != M1 or np.any(g <= 0):
        raise ValueError("gamma1_top must hold M1 positive values")
    if np.any(np.diff(g) > 0):
        raise ValueError("gamma1_top must be non-increasing")
    return EntranceParams(M1, M2, lambda_asymptotic(M2, psi, g), lambda_asymptotic(M2 - 1, psi, g),
                          excluded, psi, g)


def entrance_params_exact(env: GremEnvironment, top: TopSpec, excluded=None) -> EntranceParams:
    l1mq = log_one_minus_q(env)[top.top1]
    N2 = env.params.N2
    lam = lambda_exact_from_log1mq(l1mq, top.M2, N2)
    lam_m = lambda_exact_from_log1mq(l1mq, top.M2 - 1, N2) if top.M2 > 1 else np.ones(top.M1)
    sw = scaled_weights(env)
    return EntranceParams(top.M1, top.M2, lam, lam_m, excluded, sw.psiN, sw.gamma1N[top.top1])


def entrance_params(env: GremEnvironment, top: TopSpec, method: str = "exact", excluded=None) -> EntranceParams:
    if method == "exact":
        return entrance_params_exact(env, top, excluded)
    if method == "asymptotic":
        sw = scaled_weights(env)
        return entrance_params_asymptotic(top.M1, top.M2, sw.psiN, sw.gamma1N[top.top1], excluded)
    raise ValueError(f"unknown lambda method {method!r}")


def _lam_row(ep: EntranceParams) -> np.ndarray:
    lam = ep.lam.copy()
    if ep.excluded is not None:
        lam[ep.excluded[0]] = ep.lam_minus[ep.excluded[0]]
    return lam


def nu1(ep: EntranceParams) -> np.ndarray:
    """Cylinder entrance mass; with ``ep.excluded`` set this is the barred variant."""
    w = 1.0 - _lam_row(ep)
    tot = w.sum()
    if not tot > 0:
        raise ValueError("all exit probabilities equal 1; nu1 is undefined")
    return w / tot


def limit_nu1(regime: str, gamma1, M2: int, psi: float) -> np.ndarray:
    g = np.asarray(gamma1, dtype=float)
    if regime == ABOVE_FT:
        w = g
    elif regime == AT_FT:
        w = g / (1.0 + M2 * psi * g)
    elif regime == BELOW_FT:
        w = np.ones_like(g)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return w / w.sum()


# -- case formulas ---------------------------------------------------------------------------

def classify_case(top: TopSpec, start: int, target) -> str:
    """Infer the case label from a start state and a target.

    ``target`` is a Top state, or ``("cyl", x1)`` for cylinder entrance.
    """
    start = int(start)
    if isinstance(target, tuple) and target and target[0] == "cyl":
        if top.block_of(start) is not None:
            raise ValueError("cylinder entrance needs a start outside the top cylinders")
        return "i-4"
    loc_t = top.locate(int(target))
    if loc_t is None:
        raise ValueError(f"target {target} is not in the Top")
    loc_s = top.locate(start)
    if loc_s is not None:
        if loc_s == loc_t:
            raise ValueError("start equals target")
        return "ii" if loc_s[0] == loc_t[0] else "iii"
    b = top.block_of(start)
    if b is None:
        return "i-3"
    return "i-1" if b == loc_t[0] else "i-2"


def predict_case(ep: EntranceParams, case: str, target_rank: tuple[int, int] | int,
                 start_rank: tuple[int, int] | int | None = None) -> float:
    """Closed-form entrance probability with the correction factor set to 1.

    ``target_rank`` is ``(x1, x2)`` (or ``x1`` for case i-4); ``start_rank`` is
    the start block ``x1'`` for case i-2 and the start pair for ii/iii.
    """
    M1, M2 = ep.M1, ep.M2
    if case == "i-4":
        return 1.0 / M1
    x1 = target_rank[0]
    if case in ("i-1", "i-2", "i-3"):
        nu = nu1(ep.with_excluded(None))
        if case == "i-1":
            lam = ep.lam[x1]
            return ((1.0 - lam) + nu[x1] * lam) / M2
        if case == "i-2":
            return nu[x1] * ep.lam[int(start_rank)] / M2
        return nu[x1] / M2
    if start_rank is None:
        raise ValueError(f"case {case} needs the start rank pair")
    ep_bar = ep.with_excluded(tuple(start_rank))
    nub = nu1(ep_bar)
    xb = start_rank[0]
    if case == "ii":
        if M2 < 2:
            raise ValueError("case ii needs M2 >= 2")
        lam = ep.lam_minus[x1]
        return ((1.0 - lam) + nub[x1] * lam) / (M2 - 1)
    if case == "iii":
        return nub[x1] * ep.lam_minus[xb] / M2
    raise ValueError(f"unknown case {case!r}")


def predict_entrance(env: GremEnvironment, top: TopSpec, case: str, start: int, target,
                     method: str = "exact") -> float:
    """Predicted entrance probability for a start state and a Top target (or cylinder)."""
    found = classify_case(top, start, target)
    if found != case:
        raise ValueError(f"start/target pair is case {found}, not {case}")
    ep = entrance_params(env, top, method)
    if case == "i-4":
        return predict_case(ep, case, target[1])
    tr = top.locate(int(target))
    if case == "i-2":
        sr = top.block_of(int(start))
    elif case in ("ii", "iii"):
        sr = top.locate(int(start))
    else:
        sr = None
    return predict_case(ep, case, tr, sr)


# -- trap kernel -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrapKernel:
    M1: int
    M2: int
    transition: np.ndarray   # (M1 M2, M1 M2), state (x1, x2) at index x1 M2 + x2
    mean_hold: np.ndarray | None = None

    def labels(self) -> list[str]:
        return [f"({i},{j})" for i in range(1, self.M1 + 1) for j in range(1, self.M2 + 1)]

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + self.labels())
            for lab, row in zip(self.labels(), self.transition):
                w.writerow([lab] + [repr(float(v)) for v in row])


def trap_kernel(M1: int, M2: int, psi: float, gamma1, gamma2=None,
                convention: str = KERNEL_CONVENTION) -> TrapKernel:
    """GREM-like trap kernel on ``{1..M1} x {1..M2}``.

    Same-block entries are ``((1 - lam_x1) + lam_x1 nu1(x1)) / M2``; cross-block
    entries are ``nu1(y1) lam / M2`` with ``lam`` taken at the departure block
    (or at the arrival block for ``convention="printed"``).
    """
    g = np.asarray(gamma1, dtype=float)
    if g.size != M1 or np.any(g <= 0):
        raise ValueError("gamma1 must hold M1 positive values")
    lam = lambda_asymptotic(M2, psi, g)
    if M1 == 1:
        nu = np.ones(1)
    else:
        w = 1.0 - lam
        nu = w / w.sum() if w.sum() > 0 else np.full(M1, 1.0 / M1)
    if convention == "departure":
        block = np.outer(lam, nu)
    elif convention == "printed":
        block = np.outer(np.ones(M1), lam * nu)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    block[np.diag_indices(M1)] = (1.0 - lam) + lam * nu
    P = np.kron(block, np.full((M2, M2), 1.0 / M2))
    hold = None if gamma2 is None else np.asarray(gamma2, dtype=float).reshape(M1 * M2)
    return TrapKernel(M1, M2, P, hold)


def stationary_law(P: np.ndarray, tol: float = 1e-14, maxiter: int = 100000) -> np.ndarray:
    """Stationary row vector by power iteration on the lazy chain ``(I + P)/2``."""
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    L = 0.5 * (np.eye(n) + P)
    for _ in range(maxiter):
        nxt = pi @ L
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    return pi / pi.sum()


@dataclass
class TrapPath:
    states: np.ndarray
    jump_times: np.ndarray
    holds: np.ndarray

    def occupation(self, n: int, horizon: float) -> np.ndarray:
        h = np.minimum(self.holds, np.maximum(horizon - self.jump_times, 0.0))
        occ = np.bincount(self.states, weights=h, minlength=n)
        return occ / occ.sum()


def trap_simulate(kernel: TrapKernel, gamma2=None, horizon: float = 1.0, rng=None,
                  start: int = 0, max_jumps: int = 10 ** 8) -> TrapPath:
    """Trap chain with exponential holds of mean ``gamma2(x)`` up to ``horizon``."""
    hold = kernel.mean_hold if gamma2 is None else np.asarray(gamma2, dtype=float).reshape(-1)
    if hold is None or np.any(hold <= 0):
        raise ValueError("mean holding times must be positive")
    n = kernel.transition.shape[0]
    cdf = np.cumsum(kernel.transition, axis=1)
    cdf[:, -1] = 1.0
    states, times, holds = [], [], []
    t, x = 0.0, int(start)
    chunk = 8192
    while t < horizon and len(states) < max_jumps:
        e = rng.standard_exponential(chunk)
        u = rng.random(chunk)
        for k in range(chunk):
            h = e[k] * hold[x]
            states.append(x)
            times.append(t)
            holds.append(h)
            t += h
            if t >= horizon:
                break
            x = int(np.searchsorted(cdf[x], u[k], side="right"))
            x = min(x, n - 1)
    return TrapPath(np.array(states, dtype=np.int64), np.array(times), np.array(holds))


def trap_jump_sequence(kernel: TrapKernel, n_jumps: int, rng, start: int = 0) -> np.ndarray:
    """Embedded chain of the trap model (no holding times)."""
    n = kernel.transition.shape[0]
    cdf = np.cumsum(kernel.transition, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(n_jumps)
    out = np.empty(n_jumps + 1, dtype=np.int64)
    out[0] = start
    for k in range(n_jumps):
        out[k + 1] = min(int(np.searchsorted(cdf[out[k]], u[k], side="right")), n - 1)
    return out


def transition_counts(seq: np.ndarray, n: int) -> np.ndarray:
    c = np.zeros((n, n))
    np.add.at(c, (seq[:-1], seq[1:]), 1.0)
    return c


# -- validation ------------------------------------------------------------------------------

@dataclass
class EntranceRow:
    case: str
    start: int
    target: str
    predicted: float
    measured: float
    residual: float
    tolerance: float
    passed: bool


def regime_report(env: GremEnvironment) -> dict:
    pr = env.params
    cb = critical_betas(pr.p, pr.a)
    return {"beta": pr.beta, "beta2_cr": cb.beta2_cr, "beta_ft": cb.beta_ft,
            "low_temperature": pr.beta > cb.beta2_cr}


def check_regime(env: GremEnvironment, top: TopSpec) -> dict:
    """Reject degenerate environments; return the temperature report."""
    if top_is_degenerate(env, top):
        raise RegimeError("outside low-temperature regime: the Top is not separated (tied energies)")
    return regime_report(env)


def default_tolerance(N: int) -> float:
    return max(0.05, 4.0 / N)


def validate_cylinder_entrance(env: GremEnvironment, top: TopSpec, starts, tolerance: float | None = None):
    """Exact probability of entering ``W^{x1} \\ T^{x1}`` first, versus ``1/M1``."""
    check_regime(env, top)
    tol = default_tolerance(env.params.N) if tolerance is None else tolerance
    wbar = top.wbar_mask()
    tmask = top.top_mask()
    rows = []
    for x1 in range(top.M1):
        tgt = top.cylinder_mask(x1) & ~tmask
        sol = hitting_vector(env, np.flatnonzero(tgt), np.flatnonzero(wbar & ~tgt))
        for s in starts:
            if wbar[int(s)]:
                raise ValueError(f"start {s} lies in a top cylinder")
            m = float(sol.h[int(s)])
            pred = 1.0 / top.M1
            rows.append(EntranceRow("i-4", int(s), f"cyl{x1 + 1}", pred, m, sol.residual, tol,
                                    abs(m - pred) <= tol))
    return rows


def entrance_hitting_table(env: GremEnvironment, top: TopSpec) -> np.ndarray:
    """``h[k]`` = vector of ``P(tau_eta < tau_{T \\ eta})`` for the k-th Top state."""
    T = top.states.ravel()
    out = np.empty((T.size, 1 << env.params.N))
    for k, eta in enumerate(T):
        out[k] = hitting_vector(env, [eta], np.delete(T, k)).h
    return out


@dataclass
class FactorizationRow:
    target: tuple[int, int]
    measured: float       # mean entrance probability over starts outside the Top
    predicted: float      # nu1(x1) / M2 with the limiting nu1
    predicted_exact: float


def entrance_factorization(env: GremEnvironment, top: TopSpec, regime: str = ABOVE_FT,
                           table: np.ndarray | None = None) -> list[FactorizationRow]:
    """Entrance law into the Top from a uniform start outside it, per target.

    The limiting prediction is ``nu1(x1) / M2`` with ``nu1`` from
    :func:`limit_nu1`; the column ``predicted_exact`` uses the finite-N
    exit probabilities instead.
    """
    check_regime(env, top)
    if table is None:
        table = entrance_hitting_table(env, top)
    outside = ~top.top_mask()
    sw = scaled_weights(env)
    g1 = sw.gamma1N[top.top1]
    nu_lim = limit_nu1(regime, g1, top.M2, sw.psiN)
    nu_ex = nu1(entrance_params_exact(env, top))
    rows = []
    for k, eta in enumerate(top.states.ravel()):
        x1, x2 = top.locate(int(eta))
        rows.append(FactorizationRow((x1, x2), float(table[k, outside].mean()),
                                     float(nu_lim[x1] / top.M2), float(nu_ex[x1] / top.M2)))
    return rows


def validate_entrance(env: GremEnvironment, top: TopSpec, starts, method: str = "exact",
                      tolerance: float | None = None, lam_method: str = "exact",
                      replicas: int = 2000, rng=None):
    """Compare the case formulas with measured entrance probabilities.

    ``method="exact"`` uses the linear solver, ``"mc"`` the jump-chain Monte
    Carlo (then the residual column holds the standard error).
    """
    from .dynamics import HittingQuery, mc_hitting_probability

    check_regime(env, top)
    tol = default_tolerance(env.params.N) if tolerance is None else tolerance
    T = top.states.ravel()
    table = entrance_hitting_table(env, top) if method == "exact" else None
    rows = []
    for k, eta in enumerate(T):
        others = np.delete(T, k)
        for s in starts:
            s = int(s)
            if s == eta:
                continue
            case = classify_case(top, s, int(eta))
            pred = predict_entrance(env, top, case, s, int(eta), lam_method)
            # for starts inside the Top the start itself is an interior state, so the
            # harmonic value there already counts paths from the first step on
            avoid = others if case in ("i-1", "i-2", "i-3") else np.setdiff1d(others, [s])
            if method == "exact":
                if case in ("ii", "iii"):
                    sol = hitting_vector(env, [int(eta)], avoid)
                    meas, res = float(sol.h[s]), sol.residual
                else:
                    meas, res = float(table[k, s]), 0.0
            elif method == "mc":
                r = mc_hitting_probability(env, HittingQuery.make([int(eta)], avoid, s), replicas, rng)
                meas, res = r.estimate, r.stderr
            else:
                raise ValueError(f"unknown method {method!r}")
            rows.append(EntranceRow(case, s, f"{top.locate(int(eta))}", pred, meas, res, tol,
                                    abs(meas - pred) <= tol))
    return rows


__all__ = [name for name in dir() if not name.startswith("_")]
