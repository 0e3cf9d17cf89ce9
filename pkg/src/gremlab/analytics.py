"""Closed-form special functions: Ehrenfest passage generating functions,
hitting constants, arcsine laws and the regime-indexed aging limits.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import betainc, gammaln, logsumexp

from .environment import ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_B_integral(i: int, alpha: float, n2: int) -> float:
    """``log`` of ``int_0^1 (1-u)^i (1+u)^(n2-i) u^(alpha-1) du``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0 <= i <= n2:
        raise ValueError("need 0 <= i <= n2")
    j = np.arange(n2 - i + 1, dtype=float)
    terms = (_log_binom(n2 - i, j) + gammaln(i + 1.0) + gammaln(alpha + j)
             - gammaln(alpha + i + j + 1.0))
    return float(logsumexp(terms))


def B_integral(i: int, alpha: float, n2: int) -> float:
    """Finite-series evaluation of ``B_i(alpha)`` in log-Gamma arithmetic."""
    return math.exp(log_B_integral(i, alpha, n2))


def t_prime(t: float, n2: int) -> float:
    return n2 * (1.0 - t) / (2.0 * t)


def ehrenfest_pgf(n2: int, i: int, t: float) -> float:
    """``E[t^tau]`` for the distance chain started at ``i``, ``tau`` the hitting time of 0."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if not 0 <= i <= n2:
        raise ValueError("need 0 <= i <= n2")
    if i == 0 or t == 1.0:
        return 1.0
    if t == 0.0:
        return 0.0
    tp = t_prime(t, n2)
    return math.exp(log_B_integral(i, tp, n2) - log_B_integral(0, tp, n2))


def ehrenfest_pgf_linear(n2: int, t: float) -> np.ndarray:
    """First-step oracle: solve ``g(j) = t sum_k P(j,k) g(k)``, ``g(0) = 1``, on ``1..n2``."""
    j = np.arange(1, n2 + 1)
    A = np.eye(n2)
    b = np.zeros(n2)
    down = j / n2
    up = (n2 - j) / n2
    for r, jj in enumerate(j):
        if jj - 1 == 0:
            b[r] += t * down[r]
        else:
            A[r, r - 1] -= t * down[r]
        if jj + 1 <= n2:
            A[r, r + 1] -= t * up[r]
    return np.concatenate(([1.0], np.linalg.solve(A, b)))


def escape_probability(n2: int, lam_prime: float) -> float:
    """Per-step killing probability ``q = 2 lam' / (n2 + 2 lam')``."""
    return 2.0 * lam_prime / (n2 + 2.0 * lam_prime)


def pi_analytic(n2: int, lam_prime: float) -> float:
    """Uniform-start probability that the level-2 walk finds a fixed point before being killed."""
    if not lam_prime > 0:
        raise ValueError("lam_prime must be positive")
    i = np.arange(1, n2 + 1, dtype=float)
    s = float(np.exp(logsumexp(_log_binom(n2, i) - np.log(i + lam_prime))))
    return 1.0 / (1.0 + lam_prime * s)


def pi_bruteforce(n2: int, lam_prime: float) -> float:
    """``2^-n2 sum_sigma E_sigma[(1-q)^tau]`` from the distance-chain linear system."""
    g = ehrenfest_pgf_linear(n2, 1.0 - escape_probability(n2, lam_prime))
    i = np.arange(n2 + 1, dtype=float)
    return float(np.sum(np.exp(_log_binom(n2, i) - n2 * math.log(2.0)) * g))


def pi_hat(n2: int, lam_prime: float, M2: int) -> float:
    """First-order Bonferroni value ``M2 pi`` for hitting one of ``M2`` points."""
    return M2 * pi_analytic(n2, lam_prime)


# -- arcsine laws ----------------------------------------------------------------------------

def arcsine_cdf(alpha: float, u: float, method: str = "quad") -> float:
    """Generalised arcsine distribution function ``Asl_alpha(u)``.

    ``method="quad"`` integrates the density with algebraic endpoint weights
    (adaptive QUADPACK); ``method="beta"`` uses the regularised incomplete Beta
    function ``I_u(alpha, 1 - alpha)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    if u == 0.0:
        return 0.0
    if u == 1.0:
        return 1.0
    if method == "beta":
        return float(betainc(alpha, 1.0 - alpha, u))
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    c = math.sin(math.pi * alpha) / math.pi
    if u <= 0.5:
        # int_0^u x^(alpha-1) (1-x)^(-alpha): singular factor at 0 is the weight
        val, _ = integrate.quad(lambda x: (1.0 - x) ** (-alpha), 0.0, u, weight="alg",
                                wvar=(alpha - 1.0, 0.0), epsabs=1e-13, epsrel=1e-12)
        return c * val
    val, _ = integrate.quad(lambda x: x ** (alpha - 1.0), u, 1.0, weight="alg",
                            wvar=(0.0, -alpha), epsabs=1e-13, epsrel=1e-12)
    return 1.0 - c * val


def aging_prediction(regime: str, theta: float, alpha1: float, alpha2: float, p: float,
                     method: str = "quad") -> float:
    """Limit of the two-time function at ``t = theta t_w``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    u = 1.0 / (1.0 + theta)
    if regime == ABOVE_FT:
        return arcsine_cdf(alpha2, u, method)
    if regime == AT_FT:
        return p * arcsine_cdf(alpha1 * alpha2, u, method) + (1.0 - p) * arcsine_cdf(alpha2, u, method)
    if regime == BELOW_FT:
        return p * arcsine_cdf(alpha1, u, method)
    if regime == INTERMEDIATE:
        return arcsine_cdf(alpha1, u, method)
    raise ValueError(f"unknown regime {regime!r}")


def tabulate(fn, grid) -> list[tuple]:
    """Evaluate ``fn`` over an iterable of argument tuples."""
    return [tuple(args) + (fn(*args),) for args in grid]


__all__ = [name for name in dir() if not name.startswith("_")]
