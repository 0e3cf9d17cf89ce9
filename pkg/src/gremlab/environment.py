"""Random environment of the cascading two-level GREM.

Gaussian fields, their rankings, the temperature parametrisation through
``zeta`` and the scaled Boltzmann weights, plus the limiting Poisson cascade.

States of the N-cube are encoded as integers ``(w1 << N2) | w2`` where ``w1``
holds the N1 first-level bits and ``w2`` the N2 second-level bits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .rng import GENERATOR_NAME, derive_stream

BETA_STAR = math.sqrt(2.0 * math.log(2.0))
KAPPA = 0.5 * (math.log(math.log(2.0)) + math.log(4.0 * math.pi))
ENV_VERSION = "gremlab-env-1"
DEFAULT_N_CAP = 24

ABOVE_FT = "AboveFT"
AT_FT = "AtFT"
BELOW_FT = "BelowFT"
INTERMEDIATE = "Intermediate"
REGIMES = (ABOVE_FT, AT_FT, BELOW_FT)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    N: int
    p: float
    a: float
    beta: float
    N1: int
    N2: int
    beta_bar: float | None = None

    def __post_init__(self):
        if not (0.0 < self.p < 1.0 and 0.0 < self.a < 1.0):
            raise ParameterError("p and a must lie in (0, 1)")
        if self.a <= self.p:
            raise ParameterError(f"non-cascading parameters: a={self.a} <= p={self.p}")
        if self.N1 < 1 or self.N2 < 1 or self.N1 + self.N2 != self.N:
            raise ParameterError(f"bad level sizes N1={self.N1}, N2={self.N2} for N={self.N}")
        if not self.beta > 0:
            raise ParameterError("beta must be positive")

    @property
    def n_states(self) -> int:
        return 1 << self.N

    def to_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "a": self.a, "beta": self.beta, "beta_bar": self.beta_bar}


def derive_params(N: int, p: float, a: float, beta: float, beta_bar: float | None = None) -> ModelParams:
    """Build :class:`ModelParams` with ``N1 = floor(pN)``."""
    if N < 2:
        raise ParameterError("N must be at least 2")
    if not 0.0 < p < a < 1.0:
        raise ParameterError(f"need 0 < p < a < 1 (cascading phase), got p={p}, a={a}")
    N1 = math.floor(p * N)
    if N1 < 1:
        raise ParameterError(f"floor(pN) = 0 for N={N}, p={p}")
    return ModelParams(N=N, p=p, a=a, beta=beta, N1=N1, N2=N - N1, beta_bar=beta_bar)


class CriticalBetas(NamedTuple):
    beta1_cr: float
    beta2_cr: float
    beta_ft: float
    regimes_split: bool


def critical_betas(p: float, a: float) -> CriticalBetas:
    if not 0.0 < p < a < 1.0:
        raise ParameterError("need 0 < p < a < 1")
    b1 = BETA_STAR * math.sqrt(p / a)
    b2 = BETA_STAR * math.sqrt((1.0 - p) / (1.0 - a))
    bft = BETA_STAR * (1.0 - p) / (2.0 * math.sqrt(p * a))
    return CriticalBetas(b1, b2, bft, bft > b2)


def beta_intermediate(p: float, a: float) -> float:
    """Upper end of the intermediate-temperature window with a law of large numbers."""
    return 2.0 * math.sqrt(a * p) / (1.0 - a) * BETA_STAR


def limit_alphas(p: float, a: float, beta: float) -> tuple[float, float]:
    """Limiting cascade exponents ``beta_i^cr / beta``."""
    cb = critical_betas(p, a)
    return cb.beta1_cr / beta, cb.beta2_cr / beta


# -- scalings -----------------------------------------------------------------

def alpha_n(n_level: int, N: int, weight: float, beta: float) -> float:
    """``alpha_i^N = (beta*/beta) sqrt(N_i / (N a_i))`` with ``a_1 = a``, ``a_2 = 1 - a``."""
    return BETA_STAR / beta * math.sqrt(n_level / (N * weight))


def log_c(n_level: int, alpha: float) -> float:
    # kappa enters with a minus sign so that c e^{beta sqrt(a_i N) x} == exp(u^{-1}(x)/alpha)
    return -(BETA_STAR ** 2 * n_level - 0.5 * math.log(n_level) - KAPPA) / alpha


def u_scale(n_level: int, x):
    """Affine scaling for the maximum of ``2**n_level`` standard Gaussians."""
    s = BETA_STAR * math.sqrt(n_level)
    return s + (np.asarray(x, dtype=float) - 0.5 * (math.log(n_level * math.log(2.0)) + math.log(4.0 * math.pi))) / s


def u_scale_inv(n_level: int, y):
    s = BETA_STAR * math.sqrt(n_level)
    return s * (np.asarray(y, dtype=float) - s) + 0.5 * (math.log(n_level * math.log(2.0)) + math.log(4.0 * math.pi))


def _beta_denominator(N: int, N1: int, a: float) -> float:
    return math.sqrt(N * a / N1) / BETA_STAR * (BETA_STAR ** 2 * N1 - 0.5 * math.log(N1))


def beta_from_zeta(N: int, p: float, a: float, zeta: float) -> float:
    """Solve ``c_1^N 2^{N_2} = exp(zeta + kappa / alpha_1^N)`` for beta.

    Both sides are exponentials of functions linear in beta, so the solution
    is explicit.
    """
    N1 = math.floor(p * N)
    if N1 < 1 or not 0.0 < p < a < 1.0:
        raise ParameterError("invalid (N, p, a)")
    N2 = N - N1
    num = N2 * math.log(2.0) - zeta
    if num <= 0:
        raise ParameterError(f"zeta={zeta} >= N2 beta*^2/2 gives a non-positive beta")
    return num / _beta_denominator(N, N1, a)


def zeta_from_beta(params: ModelParams) -> float:
    """Inverse of :func:`beta_from_zeta`."""
    return params.N2 * math.log(2.0) - params.beta * _beta_denominator(params.N, params.N1, params.a)


def fine_tuning_equation_gap(params: ModelParams, zeta: float) -> float:
    """``log(c_1^N 2^{N_2}) - (zeta + kappa/alpha_1^N)``; zero at the solution."""
    a1 = alpha_n(params.N1, params.N, params.a, params.beta)
    return log_c(params.N1, a1) + params.N2 * math.log(2.0) - (zeta + KAPPA / a1)


def beta_ft_asymptotic(N: int, p: float, a: float, zeta: float) -> float:
    """Leading-order explicit form ``beta^FT (1 - 2 zeta/(N2 beta*^2))``."""
    N2 = N - math.floor(p * N)
    return critical_betas(p, a).beta_ft * (1.0 - 2.0 * zeta / (N2 * BETA_STAR ** 2))


@dataclass(frozen=True)
class ZetaSequence:
    """A declared sequence ``N -> zeta_N`` together with its limit.

    ``limit`` is ``math.inf``, ``-math.inf`` or the finite limit value.
    """

    func: Callable[[int], float]
    limit: float
    delta: float = 0.05

    def __call__(self, N: int) -> float:
        return float(self.func(N))


def classify_regime(seq: ZetaSequence, p: float, N_grid=(10, 100, 1000, 10000)) -> str:
    """Regime of a temperature sequence ``beta(a, p, N, zeta_N)``."""
    for N in N_grid:
        N2 = N - math.floor(p * N)
        cap = (1.0 - seq.delta) * N2 * BETA_STAR ** 2 / 2.0
        if seq(N) > cap:
            raise ParameterError(f"zeta_N={seq(N):.4g} exceeds (1-delta) N2 beta*^2/2 = {cap:.4g} at N={N}")
    if seq.limit == math.inf:
        return ABOVE_FT
    if seq.limit == -math.inf:
        return BELOW_FT
    if math.isfinite(seq.limit):
        return AT_FT
    raise ParameterError("limit must be +inf, -inf or finite")


# -- environment ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GremEnvironment:
    params: ModelParams
    xi1: np.ndarray
    xi2: np.ndarray
    seed: int
    generator: str = GENERATOR_NAME
    version: str = ENV_VERSION

    def xi2_by_cylinder(self) -> np.ndarray:
        return self.xi2.reshape(1 << self.params.N1, 1 << self.params.N2)

    def snapshot(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "seed": int(self.seed),
            "generator": self.generator,
            "version": self.version,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=2, sort_keys=True)


def load_environment(path, n_cap: int = DEFAULT_N_CAP) -> GremEnvironment:
    with open(path) as fh:
        snap = json.load(fh)
    if snap.get("version") != ENV_VERSION or snap.get("generator") != GENERATOR_NAME:
        raise ValueError(f"snapshot {path} was written by an incompatible version: {snap.get('version')}")
    pr = snap["params"]
    params = derive_params(pr["N"], pr["p"], pr["a"], pr["beta"], pr.get("beta_bar"))
    return sample_environment(params, snap["seed"], n_cap=n_cap)


def sample_level1_field(N1: int, seed: int) -> np.ndarray:
    return derive_stream(seed, "environment.xi1").standard_normal(1 << N1)


def sample_environment(params: ModelParams, seed: int, n_cap: int = DEFAULT_N_CAP) -> GremEnvironment:
    """Draw the ``2^N1 + 2^N`` i.i.d. standard Gaussians of one environment."""
    if params.N > n_cap:
        raise ParameterError(f"N={params.N} exceeds the environment cap {n_cap}")
    xi1 = sample_level1_field(params.N1, seed)
    xi2 = derive_stream(seed, "environment.xi2").standard_normal(1 << params.N)
    xi1.flags.writeable = False
    xi2.flags.writeable = False
    return GremEnvironment(params, xi1, xi2, int(seed))


def environment_from_fields(params: ModelParams, xi1, xi2, seed: int = 0) -> GremEnvironment:
    """Wrap user-supplied fields (used for degenerate or hand-built cases)."""
    xi1 = np.array(xi1, dtype=float).reshape(-1)
    xi2 = np.array(xi2, dtype=float).reshape(-1)
    if xi1.size != 1 << params.N1 or xi2.size != 1 << params.N:
        raise ParameterError("field sizes do not match 2^N1 and 2^N")
    if not (np.all(np.isfinite(xi1)) and np.all(np.isfinite(xi2))):
        raise ParameterError("fields must be finite")
    xi1.flags.writeable = False
    xi2.flags.writeable = False
    return GremEnvironment(params, xi1, xi2, int(seed), generator="user", version=ENV_VERSION)


@dataclass(frozen=True)
class SpinState:
    """sigma = sigma_1 sigma_2 as two bit words."""

    w1: int
    w2: int

    def index(self, N2: int) -> int:
        return (self.w1 << N2) | self.w2

    @classmethod
    def from_index(cls, idx: int, N2: int) -> "SpinState":
        return cls(int(idx) >> N2, int(idx) & ((1 << N2) - 1))


def hamiltonian(env: GremEnvironment, sigma: SpinState) -> tuple[float, float, float]:
    """Return ``(H, H1, H2)`` at ``sigma``."""
    pr = env.params
    h1 = -math.sqrt(pr.a * pr.N) * float(env.xi1[sigma.w1])
    h2 = -math.sqrt((1.0 - pr.a) * pr.N) * float(env.xi2[sigma.index(pr.N2)])
    return h1 + h2, h1, h2


def hamiltonian_table(env: GremEnvironment) -> tuple[np.ndarray, np.ndarray]:
    """Vectors ``H1`` (per first-level word) and ``H2`` (per state)."""
    pr = env.params
    return -math.sqrt(pr.a * pr.N) * env.xi1, -math.sqrt((1.0 - pr.a) * pr.N) * env.xi2


# -- ranking and the Top ----------------------------------------------------------

def rank_desc(values: np.ndarray) -> np.ndarray:
    """Indices sorting ``values`` non-increasingly; ties go to the smaller word."""
    return np.argsort(-np.asarray(values), kind="stable")


@dataclass(frozen=True, eq=False)
class RankedMap:
    level1: np.ndarray  # (2^N1,) first-level words by rank
    level2: np.ndarray  # (2^N1, 2^N2) second-level words, row x1 is the cylinder of level1[x1]

    def state(self, x1: int, x2: int, N2: int) -> int:
        """State index of ``xi^{x1 x2}`` (ranks are 0-based)."""
        return (int(self.level1[x1]) << N2) | int(self.level2[x1, x2])


@dataclass(frozen=True, eq=False)
class TopSpec:
    M1: int
    M2: int
    N1: int
    N2: int
    top1: np.ndarray  # (M1,) words
    top2: np.ndarray  # (M1, M2) second-level words

    @property
    def states(self) -> np.ndarray:
        """(M1, M2) state indices of the Top, in rank order."""
        return (self.top1[:, None].astype(np.int64) << self.N2) | self.top2.astype(np.int64)

    @property
    def size(self) -> int:
        return self.M1 * self.M2

    def top_mask(self) -> np.ndarray:
        m = np.zeros(1 << (self.N1 + self.N2), dtype=bool)
        m[self.states.ravel()] = True
        return m

    def cylinder_mask(self, x1: int) -> np.ndarray:
        m = np.zeros(1 << (self.N1 + self.N2), dtype=bool)
        w = int(self.top1[x1])
        m[w << self.N2:(w + 1) << self.N2] = True
        return m

    def wbar_mask(self) -> np.ndarray:
        m = np.zeros(1 << (self.N1 + self.N2), dtype=bool)
        for w in self.top1:
            m[int(w) << self.N2:(int(w) + 1) << self.N2] = True
        return m

    def locate(self, state: int) -> tuple[int, int] | None:
        """Ranks ``(x1, x2)`` of a Top state, or None."""
        hit = np.argwhere(self.states == int(state))
        return None if hit.size == 0 else (int(hit[0, 0]), int(hit[0, 1]))

    def block_of(self, state: int) -> int | None:
        """Rank x1 of the top cylinder containing ``state``, or None."""
        w1 = int(state) >> self.N2
        hit = np.flatnonzero(self.top1 == w1)
        return None if hit.size == 0 else int(hit[0])


def rank_top(env: GremEnvironment, M1: int, M2: int) -> tuple[RankedMap, TopSpec]:
    pr = env.params
    if not (1 <= M1 <= 1 << pr.N1 and 1 <= M2 <= 1 << pr.N2):
        raise ParameterError(f"M1={M1}, M2={M2} exceed the cube sizes")
    level1 = rank_desc(env.xi1).astype(np.int32)
    rows = env.xi2_by_cylinder()[level1]
    level2 = np.argsort(-rows, axis=1, kind="stable").astype(np.int32)
    ranked = RankedMap(level1, level2)
    top = TopSpec(M1, M2, pr.N1, pr.N2, level1[:M1].copy(), level2[:M1, :M2].copy())
    return ranked, top


def top_is_degenerate(env: GremEnvironment, top: TopSpec) -> bool:
    """True if the Top is not separated strictly from the rest (ties in the ranking)."""
    x1 = np.sort(env.xi1)[::-1]
    if np.any(np.diff(x1[:top.M1 + 1]) == 0) if top.M1 < x1.size else np.any(np.diff(x1) == 0):
        return True
    cyl = env.xi2_by_cylinder()
    for w in top.top1:
        row = np.sort(cyl[int(w)])[::-1]
        k = min(top.M2 + 1, row.size)
        if np.any(np.diff(row[:k]) == 0):
            return True
    return False


# -- scaled weights -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScaledWeights:
    alpha1N: float
    alpha2N: float
    log_c1N: float
    log_c2N: float
    kappa: float
    zetaN: float
    psiN: float
    log_cbarN: float
    log_ctildeN: float
    log_gamma1: np.ndarray  # by first-level word
    log_gamma2: np.ndarray  # by state index

    @property
    def c1N(self) -> float:
        return math.exp(self.log_c1N)

    @property
    def c2N(self) -> float:
        return math.exp(self.log_c2N)

    @property
    def cbarN(self) -> float:
        return math.exp(self.log_cbarN)

    @property
    def ctildeN(self) -> float:
        return math.exp(self.log_ctildeN)

    @property
    def gamma1N(self) -> np.ndarray:
        return np.exp(self.log_gamma1)

    @property
    def gamma2N(self) -> np.ndarray:
        return np.exp(self.log_gamma2)

    def ranked_gamma1(self, ranked: RankedMap) -> np.ndarray:
        return np.exp(self.log_gamma1[ranked.level1])

    def ranked_gamma2(self, ranked: RankedMap, N2: int) -> np.ndarray:
        idx = (ranked.level1[:, None].astype(np.int64) << N2) | ranked.level2
        return np.exp(self.log_gamma2[idx])


def scaled_weights(env: GremEnvironment) -> ScaledWeights:
    pr = env.params
    a1 = alpha_n(pr.N1, pr.N, pr.a, pr.beta)
    a2 = alpha_n(pr.N2, pr.N, 1.0 - pr.a, pr.beta)
    lc1 = log_c(pr.N1, a1)
    lc2 = log_c(pr.N2, a2)
    zeta = zeta_from_beta(pr)
    # psi_N^{-1} = (N1/N2) exp(zeta + kappa/alpha_1) = (N1/N2) c_1 2^{N2}
    psi = math.exp(math.log(pr.N2 / pr.N1) - (lc1 + pr.N2 * math.log(2.0)))
    lg1 = lc1 + pr.beta * math.sqrt(pr.a * pr.N) * env.xi1
    lg2 = lc2 + pr.beta * math.sqrt((1.0 - pr.a) * pr.N) * env.xi2
    return ScaledWeights(
        alpha1N=a1,
        alpha2N=a2,
        log_c1N=lc1,
        log_c2N=lc2,
        kappa=KAPPA,
        zetaN=zeta,
        psiN=psi,
        log_cbarN=lc1 + pr.N2 * math.log(2.0) + lc2,
        log_ctildeN=lc1 - pr.beta ** 2 * pr.N * (1.0 - pr.a) / 2.0,
        log_gamma1=lg1,
        log_gamma2=lg2,
    )


# -- limiting cascade -----------------------------------------------------------------

def ppp_decreasing(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Decreasing points of a PPP with intensity ``alpha x^{-1-alpha}``, along the last axis."""
    e = rng.standard_exponential(size)
    return np.cumsum(e, axis=-1) ** (-1.0 / alpha)


def ppp_tail_mean(alpha: float, last_point) -> np.ndarray:
    """Expected sum of the PPP points below ``last_point``."""
    y = np.asarray(last_point, dtype=float)
    return alpha / (1.0 - alpha) * y ** (1.0 - alpha)


@dataclass(frozen=True, eq=False)
class LimitCascade:
    alpha1: float
    alpha2: float
    gamma1: np.ndarray  # (K1,)
    gamma2: np.ndarray  # (K1, K2)

    @property
    def truncation(self) -> tuple[int, int]:
        return self.gamma2.shape

    def gamma2_tilde(self, p: float) -> np.ndarray:
        return self.gamma2 / (1.0 - p)

    def gamma1_hat(self, p: float) -> np.ndarray:
        return self.gamma1 / p

    def tail_report(self) -> dict:
        """Expected mass beyond the truncation, level by level."""
        t1 = float(ppp_tail_mean(self.alpha1, self.gamma1[-1]))
        t2 = ppp_tail_mean(self.alpha2, self.gamma2[:, -1])
        return {
            "K1": self.gamma2.shape[0],
            "K2": self.gamma2.shape[1],
            "gamma1_tail_mean": t1,
            "gamma1_kept": float(self.gamma1.sum()),
            "gamma2_tail_mean_max": float(t2.max()),
            "gamma2_kept_min": float(self.gamma2.sum(axis=1).min()),
        }


def sample_limit_cascade(alpha1: float, alpha2: float, K1: int = 64, K2: int = 64, seed=0) -> LimitCascade:
    """Truncated two-level Poisson cascade.

    ``seed`` may be an int (a derived stream is used) or a Generator.
    """
    if not 0.0 < alpha1 < alpha2 < 1.0:
        raise ParameterError("need 0 < alpha1 < alpha2 < 1")
    if K1 < 1 or K2 < 1:
        raise ParameterError("truncation sizes must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else derive_stream(int(seed), "limit_cascade")
    g1 = ppp_decreasing(alpha1, K1, rng)
    g2 = ppp_decreasing(alpha2, (K1, K2), rng)
    return LimitCascade(alpha1, alpha2, g1, g2)


# -- distance diagnostic ----------------------------------------------------------------

def hamming(u: int, v: int) -> int:
    return int(u ^ v).bit_count()


@dataclass
class DistanceReport:
    level: int
    block: int | None
    n: int
    pairs: int
    max_rel_dev: float
    delta: float
    zero_distance: bool
    within: bool


def _pair_report(words, n, level, block):
    words = [int(w) for w in words]
    if len(words) < 2:
        return None
    d_i = 1 << len(words)
    delta = 2.0 * math.sqrt(d_i / n) * math.log(n) if n > 1 else math.inf
    devs, zero = [], False
    for i in range(len(words)):
        for j in range(i + 1, len(words)):
            d = hamming(words[i], words[j])
            zero |= d == 0
            devs.append(abs(d - n / 2) / (n / 2))
    worst = max(devs)
    return DistanceReport(level, block, n, len(devs), worst, delta, zero, (worst <= delta) and not zero)


def top_distance_diagnostic(top: TopSpec) -> list[DistanceReport]:
    """Pairwise Hamming distances within ``T_1`` and each ``pi_2 T^{x1}``."""
    out = []
    r = _pair_report(top.top1, top.N1, 1, None)
    if r is not None:
        out.append(r)
    for x1 in range(top.M1):
        r = _pair_report(top.top2[x1], top.N2, 2, x1)
        if r is not None:
            out.append(r)
    return out


__all__ = [name for name in dir() if not name.startswith("_")]
