"""Command-line experiments: configuration, seeding, orchestration, output.

Each experiment reads its section of an INI configuration, runs with streams
derived from the master seed, and returns tables plus a list of checks.
Outputs are written to a temporary directory and moved into place only when
the run finishes, together with a JSON manifest.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from functools import partial
from importlib import resources

import numpy as np
from scipy import stats

from . import __version__
from .aging import (AgingModel, aging_curve, check_intermediate_beta, clock_samples, intermediate_lln,
                    synthetic_control, tail_index)
from .analytics import (ehrenfest_pgf, ehrenfest_pgf_linear, pi_analytic, pi_bruteforce)
from .dynamics import balance_report
from .entrance import (entrance_factorization, trap_jump_sequence, trap_kernel, trap_simulate,
                       stationary_law, transition_counts, validate_cylinder_entrance)
from .environment import (ABOVE_FT, AT_FT, BELOW_FT, ParameterError, derive_params, rank_top,
                          sample_environment, sample_level1_field, sample_limit_cascade, u_scale, u_scale_inv)
from .kprocess import (KSpec, build_limit_specs, occupation_tv, restricted_transitions, simulate_k,
                       simulate_k2, simulate_product_limit)
from .rng import chunk_map, derive_stream

SCHEMA_VERSION = 1
EXPERIMENTS = ("env-diagnostics", "entrance-validate", "trap-sim", "kproc-equilibrium", "k2-restricted",
               "aging-curve", "clock-scaling", "ehrenfest-check", "pi-check", "intermediate-lln")


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------------

def default_config_text() -> str:
    return resources.files("gremlab").joinpath("default.ini").read_text()


def load_config(path: str | None = None) -> configparser.ConfigParser:
    """Defaults overlaid with the file at ``path``; unknown sections are rejected."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(default_config_text())
    if path is not None:
        user = configparser.ConfigParser(inline_comment_prefixes=("#",))
        user.optionxform = str
        try:
            with open(path) as fh:
                user.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in user.sections():
            if sec not in cp:
                raise ConfigError(f"unknown config section [{sec}]")
            for k, v in user[sec].items():
                if k not in cp[sec]:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
                cp[sec][k] = v
    return cp


@dataclass
class Section:
    """Typed view of one config section."""

    name: str
    raw: dict

    def _get(self, key):
        try:
            return self.raw[key]
        except KeyError:
            raise ConfigError(f"missing key {key!r} in [{self.name}]") from None

    def float(self, key) -> float:
        try:
            return float(self._get(key))
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} is not a number") from None

    def int(self, key) -> int:
        v = self.float(key)
        if v != int(v):
            raise ConfigError(f"[{self.name}] {key} must be an integer")
        return int(v)

    def floats(self, key) -> list[float]:
        try:
            return [float(x) for x in self._get(key).split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be a comma-separated list of numbers") from None

    def strs(self, key) -> list[str]:
        return [x.strip() for x in self._get(key).split(",") if x.strip()]

    def str(self, key) -> str:
        return self._get(key).strip()

    def text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in sorted(self.raw.items()))


STRING_KEYS = {"format", "regimes", "method", "cascade_tag"}


def validate_section(sec: Section) -> None:
    """Every non-string key must parse as a number or a list of numbers."""
    for key in sec.raw:
        if key not in STRING_KEYS:
            vals = sec.floats(key)
            if not vals:
                raise ConfigError(f"[{sec.name}] {key} is empty")


def section(cp: configparser.ConfigParser, name: str) -> Section:
    if name not in cp:
        raise ConfigError(f"no config section [{name}]")
    return Section(name, dict(cp[name]))


# -- results -------------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class ExperimentResult:
    experiment: str
    checks: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def check(self, name, value, tolerance, passed, detail=""):
        self.checks.append(Check(name, float(value), float(tolerance), bool(passed), detail))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def table_csv(t: Table) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: gremlab.{t.name}/{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.header)
    for r in t.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def table_json(t: Table) -> str:
    rows = [{h: (float(v) if isinstance(v, (np.floating,)) else v.item() if isinstance(v, np.generic) else v)
             for h, v in zip(t.header, r)} for r in t.rows]
    return json.dumps({"schema": f"gremlab.{t.name}/{SCHEMA_VERSION}", "rows": rows}, indent=1) + "\n"


# -- experiments ---------------------------------------------------------------------------

def run_ehrenfest(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("ehrenfest-check")
    t0 = time.perf_counter()
    rows, worst = [], 0.0
    for n2 in range(1, sec.int("n2_max") + 1):
        for t in sec.floats("t_grid"):
            oracle = ehrenfest_pgf_linear(n2, t)
            for i in range(1, n2 + 1):
                v = ehrenfest_pgf(n2, i, t)
                d = abs(v - oracle[i])
                worst = max(worst, d)
                rows.append((n2, i, t, v, oracle[i], d))
    tol = sec.float("tolerance")
    res.tables.append(Table("ehrenfest", ["n2", "i", "t", "pgf", "oracle", "abs_diff"], rows))
    res.check("max |pgf - oracle|", worst, tol, worst <= tol)
    for (n2, i, t, exact) in ((1, 1, 0.3, 0.3), (2, 1, 0.5, 2 / 7), (3, 1, 0.5, 11 / 58)):
        d = abs(ehrenfest_pgf(n2, i, t) - exact)
        res.check(f"anchor n2={n2} i={i} t={t}", d, tol, d <= tol)
    dt = time.perf_counter() - t0
    res.check("runtime seconds", dt, sec.float("max_seconds"), dt < sec.float("max_seconds"))
    return res


def run_pi(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("pi-check")
    t0 = time.perf_counter()
    rows, worst = [], 0.0
    for n2 in range(1, sec.int("n2_max") + 1):
        for lp in sec.floats("lam_primes"):
            a, b = pi_analytic(n2, lp), pi_bruteforce(n2, lp)
            worst = max(worst, abs(a - b))
            rows.append((n2, lp, a, b, abs(a - b)))
    tol = sec.float("tolerance")
    res.tables.append(Table("pi", ["n2", "lam_prime", "analytic", "bruteforce", "abs_diff"], rows))
    res.check("max |analytic - bruteforce|", worst, tol, worst <= tol)
    for n2, lp, exact in ((1, 1.0, 2 / 3), (2, 1.0, 3 / 7)):
        d = abs(pi_analytic(n2, lp) - exact)
        res.check(f"anchor n2={n2} lam'={lp}", d, tol, d <= tol)
    dt = time.perf_counter() - t0
    res.check("runtime seconds", dt, sec.float("max_seconds"), dt < sec.float("max_seconds"))
    return res


def gumbel_sample(N1: int, n_env: int, seed: int) -> np.ndarray:
    """``u_{N1}^{-1}`` of the first-level maximum over independent environments."""
    out = np.empty(n_env)
    for e in range(n_env):
        env_seed = int(derive_stream(seed, "gumbel.environment", e).integers(2 ** 62))
        out[e] = u_scale_inv(N1, float(sample_level1_field(N1, env_seed).max()))
    return out


def run_env_diagnostics(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("env-diagnostics")
    rows = []
    worst = 0.0
    for N in (int(x) for x in sec.floats("balance_sizes")):
        params = derive_params(N, sec.float("balance_p"), sec.float("balance_a"), sec.float("balance_beta"))
        for e in range(sec.int("balance_environments")):
            env_seed = int(derive_stream(seed, "balance.environment", N * 1000 + e).integers(2 ** 62))
            rep = balance_report(sample_environment(params, env_seed))
            worst = max(worst, rep.rhd_balance, rep.chain_balance, rep.row_sum)
            rows.append((N, env_seed, rep.edges, rep.rhd_balance, rep.chain_balance, rep.row_sum))
    tol = sec.float("balance_tolerance")
    res.tables.append(Table("balance", ["N", "env_seed", "edges", "rhd_balance", "chain_balance", "row_sum"], rows))
    res.check("detailed balance and stochasticity", worst, tol, worst <= tol)

    x = gumbel_sample(sec.int("gumbel_N1"), sec.int("gumbel_environments"), seed)
    ks = stats.kstest(x, stats.gumbel_r.cdf)
    level = sec.float("gumbel_level")
    q = np.linspace(0.05, 0.95, 19)
    res.tables.append(Table("gumbel", ["quantile", "empirical", "gumbel"],
                            [(qq, float(np.quantile(x, qq)), float(stats.gumbel_r.ppf(qq))) for qq in q]))
    res.check("Gumbel KS p-value", ks.pvalue, level, ks.pvalue > level, f"D={ks.statistic:.4f}")
    # the same sample against the exact law Phi(u_N(x))^(2^N1) of the finite-size maximum
    n1 = sec.int("gumbel_N1")
    exact = stats.kstest(x, lambda y: np.exp(2.0 ** n1 * stats.norm.logcdf(u_scale(n1, y))))
    res.check("finite-size maximum KS p-value", exact.pvalue, level, exact.pvalue > level,
              f"D={exact.statistic:.4f}")
    return res


def run_trap(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("trap-sim")
    M1, M2, psi = sec.int("M1"), sec.int("M2"), sec.float("psi")
    g1 = np.array(sec.floats("gamma1"))
    g2 = np.array(sec.floats("gamma2"))
    K = trap_kernel(M1, M2, psi, g1, g2)
    Kp = trap_kernel(M1, M2, psi, g1, g2, convention="printed")
    P = K.transition
    rs = float(np.max(np.abs(P.sum(axis=1) - 1.0)))
    rs_p = float(np.max(np.abs(Kp.transition.sum(axis=1) - 1.0)))
    res.check("departure rows sum to 1", rs, sec.float("row_tolerance"), rs <= sec.float("row_tolerance"))
    res.check("printed variant defect", rs_p, sec.float("printed_min_defect"), rs_p >= sec.float("printed_min_defect"))
    if M1 == 2 and M2 == 2:
        row = P[0]
        d = max(abs(row[0] - sec.float("hand_same")), abs(row[1] - sec.float("hand_same")),
                abs(row[2] - sec.float("hand_cross")), abs(row[3] - sec.float("hand_cross")))
        res.check("2x2 hand values", d, sec.float("hand_tolerance"), d <= sec.float("hand_tolerance"))
    labels = K.labels()
    res.tables.append(Table("trap_kernel", ["from"] + labels, [(lab,) + tuple(r) for lab, r in zip(labels, P)]))

    n = M1 * M2
    seq = trap_jump_sequence(K, sec.int("jumps"), derive_stream(seed, "trap.jumps"))
    c = transition_counts(seq, n)
    rowsum = c.sum(axis=1, keepdims=True)
    emp = c / np.maximum(rowsum, 1)
    se = np.sqrt(P * (1 - P) / np.maximum(rowsum, 1))
    z = np.divide(np.abs(emp - P), se, out=np.zeros_like(P), where=se > 0)
    z[(se == 0) & (emp != P)] = np.inf
    band = sec.float("stderr_band")
    res.check("transition frequencies (max z)", float(z.max()), band, float(z.max()) <= band)
    res.tables.append(Table("trap_frequencies", ["from", "to", "kernel", "empirical", "stderr", "z"],
                            [(labels[i], labels[j], P[i, j], emp[i, j], se[i, j], z[i, j])
                             for i in range(n) for j in range(n)]))

    path = trap_simulate(K, g2, sec.float("occupation_horizon"), derive_stream(seed, "trap.path"))
    occ = path.occupation(n, sec.float("occupation_horizon"))
    pi = stationary_law(P)
    target = pi * g2 / np.sum(pi * g2)
    tv = occupation_tv(occ, target)
    res.check("occupation TV vs stationary x gamma2", tv, sec.float("occupation_tolerance"),
              tv <= sec.float("occupation_tolerance"))
    res.tables.append(Table("trap_occupation", ["state", "empirical", "predicted"],
                            [(labels[i], occ[i], target[i]) for i in range(n)]))
    return res


def _cyl_env(e, params, M1, M2, n_starts, seed):
    env_seed = int(derive_stream(seed, "entrance.cyl.environment", e).integers(2 ** 62))
    env = sample_environment(params, env_seed)
    _, top = rank_top(env, M1, M2)
    outside = np.flatnonzero(~top.wbar_mask())
    starts = derive_stream(seed, "entrance.cyl.starts", e).choice(outside, size=n_starts, replace=False)
    return env_seed, validate_cylinder_entrance(env, top, np.sort(starts), tolerance=float("inf"))


def _fact_env(e, params, M1, M2, seed):
    env_seed = int(derive_stream(seed, "entrance.fact.environment", e).integers(2 ** 62))
    env = sample_environment(params, env_seed)
    _, top = rank_top(env, M1, M2)
    return env_seed, entrance_factorization(env, top, ABOVE_FT)


def run_entrance(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("entrance-validate")
    N, a, M1, M2 = sec.int("N"), sec.float("a"), sec.int("M1"), sec.int("M2")

    params = derive_params(N, sec.float("cyl_p"), a, sec.float("cyl_beta"))
    tol = 2.0 / params.N1
    out = chunk_map(partial(_cyl_env, params=params, M1=M1, M2=M2, n_starts=sec.int("cyl_starts"), seed=seed),
                    range(sec.int("cyl_environments")), workers)
    rows, within = [], []
    for env_seed, erows in out:
        for r in erows:
            ok = abs(r.measured - r.predicted) <= tol
            within.append(ok)
            rows.append((env_seed, r.start, r.target, r.predicted, r.measured, r.residual, tol, ok))
    cover = float(np.mean(within))
    res.tables.append(Table("cylinder_entrance", ["env_seed", "start", "target", "predicted", "measured",
                                                  "residual", "tolerance", "pass"], rows))
    res.check("cylinder entrance: fraction within 2/N1", cover, sec.float("cyl_coverage"),
              cover >= sec.float("cyl_coverage"), f"N1={params.N1}, tolerance={tol:.4f}")

    params = derive_params(N, sec.float("fact_p"), a, sec.float("fact_beta"))
    out = chunk_map(partial(_fact_env, params=params, M1=M1, M2=M2, seed=seed),
                    range(sec.int("fact_environments")), workers)
    rows = []
    per_target: dict = {}
    for env_seed, frows in out:
        for r in frows:
            rows.append((env_seed, f"({r.target[0] + 1},{r.target[1] + 1})", r.measured, r.predicted,
                         r.predicted_exact))
            per_target.setdefault(r.target, []).append(abs(r.measured - r.predicted))
    res.tables.append(Table("entrance_factorization", ["env_seed", "target", "measured", "predicted_limit",
                                                       "predicted_exact"], rows))
    worst = max(float(np.mean(v)) for v in per_target.values())
    ftol = sec.float("fact_tolerance")
    res.check("factorised entrance: max over targets of mean |measured - nu1/M2|", worst, ftol, worst <= ftol)
    return res


def _cascade(sec: Section, seed: int, tag: str):
    return sample_limit_cascade(sec.float("alpha1"), sec.float("alpha2"), sec.int("K1"), sec.int("K2"),
                                seed=derive_stream(seed, tag))


def run_kproc(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("kproc-equilibrium")
    cas = _cascade(sec, seed, sec.str("cascade_tag"))
    p, psi, S = sec.float("p"), sec.float("psi"), sec.float("s_horizon")
    K1, K2 = cas.truncation
    n = K1 * K2
    target = (cas.gamma1[:, None] * cas.gamma2).ravel()
    target /= target.sum()
    ks = build_limit_specs(cas, p, psi, ABOVE_FT)
    path, _ = simulate_k(ks, S, derive_stream(seed, "kproc.weighted"))
    occ_k = path.occupation(n)
    k2 = build_limit_specs(cas, p, psi, AT_FT)
    r = simulate_k2(k2, S, derive_stream(seed, "kproc.k2"))
    occ_k2 = r.path.occupation(n)
    ps = build_limit_specs(cas, p, psi, BELOW_FT)
    rng = derive_stream(seed, "kproc.product")
    _, c = simulate_k(KSpec(ps.f3, np.ones(K1)), S, rng)
    q = np.sort(rng.random(sec.int("product_queries")) * c.total)
    smp = simulate_product_limit(ps, q, rng)
    occ_p = np.bincount(smp.x1 * K2 + smp.x2, minlength=n) / q.size
    occs = {"weighted": occ_k, "k2": occ_k2, "product": occ_p}
    tol = sec.float("tv_tolerance")
    for name, o in occs.items():
        tv = occupation_tv(o, target)
        res.check(f"TV {name} vs gamma1*gamma2", tv, tol, tv <= tol)
    names = list(occs)
    res.tables.append(Table("equilibrium_tv", ["a", "b", "tv"],
                            [(names[i], names[j], occupation_tv(occs[names[i]], occs[names[j]]))
                             for i in range(3) for j in range(i + 1, 3)]))
    res.tables.append(Table("equilibrium", ["x1", "x2", "target", "weighted", "k2", "product"],
                            [(k // K2 + 1, k % K2 + 1, target[k], occ_k[k], occ_k2[k], occ_p[k]) for k in range(n)]))
    res.info["tail"] = cas.tail_report()
    return res


def run_k2_restricted(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("k2-restricted")
    cas = _cascade(sec, seed, sec.str("cascade_tag"))
    p, psi = sec.float("p"), sec.float("psi")
    M1, M2 = sec.int("M1"), sec.int("M2")
    k2 = build_limit_specs(cas, p, psi, AT_FT)
    K1, K2 = k2.shape
    # restricted jumps per unit s: level-1 visits to the block times second-level jumps inside it
    f = k2.f
    per_s = M2 * float(np.sum(f[:M1]))
    S = sec.float("target_jumps") / per_s
    r = simulate_k2(k2, S, derive_stream(seed, "k2r.path"))
    rt = restricted_transitions(r.path.state, K2, M1, M2, min_jumps=sec.int("min_jumps"))
    P = trap_kernel(M1, M2, 1.0, f[:M1]).transition
    n_row = rt.counts.sum(axis=1, keepdims=True)
    se = np.sqrt(np.maximum(P * (1 - P), rt.matrix * (1 - rt.matrix)) / np.maximum(n_row, 1))
    z = np.divide(np.abs(rt.matrix - P), se, out=np.zeros_like(P), where=se > 0)
    z[(se == 0) & (rt.matrix != P)] = np.inf
    band = sec.float("stderr_band")
    res.check("restricted jumps", rt.jumps, sec.float("min_jumps"), rt.jumps >= sec.float("min_jumps"))
    res.check("restricted kernel (max z)", float(z.max()), band, float(z.max()) <= band)
    labels = [f"({i},{j})" for i in range(1, M1 + 1) for j in range(1, M2 + 1)]
    n = M1 * M2
    res.tables.append(Table("restricted", ["from", "to", "kernel", "empirical", "stderr", "z"],
                            [(labels[i], labels[j], P[i, j], rt.matrix[i, j], se[i, j], z[i, j])
                             for i in range(n) for j in range(n)]))
    res.info["s_horizon"] = S
    return res


def _aging_model(sec: Section, regime: str) -> AgingModel:
    K1 = sec.int("K1_below") if regime == BELOW_FT else sec.int("K1")
    return AgingModel(regime, sec.float("alpha1"), sec.float("alpha2"), sec.float("p"),
                      psi=sec.float("psi"), K1=K1, K2=sec.int("K2"))


def run_aging(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("aging-curve")
    tol = sec.float("tolerance")
    rows = []
    for regime in sec.strs("regimes"):
        model = _aging_model(sec, regime)
        cur = aging_curve(model, sec.floats("thetas"), sec.floats("tws"), sec.int("replicas"),
                          int(derive_stream(seed, f"aging.seed.{regime}").integers(2 ** 62)), workers)
        tw_min = min(sec.floats("tws"))
        for r in cur.rows:
            rows.append((r.regime, r.tw, r.theta, r.pi_hat, r.stderr, r.prediction, r.gap, r.bias, r.flagged))
            if r.tw == tw_min:
                res.check(f"{regime} tw={r.tw:g} theta={r.theta:g} |Pi - prediction|", r.gap, tol, r.gap <= tol)
        res.check(f"{regime} gaps shrink along tw", cur.mean_gaps[-1], cur.mean_gaps[0], cur.gaps_shrink,
                  "theta-averaged gaps " + ", ".join(f"{g:.4f}" for g in cur.mean_gaps))
    res.tables.append(Table("aging", ["regime", "tw", "theta", "pi_hat", "stderr", "prediction", "gap",
                                      "bias", "bias_flag"], rows))
    return res


def run_clock_scaling(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("clock-scaling")
    model = AgingModel(AT_FT, sec.float("alpha1"), sec.float("alpha2"), sec.float("p"), psi=sec.float("psi"),
                       K1=sec.int("K1"), K2=sec.int("K2"))
    frac, method, r = sec.float("tail_fraction"), sec.str("method"), sec.float("r")
    tol = sec.float("tolerance")
    ctol = sec.float("control_tolerance")
    rows = []
    for alpha in (model.alpha2, model.alpha1 * model.alpha2):
        fit = synthetic_control(alpha, sec.int("control_replicas"), seed, frac, method)
        err = abs(fit.index - alpha)
        res.check(f"synthetic control alpha={alpha:.4f}", err, ctol, err <= ctol and not fit.degenerate)
        rows.append(("synthetic", float("nan"), r, alpha, fit.index, fit.k) + (float("nan"),) * 3)
    targets = {"gamma_prime": model.alpha2, "weighted": model.alpha2, "gamma1": model.alpha1 * model.alpha2}
    for clock, target in targets.items():
        eps = sec.floats(f"epsilons_{clock}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilons_{clock} must be strictly decreasing")
        for e in eps:
            x = clock_samples(model, clock, e, r, sec.int(f"replicas_{clock}"),
                              int(derive_stream(seed, f"clock.seed.{clock}").integers(2 ** 62)))
            fit = tail_index(x, frac, method)
            qs = np.quantile(x, (0.25, 0.5, 0.75))
            rows.append((clock, e, r, target, fit.index, fit.k) + tuple(qs))
        err = abs(fit.index - target)
        res.check(f"{clock} index at eps={eps[-1]:g}", err, tol, err <= tol and not fit.degenerate,
                  f"fitted {fit.index:.4f}, target {target:.4f}")
    res.tables.append(Table("clock_scaling", ["clock", "epsilon", "r", "target", "index", "k", "q25", "q50", "q75"],
                            rows))
    res.info.update(tail_fraction=frac, method=method)
    return res


def run_lln(sec: Section, seed: int, workers: int = 1) -> ExperimentResult:
    res = ExperimentResult("intermediate-lln")
    N, p, a = sec.int("N"), sec.float("p"), sec.float("a")
    rows = intermediate_lln(N, p, a, sec.float("beta"), sec.floats("t_grid"), sec.int("environments"),
                            sec.int("walks"), seed)
    tol = sec.float("tolerance")
    tc = sec.float("t_check")
    for r in rows:
        if r.t == tc:
            gap = abs(r.scaled_sum - r.t)
            res.check(f"scaled sum at t={r.t:g}", gap, tol, gap <= tol, f"mean {r.scaled_sum:.4f} over environments")
    try:
        check_intermediate_beta(p, a, sec.float("beta_reject"))
        rejected, msg = False, ""
    except ParameterError as exc:
        rejected, msg = True, str(exc)
    res.check(f"beta={sec.float('beta_reject'):g} rejected", float(rejected), 1.0, rejected, msg)
    res.tables.append(Table("lln", ["t", "scaled_sum", "stderr", "rel_gap", "steps"],
                            [(r.t, r.scaled_sum, r.stderr, r.rel_gap, r.steps) for r in rows]))
    return res


RUNNERS = {
    "ehrenfest-check": run_ehrenfest,
    "pi-check": run_pi,
    "env-diagnostics": run_env_diagnostics,
    "trap-sim": run_trap,
    "entrance-validate": run_entrance,
    "kproc-equilibrium": run_kproc,
    "k2-restricted": run_k2_restricted,
    "aging-curve": run_aging,
    "clock-scaling": run_clock_scaling,
    "intermediate-lln": run_lln,
}


def run_experiment(name: str, cp: configparser.ConfigParser | None = None, seed: int | None = None,
                   workers: int = 1) -> ExperimentResult:
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    cp = load_config() if cp is None else cp
    if seed is None:
        seed = section(cp, "run").int("seed")
    return RUNNERS[name](section(cp, name), int(seed), workers)


# -- output --------------------------------------------------------------------------------

def config_hash(cp: configparser.ConfigParser, name: str, seed: int) -> str:
    text = f"{name}\nseed={seed}\n" + section(cp, name).text()
    return hashlib.sha256(text.encode()).hexdigest()


def write_outputs(result: ExperimentResult, out_dir: str, fmt: str, manifest: dict) -> list[str]:
    """Write tables and manifest into ``out_dir/<experiment>`` atomically."""
    os.makedirs(out_dir, exist_ok=True)
    final = os.path.join(out_dir, result.experiment)
    tmp = tempfile.mkdtemp(prefix=f".{result.experiment}.", dir=out_dir)
    try:
        files = []
        for t in result.tables:
            fname = f"{t.name}.{fmt}"
            body = table_csv(t) if fmt == "csv" else table_json(t)
            with open(os.path.join(tmp, fname), "w", newline="") as fh:
                fh.write(body)
            files.append({"file": fname, "sha256": hashlib.sha256(body.encode()).hexdigest()})
        manifest = dict(manifest, files=files)
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")
        if os.path.exists(final):
            old = final + ".old"
            shutil.rmtree(old, ignore_errors=True)
            os.replace(final, old)
            os.replace(tmp, final)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return [f["file"] for f in files] + ["manifest.json"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gremlab", description="GREM dynamics experiments")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="INI file overriding the defaults")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results")
    ap.add_argument("--format", choices=("csv", "json"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cp = load_config(args.config)
        run = section(cp, "run")
        seed = run.int("seed") if args.seed is None else args.seed
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        fmt = args.format or run.str("format")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown format {fmt!r}")
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        validate_section(section(cp, args.experiment))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t0 = time.time()
    try:
        result = run_experiment(args.experiment, cp, seed, args.workers)
    except (ConfigError, ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "experiment": args.experiment,
        "config_hash": config_hash(cp, args.experiment, seed),
        "seed": seed,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - t0, 3),
        "passed": result.passed,
        "checks": [c.__dict__ for c in result.checks],
        "info": result.info,
    }
    write_outputs(result, args.out, fmt, manifest)
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f"  ({c.detail})" if c.detail else ""
        print(f"{status}  {c.name}: {c.value:.6g} (tolerance {c.tolerance:.6g}){extra}")
    print(f"{args.experiment}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
