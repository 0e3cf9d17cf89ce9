"""Acceptance suite: one pass/fail line per criterion at master seed 12345.

Each criterion runs the matching experiment with the packaged default
configuration.  Experiments shared by two criteria run once.  Run directly
(``python tests/test_acceptance.py``) to print the criterion lines without
pytest.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from gremlab.entrance import trap_kernel
from gremlab.harness import load_config, run_experiment, section

SEED = 12345


@lru_cache(maxsize=None)
def experiment(name):
    t0 = time.perf_counter()
    res = run_experiment(name, load_config(), SEED)
    return res, time.perf_counter() - t0


def _line(k, ok, checks, extra=""):
    body = "; ".join(f"{c.name} = {c.value:.4g} (tol {c.tolerance:.4g})" for c in checks)
    if extra:
        body = f"{body}; {extra}" if body else extra
    return f"criterion {k}: {'PASS' if ok else 'FAIL'}  {body}"


def _select(res, *prefixes):
    return [c for c in res.checks if c.name.startswith(prefixes)]


def criterion_1():
    res, _ = experiment("ehrenfest-check")
    return res.passed, res.checks, ""


def criterion_2():
    res, _ = experiment("pi-check")
    return res.passed, res.checks, ""


def criterion_3():
    res, dt = experiment("env-diagnostics")
    cs = _select(res, "detailed balance")
    # the timed run also covers the Gumbel sample, so this bound is conservative
    return all(c.passed for c in cs) and dt < 5.0, cs, f"runtime {dt:.2f} s (< 5 s)"


def criterion_4():
    sec = section(load_config(), "trap-sim")
    t0 = time.perf_counter()
    P = trap_kernel(2, 2, 1.0, [2.0, 1.0]).transition
    Pp = trap_kernel(2, 2, 1.0, [2.0, 1.0], convention="printed").transition
    rows = float(np.max(np.abs(P.sum(axis=1) - 1.0)))
    defect = float(np.max(np.abs(Pp.sum(axis=1) - 1.0)))
    hand = float(np.max(np.abs(P[0] - [5 / 11, 5 / 11, 1 / 22, 1 / 22])))
    dt = time.perf_counter() - t0
    ok = (rows <= sec.float("row_tolerance") and defect >= sec.float("printed_min_defect")
          and hand <= sec.float("hand_tolerance") and dt < 1.0)
    res, _ = experiment("trap-sim")
    cs = _select(res, "departure", "printed", "2x2")
    return ok and all(c.passed for c in cs), cs, f"kernel runtime {dt * 1e3:.2f} ms"


def criterion_5():
    res, dt = experiment("entrance-validate")
    cs = _select(res, "cylinder entrance")
    return all(c.passed for c in cs), cs, ""


def criterion_6():
    res, dt = experiment("entrance-validate")
    cs = _select(res, "factorised entrance")
    return all(c.passed for c in cs), cs, f"experiment runtime {dt:.0f} s"


def criterion_7():
    res, _ = experiment("kproc-equilibrium")
    return res.passed, res.checks, ""


def criterion_8():
    res, _ = experiment("k2-restricted")
    return res.passed, res.checks, ""


def criterion_9():
    res, dt = experiment("aging-curve")
    worst = max(c.value for c in res.checks if "|Pi" in c.name)
    shrink = _select(res, *(f"{r} gaps" for r in ("AboveFT", "AtFT", "BelowFT")))
    return res.passed, shrink, f"max gap at tw=1e-3 {worst:.4f} (tol 0.02); runtime {dt:.0f} s"


def criterion_10():
    res, dt = experiment("clock-scaling")
    return res.passed, res.checks, f"runtime {dt:.0f} s"


def criterion_11():
    res, dt = experiment("env-diagnostics")
    cs = _select(res, "Gumbel")
    extra = _select(res, "finite-size")
    note = "; ".join(f"[diagnostic] {c.name} = {c.value:.4g}" for c in extra)
    return all(c.passed for c in cs) and dt < 60.0, cs, note


def criterion_12():
    res, _ = experiment("intermediate-lln")
    return res.passed, res.checks, ""


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 13)}


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, record_criterion):
    ok, checks, extra = CRITERIA[k]()
    record_criterion(k, _line(k, ok, checks, extra))
    assert ok, _line(k, ok, checks, extra)


if __name__ == "__main__":
    for k, fn in CRITERIA.items():
        ok, checks, extra = fn()
        print(_line(k, ok, checks, extra), flush=True)
