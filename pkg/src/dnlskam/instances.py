"""Random admissible solver instances and the solver-versus-oracle comparison."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fourier import TorusFourier, gamma_truncate, random_fourier
from .homological import (apply_large_variable, apply_liu_yuan, dense_oracle_large_variable,
                          dense_oracle_solve, l1_ball, relative_l2_error, solve_large_variable,
                          solve_liu_yuan, solve_shifted)

SOLVERS = ("shifted", "large_variable", "liu_yuan")

# minimal distance of lam from resonances
_GAP = 0.25
# golden-ratio style frequencies keep the small divisors of the test problems tame
_BASE_OMEGA = (1.0, math.sqrt(2.0) - 1.0, (math.sqrt(5.0) - 1.0) / 2.0, math.sqrt(3.0) - 1.0)


@dataclass
class Instance:
    solver: str
    omega: np.ndarray
    lam: complex
    stages: list
    p: TorusFourier
    K: int


def random_instance(rng: np.random.Generator, n: int, K: int, solver: str) -> Instance:
    """A well-posed instance: ``lam`` stays ``_GAP`` away from resonances and the variable part is small."""
    if not 1 <= n <= len(_BASE_OMEGA):
        raise ValueError(f"n must be between 1 and {len(_BASE_OMEGA)}")
    idx = tuple(range(1, n + 1))
    omega = np.array(_BASE_OMEGA[:n]) * (1.0 + 0.01 * rng.uniform(-1, 1, n))
    # keep lam at distance >= gap from every resonance <k, omega> of the working ball
    kw = l1_ball(n, K + 4) @ omega
    while True:
        lam = complex(rng.uniform(5.0, 15.0))
        if np.abs(kw - lam.real).min() >= _GAP and np.abs(kw + lam.real).min() >= _GAP:
            break
    p = random_fourier(rng, idx, K, 6, 1.0, 0.5)
    if solver == "shifted":
        stages = []
    elif solver == "large_variable":
        stages = [random_fourier(rng, idx, 3, 3, 0.02, 0.5, real=False, zero_average=True)]
    elif solver == "liu_yuan":
        lam = lam + 0.1j
        stages = [random_fourier(rng, idx, 3, 3, 0.5, 0.5, real=False, zero_average=True)]
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return Instance(solver, omega, lam, stages, p, K)


def solve_instance(inst: Instance, report: dict | None = None) -> TorusFourier:
    if inst.solver == "shifted":
        u = solve_shifted(inst.omega, inst.lam, inst.p, None, report)
        return gamma_truncate(u.with_cutoff(max(u.cutoff, inst.K)), inst.K)[0]
    if inst.solver == "large_variable":
        return solve_large_variable(inst.omega, inst.lam, inst.stages, inst.p, K=inst.K, report=report)
    return solve_liu_yuan(inst.omega, inst.lam, inst.stages, inst.p, K=inst.K, report=report)


def oracle_instance(inst: Instance, report: dict | None = None) -> TorusFourier:
    """Dense solve; the shifted equation is the large-variable one with ``a = 0``."""
    idx = inst.p.index_set
    if inst.solver == "liu_yuan":
        mu = inst.stages[0] if inst.stages else TorusFourier(idx, 0)
        return dense_oracle_solve(inst.omega, inst.lam, mu, inst.p, inst.K, report)
    a = inst.stages[0] if inst.stages else TorusFourier(idx, 0)
    return dense_oracle_large_variable(inst.omega, inst.lam, a, inst.p, inst.K, report)


def equation_residual(inst: Instance, u: TorusFourier) -> float:
    """Relative l2 residual of the instance's equation on the retained modes ``|k| <= K``."""
    idx = inst.p.index_set
    if inst.solver == "liu_yuan":
        mu = inst.stages[0] if inst.stages else TorusFourier(idx, 0)
        lhs = apply_liu_yuan(u, inst.omega, inst.lam, mu, inst.K)
    else:
        a = inst.stages[0] if inst.stages else TorusFourier(idx, 0)
        lhs = apply_large_variable(u, inst.omega, inst.lam, a, inst.K)
    rhs = gamma_truncate(inst.p, inst.K)[0]
    return relative_l2_error(lhs, rhs)


@dataclass
class OracleSummary:
    n: int
    K: int
    cases: int
    max_deviation: dict = field(default_factory=dict)
    max_residual: dict = field(default_factory=dict)
    seconds: float = 0.0

    def worst(self) -> float:
        return max(self.max_deviation.values(), default=0.0)

    def as_dict(self, timings: bool = False) -> dict:
        d = {"n": self.n, "K": self.K, "cases": self.cases, "max_deviation": self.max_deviation,
             "max_residual": self.max_residual}
        if timings:
            d["seconds"] = self.seconds
        return d


def compare_with_oracle(n: int, K: int, cases: int, seed: int = 0, solvers=SOLVERS) -> OracleSummary:
    """Run every solver on ``cases`` random instances and record the worst oracle deviation."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, n, K])
    out = OracleSummary(n, K, cases)
    for solver in solvers:
        dev = res = 0.0
        for _ in range(cases):
            inst = random_instance(rng, n, K, solver)
            u = solve_instance(inst)
            ref = oracle_instance(inst)
            dev = max(dev, relative_l2_error(u, ref))
            res = max(res, equation_residual(inst, u))
        out.max_deviation[solver] = dev
        out.max_residual[solver] = res
    out.seconds = time.perf_counter() - t0
    return out
