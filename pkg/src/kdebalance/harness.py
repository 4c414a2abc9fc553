"""Simulation study comparing complete randomization, rerandomization and the
KDE-based partition by the mean squared error of the difference-in-mean
estimator.

Responses follow ``y = h(z) + alpha * x + eps`` for a linear, quadratic or
sinusoidal mean function ``h``, or for an external table of observed
responses standing in for ``h(z) + eps``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Sequence

import numpy as np

from .baselines import RerandomizeConfig, randomize, rerandomize
from .criterion import Partition, balance_report, moment_discrepancy
from .data import CovariateTable
from .errors import DataError, DimensionMismatch
from .inference import Design, diff_in_mean, random_design
from .kernel_gram import gram_from_covariates
from .solvers import AnnealConfig, SolverConfig, kde_partition

log = logging.getLogger(__name__)

MODEL_KINDS = ("linear", "quadratic", "sinusoidal", "external")
METHODS = ("random", "rerandom", "kde")

DEFAULT_RANGES = {
    "linear": (-2.0, 2.0),
    "quadratic": (-2.0, 2.0),
    "sinusoidal": (-1.0, 1.0),
    "phase": (0.0, 2.0 * math.pi),
}


@dataclass(frozen=True)
class SimulationModel:
    kind: str
    alpha: float = 2.0
    coeffs: dict[str, Any] = field(default_factory=dict)
    sigma: float = 0.0
    external_h: np.ndarray | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DataError(f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.kind == "external" and self.external_h is None:
            raise DataError("external model needs a response table")
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def mean(self, cov: CovariateTable) -> np.ndarray:
        """The mean function ``h`` at every unit."""
        z = cov.values
        c = self.coeffs
        if self.kind == "external":
            h = np.asarray(self.external_h, dtype=float)
            if h.size != z.shape[0]:
                raise DimensionMismatch(f"external response has {h.size} rows, covariates {z.shape[0]}")
            return h
        d = z.shape[1]
        need = {"linear": d + 1, "quadratic": d + 1}.get(self.kind)
        if need is not None and len(c["beta"]) != need:
            raise DimensionMismatch(f"{self.kind} model has {len(c['beta'])} betas, expected {need}")
        if self.kind == "linear":
            beta = np.asarray(c["beta"])
            return beta[0] + z @ beta[1:]
        if self.kind == "quadratic":
            beta, gamma, theta = (np.asarray(c[k]) for k in ("beta", "gamma", "theta"))
            h = beta[0] + z @ beta[1:] + (z**2) @ gamma
            for t, (k, m) in zip(theta, combinations(range(d), 2)):
                h = h + t * z[:, k] * z[:, m]
            return h
        gamma = np.asarray(c["gamma"])
        if gamma.size != d:
            raise DimensionMismatch(f"sinusoidal model has {gamma.size} gammas for d={d}")
        b0, b1 = c["beta"]
        return b0 + b1 * np.sin(c["phi"] + math.pi * (z @ gamma))

    def subset(self, index) -> "SimulationModel":
        if self.external_h is None:
            return self
        return SimulationModel(
            self.kind, self.alpha, self.coeffs, self.sigma,
            np.asarray(self.external_h)[np.asarray(index)], self.name,
        )


def gen_covariates(N: int, d: int, seed) -> CovariateTable:
    """``N x d`` i.i.d. standard normal covariates.

    Rows are drawn in order, so a larger ``N`` with the same seed extends
    the smaller table.
    """
    if N < 2:
        raise DataError("need N >= 2")
    rng = np.random.default_rng(seed)
    return CovariateTable(rng.standard_normal((N, d)))


def gen_coefficients(kind: str, seed, d: int = 2, ranges=None, alpha: float = 2.0, sigma: float = 0.0) -> SimulationModel:
    if kind == "external":
        raise DataError("external models take their responses from data; use external_model()")
    if kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {kind!r}")
    r = dict(DEFAULT_RANGES)
    r.update(ranges or {})
    rng = np.random.default_rng(seed)
    lo, hi = r[kind]
    if kind == "linear":
        coeffs = {"beta": rng.uniform(lo, hi, d + 1)}
    elif kind == "quadratic":
        coeffs = {
            "beta": rng.uniform(lo, hi, d + 1),
            "gamma": rng.uniform(lo, hi, d),
            "theta": rng.uniform(lo, hi, d * (d - 1) // 2),
        }
    else:
        coeffs = {
            "beta": rng.uniform(lo, hi, 2),
            "gamma": rng.uniform(lo, hi, d),
            "phi": float(rng.uniform(*r["phase"])),
        }
    return SimulationModel(kind, alpha=alpha, coeffs=coeffs, sigma=sigma)


def external_model(h, alpha: float = 2.0, name: str | None = None) -> SimulationModel:
    """Observed responses used as ``h(z) + eps``; no extra noise is added."""
    return SimulationModel("external", alpha=alpha, external_h=np.asarray(h, dtype=float), name=name)


def respond(model: SimulationModel, cov: CovariateTable, design: Design, seed=None) -> np.ndarray:
    x = design.x
    if x.size != cov.n_units:
        raise DimensionMismatch(f"design has {x.size} units, covariates {cov.n_units}")
    y = model.mean(cov) + model.alpha * x
    if model.sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, model.sigma, x.size)
    return y


@dataclass(frozen=True)
class StudyConfig:
    N_grid: Sequence[int]
    m: int
    methods: Sequence[str] = METHODS
    seed: int = 0
    d: int = 2
    coefficient_ranges: dict[str, tuple[float, float]] | None = None
    acceptance_prob: float = 0.01
    anneal_iters_per_unit: int = 500

    def __post_init__(self):
        if not self.N_grid:
            raise DataError("N_grid is empty")
        for N in self.N_grid:
            if N < 4 or N % 2:
                raise DataError(f"every N must be even and >= 4, got {N}")
        if self.m < 1:
            raise DataError("m must be >= 1")
        for meth in self.methods:
            if meth not in METHODS:
                raise DataError(f"unknown method {meth!r}; choose from {METHODS}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "N_grid": list(self.N_grid),
            "m": self.m,
            "methods": list(self.methods),
            "seed": self.seed,
            "d": self.d,
            "coefficient_ranges": self.coefficient_ranges,
            "acceptance_prob": self.acceptance_prob,
            "anneal_iters_per_unit": self.anneal_iters_per_unit,
        }


@dataclass
class StudyReport:
    config: StudyConfig
    models: list[SimulationModel]
    records: list[tuple[str, str, int, int, float]]
    aggregate: list[dict[str, Any]]
    partitions: dict[tuple[str, int], list[Partition]]

    def mse(self, model: str, method: str, N: int) -> float:
        for row in self.aggregate:
            if (row["model"], row["method"], row["N"]) == (model, method, N):
                return row["mse"]
        raise KeyError((model, method, N))

    def alpha_hats(self, model: str, method: str, N: int) -> np.ndarray:
        return np.array([r[4] for r in self.records if r[:3] == (model, method, N)])


def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) for p in parts])


def _study_partitions(method: str, cov: CovariateTable, m: int, cfg: StudyConfig, ss) -> list[Partition]:
    N = cov.n_units
    sizes = [N // 2, N // 2]
    rng = np.random.default_rng(ss)
    if method == "random":
        return [randomize(N, sizes, int(rng.integers(2**63 - 1))) for _ in range(m)]
    if method == "rerandom":
        return [
            rerandomize(cov, sizes, RerandomizeConfig(cfg.acceptance_prob, seed=int(rng.integers(2**63 - 1))))
            for _ in range(m)
        ]
    # studies anneal with a larger budget than the library default
    solver = SolverConfig(
        seed=int(rng.integers(2**63 - 1)),
        anneal=AnnealConfig(iters_per_chain=cfg.anneal_iters_per_unit * N),
    )
    return [kde_partition(gram_from_covariates(cov, 2), sizes, 2, solver)]


def run_study(cfg: StudyConfig, models, cov: CovariateTable | None = None) -> StudyReport:
    """Estimate the MSE of the difference-in-mean estimator for every model,
    method and sample size.

    Random and rerandom draw ``m`` partitions, each with a random level
    assignment. The KDE partition is computed once per ``N``; its ``m``
    designs differ only in the level assignment. All models are evaluated
    on the same designs. Without ``cov`` the covariates are standard normal
    draws fixed by ``cfg.seed``; with ``cov`` each ``N`` uses a seeded
    subsample of its rows.
    """
    models = [models] if isinstance(models, SimulationModel) else list(models)
    if not models:
        raise DataError("no models to simulate")
    if len({mod.label for mod in models}) != len(models):
        raise DataError("model labels must be unique")
    n_max = max(cfg.N_grid)
    if cov is None:
        if any(mod.kind == "external" for mod in models):
            raise DataError("external models need the covariate table they were observed with")
        cov = gen_covariates(n_max, cfg.d, _seed(cfg.seed, 0))
        subsets = {N: np.arange(N) for N in cfg.N_grid}
    else:
        if n_max > cov.n_units:
            raise DataError(f"N={n_max} exceeds the {cov.n_units} available units")
        subsets = {
            N: np.sort(np.random.default_rng(_seed(cfg.seed, 1, N)).choice(cov.n_units, N, replace=False))
            for N in cfg.N_grid
        }

    records, aggregate, partitions = [], [], {}
    for N in cfg.N_grid:
        idx = subsets[N]
        cov_n = cov.take(idx)
        sub_models = [mod.subset(idx) for mod in models]
        for k, method in enumerate(METHODS):
            if method not in cfg.methods:
                continue
            parts = _study_partitions(method, cov_n, cfg.m, cfg, _seed(cfg.seed, 2, N, k))
            partitions[(method, N)] = parts
            rng = np.random.default_rng(_seed(cfg.seed, 3, N, k))
            designs = [random_design(parts[r % len(parts)], rng) for r in range(cfg.m)]
            noise_seeds = rng.integers(0, 2**63 - 1, size=cfg.m)
            moments = [moment_discrepancy(cov_n, p) for p in parts]
            mean_moments = {key: float(np.mean([mo[key] for mo in moments])) for key in moments[0]}
            for mod in sub_models:
                est = np.array([
                    diff_in_mean(respond(mod, cov_n, dz, int(noise_seeds[r])), dz)
                    for r, dz in enumerate(designs)
                ])
                records.extend((mod.label, method, N, r, float(a)) for r, a in enumerate(est))
                row = {
                    "model": mod.label,
                    "method": method,
                    "N": N,
                    "m": cfg.m,
                    "mse": float(np.mean((mod.alpha - est) ** 2)),
                    "mean_alpha_hat": float(est.mean()),
                }
                row.update({f"moment:{key}": v for key, v in mean_moments.items()})
                aggregate.append(row)
            log.info("N=%d method=%s done", N, method)
    return StudyReport(cfg, models, records, aggregate, partitions)


def compare(
    cov: CovariateTable,
    model: SimulationModel,
    m: int,
    seed: int = 0,
    methods: Sequence[str] = METHODS,
    acceptance_prob: float = 0.01,
) -> dict[str, dict[str, Any]]:
    """Single-N comparison: MSE plus a balance report of each method's first partition."""
    N = cov.n_units
    cfg = StudyConfig([N], m, methods, seed, cov.n_covariates, acceptance_prob=acceptance_prob)
    report = run_study(cfg, model, cov=cov)
    gram = gram_from_covariates(cov, 2)
    out = {}
    for method in cfg.methods:
        part = report.partitions[(method, N)][0]
        out[method] = {
            "mse": report.mse(model.label, method, N),
            "report": balance_report(cov, gram, part, method, seed=seed).to_dict(),
        }
    return out

