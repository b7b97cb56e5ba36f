"""Replication harness for Wald-test size experiments.

Each replication simulates a panel from the configured DGP, fits the
regularized VAR once, and runs every requested (estimator, variance) pair at
every horizon against a verified-null (cause, effect) pair. Replications get
deterministic seeds derived from (base_seed, rep_index), so results are
byte-identical regardless of worker count or scheduling.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import build_covariance_set
from .debias import (
    SelectionPair,
    TargetSpec,
    estimate_de_2s,
    estimate_de_ls,
    estimate_pds,
    fit_to_model,
)
from .errors import ExperimentError, HdgrangerError, UnstableModelError
from .inference import avar_closed_form_ls, avar_hac, avar_hc_2s, chi2_sf, wald
from .regularized import PenaltyConfig, first_step_lambda, estimate_var
from .var_core import DEFAULT_BURN_IN, DgpSpec, make_dgp, simulate, split_seed

__all__ = [
    "MC_METHODS",
    "McConfig",
    "McResult",
    "verify_null_pair",
    "run_size_experiment",
    "summarize",
]

# method tokens: estimator + variance route
MC_METHODS = ("de-ls-hac", "de2s-hac", "de2s-hc", "pds-hac", "oracle")

NULL_TOL_DEFAULT = 1e-6
MAX_FAILURE_FRACTION = 0.05


@dataclass
class McConfig:
    """One size experiment: DGP, sample size, methods, horizons, replications."""

    dgp: DgpSpec
    n: int
    horizons: tuple
    methods: tuple
    reps: int
    nominal_level: float = 0.05
    base_seed: int = 0
    workers: int = 0
    cause: int | None = None
    effect: int | None = None
    burn_in: int = DEFAULT_BURN_IN
    null_tol: float = NULL_TOL_DEFAULT
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    keep_records: bool = False

    def __post_init__(self) -> None:
        self.horizons = tuple(int(h) for h in self.horizons)
        self.methods = tuple(self.methods)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0.0 < self.nominal_level < 1.0:
            raise ValueError("nominal_level must lie in (0, 1)")
        for m in self.methods:
            if m not in MC_METHODS:
                raise ValueError(f"unknown method '{m}' (choose from {MC_METHODS})")
        if any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be >= 1")


@dataclass
class McResult:
    """Rejection frequencies with binomial standard errors per (method, horizon)."""

    config: McConfig
    rejection_rate: dict
    mc_stderr: dict
    reps_used: int
    failures: int
    records: list | None = None

    def rows(self) -> list[tuple]:
        """(method, h, n, rate, stderr) rows sorted by (method, n, h)."""
        out = []
        for method in sorted(set(k[0] for k in self.rejection_rate)):
            for h in sorted(h for (m, h) in self.rejection_rate if m == method):
                out.append(
                    (
                        method,
                        h,
                        self.config.n,
                        self.rejection_rate[(method, h)],
                        self.mc_stderr[(method, h)],
                    )
                )
        return out


def verify_null_pair(model, cause: int, effect: int, horizons, tol: float) -> None:
    """Check that the causal chain cause -> effect is a true null at every horizon.

    Reads the (effect, cause-lag) entries of J A^h from the true companion
    matrix; raises ExperimentError when any exceeds ``tol``.
    """
    from .covariance import build_covariance_set as _bcs

    covset = _bcs(model, h_max=max(horizons))
    sel = SelectionPair(model.d, model.p, cause)
    for h in horizons:
        beta = covset.beta_full(effect, h)[list(sel.r1_indices)]
        worst = float(np.max(np.abs(beta)))
        if worst > tol:
            raise ExperimentError(
                f"pair ({cause} -> {effect}) is not a null at h={h}: "
                f"max |beta| = {worst:.3e} > {tol:.1e}"
            )


def _run_replication(cfg: McConfig, rep: int) -> dict:
    """One replication; returns {(method, h): pvalue} plus an optional error."""
    seed = split_seed(cfg.base_seed, rep)
    model = make_dgp(cfg.dgp)
    d = model.d
    cause = 0 if cfg.cause is None else cfg.cause
    effect = d - 1 if cfg.effect is None else cfg.effect
    h_max = max(cfg.horizons)
    out: dict = {}

    if tuple(cfg.methods) == ("oracle",):
        return _oracle_replication(cfg, model, cause, effect, seed)

    panel = simulate(model, cfg.n, cfg.burn_in, seed).demeaned()
    fit = estimate_var(panel, model.p, cfg.penalty)
    try:
        covset = build_covariance_set(
            fit_to_model(fit), h_max=h_max, residual_count=fit.residuals.shape[0]
        )
    except UnstableModelError:
        # one re-penalized attempt with a doubled first-step penalty
        stronger = replace(cfg.penalty, lam=2.0 * first_step_lambda(d, cfg.n))
        fit = estimate_var(panel, model.p, stronger)
        covset = build_covariance_set(
            fit_to_model(fit), h_max=h_max, residual_count=fit.residuals.shape[0]
        )

    oracle_cov = None
    for h in cfg.horizons:
        target = TargetSpec(cause, effect, h, model.p)
        est_2s = est_ls = None
        for method in cfg.methods:
            if method == "oracle":
                if oracle_cov is None:
                    oracle_cov = build_covariance_set(model, h_max=h_max)
                out.update(_oracle_cell(cfg, oracle_cov, cause, effect, h, seed))
                continue
            if method == "de-ls-hac":
                if est_ls is None:
                    est_ls = estimate_de_ls(panel, fit, target, covset=covset)
                res = wald(est_ls, avar_hac(est_ls))
            elif method == "de2s-hac":
                if est_2s is None:
                    est_2s = estimate_de_2s(panel, fit, target, covset=covset)
                res = wald(est_2s, avar_hac(est_2s))
            elif method == "de2s-hc":
                if est_2s is None:
                    est_2s = estimate_de_2s(panel, fit, target, covset=covset)
                res = wald(est_2s, avar_hc_2s(panel, fit, covset, target))
            elif method == "pds-hac":
                est_pds = estimate_pds(panel, target)
                res = wald(est_pds, avar_hac(est_pds))
            else:  # pragma: no cover
                raise ValueError(method)
            out[(method, h)] = res.pvalue
    return out


def _oracle_cell(cfg: McConfig, covset_true, cause, effect, h, seed) -> dict:
    """Exact-pivot control cell: draw beta_hat from its limit law, test with true AVar."""
    var = avar_closed_form_ls(covset_true, cause, effect, h)
    p = covset_true.p
    n_eff = cfg.n - p - h + 1
    rng = np.random.default_rng(split_seed(seed, 1000 + h))
    z = rng.standard_normal(p)
    chol = np.linalg.cholesky(var.avar + 1e-300 * np.eye(p))
    beta_hat = chol @ z / math.sqrt(n_eff)
    stat = float(n_eff * beta_hat @ np.linalg.solve(var.avar, beta_hat))
    return {("oracle", h): chi2_sf(stat, p)}


def _oracle_replication(cfg: McConfig, model, cause, effect, seed) -> dict:
    covset_true = build_covariance_set(model, h_max=max(cfg.horizons))
    out: dict = {}
    for h in cfg.horizons:
        out.update(_oracle_cell(cfg, covset_true, cause, effect, h, seed))
    return out


def _rep_task(args):
    cfg, rep = args
    try:
        return rep, _run_replication(cfg, rep), None
    except HdgrangerError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_size_experiment(cfg: McConfig) -> McResult:
    """Run all replications and aggregate rejection frequencies.

    The (cause, effect) pair (default: first series -> last series) is
    verified to be a true null from the DGP before anything runs.
    Replications that raise a domain error are excluded and counted; more
    than 5% failures aborts the experiment.
    """
    model = make_dgp(cfg.dgp)
    cause = 0 if cfg.cause is None else cfg.cause
    effect = model.d - 1 if cfg.effect is None else cfg.effect
    if "oracle" not in cfg.methods or len(cfg.methods) > 1:
        verify_null_pair(model, cause, effect, cfg.horizons, cfg.null_tol)

    tasks = [(cfg, rep) for rep in range(cfg.reps)]
    if cfg.workers and cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            raw = list(pool.map(_rep_task, tasks, chunksize=max(1, cfg.reps // (8 * cfg.workers))))
    else:
        raw = [_rep_task(t) for t in tasks]
    raw.sort(key=lambda r: r[0])

    errors = [(rep, msg) for rep, _, msg in raw if msg is not None]
    good = [(rep, cells) for rep, cells, msg in raw if msg is None]
    if len(errors) > MAX_FAILURE_FRACTION * cfg.reps:
        raise ExperimentError(
            f"{len(errors)}/{cfg.reps} replications failed; first: rep {errors[0][0]}: {errors[0][1]}"
        )

    rates: dict = {}
    stderr: dict = {}
    reps_used = len(good)
    for method in cfg.methods:
        for h in cfg.horizons:
            picks = [cells[(method, h)] < cfg.nominal_level for _, cells in good]
            r = float(np.mean(picks)) if picks else float("nan")
            rates[(method, h)] = r
            stderr[(method, h)] = math.sqrt(r * (1.0 - r) / reps_used) if reps_used else float("nan")

    records = None
    if cfg.keep_records:
        records = [
            {"rep": rep, "method": m, "h": h, "pvalue": cells[(m, h)]}
            for rep, cells in good
            for m in cfg.methods
            for h in cfg.horizons
        ]
    return McResult(
        config=cfg,
        rejection_rate=rates,
        mc_stderr=stderr,
        reps_used=reps_used,
        failures=len(errors),
        records=records,
    )


def summarize(results: list[McResult]) -> str:
    """Render results as CSV rows (method, h, n, rate, stderr), sorted by (method, n, h)."""
    rows = []
    for res in results:
        rows.extend(res.rows())
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "h", "n", "rate", "stderr"])
    for method, h, n, rate, se in rows:
        writer.writerow([method, h, n, f"{rate:.12g}", f"{se:.12g}"])
    return buf.getvalue()
