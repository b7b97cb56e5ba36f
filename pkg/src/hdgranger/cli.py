"""Command-line front end: simulate, fit, test, mc, network.

All machine output (JSON records, CSV tables) goes to stdout or the
requested output files; diagnostics go to stderr. Exit codes: 0 success,
1 domain error, 2 usage error. A JSON config file (``--config``) supplies
defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import build_covariance_set
from .debias import TargetSpec, estimate_de_2s, estimate_de_ls, estimate_pds, fit_to_model
from .errors import HdgrangerError
from .inference import avar_closed_form_ls, avar_hac, avar_hc_2s, wald
from .montecarlo import MC_METHODS, McConfig, run_size_experiment, summarize
from .network import DEFAULT_NETWORK_P, NETWORK_METHODS, export_heatmap, run_network
from .regularized import (
    AUTO_LAMBDA,
    InfoCriterion,
    Penalty,
    PenaltyConfig,
    estimate_var,
    threshold_fit,
)
from .var_core import (
    DEFAULT_BURN_IN,
    DgpKind,
    DgpSpec,
    TimeSeriesPanel,
    VarModel,
    make_dgp,
    simulate,
)

__all__ = ["RunConfig", "parse_args", "dispatch", "main"]

log = logging.getLogger("hdgranger")

_PENALTY_TOKENS = {"lasso": Penalty.LASSO, "adalasso": Penalty.ADAPTIVE_LASSO, "elnet": Penalty.ELASTIC_NET}
_METHOD_TOKENS = ("de-ls", "de-2s", "pds")
_VARIANCE_TOKENS = ("hac", "hc", "closed")


@dataclass
class RunConfig:
    """Parsed, validated invocation; round-trips through ``render``/``parse``."""

    subcommand: str
    options: dict = field(default_factory=dict)

    def render(self) -> str:
        return json.dumps({"subcommand": self.subcommand, "options": self.options}, sort_keys=True)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        doc = json.loads(text)
        return cls(subcommand=doc["subcommand"], options=dict(doc["options"]))


def parse_horizons(spec: str) -> list[int]:
    """Expand '1,3,6' and 'a:b' range syntax (inclusive); tokens may mix."""
    out: list[int] = []
    for token in str(spec).split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            a, b = token.split(":", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty horizon range '{token}'")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(token))
    if not out:
        raise ValueError(f"no horizons in '{spec}'")
    return out


def _penalty_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--penalty", choices=sorted(_PENALTY_TOKENS), default=None,
                     help="penalty family (default adalasso)")
    sub.add_argument("--lambda", dest="lam", action="append", default=None, metavar="FLOAT|auto",
                     help="penalty level, or 'auto' for the built-in rule")
    sub.add_argument("--alpha", type=float, default=None, help="elastic-net l1 mix in [0,1]")
    sub.add_argument("--tau", type=float, default=None, help="adaptive loading exponent")
    sub.add_argument("--ic", choices=["bic", "aic"], default=None,
                     help="information criterion for the adaptive pass")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdgranger",
        description="De-biased multi-horizon Granger causality tests in sparse VARs",
    )
    parser.add_argument("--config", default=None, help="JSON file of default option values")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"], help="stderr log level")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    sim = subs.add_parser("simulate", help="simulate a panel from a DGP or model file")
    sim.add_argument("--dgp", type=int, choices=[1, 2, 3], default=None, help="built-in DGP family")
    sim.add_argument("--model", default=None, help="model JSON file (alternative to --dgp)")
    sim.add_argument("--d", type=int, default=20, help="number of series (with --dgp)")
    sim.add_argument("--n", type=int, required=True, help="sample size")
    sim.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default=None, help="output CSV (default stdout)")
    sim.add_argument("--save-model", default=None, help="also write the model as JSON")

    fit = subs.add_parser("fit", help="fit a regularized VAR and emit model JSON")
    fit.add_argument("--input", required=True, help="panel CSV")
    fit.add_argument("--p", type=int, default=1, help="lag order")
    _penalty_flags(fit)
    fit.add_argument("--thr", type=float, default=None, help="post-fit coefficient threshold")
    fit.add_argument("--nu", type=float, default=1.0, help="threshold exponent (inf = hard)")
    fit.add_argument("--out", default=None, help="output model JSON (default stdout)")
    fit.add_argument("--dump-cov", default=None, metavar="DIR",
                     help="write Sigma_u/Sigma_W/Sigma_UW as CSV matrices")

    test = subs.add_parser("test", help="causality test for one (cause, effect) pair")
    test.add_argument("--input", required=True, help="panel CSV")
    test.add_argument("--cause", required=True, help="cause series name")
    test.add_argument("--effect", required=True, help="effect series name")
    test.add_argument("--horizons", required=True, help="comma list and/or a:b ranges")
    test.add_argument("--method", choices=_METHOD_TOKENS, default="de-2s")
    test.add_argument("--variance", choices=_VARIANCE_TOKENS, default=None,
                      help="hac (default), hc (de-2s only), closed (de-ls only)")
    test.add_argument("--bandwidth", type=int, default=None, help="HAC bandwidth (default: h)")
    test.add_argument("--p", type=int, default=1, help="lag order")
    _penalty_flags(test)

    mc = subs.add_parser("mc", help="Monte Carlo size experiment")
    mc.add_argument("--dgp", type=int, choices=[1, 2, 3], required=True)
    mc.add_argument("--n", type=int, required=True)
    mc.add_argument("--d", type=int, required=True)
    mc.add_argument("--horizons", required=True)
    mc.add_argument("--methods", required=True,
                    help="comma list from: " + ",".join(MC_METHODS))
    mc.add_argument("--reps", type=int, required=True)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--dgp-seed", type=int, default=0, help="seed for random DGP draws")
    mc.add_argument("--level", type=float, default=0.05, help="nominal level")
    mc.add_argument("--workers", type=int, default=0)
    mc.add_argument("--cause", type=int, default=None, help="cause column index (default 0)")
    mc.add_argument("--effect", type=int, default=None, help="effect column index (default d-1)")
    mc.add_argument("--out", default=None, help="output CSV (default stdout)")

    net = subs.add_parser("network", help="all-pairs causal network on a panel")
    net.add_argument("--input", required=True, help="panel CSV")
    net.add_argument("--p", type=int, default=DEFAULT_NETWORK_P)
    net.add_argument("--horizons", required=True)
    net.add_argument("--method", choices=NETWORK_METHODS, default="de2s-hc")
    net.add_argument("--bandwidth", type=int, default=None)
    net.add_argument("--workers", type=int, default=0, help="threads for pair tests")
    net.add_argument("--out-dir", required=True)
    _penalty_flags(net)
    return parser


def parse_args(argv: list[str]) -> RunConfig:
    """Parse argv into a RunConfig, merging ``--config`` defaults under flags."""
    parser = _build_parser()
    ns = parser.parse_args(argv)

    lam = getattr(ns, "lam", None)
    if lam is not None:
        distinct = sorted(set(lam))
        if len(distinct) > 1:
            parser.error(f"conflicting --lambda values: {', '.join(distinct)}")
        ns.lam = distinct[0]

    options = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config")}
    if ns.config:
        try:
            defaults = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config file {ns.config}: {exc}")
        if not isinstance(defaults, dict):
            parser.error(f"config file {ns.config} must hold a JSON object")
        explicit = _explicit_flags(argv)
        for key, value in defaults.items():
            key = key.replace("-", "_")
            if key in options and key not in explicit:
                options[key] = value
    return RunConfig(subcommand=ns.subcommand, options=options)


def _explicit_flags(argv: list[str]) -> set[str]:
    out = set()
    for arg in argv:
        if arg.startswith("--"):
            name = arg[2:].split("=", 1)[0].replace("-", "_")
            out.add("lam" if name == "lambda" else name)
    return out


def _penalty_from_options(opt: dict) -> PenaltyConfig:
    kwargs = {}
    if opt.get("penalty"):
        kwargs["method"] = _PENALTY_TOKENS[opt["penalty"]]
    lam = opt.get("lam")
    if lam is not None:
        kwargs["lam"] = AUTO_LAMBDA if str(lam).lower() == AUTO_LAMBDA else float(lam)
    if opt.get("alpha") is not None:
        kwargs["alpha"] = opt["alpha"]
    if opt.get("tau") is not None:
        kwargs["tau"] = opt["tau"]
    if opt.get("ic"):
        kwargs["ic"] = InfoCriterion(opt["ic"])
    return PenaltyConfig(**kwargs)


def _write_matrix_csv(path: Path, mat: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(mat):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _cmd_simulate(opt: dict) -> int:
    if (opt.get("dgp") is None) == (opt.get("model") is None):
        raise HdgrangerError("simulate needs exactly one of --dgp or --model")
    if opt.get("dgp") is not None:
        model = make_dgp(DgpSpec(DgpKind(opt["dgp"]), opt["d"], seed=opt["seed"]))
    else:
        model = VarModel.from_json(opt["model"])
    panel = simulate(model, opt["n"], opt["burn_in"], opt["seed"])
    if opt.get("save_model"):
        model.to_json(opt["save_model"])
    if opt.get("out"):
        panel.to_csv(opt["out"])
        log.info("wrote %s rows to %s", panel.n, opt["out"])
    else:
        import io

        buf = io.StringIO()
        import csv as _csv

        writer = _csv.writer(buf)
        writer.writerow(panel.names)
        for row in panel.data:
            writer.writerow([f"{v:.17g}" for v in row])
        sys.stdout.write(buf.getvalue())
    return 0


def _cmd_fit(opt: dict) -> int:
    panel = TimeSeriesPanel.from_csv(opt["input"]).demeaned()
    cfg = _penalty_from_options(opt)
    fit = estimate_var(panel, opt["p"], cfg)
    if opt.get("thr") is not None:
        nu = float(opt.get("nu", 1.0))
        fit = threshold_fit(fit, panel, opt["thr"], nu)
    model = fit_to_model(fit)
    text = model.to_json(opt.get("out"))
    if not opt.get("out"):
        sys.stdout.write(text + "\n")
    if opt.get("dump_cov"):
        covset = build_covariance_set(model, h_max=1, residual_count=fit.residuals.shape[0])
        out = Path(opt["dump_cov"])
        out.mkdir(parents=True, exist_ok=True)
        _write_matrix_csv(out / "sigma_u.csv", covset.sigma_u_hat)
        _write_matrix_csv(out / "sigma_w.csv", covset.sigma_w)
        _write_matrix_csv(out / "sigma_uw.csv", covset.sigma_uw)
    return 0


def _cmd_test(opt: dict) -> int:
    panel = TimeSeriesPanel.from_csv(opt["input"]).demeaned()
    horizons = parse_horizons(opt["horizons"])
    method = opt["method"]
    variance = opt.get("variance") or "hac"
    if variance == "hc" and method != "de-2s":
        raise HdgrangerError("--variance hc requires --method de-2s")
    if variance == "closed" and method != "de-ls":
        raise HdgrangerError("--variance closed requires --method de-ls")
    p = opt["p"]
    cause = panel.column(opt["cause"])
    effect = panel.column(opt["effect"])
    cfg = _penalty_from_options(opt)

    fit = covset = None
    if method in ("de-ls", "de-2s"):
        fit = estimate_var(panel, p, cfg)
        covset = build_covariance_set(
            fit_to_model(fit), h_max=max(horizons), residual_count=fit.residuals.shape[0]
        )
    for h in horizons:
        target = TargetSpec(cause, effect, h, p)
        if method == "pds":
            est = estimate_pds(panel, target)
            var = avar_hac(est, opt.get("bandwidth"))
        elif method == "de-ls":
            est = estimate_de_ls(panel, fit, target, covset=covset)
            var = (
                avar_closed_form_ls(covset, cause, effect, h)
                if variance == "closed"
                else avar_hac(est, opt.get("bandwidth"))
            )
        else:
            est = estimate_de_2s(panel, fit, target, covset=covset)
            var = (
                avar_hc_2s(panel, fit, covset, target)
                if variance == "hc"
                else avar_hac(est, opt.get("bandwidth"))
            )
        res = wald(est, var)
        record = {
            "cause": opt["cause"],
            "effect": opt["effect"],
            "h": h,
            "method": method,
            "variance": variance,
            "beta": [float(b) for b in est.beta_debiased],
            "se": [float(s) for s in np.sqrt(np.diag(var.avar) / est.n_eff)],
            "wald": res.statistic,
            "df": res.df,
            "pvalue": res.pvalue,
            "bandwidth": var.bandwidth,
        }
        sys.stdout.write(json.dumps(record) + "\n")
    return 0


def _cmd_mc(opt: dict) -> int:
    cfg = McConfig(
        dgp=DgpSpec(DgpKind(opt["dgp"]), opt["d"], seed=opt["dgp_seed"]),
        n=opt["n"],
        horizons=tuple(parse_horizons(opt["horizons"])),
        methods=tuple(t.strip() for t in opt["methods"].split(",") if t.strip()),
        reps=opt["reps"],
        nominal_level=opt["level"],
        base_seed=opt["seed"],
        workers=opt["workers"],
        cause=opt.get("cause"),
        effect=opt.get("effect"),
    )
    result = run_size_experiment(cfg)
    table = summarize([result])
    if opt.get("out"):
        Path(opt["out"]).write_text(table, encoding="utf-8")
        log.info("wrote %s", opt["out"])
    else:
        sys.stdout.write(table)
    if result.failures:
        print(f"{result.failures} replication(s) failed and were excluded", file=sys.stderr)
    return 0


def _cmd_network(opt: dict) -> int:
    panel = TimeSeriesPanel.from_csv(opt["input"])
    net = run_network(
        panel,
        p=opt["p"],
        horizons=parse_horizons(opt["horizons"]),
        method=opt["method"],
        penalty=_penalty_from_options(opt),
        bandwidth=opt.get("bandwidth"),
        workers=opt.get("workers", 0),
    )
    files = export_heatmap(net, opt["out_dir"])
    for f in files:
        log.info("wrote %s", f)
    if net.failures:
        print(f"{len(net.failures)} cell(s) failed; see network.json", file=sys.stderr)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "test": _cmd_test,
    "mc": _cmd_mc,
    "network": _cmd_network,
}


def dispatch(cfg: RunConfig) -> int:
    """Run a parsed invocation; returns the process exit code."""
    logging.basicConfig(
        level=getattr(logging, cfg.options.get("log_level", "warning").upper()),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[cfg.subcommand](cfg.options)
    except HdgrangerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> None:
    cfg = parse_args(sys.argv[1:] if argv is None else argv)
    sys.exit(dispatch(cfg))


if __name__ == "__main__":
    main()
