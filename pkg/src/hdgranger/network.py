"""All-pairs multi-horizon causality network over an ingested panel.

One regularized VAR fit is shared by every ordered (cause, effect) pair
(the fit does not depend on the pair), then each pair is tested at each
horizon conditional on all remaining series. Cell intensity is 1 - pvalue,
oriented (row = effect, col = cause). Exports are byte-deterministic CSV
matrices, a dependency-free SVG heatmap per horizon, and one JSON with
every test record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import build_covariance_set
from .debias import TargetSpec, estimate_de_2s, estimate_de_ls, estimate_pds, fit_to_model
from .errors import HdgrangerError, SampleTooShortError
from .inference import avar_hac, avar_hc_2s, wald
from .regularized import PenaltyConfig, estimate_var
from .var_core import TimeSeriesPanel

__all__ = [
    "NETWORK_METHODS",
    "CausalityNetwork",
    "run_network",
    "export_heatmap",
    "render_heatmap_svg",
]

NETWORK_METHODS = ("de-ls-hac", "de2s-hac", "de2s-hc", "pds-hac")
DEFAULT_NETWORK_P = 4


@dataclass
class CausalityNetwork:
    """Pairwise test results over horizons: tensors indexed (h, effect, cause)."""

    names: list[str]
    horizons: tuple
    method: str
    p: int
    intensity: np.ndarray
    statistics: np.ndarray
    pvalues: np.ndarray
    bandwidth_by_horizon: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return len(self.names)

    def cell(self, h: int, cause: str | int, effect: str | int) -> dict:
        hi = self.horizons.index(h)
        ci = cause if isinstance(cause, int) else self.names.index(cause)
        ei = effect if isinstance(effect, int) else self.names.index(effect)
        return {
            "h": h,
            "cause": self.names[ci],
            "effect": self.names[ei],
            "statistic": float(self.statistics[hi, ei, ci]),
            "pvalue": float(self.pvalues[hi, ei, ci]),
            "intensity": float(self.intensity[hi, ei, ci]),
        }


def run_network(
    panel: TimeSeriesPanel,
    p: int = DEFAULT_NETWORK_P,
    horizons=(1,),
    method: str = "de2s-hc",
    penalty: PenaltyConfig | None = None,
    bandwidth: int | None = None,
    workers: int = 0,
) -> CausalityNetwork:
    """Test every ordered (cause, effect) pair, diagonal included, at each horizon.

    One shared fit serves all pairs; pair-by-horizon cells evaluate
    independently (optionally on ``workers`` threads) and land in disjoint
    tensor slots, so results do not depend on scheduling. Per-pair domain
    errors are recorded (cell left as NaN) and the run continues; the
    shared fit or covariance bundle failing is fatal.
    """
    horizons = tuple(int(h) for h in horizons)
    if method not in NETWORK_METHODS:
        raise ValueError(f"unknown method '{method}' (choose from {NETWORK_METHODS})")
    d = panel.d
    if d < 2:
        raise ValueError("network needs at least 2 series")
    if panel.n <= p + max(horizons):
        raise SampleTooShortError(
            f"n={panel.n} too short for p={p} and max horizon {max(horizons)}"
        )

    work = panel.demeaned()
    fit = estimate_var(work, p, penalty or PenaltyConfig())
    covset = build_covariance_set(
        fit_to_model(fit), h_max=max(horizons), residual_count=fit.residuals.shape[0]
    )

    nh = len(horizons)
    stats = np.full((nh, d, d), np.nan)
    pvals = np.full((nh, d, d), np.nan)
    failures: list = []

    def run_cell(hi: int, h: int, cause: int, effect: int) -> None:
        target = TargetSpec(cause, effect, h, p)
        try:
            if method == "pds-hac":
                est = estimate_pds(work, target)
                res = wald(est, avar_hac(est, bandwidth))
            elif method == "de-ls-hac":
                est = estimate_de_ls(work, fit, target, covset=covset)
                res = wald(est, avar_hac(est, bandwidth))
            elif method == "de2s-hac":
                est = estimate_de_2s(work, fit, target, covset=covset)
                res = wald(est, avar_hac(est, bandwidth))
            else:
                est = estimate_de_2s(work, fit, target, covset=covset)
                res = wald(est, avar_hc_2s(work, fit, covset, target))
        except HdgrangerError as exc:
            failures.append(
                {"cause": panel.names[cause], "effect": panel.names[effect],
                 "h": h, "error": f"{type(exc).__name__}: {exc}"}
            )
            return
        stats[hi, effect, cause] = res.statistic
        pvals[hi, effect, cause] = res.pvalue

    cells = [
        (hi, h, cause, effect)
        for hi, h in enumerate(horizons)
        for cause in range(d)
        for effect in range(d)
    ]
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda args: run_cell(*args), cells))
    else:
        for args in cells:
            run_cell(*args)
    failures.sort(key=lambda f: (f["h"], f["cause"], f["effect"]))

    intensity = np.where(np.isnan(pvals), np.nan, 1.0 - pvals)
    bw = {h: (h if bandwidth is None else bandwidth) for h in horizons}
    return CausalityNetwork(
        names=list(panel.names),
        horizons=horizons,
        method=method,
        p=p,
        intensity=intensity,
        statistics=stats,
        pvalues=pvals,
        bandwidth_by_horizon=bw,
        failures=failures,
    )


def render_heatmap_svg(names: list[str], intensity: np.ndarray, title: str) -> str:
    """Deterministic grayscale SVG grid: cell fill #FFFFFF at 0 up to #000000 at 1.

    Exactly d*d ``rect`` elements (one per cell); labels are text elements,
    rows are effects, columns are causes. NaN cells render white.
    """
    d = len(names)
    cell = 24
    label_w = 8 + 7 * max(len(s) for s in names)
    label_h = 14
    pad = 6
    width = label_w + d * cell + pad
    height = label_h * 2 + d * cell + pad
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{label_w}" y="{label_h - 3}" font-family="monospace" font-size="11">{_esc(title)}</text>',
    ]
    top = 2 * label_h
    for j, name in enumerate(names):
        x = label_w + j * cell + cell // 2
        lines.append(
            f'<text x="{x}" y="{top - 3}" font-family="monospace" font-size="9" '
            f'text-anchor="middle">{_esc(name)}</text>'
        )
    for i, name in enumerate(names):
        y = top + i * cell + cell // 2 + 3
        lines.append(
            f'<text x="{label_w - 4}" y="{y}" font-family="monospace" font-size="9" '
            f'text-anchor="end">{_esc(name)}</text>'
        )
    for i in range(d):
        for j in range(d):
            v = intensity[i, j]
            level = 255 if not np.isfinite(v) else int(round(255.0 * (1.0 - min(max(v, 0.0), 1.0))))
            fill = f"#{level:02X}{level:02X}{level:02X}"
            lines.append(
                f'<rect x="{label_w + j * cell}" y="{top + i * cell}" width="{cell}" '
                f'height="{cell}" fill="{fill}" stroke="#999999" stroke-width="0.5"/>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def export_heatmap(net: CausalityNetwork, out_dir: str | Path) -> list[Path]:
    """Write heatmap_h<h>.csv and heatmap_h<h>.svg per horizon plus network.json.

    Returns the list of files written; output bytes depend only on the
    network contents.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for hi, h in enumerate(net.horizons):
        csv_path = out / f"heatmap_h{h}.csv"
        rows = ["," + ",".join(net.names)]
        for ei, name in enumerate(net.names):
            cells = []
            for ci in range(net.d):
                v = net.intensity[hi, ei, ci]
                cells.append("" if not np.isfinite(v) else f"{v:.12g}")
            rows.append(name + "," + ",".join(cells))
        csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(csv_path)

        svg_path = out / f"heatmap_h{h}.svg"
        svg_path.write_text(
            render_heatmap_svg(
                net.names, net.intensity[hi], f"1 - pvalue, h={h}, {net.method}"
            ),
            encoding="utf-8",
        )
        written.append(svg_path)

    records = []
    for hi, h in enumerate(net.horizons):
        for ci, cause in enumerate(net.names):
            for ei, effect in enumerate(net.names):
                v = net.pvalues[hi, ei, ci]
                if not np.isfinite(v):
                    continue
                records.append(
                    {
                        "cause": cause,
                        "effect": effect,
                        "h": h,
                        "method": net.method,
                        "wald": float(net.statistics[hi, ei, ci]),
                        "df": net.p,
                        "pvalue": float(v),
                    }
                )
    doc = {
        "names": net.names,
        "horizons": list(net.horizons),
        "method": net.method,
        "p": net.p,
        "records": records,
        "failures": net.failures,
    }
    json_path = out / "network.json"
    json_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    written.append(json_path)
    return written
