"""VAR(p) model representation, companion algebra, simulation, and Monte Carlo DGPs.

The process is a zero-mean d-variate VAR(p)

    w_t = A_1 w_{t-1} + ... + A_p w_{t-p} + u_t,   u_t ~ (0, Sigma_u),

stacked into first-order form W_t = (w_t', ..., w_{t-p+1}')' with companion
matrix ``A`` and selector ``J = [I_d, 0, ..., 0]`` so that w_t = J A W_{t-1} + u_t.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    NonPositiveDefiniteError,
    PanelValidationError,
    UnstableModelError,
)

__all__ = [
    "TimeSeriesPanel",
    "VarModel",
    "CompanionMatrix",
    "DgpKind",
    "DgpSpec",
    "build_companion",
    "spectral_radius",
    "simulate",
    "make_dgp",
    "split_seed",
]

DEFAULT_BURN_IN = 200
_STABILITY_RETRIES = 100


def split_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit stream seed from (seed, index).

    SplitMix64 finalizer applied to the pair; deterministic across platforms
    so that parallel scheduling cannot change which stream a draw uses.
    """
    z = (int(seed) * 0x9E3779B97F4A7C15 + int(index) + 1) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass
class TimeSeriesPanel:
    """An n x d matrix of observations with one named column per series.

    Parameters
    ----------
    data : np.ndarray, shape (n, d)
        Observations in rows.
    names : sequence of str
        Exactly d unique series labels.
    dates : sequence of str, optional
        Row labels carried through from an input CSV ``date`` column.
        Never used in any computation.
    """

    data: np.ndarray
    names: list[str]
    dates: list[str] | None = None

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        self.names = list(self.names)
        if self.data.ndim != 2:
            raise PanelValidationError(f"panel data must be 2-D, got ndim={self.data.ndim}")
        n, d = self.data.shape
        if n < 1 or d < 1:
            raise PanelValidationError(f"panel must be non-empty, got shape {(n, d)}")
        if len(self.names) != d:
            raise PanelValidationError(f"{len(self.names)} names for {d} columns")
        if len(set(self.names)) != d:
            raise PanelValidationError("series names must be unique")
        bad = np.argwhere(~np.isfinite(self.data))
        if bad.size:
            i, j = bad[0]
            raise PanelValidationError(
                f"non-finite value at row {i + 1}, column '{self.names[j]}'"
            )
        if self.dates is not None and len(self.dates) != n:
            raise PanelValidationError(f"{len(self.dates)} dates for {n} rows")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def column(self, name: str) -> int:
        """Index of a series by name."""
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no series named '{name}' (have: {', '.join(self.names)})") from None

    def demeaned(self) -> "TimeSeriesPanel":
        """Return a copy with each column centered on its sample mean."""
        return TimeSeriesPanel(self.data - self.data.mean(axis=0), self.names, self.dates)

    @classmethod
    def from_csv(cls, path: str | Path) -> "TimeSeriesPanel":
        """Read an RFC-4180 CSV panel (UTF-8, header row of series names).

        A first column named ``date`` is kept as row labels and excluded
        from the numeric data.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise PanelValidationError(f"{path}: empty file") from None
            has_dates = bool(header) and header[0].strip().lower() == "date"
            names = [h.strip() for h in (header[1:] if has_dates else header)]
            dates: list[str] | None = [] if has_dates else None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                cells = row[1:] if has_dates else row
                if has_dates:
                    dates.append(row[0])  # type: ignore[union-attr]
                if len(cells) != len(names):
                    raise PanelValidationError(
                        f"{path}: line {lineno} has {len(cells)} values, expected {len(names)}"
                    )
                parsed = []
                for j, cell in enumerate(cells):
                    try:
                        parsed.append(float(cell))
                    except ValueError:
                        raise PanelValidationError(
                            f"{path}: non-numeric value '{cell}' at row {lineno - 1}, "
                            f"column '{names[j]}'"
                        ) from None
                rows.append(parsed)
        if not rows:
            raise PanelValidationError(f"{path}: no data rows")
        try:
            return cls(np.array(rows, dtype=float), names, dates)
        except PanelValidationError as exc:
            raise PanelValidationError(f"{path}: {exc}") from None

    def to_csv(self, path: str | Path) -> None:
        """Write the panel as CSV (17 significant digits, value-exact round trip)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if self.dates is not None:
                writer.writerow(["date"] + self.names)
                for date, row in zip(self.dates, self.data):
                    writer.writerow([date] + [f"{v:.17g}" for v in row])
            else:
                writer.writerow(self.names)
                for row in self.data:
                    writer.writerow([f"{v:.17g}" for v in row])


@dataclass
class VarModel:
    """Slope matrices A_1..A_p and innovation covariance Sigma_u of a VAR(p).

    ``sigma_u`` must be symmetric (within 1e-12) and positive definite.
    """

    slope_matrices: list[np.ndarray]
    sigma_u: np.ndarray

    def __post_init__(self) -> None:
        if not self.slope_matrices:
            raise ValueError("need at least one slope matrix (p >= 1)")
        self.slope_matrices = [np.asarray(a, dtype=float) for a in self.slope_matrices]
        d = self.slope_matrices[0].shape[0]
        for i, a in enumerate(self.slope_matrices):
            if a.shape != (d, d):
                raise ValueError(f"A_{i + 1} has shape {a.shape}, expected {(d, d)}")
        self.sigma_u = np.asarray(self.sigma_u, dtype=float)
        if self.sigma_u.shape != (d, d):
            raise ValueError(f"sigma_u has shape {self.sigma_u.shape}, expected {(d, d)}")
        if np.max(np.abs(self.sigma_u - self.sigma_u.T)) > 1e-12:
            raise NonPositiveDefiniteError("sigma_u is not symmetric within 1e-12")
        if np.min(np.linalg.eigvalsh(self.sigma_u)) <= 0.0:
            raise NonPositiveDefiniteError("sigma_u is not positive definite")

    @property
    def d(self) -> int:
        return self.slope_matrices[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.slope_matrices)

    def to_json(self, path: str | Path | None = None) -> str:
        """Serialize as JSON with fields ``p``, ``A`` (row-major d x d arrays), ``sigma_u``."""
        doc = {
            "p": self.p,
            "A": [a.tolist() for a in self.slope_matrices],
            "sigma_u": self.sigma_u.tolist(),
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "VarModel":
        """Load a model written by :meth:`to_json`; ``source`` is a path or a JSON string."""
        text = source if isinstance(source, str) and source.lstrip().startswith("{") else Path(source).read_text(encoding="utf-8")
        doc = json.loads(text)
        slopes = [np.array(a, dtype=float) for a in doc["A"]]
        if len(slopes) != int(doc["p"]):
            raise ValueError(f"JSON declares p={doc['p']} but contains {len(slopes)} slope matrices")
        return cls(slopes, np.array(doc["sigma_u"], dtype=float))


@dataclass
class CompanionMatrix:
    """The dp x dp first-order companion matrix with its d x dp selector J."""

    matrix: np.ndarray
    selection_j: np.ndarray
    rho: float

    @property
    def is_stable(self) -> bool:
        return self.rho < 1.0


def spectral_radius(m: CompanionMatrix | np.ndarray) -> float:
    """Largest eigenvalue modulus of a square matrix (Hessenberg-QR eigenvalues).

    Raises
    ------
    ConvergenceError
        If the QR iteration fails on ill-conditioned input.
    """
    a = m.matrix if isinstance(m, CompanionMatrix) else np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        return 0.0
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        from .errors import ConvergenceError

        raise ConvergenceError(0, f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def build_companion(model: VarModel) -> CompanionMatrix:
    """Stack A_1..A_p into the companion matrix; subdiagonal blocks are exact identities."""
    d, p = model.d, model.p
    dp = d * p
    mat = np.zeros((dp, dp))
    for i, a in enumerate(model.slope_matrices):
        mat[:d, i * d : (i + 1) * d] = a
    for i in range(1, p):
        mat[i * d : (i + 1) * d, (i - 1) * d : i * d] = np.eye(d)
    j = np.zeros((d, dp))
    j[:, :d] = np.eye(d)
    return CompanionMatrix(mat, j, spectral_radius(mat))


def simulate(
    model: VarModel,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int = 0,
) -> TimeSeriesPanel:
    """Simulate ``n`` observations of a stable VAR with Gaussian innovations.

    The recursion starts from zeros, the first ``burn_in`` draws are
    discarded, and innovations are N(0, Sigma_u) through the Cholesky factor
    of ``sigma_u``. Output is deterministic given ``seed``.

    Raises
    ------
    UnstableModelError
        If the companion matrix has spectral radius >= 1.
    NonPositiveDefiniteError
        If ``sigma_u`` admits no Cholesky factor.
    """
    if n <= model.p:
        raise ValueError(f"need n > p, got n={n}, p={model.p}")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    comp = build_companion(model)
    if not comp.is_stable:
        raise UnstableModelError(comp.rho)
    try:
        chol = np.linalg.cholesky(model.sigma_u)
    except np.linalg.LinAlgError:
        raise NonPositiveDefiniteError("sigma_u is not positive definite (Cholesky failed)") from None

    d, p = model.d, model.p
    rng = np.random.default_rng(seed)
    total = burn_in + n
    innov = rng.standard_normal((total, d)) @ chol.T
    buf = np.zeros((p + total, d))
    slopes = model.slope_matrices
    for t in range(p, p + total):
        acc = innov[t - p]
        for i in range(p):
            acc = acc + slopes[i] @ buf[t - 1 - i]
        buf[t] = acc
    data = buf[p + burn_in :]
    names = [f"w{i + 1}" for i in range(d)]
    return TimeSeriesPanel(data, names)


class DgpKind(Enum):
    """Root-matrix family used to generate Monte Carlo VAR(2) coefficients."""

    TRIDIAGONAL = 1
    BLOCK_DIAGONAL = 2
    RANDOM = 3


@dataclass
class DgpSpec:
    """Configuration of one Monte Carlo data-generating process.

    All three kinds build a VAR(2) from two root matrices L_1, L_2 via
    A_1 = L_1 + L_2 and A_2 = -L_1 L_2, with innovation covariance
    Sigma_u[i, j] = 0.5^|i-j|.
    """

    kind: DgpKind
    d: int
    seed: int = 0
    p: int = field(default=2, init=False)

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.kind is DgpKind.BLOCK_DIAGONAL and self.d % 5 != 0:
            raise ValueError("block-diagonal DGP needs d divisible by 5")
        if self.kind is DgpKind.RANDOM and self.d < 4:
            raise ValueError("random DGP needs d >= 4 (3 off-diagonal entries per column)")


def _tridiagonal_root(d: int) -> np.ndarray:
    idx = np.arange(d)
    return 0.3 ** (np.abs(idx[:, None] - idx[None, :]) + 1.0)


def _block_diagonal_root(d: int, rng: np.random.Generator) -> np.ndarray:
    lam = np.zeros((d, d))
    for start in range(0, d, 5):
        block = np.eye(5) * 0.3
        for col in range(5):
            rows = [r for r in range(5) if r != col]
            picked = rng.choice(rows, size=2, replace=False)
            block[picked, col] = -0.2
        lam[start : start + 5, start : start + 5] = block
    return lam


def _random_root(d: int, rng: np.random.Generator) -> np.ndarray:
    lam = np.eye(d) * 0.3
    for col in range(d):
        rows = [r for r in range(d) if r != col]
        picked = rng.choice(rows, size=3, replace=False)
        lam[picked, col] = -0.2
    return lam


def make_dgp(spec: DgpSpec) -> VarModel:
    """Generate the VAR(2) model for a Monte Carlo DGP specification.

    Random draws that produce an unstable companion matrix are redrawn with
    an incremented sub-seed, up to 100 attempts; the result is deterministic
    given ``spec.seed``.
    """
    d = spec.d
    idx = np.arange(d)
    sigma_u = 0.5 ** np.abs(idx[:, None] - idx[None, :])

    for attempt in range(_STABILITY_RETRIES):
        rng = np.random.default_rng(split_seed(spec.seed, attempt))
        if spec.kind is DgpKind.TRIDIAGONAL:
            lam1 = _tridiagonal_root(d)
            lam2 = lam1.copy()
        elif spec.kind is DgpKind.BLOCK_DIAGONAL:
            lam1 = _block_diagonal_root(d, rng)
            lam2 = _block_diagonal_root(d, rng)
        else:
            lam1 = _random_root(d, rng)
            lam2 = _random_root(d, rng)
        model = VarModel([lam1 + lam2, -lam1 @ lam2], sigma_u)
        comp = build_companion(model)
        if comp.is_stable:
            return model
        if spec.kind is DgpKind.TRIDIAGONAL:
            # deterministic draw cannot improve on retry
            raise UnstableModelError(comp.rho)
    raise UnstableModelError(comp.rho, f"no stable draw after {_STABILITY_RETRIES} attempts")
