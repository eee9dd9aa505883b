"""Decomposition quality scores used to choose the number of modes and alpha.

``fic`` rewards modes that a low-order autoregression predicts well and
penalizes the number of modes::

    (T - r) * ln(sum_k sigma_k^2) + (K (r + 1) + 1) * ln(T - r)

``mic`` is the mean pairwise mutual information between modes, a measure of
how much the modes overlap.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import KTooSmall, NonFiniteInput, TooShort

RIDGE = 1e-12
DEFAULT_AR_ORDER = 2
DEFAULT_BINS = 16
MIN_MI_LENGTH = 32


@dataclass
class ArFit:
    order: int
    coefficients: np.ndarray
    intercept: float
    residual_variance: float
    n_effective: int
    degenerate: bool = False


def _lagged_design(x: np.ndarray, r: int):
    T = x.shape[0]
    cols = [x[r - j - 1:T - j - 1] for j in range(r)]
    cols.append(np.ones(T - r))
    return np.column_stack(cols), x[r:]


def fit_ar(series, r: int = DEFAULT_AR_ORDER) -> ArFit:
    """Least-squares AR(r) fit with intercept.

    Solves the ridge-jittered normal equations.  A rank-deficient design
    (e.g. a constant series) sets ``degenerate`` and falls back to the
    minimum-norm solution; a constant series reports zero residual variance.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("fit_ar expects a 1-D series")
    if r < 1:
        raise ValueError(f"AR order must be >= 1, got {r}")
    if x.shape[0] < r + 2:
        raise TooShort(f"AR({r}) needs at least {r + 2} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("fit_ar needs finite input")
    A, y = _lagged_design(x, r)
    n_eff = x.shape[0] - r
    gram = A.T @ A
    degenerate = np.linalg.matrix_rank(A) < r + 1
    if degenerate:
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
    else:
        beta = np.linalg.solve(gram + RIDGE * np.eye(r + 1), A.T @ y)
    resid = y - A @ beta
    if np.ptp(x) == 0.0:
        sigma2 = 0.0
    else:
        sigma2 = float(resid @ resid) / n_eff
    return ArFit(order=r, coefficients=beta[:r].copy(), intercept=float(beta[r]),
                 residual_variance=sigma2, n_effective=n_eff, degenerate=bool(degenerate))


def residual_variances(modes, r: int = DEFAULT_AR_ORDER) -> np.ndarray:
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    return np.array([fit_ar(m, r).residual_variance for m in modes])


def fic_from_variances(sigma2, T: int, r: int) -> float:
    """FIC from per-mode residual variances; ``-inf`` when they sum to zero."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    K = sigma2.shape[0]
    total = 0.0
    for s in sigma2:  # fixed sequential order
        total += float(s)
    penalty = (K * (r + 1) + 1) * math.log(T - r)
    if total <= 0.0:
        return -math.inf
    return (T - r) * math.log(total) + penalty


def fic(modes, r: int = DEFAULT_AR_ORDER) -> float:
    """Forecastability information criterion of a K x T mode matrix."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    K, T = modes.shape
    if K < 1:
        raise ValueError("fic needs at least one mode")
    if T < r + 2:
        raise TooShort(f"fic needs T >= r + 2, got T={T}, r={r}")
    return fic_from_variances(residual_variances(modes, r), T, r)


def _bin_index(x: np.ndarray, bins: int) -> np.ndarray:
    lo = x.min()
    span = x.max() - lo
    if span == 0.0:
        return np.zeros(x.shape[0], dtype=np.int64)
    idx = np.floor((x - lo) / span * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"mutual_information needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if x.shape[0] < MIN_MI_LENGTH:
        raise TooShort(f"mutual_information needs at least {MIN_MI_LENGTH} samples, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("mutual_information needs finite input")
    return x, y


def _mi_from_indices(ix, iy, bins, n):
    joint = np.bincount(ix * bins + iy, minlength=bins * bins).reshape(bins, bins)
    cx = joint.sum(axis=1)
    cy = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    c = joint[i, j].astype(np.float64)
    # c * n / (cx * cy) is symmetric under swapping x and y, and fsum is
    # exactly rounded, so MI(x, y) == MI(y, x) bit for bit.
    terms = (c / n) * np.log(c * n / (cx[i].astype(np.float64) * cy[j]))
    return max(math.fsum(terms.tolist()), 0.0)


def mutual_information(x, y, bins: int = DEFAULT_BINS) -> float:
    """Plug-in mutual information (nats) from an equal-width joint histogram.

    Each variable is binned over its own min-max range.  A constant input
    falls into a single bin and yields 0.
    """
    x, y = _check_pair(x, y)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    return _mi_from_indices(_bin_index(x, bins), _bin_index(y, bins), bins, x.shape[0])


def binned_entropy(x, bins: int = DEFAULT_BINS) -> float:
    """Plug-in entropy (nats) of the equal-width binned marginal."""
    x = np.asarray(x, dtype=np.float64)
    counts = np.bincount(_bin_index(x, bins), minlength=bins)
    p = counts[counts > 0] / x.shape[0]
    return float(-np.sum(p * np.log(p)))


def mi_matrix(modes, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Symmetric K x K pairwise MI matrix with zero diagonal."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    K, T = modes.shape
    if T < MIN_MI_LENGTH:
        raise TooShort(f"mutual_information needs at least {MIN_MI_LENGTH} samples, got {T}")
    idx = [_bin_index(m, bins) for m in modes]
    out = np.zeros((K, K))
    for i in range(K):
        for j in range(i + 1, K):
            out[i, j] = out[j, i] = _mi_from_indices(idx[i], idx[j], bins, T)
    return out


def mic_from_matrix(mat: np.ndarray) -> float:
    K = mat.shape[0]
    if K < 2:
        raise KTooSmall("MIC averages over mode pairs and needs K >= 2")
    total = 0.0
    for i in range(K - 1):
        for j in range(i + 1, K):
            total += float(mat[i, j])
    return 2.0 * total / (K * (K - 1))


def mic(modes, bins: int = DEFAULT_BINS) -> float:
    """Mutual information criterion: mean MI over the K(K-1)/2 mode pairs."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    if modes.shape[0] < 2:
        raise KTooSmall("MIC averages over mode pairs and needs K >= 2")
    return mic_from_matrix(mi_matrix(modes, bins))


@dataclass
class CriteriaReport:
    K: int
    alpha: float
    fic: float
    mic: float
    per_mode_sigma2: list = field(default_factory=list)
    mi_matrix: list = field(default_factory=list)
    fic_degenerate: bool = False

    def to_record(self) -> str:
        """One-line key/value record for the search trace."""
        d = asdict(self)
        d["fic"] = _json_float(self.fic)
        d["mic"] = _json_float(self.mic)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_record(cls, line: str) -> "CriteriaReport":
        d = json.loads(line)
        d["fic"] = float(d["fic"])
        d["mic"] = float(d["mic"])
        return cls(**d)


def _json_float(v: float):
    return v if math.isfinite(v) else str(v)


def evaluate_criteria(modes, alpha: float, r: int = DEFAULT_AR_ORDER,
                      bins: int = DEFAULT_BINS) -> CriteriaReport:
    """Full FIC/MIC report for one decomposition."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    K, T = modes.shape
    sigma2 = residual_variances(modes, r)
    f = fic_from_variances(sigma2, T, r)
    mat = mi_matrix(modes, bins) if K >= 2 else np.zeros((1, 1))
    m = mic_from_matrix(mat) if K >= 2 else 0.0
    return CriteriaReport(K=K, alpha=float(alpha), fic=f, mic=m,
                          per_mode_sigma2=sigma2.tolist(), mi_matrix=mat.tolist(),
                          fic_degenerate=not math.isfinite(f))
