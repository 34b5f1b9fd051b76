"""Accuracy and continuous-fairness measures.

* ``gdp`` - generalized demographic parity: average gap between the
  Nadaraya-Watson local mean of the predictions at each protected value and
  the global mean.
* ``hgr_estimate`` - maximal correlation from a gridded Gaussian KDE of the
  joint density of the rank-transformed variables, as the second singular
  value of ``Q_ij / sqrt(r_i c_j)``.
* ``pairwise_fairness`` - difference in pair-ordering accuracy between pairs
  ordered one way or the other by the protected attribute.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from scipy.stats import rankdata

from .exceptions import DimensionMismatchError, ValidationError

BLOCK = 1024
BANDWIDTH_RULES = ("silverman", "scott")


@dataclass(frozen=True)
class KdeParams:
    bandwidth: float | str = "silverman"
    grid_size: int = 64

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in BANDWIDTH_RULES:
                raise ValidationError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.grid_size < 8:
            raise ValidationError(f"grid_size must be at least 8, got {self.grid_size}")


@dataclass(frozen=True)
class MetricReport:
    mae: float
    gdp: float
    hgr: float
    pairwise_fairness: float
    sample_count: int

    def to_dict(self):
        return asdict(self)


def _vec(v, name) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains NaN or infinite entries")
    return v


def _pair(a, b, names, min_len):
    a, b = _vec(a, names[0]), _vec(b, names[1])
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{names[0]} and {names[1]} differ in length")
    if a.size < min_len:
        raise ValidationError(f"need at least {min_len} samples, got {a.size}")
    return a, b


def silverman_bandwidth(x) -> float:
    """Rule of thumb ``0.9 * min(std, IQR / 1.34) * n^(-1/5)``."""
    x = np.asarray(x, dtype=np.float64)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(float(np.std(x)), (q75 - q25) / 1.34)
    if spread <= 0:
        spread = float(np.std(x))
    return 0.9 * spread * x.size ** (-0.2)


def scott_bandwidth(x) -> float:
    """Normal reference rule ``1.06 * std * n^(-1/5)``."""
    x = np.asarray(x, dtype=np.float64)
    return 1.06 * float(np.std(x)) * x.size ** (-0.2)


def _bandwidth(x, kde: KdeParams) -> float:
    if kde.bandwidth == "silverman":
        return silverman_bandwidth(x)
    if kde.bandwidth == "scott":
        return scott_bandwidth(x)
    return float(kde.bandwidth)


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat, ("y", "yhat"), 1)
    return float(np.mean(np.abs(y - yhat)))


def nadaraya_watson(z, p, values, h) -> np.ndarray:
    """Gaussian-kernel local average of ``values`` at query points ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    out = np.empty(z.size)
    for s in range(0, z.size, BLOCK):
        zb = z[s:s + BLOCK]
        W = np.exp(-0.5 * ((zb[:, None] - p[None, :]) / h) ** 2)
        out[s:s + BLOCK] = (W @ values) / W.sum(axis=1)
    return out


def gdp(yhat, p, kde: KdeParams | None = None) -> float:
    """Mean absolute deviation of the local prediction mean from the global one.

    The average runs over the observed protected values (empirical measure).
    """
    kde = kde or KdeParams()
    yhat, p = _pair(yhat, p, ("yhat", "p"), 2)
    if np.ptp(p) == 0:
        raise ValidationError("gdp is undefined for a constant protected attribute")
    if np.ptp(yhat) == 0:
        return 0.0
    centered = yhat - yhat.mean()
    h = _bandwidth(p, kde)
    local = nadaraya_watson(p, p, centered, h)
    return float(np.mean(np.abs(local - centered.mean())))


def _kde_axis(x, h, grid_size):
    spread = 4.0 * np.sqrt(np.var(x) + h * h)
    grid = np.linspace(x.mean() - spread, x.mean() + spread, grid_size)
    return np.exp(-0.5 * ((x[:, None] - grid[None, :]) / h) ** 2)


def hgr_matrix(yhat, p, kde: KdeParams | None = None) -> np.ndarray:
    """Normalized joint-density matrix whose singular values carry the HGR.

    Both variables are replaced by their standardized ranks first; maximal
    correlation is invariant under monotone maps, and on ranks the estimate
    is too.
    """
    kde = kde or KdeParams()
    a, b = _pair(yhat, p, ("yhat", "p"), 10)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValidationError("hgr is undefined for constant inputs")
    a, b = rankdata(a), rankdata(b)
    a = (a - a.mean()) / a.std()
    b = (b - b.mean()) / b.std()
    Ka = _kde_axis(a, _bandwidth(a, kde), kde.grid_size)
    Kb = _kde_axis(b, _bandwidth(b, kde), kde.grid_size)
    Q = Ka.T @ Kb
    Q /= Q.sum()
    r = Q.sum(axis=1)
    c = Q.sum(axis=0)
    denom = np.sqrt(np.outer(r, c))
    return np.divide(Q, denom, out=np.zeros_like(Q), where=denom > 0)


def hgr_estimate(yhat, p, kde: KdeParams | None = None) -> float:
    s = np.linalg.svd(hgr_matrix(yhat, p, kde), compute_uv=False)
    return float(np.clip(s[1], 0.0, 1.0))


def _cmp(v_i, v_j):
    """1 where v_i > v_j, 0.5 on ties, 0 otherwise."""
    return (v_i > v_j) + 0.5 * (v_i == v_j)


def pairwise_fairness(y, yhat, p) -> float:
    """|acc_A - acc_B| over target-ordered pairs, split by protected ordering.

    Pairs ``(i, j)`` with ``y_i > y_j`` are scored correct when
    ``yhat_i > yhat_j``. Group A holds pairs with ``p_i > p_j``, group B those
    with ``p_i < p_j``; ties in ``p`` or ``yhat`` count one half.
    """
    y, yhat = _pair(y, yhat, ("y", "yhat"), 2)
    _, p = _pair(y, p, ("y", "p"), 2)
    n = y.size
    hit_a = hit_b = w_a = w_b = 0.0
    for s in range(0, n, BLOCK):
        sl = slice(s, s + BLOCK)
        qualifies = y[sl, None] > y[None, :]
        correct = _cmp(yhat[sl, None], yhat[None, :])
        ga = np.where(qualifies, _cmp(p[sl, None], p[None, :]), 0.0)
        gb = np.where(qualifies, _cmp(p[None, :], p[sl, None]), 0.0)
        w_a += ga.sum()
        w_b += gb.sum()
        hit_a += (ga * correct).sum()
        hit_b += (gb * correct).sum()
    if w_a == 0 or w_b == 0:
        raise ValidationError("pairwise fairness needs target-ordered pairs in both "
                              "protected orderings")
    return float(abs(hit_a / w_a - hit_b / w_b))


def evaluate(y, yhat, p, kde: KdeParams | None = None) -> MetricReport:
    """All measures from one prediction vector."""
    y, yhat = _pair(y, yhat, ("y", "yhat"), 1)
    return MetricReport(
        mae=mae(y, yhat),
        gdp=gdp(yhat, p, kde),
        hgr=hgr_estimate(yhat, p, kde) if np.ptp(yhat) > 0 else 0.0,
        pairwise_fairness=pairwise_fairness(y, yhat, p),
        sample_count=int(y.size),
    )
