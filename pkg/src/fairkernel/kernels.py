"""Kernel matrix construction for RBF and linear kernels.

Kernels are returned as :class:`KernelMatrix` objects that wrap the dense
array together with a fingerprint of the *training side* (the columns).
A square train kernel and any cross kernel built against the same training
rows share that fingerprint, which is what lets transforms and fitted models
check that they are applied to compatible inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError, NotPSDError, ValidationError

DEFAULT_GAMMA = 0.05

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-8


def fingerprint(*parts) -> str:
    """Stable short hash over arrays, strings and numbers."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            arr = np.ascontiguousarray(part, dtype=np.float64)
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense kernel matrix plus provenance.

    ``kind`` is ``"square"`` for a train x train Gram matrix and ``"cross"``
    for a k x n test x train matrix. ``fingerprint`` identifies the training
    side, i.e. what the columns are indexed by.
    """

    data: np.ndarray
    kind: str = "square"
    fingerprint: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("square", "cross"):
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.data.ndim != 2:
            raise ValidationError("kernel matrix must be two-dimensional")
        if self.kind == "square" and self.data.shape[0] != self.data.shape[1]:
            raise DimensionMismatchError(
                f"square kernel has shape {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def symmetric(self) -> bool:
        return self.kind == "square" and is_symmetric(self.data)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


def as_array(K) -> np.ndarray:
    if isinstance(K, KernelMatrix):
        return K.data
    return np.asarray(K, dtype=np.float64)


def as_kernel(K, kind: str = "square") -> KernelMatrix:
    """Wrap a raw array; square kernels get a content fingerprint."""
    if isinstance(K, KernelMatrix):
        return K
    data = np.asarray(K, dtype=np.float64)
    fp = fingerprint("raw", data) if kind == "square" else None
    return KernelMatrix(data, kind=kind, fingerprint=fp)


def check_features(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty n x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains NaN or infinite entries")
    return X


def _check_gamma(gamma):
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return sq


def rbf_kernel(X, gamma: float = DEFAULT_GAMMA) -> KernelMatrix:
    """Square RBF kernel ``exp(-gamma * ||x_i - x_j||^2)``.

    Only the upper triangle is computed; the lower one is mirrored so the
    result is exactly symmetric with an exact unit diagonal.
    """
    X = check_features(X)
    _check_gamma(gamma)
    sq = squared_distances(X, X)
    K = np.triu(np.exp(-gamma * sq), k=1)
    K = K + K.T
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(K, kind="square", fingerprint=fingerprint("rbf", gamma, X),
                        meta={"kernel": "rbf", "gamma": gamma})


def rbf_cross_kernel(X_test, X_train, gamma: float = DEFAULT_GAMMA) -> KernelMatrix:
    """k x n RBF kernel between test rows and training rows."""
    X_test = check_features(X_test, "X_test")
    X_train = check_features(X_train, "X_train")
    _check_gamma(gamma)
    if X_test.shape[1] != X_train.shape[1]:
        raise DimensionMismatchError(
            f"feature dimension mismatch: {X_test.shape[1]} vs {X_train.shape[1]}")
    K = np.exp(-gamma * squared_distances(X_test, X_train))
    return KernelMatrix(K, kind="cross", fingerprint=fingerprint("rbf", gamma, X_train),
                        meta={"kernel": "rbf", "gamma": gamma})


def linear_kernel(A, B=None) -> KernelMatrix:
    """Inner products ``<a_i, b_j>``; square when ``B`` is omitted."""
    A = check_features(A, "A")
    square = B is None
    B = A if square else check_features(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(
            f"feature dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    K = A @ B.T
    if square:
        K = (K + K.T) / 2.0
    kind = "square" if K.shape[0] == K.shape[1] and (square or np.array_equal(A, B)) else "cross"
    return KernelMatrix(K, kind=kind, fingerprint=fingerprint("linear", B),
                        meta={"kernel": "linear"})


def is_symmetric(K, rtol: float = SYMMETRY_RTOL) -> bool:
    K = as_array(K)
    if K.shape[0] != K.shape[1]:
        return False
    scale = max(np.abs(K).max(initial=0.0), np.finfo(float).tiny)
    return bool(np.abs(K - K.T).max(initial=0.0) <= rtol * scale)


def eigen_bounds(K) -> tuple[float, float]:
    """(min, max) eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(as_array(K))
    return float(w[0]), float(w[-1])


def is_psd(K, rtol: float = PSD_RTOL) -> bool:
    lo, hi = eigen_bounds(K)
    return lo >= -rtol * max(hi, 0.0)


def check_psd(K, rtol: float = PSD_RTOL, name: str = "kernel") -> np.ndarray:
    """Raise :class:`NotPSDError` unless ``K`` is symmetric PSD within tolerance."""
    data = as_array(K)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{name} contains NaN or infinite entries")
    if not is_symmetric(data):
        raise NotPSDError(f"{name} is not symmetric")
    lo, hi = eigen_bounds(data)
    if lo < -rtol * max(hi, 0.0):
        raise NotPSDError(f"{name} has eigenvalue {lo:.3e} below -{rtol:g} * {hi:.3e}")
    return data
