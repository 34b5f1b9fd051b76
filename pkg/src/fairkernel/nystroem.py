"""Landmark (Nystroem) approximation of the regularized inverse ``(K + a I)^-1``.

With landmark columns ``K_np`` and their intersection ``K_pp`` the matrix
inversion lemma gives::

    (K + a I)^-1 ~= I/a - K_np (K_pp + K_pn K_np / a)^-1 K_pn / a^2

so only a ``p x p`` system has to be factorized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import LandmarkDegeneracyError, ValidationError
from .kernels import as_array

JITTER = 1e-10


@dataclass(frozen=True)
class NystroemParams:
    landmark_count: int
    seed: int = 0

    def __post_init__(self):
        if int(self.landmark_count) != self.landmark_count or self.landmark_count < 1:
            raise ValidationError(
                f"landmark_count must be a positive integer, got {self.landmark_count}")

    @classmethod
    def from_fraction(cls, n: int, fraction: float, seed: int = 0) -> "NystroemParams":
        if not 0.0 < fraction <= 1.0:
            raise ValidationError(f"landmark fraction must lie in (0, 1], got {fraction}")
        return cls(max(1, min(n, int(round(fraction * n)))), seed)


def sample_landmarks(n: int, params: NystroemParams) -> np.ndarray:
    """Distinct column indices drawn uniformly without replacement."""
    if params.landmark_count > n:
        raise ValidationError(
            f"cannot draw {params.landmark_count} landmarks from {n} columns")
    rng = np.random.default_rng(params.seed)
    return rng.choice(n, size=params.landmark_count, replace=False)


def _landmark_system(K, alpha: float, params: NystroemParams, landmarks):
    K = as_array(K)
    n = K.shape[0]
    if K.ndim != 2 or K.shape[1] != n:
        raise ValidationError(f"kernel must be square, got {K.shape}")
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    idx = sample_landmarks(n, params) if landmarks is None else np.asarray(landmarks)
    p = len(idx)

    K_np = K[:, idx]
    K_pp = K[np.ix_(idx, idx)]
    K_pp = (K_pp + K_pp.T) / 2.0
    inner = K_pp + (K_np.T @ K_np) / alpha
    inner[np.diag_indices(p)] += JITTER * max(np.trace(K_pp), 0.0) / p
    try:
        cho = linalg.cho_factor(inner, lower=True)
    except linalg.LinAlgError as exc:
        raise LandmarkDegeneracyError(
            f"landmark system of size {p} is singular; use more or different landmarks") from exc
    return K_np, cho


def nystroem_inverse(K, alpha: float, params: NystroemParams,
                     landmarks: np.ndarray | None = None) -> np.ndarray:
    """Approximate ``(K + alpha I)^-1`` from a subset of kernel columns.

    ``landmarks`` overrides the sampled indices (useful when the caller knows
    a set of linearly independent columns).
    """
    K_np, cho = _landmark_system(K, alpha, params, landmarks)
    n = K_np.shape[0]
    B = -linalg.cho_solve(cho, K_np.T)
    B = K_np @ B / alpha**2
    B[np.diag_indices(n)] += 1.0 / alpha
    return (B + B.T) / 2.0


def nystroem_solve(K, alpha: float, params: NystroemParams, rhs,
                   landmarks: np.ndarray | None = None) -> np.ndarray:
    """``nystroem_inverse(K, alpha, params) @ rhs`` without forming the n x n inverse.

    No intermediate is larger than n x max(landmark_count, rhs columns).
    """
    K_np, cho = _landmark_system(K, alpha, params, landmarks)
    rhs = np.asarray(rhs, dtype=np.float64)
    return rhs / alpha - K_np @ linalg.cho_solve(cho, K_np.T @ rhs) / alpha**2
