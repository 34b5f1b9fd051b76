"""Regressors over precomputed kernels: kernel ridge, epsilon-SVR and a mean baseline.

All fitters take a square training kernel and return an immutable model;
prediction takes a k x n cross kernel against the same training rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import container
from .exceptions import (
    ConvergenceError,
    ConvexityError,
    DimensionMismatchError,
    FingerprintMismatchError,
    ValidationError,
)
from .kernels import PSD_RTOL, as_kernel, is_symmetric

# per-dataset SVR defaults; KRR_ALPHA is the ridge penalty used throughout
KRR_ALPHA = 0.25
SVR_DEFAULTS = {
    "crimes": {"epsilon": 0.01, "gamma": 0.05, "C": 0.75},
    "acs_income": {"epsilon": 0.005, "gamma": 0.05, "C": 0.5},
    "acs_travel_time": {"epsilon": 0.001, "gamma": 0.01, "C": 0.125},
}

TAU = 1e-12


def _targets(y, n) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n:
        raise DimensionMismatchError(f"{y.shape[0]} targets for a kernel of size {n}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("targets contain NaN or infinite entries")
    return y


def _train_kernel(K):
    K = as_kernel(K)
    if K.kind != "square":
        raise ValidationError("fitting needs a square training kernel")
    return K


def _cross(K_cross, n, train_fingerprint):
    Kc = as_kernel(K_cross, kind="cross")
    if Kc.shape[1] != n:
        raise DimensionMismatchError(
            f"cross kernel has {Kc.shape[1]} columns, model was trained on {n} samples")
    if (Kc.fingerprint is not None and train_fingerprint is not None
            and Kc.fingerprint != train_fingerprint):
        raise FingerprintMismatchError(
            "cross kernel was not built against this model's training kernel")
    return Kc.data


@dataclass(frozen=True, eq=False)
class KrrModel:
    dual_coefficients: np.ndarray
    alpha: float
    train_fingerprint: str | None = None

    def predict(self, K_cross) -> np.ndarray:
        return krr_predict(self, K_cross)

    def save(self, path):
        container.write(path, {"type": "krr", "alpha": self.alpha,
                               "fingerprint": self.train_fingerprint},
                        self.dual_coefficients[None, :])

    @classmethod
    def load(cls, path):
        header, data = container.read(path)
        return cls(data[0].copy(), header["alpha"], header["fingerprint"])


def krr_fit(K_train, y, alpha: float = KRR_ALPHA) -> KrrModel:
    """Solve ``(K + alpha I) c = y`` by Cholesky."""
    K = _train_kernel(K_train)
    n = K.shape[0]
    y = _targets(y, n)
    if not np.isfinite(alpha) or alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    A = K.data.copy()
    A[np.diag_indices(n)] += alpha
    try:
        coef = linalg.cho_solve(linalg.cho_factor(A, lower=True), y)
    except linalg.LinAlgError as exc:
        raise ConvexityError("K + alpha I is not positive definite") from exc
    return KrrModel(coef, float(alpha), K.fingerprint)


def krr_predict(model: KrrModel, K_cross) -> np.ndarray:
    Kc = _cross(K_cross, model.dual_coefficients.shape[0], model.train_fingerprint)
    return Kc @ model.dual_coefficients


@dataclass(frozen=True, eq=False)
class SvrModel:
    """Fitted epsilon-SVR: ``f(x) = sum_i beta_i k(x, x_i) + bias``."""

    dual_coefficients: np.ndarray
    bias: float
    epsilon: float
    C: float
    support_indices: np.ndarray
    iterations: int = 0
    train_fingerprint: str | None = None

    def predict(self, K_cross) -> np.ndarray:
        return svr_predict(self, K_cross)

    def save(self, path):
        container.write(path, {"type": "svr", "bias": self.bias, "epsilon": self.epsilon,
                               "C": self.C, "iterations": self.iterations,
                               "fingerprint": self.train_fingerprint},
                        self.dual_coefficients[None, :])

    @classmethod
    def load(cls, path):
        header, data = container.read(path)
        beta = data[0].copy()
        return cls(beta, header["bias"], header["epsilon"], header["C"],
                   np.flatnonzero(beta != 0), header.get("iterations", 0),
                   header["fingerprint"])


def _repair_psd(K: np.ndarray, rtol: float = PSD_RTOL) -> np.ndarray:
    """Clamp marginally negative eigenvalues; refuse clearly indefinite kernels."""
    if not is_symmetric(K):
        raise ConvexityError("SVR kernel is not symmetric")
    lam, Q = np.linalg.eigh(K)
    if lam[0] >= 0:
        return K
    if lam[0] < -rtol * max(lam[-1], 0.0):
        raise ConvexityError(
            f"SVR kernel is not positive semi-definite (min eigenvalue {lam[0]:.3e}, "
            f"max {lam[-1]:.3e}); the dual would not be convex")
    lam = np.maximum(lam, 0.0)
    K = (Q * lam) @ Q.T
    return (K + K.T) / 2.0


def svr_fit(K_train, y, epsilon: float = 0.1, C: float = 1.0, tol: float = 1e-6,
            max_iter: int | None = None, check_kernel: bool = True,
            gap_rtol: float | None = 1e-6) -> SvrModel:
    """Epsilon-SVR on a precomputed kernel by SMO.

    The dual is solved in the usual doubled form over ``(alpha, alpha*)``,
    picking the maximal violating pair with second-order working-set
    selection until the KKT violation drops below ``tol``. With ``gap_rtol``
    set, iteration also continues until the duality gap is below
    ``gap_rtol * (1 + |dual|)``.
    """
    K = _train_kernel(K_train)
    n = K.shape[0]
    y = _targets(y, n)
    if epsilon < 0 or not np.isfinite(epsilon):
        raise ValidationError(f"epsilon must be non-negative, got {epsilon}")
    if not C > 0:
        raise ValidationError(f"C must be positive, got {C}")
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    Kd = _repair_psd(K.data) if check_kernel else K.data
    if max_iter is None:
        max_iter = 100_000 * n

    # variables t < n are alpha_t (sign +1), t >= n are alpha*_{t-n} (sign -1)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    base = np.concatenate([np.arange(n), np.arange(n)])
    diag = np.diag(Kd)[base]
    a = np.zeros(2 * n)
    G = np.concatenate([epsilon - y, epsilon + y])

    it = 0
    while True:
        up = ((sign > 0) & (a < C)) | ((sign < 0) & (a > 0))
        low = ((sign > 0) & (a > 0)) | ((sign < 0) & (a < C))
        score = -sign * G
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        gmax = s_up[i]
        gmin = np.min(np.where(low, score, np.inf))
        violation = gmax - gmin
        if violation < tol:
            if gap_rtol is None or violation < 1e-14:
                break
            gap, dual = _gap_from_gradient(a, G, y, sign, epsilon, C)
            if gap <= gap_rtol * (1.0 + abs(dual)):
                break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not reach tolerance {tol} in {max_iter} iterations "
                f"(violation {violation:.3e})",
                duality_gap=_gap_from_gradient(a, G, y, sign, epsilon, C)[0])
        it += 1

        Ki = Kd[base[i]][base]
        b = gmax - score
        cand = low & (b > 0)
        quad = diag[i] + diag - 2.0 * Ki
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        if not np.isfinite(obj[j]):
            break

        ai_old, aj_old = a[i], a[j]
        Qij = sign[i] * sign[j] * Kd[base[i], base[j]]
        if sign[i] != sign[j]:
            q = diag[i] + diag[j] + 2.0 * Qij
            q = q if q > 0 else TAU
            delta = (-G[i] - G[j]) / q
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            elif a[j] > C:
                a[j] = C
                a[i] = C + diff
        else:
            q = diag[i] + diag[j] - 2.0 * Qij
            q = q if q > 0 else TAU
            delta = (G[i] - G[j]) / q
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total

        di, dj = a[i] - ai_old, a[j] - aj_old
        Kj = Kd[base[j]][base]
        G += sign * (sign[i] * di * Ki + sign[j] * dj * Kj)

    beta = a[:n] - a[n:]
    bias = _bias(a, G, sign, C)
    return SvrModel(beta, bias, float(epsilon), float(C), np.flatnonzero(beta != 0),
                    it, K.fingerprint)


def _bias(a, G, sign, C) -> float:
    """Average over free variables, else midpoint of the KKT bounds."""
    yG = sign * G
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if np.any(free):
        rho = float(np.mean(yG[free]))
    else:
        ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
        lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
        ub = np.min(yG[ub_mask], initial=np.inf)
        lb = np.max(yG[lb_mask], initial=-np.inf)
        rho = (ub + lb) / 2.0
    return -rho


def _objectives(Kbeta, beta, bias, y, epsilon, C) -> tuple[float, float]:
    quad = float(beta @ Kbeta)
    resid = np.abs(y - Kbeta - bias)
    primal = 0.5 * quad + C * float(np.sum(np.maximum(resid - epsilon, 0.0)))
    dual = -0.5 * quad + float(beta @ y) - epsilon * float(np.sum(np.abs(beta)))
    return primal, dual


def _gap_from_gradient(a, G, y, sign, epsilon, C) -> tuple[float, float]:
    # G[:n] = K beta + epsilon - y
    n = y.shape[0]
    beta = a[:n] - a[n:]
    Kbeta = G[:n] - epsilon + y
    primal, dual = _objectives(Kbeta, beta, _bias(a, G, sign, C), y, epsilon, C)
    return primal - dual, dual


def svr_objectives(model: SvrModel, K_train, y) -> tuple[float, float]:
    """(primal, dual) objective values of a fitted model on its training data."""
    K = np.asarray(as_kernel(K_train).data)
    y = _targets(y, K.shape[0])
    beta = model.dual_coefficients
    return _objectives(K @ beta, beta, model.bias, y, model.epsilon, model.C)


def svr_duality_gap(model: SvrModel, K_train, y) -> float:
    primal, dual = svr_objectives(model, K_train, y)
    return primal - dual


def svr_predict(model: SvrModel, K_cross) -> np.ndarray:
    Kc = _cross(K_cross, model.dual_coefficients.shape[0], model.train_fingerprint)
    return Kc @ model.dual_coefficients + model.bias


@dataclass(frozen=True)
class DummyModel:
    mean: float

    def predict(self, count: int) -> np.ndarray:
        return dummy_predict(self, count)


def dummy_fit(y) -> DummyModel:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValidationError("cannot fit the mean baseline on an empty target vector")
    return DummyModel(float(np.mean(y)))


def dummy_predict(model: DummyModel, count: int) -> np.ndarray:
    return np.full(int(count), model.mean)
