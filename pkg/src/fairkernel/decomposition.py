"""Fair Kernel Decomposition.

Repeatedly fits a ridge direction that predicts the protected attribute(s)
from the current kernel and removes it, working purely on kernel matrices.
One step with ``B = (K + a I)^-1``, ``Z = K B p`` and ``tau = (p' B K B p)^-1``::

    T_step = I - B p tau Z'
    K_next = K T_step = K - Z tau Z'

The composed ``T_m`` maps rows of the original kernel (train or test) to
rows of the transformed kernel, so ``K_test @ T_m`` is the out-of-sample
extension.

:func:`oracle_decompose` runs the same procedure the slow way, by projecting
an explicit empirical feature map ``G = Q sqrt(L)``. It shares no code with
the kernel-space route and is used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from . import container
from .exceptions import (
    CollinearAttributesError,
    DegenerateAttributeError,
    DimensionMismatchError,
    FingerprintMismatchError,
    NotPSDError,
    ValidationError,
)
from .kernels import KernelMatrix, as_kernel, check_psd, fingerprint
from .nystroem import NystroemParams, nystroem_solve

DEFAULT_ALPHA_TILDE_KRR = 0.1
DEFAULT_ALPHA_TILDE_SVR = 0.05

# A direction is considered gone once p' B K B p falls below this fraction of
# trace(K_0) * ||B p||^2, i.e. the kernel has no spectral mass left where the
# ridge fit for p lives.
DEGENERATE_RTOL = 1e-10
BP_RTOL = 1e-12


@dataclass(frozen=True)
class ProtectedAttributes:
    """Column-standardized n x l protected attribute matrix."""

    data: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def l(self) -> int:
        return self.data.shape[1]


def protected_attributes(P, standardize: bool = True) -> ProtectedAttributes:
    """Validate (and by default standardize) protected attribute columns.

    A column that is constant (zero after standardization) carries no
    information and raises :class:`DegenerateAttributeError`.
    """
    if isinstance(P, ProtectedAttributes):
        return P
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[1] < 1 or P.shape[0] < 1:
        raise ValidationError(f"protected attributes must be n x l, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("protected attributes contain NaN or infinite entries")
    if standardize:
        mean = P.mean(axis=0)
        std = P.std(axis=0)
        scale = np.maximum(np.abs(P).max(axis=0), 1.0)
        bad = np.flatnonzero(std <= 1e-12 * scale)
        if bad.size:
            raise DegenerateAttributeError(
                f"protected attribute column(s) {bad.tolist()} are constant", iteration=0)
        data = (P - mean) / std
    else:
        mean = np.zeros(P.shape[1])
        std = np.ones(P.shape[1])
        data = P.copy()
        bad = np.flatnonzero(np.all(P == 0, axis=0))
        if bad.size:
            raise DegenerateAttributeError(
                f"protected attribute column(s) {bad.tolist()} are all zero", iteration=1)
    return ProtectedAttributes(data, mean, std)


@dataclass(frozen=True)
class IterationInfo:
    iteration: int
    tau_norm: float | None        # scalar normalization, single attribute
    tau_condition: float | None   # condition number of the l x l normalization
    residual_norm: list[float]    # ||K_i B_{i-1} p_j|| per protected column

    def to_dict(self):
        return {"iteration": self.iteration, "tau_norm": self.tau_norm,
                "tau_condition": self.tau_condition, "residual_norm": self.residual_norm}


@dataclass(frozen=True, eq=False)
class FairTransform:
    """Composed transformation ``T_m`` from original to decorrelated kernel rows.

    In ``lazy`` mode ``t_total`` is ``None`` and the rank-l factors of each
    step are kept instead, so applying the transform to a k x n cross kernel
    costs ``O(m k n l)`` and no n x n matrix is stored.
    """

    n: int
    m: int
    alpha_tilde: float
    source_fingerprint: str | None
    t_total: np.ndarray | None
    factors: tuple = ()
    per_iteration: tuple = ()
    inverse_mode: str = "exact"
    nystroem: NystroemParams | None = None
    protected_mean: np.ndarray | None = None
    protected_std: np.ndarray | None = None

    @property
    def result_fingerprint(self) -> str:
        """Fingerprint carried by kernels produced with this transform."""
        nys = None if self.nystroem is None else (self.nystroem.landmark_count, self.nystroem.seed)
        return fingerprint("fkd", self.source_fingerprint, self.m, self.alpha_tilde,
                           self.inverse_mode, nys)

    @property
    def lazy(self) -> bool:
        return self.t_total is None

    def dense(self) -> np.ndarray:
        if self.t_total is not None:
            return self.t_total
        return _apply_factors(np.eye(self.n), self.factors)

    def header(self) -> dict:
        return {
            "type": "fair_transform",
            "n": self.n,
            "m": self.m,
            "alpha_tilde": self.alpha_tilde,
            "fingerprint": self.source_fingerprint,
            "inverse_mode": self.inverse_mode,
            "nystroem": None if self.nystroem is None else
            {"landmark_count": self.nystroem.landmark_count, "seed": self.nystroem.seed},
            "protected_mean": None if self.protected_mean is None else self.protected_mean.tolist(),
            "protected_std": None if self.protected_std is None else self.protected_std.tolist(),
            "per_iteration": [d.to_dict() for d in self.per_iteration],
        }

    def save(self, path) -> None:
        container.write(path, self.header(), self.dense())

    @classmethod
    def load(cls, path) -> "FairTransform":
        header, T = container.read(path)
        if header.get("type") != "fair_transform":
            raise ValidationError(f"{path} does not contain a fair transform")
        nys = header.get("nystroem")
        return cls(
            n=header["n"], m=header["m"], alpha_tilde=header["alpha_tilde"],
            source_fingerprint=header["fingerprint"], t_total=T,
            per_iteration=tuple(IterationInfo(**d) for d in header.get("per_iteration", [])),
            inverse_mode=header.get("inverse_mode", "exact"),
            nystroem=None if nys is None else NystroemParams(**nys),
            protected_mean=_opt_array(header.get("protected_mean")),
            protected_std=_opt_array(header.get("protected_std")),
        )


def _opt_array(v):
    return None if v is None else np.asarray(v, dtype=np.float64)


def _apply_factors(A: np.ndarray, factors) -> np.ndarray:
    for BP, tau, Z in factors:
        A = A - ((A @ BP) @ tau) @ Z.T
    return A


@dataclass
class DecompositionState:
    """Snapshot after ``iteration`` steps; fed back in to continue a sweep.

    ``root`` is a square-root factor with ``kernel = root @ root.T``;
    ``basis`` holds orthonormal columns spanning the removed root-space
    directions.
    """

    iteration: int
    kernel: np.ndarray
    root: np.ndarray
    t_total: np.ndarray | None
    factors: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    basis: np.ndarray | None = None


def reorthogonalize(W: np.ndarray, Q: np.ndarray | None) -> np.ndarray:
    """Strip components along earlier directions ``Q`` (two Gram-Schmidt passes).

    New directions are orthogonal to removed ones in exact arithmetic; once
    they shrink towards the rounding floor of the root, leftover pieces of
    the old directions would otherwise dominate them.
    """
    if Q is None or Q.shape[1] == 0:
        return W
    for _ in range(2):
        W = W - Q @ (Q.T @ W)
    return W


def _extend_basis(Q: np.ndarray | None, W: np.ndarray, tau: np.ndarray) -> np.ndarray:
    # tau = (W'W)^-1, so W chol(tau) has orthonormal columns
    C = linalg.cholesky((tau + tau.T) / 2.0, lower=True)
    new = W @ C
    return new if Q is None else np.hstack([Q, new])


def kernel_root(K: np.ndarray) -> np.ndarray:
    """n x r factor ``L`` with ``L L' = K`` from a rank-revealing pivoted Cholesky."""
    c, piv, rank, info = lapack.dpstrf(K, lower=1)
    if info < 0:
        raise ValidationError("pivoted Cholesky failed on the training kernel")
    r = max(int(rank), 1)
    L = np.zeros((K.shape[0], r))
    L[piv - 1] = np.tril(c)[:, :r]
    return L


def initial_state(K: np.ndarray, lazy: bool = False) -> DecompositionState:
    n = K.shape[0]
    return DecompositionState(0, K.copy(), kernel_root(K), None if lazy else np.eye(n))


def _normalization(WtW: np.ndarray, scale: np.ndarray, iteration: int,
                   matrix_form: bool = False) -> np.ndarray:
    """Invert the l x l Gram matrix of fitted directions, refusing degenerate ones.

    A single attribute uses the scalar reciprocal unless ``matrix_form`` asks
    for the general factorized inverse.
    """
    WtW = (WtW + WtW.T) / 2.0
    l = WtW.shape[0]
    if l == 1 and not matrix_form:
        if not WtW[0, 0] > DEGENERATE_RTOL * scale[0]:
            raise DegenerateAttributeError(
                f"iteration {iteration}: no information about the protected attribute "
                f"left (w'w = {WtW[0, 0]:.3e})", iteration=iteration)
        return 1.0 / WtW
    # judge each direction against its own noise floor
    d = 1.0 / np.sqrt(np.maximum(scale, np.finfo(float).tiny))
    ev = np.linalg.eigvalsh(WtW * d[:, None] * d[None, :])
    if ev[-1] <= DEGENERATE_RTOL:
        raise DegenerateAttributeError(
            f"iteration {iteration}: no information about the protected attributes left",
            iteration=iteration)
    if ev[0] <= DEGENERATE_RTOL:
        raise CollinearAttributesError(
            f"iteration {iteration}: fitted directions for the protected attributes "
            f"are collinear (normalized eigenvalues {ev[0]:.3e}, {ev[-1]:.3e})",
            iteration=iteration)
    try:
        cho = linalg.cho_factor(WtW, lower=True)
    except linalg.LinAlgError as exc:
        raise CollinearAttributesError(
            f"iteration {iteration}: protected directions are collinear",
            iteration=iteration) from exc
    return linalg.cho_solve(cho, np.eye(l))


def decomposition_steps(state: DecompositionState, P: ProtectedAttributes,
                        alpha_tilde: float, nystroem: NystroemParams | None = None,
                        lazy: bool = False,
                        reference_scale: float | None = None,
                        matrix_form: bool = False) -> Iterator[DecompositionState]:
    """Yield the state after every further iteration, indefinitely.

    Each step forms ``B = (K + a I)^-1`` (Cholesky, or the landmark
    approximation), ``tau = (p' B K B p)^-1`` and the rank-l update
    ``T_step = I - B p tau p' B K``. The kernel itself is carried as
    ``L L'`` and the root is updated by the equivalent orthogonal projection
    ``L <- L (I - W tau W')`` with ``W = L' B p``; subtracting ``Z tau Z'``
    directly amplifies rounding noise in near-null directions by
    ``||T_step||^2`` per step.
    """
    n = state.kernel.shape[0]
    trace_ref = (reference_scale if reference_scale is not None
                 else max(float(np.sum(state.root**2)), np.finfo(float).tiny))
    p = P.data
    pnorm = np.linalg.norm(p, axis=0)
    eye_idx = np.diag_indices(n)

    while True:
        i = state.iteration + 1
        Kp, L = state.kernel, state.root
        if nystroem is None:
            A = Kp.copy()
            A[eye_idx] += alpha_tilde
            try:
                BP = linalg.cho_solve(linalg.cho_factor(A, lower=True), p)
            except linalg.LinAlgError as exc:
                raise NotPSDError(
                    f"iteration {i}: K + alpha_tilde I is not positive definite") from exc
        else:
            BP = nystroem_solve(Kp, alpha_tilde,
                                NystroemParams(nystroem.landmark_count, nystroem.seed + i - 1), p)
        bp_norm = np.linalg.norm(BP, axis=0)
        if np.any(bp_norm <= BP_RTOL * pnorm):
            raise DegenerateAttributeError(
                f"iteration {i}: ridge direction vanished (||Bp|| = {bp_norm.min():.3e})",
                iteration=i)
        W = reorthogonalize(L.T @ BP, state.basis)
        tau = _normalization(W.T @ W, trace_ref * bp_norm**2, i, matrix_form)
        Z = L @ W                     # = K B p

        L_next = L - (Z @ tau) @ W.T
        K_next = L_next @ L_next.T
        K_next = (K_next + K_next.T) / 2.0
        if state.t_total is not None:
            t_total = state.t_total - ((state.t_total @ BP) @ tau) @ Z.T
        else:
            t_total = None
        factors = state.factors + [(BP, tau, Z)] if lazy else state.factors

        residual = np.linalg.norm(K_next @ BP, axis=0)
        l = p.shape[1]
        info = IterationInfo(
            iteration=i,
            tau_norm=float(tau[0, 0]) if l == 1 else None,
            tau_condition=None if l == 1 else float(np.linalg.cond(tau)),
            residual_norm=[float(r) for r in residual],
        )
        state = DecompositionState(i, K_next, L_next, t_total, factors,
                                   state.diagnostics + [info],
                                   _extend_basis(state.basis, W, tau))
        yield state


def _validate(K, P, alpha_tilde, check_kernel: bool):
    K = as_kernel(K)
    if K.kind != "square":
        raise ValidationError("decompose needs a square training kernel")
    if check_kernel:
        check_psd(K.data, name="training kernel")
    if not np.isfinite(alpha_tilde) or alpha_tilde <= 0:
        raise ValidationError(f"alpha_tilde must be positive, got {alpha_tilde}")
    if P.n != K.shape[0]:
        raise DimensionMismatchError(
            f"protected attributes have {P.n} rows, kernel has {K.shape[0]}")
    return K


def _make_transform(K: KernelMatrix, P, state, alpha_tilde, nystroem, lazy):
    return FairTransform(
        n=K.shape[0], m=state.iteration, alpha_tilde=float(alpha_tilde),
        source_fingerprint=K.fingerprint,
        t_total=None if lazy else state.t_total,
        factors=tuple(state.factors),
        per_iteration=tuple(state.diagnostics),
        inverse_mode="exact" if nystroem is None else "nystroem",
        nystroem=nystroem, protected_mean=P.mean, protected_std=P.std,
    )


def decompose(K, P, m: int, alpha_tilde: float = DEFAULT_ALPHA_TILDE_KRR, *,
              nystroem: NystroemParams | None = None, standardize: bool = True,
              lazy: bool = False, check_kernel: bool = True, matrix_form: bool = False):
    """Remove ridge-predictable protected information from a training kernel.

    Parameters
    ----------
    K : square PSD kernel (``KernelMatrix`` or array)
    P : protected attributes, shape (n,) or (n, l)
    m : number of iterations; ``m = 0`` returns ``K`` and the identity
    alpha_tilde : ridge penalty of the internal direction fit
    nystroem : use the landmark approximation for ``(K + a I)^-1``
    standardize : standardize protected columns first
    lazy : keep per-step factors instead of the dense n x n ``T_m``
    matrix_form : use the l x l factorized normalization even when l = 1

    Returns
    -------
    (KernelMatrix, FairTransform)
    """
    if int(m) != m or m < 0:
        raise ValidationError(f"iterations must be a non-negative integer, got {m}")
    P = protected_attributes(P, standardize)
    K = _validate(K, P, alpha_tilde, check_kernel)
    if nystroem is not None and nystroem.landmark_count > K.shape[0]:
        raise ValidationError(
            f"landmark_count {nystroem.landmark_count} exceeds n = {K.shape[0]}")

    state = initial_state(K.data, lazy)
    if m > 0:
        for state in decomposition_steps(state, P, alpha_tilde, nystroem, lazy,
                                         matrix_form=matrix_form):
            if state.iteration >= m:
                break
    transform = _make_transform(K, P, state, alpha_tilde, nystroem, lazy)
    out = KernelMatrix(state.kernel, kind="square",
                       fingerprint=transform.result_fingerprint if m > 0 else K.fingerprint,
                       meta=dict(K.meta, fkd_m=m))
    return out, transform


def decompose_path(K, P, m_values, alpha_tilde: float = DEFAULT_ALPHA_TILDE_KRR, *,
                   nystroem: NystroemParams | None = None, standardize: bool = True,
                   lazy: bool = False, check_kernel: bool = True, saturate: bool = False,
                   matrix_form: bool = False):
    """Decompositions for several iteration counts, sharing the iteration prefix.

    Returns a list of ``(KernelMatrix, FairTransform)`` in the order of the
    sorted ``m_values``. Larger counts continue from the smaller ones, so the
    total work is that of ``max(m_values)`` iterations.

    With ``saturate`` a ``DegenerateAttributeError`` stops the sweep instead
    of propagating: the kernel has no ridge-visible protected information
    left, and every larger count reuses the last valid state. The returned
    transform's ``m`` then reports the iterations actually performed.
    """
    ms = sorted(int(m) for m in m_values)
    if not ms or ms[0] < 0:
        raise ValidationError("m_values must be non-empty and non-negative")
    P = protected_attributes(P, standardize)
    K = _validate(K, P, alpha_tilde, check_kernel)
    n = K.shape[0]
    results = []
    state = initial_state(K.data, lazy)
    steps = None
    exhausted = False
    for m in ms:
        if state.iteration < m and not exhausted:
            if steps is None:
                steps = decomposition_steps(state, P, alpha_tilde, nystroem, lazy,
                                            matrix_form=matrix_form)
            try:
                for state in steps:
                    if state.iteration >= m:
                        break
            except DegenerateAttributeError:
                if not saturate:
                    raise
                exhausted = True
        transform = _make_transform(K, P, state, alpha_tilde, nystroem, lazy)
        results.append((KernelMatrix(state.kernel, kind="square",
                                     fingerprint=transform.result_fingerprint
                                     if state.iteration > 0 else K.fingerprint,
                                     meta=dict(K.meta, fkd_m=state.iteration)), transform))
    return results


def apply_transform(K_cross, transform: FairTransform) -> KernelMatrix:
    """Map a k x n kernel against the training rows into the decorrelated kernel."""
    Kc = as_kernel(K_cross, kind="cross")
    if Kc.shape[1] != transform.n:
        raise DimensionMismatchError(
            f"cross kernel has {Kc.shape[1]} columns, transform expects {transform.n}")
    if (Kc.fingerprint is not None and transform.source_fingerprint is not None
            and Kc.fingerprint != transform.source_fingerprint):
        raise FingerprintMismatchError(
            "cross kernel was not built against the training data of this transform")
    if transform.m == 0:
        return KernelMatrix(Kc.data.copy(), kind="cross",
                            fingerprint=transform.source_fingerprint, meta=dict(Kc.meta))
    if transform.t_total is not None:
        data = Kc.data @ transform.t_total
    else:
        data = _apply_factors(Kc.data, transform.factors)
    return KernelMatrix(data, kind="cross", fingerprint=transform.result_fingerprint,
                        meta=dict(Kc.meta, fkd_m=transform.m))


def residual_protected_norm(K_prev, K_next, P, alpha_tilde: float,
                            standardize: bool = True) -> np.ndarray:
    """``||K_next (K_prev + a I)^-1 p||`` per protected column.

    Zero (up to rounding) right after a decomposition step: the removed
    direction is no longer visible in the new kernel.
    """
    Kp = np.asarray(K_prev, dtype=np.float64)
    Kn = np.asarray(K_next, dtype=np.float64)
    if Kp.shape != Kn.shape or Kp.ndim != 2 or Kp.shape[0] != Kp.shape[1]:
        raise DimensionMismatchError(f"kernel shapes {Kp.shape} and {Kn.shape} do not match")
    P = protected_attributes(P, standardize)
    if P.n != Kp.shape[0]:
        raise DimensionMismatchError(
            f"protected attributes have {P.n} rows, kernel has {Kp.shape[0]}")
    A = Kp + alpha_tilde * np.eye(Kp.shape[0])
    BP = np.linalg.solve(A, P.data)
    return np.linalg.norm(Kn @ BP, axis=0)


# ---------------------------------------------------------------------------
# empirical feature space route
# ---------------------------------------------------------------------------

@dataclass
class EmpiricalFeatureSpace:
    G: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    w_history: list = field(default_factory=list)
    projections: list = field(default_factory=list)
    G_history: list = field(default_factory=list)

    def composed_projection(self) -> np.ndarray:
        out = np.eye(self.G.shape[1])
        for Pm in self.projections:
            out = out @ Pm
        return out


def empirical_feature_map(K, cutoff: float | None = None):
    """``G = Q sqrt(L)`` with eigenvalues below ``cutoff * max`` zeroed.

    The default cutoff is the rounding floor ``n * eps``.
    """
    K = np.asarray(K, dtype=np.float64)
    if cutoff is None:
        cutoff = K.shape[0] * np.finfo(float).eps
    lam, Q = np.linalg.eigh((K + K.T) / 2.0)
    order = np.argsort(lam)[::-1]
    lam, Q = lam[order], Q[:, order]
    top = max(lam[0], 0.0)
    lam = np.where(lam < cutoff * top, 0.0, lam)
    return Q * np.sqrt(lam)[None, :], lam, Q


def oracle_decompose(K, P, m: int, alpha_tilde: float = DEFAULT_ALPHA_TILDE_KRR, *,
                     standardize: bool = True, cutoff: float | None = None):
    """Reference implementation through explicit null-space projections of ``G``.

    Fits ``w = G' (G G' + a I)^-1 p`` on the current features, projects with
    ``I - w (w'w)^-1 w'`` and recovers the kernel as ``G_m G_m'``. Each ``w``
    is re-orthogonalized against the earlier ones first (see
    ``reorthogonalize``).
    """
    P = protected_attributes(P, standardize)
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if P.n != n:
        raise DimensionMismatchError(f"protected attributes have {P.n} rows, kernel has {n}")
    G, lam, Q = empirical_feature_map(K, cutoff)
    space = EmpiricalFeatureSpace(G.copy(), lam, Q, G_history=[G.copy()])
    trace_ref = max(np.trace(K), 0.0)
    basis = None
    for i in range(1, m + 1):
        A = G @ G.T + alpha_tilde * np.eye(n)
        BP = np.linalg.solve(A, P.data)
        W = reorthogonalize(G.T @ BP, basis)
        if np.any(np.linalg.norm(BP, axis=0) <= BP_RTOL * np.linalg.norm(P.data, axis=0)):
            raise DegenerateAttributeError(f"iteration {i}: ridge direction vanished", i)
        norm = _normalization(W.T @ W, trace_ref * np.linalg.norm(BP, axis=0) ** 2, i)
        basis = _extend_basis(basis, W, norm)
        proj = np.eye(G.shape[1]) - W @ norm @ W.T
        G = G @ proj
        space.w_history.append(W)
        space.projections.append(proj)
        space.G_history.append(G.copy())
    space.G = G
    return G @ G.T, space


def relative_error(A, B) -> float:
    """Frobenius distance relative to ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    denom = np.linalg.norm(B)
    return float(np.linalg.norm(A - B) / denom) if denom > 0 else float(np.linalg.norm(A))
