"""Critical points of f23 = ||mu_C||^2 and the Hessian machinery around them.

At a critical point z write beta_l for the values mu_l(z) seen as Lie
algebra elements (coefficient vectors under the invariant inner product).
This module certifies the vanishing of (beta_2)_z, (beta_3)_z and
[beta_2, beta_3], builds the Hessian of f23 and of the components
mu_2^{beta_2}, mu_3^{beta_3}, and assembles the lifted 4x4 block matrix on
k^4 together with its adjugate identity and kernel containment test.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .core import EPSILON, Frame, State, apply_structure, real_inner, structure_matrix
from .flow import FlowOptions, StiffFailure, integrate_descent
from .models import ActionModel, _frame, eval_moment, infinitesimal_action, quadratic_moment

log = logging.getLogger(__name__)

CERT_TOL = 1e-10
IDENTITY_TOL = 1e-7
HESSIAN_ZERO_RTOL = 1e-8
KERNEL_RTOL = 1e-8
DEDUP_TOL = 1e-6


class LiftedHessianError(RuntimeError):
    """Commutation hypotheses fail at the given point; ``margins`` holds the residuals."""

    def __init__(self, message: str, margins: dict):
        super().__init__(message)
        self.margins = margins


def cert_scale(z: State) -> float:
    return 1 + z.norm() ** 3


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    z: State
    beta1: np.ndarray
    beta2: np.ndarray
    beta3: np.ndarray
    residuals: dict
    f: float
    certified: bool
    signature: tuple = field(repr=False, default=())

    def as_dict(self) -> dict:
        return {
            "x": [[v.real, v.imag] for v in self.z.x],
            "y": [[v.real, v.imag] for v in self.z.y],
            "beta1": self.beta1.tolist(),
            "beta2": self.beta2.tolist(),
            "beta3": self.beta3.tolist(),
            "f": self.f,
            "residuals": dict(self.residuals),
            "certified": self.certified,
        }


# -- Hessians ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HessianData:
    H23: np.ndarray
    eigenvalues: np.ndarray
    inertia: tuple  # (negative, zero, positive)
    zero_tol: float
    H2: Optional[np.ndarray] = None
    H3: Optional[np.ndarray] = None


def _inertia(H: np.ndarray, zero_tol: Optional[float]):
    ev = np.linalg.eigvalsh(H)
    if zero_tol is None:
        zero_tol = HESSIAN_ZERO_RTOL * np.linalg.norm(H, 2)
    neg = int(np.sum(ev < -zero_tol))
    pos = int(np.sum(ev > zero_tol))
    return ev, (neg, len(ev) - neg - pos, pos), float(zero_tol)


def _component_hessians(model: ActionModel, frame: Frame, r: np.ndarray):
    """Hessians of <mu'_2, b2> and <mu'_3, b3> with b_l frozen at mu'_l(z)."""
    q = quadratic_moment(model, frame)
    m = q.value(r).reshape(3, model.dim)  # whitened values
    H2 = np.einsum("a,akj->kj", m[1], q.Q[1])
    H3 = np.einsum("a,akj->kj", m[2], q.Q[2])
    return H2, H3


def hessian_f23(model: ActionModel, frame, z: State, zero_tol: Optional[float] = None) -> HessianData:
    """Exact Hessian of the quartic f23 at z.

    With each whitened component m_row = r^T Q_row r / 2 + c_row,
    Hess f23 = 2 (J_C^T J_C + sum_row m_row Q_row).
    """
    frame = _frame(frame)
    model.check_dims(z)
    q = quadratic_moment(model, frame)
    r = z.real()
    _, J = q.complex_part(r)
    H2, H3 = _component_hessians(model, frame, r)
    H = 2 * (J.T @ J + H2 + H3)
    H = 0.5 * (H + H.T)
    ev, inertia, tol = _inertia(H, zero_tol)
    return HessianData(H, ev, inertia, tol, H2, H3)


def component_hessian_formula(model: ActionModel, frame, beta, l: int) -> np.ndarray:
    """Closed form -EPSILON * A_beta I'_l for the Hessian of <mu'_l, beta>."""
    frame = _frame(frame)
    A = np.einsum("a,aij->ij", np.asarray(beta, dtype=float), model.rep_real)
    return -EPSILON * A @ structure_matrix(frame.label(l), model.n)


class MorseIndex(NamedTuple):
    index: int
    nullity: int


def morse_index(h) -> MorseIndex:
    """Count eigenvalues below -tol and within [-tol, tol]; odd indices are logged."""
    if isinstance(h, HessianData):
        neg, zero, _ = h.inertia
    else:
        _, (neg, zero, _), _ = _inertia(np.asarray(h, dtype=float), None)
    if neg % 2:
        log.warning("odd Morse index %d: strata are expected to have even codimension", neg)
    return MorseIndex(neg, zero)


# -- locating critical points -----------------------------------------------


def _betas(model: ActionModel, frame: Frame, z: State):
    mu = eval_moment(model, frame, z)
    return mu.mu1, mu.mu2, mu.mu3


def action_gram(model: ActionModel, z: State) -> np.ndarray:
    """A_x as a matrix: A(e_a) . e_b = g((e_a)_z, (e_b)_z)."""
    X = model.rep_real @ z.real()  # (dim, 4n)
    K = X @ X.T
    return np.linalg.solve(model.lie.inner, K)


def _make_point(model: ActionModel, frame: Frame, z: State) -> CriticalPoint:
    q = quadratic_moment(model, frame)
    r = z.real()
    m, J = q.complex_part(r)
    grad = float(np.linalg.norm(2 * J.T @ m))
    b1, b2, b3 = _betas(model, frame, z)
    G = model.lie.inner
    f = float(b2 @ G @ b2 + b3 @ G @ b3)
    res = {
        "grad": grad,
        "beta2_z": infinitesimal_action(model, b2, z).norm(),
        "beta3_z": infinitesimal_action(model, b3, z).norm(),
        "bracket23": float(np.linalg.norm(model.lie.bracket(b2, b3))),
    }
    scale = cert_scale(z)
    certified = grad <= CERT_TOL * scale
    A = action_gram(model, z)
    sig = (
        f,
        model.lie.norm(b1),
        model.lie.norm(b2),
        model.lie.norm(b3),
        *np.sort(np.linalg.eigvals(A).real),
    )
    return CriticalPoint(z, b1, b2, b3, res, f, certified, tuple(sig))


def polish(model: ActionModel, frame, z: State, max_iter: int = 50):
    """Damped Newton iteration on grad f23 = 0 with least-squares steps.

    Returns ``(state, converged)``.
    """
    frame = _frame(frame)
    q = quadratic_moment(model, frame)
    r = z.real()

    def grad_at(r):
        m, J = q.complex_part(r)
        return 2 * J.T @ m

    g = grad_at(r)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= CERT_TOL * (1 + float(r @ r) ** 1.5):
            return State.from_real(r), True
        H = hessian_f23(model, frame, State.from_real(r)).H23
        step = -np.linalg.lstsq(H, g, rcond=1e-12)[0]
        lam = 1.0
        while lam > 1e-8:
            r_try = r + lam * step
            g_try = grad_at(r_try)
            if np.linalg.norm(g_try) < gn:
                break
            lam *= 0.5
        else:
            return State.from_real(r), False
        r, g = r_try, g_try
    return State.from_real(r), bool(np.linalg.norm(g) <= CERT_TOL * (1 + float(r @ r) ** 1.5))


def _same(a: tuple, b: tuple, tol: float) -> bool:
    return len(a) == len(b) and all(abs(u - v) <= tol * (1 + abs(v)) for u, v in zip(a, b))


def find_critical_points_with_diagnostics(
    model: ActionModel,
    frame,
    seeds: Iterable[State],
    opts: Optional[FlowOptions] = None,
    dedup: bool = True,
):
    """Descend f23 from each seed, polish, certify and deduplicate.

    Returns ``(points, dropped)`` where ``dropped`` lists (seed index, reason).
    """
    frame = _frame(frame)
    points: list[CriticalPoint] = []
    dropped = []
    for k, seed in enumerate(seeds):
        try:
            trace = integrate_descent(model, frame, "f23-on-V", seed, opts)
            z_end, status = trace.final, trace.status
        except StiffFailure as exc:
            z_end, status = exc.last_state, "stiff-failure"
        if status == "diverged":
            dropped.append((k, "diverged"))
            continue
        z, ok = polish(model, frame, z_end)
        if not ok:
            dropped.append((k, "polish did not converge"))
            log.info("seed %d dropped: polish did not converge", k)
            continue
        cp = _make_point(model, frame, z)
        if dedup and any(_same(cp.signature, p.signature, DEDUP_TOL) for p in points):
            continue
        points.append(cp)
    return points, dropped


def find_critical_points(model: ActionModel, frame, seeds, opts: Optional[FlowOptions] = None):
    return find_critical_points_with_diagnostics(model, frame, seeds, opts)[0]


def critical_point_at(model: ActionModel, frame, z: State) -> CriticalPoint:
    """Wrap a known point (e.g. the origin) without descending."""
    return _make_point(model, _frame(frame), z)


# -- identities ---------------------------------------------------------------


def verify_critical_identities(model: ActionModel, frame, cp: CriticalPoint, tol: float = IDENTITY_TOL) -> dict:
    """Margins of the vanishing and commutation identities at a critical point."""
    frame = _frame(frame)
    z = cp.z
    v2 = infinitesimal_action(model, cp.beta2, z)
    v3 = infinitesimal_action(model, cp.beta3, z)
    ortho = real_inner(v2, apply_structure(frame.label(1), v3))
    limit = tol * cert_scale(z)
    margins = {
        "beta2_z": v2.norm(),
        "beta3_z": v3.norm(),
        "bracket23": float(np.linalg.norm(model.lie.bracket(cp.beta2, cp.beta3))),
        "orthogonality": abs(ortho),
    }
    return {"margins": margins, "limit": limit, "passed": all(v <= limit for v in margins.values())}


def resolved_betas(model: ActionModel, cp: CriticalPoint):
    """beta_1, beta_2, beta_3 with any beta below the identity resolution set to zero.

    A certified point only pins the betas down to IDENTITY_TOL * (1 + |z|^3);
    near the origin a zero-level minimum keeps betas of that size, which would
    otherwise read as genuine nonzero values.
    """
    resolution = IDENTITY_TOL * cert_scale(cp.z)
    return tuple(np.zeros_like(b) if model.lie.norm(b) <= resolution else b for b in (cp.beta1, cp.beta2, cp.beta3))


class AnticommutatorMargins(NamedTuple):
    anticommutator: float
    square: float


def anticommutator_check(model: ActionModel, frame, cp: CriticalPoint) -> AnticommutatorMargins:
    """Relative sizes of H2 H3 + H3 H2 and (H2 + H3)^2 - H2^2 - H3^2.

    Each is divided by the product (or sum of squares) of the norms plus the
    squared identity tolerance at this point.
    """
    frame = _frame(frame)
    H2, H3 = _component_hessians(model, frame, cp.z.real())
    # The anticommutator equals the action of [beta_2, beta_3] composed with a
    # complex structure, so a round-off beta makes the ratio pure noise.
    _, b2, b3 = resolved_betas(model, cp)
    if not np.any(b2):
        H2 = np.zeros_like(H2)
    if not np.any(b3):
        H3 = np.zeros_like(H3)
    resolution = IDENTITY_TOL * cert_scale(cp.z)
    n2, n3 = np.linalg.norm(H2), np.linalg.norm(H3)
    tiny = resolution**2
    anti = float(np.linalg.norm(H2 @ H3 + H3 @ H2) / (n2 * n3 + tiny))
    H = H2 + H3
    sq = float(np.linalg.norm(H @ H - H2 @ H2 - H3 @ H3) / (n2 * n2 + n3 * n3 + tiny))
    return AnticommutatorMargins(anti, sq)


# -- lifted matrix ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LiftedHessian:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    M: np.ndarray
    Mprime: np.ndarray
    Mprime_adj: np.ndarray
    L: np.ndarray  # orthonormal columns spanning k + stab^3
    stab: np.ndarray  # orthonormal columns spanning ker B2 ∩ ker B3
    commutation: dict
    adjugate_residual: float
    lift_residuals: dict  # ||P M - H P / 2|| per sign variant
    certified_variant: Optional[str]
    sign: float  # sign applied to the beta's in M (the certifying variant)
    scale: float  # spectral norm of M; kernel cutoffs are relative to it


def _null_space(X: np.ndarray, rtol: float = KERNEL_RTOL, abs_cut: Optional[float] = None) -> np.ndarray:
    """Right singular vectors below ``abs_cut`` (default ``rtol * sigma_max``)."""
    n = X.shape[1]
    if X.size == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(X)
    cut = rtol * (s[0] if s.size else 0.0) if abs_cut is None else abs_cut
    rank = int(np.sum(s > cut))
    return vt[rank:].T


def lifted_matrix(A, B1, B2, B3) -> np.ndarray:
    Z = np.zeros_like(A)
    return np.block(
        [
            [Z, Z, -B2, -B3],
            [Z, Z, -B3, B2],
            [Z, 2 * B3, A, -B1],
            [Z, -2 * B2, B1, A],
        ]
    )


def adjugate_closed_form(A, B1, B2, B3) -> np.ndarray:
    return np.block(
        [
            [A @ A + B1 @ B1, B1 @ B2 + A @ B3, B1 @ B3 - A @ B2],
            [2 * (B1 @ B2 - A @ B3), 2 * B2 @ B2, 2 * B2 @ B3],
            [2 * (B1 @ B3 + A @ B2), 2 * B2 @ B3, 2 * B3 @ B3],
        ]
    )


def adjugate_product_closed_form(A, B1, B2, B3) -> np.ndarray:
    Z = np.zeros_like(A)
    D = 2 * A @ (B2 @ B2 + B3 @ B3)
    C = B1 @ A - A @ B1
    return np.block([[D, C @ B2, C @ B3], [Z, D, Z], [Z, Z, D]])


def _lift_map(model: ActionModel, frame: Frame, z: State) -> np.ndarray:
    """P: k^4 -> T_z V, (a, b, c, d) -> a_z + I'_1 b_z + I'_2 c_z + I'_3 d_z (real coordinates)."""
    X = (model.rep_real @ z.real()).T  # columns (e_a)_z
    blocks = [X] + [structure_matrix(frame.label(l), model.n) @ X for l in (1, 2, 3)]
    return np.concatenate(blocks, axis=1)


def assemble_lifted_hessian(model: ActionModel, frame, cp: CriticalPoint, comm_tol: float = 1e-8) -> LiftedHessian:
    frame = _frame(frame)
    lie = model.lie
    A = action_gram(model, cp.z)
    B1, B2, B3 = (lie.ad_matrix(b) for b in resolved_betas(model, cp))
    scale = (1 + np.linalg.norm(A) + np.linalg.norm(B1) + np.linalg.norm(B2) + np.linalg.norm(B3)) ** 2

    def c(X, Y):
        return float(np.linalg.norm(X @ Y - Y @ X))

    comm = {
        "[A,B2]": c(A, B2),
        "[A,B3]": c(A, B3),
        "[B1,B2]": c(B1, B2),
        "[B1,B3]": c(B1, B3),
        "[B2,B3]": c(B2, B3),
    }
    if max(comm.values()) > comm_tol * scale:
        raise LiftedHessianError("commutation hypotheses fail at this point", comm)
    # which sign convention makes M a lift of H/2 through P
    P = _lift_map(model, frame, cp.z)
    H = hessian_f23(model, frame, cp.z).H23
    lift = {}
    for name, sgn in (("as-written", 1.0), ("flipped", -1.0)):
        Mv = lifted_matrix(A, sgn * B1, sgn * B2, sgn * B3)
        num = np.linalg.norm(P @ Mv - 0.5 * H @ P)
        den = np.linalg.norm(P) * (np.linalg.norm(Mv) + np.linalg.norm(H)) + 1e-300
        lift[name] = float(num / den)
    best = min(lift, key=lift.get)
    certified = best if lift[best] <= 1e-8 else None
    sign = -1.0 if certified == "flipped" else 1.0
    B1, B2, B3 = sign * B1, sign * B2, sign * B3
    M = lifted_matrix(A, B1, B2, B3)
    d = lie.dim
    Mp = M[d:, d:]
    Madj = adjugate_closed_form(A, B1, B2, B3)
    E = adjugate_product_closed_form(A, B1, B2, B3)
    denom = np.linalg.norm(Madj) * np.linalg.norm(Mp)
    adj_res = float(np.linalg.norm(Madj @ Mp - E) / denom) if denom > 0 else 0.0
    # kernel cutoffs are relative to the whole lifted matrix, so that beta's at
    # round-off level (minima) count as zero
    smax = float(np.linalg.norm(M, 2))
    stab = _null_space(np.vstack([B2, B3]), abs_cut=KERNEL_RTOL * smax)
    L = np.zeros((4 * d, d + 3 * stab.shape[1]))
    L[:d, :d] = np.eye(d)
    for s in range(3):
        L[(s + 1) * d : (s + 2) * d, d + s * stab.shape[1] : d + (s + 1) * stab.shape[1]] = stab
    return LiftedHessian(A, B1, B2, B3, M, Mp, Madj, L, stab, comm, adj_res, lift, certified, sign, smax)


@dataclass(frozen=True)
class KernelVerdict:
    contained: bool
    kernel_dim: int
    max_kernel_distance: float
    preimage_dim: int
    preimage_contained: bool
    max_preimage_distance: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_kernel_containment(lh: LiftedHessian, tol: float = KERNEL_RTOL) -> KernelVerdict:
    """ker M ⊆ L, and the stronger M^{-1}(L) ⊆ L.

    The preimage of L is the full kernel of (I - P_L) M, so the second check
    covers every preimage, not only those of individual basis vectors.
    """
    L = lh.L
    PL = L @ L.T
    I = np.eye(PL.shape[0])

    def dist(V):
        if V.shape[1] == 0:
            return 0.0
        return float(np.max(np.linalg.norm((I - PL) @ V, axis=0)))

    cut = tol * lh.scale
    K = _null_space(lh.M, abs_cut=cut)
    pre = _null_space((I - PL) @ lh.M, abs_cut=cut)
    dk, dp = dist(K), dist(pre)
    return KernelVerdict(dk <= tol, K.shape[1], dk, pre.shape[1], dp <= tol, dp)
