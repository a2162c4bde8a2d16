"""Catalog of linear hyperkähler actions and their moment maps.

Coalgebra conventions
---------------------
Every Lie algebra carries an invariant inner product that identifies it with
its dual, so moment values are stored as Lie-algebra coefficient vectors.
For the u(n) catalog entries the closed forms are gl(n)-valued matrices, e.g.
``mu_1 = (sqrt(-1)/2)(x x^† - y^† y)`` and ``mu_C = x y``.  A matrix ``X`` is
converted to coefficients by the complex-linear rule ``X -> -tr(X e_a)``.
Applied to ``mu_1`` this gives real coefficients; applied to ``mu_C`` it
gives ``mu_2 + sqrt(-1) mu_3``.  For a circle acting with weight one this
reads ``mu_1 = (|x|^2 - |y|^2)/2`` and ``mu_C = -sqrt(-1) (x y - c)``, and
with these conventions

    <dmu_l(v), xi> = EPSILON * g(xi_z, I_l v)     (EPSILON = +1, l = 1, 2, 3)

holds for every model, frame and component.

Central constants are given in the same matrix convention as the closed
forms (``mu_C = x.y - c`` for the circle) and subtracted.

State layout
------------
Matrix-valued coordinates are flattened row-major.  The "y" half stores the
*transpose* of the cotangent matrices, so that the holomorphic pairing is
always ``sum_k x_k y_k`` and ``j(x, y) = (-conj y, conj x)`` is the standard
quaternionic structure ``(B1, B2) -> (-B2^†, B1^†)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import lie as lie_mod
from .core import DomainError, Frame, State, Tangent
from .lie import LieAlgebraPresentation, matrix_coefficients

REP_TOL = 1e-10


class ModelError(ValueError):
    """Unknown model kind or inconsistent model data."""


@dataclass(frozen=True, eq=False)
class MomentValue:
    mu1: np.ndarray
    muC: np.ndarray

    def __post_init__(self):
        mu1 = np.array(self.mu1, dtype=float).reshape(-1)
        muC = np.array(self.muC, dtype=complex).reshape(-1)
        if mu1.shape != muC.shape:
            raise DomainError("mu1 and muC have different lengths")
        if not (np.all(np.isfinite(mu1)) and np.all(np.isfinite(muC))):
            raise DomainError("moment value has non-finite entries")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "muC", muC)

    @property
    def mu2(self) -> np.ndarray:
        return self.muC.real

    @property
    def mu3(self) -> np.ndarray:
        return self.muC.imag

    def triple(self) -> np.ndarray:
        return np.stack([self.mu1, self.muC.real, self.muC.imag])

    @classmethod
    def from_triple(cls, t) -> "MomentValue":
        t = np.asarray(t, dtype=float)
        return cls(t[0], t[1] + 1j * t[2])

    def __sub__(self, other: "MomentValue") -> "MomentValue":
        return MomentValue(self.mu1 - other.mu1, self.muC - other.muC)


def _complex(c) -> complex:
    """Parse a JSON complex number: a number or a [re, im] pair."""
    if isinstance(c, (list, tuple)):
        if len(c) != 2:
            raise ModelError(f"complex constants are [re, im] pairs, got {c!r}")
        return complex(float(c[0]), float(c[1]))
    return complex(c)


def _real_matrix(A: np.ndarray) -> np.ndarray:
    """Real form of a complex-linear map in ``concat(Re z, Im z)`` coordinates."""
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


class ActionModel:
    """A compact group acting linearly on T*C^n, with its moment map.

    Subclasses supply the closed forms ``_moment`` and ``_differential``
    (batched over leading axes) and the infinitesimal action ``_act``.
    """

    kind = "abstract"

    def __init__(self, lie: LieAlgebraPresentation, n: int, descriptor: dict):
        self.lie = lie
        self.n = int(n)
        self.descriptor = descriptor
        self._cache: dict = {}
        self.rep = self._build_rep()
        self.rep_real = np.array([_real_matrix(A) for A in self.rep]).reshape(
            self.dim, 4 * self.n, 4 * self.n
        )
        self._validate_rep()

    @property
    def dim(self) -> int:
        return self.lie.dim

    # -- closed forms (override) --------------------------------------------
    def _moment(self, x, y):
        raise NotImplementedError

    def _differential(self, x, y, dx, dy):
        raise NotImplementedError

    def _act(self, xi, x, y):
        raise NotImplementedError

    def torus_indices(self) -> list[int]:
        """Basis indices spanning a maximal torus with diagonal action."""
        raise ModelError(f"no maximal torus known for {self.kind}")

    # ------------------------------------------------------------------------
    @property
    def constants(self) -> MomentValue:
        """Central constants as coefficient vectors (mu = closed form - constants)."""
        mu1, muC = self._moment(np.zeros(self.n, complex), np.zeros(self.n, complex))
        return MomentValue(-mu1, -muC)

    def _build_rep(self) -> np.ndarray:
        m = 2 * self.n
        reps = np.zeros((self.dim, m, m), dtype=complex)
        basis = np.eye(m, dtype=complex)
        for a, xi in enumerate(np.eye(self.dim)):
            dx, dy = self._act(xi, basis[:, : self.n], basis[:, self.n :])
            reps[a] = np.concatenate([dx, dy], axis=1).T
        return reps

    def _validate_rep(self) -> None:
        n = self.n
        T = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
        for a, A in enumerate(self.rep):
            scale = 1 + np.linalg.norm(A)
            if np.linalg.norm(A + A.conj().T) > REP_TOL * scale:
                raise ModelError(f"generator {a} does not act isometrically")
            if np.linalg.norm(T @ A.conj() - A @ T) > REP_TOL * scale:
                raise ModelError(f"generator {a} does not preserve the quaternionic structure")
        c = self.constants
        if not (self.lie.is_central(c.mu1) and self.lie.is_central(c.muC)):
            raise ModelError("central constants do not lie in the center")

    def check_dims(self, z: State) -> None:
        if z.n != self.n:
            raise DomainError(f"state has n={z.n}, model expects n={self.n}")

    def __repr__(self) -> str:
        return f"<{type(self).__name__} kind={self.kind} n={self.n} dim={self.dim}>"


# -- torus -------------------------------------------------------------------


class TorusModel(ActionModel):
    """T^r acting on coordinate k with weight column ``weights[:, k]``."""

    kind = "torus-weights"

    def __init__(self, weights, c1=None, cC=None, descriptor=None):
        a = np.atleast_2d(np.asarray(weights))
        if not np.all(np.equal(np.round(a), a)):
            raise ModelError("torus weights must be integers")
        self.weights = a.astype(int)
        r, n = self.weights.shape
        c1 = np.zeros(r) if c1 is None else np.broadcast_to(np.asarray(c1, float), (r,)).copy()
        cC = self._parse_complex_list(cC, r)
        self.c1_closed = c1
        self.cC_closed = cC
        super().__init__(lie_mod.abelian(r), n, descriptor or {})

    @staticmethod
    def _parse_complex_list(cC, r: int) -> np.ndarray:
        """Scalar, [re, im] pair (rank one), or one entry per torus factor."""
        if cC is None:
            return np.zeros(r, complex)
        if isinstance(cC, (list, tuple)):
            if len(cC) == r:
                return np.array([_complex(c) for c in cC], dtype=complex)
            if r == 1 and len(cC) == 2:
                return np.array([_complex(cC)])
            raise ModelError(f"expected {r} complex constants, got {cC!r}")
        return np.full(r, _complex(cC), dtype=complex)

    def _moment(self, x, y):
        a = self.weights
        mu1 = 0.5 * (np.abs(x) ** 2 - np.abs(y) ** 2) @ a.T - self.c1_closed
        muC = -1j * ((x * y) @ a.T - self.cC_closed)
        return mu1, muC

    def _differential(self, x, y, dx, dy):
        a = self.weights
        dmu1 = np.real(np.conj(x) * dx - np.conj(y) * dy) @ a.T
        dmuC = -1j * ((dx * y + x * dy) @ a.T)
        return dmu1, dmuC

    def _act(self, xi, x, y):
        w = self.weights.T @ np.asarray(xi, dtype=float)
        return 1j * w * x, -1j * w * y

    def torus_indices(self):
        return list(range(self.dim))


# -- u(n) catalog ------------------------------------------------------------


def _dag(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _comm(A, B):
    return A @ B - B @ A


class UnitaryModel(ActionModel):
    """Shared machinery for U(n) acting on matrix spaces."""

    def __init__(self, n_group: int, n_coords: int, c1=0.0, cC=0.0, descriptor=None):
        self.ng = int(n_group)
        g = lie_mod.unitary(self.ng)
        self.basis_mats = g.matrices
        eye = np.eye(self.ng)
        self.c1_coeff = np.real(matrix_coefficients(1j * float(c1) * eye, g.matrices))
        self.cC_coeff = matrix_coefficients(_complex(cC) * eye, g.matrices)
        super().__init__(g, n_coords, descriptor or {})

    def _matrices(self, x, y):
        raise NotImplementedError

    def _dmatrices(self, x, y, dx, dy):
        raise NotImplementedError

    def _act_matrix(self, X, x, y):
        raise NotImplementedError

    def _moment(self, x, y):
        M1, MC = self._matrices(x, y)
        E = self.basis_mats
        return (
            np.real(matrix_coefficients(M1, E)) - self.c1_coeff,
            matrix_coefficients(MC, E) - self.cC_coeff,
        )

    def _differential(self, x, y, dx, dy):
        dM1, dMC = self._dmatrices(x, y, dx, dy)
        E = self.basis_mats
        return np.real(matrix_coefficients(dM1, E)), matrix_coefficients(dMC, E)

    def _act(self, xi, x, y):
        X = np.einsum("a,aij->ij", np.asarray(xi, dtype=float), self.basis_mats)
        return self._act_matrix(X, x, y)

    def torus_indices(self):
        return list(range(self.ng))


class HomModel(UnitaryModel):
    """U(n) on T*Hom(C^k, C^n):  mu_1 = (i/2)(x x^† - y^† y),  mu_C = x y."""

    kind = "u(n)-on-T*Hom(k,n)"

    def __init__(self, n, k, c1=0.0, cC=0.0, descriptor=None):
        self.k = int(k)
        super().__init__(n, int(n) * self.k, c1, cC, descriptor)

    def _split(self, x, y):
        n, k = self.ng, self.k
        X = x.reshape(x.shape[:-1] + (n, k))
        Y = np.swapaxes(y.reshape(y.shape[:-1] + (n, k)), -1, -2)
        return X, Y

    def _matrices(self, x, y):
        X, Y = self._split(x, y)
        return 0.5j * (X @ _dag(X) - _dag(Y) @ Y), X @ Y

    def _dmatrices(self, x, y, dx, dy):
        X, Y = self._split(x, y)
        dX, dY = self._split(dx, dy)
        dM1 = 0.5j * (dX @ _dag(X) + X @ _dag(dX) - _dag(dY) @ Y - _dag(Y) @ dY)
        return dM1, dX @ Y + X @ dY

    def _act_matrix(self, A, x, y):
        X, Y = self._split(x, y)
        dX, dY = A @ X, -Y @ A
        lead = x.shape[:-1]
        return dX.reshape(lead + (-1,)), np.swapaxes(dY, -1, -2).reshape(lead + (-1,))


class EndModel(UnitaryModel):
    """U(n) on T*End(C^n) by conjugation:  mu_C = [B1, B2]."""

    kind = "u(n)-on-T*End(n)"

    def __init__(self, n, c1=0.0, cC=0.0, descriptor=None):
        super().__init__(n, int(n) ** 2, c1, cC, descriptor)

    def _split(self, x, y):
        n = self.ng
        B1 = x.reshape(x.shape[:-1] + (n, n))
        B2 = np.swapaxes(y.reshape(y.shape[:-1] + (n, n)), -1, -2)
        return B1, B2

    def _matrices(self, x, y):
        B1, B2 = self._split(x, y)
        return 0.5j * (_comm(B1, _dag(B1)) + _comm(B2, _dag(B2))), _comm(B1, B2)

    def _dmatrices(self, x, y, dx, dy):
        B1, B2 = self._split(x, y)
        d1, d2 = self._split(dx, dy)
        dM1 = 0.5j * (
            _comm(d1, _dag(B1)) + _comm(B1, _dag(d1)) + _comm(d2, _dag(B2)) + _comm(B2, _dag(d2))
        )
        return dM1, _comm(d1, B2) + _comm(B1, d2)

    def _act_matrix(self, A, x, y):
        B1, B2 = self._split(x, y)
        lead = x.shape[:-1]
        return (
            _comm(A, B1).reshape(lead + (-1,)),
            np.swapaxes(_comm(A, B2), -1, -2).reshape(lead + (-1,)),
        )


class ADHMModel(UnitaryModel):
    """U(n) on T*End(C^n) x T*Hom(C^k, C^n):  mu_C = [B1, B2] + x y."""

    kind = "adhm"

    def __init__(self, n, k, c1=0.0, cC=0.0, descriptor=None):
        self.k = int(k)
        n = int(n)
        super().__init__(n, n * n + n * self.k, c1, cC, descriptor)

    def _split(self, x, y):
        n, k = self.ng, self.k
        lead = x.shape[:-1]
        B1 = x[..., : n * n].reshape(lead + (n, n))
        X = x[..., n * n :].reshape(lead + (n, k))
        B2 = np.swapaxes(y[..., : n * n].reshape(lead + (n, n)), -1, -2)
        Y = np.swapaxes(y[..., n * n :].reshape(lead + (n, k)), -1, -2)
        return B1, B2, X, Y

    def _matrices(self, x, y):
        B1, B2, X, Y = self._split(x, y)
        M1 = 0.5j * (_comm(B1, _dag(B1)) + _comm(B2, _dag(B2)) + X @ _dag(X) - _dag(Y) @ Y)
        return M1, _comm(B1, B2) + X @ Y

    def _dmatrices(self, x, y, dx, dy):
        B1, B2, X, Y = self._split(x, y)
        d1, d2, dX, dY = self._split(dx, dy)
        dM1 = 0.5j * (
            _comm(d1, _dag(B1))
            + _comm(B1, _dag(d1))
            + _comm(d2, _dag(B2))
            + _comm(B2, _dag(d2))
            + dX @ _dag(X)
            + X @ _dag(dX)
            - _dag(dY) @ Y
            - _dag(Y) @ dY
        )
        dMC = _comm(d1, B2) + _comm(B1, d2) + dX @ Y + X @ dY
        return dM1, dMC

    def _act_matrix(self, A, x, y):
        B1, B2, X, Y = self._split(x, y)
        lead = x.shape[:-1]
        fx = np.concatenate(
            [_comm(A, B1).reshape(lead + (-1,)), (A @ X).reshape(lead + (-1,))], axis=-1
        )
        fy = np.concatenate(
            [
                np.swapaxes(_comm(A, B2), -1, -2).reshape(lead + (-1,)),
                np.swapaxes(-Y @ A, -1, -2).reshape(lead + (-1,)),
            ],
            axis=-1,
        )
        return fx, fy


# -- composites --------------------------------------------------------------


class DirectSumModel(ActionModel):
    """K1 x ... x Km acting on V1 + ... + Vm; the moment map is the direct sum."""

    kind = "direct-sum"

    def __init__(self, summands, descriptor=None):
        self.summands = list(summands)
        if not self.summands:
            raise ModelError("direct sum needs at least one summand")
        self._ns = [m.n for m in self.summands]
        self._ds = [m.dim for m in self.summands]
        super().__init__(
            lie_mod.direct_sum(*[m.lie for m in self.summands]), sum(self._ns), descriptor or {}
        )

    def _pieces(self, x, y):
        out, off = [], 0
        for n in self._ns:
            out.append((x[..., off : off + n], y[..., off : off + n]))
            off += n
        return out

    def _moment(self, x, y):
        parts = [m._moment(px, py) for m, (px, py) in zip(self.summands, self._pieces(x, y))]
        return (
            np.concatenate([p[0] for p in parts], axis=-1),
            np.concatenate([p[1] for p in parts], axis=-1),
        )

    def _differential(self, x, y, dx, dy):
        parts = [
            m._differential(px, py, qx, qy)
            for m, (px, py), (qx, qy) in zip(self.summands, self._pieces(x, y), self._pieces(dx, dy))
        ]
        return (
            np.concatenate([p[0] for p in parts], axis=-1),
            np.concatenate([p[1] for p in parts], axis=-1),
        )

    def _act(self, xi, x, y):
        xi = np.asarray(xi, dtype=float)
        fx, fy, off = [], [], 0
        for m, (px, py) in zip(self.summands, self._pieces(x, y)):
            ax, ay = m._act(xi[off : off + m.dim], px, py)
            fx.append(ax)
            fy.append(ay)
            off += m.dim
        return np.concatenate(fx, axis=-1), np.concatenate(fy, axis=-1)

    def torus_indices(self):
        out, off = [], 0
        for m in self.summands:
            out += [off + i for i in m.torus_indices()]
            off += m.dim
        return out


class RestrictionModel(ActionModel):
    """Action of H through a homomorphism with differential ``hom`` (dim K x dim H).

    The moment map is the parent's composed with the dual of ``hom``; with the
    inner products identifying algebras and duals this is
    ``G_H^{-1} hom^T G_K mu_K``.
    """

    kind = "restriction"

    def __init__(self, parent: ActionModel, hom, lie=None, descriptor=None):
        self.parent = parent
        D = np.atleast_2d(np.asarray(hom, dtype=float))
        if D.shape[0] != parent.dim:
            raise ModelError(f"homomorphism has {D.shape[0]} rows, parent algebra has dim {parent.dim}")
        self.hom = D
        if lie is None:
            G = D.T @ parent.lie.inner @ D
            lie = lie_mod.abelian(D.shape[1], inner=G, name=f"h{D.shape[1]}")
            # an abelian default is only valid when the image is abelian
        else:
            lie = lie_mod.from_descriptor(lie)
        if lie.dim != D.shape[1]:
            raise ModelError("homomorphism columns do not match the subalgebra dimension")
        self._check_homomorphism(lie)
        self._dual = np.linalg.solve(lie.inner, D.T @ parent.lie.inner)
        super().__init__(lie, parent.n, descriptor or {})

    def _check_homomorphism(self, lie: LieAlgebraPresentation, tol: float = 1e-10) -> None:
        D, pk = self.hom, self.parent.lie
        for b in range(lie.dim):
            for c in range(lie.dim):
                lhs = D @ lie.constants[:, b, c]
                rhs = pk.bracket(D[:, b], D[:, c])
                if np.linalg.norm(lhs - rhs) > tol * (1 + np.linalg.norm(rhs)):
                    raise ModelError("matrix is not a Lie algebra homomorphism")

    def _moment(self, x, y):
        mu1, muC = self.parent._moment(x, y)
        return mu1 @ self._dual.T, muC @ self._dual.T

    def _differential(self, x, y, dx, dy):
        d1, dC = self.parent._differential(x, y, dx, dy)
        return d1 @ self._dual.T, dC @ self._dual.T

    def _act(self, xi, x, y):
        return self.parent._act(self.hom @ np.asarray(xi, dtype=float), x, y)

    def torus_indices(self):
        if self.lie.is_abelian:
            return list(range(self.dim))
        raise ModelError("maximal torus of a nonabelian restriction is not tracked")


# -- construction ------------------------------------------------------------


def build_model(spec) -> ActionModel:
    """Build an :class:`ActionModel` from a descriptor dict.

    Kinds: ``circle`` (n, optional weights), ``torus`` (weights r x n),
    ``hom`` (n, k), ``end`` (n), ``adhm`` (n, k), ``direct-sum`` (summands),
    ``restriction`` (parent, homomorphism, optional lie).  Constants ``c1`` and
    ``cC`` (alias ``c``) follow the closed-form convention.
    """
    if isinstance(spec, ActionModel):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ModelError(f"model descriptor must be a dict with a 'kind': {spec!r}")
    kind = spec["kind"]
    cC = spec.get("cC", spec.get("c"))
    c1 = spec.get("c1")
    try:
        if kind == "circle":
            n = int(spec["n"])
            weights = spec.get("weights", [1] * n)
            if len(weights) != n:
                raise ModelError("circle weights must have length n")
            return TorusModel([weights], c1, cC, descriptor=spec)
        if kind in ("torus", "torus-weights"):
            return TorusModel(spec["weights"], c1, cC, descriptor=spec)
        if kind in ("hom", "u(n)-on-T*Hom(k,n)"):
            return HomModel(spec["n"], spec.get("k", 1), c1 or 0.0, cC or 0.0, descriptor=spec)
        if kind in ("end", "u(n)-on-T*End(n)"):
            return EndModel(spec["n"], c1 or 0.0, cC or 0.0, descriptor=spec)
        if kind == "adhm":
            return ADHMModel(spec["n"], spec.get("k", 1), c1 or 0.0, cC or 0.0, descriptor=spec)
        if kind == "direct-sum":
            return DirectSumModel([build_model(s) for s in spec["summands"]], descriptor=spec)
        if kind == "restriction":
            return RestrictionModel(
                build_model(spec["parent"]), spec["homomorphism"], spec.get("lie"), descriptor=spec
            )
    except KeyError as exc:
        raise ModelError(f"descriptor for {kind!r} is missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"inconsistent descriptor for {kind!r}: {exc}") from exc
    raise ModelError(f"unknown model kind {kind!r}")


def maximal_torus(model: ActionModel) -> ActionModel:
    """Restrict to the maximal torus spanned by ``model.torus_indices()``."""
    if model.lie.is_abelian:
        return model
    idx = model.torus_indices()
    D = np.eye(model.dim)[:, idx]
    return RestrictionModel(model, D, descriptor={"kind": "restriction", "maximal_torus_of": model.descriptor})


def torus_weights(model: ActionModel, tol: float = 1e-9) -> np.ndarray:
    """Integer weight matrix (rank x n) of an abelian model acting diagonally."""
    if not model.lie.is_abelian:
        raise ModelError("weights are defined for torus actions only")
    if isinstance(model, TorusModel):
        return model.weights
    n = model.n
    W = np.zeros((model.dim, n))
    for a, A in enumerate(model.rep):
        if np.linalg.norm(A - np.diag(np.diag(A))) > tol:
            raise ModelError("torus does not act diagonally in the coordinate basis")
        d = np.diag(A)
        if np.max(np.abs(d.real), initial=0) > tol or np.max(np.abs(d[:n] + d[n:]), initial=0) > tol:
            raise ModelError("torus action is not of cotangent-weight form")
        W[a] = d[:n].imag
    if np.max(np.abs(W - np.round(W)), initial=0) > tol:
        raise ModelError("torus weights are not integral")
    return np.round(W).astype(int)


# -- evaluation --------------------------------------------------------------


def bracket(model: ActionModel, a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != (model.dim,) or b.shape != (model.dim,):
        raise DomainError(f"Lie algebra vectors must have length {model.dim}")
    return model.lie.bracket(a, b)


def ad_matrix(model: ActionModel, beta) -> np.ndarray:
    try:
        return model.lie.ad_matrix(beta)
    except lie_mod.LieAlgebraError as exc:
        raise DomainError(str(exc)) from exc


def _frame(frame) -> Frame:
    if frame is None:
        return Frame.identity()
    return frame if isinstance(frame, Frame) else Frame(frame)


def eval_moment(model: ActionModel, frame, z: State) -> MomentValue:
    """Closed-form moment map in the reference frame, rotated by ``frame``."""
    model.check_dims(z)
    mu1, muC = model._moment(z.x, z.y)
    ref = MomentValue(mu1, muC)
    R = _frame(frame).R
    if np.array_equal(R, np.eye(3)):
        return ref
    return MomentValue.from_triple(R @ ref.triple())


def infinitesimal_action(model: ActionModel, xi, z: State) -> Tangent:
    """The vector field xi_z = (sum_a xi_a R(e_a)) z."""
    model.check_dims(z)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (model.dim,):
        raise DomainError(f"Lie algebra vector must have length {model.dim}")
    return State.from_vector(np.einsum("a,aij,j->i", xi, model.rep, z.vector()))


def group_element(model: ActionModel, xi, t: float = 1.0) -> np.ndarray:
    """Complex matrix of exp(t xi) acting on ``z.vector()``."""
    A = np.einsum("a,aij->ij", np.asarray(xi, dtype=float), model.rep)
    return scipy.linalg.expm(t * A)


def coadjoint(model: ActionModel, xi, t: float = 1.0) -> np.ndarray:
    """Ad_{exp(t xi)} on Lie-algebra coefficient vectors."""
    return scipy.linalg.expm(t * model.lie.ad_matrix(np.asarray(xi, dtype=float)))


class MomentDifferential:
    """The real-linear map v -> dmu(v) at a point, as a (3 dim) x (4n) matrix.

    Rows are ordered mu_1 block, mu_2 block, mu_3 block (frame-rotated).
    """

    def __init__(self, matrix: np.ndarray, dim: int):
        self.matrix = matrix
        self.dim = dim

    def __call__(self, v: Tangent) -> MomentValue:
        return MomentValue.from_triple((self.matrix @ v.real()).reshape(3, self.dim))

    @property
    def complex_part(self) -> np.ndarray:
        """Rows of mu_2 and mu_3."""
        return self.matrix[self.dim :]


def _real_basis(n: int):
    E = np.eye(4 * n)
    Z = E[:, : 2 * n] + 1j * E[:, 2 * n :]
    return Z[:, :n], Z[:, n:]


def moment_jacobian(model: ActionModel, frame, z: State) -> MomentDifferential:
    """Closed-form differential of ``eval_moment`` at ``z``."""
    model.check_dims(z)
    dx, dy = _real_basis(model.n)
    d1, dC = model._differential(z.x[None, :], z.y[None, :], dx, dy)
    mat = np.concatenate([d1.T, dC.real.T, dC.imag.T], axis=0)
    R = _frame(frame).R
    mat = np.einsum("lm,mak->lak", R, mat.reshape(3, model.dim, -1)).reshape(3 * model.dim, -1)
    return MomentDifferential(mat, model.dim)


class QuadraticMoment:
    """Exact quadratic-form representation of a frame-rotated moment map.

    Each whitened component is ``0.5 r^T Q_row r + const_row`` in real
    coordinates; rows follow ``MomentDifferential`` ordering.  Built from the
    closed-form differential, which is linear in the base point.
    """

    def __init__(self, model: ActionModel, frame):
        frame = _frame(frame)
        self.model = model
        self.frame = frame
        d, N = model.dim, 4 * model.n
        self.dim, self.N = d, N
        dx, dy = _real_basis(model.n)
        # differential at every real basis point, in every real basis direction
        bx = dx[:, None, :]
        by = dy[:, None, :]
        d1, dC = model._differential(bx, by, dx[None, :, :], dy[None, :, :])
        Q = np.concatenate([d1, dC.real, dC.imag], axis=-1)  # (base k, dir m, row)
        Q = np.transpose(Q, (2, 0, 1)).reshape(3, d, N, N)
        Q = np.einsum("lm,makj->lakj", frame.R, Q)
        L = model.lie._chol.T
        Q = np.einsum("ba,lakj->lbkj", L, Q)
        self.Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
        self.asym = float(np.max(np.abs(Q - np.swapaxes(Q, -1, -2)), initial=0.0))
        c = model.constants.triple()
        c = frame.R @ c
        self.const = -(c @ L.T)
        self.Qflat = self.Q.reshape(3 * d * N, N)
        self.QC = self.Q[1:].reshape(2 * d, N, N)
        self.QCflat = self.QC.reshape(2 * d * N, N)
        self.Q1 = self.Q[0]
        self.Q1flat = self.Q1.reshape(d * N, N)
        self.constC = self.const[1:].reshape(-1)
        self.const1 = self.const[0]

    def jac(self, r):
        return (self.Qflat @ r).reshape(3 * self.dim, self.N)

    def value(self, r):
        J = self.jac(r)
        return 0.5 * (J @ r) + self.const.reshape(-1)

    def complex_part(self, r):
        """Whitened (mu_2, mu_3) values and their Jacobian."""
        J = (self.QCflat @ r).reshape(2 * self.dim, self.N)
        return 0.5 * (J @ r) + self.constC, J

    def real_part(self, r):
        J = (self.Q1flat @ r).reshape(self.dim, self.N)
        return 0.5 * (J @ r) + self.const1, J


def quadratic_moment(model: ActionModel, frame=None) -> QuadraticMoment:
    frame = _frame(frame)
    key = ("quad", frame.key())
    q = model._cache.get(key)
    if q is None:
        q = model._cache[key] = QuadraticMoment(model, frame)
    return q
