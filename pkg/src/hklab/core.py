"""Flat quaternionic linear algebra on T*C^n = C^n x C^n.

A point is a pair ``(x, y)`` of complex n-vectors.  The three complex
structures are

    i(x, y) = (sqrt(-1) x, sqrt(-1) y)
    j(x, y) = (-conj(y), conj(x))
    k = i o j

and the metric is the real part of the standard Hermitian product.  Real
coordinates are laid out as ``concat(Re z, Im z)`` with ``z = concat(x, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Global sign in  <dmu_l(v), xi> = EPSILON * g(xi_z, I_l v)  (l = 1, 2, 3).
#: Fixed by reading mu_1 = (sqrt(-1)/2)(|x|^2 - |y|^2) as the real coefficient
#: (|x|^2 - |y|^2)/2 of the circle generator sqrt(-1); see ``models``.
EPSILON = 1

TOL = 1e-12


class DomainError(ValueError):
    """Input outside the domain of an operation."""


def _as_cvec(a) -> np.ndarray:
    arr = np.array(a, dtype=complex).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class State:
    """A point of V = C^{2n}, or a tangent vector at one."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x, y = _as_cvec(self.x), _as_cvec(self.y)
        if x.shape != y.shape:
            raise DomainError(f"x and y differ in length: {x.shape} vs {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("state has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "State":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_vector(cls, z) -> "State":
        z = np.asarray(z, dtype=complex).reshape(-1)
        if z.shape[0] % 2:
            raise DomainError("complex vector length must be even")
        h = z.shape[0] // 2
        return cls(z[:h], z[h:])

    @classmethod
    def from_real(cls, r) -> "State":
        r = np.asarray(r, dtype=float).reshape(-1)
        if r.shape[0] % 4:
            raise DomainError("real vector length must be a multiple of 4")
        h = r.shape[0] // 2
        return cls.from_vector(r[:h] + 1j * r[h:])

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, scale: float = 1.0) -> "State":
        z = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
        return cls.from_vector(scale * z / np.sqrt(2))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def real(self) -> np.ndarray:
        z = self.vector()
        return np.concatenate([z.real, z.imag])

    def norm(self) -> float:
        return float(np.sqrt(real_inner(self, self)))

    def __add__(self, other: "State") -> "State":
        _check_same(self, other)
        return State(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "State") -> "State":
        _check_same(self, other)
        return State(self.x - other.x, self.y - other.y)

    def __neg__(self) -> "State":
        return State(-self.x, -self.y)

    def __mul__(self, s) -> "State":
        if not np.isscalar(s):
            return NotImplemented
        return State(s * self.x, s * self.y)

    __rmul__ = __mul__

    def allclose(self, other: "State", atol: float = TOL) -> bool:
        _check_same(self, other)
        return bool(np.allclose(self.vector(), other.vector(), rtol=0, atol=atol))

    def __repr__(self) -> str:
        return f"State(x={self.x!r}, y={self.y!r})"


#: Tangent vectors share the representation of points.
Tangent = State


def _check_same(u: State, v: State) -> None:
    if u.n != v.n:
        raise DomainError(f"dimension mismatch: {u.n} vs {v.n}")


@dataclass(frozen=True, eq=False)
class ComplexStructureLabel:
    """Unit vector (a, b, c) naming the complex structure a*i + b*j + c*k."""

    direction: np.ndarray

    def __post_init__(self):
        d = np.array(self.direction, dtype=float).reshape(-1)
        if d.shape != (3,):
            raise DomainError("a complex-structure label has three components")
        if abs(d @ d - 1.0) > TOL:
            raise DomainError(f"label {d} is not a unit vector")
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)


I_LABEL = ComplexStructureLabel((1.0, 0.0, 0.0))
J_LABEL = ComplexStructureLabel((0.0, 1.0, 0.0))
K_LABEL = ComplexStructureLabel((0.0, 0.0, 1.0))


def _label(label) -> np.ndarray:
    if isinstance(label, ComplexStructureLabel):
        return label.direction
    return ComplexStructureLabel(label).direction


def apply_structure(label, v: Tangent) -> Tangent:
    """Apply (a i + b j + c k) to ``v``."""
    a, b, c = _label(label)
    x, y = v.x, v.y
    jx, jy = -np.conj(y), np.conj(x)
    return State(
        a * 1j * x + b * jx + c * 1j * jx,
        a * 1j * y + b * jy + c * 1j * jy,
    )


def real_inner(u: Tangent, v: Tangent) -> float:
    _check_same(u, v)
    return float(np.real(np.vdot(v.x, u.x)) + np.real(np.vdot(v.y, u.y)))


def structure_matrix(label, n: int) -> np.ndarray:
    """Real 4n x 4n matrix of a*i + b*j + c*k in ``concat(Re z, Im z)`` coordinates."""
    a, b, c = _label(label)
    m = 2 * n
    eye = np.eye(m)
    zero = np.zeros((m, m))
    i_mat = np.block([[zero, -eye], [eye, zero]])
    t = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    j_mat = np.block([[t, zero], [zero, -t]])
    return a * i_mat + b * j_mat + c * (i_mat @ j_mat)


@dataclass(frozen=True, eq=False)
class Frame:
    """An SO(3) rotation of the reference frame {i, j, k}.

    Row ``l`` of ``R`` is the label of the l-th rotated complex structure, and
    moment triples transform as ``mu' = R mu``.
    """

    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        if R.shape != (3, 3):
            raise DomainError("a frame is a 3 x 3 matrix")
        if np.max(np.abs(R.T @ R - np.eye(3))) > TOL or abs(np.linalg.det(R) - 1.0) > TOL:
            raise DomainError("frame matrix is not in SO(3)")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls) -> "Frame":
        return cls(np.eye(3))

    @classmethod
    def rotation(cls, axis: int, angle: float) -> "Frame":
        """Rotation by ``angle`` about coordinate axis 1, 2 or 3."""
        if axis not in (1, 2, 3):
            raise DomainError("axis must be 1, 2 or 3")
        p, q = [(1, 2), (2, 0), (0, 1)][axis - 1]
        R = np.eye(3)
        c, s = np.cos(angle), np.sin(angle)
        R[p, p], R[p, q], R[q, p], R[q, q] = c, -s, s, c
        return cls(R)

    @classmethod
    def from_quaternion(cls, q) -> "Frame":
        w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
        R = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        # re-orthonormalize away the last ulp so the SO(3) check is exact
        u, _, vt = np.linalg.svd(R)
        return cls(u @ vt)

    @classmethod
    def haar(cls, rng: np.random.Generator) -> "Frame":
        return cls.from_quaternion(rng.standard_normal(4))

    def label(self, l: int) -> ComplexStructureLabel:
        """Complex structure of the l-th rotated component (l = 1, 2, 3)."""
        return ComplexStructureLabel(self.R[l - 1])

    def key(self) -> bytes:
        return self.R.tobytes()


def rotate_moment(frame: Frame, m):
    """Rotate the R^3 index of a moment triple.

    ``m`` is either a :class:`~hklab.models.MomentValue` or an array whose
    leading axis has length 3.
    """
    R = frame.R if isinstance(frame, Frame) else Frame(frame).R
    if hasattr(m, "triple"):
        return type(m).from_triple(np.einsum("lm,m...->l...", R, m.triple()))
    arr = np.asarray(m, dtype=float)
    if arr.shape[:1] != (3,):
        raise DomainError("moment triple must have leading dimension 3")
    return np.einsum("lm,m...->l...", R, arr)
