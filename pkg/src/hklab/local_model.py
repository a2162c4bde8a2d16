"""Blow-up of a cone cut out by homogeneous quadrics, checked chart by chart.

Blowing up C^n at the origin, chart p has coordinates y with
x = y_p * y_hat, where y_hat is y with its p-th entry replaced by 1.  Since
each f_i is homogeneous quadratic, f_i(x) = y_p^2 f_i(y_hat), so the proper
transform in chart p is cut out by f~_i(y) = f_i(y_hat), which does not
involve the fiber coordinate y_p.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DomainError

SYMMETRY_TOL = 1e-12
EXACT_TOL = 1e-12
COCYCLE_TOL = 1e-10
OVERLAP_TOL = 1e-6


class RootFindingError(RuntimeError):
    """Not enough points on the exceptional locus could be sampled."""


@dataclass(frozen=True, eq=False)
class QuadricModel:
    """Quadrics f_i(x) = x^T A_i x on C^n."""

    n: int
    A: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("ambient dimension must be positive")
        mats = tuple(np.array(a, dtype=complex).reshape(self.n, self.n) for a in self.A)
        for a in mats:
            if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
                raise DomainError("quadric matrices must be symmetric")
        object.__setattr__(self, "A", mats)

    @property
    def r(self) -> int:
        return len(self.A)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return np.array([x @ a @ x for a in self.A], dtype=complex)

    def scale(self) -> float:
        return max([float(np.max(np.abs(a))) for a in self.A], default=1.0)

    @classmethod
    def from_descriptor(cls, desc: dict) -> "QuadricModel":
        if "preset" in desc:
            return shipped_quadric(desc["preset"])
        mats = []
        for a in desc.get("matrices", []):
            arr = np.array(a, dtype=float)
            # complex entries as [re, im] pairs
            mats.append(arr[..., 0] + 1j * arr[..., 1] if arr.ndim == 3 else arr)
        return cls(int(desc["n"]), tuple(mats), desc.get("name", ""))


def shipped_quadric(name: str) -> QuadricModel:
    """The three reference cones: ``xy`` (x1 x2 on C^2), ``conic`` (x1 x3 - x2^2 on C^3), ``generic4``."""
    if name == "xy":
        return QuadricModel(2, (np.array([[0, 0.5], [0.5, 0]]),), "xy")
    if name == "conic":
        return QuadricModel(3, (np.array([[0, 0, 0.5], [0, -1, 0], [0.5, 0, 0]]),), "conic")
    if name == "generic4":
        re = np.array([[1, 2, 0, 1], [2, -1, 1, 0], [0, 1, 3, 2], [1, 0, 2, -2]], dtype=float)
        im = np.array([[0, 1, -1, 0], [1, 2, 0, 1], [-1, 0, 1, 0], [0, 1, 0, -1]], dtype=float)
        return QuadricModel(4, (re + 1j * im,), "generic4")
    raise DomainError(f"unknown quadric preset {name!r}")


SHIPPED_QUADRICS = ("xy", "conic", "generic4")


@dataclass(frozen=True)
class BlowupChart:
    """Chart p (1-based) with equations as {exponent tuple: coefficient} dicts."""

    p: int
    n: int
    equations: tuple

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=complex)
        out = []
        for poly in self.equations:
            out.append(sum(c * np.prod(y ** np.array(e)) for e, c in poly.items()) if poly else 0j)
        return np.array(out, dtype=complex)

    def fiber_coefficients(self) -> list:
        """Coefficients of monomials containing the fiber coordinate (all zero)."""
        k = self.p - 1
        return [c for poly in self.equations for e, c in poly.items() if e[k] > 0]


def blowup_chart(q: QuadricModel, p: int) -> BlowupChart:
    if not 1 <= p <= q.n:
        raise DomainError(f"chart index must lie in 1..{q.n}")
    k = p - 1
    eqs = []
    for a in q.A:
        poly: dict = {}
        for i in range(q.n):
            for j in range(q.n):
                if a[i, j] == 0:
                    continue
                e = [0] * q.n
                # y_hat_k = 1 carries no variable
                if i != k:
                    e[i] += 1
                if j != k:
                    e[j] += 1
                key = tuple(e)
                poly[key] = poly.get(key, 0j) + complex(a[i, j])
        eqs.append({e: c for e, c in poly.items() if c != 0})
    return BlowupChart(p, q.n, tuple(eqs))


def _y_hat(y: np.ndarray, k: int) -> np.ndarray:
    out = np.array(y, dtype=complex)
    out[k] = 1.0
    return out


def sample_exceptional(q: QuadricModel, p: int, N: int, rng: np.random.Generator, max_tries: Optional[int] = None) -> np.ndarray:
    """N points y_hat of E in chart p (rows, with entry p equal to 1).

    A random complex line in the chart slice is intersected with the first
    quadric by 1-d root finding; further quadrics are then met by Newton steps.
    """
    n, k = q.n, p - 1
    if q.r == 0:
        pts = rng.standard_normal((N, n)) + 1j * rng.standard_normal((N, n))
        pts[:, k] = 1.0
        return pts
    max_tries = max_tries or 20 * N
    pts = []
    tries = 0
    scale = q.scale()
    while len(pts) < N and tries < max_tries:
        tries += 1
        a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        a[k], b[k] = 1.0, 0.0
        A = q.A[0]
        # (a + t b)^T A (a + t b) = (b A b) t^2 + 2 (a A b) t + a A a
        coeffs = [b @ A @ b, 2 * (a @ A @ b), a @ A @ a]
        roots = np.roots(coeffs) if abs(coeffs[0]) + abs(coeffs[1]) > 1e-14 * scale else []
        for t in roots:
            y = a + t * b
            if not _newton(q, y, k):
                continue
            if np.max(np.abs(q.evaluate(y))) <= EXACT_TOL * scale * max(1.0, float(np.linalg.norm(y))) ** 2:
                pts.append(y)
                break
    if len(pts) < N:
        raise RootFindingError(f"sampled only {len(pts)} of {N} points on E in chart {p}")
    return np.array(pts)


def _newton(q: QuadricModel, y: np.ndarray, k: int, iters: int = 20) -> bool:
    free = [i for i in range(q.n) if i != k]
    for _ in range(iters):
        F = q.evaluate(y)
        if np.max(np.abs(F)) <= 1e-15 * q.scale() * max(1.0, float(np.linalg.norm(y))) ** 2:
            return True
        J = np.array([2 * (a @ y) for a in q.A])[:, free]
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        y[free] += step
        if not np.all(np.isfinite(y)):
            return False
    return True


@dataclass
class ConeReport:
    model: str
    fiber_independent: bool
    fiber_margin: float
    product_margin: float
    blowdown_margin: float
    cocycle_margin: Optional[float]  # None when no overlap points exist
    cocycle_pairs: int
    line_bundle_degree: int
    measured_degree: Optional[int]
    equation_cocycle_margin: Optional[float]
    passed: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "fiber_independent": self.fiber_independent,
            "fiber_margin": self.fiber_margin,
            "product_margin": self.product_margin,
            "blowdown_margin": self.blowdown_margin,
            "cocycle_margin": self.cocycle_margin,
            "cocycle_pairs": self.cocycle_pairs,
            "line_bundle_degree": self.line_bundle_degree,
            "measured_degree": self.measured_degree,
            "equation_cocycle_margin": self.equation_cocycle_margin,
            "passed": dict(self.passed),
        }


def _transition_residual(s, t, ratio, degree) -> float:
    pred = s * ratio ** degree
    return float(abs(t - pred) / max(abs(t), abs(pred), 1e-300))


def verify_cone_structure(q: QuadricModel, N: int = 50, seed=0, line_bundle_degree: int = 2) -> ConeReport:
    """Check fiber independence, product structure, blow-down and the chart transition.

    The transition check compares the fiber coordinate t in chart q with the
    fiber coordinate s in chart p via t = s * (x_q / x_p)^line_bundle_degree.
    The exponent realized by the charts is reported as ``measured_degree``.
    """
    if N < 1:
        raise DomainError("need at least one sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = q.scale()
    charts = [blowup_chart(q, p) for p in range(1, q.n + 1)]
    fiber_coeffs = [abs(c) for ch in charts for c in ch.fiber_coefficients()]
    fiber_margin = max(fiber_coeffs, default=0.0)

    product = blowdown = 0.0
    cocycle, eq_cocycle = [], []
    degrees = []
    for ch in charts:
        k = ch.p - 1
        pts = sample_exceptional(q, ch.p, N, rng)
        for y in pts:
            ynorm2 = max(1.0, float(np.linalg.norm(y))) ** 2
            s = complex(rng.standard_normal(), rng.standard_normal())
            moved = y.copy()
            moved[k] = s
            # f~ at the translated point, relative to the polynomial size
            product = max(product, float(np.max(np.abs(ch.evaluate(moved)), initial=0.0)) / (scale * ynorm2))
            x = s * _y_hat(y, k)
            blowdown = max(blowdown, float(np.max(np.abs(q.evaluate(x)), initial=0.0)) / (scale * abs(s) ** 2 * ynorm2))
            for other in charts:
                j = other.p - 1
                if j == k or abs(y[j]) <= OVERLAP_TOL * np.linalg.norm(y):
                    continue
                ratio = y[j]  # x_j / x_k
                t = x[j]  # fiber coordinate of the same point in chart j
                cocycle.append(_transition_residual(s, t, ratio, line_bundle_degree))
                degrees.append(min(range(-4, 5), key=lambda d: _transition_residual(s, t, ratio, d)))
                # the defining equations do transform with the square of the ratio
                y_other = x / x[j]
                lhs = other.evaluate(y_other)
                rhs = ch.evaluate(y) / ratio ** 2
                eq_cocycle.append(float(np.max(np.abs(lhs - rhs), initial=0.0)) / (scale * ynorm2))
    measured = None
    if degrees:
        vals, counts = np.unique(degrees, return_counts=True)
        measured = int(vals[np.argmax(counts)])
    cocycle_margin = max(cocycle) if cocycle else None
    passed = {
        "fiber_independence": fiber_margin == 0.0,
        "product_structure": product <= EXACT_TOL,
        "blowdown": blowdown <= EXACT_TOL,
        "cocycle": cocycle_margin is None or cocycle_margin <= COCYCLE_TOL,
    }
    return ConeReport(
        model=q.name,
        fiber_independent=fiber_margin == 0.0,
        fiber_margin=fiber_margin,
        product_margin=product,
        blowdown_margin=blowdown,
        cocycle_margin=cocycle_margin,
        cocycle_pairs=len(cocycle),
        line_bundle_degree=line_bundle_degree,
        measured_degree=measured,
        equation_cocycle_margin=max(eq_cocycle) if eq_cocycle else None,
        passed=passed,
    )
