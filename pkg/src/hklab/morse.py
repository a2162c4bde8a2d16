"""Truncated Poincaré series and equivariantly perfect Morse assembly.

For an equivariantly perfect stratification of a contractible ambient space
the equivariant series of the space, P_t(BK), splits as the series of the
open stratum plus t^lambda times the equivariant series of each higher
stratum.  Hence the open stratum (and so the quotient) has series
P_t(BK) - sum_beta t^lambda_beta P_t^K(C_beta).

This base-minus-strata identity is the standard consequence of equivariant
perfection; it is not derived here, only applied and checked for sign.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import State
from .critical import critical_point_at, find_critical_points, hessian_f23, morse_index
from .models import build_model


class PerfectionViolation(ArithmeticError):
    """Assembly produced a negative Betti number."""

    def __init__(self, degree: int, value: int):
        super().__init__(f"negative coefficient {value} in degree {degree}: perfection violated")
        self.degree = degree
        self.value = value


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PoincareSeries:
    """Integer series c_0 + c_1 t + ... + c_D t^D, exact up to the cap D."""

    coefficients: tuple
    cap: int

    def __post_init__(self):
        if self.cap < 0:
            raise ValueError("degree cap must be nonnegative")
        c = [int(v) for v in self.coefficients][: self.cap + 1]
        c += [0] * (self.cap + 1 - len(c))
        object.__setattr__(self, "coefficients", tuple(c))

    @classmethod
    def zero(cls, cap: int) -> "PoincareSeries":
        return cls((), cap)

    @classmethod
    def one(cls, cap: int) -> "PoincareSeries":
        return cls((1,), cap)

    @classmethod
    def monomial(cls, degree: int, cap: int, coeff: int = 1) -> "PoincareSeries":
        return cls([0] * degree + [coeff], cap)

    @classmethod
    def geometric(cls, step: int, cap: int) -> "PoincareSeries":
        """1 / (1 - t^step)."""
        if step < 1:
            raise ValueError("step must be positive")
        return cls([1 if d % step == 0 else 0 for d in range(cap + 1)], cap)

    def _cap(self, other: "PoincareSeries") -> int:
        return min(self.cap, other.cap)

    def __add__(self, other: "PoincareSeries") -> "PoincareSeries":
        D = self._cap(other)
        return PoincareSeries([a + b for a, b in zip(self.coefficients[: D + 1], other.coefficients)], D)

    def __sub__(self, other: "PoincareSeries") -> "PoincareSeries":
        D = self._cap(other)
        return PoincareSeries([a - b for a, b in zip(self.coefficients[: D + 1], other.coefficients)], D)

    def __neg__(self) -> "PoincareSeries":
        return PoincareSeries([-a for a in self.coefficients], self.cap)

    def __mul__(self, other) -> "PoincareSeries":
        if isinstance(other, int):
            return PoincareSeries([other * a for a in self.coefficients], self.cap)
        D = self._cap(other)
        out = [0] * (D + 1)
        for i, a in enumerate(self.coefficients[: D + 1]):
            if a:
                for j, b in enumerate(other.coefficients[: D + 1 - i]):
                    out[i + j] += a * b
        return PoincareSeries(out, D)

    __rmul__ = __mul__

    def shift(self, degree: int) -> "PoincareSeries":
        """Multiply by t^degree."""
        return PoincareSeries([0] * degree + list(self.coefficients), self.cap)

    def truncate(self, cap: int) -> "PoincareSeries":
        return PoincareSeries(self.coefficients, min(cap, self.cap))

    def is_nonnegative(self) -> bool:
        return all(c >= 0 for c in self.coefficients)

    def even_coefficients(self, trim: bool = True) -> list:
        """Coefficients of t^0, t^2, t^4, ...; trailing zeros dropped when ``trim``."""
        ev = list(self.coefficients[::2])
        while trim and len(ev) > 1 and ev[-1] == 0:
            ev.pop()
        return ev

    def degree(self) -> int:
        nz = [d for d, c in enumerate(self.coefficients) if c]
        return nz[-1] if nz else -1

    def is_palindromic(self) -> bool:
        c = self.coefficients[: self.degree() + 1]
        return c == c[::-1]

    def __str__(self) -> str:
        terms = []
        for d, c in enumerate(self.coefficients):
            if not c:
                continue
            mono = "" if d == 0 else ("t" if d == 1 else f"t^{d}")
            if d == 0:
                s = str(abs(c))
            elif abs(c) == 1:
                s = mono
            else:
                s = f"{abs(c)}{mono}"
            terms.append(("-" if c < 0 else "+", s))
        if not terms:
            return "0"
        out = ("-" if terms[0][0] == "-" else "") + terms[0][1]
        for sign, s in terms[1:]:
            out += f" {sign} {s}"
        return out


def _group(desc):
    if isinstance(desc, str):
        d = desc.strip().lower()
        if d in ("circle", "u(1)", "s1"):
            return "torus", 1
        if d.startswith("u(") and d.endswith(")"):
            return "u", int(d[2:-1])
        if d.startswith("t^"):
            return "torus", int(d[2:])
        raise ValueError(f"unsupported group {desc!r}")
    kind = desc.get("kind")
    if kind == "circle":
        return "torus", 1
    if kind == "torus":
        return "torus", int(desc["rank"])
    if kind in ("u", "U"):
        return "u", int(desc["n"])
    raise ValueError(f"unsupported group {desc!r}")


def classifying_series(group, cap: int) -> PoincareSeries:
    """P_t(BK) for the circle, a rank-r torus, or U(n), truncated at ``cap``."""
    kind, k = _group(group)
    out = PoincareSeries.one(cap)
    if k < 0:
        raise ValueError("rank must be nonnegative")
    steps = [2] * k if kind == "torus" else [2 * i for i in range(1, k + 1)]
    for s in steps:
        out = out * PoincareSeries.geometric(s, cap)
    return out


@dataclass(frozen=True)
class StratumDatum:
    index: int
    series: PoincareSeries
    label: str = ""

    def __post_init__(self):
        if self.index < 0 or self.index % 2:
            raise ValueError(f"stratum index must be even and nonnegative, got {self.index}")


def induced_stratum_series(stab_classifying: PoincareSeries, fiber: PoincareSeries) -> PoincareSeries:
    """Equivariant series of K x_Stab F from P_t(B Stab) and P_t(F) (equivariantly formal fiber)."""
    return stab_classifying * fiber


def assemble_quotient_series(base: PoincareSeries, strata: Iterable[StratumDatum], cap: Optional[int] = None) -> PoincareSeries:
    """base - sum t^lambda P_t^K(C_beta), truncated; negative coefficients raise."""
    cap = base.cap if cap is None else min(cap, base.cap)
    out = base.truncate(cap)
    for s in strata:
        if s.index > cap:
            raise ValueError(f"stratum index {s.index} exceeds the degree cap {cap}")
        out = out - s.series.shift(s.index)
    for d, c in enumerate(out.coefficients):
        if c < 0:
            raise PerfectionViolation(d, c)
    return out


def circle_closed_form(n: int, cap: int) -> PoincareSeries:
    """(1 - t^{2n}) / (1 - t^2)."""
    return (PoincareSeries.one(cap) - PoincareSeries.monomial(2 * n, cap)) * PoincareSeries.geometric(2, cap)


def circle_example_pipeline(n: int, c: complex = 1.0, cap: Optional[int] = None, seeds: int = 4, rng_seed: int = 0) -> PoincareSeries:
    """Quotient series for the circle acting on T*C^n with weights 1, from first principles.

    Locates critical points of f23, confirms the origin is the only
    nonminimal one with index 2n, assembles, and compares with the closed form.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if c == 0:
        raise ValueError("the example needs c != 0")
    cap = 2 * n + 2 if cap is None else cap
    model = build_model({"kind": "circle", "n": n, "c": [complex(c).real, complex(c).imag]})
    rng = np.random.default_rng(rng_seed)
    starts = [State.zeros(n)] + [State.random(n, rng) for _ in range(seeds)]
    points = find_critical_points(model, None, starts)
    nonminimal = [p for p in points if p.f > 1e-8]
    if len(nonminimal) != 1 or nonminimal[0].z.norm() > 1e-8:
        raise PipelineError(f"expected the origin as the only nonminimal critical point, got {len(nonminimal)}")
    origin = nonminimal[0]
    if abs(origin.f - abs(c) ** 2) > 1e-10 * (1 + abs(c) ** 2):
        raise PipelineError(f"f at the origin is {origin.f}, expected |c|^2")
    idx = morse_index(hessian_f23(model, None, origin.z))
    if idx.index != 2 * n or idx.nullity != 0:
        raise PipelineError(f"index at the origin is {tuple(idx)}, expected ({2 * n}, 0)")
    base = classifying_series("circle", cap)
    # the origin is fixed by the circle, so its stratum contributes P_t(BS^1)
    stratum = StratumDatum(idx.index, classifying_series("circle", cap), label="origin")
    result = assemble_quotient_series(base, [stratum], cap)
    expected = circle_closed_form(n, cap)
    if result != expected:
        raise PipelineError(f"assembled {result} differs from closed form {expected}")
    return result


__all__ = [
    "PoincareSeries",
    "StratumDatum",
    "PerfectionViolation",
    "PipelineError",
    "classifying_series",
    "induced_stratum_series",
    "assemble_quotient_series",
    "circle_closed_form",
    "circle_example_pipeline",
    "critical_point_at",
]
