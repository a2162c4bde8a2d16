"""Lie algebra presentations by structure constants."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LieAlgebraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LieAlgebraPresentation:
    """Basis, structure constants and invariant inner product.

    ``constants[a, b, c]`` is the coefficient of ``e_a`` in ``[e_b, e_c]``.
    ``matrices`` optionally holds a faithful matrix realization of the basis
    (used for u(n) to convert matrix-valued closed forms to coefficients).
    """

    labels: tuple
    constants: np.ndarray
    inner: np.ndarray
    matrices: np.ndarray | None = None
    name: str = ""
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        C = np.array(self.constants, dtype=float)
        G = np.array(self.inner, dtype=float)
        d = len(self.labels)
        if C.shape != (d, d, d) or G.shape != (d, d):
            raise LieAlgebraError("structure constants / inner product have wrong shape")
        for a in (C, G):
            a.setflags(write=False)
        object.__setattr__(self, "constants", C)
        object.__setattr__(self, "inner", G)
        object.__setattr__(self, "labels", tuple(self.labels))
        if d:
            try:
                L = np.linalg.cholesky(G)
            except np.linalg.LinAlgError as exc:
                raise LieAlgebraError("inner product is not positive definite") from exc
        else:
            L = np.zeros((0, 0))
        object.__setattr__(self, "_chol", L)

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.constants)

    def bracket(self, a, b) -> np.ndarray:
        return np.einsum("abc,b,c->a", self.constants, np.asarray(a), np.asarray(b))

    def ad_matrix(self, beta) -> np.ndarray:
        """Matrix of a -> [beta, a]."""
        beta = np.asarray(beta)
        if beta.shape != (self.dim,):
            raise LieAlgebraError(f"expected a vector of length {self.dim}")
        return np.einsum("abc,b->ac", self.constants, beta)

    def pair(self, a, b):
        """Invariant inner product, extended bilinearly to complex vectors."""
        return np.asarray(a) @ self.inner @ np.asarray(b)

    def norm(self, a) -> float:
        a = np.asarray(a)
        return float(np.sqrt(abs(np.real(np.conj(a) @ self.inner @ a))))

    def whiten(self, a) -> np.ndarray:
        """Coordinates in which the inner product is the identity."""
        return self._chol.T @ np.asarray(a)

    def center_basis(self, tol: float = 1e-10) -> np.ndarray:
        """Columns span the center (common kernel of all ad matrices)."""
        d = self.dim
        if self.is_abelian:
            return np.eye(d)
        stacked = np.concatenate([self.ad_matrix(e) for e in np.eye(d)], axis=0)
        _, s, vt = np.linalg.svd(stacked)
        rank = int(np.sum(s > tol * max(s[0], 1.0)))
        return vt[rank:].T

    def is_central(self, v, tol: float = 1e-10) -> bool:
        v = np.asarray(v)
        if self.is_abelian:
            return True
        for part in (np.real(v), np.imag(v)):
            for e in np.eye(self.dim):
                if np.linalg.norm(self.bracket(part, e)) > tol * (1 + np.linalg.norm(part)):
                    return False
        return True

    def validate(self, tol: float = 1e-10) -> dict:
        """Antisymmetry, Jacobi, positivity and ad-invariance residuals."""
        C, G = self.constants, self.inner
        anti = float(np.max(np.abs(C + C.transpose(0, 2, 1)), initial=0.0))
        # [[e_b, e_c], e_d] + cyclic
        jac = (
            np.einsum("abe,ecd->abcd", C, C)
            + np.einsum("ace,edb->abcd", C, C)
            + np.einsum("ade,ebc->abcd", C, C)
        )
        jacobi = float(np.max(np.abs(jac), initial=0.0))
        sym = float(np.max(np.abs(G - G.T), initial=0.0))
        # <[a,b],c> + <b,[a,c]> = 0
        inv = np.einsum("xab,xc->abc", C, G) + np.einsum("bx,xac->abc", G, C)
        adinv = float(np.max(np.abs(inv), initial=0.0))
        report = {"antisymmetry": anti, "jacobi": jacobi, "inner_symmetry": sym, "ad_invariance": adinv}
        bad = {k: v for k, v in report.items() if v > tol}
        if bad:
            raise LieAlgebraError(f"invalid Lie algebra presentation: {bad}")
        return report


def abelian(rank: int, inner=None, name: str | None = None) -> LieAlgebraPresentation:
    G = np.eye(rank) if inner is None else np.asarray(inner, dtype=float)
    return LieAlgebraPresentation(
        labels=tuple(f"t{a}" for a in range(rank)),
        constants=np.zeros((rank, rank, rank)),
        inner=G,
        name=name or f"t^{rank}",
    )


def u_basis(n: int) -> tuple[list[str], np.ndarray]:
    """Orthonormal skew-Hermitian basis of u(n) for <a, b> = -Re tr(ab).

    Diagonal elements come first, so the first n span the maximal torus.
    """
    mats, labels = [], []
    for a in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[a, a] = 1j
        mats.append(E)
        labels.append(f"iE{a}{a}")
    s = 1 / np.sqrt(2)
    for a in range(n):
        for b in range(a + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[a, b], E[b, a] = s, -s
            mats.append(E)
            labels.append(f"R{a}{b}")
            E = np.zeros((n, n), dtype=complex)
            E[a, b] = E[b, a] = 1j * s
            mats.append(E)
            labels.append(f"I{a}{b}")
    return labels, np.array(mats)


def matrix_coefficients(X, basis: np.ndarray) -> np.ndarray:
    """Complex-linear coefficients of gl(n) matrices against an orthonormal u(n) basis.

    ``X`` may carry leading batch axes; the coefficient of ``e_a`` is
    ``-tr(X e_a)``, which is real for skew-Hermitian ``X``.
    """
    return -np.einsum("...ij,aji->...a", X, basis)


def unitary(n: int) -> LieAlgebraPresentation:
    labels, E = u_basis(n)
    d = len(labels)
    C = np.zeros((d, d, d))
    for b in range(d):
        for c in range(d):
            comm = E[b] @ E[c] - E[c] @ E[b]
            C[:, b, c] = np.real(matrix_coefficients(comm, E))
    return LieAlgebraPresentation(
        labels=tuple(labels), constants=C, inner=np.eye(d), matrices=E, name=f"u({n})"
    )


def direct_sum(*algebras: LieAlgebraPresentation) -> LieAlgebraPresentation:
    dims = [g.dim for g in algebras]
    d = sum(dims)
    C = np.zeros((d, d, d))
    G = np.zeros((d, d))
    labels = []
    off = 0
    for idx, g in enumerate(algebras):
        s = slice(off, off + g.dim)
        C[s, s, s] = g.constants
        G[s, s] = g.inner
        labels += [f"{idx}:{lab}" for lab in g.labels]
        off += g.dim
    return LieAlgebraPresentation(
        labels=tuple(labels), constants=C, inner=G, name=" + ".join(g.name for g in algebras)
    )


def from_descriptor(desc) -> LieAlgebraPresentation:
    """Build a presentation from a config fragment.

    Accepts ``{"kind": "torus", "rank": r}``, ``{"kind": "u", "n": n}`` or an
    explicit ``{"constants": ..., "inner": ...}`` (inner defaults to identity).
    """
    if isinstance(desc, LieAlgebraPresentation):
        return desc
    kind = desc.get("kind")
    if kind == "torus":
        return abelian(int(desc["rank"]), desc.get("inner"))
    if kind == "u":
        return unitary(int(desc["n"]))
    if "constants" in desc:
        C = np.asarray(desc["constants"], dtype=float)
        d = C.shape[0]
        G = np.eye(d) if desc.get("inner") is None else desc["inner"]
        labels = desc.get("labels") or [f"h{a}" for a in range(d)]
        lie = LieAlgebraPresentation(labels=tuple(labels), constants=C, inner=G, name="custom")
        lie.validate()
        return lie
    raise LieAlgebraError(f"unrecognized Lie algebra descriptor: {desc!r}")
