"""Subtorus fixed-point data and the general-frame test for torus actions.

For a torus acting on H^n with weights a_k, every connected stabilizer is the
subtorus annihilating the span of some subset of weights.  Its fixed locus
Z_j is the coordinate subspace of weights lying in that span, and on Z_j the
pairing of the moment map with the stabilizer's Lie algebra is constant.  A
frame is general when each nonzero such constant keeps a nonzero complex
part after rotation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
import sympy

from .core import DomainError, Frame, State
from .models import ActionModel, eval_moment, maximal_torus, torus_weights

FRAME_TOL = 1e-12


class FrameSamplingError(RuntimeError):
    """No general frame found within the attempt budget."""


@dataclass(frozen=True, eq=False)
class SubtorusDatum:
    generators: np.ndarray  # integer rows spanning Lie(T_j)
    fixed_coordinates: tuple  # indices k with (x_k, y_k) in Z_j
    paired_constants: np.ndarray  # one R^3 row per generator
    rho: float
    gamma_index: int
    gamma: np.ndarray
    gamma_constant: np.ndarray

    def as_dict(self) -> dict:
        return {
            "generators": self.generators.tolist(),
            "fixed_coordinates": list(self.fixed_coordinates),
            "paired_constants": self.paired_constants.tolist(),
            "rho": self.rho,
            "gamma": self.gamma.tolist(),
            "gamma_constant": self.gamma_constant.tolist(),
        }


def _torus(model: ActionModel) -> ActionModel:
    return model if model.lie.is_abelian else maximal_torus(model)


def _integer_kernel(W: np.ndarray) -> np.ndarray:
    """Primitive integer vectors spanning {xi : W xi = 0} (rows of the result)."""
    r = W.shape[1]
    if W.shape[0] == 0:
        return np.eye(r, dtype=int)
    basis = sympy.Matrix(W.tolist()).nullspace()
    out = []
    for v in basis:
        den = sympy.ilcm(1, *[sympy.fraction(e)[1] for e in v])
        iv = [int(e * den) for e in v]  # exact: den clears every denominator
        g = int(np.gcd.reduce(np.abs(iv)))
        out.append([e // g for e in iv])
    return np.array(out, dtype=int).reshape(len(out), r)


def _rank(W: np.ndarray) -> int:
    return 0 if W.size == 0 else int(sympy.Matrix(W.tolist()).rank())


def _flats(weights: np.ndarray):
    """Distinct spans of weight subsets: (fixed coordinate set, weight rows spanning it)."""
    r, n = weights.shape
    seen = {}
    for size in range(n + 1):
        for S in itertools.combinations(range(n), size):
            WS = weights[:, list(S)].T
            rank = _rank(WS)
            if rank == r:
                continue  # trivial stabilizer
            closure = tuple(
                k for k in range(n) if _rank(np.vstack([WS, weights[:, k][None, :]])) == rank
            )
            if closure not in seen:
                seen[closure] = weights[:, list(closure)].T
    return sorted(seen.items(), key=lambda item: (len(item[0]), item[0]))


def _paired(model: ActionModel, gens: np.ndarray) -> np.ndarray:
    """R^3 pairing <mu(0), gamma> per generator, in the reference frame."""
    mu0 = eval_moment(model, None, State.zeros(model.n)).triple()
    return gens @ model.lie.inner @ mu0.T


def enumerate_subtorus_data(model: ActionModel) -> list[SubtorusDatum]:
    """All connected nontrivial stabilizers of the (maximal) torus, with their constants."""
    tmodel = _torus(model)
    cache = tmodel._cache.get("subtorus_data")
    if cache is not None:
        return cache
    weights = torus_weights(tmodel)
    G = tmodel.lie.inner
    data = []
    for closure, WS in _flats(weights):
        gens = _integer_kernel(WS)
        pc = _paired(tmodel, gens.astype(float))
        # norm of gamma -> <mu, gamma> on a G-orthonormal basis of Lie(T_j)
        gram = gens @ G @ gens.T
        w, U = np.linalg.eigh(gram)
        ortho = U @ np.diag(w ** -0.5) @ U.T
        rho = float(np.linalg.norm(ortho @ pc, 2)) if pc.size else 0.0
        norms = np.linalg.norm(pc, axis=1)
        idx = int(np.argmax(norms))  # first maximal entry: lexicographic tie-break
        sign = 1
        nz = np.flatnonzero(np.abs(pc[idx]) > FRAME_TOL * max(1.0, norms[idx]))
        if nz.size and pc[idx, nz[0]] < 0:
            sign = -1
        data.append(
            SubtorusDatum(
                generators=gens,
                fixed_coordinates=closure,
                paired_constants=pc,
                rho=rho,
                gamma_index=idx,
                gamma=sign * gens[idx],
                gamma_constant=sign * pc[idx],
            )
        )
    tmodel._cache["subtorus_data"] = data
    return data


def constancy_defect(model: ActionModel, datum: SubtorusDatum, rng: np.random.Generator, samples: int = 10) -> float:
    """Largest variation of <mu(z), gamma> over random z in Z_j and gamma in Lie(T_j)."""
    tmodel = _torus(model)
    n = tmodel.n
    worst = 0.0
    mask = np.zeros(n, dtype=bool)
    mask[list(datum.fixed_coordinates)] = True
    for _ in range(samples):
        z = State.random(n, rng)
        z = State(np.where(mask, z.x, 0), np.where(mask, z.y, 0))
        gamma = rng.standard_normal(len(datum.generators)) @ datum.generators
        pair = eval_moment(tmodel, None, z).triple() @ tmodel.lie.inner @ gamma
        ref = datum.paired_constants.T @ np.linalg.lstsq(
            datum.generators.T.astype(float), gamma, rcond=None
        )[0]
        worst = max(worst, float(np.max(np.abs(pair - ref))) / (1 + np.linalg.norm(gamma)))
    return worst


@dataclass(frozen=True)
class FrameVerdict:
    general: bool
    witness: Optional[int]
    constraints: int
    margins: tuple  # rotated complex-part magnitude per datum with rho > 0

    def as_dict(self) -> dict:
        return {
            "verdict": "general" if self.general else "not-general",
            "witness": self.witness,
            "constraints": self.constraints,
            "margins": list(self.margins),
        }


def check_general_frame(model: ActionModel, frame, tol: float = FRAME_TOL) -> FrameVerdict:
    """Every nonzero subtorus constant must keep a nonzero complex part under ``frame``."""
    R = frame.R if isinstance(frame, Frame) else Frame(frame).R
    data = enumerate_subtorus_data(model)
    margins = []
    witness = None
    count = 0
    for j, d in enumerate(data):
        if d.rho <= tol:
            continue
        count += 1
        rotated = R @ d.gamma_constant
        m = float(np.hypot(rotated[1], rotated[2]))
        margins.append(m)
        if witness is None and not (m > tol * np.linalg.norm(d.gamma_constant) and m > 1e-14):
            witness = j
    return FrameVerdict(witness is None, witness, count, tuple(margins))


def haar_frames(rng: np.random.Generator) -> Iterator[Frame]:
    while True:
        yield Frame.haar(rng)


def sample_general_frame(
    model: ActionModel,
    seed=None,
    max_attempts: int = 1000,
    proposals: Optional[Iterable[Frame]] = None,
    return_attempts: bool = False,
):
    """Rejection-sample Haar frames until one is general.

    ``proposals`` overrides the Haar stream (used to inject adversarial frames).
    """
    if max_attempts < 1:
        raise DomainError("max_attempts must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stream = iter(proposals) if proposals is not None else haar_frames(rng)
    for attempt in range(1, max_attempts + 1):
        try:
            frame = next(stream)
        except StopIteration:
            break
        if check_general_frame(model, frame).general:
            return (frame, attempt) if return_attempts else frame
    raise FrameSamplingError(f"no general frame found in {max_attempts} attempts")
