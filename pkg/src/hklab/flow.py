"""Gradient flows of ||mu_C||^2 on V and of ||mu_1||^2 on W = mu_C^{-1}(0).

All flows use the flat metric of C^{2n} and plain gradient descent
``z' = -grad f``.  Moment norms are taken with the invariant inner product.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import EPSILON, DomainError, Frame, State, Tangent, apply_structure
from .integrate import StepSizeUnderflow, StepStats, integrate
from .models import (
    ActionModel,
    TorusModel,
    _frame,
    eval_moment,
    infinitesimal_action,
    moment_jacobian,
    quadratic_moment,
)

OBJECTIVES = ("f23-on-V", "mu1sq-on-W")
STATUSES = ("converged-critical", "converged-zero-level", "diverged", "max-time")
CSV_COLUMNS = ("t", "f", "grad_norm", "rho", "lyap", "status")
RANK_RTOL = 1e-10


class ProjectionError(RuntimeError):
    """Gauss–Newton projection onto W did not converge."""


class StiffFailure(RuntimeError):
    """Integrator step size underflow; ``last_state`` holds the final state."""

    def __init__(self, message: str, last_state: State, t: float):
        super().__init__(message)
        self.last_state = last_state
        self.t = t


@dataclass(frozen=True)
class FlowOptions:
    rtol: float = 1e-9
    atol: float = 1e-12
    grad_tol: float = 1e-10
    max_time: float = 1e4
    rho_max: float = 1e8
    max_steps: int = 200_000
    zero_level: float = 1e-18
    #: relative membership tolerance for W: ||mu_C|| <= w_tol (1 + ||z||^2)
    w_tol: float = 1e-8

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ValueError(f"flow option {name} must be positive")

    def replace(self, **kw) -> "FlowOptions":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return FlowOptions(**d)


@dataclass(frozen=True, eq=False)
class FlowTrace:
    objective: str
    t: np.ndarray
    r: np.ndarray  # real coordinates of the states, one row per sample
    f: np.ndarray
    grad_norm: np.ndarray
    rho: np.ndarray
    lyap: np.ndarray
    status: str
    stop_reason: str
    stats: dict
    model: ActionModel = field(repr=False)
    frame: Frame = field(repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> State:
        return State.from_real(self.r[k])

    @property
    def states(self) -> list[State]:
        return [State.from_real(r) for r in self.r]

    @property
    def final(self) -> State:
        return self.state(-1)

    def rows(self):
        last = len(self.t) - 1
        for k in range(len(self.t)):
            yield (
                self.t[k],
                self.f[k],
                self.grad_norm[k],
                self.rho[k],
                self.lyap[k],
                self.status if k == last else "running",
            )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow(["%.17g" % v for v in row[:5]] + [row[5]])


# -- objectives --------------------------------------------------------------


def f23(model: ActionModel, frame, z: State) -> float:
    """||mu_C||^2 in the given frame."""
    mu = eval_moment(model, frame, z)
    G = model.lie.inner
    return float(mu.mu2 @ G @ mu.mu2 + mu.mu3 @ G @ mu.mu3)


def grad_f23(model: ActionModel, frame, z: State) -> Tangent:
    """Euclidean gradient of f23 by the chain rule through the moment differential."""
    d = model.dim
    mu = eval_moment(model, frame, z)
    J = moment_jacobian(model, frame, z).matrix
    G = model.lie.inner
    g = 2 * (J[d : 2 * d].T @ (G @ mu.mu2) + J[2 * d :].T @ (G @ mu.mu3))
    return State.from_real(g)


def grad_f23_formula(model: ActionModel, frame, z: State) -> Tangent:
    """The same gradient from infinitesimal actions: -2 eps (I'_2 (b2)_z + I'_3 (b3)_z)."""
    frame = _frame(frame)
    mu = eval_moment(model, frame, z)
    v2 = apply_structure(frame.label(2), infinitesimal_action(model, mu.mu2, z))
    v3 = apply_structure(frame.label(3), infinitesimal_action(model, mu.mu3, z))
    return (-2.0 * EPSILON) * (v2 + v3)


def _row_space(J: np.ndarray):
    """Orthonormal basis of the row space of J and its numerical rank."""
    if J.size == 0:
        return np.zeros((J.shape[1], 0)), 0
    _, s, vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((J.shape[1], 0)), 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return vt[:rank].T, rank


class _Objective:
    """f and its (projected) gradient in real coordinates, via the quadratic engine."""

    def __init__(self, model: ActionModel, frame: Frame, objective: str):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
        self.q = quadratic_moment(model, frame)
        self.on_W = objective == "mu1sq-on-W"
        self.ranks: list[int] = []

    def value(self, r) -> float:
        m = self.q.real_part(r)[0] if self.on_W else self.q.complex_part(r)[0]
        return float(m @ m)

    def value_grad(self, r):
        if not self.on_W:
            m, J = self.q.complex_part(r)
            return float(m @ m), 2 * (J.T @ m)
        m1, J1 = self.q.real_part(r)
        g = 2 * (J1.T @ m1)
        _, JC = self.q.complex_part(r)
        V, rank = _row_space(JC)
        self.ranks.append(rank)
        return float(m1 @ m1), g - V @ (V.T @ g)

    def rhs(self, r):
        return -self.value_grad(r)[1]


def _w_residual(q, r) -> float:
    return float(np.linalg.norm(q.complex_part(r)[0]))


def _project_real(q, r0: np.ndarray, tol: float, max_iter: int = 100):
    r = np.array(r0, dtype=float)
    m, J = q.complex_part(r)
    res = float(np.linalg.norm(m))
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ProjectionError(f"projection onto W did not converge (residual {res:.3e})")
        it += 1
        step = -np.linalg.pinv(J, rcond=RANK_RTOL) @ m
        lam = 1.0
        while True:
            r_try = r + lam * step
            m_try, J_try = q.complex_part(r_try)
            res_try = float(np.linalg.norm(m_try))
            if res_try < res:
                break
            lam *= 0.5
            if lam < 1e-12:
                raise ProjectionError(f"Gauss-Newton step failed to reduce residual {res:.3e}")
        r, m, J, res = r_try, m_try, J_try, res_try
    return r, it, res


def project_onto_W(model: ActionModel, frame, z0: State, tol: float = 1e-12, return_info: bool = False):
    """Gauss–Newton projection onto mu_C = 0 with damped pseudoinverse steps.

    With ``return_info`` the result is ``(state, info)`` where info reports the
    iteration count, final residual and distance moved.
    """
    model.check_dims(z0)
    q = quadratic_moment(model, _frame(frame))
    r0 = z0.real()
    r, it, res = _project_real(q, r0, tol)
    z = State.from_real(r) if it else z0
    if return_info:
        return z, {"iterations": it, "residual": res, "distance": float(np.linalg.norm(r - r0))}
    return z


def integrate_descent(
    model: ActionModel, frame, objective: str, z0: State, opts: Optional[FlowOptions] = None
) -> FlowTrace:
    """Descend ``objective`` from z0 with the adaptive 5(4) pair.

    Raises :class:`StiffFailure` on step-size underflow and
    :class:`~hklab.core.DomainError` when an on-W start is not on W.
    """
    opts = opts or FlowOptions()
    frame = _frame(frame)
    model.check_dims(z0)
    obj = _Objective(model, frame, objective)
    q = obj.q
    r0 = z0.real()
    rho0 = float(r0 @ r0)
    if obj.on_W:
        res = _w_residual(q, r0)
        if res > opts.w_tol * (1 + rho0):
            raise DomainError(f"start is not on W: ||mu_C|| = {res:.3e}")

    f0 = obj.value(r0)
    ts, rs, fs, gs, rhos = [], [], [], [], []
    max_drift = [0.0]

    def on_accept(t, r, dr):
        f = obj.value(r)
        g = float(np.linalg.norm(dr))
        rho = float(r @ r)
        ts.append(t)
        rs.append(r.copy())
        fs.append(f)
        gs.append(g)
        rhos.append(rho)
        if obj.on_W:
            max_drift[0] = max(max_drift[0], _w_residual(q, r) / (1 + rho))
        if rho >= opts.rho_max:
            return "diverged"
        if g <= opts.grad_tol:
            return "converged-zero-level" if f <= opts.zero_level else "converged-critical"
        return None

    def correct_onto_W(r):
        rho = float(r @ r)
        if _w_residual(q, r) > 10 * opts.w_tol * (1 + rho):
            return _project_real(q, r, 1e-3 * opts.w_tol * (1 + rho))[0]
        return None

    correct = correct_onto_W if obj.on_W else None

    stats = StepStats()
    try:
        status, t_end, _, stats = integrate(
            obj.rhs,
            r0,
            t_max=opts.max_time,
            rtol=opts.rtol,
            atol=opts.atol,
            max_steps=opts.max_steps,
            on_accept=on_accept,
            objective=obj.value,
            monotone_slack=1e-9 * (1 + f0),
            correct=correct,
            stats=stats,
        )
    except StepSizeUnderflow as exc:
        raise StiffFailure(str(exc), State.from_real(exc.y), exc.t) from exc
    stop_reason = status
    if status == "max-steps":
        status = "max-time"
    extra = stats.as_dict()
    if obj.on_W:
        extra["max_W_drift"] = max_drift[0]
        if obj.ranks:
            extra["rank_min"] = min(obj.ranks)
            extra["rank_max"] = max(obj.ranks)
            extra["singular_W"] = min(obj.ranks) < max(obj.ranks)
    f_arr = np.array(fs)
    rho_arr = np.array(rhos)
    return FlowTrace(
        objective=objective,
        t=np.array(ts),
        r=np.array(rs),
        f=f_arr,
        grad_norm=np.array(gs),
        rho=rho_arr,
        lyap=rho_arr + np.sqrt(f_arr),
        status=status,
        stop_reason=stop_reason,
        stats=extra,
        model=model,
        frame=frame,
    )


# -- semistability -----------------------------------------------------------

#: Power-law approach to mu_1^{-1}(0) is slow in flow time but cheap in
#: adaptive steps, so classification runs much longer and stops only on a
#: tight gradient threshold.
SEMISTABLE_OPTIONS = FlowOptions(grad_tol=1e-14, max_time=1e12)


@dataclass(frozen=True, eq=False)
class SemistabilityVerdict:
    verdict: str  # semistable / not-semistable / undecided
    mu1_norm: float
    threshold: float
    trace: FlowTrace = field(repr=False)


def classify_semistable(
    model: ActionModel, frame, z: State, opts: Optional[FlowOptions] = None, threshold: float = 1e-8
) -> SemistabilityVerdict:
    """Does the -||mu_1||^2 flow on W from z have a limit point in mu_1^{-1}(0)?"""
    opts = opts or SEMISTABLE_OPTIONS
    trace = integrate_descent(model, frame, "mu1sq-on-W", z, opts)
    mu1 = math.sqrt(trace.f[-1])
    thr = threshold * (1 + z.norm() ** 2)
    if mu1 <= thr:
        verdict = "semistable"
    elif trace.status in ("diverged", "converged-critical", "converged-zero-level"):
        verdict = "not-semistable"
    else:
        verdict = "undecided"
    return SemistabilityVerdict(verdict, mu1, thr, trace)


# -- U(1) Lyapunov certificate ----------------------------------------------


@dataclass(frozen=True)
class LyapunovReport:
    passed: bool
    samples: int
    identity_checked: int
    identity_max_rel_err: float
    inequality_min_margin: float
    bound_min_margin: float
    bound: float
    slack: float
    f_consistency: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def lyapunov_monitor_u1(trace: FlowTrace, c, identity_rtol: float = 1e-8, f_floor: float = 1e-12) -> LyapunovReport:
    """Check the boundedness certificate for rho + sqrt(f) along an f23 trace.

    Everything is recomputed from the closed forms mu_C = x.y - c,
    grad f = 2 mu_C (conj y, conj x) and grad rho = 2z, independently of the
    flow engine.
    """
    model = trace.model
    if not (
        isinstance(model, TorusModel)
        and model.weights.shape[0] == 1
        and np.all(model.weights == 1)
    ):
        raise DomainError("the U(1) certificate needs a circle model with all weights +1")
    if trace.objective != "f23-on-V" or not np.allclose(trace.frame.R, np.eye(3), atol=0, rtol=0):
        raise DomainError("the U(1) certificate applies to f23 flows in the reference frame")
    c = complex(c)
    n = model.n
    r = trace.r
    z = r[:, : 2 * n] + 1j * r[:, 2 * n :]
    x, y = z[:, :n], z[:, n:]
    s = np.sum(x * y, axis=1) - c
    f = np.abs(s) ** 2
    grad = 2 * s[:, None] * np.concatenate([np.conj(y), np.conj(x)], axis=1)
    rho = np.sum(np.abs(z) ** 2, axis=1)
    sqrt_f = np.sqrt(f)
    gnorm2 = np.sum(np.abs(grad) ** 2, axis=1)
    # (a) <grad sqrt f, grad f> = |grad f|^2 / (2 sqrt f) = 2 rho sqrt f
    mask = f > f_floor
    lhs = gnorm2[mask] / (2 * sqrt_f[mask])
    rhs = 2 * rho[mask] * sqrt_f[mask]
    rel = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
    ident = float(rel.max(initial=0.0))
    # (b) <grad rho, grad f> >= 8 f - 8 |c| sqrt f
    inner = np.real(np.sum(2 * z * np.conj(grad), axis=1))
    ineq = float(np.min(inner - (8 * f - 8 * abs(c) * sqrt_f)))
    # (c) global bound
    rho0, sf0 = rho[0], sqrt_f[0]
    bound = max(4 * abs(c) + sf0, rho0 + sf0)
    slack = 1e-6 * (1 + rho0 + sf0)
    bmargin = float(np.min(bound + slack - (rho + sqrt_f)))
    fcons = float(np.max(np.abs(f - trace.f) / (1 + f)))
    ok = ident <= identity_rtol and ineq >= -1e-9 * (1 + float(np.max(8 * f))) and bmargin >= 0
    return LyapunovReport(
        passed=bool(ok),
        samples=len(trace),
        identity_checked=int(mask.sum()),
        identity_max_rel_err=ident,
        inequality_min_margin=ineq,
        bound_min_margin=bmargin,
        bound=float(bound),
        slack=float(slack),
        f_consistency=fcons,
    )


# -- sampling and surveys ---------------------------------------------------


def sample_ball(n: int, rng: np.random.Generator, rho_max: float) -> State:
    """Random state with rho = ||z||^2 uniform in [0, rho_max] and uniform direction."""
    v = rng.standard_normal(4 * n)
    v /= np.linalg.norm(v)
    return State.from_real(v * math.sqrt(rng.uniform(0, rho_max)))


def sample_W(model: ActionModel, frame, rng: np.random.Generator, rho_max: float, tol: float = 1e-12) -> State:
    """Random start projected onto W."""
    return project_onto_W(model, frame, sample_ball(model.n, rng, rho_max), tol=tol)


@dataclass(frozen=True)
class SurveySummary:
    count: int
    status_counts: dict
    sup_rho: list
    diverged: list  # indices of counterexample candidates
    stiff: list
    final_f: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def survey_one(model, frame, objective, z0, opts):
    """One survey entry: (status, sup rho, final f), or a stiff-failure marker."""
    try:
        tr = integrate_descent(model, frame, objective, z0, opts)
    except StiffFailure as exc:
        return ("stiff-failure", float(exc.last_state.norm() ** 2), float("nan"))
    return (tr.status, float(tr.rho.max()), float(tr.f[-1]))


def summarize(results) -> SurveySummary:
    counts = {s: 0 for s in STATUSES}
    for st, _, _ in results:
        counts[st] = counts.get(st, 0) + 1
    return SurveySummary(
        count=len(results),
        status_counts=counts,
        sup_rho=[r[1] for r in results],
        diverged=[k for k, r in enumerate(results) if r[0] == "diverged"],
        stiff=[k for k, r in enumerate(results) if r[0] == "stiff-failure"],
        final_f=[r[2] for r in results],
    )


def flow_closedness_survey(
    model: ActionModel,
    frame,
    objective: str,
    sampler: Callable[[int], State],
    N: int,
    opts: Optional[FlowOptions] = None,
) -> SurveySummary:
    """Run N descents from ``sampler(k)`` and tabulate statuses and sup rho.

    This is evidence only: a bounded survey proves nothing about flow-closedness.
    """
    frame = _frame(frame)
    results = [survey_one(model, frame, objective, sampler(k), opts) for k in range(N)]
    return summarize(results)
