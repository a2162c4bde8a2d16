import numpy as np
import pytest

from conftest import random_state
from hklab.core import Frame, State
from hklab.critical import (
    LiftedHessianError,
    action_gram,
    anticommutator_check,
    assemble_lifted_hessian,
    cert_scale,
    check_kernel_containment,
    component_hessian_formula,
    critical_point_at,
    find_critical_points,
    hessian_f23,
    morse_index,
    resolved_betas,
    verify_critical_identities,
)
from hklab.flow import grad_f23, sample_ball
from hklab.models import build_model, eval_moment

CIRCLE1 = {"kind": "circle", "n": 1, "c": 1}
HOM_C1 = {"kind": "hom", "n": 2, "k": 1, "c": 1}


def seeds(n, count, seed, rho=4.0):
    rng = np.random.default_rng(seed)
    return [sample_ball(n, rng, rho) for _ in range(count)]


@pytest.fixture(scope="module")
def end_points():
    m = build_model({"kind": "end", "n": 2})
    return m, find_critical_points(m, None, seeds(4, 15, 0))


@pytest.fixture(scope="module")
def hom_points():
    m = build_model(HOM_C1)
    return m, find_critical_points(m, None, [State.zeros(2)] + seeds(2, 10, 1))


# -- locating -----------------------------------------------------------------------


def test_circle_origin_found():
    m = build_model(CIRCLE1)
    pts = find_critical_points(m, None, [State.zeros(1)])
    assert len(pts) == 1
    assert pts[0].z.norm() == 0 and pts[0].f == pytest.approx(1.0, abs=1e-15)
    assert pts[0].certified


def test_circle_generic_seed_reaches_minimum():
    m = build_model(CIRCLE1)
    pts = find_critical_points(m, None, [State([0.3 + 0.1j], [2 - 1j])])
    assert len(pts) == 1 and pts[0].f < 1e-16


def test_zero_of_moment_is_critical_with_zero_f():
    m = build_model({"kind": "end", "n": 2})
    z = State([1, 0, 0, 2], [0, 0, 0, 0])  # diagonal B1, B2 = 0: mu_C = 0
    cp = critical_point_at(m, None, z)
    assert cp.f == 0 and cp.certified


def test_dedup_merges_repeated_seeds():
    m = build_model(CIRCLE1)
    pts = find_critical_points(m, None, [State.zeros(1)] * 3)
    assert len(pts) == 1


# -- identities --------------------------------------------------------------------


def test_torus_bracket_identically_zero():
    m = build_model({"kind": "torus", "weights": [[1, 0, 1], [0, 1, 1]], "cC": [1, 0.5]})
    for cp in find_critical_points(m, None, seeds(3, 5, 2)):
        assert cp.residuals["bracket23"] == 0


def test_origin_actions_vanish():
    m = build_model(CIRCLE1)
    rep = verify_critical_identities(m, None, critical_point_at(m, None, State.zeros(1)))
    assert rep["passed"]
    assert rep["margins"]["beta2_z"] == 0 and rep["margins"]["beta3_z"] == 0


def test_end2_identities(end_points):
    m, pts = end_points
    assert pts
    for cp in pts:
        assert cp.certified
        rep = verify_critical_identities(m, None, cp)
        assert rep["passed"], rep
        assert max(rep["margins"].values()) <= 1e-7 * cert_scale(cp.z)


# -- Hessian ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
def test_origin_inertia(n):
    m = build_model({"kind": "circle", "n": n, "c": 1})
    h = hessian_f23(m, None, State.zeros(n))
    assert h.inertia == (2 * n, 0, 2 * n)
    assert np.allclose(np.abs(h.eigenvalues), 2.0, atol=1e-13)
    assert morse_index(h) == (2 * n, 0)


def test_hessian_matches_differenced_gradient(model, rng):
    F = Frame.haar(rng)
    z = random_state(model, rng)
    H = hessian_f23(model, F, z).H23
    assert np.linalg.norm(H - H.T) <= 1e-10 * np.linalg.norm(H)
    r = z.real()
    h = 1e-5 * (1 + z.norm())
    fd = np.empty_like(H)
    for k in range(r.size):
        e = np.zeros_like(r)
        e[k] = h
        fd[:, k] = (grad_f23(model, F, State.from_real(r + e)).real() - grad_f23(model, F, State.from_real(r - e)).real()) / (2 * h)
    assert np.linalg.norm(H - fd) <= 1e-5 * np.linalg.norm(H)


def test_component_hessians_match_closed_form(model, rng):
    F = Frame.haar(rng)
    z = random_state(model, rng)
    h = hessian_f23(model, F, z)
    mu = eval_moment(model, F, z)
    for l, H in ((2, h.H2), (3, h.H3)):
        beta = mu.triple()[l - 1]
        ref = component_hessian_formula(model, F, beta, l)
        assert np.allclose(H, ref, atol=1e-12 * (1 + np.abs(ref).max()))


def test_morse_index_edge_cases():
    assert morse_index(np.zeros((4, 4))) == (0, 4)
    m = build_model(CIRCLE1)
    cp = find_critical_points(m, None, [State([1.5], [0.2])])[0]
    assert morse_index(hessian_f23(m, None, cp.z)).index == 0


def test_hom_saddle_and_minima(hom_points):
    m, pts = hom_points
    fs = sorted(round(p.f, 8) for p in pts)
    assert fs[-1] == 2.0 and fs[0] == 1.0
    origin = next(p for p in pts if p.z.norm() == 0)
    assert morse_index(hessian_f23(m, None, origin.z)).index == 4


def test_round_off_betas_resolve_to_zero():
    m = build_model({"kind": "end", "n": 2})
    # diagonal B1 with a tiny off-diagonal B2 entry: mu_C of order 1e-11
    z = State([0.1, 0, 0, -0.05], [0, 1e-10, 0, 0])
    cp = critical_point_at(m, None, z)
    assert 0 < m.lie.norm(cp.beta2) + m.lie.norm(cp.beta3) <= 1e-7
    b1, b2, b3 = resolved_betas(m, cp)
    assert not np.any(b2) and not np.any(b3)
    assert np.array_equal(b1, cp.beta1) or m.lie.norm(cp.beta1) <= 1e-7


# -- anticommutation ---------------------------------------------------------------------


def test_anticommutator_trivial_when_betas_vanish():
    m = build_model({"kind": "end", "n": 2})
    cp = critical_point_at(m, None, State.zeros(4))
    assert tuple(anticommutator_check(m, None, cp)) == (0.0, 0.0)


def test_anticommutator_at_circle_origin():
    m = build_model(CIRCLE1)
    cp = critical_point_at(m, None, State.zeros(1))
    # mu_C(0) = -c: coefficient -sqrt(-1)(0 - 1) = sqrt(-1), so beta_2 = 0, beta_3 = 1
    assert cp.beta2[0] == 0 and cp.beta3[0] == 1
    assert max(anticommutator_check(m, None, cp)) <= 1e-10


def test_anticommutator_at_u2_points(end_points, hom_points):
    for m, pts in (end_points, hom_points):
        for cp in pts:
            assert max(anticommutator_check(m, None, cp)) <= 1e-6


# -- lifted matrix ---------------------------------------------------------------------------


def test_torus_lifted_matrix_is_block_diagonal():
    m = build_model({"kind": "circle", "n": 2, "c": 1})
    cp = find_critical_points(m, None, [State([1, 0.5], [0.3, 1])])[0]
    lh = assemble_lifted_hessian(m, None, cp)
    assert not np.any(lh.B1) and not np.any(lh.B2) and not np.any(lh.B3)
    assert lh.L.shape == (4, 4)
    assert check_kernel_containment(lh).contained


def test_gram_is_psd_with_stabilizer_kernel(end_points):
    m, pts = end_points
    for cp in pts:
        A = action_gram(m, cp.z)
        assert np.allclose(A, A.T, atol=1e-12 * np.abs(A).max())
        ev, U = np.linalg.eigh(A)
        assert ev.min() >= -1e-10 * ev.max()
        ker = U[:, ev <= 1e-8 * ev.max()]
        for xi in ker.T:
            assert np.linalg.norm(np.einsum("a,aij,j->i", xi, m.rep_real, cp.z.real())) <= 1e-6
        lh = assemble_lifted_hessian(m, None, cp)
        B = np.vstack([lh.B2, lh.B3])
        assert np.linalg.norm(B @ ker) <= 1e-6 * (1 + np.linalg.norm(B))


def test_u2_minima_kernel_containment(end_points):
    m, pts = end_points
    for cp in pts:
        lh = assemble_lifted_hessian(m, None, cp)
        assert lh.adjugate_residual <= 1e-8
        v = check_kernel_containment(lh)
        assert v.contained and v.preimage_contained


def test_hom_nontrivial_betas_adjugate_and_kernel(hom_points):
    m, pts = hom_points
    nontrivial = [cp for cp in pts if np.linalg.norm(cp.beta2) + np.linalg.norm(cp.beta3) > 1e-6 and cp.z.norm() > 0]
    assert nontrivial
    for cp in nontrivial:
        lh = assemble_lifted_hessian(m, None, cp)
        assert lh.stab.shape[1] == 2
        assert lh.certified_variant == "flipped"
        assert lh.adjugate_residual <= 1e-8
        assert check_kernel_containment(lh).contained


def test_commutation_failure_is_reported():
    m = build_model({"kind": "end", "n": 2, "c1": 0.3})
    z = State.random(4, np.random.default_rng(5))
    with pytest.raises(LiftedHessianError) as exc:
        assemble_lifted_hessian(m, None, critical_point_at(m, None, z))
    assert exc.value.margins
