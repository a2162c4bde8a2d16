import numpy as np
import pytest

from hklab.core import DomainError, Frame
from hklab.frames import (
    FrameSamplingError,
    check_general_frame,
    constancy_defect,
    enumerate_subtorus_data,
    sample_general_frame,
)
from hklab.models import build_model

HALF = {"kind": "circle", "n": 1, "c1": 0.5}


def test_zero_constants_single_datum():
    data = enumerate_subtorus_data(build_model({"kind": "circle", "n": 2}))
    assert len(data) == 1
    (d,) = data
    assert d.fixed_coordinates == ()
    assert d.rho == 0
    assert not np.any(d.paired_constants)


def test_circle_constant_half():
    (d,) = enumerate_subtorus_data(build_model(HALF))
    assert np.allclose(d.gamma_constant, [0.5, 0, 0])
    assert d.rho == pytest.approx(0.5, abs=1e-15)


def test_rank_two_coordinate_torus():
    data = enumerate_subtorus_data(build_model({"kind": "torus", "weights": [[1, 0], [0, 1]]}))
    fixed = sorted(d.fixed_coordinates for d in data)
    assert fixed == [(), (0,), (1,)]
    by_fixed = {d.fixed_coordinates: d for d in data}
    # the circle fixing coordinate 0 is the second factor
    assert np.array_equal(np.abs(by_fixed[(0,)].generators), [[0, 1]])
    assert np.array_equal(np.abs(by_fixed[(1,)].generators), [[1, 0]])
    assert by_fixed[()].generators.shape == (2, 2)


def test_dependent_weights_share_a_circle():
    # weights 1, 1, 2 on a circle: one stabilizer only
    data = enumerate_subtorus_data(build_model({"kind": "torus", "weights": [[1, 1, 2]]}))
    assert [d.fixed_coordinates for d in data] == [()]


def test_paired_constants_constant_on_fixed_loci():
    m = build_model({"kind": "torus", "weights": [[1, 0, 1], [0, 1, 1]], "c1": [0.2, -0.1], "cC": [[0.1, 0.2], [0.0, -0.3]]})
    rng = np.random.default_rng(0)
    for d in enumerate_subtorus_data(m):
        assert constancy_defect(m, d, rng, samples=10) <= 1e-10


def test_nonabelian_uses_maximal_torus():
    data = enumerate_subtorus_data(build_model({"kind": "end", "n": 2, "c1": 0.5}))
    assert all(d.generators.shape[1] == 2 for d in data)
    assert max(d.rho for d in data) > 0


def test_all_zero_constants_every_frame_general():
    m = build_model({"kind": "circle", "n": 2})
    v = check_general_frame(m, Frame.identity())
    assert v.general and v.constraints == 0
    frame, attempts = sample_general_frame(m, seed=1, return_attempts=True)
    assert attempts == 1


def test_identity_frame_not_general_for_real_constant():
    v = check_general_frame(build_model(HALF), Frame.identity())
    assert not v.general
    assert v.witness == 0


def test_rotation_about_third_axis_is_general():
    v = check_general_frame(build_model(HALF), Frame.rotation(3, np.pi / 2))
    assert v.general
    assert v.margins[0] == pytest.approx(0.5, abs=1e-15)


def test_verdict_depends_only_on_complex_rows():
    m = build_model({"kind": "torus", "weights": [[1, 0], [0, 1]], "c1": [0.3, 0.7]})
    rng = np.random.default_rng(1)
    for _ in range(20):
        F = Frame.haar(rng)
        # rotating within the complex plane changes row 1 of R only through a rotation about axis 1
        G = Frame(Frame.rotation(1, rng.uniform(0, 2 * np.pi)).R @ F.R)
        assert check_general_frame(m, F).general == check_general_frame(m, G).general


def test_haar_frames_general_for_single_constraint():
    m = build_model(HALF)
    for seed in range(100):
        frame = sample_general_frame(m, seed=seed)
        v = check_general_frame(m, frame)
        assert v.general and min(v.margins) > 1e-14


def test_adversarial_identity_is_rejected():
    m = build_model(HALF)
    proposals = [Frame.identity(), Frame.rotation(2, 0.4)]
    frame, attempts = sample_general_frame(m, proposals=proposals, return_attempts=True)
    assert attempts == 2
    assert np.array_equal(frame.R, proposals[1].R)


def test_sampling_budget_exhausted():
    m = build_model(HALF)
    with pytest.raises(FrameSamplingError):
        sample_general_frame(m, proposals=[Frame.identity()] * 5, max_attempts=5)
    with pytest.raises(DomainError):
        sample_general_frame(m, max_attempts=0)
