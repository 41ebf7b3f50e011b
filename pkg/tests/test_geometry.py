import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from beamsim.geometry import (
    DeviceDesign,
    PanelLayout,
    Pose,
    angles_to_unit,
    direction_to_panel_angles,
    edge_design,
    edge_face_design,
    get_design,
    load_design,
    orientation_mode,
    rot_x,
    rot_y,
    rot_z,
    rotation_angles,
    rotation_matrix,
    sample_orientation,
    unit_to_angles,
)

angle = st.floats(-10.0, 10.0, allow_nan=False)


def test_identity_rotation():
    assert np.array_equal(rotation_matrix((0.0, 0.0, 0.0)), np.eye(3))


def test_quarter_turn_about_z():
    np.testing.assert_allclose(rotation_matrix((math.pi / 2, 0, 0)) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@given(angle, angle, angle)
def test_rotation_matches_axis_product(a, b, g):
    ref = rot_z(a) @ rot_y(b) @ rot_x(g)
    assert np.abs(rotation_matrix((a, b, g)) - ref).max() < 1e-12


def test_rotation_orthonormal_many():
    rng = np.random.default_rng(1)
    for a, b, g in rng.uniform(-4, 4, (1000, 3)):
        R = rotation_matrix((a, b, g))
        assert np.abs(R @ R.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


@given(angle, st.floats(-1.5, 1.5), angle)
def test_rotation_angles_inverse(a, b, g):
    R = rotation_matrix((a, b, g))
    a2, b2, g2 = rotation_angles(R)
    assert -math.pi <= a2 < math.pi
    assert -math.pi / 2 <= b2 <= math.pi / 2
    assert 0 <= g2 < 2 * math.pi
    assert np.abs(rotation_matrix((a2, b2, g2)) - R).max() < 1e-9


def test_pose_normalized_keeps_matrix():
    p = Pose((1, 2, 3), (5.0, 0.3, -2.0))
    n = p.normalized()
    assert np.abs(n.matrix - p.matrix).max() < 1e-12
    assert n.position == p.position


@pytest.mark.parametrize("mode", ["portrait", "landscape"])
def test_orientation_exact_zero(mode):
    rng = np.random.default_rng(0)
    for _ in range(2000):
        a, b, g = sample_orientation(mode, rng)
        if mode == "portrait":
            assert b == 0.0
        else:
            assert g == 0.0
        assert orientation_mode((a, b, g)) == mode


def test_orientation_marginals():
    rng = np.random.default_rng(7)
    por = np.array([sample_orientation("portrait", rng) for _ in range(100_000)])
    lan = np.array([sample_orientation("landscape", rng) for _ in range(100_000)])
    assert abs(por[:, 2].mean() - math.pi / 4) < 0.01
    checks = [
        (por[:, 0], -math.pi, 2 * math.pi),
        (por[:, 2], 0.0, math.pi / 2),
        (lan[:, 0], -math.pi, 2 * math.pi),
        (lan[:, 1], -math.pi / 2, math.pi / 2),
    ]
    for x, loc, scale in checks:
        assert stats.kstest(x, "uniform", args=(loc, scale)).pvalue > 0.01


def test_unknown_mode():
    with pytest.raises(ValueError):
        sample_orientation("upside-down", np.random.default_rng(0))


def test_design_sizes():
    assert edge_design().n_panels == 3
    assert edge_design().n_elements == 12
    assert edge_face_design().n_panels == 5
    assert edge_face_design().n_elements == 20
    assert edge_face_design().panel_sizes == [4, 4, 4, 4, 4]
    assert [p.grid for p in edge_face_design().panels[3:]] == [(2, 2, 1), (2, 2, 1)]


def test_boresights_in_device_frame():
    bs = [p.boresight for p in edge_face_design().panels]
    assert bs == [(1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, 0, -1), (0, 0, 1)]


def test_local_axes_are_rotations():
    for p in edge_face_design().panels:
        A = p.local_axes
        assert np.abs(A.T @ A - np.eye(3)).max() < 1e-12
        assert np.linalg.det(A) > 0


def test_element_axes_point_along_boresight():
    for p in edge_face_design().panels:
        x_dev = p.local_axes @ p.element_axes[:, 0]
        np.testing.assert_allclose(x_dev, p.boresight, atol=1e-12)


def test_panel_rejects_bad_axes():
    with pytest.raises(ValueError):
        PanelLayout((1, 4, 1), (1, 0, 0), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        PanelLayout((0, 4, 1), (1, 0, 0))
    with pytest.raises(ValueError):
        PanelLayout((1, 4, 1), (1, 1, 0))


def test_boresight_angles_edge_panel():
    phi, theta = direction_to_panel_angles([1.0, 0, 0], Pose((0, 0, 0)), edge_design().panels[0])
    assert abs(phi) < 1e-15 and abs(theta - math.pi / 2) < 1e-15


def test_face_panel_zenith():
    _, theta = direction_to_panel_angles([0, 0, 1.0], Pose((0, 0, 0)), edge_face_design().panels[4])
    assert theta == 0.0


def test_non_unit_direction():
    with pytest.raises(ValueError, match="non-unit direction"):
        direction_to_panel_angles([1.0, 1.0, 0], Pose((0, 0, 0)), edge_design().panels[0])


@settings(max_examples=200)
@given(angle, angle, angle, st.floats(-3, 3), st.floats(0.05, 3.09), st.integers(0, 4))
def test_panel_angle_round_trip(a, b, g, phi, theta, p):
    panel = edge_face_design().panels[p]
    pose = Pose((1, 1, 1), (a, b, g))
    local = angles_to_unit(phi, theta)
    glob = pose.matrix @ panel.local_axes @ local
    glob /= np.linalg.norm(glob)
    phi2, theta2 = direction_to_panel_angles(glob, pose, panel)
    assert abs(math.remainder(phi2 - phi, 2 * math.pi)) < 1e-9
    assert abs(theta2 - theta) < 1e-9


def test_unit_angles_round_trip_vectorized():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    phi, theta = unit_to_angles(d)
    assert np.all(phi >= -math.pi) and np.all(phi < math.pi)
    np.testing.assert_allclose(angles_to_unit(phi, theta), d, atol=1e-12)


def test_design_json_round_trip(tmp_path):
    path = tmp_path / "layout.json"
    path.write_text(json.dumps(edge_face_design().to_dict()))
    d = load_design(path)
    assert isinstance(d, DeviceDesign)
    assert d.panels == edge_face_design().panels
    assert get_design(str(path)).n_elements == 20


def test_unknown_design():
    with pytest.raises(ValueError):
        get_design("tablet")
