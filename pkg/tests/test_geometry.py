"""Sphere-to-viewport resampling: closed-form oracles and round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgan360.errors import CoverageError, GeometryError, ShapeError
from mrgan360.geometry import (AccumulatorMap, EquirectImage, FaceImage,
                               ViewSpec, backproject_accumulate, cube_faces,
                               dense_assemble, dense_view_grid, extract_view,
                               frustum_mask, matrix_to_angles,
                               rotation_matrix, sample_erp)


def longitude_ramp(width=256, height=128):
    """ERP whose value is (longitude + 180) / 360, linear in x."""
    x = (np.arange(width) + 0.5) / width
    return EquirectImage(np.broadcast_to(x, (1, height, width)).copy())


def smooth_sphere_erp(width=256, height=128):
    """Band-limited test pattern with no seam discontinuity."""
    lam = np.radians((np.arange(width) + 0.5) / width * 360.0 - 180.0)
    phi = np.radians(90.0 - (np.arange(height) + 0.5) / height * 180.0)
    lam, phi = np.meshgrid(lam, phi)
    vals = 0.5 + 0.2 * np.sin(phi) + 0.2 * np.cos(phi) * np.cos(lam)
    return EquirectImage(vals[None])


# -- validation ---------------------------------------------------------------

def test_erp_shape_validation():
    with pytest.raises(ShapeError):
        EquirectImage(np.zeros((1, 64, 64)))
    with pytest.raises(ShapeError):
        EquirectImage(np.zeros((2, 64, 128)))
    with pytest.raises(ShapeError):
        EquirectImage(np.zeros((64, 128)))


def test_view_spec_validation():
    with pytest.raises(GeometryError):
        ViewSpec(fov=0.0)
    with pytest.raises(GeometryError):
        ViewSpec(fov=180.0)
    with pytest.raises(GeometryError):
        ViewSpec(pitch=91.0)
    with pytest.raises(GeometryError):
        ViewSpec(out_width=1)


# -- extraction ---------------------------------------------------------------

def test_constant_erp_gives_constant_face():
    erp = EquirectImage(np.full((1, 32, 64), 0.7))
    face = extract_view(erp, ViewSpec(yaw=33.0, pitch=-20.0, roll=10.0,
                                      fov=100.0, out_width=16, out_height=12))
    assert np.abs(face.pixels - 0.7).max() < 1e-12


def test_center_pixel_samples_view_direction():
    # odd extents put one pixel center exactly on the optical axis
    erp = longitude_ramp()
    face = extract_view(erp, ViewSpec(out_width=33, out_height=33))
    assert abs(face.pixels[0, 16, 16] - 0.5) < 1e-12


def test_longitude_ramp_matches_analytic_projection():
    erp = longitude_ramp()
    view = ViewSpec(yaw=0.0, pitch=0.0, fov=90.0, out_width=33, out_height=33)
    face = extract_view(erp, view).pixels[0]
    # independent ray construction: pinhole camera looking down +X
    focal = (view.out_width / 2.0) / np.tan(np.radians(45.0))
    for j in range(view.out_height):
        for i in range(view.out_width):
            right = (i + 0.5) - view.out_width / 2.0
            up = view.out_height / 2.0 - (j + 0.5)
            lam = np.degrees(np.arctan2(right, focal))
            expect = (lam + 180.0) / 360.0
            assert abs(face[j, i] - expect) < 1e-4


def test_full_turn_yaw_is_bit_identical():
    erp = smooth_sphere_erp(128, 64)
    view_a = ViewSpec(yaw=30.0, pitch=15.0, roll=5.0, out_width=16,
                      out_height=16)
    view_b = ViewSpec(yaw=390.0, pitch=15.0, roll=5.0, out_width=16,
                      out_height=16)
    a = extract_view(erp, view_a).pixels
    b = extract_view(erp, view_b).pixels
    assert np.array_equal(a, b)


def test_longitude_wrap_consistency():
    erp = smooth_sphere_erp(128, 64)
    phi = np.array([0.0, 20.0, -40.0])
    east = sample_erp(erp, np.full(3, 180.0), phi)
    west = sample_erp(erp, np.full(3, -180.0), phi)
    assert np.abs(east - west).max() < 1e-12


def test_nearest_sampling_is_exact_at_pixel_centers():
    rng = np.random.default_rng(0)
    erp = EquirectImage(rng.uniform(size=(1, 16, 32)))
    lam = (np.arange(32) + 0.5) / 32.0 * 360.0 - 180.0
    phi = np.full(32, 90.0 - (3 + 0.5) / 16.0 * 180.0)
    out = sample_erp(erp, lam, phi, interp="nearest")
    assert np.array_equal(out[0], erp.pixels[0, 3])


def test_yawed_front_face_equals_right_face():
    erp = smooth_sphere_erp()
    rotated = cube_faces(erp, rotation=(90.0, 0.0), size=32)
    plain = cube_faces(erp, rotation=(0.0, 0.0), size=32)
    assert np.abs(rotated[0].pixels - plain[1].pixels).max() <= 1e-4


def test_positive_pitch_looks_at_north_pole():
    px = np.zeros((1, 64, 128))
    px[:, :8, :] = 1.0
    erp = EquirectImage(px)
    up = extract_view(erp, ViewSpec(pitch=90.0, fov=40.0, out_width=8,
                                    out_height=8))
    down = extract_view(erp, ViewSpec(pitch=-90.0, fov=40.0, out_width=8,
                                      out_height=8))
    assert up.pixels.mean() > 0.9
    assert down.pixels.max() == 0.0


def test_matrix_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        yaw = rng.uniform(0.0, 360.0)
        pitch = rng.uniform(-89.0, 89.0)
        roll = rng.uniform(-179.0, 179.0)
        r = rotation_matrix(yaw, pitch, roll)
        r2 = rotation_matrix(*matrix_to_angles(r))
        assert np.abs(r - r2).max() < 1e-9


# -- frustum membership -------------------------------------------------------

def test_frustum_on_equator_is_longitude_band():
    view = ViewSpec(yaw=0.0, pitch=0.0, fov=90.0, out_width=64, out_height=64)
    mask = frustum_mask(view, width=128, height=64)
    lam = (np.arange(128) + 0.5) / 128.0 * 360.0 - 180.0
    # row adjacent to the equator; a 90-degree frustum spans |lon| <= 45
    # there independently of the small latitude offset
    assert np.array_equal(mask[31], np.abs(lam) <= 45.0)


def test_frustum_matches_tangent_space_oracle():
    view = ViewSpec(yaw=20.0, pitch=10.0, roll=0.0, fov=70.0,
                    out_width=64, out_height=48)
    width, height = 128, 64
    mask = frustum_mask(view, width, height)
    tan_half = np.tan(np.radians(35.0))
    r = rotation_matrix(20.0, 10.0, 0.0)
    for y in range(height):
        for x in range(width):
            lam = np.radians((x + 0.5) / width * 360.0 - 180.0)
            phi = np.radians(90.0 - (y + 0.5) / height * 180.0)
            d = np.array([np.cos(phi) * np.cos(lam),
                          np.cos(phi) * np.sin(lam),
                          np.sin(phi)])
            fwd, right, up = r.T @ d
            if fwd <= 0:
                assert not mask[y, x]
                continue
            mu = abs(right / fwd) - tan_half
            mv = abs(up / fwd) - tan_half * (48.0 / 64.0)
            if max(mu, mv) < -1e-6:
                assert mask[y, x]
            elif max(mu, mv) > 1e-6:
                assert not mask[y, x]


# -- back-projection ----------------------------------------------------------

def test_overlapping_viewports_average():
    width, height = 128, 64
    acc = AccumulatorMap(width=width, height=height)
    va = ViewSpec(yaw=0.0, fov=90.0, out_width=16, out_height=16)
    vb = ViewSpec(yaw=45.0, fov=90.0, out_width=16, out_height=16)
    backproject_accumulate(acc, FaceImage(va, np.full((1, 16, 16), 0.2)))
    backproject_accumulate(acc, FaceImage(vb, np.full((1, 16, 16), 0.6)))
    out, covered = acc.finalize()
    overlap = acc.count == 2
    assert overlap.any()
    assert np.abs(out[overlap] - 0.4).max() < 1e-12
    single = (acc.count == 1) & covered
    assert np.all((np.abs(out[single] - 0.2) < 1e-12)
                  | (np.abs(out[single] - 0.6) < 1e-12))


def test_six_constant_faces_cover_sphere_with_constant():
    width, height = 128, 64
    acc = AccumulatorMap(width=width, height=height)
    for name, (yaw, pitch) in [("front", (0.0, 0.0)), ("right", (90.0, 0.0)),
                               ("back", (180.0, 0.0)), ("left", (270.0, 0.0)),
                               ("up", (0.0, 90.0)), ("down", (0.0, -90.0))]:
        view = ViewSpec(yaw=yaw, pitch=pitch, fov=90.0, out_width=16,
                        out_height=16)
        backproject_accumulate(acc, FaceImage(view, np.full((1, 16, 16), 0.3)))
    out, covered = acc.finalize()
    assert covered.all()
    assert np.abs(out - 0.3).max() < 1e-12


def test_empty_accumulator_reports_nothing_covered():
    acc = AccumulatorMap(width=8, height=4)
    out, covered = acc.finalize()
    assert not covered.any()
    assert np.all(out == 0.0)


def test_backprojection_rejects_multichannel():
    acc = AccumulatorMap(width=8, height=4)
    view = ViewSpec(out_width=4, out_height=4)
    with pytest.raises(ShapeError):
        backproject_accumulate(acc, FaceImage(view, np.zeros((3, 4, 4))))


# -- round trip and assembly --------------------------------------------------

def test_extract_backproject_round_trip():
    erp = smooth_sphere_erp(256, 128)
    acc = AccumulatorMap(width=256, height=128)
    for face in cube_faces(erp, size=128):
        backproject_accumulate(acc, face)
    recon, covered = acc.finalize()
    assert covered.all()
    mae = np.abs(recon - erp.pixels[0]).mean()
    assert mae <= 0.02


def test_dense_assemble_normalizes_to_unit_peak():
    views = dense_view_grid(lon_step=90.0, lat_step=90.0, fov=120.0,
                            out_width=16, out_height=16)
    maps = [FaceImage(v, np.full((1, 16, 16), 0.25)) for v in views]
    out = dense_assemble(maps, (64, 32))
    assert out.shape == (32, 64)
    assert np.abs(out - 1.0).max() < 1e-12


def test_dense_assemble_raises_on_coverage_gap():
    view = ViewSpec(yaw=0.0, fov=90.0, out_width=16, out_height=16)
    maps = [FaceImage(view, np.ones((1, 16, 16)))]
    with pytest.raises(CoverageError) as err:
        dense_assemble(maps, (64, 32))
    assert 0.0 < err.value.uncovered_fraction < 1.0


def test_dense_grid_covers_poles_and_wraps():
    views = dense_view_grid(lon_step=90.0, lat_step=90.0)
    pitches = sorted({v.pitch for v in views})
    assert pitches == [-90.0, 0.0, 90.0]
    yaws = sorted({v.yaw for v in views})
    assert yaws == [0.0, 90.0, 180.0, 270.0]


# -- properties ---------------------------------------------------------------

@given(st.floats(0.0, 360.0), st.floats(-90.0, 90.0), st.floats(-180.0, 180.0))
@settings(max_examples=50, deadline=None)
def test_rotation_matrices_are_orthonormal(yaw, pitch, roll):
    r = rotation_matrix(yaw, pitch, roll)
    assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=15, deadline=None)
def test_constant_preserved_under_any_view(seed):
    rng = np.random.default_rng(seed)
    erp = EquirectImage(np.full((1, 16, 32), rng.uniform(0.1, 0.9)))
    view = ViewSpec(yaw=rng.uniform(0, 360), pitch=rng.uniform(-89, 89),
                    roll=rng.uniform(-180, 180), fov=rng.uniform(30, 150),
                    out_width=8, out_height=8)
    face = extract_view(erp, view)
    assert np.abs(face.pixels - erp.pixels[0, 0, 0]).max() < 1e-12
