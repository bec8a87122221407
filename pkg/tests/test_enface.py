import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from octquant import synthetic as S
from octquant.container import Eye
from octquant.enface import (
    SUBFIELDS,
    EnFaceMap,
    MapKind,
    ScanGrid,
    build_enface_map,
    cvi_profile,
    etdrs_masks,
    etdrs_summarize,
    select_fovea_bscan,
    vessel_density_profile,
)
from octquant.errors import FoveaOutsideMap, FoveaTie, NoFoveaAnywhere, SingleBscanVolume
from octquant.preprocess import FoveaDetection

SLO = 11.6


def axis_grid(n, w, row_step=10.0, origin=(20.0, 30.0)):
    return ScanGrid(np.array(origin), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0, row_step, n, w)


def const_map(shape, value, fovea, angle=0.0, valid=None):
    v = np.ones(shape, bool) if valid is None else valid
    return EnFaceMap(np.where(v, value, 0.0), v, MapKind.THICKNESS, fovea, angle)


# fovea selection ------------------------------------------------------------

def test_select_fovea_examples():
    assert select_fovea_bscan([0.1, 0.9, 0.3])[0] == 1
    assert select_fovea_bscan([0.4])[0] == 0
    det = FoveaDetection(3, 4, 2.0)
    assert select_fovea_bscan([None, det, 1.0]) == (1, det)
    with pytest.warns(FoveaTie):
        assert select_fovea_bscan([0.5, 0.9, 0.9])[0] == 1
    with pytest.raises(NoFoveaAnywhere):
        select_fovea_bscan([None, None])


# map construction -----------------------------------------------------------

def test_constant_profiles_give_constant_map():
    n, w = 5, 40
    g = axis_grid(n, w)
    vals = np.full((n, w), 250.0)
    m = build_enface_map(vals, np.ones((n, w), bool), g, (100, 100), (40.0, 50.0))
    assert np.allclose(m.values[m.valid], 250.0)
    assert np.all(m.values[~m.valid] == 0)
    # coverage is the nearest-neighbour footprint of the raster
    assert m.valid[30:71, 20:60].all()
    assert not m.valid[:25].any() and not m.valid[:, :19].any()
    assert m.angle_degrees == 0.0


def test_two_bscan_midline_bilinear():
    g = axis_grid(2, 10, row_step=20.0, origin=(0.0, 0.0))
    vals = np.vstack([np.full(10, 100.0), np.full(10, 200.0)])
    m = build_enface_map(vals, np.ones((2, 10), bool), g, (25, 12), (5.0, 10.0), sigma=0)
    assert m.values[10, 5] == pytest.approx(150.0, abs=1)
    assert m.values[0, 5] == 100.0 and m.values[20, 5] == 200.0


def test_single_bscan_rejected():
    with pytest.raises(SingleBscanVolume):
        build_enface_map(np.ones((1, 5)), np.ones((1, 5), bool), axis_grid(1, 5), (10, 10), (1.0, 1.0))


def test_grid_round_trip():
    rec = S.macular_volume(5, h=120, w=64, slo_side=128, ilm_row=5.0, choroid_px=10, angle_degrees=7.0).record
    g = ScanGrid.from_record(rec)
    assert g.angle_degrees == pytest.approx(7.0)
    idx, col = np.array([0.0, 2.5, 4.0]), np.array([0.0, 31.0, 63.0])
    x, y = g.to_slo(idx, col)
    i2, c2 = g.to_grid(x, y)
    assert np.allclose(i2, idx) and np.allclose(c2, col)


def test_vessel_density_profile_arithmetic():
    vessel = np.zeros((20, 3))
    vessel[2:12, 1] = 1.0
    region = np.ones((20, 3), bool)
    vd = vessel_density_profile(vessel, region, 11.3, 3.87)
    assert vd[1] == pytest.approx(437.31)
    assert vd[0] == 0 and vd[2] == 0
    assert np.all(vessel_density_profile(np.zeros((20, 3)), region, 11.3, 3.87) == 0)
    cvi, ok = cvi_profile(region.astype(float), region)
    assert np.all(cvi == 1) and ok.all()


# ETDRS ----------------------------------------------------------------------

def test_constant_map_etdrs_and_central_volume():
    T = 275.0
    m = const_map((600, 600), T, (300.0, 300.0))
    s = etdrs_summarize(m, SLO)
    for k in SUBFIELDS:
        assert s.means[k] == pytest.approx(T, rel=1e-12)
    assert s.volumes["central"] == pytest.approx(T * math.pi * 0.25 / 1000, rel=0.01)
    assert all(v == 0 for v in s.missing_percent.values())
    row = s.row("CHOROID", "thickness")
    assert set(row) == {f"CHOROID_{k}_{m}" for k in SUBFIELDS + ("all",) for m in ("thickness", "volume")}


def test_invalid_subfield_is_imputed_and_flagged():
    shape, f = (600, 600), (300.0, 300.0)
    masks = etdrs_masks(shape, f, SLO, eye=Eye.RIGHT)
    valid = ~masks["outer_temporal"]
    m = const_map(shape, 200.0, f, valid=valid)
    s = etdrs_summarize(m, SLO, Eye.RIGHT)
    assert s.missing_percent["outer_temporal"] == 100.0
    assert s.means["outer_temporal"] == pytest.approx(200.0)
    assert s.missing_percent["central"] == 0.0


def test_fovea_outside_map():
    with pytest.raises(FoveaOutsideMap):
        etdrs_summarize(const_map((50, 50), 1.0, (80.0, 10.0)), SLO)


def test_quadrant_labels_swap_with_eye():
    shape, f = (600, 600), (300.0, 300.0)
    xx = np.mgrid[0:600, 0:600][1]
    # right half of the image thicker
    m = EnFaceMap(np.where(xx > 300, 300.0, 100.0), np.ones(shape, bool), MapKind.THICKNESS, f)
    r = etdrs_summarize(m, SLO, Eye.RIGHT).means
    l = etdrs_summarize(m, SLO, Eye.LEFT).means
    assert r["outer_nasal"] == pytest.approx(300.0) and r["outer_temporal"] == pytest.approx(100.0)
    assert l["outer_nasal"] == pytest.approx(100.0) and l["outer_temporal"] == pytest.approx(300.0)


def test_superior_is_up_image():
    yy = np.mgrid[0:600, 0:600][0]
    m = EnFaceMap(np.where(yy < 300, 300.0, 100.0), np.ones((600, 600), bool), MapKind.THICKNESS, (300.0, 300.0))
    s = etdrs_summarize(m, SLO).means
    assert s["inner_superior"] == pytest.approx(300.0) and s["inner_inferior"] == pytest.approx(100.0)


def _smooth_field(shape, f, angle):
    """Asymmetric field defined in the frame rotated by ``angle`` about the fovea."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    a = math.radians(angle)
    dx, dy = xx - f[0], -(yy - f[1])
    u = dx * math.cos(a) + dy * math.sin(a)
    v = -dx * math.sin(a) + dy * math.cos(a)
    return 200 + 0.2 * u + 0.05 * v + 1e-4 * u * v


@pytest.mark.parametrize("alpha", [0.0, 7.0, 90.0])
def test_rotation_consistency(alpha):
    shape, f = (600, 600), (300.0, 300.0)
    base = EnFaceMap(_smooth_field(shape, f, 0.0), np.ones(shape, bool), MapKind.THICKNESS, f, 0.0)
    rot = EnFaceMap(_smooth_field(shape, f, alpha), np.ones(shape, bool), MapKind.THICKNESS, f, alpha)
    a, b = etdrs_summarize(base, SLO).means, etdrs_summarize(rot, SLO).means
    for k in SUBFIELDS:
        assert b[k] == pytest.approx(a[k], rel=0.005)


@given(hnp.arrays(np.float64, (60, 60), elements=st.floats(1, 500)), st.floats(20, 40), st.floats(20, 40),
       st.floats(-45, 45))
def test_etdrs_invariants(values, fx, fy, angle):
    m = EnFaceMap(values, np.ones((60, 60), bool), MapKind.THICKNESS, (fx, fy), angle)
    s = etdrs_summarize(m, 100.0)
    lo, hi = values.min(), values.max()
    for k, v in s.means.items():
        if not math.isnan(v):
            assert lo - 1e-9 <= v <= hi + 1e-9
        assert 0 <= s.missing_percent[k] <= 100
        assert abs(s.volumes[k] - s.means[k] * s.pixel_area_mm2[k] / 1000) < 1e-6 or math.isnan(v)


@given(st.floats(-180, 180), st.sampled_from([Eye.RIGHT, Eye.LEFT]))
def test_subfields_partition_disc(angle, eye):
    masks = etdrs_masks((80, 80), (40.0, 40.0), 100.0, angle, eye)
    stack = np.stack([masks[k] for k in SUBFIELDS]).astype(int)
    assert np.array_equal(stack.sum(0), masks["all"].astype(int))


def test_volume_phantom_end_to_end():
    ph = S.macular_volume(31, h=320, w=256, slo_side=256, ilm_row=100.0, choroid_px=60.0)
    rec = ph.record
    g = ScanGrid.from_record(rec)
    md = rec.metadata
    vals = np.full((31, 256), 60 * md.bscan_scale_y)
    f = g.to_slo(15, 128)
    m = build_enface_map(vals, np.ones_like(vals, bool), g, rec.slo.shape, (float(f[0]), float(f[1])))
    s = etdrs_summarize(m, md.slo_scale_xy)
    for k in SUBFIELDS:
        assert s.means[k] == pytest.approx(60 * 3.87, rel=1e-9)
