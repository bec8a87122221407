import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from octquant import slo
from octquant.errors import (
    EmptyDiscMask,
    EmptyMask,
    EmptySkeleton,
    NonSquareInput,
    NoUsableSegments,
    NoVessels,
    UnderCount,
    ZoneExceedsImage,
)
from octquant.synthetic import sierpinski_carpet


# --------------------------------------------------------------------------
# oracles


def knudtson_oracle(widths, k):
    """Pair largest with smallest in plain Python, carrying the middle one.

    Squares are single multiplications; ``x ** 2`` goes through libm ``pow``,
    which is not always correctly rounded.
    """
    w = sorted(map(float, widths), reverse=True)[:6]
    while len(w) > 1:
        w.sort()
        nxt = []
        i, j = 0, len(w) - 1
        while i < j:
            nxt.append(k * math.sqrt(w[i] * w[i] + w[j] * w[j]))
            i += 1
            j -= 1
        if i == j:
            nxt.append(w[i])
        w = nxt
    return w[0]


def tortuosity_oracle(points):
    """Tortuosity density with subsegments cut where the heading turns the other way."""
    p = [tuple(map(float, q)) for q in points]
    headings = [math.atan2(b[1] - a[1], b[0] - a[0]) for a, b in zip(p, p[1:])]
    turns = []
    for h0, h1 in zip(headings, headings[1:]):
        d = (h1 - h0 + math.pi) % (2 * math.pi) - math.pi
        turns.append(0 if abs(d) < 1e-9 else (1 if d > 0 else -1))
    cuts, last = [0], 0
    for i, t in enumerate(turns):
        if t and last and t != last:
            cuts.append(i + 1)
        if t:
            last = t
    cuts.append(len(p) - 1)
    seg = lambda a, b: sum(math.dist(p[i], p[i + 1]) for i in range(a, b))
    total = seg(0, len(p) - 1)
    n = len(cuts) - 1
    excess = 0.0
    for a, b in zip(cuts, cuts[1:]):
        chord = math.dist(p[a], p[b])
        if chord > 0:
            excess += seg(a, b) / chord - 1
    return (n - 1) / n + excess / total


def box_count_oracle(mask, s):
    rows, cols = np.nonzero(mask)
    r0, c0 = rows.min(), cols.min()
    return len({((r - r0) // s, (c - c0) // s) for r, c in zip(rows, cols)})


# --------------------------------------------------------------------------
# fractal dimension


def test_fd_filled_square():
    assert slo.fractal_dimension(np.ones((512, 512), bool)) == pytest.approx(2.0, abs=0.05)


def test_fd_line():
    m = np.zeros((512, 512), bool)
    m[256, 10:500] = True
    assert slo.fractal_dimension(m) == pytest.approx(1.0, abs=0.05)


def test_fd_sierpinski_depth5():
    assert slo.fractal_dimension(sierpinski_carpet(5)) == pytest.approx(math.log(8) / math.log(3), abs=0.05)


def test_box_sizes_ladder():
    assert slo.box_sizes(512) == [2, 4, 8, 16, 32, 64, 128]
    assert slo.box_sizes(7) == []


def test_box_counts_match_set_oracle(rng):
    m = rng.random((90, 70)) > 0.97
    m[40, 30] = True
    sizes = [2, 4, 8, 16]
    assert list(slo.box_counts(m, sizes)) == [box_count_oracle(m, s) for s in sizes]


@given(st.integers(0, 60), st.integers(0, 60))
def test_fd_translation_invariant(dr, dc):
    base = np.zeros((256, 256), bool)
    base[20:60, 30:34] = True
    base[40, 10:120] = True
    moved = np.zeros_like(base)
    moved[dr:, dc:] = base[: 256 - dr, : 256 - dc]
    assert slo.fractal_dimension(moved) == pytest.approx(slo.fractal_dimension(base), abs=1e-12)


def test_fd_empty_raises():
    with pytest.raises(EmptyMask):
        slo.fractal_dimension(np.zeros((64, 64), bool))


# --------------------------------------------------------------------------
# density and calibre


def test_vessel_density_examples():
    assert slo.vessel_density(np.zeros((10, 10))) == 0.0
    assert slo.vessel_density(np.ones((10, 10))) == 1.0
    m = np.zeros((10, 10), bool)
    m[:, :5] = True
    assert slo.vessel_density(m) == 0.5


def _bar(width, length=200, side=256):
    m = np.zeros((side, side), bool)
    top = side // 2 - width // 2
    m[top : top + width, 28 : 28 + length] = True
    return m


def test_global_calibre_of_bar():
    assert slo.global_calibre(_bar(7)) == pytest.approx(7, rel=0.1)


def test_global_calibre_single_pixel_line():
    assert slo.global_calibre(_bar(1)) == pytest.approx(1.0)


def test_global_calibre_slope_is_one():
    widths = np.array([3, 5, 7, 9, 11, 13])
    cal = [slo.global_calibre(_bar(w)) for w in widths]
    slope = np.polyfit(widths, cal, 1)[0]
    assert slope == pytest.approx(1.0, rel=0.1)


def test_global_calibre_empty():
    with pytest.raises(EmptySkeleton):
        slo.global_calibre(np.zeros((20, 20), bool))


# --------------------------------------------------------------------------
# segments


def test_plus_sign_has_four_arms():
    m = np.zeros((101, 101), bool)
    m[50, 10:91] = True
    m[10:91, 50] = True
    vs = slo.decompose_segments(m, min_length=3)
    assert len(vs.segments) == 4
    assert len(vs.branch_points) >= 1
    assert np.all(np.abs(vs.branch_points - 50) <= 1)


def test_bar_is_one_segment():
    vs = slo.decompose_segments(_bar(5), min_length=3)
    assert len(vs.segments) == 1
    assert vs.widths[0] == pytest.approx(5, rel=0.1)
    path = vs.segments[0]
    steps = np.abs(np.diff(path, axis=0)).max(axis=1)
    assert steps.max() == 1


def test_empty_mask_has_no_segments():
    vs = slo.decompose_segments(np.zeros((50, 50), bool))
    assert vs.segments == [] and vs.usable == []


def test_short_segments_not_usable():
    m = np.zeros((40, 40), bool)
    m[5, 5:8] = True
    m[20, 2:35] = True
    vs = slo.decompose_segments(m, min_length=10)
    assert len(vs.segments) == 2 and len(vs.usable) == 1


# --------------------------------------------------------------------------
# Knudtson


def test_knudtson_two_widths_artery():
    with pytest.warns(UnderCount):
        assert slo.knudtson_equivalent([3, 4], "artery") == pytest.approx(0.88 * 5)


def test_knudtson_single_width():
    with pytest.warns(UnderCount):
        assert slo.knudtson_equivalent([6.5], "vein") == 6.5


def test_knudtson_six_widths_literal():
    w = [10, 9, 8, 7, 6, 5]
    k = 0.95
    r1 = sorted([k * math.hypot(10, 5), k * math.hypot(9, 6), k * math.hypot(8, 7)])
    r2 = sorted([k * math.hypot(r1[0], r1[2]), r1[1]])
    expected = k * math.hypot(*r2)
    assert slo.knudtson_equivalent(w, "vein") == pytest.approx(expected, rel=1e-12)


def test_knudtson_uses_six_largest():
    w = [10, 9, 8, 7, 6, 5]
    assert slo.knudtson_equivalent(w + [1, 2, 3], "artery") == slo.knudtson_equivalent(w, "artery")


def test_knudtson_matches_oracle_seeded():
    rng = np.random.default_rng(7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderCount)
        for _ in range(200):
            w = list(rng.uniform(2, 20, rng.integers(1, 12)))
            for vt, k in slo.KNUDTSON_K.items():
                assert slo.knudtson_equivalent(w, vt) == pytest.approx(knudtson_oracle(w, k), rel=1e-12)


def test_knudtson_errors():
    with pytest.raises(NoVessels):
        slo.knudtson_equivalent([], "artery")
    with pytest.raises(ValueError):
        slo.knudtson_equivalent([3, 0, 4, 5, 6, 7], "artery")


widths = st.lists(st.floats(1, 30), min_size=6, max_size=10)


@given(widths, st.randoms())
def test_knudtson_permutation_invariant(w, r):
    shuffled = list(w)
    r.shuffle(shuffled)
    assert slo.knudtson_equivalent(shuffled, "vein") == pytest.approx(slo.knudtson_equivalent(w, "vein"), rel=1e-12)


@given(widths, st.floats(0.1, 5))
def test_knudtson_monotone(w, bump):
    bigger = [x + bump for x in w]
    assert slo.knudtson_equivalent(bigger, "artery") > slo.knudtson_equivalent(w, "artery")


# --------------------------------------------------------------------------
# tortuosity


def test_straight_segment_has_zero_tortuosity():
    p = np.column_stack([np.arange(50), np.zeros(50)])
    assert slo.segment_tortuosity_density(p) == 0.0
    assert slo.tortuosity_density([p]) == 0.0


def test_diagonal_staircase_is_straight_after_smoothing():
    p = np.column_stack([np.arange(40), np.arange(40)])
    assert slo.tortuosity_density([p]) == pytest.approx(0.0, abs=1e-12)


def test_half_circle_matches_oracle():
    t = np.linspace(0, math.pi, 60)
    p = np.column_stack([30 * np.cos(t), 30 * np.sin(t)])
    got = slo.segment_tortuosity_density(p)
    assert got > 0
    assert got == pytest.approx(tortuosity_oracle(p), rel=1e-12)


def test_sine_is_more_tortuous_than_line():
    x = np.arange(120.0)
    sine = np.column_stack([x, 6 * np.sin(x / 8)])
    line = np.column_stack([x, np.zeros_like(x)])
    assert slo.segment_tortuosity_density(sine) > slo.segment_tortuosity_density(line)
    assert slo.segment_tortuosity_density(sine) == pytest.approx(tortuosity_oracle(sine), rel=1e-12)


def test_sine_subsegments_split_at_inflections():
    x = np.linspace(0, 4 * math.pi, 200)
    subs = slo.curvature_subsegments(np.column_stack([x, np.sin(x)]))
    assert len(subs) == 4
    assert all(np.array_equal(a[-1], b[0]) for a, b in zip(subs, subs[1:]))


@given(st.floats(-500, 500), st.floats(-500, 500), st.integers(0, 10_000))
def test_tortuosity_translation_invariant(dx, dy, seed):
    rng = np.random.default_rng(seed)
    p = np.cumsum(rng.normal(size=(30, 2)) + [1.0, 0.0], axis=0)
    moved = p + [dx, dy]
    assert slo.segment_tortuosity_density(moved) == pytest.approx(slo.segment_tortuosity_density(p), rel=1e-6)


def test_smooth_path_keeps_ends():
    p = np.array([[0, 0], [1, 3], [2, -1], [3, 4], [4, 0]], float)
    s = slo.smooth_path(p, 5)
    assert np.array_equal(s[0], p[0]) and np.array_equal(s[-1], p[-1])
    assert np.allclose(s[2], p.mean(axis=0))


def test_tortuosity_no_usable():
    with pytest.raises(NoUsableSegments):
        slo.tortuosity_density([np.zeros((2, 2))])


# --------------------------------------------------------------------------
# disc and zones


def _disc(shape, cx, cy, a, b=None):
    b = a if b is None else b
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1


def test_disc_fit_circle():
    d = slo.fit_disc_ellipse(_disc((300, 300), 150, 140, 40))
    assert d.diameter == pytest.approx(80, abs=1)
    assert d.center == pytest.approx((150, 140), abs=0.1)


def test_disc_fit_ellipse_diameter_is_mean_axis():
    d = slo.fit_disc_ellipse(_disc((300, 300), 150, 150, 50, 30))
    assert d.major == pytest.approx(100, abs=1.5)
    assert d.minor == pytest.approx(60, abs=1.5)
    assert d.diameter == pytest.approx(80, abs=1)


def test_disc_fit_keeps_largest_component():
    m = _disc((300, 300), 80, 80, 30) | _disc((300, 300), 220, 220, 10)
    d = slo.fit_disc_ellipse(m)
    assert d.center == pytest.approx((80, 80), abs=0.1)


def test_disc_fit_empty():
    with pytest.raises(EmptyDiscMask):
        slo.fit_disc_ellipse(np.zeros((20, 20)))


def test_zone_radii():
    disc = slo.DiscEllipse((400.0, 400.0), 80.0, 80.0, 0.0)
    zb = slo.zone_mask(disc, "B", (800, 800))
    zc = slo.zone_mask(disc, slo.Zone.C, (800, 800))
    assert (zb.inner_radius, zb.outer_radius) == (80.0, 120.0)
    assert (zc.inner_radius, zc.outer_radius) == (80.0, 200.0)
    assert not zb.clipped and not zc.clipped
    assert not (zb.mask & ~zc.mask).any()
    assert not (zc.mask & _disc((800, 800), 400, 400, 40)).any()
    # annulus area
    assert zb.mask.sum() == pytest.approx(math.pi * (120**2 - 80**2), rel=0.01)


def test_zone_clipped_at_corner():
    disc = slo.DiscEllipse((30.0, 30.0), 40.0, 40.0, 0.0)
    with pytest.warns(ZoneExceedsImage):
        z = slo.zone_mask(disc, "C", (300, 300))
    assert z.clipped and z.mask.any()


# --------------------------------------------------------------------------
# resizing


def test_resize_constant_image():
    out, tf = slo.resize_for_segmentation(np.full((512, 512), 0.3))
    assert out.shape == (768, 768)
    assert np.allclose(out, 0.3)
    assert np.allclose(tf.inverse(out), 0.3) and tf.inverse(out).shape == (512, 512)


def test_resize_native_side_is_identity():
    img = np.random.default_rng(0).random((768, 768))
    out, tf = slo.resize_for_segmentation(img)
    assert out is img or np.array_equal(out, img)
    assert np.array_equal(tf.inverse(out), img)


def test_resize_keeps_mean():
    img = (np.indices((1536, 1536)).sum(axis=0) // 8 % 2).astype(float)
    out, _ = slo.resize_for_segmentation(img)
    assert out.mean() == pytest.approx(img.mean(), rel=0.02)


def test_resize_non_square():
    with pytest.raises(NonSquareInput):
        slo.resize_for_segmentation(np.zeros((100, 120)))


# --------------------------------------------------------------------------
# features


def test_vessel_features_keys_and_units():
    m = _bar(7, side=256)
    with pytest.warns(UnderCount):
        f = slo.vessel_features(m, 10.0, vessel_type="artery")
    assert set(f) == {"vessel_density", "fractal_dimension", "average_global_calibre",
                      "average_local_calibre", "tortuosity_density", "CRAE_Knudtson"}
    assert f["average_global_calibre"] == pytest.approx(70, rel=0.1)
    # skeleton ends of a thick bar bend by a pixel
    assert 0 <= f["tortuosity_density"] < 1e-3
    assert f["CRAE_Knudtson"] == pytest.approx(f["average_local_calibre"])


def test_vessel_features_region_density():
    m = np.ones((64, 64), bool)
    region = np.zeros_like(m)
    region[:10, :10] = True
    assert slo.vessel_features(m, 1.0, region=region)["vessel_density"] == 1.0
