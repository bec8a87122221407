import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from octquant import synthetic as S
from octquant.container import (
    FLT_MAX,
    HEADER_SIZE,
    SURFACE_INDEX,
    BscanType,
    Eye,
    ScanCategory,
    ScanRecord,
    classify_scan,
    extract_layer_pairs,
    fixture_meta,
    parse_fixture,
    parse_vol,
    write_fixture,
    write_vol,
)
from octquant.errors import (
    LayerUnavailable,
    MissingField,
    ShapeMismatch,
    TruncatedFile,
    UnrecognizedMagic,
    UnsupportedVariant,
)


@given(st.integers(0, 2**32 - 1))
def test_vol_round_trip_random(seed):
    rec = S.random_record(np.random.default_rng(seed))
    again = parse_vol(write_vol(rec))
    assert again == rec
    assert write_vol(again) == write_vol(rec)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_fixture_round_trip_random(tmp_path_factory, seed, zipped):
    rec = S.random_record(np.random.default_rng(seed))
    d = tmp_path_factory.mktemp("fx")
    path = write_fixture(rec, d / ("f.zip" if zipped else "f"))
    assert parse_fixture(path) == rec


def test_zip_fixture_is_deterministic(tmp_path):
    rec = S.random_record(np.random.default_rng(3))
    a = write_fixture(rec, tmp_path / "a.zip", "x.vol").read_bytes()
    b = write_fixture(rec, tmp_path / "b.zip", "x.vol").read_bytes()
    assert a == b


def test_full_size_line_round_trip():
    rec = S.macular_line(with_slo_masks=False).record
    assert rec.bscans.shape == (1, 496, 768) and rec.slo.shape == (768, 768)
    assert parse_vol(write_vol(rec)) == rec


def test_equality_detects_single_bit_change():
    rec = S.random_record(np.random.default_rng(5))
    b = bytearray(write_vol(rec))
    b[-1] ^= 1
    assert parse_vol(bytes(b)) != rec


def test_bad_magic():
    blob = bytearray(write_vol(S.random_record(np.random.default_rng(0))))
    blob[:3] = b"XXX"
    with pytest.raises(UnrecognizedMagic):
        parse_vol(bytes(blob))
    with pytest.raises(UnrecognizedMagic):
        parse_vol(b"")


def test_unknown_version():
    blob = bytearray(write_vol(S.random_record(np.random.default_rng(0))))
    blob[8:11] = b"999"
    with pytest.raises(UnsupportedVariant):
        parse_vol(bytes(blob))


@pytest.mark.parametrize("cut", [100, HEADER_SIZE, -1])
def test_truncated(cut):
    blob = write_vol(S.random_record(np.random.default_rng(1)))
    with pytest.raises(TruncatedFile):
        parse_vol(blob[:cut])


def test_invalid_sentinel_becomes_missing():
    rec = S.macular_line(h=64, w=32, slo_side=0, ilm_row=5.0, with_slo_masks=False).record
    blob = bytearray(write_vol(rec))
    # overwrite ILM at column 3 of the first B-scan with the sentinel
    off = HEADER_SIZE + rec.bscan_headers[0].off_seg + (SURFACE_INDEX["ILM"] * 32 + 3) * 4
    blob[off : off + 4] = struct.pack("<f", FLT_MAX)
    again = parse_vol(bytes(blob))
    c = again.boundary(0, "ILM")
    assert not c.valid[3] and np.isnan(c.rows[3])
    assert c.valid.sum() == 31
    for b in again.boundaries(0):
        assert len(b) == 32
        assert np.array_equal(b.valid, np.isfinite(b.rows))


def test_sixty_one_bscans_is_ppole():
    hdr = S.make_header(61, 496, 768, pattern=3, spacing=120.0, slo_side=0)
    heads = tuple(S._bscan_header((0, 0.12 * i), (8.7, 0.12 * i), S.NUM_SEG) for i in range(61))
    rec = ScanRecord(hdr, heads, None, np.zeros((61, 496, 768), np.float32),
                     np.full((61, S.NUM_SEG, 768), np.nan, np.float32))
    again = parse_vol(write_vol(rec))
    assert again.num_bscans == 61
    assert again.metadata.bscan_type is BscanType.PPOLE
    assert classify_scan(again.metadata) is ScanCategory.MACULAR_VOLUME
    assert again.metadata.bscan_scale_z == pytest.approx(120.0)


def _minimal_meta(**kw):
    meta = {"eye": "Right", "Bscan_type": "H-line", "Bscan_resolution_x": 4, "Bscan_resolution_y": 4,
            "Bscan_scale_x": 11.3, "Bscan_scale_y": 3.87}
    meta.update(kw)
    return meta


def test_minimal_fixture_without_slo(tmp_path):
    (tmp_path / "meta.json").write_text(json.dumps(_minimal_meta()))
    (tmp_path / "bscans.raw").write_bytes(np.arange(16, dtype="<f4").tobytes())
    rec = parse_fixture(tmp_path)
    assert rec.slo is None
    assert rec.bscans.shape == (1, 4, 4)
    assert rec.metadata.bscan_scale_x == pytest.approx(11.3)
    assert rec.metadata.bscan_type is BscanType.HLINE
    assert classify_scan(rec.metadata) is ScanCategory.SINGLE_MACULAR


def test_fixture_shape_mismatch(tmp_path):
    (tmp_path / "meta.json").write_text(json.dumps(_minimal_meta()))
    (tmp_path / "bscans.raw").write_bytes(np.zeros(15, "<f4").tobytes())
    with pytest.raises(ShapeMismatch):
        parse_fixture(tmp_path)


def test_fixture_missing_field(tmp_path):
    meta = _minimal_meta()
    del meta["Bscan_scale_y"]
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    (tmp_path / "bscans.raw").write_bytes(np.zeros(16, "<f4").tobytes())
    with pytest.raises(MissingField):
        parse_fixture(tmp_path)


def test_peripapillary_fixture_from_table_keys(tmp_path):
    meta = _minimal_meta(Bscan_type="Peripapillary", Bscan_resolution_x=1536, Bscan_resolution_y=768,
                         Bscan_scale_x=2 * np.pi * 1750 / 1536, slo_resolution_px=16, slo_scale_xy=11.6,
                         acquisition_radius_mm=1.75, acquisition_optic_disc_center_x=8.0,
                         acquisition_optic_disc_center_y=8.0)
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    (tmp_path / "bscans.raw").write_bytes(np.zeros(768 * 1536, "<f4").tobytes())
    (tmp_path / "slo.raw").write_bytes(np.zeros(256, np.uint8).tobytes())
    md = parse_fixture(tmp_path).metadata
    assert md.bscan_type is BscanType.PERIPAPILLARY
    assert classify_scan(md) is ScanCategory.PERIPAPILLARY
    assert md.acquisition_radius_mm == pytest.approx(1.75)
    assert md.acquisition_radius_px > 0


def test_fixture_meta_uses_table_keys():
    rec = S.peripapillary(h=32, w=64, slo_side=64, disc_radius_px=8).record
    meta = fixture_meta(rec, "x.vol")
    for k in ("eye", "Bscan_type", "Bscan_scale_x", "slo_scale_xy", "acquisition_radius_px",
              "acquisition_optic_disc_center_x"):
        assert k in meta
    assert meta["eye"] == "Right"


def test_metadata_values():
    md = S.macular_line(with_slo_masks=False).record.metadata
    assert md.eye is Eye.RIGHT
    assert md.bscan_scale_x == pytest.approx(11.3)
    assert md.bscan_scale_y == pytest.approx(3.87)
    assert md.bscan_scale_z == 0.0
    assert md.slo_scale_xy == pytest.approx(11.6)
    assert md.retinal_layers_n == 11
    assert md.scale_units == "microns_per_pixel"
    assert md.location == "Macula"
    left = S.macular_line(eye="Left", h=64, w=32, slo_side=0, ilm_row=5.0, with_slo_masks=False)
    assert left.record.metadata.eye is Eye.LEFT


def test_vertical_line_classified():
    ph = S.macular_line(h=64, w=32, slo_side=32, ilm_row=5.0, angle_degrees=90.0, with_slo_masks=False)
    assert ph.record.metadata.bscan_type is BscanType.VLINE


def test_classify_is_pure():
    md = S.macular_volume(3, h=120, w=16, slo_side=32, ilm_row=5.0, choroid_px=10).record.metadata
    assert classify_scan(md) is classify_scan(md) is ScanCategory.MACULAR_VOLUME


def test_layer_pairs_lookup():
    rec = S.macular_line(h=200, w=16, slo_side=0, ilm_row=5.0, with_slo_masks=False).record
    (up, lo), = extract_layer_pairs(rec, "ILM-BM")
    assert up.surface_id == "ILM" and lo.surface_id == "BM"
    assert np.allclose(lo.rows - up.rows, 84)
    (up, lo), = extract_layer_pairs(rec, "ILM_ELM")
    assert lo.surface_id == "ELM"


def test_layer_pairs_missing_surface():
    rng = np.random.default_rng(0)
    seg = S.layer_rows(16, 5.0, surfaces=("ILM", "BM"))
    hdr = S.make_header(1, 120, 16, slo_side=0)
    rec = ScanRecord(hdr, (S._bscan_header((0, 0), (1, 0), S.NUM_SEG),), None,
                     S.render_bscan(120, 16, seg, rng)[None], seg[None])
    assert rec.metadata.retinal_layers_n == 2
    extract_layer_pairs(rec, "ILM-BM")
    with pytest.raises(LayerUnavailable):
        extract_layer_pairs(rec, "RNFL-GCL")


def test_layer_pairs_choroid():
    rec = S.macular_line(h=200, w=16, slo_side=0, ilm_row=5.0, with_slo_masks=False).record
    lower = [np.full(16, 150.0)]
    (up, lo), = extract_layer_pairs(rec, "CHOROID", choroid_lower=lower)
    assert up.surface_id == "BM" and np.all(lo.rows == 150.0)
    with pytest.raises(LayerUnavailable):
        extract_layer_pairs(rec, "CHOROID")


def test_record_arrays_are_read_only():
    rec = S.random_record(np.random.default_rng(2))
    with pytest.raises(ValueError):
        rec.bscans[0, 0, 0] = 1.0
