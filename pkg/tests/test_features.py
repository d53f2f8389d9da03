import json
import struct

import numpy as np
import pytest

from changecap.encoder import cosine_mask
from changecap.errors import (BadMagicError, DimensionError, PayloadMismatchError,
                              TruncatedPayloadError)
from changecap.features import (CHANGE_TYPES, QUADRANTS, TEMPLATES, ExtractorConfig, FeaturePair,
                                SyntheticConfig, channel_band, extract_pair, gen_synthetic,
                                load_feature_file, load_manifest, quadrant_mask, toy_extract,
                                write_feature_file, write_manifest)
from changecap.tensor import Tensor


def _pair(h=4, w=4, c=32, seed=0):
    rng = np.random.default_rng(seed)
    return FeaturePair(*(rng.standard_normal((2, h, w, c)).astype(np.float32)))


def test_feature_file_round_trip(tmp_path):
    pair = _pair()
    path = tmp_path / "x.cgft"
    write_feature_file(path, pair)
    raw = path.read_bytes()
    assert raw[:4] == b"CGFT" and struct.unpack_from("<IIII", raw, 4) == (1, 4, 4, 32)
    assert len(raw) == 20 + 2 * 4 * 4 * 32 * 4
    back = load_feature_file(path)
    assert back.shape == (4, 4, 32)
    assert back.f1.tobytes() == pair.f1.tobytes() and back.f2.tobytes() == pair.f2.tobytes()


def test_feature_file_errors(tmp_path):
    path = tmp_path / "x.cgft"
    write_feature_file(path, _pair())
    raw = path.read_bytes()
    (tmp_path / "short.cgft").write_bytes(raw[:-10])
    with pytest.raises(TruncatedPayloadError, match="expected 4096.*got 4086"):
        load_feature_file(tmp_path / "short.cgft")
    (tmp_path / "magic.cgft").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        load_feature_file(tmp_path / "magic.cgft")
    (tmp_path / "long.cgft").write_bytes(raw + b"\0" * 8)
    with pytest.raises(PayloadMismatchError):
        load_feature_file(tmp_path / "long.cgft")


def test_manifest_round_trip(tmp_path):
    recs = gen_synthetic(3, 4)
    recs[0].split = "val"
    write_manifest(tmp_path / "manifest.json", recs)
    entries = json.loads((tmp_path / "manifest.json").read_text())
    assert set(entries[0]) == {"id", "feature_file", "captions", "split"}
    back = load_manifest(tmp_path / "manifest.json")
    assert [r.id for r in back] == [r.id for r in recs]
    assert back[0].split == "val" and back[1].captions == recs[1].captions
    assert np.array_equal(back[2].features.f2, recs[2].features.f2)


def test_gen_synthetic_deterministic():
    a, b = gen_synthetic(7, 12), gen_synthetic(7, 12)
    for x, y in zip(a, b):
        assert x.features.f1.tobytes() == y.features.f1.tobytes()
        assert x.features.f2.tobytes() == y.features.f2.tobytes()
        assert x.captions == y.captions and x.change_type == y.change_type


def test_no_change_is_exact_and_signal_is_local():
    recs = gen_synthetic(7, 80)
    assert {r.change_type for r in recs} == set(CHANGE_TYPES)
    for r in recs:
        diff = r.features.f2 - r.features.f1
        if r.change_type == "no-change":
            assert np.array_equal(r.features.f1, r.features.f2)
            continue
        cells = quadrant_mask(r.quadrant, 4, 4)
        band = channel_band(r.change_type, 16)
        assert np.all(diff[~cells] == 0)
        outside = np.ones(16, dtype=bool)
        outside[band] = False
        assert np.all(diff[cells][:, outside] == 0)
        np.testing.assert_allclose(diff[cells][:, band], 2.0, atol=1e-6)


def test_build_houses_north_touches_only_north_cells():
    recs = [r for r in gen_synthetic(7, 200)
            if r.change_type == "build-houses" and r.quadrant == "north"]
    assert recs
    for r in recs:
        changed = np.any(r.features.f2 != r.features.f1, axis=-1)
        assert changed[:2].all() and not changed[2:].any()


def _energy_classifier(pair, h=4, w=4, c=16):
    """Label from the band/region with the most squared difference energy."""
    diff2 = (pair.f2 - pair.f1) ** 2
    if diff2.sum() == 0:
        return "no-change", None
    best = None
    for ct in CHANGE_TYPES[:-1]:
        band = channel_band(ct, c)
        for q in QUADRANTS:
            e = diff2[quadrant_mask(q, h, w)][:, band].sum()
            if best is None or e > best[0]:
                best = (e, ct, q)
    return best[1], best[2]


def test_captions_and_signal_agree():
    recs = gen_synthetic(11, 200)
    for r in recs:
        ct, q = _energy_classifier(r.features)
        assert ct == r.change_type and q == r.quadrant
        family = [t.format(q=q).split() for t in TEMPLATES[ct]]
        assert all(c in family for c in r.captions)
        assert len(r.captions) == 5


def test_captions_per_record_subset():
    recs = gen_synthetic(5, 10, SyntheticConfig(captions_per_record=1))
    assert all(len(r.captions) == 1 for r in recs)


def test_toy_extract():
    cfg = ExtractorConfig(h=2, w=2, channels=8, seed=3)
    feats = toy_extract(np.full((8, 6, 3), 0.7), cfg)
    assert feats.shape == (2, 2, 8)
    assert np.allclose(feats, feats[0, 0])
    img = np.random.default_rng(0).uniform(size=(8, 6, 3))
    pair = extract_pair(img, img.copy(), cfg)
    assert np.array_equal(pair.f1, pair.f2)
    flat = lambda f: Tensor(f.reshape(4, 8))  # noqa: E731
    np.testing.assert_allclose(cosine_mask(flat(pair.f1), flat(pair.f2)).data, 1.0, atol=1e-15)
    again = toy_extract(img, ExtractorConfig(h=2, w=2, channels=8, seed=3))
    assert np.array_equal(again, pair.f1)
    with pytest.raises(DimensionError):
        toy_extract(np.zeros((7, 6, 3)), cfg)


def test_feature_pair_invariants():
    with pytest.raises(DimensionError):
        FeaturePair(np.zeros((2, 2, 4)), np.zeros((2, 2, 5)))
    with pytest.raises(DimensionError):
        FeaturePair(np.zeros((1, 1, 4)), np.zeros((1, 1, 4)))
