import hashlib
import json
import math
import os

import numpy as np

from regionblend.fixtures import PALETTE, fixture_set, gen_fixtures, load_fixtures, make_fixture


def _digests(folder):
    out = {}
    for name in sorted(os.listdir(folder)):
        with open(os.path.join(folder, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_same_seed_same_files(tmp_path):
    gen_fixtures(3, tmp_path / "a", count=4, multi=1)
    gen_fixtures(3, tmp_path / "b", count=4, multi=1)
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")
    gen_fixtures(4, tmp_path / "c", count=4, multi=1)
    assert _digests(tmp_path / "a") != _digests(tmp_path / "c")


def test_manifest_lists_every_file(tmp_path):
    paths = gen_fixtures(0, tmp_path, count=5, multi=2)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert sorted(manifest["files"]) == sorted(os.listdir(tmp_path))
    assert sorted(os.path.basename(p) for p in paths) == sorted(os.listdir(tmp_path))
    assert len(manifest["fixtures"]) == 7


def test_disc_mask_matches_rasterizer():
    for index in range(0, 20, 4):  # indices with index // 2 even use the disc
        fx = make_fixture(index, seed=0)
        assert fx.meta["shape"] == "disc"
        cy, cx = fx.meta["center"]
        r = fx.meta["radius"]
        count = sum(1 for y in range(32) for x in range(32)
                    if math.hypot(y + 0.5 - cy, x + 0.5 - cx) <= r)
        assert int(fx.ref_masks[0].sum()) == count


def test_subject_pixels_have_named_colour():
    fx = make_fixture(2, seed=1)
    colour = (np.array(PALETTE[fx.meta["color"]]) / 127.5) - 1
    assert np.allclose(fx.refs[0][fx.ref_masks[0]], colour)


def test_values_on_8bit_grid():
    for fx in fixture_set(0, 6, 1):
        for arr in [fx.scene, *fx.refs]:
            b = (arr + 1) * 127.5
            assert np.allclose(b, np.round(b), atol=1e-9)
            assert arr.min() >= -1 and arr.max() <= 1


def test_round_trip_through_disk(tmp_path):
    gen_fixtures(0, tmp_path, count=3, multi=1)
    back = load_fixtures(tmp_path)
    fresh = fixture_set(0, 3, 1)
    for a, b in zip(back, fresh):
        assert a.name == b.name and a.boxes == b.boxes and a.prompt == b.prompt
        assert np.array_equal(a.scene, b.scene)
        assert all(np.array_equal(x, y) for x, y in zip(a.ref_masks, b.ref_masks))


def test_multi_fixture_boxes_disjoint():
    for fx in fixture_set(0, 0, 4):
        (x0, y0, w0, h0), (x1, y1, w1, h1) = fx.boxes
        assert x0 + w0 <= x1 and len(fx.refs) == 2
