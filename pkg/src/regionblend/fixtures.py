"""Deterministic synthetic scenes, subjects, masks and prompts.

Every pixel value lies on the 8-bit grid, so fixtures survive a PNG round trip
exactly.
"""
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .denoiser import Prompt
from .imageio import from_bytes, load_image, load_mask, save_image, save_mask

PALETTE = {
    "red": (220, 40, 40), "green": (40, 200, 60), "blue": (40, 70, 220),
    "yellow": (230, 210, 40), "purple": (150, 50, 190), "orange": (240, 140, 30),
    "cyan": (40, 200, 210), "white": (245, 245, 245),
}
SHAPES = ("disc", "square")


@dataclass
class Fixture:
    name: str
    scene: np.ndarray
    refs: list
    ref_masks: list
    boxes: list
    prompt: str
    meta: dict = field(default_factory=dict)


def disc_mask(size, cy, cx, radius):
    """Pixels whose centres lie within ``radius`` of ``(cy, cx)``."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def square_mask(size, top, left, side):
    m = np.zeros((size, size), dtype=bool)
    m[top:top + side, left:left + side] = True
    return m


def _color(name):
    return np.array(PALETTE[name], dtype=np.float64)


def gradient_scene(rng, size):
    c0 = rng.integers(0, 256, 3).astype(np.float64)
    c1 = rng.integers(0, 256, 3).astype(np.float64)
    ramp = np.linspace(0.0, 1.0, size)
    w = ramp[None, :] if rng.integers(2) else ramp[:, None]
    w = np.broadcast_to(w, (size, size))[..., None]
    return from_bytes(np.round(c0 * (1 - w) + c1 * w))


def checker_scene(rng, size):
    cell = int(rng.choice([4, 8]))
    c0 = rng.integers(0, 256, 3)
    c1 = rng.integers(0, 256, 3)
    yy, xx = np.mgrid[0:size, 0:size] // cell
    board = ((yy + xx) % 2).astype(bool)[..., None]
    return from_bytes(np.where(board, c0, c1))


def subject_image(rng, size, shape, color):
    """Reference image with one coloured shape on a flat random background."""
    bg = rng.integers(0, 256, 3)
    img = np.broadcast_to(bg, (size, size, 3)).astype(np.float64).copy()
    if shape == "disc":
        radius = int(rng.integers(4, size // 3))
        c = size / 2 + rng.integers(-2, 3, 2)
        mask = disc_mask(size, c[0], c[1], radius)
        meta = {"shape": "disc", "center": [float(c[0]), float(c[1])], "radius": radius}
    else:
        side = int(rng.integers(6, size // 2))
        top, left = (int(v) for v in rng.integers(0, size - side, 2))
        mask = square_mask(size, top, left, side)
        meta = {"shape": "square", "top": top, "left": left, "side": side}
    img[mask] = _color(color)
    return from_bytes(img), mask, meta


def random_box(rng, size, min_side=None, max_side=None):
    min_side = size // 4 if min_side is None else min_side
    max_side = size * 5 // 8 if max_side is None else max_side
    w = int(rng.integers(min_side, max_side + 1))
    h = int(rng.integers(min_side, max_side + 1))
    x = int(rng.integers(0, size - w + 1))
    y = int(rng.integers(0, size - h + 1))
    return (x, y, w, h)


def make_fixture(index, seed=0, size=32):
    """Single-region fixture ``index`` of the set generated from ``seed``."""
    rng = np.random.Generator(np.random.PCG64([int(seed), int(index)]))
    scene = gradient_scene(rng, size) if index % 2 == 0 else checker_scene(rng, size)
    shape = SHAPES[(index // 2) % 2]
    color = list(PALETTE)[int(rng.integers(len(PALETTE)))]
    ref, mask, meta = subject_image(rng, size, shape, color)
    box = random_box(rng, size)
    prompt = f"{list(PALETTE)[int(rng.integers(len(PALETTE)))]} {shape}"
    meta.update(color=color)
    return Fixture(f"fixture_{index:02d}", scene, [ref], [mask], [box], prompt, meta)


def make_multi_fixture(index, seed=0, size=32):
    """Two subjects into the left and right halves of one scene."""
    rng = np.random.Generator(np.random.PCG64([int(seed), 1000 + int(index)]))
    scene = checker_scene(rng, size) if index % 2 else gradient_scene(rng, size)
    refs, masks, metas = [], [], []
    for shape in SHAPES:
        color = list(PALETTE)[int(rng.integers(len(PALETTE)))]
        ref, mask, meta = subject_image(rng, size, shape, color)
        meta.update(color=color)
        refs.append(ref)
        masks.append(mask)
        metas.append(meta)
    half = size // 2
    boxes = []
    for x0 in (0, half):
        w = int(rng.integers(8, half - 1))
        h = int(rng.integers(8, size - 8))
        boxes.append((x0 + int(rng.integers(0, half - w + 1)), int(rng.integers(0, size - h + 1)),
                      w, h))
    return Fixture(f"multi_{index:02d}", scene, refs, masks, boxes, "green square",
                   {"subjects": metas})


def fixture_set(seed=0, count=20, multi=2, size=32):
    return ([make_fixture(i, seed, size) for i in range(count)]
            + [make_multi_fixture(i, seed, size) for i in range(multi)])


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def gen_fixtures(seed, out_dir, count=20, multi=2, size=32):
    """Write a fixture set and ``manifest.json`` into ``out_dir``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    entries, written = [], []
    for fx in fixture_set(seed, count, multi, size):
        files = {"scene": f"{fx.name}_scene.png", "refs": [], "masks": [],
                 "prompt": f"{fx.name}_prompt.txt"}
        save_image(fx.scene, os.path.join(out_dir, files["scene"]))
        for k, (ref, mask) in enumerate(zip(fx.refs, fx.ref_masks)):
            rname, mname = f"{fx.name}_ref{k}.png", f"{fx.name}_mask{k}.png"
            save_image(ref, os.path.join(out_dir, rname))
            save_mask(mask, os.path.join(out_dir, mname))
            files["refs"].append(rname)
            files["masks"].append(mname)
        with open(os.path.join(out_dir, files["prompt"]), "w") as fh:
            fh.write(fx.prompt + "\n")
        names = [files["scene"], *files["refs"], *files["masks"], files["prompt"]]
        written += names
        entries.append({
            "name": fx.name, "files": files, "boxes": [list(b) for b in fx.boxes],
            "prompt": fx.prompt, "tokens": list(Prompt.from_text(fx.prompt).tokens),
            "meta": fx.meta,
            "sha256": {n: _sha256(os.path.join(out_dir, n)) for n in names},
        })
    manifest = {"seed": int(seed), "size": size, "fixtures": entries,
                "files": sorted(written) + ["manifest.json"]}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [os.path.join(out_dir, n) for n in sorted(written)] + [path]


def load_fixtures(out_dir):
    """Read back a directory written by :func:`gen_fixtures`."""
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = []
    for e in manifest["fixtures"]:
        f = e["files"]
        out.append(Fixture(
            e["name"], load_image(os.path.join(out_dir, f["scene"])),
            [load_image(os.path.join(out_dir, r)) for r in f["refs"]],
            [load_mask(os.path.join(out_dir, m)) for m in f["masks"]],
            [tuple(b) for b in e["boxes"]], e["prompt"], e["meta"]))
    return out
