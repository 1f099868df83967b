"""Paste a subject into a box and look at the three masks the editor works with.

R is the whole box, S is the pasted subject and M is the part of the box the subject
does not cover. Only M gets fresh noise; only R is allowed to change.
"""
import os

import numpy as np

from _common import out_dir
from regionblend.fixtures import make_fixture
from regionblend.imageio import save_image, save_mask
from regionblend.region import CollageSpec, make_collage

folder = out_dir("collage")
fx = make_fixture(2)
for fit in ("contain", "none"):
    collage, masks = make_collage(fx.scene, fx.refs[0], fx.ref_masks[0],
                                  CollageSpec(fx.boxes[0], fit))
    masks.check()
    save_image(collage, os.path.join(folder, f"collage_{fit}.png"))
    for name in "RSM":
        save_mask(getattr(masks, name), os.path.join(folder, f"mask_{fit}_{name}.png"))
    print(f"fit={fit:8s} |R|={masks.R.sum():4d} |S|={masks.S.sum():4d} |M|={masks.M.sum():4d}"
          f"  unchanged outside R: {np.array_equal(collage[~masks.R], fx.scene[~masks.R])}")
print(f"box {fx.boxes[0]}, images in {folder}")
