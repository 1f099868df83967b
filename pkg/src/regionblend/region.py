"""Collage construction, region masks and masked latent operations.

Images are ``(H, W, 3)`` float arrays in ``[-1, 1]``; latents are
``(B, C, H, W)``. The codec is the identity, so a latent mask is the image
mask at the same resolution.
"""
from dataclasses import dataclass

import numpy as np

from .errors import CollageError, ShapeError

FIT_POLICIES = ("contain", "none")


@dataclass(frozen=True)
class CollageSpec:
    """Target box ``(x, y, w, h)`` in scene pixels and how the subject is fitted into it.

    ``fit="contain"`` scales the subject uniformly to the largest size that
    fits the box; ``fit="none"`` pastes it at native size (it must fit).
    """

    box: tuple
    fit: str = "contain"

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(int(v) for v in self.box))
        if len(self.box) != 4:
            raise CollageError(f"box must be (x, y, w, h), got {self.box}")
        if self.fit not in FIT_POLICIES:
            raise CollageError(f"unknown fit policy {self.fit!r}")

    def validate(self, height, width):
        x, y, w, h = self.box
        if w < 1 or h < 1:
            raise CollageError(f"box {self.box} has zero area")
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise CollageError(f"box {self.box} lies outside a {width}x{height} scene")

    def region(self, height, width):
        self.validate(height, width)
        x, y, w, h = self.box
        r = np.zeros((height, width), dtype=bool)
        r[y:y + h, x:x + w] = True
        return r


@dataclass(frozen=True)
class MaskSet:
    """Editable region ``R``, pasted subject ``S`` and gap ``M = R & ~S``."""

    R: np.ndarray
    S: np.ndarray
    M: np.ndarray
    latent_factor: int = 1

    @classmethod
    def from_region_subject(cls, R, S, latent_factor=1):
        R = np.asarray(R, dtype=bool)
        S = np.asarray(S, dtype=bool)
        if R.shape != S.shape:
            raise ShapeError(f"R {R.shape} and S {S.shape} differ in shape")
        if np.any(S & ~R):
            raise CollageError("subject mask extends outside the editable region")
        return cls(R, S, R & ~S, latent_factor)

    @property
    def R_latent(self):
        return downsample_mask(self.R, self.latent_factor)

    @property
    def S_latent(self):
        return downsample_mask(self.S, self.latent_factor)

    @property
    def M_latent(self):
        return downsample_mask(self.M, self.latent_factor)

    def check(self):
        """Raise if the mask algebra does not hold."""
        ok = (not np.any(self.S & ~self.R)
              and np.array_equal(self.M, self.R & ~self.S)
              and not np.any(self.M & self.S)
              and np.array_equal(self.M | self.S, self.R))
        if not ok:
            raise CollageError("mask algebra violated")


def downsample_mask(mask, factor):
    """Area-average ``factor x factor`` blocks and threshold at one half."""
    mask = np.asarray(mask, dtype=bool)
    if factor == 1:
        return mask.copy()
    h, w = mask.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask {mask.shape} not divisible by {factor}")
    area = mask.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return area >= 0.5


def _check_image(img, name):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{name} must be (H, W, 3), got {img.shape}")
    return img


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def _nearest_indices(src, dst):
    return np.minimum(((np.arange(dst) + 0.5) * src / dst).astype(np.int64), src - 1)


def fit_subject(ref, ref_mask, spec):
    """Crop the subject to its tight box and resample it for ``spec``.

    Returns ``(pixels, mask, (top, left))`` where the offset places the
    resampled subject centred inside the target box. Resampling is
    nearest-neighbour so mask values stay binary.
    """
    ref = _check_image(ref, "reference image")
    ref_mask = np.asarray(ref_mask, dtype=bool)
    if ref_mask.shape != ref.shape[:2]:
        raise ShapeError(f"reference mask {ref_mask.shape} does not match image {ref.shape[:2]}")
    if not ref_mask.any():
        raise CollageError("reference subject mask is empty")
    y0, y1, x0, x1 = _bbox(ref_mask)
    crop, cmask = ref[y0:y1, x0:x1], ref_mask[y0:y1, x0:x1]
    ch, cw = cmask.shape
    bx, by, bw, bh = spec.box
    if spec.fit == "contain":
        scale = min(bw / cw, bh / ch)
        nh = min(bh, max(1, int(round(ch * scale))))
        nw = min(bw, max(1, int(round(cw * scale))))
    else:
        if ch > bh or cw > bw:
            raise CollageError(f"subject {cw}x{ch} does not fit box {spec.box} at native size")
        nh, nw = ch, cw
    rows, cols = _nearest_indices(ch, nh), _nearest_indices(cw, nw)
    pixels = crop[rows][:, cols]
    mask = cmask[rows][:, cols]
    return pixels, mask, (by + (bh - nh) // 2, bx + (bw - nw) // 2)


def make_collage(scene, ref, ref_mask, spec):
    """Paste the segmented reference subject into the target box of ``scene``.

    Returns ``(collage, MaskSet)``. Pixels outside the box are copied from
    the scene unchanged.
    """
    return make_multi_collage(scene, [(ref, ref_mask, spec)])


def make_multi_collage(scene, items):
    """Collage several ``(ref, ref_mask, CollageSpec)`` subjects into disjoint boxes.

    The returned masks are unions over all regions.
    """
    scene = _check_image(scene, "scene")
    height, width = scene.shape[:2]
    if not items:
        raise CollageError("at least one region is required")
    collage = scene.copy()
    R = np.zeros((height, width), dtype=bool)
    S = np.zeros((height, width), dtype=bool)
    for ref, ref_mask, spec in items:
        region = spec.region(height, width)
        if np.any(region & R):
            raise CollageError(f"box {spec.box} overlaps another region")
        pixels, mask, (top, left) = fit_subject(ref, ref_mask, spec)
        nh, nw = mask.shape
        window = collage[top:top + nh, left:left + nw]
        window[mask] = pixels[mask]
        S[top:top + nh, left:left + nw] |= mask
        R |= region
    masks = MaskSet.from_region_subject(R, S)
    masks.check()
    return collage, masks


def _latent_mask(mask, z):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None, None]
    elif mask.ndim == 3:
        mask = mask[:, None]
    try:
        return np.broadcast_to(mask, z.shape)
    except ValueError:
        raise ShapeError(f"mask {mask.shape} does not broadcast to latent {z.shape}") from None


def fuse_latent(z, M, noise_seed):
    """Fill the gap mask with fresh Gaussian noise: ``M * eps + (1 - M) * z``.

    ``eps`` is drawn from a PCG64 stream seeded with ``noise_seed`` in C order
    over the full latent shape, so the noise at a location does not depend on
    the mask.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = _latent_mask(M, z)
    eps = np.random.Generator(np.random.PCG64(int(noise_seed))).standard_normal(z.shape)
    return np.where(mask, eps, z)


def step_latent_copy(z_e, z_f, copy_mask):
    """Keep the edit stream inside ``copy_mask`` and the reconstruction stream elsewhere."""
    if z_e.shape != z_f.shape:
        raise ShapeError(f"stream latents differ in shape: {z_e.shape} vs {z_f.shape}")
    return np.where(_latent_mask(copy_mask, z_e), z_e, z_f)


def encode(image):
    """Identity codec: ``(H, W, 3)`` image to a ``(1, 3, H, W)`` latent."""
    return np.ascontiguousarray(_check_image(image, "image").transpose(2, 0, 1)[None])


def decode(z):
    if z.ndim != 4 or z.shape[0] != 1:
        raise ShapeError(f"expected a single latent (1, C, H, W), got {z.shape}")
    return np.ascontiguousarray(z[0].transpose(1, 2, 0))
