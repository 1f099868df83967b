"""Invert an image to noise and regenerate it with each solver, then score the round trip."""
import os

from _common import out_dir
from regionblend.fixtures import make_fixture
from regionblend.imageio import save_image
from regionblend.metrics import compare_images
from regionblend.pipeline import RunConfig, load_model, reconstruct

folder = out_dir("reconstruction")
model = load_model(RunConfig())
image = make_fixture(4).scene
save_image(image, os.path.join(folder, "input.png"))
for solver in ("ddim", "dpmpp2m"):
    for n in (10, 50):
        cfg = RunConfig(solver=solver, num_steps=n)
        rec = reconstruct(image, cfg, model)
        save_image(rec, os.path.join(folder, f"{solver}_N{n}.png"))
        r = compare_images(image, rec)
        print(f"{solver:8s} N={n:<3d} MAE {r.mae:.4f}  SSIM {r.ssim:.4f}  PSNR {r.psnr:.1f} dB")
print(f"images in {folder}")
