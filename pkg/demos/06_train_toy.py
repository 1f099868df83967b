"""A few hundred Adam steps of noise-prediction training on the synthetic shapes,
saved as a checkpoint that the CLI accepts through --weights."""
import os

import numpy as np

from _common import out_dir
from regionblend.denoiser import load_checkpoint, save_checkpoint
from regionblend.pipeline import RunConfig, load_model
from regionblend.training import shape_dataset, train_toy

folder = out_dir("training")
model = load_model(RunConfig())
images, prompts = shape_dataset(64)
losses = []
trained = train_toy(model, images, prompts, 150, batch_size=8, lr=1e-3, log=losses)
for i in range(0, len(losses), 25):
    print(f"iterations {i:3d}-{i + 24:3d}: mean loss {np.mean(losses[i:i + 25]):.4f}")
path = os.path.join(folder, "toy.ckpt")
save_checkpoint(trained, path)
print(f"saved {path}, checksum {load_checkpoint(path).checksum()[:16]}...")
