"""Epsilon-prediction training for the toy denoiser, plus a finite-difference gradient check."""
import numpy as np

from .denoiser import Prompt
from .errors import ConfigError
from .fixtures import make_fixture
from .region import CollageSpec, encode, make_collage


def shape_dataset(n, seed=0, size=32):
    """``n`` collage images ``(n, 3, H, W)`` with prompts naming the pasted subject."""
    images, prompts = [], []
    for i in range(n):
        fx = make_fixture(i, seed, size)
        collage, _ = make_collage(fx.scene, fx.refs[0], fx.ref_masks[0], CollageSpec(fx.boxes[0]))
        images.append(encode(collage))
        prompts.append(Prompt.from_text(f"{fx.meta['color']} {fx.meta['shape']}"))
    return np.concatenate(images), prompts


def _alpha_bar(model):
    c = model.config
    return np.cumprod(1.0 - np.linspace(c.beta_start, c.beta_end, c.T_train))


def _noised(model, x0, t, noise):
    ab = _alpha_bar(model)[t][:, None, None, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def noise_loss(model, x0, prompts, t, noise):
    eps, _ = model.forward(_noised(model, x0, t, noise), t, prompts)
    return float(np.mean((eps - noise) ** 2))


def loss_and_grads(model, x0, prompts, t, noise):
    """MSE between predicted and true noise for ``z_t = sqrt(ab) x0 + sqrt(1-ab) noise``."""
    eps, _, cache = model._run(_noised(model, x0, t, noise), t, prompts, None, keep_cache=True)
    diff = eps - noise
    loss = float(np.mean(diff ** 2))
    grads = model._backward(2.0 * diff / diff.size, cache)
    return loss, grads


def train_toy(denoiser, images, prompts, iterations, batch_size=16, lr=1e-3, seed=0, log=None):
    """Adam on the noise-prediction loss. Returns a trained copy; ``denoiser`` is untouched.

    Per-iteration losses are appended to ``log`` when given.
    """
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0 or len(images) != len(prompts):
        raise ConfigError("training needs a non-empty dataset with one prompt per image")
    model = denoiser.copy()
    if iterations <= 0:
        return model
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(p) for k, p in model.params.items()}
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    for it in range(1, iterations + 1):
        idx = rng.integers(0, len(images), batch_size)
        t = rng.integers(0, model.config.T_train, batch_size)
        noise = rng.standard_normal((batch_size,) + images.shape[1:])
        loss, grads = loss_and_grads(model, images[idx], [prompts[i] for i in idx], t, noise)
        if log is not None:
            log.append(loss)
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1 ** it)
            vhat = v[k] / (1 - b2 ** it)
            model.params[k] = model.params[k] - lr * mhat / (np.sqrt(vhat) + eps_adam)
    for k in model.params:
        model.params[k] = model.params[k].astype(np.float32).astype(np.float64)
    return model


def gradient_check(model, names=None, per_tensor=2, batch=2, seed=0, h=1e-5):
    """Compare backprop against central differences on randomly chosen weights.

    Returns a list of ``(name, index, analytic, numeric, rel_error)``.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    size = model.config.image_size
    x0 = rng.uniform(-1, 1, (batch, model.config.in_channels, size, size))
    t = rng.integers(0, model.config.T_train, batch)
    noise = rng.standard_normal(x0.shape)
    prompts = [Prompt((int(rng.integers(model.config.vocab_size)),)) for _ in range(batch)]
    _, grads = loss_and_grads(model, x0, prompts, t, noise)
    work = model.copy()
    names = list(names or model.params)
    rows = []
    for name in names:
        w = work.params[name]
        for _ in range(per_tensor):
            if name == "tok_emb":
                idx = (prompts[0].tokens[0], int(rng.integers(w.shape[1])))
            else:
                idx = tuple(int(rng.integers(s)) for s in w.shape)
            old = w[idx]
            w[idx] = old + h
            lp = noise_loss(work, x0, prompts, t, noise)
            w[idx] = old - h
            lm = noise_loss(work, x0, prompts, t, noise)
            w[idx] = old
            numeric = (lp - lm) / (2 * h)
            analytic = float(grads[name][idx])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rows.append((name, idx, analytic, numeric, abs(analytic - numeric) / denom))
    return rows
