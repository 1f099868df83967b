"""End-to-end region customization and the reconstruction-only path.

:func:`customize` runs, in order:

1. collage the reference subject(s) into the scene and derive ``R``, ``S``, ``M``;
2. encode (identity) and invert the collage under the null and the target prompt;
3. fill the gap mask of the null-prompt terminal latent with seeded noise;
4. denoise three streams in lock step (reconstruction ``f`` / null prompt,
   text ``p`` / target prompt, edit ``e`` / target prompt). Each step records
   decoder attention inputs from all three, blends them, recomputes the edit
   step with the blend injected, then copies the reconstruction stream back
   outside the copy mask;
5. decode the edit stream.
"""
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .blend import BlendConfig, blend_branch, blend_taps, run_injected_step
from .denoiser import DenoiserConfig, Prompt, TapPlan, load_checkpoint, seeded_init
from .errors import ConfigError, NumericalFailure, ShapeError
from .metrics import compare_images
from .region import (CollageSpec, decode, encode, fuse_latent, make_multi_collage,
                     step_latent_copy)
from .schedule import SOLVER_KINDS, Solver, grid_pairs, make_schedule

COPY_MASK_MODES = ("region", "gap")
INJECTION_MODES = ("blend", "self", "none")


@dataclass
class RunConfig:
    """Everything that determines a run. ``seed`` drives the gap noise."""

    seed: int = 0
    T_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    num_steps: int = 50
    solver: str = "dpmpp2m"
    blend: BlendConfig = field(default_factory=BlendConfig)
    boxes: list = field(default_factory=list)
    fit: str = "contain"
    prompt: str = ""
    copy_mask: str = "region"
    injection: str = "blend"
    model_seed: int = 7
    weights: str = None

    def __post_init__(self):
        if isinstance(self.blend, dict):
            self.blend = BlendConfig(**self.blend)
        self.boxes = [tuple(int(v) for v in b) for b in self.boxes]
        self.validate()

    def validate(self):
        if self.solver not in SOLVER_KINDS:
            raise ConfigError(f"solver must be one of {SOLVER_KINDS}, got {self.solver!r}")
        if self.copy_mask not in COPY_MASK_MODES:
            raise ConfigError(f"copy_mask must be one of {COPY_MASK_MODES}")
        if self.injection not in INJECTION_MODES:
            raise ConfigError(f"injection must be one of {INJECTION_MODES}")
        self.blend.validate()
        self.schedule()

    @classmethod
    def from_dict(cls, data):
        """Build from nested or dotted keys (``{"blend": {"alpha": ..}}`` or ``"blend.alpha"``)."""
        data = dict(data)
        blend = dict(data.pop("blend", None) or {})
        for key in [k for k in data if k.startswith("blend.")]:
            blend[key.split(".", 1)[1]] = data.pop(key)
        known = {f.name for f in fields(cls)} - {"blend"}
        unknown = set(data) - known
        bad_blend = set(blend) - {f.name for f in fields(BlendConfig)}
        if unknown or bad_blend:
            raise ConfigError(f"unknown config keys: {sorted(unknown | {'blend.' + k for k in bad_blend})}")
        try:
            return cls(blend=BlendConfig(**blend), **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        d = asdict(self)
        d["boxes"] = [list(b) for b in self.boxes]
        if d["blend"]["layers"] is not None:
            d["blend"]["layers"] = list(d["blend"]["layers"])
        return d

    def schedule(self):
        return make_schedule(self.T_train, self.beta_start, self.beta_end, self.num_steps)

    def target_prompt(self, vocab_size=256):
        return Prompt.from_text(self.prompt, vocab_size)


def load_model(cfg):
    """The denoiser a config names: a checkpoint, or seeded weights."""
    if cfg.weights:
        model = load_checkpoint(cfg.weights)
        mc = model.config
        if (mc.T_train, mc.beta_start, mc.beta_end) != (cfg.T_train, cfg.beta_start, cfg.beta_end):
            raise ConfigError("checkpoint was built for a different noise schedule")
        return model
    return seeded_init(cfg.model_seed, DenoiserConfig(
        seed=cfg.model_seed, T_train=cfg.T_train, beta_start=cfg.beta_start,
        beta_end=cfg.beta_end))


def _check_finite(z, where):
    if not np.all(np.isfinite(z)):
        raise NumericalFailure(where)


def invert_latent(z0, prompt, denoiser, sched, kind, label="invert"):
    solver = Solver(kind, sched)
    z = z0
    for i, (t, t_next) in enumerate(grid_pairs(sched, "invert")):
        eps, _ = denoiser.forward(z, t, prompt)
        z = solver.step(z, eps, t, t_next)
        _check_finite(z, f"{label} step {i} (t={t}->{t_next})")
    return z


def denoise_latent(zT, prompt, denoiser, sched, kind, label="denoise"):
    solver = Solver(kind, sched)
    z = zT
    for i, (t, t_next) in enumerate(grid_pairs(sched, "denoise")):
        eps, _ = denoiser.forward(z, t, prompt)
        z = solver.step(z, eps, t, t_next)
        _check_finite(z, f"{label} step {i} (t={t}->{t_next})")
    return z


def invert(image, cfg, prompt=None, denoiser=None):
    """Terminal latent of ``image`` under ``prompt`` (null by default)."""
    denoiser = denoiser or load_model(cfg)
    return invert_latent(encode(image), prompt or Prompt.null(), denoiser, cfg.schedule(),
                         cfg.solver)


def reconstruct(image, cfg, denoiser=None):
    """Invert then denoise under the null prompt with the configured solver."""
    return reconstruct_batch([image], cfg, denoiser)[0]


def reconstruct_batch(images, cfg, denoiser=None):
    """:func:`reconstruct` for many same-sized images in one batched pass.

    Each sample's result matches the unbatched path bitwise.
    """
    denoiser = denoiser or load_model(cfg)
    sched = cfg.schedule()
    z0 = np.concatenate([encode(im) for im in images])
    null = Prompt.null()
    zT = invert_latent(z0, null, denoiser, sched, cfg.solver)
    z = denoise_latent(zT, null, denoiser, sched, cfg.solver)
    return [decode(z[i:i + 1]) for i in range(len(images))]


def reconstruction_report(image, cfg, denoiser=None):
    out = reconstruct(image, cfg, denoiser)
    return out, compare_images(image, out)


@dataclass
class StreamSet:
    """The three latents of a customization run, always at the same timestep."""

    z_f: np.ndarray
    z_p: np.ndarray
    z_e: np.ndarray
    t: int
    solvers: dict

    def __post_init__(self):
        if not self.z_f.shape == self.z_p.shape == self.z_e.shape:
            raise ShapeError("stream latents must share one shape")

    def check_finite(self, where):
        for name in ("z_f", "z_p", "z_e"):
            _check_finite(getattr(self, name), f"{where}, stream {name[2:]}")


@dataclass
class StepRecord:
    index: int
    t: int
    t_next: int
    branch: str
    seconds: float = 0.0


@dataclass
class CustomizeResult:
    image: np.ndarray
    collage: np.ndarray
    masks: object
    steps: list
    z_T: dict

    @property
    def region(self):
        return self.masks.R


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    return [x]


# RunConfig fields that must agree for jobs to share one lock-step batch.
_SHARED_FIELDS = ("T_train", "beta_start", "beta_end", "num_steps", "solver", "blend",
                  "copy_mask", "injection", "model_seed", "weights")


def _prepare_job(scene, refs, ref_masks, cfg):
    refs, ref_masks = _as_list(refs), _as_list(ref_masks)
    if not cfg.boxes:
        raise ConfigError("no target box given")
    if not len(refs) == len(ref_masks) == len(cfg.boxes):
        raise ConfigError(f"{len(cfg.boxes)} boxes need as many references and masks,"
                          f" got {len(refs)} and {len(ref_masks)}")
    items = [(r, m, CollageSpec(b, cfg.fit)) for r, m, b in zip(refs, ref_masks, cfg.boxes)]
    return make_multi_collage(scene, items)


def customize_detailed(scene, refs, ref_masks, cfg, denoiser=None):
    """Run the full customization and return intermediate products.

    ``refs`` / ``ref_masks`` may be single arrays or lists matching
    ``cfg.boxes`` (one subject per box).
    """
    return customize_batch([(scene, refs, ref_masks, cfg)], denoiser)[0]


def customize_batch(jobs, denoiser=None):
    """Customize several ``(scene, refs, ref_masks, cfg)`` jobs in lock step.

    Jobs may differ in scene, subjects, boxes, prompt, fit and seed; the
    remaining config must match. Each result is bitwise identical to running
    its job alone.
    """
    if not jobs:
        return []
    cfg = jobs[0][3]
    for job in jobs[1:]:
        other = job[3]
        diff = [f for f in _SHARED_FIELDS if getattr(other, f) != getattr(cfg, f)]
        if diff:
            raise ConfigError(f"jobs in one batch must share {diff}")
    denoiser = denoiser or load_model(cfg)
    sched = cfg.schedule()
    vocab = getattr(getattr(denoiser, "config", None), "vocab_size", 256)
    nulls = [Prompt.null()] * len(jobs)
    targets = [job[3].target_prompt(vocab) for job in jobs]
    layers = cfg.blend.select_layers(denoiser.decoder_layers)
    T_max = int(sched.timesteps[-1])

    prepared = [_prepare_job(*job) for job in jobs]
    collages = [c for c, _ in prepared]
    masks = [m for _, m in prepared]
    z0 = np.concatenate([encode(c) for c in collages])
    zT_f = invert_latent(z0, nulls, denoiser, sched, cfg.solver, "invert null")
    zT_p = invert_latent(z0, targets, denoiser, sched, cfg.solver, "invert target")
    zT_e = np.concatenate([fuse_latent(zT_f[i:i + 1], m.M_latent, job[3].seed)
                           for i, (m, job) in enumerate(zip(masks, jobs))])
    copy_mask = np.stack([m.R_latent if cfg.copy_mask == "region" else m.M_latent
                          for m in masks])

    streams = StreamSet(zT_f, zT_p, zT_e, T_max, {k: Solver(cfg.solver, sched) for k in "fpe"})
    record = TapPlan.record()
    steps = []
    for i, (t, t_next) in enumerate(grid_pairs(sched, "denoise")):
        if streams.t != t:
            raise RuntimeError(f"streams at t={streams.t}, expected {t}")
        tic = time.perf_counter()
        eps_n, taps_n = denoiser.forward(streams.z_f, t, nulls, record)
        eps_p, taps_p = denoiser.forward(streams.z_p, t, targets, record)
        eps_e, taps_e = denoiser.forward(streams.z_e, t, targets, record)
        z_f = streams.solvers["f"].step(streams.z_f, eps_n, t, t_next)
        z_p = streams.solvers["p"].step(streams.z_p, eps_p, t, t_next)
        branch = blend_branch(t, T_max, cfg.blend)
        if cfg.injection == "none":
            z_e = streams.solvers["e"].step(streams.z_e, eps_e, t, t_next)
        else:
            if cfg.injection == "self":
                inject = {layer: taps_e[layer] for layer in layers}
            else:
                inject = blend_taps(taps_e, taps_p, taps_n, t, T_max, cfg.blend, layers)
            z_e, _ = run_injected_step(streams.z_e, t, t_next, targets, inject, denoiser,
                                       streams.solvers["e"])
        z_e = step_latent_copy(z_e, z_f, copy_mask)
        streams.z_f, streams.z_p, streams.z_e, streams.t = z_f, z_p, z_e, t_next
        streams.check_finite(f"denoise step {i} (t={t}->{t_next})")
        steps.append(StepRecord(i, t, t_next, branch, time.perf_counter() - tic))

    return [CustomizeResult(decode(streams.z_e[j:j + 1]), collages[j], masks[j], steps,
                            {"f": zT_f[j:j + 1], "p": zT_p[j:j + 1], "e": zT_e[j:j + 1]})
            for j in range(len(jobs))]


def customize(scene, refs, ref_masks, cfg, denoiser=None):
    """Customized image for ``cfg``; see :func:`customize_detailed`."""
    return customize_detailed(scene, refs, ref_masks, cfg, denoiser).image
