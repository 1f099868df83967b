"""Timestep-gated blending of self-attention features across the three streams.

With ``T`` the largest timestep and ``t`` counting down while denoising::

    tau_a*T < t < tau_b*T   ->  alpha*f_e + beta*f_p + gamma*f_n   ("window")
    t > tau_b*T             ->  (f_e + f_p) / 2                    ("high")
    otherwise               ->  f_e                                ("identity")

Both comparisons are strict, so ``t == tau_b*T`` and ``t == tau_a*T`` take
the identity branch. ``average_noisy_steps=False`` swaps which side of the window
gets the identity and which gets the half blend.
"""
from dataclasses import dataclass, field

import numpy as np

from .denoiser import TapPlan
from .errors import BlendConfigError, ShapeError, TapPlanError

BRANCHES = ("window", "high", "identity")


@dataclass
class BlendConfig:
    alpha: float = 0.25
    beta: float = 0.5
    gamma: float = 0.25
    tau_a: float = 0.5
    tau_b: float = 0.8
    layers: tuple = None  # None selects every decoder self-attention layer
    average_noisy_steps: bool = True

    def __post_init__(self):
        if self.layers is not None:
            self.layers = tuple(self.layers)
        self.validate()

    def validate(self):
        w = (self.alpha, self.beta, self.gamma)
        if min(w) < 0:
            raise BlendConfigError(f"blend weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise BlendConfigError(f"blend weights must sum to 1, got {sum(w)!r}")
        if not 0.0 <= self.tau_a < self.tau_b <= 1.0:
            raise BlendConfigError(
                f"need 0 <= tau_a < tau_b <= 1, got tau_a={self.tau_a}, tau_b={self.tau_b}")

    def select_layers(self, available):
        if self.layers is None:
            return tuple(available)
        unknown = set(self.layers) - set(available)
        if unknown:
            raise BlendConfigError(f"unknown attention layers {sorted(unknown)}")
        return self.layers


@dataclass
class FeatureTap:
    """Features of one decoder layer at one timestep, from each stream, plus the blend."""

    layer_id: str
    t: int
    f_n: np.ndarray
    f_p: np.ndarray
    f_e: np.ndarray
    f_bd: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        shapes = {a.shape for a in (self.f_n, self.f_p, self.f_e) if a is not None}
        if self.f_bd is not None:
            shapes.add(self.f_bd.shape)
        if len(shapes) > 1:
            raise ShapeError(f"feature shapes differ at {self.layer_id}: {sorted(shapes)}")


def blend_branch(t, T_max, cfg):
    if cfg.tau_a * T_max < t < cfg.tau_b * T_max:
        return "window"
    above = t > cfg.tau_b * T_max
    if cfg.average_noisy_steps:
        return "high" if above else "identity"
    return "identity" if above else "high"


def blend(f_e, f_p, f_n, t, T_max, cfg):
    if not f_e.shape == f_p.shape == f_n.shape:
        raise ShapeError(f"cannot blend shapes {f_e.shape}, {f_p.shape}, {f_n.shape}")
    if not 0 <= t <= T_max:
        raise BlendConfigError(f"timestep {t} outside [0, {T_max}]")
    cfg.validate()
    branch = blend_branch(t, T_max, cfg)
    if branch == "window":
        return cfg.alpha * f_e + cfg.beta * f_p + cfg.gamma * f_n
    if branch == "high":
        return 0.5 * (f_e + f_p)
    return f_e


def blend_taps(taps_e, taps_p, taps_n, t, T_max, cfg, layers):
    """Blend recorded stream features for each selected layer into :class:`FeatureTap` s."""
    out = {}
    for layer in layers:
        try:
            f_e, f_p, f_n = taps_e[layer], taps_p[layer], taps_n[layer]
        except KeyError:
            raise TapPlanError(f"layer {layer} was not recorded in every stream") from None
        out[layer] = FeatureTap(layer, t, f_n, f_p, f_e, blend(f_e, f_p, f_n, t, T_max, cfg))
    return out


def run_injected_step(z_e_t, t, t_next, prompt_tg, taps, denoiser, solver):
    """Recompute the edit-stream step with blended features injected.

    ``taps`` maps layer ids to :class:`FeatureTap` (its ``f_bd`` is used) or
    directly to feature arrays. Returns ``(z_next, eps)``.
    """
    feats = {}
    for layer, tap in taps.items():
        f = tap.f_bd if isinstance(tap, FeatureTap) else tap
        if f is None:
            raise TapPlanError(f"no blended feature for layer {layer} at t={t}")
        feats[layer] = f
    eps, _ = denoiser.forward(z_e_t, t, prompt_tg, TapPlan.override(feats, layers=feats))
    return solver.step(z_e_t, eps, t, t_next), eps
