"""A small deterministic two-level UNet noise predictor.

Layout (default widths 32/64, 32x32 input)::

    conv_in -> enc0.res (full) -> pool -> enc1.res -> enc1.attn (half)
    -> dec1.res0 -> dec1.attn0 -> dec1.attn1
    -> dec0.proj -> up -> [+ enc0] dec0.res -> norm/silu -> conv_out

Prompts condition the network additively: the mean token embedding is added
to the sinusoidal timestep embedding before the embedding MLP.

The network output ``F`` is a residual on the noise predictor that is optimal
for unit-variance Gaussian data: ``eps = sigma_t * z + alpha_t * F``. This keeps
an untrained, randomly initialised model well behaved under inversion.

Decoder attention blocks (``dec1.attn0``, ``dec1.attn1``) expose their input
features through a :class:`TapPlan`: they can be recorded, or replaced before
the query/key/value projections.

Bitwise reproducibility holds for a fixed numpy build and BLAS thread count,
float64 throughout, default IEEE rounding.
"""
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from .errors import ConfigError, ShapeError, TapPlanError

CHECKPOINT_MAGIC = "regionblend-checkpoint"


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    in_channels: int = 3
    widths: tuple = (32, 64)
    emb_dim: int = 64
    groups: int = 8
    vocab_size: int = 256
    seed: int = 7
    T_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 2:
            raise ConfigError("the toy UNet has exactly two resolution levels")
        if self.image_size % 2:
            raise ConfigError("image_size must be even")
        if not 1 <= self.vocab_size <= 256:
            raise ConfigError("vocab_size must be in [1, 256]")
        for c in self.widths:
            if c % self.groups:
                raise ConfigError(f"width {c} not divisible by groups={self.groups}")


@dataclass(frozen=True)
class Prompt:
    """Token ids into the model vocabulary. The empty prompt is the null prompt."""

    tokens: tuple = ()

    @classmethod
    def null(cls):
        return cls(())

    @classmethod
    def from_text(cls, text, vocab_size=256):
        """Integers are used verbatim; any other word hashes into the vocabulary."""
        ids = []
        for word in str(text).split():
            if word.isdigit():
                ids.append(int(word))
            else:
                ids.append(zlib.crc32(word.lower().encode()) % vocab_size)
        return cls(tuple(ids))

    @property
    def is_null(self):
        return not self.tokens


@dataclass
class TapPlan:
    """How decoder self-attention inputs are handled during one forward.

    ``mode`` is ``"off"``, ``"record"`` or ``"override"``. ``layers`` limits
    which decoder layers are overridden (default: all of them).
    """

    mode: str = "off"
    overrides: dict = field(default_factory=dict)
    layers: tuple = None

    def __post_init__(self):
        if self.mode not in ("off", "record", "override"):
            raise TapPlanError(f"unknown tap mode {self.mode!r}")

    @classmethod
    def record(cls):
        return cls("record")

    @classmethod
    def override(cls, features, layers=None):
        return cls("override", dict(features), None if layers is None else tuple(layers))


@dataclass
class AttentionBlock:
    layer_id: str
    location: str  # "encoder" or "decoder"
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray

    @property
    def d(self):
        return self.w_q.shape[0]


def self_attention(f, block):
    """Apply ``block`` to a feature map (B, C, H, W) or a token matrix (N, d)."""
    if f.ndim == 2:
        out, _ = K.attention(f[None], block.w_q, block.w_k, block.w_v, block.w_out)
        return out[0]
    if f.ndim != 4 or f.shape[1] != block.d:
        raise ShapeError(f"attention block of width {block.d} got features {f.shape}")
    b, c, h, w = f.shape
    tokens = f.reshape(b, c, h * w).transpose(0, 2, 1)
    out, _ = K.attention(tokens, block.w_q, block.w_k, block.w_v, block.w_out)
    return out.transpose(0, 2, 1).reshape(b, c, h, w)


def _resblock_specs(name, cin, cout, emb):
    specs = [
        (f"{name}.norm.gamma", (cin,), "ones"),
        (f"{name}.norm.beta", (cin,), "zeros"),
        (f"{name}.conv.w", (cout, cin, 3, 3), cin * 9),
        (f"{name}.conv.b", (cout,), cin * 9),
        (f"{name}.emb.w", (emb, cout), emb),
        (f"{name}.emb.b", (cout,), emb),
    ]
    if cin != cout:
        specs += [(f"{name}.skip.w", (cout, cin, 1, 1), cin),
                  (f"{name}.skip.b", (cout,), cin)]
    return specs


def _attn_specs(name, d):
    return [(f"{name}.{p}", (d, d), d) for p in ("w_q", "w_k", "w_v", "w_out")]


def parameter_specs(cfg):
    """Ordered ``(name, shape, init)`` triples. The order is the init and checkpoint order.

    ``init`` is ``"ones"``, ``"zeros"`` or the fan-in used for the uniform
    range ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``. The token table has fan-in 1
    (one-hot input).
    """
    c0, c1 = cfg.widths
    e = cfg.emb_dim
    specs = [
        ("tok_emb", (cfg.vocab_size, e), 1),
        ("temb.w1", (e, e), e), ("temb.b1", (e,), e),
        ("temb.w2", (e, e), e), ("temb.b2", (e,), e),
        ("conv_in.w", (c0, cfg.in_channels, 3, 3), cfg.in_channels * 9),
        ("conv_in.b", (c0,), cfg.in_channels * 9),
    ]
    specs += _resblock_specs("enc0.res", c0, c0, e)
    specs += _resblock_specs("enc1.res", c0, c1, e)
    specs += _attn_specs("enc1.attn", c1)
    specs += _resblock_specs("dec1.res0", c1, c1, e)
    specs += _attn_specs("dec1.attn0", c1)
    specs += _attn_specs("dec1.attn1", c1)
    specs += [("dec0.proj.w", (c0, c1, 1, 1), c1), ("dec0.proj.b", (c0,), c1)]
    specs += _resblock_specs("dec0.res", c0, c0, e)
    specs += [
        ("out.norm.gamma", (c0,), "ones"), ("out.norm.beta", (c0,), "zeros"),
        ("conv_out.w", (cfg.in_channels, c0, 3, 3), c0 * 9),
        ("conv_out.b", (cfg.in_channels,), c0 * 9),
    ]
    return specs


DECODER_ATTENTION = ("dec1.attn0", "dec1.attn1")
ENCODER_ATTENTION = ("enc1.attn",)


class Denoiser:
    """Epsilon predictor with tappable decoder self-attention.

    Weights are treated as immutable outside :func:`train_toy`; ``forward`` is
    reentrant.
    """

    def __init__(self, config, params):
        self.config = config
        expected = parameter_specs(config)
        missing = [n for n, _, _ in expected if n not in params]
        if missing:
            raise ConfigError(f"missing parameters: {missing[:3]}...")
        for name, shape, _ in expected:
            if tuple(params[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
        self.params = {n: np.asarray(params[n], dtype=np.float64) for n, _, _ in expected}

    # -- introspection -------------------------------------------------

    @property
    def decoder_layers(self):
        return DECODER_ATTENTION

    def attention_block(self, layer_id):
        p = self.params
        loc = "decoder" if layer_id in DECODER_ATTENTION else "encoder"
        if layer_id not in DECODER_ATTENTION + ENCODER_ATTENTION:
            raise KeyError(layer_id)
        return AttentionBlock(layer_id, loc, p[f"{layer_id}.w_q"], p[f"{layer_id}.w_k"],
                              p[f"{layer_id}.w_v"], p[f"{layer_id}.w_out"])

    def flat_weights(self):
        return np.concatenate([self.params[n].ravel() for n, _, _ in parameter_specs(self.config)])

    def checksum(self):
        return hashlib.sha256(self.flat_weights().astype("<f8").tobytes()).hexdigest()

    def copy(self):
        return Denoiser(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- conditioning ---------------------------------------------------

    def _prompt_vectors(self, prompt, batch):
        if prompt is None or isinstance(prompt, Prompt):
            prompts = [prompt or Prompt.null()] * batch
        else:
            prompts = list(prompt)
            if len(prompts) != batch:
                raise ShapeError(f"{len(prompts)} prompts for a batch of {batch}")
        table = self.params["tok_emb"]
        out = np.zeros((batch, self.config.emb_dim))
        for i, p in enumerate(prompts):
            if p.tokens:
                ids = np.asarray(p.tokens)
                if ids.min() < 0 or ids.max() >= self.config.vocab_size:
                    raise ConfigError(f"token id out of vocabulary: {p.tokens}")
                out[i] = table[ids].mean(axis=0)
        return out, prompts

    def embed(self, prompt):
        return self._prompt_vectors(prompt, 1)[0][0]

    # -- forward ----------------------------------------------------------

    def forward(self, z, t, prompt=None, plan=None):
        """Predict noise for latent ``z`` at timestep ``t``.

        Returns ``(eps, taps)`` where ``taps`` maps decoder layer ids to the
        block input features that were used (empty when the plan is off).
        """
        eps, taps, _ = self._run(z, t, prompt, plan, keep_cache=False)
        return eps, taps

    def _run(self, z, t, prompt, plan, keep_cache):
        cfg = self.config
        p = self.params
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 4 or z.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ShapeError(
                f"latent must be (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}),"
                f" got {z.shape}")
        plan = plan or TapPlan()
        bsz = z.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (bsz,))
        cache = {} if keep_cache else None
        taps = {}

        pvec, prompts = self._prompt_vectors(prompt, bsz)
        e0 = K.timestep_embedding(t_arr, cfg.emb_dim) + pvec
        e1 = K.linear(e0, p["temb.w1"], p["temb.b1"])
        e2 = K.silu(e1)
        emb = K.linear(e2, p["temb.w2"], p["temb.b2"])
        emb_act = K.silu(emb)
        if keep_cache:
            cache["emb"] = (prompts, e0, e1, e2, emb)

        h, flat = K.conv2d(z, p["conv_in.w"], p["conv_in.b"])
        if keep_cache:
            cache["conv_in"] = (flat, z.shape)
        skip0 = self._res("enc0.res", h, emb_act, cache)
        h = self._res("enc1.res", K.avg_pool2(skip0), emb_act, cache)
        h = self._attn("enc1.attn", h, cache, plan=None, taps=None)
        h = self._res("dec1.res0", h, emb_act, cache)
        h = self._attn("dec1.attn0", h, cache, plan, taps)
        h = self._attn("dec1.attn1", h, cache, plan, taps)
        dec_shape = h.shape
        hp, flat_p = K.conv2d(h, p["dec0.proj.w"], p["dec0.proj.b"])
        h = self._res("dec0.res", K.upsample2(hp) + skip0, emb_act, cache)
        hn, ncache = K.group_norm(h, p["out.norm.gamma"], p["out.norm.beta"], cfg.groups)
        ha = K.silu(hn)
        resid, flat = K.conv2d(ha, p["conv_out.w"], p["conv_out.b"])
        a_t, s_t = self._alpha_sigma(t_arr)
        eps = s_t * z + a_t * resid
        if keep_cache:
            cache["dec0.proj"] = (flat_p, dec_shape)
            cache["out"] = (hn, ncache, ha, flat, a_t)
        return eps, taps, cache

    def _alpha_sigma(self, t_arr):
        ab = self._alpha_bar[np.asarray(t_arr, dtype=np.int64)]
        return np.sqrt(ab)[:, None, None, None], np.sqrt(1.0 - ab)[:, None, None, None]

    @property
    def _alpha_bar(self):
        cached = self.__dict__.get("_ab")
        if cached is None:
            c = self.config
            cached = np.cumprod(1.0 - np.linspace(c.beta_start, c.beta_end, c.T_train))
            self._ab = cached
        return cached

    def _res(self, name, x, emb_act, cache):
        p = self.params
        n, nc = K.group_norm(x, p[f"{name}.norm.gamma"], p[f"{name}.norm.beta"],
                             self.config.groups)
        a = K.silu(n)
        h, flat = K.conv2d(a, p[f"{name}.conv.w"], p[f"{name}.conv.b"])
        h = h + K.linear(emb_act, p[f"{name}.emb.w"], p[f"{name}.emb.b"])[:, :, None, None]
        if f"{name}.skip.w" in p:
            s, flat_s = K.conv2d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"])
        else:
            s, flat_s = x, None
        if cache is not None:
            cache[name] = (x.shape, n, nc, flat, flat_s, emb_act)
        return h + s

    def _attn(self, name, x, cache, plan, taps):
        p = self.params
        if plan is not None and plan.mode != "off":
            if plan.mode == "record":
                taps[name] = x
            elif plan.layers is None or name in plan.layers:
                if name not in plan.overrides:
                    raise TapPlanError(f"no override features for layer {name}")
                feat = np.asarray(plan.overrides[name], dtype=np.float64)
                if feat.shape != x.shape:
                    raise TapPlanError(
                        f"override for {name} has shape {feat.shape}, expected {x.shape}")
                x = feat
                taps[name] = x
        b, c, hh, ww = x.shape
        tokens = x.reshape(b, c, hh * ww).transpose(0, 2, 1)
        out, acache = K.attention(tokens, p[f"{name}.w_q"], p[f"{name}.w_k"],
                                  p[f"{name}.w_v"], p[f"{name}.w_out"])
        if cache is not None:
            cache[name] = (acache, x.shape)
        return out.transpose(0, 2, 1).reshape(b, c, hh, ww)

    # -- backward ---------------------------------------------------------

    def _backward(self, deps, cache):
        """Gradients of ``sum(deps * eps)`` w.r.t. every parameter (no tap overrides)."""
        p = self.params
        c0, c1 = self.config.widths
        grads = {n: np.zeros_like(v) for n, v in p.items()}
        demb_act = np.zeros((deps.shape[0], self.config.emb_dim))

        hn, ncache, ha, flat, a_t = cache["out"]
        dha, grads["conv_out.w"], grads["conv_out.b"] = K.conv2d_backward(
            a_t * deps, flat, ha.shape, p["conv_out.w"])
        dhn = K.silu_backward(dha, hn)
        dh, grads["out.norm.gamma"], grads["out.norm.beta"] = K.group_norm_backward(
            dhn, ncache, p["out.norm.gamma"])

        dsum = self._res_back("dec0.res", dh, cache, grads, demb_act)
        flat_p, dec_shape = cache["dec0.proj"]
        dh, grads["dec0.proj.w"], grads["dec0.proj.b"] = K.conv2d_backward(
            K.upsample2_backward(dsum), flat_p, dec_shape, p["dec0.proj.w"])
        dskip0 = dsum
        dh = self._attn_back("dec1.attn1", dh, cache, grads)
        dh = self._attn_back("dec1.attn0", dh, cache, grads)
        dh = self._res_back("dec1.res0", dh, cache, grads, demb_act)
        dh = self._attn_back("enc1.attn", dh, cache, grads)
        dpooled = self._res_back("enc1.res", dh, cache, grads, demb_act)
        dskip0 = dskip0 + K.avg_pool2_backward(dpooled)
        dh = self._res_back("enc0.res", dskip0, cache, grads, demb_act)
        flat, zshape = cache["conv_in"]
        _, grads["conv_in.w"], grads["conv_in.b"] = K.conv2d_backward(
            dh, flat, zshape, p["conv_in.w"])

        prompts, e0, e1, e2, emb = cache["emb"]
        demb = K.silu_backward(demb_act, emb)
        de2, grads["temb.w2"], grads["temb.b2"] = K.linear_backward(demb, e2, p["temb.w2"])
        de1 = K.silu_backward(de2, e1)
        de0, grads["temb.w1"], grads["temb.b1"] = K.linear_backward(de1, e0, p["temb.w1"])
        for i, pr in enumerate(prompts):
            if pr.tokens:
                np.add.at(grads["tok_emb"], np.asarray(pr.tokens), de0[i] / len(pr.tokens))
        return grads

    def _res_back(self, name, dout, cache, grads, demb_act):
        p = self.params
        xshape, n, nc, flat, flat_s, emb_act = cache[name]
        if flat_s is not None:
            dx, grads[f"{name}.skip.w"], grads[f"{name}.skip.b"] = K.conv2d_backward(
                dout, flat_s, xshape, p[f"{name}.skip.w"])
        else:
            dx = dout.copy()
        dea, grads[f"{name}.emb.w"], grads[f"{name}.emb.b"] = K.linear_backward(
            dout.sum(axis=(2, 3)), emb_act, p[f"{name}.emb.w"])
        demb_act += dea
        da, grads[f"{name}.conv.w"], grads[f"{name}.conv.b"] = K.conv2d_backward(
            dout, flat, n.shape[:1] + (p[f"{name}.conv.w"].shape[1],) + n.shape[2:],
            p[f"{name}.conv.w"])
        dn = K.silu_backward(da, n)
        dxn, grads[f"{name}.norm.gamma"], grads[f"{name}.norm.beta"] = K.group_norm_backward(
            dn, nc, p[f"{name}.norm.gamma"])
        return dx + dxn

    def _attn_back(self, name, dout, cache, grads):
        p = self.params
        acache, shape = cache[name]
        b, c, h, w = shape
        dtok = dout.reshape(b, c, h * w).transpose(0, 2, 1)
        dx, *dws = K.attention_backward(dtok, acache, p[f"{name}.w_q"], p[f"{name}.w_k"],
                                        p[f"{name}.w_v"], p[f"{name}.w_out"])
        for suffix, dw in zip(("w_q", "w_k", "w_v", "w_out"), dws):
            grads[f"{name}.{suffix}"] = dw
        return dx.transpose(0, 2, 1).reshape(shape)


def seeded_init(seed=7, config=None):
    """Build a :class:`Denoiser` from a PCG64 stream.

    Parameters are drawn in :func:`parameter_specs` order, each as one
    ``uniform(-bound, bound)`` block, then rounded to float32 so checkpoints
    round-trip exactly.
    """
    config = config or DenoiserConfig()
    if config.seed != seed:
        config = DenoiserConfig(**{**asdict(config), "seed": int(seed)})
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    params = {}
    for name, shape, init in parameter_specs(config):
        if init == "ones":
            params[name] = np.ones(shape)
        elif init == "zeros":
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(init)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(
                np.float64)
    return Denoiser(config, params)


def save_checkpoint(model, path):
    """Write a one-line JSON header, then every tensor as little-endian float32."""
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "dtype": "<f4",
        "config": asdict(model.config),
        "tensors": [{"name": n, "shape": list(s)} for n, s, _ in parameter_specs(model.config)],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, _, _ in parameter_specs(model.config):
            fh.write(model.params[name].astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a regionblend checkpoint") from exc
        if header.get("format") != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a regionblend checkpoint")
        config = DenoiserConfig(**header["config"])
        params = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ConfigError(f"{path}: truncated at tensor {entry['name']}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    return Denoiser(config, params)
