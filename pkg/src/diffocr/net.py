"""The learnable denoiser p(y_0 | y_t, image).

A patch-based transformer encoder turns the image into visual tokens; a
bidirectional parallel decoder attends over the corrupted text (never to
MASK keys, diagonal excepted), cross-attends over all visual tokens, and
emits per-position logits over characters + EOS. Timestep information
enters through sinusoidally embedded t_s = t * 8000 / T, injected at every
decoder normalization site via adaptive layer normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .rng import RngStream
from .vocab import DEFAULT_CHARSET, Vocab, build_vocab

TIMESTEP_SCALE_MAX = 8000.0  # t_s = t * 8000 / T


class DegenerateSampleError(ValueError):
    """Raised when a gradient-check sample has (near-)zero loss."""


@dataclass(frozen=True)
class ModelConfig:
    charset: str = DEFAULT_CHARSET
    max_len: int = 25          # L
    timesteps: int = 25        # T
    image_h: int = 32
    image_w: int = 128
    patch_w: int = 8
    patch_h: int = 4
    d_model: int = 128
    d_mlp: int = 512
    n_heads: int = 4
    n_encoder_layers: int = 4
    n_decoder_layers: int = 1
    timestep_conditioning: bool = True

    def __post_init__(self):
        if self.image_h % self.patch_h or self.image_w % self.patch_w:
            raise ValueError("image dimensions must be divisible by patch dimensions")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def n_patches(self) -> int:
        return (self.image_h // self.patch_h) * (self.image_w // self.patch_w)

    @property
    def patch_dim(self) -> int:
        return self.patch_h * self.patch_w

    def vocab(self) -> Vocab:
        return build_vocab(self.charset)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(repr=False)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def n_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: Tensor(t.data.astype(dtype), requires_grad=True)
                     for k, t in self.tensors.items()},
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = RngStream(seed).child("init")
    vocab = config.vocab()
    D, M = config.d_model, config.d_mlp
    tensors: dict[str, Tensor] = {}

    def param(name, shape, kind="normal"):
        if kind == "normal":
            data = rng.normal(shape, scale=0.02)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "adaln_scale":
            # last sinusoidal component is ~1 for every t_s, so this row makes
            # the initial modulation an identity scale
            data = np.zeros(shape)
            data[-1, :] = 1.0
        else:
            raise ValueError(kind)
        tensors[name] = Tensor(np.ascontiguousarray(data, dtype=dtype), requires_grad=True)

    def attention(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            param(f"{prefix}.{w}", (D, D))
        # no key bias: a constant key offset shifts each query's scores
        # uniformly, which softmax cancels exactly
        for b in ("bq", "bv", "bo"):
            param(f"{prefix}.{b}", (D,), "zeros")

    def adaln_site(prefix):
        param(f"{prefix}.w1", (D, D), "adaln_scale")
        param(f"{prefix}.w2", (D, D), "zeros")

    param("patch_embed.w", (config.patch_dim, D))
    param("patch_embed.b", (D,), "zeros")
    param("enc.pos", (config.n_patches, D))
    for i in range(config.n_encoder_layers):
        param(f"enc.{i}.ln1.g", (D,), "ones")
        param(f"enc.{i}.ln1.b", (D,), "zeros")
        attention(f"enc.{i}.attn")
        param(f"enc.{i}.ln2.g", (D,), "ones")
        param(f"enc.{i}.ln2.b", (D,), "zeros")
        param(f"enc.{i}.mlp.w1", (D, M))
        param(f"enc.{i}.mlp.b1", (M,), "zeros")
        param(f"enc.{i}.mlp.w2", (M, D))
        param(f"enc.{i}.mlp.b2", (D,), "zeros")
    param("enc.lnf.g", (D,), "ones")
    param("enc.lnf.b", (D,), "zeros")

    param("dec.tok_emb", (vocab.total_internal, D))
    param("dec.pos", (config.max_len, D))
    for i in range(config.n_decoder_layers):
        adaln_site(f"dec.{i}.ada1")
        attention(f"dec.{i}.self")
        adaln_site(f"dec.{i}.ada2")
        attention(f"dec.{i}.cross")
        adaln_site(f"dec.{i}.ada3")
        param(f"dec.{i}.ffn.w1", (D, M))
        param(f"dec.{i}.ffn.b1", (M,), "zeros")
        param(f"dec.{i}.ffn.w2", (M, D))
        param(f"dec.{i}.ffn.b2", (D,), "zeros")
    adaln_site("dec.adaf")
    param("head.w", (D, vocab.n_classes))
    param("head.b", (vocab.n_classes,), "zeros")

    return ModelParams(config=config, tensors=tensors)


# -- stateless building blocks -------------------------------------------------


def patchify(image: np.ndarray, patch_w: int, patch_h: int) -> np.ndarray:
    """Split (H, W) or (B, H, W) grayscale pixels into row-major flat patches."""
    image = np.asarray(image)
    single = image.ndim == 2
    if single:
        image = image[None]
    B, H, W = image.shape
    if H % patch_h or W % patch_w:
        raise ValueError(f"image {H}x{W} not divisible by patch {patch_h}x{patch_w}")
    gh, gw = H // patch_h, W // patch_w
    patches = (image.reshape(B, gh, patch_h, gw, patch_w)
                    .transpose(0, 1, 3, 2, 4)
                    .reshape(B, gh * gw, patch_h * patch_w))
    return patches[0] if single else patches


def timestep_embedding(t, timesteps: int, d_model: int) -> np.ndarray:
    """Sinusoidal embedding of the rescaled timestep t_s = t * 8000 / T."""
    t = np.asarray(t, dtype=np.float64)
    ts = t * (TIMESTEP_SCALE_MAX / timesteps)
    i = np.arange(d_model)
    ang = ts[..., None] / (10000.0 ** (2.0 * i / d_model))
    return np.where(i < d_model // 2, np.sin(ang), np.cos(ang))


def adaln(h: Tensor, t_emb, w1: Tensor, w2: Tensor) -> Tensor:
    """LayerNorm(h) scaled by W1·PE(t_s) and shifted by W2·PE(t_s).

    h: (L, D) or (B, L, D); t_emb: (D,) or (B, D) matching.
    """
    if not isinstance(t_emb, Tensor):
        t_emb = Tensor(np.asarray(t_emb, dtype=h.dtype))
    pe = ag.reshape(t_emb, (1, -1)) if t_emb.ndim == 1 else t_emb
    scale = ag.matmul(pe, w1)
    shift = ag.matmul(pe, w2)
    if h.ndim == 3:
        n, D = scale.shape
        scale = ag.reshape(scale, (n, 1, D))
        shift = ag.reshape(shift, (n, 1, D))
    return ag.add(ag.mul(ag.layernorm(h), scale), shift)


def _affine_ln(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.mul(ag.layernorm(x), g), b)


def _mha(params: ModelParams, prefix: str, xq: Tensor, xkv: Tensor,
         B: int, Lq: int, Lk: int, allowed: np.ndarray | None) -> Tensor:
    """Multi-head attention over flattened (B*L, D) activations."""
    cfg = params.config
    H, D = cfg.n_heads, cfg.d_model
    dh = D // H
    p = params.tensors

    def split(x2, L):
        return ag.transpose(ag.reshape(x2, (B, L, H, dh)), (0, 2, 1, 3))

    q = split(ag.linear(xq, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), Lq)
    k = split(ag.linear(xkv, p[f"{prefix}.wk"]), Lk)
    v = split(ag.linear(xkv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), Lk)
    scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ag.masked_softmax(scores, allowed)
    out = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B * Lq, D))
    return ag.linear(out, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return ag.linear(ag.gelu(ag.linear(x, w1, b1)), w2, b2)


# -- encoder -------------------------------------------------------------------


def encode_image(params: ModelParams, image: np.ndarray) -> Tensor:
    """Visual features of one (H, W) image or a (B, H, W) batch.

    Returns an (N_p, D) or (B, N_p, D) tensor; wrap in `no_grad()` for
    inference to skip tape construction.
    """
    cfg = params.config
    p = params.tensors
    image = np.asarray(image)
    single = image.ndim == 2
    patches = patchify(image[None] if single else image, cfg.patch_w, cfg.patch_h)
    B, Np, _ = patches.shape
    D = cfg.d_model

    x = ag.linear(Tensor(patches.astype(params.dtype)).reshape(B * Np, cfg.patch_dim),
                  p["patch_embed.w"], p["patch_embed.b"])
    x = ag.reshape(ag.add(ag.reshape(x, (B, Np, D)), p["enc.pos"]), (B * Np, D))
    for i in range(cfg.n_encoder_layers):
        pre = _affine_ln(x, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
        x = ag.add(x, _mha(params, f"enc.{i}.attn", pre, pre, B, Np, Np, None))
        pre = _affine_ln(x, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
        x = ag.add(x, _ffn(pre, p[f"enc.{i}.mlp.w1"], p[f"enc.{i}.mlp.b1"],
                           p[f"enc.{i}.mlp.w2"], p[f"enc.{i}.mlp.b2"]))
    x = _affine_ln(x, p["enc.lnf.g"], p["enc.lnf.b"])
    z = ag.reshape(x, (B, Np, D))
    return ag.reshape(z, (Np, D)) if single else z


# -- decoder -------------------------------------------------------------------


def self_attention_mask(tokens: np.ndarray, mask_id: int) -> np.ndarray:
    """(B, 1, L, L) boolean mask: keys at MASK positions are excluded for
    every query, except that each position may always attend to itself."""
    tokens = np.asarray(tokens)
    B, L = tokens.shape
    key_ok = (tokens != mask_id)[:, None, None, :]
    return key_ok | np.eye(L, dtype=bool)[None, None]


def decoder_forward(params: ModelParams, tokens: np.ndarray, z, t,
                    emb: Tensor | None = None, return_ffn: bool = False):
    """Logits over the N+1 output classes for each of the L positions.

    tokens: (L,) or (B, L) int ids possibly containing MASK; z: visual
    features from `encode_image`; t: scalar or (B,) diffusion timestep.
    `emb` overrides the computed token+position embedding (test hook);
    `return_ffn` additionally returns the last decoder layer's FFN output.
    """
    cfg = params.config
    p = params.tensors
    vocab = cfg.vocab()
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
    B, L = tokens.shape
    D = cfg.d_model
    if tokens.min() < 0 or tokens.max() >= vocab.total_internal:
        raise ValueError("token id outside vocabulary")

    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=params.dtype))
    z3 = ag.reshape(z, (1,) + z.shape) if z.ndim == 2 else z
    Np = z3.shape[1]
    if z3.shape[0] != B:
        raise ValueError("visual-feature batch does not match token batch")
    zkv = ag.reshape(z3, (B * Np, D))

    if cfg.timestep_conditioning:
        t_arr = np.broadcast_to(np.asarray(t), (B,))
    else:
        t_arr = np.zeros(B)
    pe = Tensor(timestep_embedding(t_arr, cfg.timesteps, D).astype(params.dtype))

    if emb is None:
        emb = ag.add(ag.embedding(p["dec.tok_emb"], tokens), p["dec.pos"])
    allowed = self_attention_mask(tokens, vocab.mask_id)

    h = ag.reshape(emb, (B * L, D))
    ffn_out = None
    for i in range(cfg.n_decoder_layers):
        a = ag.reshape(adaln(ag.reshape(h, (B, L, D)), pe,
                             p[f"dec.{i}.ada1.w1"], p[f"dec.{i}.ada1.w2"]), (B * L, D))
        h = ag.add(h, _mha(params, f"dec.{i}.self", a, a, B, L, L, allowed))
        a = ag.reshape(adaln(ag.reshape(h, (B, L, D)), pe,
                             p[f"dec.{i}.ada2.w1"], p[f"dec.{i}.ada2.w2"]), (B * L, D))
        h = ag.add(h, _mha(params, f"dec.{i}.cross", a, zkv, B, L, Np, None))
        a = ag.reshape(adaln(ag.reshape(h, (B, L, D)), pe,
                             p[f"dec.{i}.ada3.w1"], p[f"dec.{i}.ada3.w2"]), (B * L, D))
        ffn_out = _ffn(a, p[f"dec.{i}.ffn.w1"], p[f"dec.{i}.ffn.b1"],
                       p[f"dec.{i}.ffn.w2"], p[f"dec.{i}.ffn.b2"])
        h = ag.add(h, ffn_out)
    h = ag.reshape(adaln(ag.reshape(h, (B, L, D)), pe,
                         p["dec.adaf.w1"], p["dec.adaf.w2"]), (B * L, D))
    logits = ag.linear(h, p["head.w"], p["head.b"])
    shape = (L, vocab.n_classes) if single else (B, L, vocab.n_classes)
    logits = ag.reshape(logits, shape)
    if return_ffn:
        ffn_shape = (L, D) if single else (B, L, D)
        return logits, ag.reshape(ffn_out, ffn_shape)
    return logits


# -- gradient check ------------------------------------------------------------


def gradient_check(params: ModelParams, sample: dict, n_coords: int = 200,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over a random subsample of parameter coordinates.

    `sample` needs "image" (H, W), "y0" (L,) clean ids, "yt" (L,) corrupted
    ids and "t". Requires a tiny float64 configuration.
    """
    cfg = params.config
    if params.dtype != np.float64:
        raise ValueError("gradient_check requires float64 parameters")
    if cfg.d_model > 16 or cfg.max_len > 6 or len(cfg.charset) > 5:
        raise ValueError("gradient_check requires a tiny configuration (D<=16, L<=6, N<=5)")
    image, y0, yt, t = sample["image"], sample["y0"], sample["yt"], sample["t"]
    vocab = cfg.vocab()

    def loss_value() -> float:
        with no_grad():
            z = encode_image(params, image[None])
            logits = decoder_forward(params, yt[None], z, np.array([t]))
            loss = ag.cross_entropy_mean(
                ag.reshape(logits, (cfg.max_len, vocab.n_classes)), y0)
        return loss.item()

    z = encode_image(params, image[None])
    logits = decoder_forward(params, yt[None], z, np.array([t]))
    loss = ag.cross_entropy_mean(ag.reshape(logits, (cfg.max_len, vocab.n_classes)), y0)
    if not np.isfinite(loss.item()):
        raise ValueError("non-finite loss in gradient check")
    if loss.item() < 1e-8:
        raise DegenerateSampleError("sample loss is ~0; gradients are uninformative")
    loss.backward()
    grads = {k: t.grad.copy() for k, t in params.tensors.items()}
    for t_ in params.tensors.values():
        t_.grad = None

    names = list(params.tensors)
    sizes = np.array([params.tensors[n].data.size for n in names])
    total = int(sizes.sum())
    gen = np.random.Generator(np.random.Philox(key=seed))
    flat_idx = gen.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)

    max_rel = 0.0
    for fi in flat_idx:
        which = int(np.searchsorted(bounds, fi, side="right"))
        name = names[which]
        local = int(fi - (bounds[which] - sizes[which]))
        data = params.tensors[name].data
        flat = data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + step
        up = loss_value()
        flat[local] = orig - step
        down = loss_value()
        flat[local] = orig
        g_fd = (up - down) / (2 * step)
        g_an = grads[name].reshape(-1)[local]
        rel = abs(g_an - g_fd) / max(1e-8, abs(g_fd))
        max_rel = max(max_rel, rel)
    return max_rel
