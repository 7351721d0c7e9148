"""EMG-to-pose transformer: patch tokenizer, encoder, latent-query decoder.

The model maps a normalized 8x256 EMG window to 32 pose frames of 20 joint
angles in a single pass (no output feedback). Training happens in two
stages: masked-autoencoder pretraining of the encoder (reconstruct raw
patch values at masked token positions from the visible rest), then
supervised fine-tuning of the whole network with an L1 pose loss.

Weights file layout (little-endian):

    magic 'ALVW' | model version u32 | config JSON len u32 | config JSON |
    tensor count u32 | per tensor: name len u16, name UTF-8, rank u8,
    dims u32 each, raw f32 data

Optimizer moments ride along as ``opt.m.*`` / ``opt.v.*`` tensors plus an
``opt.t`` step counter, so a reloaded model resumes training unchanged.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

WEIGHTS_MAGIC = b"ALVW"


class ModelError(Exception):
    pass


class ConfigMismatch(ModelError):
    pass


class CorruptWeights(ModelError):
    pass


class NonFiniteLoss(ModelError):
    """Raised by a training step whose loss is NaN/inf; state is unchanged."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 4
    n_decoder_layers: int = 2
    ffn_multiplier: int = 4
    patch_time: int = 8
    channels: int = 8
    window_len: int = 256
    n_queries: int = 32
    out_dims: int = 20
    mask_ratio: float = 0.7
    mae_decoder_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.window_len % self.patch_time:
            raise ValueError("patch_time must divide window_len")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")
        if min(self.n_encoder_layers, self.n_decoder_layers,
               self.mae_decoder_depth) < 1:
            raise ValueError("encoder/decoder/MAE depths must be >= 1")

    @property
    def n_time_patches(self) -> int:
        return self.window_len // self.patch_time

    @property
    def token_count(self) -> int:
        return self.channels * self.n_time_patches

    @property
    def d_ff(self) -> int:
        return self.d_model * self.ffn_multiplier

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def tokenize(window: np.ndarray, patch_time: int = 8) -> np.ndarray:
    """(..., C, L) window -> (..., C * L/pt, pt) tokens.

    Token k = c * (L/pt) + j carries channel c, time slice [pt*j, pt*(j+1)).
    Pure reshape, hence exactly invertible by :func:`detokenize`.
    """
    *lead, c, length = window.shape
    if length % patch_time:
        raise ValueError("patch_time must divide the window length")
    n_t = length // patch_time
    return window.reshape(*lead, c * n_t, patch_time)


def detokenize(tokens: np.ndarray, channels: int = 8) -> np.ndarray:
    *lead, n_tok, patch_time = tokens.shape
    if n_tok % channels:
        raise ValueError("token count must be a multiple of channels")
    return tokens.reshape(*lead, channels, (n_tok // channels) * patch_time)


def mask_count(token_count: int, ratio: float) -> int:
    return int(round(ratio * token_count))


def sample_mask(token_count: int, ratio: float, rng) -> np.ndarray:
    """Boolean mask with exactly round(ratio * token_count) True entries."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n_masked = mask_count(token_count, ratio)
    mask = np.zeros(token_count, dtype=bool)
    mask[rng.permutation(token_count)[:n_masked]] = True
    return mask


def _acc(grads: dict, name: str, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


class HandFormer:
    """Model weights + optimizer state + a monotone snapshot version."""

    def __init__(self, config: ModelConfig | None = None,
                 dtype=np.float32, rng=None):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.version = 0
        self.opt = nn.Adam()
        if rng is None:
            rng = np.random.default_rng(self.config.seed)
        self.params: dict[str, np.ndarray] = {}
        self._build(rng)

    # -- construction -------------------------------------------------------
    # projection matrices are width-scaled (truncated normal, std
    # 1/sqrt(fan_in)); a flat tiny std leaves GELU/attention in their
    # linear regime at this width and supervised training cannot leave
    # the predict-the-mean plateau. Embedding-like tables keep std 0.02.

    def _tn(self, rng, shape):
        return nn.trunc_normal(rng, shape, std=0.02, dtype=self.dtype)

    def _proj(self, rng, shape):
        return nn.trunc_normal(rng, shape, std=1.0 / np.sqrt(shape[0]),
                               dtype=self.dtype)

    def _add_ln(self, prefix, d):
        self.params[f"{prefix}.g"] = np.ones(d, dtype=self.dtype)
        self.params[f"{prefix}.b"] = np.zeros(d, dtype=self.dtype)

    def _add_self_attn(self, rng, prefix, d):
        self.params[f"{prefix}.Wqkv"] = self._proj(rng, (d, 3 * d))
        self.params[f"{prefix}.bqkv"] = np.zeros(3 * d, dtype=self.dtype)
        self.params[f"{prefix}.Wo"] = self._proj(rng, (d, d))
        self.params[f"{prefix}.bo"] = np.zeros(d, dtype=self.dtype)

    def _add_ffn(self, rng, prefix, d, dff):
        self.params[f"{prefix}.W1"] = self._proj(rng, (d, dff))
        self.params[f"{prefix}.b1"] = np.zeros(dff, dtype=self.dtype)
        self.params[f"{prefix}.W2"] = self._proj(rng, (dff, d))
        self.params[f"{prefix}.b2"] = np.zeros(d, dtype=self.dtype)

    def _add_block(self, rng, prefix, d, dff):
        self._add_ln(f"{prefix}.ln1", d)
        self._add_self_attn(rng, f"{prefix}.attn", d)
        self._add_ln(f"{prefix}.ln2", d)
        self._add_ffn(rng, f"{prefix}.ffn", d, dff)

    def _build(self, rng):
        cfg = self.config
        d, dff = cfg.d_model, cfg.d_ff
        p = self.params
        p["patch.W"] = self._proj(rng, (cfg.patch_time, d))
        p["patch.b"] = np.zeros(d, dtype=self.dtype)
        p["pos.chan"] = self._tn(rng, (cfg.channels, d))
        p["pos.time"] = self._tn(rng, (cfg.n_time_patches, d))
        for i in range(cfg.n_encoder_layers):
            self._add_block(rng, f"enc{i}", d, dff)
        self._add_ln("enc.lnf", d)
        p["queries"] = self._tn(rng, (cfg.n_queries, d))
        for i in range(cfg.n_decoder_layers):
            self._add_ln(f"dec{i}.ln1", d)
            p[f"dec{i}.cross.Wq"] = self._proj(rng, (d, d))
            p[f"dec{i}.cross.bq"] = np.zeros(d, dtype=self.dtype)
            p[f"dec{i}.cross.Wkv"] = self._proj(rng, (d, 2 * d))
            p[f"dec{i}.cross.bkv"] = np.zeros(2 * d, dtype=self.dtype)
            p[f"dec{i}.cross.Wo"] = self._proj(rng, (d, d))
            p[f"dec{i}.cross.bo"] = np.zeros(d, dtype=self.dtype)
            self._add_ln(f"dec{i}.ln2", d)
            self._add_self_attn(rng, f"dec{i}.self", d)
            self._add_ln(f"dec{i}.ln3", d)
            self._add_ffn(rng, f"dec{i}.ffn", d, dff)
        self._add_ln("dec.lnf", d)
        p["head.W"] = self._proj(rng, (d, cfg.out_dims))
        p["head.b"] = np.zeros(cfg.out_dims, dtype=self.dtype)
        p["mask_token"] = self._tn(rng, (d,))
        for i in range(cfg.mae_decoder_depth):
            self._add_block(rng, f"mae{i}", d, dff)
        self._add_ln("mae.lnf", d)
        p["mae.head.W"] = self._proj(rng, (d, cfg.patch_time))
        p["mae.head.b"] = np.zeros(cfg.patch_time, dtype=self.dtype)

    # -- shared forward pieces ---------------------------------------------

    def _pos_full(self):
        p = self.params
        cfg = self.config
        return (p["pos.chan"][:, None, :] + p["pos.time"][None, :, :]) \
            .reshape(cfg.token_count, cfg.d_model)

    def _embed(self, windows):
        """(B, C, L) float windows -> tokens (B, N, pt), embedded (B, N, d)."""
        cfg = self.config
        if windows.ndim != 3 or windows.shape[1:] != (cfg.channels,
                                                      cfg.window_len):
            raise ValueError(
                f"expected (B, {cfg.channels}, {cfg.window_len}) windows, "
                f"got {windows.shape}")
        if not np.isfinite(windows).all():
            raise ValueError("windows contain non-finite values")
        tokens = np.ascontiguousarray(tokenize(windows, cfg.patch_time),
                                      dtype=self.dtype)
        B, N, pt = tokens.shape
        x = tokens.reshape(B * N, pt) @ self.params["patch.W"] \
            + self.params["patch.b"]
        x = x.reshape(B, N, cfg.d_model) + self._pos_full()
        return tokens, x

    def _block_fwd(self, prefix, x, caches):
        p = self.params
        h, c1 = nn.ln_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
        a, ca = nn.self_attn_fwd(h, p[f"{prefix}.attn.Wqkv"],
                                 p[f"{prefix}.attn.bqkv"],
                                 p[f"{prefix}.attn.Wo"],
                                 p[f"{prefix}.attn.bo"],
                                 self.config.n_heads)
        x = x + a
        h, c2 = nn.ln_fwd(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
        f, cf = nn.ffn_fwd(h, p[f"{prefix}.ffn.W1"], p[f"{prefix}.ffn.b1"],
                           p[f"{prefix}.ffn.W2"], p[f"{prefix}.ffn.b2"])
        x = x + f
        caches[prefix] = (c1, ca, c2, cf)
        return x

    def _block_bwd(self, prefix, dx, caches, grads):
        p = self.params
        c1, ca, c2, cf = caches[prefix]
        dh, gffn = nn.ffn_bwd(dx, cf, p[f"{prefix}.ffn.W1"],
                              p[f"{prefix}.ffn.W2"])
        for k, v in gffn.items():
            _acc(grads, f"{prefix}.ffn.{k}", v)
        dln, dg, db = nn.ln_bwd(dh, c2, p[f"{prefix}.ln2.g"])
        _acc(grads, f"{prefix}.ln2.g", dg)
        _acc(grads, f"{prefix}.ln2.b", db)
        dx = dx + dln
        dh, gattn = nn.self_attn_bwd(dx, ca, p[f"{prefix}.attn.Wqkv"],
                                     p[f"{prefix}.attn.Wo"])
        for k, v in gattn.items():
            _acc(grads, f"{prefix}.attn.{k}", v)
        dln, dg, db = nn.ln_bwd(dh, c1, p[f"{prefix}.ln1.g"])
        _acc(grads, f"{prefix}.ln1.g", dg)
        _acc(grads, f"{prefix}.ln1.b", db)
        return dx + dln

    def _encoder_fwd(self, x, caches):
        for i in range(self.config.n_encoder_layers):
            x = self._block_fwd(f"enc{i}", x, caches)
        lat, caches["enc.lnf"] = nn.ln_fwd(
            x, self.params["enc.lnf.g"], self.params["enc.lnf.b"])
        return lat

    def _encoder_bwd(self, dlat, caches, grads):
        dx, dg, db = nn.ln_bwd(dlat, caches["enc.lnf"],
                               self.params["enc.lnf.g"])
        _acc(grads, "enc.lnf.g", dg)
        _acc(grads, "enc.lnf.b", db)
        for i in reversed(range(self.config.n_encoder_layers)):
            dx = self._block_bwd(f"enc{i}", dx, caches, grads)
        return dx

    # -- public ops ---------------------------------------------------------

    def encode(self, windows, mask=None):
        """Encode windows; with a mask, only visible tokens are processed.

        Returns the latent sequence (B, n_visible, d_model). ``mask`` is a
        boolean (token_count,) or (B, token_count) array, True = masked.
        """
        windows = np.asarray(windows, dtype=self.dtype)
        single = windows.ndim == 2
        if single:
            windows = windows[None]
        _, x = self._embed(windows)
        if mask is not None:
            vis_idx, _ = self._mask_indices(mask, x.shape[0])
            x = x[np.arange(x.shape[0])[:, None], vis_idx]
        lat = self._encoder_fwd(x, {})
        return lat[0] if single else lat

    def _mask_indices(self, mask, batch):
        cfg = self.config
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = np.broadcast_to(mask, (batch, cfg.token_count))
        if mask.shape != (batch, cfg.token_count):
            raise ValueError(f"mask shape {mask.shape} does not match "
                             f"(batch={batch}, tokens={cfg.token_count})")
        counts = mask.sum(axis=1)
        if not (counts == counts[0]).all():
            raise ValueError("all masks in a batch must hide the same count")
        n_masked = int(counts[0])
        order = np.argsort(~mask, axis=1, kind="stable")
        mask_idx = np.ascontiguousarray(order[:, :n_masked])
        vis_idx = np.ascontiguousarray(np.sort(order[:, n_masked:], axis=1))
        mask_idx = np.ascontiguousarray(np.sort(mask_idx, axis=1))
        return vis_idx, mask_idx

    def _decoder_fwd(self, lat, caches):
        p = self.params
        cfg = self.config
        B = lat.shape[0]
        y = np.repeat(p["queries"][None], B, axis=0)
        for i in range(cfg.n_decoder_layers):
            h, c1 = nn.ln_fwd(y, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
            a, cc = nn.cross_attn_fwd(h, lat, p[f"dec{i}.cross.Wq"],
                                      p[f"dec{i}.cross.bq"],
                                      p[f"dec{i}.cross.Wkv"],
                                      p[f"dec{i}.cross.bkv"],
                                      p[f"dec{i}.cross.Wo"],
                                      p[f"dec{i}.cross.bo"], cfg.n_heads)
            y = y + a
            h, c2 = nn.ln_fwd(y, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
            a, cs = nn.self_attn_fwd(h, p[f"dec{i}.self.Wqkv"],
                                     p[f"dec{i}.self.bqkv"],
                                     p[f"dec{i}.self.Wo"],
                                     p[f"dec{i}.self.bo"], cfg.n_heads)
            y = y + a
            h, c3 = nn.ln_fwd(y, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"])
            f, cf = nn.ffn_fwd(h, p[f"dec{i}.ffn.W1"], p[f"dec{i}.ffn.b1"],
                               p[f"dec{i}.ffn.W2"], p[f"dec{i}.ffn.b2"])
            y = y + f
            caches[f"dec{i}"] = (c1, cc, c2, cs, c3, cf)
        yd, caches["dec.lnf"] = nn.ln_fwd(y, p["dec.lnf.g"], p["dec.lnf.b"])
        B, Q, d = yd.shape
        pred = yd.reshape(B * Q, d) @ p["head.W"] + p["head.b"]
        caches["dec.head_in"] = yd.reshape(B * Q, d)
        return pred.reshape(B, Q, cfg.out_dims)

    def _decoder_bwd(self, dpred, caches, grads):
        p = self.params
        cfg = self.config
        B, Q, od = dpred.shape
        d = cfg.d_model
        dp2 = dpred.reshape(B * Q, od)
        yd2 = caches["dec.head_in"]
        _acc(grads, "head.W", yd2.T @ dp2)
        _acc(grads, "head.b", dp2.sum(axis=0))
        dyd = (dp2 @ p["head.W"].T).reshape(B, Q, d)
        dy, dg, db = nn.ln_bwd(dyd, caches["dec.lnf"], p["dec.lnf.g"])
        _acc(grads, "dec.lnf.g", dg)
        _acc(grads, "dec.lnf.b", db)
        dlat = None
        for i in reversed(range(cfg.n_decoder_layers)):
            c1, cc, c2, cs, c3, cf = caches[f"dec{i}"]
            dh, gffn = nn.ffn_bwd(dy, cf, p[f"dec{i}.ffn.W1"],
                                  p[f"dec{i}.ffn.W2"])
            for k, v in gffn.items():
                _acc(grads, f"dec{i}.ffn.{k}", v)
            dln, dg, db = nn.ln_bwd(dh, c3, p[f"dec{i}.ln3.g"])
            _acc(grads, f"dec{i}.ln3.g", dg)
            _acc(grads, f"dec{i}.ln3.b", db)
            dy = dy + dln
            dh, gattn = nn.self_attn_bwd(dy, cs, p[f"dec{i}.self.Wqkv"],
                                         p[f"dec{i}.self.Wo"])
            for k, v in gattn.items():
                _acc(grads, f"dec{i}.self.{k}", v)
            dln, dg, db = nn.ln_bwd(dh, c2, p[f"dec{i}.ln2.g"])
            _acc(grads, f"dec{i}.ln2.g", dg)
            _acc(grads, f"dec{i}.ln2.b", db)
            dy = dy + dln
            dxq, dctx, gcross = nn.cross_attn_bwd(dy, cc,
                                                  p[f"dec{i}.cross.Wq"],
                                                  p[f"dec{i}.cross.Wkv"],
                                                  p[f"dec{i}.cross.Wo"])
            for k, v in gcross.items():
                _acc(grads, f"dec{i}.cross.{k}", v)
            dlat = dctx if dlat is None else dlat + dctx
            dln, dg, db = nn.ln_bwd(dxq, c1, p[f"dec{i}.ln1.g"])
            _acc(grads, f"dec{i}.ln1.g", dg)
            _acc(grads, f"dec{i}.ln1.b", db)
            dy = dy + dln
        _acc(grads, "queries", dy.sum(axis=0))
        return dlat

    def forward(self, windows) -> np.ndarray:
        """Full inference: (B, 8, 256) -> (B, 32, 20); accepts one window."""
        pred, _ = self._forward_cached(windows)
        return pred

    def _forward_cached(self, windows):
        windows = np.asarray(windows, dtype=self.dtype)
        single = windows.ndim == 2
        if single:
            windows = windows[None]
        caches = {}
        tokens, x = self._embed(windows)
        caches["tokens"] = tokens
        lat = self._encoder_fwd(x, caches)
        pred = self._decoder_fwd(lat, caches)
        return (pred[0] if single else pred), caches

    def predict(self, windows, batch_size: int = 64) -> np.ndarray:
        """Inference over many windows in batches."""
        windows = np.asarray(windows, dtype=self.dtype)
        if windows.ndim == 2:
            return self.forward(windows)
        outs = [self.forward(windows[i:i + batch_size])
                for i in range(0, windows.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)

    # -- losses -------------------------------------------------------------

    def _input_grads(self, dx, tokens, grads):
        """Common tail: gradient through pos embeddings + patch projection."""
        cfg = self.config
        B, N, d = dx.shape
        dpos = dx.sum(axis=0)
        _acc(grads, "pos.chan",
             dpos.reshape(cfg.channels, cfg.n_time_patches, d).sum(axis=1))
        _acc(grads, "pos.time",
             dpos.reshape(cfg.channels, cfg.n_time_patches, d).sum(axis=0))
        dx2 = dx.reshape(B * N, d)
        t2 = tokens.reshape(B * N, cfg.patch_time)
        _acc(grads, "patch.W", t2.T @ dx2)
        _acc(grads, "patch.b", dx2.sum(axis=0))

    def loss_supervised(self, windows, targets, need_grads=True):
        """Mean absolute error between predicted and target joint angles."""
        targets = np.asarray(targets, dtype=self.dtype)
        pred, caches = self._forward_cached(np.asarray(windows))
        if pred.shape != targets.shape:
            raise ValueError(f"target shape {targets.shape} != "
                             f"prediction shape {pred.shape}")
        diff = pred - targets
        loss = float(np.abs(diff, dtype=np.float64).mean())
        if not need_grads:
            return loss, None
        grads: dict[str, np.ndarray] = {}
        dpred = (np.sign(diff) / diff.size).astype(self.dtype)
        if dpred.ndim == 2:
            dpred = dpred[None]
        dlat = self._decoder_bwd(dpred, caches, grads)
        dx = self._encoder_bwd(dlat, caches, grads)
        self._input_grads(dx, caches["tokens"], grads)
        return loss, grads

    def loss_mae(self, windows, masks, need_grads=True):
        """Masked reconstruction MSE; loss sees masked positions only."""
        cfg = self.config
        windows = np.asarray(windows, dtype=self.dtype)
        if windows.ndim == 2:
            windows = windows[None]
        B = windows.shape[0]
        vis_idx, mask_idx = self._mask_indices(masks, B)
        caches: dict = {}
        tokens, x = self._embed(windows)
        bb = np.arange(B)[:, None]
        x_vis = np.ascontiguousarray(x[bb, vis_idx])
        lat = self._encoder_fwd(x_vis, caches)

        d = cfg.d_model
        p = self.params
        z = np.empty((B, cfg.token_count, d), dtype=self.dtype)
        z[bb, vis_idx] = lat
        z[bb, mask_idx] = p["mask_token"]
        z = z + self._pos_full()
        mae_caches: dict = {}
        for i in range(cfg.mae_decoder_depth):
            z = self._block_fwd(f"mae{i}", z, mae_caches)
        h, c_lnf = nn.ln_fwd(z, p["mae.lnf.g"], p["mae.lnf.b"])
        h2 = h.reshape(B * cfg.token_count, d)
        recon = (h2 @ p["mae.head.W"] + p["mae.head.b"]) \
            .reshape(B, cfg.token_count, cfg.patch_time)

        diff = recon - tokens
        n_masked = mask_idx.shape[1]
        denom = B * n_masked * cfg.patch_time
        masked_diff = diff[bb, mask_idx]
        loss = float(np.square(masked_diff, dtype=np.float64).sum() / denom)
        if not need_grads:
            return loss, None

        grads: dict[str, np.ndarray] = {}
        drecon = np.zeros_like(diff)
        drecon[bb, mask_idx] = (2.0 / denom) * masked_diff
        dr2 = drecon.reshape(B * cfg.token_count, cfg.patch_time)
        _acc(grads, "mae.head.W", h2.T @ dr2)
        _acc(grads, "mae.head.b", dr2.sum(axis=0))
        dh = (dr2 @ p["mae.head.W"].T).reshape(B, cfg.token_count, d)
        dz, dg, db = nn.ln_bwd(dh, c_lnf, p["mae.lnf.g"])
        _acc(grads, "mae.lnf.g", dg)
        _acc(grads, "mae.lnf.b", db)
        for i in reversed(range(cfg.mae_decoder_depth)):
            dz = self._block_bwd(f"mae{i}", dz, mae_caches, grads)
        dpos = dz.sum(axis=(0,)).reshape(cfg.channels, cfg.n_time_patches, d)
        _acc(grads, "pos.chan", dpos.sum(axis=1))
        _acc(grads, "pos.time", dpos.sum(axis=0))
        _acc(grads, "mask_token", dz[bb, mask_idx].sum(axis=(0, 1)))
        dlat = np.ascontiguousarray(dz[bb, vis_idx])
        dxvis = self._encoder_bwd(dlat, caches, grads)
        dx = np.zeros((B, cfg.token_count, d), dtype=self.dtype)
        dx[bb, vis_idx] = dxvis
        self._input_grads(dx, tokens, grads)
        return loss, grads

    # -- training steps -----------------------------------------------------

    def mae_step(self, windows, rng=None, masks=None) -> float:
        """One masked-reconstruction optimizer step; returns the loss."""
        windows = np.asarray(windows, dtype=self.dtype)
        if windows.ndim == 2:
            windows = windows[None]
        if windows.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        if masks is None:
            if rng is None:
                raise ValueError("need rng when masks are not given")
            masks = np.stack([
                sample_mask(self.config.token_count, self.config.mask_ratio,
                            rng)
                for _ in range(windows.shape[0])])
        loss, grads = self.loss_mae(windows, masks, need_grads=True)
        self._apply(loss, grads)
        return loss

    def finetune_step(self, windows, targets) -> float:
        """One supervised L1 optimizer step; returns the loss."""
        windows = np.asarray(windows, dtype=self.dtype)
        if windows.ndim == 2:
            windows = windows[None]
            targets = np.asarray(targets)[None]
        if windows.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        loss, grads = self.loss_supervised(windows, targets, need_grads=True)
        self._apply(loss, grads)
        return loss

    def _apply(self, loss, grads):
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss={loss!r}; step aborted, state unchanged")
        self.opt.step(self.params, grads)

    def bump_version(self) -> int:
        self.version += 1
        return self.version

    # -- snapshotting / persistence ------------------------------------------

    def clone(self) -> "HandFormer":
        """Deep copy of weights, optimizer moments and version."""
        twin = HandFormer.__new__(HandFormer)
        twin.config = self.config
        twin.dtype = self.dtype
        twin.version = self.version
        twin.params = {k: v.copy() for k, v in self.params.items()}
        twin.opt = nn.Adam(self.opt.lr, self.opt.beta1, self.opt.beta2,
                           self.opt.eps)
        twin.opt.t = self.opt.t
        twin.opt.m = {k: v.copy() for k, v in self.opt.m.items()}
        twin.opt.v = {k: v.copy() for k, v in self.opt.v.items()}
        return twin

    def restore(self, other: "HandFormer"):
        """Overwrite weights/optimizer/version from a snapshot, bit-exactly."""
        if other.config != self.config:
            raise ConfigMismatch("snapshot config differs")
        for k in self.params:
            np.copyto(self.params[k], other.params[k])
        self.opt.t = other.opt.t
        self.opt.m = {k: v.copy() for k, v in other.opt.m.items()}
        self.opt.v = {k: v.copy() for k, v in other.opt.v.items()}
        self.version = other.version

    def _tensor_items(self):
        items = list(self.params.items())
        items += list(self.opt.state_tensors().items())
        items.append(("opt.t", np.array([self.opt.t], dtype=np.float32)))
        return items

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()

    def save(self, dest):
        """Write the weights container to a path or binary file object."""
        if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
            with open(dest, "wb") as fh:
                self._write(fh)
        else:
            self._write(dest)

    def _write(self, fh):
        cfg_json = json.dumps(self.config.to_dict(), sort_keys=True,
                              separators=(",", ":")).encode()
        items = self._tensor_items()
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", self.version))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(items)))
        for name, tensor in items:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            arr = np.ascontiguousarray(tensor, dtype=np.float32)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())

    @classmethod
    def load(cls, source) -> "HandFormer":
        """Read a weights container from a path, file object or bytes."""
        if isinstance(source, (bytes, bytearray)):
            return cls._read(io.BytesIO(bytes(source)))
        if isinstance(source, str) or hasattr(source, "__fspath__"):
            with open(source, "rb") as fh:
                return cls._read(fh)
        return cls._read(source)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HandFormer":
        return cls.load(blob)

    @classmethod
    def _read(cls, fh) -> "HandFormer":
        def need(n, what):
            data = fh.read(n)
            if len(data) != n:
                raise CorruptWeights(f"truncated while reading {what}")
            return data

        if need(4, "magic") != WEIGHTS_MAGIC:
            raise CorruptWeights("bad magic; not a weights file")
        version = struct.unpack("<I", need(4, "version"))[0]
        (cfg_len,) = struct.unpack("<I", need(4, "config length"))
        try:
            cfg = ModelConfig.from_dict(json.loads(need(cfg_len, "config")))
        except (ValueError, TypeError) as exc:
            raise CorruptWeights(f"bad config blob: {exc}") from exc
        model = cls(cfg)
        model.version = version
        (count,) = struct.unpack("<I", need(4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", need(2, "name length"))
            name = need(nlen, "name").decode()
            (rank,) = struct.unpack("<B", need(1, "rank"))
            dims = tuple(struct.unpack("<I", need(4, "dim"))[0]
                         for _ in range(rank))
            size = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(need(size * 4, f"tensor {name}"),
                                 dtype="<f4").reshape(dims)
            tensors[name] = data.copy()
        for name, tensor in model.params.items():
            if name not in tensors:
                raise CorruptWeights(f"missing tensor {name}")
            if tensors[name].shape != tensor.shape:
                raise ConfigMismatch(
                    f"tensor {name}: file has {tensors[name].shape}, "
                    f"config implies {tensor.shape}")
            if not np.isfinite(tensors[name]).all():
                raise CorruptWeights(f"tensor {name} has non-finite values")
            model.params[name] = tensors[name]
        if "opt.t" in tensors:
            model.opt.t = int(tensors["opt.t"][0])
        for name, tensor in tensors.items():
            if name.startswith("opt.m."):
                model.opt.m[name[6:]] = tensor
            elif name.startswith("opt.v."):
                model.opt.v[name[6:]] = tensor
        for name in model.opt.m:
            if name not in model.params or \
                    model.opt.m[name].shape != model.params[name].shape:
                raise ConfigMismatch(f"optimizer moment {name} inconsistent")
        return model


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def pretrain_mae(model: HandFormer, windows, steps: int, batch_size: int,
                 rng, fixed_batch=False) -> list[float]:
    """Run MAE steps on batches sampled with replacement; returns losses."""
    windows = np.asarray(windows, dtype=model.dtype)
    losses = []
    fixed = windows[rng.integers(0, windows.shape[0], size=batch_size)] \
        if fixed_batch else None
    for _ in range(steps):
        batch = fixed if fixed_batch else \
            windows[rng.integers(0, windows.shape[0], size=batch_size)]
        losses.append(model.mae_step(batch, rng=rng))
    return losses


def train_supervised(model: HandFormer, windows, targets, steps: int,
                     batch_size: int, rng) -> list[float]:
    windows = np.asarray(windows, dtype=model.dtype)
    targets = np.asarray(targets, dtype=model.dtype)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, windows.shape[0], size=batch_size)
        losses.append(model.finetune_step(windows[idx], targets[idx]))
    return losses


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(model: HandFormer, windows, targets=None, masks=None,
               loss: str = "l1", n_samples: int = 200, h: float = 1e-5,
               rng=None, param_names=None, atol: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    Evaluates the chosen loss twice per sampled parameter coordinate and
    returns the maximum relative error, with the denominator floored at
    ``atol``: central differences at step ``h`` in float64 cannot resolve
    gradients below roughly eps * loss / h, so comparing tinier values
    would measure roundoff, not correctness. Meant for small
    double-precision models; ``param_names`` restricts sampling to a
    subset of tensors.
    """
    if model.dtype != np.float64:
        raise ValueError("grad_check requires a float64 model")
    rng = rng or np.random.default_rng(0)

    if loss == "l1":
        if targets is None:
            raise ValueError("l1 grad check needs targets")
        _, grads = model.loss_supervised(windows, targets, need_grads=True)

        def loss_only():
            return model.loss_supervised(windows, targets,
                                         need_grads=False)[0]
    elif loss == "mae":
        if masks is None:
            raise ValueError("mae grad check needs fixed masks")
        _, grads = model.loss_mae(windows, masks, need_grads=True)

        def loss_only():
            return model.loss_mae(windows, masks, need_grads=False)[0]
    else:
        raise ValueError(f"unknown loss {loss!r}")

    names = list(param_names) if param_names else list(model.params)
    sizes = np.array([model.params[n].size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    picks = rng.choice(total, size=min(n_samples, total), replace=False)

    max_rel = 0.0
    for flat in picks:
        ti = int(np.searchsorted(cum, flat, side="right"))
        idx = int(flat - (cum[ti - 1] if ti else 0))
        name = names[ti]
        w = model.params[name]
        old = w.flat[idx]
        w.flat[idx] = old + h
        lp = loss_only()
        w.flat[idx] = old - h
        lm = loss_only()
        w.flat[idx] = old
        num = (lp - lm) / (2.0 * h)
        ana = 0.0 if name not in grads else float(grads[name].flat[idx])
        denom = max(abs(num), abs(ana), atol)
        rel = abs(num - ana) / denom
        max_rel = max(max_rel, rel)
    return max_rel
