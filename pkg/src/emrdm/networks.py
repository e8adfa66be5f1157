"""Raw denoising networks and the analytic Gaussian oracle.

Network inputs follow the package layout ``(B, L, C, H, W)``. A raw network is
called as ``net(x, c_noise, cond)`` where ``x`` holds the ``c_in``-scaled noisy
sequence, ``c_noise`` is a scalar or one value per batch entry, and ``cond`` is
``None`` or a ``(B, L or 1, C_cond, H, W)`` tensor concatenated channel-wise to
every temporal slice. The output is a single slice ``(B, 1, C, H, W)``.

``MultiTemporalNet`` runs one shared encoder over all slices, fuses the
bottleneck features with temporal fusion self-attention (a length-1 learned
query attending over time) and collapses each skip level with the upsampled
attention masks before a single decoder. ``MonoTemporalNet`` is the same
encoder/decoder without the temporal fusion.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .schedule import Schedule, k_of_t, sigma_of_t

DOWNSAMPLE_FACTOR = 4


class RawNetwork(Protocol):
    def __call__(self, x, c_noise, cond): ...


# --------------------------------------------------------------------------
# analytic oracle


@dataclass(frozen=True)
class GaussianOracleParams:
    m: float = 0.0
    sigma_data: float = 1.0

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise ConfigError(f"sigma_data must be positive, got {self.sigma_data}")


def oracle_denoise(p: GaussianOracleParams, x_tilde, mu, sched: Schedule, t):
    """Posterior mean ``E[x0 | x_tilde]`` for ``x0 ~ N(m, sigma_data^2)`` and known ``mu``.

    With a temporal stack of ``L`` slices sharing one target, the slices are
    pooled: ``y = mean_l(x_tilde^l - k mu^l)`` has noise variance ``sigma^2/L``,
    and ``D* = m + sd^2 / (sd^2 + sigma^2/L) (y - m)``. For scalar inputs the
    stack has a single slice.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    mu = np.asarray(mu, dtype=float)
    k = k_of_t(sched, t)
    sigma = sigma_of_t(sched, t)
    resid = x_tilde - k * mu
    if resid.ndim >= 4:
        L = resid.shape[-4]
        resid = resid.mean(axis=-4, keepdims=True)
    else:
        L = 1
    shrink = p.sigma_data**2 / (p.sigma_data**2 + sigma**2 / L)
    return p.m + shrink * (resid - p.m)


class GaussianOracle:
    """Denoiser callable ``(x_tilde_seq, t, mu_seq, cond) -> D`` for the Gaussian toy."""

    def __init__(self, params: GaussianOracleParams, sched: Schedule):
        self.params = params
        self.sched = sched

    def __call__(self, x_tilde_seq, t, mu_seq, cond=None):
        return oracle_denoise(self.params, x_tilde_seq, mu_seq, self.sched, t)


# --------------------------------------------------------------------------
# temporal fusion


@dataclass(frozen=True)
class TFSAConfig:
    heads: int = 4
    key_dim: int = 8
    channels: int = 64

    def __post_init__(self):
        if self.heads < 1 or self.key_dim < 1:
            raise ConfigError("heads and key_dim must be >= 1")
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) not divisible by heads ({self.heads})")


def temporal_attention(Q, K, V, heads):
    """Multi-head attention of one learned query over the temporal axis.

    ``Q``: ``(G, d_k)``; ``K``: ``(N, L, G, d_k)``; ``V``: ``(N, L, C)`` with
    ``C`` split evenly over the ``G`` heads. Returns the fused ``(N, C)``
    features and the masks ``(N, G, L)``.
    """
    N, L, C = V.shape
    if C % heads:
        raise ConfigError(f"channels ({C}) not divisible by heads ({heads})")
    d_k = Q.shape[-1]
    scores = torch.einsum("gd,nlgd->ngl", Q, K) / math.sqrt(d_k)
    masks = torch.softmax(scores, dim=-1)
    V = V.reshape(N, L, heads, C // heads)
    fused = torch.einsum("ngl,nlgc->ngc", masks, V).reshape(N, C)
    return fused, masks


def tfsa_forward(cfg: TFSAConfig, X, Q, W):
    """Temporal fusion self-attention at each location.

    ``X``: ``(N, L, C)`` features (``N`` spatial locations), ``Q``: ``(G, d_k)``,
    ``W``: ``(C, G * d_k)``. Keys are ``X W``, values are ``X`` itself.
    Returns ``(fused (N, C), masks (N, G, L))``.
    """
    N, L, C = X.shape
    if C != cfg.channels:
        raise ShapeError(f"expected {cfg.channels} channels, got {C}")
    K = (X @ W).reshape(N, L, cfg.heads, cfg.key_dim)
    return temporal_attention(Q, K, X, cfg.heads)


def upsample_masks(masks, size):
    """Bilinearly resize ``(B, G, L, h, w)`` masks to spatial ``size``."""
    B, G, L, h, w = masks.shape
    if (h, w) == tuple(size):
        return masks
    flat = F.interpolate(masks.reshape(B, G * L, h, w), size=tuple(size), mode="bilinear", align_corners=False)
    return flat.reshape(B, G, L, *size)


def fuse_skips(masks, skips):
    """Collapse the temporal axis of each skip level with the attention masks.

    ``masks``: ``(B, G, L, h0, w0)`` from the lowest resolution; ``skips``: a
    list of ``(B, L, C_i, H_i, W_i)`` tensors whose channels are split evenly
    across the ``G`` heads. Returns a list of ``(B, C_i, H_i, W_i)`` maps.
    """
    B, G, L = masks.shape[:3]
    out = []
    for e in skips:
        if e.shape[0] != B or e.shape[1] != L:
            raise ShapeError(f"skip {tuple(e.shape)} does not match masks {tuple(masks.shape)}")
        C, H, W = e.shape[2:]
        if C % G:
            raise ShapeError(f"skip channels ({C}) not divisible by mask heads ({G})")
        a = upsample_masks(masks, (H, W))
        grouped = e.reshape(B, L, G, C // G, H, W)
        fused = torch.einsum("bglhw,blgchw->bgchw", a, grouped)
        out.append(fused.reshape(B, C, H, W))
    return out


# --------------------------------------------------------------------------
# toy backbones


@dataclass(frozen=True)
class NetConfig:
    kind: str = "multi"
    in_channels: int = 3
    cond_channels: int = 3
    out_channels: int = 3
    base_channels: int = 32
    mid_channels: int = 64
    heads: int = 4
    key_dim: int = 8
    L: int = 1

    def __post_init__(self):
        if self.kind not in ("mono", "multi"):
            raise ConfigError(f"network kind must be 'mono' or 'multi', got {self.kind!r}")
        if self.kind == "mono" and self.L != 1:
            raise ConfigError("mono-temporal network requires L = 1")
        for ch in (self.base_channels, self.mid_channels):
            if ch % self.heads:
                raise ConfigError(f"channel width {ch} not divisible by heads ({self.heads})")

    def to_dict(self):
        return asdict(self)


class _Encoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        c0, c1 = cfg.base_channels, cfg.mid_channels
        self.conv_in = nn.Conv2d(cfg.in_channels + cfg.cond_channels, c0, 3, padding=1)
        self.emb0 = nn.Linear(1, c0)
        self.conv0 = nn.Conv2d(c0, c0, 3, padding=1)
        self.down1 = nn.Conv2d(c0, c1, 3, padding=1)
        self.emb1 = nn.Linear(1, c1)
        self.conv1 = nn.Conv2d(c1, c1, 3, padding=1)
        self.down2 = nn.Conv2d(c1, c1, 3, padding=1)

    def forward(self, x, emb_in):
        h = F.gelu(self.conv_in(x) + self.emb0(emb_in)[:, :, None, None])
        e0 = F.gelu(self.conv0(h))
        h = F.gelu(self.down1(F.avg_pool2d(e0, 2)) + self.emb1(emb_in)[:, :, None, None])
        e1 = F.gelu(self.conv1(h))
        b = F.gelu(self.down2(F.avg_pool2d(e1, 2)))
        return e0, e1, b


class _Decoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        c0, c1 = cfg.base_channels, cfg.mid_channels
        self.mid = nn.Conv2d(c1, c1, 3, padding=1)
        self.up1 = nn.Conv2d(2 * c1, c1, 3, padding=1)
        self.up0 = nn.Conv2d(c1 + c0, c0, 3, padding=1)
        self.conv_out = nn.Conv2d(c0, cfg.out_channels, 3, padding=1)

    def forward(self, b, o1, o0):
        h = F.gelu(self.mid(b))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.gelu(self.up1(torch.cat([h, o1], dim=1)))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.gelu(self.up0(torch.cat([h, o0], dim=1)))
        return self.conv_out(h)


class MonoTemporalNet(nn.Module):
    """Two-level conv encoder/decoder with additive noise-level embeddings."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = _Encoder(cfg)
        self.decoder = _Decoder(cfg)

    def _prepare(self, x, c_noise, cond):
        if x.dim() == 4:
            x = x.unsqueeze(0)
            cond = None if cond is None else cond.unsqueeze(0)
        B, L, C, H, W = x.shape
        if L != self.cfg.L:
            raise ShapeError(f"network built for L={self.cfg.L}, got {L} time points")
        if C != self.cfg.in_channels:
            raise ShapeError(f"expected {self.cfg.in_channels} input channels, got {C}")
        if H % DOWNSAMPLE_FACTOR or W % DOWNSAMPLE_FACTOR:
            raise ShapeError(f"spatial size {(H, W)} not divisible by {DOWNSAMPLE_FACTOR}")
        if self.cfg.cond_channels:
            if cond is None:
                raise ShapeError("network expects a conditioning tensor")
            if cond.shape[2] != self.cfg.cond_channels:
                raise ShapeError(f"expected {self.cfg.cond_channels} cond channels, got {cond.shape[2]}")
            cond = cond.to(x.dtype).expand(B, L, -1, H, W)
            x = torch.cat([x, cond], dim=2)
        c_noise = torch.as_tensor(c_noise, dtype=x.dtype).reshape(-1)
        emb = c_noise.expand(B).reshape(B, 1).repeat_interleave(L, dim=0)
        return x.reshape(B * L, -1, H, W), emb, (B, L)

    def forward(self, x, c_noise, cond=None):
        squeeze = x.dim() == 4
        flat, emb, (B, L) = self._prepare(x, c_noise, cond)
        e0, e1, b = self.encoder(flat, emb)
        out = self.decoder(b, e1, e0).unsqueeze(1)
        return out[0] if squeeze else out


class MultiTemporalNet(MonoTemporalNet):
    """Shared encoder over time, TFSA bottleneck and mask-weighted skip fusion."""

    def __init__(self, cfg: NetConfig):
        super().__init__(cfg)
        self.tfsa_cfg = TFSAConfig(heads=cfg.heads, key_dim=cfg.key_dim, channels=cfg.mid_channels)
        self.query = nn.Parameter(torch.randn(cfg.heads, cfg.key_dim))
        self.key_proj = nn.Parameter(
            torch.randn(cfg.mid_channels, cfg.heads * cfg.key_dim) / math.sqrt(cfg.mid_channels)
        )

    def fuse(self, b):
        """TFSA over ``(B, L, C, h, w)`` bottleneck features -> fused map and masks."""
        B, L, C, h, w = b.shape
        X = b.permute(0, 3, 4, 1, 2).reshape(B * h * w, L, C)
        fused, masks = tfsa_forward(self.tfsa_cfg, X, self.query, self.key_proj)
        fused = fused.reshape(B, h, w, C).permute(0, 3, 1, 2)
        masks = masks.reshape(B, h, w, self.cfg.heads, L).permute(0, 3, 4, 1, 2)
        return fused, masks

    def forward(self, x, c_noise, cond=None, return_masks=False):
        squeeze = x.dim() == 4
        flat, emb, (B, L) = self._prepare(x, c_noise, cond)
        e0, e1, b = self.encoder(flat, emb)
        e0, e1, b = (t.reshape(B, L, *t.shape[1:]) for t in (e0, e1, b))
        fused, masks = self.fuse(b)
        o0, o1 = fuse_skips(masks, [e0, e1])
        out = self.decoder(fused, o1, o0).unsqueeze(1)
        out = out[0] if squeeze else out
        return (out, masks) if return_masks else out


def build_network(cfg: NetConfig, seed: int = 0) -> MonoTemporalNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return MultiTemporalNet(cfg) if cfg.kind == "multi" else MonoTemporalNet(cfg)


def as_numpy_denoiser(net):
    """Adapt a torch raw network to numpy inputs (float32 compute, float64 out)."""

    def call(x, c_noise, cond):
        with torch.no_grad():
            xt = torch.as_tensor(np.asarray(x), dtype=torch.float32)
            ct = None if cond is None else torch.as_tensor(np.asarray(cond), dtype=torch.float32)
            out = net(xt, float(c_noise) if np.ndim(c_noise) == 0 else torch.as_tensor(c_noise), ct)
        return out.double().numpy()

    return call
