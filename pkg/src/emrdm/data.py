"""Synthetic multi-temporal cloud-occlusion datasets.

Clean scenes are sums of random low-frequency sinusoids rescaled to ``[0, 1]``.
Each time point gets an independent soft cloud mask ``a`` (thresholded,
smoothed noise) and the cloudy observation is ``a * cloud + (1 - a) * clean``,
where ``cloud`` is a bright, lightly textured layer.

A dataset directory holds::

    manifest.json   spec, split sizes and the model-space statistics
    train.emrd      tensors clean (N,C,H,W), cloudy (N,L,C,H,W), masks (N,L,1,H,W)[, aux]
    test.emrd
    previews/       8-bit PNGs of the first few test sequences
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import tensorio
from .errors import ConfigError
from .networks import DOWNSAMPLE_FACTOR
from .trainer import TensorDataset

N_PREVIEWS = 4


@dataclass(frozen=True)
class DatasetSpec:
    n_images: int = 80
    n_test: int = 16
    height: int = 32
    width: int = 32
    L: int = 3
    cloud_density: float = 0.35
    seed: int = 0
    channels: int = 3
    aux_channels: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        if not 0 <= self.n_test < self.n_images:
            raise ConfigError("n_test must be in [0, n_images)")
        if self.height % DOWNSAMPLE_FACTOR or self.width % DOWNSAMPLE_FACTOR:
            raise ConfigError(f"image size must be divisible by {DOWNSAMPLE_FACTOR}")
        if self.L < 1 or self.channels < 1 or self.aux_channels < 0:
            raise ConfigError("L and channels must be >= 1, aux_channels >= 0")
        if not 0 <= self.cloud_density <= 1:
            raise ConfigError("cloud_density must lie in [0, 1]")


def smooth_field(rng, shape, n_waves=6):
    """Sum of random sinusoids over ``shape = (C, H, W)``, rescaled to ``[0, 1]``."""
    C, H, W = shape
    yy, xx = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    base = np.zeros((n_waves, H, W))
    for j in range(n_waves):
        fy, fx = rng.integers(-3, 4, size=2)
        if fy == 0 and fx == 0:
            fx = 1
        base[j] = np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    # channels are correlated mixtures of the same waves
    mix = rng.normal(size=(C, n_waves)) + 1.5 * rng.normal(size=(1, n_waves))
    field = np.einsum("cj,jhw->chw", mix, base)
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.full(shape, 0.5)


def cloud_mask(rng, H, W, density, softness=0.15):
    """Soft mask in ``[0, 1]`` covering roughly ``density`` of the image."""
    if density <= 0:
        return np.zeros((H, W))
    if density >= 1:
        return np.ones((H, W))
    z = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma=max(H, W) / 8, mode="wrap")
    z = (z - z.mean()) / (z.std() + 1e-12)
    thresh = np.quantile(z, 1 - density)
    return np.clip((z - thresh) / softness + 0.5, 0.0, 1.0)


def edge_map(img):
    """Gradient magnitude of the channel-mean image, rescaled to ``[0, 1]``."""
    lum = img.mean(axis=0)
    mag = np.hypot(ndimage.sobel(lum, axis=0), ndimage.sobel(lum, axis=1))
    return mag / mag.max() if mag.max() > 0 else mag


def generate(spec: DatasetSpec):
    """Return ``(clean, cloudy, masks, aux)`` arrays in ``[0, 1]``."""
    rng = np.random.default_rng(spec.seed)
    N, L, C, H, W = spec.n_images, spec.L, spec.channels, spec.height, spec.width
    clean = np.empty((N, C, H, W))
    cloudy = np.empty((N, L, C, H, W))
    masks = np.empty((N, L, 1, H, W))
    aux = np.empty((N, L, spec.aux_channels, H, W)) if spec.aux_channels else None
    for n in range(N):
        clean[n] = smooth_field(rng, (C, H, W))
        edges = edge_map(clean[n])
        for l in range(L):
            a = cloud_mask(rng, H, W, spec.cloud_density)
            texture = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma=1.0)
            cloud = np.clip(0.9 + 0.1 * texture, 0.0, 1.0)
            masks[n, l, 0] = a
            cloudy[n, l] = a * cloud + (1 - a) * clean[n]
            if aux is not None:
                aux[n, l] = (1 - a) * edges
    return clean, cloudy, masks, aux


def to_model(x):
    return 2.0 * np.asarray(x) - 1.0


def from_model(x):
    return (np.asarray(x) + 1.0) / 2.0


def statistics(clean, cloudy):
    """Model-space ``sigma_data``, ``sigma_mu`` and ``sigma_cov`` over all pixels."""
    x = to_model(clean)[:, None]
    mu = to_model(cloudy)
    x_b = np.broadcast_to(x, mu.shape)
    cov = float(np.mean((x_b - x_b.mean()) * (mu - mu.mean())))
    return {"sigma_data": float(x.std()), "sigma_mu": float(mu.std()), "sigma_cov": cov}


def _split_tensors(clean, cloudy, masks, aux, sl):
    out = {"clean": clean[sl], "cloudy": cloudy[sl], "masks": masks[sl]}
    if aux is not None:
        out["aux"] = aux[sl]
    return out


def _preview(path, img):
    arr = np.clip(np.round(np.moveaxis(img[:3], 0, -1) * 255), 0, 255).astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    elif arr.shape[-1] == 2:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, optimize=False)


def save_preview_row(path, images) -> None:
    """Write images ``(K, C, H, W)`` in ``[0, 1]`` side by side as one PNG."""
    _preview(path, np.concatenate(list(images), axis=-1))


def gen_data(spec: DatasetSpec, out_dir) -> Path:
    out = Path(out_dir)
    (out / "previews").mkdir(parents=True, exist_ok=True)
    clean, cloudy, masks, aux = generate(spec)
    n_train = spec.n_images - spec.n_test
    stats = statistics(clean[:n_train], cloudy[:n_train])
    manifest = {"spec": asdict(spec), "n_train": n_train, "n_test": spec.n_test, "stats": stats}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    header = {"kind": "dataset", "spec": asdict(spec)}
    tensorio.save(out / "train.emrd", dict(header, split="train"), _split_tensors(clean, cloudy, masks, aux, slice(0, n_train)))
    tensorio.save(out / "test.emrd", dict(header, split="test"), _split_tensors(clean, cloudy, masks, aux, slice(n_train, None)))
    for i in range(min(N_PREVIEWS, spec.n_test)):
        j = n_train + i
        save_preview_row(out / "previews" / f"test_{i:03d}.png", [clean[j], *cloudy[j]])
    return out


def load_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())


def load_split(data_dir, split="train", use_cond=True, L=None) -> TensorDataset:
    """Load a split into model space, optionally keeping only the first ``L`` time points."""
    _, t = tensorio.load(Path(data_dir) / f"{split}.emrd")
    cloudy, aux = t["cloudy"], t.get("aux")
    if L is not None:
        if not 1 <= L <= cloudy.shape[1]:
            raise ConfigError(f"data.L = {L} but the dataset has {cloudy.shape[1]} time points")
        cloudy = cloudy[:, :L]
        aux = None if aux is None else aux[:, :L]
    return TensorDataset(
        clean=to_model(t["clean"].astype(np.float64)),
        cloudy=to_model(cloudy.astype(np.float64)),
        aux=None if aux is None else to_model(aux.astype(np.float64)),
        use_cond=use_cond,
    )
