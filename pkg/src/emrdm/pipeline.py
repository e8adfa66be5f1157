"""End-to-end glue: train a run, restore a split, score it."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as datamod
from . import tensorio
from .config import RunConfig
from .errors import ConfigError
from .metrics import evaluate, psnr
from .networks import as_numpy_denoiser, build_network
from .precondition import PreconditionParams, Preconditioned
from .sampler import SamplerConfig, sample, write_trace
from .schedule import GENERATIVE, Schedule
from .trainer import TensorDataset, fit, load_checkpoint

log = logging.getLogger(__name__)


def schedule_from_dict(d: dict) -> Schedule:
    return Schedule.generative() if d["kind"] == GENERATIVE else Schedule(alpha=d["alpha"], kind=d["kind"])


def restore(net, params: PreconditionParams, sched: Schedule, dataset: TensorDataset, cfg: SamplerConfig,
            idx=None, trace=None) -> np.ndarray:
    """Run the sampler on (a subset of) ``dataset``; returns images in ``[0, 1]``."""
    idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
    net.eval()
    denoiser = Preconditioned(as_numpy_denoiser(net), params, sched)
    out = sample(denoiser, dataset.cloudy[idx], sched, cfg, cond=dataset.cond(idx), trace=trace)
    return np.clip(datamod.from_model(out[:, 0]), 0.0, 1.0)


def cloudy_psnr(dataset: TensorDataset) -> float:
    """Mean PSNR of every cloudy observation against its clean target."""
    clean = datamod.from_model(dataset.clean)
    cloudy = datamod.from_model(dataset.cloudy)
    return float(np.mean([psnr(clean[i], cloudy[i, l]) for i in range(len(clean)) for l in range(cloudy.shape[1])]))


def mean_psnr(targets, preds) -> float:
    return float(np.mean([psnr(y, p) for y, p in zip(targets, preds)]))


def train_run(cfg: RunConfig):
    """Train per ``cfg``; writes checkpoints and ``metrics.csv`` under ``run.out_dir``."""
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = datamod.load_manifest(cfg.run.data_dir)
    # a run may use the first data.L time points of a longer dataset
    full = datamod.load_split(cfg.run.data_dir, "train", use_cond=cfg.network.use_cond, L=cfg.data.L)
    n_val = min(cfg.trainer.val_images, len(full) - 1)
    train_set = _subset(full, slice(0, len(full) - n_val))
    val_set = _subset(full, slice(len(full) - n_val, None)) if n_val > 0 else None

    params = cfg.precondition_params(manifest["stats"])
    tcfg = cfg.train_config(params)
    scfg = cfg.sampler_config()
    params.check_grid(tcfg.schedule, scfg.grid().as_array())
    net_cfg = cfg.net_config(full.cond_channels())
    header = {
        "schedule": asdict(tcfg.schedule),
        "precondition": params.to_dict(),
        "network": net_cfg.to_dict(),
        "seed": cfg.run.seed,
        "use_cond": cfg.network.use_cond,
        "dataset_stats": manifest["stats"],
    }
    ckpt_dir = out / "checkpoints"
    optimizer, start = None, 0
    if cfg.trainer.resume and (ckpt_dir / "last.ckpt").exists():
        net, optimizer, hdr = load_checkpoint(ckpt_dir / "last.ckpt", tcfg)
        start = hdr["step"]
        log.info("resuming from step %d", start)
    else:
        net = build_network(net_cfg, seed=tcfg.seed)
        metrics = out / "metrics.csv"
        if metrics.exists():
            metrics.unlink()

    validate = None
    if val_set is not None:
        def validate(model):
            preds = restore(model, params, tcfg.schedule, val_set, scfg)
            return mean_psnr(datamod.from_model(val_set.clean), preds)

    return fit(net, train_set, tcfg, optimizer=optimizer, start_step=start, validate=validate,
               ckpt_dir=ckpt_dir, header=header, metrics_path=out / "metrics.csv")


def _subset(ds: TensorDataset, sl) -> TensorDataset:
    return TensorDataset(ds.clean[sl], ds.cloudy[sl], None if ds.aux is None else ds.aux[sl], ds.use_cond)


def sample_run(cfg: RunConfig) -> Path:
    """Restore ``sampler.split`` with the run's checkpoint; writes ``restored.emrd``."""
    net, _, header = load_checkpoint(cfg.checkpoint_path())
    sched = schedule_from_dict(header["schedule"])
    params = PreconditionParams(**header["precondition"])
    dataset = datamod.load_split(cfg.run.data_dir, cfg.sampler.split, use_cond=header["use_cond"],
                                 L=header["network"]["L"])
    scfg = cfg.sampler_config()
    trace = [] if cfg.sampler.trace else None
    restored = restore(net, params, sched, dataset, scfg, trace=trace)
    out = Path(cfg.run.out_dir)
    (out / "previews").mkdir(parents=True, exist_ok=True)
    tensorio.save(out / "restored.emrd", {"kind": "restored", "split": cfg.sampler.split, "sampler": scfg.to_dict()},
                  {"restored": restored})
    clean = datamod.from_model(dataset.clean)
    cloudy = datamod.from_model(dataset.cloudy)
    for i in range(min(datamod.N_PREVIEWS, len(restored))):
        datamod.save_preview_row(out / "previews" / f"restored_{i:03d}.png", [*cloudy[i], restored[i], clean[i]])
    if trace is not None:
        write_trace(out / "trace.csv", trace)
    return out / "restored.emrd"


def evaluate_run(cfg: RunConfig):
    """Score ``evaluate.pred`` against the clean images of ``evaluate.split``."""
    _, targets = tensorio.load(Path(cfg.run.data_dir) / f"{cfg.evaluate.split}.emrd")
    pred_path = Path(cfg.evaluate.pred) if cfg.evaluate.pred else Path(cfg.run.out_dir) / "restored.emrd"
    _, preds = tensorio.load(pred_path)
    if cfg.evaluate.pred_tensor not in preds:
        raise ConfigError(f"evaluate.pred_tensor: {cfg.evaluate.pred_tensor!r} not in {pred_path}")
    pred = preds[cfg.evaluate.pred_tensor]
    if pred.ndim == 5:  # a temporal stack: score its first time point
        pred = pred[:, 0]
    report = evaluate(targets["clean"], pred)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"eval_{cfg.evaluate.split}.csv")
    (out / f"eval_{cfg.evaluate.split}_summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    return report
