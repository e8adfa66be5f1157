"""Training loop: log-normal noise levels, per-slice perturbation, weighted loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .diffusion import perturb
from .errors import ConfigError, NumericError, ShapeError
from .networks import NetConfig, build_network
from .precondition import PreconditionParams, denoise, loss_weight
from .schedule import Schedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    p_mean: float = -1.2
    p_std: float = 1.2
    batch_size: int = 16
    epochs: int = 1
    max_steps: int = 0  # 0 = no cap
    learning_rate: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    precondition: PreconditionParams = field(default_factory=PreconditionParams)
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if not self.p_std > 0:
            raise ConfigError(f"p_std must be positive, got {self.p_std}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("epochs and max_steps must be non-negative")


@dataclass
class Batch:
    """One mini-batch in model space: target ``(B,1,C,H,W)``, stack ``(B,L,C,H,W)``."""

    x0: torch.Tensor
    mu: torch.Tensor
    cond: torch.Tensor | None = None


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step)])


def sample_sigmas(rng: np.random.Generator, n: int, p_mean: float, p_std: float) -> np.ndarray:
    return np.exp(rng.normal(p_mean, p_std, size=n))


def make_optimizer(net, cfg: TrainConfig):
    # adaptive step sizes without momentum
    return torch.optim.RMSprop(net.parameters(), lr=cfg.learning_rate, alpha=0.99, eps=1e-8, momentum=0.0)


def weighted_loss(net, batch: Batch, cfg: TrainConfig, sigmas: np.ndarray, noise: torch.Tensor):
    """``mean_b lambda(sigma_b) * mean_pixels (D - x0)^2`` for fixed noise draws."""
    p, sched = cfg.precondition, cfg.schedule
    B = batch.x0.shape[0]
    t = torch.as_tensor(sigmas, dtype=batch.mu.dtype).reshape(B, 1, 1, 1, 1)
    x_tilde = perturb(batch.x0, batch.mu, sched, t, noise=noise)
    D = denoise(net, p, sched, x_tilde, sigmas, batch.cond)
    lam = torch.as_tensor(loss_weight(p, sched, sigmas), dtype=D.dtype)
    per_sample = (D - batch.x0).square().flatten(1).mean(dim=1)
    return (lam * per_sample).mean()


def train_step(net, optimizer, batch: Batch, cfg: TrainConfig, rng: np.random.Generator, step: int = 0) -> float:
    """One optimizer update; returns the weighted loss before the update."""
    if batch.mu.shape[1] != cfg.precondition.L:
        raise ShapeError(f"batch has L={batch.mu.shape[1]}, config expects L={cfg.precondition.L}")
    B = batch.x0.shape[0]
    sigmas = sample_sigmas(rng, B, cfg.p_mean, cfg.p_std)
    # every time point gets its own noise, all share the one target
    noise = torch.as_tensor(rng.standard_normal(tuple(batch.mu.shape)), dtype=batch.mu.dtype)
    net.train()
    optimizer.zero_grad(set_to_none=True)
    loss = weighted_loss(net, batch, cfg, sigmas, noise)
    if not torch.isfinite(loss):
        raise NumericError(
            f"non-finite loss at step {step}; sigmas={np.array2string(sigmas, precision=4)}"
        )
    loss.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
    optimizer.step()
    return float(loss.detach())


# --------------------------------------------------------------------------
# datasets and checkpoints


@dataclass
class TensorDataset:
    """Clean targets ``(N,C,H,W)``, cloudy stacks ``(N,L,C,H,W)``, optional aux ``(N,L,A,H,W)``.

    Values are in model space (``[-1, 1]``).
    """

    clean: np.ndarray
    cloudy: np.ndarray
    aux: np.ndarray | None = None
    use_cond: bool = True

    def __len__(self):
        return len(self.clean)

    @property
    def L(self):
        return self.cloudy.shape[1]

    def cond_channels(self):
        if not self.use_cond:
            return 0
        return self.cloudy.shape[2] + (0 if self.aux is None else self.aux.shape[2])

    def cond(self, idx):
        if not self.use_cond:
            return None
        parts = [self.cloudy[idx]] + ([] if self.aux is None else [self.aux[idx]])
        return np.concatenate(parts, axis=-3)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        cond = self.cond(idx)
        return Batch(
            x0=torch.as_tensor(self.clean[idx][:, None], dtype=torch.float32),
            mu=torch.as_tensor(self.cloudy[idx], dtype=torch.float32),
            cond=None if cond is None else torch.as_tensor(cond, dtype=torch.float32),
        )


def save_checkpoint(path, net, optimizer, header: dict) -> None:
    tensors = {f"param/{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    names = dict(net.named_parameters())
    opt_state = optimizer.state_dict()["state"] if optimizer is not None else {}
    index_of = {id(p): i for i, p in enumerate(net.parameters())}
    opt_steps = {}
    for name, param in names.items():
        st = opt_state.get(index_of[id(param)])
        if st:
            tensors[f"optim/{name}/square_avg"] = st["square_avg"].cpu().numpy()
            opt_steps[name] = int(st["step"])
    header = dict(header, kind="checkpoint", optimizer_steps=opt_steps)
    tensorio.save(path, header, tensors)


def load_checkpoint(path, optimizer_cfg: TrainConfig | None = None):
    """Rebuild ``(net, optimizer, header)`` from a checkpoint file."""
    header, tensors = tensorio.load(path)
    if header.get("kind") != "checkpoint":
        raise tensorio.CheckpointError(f"{path} is not a model checkpoint")
    net = build_network(NetConfig(**header["network"]), seed=0)
    state = {k[len("param/"):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("param/")}
    net.load_state_dict(state)
    optimizer = None
    if optimizer_cfg is not None:
        optimizer = make_optimizer(net, optimizer_cfg)
        steps = header.get("optimizer_steps", {})
        for name, param in net.named_parameters():
            key = f"optim/{name}/square_avg"
            if key in tensors:
                optimizer.state[param] = {
                    "step": torch.tensor(float(steps[name])),
                    "square_avg": torch.from_numpy(tensors[key]).clone(),
                }
    return net, optimizer, header


# --------------------------------------------------------------------------
# fitting


@dataclass
class TrainedModel:
    net: torch.nn.Module
    optimizer: torch.optim.Optimizer
    history: list
    step: int
    best_checkpoint: Path | None = None


def _batches_per_epoch(n, batch_size):
    return max(1, math.ceil(n / batch_size))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 1_000_003, int(epoch)]).permutation(n)


def fit(
    net,
    dataset: TensorDataset,
    cfg: TrainConfig,
    *,
    optimizer=None,
    start_step: int = 0,
    validate=None,
    ckpt_dir=None,
    header: dict | None = None,
    metrics_path=None,
    step_losses: list | None = None,
):
    """Train for ``cfg.epochs`` epochs of shuffled mini-batches (or ``cfg.max_steps``).

    ``validate(net) -> psnr`` is called after each epoch; the model with the
    best validation PSNR is written to ``ckpt_dir/best.ckpt`` and the latest to
    ``ckpt_dir/last.ckpt``. Resuming passes the restored optimizer and
    ``start_step``; batch order and noise depend only on the seed and step.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    optimizer = optimizer or make_optimizer(net, cfg)
    per_epoch = _batches_per_epoch(len(dataset), cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps:
        total = min(total, cfg.max_steps) if cfg.epochs else cfg.max_steps
    ckpt_dir = Path(ckpt_dir) if ckpt_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    history, epoch_losses, best = [], [], -math.inf
    best_path = None
    for step in range(start_step, total):
        epoch, pos = divmod(step, per_epoch)
        order = epoch_order(cfg.seed, epoch, len(dataset))
        idx = order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
        loss = train_step(net, optimizer, dataset.batch(idx), cfg, step_rng(cfg.seed, step), step)
        epoch_losses.append(loss)
        if step_losses is not None:
            step_losses.append(loss)
        if pos == per_epoch - 1 or step == total - 1:
            record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_psnr": float("nan")}
            if validate is not None:
                net.eval()
                record["val_psnr"] = float(validate(net))
            history.append(record)
            log.info("epoch %d step %d loss %.5f val_psnr %.3f", epoch, step + 1, record["train_loss"], record["val_psnr"])
            if metrics_path:
                _append_metrics(metrics_path, record)
            if ckpt_dir:
                hdr = dict(header or {}, epoch=epoch, step=step + 1, train=_train_header(cfg))
                save_checkpoint(ckpt_dir / "last.ckpt", net, optimizer, hdr)
                score = record["val_psnr"] if validate is not None else -record["train_loss"]
                if score > best:
                    best = score
                    best_path = ckpt_dir / "best.ckpt"
                    save_checkpoint(best_path, net, optimizer, hdr)
            epoch_losses = []
    return TrainedModel(net=net, optimizer=optimizer, history=history, step=total, best_checkpoint=best_path)


def _train_header(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d.pop("precondition")
    d.pop("schedule")
    return d


def _append_metrics(path, record) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_psnr"])
        if new:
            writer.writeheader()
        writer.writerow(record)
