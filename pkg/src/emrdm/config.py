"""Run configuration: an INI file with one section per component.

Every key maps to exactly one command-line flag ``--section.key-name``. Values
are resolved in the order file < ``EMRDM_SEED`` (master seed only) < flags.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DatasetSpec
from .errors import ConfigError
from .networks import NetConfig
from .precondition import PreconditionParams
from .sampler import SamplerConfig
from .schedule import Schedule
from .trainer import TrainConfig

SEED_ENV = "EMRDM_SEED"

# fixed offsets deriving per-component RNG streams from the master seed
DATA_SEED_OFFSET, TRAIN_SEED_OFFSET, SAMPLER_SEED_OFFSET = 0, 1, 2


@dataclass
class RunSection:
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"
    checkpoint: str = ""  # empty: <out_dir>/checkpoints/best.ckpt


@dataclass
class DataSection:
    n_images: int = 80
    n_test: int = 16
    height: int = 32
    width: int = 32
    L: int = 3
    cloud_density: float = 0.35
    channels: int = 3
    aux_channels: int = 0


@dataclass
class ScheduleSection:
    kind: str = "mean_reverting"
    alpha: float = 3.0


@dataclass
class PreconditionSection:
    stats: str = "data"  # "data": read from the dataset manifest; "fixed": use the values below
    sigma_data: float = 1.0
    sigma_mu: float = 1.0
    sigma_cov: float = 0.9


@dataclass
class NetworkSection:
    kind: str = "multi"
    base_channels: int = 32
    mid_channels: int = 64
    heads: int = 4
    key_dim: int = 8
    use_cond: bool = True


@dataclass
class TrainerSection:
    p_mean: float = -1.2
    p_std: float = 1.2
    batch_size: int = 16
    epochs: int = 100
    max_steps: int = 0
    learning_rate: float = 1e-4
    grad_clip: float = 1.0
    val_images: int = 8
    resume: bool = False


@dataclass
class SamplerSection:
    n_steps: int = 5
    s_churn: float = 1.0
    s_tmin: float = 0.0
    s_tmax: float = 100.0
    s_noise: float = 1.0
    sigma_min: float = 0.001
    sigma_max: float = 100.0
    rho: float = 7.0
    split: str = "test"
    trace: bool = False


@dataclass
class EvaluateSection:
    pred: str = ""  # empty: <out_dir>/restored.emrd
    pred_tensor: str = "restored"
    split: str = "test"


@dataclass
class VerifySection:
    suite: str = "all"
    samples: int = 100_000


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    precondition: PreconditionSection = field(default_factory=PreconditionSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    verify: VerifySection = field(default_factory=VerifySection)

    # -- component views -------------------------------------------------

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(seed=self.run.seed + DATA_SEED_OFFSET, **dataclasses.asdict(self.data))

    def schedule_obj(self) -> Schedule:
        if self.schedule.kind == "generative":
            return Schedule.generative()
        return Schedule(alpha=self.schedule.alpha, kind=self.schedule.kind)

    def precondition_params(self, manifest_stats: dict | None = None) -> PreconditionParams:
        p = self.precondition
        if p.stats == "data":
            if manifest_stats is None:
                raise ConfigError("precondition.stats = data requires a dataset manifest")
            values = manifest_stats
        elif p.stats == "fixed":
            values = {"sigma_data": p.sigma_data, "sigma_mu": p.sigma_mu, "sigma_cov": p.sigma_cov}
        else:
            raise ConfigError(f"precondition.stats must be 'data' or 'fixed', got {p.stats!r}")
        return PreconditionParams(L=self.data.L, **values)

    def net_config(self, cond_channels: int) -> NetConfig:
        n = self.network
        return NetConfig(
            kind=n.kind,
            in_channels=self.data.channels,
            cond_channels=cond_channels,
            out_channels=self.data.channels,
            base_channels=n.base_channels,
            mid_channels=n.mid_channels,
            heads=n.heads,
            key_dim=n.key_dim,
            L=self.data.L,
        )

    def train_config(self, params: PreconditionParams) -> TrainConfig:
        t = self.trainer
        return TrainConfig(
            p_mean=t.p_mean,
            p_std=t.p_std,
            batch_size=t.batch_size,
            epochs=t.epochs,
            max_steps=t.max_steps,
            learning_rate=t.learning_rate,
            grad_clip=t.grad_clip,
            seed=self.run.seed + TRAIN_SEED_OFFSET,
            precondition=params,
            schedule=self.schedule_obj(),
        )

    def sampler_config(self) -> SamplerConfig:
        s = dataclasses.asdict(self.sampler)
        s.pop("split")
        s.pop("trace")
        return SamplerConfig(seed=self.run.seed + SAMPLER_SEED_OFFSET, **s)

    def checkpoint_path(self) -> Path:
        return Path(self.run.checkpoint) if self.run.checkpoint else Path(self.run.out_dir) / "checkpoints" / "best.ckpt"

    def validate(self) -> "RunConfig":
        """Build every component view once so invalid values fail early."""
        self.dataset_spec()
        self.schedule_obj()
        if self.precondition.stats == "fixed":
            self.precondition_params()
        elif self.precondition.stats != "data":
            raise ConfigError(f"precondition.stats must be 'data' or 'fixed', got {self.precondition.stats!r}")
        self.net_config(cond_channels=0)
        self.sampler_config()
        if self.sampler.split not in ("train", "test") or self.evaluate.split not in ("train", "test"):
            raise ConfigError("split must be 'train' or 'test'")
        return self


# -- (de)serialisation --------------------------------------------------------


def _convert(section: str, key: str, typ, raw: str):
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def _field_types(section_cls):
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(section_cls)}


def _sections():
    return {f.name: f.default_factory for f in fields(RunConfig)}


def from_mapping(mapping: dict) -> RunConfig:
    """Build a config from ``{section: {key: raw_string}}``; unknown keys are errors."""
    cfg = RunConfig()
    sections = _sections()
    for section, values in mapping.items():
        if section not in sections:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        types = _field_types(type(target))
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(target, key, _convert(section, key, types[key], str(raw)))
    return cfg


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_mapping({s: dict(parser[s]) for s in parser.sections()})


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dumps(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _sections():
        section = getattr(cfg, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg))


def flag_table():
    """``{flag: (section, key)}`` for every config key."""
    table = {}
    for name, factory in _sections().items():
        for f in fields(factory()):
            table[f"--{name}.{f.name.replace('_', '-')}"] = (name, f.name)
    return table


def apply_overrides(cfg: RunConfig, overrides: dict, env=None) -> RunConfig:
    """Apply ``EMRDM_SEED`` then ``{(section, key): raw}`` overrides in place."""
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg.run.seed = _convert("run", "seed", int, env[SEED_ENV])
    for (section, key), raw in overrides.items():
        target = getattr(cfg, section)
        setattr(target, key, _convert(section, key, _field_types(type(target))[key], str(raw)))
    return cfg
