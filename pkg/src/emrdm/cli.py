"""Command-line entry point: ``emrdm <command> [--config FILE] [--section.key VALUE ...]``.

Exit codes: 0 success, 2 configuration error, 3 numeric or oracle failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as configmod
from . import data as datamod
from . import pipeline, verify
from .errors import CheckpointError, ConfigError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

COMMANDS = ("gen-data", "train", "sample", "evaluate", "verify", "report")

# short spellings for frequently used keys
ALIASES = {
    "--seed": ("run", "seed"),
    "--suite": ("verify", "suite"),
    "--s-churn": ("sampler", "s_churn"),
}

log = logging.getLogger("emrdm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emrdm", description="Mean-reverting diffusion for cloud removal.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI run configuration (defaults apply when omitted)")
    parser.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    keys = parser.add_argument_group("configuration keys")
    for flag, (section, key) in configmod.flag_table().items():
        keys.add_argument(flag, dest=f"{section}.{key}", metavar="VALUE")
    for flag, (section, key) in ALIASES.items():
        keys.add_argument(flag, dest=f"alias:{section}.{key}", metavar="VALUE", help=f"alias of --{section}.{key.replace('_', '-')}")
    return parser


def resolve_config(args) -> configmod.RunConfig:
    cfg = configmod.load(args.config) if args.config else configmod.RunConfig()
    overrides = {}
    for dest, value in vars(args).items():
        if value is None or "." not in dest:
            continue
        section, key = dest.removeprefix("alias:").split(".", 1)
        if (section, key) in overrides and dest.startswith("alias:"):
            continue  # the long flag wins over its alias
        overrides[(section, key)] = value
    return configmod.apply_overrides(cfg, overrides).validate()


# -- commands ---------------------------------------------------------------


def cmd_gen_data(cfg):
    out = datamod.gen_data(cfg.dataset_spec(), cfg.run.data_dir)
    stats = datamod.load_manifest(out)["stats"]
    print(f"wrote {out} (sigma_data={stats['sigma_data']:.4f} sigma_mu={stats['sigma_mu']:.4f} "
          f"sigma_cov={stats['sigma_cov']:.4f})")
    return EXIT_OK


def cmd_train(cfg):
    result = pipeline.train_run(cfg)
    last = result.history[-1] if result.history else None
    if last:
        print(f"trained {result.step} steps; last epoch loss {last['train_loss']:.5f} val_psnr {last['val_psnr']:.3f}")
    print(f"checkpoints in {Path(cfg.run.out_dir) / 'checkpoints'}")
    return EXIT_OK


def cmd_sample(cfg):
    path = pipeline.sample_run(cfg)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_evaluate(cfg):
    summary = pipeline.evaluate_run(cfg).summary()
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_verify(cfg):
    try:
        checks = verify.run(cfg.verify.suite, samples=cfg.verify.samples, seed=cfg.run.seed)
    except KeyError as exc:
        raise ConfigError(f"verify.suite: {exc.args[0]}") from exc
    for check in checks:
        print(check.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg):
    """Plot the training curves and summarise evaluation CSVs of a run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(cfg.run.out_dir)
    metrics_path = out / "metrics.csv"
    evals = sorted(out.glob("eval_*.csv"))
    if not metrics_path.exists() and not evals:
        raise FileNotFoundError(f"no metrics.csv or eval_*.csv in {out}")

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    if metrics_path.exists():
        rows = _read_csv(metrics_path)
        epochs = [int(r["epoch"]) for r in rows]
        axes[0].plot(epochs, [float(r["train_loss"]) for r in rows], marker="o")
        axes[1].plot(epochs, [float(r["val_psnr"]) for r in rows], marker="o")
    axes[0].set(xlabel="epoch", ylabel="weighted loss", title="training loss")
    axes[1].set(xlabel="epoch", ylabel="PSNR (dB)", title="validation PSNR")
    fig.tight_layout()
    fig.savefig(out / "report.svg")
    plt.close(fig)

    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "count", "psnr", "ssim", "mae", "sam"])
        for path in evals:
            rows = _read_csv(path)
            means = [sum(float(r[k]) for r in rows) / len(rows) for k in ("psnr", "ssim", "mae", "sam")]
            writer.writerow([path.stem, len(rows), *(f"{m:.6g}" for m in means)])
    print(f"wrote {out / 'report.svg'} and {out / 'report.csv'}")
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            sys.stdout.write(configmod.dumps(cfg))
            return EXIT_OK
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # remaining domain/shape errors come from invalid parameter values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
