"""Command-line entry point: gen-data, pretrain, train, eval, gradcheck, sweep."""

import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Optional

import click
import pandas as pd

from simtune.config.loader import load_run_config
from simtune.config.schemas import RunConfig
from simtune.core.gradcheck import failing_checks, run_gradient_checks
from simtune.data.io import read_dataset, write_dataset, write_frame, write_json
from simtune.data.synthetic import generate
from simtune.errors import (
    EXIT_INTERNAL,
    ConfigurationError,
    DivergenceDetectedError,
    GradientCheckFailedError,
    SimtuneError,
)
from simtune.evaluation.evaluator import (
    PROTOCOL_FOR_KIND,
    evaluate,
    write_embeddings,
    write_report,
)
from simtune.manifest import RunManifest, write_manifest
from simtune.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from simtune.models.encoder import snapshot_of
from simtune.monitoring.logging_config import setup_logging
from simtune.sweep import run_sweep
from simtune.training.pretrain import pretrain
from simtune.training.records import write_run_record
from simtune.training.trainer import run_training

logger = logging.getLogger(__name__)

EVAL_SPLITS = ("test_id", "test_ood")
PRETRAINED_FILE = "pretrained.json"
MODEL_FILE = "model.json"


def handle_cli_errors(f):
    """Map toolkit errors to their exit codes."""

    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except SimtuneError as e:
            logger.error(f"{type(e).__name__}: {str(e)}")
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
        except Exception as e:
            logger.exception(f"Unexpected error: {str(e)}")
            click.echo(f"Internal error: {e}", err=True)
            sys.exit(EXIT_INTERNAL)

    return decorated_function


def config_option(f):
    return click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Run configuration (JSON); the packaged default when omitted.",
    )(f)


def seed_option(f):
    return click.option(
        "--seed", type=click.IntRange(0, 2**64 - 1), default=None,
        help="Overrides the configured seed.",
    )(f)


def out_option(f):
    return click.option(
        "--out", "out_dir", type=click.Path(file_okay=False), required=True,
        help="Output directory.",
    )(f)


def data_option(required: bool = True):
    return click.option(
        "--data", "data_dir", type=click.Path(file_okay=False), required=required,
        help="Directory written by gen-data.",
    )


def _start(command, config_path, seed, **inputs):
    config = load_run_config(config_path, {"seed": seed})
    manifest = RunManifest(
        command=command,
        config_path=str(config_path) if config_path else None,
        seed=config.seed,
        config=config.model_dump(),
        inputs={k: str(v) for k, v in inputs.items() if v is not None},
    )
    return config, manifest


def _load_splits(config: RunConfig, data_dir):
    splits = read_dataset(data_dir)
    if splits.spec.kind != config.dataset_kind:
        raise ConfigurationError(
            f"dataset in {data_dir} is '{splits.spec.kind}', "
            f"config expects '{config.dataset_kind}'"
        )
    return splits


def _reference_path(model: Checkpoint, model_path, reference: Optional[str]):
    """Reference checkpoint for drift: explicit, recorded at training, or self."""
    if reference is not None:
        return reference
    recorded = (model.manifest or {}).get("inputs", {}).get("model")
    return recorded if recorded is not None else model_path


@click.group()
@click.option("--log-config", type=click.Path(dir_okay=False), default=None)
def cli(log_config):
    """Drift-constrained fine-tuning toolkit."""
    setup_logging(log_config)


@cli.command("gen-data")
@config_option
@seed_option
@out_option
@handle_cli_errors
def gen_data(config_path, seed, out_dir):
    """Generate the synthetic dataset splits."""
    config, manifest = _start("gen-data", config_path, seed)
    splits = generate(config.synthetic_spec())
    out = Path(out_dir)
    manifest.add_output("dataset", out / "dataset.csv")
    write_dataset(splits, out, manifest.to_document())
    write_manifest(manifest, out)
    click.echo(f"Dataset written to {out}")


@cli.command("pretrain")
@config_option
@seed_option
@data_option()
@out_option
@handle_cli_errors
def pretrain_cmd(config_path, seed, data_dir, out_dir):
    """Pretrain the reference encoder and align its caption table."""
    config, manifest = _start("pretrain", config_path, seed, data=data_dir)
    splits = _load_splits(config, data_dir)
    checkpoint = pretrain(
        splits.pretrain, config.encoder_spec(), config.pretrain_config()
    )
    out = Path(out_dir)
    manifest.add_output("model", out / PRETRAINED_FILE)
    checkpoint.manifest = manifest.to_document()
    save_checkpoint(out / PRETRAINED_FILE, checkpoint)
    write_manifest(manifest, out)
    click.echo(f"Pretrained encoder written to {out / PRETRAINED_FILE}")


@cli.command("train")
@config_option
@seed_option
@data_option()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--alpha", type=click.FloatRange(min=0.0), default=None)
@out_option
@handle_cli_errors
def train_cmd(config_path, seed, data_dir, model_path, alpha, out_dir):
    """Fine-tune a pretrained encoder with the drift penalty."""
    config, manifest = _start(
        "train", config_path, seed, data=data_dir, model=model_path
    )
    if alpha is not None:
        config = config.model_copy(update={"alpha": alpha})
        manifest.config["alpha"] = alpha
    splits = _load_splits(config, data_dir)
    pretrained = load_checkpoint(model_path)
    record = run_training(pretrained, splits.finetune_id, config.train_config())

    out = Path(out_dir)
    manifest.add_output("steps", out / "steps.csv")
    manifest.add_output("run_record", out / "run_record.json")
    write_run_record(record, out, manifest.to_document())
    if record.failed:
        write_manifest(manifest, out)
        raise DivergenceDetectedError(record.failure)

    manifest.add_output("model", out / MODEL_FILE)
    save_checkpoint(
        out / MODEL_FILE,
        Checkpoint(
            record.params,
            record.captions,
            record.class_weights,
            manifest.to_document(),
        ),
    )
    write_manifest(manifest, out)
    click.echo(f"Fine-tuned encoder written to {out / MODEL_FILE}")


@cli.command("eval")
@config_option
@seed_option
@data_option()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option(
    "--reference",
    type=click.Path(dir_okay=False),
    default=None,
    help="Frozen reference for drift; defaults to the model's pretrained input.",
)
@click.option(
    "--split", "splits_", type=click.Choice(EVAL_SPLITS), multiple=True, default=None
)
@out_option
@handle_cli_errors
def eval_cmd(config_path, seed, data_dir, model_path, reference, splits_, out_dir):
    """Evaluate a checkpoint on the ID and OOD test splits."""
    model = load_checkpoint(model_path)
    reference = _reference_path(model, model_path, reference)
    config, manifest = _start(
        "eval", config_path, seed, data=data_dir, model=model_path, reference=reference
    )
    splits = _load_splits(config, data_dir)
    ref = load_checkpoint(reference)
    snapshot = snapshot_of(ref.params, ref.captions)
    protocol = PROTOCOL_FOR_KIND[config.dataset_kind]

    out = Path(out_dir)
    for name in splits_ or EVAL_SPLITS:
        dataset = getattr(splits, name)
        report = evaluate(
            model.params,
            snapshot,
            dataset,
            protocol,
            model.captions,
            config.retrieval_ks,
            config.far_targets,
            config.max_impostor_pairs,
            seed=config.seed,
            config={"model": str(model_path), "reference": str(reference)},
        )
        manifest.add_output(f"metrics_{name}", out / f"metrics_{name}.csv")
        manifest.add_output(f"embeddings_{name}", out / f"embeddings_{name}.csv")
        write_report(report, out, f"metrics_{name}", manifest.to_document())
        write_embeddings(model.params, dataset, out, f"embeddings_{name}")
        click.echo(
            f"{name}: "
            + ", ".join(
                f"{k}={v:.4f}" for k, v in report.metrics.items() if "/" not in k
            )
        )
    write_manifest(manifest, out)


@cli.command("gradcheck")
@config_option
@seed_option
@click.option("--instances", type=int, default=None, help="Overrides the config.")
@out_option
@handle_cli_errors
def gradcheck_cmd(config_path, seed, instances, out_dir):
    """Compare every analytic loss gradient with finite differences."""
    config, manifest = _start("gradcheck", config_path, seed)
    n_instances = instances if instances is not None else config.gradcheck_instances
    report = run_gradient_checks(n_instances, config.seed, config.gradcheck_step)
    failing = failing_checks(report, config.gradcheck_tolerance)

    out = Path(out_dir)
    frame = pd.DataFrame(
        {
            "loss": list(report),
            "max_rel_err": list(report.values()),
            "passed": [name not in failing for name in report],
        }
    )
    manifest.add_output("report", out / "gradcheck.csv")
    write_frame(frame, out / "gradcheck.csv")
    write_json(
        {
            "instances": n_instances,
            "tolerance": config.gradcheck_tolerance,
            "max_rel_err": report,
            "failing": sorted(failing),
            "manifest": manifest.to_document(),
        },
        out / "gradcheck.json",
    )
    write_manifest(manifest, out)
    if failing:
        raise GradientCheckFailedError(failing)
    click.echo(f"All {len(report)} gradient checks passed ({n_instances} instances)")


@cli.command("sweep")
@config_option
@seed_option
@data_option(required=False)
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@out_option
@handle_cli_errors
def sweep_cmd(config_path, seed, data_dir, model_path, out_dir):
    """Train and evaluate once per alpha (and seed) and tabulate the results."""
    config, manifest = _start(
        "sweep", config_path, seed, data=data_dir, model=model_path
    )
    if len(config.alphas) < 2:
        raise ConfigurationError("a sweep needs at least two alpha values")
    splits = _load_splits(config, data_dir) if data_dir else None
    pretrained = load_checkpoint(model_path) if model_path else None
    result = run_sweep(config, splits, pretrained)

    out = Path(out_dir)
    for name, frame in (
        ("sweep", result.summary),
        ("sweep_runs", result.runs),
        ("baseline", result.baseline),
    ):
        manifest.add_output(name, out / f"{name}.csv")
        write_frame(frame, out / f"{name}.csv")
    doc = result.to_document()
    doc["manifest"] = manifest.to_document()
    write_json(doc, out / "sweep.json")
    write_manifest(manifest, out)
    click.echo(f"Swept {len(config.alphas)} alphas; alpha*={result.best_alpha}")


if __name__ == "__main__":
    cli()
