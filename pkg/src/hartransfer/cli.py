"""Command-line surface tying the pipeline stages together.

Every command takes `--config` (YAML), repeatable `--set key=value`
overrides, `--run-dir` for artifacts and `--seed` to restrict the seed
list. `--datasets-root` (or the HARTRANSFER_DATASETS environment
variable) points at the raw dataset directories.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import evaluation, pipeline
from .config import load_config, validate_config
from .reporting import MetricsReport, compare_methods

logger = logging.getLogger(__name__)


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="YAML experiment config; defaults are used when omitted.")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Dotted config override, repeatable.")(fn)
    fn = click.option("--run-dir", default="runs/default", show_default=True,
                      help="Directory for stage artifacts and results.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Restrict to a single seed (default: config seed list).")(fn)
    fn = click.option("--datasets-root", envvar="HARTRANSFER_DATASETS", default=None,
                      help="Root directory of raw datasets.")(fn)
    return fn


def _load(config_path, overrides, seed, datasets_root) -> dict:
    config = load_config(config_path, list(overrides))
    if datasets_root:
        config["datasets_root"] = datasets_root
    if seed is not None:
        config["seeds"] = [seed]
    diagnostics = validate_config(config)
    errors = [d for d in diagnostics if d.startswith("error:")]
    for d in diagnostics:
        click.echo(d, err=True)
    if errors:
        raise click.UsageError("invalid configuration")
    return config


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Teacher-student transfer learning pipeline for sensor-based HAR."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _stage_command(name):
    def decorator(fn):
        fn = main.command(name)(_common_options(fn))
        return fn
    return decorator


@_stage_command("ingest")
def cmd_ingest(config_path, overrides, run_dir, seed, datasets_root):
    """Ingest the source and target datasets into cached bundles."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    click.echo(f"source {source.name}: {len(source.windows)} windows, "
               f"{len(source.users)} users, {source.n_classes} classes")
    click.echo(f"target {target.name}: {len(target.windows)} windows, "
               f"{len(target.users)} users, {target.n_classes} classes")


def _per_seed_fold(config, fn):
    for s in config["seeds"]:
        for f in config["folds"]:
            fn(f, s)


@_stage_command("teacher")
def cmd_teacher(config_path, overrides, run_dir, seed, datasets_root):
    """Train the teacher on the augmented source dataset."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    _per_seed_fold(config, lambda f, s: pipeline.run_teacher_stage(
        config, source, target, f, s, Path(run_dir)))
    click.echo("teacher stage complete")


@_stage_command("pseudolabel")
def cmd_pseudolabel(config_path, overrides, run_dir, seed, datasets_root):
    """Generate confidence-filtered soft pseudo-labels for the target."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)

    def run(f, s):
        pseudo = pipeline.run_pseudolabel_stage(config, source, target, f, s, Path(run_dir))
        click.echo(f"fold {f} seed {s}: kept {len(pseudo.entries)}, excluded {pseudo.n_excluded}")

    _per_seed_fold(config, run)


@_stage_command("student")
def cmd_student(config_path, overrides, run_dir, seed, datasets_root):
    """Train the student with the CE + KL + NT-Xent loss."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    _per_seed_fold(config, lambda f, s: pipeline.run_student_stage(
        config, source, target, f, s, Path(run_dir)))
    click.echo("student stage complete")


@_stage_command("fewshot")
def cmd_fewshot(config_path, overrides, run_dir, seed, datasets_root):
    """Run the few-shot protocol on student checkpoints."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    report = pipeline.run_method(config, source, target, "crossdomain", Path(run_dir))
    _echo_report(report)


@_stage_command("baseline")
@click.option("--method", type=click.Choice(["naive", "simclr", "cpc", "supervised"]),
              default="naive", show_default=True)
def cmd_baseline(config_path, overrides, run_dir, seed, datasets_root, method):
    """Train and evaluate one baseline method."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    report = pipeline.run_method(config, source, target, method, Path(run_dir))
    _echo_report(report)


@_stage_command("ablate")
def cmd_ablate(config_path, overrides, run_dir, seed, datasets_root):
    """Run the four component ablations as config deltas."""
    config = _load(config_path, overrides, seed, datasets_root)
    source, target = pipeline.prepare_bundles(config)
    reports = evaluation.ablation_suite(config, source, target, Path(run_dir))
    for name, report in reports.items():
        click.echo(f"--- ablation {name} ---")
        _echo_report(report)


@_stage_command("report")
def cmd_report(config_path, overrides, run_dir, seed, datasets_root):
    """Aggregate saved results into a comparison table and plot."""
    config = _load(config_path, overrides, seed, datasets_root)
    results_dir = Path(run_dir) / "results"
    reports = []
    if results_dir.exists():
        for summary in sorted(results_dir.glob("*/*/summary.json")):
            reports.append(MetricsReport.load(summary.parent))
    if not reports:
        raise click.ClickException(
            "no results found; run stage 'fewshot' (and optionally 'baseline') first"
        )
    plot_path, table_path = compare_methods(reports, results_dir)
    click.echo(f"wrote {table_path} and {plot_path}")


@_stage_command("search")
@click.option("--stage", "search_stage", type=click.Choice(["student", "fewshot"]),
              default="student", show_default=True)
@click.option("--budget", type=int, default=None,
              help="Number of sampled configurations (default 50 student / 15 fewshot).")
def cmd_search(config_path, overrides, run_dir, seed, datasets_root, search_stage, budget):
    """Random hyperparameter search, selected by validation F1 at 25 windows/class."""
    from . import search as search_mod

    config = _load(config_path, overrides, seed, datasets_root)
    best, results = search_mod.run_search(config, search_stage, budget)
    click.echo(f"evaluated {len(results)} configurations")
    click.echo(f"best {search_stage} config: {best}")


def _echo_report(report: MetricsReport) -> None:
    click.echo(f"method={report.method} target={report.target}")
    for n in report.n_values:
        click.echo(f"  n={n:<4d} F1 = {report.mean_f1(n):.4f} +/- {report.std_f1(n):.4f}")


if __name__ == "__main__":
    sys.exit(main())
