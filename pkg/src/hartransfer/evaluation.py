"""High-level evaluation entry points: the few-shot protocol, method
comparison, and the component ablation suite."""

from __future__ import annotations

import copy
from pathlib import Path

from .config import config_hash
from .data import DatasetBundle
from .errors import ConfigurationError
from .pipeline import prepare_bundles, run_method
from .reporting import MetricsReport, compare_methods  # noqa: F401  (re-exported)

ABLATIONS: dict[str, dict] = {
    "no_simclr": {"ablation": {"simclr_loss": False}},
    "no_consistency": {"ablation": {"consistency": False}},
    "no_source_augmentation": {"ablation": {"source_augmentation": False}},
    "deepconvlstm_encoder": {"encoder": "deepconvlstm"},
}


def run_protocol(
    config: dict,
    source: DatasetBundle | None = None,
    target: DatasetBundle | None = None,
    method: str = "crossdomain",
    run_dir: Path | None = None,
) -> MetricsReport:
    """Run the seeds x folds x n few-shot protocol for one method."""
    if source is None or target is None:
        source, target = prepare_bundles(config)
    return run_method(config, source, target, method=method, run_dir=run_dir)


def ablation_config(config: dict, name: str) -> dict:
    """Apply one named ablation delta on top of a base config."""
    if name not in ABLATIONS:
        raise ConfigurationError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    out = copy.deepcopy(config)
    for key, value in ABLATIONS[name].items():
        if isinstance(value, dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def ablation_suite(
    config: dict,
    source: DatasetBundle | None = None,
    target: DatasetBundle | None = None,
    run_dir: Path | None = None,
) -> dict[str, MetricsReport]:
    """Run the four component ablations, each as a config delta over the base."""
    if source is None or target is None:
        source, target = prepare_bundles(config)
    reports = {}
    for name in ABLATIONS:
        variant = ablation_config(config, name)
        assert config_hash(variant) != config_hash(config)
        sub_dir = Path(run_dir) / "ablations" / name if run_dir is not None else None
        report = run_method(variant, source, target, method="crossdomain", run_dir=sub_dir)
        report.method = f"crossdomain[{name}]"
        report.config_hash = config_hash(variant)
        if sub_dir is not None:
            report.save(Path(run_dir) / "results" / report.method / target.name)
        reports[name] = report
    return reports
