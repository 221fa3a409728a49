# cli/commands/common.py
"""
Shared pieces of the CLI verbs: console, config loading and exit-code mapping
"""

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.table import Table

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.core.config import ExperimentConfig
from src.utils.constants import EXIT_CODES
from src.utils.exceptions import (
    ConfigurationError,
    GradientCheckError,
    MixNormError,
    NumericalError,
    TensorError,
)
from src.utils.helpers import format_metric

console = Console()


def load_experiment_config(config_path: Optional[str], preset: Optional[str],
                           seed: Optional[int]) -> ExperimentConfig:
    """Config file, else preset, else defaults; then MIXNORM_SEED and --seed"""
    if config_path and preset:
        raise ConfigurationError('config', 'pass either --config or --preset, not both')
    if config_path:
        config = ExperimentConfig.from_file(config_path)
    elif preset:
        config = ExperimentConfig.from_preset(preset)
    else:
        config = ExperimentConfig().validate()
    return ExperimentConfig.from_env(config, cli_seed=seed)


def exit_code_for(error: MixNormError) -> int:
    if isinstance(error, (NumericalError, TensorError)):
        return EXIT_CODES['NUMERICAL_ERROR']
    if isinstance(error, GradientCheckError):
        return EXIT_CODES['CHECK_FAILED']
    return EXIT_CODES['CONFIG_ERROR']


@contextmanager
def exit_codes():
    """Turn harness errors into the CLI exit-code convention"""
    try:
        yield
    except ConfigurationError as e:
        console.print(f"[red]Configuration error at {e.field_path}: {e}[/red]")
        sys.exit(EXIT_CODES['CONFIG_ERROR'])
    except MixNormError as e:
        console.print(f"[red]{type(e).__name__}: {e}[/red]")
        sys.exit(exit_code_for(e))


def report_table(report, title: str = "Evaluation") -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Target accuracy", format_metric(report.target_acc))
    table.add_row("mAP", format_metric(report.map))
    for rank, value in sorted(report.cmc.items()):
        table.add_row(f"CMC@{rank}", format_metric(value))
    for domain, acc in sorted(report.source_acc.items()):
        table.add_row(f"Source {domain} accuracy", format_metric(acc))
    for domain, distance in sorted(report.center_distances.items()):
        table.add_row(f"Domain {domain} center distance", format_metric(distance))
    return table
