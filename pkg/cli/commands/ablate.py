# cli/commands/ablate.py
"""
Ablate command for CLI - paired multi-seed comparisons
"""

import click
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from cli.commands.common import console, exit_codes, load_experiment_config
from src.core.experiment import run_ablation, suite_cells
from src.utils.constants import COMPARISON_METRICS
from src.utils.helpers import format_metric, parse_seed_list


@click.command()
@click.option('--suite', required=True, help='Ablation suite name')
@click.option('--seeds', default='0,1,2,3,4', show_default=True, help='Comma-separated seed list')
@click.option('--config', 'config_path', type=click.Path(), help='Base experiment config')
@click.option('--out', 'out_dir', help='Output directory (defaults to runs/ablate_<suite>)')
def ablate(suite, seeds, config_path, out_dir):
    """Run an ablation suite and write comparison.csv and summary.csv"""

    with exit_codes():
        seed_list = parse_seed_list(seeds)
        base = load_experiment_config(config_path, None, None)
        reference, cells = suite_cells(suite, base)
        out_dir = out_dir or f"runs/ablate_{suite}"
        console.print(f"[bold blue]Suite {suite}: {len(cells)} configs x {len(seed_list)} seeds "
                      f"(reference: {reference})[/bold blue]")

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console,
        ) as progress:
            task = progress.add_task("Running cells...", total=len(cells) * len(seed_list))
            started = []

            def on_cell(label, seed):
                if started:
                    progress.update(task, advance=1)
                started.append(label)
                progress.update(task, description=f"{label} (seed {seed})")

            result = run_ablation(suite, seed_list, base, out_dir, on_cell=on_cell)
            progress.update(task, completed=len(cells) * len(seed_list), description="Complete!")

        _display_summary(result)
        console.print(f"[green]✓ Outputs written to {out_dir}[/green]")


def _display_summary(result):
    table = Table(title=f"Suite {result.suite}")
    table.add_column("Config", style="cyan")
    for metric in COMPARISON_METRICS:
        table.add_column(metric, justify="right")
    table.add_column(f"Wins vs {result.reference}", justify="right", style="green")
    for _, row in result.summary.iterrows():
        table.add_row(row['config'], *[format_metric(row[m]) for m in COMPARISON_METRICS],
                      str(int(row['wins_vs_reference'])))
    console.print(table)
