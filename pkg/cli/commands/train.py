# cli/commands/train.py
"""
Train command for CLI
"""

import click
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn

from cli.commands.common import console, exit_codes, load_experiment_config, report_table
from src.core.experiment import run_experiment, write_run
from src.utils.constants import PRESETS


@click.command()
@click.option('--config', 'config_path', type=click.Path(), help='Experiment config (JSON or YAML)')
@click.option('--preset', type=click.Choice(sorted(PRESETS)), help='Named experiment preset')
@click.option('--out', 'out_dir', help='Output directory (defaults to the config output_dir)')
@click.option('--seed', type=int, help='Override the experiment seed')
def train(config_path, preset, out_dir, seed):
    """Train a model and write checkpoint, metrics.csv and eval_report.json"""

    with exit_codes():
        config = load_experiment_config(config_path, preset, seed)
        out_dir = out_dir or config.output_dir
        _display_config(config, out_dir)

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console,
        ) as progress:
            task = progress.add_task("Training...", total=config.schedule.epochs)

            def on_epoch(row):
                progress.update(task, advance=1,
                                description=f"Epoch {row['epoch']} loss={row['loss_total']:.4f}")

            result = run_experiment(config, on_epoch=on_epoch)

        write_run(result, out_dir)
        console.print(report_table(result.report, title=f"{config.name} (seed {config.seed})"))
        console.print(f"[green]✓ Outputs written to {out_dir}[/green]")


def _display_config(config, out_dir):
    lines = [
        f"[bold]Experiment:[/bold] {config.name}",
        f"[bold]Seed:[/bold] {config.seed}",
        f"[bold]Sampler:[/bold] {config.sampler} ({config.p_ids} ids x {config.k_per_id} per domain)",
        f"[bold]Norms:[/bold] {', '.join(config.model.norm_kinds())}",
        f"[bold]Regularizer:[/bold] {config.loss.regularizer} (lambda={config.loss.lam})",
        f"[bold]Output:[/bold] {out_dir}",
    ]
    console.print(Panel("\n".join(lines), title="Training", border_style="blue"))
