# cli/commands/eval.py
"""
Eval command for CLI
"""

import click

from cli.commands.common import console, exit_codes, report_table
from src.core.experiment import evaluate_checkpoint, report_payload
from src.utils.constants import RUN_FILES
from src.utils.helpers import atomic_output_dir, write_json


@click.command(name='eval')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(),
              help='Checkpoint written by the train command')
@click.option('--out', 'out_dir', help='Directory for eval_report.json')
def evaluate(checkpoint_path, out_dir):
    """Evaluate a checkpoint on its benchmark's unseen target domain"""

    with exit_codes():
        config, report = evaluate_checkpoint(checkpoint_path)
        console.print(report_table(report, title=f"{config.name} (seed {config.seed})"))
        if out_dir:
            with atomic_output_dir(out_dir) as staging:
                write_json(report_payload(config, report), staging / RUN_FILES['REPORT'])
            console.print(f"[green]✓ Report written to {out_dir}[/green]")
