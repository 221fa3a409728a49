# cli/commands/gradcheck.py
"""
Gradcheck command for CLI - finite-difference verification of all gradients
"""

import sys

import click
from rich.table import Table

from cli.commands.common import console, exit_codes
from src.utils.constants import EXIT_CODES
from src.validation.gradcheck import run_gradcheck


@click.command()
@click.option('--seed', default=0, show_default=True, type=int, help='Seed for the random configurations')
@click.option('--trials', default=20, show_default=True, type=int, help='Random configurations per component')
def gradcheck(seed, trials):
    """Compare every analytic gradient with central finite differences"""

    with exit_codes():
        report = run_gradcheck(seed=seed, trials=trials)

    table = Table(title="Gradient check")
    table.add_column("Component", style="cyan")
    table.add_column("Worst relative error", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Trials", justify="right")
    table.add_column("Status")
    for result in report.results:
        status = "[green]ok[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, f"{result.worst_error:.3e}", f"{result.tolerance:.0e}",
                      str(result.trials), status)
    console.print(table)

    if not report.passed:
        console.print(f"[red]❌ Tolerance exceeded: {', '.join(report.failed)}[/red]")
        sys.exit(EXIT_CODES['CHECK_FAILED'])
    console.print("[green]✅ All gradients match[/green]")
