# cli/commands/export_embeddings.py
"""
Export-embeddings command for CLI
"""

import click

from cli.commands.common import console, exit_codes
from src.core.checkpoint import load_checkpoint
from src.core.experiment import benchmark_for, write_embeddings


@click.command(name='export-embeddings')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(),
              help='Checkpoint written by the train command')
@click.option('--out', 'out_dir', required=True, help='Directory for embeddings.csv and projection.csv')
def export_embeddings(checkpoint_path, out_dir):
    """Write source and target embeddings plus their 2-D PCA projection"""

    with exit_codes():
        model, config = load_checkpoint(checkpoint_path)
        write_embeddings(model, benchmark_for(config), out_dir)
        console.print(f"[green]✓ Embeddings for {config.name} written to {out_dir}[/green]")
