# cli/main.py
#!/usr/bin/env python3
"""
Command Line Interface for the mixnorm harness
"""

import logging
import os
import sys
from pathlib import Path

import click
from dotenv import load_dotenv
from rich.logging import RichHandler

sys.path.insert(0, str(Path(__file__).parent.parent))

from cli.commands.ablate import ablate
from cli.commands.common import console
from cli.commands.eval import evaluate
from cli.commands.export_embeddings import export_embeddings
from cli.commands.gradcheck import gradcheck
from cli.commands.partition_stats import partition_stats
from cli.commands.train import train
from src.utils.constants import LOG_LEVEL_ENV_VAR


def setup_logging(level: str):
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


@click.group()
@click.version_option(version='1.0.0')
@click.option('--log-level', default=None, help='Logging level (defaults to $LOG_LEVEL or WARNING)')
def cli(log_level):
    """MixNorm experiment harness

    Train, evaluate and ablate domain-aware mix-normalization models on
    synthetic multi-domain data, and verify every gradient.
    """
    load_dotenv()
    setup_logging(log_level or os.getenv(LOG_LEVEL_ENV_VAR, 'WARNING'))


# Add commands to CLI group
cli.add_command(train)
cli.add_command(evaluate)
cli.add_command(ablate)
cli.add_command(gradcheck)
cli.add_command(partition_stats)
cli.add_command(export_embeddings)

if __name__ == '__main__':
    cli()
