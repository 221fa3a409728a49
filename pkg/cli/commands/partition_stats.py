# cli/commands/partition_stats.py
"""
Partition-stats command for CLI
"""

from typing import Optional

import click

from cli.commands.common import exit_codes
from src.core.numerics import RngStream
from src.core.partition import PartitionPolicy, partition_distribution
from src.utils.exceptions import ConfigurationError, PartitionError


@click.command(name='partition-stats')
@click.option('--domains', 'num_domains', required=True, type=int, help='Number of source domains D')
@click.option('--max-group', type=int, help='Maximum group size (defaults to max(1, D-1))')
@click.option('--fixed-c', type=int, help='Force every group to this size')
@click.option('--trials', default=10000, show_default=True, type=int, help='Number of sampled partitions')
@click.option('--seed', default=0, show_default=True, type=int, help='Sampling seed')
def partition_stats(num_domains, max_group, fixed_c, trials, seed):
    """Print the group-size multiset histogram as CSV lines: sizes,frequency"""

    with exit_codes():
        policy = _policy(num_domains, max_group, fixed_c)
        for sizes, frequency in partition_distribution(policy, RngStream(seed), trials).items():
            click.echo(f"{'+'.join(str(s) for s in sizes)},{frequency:.6f}")


def _policy(num_domains: int, max_group: Optional[int], fixed_c: Optional[int]) -> PartitionPolicy:
    if max_group is None:
        policy = PartitionPolicy.from_rule(max(num_domains, 0), 'd_minus_1', fixed_c)
    else:
        policy = PartitionPolicy(num_domains=num_domains, max_group=max_group, fixed_c=fixed_c)
    try:
        policy.validate()
    except PartitionError as e:
        raise ConfigurationError('partition', str(e))
    return policy
