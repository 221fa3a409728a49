# src/core/partition.py
"""
Random domain partitions for mix-normalization.

A partition splits the source domains {0, ..., D-1} into disjoint groups that
share normalization statistics for one forward pass. The group size C is drawn
once per call; groups are consecutive C-sized slices of a shuffled domain list,
and the last group takes whatever remains.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .numerics import RngStream
from src.utils.exceptions import PartitionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    """Ordered, disjoint groups of domain ids covering every source domain"""

    groups: Tuple[Tuple[int, ...], ...]

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(group) for group in self.groups)

    @property
    def num_domains(self) -> int:
        return sum(self.sizes)

    def group_of(self, domain: int) -> int:
        for index, group in enumerate(self.groups):
            if domain in group:
                return index
        raise PartitionError(f"domain {domain} is not covered by partition {self.to_text()}")

    def validate(self, num_domains: int):
        seen = [d for group in self.groups for d in group]
        if any(len(group) == 0 for group in self.groups):
            raise PartitionError(f"empty group in partition {self.to_text()}")
        if len(seen) != len(set(seen)):
            raise PartitionError(f"groups overlap in partition {self.to_text()}")
        if sorted(seen) != list(range(num_domains)):
            raise PartitionError(
                f"partition {self.to_text()} does not cover domains 0..{num_domains - 1}"
            )

    def to_text(self) -> str:
        return "|".join(",".join(str(d) for d in group) for group in self.groups)

    @classmethod
    def from_text(cls, text: str) -> 'Partition':
        try:
            groups = tuple(tuple(int(d) for d in chunk.split(",")) for chunk in text.split("|"))
        except ValueError as e:
            raise PartitionError(f"cannot parse partition '{text}': {e}")
        return cls(groups)

    @classmethod
    def single_group(cls, num_domains: int) -> 'Partition':
        return cls((tuple(range(num_domains)),))

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class PartitionPolicy:
    """Domain count D, maximum group size, and an optional forced group size"""

    num_domains: int
    max_group: int
    fixed_c: Optional[int] = None

    def validate(self):
        if self.num_domains < 1:
            raise PartitionError("no domains")
        if not 1 <= self.max_group <= self.num_domains:
            raise PartitionError(
                f"max_group must lie in [1, {self.num_domains}], got {self.max_group}"
            )
        if self.fixed_c is not None and not 1 <= self.fixed_c <= self.max_group:
            raise PartitionError(
                f"fixed_c must lie in [1, {self.max_group}], got {self.fixed_c}"
            )

    @classmethod
    def from_rule(cls, num_domains: int, rule: str = "d_minus_1",
                  fixed_c: Optional[int] = None) -> 'PartitionPolicy':
        """Map a max-group rule ('d_minus_1' or 'd') onto a policy"""
        if rule == "d_minus_1":
            max_group = max(1, num_domains - 1)
        elif rule == "d":
            max_group = max(1, num_domains)
        else:
            raise PartitionError(f"unknown max_group rule '{rule}'")
        return cls(num_domains=num_domains, max_group=max_group, fixed_c=fixed_c)


def sample_partition(policy: PartitionPolicy, rng: RngStream) -> Partition:
    """Draw C, then carve a shuffled domain list into C-sized groups"""
    if policy.num_domains == 0:
        raise PartitionError("no domains")
    policy.validate()

    if policy.num_domains == 1:
        logger.debug("Single source domain: one group holding domain 0")
        return Partition.single_group(1)

    if policy.fixed_c is not None:
        group_size = policy.fixed_c
    else:
        group_size = int(rng.integers(1, policy.max_group + 1))

    remaining = [int(d) for d in rng.permutation(policy.num_domains)]
    groups = []
    while remaining:
        take = min(group_size, len(remaining))
        groups.append(tuple(sorted(remaining[:take])))
        remaining = remaining[take:]

    partition = Partition(tuple(groups))
    logger.debug(f"Sampled partition {partition} (C={group_size})")
    return partition


def partition_distribution(policy: PartitionPolicy, rng: RngStream,
                           trials: int) -> Dict[Tuple[int, ...], float]:
    """
    Empirical frequency of each group-size multiset.

    Multisets are keyed as size tuples sorted in descending order, e.g. (2, 1).
    """
    if trials < 1:
        raise PartitionError(f"trials must be >= 1, got {trials}")
    counts = Counter()
    for _ in range(trials):
        partition = sample_partition(policy, rng)
        counts[tuple(sorted(partition.sizes, reverse=True))] += 1
    return {sizes: count / trials for sizes, count in sorted(counts.items(), reverse=True)}
