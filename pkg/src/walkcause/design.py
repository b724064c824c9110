"""Two-level orthogonal fractional-factorial designs for conjoint profiles.

Designs are built in the +/-1 coding: base columns form a full factorial,
extra attributes take products (interactions) of base columns, and level 1
maps to +1. Rows are sorted as binary numbers over the base columns,
descending, and columns follow standard (Yates) order of the generating
words. For five attributes this reproduces the eight-profile layout

    LM BC RS OS GT      words: A  B  AB  C  ABC
    1  1  1  1  1
    1  1  1  0  0
    ...
    0  0  1  0  0

The all-zero profile is not among the eight runs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UnsupportedSize

STREET_ATTRIBUTES = ("LM", "BC", "RS", "OS", "GT")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    profiles: np.ndarray
    names: tuple[str, ...] = ()
    words: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.asarray(self.profiles, dtype=np.int8)
        if p.ndim != 2 or p.shape[0] < 2:
            raise ValueError("design needs a 2-D matrix with at least two rows")
        if not np.isin(p, (0, 1)).all():
            raise ValueError("design cells must be 0 or 1")
        if len({tuple(r) for r in p}) != len(p):
            raise ValueError("design has duplicate rows")
        p.setflags(write=False)
        object.__setattr__(self, "profiles", p)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"A{j + 1}" for j in range(p.shape[1])))

    @property
    def runs(self) -> int:
        return self.profiles.shape[0]


@dataclass
class BalanceCheck:
    passed: bool
    unbalanced_columns: list[int] = field(default_factory=list)
    violating_pairs: list[tuple[int, int]] = field(default_factory=list)
    pair_counts: dict[tuple[int, int], dict[tuple[int, int], int]] = field(default_factory=dict)


def _choose_words(k: int, extra: int) -> list[tuple[int, ...]]:
    # highest-order interactions first; ties in Yates order
    candidates = [w for size in range(k, 1, -1) for w in _yates_words(k) if len(w) == size]
    return candidates[:extra]


def _yates_words(k: int) -> list[tuple[int, ...]]:
    words = []
    for mask in range(1, 2 ** k):
        words.append(tuple(b for b in range(k) if mask >> b & 1))
    return words


def generate_design(num_attributes: int, names: Sequence[str] | None = None) -> DesignMatrix:
    """Smallest two-level orthogonal array holding ``num_attributes`` columns."""
    if not 2 <= num_attributes <= 6:
        raise UnsupportedSize(f"num_attributes must be in [2, 6], got {num_attributes}")
    k = math.ceil(math.log2(num_attributes + 1))
    runs = 2 ** k
    base = np.array(list(itertools.product((1, -1), repeat=k)))  # descending binary
    chosen = set(w for w in _yates_words(k) if len(w) == 1)
    chosen.update(_choose_words(k, num_attributes - k))
    words = [w for w in _yates_words(k) if w in chosen]
    cols = [np.prod(base[:, list(w)], axis=1) for w in words]
    profiles = (np.column_stack(cols) > 0).astype(np.int8)
    assert profiles.shape == (runs, num_attributes)
    if names is None:
        names = STREET_ATTRIBUTES if num_attributes == 5 else None
    letters = "ABCDEFG"
    return DesignMatrix(
        profiles,
        names=tuple(names) if names else (),
        words=tuple("".join(letters[b] for b in w) for w in words),
    )


def validate_orthogonality(design: DesignMatrix | np.ndarray) -> BalanceCheck:
    """Check column balance and pairwise level-combination balance."""
    p = design.profiles if isinstance(design, DesignMatrix) else np.asarray(design)
    r, a = p.shape
    report = BalanceCheck(passed=True)
    for j in range(a):
        if 2 * int(p[:, j].sum()) != r:
            report.unbalanced_columns.append(j)
    for i, j in itertools.combinations(range(a), 2):
        counts = {(u, v): int(((p[:, i] == u) & (p[:, j] == v)).sum())
                  for u in (0, 1) for v in (0, 1)}
        report.pair_counts[(i, j)] = counts
        if r % 4 or any(4 * c != r for c in counts.values()):
            report.violating_pairs.append((i, j))
    report.passed = not report.unbalanced_columns and not report.violating_pairs
    return report


def main_effects_rank(design: DesignMatrix) -> int:
    p = design.profiles.astype(float)
    return int(np.linalg.matrix_rank(np.column_stack([np.ones(len(p)), p])))
