"""Closed-form cycle counts for full size reduction on the array (1-based indices)."""

from ..errors import DomainError


def column_op_start(m: int, i: int, j: int) -> int:
    """Cycle at which the column operation between columns j and i < j begins."""
    return m + j - 2 * i


def column_ops_end(m: int, j: int) -> int:
    """Cycle at which all column operations on column j have finished."""
    return 2 * m + j - 3


def full_size_reduction_end(m: int) -> int:
    return 3 * m - 3


def sequential_size_reduction_cost(m: int) -> int:
    """Cycles to size-reduce columns 3..m one after another without the array.

    Summed term by term; the result equals ``2.5 m^2 - 6.5 m + 3``.
    """
    if m < 3:
        raise DomainError(f"defined for m >= 3, got {m}")
    return sum(2 * m + j - 3 for j in range(3, m + 1))
