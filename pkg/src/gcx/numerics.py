"""Exact decimal arithmetic helpers shared by every engine module.

All traded quantities (compute hours, prices, currency, tokens) are
``decimal.Decimal`` so that replaying the same inputs reproduces the same
state bit for bit.  Floats are only allowed at two boundaries: price-path
generation and option premium evaluation, and both quantize to 6 fractional
digits before the value enters the engine.
"""

from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal, getcontext
from fractions import Fraction
from typing import Iterable, Sequence, Union

# Plenty of headroom for products of 6-dp quantities at exchange scale;
# multiplications below this many significant digits are exact.
getcontext().prec = 50

Number = Union[int, str, float, Decimal, Fraction]

# 6 fractional digits for compute hours, prices, currency and token amounts.
QUANTUM = Decimal("0.000001")

ZERO = Decimal(0)
ONE = Decimal(1)

SECONDS_PER_HOUR = 3600
SECONDS_PER_YEAR = 365 * 24 * 3600


def dec(value: Number) -> Decimal:
    """Convert a number to Decimal without binary-float artifacts.

    Floats go through ``repr`` so 0.1 becomes Decimal("0.1"), not the exact
    binary expansion.
    """
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    if isinstance(value, Fraction):
        return Decimal(value.numerator) / Decimal(value.denominator)
    return Decimal(value)


def quantize(value: Number, quantum: Decimal = QUANTUM) -> Decimal:
    """Round to the engine quantum, banker's rounding."""
    return dec(value).quantize(quantum, rounding=ROUND_HALF_EVEN)


def round_half_even_int(value: Union[Decimal, Fraction]) -> int:
    """Round an exact rational to the nearest integer, ties to even."""
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


def dsum(values: Iterable[Decimal]) -> Decimal:
    """Exact sum of decimals (sum() with a Decimal zero start)."""
    total = ZERO
    for v in values:
        total += v
    return total


def pro_rata(total: Decimal, weights: Sequence[Decimal],
             quantum: Decimal = QUANTUM) -> list[Decimal]:
    """Split ``total`` in proportion to ``weights``; parts sum exactly.

    Each part is quantized; accumulated dust is assigned to the largest
    weight (first such index on ties) so the split exhausts the total.
    """
    if not weights:
        return []
    wsum = dsum(weights)
    if wsum == 0:
        parts = [ZERO for _ in weights]
        parts[0] = total
        return parts
    parts = [quantize(total * w / wsum, quantum) for w in weights]
    dust = total - dsum(parts)
    if dust != 0:
        biggest = max(range(len(weights)), key=lambda i: (weights[i], -i))
        parts[biggest] += dust
    return parts


def canonical_str(value: Decimal) -> str:
    """Stable string form used in logs, reports and hashes."""
    return format(value.normalize(), "f")
