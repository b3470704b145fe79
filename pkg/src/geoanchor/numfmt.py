"""Rounding and fixed-point display helpers.

Every place that rounds a number for display or for pixel snapping goes
through here so that traces, tool responses and the verifier agree on the
exact same digits.
"""
from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal

# display precision per quantity kind
PIXEL_DECIMALS = 0
INTRINSIC_DECIMALS = 2
METER_DECIMALS = 2
RADIAN_DECIMALS = 3


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x!r}")
    r = math.floor(abs(x) + 0.5)
    return int(r) if x >= 0 else -int(r)


def _decimal(x: float, decimals: int) -> Decimal:
    if not math.isfinite(x):
        raise ValueError(f"cannot format non-finite value {x!r}")
    # repr() gives the shortest string that round-trips, so 2.675 rounds to 2.68
    # the way a reader of the printed number expects.
    q = Decimal(1).scaleb(-decimals)
    d = Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)
    if d.is_zero():
        d = abs(d)
    return d


def quantize(x: float, decimals: int) -> float:
    """Round ``x`` half-away-from-zero to ``decimals`` places, as a float."""
    return float(_decimal(x, decimals))


def fmt_fixed(x: float, decimals: int) -> str:
    """Fixed-point string with ``decimals`` places; never prints ``-0.00``."""
    return format(_decimal(x, decimals), "f")


def fmt_exact_half(x: float) -> str:
    """Format a value that is an integer or a half-integer without loss."""
    if x == int(x):
        return str(int(x))
    if 2 * x == int(2 * x):
        return f"{x:.1f}"
    raise ValueError(f"{x!r} is not a multiple of 0.5")
