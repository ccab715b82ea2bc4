"""Digamma and trigamma for positive real arguments.

Both use upward recurrence until ``x >= 6`` and then the asymptotic series.
For ``x < 1`` the leading ``1/x**2`` term of trigamma is large enough that
plain float accumulation loses the 1e-10 absolute target, so the recurrence
part is summed exactly in rational arithmetic and rounded once.
"""

import math
from fractions import Fraction

_SHIFT_TO = 6.0

# Bernoulli numbers B_2, B_4, ..., B_16
_B2K = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510)


def _check(x):
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"argument must be positive and finite, got {x}")
    return x


def digamma(x):
    """psi(x) = d/dx log Gamma(x)."""
    x = _check(x)
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for k, b in enumerate(_B2K, start=1):
        series += b / (2 * k) * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x):
    """psi_1(x) = d^2/dx^2 log Gamma(x)."""
    x = _check(x)
    exact = Fraction(0)
    acc = 0.0
    small = x < 1.0
    while x < _SHIFT_TO:
        if small:
            exact += 1 / Fraction(x) ** 2
        else:
            acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2
    power = inv2 * inv
    for b in _B2K:
        series += b * power
        power *= inv2
    if small:
        return float(exact + Fraction(acc + series))
    return acc + series
