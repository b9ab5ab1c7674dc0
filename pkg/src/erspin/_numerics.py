import math
from typing import Callable

from erspin.errors import NumericError


def bisect_increasing(f: Callable[[float], float], lo: float, hi: float, *,
                      rtol: float = 1e-6, max_iter: int = 200, grow: float = 2.0) -> float:
    """Root of a function that is negative at small x and positive at large x.

    The bracket [lo, hi] is expanded geometrically until it straddles the
    root; the returned value has relative bracket width below ``rtol``.
    """
    if not (0 < lo < hi):
        raise ValueError("bracket must satisfy 0 < lo < hi")
    flo, fhi = f(lo), f(hi)
    n = 0
    while flo > 0:
        hi, fhi = lo, flo
        lo /= grow
        flo = f(lo)
        n += 1
        if n > max_iter:
            raise NumericError("could not bracket root from below")
    while fhi < 0:
        lo, flo = hi, fhi
        hi *= grow
        fhi = f(hi)
        n += 1
        if n > max_iter or not math.isfinite(hi):
            raise NumericError("could not bracket root from above")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rtol * mid:
            return mid
        fm = f(mid)
        if fm < 0:
            lo = mid
        else:
            hi = mid
    raise NumericError("bisection did not converge")
