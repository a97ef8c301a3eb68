"""Spline bases on a vector of distinct knots.

M-splines (normalized B-splines scaled to integrate to 1) and I-splines (their
running integrals) following Ramsay's construction.  Order-k bases use boundary
knots with multiplicity k and simple interior knots.  I-splines are computed
exactly as partial sums of the order-(k+1) normalized B-spline basis:

    I_j(x; k) = sum_{i >= j+1} N_i(x; k+1)

which keeps the hot path free of quadrature.  Quadratic I-splines (order 3) are
used for monotone link functions, cubic M-splines (order 4) for baseline risk
functions.
"""

from __future__ import annotations

import numpy as np

from .errors import SpecError


def place_knots(n: int, mode: str, lo: float, hi: float, sample=None, manual=None) -> np.ndarray:
    """Build a strictly increasing knot vector with boundaries [lo, hi].

    Parameters
    ----------
    n : total number of knots, boundaries included (ignored for manual).
    mode : "equi", "quant" or "manual".
    sample : data sample for quantile placement (type-7 linear interpolation).
    manual : interior knots; boundaries are appended.
    """
    if not hi > lo:
        raise SpecError("knot range is empty")
    if mode == "equi":
        if n < 2:
            raise SpecError("need at least two knots")
        knots = np.linspace(lo, hi, n)
    elif mode == "quant":
        if n < 2:
            raise SpecError("need at least two knots")
        if sample is None or len(sample) == 0:
            raise SpecError("quantile knot placement needs a data sample")
        probs = np.arange(1, n - 1) / (n - 1)
        interior = np.quantile(np.asarray(sample, dtype=float), probs)
        knots = np.concatenate([[lo], interior, [hi]])
    elif mode == "manual":
        interior = np.asarray([] if manual is None else manual, dtype=float)
        if interior.size and not (interior.min() > lo and interior.max() < hi):
            raise SpecError("manual interior knots must lie strictly inside the range")
        knots = np.concatenate([[lo], interior, [hi]])
    else:
        raise SpecError(f"unknown knot placement mode {mode!r}")
    if np.any(np.diff(knots) <= 0):
        raise SpecError("knot placement produced non-increasing knots "
                        "(duplicate quantiles or unsorted manual knots)")
    return knots


def n_basis(knots: np.ndarray, order: int) -> int:
    """Number of order-`order` M/I-spline basis functions on `knots`."""
    return len(knots) - 2 + order


def _extended(knots: np.ndarray, order: int) -> np.ndarray:
    k = np.asarray(knots, dtype=float)
    return np.concatenate([np.repeat(k[0], order - 1), k, np.repeat(k[-1], order - 1)])


def _bspline_all(x: np.ndarray, tk: np.ndarray, order: int) -> np.ndarray:
    """All normalized B-splines of `order` on extended knots tk, shape (nb, len(x)).

    Cox-de Boor with 0/0 := 0; the last interval is closed on the right so the
    basis is usable at the upper boundary.
    """
    x = np.asarray(x, dtype=float)
    L = tk.size
    tmax = tk[-1]
    vals = np.zeros((L - 1, x.size))
    for j in range(L - 1):
        if tk[j + 1] > tk[j]:
            inside = (x >= tk[j]) & (x < tk[j + 1])
            if tk[j + 1] == tmax:
                inside = inside | (x == tmax)
            vals[j, inside] = 1.0
    for k in range(2, order + 1):
        for j in range(L - k):
            acc = np.zeros(x.size)
            d_left = tk[j + k - 1] - tk[j]
            if d_left > 0.0:
                acc += (x - tk[j]) / d_left * vals[j]
            d_right = tk[j + k] - tk[j + 1]
            if d_right > 0.0:
                acc += (tk[j + k] - x) / d_right * vals[j + 1]
            vals[j] = acc
    return vals[: L - order]


def mspline_basis(x, knots, order: int) -> np.ndarray:
    """M-spline basis values, shape (n_basis, len(x)); each integrates to 1.

    Zero outside [knots[0], knots[-1]].
    """
    knots = np.asarray(knots, dtype=float)
    tk = _extended(knots, order)
    nb = _bspline_all(np.asarray(x, dtype=float), tk, order)
    spans = tk[order : order + nb.shape[0]] - tk[: nb.shape[0]]
    return nb * (order / spans)[:, None]


def ispline_basis(x, knots, order: int) -> np.ndarray:
    """Integrals of the order-`order` M-splines from knots[0] to x.

    Shape (n_basis, len(x)); 0 below the first knot, 1 above the last.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    tk = _extended(knots, order + 1)
    nb = _bspline_all(x, tk, order + 1)
    tail_sums = np.cumsum(nb[::-1], axis=0)[::-1]
    out = tail_sums[1:]
    out[:, x >= knots[-1]] = 1.0
    out[:, x < knots[0]] = 0.0
    return out
