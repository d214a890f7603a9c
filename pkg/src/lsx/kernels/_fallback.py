"""Pure-numpy kernel implementations.

These mirror the compiled core bit for bit: same distance formulas, same
tie rules (lowest index first), same bid order in the auction.  The only
difference is speed, which benchmarks/bench_kernels.py quantifies.
"""

from __future__ import annotations

import numpy as np


class AssignmentError(RuntimeError):
    """Auction failed to converge within its bid budget."""


def fps(points: np.ndarray, k: int, first: int) -> np.ndarray:
    """Farthest-point sampling; max-min rule, argmax ties to lowest index."""
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    mind = ((points - points[first]) ** 2).sum(axis=1)
    for t in range(1, k):
        nxt = int(np.argmax(mind))
        chosen[t] = nxt
        d = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(mind, d, out=mind)
    return chosen

def ball_query(points: np.ndarray, centers: np.ndarray, radius: float, max_group: int) -> np.ndarray:
    """Group indices per center: slot 0 is the center itself, the rest are
    the nearest in-radius points ordered by (distance, index), padded with
    the center index when fewer qualify."""
    k = centers.shape[0]
    r2 = radius * radius
    out = np.empty((k, max_group), dtype=np.int64)
    for row, c in enumerate(centers):
        c = int(c)
        d2 = ((points - points[c]) ** 2).sum(axis=1)
        hit = np.flatnonzero(d2 <= r2)
        hit = hit[hit != c]
        order = np.lexsort((hit, d2[hit]))
        take = hit[order][: max_group - 1]
        out[row, 0] = c
        out[row, 1 : 1 + take.size] = take
        out[row, 1 + take.size :] = c
    return out


def nn_sqdist(a: np.ndarray, b: np.ndarray, block: int = 256) -> np.ndarray:
    """Per-point squared distance to the nearest point of b, brute force."""
    out = np.empty(a.shape[0], dtype=np.float64)
    for s in range(0, a.shape[0], block):
        chunk = a[s : s + block]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        out[s : s + block] = d2.min(axis=1)
    return out


def auction(
    cost: np.ndarray,
    eps_start: float,
    eps_min: float,
    theta: float,
    max_bids: int,
    prices: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward auction with epsilon scaling on a square cost matrix.

    Minimizes total cost (internally maximizes negated benefits).  Prices
    persist across scales; assignments reset.  Gauss-Seidel bid order: the
    unassigned stack is LIFO and starts as n-1..0, identical to the core.
    Returns (assignment, final prices); passing the prices from a related
    solve back in warm-starts the search, which stays optimal to within
    n*eps_min regardless of the starting prices.
    """
    n = cost.shape[0]
    prices = np.zeros(n, dtype=np.float64) if prices is None else np.array(prices, dtype=np.float64, copy=True)
    if n == 1:
        return np.zeros(1, dtype=np.int64), prices
    benefit = -cost
    eps = max(eps_start, eps_min)
    assign = np.full(n, -1, dtype=np.int64)
    bids = 0
    while True:
        assign[:] = -1
        owner = np.full(n, -1, dtype=np.int64)
        stack = list(range(n - 1, -1, -1))
        while stack:
            i = stack.pop()
            values = benefit[i] - prices
            j = int(np.argmax(values))
            w1 = values[j]
            values[j] = -np.inf
            w2 = values.max()
            prices[j] += w1 - w2 + eps
            prev = int(owner[j])
            owner[j] = i
            assign[i] = j
            if prev >= 0:
                assign[prev] = -1
                stack.append(prev)
            bids += 1
            if bids > max_bids:
                raise AssignmentError(f"auction exceeded {max_bids} bids (eps={eps:g})")
        if eps <= eps_min:
            return assign, prices
        eps = max(eps / theta, eps_min)
