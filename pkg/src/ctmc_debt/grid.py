"""Non-uniform hyperbolic-sine state grids."""

import math

import numpy as np


class Grid:
    """Sorted finite state space with a distinguished anchor node.

    Parameters:
        nodes: strictly increasing states.
        anchor_index: index of the initial state.
    """

    def __init__(self, nodes, anchor_index):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not 0 <= anchor_index < len(nodes):
            raise IndexError("anchor index out of range")
        nodes.setflags(write=False)
        self.nodes = nodes
        self.anchor_index = int(anchor_index)

    @property
    def size(self):
        return len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    @property
    def spacings(self):
        return np.diff(self.nodes)

    @property
    def anchor(self):
        return float(self.nodes[self.anchor_index])

    def shifted(self, amount):
        return Grid(self.nodes + amount, self.anchor_index)

    def __repr__(self):
        return (f"Grid(m={self.size}, [{self.nodes[0]:.6g}, {self.nodes[-1]:.6g}], "
                f"anchor={self.anchor:.6g})")


def build_grid(lower, upper, center, m, alpha):
    """Tavella-Randall sinh grid on [lower, upper] concentrated at ``center``.

    Nodes are r_k = center + alpha*sinh(c2*k/m + c1*(1 - k/m)) for
    k = 2..m-1 with exact endpoints. ``center`` is always a node: it
    replaces a node closer than 1e-12*range, otherwise it is inserted
    and the grid has m + 1 nodes.

    Parameters:
        lower, upper: end states.
        center: state that must lie on the grid (initial rate).
        m: number of nodes before center insertion, at least 3.
        alpha: non-uniformity scale, same units as the states. Small
            values cluster nodes near the center; large values give a
            nearly uniform grid.
    """
    lower, upper, center = float(lower), float(upper), float(center)
    if not lower < upper:
        raise ValueError("lower must be below upper")
    if not lower < center < upper:
        raise ValueError("center must lie strictly inside (lower, upper)")
    if m < 3:
        raise ValueError("m must be at least 3")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    c1 = math.asinh((lower - center) / alpha)
    c2 = math.asinh((upper - center) / alpha)
    if not (math.isfinite(c1) and math.isfinite(c2)):
        raise ValueError("non-finite sinh arguments; increase alpha")
    k = np.arange(1, m + 1, dtype=float)
    u = k / m
    with np.errstate(over="raise", invalid="raise"):
        try:
            nodes = center + alpha * np.sinh(c2 * u + c1 * (1.0 - u))
        except FloatingPointError as exc:
            raise ValueError("sinh overflow while building grid") from exc
    nodes[0] = lower
    nodes[-1] = upper
    if not np.all(np.isfinite(nodes)):
        raise ValueError("non-finite grid nodes")
    nodes = np.maximum.accumulate(nodes)
    tol = 1e-12 * (upper - lower)
    idx = int(np.argmin(np.abs(nodes - center)))
    if abs(nodes[idx] - center) <= tol and 0 < idx < m - 1:
        nodes[idx] = center
    else:
        idx = int(np.searchsorted(nodes, center))
        nodes = np.insert(nodes, idx, center)
    nodes = _dedupe(nodes, idx)
    anchor = int(np.flatnonzero(nodes == center)[0])
    return Grid(nodes, anchor)


def _dedupe(nodes, keep):
    # drop accidental duplicates (possible only for extreme alpha)
    mask = np.ones(len(nodes), dtype=bool)
    mask[1:] = np.diff(nodes) > 0
    mask[keep] = True
    return nodes[mask]


def default_rate_bounds(r0, positive):
    """(-30 r0, 25 r0) for Gaussian rates, (r0/100, 7 r0) for positive rates."""
    if positive:
        return r0 / 100.0, 7.0 * r0
    if r0 <= 0:
        raise ValueError("default Gaussian bounds need r0 > 0")
    return -30.0 * r0, 25.0 * r0


def default_equity_bounds(x0):
    """(0.64 x0, 1.42 x0) around the log-spot transform x0."""
    if x0 == 0:
        raise ValueError("default equity bounds need x0 != 0")
    a = abs(x0)
    return x0 - 0.36 * a, x0 + 0.42 * a


def rate_grid(model, m=160, alpha=0.5, bounds=None):
    """Grid for the short rate (or auxiliary process) of ``model``."""
    lower, upper = bounds if bounds is not None else model.default_bounds()
    return build_grid(lower, upper, model.r0, m, alpha)
