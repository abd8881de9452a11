"""Interaction-potential family and force evaluation.

All attractive kernels are written in the regularized form

    K(r) = c1 * (eps + r^2)^(-a1/2) + c2 * (eps + r^2)^(-a2/2)

so the combined Manev/Coulomb case, the single-term cases, generic power
laws and the 2D kernel share one evaluation path.  The gradient is

    grad K(x) = -(c1*a1*(eps+r^2)^(-a1/2-1) + c2*a2*(eps+r^2)^(-a2/2-1)) * x.

Pairwise evaluation (particles) and grid evaluation (free-space FFT
convolution with zero padding) are both provided.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.signal import fftconvolve

from .errors import ManevLabError, SingularEvaluationError

FAMILIES = (
    "manev-combined",
    "pure-manev",
    "coulomb",
    "power-law",
    "repulsive-power-law",
    "manev-2d",
)


@dataclass(frozen=True)
class KernelSpec:
    """Interaction kernel: family, coefficients, regularization and dimension."""

    family: str = "manev-combined"
    c_manev: float = 1.0
    c_coulomb: float = 0.0
    alpha: float = 2.0
    epsilon: float = 0.0
    dim: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.c_manev < 0 or self.c_coulomb < 0 or self.epsilon < 0:
            raise ValueError("c_manev, c_coulomb and epsilon must be nonnegative")
        if self.family in ("power-law", "repulsive-power-law") and not 0 < self.alpha <= 2:
            raise ValueError("power-law families require 0 < alpha <= 2")
        if self.family == "manev-2d" and self.dim != 2:
            raise ValueError("manev-2d requires dim = 2")
        if self.family in ("manev-combined", "pure-manev", "coulomb") and self.dim != 3:
            raise ValueError(f"{self.family} requires dim = 3")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")

    @property
    def terms(self) -> tuple[float, float, float, float]:
        """(c1, a1, c2, a2) of the two-term power-law decomposition."""
        fam = self.family
        if fam == "manev-combined":
            return self.c_manev, 2.0, self.c_coulomb, 1.0
        if fam == "pure-manev":
            return self.c_manev, 2.0, 0.0, 1.0
        if fam == "coulomb":
            return self.c_coulomb, 1.0, 0.0, 2.0
        if fam == "power-law":
            return self.c_manev, self.alpha, 0.0, 1.0
        if fam == "repulsive-power-law":
            return -self.c_manev, self.alpha, 0.0, 1.0
        # manev-2d
        return self.c_manev, 1.0, 0.0, 2.0

    @property
    def attractive(self) -> bool:
        return self.family != "repulsive-power-law"


def potential(spec: KernelSpec, r):
    """Kernel value at scalar (or array of) separation distances r >= 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("separation distance must be nonnegative")
    if spec.epsilon == 0.0 and np.any(r == 0):
        raise SingularEvaluationError(0.0)
    c1, a1, c2, a2 = spec.terms
    q = spec.epsilon + r * r
    out = c1 * q ** (-a1 / 2)
    if c2 != 0.0:
        out = out + c2 * q ** (-a2 / 2)
    return out if out.ndim else float(out)


def force(spec: KernelSpec, x):
    """grad K at displacement(s) x, shape (..., dim)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if spec.epsilon == 0.0 and np.any(r2 == 0):
        raise SingularEvaluationError(0.0)
    c1, a1, c2, a2 = spec.terms
    q = spec.epsilon + r2
    g = c1 * a1 * q ** (-a1 / 2 - 1)
    if c2 != 0.0:
        g = g + c2 * a2 * q ** (-a2 / 2 - 1)
    return -np.asarray(g)[..., None] * x


# ---------------------------------------------------------------------------
# pairwise evaluation (numba kernels)
#
# Determinism contract: per-target accumulation runs over j in a fixed order,
# and cross-target reductions happen in numpy afterwards, so results are
# bitwise reproducible for a fixed input.

@njit(cache=True, fastmath=True, error_model="numpy")
def _pair_sums_d3(pos, w, cA, cB, eps):
    """d=3 fast path for kernels cA*(eps+r^2)^-1 + cB*(eps+r^2)^-1/2.

    Returns per-target forces, per-target min pair distance^2 and per-target
    interaction-energy partial sums w_i * sum_{j != i} w_j K(r_ij).
    """
    n = pos.shape[0]
    forces = np.zeros((n, 3))
    erow = np.zeros(n)
    mrow = np.full(n, np.inf)
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        ei = 0.0
        mi = np.inf
        for j in range(n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            if j == i:
                continue
            if r2 < mi:
                mi = r2
            u = 1.0 / (eps + r2)
            s = np.sqrt(u)
            wj = w[j]
            ei += wj * (cA * u + cB * s)
            g = -(2.0 * cA * u + cB * s) * u * wj
            fx += g * dx
            fy += g * dy
            fz += g * dz
        forces[i, 0] = fx
        forces[i, 1] = fy
        forces[i, 2] = fz
        erow[i] = w[i] * ei
        mrow[i] = mi
    return forces, mrow, erow


@njit(cache=True, error_model="numpy")
def _pair_sums_generic(pos, w, c1, a1, c2, a2, eps):
    """Any-dimension, any-exponent path (slower; pow per pair)."""
    n, d = pos.shape
    forces = np.zeros((n, d))
    erow = np.zeros(n)
    mrow = np.full(n, np.inf)
    e1 = -a1 / 2.0
    e2 = -a2 / 2.0
    for i in range(n):
        ei = 0.0
        mi = np.inf
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(d):
                dx = pos[i, k] - pos[j, k]
                r2 += dx * dx
            if r2 < mi:
                mi = r2
            q = eps + r2
            p1 = q ** e1
            p2 = q ** e2 if c2 != 0.0 else 0.0
            ei += w[j] * (c1 * p1 + c2 * p2)
            g = -(c1 * a1 * p1 + c2 * a2 * p2) / q * w[j]
            for k in range(d):
                forces[i, k] += g * (pos[i, k] - pos[j, k])
        erow[i] = w[i] * ei
        mrow[i] = mi
    return forces, mrow, erow


def pairwise_interactions(spec: KernelSpec, positions, weights, delta_min: float = 0.0):
    """Forces, minimum pair distance and interaction energy in one pass.

    The interaction energy returned is (1/2) sum_{i != j} w_i w_j K(x_i - x_j),
    i.e. the symmetric double sum without self terms.
    """
    positions = np.ascontiguousarray(positions, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != weights.shape[0]:
        raise ValueError("positions must be (N, d) with matching weights")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    c1, a1, c2, a2 = spec.terms
    if positions.shape[0] == 1 or (c1 == 0.0 and c2 == 0.0):
        return np.zeros_like(positions), np.inf, 0.0
    if positions.shape[1] == 3 and a1 in (1.0, 2.0) and (c2 == 0.0 or a2 in (1.0, 2.0)):
        cA = (c1 if a1 == 2.0 else 0.0) + (c2 if a2 == 2.0 else 0.0)
        cB = (c1 if a1 == 1.0 else 0.0) + (c2 if a2 == 1.0 else 0.0)
        forces, mrow, erow = _pair_sums_d3(positions, weights, cA, cB, spec.epsilon)
    else:
        forces, mrow, erow = _pair_sums_generic(
            positions, weights, c1, a1, c2, a2, spec.epsilon
        )
    min_dist = float(np.sqrt(mrow.min()))
    energy = 0.5 * float(erow.sum())
    if spec.epsilon == 0.0 and min_dist <= max(delta_min, 0.0):
        raise SingularEvaluationError(min_dist, delta_min)
    return forces, min_dist, energy


def pairwise_force_direct(spec: KernelSpec, positions, weights, delta_min: float = 0.0):
    """F_i = sum_{j != i} w_j grad K(x_i - x_j) by direct summation."""
    forces, _, _ = pairwise_interactions(spec, positions, weights, delta_min)
    return forces


def interaction_energy_direct(spec: KernelSpec, positions, weights, delta_min: float = 0.0):
    """(1/2) sum_{i != j} w_i w_j K(x_i - x_j)."""
    _, _, energy = pairwise_interactions(spec, positions, weights, delta_min)
    return energy


# ---------------------------------------------------------------------------
# Barnes-Hut monopole tree

_LEAF_SIZE = 8
_MAX_DEPTH = 48


class _TreeBuilder:
    def __init__(self, positions, weights):
        self.pos = positions
        self.w = weights
        d = positions.shape[1]
        self.nchild = 2 ** d
        self.center = []
        self.half = []
        self.mass = []
        self.com = []
        self.children = []
        self.leaf_start = []
        self.leaf_count = []
        self.leaf_idx = []

    def build(self):
        lo = self.pos.min(axis=0)
        hi = self.pos.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * float(np.max(hi - lo))
        half = max(half, 1e-300) * 1.0000001
        self._node(np.arange(self.pos.shape[0]), center, half, 0)
        return self

    def _node(self, idx, center, half, depth):
        node = len(self.center)
        self.center.append(center)
        self.half.append(half)
        w = self.w[idx]
        m = float(w.sum())
        self.mass.append(m)
        com = (w[:, None] * self.pos[idx]).sum(axis=0) / m if m > 0 else center
        self.com.append(com)
        self.children.append(np.full(self.nchild, -1, dtype=np.int64))
        if len(idx) <= _LEAF_SIZE or depth >= _MAX_DEPTH:
            self.leaf_start.append(len(self.leaf_idx))
            self.leaf_count.append(len(idx))
            self.leaf_idx.extend(idx.tolist())
            return node
        self.leaf_start.append(-1)
        self.leaf_count.append(0)
        octant = np.zeros(len(idx), dtype=np.int64)
        for k in range(self.pos.shape[1]):
            octant |= (self.pos[idx, k] > center[k]).astype(np.int64) << k
        for c in range(self.nchild):
            sub = idx[octant == c]
            if len(sub) == 0:
                continue
            offset = np.array(
                [(1.0 if (c >> k) & 1 else -1.0) for k in range(self.pos.shape[1])]
            )
            child = self._node(sub, center + 0.5 * half * offset, 0.5 * half, depth + 1)
            self.children[node][c] = child
        return node


@njit(cache=True, error_model="numpy")
def _tree_forces(pos, w, com, mass, half, children, leaf_start, leaf_count,
                 leaf_idx, theta, c1, a1, c2, a2, eps):
    n, d = pos.shape
    nchild = children.shape[1]
    forces = np.zeros((n, d))
    stack = np.empty(4096, dtype=np.int64)
    e1 = -a1 / 2.0
    e2 = -a2 / 2.0
    for i in range(n):
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if leaf_start[node] >= 0:
                for s in range(leaf_count[node]):
                    j = leaf_idx[leaf_start[node] + s]
                    if j == i:
                        continue
                    r2 = 0.0
                    for k in range(d):
                        dx = pos[i, k] - pos[j, k]
                        r2 += dx * dx
                    q = eps + r2
                    g = -(c1 * a1 * q ** e1 + c2 * a2 * q ** e2) / q
                    for k in range(d):
                        forces[i, k] += w[j] * g * (pos[i, k] - pos[j, k])
                continue
            r2 = 0.0
            for k in range(d):
                dx = pos[i, k] - com[node, k]
                r2 += dx * dx
            size = 2.0 * half[node]
            if r2 > 0.0 and size * size < theta * theta * r2:
                q = eps + r2
                g = -(c1 * a1 * q ** e1 + c2 * a2 * q ** e2) / q
                for k in range(d):
                    forces[i, k] += mass[node] * g * (pos[i, k] - com[node, k])
            else:
                for c in range(nchild):
                    child = children[node, c]
                    if child >= 0:
                        stack[top] = child
                        top += 1
    return forces


def pairwise_force_tree(spec: KernelSpec, positions, weights, theta: float = 0.5):
    """Barnes-Hut monopole approximation of pairwise_force_direct."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    positions = np.ascontiguousarray(positions, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    if positions.shape[0] == 1:
        return np.zeros_like(positions)
    c1, a1, c2, a2 = spec.terms
    t = _TreeBuilder(positions, weights).build()
    forces = _tree_forces(
        positions, weights,
        np.ascontiguousarray(t.com), np.array(t.mass), np.array(t.half),
        np.ascontiguousarray(np.stack(t.children)),
        np.array(t.leaf_start, dtype=np.int64), np.array(t.leaf_count, dtype=np.int64),
        np.array(t.leaf_idx, dtype=np.int64) if t.leaf_idx else np.zeros(0, dtype=np.int64),
        theta, c1, a1, c2, a2, spec.epsilon,
    )
    if spec.epsilon == 0.0 and not np.all(np.isfinite(forces)):
        raise SingularEvaluationError(0.0)
    return forces


# ---------------------------------------------------------------------------
# grid densities and free-space convolution

@dataclass
class GridDensity:
    """Sampled nonnegative density on a uniform tensor-product grid."""

    origin: tuple
    spacing: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != len(self.origin) or self.values.ndim != len(self.spacing):
            raise ValueError("origin/spacing must match the value array dimension")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("spacing must be positive")
        if np.any(self.values < -1e-300):
            raise ValueError("density values must be nonnegative")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def axis_coords(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing[k] * np.arange(self.values.shape[k])


@dataclass
class ForceFieldResult:
    """Force field sampled on the density grid, with spacing-guard metadata."""

    values: np.ndarray  # shape rho.shape + (dim,)
    spacing_warning: bool


def _offset_grids(rho: GridDensity):
    """Displacement coordinate arrays for the (2n-1)-point free-space stencil."""
    axes = [
        (np.arange(2 * n - 1) - (n - 1)) * h
        for n, h in zip(rho.values.shape, rho.spacing)
    ]
    return np.meshgrid(*axes, indexing="ij")


def force_field(spec: KernelSpec, rho: GridDensity) -> ForceFieldResult:
    """(grad K * rho) on the grid nodes, by zero-padded FFT convolution."""
    if spec.epsilon <= 0.0:
        raise ValueError("grid force evaluation requires epsilon > 0")
    warn = any(h * h > spec.epsilon for h in rho.spacing)
    if warn:
        warnings.warn(
            "grid spacing h violates h^2 <= epsilon; kernel under-resolved",
            RuntimeWarning,
        )
    mesh = _offset_grids(rho)
    r2 = sum(m * m for m in mesh)
    c1, a1, c2, a2 = spec.terms
    q = spec.epsilon + r2
    g = -(c1 * a1 * q ** (-a1 / 2 - 1) + c2 * a2 * q ** (-a2 / 2 - 1))
    comps = []
    for m in mesh:
        comps.append(fftconvolve(rho.values, g * m, mode="same") * rho.cell_volume)
    out = np.stack(comps, axis=-1)
    if not np.all(np.isfinite(out)):
        raise ManevLabError("non-finite values in convolved force field")
    return ForceFieldResult(out, warn)


def interaction_energy_grid(spec: KernelSpec, rho: GridDensity) -> float:
    """(1/2) integral K(x-y) rho(x) rho(y) dx dy by grid quadrature."""
    if spec.epsilon <= 0.0:
        raise ValueError("grid interaction energy requires epsilon > 0")
    mesh = _offset_grids(rho)
    r2 = sum(m * m for m in mesh)
    c1, a1, c2, a2 = spec.terms
    q = spec.epsilon + r2
    kern = c1 * q ** (-a1 / 2) + c2 * q ** (-a2 / 2)
    conv = fftconvolve(rho.values, kern, mode="same") * rho.cell_volume
    return float(0.5 * np.sum(rho.values * conv) * rho.cell_volume)
