"""Deterministic phase-space solver on a truncated (x, v) box, d in {1, 2}.

Strang splitting: semi-Lagrangian transport in x, semi-Lagrangian
acceleration in v by the self-consistent kernel force, and an implicit
Chang-Cooper drift-diffusion step in v.  The Chang-Cooper weights make the
cell-centered Maxwellian exp(-|v|^2/2) an exact fixed point, and the
monotone-limited interpolation keeps f nonnegative.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .kernels import ForceFieldResult, GridDensity, KernelSpec, force_field

_CHECKPOINT_MAGIC = b"MLPG"
_CHECKPOINT_VERSION = 1


@dataclass
class PhaseGrid:
    """f >= 0 sampled at cell centers of [-L_x, L_x]^d x [-L_v, L_v]^d."""

    d: int
    L_x: float
    n_x: int
    L_v: float
    n_v: int
    values: np.ndarray = field(repr=False)
    time: float = 0.0
    boundary_loss: float = 0.0  # cumulative mass lost through open x-boundaries

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("phase grid supports d in {1, 2}")
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.n_x,) * self.d + (self.n_v,) * self.d
        if self.values.shape != expected:
            raise ValueError(f"values must have shape {expected}")
        if self.L_x <= 0 or self.L_v <= 0:
            raise ValueError("box half-widths must be positive")
        if np.any(self.values < 0):
            raise ValueError("f must be nonnegative")

    @property
    def hx(self) -> float:
        return 2.0 * self.L_x / self.n_x

    @property
    def hv(self) -> float:
        return 2.0 * self.L_v / self.n_v

    @property
    def x_coords(self) -> np.ndarray:
        return -self.L_x + self.hx * (np.arange(self.n_x) + 0.5)

    @property
    def v_coords(self) -> np.ndarray:
        return -self.L_v + self.hv * (np.arange(self.n_v) + 0.5)

    @property
    def cell_volume(self) -> float:
        return self.hx**self.d * self.hv**self.d

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def boundary_mass_fraction(self) -> float:
        """Fraction of mass carried by the outermost cell layer."""
        total = self.values.sum()
        if total == 0:
            return 0.0
        interior = self.values[
            tuple(slice(1, -1) for _ in range(2 * self.d))
        ].sum()
        return float((total - interior) / total)

    def with_values(self, values, **kw) -> "PhaseGrid":
        return replace(self, values=values, **kw)


def uniform_phase_grid(d, L_x, n_x, L_v, n_v, fill=0.0, time=0.0) -> PhaseGrid:
    shape = (n_x,) * d + (n_v,) * d
    return PhaseGrid(d, L_x, n_x, L_v, n_v, np.full(shape, float(fill)), time)


def maxwellian_values(g: PhaseGrid, mass: float = 1.0, x_profile=None) -> np.ndarray:
    """mass * (x profile) * exp(-|v|^2 / 2), normalized by grid quadrature."""
    v2 = sum(m**2 for m in np.meshgrid(*[g.v_coords] * g.d, indexing="ij"))
    mv = np.exp(-v2 / 2.0)
    if x_profile is None:
        x2 = sum(m**2 for m in np.meshgrid(*[g.x_coords] * g.d, indexing="ij"))
        x_profile = np.exp(-x2 / 2.0)
    vals = x_profile.reshape(x_profile.shape + (1,) * g.d) * mv.reshape(
        (1,) * g.d + mv.shape
    )
    return mass * vals / (vals.sum() * g.cell_volume)


# ---------------------------------------------------------------------------
# moments

def moments(g: PhaseGrid):
    """(spatial density, momentum density) by quadrature over v."""
    vaxes = tuple(range(g.d, 2 * g.d))
    rho_vals = g.values.sum(axis=vaxes) * g.hv**g.d
    origin = tuple([g.x_coords[0]] * g.d)
    spacing = (g.hx,) * g.d
    rho = GridDensity(origin, spacing, np.clip(rho_vals, 0.0, None))
    mom = np.empty(rho_vals.shape + (g.d,))
    for k in range(g.d):
        shape = (1,) * g.d + tuple(
            g.n_v if j == k else 1 for j in range(g.d)
        )
        vk = g.v_coords.reshape(shape)
        mom[..., k] = (g.values * vk).sum(axis=vaxes) * g.hv**g.d
    return rho, mom


# ---------------------------------------------------------------------------
# semi-Lagrangian shifts

def _shift_lines(lines: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Shift each row of `lines` (m, n) by `shifts` cells (m,), cubic Lagrange
    interpolation clipped at zero, zero-valued beyond the ends.

    new[i] = old[i - s]; interpolation weights sum to 1, so interior mass is
    transported exactly for a uniform shift."""
    m, n = lines.shape
    dep = np.arange(n)[None, :] - shifts[:, None]
    i0 = np.floor(dep).astype(np.int64)
    t = dep - i0
    raw = np.zeros_like(lines)
    w = (
        -t * (t - 1) * (t - 2) / 6.0,
        (t + 1) * (t - 1) * (t - 2) / 2.0,
        -(t + 1) * t * (t - 2) / 2.0,
        (t + 1) * t * (t - 1) / 6.0,
    )
    rows = np.arange(m)[:, None]
    for k in range(4):
        j = i0 + (k - 1)
        valid = (j >= 0) & (j < n)
        raw += w[k] * np.where(valid, lines[rows, np.clip(j, 0, n - 1)], 0.0)
    out = np.clip(raw, 0.0, None)
    # rebalance the surplus from clipping negative lobes to zero; capping at
    # the incoming row mass keeps the shift strictly non mass-creating (cells
    # at the open ends otherwise carry interpolation weight slightly above 1)
    target = np.minimum(np.clip(raw.sum(axis=1), 0.0, None), lines.sum(axis=1))
    cur = out.sum(axis=1)
    needs = cur > target
    scale = np.where(needs, target / np.where(needs, cur, 1.0), 1.0)
    return out * scale[:, None]


def _shift_along_axis(values: np.ndarray, axis: int, shift_cells: np.ndarray):
    """Semi-Lagrangian shift along one axis; shift_cells has the shape of the
    remaining axes (constant along the shifted axis)."""
    moved = np.moveaxis(values, axis, -1)
    lead = moved.shape[:-1]
    n = moved.shape[-1]
    shifts = np.broadcast_to(shift_cells, lead).reshape(-1)
    out = _shift_lines(moved.reshape(-1, n), shifts).reshape(lead + (n,))
    return np.moveaxis(out, -1, axis)


def transport_step(g: PhaseGrid, dt: float) -> PhaseGrid:
    """Free transport x -> x + v dt, zero inflow at the open x-boundaries."""
    if dt * g.L_v > g.L_x:
        raise ValueError("transport displacement exceeds the spatial box")
    vals = g.values
    for k in range(g.d):
        shift_shape = [1] * (2 * g.d)
        shift_shape[g.d + k] = g.n_v
        shifts = (g.v_coords * dt / g.hx).reshape(
            tuple(s for i, s in enumerate(shift_shape) if i != k)
        )
        vals = _shift_along_axis(vals, k, shifts)
    lost = (g.values.sum() - vals.sum()) * g.cell_volume
    return g.with_values(vals, time=g.time + dt, boundary_loss=g.boundary_loss + lost)


def force_step(g: PhaseGrid, field_values: np.ndarray, dt: float) -> PhaseGrid:
    """Acceleration v -> v + F(x) dt; F sampled on the x-grid, shape x + (d,)."""
    field_values = np.asarray(field_values, dtype=float)
    if field_values.shape != (g.n_x,) * g.d + (g.d,):
        raise ValueError("force field must have shape x-grid + (d,)")
    fmax = float(np.abs(field_values).max())
    if dt * fmax > g.L_v:
        raise ValueError("velocity displacement exceeds the velocity box")
    vals = g.values
    for k in range(g.d):
        shift_shape = [1] * (2 * g.d)
        for j in range(g.d):
            shift_shape[j] = g.n_x
        shifts = (field_values[..., k] * dt / g.hv).reshape(
            tuple(s for i, s in enumerate(shift_shape) if i != g.d + k)
        )
        vals = _shift_along_axis(vals, g.d + k, shifts)
    lost = (g.values.sum() - vals.sum()) * g.cell_volume
    return g.with_values(vals, boundary_loss=g.boundary_loss + lost)


# ---------------------------------------------------------------------------
# Chang-Cooper drift-diffusion in v

def chang_cooper_generator(n_v: int, L_v: float) -> np.ndarray:
    """Tridiagonal generator L of d/dv . (v f + df/dv) on the cell-centered
    v-grid with exponentially fitted (Chang-Cooper) face weights and
    zero-flux ends.

    L is a Metzler matrix with zero column sums whose kernel contains the
    cell-centered Maxwellian exp(-v_j^2/2): positivity, per-cell mass, the
    Maxwellian fixed point, and relative-entropy decay are all exact for
    the semigroup expm(t*L)."""
    h = 2.0 * L_v / n_v
    vf = -L_v + h * np.arange(1, n_v)  # interior faces
    w = vf * h
    small = np.abs(w) <= 1e-12
    wsafe = np.where(small, 1.0, w)
    delta = np.where(small, 0.5, 1.0 / wsafe - 1.0 / np.expm1(wsafe))
    lo = vf * delta - 1.0 / h  # coefficient of f_j in face flux F_{j+1/2}
    up = vf * (1.0 - delta) + 1.0 / h  # coefficient of f_{j+1}
    # (L f)_j = (F_j - F_{j-1}) / h, boundary fluxes zero
    diag = np.zeros(n_v)
    diag[:-1] += lo / h
    diag[1:] -= up / h
    return np.diag(diag) + np.diag(up / h, k=1) + np.diag(-lo / h, k=-1)


@lru_cache(maxsize=32)
def _fp_propagator(n_v: int, L_v: float, sigma_dt: float) -> np.ndarray:
    prop = expm(sigma_dt * chang_cooper_generator(n_v, L_v))
    if not np.all(np.isfinite(prop)):
        raise FloatingPointError("drift-diffusion propagator is not finite")
    return np.clip(prop, 0.0, None)


def fokker_planck_step(g: PhaseGrid, sigma: float, dt: float) -> PhaseGrid:
    """Exact-in-time Chang-Cooper step for sigma * d/dv . (df/dv + v f).

    Applies the matrix exponential of the discrete generator along each
    v-axis; positivity and per-x-cell mass are preserved exactly and the
    discrete Maxwellian is a fixed point."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0 or dt == 0:
        return g.with_values(g.values.copy())
    prop = _fp_propagator(g.n_v, g.L_v, sigma * dt)
    vals = g.values
    for k in range(g.d):
        axis = g.d + k
        moved = np.moveaxis(vals, axis, 0)
        sol = prop @ moved.reshape(g.n_v, -1)
        vals = np.moveaxis(sol.reshape(moved.shape), 0, axis)
    return g.with_values(vals)


# ---------------------------------------------------------------------------
# composite step

def self_consistent_force(g: PhaseGrid, spec: KernelSpec) -> ForceFieldResult:
    rho, _ = moments(g)
    return force_field(spec, rho)


def strang_step(g: PhaseGrid, spec: KernelSpec | None, sigma: float, dt: float) -> PhaseGrid:
    """transport(dt/2) -> force(dt/2) -> FP(dt) -> force(dt/2) -> transport(dt/2).

    The force field is computed once per step, from the half-transported
    density: that density approximates rho at the step midpoint, which keeps
    the composition time-symmetric and second-order in dt."""
    use_force = spec is not None and (spec.c_manev > 0 or spec.c_coulomb > 0)
    out = transport_step(g, dt / 2)
    if use_force:
        fld = self_consistent_force(out, spec).values
        out = force_step(out, fld, dt / 2)
    out = fokker_planck_step(out, sigma, dt)
    if use_force:
        out = force_step(out, fld, dt / 2)
    out = transport_step(out, dt / 2)
    out = out.with_values(out.values, time=g.time + dt)
    if out.boundary_mass_fraction() > 1e-6:
        warnings.warn(
            "boundary cells carry more than 1e-6 of the mass; "
            "the phase-space box may be too small",
            RuntimeWarning,
            stacklevel=2,
        )
    return out


def export_moments_csv(g: PhaseGrid, path) -> None:
    """Write the spatial density and momentum density to CSV."""
    import csv

    rho, mom = moments(g)
    coords = np.meshgrid(*[g.x_coords] * g.d, indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"x{k}" for k in range(g.d)]
            + ["rho"]
            + [f"momentum{k}" for k in range(g.d)]
        )
        flat_rho = rho.values.reshape(-1)
        flat_mom = mom.reshape(-1, g.d)
        flat_x = np.stack([c.reshape(-1) for c in coords], axis=1)
        for i in range(flat_rho.size):
            writer.writerow(
                [repr(float(v)) for v in flat_x[i]]
                + [repr(float(flat_rho[i]))]
                + [repr(float(v)) for v in flat_mom[i]]
            )


# ---------------------------------------------------------------------------
# checkpoint (documented binary layout, see README)

def save_checkpoint(g: PhaseGrid, path) -> None:
    header = struct.pack(
        "<4sIIIIdddd",
        _CHECKPOINT_MAGIC,
        _CHECKPOINT_VERSION,
        g.d,
        g.n_x,
        g.n_v,
        g.L_x,
        g.L_v,
        g.time,
        g.boundary_loss,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> PhaseGrid:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIIIdddd"))
        magic, version, d, n_x, n_v, L_x, L_v, time, loss = struct.unpack(
            "<4sIIIIdddd", header
        )
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a phase-grid checkpoint")
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        count = n_x**d * n_v**d
        vals = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(
            (n_x,) * d + (n_v,) * d
        )
    return PhaseGrid(d, L_x, n_x, L_v, n_v, vals.copy(), time, loss)
