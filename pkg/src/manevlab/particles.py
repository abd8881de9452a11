"""Stochastic particle solver: interacting Langevin dynamics with friction
-sigma*v, diffusion sqrt(2*sigma) and the pairwise regularized kernel force.

Noise streams are counter-based (Philox keyed by (seed, step index)), so a
trajectory is reproducible bit-for-bit from (config, seed) alone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .errors import DivergenceError, EnvelopeMisfitError, SingularEvaluationError
from .kernels import GridDensity, KernelSpec, pairwise_interactions

SCHEMES = ("euler-maruyama", "kick-exact-ou")
INITIAL_FAMILIES = ("gaussian-gaussian", "uniform-ball-maxwellian", "custom-tabulated")


@dataclass
class ParticleEnsemble:
    """Weighted Monte Carlo representation of the phase-space density."""

    positions: np.ndarray  # (N, d)
    velocities: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    time: float
    seed: int
    step_index: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 2:
            raise ValueError("positions and velocities must both be (N, d)")
        if self.weights.shape != (self.positions.shape[0],):
            raise ValueError("weights must be (N,)")
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one particle")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def rng_state(self) -> tuple[int, int]:
        return (self.seed, self.step_index)

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.positions.copy(), self.velocities.copy(), self.weights.copy(),
            self.time, self.seed, self.step_index,
        )


@dataclass(frozen=True)
class SdeParams:
    """Timestep, friction strength and integration scheme."""

    dt: float
    sigma: float
    kernel: KernelSpec
    scheme: str = "kick-exact-ou"
    delta_min: float = 1e-8
    stability_bound: float = 10.0  # warn when dt*max|F| exceeds this times v-scale

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class InitialDataSpec:
    """Built-in initial phase-space density families."""

    family: str = "gaussian-gaussian"
    mass: float = 1.0
    position_scale: float = 1.0
    velocity_scale: float = 1.0
    velocity_cutoff: float | None = None  # |v| <= cutoff; None = no truncation
    dim: int = 3
    # custom-tabulated only: f sampled on a phase grid (see sample_initial)
    tabulated: object = None

    def __post_init__(self):
        if self.family not in INITIAL_FAMILIES:
            raise ValueError(f"unknown initial family {self.family!r}")
        if self.mass <= 0 or self.position_scale <= 0 or self.velocity_scale <= 0:
            raise ValueError("mass and scales must be positive")
        if self.velocity_cutoff is not None and self.velocity_cutoff <= 0:
            raise ValueError("velocity_cutoff must be positive")

    def truncated_mass(self) -> float:
        """Mass of the initial density after the |v| <= cutoff restriction.

        Computed analytically for the built-in families (not renormalized)."""
        if self.velocity_cutoff is None:
            return self.mass
        if self.family in ("gaussian-gaussian", "uniform-ball-maxwellian"):
            z = (self.velocity_cutoff / self.velocity_scale) ** 2
            return self.mass * float(chi2.cdf(z, df=self.dim))
        grid = self.tabulated
        vnorm2 = sum(
            np.meshgrid(*[grid.v_coords**2] * grid.d, indexing="ij")[k]
            for k in range(grid.d)
        )
        keep = vnorm2 <= self.velocity_cutoff**2
        shape = (1,) * grid.d + keep.shape
        return float((grid.values * keep.reshape(shape)).sum() * grid.cell_volume)


def _rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(np.uint64(seed), np.uint64(step))))


def sample_initial(spec: InitialDataSpec, n: int, seed: int) -> ParticleEnsemble:
    """i.i.d. draws from the (velocity-truncated) initial density.

    All weights equal truncated_mass / n; rejection sampling enforces the
    velocity cutoff without renormalizing the lost mass."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _rng(seed, 0)
    d = spec.dim

    if spec.family == "custom-tabulated":
        return _sample_tabulated(spec, n, rng, seed)

    if spec.family == "gaussian-gaussian":
        x = spec.position_scale * rng.standard_normal((n, d))
    else:  # uniform-ball-maxwellian
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = spec.position_scale * rng.uniform(size=n) ** (1.0 / d)
        x = u * r[:, None]

    v = _sample_truncated_maxwellian(spec, n, rng)
    w = np.full(n, spec.truncated_mass() / n)
    return ParticleEnsemble(x, v, w, time=0.0, seed=seed, step_index=0)


def _sample_truncated_maxwellian(spec, n, rng):
    d = spec.dim
    cut = spec.velocity_cutoff
    if cut is None:
        return spec.velocity_scale * rng.standard_normal((n, d))
    accept_rate = float(chi2.cdf((cut / spec.velocity_scale) ** 2, df=d))
    if accept_rate < 1e-3:
        raise EnvelopeMisfitError(
            f"velocity-cutoff acceptance rate {accept_rate:.2e} below 1e-3"
        )
    out = np.empty((n, d))
    got = 0
    while got < n:
        cand = spec.velocity_scale * rng.standard_normal((max(n - got, 64), d))
        ok = cand[np.sum(cand * cand, axis=1) <= cut * cut]
        take = min(len(ok), n - got)
        out[got : got + take] = ok[:take]
        got += take
    return out


def _sample_tabulated(spec, n, rng, seed):
    """Sample a phase grid: pick cells by mass, jitter uniformly within cells."""
    grid = spec.tabulated
    if grid is None:
        raise ValueError("custom-tabulated requires a tabulated phase grid")
    d = grid.d
    vals = grid.values.copy()
    if spec.velocity_cutoff is not None:
        vnorm2 = sum(
            np.meshgrid(*[grid.v_coords**2] * d, indexing="ij")[k] for k in range(d)
        )
        keep = (vnorm2 <= spec.velocity_cutoff**2).reshape((1,) * d + vnorm2.shape)
        vals = vals * keep
    total = vals.sum()
    if total <= 0:
        raise EnvelopeMisfitError("tabulated density has no mass after cutoff")
    flat_p = (vals / total).ravel()
    cells = rng.choice(flat_p.size, size=n, p=flat_p)
    idx = np.unravel_index(cells, vals.shape)
    centers = np.stack(
        [grid.x_coords[idx[k]] for k in range(d)]
        + [grid.v_coords[idx[d + k]] for k in range(d)],
        axis=1,
    )
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2 * d))
    spacings = np.array([grid.hx] * d + [grid.hv] * d)
    pts = centers + jitter * spacings
    w = np.full(n, float(total * grid.cell_volume) / n)
    return ParticleEnsemble(pts[:, :d], pts[:, d:], w, 0.0, seed, 0)


def step(ens: ParticleEnsemble, p: SdeParams) -> ParticleEnsemble:
    """One timestep; returns a new ensemble, input untouched."""
    forces, _, _ = pairwise_interactions(
        p.kernel, ens.positions, ens.weights, p.delta_min
    )
    return _apply_update(ens, p, forces)


def _apply_update(ens, p, forces):
    dt, sigma = p.dt, p.sigma
    vscale = max(float(np.sqrt(np.mean(ens.velocities**2))), 1e-12)
    fmax = float(np.abs(forces).max()) if ens.n > 1 else 0.0
    if dt * fmax / vscale > p.stability_bound:
        warnings.warn(
            f"timestep stability guard: dt*max|F|/v-scale = {dt * fmax / vscale:.2f}",
            RuntimeWarning,
        )
    v = ens.velocities
    x = ens.positions
    if sigma > 0:
        noise = _rng(ens.seed, ens.step_index + 1).standard_normal(v.shape)
    if p.scheme == "euler-maruyama":
        v_new = v + forces * dt - (sigma * dt) * v
        if sigma > 0:
            v_new = v_new + math.sqrt(2.0 * sigma * dt) * noise
        x_new = x + v_new * dt
    else:  # kick-exact-ou
        v_new = v + forces * dt
        if sigma > 0:
            decay = math.exp(-sigma * dt)
            v_new = decay * v_new + math.sqrt(1.0 - decay * decay) * noise
        x_new = x + v_new * dt
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise DivergenceError(ens.step_index + 1)
    return ParticleEnsemble(
        x_new, v_new, ens.weights.copy(), ens.time + dt, ens.seed, ens.step_index + 1
    )


@dataclass
class CollapseEvent:
    time: float
    step_index: int
    reason: str


@dataclass
class RunResult:
    records: list
    ensemble: ParticleEnsemble
    collapse: CollapseEvent | None = None


def run(
    ens: ParticleEnsemble,
    p: SdeParams,
    t_end: float,
    cadence: float,
    observer=None,
    on_record=None,
    energy_ratio_max: float = 1e3,
    collapse_delta_min: float | None = None,
) -> RunResult:
    """March to t_end, invoking the observer at the output cadence.

    observer(ens, interaction_energy) -> record; records are collected (and
    streamed through on_record when given).  Aborts with a collapse event when
    the minimum pair distance drops below the guard or |interaction energy|
    exceeds energy_ratio_max times the initial kinetic energy.
    """
    if t_end < ens.time:
        raise ValueError("t_end must be >= current ensemble time")
    if t_end == ens.time:
        return RunResult([], ens, None)
    delta_guard = p.delta_min if collapse_delta_min is None else collapse_delta_min
    records = []
    kinetic0 = 0.5 * float(np.sum(ens.weights * np.sum(ens.velocities**2, axis=1)))
    energy_cap = energy_ratio_max * max(kinetic0, 1e-300)

    def emit(current, energy):
        if observer is not None:
            rec = observer(current, energy)
            records.append(rec)
            if on_record is not None:
                on_record(rec)

    forces, min_dist, energy = pairwise_interactions(
        p.kernel, ens.positions, ens.weights, 0.0
    )
    emit(ens, energy)
    next_output = ens.time + cadence
    nsteps = int(round((t_end - ens.time) / p.dt))
    current = ens
    for _ in range(nsteps):
        current = _apply_update(current, p, forces)
        try:
            forces, min_dist, energy = pairwise_interactions(
                p.kernel, current.positions, current.weights, 0.0
            )
        except SingularEvaluationError:
            return RunResult(
                records,
                current,
                CollapseEvent(current.time, current.step_index, "coincident particles"),
            )
        collapsed = None
        if min_dist < delta_guard:
            collapsed = f"min pair distance {min_dist:.3e} below guard {delta_guard:.3e}"
        elif abs(energy) > energy_cap:
            collapsed = (
                f"|interaction energy| {abs(energy):.3e} exceeded "
                f"{energy_ratio_max:g} x initial kinetic energy"
            )
        if collapsed is not None:
            emit(current, energy)
            return RunResult(
                records, current, CollapseEvent(current.time, current.step_index, collapsed)
            )
        if current.time >= next_output - 0.5 * p.dt:
            emit(current, energy)
            next_output += cadence
    return RunResult(records, current, None)


def silverman_bandwidth(ens: ParticleEnsemble) -> float:
    """Silverman's rule per spatial coordinate, averaged across axes."""
    n, d = ens.n, ens.dim
    s = float(np.mean(np.std(ens.positions, axis=0)))
    return s * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde_density(
    ens: ParticleEnsemble,
    origin,
    spacing,
    shape,
    bandwidth: float | None = None,
) -> GridDensity:
    """Gaussian binned KDE of the spatial density on the given grid."""
    from scipy.ndimage import gaussian_filter

    if bandwidth is None:
        bandwidth = silverman_bandwidth(ens)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    origin = tuple(origin)
    spacing = tuple(spacing)
    edges = [
        origin[k] - spacing[k] / 2 + spacing[k] * np.arange(shape[k] + 1)
        for k in range(ens.dim)
    ]
    hist, _ = np.histogramdd(ens.positions, bins=edges, weights=ens.weights)
    inside = float(hist.sum())
    if inside < 0.99 * ens.mass:
        warnings.warn(
            f"grid covers only {inside / ens.mass:.1%} of the particle mass",
            RuntimeWarning,
        )
    sigmas = [bandwidth / h for h in spacing]
    vals = gaussian_filter(hist, sigma=sigmas, mode="constant") / np.prod(spacing)
    vals = np.clip(vals, 0.0, None)
    return GridDensity(origin, spacing, vals)
