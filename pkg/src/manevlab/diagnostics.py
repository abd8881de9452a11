"""Functionals of the kinetic state and their time-series records.

Every quantity used by the monitoring suite is computed here, from either
representation: deterministic phase-space grids (all functionals) or particle
ensembles (moment/interaction/pair quantities; Lebesgue norms via a flagged
kernel density estimate).  Records serialize to NDJSON and to a wide CSV with
a fixed, documented column order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import SingularEvaluationError
from .kernels import (
    GridDensity,
    KernelSpec,
    interaction_energy_direct,
    interaction_energy_grid,
    pairwise_interactions,
)
from .particles import ParticleEnsemble, kde_density, silverman_bandwidth
from .phase_grid import PhaseGrid, moments

LOG_FLOOR_REL = 1e-30  # cells below this fraction of max f are treated as vacuum

CSV_COLUMNS = (
    "t",
    "mass",
    "l1",
    "l2",
    "l53",
    "linf",
    "kinetic",
    "x_moment",
    "interaction",
    "entropy",
    "free_energy",
    "dissipation",
    "virial_margin",
    "min_pair_dist",
    "max_density",
    "boundary_loss",
)


@dataclass
class DiagnosticsRecord:
    """One cadence tick of monitored functionals.

    Fields that are not computable for the active representation are None
    (serialized as JSON null / empty CSV cell), never zero-filled.  For
    particle data the Lebesgue norms refer to the KDE spatial density and
    `lp_source` says so.
    """

    t: float
    mass: float
    l1: Optional[float] = None
    l2: Optional[float] = None
    l53: Optional[float] = None
    linf: Optional[float] = None
    kinetic: Optional[float] = None
    x_moment: Optional[float] = None
    interaction: Optional[float] = None
    entropy: Optional[float] = None
    free_energy: Optional[float] = None
    dissipation: Optional[float] = None
    virial_margin: Optional[float] = None
    min_pair_dist: Optional[float] = None
    max_density: Optional[float] = None
    boundary_loss: Optional[float] = None
    lp_source: str = "grid"

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=True)

    @classmethod
    def from_json(cls, line: str) -> "DiagnosticsRecord":
        return cls(**json.loads(line))

    def csv_row(self) -> list:
        return ["" if getattr(self, c) is None else repr(float(getattr(self, c)))
                for c in CSV_COLUMNS]


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_ndjson(path) -> list[DiagnosticsRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DiagnosticsRecord.from_json(line))
    return out


# ---------------------------------------------------------------------------
# grid functionals

def lp_norm(g: PhaseGrid, p: float) -> float:
    if p == math.inf:
        return float(g.values.max())
    if p <= 0:
        raise ValueError("p must be positive or inf")
    return float((np.sum(g.values**p) * g.cell_volume) ** (1.0 / p))


def second_moments(g: PhaseGrid) -> tuple[float, float]:
    """((1/2) integral |v|^2 f, (1/2) integral |x|^2 f)."""
    v2 = sum(m**2 for m in np.meshgrid(*[g.v_coords] * g.d, indexing="ij"))
    x2 = sum(m**2 for m in np.meshgrid(*[g.x_coords] * g.d, indexing="ij"))
    vaxes = tuple(range(g.d, 2 * g.d))
    xaxes = tuple(range(g.d))
    kin = 0.5 * np.sum(g.values.sum(axis=xaxes) * v2) * g.cell_volume
    xmom = 0.5 * np.sum(g.values.sum(axis=vaxes) * x2) * g.cell_volume
    return float(kin), float(xmom)


def entropy_split(g: PhaseGrid) -> tuple[float, float]:
    """(integral f log_+ f, integral f log_- f); log_- h = max(0, -log h)."""
    f = g.values
    floor = LOG_FLOOR_REL * f.max() if f.size else 0.0
    mask = f > floor
    logf = np.log(f[mask])
    w = f[mask] * g.cell_volume
    pos = float(np.sum(w * np.clip(logf, 0.0, None)))
    neg = float(np.sum(w * np.clip(-logf, 0.0, None)))
    return pos, neg


def entropy(g: PhaseGrid) -> float:
    """integral f log f with the 0 log 0 = 0 convention."""
    pos, neg = entropy_split(g)
    return pos - neg


def interaction_energy_of_grid(g: PhaseGrid, spec: KernelSpec) -> float:
    rho, _ = moments(g)
    return interaction_energy_grid(spec, rho)


def free_energy(g: PhaseGrid, spec: Optional[KernelSpec]) -> float:
    """kinetic + entropy - interaction.

    The interaction term is the signed (1/2) integral K rho rho: negative for
    the repulsive family, so subtracting it adds the repulsive self-energy
    and the dissipation-identity form is kept in both cases."""
    kin, _ = second_moments(g)
    ent = entropy(g)
    inter = 0.0
    if spec is not None and (spec.c_manev > 0 or spec.c_coulomb > 0):
        inter = interaction_energy_of_grid(g, spec)
    return kin + ent - inter


def dissipation(g: PhaseGrid) -> float:
    """integral |grad_v f + v f|^2 / f, central differences in v.

    Cells with f below the vacuum floor contribute zero."""
    f = g.values
    floor = LOG_FLOOR_REL * f.max() if f.size else 0.0
    total = np.zeros_like(f)
    for k in range(g.d):
        axis = g.d + k
        grad = np.gradient(f, g.hv, axis=axis)
        shape = [1] * (2 * g.d)
        shape[axis] = g.n_v
        vk = g.v_coords.reshape(shape)
        total += (grad + vk * f) ** 2
    mask = f > floor
    out = np.zeros_like(f)
    out[mask] = total[mask] / f[mask]
    return float(out.sum() * g.cell_volume)


def negative_entropy_bound(g: PhaseGrid) -> tuple[float, float]:
    """(lhs, rhs) of the control on the negative part of the entropy:

        integral f log_- f  <=  (1/2) integral (|x|^2 + |v|^2) f
                                + (1/e) integral exp(-(|x|^2 + |v|^2)/4).

    The Gaussian term is evaluated in closed form over all of phase space."""
    _, neg = entropy_split(g)
    kin, xmom = second_moments(g)
    gauss = (4.0 * math.pi) ** g.d  # integral of exp(-(|x|^2+|v|^2)/4) over R^2d
    return neg, kin + xmom + gauss / math.e


# ---------------------------------------------------------------------------
# virial margin

def virial_margin_particles(
    ens: ParticleEnsemble, c_manev: float, delta_min: float = 1e-12
) -> float:
    """integral |v|^2 f  -  C_M double-integral |x-y|^-2 rho rho.

    The pair term is unregularized (the blow-up criterion is stated for the
    true kernel); coincident particles raise."""
    kin2 = float(np.sum(ens.weights * np.sum(ens.velocities**2, axis=1)))
    if c_manev == 0.0 or ens.n < 2:
        return kin2
    probe = KernelSpec("power-law", c_manev=1.0, alpha=2.0, epsilon=0.0,
                       dim=ens.dim)
    _, min_dist, energy = pairwise_interactions(
        probe, ens.positions, ens.weights, delta_min=delta_min
    )
    if min_dist <= delta_min:
        raise SingularEvaluationError(min_dist, delta_min)
    # energy is (1/2) sum_{i != j}; the pair integral needs the full sum
    return kin2 - c_manev * 2.0 * energy


def virial_margin_grid(g: PhaseGrid, c_manev: float) -> float:
    """Same margin from a phase grid; cell-center pair quadrature, diagonal
    (self-cell) terms excluded."""
    kin, _ = second_moments(g)
    kin2 = 2.0 * kin
    if c_manev == 0.0:
        return kin2
    rho, _ = moments(g)
    mesh = np.meshgrid(*[np.asarray(rho.axis_coords(k)) for k in range(rho.dim)],
                       indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    w = rho.values.reshape(-1) * rho.cell_volume
    keep = w > 0
    probe = KernelSpec("power-law", c_manev=1.0, alpha=2.0, epsilon=0.0,
                       dim=rho.dim)
    energy = interaction_energy_direct(probe, pts[keep], w[keep])
    return kin2 - c_manev * 2.0 * energy


# ---------------------------------------------------------------------------
# record builders

def grid_record(
    g: PhaseGrid,
    spec: Optional[KernelSpec],
    virial_c_manev: Optional[float] = None,
) -> DiagnosticsRecord:
    kin, xmom = second_moments(g)
    ent = entropy(g)
    inter = None
    if spec is not None and (spec.c_manev > 0 or spec.c_coulomb > 0):
        inter = interaction_energy_of_grid(g, spec)
    if virial_c_manev is None:
        virial_c_manev = spec.c_manev if spec is not None else 0.0
    return DiagnosticsRecord(
        t=g.time,
        mass=g.mass,
        l1=lp_norm(g, 1),
        l2=lp_norm(g, 2),
        l53=lp_norm(g, 5.0 / 3.0),
        linf=lp_norm(g, math.inf),
        kinetic=kin,
        x_moment=xmom,
        interaction=inter,
        entropy=ent,
        free_energy=kin + ent - (inter or 0.0),
        dissipation=dissipation(g),
        virial_margin=virial_margin_grid(g, virial_c_manev),
        min_pair_dist=None,
        max_density=float(moments(g)[0].values.max()),
        boundary_loss=g.boundary_loss,
        lp_source="grid",
    )


def particle_record(
    ens: ParticleEnsemble,
    spec: Optional[KernelSpec],
    kde: Optional[GridDensity] = None,
    interaction: Optional[float] = None,
    virial_delta_min: float = 1e-12,
) -> DiagnosticsRecord:
    """Record from an ensemble snapshot.

    `kde` supplies the spatial density for the (flagged) Lebesgue norms and
    max_density; `interaction` may pass a value already computed during the
    step to avoid a second N^2 sweep."""
    kin = 0.5 * float(np.sum(ens.weights * np.sum(ens.velocities**2, axis=1)))
    xmom = 0.5 * float(np.sum(ens.weights * np.sum(ens.positions**2, axis=1)))
    min_dist = None
    if ens.n >= 2:
        probe = KernelSpec("power-law", c_manev=1.0, alpha=1.0, epsilon=1.0,
                           dim=ens.dim)
        _, md, _ = pairwise_interactions(
            probe, ens.positions, ens.weights, delta_min=0.0
        )
        min_dist = float(md)
    if interaction is None and spec is not None and (
        spec.c_manev > 0 or spec.c_coulomb > 0
    ):
        interaction = interaction_energy_direct(spec, ens.positions, ens.weights)
    c_m = spec.c_manev if spec is not None else 0.0
    lp = {}
    max_density = None
    if kde is not None:
        vol = kde.cell_volume
        vals = kde.values
        lp = {
            "l1": float(np.abs(vals).sum() * vol),
            "l2": float((np.sum(vals**2) * vol) ** 0.5),
            "l53": float((np.sum(vals ** (5.0 / 3.0)) * vol) ** 0.6),
            "linf": float(vals.max()),
        }
        max_density = float(vals.max())
    return DiagnosticsRecord(
        t=ens.time,
        mass=ens.mass,
        kinetic=kin,
        x_moment=xmom,
        interaction=interaction,
        virial_margin=virial_margin_particles(ens, c_m, virial_delta_min),
        min_pair_dist=min_dist,
        max_density=max_density,
        boundary_loss=None,
        lp_source="kde",
        **lp,
    )


def default_kde(ens: ParticleEnsemble, half_width: float = 6.0, n: int = 48):
    """Convenience KDE of the spatial density on a centered box."""
    h = 2.0 * half_width / n
    origin = (-half_width + h / 2,) * ens.dim
    return kde_density(
        ens, origin, (h,) * ens.dim, (n,) * ens.dim,
        bandwidth=silverman_bandwidth(ens),
    )
