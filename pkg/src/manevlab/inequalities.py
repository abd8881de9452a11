"""Numerical verification of the functional inequalities behind the a-priori
estimates: the L^p growth bound, the density/kinetic-energy interpolation,
the interaction-energy bound with its exponent identity, and the
Calderon-Zygmund-type boundedness of the singular force map.

Constants that the estimates leave unnamed are treated as empirical family
suprema: the checks assert boundedness and scale invariance (the properties
the proofs actually use), not a specific constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .kernels import GridDensity, KernelSpec, force_field, interaction_energy_grid
from .phase_grid import PhaseGrid

GENERATORS = ("gaussian-mixture", "bump-sum", "random-nonneg-trig")

# unit-ball volumes: the proof's two-piece split bounds the small-|v| part of
# the density by vol(B_R) * ||f||_inf
BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


@dataclass(frozen=True)
class DensityFamily:
    """Reproducible generator of nonnegative test densities."""

    generator: str = "gaussian-mixture"
    dim: int = 3
    sample_count: int = 20
    seed: int = 0
    width_range: tuple[float, float] = (0.6, 1.6)
    center_spread: float = 1.2
    grid_n: int = 32
    half_width: float = 6.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def _mesh(self):
        h = 2.0 * self.half_width / self.grid_n
        ax = -self.half_width + h * (np.arange(self.grid_n) + 0.5)
        return np.meshgrid(*[ax] * self.dim, indexing="ij"), ax[0], h

    def _field(self, rng) -> np.ndarray:
        mesh, _, _ = self._mesh()
        lo, hi = self.width_range
        out = np.zeros(mesh[0].shape)
        if self.generator == "gaussian-mixture":
            for _ in range(rng.integers(1, 4)):
                c = rng.uniform(-self.center_spread, self.center_spread, self.dim)
                s = rng.uniform(lo, hi)
                a = rng.uniform(0.2, 1.0)
                r2 = sum((m - ck) ** 2 for m, ck in zip(mesh, c))
                out += a * np.exp(-r2 / (2 * s**2))
        elif self.generator == "bump-sum":
            for _ in range(rng.integers(1, 4)):
                c = rng.uniform(-self.center_spread, self.center_spread, self.dim)
                R = rng.uniform(max(lo, 0.8), hi + 1.0)
                a = rng.uniform(0.2, 1.0)
                r2 = sum((m - ck) ** 2 for m, ck in zip(mesh, c))
                out += a * np.clip(1.0 - r2 / R**2, 0.0, None) ** 2
        else:  # random-nonneg-trig: squared trig polynomial under an envelope
            wave = np.zeros(mesh[0].shape)
            for _ in range(3):
                k = rng.integers(0, 3, self.dim)
                phi = rng.uniform(0, 2 * math.pi)
                a = rng.uniform(0.3, 1.0)
                wave += a * np.cos(sum(ki * m for ki, m in zip(k, mesh)) + phi)
            r2 = sum(m**2 for m in mesh)
            out = wave**2 * np.exp(-r2 / 4.0)
        return out

    def spatial_samples(self) -> list[GridDensity]:
        """Tabulated spatial densities, normalized to unit mass."""
        rng = np.random.default_rng(self.seed)
        _, origin0, h = self._mesh()
        out = []
        for _ in range(self.sample_count):
            vals = self._field(rng)
            vals = vals / (vals.sum() * h**self.dim)
            out.append(GridDensity((origin0,) * self.dim, (h,) * self.dim, vals))
        return out

    def phase_samples(self) -> list[tuple[GridDensity, GridDensity]]:
        """Separable phase-space densities f(x, v) = G(x) H(v) as a pair of
        tabulated factors (same box for both)."""
        rng = np.random.default_rng(self.seed)
        _, origin0, h = self._mesh()
        out = []
        for _ in range(self.sample_count):
            G = self._field(rng)
            H = self._field(rng)
            scale = rng.uniform(0.1, 10.0)  # exercise the ||f||_inf term
            out.append(
                (
                    GridDensity((origin0,) * self.dim, (h,) * self.dim, scale * G),
                    GridDensity((origin0,) * self.dim, (h,) * self.dim, H),
                )
            )
        return out


@dataclass
class InequalityReport:
    name: str
    lhs: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    max_ratio: float = math.nan
    passed: bool = False
    tolerance: float = 0.0
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": [float(v) for v in self.lhs],
            "rhs": [float(v) for v in self.rhs],
            "max_ratio": float(self.max_ratio),
            "passed": bool(self.passed),
            "tolerance": float(self.tolerance),
            "metadata": self.metadata,
        }


def _grid_lp(rho: GridDensity, p: float) -> float:
    if p == math.inf:
        return float(rho.values.max())
    return float((np.sum(rho.values**p) * rho.cell_volume) ** (1.0 / p))


# ---------------------------------------------------------------------------
# L^p growth along a run

_P_FIELD = {1.0: "l1", 2.0: "l2", 5.0 / 3.0: "l53", math.inf: "linf"}


def check_lp_growth(records, p, sigma, d, tol: float = 1e-3) -> InequalityReport:
    """||f(t)||_p <= ||f_0||_p * exp(d sigma (1 - 1/p) t) * (1 + tol)."""
    try:
        fieldname = _P_FIELD[float(p)]
    except KeyError:
        raise ValueError(f"p must be one of {sorted(_P_FIELD)}")
    records = list(records)
    if not records:
        raise ValueError("empty record series")
    if any(r.lp_source != "grid" for r in records):
        raise ValueError("L^p growth check requires grid-based norms, not KDE")
    base = getattr(records[0], fieldname)
    t0 = records[0].t
    rate = 0.0 if p == 1.0 else d * sigma * (1.0 - (0.0 if p == math.inf else 1.0 / p))
    if p == math.inf:
        rate = d * sigma
    lhs, rhs = [], []
    for rec in records:
        lhs.append(getattr(rec, fieldname))
        rhs.append(base * math.exp(rate * (rec.t - t0)))
    ratios = [l / r for l, r in zip(lhs, rhs)]
    max_ratio = max(ratios)
    return InequalityReport(
        name="lp-growth",
        lhs=lhs,
        rhs=rhs,
        max_ratio=max_ratio,
        passed=max_ratio <= 1.0 + tol,
        tolerance=tol,
        metadata={"p": "inf" if p == math.inf else p, "sigma": sigma, "d": d,
                  "rate": rate},
    )


# ---------------------------------------------------------------------------
# density / kinetic-energy interpolation

def density_interpolation_terms(G: GridDensity, H: GridDensity):
    """(lhs, rhs) for separable f = G(x) H(v): the spatial density is
    G * integral(H), and

        ||rho||_{(d+2)/d} <= (c_d ||f||_inf + 1) (iint |v|^2 f)^{d/(d+2)}

    with c_d the unit-ball volume (the proof's split at R = m2^{1/(d+2)})."""
    d = G.dim
    c_d = BALL_VOLUME[d]
    mass_H = H.mass
    p = (d + 2.0) / d
    rho_lp = mass_H * _grid_lp(G, p)
    f_inf = float(G.values.max() * H.values.max())
    mesh = np.meshgrid(*[np.asarray(H.axis_coords(k)) for k in range(d)],
                       indexing="ij")
    v2 = sum(m**2 for m in mesh)
    m2 = float(G.mass * np.sum(v2 * H.values) * H.cell_volume)
    rhs = (c_d * f_inf + 1.0) * m2 ** (d / (d + 2.0))
    return rho_lp, rhs


def check_density_interpolation(samples) -> InequalityReport:
    """samples: iterable of (G, H) pairs or PhaseGrid states."""
    lhs, rhs = [], []
    dims = set()
    for s in samples:
        if isinstance(s, PhaseGrid):
            l, r = _phase_grid_interpolation_terms(s)
            dims.add(s.d)
        else:
            G, H = s
            l, r = density_interpolation_terms(G, H)
            dims.add(G.dim)
        lhs.append(l)
        rhs.append(r)
    ratios = [l / r for l, r in zip(lhs, rhs)]
    max_ratio = max(ratios)
    return InequalityReport(
        name="density-interpolation",
        lhs=lhs,
        rhs=rhs,
        max_ratio=max_ratio,
        passed=max_ratio <= 1.0,
        tolerance=0.0,
        metadata={"dims": sorted(dims),
                  "constants": {d: BALL_VOLUME[d] for d in sorted(dims)}},
    )


def _phase_grid_interpolation_terms(g: PhaseGrid):
    from .phase_grid import moments

    d = g.d
    rho, _ = moments(g)
    p = (d + 2.0) / d
    rho_lp = _grid_lp(rho, p)
    f_inf = float(g.values.max())
    v2 = sum(m**2 for m in np.meshgrid(*[g.v_coords] * d, indexing="ij"))
    m2 = float(np.sum(g.values.sum(axis=tuple(range(d))) * v2) * g.cell_volume)
    return rho_lp, (BALL_VOLUME[d] * f_inf + 1.0) * m2 ** (d / (d + 2.0))


# ---------------------------------------------------------------------------
# interpolation exponent identity

def interpolation_exponents(p, q, gamma, lam):
    """alpha, beta solving 1/p = 1 - alpha + alpha/gamma (same for q, beta),
    and their sum; exact over rationals.  Requires 1 <= p, q <= gamma and the
    pairing constraint 1/p + 1/q + lam/3 = 2."""
    p, q, gamma, lam = (Fraction(v) for v in (p, q, gamma, lam))
    if not (1 <= p <= gamma and 1 <= q <= gamma):
        raise ValueError("need 1 <= p, q <= gamma")
    if Fraction(1, 1) / p + Fraction(1, 1) / q + lam / 3 != 2:
        raise ValueError("exponents must satisfy 1/p + 1/q + lambda/3 = 2")
    denom = 1 - Fraction(1, 1) / gamma
    alpha = (1 - Fraction(1, 1) / p) / denom
    beta = (1 - Fraction(1, 1) / q) / denom
    return alpha, beta, alpha + beta


# ---------------------------------------------------------------------------
# interaction-energy bound (pair energy vs L^1/L^{5/3} norms)

def _radial_pair_energy(r, rho, terms, eps):
    """iint K(|x-y|) rho rho dx dy for a radial density in d=3, using the
    closed-form angular average of each kernel term."""
    c1, a1, c2, a2 = terms
    rr = r[:, None]
    ss = r[None, :]
    plus = eps + (rr + ss) ** 2
    minus = eps + (rr - ss) ** 2
    avg = np.zeros_like(plus)
    for c, a in ((c1, a1), (c2, a2)):
        if c == 0.0:
            continue
        if a == 2.0:
            avg += c * np.log(plus / minus) / (4.0 * rr * ss)
        elif a == 1.0:
            avg += c * (np.sqrt(plus) - np.sqrt(minus)) / (2.0 * rr * ss)
        else:
            raise ValueError("radial pair energy supports exponents 1 and 2")
    w = 4.0 * math.pi * r**2 * rho
    dr = r[1] - r[0]
    return float(np.sum(w[:, None] * w[None, :] * avg) * dr * dr)


def _radial_lp(r, rho, p):
    dr = r[1] - r[0]
    return float((4.0 * math.pi * np.sum(rho**p * r**2) * dr) ** (1.0 / p))


def interaction_ratio(rho: GridDensity, spec: KernelSpec) -> tuple[float, float]:
    """(lhs, rhs): lhs = iint K^eps rho rho; rhs combines the Manev and
    Coulomb terms with their L^1/L^{5/3} exponents."""
    lhs = 2.0 * interaction_energy_grid(spec, rho)
    l1 = _grid_lp(rho, 1.0)
    l53 = _grid_lp(rho, 5.0 / 3.0)
    c1 = spec.c_manev if spec.family != "coulomb" else 0.0
    c2 = spec.c_coulomb
    rhs = abs(c1) * l1 ** (1.0 / 3.0) * l53 ** (5.0 / 3.0) + c2 * l1 ** (
        7.0 / 6.0
    ) * l53 ** (5.0 / 6.0)
    return lhs, rhs


def check_interaction_bound(
    samples, spec: KernelSpec, widths=(0.7, 0.9, 1.1, 1.4, 1.8),
    dilation_tol: float = 0.02, n_r: int = 2048,
) -> InequalityReport:
    """Family-supremum check of the pair-energy bound, plus a dilation
    invariance check on a radial Gaussian evaluated by radial quadrature.

    Dilation rho -> lambda^3 rho(lambda x) leaves the ratio of the pure-Manev
    term invariant; the ratio across `widths` must stay within
    `dilation_tol` of its mean."""
    lhs, rhs = [], []
    for rho in samples:
        l, r = interaction_ratio(rho, spec)
        lhs.append(l)
        rhs.append(r)
    ratios = [l / r for l, r in zip(lhs, rhs)]

    # dilation series: unit-mass Gaussians of varying width, pure Manev term,
    # evaluated on one fixed quadrature grid with one fixed small eps so that
    # the constancy of the ratio reflects the inequality's scale invariance
    # rather than a rescaled discretization
    dil_ratios = []
    r = np.linspace(0.0, 20.0, n_r + 1)[1:]
    for s in widths:
        rho_r = np.exp(-(r**2) / (2 * s**2)) / ((2 * math.pi) ** 1.5 * s**3)
        e = _radial_pair_energy(r, rho_r, (1.0, 2.0, 0.0, 1.0), eps=1e-8)
        denom = _radial_lp(r, rho_r, 1.0) ** (1.0 / 3.0) * _radial_lp(
            r, rho_r, 5.0 / 3.0
        ) ** (5.0 / 3.0)
        dil_ratios.append(e / denom)
    mean = sum(dil_ratios) / len(dil_ratios)
    dil_dev = max(abs(v - mean) / mean for v in dil_ratios)

    attractive_sign_ok = True
    if not spec.attractive:
        attractive_sign_ok = all(v <= 0 for v in lhs)
    passed = (
        math.isfinite(max(ratios, default=0.0))
        and dil_dev <= dilation_tol
        and attractive_sign_ok
    )
    return InequalityReport(
        name="interaction-bound",
        lhs=lhs,
        rhs=rhs,
        max_ratio=max(ratios, default=math.nan),
        passed=passed,
        tolerance=dilation_tol,
        metadata={
            "dilation_ratios": dil_ratios,
            "dilation_deviation": dil_dev,
            "widths": list(widths),
            "family_ratios": ratios,
        },
    )


# ---------------------------------------------------------------------------
# Calderon-Zygmund-type boundedness of the singular force map

def cz_ratio(rho: GridDensity, q: float, epsilon: float) -> float:
    """||grad K_M^eps * rho||_q / ||rho||_q for the pure 1/|x|^2 term."""
    probe = KernelSpec("pure-manev", c_manev=1.0, epsilon=epsilon)
    fld = force_field(probe, rho).values
    mag = np.sqrt(np.sum(fld**2, axis=-1))
    num = float((np.sum(mag**q) * rho.cell_volume) ** (1.0 / q))
    return num / _grid_lp(rho, q)


def check_cz(
    samples, q: float, epsilon: float = 0.02,
    stability_tol: float = 0.05, dilation_tol: float = 0.05,
) -> InequalityReport:
    """Empirical ||grad K_M * rho||_q / ||rho||_q over the family: bounded,
    stable under eps-halving, and dilation invariant within tolerance."""
    if not 1.0 < q < 5.0 / 3.0:
        raise ValueError("q must lie strictly between 1 and 5/3")
    ratios, halved, deviations = [], [], []
    for rho in samples:
        a = cz_ratio(rho, q, epsilon)
        b = cz_ratio(rho, q, epsilon / 2.0)
        ratios.append(a)
        halved.append(b)
        deviations.append(abs(a - b) / a)
    # dilation: rescale the first sample's coordinates by lambda = 1.5
    rho0 = samples[0]
    lam = 1.5
    dil = GridDensity(
        tuple(o / lam for o in rho0.origin),
        tuple(h / lam for h in rho0.spacing),
        rho0.values * lam ** rho0.dim,
    )
    dil_dev = abs(cz_ratio(dil, q, epsilon) - ratios[0]) / ratios[0]
    passed = (
        max(deviations) <= stability_tol
        and dil_dev <= dilation_tol
        and math.isfinite(max(ratios))
    )
    return InequalityReport(
        name="calderon-zygmund",
        lhs=ratios,
        rhs=halved,
        max_ratio=max(ratios),
        passed=passed,
        tolerance=stability_tol,
        metadata={
            "q": q,
            "epsilon": epsilon,
            "halving_deviations": deviations,
            "dilation_deviation": dil_dev,
        },
    )


# ---------------------------------------------------------------------------
# suite driver (used by the CLI and the acceptance tests)

def _suite_density_interpolation(seed):
    fam_args = dict(dim=3, grid_n=32, half_width=6.0, seed=seed)
    phase_fams = [
        DensityFamily("gaussian-mixture", sample_count=34, **fam_args),
        DensityFamily("bump-sum", sample_count=33, **fam_args),
        DensityFamily("random-nonneg-trig", sample_count=33, **fam_args),
    ]
    pairs = [p for fam in phase_fams for p in fam.phase_samples()]
    return check_density_interpolation(pairs)


def _suite_exponents(seed):
    alpha, beta, total = interpolation_exponents(
        Fraction(3, 2), Fraction(3, 2), Fraction(5, 3), 2
    )
    return InequalityReport(
        name="interpolation-exponents",
        lhs=[float(alpha), float(beta)],
        rhs=[float(Fraction(5, 6))] * 2,
        max_ratio=1.0,
        passed=(alpha, beta, total)
        == (Fraction(5, 6), Fraction(5, 6), Fraction(5, 3)),
        tolerance=0.0,
        metadata={"alpha": str(alpha), "beta": str(beta), "sum": str(total)},
    )


def _suite_interaction_bound(seed):
    spec = KernelSpec("manev-combined", c_manev=1.0, c_coulomb=1.0, epsilon=0.08)
    fam = DensityFamily("gaussian-mixture", dim=3, sample_count=6,
                        grid_n=48, half_width=6.0, seed=seed + 1)
    return check_interaction_bound(fam.spatial_samples(), spec)


def _suite_cz(seed):
    cz_fam = DensityFamily("gaussian-mixture", dim=3, sample_count=4,
                           grid_n=128, half_width=6.0, seed=seed + 2)
    return check_cz(cz_fam.spatial_samples(), q=1.4)


SUITE_CHECKS = {
    "density-interpolation": _suite_density_interpolation,
    "interpolation-exponents": _suite_exponents,
    "interaction-bound": _suite_interaction_bound,
    "calderon-zygmund": _suite_cz,
}


def run_default_suite(seed: int = 0, names=None) -> list[InequalityReport]:
    if names is None:
        names = list(SUITE_CHECKS)
    unknown = [n for n in names if n not in SUITE_CHECKS]
    if unknown:
        raise ValueError(f"unknown inequality checks: {unknown}; "
                         f"available: {sorted(SUITE_CHECKS)}")
    return [SUITE_CHECKS[n](seed) for n in names]
