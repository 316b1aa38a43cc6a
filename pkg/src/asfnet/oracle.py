"""Analytic ground truth: plane-wave scattering by a rigid sphere.

Partial-wave series solution of the Helmholtz equation with a zero
Neumann (sound-hard) boundary at r = a.  Targets encode the far-field
scattering-amplitude magnitude: the far field is radius-free, which
sidesteps the unstated measurement radius of other conventions.

Internally the spherical-harmonic polar axis is aligned with the
propagation axis, so the sphere's field is purely zonal (m = 0); the
global-frame wave direction is just a documented frame mapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import legval
from scipy.special import spherical_jn

from . import geom, sphharm
from .geom import PointCloud
from .sphharm import SPEED_OF_SOUND, ShCoeffs


@dataclass(frozen=True)
class ScattererSpec:
    """Sound-hard sphere centered at the origin."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class IncidentWave:
    """Unit-amplitude plane wave travelling along ``direction``."""

    frequency: int
    direction: tuple[float, float, float] = (-1.0, 0.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if not math.isclose(float(np.linalg.norm(d)), 1.0, rel_tol=1e-12):
            raise ValueError("direction must be a unit vector")
        if self.frequency not in sphharm.FREQUENCY_BANDS:
            raise ValueError(f"frequency must be one of {sphharm.FREQUENCY_BANDS}")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi * self.frequency / SPEED_OF_SOUND


def truncation_order(ka: float) -> int:
    """Partial-wave cutoff: ceil(ka) plus a fixed convergence margin.

    The margin of 12 keeps the series tail below 1e-8 in the far-field
    pattern for ka up to 20.
    """
    return int(math.ceil(ka)) + 12


def _mode_coefficients(ka: float, lmax: int) -> np.ndarray:
    """B_l = -j_l'(ka) / h_l'(ka) for l = 0..lmax (rigid boundary)."""
    ls = np.arange(lmax + 1)
    jp = spherical_jn(ls, ka, derivative=True)
    hp = np.array([sphharm.spherical_hankel_deriv(int(l), ka) for l in ls])
    return -jp / hp


def farfield_pattern(spec: ScattererSpec, wave: IncidentWave, cos_gamma, lmax: int | None = None):
    """Far-field amplitude f(gamma); gamma is the angle from the
    forward-scattering (propagation) axis.  p_s -> f(gamma) e^{ikr}/r."""
    k = wave.wavenumber
    ka = k * spec.radius
    if lmax is None:
        lmax = truncation_order(ka)
    b = _mode_coefficients(ka, lmax)
    coef = (2.0 * np.arange(lmax + 1) + 1.0) * b
    return (-1j / k) * legval(np.asarray(cos_gamma, dtype=np.float64), coef)


def sphere_farfield(spec: ScattererSpec, wave: IncidentWave, theta, phi, lmax: int | None = None):
    """Far-field amplitude in the global frame (theta from +z)."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    d = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta) * np.ones_like(phi)],
        axis=-1,
    )
    cos_gamma = d @ np.asarray(wave.direction, dtype=np.float64)
    out = farfield_pattern(spec, wave, cos_gamma, lmax)
    return out if np.ndim(out) else complex(out)


def neumann_residual(spec: ScattererSpec, wave: IncidentWave, n_angles: int = 181) -> float:
    """Max |d/dr (p_inc + p_scat)| at r = a over angle, relative to k.

    Analytically zero for the rigid boundary; the numeric value
    exercises the mode coefficients and radial derivatives.
    """
    k = wave.wavenumber
    ka = k * spec.radius
    lmax = truncation_order(ka)
    ls = np.arange(lmax + 1)
    jp = spherical_jn(ls, ka, derivative=True)
    hp = np.array([sphharm.spherical_hankel_deriv(int(l), ka) for l in ls])
    b = _mode_coefficients(ka, lmax)
    coef = (1j**ls) * (2.0 * ls + 1.0) * (jp + b * hp) * k
    cg = np.cos(np.linspace(0.0, math.pi, n_angles))
    resid = legval(cg, coef)
    return float(np.abs(resid).max() / k)


def inphase_pattern(spec: ScattererSpec, wave: IncidentWave, thetas: np.ndarray) -> np.ndarray:
    """In-phase far-field pattern on the given colatitudes.

    The complex pattern carries an arbitrary global phase (it depends
    on the time convention), so we rotate it to the canonical phase
    that maximizes the in-phase energy, psi = arg(integral of f^2)/2,
    and keep the real part.  Unlike the raw magnitude |f|, this signed
    pattern is band-limited to L=3 within a fraction of a percent at
    the lowest band, matching the sub-2% projection-error target.
    """
    f = farfield_pattern(spec, wave, np.cos(thetas))
    w = np.sin(thetas)
    psi = 0.5 * np.angle(np.sum(w * f**2))
    return (np.exp(-1j * psi) * f).real


def sphere_asf(
    spec: ScattererSpec,
    wave: IncidentWave,
    thetas: np.ndarray | None = None,
    phis: np.ndarray | None = None,
):
    """Project the in-phase far field on the lat-long grid onto L=3 SH.

    Grid colatitude is measured from the propagation axis, so the
    pattern is zonal and all m != 0 coefficients vanish.  Returns
    (ShCoeffs, relative projection residual).
    """
    if thetas is None or phis is None:
        thetas, phis = sphharm.default_grid()
    g = inphase_pattern(spec, wave, thetas)
    values = np.repeat(g[:, None], phis.size, axis=1)
    coeffs, rel = sphharm.project_grid(values, thetas, phis)
    return ShCoeffs(wave.frequency, coeffs), rel


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform unit-sphere lattice (golden-angle spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    ga = math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(ga * i), r * np.sin(ga * i), z], axis=1)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (QR of a Gaussian matrix)."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_sphere_cloud(
    spec: ScattererSpec, n: int = 1024, seed: int = 0, oversample: int = 4
) -> PointCloud:
    """Deterministic quasi-uniform cloud on the sphere surface.

    A Fibonacci lattice (oversampled, randomly rotated from the seed)
    is thinned to n points by furthest-point sampling.
    """
    if n < 4:
        raise ValueError("need at least 4 points")
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, seed]))
    pts = fibonacci_sphere(oversample * n) @ _random_rotation(rng).T
    idx = geom.furthest_point_indices(pts, n, seed_index=0)
    return PointCloud(spec.radius * pts[idx])


MANIFEST_COLUMNS = [
    "id",
    "radius",
    "seed",
    "noise_sigma",
    "cloud",
    "target_125",
    "target_250",
    "target_500",
    "target_1000",
    "norm_const",
]


@dataclass(frozen=True)
class DatasetExample:
    id: str
    radius: float
    seed: int
    noise_sigma: float
    cloud_file: str
    target_files: dict[int, str]
    norm_const: float


def gen_dataset(
    radii,
    seeds: int,
    noise_sigma: float,
    out_dir,
    base_seed: int = 0,
    n_points: int = 1024,
    rotate: bool = True,
    comments: list[str] | None = None,
) -> list[DatasetExample]:
    """Write labeled sphere examples plus a manifest to ``out_dir``.

    Each example: a sampled (optionally jittered / rotated about the
    propagation axis) cloud in the plain-text format, plus one target
    coefficient file per band.  All 16 coefficients of every target are
    divided by one per-dataset constant (99th-percentile max-|coeff|
    over all examples) so they land in the tanh range; the constant is
    stored in the manifest and undone at evaluation.
    """
    import os

    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("empty radius range")
    os.makedirs(out_dir, exist_ok=True)

    # calibration pass: raw targets depend only on the radius
    raw_targets: dict[float, dict[int, np.ndarray]] = {}
    for r in radii:
        spec = ScattererSpec(r)
        raw_targets[r] = {}
        for band in sphharm.FREQUENCY_BANDS:
            sh, _ = sphere_asf(spec, IncidentWave(band))
            raw_targets[r][band] = sh.coeffs
    maxima = [
        np.abs(raw_targets[r][band]).max()
        for r in radii
        for band in sphharm.FREQUENCY_BANDS
    ]
    norm_const = float(np.percentile(maxima, 99.0))

    wave_dir = np.asarray(IncidentWave(125).direction)
    examples = []
    for ri, r in enumerate(radii):
        spec = ScattererSpec(r)
        for s in range(seeds):
            ex_id = f"ex{ri:03d}_{s:03d}"
            rng = np.random.default_rng(np.random.SeedSequence([base_seed, ri, s]))
            cloud = sample_sphere_cloud(spec, n_points, seed=int(rng.integers(2**31)))
            pts = cloud.points
            if rotate:
                ang = rng.uniform(0.0, 2.0 * math.pi)
                pts = _axis_rotation(wave_dir, ang) @ pts.T
                pts = pts.T
            if noise_sigma > 0:
                pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
            cloud_file = f"{ex_id}.xyz"
            geom.save_cloud(os.path.join(out_dir, cloud_file), PointCloud(pts))
            target_files = {}
            for band in sphharm.FREQUENCY_BANDS:
                tf = f"{ex_id}_f{band}.sh"
                sh = ShCoeffs(band, raw_targets[r][band] / norm_const)
                sphharm.save_coeffs(os.path.join(out_dir, tf), sh)
                target_files[band] = tf
            examples.append(
                DatasetExample(ex_id, r, s, noise_sigma, cloud_file, target_files, norm_const)
            )

    with open(os.path.join(out_dir, "manifest.tsv"), "w") as f:
        f.write("# asfnet dataset manifest\n")
        f.write(f"# base_seed: {base_seed}\n")
        f.write(f"# n_points: {n_points}\n")
        f.write(f"# rotate: {rotate}\n")
        for line in comments or []:
            f.write(f"# {line}\n")
        f.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for ex in examples:
            row = [
                ex.id,
                f"{ex.radius:.17g}",
                str(ex.seed),
                f"{ex.noise_sigma:.17g}",
                ex.cloud_file,
                ex.target_files[125],
                ex.target_files[250],
                ex.target_files[500],
                ex.target_files[1000],
                f"{ex.norm_const:.17g}",
            ]
            f.write("\t".join(row) + "\n")
    return examples


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about an arbitrary unit axis (Rodrigues)."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def load_manifest(data_dir) -> list[DatasetExample]:
    import os

    path = os.path.join(data_dir, "manifest.tsv")
    examples = []
    with open(path) as f:
        header = None
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                if header != MANIFEST_COLUMNS:
                    raise ValueError(f"unexpected manifest columns: {header}")
                continue
            vals = dict(zip(header, line.split("\t")))
            examples.append(
                DatasetExample(
                    vals["id"],
                    float(vals["radius"]),
                    int(vals["seed"]),
                    float(vals["noise_sigma"]),
                    vals["cloud"],
                    {b: vals[f"target_{b}"] for b in sphharm.FREQUENCY_BANDS},
                    float(vals["norm_const"]),
                )
            )
    return examples
