"""Hybrid wave-ray propagation: stochastic tracing with ASF scatterers.

A shoebox room with per-wall absorption and a specular/diffuse split,
point source, spherical listener, and spherical-bounding-volume
scatterers whose outgoing directions are drawn from a tabulated PDF
proportional to the squared reconstructed ASF magnitude.  Each band is
traced as an independent pass; per-ray randomness comes from a
counter-based hash of (seed, band, ray, bounce, channel), so ray i's
path never depends on the total ray count.

A ray deposits its full remaining energy the first time its path
passes through the listener sphere and then terminates, which bounds
the per-band impulse-response total by the emitted energy.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import sphharm
from .sphharm import SPEED_OF_SOUND, ShCoeffs

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    """splitmix64 finalizer: a well-mixed 64-bit permutation."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def ray_uniform(seed: int, *counters: int) -> float:
    """Deterministic uniform in [0, 1) indexed by integer counters.

    Counter-based rather than sequential: the value depends only on
    (seed, counters), never on how many other draws happened.
    """
    h = _mix64(seed ^ _GOLDEN)
    for c in counters:
        h = _mix64(h ^ ((c * _GOLDEN + 0x632BE59BD9B4E019) & _MASK64))
    return (h >> 11) * 2.0**-53


@dataclass(frozen=True)
class DirectionSampler:
    """Inverse-CDF sampler over the default lat-long grid.

    ``pdf`` holds per-cell probabilities (summing to 1); ``decay`` the
    per-cell energy weight, squared ASF magnitude normalized to unit
    peak so scattering never amplifies.  ``degenerate`` flags an
    all-zero field, sampled uniformly with zero decay.
    """

    frequency: int
    thetas: np.ndarray
    phis: np.ndarray
    pdf: np.ndarray  # (n_theta, n_phi)
    decay: np.ndarray  # (n_theta, n_phi)
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "_cdf", np.cumsum(self.pdf.ravel()))

    def cell_solid_angles(self) -> np.ndarray:
        return _cell_solid_angles(self.thetas, self.phis)

    def sample_cells(self, u) -> np.ndarray:
        """Flat cell indices for uniforms ``u`` (vectorized)."""
        return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.pdf.size - 1)

    def sample(self, u_cell: float, u_theta: float, u_phi: float):
        """One direction in the canonical frame plus its decay weight.

        Within the chosen cell the direction is uniform over solid
        angle (cos-theta linear within the band, phi linear).
        """
        flat = int(self.sample_cells(u_cell))
        n_phi = self.phis.size
        i, j = divmod(flat, n_phi)
        n_theta = self.thetas.size
        c_hi = math.cos(i * math.pi / n_theta)
        c_lo = math.cos((i + 1) * math.pi / n_theta)
        z = c_lo + (c_hi - c_lo) * u_theta
        phi = (j + u_phi) * 2.0 * math.pi / n_phi
        s = math.sqrt(max(0.0, 1.0 - z * z))
        d = np.array([s * math.cos(phi), s * math.sin(phi), z])
        return d, float(self.decay[i, j])


def _cell_solid_angles(thetas: np.ndarray, phis: np.ndarray) -> np.ndarray:
    n_theta, n_phi = thetas.size, phis.size
    edges = np.linspace(0.0, math.pi, n_theta + 1)
    band = np.cos(edges[:-1]) - np.cos(edges[1:])
    return np.repeat(band[:, None], n_phi, axis=1) * (2.0 * math.pi / n_phi)


def build_sampler(coeffs: ShCoeffs) -> DirectionSampler:
    """Tabulate the sampling PDF and decay weights from one ASF.

    PDF per cell is the squared reconstructed magnitude times the cell
    solid angle, normalized; the decay weight is the squared magnitude
    at unit peak.  An all-zero field falls back to a uniform PDF with
    zero decay and a warning.
    """
    thetas, phis = sphharm.default_grid()
    m = sphharm.reconstruct_map(coeffs.coeffs, thetas, phis)
    mag2 = m.values**2
    omega = _cell_solid_angles(thetas, phis)
    unnorm = mag2 * omega
    total = unnorm.sum()
    if total <= 0.0:
        warnings.warn("degenerate all-zero ASF: sampling uniformly with zero decay")
        return DirectionSampler(
            coeffs.frequency, thetas, phis, omega / omega.sum(), np.zeros_like(omega), True
        )
    return DirectionSampler(
        coeffs.frequency, thetas, phis, unnorm / total, mag2 / mag2.max(), False
    )


@dataclass(frozen=True)
class Scatterer:
    """Bounding sphere plus one ASF (and sampler) per frequency band."""

    id: str
    center: np.ndarray
    radius: float
    coeffs: dict  # band -> ShCoeffs
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    samplers: dict = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("scatterer radius must be positive")
        if set(self.coeffs) != set(sphharm.FREQUENCY_BANDS):
            raise ValueError(f"scatterer {self.id!r} must carry all bands {sphharm.FREQUENCY_BANDS}")
        if self.samplers is None:
            object.__setattr__(
                self, "samplers", {b: build_sampler(c) for b, c in self.coeffs.items()}
            )


@dataclass(frozen=True)
class Scene:
    """Shoebox room with a point source, spherical listener, scatterers.

    Walls are indexed 0..5 as (x=0, x=Lx, y=0, y=Ly, z=0, z=Lz);
    ``wall_absorption`` and ``wall_scattering`` are per-wall arrays.
    """

    room: np.ndarray  # (3,) dimensions in meters
    source: np.ndarray
    listener: np.ndarray
    listener_radius: float = 0.5
    wall_absorption: np.ndarray = field(default_factory=lambda: np.full(6, 0.1))
    wall_scattering: np.ndarray = field(default_factory=lambda: np.full(6, 0.2))
    scatterers: tuple = ()

    def __post_init__(self):
        room = np.asarray(self.room, dtype=np.float64)
        src = np.asarray(self.source, dtype=np.float64)
        lst = np.asarray(self.listener, dtype=np.float64)
        absorb = np.broadcast_to(np.asarray(self.wall_absorption, dtype=np.float64), (6,)).copy()
        scat = np.broadcast_to(np.asarray(self.wall_scattering, dtype=np.float64), (6,)).copy()
        if room.shape != (3,) or np.any(room <= 0):
            raise ValueError("room dimensions must be 3 positive numbers")
        for name, p in (("source", src), ("listener", lst)):
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= room):
                raise ValueError(f"{name} must lie strictly inside the room")
        if np.any(absorb < 0) or np.any(absorb > 1):
            raise ValueError("wall absorption must lie in [0, 1]")
        if np.any(scat < 0) or np.any(scat > 1):
            raise ValueError("wall scattering must lie in [0, 1]")
        for s in self.scatterers:
            if np.any(s.center - s.radius < 0) or np.any(s.center + s.radius > room):
                raise ValueError(f"scatterer {s.id!r} sphere extends outside the room")
        object.__setattr__(self, "room", room)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "listener", lst)
        object.__setattr__(self, "wall_absorption", absorb)
        object.__setattr__(self, "wall_scattering", scat)
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.listener_radius <= 0:
            raise ValueError("listener radius must be positive")


def replace_asf(scene: Scene, scatterer_id: str, coeffs: dict) -> Scene:
    """New scene with one scatterer's per-band ASFs (and samplers) swapped."""
    ids = [s.id for s in scene.scatterers]
    if scatterer_id not in ids:
        raise ValueError(f"no scatterer named {scatterer_id!r}")
    updated = tuple(
        Scatterer(s.id, s.center, s.radius, dict(coeffs), s.orientation)
        if s.id == scatterer_id
        else s
        for s in scene.scatterers
    )
    return dc_replace(scene, scatterers=updated)


@dataclass(frozen=True)
class EnergyImpulseResponse:
    """Per-band binned energy arrivals; energies[t, b] for band b."""

    bin_width: float
    energies: np.ndarray  # (n_bins, 4), nonnegative
    rays: int
    seed: int

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != len(sphharm.FREQUENCY_BANDS):
            raise ValueError("energies must have one column per band")
        if np.any(e < 0):
            raise ValueError("energies must be nonnegative")
        object.__setattr__(self, "energies", e)

    def band_total(self, band: int) -> float:
        return float(self.energies[:, sphharm.FREQUENCY_BANDS.index(band)].sum())


def _rotation_to_axis(d: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking +z to the unit vector d."""
    c = d[2]
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        return np.diag([1.0, -1.0, -1.0])
    v = np.array([-d[1], d[0], 0.0])  # z cross d
    vx = np.array([[0.0, 0.0, v[1]], [0.0, 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (v @ v))


def _wall_hit(pos: np.ndarray, d: np.ndarray, room: np.ndarray):
    """(distance, wall index) of the first wall along the ray."""
    best_t, best_w = math.inf, -1
    for ax in range(3):
        if d[ax] > 1e-15:
            t = (room[ax] - pos[ax]) / d[ax]
            w = 2 * ax + 1
        elif d[ax] < -1e-15:
            t = -pos[ax] / d[ax]
            w = 2 * ax
        else:
            continue
        if 1e-9 < t < best_t:
            best_t, best_w = t, w
    return best_t, best_w


def _sphere_hit(pos: np.ndarray, d: np.ndarray, center: np.ndarray, radius: float) -> float:
    """Distance to the sphere surface, or inf (ray assumed outside)."""
    oc = pos - center
    b = oc @ d
    disc = b * b - (oc @ oc - radius * radius)
    if disc <= 0.0:
        return math.inf
    t = -b - math.sqrt(disc)
    return t if t > 1e-9 else math.inf


def trace(
    scene: Scene,
    rays: int,
    seed: int,
    max_bounces: int = 10,
    bin_width: float = 1e-3,
    bands=None,
) -> EnergyImpulseResponse:
    """Stochastic energy impulse response, deterministic per (seed, ray).

    Emitted energy is 1 per band (1/rays per ray).  Wall hits attenuate
    by (1 - absorption) and reflect specularly or diffusely (cosine
    lobe) per the wall's scattering coefficient; scatterer hits redraw
    the direction from the band's ASF sampler in the frame whose polar
    axis is the incoming travel direction, attenuating by the sampled
    cell's decay weight.
    """
    if rays < 1:
        raise ValueError("rays must be at least 1")
    if max_bounces < 0:
        raise ValueError("max_bounces must be nonnegative")
    if bands is None:
        bands = sphharm.FREQUENCY_BANDS
    deposits: dict[int, np.ndarray] = {}
    per_ray = 1.0 / rays
    inv_c = 1.0 / SPEED_OF_SOUND

    for band in bands:
        bi = sphharm.FREQUENCY_BANDS.index(band)
        for ray in range(rays):
            u0 = ray_uniform(seed, bi, ray, 0, 0)
            u1 = ray_uniform(seed, bi, ray, 0, 1)
            z = 2.0 * u0 - 1.0
            s = math.sqrt(max(0.0, 1.0 - z * z))
            phi = 2.0 * math.pi * u1
            d = np.array([s * math.cos(phi), s * math.sin(phi), z])
            pos = scene.source.copy()
            energy = per_ray
            path = 0.0
            skip_scatterer = -1

            for bounce in range(1, max_bounces + 2):
                t_wall, wall = _wall_hit(pos, d, scene.room)
                t_hit, which = t_wall, -1
                for si, sc in enumerate(scene.scatterers):
                    if si == skip_scatterer:
                        continue
                    t = _sphere_hit(pos, d, sc.center, sc.radius)
                    if t < t_hit:
                        t_hit, which = t, si

                # listener passage before the blocking hit: deposit and stop
                to_l = scene.listener - pos
                s_close = float(np.clip(to_l @ d, 0.0, t_hit))
                close = pos + s_close * d - scene.listener
                if math.sqrt(close @ close) <= scene.listener_radius:
                    arrival = (path + math.sqrt(to_l @ to_l)) * inv_c
                    b = int(arrival / bin_width)
                    row = deposits.get(b)
                    if row is None:
                        row = deposits.setdefault(b, np.zeros(len(sphharm.FREQUENCY_BANDS)))
                    row[bi] += energy
                    break

                if bounce > max_bounces or not math.isfinite(t_hit):
                    break
                pos = pos + t_hit * d
                path += t_hit

                if which >= 0:
                    sc = scene.scatterers[which]
                    sampler = sc.samplers[band]
                    uc = ray_uniform(seed, bi, ray, bounce, 0)
                    ut = ray_uniform(seed, bi, ray, bounce, 1)
                    up = ray_uniform(seed, bi, ray, bounce, 2)
                    local, decay = sampler.sample(uc, ut, up)
                    d = _rotation_to_axis(d) @ (sc.orientation @ local)
                    energy *= decay
                    skip_scatterer = which
                else:
                    energy *= 1.0 - scene.wall_absorption[wall]
                    ax, hi = divmod(wall, 2)
                    pos[ax] = scene.room[ax] if hi else 0.0
                    normal = np.zeros(3)
                    normal[ax] = -1.0 if hi else 1.0
                    us = ray_uniform(seed, bi, ray, bounce, 0)
                    if us < scene.wall_scattering[wall]:
                        u1 = ray_uniform(seed, bi, ray, bounce, 1)
                        u2 = ray_uniform(seed, bi, ray, bounce, 2)
                        zc = math.sqrt(u1)  # cosine-weighted lobe
                        sc_ = math.sqrt(max(0.0, 1.0 - u1))
                        ph = 2.0 * math.pi * u2
                        local = np.array([sc_ * math.cos(ph), sc_ * math.sin(ph), zc])
                        d = _rotation_to_axis(normal) @ local
                    else:
                        d = d - 2.0 * (d @ normal) * normal
                    skip_scatterer = -1
                if energy < 1e-12:
                    break

    n_bins = max(deposits) + 1 if deposits else 1
    energies = np.zeros((n_bins, len(sphharm.FREQUENCY_BANDS)))
    for b, row in deposits.items():
        energies[b] = row
    return EnergyImpulseResponse(bin_width, energies, rays, seed)


IR_COLUMNS = ["time_s", "e125", "e250", "e500", "e1000"]


def save_ir(path, ir: EnergyImpulseResponse, header_lines=None) -> None:
    """TSV impulse response: bin center time plus per-band energies."""
    with open(path, "w") as f:
        f.write("# asfnet energy impulse response\n")
        f.write(f"# rays: {ir.rays}\n")
        f.write(f"# seed: {ir.seed}\n")
        f.write(f"# bin_width_s: {ir.bin_width:.17g}\n")
        for line in header_lines or []:
            f.write(f"# {line}\n")
        f.write("\t".join(IR_COLUMNS) + "\n")
        for i, row in enumerate(ir.energies):
            t = (i + 0.5) * ir.bin_width
            f.write(f"{t:.6f}\t" + "\t".join(f"{e:.12g}" for e in row) + "\n")


def load_scene(path) -> Scene:
    """Parse the key: value scene file; ASF paths resolve next to it.

    Format: one ``key: value`` per line; keys room, source, listener,
    listener_radius, wall_absorption (1 or 6 numbers), wall_scattering
    (1 or 6), and repeated ``scatterer: id cx cy cz radius f125 f250
    f500 f1000`` lines naming coefficient files.
    """
    base = os.path.dirname(os.path.abspath(path))
    fields: dict = {}
    scatterers = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key: value'")
            key, _, val = line.partition(":")
            key = key.strip()
            parts = val.split()
            if key == "scatterer":
                if len(parts) != 9:
                    raise ValueError(f"{path}:{ln}: scatterer needs id, center, radius, 4 ASF files")
                coeffs = {}
                for band, fn in zip(sphharm.FREQUENCY_BANDS, parts[5:]):
                    sh = sphharm.load_coeffs(os.path.join(base, fn))
                    if sh.frequency != band:
                        raise ValueError(
                            f"{path}:{ln}: file {fn} carries band {sh.frequency}, expected {band}"
                        )
                    coeffs[band] = sh
                scatterers.append(
                    Scatterer(parts[0], [float(x) for x in parts[1:4]], float(parts[4]), coeffs)
                )
            elif key in ("room", "source", "listener", "wall_absorption", "wall_scattering"):
                fields[key] = np.array([float(x) for x in parts])
            elif key == "listener_radius":
                fields[key] = float(parts[0])
            else:
                raise ValueError(f"{path}:{ln}: unknown key {key!r}")
    for req in ("room", "source", "listener"):
        if req not in fields:
            raise ValueError(f"scene file missing required key {req!r}")
    return Scene(scatterers=tuple(scatterers), **fields)
