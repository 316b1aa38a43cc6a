"""Real spherical-harmonic field codec and radial functions.

Convention: real, orthonormal (unit L2 norm over the sphere),
Condon-Shortley phase omitted.  Coefficients are ordered row-major in
(l, m): (0,0), (1,-1), (1,0), (1,1), ..., (3,3).  This convention is
written into every coefficient file header because different SH tools
disagree on all three choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lpmv, spherical_jn, spherical_yn

MAX_ORDER = 3
N_COEFFS = (MAX_ORDER + 1) ** 2  # 16
FREQUENCY_BANDS = (125, 250, 500, 1000)
SPEED_OF_SOUND = 343.0  # m/s
MAGNITUDE_FLOOR = 1e-9  # clamp before log to avoid -inf at field nulls

COEFF_FORMAT = "asf-sh/1"
COEFF_CONVENTION = "real-orthonormal-nocs"


def lm_order(L: int = MAX_ORDER) -> list[tuple[int, int]]:
    """(l, m) pairs in coefficient-vector order."""
    return [(l, m) for l in range(L + 1) for m in range(-l, l + 1)]


def real_sh(l: int, m: int, theta, phi):
    """Orthonormal real spherical harmonic, no Condon-Shortley phase."""
    if not (0 <= l <= MAX_ORDER and -l <= m <= l):
        raise ValueError(f"invalid (l, m) = ({l}, {m})")
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    am = abs(m)
    norm = math.sqrt(
        (2 * l + 1) / (4.0 * math.pi) * math.factorial(l - am) / math.factorial(l + am)
    )
    # scipy's lpmv includes the Condon-Shortley (-1)^m; cancel it
    leg = (-1.0) ** am * lpmv(am, l, np.cos(theta))
    if m == 0:
        val = norm * leg
    elif m > 0:
        val = math.sqrt(2.0) * norm * leg * np.cos(m * phi)
    else:
        val = math.sqrt(2.0) * norm * leg * np.sin(am * phi)
    return val if val.ndim else float(val)


def sh_basis(L, theta, phi) -> np.ndarray:
    """All (L+1)^2 basis values, stacked on a trailing axis."""
    return np.stack([real_sh(l, m, theta, phi) for l, m in lm_order(L)], axis=-1)


@dataclass(frozen=True)
class ShCoeffs:
    """16 real SH coefficients for one frequency band."""

    frequency: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.frequency not in FREQUENCY_BANDS:
            raise ValueError(f"frequency {self.frequency} not in {FREQUENCY_BANDS}")
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (N_COEFFS,):
            raise ValueError(f"expected {N_COEFFS} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class LatLongMap:
    """Equiangular grid of real values over the sphere.

    Colatitudes are cell centers, uniform in (0, pi); longitudes uniform
    in [0, 2*pi).
    """

    thetas: np.ndarray
    phis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=np.float64)
        p = np.asarray(self.phis, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (t.size, p.size):
            raise ValueError(f"values shape {v.shape} != ({t.size}, {p.size})")
        object.__setattr__(self, "thetas", t)
        object.__setattr__(self, "phis", p)
        object.__setattr__(self, "values", v)

    def same_grid(self, other: "LatLongMap") -> bool:
        return (
            self.thetas.shape == other.thetas.shape
            and self.phis.shape == other.phis.shape
            and np.array_equal(self.thetas, other.thetas)
            and np.array_equal(self.phis, other.phis)
        )


def default_grid(n_theta: int = 18, n_phi: int = 36):
    """10-degree cells by default, comfortably above the L=3 band limit."""
    thetas = (np.arange(n_theta) + 0.5) * math.pi / n_theta
    phis = np.arange(n_phi) * 2.0 * math.pi / n_phi
    return thetas, phis


def _check_band_limit(n_theta: int, n_phi: int, L: int) -> None:
    if n_theta < 2 * (L + 1) or n_phi < 2 * (L + 1) + 1:
        raise ValueError(
            f"grid {n_theta}x{n_phi} too coarse for order L={L}: "
            f"need at least {2 * (L + 1)}x{2 * (L + 1) + 1}"
        )


def project_grid(values: np.ndarray, thetas: np.ndarray, phis: np.ndarray, L: int = MAX_ORDER):
    """Weighted least-squares projection of grid samples onto SH basis.

    Returns (coeffs, relative_residual) where the residual is the
    area-weighted L2 norm of the unexplained part over the grid,
    relative to the norm of the field.  Least squares (rather than
    naive quadrature) recovers band-limited fields to machine
    precision on the modest default grid.
    """
    values = np.asarray(values, dtype=np.float64)
    _check_band_limit(thetas.size, phis.size, L)
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    basis = sh_basis(L, tt.ravel(), pp.ravel())  # (n_cells, n_basis)
    w = np.sqrt(np.sin(tt.ravel()))
    f = values.ravel()
    coeffs, *_ = np.linalg.lstsq(basis * w[:, None], f * w, rcond=None)
    resid = np.linalg.norm((f - basis @ coeffs) * w)
    norm = np.linalg.norm(f * w)
    rel = resid / norm if norm > 0 else 0.0
    return coeffs, float(rel)


def project(field: LatLongMap, L: int = MAX_ORDER):
    return project_grid(field.values, field.thetas, field.phis, L)


def reconstruct(coeffs: np.ndarray, theta, phi):
    """Sum of c_l^m Y_l^m at the given angles."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    L = int(round(math.sqrt(coeffs.size))) - 1
    return sh_basis(L, theta, phi) @ coeffs


def reconstruct_map(coeffs: np.ndarray, thetas: np.ndarray, phis: np.ndarray) -> LatLongMap:
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    return LatLongMap(thetas, phis, reconstruct(coeffs, tt, pp))


def spherical_hankel(l: int, x):
    """First-kind spherical Hankel function h_l(x) = j_l(x) + i y_l(x)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("spherical_hankel requires x > 0")
    val = spherical_jn(l, x) + 1j * spherical_yn(l, x)
    return val if val.ndim else complex(val)


def spherical_hankel_deriv(l: int, x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("spherical_hankel_deriv requires x > 0")
    val = spherical_jn(l, x, derivative=True) + 1j * spherical_yn(l, x, derivative=True)
    return val if val.ndim else complex(val)


def db_error(a: LatLongMap, b: LatLongMap) -> float:
    """Area-weighted mean absolute log-magnitude ratio, in dB.

    Both fields are floored at MAGNITUDE_FLOOR before the log.
    """
    if not a.same_grid(b):
        raise ValueError("db_error requires identical grids")
    av = np.maximum(a.values, MAGNITUDE_FLOOR)
    bv = np.maximum(b.values, MAGNITUDE_FLOOR)
    w = np.sin(a.thetas)[:, None] * np.ones_like(av)
    err = np.abs(20.0 * np.log10(av / bv))
    return float((w * err).sum() / w.sum())


def save_coeffs(path, sh: ShCoeffs, comments: list[str] | None = None) -> None:
    with open(path, "w") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        f.write(f"format: {COEFF_FORMAT}\n")
        f.write(f"frequency_hz: {sh.frequency}\n")
        f.write("ordering: lm-row-major\n")
        f.write(f"convention: {COEFF_CONVENTION}\n")
        for c in sh.coeffs:
            f.write(f"{c:.17g}\n")


def load_coeffs(path) -> ShCoeffs:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if not ln.startswith("#")]
    header = {}
    idx = 0
    while idx < len(lines) and ":" in lines[idx]:
        key, _, val = lines[idx].partition(":")
        header[key.strip()] = val.strip()
        idx += 1
    if header.get("format") != COEFF_FORMAT:
        raise ValueError(f"bad coefficient file format: {header.get('format')!r}")
    values = [float(ln) for ln in lines[idx:] if ln.strip()]
    if len(values) != N_COEFFS:
        raise ValueError(f"expected {N_COEFFS} coefficients, found {len(values)}")
    return ShCoeffs(int(header["frequency_hz"]), np.array(values))


def save_map(path, m: LatLongMap) -> None:
    """CSV: first row longitudes, first column colatitudes, body magnitudes."""
    with open(path, "w") as f:
        f.write("," + ",".join(f"{p:.17g}" for p in m.phis) + "\n")
        for theta, row in zip(m.thetas, m.values):
            f.write(f"{theta:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_map(path) -> LatLongMap:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    phis = np.array([float(x) for x in lines[0].split(",")[1:]])
    thetas, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        thetas.append(float(parts[0]))
        rows.append([float(x) for x in parts[1:]])
    return LatLongMap(np.array(thetas), phis, np.array(rows))
