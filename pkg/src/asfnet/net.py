"""Permutation-invariant network from point cloud to SH coefficients.

Pipeline per point: RBF-weighted differential coordinate -> shared
surface encoder (1 conv + 3 shared-MLP layers, relu) into a 128-d
latent code -> feature block of shape (1+2K) x latent made of the code
plus K Euclidean-weighted and K latent-weighted latent differences ->
conv over the (1+2K) block -> two shared MLP layers -> global symmetric
pooling over points -> four fully-connected tanh layers -> 16 outputs.

Forward and backward passes are written from first principles in numpy.
Parameters are stored float32; all arithmetic runs in float64.  Neighbor
index selection (Euclidean and latent) is treated as locally constant
by the backward pass.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geom
from .geom import PointCloud
from .sphharm import N_COEFFS

CHECKPOINT_MAGIC = b"ASFNET1"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed or truncated checkpoint file."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint version does not match this implementation."""


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes and switches; defaults land near a 34k parameter count."""

    k: int = 5
    latent_dim: int = 128
    encoder_widths: tuple = (16, 32, 64)
    conv_channels: int = 16
    mlp_widths: tuple = (16, 16)
    fc_widths: tuple = (16, 16, 16)
    pooling: str = "max"
    use_rbf_delta: bool = True
    use_surface_encoder: bool = True
    rbf_scale: float = 1.0
    input_scale: float = 1.0

    def __post_init__(self):
        if self.pooling not in ("max", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")

    @property
    def code_dim(self) -> int:
        return self.latent_dim if self.use_surface_encoder else 3

    def layer_dims(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) triples in parameter order."""
        dims = []
        if self.use_surface_encoder:
            widths = [3, *self.encoder_widths, self.latent_dim]
            for i in range(len(widths) - 1):
                dims.append((f"enc{i}", widths[i], widths[i + 1]))
        dims.append(("conv", (1 + 2 * self.k) * self.code_dim, self.conv_channels))
        widths = [self.conv_channels, *self.mlp_widths]
        for i in range(len(widths) - 1):
            dims.append((f"mlp{i}", widths[i], widths[i + 1]))
        widths = [self.mlp_widths[-1], *self.fc_widths, N_COEFFS]
        for i in range(len(widths) - 1):
            dims.append((f"fc{i}", widths[i], widths[i + 1]))
        return dims


@dataclass
class ModelParams:
    arch: ArchConfig
    frequency: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def init_params(arch: ArchConfig, frequency: int, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, float32, seeded."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, fan_in, fan_out in arch.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}_W"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(np.float32)
        params[f"{name}_b"] = np.zeros(fan_out, dtype=np.float32)
    return ModelParams(arch, frequency, params)


@dataclass
class CloudGeometry:
    """Parameter-independent per-cloud quantities, cacheable across steps.

    ``ranks`` are the lexicographic ranks of the differential
    coordinates, used as the value-derived (hence permutation
    invariant) tie-break when selecting latent-space neighbors; equal
    deltas produce equal latent codes, so their relative order never
    affects any computed value.
    """

    nbr_idx: np.ndarray  # (N, K) Euclidean neighbors, canonical order
    delta: np.ndarray  # (N, 3) differential coordinates
    coeff: np.ndarray  # (N, K) per-row weights w_ij / sum_j w_ij
    ranks: np.ndarray  # (N,) lexicographic ranks of delta


def prepare_geometry(arch: ArchConfig, cloud: PointCloud) -> CloudGeometry:
    pts = cloud.points
    if len(pts) < arch.k + 1:
        raise ValueError(f"need at least K+1={arch.k + 1} points, got {len(pts)}")
    nbr = geom.knn_all(pts, arch.k)
    delta, w, tot = geom.weighted_deltas_all(pts, nbr, arch.use_rbf_delta, arch.rbf_scale)
    # nondimensionalize: differential coordinates of dense clouds are
    # millimeter-scale, which starves every downstream activation; a fixed
    # positive scale keeps first-layer inputs O(1) without affecting the
    # lexicographic ranks or any RBF weight
    delta = delta * arch.input_scale
    return CloudGeometry(nbr, delta, w / tot[:, None], geom.lex_ranks(delta))


def _f64(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def _scatter_sub(acc: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    """acc[idx[r]] -= vals[r] with duplicate indices, via sort + reduceat.

    Much faster than np.subtract.at; summation order is fixed by the
    stable sort, so results are deterministic.
    """
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    sums = np.add.reduceat(vals[order], starts, axis=0)
    acc[sidx[starts]] -= sums


def _encode(arch: ArchConfig, p: dict, gm: CloudGeometry):
    """Shared encoder stack on the differential coordinates."""
    enc_acts = [gm.delta]
    z = gm.delta
    if arch.use_surface_encoder:
        for i in range(len(arch.encoder_widths) + 1):
            z = np.maximum(z @ p[f"enc{i}_W"] + p[f"enc{i}_b"], 0.0)
            enc_acts.append(z)
    return z, enc_acts


def _features(arch: ArchConfig, gm: CloudGeometry, z: np.ndarray):
    """Per-point (1+2K) x latent feature block and its intermediates."""
    k = arch.k
    n = z.shape[0]
    # latent-space neighbors, recomputed from the current codes
    lat_idx = geom.knn_all(z, k, ranks=gm.ranks)

    diff_e = z[:, None, :] - z[gm.nbr_idx]  # (N, K, D)
    diff_l = z[:, None, :] - z[lat_idx]
    if arch.use_rbf_delta:
        u = np.exp(-np.einsum("ijk,ijk->ij", diff_l, diff_l) / arch.rbf_scale**2)
        t = u.sum(axis=1)
        a_l = u / t[:, None]
    else:
        u = t = None
        a_l = np.full((n, k), 1.0 / k)

    feat = np.empty((n, 1 + 2 * k, z.shape[1]))
    feat[:, 0, :] = z
    np.multiply(gm.coeff[:, :, None], diff_e, out=feat[:, 1 : k + 1, :])
    np.multiply(a_l[:, :, None], diff_l, out=feat[:, k + 1 :, :])
    return feat, lat_idx, diff_e, diff_l, u, t, a_l


def encode_points(
    model: ModelParams, cloud: PointCloud, gm: CloudGeometry | None = None
) -> np.ndarray:
    """Per-point latent codes z_i (the encoder output, or the raw
    differential coordinates when the encoder is ablated)."""
    if gm is None:
        gm = prepare_geometry(model.arch, cloud)
    z, _ = _encode(model.arch, _f64(model.params), gm)
    return z


def build_features(
    model: ModelParams,
    cloud: PointCloud,
    codes: np.ndarray | None = None,
    gm: CloudGeometry | None = None,
) -> np.ndarray:
    """Per-point feature blocks of shape (N, 1+2K, latent).

    Row 0 is the latent code; rows 1..K the Euclidean-RBF-weighted
    latent differences (sharing the delta-coordinate denominators);
    rows K+1..2K the latent-RBF-weighted differences.
    """
    if gm is None:
        gm = prepare_geometry(model.arch, cloud)
    if codes is None:
        codes = encode_points(model, cloud, gm)
    feat, *_ = _features(model.arch, gm, np.asarray(codes, dtype=np.float64))
    return feat


def _forward_cache(model: ModelParams, gm: CloudGeometry):
    arch = model.arch
    p = _f64(model.params)
    n = gm.delta.shape[0]

    z, enc_acts = _encode(arch, p, gm)
    feat, lat_idx, diff_e, diff_l, u, t, a_l = _features(arch, gm, z)
    x = feat.reshape(n, -1)

    c = np.maximum(x @ p["conv_W"] + p["conv_b"], 0.0)
    m1 = np.maximum(c @ p["mlp0_W"] + p["mlp0_b"], 0.0)
    m2 = np.maximum(m1 @ p["mlp1_W"] + p["mlp1_b"], 0.0)

    if arch.pooling == "max":
        pool_arg = np.argmax(m2, axis=0)
        g = m2[pool_arg, np.arange(m2.shape[1])]
    else:
        pool_arg = None
        g = m2.mean(axis=0)

    fc_acts = [g]
    h = g
    for i in range(len(arch.fc_widths) + 1):
        h = np.tanh(h @ p[f"fc{i}_W"] + p[f"fc{i}_b"])
        fc_acts.append(h)

    cache = dict(
        p=p, enc_acts=enc_acts, z=z, lat_idx=lat_idx, diff_e=diff_e, diff_l=diff_l,
        u=u, t=t, a_l=a_l, x=x, c=c, m1=m1, m2=m2, pool_arg=pool_arg, fc_acts=fc_acts,
    )
    return h, cache


def forward(model: ModelParams, cloud: PointCloud, gm: CloudGeometry | None = None) -> np.ndarray:
    """Predicted 16 coefficients, each strictly in (-1, 1)."""
    if gm is None:
        gm = prepare_geometry(model.arch, cloud)
    out, _ = _forward_cache(model, gm)
    return out


def loss_and_gradients(
    model: ModelParams,
    cloud: PointCloud,
    target: np.ndarray,
    gm: CloudGeometry | None = None,
):
    """Squared-L2 loss and its exact gradients w.r.t. every parameter.

    Neighbor index sets are held fixed; everything else (RBF weights in
    latent space, shared denominators, pooling, activations) is
    differentiated analytically.
    """
    arch = model.arch
    if gm is None:
        gm = prepare_geometry(arch, cloud)
    out, cc = _forward_cache(model, gm)
    target = np.asarray(target, dtype=np.float64)
    diff = out - target
    loss = float(diff @ diff)

    p = cc["p"]
    grads = {}
    k = arch.k
    n = cc["z"].shape[0]
    dim = cc["z"].shape[1]

    # fully-connected tanh stack
    dh = 2.0 * diff
    for i in reversed(range(len(arch.fc_widths) + 1)):
        act = cc["fc_acts"][i + 1]
        pre = dh * (1.0 - act * act)
        grads[f"fc{i}_W"] = np.outer(cc["fc_acts"][i], pre)
        grads[f"fc{i}_b"] = pre
        dh = pre @ p[f"fc{i}_W"].T

    # pooling
    dm2 = np.zeros_like(cc["m2"])
    if arch.pooling == "max":
        dm2[cc["pool_arg"], np.arange(dm2.shape[1])] = dh
    else:
        dm2 += dh[None, :] / n

    # shared MLPs and feature conv (relu)
    dm2 = dm2 * (cc["m2"] > 0)
    grads["mlp1_W"] = cc["m1"].T @ dm2
    grads["mlp1_b"] = dm2.sum(axis=0)
    dm1 = (dm2 @ p["mlp1_W"].T) * (cc["m1"] > 0)
    grads["mlp0_W"] = cc["c"].T @ dm1
    grads["mlp0_b"] = dm1.sum(axis=0)
    dc = (dm1 @ p["mlp0_W"].T) * (cc["c"] > 0)
    grads["conv_W"] = cc["x"].T @ dc
    grads["conv_b"] = dc.sum(axis=0)
    dx = dc @ p["conv_W"].T

    dfeat = dx.reshape(n, 1 + 2 * k, dim)
    dz = dfeat[:, 0, :].copy()

    # Euclidean-weighted rows: coefficients are input constants
    d_rows_e = dfeat[:, 1 : k + 1, :]
    dz += np.einsum("ik,ikd->id", gm.coeff, d_rows_e)
    _scatter_sub(dz, gm.nbr_idx.ravel(), (gm.coeff[:, :, None] * d_rows_e).reshape(-1, dim))

    # latent-weighted rows: weights depend on z through the RBF kernel
    d_rows_l = dfeat[:, k + 1 :, :]
    if arch.use_rbf_delta:
        q = np.einsum("ikd,ikd->ik", d_rows_l, cc["diff_l"])
        du = (q - (q * cc["a_l"]).sum(axis=1, keepdims=True)) / cc["t"][:, None]
        ddiff = cc["a_l"][:, :, None] * d_rows_l
        ddiff += (du * cc["u"] * (-2.0 / arch.rbf_scale**2))[:, :, None] * cc["diff_l"]
    else:
        ddiff = d_rows_l / k
    dz += ddiff.sum(axis=1)
    _scatter_sub(dz, cc["lat_idx"].ravel(), ddiff.reshape(-1, dim))

    # surface encoder
    if arch.use_surface_encoder:
        for i in reversed(range(len(arch.encoder_widths) + 1)):
            act = cc["enc_acts"][i + 1]
            dz = dz * (act > 0)
            grads[f"enc{i}_W"] = cc["enc_acts"][i].T @ dz
            grads[f"enc{i}_b"] = dz.sum(axis=0)
            dz = dz @ p[f"enc{i}_W"].T

    return loss, grads, out


def save_model(path, model: ModelParams) -> None:
    """Checkpoint: magic, length-prefixed JSON descriptor, float32 LE blocks."""
    arch_d = asdict(model.arch)
    arch_d["encoder_widths"] = list(model.arch.encoder_widths)
    arch_d["mlp_widths"] = list(model.arch.mlp_widths)
    arch_d["fc_widths"] = list(model.arch.fc_widths)
    names = sorted(model.params)
    header = {
        "version": CHECKPOINT_VERSION,
        "frequency_hz": model.frequency,
        "arch": arch_d,
        "params": [[name, list(model.params[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_model(path) -> ModelParams:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointFormatError("truncated checkpoint: missing header")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic bytes {data[:7]!r}")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise CheckpointFormatError("truncated checkpoint: incomplete descriptor")
    header = json.loads(data[off : off + hlen].decode())
    off += hlen
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    arch_d = dict(header["arch"])
    for key in ("encoder_widths", "mlp_widths", "fc_widths"):
        arch_d[key] = tuple(arch_d[key])
    arch = ArchConfig(**arch_d)
    params = {}
    for name, shape in header["params"]:
        size = int(np.prod(shape)) * 4
        if len(data) < off + size:
            raise CheckpointFormatError(f"truncated checkpoint: parameter {name}")
        params[name] = np.frombuffer(data[off : off + size], dtype="<f4").reshape(shape).copy()
        off += size
    if off != len(data):
        raise CheckpointFormatError(f"{len(data) - off} trailing bytes")
    return ModelParams(arch, int(header["frequency_hz"]), params)
