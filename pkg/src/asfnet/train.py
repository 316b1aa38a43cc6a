"""Training and evaluation harness for the coefficient network.

One network per frequency band.  Adam with a continuously decaying
learning rate, 8:1:1 train/validation/test split, best-validation
checkpointing, and a dB-error evaluation that undoes the dataset
normalization before comparing reconstructed directional fields.

Training is resumable: a state sidecar (parameters, moments, epoch
counter, best validation loss) is written after every epoch, and the
per-epoch shuffle is seeded independently per epoch, so a resumed run
retraces the interrupted one exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import geom, net, oracle, sphharm
from .geom import PointCloud
from .net import ArchConfig, ModelParams
from .oracle import DatasetExample


class NonFiniteGradientError(RuntimeError):
    """A gradient block became NaN or infinite during a step."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the best checkpoint so far was kept."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings; decay_step is derived from the split."""

    frequency: int
    learning_rate0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.9
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if not self.learning_rate0 > 0:
            raise ValueError("learning_rate0 must be positive")
        if self.frequency not in sphharm.FREQUENCY_BANDS:
            raise ValueError(f"frequency must be one of {sphharm.FREQUENCY_BANDS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint train/validation/test id lists plus the split seed."""

    train: tuple
    validation: tuple
    test: tuple
    seed: int


def split_dataset(examples, seed: int) -> SplitManifest:
    """Seeded shuffle, then an 8:1:1 cut with the remainder to train.

    ``examples`` is a list of DatasetExample or of plain id strings.
    """
    ids = [ex.id if isinstance(ex, DatasetExample) else str(ex) for ex in examples]
    n = len(ids)
    if n < 10:
        raise ValueError(f"need at least 10 examples to split 8:1:1, got {n}")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5917])).permutation(n)
    ids = [ids[i] for i in order]
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return SplitManifest(
        tuple(ids[:n_train]),
        tuple(ids[n_train : n_train + n_val]),
        tuple(ids[n_train + n_val :]),
        seed,
    )


def lr_schedule(cfg: TrainConfig, step: int, decay_step: int) -> float:
    """lr0 * decay_rate^(step / decay_step), continuous exponent."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if decay_step < 1:
        raise ValueError("decay_step must be at least 1")
    return cfg.learning_rate0 * cfg.decay_rate ** (step / decay_step)


@dataclass
class AdamState:
    """First/second moment accumulators (float64) and the step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on the float32 parameters.

    Moments are kept in float64; the updated parameters are rounded back
    to float32, the canonical storage dtype.
    """
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64).reshape(params[name].shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    for name in sorted(params):
        g = np.asarray(grads[name], dtype=np.float64).reshape(params[name].shape)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(g.shape)
            v = np.zeros(g.shape)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p = params[name].astype(np.float64)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        params[name] = p.astype(np.float32)


@dataclass
class LoadedExample:
    """One example with its cloud geometry cached for repeated steps."""

    id: str
    cloud: PointCloud
    target: np.ndarray  # normalized 16-vector for the configured band
    norm_const: float
    gm: net.CloudGeometry


def load_examples(
    data_dir, examples, frequency: int, arch: ArchConfig
) -> dict[str, LoadedExample]:
    """Read clouds and band targets, precomputing neighbor geometry."""
    out = {}
    for ex in examples:
        cloud = geom.load_cloud(os.path.join(data_dir, ex.cloud_file))
        sh = sphharm.load_coeffs(os.path.join(data_dir, ex.target_files[frequency]))
        if sh.frequency != frequency:
            raise ValueError(
                f"target file for {ex.id} carries band {sh.frequency}, expected {frequency}"
            )
        gm = net.prepare_geometry(arch, cloud)
        out[ex.id] = LoadedExample(ex.id, cloud, sh.coeffs, ex.norm_const, gm)
    return out


LOG_COLUMNS = ["epoch", "step", "lr", "train_loss", "val_loss"]


def _write_log(path, cfg: TrainConfig, decay_step: int, rows) -> None:
    with open(path, "w") as f:
        f.write("# asfnet training log\n")
        f.write(f"# band_hz: {cfg.frequency}\n")
        f.write(f"# seed: {cfg.seed}\n")
        f.write(f"# lr0: {cfg.learning_rate0:.17g}\n")
        f.write(f"# decay: continuous exponent, rate {cfg.decay_rate} per {decay_step} steps\n")
        f.write(f"# pooling: {cfg.arch.pooling}\n")
        f.write(f"# input_scale: {cfg.arch.input_scale:g}\n")
        f.write(f"# use_rbf_delta: {cfg.arch.use_rbf_delta}\n")
        f.write(f"# use_surface_encoder: {cfg.arch.use_surface_encoder}\n")
        f.write("\t".join(LOG_COLUMNS) + "\n")
        for r in rows:
            f.write(
                f"{r[0]}\t{r[1]}\t{r[2]:.10g}\t{r[3]:.10g}\t{r[4]:.10g}\n"
            )


def _mean_loss(model: ModelParams, loaded: dict, ids) -> float:
    total = 0.0
    for ex_id in ids:
        ex = loaded[ex_id]
        pred = net.forward(model, ex.cloud, ex.gm)
        d = pred - ex.target
        total += float(d @ d) / len(d)
    return total / len(ids)


def _save_state(path, model: ModelParams, state: AdamState, epoch: int, best_val: float, rows):
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    arrays.update({f"m_{k}": v for k, v in state.m.items()})
    arrays.update({f"v_{k}": v for k, v in state.v.items()})
    meta = dict(epoch=epoch, step=state.step, best_val=best_val, rows=rows)
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def _load_state(path, model: ModelParams, state: AdamState):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta_json"]).decode())
        for k in model.params:
            model.params[k] = z[f"param_{k}"].astype(np.float32)
            state.m[k] = z[f"m_{k}"].astype(np.float64)
            state.v[k] = z[f"v_{k}"].astype(np.float64)
    state.step = int(meta["step"])
    rows = [tuple(r) for r in meta["rows"]]
    return int(meta["epoch"]), float(meta["best_val"]), rows


def train_model(
    cfg: TrainConfig,
    data_dir,
    out_path,
    log_path=None,
    split: SplitManifest | None = None,
    state_path=None,
    resume: bool = False,
    max_epochs: int | None = None,
):
    """Train one per-band network; returns (best model, split, log rows).

    Saves the best-validation checkpoint to ``out_path`` and, when
    ``state_path`` is given, a resumable sidecar after every epoch.
    ``max_epochs`` caps how many epochs this invocation runs (used to
    simulate interruption); the configured total is ``cfg.epochs``.
    """
    examples = oracle.load_manifest(data_dir)
    by_id = {ex.id: ex for ex in examples}
    if split is None:
        split = split_dataset(examples, cfg.seed)
    needed = [by_id[i] for i in (*split.train, *split.validation)]
    loaded = load_examples(data_dir, needed, cfg.frequency, cfg.arch)

    n_train = len(split.train)
    decay_step = 10 * n_train
    model = net.init_params(cfg.arch, cfg.frequency, cfg.seed)
    state = AdamState()
    rows: list[tuple] = []
    start_epoch = 0
    if resume:
        if state_path is None or not os.path.exists(state_path):
            raise FileNotFoundError("resume requested but no state sidecar found")
        start_epoch, best_val, rows = _load_state(state_path, model, state)
    else:
        best_val = _mean_loss(model, loaded, split.validation)
        # checkpoint at initialization so the selection rule (best
        # validation <= initial validation) holds even if every later
        # epoch is worse
        net.save_model(out_path, model)

    stop = cfg.epochs if max_epochs is None else min(cfg.epochs, start_epoch + max_epochs)
    for epoch in range(start_epoch, stop):
        perm = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0xE90C, epoch])
        ).permutation(n_train)
        epoch_loss = 0.0
        for lo in range(0, n_train, cfg.batch_size):
            batch = [split.train[i] for i in perm[lo : lo + cfg.batch_size]]
            grads_sum: dict | None = None
            batch_loss = 0.0
            for ex_id in batch:
                ex = loaded[ex_id]
                loss, grads, _ = net.loss_and_gradients(model, ex.cloud, ex.target, ex.gm)
                batch_loss += loss
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for k in grads_sum:
                        grads_sum[k] += grads[k]
            scale = 1.0 / len(batch)
            for k in grads_sum:
                grads_sum[k] *= scale
            batch_loss *= scale
            epoch_loss += batch_loss * len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}; "
                    f"best checkpoint kept at {out_path}"
                )
            lr = lr_schedule(cfg, state.step, decay_step)
            try:
                adam_step(model.params, grads_sum, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            except NonFiniteGradientError as exc:
                raise TrainingDivergedError(
                    f"{exc} at epoch {epoch}; best checkpoint kept at {out_path}"
                ) from exc
        train_loss = epoch_loss / n_train
        val_loss = _mean_loss(model, loaded, split.validation)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(
                f"validation loss became non-finite at epoch {epoch}; "
                f"best checkpoint kept at {out_path}"
            )
        lr_now = lr_schedule(cfg, state.step, decay_step)
        rows.append((int(epoch), int(state.step), float(lr_now), float(train_loss), float(val_loss)))
        if val_loss <= best_val:
            best_val = val_loss
            net.save_model(out_path, model)
        if state_path is not None:
            _save_state(state_path, model, state, epoch + 1, best_val, rows)
        if log_path is not None:
            _write_log(log_path, cfg, decay_step, rows)

    best = net.load_model(out_path)
    return best, split, rows


EVAL_COLUMNS = ["band_hz", "n_examples", "mean_db_error", "noise_sigma", "ablation_flags"]


def ablation_label(arch: ArchConfig) -> str:
    parts = []
    if not arch.use_rbf_delta:
        parts.append("no-rbf-delta")
    if not arch.use_surface_encoder:
        parts.append("no-surface-encoder")
    return ",".join(parts) if parts else "none"


def evaluate(
    model: ModelParams,
    data_dir,
    examples,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
):
    """Mean dB error over examples for the model's band.

    Predictions and targets are both un-normalized, reconstructed on
    the default lat-long grid, and compared as magnitudes.  Noise, if
    any, perturbs only the input clouds, never the targets.
    """
    band = model.frequency
    thetas, phis = sphharm.default_grid()
    errors = []
    for j, ex in enumerate(examples):
        if band not in ex.target_files:
            raise ValueError(f"example {ex.id} has no target for band {band}")
        cloud = geom.load_cloud(os.path.join(data_dir, ex.cloud_file))
        pts = cloud.points
        if noise_sigma > 0:
            rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 0x0153, j]))
            pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
            cloud = PointCloud(pts)
        sh = sphharm.load_coeffs(os.path.join(data_dir, ex.target_files[band]))
        pred = net.forward(model, cloud) * ex.norm_const
        target = sh.coeffs * ex.norm_const
        map_p = sphharm.reconstruct_map(pred, thetas, phis)
        map_t = sphharm.reconstruct_map(target, thetas, phis)
        map_p = sphharm.LatLongMap(thetas, phis, np.abs(map_p.values))
        map_t = sphharm.LatLongMap(thetas, phis, np.abs(map_t.values))
        errors.append(sphharm.db_error(map_p, map_t))
    mean_db = float(np.mean(errors))
    return dict(
        band_hz=band,
        n_examples=len(examples),
        mean_db_error=mean_db,
        noise_sigma=noise_sigma,
        ablation_flags=ablation_label(model.arch),
    )


def write_eval_report(path, rows, header_lines=None) -> None:
    """TSV report, one row per (band, noise level) evaluation."""
    with open(path, "w") as f:
        f.write("# asfnet evaluation report\n")
        for line in header_lines or []:
            f.write(f"# {line}\n")
        f.write("\t".join(EVAL_COLUMNS) + "\n")
        for r in rows:
            f.write(
                f"{r['band_hz']}\t{r['n_examples']}\t{r['mean_db_error']:.6f}"
                f"\t{r['noise_sigma']:g}\t{r['ablation_flags']}\n"
            )
