"""End-to-end slice interpolation, classical baselines, evaluation and training."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ami, rfn
from .fileio import export_csv
from .metrics import psnr, ssim
from .optim import Adam
from .params import ParamSet
from .volume import Volume, decimate_z, phantom, sparse_pair

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("volume_id", "method", "r_z", "region", "psnr_db", "ssim")
LOG_COLUMNS = ("stage", "step", "r_z", "loss")


def saint_infer(
    sparse: Volume, r_z: int, ami_ps: ParamSet, rfn_ps: ParamSet, threads: int = 1
) -> Volume:
    """Sagittal and coronal AMI passes fused by RFN; ``r_z = 1`` is the identity."""
    if r_z == 1:
        return sparse.with_data(sparse.data.copy())
    i_sag, i_cor = view_volumes(sparse, r_z, ami_ps, threads)
    return rfn.fuse_volume(i_sag, i_cor, sparse, r_z, rfn_ps)


def view_volumes(sparse: Volume, r_z: int, ami_ps: ParamSet, threads: int = 1):
    return (
        ami.sr_volume(sparse, "sagittal", r_z, ami_ps, threads=threads),
        ami.sr_volume(sparse, "coronal", r_z, ami_ps, threads=threads),
    )


def average_volume(i_sag: Volume, i_cor: Volume, sparse: Volume, r_z: int) -> Volume:
    """Plain two-view average with the observed slices restored."""
    out = 0.5 * (i_sag.data + i_cor.data)
    out[:, :, ::r_z] = sparse.data
    return i_sag.with_data(out)


def baseline_interp(sparse: Volume, r_z: int, method: str = "trilinear") -> Volume:
    """Per-column 1-D interpolation along z onto ``r_z * Z'`` slices.

    ``nearest`` rounds half-way positions down. ``trilinear`` extrapolates the
    trailing ``r_z - 1`` slices linearly from the last two observed slices.
    """
    zs = sparse.dims[2]
    t = np.arange(r_z * zs) / r_z
    if method == "nearest":
        idx = np.clip(np.ceil(t - 0.5).astype(int), 0, zs - 1)
        data = sparse.data[:, :, idx]
    elif method == "trilinear":
        if zs == 1:
            data = np.repeat(sparse.data, r_z, axis=2)
        else:
            lo = np.minimum(np.floor(t).astype(int), zs - 2)
            frac = t - lo
            a, b = sparse.data[:, :, lo], sparse.data[:, :, lo + 1]
            data = a + frac * (b - a)
        data[:, :, ::r_z] = sparse.data
    else:
        raise ValueError(f"unknown baseline {method!r}; expected 'nearest' or 'trilinear'")
    rx, ry, rz = sparse.spacing
    return Volume(np.ascontiguousarray(data), (rx, ry, rz / r_z), sparse.norm)


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def extend(self, other: "MetricsReport") -> None:
        self.rows.extend(other.rows)

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def to_csv(self, path) -> Path:
        return export_csv(self.rows, path, METRIC_COLUMNS)


def crop_region(v: np.ndarray, region: str) -> np.ndarray:
    """``full`` or ``crop<c>`` (central ``c x c x Z``)."""
    if region == "full":
        return v
    if not region.startswith("crop"):
        raise ValueError(f"unknown region {region!r}")
    c = int(region[4:])
    x, y = v.shape[:2]
    if c < 1 or c > x or c > y:
        raise ValueError(f"crop {c} does not fit inside {x}x{y}")
    x0, y0 = (x - c) // 2, (y - c) // 2
    return v[x0 : x0 + c, y0 : y0 + c]


def evaluate(
    pred: Volume,
    gt: Volume,
    r_z: int,
    method: str,
    volume_id: str = "vol",
    region: str = "crop32",
    window: str = "auto",
) -> MetricsReport:
    """PSNR/SSIM over all slices and over synthesized slices only."""
    if pred.dims != gt.dims:
        raise ValueError(f"prediction {pred.dims} and ground truth {gt.dims} differ")
    p, g = crop_region(pred.data, region), crop_region(gt.data, region)
    rows = [_row(volume_id, method, r_z, f"{region}:all", p, g, window)]
    syn = [z for z in range(p.shape[2]) if z % r_z]
    if syn:
        rows.append(_row(volume_id, method, r_z, f"{region}:synth", p[:, :, syn], g[:, :, syn], window))
    return MetricsReport(rows)


def _row(volume_id, method, r_z, region, p, g, window):
    return {
        "volume_id": volume_id,
        "method": method,
        "r_z": r_z,
        "region": region,
        "psnr_db": psnr(p, g),
        "ssim": ssim(p, g, window),
    }


# ----------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentConfig:
    dims: tuple[int, int, int] = (48, 48, 48)
    recipes: tuple[str, ...] = ("laminae+ellipsoids",)
    train_count: int = 6
    test_count: int = 2
    data_seed: int = 1000
    inplane_mm: tuple[float, float] = (0.8, 1.0)
    axial_mm: tuple[float, float] = (0.8, 6.0)
    train_rz: tuple[int, ...] = (2, 3)
    # dense volumes are also decimated by these factors before pairing, to
    # cover coarser slice spacing (factor 1 = the volume as generated)
    dense_decimation: tuple[int, ...] = (1, 2)
    eval_rz: tuple[int, ...] = (2, 4)
    ami_preset: str = "desk"
    rfn_preset: str = "desk"
    ami_steps: int = 500
    rfn_steps: int = 500
    slices_per_view: int = 4
    rfn_batch: int = 4
    lr: float = 1e-3
    # "constant" or "cosine" (anneal to zero over each stage)
    lr_schedule: str = "constant"
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    region: str = "crop32"
    out_dir: str | None = None

    def __post_init__(self):
        if self.ami_steps < 1 or self.rfn_steps < 1:
            raise ValueError("step counts must be positive")
        if self.train_count < 1:
            raise ValueError("empty training set")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        for name in ("dims", "recipes", "inplane_mm", "axial_mm", "train_rz", "eval_rz",
                     "dense_decimation"):
            setattr(self, name, tuple(getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_dataset(cfg: ExperimentConfig) -> tuple[list[Volume], list[Volume]]:
    """Train and held-out phantoms with per-volume spacing drawn from the config."""
    rng = np.random.default_rng(cfg.data_seed)
    vols = []
    for i in range(cfg.train_count + cfg.test_count):
        recipe = cfg.recipes[i % len(cfg.recipes)]
        r_in = rng.uniform(*cfg.inplane_mm)
        r_ax = rng.uniform(*cfg.axial_mm)
        vols.append(phantom(cfg.dims, (r_in, r_in, r_ax), cfg.data_seed + i, recipe))
    return vols[: cfg.train_count], vols[cfg.train_count :]


def _lr_at(cfg: ExperimentConfig, step: int, total: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total))


def _set_lr(opt: Adam, lr: float) -> None:
    for s in opt.states:
        s.lr = lr


def training_volumes(cfg: ExperimentConfig, train: list[Volume]) -> list[Volume]:
    """Training phantoms plus their axially decimated copies."""
    return [v if d == 1 else decimate_z(v, d) for v in train for d in cfg.dense_decimation]


def train_ami(cfg: ExperimentConfig, train: list[Volume], log_rows: list | None = None) -> ParamSet:
    rng = np.random.default_rng(cfg.seed)
    ps = ami.init_ami(ami.PRESETS[cfg.ami_preset], cfg.seed)
    opt = Adam(ps.values(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    vols = training_volumes(cfg, train)
    pairs = {(i, r): sparse_pair(v, r) for i, v in enumerate(vols) for r in cfg.train_rz}
    for step in range(cfg.ami_steps):
        _set_lr(opt, _lr_at(cfg, step, cfg.ami_steps))
        r = int(rng.choice(cfg.train_rz))
        samples = []
        for axis in ("sagittal", "coronal"):
            gt, sparse = pairs[(int(rng.integers(len(vols))), r)]
            samples.append(ami.sample_view_batch(gt, sparse, axis, r, cfg.slices_per_view, rng))
        loss = ami.ami_train_step(samples, ps, opt)
        if log_rows is not None:
            log_rows.append({"stage": "ami", "step": step, "r_z": r, "loss": loss})
        if step % 50 == 0:
            log.info("ami step %d r_z=%d loss=%.5f", step, r, loss)
    ps.set_trainable(False)
    return ps


def train_rfn(
    cfg: ExperimentConfig, train: list[Volume], ami_ps: ParamSet, log_rows: list | None = None
) -> ParamSet:
    rng = np.random.default_rng(cfg.seed + 1)
    ami_ps.set_trainable(False)
    ps = rfn.init_rfn(rfn.PRESETS[cfg.rfn_preset], cfg.seed)
    opt = Adam(ps.values(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    pool = []
    for v in training_volumes(cfg, train):
        for r in cfg.train_rz:
            gt, sparse = sparse_pair(v, r)
            i_sag, i_cor = view_volumes(sparse, r, ami_ps)
            syn = rfn.synthesized_indices(gt.dims[2], r)
            pool.append((r, syn, i_sag.data, i_cor.data, gt.data))
    for step in range(cfg.rfn_steps):
        _set_lr(opt, _lr_at(cfg, step, cfg.rfn_steps))
        r, syn, sag, cor, gt = pool[int(rng.integers(len(pool)))]
        zs = rng.choice(syn, size=min(cfg.rfn_batch, len(syn)), replace=False)
        batch = tuple(a[:, :, zs].transpose(2, 0, 1) for a in (sag, cor, gt))
        loss = rfn.rfn_train_step(batch, ps, opt)
        if log_rows is not None:
            log_rows.append({"stage": "rfn", "step": step, "r_z": r, "loss": loss})
        if step % 50 == 0:
            log.info("rfn step %d r_z=%d loss=%.5f", step, r, loss)
    ps.set_trainable(False)
    return ps


def train_saint(cfg: ExperimentConfig) -> tuple[ParamSet, ParamSet, list[dict]]:
    """Stage 1 trains AMI on both views; stage 2 freezes it and trains RFN."""
    train, _ = make_dataset(cfg)
    if not train:
        raise ValueError("empty training set")
    rows: list[dict] = []
    ami_ps = train_ami(cfg, train, rows)
    rfn_ps = train_rfn(cfg, train, ami_ps, rows)
    if cfg.out_dir:
        export_csv(rows, Path(cfg.out_dir) / "train_log.csv", LOG_COLUMNS)
    return ami_ps, rfn_ps, rows


def evaluate_methods(
    cfg: ExperimentConfig, vols: list[Volume], r_z: int, ami_ps: ParamSet, rfn_ps: ParamSet
) -> MetricsReport:
    """SAINT, its two-view average and both classical baselines on ``vols``."""
    report = MetricsReport()
    for i, v in enumerate(vols):
        gt, sparse = sparse_pair(v, r_z)
        i_sag, i_cor = view_volumes(sparse, r_z, ami_ps)
        preds = {
            "saint": rfn.fuse_volume(i_sag, i_cor, sparse, r_z, rfn_ps),
            "ami_avg": average_volume(i_sag, i_cor, sparse, r_z),
            "ami_sag": i_sag,
            "trilinear": baseline_interp(sparse, r_z, "trilinear"),
            "nearest": baseline_interp(sparse, r_z, "nearest"),
        }
        for name, pred in preds.items():
            report.extend(evaluate(pred, gt, r_z, name, f"test{i}", cfg.region))
    return report


def mean_metric(report: MetricsReport, method: str, r_z: int, region: str, key="psnr_db") -> float:
    vals = [r[key] for r in report.select(method=method, r_z=r_z, region=region)]
    return float(np.mean(vals)) if vals else math.nan
