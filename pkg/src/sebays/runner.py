"""Run-directory level operations behind the command line.

A run directory holds::

    config.yaml              resolved configuration
    run_log.json             dataset sizes and normalisation statistics
    snapshots/learner_NNN.snap, snapshots/perturbed_NNN.snap
    train_log.csv            epoch, phase, lr, loss, kl, nll, remaining ratios
    sparsity.csv             epoch, phase, remaining_param_ratio, remaining_flop_ratio
    perturbations.csv        training NLL right before/after each perturbation
    trajectory.csv           checkpoint_id, epoch, phase, example_id, p_0..p_{C-1}
    metrics.json / .csv      written by ``eval``
    diversity.json / .csv    written by ``diversity``
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import ConfigError, RunConfig, load_config, parse_config, validate
from .data import (
    Dataset,
    corrupt,
    gaussian_blobs,
    load_csv,
    load_idx_images,
    normalization_stats,
    normalize,
    split_train_val,
    synthetic_digits,
    two_moons,
)
from .model import Network
from .numeric import AUGMENT, DATA, EVAL, RngStream
from .schedule import SCHEDULES, schedule_csv
from .trainer import BaseLearnerSnapshot, load_snapshots, train

log = logging.getLogger(__name__)

_GEN = 1_000_000  # sub-stream tag for dataset generation, clear of epoch indices


class JensenViolation(ArithmeticError):
    pass


@dataclass
class Data:
    train: Dataset
    test: Dataset
    val: Dataset | None
    mean: np.ndarray | None
    std: np.ndarray | None

    def norm(self, ds: Dataset) -> np.ndarray:
        if self.mean is None:
            return ds.x
        return normalize(ds, self.mean, self.std).x

    @property
    def norm_pair(self):
        return None if self.mean is None else (self.mean, self.std)


def build_data(cfg: RunConfig) -> Data:
    d = cfg.data
    gen = RngStream(cfg.seed, DATA).derive(_GEN)
    if d.source == "two-moons":
        train_ds = two_moons(d.n_train, d.noise, gen.derive(0))
        test_ds = two_moons(d.n_test, d.noise, gen.derive(1))
    elif d.source == "blobs":
        train_ds = gaussian_blobs(d.n_train, d.classes, d.spread, gen.derive(0))
        test_ds = gaussian_blobs(d.n_test, d.classes, d.spread, gen.derive(1))
    elif d.source == "synthetic-digits":
        xi, yi = synthetic_digits(d.n_train, gen.derive(0), "train")
        xt, yt = synthetic_digits(d.n_test, gen.derive(1), "test")
        train_ds = Dataset(xi[:, None] / 255.0, yi, 10)
        test_ds = Dataset(xt[:, None] / 255.0, yt, 10, "test")
    elif d.source == "idx":
        train_ds = load_idx_images(d.train_images, d.train_labels)
        test_ds = load_idx_images(d.test_images, d.test_labels, split="test")
    else:
        train_ds = load_csv(d.train_csv)
        test_ds = load_csv(d.test_csv, split="test")
        k = max(train_ds.n_classes, test_ds.n_classes)
        train_ds.n_classes = test_ds.n_classes = k
    val_ds = None
    if d.val_fraction:
        train_ds, val_ds = split_train_val(train_ds, d.val_fraction, gen.derive(3))
    mean = std = None
    if d.normalize:
        mean, std = normalization_stats(train_ds)
    return Data(train_ds, test_ds, val_ds, mean, std)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(rows: list[dict], fields: list[str] | None = None) -> str:
    if fields is not None:
        rows = [{k: r.get(k) for k in fields} for r in rows]
    return M.rows_to_csv(rows)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# -- train ---------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, out_dir: Path | None = None) -> Path:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(cfg)
    net = Network(cfg.network_spec(data.train.input_shape, data.train.n_classes), cfg.prior(),
                  cfg.network.temperature)
    run_log = {
        "n_train": len(data.train), "n_test": len(data.test),
        "n_val": 0 if data.val is None else len(data.val),
        "normalization": None if data.mean is None else
        {"mean": data.mean.tolist(), "std": data.std.tolist()},
    }
    log.info("normalization stats: %s", run_log["normalization"])
    _write(out / "config.yaml", cfg.dump())
    _write(out / "run_log.json", _json(run_log))
    snap_dir = out / "snapshots"
    for stale in snap_dir.glob("*.snap") if snap_dir.exists() else []:
        stale.unlink()
    result = train(cfg.trainer_config(), net, data.train, eval_x=data.norm(data.test),
                   norm=data.norm_pair, snapshot_dir=snap_dir)
    _write(out / "train_log.csv", _csv(result.log))
    _write(out / "sparsity.csv", _csv(result.log, ["epoch", "phase", "remaining_param_ratio",
                                                   "remaining_flop_ratio"]))
    _write(out / "perturbations.csv", _csv(result.perturbations))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["checkpoint_id", "epoch", "phase", "example_id"]
                    + [f"p_{c}" for c in range(net.n_classes)])
    for row in result.trajectory:
        writer.writerow([row["checkpoint_id"], row["epoch"], row["phase"], row["example_id"],
                         *(repr(float(p)) for p in row["probs"])])
    _write(out / "trajectory.csv", buf.getvalue())
    return out


# -- eval ----------------------------------------------------------------------------

def load_run(run_dir: Path, eval_overrides: list[str] | None = None) -> tuple[RunConfig, list[BaseLearnerSnapshot]]:
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.yaml", eval_overrides)
    snaps_dir = run_dir / "snapshots"
    if not snaps_dir.is_dir():
        raise FileNotFoundError(f"{snaps_dir}: no snapshots directory")
    snaps = load_snapshots(snaps_dir)
    if not snaps:
        raise FileNotFoundError(f"{snaps_dir}: no learner snapshots")
    return cfg, snaps


def learner_predictions(cfg: RunConfig, snaps: list[BaseLearnerSnapshot], x: np.ndarray,
                        mc: int, tag: int) -> list[np.ndarray]:
    """Per-learner predictions; every learner sees the same evaluation noise."""
    base = RngStream(cfg.seed, EVAL).derive(_GEN, tag, mc)
    out = []
    for s in snaps:
        net = s.to_network()
        out.append(net.predict_mc(x, base.derive(0), base.derive(1), mc, s.eval_mode))
    return out


def _ood_inputs(cfg: RunConfig, data: Data) -> np.ndarray | None:
    o = cfg.eval.ood
    if o is None:
        return None
    centers = np.asarray(o.centers, dtype=np.float64)
    if data.train.x.ndim != 2 or centers.shape[1] != data.train.x.shape[1]:
        raise ConfigError("eval.ood.centers: dimension must match the tabular input width")
    ood = gaussian_blobs(o.n, len(centers), o.spread, RngStream(cfg.seed, DATA).derive(_GEN, 2),
                         centers=centers)
    return data.norm(Dataset(ood.x, np.zeros(len(ood), np.int64), 1, "ood"))


def evaluate_run(cfg: RunConfig, snaps: list[BaseLearnerSnapshot]) -> dict:
    data = build_data(cfg)
    y = data.test.y
    test_x = data.norm(data.test)
    corr_rng = RngStream(cfg.seed, AUGMENT).derive(_GEN, 4)
    corrupted = [(spec.name, data.norm(corrupt(data.test, spec, corr_rng)))
                 for spec in cfg.corruption_specs()]
    ood_x = _ood_inputs(cfg, data)
    bins = cfg.eval.ece_bins
    rows, sweeps = [], {}
    jensen_ok = True
    for mc in cfg.eval.mc:
        preds = learner_predictions(cfg, snaps, test_x, mc, 0)
        cpreds = {name: learner_predictions(cfg, snaps, cx, mc, 10 + i)
                  for i, (name, cx) in enumerate(corrupted)}
        opreds = learner_predictions(cfg, snaps, ood_x, mc, 1) if ood_x is not None else None
        if not M.jensen_holds(preds, y):
            jensen_ok = False
            raise JensenViolation(f"ensemble NLL exceeds mean member NLL (mc={mc})")
        for k, s in enumerate(snaps):
            rep = M.evaluate(preds[k], y, bins, {n: (cp[k], y) for n, cp in cpreds.items()},
                             None if opreds is None else opreds[k])
            sp = s.to_network().sparsity_report(cfg.eval.sparsity_threshold)
            rows.append({"mc": mc, "model": f"learner_{s.index}", **rep.flat(),
                         "remaining_param_ratio": sp.remaining_param_ratio,
                         "remaining_flop_ratio": sp.remaining_flop_ratio})
        ens = M.evaluate(M.ensemble_average(preds), y, bins,
                         {n: (M.ensemble_average(cp), y) for n, cp in cpreds.items()},
                         None if opreds is None else M.ensemble_average(opreds))
        if len(preds) >= 2:
            div = M.ensemble_diversity(preds)
            ens.d_dis, ens.d_KL = div["d_dis"], div["d_KL"]
        rows.append({"mc": mc, "model": "ensemble", **ens.flat(),
                     "remaining_param_ratio": None, "remaining_flop_ratio": None})
        sweeps[str(mc)] = M.ensemble_size_sweep(preds, y)
    return {"rows": rows, "size_sweep": sweeps, "jensen_ok": jensen_ok,
            "n_learners": len(snaps)}


def cmd_eval(run_dir: Path, eval_overrides: list[str] | None = None) -> dict:
    run_dir = Path(run_dir)
    cfg, snaps = load_run(run_dir, eval_overrides)
    result = evaluate_run(cfg, snaps)
    _write(run_dir / "metrics.json", _json(result))
    _write(run_dir / "metrics.csv", _csv(result["rows"]))
    sweep_rows = [{"mc": int(mc), **r} for mc, rs in result["size_sweep"].items() for r in rs]
    _write(run_dir / "size_sweep.csv", _csv(sweep_rows))
    return result


def diversity_row(cfg: RunConfig, snaps: list[BaseLearnerSnapshot]) -> dict:
    if len(snaps) < 2:
        raise ConfigError(f"diversity needs at least 2 snapshots, found {len(snaps)}")
    data = build_data(cfg)
    preds = learner_predictions(cfg, snaps, data.norm(data.test), cfg.eval.mc[0], 0)
    div = M.ensemble_diversity(preds)
    return {"d_dis": div["d_dis"], "d_KL": div["d_KL"],
            "acc": M.accuracy(M.ensemble_average(preds), data.test.y)}


def cmd_diversity(run_dir: Path) -> dict:
    run_dir = Path(run_dir)
    cfg, snaps = load_run(run_dir)
    row = diversity_row(cfg, snaps)
    _write(run_dir / "diversity.json", _json(row))
    _write(run_dir / "diversity.csv", _csv([row]))
    return row


# -- sweep ---------------------------------------------------------------------------

SWEEP_AXES = ("M", "rho", "schedule", "mc")


def _parse_values(axis: str, values: list[str]) -> list:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    try:
        if axis in ("M", "mc"):
            out = [int(v) for v in values]
            if min(out) < 1:
                raise ValueError
        elif axis == "rho":
            out = [float(v) for v in values]
            if min(out) < 0:
                raise ValueError
        else:
            out = list(values)
            if any(v not in SCHEDULES for v in out):
                raise ValueError
    except ValueError:
        raise ConfigError(f"invalid value in {values} for sweep axis {axis}") from None
    return out


def _summary(preds: list[np.ndarray], y: np.ndarray, bins: int) -> dict:
    ens = M.ensemble_average(preds)
    div = M.ensemble_diversity(preds) if len(preds) >= 2 else {"d_dis": None, "d_KL": None}
    return {"ensemble_acc": M.accuracy(ens, y), "ensemble_nll": M.nll(ens, y),
            "ensemble_ece": M.ece(ens, y, bins),
            "individual_acc_mean": float(np.mean([M.accuracy(p, y) for p in preds])),
            "d_dis": div["d_dis"], "d_KL": div["d_KL"]}


def _with(cfg: RunConfig, **trainer_updates) -> RunConfig:
    raw = cfg.to_dict()
    raw["trainer"].update(trainer_updates)
    return validate(parse_config(raw), check_files=False)


def cmd_sweep(cfg: RunConfig, axis: str, values: list[str], out_dir: Path | None = None) -> list[dict]:
    vals = _parse_values(axis, values)
    out = Path(out_dir or cfg.output_dir) / f"sweep_{axis}"
    data = build_data(cfg)
    x, y = data.norm(data.test), data.test.y
    bins = cfg.eval.ece_bins
    rows = []
    if axis in ("M", "mc"):
        run_cfg = _with(cfg, M=max(vals)) if axis == "M" else cfg
        run_dir = cmd_train(run_cfg, out / "run")
        snaps = load_snapshots(run_dir / "snapshots")
        if axis == "M":
            preds = learner_predictions(run_cfg, snaps, x, cfg.eval.mc[0], 0)
            rows = [{"axis": axis, "value": m, **_summary(preds[:m], y, bins)} for m in vals]
        else:
            rows = [{"axis": axis, "value": mc,
                     **_summary(learner_predictions(run_cfg, snaps, x, mc, 0), y, bins)}
                    for mc in vals]
    else:
        for v in vals:
            run_cfg = _with(cfg, **{axis: v})
            run_dir = cmd_train(run_cfg, out / f"{axis}={v}")
            snaps = load_snapshots(run_dir / "snapshots")
            preds = learner_predictions(run_cfg, snaps, x, cfg.eval.mc[0], 0)
            rows.append({"axis": axis, "value": v, **_summary(preds, y, bins)})
    _write(out.parent / f"sweep_{axis}.csv", _csv(rows))
    return rows


def cmd_schedule_dump(cfg: RunConfig) -> str:
    return schedule_csv(cfg.plan())
