"""Leave-one-room-out experiments and acoustic distribution-shift statistics.

An experiment plan names one or more training room combinations and a list
of test rooms.  For each combination a model is trained on the training
split of those rooms and evaluated as frame-wise MAE on every test room's
test split; cells whose test room was absent from training are flagged
out-of-domain.  Per-room prediction distributions (quartiles, mean, and the
signed bias against ground truth) quantify how reverberation shifts the
model's output, with piece-level bootstrap intervals for the bias.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .containers import write_text_atomic
from .errors import DataError
from .evaluation import regression_errors
from .features import FeatureMatrix
from .model import DESK_CONFIG, ModelConfig, PedalNet
from .roomsim import RoomConfig
from .training import (
    FitResult,
    LossWeights,
    SegmentDataset,
    TrainConfig,
    fit,
    predict_piece,
)
from . import containers


@dataclass(frozen=True)
class ExperimentPlan:
    train_combos: tuple[tuple[str, ...], ...] = (("R1", "R2"),)
    test_rooms: tuple[str, ...] = ("R1", "R2", "R3", "R4")
    seed: int = 0
    hop: int = 250
    model: ModelConfig = field(default_factory=lambda: DESK_CONFIG)
    training: TrainConfig = field(default_factory=TrainConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self) -> dict:
        return {
            "train_combos": [list(c) for c in self.train_combos],
            "test_rooms": list(self.test_rooms),
            "seed": self.seed,
            "hop": self.hop,
            "model": self.model.to_dict(),
            "training": self.training.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        return cls(
            train_combos=tuple(tuple(c) for c in data.get("train_combos", [["R1", "R2"]])),
            test_rooms=tuple(data.get("test_rooms", ["R1", "R2", "R3", "R4"])),
            seed=int(data.get("seed", 0)),
            hop=int(data.get("hop", 250)),
            model=ModelConfig.from_dict(data["model"]) if "model" in data else DESK_CONFIG,
            training=TrainConfig.from_dict(data["training"]) if "training" in data else TrainConfig(),
            loss_weights=LossWeights.from_dict(data["loss_weights"])
            if "loss_weights" in data
            else LossWeights(),
        )


def load_plan(path: str) -> ExperimentPlan:
    with open(path) as fh:
        return ExperimentPlan.from_dict(json.load(fh))


def write_plan(path: str, plan: ExperimentPlan) -> None:
    write_text_atomic(path, json.dumps(plan.to_dict(), indent=2, sort_keys=True))


@dataclass
class RoomStats:
    room: str
    n_frames: int
    mean_pred: float
    median_pred: float
    q1: float
    q3: float
    mean_gt: float
    bias: float
    bias_ci: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        out = {
            "room": self.room,
            "n_frames": self.n_frames,
            "mean_pred": self.mean_pred,
            "median_pred": self.median_pred,
            "q1": self.q1,
            "q3": self.q3,
            "mean_gt": self.mean_gt,
            "bias": self.bias,
        }
        if self.bias_ci is not None:
            out["bias_ci_low"], out["bias_ci_high"] = self.bias_ci
        return out


def cache_paths(features_dir: str, targets_dir: str, piece_id: str, room: str) -> tuple[str, str]:
    return (
        os.path.join(features_dir, f"{piece_id}__{room}.pdfe"),
        os.path.join(targets_dir, f"{piece_id}.pdgt"),
    )


def check_caches(
    manifest_rows: list[dict], rooms: set[str], features_dir: str, targets_dir: str
) -> None:
    """Fail fast if any required feature or target cache is missing."""
    missing = []
    for row in manifest_rows:
        if row["room"] not in rooms:
            continue
        fpath, tpath = cache_paths(features_dir, targets_dir, row["piece_id"], row["room"])
        if not os.path.exists(fpath):
            missing.append(fpath)
        if not os.path.exists(tpath):
            missing.append(tpath)
    if missing:
        raise DataError(
            "missing cached inputs (run features extract / targets build first): "
            + ", ".join(sorted(set(missing))[:8])
        )


def _load_piece(
    features_dir: str, targets_dir: str, piece_id: str, room: str
) -> tuple[FeatureMatrix, np.ndarray]:
    fpath, tpath = cache_paths(features_dir, targets_dir, piece_id, room)
    values, _rate = containers.load_features(fpath)
    curves, _scalars, _rate = containers.load_curves(tpath)
    depth = curves[:, 0].astype(np.float64)
    if len(depth) != values.shape[0]:
        raise DataError(
            f"{piece_id}/{room}: cached target frames ({len(depth)}) do not match "
            f"features ({values.shape[0]})"
        )
    return FeatureMatrix(values=values), depth


def build_room_dataset(
    manifest_rows: list[dict],
    rooms: tuple[str, ...],
    split: str,
    features_dir: str,
    targets_dir: str,
    hop: int,
) -> SegmentDataset:
    pieces = []
    for row in manifest_rows:
        if row["room"] in rooms and row["split"] == split:
            matrix, depth = _load_piece(features_dir, targets_dir, row["piece_id"], row["room"])
            pieces.append((f"{row['piece_id']}__{row['room']}", matrix, depth))
    if not pieces:
        raise DataError(f"no pieces with split '{split}' in rooms {rooms}")
    return SegmentDataset.from_pieces(pieces, hop=hop)


def room_mae(
    model: PedalNet,
    manifest_rows: list[dict],
    room: str,
    split: str,
    features_dir: str,
    targets_dir: str,
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Frame MAE over one room's pieces; returns (mae, preds, gts) by piece."""
    preds, gts = {}, {}
    for row in manifest_rows:
        if row["room"] != room or row["split"] != split:
            continue
        matrix, depth = _load_piece(features_dir, targets_dir, row["piece_id"], row["room"])
        curves = predict_piece(model, matrix)
        preds[row["piece_id"]] = curves["depth"]
        gts[row["piece_id"]] = depth
    if not preds:
        raise DataError(f"no pieces with split '{split}' in room {room}")
    _mse, mae = regression_errors(
        np.concatenate([preds[k] for k in sorted(preds)]),
        np.concatenate([gts[k] for k in sorted(gts)]),
    )
    return mae, preds, gts


@dataclass
class LooResult:
    cells: list[dict]
    runs: dict[str, FitResult]

    def mae_matrix(self) -> dict[tuple[str, str], float]:
        return {(c["train_combo"], c["test_room"]): c["mae"] for c in self.cells}


def run_loo(
    plan: ExperimentPlan,
    manifest_rows: list[dict],
    features_dir: str,
    targets_dir: str,
    out_dir: str,
    test_split: str = "test",
    resume: bool = False,
) -> LooResult:
    """Train one model per combo and fill the MAE matrix over test rooms."""
    needed_rooms = {room for combo in plan.train_combos for room in combo}
    needed_rooms.update(plan.test_rooms)
    manifest_room_set = {row["room"] for row in manifest_rows}
    absent = needed_rooms - manifest_room_set
    if absent:
        raise DataError(f"manifest has no rows for rooms: {', '.join(sorted(absent))}")
    check_caches(manifest_rows, needed_rooms, features_dir, targets_dir)

    cells = []
    runs: dict[str, FitResult] = {}
    for combo in plan.train_combos:
        combo_name = "+".join(combo)
        train_data = build_room_dataset(
            manifest_rows, combo, "train", features_dir, targets_dir, plan.hop
        )
        try:
            val_data = build_room_dataset(
                manifest_rows, combo, "val", features_dir, targets_dir, plan.hop
            )
        except DataError:
            val_data = None
        run_dir = os.path.join(out_dir, f"train_{combo_name.replace('+', '_')}")
        result = fit(
            train_data,
            val_data,
            plan.model,
            plan.training,
            plan.loss_weights,
            run_dir=run_dir,
            resume=resume,
        )
        runs[combo_name] = result
        model = _best_model(run_dir)
        for room in plan.test_rooms:
            mae, _p, _g = room_mae(
                model, manifest_rows, room, test_split, features_dir, targets_dir
            )
            cells.append(
                {
                    "train_combo": combo_name,
                    "test_room": room,
                    "ood": room not in combo,
                    "mae": mae,
                }
            )
    return LooResult(cells=cells, runs=runs)


def _best_model(run_dir: str) -> PedalNet:
    from .model import load_checkpoint

    best = os.path.join(run_dir, "checkpoints", "best.ckpt")
    if not os.path.exists(best):
        from .training import _latest_checkpoint

        best = _latest_checkpoint(run_dir)
        if best is None:
            raise DataError(f"no checkpoints found under {run_dir}")
    model, _step, _extras, _meta = load_checkpoint(best)
    return model


def write_loo_csv(path: str, result: LooResult) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["train_combo", "test_room", "ood", "mae"])
    for cell in result.cells:
        writer.writerow(
            [cell["train_combo"], cell["test_room"], str(cell["ood"]).lower(), repr(cell["mae"])]
        )
    write_text_atomic(path, buf.getvalue())


def distribution_stats(
    preds_by_room: dict[str, np.ndarray],
    gts_by_room: dict[str, np.ndarray],
    bias_cis: dict[str, tuple[float, float]] | None = None,
) -> list[RoomStats]:
    """Per-room prediction quartiles, means, and signed bias vs ground truth."""
    if not preds_by_room:
        raise DataError("no rooms to analyze")
    stats = []
    for room in sorted(preds_by_room):
        pred = np.asarray(preds_by_room[room], dtype=np.float64).ravel()
        gt = np.asarray(gts_by_room[room], dtype=np.float64).ravel()
        if pred.size == 0 or gt.size == 0:
            raise DataError(f"room {room} has no frames")
        q1, median, q3 = np.percentile(pred, [25, 50, 75])
        stats.append(
            RoomStats(
                room=room,
                n_frames=int(pred.size),
                mean_pred=float(pred.mean()),
                median_pred=float(median),
                q1=float(q1),
                q3=float(q3),
                mean_gt=float(gt.mean()),
                bias=float(pred.mean() - gt.mean()),
                bias_ci=None if bias_cis is None else bias_cis.get(room),
            )
        )
    return stats


def order_rooms_by_rt60(rooms: list[RoomConfig]) -> list[str]:
    """Room names sorted by configured reverb duration (dry rooms first)."""
    return [r.name for r in sorted(rooms, key=lambda r: (r.duration_s or 0.0, r.name))]


def bias_trend(stats_in_rt60_order: list[RoomStats]) -> tuple[float, bool]:
    """Least-squares slope of bias against RT60 rank, plus a monotone flag."""
    if len(stats_in_rt60_order) < 2:
        raise DataError("need at least two rooms for a trend")
    biases = np.array([s.bias for s in stats_in_rt60_order])
    ranks = np.arange(len(biases), dtype=np.float64)
    slope = float(np.polyfit(ranks, biases, 1)[0])
    monotone = bool(np.all(np.diff(biases) >= 0))
    return slope, monotone


def bootstrap_bias_ci(
    preds_by_piece: dict[str, np.ndarray],
    gts_by_piece: dict[str, np.ndarray],
    n_boot: int = 10_000,
    seed: int = 0,
    confidence: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the bias, resampling whole pieces.

    Pieces, not frames, are the resampling unit: frames within a piece are
    strongly dependent, so frame-level resampling would understate the
    interval.
    """
    piece_ids = sorted(preds_by_piece)
    if not piece_ids:
        raise DataError("no pieces to bootstrap")
    sums = np.array(
        [preds_by_piece[p].sum() - gts_by_piece[p].sum() for p in piece_ids]
    )
    counts = np.array([len(preds_by_piece[p]) for p in piece_ids], dtype=np.float64)
    rng = np.random.default_rng([seed, 0xB007])
    draws = rng.integers(0, len(piece_ids), size=(n_boot, len(piece_ids)))
    boot = sums[draws].sum(axis=1) / counts[draws].sum(axis=1)
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(boot, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def write_stats_json(path: str, stats: list[RoomStats], extra: dict | None = None) -> None:
    payload = {"rooms": [s.to_dict() for s in stats]}
    if extra:
        payload.update(extra)
    write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True))
