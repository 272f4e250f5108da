"""Multi-task loss, AdamW training loop, checkpointing, and prediction.

The total loss is a weighted sum of four terms: frame-wise MSE on the depth
curve, MSE on the global segment depth, and BCE on the soft onset and
offset curves.  Frame terms are averaged over each segment's valid frames,
then over the batch, so zero-padding contributes nothing to the loss or its
gradients.

Runs are reproducible: batch order is a pure function of (seed, step) and
dropout is reseeded per step, so resuming from a checkpoint replays the
exact step sequence a continuous run would have produced.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .containers import write_bytes_atomic, write_text_atomic
from .errors import DataError, NumericError
from .features import FeatureMatrix, FeatureSegment, segment
from .model import ModelConfig, PedalNet, PredictionSet, load_checkpoint, save_checkpoint
from .targets import TargetSet, build_targets

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    frame_depth: float = 0.6
    global_depth: float = 0.2
    onset: float = 0.1
    offset: float = 0.1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    grad_clip: float = 5.0
    max_steps: int = 2000
    checkpoint_every: int = 500
    val_every: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)


@dataclass
class Batch:
    features: torch.Tensor  # [B, T, F]
    depth: torch.Tensor  # [B, T]
    onset: torch.Tensor
    offset: torch.Tensor
    global_depth: torch.Tensor  # [B]
    valid_frames: torch.Tensor  # [B]


class SegmentDataset:
    """In-memory arrays of feature segments and their targets."""

    def __init__(
        self,
        features: np.ndarray,
        depth: np.ndarray,
        onset: np.ndarray,
        offset: np.ndarray,
        global_depth: np.ndarray,
        valid_frames: np.ndarray,
        source_ids: list[str] | None = None,
    ):
        self.features = features.astype(np.float32)
        self.depth = depth.astype(np.float32)
        self.onset = onset.astype(np.float32)
        self.offset = offset.astype(np.float32)
        self.global_depth = global_depth.astype(np.float32)
        self.valid_frames = valid_frames.astype(np.int64)
        self.source_ids = source_ids or [""] * len(features)

    def __len__(self) -> int:
        return len(self.features)

    @classmethod
    def from_pieces(
        cls,
        pieces: list[tuple[str, FeatureMatrix, np.ndarray]],
        hop: int = 250,
        window: int = 500,
    ) -> "SegmentDataset":
        """Segment (piece_id, features, depth curve) triples and build targets."""
        feats, depths, onsets, offsets, globals_, valids, ids = [], [], [], [], [], [], []
        for piece_id, matrix, depth_curve in pieces:
            if matrix.n_frames != len(depth_curve):
                raise DataError(
                    f"{piece_id}: feature frames ({matrix.n_frames}) != "
                    f"target frames ({len(depth_curve)})"
                )
            for seg in segment(matrix, source_id=piece_id, window=window, hop=hop):
                padded_depth = np.zeros(window)
                padded_depth[: seg.valid_frames] = depth_curve[
                    seg.start_frame : seg.start_frame + seg.valid_frames
                ]
                tset = build_targets(padded_depth, seg.valid_frames)
                feats.append(seg.values)
                depths.append(tset.depth)
                onsets.append(tset.onset)
                offsets.append(tset.offset)
                globals_.append(tset.global_depth)
                valids.append(seg.valid_frames)
                ids.append(piece_id)
        if not feats:
            raise DataError("no segments produced from the given pieces")
        return cls(
            np.stack(feats),
            np.stack(depths),
            np.stack(onsets),
            np.stack(offsets),
            np.array(globals_),
            np.array(valids),
            ids,
        )

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(
            features=torch.from_numpy(self.features[indices]),
            depth=torch.from_numpy(self.depth[indices]),
            onset=torch.from_numpy(self.onset[indices]),
            offset=torch.from_numpy(self.offset[indices]),
            global_depth=torch.from_numpy(self.global_depth[indices]),
            valid_frames=torch.from_numpy(self.valid_frames[indices]),
        )


def loss_fn(
    pred: PredictionSet,
    batch: Batch,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted multi-task loss; returns (total, per-component dict).

    Frame terms average over valid frames per segment, then over the batch.
    Predictions entering BCE are clamped to [1e-7, 1 - 1e-7].
    """
    mask = (
        torch.arange(batch.features.shape[1])[None, :] < batch.valid_frames[:, None]
    ).to(pred.depth.dtype)
    denom = mask.sum(dim=1)

    frame_mse = ((pred.depth - batch.depth.to(pred.depth.dtype)) ** 2 * mask).sum(1) / denom
    frame_loss = frame_mse.mean()

    global_loss = ((pred.global_depth - batch.global_depth.to(pred.depth.dtype)) ** 2).mean()

    def masked_bce(p: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        p = torch.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        t = t.to(p.dtype)
        bce = -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p))
        return ((bce * mask).sum(1) / denom).mean()

    onset_loss = masked_bce(pred.onset, batch.onset)
    offset_loss = masked_bce(pred.offset, batch.offset)

    components = {
        "frame_depth": frame_loss,
        "global_depth": global_loss,
        "onset": onset_loss,
        "offset": offset_loss,
    }
    total = (
        weights.frame_depth * frame_loss
        + weights.global_depth * global_loss
        + weights.onset * onset_loss
        + weights.offset * offset_loss
    )
    return total, components


def make_optimizer(model: PedalNet, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
        eps=config.eps,
    )


def train_step(
    model: PedalNet,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    weights: LossWeights = LossWeights(),
    grad_clip: float = 5.0,
    step: int = 0,
) -> dict[str, float]:
    """One optimizer update; returns per-component losses as floats."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    pred = model(batch.features, batch.valid_frames)
    total, components = loss_fn(pred, batch, weights)
    for name, value in components.items():
        if not torch.isfinite(value):
            raise NumericError(f"loss component '{name}' is non-finite at step {step}")
    if not torch.isfinite(total):
        raise NumericError(f"total loss is non-finite at step {step}")
    total.backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    out = {name: float(value.detach()) for name, value in components.items()}
    out["total"] = float(total.detach())
    return out


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic batch for a given step: shuffled epochs under the seed."""
    steps_per_epoch = max(1, (n + batch_size - 1) // batch_size)
    epoch = step // steps_per_epoch
    pos = step % steps_per_epoch
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    lo = pos * batch_size
    return perm[lo : min(lo + batch_size, n)]


def _step_seed(seed: int, step: int) -> int:
    return (seed * 1_000_003 + step) % (2**63 - 1)


def validation_frame_mae(model: PedalNet, data: SegmentDataset, batch_size: int = 8) -> float:
    """Frame-wise MAE of depth predictions over all valid frames."""
    model.eval()
    total_err = 0.0
    total_frames = 0
    with torch.no_grad():
        for lo in range(0, len(data), batch_size):
            batch = data.batch(np.arange(lo, min(lo + batch_size, len(data))))
            pred = model(batch.features, batch.valid_frames)
            mask = (
                torch.arange(batch.features.shape[1])[None, :] < batch.valid_frames[:, None]
            ).to(pred.depth.dtype)
            total_err += float(((pred.depth - batch.depth).abs() * mask).sum())
            total_frames += int(mask.sum())
    return total_err / max(1, total_frames)


@dataclass
class FitResult:
    run_dir: str
    final_step: int
    best_step: int
    best_val_mae: float
    history: list[dict] = field(default_factory=list)


def fit(
    train_data: SegmentDataset,
    val_data: SegmentDataset | None,
    model_config: ModelConfig,
    train_config: TrainConfig,
    weights: LossWeights = LossWeights(),
    run_dir: str = "run",
    resume: bool = False,
) -> FitResult:
    """Train a PedalNet, writing config.json, log.csv, and checkpoints.

    Checkpoints land in ``<run_dir>/checkpoints/step_<n>.ckpt`` with
    optimizer state for resuming; ``best.ckpt`` tracks the lowest
    validation frame-MAE seen so far.
    """
    if len(train_data) == 0:
        raise DataError("training dataset is empty")
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)

    write_text_atomic(
        os.path.join(run_dir, "config.json"),
        json.dumps(
            {
                "model": model_config.to_dict(),
                "training": train_config.to_dict(),
                "loss_weights": weights.to_dict(),
            },
            indent=2,
            sort_keys=True,
        ),
    )

    torch.manual_seed(train_config.seed)
    model = PedalNet(model_config)
    optimizer = make_optimizer(model, train_config)
    start_step = 0
    best_step, best_val = -1, float("inf")
    history: list[dict] = []

    if resume:
        latest = _latest_checkpoint(run_dir)
        if latest is not None:
            model, start_step, extras, meta = load_checkpoint(latest)
            optimizer = make_optimizer(model, train_config)
            _load_optimizer_state(model, optimizer, extras)
            best_step = int(meta.get("best_step", -1))
            best_val = float(meta.get("best_val_mae", float("inf")))
            history = [
                row for row in _read_log(os.path.join(run_dir, "log.csv"))
                if row["step"] <= start_step
            ]

    t0 = time.time()
    step = start_step
    while step < train_config.max_steps:
        torch.manual_seed(_step_seed(train_config.seed, step))
        indices = _batch_indices(len(train_data), train_config.batch_size, train_config.seed, step)
        metrics = train_step(
            model, optimizer, train_data.batch(indices), weights, train_config.grad_clip, step
        )
        step += 1
        row = {
            "step": step,
            "total": metrics["total"],
            "frame_depth": metrics["frame_depth"],
            "global_depth": metrics["global_depth"],
            "onset": metrics["onset"],
            "offset": metrics["offset"],
            "lr": train_config.learning_rate,
            "wall_time_s": round(time.time() - t0, 3),
        }

        run_val = val_data is not None and (
            step % train_config.val_every == 0 or step == train_config.max_steps
        )
        if run_val:
            val_mae = validation_frame_mae(model, val_data)
            row["val_frame_mae"] = val_mae
            if val_mae < best_val:
                best_val, best_step = val_mae, step
                save_checkpoint(
                    os.path.join(run_dir, "checkpoints", "best.ckpt"),
                    model,
                    step,
                    extra_meta={"val_frame_mae": val_mae},
                )
        history.append(row)

        if step % train_config.checkpoint_every == 0 or step == train_config.max_steps:
            save_checkpoint(
                os.path.join(run_dir, "checkpoints", f"step_{step}.ckpt"),
                model,
                step,
                extra_tensors=_optimizer_state_tensors(model, optimizer),
                extra_meta={"best_step": best_step, "best_val_mae": best_val},
            )
            _write_log(os.path.join(run_dir, "log.csv"), history)

    _write_log(os.path.join(run_dir, "log.csv"), history)
    return FitResult(
        run_dir=run_dir,
        final_step=step,
        best_step=best_step if best_step >= 0 else step,
        best_val_mae=best_val,
        history=history,
    )


def _optimizer_state_tensors(
    model: PedalNet, optimizer: torch.optim.Optimizer
) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    for name, param in model.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            continue
        out[f"optim/{name}/exp_avg"] = state["exp_avg"]
        out[f"optim/{name}/exp_avg_sq"] = state["exp_avg_sq"]
        out[f"optim/{name}/step"] = torch.as_tensor(state["step"], dtype=torch.float32)
    return out


def _load_optimizer_state(
    model: PedalNet, optimizer: torch.optim.Optimizer, extras: dict[str, torch.Tensor]
) -> None:
    for name, param in model.named_parameters():
        key = f"optim/{name}/exp_avg"
        if key not in extras:
            continue
        optimizer.state[param] = {
            "step": extras[f"optim/{name}/step"].reshape(()).clone(),
            "exp_avg": extras[key].clone(),
            "exp_avg_sq": extras[f"optim/{name}/exp_avg_sq"].clone(),
        }


def _latest_checkpoint(run_dir: str) -> str | None:
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    if not os.path.isdir(ckpt_dir):
        return None
    steps = []
    for name in os.listdir(ckpt_dir):
        if name.startswith("step_") and name.endswith(".ckpt"):
            steps.append((int(name[5:-5]), name))
    if not steps:
        return None
    return os.path.join(ckpt_dir, max(steps)[1])


def _write_log(path: str, history: list[dict]) -> None:
    if not history:
        return
    fields = ["step", "total", "frame_depth", "global_depth", "onset", "offset", "lr", "wall_time_s", "val_frame_mae"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in history:
        writer.writerow({k: row.get(k, "") for k in fields})
    write_text_atomic(path, buf.getvalue())


def _read_log(path: str) -> list[dict]:
    if not os.path.exists(path):
        return []
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            parsed: dict = {"step": int(row["step"])}
            for key, value in row.items():
                if key != "step" and value not in ("", None):
                    parsed[key] = float(value)
            rows.append(parsed)
    return rows


def predict_piece(
    model: PedalNet, features: FeatureMatrix, batch_size: int = 8
) -> dict[str, np.ndarray]:
    """Run the model over a whole piece with non-overlapping windows.

    Returns depth/onset/offset curves of the piece's full frame count,
    reassembled by concatenating each segment's valid region.
    """
    if features.values.shape[1] != model.config.in_features:
        raise DataError(
            f"feature dimension mismatch: model expects {model.config.in_features}, "
            f"features have {features.values.shape[1]}"
        )
    segments = segment(features, window=model.config.seq_len, hop=model.config.seq_len)
    model.eval()
    curves = {"depth": [], "onset": [], "offset": []}
    with torch.no_grad():
        for lo in range(0, len(segments), batch_size):
            chunk = segments[lo : lo + batch_size]
            x = torch.from_numpy(np.stack([s.values for s in chunk]))
            valid = torch.tensor([s.valid_frames for s in chunk])
            pred = model(x, valid)
            for i, seg in enumerate(chunk):
                curves["depth"].append(pred.depth[i, : seg.valid_frames].numpy())
                curves["onset"].append(pred.onset[i, : seg.valid_frames].numpy())
                curves["offset"].append(pred.offset[i, : seg.valid_frames].numpy())
    return {k: np.concatenate(v) for k, v in curves.items()}
