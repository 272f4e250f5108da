"""Conv + Transformer encoder network with four pedal prediction heads.

A stack of three 3x3 conv layers (batch norm, ReLU, frequency-only max
pooling) compresses the 249 feature columns while keeping all 500 frames;
the flattened per-frame maps are projected to the encoder width, summed
with a fixed sinusoidal positional encoding, and passed through a pre-norm
Transformer encoder.  Three frame-wise MLP heads emit sigmoid depth, onset,
and offset curves; a fourth head runs on the masked mean over valid frames
and emits the global depth.

Padded frames are zeroed at the input and masked out of attention, so
predictions on valid frames never depend on padding content.

Checkpoints use a self-contained binary format: a JSON manifest (config,
step, tensor name/shape/dtype/offset directory) followed by raw
little-endian float32 payloads.  Save/load round trips are bit-exact for
float32 parameters and buffers.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .containers import write_bytes_atomic
from .errors import DataError

CHECKPOINT_MAGIC = b"PDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_features: int = 249
    seq_len: int = 500
    conv_channels: tuple[int, int, int] = (32, 64, 128)
    conv_kernel: int = 3
    freq_pool: tuple[int, int, int] = (2, 2, 2)
    d_model: int = 256
    n_layers: int = 8
    n_heads: int = 8
    d_ff: int = 1024
    dropout: float = 0.15

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DataError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )

    @property
    def freq_bins_out(self) -> int:
        f = self.in_features
        for p in self.freq_pool:
            f //= p
        return f

    @property
    def conv_out_dim(self) -> int:
        return self.conv_channels[-1] * self.freq_bins_out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        for key in ("conv_channels", "freq_pool"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# CPU-budget preset used by the desk-scale experiments and tests; the
# default ModelConfig is the full-size network.
DESK_CONFIG = ModelConfig(
    conv_channels=(4, 8, 16),
    freq_pool=(4, 4, 2),
    d_model=64,
    n_layers=2,
    n_heads=4,
    d_ff=256,
    dropout=0.1,
)


@dataclass
class PredictionSet:
    """Sigmoid outputs: frame curves [B, T] and global depth [B]."""

    depth: torch.Tensor
    onset: torch.Tensor
    offset: torch.Tensor
    global_depth: torch.Tensor


def _sinusoidal_encoding(seq_len: int, d_model: int) -> torch.Tensor:
    position = torch.arange(seq_len, dtype=torch.float64)[:, None]
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model)
    )
    enc = torch.zeros(seq_len, d_model, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(position * div)
    enc[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return enc.to(torch.float32)[None]


class PedalNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config

        layers: list[nn.Module] = []
        in_ch = 1
        pad = cfg.conv_kernel // 2
        for out_ch, pool in zip(cfg.conv_channels, cfg.freq_pool):
            layers += [
                nn.Conv2d(in_ch, out_ch, cfg.conv_kernel, padding=pad),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
                nn.MaxPool2d((1, pool)),
            ]
            in_ch = out_ch
        self.conv = nn.Sequential(*layers)

        self.input_proj = nn.Linear(cfg.conv_out_dim, cfg.d_model)
        self.register_buffer("pos_encoding", _sinusoidal_encoding(cfg.seq_len, cfg.d_model))
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=cfg.d_model,
            nhead=cfg.n_heads,
            dim_feedforward=cfg.d_ff,
            dropout=cfg.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            encoder_layer,
            cfg.n_layers,
            norm=nn.LayerNorm(cfg.d_model),
            enable_nested_tensor=False,
        )

        def head() -> nn.Sequential:
            return nn.Sequential(
                nn.Linear(cfg.d_model, cfg.d_model),
                nn.ReLU(),
                nn.Linear(cfg.d_model, 1),
            )

        self.depth_head = head()
        self.onset_head = head()
        self.offset_head = head()
        self.global_head = head()

    def frame_mask(self, batch: int, valid_frames: torch.Tensor | None) -> torch.Tensor:
        """Boolean [B, T] mask, True where the frame is valid."""
        t = self.config.seq_len
        device = self.pos_encoding.device
        if valid_frames is None:
            return torch.ones(batch, t, dtype=torch.bool, device=device)
        valid_frames = valid_frames.to(device)
        return torch.arange(t, device=device)[None, :] < valid_frames[:, None]

    def conv_block(self, x: torch.Tensor) -> torch.Tensor:
        """[B, 1, T, F] -> [B, T, conv_out_dim] with the time axis preserved."""
        if x.shape[2] != self.config.seq_len or x.shape[3] != self.config.in_features:
            raise DataError(
                f"conv input must be [B, 1, {self.config.seq_len}, {self.config.in_features}], "
                f"got {tuple(x.shape)}"
            )
        h = self.conv(x)  # [B, C, T, F']
        b, c, t, f = h.shape
        return h.permute(0, 2, 1, 3).reshape(b, t, c * f)

    def encode(self, frames: torch.Tensor, valid_frames: torch.Tensor | None = None) -> torch.Tensor:
        """[B, T, conv_out_dim] -> [B, T, d_model] per-frame embeddings."""
        mask = self.frame_mask(frames.shape[0], valid_frames)
        h = self.input_proj(frames) + self.pos_encoding.to(frames.dtype)
        return self.encoder(h, src_key_padding_mask=~mask)

    def heads(self, encoded: torch.Tensor, valid_frames: torch.Tensor | None = None) -> PredictionSet:
        mask = self.frame_mask(encoded.shape[0], valid_frames)
        depth = torch.sigmoid(self.depth_head(encoded).squeeze(-1))
        onset = torch.sigmoid(self.onset_head(encoded).squeeze(-1))
        offset = torch.sigmoid(self.offset_head(encoded).squeeze(-1))
        weights = mask.to(encoded.dtype)
        pooled = (encoded * weights[..., None]).sum(1) / weights.sum(1, keepdim=True)
        global_depth = torch.sigmoid(self.global_head(pooled).squeeze(-1))
        return PredictionSet(depth=depth, onset=onset, offset=offset, global_depth=global_depth)

    def forward(self, x: torch.Tensor, valid_frames: torch.Tensor | None = None) -> PredictionSet:
        """[B, T, F] features -> PredictionSet. Padded frames are zeroed first."""
        if x.ndim != 3:
            raise DataError(f"expected [B, T, F] input, got shape {tuple(x.shape)}")
        mask = self.frame_mask(x.shape[0], valid_frames)
        x = x * mask[..., None].to(x.dtype)
        frames = self.conv_block(x[:, None])
        encoded = self.encode(frames, valid_frames)
        return self.heads(encoded, valid_frames)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def save_checkpoint(
    path: str,
    model: PedalNet,
    step: int = 0,
    extra_tensors: dict[str, torch.Tensor] | None = None,
    extra_meta: dict | None = None,
) -> None:
    """Write model state (and optional extras) in the PDCK container."""
    tensors: dict[str, torch.Tensor] = dict(model.state_dict())
    for name, tensor in (extra_tensors or {}).items():
        tensors[f"extra/{name}"] = tensor

    entries = []
    payload = bytearray()
    for name, tensor in tensors.items():
        array = tensor.detach().cpu().numpy()
        entries.append(
            {
                "name": name,
                "shape": list(array.shape),
                "dtype": str(array.dtype),
                "offset": len(payload),
            }
        )
        payload += np.ascontiguousarray(array, dtype="<f4").tobytes()

    manifest = json.dumps(
        {
            "config": model.config.to_dict(),
            "step": int(step),
            "tensors": entries,
            "meta": extra_meta or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<IQ", CHECKPOINT_VERSION, len(manifest))
        + manifest
        + bytes(payload)
    )
    write_bytes_atomic(path, blob)


def load_checkpoint(path: str) -> tuple[PedalNet, int, dict[str, torch.Tensor], dict]:
    """Read a PDCK checkpoint; returns (model, step, extra tensors, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a PDCK checkpoint")
    version, manifest_len = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(raw[16 : 16 + manifest_len].decode("utf-8"))
    payload = raw[16 + manifest_len :]

    tensors: dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        array = np.frombuffer(payload, dtype="<f4", offset=entry["offset"], count=count)
        array = array.reshape(entry["shape"]).astype(entry["dtype"])
        tensors[entry["name"]] = torch.from_numpy(array.copy())

    config = ModelConfig.from_dict(manifest["config"])
    model = PedalNet(config)
    state = {k: v for k, v in tensors.items() if not k.startswith("extra/")}
    model.load_state_dict(state)
    extras = {k[len("extra/") :]: v for k, v in tensors.items() if k.startswith("extra/")}
    return model, int(manifest["step"]), extras, manifest.get("meta", {})
