"""VGG-style spiking networks wired for the three-output TRR forward pass.

Stage layout follows VGG-9: two conv-spiking layers per stage, average
pooling between stages, then global average pooling and one fully connected
head. Each conv layer is ``conv3x3 -> per-channel affine -> LIF`` applied to
every timestep with shared weights.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .data import encode_static
from .errors import CheckpointError, ContractError
from .losses import LogitsPair
from .neuron import LIF, LIFParams
from .temporal import star_hybridize, temporal_reverse

VGG9_CHANNELS = ((64, 128), (256, 256), (512, 512), (512, 512))

Perturbation = Callable[[Tensor], Tensor]


@dataclass
class ModelConfig:
    architecture: str = "vgg9_mini"
    in_channels: int = 2
    height: int = 16
    width: int = 16
    num_classes: int = 10
    T: int = 5
    width_divisor: int = 16
    encoder_stages: int = 1
    reversal_location: int = 1
    tau: float = 2.0
    threshold: float = 1.0
    surrogate_width: float = 1.0
    init_scale: float = 3.0

    def stage_channels(self) -> list[tuple[int, ...]]:
        if self.architecture == "vgg9":
            return [tuple(c) for c in VGG9_CHANNELS]
        if self.architecture == "vgg9_mini":
            return [tuple(max(1, c // self.width_divisor) for c in stage) for stage in VGG9_CHANNELS]
        raise ContractError(f"unknown architecture {self.architecture!r}")

    def lif_params(self) -> LIFParams:
        return LIFParams(tau=self.tau, threshold=self.threshold, a=self.surrogate_width)


class ConvSpike:
    """``conv3x3 -> channel affine -> LIF`` over a ``[T, B, C, H, W]`` train."""

    def __init__(self, name: str, c_in: int, c_out: int, lif: LIF, rng: np.random.Generator,
                 init_scale: float = 1.0):
        fan_in = c_in * 9
        self.name = name
        self.weight = ag.parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, 3, 3)))
        self.scale = ag.parameter(np.full(c_out, init_scale))
        self.shift = ag.parameter(np.zeros(c_out))
        self.lif = lif

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.scale", self.scale),
                (f"{self.name}.shift", self.shift)]

    def __call__(self, x: Tensor) -> Tensor:
        T, B = x.shape[:2]
        y = ag.reshape(x, (T * B,) + x.shape[2:])
        y = ag.conv2d(y, self.weight, stride=1, padding=1)
        y = ag.channel_affine(y, self.scale, self.shift)
        y = ag.reshape(y, (T, B) + y.shape[1:])
        return self.lif(y)


def _time_distributed_pool(x: Tensor, window: int) -> Tensor:
    T, B = x.shape[:2]
    y = ag.avg_pool2d(ag.reshape(x, (T * B,) + x.shape[2:]), window, window)
    return ag.reshape(y, (T, B) + y.shape[1:])


class Stage:
    def __init__(self, layers: list[ConvSpike], pool: bool):
        self.layers = layers
        self.pool = pool

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(spikes, output)``; output is pooled when the stage pools."""
        for layer in self.layers:
            x = layer(x)
        spikes = x
        return spikes, (_time_distributed_pool(x, 2) if self.pool else x)


class SnnModel:
    """VGG-style SNN with an encoder prefix and a shared fully connected head.

    ``stages[:encoder_stages]`` form the spike encoder. In static mode the
    reversed branch is split off after ``reversal_location`` stages.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.T = config.T
        n_stages = len(config.stage_channels())
        if not 1 <= config.reversal_location <= n_stages:
            raise ContractError(f"reversal_location must be in [1, {n_stages}]")
        if not 1 <= config.encoder_stages <= n_stages:
            raise ContractError(f"encoder_stages must be in [1, {n_stages}]")
        spatial = config.height
        for _ in range(n_stages - 1):
            if spatial % 2 or config.width % 2:
                raise ContractError("input height/width must survive three 2x poolings")
            spatial //= 2
        rng = np.random.default_rng(seed)
        lif = LIF(config.lif_params())
        self.stages: list[Stage] = []
        c_in = config.in_channels
        for s, widths in enumerate(config.stage_channels(), start=1):
            layers = []
            for j, c_out in enumerate(widths, start=1):
                layers.append(ConvSpike(f"stage{s}.conv{j}", c_in, c_out, lif, rng, config.init_scale))
                c_in = c_out
            self.stages.append(Stage(layers, pool=s < n_stages))
        fan_in = c_in
        self.fc_weight = ag.parameter(rng.normal(0.0, np.sqrt(1.0 / fan_in), (config.num_classes, fan_in)))
        self.fc_bias = ag.parameter(np.zeros(config.num_classes))
        self.check_binary = False

    # -- parameters -----------------------------------------------------------
    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def reversal_location(self) -> int:
        return self.config.reversal_location

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for stage in self.stages:
            for layer in stage.layers:
                named.extend(layer.parameters())
        named.append(("fc.weight", self.fc_weight))
        named.append(("fc.bias", self.fc_bias))
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_smooth(self, smooth: bool) -> None:
        """Swap every spike step for its surrogate ramp (gradient checking)."""
        for stage in self.stages:
            for layer in stage.layers:
                layer.lif.smooth = smooth

    def calibrate(self, x, mode: str = "temporal", target_mean: float = 0.0, target_std: float = 1.0) -> None:
        """Data-dependent init of the channel affines (layer-sequential).

        Each layer's scale/shift is set so its affine output has the target
        per-channel mean and standard deviation on ``x``.
        """
        with no_grad():
            h = self.prepare_input(x, mode)
            for stage in self.stages:
                for layer in stage.layers:
                    T, B = h.shape[:2]
                    y = ag.conv2d(ag.reshape(h, (T * B,) + h.shape[2:]), layer.weight, 1, 1).data
                    mean = y.mean(axis=(0, 2, 3), dtype=np.float64)
                    std = y.std(axis=(0, 2, 3), dtype=np.float64)
                    scale = target_std / np.maximum(std, 1e-6)
                    layer.scale.data = scale.astype(layer.scale.data.dtype)
                    layer.shift.data = (target_mean - mean * scale).astype(layer.shift.data.dtype)
                    h = layer(h)
                if stage.pool:
                    h = _time_distributed_pool(h, 2)

    # -- building blocks ------------------------------------------------------
    def prepare_input(self, x, mode: str) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if mode == "static":
            if x.ndim != 4:
                raise ContractError(f"static input must be [B, C, H, W], got {x.shape}")
            return encode_static(x, self.T)
        if mode == "temporal":
            if x.ndim != 5:
                raise ContractError(f"temporal input must be [T, B, C, H, W], got {x.shape}")
            if x.shape[0] != self.T:
                raise ContractError(f"input has T={x.shape[0]} but the model expects T={self.T}")
            return x
        raise ContractError(f"unknown mode {mode!r}")

    def run_stages(self, x: Tensor, start: int = 0, stop: Optional[int] = None,
                   record: Optional[dict] = None) -> Tensor:
        """Propagate through ``stages[start:stop]`` and return the last output.

        With ``stop`` equal to the number of stages the result is the
        penultimate spike train fed to the head.
        """
        stop = self.num_stages if stop is None else stop
        for index in range(start, stop):
            spikes, x = self.stages[index](x)
            if self.check_binary and not np.all((spikes.data == 0) | (spikes.data == 1)):
                raise ContractError(f"stage {index + 1} emitted non-binary spikes")
            if record is not None:
                record[index + 1] = spikes.data
        return x

    def global_pool(self, x: Tensor) -> Tensor:
        """Mean over the spatial axes of ``[N, C, H, W]``."""
        n, c = x.shape[:2]
        return ag.mean_over_axis(ag.reshape(x, (n, c, x.shape[2] * x.shape[3])), 2)

    def head_per_timestep(self, features: Tensor) -> Tensor:
        """fc applied to every timestep, then rate decoding (mean over T)."""
        T, B = features.shape[:2]
        pooled = self.global_pool(ag.reshape(features, (T * B,) + features.shape[2:]))
        logits = ag.linear(pooled, self.fc_weight, self.fc_bias)
        return ag.mean_over_axis(ag.reshape(logits, (T, B, logits.shape[1])), 0)

    def head_rate(self, rate: Tensor) -> Tensor:
        return ag.linear(self.global_pool(rate), self.fc_weight, self.fc_bias)

    # -- forward passes -------------------------------------------------------
    def forward_plain(self, x, mode: str = "temporal", record: Optional[dict] = None) -> Tensor:
        """Single-branch inference path."""
        features = self.run_stages(self.prepare_input(x, mode), record=record)
        return self.head_per_timestep(features)

    def forward_trr(self, x, mode: str = "temporal", perturb: Optional[Perturbation] = temporal_reverse,
                    hybridize: bool = True, record: Optional[dict] = None) -> LogitsPair:
        """Original, perturbed and hybridized logits from one pair of passes.

        Temporal mode perturbs the input; static mode encodes once and
        perturbs the encoded train after ``reversal_location`` stages.
        ``perturb=None`` reuses the original branch as the perturbed one.
        """
        seq = self.prepare_input(x, mode)
        if perturb is None:
            features = self.run_stages(seq, record=record)
            features_hat = features
        elif mode == "temporal":
            features = self.run_stages(seq, record=record)
            features_hat = self.run_stages(perturb(seq))
        else:
            loc = self.reversal_location
            encoded = self.run_stages(seq, 0, loc, record=record)
            features = self.run_stages(encoded, loc, record=record)
            features_hat = self.run_stages(perturb(encoded), loc)
        z = self.head_per_timestep(features)
        z_hat = z if perturb is None else self.head_per_timestep(features_hat)
        z_tilde = self.head_rate(star_hybridize(features, features_hat)) if hybridize else None
        return LogitsPair(z=z, z_hat=z_hat, z_tilde=z_tilde)

    def penultimate(self, x, mode: str = "temporal") -> Tensor:
        return self.run_stages(self.prepare_input(x, mode))

    def asfr(self, x, stage: int, mode: str = "temporal") -> float:
        """Average spike firing rate of the spikes emitted by ``stage`` (1-based)."""
        if not 1 <= stage <= self.num_stages:
            raise ContractError(f"stage must be in [1, {self.num_stages}], got {stage}")
        record: dict = {}
        with no_grad():
            self.run_stages(self.prepare_input(x, mode), 0, stage, record=record)
        return float(record[stage].mean(dtype=np.float64))

    # -- checkpoints ----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = sorted(set(named) - set(state))
        extra = sorted(set(state) - set(named))
        if missing or extra:
            raise CheckpointError(f"checkpoint mismatch: missing={missing} unexpected={extra}")
        for name, p in named.items():
            if state[name].shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)


# ---------------------------------------------------------------------------
# checkpoint file format
#
#   magic      8 bytes  b"TRRCKPT1"
#   length     u32 LE   byte length of the manifest
#   manifest   UTF-8 JSON {"config": {...}, "tensors": [{"name", "shape", "offset"}]}
#   payload    little-endian float32 values; offsets are in bytes from payload start
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TRRCKPT1"


def save_checkpoint(model: SnnModel, path) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"config": asdict(model.config), "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for raw in chunks:
            fh.write(raw)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (length,) = struct.unpack_from("<I", blob, 8)
    manifest = json.loads(blob[12:12 + length].decode())
    payload = memoryview(blob)[12 + length:]
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"]))
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past the payload")
        values = np.frombuffer(payload[start:start + 4 * count], dtype="<f4")
        tensors[entry["name"]] = values.reshape(entry["shape"]).astype(np.float32)
    return manifest["config"], tensors


def load_checkpoint(path, model: Optional[SnnModel] = None) -> SnnModel:
    config, tensors = read_checkpoint(path)
    if model is None:
        model = SnnModel(ModelConfig(**config))
    model.load_state_dict(tensors)
    return model


def build_model(config: ModelConfig, seed: int = 0) -> SnnModel:
    return SnnModel(config, seed=seed)


__all__ = [
    "ModelConfig", "SnnModel", "build_model", "load_checkpoint",
    "read_checkpoint", "save_checkpoint",
]
