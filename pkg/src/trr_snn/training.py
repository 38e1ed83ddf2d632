"""Training loop, evaluation and the baseline / +TR / +FH / TRR ablation suite."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .data import Dataset
from .errors import ContractError, TrainingDivergedError
from .losses import LogitsPair, LossBreakdown, TrrLossWeights, trr_total_loss
from .models import ModelConfig, SnnModel, save_checkpoint
from .temporal import temporal_reverse, temporal_shuffle

logger = logging.getLogger(__name__)

PERTURBATIONS = ("none", "reverse", "shuffle")


@dataclass
class TrrConfig:
    T: int = 5
    alpha: float = 0.5
    t_tem: float = 2.0
    mode: str = "temporal"
    reversal_location: int = 1
    perturbation: str = "reverse"
    enable_consistency: bool = True
    enable_hybridization: bool = True
    detach_original: bool = False
    optimizer: str = "sgd_momentum"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    seed: int = 0
    calibrate: bool = True
    calibrate_mean: float = 0.3
    calibrate_std: float = 0.6
    calibrate_samples: int = 128

    def validate(self) -> None:
        if self.T < 1:
            raise ContractError("T must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.t_tem <= 0:
            raise ContractError("t_tem must be positive")
        if self.mode not in ("temporal", "static"):
            raise ContractError(f"mode must be temporal or static, got {self.mode!r}")
        if self.perturbation not in PERTURBATIONS:
            raise ContractError(f"perturbation must be one of {PERTURBATIONS}, got {self.perturbation!r}")
        if self.optimizer != "sgd_momentum":
            raise ContractError(f"unsupported optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_decay_every < 1:
            raise ContractError("batch_size and lr_decay_every must be >= 1, epochs >= 0")
        if self.calibrate and (self.calibrate_std <= 0 or self.calibrate_samples < 1):
            raise ContractError("calibrate_std must be positive and calibrate_samples >= 1")

    @property
    def uses_second_branch(self) -> bool:
        return self.perturbation != "none" or self.enable_consistency or self.enable_hybridization

    def loss_weights(self) -> TrrLossWeights:
        # without the hybrid head the objective is CE + L_con
        return TrrLossWeights(alpha=self.alpha if self.enable_hybridization else 0.0, t_tem=self.t_tem)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def sgd_momentum_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
                      buffers: list, lr: float, momentum: float, weight_decay: float) -> None:
    """``v <- m*v + (g + wd*p); p <- p - lr*v``, in place.

    ``buffers`` holds one velocity per parameter; ``None`` entries start at zero.
    """
    if len(buffers) != len(params):
        buffers[:] = [None] * len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else g
        if weight_decay:
            g = g + p.data * p.data.dtype.type(weight_decay)
        v = g if buffers[i] is None else buffers[i] * p.data.dtype.type(momentum) + g
        buffers[i] = v
        p.data = p.data - v * p.data.dtype.type(lr)


class SGDMomentum:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: list = [None] * len(self.params)

    def step(self) -> None:
        sgd_momentum_step(self.params, [p.grad for p in self.params], self.buffers,
                          self.lr, self.momentum, self.weight_decay)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    ce: float
    con: float
    hybrid_ce: float
    total: float
    train_accuracy: float
    test_accuracy: Optional[float]
    asfr: list[float]


@dataclass
class TrainReport:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    iterations: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint_path: Optional[str] = None

    @property
    def final_test_accuracy(self) -> Optional[float]:
        return self.epochs[-1].test_accuracy if self.epochs else None

    def log_lines(self) -> list[str]:
        """JSON lines, one per iteration and one per epoch. Excludes wall time."""
        lines = [json.dumps({"kind": "config", **self.config}, sort_keys=True)]
        by_epoch: dict[int, list[dict]] = {}
        for it in self.iterations:
            by_epoch.setdefault(it["epoch"], []).append(it)
        for record in self.epochs:
            for it in by_epoch.get(record.epoch, []):
                lines.append(json.dumps({"kind": "iteration", **it}, sort_keys=True))
            lines.append(json.dumps({"kind": "epoch", **asdict(record)}, sort_keys=True))
        return lines

    def write_log(self, path) -> None:
        Path(path).write_text("\n".join(self.log_lines()) + "\n")

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n_stages = len(self.epochs[0].asfr) if self.epochs else 0
            writer.writerow(["epoch", "lr", "ce", "con", "hybrid_ce", "total", "train_accuracy",
                             "test_accuracy"] + [f"asfr_stage{s + 1}" for s in range(n_stages)])
            for r in self.epochs:
                writer.writerow([r.epoch, r.lr, r.ce, r.con, r.hybrid_ce, r.total, r.train_accuracy,
                                 "" if r.test_accuracy is None else r.test_accuracy] + list(r.asfr))


class EvalResult(NamedTuple):
    accuracy: float
    asfr: list[float]
    predictions: np.ndarray


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _check_compatible(config: TrrConfig, model: SnnModel, data: Dataset) -> None:
    config.validate()
    if config.T != model.T:
        raise ContractError(f"config T={config.T} but model T={model.T}")
    if config.reversal_location != model.reversal_location:
        raise ContractError(
            f"config reversal_location={config.reversal_location} but model has {model.reversal_location}"
        )
    if data.mode != config.mode:
        raise ContractError(f"config mode {config.mode!r} but dataset mode {data.mode!r}")
    if len(data) == 0:
        raise ContractError("training set is empty")


def make_perturbation(config: TrrConfig, rng: np.random.Generator) -> Optional[Callable[[Tensor], Tensor]]:
    if config.perturbation == "reverse":
        return temporal_reverse
    if config.perturbation == "shuffle":
        seed = int(rng.integers(2 ** 31))
        return lambda x: temporal_shuffle(x, seed)
    return None


def train_step(model: SnnModel, optimizer: SGDMomentum, config: TrrConfig, x: np.ndarray, y: np.ndarray,
               perturb) -> tuple[LogitsPair, LossBreakdown]:
    """One pass of the per-iteration loop: forward, loss, backward, update."""
    weights = config.loss_weights()
    if config.uses_second_branch:
        pair = model.forward_trr(x, config.mode, perturb=perturb, hybridize=weights.alpha > 0)
    else:
        z = model.forward_plain(x, config.mode)
        pair = LogitsPair(z=z, z_hat=z)
    loss, breakdown = trr_total_loss(pair, y, weights, enable_consistency=config.enable_consistency,
                                     detach_original=config.detach_original)
    if not math.isfinite(breakdown.total):
        raise TrainingDivergedError(
            f"non-finite loss {breakdown.total} (ce={breakdown.ce}, con={breakdown.con}, "
            f"hybrid_ce={breakdown.hybrid_ce}); lower the learning rate or check the inputs"
        )
    model.zero_grad()
    loss.backward()
    optimizer.step()
    return pair, breakdown


def train(config: TrrConfig, model: SnnModel, data: Dataset, test_data: Optional[Dataset] = None,
          log_path=None, summary_path=None, checkpoint_path=None) -> TrainReport:
    """Train ``model`` in place and return a per-epoch / per-iteration report."""
    _check_compatible(config, model, data)
    started = time.perf_counter()
    report = TrainReport(config=asdict(config))
    if config.calibrate:
        # evenly strided over storage order so every class is seen, independent of the epoch shuffle
        picks = np.unique(np.linspace(0, len(data) - 1, min(config.calibrate_samples, len(data))).astype(np.intp))
        model.calibrate(data.batch_input(picks), config.mode, config.calibrate_mean, config.calibrate_std)
    optimizer = SGDMomentum(model.parameters(), config.lr, config.momentum, config.weight_decay)
    order_rng = np.random.default_rng(config.seed)
    perturb_rng = np.random.default_rng([config.seed, 1])
    iteration = 0
    for epoch in range(config.epochs):
        optimizer.lr = config.lr_at(epoch)
        order = order_rng.permutation(len(data))
        sums = np.zeros(4)
        correct = seen = 0
        for x, y in data.batches(config.batch_size, order):
            perturb = make_perturbation(config, perturb_rng)
            pair, br = train_step(model, optimizer, config, x, y, perturb)
            batch = len(y)
            sums += batch * np.array([br.ce, br.con, br.hybrid_ce, br.total])
            correct += int((np.argmax(pair.z.data, axis=1) == y).sum())
            seen += batch
            report.iterations.append({"epoch": epoch, "iteration": iteration, "lr": optimizer.lr, "ce": br.ce,
                                      "con": br.con, "hybrid_ce": br.hybrid_ce, "total": br.total})
            iteration += 1
        means = sums / max(seen, 1)
        test_acc, asfr = None, []
        if test_data is not None and len(test_data):
            result = evaluate(model, test_data)
            test_acc, asfr = result.accuracy, result.asfr
        report.epochs.append(EpochRecord(epoch=epoch, lr=optimizer.lr, ce=float(means[0]), con=float(means[1]),
                                         hybrid_ce=float(means[2]), total=float(means[3]),
                                         train_accuracy=correct / max(seen, 1), test_accuracy=test_acc,
                                         asfr=asfr))
        logger.info("epoch %d: loss=%.4f train_acc=%.3f test_acc=%s", epoch, means[3],
                    correct / max(seen, 1), test_acc)
    report.wall_time = time.perf_counter() - started
    if checkpoint_path is not None:
        report.checkpoint_path = str(save_checkpoint(model, checkpoint_path))
    if log_path is not None:
        report.write_log(log_path)
    if summary_path is not None:
        report.write_summary_csv(summary_path)
    return report


def evaluate(model: SnnModel, data: Dataset, batch_size: int = 128) -> EvalResult:
    """Single-branch accuracy plus per-stage average spike firing rate."""
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    predictions = []
    spike_totals = np.zeros(model.num_stages)
    element_totals = np.zeros(model.num_stages)
    with no_grad():
        for x, _ in data.batches(batch_size):
            record: dict = {}
            z = model.forward_plain(x, data.mode, record=record)
            predictions.append(np.argmax(z.data, axis=1))
            for stage, spikes in record.items():
                spike_totals[stage - 1] += spikes.sum(dtype=np.float64)
                element_totals[stage - 1] += spikes.size
    predictions = np.concatenate(predictions)
    accuracy = float((predictions == data.y).mean())
    asfr = [float(s / n) for s, n in zip(spike_totals, element_totals)]
    return EvalResult(accuracy, asfr, predictions)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

ABLATION_ROWS = {
    "Baseline": dict(perturbation="none", enable_consistency=False, enable_hybridization=False),
    "+TR": dict(perturbation="reverse", enable_consistency=True, enable_hybridization=False),
    "+FH": dict(perturbation="reverse", enable_consistency=False, enable_hybridization=True),
    "TRR": dict(perturbation="reverse", enable_consistency=True, enable_hybridization=True),
}


def ablation_configs(base: TrrConfig) -> dict[str, TrrConfig]:
    return {label: replace(base, **overrides) for label, overrides in ABLATION_ROWS.items()}


@dataclass
class AblationRow:
    method: str
    accuracies: list[float]
    asfr: list[list[float]]

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_asfr(self) -> list[float]:
        return [float(v) for v in np.mean(np.asarray(self.asfr), axis=0)]


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: list[int]

    def row(self, method: str) -> AblationRow:
        return next(r for r in self.rows if r.method == method)

    def write_csv(self, path) -> None:
        baseline = self.row("Baseline").accuracy
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "accuracy", "delta_vs_baseline"] + [f"seed{s}" for s in self.seeds])
            for r in self.rows:
                writer.writerow([r.method, f"{100 * r.accuracy:.2f}", f"{100 * (r.accuracy - baseline):+.2f}"]
                                + [f"{100 * a:.2f}" for a in r.accuracies])

    def write_asfr_csv(self, path) -> None:
        n_stages = len(self.rows[0].mean_asfr) if self.rows and self.rows[0].asfr else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method"] + [f"stage{s + 1}" for s in range(n_stages)])
            for r in self.rows:
                writer.writerow([r.method] + [repr(v) for v in r.mean_asfr])


def run_ablation_suite(base_config: TrrConfig, model_config: ModelConfig, train_data: Dataset,
                       test_data: Dataset, seeds: Sequence[int] = (0,), out_dir=None) -> AblationTable:
    """Train Baseline, +TR, +FH and TRR on identical data and seeds.

    With ``out_dir`` every run leaves ``<method>_seed<k>.jsonl`` and ``.ckpt``
    next to ``ablation.csv`` and ``asfr.csv``.
    """
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    rows = []
    for method, config in ablation_configs(base_config).items():
        accuracies, asfrs = [], []
        for seed in seeds:
            run_config = replace(config, seed=seed)
            model = SnnModel(model_config, seed=seed)
            log_path = checkpoint_path = None
            if out_dir is not None:
                stem = Path(out_dir) / f"{method.strip('+').lower()}_seed{seed}"
                log_path, checkpoint_path = stem.with_suffix(".jsonl"), stem.with_suffix(".ckpt")
            train(run_config, model, train_data, log_path=log_path, checkpoint_path=checkpoint_path)
            result = evaluate(model, test_data)
            accuracies.append(result.accuracy)
            asfrs.append(result.asfr)
            logger.info("%s seed %d: accuracy %.4f", method, seed, result.accuracy)
        rows.append(AblationRow(method, accuracies, asfrs))
    table = AblationTable(rows, list(seeds))
    if out_dir is not None:
        table.write_csv(Path(out_dir) / "ablation.csv")
        table.write_asfr_csv(Path(out_dir) / "asfr.csv")
    return table
