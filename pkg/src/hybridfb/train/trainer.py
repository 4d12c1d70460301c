"""Three-phase training: full precision, quantization active, frozen ternary."""
from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .. import functional as F
from ..network import Network
from ..spn import LifecycleState
from ..tensor import NonFiniteError, Tensor, no_grad
from .checkpoint import Checkpoint, save_checkpoint
from .data import Dataset, iterate_batches
from .optim import cosine_lr, nag_step

PHASE_NAMES = ("FP_TRAIN", "QUANT_ACTIVE", "FROZEN")
_LIFECYCLE = {"FP_TRAIN": LifecycleState.FULL_PRECISION, "QUANT_ACTIVE": LifecycleState.QUANT_ACTIVE,
              "FROZEN": LifecycleState.FROZEN_TERNARY}


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    return cls(**d)


@dataclass
class PhaseConfig:
    name: str
    epochs: int
    lr: float
    warmup_epochs: float = 0.0

    def __post_init__(self):
        if self.name not in PHASE_NAMES:
            raise ConfigError(f"unknown phase {self.name!r}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"{self.name}: epochs must be an integer >= 1")
        if not self.lr > 0:
            raise ConfigError(f"{self.name}: lr must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"{self.name}: warmup must lie in [0, epochs)")
        self.epochs = int(self.epochs)


@dataclass
class DistillConfig:
    enabled: bool = False
    temperature: float = 4.0
    weight: float = 0.5

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("distillation temperature must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigError("distillation weight must lie in [0, 1]")


def default_phases() -> list[PhaseConfig]:
    """Desk schedule: the reference (200, 75, 25) epochs divided by 10."""
    return [PhaseConfig("FP_TRAIN", 20, 0.2, 5.0), PhaseConfig("QUANT_ACTIVE", 8, 0.02),
            PhaseConfig("FROZEN", 3, 0.002)]


@dataclass
class TrainConfig:
    phases: list = field(default_factory=default_phases)
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # phase lrs are quoted for this batch size and scaled linearly
    lr_reference_batch: int = 256
    seed: int = 0
    eval_batch_size: int = 256
    # global gradient-norm ceiling; None disables clipping
    grad_clip: Optional[float] = 5.0
    distillation: DistillConfig = field(default_factory=DistillConfig)

    def __post_init__(self):
        self.phases = [p if isinstance(p, PhaseConfig) else _from_dict(PhaseConfig, p, "phase")
                       for p in self.phases]
        if isinstance(self.distillation, dict):
            self.distillation = _from_dict(DistillConfig, self.distillation, "distillation")
        if not self.phases:
            raise ConfigError("at least one phase is required")
        order = [PHASE_NAMES.index(p.name) for p in self.phases]
        if order != sorted(set(order)):
            raise ConfigError("phases must run in the order FP_TRAIN, QUANT_ACTIVE, FROZEN, each at most once")
        if self.batch_size < 1 or self.eval_batch_size < 1 or self.lr_reference_batch < 1:
            raise ConfigError("batch sizes must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("invalid optimizer settings")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive or null")

    def effective_lr(self, phase: PhaseConfig) -> float:
        return phase.lr * self.batch_size / self.lr_reference_batch

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d, "train")


@dataclass
class TrainResult:
    network: Network
    metrics: list
    teacher: Optional[Network] = None
    completed: bool = True

    @property
    def final_eval_accuracy(self) -> float:
        return self.metrics[-1]["eval_acc"] if self.metrics else float("nan")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def distillation_loss(student_logits: Tensor, teacher_logits, labels, temperature: float = 4.0,
                      weight: float = 0.5) -> Tensor:
    """``(1 - w) * CE(student, labels) + w * T^2 * KL(p_teacher || p_student)`` at temperature T."""
    t_logits = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits)
    if t_logits.shape != student_logits.shape:
        raise ValueError(f"student {student_logits.shape} and teacher {t_logits.shape} logits disagree")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    ce = F.softmax_cross_entropy(student_logits, labels)
    if weight == 0:
        return ce
    inv_t = 1.0 / temperature
    log_pt = F.log_softmax(Tensor(t_logits.astype(student_logits.dtype) * np.asarray(inv_t, student_logits.dtype)))
    log_ps = F.log_softmax(F.mul(student_logits, inv_t))
    p_t = np.exp(log_pt.data)
    kl = F.mul(F.sum(F.mul(F.sub(log_pt, log_ps), p_t)), 1.0 / student_logits.shape[0])
    soft = F.mul(kl, weight * temperature ** 2)
    if weight == 1:
        return soft
    return F.add(F.mul(ce, 1.0 - weight), soft)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_accuracy(network: Network, ds: Dataset, batch_size: int = 256, train_split: bool = False) -> float:
    was_training = network.training
    network.eval()
    x_all, y_all = (ds.x_train, ds.y_train) if train_split else (ds.x_eval, ds.y_eval)
    correct = 0
    with no_grad():
        for i in range(0, len(y_all), batch_size):
            logits = network(x_all[i:i + batch_size]).data
            correct += int((logits.argmax(1) == y_all[i:i + batch_size]).sum())
    network.train(was_training)
    return correct / max(1, len(y_all))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

class MetricsLog:
    """Line-delimited JSON: one header line (holds the timestamp), then one record per epoch."""

    def __init__(self, path, config: dict, records: list):
        self.path = Path(path) if path is not None else None
        if self.path is None:
            return
        header = {"type": "header", "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                  "config": config}
        with self.path.open("w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def append(self, record: dict) -> None:
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics_log(path) -> tuple[dict, list]:
    lines = Path(path).read_text().splitlines()
    return json.loads(lines[0]), [json.loads(l) for l in lines[1:] if l.strip()]


def clip_grad_norm(grads: list, max_norm: Optional[float]) -> bool:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; True if scaled."""
    if max_norm is None:
        return False
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads if g is not None))
    if total <= max_norm:
        return False
    k = max_norm / total
    for g in grads:
        if g is not None:
            g *= k
    return True


def _step_loss(network: Network, teacher: Optional[Network], xb, yb, distill: DistillConfig):
    logits = network(xb)
    if teacher is None:
        return logits, F.softmax_cross_entropy(logits, yb)
    with no_grad():
        t_logits = teacher(xb).data
    return logits, distillation_loss(logits, t_logits, yb, distill.temperature, distill.weight)


def train(network: Network, dataset: Dataset, config: TrainConfig = None, *, checkpoint_dir=None,
          log_path=None, resume: Optional[Checkpoint] = None, checkpoint_every_epoch: bool = False,
          stop_after_epochs: Optional[int] = None, echo=None) -> TrainResult:
    """Run the configured phases in order.

    Entering QUANT_ACTIVE activates quantization on every lifecycle layer and
    entering FROZEN freezes and folds them; momentum buffers restart at each
    phase. With ``resume`` the run continues from the checkpoint's cursor and
    reproduces the uninterrupted trajectory.
    """
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    metrics: list = []
    teacher: Optional[Network] = None
    opt_state: dict = {}
    start_phase, start_epoch = 0, 0
    if resume is not None:
        network = resume.network
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
        metrics = list(resume.metrics)
        teacher = resume.teacher
        start_phase = int(resume.cursor.get("phase", 0))
        start_epoch = int(resume.cursor.get("epoch", 0))
        if resume.optimizer_state is not None:
            opt_state = {"momentum": list(resume.optimizer_state)}
    else:
        first = _LIFECYCLE[config.phases[0].name]
        if list(LifecycleState).index(network.phase) > list(LifecycleState).index(first):
            raise ConfigError(f"network is already {network.phase.value}; first phase is {config.phases[0].name}")
    cfg_dict = config.to_dict()
    log = MetricsLog(log_path, cfg_dict, metrics)
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    distill = config.distillation
    epochs_run = 0

    def snapshot(path, cursor):
        if ckdir is None:
            return
        bufs = opt_state.get("momentum")
        save_checkpoint(ckdir / path, network, optimizer_state=bufs, rng_state=rng.bit_generator.state,
                        cursor=cursor, metrics=metrics, config=cfg_dict, teacher=teacher)

    network.train()
    for pi in range(start_phase, len(config.phases)):
        phase = config.phases[pi]
        first_epoch = start_epoch if pi == start_phase else 0
        if first_epoch == 0:
            network.set_phase(_LIFECYCLE[phase.name])
            opt_state = {}
        params = network.parameters()
        exempt = network.decay_exempt()
        decay_mask = [id(p) not in exempt for p in params]
        use_teacher = distill.enabled and distill.weight > 0 and teacher is not None
        lr0 = config.effective_lr(phase)
        n_train = len(dataset.y_train)
        iters = math.ceil(n_train / config.batch_size)
        for e in range(first_epoch, phase.epochs):
            tot_loss, tot_correct, seen, lr, clipped = 0.0, 0, 0, 0.0, 0
            for it, (xb, yb) in enumerate(iterate_batches(dataset, config.batch_size, rng, train=True)):
                lr = cosine_lr(e + it / iters, phase.epochs, phase.warmup_epochs, lr0)
                for p in params:
                    p.grad = None
                try:
                    # overflow surfaces as NonFiniteError below; numpy's own warnings are redundant
                    with np.errstate(over="ignore", invalid="ignore"):
                        logits, loss = _step_loss(network, teacher if use_teacher else None, xb, yb, distill)
                        loss.backward()
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"non-finite values in {phase.name} epoch {e} batch {it}: {exc}") from exc
                lv = float(loss.data)
                if not math.isfinite(lv):
                    raise TrainingDiverged(f"non-finite loss in {phase.name} epoch {e} batch {it}")
                grads = [p.grad for p in params]
                clipped += clip_grad_norm(grads, config.grad_clip)
                nag_step([p.data for p in params], grads, opt_state, lr,
                         config.momentum, config.weight_decay, decay_mask)
                tot_loss += lv * len(yb)
                tot_correct += int((logits.data.argmax(1) == yb).sum())
                seen += len(yb)
            record = {"type": "epoch", "phase": phase.name, "phase_index": pi, "epoch": e, "lr": lr,
                      "loss": tot_loss / seen, "train_acc": tot_correct / seen, "clipped_steps": clipped,
                      "eval_acc": evaluate_accuracy(network, dataset, config.eval_batch_size)}
            metrics.append(record)
            log.append(record)
            if echo is not None:
                echo(record)
            epochs_run += 1
            done_phase = e + 1 == phase.epochs
            cursor = {"phase": pi + 1, "epoch": 0} if done_phase else {"phase": pi, "epoch": e + 1}
            if done_phase and phase.name == "FP_TRAIN" and distill.enabled:
                teacher = network.copy().eval()
            if checkpoint_every_epoch:
                snapshot("last.ckpt", cursor)
            if done_phase:
                snapshot(f"phase{pi + 1}_{phase.name}.ckpt", cursor)
            if stop_after_epochs is not None and epochs_run >= stop_after_epochs and cursor["phase"] < len(config.phases):
                return TrainResult(network, metrics, teacher, completed=False)
    return TrainResult(network, metrics, teacher)
