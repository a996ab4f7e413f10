"""AdamW and the online joint training loop.

Per minibatch the aligner is updated on its own objective first, then the
student is updated against the freshly updated (and detached) aligner.
Projection matrices are retracted to orthonormal columns after every step.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import analysis
from . import losses as L
from . import tensor as T
from .data import ExampleBatch
from .errors import ContractError, DimensionError, NumericError, ParameterError
from .models import (
    AlignerParams,
    ParamSet,
    StudentParams,
    capacity_layers,
    orthonormality_defect,
    retract_orthonormal,
)
from .teacher import RepresentationTable

# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam step with decoupled weight decay.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``.
    ``state`` is advanced in place; new parameter arrays are returned.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * theta
        out[name] = theta - state.lr * update
    return out


# ---------------------------------------------------------------------------
# configuration and report


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    aligner_lr: float = 1e-3
    student_lr: float = 3e-3
    weight_decay: float = 0.01
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    seed: int = 0
    frozen_aligner: bool = False
    capacity_ablation: bool = False
    eval_every: int = 1
    hidden: int = 32
    width: int = 32
    manifold: int = 16
    classes: int | None = None
    eval_metric: str = "accuracy"

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be positive")
        if not (self.aligner_lr > 0 and self.student_lr > 0):
            raise ParameterError("learning rates must be positive")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be positive")
        if self.manifold > min(self.hidden, self.width):
            raise ParameterError("manifold dim cannot exceed aligner hidden or student width")
        self.loss.validate()

    def effective_loss(self) -> L.LossConfig:
        if not self.capacity_ablation:
            return self.loss
        cfg = L.LossConfig(**asdict(self.loss))
        cfg.beta = cfg.gamma = 0.0
        return cfg


CURVE_COLUMNS = ["epoch", "L_t", "L_s", "task", "soft", "manifold", "aux_t", "aux_s",
                 "eval_main", "eval_aux", "task_ts", "aligner_main", "aligner_aux"]


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    steps: int = 0
    max_defect: dict = field(default_factory=lambda: {"aligner": 0.0, "student": 0.0})
    capacity_layers: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=float) + "\n")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for row in self.epochs:
                w.writerow({k: row.get(k, "") for k in CURVE_COLUMNS})


@dataclass
class TrainResult:
    report: TrainReport
    aligner: AlignerParams | None
    student: StudentParams


# ---------------------------------------------------------------------------
# evaluation


def _predict(logits: np.ndarray, kind: str) -> np.ndarray:
    return logits.argmax(axis=1) if kind == "classification" else logits[:, 0]


def score(predictions, labels, metric: str) -> float:
    if metric == "accuracy":
        return analysis.accuracy(predictions, labels)
    if metric == "mcc":
        return analysis.mcc(predictions, labels)
    if metric == "pearson":
        return analysis.pearson(predictions, labels)
    raise ParameterError(f"unknown metric {metric!r}")


def evaluate(
    params: ParamSet, inputs: ExampleBatch | np.ndarray, labels=None, metric: str = "accuracy",
    kind: str = "classification",
) -> dict[str, float]:
    """Score the main and auxiliary heads of a student or aligner."""
    labels = inputs.labels if labels is None and isinstance(inputs, ExampleBatch) else labels
    if labels is None or len(labels) == 0:
        raise ContractError("cannot evaluate on an empty split")
    out = params.graph(inputs)
    result = {"main": score(_predict(out.logits.value, kind), labels, metric)}
    if out.aux_logits is not None:
        result["aux"] = score(_predict(out.aux_logits.value, kind), labels, metric)
    return result


# ---------------------------------------------------------------------------
# training loops


def _num_classes(batch: ExampleBatch, cfg: TrainConfig) -> int:
    if cfg.loss.task_kind == "regression":
        return 1
    if cfg.classes is not None:
        return cfg.classes
    return int(max(batch.labels.max(), batch.classes.max())) + 1


def init_student(train: ExampleBatch, cfg: TrainConfig) -> StudentParams:
    return StudentParams.init(
        train.input_dim, cfg.width, cfg.manifold, _num_classes(train, cfg), [cfg.seed, 1], mode=train.mode
    )


def init_aligner(d_t: int, c: int, cfg: TrainConfig) -> tuple[AlignerParams, int]:
    if cfg.capacity_ablation:
        k = capacity_layers(cfg.hidden, cfg.manifold, c)
        return AlignerParams.init(d_t, cfg.hidden, cfg.manifold, c, [cfg.seed, 2],
                                  extra_layers=k, with_projection=False), k
    return AlignerParams.init(d_t, cfg.hidden, cfg.manifold, c, [cfg.seed, 2]), 0


def _grads(leaves: Mapping[str, T.Node], root: T.Node) -> dict[str, np.ndarray]:
    T.backward(root)
    return {k: n.grad for k, n in leaves.items()}


def _step(params: ParamSet, grads, state: OptimState) -> tuple[ParamSet, float]:
    new = adamw_step(params.tensors, grads, state)
    if "proj.P" in new:
        new["proj.P"] = retract_orthonormal(new["proj.P"])
    out = type(params)(new)
    defect = orthonormality_defect(out["proj.P"]) if "proj.P" in out else 0.0
    return out, defect


StepHook = Callable[[int, "AlignerParams | None", StudentParams], None]


def train_joint(
    train: ExampleBatch,
    reps: RepresentationTable,
    cfg: TrainConfig,
    test: ExampleBatch | None = None,
    test_reps: RepresentationTable | None = None,
    on_step: StepHook | None = None,
) -> TrainResult:
    """Train aligner and student together on ``train``."""
    cfg.validate()
    if len(train) != reps.n:
        raise ContractError(f"dataset has {len(train)} examples but teacher table has {reps.n} rows")
    loss_cfg = cfg.effective_loss()
    kind = loss_cfg.task_kind
    c = _num_classes(train, cfg)
    student = init_student(train, cfg)
    aligner, extra = init_aligner(reps.d_t, c, cfg)
    a_opt = OptimState(lr=cfg.aligner_lr, weight_decay=cfg.weight_decay)
    s_opt = OptimState(lr=cfg.student_lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 3])
    report = TrainReport(capacity_layers=extra)
    start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(train))
        sums: dict[str, float] = {}
        batches = 0
        for lo in range(0, len(train), cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            batch = train.subset(idx)
            batch_reps = reps.take(idx)

            a_leaves = aligner.leaves()
            a_terms = L.aligner_loss_terms(aligner.graph(batch_reps, a_leaves), batch.labels, loss_cfg)
            l_t = L.combine_aligner(a_terms, loss_cfg)
            if not cfg.frozen_aligner:
                aligner, defect = _step(aligner, _grads(a_leaves, l_t), a_opt)
                report.max_defect["aligner"] = max(report.max_defect["aligner"], defect)

            a_out = aligner.graph(batch_reps)
            s_leaves = student.leaves()
            s_terms = L.student_loss_terms(student.graph(batch, s_leaves), a_out, batch.labels, loss_cfg)
            l_s = L.combine_student(s_terms, loss_cfg)
            student, defect = _step(student, _grads(s_leaves, l_s), s_opt)
            report.max_defect["student"] = max(report.max_defect["student"], defect)
            report.steps += 1
            if on_step is not None:
                on_step(report.steps, aligner, student)

            row = _log_terms(l_t, a_terms, l_s, s_terms, loss_cfg)
            for k, v in row.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1

        entry = {"epoch": epoch, **{k: v / batches for k, v in sums.items()}}
        if test is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            _attach_eval(entry, student, aligner, test, test_reps, cfg.eval_metric, kind)
        report.epochs.append(entry)

    report.wall_clock = time.perf_counter() - start
    if test is not None:
        report.final = _final_eval(student, aligner, test, test_reps, cfg.eval_metric, kind)
        report.final["student_test_task_loss"] = L.task_loss(student.graph(test).logits, test.labels, kind).item()
    return TrainResult(report, aligner, student)


def train_baseline(
    train: ExampleBatch,
    cfg: TrainConfig,
    test: ExampleBatch | None = None,
    on_step: StepHook | None = None,
) -> TrainResult:
    """Undistilled student: plain task loss, same seeds and batch order as :func:`train_joint`."""
    cfg.validate()
    kind = cfg.loss.task_kind
    student = init_student(train, cfg)
    s_opt = OptimState(lr=cfg.student_lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 3])
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(train))
        total, batches = 0.0, 0
        for lo in range(0, len(train), cfg.batch_size):
            batch = train.subset(perm[lo : lo + cfg.batch_size])
            s_leaves = student.leaves()
            loss = L.task_loss(student.graph(batch, s_leaves).logits, batch.labels, kind)
            student, defect = _step(student, _grads(s_leaves, loss), s_opt)
            report.max_defect["student"] = max(report.max_defect["student"], defect)
            report.steps += 1
            if on_step is not None:
                on_step(report.steps, None, student)
            total += loss.item()
            batches += 1
        entry = {"epoch": epoch, "L_s": total / batches, "task": total / batches}
        if test is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            _attach_eval(entry, student, None, test, None, cfg.eval_metric, kind)
        report.epochs.append(entry)
    report.wall_clock = time.perf_counter() - start
    if test is not None:
        report.final = _final_eval(student, None, test, None, cfg.eval_metric, kind)
        report.final["student_test_task_loss"] = L.task_loss(student.graph(test).logits, test.labels, kind).item()
    return TrainResult(report, None, student)


def _log_terms(l_t, a_terms, l_s, s_terms, cfg: L.LossConfig) -> dict[str, float]:
    row = {
        "L_t": l_t.item(),
        "L_s": l_s.item(),
        "task_ts": a_terms["task"].item(),
        "aux_t": a_terms["aux"].item() if "aux" in a_terms else 0.0,
        "task": s_terms["task"].item(),
        "soft": s_terms["soft"].item(),
        "manifold": s_terms["manifold"].item() if "manifold" in s_terms else 0.0,
    }
    aux = L.aux_student(s_terms, cfg)
    row["aux_s"] = aux.item() if aux is not None else 0.0
    return row


def resum_residuals(entry: dict, cfg: L.LossConfig) -> tuple[float, float]:
    """How far the logged components are from re-summing to ``L_t`` and ``L_s``."""
    a = cfg.alpha
    l_t = entry["task_ts"] + cfg.gamma * entry["aux_t"]
    l_s = (1 - a) * entry["task"] + a * entry["soft"] + cfg.gamma * entry["aux_s"] + cfg.beta * entry["manifold"]
    return abs(l_t - entry["L_t"]), abs(l_s - entry["L_s"])


def _attach_eval(entry, student, aligner, test, test_reps, metric, kind) -> None:
    s = evaluate(student, test, metric=metric, kind=kind)
    entry["eval_main"] = s["main"]
    entry["eval_aux"] = s.get("aux", float("nan"))
    if aligner is not None and test_reps is not None:
        a = evaluate(aligner, test_reps.rows, test.labels, metric=metric, kind=kind)
        entry["aligner_main"] = a["main"]
        entry["aligner_aux"] = a.get("aux", float("nan"))


def _final_eval(student, aligner, test, test_reps, metric, kind) -> dict:
    s = evaluate(student, test, metric=metric, kind=kind)
    out = {"student_main": s["main"], "student_aux": s.get("aux")}
    if aligner is not None and test_reps is not None:
        a = evaluate(aligner, test_reps.rows, test.labels, metric=metric, kind=kind)
        out["aligner_main"] = a["main"]
        out["aligner_aux"] = a.get("aux")
    return out
