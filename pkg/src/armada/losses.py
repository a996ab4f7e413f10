"""Distillation objectives: task, logit matching, manifold and auxiliary losses.

Aligner-side quantities entering a student loss are always detached, so a
student backward pass never reaches aligner parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError, NumericError, ParameterError
from .models import ForwardOutputs
from .tensor import Node

MANIFOLD_VARIANTS = ("cosine", "euclid", "elementwise")
TASK_KINDS = ("classification", "regression")


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 5.0
    manifold_variant: str = "euclid"
    task_kind: str = "classification"
    normalize_cosine_means: bool = True
    aux_soft: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise ParameterError("beta and gamma must be non-negative")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.manifold_variant not in MANIFOLD_VARIANTS:
            raise ParameterError(f"unknown manifold variant {self.manifold_variant!r}")
        if self.task_kind not in TASK_KINDS:
            raise ParameterError(f"unknown task kind {self.task_kind!r}")


def _node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def task_loss(logits, labels, kind: str = "classification") -> Node:
    """Batch-mean cross-entropy (classification) or squared error (regression)."""
    logits = _node(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit rows")
    if kind == "classification":
        if labels.min() < 0 or labels.max() >= c:
            raise DataError(f"label {int(labels.max())} out of range for {c} classes")
        probs = T.softmax_temperature(logits, 1.0)
        return T.mean(T.cross_entropy(probs, labels))
    if kind == "regression":
        if c != 1:
            raise DimensionError(f"regression expects one output column, got {c}")
        return T.mean(T.squared_error(logits, Node(labels.reshape(n, 1))))
    raise ParameterError(f"unknown task kind {kind!r}")


def _soft(logits: Node, tau: float, kind: str) -> Node:
    if kind == "classification":
        return T.softmax_temperature(logits, tau)
    return T.scale(logits, 1.0 / tau)


def logit_match_loss(o_ts, o_s, tau: float, kind: str = "classification") -> Node:
    """Mean over rows of ``||phi(o_ts/tau) - phi(o_s/tau)||_2``; ``o_ts`` is constant."""
    o_ts, o_s = T.const(o_ts), _node(o_s)
    if o_ts.shape != o_s.shape:
        raise DimensionError(f"logit shapes differ: {o_ts.shape} vs {o_s.shape}")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    diff = T.sub(_soft(o_ts, tau, kind), _soft(o_s, tau, kind))
    return T.mean(T.row_norms(diff))


def _inner(a: Node, b: Node) -> Node:
    return T.total(T.mul(a, b))


def manifold_loss(p_ts, p_s, variant: str = "cosine", normalize_cosine_means: bool = True) -> Node:
    """Distance between aligner and student projections; ``p_ts`` is constant."""
    p_ts, p_s = T.const(p_ts), _node(p_s)
    if p_ts.shape != p_s.shape:
        raise DimensionError(f"projection shapes differ: {p_ts.shape} vs {p_s.shape}")
    if p_ts.shape[0] < 1:
        raise DimensionError("empty projection batch")
    if variant == "elementwise":
        return T.mean(T.row_norms(T.sub(p_ts, p_s)))
    m_ts, m_s = T.col_mean(p_ts), T.col_mean(p_s)
    if variant == "euclid":
        return T.row_norms(T.sub(m_ts, m_s))
    if variant == "cosine":
        if normalize_cosine_means:
            if not (np.any(m_ts.value) and np.any(m_s.value)):
                raise NumericError("zero batch mean: cosine loss undefined for this batch")
            m_ts, m_s = T.normalize_rows(m_ts), T.normalize_rows(m_s)
        return T.sub(Node(np.ones((1, 1))), _inner(m_ts, m_s))
    raise ParameterError(f"unknown manifold variant {variant!r}")


def aligner_loss_terms(out: ForwardOutputs, labels, cfg: LossConfig) -> dict[str, Node]:
    terms = {"task": task_loss(out.logits, labels, cfg.task_kind)}
    if out.aux_logits is not None:
        terms["aux"] = task_loss(out.aux_logits, labels, cfg.task_kind)
    return terms


def combine_aligner(terms: dict[str, Node], cfg: LossConfig) -> Node:
    total = terms["task"]
    if "aux" in terms:
        total = T.add(total, T.scale(terms["aux"], cfg.gamma))
    return total


def aligner_total_loss(out: ForwardOutputs, labels, cfg: LossConfig) -> Node:
    """``task(main head) + gamma * task(aux head)``."""
    return combine_aligner(aligner_loss_terms(out, labels, cfg), cfg)


def student_loss_terms(
    s_out: ForwardOutputs, a_out: ForwardOutputs, labels, cfg: LossConfig
) -> dict[str, Node]:
    """Unweighted pieces of the student objective.

    Keys: ``task``, ``soft`` (logit match), ``aux_task``, ``aux_soft`` and
    ``manifold``.  Pieces the configuration cannot produce are absent.
    """
    if s_out.logits.shape[0] != a_out.logits.shape[0]:
        raise DimensionError("student and aligner batches differ in size")
    kind = cfg.task_kind
    terms = {
        "task": task_loss(s_out.logits, labels, kind),
        "soft": logit_match_loss(a_out.logits, s_out.logits, cfg.tau, kind),
    }
    if s_out.aux_logits is not None:
        terms["aux_task"] = task_loss(s_out.aux_logits, labels, kind)
        if cfg.aux_soft and a_out.aux_logits is not None:
            terms["aux_soft"] = logit_match_loss(a_out.aux_logits, s_out.aux_logits, cfg.tau, kind)
    if s_out.projection is not None and a_out.projection is not None:
        terms["manifold"] = manifold_loss(
            a_out.projection, s_out.projection, cfg.manifold_variant, cfg.normalize_cosine_means
        )
    return terms


def aux_student(terms: dict[str, Node], cfg: LossConfig) -> Node | None:
    """The auxiliary student loss, shaped like the main output loss."""
    if "aux_task" not in terms:
        return None
    aux = T.scale(terms["aux_task"], 1.0 - cfg.alpha)
    if "aux_soft" in terms:
        aux = T.add(aux, T.scale(terms["aux_soft"], cfg.alpha))
    return aux


def combine_student(terms: dict[str, Node], cfg: LossConfig) -> Node:
    total = T.add(T.scale(terms["task"], 1.0 - cfg.alpha), T.scale(terms["soft"], cfg.alpha))
    aux = aux_student(terms, cfg)
    if aux is not None:
        total = T.add(total, T.scale(aux, cfg.gamma))
    if "manifold" in terms:
        total = T.add(total, T.scale(terms["manifold"], cfg.beta))
    return total


def student_total_loss(s_out: ForwardOutputs, a_out: ForwardOutputs, labels, cfg: LossConfig) -> Node:
    return combine_student(student_loss_terms(s_out, a_out, labels, cfg), cfg)


# ---------------------------------------------------------------------------
# ordering between the three manifold losses


@dataclass
class Prop1Report:
    l_elementwise: float
    l_euclid: float
    l_cosine: float | None
    bound_rhs: float | None
    holds_triangle: bool
    holds_amgm: bool | None

    @property
    def cosine_applicable(self) -> bool:
        return self.l_cosine is not None

    @property
    def holds(self) -> bool:
        return self.holds_triangle and self.holds_amgm is not False


def verify_prop1(p_ts, p_s, slack: float = 1e-9) -> Prop1Report:
    """Check ``elementwise >= euclid`` and ``euclid^2 >= 2|m_ts||m_s| cosine``."""
    p_ts, p_s = T.as_matrix(p_ts), T.as_matrix(p_s)
    ew = manifold_loss(p_ts, p_s, "elementwise").item()
    eu = manifold_loss(p_ts, p_s, "euclid").item()
    try:
        cos = manifold_loss(p_ts, p_s, "cosine", normalize_cosine_means=True).item()
    except NumericError:
        return Prop1Report(ew, eu, None, None, bool(ew >= eu - slack), None)
    rhs = 2.0 * np.linalg.norm(p_ts.mean(axis=0)) * np.linalg.norm(p_s.mean(axis=0)) * cos
    return Prop1Report(ew, eu, cos, float(rhs), bool(ew >= eu - slack), bool(eu * eu >= rhs - slack))
