"""Finite-difference audit of every objective the trainer differentiates.

Each case draws small random models and batches, then compares the analytic
gradient of one scalar loss with central differences over all of its inputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import losses as L
from . import tensor as T
from .data import ExampleBatch
from .models import AlignerParams, StudentParams, orthonormal_init

GRID = (0.0, 0.5, 1.0)

# small shapes keep the coordinate-wise differences cheap
N, D_IN, D_T, HID, WIDTH, M, C = 5, 4, 5, 4, 4, 3, 3


@dataclass
class CaseResult:
    name: str
    instances: int
    worst: float
    failures: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _rand_params(params, rng: np.random.Generator):
    """Re-draw every tensor at unit-ish scale so gradients are not vanishingly small."""
    out = {}
    for k, v in params.tensors.items():
        if k == "proj.P":
            out[k] = orthonormal_init(*v.shape, rng.integers(2**63))
        else:
            out[k] = rng.normal(scale=0.7, size=v.shape)
    return type(params)(out)


def _instance(rng: np.random.Generator, kind: str):
    x = rng.normal(size=(N, D_IN))
    labels = rng.integers(0, C, size=N) if kind == "classification" else rng.normal(size=N)
    c = C if kind == "classification" else 1
    batch = ExampleBatch(labels=labels, features=x)
    reps = rng.normal(size=(N, D_T))
    student = _rand_params(StudentParams.init(D_IN, WIDTH, M, c, 0), rng)
    aligner = _rand_params(AlignerParams.init(D_T, HID, M, c, 0), rng)
    return batch, reps, student, aligner


def _case_functions(rng: np.random.Generator) -> dict[str, Callable[[], tuple[Callable, Mapping]]]:
    """name -> factory producing (loss_fn, params) for one random instance."""

    def task(kind):
        def make():
            c = C if kind == "classification" else 1
            labels = rng.integers(0, c, size=N) if kind == "classification" else rng.normal(size=N)
            return (lambda p: L.task_loss(p["o"], labels, kind)), {"o": rng.normal(size=(N, c))}
        return make

    def soft(kind):
        def make():
            c = C if kind == "classification" else 1
            o_ts = rng.normal(scale=2.0, size=(N, c))
            tau = float(rng.choice([1.0, 2.0, 5.0]))
            return (lambda p: L.logit_match_loss(o_ts, p["o"], tau, kind)), {"o": rng.normal(scale=2.0, size=(N, c))}
        return make

    def manifold(variant, normalize=True):
        def make():
            p_ts = rng.normal(size=(N, M)) + 0.5
            return (lambda p: L.manifold_loss(p_ts, p["p"], variant, normalize)), {"p": rng.normal(size=(N, M))}
        return make

    def aligner_objective(gamma, kind="classification"):
        def make():
            batch, reps, _, aligner = _instance(rng, kind)
            cfg = L.LossConfig(gamma=gamma, task_kind=kind)
            return (lambda p: L.aligner_total_loss(aligner.graph(reps, p), batch.labels, cfg)), aligner.tensors
        return make

    def student_objective(alpha, beta, gamma, variant="euclid", kind="classification"):
        def make():
            batch, reps, student, aligner = _instance(rng, kind)
            cfg = L.LossConfig(alpha=alpha, beta=beta, gamma=gamma, manifold_variant=variant, task_kind=kind)
            a_out = aligner.graph(reps).detached()
            return (lambda p: L.student_total_loss(student.graph(batch, p), a_out, batch.labels, cfg)), student.tensors
        return make

    cases: dict[str, Callable] = {}
    for kind in L.TASK_KINDS:
        cases[f"task[{kind}]"] = task(kind)
        cases[f"logit_match[{kind}]"] = soft(kind)
    for v in L.MANIFOLD_VARIANTS:
        cases[f"manifold[{v}]"] = manifold(v)
    cases["manifold[cosine,raw]"] = manifold("cosine", normalize=False)
    for g in GRID:
        cases[f"L_t[gamma={g:g}]"] = aligner_objective(g)
    cases["L_t[regression]"] = aligner_objective(1.0, "regression")
    for a, b, g in itertools.product(GRID, GRID, GRID):
        cases[f"L_s[alpha={a:g},beta={b:g},gamma={g:g}]"] = student_objective(a, b, g)
    for v in ("cosine", "elementwise"):
        cases[f"L_s[defaults,{v}]"] = student_objective(0.5, 1.0, 1.0, v)
    cases["L_s[defaults,regression]"] = student_objective(0.5, 1.0, 1.0, "euclid", "regression")
    return cases


def run_gradient_audit(
    instances: int = 20,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    only: Callable[[str], bool] | None = None,
) -> dict:
    rng = np.random.default_rng([seed, 0x6A])
    results = []
    for name, make in _case_functions(rng).items():
        if only is not None and not only(name):
            continue
        res = CaseResult(name, instances, 0.0)
        for i in range(instances):
            fn, params = make()
            rep = T.grad_check(fn, params, step=step, tolerance=tolerance)
            res.worst = max(res.worst, rep.worst)
            if not rep.passed:
                res.failures.append(i)
        results.append(res)
    return {
        "cases": [
            {"name": r.name, "instances": r.instances, "max_rel_error": r.worst, "passed": r.passed,
             "failed_instances": r.failures}
            for r in results
        ],
        "tolerance": tolerance,
        "step": step,
        "passed": all(r.passed for r in results),
        "worst": max((r.worst for r in results), default=0.0),
    }


def detached_aligner_gets_no_gradient(seed: int = 0) -> bool:
    """Student objective backward leaves aligner parameters untouched."""
    rng = np.random.default_rng(seed)
    batch, reps, student, aligner = _instance(rng, "classification")
    a_leaves = aligner.leaves()
    a_out = aligner.graph(reps, a_leaves).detached()
    loss = L.student_total_loss(student.graph(batch, student.leaves()), a_out, batch.labels, L.LossConfig())
    grads = T.backward(loss)
    return not any(node in grads for node in a_leaves.values())

