from __future__ import annotations

import numpy as np
import pytest

from armada import losses as L
from armada.data import ExampleBatch, TaskConfig, make_task
from armada.errors import ContractError, DimensionError, NumericError, ParameterError
from armada.models import StudentParams, orthonormality_defect
from armada.teacher import SynthTeacherConfig, synth_teacher_generate
from armada.train import (
    CURVE_COLUMNS,
    OptimState,
    TrainConfig,
    adamw_step,
    evaluate,
    resum_residuals,
    train_baseline,
    train_joint,
)


def _setup(n_train=64, n_test=100, **task):
    tr, te = make_task(TaskConfig(n_train=n_train, n_test=n_test, input_dim=8, **task))
    reps, test_reps = synth_teacher_generate([tr, te], SynthTeacherConfig(d_t=6))
    return tr, te, reps, test_reps


def _cfg(**kw):
    loss = L.LossConfig(**kw.pop("loss", {}))
    base = dict(epochs=2, batch_size=16, hidden=8, width=8, manifold=4)
    base.update(kw)
    return TrainConfig(loss=loss, **base)


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_first_step_moves_by_lr():
    st = OptimState(lr=0.1)
    out = adamw_step({"w": np.array([[1.0]])}, {"w": np.array([[0.5]])}, st)
    assert out["w"][0, 0] == pytest.approx(0.9, abs=1e-7)
    assert st.step == 1


def test_adamw_weight_decay_only():
    st = OptimState(lr=0.1, weight_decay=0.1)
    out = adamw_step({"w": np.array([[1.0]])}, {"w": np.array([[0.0]])}, st)
    assert out["w"][0, 0] == pytest.approx(0.99, abs=1e-12)


def test_adamw_zero_gradient_keeps_parameter():
    out = adamw_step({"w": np.array([[2.0, -1.0]])}, {"w": np.zeros((1, 2))}, OptimState())
    assert np.array_equal(out["w"], [[2.0, -1.0]])


def test_adamw_second_step_matches_hand_recursion():
    st = OptimState(lr=0.01)
    p = {"w": np.array([[1.0]])}
    p = adamw_step(p, {"w": np.array([[1.0]])}, st)
    p = adamw_step(p, {"w": np.array([[-1.0]])}, st)
    m = 0.9 * 0.1 + 0.1 * -1.0
    v = 0.999 * 0.001 + 0.001
    first = 1.0 - 0.01 * 1.0 / (1.0 + 1e-8)
    want = first - 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p["w"][0, 0] == pytest.approx(want, abs=1e-14)


def test_adamw_rejects_bad_gradients():
    with pytest.raises(NumericError, match="'w'"):
        adamw_step({"w": np.zeros((1, 1))}, {"w": np.array([[np.inf]])}, OptimState())
    with pytest.raises(DimensionError):
        adamw_step({"w": np.zeros((1, 1))}, {"w": np.zeros((2, 1))}, OptimState())


# ---------------------------------------------------------------------------
# training loops


def test_zero_weights_reduce_to_baseline_bitwise():
    tr, te, reps, test_reps = _setup()
    cfg = _cfg(loss={"alpha": 0.0, "beta": 0.0, "gamma": 0.0}, seed=3)
    joint = train_joint(tr, reps, cfg, te, test_reps)
    base = train_baseline(tr, cfg, te)
    assert joint.student.equals(base.student)
    assert joint.report.final["student_main"] == base.report.final["student_main"]


def test_frozen_aligner_never_changes():
    tr, te, reps, test_reps = _setup()
    cfg = _cfg(frozen_aligner=True, seed=1)
    seen = []
    res = train_joint(tr, reps, cfg, on_step=lambda i, a, s: seen.append(a))
    first = seen[0]
    assert all(a.equals(first) for a in seen) and res.aligner.equals(first)


def test_projections_stay_orthonormal_every_step():
    tr, te, reps, test_reps = _setup()
    worst = []

    def check(i, aligner, student):
        worst.append(max(orthonormality_defect(aligner["proj.P"]), orthonormality_defect(student["proj.P"])))

    res = train_joint(tr, reps, _cfg(epochs=3), on_step=check)
    assert len(worst) == res.report.steps == 3 * 4
    assert max(worst) <= 1e-6
    assert max(res.report.max_defect.values()) <= 1e-6


def test_training_is_deterministic():
    tr, te, reps, test_reps = _setup()
    a = train_joint(tr, reps, _cfg(seed=5), te, test_reps)
    b = train_joint(tr, reps, _cfg(seed=5), te, test_reps)
    assert a.student.equals(b.student) and a.aligner.equals(b.aligner)
    assert a.report.final == b.report.final
    c = train_joint(tr, reps, _cfg(seed=6), te, test_reps)
    assert not a.student.equals(c.student)


@pytest.mark.parametrize("variant", L.MANIFOLD_VARIANTS)
def test_logged_components_resum(variant):
    tr, te, reps, test_reps = _setup()
    cfg = _cfg(loss={"manifold_variant": variant, "alpha": 0.3, "beta": 0.7, "gamma": 0.5})
    res = train_joint(tr, reps, cfg, te, test_reps)
    for entry in res.report.epochs:
        r_t, r_s = resum_residuals(entry, cfg.loss)
        assert r_t <= 1e-9 and r_s <= 1e-9
        assert set(CURVE_COLUMNS) <= set(entry)


def test_capacity_ablation_drops_extra_terms():
    tr, te, reps, test_reps = _setup()
    res = train_joint(tr, reps, _cfg(capacity_ablation=True), te, test_reps)
    assert res.report.capacity_layers >= 1
    assert all(e["manifold"] == 0.0 and e["aux_t"] == 0.0 for e in res.report.epochs)
    assert "proj.P" not in res.aligner.tensors


def test_report_final_fields(tmp_path):
    tr, te, reps, test_reps = _setup()
    res = train_joint(tr, reps, _cfg(), te, test_reps)
    for key in ("student_main", "student_aux", "aligner_main", "aligner_aux", "student_test_task_loss"):
        assert key in res.report.final
    res.report.write_json(tmp_path / "r.json")
    res.report.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == ",".join(CURVE_COLUMNS)


def test_regression_training_runs():
    tr, te, reps, test_reps = _setup(task_kind="regression")
    cfg = _cfg(loss={"task_kind": "regression"}, eval_metric="pearson")
    res = train_joint(tr, reps, cfg, te, test_reps)
    assert np.isfinite(res.report.final["student_main"])


def test_size_mismatch_is_contract_error():
    tr, te, reps, _ = _setup()
    with pytest.raises(ContractError):
        train_joint(tr.subset(range(10)), reps, _cfg())


def test_config_validation():
    with pytest.raises(ParameterError):
        _cfg(epochs=0).validate()
    with pytest.raises(ParameterError):
        _cfg(manifold=9).validate()


# ---------------------------------------------------------------------------
# evaluation


def _vector_student(d=2):
    s = StudentParams.init(d, 2, 2, 2, 0)
    t = dict(s.tensors)
    t["input.W"] = np.eye(d, 2)
    t["hidden.W"] = np.eye(2)
    t["hidden.b"] = np.zeros((1, 2))
    t["proj.P"] = np.eye(2)
    for head in ("head", "aux"):
        t[f"{head}.W"] = np.array([[1.0, -1.0], [-1.0, 1.0]]) * 50
        t[f"{head}.b"] = np.zeros((1, 2))
    return StudentParams(t)


def test_evaluate_perfect_margin():
    x = np.array([[3.0, 0.0], [0.0, 3.0], [4.0, 0.0]])
    batch = ExampleBatch(labels=np.array([0, 1, 0]), features=x)
    assert evaluate(_vector_student(), batch) == {"main": 1.0, "aux": 1.0}


def test_evaluate_constant_predictor():
    s = _vector_student()
    t = dict(s.tensors)
    t["head.W"] = np.zeros((2, 2))
    t["head.b"] = np.array([[1.0, 0.0]])
    batch = ExampleBatch(labels=np.array([0, 1, 0, 1]), features=np.ones((4, 2)))
    assert evaluate(StudentParams(t), batch)["main"] == 0.5
    assert evaluate(StudentParams(t), batch, metric="mcc")["main"] == 0.0


def test_evaluate_empty_split():
    with pytest.raises(ContractError):
        evaluate(_vector_student(), ExampleBatch(labels=np.zeros(0, int), features=np.zeros((0, 2))))
