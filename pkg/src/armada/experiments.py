"""Ablation experiments built on the training loop.

A :class:`Study` fixes one synthetic task and teacher, then runs distilled
and undistilled students across training seeds.  Every experiment first
lists the runs it needs as :class:`RunSpec` values and hands them to
:meth:`Study.run_many`, which may fan them out over worker processes.
Undistilled runs are cached per seed since every comparison reuses them.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import analysis
from . import losses as L
from .data import TaskConfig, make_task
from .errors import ConfigError, NumericError
from .teacher import (
    RepresentationTable,
    SynthTeacherConfig,
    inject_noise,
    load_representations,
    shuffle_assignments,
    synth_teacher_generate,
)
from .train import TrainConfig, TrainReport, TrainResult, train_baseline, train_joint


@dataclass
class SweepGrid:
    alpha: list[float] = field(default_factory=lambda: [0.0, 0.5])
    beta: list[float] = field(default_factory=lambda: [0.0, 1.0])
    gamma: list[float] = field(default_factory=lambda: [0.0, 1.0])
    variant: list[str] = field(default_factory=lambda: list(L.MANIFOLD_VARIANTS))
    sigma: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    teacher: SynthTeacherConfig = field(default_factory=SynthTeacherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    teacher_file: str | None = None
    teacher_test_file: str | None = None

    def validate(self) -> None:
        self.task.validate()
        self.teacher.validate()
        self.train.validate()
        if self.train.loss.task_kind != self.task.task_kind:
            raise ConfigError(
                f"loss task kind {self.train.loss.task_kind!r} does not match task kind {self.task.task_kind!r}"
            )
        for name in ("alpha", "beta", "gamma", "variant", "sigma", "seeds"):
            if not getattr(self.sweep, name):
                raise ConfigError(f"sweep.{name}: grid must not be empty")
        for v in self.sweep.variant:
            if v not in L.MANIFOLD_VARIANTS:
                raise ConfigError(f"sweep.variant: unknown manifold variant {v!r}")
        for s in self.sweep.sigma:
            if s < 0:
                raise ConfigError(f"sweep.sigma: noise levels must be non-negative, got {s}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunSpec:
    """One training run: ``kind`` is ``"baseline"`` or ``"distilled"``."""

    kind: str
    seed: int
    label: str = field(default="", compare=False)
    sigma: float = 0.0
    shuffle: bool = False
    overrides: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def distilled(cls, seed: int, label: str = "armada", sigma: float = 0.0, shuffle: bool = False, **overrides):
        return cls("distilled", seed, label, float(sigma), shuffle, tuple(sorted(overrides.items())))

    @classmethod
    def baseline(cls, seed: int):
        return cls("baseline", seed, "baseline")

    @property
    def params(self) -> dict:
        out: dict[str, Any] = dict(self.overrides)
        if self.kind == "distilled":
            out.update(sigma=self.sigma, shuffle=self.shuffle)
        return out

    @property
    def dirname(self) -> str:
        parts = [self.label] + [f"{k}={_fmt(v)}" for k, v in self.overrides]
        if self.sigma:
            parts.append(f"sigma={_fmt(self.sigma)}")
        if self.shuffle:
            parts.append("shuffled")
        return "_".join(parts) + f"_seed{self.seed}"


def _fmt(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


@dataclass
class RunRecord:
    """Final numbers of one training run, its curves and final parameters."""

    spec: RunSpec
    final: dict
    report: TrainReport
    result: TrainResult | None = None

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def label(self) -> str:
        return self.spec.label

    def row(self) -> dict:
        return {"run": self.spec.dirname, "label": self.label, "seed": self.seed, **self.spec.params, **self.final}


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def welch(a, b) -> dict:
    """One-sided Welch test of ``mean(a) > mean(b)`` as a plain dict (NaN when degenerate)."""
    try:
        r = analysis.welch_t_one_sided(a, b)
    except Exception:
        return {"t": float("nan"), "p": float("nan"), "df": float("nan")}
    return {"t": r.statistic, "p": r.p_value, "df": r.df}


# worker-process state for parallel execution
_WORKER: Study | None = None


def _worker_init(cfg: ExperimentConfig) -> None:
    global _WORKER
    _WORKER = Study(cfg)


def _worker_run(spec: RunSpec) -> RunRecord:
    return _WORKER.execute(spec)


class Study:
    """One task + teacher, many training runs."""

    def __init__(self, cfg: ExperimentConfig, jobs: int = 1):
        cfg.validate()
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.train_set, self.test_set = make_task(cfg.task)
        self.reps_train, self.reps_test = self._teacher()
        self._cache: dict[RunSpec, RunRecord] = {}
        self._log: dict[tuple[RunSpec, str], RunRecord] = {}

    def _teacher(self) -> tuple[RepresentationTable, RepresentationTable | None]:
        if self.cfg.teacher_file:
            reps = load_representations(self.cfg.teacher_file)
            test = load_representations(self.cfg.teacher_test_file) if self.cfg.teacher_test_file else None
            return reps, test
        train, test = synth_teacher_generate([self.train_set, self.test_set], self.cfg.teacher)
        return train, test

    def seeds(self) -> list[int]:
        return list(self.cfg.sweep.seeds)

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        base = self.cfg.train
        loss_keys = {k: v for k, v in overrides.items() if hasattr(base.loss, k)}
        flags = {k: v for k, v in overrides.items() if not hasattr(base.loss, k)}
        return replace(base, seed=seed, loss=replace(base.loss, **loss_keys), **flags)

    # ------------------------------------------------------------------
    # execution

    def execute(self, spec: RunSpec) -> RunRecord:
        """Run one spec in this process (no caching)."""
        if spec.kind == "baseline":
            cfg = self.train_config(spec.seed, alpha=0.0, beta=0.0, gamma=0.0)
            res = train_baseline(self.train_set, cfg, self.test_set)
            return RunRecord(spec, res.report.final, res.report, res)
        reps, test_reps = self.reps_train, self.reps_test
        if spec.sigma:
            reps = inject_noise(reps, spec.sigma, [spec.seed, 0x5E])
            if test_reps is not None:
                test_reps = inject_noise(test_reps, spec.sigma, [spec.seed, 0x5F])
        if spec.shuffle:
            reps = shuffle_assignments(reps, [spec.seed, 0x5A])
        cfg = self.train_config(spec.seed, **dict(spec.overrides))
        res = train_joint(self.train_set, reps, cfg, self.test_set, test_reps)
        return RunRecord(spec, res.report.final, res.report, res)

    def run_many(self, specs: list[RunSpec]) -> list[RunRecord]:
        todo = list(dict.fromkeys(s for s in specs if s not in self._cache))
        if self.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(self.jobs, initializer=_worker_init, initargs=(self.cfg,)) as pool:
                for spec, rec in zip(todo, pool.map(_worker_run, todo)):
                    self._cache[spec] = rec
        else:
            for spec in todo:
                self._cache[spec] = self.execute(spec)
        # identical runs share one record; each caller keeps its own label
        out = [replace(self._cache[s], spec=s) for s in specs]
        for rec in out:
            self._log.setdefault((rec.spec, rec.label), rec)
        return out

    def run(self, spec: RunSpec) -> RunRecord:
        return self.run_many([spec])[0]

    def baseline(self, seed: int) -> RunRecord:
        return self.run(RunSpec.baseline(seed))

    def distilled(self, seed: int, **kwargs) -> RunRecord:
        return self.run(RunSpec.distilled(seed, **kwargs))

    def records(self) -> list[RunRecord]:
        """Every run requested so far, once per distinct label, in request order."""
        return list(self._log.values())

    # ------------------------------------------------------------------
    # comparisons

    def with_baselines(self, specs: list[RunSpec]) -> list[RunRecord]:
        """Run ``specs`` together with the baselines of their seeds."""
        seeds = sorted({s.seed for s in specs})
        return self.run_many(specs + [RunSpec.baseline(s) for s in seeds])[: len(specs)]

    def gains(self, runs: list[RunRecord], key: str = "student_main") -> np.ndarray:
        return np.array([r.final[key] - self.baseline(r.seed).final[key] for r in runs])

    def compare_to_baseline(self, runs: list[RunRecord]) -> dict:
        acc = [r.final["student_main"] for r in runs]
        base = [self.baseline(r.seed).final["student_main"] for r in runs]
        mean, se = _mean_se(self.gains(runs))
        return {
            "distilled_mean": float(np.mean(acc)),
            "distilled_std": float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0,
            "baseline_mean": float(np.mean(base)),
            "baseline_std": float(np.std(base, ddof=1)) if len(base) > 1 else 0.0,
            "gain_mean": mean,
            "gain_se": se,
            "welch": welch(acc, base),
        }


# ---------------------------------------------------------------------------
# named experiments; each returns a JSON-ready summary


def train_one(study: Study) -> dict:
    """A single distilled run at the configured seed, with its baseline."""
    seed = study.cfg.train.seed
    rec, base = study.run_many([RunSpec.distilled(seed), RunSpec.baseline(seed)])
    return {"seed": seed, "distilled": rec.final, "baseline": base.final,
            "gain": rec.final["student_main"] - base.final["student_main"],
            "capacity_layers": rec.report.capacity_layers, "max_defect": rec.report.max_defect}


def distillation_gain(study: Study) -> dict:
    runs = study.with_baselines([RunSpec.distilled(s) for s in study.seeds()])
    return study.compare_to_baseline(runs)


def shuffle_ablation(study: Study, variants=None) -> dict:
    """Aligned vs shuffled teacher rows, per manifold variant."""
    variants = list(variants or study.cfg.sweep.variant)
    seeds = study.seeds()
    specs = [RunSpec.distilled(s, label="aligned", manifold_variant=v) for v in variants for s in seeds]
    specs += [RunSpec.distilled(s, label="shuffled", shuffle=True, manifold_variant=v) for v in variants for s in seeds]
    runs = study.with_baselines(specs)
    k = len(seeds)
    out: dict[str, Any] = {"variants": {}}
    for i, v in enumerate(variants):
        aligned = runs[i * k:(i + 1) * k]
        shuffled = runs[(len(variants) + i) * k:(len(variants) + i + 1) * k]
        ga, gs = study.gains(aligned), study.gains(shuffled)
        out["variants"][v] = {
            "aligned_gain": float(ga.mean()),
            "shuffled_gain": float(gs.mean()),
            "aligned": study.compare_to_baseline(aligned),
            "shuffled": study.compare_to_baseline(shuffled),
            "welch_aligned_gt_shuffled": welch(ga, gs),
        }
    out["default_variant"] = study.cfg.train.loss.manifold_variant
    out["ordering_holds_all"] = all(d["aligned_gain"] > d["shuffled_gain"] for d in out["variants"].values())
    return out


def monotone_with_tolerance(means, ses) -> bool:
    """Non-increasing sequence allowing at most one rise, no larger than the standard error there."""
    rises = [(i, means[i + 1] - means[i]) for i in range(len(means) - 1) if means[i + 1] > means[i]]
    if not rises:
        return True
    if len(rises) > 1:
        return False
    i, rise = rises[0]
    return rise <= max(ses[i], ses[i + 1])


def noise_sweep(study: Study) -> dict:
    """Teacher-input noise grid with sensitivity scores for aligner and student."""
    sigmas = [float(s) for s in study.cfg.sweep.sigma]
    seeds = study.seeds()
    specs = [RunSpec.distilled(s, label="noise", sigma=sg) for sg in sigmas for s in seeds]
    runs = study.with_baselines(specs)
    by_sigma = {sg: runs[i * len(seeds):(i + 1) * len(seeds)] for i, sg in enumerate(sigmas)}
    gain_mean, gain_se, student_acc, aligner_acc = [], [], [], []
    for sg in sigmas:
        m, se = _mean_se(study.gains(by_sigma[sg]))
        gain_mean.append(m)
        gain_se.append(se)
        student_acc.append(float(np.mean([r.final["student_main"] for r in by_sigma[sg]])))
        aligner_acc.append(float(np.mean([r.final.get("aligner_main", np.nan) for r in by_sigma[sg]])))
    per_seed = []
    multi = len(set(sigmas)) > 1
    for i, s in enumerate(seeds):
        stu = [by_sigma[sg][i].final["student_main"] for sg in sigmas]
        ali = [by_sigma[sg][i].final.get("aligner_main", np.nan) for sg in sigmas]
        per_seed.append({
            "seed": s,
            "student_sensitivity": analysis.sensitivity_score(stu, sigmas) if multi else None,
            "aligner_sensitivity": analysis.sensitivity_score(ali, sigmas) if multi else None,
        })
    return {
        "sigma": sigmas,
        "gain_mean": gain_mean,
        "gain_se": gain_se,
        "student_acc": student_acc,
        "aligner_acc": aligner_acc,
        "student_sensitivity": analysis.sensitivity_score(student_acc, sigmas) if multi else None,
        "aligner_sensitivity": analysis.sensitivity_score(aligner_acc, sigmas) if multi else None,
        "per_seed": per_seed,
        "monotone_up_to_one_inversion": monotone_with_tolerance(gain_mean, gain_se),
    }


def frozen_aligner(study: Study) -> dict:
    seeds = study.seeds()
    specs = [RunSpec.distilled(s, label="trained") for s in seeds]
    specs += [RunSpec.distilled(s, label="frozen", frozen_aligner=True) for s in seeds]
    runs = study.with_baselines(specs)
    trained, frozen = runs[: len(seeds)], runs[len(seeds):]
    acc_t = [r.final["student_main"] for r in trained]
    acc_f = [r.final["student_main"] for r in frozen]
    loss_t = [r.final["student_test_task_loss"] for r in trained]
    loss_f = [r.final["student_test_task_loss"] for r in frozen]
    return {
        "trained_acc": float(np.mean(acc_t)),
        "frozen_acc": float(np.mean(acc_f)),
        "baseline_acc": float(np.mean([study.baseline(s).final["student_main"] for s in seeds])),
        "trained_task_loss": float(np.mean(loss_t)),
        "frozen_task_loss": float(np.mean(loss_f)),
        "welch_acc_trained_gt_frozen": welch(acc_t, acc_f),
        "welch_loss_frozen_gt_trained": welch(loss_f, loss_t),
    }


def capacity_ablation(study: Study) -> dict:
    seeds = study.seeds()
    specs = [RunSpec.distilled(s, label="full") for s in seeds]
    specs += [RunSpec.distilled(s, label="capacity", capacity_ablation=True) for s in seeds]
    runs = study.with_baselines(specs)
    full, matched = runs[: len(seeds)], runs[len(seeds):]
    acc_full = [r.final["student_main"] for r in full]
    acc_cap = [r.final["student_main"] for r in matched]
    return {
        "full_acc": float(np.mean(acc_full)),
        "capacity_acc": float(np.mean(acc_cap)),
        "baseline_acc": float(np.mean([study.baseline(s).final["student_main"] for s in seeds])),
        "extra_layers": matched[0].report.capacity_layers,
        "welch_full_gt_capacity": welch(acc_full, acc_cap),
    }


def grid_points(grid: SweepGrid) -> list[dict]:
    return [
        {"alpha": float(a), "beta": float(b), "gamma": float(g), "manifold_variant": v}
        for a, b, g, v in itertools.product(grid.alpha, grid.beta, grid.gamma, grid.variant)
    ]


def sweep(study: Study, points: list[dict] | None = None) -> dict:
    """Hyperparameter grid x seeds; one summary entry per grid point."""
    points = grid_points(study.cfg.sweep) if points is None else points
    seeds = study.seeds()
    specs = [RunSpec.distilled(s, label="sweep", **p) for p in points for s in seeds]
    runs = study.with_baselines(specs)
    table = []
    for i, p in enumerate(points):
        chunk = runs[i * len(seeds):(i + 1) * len(seeds)]
        table.append({**p, **study.compare_to_baseline(chunk),
                      "student_aux_mean": float(np.mean([r.final["student_aux"] for r in chunk]))})
    return {"points": table, "rows": len(specs)}


AUX_SWEEP_SIGMAS = (0.0, 1.0, 2.0, 5.0)


def aux_correlation(study: Study, points: list[dict] | None = None) -> dict:
    """Rank correlation of main- vs auxiliary-head student accuracy across sweep points.

    The default 12 points cross the three manifold variants with four noise levels.
    """
    if points is None:
        points = [{"manifold_variant": v, "sigma": sg} for v in L.MANIFOLD_VARIANTS for sg in AUX_SWEEP_SIGMAS]
    seeds = study.seeds()
    specs = []
    for p in points:
        p = dict(p)
        sg = p.pop("sigma", 0.0)
        specs += [RunSpec.distilled(s, label="aux", sigma=sg, **p) for s in seeds]
    runs = study.run_many(specs)
    main, aux = [], []
    for i in range(len(points)):
        chunk = runs[i * len(seeds):(i + 1) * len(seeds)]
        main.append(float(np.mean([r.final["student_main"] for r in chunk])))
        aux.append(float(np.mean([r.final["student_aux"] for r in chunk])))
    try:
        rho = analysis.spearman(main, aux)
    except NumericError:
        rho = float("nan")  # a constant head gives no ranking
    return {"points": points, "main": main, "aux": aux, "spearman": rho}


def cluster_analysis(study: Study) -> dict:
    """Cohesion of student hidden representations, distilled vs undistilled.

    Held-out examples are split by correctness: ``scenario_1`` holds those
    the distilled student gets right and the baseline gets wrong,
    ``scenario_2`` the reverse.  Silhouette uses the true classes as groups;
    purity uses k-means with one cluster per class.
    """
    seeds = study.seeds()
    runs = study.with_baselines([RunSpec.distilled(s, label="armada") for s in seeds])
    test = study.test_set
    y = np.asarray(test.classes)
    k = int(y.max()) + 1
    per_seed = []
    for rec in runs:
        base = study.baseline(rec.seed)
        h_d = rec.result.student.graph(test).hidden.value
        h_b = base.result.student.graph(test).hidden.value
        right_d = _predict(rec.result.student, test) == y
        right_b = _predict(base.result.student, test) == y
        subsets = {"all": np.ones_like(y, dtype=bool), "scenario_1": right_d & ~right_b,
                   "scenario_2": right_b & ~right_d}
        entry = {"seed": rec.seed}
        for name, mask in subsets.items():
            entry[name] = {"size": int(mask.sum())}
            for tag, h in (("distilled", h_d), ("baseline", h_b)):
                entry[name][tag] = _cohesion(h[mask], y[mask], k, rec.seed)
        per_seed.append(entry)
    summary = {}
    for name in ("all", "scenario_1", "scenario_2"):
        summary[name] = {}
        for tag in ("distilled", "baseline"):
            for metric in ("silhouette", "purity"):
                vals = [e[name][tag][metric] for e in per_seed if e[name][tag][metric] is not None]
                summary[name][f"{tag}_{metric}"] = float(np.mean(vals)) if vals else None
    return {"summary": summary, "per_seed": per_seed}


def _predict(student, batch) -> np.ndarray:
    return student.graph(batch).logits.value.argmax(axis=1)


def _cohesion(h: np.ndarray, y: np.ndarray, k: int, seed: int) -> dict:
    if len(y) < k or len(np.unique(y)) < 2:
        return {"silhouette": None, "purity": None}
    rep = analysis.cluster_report(h, y, k=k, seed=seed)
    return {"silhouette": rep.silhouette, "purity": rep.purity}


# ---------------------------------------------------------------------------
# audits that need no training


def prop1_audit(count: int = 1000, seed: int = 0) -> dict:
    """Random batch pairs checked against the manifold-loss inequalities."""
    rng = np.random.default_rng([seed, 0x9901])
    violations, worst_triangle, worst_amgm, skipped = [], np.inf, np.inf, 0
    for i in range(count):
        n = int(rng.integers(1, 17))
        m = int(rng.integers(2, 33))
        p_ts = rng.normal(size=(n, m)) * rng.uniform(0.1, 3.0)
        p_s = rng.normal(size=(n, m)) * rng.uniform(0.1, 3.0)
        rep = L.verify_prop1(p_ts, p_s)
        worst_triangle = min(worst_triangle, rep.l_elementwise - rep.l_euclid)
        if rep.cosine_applicable:
            worst_amgm = min(worst_amgm, rep.l_euclid**2 - rep.bound_rhs)
        else:
            skipped += 1
        if not rep.holds:
            violations.append({"index": i, "n": n, "m": m, **asdict(rep)})
    return {
        "count": count,
        "violations": len(violations),
        "min_triangle_slack": float(worst_triangle),
        "min_amgm_slack": float(worst_amgm),
        "cosine_inapplicable": skipped,
        "details": violations[:20],
    }


def gradient_audit(instances: int = 20, seed: int = 0, step: float = 1e-5, tolerance: float = 1e-4) -> dict:
    """Finite-difference checks of every loss and of both combined objectives."""
    from .gradaudit import run_gradient_audit

    return run_gradient_audit(instances=instances, seed=seed, step=step, tolerance=tolerance)
