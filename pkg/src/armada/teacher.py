"""Frozen teacher representations: synthetic generator, file I/O, perturbations."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import ExampleBatch
from .errors import ContractError, FormatError, ParameterError

MAGIC = b"ARMD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class RepresentationTable:
    """One frozen teacher vector per dataset example (row ``i`` <-> example ``i``)."""

    rows: np.ndarray
    provenance: dict[str, Any] = field(default_factory=lambda: {"kind": "unknown"})

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ContractError(f"representation table must be 2-D, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ContractError("representation table has non-finite entries")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d_t(self) -> int:
        return self.rows.shape[1]

    def take(self, idx) -> np.ndarray:
        return self.rows[np.asarray(idx)]

    def bit_equal(self, other: RepresentationTable) -> bool:
        return self.rows.shape == other.rows.shape and self.rows.tobytes() == other.rows.tobytes()


@dataclass
class SynthTeacherConfig:
    """Class-anchored synthetic teacher.

    ``rep = anchor_scale * anchor[class] + informativeness * G(x) + N(0, rep_noise^2)``
    where ``G`` is a fixed random linear map of the student inputs.
    """

    d_t: int = 64
    informativeness: float = 1.0
    anchor_scale: float = 10.0
    rep_noise: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.d_t < 1:
            raise ParameterError("d_t must be positive")
        if self.informativeness < 0 or self.rep_noise < 0:
            raise ParameterError("informativeness and rep_noise must be non-negative")

    def as_dict(self) -> dict[str, Any]:
        return dict(vars(self))


def synth_anchors(cfg: SynthTeacherConfig, classes: int) -> np.ndarray:
    """Unit-norm class anchors, ``classes x d_t``."""
    rng = np.random.default_rng([cfg.seed, 0xA7C])
    a = rng.normal(size=(classes, cfg.d_t))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _input_map(cfg: SynthTeacherConfig, input_dim: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0x6E])
    return rng.normal(size=(input_dim, cfg.d_t)) / np.sqrt(input_dim)


def synth_teacher_generate(dataset: ExampleBatch | Sequence[ExampleBatch], cfg: SynthTeacherConfig):
    """Build representation tables for one batch or for several splits.

    Anchors and the input map depend only on ``cfg.seed``; split ``k`` of a
    sequence draws its noise from its own stream, so a split's table does not
    depend on the other splits.
    """
    cfg.validate()
    if isinstance(dataset, ExampleBatch):
        return _generate(dataset, cfg, 0)
    return [_generate(b, cfg, k) for k, b in enumerate(dataset)]


def _generate(batch: ExampleBatch, cfg: SynthTeacherConfig, split: int) -> RepresentationTable:
    if len(batch) == 0:
        raise ParameterError("cannot generate teacher reps for an empty dataset")
    y = np.asarray(batch.classes)
    if np.issubdtype(y.dtype, np.integer):
        anchors = synth_anchors(cfg, int(y.max()) + 1)
        rows = cfg.anchor_scale * anchors[y]
    else:
        # regression: one anchor direction scaled by the target
        rows = cfg.anchor_scale * np.outer(y, synth_anchors(cfg, 1)[0])
    if cfg.informativeness:
        x = batch.dense_inputs()
        rows = rows + cfg.informativeness * (x @ _input_map(cfg, x.shape[1]))
    if cfg.rep_noise:
        rng = np.random.default_rng([cfg.seed, 0x2E7A, split])
        rows = rows + rng.normal(scale=cfg.rep_noise, size=rows.shape)
    return RepresentationTable(rows, {"kind": "synthetic", "params": cfg.as_dict(), "split": split})


def inject_noise(table: RepresentationTable, sigma: float, seed) -> RepresentationTable:
    """Add i.i.d. ``N(0, sigma^2)`` noise to every entry."""
    if sigma < 0:
        raise ParameterError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        rows = table.rows
    else:
        rows = table.rows + sigma * np.random.default_rng(seed).normal(size=table.rows.shape)
    prov = {"kind": "derived", "parent": table.provenance, "transform": "gaussian_noise",
            "sigma": float(sigma), "seed": _jsonable(seed)}
    return RepresentationTable(rows, prov)


def shuffle_assignments(table: RepresentationTable, seed) -> RepresentationTable:
    """Permute rows with a seeded uniform permutation (recorded in provenance)."""
    if table.n < 2:
        raise ParameterError("shuffling needs at least two rows")
    perm = np.random.default_rng(seed).permutation(table.n)
    prov = {"kind": "derived", "parent": table.provenance, "transform": "shuffle",
            "seed": _jsonable(seed), "permutation": perm.tolist()}
    return RepresentationTable(table.rows[perm], prov)


def unshuffle(table: RepresentationTable) -> RepresentationTable:
    """Undo :func:`shuffle_assignments` using the recorded permutation."""
    prov = table.provenance
    if prov.get("transform") != "shuffle":
        raise ContractError("table was not produced by shuffle_assignments")
    inverse = np.argsort(np.asarray(prov["permutation"]))
    return RepresentationTable(table.rows[inverse], prov["parent"])


def _jsonable(seed):
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return None if seed is None else int(seed)


# ---------------------------------------------------------------------------
# file format


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_representations(path: str | Path, table: RepresentationTable, seed=None) -> None:
    """Write the binary table (float32 storage) plus its JSON manifest."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, table.n, table.d_t)
    path.write_bytes(header + table.rows.astype("<f4").tobytes(order="C"))
    manifest = {
        "count": table.n,
        "dim": table.d_t,
        "provenance": json.dumps(table.provenance, sort_keys=True),
        "seed": _jsonable(seed),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def load_representations(path: str | Path) -> RepresentationTable:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: header needs {_HEADER.size} bytes, file has {len(buf)}")
    magic, version, n, d_t = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = n * d_t * 4
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {actual}")
    rows = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, d_t).astype(np.float64)
    return RepresentationTable(rows, {"kind": "file", "path": str(path)})
