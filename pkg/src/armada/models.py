"""Aligner and student parameter sets, forward passes, orthonormal projections."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .data import ExampleBatch
from .errors import DataError, DimensionError, FormatError, NumericError, ParameterError
from .tensor import Node

INIT_STD = 0.05


def orthonormal_init(rows: int, cols: int, seed) -> np.ndarray:
    """Seeded Gaussian matrix with its columns orthonormalized."""
    if rows < cols:
        raise ParameterError(f"cannot fit {cols} orthonormal columns in {rows} rows")
    rng = np.random.default_rng(seed)
    return retract_orthonormal(rng.normal(size=(rows, cols)))


def retract_orthonormal(w: np.ndarray) -> np.ndarray:
    """Map ``w`` to the Q factor of its QR decomposition, with diag(R) > 0.

    An already-orthonormal ``w`` comes back unchanged (up to rounding) and
    a positive column scaling is removed.
    """
    w = np.asarray(w, dtype=np.float64)
    q, r = np.linalg.qr(w)
    d = np.diag(r)
    if np.any(np.abs(d) < 1e-12):
        raise NumericError("projection lost column rank (QR pivot below 1e-12)")
    return q * np.sign(d)


def orthonormality_defect(w: np.ndarray) -> float:
    """Frobenius norm of ``w^T w - I``."""
    return float(np.linalg.norm(w.T @ w - np.eye(w.shape[1])))


@dataclass
class ForwardOutputs:
    hidden: Node
    logits: Node
    projection: Node | None
    aux_logits: Node | None

    def __post_init__(self):
        n = self.hidden.shape[0]
        for name in ("logits", "projection", "aux_logits"):
            node = getattr(self, name)
            if node is not None and node.shape[0] != n:
                raise DimensionError(f"{name} has {node.shape[0]} rows, hidden has {n}")

    def detached(self) -> ForwardOutputs:
        return ForwardOutputs(
            self.hidden.detach(),
            self.logits.detach(),
            None if self.projection is None else self.projection.detach(),
            None if self.aux_logits is None else self.aux_logits.detach(),
        )


class ParamSet:
    """Named float64 matrices; subclasses define the forward graph."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self.tensors = {k: T.as_matrix(v, copy=True) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self):
        return type(self)(self.tensors)

    def leaves(self) -> dict[str, Node]:
        return {k: T.param(v, name=k) for k, v in self.tensors.items()}

    def constants(self) -> dict[str, Node]:
        return {k: Node(v) for k, v in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equals(self, other: ParamSet) -> bool:
        """Bitwise equality of every tensor."""
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self.tensors
        )


def _heads(hidden: Node, nodes: Mapping[str, Node]) -> ForwardOutputs:
    logits = T.add_row(T.matmul(hidden, nodes["head.W"]), nodes["head.b"])
    if "proj.P" not in nodes:
        return ForwardOutputs(hidden, logits, None, None)
    proj = T.matmul(hidden, nodes["proj.P"])
    aux = T.add_row(T.matmul(proj, nodes["aux.W"]), nodes["aux.b"])
    return ForwardOutputs(hidden, logits, proj, aux)


def _gauss(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.normal(scale=INIT_STD, size=shape)


class AlignerParams(ParamSet):
    """Aligner: tanh map of teacher reps, task head, projection, auxiliary head.

    With ``extra_layers`` > 0 and ``with_projection=False`` this is the
    capacity-matched variant: a deeper tanh stack and no projection/aux head.
    """

    @classmethod
    def init(
        cls,
        d_t: int,
        hidden: int,
        manifold: int,
        classes: int,
        seed,
        *,
        extra_layers: int = 0,
        with_projection: bool = True,
    ) -> AlignerParams:
        rng = np.random.default_rng(seed)
        t = {"enc.W": _gauss(rng, d_t, hidden), "enc.b": np.zeros((1, hidden))}
        for k in range(extra_layers):
            t[f"enc{k + 1}.W"] = _gauss(rng, hidden, hidden)
            t[f"enc{k + 1}.b"] = np.zeros((1, hidden))
        t["head.W"] = _gauss(rng, hidden, classes)
        t["head.b"] = np.zeros((1, classes))
        if with_projection:
            t["proj.P"] = orthonormal_init(hidden, manifold, rng.integers(2**63))
            t["aux.W"] = _gauss(rng, manifold, classes)
            t["aux.b"] = np.zeros((1, classes))
        return cls(t)

    @property
    def depth(self) -> int:
        return 1 + sum(1 for k in self.tensors if k.startswith("enc") and k.endswith(".W") and k != "enc.W")

    def graph(self, reps, nodes: Mapping[str, Node] | None = None) -> ForwardOutputs:
        nodes = self.constants() if nodes is None else nodes
        reps = reps if isinstance(reps, Node) else Node(reps)
        if reps.shape[1] != nodes["enc.W"].shape[0]:
            raise DimensionError(
                f"teacher reps have {reps.shape[1]} columns, aligner expects {nodes['enc.W'].shape[0]}"
            )
        h = T.tanh(T.add_row(T.matmul(reps, nodes["enc.W"]), nodes["enc.b"]))
        for k in range(1, self.depth):
            h = T.tanh(T.add_row(T.matmul(h, nodes[f"enc{k}.W"]), nodes[f"enc{k}.b"]))
        return _heads(h, nodes)


def capacity_layers(hidden: int, manifold: int, classes: int) -> int:
    """Extra ``hidden x hidden`` tanh layers needed to cover the projection + aux head."""
    removed = hidden * manifold + manifold * classes + classes
    return max(1, math.ceil(removed / (hidden * hidden + hidden)))


class StudentParams(ParamSet):
    """Student: encoder (embedding or input map) + tanh layer + the three heads."""

    @classmethod
    def init(
        cls,
        input_dim: int,
        width: int,
        manifold: int,
        classes: int,
        seed,
        *,
        mode: str = "vector",
    ) -> StudentParams:
        rng = np.random.default_rng(seed)
        key = "embed" if mode == "tokens" else "input.W"
        t = {
            key: _gauss(rng, input_dim, width),
            "hidden.W": _gauss(rng, width, width),
            "hidden.b": np.zeros((1, width)),
            "head.W": _gauss(rng, width, classes),
            "head.b": np.zeros((1, classes)),
        }
        t["proj.P"] = orthonormal_init(width, manifold, rng.integers(2**63))
        t["aux.W"] = _gauss(rng, manifold, classes)
        t["aux.b"] = np.zeros((1, classes))
        return cls(t)

    @property
    def mode(self) -> str:
        return "tokens" if "embed" in self.tensors else "vector"

    def encode(self, batch: ExampleBatch, nodes: Mapping[str, Node]) -> Node:
        if self.mode == "tokens":
            if batch.tokens is None:
                raise DataError("token-mode student got a vector batch")
            vocab = nodes["embed"].shape[0]
            if batch.vocab_size > vocab:
                raise DataError(f"batch vocabulary {batch.vocab_size} exceeds embedding table {vocab}")
            # mean pooling as a fixed pooling matrix times the embedding table
            pool = batch.bag_of_words()
            if pool.shape[1] < vocab:
                pool = np.pad(pool, ((0, 0), (0, vocab - pool.shape[1])))
            return T.matmul(Node(pool), nodes["embed"])
        if batch.features is None:
            raise DataError("vector-mode student got a token batch")
        return T.matmul(Node(batch.features), nodes["input.W"])

    def graph(self, batch: ExampleBatch, nodes: Mapping[str, Node] | None = None) -> ForwardOutputs:
        nodes = self.constants() if nodes is None else nodes
        h_s = self.encode(batch, nodes)
        hidden = T.tanh(T.add_row(T.matmul(h_s, nodes["hidden.W"]), nodes["hidden.b"]))
        return _heads(hidden, nodes)


def aligner_forward(reps, params: AlignerParams) -> ForwardOutputs:
    return params.graph(reps)


def student_forward(batch: ExampleBatch, params: StudentParams) -> ForwardOutputs:
    return params.graph(batch)


# ---------------------------------------------------------------------------
# checkpoint files

CHECKPOINT_MAGIC = b"ARMP"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: ParamSet) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in params.tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    if len(buf) < 8:
        raise FormatError("checkpoint header truncated")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos, out = 8, {}
    while pos < len(buf):
        try:
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            rows, cols = struct.unpack_from("<II", buf, pos)
            pos += 8
        except struct.error as exc:
            raise FormatError(f"checkpoint truncated at byte {pos}") from exc
        need = rows * cols * 8
        if pos + need > len(buf):
            raise FormatError(f"tensor {name!r}: expected {need} bytes, found {len(buf) - pos}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += need
    return out
