"""Procedurally generated classification task labelled by a frozen random teacher."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import ContractError
from ..numerics import Rng, no_grad
from .model import AnchorModel, AnchorSpec


def default_teacher_spec(tokens: int = 16, features: int = 8, classes: int = 10) -> AnchorSpec:
    return AnchorSpec.single_stage(
        "teacher", depth=2, dim=32, heads=2,
        input_token_count=tokens, input_feature_dim=features, num_classes=classes,
    )


@dataclass(frozen=True)
class SyntheticTask:
    seed: int = 0
    train_size: int = 4096
    val_size: int = 2048
    noise_rate: float = 0.05
    tokens: int = 16
    features: int = 8
    classes: int = 10
    teacher: AnchorSpec | None = None

    def __post_init__(self):
        if self.teacher is None:
            object.__setattr__(self, "teacher", default_teacher_spec(self.tokens, self.features, self.classes))
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ContractError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if min(self.train_size, self.val_size) < self.classes:
            raise ContractError("train_size and val_size must be at least num_classes")
        t = self.teacher
        if (t.input_token_count, t.input_feature_dim, t.num_classes) != (self.tokens, self.features, self.classes):
            raise ContractError("teacher spec does not match task tokens/features/classes")

    def build_teacher(self) -> AnchorModel:
        """The frozen labelling network; weights ~ Normal(0, 1/fan_in), never trained."""
        rng = Rng(self.seed).child("teacher")
        teacher = AnchorModel.create(self.teacher, rng, std=None)
        for p in teacher.parameters():
            p.requires_grad = False
        # centre the output logits on a calibration draw so every class is reachable
        calib = rng.child("calibration").normal((2048, self.tokens, self.features))
        with no_grad():
            mean_logits = teacher.forward(calib).data.mean(axis=0)
        bias = teacher.params["head.fc.bias"]
        bias.data = (bias.data - mean_logits).astype(bias.dtype)
        return teacher


@dataclass
class LabeledData:
    x: np.ndarray  # [n, tokens, features] float32
    y: np.ndarray  # [n] int64

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ContractError(f"{self.x.shape[0]} inputs but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.x.shape[0]

    def batches(self, batch_size: int, rng: Rng | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (x, y) mini-batches; shuffled when ``rng`` is given, else in order."""
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield self.x[idx], self.y[idx]

    def subset(self, n: int, rng: Rng) -> "LabeledData":
        idx = np.sort(rng.choice(len(self), size=min(n, len(self)), replace=False))
        return LabeledData(self.x[idx], self.y[idx])


def teacher_labels(teacher: AnchorModel, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, x.shape[0], batch_size):
            out.append(teacher.forward(x[start:start + batch_size]).data.argmax(axis=1))
    return np.concatenate(out).astype(np.int64)


def _split(task: SyntheticTask, teacher: AnchorModel, rng: Rng, n: int) -> LabeledData:
    x = rng.child("inputs").normal((n, task.tokens, task.features))
    y = teacher_labels(teacher, x)
    n_noisy = int(round(task.noise_rate * n))
    if n_noisy:
        noise = rng.child("noise")
        idx = noise.choice(n, size=n_noisy, replace=False)
        y[idx] = noise.integers(task.classes, size=n_noisy)
    return LabeledData(x, y)


def generate_dataset(task: SyntheticTask) -> tuple[LabeledData, LabeledData]:
    """Train and validation splits drawn from separate RNG substreams."""
    teacher = task.build_teacher()
    root = Rng(task.seed)
    train = _split(task, teacher, root.child("train"), task.train_size)
    val = _split(task, teacher, root.child("val"), task.val_size)
    return train, val
