"""Toy transformer anchors, the synthetic task and anchor pretraining."""

from .data import LabeledData, SyntheticTask, default_teacher_spec, generate_dataset, teacher_labels
from .model import AnchorModel, AnchorSpec, StageSpec, default_family, param_shapes
from .optim import AdamW, cosine_lr
from .pretrain import PretrainConfig, evaluate, pretrain_anchor


def anchor_forward(model: AnchorModel, x):
    return model.forward(x)


def forward_prefix(model: AnchorModel, x, l: int):
    return model.forward_prefix(x, l)


def forward_suffix(model: AnchorModel, a, m: int):
    return model.forward_suffix(a, m)


__all__ = [
    "AdamW", "AnchorModel", "AnchorSpec", "LabeledData", "PretrainConfig", "StageSpec",
    "SyntheticTask", "anchor_forward", "cosine_lr", "default_family", "default_teacher_spec",
    "evaluate", "forward_prefix", "forward_suffix", "generate_dataset", "param_shapes",
    "pretrain_anchor", "teacher_labels",
]
