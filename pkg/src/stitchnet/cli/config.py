"""TOML run configuration with strict key checking.

Sections: ``[task]``, ``[anchors]`` (plus ``[anchors.pretrain]`` and an
optional ``[[anchors.specs]]`` array), ``[stitching]``, ``[training]``,
``[paths]``. Any key not listed below is rejected so that a typo in an
ablation script fails loudly instead of silently using a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..anchors.data import SyntheticTask
from ..anchors.model import AnchorSpec, StageSpec, default_family
from ..anchors.pretrain import PretrainConfig
from ..errors import ContractError
from ..numerics import DEFAULT_RCOND
from ..stitching.enumerate import WindowSpec
from ..stitching.layer import LEAST_SQUARES, check_init_method
from ..stitching.space import FAST_TO_SLOW, SLOW_TO_FAST
from ..training import TrainConfig

WORKDIR_ENV = "STITCHNET_WORKDIR"

TASK_DEFAULTS = {"seed": 0, "train_size": 4096, "val_size": 2048, "noise_rate": 0.05,
                 "tokens": 16, "features": 8, "classes": 10}


@dataclass(frozen=True)
class StitchingConfig:
    kernel: int = 2
    stride: int = 1
    n_init: int = 100
    init_method: str = LEAST_SQUARES
    rcond: float = DEFAULT_RCOND
    direction: str = FAST_TO_SLOW
    seed: int = 0

    def __post_init__(self):
        check_init_method(self.init_method)
        if self.n_init < 1:
            raise ContractError(f"stitching.n_init must be positive, got {self.n_init}")
        if not self.rcond > 0:
            raise ContractError(f"stitching.rcond must be positive, got {self.rcond}")
        if self.direction not in (FAST_TO_SLOW, SLOW_TO_FAST):
            raise ContractError(f"stitching.direction must be {FAST_TO_SLOW!r} or {SLOW_TO_FAST!r}")
        WindowSpec(self.kernel, self.stride)

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.kernel, self.stride)


@dataclass(frozen=True)
class RunConfig:
    task: SyntheticTask = field(default_factory=lambda: SyntheticTask(**TASK_DEFAULTS))
    anchors: tuple[AnchorSpec, ...] = field(default_factory=lambda: tuple(default_family()))
    pretrain: PretrainConfig = PretrainConfig()
    stitching: StitchingConfig = StitchingConfig()
    training: TrainConfig = TrainConfig()
    workdir: Path = Path("work")

    def with_workdir(self, workdir) -> "RunConfig":
        return replace(self, workdir=Path(workdir))


def _check_keys(section: str, table: dict, allowed) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ContractError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _dataclass_section(cls, section: str, table: dict, defaults: dict | None = None):
    names = [f.name for f in fields(cls)]
    _check_keys(section, table, names)
    try:
        return cls(**{**(defaults or {}), **table})
    except TypeError as exc:
        raise ContractError(f"[{section}]: {exc}") from exc


def _spec_from_table(t: dict, task: SyntheticTask) -> AnchorSpec:
    _check_keys("anchors.specs", t, ["name", "depths", "dims", "heads", "transitions", "mlp_ratio"])
    for key in ("name", "depths", "dims", "heads"):
        if key not in t:
            raise ContractError(f"[[anchors.specs]] entry is missing {key!r}")
    depths, dims = list(t["depths"]), list(t["dims"])
    transitions = t.get("transitions", [i > 0 and dims[i] != dims[i - 1] for i in range(len(dims))])
    if len(transitions) != len(depths):
        raise ContractError(f"anchor {t['name']!r}: {len(depths)} stages but {len(transitions)} transition flags")
    return AnchorSpec(
        t["name"],
        tuple(StageSpec(int(d), bool(tr)) for d, tr in zip(depths, transitions)),
        tuple(dims), tuple(t["heads"]),
        input_token_count=task.tokens, input_feature_dim=task.features, num_classes=task.classes,
        mlp_ratio=Fraction(str(t.get("mlp_ratio", 4))),
    )


def parse_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    _check_keys("top level", doc, ["task", "anchors", "stitching", "training", "paths"])
    if "teacher" in doc.get("task", {}):
        raise ContractError("[task] teacher is not configurable")
    task = _dataclass_section(SyntheticTask, "task", doc.get("task", {}), TASK_DEFAULTS)

    anchors_t = doc.get("anchors", {})
    _check_keys("anchors", anchors_t, ["specs", "pretrain"])
    pretrain = _dataclass_section(PretrainConfig, "anchors.pretrain", anchors_t.get("pretrain", {}))
    if "specs" in anchors_t:
        specs = tuple(_spec_from_table(t, task) for t in anchors_t["specs"])
    else:
        specs = tuple(default_family(input_token_count=task.tokens, input_feature_dim=task.features,
                                     num_classes=task.classes))
    if len(specs) < 2:
        raise ContractError("[anchors] needs at least two anchor specs")

    stitching = _dataclass_section(StitchingConfig, "stitching", doc.get("stitching", {}))
    training = _dataclass_section(TrainConfig, "training", doc.get("training", {}))

    paths = doc.get("paths", {})
    _check_keys("paths", paths, ["workdir"])
    workdir = Path(paths.get("workdir", "work"))
    if not workdir.is_absolute() and base_dir is not None:
        workdir = base_dir / workdir
    return RunConfig(task, specs, pretrain, stitching, training, workdir)


def load_config(path=None, env=None) -> RunConfig:
    """Parse ``path`` (defaults apply when None); ``$STITCHNET_WORKDIR`` overrides [paths] workdir."""
    env = os.environ if env is None else env
    if path is None:
        cfg = parse_config({})
    else:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ContractError(f"{path}: {exc}") from exc
        cfg = parse_config(doc, path.parent)
    if env.get(WORKDIR_ENV):
        cfg = cfg.with_workdir(env[WORKDIR_ENV])
    return cfg
