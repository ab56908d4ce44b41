"""Joint training of a stitch space, full evaluation, and budgeted selection."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .anchors.data import LabeledData
from .anchors.optim import AdamW, cosine_lr
from .anchors.pretrain import evaluate
from .cost import stitch_cost
from .errors import ContractError, InfeasibleBudgetError, NumericalError, TrainingError
from .numerics import Rng, cross_entropy, kl_divergence, no_grad
from .stitching.space import StitchSpace, stitch_forward

log = logging.getLogger(__name__)

DISTILL_OFF = "off"
DISTILL_LARGEST = "largest_anchor"
SCOPE_FULL = "full"
SCOPE_STITCH_ONLY = "stitch_layers_only"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr_stitch: float = 1e-4
    anchor_lr_scale: float | None = None  # None: default_anchor_lr_scale(space)
    weight_decay: float = 0.05
    distill: str = DISTILL_OFF
    distill_weight: float = 0.5
    tune_scope: str = SCOPE_FULL
    warmup_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr_stitch > 0:
            raise ContractError(f"lr_stitch must be positive, got {self.lr_stitch}")
        if self.anchor_lr_scale is not None and not 0.0 <= self.anchor_lr_scale <= 1.0:
            raise ContractError(f"anchor_lr_scale must lie in [0, 1], got {self.anchor_lr_scale}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")
        if self.distill not in (DISTILL_OFF, DISTILL_LARGEST):
            raise ContractError(f"unknown distill mode {self.distill!r}")
        if self.tune_scope not in (SCOPE_FULL, SCOPE_STITCH_ONLY):
            raise ContractError(f"unknown tune_scope {self.tune_scope!r}")


def default_anchor_lr_scale(space: StitchSpace) -> float:
    """1.0 for single-stage anchors, 0.1 when anchors are hierarchical."""
    return 0.1 if any(len(a.spec.stages) > 1 for a in space.anchors) else 1.0


class ConfigSampler:
    """Uniform draws over config ids from a dedicated RNG substream."""

    def __init__(self, n_configs: int, rng: Rng):
        if n_configs < 1:
            raise ContractError("cannot sample from an empty config set")
        self.n = n_configs
        self.rng = rng

    def draw(self) -> int:
        return self.rng.integers(self.n)

    def draw_many(self, count: int) -> np.ndarray:
        return np.array([self.draw() for _ in range(count)])


@dataclass
class LossRecord:
    iteration: int
    config_id: int
    loss: float


def train(space: StitchSpace, data: LabeledData, cfg: TrainConfig = TrainConfig()) -> tuple[StitchSpace, list[LossRecord]]:
    """Train ``space`` in place by sampling one config per mini-batch.

    Under ``tune_scope="full"`` the sampled path's anchor blocks step at
    ``lr_stitch * anchor_lr_scale`` and its stitching layer at ``lr_stitch``;
    under ``"stitch_layers_only"`` anchors are never touched.
    """
    rng = Rng(cfg.seed).child("snnet-train")
    sampler = ConfigSampler(len(space.configs), rng.child("sampler"))
    stitch_only = cfg.tune_scope == SCOPE_STITCH_ONLY
    scale = default_anchor_lr_scale(space) if cfg.anchor_lr_scale is None else cfg.anchor_lr_scale
    anchor_scale = 0.0 if stitch_only else scale
    groups = [(space.layer_parameters(), 1.0)]
    if anchor_scale > 0:
        groups.append((space.anchor_parameters(), anchor_scale))
    opt = AdamW(groups, weight_decay=cfg.weight_decay)

    teacher = None
    if cfg.distill == DISTILL_LARGEST:
        teacher = space.anchors[-1].clone()
        for p in teacher.parameters():
            p.requires_grad = False

    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = min(cfg.warmup_epochs, cfg.epochs) * steps_per_epoch
    records: list[LossRecord] = []
    last_finite = None

    frozen = space.anchor_parameters() if stitch_only else []
    saved_flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    try:
        it = 0
        for epoch in range(cfg.epochs):
            for xb, yb in data.batches(cfg.batch_size, rng.child(f"epoch:{epoch}")):
                opt.zero_grad()
                cid = sampler.draw()
                try:
                    logits = stitch_forward(space, cid, xb)
                    loss = cross_entropy(logits, yb)
                    if teacher is not None:
                        with no_grad():
                            t_logits = teacher.forward(xb).data
                        loss = loss + kl_divergence(logits, t_logits, 1.0) * cfg.distill_weight
                    if loss.requires_grad:
                        loss.backward()
                except NumericalError as exc:
                    raise TrainingError(
                        f"config {cid} diverged at iteration {it} ({exc}); last finite loss {last_finite}",
                        last_finite_loss=last_finite, config_id=cid,
                    ) from exc
                last_finite = float(loss.data)
                records.append(LossRecord(it, cid, last_finite))
                opt.step(cosine_lr(it, total, cfg.lr_stitch, warmup))
                it += 1
            log.info("epoch %d mean loss %.4f", epoch, np.mean([r.loss for r in records[-steps_per_epoch:]]))
    finally:
        for p, flag in zip(frozen, saved_flags):
            p.requires_grad = flag
    return space, records


def loss_log_lines(records: list[LossRecord]) -> str:
    """Line-delimited ``iter config_id loss`` records (loss as exact repr)."""
    return "".join(f"{r.iteration}\t{r.config_id}\t{r.loss!r}\n" for r in records)


# -- evaluation ------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    config_id: int
    pair: int
    l: int
    m: int
    flops: int
    params: int
    val_acc: float
    val_loss: float | None = None


CSV_HEADER = ["config_id", "pair", "l", "m", "flops", "params", "val_acc"]


@dataclass
class EvalTable:
    rows: list[EvalRow] = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.flops, r.config_id))
        for r in self.rows:
            if not 0.0 <= r.val_acc <= 1.0:
                raise ContractError(f"config {r.config_id}: accuracy {r.val_acc} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def row(self, config_id: int) -> EvalRow:
        for r in self.rows:
            if r.config_id == config_id:
                return r
        raise ContractError(f"config {config_id} not in table")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.config_id, r.pair, r.l, r.m, r.flops, r.params, repr(float(r.val_acc))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ContractError(f"eval table header {header} != {CSV_HEADER}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise ContractError(f"malformed eval table row {rec}")
            cid, pair, l, m, flops, params = (int(v) for v in rec[:6])
            rows.append(EvalRow(cid, pair, l, m, flops, params, float(rec[6])))
        return cls(rows)


def evaluate_all(space: StitchSpace, val: LabeledData, batch_size: int = 512) -> EvalTable:
    rows = []
    for cfg in space.configs:
        acc, loss = evaluate(lambda x, cid=cfg.config_id: stitch_forward(space, cid, x), val, batch_size)
        cost = stitch_cost(space, cfg.config_id)
        rows.append(EvalRow(cfg.config_id, cfg.pair, cfg.l, cfg.m, cost.flops, cost.params, acc, loss))
    return EvalTable(rows)


# -- selection ---------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    config_id: int
    flops: int
    val_accuracy: float
    budget: float

    def to_line(self) -> str:
        return (f"config_id={self.config_id} flops={self.flops} "
                f"val_acc={self.val_accuracy!r} budget={self.budget!r}")


def select(table: EvalTable, budget: float) -> SelectionResult:
    """Most accurate config with flops <= budget; ties go to fewer flops, then lower id."""
    if not table.rows:
        raise ContractError("empty eval table")
    feasible = [r for r in table.rows if r.flops <= budget]
    if not feasible:
        raise InfeasibleBudgetError(
            f"budget {budget} is below the cheapest config ({min(r.flops for r in table.rows)} FLOPs)"
        )
    best = min(feasible, key=lambda r: (-r.val_acc, r.flops, r.config_id))
    return SelectionResult(best.config_id, best.flops, best.val_acc, budget)


def pareto_front(table: EvalTable) -> list[EvalRow]:
    """Rows not dominated in (lower flops, higher accuracy), ordered by flops."""
    if not table.rows:
        raise ContractError("empty eval table")
    front: list[EvalRow] = []
    best_below = -math.inf
    rows = sorted(table.rows, key=lambda r: (r.flops, -r.val_acc, r.config_id))
    i = 0
    while i < len(rows):
        j = i
        while j < len(rows) and rows[j].flops == rows[i].flops:
            j += 1
        top = rows[i].val_acc
        if top > best_below:
            front.extend(r for r in rows[i:j] if r.val_acc == top)
            best_below = top
        i = j
    return front
