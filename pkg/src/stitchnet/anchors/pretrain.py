"""Anchor pretraining on the synthetic task."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

from ..errors import NumericalError, TrainingError
from ..numerics import Rng, cross_entropy, no_grad
from .data import LabeledData, SyntheticTask, generate_dataset
from .model import AnchorModel, AnchorSpec
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    seed: int = 0
    # Adam steps are width-independent, so wider anchors get lr * ref/width; 0 disables
    lr_ref_width: int = 32

    def lr_for(self, spec: AnchorSpec) -> float:
        width = max(spec.embed_dim_per_stage)
        if self.lr_ref_width <= 0 or width <= self.lr_ref_width:
            return self.lr
        return self.lr * self.lr_ref_width / width


def evaluate(model_fn, data: LabeledData, batch_size: int = 512) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of ``model_fn`` over ``data``."""
    correct, loss_sum = 0, 0.0
    with no_grad():
        for xb, yb in data.batches(batch_size):
            logits = model_fn(xb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            loss_sum += float(cross_entropy(logits, yb).data) * len(yb)
    return correct / len(data), loss_sum / len(data)


def pretrain_anchor(
    spec: AnchorSpec,
    task: SyntheticTask,
    hp: PretrainConfig = PretrainConfig(),
    data: tuple[LabeledData, LabeledData] | None = None,
) -> AnchorModel:
    """Train ``spec`` from scratch; final val accuracy lands in ``model.provenance``."""
    train, val = data if data is not None else generate_dataset(task)
    rng = Rng(hp.seed).child(f"anchor:{spec.name}")
    model = AnchorModel.create(spec, rng.child("init"))
    opt = AdamW.single(model.parameters(), weight_decay=hp.weight_decay)
    steps_per_epoch = math.ceil(len(train) / hp.batch_size)
    total = hp.epochs * steps_per_epoch
    warmup = min(hp.warmup_epochs, hp.epochs) * steps_per_epoch
    lr = hp.lr_for(spec)

    epoch_losses: list[float] = []
    last_finite = None
    step = 0
    for epoch in range(hp.epochs):
        shuffle = rng.child(f"epoch:{epoch}")
        running = 0.0
        for xb, yb in train.batches(hp.batch_size, shuffle):
            opt.zero_grad()
            try:
                loss = cross_entropy(model.forward(xb), yb)
                loss.backward()
            except NumericalError as exc:
                raise TrainingError(
                    f"{spec.name}: diverged at epoch {epoch} step {step} ({exc}); "
                    f"last finite loss {last_finite}",
                    last_finite_loss=last_finite,
                ) from exc
            last_finite = float(loss.data)
            opt.step(cosine_lr(step, total, lr, warmup))
            running += last_finite * len(yb)
            step += 1
        epoch_losses.append(running / len(train))
        log.info("%s epoch %d loss %.4f", spec.name, epoch, epoch_losses[-1])

    acc, vloss = evaluate(model.forward, val)
    model.provenance = {
        "trained": hp.epochs > 0,
        "seed": hp.seed,
        "epochs": hp.epochs,
        "val_accuracy": acc,
        "val_loss": vloss,
        "epoch_losses": epoch_losses,
        "pretrain": asdict(hp),
        "lr": lr,
    }
    return model
