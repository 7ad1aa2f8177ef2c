"""Dataset splitting, supervised training, and training-history export.

Training minimizes cross-entropy with Adam and L2 weight decay, early-stops
on validation loss, and returns the parameters of the best validation epoch.
Augmentation is applied to training items only (both classes); validation
and test items are never augmented.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .channel import DatasetManifest, LABEL_ORIGINAL, LABEL_RECAPTURED
from .detector import Model, weight_version
from .errors import ConfigError, DivergenceError, InsufficientDataError
from .imaging import AugmentConfig, PreprocessConfig, augment, load_image, preprocess

HISTORY_SCHEMA = "recapguard/history/1"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 50
    early_stop_patience: int = 10
    batch_size: int = 32
    split_ratios: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    target_fpr: float = 0.05

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.early_stop_patience < 1 or self.early_stop_patience >= self.epochs:
            raise ConfigError("patience must be positive and < epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.target_fpr <= 1.0:
            raise ConfigError("target_fpr must be in [0, 1]")


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_json(self) -> str:
        payload = {"schema": HISTORY_SCHEMA, **asdict(self)}
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainingHistory":
        payload = json.loads(text)
        payload.pop("schema", None)
        return cls(**payload)


class EarlyStopTracker:
    """Best-value bookkeeping: stop after `patience` epochs without a new
    strict improvement of the monitored loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record this epoch's value; returns True when training must stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def split_dataset(manifest: DatasetManifest, cfg: TrainConfig):
    """Stratified deterministic split into (train, val, test) manifests."""
    ratios = cfg.split_ratios
    splits = ([], [], [])
    for label_idx, label in enumerate((LABEL_ORIGINAL, LABEL_RECAPTURED)):
        group = manifest.by_label(label)
        n = len(group)
        rng = np.random.default_rng([abs(int(cfg.seed)), 101, label_idx])
        order = rng.permutation(n)
        n_train = int(round(n * ratios[0]))
        n_val = int(round(n * ratios[1]))
        n_test = n - n_train - n_val
        if min(n_train, n_val, n_test) < 1:
            raise InsufficientDataError(
                f"class {label!r} with {n} items cannot fill all three splits"
            )
        bounds = (0, n_train, n_train + n_val, n)
        for s in range(3):
            for i in order[bounds[s]:bounds[s + 1]]:
                splits[s].append(group[int(i)])
    return tuple(
        DatasetManifest(
            entries=list(entries),
            seed=manifest.seed,
            created_at=manifest.created_at,
            base_dir=manifest.base_dir,
        )
        for entries in splits
    )


def _entry_label_index(entry) -> int:
    return 1 if entry.label == LABEL_RECAPTURED else 0


def _load_batch(manifest, indices, epoch, aug_cfg, pre_cfg):
    """Build one (inputs, labels) training batch; pure in its arguments."""
    n = len(manifest.entries)
    tensors, labels = [], []
    for i in indices:
        entry = manifest.entries[int(i)]
        img = load_image(manifest.resolve(entry))
        if aug_cfg is not None:
            img = augment(img, aug_cfg, draw_index=epoch * n + int(i))
        tensors.append(preprocess(img, pre_cfg))
        labels.append(_entry_label_index(entry))
    x = torch.from_numpy(np.stack(tensors)).to(memory_format=torch.channels_last)
    y = torch.tensor(labels, dtype=torch.long)
    return x, y


def _eval_tensors(net, x, y, lossfn, batch_size):
    net.eval()
    total_loss, correct = 0.0, 0
    with torch.inference_mode():
        for start in range(0, len(y), batch_size):
            xb = x[start:start + batch_size]
            yb = y[start:start + batch_size]
            logits = net(xb)
            total_loss += float(lossfn(logits, yb)) * len(yb)
            correct += int((logits.argmax(dim=1) == yb).sum())
    return total_loss / len(y), correct / len(y)


def train(model: Model, splits, cfg: TrainConfig,
          aug_cfg: AugmentConfig | None = None,
          pre_cfg: PreprocessConfig | None = None):
    """Fit the model on the train split, early-stopping on validation loss.

    Returns (model, history) with the best-validation-epoch parameters
    restored. Deterministic for fixed (manifest, cfg): shuffling, dropout,
    and augmentation draws are all derived from cfg.seed.
    """
    train_manifest, val_manifest = splits[0], splits[1]
    if not train_manifest.entries or not val_manifest.entries:
        raise InsufficientDataError("train and val splits must be non-empty")
    if aug_cfg is None:
        aug_cfg = AugmentConfig(seed=cfg.seed)
    pre_cfg = pre_cfg or PreprocessConfig()

    torch.manual_seed(abs(int(cfg.seed)))
    net = model.net
    lossfn = nn.CrossEntropyLoss()
    optimizer = torch.optim.Adam(
        (p for p in net.parameters() if p.requires_grad),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )

    # validation tensors are fixed across epochs; build them once
    val_x, val_y = _load_batch(
        val_manifest, range(len(val_manifest.entries)), 0, None, pre_cfg
    )

    n_train = len(train_manifest.entries)
    history = TrainingHistory()
    stopper = EarlyStopTracker(cfg.early_stop_patience)
    best_state = None

    with ThreadPoolExecutor(max_workers=1) as pool:
        for epoch in range(1, cfg.epochs + 1):
            perm = np.random.default_rng([abs(int(cfg.seed)), 7919, epoch]).permutation(n_train)
            batches = [perm[s:s + cfg.batch_size] for s in range(0, n_train, cfg.batch_size)]

            net.train()
            running_loss, running_correct = 0.0, 0
            pending = pool.submit(_load_batch, train_manifest, batches[0], epoch, aug_cfg, pre_cfg)
            for b in range(len(batches)):
                xb, yb = pending.result()
                if b + 1 < len(batches):
                    pending = pool.submit(
                        _load_batch, train_manifest, batches[b + 1], epoch, aug_cfg, pre_cfg
                    )
                logits = net(xb)
                loss = lossfn(logits, yb)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                running_loss += float(loss.detach()) * len(yb)
                running_correct += int((logits.detach().argmax(dim=1) == yb).sum())

            train_loss = running_loss / n_train
            train_acc = running_correct / n_train
            val_loss, val_acc = _eval_tensors(net, val_x, val_y, lossfn, cfg.batch_size)
            if not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")

            history.train_loss.append(train_loss)
            history.val_loss.append(val_loss)
            history.train_acc.append(train_acc)
            history.val_acc.append(val_acc)
            history.stopped_epoch = epoch

            improved = val_loss < stopper.best
            should_stop = stopper.update(epoch, val_loss)
            if improved:
                best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
            if should_stop:
                break

    history.best_epoch = stopper.best_epoch
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    model.trained = True
    model.version = weight_version(net)
    return model, history


def export_history_plot(history: TrainingHistory, out) -> None:
    """Two-panel loss/accuracy plot over epochs."""
    if not history.train_loss:
        raise ConfigError("history is empty")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = np.arange(1, len(history.train_loss) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, history.train_loss, label="train")
    ax_loss.plot(epochs, history.val_loss, label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss")
    ax_loss.legend()
    ax_acc.plot(epochs, history.train_acc, label="train")
    ax_acc.plot(epochs, history.val_acc, label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
