"""Mini-batch training with Adam and best-on-validation checkpoint selection."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .dataset import Dataset
from .evaluation import evaluate
from .model import GETNext, make_batch, seen_part
from .optim import AdamState, adam_step, make_rng, save_checkpoint, zero_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_acc1: float
    val_mrr: float


@dataclass
class TrainResult:
    model: GETNext              # holds the best-validation parameters
    log: list[EpochLog]
    best_epoch: int
    final_params: dict[str, np.ndarray]


def build_model(d: Dataset, flow, config: TrainConfig, rng=None, params=None) -> GETNext:
    if flow.n_nodes != d.n_pois:
        raise ValueError(f"flow map has {flow.n_nodes} nodes but the dataset indexes {d.n_pois} POIs")
    if list(flow.node_ids) != sorted(d.poi_index, key=d.poi_index.get):
        raise ValueError("flow map node order differs from the dataset POI index")
    return GETNext(config, d.n_pois, d.n_users, d.n_categories, flow.n_features, rng, params)


def train(d: Dataset, flow, config: TrainConfig,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train from scratch; deterministic for a fixed ``config.seed``."""
    rng = make_rng(config.seed)
    model = build_model(d, flow, config, rng)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    trajs = [t for t in d.train if seen_part(d, t) is not None]
    if not trajs:
        raise ValueError("no trainable trajectories in the train split")
    history: list[EpochLog] = []
    best = (-np.inf, 0, model.arrays())
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(trajs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = make_batch(d, [trajs[i] for i in order[start:start + config.batch_size]])
            zero_grads(model.params)
            with T.Tape():
                loss = model.batch_loss(batch, flow, rng, train=True)
            T.backward(loss)
            adam_step(model.params, state)
            losses.append(loss.item())
        try:
            rep = evaluate(model, d, flow, "validation", ks=(1,))
            acc1, mrr = rep.acc[1], rep.mrr
        except ValueError:
            acc1 = mrr = float("nan")
        entry = EpochLog(epoch, float(np.mean(losses)), acc1, mrr)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d loss %.5f val_acc1 %.4f", epoch, entry.train_loss, acc1)
        score = acc1 if not np.isnan(acc1) else -np.inf
        if score >= best[0]:
            best = (score, epoch, model.arrays())
    final = model.arrays()
    best_model = build_model(d, flow, config, params=best[2])
    return TrainResult(best_model, history, best[1], final)


def write_log(history: list[EpochLog], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_acc1", "val_mrr"])
        for e in history:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_acc1), repr(e.val_mrr)])


def save_run(result: TrainResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", result.model.params)
    write_log(result.log, out / "train_log.csv")
    return out
