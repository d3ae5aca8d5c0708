"""Ranking metrics, evaluation reports and cohort breakdowns."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, Trajectory, cohort_labels
from .model import GETNext, make_batch

DEFAULT_KS = (1, 5, 10, 20)
USER_GROUPS = ("inactive", "normal", "very_active")
TRAJECTORY_GROUPS = ("short", "middle", "long")


def target_ranks(scores: np.ndarray, targets) -> np.ndarray:
    """1-based rank of each row's target; tied scores count against the target."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    own = scores[np.arange(len(t)), t]
    return (scores >= own[:, None]).sum(axis=1)


@dataclass
class EvalReport:
    n: int
    acc: dict[int, float]
    mrr: float
    cohorts: dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, ks: Sequence[int] = DEFAULT_KS) -> "EvalReport":
        r = np.asarray(ranks, dtype=np.float64).reshape(-1)
        if r.size == 0:
            raise ValueError("cannot build a report from zero predictions")
        m = int(r.size)
        # fsum is exact before the final rounding, so MRR does not depend on order
        return cls(m, {int(k): int(np.count_nonzero(r <= k)) / m for k in ks}, math.fsum(1.0 / r) / m)

    def to_text(self, prefix: str = "") -> str:
        lines = [f"{prefix}n={self.n}"]
        lines += [f"{prefix}acc@{k}={v:.6f}" for k, v in self.acc.items()]
        lines.append(f"{prefix}mrr={self.mrr:.6f}")
        text = "\n".join(lines) + "\n"
        for name, sub in self.cohorts.items():
            text += sub.to_text(prefix=f"{prefix}{name}.")
        return text

    def rows(self, cohort: str = "all") -> list[tuple[str, str, float]]:
        out = [(cohort, "n", float(self.n))]
        out += [(cohort, f"acc@{k}", v) for k, v in self.acc.items()]
        out.append((cohort, "mrr", self.mrr))
        for name, sub in self.cohorts.items():
            out += sub.rows(name)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cohort", "metric", "value"])
        for row in self.rows():
            w.writerow([row[0], row[1], repr(row[2])])
        return buf.getvalue()


@dataclass(frozen=True)
class Prediction:
    trajectory_id: str
    user_id: str
    position: int
    target: int
    rank: int


def predict(model: GETNext, d: Dataset, flow, trajectories: Sequence[Trajectory],
            last_only: bool = False, batch_size: int = 64) -> list[Prediction]:
    """Rank the true next POI at every supervised position (or the last only)."""
    users = {t.trajectory_id: t.user_id for t in trajectories}
    out: list[Prediction] = []
    for start in range(0, len(trajectories), batch_size):
        batch = make_batch(d, trajectories[start:start + batch_size])
        if not batch.supervised.size:
            continue
        rows = batch.last_rows() if last_only else batch.supervised
        ranks = target_ranks(model.scores(batch, flow, rows), batch.next_poi[rows])
        for r, rank in zip(rows, ranks):
            tid = batch.trajectory_ids[batch.segment[r]]
            out.append(Prediction(tid, users[tid], int(batch.position[r]),
                                  int(batch.next_poi[r]), int(rank)))
    return out


def evaluate(model: GETNext, d: Dataset, flow, split: str | Sequence[Trajectory] = "test",
             ks: Sequence[int] = DEFAULT_KS, last_only: bool | None = None) -> EvalReport:
    trajs = d.split(split) if isinstance(split, str) else list(split)
    if last_only is None:
        last_only = model.config.eval_last_only
    preds = predict(model, d, flow, trajs, last_only)
    if not preds:
        raise ValueError("evaluation set is empty after skipping unseen users and POIs")
    return EvalReport.from_ranks([p.rank for p in preds], ks)


def group_reports(preds: Iterable[Prediction], label_of, groups: Sequence[str],
                  ks: Sequence[int] = DEFAULT_KS) -> dict[str, EvalReport]:
    """Reports per group; groups with no predictions are left out."""
    buckets: dict[str, list[int]] = {g: [] for g in groups}
    for p in preds:
        g = label_of(p)
        if g is not None:
            buckets[g].append(p.rank)
    return {g: EvalReport.from_ranks(r, ks) for g, r in buckets.items() if r}


def cohort_evaluate(model: GETNext, d: Dataset, flow, ks: Sequence[int] = DEFAULT_KS,
                    quantile: float = 0.15, last_only: bool | None = None) -> EvalReport:
    """Test-split report with user-activity and trajectory-length cohorts attached."""
    if last_only is None:
        last_only = model.config.eval_last_only
    preds = predict(model, d, flow, d.test, last_only)
    if not preds:
        raise ValueError("test split is empty after skipping unseen users and POIs")
    user_group, traj_group = cohort_labels(d, quantile)
    report = EvalReport.from_ranks([p.rank for p in preds], ks)
    for name, sub in group_reports(preds, lambda p: user_group.get(p.user_id), USER_GROUPS, ks).items():
        report.cohorts[f"users.{name}"] = sub
    for name, sub in group_reports(preds, lambda p: traj_group.get(p.trajectory_id),
                                   TRAJECTORY_GROUPS, ks).items():
        report.cohorts[f"trajectories.{name}"] = sub
    return report
