"""Training loop, evaluation and the occlusion/noise robustness sweep."""

from __future__ import annotations

import csv
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import read_checkpoint, write_checkpoint
from .datagen import TrainingPair, perturb, stream
from .geometry.camera import backproject, render_depth
from .geometry.mesh import TriangleMesh
from .metrics import chamfer, emd_approx
from .model import ModelConfig, ModelParams, complete, completion_loss, forward
from .optim import AdamState, adam_step


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay: float = 0.7
    lr_decay_every: int = 50_000
    alpha_schedule: list[tuple[int, float]] | None = None
    max_iterations: int | None = None
    eval_every: int = 0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.alpha_schedule is not None:
            its = [int(i) for i, _ in self.alpha_schedule]
            if not self.alpha_schedule or its[0] != 0:
                raise ValueError("alpha_schedule must start at iteration 0")
            if any(b <= a for a, b in zip(its, its[1:])):
                raise ValueError("alpha_schedule iterations must be strictly increasing")
            if any(a < 0 for _, a in self.alpha_schedule):
                raise ValueError("alpha values must be >= 0")

    def total_iterations(self, n_pairs: int) -> int:
        total = self.epochs * math.ceil(n_pairs / self.batch_size)
        return total if self.max_iterations is None else min(total, self.max_iterations)

    def schedule(self, total: int) -> list[tuple[int, float]]:
        if self.alpha_schedule is not None:
            return [(int(i), float(a)) for i, a in self.alpha_schedule]
        sched = [(0, 0.01), (int(0.1 * total), 0.1), (int(0.3 * total), 1.0)]
        out: list[tuple[int, float]] = []
        for it, a in sched:
            if out and it <= out[-1][0]:
                out[-1] = (out[-1][0], a)
            else:
                out.append((it, a))
        return out


TRAIN_PRESETS = {
    "full": TrainConfig(),
    "toy": TrainConfig(epochs=1000, batch_size=4, lr=2e-3, lr_decay=0.5, lr_decay_every=400, max_iterations=1000),
}


def alpha_at(schedule: Sequence[tuple[int, float]], iteration: int) -> float:
    alpha = schedule[0][1]
    for it, a in schedule:
        if iteration >= it:
            alpha = a
    return alpha


@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        _write_csv(out_dir / "train.csv", ["iteration", "lr", "alpha", "loss", "coarse", "detail"], self.rows)
        if self.evals:
            _write_csv(out_dir / "val.csv", ["iteration", "mean_cd", "mean_emd"], self.evals)
        # timing is kept apart so the loss/metric files stay byte-reproducible
        (out_dir / "timing.txt").write_text(f"wall_clock_seconds = {self.wall_clock:.3f}\n", encoding="utf-8")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _batch(it: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    per_epoch = math.ceil(n / batch_size)
    epoch, b = divmod(it, per_epoch)
    perm = stream(seed, "epoch", epoch, 0).permutation(n)
    return perm[b * batch_size:(b + 1) * batch_size]


def _save(path, params: ModelParams, state: AdamState, iteration: int) -> None:
    extra = OrderedDict()
    for name in params.tensors:
        if name in state.first_moment:
            extra[f"adam.m.{name}"] = state.first_moment[name]
            extra[f"adam.v.{name}"] = state.second_moment[name]
    write_checkpoint(path, params, {"iteration": str(iteration), "adam_step": str(state.step)}, extra)


def train(model_config: ModelConfig, train_config: TrainConfig, pairs: Sequence[TrainingPair],
          out_dir=None, resume=None, val_pairs: Sequence[TrainingPair] | None = None,
          stop_at: int | None = None, log=None) -> tuple[ModelParams, TrainReport]:
    """Fit a model to ``pairs``; each batch runs one forward per sample and averages gradients.

    ``resume`` names a checkpoint written by an earlier call; ``stop_at``
    ends the run early at that iteration (useful for checkpoint/resume).
    """
    if len(pairs) == 0:
        raise ValueError("training set is empty")
    tc = train_config
    total = tc.total_iterations(len(pairs))
    schedule = tc.schedule(total)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    state = AdamState(lr=tc.lr, decay_factor=tc.lr_decay, decay_every=tc.lr_decay_every)
    start = 0
    if resume is not None:
        params, st, extra = read_checkpoint(resume)
        start = int(st["iteration"])
        state.step = int(st["adam_step"])
        for name in params.tensors:
            if f"adam.m.{name}" in extra:
                state.first_moment[name] = extra[f"adam.m.{name}"].copy()
                state.second_moment[name] = extra[f"adam.v.{name}"].copy()
    else:
        with T.default_dtype(np.float32):
            params = ModelParams.init(model_config)

    report = TrainReport()
    t0 = time.perf_counter()
    end = total if stop_at is None else min(total, stop_at)
    coarse_metric = params.config.coarse_loss
    for it in range(start, end):
        batch = _batch(it, len(pairs), tc.batch_size, tc.seed)
        alpha = alpha_at(schedule, it)
        lr = state.effective_lr()
        params.zero_grad()
        loss = d1 = d2 = 0.0
        for i in batch:
            p = pairs[i]
            out = forward(params, p.partial)
            if not np.all(np.isfinite(out.detail.data)):
                raise TrainingError(f"non-finite loss at iteration {it}")
            terms = completion_loss(out.coarse, out.detail, p.complete, p.complete_sub, alpha, coarse_metric)
            T.mul(terms.total, 1.0 / len(batch)).backward()
            loss += float(terms.total.data) / len(batch)
            d1 += terms.coarse / len(batch)
            d2 += terms.detail / len(batch)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        adam_step(params.tensors, state)
        report.rows.append({"iteration": it, "lr": lr, "alpha": alpha, "loss": loss, "coarse": d1, "detail": d2})
        if log is not None:
            log(report.rows[-1])
        done = it + 1
        if out_dir is not None and tc.checkpoint_every and done % tc.checkpoint_every == 0:
            _save(out_dir / f"ckpt-{done:07d}.pcn", params, state, done)
        if val_pairs and tc.eval_every and done % tc.eval_every == 0:
            ev = evaluate(params, val_pairs)
            mean_cd = ev.mean("cd")
            # model selection: keep the checkpoint with the lowest validation CD
            if out_dir is not None and all(mean_cd < e["mean_cd"] for e in report.evals):
                _save(out_dir / "best.pcn", params, state, done)
            report.evals.append({"iteration": done, "mean_cd": mean_cd, "mean_emd": ev.mean("emd")})

    report.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        _save(out_dir / "last.pcn", params, state, end)
        report.write(out_dir)
    return params, report


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    rows: list[dict]

    def mean(self, metric: str) -> float:
        vals = [r[metric] for r in self.rows if not r.get("failed")]
        return float(np.mean(vals)) if vals else float("nan")

    def write_csv(self, path) -> None:
        """Long format: one ``metric,value,instance_id`` row per measurement plus means."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value", "instance_id"])
            for r in self.rows:
                for m in ("cd", "emd"):
                    w.writerow([m, repr(float(r[m])), r["instance_id"]])
            for m in ("cd", "emd"):
                w.writerow([m, repr(self.mean(m)), "mean"])


def _emd_against(coarse, detail, sub, instance_seed: int) -> float:
    if coarse is not None and len(coarse) == len(sub):
        return emd_approx(coarse, sub)
    pts = detail
    if len(pts) != len(sub):
        idx = np.random.default_rng(instance_seed).choice(len(pts), size=len(sub), replace=len(pts) < len(sub))
        pts = pts[np.sort(idx)]
    return emd_approx(pts, sub)


def evaluate(params: ModelParams, pairs: Sequence[TrainingPair]) -> EvalReport:
    """Per-instance CD (detail vs complete) and EMD (coarse vs subsampled ground truth)."""
    rows = []
    for p in pairs:
        coarse, detail = complete(params, p.partial)
        rows.append({
            "instance_id": p.pair_id,
            "cd": chamfer(detail, p.complete),
            "emd": _emd_against(coarse, detail, p.complete_sub, p.view_id),
        })
    return EvalReport(rows)


def robustness_sweep(params: ModelParams, mesh: TriangleMesh, pair: TrainingPair, p_values=(0.0, 0.2, 0.4, 0.6, 0.8),
                     noise: float = 0.01, outlier_frac: float = 0.01, seeds: Sequence[int] = (0,)) -> list[dict]:
    """Complete re-rendered, perturbed views of ``pair`` at several occlusion levels."""
    if pair.camera is None:
        raise ValueError("robustness_sweep needs the pair's camera")
    if any(not 0.0 <= p <= 0.8 for p in p_values):
        raise ValueError("occlusion levels must lie in [0, 0.8]")
    clean = render_depth(mesh, pair.camera)
    rows = []
    for p in p_values:
        for seed in seeds:
            rng = stream(seed, pair.pair_id, int(round(p * 1000)), 4)
            partial = backproject(perturb(clean, noise, p, outlier_frac, seed=rng)).astype(np.float32)
            row = {"instance_id": pair.pair_id, "p": float(p), "seed": seed, "points": len(partial),
                   "cd": float("nan"), "emd": float("nan"), "failed": len(partial) == 0}
            if len(partial):
                coarse, detail = complete(params, partial)
                row["cd"] = chamfer(detail, pair.complete)
                row["emd"] = _emd_against(coarse, detail, pair.complete_sub, pair.view_id)
            rows.append(row)
    return rows


def write_sweep_csv(rows, path) -> None:
    _write_csv(path, ["instance_id", "p", "seed", "points", "cd", "emd", "failed"],
               [{**r, "failed": int(r["failed"])} for r in rows])
