"""``pcn`` command-line entry point.

Every subcommand takes ``--config`` (a preset name or a key-value file),
``--seed``, ``--out`` and repeatable ``--set section.key=value`` overrides,
and writes ``effective-config.ini`` next to its outputs. Feeding that file
back through ``--config`` repeats the run exactly.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, read_checkpoint
from .config import ConfigError, apply_overrides, from_items, read_sections, to_items, write_sections
from .datagen import DATA_PRESETS, SHAPE_KINDS, DataConfig, build_dataset, load_dataset, perturb_dataset, procedural_shape
from .geometry.ply import PlyError, ply_read, ply_write
from .model import PRESETS, ModelConfig, complete, keypoints, param_count, preset
from .registration import Frame, low_overlap_frames, registration_experiment, write_registration_csv
from .training import TRAIN_PRESETS, TrainConfig, TrainingError, evaluate, robustness_sweep, train, write_sweep_csv


@dataclass
class RunConfig:
    """Inputs and outputs of one invocation; echoed so a rerun needs no other flags."""
    data: list[str] = field(default_factory=list)
    checkpoint: str = ""
    resume: str = ""
    split: str = ""
    inputs: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)


@dataclass
class SweepConfig:
    p_values: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    noise: float = 0.01
    outliers: float = 0.01
    seeds: int = 10
    max_pairs: int = 0


@dataclass
class RegisterConfig:
    pairs: int = 50
    rotation_deg: float = 10.0
    translation: float = 0.05
    max_overlap: float = 0.4
    max_iters: int = 50


@dataclass
class PerturbConfig:
    noise: float = 0.01
    occlusion: float = 0.0
    outliers: float = 0.01


SECTIONS = {
    "run": RunConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "robustness": SweepConfig,
    "register": RegisterConfig,
    "perturb": PerturbConfig,
}

PARAM_TABLE = [("Ours", "pcn-default"), ("Folding", "folding"), ("FC", "fc")]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _preset_sections(name: str) -> dict[str, dict[str, str]]:
    toy = name == "toy"
    model = preset("toy") if toy else preset("pcn-default" if name == "full" else name)
    return {
        "data": to_items(DATA_PRESETS["toy" if toy else "full"]),
        "model": to_items(model),
        "train": to_items(TRAIN_PRESETS["toy" if toy else "full"]),
    }


def load_config(config: str | None, seed: int | None, overrides) -> dict:
    """Resolve preset or file, then ``--seed``, then ``--set`` into dataclass instances."""
    name = config or "toy"
    if name in PRESETS or name in ("toy", "full"):
        sections = _preset_sections(name)
    elif Path(name).is_file():
        sections = read_sections(name)
        sections.get("run", {}).pop("subcommand", None)
    else:
        raise ConfigError(f"--config {name!r} is neither a preset ({', '.join(sorted({*PRESETS, 'full'}))}) nor a file")
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section [{sorted(unknown)[0]}]")
    if seed is not None:
        for sec in ("data", "train"):
            sections.setdefault(sec, {})["seed"] = str(seed)
    sections = apply_overrides(sections, overrides)
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section in --set: {sorted(unknown)[0]!r}")
    return {name: from_items(cls, sections.get(name, {}), name) for name, cls in SECTIONS.items()}


def _echo(cfg: dict, out: Path, subcommand: str) -> None:
    sections = {"run": {"subcommand": subcommand}}
    sections["run"].update(to_items(cfg["run"]))
    for name, obj in cfg.items():
        if name != "run":
            sections[name] = to_items(obj)
    write_sections(sections, out / "effective-config.ini")


def _need(value, flag: str):
    if not value:
        raise UsageError(f"missing required {flag}")
    return value


def _pairs(run: RunConfig, default_split: str | None):
    """Pairs from every ``--data`` directory, restricted to one split when it exists."""
    pairs, sources = [], []
    for root in _need(run.data, "--data"):
        m = load_dataset(root)
        split = run.split or default_split
        if split and split not in set(m.splits.values()):
            if run.split:
                raise ValueError(f"{root}: dataset has no {run.split!r} split")
            split = None
        for pid in m.pair_ids(split):
            pairs.append(m.load_pair(pid))
            sources.append(m)
    if not pairs:
        raise ValueError(f"no pairs found in {', '.join(run.data)}")
    return pairs, sources


# ------------------------------------------------------------- subcommands

def cmd_gen_data(cfg, out: Path) -> None:
    build_dataset(cfg["data"], out)
    print(f"wrote {cfg['data'].shapes * cfg['data'].views} pairs to {out}")


def cmd_perturb(cfg, out: Path) -> None:
    pc = cfg["perturb"]
    src = load_dataset(_need(cfg["run"].data, "--data")[0])
    if Path(src.root).resolve() == out.resolve():
        raise ValueError("perturb would overwrite its input; choose a different --out")
    perturb_dataset(src, out, pc.noise, pc.occlusion, pc.outliers, cfg["train"].seed)
    print(f"wrote perturbed copy of {src.root} to {out}")


def cmd_train(cfg, out: Path) -> None:
    run = cfg["run"]
    pairs, _ = _pairs(run, "train")
    val = []
    if cfg["train"].eval_every:
        for root in run.data:
            m = load_dataset(root)
            val += m.load("val")
    _, report = train(cfg["model"], cfg["train"], pairs, out, resume=run.resume or None, val_pairs=val)
    last = report.rows[-1] if report.rows else None
    print(f"trained {len(report.rows)} iterations" + (f", final loss {last['loss']:.6f}" if last else ""))


def cmd_eval(cfg, out: Path) -> None:
    params = read_checkpoint(_need(cfg["run"].checkpoint, "--checkpoint"))[0]
    pairs, _ = _pairs(cfg["run"], "test")
    report = evaluate(params, pairs)
    report.write_csv(out / "metrics.csv")
    print(f"mean cd {report.mean('cd'):.6f}  mean emd {report.mean('emd'):.6f}  ({len(pairs)} instances)")


def cmd_robustness(cfg, out: Path) -> None:
    sc = cfg["robustness"]
    params = read_checkpoint(_need(cfg["run"].checkpoint, "--checkpoint"))[0]
    pairs, sources = _pairs(cfg["run"], "test")
    if sc.max_pairs:
        pairs, sources = pairs[:sc.max_pairs], sources[:sc.max_pairs]
    rows = []
    seeds = [cfg["train"].seed + i for i in range(sc.seeds)]
    for pair, m in zip(pairs, sources):
        rows += robustness_sweep(params, m.mesh(pair.shape_id), pair, sc.p_values, sc.noise, sc.outliers, seeds)
    write_sweep_csv(rows, out / "robustness.csv")
    for p in sc.p_values:
        cds = [r["cd"] for r in rows if r["p"] == p and not r["failed"]]
        fails = sum(r["failed"] for r in rows if r["p"] == p)
        print(f"p={p:.2f}  median cd {np.median(cds) if cds else float('nan'):.6f}  failures {fails}")


def cmd_register(cfg, out: Path) -> None:
    rc, dc = cfg["register"], cfg["data"]
    complete_fn = None
    if cfg["run"].checkpoint:
        params = read_checkpoint(cfg["run"].checkpoint)[0]

        def complete_fn(frame: Frame):
            # complete in the object frame, then map back to the world
            local = frame.pose.inverse().apply(frame.partial).astype(np.float32)
            return frame.pose.apply(complete(params, local)[1].astype(np.float64))

    rng = np.random.default_rng(cfg["train"].seed)
    rows = []
    for i in range(rc.pairs):
        kind = dc.kinds[i % len(dc.kinds)]
        mesh = procedural_shape(kind, seed=int(rng.integers(2**31)))
        f0, f1 = low_overlap_frames(mesh, dc.base_camera(), rng, rc.rotation_deg, rc.translation, rc.max_overlap,
                                    complete_points=dc.complete_points)
        if complete_fn is not None:
            f0, f1 = replace(f0, completion=None), replace(f1, completion=None)
        for r in registration_experiment([f0, f1], complete_fn, rc.max_iters):
            rows.append(replace(r, pair_id=i))
    write_registration_csv(rows, out / "registration.csv")
    wins = sum(c.rot_err < p.rot_err for p, c in zip(rows[0::2], rows[1::2]))
    print(f"completed inputs beat partial inputs on rotation error in {wins}/{rc.pairs} pairs")


def _stem_outputs(out: Path, path: str, suffix: str) -> Path:
    return out / f"{Path(path).stem}_{suffix}"


def _read_input(path: str) -> np.ndarray:
    cloud = ply_read(path)
    if len(cloud) == 0:
        raise ValueError(f"{path}: empty input cloud")
    return cloud


def cmd_infer(cfg, out: Path) -> None:
    clouds = {path: _read_input(path) for path in _need(cfg["run"].inputs, "input PLY files")}
    params = read_checkpoint(_need(cfg["run"].checkpoint, "--checkpoint"))[0]
    for path, cloud in clouds.items():
        coarse, detail = complete(params, cloud)
        if coarse is not None:
            ply_write(coarse, _stem_outputs(out, path, "coarse.ply"))
        ply_write(detail, _stem_outputs(out, path, "detail.ply"))
        print(f"{path}: {len(detail)} points")


def cmd_keypoints(cfg, out: Path) -> None:
    params = read_checkpoint(_need(cfg["run"].checkpoint, "--checkpoint"))[0]
    for path in _need(cfg["run"].inputs, "input PLY files"):
        cloud = _read_input(path)
        layers = keypoints(params, cloud)
        with open(_stem_outputs(out, path, "keypoints.txt"), "w", encoding="utf-8") as fh:
            for level, idx in enumerate(layers):
                fh.write(f"layer{level}: " + " ".join(str(int(i)) for i in idx) + "\n")
        ply_write(cloud[layers[-1]], _stem_outputs(out, path, "keypoints.ply"))
        print(f"{path}: " + ", ".join(f"layer{i} {len(k)}" for i, k in enumerate(layers)) + " keypoints")


def cmd_params(cfg, out: Path) -> None:
    names = cfg["run"].names
    rows = [(n, n) for n in names] if names else PARAM_TABLE
    lines = [f"{'model':<12} {'config':<12} {'params':>12}"]
    for label, name in rows:
        if name not in PRESETS:
            raise UsageError(f"unknown model config {name!r}; known: {', '.join(sorted(PRESETS))}")
        n = param_count(preset(name))
        lines.append(f"{label:<12} {name:<12} {n:>12,d}  ({n / 1e6:.2f}M)")
    text = "\n".join(lines) + "\n"
    (out / "params.txt").write_text(text, encoding="utf-8")
    print(text, end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "register": cmd_register,
    "keypoints": cmd_keypoints,
    "params": cmd_params,
    "perturb": cmd_perturb,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcn", description="Point completion network: data, training, evaluation, registration.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="preset name (toy, full, pcn-default, folding, fc, ...) or key-value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", dest="overrides")
        if name in ("train", "eval", "robustness", "perturb"):
            p.add_argument("--data", action="append", help="dataset directory (repeatable for train)")
            p.add_argument("--split")
        if name in ("infer", "eval", "robustness", "register", "keypoints"):
            p.add_argument("--checkpoint")
        if name in ("infer", "keypoints"):
            p.add_argument("inputs", nargs="*", help="input PLY files")
        if name == "train":
            p.add_argument("--resume", help="continue from a training checkpoint")
        if name == "gen-data":
            p.add_argument("--shapes", type=int)
            p.add_argument("--views", type=int)
        if name == "params":
            p.add_argument("names", nargs="*", help="model configs to tabulate")
    return parser


def _resolve(args) -> dict:
    config = args.config
    if args.command == "params" and config in PRESETS and not args.names:
        args.names = [config]
    overrides = list(args.overrides)
    for flag in ("shapes", "views"):
        if getattr(args, flag, None) is not None:
            overrides.insert(0, f"data.{flag}={getattr(args, flag)}")
    cfg = load_config(config, args.seed, overrides)
    run = cfg["run"]
    for flag in ("data", "inputs", "names"):
        value = getattr(args, flag, None)
        if value:
            setattr(run, flag, [str(v) for v in value])
    for flag in ("checkpoint", "resume", "split"):
        value = getattr(args, flag, None)
        if value:
            setattr(run, flag, str(value))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = _resolve(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        _echo(cfg, out, args.command)
        COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, PlyError, CheckpointError, TrainingError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
