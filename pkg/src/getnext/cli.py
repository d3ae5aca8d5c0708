"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 bad user input.  Training options
resolve as command line > ``GETNEXT_*`` environment > ``--config`` file >
defaults.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import dataset as ds
from . import flow_map as fmap
from .config import ABLATIONS, TrainConfig, coerce, read_kv, write_kv
from .evaluation import cohort_evaluate, evaluate
from .model import recommend_next
from .optim import load_checkpoint
from .training import build_model, save_run, train

log = logging.getLogger("getnext")

ENV_PREFIX = "GETNEXT_"


class UsageError(Exception):
    """Raised for problems the user can fix; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training options")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f"cfg_{f.name}", default=None,
                           action=argparse.BooleanOptionalAction)
        else:
            g.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=f.name.upper())


def resolve_config(args: argparse.Namespace, environ=os.environ) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        values.update(read_kv(path))
    names = {f.name for f in fields(TrainConfig)}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                values[name] = value
    for name in names:
        v = getattr(args, f"cfg_{name}", None)
        if v is not None:
            values[name] = v
    for name in getattr(args, "ablation", None) or []:
        values[name] = True
    try:
        return TrainConfig(**coerce(TrainConfig, values))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    qs = ds.synthesize(args.users, args.pois, args.categories, args.pattern, args.seed,
                       args.checkins_per_user)
    ds.write_canonical(args.out, qs)
    print(f"wrote {len(qs)} check-ins to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    qs, errors = ds.ingest(args.input, args.format)
    for e in errors[:20]:
        log.warning("line %d: %s", e.line, e.reason)
    d = ds.preprocess(qs, args.min_poi_checkins, args.min_user_checkins, args.window_hours,
                      args.split_mode)
    ds.save_dataset(d, args.out)
    print(f"train={len(d.train)} validation={len(d.validation)} test={len(d.test)} "
          f"pois={d.n_pois} users={d.n_users} categories={d.n_categories} malformed={len(errors)}")
    return 0


def _load_data(path) -> ds.Dataset:
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise UsageError(f"no prepared dataset in {p} (run 'prepare' first)")
    d = ds.load_dataset(p)
    if not d.train:
        raise UsageError(f"train split in {p} is empty")
    return d


def cmd_build_map(args) -> int:
    d = _load_data(args.data)
    m = fmap.build_from_dataset(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fmap.write_edge_list(m, out / "edges.csv")
    (out / "stats.txt").write_text(fmap.format_stats(fmap.stats(m)))
    print(f"nodes={m.n_nodes} edges={int((m.adjacency > 0).sum())} -> {out}")
    return 0


def cmd_stats(args) -> int:
    d = _load_data(args.data)
    text = fmap.format_stats(fmap.stats(fmap.build_from_dataset(d)))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def run_dir_for(out: Path, config: TrainConfig) -> Path:
    return out / f"run-{config.digest()}-s{config.seed}"


def cmd_train(args) -> int:
    config = resolve_config(args)
    d = _load_data(args.data)
    flow = fmap.build_from_dataset(d)
    result = train(d, flow, config)
    run = save_run(result, run_dir_for(Path(args.out), config))
    write_kv(run / "config.txt", config.to_dict())
    last = result.log[-1]
    print(f"run={run} best_epoch={result.best_epoch} final_loss={last.train_loss:.6f}")
    return 0


def _load_run(run: Path, d: ds.Dataset, flow):
    ckpt = run / "checkpoint.bin"
    if not ckpt.is_file():
        raise UsageError(f"no checkpoint at {ckpt}")
    cfg_path = run / "config.txt"
    if not cfg_path.is_file():
        raise UsageError(f"no config.txt next to {ckpt}")
    config = TrainConfig(**coerce(TrainConfig, read_kv(cfg_path)))
    return build_model(d, flow, config, params=load_checkpoint(ckpt))


def cmd_evaluate(args) -> int:
    d = _load_data(args.data)
    flow = fmap.build_from_dataset(d)
    model = _load_run(Path(args.run), d, flow)
    if args.cohorts:
        report = cohort_evaluate(model, d, flow)
    else:
        report = evaluate(model, d, flow, args.split)
    run = Path(args.run)
    (run / f"report_{args.split}.txt").write_text(report.to_text())
    (run / f"report_{args.split}.csv").write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def cmd_recommend(args) -> int:
    d = _load_data(args.data)
    flow = fmap.build_from_dataset(d)
    model = _load_run(Path(args.run), d, flow)
    pois = [p for p in args.prefix.split(",") if p]
    if args.timestamps:
        stamps = [int(t) for t in args.timestamps.split(",")]
        if len(stamps) != len(pois):
            raise UsageError("--timestamps must list one value per prefix POI")
    else:
        stamps = [ds.SYNTH_EPOCH + 7200 * i for i in range(len(pois))]
    qs = []
    for poi, ts in zip(pois, stamps):
        meta = d.poi_meta.get(poi)
        if meta is None or poi not in d.poi_index:
            raise UsageError(f"unknown or unseen POI {poi!r}")
        qs.append(ds.CheckIn(args.user, poi, meta.category_id, meta.lat, meta.lon, ts, args.tz_offset_min))
    try:
        ranked = recommend_next(model, d, flow, args.user, qs, args.top_k)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    print("\n".join(ranked))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="getnext", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic check-in corpus as canonical CSV")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--pois", type=int, required=True)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--pattern", choices=("cycle", "planted_shared_paths", "uniform"), default="cycle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkins-per-user", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="filter, split and index a raw check-in file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("canonical_csv", "foursquare_tsv"), default="canonical_csv")
    p.add_argument("--out", required=True)
    p.add_argument("--min-poi-checkins", type=int, default=10)
    p.add_argument("--min-user-checkins", type=int, default=10)
    p.add_argument("--window-hours", type=float, default=24.0)
    p.add_argument("--split-mode", choices=("global", "per_user"), default="global")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("build-map", help="export the flow map edge list and statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("stats", help="print flow map statistics as key=value")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model; writes run-<hash>-s<seed>/ under --out")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--ablation", action="append", choices=ABLATIONS, default=[])
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Acc@k and MRR of a trained run")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--cohorts", action="store_true", help="add user/trajectory cohorts (test split)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k next POIs for a user's trajectory prefix")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--prefix", required=True, help="comma-separated POI ids, oldest first")
    p.add_argument("--timestamps", help="comma-separated UTC seconds, one per prefix POI")
    p.add_argument("--tz-offset-min", type=int, default=0)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, ds.DataError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
