"""Command-line interface: ``logq <command> [flags]``.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Failures print one JSON line ``{"error": kind, "message": ...}`` on
stderr. Exit codes: 0 success, 2 usage error (bad flag, missing file,
invalid config), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__, _kernels
from .data import DataError, load_interactions, load_split, make_split, save_split, write_interactions
from .evaluation import evaluate
from .losses import CorrectionMode
from .manifest import RunManifest, file_digest
from .model import load_checkpoint, save_checkpoint
from .oracle import audit_estimator, parse_proposal, popularity_aligned_scores
from .sketch import DEFAULT_DEPTH, DEFAULT_WIDTH, audit_sketch
from .synth import SynthConfig, synth_interactions
from .train import ConfigError, TrainConfig, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
BIAS_COLUMNS = ["estimator", "n", "proposal", "bias_l2", "variance_trace", "resamples", "stderr"]

log = logging.getLogger("logq")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return os.path.abspath(path)


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_synth(args, manifest):
    cfg = SynthConfig(
        num_users=args.users,
        num_items=args.items,
        zipf_exponent=args.zipf,
        num_clusters=args.clusters,
        popularity_weight=args.popularity_weight,
        mean_events=args.mean_events,
        min_events=args.min_events,
        seed=args.seed,
    )
    manifest.config = vars(cfg)
    manifest.write(args.out)
    write_interactions(synth_interactions(cfg), os.path.join(args.out, "interactions.csv"))
    return ["interactions.csv"]


def cmd_ingest(args, manifest):
    src = _require_file(args.input, "input file")
    manifest.inputs = {src: file_digest(src)}
    manifest.config = {"scheme": args.scheme, "fraction": args.fraction}
    manifest.write(args.out)
    split = make_split(load_interactions(src), args.scheme, args.fraction)
    return save_split(split, args.out)


def _load_data_section(data, base_dir, manifest):
    if "split_dir" in data:
        d = os.path.join(base_dir, data["split_dir"])
        for name in ("train.csv", "validation.csv", "test.csv", "ids.json", "split.json"):
            p = _require_file(os.path.join(d, name), "split file")
            manifest.inputs[p] = file_digest(p)
        return lambda: load_split(d)
    if "interactions" in data:
        p = _require_file(os.path.join(base_dir, data["interactions"]), "interactions file")
        manifest.inputs[p] = file_digest(p)
        scheme, fraction = data.get("scheme", "leave_one_out"), data.get("fraction")
        return lambda: make_split(load_interactions(p), scheme, fraction)
    raise UsageError("config 'data' needs 'split_dir' or 'interactions'")


def cmd_train(args, manifest):
    cfg_path = _require_file(args.config, "config file")
    with open(cfg_path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or "data" not in raw:
        raise UsageError("config must be an object with a 'data' section")
    manifest.inputs[cfg_path] = file_digest(cfg_path)
    loader = _load_data_section(raw.pop("data"), os.path.dirname(cfg_path), manifest)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(raw)
    except ConfigError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    manifest.config = config.to_dict()
    manifest.seed = config.seed
    manifest.write(args.out)

    split = loader()
    with open(os.path.join(args.out, "epochs.jsonl"), "w") as fh:
        model, _ = train(split, config, on_epoch=lambda r: fh.write(r.to_json() + "\n"))
    save_checkpoint(model, os.path.join(args.out, "model.npz"), extra={"config": config.to_dict()})
    report = evaluate(model, split, config.eval_ks, mask_seen=config.mask_seen,
                      max_history=config.max_history)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        fh.write(report.to_json())
    return ["epochs.jsonl", "model.npz", "metrics.json"]


def cmd_eval(args, manifest):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    manifest.inputs[ckpt] = file_digest(ckpt)
    if args.split:
        loader = _load_data_section({"split_dir": os.path.abspath(args.split)}, "", manifest)
    elif args.data:
        loader = _load_data_section(
            {"interactions": os.path.abspath(args.data), "scheme": args.scheme,
             "fraction": args.fraction}, "", manifest)
    else:
        raise UsageError("eval needs --split or --data")
    ks = _int_list(args.ks)
    manifest.config = {"ks": ks, "part": args.part, "mask_seen": not args.no_mask_seen,
                       "format": args.format, "max_history": args.max_history}
    manifest.write(args.out)
    model, _ = load_checkpoint(ckpt)
    split = loader()
    if model.num_items != split.num_items or (model.tower_mode == "id" and model.num_users != split.num_users):
        raise UsageError("checkpoint does not match the dataset's user/item counts")
    report = evaluate(model, split, ks, part=args.part, mask_seen=not args.no_mask_seen,
                      max_history=args.max_history)
    name = f"metrics.{args.format}"
    with open(os.path.join(args.out, name), "w") as fh:
        fh.write(report.to_json() if args.format == "json" else report.to_csv())
    return [name]


def cmd_bias_audit(args, manifest):
    try:
        modes = [CorrectionMode.parse(m.strip()) for m in args.modes.split(",") if m.strip()]
        proposal = parse_proposal(args.proposal, args.catalog)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ns = _int_list(args.n)
    if not (0 <= args.positive < args.catalog):
        raise UsageError("--positive must index an item of the catalog")
    manifest.config = {"catalog": args.catalog, "n": ns, "proposal": args.proposal,
                       "modes": [m.value for m in modes], "resamples": args.resamples,
                       "positive": args.positive, "noise": args.noise}
    manifest.write(args.out)

    seq = np.random.SeedSequence(args.seed)
    inst_seq, draw_seq = seq.spawn(2)
    scores = popularity_aligned_scores(proposal, np.random.default_rng(inst_seq), args.noise)
    rows = []
    streams = draw_seq.spawn(len(ns) * len(modes))
    for k, (n, mode) in enumerate((n, m) for n in ns for m in modes):
        rep = audit_estimator(scores, args.positive, proposal, mode, n, args.resamples,
                              np.random.default_rng(streams[k]), args.proposal)
        rows.append([rep.estimator, rep.n_negatives, rep.proposal, _fmt(rep.bias_l2),
                     _fmt(rep.variance_trace), rep.num_resamples, _fmt(rep.standard_error)])
    name = "bias_audit." + args.format
    path = os.path.join(args.out, name)
    with open(path, "w", newline="") as fh:
        if args.format == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BIAS_COLUMNS)
            w.writerows(rows)
        else:
            json.dump([dict(zip(BIAS_COLUMNS, r)) for r in rows], fh, indent=2)
            fh.write("\n")
    return [name]


SKETCH_COLUMNS = ["draw", "width", "depth", "events", "distinct_items", "bound",
                  "max_error", "mean_error", "exceed_fraction", "underestimates"]


def cmd_sketch_audit(args, manifest):
    if args.input:
        src = _require_file(args.input, "input file")
        manifest.inputs[src] = file_digest(src)
    manifest.config = {"events": args.events, "items": args.items, "zipf": args.zipf,
                       "width": args.width, "depth": args.depth, "draws": args.draws,
                       "input": args.input}
    manifest.write(args.out)
    seq = np.random.SeedSequence(args.seed)
    stream_seq, hash_seq = seq.spawn(2)
    if args.input:
        stream = load_interactions(src).items
    else:
        ranks = np.arange(1, args.items + 1, dtype=np.float64)
        q = ranks ** -args.zipf
        stream = np.random.default_rng(stream_seq).choice(args.items, size=args.events, p=q / q.sum())
    hash_rng = np.random.default_rng(hash_seq)
    rows = []
    for draw in range(args.draws):
        items, true, est, total = audit_sketch(stream, args.width, args.depth,
                                               int(hash_rng.integers(0, 2**31)))
        err = est - true
        bound = np.e / args.width * total
        rows.append([draw, args.width, args.depth, int(total), len(items), _fmt(bound),
                     int(err.max()), _fmt(err.mean()), _fmt(np.mean(err > bound)),
                     int(np.sum(err < 0))])
    name = "sketch_audit." + args.format
    with open(os.path.join(args.out, name), "w", newline="") as fh:
        if args.format == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SKETCH_COLUMNS)
            w.writerows(rows)
        else:
            json.dump([dict(zip(SKETCH_COLUMNS, r)) for r in rows], fh, indent=2)
            fh.write("\n")
    return [name]


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "bias-audit": cmd_bias_audit,
    "sketch-audit": cmd_sketch_audit,
}


def build_parser():
    parser = _Parser(prog="logq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, fmt=("csv", "json"), seed=0, run_config=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--config", required=run_config,
                       help="JSON run config" if run_config else "JSON file of flag defaults")
        p.add_argument("--format", choices=fmt, default=fmt[0])
        return p

    p = common(sub.add_parser("synth", help="write a synthetic Zipf interaction log"))
    p.add_argument("--users", type=int, default=10_000)
    p.add_argument("--items", type=int, default=2_000)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--clusters", type=int, default=50)
    p.add_argument("--popularity-weight", type=float, default=0.5)
    p.add_argument("--mean-events", type=float, default=20.0)
    p.add_argument("--min-events", type=int, default=5)

    p = common(sub.add_parser("ingest", help="split an interaction CSV"))
    p.add_argument("--input", required=True)
    p.add_argument("--scheme", choices=("leave_one_out", "temporal"), default="leave_one_out")
    p.add_argument("--fraction", type=float, default=0.1)

    common(sub.add_parser("train", help="train from a run config"), seed=None, run_config=True)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"), fmt=("json", "csv"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", help="directory written by ingest")
    p.add_argument("--data", help="interaction CSV to split on the fly")
    p.add_argument("--scheme", choices=("leave_one_out", "temporal"), default="leave_one_out")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--part", choices=("test", "validation"), default="test")
    p.add_argument("--ks", default="20")
    p.add_argument("--max-history", type=int, default=50)
    p.add_argument("--no-mask-seen", action="store_true")

    p = common(sub.add_parser("bias-audit", help="bias/variance of sampled estimators"))
    p.add_argument("--catalog", type=int, default=50)
    p.add_argument("--n", default="5", help="negatives per example, comma-separated")
    p.add_argument("--proposal", default="zipf:1.0")
    p.add_argument("--modes", default="none,standard_logq,improved")
    p.add_argument("--resamples", type=int, default=100_000)
    p.add_argument("--positive", type=int, default=0, help="index of the positive item")
    p.add_argument("--noise", type=float, default=0.5, help="score noise around log Q")

    p = common(sub.add_parser("sketch-audit", help="count-min error vs exact counts"))
    p.add_argument("--input", help="interaction CSV whose item column is the stream")
    p.add_argument("--events", type=int, default=100_000)
    p.add_argument("--items", type=int, default=2_000)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--width", type=int, default=DEFAULT_WIDTH)
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH)
    p.add_argument("--draws", type=int, default=100, help="independent hash-seed draws")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def _strip_out(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


def _apply_config_defaults(parser, argv):
    """Re-parse with defaults taken from ``--config`` (not for train)."""
    args = parser.parse_args(argv)
    if args.command in ("train", "replay") or not getattr(args, "config", None):
        return args
    path = _require_file(args.config, "config file")
    with open(path) as fh:
        try:
            overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    bad = set(overrides) - known
    if bad:
        raise UsageError(f"unknown config keys: {sorted(bad)}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        mpath = _require_file(args.manifest, "manifest")
        old = RunManifest.read(mpath)
        stale = old.verify_inputs()
        if stale:
            raise UsageError(f"input digest mismatch: {stale[0]}")
        out = os.path.abspath(args.out)
        # relative paths in argv resolve against the original directory
        here = os.getcwd()
        os.chdir(old.cwd or here)
        try:
            return run(list(old.argv) + ["--out", out])
        finally:
            os.chdir(here)
    args = _apply_config_defaults(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(
        command=args.command,
        argv=_strip_out(list(argv)),
        seed=args.seed,
        code_version=__version__,
        kernel_backend=_kernels.BACKEND_NAME,
        cwd=os.getcwd(),
    )
    outputs = COMMANDS[args.command](args, manifest)
    manifest.record_outputs(args.out, outputs)
    manifest.write(args.out)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as exc:
        kind, code = "usage", EXIT_USAGE
        msg = str(exc)
    except FileNotFoundError as exc:
        kind, code = "usage", EXIT_USAGE
        msg = str(exc)
    except (DataError, ValueError, FloatingPointError, OSError) as exc:
        kind, code = "runtime", EXIT_RUNTIME
        msg = f"{type(exc).__name__}: {exc}"
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
