"""Command-line entry point: ``sonarp <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .geometry import read_proposals
from .metrics import bench, proposal_stats, write_rows
from .serialize import ModelFormatError, load_model
from .synth import DatasetError, SceneConfig, generate_frames, load_dataset, save_dataset
from .train import DivergenceError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

COMMANDS = {
    "gen": "generate a synthetic sonar dataset directory",
    "train-cls": "train and evaluate patch classifiers",
    "train-match": "train and evaluate a patch matcher",
    "train-obj": "train an objectness network and save it",
    "transfer": "frozen features plus linear SVM",
    "propose": "objectness proposals with threshold / top-k / NMS sweeps",
    "detect": "dual-head detector over the gamma and threshold grids",
    "track": "tracking by matching on a drifting-object sequence",
    "eval": "score a proposals CSV against a dataset",
    "bench": "time a network's forward pass",
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="random seed for data, init and shuffling")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--spec", default=None, help="JSON experiment (or scene) specification")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS threads (falls back to SONARP_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = Parser(prog="sonarp", description="Sonar-image CNN toolkit", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True
    p = {name: sub.add_parser(name, help=text, description=text, formatter_class=fmt)
         for name, text in COMMANDS.items()}
    for sp in p.values():
        _common(sp)
    p["gen"].add_argument("--n", type=int, default=50, help="number of frames")
    for name in ("train-cls", "transfer"):
        p[name].add_argument("--spc", type=int, nargs="+", default=None, help="samples-per-class grid")
    for name in ("train-obj", "propose", "detect", "track"):
        p[name].add_argument("--eps", type=float, default=0.2, help="objectness squashing epsilon")
    for name in ("propose", "detect", "track", "eval"):
        p[name].add_argument("--data", default=None, help="dataset directory; frames are generated when omitted")
    for name in ("propose", "track", "bench"):
        p[name].add_argument("--model", default=None, help="objectness model file (.flsn)")
    for name in ("propose", "detect"):
        p[name].add_argument("--to", type=float, default=0.5, help="objectness threshold T_o")
        p[name].add_argument("--st", type=float, default=0.7, help="NMS overlap threshold S_t")
    for name in ("propose", "track"):
        p[name].add_argument("--k", type=int, default=None, help="keep the top-k proposals")
    p["propose"].add_argument("--tm", action="store_true", help="add the template-matching baseline")
    p["detect"].add_argument("--gamma", type=float, nargs="+", default=None, help="multi-task weight grid")
    p["detect"].add_argument("--svm", action="store_true", help="also evaluate a linear SVM class head")
    p["track"].add_argument("--matcher", default=None, help="matcher model file (.flsn)")
    p["track"].add_argument("--methods", nargs="+", default=["cnn", "cc"], choices=["cnn", "cc"],
                            help="matchers to run")
    p["eval"].add_argument("--proposals", required=True, help="proposals CSV to score")
    p["eval"].add_argument("--ot", type=float, default=0.5, help="IoU threshold O_t for a hit")
    p["bench"].add_argument("--net", default="tiny", choices=["tiny", "classic"],
                            help="objectness network to time when no model is given")
    p["bench"].add_argument("--batch", type=int, default=1, help="patches per forward pass")
    p["bench"].add_argument("--reps", type=int, default=20, help="timed repetitions")
    return parser


def _load_spec(args, kind: str):
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    d.setdefault("kind", kind)
    if d["kind"] != kind:
        raise UsageError(f"spec kind {d['kind']!r} does not fit command (expects {kind!r})")
    d["seed"] = args.seed
    d["out"] = args.out
    for key in ("options", "sweeps", "data"):
        d.setdefault(key, {})
    data = getattr(args, "data", None)
    if data:
        if not Path(data, "annotations.jsonl").is_file():
            raise DatasetError(f"no dataset at {data}")
        d["data"] = data
    return d


def _spec(d):
    from .pipelines import ExperimentSpec
    return ExperimentSpec.from_dict(d)


def cmd_gen(args):
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if "kind" in d:
        d = d.get("data", {}) if isinstance(d.get("data"), dict) else {}
    n = int(d.pop("frames", args.n))
    cfg = SceneConfig.from_dict(d)
    frames = generate_frames(cfg, n, seed=args.seed, prefix="frame")
    save_dataset(frames, args.out, cfg)
    n_obj = sum(len(f.boxes) for f in frames)
    return f"gen: {n} frames, {n_obj} objects -> {args.out}"


def cmd_train_cls(args):
    from .pipelines import run_classification
    d = _load_spec(args, "classification")
    if args.spc:
        d["sweeps"]["spc"] = args.spc
    rows = run_classification(_spec(d))
    best = max(rows, key=lambda r: r["acc_mean"])
    return f"train-cls: best accuracy {best['acc_mean']:.4f} (spc={best['spc']}) -> {args.out}"


def cmd_train_match(args):
    from .pipelines import run_matching
    rows = run_matching(_spec(_load_spec(args, "matching")))
    return f"train-match: AUC {rows[0]['auc']:.4f} -> {args.out}"


def cmd_train_obj(args):
    from .pipelines.common import Outputs
    from .pipelines.proposals import train_objectness
    d = _load_spec(args, "proposals")
    d["options"]["eps"] = args.eps
    train_objectness(_spec(d), Outputs(args.out))
    return f"train-obj: model -> {Path(args.out, 'models', 'objectness.flsn')}"


def cmd_transfer(args):
    from .pipelines import run_transfer
    d = _load_spec(args, "transfer")
    if args.spc:
        d["sweeps"]["spc"] = args.spc
    rows = run_transfer(_spec(d))
    best = max(rows, key=lambda r: r["accuracy"])
    return f"transfer: best accuracy {best['accuracy']:.4f} ({best['layer']}) -> {args.out}"


def cmd_propose(args):
    from .pipelines import run_proposals
    d = _load_spec(args, "proposals")
    d["options"].update({"t_o": args.to, "s_t": args.st, "k": args.k, "eps": args.eps})
    if args.model:
        d["options"]["model"] = args.model
    if args.tm:
        d["options"]["tm_baseline"] = True
    rows = run_proposals(_spec(d))
    r = rows[0]
    return f"propose: recall {r['recall']:.4f} with {r['n_mean']:.1f} proposals/frame -> {args.out}"


def cmd_detect(args):
    from .pipelines import run_detector
    d = _load_spec(args, "detector")
    d["options"].update({"t_o": args.to, "s_t": args.st, "eps": args.eps, "svm": args.svm})
    if args.gamma:
        d["sweeps"]["gamma"] = args.gamma
    rows = run_detector(_spec(d))
    best = max(rows, key=lambda r: r["acc_fc"])
    return f"detect: accuracy {best['acc_fc']:.4f} at gamma={best['gamma']} -> {args.out}"


def cmd_track(args):
    from .pipelines import run_tracker
    d = _load_spec(args, "tracker")
    opts = d["options"]
    opts.update({"eps": args.eps, "methods": args.methods})
    if args.k:
        opts["k"] = args.k
    if args.model:
        opts["objectness_model"] = args.model
    if args.matcher:
        opts["matcher_model"] = args.matcher
    frames = None
    if args.data:
        frames, _ = load_dataset(args.data)
        frames = sorted(frames, key=lambda f: f.id)
    d["data"] = {} if isinstance(d["data"], str) else d["data"]
    rows = run_tracker(_spec(d), frames=frames)
    return "track: " + ", ".join(f"{r['method']} CTF {r['ctf']:.4f}" for r in rows) + f" -> {args.out}"


def cmd_eval(args):
    if not args.data:
        raise UsageError("eval needs --data")
    frames, _ = load_dataset(args.data)
    props = {}
    for image_id, b in read_proposals(args.proposals):
        props.setdefault(image_id, []).append(b)
    st = proposal_stats([(props.get(f.id, []), f.boxes) for f in frames], args.ot)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_rows(Path(args.out) / "report.csv", ["o_t", "recall", "n_mean", "n_std", "abo"],
               [[args.ot, st.recall, st.n_mean, st.n_std, st.abo]])
    return f"eval: recall {st.recall:.4f}, ABO {st.abo:.4f}, {st.n_mean:.1f} proposals/frame"


def cmd_bench(args):
    import numpy as np
    from .netzoo import build_objectness_net
    net = load_model(args.model) if args.model else build_objectness_net(args.net, seed=args.seed)
    x = np.random.default_rng(args.seed).random((args.batch,) + tuple(net.input_shape), dtype=np.float32)
    mean, std = bench(lambda: net.forward(x), args.reps)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_rows(Path(args.out) / "bench.csv", ["network", "batch", "mean_ms", "std_ms"],
               [[net.name, args.batch, mean, std]])
    return f"bench: {net.name} batch {args.batch}: {mean:.2f} +- {std:.2f} ms"


HANDLERS = {
    "gen": cmd_gen, "train-cls": cmd_train_cls, "train-match": cmd_train_match,
    "train-obj": cmd_train_obj, "transfer": cmd_transfer, "propose": cmd_propose,
    "detect": cmd_detect, "track": cmd_track, "eval": cmd_eval, "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    threads = args.threads or (int(os.environ["SONARP_THREADS"]) if os.environ.get("SONARP_THREADS") else None)
    try:
        with threadpool_limits(limits=threads):
            print(HANDLERS[args.command](args))
    except UsageError as exc:
        print(f"sonarp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"sonarp: training diverged in epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, ModelFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"sonarp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"sonarp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
