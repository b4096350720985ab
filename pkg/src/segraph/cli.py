"""``segraph`` command line: gen, segment, train, eval, compare, weights."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import render as rnd
from .config import ConfigError, RunConfig, effective_dict, load_run_config, with_overrides
from .diffnet import checkpoint
from .evaluation import confusion_heatmap, evaluate, format_report_csv, format_report_text
from .gnn import SceneGnn, format_edge_weights, forward
from .graph import ALL, format_graph
from .pipeline import prepare_frame, prepare_frames, with_k
from .pointcloud import read_xyzl
from .segmentation import format_segments
from .synthdata import SceneSpec, generate_dataset, load_spec
from .training import NonFiniteGradient, train

log = logging.getLogger("segraph")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_NUMERIC = 6

EPILOG = """exit codes:
  0  success
  1  unexpected failure
  2  bad command-line usage
  3  missing input file
  4  malformed configuration
  5  invalid data (shape errors, empty dataset, bad checkpoint)
  6  non-finite gradient during training

environment:
  SEGRAPH_LOG=error|info|debug   log verbosity (default info)
"""

COMPARE_GRID = [("unary", None), ("equal", 1), ("equal", 3), ("equal", 5), ("equal", ALL), ("attention", ALL)]


def _configure_logging():
    level = os.environ.get("SEGRAPH_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"SEGRAPH_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig().validate()
    return with_overrides(cfg, seed=args.seed, mode=args.mode, k=args.k, iters=args.iters, loss=args.loss,
                          epochs=getattr(args, "epochs", None))


def _log_effective(cfg: RunConfig, out_dir):
    text = json.dumps(effective_dict(cfg), indent=2, sort_keys=True)
    log.info("effective config:\n%s", text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(text + "\n")


def _out(args, default):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _model(cfg: RunConfig, state=None):
    model = SceneGnn(cfg.gnn_config(), seed=cfg.train_config().seed)
    if state is not None:
        try:
            model.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"checkpoint does not fit the configured model: {exc}") from exc
    return model


def _frames(cfg: RunConfig, split, k=None):
    frames = cfg.load_frames(split)
    return prepare_frames(frames, cfg.projection_config(), cfg.segmentation_config(),
                          cfg.neighbor_count() if k is None else k)


def cmd_gen(args):
    try:
        spec = load_spec(args.config) if args.config else SceneSpec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.seed is not None:
        spec.seed = args.seed
    out = _out(args, "dataset")
    path = generate_dataset(spec, args.n_train, args.n_test, out)
    log.info("wrote %d frames, manifest %s", args.n_train + args.n_test, path)
    print(path)


def cmd_segment(args):
    cfg = _run_config(args)
    frame = read_xyzl(args.frame)
    out = _out(args, "segment_out")
    _log_effective(cfg, out)
    p = prepare_frame(frame, cfg.projection_config(), cfg.segmentation_config(), cfg.neighbor_count(),
                      keep_image=True)
    with open(os.path.join(out, "segments.txt"), "w") as fh:
        fh.write(format_segments(p.segments))
    with open(os.path.join(out, "graph.txt"), "w") as fh:
        fh.write(format_graph(p.graph))
    if args.render:
        for mode in rnd.MODES:
            rnd.write_ppm(os.path.join(out, f"{mode}.ppm"), rnd.render(p.image, mode))
        overlay = rnd.draw_graph(rnd.render(p.image, "segments"), p.boxes, p.graph.neighbors)
        rnd.write_ppm(os.path.join(out, "graph.ppm"), overlay)
    print(f"{len(p.segments)} segments, {int(p.image.n_dropped)} points outside the view")


def _train_run(cfg: RunConfig, out_dir, train_frames=None, test_frames=None):
    train_frames = _frames(cfg, "train") if train_frames is None else train_frames
    test_frames = _frames(cfg, "test") if test_frames is None else test_frames
    if not train_frames:
        raise ValueError("training set has no labelled segments")
    model = _model(cfg)
    result = train(model, train_frames, cfg.train_config(), test_frames, out_dir, eval_every=cfg.eval_every)
    return model, result, test_frames


def cmd_train(args):
    cfg = _run_config(args)
    out = _out(args, "train_out")
    _log_effective(cfg, out)
    _, result, _ = _train_run(cfg, out)
    last = result.history[-1] if result.history else None
    f1 = last and last["test_f1_mean"]
    print(f"final loss {last['train_loss']:.5f}, test F1 {f1 if f1 is None else round(f1, 4)}" if last else "0 epochs")


def _write_eval(out, name, cm):
    m = cm.metrics()
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(format_report_csv({name: m}))
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write(format_report_text({name: m}))
    with open(os.path.join(out, "confusion.csv"), "w") as fh:
        fh.write(cm.to_csv())
    rnd.write_ppm(os.path.join(out, "confusion.ppm"), confusion_heatmap(cm))
    return m


def cmd_eval(args):
    cfg = _run_config(args)
    out = _out(args, "eval_out")
    _log_effective(cfg, out)
    model = _model(cfg, checkpoint.load(args.checkpoint))
    cm = evaluate(model, _frames(cfg, "test"))
    m = _write_eval(out, cfg.gnn_config().mode, cm)
    print(format_report_text({cfg.gnn_config().mode: m}), end="")


def cmd_compare(args):
    cfg = _run_config(args)
    out = _out(args, "compare_out")
    _log_effective(cfg, out)
    base_train = _frames(cfg, "train", ALL)
    base_test = _frames(cfg, "test", ALL)
    rows, results = [], {}
    for mode, k in COMPARE_GRID:
        name = mode if k is None else f"{mode}-{k}nn" if k != ALL else f"{mode}-all"
        run_cfg = with_overrides(cfg, mode=mode, k=ALL if k is None else k)
        tr = [with_k(f, run_cfg.neighbor_count()) for f in base_train]
        te = [with_k(f, run_cfg.neighbor_count()) for f in base_test]
        log.info("compare: training %s", name)
        model, _, _ = _train_run(run_cfg, os.path.join(out, name), tr, te)
        m = evaluate(model, te).metrics()
        results[name] = m
        rows.append((mode, "-" if k is None else str(k), m.macro_f1))
    with open(os.path.join(out, "compare.csv"), "w") as fh:
        fh.write("mode,k,f1_mean\n" + "".join(f"{mo},{k},{f:.6f}\n" for mo, k, f in rows))
    with open(os.path.join(out, "report.csv"), "w") as fh:
        fh.write(format_report_csv(results))
    text = format_report_text(results)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


def cmd_weights(args):
    cfg = _run_config(args)
    model = _model(cfg, checkpoint.load(args.checkpoint))
    if model.cfg.mode != "attention":
        raise ValueError("edge weights are only learned in attention mode")
    p = prepare_frame(read_xyzl(args.frame), cfg.projection_config(), cfg.segmentation_config(),
                      cfg.neighbor_count())
    if not p.n_nodes:
        raise ValueError("frame has no labelled segments")
    model.eval()
    res = forward(model, p.inputs, p.boxes, p.edges)
    nodes = None if args.node is None else [args.node]
    if args.node is not None and not 0 <= args.node < p.n_nodes:
        raise ValueError(f"node {args.node} out of range [0, {p.n_nodes})")
    lines = format_edge_weights(p.edges, res.weights, nodes).splitlines()
    if args.top:
        lines = [ln for ln in lines if int(ln.split()[3]) <= args.top]
    text = "# i j w_ij rank\n" + "".join(ln + "\n" for ln in lines)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "weights.txt"), "w") as fh:
            fh.write(text)
    print(text, end="")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config (scene spec for gen)")
    common.add_argument("--seed", type=int, help="training/model seed (scene seed for gen)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--mode", choices=("unary", "equal", "attention"))
    common.add_argument("--k", help="neighbor count N or 'all'")
    common.add_argument("--iters", type=int, metavar="T", help="message passing iterations")
    common.add_argument("--loss", choices=("center", "center+neighbor"))
    common.add_argument("--render", action="store_true", help="write PPM renders")

    parser = argparse.ArgumentParser(prog="segraph", description=__doc__, epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("segment", parents=[common], help="segment one .xyzl frame")
    p.add_argument("frame")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="train and score every baseline")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("weights", parents=[common], help="dump learned edge weights for a frame")
    p.add_argument("checkpoint")
    p.add_argument("frame")
    p.add_argument("--node", type=int)
    p.add_argument("--top", type=int, default=0)
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        _configure_logging()
        args.func(args)
    except FileNotFoundError as exc:
        print(f"segraph: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"segraph: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradient as exc:
        print(f"segraph: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"segraph: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"segraph: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
