"""Command-line surface tying the engine together.

Subcommands: summary, cost, gradcheck, make-toy-data, train, eval,
predict, bench. Exit codes: 0 success, 1 runtime failure (missing or
malformed files, backend unavailable), 2 usage or validation error.
"""
import argparse
import sys

import numpy as np

from . import bench as bench_mod
from . import kernels
from .analyze import cost_report, format_records, format_table, _node_params
from .io import (FileFormatError, load_dataset, read_checkpoint, read_tensor,
                 save_dataset, write_checkpoint, write_tensor)
from .model import (GraphBuildError, NetConfig, build_network, forward,
                    infer_shapes, init_params)
from .tensor import INT, REAL
from .train import TrainConfig, evaluate, make_toy_dataset, train_loop
from .verify import (END_TO_END_TOL, corrupted_gradcheck, end_to_end_gradcheck,
                     primitive_gradchecks)

META_PREFIX = "meta."


def config_to_meta(config):
    """Encode a NetConfig as int32 tensors for embedding in a checkpoint."""
    return {
        f"{META_PREFIX}num_classes": np.array([config.num_classes], dtype=INT),
        f"{META_PREFIX}in_channels": np.array([config.in_channels], dtype=INT),
        f"{META_PREFIX}input_hw": np.array(config.input_hw, dtype=INT),
        f"{META_PREFIX}bypass": np.array([1 if config.bypass else 0], dtype=INT),
        f"{META_PREFIX}encoder_widths": np.array(config.encoder_widths, dtype=INT),
        f"{META_PREFIX}decoder_widths": np.array(config.decoder_widths, dtype=INT),
    }


def config_from_meta(store):
    """Split a checkpoint store into (NetConfig, parameter dict)."""
    meta = {k: v for k, v in store.items() if k.startswith(META_PREFIX)}
    params = {k: v for k, v in store.items() if not k.startswith(META_PREFIX)}
    needed = ("num_classes", "in_channels", "input_hw", "bypass",
              "encoder_widths", "decoder_widths")
    for name in needed:
        if META_PREFIX + name not in meta:
            raise FileFormatError(0, META_PREFIX + name,
                                  "checkpoint lacks model metadata record")
    config = NetConfig(
        num_classes=int(meta[f"{META_PREFIX}num_classes"][0]),
        in_channels=int(meta[f"{META_PREFIX}in_channels"][0]),
        input_hw=tuple(int(v) for v in meta[f"{META_PREFIX}input_hw"]),
        bypass=bool(int(meta[f"{META_PREFIX}bypass"][0])),
        encoder_widths=meta[f"{META_PREFIX}encoder_widths"].tolist(),
        decoder_widths=meta[f"{META_PREFIX}decoder_widths"].tolist(),
    )
    return config, params


def _load_model(path):
    store = read_checkpoint(path)
    config, params = config_from_meta(store)
    graph = build_network(config)
    expected = graph.param_shapes()
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))[:3]
        extra = sorted(set(params) - set(expected))[:3]
        raise FileFormatError(0, "records",
                              f"parameters do not match the stored architecture "
                              f"(missing {missing}, unexpected {extra})")
    for key, shape in expected.items():
        if tuple(params[key].shape) != tuple(shape):
            raise FileFormatError(0, key,
                                  f"stored shape {params[key].shape}, expected {shape}")
        params[key] = params[key].astype(REAL, copy=False)
    return config, graph, params


def _config_from_args(args):
    return NetConfig.scaled(
        num_classes=args.classes,
        width_div=getattr(args, "width_div", 1),
        input_hw=(args.height, args.width),
        bypass=not getattr(args, "no_bypass", False),
    )


def _stage_spans(config):
    spans = [("initial", "init.", (config.in_channels, config.encoder_widths[0][0]), "init.pool")]
    for i, (m, n) in enumerate(config.encoder_widths, 1):
        spans.append((f"encoder {i}", f"enc{i}.", (m, n), f"enc{i}.unit2.relu2"))
    for i in (4, 3, 2, 1):
        m, n = config.decoder_widths[i - 1]
        out = f"bypass{i}" if config.bypass else f"dec{i}.relu3"
        spans.append((f"decoder {i}", f"dec{i}.", (m, n), out))
    spans.append(("final", "final.", (config.encoder_widths[0][0], config.num_classes),
                  "final.tconv2"))
    return spans


def cmd_summary(args):
    config = _config_from_args(args)
    graph = build_network(config)
    shapes = infer_shapes(graph, config.input_hw, strict=True)
    stage_params = {}
    for node in graph.nodes:
        stage = node.path.split(".")[0] + "."
        stage_params[stage] = stage_params.get(stage, 0) + _node_params(node)

    print(f"classes {config.num_classes}, input {config.in_channels}x"
          f"{config.input_hw[0]}x{config.input_hw[1]}, bypass "
          f"{'on' if config.bypass else 'off'}")
    print()
    print(f"{'stage':<12} {'in->out ch':<12} {'output CxHxW':<18} {'params':>12}")
    total = 0
    for name, prefix, (m, n), out_path in _stage_spans(config):
        c, h, w = shapes[out_path]
        p = stage_params.get(prefix, 0)
        total += p
        print(f"{name:<12} {f'({m},{n})':<12} {f'{c}x{h}x{w}':<18} {p:>12,}")
    print(f"{'total':<12} {'':<12} {'':<18} {total:>12,}")
    return 0


def cmd_cost(args):
    config = _config_from_args(args)
    graph = build_network(config)
    report = cost_report(graph, (args.res_height, args.res_width))
    if args.records:
        print(format_records(report))
    else:
        print(f"resolution {config.in_channels}x{args.res_height}x{args.res_width} "
              f"(batch dimension excluded)")
        print(format_table(report, bytes_per_param=2))
    return 0


def cmd_gradcheck(args):
    ok = True
    for name, rep in primitive_gradchecks(seeds=range(args.seed, args.seed + 10)):
        status = "PASS" if rep.passed else "FAIL"
        ok = ok and rep.passed
        print(f"{status} {name} max_rel_err={rep.max_rel_err:.3e} tol={rep.tolerance:g}")
    worst, _ = end_to_end_gradcheck(seed=args.seed)
    e2e_ok = worst <= END_TO_END_TOL
    ok = ok and e2e_ok
    print(f"{'PASS' if e2e_ok else 'FAIL'} end_to_end[width/16] "
          f"max_rel_err={worst:.3e} tol={END_TO_END_TOL:g}")
    corrupt = corrupted_gradcheck(seed=args.seed)
    caught = not corrupt.passed
    ok = ok and caught
    print(f"{'PASS' if caught else 'FAIL'} corrupted-gradient self-test "
          f"({'detected' if caught else 'NOT detected'}, err={corrupt.max_rel_err:.3e})")
    return 0 if ok else 1


def cmd_make_toy_data(args):
    samples = make_toy_dataset(args.num, (args.height, args.width),
                               args.classes, args.seed)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples ({args.classes} classes, "
          f"{args.height}x{args.width}) to {args.out}")
    return 0


def _infer_classes(dataset):
    top = 0
    for s in dataset:
        scored = s.labels[s.labels != 255]
        if scored.size:
            top = max(top, int(scored.max()))
    return top + 1


def cmd_train(args):
    dataset = load_dataset(args.data)
    classes = args.classes if args.classes else _infer_classes(dataset)
    h, w = dataset[0].image.shape[1], dataset[0].image.shape[2]
    config = NetConfig.scaled(num_classes=classes, width_div=args.width_div,
                              input_hw=(h, w), bypass=not args.no_bypass)
    graph = build_network(config)
    params = init_params(graph, args.seed)
    tconf = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                        epochs=args.epochs, seed=args.seed,
                        use_class_weights=not args.no_class_weights)
    lines = []

    def log_fn(stats):
        print(stats.line())
        lines.append(stats.line())

    train_loop(graph, params, dataset, tconf, log_fn=log_fn)
    store = dict(params)
    store.update(config_to_meta(config))
    write_checkpoint(args.out, store)
    log_path = args.out + ".log"
    with open(log_path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    print(f"checkpoint written to {args.out} (log: {log_path})")
    return 0


def cmd_eval(args):
    _, graph, params = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate(graph, params, dataset)
    print(report.format_table())
    return 0


def cmd_predict(args):
    _, graph, params = _load_model(args.checkpoint)
    x = read_tensor(args.input)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"input tensor must be (C,H,W) or (N,C,H,W), got shape {x.shape}")
    logits, _ = forward(graph, params, x.astype(REAL, copy=False), mode="infer")
    pred = logits.argmax(axis=1).astype(INT)
    out = pred[0] if squeeze else pred
    write_tensor(args.out, out)
    print(f"wrote prediction {'x'.join(str(d) for d in out.shape)} to {args.out}")
    return 0


def cmd_bench(args):
    if (args.height is None) != (args.width is None):
        raise ValueError("--height and --width must be given together")
    if args.height is not None:
        resolutions = [(args.height, args.width)]
    else:
        resolutions = bench_mod.DEFAULT_RESOLUTIONS
    if args.backend == "both":
        backends = ["numpy"] + (["compiled"] if kernels.HAVE_COMPILED else [])
        if len(backends) == 1:
            print("note: compiled backend not built; benching numpy only", file=sys.stderr)
    else:
        backends = [args.backend]
    rows = bench_mod.run_bench(resolutions, num_classes=args.classes,
                               width_div=args.width_div, iters=args.iters,
                               warmup=args.warmup, backends=backends, seed=args.seed)
    print(bench_mod.format_rows(rows))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="linkseg",
                                description="Bypass-linked encoder-decoder segmentation engine")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def model_flags(sp, classes=20, h=512, w=1024):
        sp.add_argument("--classes", type=int, default=classes)
        sp.add_argument("--height", type=int, default=h)
        sp.add_argument("--width", type=int, default=w)
        sp.add_argument("--width-div", type=int, default=1,
                        help="divide every stage width (smaller, faster model)")
        sp.add_argument("--no-bypass", action="store_true",
                        help="drop the encoder-to-decoder addition edges")

    sp = sub.add_parser("summary", help="architecture table with shapes and parameters")
    model_flags(sp)
    sp.set_defaults(func=cmd_summary)

    sp = sub.add_parser("cost", help="parameter/MAC/FLOP/size report")
    model_flags(sp)
    sp.add_argument("--res-height", type=int, default=360,
                    help="analysis resolution height (default 360)")
    sp.add_argument("--res-width", type=int, default=640,
                    help="analysis resolution width (default 640)")
    sp.add_argument("--records", action="store_true",
                    help="emit tab-separated per-node records instead of the table")
    sp.set_defaults(func=cmd_cost)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("make-toy-data", help="generate a synthetic dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--num", type=int, default=200)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=cmd_make_toy_data)

    sp = sub.add_parser("train", help="train on a dataset directory, write a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=0,
                    help="class count (default: inferred from labels)")
    sp.add_argument("--width-div", type=int, default=1)
    sp.add_argument("--lr", type=float, default=5e-4)
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--batch", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-bypass", action="store_true")
    sp.add_argument("--no-class-weights", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="argmax label map for one image tensor")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("bench", help="forward latency: median/p10/p90 ms and fps")
    sp.add_argument("--height", type=int, default=None)
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--iters", type=int, default=20)
    sp.add_argument("--warmup", type=int, default=3)
    sp.add_argument("--classes", type=int, default=20)
    sp.add_argument("--width-div", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--backend", choices=["auto", "numpy", "compiled", "both"],
                    default="auto")
    sp.set_defaults(func=cmd_bench)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (GraphBuildError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
