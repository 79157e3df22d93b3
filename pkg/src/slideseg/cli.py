"""Command-line surface: synth, tile, stitch, train, eval, report.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
`--threads N` must take effect before numpy loads, so heavyweight imports
happen inside the command handlers, never at module scope.
"""

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class InputError(Exception):
    pass


def _apply_threads(argv):
    """Pin BLAS pools from --threads before anything imports numpy."""
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return None
    try:
        n = int(threads)
        if n < 1:
            raise ValueError
    except ValueError:
        raise InputError(f"--threads: expected a positive integer, got {threads!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)
    return n


def build_parser():
    p = argparse.ArgumentParser(
        prog="slideseg",
        description="Segmentation toolkit: data synthesis, tiling, training, scoring.",
    )
    p.add_argument(
        "--threads",
        type=int,
        metavar="N",
        help="cap math library threads; 1 also zeroes wall-time log fields for bitwise reruns",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    sp.add_argument("--n", type=int, required=True, help="number of samples")
    sp.add_argument("--size", type=int, default=64, help="square image side")
    sp.add_argument("--out", required=True, help="dataset directory to create")
    sp.add_argument("--seed", type=int, default=0)

    tp = sub.add_parser("tile", help="split an image into overlapping patches")
    tp.add_argument("--image", required=True)
    tp.add_argument("--size", type=int, required=True, help="patch side")
    tp.add_argument("--overlap", type=int, default=0)
    tp.add_argument("--out", required=True, help="directory for patches and grid.json")

    st = sub.add_parser("stitch", help="recombine patches into a full map")
    st.add_argument("--grid", required=True, help="grid.json from tile")
    st.add_argument("--patches", required=True, help="directory of patch PNGs")
    st.add_argument("--out", required=True, help="output PNG path")

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True, help="dataset directory from synth")
    tr.add_argument("--fold", type=int, default=0, help="validation fold index")
    tr.add_argument("--out", required=True, help="directory for checkpoints and losses.csv")
    tr.add_argument("--seed", type=int, help="override the config seed")

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset fold")
    ev.add_argument("--checkpoint", help="model checkpoint (omit with --oracle)")
    ev.add_argument("--data", required=True)
    ev.add_argument("--fold", type=int, help="restrict to one fold; default all samples")
    ev.add_argument("--report", required=True, help="output CSV path")
    ev.add_argument(
        "--oracle",
        action="store_true",
        help="score reference masks against themselves to vet the metric chain",
    )

    rp = sub.add_parser("report", help="render loss-curve SVGs from losses.csv")
    rp.add_argument("--curves", required=True, help="losses.csv from train")
    rp.add_argument("--out-svg", required=True, help="directory for the SVG files")
    return p


def cmd_synth(args):
    from . import data as dt

    if args.n < 0:
        raise InputError("--n must be >= 0")
    if args.size < 32:
        raise InputError("--size must be >= 32")
    out = Path(args.out)
    try:
        pairs = dt.synth_generate(args.n, args.size, seed=args.seed)
        dt.save_dataset(out, pairs, seed=args.seed)
    except OSError as exc:
        raise InputError(f"cannot write dataset: {exc}")
    print(f"wrote {args.n} samples to {out}")
    return EXIT_OK


def cmd_tile(args):
    from . import data as dt

    if args.overlap >= args.size:
        raise InputError("--overlap must be smaller than --size")
    image_path = Path(args.image)
    if not image_path.exists():
        raise InputError(f"no such image: {image_path}")
    image = dt.load_image(image_path)
    h, w = image.shape[:2]
    if args.size > min(h, w):
        raise InputError(f"--size {args.size} exceeds image dims {h}x{w}")
    grid = dt.make_grid((h, w), args.size, args.overlap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, patch in enumerate(dt.extract(image, grid)):
        dt.save_image(out / f"patch_{i:04d}.png", patch)
    (out / "grid.json").write_text(dt.grid_to_json(grid))
    print(f"wrote {len(grid.positions)} patches to {out}")
    return EXIT_OK


def cmd_stitch(args):
    import numpy as np

    from . import data as dt

    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise InputError(f"no such grid file: {grid_path}")
    try:
        grid = dt.grid_from_json(grid_path.read_text())
    except (ValueError, KeyError) as exc:
        raise InputError(f"bad grid file: {exc}")
    patches = []
    for i in range(len(grid.positions)):
        path = Path(args.patches) / f"patch_{i:04d}.png"
        if not path.exists():
            raise InputError(f"missing patch file: {path}")
        patches.append(dt.load_image(path))
    stitched = dt.stitch(patches, grid)
    dt.save_image(Path(args.out), np.clip(stitched, 0.0, 1.0))
    print(f"stitched {len(patches)} patches into {args.out}")
    return EXIT_OK


def _load_fold_samples(root, fold, *, want):
    """Collect (id, image, mask) rows for one fold ('val'), the rest ('train'), or all."""
    from . import data as dt

    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"no manifest.json under {root}")
    manifest = dt.load_manifest(root)
    ids = manifest["ids"]
    if want != "all":
        folds = manifest.get("fold", {})
        if any(folds.get(sid) is None for sid in ids):
            raise InputError("dataset has no fold assignment; regenerate with more samples")
        known = {f for f in folds.values()}
        if fold not in known:
            raise InputError(f"fold {fold} not in dataset (has {sorted(known)})")
        if want == "val":
            ids = [sid for sid in ids if folds[sid] == fold]
        else:
            ids = [sid for sid in ids if folds[sid] != fold]
    missing = [
        sid
        for sid in ids
        if not (root / "images" / f"{sid}.png").exists()
        or not (root / "masks" / f"{sid}.png").exists()
    ]
    if missing:
        raise InputError(f"missing files for ids: {', '.join(missing)}")
    return [(sid, *dt.load_pair(root, sid)) for sid in ids]


def cmd_train(args, threads):
    from . import config as cf
    from . import train as tn
    from .network import build

    cfg_file = cf.load_config(args.config)
    cfg_file.check_known(cf.ALL_KEYS)
    net_cfg = cf.network_config_from(cfg_file)
    train_cfg = cf.train_config_from(cfg_file)
    if args.seed is not None:
        train_cfg.seed = args.seed

    samples = _load_fold_samples(args.data, args.fold, want="train")
    val = _load_fold_samples(args.data, args.fold, want="val")
    shapes = {img.shape[:2] for _, img, _ in samples + val}
    if shapes != {tuple(net_cfg.input_size)}:
        raise InputError(
            f"dataset images {sorted(shapes)} do not match input_size {net_cfg.input_size}"
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build(net_cfg, seed=train_cfg.seed)
    log = tn.train(
        model,
        [(img, m) for _, img, m in samples],
        [(img, m) for _, img, m in val],
        train_cfg,
        out_dir=str(out),
        record_seconds=threads != 1,
    )
    print(f"trained {train_cfg.epochs} epochs; best val Dice {log.best_val_dice:.4f} at epoch {log.best_epoch}")
    print(f"checkpoints and losses.csv in {out}")
    return EXIT_OK


def cmd_eval(args):
    from . import train as tn
    from .checkpoint import load_checkpoint
    from .tensor_io import FormatError

    want = "all" if args.fold is None else "val"
    samples = _load_fold_samples(args.data, args.fold, want=want)
    if not samples:
        raise InputError("no samples selected")
    if args.oracle:
        report = tn.evaluate(None, samples, oracle=True)
    else:
        if not args.checkpoint:
            raise InputError("--checkpoint is required unless --oracle is set")
        ckpt_path = Path(args.checkpoint)
        if not ckpt_path.exists():
            raise InputError(f"no such checkpoint: {ckpt_path}")
        try:
            model = load_checkpoint(ckpt_path)
        except FormatError as exc:
            raise InputError(f"bad checkpoint: {exc}")
        report = tn.evaluate(model, samples)
    Path(args.report).write_text(report.csv())
    print(f"wrote {args.report}")
    print(f"S_wsi {report.s_wsi:.6f}  aggregate DC {report.aggregate['dc']:.6f}")
    return EXIT_OK


def cmd_report(args):
    from . import report as rp

    curves = Path(args.curves)
    if not curves.exists():
        raise InputError(f"no such curves file: {curves}")
    try:
        written = rp.write_report(curves.read_text(), args.out_svg)
    except rp.CurvesError as exc:
        raise InputError(f"bad curves file: {exc}")
    print(f"wrote {len(written)} SVGs to {args.out_svg}")
    return EXIT_OK


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        threads = _apply_threads(argv)
    except InputError as exc:
        print(f"slideseg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "tile":
            return cmd_tile(args)
        if args.command == "stitch":
            return cmd_stitch(args)
        if args.command == "train":
            return cmd_train(args, threads)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "report":
            return cmd_report(args)
        raise AssertionError(f"unhandled command {args.command}")
    except InputError as exc:
        print(f"slideseg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # late import keeps numpy out of startup
        from .config import ConfigError
        from .train import NonFiniteLossError

        if isinstance(exc, ConfigError):
            print(f"slideseg: config error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        if isinstance(exc, NonFiniteLossError):
            print(f"slideseg: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, (ValueError, OSError)):
            print(f"slideseg: error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        raise


if __name__ == "__main__":
    sys.exit(main())
