"""Command line entry point: ``styleretouch <subcommand> ...``.

Exit status is 0 on success, 1 when a step fails at run time (unreadable
file, fingerprint mismatch, non-finite loss, failed gradient check) and 2 for
invalid or contradictory flags.  ``STYLERETOUCH_THREADS`` caps the BLAS thread
pool; it must be set before the process starts.  Two invocations writing the
same output path at once leave that path in an undefined state.
"""

from __future__ import annotations

import os

_threads = os.environ.get("STYLERETOUCH_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .exceptions import ConfigurationError, FingerprintMismatch, NonFiniteError  # noqa: E402

log = logging.getLogger("styleretouch")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".ppm", ".bmp", ".tif", ".tiff"}


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _list_images(d: Path) -> list[Path]:
    if not d.is_dir():
        raise ConfigurationError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# --- subcommands -----------------------------------------------------------


def cmd_make_dataset(args) -> int:
    from .colorlab import load_image
    from .presetlab import make_dataset, preset_pool, synth_corpus

    if args.sources:
        paths = _list_images(Path(args.sources))
        if not paths:
            raise ConfigurationError(f"no images found in {args.sources}")
        sources = [load_image(p) for p in paths]
        names = [p.stem for p in paths]
    else:
        sources = synth_corpus(args.n_images, size=args.size, seed=args.seed, n_families=args.families)
        names = None
    presets = preset_pool(args.presets, seed=args.seed)
    recs = make_dataset(sources, presets, args.k, args.out, seed=args.seed,
                        heldout_clusters=args.heldout_clusters, heldout_presets=args.heldout_presets,
                        presets_per_cluster=args.presets_per_cluster, names=names)
    n_held = sum(r.split == "heldout" for r in recs)
    print(f"pairs {len(recs)}  train {len(recs) - n_held}  heldout {n_held}")
    print(f"manifest {Path(args.out) / 'manifest.jsonl'}")
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .trainer import PairDataset, TrainConfig, train

    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, crop=args.crop, lr=args.lr,
                      lr_schedule=args.lr_schedule, seed=args.seed, checkpoint_every=args.checkpoint_every,
                      log_every=args.log_every, latent_dim=args.latent_dim, grid=args.grid)
    split = None if args.split == "all" else args.split
    data = PairDataset.from_manifest(args.manifest, split=split)
    if len(data) == 0:
        raise ConfigurationError(f"no pairs with split {args.split!r} in {args.manifest}")
    res = train(cfg, data, out_dir=args.out, resume=args.resume)
    out = Path(args.out)
    if res.history:
        plot_loss_curve(res.history, out / "loss.png")
        print(f"final loss {res.history[-1][1]:.6f} at step {res.history[-1][0]}")
    print(f"model {out / 'model.irtc'}  ({res.model.n_params} parameters, {res.seconds:.1f}s)")
    return 0


def _load_model(path):
    from .model import RetouchModel

    return RetouchModel.load(path)


def cmd_build_library(args) -> int:
    from .presetlab import read_manifest, resolve
    from .rar import build_library

    model = _load_model(args.model)
    recs = [r for r in read_manifest(args.manifest) if args.split == "all" or r.split == args.split]
    if args.refs:
        keep = set(json.loads(Path(args.refs).read_text())["targets"])
        recs = [r for r in recs if r.target_path in keep]
    if not recs:
        raise ConfigurationError("no reference pairs selected")
    pairs = [(resolve(args.manifest, r.input_path), resolve(args.manifest, r.target_path)) for r in recs]
    lib = build_library(pairs, model, paths=[(r.input_path, r.target_path) for r in recs])
    lib.save(args.out)
    print(f"library {args.out}: {len(lib)} entries, model {lib.fingerprint[:12]}")
    return 0


def cmd_select_refs(args) -> int:
    from .colorlab import color_tone_feature, load_image
    from .presetlab import read_manifest, resolve
    from .refselect import select_references

    pool = Path(args.pool)
    if pool.is_dir():
        items = [{"input": str(p)} for p in _list_images(pool)]
        files = [Path(i["input"]) for i in items]
    else:
        recs = read_manifest(pool)
        if args.split != "all":
            recs = [r for r in recs if r.split == args.split]
        items = [{"input": r.input_path, "target": r.target_path} for r in recs]
        files = [resolve(pool, r.input_path) for r in recs]
    if args.k > len(items):
        raise ConfigurationError(f"--k {args.k} exceeds pool size {len(items)}")
    feats = [color_tone_feature(load_image(f)) for f in files]
    order = select_references(feats, args.k)
    chosen = [items[i] for i in order]
    doc = {"k": args.k, "indices": order, "files": [c["input"] for c in chosen]}
    if all("target" in c for c in chosen):
        doc["targets"] = [c["target"] for c in chosen]
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    for i, c in zip(order, chosen):
        print(f"{i}\t{c['input']}")
    return 0


def cmd_retouch(args) -> int:
    from .colorlab import load_image, save_image
    from .plotting import plot_retrieval
    from .rar import RarConfig, ReferenceLibrary, retouch_query

    model = _load_model(args.model)
    lib = ReferenceLibrary.load(args.library)
    x = load_image(args.input)
    res = retouch_query(x, lib, model, RarConfig(top_k=args.top_k, tau=args.tau))
    save_image(args.out, res.image)
    print("id\tsimilarity\tweight")
    for n, w in zip(res.neighbors, res.weights):
        print(f"{n.id}\t{n.similarity:.6f}\t{w:.6f}")
    if args.figure:
        plot_retrieval(res.neighbors, res.weights, args.figure)
    return 0


def cmd_style_transfer(args) -> int:
    from .colorlab import load_image, save_image
    from .decoder import decode_lut_bake, write_cube
    from .rar import style_transfer

    model = _load_model(args.model)
    content, style = load_image(args.content), load_image(args.style)
    out = style_transfer(content, style, model)
    save_image(args.out, out)
    if args.cube:
        write_cube(args.cube, decode_lut_bake(model.encode(content, style), model.params, n=args.lut_size))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .colorlab import load_image
    from .metrics import MetricReport
    from .plotting import plot_metric_distribution

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = {p.relative_to(pred_dir).as_posix(): p for p in _walk_images(pred_dir)}
    gts = {p.relative_to(gt_dir).as_posix(): p for p in _walk_images(gt_dir)}
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ConfigurationError(f"{len(missing)} ground-truth images have no prediction, e.g. {missing[0]}")
    if not gts:
        raise ConfigurationError(f"no images in {gt_dir}")
    report = MetricReport()
    for key in sorted(gts):
        group = Path(key).parent.as_posix() if args.group_by_dir else None
        report.add(key, load_image(preds[key]), load_image(gts[key]), group=group)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    report.write_summary(out / "summary.json")
    plot_metric_distribution(report.rows, out / "metrics.png")
    s = report.summary()
    psnr = s.get("psnr_group_mean", s["psnr_mean"])
    ssim = s.get("ssim_group_mean", s["ssim_mean"])
    print(f"n {s['n']}  psnr {'inf' if math.isinf(psnr) else f'{psnr:.3f}'}  ssim {ssim:.4f}")
    return 0


def _walk_images(d: Path) -> list[Path]:
    if not d.is_dir():
        raise ConfigurationError(f"{d} is not a directory")
    return sorted(p for p in d.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_grad_check(args) -> int:
    from .model import Batch, RetouchModel
    from .netcore import gradient_check, latent_gradient_check

    model = _load_model(args.model) if args.model else RetouchModel.create(seed=args.seed)
    model = model.astype(np.float64)
    rng = np.random.default_rng(args.seed)
    shape = (args.pairs, args.crop, args.crop, 3)
    batch = Batch(rng.random(shape), rng.random(shape))
    rep = gradient_check(model, batch, h=args.h, max_per_tensor=args.sample, seed=args.seed)
    zrep = latent_gradient_check(model, batch, h=args.h)
    for name, err in {**rep.per_tensor, **zrep.per_tensor}.items():
        log.info("%-14s %.3e", name, err)
    worst = max(rep.max_rel_err, zrep.max_rel_err)
    print(f"max rel-err {worst:.3e}  (params {rep.max_rel_err:.3e} over {rep.n_checked} entries, "
          f"dL/dz {zrep.max_rel_err:.3e}; reduced step {rep.n_reduced_step + zrep.n_reduced_step}, "
          f"skipped {rep.n_skipped + zrep.n_skipped})")
    ok = worst < args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="styleretouch", formatter_class=_Formatter,
                                description="Example-based color/tone retouching with a style auto-encoder.",
                                epilog="Set STYLERETOUCH_THREADS to limit BLAS threads.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=_Formatter)
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice")
        sp.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
        sp.set_defaults(func=fn)
        return sp

    sp = add("make-dataset", cmd_make_dataset, "render a paired dataset with synthetic presets")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--sources", help="directory of source images (default: synthetic corpus)")
    sp.add_argument("--n-images", type=_positive_int, default=240, help="synthetic corpus size")
    sp.add_argument("--size", type=_positive_int, default=32, help="synthetic image side")
    sp.add_argument("--families", type=_positive_int, default=12, help="synthetic color families")
    sp.add_argument("--presets", type=_positive_int, default=48, help="preset pool size (first is identity)")
    sp.add_argument("--k", type=_positive_int, default=12, help="k-means clusters on ab histograms")
    sp.add_argument("--heldout-clusters", type=_nonneg_int, default=2, help="clusters reserved for evaluation")
    sp.add_argument("--heldout-presets", type=_nonneg_int, default=8, help="presets reserved for evaluation")
    sp.add_argument("--presets-per-cluster", type=_positive_int, default=8, help="style groups per cluster")

    sp = add("train", cmd_train, "train the style auto-encoder")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="directory for model.irtc, loss.csv, loss.png")
    sp.add_argument("--split", default="train", help="manifest split to train on, or 'all'")
    sp.add_argument("--steps", type=_positive_int, default=10_000, help="optimizer steps")
    sp.add_argument("--batch-size", type=_positive_int, default=8, help="pairs per step")
    sp.add_argument("--crop", type=_positive_int, default=16, help="square crop side")
    sp.add_argument("--lr", type=_positive_float, default=1e-3, help="Adam learning rate")
    sp.add_argument("--lr-schedule", choices=("constant", "cosine"), default="cosine", help="learning-rate decay")
    sp.add_argument("--latent-dim", type=_positive_int, default=64, help="style latent length")
    sp.add_argument("--grid", type=_positive_int, default=32, help="encoder resampling grid side")
    sp.add_argument("--checkpoint-every", type=_nonneg_int, default=1000, help="steps between checkpoints (0: end only)")
    sp.add_argument("--log-every", type=_nonneg_int, default=100, help="steps between log lines with -v")
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = add("build-library", cmd_build_library, "encode reference pairs into a retrieval library")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="all", help="manifest split to use, or 'all'")
    sp.add_argument("--refs", help="refs.json from select-refs; restricts the library to those pairs")

    sp = add("select-refs", cmd_select_refs, "pick a diverse, representative reference subset")
    sp.add_argument("--pool", required=True, help="image directory or manifest.jsonl")
    sp.add_argument("--k", type=_positive_int, required=True)
    sp.add_argument("--out", required=True, help="refs.json with files in selection order")
    sp.add_argument("--split", default="all", help="manifest split to use, or 'all'")

    sp = add("retouch", cmd_retouch, "retouch a query with retrieved reference styles")
    sp.add_argument("--library", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--top-k", type=_positive_int, default=3, help="references retrieved (K)")
    sp.add_argument("--tau", type=_positive_float, default=0.1, help="softmax temperature (inf: plain mean)")
    sp.add_argument("--figure", help="optional PNG of retrieved ids, similarities and weights")

    sp = add("style-transfer", cmd_style_transfer, "apply the color/tone of a style image to a content image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--content", required=True)
    sp.add_argument("--style", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--cube", help="also write the transform as a .cube 3D LUT")
    sp.add_argument("--lut-size", type=_positive_int, default=33, help="LUT lattice points per axis")

    sp = add("eval", cmd_eval, "PSNR/SSIM of predictions against ground truth")
    sp.add_argument("--pred", required=True, help="directory of predictions")
    sp.add_argument("--gt", required=True, help="directory of ground truth, matched by relative path")
    sp.add_argument("--out", default="eval", help="directory for metrics.csv, summary.json, metrics.png")
    sp.add_argument("--group-by-dir", action="store_true", help="average per subdirectory first")

    sp = add("grad-check", cmd_grad_check, "finite-difference check of all gradients")
    sp.add_argument("--model", help="checkpoint to check (default: fresh model from --seed)")
    sp.add_argument("--pairs", type=_positive_int, default=2, help="random image pairs in the probe batch")
    sp.add_argument("--crop", type=_positive_int, default=2, help="side of the random probe images")
    sp.add_argument("--h", type=_positive_float, default=1e-3, help="central-difference step")
    sp.add_argument("--sample", type=_positive_int, default=None, help="check at most this many entries per tensor")
    sp.add_argument("--tol", type=_positive_float, default=1e-3, help="pass threshold on max relative error")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FingerprintMismatch, NonFiniteError, OSError, KeyError) as exc:
        print(f"styleretouch {args.command}: error: {exc}", file=sys.stderr)
        return 1


run = main

if __name__ == "__main__":
    sys.exit(main())
