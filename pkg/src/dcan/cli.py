"""``dcan`` command-line tool: one subcommand per pipeline stage.

Every command reads and writes plain files, is deterministic given its
inputs and seeds, exits 0 on success, and on failure prints a single
``dcan <command>: <ErrorKind>: <message>`` line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from dcan import config as C
from dcan import fusion, gradcheck, io, metrics, morphology, net
from dcan.augment import Sample
from dcan.synth import generate_dataset
from dcan.tensor import LabelError, ShapeError, make_rng

log = logging.getLogger("dcan")

# exit status per failure kind; argparse itself uses 2 for usage errors
EXIT_CODES = (
    (FileNotFoundError, 3),
    (io.FormatError, 4),
    (C.ConfigError, 5),
    (ShapeError, 6),
    (LabelError, 7),
    (net.TrainingError, 8),
)


class CheckFailed(RuntimeError):
    """A self-check ran to completion but did not pass."""


def _config(path) -> C.Config:
    return C.load(path) if path else C.validate(C.Config())


def _need_dir(path) -> None:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such directory: {path}")


def _stem(name: str) -> str:
    return os.path.splitext(name)[0]


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    cfg = _config(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    samples, manifest = generate_dataset(cfg.scene, cfg.data.n_scenes, make_rng(cfg.data.seed))
    for (scene_id, _), s in zip(manifest, samples):
        io.write_ppm(os.path.join(args.out_dir, scene_id + ".ppm"), s.image)
        io.write_imask(os.path.join(args.out_dir, scene_id + ".imask"), s.instances)
    io.write_manifest(os.path.join(args.out_dir, "manifest.txt"), manifest)
    log.info("wrote %d scenes to %s", len(samples), args.out_dir)


def cmd_make_labels(args) -> None:
    instances = io.read_imask(args.mask_in)
    io.write_imask(args.contour_out, morphology.extract_contour_labels(instances, args.radius).astype(np.int64))


def load_training_dir(data_dir):
    """``(image, instances)`` pairs for every ``X.ppm`` with a matching ``X.imask``."""
    _need_dir(data_dir)
    samples = []
    for name in io.list_with_suffix(data_dir, ".ppm"):
        mask_path = os.path.join(data_dir, _stem(name) + ".imask")
        if not os.path.exists(mask_path):
            raise FileNotFoundError(f"{mask_path}: no mask for image {name}")
        image = io.read_ppm(os.path.join(data_dir, name))
        labels = io.read_imask(mask_path)
        if labels.shape != image.shape[1:]:
            raise ShapeError(f"{name}: image is {image.shape[1:]} but its mask is {labels.shape}")
        samples.append(Sample(image, labels))
    if not samples:
        raise FileNotFoundError(f"{data_dir}: no .ppm images")
    return samples


def cmd_train(args) -> None:
    cfg = _config(args.config)
    samples = load_training_dir(args.data_dir)
    dataset = net.prepare_dataset(samples, cfg.train_opts.contour_radius)
    rng = make_rng(cfg.train_opts.seed)
    model = net.build_model(cfg.net, rng)
    spec = cfg.augment if cfg.train_opts.augment else None
    net.train(model, dataset, cfg.train, rng, augment_spec=spec, log_every=cfg.train_opts.log_every)
    net.save_checkpoint(model, args.ckpt_out)


def cmd_infer(args) -> None:
    model = net.load_checkpoint(args.ckpt, input_size=args.tile)
    image = io.read_ppm(args.image_in)
    maps = net.predict_tiled(model, image, args.tile, args.stride)
    io.write_pmap(args.maps_out, maps.p_o, maps.p_c)


def cmd_fuse(args) -> None:
    params = fusion.FusionParams(args.to, args.tc, args.smooth_radius, args.min_area)
    p_o, p_c = io.read_pmap(args.maps_in)
    if args.objects_only:
        labels = fusion.segment_objects_only(p_o, params)
    else:
        labels = fusion.segment(p_o, p_c, params)
    io.write_imask(args.instances_out, labels)


def cmd_eval(args) -> None:
    _need_dir(args.seg_dir)
    _need_dir(args.gt_dir)
    names = io.list_with_suffix(args.seg_dir, ".imask")
    if not names:
        raise FileNotFoundError(f"{args.seg_dir}: no .imask files")
    pairs = []
    for name in names:
        gt_path = os.path.join(args.gt_dir, name)
        if not os.path.exists(gt_path):
            raise FileNotFoundError(f"{gt_path}: no ground truth for {name}")
        seg, gt = io.read_imask(os.path.join(args.seg_dir, name)), io.read_imask(gt_path)
        if seg.shape != gt.shape:
            raise ShapeError(f"{name}: segmentation is {seg.shape} but ground truth is {gt.shape}")
        pairs.append((_stem(name), seg, gt))
    rows, total = metrics.evaluate(pairs, args.hausdorff_mode)
    io.write_report(args.report_csv, rows, total)


def cmd_rank(args) -> None:
    rows = metrics.rank_teams(io.read_scores(args.scores_csv))
    io.write_ranking(args.ranking_csv, rows)


def cmd_gradcheck(args) -> None:
    cfg = _config(args.config)
    g = cfg.gradcheck
    failures = []
    for seed in range(g.seeds):
        for r in gradcheck.kernel_suite(seed, g.samples, g.epsilon):
            ok = r.passed(min(g.tolerance, 1e-6))
            print(f"{'ok  ' if ok else 'FAIL'} {r.name:<16} seed {seed} max rel err {r.max_rel_error:.2e}")
            failures += [] if ok else [r.name]
        r = gradcheck.model_suite(C.miniature_net(), seed, g.samples, g.epsilon)
        ok = r.passed(g.tolerance)
        print(f"{'ok  ' if ok else 'FAIL'} {r.name:<16} seed {seed} max rel err {r.max_rel_error:.2e}")
        failures += [] if ok else [r.name]
    if failures:
        raise CheckFailed(f"{len(failures)} gradient checks failed: {', '.join(failures)}")


def cmd_config_reference(args) -> None:
    text = C.reference()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcan", description="Contour-aware gland segmentation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write synthetic scenes, masks and a manifest")
    s.add_argument("--config")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("make-labels", help="contour label mask from an instance mask")
    s.add_argument("mask_in")
    s.add_argument("contour_out")
    s.add_argument("--radius", type=int, default=3)
    s.set_defaults(func=cmd_make_labels)

    s = sub.add_parser("train", help="train a model on X.ppm / X.imask pairs")
    s.add_argument("--config")
    s.add_argument("data_dir")
    s.add_argument("ckpt_out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="probability maps for one PPM image")
    s.add_argument("ckpt")
    s.add_argument("image_in")
    s.add_argument("maps_out")
    s.add_argument("--tile", type=int, default=64)
    s.add_argument("--stride", type=int, default=32)
    s.set_defaults(func=cmd_infer)

    d = fusion.FusionParams()
    s = sub.add_parser("fuse", help="instance mask from probability maps")
    s.add_argument("maps_in")
    s.add_argument("instances_out")
    s.add_argument("--to", type=float, default=d.t_o, help="object threshold")
    s.add_argument("--tc", type=float, default=d.t_c, help="contour threshold")
    s.add_argument("--min-area", type=int, default=d.min_area)
    s.add_argument("--smooth-radius", type=int, default=d.smooth_radius)
    s.add_argument("--objects-only", action="store_true", help="ignore the contour map")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="score X.imask segmentations against X.imask ground truth")
    s.add_argument("seg_dir")
    s.add_argument("gt_dir")
    s.add_argument("report_csv")
    s.add_argument("--hausdorff-mode", choices=("full", "boundary"), default="full")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("rank", help="competition ranks and sum scores from a team score table")
    s.add_argument("scores_csv")
    s.add_argument("ranking_csv")
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    s.add_argument("--config")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("config-reference", help="markdown table of all config keys")
    s.add_argument("out", nargs="?")
    s.set_defaults(func=cmd_config_reference)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one diagnostic line
        code = next((c for kind, c in EXIT_CODES if isinstance(exc, kind)), 1)
        message = " ".join(str(exc).split()) or "failed"
        print(f"dcan {args.command}: {type(exc).__name__}: {message}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
