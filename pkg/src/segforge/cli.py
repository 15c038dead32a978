"""Command-line surface: segforge <command> [flags].

Commands cover the whole pipeline: phantom generation, HU histograms,
preprocessing, augmentation, training, prediction, evaluation, and report
comparison. Every command accepts ``--config`` (flat key=value file) and
``--seed``. Exit codes: 0 success, 1 runtime/data error, 2 usage error.

Heavy imports happen inside the command handlers so the SEGFORGE_THREADS
cap can be applied to the BLAS pools before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys


def _apply_thread_cap() -> None:
    n = os.environ.get("SEGFORGE_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _img_files(directory: str) -> list[str]:
    names = sorted(n for n in os.listdir(directory) if n.endswith("_img.nii"))
    return [os.path.join(directory, n) for n in names]


def _mask_path(img_path: str) -> str:
    return img_path[: -len("_img.nii")] + "_mask.nii"


def _load_pairs(data_dir: str):
    from .nifti_io import read_nifti_file
    from .preprocess import SlicePair

    pairs = []
    for img_path in _img_files(data_dir):
        img_vol = read_nifti_file(img_path)
        mask_vol = read_nifti_file(_mask_path(img_path))
        if img_vol.meta.dims != mask_vol.meta.dims:
            raise ValueError(f"image/mask dims differ for {img_path}")
        for z in range(img_vol.meta.dims[2]):
            pairs.append(
                SlicePair(
                    image=img_vol.data[z],
                    mask=(mask_vol.data[z] > 0.5).astype("uint8"),
                )
            )
    return pairs


def _slice_volume(arr, spacing=(1.0, 1.0, 1.0)):
    from .nifti_io import Volume, VolumeMeta

    h, w = arr.shape
    return Volume(
        meta=VolumeMeta(dims=(w, h, 1), spacing=spacing),
        data=arr.reshape(1, h, w),
    )


def cmd_phantom(args) -> int:
    from .config import load_config, make_phantom_config
    from .nifti_io import write_nifti_file
    from .phantom import PhantomConfig, generate_phantom

    cfg = load_config(args.config)
    base_seed = args.seed if args.seed is not None else cfg["phantom.seed"]
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for i in range(args.count):
        pcfg = make_phantom_config(cfg, seed=base_seed + i)
        img, mask = generate_phantom(pcfg)
        img_name = f"phantom_{i:03d}_img.nii"
        mask_name = f"phantom_{i:03d}_mask.nii"
        write_nifti_file(os.path.join(args.out_dir, img_name), img)
        write_nifti_file(os.path.join(args.out_dir, mask_name), mask)
        rows.append([i, base_seed + i, img_name, mask_name])
    _write_csv(os.path.join(args.out_dir, "manifest.csv"), ["index", "seed", "img", "mask"], rows)
    print(f"wrote {args.count} phantom pair(s) to {args.out_dir}")
    return 0


def cmd_histogram(args) -> int:
    from .config import load_config
    from .figures import save_histogram_png
    from .nifti_io import read_nifti_file
    from .preprocess import hu_histogram

    cfg = load_config(args.config)
    lo = args.lo if args.lo is not None else cfg["histogram.lo"]
    hi = args.hi if args.hi is not None else cfg["histogram.hi"]
    width = args.bin_width if args.bin_width is not None else cfg["histogram.bin_width"]
    vol = read_nifti_file(args.infile)
    hist = hu_histogram(vol, lo, hi, width)
    edges = hist.bin_edges()
    rows = [
        [repr(float(edges[i])), repr(float(edges[i + 1])), int(c)]
        for i, c in enumerate(hist.counts)
    ]
    _write_csv(args.out, ["bin_lo", "bin_hi", "count"], rows)
    png = os.path.splitext(args.out)[0] + ".png"
    save_histogram_png(hist, png, "HU frequency distribution", "Hounsfield Units")
    print(f"wrote {args.out} and {png}")
    return 0


def cmd_preprocess(args) -> int:
    from .config import load_config
    from .nifti_io import read_nifti_file, write_nifti_file
    from .preprocess import preprocess_slice

    cfg = load_config(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    counter = 0
    for img_path in _img_files(args.in_dir):
        img_vol = read_nifti_file(img_path)
        mask_vol = read_nifti_file(_mask_path(img_path))
        if img_vol.meta.dims != mask_vol.meta.dims:
            raise ValueError(f"image/mask dims differ for {img_path}")
        for z in range(img_vol.meta.dims[2]):
            pair = preprocess_slice(
                img_vol.data[z],
                mask_vol.data[z],
                clip_lo=cfg["preprocess.clip_lo"],
                clip_hi=cfg["preprocess.clip_hi"],
                size=cfg["preprocess.size"],
                normalize=cfg["preprocess.normalize"],
                mask_threshold=cfg["preprocess.mask_threshold"],
            )
            img_name = f"pair_{counter:05d}_img.nii"
            mask_name = f"pair_{counter:05d}_mask.nii"
            write_nifti_file(os.path.join(args.out_dir, img_name), _slice_volume(pair.image))
            write_nifti_file(
                os.path.join(args.out_dir, mask_name),
                _slice_volume(pair.mask.astype("float32")),
            )
            rows.append([counter, os.path.basename(img_path), z, img_name, mask_name])
            counter += 1
    _write_csv(
        os.path.join(args.out_dir, "pairs.csv"),
        ["index", "source", "slice", "img", "mask"],
        rows,
    )
    print(f"wrote {counter} slice pair(s) to {args.out_dir}")
    return 0


def cmd_augment(args) -> int:
    from .augment import build_augmented_dataset
    from .config import load_config, make_augment_config
    from .nifti_io import write_nifti_file

    cfg = load_config(args.config)
    acfg = make_augment_config(cfg, seed=args.seed)
    pairs = _load_pairs(args.in_dir)
    out = build_augmented_dataset(pairs, acfg, args.target_count)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for i, pair in enumerate(out):
        img_name = f"pair_{i:05d}_img.nii"
        mask_name = f"pair_{i:05d}_mask.nii"
        write_nifti_file(os.path.join(args.out_dir, img_name), _slice_volume(pair.image))
        write_nifti_file(
            os.path.join(args.out_dir, mask_name),
            _slice_volume(pair.mask.astype("float32")),
        )
        rows.append([i, int(i >= len(pairs)), img_name, mask_name])
    _write_csv(
        os.path.join(args.out_dir, "pairs.csv"),
        ["index", "augmented", "img", "mask"],
        rows,
    )
    print(f"wrote {len(out)} pair(s) to {args.out_dir}")
    return 0


def _stem(path: str) -> str:
    return os.path.splitext(path)[0]


def cmd_train(args) -> int:
    from .config import load_config, make_model_config, make_train_config
    from .figures import save_training_curves_png
    from .model import build_unet
    from .trainer import (
        read_checkpoint_file,
        split_dataset,
        train,
        write_checkpoint_file,
    )

    cfg = load_config(args.config)
    tcfg = make_train_config(cfg, seed=args.seed)
    pairs = _load_pairs(args.data_dir)
    if not pairs:
        raise ValueError(f"no slice pairs found in {args.data_dir}")
    h, w = pairs[0].image.shape

    train_set, val_set, _test_set = split_dataset(
        pairs, tcfg.val_fraction, cfg["train.test_fraction"], tcfg.seed
    )

    adam = history = initial_best = None
    if args.resume:
        model, adam, history = read_checkpoint_file(args.resume)
        if os.path.exists(args.out) and history.records:
            best_model, _, _ = read_checkpoint_file(args.out)
            best_epoch = history.best_epoch()
            initial_best = (
                best_model.clone_param_data(),
                history.records[best_epoch].val_dice,
                best_epoch,
            )
    else:
        model = build_unet(make_model_config(cfg, size=(h, w)))

    result = train(
        model,
        train_set,
        val_set,
        tcfg,
        adam=adam,
        history=history,
        initial_best=initial_best,
    )

    write_checkpoint_file(args.out, result.best_model, result.adam, result.history)
    write_checkpoint_file(args.out + ".last", result.final_model, result.adam, result.history)
    hist_csv = _stem(args.out) + "_history.csv"
    with open(hist_csv, "w", encoding="utf-8", newline="") as fh:
        fh.write(result.history.to_csv())
    save_training_curves_png(result.history, _stem(args.out) + "_curves.png")
    best = result.history.records[result.best_epoch]
    print(
        f"trained {len(result.history)} epoch(s); best val Dice "
        f"{best.val_dice:.4f} at epoch {best.epoch}; checkpoint at {args.out}"
    )
    return 0


def cmd_predict(args) -> int:
    import numpy as np

    from .config import load_config, make_postprocess_config
    from .model import forward
    from .nifti_io import read_nifti_file
    from .pgm import overlay_rgb, write_pgm16, write_pgm_mask, write_ppm
    from .postprocess import postprocess_pipeline
    from .trainer import read_checkpoint_file

    cfg = load_config(args.config)
    pcfg = make_postprocess_config(cfg)
    model, _, _ = read_checkpoint_file(args.checkpoint)
    h, w = model.config.input_size

    img_paths = _img_files(args.in_dir)
    if not img_paths:
        raise ValueError(f"no *_img.nii slices found in {args.in_dir}")
    images = []
    for path in img_paths:
        vol = read_nifti_file(path)
        if vol.meta.dims[2] != 1 or (vol.meta.dims[1], vol.meta.dims[0]) != (h, w):
            raise ValueError(
                f"{path}: expected a single {h}x{w} slice, got dims {vol.meta.dims}"
            )
        images.append(vol.data[0])

    out_w = cfg["post.out_w"] or w
    out_h = cfg["post.out_h"] or h
    os.makedirs(args.out_dir, exist_ok=True)
    batch_size = cfg["train.batch_size"]
    rows = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        x = np.stack(chunk)[:, None, :, :]
        probs = forward(model, x).data[:, 0]
        for k, prob in enumerate(probs):
            i = start + k
            mask = postprocess_pipeline(prob, (out_w, out_h), pcfg)
            prob_name = f"pred_{i:05d}_prob.pgm"
            mask_name = f"pred_{i:05d}_mask.pgm"
            overlay_name = f"pred_{i:05d}_overlay.ppm"
            write_pgm16(os.path.join(args.out_dir, prob_name), prob)
            write_pgm_mask(os.path.join(args.out_dir, mask_name), mask)
            base = chunk[k] if (out_h, out_w) == chunk[k].shape else prob
            write_ppm(os.path.join(args.out_dir, overlay_name), overlay_rgb(base, mask))
            rows.append([i, os.path.basename(img_paths[i]), prob_name, mask_name, overlay_name])
    _write_csv(
        os.path.join(args.out_dir, "preds.csv"),
        ["index", "source", "prob", "mask", "overlay"],
        rows,
    )
    print(f"wrote predictions for {len(images)} slice(s) to {args.out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    from .config import load_config
    from .figures import save_histogram_png, save_roc_png
    from .metrics import build_report, iou_histogram, roc_auc
    from .nifti_io import read_nifti_file
    from .pgm import read_mask_pgm, read_probability_pgm

    cfg = load_config(args.config)
    prob_names = sorted(n for n in os.listdir(args.pred_dir) if n.endswith("_prob.pgm"))
    if not prob_names:
        raise ValueError(f"no *_prob.pgm predictions in {args.pred_dir}")
    probs = [read_probability_pgm(os.path.join(args.pred_dir, n)) for n in prob_names]
    masks = [
        read_mask_pgm(os.path.join(args.pred_dir, n.replace("_prob.pgm", "_mask.pgm")))
        for n in prob_names
    ]
    truth_names = sorted(n for n in os.listdir(args.truth_dir) if n.endswith("_mask.nii"))
    if len(truth_names) != len(probs):
        raise ValueError(
            f"prediction/truth count mismatch: {len(probs)} vs {len(truth_names)}"
        )
    truths = [
        (read_nifti_file(os.path.join(args.truth_dir, n)).data[0] > 0.5).astype("uint8")
        for n in truth_names
    ]

    report = build_report(probs, masks, truths)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_text())

    curve, auc = roc_auc(probs, truths)
    _write_csv(
        _stem(args.out) + "_roc.csv",
        ["fpr", "tpr"],
        [[repr(f), repr(t)] for f, t in curve],
    )
    save_roc_png(curve, auc, _stem(args.out) + "_roc.png")

    hist = iou_histogram(report.per_slice_iou, cfg["metrics.iou_hist_bins"])
    edges = hist.bin_edges()
    _write_csv(
        _stem(args.out) + "_iou_hist.csv",
        ["bin_lo", "bin_hi", "count"],
        [
            [repr(float(edges[i])), repr(float(edges[i + 1])), int(c)]
            for i, c in enumerate(hist.counts)
        ],
    )
    save_histogram_png(
        hist, _stem(args.out) + "_iou_hist.png", "Per-slice IoU distribution", "IoU"
    )
    print(f"dice={report.dice:.4f} mean_iou={report.mean_iou:.4f} auc={report.auc:.4f}")
    return 0


def cmd_compare(args) -> int:
    from .figures import save_compare_png
    from .metrics import EvalReport

    with open(args.report_a, "r", encoding="utf-8") as fh:
        a = EvalReport.scalars_from_text(fh.read())
    with open(args.report_b, "r", encoding="utf-8") as fh:
        b = EvalReport.scalars_from_text(fh.read())
    names = [k for k in a if k in b]
    rows = []
    for name in names:
        va, vb = a[name], b[name]
        if va is None or vb is None:
            rows.append([name, "undefined" if va is None else repr(va),
                         "undefined" if vb is None else repr(vb), ""])
        else:
            rows.append([name, repr(va), repr(vb), repr(vb - va)])
    _write_csv(args.out, ["metric", "a", "b", "delta"], rows)
    save_compare_png(
        names,
        [a[n] for n in names],
        [b[n] for n in names],
        os.path.basename(args.report_a),
        os.path.basename(args.report_b),
        _stem(args.out) + ".png",
    )
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segforge", description="CT infection segmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("phantom", help="generate synthetic volumes with masks")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("histogram", help="HU histogram of a volume (CSV + PNG)")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--hi", type=float, default=None)
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("preprocess", help="clip/normalize/resize volumes into slice pairs")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="grow a slice-pair set to a target count")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--target-count", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the attention U-Net")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="best-model checkpoint path")
    p.add_argument("--resume", default=None, help="final-state checkpoint to continue from")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="probability maps + post-processed masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="full metric report for a prediction set")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="side-by-side table of two reports")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    from .config import ConfigError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"segforge: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/data errors map to exit code 1
        print(f"segforge: error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
