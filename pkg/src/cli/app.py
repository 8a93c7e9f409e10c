"""
stainkit command line.

Every subcommand accepts --config, --seed, --jobs and --verbose. Exit codes:
0 on success, 1 on usage errors, 2 on data errors.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.core.errors import DataError, UsageError
from src.core.imaging import (
    SAFFRON,
    BinaryMask,
    ConcentrationMap,
    rgb_to_od,
    tissue_mask,
)
from src.data.documents import report_to_text
from src.interfaces.artifact_store import PairRecord
from src.services import evaluation
from src.services.di_container import DIContainer
from src.services.phantom import generate_warped_phantom, load_phantom_spec
from src.services.reconstruction import ReconstructionConfig, reconstruct_hes
from src.services.registration import BILINEAR, warp_affine
from src.services.saffron_training import compute_class_weights, fit_linear_baseline
from src.services.stain_extraction import extract_saffron, normalize_p99

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")
TRAIN_FRACTION = 0.8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of setting overrides")
    common.add_argument("--seed", type=int, help="seed for every stochastic step")
    common.add_argument(
        "--jobs", type=int, help="tile-level worker threads (default: $STAINKIT_JOBS or 1)"
    )
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="stainkit", description="Stain deconvolution and virtual restaining")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = commands.add_parser("synth", parents=[common], help="generate phantom tile pairs")
    p.add_argument("--spec", required=True, help="YAML phantom spec")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=10, help="number of tile pairs")

    p = commands.add_parser("estimate-matrix", parents=[common], help="SNMF stain matrix")
    p.add_argument("--tiles", required=True, help="directory of RGB tiles")
    p.add_argument("--stains", type=int, default=3)
    p.add_argument("--labels", help="comma-separated stain labels")
    p.add_argument("--lambda", dest="snmf_lambda", type=float)
    p.add_argument("--out", required=True)

    p = commands.add_parser("deconvolve", parents=[common], help="solve concentrations")
    p.add_argument("--image", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--mode", choices=["pinv", "nnls"])
    p.add_argument("--out", required=True)

    p = commands.add_parser("normalize", parents=[common], help="p99 normalization")
    p.add_argument("--cmap", required=True)
    p.add_argument("--mask-image", help="image whose tissue mask selects the pixels")
    p.add_argument("--out", required=True)

    p = commands.add_parser("extract-saffron", parents=[common], help="Saffron ground truth")
    p.add_argument("--image", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--mode", choices=["pinv", "nnls"])
    p.add_argument(
        "--slide-scale", action="store_true", help="normalize by the matrix file's Saffron p99"
    )
    p.add_argument("--out", required=True)

    p = commands.add_parser("reconstruct", parents=[common], help="virtual HES rendering")
    p.add_argument("--he", required=True)
    p.add_argument("--saffron", required=True)
    p.add_argument("--matrix-he", required=True)
    p.add_argument("--matrix-s", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--raw-compare", action="store_true", help="compare raw Eosin with the prediction")
    p.add_argument("--out", required=True)

    p = commands.add_parser("register", parents=[common], help="align a restained pair")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.add_argument("--warped", help="also write the moving tile resampled into the fixed frame")
    p.add_argument("--out", required=True)

    p = commands.add_parser("fit-baseline", parents=[common], help="fit the linear baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--matrix", help="HES stain matrix (estimated from the tiles if omitted)")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)

    p = commands.add_parser("predict", parents=[common], help="predict a Saffron map")
    p.add_argument("--model", required=True)
    p.add_argument("--he", required=True)
    p.add_argument("--matrix-s", help="record this matrix file's Saffron p99 as the map scale")
    p.add_argument("--out", required=True)

    p = commands.add_parser("evaluate", parents=[common], help="prediction metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", type=int, help="regions per side for the regression")
    p.add_argument("--out", required=True)

    p = commands.add_parser("pipeline", parents=[common], help="run the full workflow")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-register", action="store_true", help="trust the manifest transforms")
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _apply_settings(container: DIContainer, args) -> None:
    settings = container.get_settings_manager()
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"missing file: {args.config}")
        settings.load_overrides(args.config)
    if args.seed is not None:
        settings.set("seed", args.seed)
    if args.jobs is not None:
        settings.set("jobs", args.jobs)
    for flag, key in (
        ("snmf_lambda", "snmf_lambda"),
        ("mode", "solver_mode"),
        ("epsilon", "epsilon"),
        ("k", "feature_window"),
        ("grid", "region_grid"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            settings.set(key, value)
    if getattr(args, "raw_compare", False):
        settings.set("compare_normalized", False)


def _list_tiles(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"missing directory: {directory}")
    tiles = sorted(
        str(p) for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not tiles:
        raise DataError(f"no image tiles found in {directory}")
    return tiles


# commands


def _cmd_synth(container: DIContainer, args) -> None:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    store = container.get_artifact_store()
    spec = load_phantom_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out_dir)
    train_count = args.count if args.count == 1 else max(1, int(math.floor(TRAIN_FRACTION * args.count)))

    records = []
    warp_lines = ["# name\ta\tb\ttx\tc\td\tty"]
    w_true = None
    for i in range(args.count):
        name = f"tile_{i:03d}"
        phantom = generate_warped_phantom(replace(spec, seed=spec.seed + i))
        w_true = phantom.w_true
        store.write_rgb(str(out / f"{name}_he.png"), phantom.i_he)
        store.write_rgb(str(out / f"{name}_hes.png"), phantom.i_hes)
        store.write_cmap(str(out / f"{name}_h_true.cmap"), phantom.h_true)
        records.append(
            PairRecord(f"{name}_he.png", f"{name}_hes.png", split="train" if i < train_count else "test")
        )
        warp = phantom.spec.warp
        coefficients = warp.coefficients() if warp is not None else (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
        warp_lines.append("\t".join([name] + [repr(c) for c in coefficients]))

    store.write_stain_matrix(str(out / "matrix_true.json"), w_true)
    store.write_pairs(str(out / "pairs.txt"), records)
    store.write_text(str(out / "warps.txt"), "\n".join(warp_lines) + "\n")
    print(f"Wrote {args.count} phantom pairs to {out}")


def _cmd_estimate_matrix(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    pipeline = container.get_pipeline_service()
    paths = _list_tiles(args.tiles)
    tiles = [store.read_rgb(p) for p in paths]
    labels = tuple(l.strip() for l in args.labels.split(",")) if args.labels else None
    if labels is not None and len(labels) != args.stains:
        raise UsageError(f"--labels names {len(labels)} stains, --stains is {args.stains}")
    estimate = pipeline.estimate_matrix(tiles, args.stains, labels, [Path(p).name for p in paths])
    matrix = estimate.matrix.with_p99(pipeline.slide_scales(tiles, estimate.matrix))
    store.write_stain_matrix(args.out, matrix)
    print(
        f"Estimated {matrix.stain_count}-stain matrix from {len(tiles)} tiles "
        f"({estimate.iterations} iterations, converged={estimate.converged})"
    )


def _cmd_deconvolve(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    matrix = store.read_stain_matrix(args.matrix)
    od = rgb_to_od(store.read_rgb(args.image), matrix.illuminant)
    store.write_cmap(args.out, container.get_solver().solve(od, matrix))


def _cmd_normalize(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    cmap = store.read_cmap(args.cmap)
    if args.mask_image:
        threshold = float(container.get_settings_manager().get("tissue_threshold"))
        illuminant = int(container.get_settings_manager().get("illuminant"))
        mask = tissue_mask(rgb_to_od(store.read_rgb(args.mask_image), illuminant), threshold)
    else:
        mask = BinaryMask.full(cmap.shape)
    store.write_cmap(args.out, normalize_p99(cmap, mask))


def _cmd_extract_saffron(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    settings = container.get_settings_manager()
    matrix = store.read_stain_matrix(args.matrix)
    hes = store.read_rgb(args.image)
    scale = None
    if args.slide_scale:
        if matrix.p99 is None:
            raise DataError(f"{args.matrix} records no p99 scales")
        if matrix.has_label(SAFFRON):
            scale = float(matrix.p99[matrix.index_of(SAFFRON)])
    mask = tissue_mask(rgb_to_od(hes, matrix.illuminant), float(settings.get("tissue_threshold")))
    store.write_cmap(args.out, extract_saffron(hes, matrix, mask, settings.get("solver_mode"), scale))


def _saffron_scale(matrix_s) -> Optional[float]:
    if matrix_s.p99 is None or not matrix_s.has_label(SAFFRON):
        return None
    return float(matrix_s.p99[matrix_s.index_of(SAFFRON)])


def _cmd_reconstruct(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    settings = container.get_settings_manager()
    he = store.read_rgb(args.he)
    saffron = store.read_cmap(args.saffron)
    w_he = store.read_stain_matrix(args.matrix_he)
    w_s = store.read_stain_matrix(args.matrix_s)
    if not w_s.has_label(SAFFRON):
        raise DataError(f"no saffron column among stain labels {w_s.labels}")
    # an unscaled map takes the Saffron p99 recorded in the matrix file
    override = _saffron_scale(w_s) if np.all(saffron.scale == 1.0) else None
    cfg = ReconstructionConfig.from_matrices(
        w_he,
        w_s,
        epsilon=float(settings.get("epsilon")),
        compare_normalized=bool(settings.get("compare_normalized")),
        saffron_scale=override,
        solver_mode=settings.get("solver_mode"),
    )
    store.write_rgb(args.out, reconstruct_hes(he, saffron, cfg))


def _cmd_register(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    fixed = store.read_rgb(args.fixed)
    moving = store.read_rgb(args.moving)
    result = container.get_registrar().register(fixed, moving)
    record = PairRecord(
        os.path.abspath(args.fixed),
        os.path.abspath(args.moving),
        result.transform,
        args.split,
        result.score,
        result.converged,
    )
    store.write_pairs(args.out, [record])
    if args.warped:
        store.write_rgb(args.warped, warp_affine(moving, result.transform, BILINEAR))
    print(f"Registered {args.moving}: score={result.score:.4f} converged={result.converged}")


def _cmd_fit_baseline(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    settings = container.get_settings_manager()
    pipeline = container.get_pipeline_service()
    records = [r for r in store.read_pairs(args.manifest) if r.split == "train"]
    if not records:
        raise DataError(f"{args.manifest} holds no training pairs")
    he_tiles = pipeline.map_ordered(lambda r: store.read_rgb(r.he_path), records)
    hes_tiles = pipeline.map_ordered(
        lambda r: warp_affine(store.read_rgb(r.hes_path), r.transform, BILINEAR), records
    )
    if args.matrix:
        w_hes = store.read_stain_matrix(args.matrix)
    else:
        w_hes = pipeline.estimate_matrix(hes_tiles, 3).matrix
    scale = _saffron_scale(w_hes)
    if scale is None:
        scale = float(pipeline.slide_scales(hes_tiles, w_hes)[w_hes.index_of(SAFFRON)])
    threshold = float(settings.get("tissue_threshold"))
    gt_maps = pipeline.map_ordered(
        lambda tile: extract_saffron(
            tile, w_hes, tissue_mask(rgb_to_od(tile, w_hes.illuminant), threshold),
            settings.get("solver_mode"), scale,
        ),
        hes_tiles,
    )
    weights = compute_class_weights(gt_maps)
    model = fit_linear_baseline(
        list(zip(he_tiles, gt_maps)),
        weights,
        int(settings.get("feature_window")),
        int(settings.get("illuminant")),
        int(settings.get("jobs")),
    )
    store.write_model(args.out, model)
    print(f"Fitted baseline on {len(records)} pairs (window {model.window})")


def _cmd_predict(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    model = store.read_model(args.model)
    prediction = container.get_predictor(model).predict(store.read_rgb(args.he))
    if args.matrix_s:
        scale = _saffron_scale(store.read_stain_matrix(args.matrix_s))
        if scale is not None:
            prediction = prediction.with_scale([scale])
    store.write_cmap(args.out, prediction)


def _cmd_evaluate(container: DIContainer, args) -> None:
    store = container.get_artifact_store()
    settings = container.get_settings_manager()
    pipeline = container.get_pipeline_service()
    records = store.read_predictions(args.manifest)
    if not records:
        raise DataError(f"{args.manifest} holds no prediction pairs")
    pairs = pipeline.map_ordered(
        lambda r: (store.read_cmap(r.pred_path), store.read_cmap(r.gt_path)), records
    )
    threshold = float(settings.get("saffron_threshold"))
    metrics = evaluation.evaluate_pairs(pairs, threshold)
    regression = None
    try:
        regression = evaluation.mean_concentration_regression(
            evaluation.region_pairs(pairs, int(settings.get("region_grid")))
        )
    except DataError as e:
        logger.warning("Skipping mean-concentration regression: %s", e)
    store.write_text(args.out, report_to_text(evaluation.report_values(metrics, regression, threshold)))
    print(f"mae={metrics.mae:.4f} mdice={metrics.mdice:.4f} dice_s={metrics.dice_s:.4f}")


def _cmd_pipeline(container: DIContainer, args) -> None:
    result = container.get_pipeline_service().run(args.manifest, args.out_dir, register=not args.no_register)
    print(f"Pipeline report written to {result.outputs['report']}")


COMMANDS = {
    "synth": _cmd_synth,
    "estimate-matrix": _cmd_estimate_matrix,
    "deconvolve": _cmd_deconvolve,
    "normalize": _cmd_normalize,
    "extract-saffron": _cmd_extract_saffron,
    "reconstruct": _cmd_reconstruct,
    "register": _cmd_register,
    "fit-baseline": _cmd_fit_baseline,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
}


def run(argv: Optional[Sequence[str]] = None, container: Optional[DIContainer] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        _configure_logging(args.verbose)
        container = container or DIContainer()
        _apply_settings(container, args)
        COMMANDS[args.command](container, args)
        return EXIT_OK
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
