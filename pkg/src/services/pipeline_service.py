"""
End-to-end pipeline over a pair manifest.

registration -> stain-matrix estimation -> Saffron extraction -> baseline
fit -> prediction -> reconstruction -> evaluation. Tile-level work runs on a
thread pool; results are always merged in manifest order so every artifact
is independent of the number of jobs.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from src.core.errors import DataError, DegenerateRegressionError
from src.core.imaging import (
    EOSIN,
    HEMATOXYLIN,
    SAFFRON,
    ConcentrationMap,
    RgbImage,
    StainMatrix,
    rgb_to_od,
    tissue_mask,
)
from src.data.documents import report_to_text
from src.interfaces.artifact_store import IArtifactStore, PairRecord, PredictionRecord
from src.interfaces.predictor import IPredictorRegistry, LinearSaffronModel
from src.interfaces.registration import IRegistrar
from src.interfaces.settings import ISettingsManager
from src.interfaces.stain_estimation import SnmfConfig, StainEstimate
from src.services import evaluation
from src.services.reconstruction import ReconstructionConfig, reconstruct_hes
from src.services.registration import BILINEAR, warp_affine
from src.services.saffron_training import compute_class_weights, fit_linear_baseline
from src.services.stain_extraction import (
    estimate_stain_matrix,
    extract_saffron,
    sample_tissue_pixels,
    slide_p99_scale,
    solve_concentrations,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

HES_LABELS = (HEMATOXYLIN, EOSIN, SAFFRON)
HE_LABELS = (HEMATOXYLIN, EOSIN)
EVAL_SPLITS = ("val", "test")


@dataclass
class PipelineResult:
    report: Dict[str, object]
    regression: Optional[evaluation.RegressionFit]
    w_he: StainMatrix
    w_hes: StainMatrix
    model: LinearSaffronModel
    outputs: Dict[str, str] = field(default_factory=dict)


class PipelineService:
    """Coordinates the restaining workflow over a pair manifest"""

    def __init__(
        self,
        settings: ISettingsManager,
        store: IArtifactStore,
        predictor_registry: IPredictorRegistry,
        registrar: IRegistrar,
    ):
        self.settings = settings
        self.store = store
        self.predictor_registry = predictor_registry
        self.registrar = registrar

    # helpers shared with the command line

    def map_ordered(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        jobs = int(self.settings.get("jobs"))
        if jobs <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(fn, items))

    def snmf_config(self, stain_count: int, labels: Optional[Tuple[str, ...]] = None) -> SnmfConfig:
        s = self.settings
        return SnmfConfig(
            sparsity_lambda=float(s.get("snmf_lambda")),
            max_iters=int(s.get("snmf_max_iters")),
            tol=float(s.get("snmf_tol")),
            init=s.get("snmf_init"),
            seed=int(s.get("seed")),
            stain_count=stain_count,
            labels=labels,
        )

    def estimate_matrix(
        self,
        tiles: Sequence[RgbImage],
        stain_count: int,
        labels: Optional[Tuple[str, ...]] = None,
        tile_ids: Optional[Sequence[str]] = None,
    ) -> StainEstimate:
        s = self.settings
        sample = sample_tissue_pixels(
            tiles,
            mask_threshold=float(s.get("tissue_threshold")),
            n_target=int(s.get("sample_size")),
            seed=int(s.get("seed")),
            i0=int(s.get("illuminant")),
            tile_ids=tile_ids,
        )
        estimate = estimate_stain_matrix(sample, self.snmf_config(stain_count, labels))
        illuminant = int(s.get("illuminant"))
        if estimate.matrix.illuminant != illuminant:
            m = estimate.matrix
            estimate.matrix = StainMatrix(m.matrix, m.labels, illuminant, m.p99)
        return estimate

    def slide_scales(self, tiles: Sequence[RgbImage], w: StainMatrix) -> np.ndarray:
        """Per-stain p99 over the tissue pixels of every tile"""
        threshold = float(self.settings.get("tissue_threshold"))
        mode = self.settings.get("solver_mode")

        def solve(tile: RgbImage):
            od = rgb_to_od(tile, w.illuminant)
            mask = tissue_mask(od, threshold)
            if mask.count == 0:
                mask = None
            return solve_concentrations(od, w, mode), mask

        solved = self.map_ordered(solve, tiles)
        cmaps = [c for c, m in solved if m is not None]
        masks = [m for _, m in solved if m is not None]
        if not cmaps:
            logger.warning("No tissue in any tile; using unit scales")
            return np.ones(w.stain_count)
        return slide_p99_scale(cmaps, masks)

    # the full workflow

    def run(self, manifest_path: str, out_dir: str, register: bool = True) -> PipelineResult:
        s = self.settings
        records = self.store.read_pairs(manifest_path)
        if not records:
            raise DataError(f"Manifest {manifest_path} holds no pairs")
        names = [f"{i:04d}_{Path(r.he_path).stem}" for i, r in enumerate(records)]
        out = Path(out_dir)
        outputs: Dict[str, str] = {}
        logger.info("Pipeline over %d pairs into %s", len(records), out_dir)
        train = [i for i, r in enumerate(records) if r.split == "train"]
        if not train:
            raise DataError("Manifest holds no training pairs")

        he_tiles = self.map_ordered(lambda r: self.store.read_rgb(r.he_path), records)
        hes_tiles = self.map_ordered(lambda r: self.store.read_rgb(r.hes_path), records)

        # registration: pairs without a recorded score have not been registered yet
        def align(index: int) -> Tuple[PairRecord, RgbImage]:
            record = records[index]
            transform, score, converged = record.transform, record.score, record.converged
            if register and record.score is None:
                result = self.registrar.register(he_tiles[index], hes_tiles[index])
                transform, score, converged = result.transform, result.score, result.converged
                if not converged:
                    logger.warning("Registration of %s did not converge", record.he_path)
            aligned = warp_affine(hes_tiles[index], transform, BILINEAR)
            registered = PairRecord(
                record.he_path, record.hes_path, transform, record.split, score, converged
            )
            return registered, aligned

        aligned_pairs = self.map_ordered(align, list(range(len(records))))
        registered_records = [r for r, _ in aligned_pairs]
        aligned_hes = [a for _, a in aligned_pairs]
        for name, tile in zip(names, aligned_hes):
            self.store.write_rgb(str(out / "registered" / f"{name}.png"), tile)
        outputs["pairs"] = str(out / "pairs_registered.txt")
        self.store.write_pairs(outputs["pairs"], registered_records)

        # one matrix per slide, estimated on the training split
        train_hes = [aligned_hes[i] for i in train]
        train_he = [he_tiles[i] for i in train]
        train_names = [names[i] for i in train]
        w_hes = self.estimate_matrix(train_hes, 3, HES_LABELS, train_names).matrix
        w_he = self.estimate_matrix(train_he, 2, HE_LABELS, train_names).matrix
        w_hes = w_hes.with_p99(self.slide_scales(train_hes, w_hes))
        w_he = w_he.with_p99(self.slide_scales(train_he, w_he))
        outputs["matrix_hes"] = str(out / "matrix_hes.json")
        outputs["matrix_he"] = str(out / "matrix_he.json")
        self.store.write_stain_matrix(outputs["matrix_hes"], w_hes)
        self.store.write_stain_matrix(outputs["matrix_he"], w_he)

        # ground truth Saffron under the slide-level scale
        saffron_scale = float(w_hes.p99[w_hes.index_of(SAFFRON)])
        mode = s.get("solver_mode")
        threshold = float(s.get("tissue_threshold"))

        def ground_truth(tile: RgbImage) -> ConcentrationMap:
            mask = tissue_mask(rgb_to_od(tile, w_hes.illuminant), threshold)
            return extract_saffron(tile, w_hes, mask, mode, saffron_scale)

        gt_maps = self.map_ordered(ground_truth, aligned_hes)
        for name, cmap in zip(names, gt_maps):
            self.store.write_cmap(str(out / "gt" / f"{name}.cmap"), cmap)

        # baseline fit on the training split
        weights = compute_class_weights([gt_maps[i] for i in train])
        model = fit_linear_baseline(
            [(he_tiles[i], gt_maps[i]) for i in train],
            weights,
            int(s.get("feature_window")),
            int(s.get("illuminant")),
            int(s.get("jobs")),
        )
        outputs["model"] = str(out / "model.json")
        self.store.write_model(outputs["model"], model)

        predictor = self.predictor_registry.create_best_predictor(model)
        predictions = [
            p.with_scale([saffron_scale]) for p in self.map_ordered(predictor.predict, he_tiles)
        ]
        prediction_records = []
        for name, cmap in zip(names, predictions):
            self.store.write_cmap(str(out / "pred" / f"{name}.cmap"), cmap)
            prediction_records.append(
                PredictionRecord(os.path.join("pred", f"{name}.cmap"), os.path.join("gt", f"{name}.cmap"))
            )

        # reconstruction
        cfg = ReconstructionConfig.from_matrices(
            w_he,
            w_hes,
            epsilon=float(s.get("epsilon")),
            compare_normalized=bool(s.get("compare_normalized")),
            solver_mode=mode,
        )
        reconstructed = self.map_ordered(
            lambda i: reconstruct_hes(he_tiles[i], predictions[i], cfg), list(range(len(records)))
        )
        for name, tile in zip(names, reconstructed):
            self.store.write_rgb(str(out / "reconstructed" / f"{name}.png"), tile)

        # evaluation on held-out tiles, or on every tile when nothing is held out
        held_out = [i for i, r in enumerate(records) if r.split in EVAL_SPLITS] or list(range(len(records)))
        outputs["predictions"] = str(out / "predictions.txt")
        self.store.write_predictions(outputs["predictions"], [prediction_records[i] for i in held_out])

        saffron_threshold = float(s.get("saffron_threshold"))
        pairs = [(predictions[i], gt_maps[i]) for i in held_out]
        metrics = evaluation.evaluate_pairs(pairs, saffron_threshold)
        regression = None
        try:
            regression = evaluation.mean_concentration_regression(
                evaluation.region_pairs(pairs, int(s.get("region_grid")))
            )
        except DegenerateRegressionError as e:
            logger.warning("Skipping mean-concentration regression: %s", e)

        report = evaluation.report_values(metrics, regression, saffron_threshold)
        report["reconstruction_mae"] = float(
            np.mean(
                [
                    np.mean(np.abs(reconstructed[i].data.astype(np.float64) - aligned_hes[i].data))
                    for i in held_out
                ]
            )
        )
        report["eval_tiles"] = len(held_out)
        report["seed"] = int(s.get("seed"))
        outputs["report"] = str(out / "report.txt")
        self.store.write_text(outputs["report"], report_to_text(report))
        logger.info("Pipeline finished: mae=%.4f mdice=%.4f", metrics.mae, metrics.mdice)
        return PipelineResult(report, regression, w_he, w_hes, model, outputs)
