import logging
from typing import Tuple

import numpy as np

from src.core.errors import DataError
from src.core.imaging import EOSIN, HEMATOXYLIN, SAFFRON, StainMatrix
from src.interfaces.stain_estimation import (
    INIT_RANDOM,
    IStainEstimator,
    PixelSample,
    SnmfConfig,
    StainEstimate,
)

logger = logging.getLogger(__name__)

# Unnormalized reference OD directions; the Saffron one is the phantom's orange hue
REFERENCE_VECTORS = {
    HEMATOXYLIN: (0.65, 0.70, 0.29),
    EOSIN: (0.07, 0.99, 0.11),
    SAFFRON: (0.10, 0.48, 0.87),
}

_EPS = 1e-12
_MAX_BACKTRACKS = 30


def reference_vector(label: str) -> np.ndarray:
    for name, vector in REFERENCE_VECTORS.items():
        if name.lower() == label.lower():
            v = np.asarray(vector, dtype=np.float64)
            return v / np.linalg.norm(v)
    raise KeyError(f"No reference OD vector for stain {label!r}")


def reference_matrix(labels: Tuple[str, ...]) -> np.ndarray:
    return np.column_stack([reference_vector(label) for label in labels])


class SnmfStainEstimator(IStainEstimator):
    """
    Sparse NMF stain estimator.

    Minimizes ||V - W H||_F^2 + lambda * sum(H) over non-negative W (3xr, unit
    columns) and H (rxn). H takes multiplicative updates with L1 shrinkage; W
    takes a projected gradient step with backtracking, then its columns are
    renormalized (H rows rescaled to keep W H unchanged). A step is kept only
    if it does not raise the objective, so the trace is non-increasing.
    """

    def __init__(self, config: SnmfConfig):
        self.config = config

    def estimate(self, sample: PixelSample) -> StainEstimate:
        cfg = self.config
        labels = cfg.resolved_labels()
        r = cfg.stain_count
        if sample.n < r:
            raise DataError(f"Need at least {r} pixels to estimate {r} stains, got {sample.n}")

        v = sample.od_vectors.T  # 3 x n
        w = self._initial_w(labels)
        h = self._initial_h(w, v)
        lam = cfg.sparsity_lambda

        objective = self._objective(v, w, h, lam)
        trace = [objective]
        converged = False
        iterations = 0
        logger.debug("SNMF start: n=%d r=%d objective=%.6g", sample.n, r, objective)

        for iterations in range(1, cfg.max_iters + 1):
            previous = objective

            # H: multiplicative update for the L1-penalized least squares
            numerator = w.T @ v
            denominator = (w.T @ w) @ h + 0.5 * lam + _EPS
            h_next = h * numerator / denominator
            objective_next = self._objective(v, w, h_next, lam)
            if objective_next <= objective:
                h, objective = h_next, objective_next

            w, h, objective = self._update_w(v, w, h, objective, lam)
            trace.append(objective)

            change = abs(previous - objective) / max(previous, _EPS)
            if change < cfg.tol:
                converged = True
                break

        if not converged:
            logger.warning(
                "SNMF did not converge after %d iterations (objective %.6g)",
                cfg.max_iters,
                objective,
            )

        w = self._canonical_order(w, labels)
        matrix = StainMatrix(w, labels)
        logger.info(
            "Estimated %d-stain matrix in %d iterations (converged=%s)", r, iterations, converged
        )
        return StainEstimate(
            matrix=matrix, objective_trace=trace, converged=converged, iterations=iterations
        )

    def _initial_w(self, labels: Tuple[str, ...]) -> np.ndarray:
        if self.config.init == INIT_RANDOM:
            rng = np.random.default_rng(self.config.seed)
            w = rng.uniform(0.1, 1.0, size=(3, len(labels)))
            return w / np.linalg.norm(w, axis=0)
        return reference_matrix(labels)

    @staticmethod
    def _initial_h(w: np.ndarray, v: np.ndarray) -> np.ndarray:
        h, *_ = np.linalg.lstsq(w, v, rcond=None)
        # multiplicative updates cannot leave exact zeros
        return np.maximum(h, 1e-4)

    @staticmethod
    def _objective(v: np.ndarray, w: np.ndarray, h: np.ndarray, lam: float) -> float:
        residual = v - w @ h
        return float(np.sum(residual * residual) + lam * np.sum(h))

    def _update_w(self, v, w, h, objective, lam):
        gradient = 2.0 * (w @ h - v) @ h.T
        lipschitz = 2.0 * np.linalg.norm(h @ h.T, 2)
        if lipschitz <= _EPS:
            return w, h, objective
        step = 1.0 / lipschitz
        for _ in range(_MAX_BACKTRACKS):
            candidate = np.maximum(w - step * gradient, 0.0)
            norms = np.linalg.norm(candidate, axis=0)
            if np.all(norms > _EPS):
                w_next = candidate / norms
                h_next = h * norms[:, None]
                objective_next = self._objective(v, w_next, h_next, lam)
                if objective_next <= objective:
                    return w_next, h_next, objective_next
            step *= 0.5
        return w, h, objective

    @staticmethod
    def _canonical_order(w: np.ndarray, labels: Tuple[str, ...]) -> np.ndarray:
        """Greedy max-cosine matching of columns to the reference vectors of `labels`"""
        references = reference_matrix(labels)
        cosine = references.T @ w  # label x column, all unit vectors
        order = np.empty(len(labels), dtype=int)
        free_labels = list(range(len(labels)))
        free_columns = list(range(w.shape[1]))
        while free_labels:
            best = None
            # label order breaks ties: strict > keeps the earliest label
            for li in free_labels:
                for ci in free_columns:
                    if best is None or cosine[li, ci] > cosine[best[0], best[1]]:
                        best = (li, ci)
            order[best[0]] = best[1]
            free_labels.remove(best[0])
            free_columns.remove(best[1])
        return w[:, order]
