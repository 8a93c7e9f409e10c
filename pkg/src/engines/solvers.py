import logging

import numpy as np
from scipy.optimize import nnls

from src.core.errors import SingularStainMatrixError
from src.core.imaging import ConcentrationMap, OdImage, StainMatrix
from src.interfaces.stain_estimation import IConcentrationSolver

logger = logging.getLogger(__name__)

MAX_CONDITION_NUMBER = 1e8
MODE_PINV = "pinv"
MODE_NNLS = "nnls"


def _check_inputs(od: OdImage, w: StainMatrix) -> None:
    if od.channels != 3:
        raise ValueError(f"OD image must have 3 channels, got {od.channels}")
    condition = np.linalg.cond(w.matrix)
    if not np.isfinite(condition) or condition > MAX_CONDITION_NUMBER:
        raise SingularStainMatrixError(
            f"singular stain matrix: condition number {condition:.3g} exceeds {MAX_CONDITION_NUMBER:.0e}"
        )


def _pinv_solve(v: np.ndarray, w: StainMatrix) -> np.ndarray:
    """Unconstrained least-squares concentrations for n x 3 OD rows"""
    return v @ np.linalg.pinv(w.matrix).T


class PinvSolver(IConcentrationSolver):
    """Moore-Penrose solve with negatives clamped to zero"""

    def solve(self, od: OdImage, w: StainMatrix) -> ConcentrationMap:
        _check_inputs(od, w)
        v = od.data.reshape(-1, 3)
        h = np.maximum(_pinv_solve(v, w), 0.0)
        return ConcentrationMap(h.reshape(od.height, od.width, w.stain_count))

    def get_name(self) -> str:
        return MODE_PINV


class NnlsSolver(IConcentrationSolver):
    """Per-pixel non-negative least squares"""

    def solve(self, od: OdImage, w: StainMatrix) -> ConcentrationMap:
        _check_inputs(od, w)
        v = od.data.reshape(-1, 3)
        h = _pinv_solve(v, w)
        # the unconstrained optimum is the NNLS optimum wherever it is already feasible
        infeasible = np.flatnonzero(np.any(h < 0, axis=1))
        logger.debug("NNLS: %d of %d pixels need the active-set solver", infeasible.size, v.shape[0])
        for i in infeasible:
            h[i], _ = nnls(w.matrix, v[i])
        return ConcentrationMap(h.reshape(od.height, od.width, w.stain_count))

    def get_name(self) -> str:
        return MODE_NNLS


def create_solver(mode: str) -> IConcentrationSolver:
    if mode == MODE_PINV:
        return PinvSolver()
    if mode == MODE_NNLS:
        return NnlsSolver()
    raise ValueError(f"Invalid solver mode '{mode}'. Must be one of: {[MODE_PINV, MODE_NNLS]}")
