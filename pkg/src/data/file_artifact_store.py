import io
import logging
import os
import tempfile
from pathlib import Path
from typing import List

import numpy as np
import tifffile
from PIL import Image, UnidentifiedImageError

from src.core.errors import DataError, ManifestError
from src.core.imaging import ConcentrationMap, RgbImage, StainMatrix
from src.data import documents
from src.data.cmap_format import decode_cmap, encode_cmap
from src.interfaces.artifact_store import IArtifactStore, PairRecord, PredictionRecord
from src.interfaces.predictor import LinearSaffronModel

logger = logging.getLogger(__name__)

TIFF_SUFFIXES = (".tif", ".tiff")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over the target"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _to_rgb(array: np.ndarray, path) -> RgbImage:
    if array.dtype != np.uint8:
        raise DataError(f"{path}: expected 8-bit image data, got {array.dtype}")
    if array.ndim == 2:
        array = np.stack([array] * 3, axis=2)
    elif array.ndim == 3 and array.shape[2] == 4:
        array = array[:, :, :3]
    if array.ndim != 3 or array.shape[2] != 3:
        raise DataError(f"{path}: unsupported image shape {array.shape}")
    return RgbImage(np.ascontiguousarray(array))


def encode_rgb(path, img: RgbImage) -> bytes:
    buffer = io.BytesIO()
    if Path(path).suffix.lower() in TIFF_SUFFIXES:
        tifffile.imwrite(buffer, img.data, photometric="rgb")
    else:
        Image.fromarray(img.data).save(buffer, format="PNG")
    return buffer.getvalue()


class FileArtifactStore(IArtifactStore):
    """Artifacts on the local filesystem; every write is atomic"""

    def read_rgb(self, path: str) -> RgbImage:
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing file: {path}")
        if Path(path).suffix.lower() in TIFF_SUFFIXES:
            return _to_rgb(tifffile.imread(path), path)
        try:
            with Image.open(path) as image:
                if image.mode not in ("RGB", "RGBA", "L"):
                    image = image.convert("RGB")
                return _to_rgb(np.asarray(image), path)
        except UnidentifiedImageError as e:
            raise DataError(f"{path}: not a readable image") from e

    def write_rgb(self, path: str, img: RgbImage) -> None:
        atomic_write_bytes(path, encode_rgb(path, img))

    def read_cmap(self, path: str) -> ConcentrationMap:
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing file: {path}")
        with open(path, "rb") as f:
            return decode_cmap(f.read())

    def write_cmap(self, path: str, cmap: ConcentrationMap) -> None:
        atomic_write_bytes(path, encode_cmap(cmap))

    def _read_text(self, path: str) -> str:
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing file: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return f.read()

    def read_stain_matrix(self, path: str) -> StainMatrix:
        return documents.stain_matrix_from_text(self._read_text(path))

    def write_stain_matrix(self, path: str, matrix: StainMatrix) -> None:
        atomic_write_text(path, documents.stain_matrix_to_text(matrix))

    def read_model(self, path: str) -> LinearSaffronModel:
        return documents.model_from_text(self._read_text(path))

    def write_model(self, path: str, model: LinearSaffronModel) -> None:
        atomic_write_text(path, documents.model_to_text(model))

    @staticmethod
    def _resolve(manifest: str, entry: str) -> str:
        # absolute, so records read here can be written to any other manifest
        resolved = os.path.abspath(os.path.join(os.path.dirname(manifest), entry))
        if not os.path.exists(resolved):
            raise ManifestError(f"malformed manifest {manifest}: missing file {entry}")
        return resolved

    def read_pairs(self, path: str) -> List[PairRecord]:
        """Manifest records with paths resolved against the manifest directory"""
        records = documents.pairs_from_text(self._read_text(path))
        for record in records:
            record.he_path = self._resolve(path, record.he_path)
            record.hes_path = self._resolve(path, record.hes_path)
        logger.debug("Read %d pair records from %s", len(records), path)
        return records

    def write_pairs(self, path: str, records: List[PairRecord]) -> None:
        atomic_write_text(path, documents.pairs_to_text(records))

    def read_predictions(self, path: str) -> List[PredictionRecord]:
        records = documents.predictions_from_text(self._read_text(path))
        for record in records:
            record.pred_path = self._resolve(path, record.pred_path)
            record.gt_path = self._resolve(path, record.gt_path)
        return records

    def write_predictions(self, path: str, records: List[PredictionRecord]) -> None:
        atomic_write_text(path, documents.predictions_to_text(records))

    def write_text(self, path: str, text: str) -> None:
        atomic_write_text(path, text)

    def exists(self, path: str) -> bool:
        return os.path.exists(path)
