from typing import Dict, List

from src.core.imaging import ConcentrationMap, RgbImage, StainMatrix
from src.data import documents
from src.data.cmap_format import decode_cmap, encode_cmap
from src.interfaces.artifact_store import IArtifactStore, PairRecord, PredictionRecord
from src.interfaces.predictor import LinearSaffronModel


class MemoryArtifactStore(IArtifactStore):
    """In-memory artifact store for tests; documents go through the same codecs as on disk"""

    def __init__(self):
        self.images: Dict[str, RgbImage] = {}
        self.blobs: Dict[str, bytes] = {}
        self.texts: Dict[str, str] = {}

    def _text(self, path: str) -> str:
        if path not in self.texts:
            raise FileNotFoundError(f"missing file: {path}")
        return self.texts[path]

    def read_rgb(self, path: str) -> RgbImage:
        if path not in self.images:
            raise FileNotFoundError(f"missing file: {path}")
        return RgbImage(self.images[path].data.copy())

    def write_rgb(self, path: str, img: RgbImage) -> None:
        self.images[path] = RgbImage(img.data.copy())

    def read_cmap(self, path: str) -> ConcentrationMap:
        if path not in self.blobs:
            raise FileNotFoundError(f"missing file: {path}")
        return decode_cmap(self.blobs[path])

    def write_cmap(self, path: str, cmap: ConcentrationMap) -> None:
        self.blobs[path] = encode_cmap(cmap)

    def read_stain_matrix(self, path: str) -> StainMatrix:
        return documents.stain_matrix_from_text(self._text(path))

    def write_stain_matrix(self, path: str, matrix: StainMatrix) -> None:
        self.texts[path] = documents.stain_matrix_to_text(matrix)

    def read_model(self, path: str) -> LinearSaffronModel:
        return documents.model_from_text(self._text(path))

    def write_model(self, path: str, model: LinearSaffronModel) -> None:
        self.texts[path] = documents.model_to_text(model)

    def read_pairs(self, path: str) -> List[PairRecord]:
        return documents.pairs_from_text(self._text(path))

    def write_pairs(self, path: str, records: List[PairRecord]) -> None:
        self.texts[path] = documents.pairs_to_text(records)

    def read_predictions(self, path: str) -> List[PredictionRecord]:
        return documents.predictions_from_text(self._text(path))

    def write_predictions(self, path: str, records: List[PredictionRecord]) -> None:
        self.texts[path] = documents.predictions_to_text(records)

    def write_text(self, path: str, text: str) -> None:
        self.texts[path] = text

    def exists(self, path: str) -> bool:
        return path in self.images or path in self.blobs or path in self.texts
