"""
Text codecs for stain matrices, baseline models, manifests and reports.

Stain matrices and models are JSON documents; manifests are tab-separated
lines with `#` comments; reports are `key=value` lines. Every encoder is
deterministic so repeated runs produce byte-identical files.
"""

import json
from typing import Any, Dict, List, Optional, Sequence

from src.core.affine import AffineTransform
from src.core.errors import DocumentFormatError, ManifestError
from src.core.imaging import StainMatrix
from src.interfaces.artifact_store import PairRecord, PredictionRecord
from src.interfaces.predictor import ClassWeights, LinearSaffronModel

SPLITS = ("train", "val", "test")
MODEL_KIND = "linear"
ABSENT = "absent"

PAIR_HEADER = "# he\thes\ta\tb\ttx\tc\td\tty\tsplit\tscore\tconverged"
PREDICTION_HEADER = "# pred\tgt"


def _dump(document: Dict[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def _load(text: str, what: str) -> Dict[str, Any]:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentFormatError(f"Malformed {what} document: {e}") from e
    if not isinstance(document, dict):
        raise DocumentFormatError(f"Malformed {what} document: expected an object")
    return document


def stain_matrix_to_text(matrix: StainMatrix) -> str:
    document = {
        "labels": list(matrix.labels),
        "matrix": [[float(v) for v in row] for row in matrix.matrix],
        "illuminant": matrix.illuminant,
    }
    if matrix.p99 is not None:
        document["p99"] = [float(v) for v in matrix.p99]
    return _dump(document)


def stain_matrix_from_text(text: str) -> StainMatrix:
    document = _load(text, "stain matrix")
    try:
        return StainMatrix(
            matrix=document["matrix"],
            labels=tuple(document["labels"]),
            illuminant=document.get("illuminant", 255),
            p99=document.get("p99"),
        )
    except KeyError as e:
        raise DocumentFormatError(f"Stain matrix document is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise DocumentFormatError(f"Invalid stain matrix document: {e}") from e


def model_to_text(model: LinearSaffronModel) -> str:
    weights = model.class_weights
    return _dump(
        {
            "kind": MODEL_KIND,
            "window": model.window,
            "features": list(model.features),
            "coefficients": [float(v) for v in model.coefficients],
            "class_weights": None
            if weights is None
            else {"saffron": weights.w_saffron, "background": weights.w_background},
        }
    )


def model_from_text(text: str) -> LinearSaffronModel:
    document = _load(text, "model")
    if document.get("kind") != MODEL_KIND:
        raise DocumentFormatError(f"Unsupported model kind {document.get('kind')!r}")
    try:
        weights = document.get("class_weights")
        return LinearSaffronModel(
            coefficients=document["coefficients"],
            window=int(document["window"]),
            features=tuple(document["features"]),
            class_weights=None
            if weights is None
            else ClassWeights(float(weights["saffron"]), float(weights["background"])),
        )
    except KeyError as e:
        raise DocumentFormatError(f"Model document is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise DocumentFormatError(f"Invalid model document: {e}") from e


def _content_lines(text: str):
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield number, line.rstrip("\r\n")


def pairs_to_text(records: Sequence[PairRecord]) -> str:
    lines = [PAIR_HEADER]
    for record in records:
        fields = [record.he_path, record.hes_path]
        fields += [repr(v) for v in record.transform.coefficients()]
        fields.append(record.split)
        if record.score is not None or record.converged is not None:
            fields.append(repr(float(record.score if record.score is not None else 0.0)))
            fields.append("true" if record.converged else "false")
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def _parse_bool(value: str, number: int) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ManifestError(f"malformed manifest line {number}: bad converged flag {value!r}")


def pairs_from_text(text: str) -> List[PairRecord]:
    records = []
    for number, line in _content_lines(text):
        fields = line.split("\t")
        if len(fields) not in (9, 11):
            raise ManifestError(
                f"malformed manifest line {number}: expected 9 or 11 tab-separated fields, got {len(fields)}"
            )
        try:
            transform = AffineTransform.from_coefficients(fields[2:8])
        except ValueError as e:
            raise ManifestError(f"malformed manifest line {number}: {e}") from e
        if not transform.is_plausible():
            raise ManifestError(
                f"malformed manifest line {number}: affine determinant {transform.determinant():.3f} out of bounds"
            )
        split = fields[8].strip()
        if split not in SPLITS:
            raise ManifestError(
                f"malformed manifest line {number}: split {split!r} must be one of {list(SPLITS)}"
            )
        score: Optional[float] = None
        converged: Optional[bool] = None
        if len(fields) == 11:
            try:
                score = float(fields[9])
            except ValueError as e:
                raise ManifestError(f"malformed manifest line {number}: bad score") from e
            converged = _parse_bool(fields[10], number)
        records.append(PairRecord(fields[0], fields[1], transform, split, score, converged))
    return records


def predictions_to_text(records: Sequence[PredictionRecord]) -> str:
    lines = [PREDICTION_HEADER]
    lines += [f"{record.pred_path}\t{record.gt_path}" for record in records]
    return "\n".join(lines) + "\n"


def predictions_from_text(text: str) -> List[PredictionRecord]:
    records = []
    for number, line in _content_lines(text):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ManifestError(
                f"malformed manifest line {number}: expected 2 tab-separated fields, got {len(fields)}"
            )
        records.append(PredictionRecord(fields[0], fields[1]))
    return records


def _format_value(value: Any) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def report_to_text(values: Dict[str, Any]) -> str:
    """`key=value` lines in insertion order; None is written as `absent`"""
    return "".join(f"{key}={_format_value(value)}\n" for key, value in values.items())


def report_from_text(text: str) -> Dict[str, str]:
    values = {}
    for number, line in _content_lines(text):
        if "=" not in line:
            raise DocumentFormatError(f"Malformed report line {number}: {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values
