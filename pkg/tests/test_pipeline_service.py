import numpy as np
import pytest

from src.core.errors import DataError
from src.data.documents import report_from_text
from src.interfaces.artifact_store import PairRecord
from src.services.di_container import DIContainer
from src.services.phantom import PhantomSpec, generate_phantom


def _container_with_pairs(splits, spec=None):
    container = DIContainer()
    container.configure_for_testing()
    settings = container.get_settings_manager()
    settings.set("sample_size", 20_000)
    settings.set("jobs", 1)
    store = container.get_artifact_store()
    records = []
    for i, split in enumerate(splits):
        phantom = generate_phantom(spec or PhantomSpec(width=64, height=64, seed=i, blob_count=(6, 0, 5)))
        store.write_rgb(f"in/{i}_he.png", phantom.i_he)
        store.write_rgb(f"in/{i}_hes.png", phantom.i_hes)
        records.append(PairRecord(f"in/{i}_he.png", f"in/{i}_hes.png", split=split))
    store.write_pairs("in/pairs.txt", records)
    return container, store


def test_pipeline_writes_every_artifact():
    container, store = _container_with_pairs(["train", "train", "train", "test"])
    result = container.get_pipeline_service().run("in/pairs.txt", "out", register=False)

    for key in ("pairs", "matrix_hes", "matrix_he", "model", "predictions", "report"):
        assert store.exists(result.outputs[key])
    for i in range(4):
        assert store.exists(f"out/gt/{i:04d}_{i}_he.cmap")
        assert store.exists(f"out/pred/{i:04d}_{i}_he.cmap")
        assert store.exists(f"out/reconstructed/{i:04d}_{i}_he.png")
        assert store.exists(f"out/registered/{i:04d}_{i}_he.png")

    assert result.w_hes.labels == ("Hematoxylin", "Eosin", "Saffron")
    assert result.w_he.labels == ("Hematoxylin", "Eosin")
    assert result.w_hes.p99 is not None

    report = report_from_text(store.texts[result.outputs["report"]])
    assert report["eval_tiles"] == "1"
    assert float(report["mae"]) <= 0.1
    # held-out tiles only
    assert len(store.read_predictions(result.outputs["predictions"])) == 1


def test_predictions_carry_the_slide_scale():
    container, store = _container_with_pairs(["train", "train", "val"])
    result = container.get_pipeline_service().run("in/pairs.txt", "out", register=False)
    saffron_scale = result.w_hes.p99[2]
    prediction = store.read_cmap("out/pred/0002_2_he.cmap")
    assert prediction.scale[0] == pytest.approx(saffron_scale, rel=1e-6)


def test_all_tiles_are_evaluated_without_a_held_out_split():
    container, store = _container_with_pairs(["train", "train"])
    result = container.get_pipeline_service().run("in/pairs.txt", "out", register=False)
    assert result.report["eval_tiles"] == 2


def test_registration_records_scores():
    container, store = _container_with_pairs(["train", "test"])
    container.get_settings_manager().set("affine_max_iters", 20)
    result = container.get_pipeline_service().run("in/pairs.txt", "out", register=True)
    records = store.read_pairs(result.outputs["pairs"])
    assert all(r.score is not None for r in records)
    assert all(r.transform.is_plausible() for r in records)


def test_held_out_tiles_do_not_shape_the_matrices():
    results = []
    for held_out_seed in (2, 9):
        container, store = _container_with_pairs(["train", "train", "test"])
        other = generate_phantom(PhantomSpec(width=64, height=64, seed=held_out_seed, hard_mode=True))
        store.write_rgb("in/2_he.png", other.i_he)
        store.write_rgb("in/2_hes.png", other.i_hes)
        results.append(container.get_pipeline_service().run("in/pairs.txt", "out", register=False))
    first, second = results
    assert np.array_equal(first.w_hes.matrix, second.w_hes.matrix)
    assert np.array_equal(first.w_hes.p99, second.w_hes.p99)
    assert np.array_equal(first.w_he.matrix, second.w_he.matrix)
    assert np.array_equal(first.model.coefficients, second.model.coefficients)


def test_training_split_is_required():
    container, _ = _container_with_pairs(["test", "val"])
    with pytest.raises(DataError, match="no training pairs"):
        container.get_pipeline_service().run("in/pairs.txt", "out", register=False)


def test_map_ordered_keeps_order():
    container = DIContainer()
    container.configure_for_testing()
    container.get_settings_manager().set("jobs", 4)
    pipeline = container.get_pipeline_service()
    assert pipeline.map_ordered(lambda x: x * x, list(range(20))) == [x * x for x in range(20)]
