import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mudiknn import tensorops as T
from mudiknn.errors import DataError
from mudiknn.evaluate import compute_metrics, constant_baseline, predict_image, sliding_window_positions
from mudiknn.model import PredictionResult


class ConstantModel:
    """Emits the same map value and per-window count for every patch."""

    def __init__(self, value=0.5, count=4.0, patch=224):
        self.value, self.count, self.patch = value, count, patch
        self.calls = 0

    def __call__(self, patches):
        n = patches.shape[0]
        self.calls += n
        maps = [T.Tensor(np.full((n, 1, self.patch, self.patch), self.value)) for _ in range(3)]
        counts = [T.Tensor(np.full(n, self.count)) for _ in range(3)]
        end = T.Tensor(np.full(n, self.count))
        return PredictionResult(maps, counts, end, T.Tensor(np.full(n, self.count)))


def test_positions():
    assert sliding_window_positions(224, 224) == [(0, 0)]
    assert sorted(sliding_window_positions(352, 352)) == [(0, 0), (0, 128), (128, 0), (128, 128)]
    assert sliding_window_positions(300, 224) == [(0, 0), (76, 0)]
    xs = {x for x, _ in sliding_window_positions(700, 224)}
    assert xs == {0, 128, 256, 384, 476}
    with pytest.raises(DataError):
        sliding_window_positions(200, 300)


def test_constant_model_single_window():
    model = ConstantModel(0.25, 7.0)
    full, count = predict_image(model, np.zeros((3, 224, 224)))
    assert model.calls == 1
    assert np.all(full == 0.25)
    assert count == pytest.approx(7.0, abs=1e-9)


def test_constant_model_overlapping_windows():
    full, count = predict_image(ConstantModel(0.75, 4.0), np.zeros((3, 352, 352)))
    assert full.shape == (352, 352)
    np.testing.assert_allclose(full, 0.75, rtol=0, atol=1e-12)
    assert count == pytest.approx(4 * (352 / 224) ** 2, abs=1e-6)


def test_small_image_is_padded_and_cropped():
    full, count = predict_image(ConstantModel(1.0, 2.0), np.zeros((3, 100, 150)))
    assert full.shape == (100, 150)
    assert count == pytest.approx(2.0 * 100 * 150 / 224 ** 2)


def test_metric_fixtures():
    r = compute_metrics([(8, 10)])
    assert (r.mae, r.nae, r.rmse) == (2.0, 0.25, 2.0)
    r = compute_metrics([(2, 0), (2, 4)])
    assert (r.mae, r.nae, r.rmse) == (2.0, 1.0, 2.0)
    r = compute_metrics([(1, 1), (2, 2)])
    assert (r.mae, r.nae, r.rmse) == (0.0, 0.0, 0.0)


def test_metrics_exclude_zero_truth_from_nae():
    r = compute_metrics([(0, 3), (4, 2)])
    assert r.nae == 0.5 and r.nae_excluded == 1
    assert r.mae == 2.5


def test_metrics_need_data():
    with pytest.raises(ValueError):
        compute_metrics([])


pair = st.tuples(st.integers(0, 500), st.floats(-100, 600, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(st.lists(pair, min_size=1, max_size=40), st.randoms())
def test_mae_le_rmse_and_permutation_invariant(pairs, random):
    r = compute_metrics(pairs)
    assert 0 <= r.mae <= r.rmse * (1 + 1e-12) + 1e-12
    shuffled = list(pairs)
    random.shuffle(shuffled)
    s = compute_metrics(shuffled)
    assert s.mae == pytest.approx(r.mae, rel=1e-12, abs=1e-12)
    assert s.rmse == pytest.approx(r.rmse, rel=1e-12, abs=1e-12)


def test_constant_baseline():
    from mudiknn.annotations import AnnotationSet
    from mudiknn.synthetic import Sample

    def sample(n):
        return Sample("s", np.zeros((3, 8, 8)), AnnotationSet(8, 8, np.full((n, 2), 1.0)))

    r = constant_baseline([sample(2), sample(4)], [sample(3), sample(5)])
    assert r.predictions.tolist() == [3.0, 3.0]
    assert r.mae == 1.0
