import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from degp.evalx import (PredictiveSummary, classification_metrics, ece, entropy, error_vs_uncertainty,
                        function_samples, logits_nll, mixture_regression, mutual_info, normalize,
                        posterior_predictive, predictive_from_samples, regression_metrics, write_curve_csv)
from degp.nets import MlpSpec, init_ensemble


def simplex_rows(draw_shape):
    return arrays(np.float64, draw_shape, elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum(-1, keepdims=True))


# -- predictive ---------------------------------------------------------------

def test_identical_samples_give_single_likelihood():
    f = np.tile(np.array([[1.0, -0.5, 2.0]]), (5, 1, 1))
    s = predictive_from_samples(f, "categorical")
    e = np.exp(f[0, 0])
    np.testing.assert_allclose(s.probs[0], e / e.sum(), atol=1e-15)
    assert s.uncertainty[0] == pytest.approx(0.0, abs=1e-15)


def test_opposite_logits_average_to_half():
    a = 3.0
    f = np.array([[[a, -a]], [[-a, a]]])
    s = predictive_from_samples(f, "categorical")
    np.testing.assert_allclose(s.probs[0], [0.5, 0.5], atol=1e-15)


def test_mixture_variance_is_spread_plus_noise():
    f = np.array([[[1.0]], [[2.0]], [[4.0]]])
    mean, var = mixture_regression(f, 0.25)
    # hand mixture: mean 7/3, E[f^2] = 21/3, Var = 7 - 49/9 = 14/9
    assert mean[0, 0] == pytest.approx(7 / 3, abs=1e-12)
    assert abs(var[0, 0] - (14 / 9 + 0.25)) < 1e-10
    s = predictive_from_samples(f, "gaussian", 0.25)
    assert s.std[0, 0] == pytest.approx(np.sqrt(14 / 9 + 0.25))
    assert s.uncertainty[0] == pytest.approx(14 / 9)


def test_temperature_scales_logits():
    f = np.array([[[2.0, 0.0]]])
    hot = predictive_from_samples(f, "categorical", temperature=2.0).probs[0, 0]
    assert hot == pytest.approx(1 / (1 + np.exp(-1.0)))


def test_function_samples_paths():
    ens = init_ensemble(MlpSpec(2, (8,), 3), 4, 0)
    X = np.random.default_rng(0).standard_normal((5, 2))
    assert function_samples(ens, X, "de").shape == (4, 5, 3)
    a = function_samples(ens, X, "degp", S=50, rng=np.random.default_rng(1))
    b = function_samples(ens, X, "degp", S=50, rng=np.random.default_rng(1))
    assert a.shape == (50, 5, 3) and np.array_equal(a, b)
    s = posterior_predictive(ens, X, "degp", "categorical", S=200)
    np.testing.assert_allclose(s.probs.sum(-1), 1.0, atol=1e-12)
    assert s.samples == 200


# -- mutual information ---------------------------------------------------------

def test_mi_closed_forms():
    assert mutual_info(np.array([[0.2, 0.8], [0.2, 0.8]])) == pytest.approx(0.0, abs=1e-15)
    assert mutual_info(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(np.log(2), abs=1e-15)


def test_mi_matches_hand_entropies():
    p = np.random.default_rng(7).random((4, 3))
    p /= p.sum(1, keepdims=True)
    mean = p.mean(0)
    H = lambda q: -sum(x * np.log(x) for x in q)
    want = H(mean) - sum(H(r) for r in p) / 4
    assert abs(mutual_info(p) - want) < 1e-12


def test_entropy_zero_log_zero():
    assert entropy(np.array([1.0, 0.0, 0.0])) == 0.0


@given(simplex_rows((5, 4)))
def test_mi_bounds(p):
    mi = mutual_info(p)
    assert -1e-15 <= mi <= entropy(p.mean(0)) + 1e-12 <= np.log(4) + 1e-12


@given(simplex_rows((3, 6, 3)))
def test_predictive_rows_are_simplex(p):
    logits = np.log(p)
    s = predictive_from_samples(logits, "categorical")
    np.testing.assert_allclose(s.probs.sum(-1), 1.0, atol=1e-12)
    u = s.normalized_uncertainty()
    assert np.all((u >= 0) & (u <= 1))


# -- error vs uncertainty -------------------------------------------------------

def test_curve_at_one_is_overall_error():
    pred = np.array([0, 1, 1, 2])
    lab = np.array([0, 1, 0, 0])
    rows = error_vs_uncertainty(pred, lab, np.array([0.1, 0.5, 0.9, 1.0]))
    assert rows[-1]["tau"] == 1.0 and rows[-1]["error"] == 0.5 and rows[-1]["count"] == 4
    assert rows[0]["error"] is None and rows[0]["count"] == 0


def test_perfect_ranking_gives_nondecreasing_curve():
    rng = np.random.default_rng(0)
    u = np.sort(rng.random(50))
    wrong = np.arange(50) >= 35
    lab = np.zeros(50, int)
    pred = wrong.astype(int)
    errs = [r["error"] for r in error_vs_uncertainty(pred, lab, normalize(u)) if r["error"] is not None]
    assert all(b >= a for a, b in zip(errs, errs[1:]))


def test_ood_points_count_as_wrong():
    pred = np.array([0, 0, 0])
    lab = np.array([0, 0, 0])
    rows = error_vs_uncertainty(pred, lab, np.array([0.1, 0.2, 0.3]), [1.0], wrong=np.array([False, True, True]))
    assert rows[0]["error"] == pytest.approx(2 / 3)


@given(arrays(np.float64, 30, elements=st.floats(0.0, 10.0)), st.floats(0.01, 100.0))
def test_curve_is_scale_invariant(u, c):
    rng = np.random.default_rng(0)
    pred, lab = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
    a = error_vs_uncertainty(pred, lab, normalize(u))
    b = error_vs_uncertainty(pred, lab, normalize(u * c))
    assert [r["count"] for r in a] == [r["count"] for r in b]


def test_normalize_edge_cases():
    np.testing.assert_array_equal(normalize(np.zeros(3)), np.zeros(3))
    np.testing.assert_allclose(normalize(np.array([1.0, 2.0]), pool_max=4.0), [0.25, 0.5])


def test_curve_csv_marks_empty_buckets(tmp_path):
    rows = [{"tau": 0.0, "error": None, "count": 0}, {"tau": 1.0, "error": 0.25, "count": 4}]
    write_curve_csv(tmp_path / "c.csv", rows, {"method": "degp"})
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines == ["tau,error,count,method", "0.0,,0,degp", "1.0,0.25,4,degp"]


# -- ECE / metrics --------------------------------------------------------------

def test_ece_perfectly_calibrated_two_bins():
    # confidence 0.5: one of two right; confidence 1.0: both right
    probs = np.array([[0.5, 0.5], [0.5, 0.5], [1.0, 0.0], [1.0, 0.0]])
    labels = np.array([0, 1, 0, 0])
    assert ece(probs, labels) == pytest.approx(0.0, abs=1e-15)


def test_confident_and_correct():
    probs = np.eye(3)
    m = classification_metrics(probs, np.arange(3))
    assert m == {"nll": 0.0, "accuracy": 1.0, "ece": 0.0}


def test_ece_hand_case():
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    labels = np.array([0, 1, 1, 1])
    # bins of width 1/15: 0.9 -> (0.8667, 0.9333]; 0.8 -> (0.7333, 0.8]; 0.7 -> (0.6667, 0.7333]; 0.6 -> (0.5333, 0.6]
    want = (abs(1 - 0.9) + abs(0 - 0.8) + abs(1 - 0.7) + abs(0 - 0.6)) / 4
    assert abs(ece(probs, labels) - want) < 1e-10
    # two points sharing a bin average first
    probs2 = np.array([[0.9, 0.1], [0.9, 0.1]])
    assert abs(ece(probs2, np.array([0, 1])) - abs(0.5 - 0.9)) < 1e-10


def test_regression_metrics_hand():
    m = regression_metrics(np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    assert m["rmse"] == pytest.approx(np.sqrt(0.5))
    assert m["nll"] == pytest.approx(0.5 * np.log(2 * np.pi) + 0.25)


def test_logits_nll():
    assert logits_nll(np.zeros((3, 4)), np.array([0, 1, 2])) == pytest.approx(np.log(4))


def test_summary_container():
    s = PredictiveSummary(3, mean=np.zeros(2), var=np.array([4.0, 9.0]), uncertainty=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(s.std, [2.0, 3.0])
    np.testing.assert_array_equal(s.normalized_uncertainty(), [0.5, 1.0])
