import numpy as np
import pytest

from exceptions import EmptyGroupError, ProbeCapacityError, ShapeError
from models.experiment_model import NetworkBlock
from models.fairness_model import MixBatch, ProbeCapacity
from models.network_model import Classifier
from services import fairness_service, network_service, nn_service


def _classifier(seed=0, latent=4):
    block = NetworkBlock(latent_dim=latent, extractor_hidden=[6], head_hidden=8)
    return network_service.build_classifier(3, block, np.random.default_rng(seed))


# --- dp_gap ---


def test_dp_gap_hand_example():
    report = fairness_service.dp_gap(np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1]))
    assert report.gap == 1.0
    assert (report.gamma0, report.gamma1) == (1.0, 0.0)


def test_dp_gap_equal_rates_is_zero():
    report = fairness_service.dp_gap(np.array([1, 0, 1, 0]), np.array([0, 0, 1, 1]))
    assert report.gap == 0.0
    assert report.count0 == 2 and report.count1 == 2


def test_dp_gap_accepts_probabilities():
    report = fairness_service.dp_gap(np.array([0.9, 0.7, 0.2, 0.4]), np.array([0, 0, 1, 1]))
    assert report.gap == pytest.approx(0.5)


def test_dp_gap_unequal_groups_example():
    pred = np.array([1, 1, 0, 1, 0, 1])
    a = np.array([0, 0, 0, 0, 1, 1])
    report = fairness_service.dp_gap(pred, a)
    assert (report.gamma0, report.gamma1) == (0.75, 0.5)
    assert report.gap == pytest.approx(0.25)


def test_dp_gap_symmetric_under_attribute_flip():
    rng = np.random.default_rng(6)
    pred = rng.integers(0, 2, 50)
    a = rng.integers(0, 2, 50)
    assert fairness_service.dp_gap(pred, 1 - a).gap == fairness_service.dp_gap(pred, a).gap


def test_dp_gap_hard_labels_match_zero_one_probabilities():
    rng = np.random.default_rng(7)
    pred = rng.integers(0, 2, 40)
    a = rng.integers(0, 2, 40)
    hard = fairness_service.dp_gap(pred, a).gap
    soft = fairness_service.dp_gap(pred.astype(np.float64), a).gap
    assert hard == soft


def test_dp_gap_empty_group():
    with pytest.raises(EmptyGroupError):
        fairness_service.dp_gap(np.array([1, 0]), np.array([0, 0]))


def test_dp_gap_shape_mismatch():
    with pytest.raises(ShapeError):
        fairness_service.dp_gap(np.array([1, 0, 1]), np.array([0, 1]))


# --- mix ---


def test_mix_interpolates():
    z_t = np.ones((3, 2))
    z_f = np.zeros((3, 2))
    batch = fairness_service.mix(z_t, np.zeros(3), z_f, np.ones(3), t=np.array([1.0, 0.0, 0.25]))
    np.testing.assert_allclose(batch.z_bar, [[1, 1], [0, 0], [0.25, 0.25]])
    np.testing.assert_allclose(batch.a_bar, [0.0, 1.0, 0.75])


def test_mix_draws_beta_coefficients_with_seed():
    z = np.random.default_rng(0).normal(size=(50, 3))
    b1 = fairness_service.mix(z, np.zeros(50), -z, np.ones(50), alpha=0.5, seed=3)
    b2 = fairness_service.mix(z, np.zeros(50), -z, np.ones(50), alpha=0.5, seed=3)
    np.testing.assert_array_equal(b1.t, b2.t)
    assert np.all((b1.t >= 0) & (b1.t <= 1))


def test_mix_shape_mismatch():
    with pytest.raises(ShapeError):
        fairness_service.mix(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 4)), np.ones(2))


# --- fairness_penalty ---


def test_penalty_is_zero_for_identical_endpoints():
    c = _classifier()
    z = np.random.default_rng(1).normal(size=(5, 4))
    batch = fairness_service.mix(z, np.zeros(5), z, np.ones(5), seed=0)
    result = fairness_service.fairness_penalty(c, batch)
    assert result.value == pytest.approx(0.0, abs=1e-15)


def _linear_head_classifier(w):
    """h^y con logits lineales [0, w·z]: f(z) = sigmoid(w·z)."""
    head = nn_service.zero_mlp([len(w), 2], output_activation="softmax")
    head.weights[0][:, 1] = w
    dummy = nn_service.zero_mlp([len(w), len(w)])
    return Classifier(extractor=dummy, label_head=head, attribute_head=head.copy())


def test_penalty_hand_example_single_sample():
    w = np.array([1.0, -2.0])
    c = _linear_head_classifier(w)
    z_t = np.array([[1.0, 0.0]])
    z_f = np.array([[0.0, 1.0]])
    batch = fairness_service.mix(z_t, [0], z_f, [1], t=np.array([0.5]))
    s = 1.0 / (1.0 + np.exp(-w @ batch.z_bar[0]))
    expected = s * (1 - s) * w @ (z_t[0] - z_f[0])
    assert fairness_service.fairness_penalty(c, batch).value == pytest.approx(expected)


def _penalty_value(c, z_t, z_f, t, mode):
    batch = fairness_service.mix(z_t, np.zeros(len(t)), z_f, np.ones(len(t)), t=t)
    return fairness_service.fairness_penalty(c, batch, mode=mode).value


@pytest.mark.parametrize("mode", ["signed", "absolute"])
def test_penalty_gradients_match_central_differences(mode):
    rng = np.random.default_rng(5)
    c = _classifier(seed=2)
    z_t = rng.normal(size=(6, 4))
    z_f = rng.normal(size=(6, 4))
    t = rng.uniform(size=6)
    batch = fairness_service.mix(z_t, np.zeros(6), z_f, np.ones(6), t=t)
    result = fairness_service.fairness_penalty(c, batch, mode=mode)
    eps = 1e-6

    for name, z, grad in (("t", z_t, result.grad_z_t), ("f", z_f, result.grad_z_f)):
        numeric = np.zeros_like(z)
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += eps
                zm[i, j] -= eps
                if name == "t":
                    up = _penalty_value(c, zp, z_f, t, mode)
                    down = _penalty_value(c, zm, z_f, t, mode)
                else:
                    up = _penalty_value(c, z_t, zp, t, mode)
                    down = _penalty_value(c, z_t, zm, t, mode)
                numeric[i, j] = (up - down) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-9)

    flat = nn_service.flatten_params(c.label_head)
    numeric = np.zeros_like(flat)
    for k in range(flat.size):
        fp, fm = flat.copy(), flat.copy()
        fp[k] += eps
        fm[k] -= eps
        cp = Classifier(c.extractor, nn_service.unflatten_params(c.label_head, fp), c.attribute_head)
        cm = Classifier(c.extractor, nn_service.unflatten_params(c.label_head, fm), c.attribute_head)
        numeric[k] = (
            _penalty_value(cp, z_t, z_f, t, mode) - _penalty_value(cm, z_t, z_f, t, mode)
        ) / (2 * eps)
    analytic = np.concatenate([g.reshape(-1) for g in result.label_head_grads.params()])
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_penalty_extractor_gradients_flow_through_z_t():
    rng = np.random.default_rng(8)
    c = _classifier(seed=4)
    x_t = rng.normal(size=(5, 3))
    z_f = rng.normal(size=(5, 4))
    t = rng.uniform(size=5)

    def value(extractor):
        cc = Classifier(extractor, c.label_head, c.attribute_head)
        z_t = nn_service.forward(extractor, x_t)
        return _penalty_value(cc, z_t, z_f, t, "signed")

    z_t = nn_service.forward(c.extractor, x_t)
    batch = fairness_service.mix(z_t, np.zeros(5), z_f, np.ones(5), t=t)
    result = fairness_service.fairness_penalty(c, batch, x_t=x_t)
    flat = nn_service.flatten_params(c.extractor)
    eps = 1e-6
    numeric = np.zeros_like(flat)
    for k in range(flat.size):
        fp, fm = flat.copy(), flat.copy()
        fp[k] += eps
        fm[k] -= eps
        numeric[k] = (
            value(nn_service.unflatten_params(c.extractor, fp))
            - value(nn_service.unflatten_params(c.extractor, fm))
        ) / (2 * eps)
    analytic = np.concatenate([g.reshape(-1) for g in result.extractor_grads.params()])
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_absolute_penalty_is_non_negative():
    rng = np.random.default_rng(9)
    c = _classifier(seed=1)
    batch = fairness_service.mix(
        rng.normal(size=(10, 4)), np.zeros(10), rng.normal(size=(10, 4)), np.ones(10), seed=1
    )
    signed = fairness_service.fairness_penalty(c, batch, mode="signed").value
    absolute = fairness_service.fairness_penalty(c, batch, mode="absolute").value
    assert absolute == pytest.approx(abs(signed))


def test_penalty_rejects_empty_batch():
    c = _classifier()
    empty = fairness_service.mix(np.zeros((0, 4)), np.zeros(0), np.zeros((0, 4)), np.ones(0), t=np.zeros(0))
    with pytest.raises(ShapeError):
        fairness_service.fairness_penalty(c, empty)


# --- dp_integral_check ---


def test_integral_identity_linear_model():
    rng = np.random.default_rng(0)
    net = nn_service.init_mlp([3, 1], rng)
    z0 = rng.normal(size=(40, 3)) + 1.0
    z1 = rng.normal(size=(40, 3))
    check = fairness_service.dp_integral_check(net, z0, z1, grid=64)
    assert check.error < 1e-9


def test_integral_identity_mlp():
    rng = np.random.default_rng(1)
    net = nn_service.init_mlp([4, 16, 2], rng, output_activation="softmax")
    z0 = rng.normal(size=(200, 4)) + 0.5
    z1 = rng.normal(size=(200, 4))
    check = fairness_service.dp_integral_check(net, z0, z1, grid=256)
    assert check.error <= 1e-2


def test_integral_check_unequal_groups_uses_all_pairs():
    rng = np.random.default_rng(2)
    net = nn_service.init_mlp([2, 1], rng)
    check = fairness_service.dp_integral_check(
        net, rng.normal(size=(7, 2)), rng.normal(size=(5, 2)), grid=64
    )
    assert check.error < 1e-9


def test_integral_check_rejects_coarse_grid():
    net = nn_service.init_mlp([2, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        fairness_service.dp_integral_check(net, np.zeros((2, 2)), np.ones((2, 2)), grid=10)


# --- divergencia y diagnósticos ---


def test_h_div_identical_samples_near_zero():
    rng = np.random.default_rng(0)
    ds = rng.normal(size=(1000, 2))
    assert fairness_service.h_div_proxy(ds, ds.copy(), seed=0) <= 0.2


def test_h_div_fresh_draws_of_same_distribution_near_zero():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(1000, 2))
    b = rng.normal(size=(1000, 2))
    assert fairness_service.h_div_proxy(a, b, seed=0) <= 0.2


def test_h_div_separated_samples_near_two():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(300, 2))
    b = rng.normal(size=(300, 2)) + 8.0
    assert fairness_service.h_div_proxy(a, b, seed=0) >= 1.9


def test_h_div_shrinks_as_generated_share_grows():
    rng = np.random.default_rng(12)
    local = rng.normal(size=(1000, 2))
    target = rng.normal(size=(1000, 2)) + np.array([2.0, 0.0])
    generated = rng.normal(size=(1000, 2)) + np.array([2.0, 0.0])
    values = [
        fairness_service.h_div_proxy(
            fairness_service.augment(local, generated, ratio, seed=1), target, seed=0
        )
        for ratio in (0.0, 0.25, 0.5, 0.75)
    ]
    rises = [later - earlier for earlier, later in zip(values, values[1:]) if later > earlier]
    assert len(rises) <= 1
    assert all(r <= 0.05 for r in rises)
    assert values[-1] < values[0]


def test_augment_replaces_requested_share():
    local = np.zeros((20, 3))
    generated = np.ones((30, 3))
    mixed = fairness_service.augment(local, generated, 0.25, seed=0)
    assert mixed.shape == (20, 3)
    assert int(mixed[:, 0].sum()) == 5
    np.testing.assert_array_equal(fairness_service.augment(local, generated, 0.0), local)


def test_augment_errors():
    with pytest.raises(ValueError):
        fairness_service.augment(np.zeros((4, 2)), np.ones((4, 2)), 1.5)
    with pytest.raises(ShapeError):
        fairness_service.augment(np.zeros((4, 2)), np.ones((4, 3)), 0.5)
    with pytest.raises(ShapeError):
        fairness_service.augment(np.zeros((10, 2)), np.ones((2, 2)), 0.5)


def test_h_div_invalid_capacity():
    rng = np.random.default_rng(0)
    ds = rng.normal(size=(20, 2))
    with pytest.raises(ProbeCapacityError):
        fairness_service.h_div_proxy(ds, ds, ProbeCapacity(hidden=0))
    with pytest.raises(ProbeCapacityError):
        fairness_service.h_div_proxy(ds, ds, ProbeCapacity(holdout_fraction=1.0))


def test_h_div_empty_sample():
    with pytest.raises(EmptyGroupError):
        fairness_service.h_div_proxy(np.zeros((0, 2)), np.ones((5, 2)))


def test_two_sample_auc_bounds():
    rng = np.random.default_rng(3)
    real = rng.normal(size=(300, 3))
    same = fairness_service.two_sample_auc(real, rng.normal(size=(300, 3)), seed=0)
    far = fairness_service.two_sample_auc(real, rng.normal(size=(300, 3)) + 6.0, seed=0)
    assert same <= 0.7
    assert far >= 0.99


def test_generator_diagnostics_detects_collapse():
    rng = np.random.default_rng(4)
    c = _classifier(seed=0, latent=3)
    real = rng.normal(size=(200, 3))
    real_a = rng.integers(0, 2, 200)
    collapsed = np.tile(real[:1], (200, 1)) + 1e-3 * rng.normal(size=(200, 3))
    diverse = fairness_service.generator_diagnostics(
        rng.normal(size=(200, 3)), real_a, real, real_a, c.attribute_head
    )
    narrow = fairness_service.generator_diagnostics(collapsed, real_a, real, real_a, c.attribute_head)
    assert narrow.spread_ratio < 0.01 < diverse.spread_ratio
    assert narrow.pairwise_distance_ratio < diverse.pairwise_distance_ratio
    assert 0.0 <= narrow.conditional_accuracy <= 1.0
    assert len(narrow.per_attribute_spread) == 2


def test_mix_batch_length():
    batch = MixBatch(*[np.zeros((3, 1))] * 7)
    assert len(batch) == 3
