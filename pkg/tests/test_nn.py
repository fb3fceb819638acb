import math

import numpy as np
import pytest

from bitwave.nn import (
    CalibrationError,
    Hyper,
    Model,
    ModelError,
    ModelFormatError,
    ModelSpec,
    TrainingError,
    calibrate_activations,
    forward,
    gradient_check,
    init_model,
    load_model,
    model_cost,
    model_from_bytes,
    model_to_bytes,
    save_model,
    squared_error,
    train,
)
from bitwave.quant import QuantizedTensor, dequantize, fake_quantize_frozen, quantize_residual


def small_model(wb=32, nb=32, dims=(6, 10, 8, 1), out="sigmoid", seed=0):
    return init_model(ModelSpec(dims, output_activation=out, weight_bits=wb, neuron_bits=nb), seed=seed)


def test_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec((4, 1))
    with pytest.raises(ModelError):
        ModelSpec((4, 3, 1), weight_bits=3)
    with pytest.raises(ModelError):
        ModelSpec((4, 0, 1))
    s = ModelSpec((4, 3, 1), weight_bits=2, neuron_bits=8)
    assert ModelSpec.from_dict(s.to_dict()) == s
    assert s.with_bits(1, 2).weight_bits == 1


def test_full_precision_quantized_mode_is_full_mode(rng, backend):
    m = small_model()
    calibrate_activations(m, rng.standard_normal((20, 6)))
    x = rng.standard_normal((13, 6)).astype(np.float32)
    np.testing.assert_array_equal(forward(m, x, "quantized"), forward(m, x, "full"))


def test_hand_built_two_bit_forward(backend):
    spec = ModelSpec((1, 1, 1), weight_bits=2, neuron_bits=2)
    m = Model(spec, [np.ones((1, 1), np.float32), np.ones((1, 1), np.float32)], [np.zeros(1, np.float32)] * 2)
    one_five = QuantizedTensor(1, 1, np.array([1.0, 0.5]), np.ones((2, 1, 1), dtype=np.uint64))
    m.packed = [one_five, QuantizedTensor(1, 1, np.array([1.0, 0.0]), np.ones((2, 1, 1), dtype=np.uint64))]
    m.act_scales = [np.array([1.0, 0.5]), np.array([2.0, 0.25])]
    res = forward(m, np.array([[1.5]]), "quantized", keep=True)
    assert res.pre[0][0, 0] == 2.25  # (1.0 + 0.5) * (1.0 + 0.5)
    assert res.output[0, 0] == pytest.approx(1 / (1 + math.exp(-2.25)), abs=1e-12)
    assert res.output[0, 0] == pytest.approx(0.9047, abs=1e-4)


def test_zero_weights_give_sigmoid_of_bias(rng):
    m = small_model()
    for w in m.weights:
        w[:] = 0
    m.biases[-1][:] = 0.7
    out = forward(m, rng.standard_normal((5, 6)), "full")
    np.testing.assert_allclose(out, 1 / (1 + np.exp(-0.7)), rtol=1e-6)


def test_quantized_mode_needs_calibration(rng):
    m = small_model(2, 2)
    with pytest.raises(CalibrationError):
        forward(m, rng.standard_normal((2, 6)), "quantized")
    with pytest.raises(ModelError):
        forward(m, rng.standard_normal((2, 5)), "full")
    with pytest.raises(CalibrationError):
        calibrate_activations(m, np.zeros((0, 6)))


def dequantized_oracle(model, x):
    """Layer by layer in float64 on dequantized weights and frozen-scale activations."""
    spec = model.spec
    h = np.asarray(x, dtype=np.float64)
    for l in range(spec.n_layers):
        if spec.site_quantized(l):
            h = fake_quantize_frozen(h, model.act_scales[l])
        w = dequantize(model.packed[l]) if spec.weights_quantized else model.weights[l].astype(np.float64)
        z = h @ w.T + model.biases[l]
        h = np.maximum(z, 0) if l < spec.n_layers - 1 else 1 / (1 + np.exp(-z))
    return h


@pytest.mark.parametrize("wb,nb", [(1, 1), (1, 2), (2, 4), (8, 8), (4, 32), (32, 2)])
def test_quantized_forward_matches_dequantized_oracle(wb, nb, rng, backend):
    m = small_model(wb, nb, dims=(30, 40, 20, 3))
    x = rng.standard_normal((200, 30)).astype(np.float32)
    t = (rng.random((200, 3)) > 0.5).astype(np.float32)
    train(m, (x, t), (x[:50], t[:50]), Hyper(lr=0.05, epochs=3, batch=32))
    calibrate_activations(m, x)
    got = forward(m, x, "quantized")
    assert np.max(np.abs(got - dequantized_oracle(m, x))) < 1e-5


def test_ste_step_updates_masters_not_planes(rng):
    m = small_model(1, 2)
    x = rng.standard_normal((64, 6)).astype(np.float32)
    t = (rng.random((64, 1)) > 0.5).astype(np.float32)
    m.pack_weights()
    planes_before = [q.planes.copy() for q in m.packed]
    masters_before = [w.copy() for w in m.weights]
    from bitwave.nn.train import train_step_grads

    _, gw, _ = train_step_grads(m, x, t, qat=True)
    for w, g in zip(m.weights, gw):
        w -= 0.5 * g.astype(np.float32)
    assert any(not np.array_equal(a, b) for a, b in zip(masters_before, m.weights))
    for q, before in zip(m.packed, planes_before):
        np.testing.assert_array_equal(q.planes, before)
    m.pack_weights()
    from bitwave.quant import quantize_matrix

    for q, w in zip(m.packed, m.weights):
        np.testing.assert_array_equal(q.planes, quantize_matrix(w, 1).planes)


def test_gradient_check_full_precision(rng):
    m = small_model(dims=(4, 7, 5, 2))
    for b in m.biases:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    x = rng.standard_normal((5, 4))
    t = rng.random((5, 2))
    assert gradient_check(m, x, t, eps=1e-4) < 1e-4
    mi = small_model(dims=(4, 7, 5, 3), out="identity")
    assert gradient_check(mi, x, rng.standard_normal((5, 3))) < 1e-4


def test_xor_toy():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (400, 2)).astype(np.float32)
    t = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.float32)[:, None]
    m = init_model(ModelSpec((2, 8, 1)), seed=3)
    train(m, (x, t), (x, t), Hyper(lr=0.5, momentum=0.9, batch=32, epochs=500, seed=1), log_every=0)
    final = squared_error(forward(m, x, "full"), t)
    assert final < 0.05
    hist = m.meta["history"]
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_full_precision_qat_equals_plain(rng):
    x = rng.standard_normal((120, 6)).astype(np.float32)
    t = (rng.random((120, 1)) > 0.5).astype(np.float32)
    a, b = small_model(), small_model()
    h = Hyper(lr=0.1, epochs=4, batch=16, seed=3)
    train(a, (x, t), (x, t), h, qat=True)
    train(b, (x, t), (x, t), h, qat=False)
    assert a.meta["history"] == b.meta["history"]
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)


def test_training_deterministic(rng):
    x = rng.standard_normal((120, 6)).astype(np.float32)
    t = (rng.random((120, 1)) > 0.5).astype(np.float32)
    runs = []
    for _ in range(2):
        m = small_model(1, 2)
        train(m, (x, t), (x, t), Hyper(lr=0.1, epochs=3, batch=16, seed=9))
        runs.append(m.meta["history"])
    assert runs[0] == runs[1]


def test_qat_clips_masters(rng):
    x = rng.standard_normal((100, 6)).astype(np.float32) * 10
    t = (rng.random((100, 1)) > 0.5).astype(np.float32)
    m = small_model(1, 2)
    train(m, (x, t), (x, t), Hyper(lr=5.0, epochs=2, batch=10))
    assert all(np.max(np.abs(w)) <= 1.0 for w in m.weights)


def test_nan_loss_aborts(rng):
    x = rng.standard_normal((50, 6)).astype(np.float32)
    x[3, 2] = np.nan
    t = np.zeros((50, 1), np.float32)
    with pytest.raises(TrainingError, match="non-finite"):
        train(small_model(), (x, t), (x, t), Hyper(epochs=1, batch=50))


def test_calibration_constant_and_deterministic(rng):
    m = init_model(ModelSpec((3, 4, 1), neuron_bits=1), seed=0)
    calibrate_activations(m, np.full((10, 3), 0.8))
    assert m.act_scales[0].tolist() == [pytest.approx(0.8)]
    x = rng.standard_normal((50, 3))
    a = [s.copy() for s in calibrate_activations(m, x).act_scales]
    b = calibrate_activations(m, x).act_scales
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa, sb)


def test_calibration_matches_pooled_quantizer(rng):
    m = small_model(32, 4)
    x = rng.standard_normal((80, 6))
    calibrate_activations(m, x, propagate="full")
    np.testing.assert_array_equal(m.act_scales[0], quantize_residual(x.reshape(-1), 4).scales)
    h1 = np.maximum(x @ m.weights[0].astype(np.float64).T + m.biases[0], 0)
    np.testing.assert_allclose(m.act_scales[1], quantize_residual(h1.reshape(-1), 4).scales, rtol=1e-12)


def test_model_cost_examples():
    vad = ModelSpec((903, 512, 512, 512, 1))
    c = model_cost(vad)
    assert c.mops_per_frame == pytest.approx(2 * (903 * 512 + 2 * 512 * 512 + 512) / 1e6)
    assert c.mops_per_frame == pytest.approx(1.97, abs=0.01)
    assert c.memory_bytes / 1e6 == pytest.approx(3.95, abs=0.01)
    c1 = model_cost(vad, weight_bits=1)
    assert c1.memory_bytes / 1e6 == pytest.approx(3.95 / 32, abs=0.01)
    enh = ModelSpec((7 * 257, 2048, 2048, 2048, 257), output_activation="identity")
    ce = model_cost(enh)
    assert 25 <= ce.mops_per_frame <= 28
    assert 50e6 <= ce.memory_bytes <= 56e6


def test_memory_linear_in_weight_bits():
    spec = ModelSpec((64, 128, 10))
    weights = 64 * 128 + 128 * 10
    biases = 4 * (128 + 10)
    for wb in (1, 2, 4, 8, 32):
        assert model_cost(spec, weight_bits=wb).memory_bytes == weights * wb // 8 + biases


def _trained(rng, wb=2, nb=2):
    m = small_model(wb, nb)
    x = rng.standard_normal((60, 6)).astype(np.float32)
    t = (rng.random((60, 1)) > 0.5).astype(np.float32)
    train(m, (x, t), (x, t), Hyper(epochs=2, batch=16))
    calibrate_activations(m, x)
    return m, x


def test_save_load_round_trip(tmp_path, rng):
    m, x = _trained(rng)
    save_model(m, tmp_path / "a.bwnn")
    back = load_model(tmp_path / "a.bwnn")
    save_model(back, tmp_path / "b.bwnn")
    assert (tmp_path / "a.bwnn").read_bytes() == (tmp_path / "b.bwnn").read_bytes()
    np.testing.assert_array_equal(forward(back, x, "quantized"), forward(m, x, "quantized"))
    for qa, qb in zip(m.packed, back.packed):
        np.testing.assert_array_equal(qa.planes, qb.planes)
    assert back.meta["history"] == m.meta["history"]


def test_corrupt_files(tmp_path, rng):
    m, _ = _trained(rng)
    blob = model_to_bytes(m)
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(blob[:-10])
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(blob[:3])
    flipped = bytearray(blob)
    flipped[-1] ^= 0xFF
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(bytes(flipped))
    bad_version = blob[:4] + (99).to_bytes(2, "little") + blob[6:]
    with pytest.raises(ModelFormatError, match="version"):
        model_from_bytes(bad_version)
    with pytest.raises(ModelFormatError, match="magic"):
        model_from_bytes(b"XXXX" + blob[4:])


def test_gain_target_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec((14, 8, 2), gain_floor_db=30.0, context_frames=7)
    with pytest.raises(ModelError):
        ModelSpec((14, 8, 2), output_activation="identity", gain_floor_db=30.0, context_frames=3)
    with pytest.raises(ModelError):
        ModelSpec((14, 8, 2), output_activation="identity", gain_floor_db=0.0, context_frames=7)
    s = ModelSpec((14, 8, 2), output_activation="identity", gain_floor_db=30.0, context_frames=7)
    assert ModelSpec.from_dict(s.to_dict()) == s


def test_gain_targets_and_prediction_bounds(rng):
    from bitwave.dsp import TaskArrays
    from bitwave.nn.task import centre_frame, fit_task, gain_targets, predict

    spec = ModelSpec((3 * 4, 10, 4), output_activation="identity", gain_floor_db=30.0, context_frames=3)
    feats = rng.normal(0, 3, (300, 12)).astype(np.float32)
    centre = feats[:, 4:8]
    np.testing.assert_array_equal(centre_frame(spec, feats), centre)
    clean = centre + rng.normal(-2, 4, centre.shape)
    t = gain_targets(spec, feats, clean)
    floor = np.log(1000.0)
    assert t.min() >= -floor - 1e-12 and t.max() <= 0.0
    np.testing.assert_allclose(t, np.clip(clean - centre, -floor, 0))
    arrays = TaskArrays(feats, clean.astype(np.float32), np.array([0, 300]), ["a"])
    model = fit_task(spec, arrays, arrays, Hyper(epochs=2, batch=50), qat=False)
    out = predict(model, feats, mode="full")
    assert np.all(out <= centre + 1e-5) and np.all(out >= centre - floor - 1e-5)
