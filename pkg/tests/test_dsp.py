import json
import wave

import numpy as np
import pytest

from bitwave.dsp import (
    AudioClip,
    AudioFormatError,
    NormStats,
    SignalError,
    StftError,
    StftParams,
    SynthConfig,
    apply_rir,
    features,
    generate_dataset,
    istft,
    load_manifest,
    mix_at_snr,
    read_wav,
    stft,
    synth_rir,
    synth_speech,
    task_arrays,
    vad_labels,
    write_wav,
)
from bitwave.dsp.synth import power

P = StftParams()


def test_default_params():
    assert (P.frame, P.hop, P.fft_size, P.bins) == (256, 128, 256, 129)


def test_frame_count():
    for n in (256, 257, 383, 384, 1000):
        spec = stft(AudioClip(np.zeros(n)))
        assert spec.frames == (n - 256) // 128 + 1


def test_too_short():
    with pytest.raises(StftError):
        stft(AudioClip(np.zeros(100)))


def test_zero_signal():
    assert not np.any(stft(AudioClip(np.zeros(2048))).values)


@pytest.mark.parametrize("k", [5, 17, 40, 100])
def test_bin_centred_sine(k):
    fs = 16000
    x = np.sin(2 * np.pi * k * fs / 256 * np.arange(4096) / fs)
    spec = stft(AudioClip(x))
    # oracle: direct DFT of each windowed frame
    frame0 = x[:256] * P.window()
    direct = np.array([np.sum(frame0 * np.exp(-2j * np.pi * b * np.arange(256) / 256)) for b in range(129)])
    np.testing.assert_allclose(spec.values[0], direct, atol=1e-9)
    energy = np.abs(spec.values) ** 2
    # Hann main lobe spans k-1..k+1
    near = energy[:, k - 1 : k + 2].sum(axis=1)
    assert np.all(near >= 0.9 * energy.sum(axis=1))
    assert np.all(np.argmax(energy, axis=1) == k)


def test_cola_window_sum():
    w = P.window()
    total = np.zeros(128 * 20 + 256)
    for t in range(21):
        total[t * 128 : t * 128 + 256] += w
    np.testing.assert_allclose(total[256:-256], 1.0, atol=1e-9)
    sq = np.zeros_like(total)
    for t in range(21):
        sq[t * 128 : t * 128 + 256] += w**2
    # squared Hann at 50% hop is not flat; the inverse divides by it instead
    assert sq[256:-256].min() >= 0.5 - 1e-12


def test_round_trip_white_noise(rng):
    x = rng.uniform(-0.9, 0.9, 16000)
    y = istft(stft(AudioClip(x))).samples
    assert y.size == (stft(AudioClip(x)).frames - 1) * 128 + 256
    interior = slice(128, y.size - 128)
    assert np.max(np.abs(y[interior] - x[interior])) < 1e-6
    assert np.linalg.norm(y[interior] - x[interior]) < 1e-6 * np.linalg.norm(x[interior])


def test_istft_zero_and_mismatch():
    spec = stft(AudioClip(np.zeros(1000)))
    assert not np.any(istft(spec).samples)
    with pytest.raises(StftError):
        istft(spec, StftParams(frame_ms=32))


def test_feature_shapes_and_constant_input():
    spec = stft(AudioClip(np.ones(3000)))
    f = features(spec)
    assert f.shape == (spec.frames, 7 * 129)
    assert np.all(f == f[0])


def test_context_stacking_replicates_edges(rng):
    spec = stft(AudioClip(rng.standard_normal(2000)))
    lp = spec.log_power()
    f = features(spec)
    np.testing.assert_array_equal(f[0, :129], lp[0])
    np.testing.assert_array_equal(f[0, 3 * 129 : 4 * 129], lp[0])
    np.testing.assert_array_equal(f[5, 3 * 129 : 4 * 129], lp[5])
    np.testing.assert_array_equal(f[5, 6 * 129 :], lp[8])
    np.testing.assert_array_equal(f[-1, 6 * 129 :], lp[-1])


def test_normalization(rng):
    data = features(stft(AudioClip(rng.standard_normal(16000))))
    stats = NormStats.fit(data)
    z = stats.apply(data)
    assert np.max(np.abs(z.mean(axis=0))) < 1e-6
    assert np.max(np.abs(z.std(axis=0) - 1)) < 1e-6


def test_norm_stats_json(tmp_path, rng):
    stats = NormStats.fit(rng.standard_normal((50, 4)))
    stats.save(tmp_path / "n.json")
    back = NormStats.load(tmp_path / "n.json")
    np.testing.assert_array_equal(back.mean, stats.mean)
    np.testing.assert_array_equal(back.std, stats.std)


def test_mix_gain_examples(rng):
    clean = AudioClip(np.ones(1000) * 0.1)
    noise = AudioClip(np.ones(1000) * 0.1 * np.where(np.arange(1000) % 2, 1, -1))
    assert mix_at_snr(clean, noise, 0.0).gain == pytest.approx(1.0)
    c = AudioClip(np.where(np.arange(1000) % 2, 1.0, -1.0))
    assert mix_at_snr(c, AudioClip(-c.samples), 10.0, peak_normalize=False).gain == pytest.approx(10**-0.5)
    out = mix_at_snr(clean, noise, np.inf)
    np.testing.assert_array_equal(out.noisy.samples, clean.samples)


@pytest.mark.parametrize("snr", [-5, 0, 5, 10, 20])
def test_mix_hits_target(snr, rng):
    clean = synth_speech(rng, 2.0)
    noise = AudioClip(rng.standard_normal(12000) * 0.3)  # shorter: tiled
    mix = mix_at_snr(clean, noise, snr)
    measured = 10 * np.log10(power(mix.clean_part) / power(mix.scaled_noise))
    assert abs(measured - snr) < 0.1
    assert np.max(np.abs(mix.noisy.samples)) <= 1.0


def test_mix_silent_clean():
    with pytest.raises(SignalError, match="silent clean input"):
        mix_at_snr(AudioClip(np.zeros(100)), AudioClip(np.ones(100)), 0)


def test_rir_identity_and_delay(rng):
    x = AudioClip(rng.standard_normal(500))
    np.testing.assert_allclose(apply_rir(x, [1.0]).samples, x.samples)
    d = 7
    y = apply_rir(x, np.eye(1, d + 1, d)[0]).samples
    assert y.size == 500 + d
    np.testing.assert_allclose(y[d:], x.samples, atol=1e-12)
    np.testing.assert_allclose(y[:d], 0, atol=1e-12)


@pytest.mark.parametrize("rt60", [100, 300, 800])
def test_rir_decay_slope(rt60):
    h = synth_rir(rt60, seed=3)
    assert h[0] == 1.0
    tail = h[1:]
    block = 160
    nb = tail.size // block
    energy = (tail[: nb * block] ** 2).reshape(nb, block).sum(axis=1)
    t = (np.arange(nb) + 0.5) * block / 16000 * 1000
    slope = np.polyfit(t, 10 * np.log10(energy), 1)[0]
    assert abs(slope * rt60 + 60) < 3


def test_rir_range():
    with pytest.raises(SignalError):
        synth_rir(20, seed=0)


def test_vad_labels_basic():
    n = 16000
    assert not vad_labels(AudioClip(np.zeros(n))).any()
    tone = 0.5 * np.sin(2 * np.pi * 440 * np.arange(n) / 16000)
    assert vad_labels(AudioClip(tone)).all()
    assert vad_labels(AudioClip(tone)).size == stft(AudioClip(tone)).frames


def test_vad_labels_onset():
    n, onset = 16000, 8000
    x = np.zeros(n)
    x[onset:] = 0.5 * np.sin(2 * np.pi * 440 * np.arange(n - onset) / 16000)
    lab = vad_labels(AudioClip(x))
    first = int(np.argmax(lab))
    # frame containing the onset sample
    containing = [t for t in range(lab.size) if t * 128 <= onset < t * 128 + 256]
    assert min(containing) - 1 <= first <= max(containing) + 1
    assert lab[first:].all() and not lab[:first].any()


def test_wav_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 0.999, 5000)
    write_wav(tmp_path / "a.wav", AudioClip(x))
    y = read_wav(tmp_path / "a.wav").samples
    assert np.max(np.abs(y - x)) <= 1 / 32768


def _raw_wav(path, channels, rate, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(b"\x00" * width * channels * 100)


def test_wav_rejections(tmp_path):
    _raw_wav(tmp_path / "s.wav", 2, 16000)
    with pytest.raises(AudioFormatError, match="mono required"):
        read_wav(tmp_path / "s.wav")
    _raw_wav(tmp_path / "r.wav", 1, 44100)
    with pytest.raises(AudioFormatError, match="sample-rate mismatch"):
        read_wav(tmp_path / "r.wav")
    _raw_wav(tmp_path / "b.wav", 1, 16000, width=1)
    with pytest.raises(AudioFormatError, match="16-bit"):
        read_wav(tmp_path / "b.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "junk.wav")


def test_dataset_reproducible_and_aligned(tmp_path):
    cfgs = [SynthConfig(out_dir=str(tmp_path / d), counts=(4, 2, 2), seed=7, duration_s=1.0) for d in ("a", "b")]
    paths = [generate_dataset(c) for c in cfgs]
    assert paths[0].read_bytes() == paths[1].read_bytes()
    for sub in ("noisy/train_00000.wav", "labels/test_00007.json"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
    m = load_manifest(paths[0])
    assert [len(m.split(s)) for s in ("train", "valid", "test")] == [4, 2, 2]
    for e in m.entries:
        assert e.snr_db in (0.0, 5.0, 10.0)
        labels = json.loads(m.path(e.label_path).read_text())
        assert len(labels) == stft(read_wav(m.path(e.noisy_path))).frames
    arrays = task_arrays(m, "train", "vad")
    assert arrays.features.shape[1] == 903 and arrays.targets.shape == (arrays.features.shape[0], 1)
    arrays = task_arrays(m, "test", "enhance")
    assert arrays.targets.shape[1] == 129


def test_dataset_workers_match_serial(tmp_path):
    a = generate_dataset(SynthConfig(out_dir=str(tmp_path / "a"), counts=(3, 1, 1), seed=1, duration_s=0.5))
    b = generate_dataset(SynthConfig(out_dir=str(tmp_path / "b"), counts=(3, 1, 1), seed=1, duration_s=0.5), workers=2)
    assert a.read_bytes() == b.read_bytes()


def test_dataset_from_directories(tmp_path, rng):
    (tmp_path / "clean").mkdir()
    (tmp_path / "noise").mkdir()
    for i in range(6):
        write_wav(tmp_path / "clean" / f"u{i}.wav", synth_speech(rng, 0.5))
    write_wav(tmp_path / "noise" / "hiss.wav", AudioClip(rng.uniform(-0.5, 0.5, 4000)))
    cfg = SynthConfig(out_dir=str(tmp_path / "out"), counts=(4, 1, 1), clean_dir=str(tmp_path / "clean"), noise_dir=str(tmp_path / "noise"))
    m = load_manifest(generate_dataset(cfg))
    assert {e.noise_kind for e in m.entries} == {"hiss"}
