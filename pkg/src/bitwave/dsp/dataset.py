"""Synthetic noisy-speech corpora and the JSON-lines manifest that indexes them."""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip, read_wav, write_wav
from .stft import StftParams, stack_context, stft
from .synth import NOISE_KINDS, apply_rir, mix_at_snr, synth_noise, synth_rir, synth_speech, vad_labels

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
MANIFEST_NAME = "manifest.jsonl"
NOISE_PEAK = 0.9


class DatasetError(Exception):
    pass


@dataclass
class ManifestEntry:
    id: str
    split: str
    clean_path: str  # clean speech as it appears in the mixture (after the room response)
    noisy_path: str
    noise_path: str
    label_path: str
    rir_id: str
    rt60_ms: float
    snr_db: float
    noise_kind: str
    gain: float
    peak_gain: float


@dataclass
class Manifest:
    root: Path
    entries: list

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def path(self, rel):
        return self.root / rel


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    names = {f.name for f in fields(ManifestEntry)}
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                entries.append(ManifestEntry(**{k: raw[k] for k in names}))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed manifest entry ({exc})") from exc
    return Manifest(path.parent, entries)


def load_labels(path):
    with open(path) as fh:
        return np.asarray(json.load(fh), dtype=np.int8)


def _split_of(index, counts):
    edge = 0
    for name, c in zip(SPLITS, counts):
        edge += c
        if index < edge:
            return name
    raise IndexError(index)


def _partition_sources(files, counts, seed):
    """Disjoint clean-file pools per split, proportional to the split counts."""
    files = sorted(files)
    if len(files) < sum(1 for c in counts if c):
        raise DatasetError(f"need at least one clean file per split, found {len(files)}")
    order = np.random.default_rng(seed).permutation(len(files))
    files = [files[i] for i in order]
    total = sum(counts)
    pools, start = {}, 0
    for name, c in zip(SPLITS, counts):
        take = max(1, round(len(files) * c / total)) if c else 0
        take = min(take, len(files) - start - sum(1 for later in counts[SPLITS.index(name) + 1 :] if later))
        pools[name] = files[start : start + take]
        start += take
    return pools


@dataclass(frozen=True)
class SynthConfig:
    out_dir: str
    counts: tuple = (75, 15, 15)
    snr_list: tuple = (0.0, 5.0, 10.0)
    seed: int = 0
    duration_s: float = 3.0
    rt60_range_ms: tuple = (150.0, 600.0)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    clean_dir: str | None = None
    noise_dir: str | None = None
    label_threshold_db: float = 40.0


def _make_entry(cfg, index, split, clean_src, noise_src):
    rng = np.random.default_rng([cfg.seed, index])
    sr = cfg.sample_rate
    if clean_src is None:
        dry = synth_speech(rng, cfg.duration_s, sr)
    else:
        dry = read_wav(clean_src, sr)
    n = len(dry)
    if noise_src is None:
        kind = NOISE_KINDS[index % len(NOISE_KINDS)]
        noise = synth_noise(kind, rng, n, sr)
    else:
        kind = Path(noise_src).stem
        noise = read_wav(noise_src, sr)
    noise = AudioClip(noise.samples * (NOISE_PEAK / max(np.max(np.abs(noise.samples)), 1e-12)), sr)
    offset = int(rng.integers(0, max(1, len(noise) - n))) if len(noise) > n else 0

    rt60 = float(np.round(rng.uniform(*cfg.rt60_range_ms), 1))
    rir_seed = int(rng.integers(0, 2**31 - 1))
    reverberant = AudioClip(apply_rir(dry, synth_rir(rt60, rir_seed, sr)).samples[:n], sr)
    snr = float(cfg.snr_list[int(rng.integers(0, len(cfg.snr_list)))])
    mix = mix_at_snr(reverberant, noise, snr, offset=offset)
    labels = vad_labels(dry, StftParams(sample_rate=sr), cfg.label_threshold_db)

    eid = f"{split}_{index:05d}"
    out = Path(cfg.out_dir)
    rel = {
        "clean_path": f"clean/{eid}.wav",
        "noisy_path": f"noisy/{eid}.wav",
        "noise_path": f"noise/{eid}.wav",
        "label_path": f"labels/{eid}.json",
    }
    write_wav(out / rel["clean_path"], AudioClip(reverberant.samples * mix.peak_gain, sr))
    write_wav(out / rel["noisy_path"], mix.noisy)
    write_wav(out / rel["noise_path"], AudioClip(noise.samples[offset : offset + n] if len(noise) > n else noise.samples, sr))
    with open(out / rel["label_path"], "w") as fh:
        json.dump(labels.tolist(), fh, separators=(",", ":"))
    return ManifestEntry(
        id=eid,
        split=split,
        rir_id=f"exp-rt{rt60:g}-s{rir_seed}",
        rt60_ms=rt60,
        snr_db=snr,
        noise_kind=kind,
        gain=mix.gain,
        peak_gain=mix.peak_gain,
        **rel,
    )


def _make_entry_star(args):
    return _make_entry(*args)


def generate_dataset(cfg, workers=1):
    """Write WAVs, labels and ``manifest.jsonl`` under ``cfg.out_dir``.

    Entry ``i`` draws everything from ``default_rng([seed, i])``, so the output
    is byte-identical across runs and independent of ``workers``.
    """
    out = Path(cfg.out_dir)
    try:
        for sub in ("clean", "noisy", "noise", "labels"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DatasetError(f"output directory not writable: {out}")

    counts = tuple(int(c) for c in cfg.counts)
    clean_pools = None
    if cfg.clean_dir is not None:
        files = [str(p) for p in Path(cfg.clean_dir).glob("*.wav")]
        clean_pools = _partition_sources(files, counts, cfg.seed)
    noise_files = None
    if cfg.noise_dir is not None:
        noise_files = sorted(str(p) for p in Path(cfg.noise_dir).glob("*.wav"))
        if not noise_files:
            raise DatasetError(f"no .wav files in noise directory {cfg.noise_dir}")

    jobs = []
    split_index = {s: 0 for s in SPLITS}
    for i in range(sum(counts)):
        split = _split_of(i, counts)
        clean_src = None
        if clean_pools is not None:
            pool = clean_pools[split]
            clean_src = pool[split_index[split] % len(pool)]
        split_index[split] += 1
        noise_src = None
        if noise_files is not None:
            noise_src = noise_files[int(np.random.default_rng([cfg.seed, i, 1]).integers(0, len(noise_files)))]
        jobs.append((cfg, i, split, clean_src, noise_src))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            entries = list(ex.map(_make_entry_star, jobs, chunksize=4))
    else:
        entries = [_make_entry(*job) for job in jobs]
    path = out / MANIFEST_NAME
    write_manifest(path, entries)
    log.info("wrote %d entries to %s", len(entries), path)
    return path


@dataclass
class TaskArrays:
    features: np.ndarray  # (frames, context * bins), unnormalized
    targets: np.ndarray  # (frames, 1) labels or (frames, bins) clean log-power
    offsets: np.ndarray  # start row of each file, plus the total at the end
    ids: list


def task_arrays(manifest, split, task, params=None, context=7):
    """Stacked noisy log-power features and per-frame targets for one split."""
    params = params or StftParams()
    feats, targets, offsets, ids = [], [], [0], []
    for e in manifest.split(split):
        noisy = read_wav(manifest.path(e.noisy_path), params.sample_rate)
        spec = stft(noisy, params)
        feats.append(stack_context(spec.log_power(), context).astype(np.float32))
        if task == "vad":
            lab = load_labels(manifest.path(e.label_path))
            if lab.size != spec.frames:
                raise DatasetError(f"{e.id}: {lab.size} labels for {spec.frames} frames")
            targets.append(lab.astype(np.float32)[:, None])
        elif task == "enhance":
            clean = read_wav(manifest.path(e.clean_path), params.sample_rate)
            if len(clean) != len(noisy):
                raise DatasetError(f"{e.id}: clean/noisy length mismatch")
            targets.append(stft(clean, params).log_power().astype(np.float32))
        else:
            raise DatasetError(f"unknown task {task!r}")
        offsets.append(offsets[-1] + spec.frames)
        ids.append(e.id)
    if not feats:
        raise DatasetError(f"split {split!r} is empty")
    return TaskArrays(np.concatenate(feats), np.concatenate(targets), np.asarray(offsets), ids)
