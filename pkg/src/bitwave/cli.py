"""``bitwave`` command line: synth, train, eval, bench and explore.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure (non-finite loss, failed exploration cell).
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("bitwave")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
TASKS = ("vad", "enhance")


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------


@dataclass
class StftConfig:
    sample_rate: int = 16000
    frame_ms: float = 16.0
    overlap: float = 0.5


@dataclass
class ModelConfig:
    hidden: tuple = (512, 512, 512)
    context_frames: int = 7
    quantize_input: bool = True
    gain_floor_db: float | None = 30.0  # enhancement only; null maps to clean log-power directly


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 256
    epochs: int = 20
    clip: float = 1.0


@dataclass
class SynthSection:
    counts: tuple = (75, 15, 15)
    snr_list: tuple = (0.0, 5.0, 10.0)
    duration_s: float = 3.0
    rt60_range_ms: tuple = (150.0, 600.0)
    clean_dir: str | None = None
    noise_dir: str | None = None
    self_contained: bool = False
    workers: int = 1


@dataclass
class RunConfig:
    task: str = "vad"
    seed: int = 0
    bits: tuple = (32, 32)
    grid: tuple = ((1, 1), (1, 2), (1, 4), (1, 8), (2, 1), (2, 2), (2, 4), (2, 8),
                   (4, 1), (4, 2), (4, 4), (4, 8), (8, 1), (8, 2), (8, 4), (8, 8))
    manifest: str | None = None
    out: str | None = None
    model: str | None = None
    bench_dims: tuple = (512, 903, 512)
    bench_reps: int = 10
    stft: StftConfig = field(default_factory=StftConfig)
    net: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSection = field(default_factory=SynthSection)

    def validate(self):
        from .nn.model import ALLOWED_BITS

        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        for w, n in (self.bits, *self.grid):
            if w not in ALLOWED_BITS or n not in ALLOWED_BITS:
                raise ConfigError(f"bit widths must be in {ALLOWED_BITS}, got {w}x{n}")
        if not self.grid:
            raise ConfigError("grid is empty")
        if len(self.synth.counts) != 3 or any(c < 0 for c in self.synth.counts) or sum(self.synth.counts) == 0:
            raise ConfigError("counts must be three non-negative integers train/valid/test")
        if not self.synth.snr_list:
            raise ConfigError("snr list is empty")
        if any(h < 1 for h in self.net.hidden) or not self.net.hidden:
            raise ConfigError("hidden layer widths must be >= 1")
        if self.train.epochs < 1 or self.train.batch < 1 or self.train.lr <= 0:
            raise ConfigError("epochs, batch and lr must be positive")
        if len(self.bench_dims) != 3 or min(self.bench_dims) < 1:
            raise ConfigError("bench dims must be three positive integers")
        return self


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for key, value in data.items():
        current = getattr(defaults, key)
        if is_dataclass(current):
            kwargs[key] = _build(type(current), value, f"{where}.{key}")
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return _build(RunConfig, data, "config")


def config_to_dict(cfg):
    return asdict(cfg)


def parse_bits(text):
    sep = "x" if "x" in text.lower() else ","
    try:
        w, n = (int(v) for v in text.lower().split(sep))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WxN, got {text!r}") from exc
    return (w, n)


def parse_grid_arg(text):
    from .evalx import parse_grid

    try:
        return parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def parse_counts(text):
    parts = text.replace(",", "/").split("/")
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected TRAIN/VALID/TEST counts, got {text!r}") from exc
    if len(counts) != 3:
        raise argparse.ArgumentTypeError("expected three counts TRAIN/VALID/TEST")
    return counts


def parse_floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_dims(text):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected MxNxP, got {text!r}") from exc
    if len(dims) != 3:
        raise argparse.ArgumentTypeError("expected MxNxP")
    return dims


def resolve_config(args):
    """Config file (if any) with command-line flags layered on top."""
    cfg = load_config(args.config) if args.config else RunConfig()
    top = {}
    for name in ("task", "seed", "bits", "grid", "manifest", "out", "model", "bench_reps"):
        value = getattr(args, name, None)
        if value is not None:
            top[name] = value
    if getattr(args, "dims", None) is not None:
        top["bench_dims"] = args.dims
    cfg = replace(cfg, **top)
    synth = {}
    for name in ("counts", "snr_list", "duration_s", "clean_dir", "noise_dir", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            synth[name] = value
    if getattr(args, "self_contained", False):
        synth["self_contained"] = True
    train = {k: getattr(args, k) for k in ("epochs", "lr", "batch") if getattr(args, k, None) is not None}
    net = {}
    if getattr(args, "hidden", None) is not None:
        net["hidden"] = args.hidden
    cfg = replace(
        cfg,
        synth=replace(cfg.synth, **synth),
        train=replace(cfg.train, **train),
        net=replace(cfg.net, **net),
    )
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed configuration value: {exc}") from exc


def _require(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _out_dir(cfg):
    out = Path(_require(cfg.out, "--out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _manifest(cfg):
    from .dsp import load_manifest

    path = Path(_require(cfg.manifest, "--manifest"))
    if not (path / "manifest.jsonl" if path.is_dir() else path).exists():
        raise ConfigError(f"manifest not found: {path}")
    return load_manifest(path)


def _stft_params(cfg):
    from .dsp import StftParams

    return StftParams(cfg.stft.sample_rate, cfg.stft.frame_ms, cfg.stft.overlap)


def _hyper(cfg):
    from .nn import Hyper

    t = cfg.train
    return Hyper(lr=t.lr, momentum=t.momentum, batch=t.batch, epochs=t.epochs, seed=cfg.seed, clip=t.clip)


def _model_spec(cfg, input_dim, output_dim, bits):
    from .nn import ModelSpec

    return ModelSpec(
        (input_dim, *cfg.net.hidden, output_dim),
        output_activation="sigmoid" if cfg.task == "vad" else "identity",
        weight_bits=bits[0],
        neuron_bits=bits[1],
        context_frames=cfg.net.context_frames,
        quantize_input=cfg.net.quantize_input,
        task=cfg.task,
        gain_floor_db=cfg.net.gain_floor_db if cfg.task == "enhance" else None,
    )


def _arrays(cfg, manifest, splits):
    from .dsp import task_arrays

    params = _stft_params(cfg)
    return [task_arrays(manifest, s, cfg.task, params, cfg.net.context_frames) for s in splits]


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# --- commands -----------------------------------------------------------------


def cmd_synth(cfg):
    from .dsp import SynthConfig, generate_dataset

    s = cfg.synth
    if not s.self_contained:
        if s.clean_dir is None or s.noise_dir is None:
            raise ConfigError("give --clean-dir and --noise-dir, or --self-contained")
        for d in (s.clean_dir, s.noise_dir):
            if not Path(d).is_dir():
                raise ConfigError(f"source directory not found: {d}")
    out = _out_dir(cfg)
    path = generate_dataset(
        SynthConfig(
            out_dir=str(out),
            counts=tuple(s.counts),
            snr_list=tuple(s.snr_list),
            seed=cfg.seed,
            duration_s=s.duration_s,
            rt60_range_ms=tuple(s.rt60_range_ms),
            sample_rate=cfg.stft.sample_rate,
            clean_dir=None if s.self_contained else s.clean_dir,
            noise_dir=None if s.self_contained else s.noise_dir,
        ),
        workers=s.workers,
    )
    print(path)
    return EXIT_OK


def cmd_train(cfg):
    from .nn import fit_task, save_model

    manifest = _manifest(cfg)
    out = _out_dir(cfg)
    train_a, valid_a = _arrays(cfg, manifest, ("train", "valid"))
    spec = _model_spec(cfg, train_a.features.shape[1], train_a.targets.shape[1], cfg.bits)
    model = fit_task(spec, train_a, valid_a, _hyper(cfg))
    model.meta["config"] = config_to_dict(cfg)
    save_model(model, out / "model.bwnn")
    history = model.meta["history"]
    _write_json(out / "train_log.json", {"history": history, "best_epoch": model.meta["best_epoch"]})
    print(f"final train loss {history[-1]['train_loss']:.6f} valid loss {history[-1]['valid_loss']:.6f}")
    return EXIT_OK


def _load_vad_predictions(path, manifest):
    from .dsp import DatasetError

    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read predictions {path}: {exc}") from exc
    missing = [e.id for e in manifest.split("test") if e.id not in data]
    if missing:
        raise DatasetError(f"predictions missing for {missing[:3]}")
    return data


def _eval_vad(cfg, manifest, model, predictions):
    from .dsp import load_labels
    from .evalx import decisions, frame_error

    test_a = None
    if predictions is None:
        from .nn import predict

        (test_a,) = _arrays(cfg, manifest, ("test",))
        if test_a.features.shape[1] != model.spec.layer_dims[0]:
            from .dsp import DatasetError

            raise DatasetError(
                f"features have width {test_a.features.shape[1]}, model expects {model.spec.layer_dims[0]}"
            )
        decided = decisions(predict(model, test_a.features))
    files, wrong, total = [], 0, 0
    for i, e in enumerate(manifest.split("test")):
        labels = load_labels(manifest.path(e.label_path))
        if predictions is None:
            pred = decided[test_a.offsets[i] : test_a.offsets[i + 1]]
        else:
            pred = np.asarray(predictions[e.id])
        err = frame_error(pred, labels)
        files.append({"id": e.id, "frames": int(labels.size), "frame_error": err})
        wrong += round(err * labels.size)
        total += labels.size
    return {"frame_error": wrong / total, "frames": total, "files": files}


def cmd_eval(cfg, predictions=None):
    from .evalx import enhancement_eval, identity_predictor, oracle_predictor
    from .nn import load_model

    manifest = _manifest(cfg)
    out = _out_dir(cfg)
    model = None
    if predictions is None:
        model = load_model(_require(cfg.model, "--model"))
        if model.spec.task is not None and model.spec.task != cfg.task:
            raise ConfigError(f"model was trained for {model.spec.task!r}, not {cfg.task!r}")
    report = {"task": cfg.task}
    if model is not None:
        report.update(weight_bits=model.spec.weight_bits, neuron_bits=model.spec.neuron_bits)
    if cfg.task == "vad":
        preds = _load_vad_predictions(predictions, manifest) if predictions else None
        report.update(_eval_vad(cfg, manifest, model, preds))
        print(f"frame error {report['frame_error']:.4f}")
    else:
        if predictions is not None:
            chosen = {"oracle": oracle_predictor(manifest), "identity": identity_predictor}
            if predictions not in chosen:
                raise ConfigError("for enhancement, --predictions must be 'oracle' or 'identity'")
            predictor = chosen[predictions]
        else:
            predictor = model
        result = enhancement_eval(predictor, manifest, "test", _stft_params(cfg))
        report.update(result.to_dict())
        print(f"mean SNR improvement {result.mean_improvement:.2f} dB")
    _write_json(out / "metrics.json", report)
    return EXIT_OK


def cmd_bench(cfg):
    from .evalx import bench_gemm, time_features

    out = _out_dir(cfg)
    m, n, p = cfg.bench_dims
    rows = []
    for w, nb in cfg.grid:
        r = bench_gemm(m, n, p, w, nb, reps=cfg.bench_reps, seed=cfg.seed)
        rows.append(r.to_dict())
        print(f"W{w}/N{nb} {m}x{n}x{p}: quantized {r.time_quantized * 1e3:.3f} ms, "
              f"dense {r.time_dense * 1e3:.3f} ms, speedup {r.speedup:.2f} (ideal {r.ideal_speedup:.2f})")
    feature_time = time_features(seed=cfg.seed)
    _write_json(out / "bench.json", {"rows": rows, "feature_seconds_per_audio_second": feature_time})
    _write_rows(out / "bench.csv", rows)
    return EXIT_OK


def cmd_explore(cfg):
    from .evalx import DseError, bench_gemm, dse_grid, enhancement_evaluator, vad_evaluator

    manifest = _manifest(cfg)
    out = _out_dir(cfg)
    if cfg.task == "vad":
        train_a, valid_a, test_a = _arrays(cfg, manifest, ("train", "valid", "test"))
        evaluate = vad_evaluator(test_a)
    else:
        train_a, valid_a = _arrays(cfg, manifest, ("train", "valid"))
        evaluate = enhancement_evaluator(manifest)
    spec = _model_spec(cfg, train_a.features.shape[1], train_a.targets.shape[1], (32, 32))
    m, n, p = cfg.bench_dims

    def measure(w, nb):
        return bench_gemm(m, n, p, w, nb, reps=cfg.bench_reps, seed=cfg.seed).speedup

    bench = measure if cfg.bench_reps > 0 else None

    try:
        report = dse_grid(spec, train_a, valid_a, evaluate, cfg.grid, _hyper(cfg), cfg.task, bench)
        code = EXIT_OK
    except DseError as exc:
        log.error("%s", exc)
        report, code = exc.report, EXIT_NUMERIC
    (out / "dse.json").write_text(report.to_json() + "\n")
    (out / "dse.csv").write_text(report.to_csv())
    for c in report.cells:
        print(f"W{c.weight_bits}/N{c.neuron_bits} metric {c.task_metric:.4f} ideal {c.ideal_speedup:.2f} "
              f"score {c.dse_score:.3f}")
    if report.selected is not None:
        print(f"selected W{report.selected[0]}/N{report.selected[1]}")
    return code


# --- entry point --------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=TASKS)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", help="dataset directory or manifest.jsonl")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--batch", type=int)
    training.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")),
                          help="hidden widths, e.g. 512,512,512")

    parser = argparse.ArgumentParser(prog="bitwave", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a noisy-speech dataset")
    p.add_argument("--counts", type=parse_counts, help="TRAIN/VALID/TEST file counts")
    p.add_argument("--snr-list", dest="snr_list", type=parse_floats, help="comma-separated SNRs in dB")
    p.add_argument("--duration", dest="duration_s", type=float, help="seconds per generated clip")
    p.add_argument("--clean-dir", dest="clean_dir")
    p.add_argument("--noise-dir", dest="noise_dir")
    p.add_argument("--self-contained", dest="self_contained", action="store_true",
                   help="use the built-in speech and noise generators")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("train", parents=[common, data, training], help="train and calibrate a model")
    p.add_argument("--bits", type=parse_bits, help="WxN, e.g. 1x2")

    p = sub.add_parser("eval", parents=[common, data], help="score a model on the test split")
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--predictions", help="vad: JSON of per-file frame decisions; enhance: oracle|identity")

    p = sub.add_parser("bench", parents=[common], help="time quantized against dense GEMM")
    p.add_argument("--grid", type=parse_grid_arg)
    p.add_argument("--dims", type=parse_dims, help="MxNxP")
    p.add_argument("--reps", dest="bench_reps", type=int)

    p = sub.add_parser("explore", parents=[common, data, training], help="sweep (W, N) and select")
    p.add_argument("--grid", type=parse_grid_arg)
    p.add_argument("--dims", type=parse_dims, help="MxNxP for measured speedups")
    p.add_argument("--reps", dest="bench_reps", type=int, help="benchmark reps per cell; 0 skips timing")
    return parser


def main(argv=None):
    from .dsp import AudioFormatError, DatasetError, SignalError, StftError
    from .nn import ModelError, ModelFormatError, TrainingError

    argv = list(sys.argv[1:] if argv is None else argv)
    # let negative SNR lists such as "-5,0,5" through as a value
    for i in range(len(argv) - 1):
        if argv[i] == "--snr-list":
            argv[i : i + 2] = [f"--snr-list={argv[i + 1]}", ""]
    argv = [a for a in argv if a != ""]
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.predictions)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_explore(cfg)
    except ConfigError as exc:
        print(f"bitwave: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"bitwave: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, AudioFormatError, SignalError, StftError, ModelFormatError, ModelError, OSError) as exc:
        print(f"bitwave: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
