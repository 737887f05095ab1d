"""Command-line front end for the enhancement pipeline.

Exit codes: 0 success, 1 usage error (bad flags/arguments), 2 runtime
data errors (missing files, malformed inputs, contract violations),
3 internal invariant failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

from . import bench as bench_mod
from . import dataset as dataset_mod
from . import metrics as metrics_mod
from .audio_io import read_wav, write_wav
from .errors import InternalInvariantError, InvalidConfigError, PipelineError
from .net import ModelConfig, init_model, load_checkpoint
from .quant import (
    enhance_clip,
    load_any_checkpoint,
    load_quantized_checkpoint,
    model_footprint,
    quantize_model,
    save_quantized_checkpoint,
)
from .train import LossConfig, OptimConfig, TrainingSet, train


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1 instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgedenoise", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a noisy corpus with a manifest")
    p.add_argument("--clean", required=True, help="directory of clean 16 kHz mono WAVs")
    p.add_argument("--noise", required=True, help="directory of noise WAVs")
    p.add_argument("--snr-min", type=float, required=True, help="lowest mixing SNR (dB)")
    p.add_argument("--snr-max", type=float, required=True, help="highest mixing SNR (dB)")
    p.add_argument("--levels", type=int, required=True, help="number of ladder levels")
    p.add_argument("--seed", type=int, required=True, help="manifest PRNG seed")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument(
        "--segment-seconds", type=float, default=15.0,
        help="merge clean speech into segments of this length first; 0 disables",
    )

    p = sub.add_parser("train", help="train a model on a synthesized corpus")
    p.add_argument("--manifest", required=True, help="manifest.jsonl of the corpus")
    p.add_argument("--config", help="JSON config with model/loss/optim sections")
    p.add_argument("--epochs", type=int, help="override: training epochs")
    p.add_argument("--lr", type=float, help="override: Adam learning rate")
    p.add_argument("--batch", type=int, help="override: batch size")
    p.add_argument("--seed", type=int, help="override: init/shuffle seed")
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = sub.add_parser("enhance", help="denoise a single WAV file")
    p.add_argument("--model", required=True, help="checkpoint (fp32 or int8)")
    p.add_argument("--in", dest="input", required=True, help="noisy input WAV")
    p.add_argument("--out", required=True, help="enhanced output WAV")

    p = sub.add_parser("eval", help="score a model over a corpus manifest")
    p.add_argument("--model", required=True, help="checkpoint (fp32 or int8)")
    p.add_argument("--manifest", required=True, help="manifest.jsonl of the corpus")
    p.add_argument("--out", required=True, help="per-clip metrics CSV")

    p = sub.add_parser("quantize", help="write an INT8 checkpoint from an fp32 one")
    p.add_argument("--model", required=True, help="fp32 checkpoint")
    p.add_argument("--out", required=True, help="quantized checkpoint path")

    p = sub.add_parser("bench", help="compare fp32 and int8 deployments")
    p.add_argument("--fp32", required=True, help="fp32 checkpoint")
    p.add_argument("--int8", required=True, help="int8 checkpoint")
    p.add_argument("--manifest", required=True, help="manifest.jsonl of the clip set")
    p.add_argument("--batch", type=int, default=10, help="clips per timed batch")
    p.add_argument("--warmup", type=int, default=2, help="untimed warmup batches")
    p.add_argument("--out", required=True, help="output directory for comparison.json")

    p = sub.add_parser("report", help="render report.md, tables, and figures")
    p.add_argument("--bench", required=True, help="directory holding comparison.json")
    p.add_argument(
        "--eval", nargs="*", default=[], metavar="CSV",
        help="metric CSVs from eval; column order follows argument order",
    )
    p.add_argument("--out", required=True, help="output report directory")

    return parser


def _load_train_config(path: str | None) -> tuple[ModelConfig, LossConfig, OptimConfig]:
    """Read the train config JSON; absent file fields keep defaults.

    Raises:
        InvalidConfigError: unknown sections/keys or bad values.
    """
    if path is None:
        return ModelConfig(), LossConfig(), OptimConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidConfigError(f"config {path} must be a JSON object")
    unknown = set(raw) - {"model", "loss", "optim"}
    if unknown:
        raise InvalidConfigError(f"unknown config sections {sorted(unknown)}")

    def build(cls, section: str):
        fields = {f.name for f in dataclasses.fields(cls)}
        data = raw.get(section, {})
        if not isinstance(data, dict):
            raise InvalidConfigError(f"config section {section!r} must be an object")
        extra = set(data) - fields
        if extra:
            raise InvalidConfigError(f"unknown keys {sorted(extra)} in section {section!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfigError(f"bad value in section {section!r}: {exc}") from exc

    return build(ModelConfig, "model"), build(LossConfig, "loss"), build(OptimConfig, "optim")


def _manifest_clips(manifest_path: Path):
    """Yield (entry, noisy AudioClip, clean AudioClip) for each manifest row."""
    manifest = dataset_mod.load_manifest(manifest_path)
    root = manifest_path.parent
    for entry in manifest.entries:
        noisy = read_wav(root / "noisy" / f"{entry.clean_id}.wav")
        clean = read_wav(root / "clean" / f"{entry.clean_id}.wav")
        yield entry, noisy, clean


def _cmd_synth(args) -> int:
    ladder = dataset_mod.SnrLadder(args.snr_min, args.snr_max, args.levels)
    manifest = dataset_mod.synth_corpus(
        args.clean, args.noise, ladder, args.seed, args.out,
        segment_seconds=args.segment_seconds,
    )
    print(f"wrote {len(manifest.entries)} mixtures under {args.out}")
    print(f"manifest: {Path(args.out) / 'manifest.jsonl'}")
    return 0


def _cmd_train(args) -> int:
    model_cfg, loss_cfg, optim_cfg = _load_train_config(args.config)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        optim_cfg = dataclasses.replace(optim_cfg, **overrides)
    dataset = TrainingSet.from_manifest(Path(args.manifest))
    model = init_model(model_cfg, seed=optim_cfg.seed)
    print(f"training on {len(dataset.pairs)} pairs for {optim_cfg.epochs} epochs")

    def progress(row):
        print(f"epoch {row.epoch}: loss {row.mean_loss:.6f} ({row.seconds:.1f}s)")

    stats = train(
        model, dataset, loss_cfg, optim_cfg, args.out,
        log_path=f"{args.out}.log.csv", progress=progress,
    )
    print(f"saved {stats.checkpoint_path}")
    return 0


def _cmd_enhance(args) -> int:
    model = load_any_checkpoint(args.model)
    clip = read_wav(args.input)
    write_wav(args.out, enhance_clip(model, clip))
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_any_checkpoint(args.model)
    records = []
    for entry, noisy, clean in _manifest_clips(Path(args.manifest)):
        enhanced = enhance_clip(model, noisy)
        records.append(
            metrics_mod.EvalRecord(
                entry_id=entry.clean_id,
                snr_condition_db=entry.snr_db,
                stoi=metrics_mod.stoi(clean, enhanced),
                si_snr_db=metrics_mod.si_snr(enhanced, clean),
            )
        )
    metrics_mod.write_records_csv(records, args.out)
    report = metrics_mod.aggregate_median(records)
    if report.overall:
        print(
            f"median stoi {report.overall['stoi']:.3f}, "
            f"median si-snr {report.overall['si_snr_db']:.2f} dB "
            f"over {len(records)} clips"
        )
    print(f"wrote {args.out}")
    return 0


def _cmd_quantize(args) -> int:
    model = load_checkpoint(args.model)
    qmodel = quantize_model(model)
    save_quantized_checkpoint(qmodel, args.out)
    fp_bytes = model_footprint(model)
    q_bytes = model_footprint(qmodel)
    print(f"fp32 parameters: {fp_bytes} bytes")
    print(f"int8 parameters: {q_bytes} bytes "
          f"({100.0 * (fp_bytes - q_bytes) / fp_bytes:.1f}% smaller)")
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    fp32_model = load_checkpoint(args.fp32)
    int8_model = load_quantized_checkpoint(args.int8)
    clips, refs = [], []
    for _, noisy, clean in _manifest_clips(Path(args.manifest)):
        clips.append(noisy)
        refs.append(clean)
    comparison = bench_mod.compare_models(
        fp32_model, int8_model, clips, refs,
        batch_size=args.batch, warmup=args.warmup,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench_mod.save_comparison(comparison, out_dir / "comparison.json")
    print(f"fp32: {comparison.fp32_latency.mean_ms_per_clip:.1f} ms/clip")
    print(f"int8: {comparison.int8_latency.mean_ms_per_clip:.1f} ms/clip "
          f"(speedup {comparison.speedup:.2f}x)")
    print(f"wrote {out_dir / 'comparison.json'}")
    return 0


def _cmd_report(args) -> int:
    comparison = bench_mod.load_comparison(Path(args.bench) / "comparison.json")
    eval_reports = []
    for csv_path in args.eval:
        records = metrics_mod.read_records_csv(csv_path)
        eval_reports.append(
            metrics_mod.aggregate_median(records, label=Path(csv_path).stem)
        )
    report_path = bench_mod.emit_report(comparison, eval_reports, args.out)
    print(f"wrote {report_path}")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "eval": _cmd_eval,
    "quantize": _cmd_quantize,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
