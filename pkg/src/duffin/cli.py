"""Command-line entry point: ``duffin <command> ...``.

Every command writes ``<output>.manifest.json`` recording the resolved
configuration, inputs, outputs, tool version and wall time. Commands that only
print (``eval``, ``params``) put the manifest next to their input model unless
``--manifest`` says otherwise.

Exit codes: 0 success, 1 unexpected failure, 2 bad usage (unknown flag or
malformed value), 3 missing input file, 4 contradictory configuration,
5 malformed input file.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import SCENARIOS, DatasetFormatError, make_dataset, read_dataset, scenario, window_cosine_sweep, write_dataset
from .linksim import LinkConfig, estimate_channels, simulate_ber, write_ber_csv
from .model import FUSION_MODES, ModelConfig, ModelFormatError, build_model, load_model, param_count, parse_rho, save_model
from .trainer import (
    TrainConfig,
    default_warmup,
    evaluate,
    has_running_stats,
    quantize_without_retraining,
    summary,
    train,
    train_quantized,
    transfer_finetune,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONTRADICTION = 4
EXIT_BAD_FILE = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse with a one-line diagnostic instead of the usage dump."""

    def error(self, message):
        raise CliError(EXIT_USAGE, message)


# ----------------------------------------------------------------------------
# argument helpers
# ----------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _rho(text: str):
    try:
        return parse_rho(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"cannot parse compression ratio {text!r}") from None


def _add_training_flags(p: argparse.ArgumentParser, epochs: int | None = None) -> None:
    if epochs is None:
        p.add_argument("--epochs", type=int, required=True)
    else:
        p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch", type=int, default=32, help="batch size")
    p.add_argument("--lr-min", type=float, default=5e-5)
    p.add_argument("--lr-max", type=float, default=2e-3)
    p.add_argument("--warmup", type=int, default=None, help="warm-up epochs (default: min(30, epochs // 4))")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true", help="print one line per epoch")


def _add_model_shape_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=_rho, default=parse_rho("1/4"), help='compression ratio, "1/4" or "0.25"')
    p.add_argument("--features", type=int, default=64, help="decoder feature channels T")
    p.add_argument("--cascade", type=int, default=2, help="number of DuffinNets in the decoder")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duffin", description="Dual-feature-fusion CSI feedback autoencoder experiments.")
    parser.add_argument("--version", action="version", version=f"duffin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic CSI dataset")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ns", type=int, default=None)
    p.add_argument("--nt", type=int, default=None)
    p.add_argument("--nc", type=int, default=None)
    p.add_argument("--max-delay", type=float, default=None)
    p.add_argument("--offset", type=int, default=0, help="first kept delay row")
    p.add_argument("--scale-from", default=None, help="reuse the normalisation scale of another dataset file")

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_model_shape_flags(p)
    p.add_argument("--fusion", choices=FUSION_MODES, default="nn")
    _add_training_flags(p)

    p = sub.add_parser("eval", help="print NMSE (dB) and cosine similarity")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)

    p = sub.add_parser("quantize-train", help="stage-2 retraining through a B-bit quantizer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_training_flags(p)

    p = sub.add_parser("transfer", help="fine-tune a pretrained model on a new scenario")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-db", type=float, default=-4.0)
    _add_training_flags(p)

    p = sub.add_parser("ber", help="Monte-Carlo BER with MRT beamforming and QPSK")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--snrs", type=_float_list, required=True, help="comma-separated SNRs in dB")
    p.add_argument("--bits", type=int, default=20_000, help="bits per (SNR, source) run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("params", help="print encoder/decoder parameter counts")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", default=None)
    src.add_argument("--rho", type=_rho, default=None, help="count a fresh default-shaped model instead")
    p.add_argument("--manifest", default=None)

    p = sub.add_parser("dump-features", help="export the encoder maps G, S and J as CSV grids")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate-fusion", help="train one fusion variant and report its NMSE")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True, choices=FUSION_MODES)
    p.add_argument("--out", default=None, help="result JSON (default: <data>.ablate-<mode>.json)")
    _add_model_shape_flags(p)
    _add_training_flags(p, epochs=50)

    p = sub.add_parser("offset-sweep", help="cosine similarity of the truncation window at several offsets")
    p.add_argument("--data", required=True)
    p.add_argument("--offsets", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", default=None, help="CSV (default: <data>.offset-sweep.csv)")
    return parser


# ----------------------------------------------------------------------------
# plumbing
# ----------------------------------------------------------------------------


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING_FILE, f"no such file: {path}")
    return p


def _load_data(path: str):
    return read_dataset(_existing(path))


def _load_model(path: str):
    return load_model(_existing(path))


def _train_config(args, **extra) -> TrainConfig:
    warmup = args.warmup if args.warmup is not None else default_warmup(args.epochs)
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr_min=args.lr_min,
        lr_max=args.lr_max,
        warmup=warmup,
        seed=args.seed,
        val_fraction=args.val_fraction,
        **extra,
    )


def _epoch_logger(args):
    if not args.verbose:
        return None
    return lambda m: print(
        f"epoch {m.epoch} lr {m.lr:.3e} loss {m.train_loss:.4e} val_nmse {m.val_nmse_db:.2f} dB val_cos {m.val_cosine:.4f}",
        file=sys.stderr,
        flush=True,
    )


def _save_model_checked(model, path: Path) -> None:
    save_model(model, path)
    if load_model(path).config != model.config:
        raise CliError(EXIT_FAILURE, f"model file {path} failed read-back validation")


def _write_training_outputs(result, out: Path) -> dict:
    _save_model_checked(result.model, out)
    metrics = out.with_name(out.name + ".metrics.csv")
    write_metrics_csv(result.history, metrics)
    summ = out.with_name(out.name + ".summary.json")
    summ.write_text(json.dumps(summary(result), indent=2, default=str) + "\n")
    return {"model": str(out), "metrics": str(metrics), "summary": str(summ)}


def _jsonable(obj):
    if isinstance(obj, argparse.Namespace):
        obj = vars(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if k != "func"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    return str(obj)


def write_manifest(path: Path, command: str, args, inputs: dict, outputs: dict, resolved: dict, wall: float) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "arguments": _jsonable(args),
        "resolved_config": _jsonable(resolved),
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": wall,
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


@contextlib.contextmanager
def _thread_cap():
    raw = os.environ.get("DUFFIN_THREADS")
    if raw is None or raw == "":
        yield
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CliError(EXIT_CONTRADICTION, f"DUFFIN_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# ----------------------------------------------------------------------------
# commands; each returns (outputs, resolved config, manifest path)
# ----------------------------------------------------------------------------


def cmd_gen_data(args):
    over = {k: v for k, v in (("ns", args.ns), ("nt", args.nt), ("nc", args.nc), ("max_delay", args.max_delay)) if v is not None}
    cfg = scenario(args.scenario, seed=args.seed, **over)
    if args.samples < 1:
        raise ValueError("--samples must be positive")
    meta = _load_data(args.scale_from).meta if args.scale_from else None
    ds = make_dataset(cfg, args.samples, offset=args.offset, meta=meta)
    out = Path(args.out)
    write_dataset(ds, out)
    back = read_dataset(out)
    if not np.array_equal(back.images, ds.images):
        raise CliError(EXIT_FAILURE, f"dataset file {out} failed read-back validation")
    print(f"wrote {len(ds)} samples ({cfg.name}, Ns={cfg.ns}, Nt={cfg.nt}, Nc={cfg.nc}) to {out}")
    resolved = {"scenario": cfg.to_text(), "offset": args.offset, "scale": ds.meta.scale}
    return {"dataset": str(out)}, resolved, out


def cmd_train(args):
    ds = _load_data(args.data)
    mcfg = ModelConfig(
        ns=ds.config.ns, nt=ds.config.nt, rho=args.rho, feature_channels=args.features, cascade=args.cascade, fusion=args.fusion
    )
    tcfg = _train_config(args)
    model = build_model(mcfg, seed=args.seed)
    result = train(model, ds, tcfg, _epoch_logger(args))
    out = Path(args.out)
    outputs = _write_training_outputs(result, out)
    last = result.history[-1] if result.history else None
    if last:
        print(f"final val NMSE {last.val_nmse_db:.3f} dB, cosine {last.val_cosine:.4f}")
    return outputs, {"model": mcfg.to_text(), "train": tcfg}, out


def cmd_eval(args):
    model = _load_model(args.model)
    ds = _load_data(args.data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ev = evaluate(model, ds)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"NMSE {ev.nmse_db:.4f} dB")
    print(f"cosine {ev.cosine:.6f}")
    manifest = Path(args.manifest) if args.manifest else Path(args.model + ".eval.manifest.json")
    return {}, {"model": model.config.to_text(), "nmse_db": ev.nmse_db, "cosine": ev.cosine}, manifest


def cmd_quantize_train(args):
    pre = _load_model(args.model)
    ds = _load_data(args.data)
    tcfg = _train_config(args, mode="quantized-retrain", quantize_bits=args.bits)
    baseline = evaluate(quantize_without_retraining(pre, ds, args.bits), ds)
    result = train_quantized(pre, ds, args.bits, tcfg, _epoch_logger(args))
    after = evaluate(result.model, ds)
    out = Path(args.out)
    outputs = _write_training_outputs(result, out)
    cal = result.calibration
    print(f"{args.bits}-bit quantizer on [{cal.qmin:.6g}, {cal.qmax:.6g}], {cal.feedback_bits(pre.config.codeword_length)} feedback bits")
    print(f"NMSE without retraining {baseline.nmse_db:.3f} dB, after retraining {after.nmse_db:.3f} dB")
    resolved = {"train": tcfg, "nmse_without_retraining_db": baseline.nmse_db, "nmse_retrained_db": after.nmse_db}
    return outputs, resolved, out


def cmd_transfer(args):
    pre = _load_model(args.model)
    ds = _load_data(args.data)
    tcfg = _train_config(args, mode="transfer")
    result = transfer_finetune(pre, ds, tcfg, args.threshold_db, _epoch_logger(args))
    out = Path(args.out)
    outputs = _write_training_outputs(result, out)
    print(f"epochs to {args.threshold_db} dB: {result.epochs_to_threshold}")
    return outputs, {"train": tcfg, "epochs_to_threshold": result.epochs_to_threshold}, out


def cmd_ber(args):
    model = _load_model(args.model)
    ds = _load_data(args.data)
    cfg = LinkConfig(snrs_db=tuple(args.snrs), bits=args.bits, seed=args.seed)
    truth = ds.channels()
    rows = simulate_ber(truth, estimate_channels(model, ds), cfg)
    out = Path(args.out)
    write_ber_csv(rows, out)
    for r in rows:
        print(f"{r.snr_db:g} dB {r.source:>13}: BER {r.ber:.3e} ({r.errors}/{r.bits})")
    return {"ber_csv": str(out)}, {"link": cfg}, out


def cmd_params(args):
    if args.model:
        model = _load_model(args.model)
    else:
        model = build_model(ModelConfig(rho=args.rho if args.rho is not None else parse_rho("1/4")))
    enc, dec = param_count(model)
    print(f"encoder {enc}")
    print(f"decoder {dec}")
    if args.manifest:
        manifest = Path(args.manifest)
    elif args.model:
        manifest = Path(args.model + ".params.manifest.json")
    else:
        manifest = Path("params.manifest.json")
    return {}, {"model": model.config.to_text(), "encoder": enc, "decoder": dec}, manifest


def _write_grid_sections(fh, label: str, maps: np.ndarray) -> None:
    w = csv.writer(fh)
    for c in range(maps.shape[-1]):
        fh.write(f"# {label} channel {c} rows={maps.shape[0]} cols={maps.shape[1]}\n")
        for row in maps[:, :, c]:
            w.writerow([repr(float(v)) for v in row])


def cmd_dump_features(args):
    model = _load_model(args.model)
    ds = _load_data(args.data)
    if not 0 <= args.index < len(ds):
        raise ValueError(f"--index {args.index} outside dataset of {len(ds)} samples")
    feats: dict = {}
    if not has_running_stats(model):
        raise ValueError("feature maps need a trained model (batch-norm running statistics are empty)")
    model.encode(ds.images[args.index : args.index + 1], features=feats)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        for label in ("G", "S", "J"):
            _write_grid_sections(fh, label, feats[label][0])
    print(f"wrote G, S and J of sample {args.index} to {out}")
    return {"features_csv": str(out)}, {"index": args.index}, out


def cmd_ablate_fusion(args):
    ds = _load_data(args.data)
    mcfg = ModelConfig(
        ns=ds.config.ns, nt=ds.config.nt, rho=args.rho, feature_channels=args.features, cascade=args.cascade, fusion=args.mode
    )
    tcfg = _train_config(args)
    model = build_model(mcfg, seed=args.seed)
    result = train(model, ds, tcfg, _epoch_logger(args))
    ev = evaluate(result.model, ds)
    enc, dec = param_count(result.model)
    out = Path(args.out) if args.out else Path(f"{args.data}.ablate-{args.mode}.json")
    record = {
        "mode": args.mode,
        "encoder_params": enc,
        "decoder_params": dec,
        "final_val_nmse_db": result.history[-1].val_nmse_db if result.history else None,
        "train_set_nmse_db": ev.nmse_db,
        "train_set_cosine": ev.cosine,
    }
    out.write_text(json.dumps(record, indent=2) + "\n")
    print(f"{args.mode}: NMSE {ev.nmse_db:.3f} dB, cosine {ev.cosine:.4f}, params {enc}/{dec}")
    return {"result": str(out)}, {"model": mcfg.to_text(), "train": tcfg}, out


def cmd_offset_sweep(args):
    ds = _load_data(args.data)
    if not args.offsets:
        raise ValueError("--offsets is empty")
    rows = window_cosine_sweep(ds.channels(), ds.config.ns, args.offsets)
    out = Path(args.out) if args.out else Path(f"{args.data}.offset-sweep.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("offset", "cosine"))
        for off, beta in rows:
            w.writerow((off, repr(beta)))
            print(f"offset {off}: cosine {beta:.6f}")
    return {"sweep_csv": str(out)}, {"offsets": args.offsets}, out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "quantize-train": cmd_quantize_train,
    "transfer": cmd_transfer,
    "ber": cmd_ber,
    "params": cmd_params,
    "dump-features": cmd_dump_features,
    "ablate-fusion": cmd_ablate_fusion,
    "offset-sweep": cmd_offset_sweep,
}


def _inputs(args) -> dict:
    return {k: getattr(args, k) for k in ("data", "model", "scale_from") if getattr(args, k, None)}


def run(argv=None) -> int:
    """Run one command; return the exit code instead of exiting."""
    try:
        args = build_parser().parse_args(argv)
        start = time.perf_counter()
        with _thread_cap():
            outputs, resolved, anchor = COMMANDS[args.command](args)
        if getattr(args, "manifest", None):
            manifest = Path(args.manifest)
        elif anchor.name.endswith(".manifest.json"):
            manifest = anchor
        else:
            manifest = anchor.with_name(anchor.name + ".manifest.json")
        write_manifest(manifest, args.command, args, _inputs(args), outputs, resolved, time.perf_counter() - start)
        return EXIT_OK
    except CliError as e:
        print(f"duffin: error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"duffin: error: no such file: {e.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ModelFormatError, DatasetFormatError) as e:
        print(f"duffin: error: malformed input file: {e}", file=sys.stderr)
        return EXIT_BAD_FILE
    except (ValueError, IndexError) as e:
        print(f"duffin: error: {e}", file=sys.stderr)
        return EXIT_CONTRADICTION


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
