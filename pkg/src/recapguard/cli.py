"""Operator command line: dataset synthesis, training, evaluation, single-image
checks, the gateway server, identifier embed/extract, and activation plots.

Every subcommand is a thin wrapper over the library; JSON results go to
stdout, logs to stderr. Exit codes: 0 success, 1 domain failure (e.g. a
BLOCK verdict), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import mimetypes
import secrets
import sys
import time
from dataclasses import asdict
from pathlib import Path

logger = logging.getLogger("recapguard.cli")


def _p(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _cmd_dataset_sources(args) -> int:
    from .sources import synthesize_source_corpus

    paths = synthesize_source_corpus(args.out, args.count, args.seed, size=args.size)
    _p({"out": str(args.out), "count": len(paths)})
    return 0


def _cmd_dataset_synth(args) -> int:
    from .channel import MANIFEST_NAME, generate_dataset

    manifest = generate_dataset(args.source, args.pairs, args.seed, args.out)
    _p({
        "manifest": str(Path(args.out) / MANIFEST_NAME),
        "entries": len(manifest.entries),
        "originals": len(manifest.by_label("original")),
        "recaptures": len(manifest.by_label("recaptured")),
    })
    return 0


def _materialize_split(manifest, out_path) -> None:
    """Write a split manifest with absolute entry paths so it resolves from
    anywhere."""
    from dataclasses import replace
    from .channel import save_manifest

    resolved = replace(
        manifest,
        entries=[replace(e, path=str(manifest.resolve(e).resolve())) for e in manifest.entries],
    )
    save_manifest(resolved, out_path)


def _cmd_train(args, parser) -> int:
    if args.epochs < 1:
        parser.error("--epochs must be >= 1")

    from .channel import load_manifest
    from .checkpoint import save_checkpoint
    from .detector import ModelConfig, build_model
    from .training import TrainConfig, export_history_plot, split_dataset, train

    manifest = load_manifest(args.manifest)
    cfg = TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        early_stop_patience=args.patience,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    splits = split_dataset(manifest, cfg)
    model = build_model(ModelConfig(), init_seed=args.seed)
    t0 = time.time()
    model, history = train(model, splits, cfg)
    elapsed = time.time() - t0

    ckpt = Path(args.out)
    save_checkpoint(model, ckpt)
    history_path = ckpt.with_suffix(ckpt.suffix + ".history.json")
    history_path.write_text(history.to_json())
    plot_path = ckpt.with_suffix(ckpt.suffix + ".history.png")
    export_history_plot(history, plot_path)
    for name, split in zip(("train", "val", "test"), splits):
        _materialize_split(split, ckpt.with_suffix(ckpt.suffix + f".split-{name}.jsonl"))

    _p({
        "checkpoint": str(ckpt),
        "history": str(history_path),
        "plot": str(plot_path),
        "stopped_epoch": history.stopped_epoch,
        "best_epoch": history.best_epoch,
        "best_val_loss": min(history.val_loss),
        "final_val_acc": history.val_acc[history.best_epoch - 1],
        "train_seconds": round(elapsed, 1),
        "model_version": model.version,
    })
    return 0


def _load_model_or_usage(path, parser):
    from .checkpoint import load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        parser.error(f"checkpoint not found: {path}")
    except Exception as exc:
        parser.error(f"cannot load checkpoint {path}: {exc}")


def _cmd_eval(args, parser) -> int:
    from dataclasses import asdict as dc_asdict

    from .channel import load_manifest
    from .evaluation import evaluate, export_roc_plot, robustness_eval, roc_curve

    model = _load_model_or_usage(args.model, parser)
    manifest = load_manifest(args.manifest)
    report = evaluate(model, manifest, threshold=args.theta)
    roc = roc_curve(model, manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    roc_path = out_dir / "roc.png"
    export_roc_plot(roc, roc_path)

    result = {"metrics": dc_asdict(report), "auc": roc.auc, "roc_plot": str(roc_path),
              "theta": args.theta}
    if args.robustness:
        clean, perturbed = robustness_eval(model, manifest, threshold=args.theta)
        result["robustness"] = {
            "clean_accuracy": clean.accuracy,
            "perturbed_accuracy": perturbed.accuracy,
            "accuracy_drop_pp": round(100 * (clean.accuracy - perturbed.accuracy), 4),
            "blur_sigma": 1.5,
            "contrast_frac": 0.15,
        }
    _p(result)
    return 0


def _cmd_check(args) -> int:
    from .checkpoint import load_checkpoint
    from .enforcement import Decision, EnforcementConfig, Reason, validate_upload
    from .errors import CheckpointError

    model = None
    try:
        model = load_checkpoint(args.model)
    except (FileNotFoundError, CheckpointError) as exc:
        logger.warning("model unavailable, failing closed: %s", exc)

    image_path = Path(args.image)
    try:
        data = image_path.read_bytes()
    except OSError:
        data = b""
    declared = mimetypes.guess_type(str(image_path))[0] or "application/octet-stream"

    cfg = EnforcementConfig(
        threshold=args.theta,
        review_band=args.theta,  # binary PERMIT/BLOCK at the CLI
        signing_key=secrets.token_bytes(16),
    )
    decision = validate_upload(data, declared, "cli", time.time(), model, cfg)

    if decision.decision == Decision.PERMIT:
        print(f"PERMIT p_orig={decision.probabilities.p_orig:.2f}")
        return 0
    if decision.reason == Reason.CLASSIFIED_RECAPTURED:
        print(f"BLOCK p_recap={decision.probabilities.p_recap:.2f}")
    else:
        print(f"BLOCK reason={decision.reason.value}")
    return 1


def _cmd_serve(args, parser) -> int:
    from .service.settings import ServiceSettings, apply_env_overrides

    settings = ServiceSettings(
        bind=args.bind,
        model_path=args.model,
        signing_key=args.signing_key or "",
        threshold=args.theta,
        review_band=args.review_band,
        rate_limit_count=args.rate_limit,
        rate_limit_window_s=args.rate_window,
        imi_enabled=args.imi,
        storage_dir=args.storage_dir,
        cache_path=args.cache,
        users=tuple(u.strip() for u in args.users.split(",") if u.strip()),
    )
    settings = apply_env_overrides(settings)
    if not settings.signing_key:
        parser.error("a signing key is required (--signing-key or RECAPGUARD_SIGNING_KEY)")

    import uvicorn
    from .service.app import create_app

    app = create_app(settings)
    host, _, port = settings.bind.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def _cmd_imi_embed(args) -> int:
    from .imaging import load_image, save_image
    from .imi import IMIConfig, IMIPayload, embed, psnr

    img = load_image(args.image)
    payload = IMIPayload(args.user_id, args.timestamp, args.session_id)
    cfg = IMIConfig(strength=args.strength, block_selection_key=args.key)
    marked = embed(img, payload, cfg)
    save_image(marked, args.out, jpeg_quality=95)
    _p({"out": str(args.out), "psnr_db": round(psnr(img, marked), 2),
        "payload": asdict(payload)})
    return 0


def _cmd_imi_extract(args) -> int:
    import numpy as np

    from .imaging import load_image
    from .imi import IMIConfig, extract

    img = load_image(args.image)
    result = extract(img, IMIConfig(block_selection_key=args.key))
    raw_hex = np.packbits(result.frame_bits).tobytes().hex()
    _p({
        "crc_ok": result.crc_ok,
        "bit_error_rate": round(result.bit_error_rate, 4),
        "payload": asdict(result.payload) if result.payload else None,
        "raw_hex": raw_hex,
    })
    return 0 if result.crc_ok else 1


def _cmd_viz(args, parser) -> int:
    from .detector import visualize_edge_responses, visualize_feature_maps
    from .imaging import load_image

    model = _load_model_or_usage(args.model, parser)
    img = load_image(args.image)
    if args.viz_command == "edges":
        visualize_edge_responses(model, img, args.out)
    else:
        visualize_feature_maps(model, img, args.block, args.out)
    _p({"out": str(args.out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recapguard")
    sub = parser.add_subparsers(dest="command", required=True)

    dataset = sub.add_parser("dataset", help="dataset synthesis")
    dsub = dataset.add_subparsers(dest="dataset_command", required=True)
    synth = dsub.add_parser("synth", help="generate a balanced original/recapture dataset")
    synth.add_argument("--source", required=True)
    synth.add_argument("--pairs", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    sources = dsub.add_parser("sources", help="generate procedural source images")
    sources.add_argument("--out", required=True)
    sources.add_argument("--count", type=int, required=True)
    sources.add_argument("--seed", type=int, default=0)
    sources.add_argument("--size", type=int, default=256)

    train_p = sub.add_parser("train", help="train the classifier")
    train_p.add_argument("--manifest", required=True)
    train_p.add_argument("--out", required=True)
    train_p.add_argument("--epochs", type=int, default=50)
    train_p.add_argument("--lr", type=float, default=1e-4)
    train_p.add_argument("--weight-decay", type=float, default=1e-4)
    train_p.add_argument("--batch-size", type=int, default=32)
    train_p.add_argument("--patience", type=int, default=10)
    train_p.add_argument("--seed", type=int, default=0)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    eval_p.add_argument("--model", required=True)
    eval_p.add_argument("--manifest", required=True)
    eval_p.add_argument("--theta", type=float, default=0.5)
    eval_p.add_argument("--robustness", action="store_true")
    eval_p.add_argument("--out-dir", default=".")

    check = sub.add_parser("check", help="classify one image with fail-closed policy")
    check.add_argument("--model", required=True)
    check.add_argument("--image", required=True)
    check.add_argument("--theta", type=float, default=0.5)

    serve = sub.add_parser("serve", help="run the validation gateway")
    serve.add_argument("--model", default=None)
    serve.add_argument("--bind", default="127.0.0.1:8000")
    serve.add_argument("--signing-key", default=None)
    serve.add_argument("--theta", type=float, default=0.5)
    serve.add_argument("--review-band", type=float, default=0.8)
    serve.add_argument("--rate-limit", type=int, default=10)
    serve.add_argument("--rate-window", type=float, default=60.0)
    serve.add_argument("--imi", action="store_true")
    serve.add_argument("--storage-dir", default="./recapguard-data")
    serve.add_argument("--cache", default=None)
    serve.add_argument("--users", default="alice,bob")

    imi = sub.add_parser("imi", help="invisible identifier operations")
    isub = imi.add_subparsers(dest="imi_command", required=True)
    iembed = isub.add_parser("embed")
    iembed.add_argument("--image", required=True)
    iembed.add_argument("--out", required=True)
    iembed.add_argument("--user-id", type=int, required=True)
    iembed.add_argument("--timestamp", type=int, default=None)
    iembed.add_argument("--session-id", type=int, default=0)
    iembed.add_argument("--key", type=int, default=0)
    iembed.add_argument("--strength", type=float, default=6.0)
    iextract = isub.add_parser("extract")
    iextract.add_argument("--image", required=True)
    iextract.add_argument("--key", type=int, default=0)

    viz = sub.add_parser("viz", help="activation visualizations")
    vsub = viz.add_subparsers(dest="viz_command", required=True)
    vedges = vsub.add_parser("edges")
    vedges.add_argument("--model", required=True)
    vedges.add_argument("--image", required=True)
    vedges.add_argument("--out", required=True)
    vfeat = vsub.add_parser("features")
    vfeat.add_argument("--model", required=True)
    vfeat.add_argument("--image", required=True)
    vfeat.add_argument("--block", type=int, choices=(1, 2, 3, 4), required=True)
    vfeat.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import (
        CheckpointError,
        ConfigError,
        DecodeError,
        EmptyClassError,
        EmptySetError,
        ImageTooSmallError,
        InsufficientDataError,
        InsufficientSourceError,
        RangeError,
    )

    try:
        if args.command == "dataset":
            if args.dataset_command == "synth":
                return _cmd_dataset_synth(args)
            return _cmd_dataset_sources(args)
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "serve":
            return _cmd_serve(args, parser)
        if args.command == "imi":
            if args.imi_command == "embed":
                if args.timestamp is None:
                    args.timestamp = int(time.time())
                return _cmd_imi_embed(args)
            return _cmd_imi_extract(args)
        if args.command == "viz":
            return _cmd_viz(args, parser)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, RangeError, ImageTooSmallError, InsufficientSourceError,
            InsufficientDataError, EmptySetError, EmptyClassError, DecodeError,
            CheckpointError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
