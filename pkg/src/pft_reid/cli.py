"""Command-line entry points: train, eval, inspect.

Hyperparameters live in a JSON config file (sections "model", "train",
"data"); flags cover only paths, seed, and the ablation switches so runs
stay diffable. Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical
divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, PatchConfig, TrainConfig
from .data import (
    SyntheticSpec,
    generate_identity,
    load_manifest,
    make_synthetic_dataset,
    write_pgm,
)
from .backbone import attention_rollout
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import distance_matrix, evaluate, extract_all
from .fusion import patch_cosine_similarity
from .model import PFTModel
from .training import train

MODEL_KEYS = {
    "image_height": int,
    "image_width": int,
    "channels": int,
    "patch_size": int,
    "stride": int,
    "embed_dim": int,
    "depth": int,
    "heads": int,
    "mlp_ratio": int,
    "use_pfde": bool,
    "use_frm": bool,
    "use_ssm": bool,
    "beta": float,
    "enhance_init": str,
    "ssm_columnwise": bool,
}
TRAIN_KEYS = {
    "batch_size": int,
    "instances_per_id": int,
    "momentum": float,
    "weight_decay": float,
    "base_lr": float,
    "total_steps": int,
    "warmup_steps": int,
    "triplet_margin": float,
    "use_triplet": bool,
    "augment": bool,
    "seed": int,
}
SYNTH_KEYS = {"seed": int, "ids": int, "variants": object, "cams": int}
ABLATION_SWITCHES = ("pfde", "frm", "ssm")


def _coerce_section(section, raw, allowed):
    """Validate one config section, reporting errors field by field."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: must be a JSON object, got {type(raw).__name__}")
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown field")
        want = allowed[key]
        if want is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key}: expected a boolean, got {value!r}")
        elif want is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        elif want is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
            value = float(value)
        elif want is str:
            if not isinstance(value, str):
                raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
        out[key] = value
    return out


def load_config(path):
    """Parse and validate a config file into (ModelConfig, TrainConfig, data spec)."""
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        raw = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg_path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{cfg_path}: top level must be a JSON object")
    for key in raw:
        if key not in ("model", "train", "data", "num_classes"):
            raise ConfigError(f"{key}: unknown top-level section")

    model_raw = _coerce_section("model", raw.get("model", {}), MODEL_KEYS)
    patch = PatchConfig(
        height=model_raw.pop("image_height", 96),
        width=model_raw.pop("image_width", 48),
        channels=model_raw.pop("channels", 3),
        patch=model_raw.pop("patch_size", 8),
        stride=model_raw.pop("stride", 8),
        dim=model_raw.pop("embed_dim", 64),
    )
    model_cfg = ModelConfig(patch=patch, **model_raw)
    train_cfg = TrainConfig(**_coerce_section("train", raw.get("train", {}), TRAIN_KEYS))
    data_spec = raw.get("data", {"synthetic": {}})
    return model_cfg, train_cfg, data_spec


def config_to_dict(model_cfg, train_cfg, data_spec, num_classes=None):
    patch = model_cfg.patch
    out = {
        "model": {
            "image_height": patch.height,
            "image_width": patch.width,
            "channels": patch.channels,
            "patch_size": patch.patch,
            "stride": patch.stride,
            "embed_dim": patch.dim,
            "depth": model_cfg.depth,
            "heads": model_cfg.heads,
            "mlp_ratio": model_cfg.mlp_ratio,
            "use_pfde": model_cfg.use_pfde,
            "use_frm": model_cfg.use_frm,
            "use_ssm": model_cfg.use_ssm,
            "beta": model_cfg.beta,
            "enhance_init": model_cfg.enhance_init,
            "ssm_columnwise": model_cfg.ssm_columnwise,
        },
        "train": {
            "batch_size": train_cfg.batch_size,
            "instances_per_id": train_cfg.instances_per_id,
            "momentum": train_cfg.momentum,
            "weight_decay": train_cfg.weight_decay,
            "base_lr": train_cfg.base_lr,
            "total_steps": train_cfg.total_steps,
            "warmup_steps": train_cfg.resolved_warmup,
            "triplet_margin": train_cfg.triplet_margin,
            "use_triplet": train_cfg.use_triplet,
            "augment": train_cfg.augment,
            "seed": train_cfg.seed,
        },
        "data": data_spec,
    }
    if num_classes is not None:
        out["num_classes"] = int(num_classes)
    return out


# ---- dataset specs ----


def _parse_kv_spec(text, what):
    out = {}
    body = text.split(":", 1)[1] if ":" in text else ""
    for part in filter(None, body.split(",")):
        if "=" not in part:
            raise ConfigError(f"{what}: malformed entry {part!r} (expected key=value)")
        key, value = part.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _synthetic_spec_from_mapping(mapping, patch):
    seed = int(mapping.get("seed", 7))
    ids = int(mapping.get("ids", 8))
    cams = int(mapping.get("cams", 2))
    variants = mapping.get("variants", 16)
    if isinstance(variants, str) and ":" in variants:
        start, stop = (int(v) for v in variants.split(":", 1))
    else:
        start, stop = 0, int(variants)
    if ids < 1 or cams < 1 or stop <= start:
        raise ConfigError(f"synthetic spec invalid: ids={ids} cams={cams} variants={start}:{stop}")
    return SyntheticSpec(
        seed=seed,
        ids=ids,
        variants_start=start,
        variants_stop=stop,
        cams=cams,
        height=patch.height,
        width=patch.width,
    )


def load_records(spec, patch):
    """Records from either a manifest path or a synthetic spec.

    Accepts config-dict form ({"manifest": path} / {"synthetic": {...}}) or a
    CLI string (path, or "synthetic:seed=7,ids=8,variants=0:4,cams=2").
    """
    if isinstance(spec, dict):
        if "manifest" in spec:
            return load_manifest(spec["manifest"], patch.height, patch.width)
        if "synthetic" in spec:
            mapping = _coerce_section("data.synthetic", spec["synthetic"], SYNTH_KEYS)
            return make_synthetic_dataset(_synthetic_spec_from_mapping(mapping, patch))
        raise ConfigError(f"data: expected 'manifest' or 'synthetic', got {sorted(spec)}")
    text = str(spec)
    if text.startswith("synthetic"):
        return make_synthetic_dataset(
            _synthetic_spec_from_mapping(_parse_kv_spec(text, "synthetic spec"), patch)
        )
    return load_manifest(text, patch.height, patch.width)


def load_single_image(spec, patch):
    """One image from a PPM path or "synthetic:seed=7,id=3,variant=0,cam=0"."""
    text = str(spec)
    if text.startswith("synthetic"):
        kv = _parse_kv_spec(text, "image spec")
        record = generate_identity(
            int(kv.get("seed", 7)),
            int(kv.get("id", 0)),
            int(kv.get("variant", 0)),
            int(kv.get("cam", 0)),
            patch.height,
            patch.width,
        )
        return record.image
    from .data import bilinear_resize, read_ppm

    img = read_ppm(text)
    if img.shape[1] != patch.height or img.shape[2] != patch.width:
        img = np.clip(bilinear_resize(img, patch.height, patch.width), 0.0, 1.0)
    return img


def _apply_ablation(model_cfg, ablation):
    tokens = [t.strip() for t in ablation.split(",") if t.strip()]
    for token in tokens:
        if token not in ABLATION_SWITCHES:
            raise ConfigError(
                f"--ablation: unknown switch {token!r}, expected subset of {ABLATION_SWITCHES}"
            )
    from dataclasses import replace

    return replace(
        model_cfg,
        use_pfde="pfde" in tokens,
        use_frm="frm" in tokens,
        use_ssm="ssm" in tokens,
    )


def _load_model_for_checkpoint(checkpoint_path, config_path):
    if config_path is None:
        config_path = Path(checkpoint_path).parent / "config.json"
    model_cfg, train_cfg, data_spec = load_config(config_path)
    raw = json.loads(Path(config_path).read_text())
    state = load_checkpoint(checkpoint_path)
    num_classes = raw.get("num_classes")
    if num_classes is None:
        head = state.get("heads.global.bias")
        num_classes = len(head) if head is not None else 1
    model = PFTModel(model_cfg, num_classes=int(num_classes), seed=0)
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise ConfigError(f"checkpoint does not fit config: {exc}")
    return model, model_cfg, train_cfg


# ---- subcommands ----


def cmd_train(args):
    model_cfg, train_cfg, data_spec = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        train_cfg = replace(train_cfg, seed=args.seed)
    if args.ablation is not None:
        model_cfg = _apply_ablation(model_cfg, args.ablation)

    records = load_records(data_spec, model_cfg.patch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as metrics:
        result = train(
            model_cfg,
            train_cfg,
            records,
            callback=lambda entry: metrics.write(json.dumps(entry) + "\n"),
        )

    save_checkpoint(out_dir / "checkpoint.pft", result.model.state_dict())
    snapshot = config_to_dict(
        model_cfg, train_cfg, data_spec, num_classes=result.model.num_classes
    )
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n")
    print(f"wrote {out_dir / 'checkpoint.pft'} ({result.model.param_count()} parameters)")
    return 0


def cmd_eval(args):
    model, model_cfg, _ = _load_model_for_checkpoint(args.checkpoint, args.config)
    query = load_records(args.query, model_cfg.patch)
    gallery = load_records(args.gallery, model_cfg.patch)
    if not query or not gallery:
        raise DataError("eval needs non-empty query and gallery sets")
    q_feats, q_ids, q_cams = extract_all(model, query)
    g_feats, g_ids, g_cams = extract_all(model, gallery)
    dist = distance_matrix(q_feats, g_feats, metric=args.metric)
    report = evaluate(
        dist,
        q_ids,
        g_ids,
        q_cams,
        g_cams,
        max_rank=args.max_rank,
        apply_exclusion=not args.no_exclusion,
    )
    print(report.to_json())
    return 0


def cmd_inspect(args):
    model, model_cfg, _ = _load_model_for_checkpoint(args.checkpoint, args.config)
    image = load_single_image(args.image, model_cfg.patch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = model.forward(image, collect_attention=True)
    heat = attention_rollout(outputs.attentions, model_cfg.patch)
    write_pgm(out_dir / "heatmap.pgm", heat)

    sim = patch_cosine_similarity(outputs.global_tokens.data[1:])
    with open(out_dir / "patch_sim.csv", "w") as f:
        for row in sim:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"wrote {out_dir / 'heatmap.pgm'} and {out_dir / 'patch_sim.csv'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pft-reid",
        description="Occlusion-robust person re-identification transformer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="JSON config path")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument(
        "--ablation",
        default=None,
        help="comma list from {pfde,frm,ssm}; empty string = baseline only",
    )
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None, help="default: config.json next to checkpoint")
    p_eval.add_argument("--query", required=True, help="manifest path or synthetic:k=v,...")
    p_eval.add_argument("--gallery", required=True, help="manifest path or synthetic:k=v,...")
    p_eval.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p_eval.add_argument("--max-rank", type=int, default=10)
    p_eval.add_argument(
        "--no-exclusion",
        action="store_true",
        help="keep same-id same-camera gallery entries (e.g. self-retrieval checks)",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="write rollout heatmap and patch similarity")
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.add_argument("--config", default=None)
    p_inspect.add_argument("--image", required=True, help="PPM path or synthetic:id=3,variant=0")
    p_inspect.add_argument("--out", required=True)
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
