"""Command-line surface: data generation, margins, training, evaluation.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numeric error. Every command records a metadata block (git describe,
seeds, config hash, input hashes, kernel backend) in its output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
from pathlib import Path

from .backend import active_backend
from .errors import (ConfigError, DataError, DomainError, InputError,
                     NumericError, ProtocolError, SchemaError, ShapeError,
                     UsageError)
from .losses import AblationFlags
from .llm_client import LlmClientConfig, generate_neighbors
from .manifest import (DatasetManifest, SyntheticSpec, generate_synthetic,
                       generate_synthetic_neighbors)
from .margins import compute_margin_table
from .numerics import RNG_ALGORITHM
from .prompting import NeighborSet, TemplateEmbedder, TemplatePool
from .trainer import TrainConfig, TrainedPrompt, train, train_ce_baseline, run_sweep
from . import evaluation

# named rows of the semantic-expansion ablation grid
FLAG_PRESETS = {
    "baseline": AblationFlags.off(),
    "intra": AblationFlags(True, False, False, False),
    "intra+margin": AblationFlags(True, False, True, False),
    "inter": AblationFlags(False, True, False, False),
    "inter+margin": AblationFlags(False, True, False, True),
    "intra+inter": AblationFlags(True, True, False, False),
    "full": AblationFlags(True, True, True, True),
}


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def run_metadata(args, config: TrainConfig | None = None, seeds=None) -> dict:
    hashes = {}
    for attr in ("manifest", "neighbors", "templates", "margins", "trained",
                 "source", "target"):
        path = getattr(args, attr, None)
        if path and Path(path).exists():
            hashes[attr] = file_sha256(path)
    meta = {
        "git_describe": git_describe(),
        "rng": RNG_ALGORITHM,
        "backend": active_backend(),
        "input_hashes": hashes,
    }
    if config is not None:
        meta["config_hash"] = config.config_hash()
        meta["config"] = config.to_json()
    if seeds is not None:
        meta["seeds"] = list(seeds)
    return meta


def _load_pool(args) -> TemplatePool:
    if getattr(args, "templates", None):
        return TemplatePool.load(args.templates)
    return TemplatePool.packaged()


def _load_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            config = TrainConfig.from_json(json.load(f))
    else:
        config = TrainConfig()
    overrides = {}
    for arg_name, field in (("lam", "lam"), ("mu", "mu"), ("seed", "seed"),
                            ("epochs", "epochs"), ("shots", "shots"),
                            ("n_neighbors", "n_neighbors"), ("tau", "tau"),
                            ("m_ctx", "m_ctx"), ("lr", "lr"),
                            ("batch_size", "batch_size"),
                            ("margin_mode", "margin_mode")):
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "flags", None) is not None:
        if args.flags not in FLAG_PRESETS:
            raise ConfigError(f"unknown flag preset {args.flags!r}; "
                              f"choose from {sorted(FLAG_PRESETS)}")
        overrides["flags"] = FLAG_PRESETS[args.flags]
    if getattr(args, "encoder_seed", None) is not None or \
            getattr(args, "dim", None) is not None:
        enc = config.encoder
        enc_kw = enc.to_json()
        if getattr(args, "encoder_seed", None) is not None:
            enc_kw["seed"] = args.encoder_seed
        if getattr(args, "dim", None) is not None:
            enc_kw["dim"] = args.dim
        from .trainer import EncoderConfig
        overrides["encoder"] = EncoderConfig.from_json(enc_kw)
    return config.replace(**overrides) if overrides else config


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)


def _print(doc):
    print(json.dumps(doc, sort_keys=True, indent=1))


# -- subcommand implementations -------------------------------------------------


def _encoder_config_for_dim(config: TrainConfig, dim: int):
    import dataclasses
    if config.encoder.dim == dim:
        return config.encoder
    return dataclasses.replace(config.encoder, dim=dim)


def cmd_synth(args) -> int:
    spec = SyntheticSpec(k=args.k, samples_per_class=args.samples_per_class,
                         dim=args.dim, sigma=args.sigma, seed=args.seed,
                         neighbor_noise=args.neighbor_noise)
    config = _load_config(args)
    enc = _encoder_config_for_dim(config, args.dim).build()
    manifest = generate_synthetic(spec, enc, name=args.name)
    manifest.metadata["run"] = run_metadata(args)
    manifest.save(args.output, binary_sidecar=args.binary)
    result = {"manifest": str(args.output), "classes": len(manifest.classes),
              "samples": manifest.n_samples}
    if args.neighbors_out:
        neighbors = generate_synthetic_neighbors(manifest.classes,
                                                 args.n_neighbors, args.seed,
                                                 noise=args.neighbor_noise)
        neighbors.save(args.neighbors_out, manifest.classes)
        result["neighbors"] = str(args.neighbors_out)
    _print(result)
    return 0


def cmd_margins(args) -> int:
    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    neighbors = NeighborSet.load(args.neighbors, manifest.classes)
    pool = _load_pool(args)
    encoder = config.encoder.build()
    table = compute_margin_table(TemplateEmbedder(encoder), manifest.classes,
                                 neighbors, pool, mode=args.mode,
                                 encoder_seed=encoder.seed)
    table.metadata = {"run": run_metadata(args, config)}
    table.save(args.output)
    _print({"margins": str(args.output), "k": table.k, "n": table.n,
            "mode": table.mode, "hash": table.table_hash()})
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    if args.ce_only:
        trained = train_ce_baseline(manifest, config, fold=args.fold)
    else:
        neighbors = NeighborSet.load(args.neighbors, manifest.classes) \
            if args.neighbors else None
        pool = _load_pool(args)
        margins = None
        if args.margins:
            from .margins import MarginTable
            margins = MarginTable.load(args.margins)
        elif config.flags.any_se:
            encoder = config.encoder.build()
            margins = compute_margin_table(TemplateEmbedder(encoder),
                                           manifest.classes, neighbors, pool,
                                           mode=config.margin_mode,
                                           encoder_seed=encoder.seed)
        trained = train(manifest, config, neighbors, margins, pool, fold=args.fold)
    trained.metadata["run"] = run_metadata(args, config, seeds=[config.seed])
    trained.save(args.output)
    _print({"trained": str(args.output), "final_loss": trained.loss_history[-1],
            "config_hash": config.config_hash()})
    return 0


def cmd_eval_b2n(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    trained = TrainedPrompt.load(args.trained)
    record = evaluation.evaluate_base_to_new(trained, manifest, fold=args.fold)
    record["metadata"] = run_metadata(args, trained.config,
                                      seeds=[trained.config.seed])
    if args.output:
        _write_json(args.output, record)
    _print(record)
    return 0


def cmd_eval_cross(args) -> int:
    source = DatasetManifest.load(args.source)
    target = DatasetManifest.load(args.target)
    trained = TrainedPrompt.load(args.trained)
    result = evaluation.evaluate_cross_dataset(trained, source, target)
    result["metadata"] = run_metadata(args, trained.config,
                                      seeds=[trained.config.seed])
    if args.output:
        _write_json(args.output, result)
    _print(result)
    return 0


def cmd_zero_shot(args) -> int:
    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    pool = _load_pool(args)
    encoder = _encoder_config_for_dim(config, manifest.dim).build()
    report = evaluation.zero_shot_report(manifest, encoder, pool,
                                         tau=config.tau, ensemble=args.ensemble,
                                         fold=args.fold)
    report["metadata"] = run_metadata(args, config)
    if args.output:
        _write_json(args.output, report)
    _print(report)
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    neighbors = NeighborSet.load(args.neighbors, manifest.classes)
    pool = _load_pool(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.axis == "flags":
        values = [FLAG_PRESETS[v.strip()] for v in args.values.split(",")]
    elif args.axis == "lambda":
        values = [float(v) for v in args.values.split(",")]
    elif args.axis == "neighbors":
        values = [int(v) for v in args.values.split(",")]
    elif args.axis == "margin_mode":
        values = [v.strip() for v in args.values.split(",")]
    else:
        raise ConfigError(f"unknown sweep axis {args.axis!r}")
    rows = run_sweep(manifest, config, args.axis, values, seeds, neighbors, pool)
    doc = {"rows": rows, "metadata": run_metadata(args, config, seeds=seeds)}
    if args.output:
        _write_json(args.output, doc)
    _print({"rows": [{k: r[k] for k in ("axis", "value", "base_acc", "new_acc", "h")}
                     for r in rows]})
    return 0


def cmd_neighbors_stats(args) -> int:
    config = _load_config(args)
    manifest = DatasetManifest.load(args.manifest)
    neighbors = NeighborSet.load(args.neighbors, manifest.classes)
    embedder = TemplateEmbedder(config.encoder.build())
    stats = evaluation.neighbor_similarity_stats(manifest.classes, neighbors,
                                                 embedder)
    stats["diversity"] = evaluation.dataset_diversity(manifest.classes, neighbors,
                                                      embedder)
    stats["metadata"] = run_metadata(args, config)
    if args.output:
        _write_json(args.output, stats)
    _print({k: stats[k] for k in ("mean_positive", "mean_negative", "diversity")})
    return 0


def cmd_neighbors_filter(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    neighbors = NeighborSet.load(args.neighbors, manifest.classes)
    new_names = [manifest.classes.names[i] for i in manifest.classes.new_indices]
    filtered, fraction = evaluation.filter_overlapping_neighbors(neighbors, new_names)
    filtered.save(args.output, manifest.classes)
    _print({"filtered": str(args.output), "removed_fraction": fraction})
    return 0


def cmd_neighbors_generate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    client = LlmClientConfig(endpoint=args.endpoint, model_id=args.model,
                             auth_env=args.auth_env, timeout=args.timeout,
                             offline_fixture=args.offline_fixture,
                             cache_dir=args.cache_dir)
    neighbors = generate_neighbors(manifest.classes, client, args.n_neighbors)
    neighbors.save(args.output, manifest.classes)
    _print({"neighbors": str(args.output), "n": neighbors.n,
            "classes": neighbors.k, "metadata": run_metadata(args)})
    return 0


def cmd_dump_embeddings(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    trained = TrainedPrompt.load(args.trained) if args.trained else None
    config = trained.config if trained else _load_config(args)
    if config.encoder.dim != manifest.dim:
        if trained is not None:
            raise ConfigError(
                f"encoder dim {config.encoder.dim} != manifest dim {manifest.dim}")
        config = config.replace(encoder=_encoder_config_for_dim(config, manifest.dim))
    encoder = config.encoder.build()
    neighbors = NeighborSet.load(args.neighbors, manifest.classes) \
        if args.neighbors else None
    pool = _load_pool(args)
    count = evaluation.dump_embeddings(manifest, encoder, args.output,
                                       trained=trained, neighbors=neighbors,
                                       pool=pool)
    _print({"dump": str(args.output), "rows": count,
            "metadata": run_metadata(args, config)})
    return 0


# -- argument parsing ------------------------------------------------------------


def _add_config_options(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="semantic expansion weight")
    p.add_argument("--mu", type=float, default=None, help="anchor regularizer weight")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--n-neighbors", dest="n_neighbors", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--m-ctx", dest="m_ctx", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--margin-mode", dest="margin_mode",
                   choices=["ensemble", "fixed_prefix"], default=None)
    p.add_argument("--flags", choices=sorted(FLAG_PRESETS), default=None,
                   help="ablation flag preset")
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sept",
        description="Prompt-context tuning with semantic-neighbor regularization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset manifest")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-class", dest="samples_per_class", type=int,
                   default=24)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--neighbor-noise", dest="neighbor_noise", type=float, default=0.0)
    p.add_argument("--n-neighbors", dest="n_neighbors", type=int, default=10)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--binary", action="store_true",
                   help="store embeddings in a binary sidecar")
    p.add_argument("--neighbors-out", dest="neighbors_out")
    p.add_argument("--config", help="TrainConfig JSON (encoder settings)")
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("margins", help="build and save a margin table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neighbors", required=True)
    p.add_argument("--templates", help="template pool JSON (default: packaged pool)")
    p.add_argument("--mode", choices=["ensemble", "fixed_prefix"], default="ensemble")
    p.add_argument("--config")
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_margins)

    p = sub.add_parser("train", help="train the context matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neighbors")
    p.add_argument("--templates")
    p.add_argument("--margins", help="precomputed margin table JSON")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--ce-only", dest="ce_only", action="store_true",
                   help="cross-entropy baseline path")
    _add_config_options(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained prompt")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p = eval_sub.add_parser("b2n", help="base-to-new evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trained", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_eval_b2n)

    p = eval_sub.add_parser("cross", help="cross-dataset evaluation")
    p.add_argument("--trained", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_eval_cross)

    p = sub.add_parser("zero-shot", help="hand-crafted template classification")
    p.add_argument("-m", "--manifest", required=True)
    p.add_argument("--templates")
    p.add_argument("--ensemble", action="store_true",
                   help="average embeddings over the whole pool")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_zero_shot)

    p = sub.add_parser("sweep", help="train+eval across a hyperparameter axis")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neighbors", required=True)
    p.add_argument("--templates")
    p.add_argument("--axis", required=True,
                   choices=["lambda", "neighbors", "flags", "margin_mode"])
    p.add_argument("--values", required=True,
                   help="comma-separated axis values")
    p.add_argument("--seeds", default="0,1,2")
    _add_config_options(p)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_sweep)

    p_n = sub.add_parser("neighbors", help="neighbor set utilities")
    n_sub = p_n.add_subparsers(dest="neighbors_command", required=True)

    p = n_sub.add_parser("stats", help="similarity and diversity statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neighbors", required=True)
    p.add_argument("--config")
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_neighbors_stats)

    p = n_sub.add_parser("filter", help="drop neighbors overlapping new class names")
    p.add_argument("--manifest", required=True)
    p.add_argument("--neighbors", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_neighbors_filter)

    p = n_sub.add_parser("generate", help="generate neighbors via LLM or fixture")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-neighbors", dest="n_neighbors", type=int, default=10)
    p.add_argument("--offline-fixture", dest="offline_fixture")
    p.add_argument("--endpoint")
    p.add_argument("--model", default="gpt-4o")
    p.add_argument("--auth-env", dest="auth_env", default="SEPT_LLM_TOKEN")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_neighbors_generate)

    p = sub.add_parser("dump-embeddings", help="write embeddings as JSON lines")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trained")
    p.add_argument("--neighbors")
    p.add_argument("--templates")
    p.add_argument("--config")
    p.add_argument("--encoder-seed", dest="encoder_seed", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, UsageError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SchemaError, ProtocolError, InputError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
