"""Command-line pipeline: synth, preprocess, distill, train, generate, evaluate.

Every command reads/writes flat artifacts in the output directory and is
deterministic for a fixed seed. Configuration comes from built-in defaults,
overlaid by an optional JSON config file, overlaid by command-line flags
(``--section.key value`` works for every config field; flags win).
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import clustering, corpus, embedding, heatmap, metrics, model as model_mod, training
from .errors import (
    ConfigError,
    DatasetTooSmall,
    PairingError,
    SonogenError,
    Unsupported,
)
from .reduction import LayoutConfig
from .validation import rng_from_seed

USAGE_ERRORS = (ConfigError, DatasetTooSmall, PairingError, Unsupported, FileNotFoundError)

DEFAULT_CONFIG = {
    "seed": 0,
    "threads": 1,
    "synth": {"templates": 5, "records": 200},
    "preprocess": {"ratios": [7, 1, 2]},
    "distill": {
        "methods": ["bow", "tfidf"],
        "dims": [2, 5, 10, 50],
        "k_min": 2,
        "k_max": 20,
        "restarts": 10,
        "n_neighbors": 15,
        "min_dist": 0.1,
        "umap_epochs": 200,
        "negative_samples": 5,
    },
    "model": {"preset": "desk", "memory_mode": "patches", "seed": 0},
    "train": {
        "preset": "desk",
        "lambdas": [0.4, 0.6, 0.4],
        "max_epochs": 50,
        "patience": 10,
        "keep_all_checkpoints": False,
    },
    "generate": {"split": "test", "mode": "greedy", "beam_width": 1, "attention": False},
    "evaluate": {"split": "test", "lexicon": "breast"},
    "bench": {"sizes": [200, 400, 800], "k": 3},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(config: dict, dotted: str, value):
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def load_config(args, extras: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            _deep_update(config, json.load(fh))
    if extras:
        if len(extras) % 2:
            raise ConfigError(f"dangling override flag: {extras[-1]!r}")
        for flag, raw in zip(extras[::2], extras[1::2]):
            if not flag.startswith("--"):
                raise ConfigError(f"unexpected argument {flag!r}")
            _apply_override(config, flag[2:], _parse_value(raw))
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    return config


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path, role: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {role}: {path}")
    return path


def _load_processed(outdir: Path):
    reports = corpus.read_tokens_jsonl(_require(outdir / "processed.jsonl", "processed corpus"))
    with open(_require(outdir / "splits.json", "split manifest"), "r", encoding="utf-8") as fh:
        splits = corpus.SplitManifest.from_json(json.load(fh))
    with open(_require(outdir / "vocab.json", "vocabulary"), "r", encoding="utf-8") as fh:
        vocab = corpus.Vocabulary.from_json(json.load(fh))
    return reports, splits, vocab


def _dump_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth(args, config) -> int:
    out = _outdir(args)
    section = config["synth"]
    if section["records"] < 10:
        raise DatasetTooSmall("DatasetTooSmall: need at least 10 records for a 7:1:2 split")
    syn = corpus.generate_synthetic_corpus(
        section["templates"], section["records"], config["seed"]
    )
    (out / "images").mkdir(exist_ok=True)
    for ref, image in syn.images.items():
        corpus.write_pgm(out / ref, image)
    corpus.write_corpus_jsonl(out / "corpus.jsonl", syn.records)
    _dump_json(out / "labels.json", {"k": syn.n_templates,
                                     "topics": dict(sorted(syn.labels.items()))})
    print(f"wrote {len(syn.records)} records to {out / 'corpus.jsonl'}")
    return 0


def cmd_preprocess(args, config) -> int:
    out = _outdir(args)
    corpus_path = Path(args.corpus) if args.corpus else out / "corpus.jsonl"
    records = corpus.read_corpus_jsonl(_require(corpus_path, "corpus"))
    reports = [
        corpus.tokenize(corpus.normalize_measurements(r.report_text), report_id=r.id)
        for r in records
    ]
    splits = corpus.split_dataset(
        [r.id for r in records], tuple(config["preprocess"]["ratios"]), config["seed"]
    )
    train_set = set(splits.train_ids)
    vocab = corpus.Vocabulary.build([rep for rep in reports if rep.id in train_set])
    corpus.write_tokens_jsonl(out / "processed.jsonl", reports)
    _dump_json(out / "splits.json", splits.to_json())
    _dump_json(out / "vocab.json", vocab.to_json())
    print(f"tokenized {len(reports)} reports; vocab size {len(vocab)}")
    return 0


def cmd_distill(args, config) -> int:
    out = _outdir(args)
    reports, splits, vocab = _load_processed(out)
    by_id = {rep.id: rep for rep in reports}
    train_reports = [by_id[rid] for rid in splits.train_ids]
    section = config["distill"]
    matrices = {}
    for method in section["methods"]:
        if method == "bow":
            matrices[method] = embedding.bow_embed(train_reports, vocab)
        elif method == "tfidf":
            matrices[method] = embedding.tfidf_embed(train_reports, vocab)
        elif method == "external":
            matrices[method] = embedding.external_embed(train_reports)
        else:
            raise ConfigError(f"unknown embedding method {method!r}")
    layout = LayoutConfig(
        n_neighbors=section["n_neighbors"],
        min_dist=section["min_dist"],
        n_epochs=section["umap_epochs"],
        negative_samples=section["negative_samples"],
    )
    result = clustering.grid_select(
        matrices,
        dims=tuple(section["dims"]),
        seed=config["seed"],
        k_min=section["k_min"],
        k_max=section["k_max"],
        restarts=section["restarts"],
        layout=layout,
        threads=config["threads"],
    )
    selection = {
        "embed_method": result.selection.embed_method,
        "dim": result.selection.dim,
        "k": result.selection.k,
        "silhouette": result.selection.silhouette,
        "ranges": {m: [r.lower, r.upper] for m, r in sorted(result.ranges.items())},
    }
    _dump_json(out / "selection.json", selection)
    _dump_json(out / "topics.json", result.topics.to_json())
    for method, grid in sorted(result.heatmaps.items()):
        heatmap.write_heatmap_csv(out / f"heatmap_{method}.csv", grid)
        heatmap.write_heatmap_svg(out / f"heatmap_{method}.svg", grid)
    print(
        f"selected method={selection['embed_method']} dim={selection['dim']} "
        f"k={selection['k']} silhouette={selection['silhouette']:.4f}"
    )
    return 0


def _build_model_config(config, vocab_size: int, k_topics: int) -> model_mod.ModelConfig:
    section = dict(config["model"])
    preset = section.pop("preset")
    section.pop("seed", None)
    factory = {"desk": model_mod.desk_config, "full": model_mod.full_config}.get(preset)
    if factory is None:
        raise ConfigError(f"unknown model preset {preset!r}")
    if "conv_channels" in section:
        section["conv_channels"] = tuple(section["conv_channels"])
    return factory(vocab_size=vocab_size, k_topics=k_topics, **section)


def _build_train_config(config) -> training.TrainConfig:
    section = dict(config["train"])
    preset = section.pop("preset")
    section.pop("keep_all_checkpoints", None)
    section["lambdas"] = tuple(section["lambdas"])
    section["seed"] = section.get("seed", config["seed"])
    if preset == "desk":
        return training.desk_train_config(**section)
    if preset == "full":
        return training.TrainConfig(**section)
    raise ConfigError(f"unknown train preset {preset!r}")


def _load_images(out: Path, corpus_path: Path, ids) -> dict[str, np.ndarray]:
    records = {r.id: r for r in corpus.read_corpus_jsonl(corpus_path)}
    images = {}
    for rid in ids:
        if rid not in records:
            raise ConfigError(f"record {rid!r} missing from corpus file")
        pair = [corpus.read_image(corpus_path.parent / ref) for ref in records[rid].image_refs]
        images[rid] = np.stack(pair)
    return images


def cmd_train(args, config) -> int:
    out = _outdir(args)
    reports, splits, vocab = _load_processed(out)
    topics_path = _require(Path(args.topics) if args.topics else out / "topics.json", "topics file")
    with open(topics_path, "r", encoding="utf-8") as fh:
        topics = clustering.KnowledgeTopics.from_json(json.load(fh))
    corpus_path = _require(Path(args.corpus) if args.corpus else out / "corpus.jsonl", "corpus")
    by_id = {rep.id: rep for rep in reports}
    train_reports = [by_id[rid] for rid in splits.train_ids]
    val_reports = [by_id[rid] for rid in splits.val_ids]
    images = _load_images(out, corpus_path, list(splits.train_ids) + list(splits.val_ids))

    missing = [rep.id for rep in train_reports if rep.id not in topics.topics]
    if missing:
        raise ConfigError(f"topics file lacks labels for training reports: {missing[:5]}")
    cfg = _build_model_config(config, vocab_size=len(vocab), k_topics=topics.k)
    net = model_mod.ReportModel(cfg, seed=config["model"]["seed"])
    comparer = training.SimilarityComparer(vocab, train_reports)
    train_examples = training.build_examples(train_reports, vocab, topics.topics, images, cfg.max_len)
    val_examples = training.build_examples(val_reports, vocab, topics.topics, images, cfg.max_len)
    trainer = training.Trainer(
        net,
        _build_train_config(config),
        comparer,
        vocab.tokens,
        checkpoint_dir=out,
        log_path=out / "train_log.jsonl",
        keep_all_checkpoints=config["train"]["keep_all_checkpoints"],
    )
    result = trainer.fit(train_examples, val_examples)
    print(
        f"trained {len(result.records)} epochs; best epoch {result.best_epoch} "
        f"(val loss {result.best_val_loss:.4f}) -> {result.best_path}"
    )
    return 0


def cmd_generate(args, config) -> int:
    out = _outdir(args)
    ckpt = _require(Path(args.model) if args.model else out / "model.ckpt", "model checkpoint")
    net, vocab_tokens = model_mod.ReportModel.load(ckpt)
    reports, splits, _ = _load_processed(out)
    section = config["generate"]
    split_ids = {"train": splits.train_ids, "val": splits.val_ids, "test": splits.test_ids}[
        section["split"]
    ]
    corpus_path = _require(Path(args.corpus) if args.corpus else out / "corpus.jsonl", "corpus")
    images = _load_images(out, corpus_path, split_ids)
    attention_dir = None
    if section["attention"]:
        attention_dir = out / "attention"
        attention_dir.mkdir(exist_ok=True)
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for lo in range(0, len(split_ids), 16):
            chunk = split_ids[lo : lo + 16]
            batch = np.stack([images[rid] for rid in chunk]).astype(np.float32) / 255.0
            outputs = net.generate(
                batch, mode=section["mode"], beam_width=section["beam_width"]
            )
            for rid, generated in zip(chunk, outputs):
                tokens = [vocab_tokens[t] for t in generated.token_ids]
                body = [t for t in tokens if t not in (corpus.START, corpus.END, corpus.PAD)]
                fh.write(json.dumps({"id": rid, "report": " ".join(body)}) + "\n")
                if attention_dir is not None:
                    model_mod.write_attention_csv(
                        attention_dir / f"{rid}.csv", generated, vocab_tokens
                    )
    print(f"generated {len(split_ids)} reports -> {out / 'predictions.jsonl'}")
    return 0


def cmd_evaluate(args, config) -> int:
    out = _outdir(args)
    if args.entailment:
        raise Unsupported(
            "Unsupported: entailment scoring requires an external pretrained model"
        )
    predictions_path = _require(
        Path(args.predictions) if args.predictions else out / "predictions.jsonl", "predictions"
    )
    reports, splits, _ = _load_processed(out)
    section = config["evaluate"]
    split_ids = {"train": splits.train_ids, "val": splits.val_ids, "test": splits.test_ids}[
        section["split"]
    ]
    predicted = {}
    with open(predictions_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                payload = json.loads(line)
                predicted[payload["id"]] = payload["report"].split()
    missing = [rid for rid in split_ids if rid not in predicted]
    if missing:
        raise PairingError(f"predictions missing for ids: {missing[:5]}")
    by_id = {rep.id: rep for rep in reports}
    candidates = [predicted[rid] for rid in split_ids]
    references = [list(by_id[rid].body) for rid in split_ids]
    lexicon_name = section["lexicon"]
    if Path(lexicon_name).exists():
        lexicon = metrics.EntityLexicon.load(lexicon_name)
    else:
        lexicon = metrics.builtin_lexicon(lexicon_name)
    report = metrics.evaluate_pairs(candidates, references, lexicon)
    _dump_json(out / "eval.json", report.to_json())
    (out / "eval.csv").write_text(
        metrics.EvalReport.CSV_HEADER + "\n" + report.to_csv_row() + "\n", encoding="utf-8"
    )
    print(
        f"bleu4={report.bleu[3]:.4f} rouge_l={report.rouge_l:.4f} "
        f"meteor={report.meteor:.4f} ce_f1={report.ce['f1']:.4f}"
    )
    return 0


def cmd_bench_cluster(args, config) -> int:
    out = _outdir(args)
    section = config["bench"]
    k = section["k"]
    rng = rng_from_seed(config["seed"])
    rows = ["method,n,silhouette,wall_ms"]
    for n in section["sizes"]:
        centers = rng.normal(scale=10.0, size=(k, 10))
        points = np.concatenate(
            [centers[i] + rng.normal(size=(n // k, 10)) for i in range(k)]
        )
        runs = {
            "kmeans": lambda p: clustering.kmeans(p, k, seed=config["seed"]).assignments,
            "dbscan": lambda p: clustering.dbscan(p, eps=3.0, min_pts=4),
            "agglomerative": lambda p: clustering.agglomerative(p, k),
        }
        for method, fn in runs.items():
            start = time.perf_counter()
            labels = fn(points)
            wall_ms = (time.perf_counter() - start) * 1000.0
            kept = labels >= 0
            if np.unique(labels[kept]).size >= 2:
                score = clustering.silhouette_score(points[kept], labels[kept])
            else:
                score = float("nan")
            rows.append(f"{method},{points.shape[0]},{score!r},{wall_ms:.3f}")
    (out / "bench.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"benchmarked {len(section['sizes'])} sizes -> {out / 'bench.csv'}")
    return 0


# --------------------------------------------------------------------------
# Parser and entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonogen",
        description="Ultrasound report generation pipeline (synthetic desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-o", "--outdir", default=".", help="artifact directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted topics")
    common(p)
    p.add_argument("--templates", type=int, default=None)
    p.add_argument("--records", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="normalize, tokenize and split a corpus")
    common(p)
    p.add_argument("--corpus", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("distill", help="two-step cluster parameter search")
    common(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train", help="train the report generator")
    common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--topics", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode reports for a split")
    common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against references")
    common(p)
    p.add_argument("--predictions", default=None)
    p.add_argument("--entailment", action="store_true",
                   help="reserved; exits with Unsupported")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-cluster", help="time clustering methods across sizes")
    common(p)
    p.set_defaults(func=cmd_bench_cluster)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        config = load_config(args, extras)
        for key in ("templates", "records"):
            if getattr(args, key, None) is not None:
                config["synth"][key] = getattr(args, key)
        return args.func(args, config)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SonogenError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
