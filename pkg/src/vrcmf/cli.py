"""Command-line entry point.

Subcommands: stats, prep-text, train, evaluate, grid-search, predict.
Exit codes: 0 success, 1 runtime or data error (single-line diagnostic
on stderr), 2 usage error. All randomness derives from one --seed value,
fanned out to named sub-streams, so identical invocations in sequential
mode (--threads 1) produce byte-identical artifacts and logs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from vrcmf import baselines, engine, glove, report, textprep, visual
from vrcmf.artifacts import load_model, save_model
from vrcmf.config import (TrainConfig, child_seed, config_from_dict, config_to_dict,
                          load_config_file)
from vrcmf.ratings import parse_ratings, sparsity_stats, split_dataset

_VARIANT_ALIASES = {"convmf+": "convmf-plus", "convmfplus": "convmf-plus"}


def _normalize_variant(name: str) -> str:
    name = name.strip().lower()
    return _VARIANT_ALIASES.get(name, name)


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.replace(",", " ").split())


_CONFIG_FLAGS = (
    ("latent_dim", int), ("lambda_u", float), ("lambda_v", float), ("lambda_w", float),
    ("alpha", float), ("confidence_distance", str), ("iterations", int),
    ("repeats", int), ("seed", int), ("rating_max", float), ("emb_dim", int),
    ("cnn_filters", int), ("proj_hidden", int), ("rcnn_hidden", int),
    ("rcnn_context_window", int), ("dropout", float), ("net_lr", float),
    ("batch_size", int), ("threads", int),
)


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value settings file; flags win")
    sub.add_argument("--variant", help="pmf, convmf, convmf+, rconvmf, vconvmf, vrconvmf")
    for name, kind in _CONFIG_FLAGS:
        sub.add_argument("--" + name.replace("_", "-"), type=kind, default=None)
    sub.add_argument("--confidence", choices=["auto", "on", "off"], default=None)
    sub.add_argument("--cnn-windows", type=_int_tuple, default=None)
    sub.add_argument("--visual-levels", type=_int_tuple, default=None)


def _resolve_config(args) -> TrainConfig:
    cfg = load_config_file(args.config) if args.config else TrainConfig()
    updates = {}
    if args.variant is not None:
        updates["variant"] = _normalize_variant(args.variant)
    for name, _ in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    if args.confidence is not None:
        updates["confidence"] = None if args.confidence == "auto" else args.confidence == "on"
    if args.cnn_windows is not None:
        updates["cnn_windows"] = args.cnn_windows
    if args.visual_levels is not None:
        updates["visual_levels"] = args.visual_levels
    return replace(cfg, **updates)


def _add_text_inputs(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--docs", help="item_id<TAB>text document file")
    sub.add_argument("--stopwords", help="one stopword per line")
    sub.add_argument("--vocab", help="prebuilt vocabulary blob")
    sub.add_argument("--embeddings", help="pretrained embedding blob for warm start")
    sub.add_argument("--vocab-cap", type=int, default=6000)
    sub.add_argument("--max-len", type=int, default=400)
    sub.add_argument("--visual", help="#vrcmf-feat v1 feature file")


def _load_side_data(args, cfg: TrainConfig):
    """Sequences, embedding geometry, and visual vectors per the variant."""
    sequences = vectors = warm = None
    num_embeddings = pad_index = None
    if cfg.uses_text:
        if not args.docs:
            raise ValueError(f"variant {cfg.variant!r} requires --docs")
        docs = textprep.read_documents(args.docs)
        stop = textprep.read_stopwords(args.stopwords) if args.stopwords else frozenset()
        if args.vocab:
            vocab = textprep.load_vocabulary(args.vocab)
            sequences = {item: vocab.encode(text) for item, text in docs.items()}
        else:
            vocab, sequences = textprep.build_vocabulary(
                docs, cap=args.vocab_cap, stopwords=stop, max_len=args.max_len)
        num_embeddings, pad_index = vocab.num_embeddings, vocab.pad_index
        if args.embeddings:
            table = glove.load_embeddings(args.embeddings)
            if table.dim != cfg.emb_dim:
                raise ValueError(
                    f"embedding blob dimension {table.dim} != configured {cfg.emb_dim}")
            warm = table.vectors()
            if warm.shape[0] not in (vocab.size, vocab.num_embeddings):
                raise ValueError("embedding blob does not match the vocabulary size")
    if cfg.uses_visual:
        if not args.visual:
            raise ValueError(f"variant {cfg.variant!r} requires --visual")
        vectors = visual.load_visual_vectors(args.visual, levels=cfg.visual_levels)
    return sequences, vectors, num_embeddings, pad_index, warm


def cmd_stats(args) -> int:
    matrix = parse_ratings(args.ratings, fmt=args.format, rating_max=args.rating_max)
    stats = sparsity_stats(matrix)
    print(f"users: {stats.num_users}")
    print(f"items: {stats.num_items}")
    print(f"ratings: {stats.rating_count}")
    print(f"sparsity: {stats.sparsity_percent()}")
    return 0


def cmd_prep_text(args) -> int:
    docs = textprep.read_documents(args.docs)
    stop = textprep.read_stopwords(args.stopwords) if args.stopwords else frozenset()
    vocab, sequences = textprep.build_vocabulary(
        docs, cap=args.vocab_cap, stopwords=stop, max_len=args.max_len)
    textprep.save_vocabulary(vocab, args.vocab_out)
    empty = sum(1 for s in sequences.values() if len(s) == 0)
    print(f"documents: {len(docs)} ({empty} empty after preprocessing)")
    print(f"vocabulary: {vocab.size} words -> {args.vocab_out}")
    if args.emb_out:
        co = glove.build_cooccurrence(
            [s for s in sequences.values() if len(s)], window=args.window)
        table = glove.train_glove(co, dim=args.dim, x_max=args.x_max, beta=args.beta,
                                  epochs=args.epochs, lr=args.lr,
                                  seed=child_seed(args.seed, "glove"),
                                  num_words=vocab.num_embeddings)
        glove.save_embeddings(table, args.emb_out)
        print(f"embeddings: dim {table.dim}, loss {table.loss_history[0]:.4f} -> "
              f"{table.loss_history[-1]:.4f} -> {args.emb_out}")
        if args.text_out:
            glove.export_text(table, vocab.words, args.text_out)
    return 0


def _write_log(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,loss,train_rmse,val_rmse\n")
        for row in history:
            fh.write(f"{row['iteration']},{row['loss']!r},"
                     f"{row['train_rmse']!r},{row['val_rmse']!r}\n")


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    matrix = parse_ratings(args.ratings, fmt=args.format, rating_max=cfg.rating_max)
    split = split_dataset(matrix, seed=child_seed(cfg.seed, "split"))
    sequences, vectors, num_embeddings, pad_index, warm = _load_side_data(args, cfg)
    result = engine.fit(matrix, split, cfg, sequences, vectors,
                        pad_index=pad_index, num_embeddings=num_embeddings,
                        embeddings=warm)
    params = dict(result.net_params or {})
    if result.head is not None:
        params["head_W"] = result.head.W
        params["head_b"] = result.head.b
    save_model(args.model_out, U=result.U, V=result.V,
               user_ids=matrix.user_ids, item_ids=matrix.item_ids,
               config=config_to_dict(cfg), params=params,
               extra_meta={"best_iteration": result.best_iteration,
                           "val_rmse": result.val_rmse})
    if args.log_out:
        _write_log(result.history, args.log_out)
    test = split.test
    if len(test):
        test_rmse = engine.evaluate_rmse(result.U, result.V, matrix.user_idx[test],
                                         matrix.item_idx[test], matrix.rating[test])
        print(f"test RMSE {test_rmse:.4f} (best iteration {result.best_iteration}, "
              f"validation RMSE {result.val_rmse:.4f})")
    else:
        print(f"best iteration {result.best_iteration}, "
              f"validation RMSE {result.val_rmse:.4f}")
    print(f"model -> {args.model_out}")
    return 0


def cmd_evaluate(args) -> int:
    meta, U, V, _ = load_model(args.model)
    cfg = config_from_dict(meta["config"])
    matrix = parse_ratings(args.ratings, fmt=args.format, rating_max=cfg.rating_max)
    user_map = {u: i for i, u in enumerate(meta["user_ids"])}
    item_map = {t: j for j, t in enumerate(meta["item_ids"])}
    users = np.empty(matrix.num_entries, dtype=np.int64)
    items = np.empty(matrix.num_entries, dtype=np.int64)
    for pos in range(matrix.num_entries):
        raw_u = matrix.user_ids[matrix.user_idx[pos]]
        raw_t = matrix.item_ids[matrix.item_idx[pos]]
        if raw_u not in user_map:
            raise ValueError(f"unknown user id {raw_u!r}")
        if raw_t not in item_map:
            raise ValueError(f"unknown item id {raw_t!r}")
        users[pos] = user_map[raw_u]
        items[pos] = item_map[raw_t]
    rmse = engine.evaluate_rmse(U, V, users, items, matrix.rating,
                                clamp_to=cfg.rating_max if args.clamp else None)
    print(f"RMSE {rmse:.4f}")
    if args.baseline:
        entries = []
        for spec in args.baseline:
            name, _, value = spec.partition("=")
            if not value:
                raise ValueError(f"--baseline expects NAME=RMSE, got {spec!r}")
            entries.append((name, float(value)))
        entries.append((args.name, rmse))
        print(report.render_comparison(entries, baseline=entries[0][0]))
    if args.user_cf_baseline:
        positions = np.arange(matrix.num_entries)
        rmse_cf = baselines.baseline_user_cf(matrix, positions, positions,
                                             neighbors=args.user_cf_baseline)
        print(f"user-cf in-sample RMSE {rmse_cf:.4f}")
    return 0


def cmd_grid_search(args) -> int:
    cfg = _resolve_config(args)
    matrix = parse_ratings(args.ratings, fmt=args.format, rating_max=cfg.rating_max)
    split = split_dataset(matrix, seed=child_seed(cfg.seed, "split"))
    sequences, vectors, num_embeddings, pad_index, warm = _load_side_data(args, cfg)
    grid_u = args.grid_u if args.grid_u is not None else engine.DEFAULT_GRID
    grid_v = args.grid_v if args.grid_v is not None else engine.DEFAULT_GRID
    result = engine.grid_search(matrix, split, cfg, grid_u, grid_v,
                                sequences=sequences, visual=vectors,
                                pad_index=pad_index, num_embeddings=num_embeddings,
                                embeddings=warm)
    if args.surface_out:
        with open(args.surface_out, "w", encoding="utf-8") as fh:
            fh.write("lambda_u,lambda_v,val_rmse\n")
            for lu, lv, rmse in result.surface:
                fh.write(f"{lu!r},{lv!r},{rmse!r}\n")
    print(f"best lambda_u {result.best_lambda_u!r}, lambda_v {result.best_lambda_v!r}, "
          f"validation RMSE {result.best_val_rmse:.4f}")
    return 0


def cmd_predict(args) -> int:
    meta, U, V, _ = load_model(args.model)
    cfg = config_from_dict(meta["config"])
    user_map = {u: i for i, u in enumerate(meta["user_ids"])}
    item_map = {t: j for j, t in enumerate(meta["item_ids"])}
    clamp = cfg.rating_max if args.clamp else None

    source = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    sink = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8")
    try:
        for lineno, raw in enumerate(source, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"line {lineno}: expected 'user_id<TAB>item_id'")
            raw_u, raw_t = parts[0], parts[1]
            if raw_u not in user_map:
                raise ValueError(f"unknown user id {raw_u!r}")
            if raw_t not in item_map:
                raise ValueError(f"unknown item id {raw_t!r}")
            value = engine.predict(U, V, user_map[raw_u], item_map[raw_t], clamp_to=clamp)
            sink.write(f"{raw_u}\t{raw_t}\t{value!r}\n")
    finally:
        if source is not sys.stdin:
            source.close()
        if sink is not sys.stdout:
            sink.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrcmf",
        description="Matrix-factorization recommender with text and visual item priors")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("stats", help="dataset size and sparsity")
    sub.add_argument("ratings")
    sub.add_argument("--format", default="double-colon",
                     choices=["double-colon", "tab", "comma"])
    sub.add_argument("--rating-max", type=float, default=5.0)
    sub.set_defaults(func=cmd_stats)

    sub = commands.add_parser("prep-text", help="build vocabulary and embeddings")
    sub.add_argument("--docs", required=True)
    sub.add_argument("--stopwords")
    sub.add_argument("--vocab-out", required=True)
    sub.add_argument("--emb-out")
    sub.add_argument("--text-out", help="plain-text embedding export")
    sub.add_argument("--vocab-cap", type=int, default=6000)
    sub.add_argument("--max-len", type=int, default=400)
    sub.add_argument("--window", type=int, default=50)
    sub.add_argument("--dim", type=int, default=200)
    sub.add_argument("--x-max", type=float, default=100.0)
    sub.add_argument("--beta", type=float, default=0.75)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--lr", type=float, default=0.05)
    sub.add_argument("--seed", type=int, default=0)
    sub.set_defaults(func=cmd_prep_text)

    sub = commands.add_parser("train", help="fit a model variant")
    sub.add_argument("ratings")
    sub.add_argument("--format", default="double-colon",
                     choices=["double-colon", "tab", "comma"])
    sub.add_argument("--model-out", required=True)
    sub.add_argument("--log-out")
    _add_config_flags(sub)
    _add_text_inputs(sub)
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("evaluate", help="RMSE of a model on a ratings file")
    sub.add_argument("--model", required=True)
    sub.add_argument("ratings")
    sub.add_argument("--format", default="double-colon",
                     choices=["double-colon", "tab", "comma"])
    sub.add_argument("--clamp", action="store_true")
    sub.add_argument("--name", default="model", help="row label in the comparison table")
    sub.add_argument("--baseline", action="append",
                     help="NAME=RMSE reference row; repeatable, first is the anchor")
    sub.add_argument("--user-cf-baseline", type=int, metavar="NEIGHBORS",
                     help="also report the neighborhood baseline on this file")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("grid-search", help="two independent lambda sweeps")
    sub.add_argument("ratings")
    sub.add_argument("--format", default="double-colon",
                     choices=["double-colon", "tab", "comma"])
    sub.add_argument("--grid-u", type=_float_tuple, default=None)
    sub.add_argument("--grid-v", type=_float_tuple, default=None)
    sub.add_argument("--surface-out")
    _add_config_flags(sub)
    _add_text_inputs(sub)
    sub.set_defaults(func=cmd_grid_search)

    sub = commands.add_parser("predict", help="score user/item pairs")
    sub.add_argument("--model", required=True)
    sub.add_argument("--input", default="-", help="user_id<TAB>item_id lines; - is stdin")
    sub.add_argument("--output", default="-")
    sub.add_argument("--clamp", action="store_true")
    sub.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
