"""Command-line entry point.

    hypernie synth --out quick
    hypernie build --config quick/run.cfg --out quick/run
    hypernie train --config quick/run.cfg --out quick/run
    hypernie eval  --config quick/run.cfg --out quick/run --checkpoint quick/run/fold0.hhkc
    hypernie bench --out bench

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, load_config, require_paths
from .evaluation.bench import bench, random_hypergraph
from .evaluation.metrics import MetricReport, evaluate_scores
from .evaluation.pagerank import ConvergenceError, pagerank, ppr
from .hhkg import (DataError, build_hypergraph, hypergraph_stats, load_hypergraph,
                   read_triples, save_hypergraph, write_triples)
from .ingest import (FeatureBundle, gen_synthetic, load_features, load_labels, make_features,
                     make_splits, save_features, write_labels)
from .numsub.tensor import no_grad
from .sem_enc import SemanticEncoder
from .train import (TrainingDiverged, checkpoint_echo, model_from_checkpoint, predict,
                    save_checkpoint, train_folds)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _say(msg):
    print(msg, file=sys.stderr)


def _out_dir(cfg) -> Path:
    out = Path(cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_paths(cfg, need_labels=True, need_features=True):
    keys = []
    if cfg["data"]["hypergraph"] is not None:
        keys.append(("data", "hypergraph"))
    else:
        keys.append(("data", "triples"))
        if cfg["data"]["node_types"] is not None:
            keys.append(("data", "node_types"))
    if need_features:
        keys.append(("data", "features"))
    if need_labels:
        keys.append(("data", "labels"))
    require_paths(cfg, keys)


def _load_graph(cfg):
    d = cfg["data"]
    if d["hypergraph"] is not None:
        kg, hg, _ = load_hypergraph(d["hypergraph"])
    else:
        kg = read_triples(d["triples"], d["node_types"])
        hg = build_hypergraph(kg, d["grouping"])
    return kg, hg


def load_dataset(cfg, split_seed=None, k_folds=None):
    d = cfg["data"]
    kg, hg = _load_graph(cfg)
    X2 = load_features(d["features"], expected_rows=kg.n_nodes)
    features = make_features(kg, hg, X2)
    ids, scores = load_labels(d["labels"], kg)
    seed = cfg["run"]["seed"] if split_seed is None else split_seed
    labels = make_splits(ids, scores, d["ratios"], d["k_folds"] if k_folds is None else k_folds,
                         seed)
    return kg, hg, features, labels


# commands ----------------------------------------------------------------------


def cmd_synth(cfg, args):
    s, out = cfg["synth"], _out_dir(cfg)
    kg, features, labels = gen_synthetic(s["n_users"], s["n_items"], s["n_relations"],
                                         s["avg_degree"], cfg["run"]["seed"], s["d_semantic"],
                                         s["noise"], cfg["data"]["grouping"])
    write_triples(kg, out / "triples.tsv", out / "node_types.tsv")
    # the reader assigns ids in first-seen order; align feature rows to it
    back = read_triples(out / "triples.tsv", out / "node_types.tsv")
    index = {name: i for i, name in enumerate(kg.node_names)}
    perm = np.array([index[name] for name in back.node_names])
    save_features(out / "semantic.hhkf", features.X2[perm])
    write_labels(out / "labels.tsv", kg, labels.node_ids, labels.scores)
    run_cfg = (f"[run]\nseed = {cfg['run']['seed']}\n"
               "[data]\ntriples = triples.tsv\nnode_types = node_types.tsv\n"
               "features = semantic.hhkf\nlabels = labels.tsv\n"
               f"grouping = {cfg['data']['grouping']}\n"
               "[train]\nmax_epochs = 300\npatience = 100\n")
    (out / "run.cfg").write_text(run_cfg, encoding="utf-8")
    print(f"nodes\t{kg.n_nodes}\ntriples\t{len(kg.triples)}\nlabels\t{len(labels)}")
    print(f"config\t{out / 'run.cfg'}")
    return EXIT_OK


def cmd_build(cfg, args):
    _data_paths(cfg, need_labels=False, need_features=False)
    out = _out_dir(cfg)
    kg, hg = _load_graph(cfg)
    save_hypergraph(out / "hypergraph.hhkg", kg, hg, cfg.echo(["data"]))
    stats = hypergraph_stats(hg)
    stats["n_relations"] = kg.n_relations
    stats["n_triples"] = len(kg.triples)
    text = "".join(f"{k}\t{v}\n" for k, v in stats.items())
    (out / "stats.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _baseline_rows(kg, labels, splits):
    """PR and score-personalized PPR evaluated on each fold's test nodes."""
    score_vec = labels.score_vector(kg.n_nodes)
    pr = pagerank(kg)
    reports = {"PR": MetricReport(), "PPR": MetricReport()}
    for train_nodes, _, test_nodes in splits:
        p = np.zeros(kg.n_nodes)
        p[train_nodes] = score_vec[train_nodes]
        p = p / p.sum() if p.sum() > 0 else np.full(kg.n_nodes, 1.0 / kg.n_nodes)
        scores = {"PR": pr, "PPR": ppr(kg, 0.85, p)}
        for name, s in scores.items():
            reports[name].add(evaluate_scores(s[test_nodes], score_vec[test_nodes]))
    return reports


def _baselines_tsv(reports, echo):
    names = next(iter(reports.values())).names
    lines = [f"# config\t{ln}" for ln in echo.splitlines() if ln.strip()]
    lines.append("\t".join(["method", "fold"] + names))
    for method, rep in reports.items():
        for i, f in enumerate(rep.folds):
            lines.append("\t".join([method, str(i)] + [f"{f[n]:.6f}" for n in names]))
        lines.append("\t".join([method, "mean"] + [f"{rep.mean(n):.6f}" for n in names]))
        lines.append("\t".join([method, "std"] + [f"{rep.std(n):.6f}" for n in names]))
    return "\n".join(lines) + "\n"


def cmd_train(cfg, args):
    _data_paths(cfg)
    out = _out_dir(cfg)
    tc = cfg.train_config()
    kg, hg, features, labels = load_dataset(cfg)
    echo = cfg.echo()
    _say(f"training {labels.k_folds} fold(s), mode={tc.model.mode}, "
         f"N={hg.n_nodes} E={hg.n_hyperedges} nnz={hg.nnz}")
    models, logs, splits, report = train_folds(hg, features, labels, tc, cfg["run"]["jobs"])
    for f, (model, log) in enumerate(zip(models, logs)):
        save_checkpoint(out / f"fold{f}.hhkc", model, tc, log.transform,
                        extra={"fold": f, "k_folds": labels.k_folds,
                               "split_seed": cfg["run"]["seed"]})
        (out / f"fold{f}_log.tsv").write_text(log.to_tsv(echo), encoding="utf-8")
    (out / "report.tsv").write_text(report.to_tsv(echo), encoding="utf-8")
    baselines = _baseline_rows(kg, labels, splits)
    (out / "baselines.tsv").write_text(_baselines_tsv(baselines, echo), encoding="utf-8")
    plotting.plot_training_curves(logs, out / "training_curves.png", f"mode={tc.model.mode}")
    plotting.plot_ndcg_at_k(report, out / "ndcg_at_k.png", f"mode={tc.model.mode}")
    print(report.to_tsv(), end="")
    _say(report.format_table())
    return EXIT_OK


def cmd_eval(cfg, args):
    ckpt = Path(args.checkpoint) if getattr(args, "checkpoint", None) else cfg["eval"]["checkpoint"]
    if ckpt is None:
        raise ConfigError("eval needs --checkpoint or [eval] checkpoint")
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    _data_paths(cfg)
    out = _out_dir(cfg)
    meta = checkpoint_echo(ckpt)
    kg, hg, features, labels = load_dataset(cfg, int(meta.get("split_seed", cfg["run"]["seed"])),
                                            int(meta.get("k_folds", cfg["data"]["k_folds"])))
    model, tc, _ = model_from_checkpoint(ckpt, features)
    fold = int(meta.get("fold", -1))
    parts = labels.fold_split(fold) if labels.k_folds > 1 and fold >= 0 \
        else labels.canonical_split()
    split = cfg["eval"]["split"]
    nodes = dict(zip(("train", "val", "test"), parts))[split]
    if len(nodes) < 2:
        raise DataError(f"{split} split has fewer than two labeled nodes")
    with no_grad():
        pred = predict(model, hg, features)
    score_vec = labels.score_vector(hg.n_nodes)
    ks = cfg["eval"]["ks"]
    report = MetricReport(ks=tuple(ks))
    report.add(evaluate_scores(pred[nodes], score_vec[nodes], ks))
    echo = cfg.echo() + f"checkpoint = {ckpt.name}\nfold = {fold}\nsplit = {split}\n"
    (out / "eval.tsv").write_text(report.to_tsv(echo), encoding="utf-8")
    plotting.plot_ndcg_at_k(report, out / "eval_ndcg_at_k.png", f"{ckpt.name} ({split})")
    print(report.to_tsv(), end="")
    return EXIT_OK


def cmd_bench(cfg, args):
    b, t = cfg["bench"], cfg["train"]
    seed = cfg["run"]["seed"]
    if b["random"]:
        hg = random_hypergraph(b["n_nodes"], b["n_edges"], b["density"], seed)
        X2 = np.random.default_rng(seed).standard_normal((hg.n_nodes, b["d_semantic"]))
        features = FeatureBundle(X2[:, :1].copy(), X2, hg.type_ids, hg.n_types)
    else:
        _data_paths(cfg, need_labels=False)
        kg, hg = _load_graph(cfg)
        X2 = load_features(cfg["data"]["features"], expected_rows=kg.n_nodes)
        features = make_features(kg, hg, X2)
    out = _out_dir(cfg)
    encoder = SemanticEncoder(features.X2.shape[1], t["hidden"], t["sem_heads"], t["sem_layers"],
                              features.n_types, t["type_dim"], np.random.default_rng(seed),
                              np.dtype(t["dtype"]), t["chunk_size"])
    report = bench(hg, features, encoder, b["modes"], b["chunk_sweep"], b["repeats"])
    (out / "bench.tsv").write_text(report.to_tsv(cfg.echo(["run", "bench", "train"])),
                                   encoding="utf-8")
    (out / "bench_series.tsv").write_text(report.series_tsv(), encoding="utf-8")
    if report.sweep():
        plotting.plot_chunk_sweep(report, out / "chunk_sweep.png")
    for note in report.notes:
        _say(note)
    print(report.to_tsv(), end="")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench}


def _add_common(p, default=None):
    p.add_argument("--config", default=default, help="run configuration file")
    p.add_argument("--seed", type=int, default=default, help="override [run] seed")
    p.add_argument("--jobs", type=int, default=default,
                   help="parallel folds (default 1, deterministic)")
    p.add_argument("--out", default=default, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="hypernie",
                                     description="Node importance estimation on typed hypergraphs")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        # flags may also follow the subcommand; SUPPRESS keeps them from
        # clobbering values given before it
        _add_common(p, argparse.SUPPRESS)
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint written by train")
    return parser


def _resolve(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg["run"]["jobs"] = args.jobs
    if args.out is not None:
        cfg["run"]["out"] = Path(args.out).resolve()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA
    except (TrainingDiverged, ConvergenceError, FloatingPointError) as exc:
        _say(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
