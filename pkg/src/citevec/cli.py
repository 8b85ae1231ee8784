"""Command-line pipeline: ingest -> build-context -> train -> topk -> evaluate.

Every stage reads and writes plain files, so stages can be rerun or fed
rankings produced by other tools.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from . import context as ctx
from . import evaluate as ev
from . import graph as gr
from . import online, similarity, synth, trainer
from .baselines import MEASURES, baseline_table

log = logging.getLogger("citevec")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_STAGE_ORDER = 4


class CliError(Exception):
    code = EXIT_ERROR


class MissingInput(CliError):
    code = EXIT_MISSING_INPUT


class StageOrderError(CliError):
    code = EXIT_STAGE_ORDER


def _need_input(path, flag):
    if not path:
        raise MissingInput(f"{flag} is required")
    if not os.path.isfile(path):
        raise MissingInput(f"{flag}: no such file: {path}")
    return path


def _need_stage(path, flag, stage):
    if not path or not os.path.isfile(path):
        where = f" ({path})" if path else ""
        raise StageOrderError(f"{flag}{where} not found; run `{stage}` first")
    return path


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _log_config(command, **config):
    log.info("%s config: %s", command, json.dumps(config, sort_keys=True, default=str))


def _state_path(model_path):
    return model_path + ".state"


# -- argument groups ------------------------------------------------------------


def _context_flags(p):
    g = p.add_argument_group("context")
    g.add_argument("--win", type=int, default=3, help="random-walk window (default 3)")
    lam = g.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed log shift")
    lam.add_argument("--lambda-auto-q", dest="lam_q", type=float, default=0.05,
                     help="choose the shift from this lower quantile of masses (default 0.05)")
    g.add_argument("--exclude-diagonal", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("--prune-threshold", type=float, default=0.0)


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--dim", type=int, default=500)
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--optimizer", choices=[o.value for o in trainer.Optimizer], default="adagrad")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--symmetrize", action="store_true",
                   help="average X(j|i) and X(i|j) before training (ablation)")


def _eval_flags(p):
    p.add_argument("--denominator", choices=["k", "list"], default="k",
                   help="divide overlap by k (default) or by the system list length")
    p.add_argument("--gold-ties", choices=["id", "shared"], default="id",
                   help="gold ties at rank k: break by id (default) or let any tied document count")


def _context_config(a) -> ctx.ContextConfig:
    lam = "auto" if a.lam is None else a.lam
    return ctx.ContextConfig(win=a.win, lam=lam, q=a.lam_q, exclude_diagonal=a.exclude_diagonal,
                             prune_threshold=a.prune_threshold)


def _train_config(a) -> trainer.TrainConfig:
    return trainer.TrainConfig(dim=a.dim, epochs=a.epochs, alpha=a.alpha, optimizer=a.optimizer,
                               seed=a.seed, workers=a.workers)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel workers (multi-worker training is not reproducible)")
    p = argparse.ArgumentParser(prog="citevec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    s = add("ingest", "validate and normalise an edge file")
    s.add_argument("--edges", required=True)
    s.add_argument("--out", required=True)

    s = add("build-context", "compute the weighted context matrix")
    s.add_argument("--edges", required=True)
    s.add_argument("--out", required=True)
    _context_flags(s)

    s = add("train", "fit document vectors on a context matrix")
    s.add_argument("--context")
    s.add_argument("--model", required=True)
    s.add_argument("--text", help="also write a text export of the vectors")
    s.add_argument("--trace", help="write per-epoch cost here")
    s.add_argument("--resume", action="store_true", help="continue from --model's saved state")
    s.add_argument("--edges", help="edge file the model was trained on (resume)")
    s.add_argument("--edges-delta", help="new citation records to fold in (resume)")
    s.add_argument("--context-out", help="write the updated context matrix here (resume)")
    _train_flags(s)

    s = add("topk", "rank every document by cosine similarity")
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", required=True)

    s = add("baseline", "rank with a co-occurrence baseline")
    s.add_argument("--edges", required=True)
    s.add_argument("--measure", choices=sorted(MEASURES), default="amsler")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", required=True)

    s = add("evaluate", "intersection ratio against a gold standard")
    s.add_argument("--rankings")
    s.add_argument("--gold", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--per-query", help="per-query CSV output")
    s.add_argument("--edges", help="treat every document of this graph as a query")
    _eval_flags(s)

    s = add("novelty", "entropy novelty of a ranking file")
    s.add_argument("--rankings")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--out", required=True)

    s = add("pipeline", "run every stage end to end")
    s.add_argument("--edges", required=True)
    s.add_argument("--gold")
    s.add_argument("--out-dir", default="citevec_run")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--baseline", action="append", choices=sorted(MEASURES), default=[],
                   help="also rank and score with this baseline (repeatable)")
    _context_flags(s)
    _train_flags(s)
    _eval_flags(s)

    s = add("synth", "generate a planted-community citation graph and gold file")
    s.add_argument("--communities", type=int, default=2)
    s.add_argument("--nodes", type=int, default=200)
    s.add_argument("--p-in", type=float, default=0.1)
    s.add_argument("--p-out", type=float, default=0.005)
    s.add_argument("--hub-fraction", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out-dir", default=".")
    return p


# -- commands -------------------------------------------------------------------


def cmd_ingest(a):
    _log_config("ingest", edges=a.edges, out=a.out)
    g = gr.read_edges(_need_input(a.edges, "--edges"))
    _ensure_parent(a.out)
    gr.write_edges(g, a.out)
    log.info("ingested %d documents, %d undirected links", g.node_count, g.undirected_edge_count())


def _build_context(edges, out, cfg, workers):
    g = gr.read_edges(_need_input(edges, "--edges"))
    m = ctx.build_context_matrix(g, cfg, workers=workers)
    _ensure_parent(out)
    ctx.write_context(m, out, ids=g.ids)
    log.info("context: %d entries over %d documents, lambda=%r", len(m), g.node_count, m.resolved_lambda)
    return g, m


def cmd_build_context(a):
    cfg = _context_config(a)
    _log_config("build-context", edges=a.edges, out=a.out, workers=a.workers, **asdict(cfg))
    _, m = _build_context(a.edges, a.out, cfg, a.workers)
    _log_config("build-context", resolved_lambda=m.resolved_lambda)


def _write_model(model, ids, path, text=None):
    _ensure_parent(path)
    vectors = trainer.finalize(model, ids)
    similarity.write_vectors(vectors, path)
    trainer.save_checkpoint(model, _state_path(path), ids=ids)
    if text:
        similarity.write_vectors_text(vectors, text)
    if vectors.flagged.any():
        log.warning("%d documents have no embedding", int(vectors.flagged.sum()))
    return vectors


def _write_trace(trace, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for epoch, j in enumerate(trace, start=1):
                fh.write(f"{epoch}\t{j:.9g}\n")


def _train(context_path, model_path, cfg, symmetrize=False, text=None, trace_path=None):
    m = ctx.read_context(context_path)
    try:
        ids = ctx.read_context_ids(context_path)
    except FileNotFoundError:
        raise StageOrderError(f"{ctx.ids_path(context_path)} missing; rerun `build-context`") from None
    if symmetrize:
        m = ctx.symmetrize(m)
    model, trace = trainer.train(m, cfg, ids=ids)
    if trace:
        log.info("trained %d epochs: J %.6g -> %.6g", len(trace), trace[0], trace[-1])
    _write_model(model, ids, model_path, text)
    _write_trace(trace, trace_path)
    return model, trace


def _read_records(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(gr.parse_edge_lines(fh))


def cmd_train(a):
    cfg = _train_config(a)
    _log_config("train", context=a.context, model=a.model, resume=a.resume, symmetrize=a.symmetrize,
                **asdict(cfg))
    context_path = _need_stage(a.context, "--context", "build-context")
    if not a.resume:
        _train(context_path, a.model, cfg, a.symmetrize, a.text, a.trace)
        return
    state = _need_stage(_state_path(a.model), "--model state", "train")
    old = _read_records(_need_input(a.edges, "--edges"))
    delta = _read_records(_need_input(a.edges_delta, "--edges-delta"))
    model, ids = trainer.load_checkpoint(state)
    matrix = ctx.read_context(context_path)
    if model.dim != cfg.dim:
        raise CliError(f"--dim {cfg.dim} does not match saved model dim {model.dim}")
    try:
        res = online.update(model, matrix, old, delta, cfg, ids=ids)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _write_model(res.model, res.graph.ids, a.model, a.text)
    _write_trace(res.trace, a.trace)
    if a.context_out:
        ctx.write_context(res.matrix, a.context_out, ids=res.graph.ids)


def cmd_topk(a):
    _log_config("topk", model=a.model, k=a.k, out=a.out, workers=a.workers)
    vectors = similarity.read_vectors(_need_stage(a.model, "--model", "train"))
    table = similarity.all_top_k(vectors, a.k, workers=a.workers)
    _ensure_parent(a.out)
    similarity.write_rankings(table, a.out)


def cmd_baseline(a):
    _log_config("baseline", edges=a.edges, measure=a.measure, k=a.k, out=a.out)
    g = gr.read_edges(_need_input(a.edges, "--edges"))
    _ensure_parent(a.out)
    similarity.write_rankings(baseline_table(g, a.measure, a.k), a.out)


def _evaluate(table, gold, k, queries, a):
    return ev.intersection_ratio(table, gold, k, queries=queries, denominator=a.denominator, ties=a.gold_ties)


def cmd_evaluate(a):
    _log_config("evaluate", rankings=a.rankings, gold=a.gold, k=a.k, edges=a.edges,
                denominator=a.denominator, gold_ties=a.gold_ties)
    table = similarity.read_rankings(_need_stage(a.rankings, "--rankings", "topk"))
    gold = ev.load_gold(_need_input(a.gold, "--gold"))
    queries = None
    if a.edges:
        g = gr.read_edges(_need_input(a.edges, "--edges"))
        queries = list(g.ids)
    report = _evaluate(table, gold, a.k, queries, a)
    _ensure_parent(a.out)
    ev.write_reports([report], a.out)
    if a.per_query:
        ev.write_per_query(report, a.per_query)
    log.info("intersection ratio @%d = %.4f (%d evaluated, %d skipped)",
             a.k, report.value, report.evaluated, report.skipped)


def cmd_novelty(a):
    _log_config("novelty", rankings=a.rankings, k=a.k, out=a.out)
    table = similarity.read_rankings(_need_stage(a.rankings, "--rankings", "topk"))
    report = ev.entropy_novelty(table, a.k)
    _ensure_parent(a.out)
    ev.write_reports([report], a.out)
    log.info("entropy novelty = %.4f", report.value)


def cmd_pipeline(a):
    ccfg, tcfg = _context_config(a), _train_config(a)
    out = a.out_dir
    os.makedirs(out, exist_ok=True)
    config = {"edges": a.edges, "gold": a.gold, "k": a.k, "baselines": a.baseline,
              "denominator": a.denominator, "gold_ties": a.gold_ties, "workers": a.workers,
              "context": asdict(ccfg), "train": {**asdict(tcfg), "optimizer": tcfg.optimizer.value},
              "symmetrize": a.symmetrize}
    _log_config("pipeline", **config)
    gold = ev.load_gold(_need_input(a.gold, "--gold")) if a.gold else None

    p = lambda name: os.path.join(out, name)  # noqa: E731
    g, m = _build_context(a.edges, p("context.tsv"), ccfg, a.workers)
    config["resolved_lambda"] = m.resolved_lambda
    _train(p("context.tsv"), p("model.p2v"), tcfg, a.symmetrize, p("model.txt"), p("trace.tsv"))
    vectors = similarity.read_vectors(p("model.p2v"))
    table = similarity.all_top_k(vectors, a.k, workers=a.workers)
    similarity.write_rankings(table, p("rankings.tsv"))

    reports = []
    tables = {"embedding": table}
    for measure in a.baseline:
        tables[measure] = baseline_table(g, measure, a.k)
        similarity.write_rankings(tables[measure], p(f"rankings.{measure}.tsv"))
    for name, t in tables.items():
        if gold is not None:
            r = _evaluate(t, gold, a.k, list(g.ids), a)
            r.metric = f"{r.metric}:{name}"
            reports.append(r)
            ev.write_per_query(r, p(f"per_query.{name}.csv"))
        r = ev.entropy_novelty(t, a.k)
        r.metric = f"{r.metric}:{name}"
        reports.append(r)
    ev.write_reports(reports, p("report.tsv"))
    with open(p("config.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log_config("pipeline", resolved_lambda=m.resolved_lambda, seed=tcfg.seed)
    for r in reports:
        log.info("%s @%s = %.4f", r.metric, r.k, r.value)


def cmd_synth(a):
    _log_config("synth", communities=a.communities, nodes=a.nodes, p_in=a.p_in, p_out=a.p_out,
                hub_fraction=a.hub_fraction, seed=a.seed, out_dir=a.out_dir)
    corpus = synth.generate(a.communities, a.nodes, a.p_in, a.p_out, a.seed, a.hub_fraction)
    os.makedirs(a.out_dir, exist_ok=True)
    with open(os.path.join(a.out_dir, "edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{s}\t{t}\n" for s, t in corpus.records))
    ev.write_gold(corpus.gold_pairs(), os.path.join(a.out_dir, "gold.tsv"))
    with open(os.path.join(a.out_dir, "labels.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{d}\t{c}\n" for d, c in zip(corpus.ids, corpus.labels)))
    log.info("synth: %d documents, %d citations", len(corpus.ids), len(corpus.records))


COMMANDS = {
    "ingest": cmd_ingest,
    "build-context": cmd_build_context,
    "train": cmd_train,
    "topk": cmd_topk,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "novelty": cmd_novelty,
    "pipeline": cmd_pipeline,
    "synth": cmd_synth,
}


def run(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING if a.quiet else logging.DEBUG if a.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        COMMANDS[a.command](a)
    except CliError as exc:
        print(f"citevec {a.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, KeyError, OSError, trainer.TrainingError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"citevec {a.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
