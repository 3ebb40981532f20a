"""``sketchkg`` command-line entry point.

Exit codes: 0 success, 1 bad input (including usage errors), 2 internal error.
Settings resolve as built-in defaults < ``--config`` file < command-line flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from datetime import datetime, timezone

from . import __version__
from .exceptions import InputError, IoFailure, UnknownSubcommand

logger = logging.getLogger("sketchkg")

_INTERNAL = {"group", "action", "func", "leaf", "config", "pretty", "log_level", "jobs"}


class UsageError(InputError):
    def __init__(self, message, usage=""):
        self.usage = usage
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message and ("COMMAND" in message or "ACTION" in message):
            raise UnknownSubcommand(f"{self.prog}: {message}")
        raise UsageError(f"{self.prog}: {message}", self.format_usage())


# ---------------------------------------------------------------- helpers

def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _write_text(path, text):
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _jsonl_lines(path):
    from ._jsonio import loads_strict
    from .exceptions import MalformedJson

    out = []
    for lineno, line in enumerate(_read_text(path).split("\n"), 1):
        if not line.strip():
            continue
        try:
            out.append(loads_strict(line))
        except MalformedJson as exc:
            raise MalformedJson(f"{path} line {lineno}: {exc}") from None
    return out


def _sha256(path):
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError:
        return None
    return h.hexdigest()


def _digests(paths):
    out = {}
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                full = os.path.join(p, name)
                if os.path.isfile(full) and not name.endswith(".manifest.json"):
                    out[full] = _sha256(full)
        elif p is not None:
            out[p] = _sha256(p)
    return out


def _dump(obj, pretty):
    if pretty:
        return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=False) + "\n"
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {s!r}")


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    cfg = {}
    for lineno, raw in enumerate(_read_text(path).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path} line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = value
    return cfg


def _apply_config(leaf, cfg):
    actions = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in actions or key in ("help", "config"):
            raise InputError(f"unknown config key {key!r} for {leaf.prog}")
        a = actions[key]
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(value)
        elif a.type is not None:
            try:
                defaults[key] = a.type(value)
            except (TypeError, ValueError) as exc:
                raise InputError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = value
        if a.choices is not None and defaults[key] not in a.choices:
            raise InputError(f"config key {key!r}: {value!r} not in {sorted(a.choices)}")
    leaf.set_defaults(**defaults)


def _api_key():
    return os.environ.get("DRAG_API_KEY")


# ---------------------------------------------------------------- handlers
# Each handler returns (result, inputs, outputs): ``result`` is printed as JSON
# when not None, ``outputs`` are artifact paths covered by the run manifest.

def _emit_lines(args, lines):
    text = "".join(line + "\n" for line in lines)
    if args.output:
        _write_text(args.output, text)
        return [args.output]
    sys.stdout.write(text)
    return []


def cmd_kg_normalize(args, infer=False):
    from .kg import normalize_graph, read_graph_records, serialize_graph, with_inferred_layout

    graphs = read_graph_records(args.input)
    lines, notes = [], {}
    for g in graphs:
        diag = []
        ng = normalize_graph(g, diagnostics=diag)
        if infer:
            ng = with_inferred_layout(ng)
        if diag:
            notes[g.diagram_id] = diag
        lines.append(serialize_graph(ng))
    outs = _emit_lines(args, lines)
    summary = {"records": len(graphs), "diagnostics": notes}
    if not outs:
        sys.stderr.write(_dump(summary, args.pretty))
        summary = None
    return summary, [args.input], outs


def cmd_kg_infer(args):
    return cmd_kg_normalize(args, infer=True)


def _variants_for(job):
    from .variants import generate_variant_set

    graph, spec = job
    return [r.to_json() for r in generate_variant_set(graph, spec)]


def _pool_map(fn, items, jobs, processes=True):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    pool_cls = ProcessPoolExecutor if processes else ThreadPoolExecutor
    with pool_cls(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_variants_generate(args):
    from .kg import read_graph_records
    from .render import render_sketch_svg
    from .variants import SeedSpec, read_variant_records

    spec = SeedSpec(args.seed, args.jitter)
    graphs = read_graph_records(args.input)
    chunks = _pool_map(_variants_for, [(g, spec) for g in graphs], args.jobs)
    lines = [line for chunk in chunks for line in chunk]
    outs = _emit_lines(args, lines)
    if args.svg_dir:
        outs += _render_all(args.svg_dir, read_variant_records(args.output) if args.output else
                            _records_from_lines(lines), args.canvas, render_sketch_svg)
    return ({"records": len(graphs), "variants": len(lines)} if outs else None), [args.input], outs


def _records_from_lines(lines):
    from .variants import VariantRecord

    return [VariantRecord.from_dict(json.loads(line)) for line in lines]


def _render_all(out_dir, records, canvas, render):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc
    paths = []
    for r in records:
        path = os.path.join(out_dir, f"{r.source_diagram_id}.{r.variant}.svg")
        _write_text(path, render(r.graph, canvas))
        paths.append(path)
    return paths


def cmd_variants_render(args):
    from .kg import parse_graph_record
    from .render import render_sketch_svg
    from .variants import VariantRecord

    try:
        os.makedirs(args.out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{args.out_dir}: {exc}") from exc
    paths = []
    for obj in _jsonl_lines(args.input):
        if isinstance(obj, dict) and "variant" in obj and "source_diagram_id" in obj:
            r = VariantRecord.from_dict(obj)
            name, graph = f"{r.source_diagram_id}.{r.variant}", r.graph
        else:
            graph = parse_graph_record(json.dumps(obj))
            name = graph.diagram_id or "graph"
        path = os.path.join(args.out_dir, f"{name}.svg")
        _write_text(path, render_sketch_svg(graph, args.canvas))
        paths.append(path)
    return {"rendered": len(paths)}, [args.input], [args.out_dir]


def cmd_loss_aggregate(args):
    from .degradation import aggregate_variant_losses
    from .variants import read_variant_records

    summary = aggregate_variant_losses(read_variant_records(args.input))
    outs = []
    if args.csv:
        _write_text(args.csv, summary.to_csv())
        outs.append(args.csv)
    report = summary.as_dict()
    if args.output:
        _write_text(args.output, _dump(report, args.pretty))
        outs.append(args.output)
        return None, [args.input], outs
    return report, [args.input], outs


def _image_paths(args):
    paths = list(args.images or [])
    if args.image_dir:
        try:
            names = sorted(os.listdir(args.image_dir))
        except OSError as exc:
            raise IoFailure(f"{args.image_dir}: {exc}") from exc
        paths += [os.path.join(args.image_dir, n) for n in names
                  if n.lower().endswith((".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"))]
    if not paths:
        raise InputError("no images given (use --images or --image-dir)")
    return paths


def _features_for(path):
    from .curation import extract_visual_features, load_image

    return extract_visual_features(load_image(path))


def cmd_filter_features(args):
    from .curation import features_csv, semantic_similarities
    from .embed import read_embedding_file

    paths = _image_paths(args)
    feats = _pool_map(_features_for, paths, args.jobs)
    ids = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    sems = [None] * len(paths)
    inputs = list(paths)
    if args.image_embeddings or args.prototype_embeddings:
        if not (args.image_embeddings and args.prototype_embeddings):
            raise InputError("--image-embeddings and --prototype-embeddings go together")
        img = {v.id: v.values for v in read_embedding_file(args.image_embeddings)}
        protos = read_embedding_file(args.prototype_embeddings)
        pos = [v.values for v in protos if v.id.startswith("pos:")]
        neg = [v.values for v in protos if v.id.startswith("neg:")]
        for i, item_id in enumerate(ids):
            if item_id not in img:
                raise InputError(f"no image embedding for {item_id!r}")
            sems[i] = semantic_similarities(img[item_id], pos, neg)
        inputs += [args.image_embeddings, args.prototype_embeddings]
    text = features_csv(zip(ids, feats, sems))
    if args.output:
        _write_text(args.output, text)
        return {"images": len(ids)}, inputs, [args.output]
    sys.stdout.write(text)
    return None, inputs, []


def _read_labels(path):
    labels = {}
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        parts = [p.strip() for p in line.replace("\t", ",").split(",")]
        if not line.strip() or (lineno == 1 and parts[0] == "id"):
            continue
        if len(parts) != 2 or parts[1] not in ("0", "1", "keep", "drop"):
            raise InputError(f"{path} line {lineno}: expected id,label with label 0/1/keep/drop")
        labels[parts[0]] = 1 if parts[1] in ("1", "keep") else 0
    return labels


def cmd_filter_decide(args):
    import numpy as np

    from .curation import (
        VISUAL_COLUMNS, CoarseRules, LogisticModel, VisualFeatures, apply_coarse_rules,
        fit_logistic, fuse_decision, predict_retention, read_features_csv,
    )

    ids, X = read_features_csv(_read_text(args.features))
    inputs, outs = [args.features], []
    if args.labels:
        labels = _read_labels(args.labels)
        rows = [i for i, item in enumerate(ids) if item in labels]
        model = fit_logistic(X[rows], [labels[ids[i]] for i in rows],
                             iterations=args.iterations, seed=args.seed)
        inputs.append(args.labels)
        if args.model_out:
            _write_text(args.model_out, _dump(model.to_dict(), False))
            outs.append(args.model_out)
    elif args.model:
        from ._jsonio import loads_strict

        try:
            model = LogisticModel.from_dict(loads_strict(_read_text(args.model)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"{args.model}: bad model file ({exc})") from None
        inputs.append(args.model)
    else:
        raise InputError("need --labels (to fit) or --model")
    verdicts = {}
    if args.verdicts:
        for obj in _jsonl_lines(args.verdicts):
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise InputError("verdict lines must be objects with id and text")
            verdicts[obj["id"]] = obj["text"]
        inputs.append(args.verdicts)
    rules = CoarseRules(args.min_edge_density, args.min_entropy, args.fg_min, args.fg_max,
                        args.min_side)
    p = np.atleast_1d(predict_retention(model, X))
    lines = []
    for i, item in enumerate(ids):
        vf = VisualFeatures(*[int(v) if c in ("width_px", "height_px", "connected_components")
                              else float(v) for c, v in zip(VISUAL_COLUMNS, X[i])])
        d = fuse_decision(item, float(p[i]), args.accept, args.reject, verdicts.get(item),
                          apply_coarse_rules(vf, rules))
        lines.append(d.to_json())
    outs += _emit_lines(args, lines)
    kept = sum(1 for line in lines if '"final":"keep"' in line)
    return ({"items": len(ids), "kept": kept} if outs else None), inputs, outs


def _embedding_items(path):
    """(id, kind, graph) triples from a KG or variant JSONL file."""
    from .kg import graph_from_dict
    from .variants import VariantRecord, prepare_graph

    items = []
    for obj in _jsonl_lines(path):
        if isinstance(obj, dict) and "variant" in obj and "source_diagram_id" in obj:
            r = VariantRecord.from_dict(obj)
            items.append((f"{r.source_diagram_id}.{r.variant}", "sketch", r.graph))
        else:
            g = prepare_graph(graph_from_dict(obj))
            items.append((g.diagram_id, "diagram", g))
    return items


def cmd_embed_hash(args):
    from .embed import embed_feature_hash, write_embedding_file

    vecs = [embed_feature_hash(g, args.dim, item_id) for item_id, _, g in _embedding_items(args.input)]
    n = write_embedding_file(vecs, args.output, dim=args.dim)
    return {"vectors": n, "dim": args.dim}, [args.input], [args.output]


def cmd_embed_remote(args):
    from .embed import RemoteEmbeddingProvider, endpoint_from_env, write_embedding_file

    endpoint = endpoint_from_env(args.embed_endpoint)
    if not endpoint:
        raise InputError("no embedding endpoint (--embed-endpoint or DRAG_EMBED_ENDPOINT)")
    provider = RemoteEmbeddingProvider(endpoint, args.embed_timeout_ms, args.embed_retries,
                                       _api_key())
    items = _embedding_items(args.input)

    def one(item):
        item_id, kind, g = item
        return provider.embed(item_id, args.kind or kind, g)

    vecs = _pool_map(one, items, args.jobs, processes=False)
    n = write_embedding_file(vecs, args.output)
    return {"vectors": n, "dim": provider.dim}, [args.input], [args.output]


def cmd_train(args):
    from .align import AlignmentDataset, TrainConfig, save_head, train_projection
    from .degradation import VARIANT_NAMES
    from .embed import read_embedding_file

    sketches = {}
    for v in read_embedding_file(args.sketches):
        src, _, variant = v.id.rpartition(".")
        if not src or variant not in VARIANT_NAMES:
            raise InputError(f"sketch id {v.id!r} is not '<diagram>.<variant>'")
        sketches.setdefault(src, []).append((VARIANT_NAMES.index(variant), v.values))
    diagrams = {v.id: v.values for v in read_embedding_file(args.diagrams)}
    dataset = AlignmentDataset({d: [x for _, x in sorted(vs, key=lambda t: t[0])]
                                for d, vs in sketches.items()}, diagrams)
    cfg = TrainConfig(args.temperature, args.epochs, args.lr, args.warmup, args.accum,
                      args.targets, args.negatives, not args.no_in_batch, args.seed)
    result = train_projection(dataset, cfg)
    save_head(result.head, args.output)
    outs = [args.output]
    if args.log:
        _write_text(args.log, result.log_jsonl())
        outs.append(args.log)
    losses = [r["loss"] for r in result.log]
    return ({"micro_batches": len(losses), "first_loss": losses[0] if losses else None,
             "last_loss": losses[-1] if losses else None},
            [args.sketches, args.diagrams], outs)


def cmd_index_build(args):
    from .align import load_head
    from .embed import read_embedding_file
    from .index import build_index, save_index

    head = load_head(args.head) if args.head else None
    vecs = read_embedding_file(args.embeddings)
    idx = build_index(vecs, head, dim=None if vecs or head else 1)
    save_index(idx, args.output)
    inputs = [args.embeddings] + ([args.head] if args.head else [])
    return {"entries": len(idx), "dim": idx.dim}, inputs, [args.output]


def cmd_index_query(args):
    from .align import load_head
    from .embed import EmbeddingVector, read_embedding_file
    from .index import load_index, query_top_k

    idx = load_index(args.idx)
    head = load_head(args.head) if args.head else None
    inputs = [args.idx] + ([args.head] if args.head else [])
    if os.path.isfile(args.query):
        queries = read_embedding_file(args.query)
        inputs.append(args.query)
    else:
        pool = {}
        if args.embeddings:
            pool = {v.id: v for v in read_embedding_file(args.embeddings)}
            inputs.append(args.embeddings)
        if args.query in pool:
            queries = [pool[args.query]]
            head_for_query = head
        elif args.query in idx.ids:
            queries = [EmbeddingVector(args.query, idx.matrix[idx.ids.index(args.query)])]
            head_for_query = None  # stored entries are already projected
        else:
            raise InputError(f"query {args.query!r} is neither a file nor a known id")
        results = [query_top_k(idx, q, args.k, head_for_query) for q in queries]
        return _format_results(args, results), inputs, _maybe_outputs(args)
    results = [query_top_k(idx, q, args.k, head) for q in queries]
    return _format_results(args, results), inputs, _maybe_outputs(args)


def _maybe_outputs(args):
    return [args.output] if args.output else []


def _format_results(args, results):
    if args.format == "tsv":
        text = "".join(r.to_tsv() for r in results)
    else:
        text = "".join(r.to_json() + "\n" for r in results)
    if args.output:
        _write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return None


def cmd_prompts_assemble(args):
    from .orchestrate import (
        AgentFlags, GenerationClient, TemplateStore, assemble_generation_request, build_bundle,
    )

    refs = [r for r in (args.refs or "").split(",") if r]
    if args.refs_file:
        refs += [line.strip() for line in _read_text(args.refs_file).splitlines() if line.strip()]
    refs = refs[: args.refs_topk]
    templates = TemplateStore(args.template_dir)
    flags = AgentFlags(planning=not args.no_plan_agent, guidance=not args.no_style_agent)
    request = assemble_generation_request(build_bundle(args.sketch, refs, flags, templates),
                                          args.model)
    result = {"request": request.payload()}
    if args.submit:
        endpoint = args.gen_endpoint or os.environ.get("DRAG_GEN_ENDPOINT")
        if not endpoint:
            raise InputError("no generation endpoint (--gen-endpoint or DRAG_GEN_ENDPOINT)")
        result["response"] = GenerationClient(endpoint, api_key=_api_key()).submit(request)
    if args.output:
        _write_text(args.output, _dump(result, args.pretty))
        return None, [], [args.output]
    return result, [], []


def _read_rankings(path):
    rankings = {}
    for obj in _jsonl_lines(path):
        if not isinstance(obj, dict) or "query_id" not in obj:
            raise InputError(f"{path}: each line needs a query_id")
        if "results" in obj:
            ranked = [r["id"] if isinstance(r, dict) else r for r in obj["results"]]
        elif "ranking" in obj:
            ranked = obj["ranking"]
        else:
            raise InputError(f"{path}: line for {obj['query_id']!r} has no results/ranking")
        rankings[obj["query_id"]] = ranked
    return rankings


def _read_ground_truth(path):
    text = _read_text(path)
    gt = {}
    if text.lstrip().startswith("{"):
        for obj in _jsonl_lines(path):
            gt[obj["query_id"]] = obj["id"]
        return gt
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.replace("\t", ",").split(",")]
        if len(parts) != 2:
            raise InputError(f"{path} line {lineno}: expected query_id,id")
        if lineno == 1 and parts == ["query_id", "id"]:
            continue
        gt[parts[0]] = parts[1]
    return gt


def cmd_eval_retrieval(args):
    from .evaluation import compute_retrieval_metrics

    report = compute_retrieval_metrics(_read_rankings(args.rankings),
                                       _read_ground_truth(args.gt)).to_dict()
    if args.pretty:
        sys.stdout.write("".join(f"{k:>9}  {report[k]:.4f}\n"
                                 for k in ("MRR", "Accuracy", "Recall@1", "Recall@5", "F1")))
        report = None
    return _finish_report(args, report, [args.rankings, args.gt])


def _finish_report(args, report, inputs):
    if args.output and report is not None:
        _write_text(args.output, _dump(report, False))
        return None, inputs, [args.output]
    return report, inputs, []


def cmd_eval_judge(args):
    from .evaluation import aggregate_judge_verdicts, parse_judge_verdict

    verdicts, errors = [], []
    for lineno, line in enumerate(_read_text(args.verdicts).split("\n"), 1):
        if not line.strip():
            continue
        try:
            verdicts.append(parse_judge_verdict(line))
        except InputError as exc:
            if not args.skip_invalid:
                raise InputError(f"{args.verdicts} line {lineno}: {exc}") from None
            errors.append({"line": lineno, "error": str(exc)})
    report = aggregate_judge_verdicts(verdicts).to_dict()
    report["invalid"] = errors
    return _finish_report(args, report, [args.verdicts])


def cmd_pipeline_e2e(args):
    from .align import TrainConfig
    from .pipeline import run_e2e

    cfg = TrainConfig(epochs=args.epochs, peak_lr=args.lr)
    report, result = run_e2e(args.n, args.dim, args.seed, args.holdout, cfg)
    outs = []
    if args.log:
        _write_text(args.log, result.log_jsonl())
        outs.append(args.log)
    if args.output:
        _write_text(args.output, _dump(report, True))
        outs.insert(0, args.output)
        return {"untrained_recall@1": report["untrained"]["Recall@1"],
                "trained_recall@1": report["trained"]["Recall@1"]}, [], outs
    return report, [], outs


# ---------------------------------------------------------------- parser

def _common(p, output=True, output_required=False):
    p.add_argument("--seed", type=int, default=0, help="global seed (all randomness derives from it)")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--jobs", type=int, default=1, help="worker count for per-record stages")
    p.add_argument("--pretty", action="store_true", help="human-readable output")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    if output:
        p.add_argument("-o", "--output", required=output_required)


def _embed_flags(p):
    p.add_argument("--embed-endpoint")
    p.add_argument("--embed-timeout-ms", type=int, default=10000)
    p.add_argument("--embed-retries", type=int, default=2)


def build_parser():
    p = _Parser(prog="sketchkg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sketchkg {__version__}")
    groups = p.add_subparsers(dest="group", metavar="COMMAND", parser_class=_Parser)
    groups.required = True

    def group(name, help_text):
        g = groups.add_parser(name, help=help_text)
        sub = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
        sub.required = True
        return sub

    def leaf(sub, name, func, help_text, **kw):
        lp = sub.add_parser(name, help=help_text)
        _common(lp, **kw)
        lp.set_defaults(func=func, leaf=lp)
        return lp

    kg = group("kg", "topology graph records")
    lp = leaf(kg, "normalize", cmd_kg_normalize, "normalize KG JSONL")
    lp.add_argument("--in", dest="input", required=True)
    lp = leaf(kg, "infer-layout", cmd_kg_infer, "normalize and fill layout fields")
    lp.add_argument("--in", dest="input", required=True)

    var = group("variants", "sketch variants")
    lp = leaf(var, "generate", cmd_variants_generate, "five variants per graph")
    lp.add_argument("--in", dest="input", required=True)
    lp.add_argument("--jitter", type=float, default=0.05)
    lp.add_argument("--svg-dir")
    lp.add_argument("--canvas", type=int, default=1000)
    lp = leaf(var, "render", cmd_variants_render, "SVG per record", output=False)
    lp.add_argument("--in", dest="input", required=True)
    lp.add_argument("--out-dir", required=True)
    lp.add_argument("--canvas", type=int, default=1000)

    loss = group("loss", "degradation statistics")
    lp = leaf(loss, "aggregate", cmd_loss_aggregate, "mean losses per variant")
    lp.add_argument("--in", dest="input", required=True)
    lp.add_argument("--csv")

    flt = group("filter", "diagram curation")
    lp = leaf(flt, "features", cmd_filter_features, "visual (+ semantic) feature CSV")
    lp.add_argument("--images", nargs="*")
    lp.add_argument("--image-dir")
    lp.add_argument("--image-embeddings")
    lp.add_argument("--prototype-embeddings", help="ids prefixed pos: / neg:")
    lp = leaf(flt, "decide", cmd_filter_decide, "retention decisions JSONL")
    lp.add_argument("--features", required=True)
    lp.add_argument("--labels")
    lp.add_argument("--model")
    lp.add_argument("--model-out")
    lp.add_argument("--verdicts", help="JSONL of {id, text} verifier replies")
    lp.add_argument("--iterations", type=int, default=500)
    lp.add_argument("--accept", type=float, default=0.8)
    lp.add_argument("--reject", type=float, default=0.2)
    lp.add_argument("--min-edge-density", type=float, default=0.005)
    lp.add_argument("--min-entropy", type=float, default=0.5)
    lp.add_argument("--fg-min", type=float, default=0.002)
    lp.add_argument("--fg-max", type=float, default=0.98)
    lp.add_argument("--min-side", type=int, default=128)

    emb = group("embed", "base embeddings")
    lp = leaf(emb, "hash", cmd_embed_hash, "feature-hash embeddings", output_required=True)
    lp.add_argument("--in", dest="input", required=True)
    lp.add_argument("--dim", type=int, default=256)
    lp = leaf(emb, "remote", cmd_embed_remote, "embeddings from a service", output_required=True)
    lp.add_argument("--in", dest="input", required=True)
    lp.add_argument("--kind", choices=["sketch", "diagram"])
    _embed_flags(lp)

    tp = groups.add_parser("train", help="train the projection head")
    _common(tp, output_required=True)
    tp.set_defaults(func=cmd_train, leaf=tp, action=None)
    tp.add_argument("--sketches", required=True, help="embedding store with <diagram>.<variant> ids")
    tp.add_argument("--diagrams", required=True)
    tp.add_argument("--log")
    tp.add_argument("--temperature", type=float, default=0.05)
    tp.add_argument("--epochs", type=int, default=50)
    tp.add_argument("--lr", type=float, default=1e-5)
    tp.add_argument("--warmup", type=float, default=0.05)
    tp.add_argument("--accum", type=int, default=3)
    tp.add_argument("--targets", type=int, default=20)
    tp.add_argument("--negatives", type=int, default=2)
    tp.add_argument("--no-in-batch", action="store_true")

    idx = group("index", "retrieval index")
    lp = leaf(idx, "build", cmd_index_build, "build and save an index", output_required=True)
    lp.add_argument("--embeddings", required=True)
    lp.add_argument("--head")
    lp = leaf(idx, "query", cmd_index_query, "top-k query")
    lp.add_argument("--idx", required=True)
    lp.add_argument("--query", required=True, help="embedding store file or an id")
    lp.add_argument("--embeddings", help="store to resolve an id query against")
    lp.add_argument("--head")
    lp.add_argument("-k", type=int, default=3)
    lp.add_argument("--format", choices=["json", "tsv"], default="json")

    pr = group("prompts", "generation prompts")
    lp = leaf(pr, "assemble", cmd_prompts_assemble, "build a generation request")
    lp.add_argument("--sketch", required=True)
    lp.add_argument("--refs", help="comma-separated reference refs in rank order")
    lp.add_argument("--refs-file")
    lp.add_argument("--refs-topk", type=int, default=3)
    lp.add_argument("--model", default="image-generator")
    lp.add_argument("--template-dir")
    lp.add_argument("--no-plan-agent", action="store_true")
    lp.add_argument("--no-style-agent", action="store_true")
    lp.add_argument("--gen-endpoint")
    lp.add_argument("--submit", action="store_true")

    ev = group("eval", "evaluation")
    lp = leaf(ev, "retrieval", cmd_eval_retrieval, "MRR / recall report")
    lp.add_argument("--rankings", required=True)
    lp.add_argument("--gt", required=True)
    lp = leaf(ev, "judge", cmd_eval_judge, "aggregate judge verdicts")
    lp.add_argument("--verdicts", required=True)
    lp.add_argument("--skip-invalid", action="store_true")

    pl = group("pipeline", "end-to-end runs")
    lp = leaf(pl, "e2e", cmd_pipeline_e2e, "synthetic desk-scale retrieval experiment")
    lp.add_argument("--n", type=int, default=100)
    lp.add_argument("--dim", type=int, default=256)
    lp.add_argument("--holdout", type=float, default=0.2)
    lp.add_argument("--epochs", type=int, default=50)
    lp.add_argument("--lr", type=float, default=1e-5)
    lp.add_argument("--log")
    return p


def _config_snapshot(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL}


def write_manifest(args, argv, inputs, outputs, started, wall):
    anchor = outputs[0]
    path = (os.path.join(anchor, "run.manifest.json") if os.path.isdir(anchor)
            else f"{anchor}.manifest.json")
    manifest = {
        "argv": list(argv),
        "command": " ".join(x for x in (args.group, args.action) if x),
        "config": _config_snapshot(args),
        "config_file": args.config,
        "seed": args.seed,
        "inputs": _digests([p for p in inputs if p]),
        "outputs": _digests(outputs),
        "version": __version__,
        "started_utc": started,
        "wall_clock_s": wall,
    }
    _write_text(path, json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return path


def run_cli(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(args.leaf, read_config(args.config))
            args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        t0 = time.perf_counter()
        result, inputs, outputs = args.func(args)
        wall = time.perf_counter() - t0
        if outputs:
            write_manifest(args, argv, inputs, outputs, started, wall)
        if result is not None:
            sys.stdout.write(_dump(result, args.pretty))
        return 0
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except UnknownSubcommand as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        logger.debug("internal error", exc_info=True)
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
