"""``stableaml`` command line: ingest, featurize, graph-stats, synth, train, evaluate, explain, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/training error.
Failures print exactly one line to stderr: ``error <code>: <detail>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import AmlError, DataError, NotApplicable, NumericError

MODEL_FILE = "model.saml-model"
SPLIT_FILE = "split.json"


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command, args):
        self.command = command
        self.config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.seed = getattr(args, "seed", None)
        self.started = time.time()

    def add_input(self, path):
        if path and os.path.isfile(path):
            self.inputs[os.path.abspath(path)] = _digest(path)

    def as_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "seed": self.seed,
            "tool_version": __version__,
            "outputs": sorted(self.outputs),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.started)),
            "duration_seconds": round(time.time() - self.started, 3),
        }

    def write(self, out_dir, extra=None):
        body = self.as_dict()
        if extra:
            body = {**extra, "run": body}
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")


def _out_path(manifest, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    manifest.outputs.append(name)
    return os.path.join(out_dir, name)


def _write_text(manifest, out_dir, name, text):
    with open(_out_path(manifest, out_dir, name), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _seed(value, fallback):
    if value is not None:
        return int(value)
    env = os.environ.get("STABLEAML_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"STABLEAML_SEED must be an integer, got {env!r}") from None
    return fallback


def _model_path(path):
    return os.path.join(path, MODEL_FILE) if os.path.isdir(path) else path


def _load_inputs(args, manifest):
    """(log, registry, metadata, labels) from --in DIR or explicit file flags."""
    from .ingest import LabelRegistry, MetadataTable, parse_label_registry, parse_metadata, parse_transfers, parse_wallet_labels

    def pick(flag, name):
        explicit = getattr(args, flag, None)
        if explicit:
            return explicit
        if getattr(args, "input_dir", None):
            p = os.path.join(args.input_dir, name)
            return p if os.path.exists(p) else None
        return None

    transfers = pick("transfers", "transfers.csv")
    if not transfers:
        raise UsageError("need --in DIR or --transfers FILE")
    reg_p, meta_p, lab_p = pick("registry", "registry.csv"), pick("metadata", "metadata.csv"), pick("labels", "labels.csv")
    for p in (transfers, reg_p, meta_p, lab_p):
        manifest.add_input(p)
    log = parse_transfers(transfers, error_budget=getattr(args, "error_budget", 0) or 0)
    registry = parse_label_registry(reg_p) if reg_p else LabelRegistry()
    metadata = parse_metadata(meta_p) if meta_p else MetadataTable()
    labels = parse_wallet_labels(lab_p) if lab_p else {}
    return log, registry, metadata, labels


def _fanout(text):
    if text is None or str(text).lower() in ("none", "off", "0"):
        return None
    return int(text)


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, manifest):
    from .ingest import format_transfers, validate_log, write_label_registry, write_metadata, write_wallet_labels

    log, registry, metadata, labels = _load_inputs(args, manifest)
    report = validate_log(log)
    if args.out:
        _write_text(manifest, args.out, "transfers.csv", format_transfers(log.events))
        for name, writer, obj, present in (("registry.csv", write_label_registry, registry, args.registry),
                                           ("metadata.csv", write_metadata, metadata, args.metadata),
                                           ("labels.csv", write_wallet_labels, labels, args.labels)):
            if present:
                with open(_out_path(manifest, args.out, name), "w", encoding="utf-8", newline="") as fh:
                    writer(obj, fh)
        _write_text(manifest, args.out, "validation.json", json.dumps(report.as_dict(), indent=1, sort_keys=True) + "\n")
        manifest.write(args.out)
    print(json.dumps(report.as_dict(), sort_keys=True))
    return 0


def cmd_featurize(args, manifest):
    from .features import FeatureConfig, HopQueryConfig, extract_all, features_to_csv, write_catalog
    from .graphstore import build_graph

    log, registry, metadata, labels = _load_inputs(args, manifest)
    cfg = FeatureConfig(hop=HopQueryConfig(fanout_cap=_fanout(args.fanout_cap)),
                        flagged_from_labels=args.flagged_from_labels)
    g = build_graph(log)
    fm = extract_all(log, g, registry, metadata, cfg, labels=labels)
    _write_text(manifest, args.out, "features.csv", features_to_csv(fm))
    with open(_out_path(manifest, args.out, "catalog.json"), "w", encoding="utf-8") as fh:
        write_catalog(fh)
    _write_text(manifest, args.out, "edges.csv", g.dumps())
    manifest.write(args.out)
    print(f"featurized {len(fm.addresses)} wallets x {fm.values.shape[1]} features -> {args.out}")
    return 0


def cmd_graph_stats(args, manifest):
    from .graphstore import build_graph, density

    log, registry, _, _ = _load_inputs(args, manifest)
    g = build_graph(log)
    deg = np.array([len(g.both_adj[n]) for n in g.nodes]) if len(g) else np.zeros(0)
    stats = {
        "nodes": len(g),
        "edges": len(g.edges),
        "self_loops": sum(1 for a, b in g.edges if a == b),
        "density": density(g) if len(g) >= 2 else None,
        "mean_degree": float(deg.mean()) if deg.size else 0.0,
        "max_degree": int(deg.max()) if deg.size else 0,
        "isolated": int((deg == 0).sum()),
        "service_nodes": sum(1 for n in g.nodes if registry.is_service(n)),
    }
    if args.out:
        _write_text(manifest, args.out, "graph_stats.json", json.dumps(stats, indent=1, sort_keys=True) + "\n")
        manifest.write(args.out)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_synth(args, manifest):
    from dataclasses import replace

    from .synth import SynthConfig, corpus_stats, dense_preset, generate_corpus

    seed = _seed(args.seed, 7)
    manifest.seed = seed
    base = dense_preset(seed) if args.preset == "dense" else SynthConfig(seed=seed)
    overrides = {"n_wallets": args.wallets, "dormant_rate": args.dormant_rate, "noise_rate": args.noise_rate,
                 "peer_homophily": args.homophily, "community_rate": args.community_rate,
                 "span_days": args.span_days, "n_mixers": args.mixers}
    cfg = replace(base, **{k: v for k, v in overrides.items() if v is not None})
    corpus = generate_corpus(cfg)
    files = corpus.files()
    corpus_manifest = json.loads(files.pop("manifest.json"))
    for name, text in sorted(files.items()):
        _write_text(manifest, args.out, name, text)
    manifest.write(args.out, extra=corpus_manifest)
    stats = corpus_stats(corpus)
    print(json.dumps({"class_counts": stats["class_counts"], "events": stats["events"],
                      "density": stats["density"], "digest": corpus.digest()}, sort_keys=True))
    return 0


def _dataset(features_path, labels_path, manifest=None):
    from .features import read_features
    from .ingest import parse_wallet_labels
    from .learners import Dataset

    if manifest is not None:
        manifest.add_input(features_path)
        manifest.add_input(labels_path)
    fm = read_features(features_path)
    labels = parse_wallet_labels(labels_path)
    missing = [a for a in labels if a not in fm.addresses]
    if missing:
        from .errors import MissingFeatures

        raise MissingFeatures(f"labeled wallet {missing[0]} has no feature row")
    addrs = sorted(labels)
    return fm, Dataset(fm.rows(addrs), np.array([labels[a] for a in addrs], dtype=np.int64), addrs)


def _graph_for(features_path, explicit=None):
    from .graphstore import read_edges

    path = explicit or os.path.join(os.path.dirname(os.path.abspath(features_path)), "edges.csv")
    if not os.path.exists(path):
        raise UsageError(f"the sage model needs a graph; {path} not found (pass --graph)")
    return path, read_edges(path)


def _full_graph(g, fm):
    """Graph over every featurized wallet (isolated rows included)."""
    from .graphstore import TransactionGraph

    return TransactionGraph(set(g.nodes) | set(fm.addresses), g.edges)


def cmd_train(args, manifest):
    from .evaluation import SplitSpec, stratified_split
    from .learners import TrainConfig, grid_search_cv, save_model, train

    seed = _seed(args.seed, 0)
    manifest.seed = seed
    fm, d = _dataset(args.features, args.labels, manifest)
    spec = SplitSpec(args.split_ratio, args.split_seed, not args.no_stratify)
    tr, te = stratified_split(d.y, spec)
    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = _parse_value(v.strip())
    if "hidden" in params and isinstance(params["hidden"], list):
        params["hidden"] = tuple(params["hidden"])
    split = {"features": os.path.abspath(args.features), "labels": os.path.abspath(args.labels),
             "ratio": spec.ratio, "seed": spec.seed, "stratified": spec.stratified,
             "train": [d.addresses[i] for i in tr], "test": [d.addresses[i] for i in te]}
    if args.model == "sage":
        from .gnn import train_sage

        gpath, g = _graph_for(args.features, args.graph)
        manifest.add_input(gpath)
        g = _full_graph(g, fm)
        index = {n: i for i, n in enumerate(g.nodes)}
        y = np.zeros(len(g.nodes), dtype=np.int64)
        mask = np.zeros(len(g.nodes), dtype=bool)
        for i in tr:
            y[index[d.addresses[i]]] = d.y[i]
            mask[index[d.addresses[i]]] = True
        model = train_sage(g, fm, y, mask, params, seed, K=d.K)
        split["graph"] = gpath
    elif args.grid:
        manifest.add_input(args.grid)
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        result = grid_search_cv(d.subset(tr), args.model, grid, k=args.cv_folds, seed=seed)
        model = result.model
        _write_text(manifest, args.out, "cv.json", json.dumps(result.table, indent=1, sort_keys=True) + "\n")
    else:
        model = train(d.subset(tr), TrainConfig(args.model, params, seed))
    with open(_out_path(manifest, args.out, MODEL_FILE), "wb") as fh:
        save_model(model, fh)
    _write_text(manifest, args.out, SPLIT_FILE, json.dumps(split, indent=1, sort_keys=True) + "\n")
    manifest.write(args.out)
    print(f"trained {args.model} on {len(tr)} wallets (held out {len(te)}) -> {args.out}")
    return 0


class _Loaded:
    """A trained model plus the data needed to score it on its held-out rows."""

    def __init__(self, model_arg, features=None, labels=None, manifest=None):
        from .learners import load_model

        path = _model_path(model_arg)
        if manifest is not None:
            manifest.add_input(path)
        self.model = load_model(path)
        split_path = os.path.join(os.path.dirname(os.path.abspath(path)), SPLIT_FILE)
        self.split = {}
        if os.path.exists(split_path):
            with open(split_path, encoding="utf-8") as fh:
                self.split = json.load(fh)
        features = features or self.split.get("features")
        labels = labels or self.split.get("labels")
        if not features or not labels:
            raise UsageError("cannot locate features/labels; pass --features and --labels")
        self.fm, self.d = _dataset(features, labels, manifest)
        pos = {a: i for i, a in enumerate(self.d.addresses)}
        if self.split.get("test"):
            self.test = np.array(sorted(pos[a] for a in self.split["test"] if a in pos), dtype=np.int64)
        else:
            trained = set(self.model.provenance.get("train_ids", ()))
            self.test = np.array([i for i, a in enumerate(self.d.addresses) if a not in trained], dtype=np.int64)
        self.scorer = self.model
        if self.model.kind == "sage":
            from .gnn import NodePredictor

            _, g = _graph_for(features, self.split.get("graph"))
            g = _full_graph(g, self.fm)
            self.scorer = NodePredictor(self.model, g, self.fm, [self.d.addresses[i] for i in self.test])

    def report(self, binary=False):
        from .evaluation import BINARY_NAMES, CLASS_NAMES, binary_collapse, collapse_probs, config_hash, metrics_report
        from .errors import LeakageError

        trained = set(self.model.provenance.get("train_ids", ()))
        leaked = [self.d.addresses[i] for i in self.test if self.d.addresses[i] in trained]
        if leaked:
            raise LeakageError(f"{len(leaked)} test rows were part of the training set (e.g. {leaked[0]})")
        X, y = self.d.X[self.test], self.d.y[self.test]
        probs = self.scorer.predict_proba(X)
        info = {"kind": self.model.kind, "config_hash": config_hash(self.model)}
        rep = metrics_report(y, probs, self.d.K, CLASS_NAMES, info)
        if binary:
            rep.binary = metrics_report(binary_collapse(y), collapse_probs(probs), 2, BINARY_NAMES, info)
        return rep


def cmd_evaluate(args, manifest):
    from .evaluation import render_table

    loaded = _Loaded(args.model, args.features, args.labels, manifest)
    rep = loaded.report(args.binary)
    text = render_table(rep, f"{loaded.model.kind} on {len(loaded.test)} held-out wallets")
    if args.out:
        _write_text(manifest, args.out, "report.json", rep.to_json())
        _write_text(manifest, args.out, "report.txt", text + "\n")
        manifest.write(args.out)
    print(text)
    return 0


def cmd_explain(args, manifest):
    from .explain import (
        ImportanceTable,
        builtin_importance,
        class_signature_matrix,
        consensus_rank,
        permutation_importance,
        shap_importance,
        shap_sample,
        write_signatures,
    )
    from .features import FEATURE_NAMES

    seed = _seed(args.seed, 0)
    manifest.seed = seed
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - {"builtin", "permutation", "shap"}
    if unknown:
        raise UsageError(f"unknown importance method(s): {sorted(unknown)}")
    columns = {}
    shap_models, shap_rows = [], None
    for mi, model_arg in enumerate(args.model):
        lo = _Loaded(model_arg, args.features, args.labels, manifest)
        kind = lo.model.kind
        tag = kind if len(args.model) == 1 else f"{kind}{mi}"
        X, y = lo.d.X[lo.test], lo.d.y[lo.test]
        for method in methods:
            try:
                if method == "builtin":
                    scores = builtin_importance(lo.model)
                elif method == "permutation":
                    scores = permutation_importance(lo.scorer, X, y, args.repeats, seed, K=lo.d.K)
                else:
                    rows = shap_sample(len(X), args.shap_sample, seed)
                    scores = shap_importance(lo.model, X[rows])
                    shap_models.append(lo.model)
                    shap_rows = (X[rows], y[rows])
            except NotApplicable:
                continue
            columns[f"{tag}_{method}"] = scores
    if not columns:
        raise UsageError("no applicable (model, method) pair")
    table = consensus_rank(columns, FEATURE_NAMES)
    if args.consensus:
        path = _out_path(manifest, args.out, "importance.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            table.write_csv(fh)
    else:
        raw = ImportanceTable(FEATURE_NAMES, table.columns)
        lines = ["feature," + ",".join(raw.columns)]
        for j, f in enumerate(FEATURE_NAMES):
            lines.append(",".join([f, *(repr(float(raw.columns[c][j])) for c in raw.columns)]))
        _write_text(manifest, args.out, "importance.csv", "\n".join(lines) + "\n")
    if shap_models:
        sig = class_signature_matrix(shap_models, *shap_rows, K=3)
        with open(_out_path(manifest, args.out, "signatures.csv"), "w", encoding="utf-8", newline="") as fh:
            write_signatures(sig, fh)
    manifest.write(args.out)
    if args.consensus:
        print(f"{'rank':>4}  {'feature':<32} avg_rank")
        for rank, name, avg in table.top(15):
            print(f"{rank:>4}  {name:<32} {avg:.2f}")
    print(f"wrote {len(columns)} importance column(s) -> {args.out}")
    return 0


def cmd_report(args, manifest):
    from .evaluation import render_table

    reports = []
    for model_arg in args.model:
        lo = _Loaded(model_arg, args.features, args.labels, manifest)
        reports.append(lo.report(args.binary))
    lines = [f"{'model':<8} {'AUROC':>7} {'Acc':>7} {'F1':>7} {'Recall':>7}"]
    for rep in reports:
        auc = f"{rep.macro_auroc:.4f}" if rep.macro_auroc is not None else "n/a"
        lines.append(f"{rep.model['kind']:<8} {auc:>7} {rep.accuracy:>7.4f} {rep.macro_f1:>7.4f} {rep.macro_recall:>7.4f}")
    if args.binary:
        lines.append("")
        lines.append("binary (normal vs suspicious)")
        for rep in reports:
            b = rep.binary
            lines.append(f"{rep.model['kind']:<8} {b.macro_auroc or 0:>7.4f} {b.accuracy:>7.4f} "
                         f"{b.macro_f1:>7.4f} {b.macro_recall:>7.4f}")
    detail = "\n\n".join(render_table(r, r.model["kind"]) for r in reports)
    text = "\n".join(lines) + "\n\n" + detail + "\n"
    if args.out:
        _write_text(manifest, args.out, "report.txt", text)
        _write_text(manifest, args.out, "report.json",
                    json.dumps([r.as_dict() for r in reports], indent=2, sort_keys=True) + "\n")
        manifest.write(args.out)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def _read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.lstrip("-").replace("-", "_")] = v
    return out


def build_parser():
    p = _Parser(prog="stableaml", description="Stablecoin wallet risk profiling and classification.")
    p.add_argument("--version", action="version", version=f"stableaml {__version__}")
    p.add_argument("--dump-model", metavar="PATH", help="print a human-readable listing of a model and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key=value file; command-line flags take precedence")
        sp.add_argument("--threads", type=int, default=None, help="bound internal parallelism")

    def data_inputs(sp, labels=False):
        sp.add_argument("--in", dest="input_dir", help="directory with transfers.csv (+ registry/metadata/labels)")
        sp.add_argument("--transfers")
        sp.add_argument("--registry")
        sp.add_argument("--metadata")
        sp.add_argument("--labels")
        sp.add_argument("--error-budget", type=int, default=0)

    sp = sub.add_parser("ingest", help="parse and validate a transfer log")
    common(sp)
    data_inputs(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("featurize", help="compute the 68-feature profile per wallet")
    common(sp)
    data_inputs(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--fanout-cap", default="200", help="neighbor cap per hop expansion, or 'none'")
    sp.add_argument("--flagged-from-labels", action="store_true",
                    help="also treat labeled suspicious wallets as flagged")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("graph-stats", help="summarize the aggregated transaction graph")
    common(sp)
    data_inputs(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_graph_stats)

    sp = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    common(sp)
    sp.add_argument("--wallets", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=("default", "dense"), default="default")
    sp.add_argument("--dormant-rate", type=float)
    sp.add_argument("--noise-rate", type=float)
    sp.add_argument("--homophily", type=float)
    sp.add_argument("--community-rate", type=float)
    sp.add_argument("--span-days", type=int)
    sp.add_argument("--mixers", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a classifier on the training split")
    common(sp)
    sp.add_argument("--model", required=True, choices=("logreg", "cart", "rf", "gbm", "mlp", "sage"))
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--param", action="append", help="hyperparameter override key=value (repeatable)")
    sp.add_argument("--grid", help="JSON object of value lists for cross-validated search")
    sp.add_argument("--cv-folds", type=int, default=5)
    sp.add_argument("--graph", help="edges.csv for the sage model (default: next to --features)")
    sp.add_argument("--split-ratio", type=float, default=0.8)
    sp.add_argument("--split-seed", type=int, default=42)
    sp.add_argument("--no-stratify", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a model on its held-out wallets")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--features")
    sp.add_argument("--labels")
    sp.add_argument("--binary", action="store_true", help="add the normal-vs-suspicious collapse")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain", help="feature importance and consensus ranking")
    common(sp)
    sp.add_argument("--model", required=True, action="append")
    sp.add_argument("--features")
    sp.add_argument("--labels")
    sp.add_argument("--methods", default="builtin,permutation,shap")
    sp.add_argument("--consensus", action="store_true")
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--shap-sample", type=int, default=3000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("report", help="side-by-side macro metrics for several models")
    common(sp)
    sp.add_argument("--model", required=True, action="append")
    sp.add_argument("--features")
    sp.add_argument("--labels")
    sp.add_argument("--binary", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def _apply_config(parser, argv):
    """Re-parse with config-file values installed as defaults of the chosen subcommand."""
    argv = list(sys.argv[1:] if argv is None else argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    cfg = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif a.startswith("--config="):
            cfg = a.split("=", 1)[1]
    if cfg is None or command is None:
        return parser.parse_args(argv)
    values = _read_config(cfg)
    sub = choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        if k not in known:
            raise UsageError(f"{cfg}: unknown key {k!r} for {command}")
        action = known[k]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            defaults[k] = [s.strip() for s in v.split(",") if s.strip()]
        else:
            defaults[k] = action.type(v) if action.type else v
    sub.set_defaults(**defaults)
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False
    args = parser.parse_args(argv)
    args.config = os.path.abspath(args.config)
    return args


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.dump_model:
            from .learners import dump_model, load_model

            sys.stdout.write(dump_model(load_model(_model_path(args.dump_model))))
            return 0
        if not args.command:
            parser.print_help()
            return 1
        if args.threads:
            import numba

            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        manifest = RunManifest(args.command, args)
        if getattr(args, "config", None):
            manifest.add_input(args.config)
        return args.func(args, manifest)
    except UsageError as exc:
        print(f"error usage: {exc}", file=sys.stderr)
        return 1
    except NotApplicable as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 3
    except (DataError, AmlError) as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        detail = str(exc).replace("\n", " ")
        print(f"error data_error: {type(exc).__name__}: {detail}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
