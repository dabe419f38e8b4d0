"""Command-line front end.

Exit codes: 0 success, 1 input or validation error, 2 numeric or training
failure. Every run appends one JSON record to ``manifest.jsonl`` in its
output directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from graphicl import __version__
from graphicl.bundle import load_bundle, save_bundle
from graphicl.embedder import in_context_embedding
from graphicl.errors import (
    ConfigError,
    GraphICLError,
    InputError,
    NumericError,
    StateError,
    TrainingError,
)
from graphicl.graphcore import (
    SIGN_RULES,
    CorpusSpec,
    DomainSpec,
    fewshot_corpus_spec,
    generate_corpus,
    graded_corpus_spec,
    read_graph,
    unify_graph,
    write_graph,
    write_matrix,
)
from graphicl.inference import MODES, InferenceConfig, SupportSet, in_context_predict
from graphicl.selftest import run_selftest
from graphicl.trainer import TrainConfig, evaluate, pretrain

log = logging.getLogger("graphicl")

GRAPH_SUFFIX = ".gia"
_TYPES = {"int": int, "float": float, "str": str, "bool": None}


class UsageError(GraphICLError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- config


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> dict:
    """Parse ``key:type = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, eq, value = line.partition("=")
        key, colon, kind = lhs.strip().partition(":")
        key, kind, value = key.strip(), kind.strip(), value.strip()
        if not eq or not colon or not key:
            raise ConfigError(f"config line {lineno}: expected 'key:type = value', got {raw.strip()!r}")
        if kind not in _TYPES:
            raise ConfigError(f"config line {lineno}: unknown type {kind!r} (use int, float, bool, str)")
        try:
            out[key] = _parse_bool(value) if kind == "bool" else _TYPES[kind](value)
        except ValueError:
            raise ConfigError(f"config line {lineno}: {value!r} is not a valid {kind}") from None
    return out


def _field_types(cls) -> dict:
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def resolve_config(overrides: dict) -> tuple:
    """Split typed overrides into (TrainConfig, InferenceConfig), checking names and types."""
    train_t, infer_t = _field_types(TrainConfig), _field_types(InferenceConfig)
    train, infer = {}, {}
    for key, value in overrides.items():
        target = train if key in train_t else infer if key in infer_t else None
        if target is None:
            raise ConfigError(f"unknown config key {key!r}")
        want = (train_t if target is train else infer_t)[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or (want is int and isinstance(value, bool)):
            raise ConfigError(f"config key {key!r} expects {want.__name__}, got {type(value).__name__}")
        target[key] = value
    return TrainConfig(**train), InferenceConfig(**infer)


def format_config(train: TrainConfig, infer: InferenceConfig) -> str:
    lines = ["# training"]
    for f in dataclasses.fields(train):
        v = getattr(train, f.name)
        lines.append(f"{f.name}:{type(v).__name__} = {v}")
    lines.append("# inference")
    for f in dataclasses.fields(infer):
        v = getattr(infer, f.name)
        lines.append(f"{f.name}:{type(v).__name__} = {v}")
    return "\n".join(lines)


def _load_config(args) -> tuple:
    overrides = {}
    if args.config:
        overrides.update(parse_config_text(Path(args.config).read_text()))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "episodes", None) is not None and args.command == "pretrain":
        overrides["episodes"] = args.episodes
    mode = getattr(args, "mode", None)
    if mode and "," not in mode and mode != "all":
        overrides["mode"] = mode
    train, infer = resolve_config(overrides)
    train.validate()
    infer.validate()
    return train, infer


# ---------------------------------------------------------------- manifest


def _out_dir(args, default_is_file: bool) -> Path:
    if args.out is None:
        return Path.cwd()
    p = Path(args.out)
    return p.parent if default_is_file else p


def _write_manifest(directory: Path, record: dict) -> str:
    directory.mkdir(parents=True, exist_ok=True)
    body = json.dumps(record, sort_keys=True, default=str)
    digest = hashlib.sha256(body.encode()).hexdigest()
    record = dict(record, record_hash=digest)
    with open(directory / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    return digest


def _record(args, config: dict, timings: dict, bundle_hash: str | None = None, **extra) -> dict:
    return {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": args.seed,
        "bundle_hash": bundle_hash,
        "version": __version__,
        "timings": timings,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **extra,
    }


# ---------------------------------------------------------------- inputs


def _graph_files(paths) -> list:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob(f"*{GRAPH_SUFFIX}")))
        elif p.exists():
            files.append(p)
        else:
            raise InputError(f"no such graph file or directory: {p}")
    if not files:
        raise InputError("no graph files found")
    return files


def read_support(path) -> SupportSet:
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'node_id class_id'")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise InputError(f"{path}:{lineno}: node and class ids must be integers") from None
    if not pairs:
        raise InputError(f"{path}: support file is empty")
    return SupportSet.from_pairs(pairs)


def _read_ids(path) -> np.ndarray:
    ids = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            try:
                ids.append(int(line.split()[0]))
            except ValueError:
                raise InputError(f"{path}:{lineno}: node id must be an integer") from None
    return np.array(ids, dtype=np.int64)


def _check_support_nodes(graph, support: SupportSet):
    bad = support.items[(support.items < 0) | (support.items >= graph.num_nodes)]
    if bad.size:
        raise InputError(f"unknown node ids in support: {bad.tolist()}")


def _modes(text: str | None) -> list:
    if not text or text == "all":
        return list(MODES) if text == "all" else ["dpaa"]
    modes = [m.strip() for m in text.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    return modes


def _shots(text: str) -> list:
    try:
        shots = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--shots expects comma-separated integers, got {text!r}") from None
    if not shots or min(shots) < 1:
        raise ConfigError("--shots needs positive integers")
    return shots


# ---------------------------------------------------------------- corpus spec


def load_corpus_spec(source: str, seed: int | None) -> tuple:
    """Corpus spec plus (unify sign rule, width, split per domain) from a preset name or INI file."""
    if source in ("fewshot", "graded"):
        spec = fewshot_corpus_spec() if source == "fewshot" else graded_corpus_spec()
        splits = ["heldout" if d.name == "heldout" else "train" for d in spec.domains]
        unify, width = "data", 64
    else:
        parser = configparser.ConfigParser()
        try:
            if not parser.read(source):
                raise InputError(f"cannot read corpus spec {source}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed corpus spec: {exc}") from None
        corpus = parser["corpus"] if parser.has_section("corpus") else {}
        unify = corpus.get("unify", "data")
        if unify not in SIGN_RULES + ("none",):
            raise ConfigError(f"unify must be one of {', '.join(SIGN_RULES)}, none")
        width = int(corpus.get("width", 64))
        domains, splits = [], []
        kinds = {f.name: type(f.default) for f in dataclasses.fields(DomainSpec)}
        for section in parser.sections():
            if not section.startswith("domain"):
                continue
            name = section[len("domain"):].strip() or f"domain{len(domains)}"
            values = {"name": name}
            for key, raw in parser[section].items():
                if key == "split":
                    continue
                if key not in kinds:
                    raise ConfigError(f"[{section}]: unknown key {key!r}")
                try:
                    values[key] = kinds[key](raw)
                except ValueError:
                    raise ConfigError(f"[{section}]: {key} = {raw!r} is not a valid {kinds[key].__name__}") from None
            split = parser[section].get("split", "train")
            if split not in ("train", "heldout"):
                raise ConfigError(f"[{section}]: split must be train or heldout")
            domains.append(DomainSpec(**values))
            splits.append(split)
        try:
            spec = CorpusSpec(
                tuple(domains),
                latent_dim=int(corpus.get("latent_dim", 16)),
                centroid_scale=float(corpus.get("centroid_scale", 1.0)),
                centroid_decay=float(corpus.get("centroid_decay", 0.8)),
                nuisance_dims=int(corpus.get("nuisance_dims", 0)),
                nuisance_scale=float(corpus.get("nuisance_scale", 0.0)),
                base_seed=int(corpus.get("base_seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"[corpus]: {exc}") from None
    if seed is not None:
        spec = dataclasses.replace(spec, base_seed=seed)
    spec.validate()
    return spec, unify, width, splits


# ---------------------------------------------------------------- commands


def cmd_gen_synth(args) -> int:
    t0 = time.perf_counter()
    spec, unify, width, splits = load_corpus_spec(args.spec, args.seed)
    corpus = generate_corpus(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for g, split in zip(corpus.graphs, splits):
        if unify != "none":
            g = unify_graph(g, width, sign=unify)
        target = out / "heldout" if split == "heldout" else out
        target.mkdir(exist_ok=True)
        write_graph(g, target / f"{g.name}{GRAPH_SUFFIX}")
        names.append(g.name)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain"] + names)
    for name, row in zip(names, corpus.distances):
        w.writerow([name] + [repr(float(v)) for v in row])
    (out / "distances.csv").write_text(buf.getvalue())
    print(f"wrote {len(names)} graphs and distances.csv to {out}")
    _write_manifest(out, _record(args, {"corpus": dataclasses.asdict(spec), "unify": unify, "width": width,
                                        "splits": splits}, {"total": time.perf_counter() - t0}))
    return 0


def cmd_pretrain(args) -> int:
    train, _ = _load_config(args)
    t0 = time.perf_counter()
    corpus = [read_graph(p) for p in _graph_files(args.corpus)]
    timings = {"load": time.perf_counter() - t0}
    out = Path(args.out or "model.gim")
    out.parent.mkdir(parents=True, exist_ok=True)
    result = pretrain(corpus, train)
    timings.update(result.timings)
    digest = save_bundle(result.bundle, out)
    curve = out.parent / "curve.csv"
    curve.write_text("episode,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.losses)))
    print(f"bundle {out} hash {digest}")
    print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f} over {len(result.losses)} episodes; curve {curve}")
    _write_manifest(out.parent, _record(args, train.as_dict(), timings, digest,
                                        corpus=[g.name for g in corpus]))
    return 0


def cmd_embed(args) -> int:
    t0 = time.perf_counter()
    bundle = load_bundle(args.bundle)
    graph = read_graph(args.graph)
    support = read_support(args.support)
    _check_support_nodes(graph, support)
    num_classes = max(graph.num_classes, int(support.classes.max()) + 1)
    e = in_context_embedding(graph, support.items, support.classes, bundle.encoder.theta0, bundle.embedder,
                             bundle.eta, num_classes=num_classes)
    print(",".join(repr(float(v)) for v in e.vector))
    if len(bundle.domain_embeddings):
        dist = np.linalg.norm(bundle.domain_embeddings - e.vector, axis=1)
        i = int(np.argmin(dist))
        print(f"nearest {i} {bundle.domain_names[i]} {float(dist[i])!r}")
    _write_manifest(_out_dir(args, False), _record(args, {"graph": str(args.graph), "support": str(args.support)},
                                                   {"total": time.perf_counter() - t0}, bundle.content_hash()))
    return 0


def cmd_infer(args) -> int:
    _, infer = _load_config(args)
    t0 = time.perf_counter()
    bundle = load_bundle(args.bundle)
    graph = read_graph(args.graph)
    support = read_support(args.support)
    _check_support_nodes(graph, support)
    if args.queries:
        queries = _read_ids(args.queries)
    else:
        queries = np.setdiff1d(np.arange(graph.num_nodes), support.items)
    pred = in_context_predict(bundle, graph, support, queries, infer)
    lines = "".join(f"{q} {c} {float(s)!r}\n" for q, c, s in
                    zip(pred.queries, pred.predictions, pred.scores.max(axis=1) if len(queries) else []))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(lines)
    else:
        sys.stdout.write(lines)
    if args.scores:
        write_matrix(args.scores, pred.scores)
    _write_manifest(_out_dir(args, True), _record(args, infer.as_dict(), {"total": time.perf_counter() - t0},
                                                  bundle.content_hash(), graph=str(args.graph)))
    return 0


def _evaluate_rows(args, bundle, graph, modes, shots, infer) -> list:
    ways = args.ways or graph.num_classes
    rows = []
    for k in shots:
        for mode in modes:
            cfg = dataclasses.replace(infer, mode=mode)
            acc = evaluate(bundle, graph, ways, k, args.episodes, args.queries, args.seed or 0, cfg, args.jobs)
            rows.append((k, mode, float(acc.mean()), float(acc.std()), len(acc)))
    return rows


def _metrics_csv(rows, extra_cols=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(extra_cols) + ["shot", "mode", "mean_accuracy", "std", "episodes"])
    for r in rows:
        w.writerow([*r[:-5], r[-5], r[-4], repr(r[-3]), repr(r[-2]), r[-1]])
    return buf.getvalue()


def cmd_eval(args) -> int:
    _, infer = _load_config(args)
    t0 = time.perf_counter()
    bundle = load_bundle(args.bundle)
    graph = read_graph(args.graph)
    rows = _evaluate_rows(args, bundle, graph, _modes(args.mode), _shots(args.shots), infer)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(_metrics_csv(rows))
    for k, mode, mean, std, n in rows:
        print(f"shot={k} mode={mode} accuracy={mean:.4f} std={std:.4f} episodes={n}")
    _write_manifest(out, _record(args, dict(infer.as_dict(), ways=args.ways, shots=args.shots, queries=args.queries,
                                            episodes=args.episodes), {"total": time.perf_counter() - t0},
                                 bundle.content_hash(), graph=str(args.graph)))
    return 0


def cmd_ablate(args) -> int:
    _, infer = _load_config(args)
    t0 = time.perf_counter()
    graph = read_graph(args.graph)
    paths = [args.bundle] + list(args.bundles or [])
    shots = _shots(args.shots)
    rows, hashes = [], []
    for path in paths:
        bundle = load_bundle(path)
        hashes.append(bundle.content_hash())
        variant = "layers={layers} heads={heads} shared={shared}".format(**bundle.dpaa.config.as_dict())
        for r in _evaluate_rows(args, bundle, graph, list(MODES), shots, infer):
            rows.append((Path(path).name, variant) + r)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    record = _record(args, dict(infer.as_dict(), shots=args.shots, episodes=args.episodes, queries=args.queries),
                     {"total": time.perf_counter() - t0}, hashes[0], bundles=hashes, graph=str(args.graph))
    digest = _write_manifest(out, record)
    report = _metrics_csv(rows, ("bundle", "variant"))
    (out / "ablation.csv").write_text(report)
    print(f"{'bundle':<16} {'variant':<28} {'shot':>4} {'mode':<11} {'accuracy':>8} {'std':>7}")
    for name, variant, k, mode, mean, std, _ in rows:
        print(f"{name:<16} {variant:<28} {k:>4} {mode:<11} {mean:>8.4f} {std:>7.4f}")
    print(f"manifest {digest}")
    return 0


def cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    results = run_selftest(seed=args.seed or 0)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    _write_manifest(_out_dir(args, False), _record(args, {}, {"total": time.perf_counter() - t0},
                                                   passed=ok))
    return 0 if ok else 2


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--config", help="key:type = value config file")
    common.add_argument("--jobs", type=int, default=1, help="concurrent evaluation episodes")
    common.add_argument("--mode", default=None, help=f"inference mode(s): {', '.join(MODES)}, or all")
    common.add_argument("--shots", default="1,3,5", help="comma-separated shot counts")
    common.add_argument("--episodes", type=int, default=None, help="episode count")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="graphicl", description="Graph in-context learning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic multi-domain corpus")
    p.add_argument("spec", help="corpus spec INI file, or a preset: fewshot, graded")

    p = sub.add_parser("pretrain", parents=[common], help="pretrain a model bundle")
    p.add_argument("corpus", nargs="+", help="graph files or directories of them")

    p = sub.add_parser("embed", parents=[common], help="print the in-context domain embedding")
    p.add_argument("bundle")
    p.add_argument("graph")
    p.add_argument("support")

    p = sub.add_parser("infer", parents=[common], help="predict classes from a support file")
    p.add_argument("bundle")
    p.add_argument("graph")
    p.add_argument("support")
    p.add_argument("--queries", help="file of query node ids (default: every non-support node)")
    p.add_argument("--scores", help="write the full score matrix here")

    for name, text in (("eval", "few-shot evaluation metrics"), ("ablate", "compare inference modes")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("bundle")
        p.add_argument("graph")
        p.add_argument("--ways", type=int, default=0, help="classes per episode (default: all)")
        p.add_argument("--queries", type=int, default=10, help="queries per class")
        if name == "ablate":
            p.add_argument("--bundles", nargs="*", help="extra bundles (e.g. attention variants)")

    sub.add_parser("selftest", parents=[common], help="run gradient checks and oracle suites")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.show_config:
            train, infer = _load_config(args)
            print(format_config(train, infer))
            return 0
        if args.command in ("eval", "ablate") and args.episodes is None:
            args.episodes = 20
        if args.episodes is not None and args.episodes < 1:
            raise ConfigError(f"--episodes must be positive, got {args.episodes}")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except (NumericError, TrainingError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GraphICLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
