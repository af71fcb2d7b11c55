"""Command-line entry point: ``product-extract <subcommand>``.

Every long option can also be supplied through an environment variable
named ``PRODUCT_EXTRACT_<OPTION>`` (upper case, dashes as underscores),
e.g. ``PRODUCT_EXTRACT_SEED=7``. Command-line values win.

Exit codes: 0 success, 1 operational error, 2 page without a usable
Product (``extract`` only).
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from .classifier import CleanConfig, FeaturizerConfig, TrainConfig, clean_labels, load_model, model_bytes, predict, train
from .core import default_taxonomy, load_dataset, load_taxonomy
from .errors import EmptyName, MissingFile, NoProductFound, ProductExtractError
from .extract import extract_product, product_to_json
from .fetch import FetchConfig, fetch
from .mapper import MapConfig, map_taxonomies, mapping_accuracy
from .synthetic import CorpusSpec, generate, generate_source_corpus
from .transfer import load_scenarios, render_report, run_scenarios
from .util import write_atomic

log = logging.getLogger("product_extract")

ENV_PREFIX = "PRODUCT_EXTRACT_"
EXIT_OK, EXIT_ERROR, EXIT_NO_PRODUCT = 0, 1, 2


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, ensure_ascii=False)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if level == "json":
        handler.setFormatter(_JsonFormatter())
        level = "info"
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("product_extract")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _csv_list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise MissingFile(p)


def _taxonomy(args):
    return load_taxonomy(args.taxonomy) if args.taxonomy else default_taxonomy()


def _train_config(args) -> TrainConfig:
    feat = FeaturizerConfig(hash_dims=args.hash_dims, name_weight=args.name_weight)
    return TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, l2=args.l2,
                       seed=args.seed, batch_size=args.batch_size, featurizer=feat)


# -- subcommands --------------------------------------------------------

def cmd_extract(args) -> int:
    if args.file:
        _require_files(args.file)
        with open(args.file, encoding="utf-8", errors="replace") as f:
            html = f.read()
    else:
        print("note: fetches a single page; bulk crawling is out of scope", file=sys.stderr)
        cfg = FetchConfig.from_env(timeout=args.timeout, max_bytes=args.max_bytes)
        html = fetch(args.url, cfg, force=args.force).body
    info = extract_product(html)
    if args.json:
        sys.stdout.write(product_to_json(info))
    else:
        print(f"name: {info.name}\ndescription: {info.description}\nsyntax: {info.syntax}\ncandidates: {info.candidate_count}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require_files(args.data, args.taxonomy)
    config = _train_config(args)
    taxonomy = _taxonomy(args)
    dataset = load_dataset(args.data, taxonomy, strict=not args.lenient)
    model = train(dataset, taxonomy, config)
    write_atomic(args.out, model_bytes(model))
    if args.loss_plot:
        from .plotting import plot_loss_curve

        plot_loss_curve(model.train_meta["epoch_losses"], args.loss_plot)
    log.info("wrote model %s (%d labels)", args.out, len(model.labels))
    print(json.dumps({"model": args.out, "fingerprint": model.fingerprint(), "labels": list(model.labels),
                      "epoch_losses": model.train_meta["epoch_losses"]}))
    return EXIT_OK


def cmd_clean(args) -> int:
    _require_files(args.data, args.taxonomy)
    taxonomy = _taxonomy(args)
    dataset = load_dataset(args.data, taxonomy, strict=not args.lenient)
    kept, report = clean_labels(dataset, taxonomy, CleanConfig(folds=args.folds, train=_train_config(args)))
    write_atomic(args.out, kept.to_jsonl())
    if args.report:
        write_atomic(args.report, json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
    print(json.dumps({"kept": report.kept_count, "flagged": report.flagged_count}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require_files(args.scenarios, args.data, args.taxonomy)
    with open(args.scenarios, encoding="utf-8") as f:
        specs = load_scenarios(f.read())
    taxonomy = _taxonomy(args)
    dataset = load_dataset(args.data, taxonomy, strict=not args.lenient)
    reports = run_scenarios(dataset, taxonomy, specs, _train_config(args))
    write_atomic(args.out, render_report(reports, "json"))
    if args.markdown:
        write_atomic(args.markdown, render_report(reports, "markdown"))
    if args.csv:
        write_atomic(args.csv, render_report(reports, "csv"))
    if args.figures:
        from .plotting import write_report_figures

        write_report_figures(reports, args.figures)
    sys.stdout.write(render_report(reports, "markdown"))
    return EXIT_OK


def cmd_map(args) -> int:
    _require_files(args.model, args.data, args.gold)
    model = load_model(args.model)
    source = load_dataset(args.data, None)
    mapping = map_taxonomies(model, source, MapConfig(args.min_support, args.min_margin))
    out = mapping.to_dict()
    gold = None
    if args.gold:
        with open(args.gold, encoding="utf-8") as f:
            gold = json.load(f)
        out["accuracy"] = mapping_accuracy(mapping, gold).to_dict()
    write_atomic(args.out, json.dumps(out, indent=2, ensure_ascii=False) + "\n")
    if args.figure:
        from .plotting import plot_mapping_margins

        plot_mapping_margins(mapping, args.figure, gold)
    summary = {"mapped": len(mapping.entries), "unmapped": len(mapping.unmapped)}
    if "accuracy" in out:
        summary["accuracy"] = out["accuracy"]
    print(json.dumps(summary))
    return EXIT_OK


def cmd_predict(args) -> int:
    _require_files(args.model)
    model = load_model(args.model)
    pred = predict(model, args.name, args.description)
    print(json.dumps(pred.to_dict(), ensure_ascii=False))
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    spec = CorpusSpec(
        categories=args.categories,
        shops=tuple(_csv_list(args.shops)),
        languages=tuple(_csv_list(args.languages)),
        records_per_cell=args.records_per_cell,
        vocab_overlap=args.vocab_overlap,
        noise_rate=args.noise_rate,
        seed=args.seed,
    )
    spec.validate()
    corpus = generate(spec)
    out = args.out_dir
    write_atomic(os.path.join(out, "data.jsonl"), corpus.dataset.to_jsonl())
    write_atomic(os.path.join(out, "taxonomy.csv"), corpus.taxonomy.to_csv())
    write_atomic(os.path.join(out, "mask.json"), corpus.mask.to_json())
    written = {"records": len(corpus.dataset), "flipped": sum(corpus.mask.flipped)}
    if args.source_categories:
        source, gold = generate_source_corpus(spec, args.source_categories, args.source_shop, args.source_language)
        write_atomic(os.path.join(out, "source.jsonl"), source.to_jsonl())
        write_atomic(os.path.join(out, "gold.json"), json.dumps(gold, indent=2, ensure_ascii=False) + "\n")
        written["source_records"] = len(source)
    print(json.dumps(written))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import ClassifyService, make_server, parse_addr

    _require_files(args.model)
    model = load_model(args.model)
    addr = parse_addr(args.addr)
    service = ClassifyService(model, FetchConfig.from_env(timeout=args.timeout, max_bytes=args.max_bytes),
                              max_inflight_fetches=args.max_inflight)
    server = make_server(addr, service)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (model {service.fingerprint})", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# -- parser -------------------------------------------------------------

def _add_train_flags(p) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--l2", type=float, default=d.l2)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--hash-dims", type=int, default=d.featurizer.hash_dims)
    p.add_argument("--name-weight", type=float, default=d.featurizer.name_weight)
    p.add_argument("--lenient", action="store_true", help="drop records with unknown categories instead of failing")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--taxonomy", default=argparse.SUPPRESS, help="taxonomy CSV (default: bundled sample)")
    common.add_argument("--log-level", choices=["debug", "info", "warning", "error", "json"], default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="product-extract", description=__doc__.split("\n")[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="extract schema.org Product name/description")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--url")
    src.add_argument("--file")
    p.add_argument("--json", action="store_true", help="print ProductInfo as JSON")
    p.add_argument("--force", action="store_true", help="accept non-HTML content types")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-bytes", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-plot", help="write a training-loss figure to this path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("clean", parents=[common], help="flag and remove likely label errors")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="JSONL of kept records")
    p.add_argument("--report", help="JSON clean report")
    p.add_argument("--folds", type=int, default=CleanConfig().folds)
    _add_train_flags(p)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("evaluate", parents=[common], help="run transfer scenarios")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--markdown", help="also write the markdown table here")
    p.add_argument("--csv", help="also write a CSV summary here")
    p.add_argument("--figures", help="directory for PNG figures")
    _add_train_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("map-taxonomy", parents=[common], help="map a source taxonomy by majority vote")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gold", help="JSON object source_category -> brick_code")
    p.add_argument("--min-support", type=int, default=MapConfig().min_support)
    p.add_argument("--min-margin", type=float, default=MapConfig().min_margin)
    p.add_argument("--figure", help="write a vote-margin figure to this path")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("predict", parents=[common], help="classify one product")
    p.add_argument("--model", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--description", default="")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--categories", type=int, default=6)
    p.add_argument("--shops", default="shopA,shopB")
    p.add_argument("--languages", default="de,fr")
    p.add_argument("--records-per-cell", type=int, default=100)
    p.add_argument("--vocab-overlap", type=float, default=0.7)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--source-categories", type=int, default=0,
                   help="also write a foreign-taxonomy corpus with this many source categories")
    p.add_argument("--source-shop", default="sourceshop")
    p.add_argument("--source-language", default="de")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("serve", parents=[common], help="serve the classify API")
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.add_argument("--model", required=True)
    p.add_argument("--max-inflight", type=int, default=8, help="cap on concurrent outbound fetches")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-bytes", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    _apply_env(parser)
    return parser


def _walk(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _walk(child)


def _apply_env(parser) -> None:
    for p in _walk(parser):
        for action in p._actions:
            longs = [o for o in action.option_strings if o.startswith("--")]
            if not longs or action.dest in ("help", "version") or action.dest in GLOBAL_DEFAULTS:
                continue
            env = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
            if env not in os.environ:
                continue
            value = os.environ[env]
            if isinstance(action, argparse._StoreTrueAction):
                action.default = value.lower() in ("1", "true", "yes", "on")
            else:
                action.default = value  # argparse applies ``type`` to string defaults
            action.required = False


GLOBAL_DEFAULTS = {"seed": 42, "taxonomy": None, "log_level": "warning"}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # global flags use SUPPRESS so they are accepted before or after the subcommand
    for key, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, os.environ.get(ENV_PREFIX + key.upper(), default))
    try:
        args.seed = int(args.seed)
    except ValueError:
        parser.error(f"--seed must be an integer, got {args.seed!r}")
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except (NoProductFound, EmptyName) as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_NO_PRODUCT
    except ProductExtractError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
