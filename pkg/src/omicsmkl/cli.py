"""Command-line front end.

Commands: ``gen-synthetic``, ``run``, ``train``, ``predict``, ``interpret``.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from .attribution import AttributionConfig, biomarker_report
from .data import (DataError, MultiViewDataset, align_views, complementary_views, load_views,
                   planted_biomarker, read_feature_csv, save_dataset, synthetic_multiview)
from .deep import DeepMklConfig, DivergenceError, NetworkError
from .evaluation import (SearchSpace, cross_validate, default_space, run_experiment,
                         split_fit_predict)
from .kernels import KernelError
from .methods import (DEEP_METHODS, METHODS, FittedModel, MethodOptions, ModelFileError,
                      atomic_write_text, fit_method)
from .svm import SolverError

log = logging.getLogger("omicsmkl")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GENERATORS = {"blobs": synthetic_multiview, "complementary": complementary_views,
              "planted": planted_biomarker}
TOP_KEYS = {"schema_version", "data", "method", "kernel", "fusion", "standardize", "anova_k",
            "svm_tol", "mkl", "deep", "search", "params", "seeds", "train_fraction", "out",
            "attribution"}


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


@dataclass
class RunConfig:
    method: str
    views: list = field(default_factory=list)
    labels: str | None = None
    synthetic: dict | None = None
    options: MethodOptions = field(default_factory=MethodOptions)
    search: SearchSpace | None = None
    params: dict | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train_fraction: float = 0.7
    out: str = "out"
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    base_dir: str = "."

    def load_dataset(self) -> MultiViewDataset:
        if self.synthetic is not None:
            params = dict(self.synthetic)
            gen = GENERATORS[params.pop("generator", "blobs")]
            return gen(**params)
        paths = [v["path"] for v in self.views]
        names = [v.get("name") for v in self.views]
        return load_views(paths, self.labels, names)


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    """Validate a JSON run configuration; errors carry the offending line."""

    def fail(key, msg):
        raise ConfigError(f"line {_line_of(text, key)}: field '{key}': {msg}")

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("line 1: configuration must be a JSON object")
    for key in raw:
        if key not in TOP_KEYS:
            fail(key, "unknown field")
    if raw.get("schema_version") != SCHEMA_VERSION:
        fail("schema_version", f"must be {SCHEMA_VERSION}")
    method = raw.get("method")
    if method not in METHODS:
        fail("method", f"unknown method {method!r}; expected one of {', '.join(METHODS)}")

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    data = raw.get("data")
    if not isinstance(data, dict):
        fail("data", "must be an object with 'views'/'labels' or 'synthetic'")
    views, labels, synthetic = [], None, None
    if "synthetic" in data:
        synthetic = data["synthetic"]
        if not isinstance(synthetic, dict) or synthetic.get("generator", "blobs") not in GENERATORS:
            fail("synthetic", f"generator must be one of {', '.join(GENERATORS)}")
    else:
        if not isinstance(data.get("views"), list) or not data["views"]:
            fail("views", "must be a non-empty list of {name, path}")
        for v in data["views"]:
            if not isinstance(v, dict) or "path" not in v:
                fail("views", "each view needs a 'path'")
            v = dict(v, path=resolve(v["path"]))
            if not os.path.exists(v["path"]):
                fail("views", f"file not found: {v['path']}")
            views.append(v)
        if not isinstance(data.get("labels"), str):
            fail("labels", "must be a file path")
        labels = resolve(data["labels"])
        if not os.path.exists(labels):
            fail("labels", f"file not found: {labels}")

    kernel = raw.get("kernel", {"kind": "rbf"})
    try:
        MethodOptions(kernel=kernel).kernel_spec(1.0)
    except (KernelError, TypeError) as exc:
        fail("kernel", str(exc))
    fusion = raw.get("fusion", {})
    options = MethodOptions(kernel=kernel, normalize=bool(fusion.get("normalize", True)),
                            standardize=bool(raw.get("standardize", False)),
                            anova_k=raw.get("anova_k"), svm_tol=float(raw.get("svm_tol", 1e-3)),
                            mkl=raw.get("mkl", {}), deep=raw.get("deep", {}))
    if method in DEEP_METHODS:
        try:
            DeepMklConfig(**options.deep)
        except (NetworkError, TypeError) as exc:
            fail("deep", str(exc))

    search = None
    if "search" in raw:
        s = raw["search"]
        try:
            search = SearchSpace(s["params"], s.get("kind", "grid"), int(s.get("folds", 5)),
                                 int(s.get("seed", 0)), int(s.get("n_draws", 20)))
        except (KeyError, ValueError, TypeError) as exc:
            fail("search", str(exc))
    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds) or not seeds:
        fail("seeds", "must be a non-empty list of integers")
    tf = raw.get("train_fraction", 0.7)
    if not isinstance(tf, (int, float)) or not 0 < tf < 1:
        fail("train_fraction", "must lie strictly between 0 and 1")
    attr = raw.get("attribution", {})
    try:
        attribution = AttributionConfig(**attr)
    except TypeError as exc:
        fail("attribution", str(exc))
    return RunConfig(method, views, labels, synthetic, options, search, raw.get("params"),
                     seeds, float(tf), raw.get("out", "out"), attribution, base_dir)


def read_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed_list", None):
        try:
            cfg.seeds = [int(s) for s in args.seed_list.split(",")]
        except ValueError:
            raise ConfigError("--seed-list must be comma-separated integers") from None
    if getattr(args, "train_fraction", None) is not None:
        if not 0 < args.train_fraction < 1:
            raise ConfigError("--train-fraction must lie strictly between 0 and 1")
        cfg.train_fraction = args.train_fraction
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_run(args) -> int:
    cfg = _apply_overrides(read_config(args.config), args)
    dataset = cfg.load_dataset()
    report = run_experiment(dataset, cfg.method, cfg.search, cfg.seeds, cfg.train_fraction,
                            cfg.options, threads=args.threads)
    atomic_write_text(os.path.join(cfg.out, "report.json"), report.to_json() + "\n")
    atomic_write_text(os.path.join(cfg.out, "report.txt"), report.table())
    sys.stdout.write(report.table())
    if not report.per_seed:
        log.error("every seed failed")
        return EXIT_NUMERIC
    return EXIT_OK


def train_model(cfg: RunConfig, dataset: MultiViewDataset) -> FittedModel:
    """Fit on every sample; tune first unless the config fixes ``params``."""
    params = cfg.params
    if params is None:
        space = cfg.search or default_space(cfg.method)
        params = cross_validate(split_fit_predict(dataset, cfg.method, cfg.options),
                                dataset.labels, space).best_params
    return fit_method(dataset, cfg.method, params, cfg.options)


def cmd_train(args) -> int:
    cfg = _apply_overrides(read_config(args.config), args)
    dataset = cfg.load_dataset()
    model = train_model(cfg, dataset)
    path = args.model or os.path.join(cfg.out, "model.json")
    model.save(path)
    if model.fusion is not None:
        rows = [["iteration", "objective", *model.fusion.input_refs], *model.fusion.trace_rows()]
        if len(rows) > 1:
            _write_csv(os.path.join(os.path.dirname(path) or ".", "fusion_trace.csv"), rows)
    if model.trace is not None:
        _write_csv(os.path.join(os.path.dirname(path) or ".", "loss_trace.csv"),
                   [["epoch", "loss", "train_acc"], *model.trace.rows()])
    print(path)
    return EXIT_OK


def _write_csv(path: str, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    atomic_write_text(path, buf.getvalue())


def _load_prediction_views(model: FittedModel, paths: list[str]) -> MultiViewDataset:
    by_name = {}
    for p in paths:
        if "=" in p:
            name, p = p.split("=", 1)
        else:
            name = os.path.splitext(os.path.basename(p))[0]
        if not os.path.exists(p):
            raise DataError(f"view {name!r}: file not found: {p}")
        by_name[name] = p
    missing = [v for v in model.view_names if v not in by_name]
    if missing:
        raise DataError(f"missing view {missing[0]!r}")
    views = [read_feature_csv(by_name[v], v) for v in model.view_names]
    common = sorted(set.intersection(*(set(v.samples) for v in views)))
    # prediction data is unlabeled; a placeholder keeps the dataset valid
    placeholder = {s: model.class_names[0] for s in common}
    return align_views(views, placeholder, model.class_names)


def cmd_predict(args) -> int:
    model = FittedModel.load(args.model)
    dataset = _load_prediction_views(model, args.data)
    values = model.values_for(dataset)
    scores = model.scores(values)
    pred = model.predict(values)
    rows = [["sample_id", "predicted_label", *[f"score_{c}" for c in model.class_names]]]
    for sid, p, s in zip(dataset.samples, pred, scores):
        rows.append([sid, model.class_names[int(p)], *map(float, s)])
    out = args.output or os.path.join(args.out or ".", "predictions.csv")
    _write_csv(out, rows)
    print(out)
    return EXIT_OK


def cmd_interpret(args) -> int:
    model = FittedModel.load(args.model)
    if model.method not in DEEP_METHODS:
        raise ConfigError(f"interpret needs a deep model, got {model.method!r}")
    cfg = AttributionConfig()
    if args.config:
        cfg = read_config(args.config).attribution
    for key in ("steps", "top_k_components"):
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    if args.top_k_features:
        cfg.top_k_features = [int(k) for k in args.top_k_features.split(",")]
        if len(cfg.top_k_features) == 1:
            cfg.top_k_features = cfg.top_k_features[0]
    dataset = _load_prediction_views(model, args.data)
    embeddings = model.embed(model.values_for(dataset))
    report = biomarker_report(model.network, model.kpca, model.train_values, embeddings, cfg,
                              [t.features for t in model.transforms], model.view_names)
    for p in report.write(args.out or "."):
        print(p)
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    gen = args.generator
    if gen == "blobs":
        dims = [int(d) for d in args.dims.split(",")]
        strength = [float(s) for s in args.strength.split(",")]
        ds = synthetic_multiview(args.seed, args.n, args.classes, dims, strength)
    elif gen == "complementary":
        ds = complementary_views(args.seed, args.n)
    else:
        ds = planted_biomarker(args.seed, args.n)
    try:
        paths, label_path = save_dataset(ds, args.out)
    except OSError as exc:
        raise DataError(f"cannot write to {args.out}: {exc}") from None
    for p in [*paths, label_path]:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omicsmkl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="multi-seed evaluation")
    common(p)
    p.add_argument("--threads", type=int, default=1, help="seeds evaluated in parallel")
    p.add_argument("--seed-list", help="comma-separated split seeds, e.g. 0,1,2,3,4")
    p.add_argument("--train-fraction", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="fit one model on all samples")
    common(p)
    p.add_argument("--model", help="model file path (default OUT/model.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score samples with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True, help="view CSVs, optionally NAME=PATH")
    p.add_argument("--out")
    p.add_argument("--output", help="predictions CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("interpret", help="two-step biomarker ranking for a deep model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True, help="view CSVs, optionally NAME=PATH")
    p.add_argument("--config", help="config whose 'attribution' block is used")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--top-k-components", type=int)
    p.add_argument("--top-k-features", help="one count or one per view, comma-separated")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("gen-synthetic", help="write a synthetic multi-view dataset")
    p.add_argument("--generator", choices=sorted(GENERATORS), default="blobs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dims", default="20,20,20")
    p.add_argument("--strength", default="1.0,1.0,1.0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFileError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, KernelError, NetworkError, DivergenceError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
