"""Command-line entry point: ``compvqa <command> [--key value ...]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RUN_KEYS, SYNTH_KEYS, Config, synth_config_from, validate_run
from .dataset import build_splits, load_vqa_records, sample_few_shot, write_jsonl
from .errors import CompVQAError, ConfigError, DataError, NumericalError, UsageError
from .gradcheck import GRADCHECK_TOL, gradcheck_model
from .synthetic import gen_synthetic
from .training import MetricsReport, write_metrics_csv

log = logging.getLogger("compvqa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_keys(parser, schema):
    group = parser.add_argument_group("config keys (override the config file)")
    for key, spec in schema.items():
        extra = f" {{{','.join(spec.choices)}}}" if spec.choices else ""
        default = ",".join(map(str, spec.default)) if isinstance(spec.default, tuple) else spec.default
        group.add_argument(f"--{key}", dest=f"key_{key}", default=None, metavar="V",
                           help=f"{spec.help}{extra} (default: {default})")


def _overrides(args) -> dict:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}


def _load(schema, args) -> Config:
    cfg = Config.load(schema, args.config) if args.config else Config(schema)
    return cfg.update(_overrides(args))


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ commands


def cmd_gen_synth(args) -> int:
    cfg = _load(SYNTH_KEYS, args)
    out = _prepare_out(Path(args.out), args.force)
    manifest = gen_synthetic(synth_config_from(cfg), out)
    cfg.save(out / "synth.cfg")
    print(json.dumps(manifest.summary(), sort_keys=True))
    return 0


def cmd_build_splits(args) -> int:
    for p in [args.annotations, args.val_annotations, args.questions, args.val_questions]:
        if p and not Path(p).exists():
            raise UsageError(f"{p} does not exist")
    train = load_vqa_records(args.annotations, args.questions)
    val = load_vqa_records(args.val_annotations, args.val_questions) if args.val_annotations else []
    manifest = build_splits(train, args.base_threshold, args.novel_low, val_records=val)
    shots = {}
    for k in args.shots:
        try:
            shots[str(k)] = sample_few_shot(manifest, k, args.seed)
        except DataError as exc:
            log.warning("skipping %d-shot sample: %s", k, exc)
    manifest.shots = shots
    out_dir = Path(args.out).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.save(args.out)
    # split files next to the manifest; features.cvqa (image id -> objects x dims) is supplied separately
    for split, pool in [("train_base", train), ("train_novel", train), ("val_base", val), ("val_novel", val)]:
        wanted = set(manifest.questions.get(split, []))
        write_jsonl(out_dir / f"{split}.jsonl", [r for r in pool if r.question_id in wanted])
    print(json.dumps(manifest.summary(), sort_keys=True))
    return 0


def _bundle_and_config(cfg: Config):
    from .pipeline import DatasetBundle

    bundle = DatasetBundle.load(cfg["data_dir"])
    if (bundle.n_objects, bundle.d_obj) != (cfg["n_objects"], cfg["d_obj"]):
        raise DataError(f"features are {bundle.n_objects}x{bundle.d_obj} but the config says "
                        f"n_objects={cfg['n_objects']}, d_obj={cfg['d_obj']}")
    return bundle


def _base_params(cfg: Config) -> dict:
    return dict(m_max=cfg["m_max"], c_dim=cfg["c_dim"], embed_dim=cfg["embed_dim"],
                glimpses_image=cfg["glimpses_image"], glimpses_question=cfg["glimpses_question"],
                dropout=cfg["dropout"], head_mode=cfg["head_mode"], lam=cfg["lambda"],
                distance=cfg["distance"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                seed=cfg["seed"])


def _load_base(run: Path, bundle):
    from .pipeline import base_estimator

    ckpt = run / "checkpoint.cvqa"
    if not ckpt.exists():
        raise UsageError(f"no base checkpoint at {ckpt}; run train-base first")
    cfg = Config.load(RUN_KEYS, run / "config.cfg")
    est = base_estimator(bundle, **_base_params(cfg)).load_checkpoint(ckpt)
    return cfg, est


def cmd_train_base(args) -> int:
    from .pipeline import X_of, base_estimator

    cfg = _load(RUN_KEYS, args)
    validate_run(cfg, need_paths=("data_dir",))
    if not cfg["run_dir"]:
        raise ConfigError("run_dir is required")
    bundle = _bundle_and_config(cfg)
    run = _prepare_out(Path(cfg["run_dir"]), args.force)
    cfg.save(run / "config.cfg")
    m = cfg["m_max"]
    train, val = bundle.base_split("train_base", m), bundle.base_split("val_base", m)
    est = base_estimator(bundle, **_base_params(cfg))
    rows = []

    def on_epoch(epoch, losses):
        rows.append({"epoch": epoch, "split": "train", **losses})

    est.fit(X_of(train), train.labels, on_epoch=on_epoch)
    report = est.evaluate(X_of(val), val.labels, cfg["eval_mode"])
    rows.append({"epoch": cfg["epochs"], "split": "val_base", "top1": report.top1, "top5": report.top5})
    est.save_checkpoint(run / "checkpoint.cvqa")
    write_metrics_csv(run / "metrics.csv", rows)
    _write_report(run / "report.json", {"stage": "base", "val_base": report.to_dict(),
                                        "loss_trace": est.loss_trace_})
    print(json.dumps({"val_base_top1": report.top1, "val_base_top5": report.top5}))
    return 0


def cmd_train_novel(args) -> int:
    from .pipeline import X_of, novel_estimator

    cfg = _load(RUN_KEYS, args)
    validate_run(cfg, need_paths=("data_dir",))
    if not cfg["base_run"]:
        raise UsageError("train-novel needs --base_run pointing at a train-base run directory")
    base_run = Path(cfg["base_run"])
    if not (base_run / "checkpoint.cvqa").exists():
        raise UsageError(f"no base checkpoint at {base_run / 'checkpoint.cvqa'}; run train-base first")
    if not cfg["run_dir"]:
        raise ConfigError("run_dir is required")
    bundle = _bundle_and_config(cfg)
    base_cfg, base = _load_base(base_run, bundle)
    run = _prepare_out(Path(cfg["run_dir"]), args.force)
    cfg.save(run / "config.cfg")
    m = base_cfg["m_max"]
    k = cfg["shots"]
    per = bundle.manifest.shots.get(str(k)) or sample_few_shot(bundle.manifest, k, cfg["seed"])
    qids = [q for a in bundle.manifest.novel for q in per[a]]
    train = bundle.encode("train_novel", bundle.manifest.novel, m, qids)
    val = bundle.novel_split("val_novel", m)
    est = novel_estimator(bundle, base, shots=k, lam=cfg["lambda"], init=cfg["init"],
                          batch_size=cfg["novel_batch_size"], seed=cfg["seed"])
    before = {n: checkpoint.tensor_digest(t.data) for n, t in base.model_.store.items()}
    est.fit(X_of(train), train.labels)
    after = {n: checkpoint.tensor_digest(t.data) for n, t in est.model_.store.items() if n in before}
    changed = sorted(n for n in before if before[n] != after[n])
    if changed:
        raise NumericalError(f"frozen parameters changed during novel training: {changed}")
    report = est.evaluate(X_of(val), val.labels, cfg["eval_mode"])
    checkpoint.save(run / "checkpoint.cvqa",
                    {"head.novel_emb": est.model_.store["head.novel_emb"].data})
    rows = [{"epoch": i, "split": "train", **r} for i, r in enumerate(est.loss_trace_, 1)]
    rows.append({"epoch": len(est.loss_trace_), "split": "val_novel", "top1": report.top1, "top5": report.top5})
    write_metrics_csv(run / "metrics.csv", rows)
    _write_report(run / "report.json", {"stage": "novel", "shots": k, "val_novel": report.to_dict(),
                                        "frozen_digest": before})
    print(json.dumps({"val_novel_top1": report.top1, "val_novel_top5": report.top5}))
    return 0


def cmd_eval(args) -> int:
    from .pipeline import X_of, novel_estimator

    run = Path(args.run_dir)
    if not (run / "config.cfg").exists():
        raise UsageError(f"{run} is not a run directory (no config.cfg)")
    cfg = Config.load(RUN_KEYS, run / "config.cfg")
    if args.data_dir:
        cfg.set("data_dir", args.data_dir)
    validate_run(cfg, need_paths=("data_dir",))
    bundle = _bundle_and_config(cfg)
    mode = args.mode or cfg["eval_mode"]
    if cfg["base_run"]:
        base_cfg, base = _load_base(Path(cfg["base_run"]), bundle)
        novel = novel_estimator(bundle, base, shots=cfg["shots"], lam=cfg["lambda"])
        novel.model_ = base.model_
        novel.model_.add_novel_answers(bundle.manifest.decomposition_of(bundle.manifest.novel), "attribute")
        novel.model_.store.load_state_dict(checkpoint.load(run / "checkpoint.cvqa"), strict=False)
        novel.classes_ = np.arange(len(bundle.manifest.novel))
        split = args.split or "val_novel"
        data = bundle.novel_split(split, base_cfg["m_max"])
        report: MetricsReport = novel.evaluate(X_of(data), data.labels, mode)
    else:
        _, base = _load_base(run, bundle)
        split = args.split or "val_base"
        data = bundle.base_split(split, cfg["m_max"])
        report = base.evaluate(X_of(data), data.labels, mode)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / f"eval_{split}.csv", [{"epoch": "", "split": split,
                                                   "top1": report.top1, "top5": report.top5}])
    _write_report(out / f"eval_{split}.json", {"split": split, "mode": mode, **report.to_dict()})
    print(json.dumps({"split": split, "top1": report.top1, "top5": report.top5}))
    return 0


def cmd_gradcheck(args) -> int:
    worst, details = gradcheck_model(c_dim=args.c_dim, m=args.m, n=args.n, n_attributes=args.n_attributes,
                                     glimpses=args.glimpses, seed=args.seed, h=args.h)
    for name, err in details.items():
        print(f"{name}\t{err:.3e}")
    status = "PASS" if worst <= GRADCHECK_TOL else "FAIL"
    print(f"{status} max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return 0 if worst <= GRADCHECK_TOL else NumericalError.exit_code


def cmd_dump_attention(args) -> int:
    from .bgn import PAD

    run = Path(args.run_dir)
    cfg = Config.load(RUN_KEYS, run / "config.cfg")
    if args.data_dir:
        cfg.set("data_dir", args.data_dir)
    validate_run(cfg, need_paths=("data_dir",))
    bundle = _bundle_and_config(cfg)
    base_run = Path(cfg["base_run"]) if cfg["base_run"] else run
    base_cfg, base = _load_base(base_run, bundle)
    data = bundle.base_split(args.split, base_cfg["m_max"]) if "base" in args.split else \
        bundle.novel_split(args.split, base_cfg["m_max"])
    if not 0 <= args.index < len(data):
        raise UsageError(f"index {args.index} outside [0, {len(data)})")
    tokens, objects = data.tokens[args.index:args.index + 1], data.objects[args.index:args.index + 1]
    from . import tensor as T

    with T.no_grad():
        state = base.model_.graph(tokens, objects)
    atts = state.question_attention if args.graph == "question" else state.image_attention
    n_words = int((tokens[0] != PAD).sum())
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["glimpse", "query_index", "key_index", "weight"])
        for g, att in enumerate(atts):
            mat = att.data[0]
            for q in range(n_words):
                for k in range(mat.shape[1]):
                    w.writerow([g, q, k, repr(float(mat[q, k]))])
    print(json.dumps({"qid": int(data.qids[args.index]), "graph": args.graph, "glimpses": len(atts),
                      "out": str(args.out)}))
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="compvqa", description="Compositional few-shot VQA pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic compositional dataset")
    p.add_argument("--config", help="key=value file with synthetic-data keys")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    _add_keys(p, SYNTH_KEYS)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-splits", help="build base/novel splits from VQA v2 annotations")
    p.add_argument("annotations", help="training annotation JSON")
    p.add_argument("--questions", help="training question JSON (optional)")
    p.add_argument("--val-annotations", help="validation annotation JSON")
    p.add_argument("--val-questions", help="validation question JSON")
    p.add_argument("--out", required=True, help="manifest JSON to write")
    p.add_argument("--base-threshold", type=int, default=40)
    p.add_argument("--novel-low", type=int, default=10)
    p.add_argument("--shots", type=lambda s: [int(x) for x in s.split(",")], default=[1, 5, 10])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_splits)

    for name, func, text in [("train-base", cmd_train_base, "train backbone, base answers and attributes"),
                             ("train-novel", cmd_train_novel, "learn novel answer embeddings on a frozen base")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value run configuration")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
        _add_keys(p, RUN_KEYS)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a base or novel run")
    p.add_argument("--run_dir", required=True)
    p.add_argument("--data_dir", help="override the dataset directory")
    p.add_argument("--split", help="split to evaluate (default val_base / val_novel)")
    p.add_argument("--mode", choices=("soft", "exact"))
    p.add_argument("--out", help="directory for eval CSV/JSON (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of both stage losses")
    p.add_argument("--c_dim", type=int, default=8)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--n_attributes", type=int, default=6)
    p.add_argument("--glimpses", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-attention", help="write one example's attention weights as CSV")
    p.add_argument("--run_dir", required=True)
    p.add_argument("--data_dir")
    p.add_argument("--split", default="val_base")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--graph", choices=("image", "question"), default="image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CompVQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
