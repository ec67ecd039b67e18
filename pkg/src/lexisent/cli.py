"""Command-line pipeline: one subcommand per stage, one run directory per call.

Every invocation writes its artifacts and a ``manifest.json`` (command,
resolved config, input hashes, output hashes, timings) into
``<workdir>/runs/<timestamp>-<command>-<confighash>/``. Paths on the command
line are resolved against ``--workdir``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import __version__
from .config import DEFAULTS, ConfigError, config_hash, learning_rate, load_config, stage_value, tree_hash

logger = logging.getLogger("lexisent")


class CLIError(Exception):
    pass


# --- run directories ---------------------------------------------------------------

class Run:
    def __init__(self, args, config: dict, inputs: dict[str, Path]):
        self.args = args
        self.config = config
        self.inputs = inputs
        self.started = dt.datetime.now(dt.timezone.utc)
        self.outputs: dict[str, Path] = {}
        stamp = self.started.strftime("%Y%m%d-%H%M%S")
        base = args.workdir / "runs" / f"{stamp}-{args.command}-{config_hash(config)[:8]}"
        path, n = base, 1
        while path.exists():
            n += 1
            path = base.with_name(f"{base.name}-{n}")
        path.mkdir(parents=True)
        self.dir = path

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.outputs[name] = p
        return p

    def finish(self) -> Path:
        manifest = {
            "command": self.args.command,
            "argv": self.args.argv,
            "config": self.config,
            "inputs": {k: {"path": str(p), "sha256": tree_hash(p)} for k, p in sorted(self.inputs.items())},
            "seed": self.config.get("seed"),
            "version": __version__,
            "started": self.started.isoformat(),
            "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
            "outputs": {k: {"path": str(p), "sha256": tree_hash(p)}
                        for k, p in sorted(self.outputs.items()) if p.exists()},
        }
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".manifest-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        os.replace(tmp, self.dir / "manifest.json")
        out = getattr(self.args, "out", None)
        if out is not None and self.args.primary in self.outputs:
            src = self.outputs[self.args.primary]
            if src.is_dir():
                shutil.copytree(src, out, dirs_exist_ok=True)
            else:
                out.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, out)
        return self.dir


# --- subcommands -------------------------------------------------------------------

def _train_config(config: dict, stage: str):
    from .encoder import TrainConfig

    return TrainConfig(
        learning_rate=learning_rate(config),
        max_epochs=stage_value(config, "max_epochs", stage),
        patience=config["patience"],
        dropout=config["dropout"],
        max_length=stage_value(config, "max_length", stage),
        batch_size=stage_value(config, "batch_size", stage),
        seed=config["seed"],
    )


def _backend(config: dict, stage: str, seed: int):
    max_length = stage_value(config, "max_length", stage)
    if config["backend"] == "transformer":
        from .transformer import TransformerEncoder

        if not config["model"]:
            raise CLIError("the transformer backend needs --model (hub id or local directory)")
        return TransformerEncoder(config["model"], dropout=config["dropout"], max_length=max_length, seed=seed)
    if config["backend"] != "reference":
        raise CLIError(f"unknown backend {config['backend']!r}; expected reference or transformer")
    from .encoder import ReferenceEncoder

    return ReferenceEncoder(dim=config["dim"], dropout=config["dropout"], max_length=max_length, seed=seed)


def cmd_lexicon_normalize(args, config, run):
    from .lexicon import load_lexicon, save_lexicon

    if args.raw:
        # file lacks a pragma but holds [0, 1] scores
        tmp = run.dir / ".raw-input.tsv"
        tmp.write_text("#scale=raw\n" + args.input.read_text(encoding="utf-8"), encoding="utf-8")
        lex = load_lexicon(tmp, merge=args.merge)
        tmp.unlink()
    else:
        lex = load_lexicon(args.input, merge=args.merge)
    save_lexicon(lex, run.path("lexicon.tsv"))
    return {"entries": len(lex)}


def cmd_lexicon_extend(args, config, run):
    from .extend import load_edges, project_scores
    from .lexicon import load_lexicon, merge_lexicons, save_lexicon

    base = load_lexicon(args.lexicon, merge=args.merge)
    edges = load_edges(args.edges)
    targets = [t for t in args.targets.replace(",", " ").split() if t]
    projected, report = project_scores(base, edges, targets, case_fold=config["case_fold"])
    save_lexicon(projected, run.path("projected.tsv"))
    save_lexicon(merge_lexicons(base, projected, config["merge_policy"]), run.path("extended.tsv"))
    run.path("projection_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return json.loads(report.to_json())


def cmd_lexicon_filter(args, config, run):
    from .filtering import FilterConfig, rejected_lexicon, run_filter
    from .lexicon import Source, load_lexicon, save_lexicon

    base = load_lexicon(args.base, merge=args.merge)
    candidates = load_lexicon(args.candidates, merge=args.merge, source=Source.TRANSLATED)
    fconfig = FilterConfig(alpha=config["alpha"], beta=config["beta"], split_ratio=config["split_ratio"],
                           max_iterations=config["max_iterations"], cold_start=config["cold_start"],
                           train=_train_config(config, "pretrain"))
    out, trace = run_filter(base, candidates, fconfig, _backend(config, "pretrain", config["seed"]),
                            seed=config["seed"])
    save_lexicon(out, run.path("filtered.tsv"))
    save_lexicon(rejected_lexicon(candidates, trace), run.path("rejected.tsv"))
    trace.save(run.path("trace.jsonl"))
    return {"kept": len(out), "accepted": trace.accepted_total, "termination": trace.termination,
            "iterations": len(trace.records)}


def cmd_pretrain(args, config, run):
    from .lexicon import load_lexicon
    from .report import plot_training_curve
    from .training import PretrainJob, pretrain

    lex = load_lexicon(args.lexicon, merge=args.merge)
    seed = config["seed"]
    job = PretrainJob(lex, config["objective"], _train_config(config, "pretrain"), seed)
    ckpt = pretrain(job, _backend(config, "pretrain", seed))
    ckpt.save(run.path("checkpoint.json"))
    plot_training_curve(ckpt.metadata["curve"], run.path("curve.png"), ckpt.metadata["best_epoch"])
    return {"best_epoch": ckpt.metadata["best_epoch"], "best_val_loss": ckpt.metadata["best_val_loss"],
            "checkpoint_sha256": ckpt.content_hash(), "warnings": ckpt.metadata["warnings"]}


def cmd_finetune(args, config, run):
    from .evaluation import weighted_macro_f1
    from .training import Checkpoint, FinetuneJob, finetune, load_dataset, run_seeds

    dataset = load_dataset(args.data)
    base = Checkpoint.load(args.base) if args.base else None
    seeds = args.seeds if args.seeds else [config["seed"]]

    def one(seed):
        job = FinetuneJob(dataset, _train_config(config, "finetune"), base, seed)
        backend = None if base is not None else _backend(config, "finetune", seed)
        ckpt, _ = finetune(job, backend)
        metric = float("nan")
        if dataset.splits.get("test"):
            preds = ckpt.backend.predict(dataset.texts("test")).argmax(axis=1)
            metric = weighted_macro_f1(dataset.gold("test"), [ckpt.labels[i] for i in preds])
        return ckpt, metric

    runs = run_seeds(one, seeds)
    for seed, ckpt in zip(runs.seeds, runs.checkpoints):
        ckpt.save(run.path(f"checkpoint-seed{seed}.json" if len(seeds) > 1 else "checkpoint.json"))
    summary = {"seeds": runs.seeds, "test_f1": runs.metrics, "mean_test_f1": runs.mean}
    run.path("seeds.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_fewshot(args, config, run):
    from .training import fewshot_sample, load_dataset, save_dataset

    dataset = load_dataset(args.data)
    sample = fewshot_sample(dataset, config["n_train"], config["n_dev"], config["seed"], config["stratified"])
    save_dataset(sample, run.path("sample"))
    return {name: len(records) for name, records in sample.splits.items()}


def _read_texts(path: Path):
    from .training import read_sentence_tsv

    first = path.read_text(encoding="utf-8").split("\n", 1)[0]
    if first.split("\t") == ["text", "label"]:
        records = read_sentence_tsv(path)
        return [t for t, _ in records], [lab for _, lab in records]
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    return lines, None


def cmd_predict(args, config, run):
    from .evaluation import predict_zero_shot, weighted_macro_f1, write_predictions
    from .training import Checkpoint

    ckpt = Checkpoint.load(args.checkpoint)
    texts, gold = _read_texts(args.data)
    records = predict_zero_shot(ckpt, texts, config["task"], gold)
    write_predictions(records, run.path("predictions.jsonl"))
    out = {"n": len(records)}
    if gold is not None and records:
        out["weighted_macro_f1"] = weighted_macro_f1(gold, [r.pred for r in records])
    return out


def _lang_paths(values):
    out = {}
    for value in values:
        lang, sep, path = value.partition("=")
        if not sep:
            raise CLIError(f"expected LANG=PATH, got {value!r}")
        out.setdefault(lang, []).append(Path(path))
    return out


def cmd_evaluate(args, config, run):
    from .evaluation import GroupSpec, aggregate_report, read_predictions, weighted_macro_f1
    from .report import merged_table, plot_group_means, write_table

    scores = {}
    for lang, paths in args.pred_paths.items():
        values = []
        for path in paths:
            records = read_predictions(path)
            if any(r.gold is None for r in records):
                raise CLIError(f"{path}: predictions without gold labels cannot be scored")
            values.append(weighted_macro_f1([r.gold for r in records], [r.pred for r in records]))
        scores[lang] = values[0] if len(values) == 1 else values
    groups = GroupSpec.load(args.groups) if args.groups else GroupSpec({}, ungrouped=list(scores))
    report = aggregate_report(scores, groups)
    run.path("report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    write_table(merged_table({"f1": report}), run.path("report.tsv"))
    if report.groups:
        plot_group_means({"f1": report}, run.path("groups.png"))
    return {"average": report.average, "groups": report.groups}


def cmd_prompt_eval(args, config, run):
    from .lexicon import LABELS
    from .prompting import SCORER_URL_ENV, MockScorer, RemoteScorer, evaluate_prompts, load_templates

    texts, gold = _read_texts(args.data)
    if gold is None:
        raise CLIError(f"{args.data}: prompt evaluation needs a labelled text<TAB>label file")
    if args.scorer_table:
        scorer = MockScorer.from_json(args.scorer_table)
    else:
        url = os.environ.get(SCORER_URL_ENV)
        if not url:
            raise CLIError(f"no scorer: pass --scorer-table or set {SCORER_URL_ENV}")
        scorer = RemoteScorer(url, retries=config["retries"])
    result = evaluate_prompts(scorer, load_templates(), texts, gold, LABELS[config["task"]],
                              config["normalization"], config["parallelism"])
    run.path("prompt_eval.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    return result.to_dict()


def cmd_report(args, config, run):
    from .evaluation import EvalReport
    from .report import merged_table, plot_group_means, write_table

    reports = {}
    for path in args.runs:
        file = path / "report.json" if path.is_dir() else path
        if not file.exists():
            raise CLIError(f"{path}: no report.json")
        name = path.name if path.is_dir() else path.stem
        while name in reports:
            name += "'"
        reports[name] = EvalReport.load(file)
    write_table(merged_table(reports), run.path("report.tsv"))
    plot_group_means(reports, run.path("groups.png"))
    return {"runs": list(reports)}


# --- argument parsing --------------------------------------------------------------

def _common(p, config_keys=()):
    p.add_argument("--workdir", type=Path, default=None, help="base directory for relative paths (default: cwd)")
    p.add_argument("--config", type=Path, help="TOML file of flat config keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--dry-run", action="store_true", help="validate config and inputs, write nothing")
    p.add_argument("--merge", choices=["mean", "keep_first"], default=None,
                   help="combine duplicate lexicon rows instead of failing")
    for key, kind in config_keys:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind)


TRAIN_KEYS = [("backend", str), ("model", str), ("learning_rate", float), ("max_epochs", int), ("patience", int), ("dropout", float),
              ("max_length", int), ("batch_size", int), ("dim", int)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexisent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lexicon-normalize", help="rewrite a lexicon on the [-5, 5] scale")
    _common(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--raw", action="store_true", help="treat scores as [0, 1] even without a #scale pragma")
    p.set_defaults(func=cmd_lexicon_normalize, primary="lexicon.tsv", inputs=["input"])

    p = sub.add_parser("lexicon-extend", help="project English scores through translation edges")
    _common(p)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--edges", type=Path, required=True)
    p.add_argument("--targets", required=True, help="comma-separated target language codes")
    p.add_argument("--case-fold", dest="case_fold", action="store_const", const=True)
    p.add_argument("--merge-policy", dest="merge_policy", choices=["mean", "keep_first", "error"])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_lexicon_extend, primary="extended.tsv", inputs=["lexicon", "edges"])

    p = sub.add_parser("lexicon-filter", help="iteratively filter translated entries")
    _common(p, TRAIN_KEYS + [("alpha", float), ("beta", int), ("split_ratio", float), ("max_iterations", int)])
    p.add_argument("--base", type=Path, required=True, help="English lexicon")
    p.add_argument("--candidates", type=Path, required=True, help="translated/projected entries")
    p.add_argument("--cold-start", dest="cold_start", action="store_const", const=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_lexicon_filter, primary="filtered.tsv", inputs=["base", "candidates"])

    p = sub.add_parser("pretrain", help="lexicon-based pretraining")
    _common(p, TRAIN_KEYS)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--objective", choices=["regression", "classification_binary", "classification_3way"])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_pretrain, primary="checkpoint.json", inputs=["lexicon"])

    p = sub.add_parser("finetune", help="sentence-level fine-tuning (full or few-shot data)")
    _common(p, TRAIN_KEYS)
    p.add_argument("--data", type=Path, required=True, help="directory with train/dev[/test].tsv")
    p.add_argument("--base", type=Path, help="pretrained checkpoint to start from")
    p.add_argument("--seeds", type=int, nargs="+", help="run once per seed and average test F1")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_finetune, primary="checkpoint.json", inputs=["data", "base"])

    p = sub.add_parser("fewshot", help="sample a few-shot train/dev split")
    _common(p, [("n_train", int), ("n_dev", int)])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stratified", action="store_const", const=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_fewshot, primary="sample", inputs=["data"])

    p = sub.add_parser("predict", help="zero-shot sentence labels from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="text<TAB>label TSV or one text per line")
    p.add_argument("--task", choices=["binary", "three_way"])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_predict, primary="predictions.jsonl", inputs=["checkpoint", "data"])

    p = sub.add_parser("evaluate", help="weighted macro-F1 per language and group")
    _common(p)
    p.add_argument("--pred", action="append", required=True, metavar="LANG=PATH",
                   help="predictions JSONL for one language; repeat a language for per-seed files")
    p.add_argument("--groups", type=Path, help="JSON with groups, exclusions, ungrouped")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate, primary="report.json", inputs=["groups"])

    p = sub.add_parser("prompt-eval", help="six-template LLM prompting baseline")
    _common(p, [("parallelism", int), ("retries", int)])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--task", choices=["binary", "three_way"])
    p.add_argument("--scorer-table", type=Path, help="JSON table for the offline mock scorer")
    p.add_argument("--normalization", choices=["label", "full"])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_prompt_eval, primary="prompt_eval.json", inputs=["data", "scorer_table"])

    p = sub.add_parser("report", help="merge evaluation reports from several runs")
    _common(p)
    p.add_argument("--runs", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_report, primary="report.tsv", inputs=["runs"])
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (CLIError, ConfigError, FileNotFoundError, ValueError, RuntimeError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    args.workdir = (args.workdir or Path.cwd()).resolve()
    overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS}
    config = load_config(args.workdir / args.config if args.config else None, overrides)

    inputs = {}
    for name in args.inputs:
        value = getattr(args, name, None)
        if value is None:
            continue
        values = value if isinstance(value, list) else [value]
        resolved = [args.workdir / v for v in values]
        for path in resolved:
            if not path.exists():
                raise CLIError(f"--{name.replace('_', '-')}: {path} does not exist")
        setattr(args, name, resolved if isinstance(value, list) else resolved[0])
        for i, path in enumerate(resolved):
            inputs[name if len(resolved) == 1 else f"{name}[{i}]"] = path
    if args.command == "evaluate":
        args.pred_paths = {lang: [args.workdir / p for p in paths] for lang, paths in _lang_paths(args.pred).items()}
        for lang, paths in args.pred_paths.items():
            for i, path in enumerate(paths):
                if not path.exists():
                    raise CLIError(f"--pred {lang}: {path} does not exist")
                inputs[f"pred:{lang}[{i}]"] = path
    if getattr(args, "out", None) is not None:
        args.out = args.workdir / args.out

    if args.dry_run:
        print(json.dumps({"command": args.command, "config": config,
                          "inputs": {k: str(v) for k, v in inputs.items()}}, indent=2))
        return 0
    run = Run(args, config, inputs)
    summary = args.func(args, config, run)
    run.finish()
    print(json.dumps({"run_dir": str(run.dir), **(summary or {})}, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
