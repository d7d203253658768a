"""Command-line interface: one executable, one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
Every run that writes files also writes ``resolved_config.json`` so it can be
replayed exactly; tables are UTF-8 TSV on stdout, logs go to stderr. Commands
that write a report file also render a PNG next to it (``--no-figures`` to
skip). A YAML config file can supply any flag value; precedence is
flag > file > built-in default.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis, corpus as corpus_mod, figures, model as model_mod, selection, synth
from .corpus import EmbeddingIOError, ParseError
from .model import PRESETS, TrainConfig
from .nn import kernel_gradient_checks

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    pass


class VerificationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config_file(path, allowed):
    if path is None:
        return {}
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def _resolve(args, file_cfg, defaults):
    """flag > config file > default, returning a plain dict."""
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    return out


def _write_resolved(out_dir, command, resolved):
    payload = {"command": command, **resolved}
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    (Path(out_dir) / "resolved_config.json").write_text(text, encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _out_dir(resolved):
    out = resolved.get("out_dir")
    if out is None:
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_all_splits(data_dir, vid):
    """Merge every on-disk split of one variety; returns (corpus, split_names)."""
    parts, names = [], []
    for split in corpus_mod.SPLITS:
        paths = corpus_mod.dataset_paths(data_dir, vid, split)
        if paths["conllu"].exists():
            parts.append(corpus_mod.load_variety(data_dir, vid, split))
            names.append(split)
    if not parts:
        raise FileNotFoundError(f"no corpus files for variety {vid!r} under {data_dir}")
    return corpus_mod.merge_corpora(parts, split="train"), names


# ---------------------------------------------------------------------------
# Shared training plumbing

_TRAIN_DEFAULTS = {
    "data_dir": None,
    "sources": None,
    "task": "dep",
    "mode": "dual",
    "lam": 1.0,
    "preset": "mbert-like",
    "lr": None,
    "batch_size": 64,
    "max_epochs": 10,
    "max_steps": 1000,
    "seed": 0,
    "no_inv_loss": False,
    "no_spc_loss": False,
    "hidden_dim": None,
    "arc_dim": 16,
    "eval_every": 10,
    "eval_varieties": [],
    "out_dir": None,
    "no_figures": False,
}


def _add_train_flags(p, with_grid=False):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--sources", nargs="+")
    p.add_argument("--task", choices=model_mod.TASKS)
    p.add_argument("--mode", choices=model_mod.MODES)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-inv-loss", dest="no_inv_loss", action="store_const", const=True)
    p.add_argument("--no-spc-loss", dest="no_spc_loss", action="store_const", const=True)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--arc-dim", dest="arc_dim", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-varieties", dest="eval_varieties", nargs="*",
                   help="extra varieties whose dev split is scored with the result")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--no-figures", dest="no_figures", action="store_const", const=True)
    if with_grid:
        p.add_argument("--grid", help="comma-separated lambda values")


def _resolve_train(args, with_grid=False):
    defaults = dict(_TRAIN_DEFAULTS)
    if with_grid:
        defaults["grid"] = ",".join(str(v) for v in model_mod.DEFAULT_LAMBDA_GRID)
    allowed = set(defaults)
    resolved = _resolve(args, _load_config_file(getattr(args, "config", None), allowed), defaults)
    if not resolved["data_dir"] or not resolved["sources"]:
        raise UsageError("--data-dir and --sources are required")
    if len(resolved["sources"]) > 2:
        raise UsageError("at most two source varieties")
    return resolved


def _train_config(resolved, with_grid=False) -> TrainConfig:
    kwargs = dict(
        lam=float(resolved["lam"]),
        preset=resolved["preset"],
        lr=resolved["lr"],
        batch_size=int(resolved["batch_size"]),
        max_epochs=int(resolved["max_epochs"]),
        max_steps=int(resolved["max_steps"]),
        seed=int(resolved["seed"]),
        mode=resolved["mode"],
        use_inv_loss=not resolved["no_inv_loss"],
        use_spc_loss=not resolved["no_spc_loss"],
        hidden_dim=resolved["hidden_dim"],
        arc_dim=int(resolved["arc_dim"]),
        eval_every=int(resolved["eval_every"]),
    )
    if with_grid:
        grid = resolved["grid"]
        if isinstance(grid, str):
            grid = [float(v) for v in grid.split(",") if v.strip()]
        kwargs["lambda_grid"] = tuple(float(v) for v in grid)
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_train_data(resolved):
    data_dir = resolved["data_dir"]
    sources = [corpus_mod.load_variety(data_dir, vid, "train") for vid in resolved["sources"]]
    dev = [corpus_mod.load_variety(data_dir, vid, "dev") for vid in resolved["sources"]]
    eval_sets = {
        vid: [corpus_mod.load_variety(data_dir, vid, "dev")]
        for vid in resolved["eval_varieties"]
    }
    return sources, dev, eval_sets


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _write_table(path_or_none, header, rows, stdout=True):
    lines = ["\t".join(header)]
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if stdout:
        sys.stdout.write(text)
    if path_or_none is not None:
        Path(path_or_none).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args):
    defaults = {"out_dir": None, "seed": 0, "preset": "triple"}
    resolved = _resolve(args, _load_config_file(args.config, set(defaults)), defaults)
    if not resolved["out_dir"]:
        raise UsageError("--out-dir is required")
    if resolved["preset"] != "triple":
        raise UsageError("only the 'triple' synthesis preset is built in; use the API for custom configs")
    corpora, manifest = synth.make_triple(int(resolved["seed"]))
    out = _out_dir(resolved)
    synth.write_dataset(corpora, manifest, out)
    _write_resolved(out, "synth", resolved)
    _log(f"wrote {len(corpora)} corpora to {out}")
    return EXIT_OK


def cmd_select_sources(args):
    defaults = {
        "data_dir": None, "target": None, "candidates": None,
        "force_distinct": False, "out_dir": None, "no_figures": False,
    }
    resolved = _resolve(args, _load_config_file(args.config, set(defaults)), defaults)
    if not resolved["data_dir"] or not resolved["target"] or not resolved["candidates"]:
        raise UsageError("--data-dir, --target and --candidates are required")
    target, splits = _load_all_splits(resolved["data_dir"], resolved["target"])
    candidates = [_load_all_splits(resolved["data_dir"], vid)[0] for vid in resolved["candidates"]]
    report = selection.select_pair(target, candidates, force_distinct=bool(resolved["force_distinct"]))
    text = selection.format_report(report, sentence_note=f"the {'+'.join(splits)} split(s)")
    sys.stdout.write(text)
    out = _out_dir(resolved)
    if out is not None:
        (out / "selection.tsv").write_text(text, encoding="utf-8")
        _write_resolved(out, "select-sources", resolved)
        if not resolved["no_figures"]:
            figures.save_selection_figure(report, out / "selection.png")
    return EXIT_OK


def _trace_lines(step_stats):
    header = "step\tl_inv\tl_spc\tl_task\tl_total\td_inv_acc\td_spc_acc"
    rows = [
        f"{s.step}\t{s.l_inv:.12g}\t{s.l_spc:.12g}\t{s.l_task:.12g}"
        f"\t{s.l_total:.12g}\t{s.acc_inv:.12g}\t{s.acc_spc:.12g}"
        for s in step_stats
    ]
    return "\n".join([header] + rows) + "\n"


def cmd_train(args):
    resolved = _resolve_train(args)
    config = _train_config(resolved)
    sources, dev, eval_sets = _load_train_data(resolved)
    result = model_mod.train(sources, config, resolved["task"], dev_corpora=dev)
    out = _out_dir(resolved)
    summary = [("sources", "+".join(resolved["sources"])), ("mode", config.mode),
               ("steps", len(result.step_stats)),
               ("best_step", result.best_step), ("dev_" + result.metric_name, result.best_metric)]
    for vid, corpora in eval_sets.items():
        metrics = model_mod.evaluate_model(result.model, corpora)
        summary.append((f"{vid}_{result.metric_name}", metrics[result.metric_name]))
    _write_table(None, [k for k, _ in summary], [[v for _, v in summary]])
    if out is not None:
        (out / "trace.tsv").write_text(_trace_lines(result.step_stats), encoding="utf-8")
        dev_text = "step\t" + result.metric_name + "\n" + "".join(
            f"{step}\t{metric:.12g}\n" for step, metric in result.dev_trace
        )
        (out / "dev_trace.tsv").write_text(dev_text, encoding="utf-8")
        # drop path-valued keys so checkpoints replayed elsewhere stay byte-identical
        portable = {k: v for k, v in resolved.items() if k not in ("out_dir", "data_dir")}
        model_mod.save_checkpoint(out / "checkpoint.vckp", result.model,
                                  extra={"config": _jsonable(portable)})
        _write_resolved(out, "train", resolved)
        if not resolved["no_figures"] and result.step_stats:
            figures.save_trace_figure(result.step_stats, out / "training.png")
    return EXIT_OK


def cmd_evaluate(args):
    defaults = {
        "checkpoint": None, "data_dir": None, "variety": None,
        "split": "test", "out_dir": None, "per_sentence": False,
    }
    resolved = _resolve(args, _load_config_file(args.config, set(defaults)), defaults)
    for key in ("checkpoint", "data_dir", "variety"):
        if not resolved[key]:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    model, _ = model_mod.load_checkpoint(resolved["checkpoint"])
    corpus = corpus_mod.load_variety(resolved["data_dir"], resolved["variety"], resolved["split"])
    metrics = model_mod.evaluate_model(model, [corpus])
    if model.task_kind == "dep":
        header = ["variety", "split", "uas", "las", "sentences", "words"]
        row = [corpus.variety_id, corpus.split, metrics["uas"], metrics["las"],
               metrics["sentences"], metrics["words"]]
    else:
        header = ["variety", "split", "f1", "sentences", "words"]
        row = [corpus.variety_id, corpus.split, metrics["f1"], metrics["sentences"], metrics["words"]]
    out = _out_dir(resolved)
    _write_table(None if out is None else out / "evaluation.tsv", header, [row])
    if out is not None:
        _write_resolved(out, "evaluate", resolved)
        if resolved["per_sentence"]:
            lines = ["sentence\twords\t" + ("correct_heads\tcorrect_labeled" if model.task_kind == "dep" else "correct_tags")]
            for i, sent in enumerate(corpus.sentences):
                per = model_mod.evaluate_model(model, [corpus_mod.VarietyCorpus(
                    corpus.variety_id, [sent], corpus.split)])
                n = len(sent.words)
                if model.task_kind == "dep":
                    lines.append(f"{i}\t{n}\t{round(per['uas'] * n)}\t{round(per['las'] * n)}")
                else:
                    lines.append(f"{i}\t{n}\t{round(per['f1'] * n)}")
            (out / "per_sentence.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_analyze_cka(args):
    defaults = {
        "data_dir": None, "varieties": None, "split": "dev", "checkpoint": None,
        "sample_size": None, "seed": 0, "out_dir": None,
        "dump_features": False, "no_figures": False,
    }
    resolved = _resolve(args, _load_config_file(args.config, set(defaults)), defaults)
    if not resolved["data_dir"] or not resolved["varieties"]:
        raise UsageError("--data-dir and --varieties are required")
    corpora = [corpus_mod.load_variety(resolved["data_dir"], vid, resolved["split"])
               for vid in resolved["varieties"]]
    model = None
    if resolved["checkpoint"]:
        model, _ = model_mod.load_checkpoint(resolved["checkpoint"])
    sample = resolved["sample_size"]
    report = analysis.cka_report(
        model, corpora,
        sample_size=None if sample is None else int(sample),
        seed=int(resolved["seed"]),
        keep_features=bool(resolved["dump_features"]),
    )
    text = analysis.format_report(report)
    sys.stdout.write(text)
    out = _out_dir(resolved)
    if out is not None:
        (out / "cka.tsv").write_text(text, encoding="utf-8")
        _write_resolved(out, "analyze-cka", resolved)
        if resolved["dump_features"]:
            for vid, feats in (report.features or {}).items():
                np.savetxt(out / f"features_{vid}.csv", feats, delimiter=",", fmt="%.10g")
        if not resolved["no_figures"]:
            figures.save_cka_figure(report, out / "cka.png")
    return EXIT_OK


def cmd_gradcheck(args):
    defaults = {"fixtures": 20, "eps": 1e-5, "threshold": 1e-5, "out_dir": None}
    resolved = _resolve(args, _load_config_file(args.config, set(defaults)), defaults)
    fixtures = int(resolved["fixtures"])
    eps = float(resolved["eps"])
    threshold = float(resolved["threshold"])
    rows = []
    worst = 0.0
    for seed in range(fixtures):
        checks = kernel_gradient_checks(seed, eps=eps)
        checks["composite"] = model_mod.composite_gradient_check(seed, eps=eps)
        for name, err in checks.items():
            rows.append([seed, name, err, "ok" if err < threshold else "FAIL"])
            worst = max(worst, err)
    out = _out_dir(resolved)
    _write_table(None if out is None else out / "gradcheck.tsv",
                 ["seed", "check", "max_rel_error", "status"], rows)
    if out is not None:
        _write_resolved(out, "gradcheck", resolved)
    _log(f"worst relative error {worst:.3e} over {fixtures} fixtures (threshold {threshold:g})")
    if worst >= threshold:
        raise VerificationFailure(f"gradient check failed: {worst:.3e} >= {threshold:g}")
    return EXIT_OK


def cmd_sweep_lambda(args):
    resolved = _resolve_train(args, with_grid=True)
    config = _train_config(resolved, with_grid=True)
    sources, dev, eval_sets = _load_train_data(resolved)
    rows = model_mod.lambda_sweep(sources, config, resolved["task"], dev_corpora=dev,
                                  eval_sets=eval_sets)
    metric_cols = ["dev_metric"] + list(eval_sets)
    table_rows = [[r["lambda"]] + [r.get(c) for c in metric_cols] for r in rows]
    out = _out_dir(resolved)
    _write_table(None if out is None else out / "sweep.tsv",
                 ["lambda"] + metric_cols, table_rows)
    if out is not None:
        _write_resolved(out, "sweep-lambda", resolved)
        if not resolved["no_figures"]:
            figures.save_sweep_figure(rows, metric_cols, out / "sweep.png")
    return EXIT_OK


def cmd_ablate(args):
    resolved = _resolve_train(args)
    config = _train_config(resolved)
    sources, dev, eval_sets = _load_train_data(resolved)
    rows = model_mod.ablation_suite(sources, config, resolved["task"], dev_corpora=dev,
                                    eval_sets=eval_sets)
    metric_cols = ["dev_metric"] + list(eval_sets)
    table_rows = [[r["label"]] + [r.get(c) for c in metric_cols] for r in rows]
    out = _out_dir(resolved)
    _write_table(None if out is None else out / "ablation.tsv",
                 ["variant"] + metric_cols, table_rows)
    if out is not None:
        _write_resolved(out, "ablate", resolved)
        if not resolved["no_figures"]:
            figures.save_ablation_figure(rows, metric_cols, out / "ablation.png")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="varietylab", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=["triple"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-sources", help="rank source candidates for a target variety")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--target")
    p.add_argument("--candidates", nargs="+")
    p.add_argument("--force-distinct", dest="force_distinct", action="store_const", const=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--no-figures", dest="no_figures", action="store_const", const=True)
    p.set_defaults(func=cmd_select_sources)

    p = sub.add_parser("train", help="train one model on a source pair")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one corpus")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--variety")
    p.add_argument("--split", choices=corpus_mod.SPLITS)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--per-sentence", dest="per_sentence", action="store_const", const=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-cka", help="pairwise representation similarity")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--varieties", nargs="+")
    p.add_argument("--split", choices=corpus_mod.SPLITS)
    p.add_argument("--checkpoint")
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--dump-features", dest="dump_features", action="store_const", const=True)
    p.add_argument("--no-figures", dest="no_figures", action="store_const", const=True)
    p.set_defaults(func=cmd_analyze_cka)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all kernels")
    p.add_argument("--config")
    p.add_argument("--fixtures", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-lambda", help="one training run per reversal-strength value")
    _add_train_flags(p, with_grid=True)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("ablate", help="loss-component ablation table")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _log(f"error: {exc}")
        return EXIT_USAGE
    except VerificationFailure as exc:
        _log(f"verification failure: {exc}")
        return EXIT_VERIFY
    except (ParseError, EmbeddingIOError, FileNotFoundError, ValueError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
