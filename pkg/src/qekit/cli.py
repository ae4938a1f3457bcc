"""Command-line entry point: ``qekit <subcommand> [flags]``.

Settings come from ``--config FILE`` (a flat JSON object whose keys are flag
names with dashes replaced by underscores) and are overridden by flags.
Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from qekit import __version__
from qekit.data import Dataset, FormatError, atomic_write, iter_jsonl, load_jsonl, word_ranges, write_jsonl, write_records
from qekit.data import ErrorSpan, Severity

log = logging.getLogger("qekit")


class UsageError(ValueError):
    pass


DEFAULTS = {
    "out": "out",
    "n_train": 2000,
    "n_dev": 500,
    "vocab_size": 500,
    "max_len": 12,
    "d": 32,
    "layers": 4,
    "lambda_sl": 1.0,
    "lambda_wl": 1.0,
    "class_weights": None,
    "n_classes": 2,
    "lr": 1e-3,
    "batch_size": 32,
    "max_epochs": 50,
    "patience": 10,
    "hidden_size": None,
    "name": None,
    "level": "sent",
    "objective": None,
    "budget": 200,
    "threshold": 0.5,
    "severity_mode": "major",
    "task": "sent",
}

NEEDS_SEED = {"synth", "encode", "train", "ensemble-search"}


def _setup_logging():
    level = os.environ.get("QEKIT_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


class Settings:
    """Flag values, falling back to the config file, then to DEFAULTS."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = vars(args)
        self._config = config

    @property
    def explicit(self) -> set[str]:
        """Keys set by a flag or the config file."""
        return {k for k, v in self._args.items() if v is not None} | set(self._config)

    def get(self, key, default=None):
        val = self._args.get(key)
        if val is not None:
            return val
        if key in self._config:
            return self._config[key]
        return DEFAULTS.get(key, default)

    def require(self, key):
        val = self.get(key)
        if val is None:
            raise UsageError(f"missing required setting '{key}' (flag --{key.replace('_', '-')} or config key)")
        return val

    def path(self, key, must_exist=True) -> Path:
        p = Path(self.require(key))
        if must_exist and not p.exists():
            raise UsageError(f"{key}: path does not exist: {p}")
        return p

    def number(self, key, kind=float):
        val = self.get(key)
        if val is None:
            return None
        try:
            return kind(val)
        except (TypeError, ValueError):
            raise UsageError(f"{key}: expected {kind.__name__}, got {val!r}") from None


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise UsageError(f"config: cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config: invalid JSON on line {e.lineno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config: top level must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _out_dir(st: Settings) -> Path:
    out = Path(st.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _float_list(val, key) -> list[float]:
    if isinstance(val, str):
        val = [v for v in val.replace(",", " ").split()]
    try:
        return [float(v) for v in val]
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected a list of numbers, got {val!r}") from None


# ---------------------------------------------------------------------------
# synth / encode


def cmd_synth(st: Settings, seed: int) -> int:
    from qekit.encoder import EncoderConfig, write_hidden_set
    from qekit.synth import synth_generate, split_dataset

    n_train, n_dev = st.number("n_train", int), st.number("n_dev", int)
    enc = EncoderConfig(d=st.number("d", int), L=st.number("layers", int), seed=seed)
    ds, hidden, secret = synth_generate(
        n_train + n_dev, st.number("vocab_size", int), st.number("max_len", int), seed, enc
    )
    tr, dv = split_dataset(ds, n_train)
    out = _out_dir(st)
    write_jsonl(tr, out / "train.jsonl")
    write_jsonl(dv, out / "dev.jsonl")
    manifest = write_hidden_set(hidden, out / "hidden")
    atomic_write(
        out / "secret.json",
        json.dumps({"phi": secret.phi.tolist(), "beta": secret.beta.tolist(), "lam": secret.lam}, indent=2) + "\n",
    )
    log.info("wrote %d train / %d dev samples and %s", len(tr), len(dv), manifest)
    return 0


def cmd_encode(st: Settings, seed: int) -> int:
    from qekit.encoder import EncoderConfig, encode_toy, write_hidden_set

    paths = st.require("data")
    paths = [paths] if isinstance(paths, str) else list(paths)
    enc = EncoderConfig(d=st.number("d", int), L=st.number("layers", int), seed=seed)
    hidden = {}
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"data: path does not exist: {p}")
        for s in load_jsonl(p):
            if s.id in hidden:
                raise UsageError(f"data: sample id {s.id!r} appears in more than one file")
            hidden[s.id] = encode_toy(s, enc)
    write_hidden_set(hidden, _out_dir(st) / "hidden")
    return 0


# ---------------------------------------------------------------------------
# train / predict


def _loss_config(st: Settings):
    from qekit.training import LossConfig

    n_classes = st.number("n_classes", int)
    cw = st.get("class_weights")
    weights = _float_list(cw, "class_weights") if cw is not None else [1.0] * n_classes
    if len(weights) != n_classes:
        raise UsageError(f"class_weights: {len(weights)} entries for n_classes={n_classes}")
    return LossConfig(st.number("lambda_sl"), st.number("lambda_wl"), tuple(weights))


def cmd_train(st: Settings, seed: int) -> int:
    from qekit.encoder import load_hidden_for
    from qekit.model import save_checkpoint
    from qekit.training import TrainConfig, check_supervision, train, write_history

    loss_cfg = _loss_config(st)
    max_epochs = st.number("max_epochs", int)
    patience = st.number("patience", int)
    if "patience" not in st.explicit:
        # the default patience shrinks with short epoch budgets
        patience = max(1, min(patience, max_epochs))
    train_cfg = TrainConfig(
        learning_rate=st.number("lr"),
        batch_size=st.number("batch_size", int),
        max_epochs=max_epochs,
        patience=patience,
        seed=seed,
        hidden_size=st.number("hidden_size", int),
    )
    train_set = load_jsonl(st.path("train"), "train")
    dev_path = st.get("dev")
    dev_set = load_jsonl(st.path("dev"), "dev") if dev_path is not None else None
    check_supervision(train_set, loss_cfg, "train")
    if dev_set is not None:
        check_supervision(dev_set, loss_cfg, "dev")
    ids = train_set.ids + (dev_set.ids if dev_set is not None else [])
    hidden = load_hidden_for(ids, st.path("hidden"))

    params, history = train(train_set, dev_set, hidden, loss_cfg, train_cfg)
    out = _out_dir(st)
    name = st.get("name") or "model"
    meta = {
        "seed": seed,
        "lambda_sl": loss_cfg.lambda_sl,
        "lambda_wl": loss_cfg.lambda_wl,
        "class_weights": list(loss_cfg.class_weights),
        "epochs_run": len(history),
        "selected_epoch": next((h["epoch"] for h in history if h["selected"]), 0),
    }
    save_checkpoint(params, out / f"{name}.ckpt", meta)
    write_history(history, out / f"{name}.history.jsonl")
    return 0


def predictions_for(params, dataset: Dataset, hidden) -> list[dict]:
    from qekit.training import forward, make_batch, predict_tags

    if len(dataset) == 0:
        return []
    batch = make_batch(list(dataset), hidden, params.n_classes)
    scores, probs = forward(params, batch)
    tags = predict_tags(probs)
    records = []
    for k, s in enumerate(dataset):
        a, b = batch.offsets[k], batch.offsets[k + 1]
        rec = {
            "id": s.id,
            "lp": s.lp,
            "score": float(np.clip(scores[k], 0.0, 1.0)),
            "tags": ["BAD" if t else "OK" for t in tags[a:b]],
        }
        if params.n_classes == 3:
            rec["severities"] = [Severity(int(c)).label for c in np.argmax(probs[a:b], axis=1)]
            rec["severity_probs"] = probs[a:b].tolist()
        records.append(rec)
    return records


def cmd_predict(st: Settings, seed) -> int:
    from qekit.encoder import load_hidden_for
    from qekit.model import load_checkpoint

    params, _ = load_checkpoint(st.path("checkpoint"))
    dataset = load_jsonl(st.path("data"), "test")
    hidden = load_hidden_for(dataset.ids, st.path("hidden")) if len(dataset) else {}
    for sid, h in hidden.items():
        if h.d != params.d or h.n_layers != params.n_layers:
            raise UsageError(
                f"hidden states for {sid!r} have {h.n_layers} layers x d={h.d}; "
                f"checkpoint expects {params.n_layers} x d={params.d}"
            )
    records = predictions_for(params, dataset, hidden)
    write_records(records, _out_dir(st) / f"{st.get('name') or 'predictions'}.jsonl")
    return 0


# ---------------------------------------------------------------------------
# prediction files


def read_predictions(path, need: str) -> dict[str, dict]:
    """Prediction records keyed by id; ``need`` names a field every record must carry."""
    out = {}
    for lineno, rec in iter_jsonl(path):
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise FormatError("record needs a string 'id'", lineno, "id")
        if rec.get(need) is None:
            raise FormatError(f"missing '{need}'", lineno, need)
        if need == "score" and (isinstance(rec["score"], bool) or not isinstance(rec["score"], (int, float))):
            raise FormatError("score must be a number", lineno, "score")
        if need == "tags":
            if not isinstance(rec["tags"], list) or any(t not in ("OK", "BAD") for t in rec["tags"]):
                raise FormatError("tags must be a list of 'OK'/'BAD'", lineno, "tags")
        if need == "severity_probs":
            sp = rec["severity_probs"]
            if not isinstance(sp, list) or any(not isinstance(r, list) or len(r) != 3 for r in sp):
                raise FormatError("severity_probs must be a list of 3-vectors", lineno, "severity_probs")
        if rec["id"] in out:
            raise FormatError(f"duplicate id {rec['id']!r}", lineno, "id")
        out[rec["id"]] = rec
    return out


def _parse_named(items, key) -> dict[str, Path]:
    out = {}
    if isinstance(items, dict):
        items = [f"{k}={v}" for k, v in items.items()]
    for it in items or []:
        name, sep, path = str(it).partition("=")
        if not sep or not name or not path:
            raise UsageError(f"{key}: expected NAME=PATH, got {it!r}")
        if name in out:
            raise UsageError(f"{key}: name {name!r} given twice")
        if not Path(path).exists():
            raise UsageError(f"{key}: path does not exist: {path}")
        out[name] = Path(path)
    return out


def _tag_ints(tags) -> list[int]:
    return [1 if t == "BAD" else 0 for t in tags]


# ---------------------------------------------------------------------------
# ensemble-search


def cmd_ensemble_search(st: Settings, seed: int) -> int:
    from qekit.ensemble import combine_sentence, combine_tags, search_by_lp, write_weights

    level = st.get("level")
    if level not in ("sent", "word"):
        raise UsageError(f"level: expected 'sent' or 'word', got {level!r}")
    objective = st.get("objective") or ("spearman" if level == "sent" else "mcc")
    preds_paths = _parse_named(st.require("pred"), "pred")
    if not preds_paths:
        raise UsageError("pred: give at least one MODEL=PATH")
    gold_ds = load_jsonl(st.path("gold"), "dev")
    field = "score" if level == "sent" else "tags"
    raw = {m: read_predictions(p, field) for m, p in preds_paths.items()}
    ids = gold_ds.ids
    preds = {}
    for m, recs in raw.items():
        missing = [i for i in ids if i not in recs]
        if missing:
            raise UsageError(f"pred {m}: no prediction for sample {missing[0]!r}")
        preds[m] = {i: (recs[i]["score"] if level == "sent" else _tag_ints(recs[i]["tags"])) for i in ids}
    if level == "sent":
        gold = {s.id: s.score for s in gold_ds}
    else:
        gold = {s.id: (None if s.tags is None else [int(t) for t in s.tags]) for s in gold_ds}
    lp_of = {s.id: s.lp for s in gold_ds}
    weights = search_by_lp(
        preds, gold, lp_of, objective, st.number("budget", int), seed, st.number("threshold")
    )
    out = _out_dir(st)
    write_weights(weights, out / f"{level}_weights.json")

    records = []
    for lp, w in weights.items():
        keep = [i for i in ids if lp_of[i] == lp]
        sub = {m: {i: preds[m][i] for i in keep} for m in preds}
        if level == "sent":
            combo = combine_sentence(sub, w)
            records += [{"id": i, "lp": lp, "score": combo[i]} for i in keep]
        else:
            combo = combine_tags(sub, w, threshold=st.number("threshold"))
            records += [{"id": i, "lp": lp, "tags": ["BAD" if t else "OK" for t in combo[i]]} for i in keep]
    order = {i: k for k, i in enumerate(ids)}
    records.sort(key=lambda r: order[r["id"]])
    write_records(records, out / f"{level}_ensemble.jsonl")
    _emit({lp: w.to_json() for lp, w in weights.items()})
    return 0


# ---------------------------------------------------------------------------
# spanify / channel-weights


def _reference_scores(path) -> dict[str, float]:
    out = {}
    for lineno, rec in iter_jsonl(path):
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise FormatError("record needs a string 'id'", lineno, "id")
        val = rec.get("reference_score")
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise FormatError("reference_score must be a number", lineno, "reference_score")
        out[rec["id"]] = float(val)
    return out


def cmd_spanify(st: Settings, seed) -> int:
    from qekit.span import SeverityMode, channel_weights, combine_channels, labels_to_spans, tags_to_spans

    dataset = load_jsonl(st.path("data"), "test")
    channels = _parse_named(st.get("channel"), "channel")
    records = []
    if channels:
        unknown = set(channels) - {"src", "ref", "uni"}
        if unknown:
            raise UsageError(f"channel: unknown channel {sorted(unknown)[0]!r} (use src, ref, uni)")
        ch_preds = {name: read_predictions(p, "severity_probs") for name, p in channels.items()}
        ref_scores = _reference_scores(st.path("reference_scores")) if st.get("reference_scores") else {}
        for s in dataset:
            ranges = word_ranges(s.mt)
            dists = {}
            for name, recs in ch_preds.items():
                if s.id not in recs:
                    raise UsageError(f"channel {name}: no prediction for sample {s.id!r}")
                dists[name] = np.asarray(recs[s.id]["severity_probs"], dtype=np.float64)
                if dists[name].shape[0] != len(ranges):
                    raise UsageError(f"channel {name}: {dists[name].shape[0]} tokens for sample {s.id!r}, expected {len(ranges)}")
            # without a reference score the pseudo-reference is untrusted
            w = channel_weights(ref_scores.get(s.id, 0.0))
            labels = np.argmax(combine_channels(dists, w), axis=1)
            spans = labels_to_spans(labels, ranges)
            records.append({"id": s.id, "spans": [sp.to_json() for sp in spans]})
    else:
        mode = st.get("severity_mode")
        try:
            mode = SeverityMode(mode)
        except ValueError:
            raise UsageError(f"severity_mode: expected 'minor' or 'major', got {mode!r}") from None
        preds = read_predictions(st.path("pred"), "tags")
        for s in dataset:
            if s.id not in preds:
                raise UsageError(f"pred: no prediction for sample {s.id!r}")
            ranges = word_ranges(s.mt)
            tags = preds[s.id]["tags"]
            if len(tags) != len(ranges):
                raise UsageError(f"pred: {len(tags)} tags for sample {s.id!r}, expected {len(ranges)}")
            spans = tags_to_spans(tags, ranges, mode)
            records.append({"id": s.id, "spans": [sp.to_json() for sp in spans]})
    write_records(records, _out_dir(st) / f"{st.get('name') or 'spans'}.jsonl")
    return 0


def cmd_channel_weights(st: Settings, seed) -> int:
    from qekit.span import channel_weights

    items = []
    if st.get("scores"):
        items = list(_reference_scores(st.path("scores")).items())
    values = st.get("values")
    if values is not None:
        items += [(None, v) for v in _float_list(values, "values")]
    if not items:
        raise UsageError("give --scores FILE or --values X [X ...]")
    records = []
    for sid, score in items:
        try:
            cw = channel_weights(score)
        except ValueError as e:
            raise UsageError(str(e)) from None
        rec = {} if sid is None else {"id": sid}
        rec.update(
            reference_score=score,
            qe_only=cw.qe_only,
            src_weight=cw.src_weight,
            ref_weight=cw.ref_weight,
            uni_weight=cw.uni_weight,
        )
        records.append(rec)
    write_records(records, _out_dir(st) / "channel_weights.jsonl")
    for r in records:
        sys.stdout.write(json.dumps(r) + "\n")
    return 0


# ---------------------------------------------------------------------------
# score


def _safe(fn, *a):
    from qekit.metrics import UndefinedCorrelation

    try:
        return fn(*a)
    except UndefinedCorrelation:
        return None


def score_report(task: str, gold: Dataset, preds: dict[str, dict]) -> dict[str, dict[str, float | None]]:
    from qekit import metrics

    report: dict[str, dict] = {}
    for lp, samples in sorted(gold.by_lp().items()):
        for s in samples:
            if s.id not in preds:
                raise UsageError(f"pred: no prediction for sample {s.id!r}")
        if task == "sent":
            if any(s.score is None for s in samples):
                raise UsageError(f"gold: samples in {lp} lack 'score'")
            x = [preds[s.id]["score"] for s in samples]
            y = [s.score for s in samples]
            report[lp] = {
                "spearman": _safe(metrics.spearman, x, y),
                "pearson": _safe(metrics.pearson, x, y),
                "kendall": _safe(metrics.kendall, x, y),
            }
        elif task == "word":
            if any(s.tags is None for s in samples):
                raise UsageError(f"gold: samples in {lp} lack 'tags'")
            p, g = [], []
            for s in samples:
                pt = _tag_ints(preds[s.id]["tags"])
                if len(pt) != len(s.tags):
                    raise UsageError(f"pred: {len(pt)} tags for sample {s.id!r}, expected {len(s.tags)}")
                p.append(pt)
                g.append([int(t) for t in s.tags])
            report[lp] = {
                "mcc": metrics.mcc(p, g),
                "f1_ok": metrics.f1_class(p, g, "OK"),
                "f1_bad": metrics.f1_class(p, g, "BAD"),
            }
        else:
            if any(s.spans is None for s in samples):
                raise UsageError(f"gold: samples in {lp} lack 'spans'")
            items = []
            for s in samples:
                try:
                    pred_spans = [
                        ErrorSpan(int(sp["start"]), int(sp["end"]), Severity.parse(sp["severity"]))
                        for sp in preds[s.id]["spans"]
                    ]
                except (KeyError, TypeError, ValueError):
                    raise UsageError(f"pred: malformed spans for sample {s.id!r}") from None
                items.append((pred_spans, list(s.spans), len(s.mt)))
            sc = metrics.span_f1_corpus(items)
            report[lp] = {"precision": sc.precision, "recall": sc.recall, "f1": sc.f1}
    if report:
        metric_names = next(iter(report.values())).keys()
        avg = {}
        for m in metric_names:
            vals = [r[m] for r in report.values() if r[m] is not None]
            avg[m] = float(np.mean(vals)) if vals else None
        report["avg"] = avg
    return report


def cmd_score(st: Settings, seed) -> int:
    task = st.get("task")
    if task not in ("sent", "word", "span"):
        raise UsageError(f"task: expected sent, word or span, got {task!r}")
    gold = load_jsonl(st.path("gold"), "test")
    need = {"sent": "score", "word": "tags", "span": "spans"}[task]
    preds = read_predictions(st.path("pred"), need)
    report = score_report(task, gold, preds)
    out = _out_dir(st)
    name = st.get("name") or f"scores_{task}"
    atomic_write(out / f"{name}.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = ["lp\tmetric\tvalue"]
    for lp, mets in report.items():
        for m, v in mets.items():
            lines.append(f"{lp}\t{m}\t{'' if v is None else repr(float(v))}")
    atomic_write(out / f"{name}.tsv", "\n".join(lines) + "\n")
    _emit(report)
    return 0


# ---------------------------------------------------------------------------
# parser


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "train": cmd_train,
    "predict": cmd_predict,
    "ensemble-search": cmd_ensemble_search,
    "spanify": cmd_spanify,
    "channel-weights": cmd_channel_weights,
    "score": cmd_score,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="JSON settings file; flags override it")
    g.add_argument("--seed", type=int, metavar="INT", default=argparse.SUPPRESS, help="top-level random seed")
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory (default: out)")

    parser = argparse.ArgumentParser(prog="qekit", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"qekit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus and its hidden states")
    p.add_argument("--n-train", type=int, help="training samples (default 2000)")
    p.add_argument("--n-dev", type=int, help="dev samples (default 500)")
    p.add_argument("--vocab-size", type=int, help="words per language (default 500)")
    p.add_argument("--max-len", type=int, help="maximum words per sentence (default 12)")
    p.add_argument("--d", type=int, help="hidden size (default 32)")
    p.add_argument("--layers", type=int, help="encoder layers L, excluding embeddings (default 4)")

    p = sub.add_parser("encode", parents=[common], help="toy-encode JSONL datasets into hidden-state files")
    p.add_argument("--data", action="append", metavar="PATH", help="dataset JSONL (repeatable)")
    p.add_argument("--d", type=int, help="hidden size (default 32)")
    p.add_argument("--layers", type=int, help="encoder layers L (default 4)")

    p = sub.add_parser("train", parents=[common], help="train the sentence and word heads")
    p.add_argument("--train", metavar="PATH", help="training dataset JSONL")
    p.add_argument("--dev", metavar="PATH", help="dev dataset JSONL used for model selection")
    p.add_argument("--hidden", metavar="PATH", help="hidden-state manifest JSONL covering train and dev")
    p.add_argument("--lambda-sl", type=float, help="sentence loss weight (default 1)")
    p.add_argument("--lambda-wl", type=float, help="word loss weight (default 1)")
    p.add_argument("--n-classes", type=int, choices=(2, 3), help="2 = OK/BAD tags, 3 = OK/MINOR/MAJOR from spans")
    p.add_argument("--class-weights", metavar="W,W[,W]", help="per-class word loss weights (default all 1)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    p.add_argument("--max-epochs", type=int, help="epoch budget (default 50)")
    p.add_argument("--patience", type=int, help="epochs without dev improvement before stopping (default 10)")
    p.add_argument("--hidden-size", type=int, help="sentence head hidden units (default d/2)")
    p.add_argument("--name", help="output file stem (default model)")

    p = sub.add_parser("predict", parents=[common], help="write per-sample scores and word tags")
    p.add_argument("--checkpoint", metavar="PATH", help="model checkpoint")
    p.add_argument("--data", metavar="PATH", help="dataset JSONL")
    p.add_argument("--hidden", metavar="PATH", help="hidden-state manifest JSONL")
    p.add_argument("--name", help="output file stem (default predictions)")

    p = sub.add_parser("ensemble-search", parents=[common], help="search per-LP ensemble weights on dev")
    p.add_argument("--level", choices=("sent", "word"), help="ensemble scores or tags (default sent)")
    p.add_argument("--pred", action="append", metavar="MODEL=PATH", help="prediction file of one model (repeatable)")
    p.add_argument("--gold", metavar="PATH", help="dev dataset JSONL with gold labels")
    p.add_argument("--objective", choices=("spearman", "mcc"), help="default: spearman for sent, mcc for word")
    p.add_argument("--budget", type=int, help="random candidates (default 200)")
    p.add_argument("--threshold", type=float, help="BAD decision threshold on the combined tag score (default 0.5)")

    p = sub.add_parser("spanify", parents=[common], help="turn word tags or channel outputs into error spans")
    p.add_argument("--data", metavar="PATH", help="dataset JSONL providing the translations")
    p.add_argument("--pred", metavar="PATH", help="prediction JSONL with 'tags'")
    p.add_argument("--severity-mode", choices=("minor", "major"), help="severity for every span (default major)")
    p.add_argument("--channel", action="append", metavar="NAME=PATH", help="src/ref/uni prediction file with 'severity_probs' (repeatable)")
    p.add_argument("--reference-scores", metavar="PATH", help="JSONL of {id, reference_score} for channel weighting")
    p.add_argument("--name", help="output file stem (default spans)")

    p = sub.add_parser("channel-weights", parents=[common], help="channel weights from pseudo-reference scores")
    p.add_argument("--scores", metavar="PATH", help="JSONL of {id, reference_score}")
    p.add_argument("--values", type=float, nargs="+", metavar="X", help="reference scores given inline")

    p = sub.add_parser("score", parents=[common], help="evaluate predictions against gold labels")
    p.add_argument("--task", choices=("sent", "word", "span"), help="metric suite (default sent)")
    p.add_argument("--pred", metavar="PATH", help="prediction JSONL")
    p.add_argument("--gold", metavar="PATH", help="gold dataset JSONL")
    p.add_argument("--name", help="output file stem (default scores_<task>)")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    try:
        config = _load_config(getattr(args, "config", None))
        st = Settings(args, config)
        seed = st.get("seed")
        if seed is not None:
            try:
                seed = int(seed)
            except (TypeError, ValueError):
                raise UsageError(f"seed: expected an integer, got {seed!r}") from None
        elif args.command in NEEDS_SEED:
            raise UsageError("seed: --seed (or config key 'seed') is required")
        return COMMANDS[args.command](st, seed)
    except ValueError as e:
        # FormatError, ConfigError and UsageError all derive from ValueError
        print(f"qekit {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"qekit {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
