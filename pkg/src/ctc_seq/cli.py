"""Command-line front end: ``ctc-seq {ingest,tokenizer,features,train,decode,eval}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 contract violation.
Settings resolve as command-line flag, then ``--config`` (flat JSON), then
built-in default. ``CTC_SEQ_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys

import numpy as np

from . import corpus, features, metrics, model, plotting, tokenize
from .ctc import beam_search_decode, greedy_decode, sequence_log_prob
from .errors import ContractViolation, DataError

logger = logging.getLogger("ctc_seq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONTRACT = 0, 2, 3, 4
INFEASIBLE_ABORT_RATE = 0.5


class UsageError(Exception):
    pass


_FEATURE_FIELDS = {f.name: f for f in dataclasses.fields(features.FeatureConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(model.TrainConfig) if f.name != "seed"}


def _bool(text):
    if isinstance(text, bool):
        return text
    lowered = str(text).lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _field_type(f):
    default = f.default
    if isinstance(default, bool):
        return _bool
    return type(default)


def _add_config_flags(parser, fields):
    for name, f in fields.items():
        parser.add_argument("--" + name.replace("_", "-"), dest=name, type=_field_type(f),
                            default=None, help=f"(default {f.default})")


def _setting(args, name, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return args.config_values.get(name, default)


def _feature_config(args):
    kw = {name: _field_type(f)(_setting(args, name, f.default)) for name, f in _FEATURE_FIELDS.items()}
    return features.FeatureConfig(**kw)


def _train_config(args):
    kw = {name: _field_type(f)(_setting(args, name, f.default)) for name, f in _TRAIN_FIELDS.items()}
    return model.TrainConfig(seed=int(_setting(args, "seed", 0)), **kw)


def _require_file(path, what):
    if not path:
        raise UsageError(f"{what} is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} {path!r} does not exist")
    return path


def _out_dir(args):
    out = _setting(args, "out_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


# -- ingest ------------------------------------------------------------------

def _clip_stats(utts, durations):
    chars, syllables = set(), set()
    n_chars = n_syl = 0
    for u in utts:
        c, s = tokenize.char_tokenize(u.transcript), tokenize.syllable_tokenize(u.transcript)
        chars.update(c)
        syllables.update(s)
        n_chars += len(c)
        n_syl += len(s)
    durs = [durations[u.clip_id] for u in utts]
    n = len(utts)
    return {
        "total_clips": n,
        "total_duration_s": float(sum(durs)),
        "mean_clip_duration_s": float(sum(durs) / n) if n else 0.0,
        "min_clip_duration_s": float(min(durs)) if n else 0.0,
        "max_clip_duration_s": float(max(durs)) if n else 0.0,
        "mean_characters_per_clip": n_chars / n if n else 0.0,
        "mean_syllables_per_clip": n_syl / n if n else 0.0,
        "distinct_characters": len(chars),
        "distinct_syllables": len(syllables),
        "speakers": sorted({u.speaker_id for u in utts}),
    }


def cmd_ingest(args):
    manifest = _require_file(args.manifest, "manifest")
    out = _out_dir(args)
    seed = int(_setting(args, "seed", 0))
    ratios = tuple(_setting(args, "ratios", corpus.DEFAULT_RATIOS))
    utts = corpus.load_manifest(manifest)
    good, rejects, durations = [], [], {}
    for u in utts:
        try:
            durations[u.clip_id] = corpus.read_wav(u.audio_path).duration_s
        except (OSError, DataError) as exc:
            logger.warning("rejecting %s: %s", u.clip_id, exc)
            rejects.append((u.clip_id, u.audio_path, str(exc)))
            continue
        good.append(u)
    try:
        split = corpus.split_corpus(good, ratios, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for name, part in split.parts().items():
        corpus.write_manifest(os.path.join(out, f"{name}.tsv"), part)
    _write_text(os.path.join(out, "rejects.tsv"),
                "".join(f"{cid}\t{path}\t{why}\n" for cid, path, why in rejects))
    stats = {
        "corpus": _clip_stats(good, durations),
        "splits": {name: _clip_stats(part, durations) for name, part in split.parts().items()},
        "rejected_clips": len(rejects),
        "seed": seed,
        "ratios": list(ratios),
        "warnings": split.warnings,
    }
    _write_json(os.path.join(out, "stats.json"), stats)
    print(f"train {len(split.train)}  dev {len(split.dev)}  test {len(split.test)}  "
          f"rejected {len(rejects)}")
    return EXIT_OK


# -- tokenizer ---------------------------------------------------------------

def _resolve_kind(args):
    kind = _setting(args, "kind") or _setting(args, "tokenizer")
    if not kind:
        raise UsageError("tokenizer kind is required (char, syllable or bpe)")
    size = _setting(args, "size")
    if kind == "bpe":
        if size is None:
            raise UsageError("bpe tokenizer needs --size (e.g. 100, 300 or 500)")
        kind = f"bpe:{int(size)}"
    try:
        tokenize.parse_kind(kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return kind


def cmd_tokenizer(args):
    split = _require_file(args.split, "--split")
    out = _out_dir(args)
    kind = _resolve_kind(args)
    texts = [u.transcript for u in corpus.load_manifest(split)]
    if not texts:
        raise DataError(f"{split} holds no utterances")
    base, size = tokenize.parse_kind(kind)
    if base == "bpe":
        try:
            bpe = tokenize.bpe_train(texts, size)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        tokenize.save_bpe(os.path.join(out, "bpe.model"), bpe)
        vocab = tokenize.build_vocab([bpe.symbols], extra=[tokenize.UNK])
    else:
        tok = tokenize.Tokenizer(kind)
        vocab = tokenize.build_vocab(tok.tokenize(t) for t in texts)
    vocab.save(os.path.join(out, "vocab.txt"))
    print(f"{kind}: {len(vocab)} tokens (+ blank)")
    return EXIT_OK


def _load_tokenizer(args, kind):
    if kind.startswith("bpe:"):
        path = _require_file(_setting(args, "bpe_model"), "--bpe-model")
        return tokenize.Tokenizer(kind, tokenize.load_bpe(path))
    return tokenize.Tokenizer(kind)


# -- features ----------------------------------------------------------------

def _inputs(args):
    """Utterances named by --wav or --manifest."""
    wav, manifest = _setting(args, "wav"), _setting(args, "manifest")
    if bool(wav) == bool(manifest):
        raise UsageError("give exactly one of --wav or --manifest")
    if wav:
        _require_file(wav, "--wav")
        clip_id = os.path.splitext(os.path.basename(wav))[0]
        return [corpus.Utterance(clip_id, wav, "", "")]
    _require_file(manifest, "--manifest")
    return sorted(corpus.load_manifest(manifest), key=lambda u: u.clip_id)


def _extract(utt, cfg, factor):
    feat = features.log_spectrogram(corpus.read_wav(utt.audio_path), cfg)
    return features.downsample_time(feat, factor).frames


def cmd_features(args):
    out = _out_dir(args)
    cfg = _feature_config(args)
    factor = int(_setting(args, "downsample_factor", 1))
    for utt in _inputs(args):
        frames = _extract(utt, cfg, factor)
        features.write_features(os.path.join(out, utt.clip_id + ".ftrs"), frames)
        if _setting(args, "plot", False):
            plotting.plot_features(frames, os.path.join(out, utt.clip_id + ".png"), utt.clip_id)
        print(f"{utt.clip_id}\t{frames.shape[0]}\t{frames.shape[1]}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _examples(utts, tok, vocab, cfg, factor, skipped):
    out = []
    for u in utts:
        try:
            labels = vocab.encode(tok.tokenize(u.transcript))
        except DataError as exc:
            logger.warning("skipping %s: %s", u.clip_id, exc)
            skipped.append((u.clip_id, str(exc)))
            continue
        out.append(model.Example(u.clip_id, _extract(u, cfg, factor), labels, u.transcript))
    return out


def _history_csv(history):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "dev_loss", "dev_cer", "lr"])
    for r in history:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.dev_loss), repr(r.dev_cer), repr(r.lr)])
    return buf.getvalue()


def cmd_train(args):
    train_path = _require_file(_setting(args, "train"), "--train")
    dev_path = _require_file(_setting(args, "dev"), "--dev")
    vocab_file = _require_file(_setting(args, "vocab"), "--vocab")
    kind = _setting(args, "tokenizer")
    if not kind:
        raise UsageError("--tokenizer is required (char, syllable or bpe:<size>)")
    try:
        tokenize.parse_kind(kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    feat_cfg = _feature_config(args)
    try:
        train_cfg = _train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    tok = _load_tokenizer(args, kind)
    vocab = tokenize.Vocabulary.load(vocab_file)

    skipped = []
    factor = train_cfg.downsample_factor
    train_set = _examples(corpus.load_manifest(train_path), tok, vocab, feat_cfg, factor, skipped)
    dev_set = _examples(corpus.load_manifest(dev_path), tok, vocab, feat_cfg, factor, skipped)
    if not train_set or not dev_set:
        raise DataError("train and dev splits must each keep at least one usable utterance")
    _, bad = model.feasible(train_set)
    if len(bad) > INFEASIBLE_ABORT_RATE * len(train_set):
        raise DataError(
            f"{len(bad)} of {len(train_set)} training pairs are infeasible: input features "
            f"smaller than the length of output labels (downsample factor {factor})"
        )
    skipped += [(ex.clip_id, "infeasible: fewer frames than labels need") for ex in bad]

    state = model.train(train_set, dev_set, vocab.num_classes, train_cfg,
                        detokenize=lambda ids: tok.detokenize(vocab.decode(ids)))
    model.save_model(os.path.join(out, "model.ctcm"), state.params, kind, vocab.digest())
    _write_text(os.path.join(out, "history.csv"), _history_csv(state.history))
    plotting.plot_history(state.history, os.path.join(out, "history.png"))
    _write_text(os.path.join(out, "skipped.tsv"), "".join(f"{c}\t{why}\n" for c, why in skipped))
    resolved = {**dataclasses.asdict(feat_cfg), **dataclasses.asdict(train_cfg), "tokenizer": kind}
    _write_json(os.path.join(out, "config.json"), resolved)
    last = state.history[-1]
    print(f"{len(state.history)} epochs, best dev loss {state.best_dev_loss:.4f}, "
          f"last dev CER {last.dev_cer:.4f}")
    return EXIT_OK


# -- decode / eval -----------------------------------------------------------

def _load_for_decoding(args):
    model_path = _require_file(_setting(args, "model"), "--model")
    vocab = tokenize.Vocabulary.load(_require_file(_setting(args, "vocab"), "--vocab"))
    loaded = model.load_model(model_path, vocab_hash=vocab.digest())
    kind = _setting(args, "tokenizer")
    if kind and kind != loaded.tokenizer:
        raise ContractViolation(
            f"tokenizer {kind!r} does not match the model's {loaded.tokenizer!r}")
    if loaded.params.C != vocab.num_classes:
        raise ContractViolation("model output size does not match the vocabulary")
    return loaded, vocab


def _decode_lattice(log_probs, beam_width):
    if beam_width:
        return beam_search_decode(log_probs, beam_width, return_score=True)
    ids = greedy_decode(log_probs)
    return ids, sequence_log_prob(log_probs, ids)


def _read_debug_lattice(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, list):
        obj = {"log_probs": obj}
    if "probs" in obj:
        with np.errstate(divide="ignore"):
            log_probs = np.log(np.asarray(obj["probs"], dtype=np.float64))
    else:
        log_probs = np.asarray(obj["log_probs"], dtype=np.float64)
    if log_probs.ndim != 2:
        raise DataError("debug lattice must be a 2-D list of rows")
    return obj.get("clip_id", "lattice"), log_probs


def _hypotheses(args, loaded, vocab, utts):
    cfg = _feature_config(args)
    factor = int(_setting(args, "downsample_factor", model.TrainConfig.downsample_factor))
    beam = int(_setting(args, "beam_width", 0) or 0)
    rows = []
    for u in utts:
        log_probs = model.forward(loaded.params, _extract(u, cfg, factor))
        ids, score = _decode_lattice(log_probs, beam)
        rows.append({"clip_id": u.clip_id, "text": "".join(vocab.decode(ids)), "log_prob": score})
    return rows


def _jsonl(rows):
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


def cmd_decode(args):
    out = _out_dir(args)
    beam = int(_setting(args, "beam_width", 0) or 0)
    lattice_path = _setting(args, "debug_lattice")
    if lattice_path:
        vocab = tokenize.Vocabulary.load(_require_file(_setting(args, "vocab"), "--vocab"))
        clip_id, log_probs = _read_debug_lattice(_require_file(lattice_path, "--debug-lattice"))
        if log_probs.shape[1] != vocab.num_classes:
            raise ContractViolation(
                f"lattice has {log_probs.shape[1]} columns, vocabulary needs {vocab.num_classes}")
        ids, score = _decode_lattice(log_probs, beam)
        rows = [{"clip_id": clip_id, "text": "".join(vocab.decode(ids)), "log_prob": score}]
    else:
        loaded, vocab = _load_for_decoding(args)
        rows = _hypotheses(args, loaded, vocab, _inputs(args))
    text = _jsonl(rows)
    _write_text(os.path.join(out, "hypotheses.jsonl"), text)
    sys.stdout.write(text)
    return EXIT_OK


def _read_hyps(path):
    hyps = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                hyps[row["clip_id"]] = row["text"]
            except (ValueError, KeyError, TypeError):
                raise DataError(f"{path}: line {line_no}: not a hypothesis record") from None
    return hyps


def cmd_eval(args):
    split_path = _require_file(_setting(args, "split"), "--split")
    out = _out_dir(args)
    utts = sorted(corpus.load_manifest(split_path), key=lambda u: u.clip_id)
    hyps_path = _setting(args, "hyps")
    if hyps_path:
        hyps = _read_hyps(_require_file(hyps_path, "--hyps"))
    else:
        loaded, vocab = _load_for_decoding(args)
        hyps = {r["clip_id"]: r["text"] for r in _hypotheses(args, loaded, vocab, utts)}
    missing = [u.clip_id for u in utts if u.clip_id not in hyps]
    if missing:
        logger.warning("%d clips have no hypothesis; scoring them as empty", len(missing))
    report = metrics.evaluation_report(
        (u.clip_id, u.transcript, hyps.get(u.clip_id, "")) for u in utts)
    _write_json(os.path.join(out, "metrics.json"), report)
    plotting.plot_error_rates(report, os.path.join(out, "metrics.png"))
    print(f"CER {report['cer']:.4f}  SER {report['ser']:.4f}  ({report['num_utterances']} clips)")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of settings")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", dest="out_dir", default=None)

    parser = argparse.ArgumentParser(prog="ctc-seq", description="CTC speech recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a manifest and split it")
    p.add_argument("manifest")
    p.add_argument("--ratios", type=float, nargs=3, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tokenizer", parents=[common], help="build a vocabulary (and BPE merges)")
    p.add_argument("--split", required=True, help="manifest whose transcripts are used")
    p.add_argument("--kind", default=None, help="char, syllable, bpe or bpe:<size>")
    p.add_argument("--size", type=int, default=None, help="BPE vocabulary size")
    p.set_defaults(func=cmd_tokenizer)

    p = sub.add_parser("features", parents=[common], help="dump log-spectrogram features")
    p.add_argument("--wav")
    p.add_argument("--manifest")
    p.add_argument("--downsample-factor", dest="downsample_factor", type=int, default=None)
    p.add_argument("--plot", action="store_true", default=None)
    _add_config_flags(p, _FEATURE_FIELDS)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train an acoustic model")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--vocab")
    p.add_argument("--tokenizer")
    p.add_argument("--bpe-model", dest="bpe_model")
    _add_config_flags(p, _FEATURE_FIELDS)
    _add_config_flags(p, _TRAIN_FIELDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", parents=[common], help="transcribe audio with a trained model")
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--tokenizer")
    p.add_argument("--wav")
    p.add_argument("--manifest")
    p.add_argument("--beam-width", dest="beam_width", type=int, default=None,
                   help="prefix beam width; greedy decoding when omitted")
    p.add_argument("--debug-lattice", dest="debug_lattice",
                   help="decode a JSON lattice instead of audio")
    p.add_argument("--downsample-factor", dest="downsample_factor", type=int, default=None)
    _add_config_flags(p, _FEATURE_FIELDS)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="score hypotheses against a split")
    p.add_argument("--split")
    p.add_argument("--hyps", help="JSON lines from decode; otherwise decode with --model")
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--tokenizer")
    p.add_argument("--beam-width", dest="beam_width", type=int, default=None)
    p.add_argument("--downsample-factor", dest="downsample_factor", type=int, default=None)
    _add_config_flags(p, _FEATURE_FIELDS)
    p.set_defaults(func=cmd_eval)
    return parser


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path!r} does not exist") from None
    except ValueError as exc:
        raise UsageError(f"config file {path!r} is not valid JSON: {exc}") from None
    if not isinstance(values, dict) or any(isinstance(v, (dict, list)) and k != "ratios"
                                           for k, v in values.items()):
        raise UsageError("config file must be a flat JSON object")
    return values


def main(argv=None):
    logging.basicConfig(level=os.environ.get("CTC_SEQ_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = _load_config(args.config)
        return args.func(args)
    except UsageError as exc:
        print(f"ctc-seq {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ctc-seq {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"ctc-seq {args.command}: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
