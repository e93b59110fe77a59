"""Command-line pipeline: parse, preprocess, tokenize, augment, vqt, train,
transcribe, evaluate.

All subcommands are deterministic given their inputs and --seed; stdout
carries data, stderr diagnostics, and every failure exits nonzero with one
machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from multiprocessing import Pool
from pathlib import Path

from .augment import AugmentConfig, build_plan, transpose
from .errors import InputError, KernScribeError, TranspositionError
from .kern import parse_kern, reinsert_identifiers, render_document, write_kern
from .metrics import evaluate_clips
from .model import (
    ModelConfig,
    TrainSchedule,
    load_checkpoint,
    load_manifest,
    train,
    transcribe,
)
from .preprocess import count_voices_per_bar, cleanse, normalize_score, segment_clips
from .score import KeySignature, Score, TimeSignature, validate
from .tokens import (
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    deserialize_staff,
    serialize_bar_tokens,
    serialize_staff,
    strip_specials,
)
from .vqt import load_spectrogram, read_wav, save_spectrogram, vqt


def _dump(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _emit(payload):
    sys.stdout.write(_dump(payload) + "\n")


def load_score(path, normalized: bool = True) -> Score:
    with open(path, "r", encoding="utf-8") as f:
        doc = parse_kern(f.read())
    from .kern import to_score

    score = to_score(doc)
    if normalized:
        score = normalize_score(cleanse(score))
    return score


def _event_json(event) -> dict:
    from .kern import kern_pitch_name

    if event.is_rest:
        body = {"rest": True}
    else:
        body = {"notes": [
            {"pitch": kern_pitch_name(n.pitch), "midi": n.pitch.midi,
             "tie": n.tie.value}
            for n in event.notes]}
    body["onset"] = str(event.onset)
    body["duration"] = str(event.duration.whole)
    if event.grace:
        body["grace"] = True
    return body


def score_to_json(score: Score) -> dict:
    payload = {
        "bar_count": score.bar_count,
        "keys": [k.sharps for k in score.per_bar_key],
        "times": [t.label for t in score.per_bar_time],
    }
    for name in ("lower", "upper"):
        payload[name] = [
            [[_event_json(e) for e in voice.events] for voice in bar.voices]
            for bar in score.staff(name).bars]
    return payload


def _clip_record(clip_id: str, score: Score, spectrogram: str = "") -> dict:
    from .score import bar_length

    record = {
        "id": clip_id,
        "spectrogram": spectrogram,
        "keys": [k.sharps for k in score.per_bar_key],
        "times": [t.label for t in score.per_bar_time],
    }
    for name, field in (("lower", "tokens_lower"), ("upper", "tokens_upper")):
        bars = []
        for b, bar in enumerate(score.staff(name).bars):
            bars.append(serialize_bar_tokens(bar, bar_length(score.per_bar_time[b])))
        record[field] = bars
    return record


# -- subcommand handlers ----------------------------------------------------


def cmd_parse(args) -> int:
    score = load_score(args.input, normalized=not args.raw)
    payload = score_to_json(score)
    payload["violations"] = [str(v) for v in validate(score)]
    _emit(payload)
    return 0


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    score = load_score(args.input)
    (out / "normalized.krn").write_text(write_kern(score), encoding="utf-8")
    clips_dir = out / "clips"
    clips_dir.mkdir(exist_ok=True)
    stem = Path(args.input).stem
    clips = segment_clips(score, source_id=stem)
    for i, clip in enumerate(clips):
        (clips_dir / f"{stem}_{i:03d}.krn").write_text(
            write_kern(clip.score), encoding="utf-8")
    _emit({
        "input": str(args.input),
        "bar_count": score.bar_count,
        "clips": len(clips),
        "violations": [str(v) for v in validate(score)],
        "out": str(out),
    })
    return 0


def _voice_count_worker(path: str):
    try:
        score = load_score(path, normalized=False)
    except KernScribeError as exc:
        return path, None, str(exc)
    return path, count_voices_per_bar(score), None


def cmd_analyze_voices(args) -> int:
    paths = sorted(str(p) for p in Path(args.corpus).rglob("*.krn"))
    if not paths:
        raise InputError(f"no .krn files under {args.corpus}")
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            results = pool.map(_voice_count_worker, paths)
    else:
        results = [_voice_count_worker(p) for p in paths]
    merged = {"lower": {}, "upper": {}}
    skipped = []
    bars = 0
    for path, report, error in results:
        if report is None:
            skipped.append({"file": path, "error": error})
            continue
        for staff in ("lower", "upper"):
            for count, n in getattr(report, staff).items():
                merged[staff][count] = merged[staff].get(count, 0) + n
        bars += sum(report.lower.values())
    payload = {"files": len(paths) - len(skipped), "bars_per_staff": bars,
               "skipped": skipped}
    for staff in ("lower", "upper"):
        hist = merged[staff]
        total = sum(hist.values())
        le2 = sum(v for k, v in hist.items() if k <= 2)
        payload[staff] = {str(k): v for k, v in sorted(hist.items())}
        payload[f"fraction_le2_{staff}"] = (le2 / total) if total else 1.0
    _emit(payload)
    return 0


def cmd_tokenize(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    for path in args.inputs:
        score = load_score(path)
        if score.bar_count != 5:
            raise InputError(f"{path}: expected a 5-bar clip, got {score.bar_count} bars")
        record = _clip_record(Path(path).stem, score, spectrogram=args.spectrogram)
        for field in ("tokens_lower", "tokens_upper"):
            for bar in record[field]:
                vocab.note.encode(bar)  # raises VocabularyError on OOV
        _emit(record)
    return 0


def cmd_detokenize(args) -> int:
    if args.input == "-":
        text = sys.stdin.read()
    else:
        text = Path(args.input).read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise InputError("no JSON records to detokenize")
    record = json.loads(lines[0])
    times = tuple(TimeSignature.from_label(t) for t in record["times"])
    keys = tuple(KeySignature(int(k)) for k in record["keys"])
    staffs = {}
    for name, field in (("lower", "tokens_lower"), ("upper", "tokens_upper")):
        flat = ["<sos>"]
        for bar in record[field]:
            flat.extend(bar)
        flat.append("<eos>")
        staffs[name] = deserialize_staff(TokenSequence(tuple(flat), name), times)
    doc = reinsert_identifiers(staffs["lower"], staffs["upper"], keys, times)
    sys.stdout.write(render_document(doc))
    return 0


def cmd_vocab(args) -> int:
    vocab = build_vocabulary()
    vocab.save(args.out)
    _emit({"out": str(args.out), "note_tokens": len(vocab.note),
           "time_tokens": len(vocab.time), "key_tokens": len(vocab.key),
           "hash": vocab.content_hash()})
    return 0


def cmd_augment(args) -> int:
    config = AugmentConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            payload = json.load(f)
        config = AugmentConfig.from_payload(payload.get("augment", payload))
    paths = sorted(Path(args.clips).glob("*.krn"))
    if not paths:
        raise InputError(f"no .krn clips under {args.clips}")
    out = Path(args.out)
    scores_dir = out / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    clip_ids = [p.stem for p in paths]
    plan = build_plan(clip_ids, config, args.seed)
    scores = {p.stem: load_score(p) for p in paths}
    jobs = []
    skipped = []
    for variant in plan.variants:
        try:
            shifted = transpose(scores[variant.clip_id], variant.semitone_shift)
        except TranspositionError as exc:
            skipped.append({"variant": variant.as_dict(), "reason": str(exc)})
            sys.stderr.write(f"skip {variant.clip_id}~v{variant.variant_index}: {exc}\n")
            continue
        name = f"{variant.clip_id}~v{variant.variant_index}"
        score_path = scores_dir / f"{name}.krn"
        score_path.write_text(write_kern(shifted), encoding="utf-8")
        job = variant.as_dict()
        job["input_score"] = str(score_path)
        job["expected_audio"] = str(out / "audio" / f"{name}.wav")
        jobs.append(job)
    with open(out / "jobs.jsonl", "w", encoding="utf-8") as f:
        for job in jobs:
            f.write(_dump(job) + "\n")
    _emit({"clips": len(paths), "variants": len(plan.variants),
           "rendered": len(jobs), "skipped": len(skipped),
           "jobs": str(out / "jobs.jsonl")})
    return 0


def cmd_vqt(args) -> int:
    samples = read_wav(args.input)
    spec = vqt(samples)
    header_path, payload_path = save_spectrogram(spec, args.out)
    _emit({"rows": spec.frames, "cols": spec.bins, "header": str(header_path),
           "payload": str(payload_path)})
    return 0


def _load_config(path) -> tuple[dict, TrainSchedule]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    model_payload = payload.get("model", {})
    schedule = TrainSchedule.from_payload(payload.get("schedule", {}))
    return model_payload, schedule


def cmd_train(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    model_payload, schedule = _load_config(args.config)
    model_payload.setdefault("note_vocab", len(vocab.note))
    model_payload.setdefault("time_vocab", len(vocab.time))
    model_payload.setdefault("key_vocab", len(vocab.key))
    config = ModelConfig.from_payload(model_payload)
    examples = load_manifest(args.manifest, vocab)
    result = train(examples, config, schedule, args.stage, args.seed,
                   vocab.content_hash(), out_dir=Path(args.out),
                   init_checkpoint=args.init)
    last = result.trace[-1].as_dict() if result.trace else {}
    _emit({"checkpoint": str(result.checkpoint_path), "steps": len(result.trace),
           "final": last})
    return 0


def cmd_transcribe(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    model, _header = load_checkpoint(args.ckpt, expected_vocab_hash=vocab.content_hash())
    spec = load_spectrogram(args.spectrogram)
    result = transcribe(model, vocab, spec.data)
    payload = result.as_dict()
    if args.out:
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as f:
            f.write(_dump(payload) + "\n")
        if result.score is not None:
            prefix.with_suffix(".krn").write_text(write_kern(result.score),
                                                  encoding="utf-8")
        payload["out"] = str(prefix.with_suffix(".json"))
    _emit(payload)
    return 0


def _strip_serializer(staff, times):
    return list(strip_specials(
        serialize_staff(staff, bars=staff.bar_count, times=times).tokens))


def _eval_worker(item):
    name, hyp_path, ref_path = item
    return name, load_score(hyp_path), load_score(ref_path)


def cmd_evaluate(args) -> int:
    hyp_dir, ref_dir = Path(args.hyp), Path(args.ref)
    ref_files = {p.name: p for p in ref_dir.glob("*.krn")}
    hyp_files = {p.name: p for p in hyp_dir.glob("*.krn")}
    names = sorted(set(ref_files) & set(hyp_files))
    if not names:
        raise InputError(f"no matching .krn files between {hyp_dir} and {ref_dir}")
    items = [(n, str(hyp_files[n]), str(ref_files[n])) for n in names]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            pairs = pool.map(_eval_worker, items)
    else:
        pairs = [_eval_worker(i) for i in items]
    report = evaluate_clips(list(pairs), _strip_serializer)
    _emit(report.as_dict())
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernscribe",
        description="Piano audio-to-score pipeline at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="**Kern file to normalized score JSON")
    p.add_argument("input")
    p.add_argument("--raw", action="store_true",
                   help="skip cleansing/normalization")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("preprocess", help="cleanse, normalize, and cut 5-bar clips")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("analyze-voices", help="bar-level voice-count histogram")
    p.add_argument("corpus")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_analyze_voices)

    p = sub.add_parser("tokenize", help="clip .krn to JSON-lines token records")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--vocab", required=True)
    p.add_argument("--spectrogram", default="",
                   help="spectrogram prefix stored in the record")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="token record back to **Kern text")
    p.add_argument("input", help="JSON-lines file or - for stdin")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("vocab", help="write the default vocabulary JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("augment", help="draw variants and write synthesis jobs")
    p.add_argument("clips", help="directory of 5-bar clip .krn files")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("vqt", help="WAV to spectrogram container")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_vqt)

    p = sub.add_parser("train", help="teacher-forced training")
    p.add_argument("--stage", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default=None, help="checkpoint to fine-tune from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transcribe", help="spectrogram to prediction and .krn")
    p.add_argument("spectrogram", help="spectrogram container prefix")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", default=None, help="output path prefix")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("evaluate", help="score hypothesis clips against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KernScribeError as exc:
        sys.stderr.write(_dump({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
