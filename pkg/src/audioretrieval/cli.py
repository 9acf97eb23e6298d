"""Command-line pipeline: extract, train, embed, query, evaluate, report.

All commands take ``--config FILE`` (flat key=value document) plus repeatable
``--set key=value`` overrides; flags win over the file, which wins over
defaults. The ``AUDIORETRIEVAL_CACHE_DIR`` environment variable overrides the
cache directory. Exit codes: 0 success, 1 data error, 2 usage error.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus, dsp, evaluation, stores, text
from .config import PipelineConfig
from .errors import DataError, UsageError
from .nnet import crnn_forward, load_checkpoint
from .train import fit

EMBED_BATCH = 8
CACHE_MANIFEST = "cache_manifest.json"

_SPLIT_CSV_KEYS = {
    "training": "training_csv",
    "validation": "validation_csv",
    "testing": "testing_csv",
    "evaluation": "evaluation_csv",
}


def _load_split(cfg: PipelineConfig, split_name: str, with_audio=False):
    csv_path = cfg.path(_SPLIT_CSV_KEYS[split_name], must_exist=True)
    audio_dir = cfg.path("audio_dir", must_exist=True) if with_audio else None
    return corpus.require_nonempty(corpus.load_caption_csv(csv_path, split_name, audio_dir))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_manifest(cache_dir: Path) -> dict:
    manifest = cache_dir / CACHE_MANIFEST
    if manifest.exists():
        return json.loads(manifest.read_text())
    return {"clips": {}}


def _write_manifest(cache_dir: Path, manifest: dict) -> None:
    (cache_dir / CACHE_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _write_meta(path: Path, cfg: PipelineConfig, fingerprint: str) -> None:
    meta = {
        "config_hash": cfg.config_hash(),
        "fingerprint": fingerprint,
        "seed": cfg.seed,
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _check_meta(path: Path, expected_fingerprint: str, what: str) -> None:
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        return
    meta = json.loads(meta_path.read_text())
    if meta.get("fingerprint") != expected_fingerprint:
        raise DataError(
            f"{path}: {what} was produced under a different configuration "
            f"({meta.get('fingerprint')} != {expected_fingerprint})"
        )


def _load_features(cfg: PipelineConfig, clip_ids) -> dict[str, np.ndarray]:
    cache_dir = cfg.path("cache_dir")
    missing = [c for c in clip_ids if not (cache_dir / f"{c}.lmel").exists()]
    if missing:
        raise DataError(
            f"feature cache misses {len(missing)} clips (e.g. {missing[0]!r}); "
            "run `audioretrieval extract` first"
        )
    manifest = _read_manifest(cache_dir)
    fp = cfg.dsp_fingerprint()
    stale = [
        c for c in clip_ids
        if manifest["clips"].get(c, {}).get("dsp_fingerprint") not in (None, fp)
    ]
    if stale:
        raise DataError(
            f"feature cache for {len(stale)} clips (e.g. {stale[0]!r}) was extracted "
            "under different dsp settings; rerun `audioretrieval extract`"
        )
    return {c: dsp.read_feature_record(cache_dir / f"{c}.lmel") for c in clip_ids}


def _caption_vectors(cfg: PipelineConfig, records, required_dim=None):
    table = text.load_vectors(cfg.path("vectors_path", must_exist=True))
    if required_dim is not None and table.dim != required_dim:
        raise DataError(
            f"word-vector dim {table.dim} does not match encoder output dim {required_dim}"
        )
    vectors = {}
    n_all_oov = 0
    for rec in records:
        emb = text.embed_caption(table, rec.text)
        if emb.n_words_used == 0:
            n_all_oov += 1
        vectors[rec.caption_id] = emb.vector
    if n_all_oov:
        print(f"warning: {n_all_oov} captions had no in-vocabulary words", file=sys.stderr)
    return table, vectors


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_extract(cfg: PipelineConfig, args) -> int:
    audio_dir = cfg.path("audio_dir", must_exist=True)
    cache_dir = cfg.path("cache_dir")
    cache_dir.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(cache_dir)
    manifest["config_hash"] = cfg.config_hash()
    manifest["seed"] = cfg.seed
    fp = cfg.dsp_fingerprint()
    target_hz = cfg.sample_rate_hz

    wavs = sorted(p for p in audio_dir.iterdir() if p.suffix.lower() == ".wav")
    if not wavs:
        raise DataError(f"{audio_dir}: no .wav files to extract")
    extracted = skipped = 0
    failures = []
    for wav in wavs:
        clip_id = wav.name
        record_path = cache_dir / f"{clip_id}.lmel"
        source_hash = _sha256(wav)
        entry = manifest["clips"].get(clip_id)
        if (
            entry
            and entry.get("source_sha256") == source_hash
            and entry.get("dsp_fingerprint") == fp
            and record_path.exists()
        ):
            skipped += 1
            continue
        try:
            wave = dsp.resample(dsp.load_wav(wav), target_hz)
            mel = dsp.log_mel(wave)
        except DataError as exc:
            failures.append(str(exc))
            continue
        dsp.write_feature_record(record_path, mel)
        manifest["clips"][clip_id] = {
            "source_sha256": source_hash,
            "dsp_fingerprint": fp,
            "n_frames": mel.n_frames,
        }
        extracted += 1
    _write_manifest(cache_dir, manifest)
    print(f"{extracted} extracted, {skipped} skipped, {len(failures)} failed")
    for failure in failures:
        print(f"failed: {failure}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    crnn_cfg = cfg.crnn_config()
    train_split = _load_split(cfg, "training")
    val_split = _load_split(cfg, "validation")
    _, caption_vectors = _caption_vectors(
        cfg,
        list(train_split.captions) + list(val_split.captions),
        required_dim=crnn_cfg.embedding_dim,
    )
    clip_ids = [c.clip_id for c in train_split.clips] + [c.clip_id for c in val_split.clips]
    features = _load_features(cfg, clip_ids)
    checkpoint_dir = cfg.path("checkpoint_dir")
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    result = fit(
        train_split,
        val_split,
        features,
        caption_vectors,
        crnn_cfg,
        cfg.train_config(),
        log_path=checkpoint_dir / "training_log.csv",
        checkpoint_dir=checkpoint_dir,
        checkpoint_meta={
            "config_hash": cfg.config_hash(),
            "fingerprint": cfg.model_fingerprint(),
        },
    )
    print(
        f"trained {len(result.log)} epochs ({result.steps} steps); "
        f"best epoch {result.best_epoch} val loss {result.best_val_loss:.6f}"
    )
    return 0


def cmd_embed(cfg: PipelineConfig, args) -> int:
    crnn_cfg = cfg.crnn_config()
    checkpoint_dir = cfg.path("checkpoint_dir")
    ckpt_path = checkpoint_dir / f"{args.checkpoint}.ckpt"
    if not ckpt_path.exists():
        raise DataError(f"{ckpt_path}: checkpoint not found; run `audioretrieval train` first")
    _, params, buffers, _ = load_checkpoint(ckpt_path, expected_config=crnn_cfg)

    split = _load_split(cfg, args.split)
    features = _load_features(cfg, [c.clip_id for c in split.clips])
    clip_ids = [c.clip_id for c in split.clips]
    embeddings = np.empty((len(clip_ids), crnn_cfg.embedding_dim), dtype=np.float32)
    for start in range(0, len(clip_ids), EMBED_BATCH):
        chunk = clip_ids[start : start + EMBED_BATCH]
        feats = [features[c] for c in chunk]
        lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
        batch = np.zeros((len(chunk), lengths.max(), crnn_cfg.n_mels))
        for i, f in enumerate(feats):
            batch[i, : f.shape[0]] = f
        _, clips, _ = crnn_forward(params, buffers, batch, lengths, crnn_cfg, mode="eval")
        embeddings[start : start + len(chunk)] = clips.astype(np.float32)

    _, caption_vectors = _caption_vectors(cfg, split.captions, required_dim=crnn_cfg.embedding_dim)
    caption_ids = [rec.caption_id for rec in split.captions]
    caption_matrix = np.stack([caption_vectors[cid] for cid in caption_ids]).astype(np.float32)

    out_dir = checkpoint_dir
    audio_path = out_dir / f"{args.split}.audio.emb"
    caption_path = out_dir / f"{args.split}.captions.emb"
    stores.write_store(audio_path, clip_ids, embeddings)
    stores.write_store(caption_path, caption_ids, caption_matrix)
    fp = cfg.model_fingerprint()
    _write_meta(audio_path, cfg, fp)
    _write_meta(caption_path, cfg, fp)
    print(f"wrote {audio_path} ({len(clip_ids)} x {crnn_cfg.embedding_dim})")
    print(f"wrote {caption_path} ({len(caption_ids)} x {crnn_cfg.embedding_dim})")
    return 0


def cmd_query(cfg: PipelineConfig, args) -> int:
    store = stores.read_store(Path(args.audio_store))
    table = text.load_vectors(cfg.path("vectors_path", must_exist=True))
    if table.dim != store.dim:
        raise DataError(f"word-vector dim {table.dim} does not match store dim {store.dim}")
    emb = text.embed_caption(table, args.text)
    if emb.n_words_used == 0:
        print("warning: query has no in-vocabulary words; ranking a zero vector", file=sys.stderr)
    matrix = evaluation.score_all(["query"], emb.vector[None, :], store.ids, store.vectors)
    ranked = evaluation.rank_top10(matrix, k=args.n)[0]
    scores = dict(zip(matrix.clips, matrix.scores[0]))
    for clip_id in ranked.top:
        print(f"{clip_id}\t{scores[clip_id]:.6f}")
    return 0


def _report_from_stores(cfg: PipelineConfig, args):
    audio = stores.read_store(Path(args.audio_store))
    captions = stores.read_store(Path(args.caption_store))
    fp = cfg.model_fingerprint()
    _check_meta(Path(args.audio_store), fp, "audio store")
    _check_meta(Path(args.caption_store), fp, "caption store")
    matrix = evaluation.score_all(captions.ids, captions.vectors, audio.ids, audio.vectors)
    ranked = evaluation.rank_top10(matrix)
    return ranked


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    split = _load_split(cfg, args.split)
    truth = corpus.ground_truth(split)
    if args.submission:
        ranked = evaluation.read_submission(Path(args.submission))
    else:
        if not (args.audio_store and args.caption_store):
            raise UsageError("evaluate needs either --submission or both stores")
        ranked = _report_from_stores(cfg, args)
    report = evaluation.evaluate_ranked(ranked, truth)

    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    table = evaluation.render_report(report)
    (report_dir / "report.txt").write_text(table)
    evaluation.write_report_json(
        report_dir / "report.json",
        report,
        extra={"config_hash": cfg.config_hash(), "seed": cfg.seed},
    )
    if args.write_submission:
        evaluation.write_submission(Path(args.write_submission), ranked)
    print(table, end="")
    return 0


def cmd_report(cfg: PipelineConfig, args) -> int:
    payload = json.loads(Path(args.json).read_text())
    print(evaluation.render_report_values(payload), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audioretrieval",
        description="Language-based audio retrieval pipeline.",
    )
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("extract", help="decode WAVs and cache log-mel features")
    sub.add_parser("train", help="train the audio encoder")

    p_embed = sub.add_parser("embed", help="write audio/caption embedding stores")
    p_embed.add_argument("--split", required=True, choices=corpus.SPLIT_NAMES)
    p_embed.add_argument("--checkpoint", default="best", choices=["best", "last"])

    p_query = sub.add_parser("query", help="rank clips for a free-text caption")
    p_query.add_argument("--audio-store", required=True)
    p_query.add_argument("--text", required=True)
    p_query.add_argument("-n", type=int, default=10)

    p_eval = sub.add_parser("evaluate", help="score stores or a submission CSV")
    p_eval.add_argument("--split", required=True, choices=corpus.SPLIT_NAMES)
    p_eval.add_argument("--audio-store")
    p_eval.add_argument("--caption-store")
    p_eval.add_argument("--submission")
    p_eval.add_argument("--report-dir", required=True)
    p_eval.add_argument("--write-submission")

    p_report = sub.add_parser("report", help="render a metrics JSON as a table")
    p_report.add_argument("--json", required=True)
    return parser


_COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "embed": cmd_embed,
    "query": cmd_query,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = PipelineConfig.load(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
