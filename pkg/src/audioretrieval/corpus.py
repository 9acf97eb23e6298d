"""Corpus ingestion: caption CSVs, audio manifests, split/pair enumeration.

Development-style CSVs carry five captions per clip
(``file_name,caption_1,...,caption_5``); evaluation-style CSVs carry one
(``file_name,caption``). Ground-truth relevance is binary: the only relevant
clip for a caption is its source clip. Caption text is kept verbatim here;
tokenization belongs to :mod:`audioretrieval.text`.
"""

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .errors import DuplicateClip, EmptyCaption, EmptySplit, MalformedCsv

DEV_SPLIT_NAMES = ("training", "validation", "testing")
SPLIT_NAMES = DEV_SPLIT_NAMES + ("evaluation",)

DEV_HEADER = ["file_name"] + [f"caption_{k}" for k in range(1, 6)]
EVAL_HEADER = ["file_name", "caption"]

# development clips/captions outside these bounds trigger warnings, not errors
DURATION_BOUNDS_S = (15.0, 30.0)
WORD_COUNT_BOUNDS = (8, 20)


class CorpusWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AudioClipRef:
    """Reference to an audio file; the audio itself is decoded lazily by dsp."""

    clip_id: str
    path: str | None = None
    duration_s: float | None = None


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: str
    clip_id: str
    text: str
    word_count: int


@dataclass(frozen=True)
class Split:
    name: str
    clips: tuple[AudioClipRef, ...]
    captions: tuple[CaptionRecord, ...]
    captions_per_clip: int


def _validate_dev_bounds(split_name: str, clip: AudioClipRef, records) -> None:
    if split_name not in DEV_SPLIT_NAMES:
        return
    lo, hi = DURATION_BOUNDS_S
    if clip.duration_s is not None and not (lo <= clip.duration_s <= hi):
        warnings.warn(
            f"clip {clip.clip_id}: duration {clip.duration_s:.2f}s outside [{lo}, {hi}]",
            CorpusWarning,
            stacklevel=3,
        )
    wlo, whi = WORD_COUNT_BOUNDS
    for rec in records:
        if not (wlo <= rec.word_count <= whi):
            warnings.warn(
                f"caption {rec.caption_id}: {rec.word_count} words outside [{wlo}, {whi}]",
                CorpusWarning,
                stacklevel=3,
            )


def load_caption_csv(path, split_name: str, audio_dir=None) -> Split:
    """Load one split from a caption CSV.

    Caption ids are synthesized as ``<clip_id>#<k>`` for caption column k.
    When ``audio_dir`` is given, clip paths are resolved against it and
    durations are read from the WAV headers (files are not decoded).
    """
    if split_name not in SPLIT_NAMES:
        raise ValueError(f"unknown split name {split_name!r}; expected one of {SPLIT_NAMES}")
    expected_header = EVAL_HEADER if split_name == "evaluation" else DEV_HEADER

    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != expected_header:
        raise MalformedCsv(
            f"{path}: bad header for a {split_name} split: got {header}, want {expected_header}"
        )

    n_captions = len(expected_header) - 1
    clips: list[AudioClipRef] = []
    captions: list[CaptionRecord] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expected_header):
            raise MalformedCsv(f"{path}:{lineno}: expected {len(expected_header)} fields, got {len(row)}")
        clip_id = row[0].strip()
        if not clip_id:
            raise MalformedCsv(f"{path}:{lineno}: empty file_name")
        if clip_id in seen:
            raise DuplicateClip(f"{path}:{lineno}: duplicate clip {clip_id!r}")
        seen.add(clip_id)

        clip_path = None
        duration = None
        if audio_dir is not None:
            clip_path = str(Path(audio_dir) / clip_id)
            duration = dsp.wav_duration_s(clip_path)
        clip = AudioClipRef(clip_id=clip_id, path=clip_path, duration_s=duration)

        records = []
        for k in range(1, n_captions + 1):
            text = row[k]
            if not text.strip():
                raise EmptyCaption(f"{path}:{lineno}: empty {expected_header[k]} for clip {clip_id!r}")
            records.append(
                CaptionRecord(
                    caption_id=f"{clip_id}#{k}",
                    clip_id=clip_id,
                    text=text,
                    word_count=len(text.split()),
                )
            )
        _validate_dev_bounds(split_name, clip, records)
        clips.append(clip)
        captions.extend(records)

    return Split(
        name=split_name,
        clips=tuple(clips),
        captions=tuple(captions),
        captions_per_clip=n_captions,
    )


def enumerate_pairs(split: Split, seed: int) -> list[tuple[str, str]]:
    """All matching (clip_id, caption_id) pairs, shuffled deterministically by seed."""
    pairs = [(rec.clip_id, rec.caption_id) for rec in split.captions]
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [pairs[i] for i in order]


def ground_truth(split: Split) -> dict[str, str]:
    """Map caption_id -> its (single) relevant clip_id."""
    return {rec.caption_id: rec.clip_id for rec in split.captions}


def require_nonempty(split: Split) -> Split:
    if not split.captions:
        raise EmptySplit(f"split {split.name!r} has no captions")
    return split
