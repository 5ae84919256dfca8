"""Feature files, synthetic corpora, and normalization.

Features travel as FBNK files: magic "FBNK", u32 version, u32 rows, u32
cols, then row-major float32 payload, all little-endian. A corpus directory
holds one FBNK file per utterance plus manifest.csv, frame_labels.csv
(utterance_id,frame_idx,class) and utt_labels.csv (utterance_id,speaker).

The synthetic generator plants a per-class spectral template on each frame
and a per-speaker spectral tilt on each utterance, so frame classification
and speaker tasks are both learnable at desk scale. Frame noise is strong
enough that single-frame linear classification is mediocre; class labels
persist over short runs of frames, so temporal context resolves them.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import Rng

FEATURE_MAGIC = b"FBNK"
FEATURE_VERSION = 1

# synthetic corpus shape constants
TEMPLATE_SCALE = 1.0     # per-class spectral template magnitude
SPEAKER_SCALE = 0.8      # per-speaker tilt magnitude
FRAME_NOISE = 1.1        # per-frame white noise std
RUN_MIN, RUN_MAX = 5, 12  # consecutive frames sharing one class label


def write_feature_file(path: str, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"feature array must be 2D, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, rows, cols))
        fh.write(arr.tobytes())


def read_feature_file(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic)")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    expected = 16 + rows * cols * 4
    if len(blob) != expected:
        raise DataError(f"{path}: payload is {len(blob) - 16} bytes, "
                        f"expected {rows * cols * 4}")
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(rows, cols).astype(np.float32)


@dataclass
class Corpus:
    utt_ids: list[str]
    sequences: list[np.ndarray]          # raw (unnormalized) T x D_mel
    frame_labels: dict[str, np.ndarray]  # utt_id -> int per frame
    utt_labels: dict[str, int]           # utt_id -> speaker id
    d_mel: int

    def __len__(self) -> int:
        return len(self.utt_ids)


def generate_corpus(out_dir: str, utterances: int, frames: int,
                    phoneme_classes: int, speakers: int, seed: int,
                    d_mel: int = 80) -> None:
    """Write a seeded synthetic corpus; same seed gives identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    rng = Rng(seed)
    templates = rng.normals((phoneme_classes, d_mel)) * np.float32(TEMPLATE_SCALE)
    ramp = np.linspace(-1.0, 1.0, d_mel, dtype=np.float32)
    curve = ramp * ramp - np.float32(ramp.var() + ramp.mean() ** 2)
    tilts = np.empty((speakers, d_mel), dtype=np.float32)
    for s in range(speakers):
        c1, c2 = rng.normals(2) * SPEAKER_SCALE
        tilts[s] = c1 * ramp + c2 * curve

    manifest_rows = []
    frame_rows = []
    utt_rows = []
    for u in range(utterances):
        utt_id = f"utt_{u:05d}"
        speaker = rng.randint(speakers)
        labels = np.empty(frames, dtype=np.int64)
        t = 0
        while t < frames:
            run = RUN_MIN + rng.randint(RUN_MAX - RUN_MIN + 1)
            labels[t:t + run] = rng.randint(phoneme_classes)
            t += run
        noise = rng.normals((frames, d_mel)) * np.float32(FRAME_NOISE)
        feats = templates[labels] + tilts[speaker] + noise
        fname = f"{utt_id}.fbnk"
        write_feature_file(os.path.join(out_dir, fname), feats)
        manifest_rows.append((utt_id, fname, frames))
        for idx in range(frames):
            frame_rows.append((utt_id, idx, int(labels[idx])))
        utt_rows.append((utt_id, speaker))

    _write_csv(os.path.join(out_dir, "manifest.csv"),
               ("utterance_id", "path", "frames"), manifest_rows)
    _write_csv(os.path.join(out_dir, "frame_labels.csv"),
               ("utterance_id", "frame_idx", "class"), frame_rows)
    _write_csv(os.path.join(out_dir, "utt_labels.csv"),
               ("utterance_id", "speaker"), utt_rows)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: str, expected_header) -> list[list[str]]:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(expected_header):
                raise DataError(f"{path}: unexpected header {header}")
            return [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_corpus(corpus_dir: str) -> Corpus:
    manifest = _read_csv(os.path.join(corpus_dir, "manifest.csv"),
                         ("utterance_id", "path", "frames"))
    utt_ids = []
    sequences = []
    d_mel = None
    for utt_id, fname, frames in manifest:
        feats = read_feature_file(os.path.join(corpus_dir, fname))
        if feats.shape[0] != int(frames):
            raise DataError(f"{fname}: manifest says {frames} frames, file has "
                            f"{feats.shape[0]}")
        if d_mel is None:
            d_mel = feats.shape[1]
        elif feats.shape[1] != d_mel:
            raise DataError(f"{fname}: width {feats.shape[1]} != corpus width {d_mel}")
        utt_ids.append(utt_id)
        sequences.append(feats)

    frame_labels: dict[str, list[int]] = {u: [] for u in utt_ids}
    for utt_id, frame_idx, cls in _read_csv(
            os.path.join(corpus_dir, "frame_labels.csv"),
            ("utterance_id", "frame_idx", "class")):
        if utt_id not in frame_labels:
            raise DataError(f"frame_labels.csv: unknown utterance '{utt_id}'")
        if int(frame_idx) != len(frame_labels[utt_id]):
            raise DataError(f"frame_labels.csv: frames of '{utt_id}' out of order")
        frame_labels[utt_id].append(int(cls))

    utt_labels: dict[str, int] = {}
    for utt_id, speaker in _read_csv(os.path.join(corpus_dir, "utt_labels.csv"),
                                     ("utterance_id", "speaker")):
        if utt_id not in frame_labels:
            raise DataError(f"utt_labels.csv: unknown utterance '{utt_id}'")
        utt_labels[utt_id] = int(speaker)

    packed = {u: np.asarray(v, dtype=np.int64) for u, v in frame_labels.items()}
    for utt_id, seq in zip(utt_ids, sequences):
        if len(packed[utt_id]) not in (0, seq.shape[0]):
            raise DataError(f"'{utt_id}': {len(packed[utt_id])} frame labels for "
                            f"{seq.shape[0]} frames")
    return Corpus(utt_ids, sequences, packed, utt_labels,
                  d_mel if d_mel is not None else 0)


def norm_stats(corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over all frames of the corpus."""
    if not corpus.sequences:
        raise DataError("cannot compute normalization stats of an empty corpus")
    stacked = np.concatenate([s for s in corpus.sequences if s.shape[0]], axis=0)
    mean = stacked.mean(axis=0).astype(np.float32)
    std = np.maximum(stacked.std(axis=0), 1e-6).astype(np.float32)
    return mean, std


def normalize(seq: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((seq - mean) / std).astype(np.float32)
