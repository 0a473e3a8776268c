"""Corpus persistence: binary matrix blobs plus a JSON manifest.

Blob format (one matrix per file): magic ``MQVR``, u32 little-endian
version (=1), u32 rows, u32 dim, then rows*dim IEEE-754 float32
little-endian values in row-major order. Values are stored in 32-bit
float; everything is widened to float64 after load so downstream
arithmetic runs in double precision. A corpus whose values already sit
on the float32 grid round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MQVR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, rows, dim

INFORMATIVE = "informative"
GENERIC = "generic"
QUALITY_LABELS = (INFORMATIVE, GENERIC)

MANIFEST_NAME = "manifest.json"


class FormatError(Exception):
    """A blob or manifest does not conform to the on-disk format."""


def check_matrix(arr, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 C-contiguous array, rejecting non-finite values."""
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if out.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got shape {out.shape}")
    if out.size and not np.isfinite(out).all():
        raise ValueError(f"{name}: contains NaN or Inf")
    return out


def write_matrix(path, arr) -> None:
    """Write one matrix blob (float32 storage)."""
    mat = check_matrix(arr, str(path))
    rows, dim = mat.shape
    if mat.size and np.abs(mat).max() > np.finfo(np.float32).max:
        raise ValueError(f"{path}: values exceed the 32-bit float range")
    payload = mat.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, rows, dim))
        fh.write(payload)


def read_matrix(path) -> np.ndarray:
    """Read one matrix blob, returning float64 values (exactly the stored f32)."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing blob: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch (header says {rows}x{dim}, "
            f"file has {len(raw) - _HEADER.size} payload bytes)"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if values.size and not np.isfinite(values).all():
        raise FormatError(f"{path}: non-finite values in payload")
    return values.astype(np.float64).reshape(rows, dim)


@dataclass
class Corpus:
    """A video corpus: ids, video embeddings, per-video caption embeddings.

    ``video_embeddings`` is (n, m); ``captions[i]`` is (k_i, m) with
    k_i >= 1. ``quality_labels`` (synthetic corpora only) tags each
    caption as informative or generic. Instances are validated on
    construction and treated as immutable afterwards.
    """

    video_ids: list[str]
    video_embeddings: np.ndarray
    captions: list[np.ndarray]
    quality_labels: list[list[str]] | None = None
    creation_seed: int | None = None
    provenance: dict | None = None

    def __post_init__(self):
        self.video_ids = [str(v) for v in self.video_ids]
        self.video_embeddings = check_matrix(self.video_embeddings, "video_embeddings")
        self.captions = [
            check_matrix(c, f"captions[{i}]") for i, c in enumerate(self.captions)
        ]
        self.validate()

    @property
    def n_videos(self) -> int:
        return self.video_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.video_embeddings.shape[1]

    def validate(self) -> None:
        n, m = self.video_embeddings.shape
        if n < 1:
            raise ValueError("corpus must contain at least one video")
        if len(self.video_ids) != n:
            raise ValueError(
                f"video_ids length {len(self.video_ids)} != {n} embedding rows"
            )
        if len(set(self.video_ids)) != n:
            raise ValueError("duplicate video ids")
        if len(self.captions) != n:
            raise ValueError(f"captions length {len(self.captions)} != {n} videos")
        for i, cap in enumerate(self.captions):
            if cap.shape[0] < 1:
                raise ValueError(f"captions[{i}]: every video needs >= 1 caption")
            if cap.shape[1] != m:
                raise ValueError(
                    f"captions[{i}]: dim {cap.shape[1]} != video dim {m}"
                )
        if self.quality_labels is not None:
            if len(self.quality_labels) != n:
                raise ValueError("quality_labels length != number of videos")
            for i, labels in enumerate(self.quality_labels):
                if len(labels) != self.captions[i].shape[0]:
                    raise ValueError(f"quality_labels[{i}]: count != captions")
                for lab in labels:
                    if lab not in QUALITY_LABELS:
                        raise ValueError(f"quality_labels[{i}]: unknown label {lab!r}")


def corpus_equal(a: Corpus, b: Corpus) -> bool:
    """Exact field-for-field equality (bitwise on the float payloads)."""
    return (
        a.video_ids == b.video_ids
        and np.array_equal(a.video_embeddings, b.video_embeddings)
        and len(a.captions) == len(b.captions)
        and all(np.array_equal(x, y) for x, y in zip(a.captions, b.captions))
        and a.quality_labels == b.quality_labels
        and a.creation_seed == b.creation_seed
        and a.provenance == b.provenance
    )


@dataclass
class Manifest:
    """Index of a corpus directory; counts must match the referenced blobs."""

    format_version: int
    dim: int
    n_videos: int
    video_ids: list[str]
    captions_per_video: list[int]
    video_blob: str
    caption_blobs: list[str]
    quality_labels: list[list[str]] | None = None
    creation_seed: int | None = None
    provenance: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "format_version": self.format_version,
            "dim": self.dim,
            "n_videos": self.n_videos,
            "video_ids": self.video_ids,
            "captions_per_video": self.captions_per_video,
            "video_blob": self.video_blob,
            "caption_blobs": self.caption_blobs,
        }
        if self.quality_labels is not None:
            out["quality_labels"] = self.quality_labels
        if self.creation_seed is not None:
            out["creation_seed"] = self.creation_seed
        if self.provenance is not None:
            out["provenance"] = self.provenance
        return out


def save_corpus(corpus: Corpus, directory) -> Manifest:
    """Write manifest plus blobs; returns the manifest that was written."""
    corpus.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    video_blob = "videos.bin"
    write_matrix(directory / video_blob, corpus.video_embeddings)
    caption_blobs = []
    for i, cap in enumerate(corpus.captions):
        name = f"captions_{i:06d}.bin"
        write_matrix(directory / name, cap)
        caption_blobs.append(name)
    manifest = Manifest(
        format_version=FORMAT_VERSION,
        dim=corpus.dim,
        n_videos=corpus.n_videos,
        video_ids=list(corpus.video_ids),
        captions_per_video=[c.shape[0] for c in corpus.captions],
        video_blob=video_blob,
        caption_blobs=caption_blobs,
        quality_labels=corpus.quality_labels,
        creation_seed=corpus.creation_seed,
        provenance=corpus.provenance,
    )
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(directory) -> Manifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise FormatError(f"missing manifest: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    required = (
        "format_version",
        "dim",
        "n_videos",
        "video_ids",
        "captions_per_video",
        "video_blob",
        "caption_blobs",
    )
    for key in required:
        if key not in data:
            raise FormatError(f"{path}: missing manifest field {key!r}")
    if data["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported manifest version {data['format_version']}"
        )
    return Manifest(
        format_version=data["format_version"],
        dim=data["dim"],
        n_videos=data["n_videos"],
        video_ids=list(data["video_ids"]),
        captions_per_video=list(data["captions_per_video"]),
        video_blob=data["video_blob"],
        caption_blobs=list(data["caption_blobs"]),
        quality_labels=data.get("quality_labels"),
        creation_seed=data.get("creation_seed"),
        provenance=data.get("provenance"),
    )


def load_corpus(directory) -> Corpus:
    """Load and validate a corpus directory; any inconsistency is a hard error."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    n = manifest.n_videos
    if len(manifest.video_ids) != n:
        raise FormatError(f"{directory}: manifest video_ids length != n_videos")
    if len(manifest.caption_blobs) != n or len(manifest.captions_per_video) != n:
        raise FormatError(f"{directory}: manifest caption lists length != n_videos")

    videos = read_matrix(directory / manifest.video_blob)
    if videos.shape != (n, manifest.dim):
        raise FormatError(
            f"{directory}: video blob shape {videos.shape} does not match "
            f"manifest ({n}, {manifest.dim})"
        )
    captions = []
    for i, name in enumerate(manifest.caption_blobs):
        cap = read_matrix(directory / name)
        if cap.shape != (manifest.captions_per_video[i], manifest.dim):
            raise FormatError(
                f"{directory}/{name}: shape {cap.shape} does not match manifest "
                f"({manifest.captions_per_video[i]}, {manifest.dim})"
            )
        captions.append(cap)
    return Corpus(
        video_ids=manifest.video_ids,
        video_embeddings=videos,
        captions=captions,
        quality_labels=manifest.quality_labels,
        creation_seed=manifest.creation_seed,
        provenance=manifest.provenance,
    )
