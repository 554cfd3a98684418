"""Dataset manifests: UTF-8 tab-separated, one entry per line.

Columns are ``image  [reference]  [mos]`` with empty fields allowed and
``#`` comments ignored. Paths are interpreted relative to the manifest
file. The content id of an entry is the file stem up to the first
``__`` and is what keeps train/test splits content-disjoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ManifestError
from .imaging import load_image
from .util import derive_rng


@dataclass
class ManifestEntry:
    image: str
    reference: str | None = None
    mos: float | None = None

    def content_id(self) -> str:
        stem = os.path.splitext(os.path.basename(self.image))[0]
        return stem.split("__")[0]


def read_manifest(path: str) -> list[ManifestEntry]:
    entries = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                cols = line.split("\t")
                if len(cols) > 3:
                    raise ManifestError(f"{path}:{lineno}: more than 3 columns")
                image = cols[0].strip()
                if not image:
                    raise ManifestError(f"{path}:{lineno}: empty image column")
                reference = cols[1].strip() if len(cols) > 1 and cols[1].strip() else None
                mos = None
                if len(cols) > 2 and cols[2].strip():
                    try:
                        mos = float(cols[2])
                    except ValueError:
                        raise ManifestError(f"{path}:{lineno}: bad mos value {cols[2]!r}") from None
                    if not np.isfinite(mos) or not 0.0 <= mos <= 1.0:
                        raise ManifestError(f"{path}:{lineno}: mos {mos} outside [0, 1]")
                entries.append(ManifestEntry(image, reference, mos))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return entries


def write_manifest(path: str, entries: list[ManifestEntry]) -> None:
    lines = []
    for e in entries:
        cols = [e.image, e.reference or ""]
        if e.mos is not None:
            cols.append(f"{e.mos:.8f}")
        elif not cols[1]:
            cols = cols[:1]
        lines.append("\t".join(cols).rstrip("\t"))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def _resolve(base: str, rel: str) -> str:
    return rel if os.path.isabs(rel) else os.path.join(base, rel)


def load_pairs(manifest_path: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load (image, reference) pairs; each pair must be equal-sized."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    pairs = []
    for e in read_manifest(manifest_path):
        if not e.reference:
            raise ManifestError(f"{manifest_path}: entry {e.image!r} lacks a reference")
        img = load_image(_resolve(base, e.image))
        ref = load_image(_resolve(base, e.reference))
        if img.shape != ref.shape:
            raise ManifestError(
                f"{manifest_path}: size mismatch for {e.image!r}: {img.shape} vs {ref.shape}"
            )
        pairs.append((img, ref))
    return pairs


def load_labeled(manifest_path: str):
    """Load (images, labels, entries) for quality-model training."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = read_manifest(manifest_path)
    images, labels = [], []
    for e in entries:
        if e.mos is None:
            raise ManifestError(f"{manifest_path}: entry {e.image!r} lacks a mos label")
        images.append(load_image(_resolve(base, e.image)))
        labels.append(e.mos)
    return images, np.array(labels), entries


def split_by_content(entries: list[ManifestEntry], holdout_fraction: float, seed: int):
    """Content-disjoint train/holdout split (no content id overlap)."""
    ids = sorted({e.content_id() for e in entries})
    rng = derive_rng("content-split", seed)
    rng.shuffle(ids)
    n_hold = max(1, int(round(len(ids) * holdout_fraction)))
    hold = set(ids[:n_hold])
    train = [e for e in entries if e.content_id() not in hold]
    test = [e for e in entries if e.content_id() in hold]
    return train, test
