"""Dataset scanning, deterministic splits, and image decoding.

Supported layouts:

  mvtec   <root>/<category>/train/good/*.png plus
          <root>/<category>/test/<defect-or-good>/*.png;
          a sample is normal (label 0) exactly when its directory is
          named "good".
  visa    <root>/split_csv/1cls.csv with columns
          object,split,label,image,mask; label values "normal"/"anomaly".
  flat    <root>/<class>/*; the classes "good" and "normal" map to
          label 0, everything else to 1, all under one category.

Scanning never decodes pixels; it produces a manifest of samples with
stable ids (root-relative POSIX paths) in lexicographic order, so the
same tree gives the same manifest on any machine. The source split
("train"/"test" where the layout has one) is informational only:
`stratified_split` reassigns every sample to "train" or "eval" per
(category, label) cell, which is what training actually uses, since
anomalous examples must appear on both sides.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeError
from .rng import derive_seed, shuffle_indices, string_salt

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "ImageSample",
    "scan_dataset",
    "stratified_split",
    "load_image",
]

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass(frozen=True)
class ManifestEntry:
    id: str  # root-relative POSIX path, unique within the dataset
    category: str
    path: str  # absolute filesystem path
    label: int  # 0 normal, 1 anomalous
    split: str  # "train" / "test" / "unsplit" before splitting, "train" / "eval" after


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    layout: str
    entries: tuple[ManifestEntry, ...]
    warnings: tuple[str, ...] = ()

    def categories(self) -> tuple[str, ...]:
        return tuple(sorted({e.category for e in self.entries}))

    def counts(self) -> dict[str, int]:
        out = {"total": len(self.entries), "normal": 0, "anomalous": 0}
        for e in self.entries:
            out["anomalous" if e.label else "normal"] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "layout": self.layout,
            "warnings": list(self.warnings),
            "samples": [
                {"id": e.id, "category": e.category, "label": e.label, "split": e.split}
                for e in self.entries
            ],
        }


@dataclass(frozen=True)
class ImageSample:
    """A decoded image plus its manifest fields."""

    id: str
    category: str
    label: int
    split: str
    image: np.ndarray  # (H, W, C) uint8, C in {1, 3}


def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


def _entry(root: Path, path: Path, category: str, label: int, split: str) -> ManifestEntry:
    rel = PurePosixPath(path.relative_to(root).as_posix())
    return ManifestEntry(
        id=str(rel), category=category, path=str(path), label=label, split=split
    )


def _scan_mvtec(root: Path) -> tuple[list[ManifestEntry], list[str]]:
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    categories = sorted(d for d in root.iterdir() if d.is_dir())
    if not categories:
        warnings.append(f"no category directories under {root}")
    for cat_dir in categories:
        category = cat_dir.name
        found = 0
        train_good = cat_dir / "train" / "good"
        if train_good.is_dir():
            for path in sorted(train_good.iterdir()):
                if _is_image(path):
                    entries.append(_entry(root, path, category, 0, "train"))
                    found += 1
        test_dir = cat_dir / "test"
        if test_dir.is_dir():
            for sub in sorted(d for d in test_dir.iterdir() if d.is_dir()):
                label = 0 if sub.name == "good" else 1
                for path in sorted(sub.iterdir()):
                    if _is_image(path):
                        entries.append(_entry(root, path, category, label, "test"))
                        found += 1
        if found == 0:
            warnings.append(f"category {category!r} contains no images")
    return entries, warnings


def _scan_visa(root: Path) -> tuple[list[ManifestEntry], list[str]]:
    csv_path = root / "split_csv" / "1cls.csv"
    if not csv_path.is_file():
        raise FileNotFoundError(f"split csv not found: {csv_path}")
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"object", "split", "label", "image"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ConfigError(
                f"{csv_path} must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row in reader:
            raw_label = row["label"].strip().lower()
            if raw_label not in ("normal", "anomaly"):
                raise ConfigError(f"unknown label {row['label']!r} in {csv_path}")
            image_rel = row["image"].strip()
            path = root / image_rel
            if not path.is_file():
                warnings.append(f"listed image missing on disk: {image_rel}")
                continue
            entries.append(
                ManifestEntry(
                    id=str(PurePosixPath(image_rel)),
                    category=row["object"].strip(),
                    path=str(path),
                    label=0 if raw_label == "normal" else 1,
                    split=row["split"].strip() or "unsplit",
                )
            )
    entries.sort(key=lambda e: (e.category, e.id))
    if not entries:
        warnings.append(f"no usable rows in {csv_path}")
    return entries, warnings


def _scan_flat(root: Path) -> tuple[list[ManifestEntry], list[str]]:
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        warnings.append(f"no class directories under {root}")
    for class_dir in class_dirs:
        label = 0 if class_dir.name.lower() in ("good", "normal") else 1
        for path in sorted(class_dir.iterdir()):
            if _is_image(path):
                entries.append(_entry(root, path, "all", label, "unsplit"))
    if class_dirs and not entries:
        warnings.append(f"class directories under {root} contain no images")
    return entries, warnings


_LAYOUTS = {"mvtec": _scan_mvtec, "visa": _scan_visa, "flat": _scan_flat}


def scan_dataset(root, layout: str = "mvtec") -> DatasetManifest:
    """Walk a dataset tree into a manifest. Never decodes pixels."""
    if layout not in _LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}, expected one of {sorted(_LAYOUTS)}")
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root is not a directory: {root}")
    entries, warnings = _LAYOUTS[layout](root)
    return DatasetManifest(
        root=str(root), layout=layout, entries=tuple(entries), warnings=tuple(warnings)
    )


def stratified_split(
    manifest: DatasetManifest, train_fraction: float = 0.6, seed: int = 0
) -> DatasetManifest:
    """Reassign every sample to "train" or "eval", stratified per (category, label).

    Each cell is shuffled with a seed derived from (seed, category,
    label) and its first floor(train_fraction * n) samples go to train,
    so the train/eval class ratio per category tracks the global one to
    within a single sample. Deterministic in (manifest, seed).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    groups: dict[tuple[str, int], list[int]] = {}
    for i, e in enumerate(manifest.entries):
        groups.setdefault((e.category, e.label), []).append(i)

    assignment = {}
    for (category, label), indices in sorted(groups.items()):
        order = shuffle_indices(len(indices), derive_seed(seed, string_salt(category), label))
        n_train = int(train_fraction * len(indices))
        chosen = {indices[k] for k in order[:n_train]}
        for i in indices:
            assignment[i] = "train" if i in chosen else "eval"

    entries = tuple(
        replace(e, split=assignment[i]) for i, e in enumerate(manifest.entries)
    )
    return DatasetManifest(
        root=manifest.root, layout=manifest.layout, entries=entries, warnings=manifest.warnings
    )


def load_image(entry: ManifestEntry) -> ImageSample:
    """Decode one manifest entry to uint8 pixels.

    Greyscale stays single-channel (preprocessing replicates it later);
    palette and alpha images are converted to RGB. Undecodable or
    truncated files raise DecodeError naming the path.
    """
    try:
        with Image.open(entry.path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {entry.path}: {exc}") from None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageSample(
        id=entry.id, category=entry.category, label=entry.label, split=entry.split, image=arr
    )
