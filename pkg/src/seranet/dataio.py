"""Dataset directory format: a human-readable manifest plus raw arrays.

Layout of one dataset directory::

    manifest.json             record listing, dims, seeds, dtype declarations
    b000s000_y.bin            (2, H, W) little-endian float32, masked k-space
    b000s000_xfull.bin        (2, H, W) little-endian float32, full image
    b000s000_labels.bin       (H, W) uint8 tissue labels
    b000s000_mask.bin         (W,) uint8 kept-lines vector

Writing the same records twice produces byte-identical files, so directory
checksums are a valid reproducibility check.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .kspace import KSpaceSample, RecordMeta, SamplingMask

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

ARRAY_KINDS = ("y", "xfull", "labels", "mask")


def _record_entry(sample: KSpaceSample) -> dict:
    m = sample.meta
    rid = m.record_id
    return {
        "id": rid,
        "split": m.split,
        "brain_id": m.brain_id,
        "slice_id": m.slice_id,
        "te": m.te,
        "tr": m.tr,
        "noise_level": sample.noise_level,
        "seeds": {
            "labels": m.label_seed,
            "phase": m.phase_seed,
            "mask": m.mask_seed,
            "noise": m.noise_seed,
        },
        "files": {kind: f"{rid}_{kind}.bin" for kind in ARRAY_KINDS},
    }


def write_dataset(samples: list[KSpaceSample], out_dir, params: dict | None = None) -> Path:
    """Serialize records into ``out_dir`` and return the manifest path."""
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    first = samples[0]
    height, width = first.labels.shape
    records = []
    for sample in samples:
        entry = _record_entry(sample)
        files = entry["files"]
        (out / files["y"]).write_bytes(np.ascontiguousarray(sample.y, dtype="<f4").tobytes())
        (out / files["xfull"]).write_bytes(
            np.ascontiguousarray(sample.x_full, dtype="<f4").tobytes())
        (out / files["labels"]).write_bytes(
            np.ascontiguousarray(sample.labels, dtype=np.uint8).tobytes())
        (out / files["mask"]).write_bytes(
            np.ascontiguousarray(sample.mask.kept_lines, dtype=np.uint8).tobytes())
        records.append(entry)

    manifest = {
        "format_version": FORMAT_VERSION,
        "dims": [int(height), int(width)],
        "dtype": "<f4",
        "byte_order": "little",
        "label_dtype": "u1",
        "mask_dtype": "u1",
        "rate": first.mask.rate,
        "center_lines": first.mask.center_lines,
        "noise_level": first.noise_level,
        "n_train": sum(1 for s in samples if s.meta.split == "train"),
        "n_test": sum(1 for s in samples if s.meta.split == "test"),
        "params": params or {},
        "records": records,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


class DatasetReader:
    """Lazy-ish reader over a dataset directory.

    ``load_x_full=False`` guarantees the ground-truth image files are never
    opened; ``files_read`` records every file actually touched so tests and
    run logs can assert the data path (the segmentation-only loss variants
    must train without ever seeing a reconstruction target).
    """

    def __init__(self, root, split: str | None = None, load_x_full: bool = True):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise FileNotFoundError(f"no {MANIFEST_NAME} in {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format version "
                             f"{self.manifest.get('format_version')!r}")
        self.load_x_full = load_x_full
        self.files_read: set[str] = set()
        records = self.manifest["records"]
        if split is not None:
            records = [r for r in records if r["split"] == split]
        self.records = records

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(self.manifest["dims"])

    def __len__(self) -> int:
        return len(self.records)

    def _read(self, name: str) -> bytes:
        self.files_read.add(name)
        return (self.root / name).read_bytes()

    def __getitem__(self, index: int) -> KSpaceSample:
        rec = self.records[index]
        height, width = self.dims
        files = rec["files"]
        y = np.frombuffer(self._read(files["y"]), dtype="<f4").reshape(2, height, width)
        labels = np.frombuffer(self._read(files["labels"]), dtype=np.uint8)
        labels = labels.reshape(height, width)
        kept = np.frombuffer(self._read(files["mask"]), dtype=np.uint8).astype(bool)
        x_full = None
        if self.load_x_full:
            x_full = np.frombuffer(self._read(files["xfull"]), dtype="<f4")
            x_full = x_full.reshape(2, height, width)
        mask = SamplingMask(kept_lines=kept, rate=self.manifest["rate"],
                            center_lines=self.manifest["center_lines"],
                            seed=rec["seeds"]["mask"])
        meta = RecordMeta(
            brain_id=rec["brain_id"], slice_id=rec["slice_id"], split=rec["split"],
            te=rec["te"], tr=rec["tr"],
            label_seed=rec["seeds"]["labels"], phase_seed=rec["seeds"]["phase"],
            mask_seed=rec["seeds"]["mask"], noise_seed=rec["seeds"]["noise"],
        )
        return KSpaceSample(y=y.copy(), x_full=None if x_full is None else x_full.copy(),
                            labels=labels.copy(), mask=mask,
                            noise_level=rec["noise_level"], meta=meta)

    def load_all(self) -> list[KSpaceSample]:
        return [self[i] for i in range(len(self))]

    def x_full_files_read(self) -> set[str]:
        return {f for f in self.files_read if f.endswith("_xfull.bin")}


def dataset_checksum(root) -> str:
    """SHA-256 over the manifest and every record file, in sorted name order."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(root.iterdir()):
        if path.is_file():
            digest.update(path.name.encode("utf-8"))
            digest.update(path.read_bytes())
    return digest.hexdigest()
