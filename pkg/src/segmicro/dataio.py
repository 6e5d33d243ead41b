"""Samples, datasets, label encodings and on-disk formats.

On disk a sample is an image file plus a mask file:

* images: 8- or 16-bit grayscale PNG, or the raw multi-channel format below;
* masks: 8-bit grayscale or paletted PNG whose pixel value is the class index.

Raw format (``.raw``): eight text lines followed by little-endian float32
planes in channel-major order::

    SEGRAW1
    height <int>
    width <int>
    channels <int>
    dtype float32-le
    scale <float>          stored value = true value * scale
    labels <comma list>    label domain of the companion mask
    id <text>

A dataset manifest is JSON::

    {"format": "segmicro-manifest", "version": 1,
     "num_classes": 3, "num_channels": 1,
     "samples": [{"id": "...", "image": "rel/path.png", "mask": "rel/path.png"}]}

with paths relative to the manifest's directory.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment
from .errors import DataError, ShapeError

RAW_MAGIC = "SEGRAW1"
MANIFEST_FORMAT = "segmicro-manifest"
# class 0 black, 1 mid-gray, 2 white, 3 light-gray
MASK_PALETTE = [(0, 0, 0), (128, 128, 128), (255, 255, 255), (192, 192, 192)]
BRATS_LABELS = (0, 1, 2, 4)


@dataclass
class Sample:
    image: np.ndarray  # (H, W, C) float32
    mask: np.ndarray  # (H, W) uint8
    id: str = ""

    def __post_init__(self):
        if self.image.ndim == 2:
            self.image = self.image[..., None]
        if self.image.shape[:2] != self.mask.shape:
            raise ShapeError(f"sample {self.id!r}: image {self.image.shape} vs mask {self.mask.shape}")


@dataclass
class Dataset:
    samples: list
    num_classes: int
    num_channels: int
    note: str = ""

    def __post_init__(self):
        shapes = {s.image.shape for s in self.samples}
        if len(shapes) > 1:
            raise ShapeError(f"dataset samples are not homogeneous: {sorted(shapes)}")
        for s in self.samples:
            if s.image.shape[2] != self.num_channels:
                raise ShapeError(f"sample {s.id!r} has {s.image.shape[2]} channels, expected {self.num_channels}")
            if s.mask.size and int(s.mask.max()) >= self.num_classes:
                raise DataError(f"sample {s.id!r} has label {int(s.mask.max())} >= {self.num_classes}")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.num_classes, self.num_channels, self.note)

    def arrays(self, indices=None):
        """Stack samples into (N, H, W, C) images and (N, H, W) masks."""
        chosen = self.samples if indices is None else [self.samples[i] for i in indices]
        return (np.stack([s.image for s in chosen]).astype(np.float32, copy=False),
                np.stack([s.mask for s in chosen]))


def combine_masks(cells: np.ndarray, nuclei: np.ndarray) -> np.ndarray:
    """Three-class map: 0 background, 1 cells, 2 nuclei (nuclei win)."""
    cells, nuclei = np.asarray(cells), np.asarray(nuclei)
    if cells.shape != nuclei.shape:
        raise ShapeError(f"cells mask {cells.shape} vs nuclei mask {nuclei.shape}")
    out = np.zeros(cells.shape, dtype=np.uint8)
    out[cells != 0] = 1
    out[nuclei != 0] = 2
    return out


def remap_labels(mask: np.ndarray) -> np.ndarray:
    """BRATS labels {0, 1, 2, 4} -> {0, 1, 2, 3}."""
    mask = np.asarray(mask)
    bad = np.setdiff1d(np.unique(mask), BRATS_LABELS + (3,))
    if bad.size:
        raise DataError(f"unexpected BRATS label {int(bad[0])}")
    out = mask.astype(np.uint8, copy=True)
    out[out == 4] = 3
    return out


def pad_to_multiple(a: np.ndarray, multiple: int = 16, fill=0) -> np.ndarray:
    """Zero-pad height and width at the bottom/right up to a multiple."""
    h, w = a.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if not ph and not pw:
        return a
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (a.ndim - 2)
    return np.pad(a, pad, constant_values=fill)


def stack_modalities(t1, t1ce, t2, flair, multiple: int = 16) -> np.ndarray:
    """Stack four [0, 1] slices as channels (t1, t1ce, t2, flair), padded to ``multiple``."""
    planes = [np.asarray(p, dtype=np.float32) for p in (t1, t1ce, t2, flair)]
    shapes = {p.shape for p in planes}
    if len(shapes) != 1 or planes[0].ndim != 2:
        raise ShapeError(f"modalities must be equal 2-D slices, got {[p.shape for p in planes]}")
    return pad_to_multiple(np.stack(planes, axis=-1), multiple)


def generate_dataset(originals: Dataset, policy: augment.AugmentPolicy, multiplier: int, seed: int = 0) -> Dataset:
    """Expand each original into ``multiplier`` samples.

    The first copy of each original is only preprocessed; the others are
    random transforms of it, seeded with ``seed + output index``.
    """
    if multiplier < 1:
        raise DataError(f"multiplier must be >= 1, got {multiplier}")
    out = []
    for i, s in enumerate(originals.samples):
        image = s.image[..., 0] if s.image.shape[2] == 1 else s.image
        base_img, base_mask = augment.preprocess(image, s.mask, policy)
        out.append(Sample(base_img, base_mask, f"{s.id}_000"))
        eq_img = augment.equalize(image) if policy.equalize else image
        for k in range(1, multiplier):
            img, msk = augment.transform(eq_img, s.mask, policy, seed + i * multiplier + k)
            out.append(Sample(img, msk, f"{s.id}_{k:03d}"))
    note = f"generated x{multiplier} from {len(originals)} originals, seed {seed}"
    return Dataset(out, originals.num_classes, originals.num_channels, note)


def split_train_val(dataset: Dataset, fraction: float = 0.1, seed: int = 0):
    """Shuffled split with ``ceil(fraction * N)`` validation samples."""
    if not 0 < fraction < 1:
        raise DataError(f"validation fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    # rounding guards against e.g. 0.1 * 100 = 10.000000000000002
    n_val = math.ceil(round(fraction * n, 9))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = sorted(perm[:n_val].tolist())
    train_idx = sorted(perm[n_val:].tolist())
    return dataset.subset(train_idx), dataset.subset(val_idx)


def read_raw(path):
    path = Path(path)
    data = path.read_bytes()
    lines = data.split(b"\n", 8)
    if len(lines) < 9 or lines[0].decode("ascii", "replace") != RAW_MAGIC:
        raise DataError(f"{path}: not a {RAW_MAGIC} file")
    header = {}
    for line in lines[1:8]:
        key, _, value = line.decode("utf-8").partition(" ")
        header[key] = value
    try:
        h, w, c = int(header["height"]), int(header["width"]), int(header["channels"])
        scale = float(header["scale"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed raw header ({exc})") from exc
    if header.get("dtype") != "float32-le":
        raise DataError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    payload = lines[8]
    if len(payload) != h * w * c * 4:
        raise DataError(f"{path}: payload has {len(payload)} bytes, expected {h * w * c * 4}")
    planes = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    image = np.ascontiguousarray(planes.transpose(1, 2, 0)).astype(np.float32) / np.float32(scale)
    labels = [int(v) for v in header.get("labels", "").split(",") if v]
    return image, {"id": header.get("id", ""), "labels": labels, "scale": scale}


def write_raw(path, image: np.ndarray, sample_id: str = "", labels=(), scale: float = 1.0) -> None:
    if image.ndim == 2:
        image = image[..., None]
    h, w, c = image.shape
    header = "\n".join([
        RAW_MAGIC, f"height {h}", f"width {w}", f"channels {c}", "dtype float32-le",
        f"scale {scale!r}", "labels " + ",".join(str(int(v)) for v in labels), f"id {sample_id}",
    ]) + "\n"
    payload = (image.astype(np.float32) * np.float32(scale)).transpose(2, 0, 1).astype("<f4").tobytes()
    Path(path).write_bytes(header.encode("utf-8") + payload)


def _read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "LA"):
                im = im.convert("L")
            return np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """Image file -> (H, W, C) float32 in [0, 1]."""
    if str(path).endswith(".raw"):
        return read_raw(path)[0]
    arr = _read_png(path)
    if arr.dtype == np.uint8:
        img = augment.normalize(arr, "8bit")
    elif arr.dtype in (np.uint16, np.int32, np.uint32):
        img = augment.normalize(arr.astype(np.uint16), "16bit")
    else:
        raise DataError(f"{path}: unsupported pixel type {arr.dtype}")
    return img[..., None]


def read_mask(path, num_classes: int = None) -> np.ndarray:
    arr = _read_png(path)
    if arr.ndim != 2:
        raise DataError(f"{path}: mask must be single-channel, got shape {arr.shape}")
    if num_classes is not None and arr.size and int(arr.max()) >= num_classes:
        raise DataError(f"{path}: mask value {int(arr.max())} >= num_classes {num_classes}")
    return arr.astype(np.uint8)


def read_sample(image_path, mask_path, num_classes: int = None, sample_id: str = None) -> Sample:
    image = read_image(image_path)
    mask = read_mask(mask_path, num_classes)
    if image.shape[:2] != mask.shape:
        raise DataError(f"{image_path} is {image.shape[:2]} but {mask_path} is {mask.shape}")
    return Sample(image, mask, sample_id if sample_id is not None else Path(image_path).stem)


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    im = Image.frombytes("P", (mask.shape[1], mask.shape[0]), mask.tobytes())
    flat = [v for rgb in MASK_PALETTE for v in rgb]
    im.putpalette(flat + [0] * (768 - len(flat)))
    im.save(path)


def write_image(path, image: np.ndarray) -> None:
    """Single-channel images go to 16-bit PNG, multi-channel to raw."""
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim == 3 or str(path).endswith(".raw"):
        write_raw(path, image)
        return
    q = np.round(np.clip(image, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(q).save(path)


def write_sample(sample: Sample, image_path, mask_path) -> None:
    write_image(image_path, sample.image)
    write_mask(mask_path, sample.mask)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write every sample plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    ext = ".png" if dataset.num_channels == 1 else ".raw"
    entries = []
    for s in dataset.samples:
        img_rel, mask_rel = f"images/{s.id}{ext}", f"masks/{s.id}.png"
        write_sample(s, out_dir / img_rel, out_dir / mask_rel)
        entries.append({"id": s.id, "image": img_rel, "mask": mask_rel})
    manifest = {
        "format": MANIFEST_FORMAT, "version": 1,
        "num_classes": dataset.num_classes, "num_channels": dataset.num_channels,
        "note": dataset.note, "samples": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def read_manifest(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a {MANIFEST_FORMAT} file")
    base = path.parent
    nc = int(manifest["num_classes"])
    samples = [read_sample(base / e["image"], base / e["mask"], nc, e["id"]) for e in manifest["samples"]]
    return Dataset(samples, nc, int(manifest["num_channels"]), manifest.get("note", ""))


def read_directory(image_dir, mask_dir, num_classes: int) -> Dataset:
    """Pair files by stem: ``image_dir/<id>.png`` with ``mask_dir/<id>.png``."""
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    images = sorted(p for p in image_dir.iterdir() if p.suffix in (".png", ".raw"))
    if not images:
        raise DataError(f"no images found in {image_dir}")
    samples = []
    for p in images:
        m = mask_dir / (p.stem + ".png")
        if not m.exists():
            raise DataError(f"no mask for {p.name} in {mask_dir}")
        samples.append(read_sample(p, m, num_classes))
    return Dataset(samples, num_classes, samples[0].image.shape[2], f"read from {image_dir}")
