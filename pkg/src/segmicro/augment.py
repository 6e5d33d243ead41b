"""Preprocessing and the seeded random transform pipeline.

Images are float arrays shaped (H, W) or (H, W, C) with values in [0, 1];
masks are integer label maps shaped (H, W). Every geometric step moves the
image and its mask together: images are resampled bilinearly, masks by
nearest neighbour, and pixels entering from outside the frame are filled
with 0 in the image and class 0 in the mask.

``transform`` draws from one ``numpy.random.Generator`` in this fixed order::

    flip-h, flip-v,
    warp-h apply?, warp-h amplitude, warp-h frequency,
    warp-v apply?, warp-v amplitude, warp-v frequency,
    rotation angle, zoom factor

Amplitude and frequency are drawn even when a warp pass is skipped so that
the stream position never depends on earlier outcomes.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

BACKGROUND = 0


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    warp_prob: float = 0.5
    warp_amplitude_range: tuple = (10.0, 50.0)
    warp_frequency_range: tuple = (0.5, 2.0)
    max_rotation_deg: float = 60.0
    zoom_range: tuple = (0.8, 1.2)
    target_size: tuple = None
    equalize: bool = True

    def __post_init__(self):
        for name in ("warp_amplitude_range", "warp_frequency_range", "zoom_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.target_size is not None:
            object.__setattr__(self, "target_size", tuple(int(v) for v in self.target_size))
        self.validate()

    def validate(self) -> None:
        for name in ("flip_prob", "warp_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        lo, hi = self.zoom_range
        if not 0 < lo <= hi:
            raise ConfigError(f"zoom_range must be positive and ordered, got {self.zoom_range}")
        lo, hi = self.warp_amplitude_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"warp_amplitude_range must be non-negative and ordered, got {self.warp_amplitude_range}")
        lo, hi = self.warp_frequency_range
        if not lo <= hi:
            raise ConfigError(f"warp_frequency_range must be ordered, got {self.warp_frequency_range}")
        if self.max_rotation_deg < 0:
            raise ConfigError("max_rotation_deg must be >= 0")
        if self.target_size is not None and (len(self.target_size) != 2 or min(self.target_size) < 1):
            raise ConfigError(f"target_size must be (height, width), got {self.target_size}")

    @classmethod
    def microscopy(cls, **kw) -> "AugmentPolicy":
        return cls(**{"max_rotation_deg": 60.0, "zoom_range": (0.8, 1.2), **kw})

    @classmethod
    def brats(cls, **kw) -> "AugmentPolicy":
        return cls(**{"max_rotation_deg": 20.0, "zoom_range": (0.9, 1.1), "equalize": False, **kw})

    @classmethod
    def neutral(cls, **kw) -> "AugmentPolicy":
        return cls(**{"flip_prob": 0.0, "warp_prob": 0.0, "max_rotation_deg": 0.0,
                      "zoom_range": (1.0, 1.0), "equalize": False, **kw})

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augmentation policy keys: {sorted(unknown)}")
        return cls(**d)


def normalize(image: np.ndarray, mode: str = "auto") -> np.ndarray:
    """Map pixel values to [0, 1].

    ``mode`` is ``"8bit"`` (x / 255), ``"16bit"`` (x / 65535), ``"minmax"``
    (per-image min-max) or ``"auto"``, which picks by dtype and falls back to
    min-max for floats. A constant image under min-max becomes all zeros.
    """
    image = np.asarray(image)
    if mode == "auto":
        mode = {np.dtype(np.uint8): "8bit", np.dtype(np.uint16): "16bit"}.get(image.dtype, "minmax")
    if mode == "8bit":
        return image.astype(np.float32) / 255.0
    if mode == "16bit":
        return image.astype(np.float32) / 65535.0
    if mode != "minmax":
        raise ConfigError(f"unknown normalization mode {mode!r}")
    x = image.astype(np.float32)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def equalize(image: np.ndarray, bins: int = 256) -> np.ndarray:
    """Histogram equalization of a [0, 1] image with a CDF remap.

    Multi-channel images are equalized channel by channel.
    """
    if image.ndim == 3:
        return np.stack([equalize(image[..., c], bins) for c in range(image.shape[2])], axis=-1)
    idx = np.clip((image * bins).astype(np.int64), 0, bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins)
    cdf = np.cumsum(hist) / idx.size
    cdf_min = cdf[hist > 0][0]
    if cdf_min >= 1.0:
        return image.astype(np.float32, copy=True)
    lut = ((cdf - cdf_min) / (1.0 - cdf_min)).clip(0, 1)
    return lut[idx].astype(np.float32)


def flip(image, mask, rng, prob: float = 0.5):
    """Mirror columns and rows, each with an independent probability."""
    flip_h = rng.random() < prob
    flip_v = rng.random() < prob
    if flip_h:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if flip_v:
        image, mask = image[::-1], mask[::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def warp_offsets(length: int, amplitude: float, frequency: float) -> np.ndarray:
    """Per-line shift int(A * (sin(f * pi * i / 180) + 1) / 2) for i in range(length)."""
    i = np.arange(length)
    return (amplitude * (np.sin(frequency * np.pi * i / 180.0) + 1.0) / 2.0).astype(np.int64)


def shift_rows(a: np.ndarray, offsets: np.ndarray, fill=0) -> np.ndarray:
    """Shift row i of ``a`` right by offsets[i]; vacated cells get ``fill``."""
    h, w = a.shape[:2]
    src = np.arange(w)[None, :] - offsets[:, None]
    valid = src >= 0
    src = np.clip(src, 0, w - 1)
    if a.ndim == 3:
        out = np.take_along_axis(a, src[..., None].repeat(a.shape[2], axis=2), axis=1)
        out[~valid] = fill
    else:
        out = np.take_along_axis(a, src, axis=1)
        out[~valid] = fill
    return out


def warp_pass(image, mask, amplitude: float, frequency: float, vertical: bool):
    if vertical:
        image_t = np.swapaxes(image, 0, 1)
        mask_t = mask.T
        offs = warp_offsets(image_t.shape[0], amplitude, frequency)
        return (np.ascontiguousarray(np.swapaxes(shift_rows(image_t, offs, 0), 0, 1)),
                np.ascontiguousarray(shift_rows(mask_t, offs, BACKGROUND).T))
    offs = warp_offsets(image.shape[0], amplitude, frequency)
    return shift_rows(image, offs, 0), shift_rows(mask, offs, BACKGROUND)


def warp(image, mask, rng, prob: float = 0.5, amplitude_range=(10.0, 50.0), frequency_range=(0.5, 2.0)):
    """Sine warps: horizontal then vertical, each applied with probability ``prob``."""
    for vertical in (False, True):
        apply = rng.random() < prob
        amplitude = rng.uniform(*amplitude_range)
        frequency = rng.uniform(*frequency_range)
        if apply:
            image, mask = warp_pass(image, mask, amplitude, frequency, vertical)
    return image, mask


def _affine(image, mask, matrix, offset, out_shape):
    def resample(a, order, mode):
        if a.ndim == 3:
            return np.stack([resample(a[..., c], order, mode) for c in range(a.shape[2])], axis=-1)
        return ndimage.affine_transform(a, matrix, offset=offset, output_shape=out_shape,
                                        order=order, mode=mode, cval=0)

    img = resample(image.astype(np.float32, copy=False), 1, "grid-constant")
    msk = resample(mask, 0, "grid-constant")
    return img.astype(np.float32, copy=False), msk.astype(mask.dtype, copy=False)


def rotate_by(image, mask, angle_deg: float):
    """Rotate counter-clockwise by ``angle_deg`` about the image centre."""
    if angle_deg == 0:
        return image.copy(), mask.copy()
    h, w = mask.shape
    t = np.deg2rad(angle_deg)
    c, s = np.cos(t), np.sin(t)
    matrix = np.array([[c, s], [-s, c]])
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - matrix @ centre
    return _affine(image, mask, matrix, offset, (h, w))


def rotate(image, mask, rng, max_deg: float):
    angle = rng.uniform(-max_deg, max_deg)
    return rotate_by(image, mask, angle)


def zoom_by(image, mask, factor: float, target_size=None):
    """Scale about the centre by ``factor`` into a frame of ``target_size``.

    Content that overflows the frame is cropped; a shrunken result is
    centred and padded with background.
    """
    h, w = mask.shape
    th, tw = target_size or (h, w)
    if factor == 1.0 and (th, tw) == (h, w):
        return image.copy(), mask.copy()
    matrix = np.diag([1.0 / factor, 1.0 / factor])
    c_in = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    c_out = np.array([(th - 1) / 2.0, (tw - 1) / 2.0])
    offset = c_in - matrix @ c_out
    return _affine(image, mask, matrix, offset, (th, tw))


def zoom_crop(image, mask, rng, zoom_range, target_size=None):
    factor = rng.uniform(*zoom_range)
    return zoom_by(image, mask, factor, target_size)


def rescale(image, mask, size):
    """Resize to ``size`` (height, width); pixel centres are aligned."""
    h, w = mask.shape
    th, tw = size
    if (th, tw) == (h, w):
        return image.copy(), mask.copy()
    matrix = np.diag([h / th, w / tw])
    offset = 0.5 * np.diag(matrix) - 0.5

    def resample(a, order):
        if a.ndim == 3:
            return np.stack([resample(a[..., c], order) for c in range(a.shape[2])], axis=-1)
        return ndimage.affine_transform(a, matrix, offset=offset, output_shape=(th, tw),
                                        order=order, mode="nearest")

    return (resample(image.astype(np.float32, copy=False), 1).astype(np.float32),
            resample(mask, 0).astype(mask.dtype))


def preprocess(image, mask, policy: AugmentPolicy):
    """Deterministic part of the pipeline: optional equalization and rescale."""
    if policy.equalize:
        image = equalize(image)
    if policy.target_size is not None:
        image, mask = rescale(image, mask, policy.target_size)
    return image.astype(np.float32, copy=False), mask


def transform(image, mask, policy: AugmentPolicy, seed: int):
    """(scale) -> flip -> warp -> rotate -> zoom -> (crop), driven by one seeded stream.

    Equalization is not part of this chain; see :func:`preprocess`.
    """
    rng = np.random.default_rng(seed)
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask)
    if policy.target_size is not None:
        image, mask = rescale(image, mask, policy.target_size)
    size = mask.shape
    image, mask = flip(image, mask, rng, policy.flip_prob)
    image, mask = warp(image, mask, rng, policy.warp_prob, policy.warp_amplitude_range,
                       policy.warp_frequency_range)
    image, mask = rotate(image, mask, rng, policy.max_rotation_deg)
    image, mask = zoom_crop(image, mask, rng, policy.zoom_range, size)
    return image, mask
