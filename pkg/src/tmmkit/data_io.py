"""Dataset ingestion (IDX), patch extraction, padding, synthetic data, and
the flat output formats (CSV / PGM / PBM) shared by the CLI tools."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CSV_VERSION_LINE = "# tmmkit-csv v1"

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxFormatError(Exception):
    """Malformed IDX file: bad magic, unsupported dtype, or truncated payload."""


def load_idx(path, scale: bool = True):
    """Parse an IDX file. Returns (array, dims).

    Unsigned-byte pixel payloads are scaled to [0, 1] when ``scale`` is set
    (pass False for label files).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError("file shorter than the 4-byte magic")
    zero1, zero2, dtype_code, ndims = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise IdxFormatError(f"bad magic bytes {raw[:4]!r}")
    if dtype_code not in _IDX_DTYPES:
        raise IdxFormatError(f"unsupported dtype code 0x{dtype_code:02x}")
    header_end = 4 + 4 * ndims
    if len(raw) < header_end:
        raise IdxFormatError("truncated dimension header")
    dims = struct.unpack(f">{ndims}I", raw[4:header_end]) if ndims else ()
    dtype = _IDX_DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    expected = header_end + count * dtype.itemsize
    if len(raw) < expected:
        raise IdxFormatError(f"payload truncated: need {expected} bytes, have {len(raw)}")
    data = np.frombuffer(raw[header_end:expected], dtype=dtype).reshape(dims)
    if dtype_code == 0x08 and scale:
        return data.astype(np.float64) / 255.0, dims
    return data.astype(dtype.newbyteorder("=")), dims


def write_idx(path, array):
    """Write an array as IDX (uint8 or float64 payloads)."""
    array = np.asarray(array)
    if array.dtype == np.uint8:
        code, dtype = 0x08, np.dtype(">u1")
    elif array.dtype == np.float64:
        code, dtype = 0x0E, np.dtype(">f8")
    else:
        raise IdxFormatError(f"unsupported array dtype {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def patchify(image, patch_shape, grid_shape=None, mask=None):
    """Cut an image into non-overlapping row-major patches.

    Returns (values (N, s), mask (N, s), grid) with s = prod(patch_shape).
    The image is zero-padded up to ``grid_shape`` patches when given (or to
    the next divisible extent otherwise); padded pixels are marked missing so
    they never influence likelihoods.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a 2D image")
    ph, pw = patch_shape
    h, w = image.shape
    if mask is None:
        mask = np.ones(image.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape:
        raise ValueError("mask extents do not match image")
    gh = -(-h // ph) if grid_shape is None else grid_shape[0]
    gw = -(-w // pw) if grid_shape is None else grid_shape[1]
    if gh * ph < h or gw * pw < w:
        raise ValueError("target grid smaller than the image")
    padded = np.zeros((gh * ph, gw * pw))
    padded[:h, :w] = image
    padded_mask = np.zeros((gh * ph, gw * pw), dtype=bool)
    padded_mask[:h, :w] = mask
    values = padded.reshape(gh, ph, gw, pw).transpose(0, 2, 1, 3).reshape(gh * gw, ph * pw)
    flags = padded_mask.reshape(gh, ph, gw, pw).transpose(0, 2, 1, 3).reshape(gh * gw, ph * pw)
    return values, flags, (gh, gw)


def unpatchify(values, grid_shape, patch_shape):
    """Inverse of ``patchify`` on divisible extents."""
    gh, gw = grid_shape
    ph, pw = patch_shape
    values = np.asarray(values).reshape(gh, gw, ph, pw)
    return values.transpose(0, 2, 1, 3).reshape(gh * ph, gw * pw)


@dataclass
class SynthSpec:
    """Recipe for a labeled dataset drawn from a known generating network."""

    generator: object            # a Network
    n_instances: int
    class_prior: np.ndarray | None = None


def synth_dataset(spec: SynthSpec, rng: np.random.Generator):
    """Sample (values, labels) from a ground-truth network.

    Returns a ``training.Dataset`` plus the generator, so tests can compare
    likelihoods against the model that actually produced the data.
    """
    from .sampling import sample
    from .training import Dataset

    net = spec.generator
    prior = spec.class_prior
    if prior is None:
        prior = np.full(net.n_classes, 1.0 / net.n_classes)
    prior = np.asarray(prior, dtype=np.float64)
    labels = rng.choice(net.n_classes, size=spec.n_instances, p=prior / prior.sum())
    values = np.stack([sample(net, int(y), rng) for y in labels])
    return Dataset(values=values, labels=labels), net


def write_csv(path, columns, rows):
    """Versioned CSV: comment header line, column names, then rows.

    Floats are rendered with ``repr`` so identical runs are byte-identical.
    """
    def render(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (np.floating,)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return str(v)

    with open(path, "w") as fh:
        fh.write(CSV_VERSION_LINE + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(render(v) for v in row) + "\n")


def read_csv(path):
    """Read back a versioned CSV as (columns, list-of-string-rows)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing version comment line")
    columns = lines[1].split(",") if len(lines) > 1 else []
    rows = [ln.split(",") for ln in lines[2:] if ln]
    return columns, rows


def write_pgm(path, image):
    """Binary (P5) PGM with maxval 255; input values clipped from [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / 255.0


def write_pbm(path, missing):
    """Binary (P4) PBM mask dump; 1 (black) marks a missing pixel."""
    missing = np.asarray(missing, dtype=bool)
    h, w = missing.shape
    padded_w = -(-w // 8) * 8
    bits = np.zeros((h, padded_w), dtype=np.uint8)
    bits[:, :w] = missing
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(packed.tobytes())


def read_pbm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 2)
    if parts[0] != b"P4":
        raise ValueError("not a binary PBM")
    w, h = map(int, parts[1].split())
    row_bytes = -(-w // 8)
    packed = np.frombuffer(parts[2][: row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(packed, axis=1)[:, :w]
    return bits.astype(bool)


def load_sklearn_digits(digit_pair=None, upscale: int = 2):
    """The bundled scikit-learn handwritten digits (8x8, values scaled to
    [0, 1]), optionally restricted to two classes and pixel-doubled so a
    2x2-patch quadtree has enough levels to be interesting.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = bunch.images.astype(np.float64) / 16.0
    labels = bunch.target.astype(np.int64)
    if digit_pair is not None:
        a, b = digit_pair
        keep = (labels == a) | (labels == b)
        images, labels = images[keep], labels[keep]
        labels = (labels == b).astype(np.int64)
    if upscale > 1:
        images = np.repeat(np.repeat(images, upscale, axis=1), upscale, axis=2)
    return images, labels
