"""Deterministic persistence for every pipeline artifact.

Formats: a JSON camera manifest, "VXF1" voxel fields, "UNC1" uncertainty
grids, "IMGF" raw float planes, and 8-bit PNG for color images. All binary
payloads are little-endian with a 4-byte magic; grid payloads are serialized
x-fastest (flat index = x + nx * (y + ny * z)). Saves are atomic
(write-temp-then-rename); loads never mutate files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import FormatError, MissingFileError, PoseError, TruncationError, ValidationError
from .field_core import Aabb, VoxelField
from .laplace_uq import UncertaintyField
from .renderer import Camera

MAX_GRID_DIM = 4096  # resolution sanity cap while parsing headers


def _atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, path):
        if not os.path.exists(path):
            raise MissingFileError(f"no such file: {path}")
        with open(path, "rb") as f:
            self.data = f.read()
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"{self.path}: expected {n} more bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"{self.path}: bad magic {got!r}, expected {magic!r}")

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _grid_to_x_fastest(arr):
    """(nx,ny,nz[,C]) array -> flat bytes with x varying fastest."""
    perm = (2, 1, 0) if arr.ndim == 3 else (2, 1, 0, 3)
    return np.ascontiguousarray(np.transpose(arr, perm)).tobytes()

def _grid_from_x_fastest(buf, shape, channels=0):
    nx, ny, nz = shape
    count = nx * ny * nz * max(channels, 1)
    arr = np.frombuffer(buf, dtype="<f4", count=count)
    if channels:
        arr = arr.reshape(nz, ny, nx, channels).transpose(2, 1, 0, 3)
    else:
        arr = arr.reshape(nz, ny, nx).transpose(2, 1, 0)
    return np.ascontiguousarray(arr)


def _check_dims(dims):
    if any(d < 2 or d > MAX_GRID_DIM for d in dims):
        raise FormatError(f"resolution overflow or underflow: {dims}")


# --------------------------------------------------------------------------
# voxel fields ("VXF1")
# --------------------------------------------------------------------------

def save_field(field_obj: VoxelField, path):
    nx, ny, nz = field_obj.resolution
    parts = [
        b"VXF1",
        struct.pack("<3I", nx, ny, nz),
        struct.pack("<6d", *field_obj.bounds.min_corner, *field_obj.bounds.max_corner),
        _grid_to_x_fastest(field_obj.raw_density),
        _grid_to_x_fastest(field_obj.raw_color),
    ]
    _atomic_write_bytes(path, b"".join(parts))


def load_field(path) -> VoxelField:
    r = _Reader(path)
    r.expect_magic(b"VXF1")
    nx, ny, nz = struct.unpack("<3I", r.take(12))
    _check_dims((nx, ny, nz))
    box = struct.unpack("<6d", r.take(48))
    bounds = Aabb(np.array(box[:3]), np.array(box[3:]))
    n = nx * ny * nz
    density = _grid_from_x_fastest(r.take(4 * n), (nx, ny, nz))
    color = _grid_from_x_fastest(r.take(12 * n), (nx, ny, nz), channels=3)
    r.done()
    return VoxelField(bounds, density, color)


# --------------------------------------------------------------------------
# uncertainty fields ("UNC1")
# --------------------------------------------------------------------------

def save_uncertainty(uf: UncertaintyField, path):
    m = uf.resolution
    packed = np.concatenate([uf.sigma_axes, uf.sigma[..., None]], axis=-1)
    parts = [
        b"UNC1",
        struct.pack("<I", m),
        struct.pack("<6d", *uf.bounds.min_corner, *uf.bounds.max_corner),
        _grid_to_x_fastest(packed.astype(np.float32)),
        struct.pack("<2d", uf.log_sigma_min, uf.log_sigma_max),
    ]
    _atomic_write_bytes(path, b"".join(parts))


def load_uncertainty(path) -> UncertaintyField:
    r = _Reader(path)
    r.expect_magic(b"UNC1")
    (m,) = struct.unpack("<I", r.take(4))
    _check_dims((m, m, m))
    box = struct.unpack("<6d", r.take(48))
    packed = _grid_from_x_fastest(r.take(16 * m * m * m), (m, m, m), channels=4)
    lo, hi = struct.unpack("<2d", r.take(16))
    r.done()
    return UncertaintyField(
        bounds=Aabb(np.array(box[:3]), np.array(box[3:])),
        sigma_axes=packed[..., :3],
        sigma=packed[..., 3],
        log_sigma_min=lo,
        log_sigma_max=hi,
    )


# --------------------------------------------------------------------------
# float image planes ("IMGF") and PNG
# --------------------------------------------------------------------------

def save_plane(array, path):
    """Float32 plane(s): (H,W) or (H,W,C), row-major, channel-interleaved."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValidationError("plane must be (H,W) or (H,W,C)")
    h, w, c = arr.shape
    header = b"IMGF" + struct.pack("<3I", w, h, c)
    _atomic_write_bytes(path, header + np.ascontiguousarray(arr).tobytes())


def load_plane(path):
    r = _Reader(path)
    r.expect_magic(b"IMGF")
    w, h, c = struct.unpack("<3I", r.take(12))
    if w < 1 or h < 1 or c < 1 or w > 65536 or h > 65536 or c > 64:
        raise FormatError(f"implausible plane header {w}x{h}x{c}")
    arr = np.frombuffer(r.take(4 * w * h * c), dtype="<f4").reshape(h, w, c)
    r.done()
    return np.ascontiguousarray(arr[..., 0] if c == 1 else arr)


def save_png(rgb, path):
    """Quantize a [0,1] float RGB image to 8 bits and write a PNG."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    data = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    img = Image.fromarray(data, mode="RGB")
    import io
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write_bytes(path, buf.getvalue())


def load_png(path):
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


# --------------------------------------------------------------------------
# scene bundles (JSON manifest)
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SceneBundle:
    """Posed image set over a shared box, with a train/test split."""

    bounds: Aabb
    cameras: list
    image_files: list
    train_indices: list
    test_indices: list
    root: str = "."

    def __post_init__(self):
        if len(self.cameras) != len(self.image_files):
            raise ValidationError("one image file per camera")
        n = len(self.cameras)
        for idx in list(self.train_indices) + list(self.test_indices):
            if not (0 <= idx < n):
                raise ValidationError(f"split index {idx} out of range")
        if len(self.train_indices) == 0:
            raise ValidationError("need at least one training camera")

    def image_path(self, i):
        return os.path.join(self.root, self.image_files[i])

    def load_images(self, indices=None):
        picks = range(len(self.cameras)) if indices is None else indices
        return np.stack([load_png(self.image_path(i)) for i in picks])


def save_scene(bundle: SceneBundle, path):
    doc = {
        "aabb": [bundle.bounds.min_corner.tolist(), bundle.bounds.max_corner.tolist()],
        "cameras": [
            {
                "file": bundle.image_files[i],
                "width": cam.width,
                "height": cam.height,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "world_from_camera": cam.pose12,
            }
            for i, cam in enumerate(bundle.cameras)
        ],
        "split": {"train": list(bundle.train_indices), "test": list(bundle.test_indices)},
    }
    _atomic_write_bytes(path, (json.dumps(doc, indent=2) + "\n").encode())


def load_scene(path, require_images=True) -> SceneBundle:
    """Parse and validate a manifest; poses with |det - 1| > 1e-6 are rejected.

    With require_images, referenced files must exist and match the declared
    camera sizes; the information accumulation stage passes False since it
    never reads image data.
    """
    if not os.path.exists(path):
        raise MissingFileError(f"no such manifest: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e

    try:
        lo, hi = doc["aabb"]
        bounds = Aabb(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))
        cam_docs = doc["cameras"]
        split = doc.get("split", {})
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed manifest ({e})") from e

    cameras, files = [], []
    for i, cd in enumerate(cam_docs):
        try:
            pose = np.asarray(cd["world_from_camera"], dtype=np.float64)
            if pose.shape != (12,):
                raise FormatError(f"{path}: camera {i} pose must be 12 floats")
            cam = Camera.from_pose12(pose, cd["fx"], cd["fy"], cd["cx"], cd["cy"],
                                     cd["width"], cd["height"])
        except PoseError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: malformed camera {i} ({e})") from e
        cameras.append(cam)
        files.append(cd["file"])

    root = os.path.dirname(os.path.abspath(path))
    bundle = SceneBundle(
        bounds=bounds,
        cameras=cameras,
        image_files=files,
        train_indices=list(split.get("train", range(len(cameras)))),
        test_indices=list(split.get("test", [])),
        root=root,
    )
    if require_images:
        for i, cam in enumerate(cameras):
            p = bundle.image_path(i)
            if not os.path.exists(p):
                raise MissingFileError(f"manifest references missing image: {p}")
            with Image.open(p) as img:
                if img.size != (cam.width, cam.height):
                    raise ValidationError(
                        f"{p}: image is {img.size}, camera {i} declares "
                        f"{(cam.width, cam.height)}")
    return bundle
