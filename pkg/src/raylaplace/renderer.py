"""Pinhole cameras, ray sampling, and emission-absorption compositing.

The renderer is deliberately field-agnostic: anything with `bounds`, `query`
and `query_with_gradient` renders. Channels: rgb, depth, opacity, composited
log-uncertainty, and a coverage mask for uncertainty-thresholded clean-up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PoseError, ValidationError

OPACITY_FLOOR = 1e-10  # depth normalization floor


@dataclass(eq=False)
class Camera:
    """Pinhole camera: world-from-camera rigid pose plus intrinsics.

    The camera looks along its +z axis; pixel y grows downward in the image.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise PoseError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image size must be positive")
        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > 1e-6 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise PoseError("rotation must be orthonormal with determinant +1")

    @property
    def pose12(self):
        """Row-major 3x4 [R|t] as a flat list of 12 floats."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(12).tolist()

    @staticmethod
    def from_pose12(pose, fx, fy, cx, cy, width, height) -> "Camera":
        m = np.asarray(pose, dtype=np.float64).reshape(3, 4)
        return Camera(m[:, :3], m[:, 3], fx, fy, cx, cy, int(width), int(height))


@dataclass(eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValidationError("ray direction must be unit length")
        if not (0.0 < self.near < self.far):
            raise ValidationError("require 0 < near < far")


@dataclass(eq=False)
class RaySamples:
    positions: np.ndarray  # t_i, ascending
    spacings: np.ndarray   # delta_i; the last one is far - t_last
    points: np.ndarray     # o + t_i * d


@dataclass(frozen=True)
class RenderOptions:
    """Per-render knobs; `threshold` switches on uncertainty clean-up."""

    samples_per_ray: int = 64
    mode: str = "midpoint"  # or "jitter"
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    threshold: float | None = None

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ValidationError("samples_per_ray must be >= 1")
        if self.mode not in ("midpoint", "jitter"):
            raise ValidationError("mode must be 'midpoint' or 'jitter'")


@dataclass(eq=False)
class ChannelImage:
    """Per-pixel render planes; dimensions match the camera."""

    rgb: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    coverage: np.ndarray
    log_uncertainty: np.ndarray | None = None

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]


def generate_ray(camera: Camera, pixel, near=1e-3, far=1e3) -> Ray:
    """Ray through the center of integer pixel (px, py)."""
    px, py = pixel
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise DomainError(f"pixel {pixel} outside a {camera.width}x{camera.height} image")
    d_cam = np.array([
        (px + 0.5 - camera.cx) / camera.fx,
        (py + 0.5 - camera.cy) / camera.fy,
        1.0,
    ])
    d = camera.rotation @ d_cam
    d /= np.linalg.norm(d)
    return Ray(camera.translation.copy(), d, near, far)


def camera_ray_directions(camera: Camera):
    """Unit world directions for every pixel center, shape (H, W, 3)."""
    xs = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    ys = (np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    gx, gy = np.meshgrid(xs, ys)
    d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    d = d_cam @ camera.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def ray_aabb_interval(bounds, origins, directions, eps=1e-12):
    """Entry/exit distances of rays against an Aabb (slab method).

    Returns (near, far) arrays; rays that miss get near >= far. Negative
    entry distances are clamped to a small positive epsilon.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    safe = np.where(np.abs(d) > eps, d, eps)
    t0 = (bounds.min_corner - o) / safe
    t1 = (bounds.max_corner - o) / safe
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    parallel = np.abs(d) <= eps
    inside_slab = (o >= bounds.min_corner) & (o <= bounds.max_corner)
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), hi)
    near = np.maximum(np.max(lo, axis=-1), 1e-6)
    far = np.min(hi, axis=-1)
    return near, far


def stratified_tvals(near, far, n, rng=None):
    """Stratified sample positions for a batch of [near, far) intervals.

    Midpoint mode when rng is None, otherwise one uniform draw per bin.
    Returns (tvals, deltas) of shape (..., n); deltas follow the convention
    delta_i = t_{i+1} - t_i with the last delta reaching `far`.
    """
    near = np.asarray(near)
    if near.dtype != np.float32:
        near = near.astype(np.float64, copy=False)
    dtype = near.dtype
    far = np.maximum(np.asarray(far, dtype=dtype), near + dtype.type(1e-9))
    edges = np.linspace(0.0, 1.0, n + 1, dtype=dtype)
    span = (far - near)[..., None]
    lo = near[..., None] + span * edges[:-1]
    if rng is None:
        offs = dtype.type(0.5)
    else:
        offs = rng.random(lo.shape, dtype=dtype)
    tvals = lo + offs * (span / n)
    deltas = np.diff(tvals, axis=-1)
    deltas = np.concatenate([deltas, (far[..., None] - tvals[..., -1:])], axis=-1)
    deltas = np.maximum(deltas, dtype.type(1e-12))
    return tvals, deltas


def sample_stratified(ray: Ray, n: int, mode="midpoint", rng=None) -> RaySamples:
    """Stratify n samples along a single ray; jitter mode needs an rng."""
    if n < 1:
        raise ValidationError("need at least one sample")
    if mode == "jitter" and rng is None:
        rng = np.random.default_rng(0)
    tvals, deltas = stratified_tvals(
        np.array([ray.near]), np.array([ray.far]), n, rng=rng if mode == "jitter" else None
    )
    t = tvals[0]
    return RaySamples(t, deltas[0], ray.origin + t[:, None] * ray.direction)


# --------------------------------------------------------------------------
# compositing
# --------------------------------------------------------------------------

@dataclass(eq=False)
class CompositeResult:
    rgb: np.ndarray
    weights: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray | None
    trans_after: np.ndarray  # transmittance just after each sample


def composite(densities, colors, spacings, positions=None, background=(0.0, 0.0, 0.0)) -> CompositeResult:
    """Emission-absorption compositing over the trailing sample axis.

    weights_i = exp(-sum_{j<i} tau_j d_j) * (1 - exp(-tau_i d_i)); rgb is the
    weighted color sum blended over the background; depth (when positions are
    given) is the weight-averaged t normalized by opacity.
    """
    tau = np.asarray(densities)
    col = np.asarray(colors)
    delta = np.asarray(spacings)
    if tau.dtype != np.float32:  # float32 callers keep their precision/speed
        tau = tau.astype(np.float64, copy=False)
        col = col.astype(np.float64, copy=False)
        delta = delta.astype(np.float64, copy=False)
    if tau.shape != delta.shape or col.shape != tau.shape + (3,):
        raise ValidationError("densities, colors and spacings must agree in length")
    if np.any(tau < 0.0):
        raise DomainError("densities must be non-negative")
    if np.any(delta <= 0.0):
        raise DomainError("spacings must be positive")
    bg = np.asarray(background, dtype=tau.dtype)

    optical = tau * delta
    accum = np.cumsum(optical, axis=-1)
    trans_before = np.exp(-(accum - optical))
    trans_after = np.exp(-accum)
    weights = trans_before - trans_after  # = T_i * (1 - exp(-tau_i d_i)), same algebra
    opacity = np.sum(weights, axis=-1)
    rgb = np.einsum("...s,...sc->...c", weights, col) + (1.0 - opacity)[..., None] * bg
    depth = None
    if positions is not None:
        t = np.asarray(positions, dtype=np.float64)
        depth = np.sum(weights * t, axis=-1) / np.maximum(opacity, OPACITY_FLOOR)
    return CompositeResult(rgb, weights, opacity, depth, trans_after)


def color_density_derivative(weights, trans_after, colors, spacings, background):
    """d(composited rgb)/d(tau_i) for every sample, shape (..., S, 3).

    Closed form per channel: delta_i * (T_{i+1} (c_i - bg) - sum_{j>i} w_j (c_j - bg)),
    where T_{i+1} is the transmittance after sample i. The background term
    enters because opacity feeds the background blend.
    """
    col = np.asarray(colors)
    bg = np.asarray(background, dtype=col.dtype)
    rel = col - bg
    weighted = weights[..., None] * rel
    suffix = np.flip(np.cumsum(np.flip(weighted, axis=-2), axis=-2), axis=-2) - weighted
    return np.asarray(spacings)[..., None] * (trans_after[..., None] * rel - suffix)


# --------------------------------------------------------------------------
# image rendering
# --------------------------------------------------------------------------

def render_channels(field, camera: Camera, options: RenderOptions, uncertainty=None) -> ChannelImage:
    """Render all channels for one camera.

    With a threshold set, density is zeroed wherever the min-max normalized
    log-uncertainty exceeds it; the coverage mask flags pixels whose opacity
    the thresholding pushed from >= 0.5 to < 0.5. The log-uncertainty channel
    composites log U at the sample points with the same weights as rgb.
    """
    if options.threshold is not None and uncertainty is None:
        raise ValidationError("a threshold requires an uncertainty field")

    h, w = camera.height, camera.width
    dirs = camera_ray_directions(camera).reshape(-1, 3)
    origin = camera.translation
    rng = np.random.default_rng(options.seed) if options.mode == "jitter" else None
    bg = np.asarray(options.background, dtype=np.float64)

    rgb = np.empty((h * w, 3))
    depth = np.empty(h * w)
    opacity = np.empty(h * w)
    coverage = np.ones(h * w, dtype=bool)
    log_unc = np.empty(h * w) if uncertainty is not None else None

    chunk = 8192
    for start in range(0, h * w, chunk):
        d = dirs[start:start + chunk]
        o = np.broadcast_to(origin, d.shape)
        near, far = ray_aabb_interval(field.bounds, o, d)
        tvals, deltas = stratified_tvals(near, far, options.samples_per_ray, rng=rng)
        x = o[:, None, :] + tvals[..., None] * d[:, None, :]
        tau, col = field.query(x)

        tau_eff = tau
        if options.threshold is not None:
            nlu = uncertainty.normalized_log_at(x)
            tau_eff = np.where(nlu > options.threshold, 0.0, tau)
        comp = composite(tau_eff, col, deltas, positions=tvals, background=bg)

        sl = slice(start, start + d.shape[0])
        rgb[sl] = comp.rgb
        depth[sl] = comp.depth
        opacity[sl] = comp.opacity
        if options.threshold is not None:
            base_opacity = composite(tau, col, deltas).opacity
            coverage[sl] = ~((base_opacity >= 0.5) & (comp.opacity < 0.5))
        if log_unc is not None:
            lu = np.log(uncertainty.at(x))
            log_unc[sl] = np.sum(comp.weights * lu, axis=-1)

    return ChannelImage(
        rgb=rgb.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        opacity=opacity.reshape(h, w),
        coverage=coverage.reshape(h, w),
        log_uncertainty=log_unc.reshape(h, w) if log_unc is not None else None,
    )


# --------------------------------------------------------------------------
# camera rigs
# --------------------------------------------------------------------------

def look_at_camera(position, target, fx, fy, width, height, up=(0.0, 0.0, 1.0), cx=None, cy=None) -> Camera:
    """Camera at `position` aimed at `target`, world `up` kept upward."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValidationError("camera position coincides with target")
    forward = forward / norm
    upv = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(forward, upv)) < 1e-9:
        upv = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, upv)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return Camera(
        rot, position, fx, fy,
        cx if cx is not None else width / 2.0,
        cy if cy is not None else height / 2.0,
        width, height,
    )


def orbit_cameras(bounds, count, distance, elevations_deg, fx, width, height,
                  azimuth_start_deg=0.0, azimuth_span_deg=360.0, fy=None, target=None):
    """Cameras on one or more orbit rings around the box center.

    `elevations_deg` may be a scalar or a sequence; cameras are distributed
    uniformly in azimuth over the (half-open) span, round-robin over rings.
    """
    if count < 1:
        raise ValidationError("need at least one camera")
    elevations = np.atleast_1d(np.asarray(elevations_deg, dtype=np.float64))
    tgt = bounds.center if target is None else np.asarray(target, dtype=np.float64)
    fy = fx if fy is None else fy
    cams = []
    for i in range(count):
        az = np.deg2rad(azimuth_start_deg + azimuth_span_deg * i / count)
        el = np.deg2rad(elevations[i % len(elevations)])
        offset = distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(look_at_camera(tgt + offset, tgt, fx, fy, width, height))
    return cams
