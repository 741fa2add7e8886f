"""Explicit voxel radiance fields.

Dense density/color grids over an axis-aligned box, differentiable trilinear
queries with analytic spatial gradients, deterministic synthetic scenes, and
photometric training with Adam. All query math runs in float64 on top of
float32 grid storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, ValidationError

# Corner offsets of a grid cell, fixed order (x-major) used everywhere.
CORNER_OFFSETS = np.array(
    [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
    dtype=np.int64,
)

# Raw-density value used for empty space in synthetic scenes. softplus(-40)
# is ~4e-18, indistinguishable from vacuum at render precision.
EMPTY_RAW_DENSITY = -40.0


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus32(x):
    return np.logaddexp(np.float32(0.0), x, dtype=np.float32)


def sigmoid32(x):
    return np.float32(0.5) * (np.float32(1.0) + np.tanh(np.float32(0.5) * x))


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-4, 1.0 - 1e-4)
    return np.log(p) - np.log1p(-p)


def inverse_softplus(y):
    """x such that softplus(x) = y, for y > 0; large y passes through."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(np.maximum(y, 1e-30), 30.0))))


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box; all grid lookups use coordinates normalized to it."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("aabb corners must be finite")
        if not np.all(hi > lo):
            raise ValidationError("aabb max_corner must exceed min_corner componentwise")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @staticmethod
    def unit_cube() -> "Aabb":
        return Aabb(np.zeros(3), np.ones(3))

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def normalize(self, x):
        """World point(s) -> u in [0,1]^3 (unclamped)."""
        return (np.asarray(x, dtype=np.float64) - self.min_corner) / self.extent

    def denormalize(self, u):
        return self.min_corner + np.asarray(u, dtype=np.float64) * self.extent

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.min_corner) & (x <= self.max_corner), axis=-1)


@dataclass
class TrilinearSample:
    """Interpolated value plus its exact derivative w.r.t. normalized coords."""

    value: np.ndarray
    spatial_gradient: np.ndarray


def _cell_and_frac(resolution, u):
    """Cell index and in-cell fraction per axis for u in [0,1]^3.

    Points exactly on an interior cell boundary belong to the +side cell
    (floor), so interpolation gradients there come from the upper cell. The
    top face u=1 uses the last cell with fraction 1.
    """
    res = np.asarray(resolution, dtype=np.int64)
    s = u * (res - 1).astype(u.dtype)
    cell = np.clip(s.astype(np.int64), 0, res - 2)
    return cell, s - cell


def _interp_with_grad(grid, u, want_grad=True):
    """Trilinear blend of `grid` at normalized points `u` (flattened to (N,3)).

    grid: (nx,ny,nz) or (nx,ny,nz,C). Returns (value, grad) with grad layout
    (N,3) for scalar grids and (N,C,3) for vector grids; grad is d(value)/du.
    """
    res = grid.shape[:3]
    channels = grid.shape[3] if grid.ndim == 4 else 0
    flat = np.ascontiguousarray(grid, dtype=np.float64).reshape(res[0] * res[1] * res[2], -1)
    n = u.shape[0]
    cell, f = _cell_and_frac(res, u)
    w_axis = np.stack([1.0 - f, f], axis=0)  # (2,N,3)
    s_axis = np.array([-1.0, 1.0])
    value = np.zeros((n, flat.shape[1]))
    grad = np.zeros((n, flat.shape[1], 3)) if want_grad else None
    for dx, dy, dz in CORNER_OFFSETS:
        lin = ((cell[:, 0] + dx) * res[1] + (cell[:, 1] + dy)) * res[2] + (cell[:, 2] + dz)
        corner = flat[lin]
        wx, wy, wz = w_axis[dx, :, 0], w_axis[dy, :, 1], w_axis[dz, :, 2]
        value += (wx * wy * wz)[:, None] * corner
        if want_grad:
            grad[..., 0] += (s_axis[dx] * wy * wz)[:, None] * corner
            grad[..., 1] += (s_axis[dy] * wx * wz)[:, None] * corner
            grad[..., 2] += (s_axis[dz] * wx * wy)[:, None] * corner
    if want_grad:
        grad *= (np.asarray(res) - 1).astype(np.float64)
    if channels == 0:
        value = value[:, 0]
        grad = grad[:, 0, :] if want_grad else None
    return value, grad


def trilinear_sample(grid, u) -> TrilinearSample:
    """Trilinear value and analytic d/du at normalized coordinates u.

    u must be finite; values slightly outside [0,1] are clamped, matching the
    caller-clamps contract. Accepts a single point or an (...,3) batch.
    """
    grid = np.asarray(grid)
    if grid.ndim not in (3, 4):
        raise ValidationError("grid must be (nx,ny,nz) or (nx,ny,nz,C)")
    if any(r < 2 for r in grid.shape[:3]):
        raise ValidationError("grid resolution must be >= 2 per axis")
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != 3:
        raise DomainError("u must have 3 components")
    if not np.all(np.isfinite(u)):
        raise DomainError("u must be finite")
    batch_shape = u.shape[:-1]
    uc = np.clip(u.reshape(-1, 3), 0.0, 1.0)
    value, grad = _interp_with_grad(grid, uc)
    if grid.ndim == 3:
        value = value.reshape(batch_shape)
        grad = grad.reshape(batch_shape + (3,))
    else:
        value = value.reshape(batch_shape + (grid.shape[3],))
        grad = grad.reshape(batch_shape + (grid.shape[3], 3))
    return TrilinearSample(value=value, spatial_gradient=grad)


@dataclass(eq=False)
class VoxelField:
    """Radiance field on a dense grid: softplus density, sigmoid color.

    Grids are float32 (the storage format); queries promote to float64.
    Color is a function of position only.
    """

    bounds: Aabb
    raw_density: np.ndarray
    raw_color: np.ndarray

    def __post_init__(self):
        self.raw_density = np.ascontiguousarray(self.raw_density, dtype=np.float32)
        self.raw_color = np.ascontiguousarray(self.raw_color, dtype=np.float32)
        if self.raw_density.ndim != 3 or self.raw_color.ndim != 4 or self.raw_color.shape[3] != 3:
            raise ValidationError("raw_density must be (nx,ny,nz); raw_color must be (nx,ny,nz,3)")
        if self.raw_density.shape != self.raw_color.shape[:3]:
            raise ValidationError("density and color grids must share a resolution")
        if any(r < 2 for r in self.raw_density.shape):
            raise ValidationError("field resolution must be >= 2 per axis")

    @property
    def resolution(self):
        return self.raw_density.shape

    def copy(self) -> "VoxelField":
        return VoxelField(self.bounds, self.raw_density.copy(), self.raw_color.copy())

    def _inside_and_u(self, x):
        x = np.asarray(x, dtype=np.float64)
        batch_shape = x.shape[:-1]
        xf = x.reshape(-1, 3)
        inside = self.bounds.contains(xf)
        u = np.clip(self.bounds.normalize(xf), 0.0, 1.0)
        return batch_shape, xf, inside, u

    def query(self, x):
        """Density and color at world point(s) x; outside the box: (0, black)."""
        batch_shape, _, inside, u = self._inside_and_u(x)
        raw_d, _ = _interp_with_grad(self.raw_density, u, want_grad=False)
        raw_c, _ = _interp_with_grad(self.raw_color, u, want_grad=False)
        density = np.where(inside, softplus(raw_d), 0.0)
        color = np.where(inside[:, None], sigmoid(raw_c), 0.0)
        return density.reshape(batch_shape), color.reshape(batch_shape + (3,))

    def query_with_gradient(self, x):
        """As query, plus analytic d(density)/dx and d(color)/dx.

        Gradients chain through the activations and the box normalization,
        so they are per world unit; both are zero outside the box.
        """
        batch_shape, _, inside, u = self._inside_and_u(x)
        raw_d, grad_d = _interp_with_grad(self.raw_density, u)
        raw_c, grad_c = _interp_with_grad(self.raw_color, u)
        density = np.where(inside, softplus(raw_d), 0.0)
        color = np.where(inside[:, None], sigmoid(raw_c), 0.0)
        inv_extent = 1.0 / self.bounds.extent
        d_density = sigmoid(raw_d)[:, None] * grad_d * inv_extent
        d_color = (color * (1.0 - color))[:, :, None] * grad_c * inv_extent
        d_density = np.where(inside[:, None], d_density, 0.0)
        d_color = np.where(inside[:, None, None], d_color, 0.0)
        return (
            density.reshape(batch_shape),
            color.reshape(batch_shape + (3,)),
            d_density.reshape(batch_shape + (3,)),
            d_color.reshape(batch_shape + (3, 3)),
        )


def query(field: VoxelField, x):
    return field.query(x)


def query_with_gradient(field: VoxelField, x):
    return field.query_with_gradient(x)


# --------------------------------------------------------------------------
# synthetic scenes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Deterministic synthetic scene description.

    Geometry parameters are in normalized box coordinates. Kinds:
    "box", "sphere", "two_blob", "floater" (sphere plus a spurious blob).
    """

    kind: str = "sphere"
    bounds: Aabb = field(default_factory=Aabb.unit_cube)
    center: tuple = (0.5, 0.5, 0.5)
    radius: float = 0.3
    half_extent: tuple = (0.35, 0.35, 0.35)
    raw_density: float = 10.0
    color: tuple = (0.85, 0.45, 0.2)
    second_center: tuple = (0.74, 0.5, 0.5)
    second_radius: float = 0.13
    second_color: tuple = (0.2, 0.45, 0.9)
    floater_center: tuple = (0.5, 0.5, 0.88)
    floater_radius: float = 0.055
    floater_color: tuple = (0.4, 0.85, 0.35)
    edge_width: float = 0.025
    shading: float = 0.35


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _sphere_occupancy(p, center, radius, width):
    if radius <= 0.0:
        return np.zeros(p.shape[:-1])
    d = np.linalg.norm(p - np.asarray(center), axis=-1)
    return _smoothstep((radius + width - d) / (2.0 * width))


def _box_occupancy(p, center, half_extent, width):
    d = np.max(np.abs(p - np.asarray(center)) - np.asarray(half_extent), axis=-1)
    return _smoothstep((width - d) / (2.0 * width))


def _shaded(color, p, center, radius, shading):
    """Brightness ramp along z across the object, gives training texture."""
    span = max(2.0 * radius, 1e-9)
    ramp = np.clip((p[..., 2] - (center[2] - radius)) / span, 0.0, 1.0)
    scale = 1.0 - shading * ramp
    return scale[..., None] * np.asarray(color)


def make_synthetic_scene(spec: SceneSpec, resolution: int) -> VoxelField:
    """Build a VoxelField for `spec` at a cubic grid resolution.

    Deterministic: the grids are a pure function of (spec, resolution).
    """
    if resolution < 2:
        raise ValidationError("resolution must be >= 2")
    kinds = {"box", "sphere", "two_blob", "floater"}
    if spec.kind not in kinds:
        raise ValidationError(f"unknown scene kind {spec.kind!r}; expected one of {sorted(kinds)}")

    axes = [np.linspace(0.0, 1.0, resolution) for _ in range(3)]
    p = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    objects = []  # (occupancy, shaded color) per object
    w = spec.edge_width
    if spec.kind == "box":
        occ = _box_occupancy(p, spec.center, spec.half_extent, w)
        objects.append((occ, _shaded(spec.color, p, spec.center, max(spec.half_extent), spec.shading)))
    else:
        occ = _sphere_occupancy(p, spec.center, spec.radius, w)
        objects.append((occ, _shaded(spec.color, p, spec.center, spec.radius, spec.shading)))
        if spec.kind == "two_blob":
            occ2 = _sphere_occupancy(p, spec.second_center, spec.second_radius, w)
            objects.append((occ2, _shaded(spec.second_color, p, spec.second_center, spec.second_radius, spec.shading)))
        elif spec.kind == "floater":
            occf = _sphere_occupancy(p, spec.floater_center, spec.floater_radius, w)
            objects.append((occf, _shaded(spec.floater_color, p, spec.floater_center, spec.floater_radius, spec.shading)))

    occ_total = np.zeros(p.shape[:-1])
    color_acc = np.zeros(p.shape[:-1] + (3,))
    for occ, color in objects:
        occ_total = np.maximum(occ_total, occ)
        color_acc += occ[..., None] * logit(color)
    occ_sum = np.maximum(sum(occ for occ, _ in objects), 1.0)
    # blend in density space so half-peak density sits exactly on the surface
    peak = softplus(np.float64(spec.raw_density))
    raw_density = np.maximum(inverse_softplus(occ_total * peak), EMPTY_RAW_DENSITY)
    raw_color = color_acc / occ_sum[..., None]
    return VoxelField(spec.bounds, raw_density.astype(np.float32), raw_color.astype(np.float32))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Adam settings for photometric fitting; defaults are the pinned ones."""

    iterations: int = 2000
    learning_rate: float = 0.1
    batch_rays: int = 4096
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    samples_per_ray: int = 64
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.batch_rays < 1:
            raise ValidationError("batch_rays must be >= 1")
        if self.samples_per_ray < 1:
            raise ValidationError("samples_per_ray must be >= 1")


def fit_field(images, cameras, init: VoxelField, config: TrainConfig, loss_history=None) -> VoxelField:
    """Fit a field to posed images by Adam on the mean squared ray color error.

    The per-iteration loss (sum over RGB, mean over the ray batch) is appended
    to `loss_history` when a list is passed. Returns a new field; `init` is
    left untouched.
    """
    from . import renderer  # local import: renderer is field-agnostic

    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValidationError("images must be (N,H,W,3)")
    if images.shape[0] == 0 or len(cameras) == 0:
        raise ValidationError("need at least one image and camera")
    if images.shape[0] != len(cameras):
        raise ValidationError("image count must match camera count")
    n_img, height, width = images.shape[:3]
    for cam in cameras:
        if cam.width != width or cam.height != height:
            raise ValidationError("image size does not match camera intrinsics")

    field_out = init.copy()
    if config.iterations == 0:
        return field_out

    rng = np.random.default_rng(config.seed)
    origins = np.stack([cam.translation for cam in cameras]).astype(np.float32)
    dirs = np.stack([renderer.camera_ray_directions(cam) for cam in cameras])
    gt_flat = images.reshape(n_img * height * width, 3).astype(np.float32)
    dirs_flat = dirs.reshape(n_img * height * width, 3).astype(np.float32)

    res = field_out.resolution
    bounds = field_out.bounds
    # the whole batch loop runs in float32; grids are float32 anyway
    lo = bounds.min_corner.astype(np.float32)
    inv_extent = (1.0 / bounds.extent).astype(np.float32)
    bg = np.asarray(config.background, dtype=np.float32)
    n_vox = res[0] * res[1] * res[2]
    adam_m = np.zeros((n_vox, 4))
    adam_v = np.zeros((n_vox, 4))
    s_count = config.samples_per_ray

    for it in range(config.iterations):
        pick = rng.integers(0, n_img * height * width, size=config.batch_rays)
        cam_idx = pick // (height * width)
        o = origins[cam_idx]
        d = dirs_flat[pick]
        gt = gt_flat[pick]

        near, far = renderer.ray_aabb_interval(bounds, o, d)
        tvals, deltas = renderer.stratified_tvals(near.astype(np.float32), far, s_count, rng=rng)
        x = o[:, None, :] + tvals[..., None] * d[:, None, :]

        xf = x.reshape(-1, 3)
        u = (xf - lo) * inv_extent
        inside = (np.min(u, axis=1) >= 0.0) & (np.max(u, axis=1) <= 1.0)
        cell, f = _cell_and_frac(res, np.clip(u, 0.0, 1.0))
        w_axis = np.stack([1.0 - f, f], axis=0)

        packed = np.concatenate(  # density + rgb, one gather per corner
            [field_out.raw_density.reshape(-1, 1), field_out.raw_color.reshape(-1, 3)], axis=1)
        lin_base = (cell[:, 0] * res[1] + cell[:, 1]) * res[2] + cell[:, 2]
        raw = np.zeros((xf.shape[0], 4), dtype=np.float32)
        corner_lin = np.empty((8, xf.shape[0]), dtype=np.int64)
        corner_w = np.empty((8, xf.shape[0]), dtype=np.float32)
        for ci, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
            lin = lin_base + ((dx * res[1] + dy) * res[2] + dz)
            wgt = w_axis[dx, :, 0] * w_axis[dy, :, 1] * w_axis[dz, :, 2]
            corner_lin[ci] = lin
            corner_w[ci] = wgt
            raw += wgt[:, None] * packed[lin]

        sig_d = sigmoid32(raw[:, 0])
        inside_f = inside.astype(np.float32)
        tau = (softplus32(raw[:, 0]) * inside_f).reshape(tvals.shape)
        col = (sigmoid32(raw[:, 1:]) * inside_f[:, None]).reshape(tvals.shape + (3,))

        comp = renderer.composite(tau, col, deltas, background=bg)
        resid = comp.rgb - gt
        if loss_history is not None:
            loss_history.append(float(np.mean(np.sum(resid * resid, axis=-1), dtype=np.float64)))

        dL_drgb = 2.0 * resid / np.float32(config.batch_rays)
        dC_dtau = renderer.color_density_derivative(comp.weights, comp.trans_after, col, deltas, bg)
        dL_dtau = np.einsum("bc,bsc->bs", dL_drgb, dC_dtau)
        dL_dcol = comp.weights[..., None] * dL_drgb[:, None, :]

        # chain through activations back to the raw grids
        dL_draw_d = dL_dtau.reshape(-1) * sig_d * inside_f
        col_flat = col.reshape(-1, 3)
        dL_draw_c = dL_dcol.reshape(-1, 3) * (col_flat * (1.0 - col_flat))

        grad = np.zeros((n_vox, 4))
        for ci in range(8):
            lin, wgt = corner_lin[ci], corner_w[ci]
            grad[:, 0] += np.bincount(lin, weights=wgt * dL_draw_d, minlength=n_vox)
            for ch in range(3):
                grad[:, 1 + ch] += np.bincount(lin, weights=wgt * dL_draw_c[:, ch], minlength=n_vox)

        adam_m = config.beta1 * adam_m + (1.0 - config.beta1) * grad
        adam_v = config.beta2 * adam_v + (1.0 - config.beta2) * grad * grad
        m_hat = adam_m / (1.0 - config.beta1 ** (it + 1))
        v_hat = adam_v / (1.0 - config.beta2 ** (it + 1))
        step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        field_out.raw_density -= step[:, 0].reshape(res).astype(np.float32)
        field_out.raw_color -= step[:, 1:].reshape(res + (3,)).astype(np.float32)

    return field_out
