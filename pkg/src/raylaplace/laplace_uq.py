"""Deformation-grid Laplace uncertainty for a trained radiance field.

A displacement lattice re-parametrizes the field around the identity; the
diagonal of the Gauss-Newton information matrix is accumulated from squared
per-ray color Jacobians at zero displacement, entirely in closed form via the
compositing chain rule. Inverting the diagonal (plus the Gaussian prior) gives
per-vertex marginal deviations whose norm defines a spatial uncertainty field.

Finite-difference twins of every derivative live at the bottom of the module;
they only use the perturbed forward renderer and exist to certify the analytic
path on small instances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import renderer
from .errors import DomainError, ValidationError
from .field_core import Aabb, VoxelField, _cell_and_frac, _interp_with_grad, CORNER_OFFSETS


@dataclass(frozen=True)
class UqConfig:
    """Accumulation settings; lam defaults to 1e-4 / M^3 when left None."""

    grid_resolution: int = 64
    lam: float | None = None
    batches: int = 1000
    rays_per_batch: int = 4096
    samples_per_ray: int = 64
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    jitter: bool = False

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValidationError("grid_resolution must be >= 2")
        if self.lam is not None and self.lam <= 0.0:
            raise ValidationError("lam must be positive")

    @property
    def resolved_lam(self) -> float:
        if self.lam is not None:
            return self.lam
        return 1e-4 / float(self.grid_resolution) ** 3


@dataclass(eq=False)
class DeformationGrid:
    """Vertex displacements (normalized units) on an M^3 lattice over `bounds`.

    The Laplace expansion point is the zero displacement; non-zero values are
    only ever set by the finite-difference oracles.
    """

    resolution: int
    bounds: Aabb
    displacements: np.ndarray = None

    def __post_init__(self):
        if self.resolution < 2:
            raise ValidationError("deformation grid resolution must be >= 2")
        m = self.resolution
        if self.displacements is None:
            self.displacements = np.zeros((m, m, m, 3))
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        if self.displacements.shape != (m, m, m, 3):
            raise ValidationError("displacements must have shape (M,M,M,3)")
        if not np.all(np.isfinite(self.displacements)):
            raise DomainError("displacements must be finite")

    @property
    def n_params(self) -> int:
        return self.resolution ** 3 * 3

    def is_zero(self) -> bool:
        return not np.any(self.displacements)


def deform(grid: DeformationGrid, x):
    """Trilinear displacement at world point(s) x; zero outside the box."""
    x = np.asarray(x, dtype=np.float64)
    batch_shape = x.shape[:-1]
    xf = x.reshape(-1, 3)
    inside = grid.bounds.contains(xf)
    u = np.clip(grid.bounds.normalize(xf), 0.0, 1.0)
    disp, _ = _interp_with_grad(grid.displacements, u, want_grad=False)
    disp = np.where(inside[:, None], disp, 0.0)
    return disp.reshape(batch_shape + (3,))


def perturbed_query(field: VoxelField, grid: DeformationGrid, x):
    """Field query at the displaced point x + extent * D(x).

    At zero displacement this is bit-identical to field.query(x): the offset
    added is exactly 0.0.
    """
    offset = deform(grid, x) * field.bounds.extent
    return field.query(np.asarray(x, dtype=np.float64) + offset)


# --------------------------------------------------------------------------
# analytic squared Jacobians
# --------------------------------------------------------------------------

def _deformation_corners(grid: DeformationGrid, points_flat):
    """Vertex ids (N,8) and trilinear weights (N,8) of the containing cells.

    Weights are zeroed outside the box, where displacement has no effect.
    """
    m = grid.resolution
    inside = grid.bounds.contains(points_flat)
    u = np.clip(grid.bounds.normalize(points_flat), 0.0, 1.0)
    cell, f = _cell_and_frac((m, m, m), u)
    w_axis = np.stack([1.0 - f, f], axis=0)
    vid = np.empty((points_flat.shape[0], 8), dtype=np.int64)
    phi = np.empty((points_flat.shape[0], 8))
    for ci, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        vid[:, ci] = ((cell[:, 0] + dx) * m + (cell[:, 1] + dy)) * m + (cell[:, 2] + dz)
        phi[:, ci] = w_axis[dx, :, 0] * w_axis[dy, :, 1] * w_axis[dz, :, 2]
    phi *= inside[:, None]
    return vid, phi


def _jacobian_sq_pairs(field, grid, origins, dirs, tvals, deltas, background):
    """Per-(ray, vertex) squared color Jacobian entries at zero displacement.

    Returns (vertex_ids, sq) where sq has shape (n_pairs, 3): for each touched
    vertex and displacement axis, sum over RGB of (dC/dtheta)^2.
    """
    b, s = tvals.shape
    x = origins[:, None, :] + tvals[..., None] * dirs[:, None, :]
    tau, col, dtau_dx, dcol_dx = field.query_with_gradient(x)
    comp = renderer.composite(tau, col, deltas, background=background)
    dc_dtau = renderer.color_density_derivative(comp.weights, comp.trans_after, col, deltas, background)

    extent = field.bounds.extent
    gtau = dtau_dx * extent            # (B,S,3): d tau / d u
    gcol = dcol_dx * extent            # (B,S,3,3): d color_c / d u_a
    # response of the composited channel c to moving sample s along axis a
    g = dc_dtau[..., :, None] * gtau[..., None, :] + comp.weights[..., None, None] * gcol

    vid, phi = _deformation_corners(grid, x.reshape(-1, 3))
    m3 = grid.resolution ** 3
    keys = np.repeat(np.arange(b, dtype=np.int64) * m3, s * 8) + vid.reshape(-1)
    uniq, inv = np.unique(keys, return_inverse=True)
    n_pairs = uniq.shape[0]

    sq = np.zeros((n_pairs, 3))
    g_flat = g.reshape(b * s, 3, 3)
    for a in range(3):
        for c in range(3):
            w = (g_flat[:, c, a][:, None] * phi).reshape(-1)
            j = np.bincount(inv, weights=w, minlength=n_pairs)
            sq[:, a] += j * j
    return uniq % m3, sq


def ray_jacobian_sq(field: VoxelField, grid: DeformationGrid, ray: renderer.Ray,
                    options: renderer.RenderOptions) -> dict:
    """Squared color Jacobian of one rendered ray w.r.t. every displacement.

    Returns a sparse map {parameter index k: sum over RGB of (dC/dtheta_k)^2}
    with k = 3 * vertex_index + axis (C-order vertex index). Only vertices of
    cells containing sample points appear. Requires zero displacement.
    """
    if not grid.is_zero():
        raise ValidationError("squared Jacobians are defined at zero displacement")
    samples = renderer.sample_stratified(ray, options.samples_per_ray, mode=options.mode,
                                         rng=np.random.default_rng(options.seed))
    origins = ray.origin[None, :]
    dirs = ray.direction[None, :]
    vids, sq = _jacobian_sq_pairs(field, grid, origins, dirs,
                                  samples.positions[None, :], samples.spacings[None, :],
                                  np.asarray(options.background, dtype=np.float64))
    if not np.all(np.isfinite(sq)):
        raise DomainError("non-finite field gradients along the ray")
    out = {}
    for vid, row in zip(vids.tolist(), sq):
        for a in range(3):
            if row[a] != 0.0:
                out[3 * vid + a] = out.get(3 * vid + a, 0.0) + float(row[a])
    return out


# --------------------------------------------------------------------------
# information accumulation
# --------------------------------------------------------------------------

@dataclass(eq=False)
class HessianDiagonal:
    """Running sums of squared Jacobian entries plus the prior strength."""

    accum: np.ndarray      # (M,M,M,3) float64, additive over ray batches
    ray_count: int
    lam: float
    bounds: Aabb

    @property
    def resolution(self) -> int:
        return self.accum.shape[0]

    def diagonal(self):
        """diag of the negated information Hessian: (2/R) * accum + 2 lam."""
        out = np.full_like(self.accum, 2.0 * self.lam)
        if self.ray_count > 0:
            out += (2.0 / self.ray_count) * self.accum
        return out


def add_ray_batch(hess: HessianDiagonal, field: VoxelField, grid: DeformationGrid,
                  origins, dirs, config: UqConfig, rng=None):
    """Accumulate one batch of rays into `hess` (in place)."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    near, far = renderer.ray_aabb_interval(field.bounds, origins, dirs)
    tvals, deltas = renderer.stratified_tvals(near, far, config.samples_per_ray,
                                              rng=rng if config.jitter else None)
    vids, sq = _jacobian_sq_pairs(field, grid, origins, dirs, tvals, deltas,
                                  np.asarray(config.background, dtype=np.float64))
    m3 = hess.resolution ** 3
    flat = hess.accum.reshape(m3, 3)
    for a in range(3):
        flat[:, a] += np.bincount(vids, weights=sq[:, a], minlength=m3)
    hess.ray_count += origins.shape[0]
    return hess


def accumulate_hessian_diag(field: VoxelField, grid: DeformationGrid, cameras,
                            config: UqConfig) -> HessianDiagonal:
    """Sample random pixels over all cameras and sum squared ray Jacobians.

    Only the cameras and the trained field are read; no image data enters.
    Pixels are drawn uniformly over the union of all camera pixels with the
    seeded generator, `config.batches` batches of `config.rays_per_batch`.
    """
    if len(cameras) == 0:
        raise ValidationError("need at least one camera")
    if not grid.is_zero():
        raise ValidationError("accumulation runs at zero displacement")
    m = grid.resolution
    hess = HessianDiagonal(np.zeros((m, m, m, 3)), 0, config.resolved_lam, grid.bounds)
    rng = np.random.default_rng(config.seed)
    sizes = np.array([cam.width * cam.height for cam in cameras], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    dir_cache = {}
    for _ in range(config.batches):
        pick = rng.integers(0, offsets[-1], size=config.rays_per_batch)
        cam_idx = np.searchsorted(offsets, pick, side="right") - 1
        local = pick - offsets[cam_idx]
        origins = np.empty((pick.shape[0], 3))
        dirs = np.empty((pick.shape[0], 3))
        for ci in np.unique(cam_idx):
            cam = cameras[ci]
            if ci not in dir_cache:
                dir_cache[ci] = renderer.camera_ray_directions(cam).reshape(-1, 3)
            sel = cam_idx == ci
            origins[sel] = cam.translation
            dirs[sel] = dir_cache[ci][local[sel]]
        add_ray_batch(hess, field, grid, origins, dirs, config, rng=rng)
    return hess


# --------------------------------------------------------------------------
# uncertainty field
# --------------------------------------------------------------------------

@dataclass(eq=False)
class UncertaintyField:
    """Per-vertex marginal deviations and their norm, with log-range stats."""

    bounds: Aabb
    sigma_axes: np.ndarray  # (M,M,M,3) float32
    sigma: np.ndarray       # (M,M,M) float32
    log_sigma_min: float
    log_sigma_max: float

    def __post_init__(self):
        self.sigma_axes = np.ascontiguousarray(self.sigma_axes, dtype=np.float32)
        self.sigma = np.ascontiguousarray(self.sigma, dtype=np.float32)
        if np.any(self.sigma <= 0.0):
            raise ValidationError("sigma must be positive everywhere")

    @property
    def resolution(self) -> int:
        return self.sigma.shape[0]

    def at(self, x):
        """Trilinear sigma at world point(s); outside the box: the max vertex sigma."""
        x = np.asarray(x, dtype=np.float64)
        batch_shape = x.shape[:-1]
        xf = x.reshape(-1, 3)
        inside = self.bounds.contains(xf)
        u = np.clip(self.bounds.normalize(xf), 0.0, 1.0)
        val, _ = _interp_with_grad(self.sigma, u, want_grad=False)
        val = np.where(inside, val, float(self.sigma.max()))
        return val.reshape(batch_shape)

    def normalized_log_at(self, x):
        """log sigma at x, min-max normalized over grid vertices to [0,1].

        Clamped from above: interpolation is a convex blend of vertex values,
        so anything past 1.0 is rounding, and a threshold of exactly 1.0 must
        keep the whole scene.
        """
        span = self.log_sigma_max - self.log_sigma_min
        if span <= 0.0:
            return np.zeros(np.asarray(x).shape[:-1])
        return np.minimum((np.log(self.at(x)) - self.log_sigma_min) / span, 1.0)


def compute_uncertainty_field(hess: HessianDiagonal) -> UncertaintyField:
    """Invert the information diagonal into marginal deviations.

    Per vertex and axis: var = 1 / ((2/R) accum + 2 lam); sigma is the norm of
    the three axis deviations. With zero rays the field is prior-only.
    """
    var = 1.0 / hess.diagonal()
    sigma_axes = np.sqrt(var)
    sigma = np.sqrt(np.sum(var, axis=-1))
    sigma32 = sigma.astype(np.float32)
    logs = np.log(sigma32.astype(np.float64))
    return UncertaintyField(
        bounds=hess.bounds,
        sigma_axes=sigma_axes.astype(np.float32),
        sigma=sigma32,
        log_sigma_min=float(logs.min()),
        log_sigma_max=float(logs.max()),
    )


def uncertainty_at(uf: UncertaintyField, x):
    return uf.at(x)


# --------------------------------------------------------------------------
# finite-difference twins (forward renders only; certify the analytic path)
# --------------------------------------------------------------------------

def render_rays_perturbed(field, grid, points, deltas, background=(0.0, 0.0, 0.0)):
    """Composited colors for rays given fixed sample points, via perturbed_query."""
    tau, col = perturbed_query(field, grid, points)
    return renderer.composite(tau, col, np.asarray(deltas, dtype=np.float64),
                              background=np.asarray(background, dtype=np.float64)).rgb


def ray_sample_geometry(ray: renderer.Ray, options: renderer.RenderOptions):
    """Sample points and spacings shared by the analytic and FD paths."""
    samples = renderer.sample_stratified(ray, options.samples_per_ray, mode=options.mode,
                                         rng=np.random.default_rng(options.seed))
    return samples.points[None, :, :], samples.spacings[None, :]


def fd_ray_jacobian_sq(field, grid, ray, options, step=1e-4):
    """Central-difference version of ray_jacobian_sq; dense (M,M,M,3) output.

    Cost is two forward renders per parameter: small lattices only.
    """
    points, deltas = ray_sample_geometry(ray, options)
    bg = np.asarray(options.background, dtype=np.float64)
    m = grid.resolution
    out = np.zeros((m, m, m, 3))
    theta = grid.displacements
    for idx in np.ndindex(m, m, m, 3):
        theta[idx] = step
        c_plus = render_rays_perturbed(field, grid, points, deltas, bg)
        theta[idx] = -step
        c_minus = render_rays_perturbed(field, grid, points, deltas, bg)
        theta[idx] = 0.0
        j = (c_plus - c_minus) / (2.0 * step)
        out[idx] = float(np.sum(j * j))
    return out


def nll_value(field, grid, points, deltas, gt_colors, lam, background=(0.0, 0.0, 0.0)):
    """Posterior negative log-likelihood target: mean squared ray color error
    over the fixed ray set plus lam * ||theta||^2."""
    rgb = render_rays_perturbed(field, grid, points, deltas, background)
    resid = rgb - np.asarray(gt_colors, dtype=np.float64)
    return float(np.mean(np.sum(resid * resid, axis=-1)) + lam * np.sum(grid.displacements ** 2))


def fd_hessian_diag(field, grid, points, deltas, gt_colors, lam,
                    background=(0.0, 0.0, 0.0), step=1e-3):
    """Second central differences of the negative log-likelihood at zero."""
    m = grid.resolution
    h0 = nll_value(field, grid, points, deltas, gt_colors, lam, background)
    out = np.zeros((m, m, m, 3))
    theta = grid.displacements
    for idx in np.ndindex(m, m, m, 3):
        theta[idx] = step
        h_plus = nll_value(field, grid, points, deltas, gt_colors, lam, background)
        theta[idx] = -step
        h_minus = nll_value(field, grid, points, deltas, gt_colors, lam, background)
        theta[idx] = 0.0
        out[idx] = (h_plus - 2.0 * h0 + h_minus) / (step * step)
    return out


def mode_gradient_norm_fd(field, grid, points, deltas, gt_colors, lam,
                          background=(0.0, 0.0, 0.0), step=1e-4):
    """Central-difference gradient norm of the NLL at zero displacement."""
    m = grid.resolution
    g = np.zeros((m, m, m, 3))
    theta = grid.displacements
    for idx in np.ndindex(m, m, m, 3):
        theta[idx] = step
        h_plus = nll_value(field, grid, points, deltas, gt_colors, lam, background)
        theta[idx] = -step
        h_minus = nll_value(field, grid, points, deltas, gt_colors, lam, background)
        theta[idx] = 0.0
        g[idx] = (h_plus - h_minus) / (2.0 * step)
    return float(np.linalg.norm(g.reshape(-1)))


def check_mode_gradient(field, grid, points, deltas, gt_colors, lam,
                        background=(0.0, 0.0, 0.0), tol=1e-3):
    """Warn when the NLL gradient at zero displacement is not negligible.

    The curvature-only posterior assumes the field sits at a local optimum;
    a large gradient means the quadratic expansion is off-center.
    """
    norm = mode_gradient_norm_fd(field, grid, points, deltas, gt_colors, lam, background)
    if norm > tol:
        warnings.warn(
            f"NLL gradient norm {norm:.3e} at zero displacement exceeds {tol:g}; "
            "the curvature approximation may be off-center", RuntimeWarning)
    return norm


def max_mode_deviation(field, grid, points, deltas, background=(0.0, 0.0, 0.0)):
    """max |perturbed render at zero - base render| over the given rays."""
    tau, col = field.query(points)
    base = renderer.composite(tau, col, np.asarray(deltas, dtype=np.float64),
                              background=np.asarray(background, dtype=np.float64)).rgb
    pert = render_rays_perturbed(field, grid, points, deltas, background)
    return float(np.max(np.abs(pert - base)))
