"""Voxel radiance fields with a post-hoc spatial uncertainty field.

Pipeline: build or train a field on posed images, accumulate squared ray
Jacobians of a deformation-lattice reparametrization into an information
diagonal, invert it into a spatial uncertainty field, then evaluate against
depth error or threshold it to remove artifacts interactively.
"""

from .errors import (
    DomainError,
    FormatError,
    MissingFileError,
    PoseError,
    RayLaplaceError,
    TruncationError,
    ValidationError,
)
from .field_core import (
    Aabb,
    SceneSpec,
    TrainConfig,
    TrilinearSample,
    VoxelField,
    fit_field,
    make_synthetic_scene,
    trilinear_sample,
)
from .renderer import (
    Camera,
    ChannelImage,
    Ray,
    RaySamples,
    RenderOptions,
    composite,
    generate_ray,
    look_at_camera,
    orbit_cameras,
    render_channels,
    sample_stratified,
)
from .laplace_uq import (
    DeformationGrid,
    HessianDiagonal,
    UncertaintyField,
    UqConfig,
    accumulate_hessian_diag,
    compute_uncertainty_field,
    deform,
    perturbed_query,
    ray_jacobian_sq,
    uncertainty_at,
)
from .evaluation import (
    EnsembleResult,
    SparsificationResult,
    coverage,
    depth_error,
    ensemble_uncertainty,
    psnr,
    rank_correlation,
    sparsification,
)
from .scene_io import (
    SceneBundle,
    load_field,
    load_plane,
    load_png,
    load_scene,
    load_uncertainty,
    save_field,
    save_plane,
    save_png,
    save_scene,
    save_uncertainty,
)

__version__ = "0.1.0"
