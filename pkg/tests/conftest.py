import numpy as np
import pytest

import raylaplace as rl


def pytest_terminal_summary(terminalreporter):
    """Surface the acceptance gate's one-line-per-criterion results."""
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULT_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_bounds():
    return rl.Aabb.unit_cube()


@pytest.fixture(scope="session")
def random_small_field(unit_bounds):
    rng = np.random.default_rng(11)
    return rl.VoxelField(
        unit_bounds,
        rng.uniform(-2.0, 2.0, (4, 4, 4)).astype(np.float32),
        rng.uniform(-2.0, 2.0, (4, 4, 4, 3)).astype(np.float32),
    )


@pytest.fixture(scope="session")
def sphere_field(unit_bounds):
    return rl.make_synthetic_scene(rl.SceneSpec(kind="sphere", radius=0.3, edge_width=0.04), 32)


@pytest.fixture(scope="session")
def ring_cameras(unit_bounds):
    return rl.orbit_cameras(unit_bounds, 8, 1.7, [12.0, -12.0], fx=70.0, width=48, height=48)


@pytest.fixture(scope="session")
def trained_sphere(sphere_field, ring_cameras):
    """A small trained field shared by tests that need an optimized one."""
    opts = rl.RenderOptions(samples_per_ray=48)
    images = np.stack([rl.render_channels(sphere_field, c, opts).rgb for c in ring_cameras])
    init = rl.VoxelField(
        sphere_field.bounds,
        np.full((32, 32, 32), -2.0, np.float32),
        np.zeros((32, 32, 32, 3), np.float32),
    )
    cfg = rl.TrainConfig(iterations=300, batch_rays=2048, samples_per_ray=48, seed=3)
    trained = rl.fit_field(images, ring_cameras, init, cfg)
    return {"field": trained, "gt": sphere_field, "cameras": ring_cameras, "images": images}
