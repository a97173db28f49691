import numpy as np
import pytest

from ddtd_emi import circuit, field
from ddtd_emi.config import RunConfig, preset
from ddtd_emi.field import GridGeometry
from ddtd_emi.vae import TrainConfig


@pytest.fixture(scope="session")
def ex1_cfg():
    return preset("example1")


@pytest.fixture(scope="session")
def ex1_grid(ex1_cfg):
    return ex1_cfg.build_grid()


@pytest.fixture(scope="session")
def ref_rho(ex1_grid):
    return field.rasterize_seed(field.reference_seed(ex1_grid), ex1_grid)


@pytest.fixture(scope="session")
def ref_layout(ex1_grid, ref_rho):
    return field.resolve(ex1_grid, ref_rho)


@pytest.fixture(scope="session")
def cut_rho(ex1_grid, ref_rho):
    """Reference layout with the copper severed between port 1 and L1."""
    rho = ref_rho.copy()
    wny, wnx = ex1_grid.design_shape
    f = rho.reshape(wny, wnx)
    f[:, 2] = 0.0
    return f.ravel()


@pytest.fixture(scope="session")
def tiny_cfg():
    """Small but complete loop configuration for engine-level tests."""
    return RunConfig(
        n_initial=8,
        n_generate=6,
        iterations=2,
        rng_seed=11,
        geometry=GridGeometry(design_nx=12, design_ny=8),
        train=TrainConfig(epochs=8),
    )


@pytest.fixture(scope="session")
def tiny_grid(tiny_cfg):
    return tiny_cfg.build_grid()


def micro_grid(all_conductor_margins=False):
    """Hand-built minimal grid for network-level tests: rectangular design
    window with six single-node pads, so pad merging is a no-op."""
    nx, ny = 8, 6
    pads = {
        "port1": [2 * nx + 0],
        "port2": [2 * nx + 7],
        "c1": [0 * nx + 1],
        "l1_left": [0 * nx + 3],
        "l1_right": [0 * nx + 5],
        "c2": [0 * nx + 7],
    }
    design = [y * nx + x for y in range(1, 5) for x in range(1, 7)]
    pad_nodes = {n for nodes in pads.values() for n in nodes}
    rest = set(range(nx * ny)) - pad_nodes - set(design)
    if all_conductor_margins:
        fixed_conductor = pad_nodes | rest
        fixed_void = set()
    else:
        fixed_conductor = pad_nodes
        fixed_void = rest
    return field.Grid(nx, ny, 1e-3, fixed_conductor, fixed_void, design, pads)


@pytest.fixture
def micro():
    return micro_grid()


def pi_network(y1, z_series, y2, z0=50.0, freq=1.0):
    """Three-node ideal lumped pi network (signal nodes 0 and 1, ground 2)
    built directly, bypassing grid extraction."""
    return circuit.ComplexNetwork(
        n_nodes=3, ground=2,
        branch_i=np.array([0, 0, 1]),
        branch_j=np.array([1, 2, 2]),
        branch_y=np.array([1.0 / z_series, y1, y2], dtype=complex),
        port1=(0, 2), port2=(1, 2), freq=freq)


def abcd_pi_s_params(y1, z_series, y2, z0=50.0):
    """Closed-form two-port of shunt y1, series z, shunt y2 via the ABCD
    cascade; the independent reference for the nodal solver."""
    a = 1.0 + z_series * y2
    b = z_series
    c = y1 + y2 + y1 * y2 * z_series
    d = 1.0 + z_series * y1
    denom = a + b / z0 + c * z0 + d
    s11 = (a + b / z0 - c * z0 - d) / denom
    s21 = 2.0 / denom
    return s11, s21


def brute_force_ranks(points):
    """Reference non-dominated ranks by repeated peeling; each round
    recomputes dominance on the remaining subset from scratch."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    ranks = np.zeros(n, dtype=int)
    remaining = np.arange(n)
    rank = 1
    while remaining.size:
        sub = pts[remaining]
        le = np.all(sub[:, None, :] <= sub[None, :, :], axis=2)
        lt = np.any(sub[:, None, :] < sub[None, :, :], axis=2)
        dominated = np.any(le & lt, axis=0)
        front = remaining[~dominated]
        ranks[front] = rank
        remaining = remaining[dominated]
        rank += 1
    return ranks


def monte_carlo_hypervolume(points, ref, n_samples, rng):
    """Hypervolume estimate by uniform sampling of the bounding box."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    hi = np.asarray(ref, dtype=float)
    samples = rng.uniform(lo, hi, size=(n_samples, 2))
    dominated = np.zeros(n_samples, dtype=bool)
    for p in pts:
        dominated |= (samples[:, 0] >= p[0]) & (samples[:, 1] >= p[1])
    box = np.prod(hi - lo)
    return box * dominated.mean()
