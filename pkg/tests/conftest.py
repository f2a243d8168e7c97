import numpy as np
import pytest

from dpet.phantom import (
    KineticParams,
    canonical_schedule,
    default_input_model,
    default_phantom_spec,
    simulate_dynamic,
)
from dpet.volume import Geometry, Volume3D


@pytest.fixture(scope="session")
def input_model():
    return default_input_model()


@pytest.fixture(scope="session")
def schedule():
    return canonical_schedule()


@pytest.fixture(scope="session")
def desk_phantom():
    """Noiseless default phantom: (dyn, true_ki, spec)."""
    spec = default_phantom_spec()
    dyn, true_ki = simulate_dynamic(spec)
    return dyn, true_ki, spec


def make_volume(values, voxel=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    values = np.asarray(values, dtype=float)
    return Volume3D(Geometry(values.shape, voxel, origin), values)


def structured_volume(dims=(32, 32, 24), voxel=(2.0, 2.0, 2.0), seed=0, blobs=25):
    """Blobby image with smooth random texture: enough structure that the MI
    optimum pins all six rigid parameters."""
    from dpet.volume import gaussian_smooth

    rng = np.random.default_rng(seed)
    g = Geometry(dims, voxel)
    x, y, z = np.meshgrid(*(np.arange(d, dtype=float) for d in dims), indexing="ij")
    img = np.zeros(dims)
    for _ in range(blobs):
        c = rng.uniform(0.15, 0.85, 3) * np.asarray(dims)
        w = rng.uniform(1.5, 4.0, 3)
        a = rng.uniform(0.5, 2.0)
        img += a * np.exp(-(((x - c[0]) / w[0]) ** 2
                           + ((y - c[1]) / w[1]) ** 2
                           + ((z - c[2]) / w[2]) ** 2))
    img += 0.3 * gaussian_smooth(Volume3D(g, rng.standard_normal(dims)), 1.5).values
    return Volume3D(g, img)


def bfs_flood_fill(membership, connectivity=26):
    """Brute-force BFS labeling oracle: returns sets of voxel-index frozensets."""
    from collections import deque

    dims = membership.shape
    offsets = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) == (0, 0, 0):
                    continue
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offsets.append((dx, dy, dz))
    seen = np.zeros(dims, dtype=bool)
    components = []
    for idx in np.argwhere(membership):
        idx = tuple(idx)
        if seen[idx]:
            continue
        comp = set()
        queue = deque([idx])
        seen[idx] = True
        while queue:
            cur = queue.popleft()
            comp.add(cur)
            for off in offsets:
                nb = tuple(c + o for c, o in zip(cur, off))
                if all(0 <= n < d for n, d in zip(nb, dims)) \
                        and membership[nb] and not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        components.append(frozenset(comp))
    return components
