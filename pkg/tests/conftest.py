import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from stp4d.camera import Camera, look_at
from stp4d.seeding import torch_generator

settings.register_profile(
    "desk",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("desk")


def make_scene(count: int, seed: int = 0, spread: float = 1.2) -> torch.Tensor:
    """Raw attributes for a well-behaved random scene.

    Scales and opacities are kept away from the alpha clamp/cutoff boundaries
    so finite-difference probes stay on one side of each branch.
    """
    gen = torch_generator(seed)

    def u(*shape, lo, hi):
        return torch.rand(*shape, generator=gen, dtype=torch.float64) * (hi - lo) + lo

    raw = torch.empty(count, 14, dtype=torch.float64)
    raw[:, 0:3] = u(count, 3, lo=-spread, hi=spread)
    raw[:, 3:7] = u(count, 4, lo=-1.0, hi=1.0)
    raw[:, 7:10] = u(count, 3, lo=-1.8, hi=-0.8)
    raw[:, 10:13] = u(count, 3, lo=-2.0, hi=2.0)
    raw[:, 13:14] = u(count, 1, lo=0.5, hi=2.0)
    return raw


def make_camera(size: int = 64, radius: float = 6.0, focal: float | None = None) -> Camera:
    rotation, translation = look_at(np.array([radius, 0.0, 0.0]))
    return Camera(
        fx=focal or size, fy=focal or size, cx=size / 2.0, cy=size / 2.0,
        rotation=rotation, translation=translation, width=size, height=size,
    )


@pytest.fixture
def camera64() -> Camera:
    return make_camera(64)
