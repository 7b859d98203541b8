import numpy as np
import pytest
import torch
from PIL import Image

from photo2anime.discriminator import DoubleBranchDiscriminator
from photo2anime.generator import Generator, GeneratorConfig

torch.set_num_threads(1)


def small_config(**overrides) -> GeneratorConfig:
    params = dict(image_size=32, base_channels=8, style_dim=16, asc_depth=4)
    params.update(overrides)
    return GeneratorConfig(**params)


@pytest.fixture
def small_gen():
    torch.manual_seed(0)
    return Generator(small_config())


@pytest.fixture
def small_disc():
    torch.manual_seed(1)
    return DoubleBranchDiscriminator(base_channels=8)


def rand_images(n: int, size: int = 32, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, size, size, generator=g) * 2.0 - 1.0


def write_image_dir(directory, n: int = 8, size: int = 16, seed: int = 0) -> None:
    """Small folder of distinguishable PNGs: color fields with gradients."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0, 255, size, dtype=np.float32)
    for i in range(n):
        base = rng.integers(0, 256, size=3)
        arr = np.zeros((size, size, 3), dtype=np.float32)
        arr[:] = base
        arr[..., i % 3] = ramp[None, :]
        img = Image.fromarray(arr.clip(0, 255).astype(np.uint8))
        img.save(directory / f"img_{i:03d}.png")
