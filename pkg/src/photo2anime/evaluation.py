"""Quantitative evaluation: FID, reference-guided output diversity, image grids.

Feature extraction and perceptual distance are pluggable. The shipped toy
implementations (per-channel pixel means, mean absolute pixel difference)
keep the metric arithmetic fully testable without pretrained weights;
paper-comparable numbers require user-supplied TorchScript modules.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, ContractViolation, NumericError, ShapeError

# The diversity protocol compares outputs at this fixed resolution.
COMPARE_SIZE = 256
FID_EPS = 1e-6


class ToyFeatureExtractor:
    """Per-channel spatial mean: a constant image c maps to (c, c, c)."""

    tag = "toy-mean"

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return images.mean(dim=(2, 3))


class TorchScriptExtractor:
    """User-supplied TorchScript module mapping [N,3,H,W] images to [N,d] features."""

    def __init__(self, module, tag: str):
        self.module = module
        self.tag = tag

    def features(self, images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.module(images)


def load_torchscript_extractor(path) -> TorchScriptExtractor:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(
            f"feature extractor weights not found at {path}; export the standard "
            "pretrained feature network as TorchScript (torch.jit.trace/script, "
            "input [N,3,H,W] in [-1,1], output [N,d]) and pass its file path")
    module = torch.jit.load(str(path), map_location="cpu")
    module.eval()
    return TorchScriptExtractor(module, tag=f"torchscript:{path.name}")


@dataclass
class FeatureSet:
    vectors: np.ndarray  # [M, d] float64
    extractor: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ShapeError(f"feature vectors must be [M, d], got {self.vectors.shape}")


def extract_features(images: torch.Tensor, extractor=None) -> FeatureSet:
    extractor = extractor or ToyFeatureExtractor()
    if images.dim() != 4:
        raise ShapeError(f"expected [N, 3, H, W] images, got {tuple(images.shape)}")
    if not torch.isfinite(images).all():
        raise ContractViolation("images contain non-finite values")
    with torch.no_grad():
        feats = extractor.features(images)
    return FeatureSet(vectors=feats.detach().cpu().numpy(), extractor=extractor.tag)


def _sqrt_sym_product(cov_a: np.ndarray, cov_b: np.ndarray) -> np.ndarray:
    prod = cov_a @ cov_b
    sym = (prod + prod.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _frechet(mu_a, cov_a, mu_b, cov_b) -> float:
    diff = mu_a - mu_b
    sqrt_prod = _sqrt_sym_product(cov_a, cov_b)
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(sqrt_prod))
    if not np.isfinite(value):
        raise np.linalg.LinAlgError("non-finite distance")
    return value


def gaussian_summary(features: FeatureSet):
    """Sample mean and symmetrized covariance of a feature set."""
    vectors = features.vectors
    mu = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False)
    cov = np.atleast_2d(cov)
    return mu, (cov + cov.T) / 2.0


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    if a.extractor != b.extractor:
        raise ContractViolation(
            f"feature sets come from different extractors: {a.extractor} vs {b.extractor}")
    if a.vectors.shape[0] < 2 or b.vectors.shape[0] < 2:
        raise ContractViolation("FID needs at least 2 samples per side for a covariance")
    if a.vectors.shape[1] != b.vectors.shape[1]:
        raise ShapeError("feature dimensionality differs between the two sets")
    mu_a, cov_a = gaussian_summary(a)
    mu_b, cov_b = gaussian_summary(b)
    try:
        return _frechet(mu_a, cov_a, mu_b, cov_b)
    except np.linalg.LinAlgError:
        warnings.warn(f"FID square root failed; retrying with {FID_EPS}*I regularization")
        eye = np.eye(cov_a.shape[0])
        try:
            return _frechet(mu_a, cov_a + FID_EPS * eye, mu_b, cov_b + FID_EPS * eye)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"FID square root failed after regularization: {exc}") from exc


class ToyPerceptualDistance:
    """Mean absolute pixel difference; zero exactly for identical images."""

    tag = "toy-l1"

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        return (a - b).abs().flatten(1).mean(dim=1)


class TorchScriptDistance:
    """User-supplied TorchScript module scoring image pairs: (a, b) -> [N]."""

    def __init__(self, module, tag: str):
        self.module = module
        self.tag = tag

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.module(a, b)


def load_torchscript_distance(path) -> TorchScriptDistance:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(
            f"perceptual distance weights not found at {path}; export the pretrained "
            "distance network as TorchScript (torch.jit.trace/script, two [N,3,H,W] "
            "inputs, [N] output) and pass its file path")
    module = torch.jit.load(str(path), map_location="cpu")
    module.eval()
    return TorchScriptDistance(module, tag=f"torchscript:{path.name}")


def lpips_diversity(model, photos: torch.Tensor, anime_pool: torch.Tensor,
                    k: int = 10, seed: int = 0, distance=None) -> float:
    """Mean pairwise perceptual distance among k reference-guided outputs per photo.

    For each photo, k references are drawn without replacement from the pool,
    the k translations are rescaled to 256x256, and all k(k-1)/2 pairs are
    scored; the result averages over pairs and photos.
    """
    if k < 2:
        raise ContractViolation("diversity needs k >= 2 references per photo")
    if anime_pool.shape[0] < k:
        raise ContractViolation(
            f"reference pool has {anime_pool.shape[0]} images, needs at least k={k}")
    if photos.shape[0] < 1:
        raise ContractViolation("no photos supplied")
    distance = distance or ToyPerceptualDistance()
    rng = np.random.default_rng(seed)

    per_photo = []
    with torch.no_grad():
        for i in range(photos.shape[0]):
            refs = anime_pool[rng.choice(anime_pool.shape[0], size=k, replace=False)]
            source = photos[i:i + 1].expand(k, -1, -1, -1)
            outs = model.translate(source, refs)
            outs = F.interpolate(outs, size=(COMPARE_SIZE, COMPARE_SIZE),
                                 mode="bilinear", align_corners=False)
            pair_values = [distance.distance(outs[p:p + 1], outs[q:q + 1]).item()
                           for p in range(k) for q in range(p + 1, k)]
            per_photo.append(sum(pair_values) / len(pair_values))
    return float(sum(per_photo) / len(per_photo))


def _to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = ((img.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def emit_grid(sources, references, outputs, path) -> None:
    """One row per triplet: reference | source | outputs, written as a single PNG."""
    if not (len(sources) == len(references) == len(outputs)):
        raise ContractViolation("sources, references and outputs must have equal lengths")
    if len(sources) == 0:
        raise ContractViolation("cannot emit an empty grid")
    rows = []
    for src, ref, outs in zip(sources, references, outputs):
        outs = list(outs) if isinstance(outs, (list, tuple)) else [outs]
        cells = [ref, src, *outs]
        if any(c.shape != cells[0].shape for c in cells):
            raise ShapeError("all images in a grid row must share one shape")
        rows.append(np.concatenate([_to_uint8(c) for c in cells], axis=1))
    if any(r.shape != rows[0].shape for r in rows):
        raise ShapeError("all grid rows must have the same width")
    grid = np.concatenate(rows, axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(path)


def record_metric(out_dir, metric: str, dataset: str, value: float, n_images: int,
                  extractor: str, seed: int) -> dict:
    """Writes {metric}.json and appends one row to the metrics.csv summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"metric": metric, "dataset": dataset, "value": value,
              "n_images": n_images, "extractor": extractor, "seed": seed}
    (out_dir / f"{metric}.json").write_text(json.dumps(record, indent=2) + "\n")
    summary = out_dir / "metrics.csv"
    new_file = not summary.exists()
    with open(summary, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(record))
        if new_file:
            writer.writeheader()
        writer.writerow(record)
    return record
