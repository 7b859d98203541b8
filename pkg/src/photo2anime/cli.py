"""Command-line entry point: train, translate, evaluate, and ablation runs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigurationError, Photo2AnimeError
from .evaluation import (ToyFeatureExtractor, ToyPerceptualDistance, extract_features, fid,
                         load_torchscript_distance, load_torchscript_extractor,
                         lpips_diversity, record_metric)
from .trainer import (ImageFolderDataset, TrainConfig, build_state, load_checkpoint,
                      load_generator, run)

ABLATION_VARIANTS = {
    "no_asc": {"use_asc": False},
    "no_fst": {"use_fst_style_injection": False},
    "no_db": {"use_double_branch": False},
    "in": {"polin_mode": "in"},
    "lin": {"polin_mode": "lin"},
    "adain": {"adapolin_mode": "adain"},
    "adalin": {"adapolin_mode": "adalin"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photo2anime",
        description="Style-guided photo-to-anime face translation: training, "
                    "inference, and evaluation.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, with_data=True):
        p.add_argument("--config", help="YAML file mirroring the training config fields")
        p.add_argument("--seed", type=int, help="random seed override")
        p.add_argument("--out", help="output directory override")
        if with_data:
            p.add_argument("--photos", help="photo-domain image directory")
            p.add_argument("--anime", help="anime-domain image directory")
            p.add_argument("--iters", type=int, help="iteration count override")
            p.add_argument("--image-size", type=int, dest="image_size",
                           help="square training resolution override")

    p_train = sub.add_parser("train", help="run the full training loop")
    add_common(p_train)
    p_train.add_argument("--checkpoint", help="resume from this checkpoint")

    p_ablate = sub.add_parser("ablate", help="train one architecture ablation variant")
    add_common(p_ablate)
    p_ablate.add_argument("--variant", required=True, choices=sorted(ABLATION_VARIANTS))

    p_tr = sub.add_parser("translate", help="translate photos guided by reference images")
    p_tr.add_argument("--checkpoint", required=True)
    p_tr.add_argument("--source", required=True, help="photo image file or directory")
    p_tr.add_argument("--reference", required=True, help="anime reference file or directory")
    p_tr.add_argument("--out", default="outputs", help="directory for the emitted images")
    p_tr.add_argument("--live", action="store_true",
                      help="use the live generator instead of the averaged one")

    p_ev = sub.add_parser("evaluate", help="compute a metric for a trained model")
    p_ev.add_argument("--metric", required=True, choices=("fid", "lpips"))
    p_ev.add_argument("--checkpoint", required=True)
    p_ev.add_argument("--photos", required=True, help="photo-domain test directory")
    p_ev.add_argument("--anime", required=True, help="anime-domain test directory")
    p_ev.add_argument("--out", default="metrics", help="directory for metric reports")
    p_ev.add_argument("--seed", type=int, default=0)
    p_ev.add_argument("--k", type=int, default=10, help="references per photo (lpips)")
    p_ev.add_argument("--extractor", help="TorchScript weights for the metric network")
    p_ev.add_argument("--live", action="store_true")
    return parser


def _config_from_args(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for flag, field in [("photos", "photo_dir"), ("anime", "anime_dir"), ("seed", "seed"),
                        ("iters", "iterations"), ("image_size", "image_size"),
                        ("out", "out_dir")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return config.with_overrides(**overrides)


def _cmd_train(args) -> int:
    if getattr(args, "checkpoint", None):
        state = load_checkpoint(args.checkpoint)
        if args.iters is not None:
            state.config = state.config.with_overrides(iterations=args.iters)
        run(state)
    else:
        run(build_state(_config_from_args(args)))
    return 0


def _cmd_ablate(args) -> int:
    config = _config_from_args(args).with_overrides(**ABLATION_VARIANTS[args.variant])
    if args.out is None:
        config = config.with_overrides(out_dir=str(Path(config.out_dir) / args.variant))
    print(f"[ablate] variant={args.variant}")
    run(build_state(config))
    return 0


def _load_image_paths(path) -> list:
    p = Path(path)
    if p.is_dir():
        files = sorted(q for q in p.iterdir()
                       if q.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".webp"})
        if not files:
            raise ConfigurationError(f"no images found in {p}")
        return files
    if p.is_file():
        return [p]
    raise ConfigurationError(f"{p} is neither an image file nor a directory")


def _load_images(paths, size: int) -> torch.Tensor:
    arrays = []
    for path in paths:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((size, size), Image.BILINEAR)
            arrays.append(np.asarray(img, dtype=np.uint8))
    stacked = np.stack(arrays).transpose(0, 3, 1, 2)
    return torch.from_numpy(stacked.copy()).float() / 127.5 - 1.0


def _save_image(tensor: torch.Tensor, path: Path) -> None:
    arr = ((tensor.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy()).save(path)


def _cmd_translate(args) -> int:
    generator = load_generator(args.checkpoint, ema=not args.live)
    size = generator.config.image_size
    src_paths = _load_image_paths(args.source)
    ref_paths = _load_image_paths(args.reference)
    if len(ref_paths) == 1:
        ref_paths = ref_paths * len(src_paths)
    if len(ref_paths) != len(src_paths):
        raise ConfigurationError(
            f"got {len(src_paths)} sources but {len(ref_paths)} references; "
            "supply one reference in total or one per source")
    sources = _load_images(src_paths, size)
    references = _load_images(ref_paths, size)
    with torch.no_grad():
        outputs = generator.translate(sources, references)
    out_dir = Path(args.out)
    for sp, rp, img in zip(src_paths, ref_paths, outputs):
        target = out_dir / f"{sp.stem}__{rp.stem}.png"
        _save_image(img, target)
        print(f"[translate] wrote {target}")
    return 0


def _cmd_evaluate(args) -> int:
    generator = load_generator(args.checkpoint, ema=not args.live)
    size = generator.config.image_size
    photos = ImageFolderDataset(args.photos, size)
    anime = ImageFolderDataset(args.anime, size)
    photo_batch = photos.batch(range(len(photos)))
    anime_batch = anime.batch(range(len(anime)))

    if args.metric == "fid":
        extractor = load_torchscript_extractor(args.extractor) if args.extractor \
            else ToyFeatureExtractor()
        rng = np.random.default_rng(args.seed)
        refs = anime_batch[rng.integers(0, len(anime), size=len(photos))]
        with torch.no_grad():
            generated = generator.translate(photo_batch, refs)
        value = fid(extract_features(generated, extractor),
                    extract_features(anime_batch, extractor))
        tag = extractor.tag
        n_images = len(photos)
    else:
        distance = load_torchscript_distance(args.extractor) if args.extractor \
            else ToyPerceptualDistance()
        value = lpips_diversity(generator, photo_batch, anime_batch,
                                k=args.k, seed=args.seed, distance=distance)
        tag = distance.tag
        n_images = len(photos)

    dataset = f"{Path(args.photos).name}->{Path(args.anime).name}"
    record = record_metric(args.out, args.metric, dataset, value, n_images, tag, args.seed)
    print(f"[evaluate] {args.metric}={record['value']:.6f} over {n_images} images")
    return 0


_COMMANDS = {"train": _cmd_train, "ablate": _cmd_ablate,
             "translate": _cmd_translate, "evaluate": _cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.verb](args)
    except Photo2AnimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure outside our own error types
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(main())
