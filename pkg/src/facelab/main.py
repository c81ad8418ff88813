"""facelab command-line entry point."""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from facelab.config import FACELAB_LOG_LEVEL, resolve_data_dir
from facelab.errors import ConfigurationError, FacelabError, NumericalError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = (
    "generate-data",
    "pretrain",
    "train",
    "eval-recon",
    "eval-cycle",
    "eval-vertex",
    "ablate",
    "fit-templates",
    "reconstruct",
    "model-info",
)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _load_config(args: argparse.Namespace):
    from facelab.training.settings import TrainConfig

    config = TrainConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config.validate()
    return config


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args: argparse.Namespace):
    from facelab.data.loader import SyntheticDataset

    return SyntheticDataset(resolve_data_dir(args.data))


def _training_data(args: argparse.Namespace, config):
    """Batch source and reference dataset of a training command.

    A multi-shard ``dataset_mix`` reads one dataset per shard from
    ``<data>/<shard>``; the largest shard supplies the model and validation split.
    """
    from facelab.data.loader import ShardMixer, open_shards

    if len(config.dataset_mix) == 1:
        dataset = _dataset(args)
        return dataset, dataset
    shards = open_shards(resolve_data_dir(args.data), config.dataset_mix)
    return shards, ShardMixer(shards, config.dataset_mix, config.seed).primary


def _model(args: argparse.Namespace, config):
    """The dataset's morphable model when a dataset exists, else the one the config describes."""
    from facelab.face.io import load_model
    from facelab.face.model import build_synthetic_model

    model_dir = resolve_data_dir(args.data) / "model"
    if model_dir.exists():
        return load_model(model_dir)
    return build_synthetic_model(config.model_spec(), config.model_seed)


def _checkpoint(path: str | None):
    from facelab.networks.checkpoint import load_checkpoint

    if not path:
        raise ConfigurationError("--checkpoint is required")
    return load_checkpoint(path)


def _eval_config(args: argparse.Namespace, config):
    from facelab.evaluation import EvalConfig

    values = {"seed": config.seed, "batch_size": config.batch_size}
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = args.epochs
    if getattr(args, "variants", None) is not None:
        values["n_variants"] = args.variants
    return EvalConfig(**values)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate_data(args: argparse.Namespace) -> int:
    from facelab.data.appearance import AppearanceConfig
    from facelab.data.generate import generate_dataset
    from facelab.face.model import build_synthetic_model
    from facelab.training.settings import read_mapping

    config = _load_config(args)
    appearance = AppearanceConfig.from_mapping(read_mapping(args.config) if args.config else {})
    model = build_synthetic_model(config.model_spec(), config.model_seed)
    out = Path(args.out) if args.out else resolve_data_dir(args.data)
    manifest = generate_dataset(
        model,
        args.n or config.dataset_size,
        appearance,
        config.seed,
        out,
        size=config.size,
        val=config.split_val,
        test=config.split_test,
    )
    logger.info("Dataset ready: %d samples in %s", manifest.n_samples, out)
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    from facelab.networks.checkpoint import save_checkpoint
    from facelab.networks.encoder import EncoderSet
    from facelab.networks.translator import Translator
    from facelab.training.pretrain import landmark_error, pretrain

    config = _load_config(args)
    data, dataset = _training_data(args, config)
    out = _out_dir(args, "pretrain")
    encoders = EncoderSet(config.encoder_config(), seed=config.seed)
    before = landmark_error(encoders, dataset, "val", config.batch_size)
    pretrain(encoders, data, config, dataset.model, out)
    after = landmark_error(encoders, dataset, "val", config.batch_size)
    logger.info("Validation landmark loss %.5f -> %.5f", before, after)
    translator = Translator(config.translator_config(), seed=config.seed + 1)
    save_checkpoint(
        out / "pretrained",
        encoders,
        translator,
        meta={"stage": "pretrain", "landmark_before": before, "landmark_after": after, "config": config.to_dict()},
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from facelab.networks.encoder import EncoderSet
    from facelab.training.pretrain import pretrain
    from facelab.training.trainer import Trainer, train

    config = _load_config(args)
    data, dataset = _training_data(args, config)
    out = _out_dir(args, "train")
    config.save(out / "config.json")
    if args.resume:
        trainer = Trainer.resume(
            args.resume, config, data, dataset.model, out_dir=out, expression_stats=dataset.expression_stats
        )
        trainer.fit()
        path = trainer.save(out / "final")
    else:
        if args.encoders:
            encoders = _checkpoint(args.encoders).encoders
        else:
            encoders = pretrain(EncoderSet(config.encoder_config(), seed=config.seed), data, config, dataset.model, out)
        path = train(config, data, out, encoders=encoders)
    logger.info("Final checkpoint: %s", path)
    return EXIT_OK


def cmd_eval_recon(args: argparse.Namespace) -> int:
    from facelab.evaluation.protocols import (
        PROTOCOL_TRANSLATOR_SEED,
        EncoderPredictor,
        OraclePredictor,
        frozen_encoder_protocol,
    )
    from facelab.evaluation.report import save_panels, write_report
    from facelab.networks.translator import Translator

    config = _load_config(args)
    dataset = _dataset(args)
    out = _out_dir(args, "eval")
    if args.oracle:
        predictor = OraclePredictor()
    else:
        checkpoint = _checkpoint(args.checkpoint)
        predictor = EncoderPredictor(checkpoint.encoders, checkpoint.fingerprint)
    evaluation = _eval_config(args, config)
    translator = Translator(config.translator_config(), seed=evaluation.seed + PROTOCOL_TRANSLATOR_SEED)
    report = frozen_encoder_protocol(predictor, dataset, config, evaluation, translator=translator)
    write_report(report, out, "eval_recon")
    if args.panels:
        save_panels(out / "panels", predictor, translator, dataset, config, seed=config.seed)
    logger.info("eval-recon: L1 %.5f, VGG %.5f", report.l1, report.vgg)
    return EXIT_OK


def cmd_eval_cycle(args: argparse.Namespace) -> int:
    from facelab.evaluation.protocols import cycle_eval
    from facelab.evaluation.report import write_report

    config = _load_config(args)
    dataset = _dataset(args)
    checkpoint = _checkpoint(args.checkpoint)
    report = cycle_eval(
        checkpoint.encoders, checkpoint.translator, dataset, config, _eval_config(args, config), args.perturb_scale
    )
    write_report(report, _out_dir(args, "eval"), "eval_cycle")
    logger.info("eval-cycle: vert L1 %.6f, vert abs std %.6f", report.vert_l1, report.vert_abs_std)
    return EXIT_OK


def cmd_eval_vertex(args: argparse.Namespace) -> int:
    from facelab.evaluation.protocols import EncoderPredictor, dataset_vertex_error
    from facelab.evaluation.report import write_report

    config = _load_config(args)
    dataset = _dataset(args)
    checkpoint = _checkpoint(args.checkpoint)
    predictor = EncoderPredictor(checkpoint.encoders, checkpoint.fingerprint)
    report = dataset_vertex_error(predictor, dataset, "test", config.batch_size)
    write_report(report, _out_dir(args, "eval"), "eval_vertex")
    stats = report.vertex_stats
    logger.info("eval-vertex: mean %.5f, median %.5f, max %.5f", stats["mean"], stats["median"], stats["max"])
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    from facelab.evaluation.ablation import run_ablation
    from facelab.evaluation.report import write_report

    config = _load_config(args)
    dataset = _dataset(args)
    out = _out_dir(args, f"ablate_{args.name}")
    table = run_ablation(args.name, config, dataset, _eval_config(args, config), out)
    write_report(table, out, f"ablation_{args.name}")
    return EXIT_OK


def _neutral_beta(path: str | None, model):
    """Identity coefficients of the fitted subject; the mean identity when no file is given."""
    if path is None:
        logger.warning("No --neutral params given; fitting with the mean identity")
        return torch.zeros(model.d_beta)
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
        beta = record.get("params", record)["shape"]
    except FileNotFoundError as exc:
        raise ConfigurationError(f"Neutral params file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"Neutral params file {path} has no readable 'shape' entry: {exc}") from exc
    if len(beta) != model.d_beta:
        raise ConfigurationError(f"Neutral params hold {len(beta)} identity coefficients, the model has {model.d_beta}")
    return torch.tensor(beta, dtype=torch.float32)


def cmd_fit_templates(args: argparse.Namespace) -> int:
    from facelab.augmentation import TemplateLibrary
    from facelab.augmentation.fitting import fit_template
    from facelab.augmentation.library import LibrarySpec, build_extreme_library
    from facelab.face.io import read_obj

    config = _load_config(args)
    model = _model(args, config)
    target = Path(args.library_out) if args.library_out else _out_dir(args, "templates") / "library.json"
    if args.frames:
        frame_dir = Path(args.frames)
        paths = sorted(frame_dir.glob("*.obj"))
        if not paths:
            raise ConfigurationError(f"No OBJ frames in {frame_dir}")
        beta = _neutral_beta(args.neutral, model)
        fit = fit_template([read_obj(path)[0] for path in paths], model, beta)
        library = TemplateLibrary(names=[p.stem for p in paths], vectors=fit.psi, provenance="fitted", d_psi=model.d_psi)
        for name, residual, iterations in zip(library.names, fit.residuals, fit.iterations, strict=True):
            logger.info("Fitted %s: objective %.3e after %d iterations", name, residual, iterations)
    else:
        stats_path = resolve_data_dir(args.data)
        norm = 1.0
        if (stats_path / "manifest.json").exists():
            norm = _dataset(args).expression_stats.get("psi_mean_norm", 1.0)
        library = build_extreme_library(model, LibrarySpec(reference_norm=norm), np.random.default_rng(config.seed))
    target.parent.mkdir(parents=True, exist_ok=True)
    library.save(target)
    logger.info("Template library (%s, %d entries) written to %s", library.provenance, len(library.names), target)
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    from facelab.data.images import load_png, mask_overlay, save_png
    from facelab.face import FaceParams
    from facelab.face.io import export_obj
    from facelab.face.metrics import scan_to_mesh
    from facelab.face.model import decode, landmarks2d
    from facelab.masking.mask import apply_mask, face_mask_from_landmarks
    from facelab.networks.encoder import encode
    from facelab.networks.translator import translate
    from facelab.render.rasterizer import render_geometry

    if not args.image:
        raise ConfigurationError("--image is required")
    config = _load_config(args)
    checkpoint = _checkpoint(args.checkpoint)
    model = _model(args, config)
    out = _out_dir(args, "reconstruct")
    image = load_png(args.image)
    expected = checkpoint.encoders.config.image_size
    if tuple(image.shape[:2]) != tuple(expected):
        raise ConfigurationError(f"Image is {image.shape[1]}x{image.shape[0]}, the checkpoint expects {expected[1]}x{expected[0]}")

    with torch.no_grad():
        params = encode(checkpoint.encoders, image[None])
        vertices = decode(model, params)
        render = render_geometry(
            vertices, params.camera, model.face_triangles, expected, sigma=config.render_sigma, gamma=config.render_gamma
        )
        # No landmark detector: the hull comes from the predicted landmarks
        landmarks = landmarks2d(model, params)[0]
        mask = face_mask_from_landmarks(landmarks, config.mask_dilation, expected)
        exclude = render.face_mask[0] if args.exclude_render_interior else None
        masked = apply_mask(image, mask, config.mask_ratio, np.random.default_rng(config.seed), exclude)
        output = translate(checkpoint.translator, render.image, masked.image[None])[0]

    stem = Path(args.image).stem
    (out / f"{stem}_params.json").write_text(json.dumps(params.to_dict(), indent=2) + "\n", encoding="utf-8")
    save_png(out / f"{stem}_geometry.png", render.image[0])
    save_png(out / f"{stem}_output.png", output)
    export_obj(out / f"{stem}.obj", vertices[0], model.triangles)
    if args.dump_mask:
        save_png(out / f"{stem}_mask.png", mask_overlay(image, mask, masked.positions))
    if args.ground_truth:
        truth = FaceParams.from_dict(json.loads(Path(args.ground_truth).read_text(encoding="utf-8"))["params"])
        with torch.no_grad():
            stats = scan_to_mesh(decode(model, truth)[0], vertices[0], model.triangles)
        logger.info("Scan-to-mesh vs ground truth: mean %.5f, median %.5f, max %.5f", *stats)
    logger.info("Reconstruction written to %s", out)
    return EXIT_OK


def cmd_model_info(args: argparse.Namespace) -> int:
    from facelab.face.io import model_fingerprint
    from facelab.networks.encoder import EncoderSet
    from facelab.networks.freezing import parameter_count
    from facelab.networks.translator import Translator
    from facelab.training.settings import TrainConfig

    if args.schema:
        print(json.dumps(TrainConfig.schema(), indent=2))
        return EXIT_OK
    config = _load_config(args)
    model = _model(args, config)
    encoders = EncoderSet(config.encoder_config(), seed=config.seed)
    translator = Translator(config.translator_config(), seed=config.seed)
    info = {
        "n_vertices": model.n_vertices,
        "n_triangles": int(model.triangles.shape[0]),
        "n_face_triangles": int(model.face_triangles.shape[0]),
        "d_beta": model.d_beta,
        "d_psi": model.d_psi,
        "d_expression": model.d_expression,
        "n_landmarks": int(model.landmark_indices.shape[0]),
        "seed": model.seed,
        "fingerprint": model_fingerprint(model),
        "encoder_parameters": parameter_count(encoders),
        "encoder_branch_parameters": {name: parameter_count(b) for name, b in encoders.branches.items()},
        "translator_parameters": parameter_count(translator),
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


_HANDLERS = {
    "generate-data": cmd_generate_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval-recon": cmd_eval_recon,
    "eval-cycle": cmd_eval_cycle,
    "eval-vertex": cmd_eval_vertex,
    "ablate": cmd_ablate,
    "fit-templates": cmd_fit_templates,
    "reconstruct": cmd_reconstruct,
    "model-info": cmd_model_info,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from facelab.evaluation.ablation import available_ablations

    parser = argparse.ArgumentParser(prog="facelab", description="Desk-scale neural analysis-by-synthesis face reconstruction")
    parser.add_argument("--config", default=None, help="Run config (JSON or TOML)")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--data", default=None, help="Dataset directory (default: FACELAB_CACHE or data/)")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("generate-data", help="Render a synthetic dataset with ground truth")
    p.add_argument("--n", type=int, default=None, help="Number of samples (default: dataset_size)")

    sub.add_parser("pretrain", help="Pretrain the encoders on landmarks and identity")

    p = sub.add_parser("train", help="Alternating reconstruction/cycle training")
    p.add_argument("--encoders", default=None, help="Pretrained checkpoint; pretrains inline when omitted")
    p.add_argument("--resume", default=None, help="Checkpoint to resume from")

    p = sub.add_parser("eval-recon", help="Frozen-encoder image reconstruction protocol")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="Use ground-truth parameters instead of an encoder")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--panels", action="store_true", help="Also write input | S | I' panels")

    p = sub.add_parser("eval-cycle", help="Cycle-consistency metrics (vert L1, vert abs std)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--variants", type=int, default=None)
    p.add_argument("--perturb-scale", type=float, default=None)

    p = sub.add_parser("eval-vertex", help="Scan-to-mesh errors against ground-truth meshes")
    p.add_argument("--checkpoint", default=None)

    p = sub.add_parser("ablate", help="Train and compare an ablation family")
    p.add_argument("--name", required=True, choices=available_ablations())
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("fit-templates", help="Build or fit the extreme-expression template library")
    p.add_argument("--in", dest="frames", default=None, help="Directory of OBJ frames; authored library when omitted")
    p.add_argument("--neutral", default=None, help="Params JSON whose 'shape' is the subject's neutral identity")
    p.add_argument("--out", dest="library_out", default=None, help="Library JSON path (default: <out>/library.json)")

    p = sub.add_parser("reconstruct", help="Reconstruct one image with a trained checkpoint")
    p.add_argument("--image", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dump-mask", action="store_true")
    p.add_argument("--exclude-render-interior", action="store_true")
    p.add_argument("--ground-truth", default=None, help="Params JSON of the image, for a scan-to-mesh check")

    p = sub.add_parser("model-info", help="Describe the morphable model or print the config schema")
    p.add_argument("--schema", action="store_true")
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=getattr(logging, FACELAB_LOG_LEVEL.upper(), logging.INFO),
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return _HANDLERS[args.command](args)
    except ConfigurationError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalError, FacelabError, RuntimeError) as exc:
        logger.error("%s aborted: %s", args.command, exc)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
