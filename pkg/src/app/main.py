"""
Командная строка: python -m src.app.main <command> [flags]

Первая строка stdout: effective-config со всеми разрешёнными значениями по умолчанию.
Коды выхода: 0 успех, 1 ошибка использования, 2 ошибка данных, 3 численный сбой.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from src.app.core.log_config import configure_logging
from src.app.core.schemas import LangevinConfig, SynthSpec, TrainConfig
from src.app.core.settings import get_settings
from src.app.domain.entities.train_result import TrainResult
from src.app.domain.enums import LatentKind, LrSchedule, OptimizerKind, PixelScale, ShapeKind, TrainMode
from src.app.domain.errors import CheckpointError, ConfigurationError, DataError, DimensionError, NumericError
from src.app.domain.value_objects import SweepSpec
from src.app.infra.checkpoint import checkpoint_load, checkpoint_save
from src.app.infra.image_io import emit_grid, load_image, load_image_dir, write_dataset
from src.app.infra.synth import synth_generate
from src.app.infra.tracking import make_tracker
from src.app.infra.uow import DirectoryArtifacts
from src.app.ml.config import DEFAULT_PRESET, PRESETS, preset
from src.app.ml.generators import DeformableGenerator
from src.app.services.analysis_service import (
    AnalysisService,
    apply_warp_external,
    covariance_table,
    interpolate_dimension,
    level_monotonicity,
    random_frozen_geometry,
    recombination_grid,
    reconstruction_error,
    top_response_dimensions,
    transfer_fine_tune,
    zero_warp_baseline,
)
from src.app.services.inference_service import UNSEEN_STEPS
from src.app.services.training_service import TrainingService
from src.app.worker.pool import ChunkedPool

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CHECKPOINT_NAME = "checkpoint"
VECTOR_ALIASES = {
    "app": LatentKind.APPEARANCE,
    "appearance": LatentKind.APPEARANCE,
    "geo": LatentKind.GEOMETRIC,
    "geometric": LatentKind.GEOMETRIC,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# parser
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output directory (default: $DGN_OUT_DIR or ./out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="inference worker cap (default: $DGN_THREADS)")
    p.add_argument("--log-level", default=None, help="logging level (default: $DGN_LOG_LEVEL)")


def _langevin_flags(p: argparse.ArgumentParser, steps: int) -> None:
    p.add_argument("--step-size", type=float, default=0.1, help="Langevin step size delta")
    p.add_argument("--langevin-steps", type=int, default=steps, help="Langevin rounds")
    p.add_argument("--step-size-final", type=float, default=None, help="anneal delta linearly to this value")
    p.add_argument("--no-noise", action="store_true", help="drift-only Langevin updates")


def _sweep_flags(p: argparse.ArgumentParser, vector: str) -> None:
    p.add_argument("--vector", choices=sorted(VECTOR_ALIASES), default=vector)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--sweep-steps", type=int, default=10)
    p.add_argument("--complementary-seed", type=int, default=None,
                   help="draw the fixed complementary latent (appearance for geo sweeps, geometry for app sweeps) "
                        "from N(0, I) with this seed; without it the complementary latent is held at zero")


def _train_flags(p: argparse.ArgumentParser, iters: int) -> None:
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-schedule", choices=[s.value for s in LrSchedule], default=LrSchedule.CONSTANT.value)
    p.add_argument("--lr-step", type=int, default=1000)
    p.add_argument("--lr-decay", type=float, default=0.5)
    p.add_argument("--optimizer", choices=[o.value for o in OptimizerKind], default=OptimizerKind.SGD.value)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--max-disp", type=float, default=8.0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--no-timing", action="store_true", help="write wall_ms = 0 for byte-identical reruns")
    _langevin_flags(p, steps=10)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dgn", description="Deformable generator: training, inference and disentanglement analyses")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="alternating back-propagation or VAE training")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", default=None, help="directory of lossless images")
    src.add_argument("--synth", type=int, default=None, help="train on N synthetic images instead")
    p.add_argument("--preset", choices=sorted(PRESETS), default=DEFAULT_PRESET)
    p.add_argument("--alpha", type=float, default=0.625)
    p.add_argument("--mode", choices=[m.value for m in TrainMode], default=TrainMode.ABP.value)
    p.add_argument("--gamma", type=float, default=10.0, help="sweep half-width recorded for later interpolation")
    p.add_argument("--zero-displacement", action="store_true", help="force the geometric generator to zero")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _train_flags(p, iters=100)

    p = sub.add_parser("synth", help="write a synthetic factor-labelled dataset")
    _common(p)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--shape", choices=[s.value for s in ShapeKind], default=ShapeKind.ELLIPSE.value)
    p.add_argument("--tx-levels", type=float, nargs="+", default=None,
                   help="discrete translation levels, cycled over the images, e.g. --tx-levels -6 -3 0 3 6")
    p.add_argument("--tx-range", type=float, nargs=2, default=(-4.0, 4.0))
    p.add_argument("--ty-range", type=float, nargs=2, default=(0.0, 0.0))
    p.add_argument("--scale-range", type=float, nargs=2, default=(1.0, 1.0))
    p.add_argument("--rotation-range", type=float, nargs=2, default=(0.0, 0.0))
    p.add_argument("--hue-range", type=float, nargs=2, default=(0.0, 1.0))
    p.add_argument("--brightness-range", type=float, nargs=2, default=(0.6, 1.0))

    p = sub.add_parser("infer", help="infer latents of unseen images")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    _langevin_flags(p, steps=UNSEEN_STEPS)

    p = sub.add_parser("interpolate", help="sweep one latent dimension")
    _common(p)
    p.add_argument("--ckpt", required=True)
    _sweep_flags(p, vector="geo")

    p = sub.add_parser("swap", help="recombine appearance of A with geometry of B")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-a", required=True)
    p.add_argument("--data-b", required=True)
    _langevin_flags(p, steps=UNSEEN_STEPS)

    p = sub.add_parser("covariance", help="covariance responses R^g, R^a against a factor")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factor", default=None)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--gamma", type=float, default=10.0)
    _langevin_flags(p, steps=UNSEEN_STEPS)

    p = sub.add_parser("reconstruct", help="held-out reconstruction error with the zero-warp baseline")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", choices=[s.value for s in PixelScale], default=PixelScale.BYTE.value)
    _langevin_flags(p, steps=UNSEEN_STEPS)

    p = sub.add_parser("transfer", help="fine-tune appearance with frozen geometry")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--heldout", default=None, help="compare against zero-warp and random-frozen baselines here")
    p.add_argument("--scale", choices=[s.value for s in PixelScale], default=PixelScale.BYTE.value)
    p.add_argument("--eval-steps", type=int, default=UNSEEN_STEPS)
    _train_flags(p, iters=100)

    p = sub.add_parser("warp-apply", help="apply learned deformations to an external image")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    _sweep_flags(p, vector="geo")

    return ap


# config
def _out_dir(args) -> Path:
    settings = get_settings()
    return Path(args.out or settings.OUT_DIR or "out")


def _langevin(args) -> LangevinConfig:
    return LangevinConfig.create(
        step_size=args.step_size,
        steps=args.langevin_steps,
        noise=not args.no_noise,
        seed=args.seed,
        step_size_final=args.step_size_final,
    )


def _train_config(args, mode: str = TrainMode.ABP.value, zero_displacement: bool = False) -> TrainConfig:
    return TrainConfig.create(
        iterations=args.iters,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lr_schedule=args.lr_schedule,
        lr_step=args.lr_step,
        lr_decay=args.lr_decay,
        optimizer=args.optimizer,
        langevin=_langevin(args),
        mode=mode,
        seed=args.seed,
        sigma=args.sigma,
        max_displacement=args.max_disp,
        dtype=args.dtype,
        zero_displacement=zero_displacement,
        log_every=args.log_every,
        checkpoint_every=args.checkpoint_every,
        record_timing=not args.no_timing,
    )


def _sweep(args) -> SweepSpec:
    return SweepSpec(
        vector=VECTOR_ALIASES[args.vector],
        dim=args.dim,
        gamma=args.gamma,
        steps=args.sweep_steps,
    )


def _emit_config(command: str, **fields: Any) -> None:
    line = json.dumps({"command": command, **fields}, sort_keys=True, default=str)
    print(f"effective-config: {line}", flush=True)


def _common_fields(args, out: Path, threads: int) -> dict:
    return {"out": str(out), "seed": args.seed, "threads": threads}


def _load(path: str) -> TrainResult:
    return checkpoint_load(path)


def _complementary(args, params) -> Optional[np.ndarray]:
    if args.complementary_seed is None:
        return None
    kind = VECTOR_ALIASES[args.vector]
    arch = params.architecture
    d = arch.d_g if kind == LatentKind.APPEARANCE else arch.d_a
    return np.random.default_rng(args.complementary_seed).standard_normal(d)


# commands
def cmd_train(args, out: Path, pool: ChunkedPool) -> None:
    config = _train_config(args, mode=args.mode, zero_displacement=args.zero_displacement)
    resume = _load(args.resume) if args.resume else None
    arch = resume.params.architecture if resume else preset(args.preset, alpha=args.alpha)
    _emit_config(
        "train",
        **_common_fields(args, out, pool.threads),
        data=args.data,
        synth=args.synth,
        preset=args.preset,
        gamma=args.gamma,
        resume=args.resume,
        architecture=arch.to_json_dict(),
        train=config.to_json_dict(),
    )

    if args.data:
        dataset = load_image_dir(args.data, arch.image_size)
    else:
        dataset = synth_generate(SynthSpec.create(count=args.synth or 64, image_size=arch.image_size, seed=args.seed))

    tracker = make_tracker(get_settings(), run_name=f"train-seed{args.seed}")
    artifacts = DirectoryArtifacts(out, fresh_metrics=resume is None, tracker=tracker)
    try:
        service = TrainingService(config, pool=pool, artifacts=artifacts)
        state = resume if resume is not None else service.initial_state(arch)
        state = service.train(dataset, state)
        artifacts.checkpoints.save(CHECKPOINT_NAME, state)
    finally:
        artifacts.close()


def cmd_synth(args, out: Path, pool: ChunkedPool) -> None:
    spec = SynthSpec.create(
        count=args.count,
        image_size=args.image_size,
        shape=args.shape,
        tx_levels=args.tx_levels,
        tx_range=tuple(args.tx_range),
        ty_range=tuple(args.ty_range),
        scale_range=tuple(args.scale_range),
        rotation_range=tuple(args.rotation_range),
        hue_range=tuple(args.hue_range),
        brightness_range=tuple(args.brightness_range),
        seed=args.seed,
    )
    _emit_config("synth", **_common_fields(args, out, pool.threads), spec=spec.to_json_dict())
    write_dataset(synth_generate(spec), out)


def cmd_infer(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    langevin = _langevin(args)
    _emit_config("infer", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, data=args.data,
                 langevin=langevin.to_json_dict())
    dataset = load_image_dir(args.data, state.params.architecture.image_size)
    service = AnalysisService(state.params, langevin, pool=pool, steps=args.langevin_steps)
    latents = service.infer(dataset)

    frame = pd.DataFrame(
        np.concatenate([latents.appearance, latents.geometric], axis=1),
        index=pd.Index(dataset.ids, name="id"),
        columns=[f"za_{i}" for i in range(latents.appearance.shape[1])]
        + [f"zg_{i}" for i in range(latents.geometric.shape[1])],
    )
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "latents.csv")
    recon = DeformableGenerator.for_params(state.params).model_forward(latents, state.params)
    emit_grid(list(recon), columns=min(len(dataset), 8), path=out / "reconstructions.png")


def cmd_interpolate(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    spec = _sweep(args)
    spec = SweepSpec(spec.vector, spec.dim, spec.gamma, spec.steps, complementary=_complementary(args, state.params))
    _emit_config("interpolate", **_common_fields(args, out, pool.threads), ckpt=args.ckpt,
                 vector=str(spec.vector), dim=spec.dim, gamma=spec.gamma, sweep_steps=spec.steps,
                 complementary_seed=args.complementary_seed)
    images = interpolate_dimension(state.params, spec)
    emit_grid(images, columns=len(images), path=out / "interpolate.png")


def cmd_swap(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    langevin = _langevin(args)
    _emit_config("swap", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, data_a=args.data_a,
                 data_b=args.data_b, langevin=langevin.to_json_dict())
    size = state.params.architecture.image_size
    a = load_image_dir(args.data_a, size)
    b = load_image_dir(args.data_b, size)
    service = AnalysisService(state.params, langevin, pool=pool, steps=args.langevin_steps)
    swapped = service.swap(a, b)
    emit_grid(list(a.images) + list(b.images) + swapped, columns=len(a), path=out / "swap.png")
    emit_grid(recombination_grid(state.params, service.infer(a)), columns=len(a), path=out / "recombination.png")


def cmd_covariance(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    langevin = _langevin(args)
    _emit_config("covariance", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, data=args.data,
                 factor=args.factor, top_k=args.top_k, gamma=args.gamma, langevin=langevin.to_json_dict())
    dataset = load_image_dir(args.data, state.params.architecture.image_size)
    service = AnalysisService(state.params, langevin, pool=pool, steps=args.langevin_steps)
    report = service.covariance(dataset, factor=args.factor)

    out.mkdir(parents=True, exist_ok=True)
    covariance_table(report).to_csv(out / "covariance.csv", index=False)
    top_g = top_response_dimensions(report.geometric, args.top_k)
    summary = {
        "factor": report.factor,
        "levels": report.levels.tolist(),
        "max_response_geometric": float(report.geometric.max()),
        "max_response_appearance": float(report.appearance.max()),
        "top_geometric_dims": top_g.tolist(),
        "top_appearance_dims": top_response_dimensions(report.appearance, args.top_k).tolist(),
        "top_geometric_monotonicity": level_monotonicity(report.level_means_geometric[:, top_g[0]], report.levels),
    }
    (out / "covariance.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    rows = []
    for dim in top_g:
        rows += interpolate_dimension(state.params, SweepSpec(LatentKind.GEOMETRIC, int(dim), args.gamma))
    emit_grid(rows, columns=len(rows) // len(top_g), path=out / "top_geometric.png")


def cmd_reconstruct(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    langevin = _langevin(args)
    _emit_config("reconstruct", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, data=args.data,
                 scale=args.scale, langevin=langevin.to_json_dict())
    dataset = load_image_dir(args.data, state.params.architecture.image_size)
    service = AnalysisService(state.params, langevin, pool=pool, steps=args.langevin_steps)
    table = service.reconstruction(dataset, PixelScale(args.scale))
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "reconstruction.csv", index=False)


def cmd_transfer(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    config = _train_config(args, mode=state.mode)
    _emit_config("transfer", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, data=args.data,
                 heldout=args.heldout, scale=args.scale, eval_steps=args.eval_steps, train=config.to_json_dict(),
                 freeze=[str(LatentKind.GEOMETRIC)])
    size = state.params.architecture.image_size
    target = load_image_dir(args.data, size)
    tuned = transfer_fine_tune(state.params, target, config, pool=pool)
    checkpoint_save(out / "transfer.dgn", tuned)

    if args.heldout:
        heldout = load_image_dir(args.heldout, size)
        ablation = transfer_fine_tune(random_frozen_geometry(state.params, args.seed + 1), target, config, pool=pool)
        scale = PixelScale(args.scale)
        rows = []
        for name, params in (
            ("transfer", tuned.params),
            ("zero_warp", zero_warp_baseline(tuned.params)),
            ("random_frozen_geometry", ablation.params),
        ):
            report = reconstruction_error(params, heldout, config.langevin, scale, args.eval_steps, pool=pool)
            rows.append({"model": name, **report.metadata()})
        pd.DataFrame(rows).to_csv(out / "reconstruction.csv", index=False)


def cmd_warp_apply(args, out: Path, pool: ChunkedPool) -> None:
    state = _load(args.ckpt)
    spec = _sweep(args)
    _emit_config("warp-apply", **_common_fields(args, out, pool.threads), ckpt=args.ckpt, image=args.image,
                 vector=str(spec.vector), dim=spec.dim, gamma=spec.gamma, sweep_steps=spec.steps)
    image = load_image(args.image)
    images = apply_warp_external(image, state.params, spec)
    emit_grid(images, columns=len(images), path=out / "warp.png")


COMMANDS = {
    "train": cmd_train,
    "synth": cmd_synth,
    "infer": cmd_infer,
    "interpolate": cmd_interpolate,
    "swap": cmd_swap,
    "covariance": cmd_covariance,
    "reconstruct": cmd_reconstruct,
    "transfer": cmd_transfer,
    "warp-apply": cmd_warp_apply,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help и --version
        return EXIT_OK if not e.code else EXIT_USAGE

    settings = get_settings()
    configure_logging(args.log_level or settings.LOG_LEVEL)
    threads = args.threads if args.threads is not None else settings.THREADS
    try:
        pool = ChunkedPool(threads=threads)
        COMMANDS[args.command](args, _out_dir(args), pool)
    except (ConfigurationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        log.error("numeric failure: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # неверные значения флагов (например, --threads 0)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
