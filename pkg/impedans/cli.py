"""
Command-line front end.

    impedans synth   write an oracle dataset (optionally noisy, plus its clean twin)
    impedans infer   train on a dataset and write the result bundle and CSVs
    impedans eval    score a result against a reference spectrum
    impedans sweep   run (or --defer to the queue) a grid of synth/infer/eval cells
    impedans worker  process deferred sweep cells

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

import argparse
import asyncio
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from impedans.config import (
    PRESETS,
    RunConfig,
    Settings,
    apply_overrides,
    apply_preset,
    get_settings,
    load_run_config,
)
from impedans.errors import GridMismatchError, ImpedansError
from impedans.io import (
    read_model,
    read_reference_spectrum,
    write_convergence_csv,
    write_csv,
    write_json_model,
    write_spectrum_csv,
)
from impedans.materials import absorption_at_angle
from impedans.metrics import (
    EvaluationSet,
    absorption_error_per_frequency,
    build_evaluation_set,
    mae_alpha,
    mae_zeta,
    normalized_mae_zeta,
    spearman_correlation,
)
from impedans.oracle import add_complex_noise, build_sampling_domain, synthesize_dataset
from impedans.schemas import (
    DatasetFile,
    EvaluationFieldFile,
    ResultBundle,
    from_pairs,
    predict_field,
    to_pairs,
)
from impedans.tracing import flush_tracing, setup_tracing, trace_stage
from impedans.trainer import configure_torch, train

logger = logging.getLogger("impedans")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EVAL_HEADER = (
    "frequency [Hz]",
    "zeta_re [-]",
    "zeta_im [-]",
    "zeta_ref_re [-]",
    "zeta_ref_im [-]",
    "abs_err_zeta [-]",
    "abs_err_alpha [-]",
    "complexity [Pa]",
    "mae_p [Pa]",
    "spearman_complexity_mae_p [-]",
)


def _snr(value: str) -> float:
    snr = float(value)
    if math.isnan(snr):
        raise argparse.ArgumentTypeError("SNR must be a number or inf")
    return snr


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if getattr(args, "preset", None):
        config = apply_preset(config, args.preset)
    overrides = {
        "seeds.network": getattr(args, "seed", None),
        "seeds.sampling": getattr(args, "seed", None),
        "seeds.noise": getattr(args, "seed", None),
        "noise.snr_db": getattr(args, "snr", None),
    }
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        overrides["budget.mode"] = "fixed"
        overrides["budget.epochs"] = epochs
    return apply_overrides(config, overrides)


def _output(args: argparse.Namespace, settings: Settings, default: str) -> Path:
    return Path(args.out) if args.out else settings.output_dir / default


def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    config = _resolve_config(args)
    out = _output(args, settings, "dataset.json")
    with trace_stage("synth", material=config.material.kind, excitation=config.excitation.kind):
        clean = synthesize_dataset(config)
        snr = config.noise.snr_db
        if snr is None:
            write_json_model(out, DatasetFile.from_dataset(clean))
        else:
            noisy = add_complex_noise(clean, snr, seed=config.seeds.noise)
            write_json_model(out, DatasetFile.from_dataset(noisy))
            clean_out = out.with_name(f"{out.stem}.clean{out.suffix}")
            write_json_model(clean_out, DatasetFile.from_dataset(clean))
            logger.info(f"Wrote clean twin {clean_out}")

        if args.eval_field:
            evaluation = build_evaluation_set(clean.geometry, clean.frequencies, config)
            write_json_model(
                Path(args.eval_field),
                EvaluationFieldFile(
                    frequencies_hz=evaluation.frequencies.tolist(),
                    points=evaluation.points.tolist(),
                    reference_pressure=to_pairs(evaluation.reference_pressure),
                    provenance=clean.provenance,
                ),
            )
            logger.info(f"Wrote evaluation field {args.eval_field}")
    logger.info(f"Wrote dataset {out}")
    return 0


def cmd_infer(args: argparse.Namespace, settings: Settings) -> int:
    config = _resolve_config(args)
    out_dir = _output(args, settings, "infer")
    dataset = read_model(Path(args.dataset), DatasetFile).to_dataset()
    configure_torch(settings, config.execution)

    with trace_stage("infer", dataset=str(args.dataset)):
        domain = build_sampling_domain(
            dataset.geometry,
            n_volume=config.domain.n_volume,
            boundary_grid=config.domain.boundary_grid,
            ceiling_margin=config.domain.ceiling_margin,
            lateral_margin=config.domain.lateral_margin,
            seed=config.seeds.sampling,
        )
        result = train(dataset, domain, config, reference=dataset.reference_zeta)
        bundle = ResultBundle.from_result(result, dataset.provenance)
        write_json_model(out_dir / "result.json", bundle)
        write_spectrum_csv(out_dir / "spectrum.csv", bundle)
        write_convergence_csv(out_dir / "convergence.csv", bundle)
    logger.info(f"Wrote result bundle and CSVs to {out_dir}")
    return 0


def _aligned(result_freqs, other_freqs, what: str) -> None:
    result_freqs = np.asarray(result_freqs, dtype=float)
    other_freqs = np.asarray(other_freqs, dtype=float)
    if result_freqs.shape != other_freqs.shape or not np.allclose(result_freqs, other_freqs, rtol=1e-9, atol=0):
        raise GridMismatchError(
            f"Result has {len(result_freqs)} bins but {what} has {len(other_freqs)} "
            "or different frequencies; interpolation is not supported"
        )


def evaluate_bundle(
    bundle: ResultBundle,
    reference_freqs,
    reference_zeta,
    evaluation: Optional[EvaluationSet] = None,
) -> tuple[list[list], dict[str, float]]:
    """Per-frequency rows plus a summary dict for one result."""
    _aligned(bundle.frequencies_hz, reference_freqs, "the reference")
    zeta = from_pairs(bundle.zeta)
    reference_zeta = np.asarray(reference_zeta, dtype=complex)
    delta = zeta - reference_zeta
    per_zeta = (np.abs(delta.real) + np.abs(delta.imag)) / 2
    per_alpha = absorption_error_per_frequency(zeta, reference_zeta)

    complexity = mae_p = [None] * len(zeta)
    summary = {
        "mae_alpha": mae_alpha(absorption_at_angle(zeta), absorption_at_angle(reference_zeta)),
        "mae_zeta": mae_zeta(zeta, reference_zeta),
        "normalized_mae_zeta": normalized_mae_zeta(zeta, reference_zeta),
    }
    if evaluation is not None:
        _aligned(bundle.frequencies_hz, evaluation.frequencies, "the evaluation field")
        complexity = evaluation.complexity()
        mae_p = evaluation.pressure_errors(predict_field(bundle, evaluation.points))
        summary["mae_p"] = float(np.mean(mae_p))
        summary["spearman_complexity_mae_p"] = spearman_correlation(complexity, mae_p)

    rows = [
        [f, z.real, z.imag, r.real, r.imag, ez, ea, c, p, None]
        for f, z, r, ez, ea, c, p in zip(
            bundle.frequencies_hz, zeta, reference_zeta, per_zeta, per_alpha, complexity, mae_p
        )
    ]
    return rows, summary


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    out = _output(args, settings, "metrics.csv")
    bundle = read_model(Path(args.result), ResultBundle)
    reference_freqs, reference_zeta = read_reference_spectrum(Path(args.reference))
    evaluation = None
    if args.eval_field:
        field_file = read_model(Path(args.eval_field), EvaluationFieldFile)
        evaluation = EvaluationSet(
            frequencies=np.asarray(field_file.frequencies_hz),
            points=np.asarray(field_file.points),
            reference_pressure=from_pairs(field_file.reference_pressure),
        )

    with trace_stage("eval", result=str(args.result)):
        rows, summary = evaluate_bundle(bundle, reference_freqs, reference_zeta, evaluation)
        summary_row = [
            "summary", None, None, None, None,
            summary["mae_zeta"], summary["mae_alpha"], None,
            summary.get("mae_p"), summary.get("spearman_complexity_mae_p"),
        ]
        write_csv(out, EVAL_HEADER, [*rows, summary_row])
    logger.info(
        f"MAE_alpha={summary['mae_alpha']:.4f}, MAE_zeta={summary['mae_zeta']:.4f} "
        f"(normalized {summary['normalized_mae_zeta']:.4f}); wrote {out}"
    )
    if "spearman_complexity_mae_p" in summary:
        logger.info(f"Spearman(C, MAE_p) = {summary['spearman_complexity_mae_p']:.3f}")
    return 0


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    from impedans.sweep import load_grid, run_sweep

    config = _resolve_config(args)
    grid = load_grid(Path(args.grid) if args.grid else None)
    out_dir = _output(args, settings, "sweep")
    if args.defer:
        from impedans.queue import defer_sweep

        job_ids = asyncio.run(defer_sweep(config, grid, out_dir))
        logger.info(f"Deferred {len(job_ids)} cells; rerun without --defer to collect summary.csv")
        return 0
    configure_torch(settings, config.execution)
    run_sweep(config, grid, out_dir)
    return 0


def cmd_worker(args: argparse.Namespace, settings: Settings) -> int:
    from impedans.queue import run_worker

    try:
        asyncio.run(run_worker(concurrency=args.concurrency, wait=not args.once))
    except KeyboardInterrupt:
        logger.info("Worker stopped by user")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impedans", description="Surface impedance inference from two-layer array pressures"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool = True) -> None:
        p.add_argument("--config", type=Path, help="TOML run config")
        p.add_argument("--out", help="Output path (defaults under IMPEDANS_OUTPUT_DIR)")
        if seed:
            p.add_argument("--seed", type=int, help="Seed for network, sampling and noise")

    synth = sub.add_parser("synth", help="Write an oracle dataset")
    common(synth)
    synth.add_argument("--preset", choices=sorted(PRESETS), help="Material and frequency preset")
    synth.add_argument("--snr", type=_snr, help="Add noise at this SNR (dB); also writes the clean twin")
    synth.add_argument("--eval-field", help="Also write an evaluation-set field file here")
    synth.set_defaults(handler=cmd_synth)

    infer = sub.add_parser("infer", help="Infer the impedance spectrum of a dataset")
    infer.add_argument("dataset", help="Dataset JSON")
    common(infer)
    infer.add_argument("--epochs", type=int, help="Fixed epoch budget (disables adaptive budgeting)")
    infer.set_defaults(handler=cmd_infer)

    evaluate = sub.add_parser("eval", help="Score a result bundle")
    evaluate.add_argument("result", help="Result bundle JSON")
    evaluate.add_argument("--reference", required=True, help="Reference spectrum or dataset with reference_zeta")
    evaluate.add_argument("--eval-field", help="Evaluation-set field file for MAE_p and complexity")
    evaluate.add_argument("--out", help="Metrics CSV path")
    evaluate.set_defaults(handler=cmd_eval)

    sweep = sub.add_parser("sweep", help="Run a grid of synth/infer/eval cells")
    common(sweep)
    sweep.add_argument("--grid", help="TOML grid with d1, d2, array, snr_db, offset lists")
    sweep.add_argument("--epochs", type=int, help="Fixed epoch budget for every cell")
    sweep.add_argument("--defer", action="store_true", help="Enqueue cells for workers instead of running them")
    sweep.set_defaults(handler=cmd_sweep)

    worker = sub.add_parser("worker", help="Process deferred sweep cells")
    worker.add_argument("--concurrency", type=int, help="Concurrent cells (default IMPEDANS_WORKER_CONCURRENCY)")
    worker.add_argument("--once", action="store_true", help="Exit when the queue is empty")
    worker.set_defaults(handler=cmd_worker)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(level=settings.log_level.upper(), format=LOG_FORMAT)
    setup_tracing(settings=settings)
    try:
        return args.handler(args, settings)
    except ImpedansError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 1
    finally:
        flush_tracing()


if __name__ == "__main__":
    sys.exit(main())
