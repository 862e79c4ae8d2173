"""Command-line entry point.

Subcommands: simulate, train, classify, project, predict, evaluate.
Exit status is 0 on success, 1 for input or validation errors and 2 for
numerical failures. Any flag may also come from a JSON ``--config`` file
whose keys are flag names (dashes or underscores); the command line wins.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cohort import CohortConfig, ConfigError, generate_cohort
from .dpllvm import NumericalError, OutOfDistributionError, classify, embed_out_of_sample
from .evaluation import PipelineConfig, kfold_evaluate, train_manifold
from .io import FileFormatError, read_cohort, read_model, read_spine, write_cohort, write_json, write_model, write_spine, write_text_atomic
from .metrics import clinical_parameters, main_cobb
from .projection import KernelConfig, nw_project_details
from .spine import MODES, to_feature_vector
from .transport import predict_patient

log = logging.getLogger("spinemorph")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
REQUIRED = {
    "simulate": ["out"],
    "train": ["cohort", "out"],
    "classify": ["model", "spine"],
    "project": ["model", "spine"],
    "predict": ["model", "baseline", "flex", "months", "out"],
    "evaluate": ["cohort", "out"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _pair(kind):
    def parse(text: str):
        vals = [kind(v) for v in str(text).split(",")]
        if len(vals) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
        return tuple(vals)

    return parse


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file supplying any of these flags")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="shape_poses", help="feature mode (default shape_poses)")
    p.add_argument("--dim", type=int, default=8, help="latent dimension d (default 8)")
    p.add_argument("--k", type=int, default=10, help="graph neighbourhood size K (default 10)")
    p.add_argument("--omega-w", type=float, default=0.3, help="within-class weight (default 0.3)")
    p.add_argument("--omega-b", type=float, default=0.7, help="between-class weight (default 0.7)")
    p.add_argument("--max-iters", type=int, default=200, help="EM iteration cap (default 200)")
    p.add_argument("--tol", type=float, default=1e-6, help="relative ELBO change that stops EM (default 1e-6)")


def _curve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-neighbors", type=int, default=10, help="anchors used by the kernel projection (default 10)")
    p.add_argument("--kd", type=int, default=25, help="curve nodes K_d (default 25)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="velocity penalty (default 0.1)")
    p.add_argument("--mu", type=float, default=1.0, help="acceleration penalty (default 1.0)")
    p.add_argument("--tau", type=float, default=0.0, help="time shift of the warp in months (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spinemorph", description="Discriminant spine manifolds and progression prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic longitudinal cohort")
    _common(p)
    p.add_argument("--patients", type=int, default=120, help="number of patients (default 120)")
    p.add_argument("--fraction-progressive", type=float, default=0.4, help="share of progressive patients")
    p.add_argument("--visits", type=_pair(int), default=(3, 4), help="visit count range MIN,MAX (default 3,4)")
    p.add_argument("--cobb-range", type=_pair(float), default=(11.0, 40.0), help="baseline Cobb range in degrees")
    p.add_argument("--rate-range", type=_pair(float), default=(5.0, 12.0), help="progression rate range, deg/year")
    p.add_argument("--noise", type=float, default=0.5, help="landmark noise std in mm (default 0.5)")
    p.add_argument("--risk-signature", type=float, default=1.0, help="strength of the baseline progression signature")
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("train", help="fit the latent manifold on a cohort")
    _common(p)
    _model_flags(p)
    p.add_argument("--cohort", type=Path, help="cohort directory or manifest")
    p.add_argument("--visits", choices=("all", "baseline"), default="all", help="visits used as anchors")
    p.add_argument("--k-neighbors", type=int, default=10, help="anchors for the reconstruction diagnostic")
    p.add_argument("--out", type=Path, help="model file to write")
    p.add_argument("--report", type=Path, help="directory for the ELBO trace CSV and latent plot")

    p = sub.add_parser("classify", help="label baseline spines as progressive or not")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--spine", type=Path, nargs="+", help="spine files")
    p.add_argument("--out", type=Path, help="CSV of labels and scores (stdout if omitted)")

    p = sub.add_parser("project", help="kernel projection of a spine into the latent space")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--spine", type=Path)
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--bandwidth-h", type=float, help="fixed ambient bandwidth (disables automatic choice)")
    p.add_argument("--bandwidth-g", type=float, help="fixed latent bandwidth (disables automatic choice)")
    p.add_argument("--metric", choices=("articulated", "euclidean"), default="articulated")
    p.add_argument("--progressive-only", action="store_true", help="restrict to progressive baseline anchors")
    p.add_argument("--out", type=Path, help="JSON result (stdout if omitted)")

    p = sub.add_parser("predict", help="predict future spines from a baseline")
    _common(p)
    _curve_flags(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--baseline", type=Path, help="baseline spine file")
    p.add_argument("--flex", type=float, help="flexibility ratio of the patient (required)")
    p.add_argument("--months", type=_floats, help="comma-separated target months")
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("evaluate", help="patient-level k-fold evaluation")
    _common(p)
    _model_flags(p)
    _curve_flags(p)
    p.add_argument("--cohort", type=Path)
    p.add_argument("--folds", type=int, default=9, help="number of folds (default 9)")
    p.add_argument("--no-predict", action="store_true", help="skip the prediction part")
    p.add_argument("--out", type=Path, help="output directory")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "a subcommand is required")
    if getattr(args, "config", None) is not None:
        args = _merge_config(parser, argv, args)
    needed = REQUIRED[args.command]
    missing = [m for m in needed if getattr(args, m, None) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required flags: {', '.join('--' + m for m in missing)}")
    return args


def _merge_config(parser, argv, args) -> argparse.Namespace:
    """Use the JSON config as defaults for the subcommand and parse again."""
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest: a for a in subparser._actions}  # noqa: SLF001
    defaults = {}
    for key, value in doc.items():
        dest = "lam" if key == "lambda" else key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        action = known[dest]
        try:
            if isinstance(value, list) and action.nargs != "+":
                value = ",".join(str(v) for v in value)
            if action.nargs == "+":
                value = [action.type(v) if action.type else v for v in (value if isinstance(value, list) else [value])]
            elif action.type is not None and value is not None and not isinstance(value, bool):
                value = action.type(value if isinstance(value, str) or action.type in (int, float) else str(value))
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"bad value for config key {key!r}: {exc}")
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _pipeline(args) -> PipelineConfig:
    return PipelineConfig(
        mode=getattr(args, "mode", "shape_poses"),
        latent_dim=getattr(args, "dim", 8),
        k=getattr(args, "k", 10),
        omega_w=getattr(args, "omega_w", 0.3),
        omega_b=getattr(args, "omega_b", 0.7),
        max_iters=getattr(args, "max_iters", 200),
        elbo_rel_tol=getattr(args, "tol", 1e-6),
        k_neighbors=getattr(args, "k_neighbors", 10),
        k_d=getattr(args, "kd", 25),
        lam=getattr(args, "lam", 0.1),
        mu=getattr(args, "mu", 1.0),
        tau=getattr(args, "tau", 0.0),
        predict=not getattr(args, "no_predict", False),
        seed=args.seed,
    )


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .plotting import cobb_trajectories_figure

    cfg = CohortConfig(
        n_patients=args.patients,
        fraction_progressive=args.fraction_progressive,
        visits_per_patient=tuple(args.visits),
        baseline_cobb_range_deg=tuple(args.cobb_range),
        progression_rate_range_deg_per_year=tuple(args.rate_range),
        landmark_noise_mm=args.noise,
        seed=args.seed,
        risk_signature=args.risk_signature,
    )
    cohort = generate_cohort(cfg)
    write_cohort(args.out, cohort)
    rows, traj = [], []
    for p in cohort.patients:
        cobbs = [main_cobb(s) for _, s in p.visits]
        rows.append([p.patient_id, p.true_label, p.deformity_class, p.flexibility_ratio, len(p.visits), cobbs[0], cobbs[-1]])
        traj.append((p.true_label, p.times, cobbs))
    header = ["patient_id", "label", "deformity_class", "flexibility_ratio", "visits", "cobb_first_deg", "cobb_last_deg"]
    write_text_atomic(Path(args.out) / "patients.csv", _csv(rows, header))
    cobb_trajectories_figure(traj, Path(args.out) / "cobb_trajectories.svg")
    log.info("wrote %d patients to %s", len(cohort.patients), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cohort = read_cohort(args.cohort)
    m = train_manifold(cohort.patients, _pipeline(args), visits=args.visits)
    write_model(args.out, m)
    if args.report is not None:
        from .plotting import latent_figure

        trace = [[i, v] for i, v in enumerate(m.elbo_trace)]
        write_text_atomic(Path(args.report) / "elbo_trace.csv", _csv(trace, ["iteration", "elbo"]))
        latent_figure(m.latent_mean, m.labels, Path(args.report) / "latent.svg")
    log.info("trained on %d anchors, %d EM iterations", m.n, len(m.elbo_trace))
    return EXIT_OK


def cmd_classify(args) -> int:
    m = read_model(args.model)
    rows = []
    for path in args.spine:
        spine, meta = read_spine(path)
        x, var = embed_out_of_sample(m, to_feature_vector(spine, m.mode))
        label, score = classify(m, x)
        rows.append([Path(path).name, meta["patient_id"], label, score, float(np.mean(var))])
    text = _csv(rows, ["file", "patient_id", "label", "score", "latent_variance"])
    if args.out is None:
        sys.stdout.write(text)
    else:
        write_text_atomic(args.out, text)
    return EXIT_OK


def cmd_project(args) -> int:
    m = read_model(args.model)
    spine, _ = read_spine(args.spine)
    auto = args.bandwidth_h is None and args.bandwidth_g is None
    cfg = KernelConfig(args.k_neighbors, args.bandwidth_h, args.bandwidth_g, auto, args.metric)
    proj = nw_project_details(m, to_feature_vector(spine, m.mode), cfg, args.progressive_only)
    doc = {
        "latent": proj.x,
        "neighbors": [{"patient_id": m.anchors[j].patient_id, "visit_time_months": m.anchors[j].visit_time,
                       "label": m.anchors[j].label, "weight": w} for j, w in zip(proj.neighbors, proj.weights)],
        "bandwidth_h": proj.bandwidth_h,
        "bandwidth_g": proj.bandwidth_g,
        "iterations": proj.iterations,
        "converged": proj.converged,
    }
    if args.out is None:
        from .io import dumps

        sys.stdout.write(dumps(doc))
    else:
        write_json(args.out, doc)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .plotting import prediction_figure

    m = read_model(args.model)
    baseline, meta = read_spine(args.baseline)
    cfg = _pipeline(args).prediction()
    pp = predict_patient(m, baseline, args.flex, args.months, cfg)
    out = Path(args.out)
    pid = meta["patient_id"] or "patient"
    files, rows = [], []
    for t, spine in zip(pp.result.times, pp.result.spines):
        name = f"{pid}_m{t:g}.spine.json"
        write_spine(out / name, spine, patient_id=pid, visit_time=t, label="unknown", flexibility_ratio=args.flex)
        files.append(name)
        cp = clinical_parameters(spine)
        rows.append([t, cp.main_cobb, cp.cobb_pt, cp.cobb_mt, cp.cobb_l, cp.kyphosis_t4_t12, cp.lordosis_l1_l5])
    bundle = pp.bundle
    report = {
        "baseline": Path(args.baseline).name,
        "flexibility_ratio": args.flex,
        "months": pp.result.times,
        "warped_months": pp.result.warped_times,
        "files": files,
        "latent_query": pp.x_q,
        "latent_trace": pp.result.latents,
        "neighbors": [{"patient_id": p, "weight": w} for p, w in zip(bundle.patient_ids, bundle.weights)],
        "projection_neighbors": [{"patient_id": m.anchors[j].patient_id, "weight": w}
                                 for j, w in zip(pp.projection.neighbors, pp.projection.weights)],
        "time_warp": {"c": pp.warp.c, "tau": pp.warp.tau, "t0": pp.warp.t0},
        "space_shift": pp.shift.v,
        "noise_scale": {
            "standardized_feature_std": float(1.0 / np.sqrt(m.scale)),
            "self_reconstruction_rms_mm": m.diagnostics.get("self_reconstruction_rms"),
        },
        "warnings": pp.result.warnings,
    }
    write_json(out / "prediction_report.json", report)
    header = ["month", "main_cobb_deg", "cobb_pt_deg", "cobb_mt_deg", "cobb_l_deg", "kyphosis_deg", "lordosis_deg"]
    write_text_atomic(out / "prediction.csv", _csv(rows, header))
    prediction_figure(pp.result.times, [r[1] for r in rows], out / "prediction_cobb.svg", title=pid)
    for w in pp.result.warnings:
        log.warning(w)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .plotting import error_bar_figure, roc_figure

    cohort = read_cohort(args.cohort)
    res = kfold_evaluate(cohort, _pipeline(args), args.folds)
    out = Path(args.out)
    write_json(out / "evaluation_report.json", res.as_dict())
    r = res.report
    write_text_atomic(out / "roc.csv", _csv(r.roc_points, ["fpr", "tpr"]))
    roc_figure(r.roc_points, out / "roc.svg", r.auc)
    if res.predictions:
        rows = [[p.patient_id, p.fold, p.month, p.cobb_true, p.cobb_pred, p.ae_deg, p.mod_mm, p.mcd_mm,
                 p.landmark_rms_mm] for p in res.predictions]
        header = ["patient_id", "fold", "month", "cobb_true_deg", "cobb_pred_deg", "ae_deg", "mod_mm", "mcd_mm",
                  "landmark_rms_mm"]
        write_text_atomic(out / "predictions.csv", _csv(rows, header))
        summary = res.prediction_summary()
        error_bar_figure({f"{k} mo": v["cobb_error"] for k, v in summary.items()}, out / "cobb_error.svg",
                         "absolute Cobb error (deg)")
    sys.stdout.write(
        f"accuracy {r.accuracy:.1f}%  sensitivity {r.sensitivity:.1f}%  specificity {r.specificity:.1f}%  AUC {r.auc:.3f}\n"
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "classify": cmd_classify,
    "project": cmd_project,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_INPUT
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (ValueError, ConfigError, FileFormatError, OutOfDistributionError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
