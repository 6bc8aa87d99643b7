"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 file IO error, 3 invalid input data.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import dbn, evaluation, navmap, render, scene, synth, transfer
from .netpbm import write_pgm
from .utils import NavForecastError, ValidationError, atomic_write_text

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = text.split(",")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(values) != n:
        raise argparse.ArgumentTypeError(f"{what} must be {n} comma-separated numbers, got {text!r}")
    return values


def _start(text: str) -> tuple[float, ...]:
    return _floats(text, 4, "--start (x,y,omega,theta)")


def _goal(text: str) -> tuple[float, ...]:
    return _floats(text, 2, "--goal (x,y)")


def _labels(args, class_count: int | None = None) -> scene.SemanticGrid:
    count = class_count if class_count is not None else args.class_count
    return scene.read_label_grid(args.labels, count, args.cell_size)


def _add_label_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--labels", required=True, help="label grid (PGM or text grid)")
    p.add_argument("--class-count", type=int, help="number of label classes (PGM default: max label + 1)")
    p.add_argument("--cell-size", type=float, default=1.0, help="world units per cell for PGM labels")


def _add_sampler_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--strategy", choices=dbn.STRATEGIES, default="closest-to-goal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1, help="process-noise std per axis")
    p.add_argument("--lam", type=float, default=1.0, help="direction persistence")
    p.add_argument("--t-max", type=int, default=500)
    p.add_argument("--alpha-cap", type=float, default=dbn.DEFAULT_ALPHA_CAP)
    p.add_argument("--goal-radius", type=float, help="default: one patch side")
    p.add_argument("--unobserved", choices=("continue", "terminate"), default="continue")


def _sampler_config(args) -> dbn.PredictorConfig:
    return dbn.PredictorConfig(
        sigma=args.sigma,
        lam=args.lam,
        t_max=args.t_max,
        goal_radius=args.goal_radius,
        alpha_cap=args.alpha_cap,
        seed=args.seed,
        num_samples=args.samples,
        strategy=args.strategy,
        unobserved=args.unobserved,
    )


# ------------------------------------------------------------ commands


def cmd_build_map(args) -> None:
    grid = _labels(args)
    trajs = scene.read_trajectories(args.trajectories)
    cfg = navmap.BuilderConfig(args.stop_threshold, args.kappa0, args.sigma_floor)
    m = navmap.build_map(trajs, grid.patch_grid(args.patch_size), args.class_id, cfg)
    m.save(args.out)
    print(f"{args.out}: {int(m.observed.sum())} observed of {m.num_patches} patches")


def cmd_predict(args) -> None:
    m = navmap.NavigationMap.load(args.map)
    x0 = dbn.TargetState(*args.start)
    result = dbn.predict(x0, args.goal, m, _sampler_config(args))
    dbn.write_paths_csv(args.out, result)
    if args.overlay:
        grid = None
        if args.labels:
            grid = scene.read_label_grid(args.labels, args.class_count, m.grid.cell_size)
            if (grid.width, grid.height) != (m.grid.width, m.grid.height):
                raise ValidationError(f"{args.labels}: label grid size differs from the map")
        render.write_overlay(args.overlay, m, result, x0, grid)
    sel = result.selected
    print(f"{args.out}: selected path of {len(sel)} steps ({sel.termination}), score {sel.score:.4f}")


def cmd_transfer(args) -> None:
    index = transfer.DescriptorIndex.load(args.index)
    grid = _labels(args, args.class_count if args.class_count is not None else index.class_count)
    result = transfer.transfer(grid, index, args.k, args.w)
    result.navmap.save(args.out)
    if args.report:
        atomic_write_text(args.report, transfer.format_transfer_report(result, index))
    print(f"{args.out}: {result.navmap.num_patches} patches from {len(index)} indexed patches")


def read_scene_list(path: str | os.PathLike) -> list[tuple[str, str, str]]:
    """Lines of ``scene_id labels_path map_path``; paths are relative to the list file."""
    base = Path(path).parent
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 'scene_id labels map', got {len(fields)} fields")
            sid, labels, mp = fields
            out.append((sid, str(base / labels), str(base / mp)))
    if not out:
        raise ValidationError(f"{path}: no scenes listed")
    return out


def cmd_index(args) -> None:
    scenes = []
    for sid, labels, mp in read_scene_list(args.scenes):
        m = navmap.NavigationMap.load(mp)
        grid = scene.read_label_grid(labels, args.class_count, m.grid.cell_size)
        scenes.append((sid, grid, m))
    index = transfer.build_index(scenes, w=args.w, k=args.k)
    index.save(args.out)
    print(f"{args.out}: {len(index)} patches from {len(scenes)} scenes")


def cmd_eval(args) -> None:
    grid = _labels(args)
    trajs = scene.read_trajectories(args.trajectories)
    names = [n.strip() for n in args.predictors.split(",") if n.strip()]
    predictors = []
    for name in names:
        if name == "navmap":
            predictors.append(evaluation.NavmapPredictor(_sampler_config(args)))
        elif name == "linear":
            predictors.append(evaluation.LinearPredictor())
        else:
            raise ValidationError(f"unknown predictor {name!r}; expected navmap or linear")
    protocol = evaluation.BenchmarkProtocol(n_folds=args.folds, seed=args.seed)
    report = evaluation.run_benchmark(trajs, grid.patch_grid(args.patch_size), predictors, protocol)
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    report.save(args.out, csv_path)
    sys.stdout.write(report.table())
    for note in report.notes:
        print(f"note: {note}")


def cmd_heatmap(args) -> None:
    m = navmap.NavigationMap.load(args.map)
    navmap.write_heatmap(args.out, m, args.field)
    print(f"{args.out}: {args.field} heatmap {m.grid.width}x{m.grid.height}")


def cmd_synth(args) -> None:
    spec = synth.SynthSpec.load(args.spec)
    result = synth.generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if result.grid.class_count > 256:
        raise ValidationError("label values must fit in 8 bits for PGM output")
    write_pgm(out / "labels.pgm", result.grid.labels.astype("uint8"))
    scene.write_text_grid(out / "labels.txt", result.grid)
    scene.write_trajectories(out / "trajectories.csv", result.trajectories)
    result.generator.save(out / "generator_map.json")
    atomic_write_text(out / "spec.json", spec.to_json())
    print(f"{out}: {len(result.trajectories)} trajectories on a {spec.width}x{spec.height} {spec.layout}")


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="navforecast", description="Navigation-map trajectory forecasting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-map", help="learn a navigation map from trajectories")
    p.add_argument("--trajectories", required=True)
    _add_label_options(p)
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--patch-size", type=int, default=scene.DEFAULT_PATCH_SIZE)
    p.add_argument("--stop-threshold", type=float, default=0.05)
    p.add_argument("--kappa0", type=float, default=0.2)
    p.add_argument("--sigma-floor", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("predict", help="sample future paths from a map")
    p.add_argument("--map", required=True)
    p.add_argument("--start", type=_start, required=True, help="x,y,omega,theta")
    p.add_argument("--goal", type=_goal, help="x,y")
    _add_sampler_options(p)
    p.add_argument("--overlay", help="optional PPM with the sampled paths drawn on the scene")
    p.add_argument("--labels", help="label grid used as the overlay background (default: rho heatmap)")
    p.add_argument("--class-count", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transfer", help="build a map for an unseen scene from an index")
    p.add_argument("--index", required=True)
    _add_label_options(p)
    p.add_argument("--k", type=int, help="neighbours (default: the index's k)")
    p.add_argument("--w", type=float, help="global/local blend (default: the index's w)")
    p.add_argument("--report", help="optional CSV of the neighbours used")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("index", help="index trained scenes for transfer")
    p.add_argument("--scenes", required=True, help="list file: scene_id labels map per line")
    p.add_argument("--w", type=float, default=transfer.DEFAULT_W)
    p.add_argument("--k", type=int, default=transfer.DEFAULT_K)
    p.add_argument("--class-count", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("eval", help="cross-validated benchmark")
    p.add_argument("--trajectories", required=True)
    _add_label_options(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--predictors", default="navmap,linear")
    p.add_argument("--patch-size", type=int, default=scene.DEFAULT_PATCH_SIZE)
    _add_sampler_options(p)
    p.add_argument("--csv", help="per-trajectory CSV (default: OUT with a .csv suffix)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render rho or xi as a PGM")
    p.add_argument("--map", required=True)
    p.add_argument("--field", choices=("rho", "xi"), default="rho")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("synth", help="generate a synthetic scene and trajectories")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    try:
        args.func(args)
    except NavForecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
