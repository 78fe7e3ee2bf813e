"""Command-line frontend.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 bijectivity
stall (the last valid map is still written).
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import apps, lsdem, meshkit, metrics, qcorrect, sdem, sphereconf
from .meshkit import MeshError, SolverError
from .metrics import MetricsReport

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_STALL = 4

def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spheredem",
        description=(
            "Density-equalizing spherical parameterization of genus-0 "
            "closed triangle meshes"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("conformal", help="spherical conformal parameterization")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("report")
    p.set_defaults(func=cmd_conformal)

    p = sub.add_parser("sdem", help="spherical density-equalizing map")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("report")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--population", help="CSV with face_index,population rows")
    group.add_argument(
        "--area-preserving",
        action="store_true",
        help="use the input face areas as the population",
    )
    _add_flow_flags(p, dt=0.1)
    p.set_defaults(func=cmd_sdem)

    p = sub.add_parser("lsdem", help="landmark-aligned density-equalizing map")
    p.add_argument("input")
    p.add_argument("population", help="CSV with face_index,population rows")
    p.add_argument("landmarks", help="CSV with vertex_index,qx,qy,qz rows")
    p.add_argument("output")
    p.add_argument("report")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=5.0)
    _add_flow_flags(p, dt=0.01)
    p.set_defaults(func=cmd_lsdem)

    p = sub.add_parser("remesh", help="uniform remeshing through the sphere")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--vertices", type=int, required=True)
    p.add_argument(
        "--boost",
        nargs=2,
        metavar=("FACE_LIST", "SCALE"),
        help="comma-separated face indices and a population scale factor",
    )
    _add_flow_flags(p, dt=0.1)
    p.set_defaults(func=cmd_remesh)

    p = sub.add_parser("register", help="register mesh A onto mesh B")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    p.add_argument("landmarks_a")
    p.add_argument("landmarks_b")
    p.add_argument("output")
    _add_flow_flags(p, dt=0.01)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("cartogram", help="region-population cartogram on the sphere")
    p.add_argument("input")
    p.add_argument("labels", help="CSV with face_index,region_id rows (0 = sea)")
    p.add_argument("populations", help="CSV with region_id,population rows")
    p.add_argument("output")
    p.add_argument("report")
    _add_flow_flags(p, dt=0.1)
    p.set_defaults(func=cmd_cartogram)
    return parser

def _add_flow_flags(p, dt):
    p.add_argument("--dt", type=float, default=dt)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="reserved; unused")

def _write_map(path, mesh, smap):
    meshkit.save_obj(path, smap.positions, mesh.faces)

def _write_report(path, report):
    Path(path).write_text(report.to_json() + "\n")

def _write_trace(report_path, trace):
    path = Path(report_path).with_suffix(".trace.jsonl")
    import json

    with open(path, "w") as fh:
        for row in trace.rows():
            fh.write(json.dumps(row) + "\n")

def cmd_conformal(args):
    mesh = meshkit.load_mesh(args.input)
    start = time.perf_counter()
    smap = sphereconf.initial_conformal_map(mesh)
    elapsed = time.perf_counter() - start

    d_area = np.abs(metrics.logged_area_ratio(mesh, smap))
    rho = sdem.recouple_density(mesh, smap.positions, mesh._face_areas.copy())
    var = metrics.normalized_density_variance(rho.vertex_density)
    report = MetricsReport(
        meshName=Path(args.input).name,
        faceCount=mesh.num_faces,
        wallTime=elapsed,
        varInitial=var,
        varFinal=var,
        dAreaMeanInitial=float(d_area.mean()),
        dAreaSDInitial=float(d_area.std()),
        dAreaMeanFinal=float(d_area.mean()),
        dAreaSDFinal=float(d_area.std()),
        muMean=metrics.beltrami_stats(mesh, smap).mean,
        flipCount=qcorrect.count_flips(mesh, smap),
    )
    _write_map(args.output, mesh, smap)
    _write_report(args.report, report)
    return EXIT_OK

def _flow_reports(mesh, population, f0, final, elapsed, name, landmarks=None):
    d0 = np.abs(metrics.logged_area_ratio(mesh, f0))
    d1 = np.abs(metrics.logged_area_ratio(mesh, final))
    rho0 = sdem.recouple_density(mesh, f0.positions, population)
    rho1 = sdem.recouple_density(mesh, final.positions, population)
    report = MetricsReport(
        meshName=name,
        faceCount=mesh.num_faces,
        wallTime=elapsed,
        varInitial=metrics.normalized_density_variance(rho0.vertex_density),
        varFinal=metrics.normalized_density_variance(rho1.vertex_density),
        dAreaMeanInitial=float(d0.mean()),
        dAreaSDInitial=float(d0.std()),
        dAreaMeanFinal=float(d1.mean()),
        dAreaSDFinal=float(d1.std()),
        muMean=metrics.beltrami_stats(mesh, final, reference=f0).mean,
        flipCount=qcorrect.count_flips(mesh, final),
    )
    if landmarks is not None:
        report.landmarkErrorInitial = metrics.landmark_error(f0, landmarks)
        report.landmarkErrorFinal = metrics.landmark_error(final, landmarks)
    return report

def cmd_sdem(args):
    mesh = meshkit.load_mesh(args.input)
    if args.area_preserving:
        population = mesh._face_areas.copy()
    else:
        population = sdem.load_population_csv(args.population, mesh.num_faces)
    cfg = sdem.SdemConfig(dt=args.dt, eps=args.eps, max_iter=args.max_iter)

    start = time.perf_counter()
    f0 = sphereconf.initial_conformal_map(mesh)
    final, trace = sdem.sdem_run(mesh, population, f0, cfg)
    elapsed = time.perf_counter() - start

    report = _flow_reports(mesh, population, f0, final, elapsed, Path(args.input).name)
    _write_map(args.output, mesh, final)
    _write_report(args.report, report)
    _write_trace(args.report, trace)
    return EXIT_STALL if trace.stalled else EXIT_OK

def cmd_lsdem(args):
    mesh = meshkit.load_mesh(args.input)
    population = sdem.load_population_csv(args.population, mesh.num_faces)
    landmarks = lsdem.LandmarkSet.from_csv(args.landmarks)
    landmarks.validate(mesh)
    weights = lsdem.EnergyWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma)
    cfg = lsdem.LsdemConfig(dt=args.dt, eps=args.eps, max_iter=args.max_iter)

    start = time.perf_counter()
    f0 = sphereconf.initial_conformal_map(mesh)
    final, trace = lsdem.lsdem_run(mesh, population, f0, landmarks, weights, cfg)
    elapsed = time.perf_counter() - start

    report = _flow_reports(
        mesh, population, f0, final, elapsed, Path(args.input).name, landmarks
    )
    _write_map(args.output, mesh, final)
    _write_report(args.report, report)
    _write_trace(args.report, trace)
    return EXIT_STALL if trace.stalled else EXIT_OK

def cmd_remesh(args):
    mesh = meshkit.load_mesh(args.input)
    population = mesh._face_areas.copy()
    if args.boost:
        face_list, scale = args.boost
        idx = np.array([int(t) for t in face_list.split(",")], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= mesh.num_faces):
            raise MeshError("boost face index out of range")
        population[idx] *= float(scale)
    cfg = sdem.SdemConfig(dt=args.dt, eps=args.eps, max_iter=args.max_iter)

    f0 = sphereconf.initial_conformal_map(mesh)
    final, trace = sdem.sdem_run(mesh, population, f0, cfg)
    out = apps.remesh(mesh, final, args.vertices)
    meshkit.save_obj(args.output, out.vertices, out.faces)
    return EXIT_STALL if trace.stalled else EXIT_OK

def cmd_register(args):
    mesh_a = meshkit.load_mesh(args.mesh_a)
    mesh_b = meshkit.load_mesh(args.mesh_b)
    lm_a = lsdem.LandmarkSet.from_csv(args.landmarks_a)
    lm_b = lsdem.LandmarkSet.from_csv(args.landmarks_b)
    lm_a.validate(mesh_a)
    lm_b.validate(mesh_b)
    cfg = lsdem.LsdemConfig(dt=args.dt, eps=args.eps, max_iter=args.max_iter)

    stalled = False
    maps = []
    for mesh, lm in ((mesh_a, lm_a), (mesh_b, lm_b)):
        f0 = sphereconf.initial_conformal_map(mesh)
        population = mesh._face_areas.copy()
        final, trace = lsdem.lsdem_run(mesh, population, f0, lm, cfg=cfg)
        stalled = stalled or trace.stalled
        maps.append(final)

    corr = apps.register(mesh_a, mesh_b, maps[0], maps[1])
    pulled = apps.apply_correspondence(corr, mesh_b)
    meshkit.save_obj(args.output, pulled, mesh_a.faces)
    return EXIT_STALL if stalled else EXIT_OK

def cmd_cartogram(args):
    mesh = meshkit.load_mesh(args.input)
    labeling = apps.RegionLabeling.from_csvs(
        args.labels, args.populations, mesh.num_faces
    )
    population = apps.cartogram_population(mesh, labeling)
    cfg = sdem.SdemConfig(dt=args.dt, eps=args.eps, max_iter=args.max_iter)

    start = time.perf_counter()
    f0 = sphereconf.initial_conformal_map(mesh)
    final, trace = sdem.sdem_run(mesh, population, f0, cfg)
    elapsed = time.perf_counter() - start

    report = _flow_reports(mesh, population, f0, final, elapsed, Path(args.input).name)
    _write_map(args.output, mesh, final)
    _write_report(args.report, report)
    _write_trace(args.report, trace)
    return EXIT_STALL if trace.stalled else EXIT_OK

if __name__ == "__main__":
    sys.exit(main())
