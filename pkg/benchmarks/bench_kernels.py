"""Benchmark the compiled assembly kernels against the numpy fallback.

These kernels run on every iteration of the mapping flows (the operators are
rebuilt from the current vertex positions), so they are the hot non-solver
path. Usage: python benchmarks/bench_kernels.py [subdivision_level]
"""

import sys
import time

import numpy as np

from spheredem import icosphere
from spheredem._kernels import _numpy_backend

try:
    from spheredem._kernels import _speedups
except ImportError:
    _speedups = None


def timeit(fn, repeat=20):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    level = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    mesh = icosphere(level)
    rng = np.random.default_rng(0)
    verts = np.ascontiguousarray(
        mesh.vertices * rng.uniform(0.9, 1.1, (mesh.num_vertices, 1))
    )
    faces = np.ascontiguousarray(mesh.faces)
    areas, normals = _numpy_backend.face_geometry(verts, faces)
    u = rng.uniform(0.5, 2.0, mesh.num_vertices)

    cases = [
        ("face_geometry", lambda b: b.face_geometry(verts, faces)),
        ("cotan_entries", lambda b: b.cotan_entries(verts, faces)),
        (
            "vertex_area_sums",
            lambda b: b.vertex_area_sums(faces, areas, mesh.num_vertices),
        ),
        (
            "face_gradient",
            lambda b: b.face_gradient(verts, faces, u, areas, normals),
        ),
        (
            "signed_origin_volumes",
            lambda b: b.signed_origin_volumes(verts, faces),
        ),
    ]

    print(f"icosphere level {level}: |V|={mesh.num_vertices} |F|={mesh.num_faces}")
    header = f"{'kernel':<22}{'numpy':>12}{'compiled':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = timeit(lambda: call(_numpy_backend))
        if _speedups is None:
            print(f"{name:<22}{t_np * 1e3:>10.3f}ms{'n/a':>12}{'':>10}")
            continue
        t_cy = timeit(lambda: call(_speedups))
        print(
            f"{name:<22}{t_np * 1e3:>10.3f}ms{t_cy * 1e3:>10.3f}ms"
            f"{t_np / t_cy:>9.1f}x"
        )
    if _speedups is None:
        print("compiled extension not built; showing numpy only")


if __name__ == "__main__":
    main()
