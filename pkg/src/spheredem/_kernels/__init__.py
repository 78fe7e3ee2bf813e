"""Backend selection for the hot per-face assembly kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is selected. Set SPHEREDEM_BACKEND=numpy or =compiled to force a
choice (forcing "compiled" raises if the extension is unavailable).
"""

import os

_requested = os.environ.get("SPHEREDEM_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "compiled"):
    raise ImportError(
        f"SPHEREDEM_BACKEND must be 'numpy' or 'compiled', got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _speedups as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import _numpy_backend as _impl

        BACKEND = "numpy"

face_geometry = _impl.face_geometry
cotan_entries = _impl.cotan_entries
vertex_area_sums = _impl.vertex_area_sums
face_gradient = _impl.face_gradient
signed_origin_volumes = _impl.signed_origin_volumes

__all__ = [
    "BACKEND",
    "face_geometry",
    "cotan_entries",
    "vertex_area_sums",
    "face_gradient",
    "signed_origin_volumes",
]
