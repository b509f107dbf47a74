"""Exponentiated-Jacobian postprocessing for dense displacement fields.

The layer maps a displacement field ``phi`` to ``phi_p`` by exponentiating
the per-voxel Jacobian and reconstructing a field from the result with a
DST-based Dirichlet Poisson solve.
"""

from expjac.fields import DisplacementField, GridShape, read_field, write_field, validate
from expjac.diffops import StencilScheme, jacobian, divergence_rows, curl_rows, discrete_laplacian
from expjac.matexp import MatExpConfig, expm, expm_field, expm_vjp
from expjac.poisson import DstPlan, dst_forward, dst_inverse, solve_poisson, solve_poisson_vjp
from expjac.postprocess import PostprocessConfig, LayerOutput, postprocess, loss_p, postprocess_vjp
from expjac.metrics import MetricsReport, dice, npj_percentages, warp, evaluate

__version__ = "0.1.0"

__all__ = [
    "DisplacementField", "GridShape", "read_field", "write_field", "validate",
    "StencilScheme", "jacobian", "divergence_rows", "curl_rows", "discrete_laplacian",
    "MatExpConfig", "expm", "expm_field", "expm_vjp",
    "DstPlan", "dst_forward", "dst_inverse", "solve_poisson", "solve_poisson_vjp",
    "PostprocessConfig", "LayerOutput", "postprocess", "loss_p", "postprocess_vjp",
    "MetricsReport", "dice", "npj_percentages", "warp", "evaluate",
]
