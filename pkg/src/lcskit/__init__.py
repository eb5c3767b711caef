"""Attracting and repelling LCS extraction from one forward flow-map run.

The pipeline: build a velocity field (`flowfield`), integrate a seed grid
(`flowmap`), form the Cauchy-Green tensor field (`cgtensor`), trace
strainlines/stretchlines (`eigenlines`), and select/verify LCS candidates
(`lcs`). Hot loops run in the compiled core when available, with a NumPy
fallback (`backend`).
"""

__version__ = "0.1.0"

from .backend import (active_backend_name, available_backends, set_backend)
from .errors import (DataError, DegenerateRegionError, DivergenceError,
                     EmptyFieldError, EmptyLineError, EscapeError,
                     FormatError, LcsKitError, OutOfDomainError,
                     OutOfRangeError, PartialDataError, UnavailableError,
                     ValidationError)
from .flowfield import (Domain, GriddedVelocity, VelocityField, eval_gridded,
                        from_callable, linear_field, load_gridded, make_abc,
                        make_builtin, make_double_gyre, make_duffing,
                        sample_to_grid, save_gridded, zero_field)
from .flowmap import (FlowMapGrid, IntegratorParams, compute_flow_map,
                      flow_gradient, flow_gradients, integrate_trajectory,
                      load_flowmap, save_flowmap)
from .cgtensor import (CGField, PointCG, SingularitySet, cauchy_green,
                       cauchy_green_at_points, detect_singularities, eig_sym,
                       eigenvalue_gap, ftle, interpolate_eigval,
                       interpolate_eigvec, load_cgfield, save_cgfield)
from .eigenlines import (EigenLine, TraceConfig, advected_length_ratio,
                         lines_to_csv, lines_to_json, relative_stretching,
                         trace_eigenline, trace_eigenlines)
from .lcs import (AdvectedCurve, LCSSet, SelectionParams, StretchPlane,
                  advect_curve, advect_points, backward_instability_demo,
                  extract_lcs, fibonacci_sphere, lcsset_to_json,
                  local_stretch_plane, material_tangents, stretch_plane_demo,
                  verify_appendix_b, verify_lemma1,
                  verify_reciprocity_interpolated, verify_theorem1)
