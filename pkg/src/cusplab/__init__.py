"""Numerical laboratory for classical vs quantum ergodicity in a
finite-area cusp billiard.

The classical flow in the region below f(x) = (x+1)**(-alpha) is chaotic
with divergent time averages of the position, while the Dirichlet
eigenstates of the same region are super-exponentially localized; this
package provides the billiard flow, transverse tangent dynamics, the
mapped-grid eigensolver, and the finite-scale quantum-ergodicity
diagnostics that exhibit the contrast side by side.
"""

from .analysis import (CutoffObservable, Density1Selection,
                       cesaro_matrix_elements, comparison_report,
                       density1_select, diag_matrix_elements, make_cutoff)
from .config import RunConfig, parse_config, serialize_config
from .dynamics import (CollisionEvent, LineElement, TrajectoryStats,
                       ensemble_time_averages, flow, next_collision,
                       poincare_step, reflect, sample_initial_conditions,
                       time_average, truncated_time_average)
from .geometry import (BoundaryPoint, CuspDomain, RectangleDomain, Region,
                       Wall, area, boundary_eval, contains, liouville_integral)
from .lyapunov import (JacobiField, LyapunovEstimate, g_observable,
                       lyapunov_ensemble, lyapunov_estimate, propagate_free,
                       propagate_reflection, transverse_jacobian)
from .pipeline import run_pipeline
from .spectral import (EigenPair, MappedGrid, MarginalDensity, SparseOperator,
                       assemble, decay_profile, heisenberg_time_average,
                       marginal_density, position_expectation,
                       smallest_eigenpairs, solve_spectrum,
                       verify_diff_inequality)

__version__ = "0.1.0"
