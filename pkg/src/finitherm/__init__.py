"""finitherm: minimally dissipating finite-time thermodynamic protocols.

Natural units hbar = k_B = 1 throughout.
"""

from .operators import (DensityMatrix, GibbsState, HermitianOperator,
                        JumpRecord, SupportError, ThermalContext, ThermoReport,
                        entropies, gibbs_state, hellinger_angle,
                        kubo_transform, log_partition,
                        nonequilibrium_free_energy, relative_entropy,
                        relative_entropy_variance, von_neumann_entropy,
                        work_and_heat)
from .dynamics import (DynamicsGenerator, Propagator, drazin_inverse,
                       dyson_truncated_state, propagate, slow_driving_state,
                       work_variance)
from .geometry import (ControlProtocol, GeodesicSolution, MetricField,
                       full_control_geodesic, geodesic_solve,
                       length_and_dissipation, metric_from_generator,
                       reparametrize_constant_speed)

__version__ = "0.1.0"
