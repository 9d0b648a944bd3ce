"""modlock: modulation-frequency locking analysis for forced S1-equivariant oscillators.

Pipeline: unforced periodic orbit (Newton shooting) -> Floquet/adjoint data ->
locking function G and region geometry -> direct forced-system simulation and
lock classification.
"""

__version__ = "0.1.0"

from .locking import (  # noqa: F401,E402
    RegionSpec,
    averaged_equilibria,
    boundary_curves,
    compute_G,
    find_singular_points,
    in_locking_region,
    integrate_averaged_phase,
    transit_time_bound,
)
from .model import (  # noqa: F401,E402
    ControlParams,
    ForcingProfile,
    FullState,
    load_model_config,
    make_vdp_laser,
)
from .orbit import (  # noqa: F401,E402
    compute_adjoint,
    compute_floquet,
    compute_phase_offsets,
    default_orbit_guess,
    find_periodic_orbit,
)
from .sim import (  # noqa: F401,E402
    analyze_forced_run,
    classify_locking,
    extract_phase,
    find_locking_boundary,
    simulate_full,
    sweep_grid,
    validate_averaged_drift,
)
