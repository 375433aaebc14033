"""nlslab: a radial spectral laboratory for high-dimensional NLS.

Bounded-energy solutions of i u_t + Lap u = mu |u|^{p-1} u are decomposed
into a free radiation wave plus a weakly bound component, and the frequency
and spatial localization of the bound part is measured on finite windows.
"""

from .spectral_core import (
    RadialGrid,
    RadialField,
    SpectralField,
    DyadicBand,
    build_grid,
    hankel_forward,
    hankel_inverse,
    lp_project,
    norm,
    tail,
    radial_derivative,
    gaussian_field,
    random_band_limited,
    save_field,
    load_field,
)
from .propagator import (
    ResolventSpec,
    free_evolve,
    dispersive_decay_fit,
    resolvent_direct,
    resolvent_time_integral,
    double_duhamel_convergence,
    double_duhamel_report,
)
from .dynamics import (
    NlsParams,
    SolverState,
    Trajectory,
    nonlinearity,
    conserved,
    step,
    evolve,
    oracle_evolve,
    flow_stability_probe,
    duhamel_residual,
)
from .ground_state import GroundState, solve_ground_state, soliton_orbit_check
from .asymptotics import (
    extract_radiation,
    weakly_bound,
    frequency_profile,
    spatial_profile,
    mass_concentration_track,
    petite_report,
    riemann_lebesgue_check,
)
from .function_spaces import (
    ExponentTable,
    admissible_check,
    default_exponents,
    strichartz_norm,
    bilinear_norm,
    smoothing_profile,
    ffix_ratio,
)
from .harness import ScenarioConfig, run, report, sweep

__version__ = "0.1.0"
