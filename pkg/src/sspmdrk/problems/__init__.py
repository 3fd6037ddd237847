"""Model problems: scalar ODE, ODE relaxation, hyperbolic relaxation, Broadwell and BGK."""
from .bgk import BGK1D, NonPhysicalMoments, bgk_1d, cfl_dt, maxwellian, mixed_regime_eps
from .grids import SpatialGrid, VelocityGrid, l2_norm, transport_derivative, upwind_derivative, weno5_flux
from .ode import OdeRelaxation, ScalarDecay, ode_relaxation, scalar_decay
from .relaxation import Broadwell, HyperbolicRelaxation, broadwell, hyperbolic_relaxation

PROBLEMS = {
    "scalar-decay": scalar_decay,
    "ode-relaxation": ode_relaxation,
    "hyperbolic-relaxation": hyperbolic_relaxation,
    "broadwell": broadwell,
    "bgk": bgk_1d,
}

__all__ = [
    "BGK1D", "Broadwell", "HyperbolicRelaxation", "NonPhysicalMoments", "OdeRelaxation", "PROBLEMS",
    "ScalarDecay", "SpatialGrid", "VelocityGrid", "bgk_1d", "broadwell", "cfl_dt", "hyperbolic_relaxation",
    "l2_norm", "maxwellian", "mixed_regime_eps", "ode_relaxation", "scalar_decay", "transport_derivative",
    "upwind_derivative", "weno5_flux",
]
