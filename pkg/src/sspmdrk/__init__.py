"""Unconditionally SSP implicit two-derivative and SSP IMEX multi-derivative Runge-Kutta methods."""
from .tableau import (
    ButcherTableau,
    ShuOsherTableau,
    builtin_methods,
    check_order_conditions,
    get_method,
    obstruction_bound,
    to_butcher,
    validate_ssp_signs,
)
from .integrator import StepperConfig, Trajectory, TwoDerivativeSystem, integrate, step

__version__ = "0.1.0"
