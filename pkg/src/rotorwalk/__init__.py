"""Rotor walks on Z^d: escape experiments, odometer accounting and potential-theory baselines."""

from rotorwalk.lattice import (CyclicOrder, Direction, InitialRule, LatticeState, SiteState,
                               ccw, cw, eta, validate_order)
from rotorwalk.engine import StopRegime, WalkOutcome, run_particle, escape_detect, flux_residual

__all__ = ["CyclicOrder", "Direction", "InitialRule", "LatticeState", "SiteState", "ccw", "cw", "eta",
           "validate_order", "StopRegime", "WalkOutcome", "run_particle", "escape_detect", "flux_residual"]
__version__ = "0.1.0"
