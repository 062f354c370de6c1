"""First exits of dynamical systems under small heavy-tailed Lévy noise.

Predicts the exit-time rate Q(D^c) h(1/ε) and the exit-location law
Q(U ∩ D^c) / Q(D^c) from the attractor's ergodic measure, and checks them
against Monte Carlo simulation of  dX = f(X) dt + G(X-, ε dZ).
"""
from __future__ import annotations

from .coupling import JumpCoupling, additive, ito, marcus
from .dynamics import ErgodicMeasure, detect_attractor, flow, linear, van_der_pol
from .geometry import Domain, ball, annulus, polygon, levelset, star_annulus
from .levy import JumpDecomposition, LevyModel, limit_measure, tail_mass
from .montecarlo import ExitRecord, Scenario, SimConfig, run_experiment
from .predictor import ExitLawPrediction, QMeasure, predict
from .stats import ks_exponential, location_fraction_test, wilson_interval

__version__ = "0.1.0"

__all__ = [
    "JumpCoupling", "additive", "ito", "marcus",
    "ErgodicMeasure", "detect_attractor", "flow", "linear", "van_der_pol",
    "Domain", "ball", "annulus", "polygon", "levelset", "star_annulus",
    "JumpDecomposition", "LevyModel", "limit_measure", "tail_mass",
    "ExitRecord", "Scenario", "SimConfig", "run_experiment",
    "ExitLawPrediction", "QMeasure", "predict",
    "ks_exponential", "location_fraction_test", "wilson_interval",
]
