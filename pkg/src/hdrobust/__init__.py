"""High-dimensional asymptotics of ridge-regularised robust regression on
heavy-tailed elliptical data, with a finite-size Monte Carlo cross-check suite."""

from . import bayes_optimal, channel, rates, scale_mixtures, simulation, state_evolution
from .channel import LossSpec, NoiseComponent, NoiseModel
from .scale_mixtures import Contaminated, Dirac, Discrete, InverseGamma, Pareto, TailClass
from .state_evolution import (
    Cluster,
    FixedPointSolution,
    OrderParams,
    ProblemSpec,
    SolverConfig,
    solve,
    stieltjes_form_solve,
)

__version__ = "0.1.0"
