"""nullwaves: nonlinear interaction of waves on 1+3 Lorentzian spacetimes.

Subpackages: exprs (expression grammar), metrics (Lorentzian families),
raytrace (null bicharacteristics), terms (expansion-term generation),
symbols (interaction coefficients), grids/stepper/solver (causal FD solver),
config/experiments/cli (batch front-end).
"""

from .exprs import parse as parse_expr
from .grids import Field, Grid, SourceSpec
from .metrics import MetricSpec, Point4, Covector4, eval_metric, covector, point
from .raytrace import PhasePoint, RayTrajectory, hamilton_flow, forward_light_cone
from .symbols import (CovectorQuadruple, P_case, SymbolProfile, eval_interaction_coefficient,
                      fit_leading_order, gauge_transform_H, quintic_symbol, rho_quadruple)
from .terms import InteractionTerm, TaylorNonlinearity, generate_expansion_terms

__version__ = "0.1.0"

__all__ = [
    "parse_expr", "Field", "Grid", "SourceSpec", "MetricSpec", "Point4", "Covector4",
    "eval_metric", "covector", "point", "PhasePoint", "RayTrajectory", "hamilton_flow",
    "forward_light_cone", "CovectorQuadruple", "P_case", "SymbolProfile",
    "eval_interaction_coefficient", "fit_leading_order", "gauge_transform_H",
    "quintic_symbol", "rho_quadruple", "InteractionTerm", "TaylorNonlinearity",
    "generate_expansion_terms",
]
