"""Gradient schemes for the stochastic Stefan problem with multiplicative noise.

Mesh handling (:mod:`.mesh`, :mod:`.meshgen`), gradient discretisations
(:mod:`.gdm`, :mod:`.discretisations`), the model (:mod:`.model`), Wiener
paths (:mod:`.noise`), time stepping (:mod:`.stepper`) and Monte Carlo
experiments (:mod:`.experiments`). The ``stefan`` command is in :mod:`.cli`.
"""

from .discretisations import build, build_hmm, build_mlp1
from .experiments import EnsembleSpec, ExperimentReport, Level, interpolation_matrix, run_ensemble
from .gdm import (DiffusionTensor, GradientDiscretisation, assemble_stiffness,
                  coercivity_constant, s_defect, w_defect)
from .mesh import PolytopalMesh, compute_geometry, load_mesh, save_mesh
from .meshgen import family_mesh, resolve_mesh
from .model import StefanModel, ZetaFunction, make_model, stefan_zeta
from .noise import BrownianDriver, generate, steps_for
from .stepper import GradientScheme, NewtonConfig, NewtonError, SchemeState

__version__ = "0.1.0"

__all__ = [
    "BrownianDriver", "DiffusionTensor", "EnsembleSpec", "ExperimentReport", "GradientDiscretisation",
    "GradientScheme", "Level", "NewtonConfig", "NewtonError", "PolytopalMesh", "SchemeState",
    "StefanModel", "ZetaFunction", "assemble_stiffness", "build", "build_hmm", "build_mlp1",
    "coercivity_constant", "compute_geometry", "family_mesh", "generate", "interpolation_matrix",
    "load_mesh", "make_model", "resolve_mesh", "run_ensemble", "s_defect", "save_mesh",
    "stefan_zeta", "steps_for", "w_defect",
]
