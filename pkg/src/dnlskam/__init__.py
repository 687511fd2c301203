"""KAM iteration toolkit for the lattice nonlinear Schrodinger equation."""
from .kernels import BACKEND
from .fourier import TorusFourier
from .hamiltonian import AnalyticityWindow, Caps, HamiltonianPoly, ModeLayout, NormalForm, poisson_bracket
from .homological import (DiophantineProfile, dense_oracle_solve, solve_block_F, solve_large_variable,
                          solve_liu_yuan, solve_shifted)
from .kam import KamConfig, KamSeeds, KamState, kam_step, schedules
from .dnls import DnlsConfig, build_hamiltonian, initial_action_angle
from .measure import ParameterPoint, ResonanceZone, sample_sigma, zone_measure_mc
from .structure import frequency_expansion, verify_fae, verify_sae

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "TorusFourier", "AnalyticityWindow", "Caps", "HamiltonianPoly", "ModeLayout", "NormalForm",
    "poisson_bracket", "DiophantineProfile", "dense_oracle_solve", "solve_block_F", "solve_large_variable",
    "solve_liu_yuan", "solve_shifted", "KamConfig", "KamSeeds", "KamState", "kam_step", "schedules",
    "DnlsConfig", "build_hamiltonian", "initial_action_angle", "ParameterPoint", "ResonanceZone",
    "sample_sigma", "zone_measure_mc", "frequency_expansion", "verify_fae", "verify_sae",
]
