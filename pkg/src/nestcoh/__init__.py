"""Decoherence of a central system shielded by a random-matrix near environment.

The near environment is a Gaussian random-matrix system coupled to the
central system by dephasing; a far environment damps its coherences.  The
package simulates the resulting relative coherence by Monte Carlo over
realizations, evaluates the linear-response predictions and fits the
effective damping rate.
"""
__version__ = "0.1.0"

from .errors import (ConfigError, FitError, IntegratorError, NestcohError, NumericError,
                     ParameterError, QuadratureError, UndefinedCoherenceError, ValidationError)
from .rmt import (EnsembleSpec, HamiltonianPair, Kind, build_h_lambda, eigendecompose,
                  sample_gaussian_ensemble)
from .echo import CoherenceTrace, TimeGrid, fidelity_amplitude, relative_coherence
from .lindblad import (DissipatorSpec, gamma_to_Gamma, generator_apply, propagate_coherence,
                       superoperator_reference)
from .theory import (SplineModel, TheoryCurve, TheoryKind, elr_fidelity, fit_spline,
                     form_factor_b2, full_lr_matrix, lr_convolution, perturbative_g)
from .montecarlo import RunPlan, Scenario, run_ensemble, run_scenario_sweep
from .fitting import FitResult, fit_gamma, fit_saturation

__all__ = [name for name in dir() if not name.startswith("_")]
