"""Haar system, dyadic best approximation and Besov quasi-norms for 0 < p <= 1."""
from .values import precision, set_precision, get_precision, value, exact, to_hex, from_hex
from .dyadic import DyadicCube, StepFunction, UNIT, ENLARGED, average, integral_over
from .params import BesovParams
from .haar import HaarIndex, analyze, coefficient, enumerate_haar, partial_sum, position, synthesize
from .approx import (NormReport, a_norm, approx_sequence, best_approx, best_constant, bnorm_diff,
                     check_step11, lp_quasinorm, modulus)
from .families import make_chi, make_gka, make_iib, make_linear, make_atom_family
from .atoms import (AtomicDecomposition, QuadSpec, QuadratureError, atomic_norm_upper,
                    bump_kernel, laplacian_kernel, local_mean, localmeans_norm, project_atoms)

__version__ = "0.1.0"
