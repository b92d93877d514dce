"""Numerical toolkit for discretely self-similar (DSS) Navier-Stokes data.

Modules
-------
dss_core    grids, DSS fields and space-time cells, test data, Leray projection
norms       Lebesgue, weak-Lebesgue, Herz, Besov and Kato norms of DSS fields
kernels     heat and Oseen kernels, heat evolution, the bilinear term B, oracles
picard      Picard iterates, exponent tables, decay envelopes, little-o profiles
splitting   data, heat and Picard splittings with measured certificates
mildsolve   small-data mild solver with a drift and contraction certificates
cli         the ``dss`` command-line runner
"""

__version__ = "0.1.0"

from .dss_core import (DssField, GridSpec, SpaceTimeCell, build_grid, divergence_residual,
                       dss_eval, dss_eval_spacetime, leray_project, make_cell, make_test_data)
from .errors import DssError
from .kernels import (QuadratureConfig, bilinear_B, heat_evolve, lemma28_oracle,
                      oseen_grad_kernel, tsai_phi_oracle)
from .mildsolve import ContractionCertificate, drift_time_estimate, fixed_point_solve
from .norms import (besov_norm, herz_norm, kato_norm, l3w_dss_bounds, lp_block, lq_annulus,
                    weak_lp_quasinorm)
from .picard import (CellSpec, DecayEnvelope, PicardSequence, envelope_fit, exponent_table,
                     littleo_profile, picard_iterates, verify_decay)
from .splitting import SplitPair, split_data, split_heat, split_picard

__all__ = [
    "__version__", "DssField", "GridSpec", "SpaceTimeCell", "build_grid", "divergence_residual",
    "dss_eval", "dss_eval_spacetime", "leray_project", "make_cell", "make_test_data",
    "DssError", "QuadratureConfig", "bilinear_B", "heat_evolve", "lemma28_oracle",
    "oseen_grad_kernel", "tsai_phi_oracle", "ContractionCertificate", "drift_time_estimate",
    "fixed_point_solve", "besov_norm", "herz_norm", "kato_norm", "l3w_dss_bounds", "lp_block",
    "lq_annulus", "weak_lp_quasinorm", "CellSpec", "DecayEnvelope", "PicardSequence",
    "envelope_fit", "exponent_table", "littleo_profile", "picard_iterates", "verify_decay",
    "SplitPair", "split_data", "split_heat", "split_picard",
]
