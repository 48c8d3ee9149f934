"""Simulation of OAM quantum key distribution through turbulence with adaptive optics."""

__version__ = "0.1.0"

from .field import (ComplexField, GridSpec, ModeBasis, fiber_coupling, make_ang_basis, make_gaussian,
                    make_logical_basis, make_oam_mode, projective_probability)
from .link import Link, LinkGeometry
from .propagation import AliasingError, ChannelSpec, propagate_free, run_channel
from .qkd import CrosstalkMatrix, QkdReport, crosstalk, key_rate, qder, qder_threshold
from .quantum import (MubSet, ProcessMatrix, build_mubs, build_mubs_dim4, gell_mann, process_fidelity,
                      reconstruct_chi)
from .turbulence import PhaseScreen, TurbulenceSeries, estimate_fried, gen_screen_fft, gen_screen_zernike
from .zernike import ZernikeSpectrum, decompose, zernike_eval

__all__ = [
    "AliasingError", "ChannelSpec", "ComplexField", "CrosstalkMatrix", "GridSpec", "Link", "LinkGeometry",
    "ModeBasis", "MubSet", "PhaseScreen", "ProcessMatrix", "QkdReport", "TurbulenceSeries", "ZernikeSpectrum",
    "build_mubs", "build_mubs_dim4", "crosstalk", "decompose", "estimate_fried", "fiber_coupling",
    "gell_mann", "gen_screen_fft", "gen_screen_zernike", "key_rate", "make_ang_basis", "make_gaussian",
    "make_logical_basis", "make_oam_mode", "process_fidelity", "projective_probability", "propagate_free",
    "qder", "qder_threshold", "reconstruct_chi", "run_channel", "zernike_eval",
]
