"""Lumped equivalent circuit of a three-shell spherical head, with a harmonic-series reference."""
from __future__ import annotations

from .calibration import (CalibrationConfig, CalibrationResult, FittedModel, ParameterSweep, PolyFit,
                          build_model, calibrate_reference, eval_params, log_frequency_grid, polyfit)
from .circuit import CircuitParams, Netlist, build_netlist, node_voltages, solve_nodal, surface_charge
from .errors import ExtrapolationWarning, LumpedHeadError
from .geometry import DipoleSource, HeadGeometry, ratios, standard_geometry
from .spice import export_spice_netlist, parse_spice_netlist
from .ssh import SSHConfig, scalp_potential, series_sum
from .tissue import TissueSet, TissueSpectrum, builtin_tissues, complex_conductivity, load_tissue_table
from .validation import ablation_study, frequency_sweep, mrfe, mrfe_grid

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig", "CalibrationResult", "CircuitParams", "DipoleSource", "ExtrapolationWarning",
    "FittedModel", "HeadGeometry", "LumpedHeadError", "Netlist", "ParameterSweep", "PolyFit", "SSHConfig",
    "TissueSet", "TissueSpectrum", "ablation_study", "build_model", "build_netlist", "builtin_tissues",
    "calibrate_reference", "complex_conductivity", "eval_params", "export_spice_netlist", "frequency_sweep",
    "load_tissue_table", "log_frequency_grid", "mrfe", "mrfe_grid", "node_voltages", "parse_spice_netlist",
    "polyfit", "ratios", "scalp_potential", "series_sum", "solve_nodal", "standard_geometry", "surface_charge",
]
