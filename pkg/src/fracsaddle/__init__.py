"""Saddle-shaped solutions of the fractional Allen-Cahn equation.

Numerical machinery for building the layer profile, folding it over the
Simons cone as a barrier, solving the doubly radial saddle problem in
the lambda^a-weighted half space, and verifying the qualitative claims:
the barrier bound, the monotonicity signs, the explicit stability
supersolution in dimension 2m >= 14, instability for 2m <= 6, and the
narrow-region geometric estimates behind the maximum principles.

Submodules are imported lazily so that ``python -m fracsaddle`` can
configure thread-count environment variables before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "INFEASIBLE": "core",
    "DoublyRadialPoint": "core",
    "NonlinearityModel": "core",
    "ProblemParams": "core",
    "admissible_b_interval": "core",
    "cubic_model": "core",
    "custom_model": "core",
    "dist_to_cone": "core",
    "eval_nonlinearity": "core",
    "model_by_name": "core",
    "sine_model": "core",
    "to_doubly_radial": "core",
    "validate_model": "core",
    "CalibrationError": "fracops1d",
    "SampledFunction1D": "fracops1d",
    "TruncationError": "fracops1d",
    "c1_gamma": "fracops1d",
    "calibrate_d_gamma": "fracops1d",
    "extend_1d": "fracops1d",
    "frac_lap_1d": "fracops1d",
    "LayerConvergenceError": "layer",
    "LayerSignError": "layer",
    "LayerSolution": "layer",
    "solve_layer": "layer",
    "arctan_layer": "layer",
    "layer_derivative_signs": "layer",
    "eval_U": "layer",
    "barrier_on_grid": "layer",
    "residual_U": "layer",
    "save_layer": "layer",
    "load_layer": "layer",
    "SaddleConvergenceError": "saddle",
    "SaddleQualityError": "saddle",
    "Grid3": "saddle",
    "make_grid3": "saddle",
    "node_weight": "saddle",
    "apply_operator": "saddle",
    "SaddleField": "saddle",
    "residual_norms": "saddle",
    "solve_saddle": "saddle",
    "derivative_fields": "saddle",
    "surface_area_factor": "saddle",
    "compute_energy": "saddle",
    "save_saddle": "saddle",
    "load_saddle": "saddle",
    "CheckRecord": "verify",
    "VerificationReport": "verify",
    "barrier_field": "verify",
    "check_monotonicity": "verify",
    "check_barrier_bound": "verify",
    "check_asymptotics": "verify",
    "build_phi": "verify",
    "check_supersolution": "verify",
    "check_uniqueness": "verify",
    "StabilityReport": "stability",
    "quadratic_form": "stability",
    "min_rayleigh": "stability",
    "CutoffReport": "stability",
    "cutoff_family_check": "stability",
    "SetDescriptor": "geometry",
    "slab": "geometry",
    "cone_wedge": "geometry",
    "cone_neighborhood": "geometry",
    "box": "geometry",
    "half_space_complement": "geometry",
    "complement": "geometry",
    "ball_volume": "geometry",
    "upper_half_ball_measure": "geometry",
    "weighted_measure": "geometry",
    "cone_points": "geometry",
    "half_ball_cone_ratio": "geometry",
    "NarrowRadiusReport": "geometry",
    "sample_on_bottom": "geometry",
    "narrow_radius": "geometry",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        modname = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    module = importlib.import_module(f".{modname}", __name__)
    value = getattr(module, name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
