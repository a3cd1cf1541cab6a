"""Problem parameters, bistable nonlinearities and Simons-cone coordinates.

The equation under study is the fractional Allen-Cahn equation on R^(2m),
handled through its degenerate-elliptic extension to the upper half space
with weight lambda^a, a = 1 - 2*gamma.  All solvers downstream work in the
doubly radial coordinates s = |x'|, t = |x''| plus the extension variable
lambda, so this module owns the coordinate helpers, the nonlinearity
models, and the feasibility window for the exponent b that enters the
stability supersolution t^(-b)*u_s - s^(-b)*u_t.
"""

from dataclasses import dataclass
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


class _Infeasible:
    """Singleton marker for an empty admissible exponent window."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        # lets callers write `if admissible_b_interval(m): lo, hi = ...`
        return False


INFEASIBLE = _Infeasible()


@dataclass(frozen=True)
class ProblemParams:
    """Dimension and fractional power of one problem instance.

    m is the half-dimension (the ambient space is R^(2m)), gamma the
    fractional power in (0, 1).  The extension weight exponent is always
    a = 1 - 2*gamma.  d_gamma is the Dirichlet-to-Neumann proportionality
    constant; it equals 1 exactly at gamma = 1/2 and should come from
    fracops1d.calibrate_d_gamma for any other power.
    """

    m: int
    gamma: float
    d_gamma: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise ValueError("m must be a positive integer, got %r" % (self.m,))
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie strictly inside (0, 1)")
        if not (self.d_gamma > 0.0):
            raise ValueError("d_gamma must be positive")

    @property
    def a(self):
        return 1.0 - 2.0 * self.gamma

    @property
    def n(self):
        return 2 * self.m


@dataclass(frozen=True)
class NonlinearityModel:
    """Odd bistable nonlinearity f with derivatives and potential G.

    G is the double-well potential with G' = -f, normalized so that
    G(1) = G(-1) = 0 (the pure states have zero energy).  f is odd,
    vanishes at 0 and 1, and is strictly concave on (0, 1).
    """

    name: str
    f: callable
    fprime: callable
    fsecond: callable
    G: callable


def cubic_model():
    """The classical quartic double well: f(u) = u - u^3, G = (1-u^2)^2/4."""
    return NonlinearityModel(
        name="cubic",
        f=lambda v: v - v ** 3,
        fprime=lambda v: 1.0 - 3.0 * v ** 2,
        fsecond=lambda v: -6.0 * v,
        G=lambda v: 0.25 * (1.0 - v ** 2) ** 2,
    )


def sine_model():
    """f(u) = sin(pi*u)/pi.  Included because at gamma = 1/2 the layer
    profile for this nonlinearity is (2/pi)*arctan(x) in closed form,
    which gives exact oracles for the 1D operators."""
    pi = math.pi
    return NonlinearityModel(
        name="sine",
        f=lambda v: np.sin(pi * v) / pi,
        fprime=lambda v: np.cos(pi * v),
        fsecond=lambda v: -pi * np.sin(pi * v),
        G=lambda v: (1.0 + np.cos(pi * v)) / pi ** 2,
    )


_BUILTIN_MODELS = {"cubic": cubic_model, "sine": sine_model}


def model_by_name(name):
    try:
        return _BUILTIN_MODELS[name]()
    except KeyError:
        raise ValueError(
            "unknown nonlinearity %r (available: %s)"
            % (name, ", ".join(sorted(_BUILTIN_MODELS)))
        ) from None


def custom_model(name, f, fprime, fsecond, npts=4001):
    """Build a NonlinearityModel from an (f, f', f'') triple.

    The potential G is reconstructed by cumulative quadrature of -f on a
    dense grid and pinned to G(1) = 0.  The bistable hypotheses (oddness,
    zeros at 0 and 1, concavity on (0,1), G' = -f) are spot checked on a
    1001-point grid and a ValueError is raised on violation.
    """
    from scipy.integrate import cumulative_trapezoid
    from scipy.interpolate import PchipInterpolator

    grid = np.linspace(-1.0, 1.0, npts)
    # G(v) = -int_1^v f = int_v^1 f, accumulated from the left end then shifted
    acc = cumulative_trapezoid(-np.asarray(f(grid), dtype=float), grid, initial=0.0)
    acc -= acc[-1]
    G_interp = PchipInterpolator(grid, acc)
    model = NonlinearityModel(name=name, f=f, fprime=fprime, fsecond=fsecond,
                              G=lambda v: G_interp(v))
    validate_model(model)
    return model


def validate_model(model, npts=1001, tol=1e-8):
    """Spot-check the bistable hypotheses on a grid; raise ValueError if violated."""
    v = np.linspace(-1.0, 1.0, npts)
    fv = np.asarray(model.f(v), dtype=float)
    scale = float(np.max(np.abs(fv))) or 1.0
    if np.max(np.abs(fv + fv[::-1])) > tol * scale:
        raise ValueError("f is not odd")
    if abs(float(model.f(0.0))) > tol * scale or abs(float(model.f(1.0))) > tol * scale:
        raise ValueError("f must vanish at 0 and 1")
    inner = v[(v > 1e-3) & (v < 1.0 - 1e-3)]
    if np.max(np.asarray(model.fsecond(inner), dtype=float)) >= 0.0:
        raise ValueError("f'' must be negative on (0, 1)")
    if abs(float(model.G(1.0))) > tol or abs(float(model.G(-1.0))) > tol:
        raise ValueError("G must vanish at the pure states +-1")
    # G' = -f via central differences, skipping the endpoints
    h = v[1] - v[0]
    Gv = np.asarray(model.G(v), dtype=float)
    dG = (Gv[2:] - Gv[:-2]) / (2.0 * h)
    if np.max(np.abs(dG + fv[1:-1])) > 1e-4 * scale + 10.0 * h ** 2:
        raise ValueError("G' = -f fails on the check grid")


_ORDERS = ("f", "fprime", "fsecond", "G")


def eval_nonlinearity(model, v, order="f"):
    """Evaluate f, f', f'' or G at v, with |v| <= 1 enforced.

    v may be a scalar or an array; values even slightly outside [-1, 1]
    raise a ValueError since the models are only meaningful on the well.
    """
    if order not in _ORDERS:
        raise ValueError("order must be one of %s" % (_ORDERS,))
    arr = np.asarray(v, dtype=float)
    if np.any(np.abs(arr) > 1.0 + 1e-12):
        raise ValueError("nonlinearity evaluated outside [-1, 1]")
    out = getattr(model, order)(arr)
    if np.ndim(v) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DoublyRadialPoint:
    """A point of R^(2m) x [0, inf) seen through (s, t, lambda)."""

    s: float
    t: float
    lam: float = 0.0

    def __post_init__(self):
        if self.s < 0 or self.t < 0 or self.lam < 0:
            raise ValueError("s, t and lambda must be nonnegative")

    @property
    def y(self):
        return (self.s + self.t) / SQRT2

    @property
    def z(self):
        return (self.s - self.t) / SQRT2


def to_doubly_radial(x, lam=0.0):
    """Map a point of R^(2m) to (s, t) = (|first half|, |second half|)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0 or x.size % 2 != 0:
        raise ValueError("point must have an even, positive number of coordinates")
    m = x.size // 2
    s = float(np.linalg.norm(x[:m]))
    t = float(np.linalg.norm(x[m:]))
    return DoublyRadialPoint(s=s, t=t, lam=lam)


def dist_to_cone(p):
    """Distance |s - t|/sqrt(2) from p to the Simons cone {s = t}."""
    return abs(p.s - p.t) / SQRT2


def admissible_b_interval(m):
    """Exponent window for the stability supersolution in R^(2m).

    Returns the closed interval of b > 0 with b^2 - (m-2)b + (m-1) <= 0,
    or INFEASIBLE when the quadratic has no positive roots.  The
    discriminant is m^2 - 8m + 8, negative for 2 <= m <= 6; for m = 1 the
    roots are -1 and 0, so no admissible b > 0 exists either.  The window
    is nonempty exactly when m >= 7.
    """
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise ValueError("m must be a positive integer")
    disc = float(m * m - 8 * m + 8)
    if disc < 0.0:
        return INFEASIBLE
    root = math.sqrt(disc)
    lo = ((m - 2) - root) / 2.0
    hi = ((m - 2) + root) / 2.0
    if hi <= 0.0:
        return INFEASIBLE
    return (max(lo, 0.0), hi)
