"""The 1D interface profile and the barrier folded over the Simons cone.

The profile solves the trace form of the interface equation: the
fractional Laplacian of the trace balances the bistable nonlinearity.
It is computed on a symmetric grid by Newton iteration on the half line
(odd symmetry is exact by construction), with a damped fixed-point flow
as fallback.  The profile approaches its limits only algebraically, so
pinning the far boundary at exactly 1 would kink the tail; instead the
boundary value and an extra forcing term both follow the fitted tail
model 1 - u ~ kappa/x^(2*gamma), and the solve runs on a padded domain
so that the boundary-adjacent truncation bump never enters the reported
window [-L, L].

Folding the profile over the cone {s = t} gives the barrier
value(s,t,lam) = profile((s-t)/sqrt(2), lam), whose partial derivatives
in s, t and the mixed one reduce to x-derivatives of the profile.  All
lam > 0 evaluations go through the extension operator applied to the
sampled traces; lam = 0 uses the monotone interpolants directly.
"""

from collections import namedtuple
from dataclasses import dataclass, field
import json
import math
import os

import numpy as np
import scipy.linalg

from .core import NonlinearityModel, ProblemParams, eval_nonlinearity, model_by_name
from .fracops1d import (
    SampledFunction1D,
    _fraclap_node_weights,
    _slopes_4th,
    extend_1d,
)

SQRT2 = math.sqrt(2.0)

BarrierValues = namedtuple("BarrierValues", "value ds dt dst")


class LayerConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class LayerSignError(RuntimeError):
    def __init__(self, message, nodes):
        super().__init__(message)
        self.nodes = nodes


@dataclass
class LayerSolution:
    """The interface profile trace and its first two x-derivatives.

    All three are sampled on the same symmetric uniform grid and queried
    through monotone cubic interpolation, which preserves the sign
    structure (trace odd increasing, slope positive, curvature negative
    for x > 0) between nodes.
    """

    gamma: float
    model: NonlinearityModel
    trace: SampledFunction1D
    dtrace: SampledFunction1D
    d2trace: SampledFunction1D
    d_gamma: float = 1.0
    L: float = 0.0
    N: int = 0
    residual: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        v = self.trace.values
        n = v.size
        if n % 2 != 1:
            raise ValueError("trace grid must be symmetric with a center node")
        c = n // 2
        if v[c] != 0.0:
            raise ValueError("trace must vanish exactly at the center")
        if np.max(np.abs(v + v[::-1])) > 1e-14:
            raise ValueError("trace must be exactly odd")
        if np.any(np.diff(v) <= 0):
            raise ValueError("trace must be strictly increasing")
        if np.max(np.abs(v)) >= 1.0:
            raise ValueError("trace values must lie in (-1, 1)")


def _fd2_4th(values, h):
    """Fourth-order second derivative on a uniform grid, one-sided at ends."""
    v = values
    d = np.empty_like(v)
    d[2:-2] = (-v[:-4] + 16 * v[1:-3] - 30 * v[2:-2] + 16 * v[3:-1] - v[4:]) / (12 * h * h)
    c0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / (12 * h * h)
    c1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / (12 * h * h)
    d[0] = c0 @ v[:6]
    d[1] = c1 @ v[:6]
    d[-1] = c0 @ v[-6:][::-1]
    d[-2] = c1 @ v[-6:][::-1]
    return d


def _assemble_solution(model, gamma, L, N, u_half, d_gamma, residual, history):
    # u_half holds the N node values at h, 2h, ..., L
    h = L / N
    nodes = (np.arange(2 * N + 1) - N) * h
    right = np.concatenate([[0.0], u_half])
    vals = np.concatenate([-right[::-1][:-1], right])
    trace = SampledFunction1D(nodes, vals, -1.0, 1.0)
    d1 = _slopes_4th(vals, h)
    d1 = 0.5 * (d1 + d1[::-1])
    d2 = _fd2_4th(vals, h)
    d2 = 0.5 * (d2 - d2[::-1])
    dtrace = SampledFunction1D(nodes, d1, 0.0, 0.0)
    d2trace = SampledFunction1D(nodes, d2, 0.0, 0.0)
    return LayerSolution(
        gamma=gamma, model=model, trace=trace, dtrace=dtrace, d2trace=d2trace,
        d_gamma=d_gamma, L=L, N=N, residual=residual, history=history,
    )


def _layer_system(gamma, L, N):
    """Reduced interior rows of the fractional Laplacian on the odd line.

    Unknowns are the values at the N-1 interior nodes of (0, L); the full
    line is their odd reflection with boundary values +-(1 - delta) and
    far-field limits +-1.  Returns (A, b0, b1) with
    fraclap = A @ u + b0 + delta * b1 row by row.
    """
    h = L / N
    n_last = 2 * N
    A = np.empty((N - 1, N - 1))
    b0 = np.empty(N - 1)
    b1 = np.empty(N - 1)
    for i in range(1, N):
        w, wl, wr = _fraclap_node_weights(n_last, h, N + i, gamma)
        A[i - 1, :] = w[N + 1:2 * N] - w[N - 1:0:-1]
        edge = w[2 * N] - w[0]
        b0[i - 1] = edge + (wr - wl)
        b1[i - 1] = -edge
    return A, b0, b1


def _tail_forcing(gamma, L, N):
    """Operator correction for the algebraic tails, per unit kappa.

    The constant +-1 far-field model overstates the profile outside the
    grid by kappa/|y|^(2*gamma); folding that deficit through the kernel
    gives an extra forcing on each interior row.  The correction is
    linear in kappa, so it is computed once for kappa = 1.
    """
    from scipy.integrate import quad

    from .fracops1d import c1_gamma

    h = L / N
    two_g = 2.0 * gamma
    out = np.empty(N - 1)
    for i in range(1, N):
        x = i * h
        val, _ = quad(
            lambda y: y ** (-two_g)
            * ((y - x) ** (-1.0 - two_g) - (y + x) ** (-1.0 - two_g)),
            L, np.inf, limit=200,
        )
        out[i - 1] = c1_gamma(gamma) * val
    return out


def _newton_layer(A, b, model, u, tol, history, maxiter=40):
    cap = 1.0 - 1e-12
    u = np.clip(u, -cap, cap)
    for _ in range(maxiter):
        F = A @ u + b - eval_nonlinearity(model, u)
        r = float(np.max(np.abs(F)))
        history.append(r)
        if r < tol:
            return u, r
        J = A - np.diag(eval_nonlinearity(model, u, "fprime"))
        try:
            d = scipy.linalg.solve(J, F)
        except scipy.linalg.LinAlgError:
            return None, r
        step = 1.0
        for _ in range(20):
            cand = np.clip(u - step * d, -cap, cap)
            rc = float(np.max(np.abs(A @ cand + b - eval_nonlinearity(model, cand))))
            if rc < r:
                u = cand
                break
            step *= 0.5
        else:
            return None, r
    F = A @ u + b - eval_nonlinearity(model, u)
    r = float(np.max(np.abs(F)))
    history.append(r)
    return (u, r) if r < tol else (None, r)


def _flow_layer(A, b, model, u, tol, history, tau=0.5, max_steps=5000):
    cap = 1.0 - 1e-12
    u = np.clip(u, -cap, cap)
    lu = scipy.linalg.lu_factor(np.eye(A.shape[0]) + tau * A)
    r = np.inf
    for k in range(max_steps):
        u = np.clip(
            scipy.linalg.lu_solve(lu, u + tau * (eval_nonlinearity(model, u) - b)),
            -cap, cap,
        )
        if k % 25 == 0 or k == max_steps - 1:
            r = float(np.max(np.abs(A @ u + b - eval_nonlinearity(model, u))))
            history.append(r)
            if r < tol:
                return u, r
    return (u, r) if r < tol else (None, r)


def solve_layer(model, gamma, L=50.0, N=2000, tol=1e-4, init="tanh", d_gamma=1.0):
    """Solve for the interface profile on [-L, L] with N cells per half line.

    The trace equation is solved by Newton iteration with line search on a
    domain padded beyond L; if Newton stalls, a semi-implicit descent flow
    takes over from the initial guess.  The Dirichlet value at the padded
    edge and the matching tail forcing come from a fixed point on the
    algebraic tail coefficient.  init is "tanh", "ramp", or an explicit
    array of N-1 interior values.
    """
    if L < 20.0:
        raise ValueError("L must be at least 20")
    if N < 200:
        raise ValueError("N must be at least 200")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    h = L / N
    # solve on a padded domain so the Dirichlet-adjacent error bump stays
    # outside the reported window
    pad = int(math.ceil(max(5.0, 0.1 * L) / h))
    Ns = N + pad
    Ls = Ns * h
    x = np.arange(1, Ns) * h
    if isinstance(init, np.ndarray):
        if init.shape != (N - 1,):
            raise ValueError("custom init must have N-1 interior values")
        u = np.empty(Ns - 1)
        u[: N - 1] = init.astype(float)
        u[N - 1 :] = np.clip(init[-1], -0.999999, 0.999999)
    elif init == "tanh":
        u = np.tanh(x / 2.0)
    elif init == "ramp":
        u = np.minimum(x, 0.999)
    else:
        raise ValueError("init must be 'tanh', 'ramp', or an array")

    A, b0, b1 = _layer_system(gamma, Ls, Ns)
    b2 = _tail_forcing(gamma, Ls, Ns)
    history = []

    def solve_at(kappa, start):
        # boundary value and algebraic-tail forcing move together
        b = b0 + kappa * (b1 / Ls ** (2.0 * gamma) + b2)
        out, res = _newton_layer(A, b, model, start, tol, history)
        if out is None:
            out, res = _flow_layer(A, b, model, start, tol, history)
        return out, res

    kappa = 0.0
    sol, r = solve_at(kappa, u)
    if sol is None:
        raise LayerConvergenceError(
            "layer solve did not reach tol=%g (last residual %.3g)" % (tol, r), history
        )
    # fixed point on the tail coefficient: 1 - u ~ kappa / x^(2 gamma),
    # fitted on the outer quarter of the solve grid
    mask = x >= 0.75 * Ls
    for _ in range(3):
        kappa_new = max(
            0.0,
            float(np.median((1.0 - sol[mask]) * x[mask] ** (2.0 * gamma))),
        )
        if abs(kappa_new - kappa) <= 0.02 * max(kappa_new, 1e-12):
            kappa = kappa_new
            break
        sol2, r2 = solve_at(kappa_new, sol)
        if sol2 is None:
            break  # keep the last converged profile
        sol, r, kappa = sol2, r2, kappa_new

    return _assemble_solution(model, gamma, L, N, sol[:N], d_gamma, r, history)


def arctan_layer(L=50.0, N=2000, d_gamma=1.0):
    """Closed-form profile (2/pi) arctan(x) sampled like a solved layer.

    This is the exact profile for the sine nonlinearity at gamma = 1/2;
    its extension is (2/pi) arctan(x/(1+lam)).
    """
    h = L / N
    nodes = (np.arange(2 * N + 1) - N) * h
    trace = SampledFunction1D(nodes, (2 / math.pi) * np.arctan(nodes), -1.0, 1.0)
    dtrace = SampledFunction1D(nodes, (2 / math.pi) / (1 + nodes**2), 0.0, 0.0)
    d2trace = SampledFunction1D(
        nodes, (-4 / math.pi) * nodes / (1 + nodes**2) ** 2, 0.0, 0.0
    )
    return LayerSolution(
        gamma=0.5, model=model_by_name("sine"), trace=trace, dtrace=dtrace,
        d2trace=d2trace, d_gamma=d_gamma, L=L, N=N, residual=0.0,
    )


def layer_derivative_signs(ls):
    """Check slope > 0 at all nodes and curvature < 0 at all nodes x > 0.

    Returns the minimal margins and their locations; raises LayerSignError
    listing the offending nodes on violation.
    """
    x = ls.trace.nodes
    d1 = ls.dtrace.values
    d2 = ls.d2trace.values
    pos = x > 0
    bad1 = x[d1 <= 0.0]
    bad2 = x[pos & (d2 >= 0.0)]
    report = {
        "min_slope": float(d1.min()),
        "min_slope_at": float(x[int(np.argmin(d1))]),
        "max_curvature_right": float(d2[pos].max()),
        "max_curvature_right_at": float(x[pos][int(np.argmax(d2[pos]))]),
        "curvature_at_zero": float(ls.d2trace(0.0)),
    }
    if bad1.size or bad2.size:
        raise LayerSignError(
            "sign violation: %d slope nodes, %d curvature nodes"
            % (bad1.size, bad2.size),
            {"slope": bad1.tolist(), "curvature": bad2.tolist()},
        )
    return report


def _profile_triplet(ls, zvals, lam):
    """(profile, d/dx profile, d2/dx2 profile) at (zvals, lam)."""
    z = np.asarray(zvals, dtype=float)
    if lam == 0.0:
        return ls.trace(z), ls.dtrace(z), ls.d2trace(z)
    return (
        extend_1d(ls.trace, ls.gamma, z, lam),
        extend_1d(ls.dtrace, ls.gamma, z, lam),
        extend_1d(ls.d2trace, ls.gamma, z, lam),
    )


def eval_U(ls, p):
    """Barrier value and partials at a doubly radial point.

    value = profile(z, lam) with z = (s-t)/sqrt(2); the partials follow
    from the chain rule: d/ds = (1/sqrt2) d/dx, d/dt = -(1/sqrt2) d/dx,
    and the mixed derivative is -(1/2) d2/dx2.
    """
    z = p.z
    val, d1, d2 = _profile_triplet(ls, z, p.lam)
    ds = d1 / SQRT2
    return BarrierValues(value=float(val), ds=float(ds), dt=float(-ds), dst=float(-0.5 * d2))


def barrier_on_grid(ls, grid):
    """Barrier value and partials at every node of a (s,t,lam) grid.

    The s and t grids are identical and uniform, so s - t only takes
    2*ns+1 distinct values per level; the extension is evaluated once per
    distinct diagonal offset and scattered onto the grid.
    """
    sn = grid.s_nodes
    ns = sn.size - 1
    diffs = (np.arange(-ns, ns + 1)) * (sn[1] - sn[0])
    zvals = diffs / SQRT2
    didx = np.arange(ns + 1)[:, None] - np.arange(ns + 1)[None, :] + ns

    shape = (ns + 1, ns + 1, grid.lambda_nodes.size)
    out_v = np.empty(shape)
    out_ds = np.empty(shape)
    out_dst = np.empty(shape)
    for j, lam in enumerate(grid.lambda_nodes):
        val, d1, d2 = _profile_triplet(ls, zvals, float(lam))
        # exact odd/even structure in z, so the diagonal swap of the grid
        # fields is exact and not merely within roundoff
        val = 0.5 * (val - val[::-1])
        d1 = 0.5 * (d1 + d1[::-1])
        d2 = 0.5 * (d2 - d2[::-1])
        out_v[:, :, j] = val[didx]
        out_ds[:, :, j] = (d1 / SQRT2)[didx]
        out_dst[:, :, j] = (-0.5 * d2)[didx]
    return BarrierValues(value=out_v, ds=out_ds, dt=-out_ds, dst=out_dst)


def _d1_4th_axis(F, h, axis):
    """Fourth-order first derivative along one axis, biased at the ends.

    Plain stencils without any symmetry assumption; rows 0 and n are left
    NaN (never used: callers only read the open interior).
    """
    W = np.moveaxis(F, axis, 0)
    out = np.full_like(W, np.nan)
    out[2:-2] = (W[:-4] - 8 * W[1:-3] + 8 * W[3:-1] - W[4:]) / (12 * h)
    out[1] = (-3 * W[0] - 10 * W[1] + 18 * W[2] - 6 * W[3] + W[4]) / (12 * h)
    out[-2] = (3 * W[-1] + 10 * W[-2] - 18 * W[-3] + 6 * W[-4] - W[-5]) / (12 * h)
    return np.moveaxis(out, 0, axis)


def _d2_2nd_axis(F, h, axis):
    W = np.moveaxis(F, axis, 0)
    out = np.full_like(W, np.nan)
    out[1:-1] = (W[:-2] - 2 * W[1:-1] + W[2:]) / (h * h)
    return np.moveaxis(out, 0, axis)


def residual_U(ls, grid, params, bar=None):
    """Defect of the barrier in the weighted interior identity.

    Evaluates lam^a times [the second-order elliptic operator applied to
    the barrier minus the exact first-order source
    ((m-1)/sqrt2) * (t-s)/(s*t) * d/dx profile(z, lam)], which is what the
    fold of an interface profile over the cone leaves behind.  Second
    derivatives are collocated at second order; the first-derivative
    terms use fourth-order stencils because their 1/s, 1/t coefficients
    would otherwise cap the refinement order at the first off-axis row.
    The vertical part is the flux form exact on c1 + c2*lam^(1-a), the
    structure forced by the weight.  Returns a field that is NaN outside
    the open interior {s,t > 0, 0 < lam < Lam}; its max norm shrinks
    under grid refinement at second order.

    bar, if given, must be barrier_on_grid(ls, grid); passing it skips
    the extension work when several parameter sets share one grid.
    """
    if params.m != grid.m or abs(params.a - grid.a) > 1e-14:
        raise ValueError("params do not match the grid they are used with")
    if bar is None:
        bar = barrier_on_grid(ls, grid)
    W = bar.value
    sn = grid.s_nodes
    h = sn[1] - sn[0]
    lam = grid.lambda_nodes

    total = _d2_2nd_axis(W, h, 0) + _d2_2nd_axis(W, h, 1)
    if params.m > 1:
        s = sn[:, None, None]
        t = sn[None, :, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            total = total + (params.m - 1) * (
                _d1_4th_axis(W, h, 0) / s + _d1_4th_axis(W, h, 1) / t
            )
    lamff = np.full_like(W, np.nan)
    dW = np.diff(W, axis=2)
    lamff[:, :, 1:-1] = (
        grid.clam[1:] * dW[:, :, 1:] - grid.clam[:-1] * dW[:, :, :-1]
    ) / grid.wlam[1:-1]
    total = total + lamff

    res = np.full_like(W, np.nan)
    it = slice(1, sn.size - 1)
    jt = slice(1, lam.size - 1)
    s = sn[it][:, None, None]
    t = sn[it][None, :, None]
    geom = (t - s) / (s * t)
    dx_profile = SQRT2 * bar.ds
    rhs = ((params.m - 1) / SQRT2) * geom * dx_profile[it, it, jt]
    la = lam[jt][None, None, :] ** grid.a
    res[it, it, jt] = la * (total[it, it, jt] - rhs)
    return res


def save_layer(ls, csv_path):
    """Write the profile as CSV (x, u0, u0x, u0xx) plus a JSON manifest."""
    data = np.column_stack(
        [ls.trace.nodes, ls.trace.values, ls.dtrace.values, ls.d2trace.values]
    )
    np.savetxt(csv_path, data, delimiter=",", header="x,u0,u0x,u0xx",
               comments="", fmt="%.17g")
    manifest = {
        "gamma": ls.gamma,
        "model": ls.model.name,
        "L": ls.L,
        "N": ls.N,
        "residual": ls.residual,
        "d_gamma": ls.d_gamma,
    }
    with open(_manifest_path(csv_path), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _manifest_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def load_layer(csv_path):
    with open(_manifest_path(csv_path)) as fh:
        manifest = json.load(fh)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    nodes = data[:, 0]
    return LayerSolution(
        gamma=manifest["gamma"],
        model=model_by_name(manifest["model"]),
        trace=SampledFunction1D(nodes, data[:, 1], -1.0, 1.0),
        dtrace=SampledFunction1D(nodes, data[:, 2], 0.0, 0.0),
        d2trace=SampledFunction1D(nodes, data[:, 3], 0.0, 0.0),
        d_gamma=manifest["d_gamma"],
        L=manifest["L"],
        N=manifest["N"],
        residual=manifest["residual"],
    )
