"""Finite-volume solver for the reduced saddle problem in (s, t, lambda).

The degenerate elliptic interior equation is the divergence form
div(lam^a s^(m-1) t^(m-1) grad u) = 0 with natural reflections at s = 0
and t = 0, a nonlinear flux condition on the bottom face lam = 0, the
barrier as lateral and top Dirichlet data, and u = 0 on the diagonal
{s = t}.  Everything is assembled in conservation form on a tensor grid,
uniform in s and t (so the odd reflection across the diagonal is exact)
and graded in lambda so the first cell resolves the lam^a weight.

Face conductances: midpoint values of s^(m-1), t^(m-1) in the horizontal
directions, and the resistance average of lam^(-a) in the vertical one,
which makes the scheme exact on profiles c1 + c2 lam^(1-a), the local
behavior forced by the weight.  Cell weights are exact integrals of the
measure, so constants are annihilated exactly and the discrete operator
is self-adjoint in the weighted inner product.

The solve runs on the half domain {s >= t} only: restricted to nodes
strictly below the diagonal, the flux-balance equations of the odd full
field close on themselves with u = 0 on the diagonal, so no accuracy is
lost.  A semi-implicit descent flow (monotone in the discrete energy by
backtracking) brings the iterate into the Newton basin, then Newton with
conjugate-gradient linear solves finishes to tolerance.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln

from .core import ProblemParams, eval_nonlinearity

try:
    import pyamg

    _HAVE_PYAMG = True
except Exception:  # pragma: no cover
    _HAVE_PYAMG = False


class SaddleConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class SaddleQualityError(RuntimeError):
    pass


@dataclass
class Grid3:
    """Tensor product grid on [0,S]^2 x [0,Lam], uniform in s and t.

    lambda_nodes[j] = Lam*(j/nl)^p with p = 2/(1+a) by default; ws/wlam
    are exact cell integrals of s^(m-1) and lam^a, cs/clam the face
    conductance densities described in the module docstring.
    """

    m: int
    a: float
    S: float
    Lambda: float
    ns: int
    nl: int
    p: float
    s_nodes: np.ndarray
    t_nodes: np.ndarray
    lambda_nodes: np.ndarray
    ws: np.ndarray
    wlam: np.ndarray
    cs: np.ndarray
    clam: np.ndarray

    @property
    def h(self):
        return self.S / self.ns


def make_grid3(params, S, Lambda, ns, nl, lambda_power=None):
    """Build the tensor grid.  lambda_power overrides the default grading
    2/(1+a); use 1.0 (uniform) when applying the discrete operator to
    externally sampled fields, where the tiny first graded cell would
    amplify sampling noise quadratically."""
    if S <= 0 or Lambda <= 0 or ns < 4 or nl < 4:
        raise ValueError("need positive extents and at least 4 cells per direction")
    m, a = params.m, params.a
    h = S / ns
    s_nodes = np.arange(ns + 1) * h
    p = 2.0 / (1.0 + a) if lambda_power is None else float(lambda_power)
    if p < 1.0:
        raise ValueError("lambda grading must not stretch toward the top")
    lam = Lambda * (np.arange(nl + 1) / nl) ** p

    lo = np.clip((np.arange(ns + 1) - 0.5) * h, 0.0, S)
    hi = np.clip((np.arange(ns + 1) + 0.5) * h, 0.0, S)
    ws = (hi**m - lo**m) / m

    mid = 0.5 * (lam[:-1] + lam[1:])
    edges = np.concatenate([[0.0], mid, [Lambda]])
    wlam = (edges[1:] ** (1 + a) - edges[:-1] ** (1 + a)) / (1 + a)

    cs = ((np.arange(ns) + 0.5) * h) ** (m - 1) / h
    clam = (1 - a) / (lam[1:] ** (1 - a) - lam[:-1] ** (1 - a))
    return Grid3(
        m=m, a=a, S=S, Lambda=Lambda, ns=ns, nl=nl, p=p,
        s_nodes=s_nodes, t_nodes=s_nodes, lambda_nodes=lam,
        ws=ws, wlam=wlam, cs=cs, clam=clam,
    )


def _check_params(grid, params):
    if params.m != grid.m or abs(params.a - grid.a) > 1e-14:
        raise ValueError("params do not match the grid they are used with")


def _net_flux(grid, w):
    """Sum of conductance-weighted differences into each node (full array).

    Valid at every node; at s = 0 and t = 0 the absent faces carry zero
    flux, which is exactly the Neumann reflection.
    """
    ws, wlam, cs, clam = grid.ws, grid.wlam, grid.cs, grid.clam
    net = np.zeros_like(w)

    d = cs[:, None, None] * (w[1:, :, :] - w[:-1, :, :])
    fac = ws[None, :, None] * wlam[None, None, :]  # t,lam weights for s-faces
    net[:-1, :, :] += d * fac
    net[1:, :, :] -= d * fac

    d = cs[None, :, None] * (w[:, 1:, :] - w[:, :-1, :])
    fac = ws[:, None, None] * wlam[None, None, :]
    net[:, :-1, :] += d * fac
    net[:, 1:, :] -= d * fac

    d = clam[None, None, :] * (w[:, :, 1:] - w[:, :, :-1])
    fac = ws[:, None, None] * ws[None, :, None]
    net[:, :, :-1] += d * fac
    net[:, :, 1:] -= d * fac
    return net


def node_weight(grid):
    """Weighted cell volume per node, shape (ns+1, ns+1, nl+1)."""
    return grid.ws[:, None, None] * grid.ws[None, :, None] * grid.wlam[None, None, :]


def apply_operator(grid, params, w):
    """Discrete w_ss + w_tt + w_ll + (m-1)(w_s/s + w_t/t) + (a/lam) w_l.

    Conservation form: net face fluxes of lam^a s^(m-1) t^(m-1) grad w
    divided by the weighted cell volume.  Returns NaN on the Dirichlet
    faces s = S, t = S, lam = Lam and on the bottom lam = 0, where the
    flux balance is not the plain interior operator.
    """
    _check_params(grid, params)
    if w.shape != (grid.ns + 1, grid.ns + 1, grid.nl + 1):
        raise ValueError("field shape does not match grid")
    out = _net_flux(grid, w) / node_weight(grid)
    out[-1, :, :] = np.nan
    out[:, -1, :] = np.nan
    out[:, :, -1] = np.nan
    out[:, :, 0] = np.nan
    return out


def _assemble_laplacian(grid):
    """Global sparse face-flux matrix L with (L u)_i = -net_flux_i."""
    ns, nl = grid.ns, grid.nl
    shape = (ns + 1, ns + 1, nl + 1)
    nfull = (ns + 1) * (ns + 1) * (nl + 1)
    idx = np.arange(nfull).reshape(shape)

    rows, cols, data = [], [], []

    def add_faces(a_idx, b_idx, c_val):
        a = a_idx.ravel()
        b = b_idx.ravel()
        c = np.broadcast_to(c_val, a_idx.shape).ravel()
        rows.append(np.concatenate([a, b, a, b]))
        cols.append(np.concatenate([a, b, b, a]))
        data.append(np.concatenate([c, c, -c, -c]))

    ws, wlam, cs, clam = grid.ws, grid.wlam, grid.cs, grid.clam
    add_faces(idx[:-1, :, :], idx[1:, :, :],
              cs[:, None, None] * ws[None, :, None] * wlam[None, None, :])
    add_faces(idx[:, :-1, :], idx[:, 1:, :],
              cs[None, :, None] * ws[:, None, None] * wlam[None, None, :])
    add_faces(idx[:, :, :-1], idx[:, :, 1:],
              clam[None, None, :] * ws[:, None, None] * ws[None, :, None])
    L = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nfull, nfull),
    ).tocsr()
    L.sum_duplicates()
    return L


@dataclass
class SaddleField:
    """Solved saddle state on the full square, exactly antisymmetric.

    u[i,k,j] is the value at (s_i, t_k, lam_j); u(s,t,lam) = -u(t,s,lam)
    holds exactly by construction.  Derivative fields are filled in by
    derivative_fields.
    """

    grid: Grid3
    params: ProblemParams
    model: object
    u: np.ndarray
    residual_norm: float
    residuals: dict
    init: str
    energy_history: list = field(default_factory=list, repr=False)
    us: np.ndarray = None
    ut: np.ndarray = None
    uy: np.ndarray = None
    ust: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


class _HalfDomain:
    """Index bookkeeping for the strict lower-triangle unknowns."""

    def __init__(self, grid):
        ns, nl = grid.ns, grid.nl
        shape = (ns + 1, ns + 1, nl + 1)
        ii, kk, jj = np.meshgrid(
            np.arange(ns + 1), np.arange(ns + 1), np.arange(nl + 1), indexing="ij"
        )
        unknown = (ii > kk) & (ii < ns) & (jj < nl)
        self.shape = shape
        self.iu = ii[unknown]
        self.ku = kk[unknown]
        self.ju = jj[unknown]
        self.unk_flat = np.ravel_multi_index((self.iu, self.ku, self.ju), shape)
        self.mir_flat = np.ravel_multi_index((self.ku, self.iu, self.ju), shape)
        self.ndof = self.unk_flat.size
        self.bottom = self.ju == 0

    def to_full(self, x, base):
        uf = base.copy()
        uf[self.iu, self.ku, self.ju] = x
        uf[self.ku, self.iu, self.ju] = -x
        return uf


def _dirichlet_base(grid, barrier_value):
    """Full field holding only the fixed values: faces from the barrier,
    zeros at the diagonal and at every unknown/mirror node."""
    base = np.zeros_like(barrier_value)
    base[-1, :, :] = barrier_value[-1, :, :]
    base[:, -1, :] = barrier_value[:, -1, :]
    base[:, :, -1] = barrier_value[:, :, -1]
    return base


def residual_norms(grid, params, model, u_full, d_gamma):
    """Weighted RMS and sup norms of the interior and bottom equations."""
    _check_params(grid, params)
    net = _net_flux(grid, u_full)
    wt = node_weight(grid)
    ns, nl = grid.ns, grid.nl

    ii, kk = np.meshgrid(np.arange(ns + 1), np.arange(ns + 1), indexing="ij")
    half = ii > kk
    interior = np.repeat(half[:, :, None], nl + 1, axis=2)
    interior[-1, :, :] = False
    interior[:, :, 0] = False
    interior[:, :, -1] = False

    op = net[interior] / wt[interior]
    w_int = wt[interior]
    res_int = math.sqrt(float(np.sum(w_int * op**2) / np.sum(w_int)))

    hweight = grid.ws[:, None] * grid.ws[None, :]
    bmask = half.copy()
    bmask[-1, :] = False
    rb = (
        d_gamma * net[:, :, 0][bmask] / hweight[bmask]
        + eval_nonlinearity(model, u_full[:, :, 0][bmask])
    )
    wb = hweight[bmask]
    res_bot = math.sqrt(float(np.sum(wb * rb**2) / np.sum(wb)))
    return {
        "interior_rms": res_int,
        "interior_sup": float(np.max(np.abs(op))) if op.size else 0.0,
        "bottom_rms": res_bot,
        "bottom_sup": float(np.max(np.abs(rb))) if rb.size else 0.0,
    }


def _solve_sym(mat, rhs, x0, tol, precond=None, maxiter=400):
    """CG first, verified; MINRES fallback for indefinite Newton systems."""
    x, _ = spla.cg(mat, rhs, x0=x0, rtol=tol, maxiter=maxiter, M=precond)
    r = np.linalg.norm(mat @ x - rhs)
    if r <= 10 * tol * max(np.linalg.norm(rhs), 1e-300):
        return x
    x, _ = spla.minres(mat, rhs, x0=x, rtol=tol, maxiter=4 * maxiter, M=precond)
    return x


def _make_precond(mat):
    if _HAVE_PYAMG:
        try:
            ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(mat), max_coarse=400)
            return ml.aspreconditioner(cycle="V")
        except Exception:
            pass
    d = mat.diagonal()
    d[d <= 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator(mat.shape, matvec=lambda v: inv * v)


def solve_saddle(grid, params, model, ls, tol=1e-5, init="barrier",
                 d_gamma=None, max_newton=30, max_flow=4000, strict_resolution=True,
                 pad=0.0):
    """Solve the reduced saddle problem on {s >= t}.

    init is one of "barrier" (start at the folded layer), "zero-jiggle"
    (0.1 with the odd sign pattern, i.e. far from the solution), or an
    array of values at the lower-triangle unknowns.  The solution carries
    the residual breakdown; convergence means both the interior operator
    residual and the bottom flux-balance residual are below tol in the
    weighted RMS norm.

    pad > 0 solves on a box enlarged by that physical length in every
    direction (same cell size and the same graded-node constant, so the
    requested grid is an exact sub-grid) and restricts the field and its
    derivative estimates back to the requested grid.  This moves the
    error from imposing the sliding-layer barrier as lateral and top
    data out of the reported box; derivative estimates then come from
    centered stencils everywhere except the diagonal and the axes.
    """
    from .layer import barrier_on_grid

    _check_params(grid, params)
    if d_gamma is None:
        d_gamma = params.d_gamma
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    if pad > 0:
        if isinstance(init, np.ndarray):
            raise ValueError("array init is sized for the requested grid and "
                             "cannot seed the padded solve")
        h = grid.h
        ns_p = grid.ns + int(math.ceil(pad / h - 1e-12))
        c_lam = grid.Lambda / grid.nl ** grid.p
        nl_p = int(math.ceil(((grid.Lambda + pad) / c_lam) ** (1.0 / grid.p)
                             - 1e-12))
        gp = make_grid3(params, S=h * ns_p, Lambda=c_lam * nl_p ** grid.p,
                        ns=ns_p, nl=nl_p, lambda_power=grid.p)
        wide = solve_saddle(gp, params, model, ls, tol=tol, init=init,
                            d_gamma=d_gamma, max_newton=max_newton,
                            max_flow=max_flow,
                            strict_resolution=strict_resolution)
        wide = derivative_fields(wide)
        cut = (slice(0, grid.ns + 1), slice(0, grid.ns + 1),
               slice(0, grid.nl + 1))
        u_r = wide.u[cut].copy()
        norms = residual_norms(grid, params, model, u_r, d_gamma)
        return SaddleField(
            grid=grid, params=params, model=model, u=u_r,
            residual_norm=max(norms["interior_rms"], norms["bottom_rms"]),
            residuals=norms, init=wide.init,
            energy_history=wide.energy_history,
            us=wide.us[cut].copy(), ut=wide.ut[cut].copy(),
            uy=wide.uy[cut].copy(), ust=wide.ust[cut].copy(),
            diagnostics={
                "d_gamma": d_gamma, "pad": float(pad),
                "padded_box": [gp.S, gp.Lambda, gp.ns, gp.nl],
                "padded_residual": wide.residual_norm,
                "flow_steps": wide.diagnostics.get("flow_steps"),
            },
        )
    if strict_resolution and grid.h > math.sqrt(2.0) / 8.0 + 1e-12:
        raise ValueError(
            "grid too coarse across the cone: need >= 8 nodes per unit of "
            "the diagonal coordinate (pass strict_resolution=False to override)"
        )

    bar = barrier_on_grid(ls, grid)
    base = _dirichlet_base(grid, bar.value)
    half = _HalfDomain(grid)
    if isinstance(init, np.ndarray):
        x = init.astype(float).copy()
        init_label = "custom"
        if x.shape != (half.ndof,):
            raise ValueError("custom init must provide one value per unknown")
    elif init == "barrier":
        x = bar.value[half.iu, half.ku, half.ju].copy()
        init_label = "barrier"
    elif init == "zero-jiggle":
        x = np.full(half.ndof, 0.1)
        init_label = "zero-jiggle"
    else:
        raise ValueError("init must be 'barrier', 'zero-jiggle', or an array")

    L = _assemble_laplacian(grid)
    Lu = L[half.unk_flat, :]
    K0 = (Lu[:, half.unk_flat] - Lu[:, half.mir_flat]).tocsr()
    c_vec = (L @ base.ravel())[half.unk_flat]

    hweight = (grid.ws[:, None] * grid.ws[None, :])[half.iu, half.ku]
    hvec = np.where(half.bottom, hweight, 0.0)
    wvol = node_weight(grid)[half.iu, half.ku, half.ju]
    mass = wvol + hvec

    Ksys0 = (d_gamma * K0).tocsr()
    precond = _make_precond(Ksys0)

    def g_residual(xv):
        return -(d_gamma * (K0 @ xv + c_vec)) + hvec * eval_nonlinearity(model, xv)

    def merit(gv):
        # flux balances normalized by cell mass, otherwise the s^(m-1)
        # weights make the sup norm meaningless across the domain
        return float(np.max(np.abs(gv / mass)))

    def energy_of(xv):
        uf = half.to_full(xv, base)
        quad = 0.5 * d_gamma * float(uf.ravel() @ (L @ uf.ravel()))
        gsum = float(
            np.sum(eval_nonlinearity(model, uf[:, :, 0], "G")
                   * grid.ws[:, None] * grid.ws[None, :])
        )
        return quad + gsum

    cap = 1.0 - 1e-12
    x = np.clip(x, -cap, cap)
    history = []
    energy_history = [energy_of(x)]

    # phase 1: semi-implicit descent flow, monotone in the energy
    tau = 1.0
    flow_mat = (sp.diags(mass / tau) + Ksys0).tocsr()
    gn = merit(g_residual(x))
    history.append(gn)
    flow_target = max(100.0 * tol, 1e-4)
    steps = 0
    while gn > flow_target and steps < max_flow:
        rhs = (mass / tau) * x + hvec * eval_nonlinearity(model, x) - d_gamma * c_vec
        xn = np.clip(_solve_sym(flow_mat, rhs, x, 1e-6, precond), -cap, cap)
        en = energy_of(xn)
        if en <= energy_history[-1] + 1e-13 * max(1.0, abs(energy_history[-1])):
            x = xn
            energy_history.append(en)
        else:
            tau *= 0.5
            flow_mat = (sp.diags(mass / tau) + Ksys0).tocsr()
            if tau < 1e-6:
                break
            continue
        gn = merit(g_residual(x))
        history.append(gn)
        steps += 1
        # the merit can plateau on tiny-mass cells long after the iterate
        # is inside the Newton basin; stop pushing the flow then
        if steps % 50 == 0 and steps >= 100 and gn > 0.99 * history[-51]:
            break

    # phase 2: Newton on the flux-balance equations
    norms = None
    for _ in range(max_newton):
        norms = residual_norms(grid, params, model, half.to_full(x, base), d_gamma)
        if max(norms["interior_rms"], norms["bottom_rms"]) < tol:
            break
        g = g_residual(x)
        gn = merit(g)
        history.append(gn)
        fp = eval_nonlinearity(model, x, "fprime")
        ksys = (Ksys0 - sp.diags(hvec * fp)).tocsr()
        dx = _solve_sym(ksys, g, np.zeros_like(g), 1e-2 * tol, precond)
        stepped = False
        stepsize = 1.0
        for _ in range(25):
            cand = np.clip(x + stepsize * dx, -cap, cap)
            if merit(g_residual(cand)) < gn:
                x = cand
                stepped = True
                break
            stepsize *= 0.5
        if not stepped:
            break
    else:
        norms = residual_norms(grid, params, model, half.to_full(x, base), d_gamma)

    if norms is None or max(norms["interior_rms"], norms["bottom_rms"]) >= tol:
        norms = residual_norms(grid, params, model, half.to_full(x, base), d_gamma)
        if max(norms["interior_rms"], norms["bottom_rms"]) >= tol:
            raise SaddleConvergenceError(
                "saddle solve stalled at residuals %s (tol %g)" % (norms, tol), history
            )

    u_full = half.to_full(x, base)
    if np.max(np.abs(u_full)) >= 1.0:
        raise SaddleQualityError("|u| reached 1 at a node")
    strict_interior = u_full[half.iu, half.ku, half.ju]
    if np.any(strict_interior <= 0.0):
        raise SaddleQualityError(
            "positivity failed at %d interior nodes of {s > t}"
            % int(np.sum(strict_interior <= 0.0))
        )

    return SaddleField(
        grid=grid, params=params, model=model, u=u_full,
        residual_norm=max(norms["interior_rms"], norms["bottom_rms"]),
        residuals=norms, init=init_label, energy_history=energy_history,
        diagnostics={"flow_steps": steps, "residual_history": history,
                     "d_gamma": d_gamma, "tau_final": tau},
    )


def _d4_even(arr, h, axis):
    """Fourth-order first derivative; even reflection at index 0,
    one-sided stencils at the far end."""
    a = np.moveaxis(arr, axis, 0)
    n = a.shape[0]
    out = np.empty_like(a)
    pad = np.concatenate([a[2:0:-1], a], axis=0)  # ghosts a[2], a[1] before a[0]
    out[:-2] = (8.0 * (pad[3:n + 1] - pad[1:n - 1]) - (pad[4:n + 2] - pad[:n - 2])) / (12 * h)
    c_end = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / (12 * h)
    c_pen = np.array([3.0, 10.0, -18.0, 6.0, -1.0]) / (12 * h)
    out[-1] = np.tensordot(c_end, a[-1:-6:-1], axes=(0, 0))
    out[-2] = np.tensordot(c_pen, a[-1:-6:-1], axes=(0, 0))
    return np.moveaxis(out, 0, axis)


def derivative_fields(sf):
    """Fill in u_s, u_t, u_y, u_st by fourth-order differences.

    Even reflection across s = 0 and t = 0 (the doubly radial function
    is even in each radius), one-sided at the far faces; the exact
    boundary identities u_s = 0 on {s=0}, u_t = 0 on {t=0} and
    u_st = 0 on {st=0} are then enforced nodewise.
    """
    h = sf.grid.h
    us = _d4_even(sf.u, h, 0)
    ut = _d4_even(sf.u, h, 1)
    ust = _d4_even(us, h, 1)
    us[0, :, :] = 0.0
    ut[:, 0, :] = 0.0
    ust[0, :, :] = 0.0
    ust[:, 0, :] = 0.0
    sf.us, sf.ut, sf.ust = us, ut, ust
    sf.uy = (us + ut) / math.sqrt(2.0)
    return sf


def surface_area_factor(m):
    """Product of the two unit-sphere areas omitted from reduced integrals.

    Integrals over R^2m of doubly radial integrands reduce to s,t
    integrals times |S^(m-1)|^2; reported alongside energies, never
    applied to them.
    """
    return float(np.exp(2.0 * (math.log(2.0) + (m / 2.0) * math.log(math.pi)
                               - gammaln(m / 2.0))))


def compute_energy(sf, subdomain=None):
    """Weighted energy over an axis-aligned box in (s, t, lambda).

    Gradient term integrated with midpoint values on each cell of the
    graded mesh (cell measure integrated exactly), plus the potential
    term over bottom-face cells when the box touches lam = 0.  The box
    is (smin, smax), (tmin, tmax), (lmin, lmax); cells fully inside are
    counted.  The surface-area factor is deliberately not applied; see
    surface_area_factor.
    """
    grid = sf.grid
    if subdomain is None:
        subdomain = ((0.0, grid.S), (0.0, grid.S), (0.0, grid.Lambda))
    (s0, s1), (t0, t1), (l0, l1) = subdomain
    eps = 1e-9 * max(grid.S, grid.Lambda)
    if s0 < -eps or t0 < -eps or l0 < -eps or s1 > grid.S + eps \
            or t1 > grid.S + eps or l1 > grid.Lambda + eps or s0 >= s1 or t0 >= t1:
        raise ValueError("subdomain must be a nonempty box inside the grid")

    sn, ln = grid.s_nodes, grid.lambda_nodes
    isel = np.nonzero((sn[:-1] >= s0 - eps) & (sn[1:] <= s1 + eps))[0]
    ksel = np.nonzero((sn[:-1] >= t0 - eps) & (sn[1:] <= t1 + eps))[0]
    jsel = np.nonzero((ln[:-1] >= l0 - eps) & (ln[1:] <= l1 + eps))[0]

    u = sf.u
    d_gamma = sf.diagnostics.get("d_gamma", sf.params.d_gamma)
    m = grid.m
    a = grid.a
    dws = (sn[1:] ** m - sn[:-1] ** m) / m
    dwl = (ln[1:] ** (1 + a) - ln[:-1] ** (1 + a)) / (1 + a)
    dlam = ln[1:] - ln[:-1]
    h = grid.h

    total = 0.0
    if isel.size and ksel.size and jsel.size:
        ui = u[np.ix_(np.concatenate([isel, [isel[-1] + 1]]),
                      np.concatenate([ksel, [ksel[-1] + 1]]),
                      np.concatenate([jsel, [jsel[-1] + 1]]))]
        gs = (ui[1:, :, :] - ui[:-1, :, :]) / h
        gs = 0.25 * (gs[:, 1:, 1:] + gs[:, :-1, 1:] + gs[:, 1:, :-1] + gs[:, :-1, :-1])
        gt = (ui[:, 1:, :] - ui[:, :-1, :]) / h
        gt = 0.25 * (gt[1:, :, 1:] + gt[:-1, :, 1:] + gt[1:, :, :-1] + gt[:-1, :, :-1])
        gl = (ui[:, :, 1:] - ui[:, :, :-1]) / dlam[None, None, jsel]
        gl = 0.25 * (gl[1:, 1:, :] + gl[:-1, 1:, :] + gl[1:, :-1, :] + gl[:-1, :-1, :])
        cellw = dws[isel][:, None, None] * dws[ksel][None, :, None] * dwl[jsel][None, None, :]
        total += 0.5 * d_gamma * float(np.sum((gs**2 + gt**2 + gl**2) * cellw))

    if l0 <= eps and isel.size and ksel.size:
        ub = u[:, :, 0]
        umid = 0.25 * (ub[np.ix_(isel, ksel)] + ub[np.ix_(isel + 1, ksel)]
                       + ub[np.ix_(isel, ksel + 1)] + ub[np.ix_(isel + 1, ksel + 1)])
        gvals = eval_nonlinearity(sf.model, np.clip(umid, -1.0, 1.0), "G")
        total += float(np.sum(gvals * dws[isel][:, None] * dws[ksel][None, :]))
    return total


def save_saddle(sf, csv_path):
    """Write the half-domain nodes {s >= t} as CSV, lambda-major then t
    then s, plus a JSON manifest.  Columns are (s, t, lambda, u); when
    the field carries derivative estimates they follow as four more
    columns so a reloaded field keeps the estimates it was verified
    with (centered stencils from a padded solve cannot be recomputed
    from the restricted values alone)."""
    grid = sf.grid
    with_der = sf.us is not None
    rows = []
    for j, lam in enumerate(grid.lambda_nodes):
        for k, t in enumerate(grid.t_nodes):
            for i in range(k, grid.ns + 1):
                row = (grid.s_nodes[i], t, lam, sf.u[i, k, j])
                if with_der:
                    row += (sf.us[i, k, j], sf.ut[i, k, j],
                            sf.uy[i, k, j], sf.ust[i, k, j])
                rows.append(row)
    arr = np.array(rows)
    header = "s,t,lambda,u" + (",ds,dt,dy,dst" if with_der else "")
    np.savetxt(csv_path, arr, delimiter=",", header=header,
               comments="", fmt="%.17g")
    manifest = {
        "columns": header.split(","),
        "params": {"m": sf.params.m, "gamma": sf.params.gamma,
                   "d_gamma": sf.diagnostics.get("d_gamma", sf.params.d_gamma)},
        "model": getattr(sf.model, "name", "custom"),
        "grid": {"S": grid.S, "Lambda": grid.Lambda, "ns": grid.ns,
                 "nl": grid.nl, "p": grid.p},
        "residuals": sf.residuals,
        "energy": compute_energy(sf),
        "surface_area_factor": surface_area_factor(grid.m),
        "init": sf.init,
    }
    import os

    root, _ = os.path.splitext(csv_path)
    with open(root + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_saddle(csv_path):
    """Rebuild a SaddleField from the CSV + JSON pair written by save_saddle.

    Validates the manifest against the row count, restores the full array
    by odd reflection, and rejects non-finite values or values outside
    (-1, 1); only named models can be restored.
    """
    import os

    from .core import ProblemParams, model_by_name

    root, _ = os.path.splitext(csv_path)
    with open(root + ".json") as fh:
        manifest = json.load(fh)
    gspec = manifest["grid"]
    pspec = manifest["params"]
    params = ProblemParams(m=int(pspec["m"]), gamma=float(pspec["gamma"]))
    model = model_by_name(manifest["model"])
    grid = make_grid3(params, gspec["S"], gspec["Lambda"], int(gspec["ns"]),
                      int(gspec["nl"]), lambda_power=gspec["p"])

    ncols = len(manifest.get("columns", ["s", "t", "lambda", "u"]))
    arr = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    ns, nl = grid.ns, grid.nl
    nrows = (nl + 1) * (ns + 1) * (ns + 2) // 2
    if arr.ndim != 2 or arr.shape != (nrows, ncols):
        raise ValueError("field file does not match the grid in its manifest")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field file contains non-finite values")

    with_der = ncols == 8
    u = np.empty((ns + 1, ns + 1, nl + 1))
    der = [np.empty_like(u) for _ in range(4)] if with_der else None
    pos = 0
    for j in range(nl + 1):
        for k in range(ns + 1):
            cnt = ns + 1 - k
            vals = arr[pos:pos + cnt, 3]
            u[k:, k, j] = vals
            u[k, k:, j] = -vals
            if with_der:
                ds_v, dt_v, dy_v, dst_v = (arr[pos:pos + cnt, c]
                                           for c in (4, 5, 6, 7))
                der[0][k:, k, j] = ds_v
                der[1][k:, k, j] = dt_v
                der[2][k:, k, j] = dy_v
                der[3][k:, k, j] = dst_v
                # swapping the radii negates u, so the s-derivative at the
                # mirrored node is minus the t-derivative at the stored one
                der[0][k, k:, j] = -dt_v
                der[1][k, k:, j] = -ds_v
                der[2][k, k:, j] = -dy_v
                der[3][k, k:, j] = -dst_v
            pos += cnt
    if np.max(np.abs(u)) >= 1.0:
        raise ValueError("field file contains values outside (-1, 1)")

    sf = SaddleField(
        grid=grid, params=params, model=model, u=u,
        residual_norm=max(manifest["residuals"]["interior_rms"],
                          manifest["residuals"]["bottom_rms"]),
        residuals=dict(manifest["residuals"]),
        init=manifest.get("init", "unknown"),
        diagnostics={"d_gamma": float(pspec["d_gamma"])},
    )
    if with_der:
        sf.us, sf.ut, sf.uy, sf.ust = der
    return sf
