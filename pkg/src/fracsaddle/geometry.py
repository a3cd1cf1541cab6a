"""Monte Carlo estimates of weighted measures near the symmetric cone.

Sets are described by small declarative records so the same estimator
serves slabs, wedges around the cone, tube neighborhoods, boxes and
half spaces, plus complements of any of these.  Measures are taken in
the upper half space R^n x (0, inf) against the weight lam^a with
a in (-1, 1); the lam coordinate is importance-sampled exactly from
its power-law marginal, the spatial coordinate uniformly from the ball
slice, so the only error is the reported Monte Carlo standard error.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import beta as beta_fn, gammaln

_KINDS = ("slab", "double-cone-wedge", "epsilon-neighborhood", "box",
          "half-space-complement", "complement")


@dataclass(frozen=True)
class SetDescriptor:
    """Membership test for one region of R^n x (0, inf).

    kind selects the shape, params its numbers; complement wraps another
    descriptor.  Regions that split the spatial coordinates into the two
    radii carry the half-dimension m in params.
    """

    kind: str
    params: dict = None
    inner: "SetDescriptor" = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError("unknown set kind %r" % (self.kind,))
        if self.kind == "complement" and self.inner is None:
            raise ValueError("complement needs an inner descriptor")

    def contains(self, x, lam):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lam = np.asarray(lam, dtype=float)
        p = self.params or {}
        if self.kind == "slab":
            return (lam > 0.0) & (lam < p["eps"])
        if self.kind == "complement":
            return ~self.inner.contains(x, lam)
        if self.kind == "box":
            b = np.asarray(p["bounds"], dtype=float)
            return np.all((x >= b[:, 0]) & (x <= b[:, 1]), axis=1)
        if self.kind == "half-space-complement":
            normal = np.asarray(p["normal"], dtype=float)
            return x @ normal > p["offset"]
        if self.kind == "double-cone-wedge":
            # bowtie over the bottom plane: extension height below a
            # multiple of the distance to the spatial origin
            return lam < p["slope"] * np.linalg.norm(x, axis=1)
        # epsilon-neighborhood: tube around the symmetric cone on its
        # {s > t} side, any extension height
        m = int(p["m"])
        s = np.linalg.norm(x[:, :m], axis=1)
        t = np.linalg.norm(x[:, m:], axis=1)
        eps = p["eps"]
        if math.isinf(eps):
            return s > t
        return (s > t) & ((s - t) / math.sqrt(2.0) < eps)


def slab(eps):
    return SetDescriptor("slab", {"eps": float(eps)})


def cone_wedge(slope):
    return SetDescriptor("double-cone-wedge", {"slope": float(slope)})


def cone_neighborhood(m, eps, sample_bounds=None):
    params = {"m": int(m), "eps": float(eps)}
    if sample_bounds is not None:
        params["sample_bounds"] = [[float(a), float(b)]
                                   for a, b in sample_bounds]
    return SetDescriptor("epsilon-neighborhood", params)


def box(bounds):
    return SetDescriptor("box", {"bounds": [[float(a), float(b)]
                                            for a, b in bounds]})


def half_space_complement(normal, offset):
    return SetDescriptor("half-space-complement",
                         {"normal": [float(v) for v in normal],
                          "offset": float(offset)})


def complement(desc):
    return SetDescriptor("complement", inner=desc)


def ball_volume(n, r):
    """Volume of the n-ball of radius r."""
    return math.exp(0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0)
                    + n * math.log(r)) if r > 0 else 0.0


def upper_half_ball_measure(n, a, R):
    """Exact lam^a-measure of the upper half ball of radius R."""
    return (ball_volume(n, 1.0) * R ** (n + 1 + a) * 0.5
            * beta_fn(0.5 * (a + 1.0), 0.5 * n + 1.0))


def _check_mc_args(a, samples):
    if not (-1.0 < a < 1.0):
        raise ValueError("weight exponent a must lie in (-1, 1)")
    if samples < 10_000:
        raise ValueError("need at least 10000 samples for a usable "
                         "standard error")


def _uniform_ball(rng, count, n, radii):
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = rng.random(count) ** (1.0 / n)
    return g * (u * radii)[:, None]


def weighted_measure(desc, x0, R, a, samples=100_000, seed=0):
    """lam^a-measure of desc inside the upper half ball B+_R(x0).

    x0 sits on the bottom face.  Returns (estimate, standard error).
    """
    _check_mc_args(a, samples)
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if R <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    lam = R * rng.random(samples) ** (1.0 / (1.0 + a))
    radii = np.sqrt(np.maximum(R * R - lam * lam, 0.0))
    x = x0 + _uniform_ball(rng, samples, n, radii)
    vols = ball_volume(n, 1.0) * radii ** n
    y = vols * desc.contains(x, lam)
    factor = R ** (1.0 + a) / (1.0 + a)
    est = factor * float(np.mean(y))
    err = factor * float(np.std(y)) / math.sqrt(samples)
    return est, err


def cone_points(m, rho, count, seed=0):
    """count points of the symmetric cone with both radii equal to rho."""
    rng = np.random.default_rng(seed)
    xs = np.empty((count, 2 * m))
    for block in (slice(0, m), slice(m, 2 * m)):
        g = rng.standard_normal((count, m))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        xs[:, block] = rho * g
    return xs


def half_ball_cone_ratio(m, x0, r, samples=1_000_000, seed=0):
    """Fraction of the full ball B_r(x0) lying on the {s > t} side.

    x0 must lie on the cone (equal radii).  Lebesgue measure in R^(2m),
    no extension variable.  Returns (ratio, standard error).
    """
    if samples < 10_000:
        raise ValueError("need at least 10000 samples for a usable "
                         "standard error")
    x0 = np.asarray(x0, dtype=float)
    if x0.size != 2 * m:
        raise ValueError("x0 must have 2m coordinates")
    s0 = np.linalg.norm(x0[:m])
    t0 = np.linalg.norm(x0[m:])
    if abs(s0 - t0) > 1e-12 * max(1.0, s0 + t0):
        raise ValueError("x0 is not on the cone: radii differ by %.3e"
                         % abs(s0 - t0))
    rng = np.random.default_rng(seed)
    x = x0 + _uniform_ball(rng, samples, 2 * m, np.full(samples, float(r)))
    s = np.linalg.norm(x[:, :m], axis=1)
    t = np.linalg.norm(x[:, m:], axis=1)
    inside = s > t
    ratio = float(np.mean(inside))
    err = float(np.std(inside)) / math.sqrt(samples)
    return ratio, err


@dataclass
class NarrowRadiusReport:
    """Outcome of the narrowness-radius search."""

    radius: float
    resolved: bool
    theta: float
    table: list

    def as_dict(self):
        return {
            "radius": (None if self.radius is None else float(self.radius)),
            "resolved": bool(self.resolved),
            "theta": float(self.theta),
            "table": self.table,
        }


def sample_on_bottom(desc, count, rng):
    """count points of the bottom-face set desc, by rejection.

    Needs bounded support: a box uses its own bounds, any other kind
    must carry params["sample_bounds"].
    """
    p = desc.params or {}
    bounds = p.get("bounds") if desc.kind == "box" else p.get("sample_bounds")
    if bounds is None:
        raise ValueError("descriptor has no sampling bounds; add "
                         "sample_bounds or pass explicit probe points")
    b = np.asarray(bounds, dtype=float)
    out = []
    have = 0
    for _ in range(1000):
        cand = b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random((4 * count,
                                                           b.shape[0]))
        keep = desc.contains(cand, np.zeros(cand.shape[0]))
        cand = cand[keep]
        out.append(cand)
        have += cand.shape[0]
        if have >= count:
            break
    if have < count:
        raise ValueError("could not draw %d probe points from the set; "
                         "is it (almost) empty inside its bounds?" % count)
    return np.concatenate(out)[:count]


def _min_ratio(omega_c, probes, R, a, samples, seed_seq):
    n = probes.shape[1]
    denom = upper_half_ball_measure(n, a, R)
    worst = math.inf
    worst_err = 0.0
    for idx, x0 in enumerate(probes):
        est, err = weighted_measure(omega_c, x0, R, a, samples=samples,
                                    seed=seed_seq + idx)
        ratio = est / denom
        if ratio < worst:
            worst, worst_err = ratio, err / denom
    return worst, worst_err


def narrow_radius(omega, gamma_set, theta, a, R_grid, probe_points=8,
                  samples=100_000, seed=0):
    """Smallest radius past which the complement of omega fills the
    theta fraction of every upper half ball centered on the probe set.

    For each R the worst (smallest) complement fraction over the probes
    is compared against theta; the answer is the first grid radius from
    which every later one qualifies, refined by bisection on the worst
    fraction.  If no radius qualifies and the fraction has stopped
    rising at the largest R (within three standard errors), the answer
    is infinity; if it is still rising the search is unresolved and the
    grid should be extended.
    """
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    R_grid = [float(R) for R in R_grid]
    if len(R_grid) < 2 or any(b <= a_ for a_, b in zip(R_grid, R_grid[1:])):
        raise ValueError("R_grid must be strictly increasing")
    if isinstance(gamma_set, SetDescriptor):
        probes = sample_on_bottom(gamma_set, probe_points,
                                  np.random.default_rng(seed))
    elif callable(gamma_set):
        probes = np.atleast_2d(np.asarray(
            gamma_set(probe_points, np.random.default_rng(seed))))
    else:
        probes = np.atleast_2d(np.asarray(gamma_set, dtype=float))
    omega_c = complement(omega)

    table = []
    ratios, errs = [], []
    for pos, R in enumerate(R_grid):
        worst, werr = _min_ratio(omega_c, probes, R, a, samples,
                                 seed + 1000 * (pos + 1))
        ratios.append(worst)
        errs.append(werr)
        table.append({"R": R, "min_ratio": worst, "stderr": werr})

    qual = [r >= theta for r in ratios]
    first = None
    for pos in range(len(qual)):
        if all(qual[pos:]):
            first = pos
            break

    if first is None:
        rising = ratios[-1] > ratios[-2] + 3.0 * (errs[-1] + errs[-2])
        if rising:
            return NarrowRadiusReport(radius=None, resolved=False,
                                      theta=theta, table=table)
        return NarrowRadiusReport(radius=math.inf, resolved=True,
                                  theta=theta, table=table)

    lo = R_grid[first - 1] if first > 0 else 0.01 * R_grid[0]
    hi = R_grid[first]
    for it in range(12):
        mid = 0.5 * (lo + hi)
        worst, _ = _min_ratio(omega_c, probes, mid, a, samples,
                              seed + 777 * (it + 1))
        if worst >= theta:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-3 * R_grid[first]:
            break
    return NarrowRadiusReport(radius=hi, resolved=True, theta=theta,
                              table=table)
