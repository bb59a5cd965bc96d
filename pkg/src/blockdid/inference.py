"""Plug-in identified sets and uniformly valid confidence sets.

Targets are linear functionals of the post-treatment effects.  For a
restriction family in overall-bias space, the plug-in identified set solves
two linear programs per member (the pre-treatment bias coordinates pinned at
their estimates) and unions the resulting intervals.

Confidence sets invert a two-stage hybrid moment-inequality test over a grid
of candidate values.  Writing the post effects as theta0 * lbar + X gamma
(lbar a fixed vector with l'lbar = 1, X a basis of the null space of l'), the
member constraints become moment inequalities linear in the nuisance gamma.
Stage one compares the studentized max moment, profiled over gamma by linear
programming, against a seeded Monte Carlo least-favorable critical value at
level kappa; stage two is a conditional test at level (alpha-kappa)/(1-kappa)
that conditions on the optimal vertex of the profiling program (and on
first-stage acceptance) via a truncated normal.  Degenerate vertices fall
back to the stage-one decision, which never over-rejects.  The profiling
program is solved as a maximum over the vertices of its dual polytope, which
makes the Monte Carlo stage and the grid sweep cheap; an LP path covers the
rare systems where vertex enumeration is unavailable.
"""

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sciopt
from scipy import stats as scistats

from .biasmap import BiasMap
from .estimators import AggregatedSeries, CoefficientSet
from .panel import CellIndex, CohortLayout
from .restrictions import Polyhedron, RestrictionFamily

__all__ = [
    "InferenceError",
    "AllMembersInfeasible",
    "UnboundedProgram",
    "SingularVcov",
    "TargetFunctional",
    "overall_att_target",
    "by_period_target",
    "custom_target",
    "GridSpec",
    "IntervalSet",
    "plugin_identified_set",
    "hybrid_test",
    "confidence_set",
    "default_grid",
    "corrected_point",
    "by_period_sets",
    "ByPeriodResult",
    "aggregated_system",
    "aggregated_att_target",
    "aggregated_confidence_set",
]

_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}
_VERTEX_TIE_TOL = 1e-9
_VERTEX_ENUM_CAP = 300_000
_DEFAULT_DRAWS = 10_000


class InferenceError(RuntimeError):
    code = "INFERENCE_ERROR"


class AllMembersInfeasible(InferenceError):
    code = "ALL_MEMBERS_INFEASIBLE"


class UnboundedProgram(InferenceError):
    code = "UNBOUNDED_PROGRAM"


class SingularVcov(InferenceError):
    code = "SINGULAR_VCOV"


# ---------------------------------------------------------------------------
# targets and interval sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetFunctional:
    """Linear weights over post-treatment cells defining theta = l' tau_post."""

    weights: np.ndarray  # over the full cell index
    description: str
    cells: CellIndex

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.cells),):
            raise ValueError("weights must span the full cell index")
        for p in np.flatnonzero(w):
            c = self.cells.cell(p)
            if not c.post or self.cells.structural_zero(p):
                raise ValueError(
                    f"target weight on non-post cell at position {p}"
                )
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def overall_att_target(layout: CohortLayout, cells: CellIndex) -> TargetFunctional:
    """Cohort-size weights over every post cell, normalized to sum to one."""
    w = np.zeros(len(cells))
    for p in range(len(cells)):
        c = cells.cell(p)
        if c.post:
            w[p] = layout.sizes[c.cohort]
    return TargetFunctional(weights=w / w.sum(), description="att", cells=cells)


def by_period_target(layout: CohortLayout, cells: CellIndex, s: int) -> TargetFunctional:
    """Cohort-size weights over the cohorts observed at relative period s."""
    w = np.zeros(len(cells))
    for p in range(len(cells)):
        c = cells.cell(p)
        if c.post and c.rel == s:
            w[p] = layout.sizes[c.cohort]
    if w.sum() == 0:
        raise ValueError(f"no cohort has post-treatment relative period {s}")
    return TargetFunctional(
        weights=w / w.sum(), description=f"period:{s}", cells=cells
    )


def custom_target(cells: CellIndex, weights, description="custom") -> TargetFunctional:
    return TargetFunctional(
        weights=np.asarray(weights, dtype=float), description=description, cells=cells
    )


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n: int

    def points(self):
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint closed intervals, sorted by left endpoint."""

    intervals: tuple
    provenance: str  # "plugin" | "confidence"
    alpha: float = None
    grid: GridSpec = None

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if b < a:
                raise ValueError(f"empty interval [{a}, {b}]")
        for (_, b1), (a2, _) in zip(ivs, ivs[1:]):
            if a2 <= b1:
                raise ValueError("intervals must be disjoint and sorted")
        object.__setattr__(self, "intervals", ivs)

    @property
    def is_empty(self):
        return not self.intervals

    @property
    def lo(self):
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def hi(self):
        return self.intervals[-1][1] if self.intervals else math.nan

    def contains(self, x, tol=0.0):
        return any(a - tol <= x <= b + tol for a, b in self.intervals)

    def covers(self, other, tol=1e-12):
        """True when every interval of ``other`` lies inside this set."""
        return all(
            any(a - tol <= oa and ob <= b + tol for a, b in self.intervals)
            for oa, ob in other.intervals
        )


def _merge_intervals(pairs, gap=0.0):
    out = []
    for a, b in sorted(pairs):
        if out and a <= out[-1][1] + gap:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return tuple((a, b) for a, b in out)


# ---------------------------------------------------------------------------
# plug-in identified set
# ---------------------------------------------------------------------------


def _reduced_member(member: Polyhedron, cells: CellIndex, positions):
    """Member rows restricted to the coefficient coordinate system."""
    A = member.A[:, positions]
    rows = [A]
    rhs = [member.d]
    if member.A_eq is not None:
        rows.append(member.A_eq[:, positions])
        rhs.append(member.d_eq)
    structural = [p for p in range(len(cells)) if cells.structural_zero(p)]
    for blk in (member.A, member.A_eq):
        if blk is not None and structural and np.abs(blk[:, structural]).max() > 1e-12:
            raise InferenceError("structural-zero columns must carry zero coefficients")
    return rows[0], rhs[0], (rows[1] if len(rows) > 1 else None), (
        rhs[1] if len(rhs) > 1 else None
    )


def _check_alignment(coeffs: CoefficientSet, family: RestrictionFamily):
    if family.space != "overall":
        raise InferenceError("family must be mapped to overall-bias space first")
    if len(family.cells) != len(coeffs.cells) or (
        family.cells.estimator != coeffs.cells.estimator
    ):
        raise InferenceError("cell index mismatch between family and coefficients")
    if not np.array_equal(coeffs.positions, coeffs.cells.value_positions):
        raise InferenceError("coefficient set must cover every non-structural cell")


def _member_bounds(coeffs, member, target):
    """[min, max] of l'(beta_post - delta_post) over one member, or None."""
    cells = coeffs.cells
    positions = coeffs.positions
    A, d, A_eq, d_eq = _reduced_member(member, cells, positions)
    n = len(positions)
    pre = np.array([cells.cell(p).pre for p in positions])
    l_vec = target.weights[positions]

    eq_rows = [np.eye(n)[pre]]
    eq_rhs = [coeffs.values[pre]]
    if A_eq is not None:
        eq_rows.append(A_eq)
        eq_rhs.append(d_eq)
    A_eq_full = np.vstack(eq_rows)
    b_eq_full = np.concatenate(eq_rhs)

    l_beta = float(l_vec @ coeffs.values)
    bounds = []
    for sign in (1.0, -1.0):
        res = sciopt.linprog(
            sign * l_vec,
            A_ub=A,
            b_ub=d,
            A_eq=A_eq_full,
            b_eq=b_eq_full,
            bounds=[(None, None)] * n,
            method="highs",
            options=_LP_OPTIONS,
        )
        if res.status == 2:
            return None
        if res.status == 3:
            raise UnboundedProgram(
                "identified-set program is unbounded; the member does not "
                "constrain the target"
            )
        if not res.success:
            raise InferenceError(f"linear program failed: {res.message}")
        bounds.append(sign * res.fun)
    min_ldelta, max_ldelta = bounds
    return (l_beta - max_ldelta, l_beta - min_ldelta)


def plugin_identified_set(
    coeffs: CoefficientSet, family: RestrictionFamily, target: TargetFunctional
) -> IntervalSet:
    """Union over members of the interval of target values consistent with
    the estimated coefficients and the member's constraints."""
    _check_alignment(coeffs, family)
    pairs = []
    for member in family.members:
        b = _member_bounds(coeffs, member, target)
        if b is not None:
            pairs.append(b)
    if not pairs:
        raise AllMembersInfeasible(
            "no member of the restriction family is consistent with the "
            "estimated pre-treatment coefficients"
        )
    return IntervalSet(intervals=_merge_intervals(pairs), provenance="plugin")


# ---------------------------------------------------------------------------
# hybrid moment-inequality test
# ---------------------------------------------------------------------------


@dataclass
class _MomentSystem:
    """Moments A_v (betahat - L theta0 - X gamma) - d <= 0, studentized.

    ``a0`` is the moment value at theta0 = 0, ``a1`` the loading on theta0,
    ``X`` the loading on the nuisance, ``sigma`` the Gaussian covariance of
    the moment vector.  Rows whose variance sits below the covariance
    matrix's rounding floor are deterministic: those not involving the
    nuisance move to ``det_*`` and are checked exactly, the rest drop
    (conservatively).
    """

    a0: np.ndarray
    a1: np.ndarray
    X: np.ndarray
    sigma: np.ndarray
    sd: np.ndarray
    det_a0: np.ndarray
    det_a1: np.ndarray
    det_tol: np.ndarray


def _column_space(X):
    """Orthonormal basis of the column space; the profiled test only depends
    on the span of the nuisance loadings, so redundant columns are dropped."""
    if X.shape[1] == 0:
        return X
    U, S, _ = np.linalg.svd(X, full_matrices=False)
    if S.size == 0 or S[0] == 0.0:
        return X[:, :0]
    r = int((S > max(X.shape) * np.finfo(float).eps * S[0]).sum())
    return U[:, :r]


def _nuisance_basis(l_post):
    """Target direction lbar (l'lbar = 1) and an orthonormal basis of the
    null space of l' on the post coordinates."""
    q = len(l_post)
    lbar = l_post / float(l_post @ l_post)
    if q == 1:
        return lbar, np.zeros((1, 0))
    Q, _ = np.linalg.qr(np.column_stack([l_post / np.linalg.norm(l_post), np.eye(q)]))
    return lbar, Q[:, 1:q]


def _build_moments(coeffs, member, target, nuisance_override=None):
    if coeffs.vcov is None:
        raise InferenceError("confidence sets need a coefficient covariance")
    cells = coeffs.cells
    positions = coeffs.positions
    if not np.array_equal(positions, cells.value_positions):
        raise InferenceError("coefficient set must cover every non-structural cell")
    A, d, A_eq, d_eq = _reduced_member(member, cells, positions)
    if A_eq is not None:
        A = np.vstack([A, A_eq, -A_eq])
        d = np.concatenate([d, d_eq, -d_eq])

    post = np.array([cells.cell(p).post for p in positions])
    q = int(post.sum())
    l_post = target.weights[positions][post]
    if not np.any(l_post):
        raise InferenceError("target has no weight on any post cell")
    lbar, X_post = _nuisance_basis(l_post)
    if nuisance_override is not None:
        X_post = nuisance_override
    n = len(positions)
    L_full = np.zeros(n)
    L_full[post] = lbar
    X_full = np.zeros((n, X_post.shape[1]))
    X_full[post, :] = X_post

    a0 = A @ coeffs.values - d
    a1 = A @ L_full
    X = _column_space(A @ X_full)
    sigma = A @ coeffs.vcov @ A.T
    sd = np.sqrt(np.clip(np.diag(sigma), 0.0, None))

    # a row's estimated variance is meaningless below the rounding floor of
    # row' Sigma row, which scales with the row norm and the largest
    # coefficient variance
    diag_scale = math.sqrt(float(np.max(np.diag(coeffs.vcov), initial=0.0)))
    row_norm = np.linalg.norm(A, axis=1)
    floor = 1e-6 * row_norm * max(diag_scale, 1e-12)
    tiny = sd <= floor
    det_mask = tiny & (np.abs(X).max(axis=1, initial=0.0) <= 1e-12)
    drop_mask = tiny & ~det_mask  # degenerate rows that involve the nuisance
    keep = ~(det_mask | drop_mask)
    if not keep.any():
        raise SingularVcov("every moment row has zero variance")
    beta_scale = 1.0 + float(np.max(np.abs(coeffs.values), initial=0.0))
    return _MomentSystem(
        a0=a0[keep],
        a1=a1[keep],
        X=X[keep],
        sigma=sigma[np.ix_(keep, keep)],
        sd=sd[keep],
        det_a0=a0[det_mask],
        det_a1=a1[det_mask],
        det_tol=1e-8 * (1.0 + row_norm[det_mask] * beta_scale),
    )


def _dual_vertices(sd, X):
    """Vertices of {lam >= 0 : sd'lam = 1, X'lam = 0}, or None if unavailable.

    The profiled max-moment statistic equals the maximum of lam'y over this
    polytope, so enumerating its vertices turns every later evaluation into a
    matrix product.
    """
    m = len(sd)
    W = np.column_stack([sd, X])
    p = W.shape[1]
    if m < p or np.linalg.matrix_rank(W) < p:
        return None
    if math.comb(m, p) > _VERTEX_ENUM_CAP:
        return None

    combos = np.array(list(itertools.combinations(range(m), p)))
    bases = W[combos, :]  # (n_combos, p, p), rows of W stacked per combo
    mats = np.transpose(bases, (0, 2, 1))  # W_S' per combo
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 1e-12
    if not ok.any():
        return None
    e1 = np.zeros((p, 1))
    e1[0, 0] = 1.0
    rhs = np.broadcast_to(e1, (int(ok.sum()), p, 1)).copy()
    sols = np.linalg.solve(mats[ok], rhs)[..., 0]
    feas = (sols >= -1e-9).all(axis=1)
    if not feas.any():
        return None
    verts = np.zeros((int(feas.sum()), m))
    rows = np.arange(int(feas.sum()))[:, None]
    verts[rows, combos[ok][feas]] = np.clip(sols[feas], 0.0, None)
    verts = np.unique(np.round(verts, 12), axis=0)
    return verts


def _eta_star_lp(y, X, sd):
    """min eta s.t. y - X gamma <= eta * sd, plus the dual solution."""
    m, k = X.shape
    c = np.zeros(1 + k)
    c[0] = 1.0
    A_ub = np.column_stack([-sd, -X])
    res = sciopt.linprog(
        c,
        A_ub=A_ub,
        b_ub=-y,
        bounds=[(None, None)] * (1 + k),
        method="highs",
        options=_LP_OPTIONS,
    )
    if res.status == 3:
        # nuisance can push every moment arbitrarily negative: never reject
        return -np.inf, np.zeros(m)
    if not res.success:
        raise InferenceError(f"profiling program failed: {res.message}")
    lam = -res.ineqlin.marginals
    return float(res.x[0]), np.clip(lam, 0.0, None)


@dataclass
class _HybridContext:
    """Per-(member, target) state shared across the whole grid."""

    moments: _MomentSystem
    vertices: np.ndarray  # None -> LP path
    lf_cv: float
    kappa: float


def _gaussian_root(sigma):
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _prepare_context(moments, kappa, draws, seed):
    verts = _dual_vertices(moments.sd, moments.X)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    root = _gaussian_root(moments.sigma)
    xi = rng.standard_normal((draws, root.shape[1])) @ root.T
    if verts is not None:
        eta = (verts @ xi.T).max(axis=0)
    else:
        eta = np.array(
            [_eta_star_lp(x, moments.X, moments.sd)[0] for x in xi]
        )
    lf_cv = float(np.quantile(eta, 1.0 - kappa))
    return _HybridContext(moments=moments, vertices=verts, lf_cv=lf_cv, kappa=kappa)


def _truncnorm_quantile(p, lo, hi):
    """Quantile of a standard normal truncated to [lo, hi]."""
    if lo >= hi:
        return lo
    if np.isinf(lo) and np.isinf(hi):
        return float(scistats.norm.ppf(p))
    val = float(scistats.truncnorm.ppf(p, a=lo, b=hi))
    if not np.isfinite(val):
        return hi if np.isfinite(hi) else lo
    return val


def _conditional_stage(ctx, y, alpha, eta=None, vals=None):
    """Second-stage decision given first-stage acceptance at theta0.

    Conditions on the optimal dual vertex; a degenerate optimum (tie or
    short support) falls back to the first-stage decision, i.e. acceptance.
    """
    mom = ctx.moments
    verts = ctx.vertices
    if vals is None:
        vals = verts @ y
    order = np.argsort(vals)
    best = order[-1]
    eta_star = vals[best] if eta is None else eta
    scale = 1.0 + abs(eta_star)
    if len(vals) > 1 and vals[order[-2]] > eta_star - _VERTEX_TIE_TOL * scale:
        return False  # degenerate vertex: keep the (accepting) stage-one call
    lam = verts[best]
    p_expected = 1 + mom.X.shape[1]
    if int((lam > _VERTEX_TIE_TOL).sum()) != p_expected:
        return False
    sig2 = float(lam @ mom.sigma @ lam)
    if sig2 <= 1e-24:
        return bool(eta_star > 0)
    sig = math.sqrt(sig2)
    c = mom.sigma @ lam / sig2
    vc = verts @ c
    vz = vals - vc * eta_star
    lo_set = 1.0 - vc > _VERTEX_TIE_TOL
    hi_set = 1.0 - vc < -_VERTEX_TIE_TOL
    vlo = (
        float(np.max(vz[lo_set] / (1.0 - vc[lo_set]))) if lo_set.any() else -np.inf
    )
    vup = (
        float(np.min(vz[hi_set] / (1.0 - vc[hi_set]))) if hi_set.any() else np.inf
    )
    vup = min(vup, ctx.lf_cv)  # condition on first-stage acceptance
    if not (vlo - 1e-9 * scale <= eta_star <= vup + 1e-9 * scale):
        return False
    alpha_mod = (alpha - ctx.kappa) / (1.0 - ctx.kappa)
    cval = max(0.0, sig * _truncnorm_quantile(1.0 - alpha_mod, vlo / sig, vup / sig))
    return bool(eta_star > cval)


def _test_point(ctx, theta0, alpha):
    """Hybrid rejection decision for one candidate value."""
    mom = ctx.moments
    if len(mom.det_a0) and np.any(mom.det_a0 - mom.det_a1 * theta0 > mom.det_tol):
        return True
    y = mom.a0 - mom.a1 * theta0
    if ctx.vertices is not None:
        vals = ctx.vertices @ y
        eta_star = float(vals.max())
        if eta_star > ctx.lf_cv:
            return True
        return _conditional_stage(ctx, y, alpha, eta=eta_star, vals=vals)
    eta_star, lam = _eta_star_lp(y, mom.X, mom.sd)
    if eta_star > ctx.lf_cv:
        return True
    # degenerate-vertex detection on the LP duals; fall back to stage one
    basic = lam > _VERTEX_TIE_TOL
    if int(basic.sum()) != 1 + mom.X.shape[1]:
        return False
    sig2 = float(lam @ mom.sigma @ lam)
    if sig2 <= 1e-24:
        return bool(eta_star > 0)
    sig = math.sqrt(sig2)
    c = mom.sigma @ lam / sig2
    z = y - c * eta_star
    # the basis stays optimal while every non-basic moment keeps its slack:
    # y_j <= [sd_j, X_j] W_B^-1 y_B, linear in the statistic along y(S)=z+cS
    W_full = np.column_stack([mom.sd, mom.X])
    try:
        WB_inv = np.linalg.inv(W_full[basic])
    except np.linalg.LinAlgError:
        return False
    proj = W_full[~basic] @ WB_inv
    const = proj @ z[basic] - z[~basic]
    slope = proj @ c[basic] - c[~basic]
    scale = 1.0 + abs(eta_star)
    lo_set = slope > _VERTEX_TIE_TOL  # slack requires const + slope*S >= 0
    hi_set = slope < -_VERTEX_TIE_TOL
    vlo = float(np.max(-const[lo_set] / slope[lo_set])) if lo_set.any() else -np.inf
    vup = float(np.min(-const[hi_set] / slope[hi_set])) if hi_set.any() else np.inf
    vup = min(vup, ctx.lf_cv)
    if not (vlo - 1e-9 * scale <= eta_star <= vup + 1e-9 * scale):
        return False
    alpha_mod = (alpha - ctx.kappa) / (1.0 - ctx.kappa)
    cval = max(0.0, sig * _truncnorm_quantile(1.0 - alpha_mod, vlo / sig, vup / sig))
    return bool(eta_star > cval)


def hybrid_test(
    coeffs: CoefficientSet,
    member: Polyhedron,
    target: TargetFunctional,
    theta0: float,
    alpha: float = 0.05,
    kappa: float = None,
    draws: int = _DEFAULT_DRAWS,
    seed: int = 0,
    nuisance_override=None,
) -> bool:
    """Reject H0: theta = theta0 under one member's restrictions.

    Returns True when the hybrid test rejects.  ``kappa`` defaults to
    alpha / 10; ``draws`` sizes the least-favorable Monte Carlo stage.
    """
    if kappa is None:
        kappa = alpha / 10.0
    if not 0.0 < kappa < alpha < 1.0:
        raise ValueError("need 0 < kappa < alpha < 1")
    moments = _build_moments(coeffs, member, target, nuisance_override)
    ctx = _prepare_context(moments, kappa, draws, seed)
    return _test_point(ctx, theta0, alpha)


# ---------------------------------------------------------------------------
# confidence sets by grid inversion
# ---------------------------------------------------------------------------


def default_grid(
    coeffs: CoefficientSet,
    family: RestrictionFamily,
    target: TargetFunctional,
    pad_ses: float = 10.0,
    n: int = 201,
) -> GridSpec:
    """Plug-in bounds padded by ``pad_ses`` standard errors of the estimate."""
    plug = plugin_identified_set(coeffs, family, target)
    l_vec = target.weights[coeffs.positions]
    se = math.sqrt(max(float(l_vec @ coeffs.vcov @ l_vec), 0.0))
    pad = pad_ses * se if se > 0 else max(1.0, abs(plug.hi - plug.lo))
    return GridSpec(lo=plug.lo - pad, hi=plug.hi + pad, n=n)


def confidence_set(
    coeffs: CoefficientSet,
    family: RestrictionFamily,
    target: TargetFunctional,
    alpha: float = 0.05,
    grid: GridSpec = None,
    kappa: float = None,
    draws: int = _DEFAULT_DRAWS,
    seed: int = 0,
) -> IntervalSet:
    """Invert the hybrid test over a grid, unioning acceptance over members.

    A candidate value enters the confidence set as soon as one member's test
    accepts it; members are visited in family order so results do not depend
    on scheduling.  An empty set is a legal outcome.
    """
    _check_alignment(coeffs, family)
    if kappa is None:
        kappa = alpha / 10.0
    if grid is None:
        grid = default_grid(coeffs, family, target)
    points = grid.points()
    accepted = np.zeros(len(points), dtype=bool)
    for member in family.members:
        todo = np.flatnonzero(~accepted)
        if len(todo) == 0:
            break
        moments = _build_moments(coeffs, member, target)
        ctx = _prepare_context(moments, kappa, draws, seed)
        if ctx.vertices is not None and len(moments.det_a0) == 0:
            vals0 = ctx.vertices @ moments.a0
            vals1 = ctx.vertices @ moments.a1
            etas = vals0[:, None] - np.outer(vals1, points[todo])
            eta_star = etas.max(axis=0)
            pass1 = eta_star <= ctx.lf_cv
            for j, idx in enumerate(todo):
                if not pass1[j]:
                    continue
                accepted[idx] = not _conditional_stage(
                    ctx,
                    moments.a0 - moments.a1 * points[idx],
                    alpha,
                    eta=float(eta_star[j]),
                    vals=etas[:, j],
                )
        else:
            for idx in todo:
                accepted[idx] = not _test_point(ctx, points[idx], alpha)
    if accepted.any() and (accepted[0] or accepted[-1]):
        warnings.warn(
            "confidence set touches the grid boundary; widen the grid",
            stacklevel=2,
        )
    if not accepted.any():
        warnings.warn(
            "confidence set is empty on the supplied grid",
            stacklevel=2,
        )
    intervals = []
    run_start = None
    for i, ok in enumerate(accepted):
        if ok and run_start is None:
            run_start = i
        if not ok and run_start is not None:
            intervals.append((points[run_start], points[i - 1]))
            run_start = None
    if run_start is not None:
        intervals.append((points[run_start], points[-1]))
    return IntervalSet(
        intervals=tuple(intervals), provenance="confidence", alpha=alpha, grid=grid
    )


# ---------------------------------------------------------------------------
# corrected points and by-period sets
# ---------------------------------------------------------------------------


def _corrected_weights(
    cells: CellIndex, positions, family_kind: str, bias_map: BiasMap, target
):
    """Weight vector c with corrected point = c' betahat.

    At sensitivity zero the post-treatment block-bias path is a linear
    function of the pre-treatment coefficients: constant at the last pre
    value for relative-magnitude families, the straight line through the
    last two pre values for second differences.  The implied overall bias is
    that path mapped through W, and the corrected point subtracts it from
    the target, so the whole correction is one fixed linear map.
    """
    n = len(cells)
    n_val = len(positions)
    value_index = {p: j for j, p in enumerate(positions)}

    def coeff_column(t_g, s):
        p = cells.position(t_g, s)
        return None if cells.structural_zero(p) else value_index[p]

    D = np.zeros((n, n_val))  # block path at sensitivity zero, per coefficient
    for p in range(n):
        c = cells.cell(p)
        if cells.structural_zero(p):
            continue
        if c.pre:
            D[p, value_index[p]] = 1.0
            continue
        base = coeff_column(c.cohort_time, 0)
        if family_kind in ("rm-global", "rm-cohort"):
            if base is not None:
                D[p, base] = 1.0
        elif family_kind == "sd":
            prev = coeff_column(c.cohort_time, -1)
            if base is not None:
                D[p, base] = 1.0 + c.rel
            if prev is not None:
                D[p, prev] -= c.rel
        else:
            raise ValueError(f"unknown family kind {family_kind!r}")

    M = (bias_map.W @ D)[positions, :]
    post = np.array([cells.cell(p).post for p in positions])
    l_vec = target.weights[positions]
    return l_vec - M[post].T @ l_vec[post]


def corrected_point(
    coeffs: CoefficientSet,
    family_kind: str,
    bias_map: BiasMap,
    target: TargetFunctional,
) -> float:
    """Debiased point estimate at sensitivity zero (the plug-in point)."""
    c_vec = _corrected_weights(
        coeffs.cells, coeffs.positions, family_kind, bias_map, target
    )
    return float(c_vec @ coeffs.values)


@dataclass(frozen=True)
class ByPeriodResult:
    rel_period: int
    confidence: IntervalSet
    corrected: float
    corrected_se: float


def by_period_sets(
    coeffs: CoefficientSet,
    family: RestrictionFamily,
    bias_map: BiasMap,
    layout: CohortLayout,
    alpha: float = 0.05,
    grid: GridSpec = None,
    kappa: float = None,
    draws: int = _DEFAULT_DRAWS,
    seed: int = 0,
) -> dict:
    """Confidence set and zero-sensitivity corrected point per post period."""
    cells = coeffs.cells
    rels = sorted(
        {
            cells.cell(p).rel
            for p in coeffs.positions
            if cells.cell(p).post
        }
    )
    out = {}
    for s in rels:
        target = by_period_target(layout, cells, s)
        cset = confidence_set(
            coeffs, family, target, alpha=alpha, grid=grid, kappa=kappa,
            draws=draws, seed=seed,
        )
        point = corrected_point(coeffs, family.family, bias_map, target)
        se = _corrected_se(coeffs, family.family, bias_map, target)
        out[s] = ByPeriodResult(
            rel_period=s, confidence=cset, corrected=point, corrected_se=se
        )
    return out


def _corrected_se(coeffs, family_kind, bias_map, target):
    """Standard error of the corrected point (a linear map of the estimates)."""
    if coeffs.vcov is None:
        return math.nan
    c_vec = _corrected_weights(
        coeffs.cells, coeffs.positions, family_kind, bias_map, target
    )
    return math.sqrt(max(float(c_vec @ coeffs.vcov @ c_vec), 0.0))


# ---------------------------------------------------------------------------
# aggregated framework
# ---------------------------------------------------------------------------


def aggregated_system(agg: AggregatedSeries):
    """Recast an aggregated series as a one-cohort system with identity map.

    The aggregated bias path plays the role of a single pseudo-cohort whose
    adoption time makes the relative periods line up; restrictions built on
    the returned layout and cells then apply directly to the aggregated
    coefficients, with no cross-cohort adjustment.
    """
    from .biasmap import build_w_csnyt, build_w_imputation, invert
    from .panel import build_cell_index

    smin = int(agg.rel_periods.min())
    smax = int(agg.rel_periods.max())
    t_pseudo = 2 - smin
    T_pseudo = t_pseudo + smax - 1
    layout = CohortLayout(
        times=(t_pseudo,),
        sizes=(1,),
        never_size=1,
        cohort_units=(np.array([0]),),
        never_units=np.array([1]),
        n_periods=T_pseudo,
    )
    cells = build_cell_index(layout, T_pseudo, agg.estimator)
    expected = [
        s
        for s in range(smin, smax + 1)
        if not (agg.estimator == "csnyt" and s == 0)
    ]
    if list(agg.rel_periods) != expected:
        raise InferenceError(
            "aggregated series does not cover a contiguous relative-period range"
        )
    coeffs = CoefficientSet(
        estimator=agg.estimator,
        cells=cells,
        positions=cells.value_positions,
        values=agg.values,
        vcov=agg.vcov,
        aggregated=True,
    )
    builder = build_w_imputation if agg.estimator == "imputation" else build_w_csnyt
    bias_map = invert(builder(layout, cells))
    return layout, cells, coeffs, bias_map


def aggregated_att_target(agg: AggregatedSeries, cells: CellIndex) -> TargetFunctional:
    """Weights over aggregated post periods proportional to the treated
    units identified at each period, matching the cohort-level functional."""
    w = np.zeros(len(cells))
    for s, size in zip(agg.rel_periods, agg.support_sizes):
        if s >= 1:
            w[cells.position(cells.cell(0).cohort_time, int(s))] = size
    return TargetFunctional(weights=w / w.sum(), description="att", cells=cells)


def aggregated_confidence_set(
    agg: AggregatedSeries,
    family: RestrictionFamily,
    target: TargetFunctional,
    alpha: float = 0.05,
    grid: GridSpec = None,
    kappa: float = None,
    draws: int = _DEFAULT_DRAWS,
    seed: int = 0,
) -> IntervalSet:
    """Confidence set for a target on the aggregated bias path."""
    _, _, coeffs, bias_map = aggregated_system(agg)
    if family.space == "block":
        from .restrictions import map_to_delta_space

        family = map_to_delta_space(family, bias_map)
    return confidence_set(
        coeffs, family, target, alpha=alpha, grid=grid, kappa=kappa,
        draws=draws, seed=seed,
    )
