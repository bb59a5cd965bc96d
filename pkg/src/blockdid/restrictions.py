"""Polyhedral restriction families on block biases.

A restriction family is a finite union of polyhedra {Delta : A Delta <= d}
over the full cell-index coordinate system.  Three families are provided:

* relative magnitudes with a global benchmark (``rm-global``): post-treatment
  consecutive changes of every cohort's block bias are bounded by Mbar times
  one candidate pre-treatment change, enumerated over all cohorts, periods,
  and signs;
* relative magnitudes with cohort-specific benchmarks (``rm-cohort``): each
  cohort is bounded by a candidate change from its own pre-treatment history,
  enumerated over the Cartesian product of per-cohort choices;
* second differences (``sd``): a single polyhedron bounding the change in
  slope of every cohort's block-bias path by M.

Sign enumeration keeps every member linear; members whose benchmark has the
wrong sign are retained (they are simply infeasible once data are plugged
in), so the family never depends on the sample.  Families are built in
block-bias space and mapped to overall-bias space with the inverse bias map.
"""

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .biasmap import BiasMap
from .panel import CellIndex, CohortLayout

__all__ = [
    "RestrictionError",
    "NoPreDifferences",
    "CohortWithoutPreDifference",
    "CohortWithoutTwoPrePeriods",
    "MemberCountExceedsCap",
    "Polyhedron",
    "RestrictionFamily",
    "rm_global",
    "rm_cohort",
    "sd",
    "with_normalization",
    "map_to_delta_space",
    "family_summary",
]

MEMBER_CAP = 100_000


class RestrictionError(ValueError):
    code = "RESTRICTION_ERROR"


class NoPreDifferences(RestrictionError):
    code = "NO_PRE_DIFFERENCES"


class CohortWithoutPreDifference(RestrictionError):
    code = "COHORT_WITHOUT_PRE_DIFFERENCE"


class CohortWithoutTwoPrePeriods(RestrictionError):
    code = "COHORT_WITHOUT_TWO_PRE_PERIODS"


class MemberCountExceedsCap(RestrictionError):
    code = "MEMBER_COUNT_EXCEEDS_CAP"


@dataclass(frozen=True)
class Polyhedron:
    """One member {x : A x <= d, A_eq x = d_eq} over the full cell index."""

    A: np.ndarray
    d: np.ndarray
    A_eq: np.ndarray = None
    d_eq: np.ndarray = None
    label: dict = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if A.shape[0] != d.shape[0]:
            raise ValueError("A and d row counts differ")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "d", d)
        if self.A_eq is not None:
            A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            d_eq = np.asarray(self.d_eq, dtype=float).ravel()
            if A_eq.shape[1] != A.shape[1] or A_eq.shape[0] != d_eq.shape[0]:
                raise ValueError("equality block shape mismatch")
            object.__setattr__(self, "A_eq", A_eq)
            object.__setattr__(self, "d_eq", d_eq)

    @property
    def n_columns(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class RestrictionFamily:
    """Finite union of polyhedra with benchmark metadata.

    ``space`` is ``block`` for restrictions on block biases and ``overall``
    once mapped through the inverse bias map.  Feasible set = union of
    members.
    """

    family: str
    parameter: float
    members: tuple
    space: str
    cells: CellIndex

    def __post_init__(self):
        if not self.members:
            raise RestrictionError("family must have at least one member")
        n = len(self.cells)
        if any(m.n_columns != n for m in self.members):
            raise RestrictionError("member column count does not match cell index")
        if self.parameter < 0:
            raise RestrictionError("sensitivity parameter must be nonnegative")

    @property
    def member_count(self):
        return len(self.members)


def _pre_diff_slots(layout: CohortLayout):
    """Per cohort, the rel periods s* with a consecutive pre difference
    (both (g, s*) and (g, s*-1) are pre cells)."""
    return [list(range(3 - t_g, 1)) for t_g in layout.times]


def _post_rels(layout: CohortLayout, g):
    return range(1, layout.n_periods - layout.times[g] + 2)


def _zero_structural(row, cells: CellIndex):
    for p in range(len(cells)):
        if cells.structural_zero(p):
            row[p] = 0.0
    return row


def _diff_row(cells: CellIndex, t_g, s, coeff=1.0):
    """Row picking coeff * (Delta_{g,s} - Delta_{g,s-1})."""
    row = np.zeros(len(cells))
    row[cells.position(t_g, s)] += coeff
    row[cells.position(t_g, s - 1)] -= coeff
    return row


def _rm_member(layout, cells, mbar, benchmarks):
    """Member bounding every cohort's post differences by its assigned
    signed benchmark difference; ``benchmarks`` maps cohort -> (k, s*, sign)."""
    rows = []
    for g, t_g in enumerate(layout.times):
        k, s_star, sign = benchmarks[g]
        bench = _diff_row(cells, layout.times[k], s_star, coeff=mbar * sign)
        for s in _post_rels(layout, g):
            base = _diff_row(cells, t_g, s)
            rows.append(_zero_structural(base - bench, cells))
            rows.append(_zero_structural(-base - bench, cells))
    label = {
        "benchmarks": [
            (layout.times[g], layout.times[k], s_star, "+" if sign > 0 else "-")
            for g, (k, s_star, sign) in sorted(benchmarks.items())
        ]
    }
    return Polyhedron(A=np.array(rows), d=np.zeros(len(rows)), label=label)


def rm_global(layout: CohortLayout, cells: CellIndex, mbar: float) -> RestrictionFamily:
    """Relative-magnitudes family with one benchmark shared by all cohorts.

    One member per (benchmark cohort, benchmark pre period, sign); cohorts
    with no pre-treatment difference contribute no benchmark candidates but
    are still constrained inside every member.
    """
    slots = _pre_diff_slots(layout)
    candidates = [
        (k, s_star)
        for k, ss in enumerate(slots)
        for s_star in ss
    ]
    if not candidates:
        raise NoPreDifferences(
            "no cohort has two consecutive pre-treatment periods"
        )
    members = []
    for k, s_star in candidates:
        for sign in (1.0, -1.0):
            bench = {g: (k, s_star, sign) for g in range(layout.n_cohorts)}
            members.append(_rm_member(layout, cells, mbar, bench))
    return RestrictionFamily(
        family="rm-global",
        parameter=mbar,
        members=tuple(members),
        space="block",
        cells=cells,
    )


def rm_cohort(
    layout: CohortLayout, cells: CellIndex, mbar: float, cap: int = MEMBER_CAP
) -> RestrictionFamily:
    """Relative-magnitudes family with per-cohort benchmarks.

    Members enumerate the Cartesian product of each cohort's (pre period,
    sign) choices, so the count grows multiplicatively with the number of
    cohorts; ``cap`` guards against runaway enumeration.
    """
    slots = _pre_diff_slots(layout)
    for g, ss in enumerate(slots):
        if not ss:
            raise CohortWithoutPreDifference(
                f"cohort g{layout.times[g]} has no consecutive pre-treatment "
                "difference to benchmark against"
            )
    total = 1
    for ss in slots:
        total *= 2 * len(ss)
        if total > cap:
            raise MemberCountExceedsCap(
                f"cohort-specific enumeration exceeds {cap} members"
            )
    choice_sets = [
        [(g, s_star, sign) for s_star in ss for sign in (1.0, -1.0)]
        for g, ss in enumerate(slots)
    ]
    members = []
    for combo in itertools.product(*choice_sets):
        bench = {g: choice for g, choice in enumerate(combo)}
        members.append(_rm_member(layout, cells, mbar, bench))
    return RestrictionFamily(
        family="rm-cohort",
        parameter=mbar,
        members=tuple(members),
        space="block",
        cells=cells,
    )


def sd(layout: CohortLayout, cells: CellIndex, m: float) -> RestrictionFamily:
    """Second-differences family: one polyhedron bounding slope changes by M."""
    for g, t_g in enumerate(layout.times):
        if t_g - 1 < 2:
            raise CohortWithoutTwoPrePeriods(
                f"cohort g{t_g} has fewer than two pre-treatment periods"
            )
    rows = []
    for g, t_g in enumerate(layout.times):
        for s in _post_rels(layout, g):
            row = np.zeros(len(cells))
            row[cells.position(t_g, s)] += 1.0
            row[cells.position(t_g, s - 1)] -= 2.0
            row[cells.position(t_g, s - 2)] += 1.0
            rows.append(_zero_structural(row, cells))
            rows.append(_zero_structural(-row.copy(), cells))
    A = np.array(rows)
    member = Polyhedron(A=A, d=np.full(len(rows), m), label={"benchmarks": []})
    return RestrictionFamily(
        family="sd", parameter=m, members=(member,), space="block", cells=cells
    )


def with_normalization(
    family: RestrictionFamily, layout: CohortLayout
) -> RestrictionFamily:
    """Append the per-cohort zero-sum of pre-treatment block biases.

    This equality is a mechanical property of the imputation estimator's pre
    coefficients; adding it never changes the identified set but documents
    the constraint explicitly.
    """
    if family.cells.estimator != "imputation":
        raise RestrictionError(
            "zero-sum normalization applies to the imputation estimator only"
        )
    cells = family.cells
    rows = []
    for g, t_g in enumerate(layout.times):
        row = np.zeros(len(cells))
        for s in range(2 - t_g, 1):
            row[cells.position(t_g, s)] = 1.0
        rows.append(row)
    A_eq = np.array(rows)
    d_eq = np.zeros(len(rows))
    members = []
    for m in family.members:
        if m.A_eq is None:
            members.append(replace(m, A_eq=A_eq, d_eq=d_eq))
        else:
            members.append(
                replace(
                    m,
                    A_eq=np.vstack([m.A_eq, A_eq]),
                    d_eq=np.concatenate([m.d_eq, d_eq]),
                )
            )
    return replace(family, members=tuple(members))


def map_to_delta_space(
    family: RestrictionFamily, bias_map: BiasMap
) -> RestrictionFamily:
    """Re-express every member on overall biases: A Delta <= d becomes
    (A W^-1) delta <= d.  Member count and labels are preserved."""
    if family.space != "block":
        raise RestrictionError("family is already in overall-bias space")
    if bias_map.W_inverse is None:
        raise RestrictionError("bias map inverse not populated")
    if len(bias_map.cells) != len(family.cells) or (
        bias_map.cells.estimator != family.cells.estimator
    ):
        raise RestrictionError("cell index mismatch between family and bias map")
    W_inv = bias_map.W_inverse
    members = []
    for m in family.members:
        members.append(
            replace(
                m,
                A=m.A @ W_inv,
                A_eq=None if m.A_eq is None else m.A_eq @ W_inv,
            )
        )
    return replace(family, members=tuple(members), space="overall")


def family_summary(family: RestrictionFamily) -> dict:
    """JSON-ready description: tag, parameter, member count, member labels."""
    return {
        "family": family.family,
        "parameter": family.parameter,
        "space": family.space,
        "member_count": family.member_count,
        "members": [
            {
                "rows": int(m.A.shape[0]),
                "equalities": 0 if m.A_eq is None else int(m.A_eq.shape[0]),
                "label": {
                    "benchmarks": [
                        list(b) for b in (m.label or {}).get("benchmarks", [])
                    ]
                },
            }
            for m in family.members
        ],
    }
