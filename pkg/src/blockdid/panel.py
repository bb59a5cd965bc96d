"""Balanced staggered-adoption panels: ingestion, validation, and cell indexing.

A panel is a complete unit-by-period outcome grid in which every unit either
adopts treatment at some period ``t_g`` (2 <= t_g <= T) and stays treated, or
never adopts.  Units sharing an adoption period form a cohort.  All downstream
estimation works off three objects built here:

* :class:`PanelData` -- the validated grid,
* :class:`CohortLayout` -- cohort sizes, control-group memberships, weights,
* :class:`CellIndex` -- the canonical ordering of cohort-period cells.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

NEVER = "never"

__all__ = [
    "NEVER",
    "PanelError",
    "DuplicateCell",
    "UnbalancedPanel",
    "NonIntegerTime",
    "BadAdoptionTime",
    "InconsistentCohortLabel",
    "NoNeverTreated",
    "PanelData",
    "CohortLayout",
    "Cell",
    "CellIndex",
    "load_panel",
    "build_layout",
    "build_cell_index",
]


class PanelError(ValueError):
    """Base class for panel validation failures."""

    code = "PANEL_ERROR"


class DuplicateCell(PanelError):
    code = "DUPLICATE_CELL"


class UnbalancedPanel(PanelError):
    code = "UNBALANCED_PANEL"


class NonIntegerTime(PanelError):
    code = "NON_INTEGER_TIME"


class BadAdoptionTime(PanelError):
    code = "BAD_ADOPTION_TIME"


class InconsistentCohortLabel(PanelError):
    code = "INCONSISTENT_COHORT_LABEL"


class NoNeverTreated(PanelError):
    code = "NO_NEVER_TREATED"


@dataclass(frozen=True)
class PanelData:
    """Balanced unit-by-period outcome grid with adoption labels.

    Parameters
    ----------
    units : tuple of str
        Unit identifiers in canonical order (first appearance in the source).
    n_periods : int
        Number of periods T; internal periods run 1..T.
    outcome : ndarray, shape (N, T)
        Outcome grid; ``outcome[i, t-1]`` is unit i's outcome at period t.
    adoption : tuple of (int | None)
        Per-unit adoption period (internal scale) or None for never-treated.
    time_labels : tuple of int
        Original period labels, so exported tables can show source times.
    """

    units: tuple
    n_periods: int
    outcome: np.ndarray
    adoption: tuple
    time_labels: tuple = ()

    def __post_init__(self):
        out = np.asarray(self.outcome, dtype=float)
        if out.shape != (len(self.units), self.n_periods):
            raise UnbalancedPanel(
                f"outcome grid is {out.shape}, expected "
                f"({len(self.units)}, {self.n_periods})"
            )
        if not np.all(np.isfinite(out)):
            raise UnbalancedPanel("outcome grid contains non-finite values")
        out = out.copy()
        out.setflags(write=False)
        object.__setattr__(self, "outcome", out)
        if not self.time_labels:
            object.__setattr__(
                self, "time_labels", tuple(range(1, self.n_periods + 1))
            )
        self._validate_adoption()

    def _validate_adoption(self):
        T = self.n_periods
        times = set()
        n_never = 0
        for unit, t_g in zip(self.units, self.adoption):
            if t_g is None:
                n_never += 1
                continue
            if not isinstance(t_g, (int, np.integer)):
                raise BadAdoptionTime(f"unit {unit!r}: adoption {t_g!r} not an integer")
            if not (2 <= t_g <= T):
                raise BadAdoptionTime(
                    f"unit {unit!r}: adoption period {t_g} outside 2..{T}"
                )
            times.add(int(t_g))
        if n_never == 0:
            raise NoNeverTreated("panel has no never-treated unit")
        # strict staggering after dedup is automatic: distinct sorted times

    @property
    def n_units(self):
        return len(self.units)

    def cohort_times(self):
        """Distinct adoption periods, strictly increasing."""
        return tuple(sorted({t for t in self.adoption if t is not None}))

    def treated_mask(self):
        """Boolean (N, T) mask of treated observations."""
        N, T = self.n_units, self.n_periods
        mask = np.zeros((N, T), dtype=bool)
        for i, t_g in enumerate(self.adoption):
            if t_g is not None:
                mask[i, t_g - 1 :] = True
        return mask

    def time_label(self, t):
        return self.time_labels[t - 1]


def load_panel(source) -> PanelData:
    """Read a panel from CSV with columns ``unit,time,outcome,cohort``.

    ``cohort`` holds the adoption period (same scale as ``time``) or the
    literal ``never``.  Row order is irrelevant; times may be any consecutive
    integer range and are shifted internally to 1..T.

    ``source`` may be a path, a string of CSV text, or a readable text stream.
    """
    if hasattr(source, "read"):
        stream = source
    elif isinstance(source, str) and "\n" in source:
        stream = io.StringIO(source)
    else:
        stream = open(source, "r", encoding="utf-8", newline="")

    try:
        lines = (line for line in stream if not line.startswith("#"))
        reader = csv.DictReader(lines)
        required = {"unit", "time", "outcome", "cohort"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise PanelError(
                f"CSV header must contain {sorted(required)}, got {reader.fieldnames}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            unit = row["unit"].strip()
            try:
                t = int(row["time"].strip())
            except ValueError:
                raise NonIntegerTime(
                    f"line {lineno}: time {row['time']!r} is not an integer"
                ) from None
            try:
                y = float(row["outcome"].strip())
            except ValueError:
                raise PanelError(
                    f"line {lineno}: outcome {row['outcome']!r} is not a number"
                ) from None
            label = row["cohort"].strip()
            if label == NEVER:
                g = None
            else:
                try:
                    g = int(label)
                except ValueError:
                    raise BadAdoptionTime(
                        f"line {lineno}: cohort {label!r} is neither an integer "
                        f"nor {NEVER!r}"
                    ) from None
            rows.append((unit, t, y, g))
    finally:
        if stream is not source:
            stream.close()

    if not rows:
        raise PanelError("empty panel file")

    units = []
    unit_idx = {}
    adoption = {}
    for unit, t, y, g in rows:
        if unit not in unit_idx:
            unit_idx[unit] = len(units)
            units.append(unit)
            adoption[unit] = g
        elif adoption[unit] != g:
            raise InconsistentCohortLabel(
                f"unit {unit!r} labeled both {adoption[unit]!r} and {g!r}"
            )

    times = sorted({t for _, t, _, _ in rows})
    lo, hi = times[0], times[-1]
    if times != list(range(lo, hi + 1)):
        raise UnbalancedPanel(f"periods {times} are not a consecutive range")
    T = hi - lo + 1
    offset = lo - 1  # internal period = label - offset

    N = len(units)
    outcome = np.full((N, T), np.nan)
    seen = np.zeros((N, T), dtype=bool)
    for unit, t, y, g in rows:
        i, j = unit_idx[unit], t - offset - 1
        if seen[i, j]:
            raise DuplicateCell(f"duplicate observation for ({unit!r}, {t})")
        seen[i, j] = True
        outcome[i, j] = y
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise UnbalancedPanel(f"missing cell ({units[i]!r}, {j + 1 + offset})")

    shifted = tuple(
        None if adoption[u] is None else adoption[u] - offset for u in units
    )
    return PanelData(
        units=tuple(units),
        n_periods=T,
        outcome=outcome,
        adoption=shifted,
        time_labels=tuple(range(lo, hi + 1)),
    )


@dataclass(frozen=True)
class CohortLayout:
    """Cohort structure of a panel: sizes, memberships, adjustment weights.

    Cohorts are ordered by adoption time.  ``cohort_units[g]`` holds the unit
    indices of the g-th treated cohort; ``never_units`` those of the
    never-treated group.  The adjustment weight of cohort k is

        w_k = N_k / (sum_{j >= k} N_j + N_inf),

    its share within itself plus its own initial control group.
    """

    times: tuple
    sizes: tuple
    never_size: int
    cohort_units: tuple
    never_units: np.ndarray
    n_periods: int

    @property
    def n_cohorts(self):
        return len(self.times)

    def pre_periods(self, g):
        """Calendar periods 1..t_g-1 for cohort g."""
        return range(1, self.times[g] + 0)

    def initial_control_units(self, g):
        """Units untreated when cohort g adopts: later cohorts plus never."""
        parts = [self.cohort_units[k] for k in range(g + 1, self.n_cohorts)]
        parts.append(self.never_units)
        return np.concatenate(parts)

    def not_yet_treated_units(self, t):
        """Units untreated at calendar period t."""
        parts = [
            self.cohort_units[k]
            for k in range(self.n_cohorts)
            if self.times[k] > t
        ]
        parts.append(self.never_units)
        return np.concatenate(parts)

    def adjustment_cohorts(self, g, t):
        """Indices k with t_g < t_k <= t."""
        return [
            k for k in range(self.n_cohorts) if self.times[g] < self.times[k] <= t
        ]

    def weight(self, k):
        """Adjustment weight w_k of cohort k."""
        return self.sizes[k] / (sum(self.sizes[k:]) + self.never_size)

    def initial_control_size(self, g):
        return sum(self.sizes[g + 1 :]) + self.never_size


def build_layout(panel: PanelData) -> CohortLayout:
    """Group units into cohorts and compute control memberships and weights."""
    times = panel.cohort_times()
    adoption = np.array(
        [-1 if t is None else t for t in panel.adoption], dtype=int
    )
    cohort_units = tuple(
        np.flatnonzero(adoption == t) for t in times
    )
    never_units = np.flatnonzero(adoption == -1)
    layout = CohortLayout(
        times=times,
        sizes=tuple(len(u) for u in cohort_units),
        never_size=len(never_units),
        cohort_units=cohort_units,
        never_units=never_units,
        n_periods=panel.n_periods,
    )
    return layout


@dataclass(frozen=True)
class Cell:
    """One cohort-period cell: cohort index, adoption time, relative period."""

    cohort: int
    cohort_time: int
    rel: int

    @property
    def cal(self):
        return self.cohort_time + self.rel - 1

    @property
    def pre(self):
        return self.rel <= 0

    @property
    def post(self):
        return self.rel >= 1


@dataclass(frozen=True)
class CellIndex:
    """Canonical ordering of all cohort-period cells of a balanced panel.

    Every treated cohort contributes one cell per calendar period, so a panel
    with G cohorts and T periods yields G*T cells.  Cells are sorted by
    calendar time, ties broken by adoption time.  For the not-yet-treated
    estimator the reference cells (rel == 0) are flagged structural zeros and
    excluded from the statistical coordinate system (``value_positions``).
    """

    cells: tuple
    estimator: str
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lookup = {
            (c.cohort_time, c.rel): p for p, c in enumerate(self.cells)
        }
        object.__setattr__(self, "_pos", lookup)

    def __len__(self):
        return len(self.cells)

    def position(self, cohort_time, rel):
        """0-based position of cell (cohort adoption time, relative period)."""
        return self._pos[(cohort_time, rel)]

    def cell(self, position):
        return self.cells[position]

    def structural_zero(self, position):
        return self.estimator == "csnyt" and self.cells[position].rel == 0

    @property
    def structural_mask(self):
        return np.array([self.structural_zero(p) for p in range(len(self))])

    @property
    def value_positions(self):
        """Positions of cells that carry a coefficient (non-structural)."""
        return np.flatnonzero(~self.structural_mask)

    @property
    def pre_mask(self):
        return np.array([c.pre for c in self.cells])

    @property
    def post_mask(self):
        return np.array([c.post for c in self.cells])

    def labels(self):
        return tuple(f"g{c.cohort_time}:s{c.rel:+d}" for c in self.cells)


def build_cell_index(
    layout: CohortLayout, T: int, estimator: str = "imputation"
) -> CellIndex:
    """Enumerate cells (g, s) for all calendar periods, canonically ordered."""
    if estimator not in ("imputation", "csnyt"):
        raise ValueError(f"unknown estimator tag {estimator!r}")
    cells = []
    for t in range(1, T + 1):
        for g, t_g in enumerate(layout.times):
            cells.append(Cell(cohort=g, cohort_time=t_g, rel=t - t_g + 1))
    return CellIndex(cells=tuple(cells), estimator=estimator)
