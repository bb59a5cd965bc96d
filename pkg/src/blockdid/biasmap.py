"""The invertible linear map between overall biases and block biases.

For every post-treatment cell the estimator's overall bias is its own block
bias plus size-weighted contributions from cohorts that adopted between the
cell's cohort and the cell's calendar time.  Stacking cells in canonical
order turns this into delta = W * Delta with W unit-diagonal and invertible:
block diagonal across calendar times for the imputation estimator, block
lower-triangular for the not-yet-treated estimator.  Pre-treatment rows are
identity rows (pre-treatment overall bias is defined to equal the block
bias).
"""

from dataclasses import dataclass

import numpy as np

from .panel import CellIndex, CohortLayout

__all__ = ["BiasMap", "build_w_imputation", "build_w_csnyt", "invert", "write_biasmap_csv"]


@dataclass(frozen=True)
class BiasMap:
    """Square map W over the full cell index, with optional inverse."""

    estimator: str
    cells: CellIndex
    W: np.ndarray
    W_inverse: np.ndarray = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        n = len(self.cells)
        if W.shape != (n, n):
            raise ValueError(f"W is {W.shape}, expected ({n}, {n})")
        if not np.all(np.diag(W) == 1.0):
            raise ValueError("W must be unit-diagonal")
        W = W.copy()
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    def det(self):
        """Determinant via the triangular-block structure (always 1)."""
        return float(np.prod(np.diag(self.W)))


def _base_identity(cells: CellIndex):
    n = len(cells)
    return np.eye(n)


def build_w_imputation(layout: CohortLayout, cells: CellIndex) -> BiasMap:
    """Rows for post cells add w_k on each adjustment cohort's same-time cell."""
    W = _base_identity(cells)
    for p in range(len(cells)):
        c = cells.cell(p)
        if not c.post:
            continue
        t = c.cal
        for k in layout.adjustment_cohorts(c.cohort, t):
            s_k = t - layout.times[k] + 1
            W[p, cells.position(layout.times[k], s_k)] = layout.weight(k)
    return BiasMap(estimator="imputation", cells=cells, W=W)


def build_w_csnyt(layout: CohortLayout, cells: CellIndex) -> BiasMap:
    """As the imputation map, plus a -w_k baseline correction per adjustment
    cohort at the row cohort's reference period."""
    W = _base_identity(cells)
    for p in range(len(cells)):
        c = cells.cell(p)
        if not c.post:
            continue
        t = c.cal
        t_ref = layout.times[c.cohort] - 1
        for k in layout.adjustment_cohorts(c.cohort, t):
            t_k = layout.times[k]
            w = layout.weight(k)
            W[p, cells.position(t_k, t - t_k + 1)] = w
            W[p, cells.position(t_k, t_ref - t_k + 1)] = -w
    return BiasMap(estimator="csnyt", cells=cells, W=W)


def invert(bias_map: BiasMap) -> BiasMap:
    """Populate the inverse by block back-substitution.

    Cells sharing a calendar time form the diagonal blocks; each block is
    unit upper-triangular, and any off-diagonal blocks sit strictly below the
    diagonal, so the system W x = e solves exactly by marching forward over
    calendar times and backward within each block.
    """
    cells = bias_map.cells
    W = bias_map.W
    n = len(cells)
    blocks = _calendar_blocks(cells)

    W_inv = np.zeros((n, n))
    for col in range(n):
        W_inv[:, col] = _solve_block_triangular(W, blocks, _unit_vector(n, col))
    W_inv.setflags(write=False)
    return BiasMap(
        estimator=bias_map.estimator, cells=cells, W=W, W_inverse=W_inv
    )


def _unit_vector(n, j):
    e = np.zeros(n)
    e[j] = 1.0
    return e


def _calendar_blocks(cells: CellIndex):
    """Contiguous position ranges sharing one calendar time."""
    blocks = []
    start = 0
    for p in range(1, len(cells) + 1):
        if p == len(cells) or cells.cell(p).cal != cells.cell(start).cal:
            blocks.append(range(start, p))
            start = p
    return blocks


def _solve_block_triangular(W, blocks, b):
    x = np.zeros_like(b)
    for block in blocks:
        idx = np.array(block)
        rhs = b[idx] - W[np.ix_(idx, np.arange(0, idx[0]))] @ x[: idx[0]]
        # unit upper-triangular block: back-substitute
        for i in range(len(idx) - 1, -1, -1):
            row = idx[i]
            acc = rhs[i]
            for j in range(i + 1, len(idx)):
                acc -= W[row, idx[j]] * x[idx[j]]
            x[row] = acc
    return x


def write_biasmap_csv(bias_map: BiasMap, stream, inverse=False):
    """Emit W (or its inverse) as labeled dense CSV."""
    M = bias_map.W_inverse if inverse else bias_map.W
    if M is None:
        raise ValueError("inverse not populated; call invert() first")
    labels = bias_map.cells.labels()
    stream.write("cell," + ",".join(labels) + "\n")
    for lab, row in zip(labels, M):
        stream.write(lab + "," + ",".join(repr(float(x)) for x in row) + "\n")
