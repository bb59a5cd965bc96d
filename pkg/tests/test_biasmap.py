import numpy as np
import pytest

from blockdid.biasmap import build_w_csnyt, build_w_imputation, invert
from blockdid.estimators import csnyt_estimates, estimate, imputation_estimates
from blockdid.panel import build_cell_index, build_layout, load_panel
from blockdid.simgen import DGPSpec, Violation, gen_custom

from test_panel import grid_csv


@pytest.fixture(scope="module")
def staircase_layout():
    # one unit at t=4, three at t=6, one at t=8, four never-treated
    units = [("e", "4")] + [(f"m{i}", "6") for i in range(3)]
    units += [("l", "8")] + [(f"n{i}", "never") for i in range(4)]
    return build_layout(load_panel(grid_csv(units, T=8)))


def test_imputation_rows_carry_adjustment_weights(staircase_layout):
    layout = staircase_layout
    cells = build_cell_index(layout, 8, "imputation")
    bm = build_w_imputation(layout, cells)
    # early cohort at s=3 (t=6): own cell plus 0.375 on the mid cohort's s=1
    row = bm.W[cells.position(4, 3)]
    want = np.zeros(24)
    want[cells.position(4, 3)] = 1.0
    want[cells.position(6, 1)] = 0.375
    assert np.array_equal(row, want)
    # early cohort at s=5 (t=8): 0.375 on (6, s=3) and 0.2 on (8, s=1)
    row = bm.W[cells.position(4, 5)]
    want = np.zeros(24)
    want[cells.position(4, 5)] = 1.0
    want[cells.position(6, 3)] = 0.375
    want[cells.position(8, 1)] = 0.2
    assert np.array_equal(row, want)


def test_single_cohort_map_is_identity():
    layout = build_layout(load_panel(grid_csv([("a", "3"), ("n", "never")], T=5)))
    cells = build_cell_index(layout, 5, "imputation")
    assert np.array_equal(build_w_imputation(layout, cells).W, np.eye(5))
    cells2 = build_cell_index(layout, 5, "csnyt")
    assert np.array_equal(build_w_csnyt(layout, cells2).W, np.eye(5))


def toy_16_expected(w7):
    W = np.eye(16)
    W[12, 7] = -w7
    W[12, 13] = w7
    W[14, 7] = -w7
    W[14, 15] = w7
    return W


@pytest.mark.parametrize("sizes", [(1, 1, 1), (4, 4, 4), (2, 5, 3)])
def test_csnyt_toy_sixteen_cell_golden(sizes):
    n5, n7, ninf = sizes
    units = [(f"a{i}", "5") for i in range(n5)]
    units += [(f"b{i}", "7") for i in range(n7)]
    units += [(f"c{i}", "never") for i in range(ninf)]
    layout = build_layout(load_panel(grid_csv(units, T=8)))
    cells = build_cell_index(layout, 8, "csnyt")
    bm = invert(build_w_csnyt(layout, cells))
    w7 = n7 / (n7 + ninf)
    assert layout.weight(1) == pytest.approx(w7)
    assert np.array_equal(bm.W, toy_16_expected(w7))
    assert bm.det() == 1.0
    assert np.max(np.abs(bm.W @ bm.W_inverse - np.eye(16))) < 1e-12


def test_inverse_structure(staircase_layout):
    layout = staircase_layout
    for estimator, builder in (
        ("imputation", build_w_imputation),
        ("csnyt", build_w_csnyt),
    ):
        cells = build_cell_index(layout, 8, estimator)
        bm = invert(builder(layout, cells))
        assert np.max(np.abs(bm.W @ bm.W_inverse - np.eye(len(cells)))) < 1e-12
        cals = np.array([c.cal for c in cells.cells])
        above = np.triu(np.ones((24, 24), dtype=bool), 1) & (
            cals[:, None] != cals[None, :]
        )
        # no entries above the diagonal blocks in either W or its inverse
        assert np.max(np.abs(bm.W[above & (cals[:, None] < cals[None, :])])) == 0
        assert (
            np.max(np.abs(bm.W_inverse[above & (cals[:, None] < cals[None, :])])) == 0
        )
        if estimator == "imputation":
            off_block = cals[:, None] != cals[None, :]
            assert np.max(np.abs(bm.W[off_block])) == 0
            assert np.max(np.abs(bm.W_inverse[off_block])) == 0


def test_identity_map_inverts_to_identity():
    layout = build_layout(load_panel(grid_csv([("a", "3"), ("n", "never")], T=4)))
    cells = build_cell_index(layout, 4, "imputation")
    bm = invert(build_w_imputation(layout, cells))
    assert np.array_equal(bm.W_inverse, np.eye(4))


def test_entries_and_post_row_sums(staircase_layout):
    layout = staircase_layout
    cells = build_cell_index(layout, 8, "imputation")
    bm = build_w_imputation(layout, cells)
    weights = {layout.weight(k) for k in range(layout.n_cohorts)}
    allowed = {0.0, 1.0} | weights | {-w for w in weights}
    assert set(np.unique(bm.W)) <= allowed
    for p in range(len(cells)):
        c = cells.cell(p)
        if c.post:
            ks = layout.adjustment_cohorts(c.cohort, c.cal)
            want = 1.0 + sum(layout.weight(k) for k in ks)
            assert bm.W[p].sum() == pytest.approx(want, abs=1e-12)


def test_path_weight_collapse(staircase_layout):
    # direct path plus the path through the mid cohort collapses to w_late
    layout = staircase_layout
    n6, n8, ninf = 3, 1, 4
    direct = n8 / (n6 + n8 + ninf)
    via_mid = (n6 / (n6 + n8 + ninf)) * (n8 / (n8 + ninf))
    assert direct + via_mid == pytest.approx(n8 / (n8 + ninf))
    assert layout.weight(2) == pytest.approx(n8 / (n8 + ninf))


def _true_block_biases(sim, layout, cells, estimator):
    y0 = sim.baseline
    out = np.zeros(len(cells))
    for p in range(len(cells)):
        c = cells.cell(p)
        own = layout.cohort_units[c.cohort]
        ctrl = layout.initial_control_units(c.cohort)
        if estimator == "imputation":
            pre_cols = [t - 1 for t in layout.pre_periods(c.cohort)]
            lhs = y0[own, c.cal - 1].mean() - y0[np.ix_(own, pre_cols)].mean()
            rhs = y0[ctrl, c.cal - 1].mean() - y0[np.ix_(ctrl, pre_cols)].mean()
        else:
            t_ref = layout.times[c.cohort] - 1
            lhs = y0[own, c.cal - 1].mean() - y0[own, t_ref - 1].mean()
            rhs = y0[ctrl, c.cal - 1].mean() - y0[ctrl, t_ref - 1].mean()
        out[p] = lhs - rhs
    return out


def _noiseless_identity_gap(sim, estimator):
    """max |delta - W Delta| with truth taken from the retained baseline."""
    panel = sim.panel
    layout = build_layout(panel)
    cells = build_cell_index(layout, panel.n_periods, estimator)
    builder = build_w_imputation if estimator == "imputation" else build_w_csnyt
    bm = builder(layout, cells)
    block = _true_block_biases(sim, layout, cells, estimator)
    overall = block.copy()
    observed = (
        imputation_estimates(panel)
        if estimator == "imputation"
        else csnyt_estimates(panel)
    )
    for p in range(len(cells)):
        c = cells.cell(p)
        if c.post:
            overall[p] = observed.value(c.cohort_time, c.rel) - sim.effect
        if cells.structural_zero(p):
            overall[p] = block[p] = 0.0
    return np.max(np.abs(overall - bm.W @ block))


def test_noiseless_decomposition_identity():
    rng = np.random.default_rng(13)
    kinds = ["none", "oscillating", "linear"]
    for trial in range(6):
        G = int(rng.integers(1, 4))
        T = int(rng.integers(6, 10))
        times = sorted(rng.choice(np.arange(2, T + 1), size=G, replace=False))
        spec = DGPSpec(
            T=T,
            cohorts=tuple((int(t), int(rng.integers(1, 5))) for t in times),
            never_size=int(rng.integers(1, 5)),
            noise_sd=0.0,
            violations=tuple(
                Violation(kinds[int(rng.integers(0, 3))], float(rng.uniform(-1, 1)))
                for _ in range(G)
            ),
            effect=float(rng.uniform(-2, 2)),
            seed=trial,
        )
        sim = gen_custom(spec)
        assert _noiseless_identity_gap(sim, "imputation") < 1e-10
        assert _noiseless_identity_gap(sim, "csnyt") < 1e-10
