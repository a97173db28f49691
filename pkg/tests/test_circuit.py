import io

import numpy as np
import pytest

from conftest import abcd_pi_s_params, micro_grid, pi_network
from ddtd_emi import circuit, field
from ddtd_emi.circuit import (CircuitError, Components, PhysicsParams,
                              evaluate, extract_network, find_dip_frequency,
                              l1_doubling_study, esl_esr_study, s21_db,
                              solve_two_port, sweep, to_db, write_sweep_csv)

EX1_COMPS = Components(c1=100e-6, c2=100e-6, l1=10e-6)


def micro_phys(**kw):
    base = dict(sheet_resistance=1.0, sheet_inductance=1e-30,
                leak_conductance=1e-12)
    base.update(kw)
    return PhysicsParams(**base)


# -- parameter validation --------------------------------------------------------

def test_physics_params_validation():
    with pytest.raises(ValueError):
        PhysicsParams(sheet_resistance=-1.0)
    with pytest.raises(ValueError):
        PhysicsParams(db_floor=1.0)


def test_components_validation():
    with pytest.raises(ValueError):
        Components(c1=0.0, c2=1e-6, l1=1e-6)
    with pytest.raises(ValueError):
        Components(c1=1e-6, c2=1e-6, l1=1e-6, esr_c1=-1.0)


# -- network extraction ------------------------------------------------------------

def test_full_lattice_edge_count():
    grid = micro_grid(all_conductor_margins=True)
    layout = field.resolve(grid, np.ones(grid.n_design))
    net = extract_network(layout, micro_phys(), EX1_COMPS, 1e3)
    nx, ny = grid.nx, grid.ny
    assert net.edge_count == ny * (nx - 1) + nx * (ny - 1)


def test_zero_design_field_has_only_component_and_fixed_branches(micro):
    layout = field.resolve(micro, np.zeros(micro.n_design))
    net = extract_network(layout, micro_phys(), EX1_COMPS, 1e3)
    # single-node pads are mutually non-adjacent in the micro grid
    assert net.edge_count == 0
    # remaining branches: L1, C1, C2 plus one shunt per electrical node
    assert net.branch_i.size == 3 + (net.n_nodes - 1)


def test_adjacent_pair_branch_admittance(micro):
    rho = np.zeros(micro.n_design)
    rho[14] = rho[15] = 1.0   # adjacent interior nodes, away from any pad
    layout = field.resolve(micro, rho)
    net = extract_network(layout, micro_phys(), EX1_COMPS, 123.0)
    assert net.edge_count == 1
    assert net.branch_y[0] == pytest.approx(1.0, abs=1e-12)


def test_extract_rejects_nonpositive_freq(micro):
    layout = field.resolve(micro, np.zeros(micro.n_design))
    with pytest.raises(ValueError):
        extract_network(layout, micro_phys(), EX1_COMPS, 0.0)


# -- two-port solve -----------------------------------------------------------------

def test_through_connection():
    net = circuit.ComplexNetwork(
        n_nodes=2, ground=1,
        branch_i=np.array([], dtype=int), branch_j=np.array([], dtype=int),
        branch_y=np.array([], dtype=complex),
        port1=(0, 1), port2=(0, 1), freq=1.0)
    s11, s21 = solve_two_port(net, 50.0)
    assert s21 == pytest.approx(1.0, abs=1e-12)
    assert s11 == pytest.approx(0.0, abs=1e-12)


def test_series_100_ohm():
    net = circuit.ComplexNetwork(
        n_nodes=3, ground=2,
        branch_i=np.array([0]), branch_j=np.array([1]),
        branch_y=np.array([1.0 / 100.0], dtype=complex),
        port1=(0, 2), port2=(1, 2), freq=1.0)
    s11, s21 = solve_two_port(net, 50.0)
    # analytic series element: s21 = 2 z0 / (2 z0 + Z)
    assert s21 == pytest.approx(2 * 50 / (2 * 50 + 100), abs=1e-12)
    assert s11 == pytest.approx(100 / (100 + 2 * 50), abs=1e-12)
    assert 20 * np.log10(abs(s21)) == pytest.approx(-6.02, abs=0.01)


def test_shunt_at_through_node():
    net = circuit.ComplexNetwork(
        n_nodes=2, ground=1,
        branch_i=np.array([0]), branch_j=np.array([1]),
        branch_y=np.array([0.02], dtype=complex),
        port1=(0, 1), port2=(0, 1), freq=1.0)
    _, s21 = solve_two_port(net, 50.0)
    # analytic shunt element: s21 = 2 / (2 + z0 Y)
    assert s21 == pytest.approx(2.0 / (2.0 + 50.0 * 0.02), abs=1e-12)


def test_pi_oracle_equivalence():
    rng = np.random.default_rng(17)
    for _ in range(10):
        c1 = rng.uniform(1e-9, 1e-4)
        c2 = rng.uniform(1e-9, 1e-4)
        l1 = rng.uniform(1e-7, 1e-3)
        for f in np.logspace(np.log10(rng.uniform(1e2, 1e3)),
                             np.log10(rng.uniform(1e7, 1e8)), 20):
            w = 2 * np.pi * f
            y1, y2, z = 1j * w * c1, 1j * w * c2, 1j * w * l1
            net = pi_network(y1, z, y2, freq=f)
            s11, s21 = solve_two_port(net, 50.0)
            ref11, ref21 = abcd_pi_s_params(y1, z, y2, 50.0)
            assert abs(s21 - ref21) <= 1e-9 * abs(ref21)
            assert abs(s11 - ref11) <= 1e-9 * max(abs(ref11), 1e-30)


def test_reciprocity(ref_layout, ex1_cfg):
    phys = ex1_cfg.physics
    net = extract_network(ref_layout, phys, EX1_COMPS, 3.3e5)
    _, s21_fwd = solve_two_port(net, phys.z0)
    swapped = circuit.ComplexNetwork(
        n_nodes=net.n_nodes, ground=net.ground,
        branch_i=net.branch_i, branch_j=net.branch_j, branch_y=net.branch_y,
        port1=net.port2, port2=net.port1, freq=net.freq)
    _, s21_rev = solve_two_port(swapped, phys.z0)
    assert abs(s21_fwd - s21_rev) <= 1e-9 * abs(s21_fwd)


def test_passivity_on_random_layouts(tiny_grid):
    rng = np.random.default_rng(23)
    phys = PhysicsParams()
    bounds = field.make_seed_bounds(tiny_grid)
    for _ in range(5):
        seed = field.random_seed(rng, tiny_grid, bounds)
        layout = field.resolve(tiny_grid, field.rasterize_seed(seed, tiny_grid))
        for f in (1e3, 1e5, 1e7, 5e7):
            net = extract_network(layout, phys, EX1_COMPS, f)
            s11, s21 = solve_two_port(net, phys.z0)
            assert abs(s21) <= 1.0 + 1e-6
            assert abs(s11) <= 1.0 + 1e-6


# -- dB bookkeeping -----------------------------------------------------------------

def test_to_db_values():
    assert to_db(1.0, -300.0) == 0.0
    assert to_db(10 ** (-35 / 20), -300.0) == pytest.approx(-35.0, abs=1e-9)
    assert to_db(0.0, -300.0) == -300.0
    assert to_db(1e-20, -300.0) == -300.0


# -- evaluate -----------------------------------------------------------------------

def test_reference_layout_feasible(ref_layout, ex1_cfg):
    rec = evaluate(ref_layout, ex1_cfg.physics, EX1_COMPS,
                   1e5, 1e7, 1e3, -35.0)
    assert rec.feasible
    assert rec.g_db > -35.0
    # low-pass ordering: more transmission at 1 kHz than at 10 MHz
    assert rec.g_db > rec.j2_db


def test_cut_layout_infeasible(ex1_grid, cut_rho, ex1_cfg):
    layout = field.resolve(ex1_grid, cut_rho)
    rec = evaluate(layout, ex1_cfg.physics, EX1_COMPS, 1e5, 1e7, 1e3, -35.0)
    assert rec.g_db <= -100.0
    assert not rec.feasible


def test_evaluate_deterministic(ref_layout, ex1_cfg):
    a = evaluate(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e5, 1e7, 1e3, -35.0)
    b = evaluate(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e5, 1e7, 1e3, -35.0)
    assert (a.j1_db, a.j2_db, a.g_db, a.feasible) == \
           (b.j1_db, b.j2_db, b.g_db, b.feasible)


def test_evaluate_rejects_bad_frequency_order(ref_layout, ex1_cfg):
    with pytest.raises(ValueError):
        evaluate(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e7, 1e5, 1e3, -35.0)


# -- sweep --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ref_sweep(ref_layout, ex1_cfg):
    return sweep(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e3, 100e6, 10)


def test_sweep_point_count(ref_sweep):
    assert ref_sweep.frequencies.size == 51
    assert ref_sweep.frequencies[0] == pytest.approx(1e3)
    assert ref_sweep.frequencies[-1] == pytest.approx(100e6)


def test_sweep_rejects_equal_endpoints(ref_layout, ex1_cfg):
    with pytest.raises(ValueError):
        sweep(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e3, 1e3, 10)


def test_sweep_monotone_down_to_first_resonance(ref_sweep):
    """|s21| falls monotonically from 1 kHz until the first resonance of the
    L1/C combination; the ideal lumped pi places that feature at the same
    grid point."""
    mags = np.abs(ref_sweep.s21)
    oracle = np.array([abs(abcd_pi_s_params(1j * w * EX1_COMPS.c1,
                                            1j * w * EX1_COMPS.l1,
                                            1j * w * EX1_COMPS.c2)[1])
                       for w in 2 * np.pi * ref_sweep.frequencies])

    def first_local_min(v):
        return int(np.nonzero(np.diff(v) > 0)[0][0])

    k_grid = first_local_min(mags)
    k_oracle = first_local_min(oracle)
    assert abs(k_grid - k_oracle) <= 1
    assert k_grid >= 4   # well above 1 kHz
    assert np.all(np.diff(mags[: k_grid + 1]) < 0)
    # the deep trace-resonance dip sits further up in frequency
    assert int(np.argmin(mags)) > k_grid


def test_sweep_csv_format(ref_sweep):
    buf = io.StringIO()
    write_sweep_csv(ref_sweep, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "freq_hz,s21_db,s21_re,s21_im,s11_db"
    assert len(lines) == 52
    first = lines[1].split(",")
    assert len(first) == 5
    assert float(first[0]) == pytest.approx(1e3)


# -- insertion studies ----------------------------------------------------------------

def test_esl_identity_at_zero(ref_layout, ex1_cfg):
    rows = esl_esr_study(ref_layout, ex1_cfg.physics, EX1_COMPS,
                         [0.0], [0.0], 1e7)
    plain = s21_db(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e7)
    assert rows[0] == (0.0, 0.0, plain)


def test_esl_strictly_increasing(ref_layout, ex1_cfg):
    esl = [k * 1e-9 for k in range(1, 11)]
    rows = esl_esr_study(ref_layout, ex1_cfg.physics, EX1_COMPS,
                         esl, [0.0], 1e7)
    vals = [r[2] for r in rows]
    assert len(vals) == 10
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_esr_strictly_increasing_at_dip(ref_layout, ex1_cfg):
    f_dip = find_dip_frequency(ref_layout, ex1_cfg.physics, EX1_COMPS)
    assert 3e4 < f_dip < 1e6
    esr = [k * 1e-3 for k in range(1, 11)]
    rows = esl_esr_study(ref_layout, ex1_cfg.physics, EX1_COMPS,
                         [0.0], esr, f_dip)
    vals = [r[2] for r in rows]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_study_rejects_empty_lists(ref_layout, ex1_cfg):
    with pytest.raises(ValueError):
        esl_esr_study(ref_layout, ex1_cfg.physics, EX1_COMPS, [], [0.0], 1e7)


# -- inductor scaling ------------------------------------------------------------------

def test_l1_doubling_near_minus_6db(ref_layout, ex1_cfg):
    base, doubled = l1_doubling_study(ref_layout, ex1_cfg.physics,
                                      EX1_COMPS, 1e7)
    assert doubled - base == pytest.approx(-6.0, abs=1.5)


def test_l1_quadrupling_near_minus_12db(ref_layout, ex1_cfg):
    base, _ = l1_doubling_study(ref_layout, ex1_cfg.physics, EX1_COMPS, 1e7)
    quad = Components(c1=EX1_COMPS.c1, c2=EX1_COMPS.c2, l1=4 * EX1_COMPS.l1)
    quadrupled = s21_db(ref_layout, ex1_cfg.physics, quad, 1e7)
    assert quadrupled - base == pytest.approx(-12.0, abs=2.0)


def test_l1_doubling_with_bypass_is_flat(ex1_grid, ref_rho, ex1_cfg):
    """A copper bridge across the inductor terminals takes L1 out of the
    dominant path, so doubling it changes nothing."""
    wny, wnx = ex1_grid.design_shape
    rho = ref_rho.copy().reshape(wny, wnx)
    left = min(x for x in range(wnx)
               if (ex1_grid.window_x0 + x) in
               {n % ex1_grid.nx for n in ex1_grid.pads["l1_left"]})
    right = max(x for x in range(wnx)
                if (ex1_grid.window_x0 + x) in
                {n % ex1_grid.nx for n in ex1_grid.pads["l1_right"]})
    rho[0:2, left:right + 1] = 1.0   # bridge just above the pads
    layout = field.resolve(ex1_grid, rho.ravel())
    base, doubled = l1_doubling_study(layout, ex1_cfg.physics, EX1_COMPS, 1e7)
    assert doubled - base == pytest.approx(0.0, abs=0.5)


# -- error paths ----------------------------------------------------------------------

def test_solver_failure_names_frequency():
    # a floating node with zero admittance everywhere makes the reduced
    # system singular
    net = circuit.ComplexNetwork(
        n_nodes=3, ground=2,
        branch_i=np.array([], dtype=int), branch_j=np.array([], dtype=int),
        branch_y=np.array([], dtype=complex),
        port1=(0, 2), port2=(0, 2), freq=4242.0)
    with pytest.raises(CircuitError, match="4242"):
        solve_two_port(net, 50.0)
