"""Quasi-static two-port evaluation of a conductor layout.

The copper is modeled as a grid RLC network: every 4-neighbor pair of
conductive nodes (resolved density >= 0.5) carries one square of sheet
impedance, every conductive node sees the plate capacitance to the ground
plane on the back of the board, and the lumped filter components hang off
their pads. The nodal system is solved per frequency and S-parameters are
read off with a 2 V source behind z0 at port 1 and a z0 termination at
port 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .field import PAD_NAMES, ResolvedLayout

EPS0 = 8.8541878128e-12


class CircuitError(RuntimeError):
    """Numerical failure while solving the nodal system."""


@dataclass(frozen=True)
class PhysicsParams:
    """Surrogate material and solver constants.

    sheet_resistance/inductance are per square of copper; leak_conductance
    keeps the system nonsingular when the layout is disconnected; db_floor
    caps how far down a dead transmission path can report.
    """

    sheet_resistance: float = 0.5e-3
    sheet_inductance: float = 2.0e-9
    permittivity_rel: float = 4.5
    board_thickness: float = 1.6e-3
    z0: float = 50.0
    leak_conductance: float = 1e-12
    db_floor: float = -300.0

    def __post_init__(self):
        for name in ("sheet_resistance", "sheet_inductance", "permittivity_rel",
                     "board_thickness", "z0", "leak_conductance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.db_floor >= 0:
            raise ValueError("db_floor must be negative")


@dataclass(frozen=True)
class Components:
    """Lumped filter components plus optional series parasitics on the
    capacitor branches (used by the insertion studies)."""

    c1: float
    c2: float
    l1: float
    esl_c1: float = 0.0
    esl_c2: float = 0.0
    esr_c1: float = 0.0
    esr_c2: float = 0.0

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0 or self.l1 <= 0:
            raise ValueError("c1, c2, l1 must be positive")
        if min(self.esl_c1, self.esl_c2, self.esr_c1, self.esr_c2) < 0:
            raise ValueError("esl/esr must be non-negative")


@dataclass
class ComplexNetwork:
    """Nodes 0..n_nodes-1 with complex-admittance branches; one node is
    ground. Ports are (signal node, ground node) pairs."""

    n_nodes: int
    ground: int
    branch_i: np.ndarray
    branch_j: np.ndarray
    branch_y: np.ndarray
    port1: tuple
    port2: tuple
    freq: float = 0.0
    edge_count: int = 0       # leading branches that are grid edges

    def __post_init__(self):
        self.branch_i = np.asarray(self.branch_i, dtype=np.intp)
        self.branch_j = np.asarray(self.branch_j, dtype=np.intp)
        self.branch_y = np.asarray(self.branch_y, dtype=complex)
        n = self.n_nodes
        if not (0 <= self.ground < n):
            raise ValueError("ground node out of range")
        for arr in (self.branch_i, self.branch_j):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValueError("branch node index out of range")
        if np.any(self.branch_i == self.branch_j):
            raise ValueError("self-loop branch")
        for sig, gnd in (self.port1, self.port2):
            if not (0 <= sig < n):
                raise ValueError("port signal node out of range")
            if gnd != self.ground:
                raise ValueError("port ground must be the network ground")


@dataclass
class SweepResult:
    frequencies: np.ndarray
    s21: np.ndarray
    s11: np.ndarray


@dataclass
class EvalRecord:
    """Objectives and constraint in dB plus the feasibility verdict."""

    j1_db: float
    j2_db: float
    g_db: float
    feasible: bool
    sweep: Optional[SweepResult] = None


def _electrical_map(grid):
    """Grid node -> electrical node, with each pad merged to one node.
    Returns (emap, pad node ids dict, electrical node count)."""
    emap = np.full(grid.n_nodes, -1, dtype=np.intp)
    pad_id = {}
    for k, name in enumerate(PAD_NAMES):
        pad_id[name] = k
        emap[list(grid.pads[name])] = k
    rest = emap < 0
    emap[rest] = len(PAD_NAMES) + np.arange(int(rest.sum()))
    return emap, pad_id, len(PAD_NAMES) + int(rest.sum())


def extract_network(layout: ResolvedLayout, phys: PhysicsParams,
                    comps: Components, freq: float) -> ComplexNetwork:
    """Grid RLC network of the layout at one frequency.

    Disconnected copper is a valid state: every node keeps at least its leak
    to ground.
    """
    if freq <= 0:
        raise ValueError("freq must be positive")
    grid = layout.grid
    w = 2.0 * np.pi * freq
    emap, pad_id, n_elec = _electrical_map(grid)
    ground = n_elec

    cond = layout.full >= 0.5
    em = cond[grid.edge_a] & cond[grid.edge_b]
    ia = emap[grid.edge_a[em]]
    ib = emap[grid.edge_b[em]]
    keep = ia != ib            # edges inside a merged pad vanish
    ia, ib = ia[keep], ib[keep]
    y_edge = 1.0 / (phys.sheet_resistance + 1j * w * phys.sheet_inductance)

    c_node = EPS0 * phys.permittivity_rel * grid.pitch ** 2 / phys.board_thickness
    shunt_n = np.where(cond, 1j * w * c_node + phys.leak_conductance,
                       phys.leak_conductance + 0j)
    shunt = (np.bincount(emap, weights=shunt_n.real, minlength=n_elec)
             + 1j * np.bincount(emap, weights=shunt_n.imag, minlength=n_elec))

    def cap_branch(c, esl, esr):
        return 1.0 / (esr + 1j * w * esl + 1.0 / (1j * w * c))

    comp_i = [pad_id["l1_left"], pad_id["c1"], pad_id["c2"]]
    comp_j = [pad_id["l1_right"], ground, ground]
    comp_y = [1.0 / (1j * w * comps.l1),
              cap_branch(comps.c1, comps.esl_c1, comps.esr_c1),
              cap_branch(comps.c2, comps.esl_c2, comps.esr_c2)]

    branch_i = np.concatenate([ia, comp_i, np.arange(n_elec)])
    branch_j = np.concatenate([ib, comp_j, np.full(n_elec, ground)])
    branch_y = np.concatenate([np.full(ia.size, y_edge), comp_y, shunt])

    return ComplexNetwork(
        n_nodes=n_elec + 1, ground=ground,
        branch_i=branch_i, branch_j=branch_j, branch_y=branch_y,
        port1=(pad_id["port1"], ground), port2=(pad_id["port2"], ground),
        freq=freq, edge_count=int(ia.size))


def solve_two_port(net: ComplexNetwork, z0: float):
    """Solve the nodal system with a 2 V source behind z0 at port 1 and a z0
    termination at port 2; returns (s11, s21) for a unit incident wave."""
    n = net.n_nodes
    # reduced unknown index, ground eliminated
    red = np.empty(n, dtype=np.intp)
    red[:] = -1
    keep = np.arange(n) != net.ground
    red[keep] = np.arange(n - 1)

    bi, bj, by = net.branch_i, net.branch_j, net.branch_y
    gi = bi == net.ground
    gj = bj == net.ground
    both = ~gi & ~gj

    rows = [red[bi[both]], red[bj[both]], red[bi[both]], red[bj[both]],
            red[bj[gi]], red[bi[gj]]]
    cols = [red[bi[both]], red[bj[both]], red[bj[both]], red[bi[both]],
            red[bj[gi]], red[bi[gj]]]
    data = [by[both], by[both], -by[both], -by[both], by[gi], by[gj]]

    p1, p2 = red[net.port1[0]], red[net.port2[0]]
    term = 1.0 / z0
    rows.append(np.array([p1, p2]))
    cols.append(np.array([p1, p2]))
    data.append(np.array([term, term], dtype=complex))

    mat = sp.coo_matrix(
        (np.concatenate(data),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(n - 1, n - 1)).tocsc()
    rhs = np.zeros(n - 1, dtype=complex)
    rhs[p1] = 2.0 / z0
    try:
        volt = splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise CircuitError(
            f"singular nodal system at {net.freq:g} Hz: {exc}") from exc
    if not np.all(np.isfinite(volt)):
        raise CircuitError(f"non-finite solution at {net.freq:g} Hz")
    return volt[p1] - 1.0, volt[p2]


def to_db(s, db_floor):
    mag = abs(s)
    if mag <= 0.0:
        return db_floor
    return max(20.0 * np.log10(mag), db_floor)


def s21_db(layout: ResolvedLayout, phys: PhysicsParams, comps: Components,
           freq: float) -> float:
    """Transmission magnitude in dB at one frequency, clipped at db_floor."""
    net = extract_network(layout, phys, comps, freq)
    _, s21 = solve_two_port(net, phys.z0)
    return to_db(s21, phys.db_floor)


def evaluate(layout: ResolvedLayout, phys: PhysicsParams, comps: Components,
             f1: float, f2: float, f3: float, g_bar: float) -> EvalRecord:
    """Objectives J1, J2 at the two high target frequencies and the
    low-frequency constraint G; feasible iff G >= g_bar."""
    if not 0 < f3 < f1 < f2:
        raise ValueError("frequencies must satisfy 0 < f3 < f1 < f2")
    j1 = s21_db(layout, phys, comps, f1)
    j2 = s21_db(layout, phys, comps, f2)
    g = s21_db(layout, phys, comps, f3)
    return EvalRecord(j1_db=j1, j2_db=j2, g_db=g, feasible=g >= g_bar)


def sweep(layout: ResolvedLayout, phys: PhysicsParams, comps: Components,
          f_lo: float, f_hi: float, points_per_decade: int) -> SweepResult:
    """Log-spaced frequency sweep inclusive of both endpoints."""
    if not 0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < f_hi")
    if points_per_decade < 1:
        raise ValueError("points_per_decade must be >= 1")
    decades = np.log10(f_hi / f_lo)
    n = int(round(decades * points_per_decade)) + 1
    freqs = np.logspace(np.log10(f_lo), np.log10(f_hi), max(n, 2))
    s21 = np.empty(freqs.size, dtype=complex)
    s11 = np.empty(freqs.size, dtype=complex)
    for k, f in enumerate(freqs):
        net = extract_network(layout, phys, comps, f)
        s11[k], s21[k] = solve_two_port(net, phys.z0)
    return SweepResult(frequencies=freqs, s21=s21, s11=s11)


def esl_esr_study(layout: ResolvedLayout, phys: PhysicsParams,
                  comps: Components, esl_list, esr_list, freq: float):
    """s21_db with series (esl, esr) inserted on both capacitor branches,
    one row per (esl, esr) combination in input order."""
    if len(esl_list) == 0 or len(esr_list) == 0:
        raise ValueError("esl_list and esr_list must be nonempty")
    rows = []
    for esl in esl_list:
        for esr in esr_list:
            inserted = Components(
                c1=comps.c1, c2=comps.c2, l1=comps.l1,
                esl_c1=comps.esl_c1 + esl, esl_c2=comps.esl_c2 + esl,
                esr_c1=comps.esr_c1 + esr, esr_c2=comps.esr_c2 + esr)
            rows.append((float(esl), float(esr),
                         s21_db(layout, phys, inserted, freq)))
    return rows


def l1_doubling_study(layout: ResolvedLayout, phys: PhysicsParams,
                      comps: Components, freq: float):
    """s21_db with the nominal inductor and with it doubled."""
    base = s21_db(layout, phys, comps, freq)
    doubled_comps = Components(
        c1=comps.c1, c2=comps.c2, l1=2.0 * comps.l1,
        esl_c1=comps.esl_c1, esl_c2=comps.esl_c2,
        esr_c1=comps.esr_c1, esr_c2=comps.esr_c2)
    doubled = s21_db(layout, phys, doubled_comps, freq)
    return base, doubled


def find_dip_frequency(layout: ResolvedLayout, phys: PhysicsParams,
                       comps: Components, f_lo=1e4, f_hi=1e6,
                       points_per_decade=40) -> float:
    """Frequency of minimum |s21| in the given band (the shunt-branch
    resonance dip of the filter response)."""
    result = sweep(layout, phys, comps, f_lo, f_hi, points_per_decade)
    return float(result.frequencies[int(np.argmin(np.abs(result.s21)))])


def write_sweep_csv(result: SweepResult, fh, db_floor=-300.0):
    """CSV export: freq_hz,s21_db,s21_re,s21_im,s11_db at 6 significant
    digits."""
    fh.write("freq_hz,s21_db,s21_re,s21_im,s11_db\n")
    for f, s21, s11 in zip(result.frequencies, result.s21, result.s11):
        fh.write(f"{f:.6g},{to_db(s21, db_floor):.6g},"
                 f"{s21.real:.6g},{s21.imag:.6g},"
                 f"{to_db(s11, db_floor):.6g}\n")
