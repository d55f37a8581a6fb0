"""Unit tests for the decision layer: mu, coupling verdicts, ladders, max-flow.

The classical max-flow decision is cross-checked against an exhaustive
Hall-condition oracle; the quantum decisions against constructed instances
whose feasibility is known by design.
"""

from __future__ import annotations

import numpy as np
import pytest

from qstrassen.bipartite import (
    DensityOperator,
    Subspace,
    partial_trace_1,
    partial_trace_2,
)
from qstrassen.linalg import trace_norm
from qstrassen.sdp import SolverConfig
from qstrassen.strassen import (
    ClassicalInstance,
    classical_quantum_consistency,
    classical_strassen,
    f_ladder,
    has_coupling,
    mu,
    sdp_ladder,
)

from oracles import hall_feasible

CFG = SolverConfig()


def crand(rng, p, q):
    return rng.standard_normal((p, q)) + 1j * rng.standard_normal((p, q))


def random_state(rng, dim, rank):
    g = crand(rng, dim, rank)
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def bell_subspace() -> Subspace:
    v = np.zeros(4, dtype=complex)
    v[0] = v[3] = 1.0 / np.sqrt(2.0)
    return Subspace(4, v.reshape(4, 1))


def corner_subspace() -> Subspace:
    v = np.zeros(4, dtype=complex)
    v[0] = 1.0
    return Subspace(4, v.reshape(4, 1))


def coupled_instance(rng, d, rank):
    """A state, its two marginals, and its support subspace (feasible by design)."""
    rho = random_state(rng, d * d, rank)
    w, v = np.linalg.eigh(rho)
    basis = v[:, w > 1e-12 * w[-1]]
    r1 = partial_trace_2(rho, d, d)
    r2 = partial_trace_1(rho, d, d)
    return r1, r2, Subspace(d * d, basis)


# ---------------------------------------------------------------------------
# mu


def test_mu_reaches_one_on_maximally_entangled():
    value, sol = mu(np.eye(2) / 2, np.eye(2) / 2, bell_subspace())
    assert value >= 1.0 - 1e-4
    assert sol.status == "optimal"


def test_mu_corner_value_is_min_of_weights():
    a, b = 0.3, 0.55
    value, _ = mu(np.diag([a, 1 - a]), np.diag([b, 1 - b]), corner_subspace())
    assert abs(value - min(a, b)) < 1e-5


def test_mu_handles_singular_marginals_by_support_restriction():
    r1 = np.diag([1.0, 0.0]).astype(complex)
    r2 = np.diag([1.0, 0.0]).astype(complex)
    value, sol = mu(r1, r2, corner_subspace())
    assert value >= 1.0 - 1e-4
    # the lifted optimizer still lives in the original ambient space
    assert sol.X.d1 == 2 and sol.X.d2 == 2


def test_mu_zero_when_subspace_misses_support():
    v = np.zeros(4, dtype=complex)
    v[3] = 1.0  # e1 (x) e1
    sub = Subspace(4, v.reshape(4, 1))
    value, sol = mu(np.diag([1.0, 0.0]), np.diag([1.0, 0.0]), sub)
    assert value == 0.0
    assert sol.status == "optimal"
    assert sol.iterations == 0


def test_mu_rejects_bad_inputs():
    with pytest.raises(ValueError, match="rho1"):
        mu(np.diag([1.5, -0.5]), np.eye(2) / 2, bell_subspace())
    with pytest.raises(ValueError, match="does not match"):
        mu(np.eye(2) / 2, np.eye(2) / 2, Subspace(6, np.eye(6)[:, :1]))


# ---------------------------------------------------------------------------
# has_coupling


def test_has_coupling_true_with_valid_certificate():
    verdict, cert = has_coupling(np.eye(2) / 2, np.eye(2) / 2, bell_subspace())
    assert verdict is True
    assert cert is not None
    rho_hat = cert.mat
    p = bell_subspace().projector.mat
    off = np.eye(4) - p
    assert trace_norm(off @ rho_hat @ off) <= 1e-7
    marg_err = trace_norm(partial_trace_2(rho_hat, 2, 2) - np.eye(2) / 2) + trace_norm(
        partial_trace_1(rho_hat, 2, 2) - np.eye(2) / 2
    )
    assert marg_err <= 10.0 * CFG.eps_decision


def test_has_coupling_false_on_obstruction():
    verdict, cert = has_coupling(
        np.diag([0.0, 1.0]), np.diag([1.0, 0.0]), corner_subspace()
    )
    assert verdict is False
    assert cert is None


def test_has_coupling_false_below_threshold():
    # optimum min(a, b) = 0.3 is far from 1, so the verdict must be negative
    verdict, cert = has_coupling(
        np.diag([0.3, 0.7]), np.diag([0.55, 0.45]), corner_subspace()
    )
    assert verdict is False
    assert cert is None


def test_has_coupling_on_random_constructed_instance():
    rng = np.random.default_rng(2)
    r1, r2, sub = coupled_instance(rng, 3, 2)
    verdict, cert = has_coupling(r1, r2, sub)
    assert verdict is True
    marg_err = trace_norm(partial_trace_2(cert.mat, 3, 3) - r1) + trace_norm(
        partial_trace_1(cert.mat, 3, 3) - r2
    )
    assert marg_err <= 1e-3


# ---------------------------------------------------------------------------
# f ladder


def test_f_ladder_decreases_to_zero_on_feasible_chain():
    # first direction alone cannot couple (I/2, I/2); adding the maximally
    # entangled vector makes the mismatch vanish
    e01 = np.zeros(4, dtype=complex)
    e01[1] = 1.0
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1.0 / np.sqrt(2.0)
    basis = np.column_stack([e01, bell])
    rep = f_ladder(np.eye(2) / 2, np.eye(2) / 2, basis, 2)
    assert rep.verdict == "coupling_exists"
    assert rep.criterion == "f_ladder"
    values = [lv.value for lv in rep.levels]
    assert len(values) == 2
    assert values[0] >= 0.9  # level 1 cannot do better than f = 1
    assert values[1] <= 1e-4
    assert all(lv.wall_time >= 0.0 for lv in rep.levels)


def test_f_ladder_monotone_under_warm_starts():
    rng = np.random.default_rng(3)
    d = 3
    rho = random_state(rng, d * d, 3)
    r1 = partial_trace_2(rho, d, d)
    r2 = partial_trace_1(rho, d, d)
    q, _ = np.linalg.qr(crand(rng, d * d, 4))
    rep = f_ladder(r1, r2, q, 4)
    values = [lv.value for lv in rep.levels]
    assert all(values[i + 1] <= values[i] + 2e-6 for i in range(len(values) - 1))


def test_f_ladder_no_coupling_on_obstruction():
    rep = f_ladder(
        np.diag([0.0, 1.0]).astype(complex),
        np.diag([1.0, 0.0]).astype(complex),
        corner_subspace().basis,
        1,
    )
    assert rep.verdict == "no_coupling"
    assert rep.levels[0].lower_bound > rep.eps_decision


def test_f_ladder_normalizes_subnormalized_inputs():
    rep = f_ladder(np.eye(2) / 4, np.eye(2) / 4, bell_subspace().basis, 1)
    assert abs(rep.scale - 0.5) < 1e-12
    assert rep.verdict == "coupling_exists"


def test_f_ladder_rejects_bad_n_max():
    with pytest.raises(ValueError, match="out of range"):
        f_ladder(np.eye(2) / 2, np.eye(2) / 2, bell_subspace().basis, 5)


# ---------------------------------------------------------------------------
# sdp ladder


def test_sdp_ladder_climbs_to_one_on_feasible_instance():
    rng = np.random.default_rng(4)
    d = 3
    rho = random_state(rng, d * d, 2)
    w, v = np.linalg.eigh(rho)
    sub = Subspace(d * d, v[:, w > 1e-12 * w[-1]])
    r1 = DensityOperator(partial_trace_2(rho, d, d))
    r2 = DensityOperator(partial_trace_1(rho, d, d))
    rep = sdp_ladder(r1, r2, sub, d)
    assert rep.verdict == "coupling_exists"
    assert rep.criterion == "sdp_ladder"
    assert rep.levels[-1].value > 1.0 - 1e-4
    assert rep.levels[-1].level == (3, 3)
    # a generic 2-dim subspace cannot survive the 1 (x) 1 truncation
    assert 1 in rep.skipped_levels


def test_sdp_ladder_no_coupling_on_independent_marginals():
    rng = np.random.default_rng(5)
    d = 3
    rho_a = random_state(rng, d * d, 2)
    rho_b = random_state(rng, d * d, 3)
    w, v = np.linalg.eigh(rho_a)
    sub = Subspace(d * d, v[:, w > 1e-12 * w[-1]])
    r1 = DensityOperator(partial_trace_2(rho_a, d, d))
    r2 = DensityOperator(partial_trace_1(rho_b, d, d))
    rep = sdp_ladder(r1, r2, sub, d)
    assert rep.verdict == "no_coupling"
    assert rep.levels[-1].dual_value < 1.0 - 1e-4


def test_sdp_ladder_rejects_bad_inputs():
    rng = np.random.default_rng(6)
    r1, r2, sub = coupled_instance(rng, 2, 1)
    with pytest.raises(ValueError, match="out of range"):
        sdp_ladder(DensityOperator(r1), DensityOperator(r2), sub, 3)
    with pytest.raises(ValueError, match="does not match"):
        sdp_ladder(
            DensityOperator(np.eye(3) / 3),
            DensityOperator(np.eye(3) / 3),
            sub,
            2,
        )


# ---------------------------------------------------------------------------
# classical instances and max-flow


def test_classical_instance_validation():
    with pytest.raises(ValueError, match="sides must be positive"):
        ClassicalInstance(0, 1, [], [1.0], set())
    with pytest.raises(ValueError, match="lengths do not match"):
        ClassicalInstance(2, 1, [1.0], [1.0], set())
    with pytest.raises(ValueError, match="negative entry"):
        ClassicalInstance(2, 1, [1.5, -0.5], [1.0], set())
    with pytest.raises(ValueError, match="does not sum to 1"):
        ClassicalInstance(2, 1, [0.4, 0.4], [1.0], set())
    with pytest.raises(ValueError, match="out of range"):
        ClassicalInstance(2, 2, [0.5, 0.5], [0.5, 0.5], {(2, 0)})


def test_classical_strassen_simple_cases():
    # single row and column joined by the only edge
    ok, coupling = classical_strassen(ClassicalInstance(1, 1, [1.0], [1.0], {(0, 0)}))
    assert ok is True
    assert abs(coupling[0, 0] - 1.0) < 1e-12
    # no edges cannot carry any mass
    ok, coupling = classical_strassen(ClassicalInstance(1, 1, [1.0], [1.0], set()))
    assert ok is False
    assert coupling is None


def test_classical_strassen_starved_row_is_infeasible():
    # row 0 exceeds the only column it can reach
    inst = ClassicalInstance(
        2,
        2,
        [0.75, 0.25],
        [0.5, 0.5],
        {(0, 0), (1, 0), (1, 1)},
    )
    ok, _ = classical_strassen(inst)
    assert ok is False
    assert not hall_feasible(inst.mu1, inst.mu2, set(inst.edges))


def test_classical_strassen_matches_hall_oracle():
    rng = np.random.default_rng(7)
    checked_feasible = 0
    for trial in range(200):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        mu1 = rng.dirichlet(np.ones(m))
        mu2 = rng.dirichlet(np.ones(n))
        edges = {
            (i, j) for i in range(m) for j in range(n) if rng.random() < 0.55
        }
        inst = ClassicalInstance(m, n, mu1, mu2, edges)
        ok, coupling = classical_strassen(inst)
        assert ok == hall_feasible(mu1, mu2, edges), f"trial {trial} disagrees"
        if ok:
            checked_feasible += 1
            assert np.all(coupling >= -1e-15)
            assert np.max(np.abs(coupling.sum(axis=1) - mu1)) < 1e-9
            assert np.max(np.abs(coupling.sum(axis=0) - mu2)) < 1e-9
            outside = [(i, j) for i in range(m) for j in range(n)
                       if (i, j) not in edges and coupling[i, j] != 0.0]
            assert not outside
    assert checked_feasible >= 20  # the sample must exercise both verdicts


# ---------------------------------------------------------------------------
# classical vs quantum agreement


def test_classical_quantum_consistency_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(8):
        m = int(rng.integers(2, 4))
        n = int(rng.integers(2, 4))
        mu1 = rng.dirichlet(np.ones(m))
        mu2 = rng.dirichlet(np.ones(n))
        edges = {
            (i, j) for i in range(m) for j in range(n) if rng.random() < 0.6
        }
        rep = classical_quantum_consistency(ClassicalInstance(m, n, mu1, mu2, edges))
        assert rep.agree, (m, n, sorted(edges))
        assert rep.classical_feasible == rep.quantum_verdict


def test_classical_quantum_consistency_empty_support():
    rep = classical_quantum_consistency(
        ClassicalInstance(2, 2, [0.5, 0.5], [0.5, 0.5], set())
    )
    assert rep.classical_feasible is False
    assert rep.quantum_verdict is False
    assert rep.agree
