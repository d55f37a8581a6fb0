"""Decision procedures: mu, coupling existence, truncation ladders, flow oracle.

The quantum question is whether a density operator with prescribed partial
traces exists inside a given subspace; it reduces to the overlap program of
the sdp module (value 1 means yes). Two ladders handle operators presented as
truncations of larger ones: ``f_ladder`` drives a marginal-mismatch minimum
toward 0 over a growing subspace chain, ``sdp_ladder`` drives truncated
overlap values toward 1. The classical special case with diagonal marginals
and a coordinate support graph is decided exactly by max-flow over rationals,
and serves as an independent cross-check of the quantum pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .bipartite import (
    BipartiteOperator,
    DensityOperator,
    Subspace,
    compress_subspace_h2_finite,
    orthonormalize,
    partial_trace_1,
    partial_trace_2,
)
from .linalg import HermitianOperator, DEFAULT_TOL, hermitize, trace_norm
from .sdp import (
    DEFAULT_CONFIG,
    MarginalSdpProblem,
    MarginalSdpSolution,
    SolverConfig,
    solve_f_min_full,
    solve_marginal_sdp,
    solve_supported_overlap,
)

__all__ = [
    "LadderLevel",
    "LadderReport",
    "ClassicalInstance",
    "ClassicalQuantumReport",
    "mu",
    "has_coupling",
    "f_ladder",
    "sdp_ladder",
    "classical_strassen",
    "classical_quantum_consistency",
]

_STALL_WINDOW = 5


@dataclass(frozen=True)
class LadderLevel:
    """One solved truncation level."""

    level: object
    value: float
    gap: float
    wall_time: float
    dual_value: float | None = None
    lower_bound: float | None = None
    dim: int = 0
    status: str = ""


@dataclass(frozen=True)
class LadderReport:
    """Outcome of a truncation ladder run.

    ``criterion`` names the convergence target: ``f_ladder`` levels should fall
    to 0 when a coupling exists, ``sdp_ladder`` levels should climb to 1.
    ``scale`` records the normalization applied to subnormalized inputs (ladder
    values refer to the normalized pair; multiply by ``scale`` to undo).
    """

    levels: tuple
    verdict: str
    criterion: str
    eps_decision: float
    scale: float = 1.0
    skipped_levels: tuple = ()


def _as_density(rho, name: str) -> DensityOperator:
    if isinstance(rho, DensityOperator):
        return rho
    try:
        return DensityOperator(rho)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from exc


def _support_isometry(mat: np.ndarray, tol) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(mat))
    top = max(float(w[-1]), 0.0)
    keep = w > tol.support_rel * top if top > 0 else np.zeros_like(w, dtype=bool)
    return v[:, keep]


def _zero_solution(d1: int, d2: int) -> MarginalSdpSolution:
    dim = d1 * d2
    zero = np.zeros((dim, dim), dtype=complex)
    return MarginalSdpSolution(
        X=BipartiteOperator(zero, d1, d2),
        Y=(
            HermitianOperator(np.zeros((d1, d1))),
            HermitianOperator(np.zeros((d2, d2))),
        ),
        primal_value=0.0,
        dual_value=0.0,
        gap=0.0,
        residuals={
            "psd_violation": 0.0,
            "constraint_violation": 0.0,
            "adjoint_violation": 0.0,
        },
        iterations=0,
        status="optimal",
        primal_history=(0.0,),
    )


def mu(
    rho1,
    rho2,
    x_sub: Subspace,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[float, MarginalSdpSolution]:
    """Optimal overlap of a marginal-dominated PSD operator with the subspace.

    Value 1 (within solver tolerance) is equivalent to the existence of a
    coupling of (rho1, rho2) supported inside the subspace. When a marginal is
    singular the problem is first restricted to the support factors, replacing
    the subspace by its intersection with the support product: the decision is
    unchanged (any coupling lives inside the supports), though sub-maximal
    values refer to the restricted program. The returned solution carries the
    optimizer embedded back into the original ambient space; its dual pair and
    dual value certify the restricted program.
    """
    r1 = _as_density(rho1, "rho1")
    r2 = _as_density(rho2, "rho2")
    d1, d2 = r1.dim, r2.dim
    if x_sub.ambient_dim != d1 * d2:
        raise ValueError(
            f"subspace ambient dim {x_sub.ambient_dim} does not match {d1}*{d2}"
        )
    u1 = _support_isometry(r1.mat, DEFAULT_TOL)
    u2 = _support_isometry(r2.mat, DEFAULT_TOL)
    restricted = u1.shape[1] < d1 or u2.shape[1] < d2
    embed1, embed2 = None, None
    if restricted:
        embed1, embed2 = u1, u2
        p_sub = x_sub.projector.mat
        p_supp = np.kron(u1 @ u1.conj().T, u2 @ u2.conj().T)
        w, v = np.linalg.eigh(hermitize(p_sub + p_supp))
        keep = w > 2.0 - 1e-9
        if not keep.any():
            # The subspace misses the support product entirely: no dominated
            # operator has any overlap, so the optimum is exactly 0.
            return 0.0, _zero_solution(d1, d2)
        lift = np.kron(u1, u2)
        inner = lift.conj().T @ v[:, keep]
        basis = orthonormalize(
            [inner[:, j] for j in range(inner.shape[1])],
            u1.shape[1] * u2.shape[1],
            DEFAULT_TOL.subspace_drop,
        )
        work_sub = Subspace(u1.shape[1] * u2.shape[1], basis)
        work_r1 = hermitize(u1.conj().T @ r1.mat @ u1)
        work_r2 = hermitize(u2.conj().T @ r2.mat @ u2)
        wd1, wd2 = u1.shape[1], u2.shape[1]
    else:
        work_sub = x_sub
        work_r1 = r1.mat
        work_r2 = r2.mat
        wd1, wd2 = d1, d2

    # Factor-1 shrink: when the subspace's factor-1 slices together with the
    # support of rho1 span a proper subspace, the program compresses exactly.
    # After the support restriction above this never reduces anything (the
    # support is full there), so the step is a guarded no-op kept for inputs
    # that arrive pre-restricted.
    if wd2 <= 8 and work_sub.dim * wd2 < wd1:
        embedding, compressed = compress_subspace_h2_finite(work_sub, wd1, wd2)
        pp = embedding @ embedding.conj().T
        outside = trace_norm(work_r1 - pp @ work_r1 @ pp)
        if embedding.shape[1] < wd1 and outside <= 1e-11:
            work_sub = compressed
            work_r1 = hermitize(embedding.conj().T @ work_r1 @ embedding)
            wd1 = embedding.shape[1]
            embed1 = embedding if embed1 is None else embed1 @ embedding

    problem = MarginalSdpProblem(
        BipartiteOperator(work_sub.projector, wd1, wd2),
        work_r1,
        work_r2,
    )
    sol = solve_marginal_sdp(problem, cfg)
    if embed1 is not None or embed2 is not None:
        e1 = embed1 if embed1 is not None else np.eye(d1)
        e2 = embed2 if embed2 is not None else np.eye(d2)
        lift = np.kron(e1, e2)
        x_full = hermitize(lift @ sol.X.mat @ lift.conj().T)
        y1_full = hermitize(e1 @ sol.Y[0].mat @ e1.conj().T)
        y2_full = hermitize(e2 @ sol.Y[1].mat @ e2.conj().T)
        sol = replace(
            sol,
            X=BipartiteOperator(x_full, d1, d2),
            Y=(HermitianOperator(y1_full), HermitianOperator(y2_full)),
        )
    return sol.primal_value, sol


def _decide(
    rho1, rho2, x_sub: Subspace, cfg: SolverConfig
) -> tuple[bool, DensityOperator | None, float, MarginalSdpSolution]:
    r1 = _as_density(rho1, "rho1")
    r2 = _as_density(rho2, "rho2")
    value, sol = mu(r1, r2, x_sub, cfg)
    eps = cfg.eps_decision
    if value < 1.0 - eps:
        return False, None, value, sol
    # Polish: re-solve with the support constraint built in, so the candidate
    # certificate has no mass outside the subspace at all.
    sup_value, x_sup, _ = solve_supported_overlap(x_sub, r1.op, r2.op, cfg)
    if sup_value < 1.0 - eps or sup_value <= 0.0:
        return False, None, value, sol
    rho_hat = hermitize(x_sup.mat / sup_value)
    p = x_sub.projector.mat
    off = np.eye(x_sub.ambient_dim) - p
    supp_leak = trace_norm(off @ rho_hat @ off)
    marg_err = trace_norm(partial_trace_2(rho_hat, r1.dim, r2.dim) - r1.mat) + trace_norm(
        partial_trace_1(rho_hat, r1.dim, r2.dim) - r2.mat
    )
    if supp_leak > 1e-7 or marg_err > 10.0 * eps:
        return False, None, value, sol
    return True, DensityOperator(rho_hat), value, sol


def has_coupling(
    rho1,
    rho2,
    x_sub: Subspace,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[bool, DensityOperator | None]:
    """Decide coupling existence; on success return a certificate state.

    The verdict is true only when the overlap optimum reaches 1 - eps_decision
    and the normalized certificate passes direct checks: support leak outside
    the subspace at most 1e-7 and total marginal error at most
    10 * eps_decision. Ties resolve toward false.
    """
    verdict, cert, _, _ = _decide(rho1, rho2, x_sub, cfg)
    return verdict, cert


def _coerce_basis(x_basis, ambient: int | None = None) -> np.ndarray:
    b = np.asarray(x_basis, dtype=complex)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if b.ndim != 2:
        raise ValueError("basis must be a matrix of column vectors")
    if ambient is not None and b.shape[0] != ambient:
        if b.shape[1] == ambient:
            b = b.T
        else:
            raise ValueError(
                f"basis vectors have length {b.shape[0]}, expected {ambient}"
            )
    return b


def f_ladder(
    rho1,
    rho2,
    x_basis,
    n_max: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> LadderReport:
    """Minimize the marginal mismatch over the nested spans of an ordered basis.

    Level n minimizes f over PSD operators supported in the span of the first
    n basis vectors; the sequence is nonincreasing and reaches 0 in the limit
    exactly when a coupling exists in the full span. Inputs are normalized to
    unit mean trace and the factor recorded as ``scale``. The verdict is
    ``coupling_exists`` when the last level falls below eps_decision,
    ``no_coupling`` when certified lower bounds stay above eps_decision across
    a stalled trailing window, else ``undecided``.
    """
    r1 = hermitize(np.asarray(rho1.mat if hasattr(rho1, "mat") else rho1, dtype=complex))
    r2 = hermitize(np.asarray(rho2.mat if hasattr(rho2, "mat") else rho2, dtype=complex))
    d1, d2 = r1.shape[0], r2.shape[0]
    basis = _coerce_basis(x_basis, d1 * d2)
    if not 1 <= n_max <= basis.shape[1]:
        raise ValueError(f"n_max = {n_max} out of range for basis of {basis.shape[1]}")
    scale = 0.5 * (float(np.trace(r1).real) + float(np.trace(r2).real))
    if scale <= 0:
        raise ValueError("marginals must have positive trace")
    r1n = r1 / scale
    r2n = r2 / scale
    eps = cfg.eps_decision
    levels = []
    warm = None
    for n in range(1, n_max + 1):
        sub = Subspace(d1 * d2, basis[:, :n])
        tic = time.perf_counter()
        sol, warm = solve_f_min_full(r1n, r2n, sub, cfg, warm_start=warm)
        levels.append(
            LadderLevel(
                level=n,
                value=sol.value,
                gap=sol.gap,
                wall_time=time.perf_counter() - tic,
                dual_value=sol.lower_bound,
                lower_bound=sol.lower_bound,
                dim=n,
                status=sol.status,
            )
        )
    last = levels[-1]
    window = levels[-min(_STALL_WINDOW, len(levels)):]
    if last.value < eps:
        verdict = "coupling_exists"
    elif all(lv.lower_bound > eps for lv in window) and all(
        lv.value - last.value <= cfg.gap_tol for lv in window
    ):
        verdict = "no_coupling"
    else:
        verdict = "undecided"
    return LadderReport(
        levels=tuple(levels),
        verdict=verdict,
        criterion="f_ladder",
        eps_decision=eps,
        scale=scale,
    )


def _truncate_subspace(x_sub: Subspace, dd1: int, dd2: int, n: int):
    full = x_sub.basis.reshape(dd1, dd2, x_sub.dim)[:n, :n, :].reshape(n * n, x_sub.dim)
    return orthonormalize(
        [full[:, j] for j in range(x_sub.dim)], n * n, DEFAULT_TOL.subspace_drop
    )


def sdp_ladder(
    rho1_full,
    rho2_full,
    x_sub: Subspace,
    n_max: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> LadderReport:
    """Overlap values of coordinate truncations, climbing to 1 when coupled.

    Level n compresses both factors to their leading n coordinates: marginals
    become leading principal blocks and the subspace is projected and
    re-orthonormalized. Levels where the projected subspace drops rank are
    skipped (the rank is known to stabilize once n passes a finite threshold).
    Verdict ``coupling_exists`` needs the top level to clear 1 - eps_decision
    with a nondecreasing trailing window; ``no_coupling`` is only declared
    when the top level is untruncated and its dual bound still falls short.
    """
    r1 = _as_density(rho1_full, "rho1_full")
    r2 = _as_density(rho2_full, "rho2_full")
    dd1, dd2 = r1.dim, r2.dim
    if x_sub.ambient_dim != dd1 * dd2:
        raise ValueError(
            f"subspace ambient dim {x_sub.ambient_dim} does not match {dd1}*{dd2}"
        )
    if not 1 <= n_max <= min(dd1, dd2):
        raise ValueError(f"n_max = {n_max} out of range for dims ({dd1}, {dd2})")
    eps = cfg.eps_decision
    levels = []
    skipped = []
    prev: tuple[int, np.ndarray, np.ndarray, np.ndarray] | None = None
    for n in range(1, n_max + 1):
        basis = _truncate_subspace(x_sub, dd1, dd2, n)
        if basis.shape[1] < x_sub.dim:
            skipped.append(n)
            continue
        sub = Subspace(n * n, basis)
        problem = MarginalSdpProblem(
            BipartiteOperator(sub.projector, n, n),
            hermitize(r1.mat[:n, :n]),
            hermitize(r2.mat[:n, :n]),
            require_equal_traces=False,
        )
        warm = None
        if prev is not None:
            m, xm, y1m, y2m = prev
            xt = np.zeros((n, n, n, n), dtype=complex)
            xt[:m, :m, :m, :m] = xm.reshape(m, m, m, m)
            y1 = np.zeros((n, n), dtype=complex)
            y1[:m, :m] = y1m
            y2 = np.zeros((n, n), dtype=complex)
            y2[:m, :m] = y2m
            warm = {"X": xt.reshape(n * n, n * n), "Y1": y1, "Y2": y2}
        tic = time.perf_counter()
        sol = solve_marginal_sdp(problem, cfg, warm)
        levels.append(
            LadderLevel(
                level=(n, n),
                value=sol.primal_value,
                gap=sol.gap,
                wall_time=time.perf_counter() - tic,
                dual_value=sol.dual_value,
                dim=x_sub.dim,
                status=sol.status,
            )
        )
        prev = (n, sol.X.mat, sol.Y[0].mat, sol.Y[1].mat)
    if not levels:
        return LadderReport((), "undecided", "sdp_ladder", eps, skipped_levels=tuple(skipped))
    last = levels[-1]
    window = levels[-min(_STALL_WINDOW, len(levels)):]
    nondecreasing = all(
        window[j + 1].value >= window[j].value - 2.0 * cfg.gap_tol
        for j in range(len(window) - 1)
    )
    if last.value > 1.0 - eps and nondecreasing:
        verdict = "coupling_exists"
    elif last.level == (min(dd1, dd2), min(dd1, dd2)) and last.dual_value < 1.0 - eps:
        verdict = "no_coupling"
    else:
        verdict = "undecided"
    return LadderReport(
        levels=tuple(levels),
        verdict=verdict,
        criterion="sdp_ladder",
        eps_decision=eps,
        skipped_levels=tuple(skipped),
    )


@dataclass(frozen=True)
class ClassicalInstance:
    """Diagonal coupling instance: two probability vectors and a support graph.

    Edges are 0-based (row, column) pairs. Both vectors must sum to 1 within
    1e-12 with nonnegative entries.
    """

    m: int
    n: int
    mu1: np.ndarray
    mu2: np.ndarray
    edges: frozenset

    def __init__(self, m: int, n: int, mu1, mu2, edges):
        if m < 1 or n < 1:
            raise ValueError(f"sides must be positive, got ({m}, {n})")
        v1 = np.asarray(mu1, dtype=float).reshape(-1)
        v2 = np.asarray(mu2, dtype=float).reshape(-1)
        if v1.shape[0] != m or v2.shape[0] != n:
            raise ValueError("marginal vector lengths do not match (m, n)")
        for name, v in (("mu1", v1), ("mu2", v2)):
            if (v < 0).any():
                raise ValueError(f"{name} has a negative entry: {v.min():.3e}")
            if abs(v.sum() - 1.0) > 1e-12:
                raise ValueError(
                    f"{name} does not sum to 1: deviation {abs(v.sum() - 1.0):.3e}"
                )
        es = frozenset((int(i), int(j)) for i, j in edges)
        for i, j in es:
            if not (0 <= i < m and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for ({m}, {n})")
        v1.setflags(write=False)
        v2.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "mu1", v1)
        object.__setattr__(self, "mu2", v2)
        object.__setattr__(self, "edges", es)


class _Dinic:
    """Max-flow over exact rationals (capacities are Fractions)."""

    def __init__(self, num_nodes: int):
        self.graph: list[list[list]] = [[] for _ in range(num_nodes)]

    def add_edge(self, u: int, v: int, cap: Fraction) -> int:
        self.graph[u].append([v, cap, len(self.graph[v])])
        self.graph[v].append([u, Fraction(0), len(self.graph[u]) - 1])
        return len(self.graph[u]) - 1

    def _bfs(self, s: int, t: int) -> bool:
        self.level = [-1] * len(self.graph)
        self.level[s] = 0
        queue = [s]
        while queue:
            nxt = []
            for u in queue:
                for v, cap, _ in self.graph[u]:
                    if cap > 0 and self.level[v] < 0:
                        self.level[v] = self.level[u] + 1
                        nxt.append(v)
            queue = nxt
        return self.level[t] >= 0

    def _dfs(self, u: int, t: int, pushed: Fraction) -> Fraction:
        if u == t:
            return pushed
        while self.ptr[u] < len(self.graph[u]):
            edge = self.graph[u][self.ptr[u]]
            v, cap, rev = edge
            if cap > 0 and self.level[v] == self.level[u] + 1:
                got = self._dfs(v, t, min(pushed, cap))
                if got > 0:
                    edge[1] -= got
                    self.graph[v][rev][1] += got
                    return got
            self.ptr[u] += 1
        return Fraction(0)

    def max_flow(self, s: int, t: int) -> Fraction:
        flow = Fraction(0)
        while self._bfs(s, t):
            self.ptr = [0] * len(self.graph)
            while True:
                pushed = self._dfs(s, t, Fraction(10) ** 18)
                if pushed == 0:
                    break
                flow += pushed
        return flow


def classical_strassen(inst: ClassicalInstance):
    """Decide the diagonal instance by exact max-flow; return the coupling if any.

    The transportation network routes mass from a source through the rows,
    across the support edges, through the columns to a sink. Floats convert to
    exact dyadic rationals, so the flow value is exact and feasibility is
    'max flow = 1' with 1e-12 slack for inputs whose sums are off by that much.
    """
    m, n = inst.m, inst.n
    f1 = [Fraction(float(x)) for x in inst.mu1]
    f2 = [Fraction(float(x)) for x in inst.mu2]
    total = sum(f1, Fraction(0))
    source, sink = 0, m + n + 1
    net = _Dinic(m + n + 2)
    for i in range(m):
        net.add_edge(source, 1 + i, f1[i])
    for j in range(n):
        net.add_edge(m + 1 + j, sink, f2[j])
    edge_ids = {}
    for i, j in sorted(inst.edges):
        edge_ids[(i, j)] = net.add_edge(1 + i, m + 1 + j, total)
    flow = net.max_flow(source, sink)
    feasible = (Fraction(1) - flow) <= Fraction(1, 10**12)
    if not feasible:
        return False, None
    coupling = np.zeros((m, n))
    for (i, j), idx in edge_ids.items():
        used = total - net.graph[1 + i][idx][1]
        coupling[i, j] = float(used)
    return True, coupling


@dataclass(frozen=True)
class ClassicalQuantumReport:
    """Side-by-side verdicts of the flow oracle and the quantum pipeline."""

    classical_feasible: bool
    quantum_verdict: bool
    agree: bool
    mu_value: float
    dual_value: float
    classical_coupling: object = None
    certificate: object = None


def classical_quantum_consistency(
    inst: ClassicalInstance, cfg: SolverConfig = DEFAULT_CONFIG
) -> ClassicalQuantumReport:
    """Embed a diagonal instance as a quantum one and compare both verdicts.

    The embedding takes rho_i = diag(mu_i) and spans the subspace by the
    coordinate products e_i (x) e_j over the support edges; the quantum
    coupling question then coincides with the transportation feasibility
    question, so the two verdicts must agree.
    """
    feasible, coupling = classical_strassen(inst)
    m, n = inst.m, inst.n
    if not inst.edges:
        return ClassicalQuantumReport(
            classical_feasible=feasible,
            quantum_verdict=False,
            agree=(feasible is False),
            mu_value=0.0,
            dual_value=0.0,
            classical_coupling=coupling,
        )
    rho1 = DensityOperator(np.diag(inst.mu1).astype(complex))
    rho2 = DensityOperator(np.diag(inst.mu2).astype(complex))
    vecs = []
    for i, j in sorted(inst.edges):
        e = np.zeros(m * n, dtype=complex)
        e[i * n + j] = 1.0
        vecs.append(e)
    sub = Subspace(m * n, np.column_stack(vecs))
    verdict, cert, value, sol = _decide(rho1, rho2, sub, cfg)
    return ClassicalQuantumReport(
        classical_feasible=feasible,
        quantum_verdict=verdict,
        agree=(feasible == verdict),
        mu_value=value,
        dual_value=sol.dual_value,
        classical_coupling=coupling,
        certificate=cert,
    )
