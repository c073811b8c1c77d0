"""Transport costs and discrete optimal-transport solvers.

Four cost kinds are supported:

``log-squared``
    ``log(1 + |x-y|^2 / delta^2)``; its optimal value is the discrepancy
    written ``tilde D_delta`` in the docs. It is not a metric.
``log-linear``
    ``log(1 + |x-y| / delta)``; its optimal value is ``D_delta``.
``osgood``
    ``psi_delta(|x-y|^2)`` with ``psi_delta(s) = int_0^s dr / (rho(r) + delta^2)``.
``power``
    ``|x-y|^p``; its optimal value is ``W_p^p``.

The exact solver is a transportation simplex (MODI pricing on a spanning
tree basis). Square problems with uniform weights take an assignment fast
path, and 1D power costs can be evaluated by sorted quantiles.
"""

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConvergenceError, InvalidMeasureError, SizeCapError
from .measures import GridDensity, ParticleCloud

COST_KINDS = ("log-squared", "log-linear", "osgood", "power")
DEFAULT_SIZE_CAP = 10 ** 6
MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class CostSpec:
    """Ground cost selection.

    Parameters
    ----------
    kind : str
        One of ``log-squared``, ``log-linear``, ``osgood``, ``power``.
    delta : float
        Scale for the logarithmic and Osgood kinds.
    p : float
        Exponent for the power kind.
    modulus : OsgoodModulus, optional
        Required for the Osgood kind.
    """

    kind: str = "log-squared"
    delta: float = 1.0
    p: float = 2.0
    modulus: object = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.p >= 1:
            raise ValueError("p must be at least 1")
        if self.kind == "osgood" and self.modulus is None:
            raise ValueError("the osgood kind needs a registered modulus")

    def with_delta(self, delta):
        return CostSpec(self.kind, delta, self.p, self.modulus)

    def to_dict(self):
        out = {"kind": self.kind, "delta": self.delta, "p": self.p}
        if self.modulus is not None:
            out["modulus"] = getattr(self.modulus, "name", "custom")
        return out


@dataclass
class TransportPlan:
    """Coupling between two discrete measures and its cost."""

    rows: ParticleCloud
    cols: ParticleCloud
    matrix: np.ndarray
    cost: float
    solver: str
    gap: float = 0.0
    spec: CostSpec = None

    def marginal_error(self):
        r = np.abs(self.matrix.sum(axis=1) - self.rows.weights).max()
        c = np.abs(self.matrix.sum(axis=0) - self.cols.weights).max()
        return float(max(r, c))

    def triplets(self, tol=0.0):
        i, j = np.nonzero(self.matrix > tol)
        return i, j, self.matrix[i, j]


def as_cloud(measure):
    """Turn a grid density into atoms at cell centres; clouds pass through."""
    if isinstance(measure, GridDensity):
        return measure.to_cloud()
    if isinstance(measure, ParticleCloud):
        return measure
    return ParticleCloud(np.asarray(measure, dtype=float))


def _sq_dist(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cost_from_sq_dist(spec, sq):
    """Apply the cost profile to squared distances (any array shape)."""
    sq = np.asarray(sq, dtype=float)
    if spec.kind == "log-squared":
        return np.log1p(sq / spec.delta ** 2)
    if spec.kind == "log-linear":
        return np.log1p(np.sqrt(sq) / spec.delta)
    if spec.kind == "power":
        return sq ** (spec.p / 2.0)
    from .coefficients import psi_table
    return psi_table(spec.modulus, spec.delta)(sq)


def cost_matrix(spec, x, y):
    """Pairwise cost matrix between point sets ``x`` (n, d) and ``y`` (m, d)."""
    return cost_from_sq_dist(spec, _sq_dist(x, y))


def eval_cost(spec, x, y):
    """Cost between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(cost_from_sq_dist(spec, np.sum((x - y) ** 2)))


def pair_costs(spec, x, y):
    """Row-wise costs ``c(x_k, y_k)`` for paired arrays of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = (x - y).reshape(x.shape[0], -1)
    return cost_from_sq_dist(spec, np.sum(d * d, axis=1))


def _check_marginals(a, b):
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise InvalidMeasureError("measures carry different total mass")


def northwest_corner(a, b, row_order=None, col_order=None):
    """Basic feasible solution from the north-west corner rule.

    Returns the flow matrix and the list of ``n + m - 1`` basic cells.
    Degenerate steps keep a zero-flow cell so the basis is always a
    spanning tree of the bipartite row/column graph.
    """
    n, m = len(a), len(b)
    rows = list(range(n)) if row_order is None else list(row_order)
    cols = list(range(m)) if col_order is None else list(col_order)
    supply = np.array(a, dtype=float)
    demand = np.array(b, dtype=float)
    flow = np.zeros((n, m))
    basis = []
    ii = jj = 0
    while True:
        i, j = rows[ii], cols[jj]
        x = min(supply[i], demand[j])
        flow[i, j] = x
        basis.append((i, j))
        supply[i] -= x
        demand[j] -= x
        if ii == n - 1 and jj == m - 1:
            break
        if jj == m - 1 or (ii < n - 1 and supply[i] <= demand[j]):
            ii += 1
        else:
            jj += 1
    return np.clip(flow, 0.0, None), basis


def _tree_path(adj, start, goal):
    """Node path between two nodes of the basis tree (BFS)."""
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def _potentials(adj, cost, n, m):
    u = np.zeros(n)
    v = np.zeros(m)
    seen = {0}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:
            if nxt in seen:
                continue
            seen.add(nxt)
            if node < n:
                v[nxt - n] = cost[node, nxt - n] - u[node]
            else:
                u[nxt] = cost[nxt, node - n] - v[node - n]
            queue.append(nxt)
    return u, v


def transportation_simplex(a, b, cost, max_iter=None, tol=1e-12):
    """Solve the discrete transport LP by the transportation simplex.

    Parameters
    ----------
    a, b : ndarray
        Row and column weights with equal totals.
    cost : ndarray, shape (n, m)
    max_iter : int, optional
        Pivot limit; defaults to ``50 * n * m + 100``.
    tol : float
        Relative tolerance on reduced costs for optimality.

    Returns
    -------
    flow : ndarray
        Optimal basic flow.
    u, v : ndarray
        Dual potentials with ``u_i + v_j = c_ij`` on basic cells.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    flow, basis = northwest_corner(a, b)
    adj = {k: set() for k in range(n + m)}
    for i, j in basis:
        adj[i].add(n + j)
        adj[n + j].add(i)
    scale = max(1.0, float(np.abs(cost).max()))
    limit = max_iter if max_iter is not None else 50 * n * m + 100
    bland_after = limit // 2
    for it in range(limit):
        u, v = _potentials(adj, cost, n, m)
        reduced = cost - u[:, None] - v[None, :]
        if it < bland_after:
            k = int(np.argmin(reduced))
            if reduced.flat[k] >= -tol * scale:
                return flow, u, v
        else:
            neg = np.flatnonzero(reduced.ravel() < -tol * scale)
            if neg.size == 0:
                return flow, u, v
            k = int(neg[0])
        i0, j0 = divmod(k, m)
        path = _tree_path(adj, n + j0, i0)
        # path alternates column, row, column, ... from j0 to i0
        cells = []
        for s in range(len(path) - 1):
            p, q = path[s], path[s + 1]
            cells.append((q, p - n) if q < n else (p, q - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta_idx = min(range(len(minus)), key=lambda t: (flow[minus[t]], t))
        theta = flow[minus[theta_idx]]
        flow[i0, j0] += theta
        for c in plus:
            flow[c] += theta
        for c in minus:
            flow[c] = max(flow[c] - theta, 0.0)
        li, lj = minus[theta_idx]
        flow[li, lj] = 0.0
        adj[li].discard(n + lj)
        adj[n + lj].discard(li)
        adj[i0].add(n + j0)
        adj[n + j0].add(i0)
    raise ConvergenceError("transportation simplex hit its pivot limit", {"iterations": limit})


def _plan(mu, nu, matrix, cost, spec, solver, gap):
    value = float(np.sum(matrix * cost))
    return TransportPlan(mu, nu, matrix, value, solver, float(gap), spec)


def solve_exact(mu, nu, spec, size_cap=DEFAULT_SIZE_CAP, cost=None):
    """Optimal coupling for the given cost.

    Parameters
    ----------
    mu, nu : ParticleCloud or GridDensity
    spec : CostSpec
    size_cap : int
        Maximum number of cost-matrix entries.
    cost : ndarray, optional
        Precomputed cost matrix.

    Returns
    -------
    TransportPlan
        ``cost`` is the optimal value, i.e. ``W_p^p`` for the power kind.
    """
    mu, nu = as_cloud(mu), as_cloud(nu)
    n, m = mu.size, nu.size
    if n * m > size_cap:
        raise SizeCapError(f"{n}x{m} exceeds the cap of {size_cap} entries; use solve_entropic")
    a, b = mu.weights, nu.weights
    _check_marginals(a, b)
    c = cost_matrix(spec, mu.points, nu.points) if cost is None else np.asarray(cost, dtype=float)
    if n == m and np.all(a == a[0]) and np.all(b == a[0]):
        rows, cols = linear_sum_assignment(c)
        matrix = np.zeros((n, m))
        matrix[rows, cols] = a[0]
        return _plan(mu, nu, matrix, c, spec, "exact", 0.0)
    flow, u, v = transportation_simplex(a, b, c)
    primal = float(np.sum(flow * c))
    dual = float(a @ u + b @ v)
    return _plan(mu, nu, flow, c, spec, "exact", abs(primal - dual))


def _tree_flow(a, b, cells):
    """Flows on a spanning-tree basis by repeated leaf elimination."""
    n, m = len(a), len(b)
    rest = np.concatenate([a, b]).astype(float)
    adj = {k: set() for k in range(n + m)}
    for i, j in cells:
        adj[i].add(n + j)
        adj[n + j].add(i)
    flow = np.zeros((n, m))
    leaves = [k for k in adj if len(adj[k]) == 1]
    while leaves:
        leaf = leaves.pop()
        if len(adj[leaf]) != 1:
            continue
        other = adj[leaf].pop()
        adj[other].discard(leaf)
        x = rest[leaf]
        i, j = (leaf, other - n) if leaf < n else (other, leaf - n)
        flow[i, j] = x
        rest[other] -= x
        rest[leaf] = 0.0
        if len(adj[other]) == 1:
            leaves.append(other)
    return flow


def enumerate_vertices(a, b, tol=1e-12):
    """All basic feasible solutions of the transport polytope.

    Every spanning tree of the complete bipartite row/column graph is a
    candidate basis; its unique flow is kept when nonnegative. Intended as
    a brute-force oracle for tiny problems (at most 4 x 4).
    """
    n, m = len(a), len(b)
    cells = [(i, j) for i in range(n) for j in range(m)]
    need = n + m - 1
    parent = list(range(n + m))

    def find(k):
        while parent[k] != k:
            k = parent[k]
        return k

    vertices = {}

    def extend(start, chosen):
        if len(chosen) == need:
            flow = _tree_flow(a, b, chosen)
            if flow.min() >= -tol:
                flow = np.clip(flow, 0.0, None)
                vertices.setdefault(tuple(np.round(flow.ravel(), 13)), flow)
            return
        if len(cells) - start < need - len(chosen):
            return
        for idx in range(start, len(cells)):
            i, j = cells[idx]
            ri, rj = find(i), find(n + j)
            if ri == rj:
                continue
            parent[ri] = rj
            extend(idx + 1, chosen + [(i, j)])
            parent[ri] = ri

    extend(0, [])
    return list(vertices.values())


def brute_force_cost(a, b, cost):
    """Minimum of the linear cost over all enumerated vertices."""
    return min(float(np.sum(f * cost)) for f in enumerate_vertices(a, b))


def round_to_marginals(plan, a, b):
    """Project a nonnegative matrix onto the coupling set (additive rounding)."""
    p = np.array(plan, dtype=float)
    r = p.sum(axis=1)
    p *= np.minimum(1.0, np.divide(a, r, out=np.ones_like(a), where=r > 0))[:, None]
    c = p.sum(axis=0)
    p *= np.minimum(1.0, np.divide(b, c, out=np.ones_like(b), where=c > 0))[None, :]
    err_r = a - p.sum(axis=1)
    err_c = b - p.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        p += np.outer(err_r, err_c) / total
    return p


def solve_entropic(mu, nu, spec, epsilon, max_iters=100000, tol=1e-6, cost=None):
    """Entropic transport by stabilised Sinkhorn scaling with epsilon annealing.

    The scaled iterate is rounded onto the coupling set, so the reported
    cost is the cost of a feasible plan and hence an upper bound on the
    exact value. The gap is the distance to a feasible dual obtained by a
    c-transform of the Sinkhorn potentials.

    Parameters
    ----------
    mu, nu : ParticleCloud or GridDensity
    spec : CostSpec
    epsilon : float
        Target regularisation strength (absolute, in cost units).
    max_iters : int
        Total Sinkhorn sweeps allowed across all scaling stages.
    tol : float
        Marginal violation at which a stage stops.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mu, nu = as_cloud(mu), as_cloud(nu)
    a, b = mu.weights, nu.weights
    _check_marginals(a, b)
    c = cost_matrix(spec, mu.points, nu.points) if cost is None else np.asarray(cost, dtype=float)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    scale = max(float(c.max()), epsilon)
    stages = [scale]
    while stages[-1] > epsilon:
        stages.append(max(stages[-1] / 4.0, epsilon))
    used = 0
    err = np.inf
    for eps in stages:
        final = eps == stages[-1]
        target = tol if final else max(tol, 1e-3)
        # scaling iterations on a stabilised kernel; large scalings are
        # absorbed into the potentials f, g
        kernel = np.exp((f[:, None] + g[None, :] - c) / eps)
        u = np.ones(len(a))
        v = np.ones(len(b))
        while used < max_iters:
            used += 1
            u = a / np.maximum(kernel @ v, 1e-300)
            v = b / np.maximum(kernel.T @ u, 1e-300)
            if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 30:
                f += eps * np.log(u)
                g += eps * np.log(v)
                kernel = np.exp((f[:, None] + g[None, :] - c) / eps)
                u[:] = 1.0
                v[:] = 1.0
            if used % 10 == 0:
                err = np.abs(u * (kernel @ v) - a).sum()
                if err < target:
                    break
        f += eps * np.log(u)
        g += eps * np.log(v)
        if used >= max_iters and err >= target:
            raise ConvergenceError("Sinkhorn did not reach the marginal tolerance",
                                   {"iterations": used, "epsilon": eps, "marginal_error": float(err)})
    p = np.exp((f[:, None] + g[None, :] - c) / epsilon)
    p = round_to_marginals(p, a, b)
    primal = float(np.sum(p * c))
    g_feasible = np.min(c - f[:, None], axis=0)
    dual = float(a @ f + b @ g_feasible)
    return _plan(mu, nu, p, c, spec, "entropic", max(0.0, primal - dual))


def quantile_wasserstein_1d(mu, nu, p):
    """W_p between 1D weighted atom sets via the monotone rearrangement."""
    mu, nu = as_cloud(mu), as_cloud(nu)
    xi = np.argsort(mu.points[:, 0], kind="stable")
    yi = np.argsort(nu.points[:, 0], kind="stable")
    x, wx = mu.points[xi, 0], mu.weights[xi]
    y, wy = nu.points[yi, 0], nu.weights[yi]
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    lower = np.concatenate([[0.0], levels[:-1]])
    mids = 0.5 * (lower + levels)
    widths = levels - lower
    qx = x[np.minimum(np.searchsorted(cx, mids), len(x) - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mids), len(y) - 1)]
    return float(np.sum(widths * np.abs(qx - qy) ** p) ** (1.0 / p))


def wasserstein(mu, nu, p):
    """W_p between discrete measures; 1D inputs use sorted quantiles."""
    mu, nu = as_cloud(mu), as_cloud(nu)
    if mu.dim == 1 and nu.dim == 1:
        return quantile_wasserstein_1d(mu, nu, p)
    plan = solve_exact(mu, nu, CostSpec("power", p=p))
    return float(max(plan.cost, 0.0) ** (1.0 / p))


@dataclass(frozen=True)
class DistanceRelations:
    """Both logarithmic distances and the two comparison inequalities."""

    d_linear: float
    d_squared: float
    lhs1: float
    rhs1: float
    lhs2: float
    rhs2: float

    @property
    def passed(self):
        slack = 1e-12
        return self.lhs1 <= self.rhs1 + slack and self.lhs2 <= self.rhs2 + slack


def distance_relations(mu, nu, delta):
    """Compute ``D_delta`` and ``tilde D_delta`` and check their comparison.

    Checks ``tilde D <= 2 D`` and ``D <= sqrt(tilde D / log 2) + tilde D``.
    """
    d_lin = solve_exact(mu, nu, CostSpec("log-linear", delta)).cost
    d_sq = solve_exact(mu, nu, CostSpec("log-squared", delta)).cost
    d_lin, d_sq = max(d_lin, 0.0), max(d_sq, 0.0)
    return DistanceRelations(d_lin, d_sq, d_sq, 2.0 * d_lin, d_lin,
                             math.sqrt(d_sq / math.log(2.0)) + d_sq)


def write_plan_csv(path, plan, tol=0.0):
    """Write ``(i, j, mass)`` triplets and a JSON header next to it."""
    i, j, w = plan.triplets(tol)
    body = np.column_stack([i, j, w])
    np.savetxt(path, body, delimiter=",", header="i,j,mass", comments="",
               fmt=["%d", "%d", "%.17g"])
    header = {"kind": "transport-plan", "value": plan.cost, "gap": plan.gap,
              "solver": plan.solver, "shape": list(plan.matrix.shape)}
    if plan.spec is not None:
        header["cost"] = plan.spec.to_dict()
    Path(path).with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
