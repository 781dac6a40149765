"""Distances between distributions on a finite ground set.

Distributions are weight vectors indexed into a shared ground set; ground
costs, semimetrics and kernels are square matrices over that set.
"""

import dataclasses
import itertools

import numpy as np

from ksme.errors import DimensionError, NotNegativeTypeError

MASS_TOL = 1e-9
NEGATIVE_TYPE_TOL = 1e-10
PSD_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class Coupling:
    plan: np.ndarray

    def marginals(self):
        return self.plan.sum(axis=1), self.plan.sum(axis=0)


def _as_dist(weights, name):
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise DimensionError(f"{name} must be a 1-d weight vector")
    return w


def _check_pair(mu, nu, matrix):
    mu = _as_dist(mu, "mu")
    nu = _as_dist(nu, "nu")
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape != (mu.size, nu.size):
        raise DimensionError(
            f"matrix shape {m.shape} does not match supports "
            f"({mu.size}, {nu.size})")
    return mu, nu, m


# --- Transportation simplex -------------------------------------------------


def _northwest_corner(supply, demand):
    p, q = supply.size, demand.size
    s, d = supply.copy(), demand.copy()
    basis, flows = [], []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        basis.append((i, j))
        flows.append(x)
        row_exhausted = s[i] <= d[j]
        s[i] -= x
        d[j] -= x
        if i == p - 1 and j == q - 1:
            break
        if (row_exhausted and i < p - 1) or j == q - 1:
            i += 1
        else:
            j += 1
    return basis, np.array(flows)


def _tree_flows(basis, supply, demand):
    """Flows of the basic solution for a spanning-tree basis (leaf peeling)."""
    p = supply.size
    residual = np.concatenate([supply, demand]).astype(float)
    incident = [[] for _ in range(p + demand.size)]
    for e, (i, j) in enumerate(basis):
        incident[i].append(e)
        incident[p + j].append(e)
    alive = [True] * len(basis)
    degree = [len(edges) for edges in incident]
    flows = np.zeros(len(basis))
    leaves = [v for v, deg in enumerate(degree) if deg == 1]
    while leaves:
        v = leaves.pop()
        if degree[v] != 1:
            continue
        e = next(e for e in incident[v] if alive[e])
        i, j = basis[e]
        other = p + j if v == i else i
        flows[e] = residual[v]
        residual[other] -= residual[v]
        residual[v] = 0.0
        alive[e] = False
        degree[v] = 0
        degree[other] -= 1
        if degree[other] == 1:
            leaves.append(other)
    return flows


def _potentials(adjacency, cost, p, q):
    """Dual values with u[0] = 0 from the spanning-tree basis."""
    u = np.zeros(p)
    v = np.zeros(q)
    seen = [False] * (p + q)
    seen[0] = True
    stack = [0]
    while stack:
        node = stack.pop()
        for other in adjacency[node]:
            if seen[other]:
                continue
            seen[other] = True
            if node < p:
                v[other - p] = cost[node][other - p] - u[node]
            else:
                u[other] = cost[other][node - p] - v[node - p]
            stack.append(other)
    return u, v


def _tree_path(adjacency, start, target):
    """Node sequence from start to target along the spanning tree."""
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == target:
            break
        for other in adjacency[node]:
            if other not in parent:
                parent[other] = node
                stack.append(other)
    path = [target]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path


def _component(adjacency, start):
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                stack.append(other)
    return seen


def transport(supply, demand, cost, basis=None, max_pivots=100000):
    """Exact balanced transportation problem by the transportation simplex.

    Starts from `basis` when it is a primal-feasible spanning tree for these
    marginals, otherwise from the north-west corner rule. The entering cell
    is the most negative reduced cost (smallest row-major index on ties);
    after a run of degenerate pivots the rule switches to Bland's
    smallest-index rule, which cannot cycle. The leaving cell is the
    smallest-index cell attaining the ratio test.

    Args:
      supply: positive weights, shape (p,).
      demand: positive weights, shape (q,), same total mass.
      cost: array of shape (p, q).
      basis: optional warm start: either a list of p + q - 1 cells or the
        {cell: flow} mapping returned by a previous call with the same
        marginals.

    Returns:
      (value, plan, final basis as a {cell: flow} mapping)
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    p, q = supply.size, demand.size
    if p == 1 or q == 1:
        plan = demand[None, :].copy() if p == 1 else supply[:, None].copy()
        basis = {(i, j): plan[i, j] for i in range(p) for j in range(q)}
        return float(np.sum(plan * cost)), plan, basis

    flow_of = None
    if isinstance(basis, dict) and len(basis) == p + q - 1:
        flow_of = dict(basis)
        basis = list(flow_of)
    elif basis is not None and len(basis) == p + q - 1:
        basis = list(basis)
        flows = _tree_flows(basis, supply, demand)
        if np.all(flows >= -1e-12):
            flow_of = dict(zip(basis, np.maximum(flows, 0.0).tolist()))
    if flow_of is None:
        basis, flows = _northwest_corner(supply, demand)
        flow_of = dict(zip(basis, flows.tolist()))
    adjacency = [set() for _ in range(p + q)]
    for i, j in basis:
        adjacency[i].add(p + j)
        adjacency[p + j].add(i)

    cost_rows = cost.tolist()
    u, v = _potentials(adjacency, cost_rows, p, q)
    eps = 1e-12 * max(1.0, float(np.max(np.abs(cost))))
    degenerate_run = 0
    for _ in range(max_pivots):
        reduced = cost - u[:, None] - v[None, :]
        if degenerate_run > p + q:
            candidates = np.flatnonzero(reduced.ravel() < -eps)
            if candidates.size == 0:
                break
            entering = int(candidates[0])
        else:
            entering = int(np.argmin(reduced))
            if reduced.flat[entering] >= -eps:
                break
        delta = float(reduced.flat[entering])
        i, j = divmod(entering, q)
        nodes = _tree_path(adjacency, p + j, i)
        # Edges from column j back to row i alternate -, +, -, ...
        path = [(a, b - p) if a < p else (b, a - p)
                for a, b in zip(nodes[:-1], nodes[1:])]
        minus = path[0::2]
        theta = min(flow_of[c] for c in minus)
        leaving = min((c for c in minus if flow_of[c] == theta),
                      key=lambda c: c[0] * q + c[1])
        for c in minus:
            flow_of[c] -= theta
        for c in path[1::2]:
            flow_of[c] += theta
        del flow_of[leaving]
        flow_of[(i, j)] = theta
        li, lj = leaving
        adjacency[li].discard(p + lj)
        adjacency[p + lj].discard(li)
        side = _component(adjacency, i)
        if 0 in side:
            shifted, sign = _component(adjacency, p + j), -1.0
        else:
            shifted, sign = side, 1.0
        for node in shifted:
            if node < p:
                u[node] += sign * delta
            else:
                v[node - p] -= sign * delta
        adjacency[i].add(p + j)
        adjacency[p + j].add(i)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    else:
        raise RuntimeError("transportation simplex exceeded its pivot budget")

    plan = np.zeros((p, q))
    for (i, j), f in flow_of.items():
        plan[i, j] = f
    return float(np.sum(plan * cost)), plan, flow_of


def kantorovich(mu, nu, d):
    """Kantorovich (Wasserstein-1) distance with ground cost d.

    Returns:
      (value, Coupling) where the coupling is an optimal vertex plan.
    """
    mu, nu, d = _check_pair(mu, nu, d)
    if abs(mu.sum() - nu.sum()) > MASS_TOL:
        raise ValueError(
            f"unbalanced masses: {mu.sum():.12g} vs {nu.sum():.12g}")
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    plan = np.zeros((mu.size, nu.size))
    if rows.size == 0:
        return 0.0, Coupling(plan)
    value, sub_plan, _ = transport(mu[rows], nu[cols], d[np.ix_(rows, cols)])
    plan[np.ix_(rows, cols)] = sub_plan
    return value, Coupling(plan)


def enumerate_vertices(supply, demand):
    """All basic feasible solutions of the transportation polytope.

    Brute force over every set of p + q - 1 cells that forms a spanning
    tree of the bipartite graph; only meant for tiny supports.
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    p, q = supply.size, demand.size
    cells = [(i, j) for i in range(p) for j in range(q)]
    plans = []
    for subset in itertools.combinations(cells, p + q - 1):
        if not _spans(subset, p, q):
            continue
        flows = _tree_flows(list(subset), supply, demand)
        if np.all(flows >= -1e-12):
            plan = np.zeros((p, q))
            for (i, j), f in zip(subset, flows):
                plan[i, j] = f
            plans.append(plan)
    return plans


def _spans(cells, p, q):
    parent = list(range(p + q))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in cells:
        a, b = find(i), find(p + j)
        if a == b:
            return False
        parent[a] = b
    return True


# --- Independent-coupling and kernel distances -------------------------------


def lk_distance(mu, nu, d):
    """Lukaszyk-Karmowski distance E_{X~mu, Y~nu}[d(X, Y)]."""
    mu, nu, d = _check_pair(mu, nu, d)
    return float(mu @ d @ nu)


def robbins_monro_steps(n):
    return 1.0 / n


def lk_stochastic_estimate(xs, ys, d, steps=robbins_monro_steps,
                           n_samples=None):
    """Stochastic approximation of the LK distance from paired samples.

    Runs d_n = (1 - a_n) d_{n-1} + a_n d(x_n, y_n) from d_0 = 0.

    Args:
      xs, ys: iterables of ground-set indices (draws from mu and nu).
      d: ground cost matrix.
      steps: callable n -> a_n (n starts at 1) or a sequence of step sizes.
      n_samples: optional number of draws to consume.
    """
    d = np.asarray(d, dtype=float)
    pairs = zip(xs, ys)
    if n_samples is not None:
        pairs = itertools.islice(pairs, n_samples)
    pairs = np.array(list(pairs), dtype=int).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("empty sample stream")
    if np.any(pairs < 0) or np.any(pairs[:, 0] >= d.shape[0]) or np.any(
            pairs[:, 1] >= d.shape[1]):
        raise DimensionError("sample index outside the cost matrix")
    costs = d[pairs[:, 0], pairs[:, 1]]
    n = costs.size
    if callable(steps):
        alpha = np.array([steps(k) for k in range(1, n + 1)], dtype=float)
    else:
        alpha = np.asarray(steps, dtype=float)[:n]
        if alpha.size < n:
            raise ValueError("fewer step sizes than samples")
    # d_N = sum_n a_n prod_{m > n} (1 - a_m) c_n
    survive = np.append(np.cumprod((1.0 - alpha)[::-1])[::-1][1:], 1.0)
    return float(np.sum(alpha * survive * costs))


def sample_stream(weights, rng, size):
    """`size` i.i.d. ground-set indices drawn from `weights`."""
    w = np.asarray(weights, dtype=float)
    return rng.choice(w.size, size=size, p=w / w.sum())


def mmd_squared(mu, nu, k):
    mu, nu, k = _check_pair(mu, nu, k)
    return float(mu @ k @ mu + nu @ k @ nu - 2.0 * mu @ k @ nu)


def mmd(mu, nu, k):
    """Maximum mean discrepancy ||Phi(mu) - Phi(nu)|| in the RKHS of k."""
    return float(np.sqrt(max(0.0, mmd_squared(mu, nu, k))))


def energy_distance(mu, nu, rho):
    """Energy distance of a negative-type semimetric rho."""
    mu, nu, rho = _check_pair(mu, nu, rho)
    return float(mu @ rho @ nu - 0.5 * (mu @ rho @ mu + nu @ rho @ nu))


def _min_eig_ok(matrix, slack):
    if matrix.size == 0:
        return True, 0.0
    eigs = np.linalg.eigvalsh(matrix)
    radius = float(np.max(np.abs(eigs)))
    return eigs[0] >= -slack * (radius + 1.0), float(eigs[0])


def kernel_from_semimetric(rho, base_point=0):
    """K(x, x') = (rho(x, x0) + rho(x', x0) - rho(x, x')) / 2.

    Raises:
      NotNegativeTypeError: the result is not positive semidefinite.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError("rho must be square")
    col = rho[:, base_point]
    k = 0.5 * (col[:, None] + col[None, :] - rho)
    ok, smallest = _min_eig_ok(k, PSD_TOL)
    if not ok:
        raise NotNegativeTypeError(
            f"kernel at base point {base_point} has eigenvalue {smallest:.3e}")
    return k


def semimetric_from_kernel(k):
    """Squared induced distance k(x,x) + k(y,y) - 2 k(x,y)."""
    k = np.asarray(k, dtype=float)
    diag = np.diag(k)
    rho = diag[:, None] + diag[None, :] - 2.0 * k
    rho = 0.5 * (rho + rho.T)
    np.fill_diagonal(rho, 0.0)
    return np.where(rho < 0.0, 0.0, rho)


@dataclasses.dataclass(frozen=True)
class NegativeTypeResult:
    negative_type: bool
    witness: np.ndarray = None

    def __bool__(self):
        return self.negative_type


def is_negative_type(rho, trials=1000, seed=0):
    """Tests sum_ij c_i c_j rho_ij <= 0 for all zero-sum c.

    First checks that the base-point kernel is PSD for every base point
    (the exact criterion), then probes `trials` random zero-sum vectors.
    On failure a violating zero-sum vector is returned as witness.
    """
    rho = np.asarray(rho, dtype=float)
    n = rho.shape[0]
    if n == 0:
        return NegativeTypeResult(True)
    scale = max(1.0, float(np.max(np.abs(rho))))
    tol = NEGATIVE_TYPE_TOL * scale
    for base in range(n):
        col = rho[:, base]
        k = 0.5 * (col[:, None] + col[None, :] - rho)
        eigs, vecs = np.linalg.eigh(k)
        if eigs[0] < -tol:
            c = vecs[:, 0].copy()
            c[base] -= c.sum()
            if c @ rho @ c > tol * (c @ c):
                return NegativeTypeResult(False, c)
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(trials):
        c = rng.standard_normal(n)
        c -= c.mean()
        if c @ rho @ c > tol * (c @ c):
            return NegativeTypeResult(False, c)
    return NegativeTypeResult(True)
