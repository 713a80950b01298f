"""SE(2) pose-graph optimisation with odometry and position-equality loop edges.

Cost is ``sum r_o' L r_o + sum r_l' L r_l``. Odometry residuals compare the
motion prediction ``x_i (+) u`` with ``x_j`` in the predicted frame; loop
residuals are the plain position difference ``p_j - p_i``, leaving heading
free at revisits. Node 0 is the gauge anchor and never moves.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .exceptions import ArgumentError, SolverError
from .motion import OdometryEdge, compose, wrap_angle

logger = logging.getLogger(__name__)

LOOP_SIGMA_M = 0.25
DENSE_LIMIT = 500


def loop_information(sigma_m=LOOP_SIGMA_M):
    return np.eye(2) / sigma_m**2


@dataclass
class LoopEdge:
    i: int
    j: int
    information: np.ndarray = field(default_factory=loop_information)


@dataclass
class PoseGraph:
    nodes: np.ndarray
    odo_edges: list
    loop_edges: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.array(self.nodes, dtype=np.float64).reshape(-1, 3)
        n = len(self.nodes)
        for e in self.odo_edges:
            if not (0 <= e.from_idx < n and 0 <= e.to_idx < n):
                raise ArgumentError(f"odometry edge {e.from_idx}->{e.to_idx} out of range for {n} nodes")
        for e in self.loop_edges:
            if not (0 <= e.i < n and 0 <= e.j < n) or e.i == e.j:
                raise ArgumentError(f"loop edge ({e.i}, {e.j}) invalid for {n} nodes")

    @classmethod
    def from_closures(cls, nodes, odo_edges, pairs, sigma_m=LOOP_SIGMA_M):
        info = loop_information(sigma_m)
        return cls(nodes, odo_edges, [LoopEdge(int(i), int(j), info) for i, j in pairs])


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    reason: str = ""


def motion_predict(x, u):
    return compose(x, u)


def _rot(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]])


_S = np.array([[0.0, -1.0], [1.0, 0.0]])


def odometry_residual(xi, xj, u):
    pred = compose(xi, u)
    R = _rot(pred[2])
    exy = R.T @ (xj[:2] - pred[:2])
    return np.array([exy[0], exy[1], wrap_angle(xj[2] - pred[2])])


def odometry_jacobians(xi, xj, u):
    """Return ``(A, B)`` with ``A = d r / d x_i`` and ``B = d r / d x_j`` (3x3 each)."""
    Ri = _rot(xi[2])
    pred_p = xi[:2] + Ri @ u[:2]
    Rp_T = _rot(xi[2] + u[2]).T
    d = xj[:2] - pred_p
    A = np.zeros((3, 3))
    A[:2, :2] = -Rp_T
    A[:2, 2] = -_S @ Rp_T @ d - Rp_T @ Ri @ _S @ u[:2]
    A[2, 2] = -1.0
    B = np.zeros((3, 3))
    B[:2, :2] = Rp_T
    B[2, 2] = 1.0
    return A, B


def loop_residual(xi, xj):
    return xj[:2] - xi[:2]


def cost(g, nodes=None):
    X = g.nodes if nodes is None else nodes
    total = 0.0
    for e in g.odo_edges:
        r = odometry_residual(X[e.from_idx], X[e.to_idx], e.delta)
        total += r @ e.information @ r
    for e in g.loop_edges:
        r = loop_residual(X[e.i], X[e.j])
        total += r @ e.information @ r
    return float(total)


def _cost_vectorised(g, X, odo):
    i, j, U, L = odo
    pred = compose(X[i], U)
    c, s = np.cos(pred[:, 2]), np.sin(pred[:, 2])
    d = X[j, :2] - pred[:, :2]
    r = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], wrap_angle(X[j, 2] - pred[:, 2])], 1)
    total = np.einsum("ni,nij,nj->", r, L, r)
    for e in g.loop_edges:
        rl = X[e.j, :2] - X[e.i, :2]
        total += rl @ e.information @ rl
    return float(total)


def _linearise(g, X):
    """Gradient ``b = J' L r`` and Gauss-Newton Hessian ``H = J' L J`` over all 3N variables."""
    n = len(X)
    rows, cols, vals = [], [], []
    b = np.zeros(3 * n)

    def add_block(ia, ib, M):
        r, c = np.meshgrid(np.arange(3 * ia, 3 * ia + 3), np.arange(3 * ib, 3 * ib + 3), indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(M.ravel())

    for e in g.odo_edges:
        i, j = e.from_idx, e.to_idx
        r = odometry_residual(X[i], X[j], e.delta)
        A, B = odometry_jacobians(X[i], X[j], e.delta)
        L = e.information
        b[3 * i:3 * i + 3] += A.T @ L @ r
        b[3 * j:3 * j + 3] += B.T @ L @ r
        add_block(i, i, A.T @ L @ A)
        add_block(i, j, A.T @ L @ B)
        add_block(j, i, B.T @ L @ A)
        add_block(j, j, B.T @ L @ B)
    P = np.zeros((2, 3))
    P[:, :2] = np.eye(2)
    for e in g.loop_edges:
        i, j = e.i, e.j
        r = loop_residual(X[i], X[j])
        L = e.information
        A, B = -P, P
        b[3 * i:3 * i + 3] += A.T @ L @ r
        b[3 * j:3 * j + 3] += B.T @ L @ r
        add_block(i, i, A.T @ L @ A)
        add_block(i, j, A.T @ L @ B)
        add_block(j, i, B.T @ L @ A)
        add_block(j, j, B.T @ L @ B)
    if not rows:
        H = scipy.sparse.csc_matrix((3 * n, 3 * n))
    else:
        H = scipy.sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(3 * n, 3 * n)).tocsc()
    return H, b


def _solve(H, rhs, dense):
    if dense:
        Hd = H.toarray() if scipy.sparse.issparse(H) else H
        c, low = scipy.linalg.cho_factor(Hd, check_finite=True)
        return scipy.linalg.cho_solve((c, low), rhs)
    x = scipy.sparse.linalg.spsolve(H.tocsc(), rhs)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("sparse solve produced non-finite values")
    return x


def optimize(g, max_iterations=100, rel_tol=1e-9, grad_tol=1e-8, lambda0=1e-4, max_lambda=1e12):
    """Levenberg-Marquardt with Marquardt diagonal scaling; node 0 is held fixed.

    Returns ``(nodes, SolveReport)``. Accepted steps never increase the cost.
    """
    if not g.odo_edges and not g.loop_edges:
        raise ArgumentError("pose graph has no edges")
    X = g.nodes.copy()
    n = len(X)
    if n < 2:
        c0 = cost(g, X)
        return X, SolveReport(0, c0, c0, True, "single node")
    odo = (np.array([e.from_idx for e in g.odo_edges], int), np.array([e.to_idx for e in g.odo_edges], int),
           np.array([e.delta for e in g.odo_edges]).reshape(-1, 3),
           np.array([e.information for e in g.odo_edges]).reshape(-1, 3, 3))
    dense = n < DENSE_LIMIT
    free = np.arange(3, 3 * n)
    lam = lambda0
    f = _cost_vectorised(g, X, odo)
    f0 = f
    converged, reason, it = False, "max iterations", 0
    for it in range(1, max_iterations + 1):
        H, b = _linearise(g, X)
        H = H[free][:, free]
        b = b[free]
        if np.linalg.norm(b, np.inf) < grad_tol:
            converged, reason, it = True, "gradient", it - 1
            break
        diag = H.diagonal()
        scale = np.maximum(diag, 1e-12)
        accepted = False
        solved = 0
        while lam <= max_lambda:
            Hd = H + scipy.sparse.diags(lam * scale, format="csc")
            try:
                step = _solve(Hd, -b, dense)
            except (np.linalg.LinAlgError, RuntimeError, ValueError):
                lam *= 10.0
                continue
            solved += 1
            Xn = X.copy()
            Xn.reshape(-1)[free] += step
            Xn[:, 2] = wrap_angle(Xn[:, 2])
            fn = _cost_vectorised(g, Xn, odo)
            if np.isfinite(fn) and fn <= f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            if not solved:
                raise SolverError("normal equations singular after damping escalation")
            converged, reason = True, "no decrease"
            break
        rel = (f - fn) / max(f, 1e-300)
        X, f = Xn, fn
        lam = max(lam / 3.0, 1e-15)
        logger.debug("LM iter %d cost %.6g lambda %.3g", it, f, lam)
        if rel < rel_tol:
            converged, reason = True, "relative decrease"
            break
    return X, SolveReport(it, f0, f, converged, reason)


def export_g2o(g, path_or_file):
    """Write the graph as VERTEX_SE2 / EDGE_SE2 / EDGE_XY text lines."""
    lines = []
    for k, p in enumerate(g.nodes):
        lines.append(f"VERTEX_SE2 {k} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    lines.append("FIX 0")
    for e in g.odo_edges:
        L = e.information
        upper = [L[0, 0], L[0, 1], L[0, 2], L[1, 1], L[1, 2], L[2, 2]]
        lines.append(f"EDGE_SE2 {e.from_idx} {e.to_idx} " + " ".join(f"{v:.9g}" for v in e.delta)
                     + " " + " ".join(f"{v:.9g}" for v in upper))
    for e in g.loop_edges:
        L = e.information
        lines.append(f"EDGE_XY {e.i} {e.j} 0 0 {L[0, 0]:.9g} {L[0, 1]:.9g} {L[1, 1]:.9g}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def odometry_from_nodes(nodes, information=None):
    from .motion import relative
    d = relative(nodes[:-1], nodes[1:])
    info = np.eye(3) if information is None else information
    return [OdometryEdge(k, k + 1, d[k], info) for k in range(len(d))]
