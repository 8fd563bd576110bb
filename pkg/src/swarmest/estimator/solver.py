"""Robust Levenberg-Marquardt over 4-DoF pose variables.

Residuals and Jacobians are evaluated in batches per edge type by
:mod:`swarmest.kernels`; the normal equations are assembled as a sparse
matrix and solved with a sparse LU factorisation.

Robust edges use iteratively reweighted least squares: each robust block
is scaled by ``sqrt(rho'(s))`` at the current estimate, which makes
``J^T r`` the exact gradient of half the robust cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .. import kernels
from ..measurements import (
    DetectionEdge,
    DistanceEdge,
    MapEdge,
    OdometryEdge,
    tangent_basis_batch,
)

log = logging.getLogger(__name__)


@dataclass
class SolveStats:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = False
    reason: str = ""
    gradient_norm: float = float("nan")

    @property
    def diverged(self) -> bool:
        return not self.converged


class _PosePairs:
    def __init__(self, meas, inv_sig, ia, ib, robust):
        self.meas, self.inv_sig, self.ia, self.ib = meas, inv_sig, ia, ib
        self.robust = robust
        self.m = 4

    def evaluate(self, x):
        r, ja, jb = kernels.pose_pair_batch(self.meas, self.inv_sig, x[self.ia], x[self.ib])
        return r, ja, jb, None


class _Distances:
    m = 1
    robust = True

    def __init__(self, d, inv_sig, ia, ib):
        self.d, self.inv_sig, self.ia, self.ib = d, inv_sig, ia, ib

    def evaluate(self, x):
        r, ja, jb = kernels.distance_batch(self.d, self.inv_sig, x[self.ia], x[self.ib])
        return r[:, None], ja[:, None, :], jb[:, None, :], None


class _Detections:
    m = 3
    robust = True

    def __init__(self, edges, ia, ib):
        self.ia, self.ib = ia, ib
        self.dirs = np.array([e.direction for e in edges])
        self.inv_depth = np.array([e.inv_depth for e in edges])
        self.cam_pos = np.array([e.cam_pos for e in edges])
        self.basis = tangent_basis_batch(self.dirs)
        self.isd = np.array([1.0 / e.sigma_dir for e in edges])
        self.iss = np.array([1.0 / e.sigma_inv_depth for e in edges])

    def evaluate(self, x):
        r, ja, jb, valid = kernels.detection_batch(
            self.dirs, self.inv_depth, self.cam_pos, self.basis, self.isd, self.iss,
            x[self.ia], x[self.ib])
        return r, ja, jb, valid


class Problem:
    """A fixed set of edges over a fixed set of variables.

    ``keys`` orders the variables; ``fixed`` keys are constants and
    ``frozen_yaw`` keys have their yaw held constant.
    """

    def __init__(self, edges, keys, fixed=(), frozen_yaw=(), huber_delta: float = 1.0):
        self.keys = list(keys)
        self.index = {k: n for n, k in enumerate(self.keys)}
        self.delta = huber_delta
        n = len(self.keys)
        col = np.full((n, 4), -1, dtype=np.int64)
        c = 0
        fixed, frozen_yaw = set(fixed), set(frozen_yaw)
        for r, k in enumerate(self.keys):
            if k in fixed:
                continue
            for q in range(4):
                if q == 3 and k in frozen_yaw:
                    continue
                col[r, q] = c
                c += 1
        self.col = col
        self.n_params = c
        self.edges = list(edges)
        self.blocks = self._build(self.edges)
        self.n_rows = sum(len(b.ia) * b.m for b in self.blocks)

    def _idx(self, keys):
        try:
            return np.array([self.index[k] for k in keys], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"edge references unknown variable {exc}") from None

    def _build(self, edges):
        groups = {t: [] for t in (OdometryEdge, MapEdge, DistanceEdge, DetectionEdge)}
        for n, e in enumerate(edges):
            groups[type(e)].append(n)
        blocks = []
        self.block_edges = []
        for etype, robust in ((OdometryEdge, False), (MapEdge, True)):
            group = [edges[n] for n in groups[etype]]
            if group:
                meas = np.array([(e.delta if etype is OdometryEdge else e.rel).as_array() for e in group])
                inv = 1.0 / np.array([e.sigma for e in group], dtype=float)
                blocks.append(_PosePairs(meas, inv, self._idx(e.keys[0] for e in group),
                                         self._idx(e.keys[1] for e in group), robust))
                self.block_edges.append(np.array(groups[etype]))
        dist = [edges[n] for n in groups[DistanceEdge]]
        if dist:
            blocks.append(_Distances(np.array([e.d for e in dist]),
                                     np.array([1.0 / e.sigma for e in dist]),
                                     self._idx(e.keys[0] for e in dist),
                                     self._idx(e.keys[1] for e in dist)))
            self.block_edges.append(np.array(groups[DistanceEdge]))
        det = [edges[n] for n in groups[DetectionEdge]]
        if det:
            blocks.append(_Detections(det, self._idx(e.keys[0] for e in det),
                                      self._idx(e.keys[1] for e in det)))
            self.block_edges.append(np.array(groups[DetectionEdge]))
        return blocks

    # -- evaluation ------------------------------------------------------

    def _robust(self, s):
        d2 = self.delta * self.delta
        big = s > d2
        sq = np.sqrt(np.where(big, s, 1.0))
        rho = np.where(big, 2.0 * self.delta * sq - d2, s)
        w = np.where(big, self.delta / sq, 1.0)
        return rho, w

    def cost(self, x) -> float:
        total = 0.0
        for b in self.blocks:
            r = b.evaluate(x)[0]
            s = np.einsum("ij,ij->i", r, r)
            total += float(np.sum(self._robust(s)[0] if b.robust else s))
        return total

    def per_edge(self, x) -> np.ndarray:
        """Whitened residual norm of every edge, aligned with ``self.edges``."""
        out = np.zeros(len(self.edges))
        for b, idx in zip(self.blocks, self.block_edges):
            r = b.evaluate(x)[0]
            out[idx] = np.sqrt(np.einsum("ij,ij->i", r, r))
        return out

    def linearize(self, x):
        rows, cols, vals, res = [], [], [], []
        total = 0.0
        base = 0
        for b in self.blocks:
            r, ja, jb, _ = b.evaluate(x)
            n, m = r.shape
            s = np.einsum("ij,ij->i", r, r)
            if b.robust:
                rho, w = self._robust(s)
                total += float(np.sum(rho))
                sw = np.sqrt(w)
                r = r * sw[:, None]
                ja = ja * sw[:, None, None]
                jb = jb * sw[:, None, None]
            else:
                total += float(np.sum(s))
            res.append(r.ravel())
            row_ids = base + np.arange(n * m).reshape(n, m)
            for idx, jac in ((b.ia, ja), (b.ib, jb)):
                c = self.col[idx]  # (n, 4)
                rr = np.broadcast_to(row_ids[:, :, None], (n, m, 4))
                cc = np.broadcast_to(c[:, None, :], (n, m, 4))
                mask = cc >= 0
                rows.append(rr[mask])
                cols.append(cc[mask])
                vals.append(jac[mask])
            base += n * m
        r = np.concatenate(res) if res else np.zeros(0)
        if rows:
            jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(base, self.n_params))
        else:
            jac = sp.csr_matrix((base, self.n_params))
        return r, jac, total

    def apply(self, x, delta):
        x = x.copy()
        mask = self.col >= 0
        x[mask] += delta[self.col[mask]]
        return x


def solve(problem: Problem, x0: np.ndarray, max_iter: int = 50, grad_tol: float = 1e-8,
          cost_tol: float = 1e-9, lam0: float = 1e-4,
          step_tol: float = 1e-8) -> tuple[np.ndarray, SolveStats]:
    """Minimise the robust cost from ``x0``; never returns a costlier state.

    A solve converges on a vanishing gradient, or when the relative cost
    decrease falls below ``cost_tol`` with every state component moving by
    less than ``step_tol`` (metres or radians).
    """
    x = np.array(x0, dtype=float)
    stats = SolveStats()
    if problem.n_params == 0 or problem.n_rows == 0:
        c = problem.cost(x) if problem.n_rows else 0.0
        stats.initial_cost = stats.final_cost = c
        stats.converged, stats.reason = True, "nothing to optimise"
        return x, stats
    r, jac, cost = problem.linearize(x)
    stats.initial_cost = cost
    if not np.isfinite(cost):
        stats.final_cost, stats.reason = cost, "non-finite initial cost"
        return x, stats
    lam = lam0
    nu = 2.0
    jt = jac.T.tocsr()
    g = jt @ r
    h = (jt @ jac).tocsc()
    it = 0
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        stats.gradient_norm = gnorm
        if gnorm < grad_tol:
            stats.converged, stats.reason = True, "gradient"
            break
        if it >= max_iter:
            stats.reason = "max iterations"
            # a state this close to stationary is a converged solve
            stats.converged = gnorm < 1e-4 * max(1.0, cost)
            break
        it += 1
        damp = np.maximum(h.diagonal(), 1e-9)
        accepted = False
        while lam < 1e12:
            a = (h + sp.diags(lam * damp)).tocsc()
            try:
                step = splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True}).solve(-g)
            except RuntimeError:
                lam *= nu
                nu *= 2.0
                continue
            if not np.all(np.isfinite(step)):
                lam *= nu
                nu *= 2.0
                continue
            x_new = problem.apply(x, step)
            new_cost = problem.cost(x_new)
            if np.isfinite(new_cost) and new_cost <= cost:
                # gain ratio against the decrease predicted by the linear model
                pred = float(step @ (lam * damp * step - g))
                rho = (cost - new_cost) / pred if pred > 0 else 0.0
                lam = max(lam * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3), 1e-12)
                nu = 2.0
                accepted = True
                break
            lam *= nu
            nu *= 2.0
        if not accepted:
            # no damped step reduces the cost: numerically at a minimum
            stats.converged, stats.reason = True, "no descent step"
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        x, cost = x_new, new_cost
        r, jac, cost_lin = problem.linearize(x)
        jt = jac.T.tocsr()
        g = jt @ r
        h = (jt @ jac).tocsc()
        if rel < cost_tol and float(np.max(np.abs(step))) < step_tol:
            stats.converged, stats.reason = True, "cost decrease"
            stats.gradient_norm = float(np.max(np.abs(g)))
            break
    stats.iterations = it
    stats.final_cost = cost
    return x, stats
