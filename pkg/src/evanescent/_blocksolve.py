"""Exact shift-invert solves for 2D five-point Hamiltonians whose potential
is separable, V(x, y) = p(y) + q(x), on long runs of mesh columns.

On such a run the transverse operator K = T_y + diag(p) is diagonalised once;
in its eigenbasis the run splits into independent tridiagonal problems along
x.  The remaining ("general") columns are coupled through a block-tridiagonal
Schur complement with dense n_y x n_y blocks.  Sylvester's law of inertia
applied to the same elimination counts the eigenvalues below the shift.

For the reference mesh (3201 x 801 nodes) only ~30 columns near the step edge
are general, so a solve costs a few dense n_y x n_y products per column.

ModeReduction exploits the same structure for eigenvalues.  Transverse modes
that are closed below a target energy decay geometrically along a run, so only
a few nodes next to the general columns are kept for them.  The result is a
principal submatrix of H in a mixed node/mode basis whose low eigenpairs lift
back to the mesh with negligible residual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

# a relative mismatch below this counts as the same transverse profile
_PROFILE_RTOL = 1e-12


@dataclass
class _Run:
    start: int
    stop: int  # exclusive
    q: np.ndarray  # per-column offset, shape (n,)
    lam: np.ndarray  # transverse eigenvalues, shape (n_y,)
    Q: np.ndarray  # transverse eigenvectors (columns)

    @property
    def n(self) -> int:
        return self.stop - self.start


def find_separable_runs(V: np.ndarray, min_run: int = 16) -> list[tuple[int, int]]:
    """Maximal column ranges ``[start, stop)`` on which V[i, :] - V[start, :]
    is constant in y."""
    n_x = V.shape[0]
    scale = max(np.max(np.abs(V)), 1.0)
    rel = V - V[:, :1]
    runs = []
    start = 0
    for i in range(1, n_x + 1):
        if i == n_x or np.max(np.abs(rel[i] - rel[start])) > _PROFILE_RTOL * scale:
            if i - start >= min_run:
                runs.append((start, i))
            start = i
    return runs


class SeparableShiftInvert:
    """Factory for (H - sigma)^-1 on a five-point Hamiltonian.

    Parameters are the potential array ``V`` (n_x, n_y) in meV, the spacings
    and hbar^2/2m.  Call :meth:`factor` for each shift.
    """

    def __init__(self, V: np.ndarray, h_x: float, h_y: float, kinetic: float, min_run: int = 16):
        V = np.asarray(V, dtype=float)
        self.shape = V.shape
        n_x, n_y = V.shape
        self.t_x = -kinetic / h_x**2
        self.t_y = -kinetic / h_y**2
        self.d = 2 * kinetic / h_x**2 + 2 * kinetic / h_y**2
        self.V = V
        spans = find_separable_runs(V, min_run)
        # general columns must separate runs and at least one column must be general
        trimmed = []
        for a, b in spans:
            if trimmed and trimmed[-1][1] >= a:
                a = trimmed[-1][1] + 1
            if b - a >= min_run:
                trimmed.append((a, b))
        if trimmed and sum(b - a for a, b in trimmed) == n_x:
            a, b = trimmed[-1]
            trimmed[-1] = (a, b - 1)
        self.runs: list[_Run] = []
        for a, b in trimmed:
            p = V[a]
            # eigenvalues include the x-kinetic diagonal, so a run mode k at column i
            # has tridiagonal diagonal q_i + lam_k - sigma
            lam, Q = sla.eigh_tridiagonal(p + self.d, np.full(n_y - 1, self.t_y))
            self.runs.append(_Run(a, b, V[a:b, 0] - p[0], lam, np.ascontiguousarray(Q)))
        in_run = np.zeros(n_x, bool)
        for r in self.runs:
            in_run[r.start:r.stop] = True
        self.general = np.flatnonzero(~in_run)
        self._run_left_of = {}  # general column -> run ending just before it
        self._run_right_of = {}
        for r in self.runs:
            if r.start > 0:
                self._run_right_of[r.start - 1] = r
            if r.stop < n_x:
                self._run_left_of[r.stop] = r

    @property
    def separable_fraction(self) -> float:
        return sum(r.n for r in self.runs) / self.shape[0]

    def factor(self, sigma: float) -> "ShiftInvertFactor":
        return ShiftInvertFactor(self, sigma)


def _thomas_factor(diag: np.ndarray, off: float) -> np.ndarray:
    """LDL^T pivots of symmetric tridiagonals along axis 0 (vectorised over axis 1)."""
    piv = np.empty_like(diag)
    piv[0] = diag[0]
    off2 = off * off
    for i in range(1, diag.shape[0]):
        piv[i] = diag[i] - off2 / piv[i - 1]
    return piv


class _ModeTridiagonal:
    """Independent tridiagonals along axis 0, one per column of ``diag``,
    factored together as one long LAPACK tridiagonal (mode-major order)."""

    def __init__(self, diag: np.ndarray, off: float):
        n, m = diag.shape
        self.shape = (n, m)
        d = np.ascontiguousarray(diag.T).reshape(-1)
        e = np.full(n * m - 1, off)
        e[n - 1::n] = 0.0  # decouple consecutive modes
        dl, d, du, du2, ipiv, info = lapack.dgttrf(e, d, e.copy())
        if info > 0:
            raise np.linalg.LinAlgError("shift coincides with a separable-run eigenvalue")
        self._lu = (dl, d, du, du2, ipiv)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve for ``b`` of shape (n, m) or a stack (p, n, m)."""
        n, m = self.shape
        if b.ndim == 2:
            return self.solve(b[None])[0]
        p = b.shape[0]
        rhs = np.asfortranarray(b.transpose(2, 1, 0).reshape(m * n, p))
        x, info = lapack.dgttrs(*self._lu, rhs, overwrite_b=1)
        return x.reshape(m, n, p).transpose(2, 1, 0)


def _mm(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``a @ m`` over the last axis as a single 2D GEMM."""
    a = np.ascontiguousarray(a)
    return (a.reshape(-1, a.shape[-1]) @ m).reshape(a.shape[:-1] + (m.shape[1],))


class ShiftInvertFactor:
    def __init__(self, op: SeparableShiftInvert, sigma: float):
        self.op = op
        self.sigma = sigma
        n_y = op.shape[1]
        t_x = op.t_x
        self._piv = []
        self._gf = []  # T^-1 e_first, per run, shape (n, n_y)
        self._gl = []
        self._run_negatives = 0
        for r in op.runs:
            diag = r.q[:, None] + r.lam[None, :] - sigma
            piv = _thomas_factor(diag, t_x)
            self._run_negatives += int(np.count_nonzero(piv < 0))
            self._piv.append(_ModeTridiagonal(diag, t_x))
            e = np.zeros((r.n, n_y))
            e[0] = 1.0
            gf = self._piv[-1].solve(e)
            e[0] = 0.0
            e[-1] = 1.0
            gl = self._piv[-1].solve(e)
            self._gf.append(gf)
            self._gl.append(gl)
        self._factor_schur()

    # -- Schur complement on the general columns --------------------------------
    def _column_block(self, i: int) -> np.ndarray:
        op = self.op
        n_y = op.shape[1]
        A = np.zeros((n_y, n_y))
        idx = np.arange(n_y)
        A[idx, idx] = op.d + op.V[i] - self.sigma
        A[idx[:-1], idx[1:]] = op.t_y
        A[idx[1:], idx[:-1]] = op.t_y
        return A

    def _run_index(self, r: _Run) -> int:
        return next(k for k, s in enumerate(self.op.runs) if s is r)

    def _factor_schur(self):
        op = self.op
        t2 = op.t_x**2
        G = op.general
        self._diag_lu = []
        self._upper = []  # coupling block between G[j] and G[j+1], or None if none
        self._negatives = self._run_negatives
        self._schur_diag = []
        prev_inv_upper = None
        for j, g in enumerate(G):
            S = self._column_block(g)
            r = op._run_left_of.get(g)
            if r is not None:
                k = self._run_index(r)
                S -= t2 * (r.Q * self._gl[k][-1]) @ r.Q.T
            r = op._run_right_of.get(g)
            if r is not None:
                k = self._run_index(r)
                S -= t2 * (r.Q * self._gf[k][0]) @ r.Q.T
            if j > 0 and self._upper[j - 1] is not None:
                U = self._upper[j - 1]
                S -= U.T @ prev_inv_upper
            S = 0.5 * (S + S.T)
            lu = sla.lu_factor(S, check_finite=False)
            self._diag_lu.append(lu)
            self._schur_diag.append(S)
            if j + 1 < len(G):
                g2 = G[j + 1]
                if g2 == g + 1:
                    U = op.t_x * np.eye(op.shape[1])
                else:
                    r = op._run_right_of.get(g)
                    if r is None or r.stop != g2:
                        U = None
                    else:
                        k = self._run_index(r)
                        U = -t2 * (r.Q * self._gf[k][-1]) @ r.Q.T
                self._upper.append(U)
                prev_inv_upper = sla.lu_solve(lu, U, check_finite=False) if U is not None else None

    def negative_count(self) -> int:
        """Number of eigenvalues of H strictly below ``sigma``."""
        n = self._run_negatives
        for S in self._schur_diag:
            n += int(np.count_nonzero(sla.eigvalsh(S, check_finite=False) < 0))
        return n

    # -- solve -------------------------------------------------------------------
    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply (H - sigma)^-1 to a vector of length N or to the columns of an (N, p) block."""
        op = self.op
        n_x, n_y = op.shape
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self.solve(b.real) + 1j * self.solve(b.imag)
        single = b.ndim == 1
        B = np.ascontiguousarray(b.reshape(n_x * n_y, -1).T).reshape(-1, n_x, n_y)  # (p, n_x, n_y)
        t_x = op.t_x
        z = [self._piv[k].solve(_mm(B[:, r.start:r.stop], r.Q)) for k, r in enumerate(op.runs)]
        G = op.general
        rhs = B[:, G].transpose(1, 0, 2).astype(float)  # (m, p, n_y), row vectors
        for j, g in enumerate(G):
            r = op._run_left_of.get(g)
            if r is not None:
                rhs[j] -= t_x * (z[self._run_index(r)][:, -1] @ r.Q.T)
            r = op._run_right_of.get(g)
            if r is not None:
                rhs[j] -= t_x * (z[self._run_index(r)][:, 0] @ r.Q.T)
        # block LDL^T on the general columns; all blocks are symmetric
        m = len(G)
        y = np.empty_like(rhs)
        dy = np.empty_like(rhs)
        for j in range(m):
            v = rhs[j]
            if j > 0 and self._upper[j - 1] is not None:
                v = v - dy[j - 1] @ self._upper[j - 1]
            y[j] = v
            dy[j] = sla.lu_solve(self._diag_lu[j], v.T, check_finite=False).T
        u = np.empty_like(rhs)
        u[m - 1] = dy[m - 1]
        for j in range(m - 2, -1, -1):
            if self._upper[j] is None:
                u[j] = dy[j]
            else:
                v = y[j] - u[j + 1] @ self._upper[j]
                u[j] = sla.lu_solve(self._diag_lu[j], v.T, check_finite=False).T
        out = np.empty_like(B, dtype=float)
        out[:, G] = u.transpose(1, 0, 2)
        for k, r in enumerate(op.runs):
            zz = z[k]
            if r.start > 0:
                ua = u[np.searchsorted(G, r.start - 1)] @ r.Q
                zz = zz - t_x * self._gf[k][None] * ua[:, None, :]
            if r.stop < n_x:
                ub = u[np.searchsorted(G, r.stop)] @ r.Q
                zz = zz - t_x * self._gl[k][None] * ub[:, None, :]
            out[:, r.start:r.stop] = _mm(zz, r.Q.T)
        out = out.reshape(out.shape[0], -1).T
        return out.ravel() if single else out


class ModeReduction:
    """Galerkin subspace for eigenpairs below ``E_max``.

    Inside a separable run an eigenvector's component along transverse mode k
    solves a 1D tridiagonal problem driven only at the run's ends.  Modes with
    q + lam_k - E above the x-kinetic band decay geometrically away from those
    ends, so they are kept only within the distance where the decay bound falls
    below ``eps``; the remaining (open) modes are kept along the whole run, and
    every node of the general columns is kept.  The basis is orthonormal, so the
    reduced matrix is a principal submatrix of H in the mixed node/mode basis.
    """

    def __init__(self, op: SeparableShiftInvert, E_max: float, eps: float = 1e-12):
        self.op = op
        n_x, n_y = op.shape
        t = abs(op.t_x)
        G = op.general
        self.n_general = len(G) * n_y
        offset = self.n_general
        self._keep = []  # per run: (lengths from start, lengths from end), per mode
        self._offsets = []
        for r in op.runs:
            D = r.q.min() + r.lam - E_max
            with np.errstate(invalid="ignore", divide="ignore"):
                rho = (D - np.sqrt(np.maximum(D * D - 4 * t * t, 0.0))) / (2 * t)
                depth = np.ceil(np.log(eps) / np.log(rho)).astype(float) + 2
            depth[D <= 2 * t * (1 + 1e-9)] = np.inf
            depth = np.minimum(depth, r.n).astype(int)
            left = depth if r.start > 0 else np.zeros_like(depth)
            right = depth if r.stop < n_x else np.zeros_like(depth)
            full = depth >= r.n
            left[full], right[full] = r.n, 0
            over = left + right >= r.n
            left[over], right[over] = r.n, 0
            self._keep.append((left, right))
            self._offsets.append(offset)
            offset += int(left.sum() + right.sum())
        self.dimension = offset

    def _run_nodes(self, j: int):
        """(mode, node) pairs kept in run j, in reduced-index order."""
        left, right = self._keep[j]
        n = self.op.runs[j].n
        modes, nodes = [], []
        for k in range(len(left)):
            if left[k]:
                modes.append(np.full(left[k], k))
                nodes.append(np.arange(left[k]))
            if right[k]:
                modes.append(np.full(right[k], k))
                nodes.append(np.arange(n - right[k], n))
        return np.concatenate(modes), np.concatenate(nodes)

    def matrix(self):
        import scipy.sparse as sp

        op = self.op
        n_x, n_y = op.shape
        G = op.general
        rows, cols, vals = [], [], []

        def add(i, j, v):
            rows.append(np.atleast_1d(i))
            cols.append(np.atleast_1d(j))
            vals.append(np.broadcast_to(v, np.shape(np.atleast_1d(i))).astype(float))

        gpos = {g: a for a, g in enumerate(G)}
        jj = np.arange(n_y)
        for a, g in enumerate(G):
            base = a * n_y
            add(base + jj, base + jj, op.d + op.V[g])
            add(base + jj[:-1], base + jj[1:], op.t_y)
            if g + 1 in gpos:
                add(base + jj, base + n_y + jj, op.t_x)
        for j, r in enumerate(op.runs):
            modes, nodes = self._run_nodes(j)
            idx = self._offsets[j] + np.arange(len(modes))
            add(idx, idx, r.q[nodes] + r.lam[modes])
            nxt = (modes[1:] == modes[:-1]) & (nodes[1:] == nodes[:-1] + 1)
            add(idx[:-1][nxt], idx[1:][nxt], op.t_x)
            for end, g in ((0, r.start - 1), (r.n - 1, r.stop)):
                if g in gpos:
                    sel = np.flatnonzero(nodes == end)
                    gi = gpos[g] * n_y + jj
                    # <g, y_i| H |run node, mode k> = t_x Q[i, k]
                    add(np.repeat(gi, len(sel)), np.tile(idx[sel], n_y),
                        op.t_x * r.Q[:, modes[sel]].ravel())
        r_ = np.concatenate(rows)
        c_ = np.concatenate(cols)
        v_ = np.concatenate(vals)
        upper = sp.coo_matrix((v_, (r_, c_)), shape=(self.dimension,) * 2).tocsr()
        diag = sp.diags(upper.diagonal())
        return (upper + upper.T - diag).tocsr()

    def lift(self, y: np.ndarray) -> np.ndarray:
        """Node values (flattened, x-major) of the reduced vector ``y``."""
        op = self.op
        n_x, n_y = op.shape
        out = np.zeros((n_x, n_y))
        out[op.general] = y[:self.n_general].reshape(-1, n_y)
        for j, r in enumerate(op.runs):
            left, right = self._keep[j]
            C = np.zeros((r.n, n_y))
            pos = self._offsets[j]
            for k in range(n_y):
                if left[k]:
                    C[:left[k], k] = y[pos:pos + left[k]]
                    pos += left[k]
                if right[k]:
                    C[r.n - right[k]:, k] = y[pos:pos + right[k]]
                    pos += right[k]
            full = left >= r.n
            lo = int(left[~full].max(initial=0))
            hi = r.n - int(right.max(initial=0))
            block = out[r.start:r.stop]
            if lo < hi:
                block[lo:hi] = C[lo:hi][:, full] @ r.Q[:, full].T
                block[:lo] = C[:lo] @ r.Q.T
                block[hi:] = C[hi:] @ r.Q.T
            else:
                block[:] = C @ r.Q.T
        return out.ravel()
