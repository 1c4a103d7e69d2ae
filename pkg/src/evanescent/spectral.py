"""Finite-difference Hamiltonians, bound-state eigensolves and the derived
transverse constants (J0, V0).

Hamiltonians use the standard second-order Laplacian with Dirichlet
conditions one spacing beyond the outermost nodes, so every mesh node is an
unknown.  Eigenvectors are normalised with the discrete weight h_x h_y.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import HBAR, ComplexField2D, Grid1D, Grid2D, ScalarField2D

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseHamiltonian:
    matrix: sp.csr_matrix
    grid: Grid1D | Grid2D
    potential: np.ndarray
    mass: float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def kinetic(self) -> float:
        return HBAR**2 / (2 * self.mass)

    def is_symmetric(self) -> bool:
        d = self.matrix - self.matrix.T
        return d.count_nonzero() == 0


def _second_difference(n: int, h: float, kinetic: float) -> sp.csr_matrix:
    off = np.full(n - 1, -kinetic / h**2)
    return sp.diags([off, np.full(n, 2 * kinetic / h**2), off], [-1, 0, 1], format="csr")


def assemble_1d(grid: Grid1D, V, mass: float) -> SparseHamiltonian:
    """Three-point Hamiltonian on a 1D mesh; ``V`` is an array or a callable."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    pts = grid.points
    V = np.asarray(V(pts) if callable(V) else V, dtype=float)
    if V.shape != (grid.n,):
        raise ValueError(f"potential has shape {V.shape}, grid has {grid.n} points")
    kin = HBAR**2 / (2 * mass)
    H = _second_difference(grid.n, grid.h, kin) + sp.diags(V)
    return SparseHamiltonian(H.tocsr(), grid, V, mass)


def assemble_2d(grid: Grid2D, V, mass: float) -> SparseHamiltonian:
    """Five-point Hamiltonian; unknowns ordered x-major, y fastest."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    values = V.values if isinstance(V, ScalarField2D) else np.asarray(V, float)
    if isinstance(V, ScalarField2D) and V.grid != grid:
        raise ValueError("potential is defined on a different grid")
    if values.shape != grid.shape:
        raise ValueError(f"potential has shape {values.shape}, grid is {grid.shape}")
    kin = HBAR**2 / (2 * mass)
    nx, ny = grid.shape
    Dx = _second_difference(nx, grid.h_x, kin)
    Dy = _second_difference(ny, grid.h_y, kin)
    H = (sp.kron(Dx, sp.identity(ny, format="csr"), format="csr")
         + sp.kron(sp.identity(nx, format="csr"), Dy, format="csr")
         + sp.diags(values.ravel()))
    return SparseHamiltonian(H.tocsr(), grid, values, mass)


def lowest_levels_1d(grid: Grid1D, V, mass: float, k: int) -> np.ndarray:
    """The ``k`` lowest eigenvalues of the 1D Hamiltonian (meV)."""
    H = assemble_1d(grid, V, mass)
    d = H.matrix.diagonal()
    e = H.matrix.diagonal(1)
    return sla.eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, k - 1))


def solve_1d(grid: Grid1D, V, mass: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``k`` eigenpairs in 1D; vectors are columns normalised with weight h."""
    H = assemble_1d(grid, V, mass)
    w, v = sla.eigh_tridiagonal(H.matrix.diagonal(), H.matrix.diagonal(1),
                                select="i", select_range=(0, k - 1))
    v = _fix_signs(v.T).T / math.sqrt(grid.h)
    return w, v


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each row positive (in place)."""
    for row in vecs:
        i = np.argmax(np.abs(row))
        if row[i] < 0:
            row *= -1
    return vecs


# -- eigensolver ---------------------------------------------------------------

@dataclass
class Eigenpairs:
    """Ascending eigenvalues with eigenvectors stacked along axis 0.

    ``vectors`` may be a disk-backed memmap on large meshes.  Rows are
    normalised so that sum |v|^2 * weight = 1.
    """

    energies: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    weight: float = 1.0
    inertia_count: int | None = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.energies)


def solve_lowest(H: SparseHamiltonian, cutoff: float, margin: float = 0.01, *,
                 slice_size: int = 40, method: str = "auto", tol: float = 1e-8,
                 max_windows: int = 200, storage: str | Path | None = None,
                 seed: int = 12345, ncv: int | None = None) -> Eigenpairs:
    """All eigenpairs with E < ``cutoff``, ascending and orthonormal.

    ``method="splu"`` runs overlapping ARPACK shift-invert windows of
    ``slice_size`` values on H itself.  ``method="blocks"`` (the default above
    150k unknowns) exploits a potential that is separable on most columns: the
    exact count below the cutoff comes from Sylvester inertia, and the
    eigenpairs from a mode-reduced Galerkin problem whose lifted vectors are
    checked against H.  Either way the result is orthonormal in the grid inner
    product, signs put the largest entry positive, every relative residual is
    at most ``tol``, and ``storage`` puts the eigenvectors in a memmap file.

    1D Hamiltonians are solved directly with a tridiagonal eigensolver.
    """
    grid = H.grid
    weight = grid.h if isinstance(grid, Grid1D) else grid.cell_area
    n = H.dimension
    if isinstance(grid, Grid1D):
        d, e = H.matrix.diagonal(), H.matrix.diagonal(1)
        w, v = sla.eigh_tridiagonal(d, e, select="v", select_range=(-np.inf, cutoff))
        v = _fix_signs(np.ascontiguousarray(v.T)) / math.sqrt(weight)
        res = _residuals(H, w, v)
        return Eigenpairs(w, v, res, weight, inertia_count=len(w))

    lower = float(np.min(H.potential))  # H >= min V since the Laplacian part is PSD
    if cutoff <= lower:
        return Eigenpairs(np.empty(0), np.empty((0, n)), np.empty(0), weight, 0)

    t0 = time.perf_counter()
    if method == "auto":
        method = "blocks" if n > 150_000 else "splu"
    rng = np.random.default_rng(seed)
    if method == "blocks":
        pairs = _solve_reduced(H, lower, cutoff, margin, rng, slice_size=slice_size, tol=tol,
                               max_windows=max_windows, storage=storage)
    elif method == "splu":
        store = _VectorStore(n, storage, None)
        found_E, windows = _arpack_windows(H.matrix, _splu_factory(H.matrix), lower, cutoff,
                                           margin, store, rng, k=slice_size, tol=tol,
                                           max_windows=max_windows, ncv=ncv)
        E = np.asarray(found_E)
        keep = np.flatnonzero(E < cutoff)
        pairs = _rayleigh_ritz(H, E[keep], store, keep, weight)
        pairs.info = {"windows": windows}
    else:
        raise ValueError(f"unknown solver method {method!r}")
    pairs.info.update(seconds=time.perf_counter() - t0, method=method)
    inertia = pairs.inertia_count
    if inertia is not None and inertia != len(pairs):
        raise SolverError(f"found {len(pairs)} eigenvalues below the cutoff but the "
                          f"inertia count is {inertia}")
    bad = pairs.residuals > tol
    if np.any(bad):
        raise SolverError(f"eigenresiduals above tolerance for states {np.flatnonzero(bad).tolist()}: "
                          f"max {pairs.residuals.max():.3g}")
    return pairs


def _splu_factory(A):
    I = sp.identity(A.shape[0], format="csc")
    A = A.tocsc()

    def make(sigma):
        return spla.splu(A - sigma * I, permc_spec="MMD_AT_PLUS_A").solve

    return make


def _solve_reduced(H, lower, cutoff, margin, rng, *, slice_size, tol, max_windows, storage,
                   attempts=3):
    """Eigenpairs below ``cutoff`` through a mode-reduced Galerkin problem.

    The exact eigenvalue count comes from the inertia of the structured
    factorisation of H - cutoff; the reduced subspace is widened until it
    reproduces that count and every lifted vector meets ``tol`` against H.
    """
    from ._blocksolve import ModeReduction, SeparableShiftInvert

    g = H.grid
    op = SeparableShiftInvert(H.potential, g.h_x, g.h_y, H.kinetic)
    if op.separable_fraction < 0.5:
        raise SolverError("potential is not separable on enough columns for the block solver")
    inertia = op.factor(cutoff).negative_count()
    eps, reach = 1e-12, 0.1
    for attempt in range(attempts):
        red = ModeReduction(op, cutoff + reach, eps)
        A = red.matrix()
        log.info("reduced problem: %d of %d unknowns, %d eigenvalues expected",
                 red.dimension, H.dimension, inertia)
        store = _VectorStore(red.dimension, None, None)
        found_E, windows = _arpack_windows(A, _splu_factory(A), lower, cutoff, margin, store,
                                           rng, k=slice_size, tol=tol,
                                           max_windows=max_windows, ncv=None)
        E = np.asarray(found_E)
        keep = np.flatnonzero(E < cutoff)
        if len(keep) == inertia:
            theta, Y = _small_rayleigh_ritz(A, store.select(keep))
            pairs = _lift(H, red, theta, Y, storage)
            if pairs.residuals.max(initial=0.0) <= tol:
                pairs.inertia_count = inertia
                pairs.info = {"windows": windows, "reduced_dimension": red.dimension}
                return pairs
        log.info("reduced subspace too small (attempt %d); widening", attempt + 1)
        eps, reach = eps * 1e-3, reach * 4
    raise SolverError(f"reduced problem did not reproduce the {inertia} eigenvalues below "
                      f"the cutoff after {attempts} attempts")


def _small_rayleigh_ritz(A, Y):
    """Rayleigh-Ritz of A on the rows of Y (a few hundred short vectors)."""
    Y = np.asarray(Y)
    s, U = np.linalg.eigh(Y @ Y.T)
    X = U / np.sqrt(s)
    M = X.T @ (Y @ (A @ Y.T)) @ X
    theta, Z = np.linalg.eigh(0.5 * (M + M.T))
    return theta, (X @ Z).T @ Y


def _lift(H, red, theta, Y, storage) -> Eigenpairs:
    n = H.dimension
    m = len(theta)
    weight = H.grid.cell_area
    if storage is not None:
        out = np.lib.format.open_memmap(storage, mode="w+", dtype=np.float64, shape=(m, n))
    else:
        out = np.empty((m, n))
    res = np.empty(m)
    scale = 1.0 / math.sqrt(weight)
    for i in range(m):
        v = red.lift(Y[i])
        Hv = H.matrix @ v
        res[i] = np.linalg.norm(Hv - theta[i] * v) / max(np.linalg.norm(Hv), 1e-300)
        j = np.argmax(np.abs(v))
        out[i] = v * (scale if v[j] > 0 else -scale)
    if isinstance(out, np.memmap):
        out.flush()
    return Eigenpairs(theta, out, res, weight)

def _arpack_windows(A, make, lower, cutoff, margin, store, rng, *, k, tol, max_windows, ncv):
    """Overlapping ARPACK shift-invert windows on the sparse matrix ``A``.

    Blocks of ``k`` eigenvalues nearest a moving shift are requested until one
    exceeds ``cutoff + margin``.  Each new shift sits between the two highest
    values found so far, so successive windows overlap and no eigenvalue in
    between can be skipped.
    """
    n = A.shape[0]
    k = min(k, n - 2)
    v0 = rng.standard_normal(n)
    found_E: list[float] = []
    sigma = lower - 1e-3
    windows = 0
    top = -np.inf
    while True:
        windows += 1
        if windows > max_windows:
            raise SolverError(f"no convergence after {max_windows} shift windows; "
                              f"highest eigenvalue found {top:.6g} meV")
        OP = spla.LinearOperator((n, n), matvec=make(sigma), dtype=float)
        try:
            w, v = spla.eigsh(A, k=k, sigma=sigma, which="LM", OPinv=OP,
                              v0=v0, ncv=min(n - 1, ncv or max(2 * k + 1, 20)), tol=tol * 1e-3)
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"ARPACK did not converge at shift {sigma:.6g} meV: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        if found_E and w[0] > top:
            # the window does not reach back to the collected range, so a gap is possible
            sigma = 0.5 * (sigma + top)
            continue
        # the window holds every eigenvalue within its radius of sigma and reaches
        # below the previous top, so the collected range stays contiguous
        new = w > top + 1e-12 * max(abs(top), 1.0) if found_E else np.ones(len(w), bool)
        for j in np.flatnonzero(new):
            found_E.append(float(w[j]))
            store.append(v[:, j])
        del v
        log.info("window %d: shift %.6f meV, %d new values up to %.6f meV",
                 windows, sigma, int(new.sum()), float(w[-1]))
        top = max(top, float(w[-1]))
        if w[-1] > cutoff + margin or k >= n - 2:
            return found_E, windows
        # levels get denser with energy; extrapolate with the upper half's spacing
        half = len(w) // 2
        spacing = (w[-1] - w[half]) / max(len(w) - 1 - half, 1)
        sigma = top + max(k // 2 - 4, 0) * spacing


class _VectorStore:
    """Row store for eigenvectors, in memory or in a preallocated .npy memmap."""

    def __init__(self, n: int, path, capacity: int | None):
        self.n = n
        self.count = 0
        if path is not None and capacity is not None:
            self.rows = np.lib.format.open_memmap(path, mode="w+", dtype=np.float64,
                                                  shape=(capacity, n))
        else:
            self.rows = []

    def append(self, v):
        if isinstance(self.rows, list):
            self.rows.append(np.array(v))
        else:
            if self.count >= self.rows.shape[0]:
                raise SolverError("more eigenvectors than the inertia count allows")
            self.rows[self.count] = v
        self.count += 1

    def select(self, keep: np.ndarray) -> np.ndarray:
        """Compact the kept rows to the front and return them as one array."""
        if isinstance(self.rows, list):
            out = np.stack([self.rows[i] for i in keep]) if len(keep) else np.empty((0, self.n))
            self.rows = []
            return out
        for dst, src in enumerate(keep):
            if dst != src:
                self.rows[dst] = self.rows[src]
        return self.rows[:len(keep)]


def _residuals(H: SparseHamiltonian, E, vecs) -> np.ndarray:
    out = np.empty(len(E))
    for i, (e, v) in enumerate(zip(E, vecs)):
        Hv = H.matrix @ np.asarray(v)
        out[i] = np.linalg.norm(Hv - e * v) / max(np.linalg.norm(Hv), 1e-300)
    return out


def _rayleigh_ritz(H: SparseHamiltonian, E, store: _VectorStore, keep, weight) -> Eigenpairs:
    """Orthonormalise the collected vectors and rediagonalise H on their span."""
    m = len(keep)
    n = H.dimension
    if m == 0:
        return Eigenpairs(np.empty(0), np.empty((0, n)), np.empty(0), weight)
    Vm = store.select(keep)
    S = np.empty((m, m))
    A = np.empty((m, m))
    chunk = max(1, 2_000_000 // max(m, 1))
    S[:] = 0
    for a in range(0, n, chunk):
        blk = np.asarray(Vm[:, a:a + chunk])
        S += blk @ blk.T
    for i in range(m):
        A[i] = Vm @ (H.matrix @ np.asarray(Vm[i]))
    A = 0.5 * (A + A.T)
    # orthonormalise (Loewdin), then diagonalise the projected H
    s, U = np.linalg.eigh(S)
    X = U / np.sqrt(s)
    theta, Y = np.linalg.eigh(X.T @ A @ X)
    C = X @ Y  # new vectors = C^T V
    scale = 1.0 / math.sqrt(weight)
    for a in range(0, n, chunk):
        blk = np.asarray(Vm[:, a:a + chunk])
        Vm[:, a:a + chunk] = (C.T @ blk) * scale
    for row in range(m):
        v = np.asarray(Vm[row])
        i = np.argmax(np.abs(v))
        if v[i] < 0:
            Vm[row] = -v
    res = _residuals(H, theta, Vm)
    if isinstance(Vm, np.memmap):
        Vm.flush()
    return Eigenpairs(theta, Vm, res, weight)


# -- transverse constants --------------------------------------------------------

def coupling_constant(E_step_y0: float, E_step_y1: float) -> float:
    """J0 = (E_step_y1 - E_step_y0) / (2 hbar), in rad/ps."""
    if E_step_y1 < E_step_y0:
        raise ValueError("E_step_y1 must not be below E_step_y0")
    return (E_step_y1 - E_step_y0) / (2 * HBAR)


def effective_barrier(E_step_y0: float, E_well_y0: float) -> float:
    """V0 = E_step_y0 - E_well_y0 (meV)."""
    if not (np.isfinite(E_step_y0) and np.isfinite(E_well_y0)):
        raise ValueError("energies must be finite")
    return E_step_y0 - E_well_y0


# -- classification --------------------------------------------------------------

@dataclass(frozen=True)
class ModeLabel:
    n_x: int
    n_y: int
    overlap: float  # fraction of the well-region weight in the winning y-mode
    separable: bool
    error: str | None = None


def classify_modes(states: np.ndarray, grid: Grid2D, well_y_modes: np.ndarray, *,
                   x_range=(-600.0, -10.0), threshold: float = 0.9,
                   node_floor: float = 1e-3) -> list[ModeLabel]:
    """Assign approximate (n_x, n_y) labels to 2D eigenstates.

    ``well_y_modes`` holds the ground and first excited transverse modes of the
    well cross-section (rows, normalised with weight h_y).  For each state the
    column amplitudes a_k(x) = <g_k | psi(x, .)> are formed; the winning k
    carries the largest share of the weight over ``x_range``, and n_x is one
    plus the number of sign changes of a_k(x) along the whole mesh, ignoring
    samples below ``node_floor`` of its peak.
    """
    g = np.asarray(well_y_modes)[:2]
    x = grid.x
    sel = (x >= x_range[0]) & (x <= x_range[1])
    labels = []
    for n in range(len(states)):
        psi = np.asarray(states[n])
        amp = psi @ g.T * grid.h_y  # (n_x, 2)
        col = np.sum(psi[sel] ** 2, axis=1) * grid.h_y
        total = col.sum()
        frac = np.sum(amp[sel] ** 2, axis=0) / total if total > 0 else np.zeros(2)
        k = int(np.argmax(frac))
        if np.all(frac < 0.5):
            labels.append(ModeLabel(0, k, float(frac[k]), False,
                                    f"state {n}: no dominant transverse mode (overlaps {frac.round(3).tolist()})"))
            continue
        a = amp[:, k]
        big = a[np.abs(a) > node_floor * np.max(np.abs(a))]
        changes = int(np.count_nonzero(np.signbit(big[1:]) != np.signbit(big[:-1])))
        labels.append(ModeLabel(changes + 1, k, float(frac[k]), bool(frac[k] >= threshold)))
    return labels


# -- spectrum container ------------------------------------------------------------

@dataclass
class BoundSpectrum:
    grid: Grid2D
    mass: float
    energies: np.ndarray
    states: np.ndarray  # (n, n_x, n_y), real, normalised with weight h_x h_y
    labels: list[ModeLabel]
    E_well_y0: float
    E_step_y0: float
    E_step_y1: float
    E_well_y1: float = float("nan")
    residuals: np.ndarray | None = None
    inertia_count: int | None = None
    _centerlines: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.energies)

    @property
    def cutoff(self) -> float:
        return self.E_step_y0

    @property
    def J0(self) -> float:
        return coupling_constant(self.E_step_y0, self.E_step_y1)

    @property
    def V0(self) -> float:
        return effective_barrier(self.E_step_y0, self.E_well_y0)

    @property
    def separability_flags(self) -> list[bool]:
        return [lb.separable for lb in self.labels]

    def state(self, n: int) -> ComplexField2D:
        return ComplexField2D(self.grid, np.asarray(self.states[n]))

    def series(self, n_y: int) -> list[int]:
        """Indices of states labelled with ``n_y``, ordered by energy."""
        return [i for i, lb in enumerate(self.labels) if lb.error is None and lb.n_y == n_y]

    def counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for lb in self.labels:
            if lb.error is None:
                out[lb.n_y] = out.get(lb.n_y, 0) + 1
        return out

    def centerlines(self, y_c: float) -> np.ndarray:
        """psi_n(x, y_c) for every state, shape (n_states, n_x)."""
        key = float(y_c)
        if key not in self._centerlines:
            from .grid import centerline
            self._centerlines[key] = np.stack(
                [centerline(np.asarray(self.states[n]), y_c, self.grid) for n in range(len(self))]
            ) if len(self) else np.empty((0, self.grid.n_x_pts))
        return self._centerlines[key]


def bound_spectrum(grid: Grid2D, V: ScalarField2D, mass: float, well_slice, step_slice, *,
                   margin: float = 0.01, threshold: float = 0.9, method: str = "auto",
                   storage=None, slice_size: int = 40) -> BoundSpectrum:
    """Assemble, solve below E_step_y0 and classify in one call.

    ``well_slice`` and ``step_slice`` are the transverse potentials (callables
    of y) used for the 1D levels and the labelling modes.
    """
    y_axis = grid.y_axis
    Ew, gw = solve_1d(y_axis, well_slice, mass, 2)
    Es = lowest_levels_1d(y_axis, step_slice, mass, 2)
    H = assemble_2d(grid, V, mass)
    pairs = solve_lowest(H, float(Es[0]), margin, method=method, storage=storage, slice_size=slice_size)
    states = pairs.vectors.reshape((len(pairs),) + grid.shape)
    labels = classify_modes(states, grid, gw.T, threshold=threshold)
    return BoundSpectrum(grid, mass, pairs.energies, states, labels,
                         float(Ew[0]), float(Es[0]), float(Es[1]), float(Ew[1]),
                         pairs.residuals, pairs.inertia_count)
