"""Sparse storage, block saddle-point systems and their solution.

Storage is scipy's CSR; factorizations are SuperLU (``scipy.sparse.linalg.splu``)
with partial pivoting.  The time loop uses :class:`LinearSolver`, which keeps
the last factorization and refines against it while the frozen-field blocks
drift, falling back to preconditioned GMRES and refactoring when that stalls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(f"{message} (achieved relative residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# Triplets

class TripletBuffer:
    """Append-only (row, col, value) accumulator; duplicates are summed on finalize."""

    def __init__(self):
        self._rows, self._cols, self._vals = [], [], []

    def add(self, rows, cols, values) -> None:
        rows, cols, values = np.broadcast_arrays(
            np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), np.asarray(values, dtype=float)
        )
        self._rows.append(rows.ravel())
        self._cols.append(cols.ravel())
        self._vals.append(values.ravel())

    def add_local(self, row_dofs, col_dofs, local) -> None:
        """Scatter element matrices ``local`` (T, nr, nc) with dof tables (T, nr) and (T, nc)."""
        r = np.broadcast_to(row_dofs[:, :, None], local.shape)
        c = np.broadcast_to(col_dofs[:, None, :], local.shape)
        self.add(r, c, local)

    def arrays(self):
        if not self._rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        return np.concatenate(self._rows), np.concatenate(self._cols), np.concatenate(self._vals)

    def __len__(self):
        return sum(len(r) for r in self._rows)


def finalize(buffer: TripletBuffer, nrows: int, ncols: int) -> sp.csr_matrix:
    rows, cols, vals = buffer.arrays()
    if len(rows) and (rows.min() < 0 or cols.min() < 0 or rows.max() >= nrows or cols.max() >= ncols):
        raise IndexError(f"triplet index outside a {nrows}x{ncols} matrix")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    A.sum_duplicates()
    A.sort_indices()
    return A


class SparsePattern:
    """Fixed sparsity pattern for repeated assembly from element blocks.

    Built once from a list of (row_dofs, col_dofs) tables; afterwards
    :meth:`assemble` turns a matching list of element arrays into a CSR matrix
    with a single ``bincount``, without re-sorting indices.
    """

    def __init__(self, tables, shape):
        self.shape = shape
        keys, self._sizes = [], []
        for rdofs, cdofs in tables:
            r = np.broadcast_to(rdofs[:, :, None], (len(rdofs), rdofs.shape[1], cdofs.shape[1]))
            c = np.broadcast_to(cdofs[:, None, :], r.shape)
            keys.append((r.astype(np.int64) * shape[1] + c).ravel())
            self._sizes.append(r.size)
        allkeys = np.concatenate(keys)
        uniq, self._inverse = np.unique(allkeys, return_inverse=True)
        self.indices = (uniq % shape[1]).astype(np.int32)
        rows = uniq // shape[1]
        self.indptr = np.searchsorted(rows, np.arange(shape[0] + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self.indices.flags.writeable = False
        self.indptr.flags.writeable = False
        self._offsets = np.concatenate([[0], np.cumsum(self._sizes)])
        self._subsets = {}

    def assemble_data(self, blocks, tables=None) -> np.ndarray:
        """CSR data array from element arrays, one per table (None for zero).

        ``tables`` names the table positions of ``blocks`` when they cover only
        some of the tables.
        """
        tables = tuple(range(len(blocks)) if tables is None else tables)
        used = tuple(k for k, b in zip(tables, blocks) if b is not None)
        if not used:
            return np.zeros(self.nnz)
        index = self._subsets.get(used)
        if index is None:
            index = np.concatenate([self._inverse[self._offsets[k]:self._offsets[k + 1]] for k in used])
            self._subsets[used] = index
        weights = np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks if b is not None])
        return np.bincount(index, weights=weights, minlength=self.nnz)

    def matrix(self, data) -> sp.csr_matrix:
        """CSR matrix sharing the (read-only) index arrays of the pattern."""
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape, copy=False)

    def assemble(self, blocks) -> sp.csr_matrix:
        return self.matrix(self.assemble_data(blocks))


# ---------------------------------------------------------------------------
# Block systems

@dataclass
class BlockSystem:
    """Monolithic matrix with a named, ordered block layout."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: dict  # name -> block size, in order

    def __post_init__(self):
        n = sum(self.layout.values())
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError(f"block sizes {self.layout} do not match matrix {self.matrix.shape}")

    @classmethod
    def from_blocks(cls, blocks: dict, layout: dict, rhs=None) -> "BlockSystem":
        names = list(layout)
        grid = [[None] * len(names) for _ in names]
        for (rn, cn), mat in blocks.items():
            if mat is None:
                continue
            if mat.shape != (layout[rn], layout[cn]):
                raise ValueError(f"block ({rn},{cn}) has shape {mat.shape}")
            grid[names.index(rn)][names.index(cn)] = mat
        for i, name in enumerate(names):
            if grid[i][i] is None:
                grid[i][i] = sp.csr_matrix((layout[name], layout[name]))
        A = sp.bmat(grid, format="csr")
        if rhs is None:
            rhs = np.zeros(sum(layout.values()))
        elif isinstance(rhs, dict):
            rhs = np.concatenate([np.asarray(rhs[k], dtype=float) for k in names])
        return cls(A, np.asarray(rhs, dtype=float), dict(layout))

    @property
    def size(self) -> int:
        return sum(self.layout.values())

    def offsets(self) -> dict:
        out, pos = {}, 0
        for name, n in self.layout.items():
            out[name] = pos
            pos += n
        return out

    def block_slice(self, name) -> slice:
        start = self.offsets()[name]
        return slice(start, start + self.layout[name])

    def split(self, x) -> dict:
        return {name: x[self.block_slice(name)] for name in self.layout}

    def block(self, rname, cname) -> sp.csr_matrix:
        return self.matrix[self.block_slice(rname)][:, self.block_slice(cname)]


def apply_dirichlet(system: BlockSystem, constraints: dict) -> BlockSystem:
    """Eliminate constrained dofs, keeping the matrix square.

    ``constraints`` maps block name to (mask, values) with arrays sized to the
    block.  Constrained rows become identity rows, constrained columns are
    moved to the right-hand side.
    """
    n = system.size
    mask = np.zeros(n, dtype=bool)
    g = np.zeros(n)
    for name, (m, vals) in constraints.items():
        sl = system.block_slice(name)
        m = np.asarray(m, dtype=bool)
        mask[sl] = m
        g[sl][m] = np.broadcast_to(np.asarray(vals, dtype=float), m.shape)[m]
    if not mask.any():
        return BlockSystem(system.matrix.copy(), system.rhs.copy(), dict(system.layout))
    A = system.matrix.tocsr()
    if not A.has_canonical_format:
        A = A.copy()
        A.sum_duplicates()
    rhs = system.rhs - A @ g
    rhs[mask] = g[mask]
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    hit = mask[rows] | mask[A.indices]
    data = A.data.copy()
    data[hit] = 0.0
    on_diag = hit & (rows == A.indices)
    data[on_diag] = 1.0
    # structural zeros stay so that the pattern is stable across time steps
    A2 = sp.csr_matrix((data, A.indices.copy(), A.indptr.copy()), shape=A.shape)
    missing = np.setdiff1d(np.flatnonzero(mask), rows[on_diag])
    if len(missing):
        A2 = (A2 + sp.csr_matrix((np.ones(len(missing)), (missing, missing)), shape=A.shape)).tocsr()
    return BlockSystem(A2, rhs, dict(system.layout))


class DirichletPlan:
    """Precomputed :func:`apply_dirichlet` for matrices sharing one CSR pattern.

    Every constrained row must have a stored diagonal entry.
    """

    def __init__(self, indptr, indices, mask):
        mask = np.asarray(mask, dtype=bool)
        rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
        self.mask = mask
        self.hit = np.flatnonzero(mask[rows] | mask[indices])
        self.diag = np.flatnonzero(mask[rows] & (rows == indices))
        if len(self.diag) != mask.sum():
            raise ValueError("constrained rows without a stored diagonal entry")

    def apply(self, A: sp.csr_matrix, rhs, values):
        g = np.where(self.mask, values, 0.0)
        b = rhs - A @ g
        b[self.mask] = g[self.mask]
        data = A.data.copy()
        data[self.hit] = 0.0
        data[self.diag] = 1.0
        return sp.csr_matrix((data, A.indices, A.indptr), shape=A.shape), b


def add_mean_constraint(system: BlockSystem, weights, block: str = "p", name: str = "lambda") -> BlockSystem:
    """Append a Lagrange multiplier enforcing ``weights @ x[block] == 0``."""
    w = np.zeros(system.size)
    w[system.block_slice(block)] = weights
    col = sp.csr_matrix(w[:, None])
    A = sp.bmat([[system.matrix, col], [col.T, None]], format="csr")
    layout = dict(system.layout)
    layout[name] = 1
    return BlockSystem(A, np.append(system.rhs, 0.0), layout)


# ---------------------------------------------------------------------------
# Solvers

@dataclass
class SolveReport:
    method: str
    residual: float           # ||Ax - b||
    relative_residual: float  # ||Ax - b|| / ||b|| (absolute when b = 0)
    iterations: int = 0
    factorized: bool = False


def _residual(A, x, b):
    r = float(np.linalg.norm(A @ x - b))
    nb = float(np.linalg.norm(b))
    return r, (r / nb if nb > 0 else r)


# Minimum degree on A^T + A with weak diagonal preference keeps the fill of
# these structurally symmetric saddle-point matrices several times below
# COLAMD.  The robust setting is the fallback when the result is inaccurate.
_ORDERINGS = ({"permc_spec": "MMD_AT_PLUS_A", "diag_pivot_thresh": 1e-4},
              {"permc_spec": "COLAMD", "diag_pivot_thresh": 1.0})


def factorize(A, robust=False):
    opts = _ORDERINGS[1 if robust else 0]
    try:
        return spla.splu(A.tocsc(), **opts)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc


def _factor_solve(A, b, tol):
    """Factor and solve, retrying with the robust ordering if needed."""
    lu = factorize(A)
    x, r, rel, _ = _lu_solve(lu, A, b, tol)
    if not (np.all(np.isfinite(x)) and rel <= tol):
        log.debug("fast ordering gave relative residual %.2e, refactoring", rel)
        lu = factorize(A, robust=True)
        x, r, rel, _ = _lu_solve(lu, A, b, tol)
    return lu, x, r, rel


def _lu_solve(lu, A, b, tol, max_refine=3):
    x = lu.solve(b)
    r, rel = _residual(A, x, b)
    it = 0
    while rel > tol and it < max_refine and np.isfinite(rel):
        x = x + lu.solve(b - A @ x)
        r, rel = _residual(A, x, b)
        it += 1
    return x, r, rel, it


def _richardson(lu, A, b, x0, tol, max_iterations):
    """Iterative refinement against a stale factorization.

    Stops early when the contraction is too weak to be worth continuing.
    """
    x = lu.solve(b) if x0 is None else x0
    nb = float(np.linalg.norm(b)) or 1.0
    r = b - A @ x
    rel = float(np.linalg.norm(r)) / nb
    its = 0
    while rel > tol and its < max_iterations and np.isfinite(rel):
        x = x + lu.solve(r)
        r = b - A @ x
        new = float(np.linalg.norm(r)) / nb
        its += 1
        if new > 0.3 * rel:
            rel = new
            break
        rel = new
    return x, rel, its


def _gmres(A, b, M, x0, tol, max_iterations, restart=50):
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(A, b, x0=x0, M=M, rtol=tol, atol=0.0, restart=restart,
                         maxiter=max(1, max_iterations // restart + 1),
                         callback=cb, callback_type="pr_norm")
    return x, info, count[0]


def block_jacobi_preconditioner(system: BlockSystem, saddle_block: str = "p"):
    """Diagonal-block preconditioner: LU of each nonsingular diagonal block and
    a diagonal Schur-complement approximation for the saddle block."""
    solvers = []
    for name, size in system.layout.items():
        sl = system.block_slice(name)
        D = system.block(name, name)
        if name == saddle_block:
            # B diag(A_uu)^-1 B^T with the velocity block taken as the first block
            first = next(iter(system.layout))
            Auu_d = system.block(first, first).diagonal()
            B = system.block(name, first)
            S = np.asarray((B.multiply(B) @ (1.0 / Auu_d)[:, None])).ravel() + np.abs(D.diagonal())
            S[S == 0] = 1.0
            solvers.append((sl, lambda v, S=S: v / S))
        elif D.nnz and np.all(D.diagonal() != 0):
            lu = factorize(D)
            solvers.append((sl, lu.solve))
        else:
            solvers.append((sl, lambda v: v))

    def apply(v):
        out = np.empty_like(v)
        for sl, f in solvers:
            out[sl] = f(v[sl])
        return out

    return spla.LinearOperator(system.matrix.shape, matvec=apply, dtype=float)


def solve(system: BlockSystem, tolerance: float = 1e-10, max_iterations: int = 500, method: str = "direct"):
    """Solve ``system``; returns (x, SolveReport) or raises :class:`SolverError`."""
    A, b = system.matrix, system.rhs
    if method == "direct":
        _, x, r, rel = _factor_solve(A, b, tolerance)
        report = SolveReport("direct", r, rel, 0, True)
    elif method == "gmres":
        M = block_jacobi_preconditioner(system)
        x, info, its = _gmres(A, b, M, None, tolerance, max_iterations)
        r, rel = _residual(A, x, b)
        report = SolveReport("gmres", r, rel, its, False)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(x)) or not rel <= tolerance:
        raise SolverError(f"{method} solve did not reach tolerance {tolerance:g}", rel)
    return x, report


@dataclass
class LinearSolver:
    """Stateful solver for a sequence of systems with a fixed pattern.

    ``method='reuse'`` keeps the most recent LU factorization and runs
    iterative refinement against it on later systems, then GMRES preconditioned
    by it if refinement stalls; a refactorization happens when both fail.  ``'direct'``
    refactors every call; ``'gmres'`` uses block-Jacobi preconditioning.
    """

    method: str = "reuse"
    tolerance: float = 1e-10
    max_iterations: int = 500
    refactor_after: int = 8
    num_factorizations: int = field(default=0, init=False)
    _lu: object = field(default=None, init=False, repr=False)

    def reset(self):
        self._lu = None

    def solve(self, system: BlockSystem, x0=None):
        if self.method in ("direct", "gmres"):
            x, rep = solve(system, self.tolerance, self.max_iterations, self.method)
            self.num_factorizations += rep.factorized
            return x, rep
        if self.method != "reuse":
            raise ValueError(f"unknown solver method {self.method!r}")
        A, b = system.matrix, system.rhs
        if self._lu is not None:
            lu = self._lu
            x, rel, its = _richardson(lu, A, b, x0, self.tolerance, self.refactor_after)
            if rel > self.tolerance:
                M = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
                x, info, more = _gmres(A, b, M, x, self.tolerance, 4 * self.refactor_after,
                                       restart=4 * self.refactor_after)
                its += more
                self._lu = None
            r, rel = _residual(A, x, b)
            if rel <= self.tolerance and np.all(np.isfinite(x)):
                if its > self.refactor_after:
                    self._lu = None
                return x, SolveReport("reuse", r, rel, its, False)
            log.debug("stale factorization rejected after %d iterations (rel %.2e)", its, rel)
        self._lu, x, r, rel = _factor_solve(A, b, self.tolerance)
        self.num_factorizations += 1
        if not np.all(np.isfinite(x)) or not rel <= self.tolerance:
            raise SolverError(f"direct solve did not reach tolerance {self.tolerance:g}", rel)
        return x, SolveReport("reuse", r, rel, 0, True)
