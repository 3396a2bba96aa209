"""Dirichlet eigenproblem on the truncated cusp via a boundary-fitted map.

The truncated domain {0 < x < L, 0 < y < f(x)} is mapped onto the
rectangle (0,L) x (0,1) by u = y / f(x); bilinear elements on a tensor
grid (geometrically stretched in x, uniform in u) discretize the exact
weak form with the metric terms induced by the map:

    grad psi . grad phi dx dy
      = [ f p_x q_x - u f' (p_x q_u + p_u q_x)
          + (u^2 f'^2 + 1)/f p_u q_u ] dx du ,

with p, q the mapped trial/test functions.  A constant profile reduces
this to the plain rectangle Laplacian, which doubles as the closed-form
oracle for the solver stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CuspDomain, RectangleDomain

FLOOR = 1e-13
DEFAULT_STRETCH = 12.0

# 3-point Gauss-Legendre on [0, 1]
_GX = np.array([0.5 - math.sqrt(0.6) / 2.0, 0.5, 0.5 + math.sqrt(0.6) / 2.0])
_GW = np.array([5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])


class AssemblyError(RuntimeError):
    pass


class EigensolveError(RuntimeError):
    pass


def stretched_nodes(L: float, Nx: int, stretch: float = DEFAULT_STRETCH):
    """Nx+1 nodes on [0, L] with geometrically growing spacing; `stretch`
    is the ratio of the last to the first cell width."""
    if Nx < 8:
        raise ValueError("need at least 8 cells")
    if stretch <= 1.0:
        return np.linspace(0.0, L, Nx + 1)
    r = stretch ** (1.0 / (Nx - 1))
    h0 = L * (r - 1.0) / (r ** Nx - 1.0)
    h = h0 * r ** np.arange(Nx)
    nodes = np.concatenate(([0.0], np.cumsum(h)))
    nodes[-1] = L
    return nodes


def extend_nodes(nodes: np.ndarray, L_new: float):
    """Continue the geometric progression of an existing node array out to
    L_new (keeps the shared nodes bit-identical for truncation studies)."""
    nodes = np.asarray(nodes)
    if L_new <= nodes[-1]:
        raise ValueError("L_new must exceed the current extent")
    h_last = nodes[-1] - nodes[-2]
    r = h_last / (nodes[-2] - nodes[-3])
    out = list(nodes)
    h = h_last
    while out[-1] < L_new:
        h *= r
        out.append(out[-1] + h)
    out[-1] = L_new
    return np.array(out)


@dataclass
class MappedGrid:
    L: float
    x_nodes: np.ndarray  # Nx+1 values, 0 .. L
    u_nodes: np.ndarray  # Nu+1 values, 0 .. 1

    @property
    def Nx(self) -> int:
        return len(self.x_nodes) - 1

    @property
    def Nu(self) -> int:
        return len(self.u_nodes) - 1

    @property
    def n_interior(self) -> int:
        return (self.Nx - 1) * (self.Nu - 1)

    def interior_ids(self):
        ii, jj = np.meshgrid(np.arange(1, self.Nx), np.arange(1, self.Nu),
                             indexing="ij")
        return (ii * (self.Nu + 1) + jj).ravel()


@dataclass
class SparseOperator:
    grid: MappedGrid
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    mass_x: sp.csr_matrix  # mass weighted by the abscissa, for <X> elements

    @property
    def dimension(self) -> int:
        return self.stiffness.shape[0]


@dataclass
class EigenPair:
    j: int
    ell: float
    psi: np.ndarray  # interior nodal values, M-normalized
    residual_norm: float


@dataclass
class MarginalDensity:
    """Transverse marginal xi(x) of an eigenstate, sampled both on the
    x-nodes (smooth spacing, for decay diagnostics) and on the quadrature
    points (whose weighted sum reproduces the M-normalization exactly)."""
    j: int
    ell: float
    x_nodes: np.ndarray
    xi_nodes: np.ndarray
    x_quad: np.ndarray
    w_quad: np.ndarray
    xi_quad: np.ndarray


@dataclass
class SpectralSolution:
    domain: object
    grid: MappedGrid
    operator: SparseOperator
    pairs: list
    vectors: np.ndarray  # (n_interior, k), M-orthonormal columns

    @property
    def ells(self):
        return np.array([p.ell for p in self.pairs])


def make_grid(domain, L: float, Nx: int, Nu: int,
              stretch: float = DEFAULT_STRETCH) -> MappedGrid:
    if not isinstance(domain, RectangleDomain) and (L is None or L < 5):
        raise ValueError("truncation length must be at least 5")
    if Nx < 8 or Nu < 8:
        raise ValueError("grid sizes must be at least 8")
    if isinstance(domain, RectangleDomain):
        x_nodes = np.linspace(0.0, domain.width, Nx + 1)
    else:
        x_nodes = stretched_nodes(L, Nx, stretch)
    u_nodes = np.linspace(0.0, 1.0, Nu + 1)
    return MappedGrid(float(x_nodes[-1]), x_nodes, u_nodes)


def assemble(domain, L: float = None, Nx: int = None, Nu: int = None,
             stretch: float = DEFAULT_STRETCH,
             grid: MappedGrid = None) -> SparseOperator:
    """Stiffness/mass matrices of the Dirichlet weak form on the mapped
    rectangle, boundary rows and columns eliminated."""
    if grid is None:
        grid = make_grid(domain, L, Nx, Nu, stretch)
    xn, un = grid.x_nodes, grid.u_nodes
    Nx, Nu = grid.Nx, grid.Nu
    hx = np.diff(xn)             # (Nx,)
    hu = float(un[1] - un[0])    # uniform

    # local bilinear shape data: k -> (di, dj)
    dloc = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])

    EA = np.zeros((4, 4, Nx, Nu))
    EM = np.zeros((4, 4, Nx, Nu))
    EMX = np.zeros((4, 4, Nx, Nu))

    for qi in range(3):
        xi = _GX[qi]
        wxi = _GW[qi]
        xg = xn[:-1] + xi * hx                     # (Nx,)
        fg = domain.f(xg)
        fpg = domain.f_prime(xg)
        for qj in range(3):
            eta = _GX[qj]
            weta = _GW[qj]
            ug = un[:-1] + eta * hu                # (Nu,)
            # shape values / reference gradients at (xi, eta)
            N = np.empty(4)
            dNxi = np.empty(4)
            dNeta = np.empty(4)
            for k, (di, dj) in enumerate(dloc):
                sx = xi if di else 1.0 - xi
                su = eta if dj else 1.0 - eta
                gx = 1.0 if di else -1.0
                gu = 1.0 if dj else -1.0
                N[k] = sx * su
                dNxi[k] = gx * su
                dNeta[k] = sx * gu
            w = wxi * weta
            # coefficient fields on the (Nx, Nu) cell grid
            c_xx = np.broadcast_to((w * hu * fg / hx)[:, None], (Nx, Nu))
            c_xu = (-w) * np.outer(fpg, ug)
            c_uu = np.outer(w * hx / (hu * fg), ug ** 2) * fpg[:, None] ** 2 \
                + (w / hu) * np.outer(hx / fg, np.ones(Nu))
            c_m = np.broadcast_to((w * hu * fg * hx)[:, None], (Nx, Nu))
            c_mx = np.broadcast_to((w * hu * fg * hx * xg)[:, None], (Nx, Nu))
            S1 = np.outer(dNxi, dNxi)
            S2 = np.outer(dNxi, dNeta) + np.outer(dNeta, dNxi)
            S3 = np.outer(dNeta, dNeta)
            SM = np.outer(N, N)
            EA += S1[:, :, None, None] * c_xx + S2[:, :, None, None] * c_xu \
                + S3[:, :, None, None] * c_uu
            EM += SM[:, :, None, None] * c_m
            EMX += SM[:, :, None, None] * c_mx

    # scatter to global COO
    ii, jj = np.meshgrid(np.arange(Nx), np.arange(Nu), indexing="ij")
    gid = np.empty((4, Nx, Nu), dtype=np.int64)
    for k, (di, dj) in enumerate(dloc):
        gid[k] = (ii + di) * (Nu + 1) + (jj + dj)
    rows = np.broadcast_to(gid[:, None], (4, 4, Nx, Nu)).ravel()
    cols = np.broadcast_to(gid[None, :], (4, 4, Nx, Nu)).ravel()
    nglob = (Nx + 1) * (Nu + 1)

    def build(E):
        Mt = sp.coo_matrix((E.ravel(), (rows, cols)), shape=(nglob, nglob))
        return Mt.tocsr()

    A = build(EA)
    M = build(EM)
    MX = build(EMX)
    idx = grid.interior_ids()
    A = A[idx][:, idx].tocsr()
    M = M[idx][:, idx].tocsr()
    MX = MX[idx][:, idx].tocsr()

    # cheap positive-definiteness sanity on the mass matrix
    probe = np.ones(A.shape[0])
    if probe @ (M @ probe) <= 0:
        raise AssemblyError("mass matrix is not positive definite")
    return SparseOperator(grid, A, M, MX)


def smallest_eigenpairs(op: SparseOperator, k: int, seed: int = 7):
    """k smallest generalized eigenpairs of A v = ell M v by shift-invert
    Lanczos with a deterministic start vector; M-normalized, ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = op.dimension
    if k >= n - 1:
        raise ValueError("k must be much smaller than the dimension")
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        vals, vecs = spla.eigsh(op.stiffness, k=k, M=op.mass, sigma=0.0,
                                which="LM", v0=v0, tol=0)
    except spla.ArpackNoConvergence as exc:  # pragma: no cover
        raise EigensolveError(f"ARPACK did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    pairs = []
    for i in range(k):
        v = vecs[:, i]
        nrm = math.sqrt(v @ (op.mass @ v))
        v = v / nrm
        # fix an overall sign for reproducibility
        anchor = np.argmax(np.abs(v))
        if v[anchor] < 0:
            v = -v
        vecs[:, i] = v
        res = np.linalg.norm(op.stiffness @ v - vals[i] * (op.mass @ v))
        pairs.append(EigenPair(i + 1, float(vals[i]), v, float(res)))
    return pairs, vecs


def solve_spectrum(domain, L: float, Nx: int, Nu: int, k: int,
                   stretch: float = DEFAULT_STRETCH,
                   grid: MappedGrid = None, seed: int = 7) -> SpectralSolution:
    op = assemble(domain, L, Nx, Nu, stretch, grid=grid)
    pairs, vecs = smallest_eigenpairs(op, k, seed=seed)
    return SpectralSolution(domain, op.grid, op, pairs, vecs)


def _nodal_field(grid: MappedGrid, psi_interior: np.ndarray) -> np.ndarray:
    """(Nx+1, Nu+1) nodal array with the Dirichlet zeros filled in."""
    full = np.zeros((grid.Nx + 1, grid.Nu + 1))
    full[1:grid.Nx, 1:grid.Nu] = psi_interior.reshape(grid.Nx - 1, grid.Nu - 1)
    return full


def _usq_integral(cols: np.ndarray, hu: float) -> np.ndarray:
    """Exact integral over u of the square of piecewise-linear columns;
    cols has shape (..., Nu+1)."""
    a = cols[..., :-1]
    b = cols[..., 1:]
    return (hu / 3.0) * np.sum(a * a + a * b + b * b, axis=-1)


def marginal_density(domain, grid: MappedGrid, pair: EigenPair) -> MarginalDensity:
    """xi(x) = integral of psi^2 over the transverse section = f(x) times
    the u-integral of the mapped square."""
    full = _nodal_field(grid, pair.psi)
    hu = float(grid.u_nodes[1] - grid.u_nodes[0])
    f_nodes = np.asarray(domain.f(grid.x_nodes), dtype=float)
    xi_nodes = f_nodes * _usq_integral(full, hu)

    hx = np.diff(grid.x_nodes)
    xq = (grid.x_nodes[:-1, None] + np.outer(hx, _GX)).ravel()
    wq = np.outer(hx, _GW).ravel()
    # linear interpolation of the nodal columns at the Gauss abscissae
    left = np.repeat(full[:-1, :], 3, axis=0)
    right = np.repeat(full[1:, :], 3, axis=0)
    t = np.tile(_GX, grid.Nx)[:, None]
    cols = (1.0 - t) * left + t * right
    fq = np.asarray(domain.f(xq), dtype=float)
    xi_quad = fq * _usq_integral(cols, hu)
    return MarginalDensity(pair.j, pair.ell, grid.x_nodes.copy(), xi_nodes,
                           xq, wq, xi_quad)


def decay_profile(xi: MarginalDensity, floor: float = FLOOR):
    """Local log-slope gamma(x) = -d log(xi)/dx by centered differences on
    the nodal samples above the noise floor.  Returns (x, gamma) arrays."""
    x = xi.x_nodes
    v = xi.xi_nodes
    ok = v > floor
    xs = []
    gs = []
    for i in range(1, len(x) - 1):
        if ok[i - 1] and ok[i] and ok[i + 1]:
            g = -(math.log(v[i + 1]) - math.log(v[i - 1])) / (x[i + 1] - x[i - 1])
            xs.append(x[i])
            gs.append(g)
    if not xs:
        raise EigensolveError(
            "no reliable decay window: eigenfunction has not decayed below "
            "the floor before the truncation wall; increase L")
    return np.array(xs), np.array(gs)


def turning_point(domain, ell: float) -> float:
    """Abscissa where (pi/f(x))^2 = ell (start of the classically
    forbidden channel); inf when it is never reached."""
    val = math.pi / math.sqrt(ell)
    if isinstance(domain, RectangleDomain):
        return 0.0 if domain.height <= val else math.inf
    if val >= 1.0:
        return 0.0
    return domain.f_inverse(val)


@dataclass
class DiffInequalityReport:
    ell: float
    n_checked: int
    n_violations: int
    violations: list  # (x, lhs, rhs)
    window: tuple


def verify_diff_inequality(domain, xi: MarginalDensity, ell: float = None,
                           eps_tol: float = 0.05,
                           cond_floor: float = 1e-10) -> DiffInequalityReport:
    """Pointwise check of the tail differential inequality
    xi'' >= 2[(pi/f)^2 - ell] xi on the reliable window past the turning
    point, with tolerance eps_tol on the right-hand side."""
    if ell is None:
        ell = xi.ell
    x = xi.x_nodes
    v = xi.xi_nodes
    xt = turning_point(domain, ell)
    checked = 0
    violations = []
    xlo, xhi = math.inf, -math.inf
    for i in range(1, len(x) - 1):
        if x[i] <= xt:
            continue
        if not (v[i - 1] > cond_floor and v[i] > cond_floor and v[i + 1] > cond_floor):
            continue
        h0 = x[i] - x[i - 1]
        h1 = x[i + 1] - x[i]
        d2 = 2.0 * (h1 * v[i - 1] - (h0 + h1) * v[i] + h0 * v[i + 1]) \
            / (h0 * h1 * (h0 + h1))
        fx = domain.f(x[i])
        rhs = 2.0 * ((math.pi / fx) ** 2 - ell) * v[i]
        checked += 1
        xlo = min(xlo, x[i])
        xhi = max(xhi, x[i])
        if d2 < rhs * (1.0 - eps_tol):
            violations.append((float(x[i]), float(d2), float(rhs)))
    window = (xlo, xhi) if checked else (math.nan, math.nan)
    return DiffInequalityReport(float(ell), checked, len(violations),
                                violations, window)


def position_expectation(xi: MarginalDensity) -> float:
    """<X> = integral of x xi(x) dx over the truncated domain."""
    return float(np.dot(xi.w_quad, xi.x_quad * xi.xi_quad))


def position_matrix_element(solution: SpectralSolution, j: int, k: int) -> float:
    """<psi_j, X psi_k> through the x-weighted mass matrix (1-based)."""
    vj = solution.vectors[:, j - 1]
    vk = solution.vectors[:, k - 1]
    return float(vj @ (solution.operator.mass_x @ vk))


def heisenberg_time_average(coeffs, solution: SpectralSolution,
                            degeneracy_tol: float = 1e-6) -> float:
    """Long-time average of the Heisenberg position observable on the state
    sum_j a_j psi_j: only pairs with ell_j = ell_k (within the relative
    degeneracy tolerance) survive the time average."""
    coeffs = list(coeffs)
    total = sum(abs(a) ** 2 for _, a in coeffs)
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"coefficients must be normalized; got sum {total}")
    kmax = len(solution.pairs)
    for j, _a in coeffs:
        if not (1 <= j <= kmax):
            raise IndexError(f"eigenindex {j} beyond the computed range {kmax}")
    ells = solution.ells
    out = 0.0
    for j, aj in coeffs:
        for k, ak in coeffs:
            lj, lk = ells[j - 1], ells[k - 1]
            if abs(lj - lk) <= degeneracy_tol * max(abs(lj), abs(lk)):
                out += (np.conj(aj) * ak * position_matrix_element(solution, j, k)).real
    return float(out)


def counting_ratio(solution: SpectralSolution, ell: float) -> float:
    """N(ell) over the leading Weyl term Area * ell / (4 pi)."""
    dom = solution.domain
    L = solution.grid.L
    if isinstance(dom, RectangleDomain):
        area = dom.width * dom.height
    else:
        a = dom.alpha
        area = (1.0 - (L + 1.0) ** (1.0 - a)) / (a - 1.0)
    N = int(np.sum(solution.ells <= ell))
    return N / (area * ell / (4.0 * math.pi))
