"""Eigenvalue density of the random-feature Gram matrix Sigma = Z^T Z / N.

Analytic side: the limiting Stieltjes transform

    G(z) = (psi / z) A(1 / (z psi)) + (1 - psi) / z,
    A = 1 + (eta - zeta) t A_phi A_psi + zeta t A_phi A_psi / (1 - zeta t A_phi A_psi),
    A_phi = 1 + (A - 1) phi,  A_psi = 1 + (A - 1) psi,

with psi = D / P and phi = D / N.  In terms of B = t A_phi A_psi the
equation is a quartic; its roots come from companion-matrix eigenvalues.
The physical root at each lambda is "anchored" by analytic continuation
from far off the real axis (where it is the root near B = 0) down to the
working offset epsilon.

Empirical side: eigenvalues of Sigma, rank-deficiency atom, and the
"top D eigenvalues" split into a linear and a nonlinear component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import wasserstein_distance


class SpectralError(RuntimeError):
    pass


class BranchSelectionError(SpectralError):
    def __init__(self, msg, roots=None):
        super().__init__(msg)
        self.roots = roots


class SpectrumInconsistencyError(SpectralError):
    pass


DEFAULT_EPSILON = 1e-7
GAP_THRESHOLD = 1e-4


@dataclass(frozen=True)
class SpectralParams:
    eta: float
    zeta: float
    psi: float
    phi: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (self.eta > 0 and 0 <= self.zeta <= self.eta * (1 + 1e-12)):
            raise ValueError(f"need eta > 0 and 0 <= zeta <= eta, got {self.eta}, {self.zeta}")
        for name in ("psi", "phi", "epsilon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")

    @classmethod
    def from_sizes(cls, D, N, P, eta, zeta, epsilon=DEFAULT_EPSILON):
        return cls(float(eta), float(zeta), D / P, D / N, epsilon)

    @property
    def p_over_n(self) -> float:
        return self.phi / self.psi

    @property
    def linear(self) -> bool:
        return self.zeta >= self.eta * (1 - 1e-12)

    def scale(self) -> float:
        """Rough upper bound on the right edge of the support."""
        c = self.p_over_n
        nonlin = (self.eta - self.zeta) * (1 + math.sqrt(c)) ** 2
        lin = self.zeta / self.psi * (1 + math.sqrt(self.phi)) ** 2 * (1 + math.sqrt(self.psi)) ** 2
        return max(nonlin + lin, 1e-12)


@dataclass
class SpectrumResult:
    """``gap`` is the smallest lambda with density above ``gap_threshold``;
    ``left_edge`` and ``right_edge`` are the support edges from the
    square-root law (for empirical spectra, the extreme eigenvalues)."""

    lambda_grid: np.ndarray
    density: np.ndarray
    atom_at_zero: float
    gap: float
    gap_threshold: float = GAP_THRESHOLD
    right_edge: float = float("nan")
    component_split: Optional[tuple[np.ndarray, np.ndarray]] = None
    eigenvalues: Optional[np.ndarray] = field(default=None, repr=False)
    head_mass: float = 0.0
    left_edge: float = float("nan")

    @property
    def mass(self) -> float:
        """Mass of the continuous part (grid integral plus any head below
        the first grid point)."""
        return float(np.trapezoid(self.density, self.lambda_grid)) + self.head_mass

    def continuous_sample(self):
        """(support points, weights) describing the normalized continuous part."""
        if self.eigenvalues is not None:
            ev = self.eigenvalues[self.eigenvalues > self.zero_cut]
            return ev, None
        w = _trapezoid_weights(self.lambda_grid) * self.density
        return self.lambda_grid, w / w.sum()

    @property
    def zero_cut(self) -> float:
        return getattr(self, "_zero_cut", 0.0)


def _trapezoid_weights(x):
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


# ---------------------------------------------------------------------------
# the implicit equation


def quartic_coefficients(t, params: SpectralParams) -> np.ndarray:
    """Coefficients (low -> high, last axis of length 5) of the quartic in
    B = t A_phi A_psi whose roots solve the implicit equation at ``t``.

    The equation gives u = A - 1 explicitly in terms of B,
    u = (eta - zeta) B + zeta B / (1 - zeta B); substituting into
    B = t (1 + phi u)(1 + psi u) and clearing (1 - zeta B)^2 gives

        F_phi(B) F_psi(B) - s B (1 - zeta B)^2 = 0,   s = 1/t = z psi,
        F_x(B) = (1 - zeta B) + x [(eta - zeta) B (1 - zeta B) + zeta B].

    At z -> 0 its roots are those of F_phi F_psi and stay well separated,
    which is not the case for the polynomial in A itself.
    """
    t = np.asarray(t, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (1.0 / t)[..., None]
    eta, zeta, phi, psi = params.eta, params.zeta, params.phi, params.psi
    nl = eta - zeta
    one_minus = np.array([1.0, -zeta, 0, 0, 0])            # 1 - zeta B
    num = np.array([0.0, nl + zeta, -nl * zeta, 0, 0])     # u (1 - zeta B)
    f_phi = one_minus + phi * num
    f_psi = one_minus + psi * num
    sq = _mul(one_minus, one_minus)
    shifted = np.concatenate([[0.0], sq[:4]])               # B (1 - zeta B)^2
    return _mul(f_phi, f_psi) - s * shifted


def _mul(a, b):
    """Product of two coefficient arrays, truncated to degree 4."""
    a = np.asarray(a)
    b = np.asarray(b)
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (5,)
    out = np.zeros(shape, dtype=complex)
    for i in range(5):
        for j in range(5 - i):
            out[..., i + j] += a[..., i] * b[..., j]
    return out


def _effective_degree(params: SpectralParams) -> int:
    if params.zeta <= 0:
        return 2
    if params.linear:
        return 3
    return 4


def candidate_roots(t, params: SpectralParams) -> np.ndarray:
    """All roots B of the quartic for each t; shape (..., degree)."""
    c = quartic_coefficients(t, params)
    deg = _effective_degree(params)
    c = c[..., : deg + 1]
    lead = c[..., deg]
    shape = c.shape[:-1]
    comp = np.zeros(shape + (deg, deg), dtype=complex)
    if deg > 1:
        idx = np.arange(deg - 1)
        comp[..., idx + 1, idx] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        comp[..., :, -1] = -c[..., :deg] / lead[..., None]
    return np.linalg.eigvals(comp)


def u_of_B(B, params: SpectralParams):
    """A - 1 as a function of the root B."""
    zb = params.zeta * B
    return (params.eta - params.zeta) * B + zb / (1.0 - zb)


def G_of_B(B, z, params: SpectralParams):
    """G = A_psi / z = psi B / A_phi, using whichever form avoids cancellation."""
    u = u_of_B(B, params)
    a_phi = 1.0 + params.phi * u
    a_psi = 1.0 + params.psi * u
    with np.errstate(divide="ignore", invalid="ignore"):
        via_phi = params.psi * B / a_phi
        via_psi = a_psi / z
    return np.where(np.abs(a_phi) >= np.abs(a_psi), via_phi, via_psi)


def implicit_residual(A, t, params: SpectralParams):
    """|A - rhs(A)| / max(1, |A|)."""
    A = np.asarray(A, dtype=complex)
    t = np.asarray(t, dtype=complex)
    a_phi = 1 + (A - 1) * params.phi
    a_psi = 1 + (A - 1) * params.psi
    B = a_phi * a_psi * t
    rhs = 1 + (params.eta - params.zeta) * B + B * params.zeta / (1 - B * params.zeta)
    return np.abs(A - rhs) / np.maximum(1.0, np.abs(A))


def _polish(B, t, params, steps=2):
    c = quartic_coefficients(t, params)[..., : _effective_degree(params) + 1]
    dc = c[..., 1:] * np.arange(1, c.shape[-1])
    B = np.asarray(B, dtype=complex)
    for _ in range(steps):
        f = _polyval_rows(B, c)
        df = _polyval_rows(B, dc)
        ok = np.abs(df) > 1e-300
        B = np.where(ok, B - f / np.where(ok, df, 1.0), B)
    return B


def _polyval_rows(x, c):
    out = np.zeros_like(x)
    for k in range(c.shape[-1] - 1, -1, -1):
        out = out * x + c[..., k]
    return out


def anchor_roots(lams, params: SpectralParams, eps: float, steps: int = 160) -> np.ndarray:
    """Physical root B at z = lambda - i eps for every lambda at once.

    Each point is continued down a vertical line from Im z = -far (where
    |t| is small and the physical root is B ~ t) to Im z = -eps, taking the
    nearest root at every step.  Off the real axis the physical branch is
    analytic, so collisions with other roots cannot happen along the way.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    far = 10.0 * max(params.scale(), float(np.max(np.abs(lams))) if lams.size else 0.0, 1.0)
    ys = np.geomspace(far, eps, steps)
    deg = _effective_degree(params)
    B = 1.0 / ((lams - 1j * ys[0]) * params.psi)
    for y in ys:
        c = quartic_coefficients(1.0 / ((lams - 1j * y) * params.psi), params)[..., : deg + 1]
        dc = c[..., 1:] * np.arange(1, deg + 1)
        for _ in range(6):
            with np.errstate(all="ignore"):
                step = _polyval_rows(B, c) / _polyval_rows(B, dc)
            B = np.where(np.isfinite(step), B - step, B)
    t = 1.0 / ((lams - 1j * eps) * params.psi)
    roots = candidate_roots(t, params)
    rows = np.arange(lams.size)
    return _polish(roots[rows, np.argmin(np.abs(roots - B[:, None]), axis=1)], t, params)


def anchor_root(z: complex, params: SpectralParams) -> complex:
    """Physical root B at a single spectral parameter z (Im z < 0)."""
    z = complex(z)
    if z.imag >= 0:
        raise ValueError("anchor_root expects Im z < 0")
    return complex(anchor_roots(np.array([z.real]), params, -z.imag)[0])


def resolve_A(t, params: SpectralParams, previous: Optional[complex] = None) -> complex:
    """Root A of the implicit equation on the physical branch.

    Without ``previous`` the branch is anchored by continuation from large
    |Im z| (where A -> 1); otherwise the admissible root nearest
    ``previous`` (an earlier A on the same path) is returned.
    """
    t = complex(t)
    if t == 0:
        return 1.0 + 0.0j
    z = 1.0 / (t * params.psi)
    if z.imag > 0:
        # conjugate symmetry: A(conj t) = conj A(t)
        return resolve_A(t.conjugate(), params,
                         None if previous is None else complex(previous).conjugate()).conjugate()
    if z.imag == 0:
        z = complex(z.real, -params.epsilon)
        t = 1.0 / (z * params.psi)
    roots = candidate_roots(t, params)
    A_all = 1.0 + u_of_B(roots, params)
    if previous is None:
        b = anchor_root(z, params)
        B = roots[np.argmin(np.abs(roots - b))]
    else:
        G = G_of_B(roots, z, params)
        admissible = _admissible(G, z)
        if not admissible.any():
            raise BranchSelectionError(f"no admissible root at t={t}", A_all)
        cand = np.flatnonzero(admissible)
        B = roots[cand[np.argmin(np.abs(A_all[cand] - previous))]]
    B = complex(_polish(B, t, params))
    A = 1.0 + complex(u_of_B(B, params))
    res = float(implicit_residual(A, t, params))
    if res > 1e-10:
        raise BranchSelectionError(f"residual {res:.2e} at t={t}", A_all)
    return A


def _admissible(G, z, tol=1e-8):
    # a Stieltjes transform has Im G of the opposite sign to Im z
    s = -np.sign(z.imag) if z.imag != 0 else 1.0
    return s * G.imag >= -tol * max(1.0, np.max(np.abs(G)))


def _admissible_rows(G, tol=1e-8):
    return G.imag >= -tol * np.maximum(1.0, np.abs(G).max(axis=-1, keepdims=True))


def _track(lams, params: SpectralParams, eps: float):
    """Physical B along ``lams``.

    Every point is anchored independently; a sweep in the given order then
    audits continuity.  Where the anchored root is not admissible (Im G of
    the wrong sign) or jumps far beyond the local rate of change, the
    admissible root nearest its neighbour is used and the event counted.
    """
    n = len(lams)
    z = lams - 1j * eps
    t = 1.0 / (z * params.psi)
    roots = candidate_roots(t, params)
    G = G_of_B(roots, z[:, None], params)
    adm = _admissible_rows(G)
    anchored = anchor_roots(lams, params, eps)
    idx = np.argmin(np.abs(roots - anchored[:, None]), axis=1)
    out = roots[np.arange(n), idx]
    ok = adm[np.arange(n), idx]
    _track.reanchors = 0
    for k in range(n):
        if ok[k]:
            continue
        cand = np.flatnonzero(adm[k])
        if cand.size == 0:
            raise BranchSelectionError(f"no admissible root at lambda={lams[k]:.6g}",
                                       1.0 + u_of_B(roots[k], params))
        ref = out[k - 1] if k > 0 else anchored[k]
        out[k] = roots[k, cand[np.argmin(np.abs(roots[k, cand] - ref))]]
        _track.reanchors += 1
    return _polish(out, t, params)


_track.reanchors = 0


def stieltjes(lams, params: SpectralParams, eps: Optional[float] = None, chunks: int = 1):
    """G(lambda - i eps) on a grid; the grid is walked right to left in
    ``chunks`` independently anchored pieces."""
    eps = params.epsilon if eps is None else eps
    lams = np.asarray(lams, dtype=float)
    order = np.argsort(lams)[::-1]
    pieces = np.array_split(order, max(1, int(chunks)))
    B = np.empty(len(lams), dtype=complex)
    for piece in pieces:
        if piece.size:
            B[piece] = _track(lams[piece], params, eps)
    _check_chunk_boundaries(B, pieces)
    return G_of_B(B, lams - 1j * eps, params)


def _check_chunk_boundaries(B, pieces):
    for a, b in zip(pieces[:-1], pieces[1:]):
        if a.size and b.size:
            ba, bb = B[a[-1]], B[b[0]]
            if abs(ba - bb) > 0.5 * (1 + abs(ba)):
                raise BranchSelectionError("chunk boundary discontinuity", np.array([ba, bb]))


def _rho(G, lams, eps, atom):
    rho = G.imag / math.pi
    if atom > 0:
        rho = rho - atom * eps / (math.pi * (lams ** 2 + eps ** 2))
    return rho


def density_at(lams, params: SpectralParams, eps: Optional[float] = None, chunks: int = 1,
               atom: float = 0.0, extrapolate: bool = False):
    """Continuous density (1/pi) Im G(lambda - i eps) minus the Lorentzian
    smear of a known atom at zero.

    With ``extrapolate`` the value is linearly extrapolated to eps -> 0 from
    eps and 10 eps, which removes the O(eps) tails outside the support.
    """
    eps = params.epsilon if eps is None else eps
    lams = np.asarray(lams, dtype=float)
    G = stieltjes(lams, params, eps, chunks)
    rho = _rho(G, lams, eps, atom)
    if extrapolate:
        wide = _rho(stieltjes(lams, params, 10.0 * eps, chunks), lams, 10.0 * eps, atom)
        rho = rho + (rho - wide) / 9.0
    return np.maximum(rho, 0.0), G


def atom_candidates(params: SpectralParams) -> np.ndarray:
    """Possible values of lim_{z->0} z G(z).

    At z = 0 the roots make A_phi = 0 or A_psi = 0 (or, when zeta = eta,
    send B to infinity with A = 0), so the atom is one of 1 - psi/phi, 0
    or 1 - psi, clipped to [0, 1].
    """
    vals = [1.0 - params.psi / params.phi, 0.0]
    if params.linear:
        vals.append(1.0 - params.psi)
    return np.clip(np.asarray(vals), 0.0, 1.0)


def analytic_atom(params: SpectralParams, delta: float = 1e-9) -> float:
    """Mass at zero: z G(z) followed along the negative real axis towards 0,
    then snapped to the exact z = 0 value it is approaching."""
    scale = params.scale()
    zs = -np.geomspace(10.0 * max(scale, 1.0), delta * scale, 300)
    prev = 1.0 / (zs[0] * params.psi)
    for z in zs:
        roots = candidate_roots(1.0 / (z * params.psi), params)
        prev = roots[np.argmin(np.abs(roots - prev))]
    estimate = (zs[-1] * G_of_B(prev, zs[-1], params)).real
    cands = atom_candidates(params)
    return float(cands[np.argmin(np.abs(cands - estimate))])


def grid_floor(params: SpectralParams, atom: float) -> float:
    """Smallest lambda at which the continuous density is trusted.

    With an atom present, the offset epsilon smears it over a Lorentzian of
    width epsilon and the double roots at z = 0 limit root accuracy to about
    sqrt(machine eps); 100 epsilon stays clear of both.
    """
    if atom > 0:
        return 100.0 * params.epsilon
    return 1e-9 * params.scale()


def default_grid(params: SpectralParams, atom: float = 0.0, n: int = 3000) -> np.ndarray:
    hi = params.scale()
    lo = grid_floor(params, atom)
    head = np.geomspace(lo, 0.02 * hi, n // 3)
    body = np.linspace(0.02 * hi, hi, n - n // 3)
    return np.unique(np.concatenate([head, body]))


def analytic_spectrum(params: SpectralParams, lambda_grid=None, threshold: float = GAP_THRESHOLD,
                      chunks: int = 1, extrapolate: bool = True,
                      check_normalization: bool = True) -> SpectrumResult:
    """Limiting spectral density of Sigma on a grid.

    The grid is extended to the right until the density there falls below
    1e-8.  The atom at zero is the z -> 0 limit of z G(z).  If the density
    is still above ``threshold`` at the first grid point the support reaches
    zero and the gap is reported as 0; otherwise the gap and the right edge
    are refined on the threshold crossing.
    """
    atom = analytic_atom(params)

    def dens(x):
        return density_at(x, params, chunks=chunks, atom=atom, extrapolate=extrapolate)[0]

    if lambda_grid is None:
        grid = default_grid(params, atom)
    else:
        grid = np.asarray(lambda_grid, dtype=float)
        grid = grid[grid >= grid_floor(params, atom)]
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda_grid must be strictly increasing with at least two usable points")
    rho = dens(grid)
    for _ in range(20):
        if rho[-5:].max() < 1e-8:
            break
        hi = grid[-1]
        ext = np.linspace(hi, 2 * hi, 400)[1:]
        grid = np.concatenate([grid, ext])
        rho = np.concatenate([rho, dens(ext)])
    else:
        raise SpectrumInconsistencyError("density does not decay at the right end of the grid")

    # below the floor, an edge at zero behaves like lambda^(-1/2)
    head = 2.0 * grid[0] * rho[0] if rho[0] > threshold else 0.0
    mass = float(np.trapezoid(rho, grid)) + head
    if check_normalization and abs(mass + atom - 1.0) > 1e-2:
        raise SpectrumInconsistencyError(
            f"continuous mass {mass:.4f} + atom {atom:.4f} != 1 (params={params})")
    gap, right_cross = _support_edges(grid, rho, dens, threshold)
    width = right_cross - gap
    left = gap if gap == 0.0 else sqrt_edge(dens, gap, +1, EDGE_STEP * min(width, gap))
    right = sqrt_edge(dens, right_cross, -1, EDGE_STEP * width)
    return SpectrumResult(grid, rho, atom, gap, threshold, right, head_mass=head, left_edge=left)


EDGE_STEP = 2e-4


def _sqrt_fit(dens, x0, direction, h, k=4):
    xs = x0 + direction * h * np.arange(k + 1)
    r = dens(np.sort(xs))
    if direction < 0:
        r = r[::-1]
    slope, icpt = np.polyfit(xs, r * r, 1)
    return -icpt / slope if slope != 0 else float("nan")


def sqrt_edge(dens, crossing: float, direction: int, h: float) -> float:
    """Support edge from the square-root law rho^2 ~ |lambda - edge|.

    Points are sampled inward from the threshold crossing (``direction``
    +1 for a left edge, -1 for a right edge); the linear fit of rho^2 is
    Richardson-extrapolated over steps h and 2h.  Falls back to the
    crossing when the fit lands inside the support or implausibly far out.
    """
    if not (h > 0 and math.isfinite(crossing)):
        return crossing
    e = (4.0 * _sqrt_fit(dens, crossing, direction, h)
         - _sqrt_fit(dens, crossing, direction, 2 * h)) / 3.0
    off = (crossing - e) * direction
    if not (math.isfinite(e) and 0.0 <= off <= 50.0 * h):
        return crossing
    return float(e)


def _support_edges(grid, rho, dens, threshold):
    """Threshold crossings (gap, right) of the density."""
    inside = np.flatnonzero(rho > threshold)
    if inside.size == 0:
        return float("nan"), float("nan")
    i = inside[0]
    gap = 0.0 if i == 0 else _refine(dens, grid[i - 1], grid[i], threshold)
    j = inside[-1]
    right = float(grid[j]) if j == len(grid) - 1 else _refine(dens, grid[j + 1], grid[j], threshold)
    return gap, right


def _refine(dens, outside, inside, threshold, rounds=3, points=33):
    """Threshold crossing between two grid points, by repeated sub-gridding."""
    a, b = float(outside), float(inside)
    for _ in range(rounds):
        xs = np.linspace(a, b, points)
        r = dens(np.sort(xs))
        if a > b:
            r = r[::-1]
        hit = np.flatnonzero(r > threshold)
        k = hit[0] if hit.size else points - 1
        if k == 0:
            return a
        a, b = xs[k - 1], xs[k]
    return float(0.5 * (a + b))


# ---------------------------------------------------------------------------
# closed-form reference: Marchenko-Pastur


def marchenko_pastur_density(lams, c: float, scale: float = 1.0):
    """Continuous part of the MP law for W^T W / N, W of shape N x P,
    c = P / N, entries of variance ``scale``."""
    lams = np.asarray(lams, dtype=float)
    lo, hi = marchenko_pastur_edges(c, scale)
    out = np.zeros_like(lams)
    m = (lams > lo) & (lams < hi)
    out[m] = np.sqrt((hi - lams[m]) * (lams[m] - lo)) / (2 * math.pi * scale * c * lams[m])
    return out


def marchenko_pastur_edges(c: float, scale: float = 1.0):
    return scale * (1 - math.sqrt(c)) ** 2, scale * (1 + math.sqrt(c)) ** 2


# ---------------------------------------------------------------------------
# empirical spectra


def gram_eigenvalues(Z) -> np.ndarray:
    """Eigenvalues of Z^T Z / N (length P, ascending), via the smaller Gram."""
    Z = np.asarray(Z, dtype=float)
    N, P = Z.shape
    if not np.all(np.isfinite(Z)):
        raise SpectralError("non-finite feature matrix")
    try:
        s = np.linalg.svd(Z, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition failed: {exc}") from exc
    ev = np.zeros(P)
    ev[P - s.size:] = np.sort(s ** 2 / N)
    return ev


def empirical_spectrum(Z, top_d_split: bool = False, D: Optional[int] = None,
                       threshold: float = GAP_THRESHOLD, bins: int = 200) -> SpectrumResult:
    """Histogram density and summaries of the eigenvalues of Z^T Z / N.

    Eigenvalues under max(N, P) * eps * lambda_max count toward the atom at
    zero.  With ``top_d_split`` (and N > D) the largest D eigenvalues are
    the linear component and the remainder the nonlinear one.
    """
    Z = np.asarray(Z, dtype=float)
    N, P = Z.shape
    ev = gram_eigenvalues(Z)
    return spectrum_from_eigenvalues(ev, N, top_d_split=top_d_split, D=D, threshold=threshold,
                                     bins=bins)


def spectrum_from_eigenvalues(ev, N: int, top_d_split=False, D=None,
                              threshold: float = GAP_THRESHOLD, bins: int = 200) -> SpectrumResult:
    ev = np.sort(np.asarray(ev, dtype=float))
    P = ev.size
    lmax = ev[-1] if ev.size else 0.0
    cut = max(N, P) * np.finfo(float).eps * max(lmax, 1e-300)
    nz = ev[ev > cut]
    atom = 1.0 - nz.size / P
    gap = float(nz[0]) if nz.size else 0.0
    lo = 0.0
    hi = float(nz[-1]) * 1.02 if nz.size else 1.0
    edges = np.linspace(lo, hi, bins + 1)
    grid = 0.5 * (edges[1:] + edges[:-1])

    def hist(x):
        h, _ = np.histogram(x, bins=edges)
        return h / (P * np.diff(edges))

    density = hist(nz)
    split = None
    if top_d_split:
        if D is None:
            raise ValueError("top_d_split needs D")
        k = min(D, nz.size)
        split = (hist(nz[nz.size - k:]), hist(nz[: nz.size - k]))
    res = SpectrumResult(grid, density, atom, gap, threshold, float(nz[-1]) if nz.size else 0.0,
                         split, ev, left_edge=gap)
    res._zero_cut = cut
    return res


def linear_component_edge(ev, D: int, N: int) -> float:
    """Left edge of the top-min(D, rank) eigenvalues."""
    ev = np.sort(np.asarray(ev, dtype=float))
    cut = max(N, ev.size) * np.finfo(float).eps * max(ev[-1], 1e-300)
    nz = ev[ev > cut]
    k = min(D, nz.size)
    return float(nz[nz.size - k]) if k else 0.0


def wasserstein_continuous(analytic: SpectrumResult, eigenvalues, normalize: bool = True,
                           zero_cut: Optional[float] = None) -> float:
    """W1 between the normalized continuous part of an analytic density and
    the nonzero empirical eigenvalues.  With ``normalize`` both are divided
    by the analytic mean so the distance is scale-free."""
    x, w = analytic.continuous_sample()
    ev = np.asarray(eigenvalues, dtype=float)
    if zero_cut is None:
        zero_cut = max(len(ev), 1) * 1e-12 * max(ev.max(), 1e-300)
    ev = ev[ev > zero_cut]
    mean = float(np.dot(x, w)) if normalize else 1.0
    return float(wasserstein_distance(x / mean, ev / mean, u_weights=w))


# ---------------------------------------------------------------------------
# gap curves


@dataclass
class GapCurve:
    n_over_d: np.ndarray
    gap: np.ndarray
    argmin: int
    linear_edge: Optional[np.ndarray] = None
    linear_argmin: Optional[int] = None


def gap_curve(eta: float, zeta: float, p_over_d: float, n_over_d: Sequence[float],
              threshold: float = GAP_THRESHOLD) -> GapCurve:
    """Analytic spectral gap along N/D at fixed P/D."""
    ratios = np.asarray(n_over_d, dtype=float)
    gaps = []
    for nd in ratios:
        params = SpectralParams(eta, zeta, 1.0 / p_over_d, 1.0 / nd)
        res = analytic_spectrum(params, threshold=threshold, check_normalization=False)
        gaps.append(res.gap)
    gaps = np.asarray(gaps)
    return GapCurve(ratios, gaps, int(np.nanargmin(gaps)))


def empirical_gap_curve(Z_factory, D: int, n_values: Sequence[int], seeds: Sequence[int]) -> GapCurve:
    """Empirical full gap and linear-component edge, averaged over seeds.

    ``Z_factory(N, seed)`` returns an N x P feature matrix.
    """
    n_values = np.asarray(n_values)
    full, lin = [], []
    for N in n_values:
        g, e = [], []
        for s in seeds:
            ev = gram_eigenvalues(Z_factory(int(N), s))
            res = spectrum_from_eigenvalues(ev, int(N))
            g.append(res.gap)
            e.append(linear_component_edge(ev, D, int(N)))
        full.append(np.mean(g))
        lin.append(np.mean(e))
    full, lin = np.asarray(full), np.asarray(lin)
    return GapCurve(n_values / D, full, int(np.argmin(full)), lin, int(np.argmin(lin)))
