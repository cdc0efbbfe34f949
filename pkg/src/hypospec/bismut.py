"""Hypoelliptic phase-space Laplacian on the circle's cotangent bundle.

Working-unit operator, for potential V, semiclassical parameter h and
friction b, with W = V/h:

    B = (1/b^2) alpha + (1/b) beta + gamma

    alpha_{+-} = osc +- (N_V - 1/2)                (fiberwise diagonal)
    beta_{+-}  = -( +-p d/dq - W' d/dp )           (trivial on the fiber)
    gamma      = W'' (dq^ - dp^)(i_dq + i_dp)      (kills degrees 0 and 2)

The kernel of alpha_+ is the Hermite ground level tensored with the fiber
components {1, dq}; for alpha_- it is {dp, dq^dp}.  Averaging over that
kernel reproduces half the h=1-normalized Witten Laplacian of W, which in
the original units is (1/2) h^-2 Delta_{V,h}; `bismut_identity_check`
verifies this to rounding on the interior Fourier band.

The operator factors through a twisted de Rham differential

    delta_+ = (I - mu0) [ dq^ (d/dq + W') + (sqrt2/b) dp^ a ] (I + mu0)

with a the Hermite lowering operator, delta_- the analogue with -a^dagger,
and B = (1/2)(delta delta^{*,r} + delta^{*,r} delta) where the r-adjoint is
taken in the indefinite pairing <u, r^* v> built from the momentum
reflection r(q,p) = (q,-p).  R B R = B^dagger holds exactly even after
truncation, so the spectrum is closed under conjugation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp

from .basis import (
    FIBER,
    Discretization,
    build_multiplier,
    build_scalar_generators,
    build_W2,
    kron3,
)
from .errors import CutoffTooSmall
from .potential import Potential
from .witten import SpectralTruncation, WittenAssembly

__all__ = [
    "BismutAssembly",
    "assemble_alpha",
    "assemble_beta_gamma",
    "assemble_bismut",
    "GroundProjector",
    "build_projectors",
    "bismut_identity_check",
    "HodgeFactor",
    "build_hodge",
    "ModifiedOperator",
    "modified_operator",
    "pt_symmetry_check",
    "scaling_equivalence",
    "DEGREE_COMPONENTS",
]

# fiber components carrying each total form degree
DEGREE_COMPONENTS = {0: [0], 1: [1, 2], 2: [3]}

# gamma's fiber factor: (dq^ - dp^)(i_dq + i_dp); sends dq and dp to dq - dp
GAMMA_FIBER = (FIBER.wedge_dq - FIBER.wedge_dp) @ (FIBER.contract_dq + FIBER.contract_dp)


def _alpha_diagonal(d: Discretization, sign: int) -> np.ndarray:
    """Diagonal of alpha over the full index set (c, k, n)."""
    nv = np.diag(FIBER.number_vertical)
    n = np.arange(d.n_hermite) + 0.5
    diag = np.empty(d.dim_full)
    for c in range(4):
        block = n + sign * (nv[c] - 0.5)
        diag[c * d.dim_scalar : (c + 1) * d.dim_scalar] = np.tile(block, d.n_fourier)
    return diag


def assemble_alpha(d: Discretization, sign: int = +1) -> sp.csr_matrix:
    """Harmonic-oscillator part; spectrum N_0, kernel = ground Hermite level
    tensored with {1, dq} (sign +1) or {dp, dq^dp} (sign -1)."""
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    return sp.diags(_alpha_diagonal(d, sign), format="csr")


def assemble_beta_gamma(d: Discretization, v: Potential, sign: int = +1, h: float = 1.0):
    """Transport part beta and Hessian part gamma (working units, W = V/h)."""
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    g = build_scalar_generators(d)
    tw1 = build_multiplier(d, v, order=1) / h
    tw2 = build_multiplier(d, v, order=2) / h
    i_h = np.eye(d.n_hermite)
    beta = kron3(FIBER.identity, -sign * g.d_q, g.mult_p) + kron3(FIBER.identity, tw1, g.d_p)
    gamma = kron3(GAMMA_FIBER, tw2, i_h)
    return beta, gamma


@dataclass
class BismutAssembly:
    """B = (1/b^2) alpha + (1/b) beta + gamma with its ingredients."""

    disc: Discretization
    v: Potential
    sign: int
    b: float
    h: float
    alpha: sp.csr_matrix
    beta: sp.csr_matrix
    gamma: sp.csr_matrix
    B: sp.csr_matrix

    @property
    def w_prime_scale(self) -> float:
        return float(np.max(np.abs(self.v(np.linspace(0, self.v.circumference, 512), 1)))) / self.h

    def degree_indices(self, p: int) -> np.ndarray:
        d = self.disc
        return np.concatenate(
            [np.arange(c * d.dim_scalar, (c + 1) * d.dim_scalar) for c in DEGREE_COMPONENTS[p]]
        )

    def degree_block(self, p: int, of: sp.spmatrix = None) -> np.ndarray:
        """Dense degree-p block (B preserves total form degree)."""
        idx = self.degree_indices(p)
        mat = self.B if of is None else of
        return np.asarray(mat[np.ix_(idx, idx)].todense())

    def r_matrix(self) -> sp.csr_matrix:
        """Momentum-reflection involution, normalized per operator sign.

        The pullback of (q, p) -> (q, -p) acts as fiber sign tensor Hermite
        parity (Fourier-trivial).  It multiplies the vertical volume dp by
        -1, so on the minus operator's ground sector (components dp, dq^dp,
        Hermite level 0) the raw pullback is -identity; the overall sign is
        flipped there so that <u, R v> is positive on the ground sector for
        both operators.  R B R = B^dagger and delta^{*,r} = R delta^dagger R
        are unchanged by the flip (R enters twice)."""
        g = build_scalar_generators(self.disc)
        raw = kron3(FIBER.r_sign, np.eye(self.disc.n_fourier), g.parity)
        return raw if self.sign == +1 else (-raw).tocsr()

    def interior_mask(self, pad_k: int = None, pad_n: int = 2) -> np.ndarray:
        """Boolean full-space mask |k| <= K - pad_k, n <= M - pad_n."""
        d = self.disc
        if pad_k is None:
            pad_k = 2 * self.v.degree
        ks = np.abs(d.k_values) <= d.K - pad_k
        ns = np.arange(d.n_hermite) <= d.M - pad_n
        scalar = (ks[:, None] & ns[None, :]).reshape(-1)
        return np.tile(scalar, 4)

    def bookkeeping_residuals(self) -> dict:
        """Decomposition checks: the d/dp drift averages to zero on the ground
        sector, the Hessian part is gamma itself, and the curvature remainder
        vanishes identically on the flat circle."""
        d = self.disc
        g = build_scalar_generators(d)
        tw1 = build_multiplier(d, self.v, order=1) / self.h
        r1_perp = kron3(FIBER.identity, tw1, g.d_p)
        gp = build_projectors(d, self.sign)
        left = gp.U.conj().T
        pi0_r1_pi0 = (left @ (r1_perp @ gp.U)).todense()
        pi0_beta_pi0 = (left @ (self.beta @ gp.U)).todense()
        return {
            "pi0_r1perp_pi0": float(np.linalg.norm(pi0_r1_pi0)),
            "pi0_beta_pi0": float(np.linalg.norm(pi0_beta_pi0)),
            "r2_norm": 0.0,  # no curvature and no Christoffel terms on the flat circle
        }


def assemble_bismut(d: Discretization, v: Potential, sign: int = +1, b: float = 0.1, h: float = 1.0) -> BismutAssembly:
    """Assemble B at (V, h, b); requires 2 deg V <= K for the identity band."""
    if b <= 0 or h <= 0:
        raise ValueError("b and h must be positive")
    if 2 * v.degree > d.K:
        raise CutoffTooSmall(f"need K >= 2 deg(V) = {2 * v.degree}, got K={d.K}")
    alpha = assemble_alpha(d, sign)
    beta, gamma = assemble_beta_gamma(d, v, sign, h)
    B = (alpha / b**2 + beta / b + gamma).tocsr()
    return BismutAssembly(disc=d, v=v, sign=sign, b=float(b), h=float(h),
                          alpha=alpha, beta=beta, gamma=gamma, B=B)


@dataclass
class GroundProjector:
    """Kernel-of-alpha bookkeeping: isometry U from base forms and projections.

    Base space stacks degree-0 then degree-1 Fourier coefficients (length
    2(2K+1)).  U embeds them at Hermite level 0 into fiber components (1, dq)
    for sign +1 and (dp, dq^dp) for sign -1; pi0 = U U^* is a coordinate
    projection in this basis.
    """

    sign: int
    disc: Discretization
    U: sp.csr_matrix
    mask: np.ndarray  # boolean, True on ker alpha

    @property
    def base_dim(self) -> int:
        return 2 * self.disc.n_fourier

    def pi0(self, mat_or_vec):
        if mat_or_vec.ndim == 1:
            out = mat_or_vec.copy()
            out[~self.mask] = 0.0
            return out
        raise ValueError("pi0 acts on vectors; use the mask for matrices")

    def perp_indices(self) -> np.ndarray:
        return np.nonzero(~self.mask)[0]

    def kernel_indices(self) -> np.ndarray:
        return np.nonzero(self.mask)[0]


def build_projectors(d: Discretization, sign: int = +1) -> GroundProjector:
    """U, pi0, pi_perp for ker alpha; the ground-sector weight is diagonal.

    Post-condition checked here: U^* (W^2) U is diagonal with entries
    C_g (1 + 1/4) + (2 pi k / l)^2 (base-degree independent).
    """
    comps = (0, 1) if sign == +1 else (2, 3)
    nf = d.n_fourier
    rows, cols = [], []
    for j, c in enumerate(comps):
        for ki in range(nf):
            rows.append(c * d.dim_scalar + ki * d.n_hermite + 0)
            cols.append(j * nf + ki)
    U = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(d.dim_full, 2 * nf))
    mask = np.zeros(d.dim_full, dtype=bool)
    mask[rows] = True
    w2 = np.tile(build_W2(d, s=2.0), 4)
    conj = (U.conj().T @ sp.diags(w2) @ U).todense()
    expected = np.tile(1.25 * d.C_g + d.freqs**2, 2)
    if not np.allclose(np.asarray(conj), np.diag(expected), atol=1e-10):
        raise AssertionError("ground-sector weight conjugation is not the expected diagonal")
    return GroundProjector(sign=sign, disc=d, U=U, mask=mask)


def alpha_inverse_perp(d: Discretization, sign: int) -> sp.csr_matrix:
    """Exact diagonal pseudo-inverse of alpha on the range of pi_perp."""
    diag = _alpha_diagonal(d, sign)
    inv = np.zeros_like(diag)
    nz = diag != 0.0  # entries are exact small integers
    inv[nz] = 1.0 / diag[nz]
    return sp.diags(inv, format="csr")


def bismut_identity_check(asm: BismutAssembly, w: WittenAssembly, gp: GroundProjector) -> dict:
    """Relative residual of U^*[pi0(gamma - beta alpha^+ beta)pi0]U against
    (1/2) h^-2 Delta_{V,h}, per base degree, on the interior Fourier band.

    The contraction only visits Hermite levels 0 and 1, so the residual is
    rounding-level on the band |k| <= K - 2 deg V for any M >= 2.
    """
    d = asm.disc
    ainv = alpha_inverse_perp(d, asm.sign)
    left = gp.U.conj().T
    m_eff = left @ (asm.gamma @ gp.U) - left @ (asm.beta @ (ainv @ (asm.beta @ gp.U)))
    m_eff = np.asarray(m_eff.todense())
    target = w.working_block()
    nf = d.n_fourier
    interior = np.abs(d.k_values) <= d.K - 2 * asm.v.degree
    out = {"interior_modes": int(interior.sum())}
    for p in (0, 1):
        sl = slice(p * nf, (p + 1) * nf)
        diff = (m_eff[sl, sl] - target[sl, sl])[:, interior]
        scale = np.linalg.norm(target[sl, sl], 2)
        out[p] = float(np.linalg.norm(diff, 2) / scale)
    return out


@dataclass
class HodgeFactor:
    """delta, its r-adjoint, and the reflection matrix R."""

    asm: BismutAssembly
    delta: sp.csr_matrix
    delta_star_r: sp.csr_matrix
    R: sp.csr_matrix

    def reconstruction_residual(self, pad_k: int = None, pad_n: int = 2) -> float:
        """Relative residual of B - (1/2)(delta delta^{*,r} + delta^{*,r} delta)
        on interior columns."""
        half = 0.5 * (self.delta @ self.delta_star_r + self.delta_star_r @ self.delta)
        mask = self.asm.interior_mask(pad_k=pad_k, pad_n=pad_n)
        diff = (self.asm.B - half).tocsc()[:, mask]
        return float(sp.linalg.norm(diff) / sp.linalg.norm(self.asm.B))

    def delta_squared_norm(self, u: np.ndarray) -> float:
        """|| delta^2 u || for a (preferably interior-supported) vector."""
        return float(np.linalg.norm(self.delta @ (self.delta @ u)))


def build_hodge(asm: BismutAssembly) -> HodgeFactor:
    """Flat twisted differential and its r-adjoint.

    delta_+ = (I - mu0)[dq^(d/dq + W') + (sqrt2/b) dp^ a](I + mu0)
    delta_- = (I - mu0)[dq^(d/dq + W') - (sqrt2/b) dp^ a*](I + mu0)
    delta^{*,r} = R delta^dagger R.
    """
    d = asm.disc
    g = build_scalar_generators(d)
    tw1 = build_multiplier(d, asm.v, order=1) / asm.h
    i_f = np.eye(d.n_fourier)
    i_h = np.eye(d.n_hermite)
    m = d.n_hermite
    lower = np.zeros((m, m))
    for n in range(1, m):
        lower[n - 1, n] = math.sqrt(n)  # a psi_n = sqrt(n) psi_{n-1}
    horiz = kron3(FIBER.wedge_dq, g.d_q + tw1, i_h)
    if asm.sign == +1:
        vert = (math.sqrt(2.0) / asm.b) * kron3(FIBER.wedge_dp, i_f, lower)
    else:
        vert = -(math.sqrt(2.0) / asm.b) * kron3(FIBER.wedge_dp, i_f, lower.T)
    core = (horiz + vert).tocsr()
    conj_plus = kron3(FIBER.exp_mu0(+1.0), i_f, i_h)
    conj_minus = kron3(FIBER.exp_mu0(-1.0), i_f, i_h)
    delta = (conj_minus @ core @ conj_plus).tocsr()
    R = asm.r_matrix()
    delta_star = (R @ delta.conj().T @ R).tocsr()
    return HodgeFactor(asm=asm, delta=delta, delta_star_r=delta_star, R=R)


@dataclass
class ModifiedOperator:
    """B with one of the three compactness repairs applied."""

    kind: str
    matrix: sp.csr_matrix  # full-space matrix
    mask: np.ndarray = None  # for project_perp: True on the removed kernel

    def restricted(self) -> np.ndarray:
        if self.kind != "project_perp":
            raise ValueError("restriction only defined for project_perp")
        idx = np.nonzero(~self.mask)[0]
        return np.asarray(self.matrix[np.ix_(idx, idx)].todense())


def modified_operator(asm: BismutAssembly, kind: str, A: float = None,
                      qt: SpectralTruncation = None) -> ModifiedOperator:
    """B + A^2 pi0 ('add_pi0'), pi_perp B pi_perp ('project_perp'), or
    B + Q_{A,L,V} ('add_QALV', with Q = U Qtilde U^* lifted from the base)."""
    gp = build_projectors(asm.disc, asm.sign)
    if kind == "add_pi0":
        if A is None:
            raise ValueError("add_pi0 needs A")
        pi0 = sp.diags(gp.mask.astype(float), format="csr")
        return ModifiedOperator(kind=kind, matrix=(asm.B + A**2 * pi0).tocsr())
    if kind == "project_perp":
        proj = sp.diags((~gp.mask).astype(float), format="csr")
        return ModifiedOperator(kind=kind, matrix=(proj @ asm.B @ proj).tocsr(), mask=gp.mask)
    if kind == "add_QALV":
        if qt is None:
            raise ValueError("add_QALV needs a SpectralTruncation")
        q = (gp.U @ sp.csr_matrix(qt.block()) @ gp.U.conj().T).tocsr()
        return ModifiedOperator(kind=kind, matrix=(asm.B + q).tocsr())
    raise ValueError(f"unknown kind {kind!r}")


def lift_truncation(asm: BismutAssembly, qt: SpectralTruncation) -> sp.csr_matrix:
    """Q_{A,L,V} = U Qtilde U^* on the full space."""
    gp = build_projectors(asm.disc, asm.sign)
    return (gp.U @ sp.csr_matrix(qt.block()) @ gp.U.conj().T).tocsr()


def pt_symmetry_check(asm: BismutAssembly) -> float:
    """|| R B R - B^dagger ||_F / || B ||_F; exact algebra, so rounding-level."""
    R = asm.r_matrix()
    diff = (R @ asm.B @ R - asm.B.conj().T).tocsr()
    return float(sp.linalg.norm(diff) / sp.linalg.norm(asm.B))


def scaling_equivalence(v: Potential, b: float, h: float,
                        d_small: Discretization, d_large: Discretization,
                        sign: int = +1, n_low: int = 10) -> dict:
    """Spectral match of B_{b,V/h} on the unit-h dilated picture.

    Assembles B at (V, b, h) on d_small and at (V^h, b/h, 1) on the dilated
    circle d_large; the mode indices correspond one to one, so the low
    spectra must satisfy Spec(B_1) = Spec(B_2)/h^2.  Returns the max over
    degrees of the paired mismatch of the n_low lowest eigenvalues.
    """
    if abs(d_large.circumference - d_small.circumference / h) > 1e-9 * d_small.circumference:
        raise ValueError("d_large must live on the circle of circumference l/h")
    if d_large.K < d_small.K:
        raise CutoffTooSmall("dilated picture needs at least as many Fourier modes")
    if d_large.M < d_small.M:
        raise CutoffTooSmall("dilated picture needs at least as many Hermite levels")
    asm1 = assemble_bismut(d_small, v, sign, b, h)
    asm2 = assemble_bismut(d_large, v.dilated(h), sign, b / h, 1.0)
    report = {"per_degree": {}}
    worst = 0.0
    for p in (0, 1, 2):
        e1 = np.linalg.eigvals(asm1.degree_block(p))
        e2 = np.linalg.eigvals(asm2.degree_block(p)) / h**2
        e1 = e1[np.lexsort((e1.imag, e1.real))][:n_low]
        # pair by optimal assignment against a slightly wider candidate set:
        # conjugate pairs share a real part to rounding, so positional sorting
        # can cross them, and a selection cutoff can split a pair differently
        # in the two pictures
        e2 = e2[np.lexsort((e2.imag, e2.real))][:n_low + 4]
        cost = np.abs(e1[:, None] - e2[None, :])
        rows, cols = sopt.linear_sum_assignment(cost)
        mism = float(np.max(cost[rows, cols] / np.maximum(1.0, np.abs(e1))))
        report["per_degree"][p] = mism
        worst = max(worst, mism)
    report["mismatch"] = worst
    return report
