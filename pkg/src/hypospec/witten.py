"""Semiclassical Witten complex on the circle and its gap certificate.

In the Fourier basis e_k = e^{i 2 pi k q / l}/sqrt(l) the twisted derivative
and its adjoint are

    d_{V,h}  = h d/dq + V'     (0-forms -> 1-forms)
    d_{V,h}* = -h d/dq + V'

and the Laplacians in the two degrees are

    Delta0 = -h^2 d^2/dq^2 + (V')^2 - h V''      (= d* d)
    Delta1 = -h^2 d^2/dq^2 + (V')^2 + h V''      (= d d*)

assembled directly from exact coefficient arithmetic on the trig polynomial
(V')^2, so the factored and direct forms agree to rounding on the interior
Fourier band.  ker Delta0 = span e^{-V/h}; supersymmetry pairs the nonzero
spectra of the two degrees.

Exponentially small eigenvalues are extracted through singular values of
d_{V,h} (eigenvalues are squares), which keeps them above the rounding floor
eps*||d|| instead of eps*||Delta||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import Discretization, build_multiplier
from .errors import CutoffTooSmall, NoGap
from .potential import Barcode, Potential, evaluate, exp_coefficients

__all__ = [
    "WittenAssembly",
    "assemble_witten",
    "GapCertificate",
    "gap_certificate",
    "SpectralTruncation",
    "spectral_truncation",
    "smooth_step",
    "fourier_coefficients_of_gibbs",
    "suggest_K",
]


def _square_coeffs(v: Potential) -> np.ndarray:
    """Exponential coefficients of (V')^2 by exact convolution."""
    c1 = exp_coefficients(v, order=1)
    return np.convolve(c1, c1)


def _toeplitz_from_exp(coeffs: np.ndarray, nf: int) -> np.ndarray:
    deg = (len(coeffs) - 1) // 2
    t = np.zeros((nf, nf), dtype=complex)
    for m in range(-deg, deg + 1):
        cm = coeffs[m + deg]
        if cm == 0:
            continue
        idx = np.arange(max(0, -m), min(nf, nf - m))
        t[idx + m, idx] += cm
    return t


def fourier_coefficients_of_gibbs(v: Potential, h: float, k_max: int, n_grid: int = 1 << 14) -> np.ndarray:
    """Coefficients of e^{-V/h} in the orthonormal basis e_k, k = -k_max..k_max.

    Sampled FFT; the function is analytic so the grid only needs to beat the
    requested k_max comfortably.
    """
    el = v.circumference
    qs = np.linspace(0.0, el, n_grid, endpoint=False)
    vals = np.asarray(evaluate(v, qs), dtype=float)
    vals = vals - vals.min()  # harmless gauge, avoids underflow of the whole vector
    f = np.exp(-vals / h)
    c = np.fft.fft(f) / n_grid
    ks = np.arange(-k_max, k_max + 1)
    return math.sqrt(el) * c[ks % n_grid]


def suggest_K(v: Potential, h: float, target_tail: float, k_cap: int = 512) -> int:
    """Smallest K whose relative Fourier tail of e^{-V/h} is below target_tail."""
    c = fourier_coefficients_of_gibbs(v, h, k_cap)
    mags = np.abs(c)
    scale = mags.max()
    ks = np.abs(np.arange(-k_cap, k_cap + 1))
    for K in range(max(2 * v.degree, 2), k_cap):
        tail = mags[ks > K].max(initial=0.0) / scale
        if tail <= target_tail:
            return K
    raise CutoffTooSmall(f"no K <= {k_cap} reaches tail {target_tail:g} at h={h:g}")


@dataclass
class WittenAssembly:
    """Matrices of the Witten complex at (V, h) on a Fourier cutoff K."""

    disc: Discretization
    v: Potential
    h: float
    d0: np.ndarray  # h d/dq + V'
    d0_adj: np.ndarray  # -h d/dq + V'
    delta0: np.ndarray
    delta1: np.ndarray
    kernel_vector: np.ndarray  # normalized Fourier coefficients of e^{-V/h}
    kernel_tail: float  # relative tail of e^{-V/h} beyond the cutoff

    def delta(self, degree: int) -> np.ndarray:
        if degree == 0:
            return self.delta0
        if degree == 1:
            return self.delta1
        raise ValueError("degree must be 0 or 1 on the circle")

    def half_spectrum(self, degree: int) -> np.ndarray:
        """Eigenvalues of (1/2) Delta^{(degree)}, ascending."""
        return sla.eigvalsh(self.delta(degree)) / 2.0

    def singular_values(self) -> np.ndarray:
        """Singular values of d_{V,h}, ascending: eigenvalues of Delta are squares."""
        return np.sort(sla.svdvals(self.d0))

    def cluster_eigenvalues(self, degree: int, count: int) -> np.ndarray:
        """`count` lowest eigenvalues of (1/2) Delta^{(degree)} via singular values.

        The smallest singular value belongs to the kernel in each degree
        (e^{-V/h} in degree 0, e^{+V/h} dq in degree 1); the next count-1 are
        tunneling values, returned squared and halved.  This route resolves
        values far below eps*||Delta||.
        """
        s = self.singular_values()
        out = np.concatenate(([0.0], (s[1:count] ** 2) / 2.0))
        return out[:count]

    def working_block(self) -> np.ndarray:
        """Block diagonal (1/2) h^-2 diag(Delta0, Delta1): the flat-units target."""
        z = np.zeros_like(self.delta0)
        return 0.5 / self.h**2 * np.block([[self.delta0, z], [z, self.delta1]])

    def factorization_residual(self) -> float:
        """Relative residual of Delta = d* d / d d* on the interior band."""
        nf = self.disc.n_fourier
        pad = 2 * self.v.degree
        interior = np.abs(self.disc.k_values) <= self.disc.K - pad
        r0 = (self.delta0 - self.d0_adj @ self.d0)[:, interior]
        r1 = (self.delta1 - self.d0 @ self.d0_adj)[:, interior]
        scale = max(np.linalg.norm(self.delta0, 2), 1.0)
        return float(max(np.linalg.norm(r0, 2), np.linalg.norm(r1, 2)) / scale)


def assemble_witten(d: Discretization, v: Potential, h: float) -> WittenAssembly:
    """Assemble the Witten complex; requires deg V <= K/2 so (V')^2 fits."""
    if h <= 0:
        raise ValueError("h must be positive")
    if 2 * v.degree > d.K:
        raise CutoffTooSmall(f"need K >= 2 deg(V) = {2 * v.degree}, got K={d.K}")
    nf = d.n_fourier
    dq = np.diag(1j * d.freqs)
    tv1 = build_multiplier(d, v, order=1)
    tv2 = build_multiplier(d, v, order=2)
    d0 = h * dq + tv1
    d0_adj = -h * dq + tv1
    lap = np.diag((h * d.freqs) ** 2)
    tsq = _toeplitz_from_exp(_square_coeffs(v), nf)
    delta0 = lap + tsq - h * tv2
    delta1 = lap + tsq + h * tv2
    kv = fourier_coefficients_of_gibbs(v, h, d.K)
    wide = fourier_coefficients_of_gibbs(v, h, 4 * d.K)
    tail_ks = np.abs(np.arange(-4 * d.K, 4 * d.K + 1))
    tail = float(np.abs(wide[tail_ks > d.K]).max(initial=0.0) / np.abs(wide).max())
    kv = kv / np.linalg.norm(kv)
    return WittenAssembly(
        disc=d, v=v, h=h, d0=d0, d0_adj=d0_adj, delta0=delta0, delta1=delta1,
        kernel_vector=kv, kernel_tail=tail,
    )


@dataclass
class GapCertificate:
    """rho_h with the two inclusion checks for Spec((1/2)Delta_{V,h}).

    Spec cap [0, rho_h] subset [0, rho_h/2] and Spec cap (rho_h, inf) subset
    [4 rho_h, inf).  `rule` records whether the geometric-mean or the
    degenerate (numerically-zero cluster) rule produced rho_h.
    """

    rho_h: float
    rule: str
    lambda_top: float
    lambda_next: float
    counts: tuple
    cluster: dict = field(default_factory=dict)

    def working(self, h: float) -> float:
        """Threshold in flat working units, for (1/2) h^-2 Delta."""
        return self.rho_h / h**2


def _counts_from(bc) -> tuple:
    if isinstance(bc, Barcode):
        n0 = len([b for b in bc.bars if b.degree == 0])
        n1 = len(bc.finite(0)) + len(bc.infinite(1))
        return (n0, n1)
    n0, n1 = bc
    return (int(n0), int(n1))


def gap_certificate(w: WittenAssembly, bc) -> GapCertificate:
    """Split Spec((1/2)Delta) into the Morse cluster and the rest.

    Cluster sizes are the Morse counts (#minima in degree 0, #maxima in
    degree 1).  rho_h is the geometric mean of the largest cluster eigenvalue
    and the smallest non-cluster eigenvalue when the cluster is numerically
    nonzero (requiring a multiplicative gap >= 16), and lambda_next/4 when the
    whole cluster sits at the numerical zero, which maximizes the admissible
    friction window.
    """
    n0, n1 = _counts_from(bc)
    spec0 = w.half_spectrum(0)
    spec1 = w.half_spectrum(1)
    if len(spec0) <= n0 or len(spec1) <= n1:
        raise NoGap("cutoff too small to see past the cluster")
    cluster = {0: spec0[:n0], 1: spec1[:n1]}
    lambda_top = float(max(spec0[n0 - 1], spec1[n1 - 1]))
    lambda_next = float(min(spec0[n0], spec1[n1]))
    if lambda_next <= 0:
        raise NoGap("non-cluster spectrum is not positive")
    scale = float(max(abs(spec0[-1]), abs(spec1[-1]), 1.0))
    if lambda_top <= max(1e-12 * scale, 1e-8 * lambda_next):
        rho = lambda_next / 4.0
        rule = "degenerate"
    else:
        if lambda_next / lambda_top < 16.0:
            raise NoGap(
                f"multiplicative gap {lambda_next / lambda_top:.3g} < 16 "
                f"(top {lambda_top:.3g}, next {lambda_next:.3g})"
            )
        rho = math.sqrt(lambda_top * lambda_next)
        rule = "geometric-mean"
    # the two inclusions, rechecked on the computed spectrum
    tol = 1e-12 * max(scale, 1.0)
    if lambda_top > rho / 2.0 + tol:
        raise NoGap("cluster does not fit below rho_h/2")
    if lambda_next < 4.0 * rho - tol:
        raise NoGap("non-cluster spectrum intrudes below 4 rho_h")
    return GapCertificate(
        rho_h=float(rho), rule=rule, lambda_top=lambda_top,
        lambda_next=lambda_next, counts=(n0, n1), cluster=cluster,
    )


def smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity cutoff: 1 on [-1,1], 0 outside (-2,2), built from exp(-1/s)."""
    x = np.abs(np.asarray(x, dtype=float))

    def g(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    num = g(2.0 - x)
    return num / (num + g(x - 1.0))


@dataclass
class SpectralTruncation:
    """Qtilde = A^2 chi((C_d + h^-2 Delta_{V,h}) / (LA)^2), per base degree."""

    A: float
    L: float
    C_d: float
    q0: np.ndarray
    q1: np.ndarray

    def block(self) -> np.ndarray:
        z = np.zeros_like(self.q0)
        return np.block([[self.q0, z], [z, self.q1]])

    def matrix(self, degree: int) -> np.ndarray:
        return self.q0 if degree == 0 else self.q1


def spectral_truncation(w: WittenAssembly, A: float, L: float, C_d: float = None, chi=None) -> SpectralTruncation:
    """Smooth low-energy truncation of the working-units Witten operator.

    Functional calculus on the Hermitian h^-2 Delta^{(p)}: eigenpairs are
    computed once per degree, chi is applied to (C_d + lambda)/(LA)^2, and the
    result is scaled by A^2.  chi defaults to the smooth two-sided step (1 on
    [-1,1], supported in [-2,2]).
    """
    if A <= 0 or L <= 0:
        raise ValueError("A and L must be positive")
    if C_d is None:
        C_d = 2.5 * w.disc.C_g
    if chi is None:
        chi = smooth_step
    mats = []
    for p in (0, 1):
        lam, vec = sla.eigh(w.delta(p) / w.h**2)
        f = A**2 * np.asarray(chi((C_d + lam) / (L * A) ** 2))
        mats.append((vec * f) @ vec.conj().T)
    return SpectralTruncation(A=float(A), L=float(L), C_d=float(C_d), q0=mats[0], q1=mats[1])
