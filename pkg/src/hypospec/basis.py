"""Tensor basis, fiber exterior algebra, and weight operators.

The scalar space is L2 of the circle (Fourier modes k = -K..K, circumference
l) tensored with L2(R) in the momentum variable (Hermite functions
psi_0..psi_M, orthonormal for dp).  The full space carries in addition the
4-dimensional exterior algebra of the phase-space cotangent fiber with basis

    c = 0: 1,   c = 1: dq,   c = 2: dp,   c = 3: dq^dp.

Flat index layout: full index = c*D + (k+K)*(M+1) + n with D = (2K+1)(M+1),
so every operator is a sum of Kronecker products

    kron(F_fiber(4x4), kron(A_fourier, B_hermite)).

Conventions frozen here and used everywhere else:
  p   = (a + a*)/sqrt(2)        p psi_0 = psi_1/sqrt(2)
  d/dp = (a - a*)/sqrt(2)       (d/dp) psi_0 = -psi_1/sqrt(2)
  osc = (-d^2/dp^2 + p^2)/2     osc psi_n = (n + 1/2) psi_n
  parity psi_n = (-1)^n psi_n
  W^2 = C_g + (2 pi k/l)^2 + C_g (n + 1/2)^2  (diagonal in this basis)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CutoffTooSmall
from .potential import Potential, exp_coefficients

__all__ = [
    "Discretization",
    "FiberAlgebra",
    "FIBER",
    "ScalarGenerators",
    "build_scalar_generators",
    "build_multiplier",
    "build_W2",
    "sobolev_norm",
    "hermite_values",
    "kron3",
]


@dataclass(frozen=True)
class Discretization:
    """Cutoffs and geometry: Fourier modes -K..K, Hermite levels 0..M."""

    K: int
    M: int
    circumference: float = 2.0 * math.pi
    C_g: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.circumference <= 0:
            raise ValueError("circumference must be positive")
        if self.C_g < 1.0:
            raise ValueError("C_g must be at least 1")

    @property
    def n_fourier(self) -> int:
        return 2 * self.K + 1

    @property
    def n_hermite(self) -> int:
        return self.M + 1

    @property
    def dim_scalar(self) -> int:
        return self.n_fourier * self.n_hermite

    @property
    def dim_full(self) -> int:
        return 4 * self.dim_scalar

    @property
    def k_values(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    @property
    def freqs(self) -> np.ndarray:
        """Angular frequencies 2 pi k / l for k = -K..K."""
        return 2.0 * math.pi / self.circumference * self.k_values

    def scalar_index(self, k: int, n: int) -> int:
        return (k + self.K) * self.n_hermite + n

    def index(self, c: int, k: int, n: int) -> int:
        return c * self.dim_scalar + self.scalar_index(k, n)


def _fiber_matrices():
    """4x4 matrices of the fiber operations in the basis (1, dq, dp, dq^dp)."""
    wedge_dq = np.zeros((4, 4))
    wedge_dq[1, 0] = 1.0  # dq^1 = dq
    wedge_dq[3, 2] = 1.0  # dq^dp
    wedge_dp = np.zeros((4, 4))
    wedge_dp[2, 0] = 1.0  # dp^1 = dp
    wedge_dp[3, 1] = -1.0  # dp^dq = -dq^dp
    contract_dq = wedge_dq.T.copy()  # interior product with d/dq
    contract_dp = wedge_dp.T.copy()  # interior product with d/dp
    mu0 = np.zeros((4, 4))
    mu0[2, 1] = 1.0  # dq -> dp, nilpotent
    return wedge_dq, wedge_dp, contract_dq, contract_dp, mu0


class FiberAlgebra:
    """The exterior algebra of span(dq, dp) with its standard operations.

    Attributes are 4x4 ndarrays: wedge_dq, wedge_dp, contract_dq, contract_dp,
    mu0 (dq -> dp), lambda0 = mu0^T, number_vertical (counts dp factors),
    degree (form degree), r_sign (pullback sign of the momentum reflection
    r(q,p) = (q,-p) on the fiber factor: dp and dq^dp flip sign).
    """

    def __init__(self):
        (
            self.wedge_dq,
            self.wedge_dp,
            self.contract_dq,
            self.contract_dp,
            self.mu0,
        ) = _fiber_matrices()
        self.lambda0 = self.mu0.T.copy()
        self.number_vertical = np.diag([0.0, 0.0, 1.0, 1.0])
        self.degree = np.diag([0.0, 1.0, 1.0, 2.0])
        self.r_sign = np.diag([1.0, 1.0, -1.0, -1.0])
        self.identity = np.eye(4)

    def exp_mu0(self, sign: float = 1.0) -> np.ndarray:
        """exp(sign*mu0) = I + sign*mu0 exactly (mu0^2 = 0)."""
        return self.identity + sign * self.mu0

    def degree_indices(self, p: int) -> list:
        """Fiber components of form degree p."""
        return {0: [0], 1: [1, 2], 2: [3]}[p]


FIBER = FiberAlgebra()


@dataclass
class ScalarGenerators:
    """Dense matrices of the scalar generators on Fourier (f) / Hermite (h) legs."""

    d_q: np.ndarray  # (2K+1) diagonal, i*2*pi*k/l
    mult_p: np.ndarray  # (M+1)^2 tridiagonal, multiplication by p
    d_p: np.ndarray  # (M+1)^2 tridiagonal, d/dp
    osc: np.ndarray  # (M+1) diagonal, n + 1/2
    parity: np.ndarray  # (M+1) diagonal, (-1)^n


def build_scalar_generators(d: Discretization) -> ScalarGenerators:
    """Exact ladder/diagonal matrices of d/dq, p, d/dp, osc, parity."""
    d_q = np.diag(1j * d.freqs)
    m = d.n_hermite
    up = np.sqrt(np.arange(1, m) / 2.0)  # <psi_{n+1}| a* |psi_n> / sqrt(2) etc.
    mult_p = np.zeros((m, m))
    d_p = np.zeros((m, m))
    for n in range(m - 1):
        mult_p[n + 1, n] = up[n]
        mult_p[n, n + 1] = up[n]
        d_p[n + 1, n] = -up[n]
        d_p[n, n + 1] = up[n]
    osc = np.diag(np.arange(m) + 0.5)
    parity = np.diag((-1.0) ** np.arange(m))
    return ScalarGenerators(d_q=d_q, mult_p=mult_p, d_p=d_p, osc=osc, parity=parity)


def build_multiplier(d: Discretization, v: Potential, order: int = 0) -> np.ndarray:
    """Toeplitz matrix of multiplication by V (order 0), V' (1) or V'' (2).

    Exact on the interior band |k| <= K - deg(V); raises CutoffTooSmall when
    the potential's bandwidth cannot fit in the cutoff at all.
    """
    if abs(v.circumference - d.circumference) > 1e-12 * d.circumference:
        raise ValueError("potential and discretization circumferences differ")
    deg = v.degree
    if 2 * deg > 2 * d.K + 1:
        raise CutoffTooSmall(f"multiplier of degree {deg} aliases at K={d.K}")
    c = exp_coefficients(v, order)
    nf = d.n_fourier
    t = np.zeros((nf, nf), dtype=complex)
    for m in range(-deg, deg + 1):
        cm = c[m + deg]
        if cm == 0:
            continue
        idx = np.arange(max(0, -m), min(nf, nf - m))
        t[idx + m, idx] += cm
    return t


def multiplier_interior_mask(d: Discretization, v: Potential, passes: int = 1) -> np.ndarray:
    """Boolean mask over Fourier modes exact under `passes` multiplier products."""
    pad = passes * v.degree
    return np.abs(d.k_values) <= d.K - pad


def build_W2(d: Discretization, s: float = 1.0, h: float = 1.0) -> np.ndarray:
    """Diagonal of (W^2)^{s/2} on the scalar space.

    W^2 = C_g + h^2 (2 pi k/l)^2 + C_g (n + 1/2)^2; the h-scaled horizontal
    frequency variant is selected with h != 1.
    """
    w2 = (
        d.C_g
        + (h * d.freqs[:, None]) ** 2
        + d.C_g * (np.arange(d.n_hermite)[None, :] + 0.5) ** 2
    )
    return (w2 ** (s / 2.0)).reshape(-1)


def sobolev_norm(u: np.ndarray, d: Discretization, s1: float = 0.0, s2: float = 0.0) -> float:
    """|| osc^{s1/2} (W^2)^{s2/2} u ||  (both weights diagonal here).

    Accepts scalar-space vectors (length D) or full-space vectors (length 4D,
    the weight acts identically on every fiber component).
    """
    u = np.asarray(u)
    w = build_W2(d, s=s2)
    if s1 != 0.0:
        oscw = (np.zeros((d.n_fourier, 1)) + (np.arange(d.n_hermite) + 0.5)[None, :]).reshape(-1)
        w = w * oscw ** (s1 / 2.0)
    if u.shape[0] == d.dim_scalar:
        return float(np.linalg.norm(w * u))
    if u.shape[0] == d.dim_full:
        return float(np.linalg.norm(np.tile(w, 4) * u))
    raise ValueError("vector length matches neither the scalar nor the full space")


def hermite_values(n_max: int, x: np.ndarray) -> np.ndarray:
    """psi_n(x) for n = 0..n_max, shape (n_max+1, len(x)).

    Normalized Hermite functions via the stable recurrence
    psi_n = x sqrt(2/n) psi_{n-1} - sqrt((n-1)/n) psi_{n-2}.  Values are
    carried with a per-point log scale so that large n_max (beyond ~200)
    neither overflows nor flushes to zero prematurely.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((n_max + 1, x.size))
    # scaled recurrence: psi_n = t_n * exp(logs), start from psi_0
    logs = -0.5 * x**2 - 0.25 * math.log(math.pi)
    t_prev = np.zeros_like(x)
    t_cur = np.ones_like(x)
    out[0] = np.exp(logs)
    for n in range(1, n_max + 1):
        t_next = x * math.sqrt(2.0 / n) * t_cur - math.sqrt((n - 1) / n) * t_prev
        t_prev, t_cur = t_cur, t_next
        big = np.abs(t_cur) > 1e100
        if big.any():
            logs = logs + np.where(big, np.log(np.abs(t_cur)), 0.0)
            t_prev = np.where(big, t_prev / np.abs(t_cur), t_prev)
            t_cur = np.where(big, np.sign(t_cur), t_cur)
        out[n] = t_cur * np.exp(logs)
    return out


def kron3(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> sp.csr_matrix:
    """kron(fiber 4x4, kron(fourier, hermite)) as sparse CSR."""
    return sp.kron(sp.csr_matrix(f), sp.kron(sp.csr_matrix(a), sp.csr_matrix(b), format="csr"), format="csr")
