"""Trigonometric Morse potentials on a circle and their sublevel barcodes.

A potential is a real trigonometric polynomial

    V(q) = sum_k a_k cos(2*pi*k*q/l) + b_k sin(2*pi*k*q/l)

on the circle of circumference l.  The module locates critical points,
checks the Morse property, and computes the persistence barcode of the
sublevel filtration {V <= t}: one infinite bar in degree 0 (global min),
one infinite bar in degree 1 (global max), and #minima - 1 finite bars in
degree 0, paired by the elder rule.

Two independent barcode algorithms are provided: a union-find sweep over
the refined critical points, and a brute-force component count on a dense
grid used as an oracle in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonMorse

__all__ = [
    "Potential",
    "CriticalPoint",
    "Bar",
    "Barcode",
    "evaluate",
    "critical_points",
    "barcode",
    "sublevel_barcode_bruteforce",
    "exp_coefficients",
]


@dataclass(frozen=True)
class Potential:
    """Real trig polynomial on a circle of circumference `circumference`.

    cos_coeffs[k] multiplies cos(2*pi*k*q/l), sin_coeffs[k] multiplies
    sin(2*pi*k*q/l); index 0 of sin_coeffs is ignored (sin 0 = 0) and must
    be zero.
    """

    circumference: float = 2.0 * math.pi
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()

    def __post_init__(self):
        if self.circumference <= 0:
            raise ValueError("circumference must be positive")
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        if self.sin_coeffs and self.sin_coeffs[0] != 0.0:
            raise ValueError("sin_coeffs[0] multiplies sin(0) and must be zero")

    @property
    def degree(self) -> int:
        """Highest harmonic with a nonzero coefficient."""
        deg = 0
        for k, a in enumerate(self.cos_coeffs):
            if k > 0 and a != 0.0:
                deg = max(deg, k)
        for k, b in enumerate(self.sin_coeffs):
            if b != 0.0:
                deg = max(deg, k)
        return deg

    def __call__(self, q, order: int = 0):
        return evaluate(self, q, order)

    def scaled(self, factor: float) -> "Potential":
        """factor * V as a new potential."""
        return Potential(
            self.circumference,
            tuple(factor * a for a in self.cos_coeffs),
            tuple(factor * b for b in self.sin_coeffs),
        )

    def negated(self) -> "Potential":
        return self.scaled(-1.0)

    def dilated(self, h: float) -> "Potential":
        """V^h(q) = V(h q)/h on the circle of circumference l/h.

        Harmonic k of V becomes harmonic k of V^h with coefficient /h: the
        mode index is preserved, only the circle and the amplitudes rescale.
        """
        return Potential(
            self.circumference / h,
            tuple(a / h for a in self.cos_coeffs),
            tuple(b / h for b in self.sin_coeffs),
        )

    def shifted(self, theta: float) -> "Potential":
        """V(q + theta): the same function in a chart with rotated origin."""
        deg = max(len(self.cos_coeffs), len(self.sin_coeffs))
        a = list(self.cos_coeffs) + [0.0] * (deg - len(self.cos_coeffs))
        b = list(self.sin_coeffs) + [0.0] * (deg - len(self.sin_coeffs))
        base = 2.0 * math.pi / self.circumference
        a2, b2 = [], []
        for k in range(deg):
            c, s = math.cos(base * k * theta), math.sin(base * k * theta)
            a2.append(a[k] * c + b[k] * s)
            b2.append(-a[k] * s + b[k] * c)
        if b2:
            b2[0] = 0.0
        return Potential(self.circumference, tuple(a2), tuple(b2))


def evaluate(v: Potential, q, order: int = 0):
    """V(q), V'(q) or V''(q) evaluated analytically (order 0, 1, 2)."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    q = np.asarray(q, dtype=float)
    out = np.zeros_like(q)
    base = 2.0 * math.pi / v.circumference
    for k, a in enumerate(v.cos_coeffs):
        if a == 0.0:
            continue
        w = base * k
        if order == 0:
            out = out + a * np.cos(w * q)
        elif order == 1:
            out = out - a * w * np.sin(w * q)
        else:
            out = out - a * w * w * np.cos(w * q)
    for k, b in enumerate(v.sin_coeffs):
        if b == 0.0:
            continue
        w = base * k
        if order == 0:
            out = out + b * np.sin(w * q)
        elif order == 1:
            out = out + b * w * np.cos(w * q)
        else:
            out = out - b * w * w * np.sin(w * q)
    return out if out.ndim else float(out)


def exp_coefficients(v: Potential, order: int = 0) -> np.ndarray:
    """Complex exponential coefficients c_m, m = -deg..deg, of V or V'/V''.

    V = sum_m c_m e^{i 2 pi m q / l} with c_0 = a_0, c_m = (a_m - i b_m)/2,
    c_{-m} = conj(c_m).  Differentiation multiplies c_m by (i 2 pi m / l)^order.
    """
    deg = v.degree
    c = np.zeros(2 * deg + 1, dtype=complex)

    def slot(m):
        return m + deg

    for k, a in enumerate(v.cos_coeffs):
        if a == 0.0:
            continue
        if k == 0:
            c[slot(0)] += a
        else:
            c[slot(k)] += a / 2.0
            c[slot(-k)] += a / 2.0
    for k, b in enumerate(v.sin_coeffs):
        if b == 0.0:
            continue
        c[slot(k)] += b / (2.0j)
        c[slot(-k)] -= b / (2.0j)
    if order:
        m = np.arange(-deg, deg + 1)
        c = c * (1j * 2.0 * math.pi / v.circumference * m) ** order
    return c


@dataclass(frozen=True)
class CriticalPoint:
    q: float
    value: float
    kind: str  # "min" or "max"


def _bisect_root(f, lo: float, hi: float, tol: float = 1e-12, maxit: int = 200) -> float:
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol and hi - lo < 1e-13 * max(1.0, abs(mid)):
            return mid
        if (flo < 0) == (fm < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_points(v: Potential, grid_n: int = 2048) -> list:
    """All critical points of V, sorted by (value, angular position).

    Roots of V' are located by sign changes on a uniform grid and refined by
    bisection to |V'| < 1e-12 * scale.  Raises NonMorse when a refined root has
    |V''| below tolerance, or when the grid shows a near-zero of V' that does
    not cross (even-multiplicity root).
    """
    if grid_n < 256:
        raise ValueError("grid_n must be at least 256")
    if v.degree == 0:
        raise NonMorse("constant potential has no Morse critical points")
    el = v.circumference
    qs = np.linspace(0.0, el, grid_n, endpoint=False)
    dV = evaluate(v, qs, 1)
    scale1 = float(np.max(np.abs(dV)))
    if scale1 == 0.0:
        raise NonMorse("V' vanishes identically on the sample grid")

    f = lambda q: evaluate(v, q, 1)
    roots = []
    for i in range(grid_n):
        j = (i + 1) % grid_n
        a, b = dV[i], dV[j]
        lo, hi = qs[i], qs[i] + el / grid_n
        if a == 0.0:
            roots.append(lo)
        elif (a < 0) != (b < 0):
            roots.append(_bisect_root(f, lo, hi, tol=1e-12 * max(1.0, scale1)))

    # even-multiplicity guard: a dip of |V'| to ~0 without a sign change
    near = np.abs(dV) < 1e-9 * scale1
    spacing = el / grid_n
    for i in np.nonzero(near)[0]:
        if not any(abs((qs[i] - r + el / 2) % el - el / 2) < 2 * spacing for r in roots):
            raise NonMorse("V' nearly vanishes without crossing (degenerate critical point)")

    pts = []
    d2scale = max(1.0, float(np.max(np.abs(evaluate(v, qs, 2)))))
    for r in roots:
        r = r % el
        d2 = evaluate(v, r, 2)
        if abs(d2) < 1e-8 * d2scale:
            raise NonMorse(f"critical point at q={r:.6f} has |V''|={abs(d2):.2e}")
        pts.append(CriticalPoint(q=r, value=float(evaluate(v, r)), kind="min" if d2 > 0 else "max"))

    n_min = sum(1 for p in pts if p.kind == "min")
    n_max = len(pts) - n_min
    if n_min != n_max or n_min == 0:
        raise NonMorse(f"critical point counts do not alternate: {n_min} minima, {n_max} maxima")
    by_angle = sorted(pts, key=lambda p: p.q)
    for i, p in enumerate(by_angle):
        if p.kind == by_angle[(i + 1) % len(by_angle)].kind:
            raise NonMorse("minima and maxima do not alternate around the circle")
    return sorted(pts, key=lambda p: (p.value, p.q))


@dataclass(frozen=True)
class Bar:
    birth: float
    death: float  # math.inf for essential classes
    degree: int


@dataclass
class Barcode:
    bars: list = field(default_factory=list)

    def finite(self, degree=None):
        out = [b for b in self.bars if math.isfinite(b.death)]
        if degree is not None:
            out = [b for b in out if b.degree == degree]
        return out

    def infinite(self, degree=None):
        out = [b for b in self.bars if math.isinf(b.death)]
        if degree is not None:
            out = [b for b in out if b.degree == degree]
        return out

    def sorted_bars(self):
        # essential bars ordered after finite ones so that nearly tied births
        # (sampled vs exact critical values) cannot flip the pairing
        return sorted(
            self.bars, key=lambda b: (b.degree, math.isinf(b.death), b.birth, b.death)
        )

    def to_json(self) -> str:
        items = []
        for b in self.sorted_bars():
            items.append(
                {
                    "birth": b.birth,
                    "death": "inf" if math.isinf(b.death) else b.death,
                    "degree": b.degree,
                }
            )
        return json.dumps({"bars": items}, indent=2)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        self.parent[self.find(i)] = self.find(j)


def barcode(v: Potential, grid_n: int = 2048) -> Barcode:
    """Sublevel persistence barcode of V by an elder-rule union-find sweep.

    Minima birth components; each maximum (processed in increasing value)
    merges the components of its two neighbouring minima, killing the younger
    one (larger birth value, ties broken by angular position).  The largest
    maximum closes the circle and births the essential degree-1 class.
    """
    pts = critical_points(v, grid_n)
    by_angle = sorted(pts, key=lambda p: p.q)
    minima = [p for p in by_angle if p.kind == "min"]
    s = len(minima)
    # maxima[i] separates minima[i] from minima[i+1 mod s] going counterclockwise
    min_pos = [i for i, p in enumerate(by_angle) if p.kind == "min"]
    start = min_pos[0]
    ring = by_angle[start:] + by_angle[:start]  # starts with a minimum
    minima = ring[0::2]
    maxima = ring[1::2]

    uf = _UnionFind(s)
    birth = {i: (minima[i].value, minima[i].q) for i in range(s)}
    events = sorted(range(s), key=lambda i: (maxima[i].value, maxima[i].q))
    bars = []
    closed = False
    for i in events:
        a = uf.find(i)
        bvs = uf.find((i + 1) % s)
        if a == bvs:
            if closed:
                raise NonMorse("sublevel filtration closed twice; inconsistent sweep")
            closed = True
            bars.append(Bar(birth=maxima[i].value, death=math.inf, degree=1))
            continue
        elder, younger = (a, bvs) if birth[a] <= birth[bvs] else (bvs, a)
        bars.append(Bar(birth=birth[younger][0], death=maxima[i].value, degree=0))
        uf.union(younger, elder)
        birth[uf.find(elder)] = birth[elder]
    if not closed:
        raise NonMorse("sweep never closed the circle")
    global_min = min(p.value for p in minima)
    bars.append(Bar(birth=global_min, death=math.inf, degree=0))
    return Barcode(bars=bars)


def sublevel_barcode_bruteforce(v: Potential, grid_n: int = 100_000) -> Barcode:
    """Oracle barcode from dense sublevel component counting.

    Samples V on a grid_n-point circular grid, reads off critical values as
    sampled local extrema, and recomputes the connected components of
    {V <= t} from scratch just below and above each critical value.  Merges
    are paired by the elder rule using the component minima.  Shares no code
    with the union-find sweep besides `evaluate`.
    """
    el = v.circumference
    qs = np.linspace(0.0, el, grid_n, endpoint=False)
    vals = evaluate(v, qs)
    left = np.roll(vals, 1)
    right = np.roll(vals, -1)
    is_min = (vals < left) & (vals < right)
    is_max = (vals > left) & (vals > right)
    crit = sorted(
        [(vals[i], "min", i) for i in np.nonzero(is_min)[0]]
        + [(vals[i], "max", i) for i in np.nonzero(is_max)[0]]
    )
    # sampled extrema carry O((l/n)^2 V'') error: cluster coincident values
    d2scale = float(np.max(np.abs(evaluate(v, qs[:: max(1, grid_n // 512)], 2))))
    delta = 20.0 * (el / grid_n) ** 2 * max(d2scale, 1.0) + 1e-12
    groups = []
    for c in crit:
        if groups and c[0] - groups[-1][-1][0] < delta:
            groups[-1].append(c)
        else:
            groups.append([c])
    levels = [sum(c[0] for c in g) / len(g) for g in groups]
    gaps = [levels[j + 1] - levels[j] for j in range(len(levels) - 1)]
    eps = max(min(gaps) / 3.0, 2.0 * delta) if gaps else 2.0 * delta

    def components(t):
        """Circular runs of {V <= t} as index arrays."""
        mask = vals <= t
        if mask.all():
            return [np.arange(grid_n)]
        if not mask.any():
            return []
        # rotate so position 0 is outside the sublevel set
        off = int(np.nonzero(~mask)[0][0])
        m = np.roll(mask, -off)
        comps = []
        i = 0
        while i < grid_n:
            if m[i]:
                j = i
                while j < grid_n and m[j]:
                    j += 1
                comps.append((np.arange(i, j) + off) % grid_n)
                i = j
            else:
                i += 1
        return comps

    bars = []
    closed_at = None
    for level, group in zip(levels, groups):
        n_max = sum(1 for c in group if c[1] == "max")
        if n_max == 0:
            continue
        n_min = len(group) - n_max
        before = components(level - eps)
        after = components(level + eps)
        drop = len(before) - len(after)
        if drop == n_max - n_min - 1:
            if closed_at is not None:
                raise NonMorse("oracle saw two closing maxima")
            closed_at = level  # one of the merges closed the circle
        elif drop != n_max - n_min:
            raise NonMorse("oracle component count inconsistent with maxima at this level")
        # elder rule within each after-component: every non-eldest pre-component dies here
        reps = [c[np.argmin(vals[c])] for c in before]
        for comp in after:
            inside = sorted(
                ((vals[r], qs[r]) for r in reps if np.any(comp == r))
            )
            for birth_val, _q in inside[1:]:
                bars.append(Bar(birth=birth_val, death=level, degree=0))
    if closed_at is None:
        raise NonMorse("oracle never saw the closing maximum")
    bars.append(Bar(birth=closed_at, death=math.inf, degree=1))
    bars.append(Bar(birth=min(levels), death=math.inf, degree=0))
    return Barcode(bars=bars)


def barcodes_agree(b1: Barcode, b2: Barcode, tol: float = 1e-6) -> bool:
    """Same bars up to tol in birth/death (used to compare sweep vs oracle)."""
    s1, s2 = b1.sorted_bars(), b2.sorted_bars()
    if len(s1) != len(s2):
        return False
    for x, y in zip(s1, s2):
        if x.degree != y.degree:
            return False
        if abs(x.birth - y.birth) > tol:
            return False
        if math.isinf(x.death) != math.isinf(y.death):
            return False
        if math.isfinite(x.death) and abs(x.death - y.death) > tol:
            return False
    return True
