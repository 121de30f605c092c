"""Wireless power transfer physics for the V2V charging link.

Mutual inductance between two misaligned circular coils is evaluated by
fixed-node Gauss-Legendre quadrature of the Babic/Fotopoulou-style filament
integral, and the resonant-link transfer efficiency follows from the usual
series-compensated two-coil circuit model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MU0 = 4e-7 * math.pi  # free-space permeability, H/m


class SingularGeometryError(ValueError):
    """Raised when the coil geometry makes the inductance integral singular
    (physically: the coil circles intersect)."""


@dataclass(frozen=True)
class CoilSpec:
    """One circular coil of a charging panel."""

    radius: float = 0.3          # m
    turns: int = 10
    permeability: float = MU0    # H/m

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"coil radius must be > 0, got {self.radius}")
        if self.turns < 1:
            raise ValueError(f"coil turns must be >= 1, got {self.turns}")
        if self.permeability <= 0:
            raise ValueError("permeability must be > 0")


@dataclass(frozen=True)
class MisalignmentState:
    """Relative displacement of the receiver coil plane from the transmitter.

    horizontal_d is the in-plane center offset, angular_theta the tilt
    between coil axes, lateral_c the axial separation of the coil planes.
    Mounted panels always keep a positive lateral gap.
    """

    horizontal_d: float = 0.0    # m
    angular_theta: float = 0.0   # rad
    lateral_c: float = 0.3      # m

    def __post_init__(self):
        if self.lateral_c <= 0:
            raise ValueError(f"lateral_c must be > 0, got {self.lateral_c}")
        if not 0.0 <= self.angular_theta < math.pi / 2:
            raise ValueError(
                f"angular_theta must be in [0, pi/2), got {self.angular_theta}")
        if self.horizontal_d < 0:
            raise ValueError("horizontal_d must be >= 0")


@dataclass(frozen=True)
class CircuitParams:
    """Lumped electrical parameters of the resonant charging link."""

    load_impedance: float = 10.0       # ohm
    parasite_r_med: float = 0.1        # ohm, transmitter-side series loss
    parasite_r_ev: float = 0.1         # ohm, receiver-side series loss
    resonant_freq: float = 2 * math.pi * 85e3  # rad/s

    def __post_init__(self):
        for name in ("load_impedance", "parasite_r_med", "parasite_r_ev",
                     "resonant_freq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def efficiency_ceiling(self) -> float:
        """Supremum of the achievable efficiency (perfect coupling limit)."""
        return self.load_impedance / (self.parasite_r_med + self.load_impedance)


@dataclass(frozen=True)
class QuadratureConfig:
    """Node count for the azimuthal integral over [0, pi]."""

    nodes: int = 128

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError(f"quadrature nodes must be >= 16, got {self.nodes}")


def complete_elliptic(k):
    """Complete elliptic integrals (K(k), E(k)) of modulus k, 0 <= k < 1.

    Arithmetic-geometric mean iteration; converges quadratically to machine
    precision. Accepts scalars or numpy arrays.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k >= 1):
        raise ValueError("elliptic modulus must satisfy 0 <= k < 1")
    a = np.ones_like(k)
    b = np.sqrt(1.0 - k * k)
    c = k.astype(float).copy()
    csum = 0.5 * c * c
    pow2 = 1.0
    for _ in range(60):
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        pow2 *= 2.0
        csum = csum + 0.5 * pow2 * c * c
        if np.all(np.abs(c) <= 1e-17 * a):
            break
    bigk = math.pi / (2.0 * a)
    bige = bigk * (1.0 - csum)
    if bigk.ndim == 0:
        return float(bigk), float(bige)
    return bigk, bige


def psi(k):
    """(2/k - k) K(k) - (2/k) E(k) for 0 < k < 1; positive on the open interval."""
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("psi requires k > 0")
    bigk, bige = complete_elliptic(k)
    out = (2.0 / k - k) * bigk - (2.0 / k) * bige
    if np.ndim(out) == 0:
        return float(out)
    return out


def _gauss_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    # map [-1, 1] -> [0, pi]
    return 0.5 * math.pi * (x + 1.0), 0.5 * math.pi * w


def mutual_inductance(med: CoilSpec, ev: CoilSpec, mis: MisalignmentState,
                      quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Mutual inductance in henries between the transmitter and receiver coils.

    Single-turn filament integral over the azimuth, scaled bilinearly by the
    two turn counts (tightly-wound approximation).
    """
    phi, w = _gauss_nodes(quad.nodes)
    cos_phi = np.cos(phi)
    cos_t = math.cos(mis.angular_theta)
    sin_t = math.sin(mis.angular_theta)
    d_over_r = mis.horizontal_d / ev.radius

    v_sq = (1.0 - cos_phi ** 2 * sin_t ** 2
            - 2.0 * d_over_r * cos_phi * cos_t + d_over_r ** 2)
    if np.any(v_sq <= 0):
        raise SingularGeometryError(
            "coil circles intersect: inductance integral is singular")
    v = np.sqrt(v_sq)

    alpha = ev.radius / med.radius
    beta = mis.lateral_c / med.radius
    xi = beta - alpha * cos_phi * sin_t
    k_sq = 4.0 * alpha * v / ((1.0 + alpha * v) ** 2 + xi ** 2)
    if np.any(k_sq >= 1.0) or np.any(k_sq <= 0.0):
        raise SingularGeometryError(
            "modulus left (0, 1): coils touch or intersect")
    k = np.sqrt(k_sq)

    integrand = (cos_t - d_over_r * cos_phi) * psi(k) / v ** 1.5
    m_single = (med.permeability / math.pi
                * math.sqrt(med.radius * ev.radius)
                * float(np.dot(w, integrand)))
    return med.turns * ev.turns * m_single


def transfer_efficiency(m: float, circuit: CircuitParams) -> float:
    """Link efficiency in [0, 1) for mutual inductance m (henries)."""
    if m < 0:
        raise ValueError("mutual inductance must be >= 0")
    if m == 0.0:
        return 0.0
    wm_sq = (circuit.resonant_freq * m) ** 2
    loss = circuit.parasite_r_med * (circuit.parasite_r_ev
                                     + circuit.load_impedance) / wm_sq
    return circuit.load_impedance / (
        (circuit.parasite_r_med + circuit.load_impedance) * (1.0 + loss))


def coaxial_mutual_inductance(r1: float, r2: float, c: float,
                              permeability: float = MU0) -> float:
    """Closed-form single-turn mutual inductance of two coaxial loops.

    Independent of the quadrature path; used as a reduction check for the
    general integral at zero horizontal and angular misalignment.
    """
    k = math.sqrt(4.0 * r1 * r2 / ((r1 + r2) ** 2 + c * c))
    return permeability * math.sqrt(r1 * r2) * psi(k)
