"""Transition wave functions and the constant-coefficient diffusion equation.

The field obeys ``Psi_s = v Psi + z Psi_x + w Psi_xx``. With spatially
constant ``v, z, w`` each Fourier mode evolves independently, so the solution
is a pointwise multiplication in frequency space:
``Psi_hat(s, xi) = I_hat(xi) * exp(-s (w xi^2 - z i xi - v))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .equilibrium import DerivBundle
from .errors import AliasingError, GridMismatchError, SaturationError, SingularCurvatureError

DECAY_TOL = 1e-10


@dataclass(frozen=True)
class SpatialGrid:
    """Periodic grid of ``n_x`` points on ``[x_min, x_max)``."""

    x_min: float = -4.0
    x_max: float = 5.0
    n_x: int = 1024

    def __post_init__(self):
        if self.n_x < 2 or self.n_x & (self.n_x - 1):
            raise ValueError(f"n_x must be a power of two (got {self.n_x})")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def points(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_x) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_x, d=self.dx)


@dataclass(frozen=True)
class WaveField:
    grid: SpatialGrid
    values: np.ndarray
    s: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.grid.n_x,):
            raise GridMismatchError(f"field has shape {vals.shape}, grid has {self.grid.n_x} points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    @classmethod
    def from_function(cls, fn, grid: SpatialGrid = SpatialGrid(), s: float = 0.0) -> "WaveField":
        return cls(grid, np.asarray(fn(grid.points)), s)

    @classmethod
    def gaussian(cls, grid: SpatialGrid = SpatialGrid(), mean: float = 0.5, var: float = 0.05) -> "WaveField":
        """Normalised Gaussian density with the given mean and variance."""
        x = grid.points
        return cls(grid, np.exp(-((x - mean) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var))

    def moments(self) -> tuple[float, float, float]:
        """Mass, mean and variance of ``Re(Psi)`` by the rectangle rule."""
        x = self.x
        p = np.real(self.values)
        mass = p.sum() * self.grid.dx
        mean = (x * p).sum() * self.grid.dx / mass
        var = ((x - mean) ** 2 * p).sum() * self.grid.dx / mass
        return float(mass), float(mean), float(var)

    def records(self) -> np.ndarray:
        """Columns ``x, Re(Psi), Im(Psi)``."""
        v = np.asarray(self.values, dtype=complex)
        return np.column_stack([self.x, v.real, v.imag])


@dataclass(frozen=True)
class PDECoefficients:
    """Coefficients ``v, z, w``; scalars or arrays sampled on the grid."""

    v: Union[float, np.ndarray] = 0.0
    z: Union[float, np.ndarray] = 0.0
    w: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        for name in ("v", "z", "w"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if np.any(np.asarray(self.w) < 0):
            raise ValueError("w must be non-negative")

    @property
    def constant(self) -> bool:
        return all(np.ndim(getattr(self, k)) == 0 or np.ptp(getattr(self, k)) == 0 for k in ("v", "z", "w"))

    def scalars(self) -> tuple[float, float, float]:
        if not self.constant:
            raise ValueError("coefficients vary in space; only the constant-coefficient equation is solved spectrally")
        return tuple(float(np.ravel(getattr(self, k))[0]) for k in ("v", "z", "w"))


def wick_rhs(db: DerivBundle) -> float:
    """Potential ``v = f_x^2 / f_xx^2 - f`` of the transition equation.

    Raises
    ------
    SingularCurvatureError
        If ``|f_xx| < 1e-12``.
    """
    if abs(db.f_xx) < 1e-12:
        raise SingularCurvatureError(f"f_xx = {db.f_xx:.3g} is too close to zero")
    return db.f_x ** 2 / db.f_xx ** 2 - db.f


def transition_wave(I: WaveField, v_field, s: float) -> WaveField:
    """``Psi_s(x) = I(x) exp(s v(x))`` pointwise."""
    v = np.broadcast_to(np.asarray(v_field, dtype=float), I.values.shape)
    arg = s * v
    if np.any(arg > 709.0):
        raise SaturationError(f"exp(s*v) overflows (max exponent {np.max(arg):.6g})")
    return WaveField(I.grid, I.values * np.exp(arg), I.s + s)


def _check_decay(I: WaveField, tol: float):
    ends = max(abs(I.values[0]), abs(I.values[-1]))
    if ends >= tol:
        raise AliasingError(f"field is {ends:.3g} at the grid boundary (needs < {tol:g}); widen the grid")


def fourier_multiplier(coeffs: PDECoefficients, grid: SpatialGrid, s: float) -> np.ndarray:
    v, z, w = coeffs.scalars()
    xi = grid.wavenumbers
    return np.exp(-s * (w * xi * xi - 1j * z * xi - v))


def solve_diffusion_fourier(coeffs: PDECoefficients, I: WaveField, s: float, decay_tol: float = DECAY_TOL) -> WaveField:
    """Evolve ``I`` for time ``s`` under constant ``v, z, w``.

    Real input with ``z = 0`` stays real.

    Raises
    ------
    AliasingError
        If ``I`` has not decayed below ``decay_tol`` at the grid ends.
    """
    _check_decay(I, decay_tol)
    v, z, w = coeffs.scalars()
    if s * v > 709.0:
        raise SaturationError("exp(s*v) overflows")
    out = np.fft.ifft(np.fft.fft(I.values) * fourier_multiplier(coeffs, I.grid, s))
    if np.isrealobj(I.values) and z == 0.0:
        out = out.real
    return WaveField(I.grid, out, I.s + s)


def spectral_derivative(values: np.ndarray, grid: SpatialGrid, order: int = 1) -> np.ndarray:
    xi = grid.wavenumbers
    d = np.fft.ifft((1j * xi) ** order * np.fft.fft(values))
    return d.real if np.isrealobj(values) else d


def schrodinger_residual(series: Sequence[WaveField], coeffs: PDECoefficients) -> float:
    """RMS of ``Psi_s - v Psi - z Psi_x - w Psi_xx`` over the interior time slices.

    The time derivative is a central difference, the space derivatives are
    spectral. Coefficients may vary in space here.

    Raises
    ------
    GridMismatchError
        If the slices do not share one grid or are not evenly spaced in time.
    """
    if len(series) < 3:
        raise ValueError("need at least three time slices")
    grid = series[0].grid
    if any(f.grid != grid for f in series):
        raise GridMismatchError("time slices live on different grids")
    times = np.array([f.s for f in series])
    steps = np.diff(times)
    h = steps[0]
    if not h > 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise GridMismatchError("time slices must be evenly spaced and increasing")
    v, z, w = (np.asarray(getattr(coeffs, k)) for k in ("v", "z", "w"))
    total = 0.0
    for k in range(1, len(series) - 1):
        psi = np.asarray(series[k].values)
        dpsi = (np.asarray(series[k + 1].values) - np.asarray(series[k - 1].values)) / (2.0 * h)
        r = dpsi - v * psi - z * spectral_derivative(psi, grid, 1) - w * spectral_derivative(psi, grid, 2)
        total += float(np.sum(np.abs(r) ** 2))
    return math.sqrt(total / ((len(series) - 2) * grid.n_x))
