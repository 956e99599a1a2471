"""Discretized periodic torus with spectral calculus.

Fields on T^d = (R/Z)^d are stored as Fourier coefficients on the
integer lattice k in {-n/2+1, ..., n/2}^d kept in FFT layout
(0, 1, ..., n/2, -n/2+1, ..., -1 per axis).  The transform convention is

    hat(u)(k) = mean over grid points of e^{+2 pi i k.x} u(x)
    u(x)      = sum over k of e^{-2 pi i k.x} hat(u)(k)

so a constant maps to the k=0 coefficient unchanged, the first
derivative along axis j is the symbol -2 pi i k_j, and Parseval reads
sum |hat(u)(k)|^2 = grid mean of u^2.  Odd-derivative symbols are set
to zero at self-conjugate (Nyquist-edge) frequencies so that every
built-in multiplier maps real fields to real fields.

All operations are pure functions of immutable values and are safe to
call concurrently; nothing here caches FFT state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, FieldRangeError, MultiplierError

HERMITIAN_RESIDUE_TOL = 1e-13
EXP_OVERFLOW_LIMIT = 700.0


class HermitianResidueWarning(UserWarning):
    """An operation produced a larger-than-roundoff anti-Hermitian part."""


def _lattice_freqs(n: int) -> np.ndarray:
    """Integer frequencies in FFT layout with the Nyquist entry at +n/2."""
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n).astype(np.float64)


class Grid:
    """A d-dimensional n^d grid on the unit torus (n a power of two, >= 8)."""

    def __init__(self, d: int, n: int):
        if d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {d}")
        if n < 8 or (n & (n - 1)) != 0:
            raise ConfigurationError(f"n must be a power of two >= 8, got {n}")
        self.d = d
        self.n = n
        self.shape = (n,) * d
        self.size = n**d
        freqs = _lattice_freqs(n)
        # broadcastable per-axis frequency arrays
        self.kaxes = [
            freqs.reshape([n if a == ax else 1 for a in range(d)]) for ax in range(d)
        ]
        self.ksq = sum(ka**2 for ka in self.kaxes)
        self.kabs = np.sqrt(self.ksq)
        rev = (-np.arange(n)) % n
        self._rev_ix = np.ix_(*([rev] * d))
        # derivative symbols with the self-conjugate entry zeroed
        nyq = np.where(np.abs(freqs) == n // 2, 0.0, freqs)
        self.deriv_symbols = [
            (-2j * np.pi)
            * nyq.reshape([n if a == ax else 1 for a in range(d)])
            for ax in range(d)
        ]

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and (self.d, self.n) == (other.d, other.n)

    def __hash__(self) -> int:
        return hash((self.d, self.n))

    def __repr__(self) -> str:
        return f"Grid(d={self.d}, n={self.n})"

    def axes(self) -> list[np.ndarray]:
        """Physical coordinates per axis, x_j = j/n."""
        x = np.arange(self.n) / self.n
        return [x] * self.d

    def meshgrid(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def hermitian_part(self, coeffs: np.ndarray) -> np.ndarray:
        return 0.5 * (coeffs + np.conj(coeffs[self._rev_ix]))

    def sobolev_symbol(self, s: float) -> np.ndarray:
        return (1.0 + 4.0 * np.pi**2 * self.ksq) ** (s / 2.0)


@lru_cache(maxsize=32)
def grid(d: int, n: int) -> Grid:
    """Shared Grid instances (immutable, safe to cache)."""
    return Grid(d, n)


@dataclass(frozen=True)
class SpectralField:
    """A real-valued function on the torus held as Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise ConfigurationError(
                f"coefficient array shape {self.coeffs.shape} does not match "
                f"grid shape {self.grid.shape}"
            )
        self.coeffs.flags.writeable = False

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, np.ascontiguousarray(coeffs, np.complex128))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__


def _check_same_grid(f: SpectralField, g: SpectralField):
    if f.grid != g.grid:
        raise ConfigurationError(f"grid mismatch: {f.grid} vs {g.grid}")


def _symmetrize(g: Grid, coeffs: np.ndarray, warn: bool = True) -> np.ndarray:
    sym = g.hermitian_part(coeffs)
    if warn:
        scale = np.max(np.abs(sym))
        if scale > 0.0:
            residue = np.max(np.abs(coeffs - sym)) / scale
            if residue > HERMITIAN_RESIDUE_TOL:
                warnings.warn(
                    f"discarded anti-Hermitian residue {residue:.3e} "
                    f"(relative) exceeds {HERMITIAN_RESIDUE_TOL:.0e}",
                    HermitianResidueWarning,
                    stacklevel=3,
                )
    return sym


def field_from_coeffs(g: Grid, coeffs: np.ndarray, warn: bool = False) -> SpectralField:
    """Wrap raw coefficients, enforcing Hermitian symmetry."""
    c = _symmetrize(g, np.asarray(coeffs, np.complex128), warn=warn)
    return SpectralField(g, np.ascontiguousarray(c))


def zero_field(g: Grid) -> SpectralField:
    return SpectralField(g, np.zeros(g.shape, np.complex128))


def constant_field(g: Grid, value: float) -> SpectralField:
    c = np.zeros(g.shape, np.complex128)
    c[(0,) * g.d] = value
    return SpectralField(g, c)


def to_spectral(u: np.ndarray, g: Grid) -> SpectralField:
    """Forward transform of physical samples (the integral as a grid mean)."""
    u = np.asarray(u)
    if u.shape != g.shape:
        raise ConfigurationError(
            f"sample array shape {u.shape} does not match grid shape {g.shape}"
        )
    return field_from_coeffs(g, np.fft.ifftn(u))


def to_physical(f: SpectralField) -> np.ndarray:
    """Evaluate the field on the grid points (real array)."""
    vals = np.fft.fftn(f.coeffs)
    scale = np.max(np.abs(vals))
    if scale > 0.0 and np.max(np.abs(vals.imag)) / scale > 1e-10:
        warnings.warn(
            "field has a non-negligible imaginary part in physical space",
            HermitianResidueWarning,
            stacklevel=2,
        )
    return vals.real


def fourier_multiplier(f: SpectralField, m) -> SpectralField:
    """Apply a Fourier symbol; `m` is a callable of the grid or an array."""
    sym = m(f.grid) if callable(m) else np.asarray(m)
    sym = np.broadcast_to(sym, f.grid.shape)
    if not np.all(np.isfinite(sym)):
        bad = np.argwhere(~np.isfinite(sym))[0]
        k = tuple(int(f.grid.kaxes[a].ravel()[bad[a]]) for a in range(f.grid.d))
        raise MultiplierError(f"multiplier is not finite at k={k}")
    return field_from_coeffs(f.grid, sym * f.coeffs, warn=True)


def sobolev_scale(f: SpectralField, s: float) -> SpectralField:
    """Multiplier (1 + 4 pi^2 |k|^2)^{s/2}."""
    return field_from_coeffs(f.grid, f.grid.sobolev_symbol(s) * f.coeffs)


def l2_norm(f: SpectralField) -> float:
    """Grid-mean L^2 norm (Parseval: the l^2 norm of the coefficients)."""
    return float(np.sqrt(np.sum(np.abs(f.coeffs) ** 2)))


def sobolev_norm(f: SpectralField, s: float) -> float:
    return l2_norm(sobolev_scale(f, s))


def lp_norm(f: SpectralField, p: float) -> float:
    """Grid-mean L^p norm of the physical values; p = inf takes the max."""
    vals = to_physical(f)
    if np.isinf(p):
        return float(np.max(np.abs(vals)))
    if p == 2.0:
        return float(np.sqrt(np.mean(vals**2)))
    return float(np.mean(np.abs(vals) ** p) ** (1.0 / p))


def grad(f: SpectralField) -> list[SpectralField]:
    """Gradient components via the symbols -2 pi i k_j."""
    return [
        field_from_coeffs(f.grid, s * f.coeffs) for s in f.grid.deriv_symbols
    ]


def div(v: list[SpectralField]) -> SpectralField:
    """Divergence of a d-component vector field on one grid."""
    g = v[0].grid
    if len(v) != g.d:
        raise ConfigurationError(
            f"vector field has {len(v)} components, expected {g.d}"
        )
    for comp in v[1:]:
        _check_same_grid(v[0], comp)
    acc = np.zeros(g.shape, np.complex128)
    for s, comp in zip(g.deriv_symbols, v):
        acc += s * comp.coeffs
    return field_from_coeffs(g, acc)


def laplacian(f: SpectralField) -> SpectralField:
    return field_from_coeffs(f.grid, -4.0 * np.pi**2 * f.grid.ksq * f.coeffs)


def project_frequencies(f: SpectralField, L: int, side: str) -> SpectralField:
    """Sharp projector onto Euclidean |k| > 2^L (high) or |k| <= 2^L (low)."""
    if L < 0:
        raise ConfigurationError(f"cutoff exponent must be >= 0, got {L}")
    high = f.grid.kabs > float(2**L)
    if side == "high":
        mask = high
    elif side == "low":
        mask = ~high
    else:
        raise ConfigurationError(f"side must be 'high' or 'low', got {side!r}")
    return field_from_coeffs(f.grid, np.where(mask, f.coeffs, 0.0))


# ---------------------------------------------------------------------------
# lattice embedding / restriction (the dealiasing machinery)

def split_axis(arr: np.ndarray, axis: int, n_src: int, n_dst: int,
               weight: float) -> np.ndarray:
    """Grow one axis from n_src to n_dst, placing weight*Nyquist at +-n_src/2."""
    shape = list(arr.shape)
    shape[axis] = n_dst
    out = np.zeros(shape, arr.dtype)
    ix = lambda i: tuple(i if a == axis else slice(None) for a in range(arr.ndim))
    h = n_src // 2
    out[ix(slice(0, h))] = arr[ix(slice(0, h))]
    ny = arr[ix(h)] * weight
    out[ix(h)] = ny
    out[ix(n_dst - h)] = ny
    out[ix(slice(n_dst - h + 1, n_dst))] = arr[ix(slice(h + 1, n_src))]
    return out


def fold_axis(arr: np.ndarray, axis: int, n_src: int, n_dst: int,
              weight: float) -> np.ndarray:
    """Shrink one axis from n_src to n_dst, folding the Nyquist pair."""
    shape = list(arr.shape)
    shape[axis] = n_dst
    out = np.empty(shape, arr.dtype)
    ix = lambda i: tuple(i if a == axis else slice(None) for a in range(arr.ndim))
    h = n_dst // 2
    out[ix(slice(0, h))] = arr[ix(slice(0, h))]
    out[ix(h)] = weight * (arr[ix(h)] + arr[ix(n_src - h)])
    out[ix(slice(h + 1, n_dst))] = arr[ix(slice(n_src - h + 1, n_src))]
    return out


def split_lattice(coeffs: np.ndarray, n_src: int, n_dst: int,
                  weight: float = 0.5) -> np.ndarray:
    if n_dst == n_src:
        return coeffs
    if n_dst < n_src:
        raise ConfigurationError("split requires n_dst >= n_src")
    out = coeffs
    for axis in range(coeffs.ndim):
        out = split_axis(out, axis, n_src, n_dst, weight)
    return out


def fold_lattice(coeffs: np.ndarray, n_src: int, n_dst: int,
                 weight: float = 1.0) -> np.ndarray:
    if n_dst == n_src:
        return coeffs
    if n_dst > n_src:
        raise ConfigurationError("fold requires n_dst <= n_src")
    out = coeffs
    for axis in range(coeffs.ndim):
        out = fold_axis(out, axis, n_src, n_dst, weight)
    return out


def embed_coeffs(coeffs: np.ndarray, n_src: int, n_dst: int) -> np.ndarray:
    """Embed an n_src-lattice coefficient array into an n_dst lattice,
    splitting Nyquist energy evenly (value-faithful for real fields)."""
    return split_lattice(coeffs, n_src, n_dst, weight=0.5)


def restrict_coeffs(coeffs: np.ndarray, n_src: int, n_dst: int) -> np.ndarray:
    """Restrict an n_src-lattice coefficient array to an n_dst lattice,
    folding the Nyquist pair (adjoint of plain zero-extension)."""
    return fold_lattice(coeffs, n_src, n_dst, weight=1.0)


def _product_raw(g: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact product of two band-limited coefficient arrays, 2x padded."""
    m = 2 * g.n
    pa = np.fft.fftn(embed_coeffs(a, g.n, m)).real
    pb = np.fft.fftn(embed_coeffs(b, g.n, m)).real
    return restrict_coeffs(np.fft.ifftn(pa * pb), m, g.n)


def pointwise_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Dealiased product: evaluated on a 2x zero-padded grid, truncated back."""
    _check_same_grid(f, g)
    return field_from_coeffs(f.grid, _product_raw(f.grid, f.coeffs, g.coeffs))


def exp_field(f: SpectralField) -> SpectralField:
    """Pointwise exponential on the 2x-padded grid, truncated to band limit."""
    g = f.grid
    m = 2 * g.n
    vals = np.fft.fftn(embed_coeffs(f.coeffs, g.n, m)).real
    peak = float(np.max(vals))
    if peak > EXP_OVERFLOW_LIMIT:
        raise FieldRangeError(
            f"exponential overflow: max field value {peak:.3g} exceeds "
            f"{EXP_OVERFLOW_LIMIT:g}"
        )
    return field_from_coeffs(g, restrict_coeffs(np.fft.ifftn(np.exp(vals)), m, g.n))


# ---------------------------------------------------------------------------
# PCF1 field file format

def write_pcf1(path, f: SpectralField) -> None:
    """ASCII header `PCF1 d=<d> n=<n>`, then complex128 little-endian coeffs."""
    with open(path, "wb") as fh:
        fh.write(f"PCF1 d={f.grid.d} n={f.grid.n}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes())


def read_pcf1(path) -> SpectralField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        parts = header.split()
        if len(parts) != 3 or parts[0] != "PCF1":
            raise ConfigurationError(f"not a PCF1 file: header {header!r}")
        d = int(parts[1].split("=")[1])
        n = int(parts[2].split("=")[1])
        g = grid(d, n)
        data = fh.read(16 * g.size)
        coeffs = np.frombuffer(data, dtype="<c16").reshape(g.shape)
        return SpectralField(g, np.ascontiguousarray(coeffs.astype(np.complex128)))
