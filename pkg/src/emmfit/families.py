"""Elliptical distribution families.

Each family couples a density generator with a sampler for the modular
variable R^2 of the stochastic representation  x = mu + R * L * s,  where
s is uniform on the unit sphere and L is the Cholesky factor of the
scatter matrix.  ``log_gen(t)`` returns the log of the *normalized*
generator, i.e. the density of a standard (mu=0, Sigma=I) member is
``exp(log_gen(t))`` with t the squared Mahalanobis distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import (
    DensityUnavailableError,
    InvalidFamilyError,
    NotPositiveDefiniteError,
    SupportError,
    UnsupportedGradientError,
)

# Relative floor on the smallest eigenvalue of an admissible scatter matrix.
PD_FLOOR = 1e-10


def check_spd(sigma: np.ndarray, floor: float = PD_FLOOR) -> np.ndarray:
    """Validate a symmetric positive definite matrix and return it as float64.

    The smallest eigenvalue must exceed ``floor * trace / m`` so that
    round-off noise is tolerated but singular matrices are rejected.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NotPositiveDefiniteError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-8 * max(1.0, float(np.abs(sigma).max()))):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    m = sigma.shape[0]
    lam_min = float(np.linalg.eigvalsh(sigma)[0])
    if lam_min <= floor * float(np.trace(sigma)) / m:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {lam_min:.3e} below the PD floor")
    return sigma


def _as_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise SupportError("Mahalanobis argument t must be nonnegative")
    return t


@dataclass(frozen=True)
class EllipticalFamily:
    """Base class; concrete families fix the generator and the R^2 law."""

    m: int

    name = "elliptical"
    # Families without a normalized density cannot enter likelihoods.
    has_density = True
    # Families without a closed-form generator derivative cannot be used
    # with the analytic sliced-Wasserstein gradients.
    has_gradient = True

    def __post_init__(self):
        if int(self.m) < 1:
            raise InvalidFamilyError("dimension m must be a positive integer")

    def log_gen(self, t) -> np.ndarray:
        """log of the normalized generator c_m*g(t), elementwise in t >= 0."""
        raise NotImplementedError

    def dlog_gen(self, t) -> np.ndarray:
        """d/dt log g(t) (the generator's log-derivative), elementwise."""
        raise NotImplementedError

    def gen_deriv(self, t) -> np.ndarray:
        """d/dt of the normalized generator; zero where the density vanishes."""
        lg = self.log_gen(t)
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.exp(lg) * self.dlog_gen(t)
        return np.where(np.isneginf(lg), 0.0, out)

    @cached_property
    def _primitive_interp(self):
        # Odd primitive of the 1-D projected kernel, used for exact cell
        # masses: Phi(u) = integral_0^u c_m g(z^2) dz on a tangent-warped
        # grid so heavy tails are resolved.  Requires the kernel to be
        # integrable in one dimension (Kotz needs a > 1/2).  A monotone C^1
        # interpolant keeps the encoded kernel continuous, so parameter
        # derivatives of cell masses stay consistent with finite
        # differences of the masses themselves.
        from scipy.interpolate import PchipInterpolator

        theta = np.linspace(0.0, np.pi / 2.0 - 1e-7, 65_536)
        scale = 3.0
        u = scale * np.tan(theta)
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            integrand = np.exp(self.log_gen(u * u)) * scale / np.cos(theta) ** 2
        integrand = np.where(np.isfinite(integrand), integrand, 0.0)
        phi = np.concatenate([[0.0], np.cumsum((integrand[1:] + integrand[:-1]) * 0.5 * np.diff(theta))])
        interp = PchipInterpolator(u, phi, extrapolate=False)
        return interp, interp.derivative(), float(u[-1]), float(phi[-1])

    def gen_primitive(self, u) -> np.ndarray:
        """Phi(u) = integral_0^u of the projected kernel c_m g(z^2) dz, odd in u."""
        interp, _, u_max, phi_max = self._primitive_interp
        u = np.asarray(u, dtype=float)
        mag = np.minimum(np.abs(u), u_max)
        return np.sign(u) * np.where(mag >= u_max, phi_max, interp(mag))

    def gen_primitive_slope(self, u) -> np.ndarray:
        """Derivative of the interpolated primitive (the kernel it encodes)."""
        _, deriv, u_max, _ = self._primitive_interp
        mag = np.abs(np.asarray(u, dtype=float))
        return np.where(mag >= u_max, 0.0, deriv(np.minimum(mag, u_max)))

    def sample_r2(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. draws of R^2."""
        raise NotImplementedError

    def mean_r2(self):
        """E[R^2], or None when the second moment does not exist."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Kotz(EllipticalFamily):
    """Kotz type: g(t) ~ t^(a-1) exp(-b t^s); Gaussian at a=1, s=1, b=1/2."""

    a: float = 1.0
    b: float = 0.5
    s: float = 1.0

    name = "kotz"

    def __post_init__(self):
        super().__post_init__()
        if not (self.a > 1.0 - self.m / 2.0 and self.b > 0.0 and self.s > 0.0):
            raise InvalidFamilyError(
                f"Kotz requires a > 1 - m/2, b > 0, s > 0; got a={self.a}, b={self.b}, s={self.s}"
            )

    @cached_property
    def _shape(self) -> float:
        return (2.0 * self.a + self.m - 2.0) / (2.0 * self.s)

    @cached_property
    def _log_const(self) -> float:
        return (
            special.gammaln(self.m / 2.0)
            + math.log(self.s)
            + self._shape * math.log(self.b)
            - special.gammaln(self._shape)
            - (self.m / 2.0) * math.log(math.pi)
        )

    def log_gen(self, t):
        t = _as_t(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.a == 1.0:
                body = -self.b * t**self.s
            else:
                body = (self.a - 1.0) * np.log(t) - self.b * t**self.s
        return self._log_const + body

    def dlog_gen(self, t):
        t = _as_t(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = -self.b * self.s * t ** (self.s - 1.0)
            if self.a == 1.0:
                return np.broadcast_to(tail, t.shape).copy() if np.ndim(tail) else tail * np.ones_like(t)
            return (self.a - 1.0) / t + tail

    def sample_r2(self, rng, n):
        g = rng.gamma(self._shape, scale=1.0 / self.b, size=n)
        return g ** (1.0 / self.s)

    def mean_r2(self):
        k0 = self._shape
        return math.exp(
            special.gammaln(k0 + 1.0 / self.s) - special.gammaln(k0) - math.log(self.b) / self.s
        )

    def params(self):
        return {"a": self.a, "b": self.b, "s": self.s}


@dataclass(frozen=True)
class PearsonVII(EllipticalFamily):
    """Pearson type VII: g(t) ~ (1 + t/v)^(-s).

    Student-t at s=(m+v)/2 with v degrees of freedom, Cauchy at v=1,
    s=(m+1)/2.  R^2 = G*K with G ~ chi^2_m and K inverse-gamma.
    """

    v: float = 1.0
    s: float = 1.0

    name = "pearson7"

    def __post_init__(self):
        super().__post_init__()
        if not (self.v > 0.0 and self.s > self.m / 2.0):
            raise InvalidFamilyError(f"PearsonVII requires v > 0 and s > m/2; got v={self.v}, s={self.s}")

    @cached_property
    def _log_const(self) -> float:
        return (
            -(self.m / 2.0) * math.log(math.pi * self.v)
            + special.gammaln(self.s)
            - special.gammaln(self.s - self.m / 2.0)
        )

    def log_gen(self, t):
        t = _as_t(t)
        return self._log_const - self.s * np.log1p(t / self.v)

    def dlog_gen(self, t):
        t = _as_t(t)
        return -self.s / (self.v + t)

    def sample_r2(self, rng, n):
        g = rng.chisquare(self.m, size=n)
        # K^{-1} ~ Gamma(s - m/2, rate v/2); K is inverse-gamma.
        k = 1.0 / rng.gamma(self.s - self.m / 2.0, scale=2.0 / self.v, size=n)
        return g * k

    def mean_r2(self):
        if self.s <= self.m / 2.0 + 1.0:
            return None
        return self.m * self.v / (2.0 * self.s - self.m - 2.0)

    def params(self):
        return {"v": self.v, "s": self.s}


@dataclass(frozen=True)
class Hyperbolic(EllipticalFamily):
    """Generalized hyperbolic type: normal scale mixture with GIG mixing.

    ``a == 0`` selects the dedicated a->0 limit branch (K-distribution for
    lam > 0; Laplace at lam=1, v=2), avoiding Bessel-ratio cancellation.
    """

    v: float = 2.0
    a: float = 0.0
    lam: float = 1.0

    name = "hyperbolic"

    def __post_init__(self):
        super().__post_init__()
        if self.v <= 0.0 or self.a < 0.0:
            raise InvalidFamilyError(f"Hyperbolic requires v > 0 and a >= 0; got v={self.v}, a={self.a}")
        if self.a == 0.0 and self.lam <= 0.0:
            raise InvalidFamilyError("the a->0 limit branch requires lam > 0")

    @property
    def _nu(self) -> float:
        return self.lam - self.m / 2.0

    @cached_property
    def _log_const(self) -> float:
        if self.a == 0.0:
            return (
                -(self.m / 2.0) * math.log(2.0 * math.pi)
                + (1.0 - self.lam) * math.log(2.0)
                + self.lam * math.log(self.v)
                - special.gammaln(self.lam)
            )
        z0 = math.sqrt(self.a * self.v)
        log_bessel = math.log(special.kve(self.lam, z0)) - z0
        return (
            (self.lam / 2.0) * (math.log(self.v) - math.log(self.a))
            - (self.m / 2.0) * math.log(2.0 * math.pi)
            - log_bessel
        )

    def log_gen(self, t):
        t = _as_t(t)
        nu = self._nu
        shifted = self.a + t
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.sqrt(self.v * shifted)
            body = (nu / 2.0) * (np.log(shifted) - math.log(self.v)) + np.log(special.kve(nu, z)) - z
        if self.a == 0.0:
            # t=0 limit: finite for nu > 0, +inf otherwise.
            at_zero = (
                (nu - 1.0) * math.log(2.0) - nu * math.log(self.v) + special.gammaln(nu)
                if nu > 0.0
                else math.inf
            )
            body = np.where(t == 0.0, at_zero, body)
        return self._log_const + body

    def dlog_gen(self, t):
        t = _as_t(t)
        nu = self._nu
        shifted = self.a + t
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.sqrt(self.v * shifted)
            # K'_nu(z)/K_nu(z) = -(K_{nu-1} + K_{nu+1}) / (2 K_nu); the
            # exponential scalings of kve cancel in the ratio.
            ratio = -(special.kve(nu - 1.0, z) + special.kve(nu + 1.0, z)) / (2.0 * special.kve(nu, z))
            return nu / (2.0 * shifted) + ratio * self.v / (2.0 * z)

    def sample_r2(self, rng, n):
        g = rng.chisquare(self.m, size=n)
        if self.a == 0.0:
            k = rng.gamma(self.lam, scale=2.0 / self.v, size=n)
        else:
            from scipy.stats import geninvgauss

            z0 = math.sqrt(self.a * self.v)
            k = geninvgauss.rvs(self.lam, z0, scale=math.sqrt(self.a / self.v), size=n, random_state=rng)
        return g * k

    def mean_r2(self):
        if self.a == 0.0:
            return self.m * 2.0 * self.lam / self.v
        z0 = math.sqrt(self.a * self.v)
        mean_k = math.sqrt(self.a / self.v) * special.kve(self.lam + 1.0, z0) / special.kve(self.lam, z0)
        return self.m * mean_k

    def params(self):
        return {"v": self.v, "a": self.a, "lam": self.lam}


@dataclass(frozen=True)
class Logistic(EllipticalFamily):
    """Elliptical logistic: g(t) ~ exp(-t) / (1 + exp(-t))^2.

    The normalizer has no closed form for general m and is computed once
    by adaptive quadrature.  R^2 is sampled by numerical inverse-CDF of
    its own density, which keeps sampler and density consistent.
    """

    name = "logistic"

    @staticmethod
    def _kernel(t):
        # exp(-t) / (1+exp(-t))^2, stable for large t.
        return np.exp(-t - 2.0 * np.logaddexp(0.0, -t))

    @cached_property
    def _log_const(self) -> float:
        # Normalize c_m*g so the full density integrates to one:
        # integral of c_m*g(r^2) r^(m-1) dr over [0, inf) must equal
        # Gamma(m/2) / (2 pi^(m/2)).
        j_m, _ = integrate.quad(lambda r: float(self._kernel(r * r)) * r ** (self.m - 1), 0.0, np.inf)
        return special.gammaln(self.m / 2.0) - (self.m / 2.0) * math.log(math.pi) - math.log(2.0 * j_m)

    def log_gen(self, t):
        t = _as_t(t)
        return self._log_const - t - 2.0 * np.logaddexp(0.0, -t)

    def dlog_gen(self, t):
        t = _as_t(t)
        return -np.tanh(t / 2.0)

    @cached_property
    def _radial_cdf(self) -> tuple[np.ndarray, np.ndarray]:
        # Inverse-CDF table for R (not R^2): p_R(r) ~ g(r^2) r^(m-1),
        # smooth at 0 for every m >= 1.  Tail mass beyond r_max ~ exp(-r^2).
        r_max = math.sqrt(50.0 + 10.0 * self.m)
        r = np.linspace(0.0, r_max, 16384)
        pdf = self._kernel(r * r) * r ** (self.m - 1)
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(r))])
        cdf /= cdf[-1]
        return r, cdf

    def sample_r2(self, rng, n):
        r, cdf = self._radial_cdf
        u = rng.random(n)
        return np.interp(u, cdf, r) ** 2

    @cached_property
    def _mean_r2(self) -> float:
        r, cdf = self._radial_cdf
        pdf = np.gradient(cdf, r)
        num = np.trapezoid(r * r * pdf, r)
        return float(num / np.trapezoid(pdf, r))

    def mean_r2(self):
        return self._mean_r2


@dataclass(frozen=True)
class AlphaStable(EllipticalFamily):
    """Elliptically contoured symmetric alpha-stable.

    Only the sampler is available; the generator is known up to an
    unnormalized 1-D stable density, so likelihood evaluation and the
    analytic gradients are unsupported.
    """

    alpha: float = 1.5

    name = "alphastable"
    has_density = False
    has_gradient = False

    def __post_init__(self):
        super().__post_init__()
        if not (0.0 < self.alpha < 2.0):
            raise InvalidFamilyError(f"AlphaStable requires alpha in (0, 2); got {self.alpha}")

    def log_gen(self, t):
        raise DensityUnavailableError("alpha-stable density is defined only up to proportionality")

    def dlog_gen(self, t):
        raise UnsupportedGradientError("alpha-stable has no closed-form generator derivative")

    def sample_r2(self, rng, n):
        g = rng.chisquare(self.m, size=n)
        # K = 2 * S with S standard positive stable of index alpha/2, so the
        # m=1 marginal is standard SaS(alpha) (char. function exp(-|t|^alpha)).
        return g * 2.0 * _positive_stable(self.alpha / 2.0, rng, n)

    def mean_r2(self):
        return None

    def params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class PearsonII(EllipticalFamily):
    """Pearson type II: g(t) ~ (1-t)^(s-1) on t in [0, 1]; R^2 ~ Beta(m/2, s)."""

    s: float = 2.0

    name = "pearson2"

    def __post_init__(self):
        super().__post_init__()
        if not self.s > 1.0:
            raise InvalidFamilyError(f"PearsonII requires s > 1; got s={self.s}")

    @cached_property
    def _log_const(self) -> float:
        return (
            special.gammaln(self.m / 2.0 + self.s)
            - (self.m / 2.0) * math.log(math.pi)
            - special.gammaln(self.s)
        )

    def log_gen(self, t):
        t = _as_t(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            inside = self._log_const + (self.s - 1.0) * np.log1p(-np.minimum(t, 1.0))
        return np.where(t > 1.0, -np.inf, inside)

    def dlog_gen(self, t):
        t = _as_t(t)
        with np.errstate(divide="ignore"):
            return np.where(t < 1.0, -(self.s - 1.0) / (1.0 - t), -np.inf)

    def sample_r2(self, rng, n):
        return rng.beta(self.m / 2.0, self.s, size=n)

    def mean_r2(self):
        return self.m / (self.m + 2.0 * self.s)

    def params(self):
        return {"s": self.s}


def _positive_stable(alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard positive stable draws, Laplace transform exp(-lambda^alpha).

    Chambers-Mallows-Stuck / Kanter construction for alpha in (0, 1).
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidFamilyError("positive stable index must lie in (0, 1)")
    u = rng.uniform(0.0, math.pi, size=n)
    w = rng.standard_exponential(size=n)
    a_u = (np.sin(alpha * u) ** alpha * np.sin((1.0 - alpha) * u) ** (1.0 - alpha) / np.sin(u)) ** (
        1.0 / (1.0 - alpha)
    )
    return (a_u / w) ** ((1.0 - alpha) / alpha)


def gaussian(m: int) -> Kotz:
    """The Gaussian member of the Kotz family."""
    return Kotz(m=m, a=1.0, b=0.5, s=1.0)


def cauchy(m: int) -> PearsonVII:
    """The Cauchy member of the Pearson VII family."""
    return PearsonVII(m=m, v=1.0, s=(m + 1) / 2.0)


def laplace(m: int) -> Hyperbolic:
    """The Laplace member of the hyperbolic family (a->0 branch)."""
    return Hyperbolic(m=m, v=2.0, a=0.0, lam=1.0)


FAMILY_KINDS = {
    "kotz": Kotz,
    "pearson7": PearsonVII,
    "hyperbolic": Hyperbolic,
    "logistic": Logistic,
    "alphastable": AlphaStable,
    "pearson2": PearsonII,
}

_ALIASES = {"gaussian": gaussian, "cauchy": cauchy, "laplace": laplace}


def make_family(name: str, m: int, **params) -> EllipticalFamily:
    """Build a family by its catalogue name (or a named special case)."""
    name = name.lower()
    if name in _ALIASES:
        if params:
            raise InvalidFamilyError(f"{name} takes no parameters")
        return _ALIASES[name](m)
    try:
        cls = FAMILY_KINDS[name]
    except KeyError:
        raise InvalidFamilyError(f"unknown family {name!r}; known: {sorted(FAMILY_KINDS)}") from None
    try:
        return cls(m=m, **params)
    except TypeError as exc:
        raise InvalidFamilyError(str(exc)) from None


@dataclass(frozen=True)
class EllipticalComponent:
    """One elliptical law: location, SPD scatter, shared family."""

    mu: np.ndarray
    sigma: np.ndarray
    family: EllipticalFamily

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", check_spd(self.sigma))
        if self.mu.shape != (self.family.m,) or self.sigma.shape != (self.family.m, self.family.m):
            raise InvalidFamilyError("component shapes do not match the family dimension")

    @cached_property
    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc


# Operation-style wrappers mirroring the module surface.


def log_density_generator(family: EllipticalFamily, t) -> float:
    """log(c_m * g(t)) for scalar t; raises on out-of-support arguments."""
    t = float(t)
    if t < 0:
        raise SupportError("t must be nonnegative")
    if isinstance(family, PearsonII) and t > 1.0:
        raise SupportError("Pearson II support is t in [0, 1]")
    return float(family.log_gen(t))


def density_generator_derivative(family: EllipticalFamily, t) -> float:
    """d/dt of the normalized generator at scalar t."""
    return float(family.gen_deriv(float(t)))


def sample_r_squared(family: EllipticalFamily, rng: np.random.Generator, n: int) -> np.ndarray:
    return family.sample_r2(rng, int(n))


def expected_r_squared(family: EllipticalFamily):
    return family.mean_r2()


def sample(component: EllipticalComponent, rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws of mu + R * L * s, one sample per row."""
    n = int(n)
    m = component.family.m
    if n == 0:
        return np.empty((0, m))
    r = np.sqrt(component.family.sample_r2(rng, n))
    z = rng.standard_normal((n, m))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return component.mu + r[:, None] * (z @ component.chol.T)
