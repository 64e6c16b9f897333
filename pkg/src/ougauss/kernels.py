"""Covariance models for the driving Gaussian noise.

Every shipped model has a mixed partial derivative of the form

    d^2 R / dt ds = C_beta |t - s|^(2 beta - 2) + Psi(t, s),
    |Psi(t, s)| <= C'_beta (t s)^(beta - 1),

with beta in (1/2, 1) and R(0, t) = 0.  ``KernelSpec`` carries the closed
forms of R and Psi together with the constants (beta, C_beta, C'_beta).

Kernel strings follow a small grammar used by the CLI and config files::

    fbm:H=0.6
    subfbm:H=0.6
    bifbm:H=0.9,K=0.7
    gensubfbm:H=0.8,K=1.1
    mix:[0.5*fbm:H=0.6;0.5*subfbm:H=0.7]

A mixture ``w1*A; w2*B`` is the law of ``w1*G_A + w2*G_B`` with independent
components, so covariances combine with squared weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import KernelDomainError, SingularityError, UnsupportedRegimeError

VARIANTS = ("fbm", "subfbm", "bifbm", "gensubfbm", "mix")
_BETA_TIE = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """A covariance model R(t, s) together with its decomposition constants.

    Use the factory functions :func:`fbm`, :func:`subfbm`, :func:`bifbm`,
    :func:`gensubfbm`, :func:`mixture` or :func:`parse_kernel` rather than
    the constructor.
    """

    variant: str
    H: float | None = None
    K: float | None = None
    components: tuple[tuple[float, "KernelSpec"], ...] = field(default=())

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise KernelDomainError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "mix":
            if not self.components:
                raise KernelDomainError("mixture needs at least one component")
            for w, comp in self.components:
                if not (w > 0 and math.isfinite(w)):
                    raise KernelDomainError(f"mixture weight must be positive, got {w}")
                if not isinstance(comp, KernelSpec):
                    raise KernelDomainError("mixture components must be KernelSpec")
            return
        H, K = self.H, self.K
        if H is None or not (0.0 < H < 1.0 or (H == 1.0 and self.variant == "bifbm")):
            raise KernelDomainError(f"{self.variant}: H must lie in (0, 1), got {H}")
        if self.variant in ("bifbm", "gensubfbm"):
            if K is None:
                raise KernelDomainError(f"{self.variant}: parameter K is required")
            if self.variant == "bifbm" and not (0.0 < K <= 1.0):
                raise KernelDomainError(f"bifbm: K must lie in (0, 1], got {K}")
            # Example range is K in [1, 2); K in (0, 1) is accepted as well
            # because the remainder bound below holds for any K < 2.
            if self.variant == "gensubfbm" and not (0.0 < K < 2.0):
                raise KernelDomainError(f"gensubfbm: K must lie in (0, 2), got {K}")
        elif K is not None:
            raise KernelDomainError(f"{self.variant} takes no K parameter")
        b = self.beta
        if not (0.5 < b < 1.0):
            raise KernelDomainError(
                f"{self.variant}: beta = {b:g} must lie in (1/2, 1); beta <= 1/2 is unsupported"
            )

    # -- decomposition constants -------------------------------------------------

    @cached_property
    def beta(self) -> float:
        if self.variant == "mix":
            return min(c.beta for _, c in self.components)
        if self.variant in ("fbm", "subfbm"):
            return float(self.H)
        return float(self.H * self.K)

    @cached_property
    def c_beta(self) -> float:
        """Leading constant of the singular part of the mixed partial."""
        H, K = self.H, self.K
        if self.variant in ("fbm", "subfbm"):
            return H * (2 * H - 1)
        if self.variant == "bifbm":
            return 2.0 ** (1 - K) * H * K * (2 * H * K - 1)
        if self.variant == "gensubfbm":
            return H * K * (2 * H * K - 1)
        # only components sharing the minimal beta are singular at that order
        return sum(w * w * c.c_beta for w, c in self._leading())

    @cached_property
    def c_beta_prime(self) -> float:
        """Bound on the remainder; ``inf`` for mixtures with distinct betas."""
        H, K = self.H, self.K
        if self.variant == "fbm":
            return 0.0
        if self.variant == "subfbm":
            return H * (2 * H - 1)
        if self.variant == "bifbm":
            return K * (2 - K) * H * H
        if self.variant == "gensubfbm":
            b = H * K
            return 2.0**K * H * H * K * abs(K - 1) + 2.0 ** (2 * b - 2) * b * (2 * b - 1)
        if not self.single_beta:
            return math.inf
        return sum(w * w * c.c_beta_prime for w, c in self.components)

    @property
    def single_beta(self) -> bool:
        """True unless this is a mixture whose components have different betas."""
        if self.variant != "mix":
            return True
        return all(c.single_beta for _, c in self.components) and all(
            abs(c.beta - self.beta) <= _BETA_TIE for _, c in self.components
        )

    def _leading(self):
        return [(w, c) for w, c in self.components if abs(c.beta - self.beta) <= _BETA_TIE]

    def __str__(self) -> str:
        if self.variant == "mix":
            inner = ";".join(f"{w!r}*{c}" for w, c in self.components)
            return f"mix:[{inner}]"
        if self.K is None:
            return f"{self.variant}:H={self.H!r}"
        return f"{self.variant}:H={self.H!r},K={self.K!r}"


def fbm(H: float) -> KernelSpec:
    return KernelSpec("fbm", H=float(H))


def subfbm(H: float) -> KernelSpec:
    return KernelSpec("subfbm", H=float(H))


def bifbm(H: float, K: float) -> KernelSpec:
    return KernelSpec("bifbm", H=float(H), K=float(K))


def gensubfbm(H: float, K: float) -> KernelSpec:
    return KernelSpec("gensubfbm", H=float(H), K=float(K))


def mixture(parts) -> KernelSpec:
    """Mixture from an iterable of ``(weight, KernelSpec)`` pairs."""
    return KernelSpec("mix", components=tuple((float(w), c) for w, c in parts))


# -- parsing -----------------------------------------------------------------------

GRAMMAR = (
    "fbm:H=<h> | subfbm:H=<h> | bifbm:H=<h>,K=<k> | gensubfbm:H=<h>,K=<k> | "
    "mix:[<w>*<kernel>;<w>*<kernel>;...]"
)


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise KernelDomainError(f"unbalanced brackets in {text!r}")
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth != 0:
        raise KernelDomainError(f"unbalanced brackets in {text!r}")
    parts.append(text[start:])
    return parts


def parse_kernel(text: str) -> KernelSpec:
    """Parse a kernel string; raises ``KernelDomainError`` naming the grammar."""
    text = text.strip()
    name, sep, rest = text.partition(":")
    name = name.strip().lower()
    if not sep:
        raise KernelDomainError(f"malformed kernel {text!r}; expected {GRAMMAR}")
    if name == "mix":
        rest = rest.strip()
        if not (rest.startswith("[") and rest.endswith("]")):
            raise KernelDomainError(f"malformed mixture {text!r}; expected {GRAMMAR}")
        parts = []
        for item in _split_top(rest[1:-1], ";"):
            w, star, sub = item.partition("*")
            if not star:
                raise KernelDomainError(f"mixture item {item!r} lacks '<w>*'; expected {GRAMMAR}")
            try:
                weight = float(w)
            except ValueError:
                raise KernelDomainError(f"bad mixture weight {w!r}") from None
            parts.append((weight, parse_kernel(sub)))
        return mixture(parts)
    params = {}
    for item in rest.split(","):
        key, eq, val = item.partition("=")
        key = key.strip().upper()
        if not eq or key not in ("H", "K") or key in params:
            raise KernelDomainError(f"malformed parameter {item!r} in {text!r}; expected {GRAMMAR}")
        try:
            params[key] = float(val)
        except ValueError:
            raise KernelDomainError(f"parameter {key} is not a number: {val!r}") from None
    if name in ("fbm", "subfbm"):
        if set(params) != {"H"}:
            raise KernelDomainError(f"{name} takes exactly H; expected {GRAMMAR}")
        return KernelSpec(name, H=params["H"])
    if name in ("bifbm", "gensubfbm"):
        if set(params) != {"H", "K"}:
            raise KernelDomainError(f"{name} takes H and K; expected {GRAMMAR}")
        return KernelSpec(name, H=params["H"], K=params["K"])
    raise KernelDomainError(f"unknown kernel {name!r}; expected {GRAMMAR}")


# -- evaluation --------------------------------------------------------------------


def _as_times(t, s):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise KernelDomainError("covariance is only defined for non-negative times")
    return np.broadcast_arrays(t, s)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _cov(spec: KernelSpec, t, s):
    H, K = spec.H, spec.K
    d = np.abs(t - s)
    if spec.variant == "fbm":
        return 0.5 * (t ** (2 * H) + s ** (2 * H) - d ** (2 * H))
    if spec.variant == "subfbm":
        return t ** (2 * H) + s ** (2 * H) - 0.5 * ((t + s) ** (2 * H) + d ** (2 * H))
    if spec.variant == "bifbm":
        return 2.0 ** (-K) * ((t ** (2 * H) + s ** (2 * H)) ** K - d ** (2 * H * K))
    if spec.variant == "gensubfbm":
        b = H * K
        return (t ** (2 * H) + s ** (2 * H)) ** K - 0.5 * ((t + s) ** (2 * b) + d ** (2 * b))
    return sum(w * w * _cov(c, t, s) for w, c in spec.components)


def cov(spec: KernelSpec, t, s):
    """R(t, s) for non-negative times (broadcasts over arrays)."""
    t, s = _as_times(t, s)
    return _scalar_or_array(_cov(spec, t, s))


def _psi(spec: KernelSpec, t, s):
    H, K = spec.H, spec.K
    if spec.variant == "fbm":
        return np.zeros(np.broadcast(t, s).shape)
    if spec.variant == "subfbm":
        return -H * (2 * H - 1) * (t + s) ** (2 * H - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.variant == "bifbm":
            return (
                2.0 ** (2 - K) * H * H * K * (K - 1)
                * (t * s) ** (2 * H - 1) * (t ** (2 * H) + s ** (2 * H)) ** (K - 2)
            )
        if spec.variant == "gensubfbm":
            b = H * K
            return (
                4 * H * H * K * (K - 1) * (t * s) ** (2 * H - 1) * (t ** (2 * H) + s ** (2 * H)) ** (K - 2)
                - b * (2 * b - 1) * (t + s) ** (2 * b - 2)
            )
    out = 0.0
    beta = spec.beta
    for w, c in spec.components:
        part = _psi(c, t, s)
        if c.beta - beta > _BETA_TIE:
            part = part + c.c_beta * np.abs(t - s) ** (2 * c.beta - 2)
        out = out + w * w * part
    return out


def _check_offdiag(t, s):
    if np.any(t == s):
        raise SingularityError(
            "mixed partial is singular on the diagonal t = s; use cell-integrated "
            "Gram entries (ougauss.hilbert.gram) instead"
        )


def psi(spec: KernelSpec, t, s):
    """Remainder Psi(t, s) of the mixed partial after removing the singular part."""
    t, s = _as_times(t, s)
    _check_offdiag(t, s)
    return _scalar_or_array(_psi(spec, t, s))


def mixed_partial(spec: KernelSpec, t, s):
    """d^2 R / dt ds off the diagonal, as C_beta |t-s|^(2 beta-2) + Psi(t, s)."""
    t, s = _as_times(t, s)
    _check_offdiag(t, s)
    singular = spec.c_beta * np.abs(t - s) ** (2 * spec.beta - 2)
    return _scalar_or_array(singular + _psi(spec, t, s))


# -- hypothesis check --------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisReport:
    kernel: str
    beta: float
    c_beta: float
    c_beta_prime: float
    max_ratio: float
    passed: bool
    components: tuple["HypothesisReport", ...] = ()

    def as_dict(self) -> dict:
        d = {
            "kernel": self.kernel,
            "beta": self.beta,
            "c_beta": self.c_beta,
            "c_beta_prime": self.c_beta_prime,
            "max_ratio": self.max_ratio,
            "passed": self.passed,
        }
        if self.components:
            d["components"] = [c.as_dict() for c in self.components]
        return d


DEFAULT_PROBE = np.linspace(0.01, 10.0, 50)


def hypothesis_report(spec: KernelSpec, probe=DEFAULT_PROBE, eps: float = 1e-9) -> HypothesisReport:
    """Sweep |Psi(t, s)| (ts)^(1-beta) over off-diagonal probe pairs.

    ``probe`` is a 1-D array of positive times; all pairs (t, s) with t != s
    are tested.  For a mixture of components with different betas the
    remainder bound cannot hold near the diagonal, so each component is
    checked separately and the mixture passes when all of them do.
    """
    probe = np.asarray(probe, dtype=float)
    if np.any(probe <= 0):
        raise KernelDomainError("probe points must be strictly positive")
    if not spec.single_beta:
        parts = tuple(hypothesis_report(c, probe, eps) for _, c in spec.components)
        return HypothesisReport(
            str(spec), spec.beta, spec.c_beta, spec.c_beta_prime,
            max(p.max_ratio for p in parts), all(p.passed for p in parts), parts,
        )
    t, s = np.meshgrid(probe, probe, indexing="ij")
    off = t != s
    t, s = t[off], s[off]
    ratio = np.abs(_psi(spec, t, s)) * (t * s) ** (1 - spec.beta)
    max_ratio = float(ratio.max()) if ratio.size else 0.0
    passed = bool(max_ratio <= spec.c_beta_prime * (1 + eps))
    return HypothesisReport(str(spec), spec.beta, spec.c_beta, spec.c_beta_prime, max_ratio, passed)


# -- limit-theorem constants -------------------------------------------------------


def sigma_beta2(beta: float) -> float:
    """Asymptotic variance constant of the LSE (defined for beta in (1/2, 3/4))."""
    if not (0.5 < beta < 0.75):
        raise UnsupportedRegimeError(f"sigma_beta^2 needs beta in (1/2, 3/4), got {beta:g}")
    ratio = gamma_fn(3 - 4 * beta) * gamma_fn(4 * beta - 1) / (gamma_fn(2 * beta) * gamma_fn(2 - 2 * beta))
    return float((4 * beta - 1) * (1 + ratio))


def berry_esseen_exponent(beta: float) -> tuple[float, bool]:
    """Kolmogorov-distance exponent for the LSE and a flag for beta = 5/8.

    At beta = 5/8 the exponent is only "1/2 minus"; 1/2 is returned with the
    flag set.
    """
    if not (0.5 < beta < 0.75):
        raise UnsupportedRegimeError(f"Berry-Esseen exponent needs beta in (1/2, 3/4), got {beta:g}")
    if abs(beta - 0.625) <= 1e-12:
        return 0.5, True
    if beta < 0.625:
        return 0.5, False
    return 3 - 4 * beta, False


def ergodic_limit(spec: KernelSpec, theta: float) -> float:
    """Almost-sure limit of (1/T) int_0^T X_t^2 dt.

    Equals C_beta Gamma(2 beta - 1) theta^(-2 beta) for a single-beta kernel;
    a mixture with distinct betas adds one such term per component.
    """
    if theta <= 0:
        raise KernelDomainError("theta must be positive")
    if spec.single_beta:
        b = spec.beta
        return float(spec.c_beta * gamma_fn(2 * b - 1) * theta ** (-2 * b))
    return sum(w * w * ergodic_limit(c, theta) for w, c in spec.components)


@dataclass(frozen=True)
class ConstantsBundle:
    beta: float
    c_beta: float
    c_beta_prime: float
    theta: float
    a: float
    sigma_beta2: float | None
    gamma: float | None
    gamma_boundary: bool
    sme_exponent: float | None

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "c_beta": self.c_beta,
            "c_beta_prime": self.c_beta_prime,
            "theta": self.theta,
            "a": self.a,
            "sigma_beta2": self.sigma_beta2,
            "gamma": self.gamma,
            "gamma_boundary": self.gamma_boundary,
            "sme_exponent": self.sme_exponent,
        }


def constants(spec: KernelSpec, theta: float) -> ConstantsBundle:
    """sigma_beta^2, the Berry-Esseen exponents and the ergodic limit ``a``.

    Outside beta in (1/2, 3/4), or for mixtures with distinct betas, the
    CLT constants are ``None``; use :func:`sigma_beta2` directly to get the
    ``UnsupportedRegimeError``.
    """
    a = ergodic_limit(spec, theta)
    b = spec.beta
    if spec.single_beta and 0.5 < b < 0.75:
        s2 = sigma_beta2(b)
        g, boundary = berry_esseen_exponent(b)
        sme = (3 - 4 * b) / 2
    else:
        s2, g, boundary, sme = None, None, False, None
    c_prime = spec.c_beta_prime
    return ConstantsBundle(b, spec.c_beta, c_prime, float(theta), a, s2, g, boundary, sme)
