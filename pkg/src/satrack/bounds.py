"""Constants ledger and the explicit mean-square tracking-error bounds.

All bounds are in root-mean-square units, ``E[|.|^2]^(1/2)``, and combine by
the triangle inequality in L2::

    total = D + E + A + (B - C) + C + C_Phi exp(-beta t) |x_0 - lambda(y_0)|

The noise-driven pieces (``K4``, ``K7``, ``K8`` and the ``C`` term) vanish when
the run has no martingale noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

MODEL_FIELDS = ("C_gamma", "K_gamma", "L_lambda", "L_h_tilde", "G_h_tilde", "L_gamma", "L_D")
K_NAMES = tuple(f"K{i}" for i in range(1, 10))


@dataclass(frozen=True)
class ConstantsLedger:
    """Every scalar that enters the bounds, with the provenance of each input."""

    a: float
    eps: float
    eps_star: float
    d: int
    C_Phi: float
    beta: float
    C_star: float
    C_gamma: float
    K_gamma: float
    L_lambda: float
    L_h_tilde: float
    G_h_tilde: float
    L_gamma: float
    L_D: float
    delta: float
    C_M: float
    noise_free: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("a", "eps", "eps_star", "C_Phi", "beta", "C_star", "delta", "C_M") + MODEL_FIELDS:
            v = getattr(self, name)
            if v is None:
                raise ConfigError(f"ledger input {name} is missing")
            if not (v >= 0) or not math.isfinite(v):
                raise ConfigError(f"ledger input {name} must be finite and nonnegative, got {v}")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not self.noise_free and (self.delta <= 0 or self.C_M <= 0):
            raise ConfigError("delta and C_M must be positive when noise is present")

    @property
    def mu(self):
        return 1.0 / self.beta

    @property
    def gamma1(self):
        return self.C_Phi / self.beta

    @property
    def K1(self):
        return self.G_h_tilde * (1.0 + self.C_gamma) + self.eps_star

    @property
    def K2(self):
        return self.C_Phi * self.L_h_tilde

    @property
    def K3(self):
        return self.K1 + self.K_gamma * self.a * self.eps

    @property
    def K4(self):
        if self.noise_free:
            return 0.0
        return math.sqrt(2.0 * self.C_M) / self.delta

    @property
    def K5(self):
        return self.C_Phi ** 3 * self.L_D / (2.0 * self.beta)

    @property
    def K6(self):
        return (0.5 + self.C_Phi) * self.C_Phi ** 2 * self.K_gamma * self.L_D * self.eps / self.beta

    @property
    def K7(self):
        if self.noise_free:
            return 0.0
        return math.sqrt(24.0 * self.C_M) / self.delta ** 2

    @property
    def K8(self):
        if self.noise_free:
            return 0.0
        return self.C_star * (24.0 * self.C_M) ** 0.25 / self.delta

    @property
    def K9(self):
        if self.noise_free:
            return 0.0
        return self.C_M * self.gamma1 * self.d ** 1.5 / self.delta

    def constants(self):
        out = {k: v for k, v in asdict(self).items() if k != "provenance"}
        out["mu"] = self.mu
        out["gamma1"] = self.gamma1
        for k in K_NAMES:
            out[k] = getattr(self, k)
        return out

    def table_forms(self):
        """Symbol-table variants of the K constants, for comparison only.

        Entries whose table form uses an undefined symbol are reported as None.
        """
        C, dl = self.C_M, self.delta
        return {
            "K1": None,  # uses an undefined growth constant C_h
            "K3": self.K1 + self.L_gamma * self.a * self.eps,
            "K4": max(2 * C / dl ** 2, C * C / dl ** 2),
            "K5": None,  # uses an undefined constant K
            "K6": self.C_Phi ** 3 * self.L_gamma * self.L_D * self.eps,
            "K7": max(24 * C * dl ** 4, 4 * C * C * dl ** 4),
            "K8": None,  # uses C_h
        }

    def replace(self, **kw):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kw)
        return ConstantsLedger(**data)


def build_ledger(model_constants, stability, noise, cfg, C_star, eps_star=0.0, d=None,
                 provenance=None):
    """Assemble a ledger.

    Parameters
    ----------
    model_constants : ModelConstants
    stability : StabilityEstimate
    noise : tuple (delta, C_M) or None
        ``None`` marks a noise-free run.
    cfg : SimConfig
    C_star : float
        Uniform moment bound of the iterates.
    eps_star : float
        Bound on the additive perturbations.
    d : int, optional
        Defaults to the length of ``cfg.x0``, or 1.
    provenance : dict, optional
        ``name -> 'supplied' | 'estimated' | 'calibrated'`` for the inputs.
    """
    if stability is None:
        raise ConfigError("ledger input stability (C_Phi, beta) is missing")
    if stability.beta <= 0:
        raise ConfigError("beta must be positive")
    mc = model_constants.as_dict()
    for name in MODEL_FIELDS:
        if mc.get(name) is None:
            raise ConfigError(f"ledger input {name} is missing")
    if C_star is None:
        raise ConfigError("ledger input C_star is missing")
    noise_free = noise is None
    delta, C_M = (1.0, 0.0) if noise_free else (float(noise[0]), float(noise[1]))
    if d is None:
        d = len(cfg.x0) if cfg.x0 is not None else 1
    prov = {"a": "supplied", "eps": "supplied", "eps_star": "supplied", "d": "supplied",
            "C_Phi": "estimated", "beta": "estimated", "C_star": "estimated",
            "delta": "calibrated", "C_M": "calibrated"}
    prov.update({n: "estimated" for n in MODEL_FIELDS})
    prov.update(provenance or {})
    return ConstantsLedger(
        a=cfg.a, eps=cfg.eps, eps_star=float(eps_star), d=int(d),
        C_Phi=stability.C_Phi, beta=stability.beta, C_star=float(C_star),
        delta=delta, C_M=C_M, noise_free=noise_free, provenance=prov,
        **{n: float(mc[n]) for n in MODEL_FIELDS},
    )


# ---------------------------------------------------------------------------
# individual bounds


def bound_Dn(L):
    """Additive perturbation term: ``C_Phi eps_star / beta``."""
    return L.C_Phi * L.eps_star / L.beta


def bound_En(L):
    """Target drift term: ``K_gamma L_lambda C_Phi eps / beta``."""
    return L.K_gamma * L.L_lambda * L.C_Phi * L.eps / L.beta


def bound_An(L):
    """Discretisation term: ``a K2 (K3 mu + K4 mu + G_h_tilde C* a mu)``."""
    mu = L.mu
    return L.a * L.K2 * (L.K3 * mu + L.K4 * mu + L.G_h_tilde * L.C_star * L.a * mu)


def bound_BnCn(L):
    """Anchor-change term: ``K5 a (K1 K4 + K7 + G_h_tilde K8) mu + a^2 K6 K8 mu``."""
    mu = L.mu
    return L.K5 * L.a * (L.K1 * L.K4 + L.K7 + L.G_h_tilde * L.K8) * mu + L.a ** 2 * L.K6 * L.K8 * mu


def bound_Cn(L, c_conc):
    """Martingale term from the concentration inequality with constant ``c_conc``.

    ``sqrt((2 d^5 / c) a + (4 d^5 a / c^2) (a d^1.5 / (c sqrt(K9))) (a + c sqrt(K9) / d^1.5))``
    """
    if L.noise_free:
        return 0.0
    c = float(c_conc)
    if not c > 0:
        raise ConfigError("concentration constant c must be positive")
    d, a = float(L.d), L.a
    r9 = math.sqrt(L.K9)
    first = (2.0 * d ** 5 / c) * a
    second = (4.0 * d ** 5 * a / c ** 2) * (a * d ** 1.5 / (c * r9)) * (a + c * r9 / d ** 1.5)
    return math.sqrt(first + second)


def initial_term(L, t, init_gap):
    return L.C_Phi * np.exp(-L.beta * np.asarray(t, dtype=float)) * init_gap


TERM_NAMES = ("D", "E", "A", "BminusC", "C", "rho")


@dataclass
class BoundReport:
    """Per-term bounds at time ``t_n``; the ``rho`` term is the only time-dependent one."""

    ledger: ConstantsLedger
    c_conc: float
    t_n: float
    init_gap: float
    terms: dict
    empirical: float = float("nan")

    @property
    def total(self):
        return float(sum(self.terms.values()))

    @property
    def steady(self):
        return float(sum(v for k, v in self.terms.items() if k != "rho"))

    @property
    def margin(self):
        return self.total - self.empirical

    def total_at(self, t):
        return self.steady + initial_term(self.ledger, t, self.init_gap)

    def text(self):
        L = self.ledger
        lines = ["constants:"]
        for name, v in L.constants().items():
            src = L.provenance.get(name, "derived")
            lines.append(f"  {name:<10} = {float(v):.6g}  ({src})")
        lines.append(f"  {'c':<10} = {self.c_conc:.6g}  (calibrated)")
        lines.append("symbol-table variants (not used):")
        for name, v in L.table_forms().items():
            lines.append(f"  {name:<10} = {'n/a' if v is None else f'{v:.6g}'}")
        lines.append(f"bound terms at t_n = {self.t_n:g}:")
        for name in TERM_NAMES:
            lines.append(f"  {name:<10} = {self.terms[name]:.6g}")
        lines.append(f"  {'total':<10} = {self.total:.6g}")
        if math.isfinite(self.empirical):
            lines.append(f"  {'empirical':<10} = {self.empirical:.6g}")
            lines.append(f"  {'margin':<10} = {self.margin:.6g}")
        return "\n".join(lines)

    def csv(self):
        header = ["t_n", *TERM_NAMES, "total", "empirical", "margin"]
        row = [self.t_n, *(self.terms[k] for k in TERM_NAMES), self.total, self.empirical, self.margin]
        return header, [row]


def main_bound(L, c_conc, t_n, init_gap, empirical=float("nan")):
    """All-time bound on ``E[|x_n - z(t_n)|^2]^(1/2)``."""
    if t_n < 0:
        raise ConfigError("t_n must be >= 0")
    terms = {
        "D": bound_Dn(L),
        "E": bound_En(L),
        "A": bound_An(L),
        "BminusC": bound_BnCn(L),
        "C": bound_Cn(L, c_conc),
        "rho": float(initial_term(L, t_n, init_gap)),
    }
    return BoundReport(L, float(c_conc), float(t_n), float(init_gap), terms, float(empirical))


@dataclass(frozen=True)
class Verdict:
    passed: bool
    worst_margin: float
    worst_index: int


def compare_empirical(report, t, rms):
    """Pass iff ``report.total_at(t_k) >= rms_k`` at every recorded step."""
    t = np.asarray(t, dtype=float)
    rms = np.asarray(rms, dtype=float)
    margins = report.total_at(t) - rms
    i = int(np.argmin(margins))
    return Verdict(bool(np.all(margins >= 0)), float(margins[i]), i)
