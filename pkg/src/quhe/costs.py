"""Client, radio and server cost model.

All quantities are SI: cycles, Hz, W, s, J, bits. The lambda-dependent
fitted functions (security bits, server cycle counts) are only trusted on
the fitted range ``[2**15, 2**17]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LAMBDA_MIN = 2**15
LAMBDA_MAX = 2**17
LN2 = np.log(2.0)


def dbm_per_hz_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


#: Thermal noise floor, -174 dBm/Hz in W/Hz.
DEFAULT_NOISE_PSD = dbm_per_hz_to_watts(-174.0)


class CostDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ClientProfile:
    id: int
    se_cycles: float
    tr_bits: float
    cmp_tokens: float
    tokens_per_sample: float
    kappa_c: float
    p_max: float
    f_max: float
    phi_min: float
    sigma: float

    def __post_init__(self):
        for name in ("se_cycles", "tr_bits", "cmp_tokens", "tokens_per_sample",
                     "kappa_c", "p_max", "f_max", "phi_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"client {self.id}: {name} must be positive")
        if not self.sigma >= 0:
            raise ValueError(f"client {self.id}: sigma must be non-negative")


@dataclass(frozen=True)
class ServerProfile:
    kappa_s: float
    f_total: float
    b_total: float
    noise_psd: float = DEFAULT_NOISE_PSD

    def __post_init__(self):
        for name in ("kappa_s", "f_total", "b_total", "noise_psd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"server: {name} must be positive")


@dataclass(frozen=True)
class FheParamSet:
    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("lambda set must be non-empty")
        if any(v <= 0 for v in vals):
            raise ValueError("lambda values must be positive integers")
        if list(vals) != sorted(vals):
            raise ValueError("lambda set must be sorted ascending")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __contains__(self, item):
        return int(item) in self.values


@dataclass(frozen=True)
class CostBreakdown:
    t_enc: np.ndarray
    t_tr: np.ndarray
    t_cmp: np.ndarray
    e_enc: np.ndarray
    e_tr: np.ndarray
    e_cmp: np.ndarray

    @property
    def delays(self) -> np.ndarray:
        """Per-client delay sums."""
        return self.t_enc + self.t_tr + self.t_cmp

    @property
    def energies(self) -> np.ndarray:
        return self.e_enc + self.e_tr + self.e_cmp

    @property
    def t_total(self) -> float:
        return float(np.max(self.delays))

    @property
    def e_total(self) -> float:
        return float(np.sum(self.energies))

    def as_dict(self) -> dict:
        out = {k: getattr(self, k).tolist()
               for k in ("t_enc", "t_tr", "t_cmp", "e_enc", "e_tr", "e_cmp")}
        out["t_total"] = self.t_total
        out["e_total"] = self.e_total
        return out


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < LAMBDA_MIN) or np.any(lam > LAMBDA_MAX):
        raise CostDomainError(
            f"polynomial degree outside fitted range [{LAMBDA_MIN}, {LAMBDA_MAX}]: {lam}"
        )
    return lam


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def msl_bits(lam):
    """Minimum security level in bits for polynomial degree ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise CostDomainError("polynomial degree must be positive")
    return _scalar(0.002 * lam + 1.4789)


def eval_cycles(lam):
    """Server transciphering cycles per sample."""
    lam = _check_lambda(lam)
    return _scalar(0.012 * (lam + 64500.0) ** 2)


def cmp_cycles(lam):
    """Server homomorphic computation cycles per sample."""
    lam = _check_lambda(lam)
    return _scalar(8917959.4 * lam - 51292440000.0)


def server_cycles(lam):
    return _scalar(np.asarray(cmp_cycles(lam)) + np.asarray(eval_cycles(lam)))


def security_utility(clients: Sequence[ClientProfile], lam) -> float:
    """Privacy-weighted security level ``sum_n sigma_n msl(lam_n)``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(clients),):
        raise ValueError(f"expected {len(clients)} degrees, got {lam.shape}")
    sigma = np.array([c.sigma for c in clients])
    return float(sigma @ np.asarray(msl_bits(lam)))


def uplink_rate(b, p, g, noise_psd):
    """Shannon rate ``b log2(1 + p g / (N0 b))`` in bit/s."""
    b, p, g = (np.asarray(x, dtype=float) for x in (b, p, g))
    if np.any(b <= 0) or np.any(p <= 0) or np.any(g <= 0) or not noise_psd > 0:
        raise CostDomainError("uplink_rate needs strictly positive inputs")
    return _scalar(b * np.log1p(p * g / (noise_psd * b)) / LN2)


def encryption_cost(client: ClientProfile, f_c):
    if not np.all(np.asarray(f_c) > 0):
        raise CostDomainError("client CPU frequency must be positive")
    t = client.se_cycles / f_c
    e = client.kappa_c * client.se_cycles * f_c**2
    return t, e


def transmission_cost(client: ClientProfile, rate, p):
    if not np.all(np.asarray(rate) > 0):
        raise CostDomainError("transmission rate must be positive")
    t = client.tr_bits / rate
    return t, p * t


def computation_cost(client: ClientProfile, lam, f_s, kappa_s):
    if not np.all(np.asarray(f_s) > 0):
        raise CostDomainError("server CPU share must be positive")
    work = server_cycles(lam) * client.cmp_tokens / client.tokens_per_sample
    return work / f_s, kappa_s * work * f_s**2


def aggregate(t_enc, t_tr, t_cmp, e_enc, e_tr, e_cmp) -> CostBreakdown:
    parts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in
             (t_enc, t_tr, t_cmp, e_enc, e_tr, e_cmp)]
    n = parts[0].shape
    if n == (0,):
        raise ValueError("aggregate needs at least one client")
    if any(p.shape != n for p in parts):
        raise ValueError("per-client cost arrays have inconsistent shapes")
    if any(np.any(p < 0) for p in parts):
        raise ValueError("costs must be non-negative")
    return CostBreakdown(*parts)


def cost_breakdown(clients, server: ServerProfile, gains, lam, p, b, f_c, f_s) -> CostBreakdown:
    """Evaluate every per-client delay and energy term."""
    cols = {
        k: np.array([getattr(c, k) for c in clients], dtype=float)
        for k in ("se_cycles", "tr_bits", "cmp_tokens", "tokens_per_sample", "kappa_c")
    }
    lam = np.asarray(lam, dtype=float)
    r = np.atleast_1d(uplink_rate(b, p, gains, server.noise_psd))
    f_c = np.asarray(f_c, dtype=float)
    f_s = np.asarray(f_s, dtype=float)
    t_enc = cols["se_cycles"] / f_c
    e_enc = cols["kappa_c"] * cols["se_cycles"] * f_c**2
    t_tr = cols["tr_bits"] / r
    e_tr = np.asarray(p, dtype=float) * t_tr
    work = np.atleast_1d(server_cycles(lam)) * cols["cmp_tokens"] / cols["tokens_per_sample"]
    t_cmp = work / f_s
    e_cmp = server.kappa_s * work * f_s**2
    return aggregate(t_enc, t_tr, t_cmp, e_enc, e_tr, e_cmp)
