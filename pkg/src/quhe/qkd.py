"""Quantum-network side of the model.

Links carry an entanglement-generation coefficient ``beta`` (pairs/s); routes
are ordered link lists delivering keys to one client each. The link-route
membership matrix ``A`` has shape ``(L, N)`` with ``A[l, n] = 1`` iff link
``l`` belongs to route ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Largest Werner parameter at which the secret key fraction is still zero.
SKF_THRESHOLD = 0.779944


class QKDDomainError(ValueError):
    """Raised when a Werner parameter or rate lies outside its domain."""


class LinkOverloadError(QKDDomainError):
    """Raised when the aggregate route rate on a link reaches its beta."""

    def __init__(self, link_id, load, beta):
        self.link_id = link_id
        self.load = load
        self.beta = beta
        super().__init__(
            f"link {link_id}: aggregate rate {load:.6g} >= beta {beta:.6g}"
        )


@dataclass(frozen=True)
class Link:
    id: int
    beta: float
    length_km: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"link {self.id}: beta must be positive, got {self.beta}")
        if self.length_km is not None and not self.length_km > 0:
            raise ValueError(f"link {self.id}: length must be positive")


@dataclass(frozen=True)
class Route:
    id: int
    links: tuple
    end_nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(int(l) for l in self.links))
        object.__setattr__(self, "end_nodes", tuple(self.end_nodes))
        if not self.links:
            raise ValueError(f"route {self.id}: links must be non-empty")


@dataclass(frozen=True)
class Topology:
    links: tuple
    routes: tuple
    A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "routes", tuple(self.routes))
        if not self.links:
            raise ValueError("topology needs at least one link")
        if not self.routes:
            raise ValueError("topology needs at least one route")
        ids = [lk.id for lk in self.links]
        if len(set(ids)) != len(ids):
            raise ValueError("link ids must be unique")
        rids = [r.id for r in self.routes]
        if len(set(rids)) != len(rids):
            raise ValueError("route ids must be unique")
        pos = {lid: i for i, lid in enumerate(ids)}
        A = np.zeros((len(ids), len(self.routes)))
        for n, route in enumerate(self.routes):
            for lid in route.links:
                if lid not in pos:
                    raise ValueError(f"route {route.id} references unknown link {lid}")
                A[pos[lid], n] = 1.0
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def L(self) -> int:
        return len(self.links)

    @property
    def N(self) -> int:
        return len(self.routes)

    @property
    def beta(self) -> np.ndarray:
        return np.array([lk.beta for lk in self.links])

    def link_index(self, link_id) -> int:
        for i, lk in enumerate(self.links):
            if lk.id == link_id:
                return i
        raise KeyError(f"unknown link id {link_id}")

    def route_index(self, route_id) -> int:
        for i, r in enumerate(self.routes):
            if r.id == route_id:
                return i
        raise KeyError(f"unknown route id {route_id}")

    def with_beta(self, link_id, beta) -> "Topology":
        """Copy of the topology with one link's beta replaced."""
        links = [
            Link(lk.id, beta, lk.length_km) if lk.id == link_id else lk
            for lk in self.links
        ]
        return Topology(links, self.routes)


def _check_werner(w, lo_open=True):
    w = np.asarray(w, dtype=float)
    bad = (w <= 0) | (w > 1) if lo_open else (w < 0) | (w > 1)
    if np.any(bad) or np.any(~np.isfinite(w)):
        rng = "(0, 1]" if lo_open else "[0, 1]"
        raise QKDDomainError(f"Werner parameter outside {rng}: {w[bad | ~np.isfinite(w)]}")
    return w


def link_capacity(beta, w):
    """Rate a link can sustain at Werner parameter ``w``: ``beta * (1 - w)``."""
    w = _check_werner(w)
    return np.asarray(beta, dtype=float) * (1.0 - w)


def skf_unclamped(w):
    """Secret key fraction before clamping at zero (may be negative).

    The ``(1 - w) log2((1 - w) / 2)`` term is taken as its limit 0 at ``w = 1``.
    """
    w = np.asarray(w, dtype=float)
    one_minus = 1.0 - w
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(one_minus > 0, one_minus * np.log2(np.where(one_minus > 0, one_minus, 1.0) / 2), 0.0)
    return 1.0 + (1.0 + w) * np.log2((1.0 + w) / 2.0) + tail


def secret_key_fraction(w):
    """Secret key fraction ``F_skf(w)`` in [0, 1] for ``w`` in [0, 1]."""
    w = _check_werner(w, lo_open=False)
    out = np.maximum(0.0, skf_unclamped(w))
    return float(out) if out.ndim == 0 else out


def skf_derivative(w):
    """d F_skf / dw on the unclamped branch: ``log2((1 + w) / (1 - w))``."""
    w = np.asarray(w, dtype=float)
    return np.log2((1.0 + w) / (1.0 - w))


def skf_threshold_bisection(lo=0.7, hi=0.8, tol=1e-9):
    """Locate the root of the unclamped secret key fraction by bisection."""
    flo = skf_unclamped(lo)
    if flo * skf_unclamped(hi) > 0:
        raise ValueError("bracket does not contain a sign change")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = skf_unclamped(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def end_to_end_werner(topology: Topology, w, route_id=None):
    """Route Werner parameters, ``prod_l w_l ** a_ln``.

    With ``route_id`` given, returns that route's scalar; otherwise the vector
    over all routes.
    """
    w = _check_werner(w)
    if w.shape != (topology.L,):
        raise ValueError(f"expected {topology.L} Werner parameters, got {w.shape}")
    if route_id is None:
        return np.exp(topology.A.T @ np.log(w))
    try:
        n = topology.route_index(route_id)
    except KeyError as exc:
        raise KeyError(f"unknown route id {route_id}") from exc
    return float(np.exp(topology.A[:, n] @ np.log(w)))


def qkd_utility(topology: Topology, phi, w) -> float:
    """Network utility ``prod_n phi_n * F_skf(varpi_n)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (topology.N,):
        raise ValueError(f"expected {topology.N} route rates, got {phi.shape}")
    if np.any(phi <= 0):
        raise QKDDomainError("route rates must be positive")
    varpi = end_to_end_werner(topology, w)
    return float(np.prod(phi * secret_key_fraction(np.minimum(varpi, 1.0))))


def link_loads(topology: Topology, phi) -> np.ndarray:
    """Aggregate route rate carried by each link, ``A @ phi``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (topology.N,):
        raise ValueError(f"expected {topology.N} route rates, got {phi.shape}")
    return topology.A @ phi


def optimal_werner_from_rates(topology: Topology, phi) -> np.ndarray:
    """Largest Werner parameters compatible with the link capacities.

    ``w_l = 1 - load_l / beta_l``; links that no route uses get exactly 1.
    """
    load = link_loads(topology, phi)
    beta = topology.beta
    over = np.flatnonzero(load >= beta)
    if over.size:
        i = over[0]
        raise LinkOverloadError(topology.links[i].id, load[i], beta[i])
    return 1.0 - load / beta
