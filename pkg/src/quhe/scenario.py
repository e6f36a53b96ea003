"""Scenario documents, the bundled SURFnet instance, and channel realization.

A scenario document is YAML with exactly the top-level sections ``links``,
``routes``, ``clients``, ``server``, ``weights``, ``channel`` and ``solver``.
Unknown keys anywhere are rejected. See ``docs/scenario-format.md``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml

from .costs import (LAMBDA_MAX, LAMBDA_MIN, ClientProfile, FheParamSet, ServerProfile,
                    dbm_per_hz_to_watts)
from .objective import ObjectiveWeights
from .qkd import Link, Route, Topology
from .settings import SolveSettings


class ScenarioError(ValueError):
    """Parse or validation failure, located by a field path or line."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ChannelModel:
    pl_intercept_db: float = 128.1
    pl_slope_db: float = 37.6
    radius_m: float = 1000.0
    rayleigh: bool = True

    def __post_init__(self):
        if not self.pl_slope_db > 0:
            raise ValueError("path-loss slope must be positive")
        if not self.radius_m > 0:
            raise ValueError("cell radius must be positive")


def path_loss_gain(distance_km, channel: ChannelModel = ChannelModel()):
    """Large-scale power gain ``10 ** (-PL / 10)`` with PL in dB, distance in km."""
    pl = channel.pl_intercept_db + channel.pl_slope_db * np.log10(distance_km)
    return 10.0 ** (-pl / 10.0)


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    clients: tuple
    server: ServerProfile
    lambda_set: FheParamSet
    weights: ObjectiveWeights
    channel: ChannelModel = ChannelModel()
    settings: SolveSettings = SolveSettings()
    explicit_gains: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(self.clients))
        if len(self.clients) != self.topology.N:
            raise ValueError(
                f"{len(self.clients)} clients but {self.topology.N} routes")
        for c, r in zip(self.clients, self.topology.routes):
            if c.id != r.id:
                raise ValueError(f"client id {c.id} does not match route id {r.id}")
        if self.explicit_gains is not None:
            g = tuple(float(x) for x in self.explicit_gains)
            if len(g) != self.N or any(not x > 0 for x in g):
                raise ValueError("explicit gains must be N positive values")
            object.__setattr__(self, "explicit_gains", g)

    @property
    def N(self) -> int:
        return self.topology.N

    @property
    def seed(self) -> int:
        return self.settings.seed

    @cached_property
    def gains(self) -> np.ndarray:
        if self.explicit_gains is not None:
            g = np.array(self.explicit_gains)
        else:
            g = realize_channels(self, self.seed)
        g.setflags(write=False)
        return g

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_seed(self, seed: int) -> "Scenario":
        return self.replace(settings=dataclasses.replace(self.settings, seed=int(seed)))

    def with_settings(self, **changes) -> "Scenario":
        return self.replace(settings=dataclasses.replace(self.settings, **changes))

    def with_clients(self, **changes) -> "Scenario":
        """Apply the same field overrides to every client."""
        return self.replace(clients=tuple(dataclasses.replace(c, **changes) for c in self.clients))

    def with_server(self, **changes) -> "Scenario":
        return self.replace(server=dataclasses.replace(self.server, **changes))

    def array(self, name: str) -> np.ndarray:
        """Per-client field as an array, e.g. ``scenario.array("p_max")``."""
        return np.array([getattr(c, name) for c in self.clients], dtype=float)


def realize_channels(scenario: Scenario, seed) -> np.ndarray:
    """Per-client channel gains: uniform distance, log-distance path loss, Rayleigh fading.

    Distances are uniform on ``(0, radius]``; the fading power ``|h|^2`` is
    unit-mean exponential. The same seed always yields the same gains.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64))
    ch = scenario.channel
    n = scenario.N
    dist_m = ch.radius_m * (1.0 - rng.random(n))
    h2 = rng.exponential(1.0, n) if ch.rayleigh else np.ones(n)
    return path_loss_gain(dist_m / 1000.0, ch) * h2


# --- document schema -------------------------------------------------------

_NUM = (int, float)

_LINK_KEYS = {"id": (int, True), "beta": (_NUM, True), "length_km": (_NUM, False)}
_ROUTE_KEYS = {"id": (int, True), "links": (list, True), "end_nodes": (list, False)}
_CLIENT_KEYS = {
    "id": (int, True), "se_cycles": (_NUM, True), "tr_bits": (_NUM, True),
    "cmp_tokens": (_NUM, True), "tokens_per_sample": (_NUM, True),
    "kappa_c": (_NUM, True), "p_max": (_NUM, True), "f_max": (_NUM, True),
    "phi_min": (_NUM, True), "sigma": (_NUM, True),
}
_SERVER_KEYS = {
    "kappa_s": (_NUM, True), "f_total": (_NUM, True), "b_total": (_NUM, True),
    "noise_psd_dbm_hz": (_NUM, False), "lambda_set": (list, True),
}
_WEIGHT_KEYS = {k: (_NUM, True) for k in ("alpha_qkd", "alpha_msl", "alpha_t", "alpha_e")}
_CHANNEL_KEYS = {
    "pl_intercept_db": (_NUM, False), "pl_slope_db": (_NUM, False),
    "radius_m": (_NUM, False), "rayleigh": (bool, False), "gains": (list, False),
}
_SOLVER_KEYS = {
    "seed": (int, False), "epsilon": (_NUM, False), "max_outer_iters": (int, False),
    "stage3_max_iters": (int, False), "inner_tol": (_NUM, False),
}
_SECTIONS = ("links", "routes", "clients", "server", "weights", "channel", "solver")
_DEFAULT_NOISE_DBM = -174.0


def _check_mapping(obj, keys, where):
    if not isinstance(obj, dict):
        raise ScenarioError(where, "expected a mapping")
    for k in obj:
        if k not in keys:
            raise ScenarioError(f"{where}.{k}", "unknown key")
    for k, (typ, required) in keys.items():
        if k not in obj:
            if required:
                raise ScenarioError(f"{where}.{k}", "missing")
            continue
        v = obj[k]
        if typ == _NUM or typ is int:
            ok = isinstance(v, typ) and not isinstance(v, bool)
        else:
            ok = isinstance(v, typ)
        if not ok:
            raise ScenarioError(f"{where}.{k}", f"expected {_typename(typ)}, got {v!r}")
    return obj


def _typename(typ):
    if typ == _NUM:
        return "number"
    return typ.__name__


def _check_list(doc, key) -> list:
    if key not in doc:
        raise ScenarioError(key, "missing section")
    val = doc[key]
    if not isinstance(val, list) or not val:
        raise ScenarioError(key, "expected a non-empty list")
    return val


def _build(where, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(where, str(exc)) from None


def scenario_from_dict(doc) -> Scenario:
    """Validate a parsed document and build the Scenario."""
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "expected a mapping of sections")
    for k in doc:
        if k not in _SECTIONS:
            raise ScenarioError(k, "unknown section")

    links = []
    for i, item in enumerate(_check_list(doc, "links")):
        where = f"links[{i}]"
        _check_mapping(item, _LINK_KEYS, where)
        links.append(_build(where, Link, item["id"], float(item["beta"]),
                            None if item.get("length_km") is None else float(item["length_km"])))
    link_ids = {lk.id for lk in links}

    routes = []
    for i, item in enumerate(_check_list(doc, "routes")):
        where = f"routes[{i}]"
        _check_mapping(item, _ROUTE_KEYS, where)
        if not item["links"]:
            raise ScenarioError(f"{where}.links", "must be non-empty")
        for j, lid in enumerate(item["links"]):
            if not isinstance(lid, int) or isinstance(lid, bool):
                raise ScenarioError(f"{where}.links[{j}]", f"expected int, got {lid!r}")
            if lid not in link_ids:
                raise ScenarioError(f"{where}.links[{j}]", f"unknown link id {lid}")
        routes.append(_build(where, Route, item["id"], item["links"],
                             tuple(str(x) for x in item.get("end_nodes", ()))))
    topology = _build("routes", Topology, links, routes)

    clients = []
    for i, item in enumerate(_check_list(doc, "clients")):
        where = f"clients[{i}]"
        _check_mapping(item, _CLIENT_KEYS, where)
        kw = {k: (item[k] if k == "id" else float(item[k])) for k in _CLIENT_KEYS}
        clients.append(_build(where, ClientProfile, **kw))
    if len(clients) != len(routes):
        raise ScenarioError("clients", f"{len(clients)} clients but {len(routes)} routes")
    for i, (c, r) in enumerate(zip(clients, routes)):
        if c.id != r.id:
            raise ScenarioError(f"clients[{i}].id", f"{c.id} does not match route id {r.id}")

    if "server" not in doc:
        raise ScenarioError("server", "missing section")
    srv = _check_mapping(doc["server"], _SERVER_KEYS, "server")
    noise = dbm_per_hz_to_watts(float(srv.get("noise_psd_dbm_hz", _DEFAULT_NOISE_DBM)))
    server = _build("server", ServerProfile, float(srv["kappa_s"]), float(srv["f_total"]),
                    float(srv["b_total"]), noise)
    for j, v in enumerate(srv["lambda_set"]):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ScenarioError(f"server.lambda_set[{j}]", f"expected int, got {v!r}")
        if not LAMBDA_MIN <= v <= LAMBDA_MAX:
            raise ScenarioError(f"server.lambda_set[{j}]",
                                f"{v} outside the fitted range [{LAMBDA_MIN}, {LAMBDA_MAX}]")
    lambda_set = _build("server.lambda_set", FheParamSet, tuple(srv["lambda_set"]))

    if "weights" not in doc:
        raise ScenarioError("weights", "missing section")
    wd = _check_mapping(doc["weights"], _WEIGHT_KEYS, "weights")
    weights = _build("weights", ObjectiveWeights, **{k: float(wd[k]) for k in _WEIGHT_KEYS})

    cd = _check_mapping(doc.get("channel", {}), _CHANNEL_KEYS, "channel")
    ch_kw = {k: (bool(cd[k]) if k == "rayleigh" else float(cd[k]))
             for k in cd if k != "gains"}
    channel = _build("channel", ChannelModel, **ch_kw)
    gains = None
    if "gains" in cd:
        for j, g in enumerate(cd["gains"]):
            if not isinstance(g, _NUM) or isinstance(g, bool) or not g > 0:
                raise ScenarioError(f"channel.gains[{j}]", f"expected positive number, got {g!r}")
        gains = tuple(float(g) for g in cd["gains"])

    sd = _check_mapping(doc.get("solver", {}), _SOLVER_KEYS, "solver")
    sol_kw = {k: (float(v) if k in ("epsilon", "inner_tol") else v) for k, v in sd.items()}
    settings = _build("solver", SolveSettings, **sol_kw)

    return _build("<root>", Scenario, topology, clients, server, lambda_set,
                  weights, channel, settings, gains)


def parse_scenario(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "<document>"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(where, f"parse error: {problem}") from None
    return scenario_from_dict(doc)


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Load a scenario from a path, or from document text if it spans lines."""
    if isinstance(source, str) and "\n" in source:
        return parse_scenario(source)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read: {exc.strerror}") from None
    return parse_scenario(text)


def _noise_dbm(watts: float) -> float:
    """dBm/Hz value that converts back to exactly ``watts``; short if possible."""
    x = float(10.0 * np.log10(watts) + 30.0)
    cands = [round(x, 10), x]
    for direction in (np.inf, -np.inf):
        y = x
        for _ in range(8):
            y = float(np.nextafter(y, direction))
            cands.append(y)
    for c in cands:
        if dbm_per_hz_to_watts(c) == watts:
            return c
    raise ValueError(f"noise density {watts!r} has no exact dBm/Hz representation")


def scenario_to_dict(s: Scenario) -> dict:
    doc = {
        "links": [
            {"id": lk.id, "beta": lk.beta, **({"length_km": lk.length_km} if lk.length_km is not None else {})}
            for lk in s.topology.links
        ],
        "routes": [
            {"id": r.id, "links": list(r.links), **({"end_nodes": list(r.end_nodes)} if r.end_nodes else {})}
            for r in s.topology.routes
        ],
        "clients": [dataclasses.asdict(c) for c in s.clients],
        "server": {
            "kappa_s": s.server.kappa_s,
            "f_total": s.server.f_total,
            "b_total": s.server.b_total,
            "noise_psd_dbm_hz": _noise_dbm(s.server.noise_psd),
            "lambda_set": list(s.lambda_set.values),
        },
        "weights": dataclasses.asdict(s.weights),
        "channel": dataclasses.asdict(s.channel),
        "solver": s.settings.as_dict(),
    }
    if s.explicit_gains is not None:
        doc["channel"]["gains"] = list(s.explicit_gains)
    return doc


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


SURFNET_RESOURCE = "surfnet.yaml"


def surfnet_text() -> str:
    return resources.files("quhe.data").joinpath(SURFNET_RESOURCE).read_text(encoding="utf-8")


def surfnet_default() -> Scenario:
    """The six-route, eighteen-link SURFnet instance with the reference parameters."""
    return parse_scenario(surfnet_text())
