"""Run configuration: JSON schema, validation, and typed accessors.

A configuration fully describes one experiment: the market data, the
communication graph, the gain selection, solver settings, and output
destinations. Field names carry units (kWh throughout). Line sensitivities
or graph data that did not come from published sources belong under the
``non_paper_data`` key, which the loader merges into the effective market
and graph while keeping the provenance visible in the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError
from .graphs import CommGraph, build_graph
from .market import AggregatorParams, MarketInstance, TransmissionLine
from .tuning import GainSet

_SOLVER_DEFAULTS = {
    "tol": 1e-8,
    "max_iter": 100000,
    "record_stride": 1,
    "seed": None,
    "init": "zeros",
}
_OUTPUT_DEFAULTS = {"directory": "gneflex-out", "trajectory": True}

_AGENT_KEYS = {"a_per_kwh2", "b_per_kwh", "e_kwh", "xhat_kwh"}
_GAIN_KEYS = {"kappa", "tau", "upsilon", "rho", "delta", "eta"}


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _require(obj: dict, path: str, required, optional=()):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        _fail(path, f"unknown key(s): {', '.join(sorted(unknown))}")
    for key in required:
        if key not in obj:
            _fail(path, f"missing required key '{key}'")


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        _fail(path, f"expected a number, got {obj!r}")
    return float(obj)


def _integer(obj, path: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        _fail(path, f"expected an integer, got {obj!r}")
    return int(obj)


def _number_list(obj, path: str, length: int | None = None) -> list:
    if not isinstance(obj, list):
        _fail(path, f"expected a list of numbers, got {obj!r}")
    values = [_number(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if length is not None and len(values) != length:
        _fail(path, f"expected {length} entries, got {len(values)}")
    return values


def _validate_lines(lines, path: str, n_agents: int) -> list:
    if not isinstance(lines, list):
        _fail(path, "expected a list of lines")
    out = []
    for i, line in enumerate(lines):
        lp = f"{path}[{i}]"
        _require(line, lp, required=("pi_row", "fhat_kwh"))
        row = _number_list(line["pi_row"], f"{lp}.pi_row", length=n_agents)
        fhat = _number(line["fhat_kwh"], f"{lp}.fhat_kwh")
        if fhat < 0:
            _fail(f"{lp}.fhat_kwh", f"line capacity must be >= 0, got {fhat}")
        out.append({"pi_row": row, "fhat_kwh": fhat})
    return out


def _validate_graph(graph, path: str, n_agents: int) -> dict:
    _require(graph, path, required=("edges",))
    if not isinstance(graph["edges"], list) or not graph["edges"]:
        _fail(f"{path}.edges", "expected a nonempty list of edges")
    edges = []
    for i, edge in enumerate(graph["edges"]):
        ep = f"{path}.edges[{i}]"
        if not isinstance(edge, dict):
            _fail(ep, "expected an object with 'nodes' and 'weight'")
        if "nodes" not in edge:
            _fail(ep, "missing 'nodes'")
        nodes = edge["nodes"]
        if (
            not isinstance(nodes, list)
            or len(nodes) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) for v in nodes)
        ):
            _fail(f"{ep}.nodes", "expected a pair of 1-based agent ids")
        if "weight" not in edge:
            _fail(ep, f"edge {nodes} is missing its 'weight'")
        _require(edge, ep, required=("nodes", "weight"))
        weight = _number(edge["weight"], f"{ep}.weight")
        if weight <= 0:
            _fail(f"{ep}.weight", f"edge {nodes} must have a positive weight, got {weight}")
        for v in nodes:
            if not 1 <= v <= n_agents:
                _fail(f"{ep}.nodes", f"agent id {v} outside 1..{n_agents}")
        edges.append({"nodes": [int(nodes[0]), int(nodes[1])], "weight": weight})
    return {"edges": edges}


def _validate_gains(gains, path: str, n_agents: int):
    if gains == "auto":
        return "auto"
    _require(gains, path, required=_GAIN_KEYS)
    out = {"kappa": _number(gains["kappa"], f"{path}.kappa")}
    if out["kappa"] <= 0:
        _fail(f"{path}.kappa", "mixing parameter must be positive")
    for key in sorted(_GAIN_KEYS - {"kappa"}):
        value = gains[key]
        kp = f"{path}.{key}"
        if isinstance(value, list):
            vec = _number_list(value, kp, length=n_agents)
        else:
            vec = [_number(value, kp)] * n_agents
        if any(v <= 0 for v in vec):
            _fail(kp, "step sizes must be positive")
        out[key] = vec
    return out


def validate_config(raw: dict) -> dict:
    """Validate a raw configuration dict and fill in defaults.

    Returns the normalized dict; raises ConfigError naming the offending
    field on any violation. Also constructs the market instance and graph
    once so their own invariants (connectivity, parameter signs) surface
    at load time.
    """
    _require(
        raw, "config",
        required=("market",),
        optional=("graph", "gains", "solver", "outputs", "non_paper_data"),
    )

    market = raw["market"]
    _require(
        market, "market",
        required=("r_kwh", "alpha", "beta_min_kwh", "beta_max_kwh", "agents"),
        optional=("lines",),
    )
    if not isinstance(market["agents"], list) or len(market["agents"]) < 2:
        _fail("market.agents", "expected a list of at least two agents")
    agents = []
    for i, agent in enumerate(market["agents"]):
        ap = f"market.agents[{i}]"
        _require(agent, ap, required=_AGENT_KEYS)
        agents.append({key: _number(agent[key], f"{ap}.{key}") for key in sorted(_AGENT_KEYS)})
    n_agents = len(agents)

    norm_market = {
        "r_kwh": _number(market["r_kwh"], "market.r_kwh"),
        "alpha": _number(market["alpha"], "market.alpha"),
        "beta_min_kwh": _number(market["beta_min_kwh"], "market.beta_min_kwh"),
        "beta_max_kwh": _number(market["beta_max_kwh"], "market.beta_max_kwh"),
        "agents": agents,
    }

    non_paper = raw.get("non_paper_data")
    norm_non_paper = None
    if non_paper is not None:
        _require(non_paper, "non_paper_data", required=(), optional=("note", "lines", "graph"))
        norm_non_paper = {}
        if "note" in non_paper:
            if not isinstance(non_paper["note"], str):
                _fail("non_paper_data.note", "expected a string")
            norm_non_paper["note"] = non_paper["note"]

    if "lines" in market and non_paper and "lines" in non_paper:
        _fail("non_paper_data.lines", "lines are already given under market.lines")
    if "lines" in market:
        norm_market["lines"] = _validate_lines(market["lines"], "market.lines", n_agents)
    if non_paper and "lines" in non_paper:
        norm_non_paper["lines"] = _validate_lines(
            non_paper["lines"], "non_paper_data.lines", n_agents
        )

    has_graph = "graph" in raw
    has_np_graph = bool(non_paper and "graph" in non_paper)
    if has_graph and has_np_graph:
        _fail("non_paper_data.graph", "a graph is already given at the top level")
    if not has_graph and not has_np_graph:
        _fail("config", "missing communication graph (graph or non_paper_data.graph)")
    norm = {"market": norm_market}
    if has_graph:
        norm["graph"] = _validate_graph(raw["graph"], "graph", n_agents)
    if norm_non_paper is not None:
        if has_np_graph:
            norm_non_paper["graph"] = _validate_graph(
                non_paper["graph"], "non_paper_data.graph", n_agents
            )
        norm["non_paper_data"] = norm_non_paper

    norm["gains"] = _validate_gains(raw.get("gains", "auto"), "gains", n_agents)

    solver = dict(_SOLVER_DEFAULTS)
    user_solver = raw.get("solver", {})
    _require(user_solver, "solver", required=(), optional=tuple(_SOLVER_DEFAULTS))
    for key, value in user_solver.items():
        kp = f"solver.{key}"
        if key == "tol":
            solver[key] = _number(value, kp)
            if solver[key] <= 0:
                _fail(kp, "tolerance must be positive")
        elif key in ("max_iter", "record_stride"):
            solver[key] = _integer(value, kp)
            if solver[key] < 0 or (key == "max_iter" and solver[key] == 0):
                _fail(kp, "must be positive" if key == "max_iter" else "must be >= 0")
        elif key == "seed":
            solver[key] = None if value is None else _integer(value, kp)
        elif key == "init":
            if value not in ("zeros", "random"):
                _fail(kp, f"expected 'zeros' or 'random', got {value!r}")
            solver[key] = value
    norm["solver"] = solver

    outputs = dict(_OUTPUT_DEFAULTS)
    user_outputs = raw.get("outputs", {})
    _require(user_outputs, "outputs", required=(), optional=tuple(_OUTPUT_DEFAULTS))
    if "directory" in user_outputs:
        if not isinstance(user_outputs["directory"], str):
            _fail("outputs.directory", "expected a string")
        outputs["directory"] = user_outputs["directory"]
    if "trajectory" in user_outputs:
        if not isinstance(user_outputs["trajectory"], bool):
            _fail("outputs.trajectory", "expected true or false")
        outputs["trajectory"] = user_outputs["trajectory"]
    norm["outputs"] = outputs

    cfg = RunConfig(raw=norm)
    cfg.instance()  # surfaces market invariant violations with context
    cfg.graph()  # surfaces disconnected graphs at load time
    return norm


@dataclass
class RunConfig:
    """Validated configuration with typed accessors.

    Two configurations compare equal when their normalized contents agree,
    regardless of where they were loaded from.
    """

    raw: dict
    source: str | None = field(default=None, compare=False)

    def instance(self) -> MarketInstance:
        market = self.raw["market"]
        lines_raw = market.get("lines")
        if lines_raw is None:
            lines_raw = self.raw.get("non_paper_data", {}).get("lines", [])
        try:
            return MarketInstance(
                r=market["r_kwh"],
                alpha=market["alpha"],
                beta_min=market["beta_min_kwh"],
                beta_max=market["beta_max_kwh"],
                agents=tuple(
                    AggregatorParams(
                        a=agent["a_per_kwh2"],
                        b=agent["b_per_kwh"],
                        e=agent["e_kwh"],
                        xhat=agent["xhat_kwh"],
                    )
                    for agent in market["agents"]
                ),
                lines=tuple(
                    TransmissionLine(pi_row=np.array(line["pi_row"]), fhat=line["fhat_kwh"])
                    for line in lines_raw
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"market: {exc}") from exc

    def graph(self) -> CommGraph:
        graph_raw = self.raw.get("graph")
        if graph_raw is None:
            graph_raw = self.raw["non_paper_data"]["graph"]
        edges = [
            (edge["nodes"][0] - 1, edge["nodes"][1] - 1, edge["weight"])
            for edge in graph_raw["edges"]
        ]
        return build_graph(len(self.raw["market"]["agents"]), edges)

    def gains_mode(self):
        """Either the string 'auto' or an explicit GainSet."""
        gains = self.raw["gains"]
        if gains == "auto":
            return "auto"
        return GainSet(
            kappa=gains["kappa"],
            tau=np.array(gains["tau"]),
            upsilon=np.array(gains["upsilon"]),
            rho=np.array(gains["rho"]),
            delta=np.array(gains["delta"]),
            eta=np.array(gains["eta"]),
        )

    @property
    def solver(self) -> dict:
        return self.raw["solver"]

    @property
    def outputs(self) -> dict:
        return self.raw["outputs"]

    def hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, **solver_overrides) -> "RunConfig":
        """New configuration with selected solver settings replaced."""
        raw = json.loads(json.dumps(self.raw))
        for key, value in solver_overrides.items():
            if value is not None:
                raw["solver"][key] = value
        return RunConfig(raw=validate_config(raw), source=self.source)


def load_config(path) -> RunConfig:
    """Load and validate a configuration file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    return RunConfig(raw=validate_config(raw), source=str(path))


def write_config(cfg: RunConfig, path) -> None:
    """Write the normalized configuration as stable, sorted JSON."""
    with open(path, "w") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


def packaged_config_names() -> tuple:
    root = resources.files("gneflex").joinpath("configs")
    return tuple(sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json")))


def load_packaged(name: str) -> RunConfig:
    """Load one of the configurations shipped with the package."""
    short = name[: -len(".json")] if name.endswith(".json") else name
    ref = resources.files("gneflex").joinpath(f"configs/{short}.json")
    if not ref.is_file():
        raise ConfigError(
            f"unknown packaged configuration {name!r}; available: "
            + ", ".join(packaged_config_names())
        )
    raw = json.loads(ref.read_text())
    return RunConfig(raw=validate_config(raw), source=f"packaged:{short}")


def resolve_config(spec: str) -> RunConfig:
    """Load a configuration from a path, falling back to packaged names."""
    import os

    if os.path.exists(spec):
        return load_config(spec)
    try:
        return load_packaged(spec)
    except ConfigError:
        raise ConfigError(
            f"configuration {spec!r} is neither a file nor a packaged name "
            f"({', '.join(packaged_config_names())})"
        ) from None
