"""
Road-network navigation as a combinatorial semi-bandit.

Single responsibility: the network file model, per-edge travel-time generation with a
closed-form expectation, Dijkstra shortest paths, the path oracle used for super-arm
selection, the navigation environment step, and a synthetic grid generator.

Edges are base arms; an edge id is its index in ``RoadNetwork.edges``.
"""

import heapq
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Mapping, Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from tree_core import FeatureMatrix, FeatureSchema, FeatureVector

logger = logging.getLogger(__name__)

# Smallest Dijkstra weight; scores map to max(EPSILON, -score) seconds.
WEIGHT_EPSILON = 1e-6

EDGE_CONTEXT_FIELDS = (
    "start_x",
    "start_y",
    "start_z",
    "end_x",
    "end_y",
    "end_z",
    "distance_x",
    "distance_y",
    "distance_z",
    "speed_limit",
    "time_of_day",
    "stop",
)
TIME_OF_DAY_INDEX = 10
EDGE_CONTEXT_SCHEMA = FeatureSchema(numeric_count=11, categorical_cardinalities=(2,))

RoadClass = Literal["highway", "arterial", "residential"]


class NoPathError(ValueError):
    """Destination is unreachable from the origin."""


@dataclass(frozen=True)
class CongestionPeak:
    """Gaussian bump of the congestion multiplier centred at ``hour`` (circular in 24 h)."""

    hour: float
    amplitude: float
    width: float


# Rush hours; amplitudes are scaled per road class below.
RUSH_HOURS = (CongestionPeak(8.0, 0.8, 1.5), CongestionPeak(17.5, 1.0, 2.0))
CLASS_CONGESTION = {"highway": 1.0, "arterial": 0.7, "residential": 0.3}
CLASS_SPEED = {"highway": 90.0, "arterial": 60.0, "residential": 30.0}
CLASS_NOISE = {"highway": 0.1, "arterial": 0.2, "residential": 0.3}
CLASS_STOP_PROBABILITY = {"highway": 0.0, "arterial": 0.15, "residential": 0.3}


class Vertex(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: int
    x: float
    y: float
    z: float = 0.0


class Edge(BaseModel):
    """Directed road segment with its travel-time model parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: int = Field(..., ge=0)
    source: int
    target: int
    speed_limit: float = Field(..., gt=0.0, description="Speed limit in km/h.")
    stop: bool = Field(default=False, description="A stop sign or light at the end of the segment.")
    length: float = Field(..., gt=0.0, description="Segment length in metres.")
    noise_sigma: float = Field(default=0.2, ge=0.0, description="Log-scale deviation of the travel-time noise.")
    road_class: RoadClass = "residential"
    has_traffic_model: bool = Field(default=True, description="Apply the time-of-day congestion multiplier.")
    stop_penalty_mean: float = Field(default=15.0, ge=0.0, description="Mean extra seconds when stop is set.")

    @property
    def base_time(self) -> float:
        """Free-flow seconds: length / speed."""
        return self.length / (self.speed_limit / 3.6)


class ProblemInstance(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    origin: int
    destination: int


def congestion_multiplier(edge: Edge, time_of_day: float) -> float:
    if not edge.has_traffic_model:
        return 1.0
    scale = CLASS_CONGESTION[edge.road_class]
    total = 1.0
    for peak in RUSH_HOURS:
        d = abs(time_of_day - peak.hour) % 24.0
        d = min(d, 24.0 - d)
        total += scale * peak.amplitude * math.exp(-0.5 * (d / peak.width) ** 2)
    return total


def expected_travel_time(edge: Edge, time_of_day: float) -> float:
    """Closed form: base · multiplier (unit-mean lognormal noise) plus the mean stop penalty."""
    penalty = edge.stop_penalty_mean if edge.stop else 0.0
    return edge.base_time * congestion_multiplier(edge, time_of_day) + penalty


class RoadNetwork(BaseModel):
    """Vertices, directed edges, and named origin/destination pairs."""

    model_config = ConfigDict(extra="forbid")

    vertices: list[Vertex]
    edges: list[Edge]
    problem_instances: list[ProblemInstance] = Field(default_factory=list)

    _out_edges: dict[int, list[int]] = PrivateAttr(default_factory=dict)
    _static: np.ndarray = PrivateAttr(default=None)

    @model_validator(mode="after")
    def check_topology(self) -> "RoadNetwork":
        ids = {v.id for v in self.vertices}
        if len(ids) != len(self.vertices):
            raise ValueError("vertex ids must be unique")
        for i, e in enumerate(self.edges):
            if e.id != i:
                raise ValueError(f"edge ids must be dense and ordered: position {i} has id {e.id}")
            if e.source not in ids or e.target not in ids:
                raise ValueError(f"edge {e.id} references an unknown vertex")
        graph = self.to_networkx()
        for inst in self.problem_instances:
            if inst.origin not in ids or inst.destination not in ids:
                raise ValueError(f"problem instance {inst.name!r} references an unknown vertex")
            if not nx.has_path(graph, inst.origin, inst.destination):
                raise ValueError(f"problem instance {inst.name!r}: destination unreachable")
        return self

    def model_post_init(self, __context: object) -> None:
        out: dict[int, list[int]] = {v.id: [] for v in self.vertices}
        for e in self.edges:
            out[e.source].append(e.id)
        self._out_edges = out
        pos = {v.id: v for v in self.vertices}
        rows = []
        for e in self.edges:
            a, b = pos[e.source], pos[e.target]
            rows.append([a.x, a.y, a.z, b.x, b.y, b.z, abs(b.x - a.x), abs(b.y - a.y), abs(b.z - a.z), e.speed_limit])
        self._static = np.asarray(rows, dtype=np.float64).reshape(len(self.edges), 10)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def out_edges(self, vertex: int) -> list[int]:
        return self._out_edges.get(vertex, [])

    def instance(self, name: str) -> ProblemInstance:
        for inst in self.problem_instances:
            if inst.name == name:
                return inst
        raise ValueError(f"unknown problem instance {name!r}")

    def to_networkx(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph()
        graph.add_nodes_from(v.id for v in self.vertices)
        for e in self.edges:
            graph.add_edge(e.source, e.target, key=e.id)
        return graph

    def context_matrix(self, time_of_day: float) -> FeatureMatrix:
        """Edge contexts: endpoint coordinates, per-axis distances, speed limit, time of day, stop flag."""
        if not 0.0 <= time_of_day < 24.0:
            raise ValueError(f"time of day must lie in [0, 24), got {time_of_day}")
        numeric = np.column_stack([self._static, np.full(self.n_edges, time_of_day)])
        categorical = np.asarray([[int(e.stop)] for e in self.edges], dtype=np.int64).reshape(self.n_edges, 1)
        return FeatureMatrix(numeric, categorical, EDGE_CONTEXT_SCHEMA)

    def edge_contexts(self, time_of_day: float) -> list[FeatureVector]:
        matrix = self.context_matrix(time_of_day)
        return [matrix.row(i) for i in range(self.n_edges)]

    def expected_times(self, time_of_day: float) -> np.ndarray:
        return np.asarray([expected_travel_time(e, time_of_day) for e in self.edges])

    @classmethod
    def load(cls, path: Path) -> "RoadNetwork":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sample_travel_time(net: RoadNetwork, edge_id: int, time_of_day: float, rng: np.random.Generator) -> float:
    """One positive travel-time draw in seconds."""
    edge = net.edges[edge_id]
    value = edge.base_time * congestion_multiplier(edge, time_of_day)
    sigma = edge.noise_sigma
    if sigma > 0.0:
        value *= math.exp(sigma * rng.standard_normal() - 0.5 * sigma * sigma)
    if edge.stop and edge.stop_penalty_mean > 0.0:
        value += rng.exponential(edge.stop_penalty_mean)
    return float(value)


def shortest_path(net: RoadNetwork, edge_weights: Sequence[float], origin: int, dest: int) -> list[int]:
    """Dijkstra over edge ids; equal-cost paths resolve to the lexicographically smallest edge sequence."""
    weights = np.asarray(edge_weights, dtype=np.float64)
    if weights.shape != (net.n_edges,):
        raise ValueError(f"expected {net.n_edges} edge weights, got {weights.shape}")
    if np.any(weights < 0.0):
        raise ValueError("negative weight: Dijkstra requires non-negative edge weights")
    if not np.all(np.isfinite(weights)):
        raise ValueError("edge weights must be finite")
    heap: list[tuple[float, tuple[int, ...], int]] = [(0.0, (), origin)]
    best: dict[int, tuple[float, tuple[int, ...]]] = {origin: (0.0, ())}
    settled: set[int] = set()
    while heap:
        cost, path, vertex = heapq.heappop(heap)
        if vertex in settled:
            continue
        settled.add(vertex)
        if vertex == dest:
            return list(path)
        for edge_id in net.out_edges(vertex):
            nxt = net.edges[edge_id].target
            if nxt in settled:
                continue
            candidate = (cost + float(weights[edge_id]), path + (edge_id,))
            if nxt not in best or candidate < best[nxt]:
                best[nxt] = candidate
                heapq.heappush(heap, (candidate[0], candidate[1], nxt))
    raise NoPathError(f"no path from {origin} to {dest}")


def path_is_feasible(net: RoadNetwork, path: Sequence[int], origin: int, dest: int) -> bool:
    if not path:
        return origin == dest
    at = origin
    for edge_id in path:
        if not 0 <= edge_id < net.n_edges or net.edges[edge_id].source != at:
            return False
        at = net.edges[edge_id].target
    return at == dest


class ShortestPathOracle:
    """Super-arm oracle: the path maximizing summed edge scores, via Dijkstra on max(ε, −score)."""

    def __init__(self, net: RoadNetwork, origin: int, destination: int) -> None:
        self.net = net
        self.origin = origin
        self.destination = destination

    def solve(self, scores: Mapping[int, float]) -> list[int]:
        weights = np.full(self.net.n_edges, WEIGHT_EPSILON)
        for edge_id, score in scores.items():
            weights[edge_id] = max(WEIGHT_EPSILON, -score)
        return shortest_path(self.net, weights, self.origin, self.destination)

    def sample(self, rng: np.random.Generator) -> list[int]:
        """A random feasible path (shortest under uniform random weights)."""
        return shortest_path(self.net, rng.random(self.net.n_edges), self.origin, self.destination)


@dataclass(frozen=True)
class NavigationFeedback:
    """Semi-bandit feedback for one round: sampled seconds per traversed edge, and the regret."""

    travel_times: list[tuple[int, float]]
    regret: float
    optimal_path: list[int]


def nav_env_step(
    net: RoadNetwork,
    path: Sequence[int],
    origin: int,
    destination: int,
    time_of_day: float,
    rng: np.random.Generator,
) -> NavigationFeedback:
    """Sample every traversed edge and charge expected(chosen) − expected(optimal) seconds."""
    if not path_is_feasible(net, path, origin, destination):
        raise ValueError(f"infeasible path from {origin} to {destination}: {list(path)}")
    expected = net.expected_times(time_of_day)
    optimal = shortest_path(net, expected, origin, destination)
    regret = float(expected[list(path)].sum() - expected[optimal].sum())
    times = [(int(e), sample_travel_time(net, int(e), time_of_day, rng)) for e in path]
    return NavigationFeedback(travel_times=times, regret=regret, optimal_path=optimal)


class NavigationEnv:
    """One origin/destination instance; the time of day is drawn uniformly each round."""

    def __init__(self, net: RoadNetwork, instance: str, seed: int) -> None:
        self.net = net
        inst = net.instance(instance)
        self.origin = inst.origin
        self.destination = inst.destination
        self.oracle = ShortestPathOracle(net, self.origin, self.destination)
        self.rng = np.random.default_rng(seed)
        self.time_of_day = 0.0
        self.rounds = 0

    @property
    def n_arms(self) -> int:
        return self.net.n_edges

    def begin_round(self) -> list[FeatureVector]:
        self.time_of_day = float(self.rng.uniform(0.0, 24.0))
        self.rounds += 1
        return self.net.edge_contexts(self.time_of_day)

    def step(self, path: Sequence[int]) -> NavigationFeedback:
        return nav_env_step(self.net, path, self.origin, self.destination, self.time_of_day, self.rng)

    def state(self) -> dict[str, Any]:
        return {"rounds": self.rounds, "time_of_day": self.time_of_day, "rng_state": self.rng.bit_generator.state}

    def restore(self, state: Mapping[str, Any]) -> None:
        self.rounds = int(state["rounds"])
        self.time_of_day = float(state["time_of_day"])
        self.rng.bit_generator.state = state["rng_state"]

    def expected_rewards(self, contexts: Sequence[FeatureVector]) -> np.ndarray:
        """Negative expected travel time of each edge at the time of day carried by its context."""
        return np.asarray(
            [-expected_travel_time(self.net.edges[i], float(x.numeric[TIME_OF_DAY_INDEX])) for i, x in enumerate(contexts)]
        )


def generate_grid_network(rows: int = 10, cols: int = 12, spacing: float = 250.0, seed: int = 0) -> RoadNetwork:
    """Jittered grid with highway, arterial and residential roads and two corner-to-corner instances."""
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    rng = np.random.default_rng(seed)
    grid = nx.grid_2d_graph(rows, cols)
    vertex_id = {(r, c): r * cols + c for (r, c) in grid.nodes}
    vertices = []
    for (r, c), vid in sorted(vertex_id.items(), key=lambda kv: kv[1]):
        jitter = rng.uniform(-0.2, 0.2, size=2) * spacing
        vertices.append(Vertex(id=vid, x=c * spacing + jitter[0], y=r * spacing + jitter[1], z=float(rng.uniform(0.0, 30.0))))
    pos = {v.id: v for v in vertices}

    def road_class(a: tuple[int, int], b: tuple[int, int]) -> RoadClass:
        line = a[0] if a[0] == b[0] else None
        col = a[1] if a[1] == b[1] else None
        if line == rows // 2 or col == cols // 2:
            return "highway"
        if (line is not None and line % 3 == 0) or (col is not None and col % 3 == 0):
            return "arterial"
        return "residential"

    edges = []
    for a, b in sorted(grid.edges):
        cls = road_class(a, b)
        for u, v in ((a, b), (b, a)):
            su, sv = pos[vertex_id[u]], pos[vertex_id[v]]
            length = math.dist((su.x, su.y, su.z), (sv.x, sv.y, sv.z))
            edges.append(
                Edge(
                    id=len(edges),
                    source=su.id,
                    target=sv.id,
                    speed_limit=CLASS_SPEED[cls],
                    stop=bool(rng.random() < CLASS_STOP_PROBABILITY[cls]),
                    length=length,
                    noise_sigma=CLASS_NOISE[cls],
                    road_class=cls,
                    has_traffic_model=bool(rng.random() < 0.8),
                )
            )
    last = rows * cols - 1
    instances = [
        ProblemInstance(name="diagonal", origin=0, destination=last),
        ProblemInstance(name="anti-diagonal", origin=cols - 1, destination=last - (cols - 1)),
    ]
    net = RoadNetwork(vertices=vertices, edges=edges, problem_instances=instances)
    logger.info("Generated grid network: rows=%s cols=%s vertices=%s edges=%s", rows, cols, len(vertices), len(edges))
    return net
