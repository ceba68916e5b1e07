"""DC power flow on a double-busbar substation grid, with topology actions.

Substations are graph nodes and lines are edges. Every element (line end,
generator, load) at a substation sits on busbar 1 or 2; splitting a substation
across both busbars changes the electrical graph and hence the line flows.
Quantities are per unit on a 100 MVA base.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import TransitionDataset, make_schema
from .mi import MiMatrix


class GridError(ValueError):
    pass


class TopologyError(GridError):
    """An assignment that would island part of the grid or leave a dead-end busbar."""


@dataclass(frozen=True)
class Line:
    id: int
    from_sub: int
    to_sub: int
    susceptance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    id: int
    sub: int
    p_min: float
    p_max: float
    p_nominal: float


@dataclass(frozen=True)
class Load:
    id: int
    sub: int
    p_nominal: float


# element kinds as they appear in a substation's element list
LINE_FROM, LINE_TO, GEN, LOAD = "line_from", "line_to", "gen", "load"


@dataclass(frozen=True)
class GridModel:
    n_sub: int
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    name: str = "grid"

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        for kind, items in (("line", self.lines), ("generator", self.generators),
                            ("load", self.loads)):
            if [x.id for x in items] != list(range(len(items))):
                raise GridError(f"{kind} ids must be 0..{len(items) - 1} in order")
        for ln in self.lines:
            if not (0 <= ln.from_sub < self.n_sub and 0 <= ln.to_sub < self.n_sub):
                raise GridError(f"line {ln.id} references an unknown substation")
            if ln.from_sub == ln.to_sub:
                raise GridError(f"line {ln.id} connects substation {ln.from_sub} to itself")
            if not (ln.susceptance > 0 and ln.limit > 0):
                raise GridError(f"line {ln.id} needs positive susceptance and thermal limit")
        for el in self.generators + self.loads:
            if not 0 <= el.sub < self.n_sub:
                raise GridError(f"element {el} references an unknown substation")
        if not self.generators:
            raise GridError("grid needs at least one generator")
        if not is_valid_topology(self, reference_topology(self)):
            raise GridError("grid is not connected in the reference topology")

    @cached_property
    def substations(self) -> tuple[tuple[tuple[str, int], ...], ...]:
        """Per substation, its elements as ``(kind, id)`` in a fixed order."""
        subs = [[] for _ in range(self.n_sub)]
        for ln in self.lines:
            subs[ln.from_sub].append((LINE_FROM, ln.id))
            subs[ln.to_sub].append((LINE_TO, ln.id))
        for g in self.generators:
            subs[g.sub].append((GEN, g.id))
        for ld in self.loads:
            subs[ld.sub].append((LOAD, ld.id))
        return tuple(tuple(s) for s in subs)

    @property
    def buses(self) -> list[tuple[int, int]]:
        """``(bus id, substation id)`` for both busbars of every substation."""
        return [(2 * s + b, s) for s in range(self.n_sub) for b in range(2)]

    @property
    def slack_generator(self) -> int:
        return max(self.generators, key=lambda g: (g.p_max, -g.id)).id

    @property
    def slack_sub(self) -> int:
        return self.generators[self.slack_generator].sub

    def n_elements(self, sub: int) -> int:
        return len(self.substations[sub])

    def qualifying_substations(self, min_elements: int = 4) -> list[int]:
        """Substations with more than 3 connected elements."""
        return [s for s in range(self.n_sub) if self.n_elements(s) >= min_elements]


# -- topology ------------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    """Busbar (1 or 2) of every element, per substation, in canonical form."""

    buses: tuple[tuple[int, ...], ...]

    def at(self, sub: int) -> tuple[int, ...]:
        return self.buses[sub]


def reference_topology(model: GridModel) -> Topology:
    return Topology(tuple((1,) * len(els) for els in model.substations))


def canonical_assignment(assignment: Sequence[int]) -> tuple[int, ...]:
    """Relabel busbars so the first element is on busbar 1."""
    a = tuple(int(b) for b in assignment)
    if any(b not in (1, 2) for b in a):
        raise TopologyError(f"busbar labels must be 1 or 2, got {a}")
    if a and a[0] == 2:
        a = tuple(3 - b for b in a)
    return a


def _nodes(model: GridModel, topology: Topology):
    """Map each element to an electrical node; returns (node list, element -> node index)."""
    nodes = sorted({(s, b) for s in range(model.n_sub) for b in topology.buses[s]})
    index = {n: i for i, n in enumerate(nodes)}
    where = {}
    for s, els in enumerate(model.substations):
        for el, b in zip(els, topology.buses[s]):
            where[el] = index[(s, b)]
    return nodes, where


def topology_problem(model: GridModel, topology: Topology) -> str | None:
    """Reason the topology is invalid, or None when it is valid."""
    if len(topology.buses) != model.n_sub:
        return "topology does not cover every substation"
    for s, els in enumerate(model.substations):
        bars = topology.buses[s]
        if len(bars) != len(els):
            return f"substation {s}: expected {len(els)} assignments, got {len(bars)}"
        for b in (1, 2):
            on_bar = [el for el, x in zip(els, bars) if x == b]
            if len(on_bar) == 1 and on_bar[0][0] in (LINE_FROM, LINE_TO):
                return f"substation {s}: busbar {b} holds a lone line end"
    nodes, where = _nodes(model, topology)
    parent = list(range(len(nodes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ln in model.lines:
        a, b = find(where[(LINE_FROM, ln.id)]), find(where[(LINE_TO, ln.id)])
        parent[a] = b
    if len({find(i) for i in range(len(nodes))}) != 1:
        return "electrical graph is disconnected (islanded busbar)"
    return None


def is_valid_topology(model: GridModel, topology: Topology) -> bool:
    return topology_problem(model, topology) is None


def apply_topology_action(model: GridModel, topology: Topology, substation: int,
                          assignment: Sequence[int]) -> Topology:
    """Set the busbar assignment of one substation, rejecting invalid results."""
    if not 0 <= substation < model.n_sub:
        raise GridError(f"unknown substation {substation}")
    n = model.n_elements(substation)
    if len(assignment) != n:
        raise TopologyError(f"substation {substation} has {n} elements, "
                            f"assignment covers {len(assignment)}")
    buses = list(topology.buses)
    buses[substation] = canonical_assignment(assignment)
    new = Topology(tuple(buses))
    problem = topology_problem(model, new)
    if problem:
        raise TopologyError(problem)
    return new


def enumerate_actions(model: GridModel, substation: int) -> list[tuple[int, ...]]:
    """Valid canonical busbar assignments of a substation; index = action code.

    The reference (all on busbar 1) is code 0; the rest follow in binary
    order of the busbar pattern with the first element pinned to busbar 1.
    Other substations are held at the reference topology.
    """
    qualifying = model.qualifying_substations()
    if substation not in qualifying:
        raise GridError(f"substation {substation} does not have more than 3 elements; "
                        f"qualifying substations: {qualifying}")
    n = model.n_elements(substation)
    ref = reference_topology(model)
    actions = []
    for tail in product((1, 2), repeat=n - 1):
        assignment = (1,) + tail
        try:
            apply_topology_action(model, ref, substation, assignment)
        except TopologyError:
            continue
        actions.append(assignment)
    return actions


# -- injections and power flow ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class Injections:
    """Generator outputs and load demands (per unit) for one time step."""

    gen_p: np.ndarray
    load_p: np.ndarray

    @property
    def imbalance(self) -> float:
        return float(np.sum(self.gen_p) - np.sum(self.load_p))

    def scaled(self, alpha: float) -> "Injections":
        return Injections(self.gen_p * alpha, self.load_p * alpha)

    def __add__(self, other: "Injections") -> "Injections":
        return Injections(self.gen_p + other.gen_p, self.load_p + other.load_p)


def nominal_injections(model: GridModel) -> Injections:
    return Injections(np.array([g.p_nominal for g in model.generators]),
                      np.array([ld.p_nominal for ld in model.loads]))


def node_injections(model: GridModel, topology: Topology, injections: Injections):
    """Net injection per electrical node before slack balancing."""
    nodes, where = _nodes(model, topology)
    p = np.zeros(len(nodes))
    np.add.at(p, [where[(GEN, g.id)] for g in model.generators], injections.gen_p)
    np.subtract.at(p, [where[(LOAD, ld.id)] for ld in model.loads], injections.load_p)
    return nodes, where, p


@lru_cache(maxsize=256)
def _flow_operator(model: GridModel, topology: Topology):
    """Matrix mapping non-slack node injections to line flows, plus node bookkeeping."""
    problem = topology_problem(model, topology)
    if problem:
        raise TopologyError(problem)
    nodes, where = _nodes(model, topology)
    n = len(nodes)
    incidence = np.zeros((len(model.lines), n))
    b = np.array([ln.susceptance for ln in model.lines])
    for ln in model.lines:
        incidence[ln.id, where[(LINE_FROM, ln.id)]] = 1.0
        incidence[ln.id, where[(LINE_TO, ln.id)]] = -1.0
    B = incidence.T @ (b[:, None] * incidence)
    slack = where[(GEN, model.slack_generator)]
    keep = [i for i in range(n) if i != slack]
    try:
        inv = np.linalg.inv(B[np.ix_(keep, keep)])
    except np.linalg.LinAlgError as exc:  # pragma: no cover - valid topologies are connected
        raise GridError(f"singular susceptance matrix: {exc}") from exc
    operator = (b[:, None] * incidence[:, keep]) @ inv
    operator.setflags(write=False)
    return operator, keep, slack


def dc_power_flow(model: GridModel, topology: Topology, injections: Injections) -> np.ndarray:
    """Line flows (per unit, from -> to) for the given topology and injections.

    The slack generator's node absorbs any imbalance and has angle zero.
    """
    if not (np.isfinite(injections.gen_p).all() and np.isfinite(injections.load_p).all()):
        raise GridError("injections must be finite")
    operator, keep, _ = _flow_operator(model, topology)
    _, _, p = node_injections(model, topology, injections)
    return operator @ p[keep]


def line_loading(model: GridModel, topology: Topology, injections: Injections) -> np.ndarray:
    """Load rate rho = |flow| / thermal limit for every line."""
    limits = np.array([ln.limit for ln in model.lines])
    return np.abs(dc_power_flow(model, topology, injections)) / limits


def sample_profiles(model: GridModel, rng: np.random.Generator, steps: int,
                    noise: float = 0.02, band: float = 0.2) -> list[Injections]:
    """Load random walks within ``1 +/- band`` of nominal, generation rebalanced to match.

    Each load multiplier takes a multiplicative Gaussian step of relative size
    ``noise`` and is clipped to the band. Generators keep their nominal shares
    and are rescaled so total generation equals total load.
    """
    if steps < 1:
        raise GridError(f"steps must be >= 1, got {steps}")
    load_nom = np.array([ld.p_nominal for ld in model.loads])
    gen_nom = np.array([g.p_nominal for g in model.generators])
    share = gen_nom / gen_nom.sum()
    mult = np.ones_like(load_nom)
    out = []
    for t in range(steps):
        if t > 0:
            step = rng.standard_normal(load_nom.size)
            mult = np.clip(mult * (1.0 + noise * step), 1.0 - band, 1.0 + band)
        load_p = load_nom * mult
        out.append(Injections(share * load_p.sum(), load_p))
    return out


# -- datasets --------------------------------------------------------------------


def rho_names(model: GridModel) -> list[str]:
    return [f"rho_{ln.id}" for ln in model.lines]


def action_name(substation: int) -> str:
    return f"sub_{substation}"


def gen_grid_dataset(model: GridModel, substation: int, T: int, seed: int,
                     noise: float = 0.02) -> TransitionDataset:
    """Random-policy transitions for topology actions at one substation.

    State and next state are the line load rates; the action is the code of
    the busbar configuration applied at ``substation``. The topology persists
    between steps and the load profile advances one step per transition.
    """
    if T < 1:
        raise GridError(f"T must be >= 1, got {T}")
    actions = enumerate_actions(model, substation)
    profile_rng, policy_rng = (np.random.default_rng(s)
                               for s in np.random.SeedSequence(seed).spawn(2))
    profiles = sample_profiles(model, profile_rng, T + 1, noise=noise)
    topology = reference_topology(model)
    n_lines = len(model.lines)
    rows = np.empty((T, 2 * n_lines + 1))
    rho = line_loading(model, topology, profiles[0])
    for t in range(T):
        while True:
            code = int(policy_rng.integers(len(actions)))
            try:
                topology = apply_topology_action(model, topology, substation, actions[code])
                break
            except TopologyError:
                continue
        nxt = line_loading(model, topology, profiles[t + 1])
        rows[t, :n_lines] = rho
        rows[t, n_lines] = code
        rows[t, n_lines + 1:] = nxt
        rho = nxt
    schema = make_schema([(n, "continuous") for n in rho_names(model)],
                         [(action_name(substation), "discrete")])
    return TransitionDataset(schema, rows)


def assemble_grid_matrix(per_substation: Sequence[tuple[int, MiMatrix]]) -> MiMatrix:
    """Concatenate single-column MI matrices in ascending substation order."""
    if not per_substation:
        raise GridError("no per-substation matrices given")
    items = sorted(per_substation, key=lambda item: item[0])
    rows = items[0][1].row_labels
    for sub, m in items:
        if m.row_labels != rows:
            raise GridError(f"row labels of substation {sub} differ from the others")
        if m.shape[1] != 1:
            raise GridError(f"substation {sub}: expected one column, got {m.shape[1]}")
    values = np.hstack([m.values for _, m in items])
    cols = [m.col_labels[0] for _, m in items]
    return MiMatrix(values, rows, cols, dict(items[0][1].estimator_params))


# -- model construction and storage --------------------------------------------------


# IEEE 14-bus branch data: (from bus, to bus, reactance p.u.), 1-based buses
_IEEE14_BRANCHES = (
    (1, 2, 0.05917), (1, 5, 0.22304), (2, 3, 0.19797), (2, 4, 0.17632),
    (2, 5, 0.17388), (3, 4, 0.17103), (4, 5, 0.04211), (4, 7, 0.20912),
    (4, 9, 0.55618), (5, 6, 0.25202), (6, 11, 0.19890), (6, 12, 0.25581),
    (6, 13, 0.13027), (7, 8, 0.17615), (7, 9, 0.11001), (9, 10, 0.08450),
    (9, 14, 0.27038), (10, 11, 0.19207), (12, 13, 0.19988), (13, 14, 0.34802),
)
# (bus, p_max, nominal output) in p.u.; six units as in the case14 sandbox layout
_IEEE14_GENS = (
    (1, 3.324, 1.00), (2, 1.40, 0.50), (3, 1.00, 0.40),
    (6, 1.00, 0.25), (6, 0.50, 0.15), (8, 1.00, 0.29),
)
# (bus, nominal demand) in p.u.
_IEEE14_LOADS = (
    (2, 0.217), (3, 0.942), (4, 0.478), (5, 0.076), (6, 0.112), (9, 0.295),
    (10, 0.090), (11, 0.035), (12, 0.061), (13, 0.135), (14, 0.149),
)
LIMIT_MARGIN = 1.5


def with_reference_limits(model: GridModel, margin: float = LIMIT_MARGIN) -> GridModel:
    """Set each thermal limit to ``margin`` times its reference flow at nominal load."""
    flows = dc_power_flow(model, reference_topology(model), nominal_injections(model))
    lines = tuple(Line(ln.id, ln.from_sub, ln.to_sub, ln.susceptance,
                       margin * max(abs(f), 1e-6)) for ln, f in zip(model.lines, flows))
    return GridModel(model.n_sub, lines, model.generators, model.loads, model.name)


def build_ieee14() -> GridModel:
    """The 14-substation, 20-line benchmark grid with 6 generators and 11 loads.

    The standard case carries no line ratings, so limits come from
    :func:`with_reference_limits`.
    """
    lines = tuple(Line(i, f - 1, t - 1, 1.0 / x, 1.0)
                  for i, (f, t, x) in enumerate(_IEEE14_BRANCHES))
    gens = tuple(Generator(i, bus - 1, 0.0, pmax, pnom)
                 for i, (bus, pmax, pnom) in enumerate(_IEEE14_GENS))
    loads = tuple(Load(i, bus - 1, p) for i, (bus, p) in enumerate(_IEEE14_LOADS))
    return with_reference_limits(GridModel(14, lines, gens, loads, "ieee14"))


def model_to_dict(model: GridModel) -> dict:
    return {
        "name": model.name,
        "buses": [{"id": b, "substation": s} for b, s in model.buses],
        "substations": [
            {"id": s, "elements": [{"kind": k, "id": i} for k, i in els]}
            for s, els in enumerate(model.substations)
        ],
        "lines": [{"id": ln.id, "from": ln.from_sub, "to": ln.to_sub,
                   "susceptance": ln.susceptance, "limit": ln.limit} for ln in model.lines],
        "generators": [{"id": g.id, "substation": g.sub, "p_min": g.p_min, "p_max": g.p_max,
                        "p_nominal": g.p_nominal} for g in model.generators],
        "loads": [{"id": ld.id, "substation": ld.sub, "p_nominal": ld.p_nominal}
                  for ld in model.loads],
        "slack_substation": model.slack_sub,
    }


def model_from_dict(doc: dict) -> GridModel:
    """Build a model from its JSON form; ``buses`` and ``substations`` are derived, not read.

    Lines without a positive ``limit`` get the reference-flow fallback.
    """
    try:
        n_sub = len(doc["substations"]) if "substations" in doc else int(doc["n_substations"])
        raw_lines = doc["lines"]
        needs_limits = any(not ln.get("limit") for ln in raw_lines)
        lines = tuple(Line(i, int(ln["from"]), int(ln["to"]), float(ln["susceptance"]),
                           float(ln.get("limit") or 1.0)) for i, ln in enumerate(raw_lines))
        gens = tuple(Generator(i, int(g["substation"]), float(g.get("p_min", 0.0)),
                               float(g["p_max"]), float(g["p_nominal"]))
                     for i, g in enumerate(doc["generators"]))
        loads = tuple(Load(i, int(ld["substation"]), float(ld["p_nominal"]))
                      for i, ld in enumerate(doc["loads"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise GridError(f"malformed grid description: {exc}") from exc
    model = GridModel(n_sub, lines, gens, loads, doc.get("name", "grid"))
    return with_reference_limits(model) if needs_limits else model


def save_model(model: GridModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GridModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GridError(f"cannot read grid description {path}: {exc}") from exc
    return model_from_dict(doc)
