import numpy as np
import pytest

from mdpfactor.dataset import TransitionDataset, make_schema

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_dataset():
    schema = make_schema([("p", "continuous"), ("q", "discrete")], [("u", "discrete")])
    values = np.array([
        [0.1, 0, 2, 0.25, 1],
        [0.30000000000000004, 1, 0, 1e-17, 0],
        [1.0 / 3.0, 2, 1, 0.5, 2],
    ])
    return TransitionDataset(schema, values)


def mixed_dataset(rng, T=200):
    """Random dataset with a mix of continuous and discrete columns."""
    schema = make_schema([("x", "continuous"), ("c", "discrete")],
                         [("a", "continuous"), ("b", "discrete")])
    x = rng.random(T)
    c = rng.integers(0, 4, T)
    a = rng.random(T)
    b = rng.integers(0, 3, T)
    nx = np.clip(x + 0.1 * rng.standard_normal(T), 0, 1)
    nc = (c + b) % 4
    return TransitionDataset(schema, np.column_stack([x, c, a, b, nx, nc]))


_SYNTHETIC_MI = {}


def synthetic_mi(T, seed):
    """Bias-corrected MI matrix of the synthetic benchmark (k=3, one shuffle), memoised."""
    from mdpfactor.mi import compute_mi_matrix
    from mdpfactor.synthetic import gen_synthetic_dataset

    if (T, seed) not in _SYNTHETIC_MI:
        _SYNTHETIC_MI[(T, seed)] = compute_mi_matrix(gen_synthetic_dataset(T, seed), 3, 1, seed)
    return _SYNTHETIC_MI[(T, seed)]


def planted_blocks(rng, max_blocks=5, max_rows=12, max_cols=12):
    """Random block-diagonal 0/1 matrix with connected blocks, rows/cols shuffled.

    Returns (values, row_labels, col_labels, expected) where expected is the
    set of (row label set, column label set) pairs, one per planted block.
    """
    b = int(rng.integers(1, max_blocks + 1))
    n_rows = int(rng.integers(b, max(b, max_rows) + 1))
    n_cols = int(rng.integers(b, max(b, max_cols) + 1))
    row_block = np.concatenate([np.arange(b), rng.integers(0, b, n_rows - b)])
    col_block = np.concatenate([np.arange(b), rng.integers(0, b, n_cols - b)])
    values = np.zeros((n_rows, n_cols), dtype=np.int8)
    for k in range(b):
        rows = np.flatnonzero(row_block == k)
        cols = np.flatnonzero(col_block == k)
        # random spanning tree over the block's row and column nodes
        nodes = [("r", i) for i in rows] + [("c", j) for j in cols]
        order = rng.permutation(len(nodes))
        placed = [nodes[order[0]]]
        pending = [nodes[o] for o in order[1:]]
        while pending:
            for node in list(pending):
                partners = [p for p in placed if p[0] != node[0]]
                if partners:
                    other = partners[int(rng.integers(len(partners)))]
                    i, j = (node[1], other[1]) if node[0] == "r" else (other[1], node[1])
                    values[i, j] = 1
                    placed.append(node)
                    pending.remove(node)
        extra = rng.random((rows.size, cols.size)) < 0.3
        values[np.ix_(rows, cols)] |= extra.astype(np.int8)
    rp, cp = rng.permutation(n_rows), rng.permutation(n_cols)
    values = values[np.ix_(rp, cp)]
    row_labels = [f"r{i}" for i in rp]
    col_labels = [f"c{j}" for j in cp]
    expected = {
        (frozenset(f"r{i}" for i in np.flatnonzero(row_block == k)),
         frozenset(f"c{j}" for j in np.flatnonzero(col_block == k)))
        for k in range(b)
    }
    return values, row_labels, col_labels, expected


def csgraph_memberships(values, row_labels, col_labels):
    """Second oracle: components of the bipartite graph via scipy.sparse.csgraph."""
    from scipy.sparse import bmat, csr_matrix
    from scipy.sparse.csgraph import connected_components

    a = csr_matrix(values)
    graph = bmat([[None, a], [a.T, None]])
    _, labels = connected_components(graph, directed=False)
    n = len(row_labels)
    groups = {}
    for node, lab in enumerate(labels):
        rows, cols = groups.setdefault(lab, (set(), set()))
        if node < n:
            rows.add(row_labels[node])
        else:
            cols.add(col_labels[node - n])
    return {(frozenset(r), frozenset(c)) for r, c in groups.values() if r and c}


def random_valid_topology(model, rng, p_split=0.5):
    """Random valid topology: qualifying substations split at random, invalid draws redrawn."""
    from mdpfactor.gridsim import Topology, canonical_assignment, is_valid_topology

    while True:
        buses = []
        for s, els in enumerate(model.substations):
            if len(els) >= 4 and rng.random() < p_split:
                buses.append(canonical_assignment(rng.integers(1, 3, len(els))))
            else:
                buses.append((1,) * len(els))
        topo = Topology(tuple(buses))
        if is_valid_topology(model, topo):
            return topo


def random_injections(model, rng):
    """Balanced random injections near nominal."""
    from mdpfactor.gridsim import Injections

    load_p = np.array([ld.p_nominal for ld in model.loads]) * rng.uniform(0.5, 1.5, len(model.loads))
    gen_p = rng.uniform(0.1, 1.0, len(model.generators))
    return Injections(gen_p * load_p.sum() / gen_p.sum(), load_p)


def nodal_residual(model, topology, injections, flows):
    """Max |injection - net outgoing flow| over electrical nodes."""
    from mdpfactor.gridsim import LINE_FROM, LINE_TO, node_injections

    nodes, where, p = node_injections(model, topology, injections)
    out = np.zeros(len(nodes))
    for ln, f in zip(model.lines, flows):
        out[where[(LINE_FROM, ln.id)]] += f
        out[where[(LINE_TO, ln.id)]] -= f
    return float(np.max(np.abs(p - out)))


def pinv_flows(model, topology, injections):
    """Independent oracle: angles from the pseudo-inverse of the full nodal Laplacian."""
    from mdpfactor.gridsim import LINE_FROM, LINE_TO, node_injections

    nodes, where, p = node_injections(model, topology, injections)
    A = np.zeros((len(model.lines), len(nodes)))
    for ln in model.lines:
        A[ln.id, where[(LINE_FROM, ln.id)]] = 1
        A[ln.id, where[(LINE_TO, ln.id)]] = -1
    b = np.array([ln.susceptance for ln in model.lines])
    theta = np.linalg.pinv(A.T @ np.diag(b) @ A) @ p
    return b * (A @ theta)
