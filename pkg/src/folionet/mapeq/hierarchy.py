"""Multilevel module trees: search, codelength, file format and projection.

In a tree every module owns a codebook. A module's codebook holds its own exit
rate (except at the root) plus one rate per child: the entry rate of a child
module, which equals its exit rate for undirected flow, or the visit rate of a
child node. Its contribution to the codelength is the rate total times the
entropy of the normalized rates; the tree's codelength is the sum over modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..simnet import PortfolioClass, SimilarityGraph
from . import _core
from .flow import flows
from .search import FlowNetwork, canonical_labels, search


@dataclass
class Module:
    """Tree node: either a list of child modules or a list of graph nodes."""

    children: list["Module"] = field(default_factory=list)
    nodes: list[int] = field(default_factory=list)

    @property
    def is_bottom(self) -> bool:
        return not self.children

    def leaf_nodes(self) -> list[int]:
        if self.is_bottom:
            return list(self.nodes)
        out: list[int] = []
        for child in self.children:
            out.extend(child.leaf_nodes())
        return out

    def depth(self) -> int:
        return 1 if self.is_bottom else 1 + max(c.depth() for c in self.children)


@dataclass
class ClusterTree:
    root: Module
    codelength: float
    n_nodes: int

    @property
    def top_modules(self) -> list[Module]:
        return self.root.children

    def top_partition(self) -> np.ndarray:
        part = np.full(self.n_nodes, -1, dtype=np.int64)
        for i, mod in enumerate(self.top_modules):
            part[mod.leaf_nodes()] = i
        return part

    def leaf_paths(self) -> list[tuple[tuple[int, ...], int]]:
        """``(path, node)`` for every leaf in depth-first order; paths are 1-based."""
        out = []

        def walk(mod: Module, prefix: tuple[int, ...]):
            if mod.is_bottom:
                for j, node in enumerate(mod.nodes, start=1):
                    out.append((prefix + (j,), node))
            else:
                for j, child in enumerate(mod.children, start=1):
                    walk(child, prefix + (j,))

        walk(self.root, ())
        return out


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


def _codebook(rates: Sequence[float]) -> float:
    total = math.fsum(rates)
    return _plogp(total) - math.fsum(_plogp(r) for r in rates)


def tree_codelength(graph: SimilarityGraph, root: Module) -> float:
    """Codelength of a module tree recomputed from the graph's flows."""
    net = FlowNetwork.from_graph(graph)
    return _tree_codelength(net, root)


def _exit_of(net: FlowNetwork, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    internal = net.links[nodes][:, nodes].sum()
    return max(0.0, float(net.out[nodes].sum() - internal))


def _tree_codelength(net: FlowNetwork, root: Module) -> float:
    parts: list[float] = []

    def walk(mod: Module, exit_rate: float | None) -> None:
        rates = [] if exit_rate is None else [exit_rate]
        if mod.is_bottom:
            rates.extend(float(net.rate[a]) for a in mod.nodes)
        else:
            child_exits = [_exit_of(net, c.leaf_nodes()) for c in mod.children]
            rates.extend(child_exits)
            for child, q in zip(mod.children, child_exits):
                walk(child, q)
        parts.append(_codebook(rates))

    walk(root, None)
    return max(0.0, math.fsum(parts))


def _tree_from_partition(partition: np.ndarray) -> Module:
    k = int(partition.max()) + 1 if len(partition) else 0
    mods = [Module(nodes=[]) for _ in range(k)]
    for a, m in enumerate(partition):
        mods[m].nodes.append(int(a))
    return Module(children=mods)


def _add_index_levels(net: FlowNetwork, root: Module, seed: int, trials: int, threads: int) -> None:
    """Group the root's children into super-modules while that shortens the code."""
    level = 0
    while len(root.children) > 2:
        children = root.children
        members = [np.asarray(c.leaf_nodes(), dtype=np.int64) for c in children]
        part = np.empty(net.n, dtype=np.int64)
        for i, nodes in enumerate(members):
            part[nodes] = i
        coarse = net.aggregate(part)
        exits = coarse.out.copy()
        # In the super level a child module is coded by its entry (= exit) rate.
        super_net = FlowNetwork(exits, exits.copy(), coarse.links, 0.0)
        old_root = _codebook(list(exits))
        super_part, length = search(super_net, seed + 7919 * (level + 1), trials, threads)
        k = int(super_part.max()) + 1
        if not (1 < k < len(children)) or not length < old_root - _core.MIN_GAIN:
            break
        grouped = [Module(children=[]) for _ in range(k)]
        for i, m in enumerate(super_part):
            grouped[m].children.append(children[i])
        # a super-module with one child only adds a redundant codebook
        root.children = [g.children[0] if len(g.children) == 1 else g for g in grouped]
        level += 1


def _split(net: FlowNetwork, mod: Module, exit_rate: float, seed: int, trials: int,
           threads: int, min_size: int, depth: int, max_depth: int) -> None:
    """Try to replace a bottom module's flat codebook with submodules; recurse."""
    if depth >= max_depth or len(mod.nodes) < min_size:
        return
    nodes = np.asarray(mod.nodes, dtype=np.int64)
    sub = net.subnetwork(nodes, exit_rate)
    flat = sub.flat_codelength()
    part, length = search(sub, seed, trials, threads)
    k = int(part.max()) + 1
    if not (1 < k < len(nodes)) or not length < flat - _core.MIN_GAIN:
        return
    exits = sub.module_exits(part)
    mod.children = [Module(nodes=[]) for _ in range(k)]
    for a, m in zip(nodes, part):
        mod.children[m].nodes.append(int(a))
    mod.nodes = []
    for i, child in enumerate(mod.children):
        _split(net, child, float(exits[i]), seed + i + 1, trials, threads, min_size, depth + 1, max_depth)


def optimize_hierarchical(graph: SimilarityGraph, seed: int = 0, trials: int = 10,
                          threads: int = 1, min_split_size: int = 3,
                          max_depth: int = 16) -> ClusterTree:
    """Multilevel partition: two-level search, then extra index levels and submodules.

    Extra levels are kept only when they strictly shorten the total
    codelength, so a graph without hierarchical structure gets back the
    two-level tree (root, modules, nodes).
    """
    fl = flows(graph)
    net = FlowNetwork.from_graph(graph, fl)
    part, _ = search(net, seed, trials, threads)
    root = _tree_from_partition(part)

    _add_index_levels(net, root, seed, trials, threads)

    def split_bottoms(mod: Module, depth: int):
        for i, child in enumerate(mod.children):
            if child.is_bottom:
                _split(net, child, _exit_of(net, child.nodes), seed + 104729 * (i + 1),
                       trials, threads, min_split_size, depth, max_depth)
            else:
                split_bottoms(child, depth + 1)

    split_bottoms(root, 1)
    _sort_tree(net, root)
    return ClusterTree(root, _tree_codelength(net, root), graph.n_nodes)


def _sort_tree(net: FlowNetwork, mod: Module) -> float:
    """Order children by descending flow (ties by smallest node); returns the module's flow."""
    if mod.is_bottom:
        mod.nodes.sort(key=lambda a: (-net.rate[a], a))
        return float(net.rate[mod.nodes].sum()) if mod.nodes else 0.0
    keyed = []
    for child in mod.children:
        f = _sort_tree(net, child)
        keyed.append((-f, min(child.leaf_nodes()), child))
    keyed.sort(key=lambda t: (t[0], t[1]))
    mod.children = [t[2] for t in keyed]
    return -sum(t[0] for t in keyed)


def two_level_tree(graph: SimilarityGraph, partition) -> ClusterTree:
    part = canonical_labels(np.asarray(partition, dtype=np.int64))
    root = _tree_from_partition(part)
    net = FlowNetwork.from_graph(graph)
    _sort_tree(net, root)
    return ClusterTree(root, _tree_codelength(net, root), graph.n_nodes)


# --- file format ---------------------------------------------------------------


def write_tree(path: str | Path, tree: ClusterTree, graph: SimilarityGraph) -> None:
    """One line per leaf: ``path visit_rate class_id`` (1-based), after a codelength header."""
    visit = flows(graph).node_visit
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# codelength={tree.codelength!r} bits\n")
        for p, node in tree.leaf_paths():
            fh.write(f"{':'.join(map(str, p))} {float(visit[node])!r} {node + 1}\n")


def read_tree(path: str | Path) -> ClusterTree:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# codelength="):
            raise ValueError(f"{path}: missing codelength header")
        length = float(header.split("=", 1)[1].split()[0])
        root = Module(children=[])
        n = 0
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            p, _, node = line.split()
            path_idx = [int(x) for x in p.split(":")]
            mod = root
            for j in path_idx[:-1]:
                while len(mod.children) < j:
                    mod.children.append(Module(children=[]))
                mod = mod.children[j - 1]
            mod.nodes.append(int(node) - 1)
            n += 1
    return ClusterTree(root, length, n)


# --- projection to investors ------------------------------------------------------


@dataclass
class InvestorGroups:
    """Investor groups ordered by descending size (ties by smallest class id)."""

    groups: list[list]
    class_ids: list[list[int]]

    def __len__(self) -> int:
        return len(self.groups)

    def labels(self) -> dict:
        return {inv: g for g, members in enumerate(self.groups) for inv in members}


def project(tree: ClusterTree, classes: Sequence[PortfolioClass] | Sequence[Sequence]) -> InvestorGroups:
    """Expand the top-level modules of ``tree`` into investor lists.

    ``classes`` may be PortfolioClass objects or plain member lists indexed by
    class id.
    """
    members = [c.members if isinstance(c, PortfolioClass) else list(c) for c in classes]
    leaves = sorted(a for _, a in tree.leaf_paths())
    if leaves != list(range(len(members))):
        raise ValueError(
            f"tree leaves do not match classes: {len(leaves)} leaves for {len(members)} classes"
        )
    rows = []
    for mod in tree.top_modules:
        ids = sorted(mod.leaf_nodes())
        investors = [inv for k in ids for inv in members[k]]
        rows.append((-len(investors), ids[0], investors, ids))
    rows.sort(key=lambda r: (r[0], r[1]))
    return InvestorGroups([r[2] for r in rows], [r[3] for r in rows])
