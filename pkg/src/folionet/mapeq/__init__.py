"""Map-equation clustering of similarity graphs."""

from .codelength import codelength, module_exits, one_module_codelength
from .flow import DegenerateGraphError, FlowDistribution, flows
from .hierarchy import (
    ClusterTree,
    InvestorGroups,
    Module,
    optimize_hierarchical,
    project,
    read_tree,
    tree_codelength,
    two_level_tree,
    write_tree,
)
from .search import FlowNetwork, optimize_two_level

__all__ = [
    "ClusterTree", "DegenerateGraphError", "FlowDistribution", "FlowNetwork", "InvestorGroups",
    "Module", "codelength", "flows", "module_exits", "one_module_codelength",
    "optimize_hierarchical", "optimize_two_level", "project", "read_tree", "tree_codelength",
    "two_level_tree", "write_tree",
]
