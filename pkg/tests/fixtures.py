"""Shared trees and helpers for the test-suite."""
import numpy as np

from entropic_pricer.market import build_tree, tree_from_levels


def binomial():
    return build_tree([
        {"id": 0, "parent": None, "prob": 1, "prices": [1, 1.0]},
        {"id": 1, "parent": 0, "prob": 0.5, "prices": [1, 0.9]},
        {"id": 2, "parent": 0, "prob": 0.5, "prices": [1, 1.2]},
    ])


def trinomial():
    return build_tree([
        {"id": 0, "parent": None, "prob": 1, "prices": [1, 1.0]},
        {"id": 1, "parent": 0, "prob": "1/3", "prices": [1, 0.8]},
        {"id": 2, "parent": 0, "prob": "1/3", "prices": [1, 1.0]},
        {"id": 3, "parent": 0, "prob": "1/3", "prices": [1, 1.3]},
    ])


def trinomial2():
    """Two periods of trinomial branching with uneven probabilities (9 leaves)."""
    return tree_from_levels([1.0], [(0.3, [0.85]), (0.45, [1.0]), (0.25, [1.2])], horizon=2)


def two_asset():
    """One period, five states, two risky assets."""
    return build_tree([
        {"id": "r", "parent": None, "prob": 1, "prices": [1, 1.0, 2.0]},
        {"id": "a", "parent": "r", "prob": 0.2, "prices": [1, 0.9, 2.2]},
        {"id": "b", "parent": "r", "prob": 0.2, "prices": [1, 1.1, 1.9]},
        {"id": "c", "parent": "r", "prob": 0.2, "prices": [1, 1.05, 2.16]},
        {"id": "d", "parent": "r", "prob": 0.2, "prices": [1, 0.97, 1.86]},
        {"id": "e", "parent": "r", "prob": 0.2, "prices": [1, 1.0, 2.05]},
    ])


def product_tree():
    """Binomial stock times an independent fair coin that is not traded."""
    spec = [{"id": 0, "parent": None, "prob": 1, "prices": [1, 1.0]}]
    k = 1
    for s in (0.9, 1.2):
        for _ in range(2):
            spec.append({"id": k, "parent": 0, "prob": 0.25, "prices": [1, s]})
            k += 1
    return build_tree(spec)


def up(tree):
    """Indicator of the last leaf."""
    e = np.zeros(tree.n_leaves)
    e[-1] = 1.0
    return e


def random_claims(tree, rng, n, bound=5.0):
    return rng.uniform(-bound, bound, size=(n, tree.n_leaves))


def random_strategy(tree, rng, scale=3.0):
    return rng.uniform(-scale, scale, size=(tree.n_internal, tree.num_assets))
