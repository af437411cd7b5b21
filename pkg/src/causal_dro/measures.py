"""Finite laws of N-step processes: scenario trees, path measures, nested distributions.

A :class:`ScenarioTree` stores conditional probabilities node by node; the joint
weight of a path is the product along its branch. Trees double as filtered
processes: two nodes may carry the same value history while hanging in different
subtrees, which encodes extra information beyond the natural filtration.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-12
VALUE_TOL = 1e-9

Value = tuple[float, ...]
Path = tuple[Value, ...]


class TreeValidationError(ValueError):
    """Raised when a tree document or tree construction violates the schema."""

    def __init__(self, message: str, node_id: int | None = None):
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)
        self.node_id = node_id


def _as_value(v, dim: int | None = None) -> Value:
    if np.isscalar(v):
        v = [v]
    out = tuple(float(a) for a in v)
    if dim is not None and len(out) != dim:
        raise ValueError(f"value {out} has dimension {len(out)}, expected {dim}")
    return out


def values_close(a: Sequence[float], b: Sequence[float], tol: float = VALUE_TOL) -> bool:
    return len(a) == len(b) and all(abs(x - y) <= tol for x, y in zip(a, b))


@dataclass(frozen=True)
class Node:
    id: int
    parent: int | None
    step: int
    value: Value
    prob: float


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Finite tree with values at steps 1..N and conditional branch probabilities."""

    horizon: int
    dims: tuple[int, ...]
    nodes: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        self._validate()

    def _validate(self) -> None:
        N = self.horizon
        if not isinstance(N, int) or N < 1:
            raise TreeValidationError(f"horizon must be an integer >= 1, got {N!r}")
        if len(self.dims) != N or any(d < 1 for d in self.dims):
            raise TreeValidationError(f"dims must list {N} positive dimensions, got {list(self.dims)}")
        if not self.nodes:
            raise TreeValidationError("tree has no nodes")
        by_id: dict[int, Node] = {}
        for node in self.nodes:
            if node.id in by_id:
                raise TreeValidationError("duplicate node id", node.id)
            by_id[node.id] = node
        for node in self.nodes:
            if not 1 <= node.step <= N:
                raise TreeValidationError(f"step {node.step} outside 1..{N}", node.id)
            if len(node.value) != self.dims[node.step - 1]:
                raise TreeValidationError(
                    f"value has dimension {len(node.value)}, dims[{node.step - 1}] = {self.dims[node.step - 1]}",
                    node.id,
                )
            if not all(np.isfinite(node.value)):
                raise TreeValidationError("value is not finite", node.id)
            if not (node.prob > 0 and np.isfinite(node.prob)):
                raise TreeValidationError(f"probability {node.prob} must be > 0", node.id)
            if node.parent is None:
                if node.step != 1:
                    raise TreeValidationError(f"root node at step {node.step}, roots must be at step 1", node.id)
            else:
                parent = by_id.get(node.parent)
                if parent is None:
                    raise TreeValidationError(f"dangling parent {node.parent}", node.id)
                if node.step != parent.step + 1:
                    raise TreeValidationError(
                        f"step {node.step} inconsistent with parent step {parent.step}", node.id
                    )
        root_sum = sum(n.prob for n in self.nodes if n.parent is None)
        if abs(root_sum - 1.0) > PROB_TOL:
            raise TreeValidationError(f"root probabilities sum {root_sum:.12g} ≠ 1")
        sums: dict[int, float] = {}
        for node in self.nodes:
            if node.parent is not None:
                sums[node.parent] = sums.get(node.parent, 0.0) + node.prob
        for node in self.nodes:
            if node.step < N:
                if node.id not in sums:
                    raise TreeValidationError(f"interior node at step {node.step} has no children", node.id)
                if abs(sums[node.id] - 1.0) > PROB_TOL:
                    raise TreeValidationError(f"child probabilities sum {sums[node.id]:.12g} ≠ 1", node.id)

    # -- structure -------------------------------------------------------

    @cached_property
    def _by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _children(self) -> dict[int | None, tuple[int, ...]]:
        ch: dict[int | None, list[int]] = {None: []}
        for n in self.nodes:
            ch.setdefault(n.id, [])
            ch.setdefault(n.parent, []).append(n.id)
        return {k: tuple(v) for k, v in ch.items()}

    def node(self, node_id: int) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id}") from None

    @property
    def roots(self) -> tuple[int, ...]:
        return self._children[None]

    def children(self, node_id: int | None) -> tuple[int, ...]:
        """Child ids of ``node_id``; ``None`` addresses the virtual root above step 1."""
        if node_id is not None:
            self.node(node_id)
        return self._children[node_id]

    @cached_property
    def _history(self) -> dict[int, Path]:
        hist: dict[int, Path] = {}
        for nid in self.preorder():
            n = self._by_id[nid]
            hist[nid] = (hist[n.parent] if n.parent is not None else ()) + (n.value,)
        return hist

    def history(self, node_id: int) -> Path:
        """Value history x_{1:n} from the root down to ``node_id``."""
        self.node(node_id)
        return self._history[node_id]

    def preorder(self, start: int | None = None) -> list[int]:
        out: list[int] = []
        stack = list(reversed(self._children[start]))
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self._children[nid]))
        return out

    def postorder(self) -> list[int]:
        return list(reversed(self.preorder()))

    def nodes_at(self, step: int) -> list[int]:
        return [nid for nid in self.preorder() if self._by_id[nid].step == step]

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(nid for nid in self.preorder() if self._by_id[nid].step == self.horizon)

    @cached_property
    def _joint(self) -> dict[int, float]:
        joint: dict[int, float] = {}
        for nid in self.preorder():
            n = self._by_id[nid]
            joint[nid] = n.prob * (joint[n.parent] if n.parent is not None else 1.0)
        return joint

    def joint_prob(self, node_id: int) -> float:
        return self._joint[node_id]

    def subtree(self, node_id: int) -> "ScenarioTree":
        """The conditional tree hanging below (and including) ``node_id``, re-rooted with prob 1."""
        root = self.node(node_id)
        shift = root.step - 1
        nodes = [Node(root.id, None, 1, root.value, 1.0)]
        for nid in self.preorder(node_id):
            n = self._by_id[nid]
            nodes.append(Node(n.id, n.parent, n.step - shift, n.value, n.prob))
        return ScenarioTree(self.horizon - shift, self.dims[shift:], tuple(nodes))

    def with_values(self, new_values: dict[int, Value]) -> "ScenarioTree":
        nodes = tuple(
            Node(n.id, n.parent, n.step, _as_value(new_values[n.id]) if n.id in new_values else n.value, n.prob)
            for n in self.nodes
        )
        return ScenarioTree(self.horizon, self.dims, nodes)

    # -- constructors ----------------------------------------------------

    @classmethod
    def from_paths(cls, paths: Sequence[Sequence], weights: Sequence[float],
                   dims: Sequence[int] | None = None) -> "ScenarioTree":
        """Build the plain tree of a path law by grouping exactly equal prefixes."""
        if len(paths) == 0 or len(paths) != len(weights):
            raise TreeValidationError("paths and weights must be nonempty and of equal length")
        norm = [tuple(_as_value(v) for v in p) for p in paths]
        N = len(norm[0])
        if any(len(p) != N for p in norm):
            raise TreeValidationError("paths have different lengths")
        if dims is None:
            dims = tuple(len(v) for v in norm[0])
        w = np.asarray(weights, dtype=float)
        # prefix -> (id, joint weight); insertion order fixes node ids
        prefix_ids: dict[Path, int] = {}
        prefix_w: dict[Path, float] = {}
        for p, wi in zip(norm, w):
            for n in range(1, N + 1):
                key = p[:n]
                if key not in prefix_ids:
                    prefix_ids[key] = len(prefix_ids)
                    prefix_w[key] = 0.0
                prefix_w[key] += float(wi)
        total = float(w.sum())
        nodes = []
        for key, nid in prefix_ids.items():
            if len(key) == 1:
                parent, prob = None, prefix_w[key] / total
            else:
                parent = prefix_ids[key[:-1]]
                prob = prefix_w[key] / prefix_w[key[:-1]]
            nodes.append(Node(nid, parent, len(key), key[-1], prob))
        return cls(N, tuple(dims), tuple(nodes))

    @classmethod
    def chain(cls, values: Sequence) -> "ScenarioTree":
        """Deterministic single-path tree."""
        vals = [_as_value(v) for v in values]
        nodes = tuple(Node(i, None if i == 0 else i - 1, i + 1, v, 1.0) for i, v in enumerate(vals))
        return cls(len(vals), tuple(len(v) for v in vals), nodes)


@dataclass(frozen=True, eq=False)
class PathMeasure:
    """Flat finite law on paths: distinct atoms with positive weights summing to one."""

    paths: tuple[Path, ...]
    weights: np.ndarray
    dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        paths = tuple(tuple(_as_value(v) for v in p) for p in self.paths)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", w)
        if not paths or len(paths) != len(w):
            raise ValueError("path measure needs as many weights as (>= 1) paths")
        if not self.dims:
            object.__setattr__(self, "dims", tuple(len(v) for v in paths[0]))
        if np.any(w <= 0):
            raise ValueError("path weights must be positive")
        if abs(w.sum() - 1.0) > PROB_TOL * max(1, len(w)):
            raise ValueError(f"path weights sum {w.sum():.15g} ≠ 1")
        if len(set(paths)) != len(paths):
            raise ValueError("paths must be pairwise distinct")

    @property
    def horizon(self) -> int:
        return len(self.dims)

    def __len__(self) -> int:
        return len(self.paths)

    @cached_property
    def flat(self) -> np.ndarray:
        """Paths as an array of shape (atoms, sum(dims))."""
        return np.array([[a for v in p for a in v] for p in self.paths], dtype=float)

    def prefix_keys(self, n: int) -> list[Path]:
        return [p[:n] for p in self.paths]

    def expect(self, values: Iterable[float]) -> float:
        return float(np.dot(self.weights, np.fromiter(values, dtype=float)))


def to_path_measure(t: ScenarioTree) -> PathMeasure:
    """Flatten a tree; leaves with identical value histories are merged."""
    acc: dict[Path, float] = {}
    for leaf in t.leaves:
        h = t.history(leaf)
        acc[h] = acc.get(h, 0.0) + t.joint_prob(leaf)
    return PathMeasure(tuple(acc), np.array(list(acc.values())), t.dims)


def leaf_path_index(t: ScenarioTree, pm: PathMeasure) -> dict[int, int]:
    """Map each leaf id of ``t`` to the index of its path in ``pm``."""
    pos = {p: i for i, p in enumerate(pm.paths)}
    return {leaf: pos[t.history(leaf)] for leaf in t.leaves}


def kernel(t: ScenarioTree, node_id: int | None) -> list[tuple[Value, float]]:
    """Conditional law of the next value given the node (``None``: law of the first step)."""
    if node_id is not None and t.node(node_id).step >= t.horizon:
        raise ValueError(f"node {node_id} is a leaf; no successor kernel")
    return [(t.node(c).value, t.node(c).prob) for c in t.children(node_id)]


# -- nested distributions -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class NestedDistribution:
    """Value at one step together with the (deduplicated) law of its successors.

    ``canonicalize`` returns a virtual step-0 object with ``value == ()`` whose
    children are the step-1 nested distributions.
    """

    value: Value
    children: tuple[tuple[float, "NestedDistribution"], ...] = ()

    def equals(self, other: "NestedDistribution", tol: float = VALUE_TOL) -> bool:
        if not values_close(self.value, other.value, tol) or len(self.children) != len(other.children):
            return False
        unmatched = list(other.children)
        for w, sub in self.children:
            for k, (w2, sub2) in enumerate(unmatched):
                if abs(w - w2) <= tol and sub.equals(sub2, tol):
                    del unmatched[k]
                    break
            else:
                return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, NestedDistribution):
            return NotImplemented
        return self.equals(other)

    __hash__ = None  # type: ignore[assignment]

    @property
    def depth(self) -> int:
        return 0 if not self.children else 1 + max(c.depth for _, c in self.children)

    def to_obj(self):
        if not self.children:
            return list(self.value)
        return [list(self.value), [[w, c.to_obj()] for w, c in self.children]]


def _merge(items: list[tuple[float, NestedDistribution]], tol: float):
    merged: list[list] = []
    for w, nd in items:
        for entry in merged:
            if entry[1].equals(nd, tol):
                entry[0] += w
                break
        else:
            merged.append([w, nd])
    merged.sort(key=lambda e: (e[1].value, -e[0]))
    return tuple((float(w), nd) for w, nd in merged)


def _nested_of(t: ScenarioTree, tol: float) -> dict[int | None, NestedDistribution]:
    out: dict[int | None, NestedDistribution] = {}
    for nid in t.postorder():
        n = t.node(nid)
        kids = [(t.node(c).prob, out[c]) for c in t.children(nid)]
        out[nid] = NestedDistribution(n.value, _merge(kids, tol))
    out[None] = NestedDistribution((), _merge([(t.node(r).prob, out[r]) for r in t.roots], tol))
    return out


def canonicalize(t: ScenarioTree, tol: float = VALUE_TOL) -> NestedDistribution:
    """Information-process representation; equal for information-equivalent trees."""
    return _nested_of(t, tol)[None]


def is_plain(t: ScenarioTree, tol: float = VALUE_TOL) -> bool:
    """True iff nodes with coinciding value histories carry identical subtree laws."""
    nested = _nested_of(t, tol)
    for step in range(1, t.horizon):
        ids = t.nodes_at(step)
        for i, a in enumerate(ids):
            ha = t.history(a)
            for b in ids[i + 1:]:
                hb = t.history(b)
                if all(values_close(u, v, tol) for u, v in zip(ha, hb)) and not nested[a].equals(nested[b], tol):
                    return False
    return True


# -- JSON ------------------------------------------------------------------


def _require(cond: bool, msg: str, node_id: int | None = None) -> None:
    if not cond:
        raise TreeValidationError(msg, node_id)


def tree_from_obj(doc) -> ScenarioTree:
    _require(isinstance(doc, dict), "top-level document must be an object")
    for key in ("horizon", "dims", "nodes"):
        _require(key in doc, f"missing top-level key {key!r}")
    horizon, dims, raw = doc["horizon"], doc["dims"], doc["nodes"]
    _require(isinstance(horizon, int) and not isinstance(horizon, bool), "horizon must be an integer")
    _require(isinstance(dims, list) and all(isinstance(d, int) for d in dims), "dims must be a list of integers")
    _require(isinstance(raw, list), "nodes must be a list")
    nodes = []
    for k, item in enumerate(raw):
        _require(isinstance(item, dict), f"nodes[{k}] must be an object")
        nid = item.get("id")
        _require(isinstance(nid, int) and not isinstance(nid, bool), f"nodes[{k}] has no integer id")
        for key in ("parent", "step", "value", "prob"):
            _require(key in item, f"missing field {key!r}", nid)
        parent = item["parent"]
        _require(parent is None or (isinstance(parent, int) and not isinstance(parent, bool)),
                 "parent must be an integer or null", nid)
        _require(isinstance(item["step"], int), "step must be an integer", nid)
        value = item["value"]
        _require(isinstance(value, list) and all(isinstance(a, (int, float)) and not isinstance(a, bool)
                                                 for a in value), "value must be a list of numbers", nid)
        _require(isinstance(item["prob"], (int, float)) and not isinstance(item["prob"], bool),
                 "prob must be a number", nid)
        nodes.append(Node(nid, parent, item["step"], tuple(float(a) for a in value), float(item["prob"])))
    return ScenarioTree(horizon, tuple(dims), tuple(nodes))


def load_tree(doc: bytes | str) -> ScenarioTree:
    """Parse and validate a tree JSON document."""
    try:
        obj = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise TreeValidationError(f"invalid JSON: {exc}") from exc
    return tree_from_obj(obj)


def tree_to_obj(t: ScenarioTree) -> dict:
    return {
        "horizon": t.horizon,
        "dims": list(t.dims),
        "nodes": [
            {"id": n.id, "parent": n.parent, "step": n.step, "value": list(n.value), "prob": n.prob}
            for n in t.nodes
        ],
    }


def dump_tree(t: ScenarioTree) -> str:
    return json.dumps(tree_to_obj(t))
