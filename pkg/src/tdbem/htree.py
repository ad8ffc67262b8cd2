"""Cluster trees by PCA median bisection and admissible block partitions."""
import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Cluster:
    indices: np.ndarray
    bbox: np.ndarray          # (2, 3): min and max corner
    axis: np.ndarray = None
    children: list = field(default_factory=list)
    level: int = 0

    @property
    def is_leaf(self):
        return not self.children

    @property
    def size(self):
        return len(self.indices)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))


def box_distance(a, b):
    gap = np.maximum(0.0, np.maximum(a[0] - b[1], b[0] - a[1]))
    return float(np.linalg.norm(gap))


def _principal_axis(points):
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered
    w, v = np.linalg.eigh(cov)
    axis = v[:, np.argmax(w)]
    if not np.any(np.abs(axis) > 0):
        axis = np.eye(3)[0]
    # fix the sign so that splits are reproducible
    k = np.argmax(np.abs(axis))
    return axis if axis[k] > 0 else -axis


class ClusterTree:
    def __init__(self, points, b_min=20):
        if b_min < 1:
            raise ValueError("b_min must be >= 1")
        self.points = np.asarray(points, dtype=float)
        self.b_min = int(b_min)
        self.root = self._build(np.arange(len(self.points)), 0)

    def _build(self, idx, level):
        pts = self.points[idx]
        bbox = np.stack([pts.min(axis=0), pts.max(axis=0)]) if len(idx) else np.zeros((2, 3))
        node = Cluster(idx, bbox, level=level)
        if len(idx) <= self.b_min:
            return node
        axis = _principal_axis(pts)
        proj = pts @ axis
        # ties broken by coordinate order for determinism
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], proj))
        half = len(idx) // 2
        node.axis = axis
        node.children = [self._build(idx[order[:half]], level + 1),
                         self._build(idx[order[half:]], level + 1)]
        return node

    def leaves(self):
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack.extend(reversed(n.children))
        return out

    def depth(self):
        return max(leaf.level for leaf in self.leaves())


def build_cluster_tree(points, b_min=20):
    return ClusterTree(points, b_min)


def admissible(a, b, eta):
    return min(a.diameter, b.diameter) <= eta * box_distance(a.bbox, b.bbox)


@dataclass
class Block:
    rows: Cluster
    cols: Cluster
    admissible: bool

    @property
    def shape(self):
        return (self.rows.size, self.cols.size)


class BlockTree:
    def __init__(self, row_tree, col_tree, eta=0.8):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.row_tree, self.col_tree, self.eta = row_tree, col_tree, eta
        self.blocks = []
        stack = [(row_tree.root, col_tree.root)]
        while stack:
            a, b = stack.pop()
            if a.size == 0 or b.size == 0:
                continue
            if admissible(a, b, eta):
                self.blocks.append(Block(a, b, True))
            elif a.is_leaf and b.is_leaf:
                self.blocks.append(Block(a, b, False))
            else:
                ach = a.children or [a]
                bch = b.children or [b]
                for x in ach:
                    for y in bch:
                        stack.append((x, y))

    @property
    def shape(self):
        return (len(self.row_tree.points), len(self.col_tree.points))

    @property
    def far(self):
        return [b for b in self.blocks if b.admissible]

    @property
    def near(self):
        return [b for b in self.blocks if not b.admissible]

    def coverage(self):
        """Number of blocks covering each (i, j); a partition gives all ones."""
        cov = np.zeros(self.shape, dtype=np.int32)
        for blk in self.blocks:
            cov[np.ix_(blk.rows.indices, blk.cols.indices)] += 1
        return cov

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "rows", "cols", "n_rows", "n_cols", "admissible"])
            for k, blk in enumerate(self.blocks):
                w.writerow([k, " ".join(map(str, blk.rows.indices)), " ".join(map(str, blk.cols.indices)),
                            blk.rows.size, blk.cols.size, int(blk.admissible)])


def build_block_tree(rows, cols, eta=0.8):
    return BlockTree(rows, cols, eta)
