"""Graph construction, Laplacian assembly, synthetic generators, and I/O.

Graphs are symmetric, nonnegatively weighted, zero-diagonal, and backed by
CSR adjacency. All downstream modules consume this representation.
"""

import hashlib
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist


class GraphFormatError(ValueError):
    """Malformed graph/feature/label file or invalid graph data."""


class DuplicatePointsError(ValueError):
    """KNN construction hit vertices whose K-th neighbor distance is zero."""

    def __init__(self, message, duplicates):
        super().__init__(message)
        self.duplicates = duplicates


_FEATURES_MAGIC = b"SPECTRALIGNFEAT1"  # 16 bytes, binary feature header


class Graph:
    """Undirected weighted graph.

    Parameters
    ----------
    adjacency : scipy sparse or dense array, shape (n, n)
        Symmetric nonnegative weight matrix with zero diagonal. Symmetry is
        enforced exactly at construction.
    validate : bool
        Skip invariant checks when False (trusted internal callers).
    """

    def __init__(self, adjacency, validate=True):
        W = sp.csr_matrix(adjacency, dtype=np.float64)
        W.eliminate_zeros()
        if validate:
            if W.shape[0] != W.shape[1]:
                raise GraphFormatError("adjacency must be square")
            if (W != W.T).nnz != 0:
                raise GraphFormatError("adjacency must be exactly symmetric")
            if W.diagonal().any():
                raise GraphFormatError("adjacency must have zero diagonal")
            if W.nnz and W.data.min() < 0:
                raise GraphFormatError("edge weights must be nonnegative")
            if W.nnz and not np.all(np.isfinite(W.data)):
                raise GraphFormatError("edge weights must be finite")
        self.adjacency = W
        self.n_vertices = W.shape[0]
        self.degrees = np.asarray(W.sum(axis=1)).ravel()
        self._n_components = None

    @property
    def n_components(self):
        if self._n_components is None:
            n, labels = connected_components(self.adjacency, directed=False)
            self._n_components = n
            self._component_labels = labels
        return self._n_components

    @property
    def component_labels(self):
        self.n_components
        return self._component_labels

    @property
    def is_connected(self):
        return self.n_components == 1

    def laplacian(self):
        """Unnormalized Laplacian L = D - W as CSR."""
        D = sp.diags(self.degrees)
        return (D - self.adjacency).tocsr()

    def __repr__(self):
        return "Graph(n_vertices=%d, n_edges=%d)" % (
            self.n_vertices,
            self.adjacency.nnz // 2,
        )


@dataclass(frozen=True)
class LabelSet:
    """Partial labeling: vertex indices with class ids in [0, num_classes).

    Entries are stored sorted by vertex index, so one-hot encodings line up
    with the index maps of :func:`grounded_blocks` regardless of the order
    labels were supplied in.
    """

    indices: np.ndarray
    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValueError("label set must be nonempty")
        if idx.size != val.size:
            raise ValueError("indices and values must have equal length")
        if np.unique(idx).size != idx.size:
            raise ValueError("label vertex indices must be unique")
        order = np.argsort(idx)
        idx, val = idx[order], val[order]
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if val.min() < 0 or val.max() >= self.num_classes:
            raise ValueError("class ids must lie in [0, num_classes)")

    def __len__(self):
        return self.indices.size

    def add(self, indices, values):
        """New LabelSet with extra (vertex, class) entries appended."""
        return LabelSet(
            np.concatenate([self.indices, np.atleast_1d(indices)]),
            np.concatenate([self.values, np.atleast_1d(values)]),
            self.num_classes,
        )


@dataclass
class GroundedBlocks:
    """Grounded Laplacian L_uu and cross block L_ul with the index maps."""

    L_uu: sp.csr_matrix
    L_ul: sp.csr_matrix
    unlabeled: np.ndarray
    labeled: np.ndarray


def knn_weights(features, k=10):
    """Directed KNN Gaussian weights w_ij = exp(-4 ||x_i-x_j||^2 / d_K(x_i)^2).

    Edges run from each point to its k nearest neighbors, ties at the k-th
    distance included. Returns the (asymmetric) CSR weight matrix.

    Raises
    ------
    DuplicatePointsError
        If any d_K(x_i) is zero (more than k coincident copies of a point).
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be 2-D (rows are points)")
    m = X.shape[0]
    if not (1 <= k < m):
        raise ValueError("need 1 <= k < n_rows, got k=%d, n_rows=%d" % (k, m))
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")

    if m < 20_000:
        rows, cols, dk = _knn_bruteforce(X, k)
    else:
        rows, cols, dk = _knn_tree(X, k)

    if np.any(dk == 0.0):
        bad = np.flatnonzero(dk == 0.0)
        raise DuplicatePointsError(
            "d_K is zero for %d point(s) (duplicate-heavy data); "
            "first offenders: %s" % (bad.size, bad[:10].tolist()),
            duplicates=bad,
        )

    d2 = np.sum((X[rows] - X[cols]) ** 2, axis=1)
    w = np.exp(-4.0 * d2 / dk[rows] ** 2)
    W = sp.csr_matrix((w, (rows, cols)), shape=(m, m))
    return W


def _knn_bruteforce(X, k, block=1024):
    m = X.shape[0]
    rows_out, cols_out = [], []
    dk = np.empty(m)
    for start in range(0, m, block):
        stop = min(start + block, m)
        D = cdist(X[start:stop], X)
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # k-th order statistic over the other rows
        part = np.partition(D, k - 1, axis=1)
        dk_blk = part[:, k - 1]
        dk[start:stop] = dk_blk
        with np.errstate(invalid="ignore"):
            mask = D <= dk_blk[:, None]  # ties at the k-th distance included
        r, c = np.nonzero(mask)
        rows_out.append(r + start)
        cols_out.append(c)
    return np.concatenate(rows_out), np.concatenate(cols_out), dk


def _knn_tree(X, k):
    tree = cKDTree(X)
    dist, _ = tree.query(X, k=k + 1)
    dk = dist[:, k]  # k-th neighbor excluding self
    rows, cols = [], []
    for i in range(X.shape[0]):
        if dk[i] == 0.0:
            continue  # reported by the caller
        nbrs = tree.query_ball_point(X[i], dk[i] * (1 + 1e-12))
        for j in nbrs:
            if j != i:
                rows.append(i)
                cols.append(j)
    return np.asarray(rows), np.asarray(cols), dk


def build_knn_graph(features, k=10):
    """Symmetric KNN graph: directed Gaussian weights, then W <- (W + W^T)/2."""
    W = knn_weights(features, k)
    W = (W + W.T) * 0.5
    W.setdiag(0.0)
    W.eliminate_zeros()
    g = Graph(W, validate=False)
    if not g.is_connected:
        warnings.warn(
            "KNN graph has %d connected components" % g.n_components,
            stacklevel=2,
        )
    return g


def laplacian(graph):
    """Unnormalized Laplacian L = D - W of a Graph (CSR)."""
    return graph.laplacian()


def grounded_blocks(graph, labeled):
    """Principal submatrix L_uu on unlabeled vertices plus cross block L_ul.

    Parameters
    ----------
    graph : Graph
    labeled : LabelSet or 1-D index array

    Returns
    -------
    GroundedBlocks with sorted index maps into the original vertex order.
    """
    idx = labeled.indices if isinstance(labeled, LabelSet) else np.asarray(labeled)
    idx = np.unique(np.asarray(idx, dtype=np.int64))
    M = graph.n_vertices
    if idx.size == 0:
        raise ValueError("labeled set must be nonempty")
    if idx.size >= M:
        raise ValueError("labeled set must be a proper subset of the vertices")
    if idx.min() < 0 or idx.max() >= M:
        raise ValueError("labeled index out of range")
    mask = np.ones(M, dtype=bool)
    mask[idx] = False
    unlabeled = np.flatnonzero(mask)
    L = graph.laplacian().tocsr()
    L_uu = L[unlabeled][:, unlabeled].tocsr()
    L_ul = L[unlabeled][:, idx].tocsr()
    return GroundedBlocks(L_uu=L_uu, L_ul=L_ul, unlabeled=unlabeled, labeled=idx)


def gen_barbell(clique_size):
    """Two complete unit-weight cliques joined by a single bridge edge."""
    if clique_size < 2:
        raise ValueError("clique_size must be >= 2")
    c = clique_size
    n = 2 * c
    A = np.zeros((n, n))
    A[:c, :c] = 1.0
    A[c:, c:] = 1.0
    np.fill_diagonal(A, 0.0)
    # bridge between the last vertex of clique 0 and the first of clique 1
    A[c - 1, c] = A[c, c - 1] = 1.0
    return Graph(A)


def gen_gaussian_ring(n_per_cluster=300, sigma=0.17, seed=0):
    """Ring of 8 Gaussian clusters on the unit circle with alternating classes.

    Cluster i has mean (cos(pi*i/4), sin(pi*i/4)) and isotropic standard
    deviation ``sigma``; class ids alternate 0,1,0,1,... around the ring.

    Returns
    -------
    features : ndarray, shape (8*n_per_cluster, 2)
    labels : ndarray of int, shape (8*n_per_cluster,)
    """
    if n_per_cluster < 1:
        raise ValueError("n_per_cluster must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for i in range(8):
        mu = np.array([np.cos(np.pi * i / 4), np.sin(np.pi * i / 4)])
        feats.append(mu + sigma * rng.standard_normal((n_per_cluster, 2)))
        labels.append(np.full(n_per_cluster, i % 2, dtype=np.int64))
    return np.vstack(feats), np.concatenate(labels)


def gaussian_ring_means():
    """The 8 cluster means of ``gen_gaussian_ring`` (rows)."""
    i = np.arange(8)
    return np.column_stack([np.cos(np.pi * i / 4), np.sin(np.pi * i / 4)])


# ---------------------------------------------------------------------------
# I/O: edge-list graphs, feature matrices, label files
# ---------------------------------------------------------------------------


def save_graph(graph, path):
    """Write edge-list text: header 'n_vertices <n>', then lines 'i j w', i<j."""
    W = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((W.col, W.row))
    with open(path, "w") as f:
        f.write("n_vertices %d\n" % graph.n_vertices)
        for r, c, w in zip(W.row[order], W.col[order], W.data[order]):
            f.write("%d %d %s\n" % (r, c, repr(float(w))))


def load_graph(path):
    """Parse an edge-list file written by :func:`save_graph`."""
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != "n_vertices":
            raise GraphFormatError("bad header: expected 'n_vertices <n>'")
        try:
            n = int(header[1])
        except ValueError:
            raise GraphFormatError("bad header vertex count %r" % header[1])
        if n <= 0:
            raise GraphFormatError("vertex count must be positive")
        rows, cols, data = [], [], []
        seen = set()
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise GraphFormatError("line %d: expected 'i j w'" % lineno)
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise GraphFormatError("line %d: could not parse 'i j w'" % lineno)
            if not 0 <= i < n or not 0 <= j < n:
                raise GraphFormatError("line %d: index out of range" % lineno)
            if i >= j:
                raise GraphFormatError(
                    "line %d: edges must satisfy i < j (one undirected edge "
                    "per line); asymmetric or duplicate listings are invalid"
                    % lineno
                )
            if (i, j) in seen:
                raise GraphFormatError("line %d: duplicate edge (%d, %d)" % (lineno, i, j))
            if w < 0 or not np.isfinite(w):
                raise GraphFormatError("line %d: bad weight %r" % (lineno, w))
            seen.add((i, j))
            rows += [i, j]
            cols += [j, i]
            data += [w, w]
    W = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return Graph(W)


def save_features(features, path, binary=False):
    """Write features as text ('M d' header) or binary (16-byte magic, f64 LE)."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be 2-D")
    m, d = X.shape
    if binary:
        with open(path, "wb") as f:
            f.write(_FEATURES_MAGIC)
            f.write(struct.pack("<QQ", m, d))
            f.write(X.astype("<f8").tobytes(order="C"))
    else:
        with open(path, "w") as f:
            f.write("%d %d\n" % (m, d))
            for row in X:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_features(path):
    """Load a feature matrix saved by :func:`save_features` (either format)."""
    with open(path, "rb") as f:
        head = f.read(len(_FEATURES_MAGIC))
        if head == _FEATURES_MAGIC:
            m, d = struct.unpack("<QQ", f.read(16))
            buf = f.read()
            if len(buf) != m * d * 8:
                raise GraphFormatError(
                    "binary feature payload has %d bytes, expected %d"
                    % (len(buf), m * d * 8)
                )
            X = np.frombuffer(buf, dtype="<f8").reshape(m, d).copy()
            if m < 1:
                raise GraphFormatError("feature matrix must have >= 1 row")
            return X
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise GraphFormatError("bad feature header: expected 'M d'")
        try:
            m, d = int(header[0]), int(header[1])
        except ValueError:
            raise GraphFormatError("bad feature header: expected integers 'M d'")
        if m < 1 or d < 1:
            raise GraphFormatError("feature dimensions must be positive")
        X = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if X.shape != (m, d):
        raise GraphFormatError(
            "feature body shape %s does not match header (%d, %d)"
            % (X.shape, m, d)
        )
    if not np.all(np.isfinite(X)):
        raise GraphFormatError("features must be finite")
    return X


def features_checksum(features):
    """SHA-256 hex digest of the row-major float64 bytes of a feature matrix."""
    X = np.ascontiguousarray(features, dtype="<f8")
    return hashlib.sha256(X.tobytes(order="C")).hexdigest()


def save_labels(labels, path):
    """Write a LabelSet as lines 'index class'."""
    with open(path, "w") as f:
        for i, v in zip(labels.indices, labels.values):
            f.write("%d %d\n" % (i, v))


def load_labels(path, num_classes=None):
    """Read 'index class' lines; num_classes defaults to max class + 1."""
    idx, val = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise GraphFormatError("line %d: expected 'index class'" % lineno)
            try:
                idx.append(int(parts[0]))
                val.append(int(parts[1]))
            except ValueError:
                raise GraphFormatError("line %d: expected integers" % lineno)
    if not idx:
        raise GraphFormatError("label file is empty")
    if num_classes is None:
        num_classes = max(val) + 1
    return LabelSet(np.asarray(idx), np.asarray(val), num_classes)
