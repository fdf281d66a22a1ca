"""Readers and writers for the on-disk dataset files and the graph store.

Edge list: ``src<TAB>dst`` per line, ``#`` comments.
Features: little-endian ``u64 n, u64 d_in`` header, then ``n*d_in`` float32 row-major.
Labels: one integer per line.  Masks: one of ``train|val|test|none`` per line.
"""

import struct

import numpy as np

from .graph import GraphError, build_graph

STORE_MAGIC = b"MUSG1"
MASK_CODES = {"none": 0, "train": 1, "val": 2, "test": 3}


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def read_edge_list(path):
    """Return ``(edges, line_numbers)`` as int64 arrays."""
    edges, where = [], []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
        where.append(lineno)
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2), np.asarray(where, dtype=np.int64)


def write_edge_list(path, edges):
    with open(path, "w", encoding="utf-8") as fh:
        for s, t in np.asarray(edges).reshape(-1, 2):
            fh.write(f"{int(s)}\t{int(t)}\n")


def read_features(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise GraphError(f"{path}: truncated feature header")
        n, d = struct.unpack("<QQ", head)
        body = fh.read()
    if len(body) != 4 * n * d:
        raise GraphError(f"{path}: expected {4 * n * d} payload bytes for {n}x{d}, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float64)


def write_features(path, X):
    X = np.asarray(X)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_labels(path):
    out = []
    for lineno, line in _lines(path):
        try:
            out.append(int(line))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: label {line!r} is not an integer") from None
    return np.asarray(out, dtype=np.int64)


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def read_masks(path):
    codes = []
    for lineno, line in _lines(path):
        if line not in MASK_CODES:
            raise GraphError(f"{path}:{lineno}: mask must be one of train|val|test|none, got {line!r}")
        codes.append(MASK_CODES[line])
    codes = np.asarray(codes, dtype=np.int64)
    return codes == 1, codes == 2, codes == 3


def write_masks(path, train, val, test):
    names = np.full(len(train), "none", dtype=object)
    names[np.asarray(val, bool)] = "val"
    names[np.asarray(test, bool)] = "test"
    names[np.asarray(train, bool)] = "train"
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{s}\n" for s in names)


def load_dataset(edge_file, feature_file, label_file, mask_file):
    """Parse the four dataset files into a validated :class:`Graph`."""
    X = read_features(feature_file)
    n = X.shape[0]
    edges, where = read_edge_list(edge_file)
    bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
    if len(bad):
        i = int(bad[0])
        raise GraphError(f"{edge_file}:{int(where[i])}: node id outside [0, {n}) "
                         f"in edge {tuple(int(v) for v in edges[i])}")
    labels = read_labels(label_file)
    if len(labels) != n:
        raise GraphError(f"{label_file}: {len(labels)} labels for {n} nodes")
    train, val, test = read_masks(mask_file)
    if len(train) != n:
        raise GraphError(f"{mask_file}: {len(train)} mask lines for {n} nodes")
    return build_graph(edges, n, X, labels, train, val, test)


def _put(fh, a, dtype):
    fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


def save_graph(g, path):
    """Write a graph store: magic, digest, sizes, then raw arrays."""
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(g.digest)
        fh.write(struct.pack("<QQQ", g.n, len(g.targets), g.num_features))
        _put(fh, g.offsets, "<u8")
        _put(fh, g.targets, "<u8")
        _put(fh, g.features, "<f8")
        _put(fh, g.labels, "<i8")
        split = g.train_mask * 1 + g.val_mask * 2 + g.test_mask * 3
        _put(fh, split, "<u1")


def load_graph(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != STORE_MAGIC:
        raise GraphError(f"{path}: not a graph store (bad magic)")
    try:
        digest = data[5:37]
        n, nnz, d = struct.unpack_from("<QQQ", data, 37)
        pos = 37 + 24
        sizes = [((n + 1) * 8, "<u8"), (nnz * 8, "<u8"), (n * d * 8, "<f8"), (n * 8, "<i8"), (n, "<u1")]
        arrays = []
        for nbytes, dtype in sizes:
            if pos + nbytes > len(data):
                raise GraphError(f"{path}: truncated graph store")
            arrays.append(np.frombuffer(data, dtype=dtype, count=nbytes // np.dtype(dtype).itemsize, offset=pos))
            pos += nbytes
    except struct.error:
        raise GraphError(f"{path}: truncated graph store") from None
    if pos != len(data):
        raise GraphError(f"{path}: trailing bytes in graph store")
    offsets, targets, X, labels, split = arrays
    rows = np.repeat(np.arange(n), np.diff(offsets.astype(np.int64)))
    g = build_graph(np.stack([rows, targets.astype(np.int64)], axis=1), n, X.reshape(n, d),
                    labels, split == 1, split == 2, split == 3)
    if g.digest != digest:
        raise GraphError(f"{path}: digest mismatch, store is corrupt")
    return g
