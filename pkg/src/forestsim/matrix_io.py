"""Matrix export: CSV for small matrices, row-tiled raw binary with a JSON header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import proximity as prox_mod

MATRIX_FORMAT = "forestsim.matrix"
MATRIX_VERSION = 1
DEFAULT_TILE_ROWS = 1024


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def header_path(path) -> Path:
    return _stem(path).with_suffix(".json")


def data_path(path) -> Path:
    return _stem(path).with_suffix(".bin")


class TileWriter:
    """Append row tiles of an ``(m, n)`` matrix to ``<stem>.bin``.

    The header ``<stem>.json`` is written on :meth:`close`, once all ``m``
    rows have arrived. Use as a context manager.
    """

    def __init__(self, path, m: int, n: int, kind: str, quantity: str = "proximity",
                 n_trees: int | None = None, tile_rows: int = DEFAULT_TILE_ROWS, dtype: str = "<f8",
                 extra: dict | None = None):
        if tile_rows < 1:
            raise ValueError("tile_rows must be positive")
        self.path = _stem(path)
        self.m, self.n = int(m), int(n)
        self.dtype = np.dtype(dtype)
        self.header = {
            "format": MATRIX_FORMAT,
            "version": MATRIX_VERSION,
            "m": self.m,
            "n": self.n,
            "kind": kind,
            "quantity": quantity,
            "T": n_trees,
            "dtype": self.dtype.str,
            "order": "row-major",
            "sentinel": "nan",
            "tile_rows": int(tile_rows),
            "n_tiles": 0,
            **(extra or {}),
        }
        self.rows_written = 0
        self._fh = open(data_path(self.path), "wb")

    def write(self, block: np.ndarray) -> None:
        block = np.asarray(block)
        if block.ndim != 2 or block.shape[1] != self.n:
            raise ValueError(f"tile must have {self.n} columns, got shape {block.shape}")
        if self.rows_written + block.shape[0] > self.m:
            raise ValueError("more rows written than declared")
        self._fh.write(np.ascontiguousarray(block, dtype=self.dtype).tobytes())
        self.rows_written += block.shape[0]
        self.header["n_tiles"] += 1

    def close(self) -> None:
        self._fh.close()
        if self.rows_written != self.m:
            raise ValueError(f"declared {self.m} rows but wrote {self.rows_written}")
        header_path(self.path).write_text(json.dumps(self.header, indent=2, sort_keys=True) + "\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *exc):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def save_matrix(path, values: np.ndarray, kind: str, quantity: str = "proximity", n_trees: int | None = None,
                tile_rows: int = DEFAULT_TILE_ROWS, dtype: str = "<f8", extra: dict | None = None) -> Path:
    values = np.asarray(values)
    m, n = values.shape
    with TileWriter(path, m, n, kind, quantity, n_trees, tile_rows, dtype, extra) as w:
        for a in range(0, m, tile_rows):
            w.write(values[a:a + tile_rows])
    return header_path(path)


def read_header(path) -> dict:
    hp = header_path(path)
    if not hp.exists():
        raise FileNotFoundError(f"matrix header not found: {hp}")
    header = json.loads(hp.read_text())
    if header.get("format") != MATRIX_FORMAT:
        raise ValueError(f"{hp} is not a {MATRIX_FORMAT} header")
    return header


def load_matrix(path) -> tuple[np.ndarray, dict]:
    header = read_header(path)
    raw = np.fromfile(data_path(path), dtype=np.dtype(header["dtype"]))
    expected = header["m"] * header["n"]
    if raw.size != expected:
        raise ValueError(f"{data_path(path)} holds {raw.size} values, header declares {expected}")
    return raw.reshape(header["m"], header["n"]).astype(np.float64, copy=False), header


def save_matrix_csv(path, values: np.ndarray) -> None:
    np.savetxt(path, np.asarray(values, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


def stream_proximity(path, forest, row_leaves, col_leaves=None, mode: str = prox_mod.ORIGINAL,
                     tile_rows: int = DEFAULT_TILE_ROWS, n_jobs=None, dtype: str = "<f8") -> dict:
    """Compute a proximity matrix tile by tile straight to disk.

    ``col_leaves=None`` means the square train-vs-train case; otherwise rows
    are external points against the training columns. Only one tile of
    counts is resident at a time. Returns the header.
    """
    row_leaves = prox_mod._leaves(row_leaves)
    square = col_leaves is None
    cols = row_leaves if square else prox_mod._leaves(col_leaves)
    m, T = row_leaves.shape
    n = cols.shape[0]
    oob = prox_mod._oob_mask(forest) if mode == prox_mod.OOB else None
    if oob is not None and oob.shape != cols.shape:
        raise ValueError("OOB mask does not match the training leaf matrix")
    undefined = 0
    with TileWriter(path, m, n, mode, "proximity", T, tile_rows, dtype) as w:
        for a in range(0, m, tile_rows):
            b = min(m, a + tile_rows)
            rows = np.ascontiguousarray(row_leaves[a:b])
            if mode == prox_mod.ORIGINAL:
                counts = prox_mod._cooccurrence(rows, cols, n_jobs=n_jobs)
                tile = counts / float(T)
            else:
                row_mask = np.ascontiguousarray(oob[a:b]) if square else None
                counts = prox_mod._cooccurrence(rows, cols, row_mask, oob, n_jobs=n_jobs)
                if square:
                    den = prox_mod._joint_counts(oob[a:b], oob)
                else:
                    den = np.broadcast_to(oob.sum(axis=1)[None, :], counts.shape)
                tile = np.full(counts.shape, np.nan)
                np.divide(counts, den, out=tile, where=den > 0)
                if square:
                    tile[np.arange(b - a), np.arange(a, b)] = 1.0
                undefined += int(np.isnan(tile).sum())
            w.write(tile)
        w.header["undefined_entries"] = undefined
    return w.header
