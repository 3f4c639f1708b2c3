import os
import re
import io
import logging
from typing import List, Optional, Tuple, Union, BinaryIO
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# Env var holding an os.pathsep separated list of directories with .mtx files
MATRIX_DIR_ENV = "KRYLOV_MATRIX_DIR"

DenseVector = np.ndarray


class DimensionError(ValueError):
    """Raised when vector and matrix lengths do not agree"""


class MatrixMarketError(ValueError):
    """Malformed or unsupported Matrix Market input"""

    def __init__(self, message: str, line_number: int = 0):
        self.line_number = line_number
        if line_number:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class MatrixSourceError(FileNotFoundError):
    """A matrix name could not be resolved to a file"""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Square real sparse matrix in compressed-row storage"""
    n: int
    row_ptr: np.ndarray  # length n+1
    col_idx: np.ndarray  # length nnz, strictly increasing within a row
    values: np.ndarray   # length nnz

    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False)
    _csr_t: sp.csc_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64).copy()
        col_idx = np.asarray(self.col_idx, dtype=np.int64).copy()
        values = np.asarray(self.values, dtype=np.float64).copy()
        n = int(self.n)

        if n < 1:
            raise ValueError(f"Matrix dimension must be positive, got {n}")
        if row_ptr.shape != (n + 1,):
            raise ValueError(f"row_ptr must have length {n + 1}, got {row_ptr.shape[0]}")
        nnz = int(row_ptr[-1])
        if row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must start at 0 and be nondecreasing")
        if col_idx.shape != (nnz,) or values.shape != (nnz,):
            raise ValueError(f"col_idx and values must have length nnz={nnz}")
        if nnz and (col_idx.min() < 0 or col_idx.max() >= n):
            raise ValueError(f"column index out of range for n={n}")
        for i in range(n):
            row = col_idx[row_ptr[i]:row_ptr[i + 1]]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"column indices of row {i} are not strictly increasing")

        for arr in (row_ptr, col_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, 'n', n)
        object.__setattr__(self, 'row_ptr', row_ptr)
        object.__setattr__(self, 'col_idx', col_idx)
        object.__setattr__(self, 'values', values)

        # scipy keeps explicit zeros, so the stored pattern survives
        csr = sp.csr_matrix((values, col_idx, row_ptr), shape=(n, n))
        object.__setattr__(self, '_csr', csr)
        object.__setattr__(self, '_csr_t', csr.T)

    @classmethod
    def from_triplets(cls, n: int, rows, cols, vals) -> 'CsrMatrix':
        """Build from 0-based coordinate triplets, summing duplicates"""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError(f"triplet index out of range for n={n}")
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls.from_scipy(coo)

    @classmethod
    def from_scipy(cls, matrix) -> 'CsrMatrix':
        """Convert any scipy sparse matrix"""
        if matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"Matrix must be square, got shape {matrix.shape}")
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, array) -> 'CsrMatrix':
        """Convert a dense square array, dropping exact zeros"""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise DimensionError(f"Matrix must be square, got shape {array.shape}")
        return cls.from_scipy(sp.csr_matrix(array))

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def is_symmetric(self) -> bool:
        diff = self._csr - self._csr.T
        return diff.count_nonzero() == 0

    def __str__(self) -> str:
        return f"CsrMatrix(n={self.n}, nnz={self.nnz})"


def _check_lengths(*vectors: np.ndarray):
    n = len(vectors[0])
    for v in vectors[1:]:
        if len(v) != n:
            raise DimensionError(f"Vector lengths differ: {n} vs {len(v)}")


def matvec(A: CsrMatrix, x: DenseVector) -> DenseVector:
    """y = A x, each row summed in stored column order"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise DimensionError(f"matvec: expected length {A.n}, got {x.shape}")
    return A._csr @ x


def matvec_transpose(A: CsrMatrix, x: DenseVector) -> DenseVector:
    """y = A^T x, scattered row by row"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise DimensionError(f"matvec_transpose: expected length {A.n}, got {x.shape}")
    return A._csr_t @ x


def dot(u: DenseVector, v: DenseVector) -> float:
    _check_lengths(u, v)
    return float(np.dot(u, v))


def axpy(a: float, u: DenseVector, v: DenseVector) -> DenseVector:
    """Return a*u + v as a new vector"""
    _check_lengths(u, v)
    return a * np.asarray(u, dtype=np.float64) + np.asarray(v, dtype=np.float64)


def norm2(u: DenseVector) -> float:
    return float(np.sqrt(np.dot(u, u)))


class MatrixMarketParser:
    """Reader for coordinate real general/symmetric Matrix Market files"""

    def __init__(self):
        self.patterns = {
            'header': re.compile(r'^%%MatrixMarket\s+(\S+)\s+(\S+)\s+(\S+)\s+(\S+)\s*$', re.IGNORECASE),
            'size': re.compile(r'^\s*(\d+)\s+(\d+)\s+(\d+)\s*$'),
            'entry': re.compile(r'^\s*(\d+)\s+(\d+)\s+(\S+)\s*$'),
        }
        self.supported_symmetry = {'general', 'symmetric'}

    def extract_header(self, line: str) -> str:
        """Validate the banner line and return the symmetry kind"""
        match = self.patterns['header'].match(line.strip())
        if not match:
            raise MatrixMarketError("missing %%MatrixMarket header", 1)
        obj, fmt, fld, symmetry = (g.lower() for g in match.groups())
        if obj != 'matrix' or fmt != 'coordinate':
            raise MatrixMarketError(f"unsupported format '{obj} {fmt}', need 'matrix coordinate'", 1)
        if fld != 'real':
            raise MatrixMarketError(f"unsupported field '{fld}', only 'real' is read", 1)
        if symmetry not in self.supported_symmetry:
            raise MatrixMarketError(f"unsupported symmetry '{symmetry}'", 1)
        return symmetry

    def extract_size(self, line: str, line_number: int) -> Tuple[int, int]:
        """Parse the 'rows cols nnz' line"""
        match = self.patterns['size'].match(line)
        if not match:
            raise MatrixMarketError(f"malformed size line '{line.strip()}'", line_number)
        rows, cols, nnz = (int(g) for g in match.groups())
        if rows != cols:
            raise MatrixMarketError(f"matrix is not square ({rows}x{cols})", line_number)
        if rows < 1:
            raise MatrixMarketError("matrix dimension must be positive", line_number)
        return rows, nnz

    def extract_entry(self, line: str, line_number: int, n: int) -> Tuple[int, int, float]:
        """Parse one 1-based 'i j value' line into 0-based indices"""
        match = self.patterns['entry'].match(line)
        if not match:
            raise MatrixMarketError(f"malformed entry '{line.strip()}'", line_number)
        try:
            i, j, value = int(match.group(1)), int(match.group(2)), float(match.group(3))
        except ValueError as e:
            raise MatrixMarketError(f"bad number: {e}", line_number)
        if not (1 <= i <= n and 1 <= j <= n):
            raise MatrixMarketError(f"index ({i}, {j}) outside 1..{n}", line_number)
        return i - 1, j - 1, value

    def parse_text(self, text: str) -> CsrMatrix:
        """Parse a complete Matrix Market document"""
        lines = text.splitlines()
        if not lines:
            raise MatrixMarketError("empty input", 1)
        symmetry = self.extract_header(lines[0])

        n = nnz = None
        count = 0
        rows: List[int] = []
        cols: List[int] = []
        vals: List[float] = []
        for line_number, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.lstrip().startswith('%'):
                continue
            if n is None:
                n, nnz = self.extract_size(line, line_number)
                continue
            if count == nnz:
                raise MatrixMarketError(f"more than the declared {nnz} entries", line_number)
            i, j, value = self.extract_entry(line, line_number, n)
            count += 1
            rows.append(i)
            cols.append(j)
            vals.append(value)
            # Symmetric storage keeps one triangle
            if symmetry == 'symmetric' and i != j:
                rows.append(j)
                cols.append(i)
                vals.append(value)

        if n is None:
            raise MatrixMarketError("missing size line", len(lines))
        if count != nnz:
            raise MatrixMarketError(f"expected {nnz} entries, found {count}", len(lines))

        matrix = CsrMatrix.from_triplets(n, rows, cols, vals)
        logger.info(f"Read Matrix Market matrix: n={matrix.n}, nnz={matrix.nnz}, symmetry={symmetry}")
        return matrix

    def parse_file(self, path: str) -> CsrMatrix:
        with open(path, 'rb') as f:
            return read_matrix_market(f)


def read_matrix_market(source: Union[BinaryIO, bytes, str, os.PathLike]) -> CsrMatrix:
    """Read a Matrix Market matrix from a binary stream, raw bytes or a path"""
    if isinstance(source, (str, os.PathLike)):
        with open(source, 'rb') as f:
            data = f.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    try:
        text = data.decode('ascii')
    except UnicodeDecodeError as e:
        raise MatrixMarketError(f"input is not ASCII: {e}")
    return MatrixMarketParser().parse_text(text)


def write_matrix_market(A: CsrMatrix, stream: Union[BinaryIO, io.TextIOBase]):
    """Write A as coordinate real general with %.17g values"""
    lines = ["%%MatrixMarket matrix coordinate real general", f"{A.n} {A.n} {A.nnz}"]
    for i in range(A.n):
        for jj in range(A.row_ptr[i], A.row_ptr[i + 1]):
            lines.append(f"{i + 1} {A.col_idx[jj] + 1} {A.values[jj]:.17g}")
    text = "\n".join(lines) + "\n"
    if isinstance(stream, io.TextIOBase):
        stream.write(text)
    else:
        stream.write(text.encode('ascii'))


def find_matrix(name: str, search_path: Optional[str] = None) -> str:
    """Resolve a bare matrix name against KRYLOV_MATRIX_DIR"""
    if os.path.isfile(name):
        return name
    search_path = search_path if search_path is not None else os.environ.get(MATRIX_DIR_ENV, "")
    candidates = [name] if name.lower().endswith('.mtx') else [name + '.mtx', name]
    for directory in filter(None, search_path.split(os.pathsep)):
        for candidate in candidates:
            path = os.path.join(directory, candidate)
            if os.path.isfile(path):
                return path
    raise MatrixSourceError(f"Matrix '{name}' not found (searched {MATRIX_DIR_ENV}='{search_path}')")


def generate_stencil(m: int, convection: float = 0.0, seed: int = 0) -> CsrMatrix:
    """5-point convection-diffusion operator on an m x m grid, row-major ordering"""
    if m < 2:
        raise ValueError(f"Grid size must be at least 2, got {m}")
    rng = np.random.default_rng(seed)
    # Per grid row jitter of the convection strength
    strength = convection * (1.0 + 0.5 * rng.uniform(-1.0, 1.0, size=m))

    rows, cols, vals = [], [], []
    for iy in range(m):
        c = strength[iy]
        for ix in range(m):
            i = iy * m + ix
            neighbours = [
                (iy - 1, ix, -1.0 - 0.5 * c),  # south
                (iy, ix - 1, -1.0 - c),        # west
                (iy, ix, 4.0),
                (iy, ix + 1, -1.0 + c),        # east
                (iy + 1, ix, -1.0 + 0.5 * c),  # north
            ]
            for jy, jx, value in neighbours:
                if 0 <= jy < m and 0 <= jx < m:
                    rows.append(i)
                    cols.append(jy * m + jx)
                    vals.append(value)
    return CsrMatrix.from_triplets(m * m, rows, cols, vals)


def generate_random(n: int, density: float, seed: int = 0) -> CsrMatrix:
    """Seeded sparse nonsymmetric matrix, strictly diagonally dominant by rows"""
    if n < 1:
        raise ValueError(f"Matrix dimension must be positive, got {n}")
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"Density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    dense = np.where(mask, rng.uniform(-1.0, 1.0, size=(n, n)), 0.0)
    np.fill_diagonal(dense, np.abs(dense).sum(axis=1) + 1.0 + rng.random(n))
    return CsrMatrix.from_dense(dense)
