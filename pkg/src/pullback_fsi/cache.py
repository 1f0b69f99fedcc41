"""Portable little-endian cache of operators, bases and the lifting matrix.

Layout::

    b"PFSI" | u32 version | u32 nx | u32 nz | u32 n_matrices
    per matrix: u32 name_len | name | u64 rows | u64 cols | u64 nnz
                | u64[rows+1] indptr | u64[nnz] indices | f64[nnz] data
    u32 m | per Stokes mode: f64 lambda | f64[n_vel] e | f64[n_cells] p
    u32 n | per plate mode:  f64 kappa  | f64[n_beam] g
    f64[n_vel * n_beam] lifting matrix, column-major
    32-byte sha256 of everything above
"""

from __future__ import annotations

import hashlib
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .discretization import DiscreteOperators, build_grid
from .plate_basis import PlateBasis, mean_projector
from .stokes_basis import LiftingOperator, StokesBasis

__all__ = ["CacheBundle", "StaleCacheError", "CACHE_VERSION", "write_cache", "read_cache", "read_header"]

log = logging.getLogger(__name__)

MAGIC = b"PFSI"
CACHE_VERSION = 1
_MATRIX_ORDER = ("D", "Gp", "Lv", "B4", "T", "m", "Mv", "Mb", "Mp")


class StaleCacheError(RuntimeError):
    """Cache contents do not match what the caller expects."""

    def __init__(self, field: str, found, expected):
        super().__init__(f"stale cache: field '{field}' is {found}, expected {expected}")
        self.field = field
        self.found = found
        self.expected = expected


@dataclass(eq=False)
class CacheBundle:
    ops: DiscreteOperators
    stokes: StokesBasis
    plate: PlateBasis
    lift: LiftingOperator
    checksum: str = ""


def _u32(x: int) -> bytes:
    return struct.pack("<I", int(x))


def _u64(x: int) -> bytes:
    return struct.pack("<Q", int(x))


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def write_cache(path: str | Path, ops: DiscreteOperators, stokes: StokesBasis, plate: PlateBasis,
                lift: LiftingOperator) -> str:
    """Serialise everything and return the sha256 hex digest."""
    g = ops.grid
    buf = io.BytesIO()
    mats = ops.matrices()
    buf.write(MAGIC + _u32(CACHE_VERSION) + _u32(g.nx) + _u32(g.nz) + _u32(len(mats)))
    for name, A in mats.items():
        A = sp.csr_matrix(A)
        A.sort_indices()
        raw = name.encode("utf-8")
        buf.write(_u32(len(raw)) + raw + _u64(A.shape[0]) + _u64(A.shape[1]) + _u64(A.nnz))
        buf.write(np.asarray(A.indptr, dtype="<u8").tobytes())
        buf.write(np.asarray(A.indices, dtype="<u8").tobytes())
        buf.write(_f64(A.data))
    buf.write(_u32(stokes.m))
    for k in range(stokes.m):
        buf.write(_f64([stokes.lambdas[k]]) + _f64(stokes.E[:, k]) + _f64(stokes.P[:, k]))
    buf.write(_u32(plate.n))
    for k in range(plate.n):
        buf.write(_f64([plate.kappas[k]]) + _f64(plate.G[:, k]))
    buf.write(_f64(lift.Nmat.ravel(order="F")))
    body = buf.getvalue()
    digest = hashlib.sha256(body).digest()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(body + digest)
    log.info("wrote cache %s (%d bytes, sha256 %s)", path, len(body) + 32, digest.hex()[:16])
    return digest.hex()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StaleCacheError("length", len(self.data), f">= {self.pos + n} bytes")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)

    def u64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<u8").astype(np.int64)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(20)
    if len(head) < 20 or head[:4] != MAGIC:
        raise StaleCacheError("magic", head[:4], MAGIC)
    version, nx, nz, nmat = struct.unpack("<IIII", head[4:20])
    return {"version": version, "nx": nx, "nz": nz, "n_matrices": nmat}


def read_cache(path: str | Path, expect: dict | None = None) -> CacheBundle:
    """Load and verify a cache; ``expect`` may pin ``nx``, ``nz``, ``m``, ``n``."""
    expect = dict(expect or {})
    raw = Path(path).read_bytes()
    if len(raw) < 52:
        raise StaleCacheError("length", len(raw), ">= 52 bytes")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise StaleCacheError("checksum", digest.hex()[:16], hashlib.sha256(body).hexdigest()[:16])
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise StaleCacheError("magic", body[:4], MAGIC)
    version = r.u32()
    if version != CACHE_VERSION:
        raise StaleCacheError("version", version, CACHE_VERSION)
    nx, nz = r.u32(), r.u32()
    for name, val in (("nx", nx), ("nz", nz)):
        if name in expect and expect[name] != val:
            raise StaleCacheError(name, val, expect[name])
    nmat = r.u32()
    mats = {}
    for _ in range(nmat):
        name = r.take(r.u32()).decode("utf-8")
        rows, cols, nnz = r.u64(), r.u64(), r.u64()
        indptr = r.u64s(rows + 1)
        indices = r.u64s(nnz)
        data = r.f64(nnz)
        mats[name] = sp.csr_matrix((data, indices, indptr), shape=(rows, cols))
    missing = [k for k in _MATRIX_ORDER if k not in mats]
    if missing:
        raise StaleCacheError("matrices", sorted(mats), list(_MATRIX_ORDER))

    grid = build_grid(nx, nz)
    ops = DiscreteOperators(
        grid=grid, D=mats["D"], Gp=mats["Gp"], Lv=mats["Lv"], B4=mats["B4"], T=mats["T"],
        m=mats["m"].toarray().ravel(), Mv=mats["Mv"], Mb=mats["Mb"], Mp=mats["Mp"],
    )
    m = r.u32()
    if "m" in expect and expect["m"] != m:
        raise StaleCacheError("m", m, expect["m"])
    lam, E, P = np.empty(m), np.empty((grid.n_vel, m)), np.empty((grid.n_cells, m))
    for k in range(m):
        lam[k] = r.f64(1)[0]
        E[:, k] = r.f64(grid.n_vel)
        P[:, k] = r.f64(grid.n_cells)
    n = r.u32()
    if "n" in expect and expect["n"] != n:
        raise StaleCacheError("n", n, expect["n"])
    kap, G = np.empty(n), np.empty((grid.n_beam, n))
    for k in range(n):
        kap[k] = r.f64(1)[0]
        G[:, k] = r.f64(grid.n_beam)
    Nmat = r.f64(grid.n_vel * grid.n_beam).reshape((grid.n_vel, grid.n_beam), order="F")
    if r.pos != len(body):
        raise StaleCacheError("length", len(body), r.pos)

    wv, wb = ops.mv_diag, ops.mb_diag
    # residuals are recomputed, not stored
    A = -ops.Lv
    wp = ops.Mp.diagonal()
    inner = grid.interior_mask
    R = (A @ E - lam[None, :] * (wv[:, None] * E) - ops.D.T @ (wp[:, None] * P))[inner]
    s_res = np.linalg.norm(R, axis=0) / np.maximum(lam * np.linalg.norm((wv[:, None] * E)[inner], axis=0), 1e-300)
    Pm = mean_projector(ops)
    B4 = ops.B4.toarray()
    p_res = np.linalg.norm(Pm @ (B4 @ (Pm @ G)) - G * kap[None, :], axis=0) / np.maximum(
        kap * np.linalg.norm(G, axis=0), 1e-300)
    stokes = StokesBasis(lambdas=lam, E=E, P=P, weights=wv.copy(), residuals=s_res)
    plate = PlateBasis(kappas=kap, G=G, P=Pm, weights=wb.copy(), mean=ops.m.copy(), residuals=p_res)
    lift = LiftingOperator(Nmat=Nmat, Pmat=np.zeros((grid.n_cells, 0)), mean=ops.m.copy())
    return CacheBundle(ops, stokes, plate, lift, digest.hex())
