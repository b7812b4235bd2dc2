"""Streaming orthogonal alignment between a source and a canonical space.

Co-occurring ``(src, tgt)`` pairs are buffered; every ``cadence`` pairs the
buffer's cross-covariance ``E = X_src^T X_tgt`` is added to the cumulative
``M`` and the map is re-solved as the orthogonal Procrustes problem
``T = U V^T`` with ``M = U S V^T``. Source vectors are mapped with
``v @ T``.

Each refresh reports the drift ``||T_new - T_prev||_2`` and checks it
against the perturbation bound ``2 ||E||_2 / sigma_min(M_prev)``.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import atomic
from .errors import (
    ChecksumMismatchError,
    DimensionMismatchError,
    InvalidDimensionError,
    NoConvergenceError,
    PartialWriteError,
)
from .vecmath import normalize, spectral_norm, svd

MAGIC = "LUMABRIDGE1"
MIN_CADENCE, MAX_CADENCE = 64, 4096
WELL_CONDITIONED = 1e-6
APPLY_NORM_TOL = 1e-5


@dataclass(frozen=True)
class RefreshReport:
    refresh_count: int
    pairs_seen: int
    epsilon: float
    sigma_min: float
    e_norm: float
    bound: float | None  # None when sigma_min_prev is below the guard
    bound_ok: bool | None
    ok: bool = True
    error: str | None = None


class Bridge:
    """Orthogonal source -> canonical map refreshed every ``cadence`` pairs."""

    def __init__(self, d: int, cadence: int = 512) -> None:
        if d < 1:
            raise InvalidDimensionError(f"bridge dimension must be >= 1, got {d}")
        if not MIN_CADENCE <= cadence <= MAX_CADENCE:
            raise ValueError(f"cadence must be in [{MIN_CADENCE}, {MAX_CADENCE}], got {cadence}")
        self.d = d
        self.cadence = cadence
        self.T = np.eye(d)
        self.M = np.zeros((d, d))
        self.epsilon = 0.0
        self.sigma_min_prev = 0.0
        self.refresh_count = 0
        self.pairs_seen = 0
        self.history: list[float] = []
        self._src: list[np.ndarray] = []
        self._tgt: list[np.ndarray] = []
        self._lock = threading.Lock()

    @property
    def buffered(self) -> int:
        return len(self._src)

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.d,):
            raise DimensionMismatchError(f"expected dimension {self.d}, got {v.shape}")
        return v

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        T = self.T  # single reference read: old or new map, never a mix
        out = v @ T
        norm = float(np.linalg.norm(out))
        if abs(norm - 1.0) > APPLY_NORM_TOL:
            raise ValueError(f"mapped vector norm {norm} outside unit tolerance; input must be unit")
        return normalize(out)

    def add_pair(self, src: np.ndarray, tgt: np.ndarray) -> RefreshReport | None:
        src, tgt = self._check(src), self._check(tgt)
        with self._lock:
            self._src.append(src)
            self._tgt.append(tgt)
            self.pairs_seen += 1
            if len(self._src) >= self.cadence:
                return self._refresh_locked()
        return None

    def refresh(self) -> RefreshReport:
        """Fold the current buffer into ``M`` and re-solve ``T``."""
        with self._lock:
            return self._refresh_locked()

    def _refresh_locked(self) -> RefreshReport:
        if self._src:
            E = np.vstack(self._src).T @ np.vstack(self._tgt)
        else:
            E = np.zeros((self.d, self.d))
        M_new = self.M + E
        e_norm = spectral_norm(E)
        try:
            u, s, v = svd(M_new)
        except NoConvergenceError as exc:
            self._src, self._tgt = [], []
            return RefreshReport(
                self.refresh_count, self.pairs_seen, self.epsilon, self.sigma_min_prev,
                e_norm, None, None, ok=False, error=str(exc),
            )
        T_new = u @ v.T
        eps = spectral_norm(T_new - self.T)
        if self.sigma_min_prev > WELL_CONDITIONED:
            bound = 2.0 * e_norm / self.sigma_min_prev
            bound_ok = eps <= bound
        else:
            bound, bound_ok = None, None
        sigma_min = float(s[-1])

        self.M = M_new
        self.T = T_new
        self.epsilon = eps
        self.sigma_min_prev = sigma_min
        self.refresh_count += 1
        self.history.append(eps)
        self._src, self._tgt = [], []
        return RefreshReport(self.refresh_count, self.pairs_seen, eps, sigma_min, e_norm, bound, bound_ok)

    # -- persistence -------------------------------------------------------

    def to_text(self) -> str:
        def row(arr: np.ndarray) -> str:
            return " ".join(struct.pack(">d", float(x)).hex() for x in arr)

        lines = [f"{MAGIC} d={self.d} refresh_count={self.refresh_count}"]
        lines += ["T " + row(r) for r in self.T]
        lines += ["M " + row(r) for r in self.M]
        lines.append("epsilon " + row([self.epsilon]))
        lines.append("sigma_min_prev " + row([self.sigma_min_prev]))
        lines.append(f"cadence {self.cadence}")
        lines.append(f"pairs_seen {self.pairs_seen}")
        lines.append(f"history {len(self.history)} " + row(self.history))
        lines.append(f"buffer {len(self._src)}")
        for s, t in zip(self._src, self._tgt):
            lines.append("S " + row(s))
            lines.append("G " + row(t))
        payload = "\n".join(lines) + "\n"
        return payload + f"CRC32={atomic.crc32(payload.encode()):08x}\n"

    @classmethod
    def from_text(cls, text: str, source: str = "bridge") -> "Bridge":
        body, sep, tail = text.rpartition("CRC32=")
        if not sep or not tail.endswith("\n"):
            raise ChecksumMismatchError(f"{source}: missing checksum trailer", part=source)
        try:
            recorded = int(tail.strip(), 16)
        except ValueError:
            raise ChecksumMismatchError(f"{source}: unreadable checksum", part=source) from None
        if atomic.crc32(body.encode()) != recorded:
            raise ChecksumMismatchError(f"{source}: checksum mismatch", part=source)

        def vals(tokens: list[str]) -> np.ndarray:
            return np.array([struct.unpack(">d", bytes.fromhex(t))[0] for t in tokens])

        lines = body.splitlines()
        head = lines[0].split()
        if head[0] != MAGIC:
            raise ValueError(f"{source}: not a bridge file")
        d = int(head[1].split("=")[1])
        pos = 1
        T = np.vstack([vals(lines[pos + i].split()[1:]) for i in range(d)])
        pos += d
        M = np.vstack([vals(lines[pos + i].split()[1:]) for i in range(d)])
        pos += d
        fields: dict[str, list[str]] = {}
        while pos < len(lines) and not lines[pos].startswith("buffer"):
            key, *rest = lines[pos].split()
            fields[key] = rest
            pos += 1
        n_buf = int(lines[pos].split()[1])
        pos += 1
        bridge = cls(d, int(fields["cadence"][0]))
        bridge.T, bridge.M = T, M
        bridge.epsilon = float(vals(fields["epsilon"])[0])
        bridge.sigma_min_prev = float(vals(fields["sigma_min_prev"])[0])
        bridge.refresh_count = int(head[2].split("=")[1])
        bridge.pairs_seen = int(fields["pairs_seen"][0])
        bridge.history = vals(fields["history"][1:]).tolist()
        for i in range(n_buf):
            bridge._src.append(vals(lines[pos + 2 * i].split()[1:]))
            bridge._tgt.append(vals(lines[pos + 2 * i + 1].split()[1:]))
        return bridge

    def save(self, path: str | Path) -> None:
        """Atomically replace ``path``; the previous file is kept as ``.prev``."""
        path = Path(path)
        with self._lock:
            data = self.to_text().encode()
        tmp = atomic.write_temp(path, data, "bridge")
        prev = path.with_name(path.name + ".prev")
        if path.exists():
            os.replace(path, prev)
            atomic.boundary("bridge:main-retired")
        os.replace(tmp, path)
        atomic.boundary("bridge:renamed")

    @classmethod
    def load(cls, path: str | Path) -> "Bridge":
        """Load ``path``, falling back to ``.prev`` after an interrupted save.

        Raises:
            ChecksumMismatchError: the main file is present but corrupt.
            PartialWriteError: a save was interrupted and no good copy exists.
        """
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        prev = path.with_name(path.name + ".prev")
        if path.exists():
            return cls.from_text(path.read_text(), source=str(path))
        if tmp.exists():
            if prev.exists():
                return cls.from_text(prev.read_text(), source=str(prev))
            raise PartialWriteError(f"{path}: interrupted save and no previous copy")
        raise FileNotFoundError(path)

    def state_equals(self, other: "Bridge") -> bool:
        return (
            self.d == other.d
            and self.T.tobytes() == other.T.tobytes()
            and self.M.tobytes() == other.M.tobytes()
            and float(self.epsilon).hex() == float(other.epsilon).hex()
            and self.refresh_count == other.refresh_count
            and self.pairs_seen == other.pairs_seen
        )
