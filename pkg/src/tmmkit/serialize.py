"""Versioned binary container for weights and networks, plus a JSON export.

Layout (all multi-byte integers little-endian uint32 unless noted, floats
little-endian float64):

    magic   4 bytes  b"TMM1"
    version u8       1
    kind    u8       1 = CP weights, 2 = HT weights, 3 = network

CP block:   K, Z, N, M; class_weights (K*Z floats); factors (N*Z*M floats)
HT block:   arity, L, M, K; ranks (L u32); sharing (L u8: 0 none, 1 window,
            2 all); per level: G_l (u32) then the kernel block
            (G_l * r_l * r_{l-1} floats); class_weights (K * r_{L-1} floats)
Network:    grid flag u8 (0/1) [+ rows, cols]; component block; inner weight
            kind u8 (1/2); matching CP/HT block.
Components: kind u8 (1 gaussian, 2 categorical); M, s [, V]; gaussian means
            then rho (M*s each); categorical log tables (M*s*V).

Checkpoints are byte-deterministic: identical parameters produce identical
files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .components import CATEGORICAL, GAUSSIAN, ComponentFamily
from .factorization import CPParams, HTParams
from .network import Network

MAGIC = b"TMM1"
VERSION = 1

_KIND_CP, _KIND_HT, _KIND_NETWORK = 1, 2, 3
_FAM_GAUSSIAN, _FAM_CATEGORICAL = 1, 2
_SHARING_CODES = {"none": 0, "window": 1, "all": 2}
_SHARING_NAMES = {v: k for k, v in _SHARING_CODES.items()}


class FormatError(Exception):
    """Container is not a readable TMM1 file."""


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, *vals):
        self.parts.append(struct.pack(f"<{len(vals)}I", *vals))

    def floats(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def _take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError("truncated container")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self._take(4 * count))
        return vals[0] if count == 1 else vals

    def floats(self, shape):
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def _write_cp(w: _Writer, p: CPParams):
    w.u32(p.n_classes, p.rank, p.n_positions, p.n_components)
    w.floats(p.class_weights)
    w.floats(p.factors)


def _read_cp(r: _Reader) -> CPParams:
    k, z, n, m = r.u32(4)
    cw = r.floats((k, z))
    fac = r.floats((n, z, m))
    return CPParams(cw, fac)


def _write_ht(w: _Writer, p: HTParams):
    w.u32(p.arity, p.n_levels, p.n_components, p.n_classes)
    w.u32(*p.ranks)
    for mode in p.sharing:
        w.u8(_SHARING_CODES[mode])
    for arr in p.levels:
        w.u32(arr.shape[0])
        w.floats(arr)
    w.floats(p.class_weights)


def _read_ht(r: _Reader) -> HTParams:
    arity, n_levels, m, k = r.u32(4)
    ranks = list(r.u32(n_levels)) if n_levels > 1 else [r.u32()]
    sharing = [_SHARING_NAMES[r.u8()] for _ in range(n_levels)]
    levels = []
    prev = m
    for rank in ranks:
        groups = r.u32()
        levels.append(r.floats((groups, rank, prev)))
        prev = rank
    cw = r.floats((k, ranks[-1]))
    return HTParams(arity=arity, ranks=ranks, n_components=m, levels=levels,
                    sharing=sharing, class_weights=cw)


def _write_components(w: _Writer, fam: ComponentFamily):
    if fam.kind == GAUSSIAN:
        w.u8(_FAM_GAUSSIAN)
        w.u32(fam.n_components, fam.patch_dim)
        w.floats(fam.means)
        w.floats(fam.rho)
    else:
        w.u8(_FAM_CATEGORICAL)
        w.u32(fam.n_components, fam.patch_dim, fam.alphabet)
        w.floats(fam.log_tables)


def _read_components(r: _Reader) -> ComponentFamily:
    code = r.u8()
    if code == _FAM_GAUSSIAN:
        m, s = r.u32(2)
        return ComponentFamily(GAUSSIAN, means=r.floats((m, s)), rho=r.floats((m, s)))
    if code == _FAM_CATEGORICAL:
        m, s, v = r.u32(3)
        return ComponentFamily(CATEGORICAL, log_tables=r.floats((m, s, v)))
    raise FormatError(f"unknown component code {code}")


def _params_kind(params):
    return _KIND_CP if isinstance(params, CPParams) else _KIND_HT


def save_params(path, params):
    w = _Writer()
    w.parts.append(MAGIC)
    w.u8(VERSION)
    w.u8(_params_kind(params))
    if isinstance(params, CPParams):
        _write_cp(w, params)
    else:
        _write_ht(w, params)
    with open(path, "wb") as fh:
        fh.write(w.bytes())


def save_network(path, net: Network):
    w = _Writer()
    w.parts.append(MAGIC)
    w.u8(VERSION)
    w.u8(_KIND_NETWORK)
    if net.grid_shape is None:
        w.u8(0)
    else:
        w.u8(1)
        w.u32(net.grid_shape[0], net.grid_shape[1])
    _write_components(w, net.components)
    w.u8(_params_kind(net.params))
    if isinstance(net.params, CPParams):
        _write_cp(w, net.params)
    else:
        _write_ht(w, net.params)
    with open(path, "wb") as fh:
        fh.write(w.bytes())


def _open(path) -> _Reader:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    r = _Reader(raw)
    r.pos = 4
    version = r.u8()
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    return r


def load_params(path):
    r = _open(path)
    kind = r.u8()
    if kind == _KIND_CP:
        return _read_cp(r)
    if kind == _KIND_HT:
        return _read_ht(r)
    raise FormatError(f"expected a weight container, found kind {kind}")


def load_network(path) -> Network:
    r = _open(path)
    kind = r.u8()
    if kind != _KIND_NETWORK:
        raise FormatError(f"expected a network container, found kind {kind}")
    grid = None
    if r.u8():
        grid = tuple(r.u32(2))
    fam = _read_components(r)
    pkind = r.u8()
    params = _read_cp(r) if pkind == _KIND_CP else _read_ht(r)
    return Network(fam, params, grid_shape=grid)


def network_to_json(net: Network) -> dict:
    """Inspection-friendly mirror of the binary container."""
    def arr(a):
        return np.asarray(a).tolist()

    if net.components.kind == GAUSSIAN:
        comp = {"kind": GAUSSIAN, "means": arr(net.components.means), "rho": arr(net.components.rho)}
    else:
        comp = {"kind": CATEGORICAL, "log_tables": arr(net.components.log_tables)}
    if isinstance(net.params, CPParams):
        params = {"kind": "cp", "class_weights": arr(net.params.class_weights),
                  "factors": arr(net.params.factors)}
    else:
        params = {
            "kind": "ht",
            "arity": net.params.arity,
            "ranks": list(net.params.ranks),
            "sharing": list(net.params.sharing),
            "n_components": net.params.n_components,
            "levels": [arr(a) for a in net.params.levels],
            "class_weights": arr(net.params.class_weights),
        }
    return {
        "format": "tmm1-json",
        "grid_shape": list(net.grid_shape) if net.grid_shape else None,
        "components": comp,
        "params": params,
    }


def save_network_json(path, net: Network):
    with open(path, "w") as fh:
        json.dump(network_to_json(net), fh, indent=1)
        fh.write("\n")
