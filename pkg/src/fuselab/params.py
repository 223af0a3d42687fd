"""Named parameter collections, gradient maps, and the on-disk container.

A ParamSet is an ordered, immutable map from parameter name to a float64
array, with a role tag per entry (`encoder`, `predictor`, `joint`,
`other`) so encoder vs non-encoder parameter groups stay recoverable.

The binary container format (also used for corpus feature blobs) is
documented in docs/formats.md.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Dict, Iterable, Mapping

import numpy as np

ROLES = ("encoder", "predictor", "joint", "other")

MAGIC = b"FLAB"
FORMAT_VERSION = 1

# GradMap: name -> array, shapes matching the owning ParamSet.
GradMap = Dict[str, np.ndarray]


class ParamSet:
    """Immutable ordered map name -> float64 array with role tags."""

    def __init__(self, values: Mapping[str, np.ndarray], roles: Mapping[str, str]):
        self._values = {}
        self._roles = {}
        for name, arr in values.items():
            role = roles[name]
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r} for parameter {name!r}")
            a = np.array(arr, dtype=np.float64)
            a.setflags(write=False)
            self._values[name] = a
            self._roles[name] = role
        if set(roles) != set(self._values):
            raise ValueError("role map does not match value map")

    def names(self) -> list:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def role(self, name: str) -> str:
        return self._roles[name]

    def items(self):
        return self._values.items()

    def roles(self) -> Dict[str, str]:
        return dict(self._roles)

    def names_by_role(self, role: str) -> list:
        return [n for n in self._values if self._roles[n] == role]

    def num_scalars(self) -> int:
        return sum(v.size for v in self._values.values())

    def with_values(self, new_values: Mapping[str, np.ndarray]) -> "ParamSet":
        """Copy with some entries replaced; roles and order preserved."""
        merged = {n: new_values.get(n, v) for n, v in self._values.items()}
        unknown = set(new_values) - set(self._values)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        return ParamSet(merged, self._roles)

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return (
            self.names() == other.names()
            and self._roles == other._roles
            and all(np.array_equal(self._values[n], other._values[n]) for n in self._values)
        )


def zeros_like(params: ParamSet) -> GradMap:
    return {n: np.zeros_like(v) for n, v in params.items()}


def grad_axpy(acc: GradMap, coef: float, grads: GradMap) -> None:
    """acc += coef * grads, in place; missing keys are created."""
    for name, g in grads.items():
        if name in acc:
            acc[name] = acc[name] + coef * g
        else:
            acc[name] = coef * np.array(g)


def grad_norm(grads: GradMap) -> float:
    sq = sum(float(np.sum(g * g)) for g in grads.values())
    return float(np.sqrt(sq))


def max_rel_err(a: GradMap, b: GradMap, floor: float = 1e-6) -> float:
    """Max elementwise relative error between two gradient maps."""
    worst = 0.0
    for name in set(a) | set(b):
        ga = a.get(name)
        gb = b.get(name)
        if ga is None:
            ga = np.zeros_like(gb)
        if gb is None:
            gb = np.zeros_like(ga)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gb)), floor)
        worst = max(worst, float(np.max(np.abs(ga - gb) / denom)))
    return worst


def config_digest(meta: Mapping) -> str:
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def save_container(path, entries: Iterable[tuple], meta: Mapping | None = None) -> None:
    """Write named arrays to the versioned binary container.

    `entries` yields (name, role, array).  Layout: MAGIC, u32 version,
    u32 header length, JSON header, then raw little-endian float64 data
    per entry in header order.
    """
    meta = dict(meta or {})
    entries = [(n, r, np.asarray(a, dtype=np.float64)) for n, r, a in entries]
    header = {
        "format_version": FORMAT_VERSION,
        "config_digest": config_digest(meta),
        "meta": meta,
        "entries": [
            {"name": n, "role": r, "shape": list(a.shape)} for n, r, a in entries
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, _, arr in entries:
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_container(path):
    """Read the container back: returns (entries, meta) with entries as
    a list of (name, role, array)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a fuselab container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("config_digest") != config_digest(header.get("meta", {})):
            raise ValueError(f"{path}: config digest mismatch")
        entries = []
        for ent in header["entries"]:
            shape = tuple(ent["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            entries.append((ent["name"], ent["role"], np.array(data)))
    return entries, header.get("meta", {})


def save_checkpoint(path, params: ParamSet, meta: Mapping | None = None) -> None:
    save_container(
        path, [(n, params.role(n), v) for n, v in params.items()], meta
    )


def load_checkpoint(path):
    entries, meta = load_container(path)
    values = {n: a for n, _, a in entries}
    roles = {n: r for n, r, _ in entries}
    return ParamSet(values, roles), meta
