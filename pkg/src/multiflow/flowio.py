"""Binary flow/scalar-map files and the precomputed-flow manifest.

``.flo`` (Middlebury layout, little-endian)::

    float32 magic 202021.25 | int32 width | int32 height | float32[h][w][2]

scalar map (``.map``)::

    b"MFTM" | uint8 kind (0 occlusion, 1 uncertainty) | int32 width |
    int32 height | float32[h][w]

Every header field is validated before the payload is read.
"""

from __future__ import annotations

import json
import struct
import threading
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import FlowField, FouTriplet, GridError, ScalarMap, identity_triplet
from .tracker import INF, DeltaSet, ProviderError

FLO_MAGIC = 202021.25
MAP_MAGIC = b"MFTM"
MAX_DIM = 1 << 16
MANIFEST_VERSION = 1

OCCLUSION = 0
UNCERTAINTY = 1
_KIND_NAMES = {OCCLUSION: "occlusion", UNCERTAINTY: "uncertainty"}


class FlowIOError(ValueError):
    """Base class for malformed or unreadable flow files."""


class BadMagicError(FlowIOError):
    pass


class TruncatedError(FlowIOError):
    pass


class DimensionError(FlowIOError):
    pass


class KindMismatchError(FlowIOError):
    pass


class ManifestError(FlowIOError):
    pass


def _check_dims(width: int, height: int, path) -> None:
    if width <= 0 or height <= 0 or width > MAX_DIM or height > MAX_DIM:
        raise DimensionError(f"{path}: implausible dimensions {width}x{height}")


def _payload(raw: bytes, offset: int, count: int, path) -> np.ndarray:
    need = offset + 4 * count
    if len(raw) < need:
        raise TruncatedError(f"{path}: payload truncated ({len(raw)} of {need} bytes)")
    if len(raw) > need:
        raise FlowIOError(f"{path}: {len(raw) - need} trailing bytes")
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    if not np.all(np.isfinite(arr)):
        raise FlowIOError(f"{path}: non-finite values in payload")
    return arr.astype(np.float32)


def encode_flo(field: FlowField) -> bytes:
    header = struct.pack("<fii", FLO_MAGIC, field.width, field.height)
    return header + field.data.astype("<f4").tobytes()


def decode_flo(raw: bytes, path="<bytes>") -> FlowField:
    if len(raw) < 12:
        raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, width, height = struct.unpack_from("<fii", raw)
    if magic != FLO_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    _check_dims(width, height, path)
    data = _payload(raw, 12, width * height * 2, path)
    return FlowField._trusted(data.reshape(height, width, 2))


def encode_map(smap: ScalarMap, kind: int) -> bytes:
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown map kind {kind}")
    header = MAP_MAGIC + struct.pack("<Bii", kind, smap.width, smap.height)
    return header + smap.data.astype("<f4").tobytes()


def decode_map(raw: bytes, kind: int | None = None, path="<bytes>") -> tuple[ScalarMap, int]:
    if len(raw) < 13:
        raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    if raw[:4] != MAP_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    found, width, height = struct.unpack_from("<Bii", raw, 4)
    if found not in _KIND_NAMES:
        raise FlowIOError(f"{path}: unknown map kind {found}")
    if kind is not None and found != kind:
        raise KindMismatchError(f"{path}: expected {_KIND_NAMES[kind]} map, found {_KIND_NAMES[found]}")
    _check_dims(width, height, path)
    data = _payload(raw, 13, width * height, path).reshape(height, width)
    if found == OCCLUSION and not np.all((data >= 0) & (data <= 1)):
        raise FlowIOError(f"{path}: occlusion scores outside [0, 1]")
    if found == UNCERTAINTY and not np.all(data >= 0):
        raise FlowIOError(f"{path}: negative uncertainty")
    return ScalarMap._trusted(data), found


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FlowIOError(f"{path}: {exc.strerror or exc}") from exc


def write_flo(path, field: FlowField) -> None:
    Path(path).write_bytes(encode_flo(field))


def read_flo(path) -> FlowField:
    return decode_flo(_read(path), path)


def write_map(path, smap: ScalarMap, kind: int) -> None:
    Path(path).write_bytes(encode_map(smap, kind))


def read_map(path, kind: int | None = None) -> ScalarMap:
    return decode_map(_read(path), kind, path)[0]


# -- manifests -------------------------------------------------------------------


def required_pairs(num_frames: int, deltas) -> list[tuple[int, int]]:
    """Every (src, dst) pair with ``|src - dst|`` an integer delta, both directions."""
    deltas = DeltaSet.coerce(deltas)
    if deltas.has_inf:
        raise ManifestError(
            "direct (INF) flows cannot be precomputed: storage grows quadratically "
            "with the number of frames; use an integer-only delta set"
        )
    pairs = []
    for d in deltas.integers:
        for a in range(num_frames - d):
            pairs.append((a, a + d))
            pairs.append((a + d, a))
    return sorted(pairs)


def pair_key(src: int, dst: int) -> str:
    return f"{src}-{dst}"


def _parse_key(key: str) -> tuple[int, int]:
    try:
        a, b = key.split("-")
        return int(a), int(b)
    except ValueError:
        raise ManifestError(f"malformed pair key {key!r}") from None


def pair_filenames(src: int, dst: int) -> tuple[str, str, str]:
    stem = f"{src:05d}_{dst:05d}"
    return f"flow/{stem}.flo", f"occl/{stem}.map", f"unc/{stem}.map"


def write_triplet(root, fou: FouTriplet) -> tuple[str, str, str]:
    root = Path(root)
    names = pair_filenames(fou.src_frame, fou.dst_frame)
    for name in names:
        (root / name).parent.mkdir(parents=True, exist_ok=True)
    write_flo(root / names[0], fou.flow)
    write_map(root / names[1], fou.occlusion, OCCLUSION)
    write_map(root / names[2], fou.uncertainty, UNCERTAINTY)
    return names


def write_manifest(path, width: int, height: int, num_frames: int, deltas, pairs: dict) -> None:
    """``pairs`` maps (src, dst) to the (flow, occlusion, uncertainty) paths."""
    deltas = DeltaSet.coerce(deltas)
    if deltas.has_inf:
        raise ManifestError("manifests cannot hold direct (INF) flows")
    doc = {
        "version": MANIFEST_VERSION,
        "width": width,
        "height": height,
        "num_frames": num_frames,
        "deltas": list(deltas.integers),
        "pairs": {pair_key(a, b): list(files) for (a, b), files in sorted(pairs.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def read_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ManifestError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    for key in ("width", "height", "num_frames", "deltas", "pairs"):
        if key not in doc:
            raise ManifestError(f"{path}: missing {key!r}")
    if any(d == "inf" or d == INF for d in doc["deltas"]):
        raise ManifestError(f"{path}: manifests cannot hold direct (INF) flows")
    pairs = {}
    for key, files in doc["pairs"].items():
        if not isinstance(files, list) or len(files) != 3:
            raise ManifestError(f"{path}: pair {key} must list three files")
        pairs[_parse_key(key)] = tuple(files)
    doc["pairs"] = pairs
    doc["deltas"] = DeltaSet(tuple(doc["deltas"]))
    return doc


class PrecomputedProvider:
    """Serves triplets listed in a manifest, reading each pair at most once."""

    def __init__(self, manifest_path):
        self.path = Path(manifest_path)
        doc = read_manifest(self.path)
        self.root = self.path.parent
        self.width = int(doc["width"])
        self.height = int(doc["height"])
        self.num_frames = int(doc["num_frames"])
        self.deltas: DeltaSet = doc["deltas"]
        self.pairs: dict[tuple[int, int], tuple[str, str, str]] = doc["pairs"]
        self._cache: dict[tuple[int, int], FouTriplet] = {}
        self._lock = threading.Lock()
        self.reads = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def has(self, src: int, dst: int) -> bool:
        return src == dst or (src, dst) in self.pairs

    def get(self, src: int, dst: int) -> FouTriplet:
        if src == dst:
            return identity_triplet(self.width, self.height, src)
        key = (src, dst)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        if key not in self.pairs:
            raise ProviderError(src, dst, f"not listed in manifest {self.path}")
        f, o, u = (self.root / name for name in self.pairs[key])
        try:
            flow = read_flo(f)
            occ = read_map(o, OCCLUSION)
            unc = read_map(u, UNCERTAINTY)
            fou = FouTriplet._trusted(flow.data, occ.data, unc.data, src, dst)
            if not (flow.shape == occ.shape == unc.shape == (self.height, self.width)):
                raise GridError(
                    f"triplet grids {flow.shape}, {occ.shape}, {unc.shape} "
                    f"do not match manifest {self.height}x{self.width}"
                )
        except (FlowIOError, GridError) as exc:
            raise ProviderError(src, dst, str(exc)) from exc
        with self._lock:
            self.reads += 1
            self._cache.setdefault(key, fou)
            return self._cache[key]


def precomputed_provider(manifest_path) -> PrecomputedProvider:
    return PrecomputedProvider(manifest_path)


def export_pairs(provider, root, pairs: Iterable[tuple[int, int]]) -> dict:
    """Write the provider's triplet for every pair under ``root``; return the file table."""
    table = {}
    for a, b in pairs:
        table[(a, b)] = write_triplet(root, provider.get(a, b))
    return table
