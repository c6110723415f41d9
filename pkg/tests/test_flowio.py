import json
import struct

import numpy as np
import pytest

from multiflow import flowio
from multiflow.core import FlowField, ScalarMap
from multiflow.synth import NoiseModel, Region, SceneModel, SyntheticProvider, make_layer
from multiflow.tracker import DeltaSet, ProviderError


def test_flo_roundtrip(tmp_path, rng):
    f = FlowField(rng.normal(size=(3, 7, 2)))
    flowio.write_flo(tmp_path / "a.flo", f)
    g = flowio.read_flo(tmp_path / "a.flo")
    assert g.data.tobytes() == f.data.tobytes()


def test_flo_length_and_layout():
    raw = flowio.encode_flo(FlowField([[[1, 2], [3, 4]]]))
    assert len(raw) == 28
    assert struct.unpack("<fii4f", raw) == (202021.25, 2, 1, 1.0, 2.0, 3.0, 4.0)


def test_flo_bad_magic():
    raw = bytearray(flowio.encode_flo(FlowField([[[1, 2]]])))
    raw[:4] = struct.pack("<f", 0.0)
    with pytest.raises(flowio.BadMagicError):
        flowio.decode_flo(bytes(raw))


@pytest.mark.parametrize("w,h", [(0, 1), (1, -3), (70000, 1)])
def test_flo_bad_dims(w, h):
    raw = struct.pack("<fii", flowio.FLO_MAGIC, w, h) + b"\0" * 8
    with pytest.raises(flowio.DimensionError):
        flowio.decode_flo(raw)


def test_flo_truncated_and_trailing():
    raw = flowio.encode_flo(FlowField(np.zeros((2, 2, 2))))
    with pytest.raises(flowio.TruncatedError):
        flowio.decode_flo(raw[:-1])
    with pytest.raises(flowio.TruncatedError):
        flowio.decode_flo(raw[:5])
    with pytest.raises(flowio.FlowIOError):
        flowio.decode_flo(raw + b"\0")


def test_map_roundtrip(tmp_path, rng):
    m = ScalarMap(rng.uniform(size=(5, 5)))
    flowio.write_map(tmp_path / "o.map", m, flowio.OCCLUSION)
    assert flowio.read_map(tmp_path / "o.map", flowio.OCCLUSION).data.tobytes() == m.data.tobytes()


def test_map_kind_mismatch(tmp_path):
    flowio.write_map(tmp_path / "o.map", ScalarMap([[0.5]]), flowio.OCCLUSION)
    with pytest.raises(flowio.KindMismatchError):
        flowio.read_map(tmp_path / "o.map", flowio.UNCERTAINTY)


def test_map_length():
    raw = flowio.encode_map(ScalarMap([[0.5]]), flowio.UNCERTAINTY)
    assert len(raw) == 17
    assert raw[:5] == b"MFTM\x01"


def test_map_value_checks():
    bad = flowio.MAP_MAGIC + struct.pack("<Biif", flowio.OCCLUSION, 1, 1, 1.5)
    with pytest.raises(flowio.FlowIOError):
        flowio.decode_map(bad)
    bad = flowio.MAP_MAGIC + struct.pack("<Biif", 7, 1, 1, 0.0)
    with pytest.raises(flowio.FlowIOError):
        flowio.decode_map(bad)


def test_missing_file_is_typed(tmp_path):
    with pytest.raises(flowio.FlowIOError):
        flowio.read_flo(tmp_path / "nope.flo")


@pytest.mark.parametrize("n,deltas", [(10, "1,2,4,8"), (7, "1,2,4,8,16,32"), (1, "1")])
def test_required_pairs(n, deltas):
    d = DeltaSet.parse(deltas)
    pairs = flowio.required_pairs(n, d)
    assert len(pairs) <= 2 * n * len(d.deltas)
    assert len(set(pairs)) == len(pairs)
    assert all(abs(a - b) in d.integers for a, b in pairs)
    expect = {(a, a + k) for k in d.integers for a in range(n - k)}
    expect |= {(b, a) for a, b in expect}
    assert set(pairs) == expect


def test_required_pairs_rejects_inf():
    with pytest.raises(flowio.ManifestError, match="integer-only"):
        flowio.required_pairs(10, DeltaSet.parse("inf,1"))


@pytest.fixture
def dataset(tmp_path):
    scene = SceneModel(9, 7, 10, [make_layer(Region("plane"), 10, velocity=(0.5, 0.25))])
    pairs = flowio.required_pairs(10, "1,2,4,8")
    prov = SyntheticProvider(scene, NoiseModel(0.2, seed=3))
    table = flowio.export_pairs(prov, tmp_path, pairs)
    flowio.write_manifest(tmp_path / "manifest.json", 9, 7, 10, "1,2,4,8", table)
    return tmp_path / "manifest.json", prov


def test_manifest_provider(dataset):
    path, prov = dataset
    p = flowio.precomputed_provider(path)
    assert len(p) <= 80
    assert p.get(2, 6).equals(prov.get(2, 6))
    assert p.get(6, 2).equals(prov.get(6, 2))
    p.get(2, 6)
    assert p.reads == 2


def test_identity_without_disk(dataset):
    path, _ = dataset
    p = flowio.precomputed_provider(path)
    fou = p.get(3, 3)
    assert (fou.src_frame, fou.dst_frame) == (3, 3) and not fou.flow.data.any()
    assert p.reads == 0


def test_unlisted_pair(dataset):
    p = flowio.precomputed_provider(dataset[0])
    with pytest.raises(ProviderError, match=r"\(0, 7\)"):
        p.get(0, 7)


def test_corrupt_file_surfaces_as_provider_error(dataset):
    path, _ = dataset
    (path.parent / "flow" / "00002_00006.flo").write_bytes(b"junk")
    with pytest.raises(ProviderError, match=r"\(2, 6\)"):
        flowio.precomputed_provider(path).get(2, 6)


def test_manifest_dimension_mismatch(dataset, tmp_path):
    path, _ = dataset
    doc = json.loads(path.read_text())
    doc["width"] = 10
    path.write_text(json.dumps(doc))
    with pytest.raises(ProviderError):
        flowio.precomputed_provider(path).get(0, 1)


def test_manifest_rejects_inf(tmp_path):
    with pytest.raises(flowio.ManifestError):
        flowio.write_manifest(tmp_path / "m.json", 2, 2, 3, "inf,1", {})
    (tmp_path / "m.json").write_text(json.dumps(
        {"version": 1, "width": 2, "height": 2, "num_frames": 3, "deltas": ["inf", 1], "pairs": {}}))
    with pytest.raises(flowio.ManifestError):
        flowio.read_manifest(tmp_path / "m.json")


def test_manifest_malformed(tmp_path):
    (tmp_path / "m.json").write_text("{")
    with pytest.raises(flowio.ManifestError):
        flowio.read_manifest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text(json.dumps({"version": 1}))
    with pytest.raises(flowio.ManifestError):
        flowio.read_manifest(tmp_path / "m.json")
