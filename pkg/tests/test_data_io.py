import json
import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from srx.data_io import (
    SynthDims,
    decode_checkpoint,
    decode_feature,
    encode_checkpoint,
    encode_feature,
    graph_from_dict,
    load_checkpoint,
    load_dataset,
    load_feature_file,
    load_manifest,
    load_role_graph,
    load_word_vectors,
    mixing_matrices,
    save_checkpoint,
    seeded_word_vectors,
    synth_dataset,
    write_feature_file,
    write_role_graph,
)
from srx.errors import FormatError, ValidationError
from srx.gradcheck import toy_graph
from srx.metrics import evaluate


# -- feature files ----------------------------------------------------------------

def test_header_layout_is_bit_exact():
    buf = encode_feature(np.array([[1.0, -2.0]]), "T")
    assert buf[:15] == b"SRXF" + struct.pack("<H", 1) + b"T" + struct.pack("<II", 1, 2)
    assert buf[15:] == struct.pack("<2f", 1.0, -2.0)


def test_round_trip_at_float32_precision(tmp_path):
    x = np.random.default_rng(0).standard_normal((5, 2048))
    path = write_feature_file(tmp_path / "a.srxf", x, "S")
    back = load_feature_file(path)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, x.astype(np.float32).astype(np.float64))


def test_minimal_file(tmp_path):
    assert load_feature_file(write_feature_file(tmp_path / "m.srxf", [[3.5]], "O")).shape == (1, 1)


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda b: b[:-3], 15 + 24 - 3),  # truncated payload
        (lambda b: b + b"\0", 15 + 24),  # trailing byte
        (lambda b: b"XXXX" + b[4:], 0),
        (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], 4),
        (lambda b: b[:6] + b"Q" + b[7:], 6),
        (lambda b: b[:10], 10),
    ],
)
def test_corrupt_feature_files(mutate, offset):
    buf = encode_feature(np.ones((2, 3)), "S")
    with pytest.raises(FormatError) as info:
        decode_feature(mutate(buf))
    assert info.value.offset == offset


@settings(max_examples=200)
@given(st.binary(max_size=64))
def test_feature_decoder_is_total(buf):
    try:
        tag, arr = decode_feature(buf)
    except FormatError:
        return
    assert tag in "STO" and arr.ndim == 2


def test_encode_rejects_bad_input():
    with pytest.raises(ValidationError):
        encode_feature(np.ones(3), "S")
    with pytest.raises(ValidationError):
        encode_feature(np.ones((1, 1)), "X")


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"a.w": rng.standard_normal((3, 4)), "b": rng.standard_normal(5), "s": np.array(2.0)}
    meta = {"epoch": 3, "history": [0.5, 0.25]}
    path = save_checkpoint(tmp_path / "c.srxc", tensors, meta)
    t2, m2 = load_checkpoint(path)
    assert m2 == meta and list(t2) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(t2[k], tensors[k])
    assert encode_checkpoint(t2, m2) == path.read_bytes()


@settings(max_examples=150, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 200), st.binary(max_size=8))
def test_checkpoint_decoder_is_total(cut, junk):
    buf = encode_checkpoint({"w": np.ones((2, 2))}, {"k": 1})
    try:
        decode_checkpoint(buf[:cut] + junk)
    except FormatError:
        pass


# -- role graphs ------------------------------------------------------------------

def test_role_graph_round_trip(tmp_path):
    g = toy_graph()
    p = write_role_graph(tmp_path / "g.json", g, "a caption")
    g2 = load_role_graph(p, 3)
    assert g2.nodes == g.nodes and g2.edges == g.edges
    first = p.read_bytes()
    write_role_graph(p, g2, "a caption")
    assert p.read_bytes() == first


def test_minimal_graph():
    doc = {"nodes": [{"id": "e", "role": "event", "tokens": [0]}, {"id": "a", "role": "action", "tokens": [1]},
                     {"id": "o", "role": "entity", "tokens": [2]}],
           "edges": [{"src": "a", "dst": "e", "relation": 0}, {"src": "a", "dst": "o", "relation": 1}]}
    assert len(graph_from_dict(doc, 2)) == 3
    doc["edges"].append({"src": "a", "dst": "ghost", "relation": 1})
    with pytest.raises(ValidationError, match="ghost"):
        graph_from_dict(doc, 2)


def test_two_events_rejected():
    doc = {"nodes": [{"id": "e", "role": "event", "tokens": [0]}, {"id": "f", "role": "event", "tokens": [0]},
                     {"id": "a", "role": "action", "tokens": [1]}, {"id": "o", "role": "entity", "tokens": [2]}],
           "edges": [{"src": "a", "dst": "e", "relation": 0}, {"src": "a", "dst": "f", "relation": 0},
                     {"src": "a", "dst": "o", "relation": 1}]}
    with pytest.raises(ValidationError, match="event"):
        graph_from_dict(doc, 2)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-3, 3) | st.text(max_size=3),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.sampled_from(
        ["nodes", "edges", "id", "role", "tokens", "src", "dst", "relation"]), inner, max_size=4),
    max_leaves=12,
)


@settings(max_examples=200)
@given(json_values)
def test_graph_loader_is_total(doc):
    try:
        graph_from_dict(doc, 3)
    except ValidationError:
        pass


def test_bad_json_is_format_error(tmp_path):
    p = tmp_path / "g.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_role_graph(p)
    p.write_bytes(b"\xff\xfe")
    with pytest.raises(FormatError):
        load_role_graph(p)


# -- word vectors and manifests ---------------------------------------------------

def test_word_vector_sources(tmp_path):
    np.testing.assert_array_equal(load_word_vectors("seeded-random:4", tmp_path, 6, 3), seeded_word_vectors(3, 6, 4))
    table = np.arange(12.0).reshape(4, 3)
    np.save(tmp_path / "wv.npy", table)
    np.testing.assert_array_equal(load_word_vectors("wv.npy", tmp_path, 4), table)
    (tmp_path / "wv.txt").write_text("the 1 2\ncat 3 4\n")
    np.testing.assert_array_equal(load_word_vectors("wv.txt", tmp_path, 2), [[1, 2], [3, 4]])
    with pytest.raises(ValidationError):
        load_word_vectors("wv.npy", tmp_path, 10)
    with pytest.raises(ValidationError):
        load_word_vectors("seeded-random:x", tmp_path, 2)


def test_manifest_validation(tmp_path):
    path = synth_dataset(tmp_path, 0, 3)
    doc = json.loads(path.read_text())
    doc["captions"][0]["clip_id"] = "nowhere"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="nowhere"):
        load_manifest(path)
    path.write_text("[1, 2")
    with pytest.raises(FormatError):
        load_manifest(path)


def test_manifest_length_mismatch(tmp_path):
    path = synth_dataset(tmp_path, 0, 3)
    doc = json.loads(path.read_text())
    doc["clips"][0]["lengths"]["S"] += 1
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="rows"):
        load_dataset(path)


# -- synthetic data ---------------------------------------------------------------

def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_deterministic(tmp_path):
    synth_dataset(tmp_path / "a", 5, 6)
    synth_dataset(tmp_path / "b", 5, 6)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    synth_dataset(tmp_path / "c", 6, 6)
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "c")


def test_synth_contract(tmp_path):
    ds = load_dataset(synth_dataset(tmp_path, 1, 32))
    assert len(ds.clips) == 32 and len(ds.graphs) == 32
    assert len(list((tmp_path / "features").iterdir())) == 96
    assert all(ds.caption_clip[c] in ds.clips for c in ds.graphs)
    with pytest.raises(ValidationError):
        synth_dataset(tmp_path / "x", 1, 1)


@pytest.mark.parametrize("seed", [0, 7, 13])
def test_latent_factor_oracle_recovers_every_pair(tmp_path, seed):
    # project each caption's words through the generator's mixing maps and
    # match against the clips' averaged streams
    dims = SynthDims()
    ds = load_dataset(synth_dataset(tmp_path, seed, 32, dims))
    mix = mixing_matrices(seed, dims)
    wv = ds.word_vectors
    scores = np.zeros((32, 32))
    for i, cid in enumerate(ds.caption_ids):
        g = ds.graphs[cid]
        predicted = {
            "S": wv[list(g.nodes[g.role_indices("event")[0]].tokens)].mean(axis=0) @ mix["S"],
            "T": np.mean([wv[list(g.nodes[k].tokens)].mean(axis=0) for k in g.role_indices("action")], axis=0) @ mix["T"],
            "O": np.mean([wv[list(g.nodes[k].tokens)].mean(axis=0) for k in g.role_indices("entity")], axis=0) @ mix["O"],
        }
        for j, clip in enumerate(ds.clips.values()):
            for s in "STO":
                scores[i, j] -= np.linalg.norm(clip.stream(s)[0] - predicted[s])
    truth = [ds.caption_clip[c] for c in ds.caption_ids]
    assert evaluate(scores, truth, clip_ids=ds.clip_ids).r_at[1] == 1.0


def test_pure_noise_dataset(tmp_path):
    ds = load_dataset(synth_dataset(tmp_path, 2, 4, SynthDims(signal=0.0)))
    assert all(np.isfinite(c.S).all() for c in ds.clips.values())
