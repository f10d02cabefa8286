"""On-disk formats and the synthetic dataset generator.

Feature file (``.srxf``), little-endian::

    offset  size  field
    0       4     magic  b"SRXF"
    4       2     version (u16, currently 1)
    6       1     stream tag  b"S" | b"T" | b"O"
    7       4     rows (u32)
    11      4     cols (u32)
    15      4*rows*cols  float32 payload, row-major

Checkpoint (``.srxc``), little-endian::

    b"SRXC", version u16, meta length u32, meta (UTF-8 JSON),
    tensor count u32, then per tensor:
    name length u16, name (UTF-8), ndim u8, dims u32 * ndim, float64 payload

Manifests and role graphs are JSON documents; every path inside a manifest
is relative to the manifest's directory. Manifest schema::

    {"format": "srx-manifest", "version": 1, "dataset": str,
     "feature_dim": int, "n_relations": int, "vocab_size": int,
     "word_vectors": "seeded-random:<dim>" | "<path to .npy or .txt>",
     "word_vector_seed": int,
     "clips": [{"clip_id": str, "features": {"S": path, "T": path, "O": path},
                "lengths": {"S": int, "T": int, "O": int}}],
     "captions": [{"caption_id": str, "clip_id": str, "graph": path}]}

Role graph schema::

    {"caption_id": str, "text": str,
     "nodes": [{"id": str|int, "role": "event"|"action"|"entity", "tokens": [int]}],
     "edges": [{"src": id, "dst": id, "relation": int}]}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .text import Edge, Node, RoleGraph
from .visual import STREAMS, ExpertFeatures

FEATURE_MAGIC = b"SRXF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHcII")

CHECKPOINT_MAGIC = b"SRXC"
CHECKPOINT_VERSION = 1

MANIFEST_FORMAT = "srx-manifest"
MANIFEST_VERSION = 1


# -- feature files ------------------------------------------------------------

def encode_feature(matrix, stream: str) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValidationError(f"feature matrix must be 2-D and non-empty, got shape {arr.shape}")
    if stream not in STREAMS:
        raise ValidationError(f"stream tag must be one of {STREAMS}, got {stream!r}")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, stream.encode(), *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_feature(buf: bytes) -> tuple[str, np.ndarray]:
    if len(buf) < _FEATURE_HEADER.size:
        raise FormatError("feature file shorter than its header", offset=len(buf))
    magic, version, tag, rows, cols = _FEATURE_HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}", offset=4)
    try:
        stream = tag.decode()
    except UnicodeDecodeError:
        stream = ""
    if stream not in STREAMS:
        raise FormatError(f"bad stream tag {tag!r}", offset=6)
    if rows == 0 or cols == 0:
        raise FormatError(f"empty feature matrix {rows}x{cols}", offset=7)
    expected = _FEATURE_HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        what = "truncated" if len(buf) < expected else "trailing bytes after"
        raise FormatError(f"{what} payload: expected {expected} bytes, got {len(buf)}", offset=min(len(buf), expected))
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_FEATURE_HEADER.size)
    return stream, data.reshape(rows, cols).astype(np.float64)


def write_feature_file(path, matrix, stream: str) -> Path:
    path = Path(path)
    path.write_bytes(encode_feature(matrix, stream))
    return path


def read_feature_file(path) -> tuple[str, np.ndarray]:
    return decode_feature(Path(path).read_bytes())


def load_feature_file(path) -> np.ndarray:
    return read_feature_file(path)[1]


# -- checkpoints --------------------------------------------------------------

def encode_checkpoint(tensors: dict, meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[dict, dict]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"checkpoint truncated while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    version, meta_len = struct.unpack("<HI", take(6, "header"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    try:
        meta = json.loads(take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint metadata is not JSON: {exc}", offset=10) from None
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(name_len, "name").decode()
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", offset=pos - name_len) from None
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * n, f"payload of {name}"), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint", offset=pos)
    return tensors, meta


def save_checkpoint(path, tensors: dict, meta: dict) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(tensors, meta))
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode_checkpoint(Path(path).read_bytes())


# -- role graphs --------------------------------------------------------------

def graph_to_dict(g: RoleGraph, text: str = "") -> dict:
    return {
        "caption_id": g.caption_id,
        "text": text,
        "nodes": [{"id": n.id, "role": n.role, "tokens": [int(t) for t in n.tokens]} for n in g.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "relation": int(e.relation)} for e in g.edges],
    }


def graph_from_dict(doc, n_relations: int | None = None) -> RoleGraph:
    try:
        nodes = [Node(n["id"], n["role"], tuple(n["tokens"])) for n in doc["nodes"]]
        edges = [Edge(e["src"], e["dst"], e["relation"]) for e in doc["edges"]]
        caption_id = doc.get("caption_id")
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValidationError(f"role graph document is missing field {exc}") from None
    for n in nodes:
        if not isinstance(n.id, (str, int)):
            raise ValidationError(f"node id {n.id!r} must be a string or integer")
        if not all(isinstance(t, int) and not isinstance(t, bool) for t in n.tokens):
            raise ValidationError(f"node {n.id!r}: tokens must be integer word ids")
    try:
        return RoleGraph(nodes, edges, n_relations=n_relations, caption_id=caption_id).validate()
    except TypeError as exc:
        raise ValidationError(f"role graph is malformed: {exc}") from None


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_role_graph(path, g: RoleGraph, text: str = "") -> Path:
    path = Path(path)
    path.write_text(dump_json(graph_to_dict(g, text)))
    return path


def load_role_graph(path, n_relations: int | None = None) -> RoleGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc.msg}", offset=exc.pos) from None
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text", offset=exc.start) from None
    return graph_from_dict(doc, n_relations)


# -- word vectors ---------------------------------------------------------------

def seeded_word_vectors(seed: int, vocab_size: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    return rng.standard_normal((vocab_size, dim))


def load_word_vectors(spec: str, base: Path, vocab_size: int, seed: int = 0) -> np.ndarray:
    if spec.startswith("seeded-random:"):
        try:
            dim = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad word-vector spec {spec!r}") from None
        return seeded_word_vectors(seed, vocab_size, dim)
    path = base / spec
    if path.suffix == ".npy":
        table = np.load(path)
    else:
        # GloVe-style text: optional leading word, then floats; row index = token id
        rows = []
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                rows.append([float(x) for x in parts[1:]])
        table = np.array(rows)
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < vocab_size:
        raise ValidationError(f"word-vector table {table.shape} does not cover vocabulary of {vocab_size}")
    return table


# -- manifests ------------------------------------------------------------------

@dataclass
class Manifest:
    dataset: str
    feature_dim: int
    n_relations: int
    vocab_size: int
    word_vectors: str
    clips: list
    captions: list
    word_vector_seed: int = 0
    root: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "dataset": self.dataset,
            "feature_dim": self.feature_dim,
            "n_relations": self.n_relations,
            "vocab_size": self.vocab_size,
            "word_vectors": self.word_vectors,
            "word_vector_seed": self.word_vector_seed,
            "clips": self.clips,
            "captions": self.captions,
        }

    def validate(self) -> "Manifest":
        clip_ids = [c["clip_id"] for c in self.clips]
        if len(set(clip_ids)) != len(clip_ids):
            raise ValidationError("clip ids must be unique")
        caption_ids = [c["caption_id"] for c in self.captions]
        if len(set(caption_ids)) != len(caption_ids):
            raise ValidationError("caption ids must be unique")
        known = set(clip_ids)
        for c in self.captions:
            if c["clip_id"] not in known:
                raise ValidationError(f"caption {c['caption_id']!r} references unknown clip {c['clip_id']!r}")
        for c in self.clips:
            if set(c["features"]) != set(STREAMS):
                raise ValidationError(f"clip {c['clip_id']!r} must list feature files for {STREAMS}")
        return self


def save_manifest(path, m: Manifest) -> Path:
    path = Path(path)
    path.write_text(dump_json(m.to_dict()))
    return path


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{path} is not an srx manifest")
    if doc.get("version") != MANIFEST_VERSION:
        raise ValidationError(f"unsupported manifest version {doc.get('version')!r}")
    try:
        m = Manifest(
            dataset=doc["dataset"],
            feature_dim=int(doc["feature_dim"]),
            n_relations=int(doc["n_relations"]),
            vocab_size=int(doc["vocab_size"]),
            word_vectors=doc["word_vectors"],
            clips=doc["clips"],
            captions=doc["captions"],
            word_vector_seed=int(doc.get("word_vector_seed", 0)),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"manifest field problem: {exc}") from None
    return m.validate()


@dataclass
class Dataset:
    """Everything a manifest points at, loaded into memory."""

    manifest: Manifest
    clips: dict  # clip_id -> ExpertFeatures
    graphs: dict  # caption_id -> RoleGraph
    caption_clip: dict  # caption_id -> clip_id
    word_vectors: np.ndarray

    @property
    def caption_ids(self) -> list:
        return list(self.graphs)

    @property
    def clip_ids(self) -> list:
        return list(self.clips)


def load_dataset(manifest_path) -> Dataset:
    m = load_manifest(manifest_path)
    root = m.root
    clips = {}
    for entry in m.clips:
        streams = {}
        for s in STREAMS:
            tag, arr = read_feature_file(root / entry["features"][s])
            if tag != s:
                raise ValidationError(f"clip {entry['clip_id']!r}: file for stream {s} is tagged {tag}")
            if arr.shape[1] != m.feature_dim:
                raise ValidationError(
                    f"clip {entry['clip_id']!r} stream {s}: width {arr.shape[1]} != manifest {m.feature_dim}"
                )
            declared = entry.get("lengths", {}).get(s)
            if declared is not None and declared != arr.shape[0]:
                raise ValidationError(
                    f"clip {entry['clip_id']!r} stream {s}: {arr.shape[0]} rows but manifest says {declared}"
                )
            streams[s] = arr
        clips[entry["clip_id"]] = ExpertFeatures(**streams)
    graphs, caption_clip = {}, {}
    for entry in m.captions:
        g = load_role_graph(root / entry["graph"], m.n_relations)
        g.caption_id = entry["caption_id"]
        graphs[entry["caption_id"]] = g
        caption_clip[entry["caption_id"]] = entry["clip_id"]
    word_vectors = load_word_vectors(m.word_vectors, root, m.vocab_size, m.word_vector_seed)
    for cid, g in graphs.items():
        for n in g.nodes:
            bad = [t for t in n.tokens if not 0 <= t < len(word_vectors)]
            if bad:
                raise ValidationError(f"caption {cid!r} node {n.id!r}: unknown token id {bad[0]}")
    return Dataset(m, clips, graphs, caption_clip, word_vectors)


# -- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SynthDims:
    feature_dim: int = 64
    word_dim: int = 32
    n_relations: int = 4
    min_len: int = 2
    max_len: int = 4
    noise: float = 0.1
    signal: float = 1.0


def mixing_matrices(seed: int, dims: SynthDims) -> dict:
    """Fixed linear maps from word-vector space to each expert stream."""
    rng = np.random.default_rng([seed, 1])
    return {s: rng.standard_normal((dims.word_dim, dims.feature_dim)) / np.sqrt(dims.word_dim) for s in STREAMS}


def synth_dataset(out_dir, seed: int, n_clips: int, dims: SynthDims | None = None) -> Path:
    """Write a learnable toy dataset and return its manifest path.

    Clip i's streams are noisy linear images of the word vectors of caption
    i's verbs (3D stream), nouns (RoI stream) and whole sentence (2D stream),
    so a text/video pairing can be recovered from the content alone.
    """
    dims = dims or SynthDims()
    if n_clips < 2:
        raise ValidationError(f"a dataset needs at least 2 clips, got {n_clips}")
    if dims.n_relations < 2:
        raise ValidationError("need at least 2 relation types (verb-event and verb-noun)")
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "graphs").mkdir(parents=True, exist_ok=True)

    n_actions_vocab, n_entities_vocab, n_filler = 2 * n_clips, 3 * n_clips, 4
    vocab_size = n_actions_vocab + n_entities_vocab + n_filler
    action_ids = np.arange(n_actions_vocab)
    entity_ids = n_actions_vocab + np.arange(n_entities_vocab)
    filler_ids = n_actions_vocab + n_entities_vocab + np.arange(n_filler)

    wv = seeded_word_vectors(seed, vocab_size, dims.word_dim)
    mix = mixing_matrices(seed, dims)
    rng = np.random.default_rng([seed, 2])
    # distinct leading verb and noun per clip keep every caption identifiable
    lead_actions = rng.permutation(action_ids)[:n_clips]
    lead_entities = rng.permutation(entity_ids)[:n_clips]

    clips, captions = [], []
    for i in range(n_clips):
        clip_id, caption_id = f"clip{i:04d}", f"cap{i:04d}"
        n_act = int(rng.integers(1, 3))
        n_ent = int(rng.integers(1, 3))
        acts = [int(lead_actions[i])] + [int(a) for a in rng.choice(action_ids, n_act - 1)]
        ents = [int(lead_entities[i])] + [int(e) for e in rng.choice(entity_ids, n_ent - 1)]
        fill = [int(f) for f in rng.choice(filler_ids, 2)]

        nodes = [Node("e", "event", tuple(fill + acts + ents))]
        edges = []
        for k, a in enumerate(acts):
            nodes.append(Node(f"a{k}", "action", (a,)))
            edges.append(Edge(f"a{k}", "e", 0))
        for k, e in enumerate(ents):
            nodes.append(Node(f"o{k}", "entity", (e,)))
            edges.append(Edge(f"a{int(rng.integers(n_act))}", f"o{k}", int(rng.integers(1, dims.n_relations))))
        g = RoleGraph(nodes, edges, dims.n_relations, caption_id).validate()
        text = " ".join(f"w{t}" for t in fill + acts + ents)
        write_role_graph(out / "graphs" / f"{caption_id}.json", g, text)

        sources = {
            "S": [wv[list(nodes[0].tokens)].mean(axis=0)],
            "T": [wv[a] for a in acts],
            "O": [wv[e] for e in ents],
        }
        files, lengths = {}, {}
        for s in STREAMS:
            n_rows = int(rng.integers(dims.min_len, dims.max_len + 1))
            base = np.stack([sources[s][r % len(sources[s])] for r in range(n_rows)]) @ mix[s]
            feats = dims.signal * base + dims.noise * rng.standard_normal((n_rows, dims.feature_dim))
            if dims.signal == 0:
                feats = rng.standard_normal((n_rows, dims.feature_dim))
            rel = f"features/{clip_id}_{s}.srxf"
            write_feature_file(out / rel, feats, s)
            files[s], lengths[s] = rel, n_rows
        clips.append({"clip_id": clip_id, "features": files, "lengths": lengths})
        captions.append({"caption_id": caption_id, "clip_id": clip_id, "graph": f"graphs/{caption_id}.json"})

    m = Manifest(
        dataset=f"synthetic-seed{seed}",
        feature_dim=dims.feature_dim,
        n_relations=dims.n_relations,
        vocab_size=vocab_size,
        word_vectors=f"seeded-random:{dims.word_dim}",
        word_vector_seed=seed,
        clips=clips,
        captions=captions,
        root=out,
    )
    return save_manifest(out / "manifest.json", m.validate())
