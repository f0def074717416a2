"""Scene-graph data model, file formats, trivial-node augmentation and
edge-removal corruption.

File formats:
  graphs     JSON Lines, one image per line:
             {"image_id": ..., "objects": [{"label": ...}, ...],
              "relationships": [{"subject": i, "predicate": ..., "object": j}, ...]}
  vocabulary JSON {"objects": [...], "relationships": [...]};
             the reserved labels are appended on load when absent.
  similarity CSV; first row lists the image ids in dataset order, then an
             NxN block of floats formatted "%.6f".
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

TRIVIAL_NODE_LABEL = "__image__"
TRIVIAL_EDGE_LABEL = "__in_image__"


class DatasetFormatError(ValueError):
    """A dataset file violates its documented format."""


class UnknownLabelError(DatasetFormatError):
    """A graph references a label missing from the vocabulary."""


class DimensionMismatchError(DatasetFormatError):
    """Similarity matrix dimensions disagree with the graph list."""


class ReservedLabelError(ValueError):
    """Reserved labels are missing from the vocabulary or already in use."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered object and relationship label lists; indices are stable."""

    object_labels: tuple[str, ...]
    relationship_labels: tuple[str, ...]

    def __post_init__(self):
        for kind, labels in (("object", self.object_labels), ("relationship", self.relationship_labels)):
            if len(set(labels)) != len(labels):
                raise DatasetFormatError(f"duplicate {kind} labels in vocabulary")
        object.__setattr__(self, "_object_index", {l: i for i, l in enumerate(self.object_labels)})
        object.__setattr__(self, "_rel_index", {l: i for i, l in enumerate(self.relationship_labels)})

    def object_index(self, label: str) -> int:
        try:
            return self._object_index[label]
        except KeyError:
            raise UnknownLabelError(f"unknown object label {label!r}") from None

    def relationship_index(self, label: str) -> int:
        try:
            return self._rel_index[label]
        except KeyError:
            raise UnknownLabelError(f"unknown relationship label {label!r}") from None

    def with_reserved(self) -> "Vocabulary":
        """Append the trivial-node/edge labels when they are not present."""
        objects = self.object_labels
        rels = self.relationship_labels
        if TRIVIAL_NODE_LABEL not in objects:
            objects = objects + (TRIVIAL_NODE_LABEL,)
        if TRIVIAL_EDGE_LABEL not in rels:
            rels = rels + (TRIVIAL_EDGE_LABEL,)
        if objects is self.object_labels and rels is self.relationship_labels:
            return self
        return Vocabulary(objects, rels)

    def content_hash(self) -> str:
        payload = json.dumps(
            {"objects": list(self.object_labels), "relationships": list(self.relationship_labels)},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SceneGraph:
    """One image's labeled directed multigraph.

    nodes holds object-label indices; edges holds
    (source node, relationship-label index, target node) triples.
    """

    image_id: str
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]

    def validate(self, vocab: Vocabulary, allow_self_loops: bool = False) -> None:
        n = len(self.nodes)
        for label in self.nodes:
            if not 0 <= label < len(vocab.object_labels):
                raise UnknownLabelError(f"{self.image_id}: object label index {label} out of range")
        for src, rel, tgt in self.edges:
            if not (0 <= src < n and 0 <= tgt < n):
                raise DatasetFormatError(f"{self.image_id}: edge endpoint out of range")
            if not 0 <= rel < len(vocab.relationship_labels):
                raise UnknownLabelError(f"{self.image_id}: relationship label index {rel} out of range")
            if src == tgt and not allow_self_loops:
                raise DatasetFormatError(f"{self.image_id}: self-loop outside trivial construction")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """NxN weak-supervision values in [0,1], aligned with the dataset's image order."""

    image_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        n = len(self.image_ids)
        if v.shape != (n, n):
            raise DimensionMismatchError(f"similarity must be {n}x{n}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DatasetFormatError("similarity contains non-finite entries")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DatasetFormatError("similarity entries must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Split:
    """Index lists for the train/val/test partition of a dataset."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def indices(self, name: str) -> tuple[int, ...]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split name {name!r}") from None


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[SceneGraph, ...]
    similarity: SimilarityMatrix
    vocab: Vocabulary
    split: Split | None = None

    def __post_init__(self):
        if len(self.graphs) != len(self.similarity.image_ids):
            raise DimensionMismatchError(
                f"{len(self.graphs)} graphs but similarity is over {len(self.similarity.image_ids)} images"
            )
        for g, image_id in zip(self.graphs, self.similarity.image_ids):
            if g.image_id != image_id:
                raise DatasetFormatError(f"graph order mismatch at image {g.image_id!r}")

    def with_split(self, split: Split) -> "Dataset":
        return replace(self, split=split)


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------


def load_vocabulary(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}: invalid vocabulary JSON: {e}") from None
    if not isinstance(raw, dict) or "objects" not in raw or "relationships" not in raw:
        raise DatasetFormatError(f"{path}: vocabulary must map 'objects' and 'relationships' to lists")
    return Vocabulary(tuple(raw["objects"]), tuple(raw["relationships"])).with_reserved()


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"objects": list(vocab.object_labels), "relationships": list(vocab.relationship_labels)},
            fh,
            indent=1,
        )
        fh.write("\n")


def load_graphs(path, vocab: Vocabulary) -> tuple[SceneGraph, ...]:
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
            try:
                image_id = rec["image_id"]
                objects = rec["objects"]
                relationships = rec.get("relationships", [])
            except (KeyError, TypeError):
                raise DatasetFormatError(f"{path}:{lineno}: record missing image_id/objects") from None
            if not objects:
                raise DatasetFormatError(f"{path}:{lineno}: image {image_id!r} has no objects")
            try:
                nodes = tuple(vocab.object_index(o["label"]) for o in objects)
                edges = tuple(
                    (int(r["subject"]), vocab.relationship_index(r["predicate"]), int(r["object"]))
                    for r in relationships
                )
            except UnknownLabelError as e:
                raise UnknownLabelError(f"{path}:{lineno}: {e}") from None
            except (KeyError, TypeError, ValueError):
                raise DatasetFormatError(f"{path}:{lineno}: malformed object/relationship record") from None
            g = SceneGraph(image_id, nodes, edges)
            try:
                g.validate(vocab)
            except DatasetFormatError as e:
                raise DatasetFormatError(f"{path}:{lineno}: {e}") from None
            graphs.append(g)
    return tuple(graphs)


def save_graphs(graphs, vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            rec = {
                "image_id": g.image_id,
                "objects": [{"label": vocab.object_labels[i]} for i in g.nodes],
                "relationships": [
                    {"subject": s, "predicate": vocab.relationship_labels[r], "object": t}
                    for s, r, t in g.edges
                ],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_similarity(path) -> SimilarityMatrix:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DatasetFormatError(f"{path}: empty similarity file")
    image_ids = tuple(rows[0])
    n = len(image_ids)
    if len(rows) - 1 != n:
        raise DimensionMismatchError(f"{path}: header lists {n} images but file has {len(rows) - 1} rows")
    values = np.empty((n, n))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != n:
            raise DimensionMismatchError(f"{path}:{i}: expected {n} columns, got {len(row)}")
        try:
            values[i - 2] = [float(c) for c in row]
        except ValueError:
            raise DatasetFormatError(f"{path}:{i}: non-numeric similarity entry") from None
    return SimilarityMatrix(image_ids, values)


def save_similarity(sim: SimilarityMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sim.image_ids)
        for row in sim.values:
            writer.writerow(["%.6f" % v for v in row])


def load_dataset(graphs_path, similarity_path, vocab_path) -> Dataset:
    vocab = load_vocabulary(vocab_path)
    graphs = load_graphs(graphs_path, vocab)
    sim = load_similarity(similarity_path)
    if len(graphs) != len(sim.image_ids):
        raise DimensionMismatchError(
            f"{len(graphs)} graphs but similarity covers {len(sim.image_ids)} images"
        )
    return Dataset(graphs, sim, vocab)


def save_dataset(dataset: Dataset, graphs_path, similarity_path, vocab_path) -> None:
    save_graphs(dataset.graphs, dataset.vocab, graphs_path)
    save_similarity(dataset.similarity, similarity_path)
    save_vocabulary(dataset.vocab, vocab_path)


# ---------------------------------------------------------------------------
# graph transformations
# ---------------------------------------------------------------------------


def augment_trivial(g: SceneGraph, vocab: Vocabulary) -> SceneGraph:
    """Add the trivial image node plus one trivial edge from every original node.

    The result is weakly connected. Augmenting an already-augmented graph
    raises, which keeps the operation safely non-idempotent.
    """
    if TRIVIAL_NODE_LABEL not in vocab.object_labels or TRIVIAL_EDGE_LABEL not in vocab.relationship_labels:
        raise ReservedLabelError("vocabulary lacks the reserved trivial labels")
    node_label = vocab.object_index(TRIVIAL_NODE_LABEL)
    edge_label = vocab.relationship_index(TRIVIAL_EDGE_LABEL)
    if node_label in g.nodes:
        raise ReservedLabelError(f"{g.image_id}: graph already contains the trivial node")
    image_node = len(g.nodes)
    trivial_edges = tuple((u, edge_label, image_node) for u in range(len(g.nodes)))
    return SceneGraph(g.image_id, g.nodes + (node_label,), g.edges + trivial_edges)


def corrupt(g: SceneGraph, m: int, rng_seed) -> SceneGraph:
    """Remove min(m, |edges|) edges uniformly at random, then drop isolated nodes.

    m == 0 returns the graph unchanged. Isolation ignores edge direction.
    When every node would be dropped, the node with the smallest original
    index is kept so the result can still be embedded. Node indices are
    compacted in original order.
    """
    if m < 0:
        raise ValueError("noise level must be non-negative")
    if m == 0:
        return g
    rng = np.random.default_rng(rng_seed)
    n_edges = len(g.edges)
    n_removed = min(m, n_edges)
    removed = set(rng.choice(n_edges, size=n_removed, replace=False).tolist()) if n_edges else set()
    surviving = [e for i, e in enumerate(g.edges) if i not in removed]
    kept_nodes = sorted({u for u, _, _ in surviving} | {v for _, _, v in surviving})
    if not kept_nodes:
        kept_nodes = [0] if g.nodes else []
    remap = {old: new for new, old in enumerate(kept_nodes)}
    return SceneGraph(
        g.image_id,
        tuple(g.nodes[i] for i in kept_nodes),
        tuple((remap[u], r, remap[v]) for u, r, v in surviving),
    )


def split_dataset(dataset: Dataset, ratios: tuple[float, float, float], seed: int) -> Split:
    """Deterministic shuffled split; sizes are floored, remainder goes to train."""
    total = math.fsum(ratios)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {total}")
    n = len(dataset.graphs)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train += n - (n_train + n_val + n_test)
    train = tuple(int(i) for i in perm[:n_train])
    val = tuple(int(i) for i in perm[n_train : n_train + n_val])
    test = tuple(int(i) for i in perm[n_train + n_val :])
    return Split(train, val, test)
