"""Graph convolutional network mapping augmented scene graphs to unit-norm
embeddings.

Each layer runs a shared trunk MLP over every edge's concatenated
(source, edge, target) states, emits a message to the edge's source and
target plus the edge's next state via three linear heads, averages the
messages arriving at each node, and passes the average through a second
MLP followed by row-wise l2 normalization. Graph embeddings are the mean
of the final node states over each graph, re-normalized to unit length.

Minibatches are processed as one disjoint-union graph: node indices are
offset per graph and a per-node graph id drives the pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .scene import Vocabulary, TRIVIAL_NODE_LABEL
from .tensor import BatchNormState, Mode, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Widths and structural switches of the network.

    label_dim is the label-embedding width, message_dim the per-edge message
    width, out_dim the node / edge state and final embedding width.
    """

    label_dim: int = 300
    message_dim: int = 512
    out_dim: int = 300
    num_layers: int = 5
    mlp_hidden: int = 512
    pool_include_trivial: bool = True
    renormalize_embedding: bool = True

    def __post_init__(self):
        for name in ("label_dim", "message_dim", "out_dim", "num_layers", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ModelConfig.{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "label_dim": self.label_dim,
            "message_dim": self.message_dim,
            "out_dim": self.out_dim,
            "num_layers": self.num_layers,
            "mlp_hidden": self.mlp_hidden,
            "pool_include_trivial": self.pool_include_trivial,
            "renormalize_embedding": self.renormalize_embedding,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(**raw)


@dataclass
class GcnLayerParams:
    """Learnable weights of one convolution layer plus its batchnorm buffers."""

    trunk_w: Tensor
    trunk_b: Tensor
    trunk_gamma: Tensor
    trunk_beta: Tensor
    trunk_bn: BatchNormState
    head_s_w: Tensor
    head_s_b: Tensor
    head_t_w: Tensor
    head_t_b: Tensor
    head_e_w: Tensor
    head_e_b: Tensor
    node_w1: Tensor
    node_b1: Tensor
    node_gamma: Tensor
    node_beta: Tensor
    node_bn: BatchNormState
    node_w2: Tensor
    node_b2: Tensor


def _linear(rng, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    # He-uniform weights; biases small-uniform rather than zero so a row whose
    # activations all die still emits a safely-normalizable vector.
    w_bound = math.sqrt(6.0 / fan_in)
    b_bound = 1.0 / math.sqrt(fan_in)
    w = Tensor(rng.uniform(-w_bound, w_bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-b_bound, b_bound, size=fan_out), requires_grad=True)
    return w, b


class GcnModel:
    """All learnable state: two label-embedding tables plus the layer stack."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, object_table, relationship_table, layers):
        self.config = config
        self.vocab = vocab
        self.object_table = object_table
        self.relationship_table = relationship_table
        self.layers = layers
        self._trivial_label = vocab.object_index(TRIVIAL_NODE_LABEL)

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> "GcnModel":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
        d, h, out, hidden = config.label_dim, config.message_dim, config.out_dim, config.mlp_hidden
        table_std = 1.0 / math.sqrt(d)
        object_table = Tensor(
            rng.normal(0.0, table_std, size=(len(vocab.object_labels), d)), requires_grad=True
        )
        relationship_table = Tensor(
            rng.normal(0.0, table_std, size=(len(vocab.relationship_labels), d)), requires_grad=True
        )
        layers = []
        for i in range(config.num_layers):
            width_in = d if i == 0 else out
            trunk_w, trunk_b = _linear(rng, 3 * width_in, hidden)
            head_s_w, head_s_b = _linear(rng, hidden, h)
            head_t_w, head_t_b = _linear(rng, hidden, h)
            head_e_w, head_e_b = _linear(rng, hidden, out)
            node_w1, node_b1 = _linear(rng, h, hidden)
            node_w2, node_b2 = _linear(rng, hidden, out)
            layers.append(
                GcnLayerParams(
                    trunk_w=trunk_w,
                    trunk_b=trunk_b,
                    trunk_gamma=Tensor(np.ones(hidden), requires_grad=True),
                    trunk_beta=Tensor(np.zeros(hidden), requires_grad=True),
                    trunk_bn=BatchNormState.create(hidden),
                    head_s_w=head_s_w,
                    head_s_b=head_s_b,
                    head_t_w=head_t_w,
                    head_t_b=head_t_b,
                    head_e_w=head_e_w,
                    head_e_b=head_e_b,
                    node_w1=node_w1,
                    node_b1=node_b1,
                    node_gamma=Tensor(np.ones(hidden), requires_grad=True),
                    node_beta=Tensor(np.zeros(hidden), requires_grad=True),
                    node_bn=BatchNormState.create(hidden),
                    node_w2=node_w2,
                    node_b2=node_b2,
                )
            )
        return cls(config, vocab, object_table, relationship_table, layers)

    def parameters(self) -> dict[str, Tensor]:
        params = {"object_table": self.object_table, "relationship_table": self.relationship_table}
        fields = (
            "trunk_w",
            "trunk_b",
            "trunk_gamma",
            "trunk_beta",
            "head_s_w",
            "head_s_b",
            "head_t_w",
            "head_t_b",
            "head_e_w",
            "head_e_b",
            "node_w1",
            "node_b1",
            "node_gamma",
            "node_beta",
            "node_w2",
            "node_b2",
        )
        for i, layer in enumerate(self.layers):
            for name in fields:
                params[f"layers.{i}.{name}"] = getattr(layer, name)
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        buffers = {}
        for i, layer in enumerate(self.layers):
            buffers[f"layers.{i}.trunk_bn.running_mean"] = layer.trunk_bn.running_mean
            buffers[f"layers.{i}.trunk_bn.running_var"] = layer.trunk_bn.running_var
            buffers[f"layers.{i}.node_bn.running_mean"] = layer.node_bn.running_mean
            buffers[f"layers.{i}.node_bn.running_var"] = layer.node_bn.running_var
        return buffers

    def embed(self, graphs, mode: Mode = Mode.EVAL) -> Tensor:
        return forward(self, graphs, mode)


@dataclass
class BatchedGraph:
    """Disjoint union of a minibatch of graphs with batch-offset indices."""

    node_labels: np.ndarray
    edge_labels: np.ndarray
    edge_src: np.ndarray
    edge_tgt: np.ndarray
    graph_ids: np.ndarray
    num_graphs: int
    trivial_mask: np.ndarray

    @classmethod
    def from_graphs(cls, graphs, trivial_label: int | None = None) -> "BatchedGraph":
        graphs = list(graphs)
        if not graphs:
            raise ValueError("cannot batch an empty graph list")
        node_labels, edge_labels, srcs, tgts, gids = [], [], [], [], []
        offset = 0
        for gid, g in enumerate(graphs):
            n = len(g.nodes)
            if n == 0:
                raise ValueError(f"{g.image_id}: graph has no nodes")
            node_labels.extend(g.nodes)
            gids.extend([gid] * n)
            for u, r, v in g.edges:
                if not (0 <= u < n and 0 <= v < n):
                    raise ValueError(f"{g.image_id}: edge endpoint out of range")
                srcs.append(u + offset)
                edge_labels.append(r)
                tgts.append(v + offset)
            offset += n
        labels = np.asarray(node_labels, dtype=np.int64)
        return cls(
            node_labels=labels,
            edge_labels=np.asarray(edge_labels, dtype=np.int64),
            edge_src=np.asarray(srcs, dtype=np.int64),
            edge_tgt=np.asarray(tgts, dtype=np.int64),
            graph_ids=np.asarray(gids, dtype=np.int64),
            num_graphs=len(graphs),
            trivial_mask=(labels == trivial_label) if trivial_label is not None else np.zeros(len(labels), bool),
        )

    @property
    def num_nodes(self) -> int:
        return self.node_labels.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_labels.shape[0]


def embed_inputs(model: GcnModel, batch: BatchedGraph) -> tuple[Tensor, Tensor]:
    """Initial node and edge states gathered from the embedding tables."""
    node_states = T.gather_rows(model.object_table, batch.node_labels)
    edge_states = T.gather_rows(model.relationship_table, batch.edge_labels)
    return node_states, edge_states


def layer_forward(
    layer: GcnLayerParams,
    node_states: Tensor,
    edge_states: Tensor,
    batch: BatchedGraph,
    mode: Mode,
) -> tuple[Tensor, Tensor]:
    """One convolution: per-edge messages, edge update, mean-pooled node update."""
    src_states = T.gather_rows(node_states, batch.edge_src)
    tgt_states = T.gather_rows(node_states, batch.edge_tgt)
    trunk_in = T.concat([src_states, edge_states, tgt_states], axis=1)
    hidden = T.relu(
        T.batchnorm(
            T.add(T.matmul(trunk_in, layer.trunk_w), layer.trunk_b),
            layer.trunk_gamma,
            layer.trunk_beta,
            layer.trunk_bn,
            mode,
        )
    )
    msg_to_src = T.add(T.matmul(hidden, layer.head_s_w), layer.head_s_b)
    msg_to_tgt = T.add(T.matmul(hidden, layer.head_t_w), layer.head_t_b)
    new_edge_states = T.add(T.matmul(hidden, layer.head_e_w), layer.head_e_b)

    messages = T.concat([msg_to_src, msg_to_tgt], axis=0)
    segment_ids = np.concatenate([batch.edge_src, batch.edge_tgt])
    counts = np.bincount(segment_ids, minlength=batch.num_nodes)
    silent = np.flatnonzero(counts == 0)
    if silent.size:
        # A node with no incident edges keeps a zero pooled vector; pad each
        # empty segment with a single constant zero message so the mean is 0.
        pad = Tensor(np.zeros((silent.size, messages.shape[1])))
        messages = T.concat([messages, pad], axis=0)
        segment_ids = np.concatenate([segment_ids, silent])
    pooled = T.segment_mean(messages, segment_ids, batch.num_nodes)

    pre = T.relu(
        T.batchnorm(
            T.add(T.matmul(pooled, layer.node_w1), layer.node_b1),
            layer.node_gamma,
            layer.node_beta,
            layer.node_bn,
            mode,
        )
    )
    new_node_states = T.rowwise_l2_normalize(T.add(T.matmul(pre, layer.node_w2), layer.node_b2))
    return new_node_states, new_edge_states


def pool(node_states: Tensor, graph_ids, num_graphs: int, renormalize: bool = True) -> Tensor:
    """Mean of node states per graph, re-normalized to unit rows by default."""
    out = T.segment_mean(node_states, graph_ids, num_graphs)
    if renormalize:
        out = T.rowwise_l2_normalize(out)
    return out


def forward(model: GcnModel, graphs, mode: Mode) -> Tensor:
    """Embed a list of augmented scene graphs; one row per graph."""
    batch = BatchedGraph.from_graphs(graphs, trivial_label=model._trivial_label)
    per_graph_trivial = np.bincount(batch.graph_ids, weights=batch.trivial_mask, minlength=batch.num_graphs)
    if (per_graph_trivial == 0).any():
        raise ValueError("forward expects augmented graphs (missing trivial node); call augment_trivial")
    node_states, edge_states = embed_inputs(model, batch)
    for layer in model.layers:
        node_states, edge_states = layer_forward(layer, node_states, edge_states, batch, mode)
    graph_ids = batch.graph_ids
    if not model.config.pool_include_trivial:
        keep = np.flatnonzero(~batch.trivial_mask)
        node_states = T.gather_rows(node_states, keep)
        graph_ids = graph_ids[keep]
    return pool(node_states, graph_ids, batch.num_graphs, renormalize=model.config.renormalize_embedding)


def embed_graphs(model: GcnModel, graphs, mode: Mode = Mode.EVAL, batch_size: int = 128) -> np.ndarray:
    """Embeddings of many graphs as a plain (n, out_dim) array, chunked forwards."""
    graphs = list(graphs)
    chunks = []
    for start in range(0, len(graphs), batch_size):
        chunks.append(forward(model, graphs[start : start + batch_size], mode).data)
    return np.vstack(chunks) if chunks else np.zeros((0, model.config.out_dim))
