__author__ = "mimoc"

"""
Copyright 2024 The mimoc authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

     http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.

Author: mimoc team
Date: May 22nd 2024
Description:
    Information-bottleneck channel gates: insertion, training, masking and
    structural pruning of residual MIMO graphs
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Text, Tuple

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json

from mimoc.enums import LayerKind
from mimoc.exceptions import ConfigurationError, ConfigurationTypeError, PruneError, ShapeError, UsageError
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.layers import (
    GateParams,
    KeptChannels,
    LayerNode,
    LinearParams,
    QuantizedConvParams,
    ResidualBlockParams,
)
from mimoc.modules.tensor import BnParams, ConvParams, Tensor

GATE_SUFFIX = "_gate"
RECOVER_SUFFIX = "_recover"


@dataclass_json
@dataclass
class VibConfig:
    """Gate initialisation, regularizer weight and prune threshold.

    Attributes:
        gamma_reg (float, optional): weight of sum log(1 + mu^2 / sigma^2). None means
            1e-3 divided by the number of gate layers of the graph.
        tau (float): a channel is kept iff mu^2 / sigma^2 > tau.
        mu_init (float): initial gate mean.
        log_sigma2_init (float): initial log gate variance (sigma^2 ~ 0.1).
        epochs (int): gate-training epochs.
        lr (float): gate-training learning rate.
    """

    gamma_reg: Optional[float] = None
    tau: float = 1e-2
    mu_init: float = 1.0
    log_sigma2_init: float = -2.3
    epochs: int = 20
    lr: float = 0.05

    def __post_init__(self):
        if self.gamma_reg is not None and not isinstance(self.gamma_reg, (int, float)):
            raise ConfigurationTypeError("gamma_reg should be a number")

        if not isinstance(self.tau, (int, float)):
            raise ConfigurationTypeError("tau should be a number")

        if not isinstance(self.epochs, int):
            raise ConfigurationTypeError("epochs should be of type int")

        if self.gamma_reg is not None and self.gamma_reg < 0:
            raise ConfigurationError("gamma_reg must be non-negative")

        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")

        if not np.isfinite(self.log_sigma2_init):
            raise ConfigurationError("log_sigma2_init must be finite")

    def regularizer_weight(self, gate_layers: int) -> float:
        if self.gamma_reg is not None:
            return float(self.gamma_reg)
        return 1e-3 / max(gate_layers, 1)


# ---------------------------------------------------------------------- gate placement


def insert_gates(graph: ModelGraph, cfg: Optional[VibConfig] = None) -> ModelGraph:
    """Add gates at the legal sites.

    Inside every residual block a gate follows bn1 and another follows bn2; the
    bypass is never gated. Every fully connected trunk layer (linear layers that
    are not heads) gets a gate node on its output. Convolutions outside residual
    blocks are left ungated since their outputs feed residual blocks.
    """
    cfg = cfg or VibConfig()
    nodes: List[LayerNode] = []
    rename: Dict[Text, Text] = {}
    for node in graph.nodes:
        node = node.replace(inputs=[rename.get(ref, ref) for ref in node.inputs])
        if node.kind == LayerKind.RESIDUAL_BLOCK and node.params.has_main_path:
            block: ResidualBlockParams = node.params
            dtype = block.conv1.bias.dtype
            changes = {}
            if block.gate1 is None:
                changes["gate1"] = GateParams.init(block.conv1.out_channels, cfg.mu_init, cfg.log_sigma2_init, dtype)
            if block.gate2 is None:
                changes["gate2"] = GateParams.init(block.conv2.out_channels, cfg.mu_init, cfg.log_sigma2_init, dtype)
            nodes.append(node.replace(params=block.replace(**changes)) if changes else node)
            continue
        nodes.append(node)
        already_gated = any(graph.node(c).kind == LayerKind.GATE for c in graph.consumers(node.id))
        if node.kind == LayerKind.LINEAR and node.id not in graph.outputs and not already_gated:
            gate_id = f"{node.id}{GATE_SUFFIX}"
            gate = GateParams.init(node.params.out_features, cfg.mu_init, cfg.log_sigma2_init, node.params.bias.dtype)
            nodes.append(LayerNode(gate_id, LayerKind.GATE, gate, [node.id]))
            rename[node.id] = gate_id
    gated = graph.rebuild(nodes=nodes)
    logging.info(f"Insert Gates: {len(gated.gates())} gate layers")
    return gated


def remove_gates(graph: ModelGraph) -> ModelGraph:
    """Drop every gate without touching the surrounding weights."""
    rename = {node.id: node.inputs[0] for node in graph.nodes if node.kind == LayerKind.GATE}
    nodes = []
    for node in graph.nodes:
        if node.id in rename:
            continue
        params = node.params
        if isinstance(params, ResidualBlockParams):
            params = params.replace(gate1=None, gate2=None)
        nodes.append(node.replace(params=params, inputs=[rename.get(ref, ref) for ref in node.inputs]))
    return graph.rebuild(nodes=nodes)


# ---------------------------------------------------------------------- masks


def compute_mask(gate: GateParams, cfg: VibConfig, layer: Optional[Text] = None, allow_empty: bool = False) -> KeptChannels:
    """Keep channel i iff alpha_i = mu_i^2 / sigma_i^2 > tau (alpha == tau is pruned).

    Raises:
        PruneError: every channel is pruned and `allow_empty` is False.
    """
    kept = [int(i) for i in np.flatnonzero(gate.alpha() > cfg.tau)]
    if not kept and not allow_empty:
        raise PruneError(layer or "gate")
    return KeptChannels(gate.channels, kept)


def _block_gate(path: Text) -> bool:
    return path.endswith(".gate1") or path.endswith(".gate2")


def compute_masks(graph: ModelGraph, cfg: VibConfig) -> "OrderedDict[Text, KeptChannels]":
    """Mask of every gate, keyed by gate path.

    Gates inside residual blocks may lose every channel: the block then falls back
    to a constant main path or to its bypass alone.
    """
    return OrderedDict(
        (path, compute_mask(gate, cfg, path, allow_empty=_block_gate(path))) for path, gate in graph.gates().items()
    )


def apply_masks(graph: ModelGraph, masks: Dict[Text, KeptChannels]) -> ModelGraph:
    """Attach hard masks to the gates; eval mode then zeroes the pruned channels."""
    gates = graph.gates()
    updates = {}
    for path, mask in masks.items():
        if path not in gates:
            raise UsageError(f"Apply Masks: no gate at '{path}'")
        if mask.original_count != gates[path].channels:
            raise ShapeError("mask size differs from gate size", (gates[path].channels,), (mask.original_count,), path)
        updates[path] = GateParams(gates[path].mu, gates[path].log_sigma2, mask)
    return graph.with_updates(updates)


def random_masks(reference: Dict[Text, KeptChannels], seed: int) -> "OrderedDict[Text, KeptChannels]":
    """Random masks keeping as many channels per layer as `reference` does."""
    rng = np.random.default_rng(seed)
    masks = OrderedDict()
    for path, mask in reference.items():
        kept = rng.choice(mask.original_count, size=mask.count, replace=False) if mask.count else []
        masks[path] = KeptChannels(mask.original_count, sorted(int(k) for k in kept))
    return masks


def monotone_in_tau(graph: ModelGraph, taus: List[float]) -> bool:
    """True when the kept count of every gate is non-increasing along ascending taus."""
    previous = None
    for tau in sorted(taus):
        counts = {p: int((g.alpha() > tau).sum()) for p, g in graph.gates().items()}
        if previous is not None and any(counts[p] > previous[p] for p in counts):
            return False
        previous = counts
    return True


# ---------------------------------------------------------------------- structural pruning


def _rows(tensor: Tensor, kept: List[int], scale: Optional[np.ndarray] = None) -> Tensor:
    values = tensor.data.astype(np.float64)[kept]
    if scale is not None:
        values = values * scale.reshape((-1,) + (1,) * (values.ndim - 1))
    return Tensor(values, dtype=tensor.dtype)


def _columns(tensor: Tensor, kept: List[int]) -> Tensor:
    return Tensor(tensor.data[:, kept], dtype=tensor.dtype)


def _conv_rows(conv: ConvParams, kept: List[int], scale: Optional[np.ndarray] = None) -> ConvParams:
    return conv.replace(weight=_rows(conv.weight, kept, scale), bias=_rows(conv.bias, kept, scale))


def _bn_rows(bn: BnParams, kept: List[int], scale: Optional[np.ndarray] = None) -> BnParams:
    return bn.replace(
        gamma=_rows(bn.gamma, kept, scale), beta=_rows(bn.beta, kept, scale), mean=_rows(bn.mean, kept), var=_rows(bn.var, kept)
    )


def _gate_scale(gate: Optional[GateParams], kept: List[int]) -> Optional[np.ndarray]:
    return None if gate is None else gate.mu.data.astype(np.float64)[kept]


def _mask_for(path: Text, gate: Optional[GateParams], masks: Dict[Text, KeptChannels], channels: int) -> KeptChannels:
    if path in masks:
        return masks[path]
    if gate is not None and gate.mask is not None:
        return gate.mask
    return KeptChannels.all(channels)


def _constant_main(block: ResidualBlockParams, keep2: KeptChannels) -> Tensor:
    """Per-channel output of a main path whose conv1 channels are all pruned."""
    conv2 = block.conv2
    values = conv2.bias.data.astype(np.float64)
    if block.bn2 is not None:
        bn = block.bn2
        values = bn.scale() * (values - bn.mean.data.astype(np.float64)) + bn.beta.data.astype(np.float64)
    gated = np.zeros_like(values)
    scale = block.gate2.mu.data.astype(np.float64) if block.gate2 is not None else np.ones_like(values)
    gated[keep2.kept] = values[keep2.kept] * scale[keep2.kept]
    full = np.zeros(block.channels)
    destinations = block.recover_mask.kept if block.recover_mask is not None else list(range(block.channels))
    full[destinations] = gated
    return Tensor(full, dtype=conv2.bias.dtype)


def prune_block(node_id: Text, block: ResidualBlockParams, masks: Dict[Text, KeptChannels]) -> ResidualBlockParams:
    """Prune one residual block.

    gate1 channels leave conv1 (rows), bn1 and conv2 (input channels); gate2 channels
    leave conv2 (rows) and bn2, and a channel-recover re-expands the main path to the
    channel count of the bypass. Gate means are folded into the batch-norm affine
    parameters (or into the conv rows when the batch-norm is already folded).
    """
    if not block.has_main_path:
        return block
    if isinstance(block.conv1, QuantizedConvParams) or isinstance(block.conv2, QuantizedConvParams):
        raise UsageError(f"Prune Structural: block '{node_id}' is quantized, prune before quantizing")
    keep1 = _mask_for(f"{node_id}.gate1", block.gate1, masks, block.conv1.out_channels)
    keep2 = _mask_for(f"{node_id}.gate2", block.gate2, masks, block.conv2.out_channels)
    if keep1.original_count != block.conv1.out_channels or keep2.original_count != block.conv2.out_channels:
        raise ShapeError("mask size differs from block width", (block.conv1.out_channels, block.conv2.out_channels),
                         (keep1.original_count, keep2.original_count), node_id)

    if keep2.count == 0:
        logging.info(f"Prune Structural: block '{node_id}' main path fully pruned, keeping its bypass")
        return block.replace(conv1=None, bn1=None, conv2=None, bn2=None, gate1=None, gate2=None, recover_mask=None)
    if keep1.count == 0:
        logging.info(f"Prune Structural: block '{node_id}' conv1 fully pruned, main path becomes a constant")
        return block.replace(
            conv1=None, bn1=None, conv2=None, bn2=None, gate1=None, gate2=None, recover_mask=None,
            main_bias=_constant_main(block, keep2),
        )

    mu1, mu2 = _gate_scale(block.gate1, keep1.kept), _gate_scale(block.gate2, keep2.kept)
    if block.bn1 is not None:
        conv1, bn1 = _conv_rows(block.conv1, keep1.kept), _bn_rows(block.bn1, keep1.kept, mu1)
    else:
        conv1, bn1 = _conv_rows(block.conv1, keep1.kept, mu1), None
    conv2 = block.conv2.replace(weight=Tensor(block.conv2.weight.data[:, keep1.kept], dtype=block.conv2.weight.dtype))
    if block.bn2 is not None:
        conv2, bn2 = _conv_rows(conv2, keep2.kept), _bn_rows(block.bn2, keep2.kept, mu2)
    else:
        conv2, bn2 = _conv_rows(conv2, keep2.kept, mu2), None

    if block.recover_mask is not None:
        recover = KeptChannels(block.channels, [block.recover_mask.kept[k] for k in keep2.kept])
    else:
        recover = KeptChannels(block.channels, keep2.kept)
    return ResidualBlockParams(
        conv1=conv1,
        bn1=bn1,
        conv2=conv2,
        bn2=bn2,
        downsample=block.downsample,
        gate1=None,
        gate2=None,
        recover_mask=None if recover.is_identity() else recover,
        main_bias=None,
        channels=block.channels,
    )


def _prune_producer(graph: ModelGraph, params: Dict[Text, object], gate_id: Text, kept: List[int], mu: np.ndarray) -> None:
    producer = graph.node(graph.node(gate_id).inputs[0])
    current = params[producer.id]
    if isinstance(current, LinearParams):
        params[producer.id] = LinearParams(_rows(current.weight, kept, mu), _rows(current.bias, kept, mu))
    elif isinstance(current, ConvParams):
        params[producer.id] = _conv_rows(current, kept, mu)
    elif isinstance(current, BnParams):
        conv = graph.node(producer.inputs[0]) if producer.inputs[0] in graph else None
        if conv is None or not isinstance(params[conv.id], ConvParams) or graph.consumers(conv.id) != [producer.id]:
            raise ConfigurationError(f"Prune Structural: gate '{gate_id}' follows a batch-norm without an exclusive conv")
        params[producer.id] = _bn_rows(current, kept, mu)
        params[conv.id] = _conv_rows(params[conv.id], kept)
    else:
        raise ConfigurationError(f"Prune Structural: gate '{gate_id}' follows a {producer.kind.value} node, which cannot be pruned")


def _downstream(graph: ModelGraph, gate_id: Text) -> List[Tuple[Text, Text]]:
    """(feeder, consumer) edges where the gated channels first reach a non-elementwise node."""
    edges = []
    stack = [(gate_id, consumer) for consumer in graph.consumers(gate_id)]
    while stack:
        feeder, consumer = stack.pop(0)
        if graph.node(consumer).kind == LayerKind.RELU:
            stack.extend((consumer, nxt) for nxt in graph.consumers(consumer))
        else:
            edges.append((feeder, consumer))
    return edges


def prune_structural(graph: ModelGraph, masks: Optional[Dict[Text, KeptChannels]] = None) -> ModelGraph:
    """Physically remove masked channels and every gate.

    Masks default to the ones attached by `apply_masks`, then to keeping every
    channel. The pruned graph computes what the eval-mode gated graph computes.

    Raises:
        PruneError: a gate outside residual blocks keeps no channel.
        UsageError: the graph shares rows across branches or is quantized.
    """
    masks = dict(masks or {})
    if graph.shared:
        raise UsageError("Prune Structural: prune before merging branches")
    params: Dict[Text, object] = {node.id: node.params for node in graph.nodes}
    recovers: Dict[Tuple[Text, Text], LayerNode] = {}
    gate_ids = [node.id for node in graph.nodes if node.kind == LayerKind.GATE]

    for node in graph.nodes:
        if node.kind == LayerKind.RESIDUAL_BLOCK:
            params[node.id] = prune_block(node.id, node.params, masks)

    for gate_id in gate_ids:
        gate: GateParams = graph.node(gate_id).params
        mask = _mask_for(gate_id, gate, masks, gate.channels)
        if mask.original_count != gate.channels:
            raise ShapeError("mask size differs from gate size", (gate.channels,), (mask.original_count,), gate_id)
        if mask.count == 0:
            raise PruneError(gate_id)
        _prune_producer(graph, params, gate_id, mask.kept, _gate_scale(gate, mask.kept))
        if mask.is_identity():
            continue
        for feeder, consumer in _downstream(graph, gate_id):
            current = params[consumer]
            if isinstance(current, LinearParams):
                params[consumer] = LinearParams(_columns(current.weight, mask.kept), current.bias)
            elif isinstance(current, ConvParams):
                params[consumer] = current.replace(weight=_columns(current.weight, mask.kept))
            else:
                recover_id = f"{gate_id}{RECOVER_SUFFIX}"
                recovers[(feeder, consumer)] = LayerNode(recover_id, LayerKind.CHANNEL_RECOVER, mask, [feeder])

    gate_inputs = {gate_id: graph.node(gate_id).inputs[0] for gate_id in gate_ids}
    nodes = []
    for node in graph.nodes:
        if node.id in gate_inputs:
            continue
        inputs = []
        for ref in node.inputs:
            edge = (ref, node.id)
            if edge in recovers:
                recover = recovers[edge]
                nodes.append(recover.replace(inputs=[gate_inputs.get(ref, ref)]))
                ref = recover.id
            inputs.append(gate_inputs.get(ref, ref))
        nodes.append(node.replace(params=params[node.id], inputs=inputs))
    branches = {name: [ref for ref in ids if ref not in gate_inputs] for name, ids in graph.branches.items()}
    pruned = graph.rebuild(nodes=nodes, branches=branches)
    logging.info(f"Prune Structural: params {graph.count_params()} -> {pruned.count_params()}")
    return pruned


# ---------------------------------------------------------------------- reporting


@dataclass
class MaskRow:
    layer: Text
    branch: Text
    original: int
    kept: int

    @property
    def percent_pruned(self) -> float:
        return 100.0 * (1.0 - self.kept / self.original) if self.original else 0.0


@dataclass
class MaskReport:
    """Per-gate kept counts, sorted by percentage pruned (descending)."""

    rows: List[MaskRow] = field(default_factory=list)

    @classmethod
    def build(cls, graph: ModelGraph, masks: Dict[Text, KeptChannels]) -> "MaskReport":
        owner = {node_id: branch for branch, ids in graph.branches.items() for node_id in ids}
        rows = [
            MaskRow(path, owner.get(path.split(".")[0], "trunk"), mask.original_count, mask.count)
            for path, mask in masks.items()
        ]
        rows.sort(key=lambda row: (-row.percent_pruned, row.layer))
        return cls(rows)

    @property
    def pruned_fraction(self) -> float:
        """Share of all gated channels that are pruned."""
        total = sum(row.original for row in self.rows)
        return 1.0 - sum(row.kept for row in self.rows) / total if total else 0.0

    def top(self, branch: Text, k: int = 5) -> List[float]:
        return [row.percent_pruned for row in self.rows if row.branch == branch][:k]

    def top_lines(self, k: int = 5) -> List[Text]:
        """e.g. 'image: (100.0%, 98.4%, 97.9%)' for every branch."""
        branches = list(OrderedDict.fromkeys(row.branch for row in self.rows))
        return [f"{b}: (" + ", ".join(f"{p:.1f}%" for p in self.top(b, k)) + ")" for b in branches]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"layer": r.layer, "branch": r.branch, "original": r.original, "kept": r.kept, "percent_pruned": round(r.percent_pruned, 2)}
                for r in self.rows
            ],
            columns=["layer", "branch", "original", "kept", "percent_pruned"],
        )

    def to_text(self) -> Text:
        lines = [self.to_frame().to_string(index=False), f"gated channels pruned: {100.0 * self.pruned_fraction:.1f}%"]
        return "\n".join(lines + self.top_lines())

    def to_dict(self) -> Dict:
        return {
            "layers": [
                {"layer": r.layer, "branch": r.branch, "original": r.original, "kept": r.kept, "percent_pruned": round(r.percent_pruned, 2)}
                for r in self.rows
            ],
            "pruned_fraction": round(self.pruned_fraction, 6),
        }


@dataclass
class VibResult:
    graph: ModelGraph
    masks: "OrderedDict[Text, KeptChannels]"
    report: MaskReport
    losses: List[float] = field(default_factory=list)


def train_vib(graph: ModelGraph, dataset, cfg: Optional[VibConfig] = None, train_cfg=None) -> VibResult:
    """Insert gates if needed, train them jointly with the weights, and report the masks.

    The returned graph still carries its gates (with hard masks attached), so
    `prune_structural` can be applied to it afterwards.
    """
    from mimoc.modules.harness.training import TrainConfig, train

    cfg = cfg or VibConfig()
    train_cfg = train_cfg or TrainConfig(epochs=cfg.epochs, lr=cfg.lr)
    gated = graph if graph.gates() else insert_gates(graph, cfg)
    gamma = cfg.regularizer_weight(len(gated.gates()))
    result = train(gated, dataset, train_cfg, gamma_reg=gamma, desc="Train VIB")
    masks = compute_masks(result.graph, cfg)
    report = MaskReport.build(result.graph, masks)
    logging.info(f"Train VIB: gamma_reg={gamma:g}, tau={cfg.tau:g}, {100.0 * report.pruned_fraction:.1f}% of gated channels pruned")
    return VibResult(apply_masks(result.graph, masks), masks, report, result.losses)
