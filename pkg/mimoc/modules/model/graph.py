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
Date: May 14th 2024
Description:
    ModelGraph Class
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, fields, is_dataclass, replace
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Text, Tuple

import numpy as np

from mimoc.enums import GateMode, LayerKind
from mimoc.exceptions import ConfigurationError, ShapeError, UsageError
from mimoc.modules.compression import gates as gate_ops
from mimoc.modules.model.layers import (
    GateParams,
    LayerNode,
    LinearParams,
    QuantizedConvParams,
    QuantizedLinearParams,
    QuantTensor,
    ResidualBlockParams,
    SharedNeuron,
    as_float_conv,
    as_float_linear,
)
from mimoc.modules.tensor import BnParams, ConvParams, Tensor, ops

Shape = Tuple[int, ...]

CONV_KINDS = (LayerKind.CONV, LayerKind.BIASED_CONV, LayerKind.QUANTIZED_CONV)
LINEAR_KINDS = (LayerKind.LINEAR, LayerKind.QUANTIZED_LINEAR)

_TRAINABLE = (
    (GateParams, ("mu", "log_sigma2")),
    (BnParams, ("gamma", "beta")),
    (ConvParams, ("weight", "bias")),
    (LinearParams, ("weight", "bias")),
)

_BLOCK_PARTS = ("conv1", "bn1", "gate1", "conv2", "bn2", "gate2", "downsample.conv", "downsample.bn")
_BLOCK_BN = {"conv1": "bn1", "conv2": "bn2", "downsample.conv": "downsample.bn"}


def trainable_fields(bundle: Any) -> Tuple[Text, ...]:
    for cls, names in _TRAINABLE:
        if isinstance(bundle, cls):
            return names
    return ()


def map_tensors(obj: Any, fn) -> Any:
    """Rebuild a parameter bundle with fn applied to every Tensor it holds."""
    if isinstance(obj, Tensor):
        return fn(obj)
    if is_dataclass(obj) and not isinstance(obj, type):
        changes = {}
        for f in fields(obj):
            if not f.init:
                continue
            value = getattr(obj, f.name)
            new_value = map_tensors(value, fn)
            if new_value is not value:
                changes[f.name] = new_value
        return replace(obj, **changes) if changes else obj
    return obj


def get_path(obj: Any, parts: Sequence[Text]) -> Any:
    for part in parts:
        obj = getattr(obj, part) if obj is not None else None
    return obj


def set_path(obj: Any, parts: Sequence[Text], value: Any) -> Any:
    """Return a copy of obj with the attribute path `parts` replaced by value."""
    if not parts:
        return value
    child = getattr(obj, parts[0])
    return replace(obj, **{parts[0]: set_path(child, parts[1:], value)})


@dataclass
class _ForwardContext:
    mode: GateMode
    noise_seed: int
    gate_index: Dict[Text, int]
    capture: Optional[Dict[Text, Tensor]]

    def gate(self, x: Tensor, gate: GateParams, path: Text) -> Tensor:
        seed = [int(self.noise_seed), self.gate_index.get(path, 0)]
        return gate_ops.gate_forward(x, gate, self.mode, seed, node=path)

    def keep(self, slot: Text, x: Tensor) -> None:
        if self.capture is not None:
            self.capture[slot] = x


class ModelGraph:
    """Directed acyclic graph of layers with named inputs and classifier heads.

    A ModelGraph is treated as frozen once built: passes never mutate a graph
    they receive, they return a new one. Parameter bundles are shared between
    copies since Tensors are immutable.

    Attributes:
        nodes (List[LayerNode]): layers in declaration order.
        inputs (Dict[Text, Shape]): per-sample shape (C, H, W) of every named input.
        outputs (List[Text]): head node ids, in reporting order.
        branches (Dict[Text, List[Text]]): input name -> its backbone node ids, in order.
        shared (List[SharedNeuron]): conv rows stored once for both branches.
        metadata (Dict): free-form provenance (preset, seed, stage history).
    """

    def __init__(
        self,
        nodes: Iterable[LayerNode],
        inputs: Dict[Text, Sequence[int]],
        outputs: Sequence[Text],
        branches: Optional[Dict[Text, Sequence[Text]]] = None,
        shared: Optional[Sequence[SharedNeuron]] = None,
        metadata: Optional[Dict] = None,
        validate: bool = True,
    ) -> None:
        self.nodes: List[LayerNode] = list(nodes)
        self.inputs: Dict[Text, Shape] = OrderedDict((name, tuple(int(d) for d in shape)) for name, shape in inputs.items())
        self.outputs: List[Text] = list(outputs)
        self.branches: Dict[Text, List[Text]] = OrderedDict((k, list(v)) for k, v in (branches or {}).items())
        self.shared: List[SharedNeuron] = list(shared or [])
        self.metadata: Dict = dict(metadata or {})
        self._index: Dict[Text, LayerNode] = {node.id: node for node in self.nodes}
        self._order: Optional[List[LayerNode]] = None
        if validate:
            self.validate()

    # ------------------------------------------------------------------ structure

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[LayerNode]:
        return iter(self.nodes)

    def __contains__(self, node_id: Text) -> bool:
        return node_id in self._index

    def __repr__(self) -> str:
        return f"<ModelGraph inputs={list(self.inputs)} outputs={self.outputs} nodes={len(self.nodes)}>"

    def node(self, node_id: Text) -> LayerNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise UsageError(f"ModelGraph: unknown node '{node_id}'")

    def consumers(self, node_id: Text) -> List[Text]:
        return [node.id for node in self.nodes if node_id in node.inputs]

    def rebuild(self, nodes: Optional[Iterable[LayerNode]] = None, **changes) -> "ModelGraph":
        """New graph sharing this one's fields except those given."""
        kwargs = dict(
            nodes=self.nodes if nodes is None else nodes,
            inputs=self.inputs,
            outputs=self.outputs,
            branches=self.branches,
            shared=self.shared,
            metadata=self.metadata,
        )
        kwargs.update(changes)
        return ModelGraph(**kwargs)

    def copy(self) -> "ModelGraph":
        return self.rebuild(nodes=[node.replace() for node in self.nodes])

    def astype(self, dtype: Any) -> "ModelGraph":
        """Cast every float parameter (64-bit graphs are used for finite-difference checks)."""
        nodes = [node.replace(params=map_tensors(node.params, lambda t: t.astype(dtype))) for node in self.nodes]
        return self.rebuild(nodes=nodes)

    def validate(self) -> None:
        """Check unique ids, existing references, acyclicity, reachability and shapes."""
        if len(self._index) != len(self.nodes):
            seen, duplicates = set(), set()
            for node in self.nodes:
                (duplicates if node.id in seen else seen).add(node.id)
            raise ConfigurationError(f"ModelGraph: duplicate node ids {sorted(duplicates)}")
        clash = set(self._index) & set(self.inputs)
        if clash:
            raise ConfigurationError(f"ModelGraph: node ids {sorted(clash)} collide with input names")
        for node in self.nodes:
            for ref in node.inputs:
                if ref not in self._index and ref not in self.inputs:
                    raise ConfigurationError(f"ModelGraph: node '{node.id}' references unknown input '{ref}'")
        for head in self.outputs:
            if head not in self._index:
                raise ConfigurationError(f"ModelGraph: output '{head}' is not a node")
            if not self._ancestors([head]) & set(self.inputs):
                raise ConfigurationError(f"ModelGraph: output '{head}' is not reachable from any input")
        self.topological_order()
        self.infer_shapes(batch=1)

    def topological_order(self) -> List[LayerNode]:
        """Kahn's algorithm, preferring declaration order among ready nodes."""
        if self._order is not None:
            return self._order
        pending = {node.id: sum(1 for ref in node.inputs if ref in self._index) for node in self.nodes}
        order: List[LayerNode] = []
        ready = [node for node in self.nodes if pending[node.id] == 0]
        position = {node.id: i for i, node in enumerate(self.nodes)}
        while ready:
            ready.sort(key=lambda n: position[n.id])
            node = ready.pop(0)
            order.append(node)
            for consumer_id in self.consumers(node.id):
                pending[consumer_id] -= self._index[consumer_id].inputs.count(node.id)
                if pending[consumer_id] == 0:
                    ready.append(self._index[consumer_id])
        if len(order) != len(self.nodes):
            stuck = sorted(set(self._index) - {node.id for node in order})
            raise ConfigurationError(f"ModelGraph: cycle through nodes {stuck}")
        self._order = order
        return order

    def _ancestors(self, targets: Iterable[Text]) -> Set[Text]:
        seen: Set[Text] = set()
        stack = list(targets)
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            if current in self._index:
                stack.extend(self._index[current].inputs)
        return seen

    # ------------------------------------------------------------------ parameters

    def named_parameters(self) -> "OrderedDict[Text, Tensor]":
        """Trainable tensors keyed by attribute path, e.g. 'image_block1.conv1.weight'."""
        named: "OrderedDict[Text, Tensor]" = OrderedDict()
        for node in self.nodes:
            params = node.params
            if isinstance(params, ResidualBlockParams):
                for part in _BLOCK_PARTS:
                    bundle = get_path(params, part.split("."))
                    for name in trainable_fields(bundle):
                        named[f"{node.id}.{part}.{name}"] = getattr(bundle, name)
                if params.main_bias is not None:
                    named[f"{node.id}.main_bias"] = params.main_bias
            else:
                for name in trainable_fields(params):
                    named[f"{node.id}.{name}"] = getattr(params, name)
        return named

    def get(self, path: Text) -> Any:
        """Parameter bundle or tensor at an attribute path; a bare node id gives its params."""
        parts = path.split(".")
        return get_path(self.node(parts[0]).params, parts[1:])

    def with_updates(self, updates: Dict[Text, Any], validate: bool = True) -> "ModelGraph":
        """New graph with the bundles/tensors at the given attribute paths replaced."""
        grouped: Dict[Text, List[Tuple[List[Text], Any]]] = {}
        for path, value in updates.items():
            parts = path.split(".")
            self.node(parts[0])
            grouped.setdefault(parts[0], []).append((parts[1:], value))
        nodes = []
        for node in self.nodes:
            params = node.params
            for parts, value in grouped.get(node.id, []):
                params = set_path(params, parts, value)
            nodes.append(node.replace(params=params) if node.id in grouped else node)
        return self.rebuild(nodes=nodes, validate=validate)

    def with_parameters(self, values: Dict[Text, Tensor]) -> "ModelGraph":
        """New graph with trainable tensors replaced; shapes must not change."""
        current = self.named_parameters()
        for name, tensor in values.items():
            if name not in current:
                raise UsageError(f"ModelGraph: unknown parameter '{name}'")
            if tensor.shape != current[name].shape:
                raise ShapeError(f"parameter '{name}' changes shape", current[name].shape, tensor.shape)
        changed = {name: tensor for name, tensor in values.items() if tensor is not current[name]}
        return self.with_updates(changed, validate=False) if changed else self

    def gates(self) -> "OrderedDict[Text, GateParams]":
        """Every gate in topological order: gate node ids and '<block>.gate1/2' paths."""
        found: "OrderedDict[Text, GateParams]" = OrderedDict()
        for node in self.topological_order():
            if node.kind == LayerKind.GATE:
                found[node.id] = node.params
            elif node.kind == LayerKind.RESIDUAL_BLOCK:
                for part in ("gate1", "gate2"):
                    gate = getattr(node.params, part)
                    if gate is not None:
                        found[f"{node.id}.{part}"] = gate
        return found

    def conv_slots(self, branch: Text) -> List[Text]:
        """Paths of the convolutions of one branch backbone, in evaluation order."""
        if branch not in self.branches:
            raise UsageError(f"ModelGraph: unknown branch '{branch}'")
        slots = []
        for node_id in self.branches[branch]:
            node = self.node(node_id)
            if node.kind in CONV_KINDS:
                slots.append(node.id)
            elif node.kind == LayerKind.RESIDUAL_BLOCK:
                for part in ("conv1", "conv2", "downsample.conv"):
                    if get_path(node.params, part.split(".")) is not None:
                        slots.append(f"{node.id}.{part}")
        return slots

    def slot_bn_path(self, slot: Text) -> Optional[Text]:
        """Path of the batch-norm applied directly to a conv slot's output, if any."""
        node_id, _, part = slot.partition(".")
        if part:
            bn_part = _BLOCK_BN.get(part)
            if bn_part is None or self.get(f"{node_id}.{bn_part}") is None:
                return None
            return f"{node_id}.{bn_part}"
        consumers = self.consumers(node_id)
        if len(consumers) == 1 and self.node(consumers[0]).kind == LayerKind.BN:
            return consumers[0]
        return None

    # ------------------------------------------------------------------ shapes and costs

    def _input_shapes(self, batch: int, input_shapes: Optional[Dict[Text, Sequence[int]]]) -> Dict[Text, Shape]:
        shapes = {name: (batch,) + shape for name, shape in self.inputs.items()}
        for name, shape in (input_shapes or {}).items():
            shapes[name] = (batch,) + tuple(shape)
        return shapes

    def infer_shapes(self, batch: int = 1, input_shapes: Optional[Dict[Text, Sequence[int]]] = None) -> Dict[Text, Shape]:
        shapes = self._input_shapes(batch, input_shapes)
        for node in self.topological_order():
            shapes[node.id], _ = _node_cost(node, [shapes[ref] for ref in node.inputs])
        return shapes

    def node_flops(self, batch: int = 1, input_shapes: Optional[Dict[Text, Sequence[int]]] = None) -> "OrderedDict[Text, int]":
        shapes = self._input_shapes(batch, input_shapes)
        ledger: "OrderedDict[Text, int]" = OrderedDict()
        for node in self.topological_order():
            shapes[node.id], ledger[node.id] = _node_cost(node, [shapes[ref] for ref in node.inputs])
        return ledger

    def count_flops(self, batch: int = 1, input_shapes: Optional[Dict[Text, Sequence[int]]] = None) -> int:
        """2 * multiply-adds for conv and linear, plus one op per element of relu/add/gate/pool and two for bn."""
        return int(sum(self.node_flops(batch, input_shapes).values()))

    def node_params(self) -> "OrderedDict[Text, int]":
        return OrderedDict((node.id, _param_count(node.params)) for node in self.nodes)

    def shared_savings(self) -> int:
        return sum(self.get(item.slot_b).fan_in + 1 for item in self.shared)

    def count_params(self) -> int:
        """Learnable elements; a shared conv row (weights and bias) is counted once."""
        return int(sum(self.node_params().values())) - self.shared_savings()

    def weight_bytes(self) -> float:
        """Stored parameter bytes: float tensors at their width, codes at 1 or 1/2 byte."""
        total = 0.0
        for node in self.nodes:
            total += _storage_bytes(node.params)
        for item in self.shared:
            slot = self.get(item.slot_b)
            if isinstance(slot, QuantizedConvParams):
                total -= slot.fan_in * slot.weight.bits / 8.0 + slot.bias.dtype.itemsize
            else:
                total -= (slot.fan_in + 1) * slot.weight.dtype.itemsize
        return total

    def activation_bytes(self, batch: int = 1) -> int:
        """Peak of input-plus-output activation bytes over single nodes, float32."""
        shapes = self.infer_shapes(batch)
        peak = 0
        for node in self.nodes:
            elements = int(np.prod(shapes[node.id])) + sum(int(np.prod(shapes[ref])) for ref in node.inputs)
            peak = max(peak, elements * 4)
        return peak

    def memory_bytes(self, batch: int = 1) -> float:
        return self.weight_bytes() + self.activation_bytes(batch)

    # ------------------------------------------------------------------ evaluation

    def check_inputs(self, inputs: Dict[Text, Tensor], required: Optional[Iterable[Text]] = None) -> None:
        names = list(required) if required is not None else list(self.inputs)
        batch = None
        for name in names:
            if name not in inputs:
                raise ShapeError(f"missing graph input '{name}'", node=name)
            tensor = inputs[name]
            if tensor.shape[1:] != self.inputs[name]:
                raise ShapeError(f"input '{name}' shape differs from declaration", (None,) + self.inputs[name], tensor.shape, name)
            if batch is not None and tensor.shape[0] != batch:
                raise ShapeError(f"input '{name}' batch size differs from other inputs", (batch,), tensor.shape[:1], name)
            batch = tensor.shape[0]

    def forward(
        self,
        inputs: Dict[Text, Tensor],
        mode: GateMode = GateMode.EVAL,
        noise_seed: int = 0,
        outputs: Optional[Sequence[Text]] = None,
        capture: Optional[Dict[Text, Tensor]] = None,
    ) -> "OrderedDict[Text, Tensor]":
        """Evaluate the graph in topological order.

        Args:
            inputs (Dict[Text, Tensor]): one tensor per declared input, [N, C, H, W].
            mode (GateMode, optional): gate behaviour. Defaults to eval.
            noise_seed (int, optional): base seed of train-mode gate noise.
            outputs (Sequence[Text], optional): heads to compute; only their ancestors run.
                Defaults to every head.
            capture (Dict[Text, Tensor], optional): filled with the input of every
                conv slot that runs, keyed by slot path.

        Returns:
            OrderedDict[Text, Tensor]: head id -> logits.
        """
        wanted = list(outputs) if outputs is not None else self.outputs
        for head in wanted:
            if head not in self._index:
                raise UsageError(f"ModelGraph: unknown output '{head}'")
        needed = self._ancestors(wanted)
        self.check_inputs(inputs, [name for name in self.inputs if name in needed])
        context = _ForwardContext(
            mode=GateMode(mode),
            noise_seed=noise_seed,
            gate_index={path: i for i, path in enumerate(self.gates())},
            capture=capture,
        )
        values: Dict[Text, Tensor] = {name: inputs[name] for name in self.inputs if name in needed}
        for node in self.topological_order():
            if node.id not in needed:
                continue
            values[node.id] = self._run(node, [values[ref] for ref in node.inputs], context)
        return OrderedDict((head, values[head]) for head in wanted)

    def _run(self, node: LayerNode, args: List[Tensor], context: _ForwardContext) -> Tensor:
        kind, params = node.kind, node.params
        if kind in CONV_KINDS:
            context.keep(node.id, args[0])
            return ops.conv2d(args[0], as_float_conv(params), node.id)
        if kind == LayerKind.BN:
            return ops.batchnorm_infer(args[0], params, node.id)
        if kind == LayerKind.RELU:
            return ops.relu(args[0])
        if kind in LINEAR_KINDS:
            dense = as_float_linear(params)
            return ops.linear(args[0], dense.weight, dense.bias, node.id)
        if kind == LayerKind.CONCAT:
            return ops.concat_channels(args[0], args[1], node.id)
        if kind == LayerKind.GLOBAL_POOL:
            return ops.global_avg_pool(args[0])
        if kind == LayerKind.GATE:
            return context.gate(args[0], params, node.id)
        if kind == LayerKind.CHANNEL_RECOVER:
            return gate_ops.channel_recover(args[0], params, node.id)
        if kind == LayerKind.RESIDUAL_BLOCK:
            return self._run_block(node.id, params, args[0], context)
        raise ConfigurationError(f"ModelGraph: node '{node.id}' has unsupported kind {kind}")

    def _run_block(self, node_id: Text, block: ResidualBlockParams, x: Tensor, context: _ForwardContext) -> Tensor:
        identity = x
        if block.downsample is not None:
            context.keep(f"{node_id}.downsample.conv", x)
            identity = ops.conv2d(x, as_float_conv(block.downsample.conv), f"{node_id}.downsample.conv")
            if block.downsample.bn is not None:
                identity = ops.batchnorm_infer(identity, block.downsample.bn, f"{node_id}.downsample.bn")

        main = None
        if block.has_main_path:
            context.keep(f"{node_id}.conv1", x)
            h = ops.conv2d(x, as_float_conv(block.conv1), f"{node_id}.conv1")
            if block.bn1 is not None:
                h = ops.batchnorm_infer(h, block.bn1, f"{node_id}.bn1")
            if block.gate1 is not None:
                h = context.gate(h, block.gate1, f"{node_id}.gate1")
            h = ops.relu(h)
            context.keep(f"{node_id}.conv2", h)
            h = ops.conv2d(h, as_float_conv(block.conv2), f"{node_id}.conv2")
            if block.bn2 is not None:
                h = ops.batchnorm_infer(h, block.bn2, f"{node_id}.bn2")
            if block.gate2 is not None:
                h = context.gate(h, block.gate2, f"{node_id}.gate2")
            if block.recover_mask is not None:
                h = gate_ops.channel_recover(h, block.recover_mask, f"{node_id}.recover")
            main = h
        elif block.main_bias is not None:
            main = ops.fill_channels(block.main_bias, identity.shape)

        out = identity if main is None else ops.add(identity, main, node_id)
        return ops.relu(out)


# ---------------------------------------------------------------------- per-node accounting


def _numel(shape: Shape) -> int:
    return int(np.prod(shape)) if shape else 1


def _conv_cost(params: Any, shape: Shape, node: Text) -> Tuple[Shape, int]:
    if len(shape) != 4:
        raise ShapeError("conv expects a 4-D input", actual=shape, node=node)
    if shape[1] != params.in_channels:
        raise ShapeError("conv input channels differ from weight in_channels", (None, params.in_channels), shape, node)
    h_out, w_out = params.output_extent(shape[2], shape[3])
    k_h, k_w = params.kernel_size
    out = (shape[0], params.out_channels, h_out, w_out)
    return out, 2 * params.out_channels * params.in_channels * k_h * k_w * h_out * w_out * shape[0]


def _channel_check(channels: int, shape: Shape, node: Text, what: Text) -> None:
    if len(shape) < 2 or shape[1] != channels:
        raise ShapeError(f"{what} channel count differs from its input", (None, channels), shape, node)


def _block_cost(block: ResidualBlockParams, shape: Shape, node: Text) -> Tuple[Shape, int]:
    flops = 0
    identity = shape
    if block.downsample is not None:
        identity, cost = _conv_cost(block.downsample.conv, shape, f"{node}.downsample.conv")
        flops += cost
        if block.downsample.bn is not None:
            _channel_check(block.downsample.bn.channels, identity, f"{node}.downsample.bn", "bn")
            flops += 2 * _numel(identity)

    main = None
    if block.has_main_path:
        h, cost = _conv_cost(block.conv1, shape, f"{node}.conv1")
        flops += cost
        if block.bn1 is not None:
            _channel_check(block.bn1.channels, h, f"{node}.bn1", "bn")
            flops += 2 * _numel(h)
        if block.gate1 is not None:
            _channel_check(block.gate1.channels, h, f"{node}.gate1", "gate")
            flops += _numel(h)
        flops += _numel(h)
        h, cost = _conv_cost(block.conv2, h, f"{node}.conv2")
        flops += cost
        if block.bn2 is not None:
            _channel_check(block.bn2.channels, h, f"{node}.bn2", "bn")
            flops += 2 * _numel(h)
        if block.gate2 is not None:
            _channel_check(block.gate2.channels, h, f"{node}.gate2", "gate")
            flops += _numel(h)
        if block.recover_mask is not None:
            _channel_check(block.recover_mask.count, h, f"{node}.recover", "channel_recover")
            h = (h[0], block.recover_mask.original_count) + h[2:]
        main = h
    elif block.main_bias is not None:
        main = (identity[0], block.main_bias.shape[0]) + identity[2:]

    if main is not None:
        if main != identity:
            raise ShapeError("residual main path and bypass disagree at the skip-add", identity, main, node)
        flops += _numel(identity)
    flops += _numel(identity)
    return identity, flops


def _node_cost(node: LayerNode, shapes: List[Shape]) -> Tuple[Shape, int]:
    kind, params = node.kind, node.params
    if kind in CONV_KINDS:
        return _conv_cost(params, shapes[0], node.id)
    if kind == LayerKind.BN:
        _channel_check(params.channels, shapes[0], node.id, "bn")
        return shapes[0], 2 * _numel(shapes[0])
    if kind == LayerKind.RELU:
        return shapes[0], _numel(shapes[0])
    if kind in LINEAR_KINDS:
        shape = shapes[0]
        if len(shape) != 2 or shape[1] != params.in_features:
            raise ShapeError("linear input features differ from weight fan-in", (None, params.in_features), shape, node.id)
        return (shape[0], params.out_features), 2 * params.out_features * params.in_features * shape[0]
    if kind == LayerKind.CONCAT:
        if len(shapes) != 2:
            raise ShapeError("concat needs exactly two inputs", (2,), (len(shapes),), node.id)
        a, b = shapes
        if len(a) != len(b) or a[:1] + a[2:] != b[:1] + b[2:]:
            raise ShapeError("concat needs matching N, H, W", a, b, node.id)
        return (a[0], a[1] + b[1]) + a[2:], 0
    if kind == LayerKind.GLOBAL_POOL:
        if len(shapes[0]) != 4:
            raise ShapeError("global_pool expects a 4-D input", actual=shapes[0], node=node.id)
        return shapes[0][:2], _numel(shapes[0])
    if kind == LayerKind.GATE:
        _channel_check(params.channels, shapes[0], node.id, "gate")
        return shapes[0], _numel(shapes[0])
    if kind == LayerKind.CHANNEL_RECOVER:
        _channel_check(params.count, shapes[0], node.id, "channel_recover")
        return (shapes[0][0], params.original_count) + shapes[0][2:], 0
    if kind == LayerKind.RESIDUAL_BLOCK:
        return _block_cost(params, shapes[0], node.id)
    raise ConfigurationError(f"ModelGraph: node '{node.id}' has unsupported kind {kind}")


def _param_count(params: Any) -> int:
    if params is None:
        return 0
    if isinstance(params, ResidualBlockParams):
        total = sum(_param_count(get_path(params, part.split("."))) for part in _BLOCK_PARTS)
        return total + (params.main_bias.size if params.main_bias is not None else 0)
    if isinstance(params, (QuantizedConvParams, QuantizedLinearParams)):
        return params.weight.size + params.bias.size
    return sum(getattr(params, name).size for name in trainable_fields(params))


def _storage_bytes(params: Any) -> float:
    if isinstance(params, Tensor):
        return float(params.size * params.dtype.itemsize)
    if isinstance(params, QuantTensor):
        return params.storage_bytes()
    if is_dataclass(params) and not isinstance(params, type):
        return sum(_storage_bytes(getattr(params, f.name)) for f in fields(params) if f.init)
    return 0.0


def log_summary(graph: ModelGraph) -> None:
    logging.info(
        f"ModelGraph: {len(graph)} nodes, {graph.count_params()} params, {graph.count_flops()} FLOPs, heads {graph.outputs}"
    )
