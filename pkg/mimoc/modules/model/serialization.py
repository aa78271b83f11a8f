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
Date: May 17th 2024
Description:
    Reader and writer of the `.mimo` model format

    Layout:
        b"MIMO"                      4 bytes
        format version               uint32 little-endian
        metadata length L            uint32 little-endian
        metadata                     L bytes of UTF-8 YAML (topology, shapes, quantization params)
        arrays                       concatenated in node order: float32/float64 little-endian,
                                     int8 codes, or int4 codes packed two per byte (low nibble first)

    Rows of a conv slot that share storage with the other branch are written once,
    under the first branch.
"""

import logging
import struct
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Text, Union

import numpy as np
import yaml

from mimoc.enums import LayerKind
from mimoc.exceptions import MimocError, ModelParseError
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.layers import (
    BiasedConvParams,
    Downsample,
    GateParams,
    KeptChannels,
    LayerNode,
    LinearParams,
    QuantizedConvParams,
    QuantizedLinearParams,
    QuantParams,
    QuantTensor,
    ResidualBlockParams,
    SharedNeuron,
)
from mimoc.modules.tensor import BnParams, ConvParams, Tensor

MAGIC = b"MIMO"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sII")

_BUNDLES = {
    cls.__name__: cls
    for cls in (
        ConvParams,
        BiasedConvParams,
        BnParams,
        LinearParams,
        GateParams,
        QuantizedConvParams,
        QuantizedLinearParams,
        ResidualBlockParams,
        Downsample,
    )
}

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8"), "int8": np.dtype("i1")}


@dataclass
class _Array:
    path: Text
    values: np.ndarray
    dtype: Text


def pack_int4(codes: np.ndarray) -> bytes:
    """Two signed 4-bit codes per byte, low nibble first; odd lengths are padded with 0."""
    flat = np.asarray(codes, dtype=np.int8).reshape(-1).astype(np.uint8) & 0x0F
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_int4(data: bytes, count: int) -> np.ndarray:
    packed = np.frombuffer(data, dtype=np.uint8)
    nibbles = np.empty(packed.size * 2, dtype=np.int16)
    nibbles[0::2] = packed & 0x0F
    nibbles[1::2] = packed >> 4
    nibbles = nibbles[:count]
    return np.where(nibbles >= 8, nibbles - 16, nibbles).astype(np.int8)


def _nbytes(dtype: Text, count: int) -> int:
    if dtype == "int4":
        return (count + 1) // 2
    return count * _DTYPES[dtype].itemsize


def _encode(obj: Any, path: Text, arrays: List[_Array]) -> Any:
    if obj is None:
        return None
    if isinstance(obj, Tensor):
        arrays.append(_Array(path, obj.data, obj.dtype.name))
        return {"tensor": path}
    if isinstance(obj, QuantTensor):
        arrays.append(_Array(path, obj.codes, "int4" if obj.bits == 4 else "int8"))
        return {"quant": path, "axis": obj.axis, "params": [p.to_dict() for p in obj.params]}
    if isinstance(obj, KeptChannels):
        return {"kept": obj.to_dict()}
    if is_dataclass(obj):
        encoded = {f.name: _encode(getattr(obj, f.name), f"{path}.{f.name}", arrays) for f in fields(obj) if f.init}
        return {"type": type(obj).__name__, "fields": encoded}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _decode(value: Any, arrays: Dict[Text, np.ndarray]) -> Any:
    if not isinstance(value, dict):
        return value
    if "tensor" in value:
        data = arrays[value["tensor"]]
        return Tensor(data, dtype=data.dtype.newbyteorder("="))
    if "quant" in value:
        params = [QuantParams.from_dict(p) for p in value["params"]]
        return QuantTensor(arrays[value["quant"]], params, value.get("axis"))
    if "kept" in value:
        return KeptChannels.from_dict(value["kept"])
    cls = _BUNDLES[value["type"]]
    return cls(**{name: _decode(item, arrays) for name, item in value["fields"].items()})


def _omitted_rows(graph_shared: List[SharedNeuron]) -> Dict[Text, List[int]]:
    rows: Dict[Text, List[int]] = {}
    for item in graph_shared:
        for suffix in ("weight", "bias"):
            rows.setdefault(f"{item.slot_b}.{suffix}", []).append(int(item.row_b))
    return {path: sorted(values) for path, values in rows.items()}


def dumps(graph: ModelGraph) -> bytes:
    """Canonical byte encoding: equal graphs give identical bytes."""
    arrays: List[_Array] = []
    nodes = [
        {"id": node.id, "kind": node.kind.value, "inputs": list(node.inputs), "params": _encode(node.params, node.id, arrays)}
        for node in graph.nodes
    ]
    omitted = _omitted_rows(graph.shared)
    payload = []
    table = []
    for array in arrays:
        values = array.values
        if array.path in omitted:
            values = np.delete(values, omitted[array.path], axis=0)
        table.append({"path": array.path, "dtype": array.dtype, "shape": [int(d) for d in array.values.shape]})
        if array.dtype == "int4":
            payload.append(pack_int4(values))
        else:
            payload.append(np.ascontiguousarray(values, dtype=_DTYPES[array.dtype]).tobytes())
    metadata = {
        "format": "mimo",
        "inputs": {name: list(shape) for name, shape in graph.inputs.items()},
        "outputs": list(graph.outputs),
        "branches": {name: list(ids) for name, ids in graph.branches.items()},
        "shared": [item.to_dict() for item in graph.shared],
        "metadata": graph.metadata,
        "nodes": nodes,
        "arrays": table,
    }
    text = yaml.safe_dump(metadata, sort_keys=True, default_flow_style=None).encode("utf-8")
    return HEADER.pack(MAGIC, FORMAT_VERSION, len(text)) + text + b"".join(payload)


def loads(data: bytes) -> ModelGraph:
    """Decode a `.mimo` byte string.

    Raises:
        ModelParseError: bad magic, unsupported version, unreadable metadata,
            truncated weights or trailing bytes; `offset` locates the failure.
    """
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise ModelParseError("bad magic bytes, not a .mimo file", 0)
    if len(data) < HEADER.size:
        raise ModelParseError("truncated header", len(data))
    _, version, meta_length = HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise ModelParseError(f"unsupported format version {version} (expected {FORMAT_VERSION})", 4)
    meta_end = HEADER.size + meta_length
    if meta_end > len(data):
        raise ModelParseError(f"metadata block of {meta_length} bytes exceeds the file", 8)
    try:
        metadata = yaml.safe_load(data[HEADER.size : meta_end].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise ModelParseError(f"unreadable metadata ({e})", HEADER.size)
    if not isinstance(metadata, dict) or metadata.get("format") != "mimo":
        raise ModelParseError("metadata block is not a mimo graph description", HEADER.size)

    try:
        shared = [SharedNeuron.from_dict(item) for item in metadata.get("shared", [])]
        omitted = _omitted_rows(shared)
        arrays: Dict[Text, np.ndarray] = {}
        offset = meta_end
        for entry in metadata["arrays"]:
            shape = tuple(entry["shape"])
            stored = (shape[0] - len(omitted.get(entry["path"], [])),) + shape[1:] if shape else shape
            count = int(np.prod(stored)) if stored else 1
            size = _nbytes(entry["dtype"], count)
            if offset + size > len(data):
                raise ModelParseError(f"truncated weights of '{entry['path']}'", offset)
            chunk = data[offset : offset + size]
            if entry["dtype"] == "int4":
                values = unpack_int4(chunk, count)
            else:
                values = np.frombuffer(chunk, dtype=_DTYPES[entry["dtype"]]).astype(_DTYPES[entry["dtype"]].newbyteorder("="))
            arrays[entry["path"]] = values.reshape(stored)
            offset += size
        if offset != len(data):
            raise ModelParseError(f"{len(data) - offset} trailing bytes after the weights", offset)

        for item in sorted(shared, key=lambda s: (s.slot_b, s.row_b)):
            for suffix in ("weight", "bias"):
                source = arrays[f"{item.slot_a}.{suffix}"]
                target = f"{item.slot_b}.{suffix}"
                arrays[target] = np.insert(arrays[target], item.row_b, source[item.row_a], axis=0)

        nodes = [
            LayerNode(id=node["id"], kind=LayerKind(node["kind"]), params=_decode(node["params"], arrays), inputs=node["inputs"])
            for node in metadata["nodes"]
        ]
        return ModelGraph(
            nodes=nodes,
            inputs=metadata["inputs"],
            outputs=metadata["outputs"],
            branches=metadata.get("branches") or {},
            shared=shared,
            metadata=metadata.get("metadata") or {},
        )
    except ModelParseError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, MimocError) as e:
        raise ModelParseError(f"inconsistent graph description ({e})", HEADER.size)


def save(graph: ModelGraph, path: Union[Text, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(graph)
    path.write_bytes(data)
    logging.info(f"Save Model: {len(data)} bytes written to {path}")
    return path


def load(path: Union[Text, Path]) -> ModelGraph:
    path = Path(path)
    graph = loads(path.read_bytes())
    logging.info(f"Load Model: {path} ({len(graph)} nodes)")
    return graph


def expected_file_size(graph: ModelGraph, metadata_length: Optional[int] = None) -> int:
    """Header + metadata + stored weight bytes."""
    if metadata_length is None:
        metadata_length = HEADER.unpack_from(dumps(graph), 0)[2]
    return HEADER.size + metadata_length + int(np.ceil(graph.weight_bytes()))
