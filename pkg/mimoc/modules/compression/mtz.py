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
Date: June 3rd 2024
Description:
    Cross-branch neuron merging driven by layer-wise Hessians
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Text, Tuple, Union

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json
from tqdm import tqdm

from mimoc.exceptions import ConfigurationError, ConfigurationTypeError, NumericalError, ShapeError, UsageError
from mimoc.modules.model.graph import ModelGraph
from mimoc.modules.model.layers import QuantizedConvParams, SharedNeuron
from mimoc.modules.tensor import BnParams, ConvParams, Tensor
from mimoc.utils import config

PATCH_CAP = 10_000


@dataclass
class HessianEstimate:
    """Damped second moment of the inputs feeding one layer.

    Attributes:
        matrix (np.ndarray): [F, F] symmetric positive definite, float64.
        sample_count (int): number of input vectors averaged.
        damping (float): lambda added to the diagonal.
    """

    matrix: np.ndarray
    sample_count: int
    damping: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, factor: float) -> "HessianEstimate":
        return HessianEstimate(self.matrix * factor, self.sample_count, self.damping * factor)


def estimate_hessian(activations: Union[np.ndarray, Sequence], damping: Optional[float] = None) -> HessianEstimate:
    """H = (1/n) * sum x x^T + lambda * I.

    Args:
        activations: [n, F] array or a sequence of n vectors of length F.
        damping (float, optional): lambda. Defaults to 1e-3 * trace / F (1e-3 for an
            all-zero second moment).

    Raises:
        UsageError: no activation vector, or a negative damping.
    """
    values = np.asarray(activations, dtype=np.float64)
    if values.size == 0 or values.shape[0] == 0:
        raise UsageError("Estimate Hessian: at least one activation vector is required")
    values = values.reshape(values.shape[0], -1)
    n, dim = values.shape
    moment = values.T @ values / n
    if damping is None:
        trace = float(np.trace(moment))
        damping = 1e-3 * trace / dim if trace > 0 else 1e-3
    if damping < 0:
        raise UsageError(f"Estimate Hessian: damping must be non-negative, got {damping}")
    matrix = moment + damping * np.eye(dim)
    return HessianEstimate(0.5 * (matrix + matrix.T), n, float(damping))


def _cholesky(matrix: np.ndarray, what: Text) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        condition = np.linalg.cond(matrix)
        raise NumericalError(f"Merge: {what} is not positive definite (condition number {condition:.3e}); raise the damping")


def _cho_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(factor.T, np.linalg.solve(factor, rhs))


def _check_dims(w_a: np.ndarray, w_b: np.ndarray, h_a: HessianEstimate, h_b: HessianEstimate) -> None:
    if not (w_a.shape[-1] == w_b.shape[-1] == h_a.dim == h_b.dim):
        raise ShapeError("neuron and Hessian dimensions differ", (h_a.dim, h_b.dim), (w_a.shape[-1], w_b.shape[-1]))


def coupling_matrix(h_a: HessianEstimate, h_b: HessianEstimate) -> np.ndarray:
    """(H_A^-1 + H_B^-1)^-1, evaluated as H_A (H_A + H_B)^-1 H_B through a Cholesky solve."""
    _cholesky(h_a.matrix, "Hessian of branch A")
    _cholesky(h_b.matrix, "Hessian of branch B")
    factor = _cholesky(h_a.matrix + h_b.matrix, "H_A + H_B")
    coupling = h_a.matrix @ _cho_solve(factor, h_b.matrix)
    return 0.5 * (coupling + coupling.T)


def _distances(w_a: np.ndarray, w_b: np.ndarray, coupling: np.ndarray) -> np.ndarray:
    """[m, n] matrix of 0.5 * (a_i - b_j)^T K (a_i - b_j)."""
    ka, kb = w_a @ coupling, w_b @ coupling
    quad_a = np.einsum("if,if->i", ka, w_a)
    quad_b = np.einsum("jf,jf->j", kb, w_b)
    cross = ka @ w_b.T
    return np.maximum(0.5 * (quad_a[:, None] + quad_b[None, :] - 2.0 * cross), 0.0)


def neuron_distance(w_a, w_b, h_a: HessianEstimate, h_b: HessianEstimate) -> float:
    """d = 0.5 * (wA - wB)^T (H_A^-1 + H_B^-1)^-1 (wA - wB), never negative."""
    w_a = np.asarray(getattr(w_a, "data", w_a), dtype=np.float64).reshape(-1)
    w_b = np.asarray(getattr(w_b, "data", w_b), dtype=np.float64).reshape(-1)
    _check_dims(w_a, w_b, h_a, h_b)
    delta = w_a - w_b
    return max(0.5 * float(delta @ coupling_matrix(h_a, h_b) @ delta), 0.0)


def merged_weight(w_a, w_b, h_a: HessianEstimate, h_b: HessianEstimate) -> np.ndarray:
    """(H_A + H_B)^-1 (H_A wA + H_B wB), minimizer of `merge_objective`."""
    w_a = np.asarray(getattr(w_a, "data", w_a), dtype=np.float64).reshape(-1)
    w_b = np.asarray(getattr(w_b, "data", w_b), dtype=np.float64).reshape(-1)
    _check_dims(w_a, w_b, h_a, h_b)
    factor = _cholesky(h_a.matrix + h_b.matrix, "H_A + H_B")
    return _cho_solve(factor, h_a.matrix @ w_a + h_b.matrix @ w_b)


def merge_objective(w: np.ndarray, w_a: np.ndarray, w_b: np.ndarray, h_a: HessianEstimate, h_b: HessianEstimate) -> float:
    """0.5 (w - wA)^T H_A (w - wA) + 0.5 (w - wB)^T H_B (w - wB)."""
    da, db = np.asarray(w) - np.asarray(w_a), np.asarray(w) - np.asarray(w_b)
    return 0.5 * float(da @ h_a.matrix @ da) + 0.5 * float(db @ h_b.matrix @ db)


# ---------------------------------------------------------------------- planning


@dataclass
class MergePair:
    row_a: int
    row_b: int
    distance: float
    weight: np.ndarray


@dataclass
class MergePlan:
    """Pairs of one aligned layer, ascending by distance; each row is used once per branch."""

    layer: Text
    budget: int
    pairs: List[MergePair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def distances(self) -> List[float]:
        return [pair.distance for pair in self.pairs]


def plan_merge(
    layer_a: np.ndarray,
    layer_b: np.ndarray,
    h_a: HessianEstimate,
    h_b: HessianEstimate,
    budget: int,
    layer: Text = "layer",
    exclude_a: Optional[Set[int]] = None,
    exclude_b: Optional[Set[int]] = None,
) -> MergePlan:
    """Greedy matching: repeatedly take the unused pair (i, j) of smallest distance.

    Ties are broken by i, then j, ascending.

    Args:
        layer_a (np.ndarray): [m, F] neuron vectors of branch A.
        layer_b (np.ndarray): [n, F] neuron vectors of branch B.
        h_a, h_b (HessianEstimate): layer Hessians, shared by all neurons of the layer.
        budget (int): number of pairs to merge, at most min(m, n).
        layer (Text, optional): name used in errors and reports.
        exclude_a, exclude_b (Set[int], optional): rows that are already shared.

    Raises:
        ShapeError: the two layers have a different fan-in.
        ConfigurationError: the budget exceeds the available rows.
    """
    w_a = np.asarray(layer_a, dtype=np.float64).reshape(len(layer_a), -1)
    w_b = np.asarray(layer_b, dtype=np.float64).reshape(len(layer_b), -1)
    if w_a.shape[1] != w_b.shape[1]:
        raise ShapeError("layers have different fan-in", (w_a.shape[1],), (w_b.shape[1],), layer)
    exclude_a, exclude_b = set(exclude_a or ()), set(exclude_b or ())
    available = min(len(w_a) - len(exclude_a), len(w_b) - len(exclude_b))
    if budget < 0 or budget > available:
        raise ConfigurationError(f"Merge: budget {budget} for '{layer}' must lie in [0, {available}]")
    plan = MergePlan(layer, budget)
    if budget == 0:
        return plan
    _check_dims(w_a[0], w_b[0], h_a, h_b)

    distances = _distances(w_a, w_b, coupling_matrix(h_a, h_b))
    rows, cols = np.meshgrid(np.arange(len(w_a)), np.arange(len(w_b)), indexing="ij")
    order = np.lexsort((cols.ravel(), rows.ravel(), distances.ravel()))
    factor = _cholesky(h_a.matrix + h_b.matrix, "H_A + H_B")
    used_a, used_b = set(exclude_a), set(exclude_b)
    for flat in order:
        i, j = int(rows.flat[flat]), int(cols.flat[flat])
        if i in used_a or j in used_b:
            continue
        weight = _cho_solve(factor, h_a.matrix @ w_a[i] + h_b.matrix @ w_b[j])
        plan.pairs.append(MergePair(i, j, float(distances[i, j]), weight))
        used_a.add(i)
        used_b.add(j)
        if len(plan.pairs) == budget:
            break
    return plan


# ---------------------------------------------------------------------- graph rewriting


@dataclass_json
@dataclass
class MergeConfig:
    """Settings of the merge stage.

    Attributes:
        budget (Text): 'slot=count,...' with branch-relative slot names
            (e.g. 'block1.conv1=4,block2.conv2=8'), or a fraction in [0, 1] of the
            narrower width applied to every aligned layer.
        calib (int): calibration samples.
        damping (float, optional): Hessian damping; None picks 1e-3 * trace / F.
        patch_cap (int): maximum unfolded patches per layer and branch.
        fine_tune_epochs (int): epochs of joint fine-tuning after merging.
        lr (float): fine-tuning learning rate.
        seed (int): patch sampling and fine-tuning seed.
    """

    budget: Text = "0"
    calib: int = 256
    damping: Optional[float] = None
    patch_cap: int = PATCH_CAP
    fine_tune_epochs: int = 0
    lr: float = 0.01
    seed: int = config.DEFAULT_SEED

    def __post_init__(self):
        if not isinstance(self.budget, str):
            self.budget = str(self.budget)

        if not isinstance(self.calib, int) or not isinstance(self.patch_cap, int):
            raise ConfigurationTypeError("calib and patch_cap should be of type int")

        if not isinstance(self.fine_tune_epochs, int):
            raise ConfigurationTypeError("fine_tune_epochs should be of type int")

        if self.calib < 1 or self.patch_cap < 1:
            raise ConfigurationError("calib and patch_cap must be positive")

        if self.damping is not None and self.damping < 0:
            raise ConfigurationError("damping must be non-negative")

        if self.fine_tune_epochs < 0:
            raise ConfigurationError("fine_tune_epochs must be non-negative")


def relative_slot(branch: Text, slot: Text) -> Text:
    """'image_block1.conv1' -> 'block1.conv1' for branch 'image'."""
    prefix = f"{branch}_"
    return slot[len(prefix) :] if slot.startswith(prefix) else slot


def align_slots(graph: ModelGraph) -> Tuple[Text, Text, List[Tuple[Text, Text, Text]]]:
    """Pair the conv slots of the two branches: (branch_a, branch_b, [(relative, slot_a, slot_b)]).

    Raises:
        UsageError: the graph does not have exactly two branches.
        ConfigurationError: the branches diverge; names the first divergent layer.
    """
    if len(graph.branches) != 2:
        raise UsageError(f"Merge: need exactly two branches, the graph has {len(graph.branches)}")
    branch_a, branch_b = list(graph.branches)
    slots_a, slots_b = graph.conv_slots(branch_a), graph.conv_slots(branch_b)
    aligned = []
    for index in range(max(len(slots_a), len(slots_b))):
        rel_a = relative_slot(branch_a, slots_a[index]) if index < len(slots_a) else None
        rel_b = relative_slot(branch_b, slots_b[index]) if index < len(slots_b) else None
        if rel_a != rel_b:
            raise ConfigurationError(f"Merge: branch topologies diverge at layer {index} ({rel_a} vs {rel_b})")
        aligned.append((rel_a, slots_a[index], slots_b[index]))
    return branch_a, branch_b, aligned


def parse_budget(spec: Union[Text, float, int, Dict[Text, int]], widths: Dict[Text, int]) -> Dict[Text, int]:
    """Per relative slot merge counts from a budget spec.

    Args:
        spec: 'slot=count,...', a fraction, or a ready mapping.
        widths (Dict[Text, int]): relative slot -> mergeable rows (narrower branch).

    Raises:
        ConfigurationError: malformed spec, unknown slot or out-of-range count.
    """
    if isinstance(spec, dict):
        budgets = {str(k): int(v) for k, v in spec.items()}
    else:
        text = str(spec).strip()
        if "=" not in text:
            try:
                fraction = float(text)
            except ValueError:
                raise ConfigurationError(f"Merge: cannot parse budget '{text}'")
            if not 0.0 <= fraction <= 1.0:
                raise ConfigurationError(f"Merge: budget fraction must lie in [0, 1], got {fraction}")
            return {slot: int(np.floor(fraction * width)) for slot, width in widths.items()}
        budgets = {}
        for item in filter(None, (part.strip() for part in text.split(","))):
            slot, _, count = item.partition("=")
            try:
                budgets[slot.strip()] = int(count)
            except ValueError:
                raise ConfigurationError(f"Merge: budget entry '{item}' is not 'slot=count'")
    for slot, count in budgets.items():
        if slot not in widths:
            raise ConfigurationError(f"Merge: unknown layer '{slot}' in budget, expected one of {sorted(widths)}")
        if not 0 <= count <= widths[slot]:
            raise ConfigurationError(f"Merge: budget {count} for '{slot}' must lie in [0, {widths[slot]}]")
    return budgets


def effective_rows(conv: ConvParams, bn: Optional[BnParams]) -> np.ndarray:
    """[Cout, fan_in + 1] rows (filter then bias) of conv followed by its batch-norm, in float64."""
    weight = conv.weight.data.astype(np.float64).reshape(conv.out_channels, -1)
    bias = conv.bias.data.astype(np.float64)
    if bn is not None:
        scale = bn.scale()
        weight = weight * scale[:, None]
        bias = scale * (bias - bn.mean.data.astype(np.float64)) + bn.beta.data.astype(np.float64)
    return np.concatenate([weight, bias[:, None]], axis=1)


def sample_patches(x: np.ndarray, conv: ConvParams, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Unfolded input patches of a convolution, at most `cap` of them, augmented with a trailing 1."""
    k_h, k_w = conv.kernel_size
    pad = conv.padding
    padded = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h, out_w = conv.output_extent(x.shape[2], x.shape[3])
    total = x.shape[0] * out_h * out_w
    index = np.arange(total) if total <= cap else np.sort(rng.choice(total, size=cap, replace=False))
    n, row, col = np.unravel_index(index, (x.shape[0], out_h, out_w))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k_h, k_w), axis=(2, 3))
    patches = windows[n, :, row * conv.stride, col * conv.stride].reshape(len(index), -1)
    return np.concatenate([patches, np.ones((len(index), 1))], axis=1)


def _rows_equal(graph: ModelGraph, slot_a: Text, row_a: int, slot_b: Text, row_b: int) -> bool:
    conv_a, conv_b = graph.get(slot_a), graph.get(slot_b)
    same = np.array_equal(conv_a.weight.data[row_a], conv_b.weight.data[row_b]) and conv_a.bias.data[row_a] == conv_b.bias.data[row_b]
    bn_a, bn_b = graph.slot_bn_path(slot_a), graph.slot_bn_path(slot_b)
    if (bn_a is None) != (bn_b is None):
        return False
    if same and bn_a is not None:
        a, b = graph.get(bn_a), graph.get(bn_b)
        same = a.eps == b.eps and all(
            getattr(a, name).data[row_a] == getattr(b, name).data[row_b] for name in ("gamma", "beta", "mean", "var")
        )
    return bool(same)


def _with_row(tensor: Tensor, row: int, values) -> np.ndarray:
    data = tensor.data.copy()
    data[row] = values
    return data


def _rewrite_layer(graph: ModelGraph, slot_a: Text, slot_b: Text, plan: MergePlan) -> Tuple[ModelGraph, List[SharedNeuron]]:
    """Write each merged row into both branches and make the following batch-norm channel an identity."""
    updates: Dict[Text, np.ndarray] = {}
    shared = []

    def current(path: Text) -> Tensor:
        return Tensor(updates[path], dtype=updates[path].dtype) if path in updates else graph.get(path)

    for pair in plan.pairs:
        shared.append(SharedNeuron(slot_a, pair.row_a, slot_b, pair.row_b))
        if _rows_equal(graph, slot_a, pair.row_a, slot_b, pair.row_b):
            continue
        for slot, row in ((slot_a, pair.row_a), (slot_b, pair.row_b)):
            conv = graph.get(slot)
            updates[f"{slot}.weight"] = _with_row(current(f"{slot}.weight"), row, pair.weight[:-1].reshape(conv.weight.shape[1:]))
            updates[f"{slot}.bias"] = _with_row(current(f"{slot}.bias"), row, pair.weight[-1])
            bn_path = graph.slot_bn_path(slot)
            if bn_path is not None:
                eps = graph.get(bn_path).eps
                for name, value in (("gamma", 1.0), ("beta", 0.0), ("mean", 0.0), ("var", 1.0 - eps)):
                    updates[f"{bn_path}.{name}"] = _with_row(current(f"{bn_path}.{name}"), row, value)
    tensors = {path: Tensor(values, dtype=values.dtype) for path, values in updates.items()}
    return (graph.with_updates(tensors) if tensors else graph), shared


@dataclass
class MergeRow:
    layer: Text
    merged: int
    mean_distance: float
    max_distance: float
    params_saved: int
    note: Text = ""


@dataclass
class MergeReport:
    rows: List[MergeRow] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0
    losses: List[float] = field(default_factory=list)

    @property
    def merged(self) -> int:
        return sum(row.merged for row in self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows], columns=list(MergeRow.__dataclass_fields__))

    def to_dict(self) -> Dict:
        return {
            "layers": [
                {**row.__dict__, "mean_distance": float(row.mean_distance), "max_distance": float(row.max_distance)}
                for row in self.rows
            ],
            "params_before": int(self.params_before),
            "params_after": int(self.params_after),
        }


@dataclass
class MergeResult:
    graph: ModelGraph
    report: MergeReport


def mergeable_widths(graph: ModelGraph) -> Dict[Text, int]:
    """Relative slot -> rows available for merging in the narrower branch."""
    _, _, aligned = align_slots(graph)
    used_a = {(s.slot_a, s.row_a) for s in graph.shared}
    used_b = {(s.slot_b, s.row_b) for s in graph.shared}
    widths = {}
    for rel, slot_a, slot_b in aligned:
        free_a = graph.get(slot_a).out_channels - sum(1 for slot, _ in used_a if slot == slot_a)
        free_b = graph.get(slot_b).out_channels - sum(1 for slot, _ in used_b if slot == slot_b)
        widths[rel] = min(free_a, free_b)
    return widths


def zip_branches(graph: ModelGraph, calibration, cfg: Optional[MergeConfig] = None) -> MergeResult:
    """Merge aligned neurons of the two branch backbones, layer after layer.

    For every aligned conv layer (first to last) the calibration inputs are
    re-captured on the partially merged graph, both Hessians are estimated, the
    greedy plan is computed and the merged rows are written into both branches.
    count_params drops by fan_in + 1 per merged pair. The fused trunk and the
    heads are not touched.

    Args:
        graph (ModelGraph): two-branch model without gates and without quantized convs.
        calibration (SyntheticDataset): samples whose first `cfg.calib` are used.
        cfg (MergeConfig, optional): budgets and estimator settings.

    Raises:
        UsageError: gates or quantized convolutions are present, or the graph is not two-branch.
        ConfigurationError: misaligned branches or an invalid budget.
    """
    cfg = cfg or MergeConfig()
    if graph.gates():
        raise UsageError("Merge: remove or prune the gates before merging")
    branch_a, branch_b, aligned = align_slots(graph)
    for _, slot_a, slot_b in aligned:
        if isinstance(graph.get(slot_a), QuantizedConvParams) or isinstance(graph.get(slot_b), QuantizedConvParams):
            raise UsageError("Merge: merge before quantizing")
    budgets = parse_budget(cfg.budget, mergeable_widths(graph))
    report = MergeReport(params_before=graph.count_params())
    if not any(budgets.values()):
        report.params_after = report.params_before
        logging.info("Merge: every budget is zero, graph unchanged")
        return MergeResult(graph, report)

    samples = calibration.subset(range(min(cfg.calib, len(calibration))))
    inputs = samples.inputs(None, list(graph.inputs))
    rng = np.random.default_rng(cfg.seed)
    for rel, slot_a, slot_b in tqdm(aligned, desc=" Merge", leave=False, disable=config.DISABLE_PROGRESS):
        budget = budgets.get(rel, 0)
        if budget == 0:
            continue
        conv_a, conv_b = graph.get(slot_a), graph.get(slot_b)
        if conv_a.fan_in != conv_b.fan_in or conv_a.kernel_size != conv_b.kernel_size:
            logging.info(f"Merge: skipping '{rel}', fan-in {conv_a.fan_in} vs {conv_b.fan_in}")
            report.rows.append(MergeRow(rel, 0, 0.0, 0.0, 0, "fan-in differs"))
            continue
        captured: Dict[Text, Tensor] = {}
        graph.forward(inputs, capture=captured)
        h_a = estimate_hessian(sample_patches(captured[slot_a].data, conv_a, cfg.patch_cap, rng), cfg.damping)
        h_b = estimate_hessian(sample_patches(captured[slot_b].data, conv_b, cfg.patch_cap, rng), cfg.damping)
        rows_a = effective_rows(conv_a, graph.get(graph.slot_bn_path(slot_a)) if graph.slot_bn_path(slot_a) else None)
        rows_b = effective_rows(conv_b, graph.get(graph.slot_bn_path(slot_b)) if graph.slot_bn_path(slot_b) else None)
        plan = plan_merge(
            rows_a,
            rows_b,
            h_a,
            h_b,
            budget,
            layer=rel,
            exclude_a={s.row_a for s in graph.shared if s.slot_a == slot_a},
            exclude_b={s.row_b for s in graph.shared if s.slot_b == slot_b},
        )
        graph, shared = _rewrite_layer(graph, slot_a, slot_b, plan)
        graph = graph.rebuild(shared=graph.shared + shared)
        distances = plan.distances or [0.0]
        report.rows.append(
            MergeRow(rel, len(plan), float(np.mean(distances)), float(np.max(distances)), len(plan) * (conv_a.fan_in + 1))
        )
        logging.info(f"Merge: '{rel}' merged {len(plan)} rows ({branch_a}/{branch_b}), max distance {max(distances):.4g}")

    if cfg.fine_tune_epochs:
        from mimoc.modules.harness.training import TrainConfig, train

        tuned = train(graph, calibration, TrainConfig(epochs=cfg.fine_tune_epochs, lr=cfg.lr, seed=cfg.seed), desc="Merge fine-tune")
        graph, report.losses = tuned.graph, tuned.losses
    report.params_after = graph.count_params()
    logging.info(f"Merge: params {report.params_before} -> {report.params_after}")
    return MergeResult(graph, report)
