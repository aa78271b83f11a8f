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
Date: June 14th 2024
Description:
    Accuracy, size and latency metrics, and the SISO/MISO/MIMO baseline bench

    Memory is analytic: stored weight bytes plus the peak activation estimate of
    a batch-1 forward. Energy is not measured; FLOPs and latency stand in for it.
"""

import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Text, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from mimoc.exceptions import UsageError
from mimoc.modules.harness.dataset import SyntheticDataset
from mimoc.modules.model.graph import ModelGraph
from mimoc.utils import config
from mimoc.utils.validation_utils import dataset_inputs_validation

TASKS = ("emotion", "gender")
COLUMNS = ["method", "Acc./task1", "Acc./task2", "Par.", "Mem.", "FLOPs", "Latency", "Latency (median)", "compression_rate"]
LATENCY_GROUPS = 10


@dataclass
class MetricsRow:
    """One report row; accuracies are percentages, None where the model lacks the head."""

    method: Text
    accuracy: Dict[Text, Optional[float]] = field(default_factory=dict)
    params: int = 0
    memory_bytes: float = 0.0
    flops: int = 0
    latency_ms: Optional[float] = None
    latency_median_ms: Optional[float] = None
    compression_rate: Optional[float] = None

    @property
    def acc_task1(self) -> Optional[float]:
        return self.accuracy.get(TASKS[0])

    @property
    def acc_task2(self) -> Optional[float]:
        return self.accuracy.get(TASKS[1])

    def to_dict(self) -> Dict:
        def fmt(value):
            return None if value is None else float(value)

        return {
            "method": self.method,
            "acc_task1": fmt(self.acc_task1),
            "acc_task2": fmt(self.acc_task2),
            "params": int(self.params),
            "memory_bytes": float(self.memory_bytes),
            "flops": int(self.flops),
            "latency_ms": fmt(self.latency_ms),
            "latency_median_ms": fmt(self.latency_median_ms),
            "compression_rate": fmt(self.compression_rate),
        }


@dataclass
class MetricsReport:
    """Rows keyed by pipeline stage or by method, in insertion order."""

    rows: List[MetricsRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, method: Text) -> MetricsRow:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)

    def add(self, row: MetricsRow) -> MetricsRow:
        self.rows.append(row)
        return row

    def to_frame(self) -> pd.DataFrame:
        def pct(value):
            return "N/A" if value is None else round(value, 2)

        records = []
        for row in self.rows:
            records.append(
                {
                    "method": row.method,
                    "Acc./task1": pct(row.acc_task1),
                    "Acc./task2": pct(row.acc_task2),
                    "Par.": row.params,
                    "Mem.": int(round(row.memory_bytes)),
                    "FLOPs": row.flops,
                    "Latency": "N/A" if row.latency_ms is None else round(row.latency_ms, 4),
                    "Latency (median)": "N/A" if row.latency_median_ms is None else round(row.latency_median_ms, 4),
                    "compression_rate": "N/A" if row.compression_rate is None else round(row.compression_rate, 4),
                }
            )
        return pd.DataFrame(records, columns=COLUMNS)

    def to_text(self) -> Text:
        return self.to_frame().to_string(index=False)

    def to_dict(self) -> List[Dict]:
        return [row.to_dict() for row in self.rows]


def _batches(n: int, batch_size: int) -> List[np.ndarray]:
    return [np.arange(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]


def accuracy(
    graph: ModelGraph, dataset: SyntheticDataset, batch_size: int = 64, threads: Optional[int] = None
) -> Dict[Text, float]:
    """Percentage of correct argmax predictions per head, from one forward pass per batch.

    Batches may be spread over a thread pool; counts are summed in batch order.
    """
    threads = threads or config.NUM_THREADS
    names = list(graph.inputs)
    try:
        dataset_inputs_validation(names, dataset.modalities, graph.outputs, dataset.labels)
    except AssertionError as e:
        raise UsageError(str(e))

    def correct(index: np.ndarray) -> Dict[Text, int]:
        outputs = graph.forward(dataset.inputs(index, names))
        targets = dataset.targets(index)
        return {head: int((np.argmax(logits.data, axis=1) == targets[head]).sum()) for head, logits in outputs.items()}

    batches = _batches(len(dataset), batch_size)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(correct, batches))
    else:
        counts = [correct(index) for index in batches]
    return {head: 100.0 * sum(c[head] for c in counts) / len(dataset) for head in graph.outputs}


def latency(
    graph: ModelGraph,
    dataset: SyntheticDataset,
    passes: Optional[int] = None,
    warmup: Optional[int] = None,
    outputs: Optional[Sequence[Text]] = None,
) -> Tuple[float, float]:
    """Mean and median-of-means milliseconds of a batch-1 forward, single-threaded.

    Args:
        passes (int, optional): timed passes. Defaults to MIMOC_LATENCY_PASSES (1000).
        warmup (int, optional): untimed passes first. Defaults to MIMOC_LATENCY_WARMUP (50).
        outputs (Sequence[Text], optional): heads to compute; only their ancestors run.
    """
    passes = config.LATENCY_PASSES if passes is None else passes
    warmup = config.LATENCY_WARMUP if warmup is None else warmup
    sample = dataset.inputs([0], list(graph.inputs))
    for _ in range(warmup):
        graph.forward(sample, outputs=outputs)
    timings = []
    for _ in tqdm(range(passes), desc=" Latency", leave=False, disable=config.DISABLE_PROGRESS):
        start = time.perf_counter()
        graph.forward(sample, outputs=outputs)
        timings.append((time.perf_counter() - start) * 1000.0)
    if not timings:
        return 0.0, 0.0
    groups = np.array_split(np.asarray(timings), min(LATENCY_GROUPS, len(timings)))
    return statistics.fmean(timings), statistics.median(float(g.mean()) for g in groups)


def evaluate(
    graph: ModelGraph,
    dataset: SyntheticDataset,
    method: Text = "evaluate",
    batch_size: int = 64,
    threads: Optional[int] = None,
    measure_latency: bool = True,
    passes: Optional[int] = None,
    warmup: Optional[int] = None,
    baseline_params: Optional[int] = None,
) -> MetricsRow:
    """Accuracy per head plus the size, FLOP and latency figures of a frozen graph."""
    row = MetricsRow(
        method=method,
        accuracy=accuracy(graph, dataset, batch_size, threads),
        params=graph.count_params(),
        memory_bytes=graph.memory_bytes(batch=1),
        flops=graph.count_flops(batch=1),
    )
    if measure_latency:
        row.latency_ms, row.latency_median_ms = latency(graph, dataset, passes, warmup)
    if baseline_params:
        row.compression_rate = 1.0 - row.params / baseline_params
    logging.info(
        f"Evaluate: {method} " + ", ".join(f"{head} {acc:.2f}%" for head, acc in row.accuracy.items()) + f", {row.params} params"
    )
    return row


def combine(method: Text, rows: Sequence[MetricsRow]) -> MetricsRow:
    """Cost of answering every task with separate single-head models: one pass each."""
    accuracy = {}
    for row in rows:
        accuracy.update({head: acc for head, acc in row.accuracy.items() if acc is not None})
    latencies = [row.latency_ms for row in rows]
    medians = [row.latency_median_ms for row in rows]
    return MetricsRow(
        method=method,
        accuracy=accuracy,
        params=sum(row.params for row in rows),
        memory_bytes=sum(row.memory_bytes for row in rows),
        flops=sum(row.flops for row in rows),
        latency_ms=None if None in latencies else sum(latencies),
        latency_median_ms=None if None in medians else sum(medians),
    )


@dataclass
class BenchResult:
    report: MetricsReport
    speedup: Dict[Text, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"rows": self.report.to_dict(), "speedup": {k: float(v) for k, v in self.speedup.items()}}


def bench(
    dataset: SyntheticDataset,
    seed: int = config.DEFAULT_SEED,
    train_cfg=None,
    passes: Optional[int] = None,
    warmup: Optional[int] = None,
) -> BenchResult:
    """Train and evaluate the SISO, MISO and MIMO baselines on one dataset split.

    SISO rows cover every (input, head) pair, MISO rows every head; the 'MISO x2'
    row adds up the two MISO models, the cost of answering both tasks without a
    multi-output network. Speed-ups are latencies relative to the MIMO model.
    """
    from mimoc.modules.harness.training import TrainConfig, train
    from mimoc.modules.model.presets import build_preset

    train_cfg = train_cfg or TrainConfig(seed=seed)
    train_set, test_set = dataset.split(train_cfg.train_fraction, seed)
    short = {"image": "img", "audio": "aud", "emotion": "emo", "gender": "gen"}
    plans = [(f"SISO {short[i]}-{short[h]}", "mini-siso", i, h) for i in ("image", "audio") for h in TASKS]
    plans += [(f"MISO {short[h]}", "mini-miso", None, h) for h in TASKS]
    plans.append(("MIMO", "mini-mimo", None, None))

    report = MetricsReport()
    for method, preset, input_name, head in plans:
        graph = build_preset(preset, seed, input_name=input_name, head=head)
        trained = train(graph, train_set, train_cfg, desc=f"Train {method}").graph
        report.add(evaluate(trained, test_set, method, passes=passes, warmup=warmup))
    miso = combine("MISO x2", [report["MISO emo"], report["MISO gen"]])
    report.rows.insert(len(report) - 1, miso)

    speedup = {}
    mimo_latency = report["MIMO"].latency_ms
    if mimo_latency:
        speedup = {row.method: row.latency_ms / mimo_latency for row in report.rows if row.latency_ms is not None}
    return BenchResult(report, speedup)
