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
Date: June 18th 2024
Description:
    Markdown run summary
"""

from typing import List, Text

from jinja2 import BaseLoader, Environment

TEMPLATE = """# mimoc run: {{ cfg.preset }} (seed {{ cfg.seed }})

Stages: {{ cfg.stages | join(" -> ") }}

| Stage | Acc./task1 | Acc./task2 | Par. | Mem. (bytes) | FLOPs | Latency (ms) | Compression |
|---|---|---|---|---|---|---|---|
{% for row in rows %}
| {{ row.method }} | {{ row.acc1 }} | {{ row.acc2 }} | {{ row.params }} | {{ row.memory }} | {{ row.flops }} | {{ row.latency }} | {{ row.rate }} |
{% endfor %}

Memory is the analytic model size (weights plus peak activations), not resident process memory.
{% if masks %}

## Pruned channels

Gated channels pruned: {{ "%.1f" | format(100 * masks.pruned_fraction) }}%

{% for line in masks.top_lines() %}
- {{ line }}
{% endfor %}
{% endif %}
{% if merge %}

## Merged neurons

{% for row in merge.rows %}
- {{ row.layer }}: {{ row.merged }} pairs{% if row.note %} ({{ row.note }}){% endif %}, max distance {{ "%.4g" | format(row.max_distance) }}
{% endfor %}
Parameters {{ merge.params_before }} -> {{ merge.params_after }}
{% endif %}
{% if ablation %}

## Ablation

| Method | Acc./task1 | Acc./task2 | Par. | Mem. (bytes) | Latency (ms) |
|---|---|---|---|---|---|
{% for row in ablation %}
| {{ row.method }} | {{ row.acc1 }} | {{ row.acc2 }} | {{ row.params }} | {{ row.memory }} | {{ row.latency }} |
{% endfor %}
{% endif %}
"""


def _display(rows) -> List[dict]:
    def pct(value):
        return "N/A" if value is None else f"{value:.2f}"

    return [
        {
            "method": row.method,
            "acc1": pct(row.acc_task1),
            "acc2": pct(row.acc_task2),
            "params": row.params,
            "memory": int(round(row.memory_bytes)),
            "flops": row.flops,
            "latency": "N/A" if row.latency_ms is None else f"{row.latency_ms:.4f}",
            "rate": "N/A" if row.compression_rate is None else f"{100 * row.compression_rate:.1f}%",
        }
        for row in rows
    ]


def render_summary(result, cfg) -> Text:
    """Render a PipelineResult as Markdown."""
    env = Environment(loader=BaseLoader(), trim_blocks=True, lstrip_blocks=True)
    template = env.from_string(TEMPLATE)
    return template.render(
        cfg=cfg,
        rows=_display(result.report.rows),
        masks=result.mask_report,
        merge=result.merge_report,
        ablation=_display(result.ablation.rows),
    )
