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
Date: June 20th 2024
Description:
    Pipeline CLI
"""

from typing import Optional, Text

import click
import yaml

from mimoc.decorators import exit_on_error
from mimoc.factories.pipeline_factory import PipelineFactory


@click.command("pipeline")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="YAML pipeline config; every field defaults as in docs/samples/pipeline.yaml.")
@click.option("--out", default=None, type=click.Path(file_okay=False), help="Override output_dir.")
@click.option("--seed", default=None, type=int, help="Override seed.")
@click.option("--ablation/--no-ablation", default=None, help="Override ablation.")
@exit_on_error
def run_pipeline(config_path: Optional[Text], out: Optional[Text], seed: Optional[int], ablation: Optional[bool]) -> None:
    """Run train -> vib-prune -> fine-tune -> merge -> fold-bn -> quantize -> evaluate."""
    cfg = PipelineFactory.create(config_path)
    overrides = {key: value for key, value in (("output_dir", out), ("seed", seed), ("ablation", ablation)) if value is not None}
    if overrides:
        cfg = PipelineFactory.create({**cfg.to_dict(), **overrides})
    result = PipelineFactory.run(cfg)
    click.echo(result.report.to_text())
    if result.ablation.rows:
        click.echo(result.ablation.to_text())
    click.echo(yaml.dump({"output_dir": cfg.output_dir, "models": result.models}, sort_keys=False))
