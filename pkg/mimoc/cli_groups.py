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
    CLI Runner
"""
import click

from mimoc.factories.cli.compression_cli import fold_model, merge_model, prune_model, quantize_model
from mimoc.factories.cli.model_factory_cli import bench_models, eval_model, train_model
from mimoc.factories.cli.pipeline_factory_cli import run_pipeline


@click.group("cli")
def cli():
    pass


cli.add_command(train_model)
cli.add_command(prune_model)
cli.add_command(fold_model)
cli.add_command(merge_model)
cli.add_command(quantize_model)
cli.add_command(eval_model)
cli.add_command(bench_models)
cli.add_command(run_pipeline)


def run_cli():
    cli()
