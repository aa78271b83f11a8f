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
"""
import os
from pathlib import Path
from typing import Any, Optional, Text, Union

import yaml

import mimoc.utils.config as config


def output_path(file_name: Text, output_dir: Optional[Union[Text, Path]] = None) -> Path:
    """Path of `file_name` inside the output directory, created on demand.

    Args:
        file_name (Text): file name, e.g. '03_merge.mimo'.
        output_dir (Union[Text, Path], optional): directory. Defaults to MIMOC_OUTPUT_DIR.

    Returns:
        Path: full path
    """
    save_dir = Path(output_dir if output_dir is not None else config.OUTPUT_DIR)
    save_dir.mkdir(parents=True, exist_ok=True)
    return save_dir / file_name


def ensure_parent(path: Union[Text, Path]) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        os.makedirs(path.parent, exist_ok=True)
    return path


def save_text(text: Text, path: Union[Text, Path]) -> Path:
    path = ensure_parent(path)
    with open(path, "w") as f:
        f.write(text if text.endswith("\n") else text + "\n")
    return path


def save_yaml(data: Any, path: Union[Text, Path]) -> Path:
    """Dump `data` as block-style YAML keeping key order."""
    path = ensure_parent(path)
    with open(path, "w") as f:
        yaml.dump(data, f, sort_keys=False)
    return path
