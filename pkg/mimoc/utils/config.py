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
import logging

logger = logging.getLogger(__name__)

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("MIMOC_SEED", "7"))
NUM_THREADS = int(os.getenv("MIMOC_NUM_THREADS", "1"))
DISABLE_PROGRESS = os.getenv("MIMOC_DISABLE_PROGRESS", "0") == "1"
LATENCY_PASSES = int(os.getenv("MIMOC_LATENCY_PASSES", "1000"))
LATENCY_WARMUP = int(os.getenv("MIMOC_LATENCY_WARMUP", "50"))
OUTPUT_DIR = os.getenv("MIMOC_OUTPUT_DIR", "mimoc_runs")
RUN_SLOW = os.getenv("MIMOC_RUN_SLOW", "0") == "1"
