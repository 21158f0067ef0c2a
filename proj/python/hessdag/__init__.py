# Copyright 2026 The hessdag Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Exact and stochastic inter-layer Hessian diagnostics for DAG networks."""

from ._core import (
    Graph,
    Hessian,
    HessdagError,
    __version__,
    emit_report,
    run_experiment,
)

__all__ = [
    "Graph",
    "Hessian",
    "HessdagError",
    "__version__",
    "emit_report",
    "run_experiment",
]
