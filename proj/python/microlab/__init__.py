# Copyright 2026 The MicroLab Authors
# SPDX-License-Identifier: Apache-2.0
"""Few-shot segmentation meta-learning: Python interface to the C++ core."""

from ._microlab import *  # noqa: F401,F403
from ._microlab import (
    ContractError,
    DataError,
    JointConfig,
    MetaAlgorithm,
    MetaConfig,
    ModelConfig,
    NumericalError,
    OmegaTag,
    Parameters,
    SearchSpace,
    Task,
    UpdateHyperparams,
)

__version__ = "0.1.0"
