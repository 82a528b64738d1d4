"""Distributed AMP activity detection for cell-free massive MIMO.

Library plus CLI simulator: per-AP AMP chains with block MMSE denoising,
local log-likelihood-ratio reports fused centrally (dAMP) or per iteration
(cAMP), user-centric power allocation and clustering, Monte-Carlo
verification of the block-diagonal state-evolution structure, and a
reproducible experiment harness.
"""

__version__ = "0.1.0"

from . import (allocation, amp_core, backend, detection, harness, numerics,
               scenario, state_evolution)
from .amp_core import (DenoiserOutput, LocalAmpState, StateCollapseError,
                       iid_fast_path, mmse_denoise, onsager_matrix, run_camp,
                       run_damp)
from .detection import LlrReport, RocCurve, decide, fuse_llrs, roc
from .harness import ExperimentConfig, measure_runtime, run_experiment
from .scenario import (NetworkConfig, Realization, Scenario, build_scenario,
                       sample_realization)
from .state_evolution import (SeConfig, block_offmass, identity_deviation,
                              run_state_evolution, se_initial, se_step_mc)
