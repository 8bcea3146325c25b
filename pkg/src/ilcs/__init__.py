"""Identify latent nodes whose causal mechanism shifted between environments.

Observations in every environment are a shared linear mixing of latents that
follow a linear SCM. The pipeline runs ICA per environment, aligns the
recovered components, and compares the aligned unmixing rows pairwise.
"""

__version__ = "0.1.0"

from .alignment import AlignedUnmixing, TestFunction, align_by_matching, estimate_psi, sort_by_psi
from .harness import (
    BenchConfig,
    DetectConfig,
    SimulateConfig,
    load_config,
    run_benchmark,
    run_pipeline,
    score_sets,
)
from .ica_core import IcaResult, amari_distance, estimate_latent_dim, fit_whitening, run_fastica
from .latent_label import null_component_probe, reconstruct
from .scm_sim import (
    EnvironmentDataset,
    EnvironmentSpec,
    LatentScm,
    MixingMap,
    NoiseSpec,
    apply_general_intervention,
    generate_dag,
    generate_mixing,
    sample_noise,
    sample_scm_params,
    simulate_environment,
    simulate_environments,
)
from .shift_detect import (
    ShiftReport,
    ShiftStatisticConfig,
    detect_shifts,
    exact_shift_oracle,
    stat_abs_row,
    stat_norm_diff,
    stat_sign_min,
)
