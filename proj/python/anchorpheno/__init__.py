"""Anchor-variable phenotyping on synthetic EHR cohorts."""

from ._core import (
    __version__,
    anchor_phenotype,
    anchor_scores,
    auroc,
    average_precision,
    fit_pheprob,
    generate_cohort,
    gwas,
    run_comparison,
    run_noise_sweep,
    run_pipeline,
)

__all__ = [
    "__version__",
    "anchor_phenotype",
    "anchor_scores",
    "auroc",
    "average_precision",
    "fit_pheprob",
    "generate_cohort",
    "gwas",
    "run_comparison",
    "run_noise_sweep",
    "run_pipeline",
]
