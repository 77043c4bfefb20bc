//! Frozen-representation probing, subgroup metrics and spectral diagnostics.

pub mod metrics;
pub mod probe;
pub mod spectrum;

pub use metrics::{auroc, subgroup_metrics, subgroup_metrics_multiclass, GroupMetrics, SubgroupReport};
pub use probe::{extract, probe_binary, probe_multiclass, ProbeConfig, ProbeParams};
pub use spectrum::{compare_spectra, gradient_identity_check, spectrum, svd, SpectrumReport, Svd};
