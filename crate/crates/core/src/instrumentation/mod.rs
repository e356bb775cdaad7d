//! Activation capture, per-layer variance, PCA distribution maps and the
//! cross-model filter audit.

mod capture;
mod distribution;
mod filters;
mod pca;
mod variance;

pub use capture::{capture, load_dumps, save_dumps, ActivationDump};
pub use distribution::{centroid_and_radius, distribution_map, line_fit_residual, DistributionMap, MapPoint};
pub use filters::{
    audit_checkpoints, filter_analysis, filter_audit, pooled_filters, FilterPoint, FilterScatter, AUDIT_MODELS,
    DEFAULT_MARGIN,
};
pub use pca::{pca_top_k, symmetric_eigen, Pca};
pub use variance::{layer_variance, tensor_variance, trace_from_dumps, variance_trace, LayerVariance, LayerVarianceTrace};
