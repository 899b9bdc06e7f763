//! Channel charting over engineered multipath.
//!
//! The crate simulates deterministic multipath channels through static
//! reflecting panels, turns channel covariances into log-Euclidean
//! dissimilarities, learns 2-D charts with a semi-supervised t-SNE and a
//! semi-supervised autoencoder, scores charts with localization-error /
//! trustworthiness / continuity quantiles, and searches phase-gradient
//! codebooks for the quantile-optimal static panel configuration.
//!
//! Modules follow the pipeline order:
//!
//! * [`scene`] — geometry, occlusion, and ray synthesis
//! * [`ems`] — phase profiles and codebooks for the reflecting panels
//! * [`channel`] — narrowband channel assembly and covariance estimation
//! * [`features`] — matrix logs and log-Euclidean dissimilarities
//! * [`chart_tsne`] — semi-supervised t-SNE with clamped anchors
//! * [`chart_ae`] — semi-supervised fully connected autoencoder
//! * [`metrics`] — chart quality metrics and quantiles
//! * [`optimizer`] — codebook search and baseline configurations

pub mod channel;
pub mod chart_ae;
pub mod chart_tsne;
pub mod ems;
pub mod features;
pub mod metrics;
pub mod optimizer;
pub mod scene;

pub use nalgebra;
pub use num_complex;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate feature at point {point_id}: {reason}")]
    DegenerateFeature { point_id: usize, reason: String },
    #[error("diverged at iteration {iteration}: {context}")]
    Diverged { iteration: usize, context: String },
    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Configures the global worker pool size. A no-op without the
/// `parallel` feature or when a pool already exists.
pub fn init_thread_pool(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Maps `f(0..n)` to an index-ordered `Vec`.
///
/// With the `parallel` feature the map runs on the rayon pool; the output
/// order (and therefore every downstream float reduction) is identical to
/// the serial build, so results never depend on thread count.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
