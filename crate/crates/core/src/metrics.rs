//! Chart-quality metrics: localization error, trustworthiness,
//! continuity, empirical quantiles, and trajectory dropout.
//!
//! Rank lists order all other points by ascending distance with ties
//! broken by ascending point index, which makes every metric
//! deterministic. Trustworthiness penalizes latent neighbors that are not
//! original-space neighbors by their original rank; continuity is the
//! mirror image with the two spaces exchanged.

use crate::chart_tsne::Embedding;
use crate::features::DissimilarityMatrix;
use crate::{Error, Result};

/// Per-point metric values over the evaluation set.
#[derive(Clone, Debug)]
pub struct MetricReport {
    /// Evaluated point indices (into the full point set).
    pub point_ids: Vec<usize>,
    pub localization_error: Vec<f64>,
    pub trustworthiness: Vec<f64>,
    pub continuity: Vec<f64>,
    pub kappa: usize,
}

/// Metric kind with the sign convention used by the quantile objective:
/// localization error is minimized directly, trustworthiness and
/// continuity enter negated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    LocalizationError,
    NegTrustworthiness,
    NegContinuity,
}

impl MetricKind {
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::LocalizationError => "le",
            MetricKind::NegTrustworthiness => "neg_tw",
            MetricKind::NegContinuity => "neg_ct",
        }
    }

    /// Signed per-point values for minimization.
    pub fn values(self, report: &MetricReport) -> Vec<f64> {
        match self {
            MetricKind::LocalizationError => report.localization_error.clone(),
            MetricKind::NegTrustworthiness => {
                report.trustworthiness.iter().map(|v| -v).collect()
            }
            MetricKind::NegContinuity => report.continuity.iter().map(|v| -v).collect(),
        }
    }
}

/// Euclidean distance between estimated and true planar coordinates,
/// evaluated per point.
pub fn localization_error(estimates: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::invalid("estimate and truth sets differ in size"));
    }
    Ok(estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| ((e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2)).sqrt())
        .collect())
}

/// Full neighbor orderings: `ranks[u][v]` is the 1-based rank of `v` in
/// `u`'s ascending-distance list (0 on the diagonal, which is never a
/// neighbor). Ties break by ascending point index.
pub fn neighbor_ranks(dist: &DissimilarityMatrix, kappa: usize) -> Result<Vec<Vec<usize>>> {
    let n = dist.len();
    validate_kappa(kappa, n)?;
    Ok(crate::par_map(n, |u| {
        let mut order: Vec<usize> = (0..n).filter(|&v| v != u).collect();
        order.sort_by(|&a, &b| {
            dist.get(u, a)
                .total_cmp(&dist.get(u, b))
                .then(a.cmp(&b))
        });
        let mut ranks = vec![0; n];
        for (pos, &v) in order.iter().enumerate() {
            ranks[v] = pos + 1;
        }
        ranks
    }))
}

fn validate_kappa(kappa: usize, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("need at least two evaluated points"));
    }
    if kappa == 0 || (kappa as f64) >= (n as f64 - 1.0) / 2.0 {
        return Err(Error::invalid(format!(
            "kappa must satisfy 1 <= kappa < (n - 1)/2 = {}, got {kappa}",
            (n as f64 - 1.0) / 2.0
        )));
    }
    Ok(())
}

/// Default neighborhood size: 50, scaled down to `max(5, n/10)` for small
/// evaluation sets (and always within the validity bound).
pub fn default_kappa(n_eval: usize) -> usize {
    let k = if n_eval < 500 { (n_eval / 10).max(5) } else { 50 };
    let bound = ((n_eval as f64 - 1.0) / 2.0).ceil() as usize;
    k.min(bound.saturating_sub(1)).max(1)
}

/// Shared penalty kernel for trustworthiness and continuity: for each
/// point, sum `rank_in(a)(u') - kappa` over neighbors that entered the
/// kappa-neighborhood of `b` without being in the kappa-neighborhood of
/// `a`, scaled by `eta = 2 / (kappa (2n - 3 kappa - 1))`.
fn rank_penalty(
    ranks_a: &[Vec<usize>],
    ranks_b: &[Vec<usize>],
    kappa: usize,
) -> Vec<f64> {
    let n = ranks_a.len();
    let eta = 2.0 / (kappa as f64 * (2.0 * n as f64 - 3.0 * kappa as f64 - 1.0));
    (0..n)
        .map(|u| {
            let mut penalty = 0.0;
            for v in 0..n {
                if v == u {
                    continue;
                }
                if ranks_b[u][v] <= kappa && ranks_a[u][v] > kappa {
                    penalty += (ranks_a[u][v] - kappa) as f64;
                }
            }
            1.0 - eta * penalty
        })
        .collect()
}

/// Per-point trustworthiness `TW_u(kappa)` of `latent` against the
/// original-space dissimilarities.
pub fn trustworthiness(
    original: &DissimilarityMatrix,
    latent: &DissimilarityMatrix,
    kappa: usize,
) -> Result<Vec<f64>> {
    let r_orig = neighbor_ranks(original, kappa)?;
    let r_lat = neighbor_ranks(latent, kappa)?;
    Ok(rank_penalty(&r_orig, &r_lat, kappa))
}

/// Per-point continuity `CT_u(kappa)`: the mirror image of
/// trustworthiness with the two spaces exchanged.
pub fn continuity(
    original: &DissimilarityMatrix,
    latent: &DissimilarityMatrix,
    kappa: usize,
) -> Result<Vec<f64>> {
    trustworthiness(latent, original, kappa)
}

/// Pairwise Euclidean distances of embedding points, restricted to the
/// given indices.
pub fn embedding_distances(embedding: &Embedding, indices: &[usize]) -> DissimilarityMatrix {
    let m = indices.len();
    let mut data = vec![0.0; m * m];
    for (i, &u) in indices.iter().enumerate() {
        for (j, &v) in indices.iter().enumerate() {
            if i == j {
                continue;
            }
            let a = embedding.point(u);
            let b = embedding.point(v);
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            data[i * m + j] = d2.sqrt();
        }
    }
    DissimilarityMatrix::from_rows(m, data).expect("square by construction")
}

/// Full metric report over the unanchored points of an embedding.
///
/// `original` is the dissimilarity matrix over the complete point set;
/// `truth` the true planar coordinates of the complete point set.
pub fn evaluate_embedding(
    original: &DissimilarityMatrix,
    embedding: &Embedding,
    truth: &[[f64; 2]],
    kappa: usize,
) -> Result<MetricReport> {
    if embedding.len() != original.len() || truth.len() != embedding.len() {
        return Err(Error::invalid("embedding, dissimilarities, and truth must align"));
    }
    if embedding.dim() != 2 {
        return Err(Error::invalid("metric evaluation expects a 2-D chart"));
    }
    let eval: Vec<usize> = embedding.unanchored_indices();
    if eval.len() < 2 {
        return Err(Error::invalid("need at least two unanchored points to evaluate"));
    }
    let d_orig = original.select(&eval);
    let d_lat = embedding_distances(embedding, &eval);
    let tw = trustworthiness(&d_orig, &d_lat, kappa)?;
    let ct = continuity(&d_orig, &d_lat, kappa)?;
    let est: Vec<[f64; 2]> = eval
        .iter()
        .map(|&u| [embedding.point(u)[0], embedding.point(u)[1]])
        .collect();
    let tru: Vec<[f64; 2]> = eval.iter().map(|&u| truth[u]).collect();
    let le = localization_error(&est, &tru)?;
    Ok(MetricReport {
        point_ids: eval,
        localization_error: le,
        trustworthiness: tw,
        continuity: ct,
        kappa,
    })
}

/// Nearest-rank empirical quantile: the value at 1-based index
/// `ceil(alpha * n)` of the ascending sort.
pub fn quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty set"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must be strictly inside (0, 1)"));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (alpha * sorted.len() as f64).ceil() as usize;
    Ok(sorted[idx.clamp(1, sorted.len()) - 1])
}

/// Fraction of trajectory points whose localization error exceeds the
/// threshold, plus the per-point flags.
pub fn trajectory_dropout(
    estimates: &[[f64; 2]],
    truth: &[[f64; 2]],
    threshold: f64,
) -> Result<(f64, Vec<bool>)> {
    let le = localization_error(estimates, truth)?;
    let flags: Vec<bool> = le.iter().map(|&e| e > threshold).collect();
    let frac = flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64;
    Ok((frac, flags))
}
