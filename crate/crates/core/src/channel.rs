//! Narrowband channel assembly and SNR-perturbed covariance estimates.
//!
//! Paths enter as coherent superpositions: each path delay is already a
//! carrier-phase rotation inside the path gain, per-element offsets come
//! from plane-wave responses referenced to the array centroid, and element
//! patterns are folded in here. All power math is in linear units; dBm
//! conversion happens at the boundary.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ems::{EmsConfiguration, PhaseProfile};
use crate::scene::{relative_response, ArrayGeometry, PathSet, Scene, Vec3};
use crate::{Error, Result};

pub type ChannelVector = DVector<Complex64>;
pub type ChannelMatrix = DMatrix<Complex64>;

/// Transmit/noise powers and the covariance snapshot count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub snapshots: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 23.0,
            noise_power_dbm: -92.0,
            bandwidth_hz: 10e6,
            snapshots: 64,
        }
    }
}

impl RadioParams {
    /// Per-entry variance of the observation noise relative to a unit
    /// transmit symbol: sigma_n^2 / sigma_s^2 in linear units.
    pub fn noise_variance(&self) -> f64 {
        dbm_to_linear(self.noise_power_dbm) / dbm_to_linear(self.tx_power_dbm)
    }
}

pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// All path sets a test point needs: the direct link plus the incident
/// (terminal -> panel) and outgoing (panel -> base station) legs.
#[derive(Clone, Debug)]
pub struct LinkBundle {
    pub direct: PathSet,
    pub incident: Vec<PathSet>,
    pub outgoing: Vec<PathSet>,
}

impl LinkBundle {
    pub fn panel_count(&self) -> usize {
        self.incident.len()
    }
}

/// Narrowband aggregation of a path set between two arrays:
/// `H = (1/sqrt(P)) * sum_p gain_p * rho_rx * rho_tx * a_rx * a_tx^H`.
///
/// An empty path set aggregates to the zero matrix.
pub fn aggregate_narrowband(
    paths: &PathSet,
    rx_geom: &ArrayGeometry,
    tx_geom: &ArrayGeometry,
    wavelength: f64,
) -> ChannelMatrix {
    let mut h = DMatrix::zeros(rx_geom.len(), tx_geom.len());
    if paths.is_empty() {
        return h;
    }
    for path in &paths.paths {
        let weight = path.gain
            * rx_geom.pattern_gain(path.arrival)
            * tx_geom.pattern_gain(path.departure);
        if weight == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a_rx = relative_response(rx_geom, path.arrival, wavelength);
        let a_tx = relative_response(tx_geom, path.departure, wavelength);
        for (l, at) in a_tx.iter().enumerate() {
            let w = weight * at.conj();
            for (n, ar) in a_rx.iter().enumerate() {
                h[(n, l)] += w * ar;
            }
        }
    }
    h /= Complex64::new((paths.paths.len() as f64).sqrt(), 0.0);
    h
}

/// Panel contribution `h = H_o * diag(exp(j*phi)) * h_i`.
pub fn ems_channel(
    outgoing: &ChannelMatrix,
    profile: &PhaseProfile,
    incident: &ChannelVector,
) -> Result<ChannelVector> {
    let l = outgoing.ncols();
    if incident.len() != l || profile.len() != l {
        return Err(Error::invalid(format!(
            "dimension mismatch: outgoing has {l} columns, incident {} entries, profile {}",
            incident.len(),
            profile.len()
        )));
    }
    let mut h = DVector::zeros(outgoing.nrows());
    for (li, factor) in profile.unit_factors().into_iter().enumerate() {
        let w = factor * incident[li];
        for n in 0..outgoing.nrows() {
            h[n] += outgoing[(n, li)] * w;
        }
    }
    Ok(h)
}

/// Composite channel `h = h_d + sum_j H_j^o diag(exp(j*phi_j)) h_j^i` for
/// one terminal position under the given panel configuration.
pub fn composite_channel(
    scene: &Scene,
    ue: Vec3,
    bundle: &LinkBundle,
    config: &EmsConfiguration,
) -> Result<ChannelVector> {
    if config.panel_count() != bundle.panel_count() {
        return Err(Error::invalid(format!(
            "configuration has {} profiles for {} panels",
            config.panel_count(),
            bundle.panel_count()
        )));
    }
    let lambda = scene.wavelength();
    let ue_geom = ArrayGeometry::single_point(ue);
    let direct = aggregate_narrowband(&bundle.direct, &scene.bs, &ue_geom, lambda);
    let mut h: ChannelVector = direct.column(0).into_owned();
    for (j, profile) in config.profiles.iter().enumerate() {
        let panel = &scene.ems_panels[j];
        let outgoing = aggregate_narrowband(&bundle.outgoing[j], &scene.bs, panel, lambda);
        let incident = aggregate_narrowband(&bundle.incident[j], panel, &ue_geom, lambda);
        let incident: ChannelVector = incident.column(0).into_owned();
        h += ems_channel(&outgoing, profile, &incident)?;
    }
    Ok(h)
}

/// Received SNR in dB; `-inf` for a fully blocked (zero) channel.
pub fn snr_db(h: &ChannelVector, params: &RadioParams) -> f64 {
    let h2 = h.norm_squared();
    if h2 == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (dbm_to_linear(params.tx_power_dbm) * h2 / dbm_to_linear(params.noise_power_dbm)).log10()
}

/// Finite-snapshot covariance estimate
/// `R = (1/N_s) sum_s (h + n_s)(h + n_s)^H` with i.i.d. circular complex
/// Gaussian observation noise of per-entry variance [`RadioParams::noise_variance`].
///
/// Zero noise power short-circuits to the exact outer product. The output
/// is Hermitian PSD by construction.
pub fn estimate_covariance(h: &ChannelVector, params: &RadioParams, seed: u64) -> ChannelMatrix {
    let n = h.len();
    let sigma2 = params.noise_variance();
    if sigma2 == 0.0 {
        return h * h.adjoint();
    }
    let scale = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut r: ChannelMatrix = DMatrix::zeros(n, n);
    let mut snapshot: ChannelVector = DVector::zeros(n);
    for _ in 0..params.snapshots.max(1) {
        for i in 0..n {
            let re: f64 = normal.sample(&mut rng);
            let im: f64 = normal.sample(&mut rng);
            snapshot[i] = h[i] + Complex64::new(re * scale, im * scale);
        }
        for col in 0..n {
            let c = snapshot[col].conj();
            for row in 0..n {
                r[(row, col)] += snapshot[row] * c;
            }
        }
    }
    r / Complex64::new(params.snapshots.max(1) as f64, 0.0)
}
