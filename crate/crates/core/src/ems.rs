//! Static phase profiles for the reflecting panels and the finite
//! phase-gradient codebooks searched by the optimizer.
//!
//! Codewords are 1-D horizontal DFT ramps over the panel columns: slope
//! offset `s` gives a per-column increment of `2*pi*s / n_cols`, so
//! distinct codewords of one panel are mutually orthogonal and `s = 0` is
//! the specular (mirror) configuration.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::scene::{wave_vector, AnglesPair, ArrayGeometry};
use crate::{Error, Result};

/// Wraps a phase into `[0, 2*pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// How a profile was constructed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileLabel {
    Specular,
    Gradient { slope_index: i64 },
    Snell { incident: AnglesPair, outgoing: AnglesPair },
    Random { seed: u64 },
    /// Per-point exact alignment (idealized reconfigurable baseline).
    Aligned { point_id: usize },
}

/// One phase per meta-atom, stored in `[0, 2*pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseProfile {
    phases: Vec<f64>,
    pub label: ProfileLabel,
}

impl PhaseProfile {
    pub fn from_phases(phases: Vec<f64>, label: ProfileLabel) -> Self {
        PhaseProfile {
            phases: phases.into_iter().map(wrap_phase).collect(),
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `exp(j*phi_l)` per element.
    pub fn unit_factors(&self) -> Vec<Complex64> {
        self.phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect()
    }

    /// All phases equal up to `tol` (a mirror-like profile).
    pub fn is_constant(&self, tol: f64) -> bool {
        self.phases.windows(2).all(|w| {
            let d = (w[0] - w[1]).abs();
            d <= tol || (TAU - d) <= tol
        })
    }
}

/// Horizontal DFT phase ramp: `phi_l = wrap(phi0 + gamma_x * x_l)` with
/// `gamma_x = 2*pi*s / (n_cols * d_x)` for the signed offset `s`.
///
/// `s = 0` yields the constant specular profile. The valid offsets for a
/// codebook of size `k` are `|s| <= (k - 1) / 2`.
pub fn gradient_profile(
    panel: &ArrayGeometry,
    slope_index: i64,
    k: usize,
    phi0: f64,
) -> Result<PhaseProfile> {
    let grid = panel
        .grid()
        .ok_or_else(|| Error::invalid("gradient profile needs a panel with grid layout"))?;
    if k == 0 {
        return Err(Error::invalid("codebook size must be >= 1"));
    }
    let bound = ((k - 1) / 2) as i64;
    if slope_index.abs() > bound {
        return Err(Error::invalid(format!(
            "slope index {slope_index} out of range [-{bound}, {bound}] for codebook size {k}"
        )));
    }
    let gamma_x = TAU * slope_index as f64 / (grid.cols as f64 * grid.spacing_x);
    let mut phases = Vec::with_capacity(panel.len());
    for i in 0..panel.len() {
        phases.push(phi0 + gamma_x * panel.local_x(i)?);
    }
    let label = if slope_index == 0 {
        ProfileLabel::Specular
    } else {
        ProfileLabel::Gradient { slope_index }
    };
    Ok(PhaseProfile::from_phases(phases, label))
}

/// Generalized-Snell profile `phi_l = wrap(phi0 + (k_o - k_i)^T p_l)` with
/// element coordinates relative to the panel reference.
///
/// `incident` is the arrival direction of the incident wave at the panel
/// (pointing toward the source) and `outgoing` the departure direction
/// toward the target, both as produced by the ray engine; with those
/// conventions this profile phase-aligns the corresponding path pair.
pub fn snell_profile(
    panel: &ArrayGeometry,
    incident: AnglesPair,
    outgoing: AnglesPair,
    wavelength: f64,
    phi0: f64,
) -> Result<PhaseProfile> {
    let ki = wave_vector(incident, wavelength)?;
    let ko = wave_vector(outgoing, wavelength)?;
    let dk = ko - ki;
    let r = panel.reference();
    let phases = panel
        .elements()
        .iter()
        .map(|p| phi0 + dk.dot(*p - r))
        .collect();
    Ok(PhaseProfile::from_phases(
        phases,
        ProfileLabel::Snell { incident, outgoing },
    ))
}

/// I.i.d. uniform phases on `[0, 2*pi)` from a seeded generator.
pub fn random_profile(panel: &ArrayGeometry, seed: u64) -> PhaseProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = (0..panel.len()).map(|_| rng.random::<f64>() * TAU).collect();
    PhaseProfile::from_phases(phases, ProfileLabel::Random { seed })
}

/// Finite set of candidate profiles for one panel.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub profiles: Vec<PhaseProfile>,
    pub panel_index: usize,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Index of the specular (zero-slope) codeword.
    pub fn specular_index(&self) -> usize {
        self.profiles
            .iter()
            .position(|p| p.label == ProfileLabel::Specular)
            .expect("codebook always contains the specular codeword")
    }
}

/// Builds the `k` gradient codewords with offsets `-(k-1)/2 ..= (k-1)/2`
/// in ascending order. `k` must be odd so the specular codeword is part
/// of the set.
pub fn build_codebook(panel: &ArrayGeometry, k: usize, panel_index: usize) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::invalid("codebook size must be >= 1"));
    }
    if k % 2 == 0 {
        return Err(Error::invalid(format!(
            "codebook size must be odd so the specular codeword is included, got {k}"
        )));
    }
    let half = ((k - 1) / 2) as i64;
    let profiles = (-half..=half)
        .map(|s| gradient_profile(panel, s, k, 0.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Codebook { profiles, panel_index })
}

/// One static profile choice per panel; the optimization variable.
#[derive(Clone, Debug, PartialEq)]
pub struct EmsConfiguration {
    pub profiles: Vec<PhaseProfile>,
}

impl EmsConfiguration {
    pub fn new(profiles: Vec<PhaseProfile>) -> Self {
        EmsConfiguration { profiles }
    }

    /// The no-panel configuration.
    pub fn no_ems() -> Self {
        EmsConfiguration { profiles: Vec::new() }
    }

    pub fn panel_count(&self) -> usize {
        self.profiles.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    fn panel(rows: usize, cols: usize, spacing: f64) -> ArrayGeometry {
        ArrayGeometry::planar_grid(
            Vec3::ZERO,
            rows,
            cols,
            spacing,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_slope_is_constant_specular() {
        let p = panel(4, 8, 0.0025);
        let prof = gradient_profile(&p, 0, 11, 0.7).unwrap();
        assert_eq!(prof.label, ProfileLabel::Specular);
        for &phi in prof.phases() {
            assert!((phi - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_slope_column_increment() {
        // 60 columns, s = 1, d = lambda/4: adjacent columns differ by 2*pi/60.
        let lambda = 0.01;
        let p = panel(1, 60, lambda / 4.0);
        let prof = gradient_profile(&p, 1, 11, 0.0).unwrap();
        let want = TAU / 60.0;
        for w in prof.phases().windows(2) {
            let d = wrap_phase(w[1] - w[0]);
            assert!((d - want).abs() < 1e-9, "{d} vs {want}");
        }
    }

    #[test]
    fn slope_out_of_range_rejected() {
        let p = panel(1, 8, 0.0025);
        assert!(gradient_profile(&p, 6, 11, 0.0).is_err());
        assert!(gradient_profile(&p, -6, 11, 0.0).is_err());
        assert!(gradient_profile(&p, 5, 11, 0.0).is_ok());
    }

    #[test]
    fn codebook_of_eleven_has_symmetric_offsets() {
        let p = panel(2, 12, 0.0025);
        let cb = build_codebook(&p, 11, 0).unwrap();
        assert_eq!(cb.len(), 11);
        let offsets: Vec<i64> = cb
            .profiles
            .iter()
            .map(|prof| match prof.label {
                ProfileLabel::Specular => 0,
                ProfileLabel::Gradient { slope_index } => slope_index,
                _ => panic!("unexpected label"),
            })
            .collect();
        assert_eq!(offsets, (-5..=5).collect::<Vec<_>>());
        assert_eq!(cb.specular_index(), 5);
    }

    #[test]
    fn even_codebook_size_rejected() {
        let p = panel(1, 8, 0.0025);
        assert!(build_codebook(&p, 10, 0).is_err());
        let cb = build_codebook(&p, 1, 0).unwrap();
        assert_eq!(cb.len(), 1);
        assert!(cb.profiles[0].is_constant(0.0));
    }

    #[test]
    fn codeword_vectors_are_orthogonal() {
        // DFT ramps over 60 columns: distinct slopes give |<a, b>| / L ~ 0.
        let p = panel(4, 60, 0.0025);
        let cb = build_codebook(&p, 11, 0).unwrap();
        let l = p.len() as f64;
        for (i, a) in cb.profiles.iter().enumerate() {
            for b in cb.profiles.iter().skip(i + 1) {
                let ip: Complex64 = a
                    .unit_factors()
                    .iter()
                    .zip(b.unit_factors())
                    .map(|(x, y)| x * y.conj())
                    .sum();
                assert!(ip.norm() / l <= 1e-10, "|<a,b>|/L = {}", ip.norm() / l);
            }
        }
    }

    #[test]
    fn snell_passthrough_and_normal_incidence_are_constant() {
        let p = panel(3, 5, 0.0025);
        let a = AnglesPair::new(0.4, 0.1);
        let prof = snell_profile(&p, a, a, 0.01, 1.2).unwrap();
        assert!(prof.is_constant(1e-12));
        assert!((prof.phases()[0] - 1.2).abs() < 1e-12);

        // Normal incidence, normal reflection: both wave vectors along the
        // boresight, so tangential components vanish.
        let n = AnglesPair::new(std::f64::consts::FRAC_PI_2, 0.0);
        let prof = snell_profile(&p, n, n, 0.01, 0.0).unwrap();
        assert!(prof.is_constant(1e-12));
    }

    #[test]
    fn snell_line_matches_hand_evaluation() {
        // 4-element line along x, spacing lambda/4, incident at 30 deg and
        // outgoing at 45 deg azimuth (elevation 0). Frozen by evaluating
        // (k_o - k_i)^T p_l by hand at x_l = (l - 1.5) * lambda / 4.
        let lambda = 0.01;
        let p = panel(1, 4, lambda / 4.0);
        let inc = AnglesPair::new(30f64.to_radians(), 0.0);
        let out = AnglesPair::new(45f64.to_radians(), 0.0);
        let prof = snell_profile(&p, inc, out, lambda, 0.0).unwrap();
        let want = [
            0.3744431829541076,
            0.12481439431803587,
            6.1583709128615505,
            5.908742124225479,
        ];
        for (got, want) in prof.phases().iter().zip(want) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn random_profile_is_seeded_and_spread() {
        let p = panel(60, 60, 0.0025);
        let a = random_profile(&p, 0);
        let b = random_profile(&p, 0);
        assert_eq!(a, b);
        let c = random_profile(&p, 1);
        assert_ne!(a, c);
        // Law of large numbers: the mean unit phasor of 3600 uniform
        // phases has small modulus.
        let mean: Complex64 = a.unit_factors().iter().sum::<Complex64>() / p.len() as f64;
        assert!(mean.norm() < 0.1, "mean phasor modulus {}", mean.norm());
        for &phi in a.phases() {
            assert!((0.0..TAU).contains(&phi));
        }
    }

    #[test]
    fn gradient_zero_equals_snell_passthrough() {
        let p = panel(2, 6, 0.0025);
        let g = gradient_profile(&p, 0, 5, 0.3).unwrap();
        let a = AnglesPair::new(-0.2, 0.05);
        let s = snell_profile(&p, a, a, 0.01, 0.3).unwrap();
        for (x, y) in g.phases().iter().zip(s.phases()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_keeps_phases_in_range() {
        for phi in [-7.0, -TAU, -1e-18, 0.0, 1.0, TAU, TAU + 0.5, 123.456] {
            let w = wrap_phase(phi);
            assert!((0.0..TAU).contains(&w), "wrap({phi}) = {w}");
        }
    }
}
