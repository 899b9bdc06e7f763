//! Simulation geometry and deterministic multipath synthesis.
//!
//! The ray engine is deliberately small: a direct path plus specular
//! reflections off axis-aligned box faces via the image-source method,
//! with free-space amplitudes and carrier phases accumulated over the
//! true path length. Occlusion uses an open-segment / open-interior slab
//! test, so a segment that merely touches a face is not blocked.

use num_complex::Complex64;
use std::f64::consts::{PI, TAU};

use crate::{Error, Result};

/// Propagation speed used for path delays, in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// ---------------------------------------------------------------------------
// Vectors and angles
// ---------------------------------------------------------------------------

/// Position or direction in the global frame, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Azimuth/elevation pair in radians: azimuth in `[-pi, pi)`, elevation in
/// `[-pi/2, pi/2]`. Both angle kinds produced by the ray engine point from
/// the local array toward its counterpart along the ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnglesPair {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AnglesPair {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        debug_assert!((-PI..PI).contains(&azimuth) || azimuth == -PI);
        debug_assert!((-PI / 2.0..=PI / 2.0).contains(&elevation));
        AnglesPair { azimuth, elevation }
    }

    /// Angles of the given direction (need not be normalized).
    pub fn from_direction(dir: Vec3) -> Self {
        let d = dir.normalized();
        let elevation = d.z.clamp(-1.0, 1.0).asin();
        let mut azimuth = d.y.atan2(d.x);
        if azimuth >= PI {
            azimuth = -PI; // atan2 returns (-pi, pi]; fold the closed end
        }
        AnglesPair { azimuth, elevation }
    }

    /// Unit direction vector of this angle pair.
    pub fn direction(self) -> Vec3 {
        let (st, ct) = self.azimuth.sin_cos();
        let (sp, cp) = self.elevation.sin_cos();
        Vec3::new(cp * ct, cp * st, sp)
    }
}

/// Wave vector `k = (2*pi/lambda) * [cos(el)cos(az), cos(el)sin(az), sin(el)]`.
pub fn wave_vector(angles: AnglesPair, wavelength: f64) -> Result<Vec3> {
    if !(wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    Ok(angles.direction() * (TAU / wavelength))
}

// ---------------------------------------------------------------------------
// Arrays
// ---------------------------------------------------------------------------

/// Grid metadata for panels built on a regular rectangular lattice.
///
/// `axis_x` is the panel-local horizontal direction (columns), `axis_y`
/// the vertical one (rows); both are unit vectors in the global frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub spacing_x: f64,
    pub spacing_y: f64,
    pub axis_x: Vec3,
    pub axis_y: Vec3,
}

/// Antenna or meta-atom array: element positions in the global frame, a
/// cosine-power element pattern around `boresight`, and optional grid
/// metadata for panels that need per-column coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    elements: Vec<Vec3>,
    pattern_exponent: f64,
    boresight: Vec3,
    grid: Option<GridLayout>,
}

impl ArrayGeometry {
    pub fn new(elements: Vec<Vec3>, pattern_exponent: f64, boresight: Vec3) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("array needs at least one element"));
        }
        if !(pattern_exponent >= 0.0) {
            return Err(Error::invalid("pattern exponent must be >= 0"));
        }
        for (i, a) in elements.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::invalid(format!("element {i} is not finite")));
            }
            for b in &elements[..i] {
                if a == b {
                    return Err(Error::invalid(format!("duplicate element position at {i}")));
                }
            }
        }
        Ok(ArrayGeometry {
            elements,
            pattern_exponent,
            boresight: boresight.normalized(),
            grid: None,
        })
    }

    /// Single isotropic element (used for the single-antenna terminal).
    pub fn single_point(position: Vec3) -> Self {
        ArrayGeometry {
            elements: vec![position],
            pattern_exponent: 0.0,
            boresight: Vec3::new(0.0, 0.0, 1.0),
            grid: None,
        }
    }

    /// `rows x cols` planar grid centered on `center`. `axis_x` is the
    /// column direction; the row direction is `boresight x axis_x`.
    pub fn planar_grid(
        center: Vec3,
        rows: usize,
        cols: usize,
        spacing: f64,
        axis_x: Vec3,
        boresight: Vec3,
        pattern_exponent: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid must have at least one row and column"));
        }
        if !(spacing > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let bs = boresight.normalized();
        let ax = axis_x.normalized();
        if ax.dot(bs).abs() > 1e-9 {
            return Err(Error::invalid("grid axis_x must be orthogonal to boresight"));
        }
        let ay = bs.cross(ax).normalized();
        let mut elements = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let u = (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing;
                let v = (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing;
                elements.push(center + ax * u + ay * v);
            }
        }
        let mut geom = ArrayGeometry::new(elements, pattern_exponent, bs)?;
        geom.grid = Some(GridLayout {
            rows,
            cols,
            spacing_x: spacing,
            spacing_y: spacing,
            axis_x: ax,
            axis_y: ay,
        });
        Ok(geom)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Vec3] {
        &self.elements
    }

    pub fn grid(&self) -> Option<&GridLayout> {
        self.grid.as_ref()
    }

    pub fn boresight(&self) -> Vec3 {
        self.boresight
    }

    pub fn pattern_exponent(&self) -> f64 {
        self.pattern_exponent
    }

    /// Phase reference of the array: the element centroid.
    pub fn reference(&self) -> Vec3 {
        let mut acc = Vec3::ZERO;
        for e in &self.elements {
            acc = acc + *e;
        }
        acc * (1.0 / self.elements.len() as f64)
    }

    /// Element coordinate along the grid's horizontal axis, relative to
    /// the reference. Errors when the array carries no grid metadata.
    pub fn local_x(&self, index: usize) -> Result<f64> {
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::invalid("array has no grid layout"))?;
        Ok((self.elements[index] - self.reference()).dot(grid.axis_x))
    }

    /// Cosine-power element gain toward `angles`; `1` for exponent zero
    /// (isotropic), `0` behind the boresight plane otherwise.
    pub fn pattern_gain(&self, angles: AnglesPair) -> f64 {
        if self.pattern_exponent == 0.0 {
            return 1.0;
        }
        let c = angles.direction().dot(self.boresight);
        if c <= 0.0 {
            0.0
        } else {
            c.powf(self.pattern_exponent)
        }
    }
}

/// Array response `a_n = exp(j k^T p_n)` with the element positions as
/// stored (global frame).
pub fn array_response(
    geom: &ArrayGeometry,
    angles: AnglesPair,
    wavelength: f64,
) -> Result<Vec<Complex64>> {
    let k = wave_vector(angles, wavelength)?;
    Ok(geom
        .elements
        .iter()
        .map(|p| Complex64::from_polar(1.0, k.dot(*p)))
        .collect())
}

/// Array response with phases referenced to the array centroid, i.e.
/// `exp(j k^T (p_n - p_ref))`. Channel assembly uses this variant so that
/// per-path carrier phases (measured between array references) and
/// per-element offsets compose consistently.
pub fn relative_response(geom: &ArrayGeometry, angles: AnglesPair, wavelength: f64) -> Vec<Complex64> {
    let k = angles.direction() * (TAU / wavelength);
    let r = geom.reference();
    geom.elements
        .iter()
        .map(|p| Complex64::from_polar(1.0, k.dot(*p - r)))
        .collect()
}

// ---------------------------------------------------------------------------
// Obstacles and occlusion
// ---------------------------------------------------------------------------

/// Axis-aligned box obstacle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxObstacle {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
}

impl BoxObstacle {
    pub fn new(min_corner: Vec3, max_corner: Vec3) -> Result<Self> {
        if !(min_corner.x < max_corner.x && min_corner.y < max_corner.y && min_corner.z < max_corner.z)
        {
            return Err(Error::invalid("box min_corner must be < max_corner componentwise"));
        }
        Ok(BoxObstacle { min_corner, max_corner })
    }

    fn min(&self, axis: usize) -> f64 {
        match axis {
            0 => self.min_corner.x,
            1 => self.min_corner.y,
            _ => self.min_corner.z,
        }
    }

    fn max(&self, axis: usize) -> f64 {
        match axis {
            0 => self.max_corner.x,
            1 => self.max_corner.y,
            _ => self.max_corner.z,
        }
    }

    pub fn contains_interior(&self, p: Vec3) -> bool {
        p.x > self.min_corner.x
            && p.x < self.max_corner.x
            && p.y > self.min_corner.y
            && p.y < self.max_corner.y
            && p.z > self.min_corner.z
            && p.z < self.max_corner.z
    }

    /// The six faces, in a fixed (axis, side) order.
    fn faces(&self) -> [Face; 6] {
        let mut out = [Face::default(); 6];
        let mut i = 0;
        for axis in 0..3 {
            for &(side, plane) in &[(-1.0, self.min(axis)), (1.0, self.max(axis))] {
                out[i] = Face {
                    axis,
                    outward: side,
                    plane,
                    bounds: [
                        (self.min((axis + 1) % 3), self.max((axis + 1) % 3)),
                        (self.min((axis + 2) % 3), self.max((axis + 2) % 3)),
                    ],
                };
                i += 1;
            }
        }
        out
    }
}

/// One axis-aligned box face: the plane `coord[axis] = plane` with outward
/// normal `outward * e_axis`, bounded on the two other axes.
#[derive(Clone, Copy, Debug, Default)]
struct Face {
    axis: usize,
    outward: f64,
    plane: f64,
    bounds: [(f64, f64); 2],
}

fn component(v: Vec3, axis: usize) -> f64 {
    match axis {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

impl Face {
    /// Strictly on the outward side of the face plane.
    fn outward_side(&self, p: Vec3) -> bool {
        (component(p, self.axis) - self.plane) * self.outward > 0.0
    }

    fn mirror(&self, p: Vec3) -> Vec3 {
        let mut q = p;
        let c = component(p, self.axis);
        let m = 2.0 * self.plane - c;
        match self.axis {
            0 => q.x = m,
            1 => q.y = m,
            _ => q.z = m,
        }
        q
    }

    /// Intersection of segment `a -> b` with the face plane, if it crosses
    /// at an interior parameter and lands inside the (closed) face bounds.
    fn hit(&self, a: Vec3, b: Vec3) -> Option<Vec3> {
        let ca = component(a, self.axis);
        let cb = component(b, self.axis);
        let denom = cb - ca;
        if denom == 0.0 {
            return None;
        }
        let t = (self.plane - ca) / denom;
        if !(t > 0.0 && t < 1.0) {
            return None;
        }
        let q = a + (b - a) * t;
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            let axis = (self.axis + 1 + i) % 3;
            let c = component(q, axis);
            if c < lo || c > hi {
                return None;
            }
        }
        Some(q)
    }
}

/// True iff the open segment `a -> b` intersects any box interior.
///
/// Boundary contact does not count: a segment grazing a face, running in a
/// face plane, or ending exactly on a face is not blocked.
pub fn segment_blocked(a: Vec3, b: Vec3, obstacles: &[BoxObstacle]) -> bool {
    obstacles.iter().any(|obs| segment_hits_box(a, b, obs))
}

fn segment_hits_box(a: Vec3, b: Vec3, obs: &BoxObstacle) -> bool {
    // Open-interval slab intersection: t-range where the point is strictly
    // inside the box per axis, intersected with the open segment (0, 1).
    let mut t_lo = 0.0_f64;
    let mut t_hi = 1.0_f64;
    for axis in 0..3 {
        let ca = component(a, axis);
        let d = component(b, axis) - ca;
        let (lo, hi) = (obs.min(axis), obs.max(axis));
        if d == 0.0 {
            if ca <= lo || ca >= hi {
                return false;
            }
        } else {
            let mut t1 = (lo - ca) / d;
            let mut t2 = (hi - ca) / d;
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            t_lo = t_lo.max(t1);
            t_hi = t_hi.min(t2);
            if t_lo >= t_hi {
                return false;
            }
        }
    }
    t_lo < t_hi
}

// ---------------------------------------------------------------------------
// Scene and paths
// ---------------------------------------------------------------------------

/// Which link a path set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    /// Terminal to base station.
    Direct,
    /// Terminal to panel `j`.
    UeToEms(usize),
    /// Panel `j` to base station.
    EmsToBs(usize),
}

/// One deterministic multipath component between two array references.
///
/// `gain` is the linear free-space amplitude times the per-bounce
/// reflection loss, with the carrier phase over the full length included.
/// Element pattern weights are folded in at aggregation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub departure: AnglesPair,
    pub arrival: AnglesPair,
    pub length: f64,
    pub delay: f64,
    pub bounces: u8,
}

/// All paths of one link; empty when the link is fully blocked.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub link: LinkKind,
}

impl PathSet {
    pub fn empty(link: LinkKind) -> Self {
        PathSet { paths: Vec::new(), link }
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Full simulation geometry: base-station array, reflecting panels, test
/// points, obstacles, and the carrier.
#[derive(Clone, Debug)]
pub struct Scene {
    pub bs: ArrayGeometry,
    pub ems_panels: Vec<ArrayGeometry>,
    pub test_points: Vec<Vec3>,
    pub obstacles: Vec<BoxObstacle>,
    pub carrier_frequency_hz: f64,
    /// Maximum specular reflection order (1 or 2).
    pub max_reflection_order: u8,
    /// Amplitude loss factor per bounce.
    pub reflection_amplitude: f64,
}

impl Scene {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn panel_count(&self) -> usize {
        self.ems_panels.len()
    }
}

/// Traces the direct path plus specular reflections (image-source method)
/// from the point `tx` to the reference of `rx_geom`.
///
/// Paths come out in a fixed order (direct, then bounce paths by obstacle
/// and face index), so identical scenes give bit-identical path sets.
pub fn trace_paths(scene: &Scene, tx: Vec3, rx_geom: &ArrayGeometry, link: LinkKind) -> PathSet {
    let rx = rx_geom.reference();
    let lambda = scene.wavelength();
    let gamma = scene.reflection_amplitude;
    let mut paths = Vec::new();

    if tx != rx && !segment_blocked(tx, rx, &scene.obstacles) {
        paths.push(make_path(tx, rx, rx - tx, tx - rx, 0, gamma, lambda));
    }

    // Single bounce.
    for (bi, obs) in scene.obstacles.iter().enumerate() {
        for face in obs.faces() {
            if !face.outward_side(tx) || !face.outward_side(rx) {
                continue;
            }
            let img = face.mirror(tx);
            let Some(q) = face.hit(img, rx) else { continue };
            if blocked_skipping(tx, q, &scene.obstacles, bi, bi)
                || blocked_skipping(q, rx, &scene.obstacles, bi, bi)
            {
                continue;
            }
            let length = tx.distance(q) + q.distance(rx);
            paths.push(make_path_len(tx, rx, q - tx, q - rx, length, 1, gamma, lambda));
        }
    }

    if scene.max_reflection_order >= 2 {
        trace_double_bounces(scene, tx, rx, gamma, lambda, &mut paths);
    }

    PathSet { paths, link }
}

fn trace_double_bounces(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    gamma: f64,
    lambda: f64,
    paths: &mut Vec<Path>,
) {
    let obstacles = &scene.obstacles;
    for (b1, o1) in obstacles.iter().enumerate() {
        for (f1_idx, face1) in o1.faces().into_iter().enumerate() {
            if !face1.outward_side(tx) {
                continue;
            }
            let img1 = face1.mirror(tx);
            for (b2, o2) in obstacles.iter().enumerate() {
                for (f2_idx, face2) in o2.faces().into_iter().enumerate() {
                    if b1 == b2 && f1_idx == f2_idx {
                        continue;
                    }
                    if !face2.outward_side(rx) || !face2.outward_side(img1) {
                        continue;
                    }
                    let img12 = face2.mirror(img1);
                    let Some(q2) = face2.hit(img12, rx) else { continue };
                    let Some(q1) = face1.hit(img1, q2) else { continue };
                    if !face1.outward_side(q2) {
                        continue;
                    }
                    if blocked_skipping(tx, q1, obstacles, b1, b1)
                        || blocked_skipping(q1, q2, obstacles, b1, b2)
                        || blocked_skipping(q2, rx, obstacles, b2, b2)
                    {
                        continue;
                    }
                    let length = tx.distance(q1) + q1.distance(q2) + q2.distance(rx);
                    paths.push(make_path_len(tx, rx, q1 - tx, q2 - rx, length, 2, gamma, lambda));
                }
            }
        }
    }
}

fn blocked_skipping(a: Vec3, b: Vec3, obstacles: &[BoxObstacle], skip1: usize, skip2: usize) -> bool {
    obstacles
        .iter()
        .enumerate()
        .any(|(i, obs)| i != skip1 && i != skip2 && segment_hits_box(a, b, obs))
}

fn make_path(
    tx: Vec3,
    rx: Vec3,
    dep_dir: Vec3,
    arr_dir: Vec3,
    bounces: u8,
    gamma: f64,
    lambda: f64,
) -> Path {
    make_path_len(tx, rx, dep_dir, arr_dir, tx.distance(rx), bounces, gamma, lambda)
}

fn make_path_len(
    _tx: Vec3,
    _rx: Vec3,
    dep_dir: Vec3,
    arr_dir: Vec3,
    length: f64,
    bounces: u8,
    gamma: f64,
    lambda: f64,
) -> Path {
    let amp = lambda / (4.0 * PI * length) * gamma.powi(bounces as i32);
    Path {
        gain: Complex64::from_polar(amp, -TAU * length / lambda),
        departure: AnglesPair::from_direction(dep_dir),
        arrival: AnglesPair::from_direction(arr_dir),
        length,
        delay: length / SPEED_OF_LIGHT,
        bounces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn wave_vector_axis_aligned() {
        let k = wave_vector(AnglesPair::new(0.0, 0.0), 0.01).unwrap();
        approx(k.x, TAU / 0.01, 1e-9);
        approx(k.y, 0.0, 1e-9);
        approx(k.z, 0.0, 1e-9);

        let k = wave_vector(AnglesPair::new(PI / 2.0, 0.0), 0.02).unwrap();
        approx(k.x, 0.0, 1e-9);
        approx(k.y, TAU / 0.02, 1e-9);
        approx(k.z, 0.0, 1e-9);
    }

    #[test]
    fn wave_vector_oblique_matches_direct_evaluation() {
        // Frozen from a one-line evaluation of the formula at
        // (az, el, lambda) = (pi/4, pi/6, 0.01).
        let k = wave_vector(AnglesPair::new(PI / 4.0, PI / 6.0), 0.01).unwrap();
        approx(k.x, 384.76494904855923, 1e-9);
        approx(k.y, 384.7649490485592, 1e-9);
        approx(k.z, 314.15926535897927, 1e-9);
    }

    #[test]
    fn wave_vector_rejects_nonpositive_wavelength() {
        assert!(wave_vector(AnglesPair::new(0.0, 0.0), 0.0).is_err());
        assert!(wave_vector(AnglesPair::new(0.0, 0.0), -1.0).is_err());
    }

    #[test]
    fn wave_vector_norm_invariant() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let az = (next() - 0.5) * TAU * 0.999;
            let el = (next() - 0.5) * PI * 0.999;
            let lambda = 0.001 + next();
            let k = wave_vector(AnglesPair::from_direction(AnglesPair::new(az.clamp(-PI, PI - 1e-9), el.clamp(-PI / 2.0, PI / 2.0)).direction()), lambda).unwrap();
            let want = TAU / lambda;
            assert!((k.norm() - want).abs() / want < 1e-12);
        }
    }

    #[test]
    fn array_response_single_element_at_origin() {
        let geom = ArrayGeometry::single_point(Vec3::ZERO);
        let a = array_response(&geom, AnglesPair::new(0.3, -0.2), 0.01).unwrap();
        assert_eq!(a.len(), 1);
        approx(a[0].re, 1.0, 1e-15);
        approx(a[0].im, 0.0, 1e-15);
    }

    #[test]
    fn array_response_broadside_pair() {
        let lambda = 0.01;
        let geom = ArrayGeometry::new(
            vec![Vec3::ZERO, Vec3::new(lambda / 2.0, 0.0, 0.0)],
            0.0,
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let a = array_response(&geom, AnglesPair::new(PI / 2.0, 0.0), lambda).unwrap();
        for an in a {
            approx(an.re, 1.0, 1e-12);
            approx(an.im, 0.0, 1e-12);
        }
    }

    #[test]
    fn array_response_endfire_line() {
        // Four-element lambda/2 line along x, endfire: phases n*pi.
        let lambda = 0.01;
        let elems: Vec<Vec3> = (0..4)
            .map(|n| Vec3::new(n as f64 * lambda / 2.0, 0.0, 0.0))
            .collect();
        let geom = ArrayGeometry::new(elems, 0.0, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let a = array_response(&geom, AnglesPair::new(0.0, 0.0), lambda).unwrap();
        for (n, an) in a.iter().enumerate() {
            let want = Complex64::from_polar(1.0, n as f64 * PI);
            approx((an - want).norm(), 0.0, 1e-9);
            approx(an.norm(), 1.0, 1e-12);
        }
    }

    #[test]
    fn array_response_unit_modulus_invariant() {
        let geom = ArrayGeometry::planar_grid(
            Vec3::new(3.0, -2.0, 5.0),
            3,
            4,
            0.0025,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            2.0,
        )
        .unwrap();
        for i in 0..50 {
            let az = -PI + TAU * (i as f64 + 0.5) / 50.0;
            let el = -PI / 2.0 + PI * (i as f64 % 7.0) / 7.0;
            let a = array_response(&geom, AnglesPair::new(az.min(PI - 1e-12), el), 0.01).unwrap();
            for an in a {
                assert!((an.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn box_at(min: (f64, f64, f64), max: (f64, f64, f64)) -> BoxObstacle {
        BoxObstacle::new(Vec3::new(min.0, min.1, min.2), Vec3::new(max.0, max.1, max.2)).unwrap()
    }

    #[test]
    fn segment_above_boxes_not_blocked() {
        let obs = vec![box_at((0.0, 0.0, 0.0), (10.0, 10.0, 5.0))];
        assert!(!segment_blocked(
            Vec3::new(-1.0, 5.0, 8.0),
            Vec3::new(11.0, 5.0, 8.0),
            &obs
        ));
    }

    #[test]
    fn segment_through_center_blocked() {
        let obs = vec![box_at((0.0, 0.0, 0.0), (10.0, 10.0, 5.0))];
        assert!(segment_blocked(
            Vec3::new(-1.0, 5.0, 2.5),
            Vec3::new(11.0, 5.0, 2.5),
            &obs
        ));
    }

    #[test]
    fn segment_grazing_face_not_blocked() {
        let obs = vec![box_at((0.0, 0.0, 0.0), (10.0, 10.0, 5.0))];
        // Runs exactly in the top face plane.
        assert!(!segment_blocked(
            Vec3::new(-1.0, 5.0, 5.0),
            Vec3::new(11.0, 5.0, 5.0),
            &obs
        ));
        // Ends exactly on a face.
        assert!(!segment_blocked(
            Vec3::new(-5.0, 5.0, 2.0),
            Vec3::new(0.0, 5.0, 2.0),
            &obs
        ));
    }

    fn free_space_scene(f0: f64) -> Scene {
        Scene {
            bs: ArrayGeometry::single_point(Vec3::new(10.0, 0.0, 0.0)),
            ems_panels: vec![],
            test_points: vec![],
            obstacles: vec![],
            carrier_frequency_hz: f0,
            max_reflection_order: 1,
            reflection_amplitude: 0.5,
        }
    }

    #[test]
    fn trace_free_space_single_friis_path() {
        let scene = free_space_scene(30e9);
        let lambda = scene.wavelength();
        let d = 10.0;
        let ps = trace_paths(&scene, Vec3::ZERO, &scene.bs, LinkKind::Direct);
        assert_eq!(ps.paths.len(), 1);
        let p = &ps.paths[0];
        approx(p.gain.norm(), lambda / (4.0 * PI * d), 1e-18);
        approx(p.length, d, 1e-12);
        approx(p.delay, d / SPEED_OF_LIGHT, 1e-20);
        assert_eq!(p.bounces, 0);
    }

    #[test]
    fn trace_fully_blocked_link_is_empty() {
        let mut scene = free_space_scene(30e9);
        // Tall box between tx and rx, no reflectors that can route around.
        scene.obstacles = vec![box_at((4.0, -50.0, -50.0), (6.0, 50.0, 50.0))];
        let ps = trace_paths(&scene, Vec3::ZERO, &scene.bs, LinkKind::Direct);
        assert!(ps.is_empty());
    }

    #[test]
    fn trace_single_wall_matches_image_source_oracle() {
        // tx=(0,0,1), rx=(4,0,1), reflecting wall face at y=2.
        // Image of tx across y=2 is (0,4,1); reflected length = 4*sqrt(2),
        // bounce point (2,2,1). Frozen by hand.
        let mut scene = free_space_scene(30e9);
        scene.bs = ArrayGeometry::single_point(Vec3::new(4.0, 0.0, 1.0));
        scene.obstacles = vec![box_at((-2.0, 2.0, 0.0), (6.0, 3.0, 3.0))];
        let ps = trace_paths(&scene, Vec3::new(0.0, 0.0, 1.0), &scene.bs, LinkKind::Direct);
        assert_eq!(ps.paths.len(), 2);
        approx(ps.paths[0].length, 4.0, 1e-12);
        approx(ps.paths[1].length, 5.656854249492381, 1e-12);
        assert_eq!(ps.paths[1].bounces, 1);
        let lambda = scene.wavelength();
        approx(
            ps.paths[1].gain.norm(),
            0.5 * lambda / (4.0 * PI * 5.656854249492381),
            1e-18,
        );
        // Departure of the bounce path points at the bounce point (2,2,1).
        let dep = ps.paths[1].departure.direction();
        approx(dep.x / dep.y, 1.0, 1e-12);
    }

    #[test]
    fn trace_is_deterministic_and_reciprocal() {
        let mut scene = free_space_scene(28e9);
        scene.obstacles = vec![
            box_at((2.0, 2.0, 0.0), (8.0, 3.0, 4.0)),
            box_at((2.0, -3.0, 0.0), (8.0, -2.0, 4.0)),
        ];
        scene.max_reflection_order = 2;
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(10.0, 0.5, 1.5);
        let rx_b = ArrayGeometry::single_point(b);
        let rx_a = ArrayGeometry::single_point(a);

        let fwd = trace_paths(&scene, a, &rx_b, LinkKind::Direct);
        let fwd2 = trace_paths(&scene, a, &rx_b, LinkKind::Direct);
        assert_eq!(fwd, fwd2, "identical scenes must give bit-identical path sets");

        let rev = trace_paths(&scene, b, &rx_a, LinkKind::Direct);
        assert_eq!(fwd.paths.len(), rev.paths.len());
        let mut lf: Vec<f64> = fwd.paths.iter().map(|p| p.length).collect();
        let mut lr: Vec<f64> = rev.paths.iter().map(|p| p.length).collect();
        lf.sort_by(f64::total_cmp);
        lr.sort_by(f64::total_cmp);
        for (x, y) in lf.iter().zip(&lr) {
            approx(*x, *y, 1e-12);
        }
        for p in fwd.paths.iter().chain(&rev.paths) {
            approx(p.delay * SPEED_OF_LIGHT, p.length, p.length * 1e-9);
        }
    }

    #[test]
    fn double_bounce_across_facing_walls() {
        // Two facing walls; a 2-bounce path ping-pongs between them.
        let mut scene = free_space_scene(30e9);
        scene.bs = ArrayGeometry::single_point(Vec3::new(6.0, 0.0, 1.0));
        scene.obstacles = vec![
            box_at((-1.0, 2.0, 0.0), (8.0, 2.5, 3.0)),
            box_at((-1.0, -2.5, 0.0), (8.0, -2.0, 3.0)),
        ];
        scene.max_reflection_order = 2;
        let tx = Vec3::new(0.0, 0.0, 1.0);
        let ps = trace_paths(&scene, tx, &scene.bs, LinkKind::Direct);
        let doubles: Vec<&Path> = ps.paths.iter().filter(|p| p.bounces == 2).collect();
        assert!(!doubles.is_empty(), "expected at least one double bounce");
        for p in doubles {
            approx(p.gain.norm(), 0.25 * scene.wavelength() / (4.0 * PI * p.length), 1e-18);
        }
    }
}
