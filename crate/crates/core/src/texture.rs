//! Orientation statistics: kernel ODF estimates with cubic crystal
//! symmetry, the difference-ODF texture index, and stereographic pole
//! figures.

use std::f64::consts::PI;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParameterSet;
use crate::tensor::{rotation_matrix_from_angles, Mat3};

pub const DEFAULT_HALFWIDTH: f64 = 10.0 * PI / 180.0;
/// Grid spacing giving roughly 45k cells.
pub const DEFAULT_RESOLUTION: f64 = 3.5 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationSample {
    pub q: UnitQuaternion<f64>,
    pub weight: f64,
}

impl OrientationSample {
    pub fn new(rotation: &Mat3, weight: f64) -> Self {
        Self {
            q: quaternion_from_matrix(rotation),
            weight,
        }
    }
}

pub fn quaternion_from_matrix(r: &Mat3) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    // canonical sign
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// The 24 proper rotations of the cube (signed permutation matrices with
/// determinant +1).
pub fn cubic_symmetry_matrices() -> Vec<Mat3> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for signs in 0..8u32 {
            let mut m = Mat3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

pub fn cubic_symmetry_quaternions() -> Vec<UnitQuaternion<f64>> {
    cubic_symmetry_matrices().iter().map(quaternion_from_matrix).collect()
}

/// Smallest rotation angle between `a` and `b` over crystal-symmetric
/// equivalents of `b`.
pub fn misorientation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let best = cubic_symmetry_quaternions()
        .iter()
        .map(|s| a.coords.dot(&(b * s).coords).abs())
        .fold(0.0, f64::max)
        .min(1.0);
    2.0 * best.acos()
}

/// Symmetry-equivalent of `b` closest to `a`, sign-aligned with `a`.
pub fn nearest_equivalent(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut best = *b;
    let mut best_dot = -1.0;
    for s in cubic_symmetry_quaternions() {
        let c = b * s;
        let d = a.coords.dot(&c.coords);
        if d.abs() > best_dot {
            best_dot = d.abs();
            best = if d < 0.0 { UnitQuaternion::new_unchecked(-c.into_inner()) } else { c };
        }
    }
    best
}

/// Geodesic interpolation of paired orientation clouds, taking the
/// shortest symmetric path for each pair. Weights are interpolated
/// linearly.
pub fn interpolate_orientations(from: &[OrientationSample], to: &[OrientationSample], t: f64) -> Result<Vec<OrientationSample>> {
    if from.len() != to.len() {
        return Err(Error::InvalidInput("orientation clouds differ in size".into()));
    }
    Ok(from
        .iter()
        .zip(to)
        .map(|(a, b)| {
            let target = nearest_equivalent(&a.q, &b.q);
            let q = a.q.try_slerp(&target, t, 1e-12).unwrap_or(a.q);
            OrientationSample {
                q,
                weight: (1.0 - t) * a.weight + t * b.weight,
            }
        })
        .collect())
}

/// Node orientations and weights of a parameter set.
pub fn orientations_from_params(params: &ParameterSet) -> Vec<OrientationSample> {
    let w = params.weights();
    (0..params.node_count())
        .map(|i| OrientationSample::new(&rotation_matrix_from_angles(&params.angles(i)), w[i]))
        .collect()
}

/// Orientation samples from current lattice rotations.
pub fn orientations_from_rotations(rotations: &[Mat3], weights: &[f64]) -> Vec<OrientationSample> {
    rotations.iter().zip(weights).map(|(r, w)| OrientationSample::new(r, *w)).collect()
}

/// ODF sampled on an equal-volume Bunge-Euler grid over
/// `φ1 ∈ [0, 2π)`, `Φ ∈ [0, π/2]`, `φ2 ∈ [0, π/2)`, the region that covers
/// the cubic fundamental zone three times.
#[derive(Debug, Clone, PartialEq)]
pub struct OdfGrid {
    pub orientations: Vec<UnitQuaternion<f64>>,
    pub density: Vec<f64>,
    /// Quadrature weights, summing to one.
    pub weights: Vec<f64>,
}

pub fn bunge_matrix(phi1: f64, big_phi: f64, phi2: f64) -> Mat3 {
    let z1 = Rotation3::from_axis_angle(&Vector3::z_axis(), phi1);
    let x = Rotation3::from_axis_angle(&Vector3::x_axis(), big_phi);
    let z2 = Rotation3::from_axis_angle(&Vector3::z_axis(), phi2);
    (z1 * x * z2).into_inner()
}

impl OdfGrid {
    /// Grid with spacing close to `resolution` radians and zero density.
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution < PI / 4.0) {
            return Err(Error::InvalidInput(format!("grid resolution {resolution} out of range")));
        }
        let n1 = (2.0 * PI / resolution).ceil() as usize;
        let n2 = (0.5 * PI / resolution).ceil() as usize;
        let nc = (1.0 / resolution).ceil() as usize;
        let mut orientations = Vec::with_capacity(n1 * n2 * nc);
        for a in 0..n1 {
            let phi1 = 2.0 * PI * (a as f64 + 0.5) / n1 as f64;
            for c in 0..nc {
                let cos_phi = (c as f64 + 0.5) / nc as f64;
                for b in 0..n2 {
                    let phi2 = 0.5 * PI * (b as f64 + 0.5) / n2 as f64;
                    orientations.push(quaternion_from_matrix(&bunge_matrix(phi1, cos_phi.acos(), phi2)));
                }
            }
        }
        let n = orientations.len();
        Ok(Self {
            orientations,
            density: vec![0.0; n],
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.orientations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orientations.is_empty()
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    pub fn same_points(&self, other: &OdfGrid) -> bool {
        self.orientations == other.orientations && self.weights == other.weights
    }

    pub fn zeroed(&self) -> Self {
        Self {
            density: vec![0.0; self.len()],
            ..self.clone()
        }
    }
}

/// Exponent of the kernel `cos(ω/2)^{2κ}` whose value halves at `halfwidth`.
pub fn kernel_exponent(halfwidth: f64) -> f64 {
    0.5f64.ln() / (2.0 * (0.5 * halfwidth).cos().ln())
}

pub fn odf_estimate(samples: &[OrientationSample], halfwidth: f64) -> Result<OdfGrid> {
    odf_estimate_on(samples, halfwidth, &OdfGrid::new(DEFAULT_RESOLUTION)?)
}

/// Kernel density on `grid`, summed over crystal-symmetric equivalents and
/// normalized to unit integral.
pub fn odf_estimate_on(samples: &[OrientationSample], halfwidth: f64, grid: &OdfGrid) -> Result<OdfGrid> {
    if !(halfwidth > 0.0 && halfwidth < PI) {
        return Err(Error::InvalidInput(format!("kernel halfwidth {halfwidth} out of range")));
    }
    if samples.iter().any(|s| !(s.weight >= 0.0)) {
        return Err(Error::InvalidInput("negative orientation weight".into()));
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let kappa2 = 2.0 * kernel_exponent(halfwidth);
    let syms = cubic_symmetry_quaternions();
    let copies: Vec<([f64; 4], f64)> = samples
        .iter()
        .filter(|s| s.weight > 0.0)
        .flat_map(|s| {
            syms.iter().map(move |g| {
                let c = (s.q * g).into_inner();
                ([c.w, c.i, c.j, c.k], s.weight / total)
            })
        })
        .collect();
    // kernel values below 1e-16 of the peak are dropped
    let cutoff = (1e-16f64).powf(1.0 / kappa2);
    let density: Vec<f64> = grid
        .orientations
        .par_iter()
        .map(|g| {
            let q = g.into_inner();
            let q = [q.w, q.i, q.j, q.k];
            copies
                .iter()
                .map(|(c, w)| {
                    let d = (q[0] * c[0] + q[1] * c[1] + q[2] * c[2] + q[3] * c[3]).abs();
                    if d < cutoff {
                        0.0
                    } else {
                        w * d.powf(kappa2)
                    }
                })
                .sum()
        })
        .collect();
    let integral: f64 = density.iter().zip(&grid.weights).map(|(f, w)| f * w).sum();
    if !(integral > 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(OdfGrid {
        density: density.iter().map(|f| f / integral).collect(),
        ..grid.clone()
    })
}

/// `T̂^d = ∫ (f_a − f_b)² dg / ∫ f_b² dg`, with `f_b` as reference.
pub fn texture_index_diff(f_a: &OdfGrid, f_b: &OdfGrid) -> Result<f64> {
    if !f_a.same_points(f_b) || f_a.density.len() != f_b.density.len() {
        return Err(Error::GridMismatch);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), w) in f_a.density.iter().zip(&f_b.density).zip(&f_b.weights) {
        num += w * (a - b) * (a - b);
        den += w * b * b;
    }
    if !(den > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolePoint {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleFigureData {
    pub miller: [i32; 3],
    pub points: Vec<PolePoint>,
}

/// Distinct crystal directions equivalent to `(h k l)` under the cubic
/// rotations and the `±` pole equivalence.
pub fn pole_family(miller: [i32; 3]) -> Vec<Vector3<f64>> {
    let v = Vector3::new(miller[0] as f64, miller[1] as f64, miller[2] as f64).normalize();
    let mut out: Vec<Vector3<f64>> = Vec::new();
    for s in cubic_symmetry_matrices() {
        for d in [s * v, -(s * v)] {
            if !out.iter().any(|o| (o - d).norm() < 1e-12) {
                out.push(d);
            }
        }
    }
    out
}

fn upper(d: &Vector3<f64>) -> bool {
    const EPS: f64 = 1e-12;
    d.z > EPS || (d.z.abs() <= EPS && (d.x > EPS || (d.x.abs() <= EPS && d.y > 0.0)))
}

/// Upper-hemisphere stereographic projection of the `(h k l)` poles of
/// every sample in the specimen frame.
pub fn pole_figure(samples: &[OrientationSample], miller: [i32; 3]) -> Result<PoleFigureData> {
    if miller == [0, 0, 0] {
        return Err(Error::InvalidInput("Miller index (0 0 0)".into()));
    }
    let family = pole_family(miller);
    let mut points = Vec::with_capacity(samples.len() * family.len() / 2);
    for s in samples {
        let r = s.q.to_rotation_matrix();
        for p in &family {
            let d = r * p;
            if upper(&d) {
                let z = d.z.max(0.0);
                points.push(PolePoint {
                    x: d.x / (1.0 + z),
                    y: d.y / (1.0 + z),
                    intensity: s.weight,
                });
            }
        }
    }
    Ok(PoleFigureData { miller, points })
}

/// Parses `"111"`, `"1,1,0"`, or `"-1 1 2"`.
pub fn parse_miller(text: &str) -> Result<[i32; 3]> {
    let parts: Vec<&str> = text.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
    let digits: Vec<i32> = if parts.len() == 3 {
        parts.iter().map(|p| p.parse::<i32>()).collect::<std::result::Result<_, _>>().map_err(|_| bad_miller(text))?
    } else if parts.len() == 1 && text.chars().all(|c| c.is_ascii_digit()) && text.len() == 3 {
        text.chars().map(|c| c.to_digit(10).unwrap() as i32).collect()
    } else {
        return Err(bad_miller(text));
    };
    Ok([digits[0], digits[1], digits[2]])
}

fn bad_miller(text: &str) -> Error {
    Error::InvalidInput(format!("cannot parse Miller index {text:?}"))
}

/// Quaternion from explicit components, normalized.
pub fn quaternion(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}
