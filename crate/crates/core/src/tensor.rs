//! Small dense tensor algebra: Voigt packing, stress/strain rotation
//! matrices, stiffness rotation, polar decomposition and the
//! fourth-order-to-matrix mapping used by the online solver.
//!
//! Voigt order is (11, 22, 33, 23, 13, 12), 0-based. Strain vectors carry
//! engineering shears, so a stiffness matrix maps engineering strain to
//! stress and its entries coincide with `C_ijkl` without extra factors.

use nalgebra::{Matrix3, Matrix6, SMatrix, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Tensor index pairs in Voigt order.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Voigt slot of the symmetric index pair `(i, j)`.
pub fn voigt_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => panic!("tensor index out of range: ({i}, {j})"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoigtKind {
    Stress,
    /// Shear slots hold 2ε_ij.
    Strain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voigt6 {
    pub values: Vector6<f64>,
    pub kind: VoigtKind,
}

impl Voigt6 {
    pub fn stress_from_tensor(t: &Mat3) -> Self {
        let mut values = Vector6::zeros();
        for (slot, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            values[slot] = 0.5 * (t[(i, j)] + t[(j, i)]);
        }
        Self {
            values,
            kind: VoigtKind::Stress,
        }
    }

    pub fn strain_from_tensor(t: &Mat3) -> Self {
        let mut v = Self::stress_from_tensor(t);
        for slot in 3..6 {
            v.values[slot] *= 2.0;
        }
        v.kind = VoigtKind::Strain;
        v
    }

    pub fn to_tensor(&self) -> Mat3 {
        let shear = match self.kind {
            VoigtKind::Stress => 1.0,
            VoigtKind::Strain => 0.5,
        };
        let mut t = Mat3::zeros();
        for (slot, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            let v = if slot < 3 {
                self.values[slot]
            } else {
                shear * self.values[slot]
            };
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
        t
    }

    /// Work density σ·ε. Only meaningful for a stress/strain pair.
    pub fn work(&self, other: &Voigt6) -> f64 {
        debug_assert_ne!(self.kind, other.kind);
        self.values.dot(&other.values)
    }
}

/// Symmetric 6×6 elastic stiffness in Voigt notation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct StiffnessMatrix(pub Mat6);

impl StiffnessMatrix {
    pub fn new(m: Mat6) -> Self {
        Self(m)
    }

    /// Cubic crystal stiffness from its three independent constants.
    pub fn cubic(c11: f64, c12: f64, c44: f64) -> Self {
        let mut m = Mat6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = if i == j { c11 } else { c12 };
            }
            m[(i + 3, i + 3)] = c44;
        }
        Self(m)
    }

    /// Isotropic stiffness from Lamé constants.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        Self::cubic(lambda + 2.0 * mu, lambda, mu)
    }

    pub fn zeros() -> Self {
        Self(Mat6::zeros())
    }

    pub fn matrix(&self) -> &Mat6 {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0 * factor)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.0.norm();
        if n == 0.0 {
            return 0.0;
        }
        (self.0 - self.0.transpose()).norm() / n
    }

    pub fn is_positive_definite(&self) -> bool {
        let sym = 0.5 * (self.0 + self.0.transpose());
        sym.cholesky().is_some()
    }

    pub fn apply(&self, strain: &Voigt6) -> Voigt6 {
        debug_assert_eq!(strain.kind, VoigtKind::Strain);
        Voigt6 {
            values: self.0 * strain.values,
            kind: VoigtKind::Stress,
        }
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(36);
        for i in 0..6 {
            for j in 0..6 {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 36 {
            return Err(Error::InvalidInput(format!(
                "stiffness needs 36 entries, got {}",
                values.len()
            )));
        }
        Ok(Self(Mat6::from_row_slice(values)))
    }
}

impl From<StiffnessMatrix> for Vec<f64> {
    fn from(c: StiffnessMatrix) -> Self {
        c.row_major()
    }
}

impl TryFrom<Vec<f64>> for StiffnessMatrix {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

/// Tait–Bryan angles in radians: α about x, β about y, γ about z.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RotationAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Which 2×2/3×3 block of a 6×6 single-axis rotation is filled, and the
/// sign applied to the angle. Shared with the gradient tape so both routes
/// assemble identical matrices.
#[derive(Debug, Clone, Copy)]
pub struct AxisBlocks {
    pub fixed: usize,
    pub in_plane: [usize; 3],
    pub out_of_plane: [usize; 2],
    pub angle_sign: f64,
}

pub const X_BLOCKS: AxisBlocks = AxisBlocks {
    fixed: 0,
    in_plane: [1, 2, 3],
    out_of_plane: [4, 5],
    angle_sign: 1.0,
};

pub const Y_BLOCKS: AxisBlocks = AxisBlocks {
    fixed: 1,
    in_plane: [0, 2, 4],
    out_of_plane: [3, 5],
    angle_sign: -1.0,
};

pub const Z_BLOCKS: AxisBlocks = AxisBlocks {
    fixed: 2,
    in_plane: [0, 1, 5],
    out_of_plane: [3, 4],
    angle_sign: 1.0,
};

fn in_plane_stress(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(
        c * c,
        s * s,
        2.0 * s * c,
        s * s,
        c * c,
        -2.0 * s * c,
        -s * c,
        s * c,
        c * c - s * s,
    )
}

fn in_plane_strain(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(
        c * c,
        s * s,
        s * c,
        s * s,
        c * c,
        -s * c,
        -2.0 * s * c,
        2.0 * s * c,
        c * c - s * s,
    )
}

fn axis_rotation(blocks: &AxisBlocks, angle: f64, strain: bool) -> Mat6 {
    let theta = blocks.angle_sign * angle;
    let inner = if strain {
        in_plane_strain(theta)
    } else {
        in_plane_stress(theta)
    };
    let (s, c) = theta.sin_cos();
    let outer = [[c, -s], [s, c]];
    let mut m = Mat6::zeros();
    m[(blocks.fixed, blocks.fixed)] = 1.0;
    for (a, &ra) in blocks.in_plane.iter().enumerate() {
        for (b, &rb) in blocks.in_plane.iter().enumerate() {
            m[(ra, rb)] = inner[(a, b)];
        }
    }
    for (a, &ra) in blocks.out_of_plane.iter().enumerate() {
        for (b, &rb) in blocks.out_of_plane.iter().enumerate() {
            m[(ra, rb)] = outer[a][b];
        }
    }
    m
}

/// Product Z(γ)·Y(β)·X(α) of the single-axis stress rotations.
///
/// Acting on a stress vector it produces the components `R^T σ R` with
/// `R = rotation_matrix_from_angles(angles)`.
pub fn build_stress_rotation(angles: &RotationAngles) -> Mat6 {
    axis_rotation(&Z_BLOCKS, angles.gamma, false)
        * axis_rotation(&Y_BLOCKS, angles.beta, false)
        * axis_rotation(&X_BLOCKS, angles.alpha, false)
}

/// Strain counterpart of [`build_stress_rotation`]; equals
/// `D · stress_rotation · D⁻¹` with `D = diag(1, 1, 1, 2, 2, 2)`.
pub fn build_strain_rotation(angles: &RotationAngles) -> Mat6 {
    axis_rotation(&Z_BLOCKS, angles.gamma, true)
        * axis_rotation(&Y_BLOCKS, angles.beta, true)
        * axis_rotation(&X_BLOCKS, angles.alpha, true)
}

/// Stiffness of a crystal whose lattice frame is carried into the specimen
/// frame by `rotation_matrix_from_angles(angles)`.
///
/// Evaluated as `T_ε^T · C · T_ε`, which is symmetric by construction and
/// agrees with [`tensor_rotate_oracle`] for the same rotation.
pub fn rotate_stiffness(c: &StiffnessMatrix, angles: &RotationAngles) -> StiffnessMatrix {
    let t = build_strain_rotation(angles);
    StiffnessMatrix(t.transpose() * c.0 * t)
}

/// Inverse of [`rotate_stiffness`]: maps a specimen-frame stiffness back to
/// the lattice frame.
pub fn unrotate_stiffness(c: &StiffnessMatrix, angles: &RotationAngles) -> StiffnessMatrix {
    let t = build_stress_rotation(angles);
    StiffnessMatrix(t * c.0 * t.transpose())
}

/// `Rx(α)·Ry(β)·Rz(γ)`.
pub fn rotation_matrix_from_angles(angles: &RotationAngles) -> Mat3 {
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    let (sg, cg) = angles.gamma.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Right polar decomposition `F = R·U`.
pub fn polar_decompose(f: &Mat3) -> Result<(Mat3, Mat3)> {
    let det = f.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NonInvertibleDeformation(det));
    }
    let eig = SymmetricEigen::new(f.transpose() * f);
    let scale = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < 1e-14 * scale {
        return Err(Error::NonInvertibleDeformation(det));
    }
    let v = eig.eigenvectors;
    let inv_sqrt = Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let mut r = f * (v * inv_sqrt * v.transpose());
    // Newton polishing removes the orthogonality loss of ill-conditioned F.
    for _ in 0..3 {
        let Some(inv) = r.try_inverse() else { break };
        let next = 0.5 * (r + inv.transpose());
        let done = (next - r).norm() < 1e-15;
        r = next;
        if done {
            break;
        }
    }
    let rtf = r.transpose() * f;
    let u = 0.5 * (rtf + rtf.transpose());
    Ok((r, u))
}

/// Dense fourth-order 3×3×3×3 tensor, `T[i][j][k][l]` stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4 {
    pub data: [f64; 81],
}

impl Default for Tensor4 {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Tensor4 {
    pub fn zeros() -> Self {
        Self { data: [0.0; 81] }
    }

    #[inline]
    fn offset(i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * 3 + j) * 3 + k) * 3 + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[Self::offset(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[Self::offset(i, j, k, l)] = v;
    }

    /// `δ_ik δ_jl`, the derivative of a second-order tensor with respect to itself.
    pub fn identity() -> Self {
        let mut t = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                t.set(i, j, i, j, 1.0);
            }
        }
        t
    }

    pub fn from_stiffness(c: &StiffnessMatrix) -> Self {
        let mut t = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t.set(i, j, k, l, c.0[(voigt_index(i, j), voigt_index(k, l))]);
                    }
                }
            }
        }
        t
    }

    /// Repacks into Voigt form, averaging over the minor-symmetric copies.
    pub fn to_stiffness(&self) -> StiffnessMatrix {
        let mut m = Mat6::zeros();
        for (a, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (b, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                m[(a, b)] = 0.25
                    * (self.get(i, j, k, l)
                        + self.get(j, i, k, l)
                        + self.get(i, j, l, k)
                        + self.get(j, i, l, k));
            }
        }
        StiffnessMatrix(m)
    }

    /// `T : A`, contracting the trailing index pair.
    pub fn contract(&self, a: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        s += self.get(i, j, k, l) * a[(k, l)];
                    }
                }
                out[(i, j)] = s;
            }
        }
        out
    }
}

/// `mat(T)_{pq} = T_{ijkl}` with `p = i + 3j`, `q = k + 3l`.
pub fn mat_fourth_order(t: &Tensor4) -> Mat9 {
    let mut m = Mat9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    m[(i + 3 * j, k + 3 * l)] = t.get(i, j, k, l);
                }
            }
        }
    }
    m
}

pub fn unmat_fourth_order(m: &Mat9) -> Tensor4 {
    let mut t = Tensor4::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t.set(i, j, k, l, m[(i + 3 * j, k + 3 * l)]);
                }
            }
        }
    }
    t
}

/// Column-major flattening `[A11, A21, A31, A12, ...]`, matching `mat`.
pub fn vec9(a: &Mat3) -> nalgebra::SVector<f64, 9> {
    nalgebra::SVector::<f64, 9>::from_column_slice(a.as_slice())
}

pub fn unvec9(v: &nalgebra::SVector<f64, 9>) -> Mat3 {
    Mat3::from_column_slice(v.as_slice())
}

/// Reference rotation of a stiffness by full index transformation
/// `C'_ijkl = R_ia R_jb R_kc R_ld C_abcd`.
pub fn tensor_rotate_oracle(c: &StiffnessMatrix, r: &Mat3) -> Result<StiffnessMatrix> {
    let err = (r.transpose() * r - Mat3::identity()).norm();
    if err > 1e-8 {
        return Err(Error::NonOrthogonal(err));
    }
    let src = Tensor4::from_stiffness(c);
    let mut out = Tensor4::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            let rab = r[(i, a)] * r[(j, b)];
                            if rab == 0.0 {
                                continue;
                            }
                            for cc in 0..3 {
                                for d in 0..3 {
                                    s += rab * r[(k, cc)] * r[(l, d)] * src.get(a, b, cc, d);
                                }
                            }
                        }
                    }
                    out.set(i, j, k, l, s);
                }
            }
        }
    }
    Ok(out.to_stiffness())
}
