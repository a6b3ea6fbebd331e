//! Offline forward pass: phase assignment, node rotation and the recursive
//! binary laminate homogenization up to the root of the tree.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::network::{branch_volume_fractions, ParameterSet, Topology};
use crate::tensor::{rotate_stiffness, Mat3, StiffnessMatrix, Tensor4, Voigt6};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    Single,
    TwoPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAssignment {
    pub mode: PhaseMode,
    pub phase1: StiffnessMatrix,
    pub phase2: Option<StiffnessMatrix>,
}

impl PhaseAssignment {
    pub fn single(phase1: StiffnessMatrix) -> Self {
        Self {
            mode: PhaseMode::Single,
            phase1,
            phase2: None,
        }
    }

    pub fn two_phase(phase1: StiffnessMatrix, phase2: StiffnessMatrix) -> Self {
        Self {
            mode: PhaseMode::TwoPhase,
            phase1,
            phase2: Some(phase2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == PhaseMode::TwoPhase && self.phase2.is_none() {
            return Err(Error::MissingPhase2);
        }
        Ok(())
    }
}

/// Even nodes carry phase 1, odd nodes phase 2 (two-phase mode); every node
/// carries phase 1 in single mode.
pub fn assign_stiffness(
    topology: &Topology,
    assignment: &PhaseAssignment,
) -> Result<Vec<StiffnessMatrix>> {
    assignment.validate()?;
    Ok((0..topology.node_count())
        .map(|i| match (assignment.mode, i % 2) {
            (PhaseMode::TwoPhase, 1) => assignment.phase2.unwrap(),
            _ => assignment.phase1,
        })
        .collect())
}

/// Maps a jump vector `a` to the engineering-strain Voigt vector of
/// `sym(a ⊗ N)`; its transpose maps a Voigt stress to the traction `σ·N`.
pub fn interface_matrix(n: &Vector3<f64>) -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        n[0], 0.0, 0.0, //
        0.0, n[1], 0.0, //
        0.0, 0.0, n[2], //
        0.0, n[2], n[1], //
        n[2], 0.0, n[0], //
        n[1], n[0], 0.0,
    ])
}

pub(crate) fn check_interface(s: &Matrix3<f64>, n: &Vector3<f64>) -> Result<()> {
    let sv = s.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateInterface([n[0], n[1], n[2]]));
    }
    Ok(())
}

/// Binary laminate homogenization with interface normal `n`:
///
/// `C̄ = f0·C0 + f1·C1 − f0·f1·(C0 − C1)·H·S⁻¹·Hᵀ·(C0 − C1)`,
/// `S = Hᵀ·(f1·C0 + f0·C1)·H`.
pub fn h2(
    c0: &StiffnessMatrix,
    c1: &StiffnessMatrix,
    f0: f64,
    f1: f64,
    n: &Vector3<f64>,
) -> Result<StiffnessMatrix> {
    let h = interface_matrix(n);
    let s = h.transpose() * (c0.0 * f1 + c1.0 * f0) * h;
    check_interface(&s, n)?;
    let s_inv = s.try_inverse().ok_or(Error::DegenerateInterface([n[0], n[1], n[2]]))?;
    let diff = c0.0 - c1.0;
    let q = h * s_inv * h.transpose();
    let out = c0.0 * f0 + c1.0 * f1 - diff * q * diff * (f0 * f1);
    Ok(StiffnessMatrix(out))
}

/// Brute-force laminate: for each unit macroscopic strain the three
/// components of the strain jump `sym(a ⊗ N)` are solved from traction
/// continuity, working on full 3×3 tensors.
pub fn laminate_oracle(
    c0: &StiffnessMatrix,
    c1: &StiffnessMatrix,
    f0: f64,
    n: &Vector3<f64>,
) -> Result<StiffnessMatrix> {
    let f1 = 1.0 - f0;
    let t0 = Tensor4::from_stiffness(c0);
    let t1 = Tensor4::from_stiffness(c1);
    let jump = |a: &Vector3<f64>| -> Mat3 {
        let outer = a * n.transpose();
        0.5 * (outer + outer.transpose())
    };
    let traction_jump = |bar: &Mat3, a: &Vector3<f64>| -> Vector3<f64> {
        let e0 = bar + jump(a) * f1;
        let e1 = bar - jump(a) * f0;
        (t0.contract(&e0) - t1.contract(&e1)) * n
    };

    let mut out = nalgebra::Matrix6::zeros();
    for k in 0..6 {
        let mut unit = Voigt6::strain_from_tensor(&Mat3::zeros());
        unit.values[k] = 1.0;
        let bar = unit.to_tensor();
        let base = traction_jump(&bar, &Vector3::zeros());
        let mut system = Matrix3::zeros();
        for c in 0..3 {
            let mut a = Vector3::zeros();
            a[c] = 1.0;
            system.set_column(c, &(traction_jump(&bar, &a) - base));
        }
        check_interface(&system, n)?;
        let a = system
            .lu()
            .solve(&(-base))
            .ok_or(Error::DegenerateInterface([n[0], n[1], n[2]]))?;
        let e0 = bar + jump(&a) * f1;
        let e1 = bar - jump(&a) * f0;
        let sigma = t0.contract(&e0) * f0 + t1.contract(&e1) * f1;
        out.set_column(k, &Voigt6::stress_from_tensor(&sigma).values);
    }
    Ok(StiffnessMatrix(out))
}

/// Rotated stiffness of every material node.
pub fn rotated_node_stiffness(
    params: &ParameterSet,
    topology: &Topology,
    assignment: &PhaseAssignment,
) -> Result<Vec<StiffnessMatrix>> {
    let assigned = assign_stiffness(topology, assignment)?;
    Ok(assigned
        .iter()
        .enumerate()
        .map(|(i, c)| rotate_stiffness(c, &params.angles(i)))
        .collect())
}

/// Effective stiffness of the network: nodes are rotated, then merged
/// level by level from the leaves to the root.
pub fn homogenize(
    params: &ParameterSet,
    topology: &Topology,
    assignment: &PhaseAssignment,
) -> Result<StiffnessMatrix> {
    let weights = params.weights();
    let mut current = rotated_node_stiffness(params, topology, assignment)?;
    for level in (0..topology.depth()).rev() {
        current = (0..1usize << level)
            .map(|p| {
                let first = topology.sublist(level + 1, 2 * p);
                let second = topology.sublist(level + 1, 2 * p + 1);
                let (f0, f1) = branch_volume_fractions(&weights, first, second);
                let n = params.direction(topology.interaction_index(level, p));
                h2(&current[2 * p], &current[2 * p + 1], f0, f1, &n)
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(current[0])
}

/// Voigt (arithmetic) and Reuss (harmonic) averages of two phases.
pub fn voigt_reuss_bounds(
    c0: &StiffnessMatrix,
    c1: &StiffnessMatrix,
    f0: f64,
) -> Option<(StiffnessMatrix, StiffnessMatrix)> {
    let f1 = 1.0 - f0;
    let voigt = c0.0 * f0 + c1.0 * f1;
    let compliance = c0.0.try_inverse()? * f0 + c1.0.try_inverse()? * f1;
    let reuss = compliance.try_inverse()?;
    Some((StiffnessMatrix(voigt), StiffnessMatrix(reuss)))
}
