//! Network topology, trainable parameters and the quantities derived from
//! them: node weights, stress-equilibrium directions and interaction
//! coefficients.

use nalgebra::Vector3;
use rand::Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::RotationAngles;

pub const MAX_DEPTH: usize = 12;

/// Binary tree of depth `N` over `2^N` material nodes.
///
/// Interactions are numbered breadth-first: `(l, p) ↦ 2^l − 1 + p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    depth: usize,
    /// `sublists[l][p]` for `l ∈ [0, N]`; level `N` holds single leaves.
    sublists: Vec<Vec<Vec<usize>>>,
}

impl Topology {
    pub fn build(depth: usize) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::DepthOutOfRange(depth));
        }
        let mut sublists = vec![Vec::new(); depth + 1];
        sublists[depth] = (0..1usize << depth).map(|i| vec![i]).collect();
        for level in (0..depth).rev() {
            let below = &sublists[level + 1];
            let merged: Vec<Vec<usize>> = (0..1usize << level)
                .map(|p| {
                    let mut list = below[2 * p].clone();
                    list.extend_from_slice(&below[2 * p + 1]);
                    list
                })
                .collect();
            sublists[level] = merged;
        }
        Ok(Self { depth, sublists })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        1 << self.depth
    }

    pub fn interaction_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// `K^l_p`; `l = N` addresses single material nodes.
    pub fn sublist(&self, level: usize, position: usize) -> &[usize] {
        &self.sublists[level][position]
    }

    pub fn interaction_index(&self, level: usize, position: usize) -> usize {
        debug_assert!(level < self.depth && position < (1 << level));
        (1 << level) - 1 + position
    }

    pub fn level_position(&self, j: usize) -> (usize, usize) {
        debug_assert!(j < self.interaction_count());
        let level = (usize::BITS - 1 - (j + 1).leading_zeros()) as usize;
        (level, j + 1 - (1 << level))
    }

    /// Node sets of the first and second child branch of interaction `j`.
    pub fn branches(&self, j: usize) -> (&[usize], &[usize]) {
        let (l, p) = self.level_position(j);
        (self.sublist(l + 1, 2 * p), self.sublist(l + 1, 2 * p + 1))
    }
}

/// `W = ln(1 + e^z)`, evaluated without overflow.
pub fn node_weight(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of [`node_weight`]: the logistic function.
pub fn node_weight_derivative(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`node_weight`] for `w > 0`.
pub fn inverse_node_weight(w: f64) -> f64 {
    assert!(w > 0.0, "weight must be positive");
    // z = ln(e^w − 1) = w + ln(1 − e^{−w})
    w + (-(-w).exp()).ln_1p()
}

/// Unit stress-equilibrium direction parameterised by `(θ, φ)`.
pub fn direction_vector(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = (PI * theta).sin_cos();
    let (sp, cp) = (2.0 * PI * phi).sin_cos();
    Vector3::new(cp * st, sp * st, ct)
}

/// Weight fractions of the two child branches.
pub fn branch_volume_fractions(weights: &[f64], first: &[usize], second: &[usize]) -> (f64, f64) {
    let w0: f64 = first.iter().map(|&i| weights[i]).sum();
    let w1: f64 = second.iter().map(|&i| weights[i]).sum();
    let total = w0 + w1;
    let f0 = w0 / total;
    (f0, 1.0 - f0)
}

/// All trainable quantities of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub z: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Indexed by flat interaction number.
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ParameterSet {
    /// Seeded initialisation: `z ~ U[0.2, 0.8]`, angles `~ U[0, 2π)`,
    /// `θ, φ ~ U(0, 1)`.
    pub fn random(topology: &Topology, rng: &mut impl Rng) -> Self {
        let n = topology.node_count();
        let m = topology.interaction_count();
        let mut draw = |count: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..count).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let z = draw(n, 0.2, 0.8);
        let alpha = draw(n, 0.0, 2.0 * PI);
        let beta = draw(n, 0.0, 2.0 * PI);
        let gamma = draw(n, 0.0, 2.0 * PI);
        let theta = draw(m, f64::EPSILON, 1.0);
        let phi = draw(m, f64::EPSILON, 1.0);
        Self {
            z,
            alpha,
            beta,
            gamma,
            theta,
            phi,
        }
    }

    pub fn node_count(&self) -> usize {
        self.z.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.theta.len()
    }

    /// Depth implied by the array sizes.
    pub fn depth(&self) -> Option<usize> {
        let n = self.z.len();
        if n < 2 || !n.is_power_of_two() {
            return None;
        }
        Some(n.trailing_zeros() as usize)
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let n = topology.node_count();
        let m = topology.interaction_count();
        let sizes_ok = [&self.z, &self.alpha, &self.beta, &self.gamma]
            .iter()
            .all(|v| v.len() == n)
            && self.theta.len() == m
            && self.phi.len() == m;
        if !sizes_ok {
            return Err(Error::InvalidInput(format!(
                "parameter arrays do not match depth {} ({} nodes, {} interactions)",
                topology.depth(),
                n,
                m
            )));
        }
        if !self.as_flat().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.z.iter().map(|&z| node_weight(z)).collect()
    }

    pub fn angles(&self, node: usize) -> RotationAngles {
        RotationAngles::new(self.alpha[node], self.beta[node], self.gamma[node])
    }

    pub fn direction(&self, j: usize) -> Vector3<f64> {
        direction_vector(self.theta[j], self.phi[j])
    }

    pub fn directions(&self) -> Vec<Vector3<f64>> {
        (0..self.theta.len()).map(|j| self.direction(j)).collect()
    }

    /// Concatenation `[z, α, β, γ, θ, φ]`.
    pub fn as_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.z.len() + 2 * self.theta.len());
        for part in [
            &self.z,
            &self.alpha,
            &self.beta,
            &self.gamma,
            &self.theta,
            &self.phi,
        ] {
            out.extend_from_slice(part);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len_flat());
        let mut offset = 0;
        for part in [
            &mut self.z,
            &mut self.alpha,
            &mut self.beta,
            &mut self.gamma,
            &mut self.theta,
            &mut self.phi,
        ] {
            let len = part.len();
            part.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn len_flat(&self) -> usize {
        4 * self.z.len() + 2 * self.theta.len()
    }

    /// Fraction of the total weight carried by even-indexed (phase 1) nodes.
    pub fn phase1_fraction(&self) -> f64 {
        let w = self.weights();
        let even: f64 = w.iter().step_by(2).sum();
        even / w.iter().sum::<f64>()
    }
}

/// Sparse table of `α^{i,j}`: for each interaction, the participating nodes
/// with their coefficient. First-branch nodes carry `+1/ΣW`, second-branch
/// nodes `−1/ΣW`, so that `Σ_i W^i α^{i,j} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionCoefficients {
    node_count: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl InteractionCoefficients {
    pub fn new(topology: &Topology, weights: &[f64]) -> Self {
        let entries = (0..topology.interaction_count())
            .map(|j| {
                let (first, second) = topology.branches(j);
                let w0: f64 = first.iter().map(|&i| weights[i]).sum();
                let w1: f64 = second.iter().map(|&i| weights[i]).sum();
                first
                    .iter()
                    .map(|&i| (i, 1.0 / w0))
                    .chain(second.iter().map(|&i| (i, -1.0 / w1)))
                    .collect()
            })
            .collect();
        Self {
            node_count: topology.node_count(),
            entries,
        }
    }

    /// Builds a table from explicit entries; used for hand-assembled networks.
    pub fn from_entries(node_count: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        Self {
            node_count,
            entries,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn interaction_count(&self) -> usize {
        self.entries.len()
    }

    pub fn interaction(&self, j: usize) -> &[(usize, f64)] {
        &self.entries[j]
    }

    pub fn get(&self, node: usize, j: usize) -> f64 {
        self.entries[j]
            .iter()
            .find(|(i, _)| *i == node)
            .map_or(0.0, |(_, a)| *a)
    }

    /// For each node, the interactions touching it with their coefficient.
    pub fn by_node(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.node_count];
        for (j, list) in self.entries.iter().enumerate() {
            for &(i, a) in list {
                out[i].push((j, a));
            }
        }
        out
    }
}

pub fn interaction_coefficients(topology: &Topology, weights: &[f64]) -> InteractionCoefficients {
    InteractionCoefficients::new(topology, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topology_sizes() {
        let t1 = Topology::build(1).unwrap();
        assert_eq!(t1.node_count(), 2);
        assert_eq!(t1.interaction_count(), 1);
        assert_eq!(t1.sublist(0, 0), &[0, 1]);

        let t2 = Topology::build(2).unwrap();
        assert_eq!(t2.node_count(), 4);
        assert_eq!(t2.interaction_count(), 3);
        assert_eq!(t2.sublist(0, 0), &[0, 1, 2, 3]);
        assert_eq!(t2.sublist(1, 1), &[2, 3]);

        let t3 = Topology::build(3).unwrap();
        assert_eq!(t3.node_count(), 8);
        assert_eq!(t3.interaction_count(), 7);

        assert!(matches!(Topology::build(0), Err(Error::DepthOutOfRange(0))));
        assert!(Topology::build(13).is_err());
    }

    #[test]
    fn topology_invariants() {
        for depth in 1..=6 {
            let t = Topology::build(depth).unwrap();
            assert_eq!(t.sublist(0, 0), (0..t.node_count()).collect::<Vec<_>>());
            for p in 0..1 << (depth - 1) {
                assert_eq!(t.sublist(depth - 1, p), &[2 * p, 2 * p + 1]);
            }
            for l in 0..depth - 1 {
                for p in 0..1 << l {
                    let mut merged = t.sublist(l + 1, 2 * p).to_vec();
                    merged.extend_from_slice(t.sublist(l + 1, 2 * p + 1));
                    assert_eq!(t.sublist(l, p), merged.as_slice());
                }
            }
            for j in 0..t.interaction_count() {
                let (l, p) = t.level_position(j);
                assert_eq!(t.interaction_index(l, p), j);
                let (a, b) = t.branches(j);
                assert!(a.iter().all(|i| !b.contains(i)));
                let mut union = a.to_vec();
                union.extend_from_slice(b);
                assert_eq!(union.as_slice(), t.sublist(l, p));
            }
            assert_eq!(t, Topology::build(depth).unwrap());
        }
    }

    #[test]
    fn softplus_values() {
        assert!((node_weight(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((node_weight(5.0) - 5.006_715_348_489_118).abs() < 1e-12);
        let tiny = node_weight(-50.0);
        assert!(tiny > 0.0);
        assert!((tiny - 1.928_749_847_963_918e-22).abs() < 1e-34);
        assert!((node_weight(700.0) - 700.0).abs() < 1e-12);
        assert!(node_weight(-700.0) > 0.0);
        for z in [-3.0, -0.2, 0.0, 0.4, 8.0] {
            assert!((inverse_node_weight(node_weight(z)) - z).abs() < 1e-12);
            let h = 1e-6;
            let fd = (node_weight(z + h) - node_weight(z - h)) / (2.0 * h);
            assert!((fd - node_weight_derivative(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn direction_examples() {
        let n = direction_vector(0.0, 0.37);
        assert!((n - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let n = direction_vector(0.5, 0.0);
        assert!((n - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = direction_vector(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert!((n.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn fractions() {
        let (f0, f1) = branch_volume_fractions(&[2.0, 2.0, 2.0, 2.0], &[0, 1], &[2, 3]);
        assert_eq!((f0, f1), (0.5, 0.5));
        let (f0, f1) = branch_volume_fractions(&[1.0, 3.0], &[0], &[1]);
        assert_eq!((f0, f1), (0.25, 0.75));
        let (f0, f1) = branch_volume_fractions(&[0.3, 1.7, 0.11], &[0, 2], &[1]);
        assert_eq!(f0 + f1, 1.0);
    }

    #[test]
    fn coefficient_examples() {
        let t = Topology::build(1).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let c = interaction_coefficients(&t, &[ln2, ln2]);
        assert_eq!(c.get(0, 0), 1.0 / ln2);
        assert_eq!(c.get(1, 0), -1.0 / ln2);

        let t = Topology::build(2).unwrap();
        let c = interaction_coefficients(&t, &[1.0, 2.0, 3.0, 4.0]);
        // node 0 is outside the (1, 1) interaction
        assert_eq!(c.get(0, t.interaction_index(1, 1)), 0.0);
        assert_eq!(c.get(0, 0), 1.0 / 3.0);
        assert_eq!(c.get(3, 0), -1.0 / 7.0);
    }

    #[test]
    fn coefficients_are_weight_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for depth in 1..=5 {
            let t = Topology::build(depth).unwrap();
            let p = ParameterSet::random(&t, &mut rng);
            let w = p.weights();
            let c = interaction_coefficients(&t, &w);
            for j in 0..t.interaction_count() {
                let s: f64 = c.interaction(j).iter().map(|&(i, a)| w[i] * a).sum();
                assert!(s.abs() < 1e-14, "{s}");
            }
        }
    }

    #[test]
    fn parameter_init_and_flat_layout() {
        let t = Topology::build(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParameterSet::random(&t, &mut rng);
        p.validate(&t).unwrap();
        assert_eq!(p.depth(), Some(4));
        assert!(p.z.iter().all(|z| (0.2..0.8).contains(z)));
        assert!(p.theta.iter().all(|v| *v > 0.0 && *v < 1.0));
        let flat = p.as_flat();
        assert_eq!(flat.len(), 4 * 16 + 2 * 15);
        let mut q = p.clone();
        q.set_flat(&flat);
        assert_eq!(p, q);
        let other = ParameterSet::random(&Topology::build(3).unwrap(), &mut rng);
        assert!(other.validate(&t).is_err());
    }
}
