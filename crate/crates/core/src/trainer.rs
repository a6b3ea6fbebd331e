//! Dataset synthesis, the relative squared-error loss, reverse-mode
//! gradients through the full homogenization pass, and the AdamW loop.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenizer::{assign_stiffness, check_interface, homogenize, PhaseAssignment, PhaseMode};
use crate::network::{inverse_node_weight, ParameterSet, Topology};
use crate::tape::{GradientTape, Var};
use crate::tensor::{AxisBlocks, StiffnessMatrix, X_BLOCKS, Y_BLOCKS, Z_BLOCKS};

/// Attempts allowed per accepted draw in the rejection samplers.
pub const RETRY_CAP: usize = 1_000_000;

/// Sampling intervals for the cubic constants, in GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRanges {
    pub c11: (f64, f64),
    pub c12: (f64, f64),
    pub c44: (f64, f64),
}

impl Default for StiffnessRanges {
    fn default() -> Self {
        Self {
            c11: (1e-3, 1e3),
            c12: (1e-3, 1e3),
            c44: (1e-3, 1e3),
        }
    }
}

impl StiffnessRanges {
    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.c11, self.c12, self.c44] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidInput(format!("invalid stiffness range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> (f64, f64, f64) {
        let u = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        };
        (u(rng, self.c11), u(rng, self.c12), u(rng, self.c44))
    }
}

/// Cubic stiffness with `C11, C12, C44` drawn uniformly, rejected until
/// `C11 − C12 > 0`.
pub fn sample_cubic_stiffness(rng: &mut impl Rng, ranges: &StiffnessRanges) -> Result<StiffnessMatrix> {
    ranges.validate()?;
    for _ in 0..RETRY_CAP {
        let (c11, c12, c44) = ranges.draw(rng);
        if c11 - c12 > 0.0 {
            return Ok(StiffnessMatrix::cubic(c11, c12, c44));
        }
    }
    Err(Error::RetryCapExceeded(RETRY_CAP))
}

/// One accepted draw of the two-phase sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePair {
    pub phase1: StiffnessMatrix,
    pub phase2: StiffnessMatrix,
    /// Contrast factor `c1 ∈ [0.1, 10]` applied to phase 2.
    pub contrast: f64,
}

/// Two-phase sampler: a stable phase-1 triple, then a stable phase-2 triple
/// scaled by `c1 = 10^U(−1,1)`. Any unstable draw restarts the attempt.
pub fn generate_two_phase_samples(
    n: usize,
    rng: &mut impl Rng,
    ranges: &StiffnessRanges,
) -> Result<Vec<PhasePair>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    ranges.validate()?;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > RETRY_CAP * n {
            return Err(Error::RetryCapExceeded(RETRY_CAP));
        }
        let (a11, a12, a44) = ranges.draw(rng);
        if a11 - a12 <= 0.0 {
            continue;
        }
        let (b11, b12, b44) = ranges.draw(rng);
        if b11 - b12 <= 0.0 {
            continue;
        }
        let contrast = 10f64.powf(rng.gen_range(-1.0..=1.0));
        out.push(PhasePair {
            phase1: StiffnessMatrix::cubic(a11, a12, a44),
            phase2: StiffnessMatrix::cubic(contrast * b11, contrast * b12, contrast * b44),
            contrast,
        });
    }
    Ok(out)
}

pub fn generate_single_phase_samples(
    n: usize,
    rng: &mut impl Rng,
    ranges: &StiffnessRanges,
) -> Result<Vec<StiffnessMatrix>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    (0..n).map(|_| sample_cubic_stiffness(rng, ranges)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub phase1: StiffnessMatrix,
    pub phase2: Option<StiffnessMatrix>,
    /// Homogenized reference stiffness, GPa.
    pub target: StiffnessMatrix,
}

impl Sample {
    pub fn assignment(&self) -> PhaseAssignment {
        match self.phase2 {
            Some(p2) => PhaseAssignment::two_phase(self.phase1, p2),
            None => PhaseAssignment::single(self.phase1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mode(&self) -> PhaseMode {
        if self.samples.iter().any(|s| s.phase2.is_some()) {
            PhaseMode::TwoPhase
        } else {
            PhaseMode::Single
        }
    }
}

/// Labels freshly sampled phase stiffnesses with a teacher network; stands
/// in for full-field reference simulations.
pub fn synthesize_teacher_dataset(
    teacher: &ParameterSet,
    topology: &Topology,
    n: usize,
    mode: PhaseMode,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    teacher.validate(topology)?;
    let ranges = StiffnessRanges::default();
    let phases: Vec<(StiffnessMatrix, Option<StiffnessMatrix>)> = match mode {
        PhaseMode::Single => generate_single_phase_samples(n, rng, &ranges)?
            .into_iter()
            .map(|c| (c, None))
            .collect(),
        PhaseMode::TwoPhase => generate_two_phase_samples(n, rng, &ranges)?
            .into_iter()
            .map(|p| (p.phase1, Some(p.phase2)))
            .collect(),
    };
    let samples = phases
        .into_par_iter()
        .map(|(phase1, phase2)| {
            let mut s = Sample {
                phase1,
                phase2,
                target: StiffnessMatrix::zeros(),
            };
            s.target = homogenize(teacher, topology, &s.assignment())?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        provenance: "teacher".into(),
    })
}

/// Rescales node weights so that even (phase-1) nodes carry `fraction` of
/// the total weight, keeping relative weights within each phase.
pub fn encode_phase1_fraction(params: &mut ParameterSet, fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!("phase fraction {fraction} outside (0, 1)")));
    }
    let w = params.weights();
    let total: f64 = w.iter().sum();
    let even: f64 = w.iter().step_by(2).sum();
    let odd = total - even;
    for (i, z) in params.z.iter_mut().enumerate() {
        let target = if i % 2 == 0 {
            w[i] * fraction * total / even
        } else {
            w[i] * (1.0 - fraction) * total / odd
        };
        *z = inverse_node_weight(target);
    }
    Ok(())
}

fn relative_error(target: &StiffnessMatrix, predicted: &StiffnessMatrix) -> Result<f64> {
    let denom = target.0.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroNormTarget);
    }
    Ok((target.0 - predicted.0).norm_squared() / denom)
}

/// Mean over the batch of `‖C̄ref − C̄‖² / ‖C̄ref‖²`.
pub fn loss(batch: &[Sample], params: &ParameterSet, topology: &Topology) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let errors = batch
        .par_iter()
        .map(|s| relative_error(&s.target, &homogenize(params, topology, &s.assignment())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(errors.iter().sum::<f64>() / batch.len() as f64)
}

/// Tape handles of every trainable scalar, in flat order.
struct ParamVars {
    flat: Vec<Var>,
    nodes: usize,
    interactions: usize,
}

impl ParamVars {
    fn record(tape: &mut GradientTape, params: &ParameterSet) -> Self {
        Self {
            flat: params.as_flat().into_iter().map(|v| tape.scalar(v)).collect(),
            nodes: params.node_count(),
            interactions: params.interaction_count(),
        }
    }
    fn z(&self, i: usize) -> Var {
        self.flat[i]
    }
    fn alpha(&self, i: usize) -> Var {
        self.flat[self.nodes + i]
    }
    fn beta(&self, i: usize) -> Var {
        self.flat[2 * self.nodes + i]
    }
    fn gamma(&self, i: usize) -> Var {
        self.flat[3 * self.nodes + i]
    }
    fn theta(&self, j: usize) -> Var {
        self.flat[4 * self.nodes + j]
    }
    fn phi(&self, j: usize) -> Var {
        self.flat[4 * self.nodes + self.interactions + j]
    }
}

/// Single-axis strain rotation assembled from `sin`/`cos` of the angle node.
fn record_axis_rotation(tape: &mut GradientTape, blocks: &AxisBlocks, angle: Var) -> Var {
    let sg = blocks.angle_sign;
    let s = tape.sin(angle);
    let c = tape.cos(angle);
    let cc = tape.mul(c, c);
    let ss = tape.mul(s, s);
    let sc = tape.mul(s, c);
    let [p0, p1, p2] = blocks.in_plane;
    let [o0, o1] = blocks.out_of_plane;
    let one = tape.scalar(1.0);
    let terms = vec![
        (blocks.fixed, blocks.fixed, one, 1.0),
        (p0, p0, cc, 1.0),
        (p0, p1, ss, 1.0),
        (p0, p2, sc, sg),
        (p1, p0, ss, 1.0),
        (p1, p1, cc, 1.0),
        (p1, p2, sc, -sg),
        (p2, p0, sc, -2.0 * sg),
        (p2, p1, sc, 2.0 * sg),
        (p2, p2, cc, 1.0),
        (p2, p2, ss, -1.0),
        (o0, o0, c, 1.0),
        (o0, o1, s, -sg),
        (o1, o0, s, sg),
        (o1, o1, c, 1.0),
    ];
    tape.assemble(6, 6, terms)
}

fn record_interface_matrix(tape: &mut GradientTape, theta: Var, phi: Var) -> Var {
    use std::f64::consts::PI;
    let a = tape.scale_const(PI, theta);
    let b = tape.scale_const(2.0 * PI, phi);
    let sa = tape.sin(a);
    let ca = tape.cos(a);
    let sb = tape.sin(b);
    let cb = tape.cos(b);
    let n0 = tape.mul(cb, sa);
    let n1 = tape.mul(sb, sa);
    let n2 = ca;
    tape.assemble(
        6,
        3,
        vec![
            (0, 0, n0, 1.0),
            (1, 1, n1, 1.0),
            (2, 2, n2, 1.0),
            (3, 1, n2, 1.0),
            (3, 2, n1, 1.0),
            (4, 0, n2, 1.0),
            (4, 2, n0, 1.0),
            (5, 0, n1, 1.0),
            (5, 1, n0, 1.0),
        ],
    )
}

fn record_h2(tape: &mut GradientTape, c0: Var, c1: Var, f0: Var, f1: Var, h: Var) -> Result<Var> {
    let diff = tape.sub(c0, c1);
    let a = tape.scale(f1, c0);
    let b = tape.scale(f0, c1);
    let m = tape.add(a, b);
    let ht = tape.transpose(h);
    let hm = tape.matmul(ht, m);
    let s = tape.matmul(hm, h);
    let sv = tape.value(s);
    let s3 = nalgebra::Matrix3::from_iterator(sv.iter().copied());
    let hv = tape.value(h);
    check_interface(&s3, &nalgebra::Vector3::new(hv[(0, 0)], hv[(1, 1)], hv[(2, 2)]))?;
    let s_inv = tape.inverse(s)?;
    let hs = tape.matmul(h, s_inv);
    let q = tape.matmul(hs, ht);
    let dq = tape.matmul(diff, q);
    let corr = tape.matmul(dq, diff);
    let ff = tape.mul(f0, f1);
    let corr = tape.scale(ff, corr);
    let a = tape.scale(f0, c0);
    let b = tape.scale(f1, c1);
    let mix = tape.add(a, b);
    Ok(tape.sub(mix, corr))
}

/// Records the complete forward pass on a fresh tape and returns the root
/// stiffness node with the parameter handles.
fn record_homogenize(
    tape: &mut GradientTape,
    pv: &ParamVars,
    topology: &Topology,
    assigned: &[StiffnessMatrix],
) -> Result<Var> {
    let n = topology.node_count();
    // subtree weight sums, leaves first
    let mut sums: Vec<Var> = (0..n).map(|i| tape.softplus(pv.z(i))).collect();
    let mut current: Vec<Var> = (0..n)
        .map(|i| {
            let x = record_axis_rotation(tape, &X_BLOCKS, pv.alpha(i));
            let y = record_axis_rotation(tape, &Y_BLOCKS, pv.beta(i));
            let z = record_axis_rotation(tape, &Z_BLOCKS, pv.gamma(i));
            let zy = tape.matmul(z, y);
            let t = tape.matmul(zy, x);
            let tt = tape.transpose(t);
            let c = tape.input(DMatrix::from_column_slice(6, 6, assigned[i].0.as_slice()));
            let tc = tape.matmul(tt, c);
            tape.matmul(tc, t)
        })
        .collect();
    let one = tape.scalar(1.0);
    for level in (0..topology.depth()).rev() {
        let mut next = Vec::with_capacity(1 << level);
        let mut next_sums = Vec::with_capacity(1 << level);
        for p in 0..1usize << level {
            let j = topology.interaction_index(level, p);
            let (w0, w1) = (sums[2 * p], sums[2 * p + 1]);
            let total = tape.add(w0, w1);
            let f0 = tape.div(w0, total);
            let f1 = tape.sub(one, f0);
            let h = record_interface_matrix(tape, pv.theta(j), pv.phi(j));
            next.push(record_h2(tape, current[2 * p], current[2 * p + 1], f0, f1, h)?);
            next_sums.push(total);
        }
        current = next;
        sums = next_sums;
    }
    Ok(current[0])
}

/// Relative error of one sample and its gradient with respect to the flat
/// parameter vector.
pub fn sample_loss_and_gradient(
    sample: &Sample,
    params: &ParameterSet,
    topology: &Topology,
) -> Result<(f64, Vec<f64>)> {
    let denom = sample.target.0.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroNormTarget);
    }
    let assigned = assign_stiffness(topology, &sample.assignment())?;
    let mut tape = GradientTape::new();
    let pv = ParamVars::record(&mut tape, params);
    let root = record_homogenize(&mut tape, &pv, topology, &assigned)?;
    let target = tape.input(DMatrix::from_column_slice(6, 6, sample.target.0.as_slice()));
    let d = tape.sub(target, root);
    let sq = tape.squared_norm(d);
    let out = tape.scale_const(1.0 / denom, sq);
    let adj = tape.backward(out);
    Ok((tape.scalar_value(out), pv.flat.iter().map(|&v| adj.scalar(v)).collect()))
}

/// Batch loss and its exact gradient. Samples are evaluated in parallel and
/// reduced in batch order, so the result does not depend on thread count.
pub fn loss_and_gradient(
    batch: &[Sample],
    params: &ParameterSet,
    topology: &Topology,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    params.validate(topology)?;
    let parts = batch
        .par_iter()
        .map(|s| sample_loss_and_gradient(s, params, topology))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len_flat()];
    let mut total = 0.0;
    for (l, g) in &parts {
        total += l;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

pub fn gradient(params: &ParameterSet, batch: &[Sample], topology: &Topology) -> Result<Vec<f64>> {
    loss_and_gradient(batch, params, topology).map(|(_, g)| g)
}

/// Central differences of [`loss`] with step `1e-6·max(1, |p|)`.
pub fn finite_difference_gradient(
    params: &ParameterSet,
    batch: &[Sample],
    topology: &Topology,
) -> Result<Vec<f64>> {
    let base = params.as_flat();
    (0..base.len())
        .map(|k| {
            let h = 1e-6 * base[k].abs().max(1.0);
            let mut p = params.clone();
            let mut flat = base.clone();
            flat[k] = base[k] + h;
            p.set_flat(&flat);
            let up = loss(batch, &p, topology)?;
            flat[k] = base[k] - h;
            p.set_flat(&flat);
            let down = loss(batch, &p, topology)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
}

/// Compares tape gradients with central differences. The relative error of
/// each entry is `|a − n| / max(|a|, |n|, 1e-3·‖a‖∞)`; the floor keeps
/// entries that are zero up to round-off from dominating the maximum.
pub fn gradcheck(params: &ParameterSet, batch: &[Sample], topology: &Topology) -> Result<GradCheck> {
    let analytic = gradient(params, batch, topology)?;
    let numeric = finite_difference_gradient(params, batch, topology)?;
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_relative_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Share of the shuffled dataset held out for validation (the tail).
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 20,
            weight_decay: 0.0,
            seed: 0,
            validation_fraction: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.validation_fraction)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training configuration: {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(len: usize, config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            weight_decay: config.weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[k]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_error: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    /// Epoch 0 holds the errors of the initial parameters.
    pub curves: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Seeded shuffle; the tail of the permutation is the validation set.
pub fn split_dataset(n: usize, validation_fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = order.split_off(n - n_val);
    (order, val)
}

fn subset(dataset: &Dataset, idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| dataset.samples[i].clone()).collect()
}

/// Trains from a seeded random initialisation.
pub fn train(dataset: &Dataset, topology: &Topology, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_idx, val_idx) = split_dataset(dataset.len(), config.validation_fraction, &mut rng);
    let init = ParameterSet::random(topology, &mut rng);
    train_with(dataset, topology, config, init, train_idx, val_idx, &mut rng)
}

/// Trains from given parameters and split.
pub fn train_with(
    dataset: &Dataset,
    topology: &Topology,
    config: &TrainConfig,
    init: ParameterSet,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate(topology)?;
    if train_idx.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let train_set = subset(dataset, &train_idx);
    let val_set = subset(dataset, &val_idx);
    let mut params = init;
    let mut flat = params.as_flat();
    let mut opt = AdamW::new(flat.len(), config);

    let evaluate = |params: &ParameterSet, epoch: usize| -> Result<EpochRecord> {
        let train_error = loss(&train_set, params, topology)?;
        let val_error = if val_set.is_empty() {
            f64::NAN
        } else {
            loss(&val_set, params, topology)?
        };
        if !train_error.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_error,
            });
        }
        Ok(EpochRecord {
            epoch,
            train_error,
            val_error,
        })
    };

    let mut curves = vec![evaluate(&params, 0)?];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (l, g) = loss_and_gradient(&batch, &params, topology)?;
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence { epoch, loss: l });
            }
            opt.step(&mut flat, &g);
            params.set_flat(&flat);
        }
        curves.push(evaluate(&params, epoch)?);
    }
    Ok(TrainOutcome {
        params,
        curves,
        train_indices: train_idx,
        validation_indices: val_idx,
    })
}
