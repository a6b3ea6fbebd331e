//! Online prediction: downscaling of the macroscopic deformation gradient,
//! the equilibrium residual on the interaction variables, Newton iteration
//! with load bisection, and upscaling of stress and tangent.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenizer::PhaseMode;
use crate::material::{integrate_node, MaterialLaw, NodeMaterialState, NodeResponse};
use crate::network::{InteractionCoefficients, ParameterSet, Topology};
use crate::tensor::{polar_decompose, rotation_matrix_from_angles, Mat3, Mat9};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_rel: f64,
    /// Absolute tolerance as a multiple of the reference stress (largest
    /// stiffness entry of the node laws).
    pub tol_abs_factor: f64,
    pub max_iterations: usize,
    pub max_bisections: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-8,
            tol_abs_factor: 1e-10,
            max_iterations: 50,
            max_bisections: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStep {
    pub f_bar: Mat3,
    pub dt: f64,
}

/// Ramp of one component of `F̄` from its identity value at a constant
/// rate, in equal increments.
pub fn rate_path(component: (usize, usize), rate: f64, final_value: f64, steps: usize) -> Result<Vec<LoadStep>> {
    let (i, j) = component;
    if i > 2 || j > 2 || steps == 0 || !(rate > 0.0) {
        return Err(Error::InvalidInput("invalid rate shorthand".into()));
    }
    let start = if i == j { 1.0 } else { 0.0 };
    let span = final_value - start;
    if span == 0.0 {
        return Err(Error::InvalidInput("rate shorthand has zero span".into()));
    }
    let dt = span.abs() / rate / steps as f64;
    Ok((1..=steps)
        .map(|k| {
            let mut f = Mat3::identity();
            f[(i, j)] = start + span * k as f64 / steps as f64;
            LoadStep { f_bar: f, dt }
        })
        .collect())
}

/// Node laws by phase; two-phase networks give odd nodes the phase-2 law.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialAssignment {
    pub phase1: MaterialLaw,
    pub phase2: Option<MaterialLaw>,
}

impl MaterialAssignment {
    pub fn single(law: MaterialLaw) -> Self {
        Self {
            phase1: law,
            phase2: None,
        }
    }

    pub fn two_phase(phase1: MaterialLaw, phase2: MaterialLaw) -> Self {
        Self {
            phase1,
            phase2: Some(phase2),
        }
    }

    pub fn mode(&self) -> PhaseMode {
        if self.phase2.is_some() {
            PhaseMode::TwoPhase
        } else {
            PhaseMode::Single
        }
    }

    pub fn law(&self, node: usize) -> &MaterialLaw {
        match (&self.phase2, node % 2) {
            (Some(p2), 1) => p2,
            _ => &self.phase1,
        }
    }
}

/// Frozen network data used online.
#[derive(Debug, Clone)]
pub struct OnlineNetwork {
    pub topology: Topology,
    pub weights: Vec<f64>,
    pub coefficients: InteractionCoefficients,
    pub directions: Vec<Vector3<f64>>,
    pub initial_rotations: Vec<Mat3>,
    pub materials: MaterialAssignment,
    reference_stress: f64,
}

impl OnlineNetwork {
    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn unknowns(&self) -> usize {
        3 * self.directions.len()
    }

    pub fn reference_stress(&self) -> f64 {
        self.reference_stress
    }
}

/// Solver state between load steps.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub time: f64,
    pub f_bar: Mat3,
    pub a: DVector<f64>,
    pub nodes: Vec<NodeMaterialState>,
    /// Current lattice rotations `R^i_t`.
    pub orientations: Vec<Mat3>,
}

/// Builds the online network and its reference state: `F_e = R^i`,
/// `F_p = (R^i)ᵀ`, `A = 0`.
pub fn init_state(
    params: &ParameterSet,
    topology: &Topology,
    materials: MaterialAssignment,
) -> Result<(OnlineNetwork, SolverState)> {
    params.validate(topology)?;
    let weights = params.weights();
    let coefficients = InteractionCoefficients::new(topology, &weights);
    let rotations: Vec<Mat3> = (0..topology.node_count())
        .map(|i| rotation_matrix_from_angles(&params.angles(i)))
        .collect();
    let nodes = rotations
        .iter()
        .enumerate()
        .map(|(i, r)| NodeMaterialState::initial(r, materials.law(i)))
        .collect();
    let reference_stress = [Some(&materials.phase1), materials.phase2.as_ref()]
        .into_iter()
        .flatten()
        .map(|l| l.stiffness().0.abs().max())
        .fold(0.0, f64::max);
    let net = OnlineNetwork {
        topology: topology.clone(),
        coefficients,
        directions: params.directions(),
        initial_rotations: rotations.clone(),
        materials,
        weights,
        reference_stress,
    };
    let state = SolverState {
        time: 0.0,
        f_bar: Mat3::identity(),
        a: DVector::zeros(net.unknowns()),
        nodes,
        orientations: rotations,
    };
    Ok((net, state))
}

fn jump(a: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(a[3 * j], a[3 * j + 1], a[3 * j + 2])
}

/// `F^i = F̄ + Σ_j α^{i,j} a^j ⊗ N^j`.
pub fn downscale(
    f_bar: &Mat3,
    a: &DVector<f64>,
    coefficients: &InteractionCoefficients,
    directions: &[Vector3<f64>],
) -> Vec<Mat3> {
    coefficients
        .by_node()
        .iter()
        .map(|path| {
            path.iter()
                .fold(*f_bar, |f, &(j, alpha)| f + jump(a, j) * directions[j].transpose() * alpha)
        })
        .collect()
}

/// `r_j = Σ_i W^i α^{i,j} P^i N^j`, the weighted traction jump at each
/// interaction.
pub fn residual(
    p: &[Mat3],
    weights: &[f64],
    coefficients: &InteractionCoefficients,
    directions: &[Vector3<f64>],
) -> DVector<f64> {
    let mut r = DVector::zeros(3 * directions.len());
    for (j, n) in directions.iter().enumerate() {
        let t = coefficients
            .interaction(j)
            .iter()
            .fold(Vector3::zeros(), |acc, &(i, alpha)| acc + p[i] * n * (weights[i] * alpha));
        r.fixed_rows_mut::<3>(3 * j).copy_from(&t);
    }
    r
}

/// `B_j`: 9×3 map from a jump `a` to `vec(a ⊗ N^j)`.
fn jump_block(n: &Vector3<f64>) -> SMatrix<f64, 9, 3> {
    let mut b = SMatrix::<f64, 9, 3>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            b[(r + 3 * c, r)] = n[c];
        }
    }
    b
}

/// `∂r/∂A = Σ_i W^i D^iᵀ mat(∂P/∂F)^i D^i`.
pub fn residual_jacobian(
    dpdf: &[Mat9],
    weights: &[f64],
    coefficients: &InteractionCoefficients,
    directions: &[Vector3<f64>],
) -> DMatrix<f64> {
    let m = directions.len();
    let blocks: Vec<SMatrix<f64, 9, 3>> = directions.iter().map(jump_block).collect();
    let mut jac = DMatrix::zeros(3 * m, 3 * m);
    for (i, path) in coefficients.by_node().iter().enumerate() {
        let k = &dpdf[i];
        let kb: Vec<SMatrix<f64, 9, 3>> = path.iter().map(|&(j, _)| k * blocks[j]).collect();
        for &(j, aj) in path {
            let bt = blocks[j].transpose();
            for (y, &(l, al)) in path.iter().enumerate() {
                let block = bt * kb[y] * (weights[i] * aj * al);
                let mut view = jac.fixed_view_mut::<3, 3>(3 * j, 3 * l);
                view += block;
            }
        }
    }
    jac
}

/// `∂r/∂vec(F̄) = Σ_i W^i D^iᵀ mat(∂P/∂F)^i`.
fn residual_macro_derivative(
    dpdf: &[Mat9],
    weights: &[f64],
    paths: &[Vec<(usize, f64)>],
    directions: &[Vector3<f64>],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3 * directions.len(), 9);
    for (i, path) in paths.iter().enumerate() {
        for &(j, alpha) in path {
            let block = jump_block(&directions[j]).transpose() * dpdf[i] * (weights[i] * alpha);
            let mut view = out.fixed_view_mut::<3, 9>(3 * j, 0);
            view += block;
        }
    }
    out
}

/// `P̄ = Σ W^i P^i / Σ W^i`.
pub fn upscale_stress(p: &[Mat3], weights: &[f64]) -> Mat3 {
    let total: f64 = weights.iter().sum();
    p.iter().zip(weights).fold(Mat3::zeros(), |acc, (pi, w)| acc + pi * *w) / total
}

/// `mat(L̄) = Σ W^i mat(∂P/∂F)^i (I + D^i ∂A/∂F̄) / Σ W^i` with
/// `∂A/∂F̄ = −(∂r/∂A)⁻¹ ∂r/∂F̄`.
pub fn upscale_tangent(
    dpdf: &[Mat9],
    weights: &[f64],
    jacobian: &DMatrix<f64>,
    coefficients: &InteractionCoefficients,
    directions: &[Vector3<f64>],
) -> Result<Mat9> {
    let paths = coefficients.by_node();
    let total: f64 = weights.iter().sum();
    let mut out = Mat9::zeros();
    for (k, w) in dpdf.iter().zip(weights) {
        out += k * *w;
    }
    if directions.is_empty() {
        return Ok(out / total);
    }
    let drdf = residual_macro_derivative(dpdf, weights, &paths, directions);
    let lu = jacobian.clone().lu();
    let da_df = lu.solve(&(-drdf)).ok_or(Error::IndeterminateNetwork)?;
    if da_df.iter().any(|v| !v.is_finite()) {
        return Err(Error::IndeterminateNetwork);
    }
    for (i, path) in paths.iter().enumerate() {
        // D^i ∂A/∂F̄, a 9×9 block
        let mut dfi = Mat9::zeros();
        for &(j, alpha) in path {
            let rows = da_df.fixed_view::<3, 9>(3 * j, 0);
            dfi += jump_block(&directions[j]) * rows * alpha;
        }
        out += dpdf[i] * dfi * weights[i];
    }
    Ok(out / total)
}

#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub f: Mat3,
    pub p: Mat3,
    pub orientation: Mat3,
}

#[derive(Debug, Clone)]
pub struct MacroResponse {
    pub time: f64,
    pub f_bar: Mat3,
    pub p_bar: Mat3,
    /// `mat(L̄)` in the column-major `vec` layout.
    pub tangent: Mat9,
    pub residual_norm: f64,
    /// Newton updates, summed over bisected sub-increments.
    pub iterations: usize,
    pub bisections: usize,
    pub nodes: Vec<NodeRecord>,
}

struct Evaluation {
    responses: Vec<NodeResponse>,
    r: DVector<f64>,
}

fn evaluate(net: &OnlineNetwork, state: &SolverState, f_bar: &Mat3, a: &DVector<f64>, dt: f64) -> Result<Evaluation> {
    let f = downscale(f_bar, a, &net.coefficients, &net.directions);
    let responses = f
        .par_iter()
        .enumerate()
        .map(|(i, fi)| integrate_node(&state.nodes[i], fi, dt, net.materials.law(i)))
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<Mat3> = responses.iter().map(|r| r.p).collect();
    let r = residual(&p, &net.weights, &net.coefficients, &net.directions);
    Ok(Evaluation { responses, r })
}

struct Converged {
    state: SolverState,
    eval: Evaluation,
    jacobian: DMatrix<f64>,
    iterations: usize,
}

fn is_converged(norm: f64, r0: f64, tol_abs: f64, config: &SolverConfig) -> bool {
    norm < tol_abs || (r0 > 0.0 && norm / r0 < config.tol_rel)
}

fn newton_increment(
    net: &OnlineNetwork,
    state: &SolverState,
    f_bar: &Mat3,
    dt: f64,
    config: &SolverConfig,
) -> Result<Converged> {
    let tol_abs = config.tol_abs_factor * net.reference_stress;
    let mut a = state.a.clone();
    let mut eval = evaluate(net, state, f_bar, &a, dt)?;
    let r0 = eval.r.norm();
    let mut iterations = 0;
    loop {
        let dpdf: Vec<Mat9> = eval.responses.iter().map(|r| r.dpdf).collect();
        let jacobian = residual_jacobian(&dpdf, &net.weights, &net.coefficients, &net.directions);
        let norm = eval.r.norm();
        if !norm.is_finite() {
            return Err(Error::NewtonFailure {
                time: state.time + dt,
                bisections: 0,
            });
        }
        if is_converged(norm, r0, tol_abs, config) || net.directions.is_empty() {
            let nodes: Vec<NodeMaterialState> = eval.responses.iter().map(|r| r.state.clone()).collect();
            let orientations = nodes
                .iter()
                .map(|n| n.elastic_deformation().and_then(|fe| polar_decompose(&fe)).map(|(r, _)| r))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Converged {
                state: SolverState {
                    time: state.time + dt,
                    f_bar: *f_bar,
                    a,
                    nodes,
                    orientations,
                },
                eval,
                jacobian,
                iterations,
            });
        }
        if iterations >= config.max_iterations {
            return Err(Error::NewtonFailure {
                time: state.time + dt,
                bisections: 0,
            });
        }
        let delta = jacobian.lu().solve(&(-&eval.r)).ok_or(Error::IndeterminateNetwork)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::IndeterminateNetwork);
        }
        a += delta;
        iterations += 1;
        eval = evaluate(net, state, f_bar, &a, dt)?;
    }
}

fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NewtonFailure { .. } | Error::MaterialPointDivergence(_) | Error::NonInvertibleDeformation(_)
    )
}

fn solve_bisected(
    net: &OnlineNetwork,
    state: &SolverState,
    f_bar: &Mat3,
    dt: f64,
    config: &SolverConfig,
    depth: usize,
    counters: &mut (usize, usize),
) -> Result<Converged> {
    match newton_increment(net, state, f_bar, dt, config) {
        Ok(c) => {
            counters.0 += c.iterations;
            Ok(c)
        }
        Err(e) if is_recoverable(&e) => {
            if depth >= config.max_bisections {
                return Err(Error::NewtonFailure {
                    time: state.time,
                    bisections: depth,
                });
            }
            counters.1 = counters.1.max(depth + 1);
            let mid = (state.f_bar + f_bar) * 0.5;
            let half = solve_bisected(net, state, &mid, 0.5 * dt, config, depth + 1, counters)?;
            solve_bisected(net, &half.state, f_bar, 0.5 * dt, config, depth + 1, counters)
        }
        Err(e) => Err(e),
    }
}

/// Solves one load step from the previous converged state.
pub fn newton_solve(
    net: &OnlineNetwork,
    state: &SolverState,
    step: &LoadStep,
    config: &SolverConfig,
) -> Result<(SolverState, MacroResponse)> {
    let det = step.f_bar.determinant();
    if !(det > 0.0) {
        return Err(Error::NonInvertibleDeformation(det));
    }
    if !(step.dt > 0.0) {
        return Err(Error::InvalidInput(format!("time increment {} must be positive", step.dt)));
    }
    let mut counters = (0, 0);
    let conv = solve_bisected(net, state, &step.f_bar, step.dt, config, 0, &mut counters)?;
    let dpdf: Vec<Mat9> = conv.eval.responses.iter().map(|r| r.dpdf).collect();
    let p: Vec<Mat3> = conv.eval.responses.iter().map(|r| r.p).collect();
    let tangent = upscale_tangent(&dpdf, &net.weights, &conv.jacobian, &net.coefficients, &net.directions)?;
    let f = downscale(&step.f_bar, &conv.state.a, &net.coefficients, &net.directions);
    let nodes = (0..net.node_count())
        .map(|i| NodeRecord {
            f: f[i],
            p: p[i],
            orientation: conv.state.orientations[i],
        })
        .collect();
    let response = MacroResponse {
        time: conv.state.time,
        f_bar: step.f_bar,
        p_bar: upscale_stress(&p, &net.weights),
        tangent,
        residual_norm: conv.eval.r.norm(),
        iterations: counters.0,
        bisections: counters.1,
        nodes,
    };
    Ok((conv.state, response))
}

/// Runs a load path. On failure the error is returned together with the
/// history of converged steps.
pub fn run_path(
    net: &OnlineNetwork,
    initial: &SolverState,
    steps: &[LoadStep],
    config: &SolverConfig,
) -> std::result::Result<(SolverState, Vec<MacroResponse>), (Error, Vec<MacroResponse>)> {
    let mut state = initial.clone();
    let mut history = Vec::with_capacity(steps.len());
    for step in steps {
        match newton_solve(net, &state, step, config) {
            Ok((next, resp)) => {
                state = next;
                history.push(resp);
            }
            Err(e) => return Err((e, history)),
        }
    }
    Ok((state, history))
}

/// `vec(P)` components in row order `P11, P12, P13, P21, ...`.
pub fn row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
    out
}

/// Double contraction `A : B`.
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}
