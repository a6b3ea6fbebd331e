//! Local constitutive laws at material nodes.
//!
//! Stresses are in MPa. Elastic constants refer to the lattice frame; the
//! node's initial orientation enters through `F_p(0) = Rᵀ`, so that
//! `F_e(0) = R` and the lattice-frame Green–Lagrange strain drives the
//! stress.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{vec9, Mat3, Mat9, StiffnessMatrix, Voigt6};

pub const SLIP_SYSTEMS: usize = 12;
pub type SlipVector = SVector<f64, SLIP_SYSTEMS>;

const FCC_SYSTEMS: [([f64; 3], [f64; 3]); SLIP_SYSTEMS] = [
    ([0.0, 1.0, -1.0], [1.0, 1.0, 1.0]),
    ([-1.0, 0.0, 1.0], [1.0, 1.0, 1.0]),
    ([1.0, -1.0, 0.0], [1.0, 1.0, 1.0]),
    ([0.0, -1.0, -1.0], [-1.0, -1.0, 1.0]),
    ([1.0, 0.0, 1.0], [-1.0, -1.0, 1.0]),
    ([-1.0, 1.0, 0.0], [-1.0, -1.0, 1.0]),
    ([0.0, -1.0, 1.0], [1.0, -1.0, -1.0]),
    ([-1.0, 0.0, -1.0], [1.0, -1.0, -1.0]),
    ([1.0, 1.0, 0.0], [1.0, -1.0, -1.0]),
    ([0.0, 1.0, 1.0], [-1.0, 1.0, -1.0]),
    ([1.0, 0.0, -1.0], [-1.0, 1.0, -1.0]),
    ([-1.0, -1.0, 0.0], [-1.0, 1.0, -1.0]),
];

const INTERACTION_CLASSES: &str = include_str!("../data/fcc_interaction_classes.txt");

/// Names of the seven interaction classes, in the order of `h^{sl-sl}`.
pub const INTERACTION_CLASS_NAMES: [&str; 7] = [
    "self",
    "coplanar",
    "collinear",
    "Hirth lock",
    "glissile junction I",
    "glissile junction II",
    "Lomer lock",
];

/// 0-based class index for every ordered pair of FCC systems.
pub fn interaction_classes() -> [[usize; SLIP_SYSTEMS]; SLIP_SYSTEMS] {
    let mut out = [[0; SLIP_SYSTEMS]; SLIP_SYSTEMS];
    let rows = INTERACTION_CLASSES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    for (a, row) in rows.enumerate() {
        for (b, v) in row.split_whitespace().enumerate() {
            out[a][b] = v.parse::<usize>().expect("interaction table entry") - 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlipSystemSet {
    pub directions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// `h^{αα'}`.
    pub interaction: DMatrix<f64>,
}

impl SlipSystemSet {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Schmid tensor `s ⊗ n`.
    pub fn schmid(&self, alpha: usize) -> Mat3 {
        self.directions[alpha] * self.normals[alpha].transpose()
    }

    /// Fills the interaction matrix from the seven class coefficients.
    pub fn with_interaction(mut self, coefficients: &[f64; 7]) -> Self {
        let classes = interaction_classes();
        self.interaction = DMatrix::from_fn(SLIP_SYSTEMS, SLIP_SYSTEMS, |a, b| coefficients[classes[a][b]]);
        self
    }
}

/// The twelve octahedral `{111}⟨110⟩` systems, unit vectors, with an
/// identity interaction matrix.
pub fn fcc_slip_systems() -> SlipSystemSet {
    let unit = |v: [f64; 3]| Vector3::from(v).normalize();
    SlipSystemSet {
        directions: FCC_SYSTEMS.iter().map(|(s, _)| unit(*s)).collect(),
        normals: FCC_SYSTEMS.iter().map(|(_, n)| unit(*n)).collect(),
        interaction: DMatrix::identity(SLIP_SYSTEMS, SLIP_SYSTEMS),
    }
}

/// `S = C : E` with `E = ½(F_eᵀF_e − I)`.
pub fn hooke_second_pk(f_e: &Mat3, c: &StiffnessMatrix) -> Mat3 {
    let e = 0.5 * (f_e.transpose() * f_e - Mat3::identity());
    c.apply(&Voigt6::strain_from_tensor(&e)).to_tensor()
}

/// `τ = M : (s ⊗ n)`.
pub fn resolved_shear(mandel: &Mat3, systems: &SlipSystemSet, alpha: usize) -> f64 {
    systems.directions[alpha].dot(&(mandel * systems.normals[alpha]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenoPlasticityParams {
    pub slip_systems: usize,
    /// `h0^{sl-sl}`, MPa.
    pub h0: f64,
    /// Saturation resistance `ξ_∞`, MPa.
    pub xi_inf: f64,
    /// Initial resistance `ξ^0`, MPa.
    pub xi0: f64,
    pub n: f64,
    pub a: f64,
    /// Reference shear rate, 1/s.
    pub gamma_dot0: f64,
    pub h_int: f64,
    /// Class coefficients `h^{sl-sl}`.
    pub h_slsl: [f64; 7],
    /// Cubic elastic constants, MPa.
    pub c11: f64,
    pub c12: f64,
    pub c44: f64,
}

impl PhenoPlasticityParams {
    /// AA6022-T4 (phase 1 of the two-phase example as well).
    pub fn aa6022_t4() -> Self {
        Self {
            slip_systems: 12,
            h0: 1020.0,
            xi_inf: 266.0,
            xi0: 76.0,
            n: 20.0,
            a: 3.7,
            gamma_dot0: 1e-3,
            h_int: 0.0,
            h_slsl: [1.0, 1.0, 5.123, 0.574, 1.123, 1.123, 1.0],
            c11: 191_000.0,
            c12: 162_000.0,
            c44: 42_200.0,
        }
    }

    /// Softer second phase of the two-phase example.
    pub fn two_phase_soft() -> Self {
        Self {
            xi_inf: 88.6,
            xi0: 25.3,
            ..Self::aa6022_t4()
        }
    }

    pub fn stiffness(&self) -> StiffnessMatrix {
        StiffnessMatrix::cubic(self.c11, self.c12, self.c44)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.h0, self.xi_inf, self.xi0, self.gamma_dot0, self.a]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        let ok = positive
            && self.n >= 1.0
            && self.slip_systems == SLIP_SYSTEMS
            && self.h_slsl.iter().all(|v| v.is_finite())
            && self.stiffness().is_positive_definite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("invalid crystal-plasticity parameters".into()))
        }
    }
}

/// `γ̇ = γ̇0 |τ/ξ|^n sgn(τ)`.
pub fn shear_rate(tau: f64, xi: f64, params: &PhenoPlasticityParams) -> f64 {
    params.gamma_dot0 * (tau / xi).abs().powf(params.n) * tau.signum() * (tau != 0.0) as u8 as f64
}

fn saturation_term(xi: f64, params: &PhenoPlasticityParams) -> f64 {
    let x = 1.0 - xi / params.xi_inf;
    x.abs().powf(params.a) * x.signum() * (x != 0.0) as u8 as f64
}

fn saturation_term_derivative(xi: f64, params: &PhenoPlasticityParams) -> f64 {
    let x = 1.0 - xi / params.xi_inf;
    -params.a / params.xi_inf * x.abs().powf(params.a - 1.0)
}

/// `ξ̇^α = h0 (1 + h_int) Σ_α' |γ̇^α'| |1 − ξ^α'/ξ_∞|^a sgn(1 − ξ^α'/ξ_∞) h^{αα'}`.
pub fn hardening_rate(
    xi: &SlipVector,
    gamma_dot: &SlipVector,
    params: &PhenoPlasticityParams,
    interaction: &DMatrix<f64>,
) -> SlipVector {
    let drive = SlipVector::from_fn(|b, _| gamma_dot[b].abs() * saturation_term(xi[b], params));
    let scale = params.h0 * (1.0 + params.h_int);
    SlipVector::from_fn(|a, _| scale * (0..SLIP_SYSTEMS).map(|b| interaction[(a, b)] * drive[b]).sum::<f64>())
}

/// `L_p = Σ γ̇^α s^α ⊗ n^α`.
pub fn plastic_velocity_gradient(gamma_dot: &SlipVector, systems: &SlipSystemSet) -> Mat3 {
    (0..systems.len()).fold(Mat3::zeros(), |acc, a| acc + systems.schmid(a) * gamma_dot[a])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticKind {
    /// `S = C : E` with Green–Lagrange strain, `P = F_e S F_p^{-T}`.
    #[default]
    FiniteStrain,
    /// Lattice-frame small strain: `P = F_p⁻¹ (C : sym(F_p F F_p⁻¹ − I)) F_p^{-T}`,
    /// affine in `F`.
    SmallStrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticLaw {
    pub stiffness: StiffnessMatrix,
    pub kind: ElasticKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenoPlasticity {
    pub params: PhenoPlasticityParams,
    pub systems: SlipSystemSet,
    pub stiffness: StiffnessMatrix,
}

impl PhenoPlasticity {
    pub fn new(params: PhenoPlasticityParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            systems: fcc_slip_systems().with_interaction(&params.h_slsl),
            stiffness: params.stiffness(),
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaterialLaw {
    Elastic(ElasticLaw),
    Pheno(Box<PhenoPlasticity>),
}

impl MaterialLaw {
    pub fn elastic(stiffness: StiffnessMatrix) -> Self {
        Self::Elastic(ElasticLaw {
            stiffness,
            kind: ElasticKind::FiniteStrain,
        })
    }

    pub fn small_strain(stiffness: StiffnessMatrix) -> Self {
        Self::Elastic(ElasticLaw {
            stiffness,
            kind: ElasticKind::SmallStrain,
        })
    }

    pub fn pheno(params: PhenoPlasticityParams) -> Result<Self> {
        Ok(Self::Pheno(Box::new(PhenoPlasticity::new(params)?)))
    }

    pub fn stiffness(&self) -> &StiffnessMatrix {
        match self {
            Self::Elastic(e) => &e.stiffness,
            Self::Pheno(p) => &p.stiffness,
        }
    }
}

/// Internal variables of one material node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMaterialState {
    /// Last converged total deformation gradient.
    pub f: Mat3,
    pub f_p: Mat3,
    /// Slip resistances, MPa (empty for elastic nodes).
    pub xi: Vec<f64>,
    pub accumulated_shear: f64,
    /// Last converged plastic velocity gradient, used as Newton start.
    pub l_p: Mat3,
}

impl NodeMaterialState {
    /// Reference state of a node whose lattice is carried into the specimen
    /// frame by `r`: `F_e = r`, `F_p = rᵀ`.
    pub fn initial(r: &Mat3, law: &MaterialLaw) -> Self {
        let xi = match law {
            MaterialLaw::Elastic(_) => Vec::new(),
            MaterialLaw::Pheno(p) => vec![p.params.xi0; SLIP_SYSTEMS],
        };
        Self {
            f: Mat3::identity(),
            f_p: r.transpose(),
            xi,
            accumulated_shear: 0.0,
            l_p: Mat3::zeros(),
        }
    }

    pub fn elastic_deformation(&self) -> Result<Mat3> {
        Ok(self.f * invert(&self.f_p)?)
    }
}

/// Converged node update.
#[derive(Debug, Clone)]
pub struct NodeResponse {
    pub state: NodeMaterialState,
    pub p: Mat3,
    /// `∂vec(P)/∂vec(F)` in the column-major `vec` layout.
    pub dpdf: Mat9,
}

fn invert(m: &Mat3) -> Result<Mat3> {
    let det = m.determinant();
    if !(det.abs() > 0.0) || !det.is_finite() {
        return Err(Error::NonInvertibleDeformation(det));
    }
    m.try_inverse().ok_or(Error::NonInvertibleDeformation(det))
}

fn unit(k: usize) -> Mat3 {
    let mut e = Mat3::zeros();
    e[k] = 1.0;
    e
}

fn elastic_stress(law: &ElasticLaw, f: &Mat3, f_p: &Mat3) -> Result<Mat3> {
    let fp_inv = invert(f_p)?;
    Ok(match law.kind {
        ElasticKind::FiniteStrain => {
            let f_e = f * fp_inv;
            f_e * hooke_second_pk(&f_e, &law.stiffness) * fp_inv.transpose()
        }
        ElasticKind::SmallStrain => {
            let g = f_p * f * fp_inv - Mat3::identity();
            let sigma = law.stiffness.apply(&Voigt6::strain_from_tensor(&(0.5 * (g + g.transpose())))).to_tensor();
            fp_inv * sigma * fp_inv.transpose()
        }
    })
}

fn elastic_tangent(law: &ElasticLaw, f: &Mat3, f_p: &Mat3) -> Result<Mat9> {
    let fp_inv = invert(f_p)?;
    let mut out = Mat9::zeros();
    for k in 0..9 {
        let df = unit(k);
        let dp = match law.kind {
            ElasticKind::FiniteStrain => {
                let f_e = f * fp_inv;
                let df_e = df * fp_inv;
                let de = 0.5 * (f_e.transpose() * df_e + df_e.transpose() * f_e);
                let s = hooke_second_pk(&f_e, &law.stiffness);
                let ds = law.stiffness.apply(&Voigt6::strain_from_tensor(&de)).to_tensor();
                (df_e * s + f_e * ds) * fp_inv.transpose()
            }
            ElasticKind::SmallStrain => {
                let g = f_p * df * fp_inv;
                let ds = law.stiffness.apply(&Voigt6::strain_from_tensor(&(0.5 * (g + g.transpose())))).to_tensor();
                fp_inv * ds * fp_inv.transpose()
            }
        };
        out.set_column(k, &vec9(&dp));
    }
    Ok(out)
}

/// Outcome of the local Newton iteration.
struct LocalSolution {
    l_p: Mat3,
    xi: SlipVector,
    gamma_dot: SlipVector,
}

const LOCAL_MAX_ITER: usize = 100;
const LOCAL_TOL: f64 = 1e-12;
const MAX_SUBSTEP_DEPTH: usize = 20;
/// Local solves allowed per integration call, bounding the substep tree.
const MAX_LOCAL_SOLVES: usize = 512;

struct LocalProblem<'a> {
    law: &'a PhenoPlasticity,
    /// `F_new F_p_old⁻¹`.
    a: Mat3,
    xi_old: SlipVector,
    dt: f64,
}

struct LocalEval {
    r_l: Mat3,
    r_xi: SlipVector,
    tau: SlipVector,
    gamma_dot: SlipVector,
    f_e: Mat3,
    s: Mat3,
}

impl LocalProblem<'_> {
    fn eval(&self, l_p: &Mat3, xi: &SlipVector) -> LocalEval {
        let law = self.law;
        let f_e = self.a * (Mat3::identity() - l_p * self.dt);
        let c_e = f_e.transpose() * f_e;
        let s = hooke_second_pk(&f_e, &law.stiffness);
        let mandel = c_e * s;
        let tau = SlipVector::from_fn(|a, _| resolved_shear(&mandel, &law.systems, a));
        let gamma_dot = SlipVector::from_fn(|a, _| shear_rate(tau[a], xi[a], &law.params));
        let r_l = l_p - plastic_velocity_gradient(&gamma_dot, &law.systems);
        let xi_dot = hardening_rate(xi, &gamma_dot, &law.params, &law.systems.interaction);
        let r_xi = xi - self.xi_old - xi_dot * self.dt;
        LocalEval {
            r_l,
            r_xi,
            tau,
            gamma_dot,
            f_e,
            s,
        }
    }

    fn merit(&self, e: &LocalEval) -> f64 {
        let scale = 1.0 / self.law.params.xi0;
        (e.r_l * self.dt).norm_squared() + (e.r_xi * scale).norm_squared()
    }

    /// Jacobian of the scaled residual `(dt·R_L, R_ξ/ξ0)` with respect to
    /// `(L_p, ξ)`.
    fn jacobian(&self, l_p: &Mat3, xi: &SlipVector, e: &LocalEval) -> DMatrix<f64> {
        let law = self.law;
        let p = &law.params;
        let ns = SLIP_SYSTEMS;
        let dt = self.dt;
        let xi_scale = 1.0 / p.xi0;
        let _ = l_p;

        // dτ/dL_p by directional derivatives of the elastic chain
        let c_e = e.f_e.transpose() * e.f_e;
        let mut dtau_dl = DMatrix::zeros(ns, 9);
        for k in 0..9 {
            let df_e = -(self.a * unit(k)) * dt;
            let dc_e = df_e.transpose() * e.f_e + e.f_e.transpose() * df_e;
            let ds = law.stiffness.apply(&Voigt6::strain_from_tensor(&(0.5 * dc_e))).to_tensor();
            let dm = dc_e * e.s + c_e * ds;
            for a in 0..ns {
                dtau_dl[(a, k)] = resolved_shear(&dm, &law.systems, a);
            }
        }
        let dg_dtau = SlipVector::from_fn(|a, _| {
            let x = (e.tau[a] / xi[a]).abs();
            p.gamma_dot0 * p.n * x.powf(p.n - 1.0) / xi[a]
        });
        let dg_dxi = SlipVector::from_fn(|a, _| -p.n * e.gamma_dot[a] / xi[a]);

        let h = &law.systems.interaction;
        let scale = p.h0 * (1.0 + p.h_int);
        // ∂ξ̇^α/∂γ̇^β and the explicit ∂ξ̇^α/∂ξ^β
        let dxidot_dg = DMatrix::from_fn(ns, ns, |a, b| {
            scale * h[(a, b)] * e.gamma_dot[b].signum() * (e.gamma_dot[b] != 0.0) as u8 as f64 * saturation_term(xi[b], p)
        });
        let dxidot_dxi_explicit = DMatrix::from_fn(ns, ns, |a, b| {
            scale * h[(a, b)] * e.gamma_dot[b].abs() * saturation_term_derivative(xi[b], p)
        });

        let schmid: Vec<Mat3> = (0..ns).map(|a| law.systems.schmid(a)).collect();
        let dgamma_dl = DMatrix::from_fn(ns, 9, |a, k| dg_dtau[a] * dtau_dl[(a, k)]);

        let mut j = DMatrix::zeros(9 + ns, 9 + ns);
        // R_L block
        for k in 0..9 {
            j[(k, k)] += dt;
        }
        for (a, m) in schmid.iter().enumerate() {
            for r in 0..9 {
                let mr = m[r];
                if mr == 0.0 {
                    continue;
                }
                for k in 0..9 {
                    j[(r, k)] -= dt * mr * dgamma_dl[(a, k)];
                }
                j[(r, 9 + a)] -= dt * mr * dg_dxi[a];
            }
        }
        // R_ξ block
        let dxi_dl = &dxidot_dg * &dgamma_dl;
        for a in 0..ns {
            for k in 0..9 {
                j[(9 + a, k)] = -dt * dxi_dl[(a, k)] * xi_scale;
            }
            for b in 0..ns {
                let total = dxidot_dxi_explicit[(a, b)] + dxidot_dg[(a, b)] * dg_dxi[b];
                j[(9 + a, 9 + b)] = (if a == b { 1.0 } else { 0.0 } - dt * total) * xi_scale;
            }
        }
        j
    }

    fn scaled_residual(&self, e: &LocalEval) -> DVector<f64> {
        let mut r = DVector::zeros(9 + SLIP_SYSTEMS);
        for k in 0..9 {
            r[k] = e.r_l[k] * self.dt;
        }
        for a in 0..SLIP_SYSTEMS {
            r[9 + a] = e.r_xi[a] / self.law.params.xi0;
        }
        r
    }

    fn solve(&self, l_start: Mat3) -> Option<LocalSolution> {
        let mut l_p = l_start;
        let mut xi = self.xi_old;
        let mut e = self.eval(&l_p, &xi);
        let mut merit = self.merit(&e);
        if !merit.is_finite() {
            return None;
        }
        for _ in 0..LOCAL_MAX_ITER {
            if merit.sqrt() <= LOCAL_TOL {
                return Some(LocalSolution {
                    l_p,
                    xi,
                    gamma_dot: e.gamma_dot,
                });
            }
            let j = self.jacobian(&l_p, &xi, &e);
            let step = j.lu().solve(&(-self.scaled_residual(&e)))?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let l_try = l_p + Mat3::from_column_slice(&step.as_slice()[..9]) * lambda;
                let xi_try = xi + SlipVector::from_column_slice(&step.as_slice()[9..]) * lambda;
                if xi_try.iter().all(|v| *v > 0.0) {
                    let e_try = self.eval(&l_try, &xi_try);
                    let m_try = self.merit(&e_try);
                    if m_try.is_finite() && m_try < (1.0 - 1e-4 * lambda) * merit {
                        l_p = l_try;
                        xi = xi_try;
                        e = e_try;
                        merit = m_try;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                // stagnation at round-off level still counts as converged
                return (merit.sqrt() <= 1e3 * LOCAL_TOL).then_some(LocalSolution {
                    l_p,
                    xi,
                    gamma_dot: e.gamma_dot,
                });
            }
        }
        (merit.sqrt() <= LOCAL_TOL).then_some(LocalSolution {
            l_p,
            xi,
            gamma_dot: e.gamma_dot,
        })
    }
}

fn cp_step(law: &PhenoPlasticity, state: &NodeMaterialState, f_new: &Mat3, dt: f64) -> Option<NodeMaterialState> {
    let fp_inv = invert(&state.f_p).ok()?;
    let problem = LocalProblem {
        law,
        a: f_new * fp_inv,
        xi_old: SlipVector::from_column_slice(&state.xi),
        dt,
    };
    let sol = problem
        .solve(state.l_p)
        .or_else(|| (state.l_p != Mat3::zeros()).then(|| problem.solve(Mat3::zeros())).flatten())?;
    let mut f_p = if sol.l_p == Mat3::zeros() {
        state.f_p
    } else {
        (Mat3::identity() - sol.l_p * dt).try_inverse()? * state.f_p
    };
    if sol.l_p != Mat3::zeros() {
        let det = f_p.determinant();
        if !(det > 0.0) {
            return None;
        }
        f_p *= det.powf(-1.0 / 3.0);
    }
    Some(NodeMaterialState {
        f: *f_new,
        f_p,
        xi: sol.xi.iter().copied().collect(),
        accumulated_shear: state.accumulated_shear + dt * sol.gamma_dot.abs().sum(),
        l_p: sol.l_p,
    })
}

fn cp_integrate(law: &PhenoPlasticity, state: &NodeMaterialState, f_new: &Mat3, dt: f64) -> Result<NodeMaterialState> {
    let mut budget = MAX_LOCAL_SOLVES;
    cp_substep(law, state, f_new, dt, 0, &mut budget)
}

fn cp_substep(
    law: &PhenoPlasticity,
    state: &NodeMaterialState,
    f_new: &Mat3,
    dt: f64,
    depth: usize,
    budget: &mut usize,
) -> Result<NodeMaterialState> {
    if *budget == 0 {
        return Err(Error::MaterialPointDivergence(format!(
            "local Newton exhausted {MAX_LOCAL_SOLVES} substep attempts"
        )));
    }
    *budget -= 1;
    if let Some(s) = cp_step(law, state, f_new, dt) {
        return Ok(s);
    }
    if depth >= MAX_SUBSTEP_DEPTH {
        return Err(Error::MaterialPointDivergence(format!(
            "local Newton failed after {depth} substep halvings"
        )));
    }
    let f_mid = (state.f + f_new) * 0.5;
    let half = cp_substep(law, state, &f_mid, 0.5 * dt, depth + 1, budget)?;
    cp_substep(law, &half, f_new, 0.5 * dt, depth + 1, budget)
}

fn cp_stress(law: &PhenoPlasticity, state: &NodeMaterialState) -> Result<Mat3> {
    let fp_inv = invert(&state.f_p)?;
    let f_e = state.f * fp_inv;
    Ok(f_e * hooke_second_pk(&f_e, &law.stiffness) * fp_inv.transpose())
}

/// Advances one node from `state` to `F_new` over `dt` and returns the new
/// state, first Piola stress and tangent.
pub fn integrate_node(state: &NodeMaterialState, f_new: &Mat3, dt: f64, law: &MaterialLaw) -> Result<NodeResponse> {
    let det = f_new.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NonInvertibleDeformation(det));
    }
    match law {
        MaterialLaw::Elastic(e) => {
            let p = elastic_stress(e, f_new, &state.f_p)?;
            let dpdf = elastic_tangent(e, f_new, &state.f_p)?;
            let mut next = state.clone();
            next.f = *f_new;
            Ok(NodeResponse { state: next, p, dpdf })
        }
        MaterialLaw::Pheno(cp) => {
            if !(dt > 0.0) {
                return Err(Error::InvalidInput(format!("time increment {dt} must be positive")));
            }
            let next = cp_integrate(cp, state, f_new, dt)?;
            let p = cp_stress(cp, &next)?;
            let h = 1e-7 * f_new.norm();
            let mut warm = state.clone();
            warm.l_p = next.l_p;
            let mut dpdf = Mat9::zeros();
            for k in 0..9 {
                let f_pert = f_new + unit(k) * h;
                let s = cp_integrate(cp, &warm, &f_pert, dt)?;
                let dp = (cp_stress(cp, &s)? - p) / h;
                dpdf.set_column(k, &vec9(&dp));
            }
            Ok(NodeResponse { state: next, p, dpdf })
        }
    }
}
