//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on failure.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DVector, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use odmn::homogenizer::{h2, homogenize, laminate_oracle, PhaseAssignment, PhaseMode};
use odmn::io;
use odmn::material::{
    fcc_slip_systems, integrate_node, shear_rate, MaterialLaw, NodeMaterialState, PhenoPlasticityParams,
};
use odmn::network::{direction_vector, ParameterSet, Topology};
use odmn::solver::{
    ddot, downscale, init_state, newton_solve, rate_path, residual, run_path, upscale_stress, LoadStep,
    MaterialAssignment, SolverConfig,
};
use odmn::tensor::{
    mat_fourth_order, rotate_stiffness, rotation_matrix_from_angles, tensor_rotate_oracle, unmat_fourth_order, Mat3,
    RotationAngles, StiffnessMatrix, Tensor4,
};
use odmn::texture::{
    interpolate_orientations, odf_estimate, orientations_from_params, texture_index_diff, DEFAULT_HALFWIDTH,
};
use odmn::trainer::{
    encode_phase1_fraction, gradcheck, sample_cubic_stiffness, synthesize_teacher_dataset, train, StiffnessRanges,
    TrainConfig,
};

// Pinned tolerances.
const LAMINATE_TOL: f64 = 1e-10;
const LAMINATE_TIME: Duration = Duration::from_secs(5);
const ROTATION_TOL: f64 = 1e-10;
const CUBIC_INVARIANCE_TOL: f64 = 1e-12;
const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_TIME: Duration = Duration::from_secs(60);
const TRAIN_VAL_TOL: f64 = 0.02;
const TRAIN_TIME: Duration = Duration::from_secs(600);
const FRACTION_TARGET: f64 = 0.3245;
const FRACTION_TOL: f64 = 0.01;
const CONSISTENCY_TOL: f64 = 1e-3;
const CONSISTENCY_TIME: Duration = Duration::from_secs(30);
const AVERAGE_F_TOL: f64 = 1e-12;
const WORK_TOL: f64 = 1e-8;
const CP_MAX_ITERATIONS: usize = 50;
const CP_MAX_BISECTIONS: usize = 2;
const DET_FP_DRIFT_TOL: f64 = 1e-6;

const TEACHER_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_angles(rng: &mut impl Rng) -> RotationAngles {
    RotationAngles::new(rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI))
}

fn rel(a: &Matrix6<f64>, b: &Matrix6<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn teacher_dataset(depth: usize, n: usize, fraction: Option<f64>) -> (Topology, ParameterSet, odmn::trainer::Dataset) {
    let topo = Topology::build(depth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(TEACHER_SEED);
    let mut teacher = ParameterSet::random(&topo, &mut rng);
    if let Some(f) = fraction {
        encode_phase1_fraction(&mut teacher, f).unwrap();
    }
    let data = synthesize_teacher_dataset(&teacher, &topo, n, PhaseMode::TwoPhase, &mut rng).unwrap();
    (topo, teacher, data)
}

fn train_config() -> TrainConfig {
    TrainConfig {
        seed: TEACHER_SEED + 1,
        ..TrainConfig::default()
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn c1_laminate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ranges = StiffnessRanges::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c0 = rotate_stiffness(&sample_cubic_stiffness(&mut rng, &ranges).unwrap(), &random_angles(&mut rng));
        let c1 = rotate_stiffness(&sample_cubic_stiffness(&mut rng, &ranges).unwrap(), &random_angles(&mut rng));
        let n = direction_vector(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let f0: f64 = rng.gen_range(0.05..0.95);
        let a = h2(&c0, &c1, f0, 1.0 - f0, &n).unwrap();
        let b = laminate_oracle(&c0, &c1, f0, &n).unwrap();
        worst = worst.max(rel(&a.0, &b.0));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < LAMINATE_TOL && elapsed < LAMINATE_TIME,
        format!("max rel error {worst:.3e} (< {LAMINATE_TOL:e}), {elapsed:.2?} (< {LAMINATE_TIME:?})"),
    )
}

fn c2_rotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let c = StiffnessMatrix::new(a * a.transpose() + Matrix6::identity() * 6.0);
        let angles = random_angles(&mut rng);
        let fast = rotate_stiffness(&c, &angles);
        let oracle = tensor_rotate_oracle(&c, &rotation_matrix_from_angles(&angles)).unwrap();
        worst = worst.max(rel(&fast.0, &oracle.0));
    }
    let cubic = StiffnessMatrix::cubic(191e3, 162e3, 42.2e3);
    let invariance = [
        RotationAngles::new(FRAC_PI_2, 0.0, 0.0),
        RotationAngles::new(0.0, FRAC_PI_2, 0.0),
        RotationAngles::new(0.0, 0.0, FRAC_PI_2),
    ]
    .iter()
    .map(|a| rel(&rotate_stiffness(&cubic, a).0, &cubic.0))
    .fold(0.0, f64::max);
    outcome(
        worst < ROTATION_TOL && invariance < CUBIC_INVARIANCE_TOL,
        format!(
            "max rel error {worst:.3e} (< {ROTATION_TOL:e}), cubic 90° invariance {invariance:.3e} (< {CUBIC_INVARIANCE_TOL:e})"
        ),
    )
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for depth in [2, 3, 4] {
        let (topo, _, data) = teacher_dataset(depth, 5, None);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + depth as u64);
        for _ in 0..10 {
            let params = ParameterSet::random(&topo, &mut rng);
            worst = worst.max(gradcheck(&params, &data.samples, &topo).unwrap().max_relative_error);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRADCHECK_TOL && elapsed < GRADCHECK_TIME,
        format!("max rel error {worst:.3e} (< {GRADCHECK_TOL:e}), {elapsed:.2?} (< {GRADCHECK_TIME:?})"),
    )
}

fn c4_training() -> Outcome {
    let (topo, _, data) = teacher_dataset(4, 500, None);
    let start = Instant::now();
    let out = single_threaded(|| train(&data, &topo, &train_config()).unwrap());
    let elapsed = start.elapsed();
    let last = out.curves.last().unwrap();
    let split_ok = out.train_indices.len() == 400 && out.validation_indices.len() == 100;
    outcome(
        last.val_error < TRAIN_VAL_TOL && elapsed < TRAIN_TIME && split_ok && last.epoch == 200,
        format!(
            "validation error {:.5} (< {TRAIN_VAL_TOL}), split {}/{}, {elapsed:.1?} single-threaded (< {TRAIN_TIME:?})",
            last.val_error,
            out.train_indices.len(),
            out.validation_indices.len()
        ),
    )
}

fn c5_fraction() -> Outcome {
    let (topo, teacher, data) = teacher_dataset(4, 500, Some(FRACTION_TARGET));
    let out = train(&data, &topo, &train_config()).unwrap();
    let recovered = out.params.phase1_fraction();
    outcome(
        (recovered - FRACTION_TARGET).abs() <= FRACTION_TOL,
        format!(
            "teacher {:.4}, recovered {recovered:.4} (target {FRACTION_TARGET} ± {FRACTION_TOL})",
            teacher.phase1_fraction()
        ),
    )
}

fn c6_consistency() -> Outcome {
    let start = Instant::now();
    let (topo, _, data) = teacher_dataset(5, 60, None);
    let config = TrainConfig {
        epochs: 3,
        ..train_config()
    };
    let params = train(&data, &topo, &config).unwrap().params;
    // phase stiffnesses in GPa offline, MPa online
    let c1 = StiffnessMatrix::cubic(191.0, 162.0, 42.2);
    let c2 = StiffnessMatrix::cubic(60.0, 20.0, 15.0);
    let offline = homogenize(&params, &topo, &PhaseAssignment::two_phase(c1, c2)).unwrap().scaled(1e3);
    let materials = MaterialAssignment::two_phase(MaterialLaw::elastic(c1.scaled(1e3)), MaterialLaw::elastic(c2.scaled(1e3)));
    let (net, state) = init_state(&params, &topo, materials).unwrap();
    let step = LoadStep {
        f_bar: Mat3::identity(),
        dt: 1.0,
    };
    let (_, resp) = newton_solve(&net, &state, &step, &SolverConfig::default()).unwrap();
    let online = unmat_fourth_order(&resp.tangent).to_stiffness();
    let err = rel(&online.0, &offline.0);
    let full = mat_fourth_order(&Tensor4::from_stiffness(&offline));
    let err9 = (resp.tangent - full).norm() / full.norm();
    let elapsed = start.elapsed();
    outcome(
        err < CONSISTENCY_TOL && elapsed < CONSISTENCY_TIME,
        format!(
            "N=5 rel error {err:.3e} (9×9 form {err9:.3e}; < {CONSISTENCY_TOL:e}), {elapsed:.2?} (< {CONSISTENCY_TIME:?})"
        ),
    )
}

fn elastic_network(depth: usize, seed: u64) -> (odmn::solver::OnlineNetwork, odmn::solver::SolverState) {
    let topo = Topology::build(depth).unwrap();
    let params = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(seed));
    init_state(
        &params,
        &topo,
        MaterialAssignment::two_phase(
            MaterialLaw::elastic(StiffnessMatrix::cubic(191e3, 162e3, 42.2e3)),
            MaterialLaw::elastic(StiffnessMatrix::cubic(60e3, 20e3, 15e3)),
        ),
    )
    .unwrap()
}

fn c7_hill_mandel() -> Outcome {
    let (net, state) = elastic_network(4, 707);
    let config = SolverConfig::default();
    let f_bar = Mat3::new(1.012, 0.004, -0.002, 0.001, 0.993, 0.003, 0.002, -0.001, 1.004);
    let (conv, resp) = newton_solve(&net, &state, &LoadStep { f_bar, dt: 1.0 }, &config).unwrap();
    let f = downscale(&f_bar, &conv.a, &net.coefficients, &net.directions);
    let avg_err = (upscale_stress(&f, &net.weights) - f_bar).abs().max();
    let p: Vec<Mat3> = resp.nodes.iter().map(|n| n.p).collect();
    let r = residual(&p, &net.weights, &net.coefficients, &net.directions);
    let tol_abs = config.tol_abs_factor * net.reference_stress();
    let r0 = {
        let zero = DVector::zeros(net.unknowns());
        let f0 = downscale(&f_bar, &zero, &net.coefficients, &net.directions);
        let p0: Vec<Mat3> = f0
            .iter()
            .enumerate()
            .map(|(i, fi)| integrate_node(&state.nodes[i], fi, 1.0, net.materials.law(i)).unwrap().p)
            .collect();
        residual(&p0, &net.weights, &net.coefficients, &net.directions).norm()
    };
    let residual_ok = r.norm() < tol_abs || r.norm() < config.tol_rel * r0;

    // admissible variation: perturb F̄ at the converged A, then re-solve
    let d = Mat3::new(2e-5, -1e-5, 3e-6, 4e-6, -1.5e-5, 2e-6, -3e-6, 5e-6, 1e-5);
    let (_, pert) = newton_solve(&net, &state, &LoadStep { f_bar: f_bar + d, dt: 1.0 }, &config).unwrap();
    let total: f64 = net.weights.iter().sum();
    let micro = (0..net.node_count())
        .map(|i| net.weights[i] * ddot(&resp.nodes[i].p, &(pert.nodes[i].f - resp.nodes[i].f)))
        .sum::<f64>()
        / total;
    let macro_work = ddot(&resp.p_bar, &d);
    let work_err = (micro - macro_work).abs() / macro_work.abs();
    outcome(
        avg_err < AVERAGE_F_TOL && residual_ok && work_err < WORK_TOL,
        format!(
            "|<F> − F̄| {avg_err:.2e} (< {AVERAGE_F_TOL:e}), residual {:.2e} (tol {tol_abs:.1e} abs / {:.1e}·r0), work mismatch {work_err:.2e} (< {WORK_TOL:e})",
            r.norm(),
            config.tol_rel
        ),
    )
}

fn c8_newton() -> Outcome {
    let topo = Topology::build(4).unwrap();
    let params = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(808));
    let small = MaterialAssignment::two_phase(
        MaterialLaw::small_strain(StiffnessMatrix::cubic(191e3, 162e3, 42.2e3)),
        MaterialLaw::small_strain(StiffnessMatrix::cubic(60e3, 20e3, 15e3)),
    );
    let (net, state) = init_state(&params, &topo, small).unwrap();
    let step = LoadStep {
        f_bar: Mat3::new(1.003, 0.001, 0.0, 0.0005, 0.998, 0.0, 0.0, 0.001, 1.001),
        dt: 1.0,
    };
    let (_, elastic) = newton_solve(&net, &state, &step, &SolverConfig::default()).unwrap();

    let cp = MaterialAssignment::single(MaterialLaw::pheno(PhenoPlasticityParams::aa6022_t4()).unwrap());
    let (net, state) = init_state(&params, &topo, cp).unwrap();
    let path = rate_path((0, 0), 1.0, 1.01, 1).unwrap();
    let (_, hist) = run_path(&net, &state, &path, &SolverConfig::default()).map_err(|(e, _)| e).unwrap();
    let h = &hist[0];
    let cp_ok = (h.bisections == 0 && h.iterations <= CP_MAX_ITERATIONS) || h.bisections <= CP_MAX_BISECTIONS;
    outcome(
        elastic.iterations == 1 && elastic.bisections == 0 && cp_ok,
        format!(
            "elastic iterations {} (= 1), crystal plasticity 1% step: {} iterations, {} bisections (≤ {CP_MAX_ITERATIONS} or ≤ {CP_MAX_BISECTIONS} bisections)",
            elastic.iterations, h.iterations, h.bisections
        ),
    )
}

/// FCC {111}<110> systems enumerated from scratch.
fn brute_force_schmid_max(load: &Vector3<f64>) -> f64 {
    let mut best = 0.0f64;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let n = Vector3::new(sx, sy, 1.0) / 3f64.sqrt();
            for i in 0..3 {
                for j in 0..3 {
                    for s in [-1.0, 1.0] {
                        if i == j {
                            continue;
                        }
                        let mut b = Vector3::zeros();
                        b[i] = 1.0;
                        b[j] = s;
                        if b.dot(&n).abs() > 1e-12 {
                            continue;
                        }
                        let b = b / 2f64.sqrt();
                        best = best.max((load.dot(&n) * load.dot(&b)).abs());
                    }
                }
            }
        }
    }
    best
}

fn c9_crystal_plasticity() -> Outcome {
    let p = PhenoPlasticityParams::aa6022_t4();
    let flow_ok = shear_rate(p.xi0, p.xi0, &p) == p.gamma_dot0 && shear_rate(150.0, 150.0, &p) == p.gamma_dot0;

    let x = Vector3::x();
    let brute = brute_force_schmid_max(&x);
    let systems = fcc_slip_systems();
    let lib = (0..systems.len())
        .map(|a| (x.transpose() * systems.schmid(a) * x)[0].abs())
        .fold(0.0, f64::max);
    let schmid_target = 1.0 / 6f64.sqrt();
    let schmid_ok = (brute - schmid_target).abs() < 1e-14 && (lib - schmid_target).abs() < 1e-14;

    let law = MaterialLaw::pheno(p).unwrap();
    let r = rotation_matrix_from_angles(&RotationAngles::new(0.4, 1.1, -0.7));
    let mut state = NodeMaterialState::initial(&r, &law);
    let mut drift = 0.0f64;
    let mut det_prev = state.f_p.determinant();
    for k in 1..=20 {
        let e = 0.0025 * k as f64;
        let f = Mat3::new(1.0 + e, 0.3 * e, 0.0, 0.0, 1.0 - 0.4 * e, 0.0, 0.0, 0.1 * e, 1.0 - 0.4 * e);
        state = integrate_node(&state, &f, 0.0025, &law).unwrap().state;
        let det = state.f_p.determinant();
        drift = drift.max((det - det_prev).abs());
        det_prev = det;
    }

    let topo = Topology::build(2).unwrap();
    let params = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(909));
    let (net, init) = init_state(&params, &topo, MaterialAssignment::single(law)).unwrap();
    let run = |rate: f64| {
        let path = rate_path((0, 0), rate, 1.02, 10).unwrap();
        run_path(&net, &init, &path, &SolverConfig::default()).map_err(|(e, _)| e).unwrap().1
    };
    let fast = run(1.0);
    let slow = run(1e-4);
    let margin = fast
        .iter()
        .zip(&slow)
        .map(|(a, b)| a.p_bar[(0, 0)] - b.p_bar[(0, 0)])
        .fold(f64::INFINITY, f64::min);
    outcome(
        flow_ok && schmid_ok && drift < DET_FP_DRIFT_TOL && margin >= 0.0,
        format!(
            "τ=ξ flow {flow_ok}, max Schmid {brute:.15} (library {lib:.15}, 1/√6), det F_p drift {drift:.2e}/step (< {DET_FP_DRIFT_TOL:e}), min P11(1/s) − P11(1e-4/s) = {margin:.2} MPa (≥ 0)"
        ),
    )
}

fn c10_texture() -> Outcome {
    let topo = Topology::build(4).unwrap();
    let teacher = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(TEACHER_SEED));
    let student = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(1010));
    let t_cloud = orientations_from_params(&teacher);
    let s_cloud = orientations_from_params(&student);
    let ft = odf_estimate(&t_cloud, DEFAULT_HALFWIDTH).unwrap();
    let self_index = texture_index_diff(&ft, &ft).unwrap();
    let zero_index = texture_index_diff(&ft.zeroed(), &ft).unwrap();
    let values: Vec<f64> = (0..5)
        .map(|k| {
            let mid = interpolate_orientations(&s_cloud, &t_cloud, k as f64 / 4.0).unwrap();
            texture_index_diff(&odf_estimate(&mid, DEFAULT_HALFWIDTH).unwrap(), &ft).unwrap()
        })
        .collect();
    let monotone = values.windows(2).all(|w| w[1] < w[0]);
    outcome(
        self_index == 0.0 && zero_index == 1.0 && monotone,
        format!(
            "T(f,f) = {self_index}, T(0,f) = {zero_index}, along geodesic: {}",
            values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

fn c11_determinism() -> Outcome {
    let dataset = || {
        let (_, _, d) = teacher_dataset(3, 50, None);
        io::dataset_to_string(&d).unwrap()
    };
    let same_data = dataset() == dataset();

    let checkpoint = || {
        let (topo, _, d) = teacher_dataset(3, 50, None);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 10,
            ..train_config()
        };
        let out = train(&d, &topo, &config).unwrap();
        let ckpt = io::Checkpoint {
            params: out.params,
            provenance: io::Provenance {
                seed: config.seed,
                dataset_sha256: io::sha256_hex(io::dataset_to_string(&d).unwrap().as_bytes()),
                epochs: config.epochs,
            },
        };
        (io::checkpoint_to_string(&ckpt).unwrap(), io::curves_csv(&out.curves).unwrap())
    };
    let same_ckpt = checkpoint() == checkpoint();

    let history = || {
        let topo = Topology::build(2).unwrap();
        let params = ParameterSet::random(&topo, &mut ChaCha8Rng::seed_from_u64(1111));
        let law = MaterialLaw::pheno(PhenoPlasticityParams::aa6022_t4()).unwrap();
        let (net, state) = init_state(&params, &topo, MaterialAssignment::single(law)).unwrap();
        let path = rate_path((0, 0), 1.0, 1.01, 4).unwrap();
        let (_, h) = run_path(&net, &state, &path, &SolverConfig::default()).map_err(|(e, _)| e).unwrap();
        io::history_csv(&h).unwrap()
    };
    let same_history = history() == history();
    outcome(
        same_data && same_ckpt && same_history,
        format!("dataset {same_data}, checkpoint+curves {same_ckpt}, history CSV {same_history} (byte-identical)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("laminate oracle equivalence", c1_laminate),
        ("rotation equivalence", c2_rotation),
        ("gradient correctness", c3_gradients),
        ("teacher-student training", c4_training),
        ("volume-fraction recovery", c5_fraction),
        ("offline/online consistency", c6_consistency),
        ("Hill-Mandel at convergence", c7_hill_mandel),
        ("elastic Newton convergence", c8_newton),
        ("crystal-plasticity properties", c9_crystal_plasticity),
        ("texture metrics", c10_texture),
        ("determinism", c11_determinism),
    ];
    let filter: Option<usize> = std::env::var("ODMN_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let number = k + 1;
        if filter.is_some_and(|f| f != number) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failures += 1;
        }
        println!(
            "criterion {number:>2} {}  {name}: {} [{:.1?}]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed()
        );
    }
    if failures > 0 {
        println!("acceptance: {failures} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
