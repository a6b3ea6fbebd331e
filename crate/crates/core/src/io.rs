//! File formats: JSONL datasets, JSON checkpoints, material and load-path
//! files, and CSV outputs. Every structured format carries a version.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::material::{ElasticKind, ElasticLaw, MaterialLaw, PhenoPlasticityParams};
use crate::network::{ParameterSet, Topology};
use crate::solver::{rate_path, LoadStep, MacroResponse, MaterialAssignment};
use crate::tensor::{Mat3, StiffnessMatrix};
use crate::texture::{quaternion, OdfGrid, OrientationSample, PoleFigureData};
use crate::trainer::{Dataset, EpochRecord, Sample};

pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MATERIAL_VERSION: u32 = 1;
pub const LOAD_PATH_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "odmn-checkpoint";

fn check_version(kind: &'static str, found: u32, expected: u32) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion { kind, found, expected })
    }
}

/// Phase stiffness as cubic constants or a full row-major 6×6 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseRecord {
    Cubic { c11: f64, c12: f64, c44: f64 },
    Full { stiffness: StiffnessMatrix },
}

impl PhaseRecord {
    pub fn from_stiffness(c: &StiffnessMatrix) -> Self {
        let m = c.matrix();
        let cubic = StiffnessMatrix::cubic(m[(0, 0)], m[(0, 1)], m[(3, 3)]);
        if cubic == *c {
            PhaseRecord::Cubic {
                c11: m[(0, 0)],
                c12: m[(0, 1)],
                c44: m[(3, 3)],
            }
        } else {
            PhaseRecord::Full { stiffness: *c }
        }
    }

    pub fn stiffness(&self) -> StiffnessMatrix {
        match self {
            PhaseRecord::Cubic { c11, c12, c44 } => StiffnessMatrix::cubic(*c11, *c12, *c44),
            PhaseRecord::Full { stiffness } => *stiffness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetRecord {
    version: u32,
    units: String,
    provenance: String,
    phase1: PhaseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase2: Option<PhaseRecord>,
    /// Row-major 6×6.
    target: Vec<f64>,
}

pub fn dataset_to_string(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for s in &dataset.samples {
        let rec = DatasetRecord {
            version: DATASET_VERSION,
            units: "GPa".into(),
            provenance: dataset.provenance.clone(),
            phase1: PhaseRecord::from_stiffness(&s.phase1),
            phase2: s.phase2.as_ref().map(PhaseRecord::from_stiffness),
            target: s.target.row_major(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSONL dataset; errors name the 1-based line.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut provenance = String::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        check_version("dataset", rec.version, DATASET_VERSION)?;
        if rec.units != "GPa" {
            return Err(parse_err(format!("unsupported units {:?}", rec.units)));
        }
        let target = StiffnessMatrix::from_row_major(&rec.target).map_err(|e| parse_err(e.to_string()))?;
        if target.asymmetry() > 1e-9 * target.norm().max(f64::MIN_POSITIVE) {
            return Err(parse_err("target is not symmetric".into()));
        }
        if samples.is_empty() {
            provenance = rec.provenance.clone();
        }
        samples.push(Sample {
            phase1: rec.phase1.stiffness(),
            phase2: rec.phase2.as_ref().map(PhaseRecord::stiffness),
            target,
        });
    }
    Ok(Dataset { samples, provenance })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_string(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_sha256: String,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    depth: usize,
    z: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    theta: Vec<f64>,
    phi: Vec<f64>,
    provenance: Provenance,
}

impl Checkpoint {
    pub fn depth(&self) -> Result<usize> {
        self.params
            .depth()
            .ok_or_else(|| Error::InvalidInput("parameter arrays do not match any depth".into()))
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::build(self.depth()?)
    }
}

pub fn checkpoint_to_string(ckpt: &Checkpoint) -> Result<String> {
    let topo = ckpt.topology()?;
    ckpt.params.validate(&topo)?;
    let p = &ckpt.params;
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        depth: topo.depth(),
        z: p.z.clone(),
        alpha: p.alpha.clone(),
        beta: p.beta.clone(),
        gamma: p.gamma.clone(),
        theta: p.theta.clone(),
        phi: p.phi.clone(),
        provenance: ckpt.provenance.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidInput(format!("unknown checkpoint format {:?}", doc.format)));
    }
    check_version("checkpoint", doc.version, CHECKPOINT_VERSION)?;
    let topo = Topology::build(doc.depth)?;
    let params = ParameterSet {
        z: doc.z,
        alpha: doc.alpha,
        beta: doc.beta,
        gamma: doc.gamma,
        theta: doc.theta,
        phi: doc.phi,
    };
    params.validate(&topo)?;
    Ok(Checkpoint {
        params,
        provenance: doc.provenance,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint_to_string(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

/// Local law of one phase in an online material file; stresses in MPa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterialSpec {
    Elastic {
        c11: f64,
        c12: f64,
        c44: f64,
        #[serde(default)]
        formulation: ElasticKind,
    },
    PhenoPlasticity(PhenoPlasticityParams),
    /// Named parameter set: `aa6022_t4` or `two_phase_soft`.
    Preset { name: String },
}

impl MaterialSpec {
    pub fn to_law(&self) -> Result<MaterialLaw> {
        match self {
            MaterialSpec::Elastic {
                c11,
                c12,
                c44,
                formulation,
            } => {
                let stiffness = StiffnessMatrix::cubic(*c11, *c12, *c44);
                if !stiffness.is_positive_definite() {
                    return Err(Error::InvalidInput("elastic stiffness is not positive definite".into()));
                }
                Ok(MaterialLaw::Elastic(ElasticLaw {
                    stiffness,
                    kind: *formulation,
                }))
            }
            MaterialSpec::PhenoPlasticity(p) => MaterialLaw::pheno(p.clone()),
            MaterialSpec::Preset { name } => match name.as_str() {
                "aa6022_t4" => MaterialLaw::pheno(PhenoPlasticityParams::aa6022_t4()),
                "two_phase_soft" => MaterialLaw::pheno(PhenoPlasticityParams::two_phase_soft()),
                other => Err(Error::InvalidInput(format!("unknown material preset {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialFile {
    pub version: u32,
    pub units: String,
    pub phase1: MaterialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase2: Option<MaterialSpec>,
}

impl MaterialFile {
    pub fn new(phase1: MaterialSpec, phase2: Option<MaterialSpec>) -> Self {
        Self {
            version: MATERIAL_VERSION,
            units: "MPa".into(),
            phase1,
            phase2,
        }
    }

    pub fn assignment(&self) -> Result<MaterialAssignment> {
        Ok(MaterialAssignment {
            phase1: self.phase1.to_law()?,
            phase2: self.phase2.as_ref().map(MaterialSpec::to_law).transpose()?,
        })
    }
}

pub fn parse_material(text: &str) -> Result<MaterialFile> {
    let file: MaterialFile = serde_json::from_str(text)?;
    check_version("material", file.version, MATERIAL_VERSION)?;
    if file.units != "MPa" {
        return Err(Error::InvalidInput(format!("material units must be MPa, found {:?}", file.units)));
    }
    Ok(file)
}

pub fn read_material(path: &Path) -> Result<MaterialFile> {
    parse_material(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Row-major `F̄`.
    pub f: [[f64; 3]; 3],
    pub dt: f64,
}

/// Constant-rate ramp of one `F̄` component, e.g. `"F11"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub component: String,
    pub rate: f64,
    pub final_value: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPathFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateRecord>,
}

fn parse_component(name: &str) -> Result<(usize, usize)> {
    let b = name.as_bytes();
    if b.len() == 3 && (b[0] == b'F' || b[0] == b'f') && (b'1'..=b'3').contains(&b[1]) && (b'1'..=b'3').contains(&b[2]) {
        Ok(((b[1] - b'1') as usize, (b[2] - b'1') as usize))
    } else {
        Err(Error::InvalidInput(format!("unknown component {name:?}; expected F11..F33")))
    }
}

impl LoadPathFile {
    /// Explicit steps followed by the rate ramp, if any.
    pub fn to_steps(&self) -> Result<Vec<LoadStep>> {
        let mut out: Vec<LoadStep> = self
            .steps
            .iter()
            .map(|s| LoadStep {
                f_bar: Mat3::from_fn(|i, j| s.f[i][j]),
                dt: s.dt,
            })
            .collect();
        if let Some(r) = &self.rate {
            out.extend(rate_path(parse_component(&r.component)?, r.rate, r.final_value, r.steps)?);
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("load path has no steps".into()));
        }
        for (k, s) in out.iter().enumerate() {
            let det = s.f_bar.determinant();
            if !(det > 0.0) {
                return Err(Error::InvalidInput(format!("step {}: det F = {det} is not positive", k + 1)));
            }
            if !(s.dt > 0.0) {
                return Err(Error::InvalidInput(format!("step {}: dt must be positive", k + 1)));
            }
        }
        Ok(out)
    }
}

pub fn parse_load_path(text: &str) -> Result<LoadPathFile> {
    let file: LoadPathFile = serde_json::from_str(text)?;
    check_version("load path", file.version, LOAD_PATH_VERSION)?;
    Ok(file)
}

pub fn read_load_path(path: &Path) -> Result<LoadPathFile> {
    parse_load_path(&fs::read_to_string(path)?)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn curves_csv(curves: &[EpochRecord]) -> Result<Vec<u8>> {
    csv_bytes(
        &["epoch", "train_error", "val_error"],
        curves
            .iter()
            .map(|c| vec![c.epoch.to_string(), c.train_error.to_string(), c.val_error.to_string()]),
    )
}

pub fn write_curves(path: &Path, curves: &[EpochRecord]) -> Result<()> {
    write_bytes(path, &curves_csv(curves)?)
}

pub const HISTORY_HEADER: [&str; 22] = [
    "step", "time", "F11", "F12", "F13", "F21", "F22", "F23", "F31", "F32", "F33", "P11", "P12", "P13", "P21", "P22",
    "P23", "P31", "P32", "P33", "residual_norm", "iterations",
];

fn row_major_strings(m: &Mat3) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |i| (0..3).map(move |j| m[(i, j)].to_string()))
}

pub fn history_csv(history: &[MacroResponse]) -> Result<Vec<u8>> {
    csv_bytes(
        &HISTORY_HEADER,
        history.iter().enumerate().map(|(k, h)| {
            let mut row = vec![(k + 1).to_string(), h.time.to_string()];
            row.extend(row_major_strings(&h.f_bar));
            row.extend(row_major_strings(&h.p_bar));
            row.push(h.residual_norm.to_string());
            row.push(h.iterations.to_string());
            row
        }),
    )
}

pub fn write_history(path: &Path, history: &[MacroResponse]) -> Result<()> {
    write_bytes(path, &history_csv(history)?)
}

/// Per-step node orientations; step 0 holds the reference orientations.
pub fn orientations_csv(steps: &[(usize, Vec<OrientationSample>)]) -> Result<Vec<u8>> {
    csv_bytes(
        &["step", "node", "q0", "q1", "q2", "q3", "weight"],
        steps.iter().flat_map(|(step, samples)| {
            samples.iter().enumerate().map(move |(i, s)| {
                vec![
                    step.to_string(),
                    i.to_string(),
                    s.q.w.to_string(),
                    s.q.i.to_string(),
                    s.q.j.to_string(),
                    s.q.k.to_string(),
                    s.weight.to_string(),
                ]
            })
        }),
    )
}

pub fn write_orientations(path: &Path, steps: &[(usize, Vec<OrientationSample>)]) -> Result<()> {
    write_bytes(path, &orientations_csv(steps)?)
}

#[derive(Debug, Deserialize)]
struct OrientationRow {
    step: usize,
    #[allow(dead_code)]
    node: usize,
    q0: f64,
    q1: f64,
    q2: f64,
    q3: f64,
    weight: f64,
}

/// Orientation samples of one step of an orientation dump; the last step
/// when `step` is `None`.
pub fn parse_orientations(text: &str, step: Option<usize>) -> Result<Vec<OrientationSample>> {
    let mut rows = Vec::new();
    for (k, r) in csv::Reader::from_reader(text.as_bytes()).deserialize::<OrientationRow>().enumerate() {
        rows.push(r.map_err(|e| Error::Parse {
            line: k + 2,
            message: e.to_string(),
        })?);
    }
    let target = match step {
        Some(s) => s,
        None => rows.iter().map(|r| r.step).max().ok_or_else(|| Error::InvalidInput("empty orientation file".into()))?,
    };
    let out: Vec<OrientationSample> = rows
        .iter()
        .filter(|r| r.step == target)
        .map(|r| OrientationSample {
            q: quaternion(r.q0, r.q1, r.q2, r.q3),
            weight: r.weight,
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no orientations for step {target}")));
    }
    Ok(out)
}

pub fn read_orientations(path: &Path, step: Option<usize>) -> Result<Vec<OrientationSample>> {
    parse_orientations(&fs::read_to_string(path)?, step)
}

pub fn pole_figure_csv(pf: &PoleFigureData) -> Result<Vec<u8>> {
    csv_bytes(
        &["x", "y", "intensity"],
        pf.points.iter().map(|p| vec![p.x.to_string(), p.y.to_string(), p.intensity.to_string()]),
    )
}

pub fn odf_csv(grid: &OdfGrid) -> Result<Vec<u8>> {
    csv_bytes(
        &["q0", "q1", "q2", "q3", "density", "quadrature_weight"],
        grid.orientations.iter().zip(&grid.density).zip(&grid.weights).map(|((q, f), w)| {
            vec![
                q.w.to_string(),
                q.i.to_string(),
                q.j.to_string(),
                q.k.to_string(),
                f.to_string(),
                w.to_string(),
            ]
        }),
    )
}

pub fn write_csv_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenizer::PhaseMode;
    use crate::trainer::{synthesize_teacher_dataset, TrainConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(mode: PhaseMode, seed: u64) -> Dataset {
        let topo = Topology::build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher = ParameterSet::random(&topo, &mut rng);
        synthesize_teacher_dataset(&teacher, &topo, 6, mode, &mut rng).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        for mode in [PhaseMode::Single, PhaseMode::TwoPhase] {
            let d = dataset(mode, 1);
            let text = dataset_to_string(&d).unwrap();
            assert_eq!(text.lines().count(), 6);
            let back = parse_dataset(&text).unwrap();
            assert_eq!(back, d);
            assert_eq!(dataset_to_string(&back).unwrap(), text);
        }
    }

    #[test]
    fn dataset_accepts_full_matrices() {
        let c = StiffnessMatrix::cubic(100.0, 50.0, 30.0).row_major();
        let line = serde_json::json!({
            "version": 1, "units": "GPa", "provenance": "x",
            "phase1": {"stiffness": c}, "target": c
        });
        let d = parse_dataset(&line.to_string()).unwrap();
        assert_eq!(d.samples[0].phase1, StiffnessMatrix::cubic(100.0, 50.0, 30.0));
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let d = dataset(PhaseMode::Single, 2);
        let mut text = dataset_to_string(&d).unwrap();
        text.push_str("{\"version\": 1, \"broken\n");
        match parse_dataset(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        let bad_version = dataset_to_string(&d).unwrap().replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(parse_dataset(&bad_version), Err(Error::UnsupportedVersion { found: 9, .. })));
        let mut asym = d.samples[0].target.row_major();
        asym[1] += 1.0;
        let line = serde_json::json!({
            "version": 1, "units": "GPa", "provenance": "x",
            "phase1": {"c11": 1.0, "c12": 0.5, "c44": 0.3}, "target": asym
        });
        assert!(matches!(parse_dataset(&line.to_string()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let topo = Topology::build(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ckpt = Checkpoint {
            params: ParameterSet::random(&topo, &mut rng),
            provenance: Provenance {
                seed: 3,
                dataset_sha256: sha256_hex(b"abc"),
                epochs: 200,
            },
        };
        let text = checkpoint_to_string(&ckpt).unwrap();
        let back = parse_checkpoint(&text).unwrap();
        for (a, b) in ckpt.params.as_flat().iter().zip(back.params.as_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, ckpt);
        assert_eq!(back.params.z.len(), 16);
        assert_eq!(back.params.theta.len(), 15);
        assert!(matches!(
            parse_checkpoint(&text.replace("\"version\": 1", "\"version\": 2")),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let _ = TrainConfig::default();
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn material_files() {
        let text = r#"{"version": 1, "units": "MPa",
            "phase1": {"kind": "preset", "name": "aa6022_t4"},
            "phase2": {"kind": "elastic", "c11": 100.0, "c12": 50.0, "c44": 30.0, "formulation": "small_strain"}}"#;
        let m = parse_material(text).unwrap().assignment().unwrap();
        assert!(matches!(m.phase1, MaterialLaw::Pheno(_)));
        assert!(matches!(
            m.phase2,
            Some(MaterialLaw::Elastic(ElasticLaw {
                kind: ElasticKind::SmallStrain,
                ..
            }))
        ));
        let full = MaterialFile::new(MaterialSpec::PhenoPlasticity(PhenoPlasticityParams::aa6022_t4()), None);
        let s = serde_json::to_string(&full).unwrap();
        assert_eq!(parse_material(&s).unwrap(), full);
        assert!(parse_material(&s.replace("\"MPa\"", "\"GPa\"")).is_err());
        assert!(matches!(
            parse_material(&s.replace("\"version\":1", "\"version\":3")),
            Err(Error::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn load_paths() {
        let text = r#"{"version": 1,
            "steps": [{"f": [[1.001, 0, 0], [0, 1, 0], [0, 0, 1]], "dt": 0.5}],
            "rate": {"component": "F11", "rate": 1.0, "final_value": 1.01, "steps": 4}}"#;
        let steps = parse_load_path(text).unwrap().to_steps().unwrap();
        assert_eq!(steps.len(), 5);
        assert_eq!(steps[0].f_bar[(0, 0)], 1.001);
        assert!((steps[4].f_bar[(0, 0)] - 1.01).abs() < 1e-15);
        let bad = r#"{"version": 1, "steps": [{"f": [[0, 0, 0], [0, 1, 0], [0, 0, 1]], "dt": 1}]}"#;
        assert!(parse_load_path(bad).unwrap().to_steps().is_err());
        assert!(parse_load_path(r#"{"version": 1}"#).unwrap().to_steps().is_err());
        assert!(parse_load_path(r#"{"version": 7}"#).is_err());
        assert_eq!(parse_component("F23").unwrap(), (1, 2));
        assert!(parse_component("F4").is_err());
    }

    #[test]
    fn orientation_dump_round_trip() {
        let topo = Topology::build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ParameterSet::random(&topo, &mut rng);
        let o = crate::texture::orientations_from_params(&p);
        let bytes = orientations_csv(&[(0, o.clone()), (1, o.clone())]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let back = parse_orientations(&text, None).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in o.iter().zip(&back) {
            assert!((a.q.coords - b.q.coords).norm() < 1e-15);
            assert_eq!(a.weight, b.weight);
        }
        assert!(parse_orientations(&text, Some(5)).is_err());
    }

    #[test]
    fn curves_header() {
        let c = [EpochRecord {
            epoch: 0,
            train_error: 0.5,
            val_error: 0.25,
        }];
        let text = String::from_utf8(curves_csv(&c).unwrap()).unwrap();
        assert_eq!(text, "epoch,train_error,val_error\n0,0.5,0.25\n");
    }

    proptest! {
        #[test]
        fn phase_records_round_trip(c11 in 1e-3..1e3f64, c12 in 1e-3..1e3f64, c44 in 1e-3..1e3f64) {
            let c = StiffnessMatrix::cubic(c11, c12, c44);
            let text = serde_json::to_string(&PhaseRecord::from_stiffness(&c)).unwrap();
            let back: PhaseRecord = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.stiffness(), c);
        }
    }
}
