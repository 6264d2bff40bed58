//! Persistence for demonstrations, situations, models, and run logs, plus a
//! scripted generator for a planar reach task.
//!
//! Datasets, situations, and models are single JSON documents; run logs are
//! line-delimited JSON with a header record. Every artifact carries a
//! `version` tag that is checked before anything else is interpreted, and
//! matrices are stored as nested row arrays (row-major). Numbers are written
//! in shortest round-trip form, so a load after a save restores every float
//! bit for bit.
//!
//! Loads fail with [`Error::Version`] when the tag is missing or unknown,
//! [`Error::InvalidFrame`] when a stored rotation is not orthonormal with
//! determinant one, and [`Error::Parse`] for everything else that is wrong
//! with the content: unreadable JSON, missing fields, ragged matrices,
//! weights that do not sum to one, covariances that are not positive
//! definite, or trajectories whose displacement rows do not match their
//! positions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{IterationRecord, RunLog};
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::gmm::GaussianComponent;
use crate::metrics::CostMode;
use crate::tpgmm::{Demonstration, Mode, Situation, TpGmm};

pub const DATASET_VERSION: &str = "tpgmm.dataset/1";
pub const MODEL_VERSION: &str = "tpgmm.model/1";
pub const SITUATION_VERSION: &str = "tpgmm.situation/1";
pub const RUNLOG_VERSION: &str = "tpgmm.runlog/1";

/// A set of demonstrations sharing one mode, spatial dimension, and frame
/// count, ready to train on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    demos: Vec<Demonstration>,
}

impl Dataset {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::argument("a dataset needs at least one demonstration"))?;
        let (mode, p, n) = (
            first.mode(),
            first.situation().dim(),
            first.situation().n_frames(),
        );
        for (i, demo) in demos.iter().enumerate() {
            if demo.mode() != mode {
                return Err(Error::argument(format!(
                    "demonstration {i} has mode {}, dataset is {}",
                    demo.mode(),
                    mode
                )));
            }
            if demo.situation().dim() != p {
                return Err(Error::Dimension {
                    what: "demonstration spatial dimension",
                    expected: p,
                    actual: demo.situation().dim(),
                });
            }
            if demo.situation().n_frames() != n {
                return Err(Error::Dimension {
                    what: "demonstration frame count",
                    expected: n,
                    actual: demo.situation().n_frames(),
                });
            }
        }
        Ok(Self { demos })
    }

    pub fn mode(&self) -> Mode {
        self.demos[0].mode()
    }

    pub fn spatial_dim(&self) -> usize {
        self.demos[0].situation().dim()
    }

    pub fn n_frames(&self) -> usize {
        self.demos[0].situation().n_frames()
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn into_demos(self) -> Vec<Demonstration> {
        self.demos
    }

    pub fn situations(&self) -> Vec<Situation> {
        self.demos.iter().map(|d| d.situation().clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }
}

// ---------------------------------------------------------------------------
// wire representation

#[derive(Serialize, Deserialize)]
struct FrameDto {
    rotation: Vec<Vec<f64>>,
    translation: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DemoDto {
    frames: Vec<FrameDto>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDto {
    version: String,
    mode: String,
    demos: Vec<DemoDto>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDto {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FrameMixtureDto {
    components: Vec<ComponentDto>,
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    version: String,
    mode: String,
    input_dim: usize,
    weights: Vec<f64>,
    frames: Vec<FrameMixtureDto>,
}

#[derive(Serialize, Deserialize)]
struct SituationDto {
    version: String,
    frames: Vec<FrameDto>,
}

#[derive(Serialize, Deserialize)]
struct RunLogHeaderDto {
    version: String,
    cost_mode: String,
    initial_cost: f64,
    final_cost: f64,
    discarded_count: usize,
}

#[derive(Serialize, Deserialize)]
struct IterationDto {
    iter: usize,
    method: String,
    accepted: bool,
    cost_before: f64,
    cost_after: f64,
    n_demos: usize,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: String,
}

/// Check the document's version tag before interpreting anything else.
fn probe_version(s: &str, expected: &'static str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(s)
        .map_err(|e| Error::parse(format!("version tag: {e}")))?;
    if probe.version != expected {
        return Err(Error::Version {
            found: probe.version,
            expected: expected.to_string(),
        });
    }
    Ok(())
}

/// Keep the frame-validity class, fold everything else into a parse error
/// naming the offending field: content that fails domain validation is
/// malformed data, whatever constructor reported it.
fn field_error(ctx: &str, err: Error) -> Error {
    match err {
        Error::InvalidFrame(m) => Error::InvalidFrame(format!("{ctx}: {m}")),
        other => Error::parse(format!("{ctx}: {other}")),
    }
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], ctx: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::parse(format!("{ctx}: no rows")));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::parse(format!(
                "{ctx}: row {i} has {} entries, row 0 has {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn frame_to_dto(frame: &Frame) -> FrameDto {
    FrameDto {
        rotation: matrix_to_rows(frame.rotation()),
        translation: frame.translation().iter().copied().collect(),
    }
}

fn frame_from_dto(dto: &FrameDto, ctx: &str) -> Result<Frame> {
    let rotation = rows_to_matrix(&dto.rotation, &format!("{ctx}.rotation"))?;
    Frame::new(rotation, DVector::from_column_slice(&dto.translation))
        .map_err(|e| field_error(ctx, e))
}

fn situation_to_dto_frames(sit: &Situation) -> Vec<FrameDto> {
    sit.frames().iter().map(frame_to_dto).collect()
}

fn situation_from_dto_frames(frames: &[FrameDto], ctx: &str) -> Result<Situation> {
    let frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| frame_from_dto(f, &format!("{ctx}.frames[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    Situation::new(frames).map_err(|e| field_error(&format!("{ctx}.frames"), e))
}

// ---------------------------------------------------------------------------
// datasets

pub fn dataset_to_json(dataset: &Dataset) -> String {
    let dto = DatasetDto {
        version: DATASET_VERSION.to_string(),
        mode: dataset.mode().as_str().to_string(),
        demos: dataset
            .demos()
            .iter()
            .map(|d| DemoDto {
                frames: situation_to_dto_frames(d.situation()),
                inputs: matrix_to_rows(d.inputs()),
                outputs: matrix_to_rows(d.outputs()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&dto).expect("dataset serialization cannot fail")
}

pub fn dataset_from_json(s: &str) -> Result<Dataset> {
    probe_version(s, DATASET_VERSION)?;
    let dto: DatasetDto =
        serde_json::from_str(s).map_err(|e| Error::parse(format!("dataset: {e}")))?;
    let mode: Mode = dto.mode.parse().map_err(|e| field_error("mode", e))?;
    let demos = dto
        .demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let ctx = format!("demos[{i}]");
            let situation = situation_from_dto_frames(&d.frames, &ctx)?;
            let inputs = rows_to_matrix(&d.inputs, &format!("{ctx}.inputs"))?;
            let outputs = rows_to_matrix(&d.outputs, &format!("{ctx}.outputs"))?;
            Demonstration::new(mode, inputs, outputs, situation)
                .map_err(|e| field_error(&ctx, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(demos).map_err(|e| field_error("demos", e))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &dataset_to_json(dataset))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// models

pub fn model_to_json(model: &TpGmm) -> String {
    let dto = ModelDto {
        version: MODEL_VERSION.to_string(),
        mode: model.mode().as_str().to_string(),
        input_dim: model.input_dim(),
        weights: model.weights().to_vec(),
        frames: model
            .per_frame()
            .iter()
            .map(|components| FrameMixtureDto {
                components: components
                    .iter()
                    .map(|c| ComponentDto {
                        mean: c.mean.iter().copied().collect(),
                        cov: matrix_to_rows(&c.cov),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&dto).expect("model serialization cannot fail")
}

pub fn model_from_json(s: &str) -> Result<TpGmm> {
    probe_version(s, MODEL_VERSION)?;
    let dto: ModelDto =
        serde_json::from_str(s).map_err(|e| Error::parse(format!("model: {e}")))?;
    let mode: Mode = dto.mode.parse().map_err(|e| field_error("mode", e))?;
    let per_frame = dto
        .frames
        .iter()
        .enumerate()
        .map(|(n, f)| {
            f.components
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let ctx = format!("frames[{n}].components[{k}]");
                    let cov = rows_to_matrix(&c.cov, &format!("{ctx}.cov"))?;
                    GaussianComponent::new(DVector::from_column_slice(&c.mean), cov)
                        .map_err(|e| field_error(&ctx, e))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    TpGmm::new(mode, dto.weights, per_frame, dto.input_dim)
        .map_err(|e| field_error("model", e))
}

pub fn save_model(model: &TpGmm, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &model_to_json(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TpGmm> {
    model_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// situations

pub fn situation_to_json(sit: &Situation) -> String {
    let dto = SituationDto {
        version: SITUATION_VERSION.to_string(),
        frames: situation_to_dto_frames(sit),
    };
    serde_json::to_string_pretty(&dto).expect("situation serialization cannot fail")
}

pub fn situation_from_json(s: &str) -> Result<Situation> {
    probe_version(s, SITUATION_VERSION)?;
    let dto: SituationDto =
        serde_json::from_str(s).map_err(|e| Error::parse(format!("situation: {e}")))?;
    situation_from_dto_frames(&dto.frames, "situation")
}

pub fn save_situation(sit: &Situation, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &situation_to_json(sit))
}

pub fn load_situation(path: impl AsRef<Path>) -> Result<Situation> {
    situation_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// run logs

/// One header record followed by one record per iteration, newline-delimited.
pub fn run_log_to_jsonl(log: &RunLog) -> String {
    let header = RunLogHeaderDto {
        version: RUNLOG_VERSION.to_string(),
        cost_mode: log.cost_mode.as_str().to_string(),
        initial_cost: log.initial_cost,
        final_cost: log.final_cost,
        discarded_count: log.discarded_count,
    };
    let mut out =
        serde_json::to_string(&header).expect("run log serialization cannot fail");
    for record in &log.iterations {
        let dto = IterationDto {
            iter: record.iter,
            method: record.method.as_str().to_string(),
            accepted: record.accepted,
            cost_before: record.cost_before,
            cost_after: record.cost_after,
            n_demos: record.n_demos,
        };
        out.push('\n');
        out.push_str(&serde_json::to_string(&dto).expect("run log serialization cannot fail"));
    }
    out.push('\n');
    out
}

pub fn run_log_from_jsonl(s: &str) -> Result<RunLog> {
    let mut lines = s.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::parse("run log: empty document"))?;
    probe_version(header_line, RUNLOG_VERSION)?;
    let header: RunLogHeaderDto = serde_json::from_str(header_line)
        .map_err(|e| Error::parse(format!("run log header: {e}")))?;
    let cost_mode: CostMode = header
        .cost_mode
        .parse()
        .map_err(|e| field_error("cost_mode", e))?;
    let iterations = lines
        .enumerate()
        .map(|(i, line)| {
            let ctx = format!("run log record {i}");
            let dto: IterationDto =
                serde_json::from_str(line).map_err(|e| Error::parse(format!("{ctx}: {e}")))?;
            Ok(IterationRecord {
                iter: dto.iter,
                method: dto
                    .method
                    .parse()
                    .map_err(|e| field_error(&format!("{ctx}.method"), e))?,
                accepted: dto.accepted,
                cost_before: dto.cost_before,
                cost_after: dto.cost_after,
                n_demos: dto.n_demos,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunLog {
        iterations,
        initial_cost: header.initial_cost,
        final_cost: header.final_cost,
        discarded_count: header.discarded_count,
        cost_mode,
    })
}

pub fn save_run_log(log: &RunLog, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &run_log_to_jsonl(log))
}

pub fn load_run_log(path: impl AsRef<Path>) -> Result<RunLog> {
    run_log_from_jsonl(&std::fs::read_to_string(path)?)
}

/// Write the whole file next to the target, then rename it into place, so a
/// crash never leaves a half-written artifact under the target name.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::argument(format!("{} has no file name", path.display())))?
        .to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// scripted 2D task

/// Generate a planar reach task: one time-based demonstration per situation,
/// from a fixed start frame (identity at the origin) to a sampled goal frame.
///
/// Goal poses are drawn uniformly: translation inside the box
/// x in [-1, 1], y in [1, 3], orientation within +-60 degrees. Each curve is
/// a cubic from the start origin to the goal origin that leaves along the
/// start frame's +y axis and arrives along the goal frame's -y axis, eased to
/// rest at both ends, with a seeded lateral bump as shape jitter. Time runs
/// uniformly over [0, 1] with `samples_per_demo` samples. The same seed
/// always produces the same dataset, bit for bit.
pub fn generate_2d_task(
    n_situations: usize,
    samples_per_demo: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_situations < 2 {
        return Err(Error::argument("generator needs at least two situations"));
    }
    if samples_per_demo < 20 {
        return Err(Error::argument("generator needs at least 20 samples per demo"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = samples_per_demo;
    let times: Vec<f64> = (0..t).map(|i| i as f64 / (t - 1) as f64).collect();

    let mut demos = Vec::with_capacity(n_situations);
    for _ in 0..n_situations {
        // goal pose, then per-demo shape parameters, in a fixed draw order
        let angle = rng.gen_range(-std::f64::consts::FRAC_PI_3..=std::f64::consts::FRAC_PI_3);
        let gx = rng.gen_range(-1.0..=1.0);
        let gy = rng.gen_range(1.0..=3.0);
        let exit_scale: f64 = rng.gen_range(1.6..=2.0);
        let entry_scale: f64 = rng.gen_range(1.6..=2.0);
        let bump: f64 = rng.gen_range(-0.08..=0.08);

        let start = Frame::identity(2)?;
        let goal = Frame::from_euler(&[angle], &[gx, gy])?;

        let p1 = goal.translation().clone();
        let dist = p1.norm();
        // tangents: out along start +y, in along goal -y (world coordinates)
        let m0 = DVector::from_column_slice(&[0.0, exit_scale * dist]);
        let m1 = goal.rotation() * DVector::from_column_slice(&[0.0, -entry_scale * dist]);
        // lateral jitter direction, perpendicular to the chord
        let normal = DVector::from_column_slice(&[-p1[1] / dist, p1[0] / dist]);

        let positions = DMatrix::from_fn(t, 2, |i, j| {
            // ease the curve parameter so the motion starts and stops at rest
            let u = times[i];
            let s = u * u * (3.0 - 2.0 * u);
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            let wobble = bump * dist * (std::f64::consts::PI * s).sin().powi(2);
            h00 * 0.0 + h10 * m0[j] + h01 * p1[j] + h11 * m1[j] + wobble * normal[j]
        });

        let situation = Situation::new(vec![start, goal])?;
        demos.push(Demonstration::time_based(&times, positions, situation)?);
    }
    Dataset::new(demos)
}
