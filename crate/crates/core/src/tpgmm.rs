//! Task-parameterized mixture models: demonstrations with their frames,
//! projection into each frame, the joint EM fit, and fusion of the per-frame
//! Gaussians for a concrete situation.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frames::{AugmentedFrame, Frame};
use crate::gmm::{em_fit_blocks, EmConfig, EmTrace, GaussianComponent, Gmm};
use crate::util::symmetrize;

/// What the model regresses: position over time, or displacement over
/// position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Input is a scalar time, output is a p-dimensional position.
    TimeBased,
    /// Input is a p-dimensional position, output the per-step displacement.
    TrajectoryBased,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TimeBased => "time_based",
            Mode::TrajectoryBased => "trajectory_based",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_based" => Ok(Mode::TimeBased),
            "trajectory_based" => Ok(Mode::TrajectoryBased),
            other => Err(Error::argument(format!(
                "unknown mode {other:?}, expected \"time_based\" or \"trajectory_based\""
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lift a frame onto the model space appropriate for the mode.
pub(crate) fn lift(mode: Mode, frame: &Frame) -> AugmentedFrame {
    match mode {
        Mode::TimeBased => AugmentedFrame::time_based(frame),
        Mode::TrajectoryBased => AugmentedFrame::trajectory_based(frame),
    }
}

/// The set of task frames observed for one demonstration or query.
#[derive(Debug, Clone, PartialEq)]
pub struct Situation {
    frames: Vec<Frame>,
}

impl Situation {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::argument("a situation needs at least one frame"))?;
        let p = first.dim();
        if frames.iter().any(|f| f.dim() != p) {
            return Err(Error::argument(
                "all frames in a situation must share one dimension",
            ));
        }
        Ok(Situation { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Spatial dimension of the frames.
    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }
}

impl AsRef<[Frame]> for Situation {
    fn as_ref(&self) -> &[Frame] {
        &self.frames
    }
}

/// One trajectory with the situation it was recorded in.
///
/// Rows of `inputs` and `outputs` are aligned samples. In trajectory mode the
/// outputs are the forward differences of the inputs with the last row
/// repeated, which is checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    mode: Mode,
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    situation: Situation,
}

const DISPLACEMENT_TOL: f64 = 1e-9;

impl Demonstration {
    pub fn new(
        mode: Mode,
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        situation: Situation,
    ) -> Result<Self> {
        let t = inputs.nrows();
        if t < 2 {
            return Err(Error::argument(
                "a demonstration needs at least two samples",
            ));
        }
        if outputs.nrows() != t {
            return Err(Error::Dimension {
                what: "demonstration outputs rows",
                expected: t,
                actual: outputs.nrows(),
            });
        }
        let p = situation.dim();
        let expected_in = match mode {
            Mode::TimeBased => 1,
            Mode::TrajectoryBased => p,
        };
        if inputs.ncols() != expected_in {
            return Err(Error::Dimension {
                what: "demonstration input columns",
                expected: expected_in,
                actual: inputs.ncols(),
            });
        }
        if outputs.ncols() != p {
            return Err(Error::Dimension {
                what: "demonstration output columns",
                expected: p,
                actual: outputs.ncols(),
            });
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::argument("demonstration data must be finite"));
        }
        if mode == Mode::TrajectoryBased {
            for i in 0..t {
                let expected = if i + 1 < t {
                    inputs.row(i + 1) - inputs.row(i)
                } else {
                    outputs.row(t - 2).into_owned()
                };
                let err = (outputs.row(i) - expected).amax();
                if err > DISPLACEMENT_TOL {
                    return Err(Error::argument(format!(
                        "outputs row {i} is not the forward difference of the inputs \
                         (max deviation {err:.3e})"
                    )));
                }
            }
        }
        Ok(Demonstration {
            mode,
            inputs,
            outputs,
            situation,
        })
    }

    /// Build a time-based demonstration from a time grid and positions.
    pub fn time_based(times: &[f64], positions: DMatrix<f64>, situation: Situation) -> Result<Self> {
        let inputs = DMatrix::from_column_slice(times.len(), 1, times);
        Demonstration::new(Mode::TimeBased, inputs, positions, situation)
    }

    /// Build a trajectory-based demonstration from positions alone; the
    /// displacement outputs are derived.
    pub fn from_positions(positions: DMatrix<f64>, situation: Situation) -> Result<Self> {
        let t = positions.nrows();
        if t < 2 {
            return Err(Error::argument(
                "a demonstration needs at least two samples",
            ));
        }
        let p = positions.ncols();
        let mut outputs = DMatrix::zeros(t, p);
        for i in 0..t - 1 {
            outputs.set_row(i, &(positions.row(i + 1) - positions.row(i)));
        }
        let last = outputs.row(t - 2).into_owned();
        outputs.set_row(t - 1, &last);
        Demonstration::new(Mode::TrajectoryBased, positions, outputs, situation)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn situation(&self) -> &Situation {
        &self.situation
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    /// Joint (input, output) sample at row `t`, in global coordinates.
    pub fn joint_row(&self, t: usize) -> DVector<f64> {
        let d = self.input_dim() + self.output_dim();
        let mut v = DVector::zeros(d);
        v.rows_mut(0, self.input_dim())
            .copy_from(&self.inputs.row(t).transpose());
        v.rows_mut(self.input_dim(), self.output_dim())
            .copy_from(&self.outputs.row(t).transpose());
        v
    }

    /// The trajectory this demonstration traces in space: the outputs for a
    /// time-based demo, the input positions for a trajectory-based demo.
    pub fn path(&self) -> &DMatrix<f64> {
        match self.mode {
            Mode::TimeBased => &self.outputs,
            Mode::TrajectoryBased => &self.inputs,
        }
    }
}

/// Express a demonstration's joint samples in each of its frames.
///
/// Returns one T x D matrix per frame, where row t is A' (x_t - b) for that
/// frame's lifted map. The time channel of a time-based demo is unchanged.
pub fn project_demo(demo: &Demonstration) -> Result<Vec<DMatrix<f64>>> {
    let t = demo.len();
    let d = demo.input_dim() + demo.output_dim();
    demo.situation()
        .frames()
        .iter()
        .map(|frame| {
            let aug = lift(demo.mode(), frame);
            let mut local = DMatrix::zeros(t, d);
            for i in 0..t {
                let row = aug.to_local(&demo.joint_row(i))?;
                local.set_row(i, &row.transpose());
            }
            Ok(local)
        })
        .collect()
}

/// A task-parameterized Gaussian mixture: shared weights and one set of
/// Gaussians per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TpGmm {
    mode: Mode,
    weights: Vec<f64>,
    per_frame: Vec<Vec<GaussianComponent>>,
    input_dim: usize,
}

impl TpGmm {
    pub fn new(
        mode: Mode,
        weights: Vec<f64>,
        per_frame: Vec<Vec<GaussianComponent>>,
        input_dim: usize,
    ) -> Result<Self> {
        if per_frame.is_empty() {
            return Err(Error::argument("model needs at least one frame"));
        }
        let k = per_frame[0].len();
        if k == 0 {
            return Err(Error::argument("model needs at least one component"));
        }
        if per_frame.iter().any(|f| f.len() != k) {
            return Err(Error::argument(
                "every frame must hold the same number of components",
            ));
        }
        // Reuse the mixture validation (weights simplex, shared dimension,
        // positive-definite covariances) on each frame's components.
        for comps in &per_frame {
            Gmm::new(weights.clone(), comps.clone(), input_dim)?;
        }
        let d = per_frame[0][0].dim();
        match mode {
            Mode::TimeBased => {
                if input_dim != 1 {
                    return Err(Error::argument(
                        "time-based models have a one-dimensional input",
                    ));
                }
                if !(d == 3 || d == 4) {
                    return Err(Error::argument(format!(
                        "time-based model dimension must be 1 + p with p in {{2, 3}}, got {d}"
                    )));
                }
            }
            Mode::TrajectoryBased => {
                if d != 2 * input_dim || !(input_dim == 2 || input_dim == 3) {
                    return Err(Error::argument(format!(
                        "trajectory-based models need dimension 2p with input_dim = p in \
                         {{2, 3}}, got dimension {d} and input_dim {input_dim}"
                    )));
                }
            }
        }
        Ok(TpGmm {
            mode,
            weights,
            per_frame,
            input_dim,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Components indexed `[frame][component]`.
    pub fn per_frame(&self) -> &[Vec<GaussianComponent>] {
        &self.per_frame
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_frames(&self) -> usize {
        self.per_frame.len()
    }

    pub fn n_components(&self) -> usize {
        self.per_frame[0].len()
    }

    /// Joint model dimension.
    pub fn dim(&self) -> usize {
        self.per_frame[0][0].dim()
    }

    pub fn output_dim(&self) -> usize {
        self.dim() - self.input_dim
    }

    /// Spatial dimension of the task frames.
    pub fn spatial_dim(&self) -> usize {
        match self.mode {
            Mode::TimeBased => self.dim() - 1,
            Mode::TrajectoryBased => self.dim() / 2,
        }
    }

    fn check_situation(&self, sit: &Situation) -> Result<()> {
        if sit.n_frames() != self.n_frames() {
            return Err(Error::Dimension {
                what: "situation frames",
                expected: self.n_frames(),
                actual: sit.n_frames(),
            });
        }
        if sit.dim() != self.spatial_dim() {
            return Err(Error::Dimension {
                what: "situation frame dimension",
                expected: self.spatial_dim(),
                actual: sit.dim(),
            });
        }
        Ok(())
    }

    /// Fuse the per-frame Gaussians for a concrete situation into one global
    /// mixture: precisions add, and the fused mean is the precision-weighted
    /// combination of the transformed means.
    pub fn instantiate(&self, sit: &Situation) -> Result<Gmm> {
        self.check_situation(sit)?;
        let d = self.dim();
        let augs: Vec<AugmentedFrame> = sit.frames().iter().map(|f| lift(self.mode, f)).collect();

        let components = (0..self.n_components())
            .map(|c| {
                let mut precision_sum = DMatrix::<f64>::zeros(d, d);
                let mut weighted_mean_sum = DVector::<f64>::zeros(d);
                for (n, aug) in augs.iter().enumerate() {
                    let comp = &self.per_frame[n][c];
                    let (mean, cov) = aug.transform_gaussian(&comp.mean, &comp.cov)?;
                    let chol = Cholesky::new(cov).ok_or_else(|| {
                        Error::numeric("transformed covariance is not positive-definite")
                    })?;
                    let precision = chol.inverse();
                    weighted_mean_sum += &precision * mean;
                    precision_sum += precision;
                }
                symmetrize(&mut precision_sum);
                let chol = Cholesky::new(precision_sum)
                    .ok_or_else(|| Error::numeric("fused precision is singular"))?;
                let mut cov = chol.inverse();
                symmetrize(&mut cov);
                let mean = chol.solve(&weighted_mean_sum);
                GaussianComponent::new(mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;

        Gmm::new(self.weights.clone(), components, self.input_dim)
    }

    /// Reproduce positions over a time grid by regressing each time through
    /// the instantiated mixture.
    pub fn reproduce_time_based(&self, sit: &Situation, times: &[f64]) -> Result<DMatrix<f64>> {
        if self.mode != Mode::TimeBased {
            return Err(Error::argument(
                "reproduce_time_based needs a time-based model",
            ));
        }
        if times.is_empty() {
            return Err(Error::argument("the time grid must not be empty"));
        }
        let gmm = self.instantiate(sit)?;
        let p = self.output_dim();
        let mut out = DMatrix::zeros(times.len(), p);
        let mut x = DVector::zeros(1);
        for (i, &t) in times.iter().enumerate() {
            x[0] = t;
            let step = gmm.gmr(&x)?;
            out.set_row(i, &step.mean.transpose());
        }
        Ok(out)
    }

    /// Reproduce a path by integrating regressed displacements from a start
    /// point with a unit step: x_{t+1} = x_t + E[dx | x_t].
    pub fn reproduce_trajectory_based(
        &self,
        sit: &Situation,
        start: &DVector<f64>,
        steps: usize,
    ) -> Result<DMatrix<f64>> {
        if self.mode != Mode::TrajectoryBased {
            return Err(Error::argument(
                "reproduce_trajectory_based needs a trajectory-based model",
            ));
        }
        let p = self.input_dim;
        if start.len() != p {
            return Err(Error::Dimension {
                what: "start point",
                expected: p,
                actual: start.len(),
            });
        }
        let gmm = self.instantiate(sit)?;
        let mut out = DMatrix::zeros(steps + 1, p);
        let mut x = start.clone();
        out.set_row(0, &x.transpose());
        for i in 0..steps {
            let step = gmm.gmr(&x)?;
            x += step.mean;
            out.set_row(i + 1, &x.transpose());
        }
        Ok(out)
    }

    /// Reproduce under a demonstration's situation, matching its sampling:
    /// its time grid in time-based mode, its start point and sample count in
    /// trajectory mode. The result is comparable to [`Demonstration::path`].
    pub fn reproduce_like(&self, demo: &Demonstration) -> Result<DMatrix<f64>> {
        match self.mode {
            Mode::TimeBased => {
                let times: Vec<f64> = demo.inputs().column(0).iter().copied().collect();
                self.reproduce_time_based(demo.situation(), &times)
            }
            Mode::TrajectoryBased => {
                let start = demo.inputs().row(0).transpose();
                self.reproduce_trajectory_based(demo.situation(), &start, demo.len() - 1)
            }
        }
    }
}

/// Fit a task-parameterized mixture to demonstrations.
pub fn fit(demos: &[Demonstration], k: usize, cfg: &EmConfig) -> Result<TpGmm> {
    fit_traced(demos, k, cfg).map(|(model, _)| model)
}

/// [`fit`] plus the log-likelihood trace.
pub fn fit_traced(demos: &[Demonstration], k: usize, cfg: &EmConfig) -> Result<(TpGmm, EmTrace)> {
    let first = demos
        .first()
        .ok_or_else(|| Error::argument("fit needs at least one demonstration"))?;
    let mode = first.mode();
    let n_frames = first.situation().n_frames();
    let d = first.input_dim() + first.output_dim();
    for demo in demos {
        if demo.mode() != mode {
            return Err(Error::argument("demonstrations must share one mode"));
        }
        if demo.situation().n_frames() != n_frames {
            return Err(Error::Dimension {
                what: "frames per demonstration",
                expected: n_frames,
                actual: demo.situation().n_frames(),
            });
        }
        if demo.input_dim() + demo.output_dim() != d {
            return Err(Error::Dimension {
                what: "demonstration joint dimension",
                expected: d,
                actual: demo.input_dim() + demo.output_dim(),
            });
        }
    }

    let total_t: usize = demos.iter().map(|d| d.len()).sum();
    let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::zeros(total_t, d); n_frames];
    let mut at = 0;
    for demo in demos {
        let projected = project_demo(demo)?;
        for (block, local) in blocks.iter_mut().zip(&projected) {
            block.view_mut((at, 0), (local.nrows(), d)).copy_from(local);
        }
        at += demo.len();
    }

    let fit = em_fit_blocks(&blocks, k, cfg)?;
    let model = TpGmm::new(mode, fit.weights, fit.per_block, first.input_dim())?;
    Ok((model, fit.trace))
}
