//! Iterative dataset augmentation: synthesize a candidate demonstration,
//! retrain, and keep the candidate only when the reproduction cost on the
//! selection set strictly improves.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frames::{sample_frame, FrameLimits};
use crate::gmm::{EmConfig, InitMethod};
use crate::metrics::{dtw_cost, rms_cost, CostMode, CostReport};
use crate::tpgmm::{fit, Demonstration, Mode, Situation, TpGmm};
use crate::util::splitmix64;

/// How candidate demonstrations are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Perturb a uniformly chosen expert demonstration with white noise.
    Noise,
    /// Reproduce with the current model under uniformly sampled frames.
    Rf,
    /// Random frames first, then noise on the reproduction.
    RfNoise,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Noise => "noise",
            Method::Rf => "rf",
            Method::RfNoise => "rf_noise",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Method::Noise),
            "rf" => Ok(Method::Rf),
            "rf_noise" | "rf-noise" => Ok(Method::RfNoise),
            other => Err(Error::argument(format!(
                "unknown method {other:?}, expected \"noise\", \"rf\" or \"rf_noise\""
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which demonstrations decide whether a candidate is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Cost on the expert demonstrations themselves.
    Original,
    /// Cost on a held-out validation set.
    Generalization,
}

impl Selection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Selection::Original => "original",
            Selection::Generalization => "generalization",
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Selection::Original),
            "generalization" => Ok(Selection::Generalization),
            other => Err(Error::argument(format!(
                "unknown selection {other:?}, expected \"original\" or \"generalization\""
            ))),
        }
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Settings for [`run_algorithm1`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub method: Method,
    /// Cap on the total number of demonstrations in the training set.
    pub max_demos: usize,
    /// Cap on candidate iterations.
    pub max_iters: usize,
    /// Signal-to-noise ratio of injected noise, in decibels.
    pub snr_db: f64,
    pub selection: Selection,
    /// Mixture components of every (re)trained model.
    pub components: usize,
    pub seed: u64,
    /// Per-frame pose bounds for random-frame synthesis.
    pub limits: Option<Vec<FrameLimits>>,
}

/// One accept/reject decision of the augmentation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub method: Method,
    pub accepted: bool,
    /// Selection cost of the model before this candidate.
    pub cost_before: f64,
    /// Selection cost of the model retrained with this candidate.
    pub cost_after: f64,
    /// Demonstrations in the training set after the decision.
    pub n_demos: usize,
}

/// Complete record of one augmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub iterations: Vec<IterationRecord>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub discarded_count: usize,
    pub cost_mode: CostMode,
}

/// Result of [`run_algorithm1`]: the best model, the training set it was
/// fitted on (expert demonstrations first, accepted synthetic ones after),
/// and the run log.
#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub model: TpGmm,
    pub demos: Vec<Demonstration>,
    pub log: RunLog,
}

/// Derive an independent seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// The cost used to select candidates in each mode: RMS against the time
/// grid for time-based models, warped distance for trajectory-based ones.
pub fn default_cost_mode(mode: Mode) -> CostMode {
    match mode {
        Mode::TimeBased => CostMode::Rms,
        Mode::TrajectoryBased => CostMode::Dtw,
    }
}

/// EM settings suited to a mode: time-ordered binning for time-indexed data,
/// k-means otherwise.
pub fn em_config_for(mode: Mode, seed: u64) -> EmConfig {
    EmConfig {
        init: match mode {
            Mode::TimeBased => InitMethod::TimeBinning,
            Mode::TrajectoryBased => InitMethod::KMeans,
        },
        seed,
        ..EmConfig::default()
    }
}

/// Add white noise to every column of a trajectory at the given
/// signal-to-noise ratio.
///
/// Per column, the signal power is the mean square after subtracting the
/// column mean; the noise is zero-mean Gaussian with variance
/// power / 10^(snr_db / 10). A constant column has no power and stays
/// untouched. Columns are processed left to right, samples top to bottom,
/// so a given RNG state yields one fixed noise pattern.
pub fn inject_noise<R: Rng + ?Sized>(
    traj: &DMatrix<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !snr_db.is_finite() {
        return Err(Error::argument("snr_db must be finite"));
    }
    if traj.nrows() == 0 {
        return Err(Error::argument("cannot inject noise into an empty trajectory"));
    }
    let t = traj.nrows() as f64;
    let mut out = traj.clone();
    for c in 0..traj.ncols() {
        let col = traj.column(c);
        let mean = col.sum() / t;
        let power = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        if power == 0.0 {
            continue;
        }
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::numeric(format!("noise distribution: {e}")))?;
        for r in 0..traj.nrows() {
            out[(r, c)] += normal.sample(rng);
        }
    }
    Ok(out)
}

fn noisy_variant<R: Rng + ?Sized>(
    demo: &Demonstration,
    snr_db: f64,
    rng: &mut R,
) -> Result<Demonstration> {
    match demo.mode() {
        // Positions are the outputs; the time input stays untouched.
        Mode::TimeBased => Demonstration::new(
            Mode::TimeBased,
            demo.inputs().clone(),
            inject_noise(demo.outputs(), snr_db, rng)?,
            demo.situation().clone(),
        ),
        // Noise the path and re-derive the displacements so the
        // position/displacement coupling stays intact.
        Mode::TrajectoryBased => Demonstration::from_positions(
            inject_noise(demo.inputs(), snr_db, rng)?,
            demo.situation().clone(),
        ),
    }
}

fn random_frame_variant<R: Rng + ?Sized>(
    template: &Demonstration,
    model: &TpGmm,
    limits: &[FrameLimits],
    rng: &mut R,
) -> Result<Demonstration> {
    if limits.len() != model.n_frames() {
        return Err(Error::Dimension {
            what: "frame limits",
            expected: model.n_frames(),
            actual: limits.len(),
        });
    }
    let frames = limits.iter().map(|l| sample_frame(l, rng)).collect();
    let situation = Situation::new(frames)?;
    match model.mode() {
        Mode::TimeBased => {
            let times: Vec<f64> = template.inputs().column(0).iter().copied().collect();
            let positions = model.reproduce_time_based(&situation, &times)?;
            Demonstration::time_based(&times, positions, situation)
        }
        Mode::TrajectoryBased => {
            let start = template.inputs().row(0).transpose();
            let path =
                model.reproduce_trajectory_based(&situation, &start, template.len() - 1)?;
            Demonstration::from_positions(path, situation)
        }
    }
}

/// Synthesize one candidate demonstration.
///
/// The template (time grid or start point, and for noise the whole
/// trajectory) is a uniformly chosen expert demonstration. Random-frame
/// methods need pose limits.
pub fn synthesize<R: Rng + ?Sized>(
    method: Method,
    expert: &[Demonstration],
    model: &TpGmm,
    limits: Option<&[FrameLimits]>,
    snr_db: f64,
    rng: &mut R,
) -> Result<Demonstration> {
    if expert.is_empty() {
        return Err(Error::argument("synthesis needs at least one expert demonstration"));
    }
    let template = &expert[rng.gen_range(0..expert.len())];
    match method {
        Method::Noise => noisy_variant(template, snr_db, rng),
        Method::Rf | Method::RfNoise => {
            let limits = limits.ok_or_else(|| {
                Error::argument("random-frame synthesis needs frame limits")
            })?;
            let candidate = random_frame_variant(template, model, limits, rng)?;
            if method == Method::Rf {
                Ok(candidate)
            } else {
                noisy_variant(&candidate, snr_db, rng)
            }
        }
    }
}

/// Cost of reproducing each demonstration under its own situation.
///
/// Reproductions match the demonstration's sampling (time grid, or start
/// point and sample count) and are compared against the demonstrated path.
pub fn reproduction_cost(
    model: &TpGmm,
    demos: &[Demonstration],
    cost_mode: CostMode,
) -> Result<CostReport> {
    if demos.is_empty() {
        return Err(Error::argument("cost needs at least one demonstration"));
    }
    let reproductions: Vec<DMatrix<f64>> = demos
        .iter()
        .map(|d| model.reproduce_like(d))
        .collect::<Result<_>>()?;
    let references: Vec<DMatrix<f64>> = demos.iter().map(|d| d.path().clone()).collect();
    match cost_mode {
        CostMode::Rms => rms_cost(&reproductions, &references),
        CostMode::Dtw => dtw_cost(&reproductions, &references),
    }
}

fn validate_config(
    cfg: &AugmentConfig,
    expert: &[Demonstration],
    validation: Option<&[Demonstration]>,
) -> Result<()> {
    if expert.len() < 2 {
        return Err(Error::argument(
            "augmentation needs at least two expert demonstrations",
        ));
    }
    if cfg.max_demos <= expert.len() {
        return Err(Error::argument(format!(
            "max_demos ({}) must exceed the number of expert demonstrations ({})",
            cfg.max_demos,
            expert.len()
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::argument("max_iters must be at least 1"));
    }
    if !cfg.snr_db.is_finite() {
        return Err(Error::argument("snr_db must be finite"));
    }
    if cfg.components == 0 {
        return Err(Error::argument("component count must be at least 1"));
    }
    if cfg.selection == Selection::Generalization
        && validation.is_none_or(|v| v.is_empty())
    {
        return Err(Error::argument(
            "generalization selection needs a non-empty validation set",
        ));
    }
    if cfg.method != Method::Noise && cfg.limits.is_none() {
        return Err(Error::argument(
            "random-frame methods need frame limits in the config",
        ));
    }
    Ok(())
}

/// Grow the training set with synthetic demonstrations while they lower the
/// selection cost.
///
/// An initial model is trained on the expert demonstrations; each iteration
/// synthesizes a candidate, retrains from scratch on the grown set with a
/// fresh seed, and accepts the candidate only on a strict cost decrease. The
/// loop stops when the training set reaches `max_demos` demonstrations or
/// after `max_iters` candidates. The selection cost is always computed on the
/// expert (or validation) set alone, never on synthetic demonstrations.
///
/// Seed schedule (part of the contract, so callers can recreate any stage):
/// the initial fit uses `derive_seed(cfg.seed, 0)`, the retrain of iteration
/// `i` uses `derive_seed(cfg.seed, 1 + i)`, and the synthesis RNG is seeded
/// with `derive_seed(cfg.seed, u64::MAX)`.
pub fn run_algorithm1(
    expert: &[Demonstration],
    validation: Option<&[Demonstration]>,
    cfg: &AugmentConfig,
) -> Result<AugmentOutcome> {
    validate_config(cfg, expert, validation)?;
    let mode = expert[0].mode();
    let cost_mode = default_cost_mode(mode);
    let selection_set: &[Demonstration] = match cfg.selection {
        Selection::Original => expert,
        Selection::Generalization => validation.expect("validated above"),
    };

    let mut model = fit(
        expert,
        cfg.components,
        &em_config_for(mode, derive_seed(cfg.seed, 0)),
    )?;
    let mut cost = reproduction_cost(&model, selection_set, cost_mode)?.mean;
    let initial_cost = cost;

    let mut demos = expert.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mut iterations = Vec::new();
    let mut discarded = 0usize;
    let mut iter = 0usize;

    while demos.len() < cfg.max_demos && iter < cfg.max_iters {
        let candidate = synthesize(
            cfg.method,
            expert,
            &model,
            cfg.limits.as_deref(),
            cfg.snr_db,
            &mut rng,
        )?;
        let mut grown = demos.clone();
        grown.push(candidate);
        let retrained = fit(
            &grown,
            cfg.components,
            &em_config_for(mode, derive_seed(cfg.seed, 1 + iter as u64)),
        )?;
        let new_cost = reproduction_cost(&retrained, selection_set, cost_mode)?.mean;

        let cost_before = cost;
        let accepted = new_cost < cost;
        if accepted {
            demos = grown;
            model = retrained;
            cost = new_cost;
        } else {
            discarded += 1;
        }
        iterations.push(IterationRecord {
            iter,
            method: cfg.method,
            accepted,
            cost_before,
            cost_after: new_cost,
            n_demos: demos.len(),
        });
        iter += 1;
        log::debug!(
            "iteration {iter}: cost {new_cost:.6} ({})",
            if accepted { "accepted" } else { "discarded" }
        );
    }

    Ok(AugmentOutcome {
        model,
        demos,
        log: RunLog {
            iterations,
            initial_cost,
            final_cost: cost,
            discarded_count: discarded,
            cost_mode,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{limits_from_situations, Frame};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine_positions(t: usize, phase: f64) -> DMatrix<f64> {
        DMatrix::from_fn(t, 2, |i, j| {
            let x = i as f64 / (t - 1) as f64;
            if j == 0 {
                x + 0.05 * (8.0 * x + phase).sin()
            } else {
                (3.0 * x + phase).sin()
            }
        })
    }

    fn time_demo(phase: f64, goal_angle: f64, goal: [f64; 2]) -> Demonstration {
        let t = 40;
        let times: Vec<f64> = (0..t).map(|i| i as f64 / (t - 1) as f64).collect();
        let situation = Situation::new(vec![
            Frame::identity(2).unwrap(),
            Frame::from_euler(&[goal_angle], &goal).unwrap(),
        ])
        .unwrap();
        Demonstration::time_based(&times, sine_positions(t, phase), situation).unwrap()
    }

    fn expert_set() -> Vec<Demonstration> {
        vec![
            time_demo(0.0, 0.2, [1.0, 2.0]),
            time_demo(0.4, -0.3, [1.5, 1.5]),
            time_demo(0.8, 0.1, [0.5, 2.5]),
        ]
    }

    #[test]
    fn huge_snr_leaves_the_signal_untouched() {
        let traj = sine_positions(100, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = inject_noise(&traj, 300.0, &mut rng).unwrap();
        for c in 0..traj.ncols() {
            let scale = traj.column(c).amax();
            let max_err = (noisy.column(c) - traj.column(c)).amax();
            assert!(
                max_err <= 1e-6 * scale,
                "column {c}: relative deviation {}",
                max_err / scale
            );
        }
    }

    #[test]
    fn measured_snr_matches_the_requested_level() {
        let t = 10_000;
        let traj = DMatrix::from_fn(t, 2, |i, j| {
            let x = i as f64 / (t - 1) as f64;
            if j == 0 {
                (7.0 * x).sin()
            } else {
                2.0 * (3.0 * x).cos() + 5.0
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let noisy = inject_noise(&traj, 30.0, &mut rng).unwrap();
        for c in 0..2 {
            let col = traj.column(c);
            let mean = col.sum() / t as f64;
            let signal: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let noise: f64 = (noisy.column(c) - col).norm_squared() / t as f64;
            let measured = 10.0 * (signal / noise).log10();
            assert!(
                (measured - 30.0).abs() < 1.0,
                "column {c}: measured {measured:.2} dB"
            );
        }
    }

    #[test]
    fn constant_columns_stay_constant() {
        let traj = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 3.25 } else { i as f64 });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy = inject_noise(&traj, 10.0, &mut rng).unwrap();
        assert_eq!(noisy.column(0), traj.column(0));
        assert_ne!(noisy.column(1), traj.column(1));
    }

    #[test]
    fn noise_candidates_keep_inputs_and_situation() {
        let expert = expert_set();
        let model = fit(&expert, 3, &em_config_for(Mode::TimeBased, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let candidate =
            synthesize(Method::Noise, &expert, &model, None, 30.0, &mut rng).unwrap();
        let matching_template = expert
            .iter()
            .find(|d| d.situation() == candidate.situation())
            .expect("situation must be copied from an expert demo");
        assert_eq!(candidate.inputs(), matching_template.inputs());
        assert_ne!(candidate.outputs(), matching_template.outputs());
    }

    #[test]
    fn random_frame_candidates_stay_inside_limits_and_match_the_model() {
        let expert = expert_set();
        let model = fit(&expert, 3, &em_config_for(Mode::TimeBased, 0)).unwrap();
        let situations: Vec<_> = expert.iter().map(|d| d.situation().clone()).collect();
        let limits = limits_from_situations(&situations, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let candidate = synthesize(
                Method::Rf,
                &expert,
                &model,
                Some(&limits),
                30.0,
                &mut rng,
            )
            .unwrap();
            for (frame, frame_limits) in candidate.situation().frames().iter().zip(&limits) {
                assert!(frame_limits.contains(frame));
            }
            let recomputed = model.reproduce_like(&candidate).unwrap();
            assert!((candidate.outputs() - recomputed).amax() < 1e-12);
        }
    }

    #[test]
    fn rf_without_limits_is_an_argument_error() {
        let expert = expert_set();
        let model = fit(&expert, 3, &em_config_for(Mode::TimeBased, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = synthesize(Method::Rf, &expert, &model, None, 30.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    fn base_config(method: Method, limits: Option<Vec<FrameLimits>>) -> AugmentConfig {
        AugmentConfig {
            method,
            max_demos: 6,
            max_iters: 10,
            snr_db: 30.0,
            selection: Selection::Original,
            components: 3,
            seed: 7,
            limits,
        }
    }

    #[test]
    fn rejected_candidate_leaves_the_initial_model() {
        let expert = expert_set();
        // destructive noise level: the candidate can only raise the cost
        let cfg = AugmentConfig {
            max_iters: 1,
            snr_db: -20.0,
            ..base_config(Method::Noise, None)
        };
        let outcome = run_algorithm1(&expert, None, &cfg).unwrap();
        assert_eq!(outcome.log.iterations.len(), 1);
        assert!(!outcome.log.iterations[0].accepted);
        assert_eq!(outcome.log.discarded_count, 1);
        assert_eq!(outcome.demos.len(), expert.len());
        assert_eq!(outcome.log.final_cost, outcome.log.initial_cost);
        let recomputed =
            reproduction_cost(&outcome.model, &expert, CostMode::Rms).unwrap();
        assert_abs_diff_eq!(recomputed.mean, outcome.log.final_cost, epsilon = 1e-12);
    }

    #[test]
    fn generalization_without_validation_is_an_argument_error() {
        let expert = expert_set();
        let cfg = AugmentConfig {
            selection: Selection::Generalization,
            ..base_config(Method::Noise, None)
        };
        let err = run_algorithm1(&expert, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn too_small_demo_cap_is_an_argument_error() {
        let expert = expert_set();
        let cfg = AugmentConfig {
            max_demos: 3,
            ..base_config(Method::Noise, None)
        };
        assert!(matches!(
            run_algorithm1(&expert, None, &cfg).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn replaying_a_seed_reproduces_the_log_bit_for_bit() {
        let expert = expert_set();
        let situations: Vec<_> = expert.iter().map(|d| d.situation().clone()).collect();
        let limits = limits_from_situations(&situations, 0.25).unwrap();
        let cfg = base_config(Method::RfNoise, Some(limits));
        let a = run_algorithm1(&expert, None, &cfg).unwrap();
        let b = run_algorithm1(&expert, None, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.weights(), b.model.weights());
        assert_eq!(a.model.per_frame(), b.model.per_frame());
    }

    #[test]
    fn run_invariants_hold_and_synthetics_never_enter_the_cost() {
        let expert = expert_set();
        let situations: Vec<_> = expert.iter().map(|d| d.situation().clone()).collect();
        let limits = limits_from_situations(&situations, 0.25).unwrap();
        let cfg = AugmentConfig {
            max_iters: 15,
            ..base_config(Method::Rf, Some(limits))
        };
        let outcome = run_algorithm1(&expert, None, &cfg).unwrap();
        let log = &outcome.log;

        assert!(log.iterations.len() <= cfg.max_iters);
        assert!(outcome.demos.len() <= cfg.max_demos);
        assert!(log.final_cost <= log.initial_cost);
        let mut demos_so_far = expert.len();
        for record in &log.iterations {
            if record.accepted {
                assert!(record.cost_after < record.cost_before);
                demos_so_far += 1;
            }
            assert_eq!(record.n_demos, demos_so_far);
        }
        assert_eq!(
            log.discarded_count,
            log.iterations.iter().filter(|r| !r.accepted).count()
        );

        // original expert demos first and unmodified
        for (kept, original) in outcome.demos.iter().zip(&expert) {
            assert_eq!(kept, original);
        }

        // the reported cost comes from the expert set alone
        let recomputed =
            reproduction_cost(&outcome.model, &expert, CostMode::Rms).unwrap();
        assert_abs_diff_eq!(recomputed.mean, log.final_cost, epsilon = 1e-12);
    }
}
