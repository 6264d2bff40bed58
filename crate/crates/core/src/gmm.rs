//! Gaussian mixture machinery: density evaluation, expectation-maximization,
//! and Gaussian mixture regression.
//!
//! The EM routine works on one or more aligned data blocks sharing a single
//! set of responsibilities. A plain mixture is the one-block case; the
//! task-parameterized fit reuses the same loop with one block per frame.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::{log_sum_exp, symmetrize};

const LN_2PI: f64 = 1.8378770664093453;

/// A single Gaussian: mean vector and symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    /// Validate symmetry (within 1e-12 relative to the largest entry) and
    /// positive-definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension {
                what: "covariance",
                expected: d,
                actual: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::argument("gaussian parameters must be finite"));
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::numeric(format!(
                "covariance is asymmetric (max |S - S'| = {asym:.3e})"
            )));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::numeric("covariance is not positive-definite"));
        }
        Ok(GaussianComponent { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log of the Gaussian density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "density argument",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let factor = Factored::new(&self.mean, &self.cov)?;
        Ok(factor.log_density(x))
    }
}

/// Cholesky factorization of a component, cached for repeated evaluations.
struct Factored {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Factored {
    fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::numeric("covariance is not positive-definite"))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Factored {
            mean: mean.clone(),
            chol,
            log_det,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let maha = self.chol.solve(&d).dot(&d);
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det + maha)
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        self.chol.solve(&d).dot(&d)
    }
}

/// A Gaussian mixture over a joint input/output space.
///
/// The first `input_dim` coordinates are the regression input, the rest the
/// regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    input_dim: usize,
}

impl Gmm {
    pub fn new(
        weights: Vec<f64>,
        components: Vec<GaussianComponent>,
        input_dim: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::argument("mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::Dimension {
                what: "mixture weights",
                expected: components.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::argument("mixture weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::argument(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::argument("components must share one dimension"));
        }
        if input_dim == 0 || input_dim >= d {
            return Err(Error::argument(format!(
                "input dimension must satisfy 0 < input_dim < {d}, got {input_dim}"
            )));
        }
        Ok(Gmm {
            weights,
            components,
            input_dim,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.components[0].dim() - self.input_dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Condition the mixture on an input point (Gaussian mixture regression).
    ///
    /// Responsibilities are normalized with log-sum-exp; if every component
    /// density underflows, the nearest component (input-space Mahalanobis
    /// distance) takes over and the result is flagged.
    pub fn gmr(&self, x: &DVector<f64>) -> Result<GmrOutput> {
        let di = self.input_dim;
        let dout = self.output_dim();
        if x.len() != di {
            return Err(Error::Dimension {
                what: "regression input",
                expected: di,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("regression input must be finite"));
        }

        let k = self.n_components();
        let mut log_h = vec![0.0; k];
        let mut cond_means = Vec::with_capacity(k);
        let mut cond_covs = Vec::with_capacity(k);
        let mut mahas = vec![0.0; k];
        for (i, comp) in self.components.iter().enumerate() {
            let mean_in = comp.mean.rows(0, di).into_owned();
            let mean_out = comp.mean.rows(di, dout).into_owned();
            let cov_in = comp.cov.view((0, 0), (di, di)).into_owned();
            let cov_out = comp.cov.view((di, di), (dout, dout)).into_owned();
            let cov_oi = comp.cov.view((di, 0), (dout, di)).into_owned();

            let factor = Factored::new(&mean_in, &cov_in)?;
            mahas[i] = factor.mahalanobis(x);
            log_h[i] = self.weights[i].ln() + factor.log_density(x);

            let diff = x - &mean_in;
            let gain = factor.chol.solve(&diff);
            cond_means.push(&mean_out + &cov_oi * gain);
            let mut cond_cov = &cov_out - &cov_oi * factor.chol.solve(&cov_oi.transpose());
            symmetrize(&mut cond_cov);
            cond_covs.push(cond_cov);
        }

        let lse = log_sum_exp(&log_h);
        let mut fallback = false;
        let h: Vec<f64> = if lse.is_finite() {
            log_h.iter().map(|l| (l - lse).exp()).collect()
        } else {
            fallback = true;
            let nearest = mahas
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("mahalanobis is not NaN"))
                .map(|(i, _)| i)
                .expect("mixture has at least one component");
            let mut one_hot = vec![0.0; k];
            one_hot[nearest] = 1.0;
            one_hot
        };

        let mut mean = DVector::zeros(dout);
        for (hi, m) in h.iter().zip(&cond_means) {
            mean += m * *hi;
        }
        let mut cov = DMatrix::zeros(dout, dout);
        for ((hi, v), m) in h.iter().zip(&cond_covs).zip(&cond_means) {
            cov += (v + m * m.transpose()) * *hi;
        }
        cov -= &mean * mean.transpose();
        symmetrize(&mut cov);

        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("regression produced non-finite output"));
        }
        Ok(GmrOutput {
            mean,
            cov,
            responsibilities: h,
            fallback,
        })
    }
}

/// Result of conditioning a mixture on an input point.
#[derive(Debug, Clone)]
pub struct GmrOutput {
    /// Expected output.
    pub mean: DVector<f64>,
    /// Output covariance including the spread between component predictions.
    pub cov: DMatrix<f64>,
    /// Per-component responsibilities at the input point; they sum to one.
    pub responsibilities: Vec<f64>,
    /// True when every component density underflowed and the nearest
    /// component was used instead.
    pub fallback: bool,
}

/// How EM chooses its starting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// Sort samples by the first input coordinate and split them into K
    /// contiguous bins. Suited to time-indexed data.
    TimeBinning,
    /// Seeded k-means (k-means++ seeding, Lloyd iterations) on the samples.
    KMeans,
}

/// Settings for [`em_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Upper bound on EM iterations.
    pub max_iters: usize,
    /// Convergence threshold on the change in mean log-likelihood.
    pub log_lik_tol: f64,
    /// Ridge added to every covariance diagonal after each M-step.
    pub cov_floor: f64,
    pub init: InitMethod,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            log_lik_tol: 1e-6,
            cov_floor: 1e-6,
            init: InitMethod::TimeBinning,
            seed: 0,
        }
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Mean log-likelihood evaluated at the start of each iteration.
    pub log_likelihoods: Vec<f64>,
    /// True when the run stopped on the likelihood tolerance rather than the
    /// iteration cap.
    pub converged: bool,
}

/// Fit a Gaussian mixture to `data` (one sample per row).
///
/// `input_dim` fixes the regression input/output split of the result.
pub fn em_fit(data: &DMatrix<f64>, k: usize, input_dim: usize, cfg: &EmConfig) -> Result<Gmm> {
    em_fit_traced(data, k, input_dim, cfg).map(|(gmm, _)| gmm)
}

/// [`em_fit`] plus the log-likelihood trace, for convergence diagnostics.
pub fn em_fit_traced(
    data: &DMatrix<f64>,
    k: usize,
    input_dim: usize,
    cfg: &EmConfig,
) -> Result<(Gmm, EmTrace)> {
    let blocks = [data.clone()];
    let fit = em_fit_blocks(&blocks, k, cfg)?;
    let gmm = Gmm::new(
        fit.weights,
        fit.per_block.into_iter().next().expect("one block in"),
        input_dim,
    )?;
    Ok((gmm, fit.trace))
}

/// EM output over aligned blocks: shared weights, per-block components.
pub(crate) struct BlockFit {
    pub weights: Vec<f64>,
    pub per_block: Vec<Vec<GaussianComponent>>,
    pub trace: EmTrace,
}

#[derive(Clone)]
struct BlockParams {
    weights: Vec<f64>,
    comps: Vec<Vec<GaussianComponent>>,
}

/// Fit one set of mixture weights jointly over aligned data blocks.
///
/// Every block holds the same samples seen in a different coordinate frame;
/// responsibilities multiply the per-block densities. The single-block case
/// is ordinary EM.
pub(crate) fn em_fit_blocks(blocks: &[DMatrix<f64>], k: usize, cfg: &EmConfig) -> Result<BlockFit> {
    if blocks.is_empty() {
        return Err(Error::argument("EM needs at least one data block"));
    }
    let t = blocks[0].nrows();
    for b in blocks {
        if b.nrows() != t {
            return Err(Error::Dimension {
                what: "block sample count",
                expected: t,
                actual: b.nrows(),
            });
        }
        if b.ncols() == 0 {
            return Err(Error::argument("data blocks must have at least one column"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("training data must be finite"));
        }
    }
    if k == 0 {
        return Err(Error::argument("component count must be at least 1"));
    }
    if t < k {
        return Err(Error::argument(format!(
            "need at least as many samples as components: {t} samples, {k} components"
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::argument("max_iters must be at least 1"));
    }
    if !(cfg.log_lik_tol > 0.0 && cfg.log_lik_tol.is_finite()) {
        return Err(Error::argument("log_lik_tol must be positive and finite"));
    }
    if !(cfg.cov_floor >= 0.0 && cfg.cov_floor.is_finite()) {
        return Err(Error::argument("cov_floor must be non-negative and finite"));
    }

    // Rows are fixed for the whole run; pull them out once.
    let rows: Vec<Vec<DVector<f64>>> = blocks
        .iter()
        .map(|b| (0..t).map(|i| b.row(i).transpose()).collect())
        .collect();

    let mut params = init_params(&rows, k, cfg)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev: Option<(f64, BlockParams)> = None;

    for _ in 0..cfg.max_iters {
        let (resp, mean_ll) = e_step(&rows, &params)?;
        if let Some((prev_ll, prev_params)) = &prev {
            if mean_ll < *prev_ll {
                // The covariance ridge can nudge the likelihood down once the
                // run has converged; keep the better parameters and stop.
                params = prev_params.clone();
                converged = true;
                break;
            }
            if mean_ll - prev_ll < cfg.log_lik_tol {
                trace.push(mean_ll);
                converged = true;
                break;
            }
        }
        trace.push(mean_ll);
        prev = Some((mean_ll, params.clone()));
        params = m_step(&rows, &resp, k, cfg.cov_floor)?;
    }

    Ok(BlockFit {
        weights: params.weights,
        per_block: params.comps,
        trace: EmTrace {
            log_likelihoods: trace,
            converged,
        },
    })
}

fn init_params(rows: &[Vec<DVector<f64>>], k: usize, cfg: &EmConfig) -> Result<BlockParams> {
    let t = rows[0].len();
    let assignment: Vec<usize> = match cfg.init {
        InitMethod::TimeBinning => {
            let mut order: Vec<usize> = (0..t).collect();
            order.sort_by(|&a, &b| {
                rows[0][a][0]
                    .partial_cmp(&rows[0][b][0])
                    .expect("data was checked finite")
            });
            let mut assignment = vec![0; t];
            for (rank, &idx) in order.iter().enumerate() {
                assignment[idx] = rank * k / t;
            }
            assignment
        }
        InitMethod::KMeans => {
            let features = concat_rows(rows);
            kmeans(&features, k, cfg.seed)
        }
    };

    let counts = {
        let mut c = vec![0usize; k];
        for &a in &assignment {
            c[a] += 1;
        }
        c
    };
    debug_assert!(counts.iter().all(|&c| c > 0));

    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / t as f64).collect();
    let comps = rows
        .iter()
        .map(|block| {
            (0..k)
                .map(|c| {
                    let members: Vec<&DVector<f64>> = assignment
                        .iter()
                        .zip(block)
                        .filter(|(&a, _)| a == c)
                        .map(|(_, r)| r)
                        .collect();
                    cluster_stats(&members, cfg.cov_floor)
                })
                .collect()
        })
        .collect();
    Ok(BlockParams { weights, comps })
}

fn concat_rows(rows: &[Vec<DVector<f64>>]) -> Vec<DVector<f64>> {
    let t = rows[0].len();
    (0..t)
        .map(|i| {
            let total: usize = rows.iter().map(|b| b[i].len()).sum();
            let mut v = DVector::zeros(total);
            let mut at = 0;
            for block in rows {
                v.rows_mut(at, block[i].len()).copy_from(&block[i]);
                at += block[i].len();
            }
            v
        })
        .collect()
}

fn cluster_stats(members: &[&DVector<f64>], floor: f64) -> GaussianComponent {
    let d = members[0].len();
    let n = members.len() as f64;
    let mut mean = DVector::zeros(d);
    for m in members {
        mean += *m;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for m in members {
        let diff = *m - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    for i in 0..d {
        cov[(i, i)] += floor;
    }
    symmetrize(&mut cov);
    GaussianComponent { mean, cov }
}

fn e_step(rows: &[Vec<DVector<f64>>], params: &BlockParams) -> Result<(DMatrix<f64>, f64)> {
    let t = rows[0].len();
    let k = params.weights.len();
    let factors: Vec<Vec<Factored>> = params
        .comps
        .iter()
        .map(|block| {
            block
                .iter()
                .map(|c| Factored::new(&c.mean, &c.cov))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut resp = DMatrix::zeros(t, k);
    let mut total_ll = 0.0;
    let mut log_h = vec![0.0; k];
    for i in 0..t {
        for (c, lh) in log_h.iter_mut().enumerate() {
            let mut l = params.weights[c].ln();
            for (block_rows, block_factors) in rows.iter().zip(&factors) {
                l += block_factors[c].log_density(&block_rows[i]);
            }
            *lh = l;
        }
        let lse = log_sum_exp(&log_h);
        if !lse.is_finite() {
            return Err(Error::numeric(
                "every component underflowed during the E-step",
            ));
        }
        total_ll += lse;
        for c in 0..k {
            resp[(i, c)] = (log_h[c] - lse).exp();
        }
    }
    Ok((resp, total_ll / t as f64))
}

fn m_step(
    rows: &[Vec<DVector<f64>>],
    resp: &DMatrix<f64>,
    k: usize,
    floor: f64,
) -> Result<BlockParams> {
    let t = rows[0].len();
    let mut nk = vec![0.0; k];
    for c in 0..k {
        for i in 0..t {
            nk[c] += resp[(i, c)];
        }
        if nk[c] <= 0.0 {
            return Err(Error::numeric("a component lost all responsibility"));
        }
    }
    let total: f64 = nk.iter().sum();
    let weights: Vec<f64> = nk.iter().map(|n| n / total).collect();

    let comps = rows
        .iter()
        .map(|block| {
            (0..k)
                .map(|c| {
                    let d = block[0].len();
                    let mut mean = DVector::zeros(d);
                    for i in 0..t {
                        mean += &block[i] * resp[(i, c)];
                    }
                    mean /= nk[c];
                    let mut cov = DMatrix::zeros(d, d);
                    for i in 0..t {
                        let diff = &block[i] - &mean;
                        cov += (&diff * diff.transpose()) * resp[(i, c)];
                    }
                    cov /= nk[c];
                    for j in 0..d {
                        cov[(j, j)] += floor;
                    }
                    symmetrize(&mut cov);
                    GaussianComponent { mean, cov }
                })
                .collect()
        })
        .collect();
    Ok(BlockParams { weights, comps })
}

/// Seeded k-means on row vectors: k-means++ seeding, Lloyd iterations,
/// deterministic tie-breaking, empty clusters repaired by reassigning the
/// farthest point of a cluster that can spare one.
fn kmeans(points: &[DVector<f64>], k: usize, seed: u64) -> Vec<usize> {
    let t = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<DVector<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..t)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| (p - &centroids[0]).norm_squared())
        .collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = t - 1;
            for (i, d) in dist2.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..t)
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min((p - &c).norm_squared());
        }
        centroids.push(c);
    }

    let mut assignment = vec![0usize; t];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = (p - centroid).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        repair_empty_clusters(&mut assignment, points, &centroids, k);
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = assignment
                .iter()
                .zip(points)
                .filter(|(&a, _)| a == c)
                .map(|(_, p)| p)
                .collect();
            let mut mean = DVector::zeros(points[0].len());
            for m in &members {
                mean += *m;
            }
            mean /= members.len() as f64;
            *centroid = mean;
        }
        if !changed {
            break;
        }
    }
    assignment
}

fn repair_empty_clusters(
    assignment: &mut [usize],
    points: &[DVector<f64>],
    centroids: &[DVector<f64>],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = (0..k).find(|&c| counts[c] == 0) else {
            break;
        };
        let mut donor: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = (p - &centroids[assignment[i]]).norm_squared();
            if donor.is_none() || d > donor.expect("just checked").0 {
                donor = Some((d, i));
            }
        }
        let (_, idx) = donor.expect("k <= sample count leaves a donor cluster");
        assignment[idx] = empty;
    }
}
