//! Reproduction costs: per-demonstration root-mean-square error and a
//! normalized dynamic time warping distance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which cost a report holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    Rms,
    Dtw,
}

impl CostMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostMode::Rms => "rms",
            CostMode::Dtw => "dtw",
        }
    }
}

impl std::str::FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rms" => Ok(CostMode::Rms),
            "dtw" => Ok(CostMode::Dtw),
            other => Err(Error::argument(format!(
                "unknown cost {other:?}, expected \"rms\" or \"dtw\""
            ))),
        }
    }
}

impl std::fmt::Display for CostMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Costs per demonstration plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub per_demo: Vec<f64>,
    pub mean: f64,
    pub mode: CostMode,
}

/// The exact warping variant computed by [`dtw_distance`], for output
/// metadata.
pub const DTW_VARIANT: &str = "symmetric steps {(1,0),(0,1),(1,1)} weighted 1/1/2, \
     euclidean point distance, normalized by the summed lengths";

fn check_pairs(reproductions: &[DMatrix<f64>], references: &[DMatrix<f64>]) -> Result<()> {
    if reproductions.is_empty() {
        return Err(Error::argument("cost needs at least one trajectory pair"));
    }
    if reproductions.len() != references.len() {
        return Err(Error::Dimension {
            what: "trajectory pairs",
            expected: references.len(),
            actual: reproductions.len(),
        });
    }
    Ok(())
}

/// Mean root-mean-square error per trajectory pair.
///
/// Pairs must share their shape exactly; the per-pair cost is the square
/// root of the mean squared euclidean row distance.
pub fn rms_cost(
    reproductions: &[DMatrix<f64>],
    references: &[DMatrix<f64>],
) -> Result<CostReport> {
    check_pairs(reproductions, references)?;
    let per_demo: Vec<f64> = reproductions
        .iter()
        .zip(references)
        .map(|(y, r)| {
            if y.nrows() != r.nrows() || y.ncols() != r.ncols() {
                return Err(Error::Dimension {
                    what: "trajectory shape",
                    expected: r.nrows() * r.ncols(),
                    actual: y.nrows() * y.ncols(),
                });
            }
            let total: f64 = (0..y.nrows())
                .map(|i| (y.row(i) - r.row(i)).norm_squared())
                .sum();
            Ok((total / y.nrows() as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let mean = per_demo.iter().sum::<f64>() / per_demo.len() as f64;
    Ok(CostReport {
        per_demo,
        mean,
        mode: CostMode::Rms,
    })
}

/// Normalized dynamic time warping distance between two trajectories.
///
/// Alignment paths may step (1,0), (0,1), or (1,1) with weights 1, 1 and 2;
/// both endpoints are matched, the origin cell carries the diagonal weight,
/// and the optimal path cost is divided by the summed sequence lengths.
/// Sequences of different lengths are fine; the column counts must match.
pub fn dtw_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            what: "trajectory columns",
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    let (ta, tb) = (a.nrows(), b.nrows());
    if ta == 0 || tb == 0 {
        return Err(Error::argument("trajectories must not be empty"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::argument("trajectories must be finite"));
    }

    let dist = |i: usize, j: usize| (a.row(i) - b.row(j)).norm();
    let mut g = vec![vec![0.0f64; tb]; ta];
    g[0][0] = 2.0 * dist(0, 0);
    for j in 1..tb {
        g[0][j] = g[0][j - 1] + dist(0, j);
    }
    for i in 1..ta {
        g[i][0] = g[i - 1][0] + dist(i, 0);
        for j in 1..tb {
            let d = dist(i, j);
            g[i][j] = (g[i - 1][j] + d)
                .min(g[i][j - 1] + d)
                .min(g[i - 1][j - 1] + 2.0 * d);
        }
    }
    Ok(g[ta - 1][tb - 1] / (ta + tb) as f64)
}

/// Mean [`dtw_distance`] per trajectory pair.
pub fn dtw_cost(
    reproductions: &[DMatrix<f64>],
    references: &[DMatrix<f64>],
) -> Result<CostReport> {
    check_pairs(reproductions, references)?;
    let per_demo: Vec<f64> = reproductions
        .iter()
        .zip(references)
        .map(|(y, r)| dtw_distance(y, r))
        .collect::<Result<_>>()?;
    let mean = per_demo.iter().sum::<f64>() / per_demo.len() as f64;
    Ok(CostReport {
        per_demo,
        mean,
        mode: CostMode::Dtw,
    })
}
