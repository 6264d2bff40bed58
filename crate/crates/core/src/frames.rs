//! Rigid task frames and the affine maps they induce on model space.
//!
//! A [`Frame`] is a rotation plus a translation in 2 or 3 dimensions,
//! validated at construction. [`AugmentedFrame`] lifts a frame onto a model's
//! joint input/output space: time-based models keep the time input untouched
//! and rotate the position block, trajectory-based models rotate position and
//! displacement blocks together and translate only the position.
//! [`FrameLimits`] bounds the pose space for frame sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::util::symmetrize;

/// Tolerance for the orthonormality and determinant checks on rotations.
pub const ROTATION_TOL: f64 = 1e-9;

/// Number of Euler angles parameterizing a rotation in `p` dimensions:
/// one planar angle for p = 2, yaw-pitch-roll for p = 3.
pub fn angle_count(p: usize) -> usize {
    if p == 2 {
        1
    } else {
        3
    }
}

fn check_dim(p: usize) -> Result<()> {
    if p == 2 || p == 3 {
        Ok(())
    } else {
        Err(Error::argument(format!(
            "frame dimension must be 2 or 3, got {p}"
        )))
    }
}

fn check_rotation(r: &DMatrix<f64>) -> Result<()> {
    let p = r.nrows();
    if r.ncols() != p {
        return Err(Error::Dimension {
            what: "rotation matrix columns",
            expected: p,
            actual: r.ncols(),
        });
    }
    check_dim(p)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidFrame("rotation has non-finite entries".into()));
    }
    let gram = r.transpose() * r;
    let ident = DMatrix::<f64>::identity(p, p);
    let ortho_err = (&gram - &ident).amax();
    if ortho_err > ROTATION_TOL {
        return Err(Error::InvalidFrame(format!(
            "rotation is not orthonormal (max |R'R - I| = {ortho_err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::InvalidFrame(format!(
            "rotation determinant is {det:.9}, expected 1"
        )));
    }
    Ok(())
}

/// Build a rotation matrix from Euler angles (radians).
///
/// One angle yields the planar 2x2 rotation; three angles are interpreted as
/// intrinsic Z-Y-X yaw, pitch, roll and yield Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn euler_to_rotation(angles: &[f64]) -> Result<DMatrix<f64>> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::argument("euler angles must be finite"));
    }
    match angles {
        [theta] => {
            let (s, c) = theta.sin_cos();
            Ok(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
        }
        [yaw, pitch, roll] => {
            let (sa, ca) = yaw.sin_cos();
            let (sb, cb) = pitch.sin_cos();
            let (sg, cg) = roll.sin_cos();
            Ok(DMatrix::from_row_slice(
                3,
                3,
                &[
                    ca * cb,
                    ca * sb * sg - sa * cg,
                    ca * sb * cg + sa * sg,
                    sa * cb,
                    sa * sb * sg + ca * cg,
                    sa * sb * cg - ca * sg,
                    -sb,
                    cb * sg,
                    cb * cg,
                ],
            ))
        }
        _ => Err(Error::argument(format!(
            "expected 1 or 3 euler angles, got {}",
            angles.len()
        ))),
    }
}

/// Recover the Euler angles of a valid rotation matrix.
///
/// Inverse of [`euler_to_rotation`]. At the p = 3 gimbal-lock poses
/// (|pitch| = pi/2) the roll is fixed to zero and the yaw absorbs the
/// remaining freedom, which is one valid decomposition among many.
pub fn rotation_to_euler(r: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_rotation(r)?;
    if r.nrows() == 2 {
        return Ok(vec![r[(1, 0)].atan2(r[(0, 0)])]);
    }
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    if 1.0 - sp.abs() < 1e-12 {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(sp);
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return Ok(vec![yaw, pitch, 0.0]);
    }
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let pitch = sp.asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Ok(vec![yaw, pitch, roll])
}

/// A rigid pose: rotation matrix plus translation, in 2 or 3 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

impl Frame {
    /// Validate and wrap a rotation/translation pair.
    pub fn new(rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.len() != rotation.nrows() {
            return Err(Error::Dimension {
                what: "frame translation",
                expected: rotation.nrows(),
                actual: translation.len(),
            });
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(
                "translation has non-finite entries".into(),
            ));
        }
        Ok(Frame {
            rotation,
            translation,
        })
    }

    /// The identity pose at the origin.
    pub fn identity(p: usize) -> Result<Self> {
        check_dim(p)?;
        Ok(Frame {
            rotation: DMatrix::identity(p, p),
            translation: DVector::zeros(p),
        })
    }

    /// Build a frame from Euler angles and a translation.
    pub fn from_euler(angles: &[f64], translation: &[f64]) -> Result<Self> {
        Frame::new(
            euler_to_rotation(angles)?,
            DVector::from_column_slice(translation),
        )
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// Euler angles of this frame's rotation.
    pub fn euler_angles(&self) -> Vec<f64> {
        rotation_to_euler(&self.rotation).expect("frame rotation was validated at construction")
    }

    /// Map a point from this frame's local coordinates to global: R x + b.
    pub fn to_global(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        Ok(&self.rotation * x + &self.translation)
    }

    /// Map a global point into this frame's local coordinates: R' (y - b).
    pub fn to_local(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(y)?;
        Ok(self.rotation.transpose() * (y - &self.translation))
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "point",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Closed intervals bounding frame poses, used when sampling new situations.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLimits {
    euler_min: Vec<f64>,
    euler_max: Vec<f64>,
    trans_min: Vec<f64>,
    trans_max: Vec<f64>,
}

impl FrameLimits {
    pub fn new(
        euler_min: Vec<f64>,
        euler_max: Vec<f64>,
        trans_min: Vec<f64>,
        trans_max: Vec<f64>,
    ) -> Result<Self> {
        let p = trans_min.len();
        check_dim(p)?;
        if trans_max.len() != p {
            return Err(Error::Dimension {
                what: "translation bounds",
                expected: p,
                actual: trans_max.len(),
            });
        }
        let n_angles = angle_count(p);
        if euler_min.len() != n_angles || euler_max.len() != n_angles {
            return Err(Error::Dimension {
                what: "euler bounds",
                expected: n_angles,
                actual: euler_min.len().max(euler_max.len()),
            });
        }
        let all = euler_min
            .iter()
            .chain(&euler_max)
            .chain(&trans_min)
            .chain(&trans_max);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::argument("frame limits must be finite"));
        }
        let ordered = euler_min.iter().zip(&euler_max).all(|(lo, hi)| lo <= hi)
            && trans_min.iter().zip(&trans_max).all(|(lo, hi)| lo <= hi);
        if !ordered {
            return Err(Error::argument("frame limits must satisfy min <= max"));
        }
        Ok(FrameLimits {
            euler_min,
            euler_max,
            trans_min,
            trans_max,
        })
    }

    /// Spatial dimension these limits describe.
    pub fn dim(&self) -> usize {
        self.trans_min.len()
    }

    pub fn euler_min(&self) -> &[f64] {
        &self.euler_min
    }

    pub fn euler_max(&self) -> &[f64] {
        &self.euler_max
    }

    pub fn trans_min(&self) -> &[f64] {
        &self.trans_min
    }

    pub fn trans_max(&self) -> &[f64] {
        &self.trans_max
    }

    /// True when the frame's pose lies within the closed intervals.
    pub fn contains(&self, frame: &Frame) -> bool {
        if frame.dim() != self.dim() {
            return false;
        }
        let angles = frame.euler_angles();
        let angle_ok = angles
            .iter()
            .zip(self.euler_min.iter().zip(&self.euler_max))
            .all(|(a, (lo, hi))| *lo <= *a && *a <= *hi);
        let trans_ok = frame
            .translation()
            .iter()
            .zip(self.trans_min.iter().zip(&self.trans_max))
            .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi);
        angle_ok && trans_ok
    }
}

/// Draw a frame uniformly within the limits' closed intervals.
///
/// Angles are drawn first, then translations, each in index order, so a given
/// RNG state always yields the same frame.
pub fn sample_frame<R: Rng + ?Sized>(limits: &FrameLimits, rng: &mut R) -> Frame {
    let angles: Vec<f64> = limits
        .euler_min
        .iter()
        .zip(&limits.euler_max)
        .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect();
    let trans: Vec<f64> = limits
        .trans_min
        .iter()
        .zip(&limits.trans_max)
        .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect();
    Frame::from_euler(&angles, &trans).expect("angles and translations within limits are valid")
}

/// Per-frame pose bounds derived from observed situations.
///
/// For every frame index, the minimum and maximum of the observed Euler
/// angles and translations are widened symmetrically by `expansion` times the
/// observed range; a zero range is widened by `expansion` times one unit.
pub fn limits_from_situations<S: AsRef<[Frame]>>(
    situations: &[S],
    expansion: f64,
) -> Result<Vec<FrameLimits>> {
    if !(expansion.is_finite() && expansion >= 0.0) {
        return Err(Error::argument(format!(
            "expansion must be a finite non-negative number, got {expansion}"
        )));
    }
    let first = situations
        .first()
        .ok_or_else(|| Error::argument("limits need at least one situation"))?
        .as_ref();
    let n_frames = first.len();
    if n_frames == 0 {
        return Err(Error::argument("situations must contain at least one frame"));
    }
    let p = first[0].dim();
    for sit in situations {
        let frames = sit.as_ref();
        if frames.len() != n_frames {
            return Err(Error::Dimension {
                what: "frames per situation",
                expected: n_frames,
                actual: frames.len(),
            });
        }
        if let Some(f) = frames.iter().find(|f| f.dim() != p) {
            return Err(Error::Dimension {
                what: "frame dimension",
                expected: p,
                actual: f.dim(),
            });
        }
    }

    let widen = |lo: f64, hi: f64| {
        let range = hi - lo;
        let pad = expansion * if range > 0.0 { range } else { 1.0 };
        (lo - pad, hi + pad)
    };

    (0..n_frames)
        .map(|n| {
            let n_angles = angle_count(p);
            let mut euler_min = vec![f64::INFINITY; n_angles];
            let mut euler_max = vec![f64::NEG_INFINITY; n_angles];
            let mut trans_min = vec![f64::INFINITY; p];
            let mut trans_max = vec![f64::NEG_INFINITY; p];
            for sit in situations {
                let frame = &sit.as_ref()[n];
                for (i, a) in frame.euler_angles().iter().enumerate() {
                    euler_min[i] = euler_min[i].min(*a);
                    euler_max[i] = euler_max[i].max(*a);
                }
                for (i, t) in frame.translation().iter().enumerate() {
                    trans_min[i] = trans_min[i].min(*t);
                    trans_max[i] = trans_max[i].max(*t);
                }
            }
            for i in 0..n_angles {
                (euler_min[i], euler_max[i]) = widen(euler_min[i], euler_max[i]);
            }
            for i in 0..p {
                (trans_min[i], trans_max[i]) = widen(trans_min[i], trans_max[i]);
            }
            FrameLimits::new(euler_min, euler_max, trans_min, trans_max)
        })
        .collect()
    }

/// A frame lifted onto a model's joint input/output space.
///
/// The map is y = A x + b with A orthogonal, so the inverse is A' (y - b).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFrame {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AugmentedFrame {
    /// Lift for time-based models on (time, position): the 1x1 time block is
    /// the identity and the position block carries the frame's rotation and
    /// translation.
    pub fn time_based(frame: &Frame) -> Self {
        let p = frame.dim();
        let d = 1 + p;
        let mut matrix = DMatrix::zeros(d, d);
        matrix[(0, 0)] = 1.0;
        matrix.view_mut((1, 1), (p, p)).copy_from(frame.rotation());
        let mut offset = DVector::zeros(d);
        offset.rows_mut(1, p).copy_from(frame.translation());
        AugmentedFrame { matrix, offset }
    }

    /// Lift for trajectory-based models on (position, displacement): both
    /// blocks rotate, only the position block translates.
    pub fn trajectory_based(frame: &Frame) -> Self {
        let p = frame.dim();
        let d = 2 * p;
        let mut matrix = DMatrix::zeros(d, d);
        matrix.view_mut((0, 0), (p, p)).copy_from(frame.rotation());
        matrix.view_mut((p, p), (p, p)).copy_from(frame.rotation());
        let mut offset = DVector::zeros(d);
        offset.rows_mut(0, p).copy_from(frame.translation());
        AugmentedFrame { matrix, offset }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// A x + b.
    pub fn to_global(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        Ok(&self.matrix * x + &self.offset)
    }

    /// A' (y - b).
    pub fn to_local(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(y)?;
        Ok(self.matrix.transpose() * (y - &self.offset))
    }

    /// Push a Gaussian through the affine map: mean A u + b, covariance
    /// A S A'. The input covariance must be symmetric positive-definite.
    pub fn transform_gaussian(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        if mean.len() != d {
            return Err(Error::Dimension {
                what: "gaussian mean",
                expected: d,
                actual: mean.len(),
            });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension {
                what: "gaussian covariance",
                expected: d,
                actual: cov.nrows().max(cov.ncols()),
            });
        }
        if nalgebra::Cholesky::new(cov.clone()).is_none() {
            return Err(Error::numeric(
                "covariance is not positive-definite in transform_gaussian",
            ));
        }
        let new_mean = &self.matrix * mean + &self.offset;
        let mut new_cov = &self.matrix * cov * self.matrix.transpose();
        symmetrize(&mut new_cov);
        Ok((new_mean, new_cov))
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "augmented point",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}
