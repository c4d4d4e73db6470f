//! Pose-sequence error metrics in millimeters.

use nalgebra::{Matrix3, Vector3};

use crate::error::{shape_err, Error, Result};
use crate::kinematics::{joint_positions, GeneralizedCoords, KinematicTree};
use crate::motion::Motion;

/// Joint positions per frame, in millimeters.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSequence {
    frames: Vec<Vec<Vector3<f64>>>,
}

impl JointSequence {
    pub fn new(frames: Vec<Vec<Vector3<f64>>>) -> Result<Self> {
        let joints = frames.first().map_or(0, Vec::len);
        for (t, f) in frames.iter().enumerate() {
            if f.len() != joints {
                return Err(shape_err(format!("frame {t} has {} joints, expected {joints}", f.len())));
            }
            if f.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite(format!("joint position at frame {t}")));
            }
        }
        Ok(Self { frames })
    }

    /// Forward kinematics of every frame, converted from meters.
    pub fn from_motion(tree: &KinematicTree, q: &Motion) -> Result<Self> {
        tree.check_dim(q.dim(), "trajectory")?;
        let frames = q
            .rows()
            .map(|r| {
                let p = joint_positions(tree, &GeneralizedCoords::from_slice(tree, r)?)?;
                Ok(p.into_iter().map(|v| v * 1000.0).collect())
            })
            .collect::<Result<_>>()?;
        Self::new(frames)
    }

    pub fn frames(&self) -> &[Vec<Vector3<f64>>] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if self.frame_count() != other.frame_count() || self.joint_count() != other.joint_count() {
            return Err(shape_err(format!(
                "{}x{} joints vs {}x{}",
                self.frame_count(),
                self.joint_count(),
                other.frame_count(),
                other.joint_count()
            )));
        }
        if self.frame_count() == 0 || self.joint_count() == 0 {
            return Err(shape_err("empty joint sequence"));
        }
        Ok(())
    }
}

/// Mean joint distance after subtracting the root joint in every frame.
pub fn mpjpe(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    pred.check_pair(gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        for (a, b) in p.iter().zip(g) {
            sum += ((a - p[0]) - (b - g[0])).norm();
        }
    }
    Ok(sum / (pred.frame_count() * pred.joint_count()) as f64)
}

/// Points must span at least a plane for the rotation to be unique.
fn check_spread(points: &[Vector3<f64>], mean: &Vector3<f64>, what: &str) -> Result<()> {
    let mut spread = Matrix3::zeros();
    for p in points {
        let c = p - mean;
        spread += c * c.transpose();
    }
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::AlignmentDegenerate(format!("collinear {what} points")));
    }
    Ok(())
}

/// Least-squares similarity transform mapping `src` onto `dst`:
/// returns `(scale, rotation, translation)`.
pub fn similarity_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::AlignmentDegenerate(format!("{} points", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    check_spread(src, &mu_s, "source")?;
    check_spread(dst, &mu_d, "target")?;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let sv = svd.singular_values;
    let trace = sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)];
    let scale = trace / var_s;
    let translation = mu_d - scale * rotation * mu_s;
    Ok((scale, rotation, translation))
}

/// Mean joint distance after per-frame similarity Procrustes alignment of
/// `pred` onto `gt`.
pub fn pa_mpjpe(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    pred.check_pair(gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        let (s, r, t) = similarity_align(p, g)?;
        sum += p.iter().zip(g).map(|(a, b)| (s * r * a + t - b).norm()).sum::<f64>();
    }
    Ok(sum / (pred.frame_count() * pred.joint_count()) as f64)
}

/// Mean norm of the difference of second frame differences, in mm/frame².
pub fn accel_error(pred: &JointSequence, gt: &JointSequence) -> Result<f64> {
    pred.check_pair(gt)?;
    let frames = pred.frame_count();
    if frames < 3 {
        return Err(Error::InsufficientFrames { needed: 3, got: frames });
    }
    let (p, g) = (&pred.frames, &gt.frames);
    let mut sum = 0.0;
    for t in 1..frames - 1 {
        for j in 0..pred.joint_count() {
            let ap = p[t + 1][j] - 2.0 * p[t][j] + p[t - 1][j];
            let ag = g[t + 1][j] - 2.0 * g[t][j] + g[t - 1][j];
            sum += (ap - ag).norm();
        }
    }
    Ok(sum / ((frames - 2) * pred.joint_count()) as f64)
}
