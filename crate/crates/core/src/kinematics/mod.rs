//! Kinematic trees, generalized coordinates and trajectories.
//!
//! Generalized coordinates are laid out as
//! `[root rotation vector (3), root position (3), joint rotation vectors (3 per non-root link)]`.

mod derivatives;
mod fk;
pub mod so3;

use std::ops::Range;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::motion::Motion;

pub use derivatives::{finite_difference, stencil, StencilTap, TrajectoryDerivatives};
pub use fk::{forward_kinematics, joint_positions, LinkTransform};

/// Default frame interval, seconds.
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub parent: Option<usize>,
    /// Joint origin in the parent frame, meters. Ignored for the root.
    pub offset: Vector3<f64>,
}

/// Topologically ordered link list with a free root and spherical joints.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    links: Vec<Link>,
    children: Vec<Vec<usize>>,
}

impl KinematicTree {
    pub fn new(links: Vec<Link>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Parameter("kinematic tree has no links".into()));
        }
        if links[0].parent.is_some() {
            return Err(Error::Parameter("link 0 must be the root".into()));
        }
        let mut children = vec![Vec::new(); links.len()];
        for (k, link) in links.iter().enumerate().skip(1) {
            match link.parent {
                None => return Err(Error::Parameter(format!("link {k} is a second root"))),
                Some(p) if p >= k => {
                    return Err(Error::Parameter(format!(
                        "link {k} has parent {p}; parents must precede children"
                    )))
                }
                Some(p) => children[p].push(k),
            }
        }
        if links.iter().any(|l| !l.offset.iter().all(|v| v.is_finite())) {
            return Err(Error::Parameter("non-finite joint offset".into()));
        }
        Ok(Self { links, children })
    }

    /// Serial chain: link `k` hangs off link `k - 1` at `offsets[k]`.
    pub fn chain(offsets: &[Vector3<f64>]) -> Result<Self> {
        let links = offsets
            .iter()
            .enumerate()
            .map(|(k, o)| Link {
                parent: k.checked_sub(1),
                offset: *o,
            })
            .collect();
        Self::new(links)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn part_count(&self) -> usize {
        self.links.len()
    }

    pub fn dim(&self) -> usize {
        6 + 3 * (self.links.len() - 1)
    }

    /// Coordinates owned by link `k`.
    pub fn coord_range(&self, k: usize) -> Range<usize> {
        if k == 0 {
            0..6
        } else {
            6 + 3 * (k - 1)..6 + 3 * k
        }
    }

    /// Link owning coordinate `j`.
    pub fn link_of_coord(&self, j: usize) -> usize {
        if j < 6 {
            0
        } else {
            (j - 6) / 3 + 1
        }
    }

    /// True when coordinate `j` is a rotation-vector component.
    pub fn is_rotational(&self, j: usize) -> bool {
        !(3..6).contains(&j)
    }

    /// Start indices of every rotation-vector triple.
    pub fn rotation_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(0).chain((1..self.links.len()).map(|k| 6 + 3 * (k - 1)))
    }

    pub fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dim() {
            return Err(shape_err(format!(
                "{what} has {len} coordinates, tree expects {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkRecord {
    parent: i64,
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    links: Vec<LinkRecord>,
}

impl Serialize for KinematicTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeRecord {
            links: self
                .links
                .iter()
                .map(|l| LinkRecord {
                    parent: l.parent.map_or(-1, |p| p as i64),
                    offset: [l.offset.x, l.offset.y, l.offset.z],
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KinematicTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let record = TreeRecord::deserialize(d)?;
        let links = record
            .links
            .into_iter()
            .map(|l| Link {
                parent: usize::try_from(l.parent).ok(),
                offset: Vector3::from(l.offset),
            })
            .collect();
        KinematicTree::new(links).map_err(serde::de::Error::custom)
    }
}

/// A single configuration `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedCoords(DVector<f64>);

impl GeneralizedCoords {
    pub fn zeros(tree: &KinematicTree) -> Self {
        Self(DVector::zeros(tree.dim()))
    }

    pub fn from_slice(tree: &KinematicTree, values: &[f64]) -> Result<Self> {
        tree.check_dim(values.len(), "generalized coordinates")?;
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("generalized coordinates".into()));
        }
        Ok(Self(DVector::from_column_slice(values)))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn root_rot(&self) -> Vector3<f64> {
        self.block(0)
    }

    pub fn root_pos(&self) -> Vector3<f64> {
        self.block(3)
    }

    /// Rotation vector of non-root link `k`.
    pub fn joint(&self, k: usize) -> Vector3<f64> {
        self.block(6 + 3 * (k - 1))
    }

    fn block(&self, start: usize) -> Vector3<f64> {
        Vector3::new(self.0[start], self.0[start + 1], self.0[start + 2])
    }

    /// Same configuration with every rotation vector mapped into `[0, pi]`.
    pub fn canonicalized(&self, tree: &KinematicTree) -> Self {
        let mut out = self.0.clone();
        for start in tree.rotation_blocks() {
            let c = so3::canonicalize(&self.block(start));
            out.fixed_rows_mut::<3>(start).copy_from(&c);
        }
        Self(out)
    }
}

/// `T` uniformly spaced frames of generalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    values: Motion,
    dt: f64,
}

impl Trajectory {
    pub fn new(values: Motion, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if values.frames() < 3 {
            return Err(Error::InsufficientFrames {
                needed: 3,
                got: values.frames(),
            });
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(Self { values, dt })
    }

    pub fn values(&self) -> &Motion {
        &self.values
    }

    pub fn into_values(self) -> Motion {
        self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> usize {
        self.values.frames()
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn coords(&self, t: usize) -> GeneralizedCoords {
        GeneralizedCoords(DVector::from_column_slice(self.values.row(t)))
    }

    /// Rotation vectors unwrapped frame by frame against the previous frame.
    pub fn unwrapped(&self, tree: &KinematicTree) -> Result<Trajectory> {
        tree.check_dim(self.dim(), "trajectory")?;
        let mut values = self.values.clone();
        for t in 1..values.frames() {
            for start in tree.rotation_blocks() {
                let prev = Vector3::from_column_slice(&values.row(t - 1)[start..start + 3]);
                let cur = Vector3::from_column_slice(&values.row(t)[start..start + 3]);
                let u = so3::unwrap_near(&cur, &prev);
                values.row_mut(t)[start..start + 3].copy_from_slice(u.as_slice());
            }
        }
        Ok(Trajectory {
            values,
            dt: self.dt,
        })
    }
}

/// On-disk trajectory: `{ "dt": number, "dim": int, "frames": [[...], ...] }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub dt: f64,
    pub dim: usize,
    pub frames: Vec<Vec<f64>>,
}

impl TrajectoryFile {
    pub fn from_motion(values: &Motion, dt: f64) -> Self {
        Self {
            dt,
            dim: values.dim(),
            frames: values.to_rows(),
        }
    }

    pub fn to_motion(&self) -> Result<Motion> {
        let m = Motion::from_rows(&self.frames)?;
        if m.frames() > 0 && m.dim() != self.dim {
            return Err(shape_err(format!(
                "frames have {} columns but dim = {}",
                m.dim(),
                self.dim
            )));
        }
        Ok(m)
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.to_motion()?, self.dt)
    }
}

impl From<&Trajectory> for TrajectoryFile {
    fn from(t: &Trajectory) -> Self {
        Self::from_motion(t.values(), t.dt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_topology() {
        let bad = vec![
            Link {
                parent: None,
                offset: Vector3::zeros(),
            },
            Link {
                parent: Some(1),
                offset: Vector3::zeros(),
            },
        ];
        assert!(KinematicTree::new(bad).is_err());
        let two_roots = vec![
            Link {
                parent: None,
                offset: Vector3::zeros(),
            },
            Link {
                parent: None,
                offset: Vector3::zeros(),
            },
        ];
        assert!(KinematicTree::new(two_roots).is_err());
    }

    #[test]
    fn coordinate_layout() {
        let tree = KinematicTree::chain(&[Vector3::zeros(); 4]).unwrap();
        assert_eq!(tree.dim(), 15);
        assert_eq!(tree.coord_range(0), 0..6);
        assert_eq!(tree.coord_range(3), 12..15);
        assert_eq!(tree.link_of_coord(5), 0);
        assert_eq!(tree.link_of_coord(6), 1);
        assert_eq!(tree.link_of_coord(14), 3);
        assert!(!tree.is_rotational(4));
        assert!(tree.is_rotational(7));
        assert_eq!(tree.rotation_blocks().collect::<Vec<_>>(), vec![0, 6, 9, 12]);
    }

    #[test]
    fn tree_json_round_trip() {
        let json = r#"{"links":[{"parent":-1,"offset":[0,0,0]},{"parent":0,"offset":[0,0,0.1]}]}"#;
        let tree: KinematicTree = serde_json::from_str(json).unwrap();
        assert_eq!(tree.part_count(), 2);
        let back = serde_json::to_string(&tree).unwrap();
        let again: KinematicTree = serde_json::from_str(&back).unwrap();
        assert_eq!(tree, again);
        assert!(serde_json::from_str::<KinematicTree>(
            r#"{"links":[{"parent":-1,"offset":[0,0,0]},{"parent":3,"offset":[0,0,0]}]}"#
        )
        .is_err());
    }

    #[test]
    fn trajectory_requires_three_frames() {
        let err = Trajectory::new(Motion::zeros(2, 6), 0.1).unwrap_err();
        assert!(matches!(err, Error::InsufficientFrames { got: 2, .. }));
        assert!(Trajectory::new(Motion::zeros(3, 6), 0.0).is_err());
    }
}
