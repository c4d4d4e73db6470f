use nalgebra::{Matrix3, Vector3};

use super::{so3, GeneralizedCoords, KinematicTree};
use crate::error::Result;

/// World pose of a link frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkTransform {
    pub rotation: Matrix3<f64>,
    pub origin: Vector3<f64>,
}

/// World transforms of every link, composed along the parent chain.
pub fn forward_kinematics(
    tree: &KinematicTree,
    q: &GeneralizedCoords,
) -> Result<Vec<LinkTransform>> {
    tree.check_dim(q.as_slice().len(), "configuration")?;
    let mut out: Vec<LinkTransform> = Vec::with_capacity(tree.part_count());
    out.push(LinkTransform {
        rotation: so3::exp(&q.root_rot()),
        origin: q.root_pos(),
    });
    for (k, link) in tree.links().iter().enumerate().skip(1) {
        // parents precede children, so the parent transform is already final
        let parent = out[link.parent.expect("non-root link has a parent")];
        out.push(LinkTransform {
            rotation: parent.rotation * so3::exp(&q.joint(k)),
            origin: parent.origin + parent.rotation * link.offset,
        });
    }
    Ok(out)
}

/// Joint origins in world coordinates, one per link.
pub fn joint_positions(tree: &KinematicTree, q: &GeneralizedCoords) -> Result<Vec<Vector3<f64>>> {
    Ok(forward_kinematics(tree, q)?
        .into_iter()
        .map(|t| t.origin)
        .collect())
}
