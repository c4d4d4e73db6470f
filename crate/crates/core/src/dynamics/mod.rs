//! Euler-Lagrange dynamics of the articulated body in generalized coordinates.
//!
//! Joint velocities are rotation-vector rates, so each joint's motion subspace
//! is the right Jacobian of the exponential map. Inverse dynamics uses the
//! recursive Newton-Euler algorithm, the mass matrix the composite-rigid-body
//! algorithm, both in link coordinates with gravity entering as a base
//! acceleration.

mod integrate;
mod rnea;
mod residual;
mod spatial;

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::inertia::{mesh_mass_properties, BodyParams, TriangleMesh};
use crate::kinematics::{GeneralizedCoords, KinematicTree};

pub use integrate::{simulate, Integrator, Simulation};
pub use residual::{
    deterministic_el_penalty, el_residual, force_jacobian, pseudoforce, pseudoforce_with_derivatives,
    residual_metric, residual_vjp, FrameJacobian,
};
pub use rnea::{
    bias_terms, dynamics_terms, forward_dynamics, inverse_dynamics, kinetic_energy, mass_matrix,
    DynamicsTerms,
};

/// Standard gravity, m/s^2, along -z.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Per-link inertial parameters in link coordinates at the zero pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BodyParams>", into = "Vec<BodyParams>")]
pub struct RigidBodySet {
    bodies: Vec<BodyParams>,
    spatial: Vec<Matrix6<f64>>,
}

impl RigidBodySet {
    pub fn new(bodies: Vec<BodyParams>) -> Result<Self> {
        for b in &bodies {
            b.validate()?;
        }
        let spatial = bodies.iter().map(spatial::spatial_inertia).collect();
        Ok(Self { bodies, spatial })
    }

    /// Bodies from closed per-link meshes given in the zero-pose world frame.
    pub fn from_part_meshes(
        tree: &KinematicTree,
        meshes: &[TriangleMesh],
        density: f64,
    ) -> Result<Self> {
        if meshes.len() != tree.part_count() {
            return Err(shape_err(format!(
                "{} part meshes for {} links",
                meshes.len(),
                tree.part_count()
            )));
        }
        let origins = crate::kinematics::joint_positions(tree, &GeneralizedCoords::zeros(tree))?;
        let bodies = meshes
            .iter()
            .zip(&origins)
            .map(|(mesh, origin)| {
                let mut p = mesh_mass_properties(mesh, density)?;
                // zero-pose link frames are world-aligned
                p.com -= origin;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bodies)
    }

    pub fn bodies(&self) -> &[BodyParams] {
        &self.bodies
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    /// Same set with every mass and inertia multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.bodies.iter().map(|b| b.scaled(factor)).collect())
    }

    pub(crate) fn spatial(&self, k: usize) -> &Matrix6<f64> {
        &self.spatial[k]
    }

    pub(crate) fn check(&self, tree: &KinematicTree) -> Result<()> {
        if self.bodies.len() != tree.part_count() {
            return Err(shape_err(format!(
                "{} bodies for {} links",
                self.bodies.len(),
                tree.part_count()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<BodyParams>> for RigidBodySet {
    type Error = crate::Error;
    fn try_from(b: Vec<BodyParams>) -> Result<Self> {
        Self::new(b)
    }
}

impl From<RigidBodySet> for Vec<BodyParams> {
    fn from(s: RigidBodySet) -> Self {
        s.bodies
    }
}

/// A kinematic tree with its inertial parameters and gravity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multibody {
    pub tree: KinematicTree,
    pub bodies: RigidBodySet,
    pub gravity: Vector3<f64>,
}

impl Multibody {
    pub fn new(tree: KinematicTree, bodies: RigidBodySet, gravity: Vector3<f64>) -> Result<Self> {
        bodies.check(&tree)?;
        Ok(Self {
            tree,
            bodies,
            gravity,
        })
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }
}
