//! Spatial (6D) vector helpers. Motion and force vectors are stored as
//! `[angular; linear]` in the link frame with the origin at the joint.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::inertia::BodyParams;
use crate::kinematics::so3::hat;

pub(crate) fn angular(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

pub(crate) fn linear(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

pub(crate) fn join(ang: &Vector3<f64>, lin: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(ang.x, ang.y, ang.z, lin.x, lin.y, lin.z)
}

/// Motion transform from parent to child coordinates, where the child frame has
/// orientation `rotation` and origin `offset` in the parent frame.
pub(crate) fn motion_transform(rotation: &Matrix3<f64>, offset: &Vector3<f64>) -> Matrix6<f64> {
    let rt = rotation.transpose();
    let mut x = Matrix6::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rt * hat(offset)));
    x
}

/// Motion cross product `v x m`.
pub(crate) fn cross_motion(v: &Vector6<f64>, m: &Vector6<f64>) -> Vector6<f64> {
    let (w, u) = (angular(v), linear(v));
    let (w2, u2) = (angular(m), linear(m));
    join(&w.cross(&w2), &(w.cross(&u2) + u.cross(&w2)))
}

/// Force cross product `v x* f`.
pub(crate) fn cross_force(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, u) = (angular(v), linear(v));
    let (n, f) = (angular(f), linear(f));
    join(&(w.cross(&n) + u.cross(&f)), &w.cross(&f))
}

/// Spatial inertia about the link origin.
pub(crate) fn spatial_inertia(body: &BodyParams) -> Matrix6<f64> {
    let c = hat(&body.com);
    let m = body.mass;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(body.inertia + c * c.transpose() * m));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * m));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * m));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * m));
    out
}
