//! Serial-arm kinematics: forward kinematics over a DH-parameterized chain,
//! damped-least-squares inverse kinematics, and the outward Newton-Euler pass
//! that yields end-effector linear acceleration with gravity folded in.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};

/// Gravity magnitude, m/s^2. World z points up; gravity acts along -z.
pub const GRAVITY: f64 = 9.81;

/// Fixed spatial transform parameters of one link (standard DH):
/// `T = RotZ(q + theta_offset) * TransZ(d) * TransX(a) * RotX(alpha)`.
#[derive(Debug, Clone, Copy)]
pub struct LinkParams<R> {
    pub a: R,
    pub alpha: R,
    pub d: R,
    pub theta_offset: R,
}

impl<R: Real> LinkParams<R> {
    /// Distance between consecutive joint-frame origins; constant in q.
    pub fn offset_norm(&self) -> R {
        (self.a * self.a + self.d * self.d).sqrt()
    }
}

/// Sphere rigidly attached to a link, used for obstacle clearance checks.
#[derive(Debug, Clone)]
pub struct CollisionSphere<R> {
    /// Link frame index (0-based, frame after the joint).
    pub link: usize,
    /// Center offset in that link's frame, m.
    pub offset: Vector3<R>,
    pub radius: R,
}

/// Rigid transform (rotation + translation), world convention.
#[derive(Debug, Clone, Copy)]
pub struct Pose<R: Real> {
    pub rot: Matrix3<R>,
    pub pos: Vector3<R>,
}

impl<R: Real> Pose<R> {
    pub fn identity() -> Self {
        Pose {
            rot: Matrix3::identity(),
            pos: Vector3::zeros(),
        }
    }

    pub fn compose(&self, other: &Pose<R>) -> Pose<R> {
        Pose {
            rot: self.rot * other.rot,
            pos: self.pos + self.rot * other.pos,
        }
    }

    pub fn transform_point(&self, p: &Vector3<R>) -> Vector3<R> {
        self.pos + self.rot * p
    }

    /// Rotation error of `self` relative to `target` as an axis-angle vector.
    pub fn rot_error_to(&self, target: &Pose<R>) -> Vector3<R> {
        let rel = target.rot * self.rot.transpose();
        log_so3(&rel)
    }
}

/// Axis-angle vector of a rotation matrix (angle in [0, pi]).
fn log_so3<R: Real>(m: &Matrix3<R>) -> Vector3<R> {
    let two = real::<R>(2.0);
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let cos = ((tr - R::one()) / two).clamp(-R::one(), R::one());
    let angle = cos.acos();
    let v = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    if angle < real(1e-9) {
        return v / two;
    }
    if angle > real(std::f64::consts::PI - 1e-6) {
        // near pi the off-diagonal form degenerates; use the diagonal
        let mut axis = Vector3::new(
            ((m[(0, 0)] + R::one()) / two).max(R::zero()).sqrt(),
            ((m[(1, 1)] + R::one()) / two).max(R::zero()).sqrt(),
            ((m[(2, 2)] + R::one()) / two).max(R::zero()).sqrt(),
        );
        if m[(2, 1)] - m[(1, 2)] < R::zero() {
            axis.x = -axis.x;
        }
        if m[(0, 2)] - m[(2, 0)] < R::zero() {
            axis.y = -axis.y;
        }
        if m[(1, 0)] - m[(0, 1)] < R::zero() {
            axis.z = -axis.z;
        }
        if axis.norm() > R::zero() {
            return axis.normalize() * angle;
        }
        return Vector3::zeros();
    }
    v * (angle / (two * angle.sin()))
}

/// Serial-arm description: joint chain, limits, collision geometry, tool frame.
///
/// Immutable after construction; every operation on it is a pure function.
#[derive(Debug, Clone)]
pub struct RobotModel<R: Real> {
    pub joint_count: usize,
    pub link_params: Vec<LinkParams<R>>,
    /// Per-joint [min, max], rad.
    pub joint_limits: Vec<(R, R)>,
    /// Per-joint symmetric speed limit, rad/s.
    pub vel_limits: Vec<R>,
    /// Per-joint symmetric acceleration limit, rad/s^2.
    pub acc_limits: Vec<R>,
    pub collision_spheres: Vec<CollisionSphere<R>>,
    /// Fixed transform from the last link frame to the suction-cup frame.
    /// Cup +z is the suction normal (points from payload toward the gripper).
    pub tool_transform: Pose<R>,
    /// Reference configuration shipped with the model.
    pub home: DVector<R>,
}

/// End-effector state produced by the outward Newton-Euler pass.
#[derive(Debug, Clone)]
pub struct EEState<R: Real> {
    /// Cup position, world frame, m.
    pub position: Vector3<R>,
    /// Suction normal (cup +z), world frame, unit length.
    pub normal: Vector3<R>,
    /// Kinematic acceleration minus gravity vector, world frame, m/s^2.
    /// Equals (0, 0, +9.81) at rest.
    pub apparent_accel_world: Vector3<R>,
    /// Same vector expressed in the cup frame.
    pub apparent_accel_cup: Vector3<R>,
}

impl<R: Real> RobotModel<R> {
    fn check_dim(&self, v: &DVector<R>) -> Result<()> {
        if v.len() != self.joint_count {
            return Err(Error::DimensionMismatch {
                expected: self.joint_count,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn dh_pose(&self, i: usize, q: R) -> Pose<R> {
        let lp = &self.link_params[i];
        let th = q + lp.theta_offset;
        let (st, ct) = th.sin_cos();
        let (sa, ca) = lp.alpha.sin_cos();
        Pose {
            rot: Matrix3::new(
                ct,
                -st * ca,
                st * sa,
                st,
                ct * ca,
                -ct * sa,
                R::zero(),
                sa,
                ca,
            ),
            pos: Vector3::new(lp.a * ct, lp.a * st, lp.d),
        }
    }

    /// World pose of every link frame (index 0 = after joint 0).
    pub fn link_frames(&self, q: &DVector<R>) -> Result<Vec<Pose<R>>> {
        self.check_dim(q)?;
        let mut frames = Vec::with_capacity(self.joint_count);
        let mut t = Pose::identity();
        for i in 0..self.joint_count {
            t = t.compose(&self.dh_pose(i, q[i]));
            frames.push(t);
        }
        Ok(frames)
    }

    /// Cup pose: last link frame composed with the tool transform.
    pub fn fk(&self, q: &DVector<R>) -> Result<Pose<R>> {
        let frames = self.link_frames(q)?;
        Ok(frames[self.joint_count - 1].compose(&self.tool_transform))
    }

    /// World centers of all collision spheres at configuration `q`.
    pub fn sphere_centers(&self, q: &DVector<R>) -> Result<Vec<(Vector3<R>, R)>> {
        let frames = self.link_frames(q)?;
        Ok(self
            .collision_spheres
            .iter()
            .map(|s| (frames[s.link].transform_point(&s.offset), s.radius))
            .collect())
    }

    /// Geometric Jacobian of the cup frame (6 x n: linear rows then angular).
    fn cup_jacobian(&self, q: &DVector<R>) -> Result<(DMatrix<R>, Pose<R>)> {
        let frames = self.link_frames(q)?;
        let cup = frames[self.joint_count - 1].compose(&self.tool_transform);
        let mut jac = DMatrix::zeros(6, self.joint_count);
        for i in 0..self.joint_count {
            // joint i rotates about the z axis of frame i-1 (base frame for i = 0)
            let (axis, origin) = if i == 0 {
                (Vector3::z(), Vector3::zeros())
            } else {
                (frames[i - 1].rot * Vector3::z(), frames[i - 1].pos)
            };
            let lin = axis.cross(&(cup.pos - origin));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = axis[r];
            }
        }
        Ok((jac, cup))
    }

    /// Damped-least-squares inverse kinematics toward `target`.
    ///
    /// Returns a configuration whose fk matches the target within 1e-4 m and
    /// 1e-3 rad, clamped to joint limits. Intended for offline use (lift
    /// tracking); damping 1e-2, at most 200 iterations.
    pub fn ik(&self, target: &Pose<R>, q_seed: &DVector<R>) -> Result<DVector<R>> {
        self.check_dim(q_seed)?;
        let damping = real::<R>(1e-2);
        let pos_tol = real::<R>(1e-5);
        let rot_tol = real::<R>(1e-4);
        let max_iter = 200;
        let mut q = q_seed.clone();
        let mut pos_err = R::zero();
        let mut rot_err = R::zero();
        for _ in 0..max_iter {
            let (jac, cup) = self.cup_jacobian(&q)?;
            let ep = target.pos - cup.pos;
            let er = cup.rot_error_to(target);
            pos_err = ep.norm();
            rot_err = er.norm();
            if pos_err <= pos_tol && rot_err <= rot_tol {
                return Ok(q);
            }
            let e = Vector6::new(ep.x, ep.y, ep.z, er.x, er.y, er.z);
            // dq = J^T (J J^T + lambda^2 I)^-1 e
            let jjt = &jac * jac.transpose();
            let mut lhs = Matrix6::<R>::zeros();
            lhs.copy_from(&jjt);
            for k in 0..6 {
                lhs[(k, k)] += damping * damping;
            }
            let rhs = lhs
                .lu()
                .solve(&e)
                .ok_or_else(|| Error::Config("singular ik system".into()))?;
            let dq = jac.transpose() * rhs;
            for i in 0..self.joint_count {
                q[i] = (q[i] + dq[i]).clamp(self.joint_limits[i].0, self.joint_limits[i].1);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            pos_residual: to_f64(pos_err),
            rot_residual: to_f64(rot_err),
        })
    }

    /// Outward velocity/acceleration propagation along the chain.
    ///
    /// Gravity is folded into the base acceleration, so the returned vectors
    /// are apparent accelerations: `a_kinematic - g`, with g = (0, 0, -9.81).
    pub fn ee_accel(&self, q: &DVector<R>, qd: &DVector<R>, qdd: &DVector<R>) -> Result<EEState<R>> {
        self.check_dim(q)?;
        self.check_dim(qd)?;
        self.check_dim(qdd)?;
        let mut rot = Matrix3::<R>::identity();
        let mut pos_prev = Vector3::<R>::zeros();
        let mut omega = Vector3::<R>::zeros();
        let mut alpha = Vector3::<R>::zeros();
        let mut accel = Vector3::new(R::zero(), R::zero(), real(GRAVITY));
        for i in 0..self.joint_count {
            let axis = rot * Vector3::z();
            let local = self.dh_pose(i, q[i]);
            let pos = pos_prev + rot * local.pos;
            rot *= local.rot;
            let omega_prev = omega;
            omega += axis * qd[i];
            alpha += axis * qdd[i] + omega_prev.cross(&axis) * qd[i];
            let d = pos - pos_prev;
            accel += alpha.cross(&d) + omega.cross(&omega.cross(&d));
            pos_prev = pos;
        }
        let cup_rot = rot * self.tool_transform.rot;
        let cup_pos = pos_prev + rot * self.tool_transform.pos;
        let r = cup_pos - pos_prev;
        let cup_accel = accel + alpha.cross(&r) + omega.cross(&omega.cross(&r));
        Ok(EEState {
            position: cup_pos,
            normal: cup_rot * Vector3::z(),
            apparent_accel_world: cup_accel,
            apparent_accel_cup: cup_rot.transpose() * cup_accel,
        })
    }

    /// d(apparent_accel_world)/d(q, qd, qdd) by central differences,
    /// step 1e-6 per coordinate; columns ordered (all q, all qd, all qdd).
    pub fn ee_accel_jacobian(
        &self,
        q: &DVector<R>,
        qd: &DVector<R>,
        qdd: &DVector<R>,
    ) -> Result<DMatrix<R>> {
        self.fd_accel_jacobian(q, qd, qdd, |s| s.apparent_accel_world)
    }

    /// Same finite-difference scheme for the cup-frame apparent acceleration
    /// (differentiates through the cup rotation as well).
    pub fn ee_accel_cup_jacobian(
        &self,
        q: &DVector<R>,
        qd: &DVector<R>,
        qdd: &DVector<R>,
    ) -> Result<DMatrix<R>> {
        self.fd_accel_jacobian(q, qd, qdd, |s| s.apparent_accel_cup)
    }

    fn fd_accel_jacobian(
        &self,
        q: &DVector<R>,
        qd: &DVector<R>,
        qdd: &DVector<R>,
        pick: impl Fn(&EEState<R>) -> Vector3<R>,
    ) -> Result<DMatrix<R>> {
        self.check_dim(q)?;
        self.check_dim(qd)?;
        self.check_dim(qdd)?;
        let n = self.joint_count;
        let step = real::<R>(1e-6);
        let half = R::one() / (real::<R>(2.0) * step);
        let mut jac = DMatrix::zeros(3, 3 * n);
        let mut qp = q.clone();
        let mut qdp = qd.clone();
        let mut qddp = qdd.clone();
        for col in 0..3 * n {
            let (vecs, idx): (&mut DVector<R>, usize) = match col / n {
                0 => (&mut qp, col),
                1 => (&mut qdp, col - n),
                _ => (&mut qddp, col - 2 * n),
            };
            let orig = vecs[idx];
            vecs[idx] = orig + step;
            let plus = pick(&self.ee_accel(&qp, &qdp, &qddp)?);
            // reborrow: the match above borrowed one of the three buffers
            let vecs: &mut DVector<R> = match col / n {
                0 => &mut qp,
                1 => &mut qdp,
                _ => &mut qddp,
            };
            vecs[idx] = orig - step;
            let minus = pick(&self.ee_accel(&qp, &qdp, &qddp)?);
            let vecs: &mut DVector<R> = match col / n {
                0 => &mut qp,
                1 => &mut qdp,
                _ => &mut qddp,
            };
            vecs[idx] = orig;
            for r in 0..3 {
                jac[(r, col)] = (plus[r] - minus[r]) * half;
            }
        }
        Ok(jac)
    }
}

// ---------------------------------------------------------------------------
// file format

#[derive(Debug, Serialize, Deserialize)]
pub struct RobotFile {
    pub joint_count: usize,
    pub link: Vec<LinkFile>,
    pub joint_limits: Vec<[f64; 2]>,
    pub vel_limits: Vec<f64>,
    pub acc_limits: Vec<f64>,
    #[serde(default)]
    pub collision_sphere: Vec<SphereFile>,
    pub tool: ToolFile,
    pub home: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkFile {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SphereFile {
    pub link: usize,
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToolFile {
    pub translation: [f64; 3],
    /// Fixed rotation as roll-pitch-yaw, rad: R = Rz(yaw) Ry(pitch) Rx(roll).
    pub rpy: [f64; 3],
}

fn rpy_matrix<R: Real>(rpy: [f64; 3]) -> Matrix3<R> {
    let (sr, cr) = real::<R>(rpy[0]).sin_cos();
    let (sp, cp) = real::<R>(rpy[1]).sin_cos();
    let (sy, cy) = real::<R>(rpy[2]).sin_cos();
    let rx = Matrix3::new(
        R::one(),
        R::zero(),
        R::zero(),
        R::zero(),
        cr,
        -sr,
        R::zero(),
        sr,
        cr,
    );
    let ry = Matrix3::new(
        cp,
        R::zero(),
        sp,
        R::zero(),
        R::one(),
        R::zero(),
        -sp,
        R::zero(),
        cp,
    );
    let rz = Matrix3::new(
        cy,
        -sy,
        R::zero(),
        sy,
        cy,
        R::zero(),
        R::zero(),
        R::zero(),
        R::one(),
    );
    rz * ry * rx
}

impl RobotFile {
    pub fn from_toml(path: &str, text: &str) -> Result<Self> {
        let f: RobotFile =
            toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        f.validate(path)?;
        Ok(f)
    }

    fn validate(&self, path: &str) -> Result<()> {
        let n = self.joint_count;
        if n < 1 {
            return Err(Error::parse(path, "joint_count must be >= 1"));
        }
        for (name, len) in [
            ("link", self.link.len()),
            ("joint_limits", self.joint_limits.len()),
            ("vel_limits", self.vel_limits.len()),
            ("acc_limits", self.acc_limits.len()),
            ("home", self.home.len()),
        ] {
            if len != n {
                return Err(Error::parse(
                    path,
                    format!("{name} has {len} entries, expected {n}"),
                ));
            }
        }
        for lim in &self.joint_limits {
            if !(lim[0].is_finite() && lim[1].is_finite() && lim[0] < lim[1]) {
                return Err(Error::parse(path, "joint limits must be finite with min < max"));
            }
        }
        if self.vel_limits.iter().chain(&self.acc_limits).any(|&v| !(v > 0.0)) {
            return Err(Error::parse(path, "velocity/acceleration limits must be > 0"));
        }
        for s in &self.collision_sphere {
            if s.link >= n {
                return Err(Error::parse(path, format!("sphere link {} out of range", s.link)));
            }
            if !(s.radius > 0.0) {
                return Err(Error::parse(path, "sphere radii must be > 0"));
            }
        }
        Ok(())
    }

    pub fn into_model<R: Real>(self) -> RobotModel<R> {
        RobotModel {
            joint_count: self.joint_count,
            link_params: self
                .link
                .iter()
                .map(|l| LinkParams {
                    a: real(l.a),
                    alpha: real(l.alpha),
                    d: real(l.d),
                    theta_offset: real(l.theta_offset),
                })
                .collect(),
            joint_limits: self
                .joint_limits
                .iter()
                .map(|l| (real(l[0]), real(l[1])))
                .collect(),
            vel_limits: self.vel_limits.iter().map(|&v| real(v)).collect(),
            acc_limits: self.acc_limits.iter().map(|&v| real(v)).collect(),
            collision_spheres: self
                .collision_sphere
                .iter()
                .map(|s| CollisionSphere {
                    link: s.link,
                    offset: Vector3::new(real(s.offset[0]), real(s.offset[1]), real(s.offset[2])),
                    radius: real(s.radius),
                })
                .collect(),
            tool_transform: Pose {
                rot: rpy_matrix(self.tool.rpy),
                pos: Vector3::new(
                    real(self.tool.translation[0]),
                    real(self.tool.translation[1]),
                    real(self.tool.translation[2]),
                ),
            },
            home: DVector::from_iterator(self.home.len(), self.home.iter().map(|&v| real(v))),
        }
    }
}

/// Default six-joint arm shipped with the crate (see `config/robot.toml`).
pub fn default_robot<R: Real>() -> RobotModel<R> {
    RobotFile::from_toml("config/robot.toml", include_str!("../config/robot.toml"))
        .expect("embedded robot config is valid")
        .into_model()
}

/// Single revolute joint about z with a link of length `len` along x.
/// Used by tests and the closed-form checks.
pub fn one_link_robot<R: Real>(len: f64) -> RobotModel<R> {
    RobotModel {
        joint_count: 1,
        link_params: vec![LinkParams {
            a: real(len),
            alpha: R::zero(),
            d: R::zero(),
            theta_offset: R::zero(),
        }],
        joint_limits: vec![(real(-10.0), real(10.0))],
        vel_limits: vec![real(10.0)],
        acc_limits: vec![real(100.0)],
        collision_spheres: vec![],
        tool_transform: Pose::identity(),
        home: DVector::zeros(1),
    }
}
