//! Lumped-parameter suction-cup simulator.
//!
//! Substitutes for a physical gripper and pressure sensor: each cup carries a
//! first-order deformation state driven by the tension it sees, so failure
//! depends on the sustained load history rather than on instantaneous spikes.
//! A seal, once broken, stays broken for the rest of the lift.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Pose, RobotModel};
use crate::profile::{sample, SCurveProfile};
use crate::scalar::{real, to_f64, Real};
use crate::suction::SuctionRig;

/// Cup dynamics parameters. The defaults in `config/sim.toml` are calibrated
/// so the rigid unimodal limit over-predicts the sustained-load failure
/// threshold by roughly 20 %, and so 125 Hz history windows can separate a
/// short spike from a sustained overload.
#[derive(Debug, Clone, Copy)]
pub struct CupSimParams<R> {
    /// Deformation stiffness k, N/m.
    pub stiffness: R,
    /// Deformation damping c, N*s/m; the response time constant is c/k.
    pub damping: R,
    /// Deformation at which the seal breaks, m.
    pub break_deformation: R,
    /// Tension one cup carries without deforming, N.
    pub hold_force: R,
    /// Friction coefficient of the seated cup lips.
    pub shear_mu: R,
    /// Upper bound on fractional deformation recovery, 1/s.
    pub reseat_rate: R,
}

/// Per-cup deformation state plus the emitted pressure value.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<R> {
    /// Deformation per cup, m, non-negative.
    pub deformation: Vec<R>,
    pub sealed: bool,
    pub time: R,
    /// p_v while sealed, p_atm after the seal breaks.
    pub pressure: R,
}

impl<R: Real> SimState<R> {
    pub fn new(rig: &SuctionRig<R>) -> Self {
        SimState {
            deformation: vec![R::zero(); rig.cup_count],
            sealed: true,
            time: R::zero(),
            pressure: rig.p_v,
        }
    }
}

/// Advance the cup dynamics by `dt` under the given apparent acceleration
/// expressed in the cup frame (+z is the suction normal).
///
/// Per cup: nominal tension share plus a rigid-plate redistribution from the
/// tangential load's moment; tension beyond `hold_force` drives the linear
/// deformation ODE `c ds/dt = E - k s` (integrated exactly over the step).
/// The seal breaks when any deformation reaches `break_deformation` or the
/// tangential load exceeds `shear_mu` times the total lip compression.
pub fn sim_step<R: Real>(
    state: &SimState<R>,
    params: &CupSimParams<R>,
    rig: &SuctionRig<R>,
    a_cup: &Vector3<R>,
    dt: R,
) -> Result<SimState<R>> {
    if !state.sealed {
        return Err(Error::StepOnBroken(to_f64(state.time)));
    }
    assert!(
        dt > R::zero() && dt <= real(0.02),
        "sim step must be in (0, 20 ms]"
    );
    let n = rig.normal;
    let count = rig.cup_count;
    let load = a_cup * rig.mass;
    let normal_load = load.dot(&n);
    let tangential = load - n * normal_load;
    let tangential_mag = tangential.norm();

    // per-cup tension: even share of the normal load plus the lever moment of
    // the off-axis component resolved over the cup footprint
    let mut tension = vec![normal_load / real::<R>(count as f64); count];
    if tangential_mag > real(1e-12) {
        let dir = tangential / tangential_mag;
        let mut lever = R::zero();
        let mut spread = R::zero();
        let mut arms = Vec::with_capacity(count);
        for r in &rig.cup_offsets {
            let z = r.dot(&n);
            lever += z.abs();
            let arm = (r - n * z).dot(&dir);
            spread += arm * arm;
            arms.push(arm);
        }
        lever /= real(count as f64);
        if spread > real(1e-12) {
            let moment = tangential_mag * lever;
            for i in 0..count {
                tension[i] += moment * arms[i] / spread;
            }
        }
    }

    let mut next = state.clone();
    next.time += dt;
    let tau = params.damping / params.stiffness;
    let decay = (-dt / tau).exp();
    let mut compression = R::zero();
    for i in 0..count {
        let excess = (tension[i] - params.hold_force).max(R::zero());
        compression += (params.hold_force - tension[i]).max(R::zero());
        let target = excess / params.stiffness;
        let s = state.deformation[i];
        let mut s_new = target + (s - target) * decay;
        if s_new < s {
            // reseating is slower than the raw ODE relaxation
            let floor = s * (R::one() - params.reseat_rate * dt);
            s_new = s_new.max(floor);
        }
        s_new = s_new.max(R::zero());
        if s_new >= params.break_deformation {
            next.sealed = false;
        }
        next.deformation[i] = s_new;
    }
    if tangential_mag > params.shear_mu * compression {
        next.sealed = false;
    }
    if !next.sealed {
        next.pressure = rig.p_atm;
    }
    Ok(next)
}

/// One recorded lift: joint-space trace with the pressure channel sampled on
/// its own clock, plus the collection parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftRecord<R: Real> {
    pub grasp_angle: R,
    pub mass: R,
    pub a_max: R,
    pub j_max: R,
    /// Joint-trace sample interval, s.
    pub t_step: R,
    pub q: Vec<DVector<R>>,
    pub qd: Vec<DVector<R>>,
    pub qdd: Vec<DVector<R>>,
    /// (t, Pa) at the pressure-sensor rate.
    pub pressure: Vec<(R, R)>,
    pub failure_time: Option<R>,
}

impl<R: Real> LiftRecord<R> {
    pub fn failed(&self) -> bool {
        self.failure_time.is_some()
    }
}

/// Default lift site: cup start position in the world frame.
pub fn lift_start_position<R: Real>() -> Vector3<R> {
    Vector3::new(real(-0.45), R::zero(), real(0.10))
}

/// Cup orientation for a lift at `grasp_angle` (0 = top-down): the home
/// top-down orientation tilted about the world x axis.
pub fn lift_orientation<R: Real>(model: &RobotModel<R>, grasp_angle: R) -> Result<Matrix3<R>> {
    let top_down = model.fk(&model.home.clone())?.rot;
    let (s, c) = grasp_angle.sin_cos();
    let rx = Matrix3::new(
        R::one(),
        R::zero(),
        R::zero(),
        R::zero(),
        c,
        -s,
        R::zero(),
        s,
        c,
    );
    Ok(rx * top_down)
}

/// Execute one vertical lift against the cup simulator.
///
/// The Cartesian profile is tracked with inverse kinematics at `joint_rate`
/// (joint velocities and accelerations by central differences), the cup
/// dynamics are stepped on the same clock, and the pressure channel is
/// resampled at `pressure_rate`. Deterministic.
pub fn run_lift<R: Real>(
    params: &CupSimParams<R>,
    rig: &SuctionRig<R>,
    model: &RobotModel<R>,
    profile: &SCurveProfile<R>,
    grasp_angle: R,
    joint_rate: R,
    pressure_rate: R,
) -> Result<LiftRecord<R>> {
    assert!(joint_rate > R::zero() && pressure_rate > R::zero());
    let dt = R::one() / joint_rate;
    let duration = profile.duration();
    let steps = (to_f64(duration * joint_rate)).ceil() as usize;
    let p0 = lift_start_position::<R>();
    let rot = lift_orientation(model, grasp_angle)?;

    let mut q_trace: Vec<DVector<R>> = Vec::with_capacity(steps + 1);
    let mut seed = model.home.clone();
    for k in 0..=steps {
        let t = (real::<R>(k as f64) * dt).min(duration);
        let (pos, _, _, _) = sample(profile, t)?;
        let target = Pose {
            rot,
            pos: p0 + Vector3::z() * pos,
        };
        let q = model.ik(&target, &seed)?;
        seed = q.clone();
        q_trace.push(q);
    }

    let nq = q_trace.len();
    let half = R::one() / (real::<R>(2.0) * dt);
    let inv_dt2 = R::one() / (dt * dt);
    let mut qd_trace = Vec::with_capacity(nq);
    let mut qdd_trace = Vec::with_capacity(nq);
    for k in 0..nq {
        let prev = &q_trace[k.saturating_sub(1)];
        let next = &q_trace[(k + 1).min(nq - 1)];
        let cur = &q_trace[k];
        qd_trace.push((next - prev) * half);
        qdd_trace.push((next - cur * real::<R>(2.0) + prev) * inv_dt2);
    }

    let mut state = SimState::new(rig);
    let mut failure_time = None;
    for k in 0..nq {
        if !state.sealed {
            break;
        }
        let ee = model.ee_accel(&q_trace[k], &qd_trace[k], &qdd_trace[k])?;
        state = sim_step(&state, params, rig, &ee.apparent_accel_cup, dt)?;
        if !state.sealed {
            failure_time = Some(state.time);
        }
    }

    let p_steps = (to_f64(duration * pressure_rate)).ceil() as usize;
    let pressure = (0..=p_steps)
        .map(|j| {
            let t = real::<R>(j as f64) / pressure_rate;
            let p = match failure_time {
                Some(tf) if t >= tf => rig.p_atm,
                _ => rig.p_v,
            };
            (t, p)
        })
        .collect();

    Ok(LiftRecord {
        grasp_angle,
        mass: rig.mass,
        a_max: profile.a_max,
        j_max: profile.j_max,
        t_step: dt,
        q: q_trace,
        qd: qd_trace,
        qdd: qdd_trace,
        pressure,
        failure_time,
    })
}

// ---------------------------------------------------------------------------
// file formats

#[derive(Debug, Serialize, Deserialize)]
pub struct SimFile {
    pub stiffness: f64,
    pub damping: f64,
    pub break_deformation: f64,
    pub hold_force: f64,
    pub shear_mu: f64,
    pub reseat_rate: f64,
}

impl SimFile {
    pub fn from_toml(path: &str, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn into_params<R: Real>(self) -> CupSimParams<R> {
        CupSimParams {
            stiffness: real(self.stiffness),
            damping: real(self.damping),
            break_deformation: real(self.break_deformation),
            hold_force: real(self.hold_force),
            shear_mu: real(self.shear_mu),
            reseat_rate: real(self.reseat_rate),
        }
    }
}

/// Calibrated defaults shipped with the crate (see `config/sim.toml`).
pub fn default_cup_params<R: Real>() -> CupSimParams<R> {
    SimFile::from_toml("config/sim.toml", include_str!("../config/sim.toml"))
        .expect("embedded sim config is valid")
        .into_params()
}

fn fmt<R: Real>(x: R) -> String {
    format!("{}", to_f64(x))
}

/// Joint-trace CSV with the collection parameters on the first line.
pub fn lift_csv<R: Real>(record: &LiftRecord<R>) -> String {
    let n = record.q[0].len();
    let mut out = format!(
        "grasp_angle={},mass={},a_max={},j_max={}\n",
        fmt(record.grasp_angle),
        fmt(record.mass),
        fmt(record.a_max),
        fmt(record.j_max)
    );
    out.push('t');
    for tag in ["q", "qd", "qdd"] {
        for i in 1..=n {
            out.push_str(&format!(",{tag}{i}"));
        }
    }
    out.push('\n');
    for k in 0..record.q.len() {
        out.push_str(&fmt(record.t_step * real::<R>(k as f64)));
        for vec in [&record.q[k], &record.qd[k], &record.qdd[k]] {
            for v in vec.iter() {
                out.push(',');
                out.push_str(&fmt(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parallel pressure CSV, same first line as the joint trace.
pub fn pressure_csv<R: Real>(record: &LiftRecord<R>) -> String {
    let mut out = format!(
        "grasp_angle={},mass={},a_max={},j_max={}\n",
        fmt(record.grasp_angle),
        fmt(record.mass),
        fmt(record.a_max),
        fmt(record.j_max)
    );
    out.push_str("t,pa\n");
    for &(t, p) in &record.pressure {
        out.push_str(&format!("{},{}\n", fmt(t), fmt(p)));
    }
    out
}

fn parse_meta(line: &str, path: &str) -> Result<[f64; 4]> {
    let mut vals = [0.0; 4];
    let keys = ["grasp_angle", "mass", "a_max", "j_max"];
    for (i, part) in line.split(',').enumerate() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(path, "bad metadata line"))?;
        if i >= 4 || k != keys[i] {
            return Err(Error::parse(path, "bad metadata keys"));
        }
        vals[i] = v
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::parse(path, e.to_string()))?;
    }
    Ok(vals)
}

/// Rebuild a record from the two CSV artifacts.
pub fn read_lift_csv<R: Real>(joints: &str, pressure: &str) -> Result<LiftRecord<R>> {
    let path = "lift csv";
    let mut lines = joints.lines();
    let meta = parse_meta(lines.next().ok_or(Error::EmptyTrace)?, path)?;
    let header = lines.next().ok_or(Error::EmptyTrace)?;
    let cols = header.split(',').count();
    if (cols - 1) % 3 != 0 {
        return Err(Error::parse(path, "column count not 1 + 3n"));
    }
    let n = (cols - 1) / 3;
    let mut q = Vec::new();
    let mut qd = Vec::new();
    let mut qdd = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if vals.len() != cols {
            return Err(Error::parse(path, "ragged row"));
        }
        times.push(vals[0]);
        q.push(DVector::from_iterator(n, vals[1..1 + n].iter().map(|&v| real(v))));
        qd.push(DVector::from_iterator(
            n,
            vals[1 + n..1 + 2 * n].iter().map(|&v| real(v)),
        ));
        qdd.push(DVector::from_iterator(
            n,
            vals[1 + 2 * n..1 + 3 * n].iter().map(|&v| real(v)),
        ));
    }
    if q.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let t_step = if times.len() > 1 { times[1] - times[0] } else { 0.0 };

    let mut p_lines = pressure.lines();
    let _ = p_lines.next();
    let _ = p_lines.next();
    let mut p_trace = Vec::new();
    for line in p_lines {
        if line.trim().is_empty() {
            continue;
        }
        let (t, p) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, "bad pressure row"))?;
        let t: f64 = t.parse().map_err(|e: std::num::ParseFloatError| {
            Error::parse(path, e.to_string())
        })?;
        let p: f64 = p.parse().map_err(|e: std::num::ParseFloatError| {
            Error::parse(path, e.to_string())
        })?;
        p_trace.push((real(t), real(p)));
    }
    // failure time: first pressure sample above the halfway threshold
    let (lo, hi) = p_trace
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, p)| {
            (lo.min(to_f64(p)), hi.max(to_f64(p)))
        });
    let failure_time = if hi - lo > 1.0 {
        let mid = real::<R>((lo + hi) / 2.0);
        p_trace.iter().find(|&&(_, p)| p > mid).map(|&(t, _)| t)
    } else {
        None
    };
    Ok(LiftRecord {
        grasp_angle: real(meta[0]),
        mass: real(meta[1]),
        a_max: real(meta[2]),
        j_max: real(meta[3]),
        t_step: real(t_step),
        q,
        qd,
        qdd,
        pressure: p_trace,
        failure_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_robot;
    use crate::profile::scurve;
    use crate::suction::default_rig;

    const DT: f64 = 0.008;

    fn defaults() -> (CupSimParams<f64>, SuctionRig<f64>) {
        (default_cup_params::<f64>(), default_rig::<f64>())
    }

    /// Cup-frame acceleration whose per-cup tension share equals
    /// hold_force + `excess` newtons (top-down load along the normal).
    fn accel_for_excess(params: &CupSimParams<f64>, rig: &SuctionRig<f64>, excess: f64) -> Vector3<f64> {
        let a = (params.hold_force + excess) * rig.cup_count as f64 / rig.mass;
        Vector3::new(0.0, 0.0, a)
    }

    #[test]
    fn no_tension_never_deforms() {
        let (params, rig) = defaults();
        let a = Vector3::new(0.0, 0.0, 9.81); // rest load far below hold force
        let mut state = SimState::new(&rig);
        for _ in 0..500 {
            state = sim_step(&state, &params, &rig, &a, DT).unwrap();
        }
        assert!(state.sealed);
        assert!(state.deformation.iter().all(|&s| s == 0.0));
        assert_eq!(state.pressure, rig.p_v);
    }

    #[test]
    fn sustained_overload_breaks_at_ode_crossing_time() {
        let (params, rig) = defaults();
        // steady-state deformation 1.5x the break threshold
        let excess = 1.5 * params.stiffness * params.break_deformation;
        let a = accel_for_excess(&params, &rig, excess);
        let tau = params.damping / params.stiffness;
        let t_closed = tau * (1.5_f64 / 0.5).ln();
        let mut state = SimState::new(&rig);
        let mut t_break = None;
        for _ in 0..1000 {
            state = sim_step(&state, &params, &rig, &a, DT).unwrap();
            if !state.sealed {
                t_break = Some(state.time);
                break;
            }
        }
        let t_break = t_break.expect("seal must break under sustained overload");
        assert!(
            (t_break - t_closed).abs() <= DT + 1e-12,
            "break at {t_break}, closed form {t_closed}"
        );
    }

    #[test]
    fn single_step_spike_survives() {
        let (params, rig) = defaults();
        let excess = 1.5 * params.stiffness * params.break_deformation;
        let spike = accel_for_excess(&params, &rig, excess);
        let rest = Vector3::new(0.0, 0.0, 9.81);
        let mut state = SimState::new(&rig);
        state = sim_step(&state, &params, &rig, &spike, DT).unwrap();
        assert!(state.sealed);
        for _ in 0..500 {
            state = sim_step(&state, &params, &rig, &rest, DT).unwrap();
        }
        assert!(state.sealed);
        assert!(state.deformation.iter().all(|&s| s < 1e-5));
    }

    #[test]
    fn pulse_length_separates_outcomes() {
        // the property that makes history windows learnable: a 40 ms pulse at
        // some load survives while 200 ms at the same load breaks the seal
        let (params, rig) = defaults();
        let excess = 1.3 * params.stiffness * params.break_deformation;
        let a = accel_for_excess(&params, &rig, excess);
        let run_pulse = |steps: usize| -> bool {
            let mut state = SimState::new(&rig);
            for _ in 0..steps {
                state = sim_step(&state, &params, &rig, &a, DT).unwrap();
                if !state.sealed {
                    return false;
                }
            }
            true
        };
        assert!(run_pulse(5), "40 ms pulse must survive");
        assert!(!run_pulse(25), "200 ms pulse must break");
    }

    #[test]
    fn step_on_broken_state_rejected() {
        let (params, rig) = defaults();
        let a = accel_for_excess(&params, &rig, 10.0 * params.stiffness * params.break_deformation);
        let mut state = SimState::new(&rig);
        for _ in 0..1000 {
            state = sim_step(&state, &params, &rig, &a, DT).unwrap();
            if !state.sealed {
                break;
            }
        }
        assert!(!state.sealed);
        assert!(matches!(
            sim_step(&state, &params, &rig, &a, DT),
            Err(Error::StepOnBroken(_))
        ));
    }

    #[test]
    fn shear_overload_breaks_seal() {
        let (params, rig) = defaults();
        // mostly tangential load beyond the lip friction capacity
        // shear_mu * (n * hold_force - m * 9.81) = 104 N; apply 120 N
        let a = Vector3::new(80.0, 0.0, 9.81);
        let mut state = SimState::new(&rig);
        let mut broke = false;
        for _ in 0..200 {
            match sim_step(&state, &params, &rig, &a, DT) {
                Ok(s) => {
                    broke = !s.sealed;
                    state = s;
                    if broke {
                        break;
                    }
                }
                Err(_) => unreachable!(),
            }
        }
        assert!(broke, "tangential overload must break the seal");
    }

    #[test]
    fn zero_height_lift_never_fails() {
        let (params, rig) = defaults();
        let model = default_robot::<f64>();
        let profile = scurve(0.0, 1.0, 10.0, 1000.0);
        let rec = run_lift(&params, &rig, &model, &profile, 0.0, 125.0, 167.0).unwrap();
        assert!(!rec.failed());
        assert!(rec.pressure.iter().all(|&(_, p)| p == rig.p_v));
    }

    #[test]
    fn violent_lift_fails_after_motion_start() {
        let (params, rig) = defaults();
        let model = default_robot::<f64>();
        let profile = scurve(0.3, 4.0, 200.0, 20000.0);
        let rec = run_lift(&params, &rig, &model, &profile, 0.0, 125.0, 167.0).unwrap();
        let tf = rec.failure_time.expect("violent lift must fail");
        assert!(tf > 0.0);
        // pressure trace is a single step at the failure time
        let mut transitions = 0;
        for w in rec.pressure.windows(2) {
            if w[0].1 != w[1].1 {
                transitions += 1;
                assert!(w[1].0 >= tf);
            }
        }
        assert_eq!(transitions, 1);
    }

    #[test]
    fn tilted_grasp_fails_at_or_below_top_down_threshold() {
        let (params, rig) = defaults();
        let model = default_robot::<f64>();
        let threshold = |angle: f64| -> f64 {
            for k in 0..40 {
                let a_max = 20.0 + 5.0 * k as f64;
                let profile = scurve(0.3, 4.0, a_max, 8000.0);
                let rec = run_lift(&params, &rig, &model, &profile, angle, 125.0, 167.0).unwrap();
                if rec.failed() {
                    return a_max;
                }
            }
            f64::INFINITY
        };
        let t0 = threshold(0.0);
        let t45 = threshold(45.0_f64.to_radians());
        assert!(t0.is_finite() && t45.is_finite());
        assert!(t45 <= t0, "45 deg threshold {t45} vs top-down {t0}");
    }

    #[test]
    fn lift_is_deterministic_and_round_trips_through_csv() {
        let (params, rig) = defaults();
        let model = default_robot::<f64>();
        let profile = scurve(0.25, 3.0, 90.0, 6000.0);
        let rec1 = run_lift(&params, &rig, &model, &profile, 0.2, 125.0, 167.0).unwrap();
        let rec2 = run_lift(&params, &rig, &model, &profile, 0.2, 125.0, 167.0).unwrap();
        assert_eq!(rec1, rec2);
        let rebuilt: LiftRecord<f64> =
            read_lift_csv(&lift_csv(&rec1), &pressure_csv(&rec1)).unwrap();
        assert_eq!(rebuilt.q, rec1.q);
        assert_eq!(rebuilt.qd, rec1.qd);
        assert_eq!(rebuilt.qdd, rec1.qdd);
        assert_eq!(rebuilt.pressure, rec1.pressure);
        assert_eq!(rebuilt.mass, rec1.mass);
    }

    #[test]
    fn scaling_up_a_failure_stays_a_failure() {
        let (params, rig) = defaults();
        let model = default_robot::<f64>();
        // a profile that fails at lambda = 1 keeps failing for lambda > 1
        let base = scurve(0.3, 4.0, 95.0, 8000.0);
        let rec = run_lift(&params, &rig, &model, &base, 0.0, 125.0, 167.0).unwrap();
        assert!(rec.failed());
        for lambda in [1.1, 1.5] {
            let scaled = scurve(0.3, 4.0, 95.0 * lambda, 8000.0 * lambda);
            let rec = run_lift(&params, &rig, &model, &scaled, 0.0, 125.0, 167.0).unwrap();
            assert!(rec.failed(), "lambda {lambda} converted failure to success");
        }
    }
}
