//! Analytic multi-cup suction failure models.
//!
//! The unimodal model caps the apparent-acceleration magnitude along the
//! suction normal. The multimodal model solves a quasi-static force/moment
//! balance over the cup array for a load tilted by theta from the normal and
//! classifies the outcome as success, sliding, force imbalance, or moment
//! imbalance. Sweeping theta yields a failure boundary that is exported as a
//! 4th-order polynomial for use as a planner constraint.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};

/// Cup layout and payload description shared by the analytic models and the
/// cup simulator.
#[derive(Debug, Clone)]
pub struct SuctionRig<R: Real> {
    pub cup_count: usize,
    /// From payload center of mass to each cup contact, payload frame, m.
    pub cup_offsets: Vec<Vector3<R>>,
    /// Effective grip area of a single cup, m^2.
    pub cup_area: R,
    /// Atmospheric pressure, Pa.
    pub p_atm: R,
    /// Applied vacuum pressure, Pa.
    pub p_v: R,
    /// Static friction coefficient between cups and payload.
    pub mu: R,
    /// Payload mass, kg.
    pub mass: R,
    /// Grasp-plane normal, payload frame, unit length.
    pub normal: Vector3<R>,
}

impl<R: Real> SuctionRig<R> {
    /// Ideal suction force of one cup: (p_atm - p_v) * A.
    pub fn per_cup_force(&self) -> R {
        (self.p_atm - self.p_v) * self.cup_area
    }

    /// Same rig holding a different payload mass.
    pub fn with_mass(&self, mass: R) -> Self {
        let mut rig = self.clone();
        rig.mass = mass;
        rig
    }

    /// In-plane unit vector fixing the azimuth of tilted loads: the payload
    /// +x axis projected into the grasp plane (+y if degenerate).
    pub fn tangent(&self) -> Vector3<R> {
        let n = self.normal;
        let mut t = Vector3::x() - n * n.x;
        if t.norm() < real(1e-9) {
            t = Vector3::y() - n * n.y;
        }
        t.normalize()
    }

    fn validate(&self) -> Result<()> {
        if self.cup_count < 1 || self.cup_offsets.len() != self.cup_count {
            return Err(Error::Config(format!(
                "cup_count {} does not match {} offsets",
                self.cup_count,
                self.cup_offsets.len()
            )));
        }
        let ok = self.cup_area > R::zero()
            && self.p_atm > self.p_v
            && self.p_v >= R::zero()
            && self.mu >= R::zero()
            && self.mass > R::zero()
            && (self.normal.norm() - R::one()).abs() < real(1e-9);
        if !ok {
            return Err(Error::Config("invalid rig parameters".into()));
        }
        Ok(())
    }
}

/// Failure classification of one (theta, magnitude) load hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Success,
    SlideFailure,
    ForceImbalance,
    MomentImbalance,
}

/// Solved quasi-static balance for one load hypothesis.
#[derive(Debug, Clone)]
pub struct AnalyticOutcome<R> {
    pub classification: Classification,
    /// Per-cup normal (contact) force magnitudes, N.
    pub alphas: Vec<R>,
    /// Friction proportionality constant (friction = gamma * contact force).
    pub gamma: R,
    /// Norm of the reassembled force/moment balance residual, N and N*m.
    pub residual: R,
}

/// Failure boundary a_fail(theta) with its 4th-order polynomial fit.
#[derive(Debug, Clone)]
pub struct BoundaryCurve<R> {
    /// (theta rad, smallest failing magnitude m/s^2), theta strictly increasing.
    pub samples: Vec<(R, R)>,
    /// Coefficients of a_fail(theta), increasing powers of theta in rad.
    pub poly_coeffs: [R; 5],
    pub r_squared: R,
}

impl<R: Real> BoundaryCurve<R> {
    /// Evaluate the polynomial with theta clamped to the sampled domain.
    pub fn eval(&self, theta: R) -> R {
        let lo = self.samples.first().map(|s| s.0).unwrap_or(R::zero());
        let hi = self.samples.last().map(|s| s.0).unwrap_or(R::zero());
        let th = theta.clamp(lo, hi);
        let mut acc = R::zero();
        for &c in self.poly_coeffs.iter().rev() {
            acc = acc * th + c;
        }
        acc
    }
}

/// Magnitude cap of the unimodal (theta = 0) model: sum of cup forces over
/// the payload mass.
pub fn unimodal_limit<R: Real>(rig: &SuctionRig<R>) -> R {
    real::<R>(rig.cup_count as f64) * rig.per_cup_force() / rig.mass
}

const ALPHA_TOL: f64 = 1e-9;
const GAMMA_TOL: f64 = 1e-8;
const BALANCE_TOL: f64 = 1e-6;

/// Solve the per-cup contact forces for a fixed friction constant.
///
/// Rows: total normal force balance, then the three moment components.
/// The system is generically underdetermined (four cups share three moment
/// equations); the SVD least-squares solution picks the minimum-norm forces.
fn solve_alphas<R: Real>(
    rig: &SuctionRig<R>,
    gamma: R,
    theta: R,
    a_mag: R,
) -> (DVector<R>, R) {
    let n = rig.normal;
    let t = rig.tangent();
    let fs = rig.per_cup_force();
    let count = rig.cup_count;
    let mut mat = DMatrix::zeros(4, count);
    let mut rhs = DVector::zeros(4);
    for i in 0..count {
        mat[(0, i)] = R::one();
    }
    rhs[0] = real::<R>(count as f64) * fs - rig.mass * a_mag * theta.cos();
    let d = -n + t * gamma;
    let mut suction_moment = Vector3::zeros();
    for r in &rig.cup_offsets {
        suction_moment += r.cross(&n) * fs;
    }
    for (i, r) in rig.cup_offsets.iter().enumerate() {
        let c = r.cross(&d);
        for k in 0..3 {
            mat[(k + 1, i)] = c[k];
        }
    }
    for k in 0..3 {
        rhs[k + 1] = -suction_moment[k];
    }
    let svd = mat.clone().svd(true, true);
    let alphas = svd
        .solve(&rhs, real(1e-12))
        .expect("svd computed with u/v");
    let resid = (&mat * &alphas - rhs).norm();
    (alphas, resid)
}

/// Classify a hypothetical load of magnitude `a_mag` tilted `theta` from the
/// grasp normal (load lies in the plane spanned by the normal and the rig
/// tangent direction).
pub fn multimodal_classify<R: Real>(
    rig: &SuctionRig<R>,
    theta: R,
    a_mag: R,
) -> Result<AnalyticOutcome<R>> {
    rig.validate()?;
    if theta < R::zero() || theta >= real(std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidAngle(to_f64(theta)));
    }
    if a_mag < R::zero() {
        return Err(Error::Config("load magnitude must be >= 0".into()));
    }
    let fs = rig.per_cup_force();
    let total = real::<R>(rig.cup_count as f64) * fs;
    let atol = real::<R>(ALPHA_TOL);

    let outcome = |class, alphas: DVector<R>, gamma, resid| AnalyticOutcome {
        classification: class,
        alphas: alphas.iter().copied().collect(),
        gamma,
        residual: resid,
    };

    if theta == R::zero() {
        let (alphas, resid) = solve_alphas(rig, R::zero(), theta, a_mag);
        if rig.mass * a_mag > total + atol {
            // normal load exceeds total suction: pure force imbalance
            let deficit = rig.mass * a_mag - total;
            return Ok(outcome(Classification::ForceImbalance, alphas, R::zero(), deficit));
        }
        if alphas.min() < -atol {
            return Ok(outcome(Classification::MomentImbalance, alphas, R::zero(), resid));
        }
        return Ok(outcome(Classification::Success, alphas, R::zero(), resid));
    }

    // tangential balance residual as a function of gamma
    let tangential = rig.mass * a_mag * theta.sin();
    let resid_at = |gamma: R| {
        let (alphas, fm_resid) = solve_alphas(rig, gamma, theta, a_mag);
        let r = gamma * alphas.sum() - tangential;
        (r, alphas, fm_resid)
    };
    let gamma_max = real::<R>(10.0) * rig.mu + R::one();
    let (r_hi, alphas_hi, fm_hi) = resid_at(gamma_max);
    if r_hi < R::zero() {
        // friction cannot balance the tangential load inside the bracket
        return Ok(outcome(Classification::SlideFailure, alphas_hi, gamma_max, fm_hi));
    }
    let mut lo = R::zero();
    let mut hi = gamma_max;
    let mut gamma = hi;
    let mut alphas = alphas_hi;
    let mut fm_resid = fm_hi;
    for _ in 0..200 {
        gamma = (lo + hi) / real(2.0);
        let (r, al, fm) = resid_at(gamma);
        alphas = al;
        fm_resid = fm;
        if r.abs() <= real(GAMMA_TOL) {
            break;
        }
        if r < R::zero() {
            lo = gamma;
        } else {
            hi = gamma;
        }
        if hi - lo <= real(1e-12) {
            break;
        }
    }
    if gamma > rig.mu + atol {
        return Ok(outcome(Classification::SlideFailure, alphas, gamma, fm_resid));
    }
    if alphas.min() < -atol {
        return Ok(outcome(Classification::MomentImbalance, alphas, gamma, fm_resid));
    }
    if fm_resid > real(BALANCE_TOL) {
        // inconsistent moment system: no equilibrium exists for this load
        return Ok(outcome(Classification::MomentImbalance, alphas, gamma, fm_resid));
    }
    Ok(outcome(Classification::Success, alphas, gamma, fm_resid))
}

/// Smallest failing load magnitude for each tilt angle, with a quartic fit.
///
/// Bisects the magnitude in [0, 3 * unimodal_limit] to 1e-3 m/s^2; a grid
/// point where even the upper bracket succeeds is a `DegenerateRig` error.
pub fn failure_boundary<R: Real>(rig: &SuctionRig<R>, theta_grid: &[R]) -> Result<BoundaryCurve<R>> {
    rig.validate()?;
    let deg80 = real::<R>(80.0_f64.to_radians());
    let mut prev: Option<R> = None;
    for &th in theta_grid {
        if th < R::zero() || th > deg80 {
            return Err(Error::InvalidAngle(to_f64(th)));
        }
        if let Some(p) = prev {
            if th <= p {
                return Err(Error::Config("theta grid must be strictly ascending".into()));
            }
        }
        prev = Some(th);
    }
    let a_hi = real::<R>(3.0) * unimodal_limit(rig);
    let tol = real::<R>(1e-3);
    let mut samples = Vec::with_capacity(theta_grid.len());
    for &th in theta_grid {
        if multimodal_classify(rig, th, a_hi)?.classification == Classification::Success {
            return Err(Error::DegenerateRig {
                theta: to_f64(th),
                a_hi: to_f64(a_hi),
            });
        }
        let mut lo = R::zero();
        let mut hi = a_hi;
        while hi - lo > tol {
            let mid = (lo + hi) / real(2.0);
            if multimodal_classify(rig, th, mid)?.classification == Classification::Success {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        samples.push((th, hi));
    }
    // a quartic needs five distinct angles; short sweeps fall back to a
    // constant at the sample mean
    let (poly_coeffs, r_squared) = if samples.len() >= 5 {
        fit_poly4(&samples)?
    } else {
        let mean = samples.iter().fold(R::zero(), |acc, s| acc + s.1)
            / real(samples.len() as f64);
        ([mean, R::zero(), R::zero(), R::zero(), R::zero()], R::one())
    };
    Ok(BoundaryCurve {
        samples,
        poly_coeffs,
        r_squared,
    })
}

/// Least-squares 4th-order polynomial fit; returns coefficients in
/// increasing powers and the coefficient of determination.
pub fn fit_poly4<R: Real>(samples: &[(R, R)]) -> Result<([R; 5], R)> {
    let mut xs: Vec<R> = samples.iter().map(|s| s.0).collect();
    xs.dedup_by(|a, b| (*a - *b).abs() < real(1e-12));
    if xs.len() < 5 {
        return Err(Error::RankDeficient(xs.len()));
    }
    let m = samples.len();
    let mut vand = DMatrix::zeros(m, 5);
    let mut rhs = DVector::zeros(m);
    for (i, &(x, y)) in samples.iter().enumerate() {
        let mut p = R::one();
        for k in 0..5 {
            vand[(i, k)] = p;
            p *= x;
        }
        rhs[i] = y;
    }
    let svd = vand.svd(true, true);
    let sol = svd.solve(&rhs, real(1e-14)).expect("svd computed");
    let mut coeffs = [R::zero(); 5];
    for k in 0..5 {
        coeffs[k] = sol[k];
    }
    let mean = rhs.sum() / real(m as f64);
    let mut ss_res = R::zero();
    let mut ss_tot = R::zero();
    for (i, &(x, y)) in samples.iter().enumerate() {
        let _ = x;
        let mut p = R::one();
        let mut fit = R::zero();
        for k in 0..5 {
            fit += coeffs[k] * p;
            p *= samples[i].0;
        }
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean) * (y - mean);
    }
    // treat ss_tot at rounding level as an exact constant fit
    let floor = R::default_epsilon() * R::default_epsilon()
        * real::<R>(100.0 * m as f64)
        * (mean * mean + R::one());
    let r2 = if ss_tot > floor {
        R::one() - ss_res / ss_tot
    } else {
        R::one()
    };
    Ok((coeffs, r2))
}

/// Signed safety margin of an apparent-acceleration vector against the
/// boundary polynomial: poly(theta) - |a|, theta measured from the normal.
/// Non-negative means the load is inside the safe region.
pub fn analytic_margin<R: Real>(curve: &BoundaryCurve<R>, a_vec: &Vector3<R>, normal: &Vector3<R>) -> R {
    let mag = a_vec.norm();
    if mag == R::zero() {
        return curve.eval(R::zero());
    }
    let cos = (a_vec.dot(normal) / mag).clamp(-R::one(), R::one());
    curve.eval(cos.acos()) - mag
}

// ---------------------------------------------------------------------------
// file formats

#[derive(Debug, Serialize, Deserialize)]
pub struct RigFile {
    pub cup_count: usize,
    pub cup_offsets: Vec<[f64; 3]>,
    pub cup_area: f64,
    pub p_atm: f64,
    pub p_v: f64,
    pub mu: f64,
    pub mass: f64,
    pub normal: [f64; 3],
}

impl RigFile {
    pub fn from_toml(path: &str, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn into_rig<R: Real>(self) -> Result<SuctionRig<R>> {
        let rig = SuctionRig {
            cup_count: self.cup_count,
            cup_offsets: self
                .cup_offsets
                .iter()
                .map(|o| Vector3::new(real(o[0]), real(o[1]), real(o[2])))
                .collect(),
            cup_area: real(self.cup_area),
            p_atm: real(self.p_atm),
            p_v: real(self.p_v),
            mu: real(self.mu),
            mass: real(self.mass),
            normal: Vector3::new(real(self.normal[0]), real(self.normal[1]), real(self.normal[2])),
        };
        rig.validate()?;
        Ok(rig)
    }
}

/// Default rig shipped with the crate: four 30 mm cups on a 60 mm square,
/// 60 kPa pressure differential (see `config/rig.toml`).
pub fn default_rig<R: Real>() -> SuctionRig<R> {
    RigFile::from_toml("config/rig.toml", include_str!("../config/rig.toml"))
        .and_then(RigFile::into_rig)
        .expect("embedded rig config is valid")
}

/// Boundary CSV: `theta_deg,a_fail` rows.
pub fn boundary_csv<R: Real>(curve: &BoundaryCurve<R>) -> String {
    let mut out = String::from("theta_deg,a_fail\n");
    for &(th, a) in &curve.samples {
        out.push_str(&format!("{},{}\n", to_f64(th).to_degrees(), to_f64(a)));
    }
    out
}

/// Polynomial sidecar: `c0,c1,c2,c3,c4` header plus one row, coefficients
/// over powers of theta in rad.
pub fn poly_csv<R: Real>(curve: &BoundaryCurve<R>) -> String {
    let cs = curve.poly_coeffs;
    format!(
        "c0,c1,c2,c3,c4\n{},{},{},{},{}\n",
        to_f64(cs[0]),
        to_f64(cs[1]),
        to_f64(cs[2]),
        to_f64(cs[3]),
        to_f64(cs[4])
    )
}

/// Rebuild a curve from the two CSV artifacts.
pub fn read_boundary_csv<R: Real>(boundary: &str, poly: &str) -> Result<BoundaryCurve<R>> {
    let mut samples = Vec::new();
    for (ln, line) in boundary.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let th: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse("boundary csv", format!("bad theta on line {}", ln + 1)))?;
        let a: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse("boundary csv", format!("bad a_fail on line {}", ln + 1)))?;
        samples.push((real(th.to_radians()), real(a)));
    }
    let coeff_line = poly
        .lines()
        .nth(1)
        .ok_or_else(|| Error::parse("poly csv", "missing coefficient row"))?;
    let vals: Vec<f64> = coeff_line
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| Error::parse("poly csv", e.to_string()))?;
    if vals.len() != 5 {
        return Err(Error::parse("poly csv", "expected 5 coefficients"));
    }
    let mut poly_coeffs = [R::zero(); 5];
    for k in 0..5 {
        poly_coeffs[k] = real(vals[k]);
    }
    Ok(BoundaryCurve {
        samples,
        poly_coeffs,
        r_squared: R::one(),
    })
}
