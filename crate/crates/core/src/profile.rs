//! Time-optimal jerk-limited rest-to-rest 1-D motion profiles (7-segment
//! S-curves). Used to shape the data-collection lifts.

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};

/// Seven-segment S-curve: piecewise-constant jerk, continuous velocity and
/// acceleration, rest at both ends.
///
/// Segment order: jerk up, accel cruise, jerk down, velocity cruise,
/// jerk down, decel cruise, jerk up.
#[derive(Debug, Clone)]
pub struct SCurveProfile<R> {
    pub segment_durations: [R; 7],
    pub jerk_signs: [i8; 7],
    pub v_max: R,
    pub a_max: R,
    pub j_max: R,
    /// Total displacement, m.
    pub distance: R,
}

impl<R: Real> SCurveProfile<R> {
    pub fn duration(&self) -> R {
        self.segment_durations
            .iter()
            .fold(R::zero(), |acc, &d| acc + d)
    }
}

/// Minimal-duration 7-segment rest-to-rest profile covering distance `d`
/// under the three limits. `d = 0` yields a zero-duration profile.
pub fn scurve<R: Real>(d: R, v_max: R, a_max: R, j_max: R) -> SCurveProfile<R> {
    assert!(
        v_max > R::zero() && a_max > R::zero() && j_max > R::zero(),
        "limits must be positive"
    );
    assert!(d >= R::zero(), "distance must be non-negative");

    let two = real::<R>(2.0);
    let zero = R::zero();
    let signs = [1i8, 0, -1, 0, -1, 0, 1];
    let make = |tj: R, ta: R, tv: R| SCurveProfile {
        segment_durations: [tj, ta, tj, tv, tj, ta, tj],
        jerk_signs: signs,
        v_max,
        a_max,
        j_max,
        distance: d,
    };

    if d == zero {
        return make(zero, zero, zero);
    }

    // Acceleration phase reaching peak velocity v: the ramp either saturates
    // a_max (tj = a_max/j_max) or stays triangular (tj = sqrt(v/j_max)).
    // Displacement of one full accel phase is v * (2 tj + ta) / 2.
    let phase_to_v = |v: R| -> (R, R) {
        if v * j_max >= a_max * a_max {
            let tj = a_max / j_max;
            (tj, v / a_max - tj)
        } else {
            ((v / j_max).sqrt(), zero)
        }
    };

    // try full profile with a velocity cruise at v_max
    let (tj, ta) = phase_to_v(v_max);
    let d_acc = v_max * (two * tj + ta) / two;
    if d >= two * d_acc {
        let tv = (d - two * d_acc) / v_max;
        return make(tj, ta, tv);
    }

    // no cruise: find peak velocity v_p < v_max with 2 * d_acc(v_p) = d.
    // saturated-acceleration branch: v_p = a_max (tj + ta),
    // d = v_p (2 tj + ta) with tj = a_max/j_max -> quadratic in ta.
    let tj = a_max / j_max;
    // a_max * (tj + ta) * (2 tj + ta) = d
    // ta^2 + 3 tj ta + (2 tj^2 - d / a_max) = 0
    let half = R::one() / two;
    let three = real::<R>(3.0);
    let disc = (three * tj) * (three * tj) - real::<R>(4.0) * (two * tj * tj - d / a_max);
    if disc >= zero {
        let ta = (-three * tj + disc.sqrt()) * half;
        if ta >= zero {
            let v_p = a_max * (tj + ta);
            if v_p <= v_max {
                return make(tj, ta, zero);
            }
        }
    }
    // triangular acceleration: ta = 0, d = 2 j tj^3
    let tj = (d / (two * j_max)).powf(R::one() / three);
    make(tj, zero, zero)
}

/// Closed form for the pure jerk-limited regime (no limit saturates):
/// total duration (32 d / j_max)^(1/3).
pub fn jerk_triangle_duration<R: Real>(d: R, j_max: R) -> R {
    (real::<R>(32.0) * d / j_max).powf(R::one() / real::<R>(3.0))
}

/// Exact piecewise-polynomial evaluation of the profile at time `t`.
/// Returns (position, velocity, acceleration, jerk).
pub fn sample<R: Real>(profile: &SCurveProfile<R>, t: R) -> Result<(R, R, R, R)> {
    let duration = profile.duration();
    if t < R::zero() || t > duration {
        return Err(Error::OutOfRange {
            t: to_f64(t),
            duration: to_f64(duration),
        });
    }
    let two = real::<R>(2.0);
    let six = real::<R>(6.0);
    let mut pos = R::zero();
    let mut vel = R::zero();
    let mut acc = R::zero();
    let mut remaining = t;
    for (seg, &dur) in profile.segment_durations.iter().enumerate() {
        let j = match profile.jerk_signs[seg] {
            1 => profile.j_max,
            -1 => -profile.j_max,
            _ => R::zero(),
        };
        let dt = if remaining < dur { remaining } else { dur };
        if dt > R::zero() || (remaining == R::zero() && seg == 0) {
            if remaining <= dur {
                pos += vel * dt + acc * dt * dt / two + j * dt * dt * dt / six;
                vel += acc * dt + j * dt * dt / two;
                acc += j * dt;
                return Ok((pos, vel, acc, j));
            }
        }
        pos += vel * dur + acc * dur * dur / two + j * dur * dur * dur / six;
        vel += acc * dur + j * dur * dur / two;
        acc += j * dur;
        remaining -= dur;
    }
    Ok((pos, vel, acc, R::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Brute-force duration oracle over the peak velocity.
    ///
    /// For a fixed peak velocity vp, the accel phase ramps with jerk j for tj,
    /// cruises acceleration for ta, ramps down for tj, with
    /// vp = j*tj*(tj+ta); its duration tj + vp/(j*tj) is convex in tj, so the
    /// best tj is sqrt(vp/j) clamped to a/j (ta >= 0 caps tj at sqrt(vp/j)).
    /// The cruise fills the remaining displacement. vp is scanned on a
    /// refining grid; infeasible vp (negative cruise) are skipped.
    fn oracle_duration(d: f64, v: f64, a: f64, j: f64) -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        let time_for = |vp: f64| -> Option<f64> {
            let tj = (vp / j).sqrt().min(a / j);
            let phase = tj + vp / (j * tj); // 2*tj + ta
            let d_acc = vp * phase / 2.0;
            let rest = d - 2.0 * d_acc;
            if rest < 0.0 {
                return None;
            }
            Some(2.0 * phase + rest / vp)
        };
        // displacement cap: d = vp * phase >= 2 vp^1.5 / sqrt(j)
        let vp_cap = (d * j.sqrt() / 2.0).powf(2.0 / 3.0) * 1.001;
        let (mut lo, mut hi) = (0.0_f64, v.min(vp_cap));
        let mut best = f64::INFINITY;
        for _round in 0..8 {
            let n = 400;
            let mut best_vp = hi;
            for i in 1..=n {
                let vp = lo + (hi - lo) * i as f64 / n as f64;
                if let Some(t) = time_for(vp) {
                    if t < best {
                        best = t;
                        best_vp = vp;
                    }
                }
            }
            let span = (hi - lo) / n as f64 * 2.0;
            lo = (best_vp - span).max(1e-12);
            hi = (best_vp + span).min(v);
        }
        best
    }

    #[test]
    fn zero_distance_zero_duration() {
        let p = scurve(0.0_f64, 1.0, 1.0, 1.0);
        assert_eq!(p.duration(), 0.0);
    }

    #[test]
    fn pure_jerk_regime_closed_form() {
        // huge v/a limits: four-segment jerk triangle
        let (d, j) = (0.016_f64, 2000.0);
        let p = scurve(d, 1e6, 1e6, j);
        assert_relative_eq!(p.duration(), jerk_triangle_duration(d, j), epsilon = 1e-12);
        assert_relative_eq!(p.duration(), 0.06349604207872798, epsilon = 1e-9);
        let oracle = oracle_duration(d, 1e6, 1e6, j);
        assert!((p.duration() - oracle).abs() < 1e-3);
    }

    #[test]
    fn saturated_cruise_closed_form() {
        // all three phases saturate: T = d/v + v/a + a/j
        let (d, v, a, j) = (2.0_f64, 1.0, 2.0, 20.0);
        let p = scurve(d, v, a, j);
        assert_relative_eq!(p.duration(), d / v + v / a + a / j, epsilon = 1e-12);
        assert_relative_eq!(p.duration(), 2.6, epsilon = 1e-12);
        let oracle = oracle_duration(d, v, a, j);
        assert!((p.duration() - oracle).abs() < 1e-3);
    }

    #[test]
    fn sample_rest_boundary_conditions() {
        let p = scurve(0.7_f64, 2.0, 8.0, 100.0);
        let (pos0, vel0, acc0, _) = sample(&p, 0.0).unwrap();
        assert_eq!((pos0, vel0, acc0), (0.0, 0.0, 0.0));
        let (pos1, vel1, acc1, _) = sample(&p, p.duration()).unwrap();
        assert_relative_eq!(pos1, 0.7, epsilon = 1e-9);
        assert_relative_eq!(vel1, 0.0, epsilon = 1e-9);
        assert_relative_eq!(acc1, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sample_mid_cruise_at_v_max() {
        let (d, v, a, j) = (2.0_f64, 1.0, 2.0, 20.0);
        let p = scurve(d, v, a, j);
        assert!(p.segment_durations[3] > 0.0, "cruise segment expected");
        let t_mid = p.segment_durations[..3].iter().sum::<f64>() + p.segment_durations[3] / 2.0;
        let (_, vel, acc, _) = sample(&p, t_mid).unwrap();
        assert_relative_eq!(vel, v, epsilon = 1e-9);
        assert_relative_eq!(acc, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sample_out_of_range_rejected() {
        let p = scurve(0.1_f64, 1.0, 1.0, 1.0);
        assert!(matches!(
            sample(&p, p.duration() + 0.1),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(sample(&p, -0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn limits_respected_at_1khz() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let d: f64 = rng.gen_range(0.01..2.0);
            let v = rng.gen_range(0.2..5.0);
            let a = rng.gen_range(1.0..100.0);
            let j = rng.gen_range(10.0..5000.0);
            let p = scurve(d, v, a, j);
            let duration = p.duration();
            let steps = (duration * 1000.0).ceil() as usize;
            for k in 0..=steps {
                let t = (k as f64 / 1000.0).min(duration);
                let (_, vel, acc, jerk) = sample(&p, t).unwrap();
                assert!(vel.abs() <= v + 1e-9, "vel {vel} > {v}");
                assert!(acc.abs() <= a + 1e-9, "acc {acc} > {a}");
                assert!(jerk.abs() <= j + 1e-9, "jerk {jerk} > {j}");
            }
            let (pos, _, _, _) = sample(&p, duration).unwrap();
            assert!((pos - d).abs() <= 1e-9, "displacement {pos} != {d}");
        }
    }

    #[test]
    fn duration_matches_grid_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let d = rng.gen_range(0.01..2.0);
            let v = rng.gen_range(0.2..5.0);
            let a = rng.gen_range(1.0..100.0);
            let j = rng.gen_range(10.0..5000.0);
            let p = scurve(d, v, a, j);
            let oracle = oracle_duration(d, v, a, j);
            assert!(
                p.duration() <= oracle + 1e-3,
                "generated {} vs oracle {} for d={d} v={v} a={a} j={j}",
                p.duration(),
                oracle
            );
            // the generated profile must itself be valid, so the oracle can
            // never beat it by more than its own grid resolution either way
            assert!(
                oracle <= p.duration() + 1e-3,
                "oracle {} beat generated {} for d={d} v={v} a={a} j={j}",
                oracle,
                p.duration()
            );
        }
    }

    #[test]
    fn generic_scalar_f32_profile() {
        let p = scurve(0.5_f32, 1.0, 4.0, 50.0);
        let (pos, _, _, _) = sample(&p, p.duration()).unwrap();
        assert!((pos - 0.5).abs() < 1e-4);
    }
}
