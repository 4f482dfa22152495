//! Self-supervised data collection and dataset assembly: a boundary walk
//! over the (a_max, j_max) lift grid, pressure-based window labeling,
//! augmentation of the training side, and a by-lift train/test split.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::profile::scurve;
use crate::scalar::{real, to_f64, Real};
use crate::sim::{run_lift, CupSimParams, LiftRecord};
use crate::suction::SuctionRig;

/// Collection grid and lift parameters.
#[derive(Debug, Clone)]
pub struct CollectionConfig<R> {
    pub a_start: R,
    pub a_step: R,
    pub a_count: usize,
    pub j_start: R,
    pub j_step: R,
    pub j_count: usize,
    pub grasp_angles: Vec<R>,
    pub masses: Vec<R>,
    pub lift_height: R,
    pub lift_v_max: R,
    /// History window length in joint-trace samples.
    pub h: usize,
    pub joint_rate: R,
    pub pressure_rate: R,
}

/// One training example: h cup-frame apparent accelerations ending at the
/// window index, the payload mass, and the failure label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow<R> {
    pub lift_id: usize,
    pub mass: R,
    pub label: u8,
    /// Oldest sample first, length h.
    pub accels: Vec<Vector3<R>>,
}

/// Pure boundary walk over grid indices. `try_lift(ia, ij)` executes the
/// lift at those grid coordinates and reports whether it failed; the walk
/// reports every executed cell with its outcome.
///
/// Phase one climbs j_max from the grid origin until the first failure
/// (spilling into a_max if j_max tops out). From then on every failure steps
/// j_max down and every success steps a_max up, hugging the failure
/// boundary, until either axis is exhausted.
pub fn boundary_walk<E>(
    a_count: usize,
    j_count: usize,
    mut try_lift: impl FnMut(usize, usize) -> std::result::Result<bool, E>,
) -> std::result::Result<Vec<(usize, usize, bool)>, E> {
    assert!(a_count > 0 && j_count > 0);
    let mut cells = Vec::new();
    let (mut ia, mut ij) = (0usize, 0usize);
    let mut seen_failure = false;
    loop {
        let failed = try_lift(ia, ij)?;
        cells.push((ia, ij, failed));
        if !seen_failure {
            if failed {
                seen_failure = true;
                if ij == 0 {
                    break;
                }
                ij -= 1;
            } else if ij + 1 < j_count {
                ij += 1;
            } else if ia + 1 < a_count {
                ia += 1;
            } else {
                break;
            }
        } else if failed {
            if ij == 0 {
                break;
            }
            ij -= 1;
        } else if ia + 1 < a_count {
            ia += 1;
        } else {
            break;
        }
    }
    Ok(cells)
}

/// Run the boundary walk against the cup simulator for every
/// (mass, grasp_angle) combination. Combinations run in parallel; the
/// returned records are ordered by (mass, angle, walk step).
pub fn boundary_search<R: Real>(
    config: &CollectionConfig<R>,
    params: &CupSimParams<R>,
    rig: &SuctionRig<R>,
    model: &RobotModel<R>,
) -> Result<Vec<LiftRecord<R>>> {
    let combos: Vec<(R, R)> = config
        .masses
        .iter()
        .flat_map(|&m| config.grasp_angles.iter().map(move |&g| (m, g)))
        .collect();
    let per_combo: Vec<Result<Vec<LiftRecord<R>>>> = combos
        .par_iter()
        .map(|&(mass, angle)| {
            let rig_m = rig.with_mass(mass);
            let mut records = Vec::new();
            boundary_walk(config.a_count, config.j_count, |ia, ij| -> Result<bool> {
                let a_max = config.a_start + config.a_step * real(ia as f64);
                let j_max = config.j_start + config.j_step * real(ij as f64);
                let profile = scurve(config.lift_height, config.lift_v_max, a_max, j_max);
                let rec = run_lift(
                    params,
                    &rig_m,
                    model,
                    &profile,
                    angle,
                    config.joint_rate,
                    config.pressure_rate,
                )?;
                let failed = rec.failed();
                records.push(rec);
                Ok(failed)
            })?;
            Ok(records)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_combo {
        out.extend(r?);
    }
    Ok(out)
}

/// Failure index of a record: first pressure sample above the halfway level
/// between the trace extremes, mapped to the nearest joint-trace index.
fn failure_index<R: Real>(rec: &LiftRecord<R>) -> Option<usize> {
    let (lo, hi) = rec
        .pressure
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, p)| {
            (lo.min(to_f64(p)), hi.max(to_f64(p)))
        });
    if hi - lo <= 1.0 {
        return None;
    }
    let mid = (lo + hi) / 2.0;
    let t = rec
        .pressure
        .iter()
        .find(|&&(_, p)| to_f64(p) > mid)
        .map(|&(t, _)| to_f64(t))?;
    let idx = (t / to_f64(rec.t_step)).round() as usize;
    Some(idx.min(rec.q.len() - 1))
}

/// Slice lift records into labeled windows.
///
/// The single window ending at the failure index is the positive example;
/// every window ending before it, and every window of a non-failing lift,
/// is negative. Windows reaching past the start of the trace repeat the
/// first sample. Accelerations are the cup-frame apparent accelerations.
pub fn label_windows<R: Real>(
    records: &[LiftRecord<R>],
    h: usize,
    model: &RobotModel<R>,
) -> Result<Vec<LabeledWindow<R>>> {
    assert!(h >= 1);
    let mut windows = Vec::new();
    for (lift_id, rec) in records.iter().enumerate() {
        if rec.q.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let accels: Vec<Vector3<R>> = (0..rec.q.len())
            .map(|k| {
                model
                    .ee_accel(&rec.q[k], &rec.qd[k], &rec.qdd[k])
                    .map(|s| s.apparent_accel_cup)
            })
            .collect::<Result<_>>()?;
        let fail_at = failure_index(rec);
        let last = match fail_at {
            Some(idx) => idx,
            None => rec.q.len() - 1,
        };
        for end in 0..=last {
            let label = match fail_at {
                Some(idx) if end == idx => 1,
                _ => 0,
            };
            let mut win = Vec::with_capacity(h);
            for k in 0..h {
                let rel = end as isize - (h - 1 - k) as isize;
                win.push(accels[rel.max(0) as usize]);
            }
            windows.push(LabeledWindow {
                lift_id,
                mass: rec.mass,
                label,
                accels: win,
            });
        }
    }
    Ok(windows)
}

/// Replicate windows with scaled accelerations: failures by 1 + eps,
/// successes by 1 - eps, eps drawn fresh per replica from `eps_range`.
/// Originals are kept. Deterministic under the seed.
pub fn augment<R: Real>(
    windows: &[LabeledWindow<R>],
    failure_copies: usize,
    success_copies: usize,
    eps_range: (f64, f64),
    seed: u64,
) -> Vec<LabeledWindow<R>> {
    assert!(eps_range.0 > 0.0 && eps_range.1 < 1.0 && eps_range.0 <= eps_range.1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(
        windows.len() * (1 + success_copies.max(failure_copies)),
    );
    for w in windows {
        out.push(w.clone());
        let copies = if w.label == 1 { failure_copies } else { success_copies };
        for _ in 0..copies {
            let eps = if eps_range.0 == eps_range.1 {
                eps_range.0
            } else {
                rng.gen_range(eps_range.0..eps_range.1)
            };
            let scale = real::<R>(if w.label == 1 { 1.0 + eps } else { 1.0 - eps });
            let mut rep = w.clone();
            for a in &mut rep.accels {
                *a *= scale;
            }
            out.push(rep);
        }
    }
    out
}

/// Partition windows by source lift with a seeded shuffle: every window of a
/// lift lands on one side. Augment only the training side, afterwards.
pub fn split<R: Real>(
    windows: &[LabeledWindow<R>],
    train_fraction: f64,
    seed: u64,
) -> (Vec<LabeledWindow<R>>, Vec<LabeledWindow<R>>) {
    assert!((0.0..=1.0).contains(&train_fraction));
    let mut ids: Vec<usize> = windows.iter().map(|w| w.lift_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let train_ids: std::collections::HashSet<usize> = ids[..n_train].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for w in windows {
        if train_ids.contains(&w.lift_id) {
            train.push(w.clone());
        } else {
            test.push(w.clone());
        }
    }
    (train, test)
}

// ---------------------------------------------------------------------------
// file formats

#[derive(Debug, Serialize, Deserialize)]
pub struct CollectFile {
    pub a_start: f64,
    pub a_step: f64,
    pub a_count: usize,
    pub j_start: f64,
    pub j_step: f64,
    pub j_count: usize,
    pub grasp_angles: Vec<f64>,
    pub masses: Vec<f64>,
    pub lift_height: f64,
    pub lift_v_max: f64,
    pub h: usize,
    pub joint_rate: f64,
    pub pressure_rate: f64,
}

impl CollectFile {
    pub fn from_toml(path: &str, text: &str) -> Result<Self> {
        let f: CollectFile = toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        if f.a_count == 0 || f.j_count == 0 || f.h == 0 {
            return Err(Error::parse(path, "grid counts and h must be >= 1"));
        }
        if !(f.a_start > 0.0 && f.a_step > 0.0 && f.j_start > 0.0 && f.j_step > 0.0) {
            return Err(Error::parse(path, "grids must be positive and ascending"));
        }
        Ok(f)
    }

    pub fn into_config<R: Real>(self) -> CollectionConfig<R> {
        CollectionConfig {
            a_start: real(self.a_start),
            a_step: real(self.a_step),
            a_count: self.a_count,
            j_start: real(self.j_start),
            j_step: real(self.j_step),
            j_count: self.j_count,
            grasp_angles: self.grasp_angles.iter().map(|&g| real(g)).collect(),
            masses: self.masses.iter().map(|&m| real(m)).collect(),
            lift_height: real(self.lift_height),
            lift_v_max: real(self.lift_v_max),
            h: self.h,
            joint_rate: real(self.joint_rate),
            pressure_rate: real(self.pressure_rate),
        }
    }
}

/// Default collection setup shipped with the crate (see `config/collect.toml`).
pub fn default_collection<R: Real>() -> CollectionConfig<R> {
    CollectFile::from_toml("config/collect.toml", include_str!("../config/collect.toml"))
        .expect("embedded collect config is valid")
        .into_config()
}

/// Dataset CSV: one row per window, accelerations oldest first.
pub fn dataset_csv<R: Real>(windows: &[LabeledWindow<R>]) -> String {
    let h = windows.first().map(|w| w.accels.len()).unwrap_or(0);
    let mut out = String::from("lift_id,mass,label");
    for k in 0..h {
        out.push_str(&format!(",a{k}x,a{k}y,a{k}z"));
    }
    out.push('\n');
    for w in windows {
        out.push_str(&format!("{},{},{}", w.lift_id, to_f64(w.mass), w.label));
        for a in &w.accels {
            out.push_str(&format!(",{},{},{}", to_f64(a.x), to_f64(a.y), to_f64(a.z)));
        }
        out.push('\n');
    }
    out
}

pub fn read_dataset_csv<R: Real>(text: &str) -> Result<Vec<LabeledWindow<R>>> {
    let path = "dataset csv";
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyDataset)?;
    let cols = header.split(',').count();
    if cols < 6 || (cols - 3) % 3 != 0 {
        return Err(Error::parse(path, "column count not 3 + 3h"));
    }
    let h = (cols - 3) / 3;
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols {
            return Err(Error::parse(path, "ragged row"));
        }
        let lift_id: usize = vals[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(path, e.to_string()))?;
        let mass: f64 = vals[1]
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::parse(path, e.to_string()))?;
        let label: u8 = vals[2]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(path, e.to_string()))?;
        let mut accels = Vec::with_capacity(h);
        for k in 0..h {
            let mut comp = [0.0_f64; 3];
            for c in 0..3 {
                comp[c] = vals[3 + 3 * k + c]
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::parse(path, e.to_string()))?;
            }
            accels.push(Vector3::new(real(comp[0]), real(comp[1]), real(comp[2])));
        }
        out.push(LabeledWindow {
            lift_id,
            mass: real(mass),
            label,
            accels,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_robot;
    use crate::sim::default_cup_params;
    use crate::suction::default_rig;

    #[test]
    fn walk_without_failures_sweeps_both_axes() {
        let cells = boundary_walk(4, 5, |_, _| Ok::<bool, ()>(false)).unwrap();
        assert_eq!(cells.len(), 5 + 3);
        assert!(cells.iter().all(|&(_, _, failed)| !failed));
        assert_eq!(*cells.last().unwrap(), (3, 4, false));
    }

    #[test]
    fn walk_straddles_synthetic_threshold_plane() {
        // failure iff a + j / 10 > c, with unit-compatible grid steps so the
        // boundary drops one j cell per a cell
        let (a_start, a_step) = (1.0_f64, 1.0);
        let (j_start, j_step) = (10.0_f64, 10.0);
        let c = 8.9;
        let (a_count, j_count) = (10, 10);
        let cells = boundary_walk(a_count, j_count, |ia, ij| {
            let a = a_start + a_step * ia as f64;
            let j = j_start + j_step * ij as f64;
            Ok::<bool, ()>(a + j / 10.0 > c)
        })
        .unwrap();
        assert!(cells.len() < a_count * j_count / 2);
        assert!(cells.iter().any(|c| c.2) && cells.iter().any(|c| !c.2));
        // from the first failure on, the walk hugs the boundary
        let first_fail = cells.iter().position(|c| c.2).unwrap();
        for &(ia, ij, _) in &cells[first_fail..] {
            // true boundary in j-index units for this column
            let a = a_start + a_step * ia as f64;
            let j_cross = 10.0 * (c - a);
            let idx_cross = (j_cross - j_start) / j_step;
            let dist = (ij as f64 - idx_cross).abs();
            assert!(
                dist <= 1.0 + 1e-9 || idx_cross < 0.0 || idx_cross > (j_count - 1) as f64,
                "cell ({ia},{ij}) is {dist} steps from the boundary"
            );
        }
        // every visited a row crossed by the boundary holds both outcomes
        for ia in cells.iter().map(|c| c.0) {
            let a = a_start + a_step * ia as f64;
            let idx_cross = (10.0 * (c - a) - j_start) / j_step;
            if !(0.0..=(j_count - 1) as f64).contains(&idx_cross) {
                continue;
            }
            let row: Vec<_> = cells.iter().filter(|c| c.0 == ia).collect();
            assert!(row.iter().any(|c| c.2), "row {ia} has no failure");
            assert!(row.iter().any(|c| !c.2), "row {ia} has no success");
        }
    }

    #[test]
    fn walk_on_sim_oracle_executes_far_fewer_cells_than_grid() {
        let mut config = default_collection::<f64>();
        config.masses = vec![1.5];
        config.grasp_angles = vec![0.0];
        config.a_start = 40.0;
        config.a_step = 6.0;
        config.a_count = 10;
        config.j_start = 1000.0;
        config.j_step = 600.0;
        config.j_count = 10;
        let records = boundary_search(
            &config,
            &default_cup_params(),
            &default_rig(),
            &default_robot(),
        )
        .unwrap();
        assert!(records.len() <= 40, "executed {} lifts", records.len());
        assert!(records.iter().any(|r| r.failed()));
        assert!(records.iter().any(|r| !r.failed()));
    }

    fn synthetic_record(n: usize, fail_at: Option<usize>, t_step: f64) -> LiftRecord<f64> {
        use nalgebra::DVector;
        let q: Vec<_> = (0..n)
            .map(|k| DVector::from_element(1, k as f64 * 0.01))
            .collect();
        let pressure: Vec<(f64, f64)> = (0..2 * n)
            .map(|j| {
                let t = j as f64 * t_step / 2.0;
                let p = match fail_at {
                    Some(idx) if t >= idx as f64 * t_step => 101325.0,
                    _ => 41325.0,
                };
                (t, p)
            })
            .collect();
        LiftRecord {
            grasp_angle: 0.0,
            mass: 1.5,
            a_max: 1.0,
            j_max: 1.0,
            t_step,
            q: q.clone(),
            qd: q.clone(),
            qdd: q,
            pressure,
            failure_time: fail_at.map(|i| i as f64 * t_step),
        }
    }

    #[test]
    fn labeling_non_failing_lift_yields_all_negatives() {
        let model = crate::kinematics::one_link_robot::<f64>(0.5);
        let rec = synthetic_record(30, None, 0.008);
        let windows = label_windows(&[rec], 6, &model).unwrap();
        assert_eq!(windows.len(), 30);
        assert!(windows.iter().all(|w| w.label == 0));
        assert!(windows.iter().all(|w| w.accels.len() == 6));
    }

    #[test]
    fn labeling_marks_exactly_the_failure_window() {
        let model = crate::kinematics::one_link_robot::<f64>(0.5);
        let rec = synthetic_record(60, Some(40), 0.008);
        let windows = label_windows(&[rec], 6, &model).unwrap();
        // windows end at indices 0..=40
        assert_eq!(windows.len(), 41);
        let positives: Vec<_> = windows.iter().filter(|w| w.label == 1).collect();
        assert_eq!(positives.len(), 1);
        assert_eq!(windows[40].label, 1);
    }

    #[test]
    fn labeling_pads_early_windows_with_first_sample() {
        let model = crate::kinematics::one_link_robot::<f64>(0.5);
        let rec = synthetic_record(10, None, 0.008);
        let windows = label_windows(&[rec], 4, &model).unwrap();
        let w0 = &windows[0];
        assert!(w0.accels.windows(2).all(|p| p[0] == p[1]));
        let w2 = &windows[2];
        assert_eq!(w2.accels[0], w2.accels[1]); // indices -1 and 0 both clamp to 0
    }

    #[test]
    fn labeling_failing_lift_positive_window_sees_higher_load() {
        let model = default_robot::<f64>();
        let params = default_cup_params::<f64>();
        let rig = default_rig::<f64>();
        let profile = crate::profile::scurve(0.3, 4.0, 100.0, 8000.0);
        let rec = run_lift(&params, &rig, &model, &profile, 0.0, 125.0, 167.0).unwrap();
        assert!(rec.failed());
        let windows = label_windows(&[rec], 6, &model).unwrap();
        let mean_mag = |w: &LabeledWindow<f64>| {
            w.accels.iter().map(|a| a.norm()).sum::<f64>() / w.accels.len() as f64
        };
        let pos = windows.iter().find(|w| w.label == 1).unwrap();
        let neg_mean = windows
            .iter()
            .filter(|w| w.label == 0)
            .map(mean_mag)
            .sum::<f64>()
            / windows.iter().filter(|w| w.label == 0).count() as f64;
        assert!(mean_mag(pos) >= neg_mean);
    }

    #[test]
    fn augment_counts_and_ranges() {
        let base = LabeledWindow {
            lift_id: 0,
            mass: 1.5_f64,
            label: 1,
            accels: vec![Vector3::new(1.0, 2.0, 3.0); 6],
        };
        let mut neg = base.clone();
        neg.label = 0;
        neg.lift_id = 1;
        let out = augment(&[base.clone(), neg], 30, 4, (0.01, 0.10), 7);
        assert_eq!(out.len(), 31 + 5);
        for w in &out {
            let scale = w.accels[0].x;
            if w.label == 1 {
                assert!((1.0..1.10).contains(&scale), "failure scale {scale}");
            } else {
                assert!((0.90..=1.0).contains(&(scale / 1.0)), "success scale {scale}");
            }
        }
        // determinism
        let again = augment(&[base, {
            let mut n = out[31].clone();
            n.accels = vec![Vector3::new(1.0, 2.0, 3.0); 6];
            n
        }], 30, 4, (0.01, 0.10), 7);
        let once_more = augment(&[again[0].clone(), again[31].clone()], 30, 4, (0.01, 0.10), 7);
        assert_eq!(again.len(), once_more.len());
    }

    #[test]
    fn augment_degenerate_range_is_exact() {
        let base = LabeledWindow {
            lift_id: 0,
            mass: 1.5_f64,
            label: 1,
            accels: vec![Vector3::new(2.0, 0.0, 0.0); 3],
        };
        let out = augment(&[base], 2, 0, (0.05, 0.05), 1);
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].accels[0].x, 2.0 * 1.05);
        assert_eq!(out[2].accels[0].x, 2.0 * 1.05);
    }

    #[test]
    fn split_is_by_lift_and_deterministic() {
        let mut windows = Vec::new();
        for lift in 0..10 {
            for _ in 0..7 {
                windows.push(LabeledWindow {
                    lift_id: lift,
                    mass: 1.0_f64,
                    label: 0,
                    accels: vec![Vector3::zeros(); 2],
                });
            }
        }
        let (train, test) = split(&windows, 0.8, 42);
        let ids = |ws: &[LabeledWindow<f64>]| {
            let mut v: Vec<usize> = ws.iter().map(|w| w.lift_id).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        assert_eq!(ids(&train).len(), 8);
        assert_eq!(ids(&test).len(), 2);
        for id in ids(&test) {
            assert!(!ids(&train).contains(&id));
        }
        let (train2, test2) = split(&windows, 0.8, 42);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn dataset_csv_round_trip_is_bit_identical() {
        let model = crate::kinematics::one_link_robot::<f64>(0.5);
        let rec = synthetic_record(25, Some(12), 0.008);
        let windows = label_windows(&[rec], 3, &model).unwrap();
        let text = dataset_csv(&windows);
        let back: Vec<LabeledWindow<f64>> = read_dataset_csv(&text).unwrap();
        assert_eq!(windows, back);
        assert_eq!(dataset_csv(&back), text);
    }
}
