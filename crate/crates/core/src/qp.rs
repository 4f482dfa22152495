//! Operator-splitting QP solver with warm starting.
//!
//! Problem form: minimize 1/2 x'Px + q'x subject to l <= Ax <= u. The
//! iteration alternates a quasi-definite KKT solve with a projection onto
//! the bound box, with Ruiz equilibration, per-row step sizes (stiffer on
//! equality rows), infeasibility certificates, and an active-set polish
//! that recovers machine-precision feasibility on the active rows.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};
use crate::sparse::{Csr, CscUpper, LdlFactor};

/// One linearized subproblem in OSQP form plus the trust-region box the
/// assembler folded into its variable-bound rows (kept for inspection).
#[derive(Debug, Clone)]
pub struct QpSubproblem<R: Real> {
    /// PSD quadratic cost, full symmetric CSR.
    pub p: Csr<R>,
    pub q: DVector<R>,
    /// Constraint rows; variable bounds are identity rows in here.
    pub a: Csr<R>,
    pub l: DVector<R>,
    pub u: DVector<R>,
    /// Trust-region box around the current iterate, when one applies.
    pub trust: Option<(DVector<R>, DVector<R>)>,
}

#[derive(Debug, Clone)]
pub struct QpSolution<R: Real> {
    pub x: DVector<R>,
    /// Dual variables of the constraint rows.
    pub y: DVector<R>,
    pub iterations: usize,
    pub polished: bool,
}

pub struct QpSettings {
    pub eps: f64,
    pub max_iter: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub check_interval: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps: 1e-5,
            max_iter: 20_000,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 10,
        }
    }
}

const RHO_EQ_SCALE: f64 = 1e3;
const EPS_INFEAS: f64 = 1e-7;

fn inf_norm<R: Real>(v: &DVector<R>) -> R {
    v.iter().fold(R::zero(), |acc, &x| acc.max(x.abs()))
}

/// Assemble the upper-triangular KKT matrix [[P + sigma I, A'], [A, -1/rho]].
fn kkt_upper<R: Real>(p: &Csr<R>, a: &Csr<R>, sigma: R, rho: &[R]) -> CscUpper<R> {
    let n = p.nrows;
    let m = a.nrows;
    let mut colptr = vec![0usize];
    let mut rowidx = Vec::new();
    let mut values = Vec::new();
    for c in 0..n {
        // upper part of column c of P: P(r, c) = P(c, r) from row c of CSR
        let (cols, vals) = p.row(c);
        let mut has_diag = false;
        for (k, &r) in cols.iter().enumerate() {
            if r > c {
                break;
            }
            if r == c {
                values.push(vals[k] + sigma);
                rowidx.push(r);
                has_diag = true;
            } else {
                values.push(vals[k]);
                rowidx.push(r);
            }
        }
        if !has_diag {
            rowidx.push(c);
            values.push(sigma);
        }
        colptr.push(rowidx.len());
    }
    for j in 0..m {
        let (cols, vals) = a.row(j);
        for (k, &c) in cols.iter().enumerate() {
            rowidx.push(c);
            values.push(vals[k]);
        }
        rowidx.push(n + j);
        values.push(-R::one() / rho[j]);
        colptr.push(rowidx.len());
    }
    CscUpper {
        n: n + m,
        colptr,
        rowidx,
        values,
    }
}

struct Scaling<R> {
    d: Vec<R>,
    e: Vec<R>,
    c: R,
}

/// Modified Ruiz equilibration of [[P, A'], [A, 0]] with cost scaling.
fn ruiz<R: Real>(p: &mut Csr<R>, q: &mut DVector<R>, a: &mut Csr<R>, l: &mut DVector<R>, u: &mut DVector<R>) -> Scaling<R> {
    let n = p.nrows;
    let m = a.nrows;
    let mut d = vec![R::one(); n];
    let mut e = vec![R::one(); m];
    let mut c = R::one();
    let lo = real::<R>(1e-4);
    let hi = real::<R>(1e4);
    for _ in 0..10 {
        let pc = p.col_inf_norms();
        let ac = a.col_inf_norms();
        let mut dd = vec![R::one(); n];
        for i in 0..n {
            let norm = pc[i].max(ac[i]);
            if norm > R::zero() {
                dd[i] = (R::one() / norm.sqrt()).clamp(lo, hi);
            }
        }
        let ar = a.row_inf_norms();
        let mut ee = vec![R::one(); m];
        for j in 0..m {
            if ar[j] > R::zero() {
                ee[j] = (R::one() / ar[j].sqrt()).clamp(lo, hi);
            }
        }
        p.scale(&dd, &dd);
        a.scale(&ee, &dd);
        for i in 0..n {
            q[i] *= dd[i];
            d[i] *= dd[i];
        }
        for j in 0..m {
            l[j] *= ee[j];
            u[j] *= ee[j];
            e[j] *= ee[j];
        }
        // cost normalization
        let pc = p.col_inf_norms();
        let mean_p = if n > 0 {
            pc.iter().fold(R::zero(), |acc, &v| acc + v) / real(n as f64)
        } else {
            R::zero()
        };
        let gamma = mean_p.max(inf_norm(q));
        if gamma > R::zero() {
            let g = (R::one() / gamma).clamp(lo, hi);
            for v in p.data.iter_mut() {
                *v *= g;
            }
            for v in q.iter_mut() {
                *v *= g;
            }
            c *= g;
        }
    }
    Scaling { d, e, c }
}

/// Solve the QP, optionally warm-started from a previous solution.
pub fn solve_qp<R: Real>(
    qp: &QpSubproblem<R>,
    warm: Option<&QpSolution<R>>,
    settings: &QpSettings,
) -> Result<QpSolution<R>> {
    let n = qp.p.nrows;
    let m = qp.a.nrows;
    assert_eq!(qp.q.len(), n);
    assert_eq!(qp.l.len(), m);
    assert_eq!(qp.u.len(), m);
    for j in 0..m {
        if qp.l[j] > qp.u[j] {
            return Err(Error::Infeasible(format!("row {j}: l > u")));
        }
    }

    // scaled working copies
    let mut p = qp.p.clone();
    let mut q = qp.q.clone();
    let mut a = qp.a.clone();
    let mut l = qp.l.clone();
    let mut u = qp.u.clone();
    let scaling = ruiz(&mut p, &mut q, &mut a, &mut l, &mut u);

    let eq_tol = real::<R>(1e-12);
    let mut rho_base = real::<R>(0.1);
    let build_rho = |rho_base: R, l: &DVector<R>, u: &DVector<R>| -> Vec<R> {
        (0..m)
            .map(|j| {
                if (u[j] - l[j]).abs() <= eq_tol {
                    rho_base * real(RHO_EQ_SCALE)
                } else {
                    rho_base
                }
            })
            .collect()
    };
    let mut rho = build_rho(rho_base, &l, &u);
    let sigma = real::<R>(settings.sigma);
    let kkt = kkt_upper(&p, &a, sigma, &rho);
    let mut factor = LdlFactor::symbolic(&kkt);
    factor
        .factor(&kkt)
        .map_err(|k| Error::Infeasible(format!("kkt pivot failure at {k}")))?;

    // scaled warm start
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(m);
    if let Some(w) = warm {
        if w.x.len() == n && w.y.len() == m {
            for i in 0..n {
                x[i] = w.x[i] / scaling.d[i];
            }
            for j in 0..m {
                y[j] = w.y[j] * scaling.e[j] * scaling.c;
            }
        }
    }
    let mut z = DVector::zeros(m);
    a.mul_vec(&x, &mut z);
    for j in 0..m {
        z[j] = z[j].clamp(l[j], u[j]);
    }

    let alpha = real::<R>(settings.alpha);
    let eps = real::<R>(settings.eps);
    let mut rhs = DVector::zeros(n + m);
    let mut ax = DVector::zeros(m);
    let mut px = DVector::zeros(n);
    let mut aty = DVector::zeros(n);
    let mut x_prev = x.clone();
    let mut y_prev = y.clone();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        x_prev.copy_from(&x);
        y_prev.copy_from(&y);

        for i in 0..n {
            rhs[i] = sigma * x[i] - q[i];
        }
        for j in 0..m {
            rhs[n + j] = z[j] - y[j] / rho[j];
        }
        factor.solve(&mut rhs);
        // x~ = rhs[..n], nu = rhs[n..]; z~ = z + (nu - y) / rho
        for i in 0..n {
            x[i] = alpha * rhs[i] + (R::one() - alpha) * x[i];
        }
        for j in 0..m {
            let z_tilde = z[j] + (rhs[n + j] - y[j]) / rho[j];
            let z_relaxed = alpha * z_tilde + (R::one() - alpha) * z[j];
            let z_new = (z_relaxed + y[j] / rho[j]).clamp(l[j], u[j]);
            y[j] += rho[j] * (z_relaxed - z_new);
            z[j] = z_new;
        }

        if iterations % settings.check_interval != 0 && iterations != settings.max_iter {
            continue;
        }

        // unscaled residuals
        a.mul_vec(&x, &mut ax);
        let mut r_prim = R::zero();
        for j in 0..m {
            r_prim = r_prim.max(((ax[j] - z[j]) / scaling.e[j]).abs());
        }
        p.mul_vec(&x, &mut px);
        a.mul_transpose_vec(&y, &mut aty);
        let mut r_dual = R::zero();
        for i in 0..n {
            let v = (px[i] + q[i] + aty[i]) / (scaling.d[i] * scaling.c);
            r_dual = r_dual.max(v.abs());
        }
        if r_prim <= eps && r_dual <= eps {
            converged = true;
            break;
        }

        // infeasibility certificates on the iterate differences
        let dy = &y - &y_prev;
        let dy_norm = inf_norm(&dy);
        if dy_norm > real(1e-10) {
            a.mul_transpose_vec(&dy, &mut aty);
            let mut at_dy = R::zero();
            for i in 0..n {
                at_dy = at_dy.max((aty[i] / (scaling.d[i] * scaling.c)).abs());
            }
            let mut support = R::zero();
            let mut bounded = true;
            for j in 0..m {
                let dyu = dy[j] / scaling.e[j];
                if dyu > R::zero() {
                    if to_f64(u[j] / scaling.e[j]).is_infinite() {
                        bounded = false;
                        break;
                    }
                    support += u[j] / scaling.e[j] * dyu;
                } else if dyu < R::zero() {
                    if to_f64(l[j] / scaling.e[j]).is_infinite() {
                        bounded = false;
                        break;
                    }
                    support += l[j] / scaling.e[j] * dyu;
                }
            }
            if bounded
                && at_dy <= real::<R>(EPS_INFEAS) * dy_norm
                && support < -real::<R>(EPS_INFEAS) * dy_norm
            {
                return Err(Error::Infeasible("primal infeasibility certificate".into()));
            }
        }
        let dx = &x - &x_prev;
        let dx_norm = inf_norm(&dx);
        if dx_norm > real(1e-10) {
            p.mul_vec(&dx, &mut px);
            let p_dx = inf_norm(&px);
            let q_dx = q.dot(&dx);
            if p_dx <= real::<R>(EPS_INFEAS) * dx_norm && q_dx < -real::<R>(EPS_INFEAS) * dx_norm {
                a.mul_vec(&dx, &mut ax);
                let mut directional_ok = true;
                for j in 0..m {
                    let v = ax[j];
                    let tol = real::<R>(EPS_INFEAS) * dx_norm;
                    let u_inf = to_f64(u[j]).is_infinite();
                    let l_inf = to_f64(l[j]).is_infinite();
                    let ok = if u_inf && l_inf {
                        true
                    } else if u_inf {
                        v >= -tol
                    } else if l_inf {
                        v <= tol
                    } else {
                        v.abs() <= tol
                    };
                    if !ok {
                        directional_ok = false;
                        break;
                    }
                }
                if directional_ok {
                    return Err(Error::Infeasible("dual infeasibility certificate".into()));
                }
            }
        }

        // step-size rebalancing
        if iterations % 100 == 0 {
            let scale_num = r_prim.max(real(1e-12));
            let scale_den = r_dual.max(real(1e-12));
            let ratio = scale_num / scale_den;
            if ratio > real(10.0) || ratio < real(0.1) {
                rho_base = (rho_base * ratio.sqrt()).clamp(real(1e-6), real(1e6));
                rho = build_rho(rho_base, &l, &u);
                let kkt = kkt_upper(&p, &a, sigma, &rho);
                factor
                    .factor(&kkt)
                    .map_err(|k| Error::Infeasible(format!("kkt pivot failure at {k}")))?;
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterations(settings.max_iter));
    }

    // unscale
    let mut x_out = DVector::zeros(n);
    for i in 0..n {
        x_out[i] = x[i] * scaling.d[i];
    }
    let mut y_out = DVector::zeros(m);
    for j in 0..m {
        y_out[j] = y[j] * scaling.e[j] / scaling.c;
    }

    let polished = polish(qp, &mut x_out, &mut y_out).is_some();
    Ok(QpSolution {
        x: x_out,
        y: y_out,
        iterations,
        polished,
    })
}

/// Active-set refinement: equality rows and rows whose slack sits at a bound
/// are solved exactly through a regularized KKT system with iterative
/// refinement. Returns None (leaving the iterate untouched) when the active
/// system is singular or the refinement does not improve feasibility.
fn polish<R: Real>(qp: &QpSubproblem<R>, x: &mut DVector<R>, y: &mut DVector<R>) -> Option<()> {
    let n = qp.p.nrows;
    let m = qp.a.nrows;
    let act_tol = real::<R>(1e-4);
    let dual_tol = real::<R>(1e-10);
    let mut ax = DVector::zeros(m);
    qp.a.mul_vec(x, &mut ax);
    let mut active: Vec<(usize, R)> = Vec::new();
    for j in 0..m {
        let l_fin = to_f64(qp.l[j]).is_finite();
        let u_fin = to_f64(qp.u[j]).is_finite();
        let eq = l_fin && u_fin && (qp.u[j] - qp.l[j]).abs() <= real(1e-12);
        let lower = l_fin
            && (y[j] < -dual_tol || (ax[j] - qp.l[j]).abs() <= act_tol * (R::one() + qp.l[j].abs()));
        let upper = u_fin
            && (y[j] > dual_tol || (qp.u[j] - ax[j]).abs() <= act_tol * (R::one() + qp.u[j].abs()));
        if eq || lower {
            active.push((j, qp.l[j]));
        } else if upper {
            active.push((j, qp.u[j]));
        }
    }
    let ma = active.len();
    // reduced constraint matrix rows
    let mut triplets = Vec::new();
    for (row_out, &(j, _)) in active.iter().enumerate() {
        let (cols, vals) = qp.a.row(j);
        for (k, &c) in cols.iter().enumerate() {
            triplets.push((row_out, c, vals[k]));
        }
    }
    let a_act: Csr<R> = Csr::from_triplets(ma, n, &triplets);
    let delta = real::<R>(1e-9);
    let rho: Vec<R> = vec![R::one() / delta; ma];
    let kkt = kkt_upper(&qp.p, &a_act, delta, &rho);
    let mut factor = LdlFactor::symbolic(&kkt);
    factor.factor(&kkt).ok()?;

    let mut sol = DVector::zeros(n + ma);
    for i in 0..n {
        sol[i] = -qp.q[i];
    }
    for (row_out, &(_, b)) in active.iter().enumerate() {
        sol[n + row_out] = b;
    }
    let rhs_full = sol.clone();
    factor.solve(&mut sol);
    // two rounds of refinement against the unregularized system
    let mut pv = DVector::zeros(n);
    let mut av = DVector::zeros(ma);
    let mut atv = DVector::zeros(n);
    for _ in 0..2 {
        let xs = sol.rows(0, n).into_owned();
        let ys = sol.rows(n, ma).into_owned();
        qp.p.mul_vec(&xs, &mut pv);
        a_act.mul_vec(&xs, &mut av);
        a_act.mul_transpose_vec(&ys, &mut atv);
        let mut resid = DVector::zeros(n + ma);
        for i in 0..n {
            resid[i] = rhs_full[i] - (pv[i] + atv[i]);
        }
        for j in 0..ma {
            resid[n + j] = rhs_full[n + j] - av[j];
        }
        factor.solve(&mut resid);
        sol += resid;
    }

    let x_new = sol.rows(0, n).into_owned();
    // accept when the polished point does not violate inactive rows
    qp.a.mul_vec(&x_new, &mut ax);
    let viol_tol = real::<R>(1e-7);
    for j in 0..m {
        if ax[j] < qp.l[j] - viol_tol || ax[j] > qp.u[j] + viol_tol {
            return None;
        }
    }
    x.copy_from(&x_new);
    for (row_out, &(j, _)) in active.iter().enumerate() {
        y[j] = sol[n + row_out];
    }
    Some(())
}
