//! Discrete action minimization over curves on the torus with free endpoints.
//!
//! The action of a sampled curve γ: [0,k] -> R^n against a Lagrangian L and a
//! class a is the midpoint-rule sum of L(t, q, v) - <a, v>. Minimizing it over
//! all curves (both endpoints free) for a schedule of horizons k and sending
//! c_k := -min A to c_k / k gives upper estimates of the homogenized value:
//! restriction of a (k+m)-minimizer to [0,k] and [k,k+m] shows c is exactly
//! subadditive, so c_k / k decreases to the limit along doubling schedules and
//! min_k c_k / k is a rigorous upper bound (up to optimizer and quadrature
//! error).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CohomologyClass, DiscreteCurve, Lagrangian};

#[derive(Debug, Clone)]
pub struct ActionParams {
    /// Curve nodes per unit of time in the polished problem.
    pub steps_per_unit: usize,
    /// Node density for the cheap first pass over all starts.
    pub coarse_steps_per_unit: usize,
    /// Initial slopes are drawn from a ± lattice of this radius around the class.
    pub slope_radius: f64,
    pub slope_step: f64,
    /// Number of uniform base-point offsets per axis tried for each slope.
    pub base_offsets: usize,
    /// How many of the best coarse results are upsampled and polished.
    pub polish_starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for ActionParams {
    fn default() -> Self {
        ActionParams {
            steps_per_unit: 16,
            coarse_steps_per_unit: 4,
            slope_radius: 1.5,
            slope_step: 0.25,
            base_offsets: 2,
            polish_starts: 3,
            max_iters: 200,
            grad_tol: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub curve: DiscreteCurve,
    pub value: f64,
    /// Mean velocity of the minimizer's lift (displacement / k).
    pub rotation: Vec<f64>,
    pub starts_tried: usize,
    /// Sup-norm of the discrete action gradient at the returned curve.
    pub grad_norm: f64,
}

/// Midpoint-rule action Σ_j h · [L(t_mid, m_j, v_j) - <a, v_j>].
pub fn discrete_action(l: &Lagrangian, a: &CohomologyClass, curve: &DiscreteCurve) -> f64 {
    let (val, _) = action_and_gradient(l, a, &curve.points, curve.horizon_k, curve.dim, false);
    val
}

/// Action value and its gradient with respect to all node positions.
///
/// The gradient uses the chain rule through each segment's midpoint and
/// velocity, with central differences on L itself (the nodes never need a
/// full finite-difference sweep of the whole action).
pub fn action_and_gradient(
    l: &Lagrangian,
    a: &CohomologyClass,
    points: &[f64],
    horizon_k: usize,
    dim: usize,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let m = points.len() / dim - 1;
    let h = horizon_k as f64 / m as f64;
    let fd = 1e-6;
    let mut value = 0.0;
    let mut grad = if want_grad { vec![0.0; points.len()] } else { Vec::new() };
    let mut mid = vec![0.0; dim];
    let mut vel = vec![0.0; dim];
    for j in 0..m {
        let x0 = &points[j * dim..(j + 1) * dim];
        let x1 = &points[(j + 1) * dim..(j + 2) * dim];
        for i in 0..dim {
            mid[i] = 0.5 * (x0[i] + x1[i]);
            vel[i] = (x1[i] - x0[i]) / h;
        }
        let t = (j as f64 + 0.5) * h;
        let lv = l.eval(t, &mid, &vel);
        value += h * (lv - a.pairing(&vel));
        if want_grad {
            for i in 0..dim {
                let keep_m = mid[i];
                mid[i] = keep_m + fd;
                let lq_hi = l.eval(t, &mid, &vel);
                mid[i] = keep_m - fd;
                let lq_lo = l.eval(t, &mid, &vel);
                mid[i] = keep_m;
                let dq = (lq_hi - lq_lo) / (2.0 * fd);

                let keep_v = vel[i];
                vel[i] = keep_v + fd;
                let lv_hi = l.eval(t, &mid, &vel);
                vel[i] = keep_v - fd;
                let lv_lo = l.eval(t, &mid, &vel);
                vel[i] = keep_v;
                let dv = (lv_hi - lv_lo) / (2.0 * fd) - a.0[i];

                // d(mid)/dx0 = d(mid)/dx1 = 1/2; d(vel)/dx1 = -d(vel)/dx0 = 1/h
                grad[j * dim + i] += h * dq * 0.5 - dv;
                grad[(j + 1) * dim + i] += h * dq * 0.5 + dv;
            }
        }
    }
    (value, grad)
}

/// Multi-start L-BFGS minimization of the discrete action with free endpoints.
pub fn minimize_action(
    l: &Lagrangian,
    a: &CohomologyClass,
    k: usize,
    params: &ActionParams,
) -> MinimizeReport {
    let dim = l.dim();
    assert_eq!(a.dim(), dim);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));

    // slope lattice centered on the class (for |p|^2/2 the optimal mean
    // velocity equals a; potentials bend it but not by more than the lattice radius)
    let mut slopes_1d = Vec::new();
    let steps = (params.slope_radius / params.slope_step).round() as i64;
    for i in -steps..=steps {
        slopes_1d.push(i as f64 * params.slope_step);
    }
    let mut slopes: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in 0..dim {
        let mut next = Vec::new();
        for base in &slopes {
            for &s in &slopes_1d {
                let mut v = base.clone();
                v.push(a.0[axis] + s);
                next.push(v);
            }
        }
        slopes = next;
    }
    // always try the two distinguished mean velocities exactly: rest (the
    // minimizer throughout any trapped region) and the class itself
    slopes.push(vec![0.0; dim]);
    slopes.push(a.0.clone());

    let m_coarse = (params.coarse_steps_per_unit * k).max(2);
    let mut coarse_results: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut starts = 0usize;
    for slope in &slopes {
        for off in 0..params.base_offsets.max(1) {
            starts += 1;
            let base = off as f64 / params.base_offsets.max(1) as f64;
            let mut pts = vec![0.0; (m_coarse + 1) * dim];
            for j in 0..=m_coarse {
                let t = j as f64 * k as f64 / m_coarse as f64;
                for i in 0..dim {
                    let jitter = (rng.gen::<f64>() - 0.5) * 0.04;
                    pts[j * dim + i] = base + slope[i] * t + jitter;
                }
            }
            let (val, pts) = lbfgs_minimize(l, a, pts, k, dim, params.max_iters / 2, params.grad_tol * 10.0);
            coarse_results.push((val, pts));
        }
    }
    coarse_results.sort_by(|x, y| x.0.total_cmp(&y.0));
    coarse_results.truncate(params.polish_starts.max(1));

    let m_fine = (params.steps_per_unit * k).max(2);
    let mut best_val = f64::INFINITY;
    let mut best_pts = Vec::new();
    for (_, coarse_pts) in &coarse_results {
        let pts = resample_linear(coarse_pts, dim, m_fine);
        let (val, pts) = lbfgs_minimize(l, a, pts, k, dim, params.max_iters, params.grad_tol);
        if val < best_val {
            best_val = val;
            best_pts = pts;
        }
    }
    let (_, g) = action_and_gradient(l, a, &best_pts, k, dim, true);
    let grad_norm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let curve = DiscreteCurve::new(dim, k, best_pts);
    let disp = curve.displacement();
    let rotation = disp.iter().map(|d| d / k as f64).collect();
    MinimizeReport { curve, value: best_val, rotation, starts_tried: starts, grad_norm }
}

fn resample_linear(points: &[f64], dim: usize, m_new: usize) -> Vec<f64> {
    let m_old = points.len() / dim - 1;
    let mut out = vec![0.0; (m_new + 1) * dim];
    for j in 0..=m_new {
        let s = j as f64 * m_old as f64 / m_new as f64;
        let j0 = (s.floor() as usize).min(m_old - 1);
        let frac = s - j0 as f64;
        for i in 0..dim {
            out[j * dim + i] =
                points[j0 * dim + i] * (1.0 - frac) + points[(j0 + 1) * dim + i] * frac;
        }
    }
    out
}

/// Standard two-loop-recursion L-BFGS (memory 8) with Armijo backtracking.
fn lbfgs_minimize(
    l: &Lagrangian,
    a: &CohomologyClass,
    mut x: Vec<f64>,
    k: usize,
    dim: usize,
    max_iters: usize,
    grad_tol: f64,
) -> (f64, Vec<f64>) {
    const MEM: usize = 8;
    let n = x.len();
    let (mut fval, mut grad) = action_and_gradient(l, a, &x, k, dim, true);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    for _ in 0..max_iters {
        let gnorm = grad.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if gnorm < grad_tol * (1.0 + fval.abs()) {
            break;
        }
        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let alpha = rho_hist[i] * dotv(&s_hist[i], &dir);
            alphas[i] = alpha;
            for j in 0..n {
                dir[j] -= alpha * y_hist[i][j];
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let scale = dotv(s, y) / dotv(y, y).max(1e-300);
            for d in dir.iter_mut() {
                *d *= scale;
            }
        }
        for i in 0..s_hist.len() {
            let beta = rho_hist[i] * dotv(&y_hist[i], &dir);
            for j in 0..n {
                dir[j] += (alphas[i] - beta) * s_hist[i][j];
            }
        }
        let mut slope = dotv(&grad, &dir);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dotv(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let (cval, _) = action_and_gradient(l, a, &cand, k, dim, false);
            if cval <= fval + 1e-4 * step * slope {
                let (cval2, cgrad) = action_and_gradient(l, a, &cand, k, dim, true);
                let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = cgrad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dotv(&s, &y);
                if sy > 1e-10 * normv(&s) * normv(&y) {
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                    if s_hist.len() > MEM {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                }
                x = cand;
                fval = cval2;
                grad = cgrad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (fval, x)
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normv(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct LimitEstimate {
    pub value: f64,
    pub uncertainty: f64,
}

/// Extrapolate lim c_k/k from finitely many ratios by a least-squares line in
/// 1/k over the last three points, clamped to their range widened by the
/// half-spread, which doubles as the reported uncertainty.
pub fn extrapolate_limit(ratios: &[(usize, f64)]) -> LimitEstimate {
    assert!(!ratios.is_empty());
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    if tail.len() == 1 {
        return LimitEstimate { value: tail[0].1, uncertainty: f64::INFINITY };
    }
    let xs: Vec<f64> = tail.iter().map(|&(k, _)| 1.0 / k as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|&(_, v)| v).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let intercept = if denom.abs() < 1e-300 {
        sy / n
    } else {
        (sy * sxx - sx * sxy) / denom
    };
    let lo = ys.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let hi = ys.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let u = 0.5 * (hi - lo);
    LimitEstimate { value: intercept.clamp(lo - u, hi + u), uncertainty: u }
}

#[derive(Debug, Clone)]
pub struct AlphaEstimate {
    /// (k, c_k/k) with c_k = -min A over horizon k.
    pub ratios: Vec<(usize, f64)>,
    /// min_k c_k/k: an upper bound by exact subadditivity of c.
    pub fekete_upper: f64,
    pub limit: LimitEstimate,
    /// Rotation vector of the best minimizer at the largest k.
    pub rotation: Vec<f64>,
}

/// Estimate the homogenized value α(a) = lim_k c_k/k for one class.
pub fn alpha_at(l: &Lagrangian, a: &CohomologyClass, ks: &[usize], params: &ActionParams) -> AlphaEstimate {
    assert!(!ks.is_empty());
    let mut ratios = Vec::with_capacity(ks.len());
    let mut rotation = vec![0.0; l.dim()];
    for &k in ks {
        let rep = minimize_action(l, a, k, params);
        ratios.push((k, -rep.value / k as f64));
        rotation = rep.rotation;
    }
    let fekete_upper = ratios.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let limit = extrapolate_limit(&ratios);
    AlphaEstimate { ratios, fekete_upper, limit, rotation }
}

/// α(a) over a list of classes.
pub fn alpha_profile(
    l: &Lagrangian,
    classes: &[CohomologyClass],
    ks: &[usize],
    params: &ActionParams,
) -> Vec<AlphaEstimate> {
    classes.iter().map(|a| alpha_at(l, a, ks, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fenchel_dual_on_demand, Hamiltonian};

    fn kinetic_lag() -> Lagrangian {
        Lagrangian::from_fn(1, "v^2/2", |_t, _q, v| 0.5 * v[0] * v[0])
    }

    fn pendulum_lag() -> Lagrangian {
        Lagrangian::from_fn(1, "v^2/2 - cos(2πq)", |_t, q, v| {
            0.5 * v[0] * v[0] - (std::f64::consts::TAU * q[0]).cos()
        })
    }

    #[test]
    fn midpoint_action_exact_for_linear_curve() {
        let l = kinetic_lag();
        let a = CohomologyClass(vec![0.5]);
        // straight line slope 1.2 over [0,2], 8 segments
        let pts: Vec<f64> = (0..=8).map(|j| 1.2 * (j as f64) * 0.25).collect();
        let c = DiscreteCurve::new(1, 2, pts);
        let got = discrete_action(&l, &a, &c);
        let want = 2.0 * (0.5 * 1.2 * 1.2 - 0.5 * 1.2);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_dense_finite_differences() {
        let l = pendulum_lag();
        let a = CohomologyClass(vec![0.3]);
        let pts = vec![0.1, 0.35, 0.42, 0.31, 0.6, 0.9];
        let (_, grad) = action_and_gradient(&l, &a, &pts, 2, 1, true);
        let h = 1e-6;
        for i in 0..pts.len() {
            let mut hi = pts.clone();
            hi[i] += h;
            let mut lo = pts.clone();
            lo[i] -= h;
            let (vh, _) = action_and_gradient(&l, &a, &hi, 2, 1, false);
            let (vl, _) = action_and_gradient(&l, &a, &lo, 2, 1, false);
            let fd = (vh - vl) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "i={i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn kinetic_minimum_is_minus_a2_over_2_per_unit() {
        // with free endpoints each segment decouples: min = -k a²/2 exactly
        let l = kinetic_lag();
        let a = CohomologyClass(vec![1.3]);
        let rep = minimize_action(&l, &a, 2, &ActionParams { max_iters: 300, ..Default::default() });
        assert!((rep.value - (-2.0 * 0.5 * 1.3 * 1.3)).abs() < 1e-6, "{}", rep.value);
        assert!((rep.rotation[0] - 1.3).abs() < 1e-3, "{}", rep.rotation[0]);
    }

    #[test]
    fn pendulum_rest_curve_at_zero_class() {
        let l = pendulum_lag();
        let a = CohomologyClass(vec![0.0]);
        let rep = minimize_action(&l, &a, 2, &ActionParams::default());
        // L >= -1 pointwise with equality only on the rest curve at q=0
        assert!((rep.value + 2.0).abs() < 1e-7, "{}", rep.value);
        assert!(rep.rotation[0].abs() < 1e-3);
    }

    #[test]
    fn ratios_are_subadditive_consistent() {
        let h = Hamiltonian::pendulum();
        let l = fenchel_dual_on_demand(&h);
        let a = CohomologyClass(vec![0.8]);
        let p = ActionParams::default();
        let c2 = -minimize_action(&l, &a, 2, &p).value;
        let c4 = -minimize_action(&l, &a, 4, &p).value;
        assert!(c4 <= 2.0 * c2 + 1e-6, "c4={c4} c2={c2}");
    }

    #[test]
    fn extrapolation_recovers_exact_one_over_k_limits() {
        let ratios: Vec<(usize, f64)> = [4usize, 8, 16].iter().map(|&k| (k, 2.0 + 3.0 / k as f64)).collect();
        let est = extrapolate_limit(&ratios);
        assert!((est.value - 2.0).abs() < 1e-10, "{}", est.value);
        let spread = (2.0 + 3.0 / 4.0) - (2.0 + 3.0 / 16.0);
        assert!((est.uncertainty - spread / 2.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_clamps_to_data_range() {
        // wildly non-linear tail must not extrapolate outside the widened range
        let ratios = vec![(2usize, 5.0), (4usize, 1.0), (8usize, 4.0)];
        let est = extrapolate_limit(&ratios);
        assert!(est.value >= 1.0 - 2.0 - 1e-12 && est.value <= 5.0 + 2.0 + 1e-12);
    }

    #[test]
    fn alpha_at_kinetic_matches_closed_form() {
        let l = kinetic_lag();
        let a = CohomologyClass(vec![0.7]);
        let est = alpha_at(&l, &a, &[1, 2, 4], &ActionParams::default());
        assert!((est.fekete_upper - 0.5 * 0.49).abs() < 1e-6);
        assert!((est.limit.value - 0.5 * 0.49).abs() < 1e-5);
    }
}
