//! Hamiltonian flows by classical RK4, with the action-type integral
//! ∫ (H - p·q̇) dt accumulated along the trajectory, and Jacobians of the
//! time-τ map by central differences.
//!
//! Sign conventions: q̇ = ∂H/∂p, ṗ = -∂H/∂q, consistent with the bracket
//! {F,G} = Σ (F_p G_q - F_q G_p) in `geometry`.

use crate::geometry::Hamiltonian;

/// Endpoint of a flow segment together with the accumulated integral
/// `action` = ∫ (H - p·q̇) dt = ∫ H dt - ∫ p dq along the segment.
#[derive(Debug, Clone)]
pub struct FlowEnd {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub action: f64,
}

const FD_H: f64 = 1e-6;

fn derivs(h: &Hamiltonian, t: f64, q: &[f64], p: &[f64], out_dq: &mut [f64], out_dp: &mut [f64]) -> f64 {
    let gp = h.grad_p(t, q, p, FD_H);
    let gq = h.grad_q(t, q, p, FD_H);
    let mut p_dot_qdot = 0.0;
    for i in 0..q.len() {
        out_dq[i] = gp[i];
        out_dp[i] = -gq[i];
        p_dot_qdot += p[i] * gp[i];
    }
    h.eval(t, q, p) - p_dot_qdot
}

/// Integrate the flow of `h` from (q0, p0) at time t0 for `duration`
/// (possibly negative) in `n_steps` RK4 steps.
pub fn flow(h: &Hamiltonian, t0: f64, duration: f64, q0: &[f64], p0: &[f64], n_steps: usize) -> FlowEnd {
    let n = q0.len();
    let dt = duration / n_steps as f64;
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut action = 0.0;

    let mut k_q = vec![vec![0.0; n]; 4];
    let mut k_p = vec![vec![0.0; n]; 4];
    let mut k_a = [0.0; 4];
    let mut tq = vec![0.0; n];
    let mut tp = vec![0.0; n];

    for step in 0..n_steps {
        let t = t0 + step as f64 * dt;

        k_a[0] = derivs(h, t, &q, &p, &mut k_q[0], &mut k_p[0]);
        for i in 0..n {
            tq[i] = q[i] + 0.5 * dt * k_q[0][i];
            tp[i] = p[i] + 0.5 * dt * k_p[0][i];
        }
        k_a[1] = derivs(h, t + 0.5 * dt, &tq, &tp, &mut k_q[1], &mut k_p[1]);
        for i in 0..n {
            tq[i] = q[i] + 0.5 * dt * k_q[1][i];
            tp[i] = p[i] + 0.5 * dt * k_p[1][i];
        }
        k_a[2] = derivs(h, t + 0.5 * dt, &tq, &tp, &mut k_q[2], &mut k_p[2]);
        for i in 0..n {
            tq[i] = q[i] + dt * k_q[2][i];
            tp[i] = p[i] + dt * k_p[2][i];
        }
        k_a[3] = derivs(h, t + dt, &tq, &tp, &mut k_q[3], &mut k_p[3]);

        for i in 0..n {
            q[i] += dt / 6.0 * (k_q[0][i] + 2.0 * k_q[1][i] + 2.0 * k_q[2][i] + k_q[3][i]);
            p[i] += dt / 6.0 * (k_p[0][i] + 2.0 * k_p[1][i] + 2.0 * k_p[2][i] + k_p[3][i]);
        }
        action += dt / 6.0 * (k_a[0] + 2.0 * k_a[1] + 2.0 * k_a[2] + k_a[3]);
    }
    FlowEnd { q, p, action }
}

/// Full Jacobian of the time-τ map, as a (2n)x(2n) row-major matrix in
/// coordinates (q, p), by central differences of the flow itself.
pub fn monodromy(h: &Hamiltonian, t0: f64, duration: f64, q0: &[f64], p0: &[f64], n_steps: usize) -> Vec<f64> {
    let n = q0.len();
    let eps = 1e-5;
    let m = 2 * n;
    let mut jac = vec![0.0; m * m];
    for col in 0..m {
        let mut qa = q0.to_vec();
        let mut pa = p0.to_vec();
        let mut qb = q0.to_vec();
        let mut pb = p0.to_vec();
        if col < n {
            qa[col] += eps;
            qb[col] -= eps;
        } else {
            pa[col - n] += eps;
            pb[col - n] -= eps;
        }
        let fa = flow(h, t0, duration, &qa, &pa, n_steps);
        let fb = flow(h, t0, duration, &qb, &pb, n_steps);
        for row in 0..m {
            let (va, vb) = if row < n {
                (fa.q[row], fb.q[row])
            } else {
                (fa.p[row - n], fb.p[row - n])
            };
            jac[row * m + col] = (va - vb) / (2.0 * eps);
        }
    }
    jac
}

/// Max-row-sum norm of (J - I) for a square row-major matrix.
pub fn deviation_from_identity(jac: &[f64], m: usize) -> f64 {
    (0..m)
        .map(|r| {
            (0..m)
                .map(|c| {
                    let v = jac[r * m + c] - if r == c { 1.0 } else { 0.0 };
                    v.abs()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// The position block ∂Q/∂q0 of the monodromy, n x n row-major.
pub fn position_jacobian(h: &Hamiltonian, t0: f64, duration: f64, q0: &[f64], p0: &[f64], n_steps: usize) -> Vec<f64> {
    let n = q0.len();
    let eps = 1e-5;
    let mut jac = vec![0.0; n * n];
    for col in 0..n {
        let mut qa = q0.to_vec();
        let mut qb = q0.to_vec();
        qa[col] += eps;
        qb[col] -= eps;
        let fa = flow(h, t0, duration, &qa, p0, n_steps);
        let fb = flow(h, t0, duration, &qb, p0, n_steps);
        for row in 0..n {
            jac[row * n + col] = (fa.q[row] - fb.q[row]) / (2.0 * eps);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hamiltonian;

    #[test]
    fn kinetic_flow_is_straight_line() {
        let h = Hamiltonian::kinetic(2);
        let end = flow(&h, 0.0, 0.7, &[0.1, 0.2], &[1.0, -2.0], 50);
        assert!((end.q[0] - (0.1 + 0.7)).abs() < 1e-10);
        assert!((end.q[1] - (0.2 - 1.4)).abs() < 1e-10);
        assert!((end.p[0] - 1.0).abs() < 1e-12);
        // ∫ (H - p q̇) dt = (|p|²/2 - |p|²) τ = -|p|²τ/2
        let want = -0.5 * (1.0 + 4.0) * 0.7;
        assert!((end.action - want).abs() < 1e-9, "{}", end.action);
    }

    #[test]
    fn pendulum_conserves_energy() {
        let h = Hamiltonian::pendulum();
        let (q0, p0) = ([0.21], [1.3]);
        let e0 = h.eval(0.0, &q0, &p0);
        let end = flow(&h, 0.0, 1.0, &q0, &p0, 400);
        let e1 = h.eval(0.0, &end.q, &end.p);
        assert!((e1 - e0).abs() < 1e-8, "energy drift {}", (e1 - e0).abs());
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let h = Hamiltonian::pendulum();
        let fine = flow(&h, 0.0, 1.0, &[0.3], &[0.9], 3200);
        let a = flow(&h, 0.0, 1.0, &[0.3], &[0.9], 50);
        let b = flow(&h, 0.0, 1.0, &[0.3], &[0.9], 100);
        let ea = (a.q[0] - fine.q[0]).abs() + (a.p[0] - fine.p[0]).abs();
        let eb = (b.q[0] - fine.q[0]).abs() + (b.p[0] - fine.p[0]).abs();
        // halving dt should cut the error by about 2^4
        assert!(ea / eb > 8.0, "ratio {}", ea / eb);
    }

    #[test]
    fn action_is_additive_in_time() {
        let h = Hamiltonian::pendulum();
        let mid = flow(&h, 0.0, 0.4, &[0.1], &[0.8], 80);
        let rest = flow(&h, 0.4, 0.3, &mid.q, &mid.p, 60);
        let full = flow(&h, 0.0, 0.7, &[0.1], &[0.8], 140);
        assert!((mid.action + rest.action - full.action).abs() < 1e-10);
    }

    #[test]
    fn time_dependent_flow_uses_absolute_time() {
        // H = sin(2πt) p: q̇ = sin(2πt), Q = q0 + [cos(2πt0) - cos(2π(t0+τ))]/2π
        let h = Hamiltonian::from_fn(1, false, false, 2.0, "sin(2πt)p", |t, _q, p| {
            (std::f64::consts::TAU * t).sin() * p[0]
        });
        let end = flow(&h, 0.25, 0.5, &[0.0], &[1.0], 200);
        let tau = std::f64::consts::TAU;
        let want = ((tau * 0.25).cos() - (tau * 0.75).cos()) / tau;
        assert!((end.q[0] - want).abs() < 1e-9, "{} vs {want}", end.q[0]);
    }

    #[test]
    fn kinetic_monodromy_is_shear() {
        let h = Hamiltonian::kinetic(1);
        let j = monodromy(&h, 0.0, 0.3, &[0.2], &[0.5], 30);
        // [[1, τ], [0, 1]]
        assert!((j[0] - 1.0).abs() < 1e-6);
        assert!((j[1] - 0.3).abs() < 1e-6);
        assert!(j[2].abs() < 1e-6);
        assert!((j[3] - 1.0).abs() < 1e-6);
        assert!(deviation_from_identity(&j, 2) < 0.31);
    }

    #[test]
    fn position_block_matches_full_monodromy() {
        let h = Hamiltonian::pendulum();
        let j = monodromy(&h, 0.0, 0.1, &[0.37], &[0.4], 20);
        let pb = position_jacobian(&h, 0.0, 0.1, &[0.37], &[0.4], 20);
        assert!((j[0] - pb[0]).abs() < 1e-8);
    }
}
