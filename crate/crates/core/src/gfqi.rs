//! Generating functions quadratic at infinity on T^b x R^f.
//!
//! A `GeneratingFunction` is a scalar family S(x; ξ) over a torus base with a
//! boxed fiber, normalized so that S coincides *exactly* with its diagonal
//! reference form B(ξ) = Σ c_i ξ_i² outside the fiber box: the raw family is
//! blended into B across a transition shell by a C² cutoff. All topology read
//! off such an object (persistence, minimax invariants) is therefore the
//! topology of a genuinely quadratic-at-infinity function; whether the
//! blending introduced spurious fiber-critical points in the shell is a
//! checkable condition (`shell_check`), not an act of faith.
//!
//! Constructions:
//! * `one_step_gf` — the family for a short-time Hamiltonian flow map, built
//!   from the flow itself: S(x; v) = A(γ) + <v, x - q*> where γ runs from
//!   (q*, v) and ends at position x. Its full differential is
//!   (v - P)dx + (x - q*)dv, so critical points are the fixed points of the
//!   step and critical values their actions.
//! * `compose_gf` — splices two step families into one for the composed map,
//!   at the cost of 2n extra fiber variables carrying a split-signature pair.
//! * `action_gf` — the discrete action of contractible loops through a base
//!   point, the generating family of choice for fiberwise-convex dynamics.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flow::{deviation_from_identity, flow, monodromy, position_jacobian};
use crate::geometry::{CohomologyClass, Hamiltonian, Lagrangian};
use crate::grid::{Axis, GridData, GridError, GridSampling};
use crate::persistence::{
    build_filtration, compute_persistence, spectral_invariants, Filtration, MemoryBudget,
    PersistenceError, SpectralInvariants,
};

#[derive(Debug, Error)]
pub enum GfqiError {
    #[error("time step is not C¹-small: position-block deviation {deviation:.3} exceeds gate {gate}")]
    NotC1Small { deviation: f64, gate: f64 },
    #[error("time step moves points too far ({displacement:.3} of a period): branch choice is ambiguous")]
    StepTooLong { displacement: f64 },
    #[error("transition shell carries a spurious critical point (margin {margin:.3e})")]
    ShellCriticalPoint { margin: f64 },
    #[error("fiber axis {axis} is not a separable quadratic direction (coupling {coupling:.3e})")]
    NotSeparable { axis: usize, coupling: f64 },
    #[error("momentum slots incompatible: left has {left}, right has {right}")]
    MomentumMismatch { left: usize, right: usize },
    #[error("operation needs a fiberwise-convex family (index at infinity is {index})")]
    NotFiberConvex { index: usize },
    #[error("{0}")]
    Structure(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

type RawFamily = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct GeneratingFunction {
    pub base_dim: usize,
    pub fiber_dim: usize,
    /// Signed diagonal coefficients of the reference form B.
    pub quad_coeffs: Vec<f64>,
    /// Fiber half-widths; S ≡ B outside this box.
    pub outer_box: Vec<f64>,
    /// The raw family is kept untouched for sup-norm radius `inner_frac`
    /// (relative to the outer box) and blended into B beyond it.
    pub inner_frac: f64,
    /// Leading fiber axes that couple as momenta under composition
    /// (base_dim for step families, 0 otherwise).
    pub momentum_dim: usize,
    raw: RawFamily,
    pub label: String,
}

impl std::fmt::Debug for GeneratingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratingFunction")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("quad_coeffs", &self.quad_coeffs)
            .field("outer_box", &self.outer_box)
            .field("label", &self.label)
            .finish()
    }
}

/// C² transition: 1 on [0, lo], 0 on [1, ∞).
fn cutoff(rho: f64, lo: f64) -> f64 {
    if rho <= lo {
        1.0
    } else if rho >= 1.0 {
        0.0
    } else {
        let s = (rho - lo) / (1.0 - lo);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

impl GeneratingFunction {
    pub fn from_raw<F>(
        base_dim: usize,
        quad_coeffs: Vec<f64>,
        outer_box: Vec<f64>,
        momentum_dim: usize,
        label: &str,
        raw: F,
    ) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        assert_eq!(quad_coeffs.len(), outer_box.len());
        GeneratingFunction {
            base_dim,
            fiber_dim: quad_coeffs.len(),
            quad_coeffs,
            outer_box,
            inner_frac: 0.7,
            momentum_dim,
            raw: Arc::new(raw),
            label: label.into(),
        }
    }

    pub fn reference_form(&self, xi: &[f64]) -> f64 {
        self.quad_coeffs.iter().zip(xi).map(|(c, x)| c * x * x).sum()
    }

    /// Sup-norm fiber radius relative to the outer box.
    fn rho(&self, xi: &[f64]) -> f64 {
        xi.iter()
            .zip(&self.outer_box)
            .map(|(x, r)| (x / r).abs())
            .fold(0.0, f64::max)
    }

    /// The normalized family: raw inside, exactly B outside.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.base_dim);
        debug_assert_eq!(xi.len(), self.fiber_dim);
        if self.fiber_dim == 0 {
            return (self.raw)(x, xi);
        }
        let b = self.reference_form(xi);
        let chi = cutoff(self.rho(xi), self.inner_frac);
        if chi == 0.0 {
            b
        } else {
            b + chi * ((self.raw)(x, xi) - b)
        }
    }

    /// Fiber axes carrying negative reference coefficients.
    pub fn negative_fiber_axes(&self) -> Vec<usize> {
        self.quad_coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the reference form at infinity.
    pub fn index_at_infinity(&self) -> usize {
        self.negative_fiber_axes().len()
    }
}

/// Wrap a plain base function as a fiberless family.
pub fn gf_of_function<F>(base_dim: usize, label: &str, f: F) -> GeneratingFunction
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    GeneratingFunction::from_raw(base_dim, Vec::new(), Vec::new(), 0, label, move |x, _| f(x))
}

/// Wrap a sampled table (base axes periodic, fiber axes bounded) as a family.
pub fn gf_from_table(
    data: GridData,
    quad_coeffs: Vec<f64>,
    momentum_dim: usize,
    label: &str,
) -> Result<GeneratingFunction, GfqiError> {
    let base_dim = data.sampling.axes.iter().filter(|a| a.is_periodic()).count();
    let fiber_axes: Vec<usize> = (0..data.sampling.dim())
        .filter(|&i| !data.sampling.axes[i].is_periodic())
        .collect();
    if fiber_axes.len() != quad_coeffs.len() {
        return Err(GfqiError::Structure(format!(
            "{} bounded axes but {} reference coefficients",
            fiber_axes.len(),
            quad_coeffs.len()
        )));
    }
    for (k, &i) in fiber_axes.iter().enumerate() {
        if i != base_dim + k {
            return Err(GfqiError::Structure("fiber axes must follow the base axes".into()));
        }
    }
    let outer_box: Vec<f64> =
        fiber_axes.iter().map(|&i| data.sampling.axes[i].max.abs().max(data.sampling.axes[i].min.abs())).collect();
    let n_axes = data.sampling.dim();
    let data = Arc::new(data);
    Ok(GeneratingFunction::from_raw(
        base_dim,
        quad_coeffs,
        outer_box,
        momentum_dim,
        label,
        move |x, xi| {
            let mut buf = Vec::with_capacity(n_axes);
            buf.extend_from_slice(x);
            buf.extend_from_slice(xi);
            data.value_cubic(&buf).unwrap_or(f64::NAN)
        },
    ))
}

#[derive(Debug, Clone)]
pub struct OneStepParams {
    pub x_res: usize,
    pub v_radius: f64,
    pub v_res: usize,
    pub flow_steps: usize,
    /// Gate on ‖∂Q/∂q0 - I‖ sampled over the step: the Newton solve for the
    /// start point requires this block to be a perturbation of the identity.
    pub c1_gate: f64,
    pub gate_samples: usize,
}

impl Default for OneStepParams {
    fn default() -> Self {
        OneStepParams { x_res: 48, v_radius: 2.5, v_res: 49, flow_steps: 40, c1_gate: 0.3, gate_samples: 24 }
    }
}

#[derive(Debug, Clone)]
pub struct C1Report {
    /// max sampled ‖∂Q/∂q0 - I‖ (row-sum norm).
    pub position_block: f64,
    /// max sampled ‖Dφ - I‖ over the full (q,p) Jacobian.
    pub full: f64,
}

/// Sampled C¹ distance of the time-τ map from the identity.
pub fn c1_deviation(h: &Hamiltonian, t0: f64, tau: f64, radius: f64, samples: usize, flow_steps: usize) -> C1Report {
    let n = h.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1c1);
    let mut worst_pos = 0.0f64;
    let mut worst_full = 0.0f64;
    for _ in 0..samples {
        let q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let p: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * radius).collect();
        let full = monodromy(h, t0, tau, &q, &p, flow_steps);
        worst_full = worst_full.max(deviation_from_identity(&full, 2 * n));
        let mut pos_dev = 0.0f64;
        for r in 0..n {
            let mut row = 0.0;
            for c in 0..n {
                let v = full[r * 2 * n + c] - if r == c { 1.0 } else { 0.0 };
                row += v.abs();
            }
            pos_dev = pos_dev.max(row);
        }
        worst_pos = worst_pos.max(pos_dev);
    }
    C1Report { position_block: worst_pos, full: worst_full }
}

/// Generating family of the time-τ flow map of `h` starting at `t0`.
///
/// For each (x, v) a Newton solve finds the start point q* whose orbit with
/// initial momentum v reaches position x after time τ; the value is the
/// orbit's action plus <v, x - q*>. Tabulated once, then interpolated.
pub fn one_step_gf(
    h: &Hamiltonian,
    t0: f64,
    tau: f64,
    params: &OneStepParams,
) -> Result<GeneratingFunction, GfqiError> {
    let n = h.dim();
    let report = c1_deviation(h, t0, tau, params.v_radius, params.gate_samples, params.flow_steps);
    if report.position_block > params.c1_gate {
        return Err(GfqiError::NotC1Small { deviation: report.position_block, gate: params.c1_gate });
    }

    let mut axes = Vec::with_capacity(2 * n);
    for i in 0..n {
        axes.push(Axis::periodic(&format!("x{}", i + 1), 0.0, 1.0, params.x_res)?);
    }
    for i in 0..n {
        axes.push(Axis::bounded(&format!("v{}", i + 1), -params.v_radius, params.v_radius, params.v_res)?);
    }
    let sampling = GridSampling::new(axes);

    let mut values = vec![0.0f64; sampling.len()];
    let mut worst_disp = 0.0f64;
    for (flat, slot) in values.iter_mut().enumerate() {
        let idx = sampling.unravel(flat);
        let xv = sampling.coords(&idx);
        let (x, v) = xv.split_at(n);
        // initial guess: pull x back by the velocity of the fiber point
        let gp = h.grad_p(t0, x, v, 1e-6);
        let mut qstar: Vec<f64> = (0..n).map(|i| x[i] - tau * gp[i]).collect();
        let mut end = flow(h, t0, tau, &qstar, v, params.flow_steps);
        // branch: the lift of x nearest the orbit's endpoint
        let target: Vec<f64> = (0..n).map(|i| x[i] - (x[i] - end.q[i]).round()).collect();
        let mut jac = position_jacobian(h, t0, tau, &qstar, v, params.flow_steps);
        for _ in 0..12 {
            let resid: Vec<f64> = (0..n).map(|i| end.q[i] - target[i]).collect();
            let rn = resid.iter().map(|r| r.abs()).fold(0.0, f64::max);
            if rn < 1e-11 {
                break;
            }
            let step = solve_dense(&jac, &resid, n).unwrap_or_else(|| resid.clone());
            for i in 0..n {
                qstar[i] -= step[i];
            }
            end = flow(h, t0, tau, &qstar, v, params.flow_steps);
            let rn2 = (0..n).map(|i| (end.q[i] - target[i]).abs()).fold(0.0, f64::max);
            if rn2 > 0.5 * rn {
                jac = position_jacobian(h, t0, tau, &qstar, v, params.flow_steps);
            }
        }
        let disp = (0..n).map(|i| (end.q[i] - qstar[i]).abs()).fold(0.0, f64::max);
        worst_disp = worst_disp.max(disp);
        let corr: f64 = (0..n).map(|i| v[i] * (target[i] - qstar[i])).sum();
        *slot = end.action + corr;
    }
    if worst_disp > 0.45 {
        return Err(GfqiError::StepTooLong { displacement: worst_disp });
    }

    let data = GridData::from_values(sampling, values)?;
    // Reference coefficients from the largest sampled fiber curvature of H.
    // Taking the max (deterministic Weyl lattice) keeps the sign stable for
    // Hamiltonians whose fiber curvature averages out to zero; a floor keeps
    // the form nondegenerate either way.
    let mut coeffs = vec![f64::NEG_INFINITY; n];
    for s in 0..32u64 {
        let q: Vec<f64> = (0..n)
            .map(|i| (s as f64 * (2.0 + i as f64).sqrt()).fract())
            .collect();
        let p: Vec<f64> = (0..n)
            .map(|i| (2.0 * (s as f64 * (11.0 + i as f64).sqrt()).fract() - 1.0) * params.v_radius)
            .collect();
        let hess = h.fiber_hessian(t0, &q, &p, 1e-4);
        for i in 0..n {
            coeffs[i] = coeffs[i].max(hess[i * n + i]);
        }
    }
    for c in coeffs.iter_mut() {
        if c.abs() < 0.05 {
            *c = 0.05;
        }
        *c *= tau / 2.0;
    }
    let label = format!("step[{}; t0={t0}, τ={tau}]", h.label);
    let mut gf = gf_from_table(data, coeffs, n, &label)?;
    gf.momentum_dim = n;
    Ok(gf)
}

fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    // Gaussian elimination with partial pivoting (n is tiny)
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in row + 1..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    Some(x)
}

/// Family for the composition second ∘ first, assuming both steps share the
/// base torus. The fibers concatenate (the second family's momentum slot is
/// re-expressed relative to the first's) and a split pair (s, t) of new
/// variables carries the matching term <π, ζ> = (|s|² - |t|²)/2 in rotated
/// coordinates, adding n positive and n negative directions.
pub fn compose_gf(
    first: &GeneratingFunction,
    second: &GeneratingFunction,
    pair_radius: f64,
) -> Result<GeneratingFunction, GfqiError> {
    let n = first.base_dim;
    if second.base_dim != n {
        return Err(GfqiError::Structure("base dimensions differ".into()));
    }
    if first.momentum_dim != second.momentum_dim {
        return Err(GfqiError::MomentumMismatch { left: first.momentum_dim, right: second.momentum_dim });
    }
    let m = first.momentum_dim; // 0 or n
    if m != 0 && m != n {
        return Err(GfqiError::Structure("momentum slot must be empty or the full base".into()));
    }
    let f1 = first.fiber_dim;
    let f2 = second.fiber_dim;
    let g1 = first.clone();
    let g2 = second.clone();
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut quad = Vec::with_capacity(f1 + f2 - m + 2 * n);
    let mut outer = Vec::with_capacity(f1 + f2 - m + 2 * n);
    quad.extend_from_slice(&first.quad_coeffs);
    outer.extend_from_slice(&first.outer_box);
    quad.extend_from_slice(&second.quad_coeffs[m..]);
    outer.extend_from_slice(&second.outer_box[m..]);
    for _ in 0..n {
        quad.push(0.5);
        outer.push(pair_radius);
    }
    for _ in 0..n {
        quad.push(-0.5);
        outer.push(pair_radius);
    }

    let label = format!("({}) ∘ ({})", second.label, first.label);
    let raw = move |x: &[f64], xi: &[f64]| {
        let (xi1, rest) = xi.split_at(f1);
        let (xi2_tail, st) = rest.split_at(f2 - m);
        let (s, t) = st.split_at(n);
        let mut zeta = vec![0.0; n];
        let mut pi = vec![0.0; n];
        for i in 0..n {
            zeta[i] = (s[i] - t[i]) / sqrt2;
            pi[i] = (s[i] + t[i]) / sqrt2;
        }
        let x_shift: Vec<f64> = (0..n).map(|i| x[i] + zeta[i]).collect();
        let v1 = g1.eval(&x_shift, xi1);
        let mut xi2 = Vec::with_capacity(f2);
        if m > 0 {
            for i in 0..n {
                xi2.push(xi1[i] + pi[i]);
            }
        }
        xi2.extend_from_slice(xi2_tail);
        let v2 = g2.eval(x, &xi2);
        let cross: f64 = (0..n).map(|i| pi[i] * zeta[i]).sum();
        v1 + v2 + cross
    };
    let mut gf = GeneratingFunction::from_raw(n, quad, outer, m, &label, raw);
    gf.inner_frac = first.inner_frac.min(second.inner_frac);
    Ok(gf)
}

/// The family for the inverse-direction object: negated values, negated
/// reference form, index d ↦ f - d. Leaves the composition category.
pub fn negate_flip(g: &GeneratingFunction) -> GeneratingFunction {
    let inner = g.clone();
    let quad: Vec<f64> = g.quad_coeffs.iter().map(|c| -c).collect();
    let mut out = GeneratingFunction::from_raw(
        g.base_dim,
        quad,
        g.outer_box.clone(),
        0,
        &format!("-({})", g.label),
        move |x, xi| -inner.eval(x, xi),
    );
    // the negated family is already exactly -B outside the box; keep the raw
    // (which is the normalized negation) untouched all the way to the edge
    out.inner_frac = 0.999_999;
    out
}

/// Verify that no fiber-critical point hides in the transition shell:
/// sampled |∇_ξ(S - B)| must stay below |∇_ξ B|. Returns the worst relative
/// margin in (0, 1]; ≤ 0 would mean a potential spurious critical point.
pub fn shell_check(g: &GeneratingFunction, samples: usize, seed: u64) -> Result<f64, GfqiError> {
    if g.fiber_dim == 0 {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let fd = 1e-6;
    for _ in 0..samples {
        let x: Vec<f64> = (0..g.base_dim).map(|_| rng.gen::<f64>()).collect();
        // sample the sup-norm annulus between the inner box and the outer box
        let rho = g.inner_frac + rng.gen::<f64>() * (1.0 - g.inner_frac).max(1e-9);
        let mut xi: Vec<f64> = (0..g.fiber_dim)
            .map(|i| (rng.gen::<f64>() * 2.0 - 1.0) * g.outer_box[i])
            .collect();
        // push the largest coordinate onto the annulus radius
        let cur = g.rho(&xi).max(1e-12);
        for (i, v) in xi.iter_mut().enumerate() {
            *v *= rho / cur;
            *v = v.clamp(-g.outer_box[i], g.outer_box[i]);
        }
        let mut grad_b = 0.0f64;
        let mut grad_diff = 0.0f64;
        for i in 0..g.fiber_dim {
            let keep = xi[i];
            xi[i] = keep + fd;
            let hi = g.eval(&x, &xi) - g.reference_form(&xi);
            xi[i] = keep - fd;
            let lo = g.eval(&x, &xi) - g.reference_form(&xi);
            xi[i] = keep;
            let d = (hi - lo) / (2.0 * fd);
            grad_diff += d * d;
            let db = 2.0 * g.quad_coeffs[i] * keep;
            grad_b += db * db;
        }
        let margin = (grad_b.sqrt() - grad_diff.sqrt()) / grad_b.sqrt().max(1e-300);
        worst = worst.min(margin);
    }
    if worst <= 0.0 {
        return Err(GfqiError::ShellCriticalPoint { margin: worst });
    }
    Ok(worst)
}

/// Max |S - B| sampled outside the outer box; identically zero for the
/// cutoff construction, reported so callers can assert it.
pub fn quadraticity_defect(g: &GeneratingFunction, samples: usize, seed: u64) -> f64 {
    if g.fiber_dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..g.base_dim).map(|_| rng.gen::<f64>()).collect();
        let mut xi: Vec<f64> = (0..g.fiber_dim)
            .map(|i| (rng.gen::<f64>() * 2.0 - 1.0) * 2.0 * g.outer_box[i])
            .collect();
        // force at least one coordinate outside the box
        let j = rng.gen_range(0..g.fiber_dim);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        xi[j] = sign * g.outer_box[j] * (1.001 + rng.gen::<f64>());
        worst = worst.max((g.eval(&x, &xi) - g.reference_form(&xi)).abs());
    }
    worst
}

/// Drop fiber axes along which the raw family is verifiably an additive pure
/// quadratic (no base or cross coupling), returning the reduced family and
/// the stripped (axis, coefficient) list. Invariant values are unchanged;
/// class dimensions shift by one per negative axis removed, which the
/// persistence layer accounts for through the index bookkeeping.
pub fn strip_quadratic_fibers(
    g: &GeneratingFunction,
    samples: usize,
    tol: f64,
    seed: u64,
) -> (GeneratingFunction, Vec<(usize, f64)>) {
    let mut current = g.clone();
    let mut stripped = Vec::new();
    let mut offset_map: Vec<usize> = (0..g.fiber_dim).collect();
    loop {
        let mut removed = None;
        for axis in 0..current.fiber_dim {
            if let Some(coeff) = separable_coefficient(&current, axis, samples, tol, seed) {
                removed = Some((axis, coeff));
                break;
            }
        }
        let Some((axis, coeff)) = removed else { break };
        stripped.push((offset_map[axis], coeff));
        offset_map.remove(axis);
        current = drop_axis(&current, axis);
    }
    (current, stripped)
}

/// If S(x, ξ) - c ξ_axis² is independent of ξ_axis on random samples, return c.
fn separable_coefficient(
    g: &GeneratingFunction,
    axis: usize,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (axis as u64) << 32);
    // estimate c from one probe, then verify on the rest
    let probe_x: Vec<f64> = (0..g.base_dim).map(|_| rng.gen::<f64>()).collect();
    let mut probe_xi: Vec<f64> = (0..g.fiber_dim)
        .map(|i| (rng.gen::<f64>() * 2.0 - 1.0) * g.outer_box[i] * g.inner_frac * 0.9)
        .collect();
    let r = g.outer_box[axis] * g.inner_frac * 0.9;
    probe_xi[axis] = 0.0;
    let v0 = (g.raw)(&probe_x, &probe_xi);
    probe_xi[axis] = r;
    let c = ((g.raw)(&probe_x, &probe_xi) - v0) / (r * r);
    let scale = 1.0 + v0.abs();
    for _ in 0..samples {
        let x: Vec<f64> = (0..g.base_dim).map(|_| rng.gen::<f64>()).collect();
        let mut xi: Vec<f64> = (0..g.fiber_dim)
            .map(|i| (rng.gen::<f64>() * 2.0 - 1.0) * g.outer_box[i] * g.inner_frac * 0.9)
            .collect();
        let a = xi[axis];
        let with = (g.raw)(&x, &xi);
        xi[axis] = 0.0;
        let without = (g.raw)(&x, &xi);
        if (with - without - c * a * a).abs() > tol * scale {
            return None;
        }
    }
    Some(c)
}

fn drop_axis(g: &GeneratingFunction, axis: usize) -> GeneratingFunction {
    let inner = g.clone();
    let mut quad = g.quad_coeffs.clone();
    let mut outer = g.outer_box.clone();
    quad.remove(axis);
    outer.remove(axis);
    let momentum_dim = if axis < g.momentum_dim { g.momentum_dim.saturating_sub(1) } else { g.momentum_dim };
    let mut out = GeneratingFunction::from_raw(
        g.base_dim,
        quad,
        outer,
        momentum_dim,
        &format!("{}\\ξ{}", g.label, axis + 1),
        move |x, xi| {
            let mut full = Vec::with_capacity(inner.fiber_dim);
            full.extend_from_slice(&xi[..axis]);
            full.push(0.0);
            full.extend_from_slice(&xi[axis..]);
            (inner.raw)(x, &full)
        },
    );
    out.inner_frac = g.inner_frac;
    out
}

/// Freeze one fiber variable at a value.
pub fn restrict_fiber_slice(g: &GeneratingFunction, axis: usize, value: f64) -> GeneratingFunction {
    assert!(axis < g.fiber_dim);
    let inner = g.clone();
    let mut quad = g.quad_coeffs.clone();
    let mut outer = g.outer_box.clone();
    quad.remove(axis);
    outer.remove(axis);
    let momentum_dim = if axis < g.momentum_dim { g.momentum_dim.saturating_sub(1) } else { g.momentum_dim };
    let mut out = GeneratingFunction::from_raw(
        g.base_dim,
        quad,
        outer,
        momentum_dim,
        &format!("{}|ξ{}={}", g.label, axis + 1, value),
        move |x, xi| {
            let mut full = Vec::with_capacity(inner.fiber_dim);
            full.extend_from_slice(&xi[..axis]);
            full.push(value);
            full.extend_from_slice(&xi[axis..]);
            (inner.raw)(x, &full)
        },
    );
    out.inner_frac = g.inner_frac;
    out
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
}

/// Locate critical points of the normalized family by a coarse scan over the
/// base × inner fiber box followed by damped Newton on the gradient.
pub fn critical_locus(g: &GeneratingFunction, scan_res: usize, max_points: usize) -> Vec<CriticalPoint> {
    let n = g.base_dim + g.fiber_dim;
    let fd = 1e-5;
    let grad = |z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut zz = z.to_vec();
        for i in 0..n {
            let keep = zz[i];
            zz[i] = keep + fd;
            let hi = g.eval(&zz[..g.base_dim], &zz[g.base_dim..]);
            zz[i] = keep - fd;
            let lo = g.eval(&zz[..g.base_dim], &zz[g.base_dim..]);
            zz[i] = keep;
            out[i] = (hi - lo) / (2.0 * fd);
        }
        out
    };
    let gn2 = |z: &[f64]| grad(z).iter().map(|v| v * v).sum::<f64>();

    // coarse scan
    let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
    let total = scan_res.pow(n as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut z = vec![0.0; n];
        for (i, zi) in z.iter_mut().enumerate() {
            let t = (rem % scan_res) as f64 / scan_res as f64;
            rem /= scan_res;
            *zi = if i < g.base_dim {
                t
            } else {
                let r = g.outer_box[i - g.base_dim] * g.inner_frac;
                (2.0 * t - 1.0) * r + r / scan_res as f64
            };
        }
        seeds.push((gn2(&z), z));
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate((4 * max_points).max(8));

    let mut found: Vec<CriticalPoint> = Vec::new();
    for (_, mut z) in seeds {
        // damped Newton on ∇S = 0 with a finite-difference Hessian
        for _ in 0..40 {
            let gvec = grad(&z);
            let gn = gvec.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if gn < 1e-9 {
                break;
            }
            let mut hess = vec![0.0; n * n];
            let mut zz = z.to_vec();
            for i in 0..n {
                let keep = zz[i];
                zz[i] = keep + fd;
                let gp = grad(&zz);
                zz[i] = keep - fd;
                let gm = grad(&zz);
                zz[i] = keep;
                for j in 0..n {
                    hess[j * n + i] = (gp[j] - gm[j]) / (2.0 * fd);
                }
            }
            let step = match solve_dense(&hess, &gvec, n) {
                Some(s) => s,
                None => break,
            };
            let mut lambda = 1.0;
            let g0 = gn2(&z);
            let mut ok = false;
            for _ in 0..12 {
                let cand: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a - lambda * b).collect();
                if gn2(&cand) < g0 {
                    z = cand;
                    ok = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !ok {
                break;
            }
        }
        let gvec = grad(&z);
        let gn = gvec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn > 1e-6 {
            continue;
        }
        // discard shell/outside artifacts and duplicates
        let xi = &z[g.base_dim..];
        if g.fiber_dim > 0 && g.rho(xi) > g.inner_frac {
            continue;
        }
        let mut xred: Vec<f64> = z[..g.base_dim].iter().map(|v| v.rem_euclid(1.0)).collect();
        for v in xred.iter_mut() {
            if *v > 1.0 - 1e-9 {
                *v = 0.0;
            }
        }
        let dup = found.iter().any(|c| {
            let dx = c
                .x
                .iter()
                .zip(&xred)
                .map(|(a, b)| {
                    let d = (a - b).abs();
                    d.min(1.0 - d)
                })
                .fold(0.0, f64::max);
            let dxi = c.xi.iter().zip(xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            dx.max(dxi) < 1e-4
        });
        if dup {
            continue;
        }
        found.push(CriticalPoint {
            x: xred,
            xi: xi.to_vec(),
            value: g.eval(&z[..g.base_dim], xi),
            grad_norm: gn,
        });
        if found.len() >= max_points {
            break;
        }
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    found
}

/// One traced point of the Lagrangian cut out by a generating family:
/// position, momentum read off the base gradient, the fiber witness, the
/// value the family induces there, and the stationarity residual.
#[derive(Debug, Clone)]
pub struct CloudPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
    pub value: f64,
    pub residual: f64,
}

/// Trace the Lagrangian generated by the family: over a base grid, solve the
/// fiberwise stationarity condition ∂_ξ S = 0 from a lattice of fiber seeds
/// and attach the momentum p = ∂_q S and the induced value S(q, ξ) to every
/// converged witness.  Witnesses that land in the blending shell are
/// discarded; distinct witnesses over the same base point all contribute, so
/// multi-sheeted Lagrangians come out as multiple points per q.
pub fn lagrangian_cloud(
    g: &GeneratingFunction,
    base_res: usize,
    seed_res: usize,
    tol: f64,
) -> Vec<CloudPoint> {
    let n = g.base_dim;
    let f = g.fiber_dim;
    let fd = 1e-5;
    let fiber_grad = |q: &[f64], xi: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; f];
        let mut z = xi.to_vec();
        for i in 0..f {
            let keep = z[i];
            z[i] = keep + fd;
            let hi = g.eval(q, &z);
            z[i] = keep - fd;
            let lo = g.eval(q, &z);
            z[i] = keep;
            out[i] = (hi - lo) / (2.0 * fd);
        }
        out
    };
    let base_grad = |q: &[f64], xi: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut qq = q.to_vec();
        for i in 0..n {
            let keep = qq[i];
            qq[i] = keep + fd;
            let hi = g.eval(&qq, xi);
            qq[i] = keep - fd;
            let lo = g.eval(&qq, xi);
            qq[i] = keep;
            out[i] = (hi - lo) / (2.0 * fd);
        }
        out
    };

    let mut cloud = Vec::new();
    let base_total = base_res.pow(n as u32);
    for bflat in 0..base_total {
        let mut rem = bflat;
        let q: Vec<f64> = (0..n)
            .map(|_| {
                let t = (rem % base_res) as f64 / base_res as f64;
                rem /= base_res;
                t
            })
            .collect();
        if f == 0 {
            cloud.push(CloudPoint {
                p: base_grad(&q, &[]),
                value: g.eval(&q, &[]),
                q,
                xi: Vec::new(),
                residual: 0.0,
            });
            continue;
        }
        let mut witnesses: Vec<Vec<f64>> = Vec::new();
        let seed_total = seed_res.pow(f as u32);
        for sflat in 0..seed_total {
            let mut rem = sflat;
            let mut xi: Vec<f64> = (0..f)
                .map(|i| {
                    let t = (rem % seed_res) as f64 / (seed_res - 1).max(1) as f64;
                    rem /= seed_res;
                    (2.0 * t - 1.0) * g.outer_box[i] * g.inner_frac
                })
                .collect();
            // damped Newton on the fiber gradient only
            for _ in 0..30 {
                let gv = fiber_grad(&q, &xi);
                let gn = gv.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if gn < tol * 1e-2 {
                    break;
                }
                let mut hess = vec![0.0; f * f];
                let mut z = xi.clone();
                for i in 0..f {
                    let keep = z[i];
                    z[i] = keep + fd;
                    let gp = fiber_grad(&q, &z);
                    z[i] = keep - fd;
                    let gm = fiber_grad(&q, &z);
                    z[i] = keep;
                    for j in 0..f {
                        hess[j * f + i] = (gp[j] - gm[j]) / (2.0 * fd);
                    }
                }
                let step = match solve_dense(&hess, &gv, f) {
                    Some(s) => s,
                    None => break,
                };
                let g0: f64 = gv.iter().map(|v| v * v).sum();
                let mut lambda = 1.0;
                let mut ok = false;
                for _ in 0..10 {
                    let cand: Vec<f64> = xi.iter().zip(&step).map(|(a, b)| a - lambda * b).collect();
                    let gc: f64 = fiber_grad(&q, &cand).iter().map(|v| v * v).sum();
                    if gc < g0 {
                        xi = cand;
                        ok = true;
                        break;
                    }
                    lambda *= 0.5;
                }
                if !ok {
                    break;
                }
            }
            let res = fiber_grad(&q, &xi)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if res > tol || g.rho(&xi) > g.inner_frac {
                continue;
            }
            let dup = witnesses.iter().any(|w| {
                w.iter().zip(&xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-4
            });
            if !dup {
                witnesses.push(xi);
            }
        }
        for xi in witnesses {
            let res = fiber_grad(&q, &xi)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            cloud.push(CloudPoint {
                p: base_grad(&q, &xi),
                value: g.eval(&q, &xi),
                q: q.clone(),
                xi,
                residual: res,
            });
        }
    }
    cloud
}

/// Fiberwise minimum of a fiberwise-convex family, tabulated over the base.
/// This is the function the family induces on its index-0 sheet; for a step
/// family of a Tonelli flow it is the graph selector of the step.
pub fn induced_function_on_base(g: &GeneratingFunction, base_res: usize) -> Result<GridData, GfqiError> {
    let d = g.index_at_infinity();
    if d != 0 {
        return Err(GfqiError::NotFiberConvex { index: d });
    }
    let mut axes = Vec::new();
    for i in 0..g.base_dim {
        axes.push(Axis::periodic(&format!("x{}", i + 1), 0.0, 1.0, base_res)?);
    }
    let sampling = GridSampling::new(axes);
    let mut values = vec![0.0; sampling.len()];
    let scan = 9usize;
    for (flat, slot) in values.iter_mut().enumerate() {
        let idx = sampling.unravel(flat);
        let x = sampling.coords(&idx);
        if g.fiber_dim == 0 {
            *slot = g.eval(&x, &[]);
            continue;
        }
        // coarse scan then coordinate descent (the fiber is low-dimensional)
        let mut best = f64::INFINITY;
        let mut best_xi = vec![0.0; g.fiber_dim];
        let total = scan.pow(g.fiber_dim as u32);
        for s in 0..total {
            let mut rem = s;
            let mut xi = vec![0.0; g.fiber_dim];
            for (i, v) in xi.iter_mut().enumerate() {
                let t = (rem % scan) as f64 / (scan - 1) as f64;
                rem /= scan;
                *v = (2.0 * t - 1.0) * g.outer_box[i];
            }
            let val = g.eval(&x, &xi);
            if val < best {
                best = val;
                best_xi = xi;
            }
        }
        let mut width: Vec<f64> = g.outer_box.iter().map(|r| r / scan as f64).collect();
        for _ in 0..24 {
            let mut improved = false;
            for i in 0..g.fiber_dim {
                for dir in [-1.0, 1.0] {
                    let mut xi = best_xi.clone();
                    xi[i] = (xi[i] + dir * width[i]).clamp(-g.outer_box[i], g.outer_box[i]);
                    let val = g.eval(&x, &xi);
                    if val < best {
                        best = val;
                        best_xi = xi;
                        improved = true;
                    }
                }
            }
            if !improved {
                for w in width.iter_mut() {
                    *w *= 0.5;
                }
            }
        }
        *slot = best;
    }
    Ok(GridData::from_values(sampling, values)?)
}

/// Discrete-action family of contractible loops: S(q; ξ) is the midpoint-rule
/// action of the loop q -> q+ξ_1 -> … -> q+ξ_{M-1} -> q over [0, k]. Its
/// fiberwise minimum over all base points equals the least action of a
/// contractible discrete loop and its critical points are closed orbits of
/// the k-fold step dynamics in the contractible class.
pub fn action_gf(l: &Lagrangian, k: usize, segments_per_unit: usize, xi_radius: f64) -> GeneratingFunction {
    let n = l.dim();
    let m = (k * segments_per_unit).max(2);
    let fiber = (m - 1) * n;
    let h = k as f64 / m as f64;
    let ll = l.clone();
    let a0 = CohomologyClass::zero(n);
    let raw = move |q: &[f64], xi: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut mid = vec![0.0; n];
        let mut vel = vec![0.0; n];
        for j in 0..m {
            for i in 0..n {
                let prev = if j == 0 { q[i] } else { q[i] + xi[(j - 1) * n + i] };
                let next = if j + 1 == m { q[i] } else { q[i] + xi[j * n + i] };
                mid[i] = 0.5 * (prev + next);
                vel[i] = (next - prev) / h;
            }
            let t = (j as f64 + 0.5) * h;
            acc += h * ll.shifted_eval(&a0, t, &mid, &vel);
        }
        acc
    };
    // reference coefficient fitted to the family's own growth in the shell
    let mut gf = GeneratingFunction::from_raw(
        n,
        vec![1.0 / h; fiber],
        vec![xi_radius; fiber],
        0,
        &format!("loops[{}; k={k}, M={m}]", l.label),
        raw,
    );
    let c_fit = {
        let mut rng = ChaCha8Rng::seed_from_u64(0xac7);
        let mut num = 0.0;
        let mut den = 0.0;
        for _ in 0..64 {
            let q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let rho = gf.inner_frac + rng.gen::<f64>() * (1.0 - gf.inner_frac);
            let mut xi: Vec<f64> = (0..fiber).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * xi_radius).collect();
            let cur = gf.rho(&xi).max(1e-12);
            for v in xi.iter_mut() {
                *v *= rho / cur;
            }
            let origin = vec![0.0; fiber];
            let diff = (gf.raw)(&q, &xi) - (gf.raw)(&q, &origin);
            let norm2: f64 = xi.iter().map(|v| v * v).sum();
            num += diff;
            den += norm2;
        }
        (num / den).max(1e-3)
    };
    gf.quad_coeffs = vec![c_fit; fiber];
    gf
}

/// Sample the normalized family to a grid ready for the persistence layer.
pub fn sample_gf(g: &GeneratingFunction, base_res: usize, fiber_res: usize) -> Result<GridData, GfqiError> {
    let mut axes = Vec::with_capacity(g.base_dim + g.fiber_dim);
    for i in 0..g.base_dim {
        axes.push(Axis::periodic(&format!("x{}", i + 1), 0.0, 1.0, base_res)?);
    }
    for i in 0..g.fiber_dim {
        axes.push(Axis::bounded(
            &format!("xi{}", i + 1),
            -g.outer_box[i],
            g.outer_box[i],
            fiber_res,
        )?);
    }
    let sampling = GridSampling::new(axes);
    let base_dim = g.base_dim;
    let data = GridData::sample(sampling, |z| g.eval(&z[..base_dim], &z[base_dim..]));
    Ok(data)
}

/// Grid → filtration → reduction → invariant extraction, in one call.
pub fn gf_spectral_invariants(
    g: &GeneratingFunction,
    base_res: usize,
    fiber_res: usize,
    budget: &MemoryBudget,
) -> Result<SpectralInvariants, GfqiError> {
    let filt = gf_filtration(g, base_res, fiber_res, budget)?;
    let diagram = compute_persistence(&filt);
    Ok(spectral_invariants(&filt, &diagram)?)
}

pub fn gf_filtration(
    g: &GeneratingFunction,
    base_res: usize,
    fiber_res: usize,
    budget: &MemoryBudget,
) -> Result<Filtration, GfqiError> {
    let data = sample_gf(g, base_res, fiber_res)?;
    let neg: Vec<usize> = g.negative_fiber_axes().iter().map(|i| i + g.base_dim).collect();
    Ok(build_filtration(&data, &neg, budget)?)
}
