//! Hamiltonians and Lagrangians on T*T^n = T^n x R^n, and the small set of
//! geometric operations the rest of the crate is built from.
//!
//! Conventions, fixed once and used everywhere:
//! * the torus is R^n / Z^n; torus points are stored as lifts in R^n and
//!   reduction mod Z^n happens only inside evaluators;
//! * time-dependent Hamiltonians are 1-periodic in t, and evaluators reduce
//!   t mod 1 themselves;
//! * the symplectic form is dp ∧ dq, so {F,G} = Σ_i (F_{p_i} G_{q_i} - F_{q_i} G_{p_i});
//! * a cohomology class is represented by its constant 1-form, i.e. a vector
//!   a ∈ R^n, and the fiberwise shift sends H(t,q,p) to H(t,q,p+a).

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::grid::{GridData, GridError, GridSampling};

pub type ScalarField = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("fiber Hessian fails positive-definiteness near q={q:?}, p={p:?} (eigenvalue bound {lambda:.3e})")]
    NotConvex { q: Vec<f64>, p: Vec<f64>, lambda: f64 },
    #[error("Legendre sup attained on the p-sampling boundary at {at:?}; enlarge the p box")]
    GridTooSmall { at: Vec<f64> },
    #[error("function is not 1-periodic in q: deviation {dev:.3e} at q={q:?}")]
    NotPeriodic { q: Vec<f64>, dev: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Constant representative of a class in H^1(T^n; R) = R^n.
#[derive(Debug, Clone, PartialEq)]
pub struct CohomologyClass(pub Vec<f64>);

impl CohomologyClass {
    pub fn zero(dim: usize) -> Self {
        CohomologyClass(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn pairing(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// A (possibly time-dependent) Hamiltonian H(t, q, p).
#[derive(Clone)]
pub struct Hamiltonian {
    dim: usize,
    raw: ScalarField,
    pub autonomous: bool,
    /// Fiberwise strict convexity + superlinearity is claimed by the
    /// constructor and spot-checked, not proven.
    pub tonelli: bool,
    /// Radius of the momentum region the dynamics of interest lives in;
    /// sampling-based estimates (seminorms, C^1 gates, extrema) use it.
    pub fiber_radius: f64,
    pub label: String,
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("autonomous", &self.autonomous)
            .field("tonelli", &self.tonelli)
            .field("fiber_radius", &self.fiber_radius)
            .finish()
    }
}

impl Hamiltonian {
    pub fn from_fn<F>(dim: usize, autonomous: bool, tonelli: bool, fiber_radius: f64, label: &str, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Hamiltonian {
            dim,
            raw: Arc::new(f),
            autonomous,
            tonelli,
            fiber_radius,
            label: label.into(),
        }
    }

    /// Build from the expression language; q-periodicity is spot-checked.
    pub fn from_expr(source: &str, dim: usize, tonelli: bool, fiber_radius: f64) -> Result<Self, GeometryError> {
        let expr = Expr::parse(source, dim)?;
        let autonomous = !expr.uses_t();
        let label = source.to_string();
        let h = Hamiltonian::from_fn(dim, autonomous, tonelli, fiber_radius, &label, move |t, q, p| {
            expr.eval(t, q, p)
        });
        h.check_q_periodic(0x9e3779b9, 64, 1e-9)?;
        Ok(h)
    }

    /// Tabulated Hamiltonian: grid axes are ([t,] q1..qn, p1..pn) and the
    /// evaluator interpolates (cubically, so flows can differentiate it).
    pub fn from_grid(data: GridData, tonelli: bool) -> Result<Self, GeometryError> {
        let n_axes = data.sampling.dim();
        let has_t = data.sampling.axes[0].name == "t";
        let rest = n_axes - usize::from(has_t);
        if rest == 0 || rest % 2 != 0 {
            return Err(GeometryError::DimMismatch(format!(
                "grid needs axes ([t,] q1.., p1..), got {n_axes} axes"
            )));
        }
        let dim = rest / 2;
        let fiber_radius = data.sampling.axes[n_axes - 1].max.abs().max(data.sampling.axes[n_axes - 1].min.abs());
        let data = Arc::new(data);
        let label = format!("grid[{} axes]", n_axes);
        Ok(Hamiltonian::from_fn(dim, !has_t, tonelli, fiber_radius, &label, move |t, q, p| {
            let mut x = Vec::with_capacity(n_axes);
            if has_t {
                x.push(t);
            }
            x.extend_from_slice(q);
            x.extend_from_slice(p);
            data.value_cubic(&x).unwrap_or(f64::NAN)
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, q: &[f64], p: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        debug_assert_eq!(p.len(), self.dim);
        let t = if self.autonomous { 0.0 } else { t.rem_euclid(1.0) };
        (self.raw)(t, q, p)
    }

    /// dH/dp by central differences.
    pub fn grad_p(&self, t: f64, q: &[f64], p: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let mut pp = p.to_vec();
        for i in 0..self.dim {
            pp[i] = p[i] + h;
            let hi = self.eval(t, q, &pp);
            pp[i] = p[i] - h;
            let lo = self.eval(t, q, &pp);
            pp[i] = p[i];
            g[i] = (hi - lo) / (2.0 * h);
        }
        g
    }

    /// dH/dq by central differences.
    pub fn grad_q(&self, t: f64, q: &[f64], p: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let mut qq = q.to_vec();
        for i in 0..self.dim {
            qq[i] = q[i] + h;
            let hi = self.eval(t, &qq, p);
            qq[i] = q[i] - h;
            let lo = self.eval(t, &qq, p);
            qq[i] = q[i];
            g[i] = (hi - lo) / (2.0 * h);
        }
        g
    }

    /// Spot-check 1-periodicity in every q_i on pseudo-random samples.
    pub fn check_q_periodic(&self, seed: u64, samples: usize, tol: f64) -> Result<(), GeometryError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let t: f64 = rng.gen::<f64>();
            let q: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let p: Vec<f64> =
                (0..self.dim).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * self.fiber_radius).collect();
            let base = self.eval(t, &q, &p);
            for i in 0..self.dim {
                let mut qs = q.clone();
                qs[i] += 1.0;
                let shifted = self.eval(t, &qs, &p);
                let dev = (shifted - base).abs();
                if dev > tol * (1.0 + base.abs()) {
                    return Err(GeometryError::NotPeriodic { q: qs, dev });
                }
            }
        }
        Ok(())
    }

    /// Spot-check fiberwise positive-definiteness of d²H/dp² on random samples.
    pub fn check_fiber_convexity(&self, seed: u64, samples: usize) -> Result<(), GeometryError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let t: f64 = rng.gen::<f64>();
            let q: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>()).collect();
            let p: Vec<f64> =
                (0..self.dim).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * self.fiber_radius).collect();
            let hess = self.fiber_hessian(t, &q, &p, 1e-4);
            let lam = min_eigenvalue_bound(&hess, self.dim);
            if lam <= 0.0 {
                return Err(GeometryError::NotConvex { q, p, lambda: lam });
            }
        }
        Ok(())
    }

    pub fn fiber_hessian(&self, t: f64, q: &[f64], p: &[f64], h: f64) -> Vec<f64> {
        let n = self.dim;
        let mut hess = vec![0.0; n * n];
        let mut pp = p.to_vec();
        let f0 = self.eval(t, q, p);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    pp[i] = p[i] + h;
                    let a = self.eval(t, q, &pp);
                    pp[i] = p[i] - h;
                    let b = self.eval(t, q, &pp);
                    pp[i] = p[i];
                    (a - 2.0 * f0 + b) / (h * h)
                } else {
                    pp[i] = p[i] + h;
                    pp[j] = p[j] + h;
                    let a = self.eval(t, q, &pp);
                    pp[j] = p[j] - h;
                    let b = self.eval(t, q, &pp);
                    pp[i] = p[i] - h;
                    let c = self.eval(t, q, &pp);
                    pp[j] = p[j] + h;
                    let d = self.eval(t, q, &pp);
                    pp[i] = p[i];
                    pp[j] = p[j];
                    (a - b - d + c) / (4.0 * h * h)
                };
                hess[i * n + j] = v;
                hess[j * n + i] = v;
            }
        }
        hess
    }

    // ---- canonical examples -------------------------------------------------

    pub fn kinetic(dim: usize) -> Self {
        Hamiltonian::from_fn(dim, true, true, 4.0, "kinetic |p|^2/2", |_t, _q, p| {
            0.5 * p.iter().map(|x| x * x).sum::<f64>()
        })
    }

    /// H = |p|^2/2 + cos(2π q1): potential maximum 1 at q = 0.
    pub fn pendulum() -> Self {
        Hamiltonian::from_fn(1, true, true, 4.0, "pendulum p^2/2 + cos(2πq)", |_t, q, p| {
            0.5 * p[0] * p[0] + (2.0 * std::f64::consts::PI * q[0]).cos()
        })
    }

    /// H = p^4/4 + cos(2π q1): superlinear but with degenerate fiber Hessian at p = 0.
    pub fn quartic_well() -> Self {
        Hamiltonian::from_fn(1, true, true, 3.0, "quartic p^4/4 + cos(2πq)", |_t, q, p| {
            0.25 * p[0].powi(4) + (2.0 * std::f64::consts::PI * q[0]).cos()
        })
    }
}

/// A Lagrangian L(t, q, v); either analytic/closed-form or a Fenchel table.
#[derive(Clone)]
pub struct Lagrangian {
    dim: usize,
    raw: ScalarField,
    pub provenance: LagrangianProvenance,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LagrangianProvenance {
    Analytic,
    GridFenchel,
    OnDemandFenchel,
}

impl std::fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lagrangian")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl Lagrangian {
    pub fn from_fn<F>(dim: usize, label: &str, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Lagrangian { dim, raw: Arc::new(f), provenance: LagrangianProvenance::Analytic, label: label.into() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        (self.raw)(t.rem_euclid(1.0), q, v)
    }

    /// Integrand of the a-shifted action: L - <a, v>.
    pub fn shifted_eval(&self, a: &CohomologyClass, t: f64, q: &[f64], v: &[f64]) -> f64 {
        self.eval(t, q, v) - a.pairing(v)
    }
}

/// L(t,q,v) = sup_p (<p,v> - H(t,q,p)) tabulated on `table` (axes [t,] q.., v..),
/// with the sup taken over the `p_search` box (axes p..).
///
/// Multilinear interpolation between table nodes. Errors: `NotConvex` if a
/// sampled fiber Hessian of H is not positive-definite, `GridTooSmall` if the
/// sup is attained on the boundary of the p box.
pub fn legendre_transform(
    h: &Hamiltonian,
    table: GridSampling,
    p_search: &GridSampling,
) -> Result<Lagrangian, GeometryError> {
    let n = h.dim();
    if p_search.dim() != n {
        return Err(GeometryError::DimMismatch(format!(
            "p_search has {} axes, Hamiltonian dim is {n}",
            p_search.dim()
        )));
    }
    h.check_fiber_convexity(0x5eed, 48)?;
    let has_t = table.axes.first().map(|a| a.name == "t").unwrap_or(false);
    if table.dim() != 2 * n + usize::from(has_t) {
        return Err(GeometryError::DimMismatch(format!(
            "Legendre table needs ([t,] q x{n}, v x{n}) axes, got {}",
            table.dim()
        )));
    }

    let mut boundary_hit: Option<Vec<f64>> = None;
    let mut values = vec![0.0; table.len()];
    for (flat, slot) in values.iter_mut().enumerate() {
        let idx = table.unravel(flat);
        let x = table.coords(&idx);
        let (t, rest) = if has_t { (x[0], &x[1..]) } else { (0.0, &x[..]) };
        let q = &rest[..n];
        let v = &rest[n..];
        // dense scan over the p box
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = vec![0usize; n];
        for pf in 0..p_search.len() {
            let pidx = p_search.unravel(pf);
            let p = p_search.coords(&pidx);
            let g = dot(&p, v) - h.eval(t, q, &p);
            if g > best {
                best = g;
                best_idx = pidx;
            }
        }
        let on_boundary = best_idx
            .iter()
            .zip(&p_search.axes)
            .any(|(&i, ax)| i == 0 || i + 1 == ax.res);
        if on_boundary && boundary_hit.is_none() {
            boundary_hit = Some(x.clone());
        }
        // quadratic polish from the best node
        let p0 = p_search.coords(&best_idx);
        let polished = concave_max_newton(h, t, q, v, &p0, 6);
        *slot = polished.max(best);
    }
    if let Some(at) = boundary_hit {
        return Err(GeometryError::GridTooSmall { at });
    }
    let data = GridData::from_values(table, values)?;
    let data = Arc::new(data);
    let label = format!("fenchel[{}]", h.label);
    let mut lag = Lagrangian::from_fn(n, &label, move |t, q, v| {
        let mut x = Vec::with_capacity(2 * n + 1);
        if has_t {
            x.push(t);
        }
        x.extend_from_slice(q);
        x.extend_from_slice(v);
        data.value(&x).unwrap_or(f64::NAN)
    });
    lag.provenance = LagrangianProvenance::GridFenchel;
    Ok(lag)
}

/// Fenchel dual evaluated on demand: each L(t,q,v) call solves the concave
/// maximization sup_p (<p,v> - H) by damped Newton with an expanding search
/// box. Exact up to solver tolerance for smooth fiberwise-convex H; the
/// workhorse behind the variational pipeline, where table resolution would
/// otherwise dominate the error budget.
pub fn fenchel_dual_on_demand(h: &Hamiltonian) -> Lagrangian {
    let hh = h.clone();
    let n = h.dim();
    let label = format!("fenchel*[{}]", h.label);
    let mut lag = Lagrangian::from_fn(n, &label, move |t, q, v| {
        // start from p = v (exact for |p|^2/2) clamped to the initial box
        let r0 = hh.fiber_radius.max(1.0) + norm(v);
        let p0: Vec<f64> = v.iter().map(|&x| x.clamp(-r0, r0)).collect();
        let mut radius = r0;
        for _ in 0..4 {
            let p = concave_max_point(&hh, t, q, v, &p0, radius, 40);
            let interior = p.iter().all(|&x| x.abs() < radius * 0.98);
            if interior {
                return dot(&p, v) - hh.eval(t, q, &p);
            }
            radius *= 2.0;
        }
        let p = concave_max_point(&hh, t, q, v, &p0, radius, 60);
        dot(&p, v) - hh.eval(t, q, &p)
    });
    lag.provenance = LagrangianProvenance::OnDemandFenchel;
    lag
}

/// A few damped-Newton steps for g(p) = <p,v> - H, returning the value.
fn concave_max_newton(h: &Hamiltonian, t: f64, q: &[f64], v: &[f64], p0: &[f64], iters: usize) -> f64 {
    let p = concave_max_point(h, t, q, v, p0, f64::INFINITY, iters);
    dot(&p, v) - h.eval(t, q, &p)
}

fn concave_max_point(
    h: &Hamiltonian,
    t: f64,
    q: &[f64],
    v: &[f64],
    p0: &[f64],
    radius: f64,
    iters: usize,
) -> Vec<f64> {
    let n = p0.len();
    let fd = 1e-5;
    let mut p = p0.to_vec();
    let mut g_val = dot(&p, v) - h.eval(t, q, &p);
    for _ in 0..iters {
        let mut grad = h.grad_p(t, q, &p, fd);
        for i in 0..n {
            grad[i] = v[i] - grad[i];
        }
        let gnorm = grad.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gnorm < 1e-11 * (1.0 + norm(v)) {
            break;
        }
        let hess = h.fiber_hessian(t, q, &p, 1e-4);
        // Newton direction for maximizing: solve Hess * d = grad (Hess = d²H/dp²,
        // positive definite for Tonelli H); fall back to gradient ascent.
        let dir = solve_spd(&hess, &grad, n).unwrap_or_else(|| {
            let scale = 1.0 / (1.0 + hess.iter().map(|x| x.abs()).fold(0.0, f64::max));
            grad.iter().map(|&g| g * scale).collect()
        });
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let cand: Vec<f64> = p
                .iter()
                .zip(&dir)
                .map(|(&pi, &di)| (pi + step * di).clamp(-radius, radius))
                .collect();
            let val = dot(&cand, v) - h.eval(t, q, &cand);
            if val > g_val {
                p = cand;
                g_val = val;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    p
}

/// Shift along the fiber by the constant form a: (shift H)(t,q,p) = H(t,q,p+a).
pub fn shift_hamiltonian(h: &Hamiltonian, a: &CohomologyClass) -> Hamiltonian {
    assert_eq!(a.dim(), h.dim(), "class dimension mismatch");
    let inner = h.clone();
    let a = a.clone();
    Hamiltonian::from_fn(
        h.dim(),
        h.autonomous,
        h.tonelli,
        h.fiber_radius + norm(&a.0),
        &format!("{}+shift", h.label),
        move |t, q, p| {
            let shifted: Vec<f64> = p.iter().zip(&a.0).map(|(x, y)| x + y).collect();
            inner.eval(t, q, &shifted)
        },
    )
}

/// Pull back under the k-fold covering in time and base: H_k(t,q,p) = H(kt, kq, p).
pub fn covering_pullback(h: &Hamiltonian, k: usize) -> Hamiltonian {
    assert!(k >= 1);
    let inner = h.clone();
    let kf = k as f64;
    Hamiltonian::from_fn(
        h.dim(),
        h.autonomous,
        h.tonelli,
        h.fiber_radius,
        &format!("{}-cover[{k}]", h.label),
        move |t, q, p| {
            let qs: Vec<f64> = q.iter().map(|&x| kf * x).collect();
            inner.eval(kf * t, &qs, p)
        },
    )
}

/// H1 ⊕ H2 on T^(n1+n2): split coordinates, add values.
pub fn direct_sum(h1: &Hamiltonian, h2: &Hamiltonian) -> Hamiltonian {
    let n1 = h1.dim();
    let n2 = h2.dim();
    let a = h1.clone();
    let b = h2.clone();
    Hamiltonian::from_fn(
        n1 + n2,
        h1.autonomous && h2.autonomous,
        h1.tonelli && h2.tonelli,
        h1.fiber_radius.max(h2.fiber_radius),
        &format!("{} ⊕ {}", h1.label, h2.label),
        move |t, q, p| a.eval(t, &q[..n1], &p[..n1]) + b.eval(t, &q[n1..], &p[n1..]),
    )
}

/// {F,G} = Σ_i (F_{p_i} G_{q_i} - F_{q_i} G_{p_i}) by central differences;
/// `richardson` combines h and h/2 for one extra order.
pub fn poisson_bracket(
    f: &Hamiltonian,
    g: &Hamiltonian,
    t: f64,
    q: &[f64],
    p: &[f64],
    h_step: f64,
    richardson: bool,
) -> f64 {
    let one = |h: f64| {
        let fp = f.grad_p(t, q, p, h);
        let fq = f.grad_q(t, q, p, h);
        let gp = g.grad_p(t, q, p, h);
        let gq = g.grad_q(t, q, p, h);
        (0..f.dim()).map(|i| fp[i] * gq[i] - fq[i] * gp[i]).sum::<f64>()
    };
    if richardson {
        let coarse = one(h_step);
        let fine = one(h_step / 2.0);
        (4.0 * fine - coarse) / 3.0
    } else {
        one(h_step)
    }
}

/// (min, max) of F(t, q, a) over the graph of the constant form a.
pub fn graph_restriction_bounds(f: &Hamiltonian, a: &CohomologyClass, res: usize) -> (f64, f64) {
    let n = f.dim();
    let t_res = if f.autonomous { 1 } else { res };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut q = vec![0.0; n];
    let total = res.pow(n as u32);
    for it in 0..t_res {
        let t = it as f64 / t_res as f64;
        for flat in 0..total {
            let mut rem = flat;
            for qi in q.iter_mut() {
                *qi = (rem % res) as f64 / res as f64;
                rem /= res;
            }
            let v = f.eval(t, &q, &a.0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// The seminorm |dH|(c) = max over the sampled region of |<dH/dp, c>|,
/// integrated over t for time-dependent H (here: maximized over sampled t,
/// which agrees for the autonomous case and upper-bounds the integral mean).
pub fn class_seminorm(h: &Hamiltonian, c: &CohomologyClass, res: usize) -> f64 {
    let n = h.dim();
    let t_res = if h.autonomous { 1 } else { res };
    let mut worst = 0.0f64;
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let q_total = res.pow(n as u32);
    let p_total = res.pow(n as u32);
    for it in 0..t_res {
        let t = it as f64 / t_res as f64;
        for qf in 0..q_total {
            let mut rem = qf;
            for qi in q.iter_mut() {
                *qi = (rem % res) as f64 / res as f64;
                rem /= res;
            }
            for pf in 0..p_total {
                let mut rem = pf;
                for pi in p.iter_mut() {
                    *pi = (2.0 * ((rem % res) as f64 / (res - 1).max(1) as f64) - 1.0) * h.fiber_radius;
                    rem /= res;
                }
                let gp = h.grad_p(t, &q, &p, 1e-5);
                worst = worst.max(c.pairing(&gp).abs());
            }
        }
    }
    worst
}

/// A sampled curve [0,k] -> R^n with M+1 nodes at uniform step k/M.
#[derive(Debug, Clone)]
pub struct DiscreteCurve {
    pub dim: usize,
    pub horizon_k: usize,
    /// Flattened nodes: points[j*dim..(j+1)*dim] is the lift of γ(j·step).
    pub points: Vec<f64>,
}

impl DiscreteCurve {
    pub fn new(dim: usize, horizon_k: usize, points: Vec<f64>) -> Self {
        assert!(points.len() % dim == 0 && points.len() / dim >= 2);
        DiscreteCurve { dim, horizon_k, points }
    }

    pub fn segments(&self) -> usize {
        self.points.len() / self.dim - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon_k as f64 / self.segments() as f64
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    /// Total displacement of the lift; divided by k this is the rotation vector.
    pub fn displacement(&self) -> Vec<f64> {
        let m = self.segments();
        (0..self.dim).map(|i| self.points[m * self.dim + i] - self.points[i]).collect()
    }
}

// ---- small dense linear algebra helpers (n is 1 or 2 in practice) ----------

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cholesky solve for a small SPD system; None if not positive-definite.
pub(crate) fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Lower bound for the smallest eigenvalue of a small symmetric matrix
/// (exact for n<=2, Gershgorin for larger n).
fn min_eigenvalue_bound(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let tr = a[0] + a[3];
            let det = a[0] * a[3] - a[1] * a[2];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            tr / 2.0 - disc
        }
        _ => (0..n)
            .map(|i| {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
                a[i * n + i] - off
            })
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    const TAU: f64 = std::f64::consts::TAU;

    #[test]
    fn kinetic_legendre_table_matches_v2_over_2() {
        let h = Hamiltonian::kinetic(1);
        let table = GridSampling::new(vec![
            Axis::periodic("q", 0.0, 1.0, 4).unwrap(),
            Axis::bounded("v", -2.0, 2.0, 21).unwrap(),
        ]);
        let p_search = GridSampling::new(vec![Axis::bounded("p", -6.0, 6.0, 601).unwrap()]);
        let lag = legendre_transform(&h, table, &p_search).unwrap();
        // exact at table nodes (step 0.2), within step^2/8 · L'' mid-cell
        for &v in &[-2.0, -1.2, 0.0, 0.4, 2.0] {
            let got = lag.eval(0.0, &[0.3], &[v]);
            assert!((got - 0.5 * v * v).abs() < 1e-8, "node v={v}: {got}");
        }
        for &v in &[-1.3, 0.5, 1.7] {
            let got = lag.eval(0.0, &[0.3], &[v]);
            assert!((got - 0.5 * v * v).abs() <= 0.2f64.powi(2) / 8.0 + 1e-8, "v={v}: {got}");
        }
    }

    #[test]
    fn legendre_boundary_hit_is_an_error() {
        let h = Hamiltonian::kinetic(1);
        let table = GridSampling::new(vec![
            Axis::periodic("q", 0.0, 1.0, 2).unwrap(),
            Axis::bounded("v", -3.0, 3.0, 7).unwrap(),
        ]);
        // sup for v=3 sits at p=3, outside this tiny box
        let p_search = GridSampling::new(vec![Axis::bounded("p", -1.0, 1.0, 11).unwrap()]);
        assert!(matches!(
            legendre_transform(&h, table, &p_search),
            Err(GeometryError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn concave_check_rejects_concave_fiber() {
        let h = Hamiltonian::from_fn(1, true, true, 2.0, "-p^2", |_t, _q, p| -p[0] * p[0]);
        assert!(matches!(h.check_fiber_convexity(7, 16), Err(GeometryError::NotConvex { .. })));
    }

    #[test]
    fn on_demand_dual_quartic_closed_form() {
        // H = p^4/4 has L(v) = (3/4)|v|^(4/3)
        let h = Hamiltonian::from_fn(1, true, true, 3.0, "p^4/4", |_t, _q, p| 0.25 * p[0].powi(4));
        let lag = fenchel_dual_on_demand(&h);
        for &v in &[-2.0f64, -0.5, 0.0, 0.1, 1.0, 2.5] {
            let want = 0.75 * v.abs().powf(4.0 / 3.0);
            let got = lag.eval(0.0, &[0.0], &[v]);
            assert!((got - want).abs() < 1e-7, "v={v}: got {got}, want {want}");
        }
    }

    #[test]
    fn on_demand_dual_pendulum_exact() {
        let h = Hamiltonian::pendulum();
        let lag = fenchel_dual_on_demand(&h);
        for &(q, v) in &[(0.0, 0.0), (0.3, 1.0), (0.7, -2.2), (0.5, 0.8)] {
            let want = 0.5 * v * v - (TAU * q).cos();
            let got = lag.eval(0.0, &[q], &[v]);
            assert!((got - want).abs() < 1e-9, "q={q} v={v}: {got} vs {want}");
        }
    }

    #[test]
    fn shift_matches_lagrangian_shift() {
        // dual of the shifted Hamiltonian = L - a·v
        let h = Hamiltonian::pendulum();
        let a = CohomologyClass(vec![0.7]);
        let shifted = shift_hamiltonian(&h, &a);
        let lag = fenchel_dual_on_demand(&shifted);
        let plain = fenchel_dual_on_demand(&h);
        for &(q, v) in &[(0.2, 0.5), (0.8, -1.5), (0.0, 2.0)] {
            let got = lag.eval(0.0, &[q], &[v]);
            let want = plain.eval(0.0, &[q], &[v]) - 0.7 * v;
            assert!((got - want).abs() < 1e-8, "q={q} v={v}");
        }
    }

    #[test]
    fn covering_pullback_composes() {
        let h = Hamiltonian::from_expr("cos(2*pi*q1)*(1+0.5*sin(2*pi*t)) + 0.5*p1^2", 1, true, 3.0).unwrap();
        let h2 = covering_pullback(&h, 2);
        let h6 = covering_pullback(&h2, 3);
        let h6_direct = covering_pullback(&h, 6);
        for &(t, q, p) in &[(0.1, 0.3, 0.5), (0.7, 0.9, -1.0)] {
            let a = h6.eval(t, &[q], &[p]);
            let b = h6_direct.eval(t, &[q], &[p]);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bracket_example_and_antisymmetry() {
        let f = Hamiltonian::from_fn(1, true, false, 2.0, "p", |_t, _q, p| p[0]);
        let g = Hamiltonian::from_fn(1, true, false, 2.0, "sin(2πq)", |_t, q, _p| (TAU * q[0]).sin());
        for &q in &[0.0, 0.2, 0.45] {
            let got = poisson_bracket(&f, &g, 0.0, &[q], &[0.3], 1e-4, false);
            let want = TAU * (TAU * q).cos();
            assert!((got - want).abs() < 1e-6, "q={q}: {got} vs {want}");
            let anti = poisson_bracket(&g, &f, 0.0, &[q], &[0.3], 1e-4, false);
            assert!((got + anti).abs() < 1e-10);
        }
    }

    #[test]
    fn richardson_improves_bracket() {
        let f = Hamiltonian::from_fn(1, true, false, 2.0, "p^3", |_t, _q, p| p[0].powi(3));
        let g = Hamiltonian::from_fn(1, true, false, 2.0, "sin", |_t, q, _p| (TAU * q[0]).sin());
        let p = [0.9];
        let want = 3.0 * 0.9f64.powi(2) * TAU * (TAU * 0.3).cos();
        let plain = poisson_bracket(&f, &g, 0.0, &[0.3], &p, 1e-3, false);
        let rich = poisson_bracket(&f, &g, 0.0, &[0.3], &p, 1e-3, true);
        assert!((rich - want).abs() <= (plain - want).abs());
    }

    #[test]
    fn graph_bounds_examples() {
        let kin = Hamiltonian::kinetic(1);
        let (lo, hi) = graph_restriction_bounds(&kin, &CohomologyClass(vec![0.0]), 32);
        assert!(lo.abs() < 1e-12 && hi.abs() < 1e-12);
        let (lo, hi) = graph_restriction_bounds(&kin, &CohomologyClass(vec![1.0]), 32);
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 0.5).abs() < 1e-12);
        let pend = Hamiltonian::pendulum();
        let (lo, hi) = graph_restriction_bounds(&pend, &CohomologyClass(vec![0.0]), 64);
        assert!((lo + 1.0).abs() < 1e-3 && (hi - 1.0).abs() < 1e-3);
    }

    #[test]
    fn seminorm_kinetic_is_radius_times_class() {
        let h = Hamiltonian::kinetic(1);
        let s = class_seminorm(&h, &CohomologyClass(vec![0.5]), 9);
        assert!((s - 0.5 * h.fiber_radius).abs() < 1e-6, "{s}");
    }

    #[test]
    fn direct_sum_splits_coordinates() {
        let h = direct_sum(&Hamiltonian::kinetic(1), &Hamiltonian::pendulum());
        assert_eq!(h.dim(), 2);
        let v = h.eval(0.0, &[0.1, 0.0], &[2.0, 0.0]);
        assert!((v - (2.0 + 1.0)).abs() < 1e-12);
        assert!(h.tonelli);
    }

    #[test]
    fn periodicity_check_rejects_linear_term() {
        let h = Hamiltonian::from_fn(1, true, false, 1.0, "q", |_t, q, _p| q[0]);
        assert!(h.check_q_periodic(3, 16, 1e-9).is_err());
        assert!(Hamiltonian::from_expr("q1 + p1^2", 1, false, 1.0).is_err());
    }

    #[test]
    fn grid_hamiltonian_roundtrip() {
        let s = GridSampling::new(vec![
            Axis::periodic("q1", 0.0, 1.0, 48).unwrap(),
            Axis::bounded("p1", -3.0, 3.0, 49).unwrap(),
        ]);
        let g = GridData::sample(s, |x| 0.5 * x[1] * x[1] + (TAU * x[0]).cos());
        let h = Hamiltonian::from_grid(g, true).unwrap();
        assert!(h.autonomous);
        let got = h.eval(0.0, &[0.37], &[1.21]);
        let want = 0.5 * 1.21f64 * 1.21 + (TAU * 0.37).cos();
        assert!((got - want).abs() < 5e-4, "{got} vs {want}");
    }

    #[test]
    fn displacement_of_curve() {
        let c = DiscreteCurve::new(1, 2, vec![0.0, 0.5, 1.2]);
        assert_eq!(c.segments(), 2);
        assert!((c.step() - 1.0).abs() < 1e-15);
        assert!((c.displacement()[0] - 1.2).abs() < 1e-15);
    }
}
