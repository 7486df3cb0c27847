//! Sublevel-set persistent homology of functions on T^b x R^f via cubical
//! complexes, tailored to functions that agree with a diagonal quadratic form
//! outside a fiber box.
//!
//! The complex is the product of circles (periodic axes) and intervals
//! (bounded axes); a cell takes the maximum of the function over its vertices
//! (lower-star rule), so the filtered complex at level c carries the homotopy
//! type of the sublevel set {f <= c} sampled at grid resolution.
//!
//! For a form with d negative fiber directions, the relative object that the
//! minimax invariants live on is the pair (sublevel ∪ N, N), where N is the
//! union of the fiber-box faces in the negative directions. We realize it by
//! coning N off to a virtual vertex placed below every function value; the
//! essential classes of the coned filtration then sit in dimensions
//! {0} ∪ {d + j : 0 <= j <= b} with ranks {1} ∪ {binom(b, j)}, and the
//! invariants are the essential births in dimensions d and d + b.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::grid::GridData;

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("complex would need {cells} cells, budget is {budget}")]
    MemoryBudget { cells: usize, budget: usize },
    #[error("negative axis {axis} is not a bounded axis of the grid")]
    BadNegativeAxis { axis: usize },
    #[error("essential rank mismatch in dimension {dim}: got {got}, expected {expected} (function is not quadratic-like at infinity at this resolution)")]
    RankMismatch { dim: usize, got: usize, expected: usize },
    #[error("{0}")]
    BadStructure(String),
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryBudget {
    pub max_cells: usize,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget { max_cells: 20_000_000 }
    }
}

#[derive(Debug, Clone)]
struct AxisLayout {
    periodic: bool,
    res: usize,
    /// Number of cell positions along the axis: even = vertex, odd = interval.
    positions: usize,
}

/// A filtered cubical complex, cells indexed by u32 ids:
/// grid cells first, then the cone vertex, then one cone cell per N-cell.
pub struct Filtration {
    layouts: Vec<AxisLayout>,
    n_grid: usize,
    /// Sorted ids of grid cells contained in the negative boundary faces.
    cone_base: Vec<u32>,
    has_cone: bool,
    pub values: Vec<f64>,
    pub dims: Vec<u8>,
    /// Cell ids sorted by (value, dim, id).
    pub order: Vec<u32>,
    pub pos_of: Vec<u32>,
    /// Number of periodic (base) axes.
    pub base_dim: usize,
    /// Number of negative fiber directions of the reference form.
    pub neg_count: usize,
}

impl Filtration {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_dim(&self, id: u32) -> usize {
        self.dims[id as usize] as usize
    }

    pub fn cell_value(&self, id: u32) -> f64 {
        self.values[id as usize]
    }

    pub fn max_dim(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).max().unwrap_or(0)
    }

    pub fn critical_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn unravel(&self, mut cid: usize) -> Vec<usize> {
        let mut pos = vec![0usize; self.layouts.len()];
        for i in (0..self.layouts.len()).rev() {
            pos[i] = cid % self.layouts[i].positions;
            cid /= self.layouts[i].positions;
        }
        pos
    }

    fn ravel(&self, pos: &[usize]) -> usize {
        let mut cid = 0usize;
        for (i, layout) in self.layouts.iter().enumerate() {
            cid = cid * layout.positions + pos[i];
        }
        cid
    }

    /// Boundary of a cell over Z/2, as a list of cell ids.
    pub fn boundary(&self, id: u32) -> Vec<u32> {
        let n_grid = self.n_grid as u32;
        if id < n_grid {
            let pos = self.unravel(id as usize);
            let mut faces = Vec::new();
            let mut face = pos.clone();
            for (i, layout) in self.layouts.iter().enumerate() {
                if pos[i] % 2 == 1 {
                    face[i] = pos[i] - 1;
                    faces.push(self.ravel(&face) as u32);
                    face[i] = if pos[i] + 1 == layout.positions && layout.periodic {
                        0
                    } else {
                        pos[i] + 1
                    };
                    faces.push(self.ravel(&face) as u32);
                    face[i] = pos[i];
                }
            }
            // a periodic axis with res 1 can produce a doubled (hence zero) face
            faces.sort_unstable();
            let mut out = Vec::with_capacity(faces.len());
            let mut i = 0;
            while i < faces.len() {
                if i + 1 < faces.len() && faces[i] == faces[i + 1] {
                    i += 2;
                } else {
                    out.push(faces[i]);
                    i += 1;
                }
            }
            out
        } else if id == n_grid && self.has_cone {
            Vec::new() // the cone vertex
        } else {
            // cone cell over the N-cell sigma: boundary = sigma + cone(∂sigma),
            // with cone(vertex) edges closing up on the cone vertex itself
            let sigma = self.cone_base[(id - n_grid - 1) as usize];
            let mut out = vec![sigma];
            if self.dims[sigma as usize] == 0 {
                out.push(n_grid);
            } else {
                for tau in self.boundary(sigma) {
                    let j = self
                        .cone_base
                        .binary_search(&tau)
                        .expect("face of an N-cell must lie in N");
                    out.push(n_grid + 1 + j as u32);
                }
            }
            out.sort_unstable();
            out
        }
    }
}

/// Build the filtered complex for `data` (periodic axes = base torus, bounded
/// axes = fiber box), coning off the boundary faces of the `neg_axes`
/// directions below the global minimum.
pub fn build_filtration(
    data: &GridData,
    neg_axes: &[usize],
    budget: &MemoryBudget,
) -> Result<Filtration, PersistenceError> {
    let axes = &data.sampling.axes;
    let layouts: Vec<AxisLayout> = axes
        .iter()
        .map(|a| {
            let periodic = a.is_periodic();
            AxisLayout {
                periodic,
                res: a.res,
                positions: if periodic { 2 * a.res } else { 2 * a.res - 1 },
            }
        })
        .collect();
    for &ax in neg_axes {
        if ax >= axes.len() || axes[ax].is_periodic() {
            return Err(PersistenceError::BadNegativeAxis { axis: ax });
        }
    }
    let n_grid: usize = layouts.iter().try_fold(1usize, |acc, l| acc.checked_mul(l.positions)).ok_or(
        PersistenceError::MemoryBudget { cells: usize::MAX, budget: budget.max_cells },
    )?;
    if n_grid > budget.max_cells {
        return Err(PersistenceError::MemoryBudget { cells: n_grid, budget: budget.max_cells });
    }

    let base_dim = layouts.iter().filter(|l| l.periodic).count();
    let neg_count = neg_axes.len();
    let n_axes = layouts.len();

    // values and dims of grid cells (lower-star: max over vertices)
    let mut values = vec![0.0f64; n_grid];
    let mut dims = vec![0u8; n_grid];
    let mut pos = vec![0usize; n_axes];
    let mut node = vec![0usize; n_axes];
    let mut odd_axes: Vec<usize> = Vec::with_capacity(n_axes);
    let mut global_min = f64::INFINITY;
    for cid in 0..n_grid {
        {
            let mut c = cid;
            for i in (0..n_axes).rev() {
                pos[i] = c % layouts[i].positions;
                c /= layouts[i].positions;
            }
        }
        odd_axes.clear();
        for (i, &p) in pos.iter().enumerate() {
            if p % 2 == 1 {
                odd_axes.push(i);
            } else {
                node[i] = p / 2;
            }
        }
        let dim = odd_axes.len();
        dims[cid] = dim as u8;
        let mut vmax = f64::NEG_INFINITY;
        for corner in 0..(1usize << dim) {
            for (bit, &ax) in odd_axes.iter().enumerate() {
                let lo = (pos[ax] - 1) / 2;
                node[ax] = if corner >> bit & 1 == 0 {
                    lo
                } else if lo + 1 == layouts[ax].res && layouts[ax].periodic {
                    0
                } else {
                    lo + 1
                };
            }
            let flat = data.sampling.ravel(&node);
            vmax = vmax.max(data.values[flat]);
        }
        values[cid] = vmax;
        if dim == 0 {
            global_min = global_min.min(vmax);
        }
    }

    // N = cells contained in a boundary face of a negative axis
    let mut cone_base: Vec<u32> = Vec::new();
    let has_cone = neg_count > 0;
    if has_cone {
        for cid in 0..n_grid {
            let mut c = cid;
            let mut in_n = false;
            for i in (0..n_axes).rev() {
                let p = c % layouts[i].positions;
                c /= layouts[i].positions;
                if neg_axes.contains(&i) && (p == 0 || p == layouts[i].positions - 1) {
                    in_n = true;
                    break;
                }
            }
            if in_n {
                cone_base.push(cid as u32);
            }
        }
    }
    let n_total = n_grid + if has_cone { 1 + cone_base.len() } else { 0 };
    if n_total > budget.max_cells || n_total > u32::MAX as usize - 2 {
        return Err(PersistenceError::MemoryBudget { cells: n_total, budget: budget.max_cells });
    }

    let base_value = global_min - 1.0;
    values.reserve(n_total - n_grid);
    dims.reserve(n_total - n_grid);
    if has_cone {
        values.push(base_value); // the cone vertex
        dims.push(0);
        for &sigma in &cone_base {
            values.push(base_value);
            dims.push(dims[sigma as usize] + 1);
        }
        // N-cells themselves also sit below everything real
        for &sigma in &cone_base {
            values[sigma as usize] = base_value;
        }
    }

    let mut order: Vec<u32> = (0..n_total as u32).collect();
    order.sort_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(dims[a as usize].cmp(&dims[b as usize]))
            .then(a.cmp(&b))
    });
    let mut pos_of = vec![0u32; n_total];
    for (i, &c) in order.iter().enumerate() {
        pos_of[c as usize] = i as u32;
    }

    Ok(Filtration {
        layouts,
        n_grid,
        cone_base,
        has_cone,
        values,
        dims,
        order,
        pos_of,
        base_dim,
        neg_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialClass {
    pub dim: usize,
    pub birth: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagram {
    /// Finite bars with death > birth (zero-length pairs are dropped).
    pub pairs: Vec<Bar>,
    pub essential: Vec<EssentialClass>,
}

impl Diagram {
    /// Persistent Betti number: rank of H_dim(sublevel a) -> H_dim(sublevel b).
    pub fn betti(&self, dim: usize, a: f64, b: f64) -> usize {
        let finite = self
            .pairs
            .iter()
            .filter(|bar| bar.dim == dim && bar.birth <= a && bar.death > b)
            .count();
        let inf = self.essential.iter().filter(|e| e.dim == dim && e.birth <= a).count();
        finite + inf
    }
}

/// Standard Z/2 column reduction, processed dimension by dimension from the
/// top with the clearing optimization (a cell that shows up as a pivot is a
/// creator one dimension down, so its own column never needs reducing).
pub fn compute_persistence(f: &Filtration) -> Diagram {
    let n = f.len();
    let max_dim = f.max_dim();
    let mut cleared = vec![false; n];
    let mut diagram = Diagram::default();

    const NONE: u32 = u32::MAX;
    for d in (0..=max_dim).rev() {
        let mut pivot_owner: Vec<u32> = vec![NONE; n];
        let mut columns: Vec<Vec<u32>> = Vec::new();
        for &cell in &f.order {
            if f.dims[cell as usize] as usize != d || cleared[cell as usize] {
                continue;
            }
            let mut col: Vec<u32> = f.boundary(cell).iter().map(|&c| f.pos_of[c as usize]).collect();
            col.sort_unstable();
            loop {
                match col.last() {
                    None => {
                        diagram
                            .essential
                            .push(EssentialClass { dim: d, birth: f.values[cell as usize] });
                        break;
                    }
                    Some(&piv) => {
                        let owner = pivot_owner[piv as usize];
                        if owner == NONE {
                            let birth_cell = f.order[piv as usize];
                            let birth = f.values[birth_cell as usize];
                            let death = f.values[cell as usize];
                            if death > birth {
                                diagram.pairs.push(Bar { dim: d - 1, birth, death });
                            }
                            cleared[birth_cell as usize] = true;
                            pivot_owner[piv as usize] = columns.len() as u32;
                            columns.push(col);
                            break;
                        }
                        col = xor_sorted(&col, &columns[owner as usize]);
                    }
                }
            }
        }
    }
    diagram.pairs.sort_by(|a, b| {
        a.dim.cmp(&b.dim).then(a.birth.total_cmp(&b.birth)).then(a.death.total_cmp(&b.death))
    });
    diagram.essential.sort_by(|a, b| a.dim.cmp(&b.dim).then(a.birth.total_cmp(&b.birth)));
    diagram
}

fn xor_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

#[derive(Debug, Clone)]
pub struct SpectralInvariants {
    /// Essential birth in dimension d: the minimax value of the point class.
    pub ell_minus: f64,
    /// Essential birth in dimension d + b: the minimax value of the
    /// fundamental class of the base torus.
    pub ell_plus: f64,
    pub essential_births: BTreeMap<usize, Vec<f64>>,
}

/// Extract the two invariants from a diagram, verifying the essential ranks
/// {0} ∪ {d+j : binom(b,j)} first. The ranks are determined by the box/cone
/// combinatorics alone, so this is a guard against defects in the complex
/// construction and the reduction, not against a wrongly-claimed form (that
/// is what the transition-shell validity check on generating functions does).
pub fn spectral_invariants(f: &Filtration, diagram: &Diagram) -> Result<SpectralInvariants, PersistenceError> {
    let b = f.base_dim;
    let d = f.neg_count;
    let mut expected: BTreeMap<usize, usize> = BTreeMap::new();
    for j in 0..=b {
        *expected.entry(d + j).or_insert(0) += binom(b, j);
    }
    if d > 0 {
        *expected.entry(0).or_insert(0) += 1;
    }
    let mut got: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in &diagram.essential {
        got.entry(e.dim).or_default().push(e.birth);
    }
    let dims: std::collections::BTreeSet<usize> =
        expected.keys().copied().chain(got.keys().copied()).collect();
    for dim in dims {
        let want = expected.get(&dim).copied().unwrap_or(0);
        let have = got.get(&dim).map(|v| v.len()).unwrap_or(0);
        if want != have {
            return Err(PersistenceError::RankMismatch { dim, got: have, expected: want });
        }
    }
    let pick = |dim: usize, which: fn(&[f64]) -> f64| -> f64 {
        let v = &got[&dim];
        which(v)
    };
    let first = |v: &[f64]| v[0];
    // when d > 0 dimension d carries exactly one class; when d == 0 the class
    // shares dimension 0 with nothing else (the cone is absent)
    let ell_minus = pick(d, first);
    let ell_plus = pick(d + b, first);
    Ok(SpectralInvariants { ell_minus, ell_plus, essential_births: got })
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    /// (resolution parameter, ell_minus, ell_plus) per run.
    pub rows: Vec<(usize, f64, f64)>,
    pub ell_minus_limit: f64,
    pub ell_plus_limit: f64,
    /// Estimated convergence order from the last three rows (NaN if flat).
    pub rate_estimate: f64,
}

/// Run the full pipeline at several resolutions and Richardson-extrapolate
/// the invariants, assuming resolutions double between consecutive rows.
pub fn refinement_study<F>(mut build: F, resolutions: &[usize]) -> Result<RefinementReport, PersistenceError>
where
    F: FnMut(usize) -> Result<Filtration, PersistenceError>,
{
    assert!(!resolutions.is_empty());
    let mut rows = Vec::new();
    for &res in resolutions {
        let filt = build(res)?;
        let diagram = compute_persistence(&filt);
        let inv = spectral_invariants(&filt, &diagram)?;
        rows.push((res, inv.ell_minus, inv.ell_plus));
    }
    let extrapolate = |pick: fn(&(usize, f64, f64)) -> f64| -> (f64, f64) {
        if rows.len() < 3 {
            return (pick(rows.last().unwrap()), f64::NAN);
        }
        let tail = &rows[rows.len() - 3..];
        let (v1, v2, v3) = (pick(&tail[0]), pick(&tail[1]), pick(&tail[2]));
        let (d1, d2) = (v2 - v1, v3 - v2);
        if d2.abs() < 1e-14 || d1.abs() < 1e-14 {
            return (v3, f64::NAN);
        }
        let rate = (d1 / d2).abs().log2();
        let factor = (d1 / d2).abs();
        if factor <= 1.0 + 1e-9 {
            return (v3, rate);
        }
        (v3 + d2 / (factor - 1.0), rate)
    };
    let (ell_minus_limit, rate_a) = extrapolate(|r| r.1);
    let (ell_plus_limit, rate_b) = extrapolate(|r| r.2);
    let rate_estimate = if rate_a.is_nan() { rate_b } else { rate_a };
    Ok(RefinementReport { rows, ell_minus_limit, ell_plus_limit, rate_estimate })
}
