//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes results the library also produces, but by a
//! different (slower, more transparent) algorithm, so agreement is evidence
//! rather than tautology.

use qmlab::grid::GridData;
use qmlab::persistence::{Bar, Diagram, EssentialClass, Filtration};

/// Symmetric difference of two sorted position lists (Z/2 column addition).
fn xor_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0usize, 0usize);
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

/// Brute-force persistence: reduce the full boundary matrix left to right in
/// filtration order, one column at a time, with no clearing and no splitting
/// by dimension.  The total order on cells is part of the problem statement
/// (it is `f.order`), the reduction strategy is not, so this checks the
/// optimized solver against the textbook one.
pub fn naive_diagram(f: &Filtration) -> Diagram {
    let n = f.len();
    let mut cols: Vec<Vec<u32>> = Vec::with_capacity(n);
    for &id in &f.order {
        let mut col: Vec<u32> =
            f.boundary(id).iter().map(|&b| f.pos_of[b as usize]).collect();
        col.sort_unstable();
        cols.push(col);
    }
    // low(position) -> index of the column owning that pivot
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        while let Some(&low) = cols[j].last() {
            match owner[low as usize] {
                None => {
                    owner[low as usize] = Some(j);
                    break;
                }
                Some(prev) => {
                    let merged = xor_sorted(&cols[j], &cols[prev]);
                    cols[j] = merged;
                }
            }
        }
    }
    let mut is_pivot = vec![false; n];
    for col in &cols {
        if let Some(&low) = col.last() {
            is_pivot[low as usize] = true;
        }
    }
    let mut diagram = Diagram::default();
    for (j, col) in cols.iter().enumerate() {
        let cell = f.order[j] as usize;
        if let Some(&low) = col.last() {
            let born = f.order[low as usize] as usize;
            let (birth, death) = (f.values[born], f.values[cell]);
            if death > birth {
                diagram.pairs.push(Bar { dim: f.dims[born] as usize, birth, death });
            }
        } else if !is_pivot[j] {
            diagram
                .essential
                .push(EssentialClass { dim: f.dims[cell] as usize, birth: f.values[cell] });
        }
    }
    diagram.pairs.sort_by(|a, b| {
        (a.dim, a.birth, a.death)
            .partial_cmp(&(b.dim, b.birth, b.death))
            .unwrap()
    });
    diagram
        .essential
        .sort_by(|a, b| (a.dim, a.birth).partial_cmp(&(b.dim, b.birth)).unwrap());
    diagram
}

/// Rank of a Z/2 matrix given as bitset rows (dense Gaussian elimination).
fn gf2_rank(mut rows: Vec<Vec<u64>>) -> usize {
    let mut rank = 0usize;
    let words = rows.first().map_or(0, |r| r.len());
    for w in 0..words {
        for bit in 0..64 {
            let mut pivot = None;
            for (i, row) in rows.iter().enumerate().skip(rank) {
                if row[w] >> bit & 1 == 1 {
                    pivot = Some(i);
                    break;
                }
            }
            let Some(p) = pivot else { continue };
            rows.swap(rank, p);
            let pivot_row = rows[rank].clone();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != rank && row[w] >> bit & 1 == 1 {
                    for (x, y) in row.iter_mut().zip(&pivot_row) {
                        *x ^= y;
                    }
                }
            }
            rank += 1;
        }
    }
    rank
}

/// Betti numbers of the sublevel set {value <= c} straight from the rank
/// formula beta_d = #d-cells - rank d(d) - rank d(d+1), no pairing involved.
pub fn betti_by_rank(f: &Filtration, c: f64, max_dim: usize) -> Vec<usize> {
    // positions (in cell-id space) of sublevel cells, bucketed by dimension
    let mut cells: Vec<Vec<u32>> = vec![Vec::new(); max_dim + 2];
    for id in 0..f.len() as u32 {
        let d = f.dims[id as usize] as usize;
        if f.values[id as usize] <= c && d <= max_dim + 1 {
            cells[d].push(id);
        }
    }
    let mut rank = vec![0usize; max_dim + 2];
    for d in 1..=max_dim + 1 {
        if cells[d].is_empty() || cells[d - 1].is_empty() {
            continue;
        }
        let row_of: std::collections::HashMap<u32, usize> =
            cells[d - 1].iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let words = cells[d].len().div_ceil(64);
        let mut rows = vec![vec![0u64; words]; cells[d - 1].len()];
        for (j, &id) in cells[d].iter().enumerate() {
            for b in f.boundary(id) {
                let i = row_of[&b];
                rows[i][j / 64] ^= 1u64 << (j % 64);
            }
        }
        rank[d] = gf2_rank(rows);
    }
    (0..=max_dim).map(|d| cells[d].len() - rank[d] - rank[d + 1]).collect()
}

/// Largest spread of vertex values over any top-dimensional grid cell: the
/// discretization error scale for filtration-level quantities.
pub fn max_cell_oscillation(data: &GridData) -> f64 {
    let axes = &data.sampling.axes;
    let dim = axes.len();
    let cells_per_axis: Vec<usize> =
        axes.iter().map(|a| if a.is_periodic() { a.res } else { a.res - 1 }).collect();
    let n_cells: usize = cells_per_axis.iter().product();
    let mut worst = 0.0f64;
    let mut anchor = vec![0usize; dim];
    let mut corner = vec![0usize; dim];
    for flat in 0..n_cells {
        let mut rem = flat;
        for k in (0..dim).rev() {
            anchor[k] = rem % cells_per_axis[k];
            rem /= cells_per_axis[k];
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for mask in 0..1usize << dim {
            for k in 0..dim {
                let mut i = anchor[k] + (mask >> k & 1);
                if i >= axes[k].res {
                    i = 0; // periodic wrap (bounded axes never overflow)
                }
                corner[k] = i;
            }
            let v = data.values[data.sampling.ravel(&corner)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Minimal discrete action over curves with the endpoint displacement pinned
/// to `disp` (absolute position free).  Midpoint-rule action, plain gradient
/// descent with backtracking — deliberately unrelated to the library's
/// minimizer.  `lag`, `lag_q`, `lag_v` are the integrand L(q, v) and its two
/// partial derivatives.  Returns the action of the best of `starts` runs.
pub fn min_action_fixed_displacement<L, Lq, Lv>(
    lag: L,
    lag_q: Lq,
    lag_v: Lv,
    horizon: usize,
    steps_per_unit: usize,
    disp: f64,
    starts: &[Vec<f64>],
) -> f64
where
    L: Fn(f64, f64) -> f64,
    Lq: Fn(f64, f64) -> f64,
    Lv: Fn(f64, f64) -> f64,
{
    let m = horizon * steps_per_unit;
    let h = 1.0 / steps_per_unit as f64;
    // nodes x_0..x_{m-1}; the closing segment runs to x_0 + disp, so x_0
    // also moves the far endpoint and collects both boundary terms.
    let seg = |x: &[f64], i: usize| -> (f64, f64) {
        let next = if i + 1 == m { x[0] + disp } else { x[i + 1] };
        (0.5 * (x[i] + next), (next - x[i]) / h)
    };
    let action = |x: &[f64]| -> f64 {
        (0..m).map(|i| {
            let (q, v) = seg(x, i);
            h * lag(q, v)
        }).sum()
    };
    let gradient = |x: &[f64], g: &mut [f64]| {
        g.fill(0.0);
        for i in 0..m {
            let (q, v) = seg(x, i);
            let (dq, dv) = (h * lag_q(q, v), lag_v(q, v));
            // d/dx_i of segment i and d/dx_{i+1} of segment i (mod m)
            g[i] += 0.5 * dq - dv;
            g[(i + 1) % m] += 0.5 * dq + dv;
        }
    };
    let mut best = f64::INFINITY;
    for start in starts {
        assert_eq!(start.len(), m);
        let mut x = start.clone();
        let mut grad = vec![0.0f64; m];
        let mut step = 0.05f64;
        for _ in 0..6000 {
            gradient(&x, &mut grad);
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2.sqrt() < 1e-9 {
                break;
            }
            let a0 = action(&x);
            let mut accepted = false;
            for _ in 0..50 {
                let trial: Vec<f64> =
                    x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
                if action(&trial) <= a0 - 0.25 * step * gnorm2 {
                    x = trial;
                    step *= 1.3;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        best = best.min(action(&x));
    }
    best
}
