//! Piecewise bi-cubic Lagrange prolongation from coarse-grid functions to
//! fine-grid functions.
//!
//! The 1D basis interpolates on four consecutive coarse nodes. Interior
//! cells use the centered stencil; on Dirichlet grids the first and last
//! cells reuse the neighboring cell's stencil (evaluated outside its own
//! cell), on periodic grids stencils are always centered with wrapped
//! indices. Weights are geometry-only and precomputed once per grid pair.
//! Fine nodes that coincide with coarse nodes are detected by index
//! arithmetic and copied bit-exactly.

use crate::grid::{BoundaryKind, GridError, GridFunction, TwoGridPair};
use crate::par;

/// Value of the cubic Lagrange basis `s` (nodes at local coordinates
/// -1, 0, 1, 2) at local coordinate `t`.
pub fn cubic_basis(s: usize, t: f64) -> f64 {
    match s {
        0 => -t * (t - 1.0) * (t - 2.0) / 6.0,
        1 => (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        2 => -(t + 1.0) * t * (t - 2.0) / 2.0,
        3 => (t + 1.0) * t * (t - 1.0) / 6.0,
        _ => panic!("cubic basis index {s} out of range 0..4"),
    }
}

/// L2 operator-norm bound of the prolongation,
/// `4 (3 + 27^2 + (10 + 7 sqrt 7)^2) / 27^2`.
pub fn prolongation_l2_bound() -> f64 {
    let r = 10.0 + 7.0 * 7.0f64.sqrt();
    4.0 * (3.0 + 729.0 + r * r) / 729.0
}

/// Max-norm operator bound of the prolongation,
/// `((54 + 2 sqrt 3) / 27)^2`.
pub fn prolongation_max_bound() -> f64 {
    let r = (54.0 + 2.0 * 3.0f64.sqrt()) / 27.0;
    r * r
}

/// How one fine node along a direction draws from coarse nodes.
#[derive(Debug, Clone, Copy)]
enum NodeRule {
    /// Coincident with this coarse node; copy the value.
    Inject(u32),
    /// Four-node weighted stencil.
    Stencil { idx: [u32; 4], w: [f64; 4] },
}

/// Precomputed prolongation weights for a [`TwoGridPair`]. Immutable and
/// shareable; apply with [`ProlongationPlan::prolongate`].
#[derive(Debug, Clone)]
pub struct ProlongationPlan {
    pair: TwoGridPair,
    x: Vec<NodeRule>,
    y: Vec<NodeRule>,
}

fn build_direction(n_cells: usize, m: usize, fine_count: usize, bc: BoundaryKind) -> Vec<NodeRule> {
    let mut rules = Vec::with_capacity(fine_count);
    for fi in 0..fine_count {
        if fi % m == 0 {
            rules.push(NodeRule::Inject((fi / m) as u32));
            continue;
        }
        let cell = fi / m;
        let frac = (fi % m) as f64 / m as f64;
        let (nodes, t) = match bc {
            BoundaryKind::Dirichlet => {
                if cell == 0 {
                    ([0, 1, 2, 3], frac - 1.0)
                } else if cell == n_cells - 1 {
                    let b = n_cells - 3;
                    ([b, b + 1, b + 2, b + 3], frac + 1.0)
                } else {
                    ([cell - 1, cell, cell + 1, cell + 2], frac)
                }
            }
            BoundaryKind::Periodic => {
                let wrap = |k: i64| -> usize { k.rem_euclid(n_cells as i64) as usize };
                let c = cell as i64;
                ([wrap(c - 1), wrap(c), wrap(c + 1), wrap(c + 2)], frac)
            }
        };
        let mut idx = [0u32; 4];
        let mut w = [0.0; 4];
        for s in 0..4 {
            idx[s] = nodes[s] as u32;
            w[s] = cubic_basis(s, t);
        }
        rules.push(NodeRule::Stencil { idx, w });
    }
    rules
}

/// Build the plan; the coarse grid must be fine enough for the four-node
/// stencils (enforced at grid construction).
pub fn build_plan(pair: &TwoGridPair) -> Result<ProlongationPlan, GridError> {
    let bc = pair.coarse().bc();
    let x = build_direction(pair.coarse().nx(), pair.mx(), pair.fine().num_x(), bc);
    let y = build_direction(pair.coarse().ny(), pair.my(), pair.fine().num_y(), bc);
    Ok(ProlongationPlan { pair: *pair, x, y })
}

#[inline]
fn apply_rule(rule: &NodeRule, fetch: impl Fn(usize) -> f64) -> f64 {
    match rule {
        NodeRule::Inject(k) => fetch(*k as usize),
        NodeRule::Stencil { idx, w } => {
            w[0] * fetch(idx[0] as usize)
                + w[1] * fetch(idx[1] as usize)
                + w[2] * fetch(idx[2] as usize)
                + w[3] * fetch(idx[3] as usize)
        }
    }
}

impl ProlongationPlan {
    pub fn pair(&self) -> &TwoGridPair {
        &self.pair
    }

    /// Tensor-product interpolation of a coarse-grid function onto the
    /// fine grid: the x direction first, then y.
    pub fn prolongate(&self, w: &GridFunction) -> Result<GridFunction, GridError> {
        if w.grid() != self.pair.coarse() {
            return Err(GridError::GridMismatch);
        }
        let cx = self.pair.coarse().num_x();
        let cy = self.pair.coarse().num_y();
        let fx = self.pair.fine().num_x();

        // Stage 1: fine-x resolution on coarse rows.
        let mut mid = vec![0.0; fx * cy];
        let src = w.values();
        par::row_map(&mut mid, fx, |j, row| {
            let base = j * cx;
            for (i, out) in row.iter_mut().enumerate() {
                *out = apply_rule(&self.x[i], |k| src[base + k]);
            }
        });

        // Stage 2: fine-y resolution.
        let mut out = GridFunction::zeros(*self.pair.fine());
        par::row_map(out.values_mut(), fx, |j, row| {
            let rule = &self.y[j];
            for (i, v) in row.iter_mut().enumerate() {
                *v = apply_rule(rule, |k| mid[k * fx + i]);
            }
        });
        Ok(out)
    }
}

/// Pointwise restriction of a fine-grid function by injection at the
/// coincident nodes, used to seed coarse history from a fine solve.
pub fn inject_fine_to_coarse(pair: &TwoGridPair, w: &GridFunction) -> Result<GridFunction, GridError> {
    if w.grid() != pair.fine() {
        return Err(GridError::GridMismatch);
    }
    let mut out = GridFunction::zeros(*pair.coarse());
    for j in 0..pair.coarse().num_y() {
        for i in 0..pair.coarse().num_x() {
            out.set(i, j, w.get(i * pair.mx(), j * pair.my()));
        }
    }
    Ok(out)
}
