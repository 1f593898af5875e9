//! Fourth-order compact spatial operators and per-step system assembly.
//!
//! The averaging operator along an axis is the (1, 10, 1)/12 stencil with
//! identity rows on Dirichlet boundary nodes (periodic grids wrap).
//! `A = A_x A_y` is the tensor average, `d2` the second central
//! difference, and `Lambda = A_x d2_y + A_y d2_x` the compact Laplacian
//! surrogate. [`assemble_step_matrix`] builds the sparse operator
//! `alpha A - gamma Lambda - A diag(d)` over the unknown nodes, with at
//! most 9 nonzeros per row; Dirichlet boundary couplings are moved to the
//! right-hand side by [`boundary_rhs`].

use std::io::Write;

use thiserror::Error;

use crate::grid::{BoundaryKind, Grid2D, GridError, GridFunction};
use crate::par;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("mass coefficient must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("operation requires a Dirichlet grid")]
    NeedsDirichlet,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

const A_WEIGHTS: [f64; 3] = [1.0 / 12.0, 10.0 / 12.0, 1.0 / 12.0];

#[inline]
fn wrap_dec(i: usize, n: usize) -> usize {
    if i == 0 {
        n - 1
    } else {
        i - 1
    }
}

#[inline]
fn wrap_inc(i: usize, n: usize) -> usize {
    if i + 1 == n {
        0
    } else {
        i + 1
    }
}

/// Apply the one-dimensional compact average along `axis`. Dirichlet
/// boundary rows in that axis are identity.
pub fn apply_a_axis(w: &GridFunction, axis: Axis) -> GridFunction {
    stencil_axis(w, axis, A_WEIGHTS, true)
}

/// Apply the second central difference along `axis`, scaled by the axis
/// spacing. On Dirichlet grids the output is zero on the two boundary
/// rows of that axis (the difference is defined on interior nodes only).
pub fn apply_d2_axis(w: &GridFunction, axis: Axis) -> GridFunction {
    let g = w.grid();
    let h = match axis {
        Axis::X => g.hx(),
        Axis::Y => g.hy(),
    };
    let c = 1.0 / (h * h);
    stencil_axis(w, axis, [c, -2.0 * c, c], false)
}

fn stencil_axis(w: &GridFunction, axis: Axis, st: [f64; 3], identity_boundary: bool) -> GridFunction {
    let g = *w.grid();
    let num_x = g.num_x();
    let num_y = g.num_y();
    let src = w.values();
    let mut out = GridFunction::zeros(g);
    let periodic = g.bc() == BoundaryKind::Periodic;

    match axis {
        Axis::X => par::row_map(out.values_mut(), num_x, |j, row| {
            let base = j * num_x;
            if periodic {
                for i in 0..num_x {
                    let (im, ip) = (wrap_dec(i, num_x), wrap_inc(i, num_x));
                    row[i] = st[0] * src[base + im] + st[1] * src[base + i] + st[2] * src[base + ip];
                }
            } else {
                row[0] = if identity_boundary { src[base] } else { 0.0 };
                row[num_x - 1] = if identity_boundary { src[base + num_x - 1] } else { 0.0 };
                for i in 1..num_x - 1 {
                    row[i] = st[0] * src[base + i - 1] + st[1] * src[base + i] + st[2] * src[base + i + 1];
                }
            }
        }),
        Axis::Y => par::row_map(out.values_mut(), num_x, |j, row| {
            if periodic {
                let (jm, jp) = (wrap_dec(j, num_y), wrap_inc(j, num_y));
                let (rm, r0, rp) = (&src[jm * num_x..], &src[j * num_x..], &src[jp * num_x..]);
                for i in 0..num_x {
                    row[i] = st[0] * rm[i] + st[1] * r0[i] + st[2] * rp[i];
                }
            } else if j == 0 || j == num_y - 1 {
                if identity_boundary {
                    row.copy_from_slice(&src[j * num_x..(j + 1) * num_x]);
                }
            } else {
                let (rm, r0, rp) =
                    (&src[(j - 1) * num_x..], &src[j * num_x..], &src[(j + 1) * num_x..]);
                for i in 0..num_x {
                    row[i] = st[0] * rm[i] + st[1] * r0[i] + st[2] * rp[i];
                }
            }
        }),
    }
    out
}

/// Tensor-product compact average `A = A_x A_y`.
pub fn apply_a(w: &GridFunction) -> GridFunction {
    apply_a_axis(&apply_a_axis(w, Axis::Y), Axis::X)
}

/// Compact Laplacian surrogate `Lambda = A_x d2_y + A_y d2_x`. Values are
/// meaningful on the grid's unknown nodes; Dirichlet boundary entries of
/// the result are zeroed.
pub fn apply_lambda(w: &GridFunction) -> GridFunction {
    let mut out = apply_a_axis(&apply_d2_axis(w, Axis::Y), Axis::X);
    let other = apply_a_axis(&apply_d2_axis(w, Axis::X), Axis::Y);
    out.axpy(1.0, &other);
    if w.grid().bc() == BoundaryKind::Dirichlet {
        out.set_boundary(|_, _| 0.0);
    }
    out
}

/// Sparse operator `alpha A - gamma Lambda - A diag(d)` in compressed
/// sparse rows over the unknown nodes (interior for Dirichlet, all nodes
/// for periodic); at most 9 nonzeros per row, lexicographic ordering.
#[derive(Debug, Clone)]
pub struct StepMatrix {
    grid: Grid2D,
    alpha: f64,
    gamma: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl StepMatrix {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// y = M x, rows computed independently (parallel when enabled).
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n());
        assert_eq!(y.len(), self.n());
        self.matvec_impl(x, y, true);
    }

    /// Forced-sequential matvec (benchmark twin of [`Self::matvec`]).
    pub fn matvec_seq(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_impl(x, y, false);
    }

    fn matvec_impl(&self, x: &[f64], y: &mut [f64], parallel: bool) {
        let row = |r: usize, out: &mut f64| {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *out = s;
        };
        #[cfg(feature = "parallel")]
        if parallel && y.len() >= 1 << 13 {
            use rayon::prelude::*;
            const BLOCK: usize = 1024;
            y.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
                for (off, out) in chunk.iter_mut().enumerate() {
                    row(b * BLOCK + off, out);
                }
            });
            return;
        }
        let _ = parallel;
        for (r, out) in y.iter_mut().enumerate() {
            row(r, out);
        }
    }

    /// Main diagonal, used by the Jacobi-preconditioned Krylov solver.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for r in 0..self.n() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] as usize == r {
                    d[r] = self.vals[k];
                }
            }
        }
        d
    }

    /// Dense copy for direct solves and test oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k] as usize)] = self.vals[k];
            }
        }
        m
    }

    /// MatrixMarket coordinate dump (1-based indices) for debugging.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n(), self.n(), self.vals.len())?;
        for r in 0..self.n() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{} {} {}", r + 1, self.cols[k] as usize + 1, self.vals[k])?;
            }
        }
        Ok(())
    }
}

/// 9-point row coefficients of `alpha A - gamma Lambda - A diag(d)` for
/// offsets `(di, dj)` in {-1,0,1}^2; the reaction value is taken at the
/// source node (d multiplies pointwise before A is applied).
#[inline]
fn coeff(g: &Grid2D, alpha: f64, gamma: f64, di: i64, dj: i64, d_src: f64) -> f64 {
    let ax = A_WEIGHTS[(di + 1) as usize];
    let ay = A_WEIGHTS[(dj + 1) as usize];
    let d2 = |k: i64, h: f64| -> f64 {
        if k == 0 {
            -2.0 / (h * h)
        } else {
            1.0 / (h * h)
        }
    };
    let a2 = ax * ay;
    (alpha - d_src) * a2 - gamma * (ax * d2(dj, g.hy()) + ay * d2(di, g.hx()))
}

fn reaction_at(d: Option<&GridFunction>, idx: usize) -> f64 {
    d.map_or(0.0, |f| f.values()[idx])
}

/// Assemble the step operator. `d`, when present, must live on the same
/// grid and be defined on all stored nodes.
pub fn assemble_step_matrix(
    grid: &Grid2D,
    alpha: f64,
    gamma: f64,
    d: Option<&GridFunction>,
) -> Result<StepMatrix, OpError> {
    if !(alpha > 0.0) {
        return Err(OpError::NonPositiveAlpha(alpha));
    }
    if let Some(f) = d {
        if f.grid() != grid {
            return Err(OpError::Grid(GridError::GridMismatch));
        }
    }
    let n = grid.n_unknowns();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols: Vec<u32> = Vec::with_capacity(9 * n);
    let mut vals: Vec<f64> = Vec::with_capacity(9 * n);
    row_ptr.push(0);

    match grid.bc() {
        BoundaryKind::Dirichlet => {
            let (nx, ny) = (grid.nx(), grid.ny());
            let w = nx - 1; // unknowns per interior row
            for j in 1..ny {
                for i in 1..nx {
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            let (si, sj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                            if grid.is_boundary(si, sj) {
                                continue; // handled by boundary_rhs
                            }
                            let col = (sj - 1) * w + (si - 1);
                            let d_src = reaction_at(d, grid.idx(si, sj));
                            cols.push(col as u32);
                            vals.push(coeff(grid, alpha, gamma, di, dj, d_src));
                        }
                    }
                    row_ptr.push(cols.len());
                }
            }
        }
        BoundaryKind::Periodic => {
            let (nx, ny) = (grid.nx(), grid.ny());
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(9);
            for j in 0..ny {
                for i in 0..nx {
                    entries.clear();
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            let si = (i as i64 + di).rem_euclid(nx as i64) as usize;
                            let sj = (j as i64 + dj).rem_euclid(ny as i64) as usize;
                            let col = sj * nx + si;
                            let d_src = reaction_at(d, grid.idx(si, sj));
                            entries.push((col as u32, coeff(grid, alpha, gamma, di, dj, d_src)));
                        }
                    }
                    entries.sort_unstable_by_key(|e| e.0);
                    for &(c, v) in &entries {
                        cols.push(c);
                        vals.push(v);
                    }
                    row_ptr.push(cols.len());
                }
            }
        }
    }

    Ok(StepMatrix { grid: *grid, alpha, gamma, row_ptr, cols, vals })
}

/// Contribution of known Dirichlet boundary values to the reduced system,
/// negated so it can be added to the right-hand side. Entries are nonzero
/// only at interior nodes whose 3x3 stencil touches the boundary.
pub fn boundary_rhs(
    grid: &Grid2D,
    alpha: f64,
    gamma: f64,
    d: Option<&GridFunction>,
    boundary_values: &GridFunction,
) -> Result<GridFunction, OpError> {
    if grid.bc() != BoundaryKind::Dirichlet {
        return Err(OpError::NeedsDirichlet);
    }
    if boundary_values.grid() != grid {
        return Err(OpError::Grid(GridError::GridMismatch));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = GridFunction::zeros(*grid);
    // Only the interior ring adjacent to the boundary can pick up terms.
    for j in 1..ny {
        if j > 1 && j < ny - 1 {
            // interior columns i=2..nx-2 of this row see no boundary
            for i in [1, nx - 1] {
                let v = ring_contribution(grid, alpha, gamma, d, boundary_values, i, j);
                out.set(i, j, v);
            }
            continue;
        }
        for i in 1..nx {
            let v = ring_contribution(grid, alpha, gamma, d, boundary_values, i, j);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn ring_contribution(
    grid: &Grid2D,
    alpha: f64,
    gamma: f64,
    d: Option<&GridFunction>,
    bv: &GridFunction,
    i: usize,
    j: usize,
) -> f64 {
    let mut acc = 0.0;
    for dj in -1i64..=1 {
        for di in -1i64..=1 {
            let (si, sj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
            if !grid.is_boundary(si, sj) {
                continue;
            }
            let d_src = reaction_at(d, grid.idx(si, sj));
            acc += coeff(grid, alpha, gamma, di, dj, d_src) * bv.get(si, sj);
        }
    }
    -acc
}

/// Flatten a grid function to the unknown vector (interior nodes for
/// Dirichlet, everything for periodic).
pub fn restrict_to_unknowns(w: &GridFunction) -> Vec<f64> {
    let g = w.grid();
    match g.bc() {
        BoundaryKind::Periodic => w.values().to_vec(),
        BoundaryKind::Dirichlet => {
            let mut out = Vec::with_capacity(g.n_unknowns());
            for j in 1..g.ny() {
                for i in 1..g.nx() {
                    out.push(w.get(i, j));
                }
            }
            out
        }
    }
}

/// Embed an unknown vector back into a full grid function; Dirichlet
/// boundary values are copied from `boundary` when given, else zero.
pub fn unknowns_to_grid(grid: &Grid2D, x: &[f64], boundary: Option<&GridFunction>) -> GridFunction {
    assert_eq!(x.len(), grid.n_unknowns());
    match grid.bc() {
        BoundaryKind::Periodic => {
            GridFunction::from_values(*grid, x.to_vec()).expect("length checked")
        }
        BoundaryKind::Dirichlet => {
            let mut out = match boundary {
                Some(b) => b.clone(),
                None => GridFunction::zeros(*grid),
            };
            let mut k = 0;
            for j in 1..grid.ny() {
                for i in 1..grid.nx() {
                    out.set(i, j, x[k]);
                    k += 1;
                }
            }
            out
        }
    }
}
