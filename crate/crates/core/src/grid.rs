//! Uniform 2D grid geometry, grid functions, and discrete inner products
//! and norms for Dirichlet and periodic boundary conditions.
//!
//! Storage convention: a Dirichlet grid with `nx x ny` cells stores
//! `(nx+1) x (ny+1)` nodes including the boundary; a periodic grid stores
//! `nx x ny` nodes with wraparound index arithmetic. Values are laid out
//! row-major with the x index contiguous (`idx = j * num_x + i`). All
//! reductions use the fixed chunked summation order of [`crate::par`], so
//! norms and inner products are bit-reproducible run-to-run.

use std::io::Write;

use thiserror::Error;

use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 4 cells per direction, got {nx} x {ny}")]
    TooCoarse { nx: usize, ny: usize },
    #[error("domain lengths must be positive, got {lx} x {ly}")]
    NonPositiveLength { lx: f64, ly: f64 },
    #[error("refinement ratios must be at least 2, got {mx} x {my}")]
    RatioTooSmall { mx: usize, my: usize },
    #[error("grid functions live on different grids")]
    GridMismatch,
    #[error("operation requires {expected:?} boundary conditions")]
    WrongBoundary { expected: BoundaryKind },
    #[error("grid function contains non-finite values")]
    NonFinite,
    #[error("value count {got} does not match grid storage {expected}")]
    BadLength { got: usize, expected: usize },
}

/// Boundary condition attached to a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

/// Uniform rectangular grid on `(x0, x0+lx) x (y0, y0+ly)` with `nx x ny`
/// cells. Immutable after construction and freely shareable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    x0: f64,
    y0: f64,
    hx: f64,
    hy: f64,
    bc: BoundaryKind,
}

impl Grid2D {
    /// Grid on `(0, lx) x (0, ly)`. Degenerate grids (fewer than 4 cells
    /// per direction, needed by the bi-cubic stencils) are rejected here,
    /// not per operation.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, bc: BoundaryKind) -> Result<Self, GridError> {
        Self::with_origin(nx, ny, (0.0, 0.0), (lx, ly), bc)
    }

    /// Grid with an explicit lower-left corner.
    pub fn with_origin(
        nx: usize,
        ny: usize,
        origin: (f64, f64),
        lengths: (f64, f64),
        bc: BoundaryKind,
    ) -> Result<Self, GridError> {
        let (lx, ly) = lengths;
        if nx < 4 || ny < 4 {
            return Err(GridError::TooCoarse { nx, ny });
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(GridError::NonPositiveLength { lx, ly });
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            x0: origin.0,
            y0: origin.1,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
            bc,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn hy(&self) -> f64 {
        self.hy
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }

    /// Stored node count along x: `nx+1` for Dirichlet, `nx` for periodic.
    pub fn num_x(&self) -> usize {
        match self.bc {
            BoundaryKind::Dirichlet => self.nx + 1,
            BoundaryKind::Periodic => self.nx,
        }
    }

    /// Stored node count along y.
    pub fn num_y(&self) -> usize {
        match self.bc {
            BoundaryKind::Dirichlet => self.ny + 1,
            BoundaryKind::Periodic => self.ny,
        }
    }

    /// Total stored nodes.
    pub fn n_values(&self) -> usize {
        self.num_x() * self.num_y()
    }

    /// Number of unknowns in a linear system on this grid: interior nodes
    /// for Dirichlet, all nodes for periodic.
    pub fn n_unknowns(&self) -> usize {
        match self.bc {
            BoundaryKind::Dirichlet => (self.nx - 1) * (self.ny - 1),
            BoundaryKind::Periodic => self.nx * self.ny,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.num_x() && j < self.num_y());
        j * self.num_x() + i
    }

    /// True for nodes on the Dirichlet boundary; always false on a
    /// periodic grid.
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        match self.bc {
            BoundaryKind::Dirichlet => i == 0 || i == self.nx || j == 0 || j == self.ny,
            BoundaryKind::Periodic => false,
        }
    }
}

/// Coarse/fine grid pair with integer refinement ratios; the grids share
/// the domain and boundary condition, and every coarse node coincides
/// with a fine node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGridPair {
    coarse: Grid2D,
    fine: Grid2D,
    mx: usize,
    my: usize,
}

impl TwoGridPair {
    pub fn new(
        coarse_nx: usize,
        coarse_ny: usize,
        mx: usize,
        my: usize,
        origin: (f64, f64),
        lengths: (f64, f64),
        bc: BoundaryKind,
    ) -> Result<Self, GridError> {
        if mx < 2 || my < 2 {
            return Err(GridError::RatioTooSmall { mx, my });
        }
        let coarse = Grid2D::with_origin(coarse_nx, coarse_ny, origin, lengths, bc)?;
        let fine = Grid2D::with_origin(coarse_nx * mx, coarse_ny * my, origin, lengths, bc)?;
        Ok(Self { coarse, fine, mx, my })
    }

    pub fn coarse(&self) -> &Grid2D {
        &self.coarse
    }
    pub fn fine(&self) -> &Grid2D {
        &self.fine
    }
    pub fn mx(&self) -> usize {
        self.mx
    }
    pub fn my(&self) -> usize {
        self.my
    }
}

/// Nodal values on a [`Grid2D`]. A plain value type; all operations on it
/// are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid2D,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { values: vec![0.0; grid.n_values()], grid }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { values: vec![c; grid.n_values()], grid }
    }

    /// Sample `f(x, y)` at every stored node.
    pub fn sample<F: Fn(f64, f64) -> f64 + Sync>(grid: Grid2D, f: F) -> Self {
        let mut values = vec![0.0; grid.n_values()];
        let num_x = grid.num_x();
        par::row_map(&mut values, num_x, |j, row| {
            let y = grid.y(j);
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(grid.x(i), y);
            }
        });
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_values() {
            return Err(GridError::BadLength { got: values.len(), expected: grid.n_values() });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Max of |values| over all stored nodes (the discrete max norm).
    pub fn max_abs(&self) -> f64 {
        par::max_abs(&self.values)
    }

    /// self += alpha * other (same grid required).
    pub fn axpy(&mut self, alpha: f64, other: &GridFunction) {
        assert_eq!(self.grid, other.grid, "axpy on mismatched grids");
        par::axpy(&mut self.values, alpha, &other.values);
    }

    /// Pointwise map into a new function.
    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> GridFunction {
        let mut out = self.clone();
        par::row_map(&mut out.values, self.grid.num_x(), |_, row| {
            for v in row.iter_mut() {
                *v = f(*v);
            }
        });
        out
    }

    /// Overwrite Dirichlet boundary nodes with `psi(x, y)`; no-op on a
    /// periodic grid.
    pub fn set_boundary<F: Fn(f64, f64) -> f64>(&mut self, psi: F) {
        if self.grid.bc() != BoundaryKind::Dirichlet {
            return;
        }
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        for i in 0..=nx {
            let x = self.grid.x(i);
            self.set(i, 0, psi(x, self.grid.y(0)));
            self.set(i, ny, psi(x, self.grid.y(ny)));
        }
        for j in 1..ny {
            let y = self.grid.y(j);
            self.set(0, j, psi(self.grid.x(0), y));
            self.set(nx, j, psi(self.grid.x(nx), y));
        }
    }

    /// CSV snapshot `i,j,x,y,value`, rows in storage order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,x,y,value")?;
        for j in 0..self.grid.num_y() {
            for i in 0..self.grid.num_x() {
                writeln!(w, "{},{},{},{},{}", i, j, self.grid.x(i), self.grid.y(j), self.get(i, j))?;
            }
        }
        Ok(())
    }
}

fn check_same_grid(w: &GridFunction, q: &GridFunction) -> Result<(), GridError> {
    if w.grid != q.grid {
        return Err(GridError::GridMismatch);
    }
    Ok(())
}

/// Discrete L2 inner product: `hx hy` times the sum of `w q` over interior
/// nodes (Dirichlet) or all nodes (periodic).
pub fn inner_l2(w: &GridFunction, q: &GridFunction) -> Result<f64, GridError> {
    check_same_grid(w, q)?;
    let g = w.grid();
    let s = match g.bc() {
        BoundaryKind::Periodic => par::dot(w.values(), q.values()),
        BoundaryKind::Dirichlet => {
            // Interior rows only; each row contributes an ordered partial.
            let num_x = g.num_x();
            let mut s = 0.0;
            for j in 1..g.ny() {
                let a = &w.values()[j * num_x + 1..j * num_x + g.nx()];
                let b = &q.values()[j * num_x + 1..j * num_x + g.nx()];
                s += par::dot_seq(a, b);
            }
            s
        }
    };
    Ok(g.hx() * g.hy() * s)
}

/// Trapezoid-weighted inner product over all nodes of a Dirichlet grid:
/// weights 1/4 at corners, 1/2 on edges, 1 in the interior.
pub fn inner_weighted(w: &GridFunction, q: &GridFunction) -> Result<f64, GridError> {
    check_same_grid(w, q)?;
    let g = w.grid();
    if g.bc() != BoundaryKind::Dirichlet {
        return Err(GridError::WrongBoundary { expected: BoundaryKind::Dirichlet });
    }
    let (nx, ny) = (g.nx(), g.ny());
    let weight = |i: usize, j: usize| -> f64 {
        let wx = if i == 0 || i == nx { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == ny { 0.5 } else { 1.0 };
        wx * wy
    };
    let mut s = 0.0;
    for j in 0..=ny {
        let mut row = 0.0;
        for i in 0..=nx {
            row += weight(i, j) * w.get(i, j) * q.get(i, j);
        }
        s += row;
    }
    Ok(g.hx() * g.hy() * s)
}

/// The three norms used throughout: discrete L2, max, and the norm induced
/// by the compact averaging operator.
#[derive(Debug, Clone, Copy)]
pub struct Norms {
    pub l2: f64,
    pub max: f64,
    pub a_norm: f64,
}

/// Compute all three norms; rejects non-finite values explicitly.
pub fn norms(w: &GridFunction) -> Result<Norms, GridError> {
    if !w.is_finite() {
        return Err(GridError::NonFinite);
    }
    let l2 = inner_l2(w, w)?.sqrt();
    let max = w.max_abs();
    let aw = crate::compact_ops::apply_a(w);
    let a_norm = inner_l2(&aw, w)?.max(0.0).sqrt();
    Ok(Norms { l2, max, a_norm })
}

/// Discrete L2 norm (no finiteness check; hot path).
pub fn norm_l2(w: &GridFunction) -> f64 {
    inner_l2(w, w).expect("same grid").max(0.0).sqrt()
}

/// Discrete L2 distance between two grid functions on the same grid.
pub fn l2_distance(a: &GridFunction, b: &GridFunction) -> Result<f64, GridError> {
    check_same_grid(a, b)?;
    let mut d = a.clone();
    d.axpy(-1.0, b);
    Ok(norm_l2(&d))
}

/// Discrete L2 error of `u` against a continuous field `exact(x, y)`.
pub fn l2_error<F: Fn(f64, f64) -> f64 + Sync>(u: &GridFunction, exact: F) -> f64 {
    let e = GridFunction::sample(*u.grid(), exact);
    l2_distance(u, &e).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(nx: usize, ny: usize, bc: BoundaryKind) -> Grid2D {
        Grid2D::new(nx, ny, 1.0, 1.0, bc).unwrap()
    }

    #[test]
    fn build_grid_spacings() {
        let g = unit(100, 100, BoundaryKind::Dirichlet);
        assert_eq!(g.hx(), 0.01);
        assert_eq!(g.hy(), 0.01);
        assert_eq!(g.hx() * g.nx() as f64, g.lx());

        let g = Grid2D::with_origin(384, 384, (-1.0, -1.0), (2.0, 2.0), BoundaryKind::Periodic).unwrap();
        assert_eq!(g.hx(), 2.0 / 384.0);
        assert_eq!(g.hx(), 1.0 / 192.0);
    }

    #[test]
    fn build_grid_rejects_degenerate() {
        assert_eq!(
            Grid2D::new(3, 3, 1.0, 1.0, BoundaryKind::Dirichlet).unwrap_err(),
            GridError::TooCoarse { nx: 3, ny: 3 }
        );
        assert!(matches!(
            Grid2D::new(8, 8, -1.0, 1.0, BoundaryKind::Dirichlet),
            Err(GridError::NonPositiveLength { .. })
        ));
    }

    #[test]
    fn two_grid_pair_nesting() {
        let p = TwoGridPair::new(30, 30, 10, 10, (0.0, 0.0), (1.0, 1.0), BoundaryKind::Dirichlet).unwrap();
        assert_eq!(p.fine().nx(), 300);
        assert_eq!(p.fine().ny(), 300);

        let p = TwoGridPair::new(128, 128, 3, 3, (-1.0, -1.0), (2.0, 2.0), BoundaryKind::Periodic).unwrap();
        assert_eq!(p.fine().nx(), 384);
        assert_eq!(p.coarse().lx(), p.fine().lx());

        assert!(matches!(
            TwoGridPair::new(10, 10, 1, 1, (0.0, 0.0), (1.0, 1.0), BoundaryKind::Dirichlet),
            Err(GridError::RatioTooSmall { .. })
        ));
    }

    #[test]
    fn inner_l2_constants() {
        // Dirichlet: interior sum only. 4x4 unit square, w = q = 1:
        // 3x3 interior nodes, hx hy = 1/16.
        let g = unit(4, 4, BoundaryKind::Dirichlet);
        let one = GridFunction::constant(g, 1.0);
        assert_relative_eq!(inner_l2(&one, &one).unwrap(), 9.0 / 16.0, max_relative = 1e-15);

        // Periodic: the constant has squared norm equal to the domain area.
        for n in [4, 7, 16] {
            let g = unit(n, n, BoundaryKind::Periodic);
            let one = GridFunction::constant(g, 1.0);
            assert_relative_eq!(inner_l2(&one, &one).unwrap(), 1.0, max_relative = 1e-14);
            let neg = GridFunction::constant(g, -1.0);
            assert_relative_eq!(inner_l2(&one, &neg).unwrap(), -1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn inner_l2_rejects_mismatch() {
        let a = GridFunction::zeros(unit(4, 4, BoundaryKind::Dirichlet));
        let b = GridFunction::zeros(unit(5, 4, BoundaryKind::Dirichlet));
        assert_eq!(inner_l2(&a, &b).unwrap_err(), GridError::GridMismatch);
    }

    #[test]
    fn inner_weighted_examples() {
        // Weights over a 5x5 node set sum to nx*ny cells: 4*(1/4) + 12*(1/2) + 9 = 16.
        let g = unit(4, 4, BoundaryKind::Dirichlet);
        let one = GridFunction::constant(g, 1.0);
        assert_relative_eq!(inner_weighted(&one, &one).unwrap(), 1.0, max_relative = 1e-15);

        let zero = GridFunction::zeros(g);
        assert_eq!(inner_weighted(&zero, &zero).unwrap(), 0.0);

        // Boundary-zero function: weighted and interior products coincide.
        let w = GridFunction::sample(g, |x, y| {
            (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        });
        let mut w0 = w.clone();
        w0.set_boundary(|_, _| 0.0);
        assert_relative_eq!(
            inner_weighted(&w0, &w0).unwrap(),
            inner_l2(&w0, &w0).unwrap(),
            max_relative = 1e-13
        );

        let gp = unit(4, 4, BoundaryKind::Periodic);
        let p = GridFunction::constant(gp, 1.0);
        assert!(matches!(inner_weighted(&p, &p), Err(GridError::WrongBoundary { .. })));
    }

    #[test]
    fn norms_zero_and_nan() {
        let g = unit(6, 6, BoundaryKind::Dirichlet);
        let z = GridFunction::zeros(g);
        let n = norms(&z).unwrap();
        assert_eq!((n.l2, n.max, n.a_norm), (0.0, 0.0, 0.0));

        let mut bad = GridFunction::zeros(g);
        bad.set(2, 2, f64::NAN);
        assert_eq!(norms(&bad).unwrap_err(), GridError::NonFinite);
    }

    fn random_fn(g: Grid2D, rng: &mut ChaCha8Rng, boundary_zero: bool) -> GridFunction {
        let mut w = GridFunction::from_values(
            g,
            (0..g.n_values()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        if boundary_zero {
            w.set_boundary(|_, _| 0.0);
        }
        w
    }

    #[test]
    fn bilinearity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for bc in [BoundaryKind::Dirichlet, BoundaryKind::Periodic] {
            let g = unit(9, 7, bc);
            for _ in 0..20 {
                let w = random_fn(g, &mut rng, false);
                let q = random_fn(g, &mut rng, false);
                let r = random_fn(g, &mut rng, false);
                let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));

                let mut aw_br = w.clone();
                aw_br.values_mut().iter_mut().zip(q.values()).for_each(|(x, y)| {
                    *x = a * *x + b * y;
                });
                let lhs = inner_l2(&aw_br, &r).unwrap();
                let rhs = a * inner_l2(&w, &r).unwrap() + b * inner_l2(&q, &r).unwrap();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-13, epsilon = 1e-15);
                assert_relative_eq!(
                    inner_l2(&w, &q).unwrap(),
                    inner_l2(&q, &w).unwrap(),
                    max_relative = 1e-13,
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn norm_equivalence_under_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Homogeneous Dirichlet: ||w||^2 / 3 <= ||w||_A^2 <= ||w||^2.
        let g = unit(12, 10, BoundaryKind::Dirichlet);
        for _ in 0..100 {
            let w = random_fn(g, &mut rng, true);
            let n = norms(&w).unwrap();
            let (l2sq, asq) = (n.l2 * n.l2, n.a_norm * n.a_norm);
            assert!(asq <= l2sq * (1.0 + 1e-12));
            assert!(asq >= l2sq / 3.0 - 1e-12);
        }
        // Periodic: 2/3 ||w|| <= ||w||_A <= ||w||.
        let g = unit(12, 10, BoundaryKind::Periodic);
        for _ in 0..100 {
            let w = random_fn(g, &mut rng, false);
            let n = norms(&w).unwrap();
            assert!(n.a_norm <= n.l2 * (1.0 + 1e-12));
            assert!(n.a_norm >= (2.0 / 3.0) * n.l2 - 1e-12);
        }
    }

    #[test]
    fn inverse_inequality_constant_stays_bounded() {
        // ||w||_inf <= C / h * ||w||_2 with C independent of refinement;
        // measure C empirically across a refinement ladder.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut consts = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let g = unit(n, n, BoundaryKind::Dirichlet);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let w = random_fn(g, &mut rng, true);
                let nn = norms(&w).unwrap();
                if nn.l2 > 0.0 {
                    worst = worst.max(nn.max * g.hx() / nn.l2);
                }
            }
            consts.push(worst);
        }
        let c_max = consts.iter().cloned().fold(0.0, f64::max);
        let c_min = consts.iter().cloned().fold(f64::MAX, f64::min);
        println!("inverse inequality constants across ladder: {consts:?}");
        assert!(c_max < 10.0 * c_min.max(1e-6), "constant should not blow up under refinement");
    }

    #[test]
    fn csv_snapshot_layout() {
        let g = unit(4, 4, BoundaryKind::Dirichlet);
        let w = GridFunction::sample(g, |x, y| x + 10.0 * y);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "i,j,x,y,value");
        assert_eq!(lines.next().unwrap(), "0,0,0,0,0");
        // 25 node rows + header
        assert_eq!(text.lines().count(), 26);
    }
}
