//! Concrete problem instances: manufactured solutions with hand-derived
//! sources, and phase-field Allen-Cahn setups with the discrete energy
//! functional.
//!
//! Sources `g` are closed forms derived by hand (numerical
//! differentiation would pollute the fourth-order studies); a
//! finite-difference residual check guards the derivations.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{BoundaryKind, Grid2D, GridError, GridFunction, TwoGridPair};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A semilinear parabolic problem `u_t - c Lap(u) = f(u) + g` on a
/// rectangle, with initial data, boundary data (Dirichlet) and an
/// optional exact solution for error measurement.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub c: f64,
    pub f: ScalarFn,
    pub f_prime: ScalarFn,
    /// Source term; `None` means identically zero.
    pub g: Option<SpaceTimeFn>,
    pub u0: SpaceFn,
    /// Dirichlet boundary data; ignored for periodic problems.
    pub psi: Option<SpaceTimeFn>,
    pub exact: Option<SpaceTimeFn>,
    pub bc: BoundaryKind,
    pub origin: (f64, f64),
    pub lengths: (f64, f64),
    pub t_end: f64,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("c", &self.c)
            .field("bc", &self.bc)
            .field("origin", &self.origin)
            .field("lengths", &self.lengths)
            .field("t_end", &self.t_end)
            .finish()
    }
}

impl ProblemSpec {
    /// Grid with `n x n` cells on this problem's domain.
    pub fn grid(&self, n: usize) -> Result<Grid2D, GridError> {
        Grid2D::with_origin(n, n, self.origin, self.lengths, self.bc)
    }

    /// Nested pair with `coarse_n x coarse_n` coarse cells and ratio `m`.
    pub fn grid_pair(&self, coarse_n: usize, m: usize) -> Result<TwoGridPair, GridError> {
        TwoGridPair::new(coarse_n, coarse_n, m, m, self.origin, self.lengths, self.bc)
    }

    pub fn sample_u0(&self, grid: Grid2D) -> GridFunction {
        let u0 = Arc::clone(&self.u0);
        GridFunction::sample(grid, move |x, y| u0(x, y))
    }

    pub fn sample_g(&self, grid: Grid2D, t: f64) -> GridFunction {
        match &self.g {
            Some(g) => {
                let g = Arc::clone(g);
                GridFunction::sample(grid, move |x, y| g(x, y, t))
            }
            None => GridFunction::zeros(grid),
        }
    }

    pub fn sample_exact(&self, grid: Grid2D, t: f64) -> Option<GridFunction> {
        self.exact.as_ref().map(|e| {
            let e = Arc::clone(e);
            GridFunction::sample(grid, move |x, y| e(x, y, t))
        })
    }

    /// Boundary data at time `t`; zero when no `psi` was given.
    pub fn boundary_at(&self, t: f64) -> impl Fn(f64, f64) -> f64 + '_ {
        move |x, y| self.psi.as_ref().map_or(0.0, |p| p(x, y, t))
    }

    /// Maximum finite-difference residual of
    /// `u_t - c Lap(u) - f(u) - g` at `n_points` random space-time
    /// points; wide stencils of fourth order keep the check well below
    /// the 1e-6 gate even for the stiff amplitude profiles.
    pub fn residual_check(&self, n_points: usize, seed: u64) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        let g = self.g.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 1e-3_f64.min(self.t_end / 100.0);
        let dx = 1e-3 * self.lengths.0.min(self.lengths.1);
        let mut worst = 0.0f64;
        for _ in 0..n_points {
            let x = self.origin.0 + rng.gen_range(0.1..0.9) * self.lengths.0;
            let y = self.origin.1 + rng.gen_range(0.1..0.9) * self.lengths.1;
            let t = rng.gen_range(2.0 * dt..self.t_end - 2.0 * dt);
            let u = exact(x, y, t);
            let ut = (-exact(x, y, t + 2.0 * dt) + 8.0 * exact(x, y, t + dt)
                - 8.0 * exact(x, y, t - dt)
                + exact(x, y, t - 2.0 * dt))
                / (12.0 * dt);
            let d2 = |f: &dyn Fn(f64) -> f64| {
                (-f(2.0 * dx) + 16.0 * f(dx) - 30.0 * f(0.0) + 16.0 * f(-dx) - f(-2.0 * dx))
                    / (12.0 * dx * dx)
            };
            let uxx = d2(&|e: f64| exact(x + e, y, t));
            let uyy = d2(&|e: f64| exact(x, y + e, t));
            let gv = g.map_or(0.0, |gf| gf(x, y, t));
            let r = ut - self.c * (uxx + uyy) - (self.f)(u) - gv;
            worst = worst.max(r.abs());
        }
        Some(worst)
    }
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn sine_mode(x: f64, y: f64) -> f64 {
    (TWO_PI * x).sin() * (TWO_PI * y).sin()
}

/// Manufactured problem on the unit square with `f(u) = u - u^3`, unit
/// diffusion, and exact solution `a(t) sin(2 pi x) sin(2 pi y)`.
fn cubic_reaction_problem(name: &str, a: ScalarFn, a_dot: ScalarFn, t_end: f64) -> ProblemSpec {
    let exact: SpaceTimeFn = {
        let a = Arc::clone(&a);
        Arc::new(move |x, y, t| a(t) * sine_mode(x, y))
    };
    // g = u_t - Lap(u) - (u - u^3)
    //   = (a' + 8 pi^2 a - a) E + a^3 E^3  with E the sine mode.
    let g: SpaceTimeFn = {
        let a = Arc::clone(&a);
        Arc::new(move |x, y, t| {
            let e = sine_mode(x, y);
            let av = a(t);
            (a_dot(t) + (2.0 * TWO_PI * TWO_PI - 1.0) * av) * e + av.powi(3) * e.powi(3)
        })
    };
    let spec = ProblemSpec {
        name: name.to_string(),
        c: 1.0,
        f: Arc::new(|u| u - u * u * u),
        f_prime: Arc::new(|u| 1.0 - 3.0 * u * u),
        g: Some(g),
        u0: {
            let a = Arc::clone(&a);
            Arc::new(move |x, y| a(0.0) * sine_mode(x, y))
        },
        psi: None,
        exact: Some(exact),
        bc: BoundaryKind::Dirichlet,
        origin: (0.0, 0.0),
        lengths: (1.0, 1.0),
        t_end,
    };
    debug_self_check(&spec);
    spec
}

/// Smooth benchmark: amplitude `5 sin t + 2 sin 5t`.
pub fn case_i() -> ProblemSpec {
    cubic_reaction_problem(
        "case1",
        Arc::new(|t: f64| 5.0 * t.sin() + 2.0 * (5.0 * t).sin()),
        Arc::new(|t: f64| 5.0 * t.cos() + 10.0 * (5.0 * t).cos()),
        std::f64::consts::PI,
    )
}

/// Faster-varying amplitude `10 sin t + 5 sin 2t + 2 sin 5t + sin 10t`.
pub fn case_ii() -> ProblemSpec {
    cubic_reaction_problem(
        "case2",
        Arc::new(|t: f64| {
            10.0 * t.sin() + 5.0 * (2.0 * t).sin() + 2.0 * (5.0 * t).sin() + (10.0 * t).sin()
        }),
        Arc::new(|t: f64| {
            10.0 * t.cos() + 10.0 * (2.0 * t).cos() + 10.0 * (5.0 * t).cos() + 10.0 * (10.0 * t).cos()
        }),
        std::f64::consts::PI,
    )
}

/// Sharply-varying amplitude `10 sin t + 50 sin 2t + 30 sin 5t + 10 sin 10t`.
pub fn case_iii() -> ProblemSpec {
    cubic_reaction_problem(
        "case3",
        Arc::new(|t: f64| {
            10.0 * t.sin() + 50.0 * (2.0 * t).sin() + 30.0 * (5.0 * t).sin() + 10.0 * (10.0 * t).sin()
        }),
        Arc::new(|t: f64| {
            10.0 * t.cos()
                + 100.0 * (2.0 * t).cos()
                + 150.0 * (5.0 * t).cos()
                + 100.0 * (10.0 * t).cos()
        }),
        std::f64::consts::PI,
    )
}

/// Slowly ramping single-mode solution with diffusion tuned so the
/// diffusion term cancels the mode exactly: `c = 1 / (8 pi^2)`,
/// `u = sin t sin(2 pi x) sin(2 pi y)`, `f(u) = u - u^3`. Used for the
/// random-mesh accuracy studies.
pub fn single_sine() -> ProblemSpec {
    let c = 1.0 / (2.0 * TWO_PI * TWO_PI);
    // With c Lap(u) = -u the source reduces to cos(t) E + sin(t)^3 E^3.
    let g: SpaceTimeFn = Arc::new(|x, y, t| {
        let e = sine_mode(x, y);
        t.cos() * e + t.sin().powi(3) * e.powi(3)
    });
    let spec = ProblemSpec {
        name: "sec62".to_string(),
        c,
        f: Arc::new(|u| u - u * u * u),
        f_prime: Arc::new(|u| 1.0 - 3.0 * u * u),
        g: Some(g),
        u0: Arc::new(|_, _| 0.0),
        psi: None,
        exact: Some(Arc::new(|x, y, t| t.sin() * sine_mode(x, y))),
        bc: BoundaryKind::Dirichlet,
        origin: (0.0, 0.0),
        lengths: (1.0, 1.0),
        t_end: 1.0,
    };
    debug_self_check(&spec);
    spec
}

/// Two Gaussian pulses in time riding a single spatial mode, with
/// `f(u) = sin u`; the multiple time scales exercise the adaptive
/// controller.
pub fn double_pulse() -> ProblemSpec {
    let amp = |t: f64| 1.0 + 20.0 * (-40.0 * (t - 1.0).powi(2)).exp() + 30.0 * (-60.0 * (t - 4.0).powi(2)).exp();
    let amp_dot = |t: f64| {
        -1600.0 * (t - 1.0) * (-40.0 * (t - 1.0).powi(2)).exp()
            - 3600.0 * (t - 4.0) * (-60.0 * (t - 4.0).powi(2)).exp()
    };
    let g: SpaceTimeFn = Arc::new(move |x, y, t| {
        let e = sine_mode(x, y);
        let a = amp(t);
        // u_t - Lap(u) - sin(u) with Lap(u) = -8 pi^2 a E.
        amp_dot(t) * e + 2.0 * TWO_PI * TWO_PI * a * e - (a * e).sin()
    });
    let spec = ProblemSpec {
        name: "sec63".to_string(),
        c: 1.0,
        f: Arc::new(|u| u.sin()),
        f_prime: Arc::new(|u| u.cos()),
        g: Some(g),
        u0: Arc::new(move |x, y| amp(0.0) * sine_mode(x, y)),
        psi: None,
        exact: Some(Arc::new(move |x, y, t| amp(t) * sine_mode(x, y))),
        bc: BoundaryKind::Dirichlet,
        origin: (0.0, 0.0),
        lengths: (1.0, 1.0),
        t_end: 4.0,
    };
    debug_self_check(&spec);
    spec
}

/// Initial data for the Allen-Cahn runs.
#[derive(Debug, Clone, Copy)]
pub enum AllenCahnInit {
    /// Four tanh-profile bubbles centered on the axes.
    FourBubble,
    /// `offset + amplitude * rand(x, y)` with a coordinate-hashed uniform
    /// field, deterministic for a fixed seed.
    Random { seed: u64, offset: f64, amplitude: f64 },
}

/// Uniform deviate in [0, 1) keyed on the node coordinates, so the field
/// is a pure function of (x, y) and reproducible across grids.
fn coordinate_noise(seed: u64, x: f64, y: f64) -> f64 {
    let key = seed ^ x.to_bits().rotate_left(17) ^ y.to_bits().rotate_left(41);
    ChaCha8Rng::seed_from_u64(key).gen::<f64>()
}

/// Allen-Cahn phase-field problem `u_t - eps^2 Lap(u) = u - u^3` with
/// periodic boundary conditions and no source.
pub fn allen_cahn(
    epsilon: f64,
    init: AllenCahnInit,
    origin: (f64, f64),
    lengths: (f64, f64),
) -> ProblemSpec {
    assert!(epsilon > 0.0, "interface width must be positive");
    let u0: SpaceFn = match init {
        AllenCahnInit::FourBubble => Arc::new(move |x: f64, y: f64| {
            let bubble = |cx: f64, cy: f64| {
                ((((x - cx).powi(2) + (y - cy).powi(2)) - 0.04) / epsilon).tanh()
            };
            -bubble(0.3, 0.0) * bubble(-0.3, 0.0) * bubble(0.0, 0.3) * bubble(0.0, -0.3)
        }),
        AllenCahnInit::Random { seed, offset, amplitude } => {
            Arc::new(move |x: f64, y: f64| offset + amplitude * coordinate_noise(seed, x, y))
        }
    };
    ProblemSpec {
        name: match init {
            AllenCahnInit::FourBubble => "ac_bubbles".to_string(),
            AllenCahnInit::Random { .. } => "ac_random".to_string(),
        },
        c: epsilon * epsilon,
        f: Arc::new(|u| u - u * u * u),
        f_prime: Arc::new(|u| 1.0 - 3.0 * u * u),
        g: None,
        u0,
        psi: None,
        exact: None,
        bc: BoundaryKind::Periodic,
        origin,
        lengths,
        t_end: 100.0,
    }
}

/// Discrete free energy of a periodic phase field:
/// `-(eps^2/2) hx hy sum u Lap_h(u) + (1/4) hx hy sum (1 - u^2)^2` with
/// the 5-point Laplacian. Fixed summation order, so energies are
/// bit-reproducible.
pub fn discrete_energy(u: &GridFunction, epsilon: f64) -> Result<f64, GridError> {
    let g = u.grid();
    if g.bc() != BoundaryKind::Periodic {
        return Err(GridError::WrongBoundary { expected: BoundaryKind::Periodic });
    }
    let (nx, ny) = (g.nx(), g.ny());
    let (ihx2, ihy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut grad = 0.0;
    let mut bulk = 0.0;
    for j in 0..ny {
        let (jm, jp) = (if j == 0 { ny - 1 } else { j - 1 }, if j + 1 == ny { 0 } else { j + 1 });
        let mut grad_row = 0.0;
        let mut bulk_row = 0.0;
        for i in 0..nx {
            let (im, ip) = (if i == 0 { nx - 1 } else { i - 1 }, if i + 1 == nx { 0 } else { i + 1 });
            let v = u.get(i, j);
            let lap = (u.get(im, j) - 2.0 * v + u.get(ip, j)) * ihx2
                + (u.get(i, jm) - 2.0 * v + u.get(i, jp)) * ihy2;
            grad_row += v * lap;
            let w = 1.0 - v * v;
            bulk_row += w * w;
        }
        grad += grad_row;
        bulk += bulk_row;
    }
    let cell = g.hx() * g.hy();
    Ok(-0.5 * epsilon * epsilon * cell * grad + 0.25 * cell * bulk)
}

/// Named catalog used by the command line; `seed` feeds the random
/// initial condition of `ac_random`.
pub fn by_name(name: &str, seed: u64) -> Option<ProblemSpec> {
    match name {
        "case1" => Some(case_i()),
        "case2" => Some(case_ii()),
        "case3" => Some(case_iii()),
        "sec62" => Some(single_sine()),
        "sec63" => Some(double_pulse()),
        "ac_bubbles" => {
            Some(allen_cahn(0.02, AllenCahnInit::FourBubble, (-1.0, -1.0), (2.0, 2.0)))
        }
        "ac_random" => Some(allen_cahn(
            0.01,
            AllenCahnInit::Random { seed, offset: -0.05, amplitude: 0.1 },
            (0.0, 0.0),
            (1.0, 1.0),
        )),
        _ => None,
    }
}

/// Problem names accepted by [`by_name`].
pub const CATALOG: [&str; 7] =
    ["case1", "case2", "case3", "sec62", "sec63", "ac_bubbles", "ac_random"];

fn debug_self_check(spec: &ProblemSpec) {
    #[cfg(debug_assertions)]
    if let Some(worst) = spec.residual_check(20, 0xC0FFEE) {
        debug_assert!(worst < 1e-6, "{}: source term residual {worst:e}", spec.name);
    }
    #[cfg(not(debug_assertions))]
    let _ = spec;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn amplitudes_match_closed_forms() {
        let c1 = case_i();
        let e1 = c1.exact.as_ref().unwrap();
        // Amplitude vanishes at t = 0 and equals 7 at t = pi/2.
        assert_abs_diff_eq!(e1(0.3, 0.7, 0.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(
            e1(0.25, 0.25, std::f64::consts::FRAC_PI_2),
            7.0 * sine_mode(0.25, 0.25),
            max_relative = 1e-13
        );

        let p = single_sine();
        let e = p.exact.as_ref().unwrap();
        assert_relative_eq!(e(0.25, 0.25, std::f64::consts::FRAC_PI_2), 1.0, max_relative = 1e-13);
        assert_abs_diff_eq!((p.u0)(0.37, 0.81), 0.0, epsilon = 1e-15);

        let d = double_pulse();
        let ed = d.exact.as_ref().unwrap();
        let amp_at = |t: f64| ed(0.25, 0.25, t) / sine_mode(0.25, 0.25);
        assert_relative_eq!(amp_at(1.0), 21.0, max_relative = 1e-4);
        assert!((amp_at(2.5) - 1.0).abs() < 1e-6, "both pulses nearly vanish at t = 2.5");
    }

    #[test]
    fn manufactured_sources_satisfy_the_pde() {
        for spec in [case_i(), case_ii(), case_iii(), single_sine(), double_pulse()] {
            let worst = spec.residual_check(100, 12345).unwrap();
            println!("{}: residual {worst:e}", spec.name);
            assert!(worst < 1e-6, "{} residual {worst:e}", spec.name);
        }
    }

    #[test]
    fn four_bubble_center_value() {
        let p = allen_cahn(0.02, AllenCahnInit::FourBubble, (-1.0, -1.0), (2.0, 2.0));
        // Each factor at the origin: tanh((0.09 - 0.04) / 0.02) = tanh(2.5).
        let expect = -(2.5f64.tanh().powi(4));
        assert_relative_eq!((p.u0)(0.0, 0.0), expect, max_relative = 1e-13);
        assert_eq!(p.bc, BoundaryKind::Periodic);
        assert!(p.g.is_none());
        assert_relative_eq!(p.c, 0.0004);
    }

    #[test]
    fn random_field_is_seeded_and_bounded() {
        let p = allen_cahn(
            0.01,
            AllenCahnInit::Random { seed: 5, offset: -0.05, amplitude: 0.1 },
            (0.0, 0.0),
            (1.0, 1.0),
        );
        let q = allen_cahn(
            0.01,
            AllenCahnInit::Random { seed: 5, offset: -0.05, amplitude: 0.1 },
            (0.0, 0.0),
            (1.0, 1.0),
        );
        let g = p.grid(8).unwrap();
        let up = p.sample_u0(g);
        let uq = q.sample_u0(g);
        assert_eq!(up.values(), uq.values());
        for &v in up.values() {
            assert!((-0.05..0.05).contains(&v));
        }
        let r = allen_cahn(
            0.01,
            AllenCahnInit::Random { seed: 6, offset: -0.05, amplitude: 0.1 },
            (0.0, 0.0),
            (1.0, 1.0),
        );
        assert_ne!(r.sample_u0(g).values(), up.values());
    }

    #[test]
    fn energy_of_constant_fields() {
        let g = Grid2D::new(16, 16, 1.0, 1.0, BoundaryKind::Periodic).unwrap();
        for (a, expect) in [(1.0, 0.0), (0.0, 0.25), (-1.0, 0.0), (0.5, (1.0 - 0.25f64).powi(2) / 4.0)] {
            let u = GridFunction::constant(g, a);
            assert_abs_diff_eq!(discrete_energy(&u, 0.1).unwrap(), expect, epsilon = 1e-14);
        }
        let gd = Grid2D::new(8, 8, 1.0, 1.0, BoundaryKind::Dirichlet).unwrap();
        assert!(discrete_energy(&GridFunction::zeros(gd), 0.1).is_err());
    }

    #[test]
    fn energy_even_in_u() {
        let g = Grid2D::new(12, 12, 1.0, 1.0, BoundaryKind::Periodic).unwrap();
        let u = GridFunction::sample(g, |x, y| (TWO_PI * x).sin() * (TWO_PI * 2.0 * y).cos() * 0.7);
        let minus = u.map(|v| -v);
        let e1 = discrete_energy(&u, 0.05).unwrap();
        let e2 = discrete_energy(&minus, 0.05).unwrap();
        assert_relative_eq!(e1, e2, max_relative = 1e-13);
    }

    #[test]
    fn catalog_resolves_all_names() {
        for name in CATALOG {
            let p = by_name(name, 1).unwrap();
            assert_eq!(p.name, name);
        }
        assert!(by_name("nope", 1).is_none());
    }
}
