//! Variable time meshes, the two-level BDF convolution kernels, their
//! discrete orthogonal convolution (DOC) inverses, and step-size control.
//!
//! With step ratio `r_n = tau_n / tau_{n-1}` the kernels are
//! `b0 = (1 + 2 r_n) / (tau_n (1 + r_n))`,
//! `b1 = -r_n^2 / (tau_n (1 + r_n))` for `n >= 2`, and `b0 = 1/tau_1` for
//! the backward-Euler first step. The DOC kernels are the lower-triangular
//! inverse of that convolution structure; they are consumed by the
//! diagnostic and property-test suites, not by the steppers themselves.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Step-ratio bound under which the variable-step formula keeps its
/// stability properties (positive DOC kernels, semi-definite quadratic
/// form). Meshes used for production runs are validated against it;
/// deliberately ill-behaved meshes can still be constructed for
/// stability experiments.
pub const MAX_STEP_RATIO: f64 = 4.8645;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("need at least one step")]
    Empty,
    #[error("mesh times must be strictly increasing (violation at index {0})")]
    NotIncreasing(usize),
    #[error("step ratio {ratio} at step {step} exceeds the bound {bound}")]
    RatioTooLarge { step: usize, ratio: f64, bound: f64 },
    #[error("invalid adaptive configuration: {0}")]
    BadAdaptiveConfig(String),
    #[error("malformed mesh csv: {0}")]
    BadCsv(String),
}

/// Nonuniform partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    times: Vec<f64>,
}

impl TimeMesh {
    /// Uniform mesh with `n` steps on `[0, t_end]`.
    pub fn uniform(t_end: f64, n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::Empty);
        }
        let mut times: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
        times[n] = t_end;
        Self::from_times(times)
    }

    /// Mesh from explicit time levels starting at 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self, MeshError> {
        if times.len() < 2 {
            return Err(MeshError::Empty);
        }
        for k in 1..times.len() {
            if !(times[k] > times[k - 1]) {
                return Err(MeshError::NotIncreasing(k));
            }
        }
        Ok(Self { times })
    }

    /// Random mesh: steps proportional to independent uniform draws from
    /// `(1/MAX_STEP_RATIO, 1)`, normalized so the times sum to `t_end`
    /// exactly. Adjacent ratios are below `MAX_STEP_RATIO` by
    /// construction. Deterministic for a fixed seed (ChaCha8 keyed on the
    /// 64-bit seed, so realizations reproduce across platforms).
    pub fn random(t_end: f64, n: usize, seed: u64) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::Empty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = 1.0 / MAX_STEP_RATIO;
        let draws: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..1.0)).collect();
        let total: f64 = draws.iter().sum();
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        let mut acc = 0.0;
        for draw in &draws {
            acc += draw;
            times.push(t_end * acc / total);
        }
        times[n] = t_end; // exact endpoint
        Self::from_times(times)
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Time level `t_k`, `k = 0..=N`.
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Step `tau_k = t_k - t_{k-1}`, `k = 1..=N`.
    pub fn tau(&self, k: usize) -> f64 {
        self.times[k] - self.times[k - 1]
    }

    /// Adjacent ratio `r_k = tau_k / tau_{k-1}` for `k >= 2`; `r_1 = 0`.
    pub fn ratio(&self, k: usize) -> f64 {
        if k < 2 {
            0.0
        } else {
            self.tau(k) / self.tau(k - 1)
        }
    }

    pub fn max_ratio(&self) -> f64 {
        (2..=self.n_steps()).map(|k| self.ratio(k)).fold(0.0, f64::max)
    }

    pub fn max_tau(&self) -> f64 {
        (1..=self.n_steps()).map(|k| self.tau(k)).fold(0.0, f64::max)
    }

    /// Strict-mode validation of the ratio bound.
    pub fn validate_ratios(&self, bound: f64) -> Result<(), MeshError> {
        for k in 2..=self.n_steps() {
            let ratio = self.ratio(k);
            if ratio >= bound {
                return Err(MeshError::RatioTooLarge { step: k, ratio, bound });
            }
        }
        Ok(())
    }

    /// CSV export `k,t_k,tau_k,r_k` (row 0 carries the origin).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,t_k,tau_k,r_k")?;
        writeln!(w, "0,{},,", self.times[0])?;
        for k in 1..=self.n_steps() {
            writeln!(w, "{},{},{},{}", k, self.t(k), self.tau(k), self.ratio(k))?;
        }
        Ok(())
    }

    /// Rebuild a mesh from its CSV export (only the `t_k` column is
    /// authoritative; steps and ratios are re-derived).
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, MeshError> {
        let mut times = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line.map_err(|e| MeshError::BadCsv(e.to_string()))?;
            if ln == 0 {
                if !line.starts_with("k,t_k") {
                    return Err(MeshError::BadCsv(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let _k = fields.next();
            let t: f64 = fields
                .next()
                .ok_or_else(|| MeshError::BadCsv(format!("short row {ln}")))?
                .trim()
                .parse()
                .map_err(|e| MeshError::BadCsv(format!("row {ln}: {e}")))?;
            times.push(t);
        }
        Self::from_times(times)
    }
}

/// Per-level convolution kernels of the variable-step formula. For the
/// unified two-term form only `b0` and `b1` are nonzero; `b1` is zero at
/// the first (backward Euler) level.
#[derive(Debug, Clone)]
pub struct BdfKernels {
    b0: Vec<f64>,
    b1: Vec<f64>,
}

impl BdfKernels {
    /// `b0` at level `n` (1-based).
    pub fn b0(&self, n: usize) -> f64 {
        self.b0[n - 1]
    }

    /// `b1` at level `n` (1-based); zero for `n = 1`.
    pub fn b1(&self, n: usize) -> f64 {
        self.b1[n - 1]
    }

    pub fn len(&self) -> usize {
        self.b0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b0.is_empty()
    }
}

/// Kernels for every level of a mesh.
pub fn bdf2_kernels(mesh: &TimeMesh) -> BdfKernels {
    let n = mesh.n_steps();
    let mut b0 = Vec::with_capacity(n);
    let mut b1 = Vec::with_capacity(n);
    b0.push(1.0 / mesh.tau(1));
    b1.push(0.0);
    for k in 2..=n {
        let tau = mesh.tau(k);
        let r = mesh.ratio(k);
        b0.push((1.0 + 2.0 * r) / (tau * (1.0 + r)));
        b1.push(-(r * r) / (tau * (1.0 + r)));
    }
    BdfKernels { b0, b1 }
}

/// Lower-triangular DOC kernels: row `n` holds `theta^{(n)}_{n-m}` for
/// `m = 1..=n`, the discrete-convolution inverse of the BDF kernels.
#[derive(Debug, Clone)]
pub struct DocKernels {
    rows: Vec<Vec<f64>>,
}

impl DocKernels {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// `theta^{(n)}_{n-m}`, 1-based in both `n` and `m <= n`.
    pub fn theta(&self, n: usize, m: usize) -> f64 {
        self.rows[n - 1][m - 1]
    }

    /// Row `n` as a slice indexed by `m-1`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n - 1]
    }
}

/// All DOC rows of a kernel set; memory is O(N^2), fine at the scales the
/// diagnostics run at. Use [`doc_row`] to stream single rows instead.
pub fn doc_kernels(b: &BdfKernels) -> DocKernels {
    DocKernels { rows: (1..=b.len()).map(|n| doc_row(b, n)).collect() }
}

/// Single DOC row by the forward triangular recursion:
/// `theta^{(n)}_0 = 1 / b0^{(n)}` and
/// `theta^{(n)}_{n-k} = -theta^{(n)}_{n-k-1} b1^{(k+1)} / b0^{(k)}`.
pub fn doc_row(b: &BdfKernels, n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[n - 1] = 1.0 / b.b0(n); // m = n
    for k in (1..n).rev() {
        row[k - 1] = -row[k] * b.b1(k + 1) / b.b0(k);
    }
    row
}

/// Controller configuration for adaptive step selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub eta: f64,
    pub r_max: f64,
}

impl AdaptiveConfig {
    pub fn new(tau_min: f64, tau_max: f64, eta: f64, r_max: f64) -> Result<Self, MeshError> {
        if !(tau_min > 0.0 && tau_min <= tau_max) {
            return Err(MeshError::BadAdaptiveConfig(format!(
                "need 0 < tau_min <= tau_max, got {tau_min} and {tau_max}"
            )));
        }
        if !(eta >= 0.0) {
            return Err(MeshError::BadAdaptiveConfig(format!("eta must be >= 0, got {eta}")));
        }
        if !(r_max > 1.0 && r_max < MAX_STEP_RATIO) {
            return Err(MeshError::BadAdaptiveConfig(format!(
                "need 1 < r_max < {MAX_STEP_RATIO}, got {r_max}"
            )));
        }
        Ok(Self { tau_min, tau_max, eta, r_max })
    }
}

/// Next step from the current step and the squared change indicator:
/// `min(max(tau_min, tau_max / sqrt(1 + eta * indicator_sq)), r_max tau_n)`.
pub fn adaptive_next(tau_n: f64, indicator_sq: f64, cfg: &AdaptiveConfig) -> f64 {
    assert!(tau_n > 0.0, "current step must be positive");
    assert!(indicator_sq >= 0.0, "indicator must be nonnegative");
    let wanted = cfg.tau_max / (1.0 + cfg.eta * indicator_sq).sqrt();
    wanted.max(cfg.tau_min).min(cfg.r_max * tau_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn uniform_kernels() {
        let mesh = TimeMesh::uniform(4.0, 4).unwrap();
        let b = bdf2_kernels(&mesh);
        assert_relative_eq!(b.b0(1), 1.0);
        assert_eq!(b.b1(1), 0.0);
        for n in 2..=4 {
            assert_relative_eq!(b.b0(n), 1.5, max_relative = 1e-14);
            assert_relative_eq!(b.b1(n), -0.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn first_level_kernel_is_reciprocal_step() {
        let mesh = TimeMesh::from_times(vec![0.0, 0.25, 0.5]).unwrap();
        let b = bdf2_kernels(&mesh);
        assert_relative_eq!(b.b0(1), 4.0);
    }

    #[test]
    fn kernels_at_ratio_two() {
        let mesh = TimeMesh::from_times(vec![0.0, 0.1, 0.3]).unwrap();
        let b = bdf2_kernels(&mesh);
        assert_relative_eq!(mesh.ratio(2), 2.0, max_relative = 1e-13);
        assert_relative_eq!(b.b0(2), 25.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(b.b1(2), -20.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn kernels_differentiate_linear_sequences_exactly() {
        // b0 tau_n + b1 tau_{n-1} = 1 at every level >= 2.
        let mesh = TimeMesh::random(2.0, 40, 3).unwrap();
        let b = bdf2_kernels(&mesh);
        for n in 2..=mesh.n_steps() {
            assert_abs_diff_eq!(b.b0(n) * mesh.tau(n) + b.b1(n) * mesh.tau(n - 1), 1.0, epsilon = 1e-12);
            assert!(b.b0(n) > 0.0 && b.b1(n) <= 0.0);
        }
    }

    #[test]
    fn doc_first_rows_by_hand() {
        let mesh = TimeMesh::uniform(3.0, 3).unwrap();
        let b = bdf2_kernels(&mesh);
        let d = doc_kernels(&b);
        // n = 1: single-term orthogonality gives theta = tau_1.
        assert_relative_eq!(d.theta(1, 1), 1.0, max_relative = 1e-14);
        // n = 2, uniform unit steps: 2/3 and 1/3, summing to tau_2.
        assert_relative_eq!(d.theta(2, 2), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(d.theta(2, 1), 1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn doc_orthogonality_positivity_and_row_sums() {
        let mesh = TimeMesh::random(1.0, 50, 11).unwrap();
        mesh.validate_ratios(MAX_STEP_RATIO).unwrap();
        let b = bdf2_kernels(&mesh);
        let d = doc_kernels(&b);
        let n_max = mesh.n_steps();
        for n in 1..=n_max {
            let mut sum = 0.0;
            for m in 1..=n {
                assert!(d.theta(n, m) > 0.0, "theta({n},{m}) should be positive");
                sum += d.theta(n, m);
            }
            assert_abs_diff_eq!(sum, mesh.tau(n), epsilon = 1e-12);
            for k in 1..=n {
                let mut acc = 0.0;
                for m in k..=n {
                    let b_mk = match m - k {
                        0 => b.b0(m),
                        1 => b.b1(m),
                        _ => 0.0,
                    };
                    acc += d.theta(n, m) * b_mk;
                }
                let delta = if n == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(acc, delta, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn random_mesh_contract() {
        for seed in [0u64, 1, 42] {
            let mesh = TimeMesh::random(std::f64::consts::PI, 100, seed).unwrap();
            assert_eq!(mesh.t(0), 0.0);
            assert_eq!(mesh.t_end(), std::f64::consts::PI);
            let sum: f64 = (1..=100).map(|k| mesh.tau(k)).sum();
            assert_abs_diff_eq!(sum, std::f64::consts::PI, epsilon = 1e-12);
            assert!(mesh.max_ratio() < MAX_STEP_RATIO);
            let again = TimeMesh::random(std::f64::consts::PI, 100, seed).unwrap();
            assert_eq!(mesh, again);
        }
    }

    #[test]
    fn mesh_validation_and_errors() {
        assert_eq!(TimeMesh::uniform(1.0, 0).unwrap_err(), MeshError::Empty);
        assert_eq!(
            TimeMesh::from_times(vec![0.0, 0.5, 0.5]).unwrap_err(),
            MeshError::NotIncreasing(2)
        );
        // Ratio 9 mesh is constructible but fails strict validation.
        let wild = TimeMesh::from_times(vec![0.0, 0.1, 1.0]).unwrap();
        assert!(matches!(
            wild.validate_ratios(MAX_STEP_RATIO),
            Err(MeshError::RatioTooLarge { step: 2, .. })
        ));
    }

    #[test]
    fn adaptive_next_examples() {
        let cfg = AdaptiveConfig::new(0.01, 0.2, 500.0, 4.8).unwrap();
        // No change detected: step opens up to tau_max (ratio permitting).
        assert_relative_eq!(adaptive_next(0.1, 0.0, &cfg), 0.2);
        // Violent change: clamps to tau_min.
        assert_relative_eq!(adaptive_next(0.1, 1e6, &cfg), 0.01);
        // Ratio cap binds after a tiny step.
        let cfg2 = AdaptiveConfig::new(0.001, 1.0, 500.0, 4.8).unwrap();
        assert_relative_eq!(adaptive_next(0.001, 0.0, &cfg2), 0.0048, max_relative = 1e-12);
    }

    #[test]
    fn adaptive_config_validation() {
        assert!(AdaptiveConfig::new(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(AdaptiveConfig::new(0.1, 0.05, 1.0, 2.0).is_err());
        assert!(AdaptiveConfig::new(0.01, 1.0, -1.0, 2.0).is_err());
        assert!(AdaptiveConfig::new(0.01, 1.0, 1.0, 5.0).is_err());
        assert!(AdaptiveConfig::new(0.01, 1.0, 0.0, 4.8).is_ok());
    }

    #[test]
    fn csv_roundtrip() {
        let mesh = TimeMesh::random(2.5, 12, 9).unwrap();
        let mut buf = Vec::new();
        mesh.write_csv(&mut buf).unwrap();
        let back = TimeMesh::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(mesh, back);
    }
}
