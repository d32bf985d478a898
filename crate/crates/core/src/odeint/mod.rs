//! Initial-value integration and closed-form linear solutions.

mod dopri;
mod linear;

use nalgebra::DMatrix;
use thiserror::Error;

pub use linear::{expm, linear_solution, scaled_substorage, LinearInput, LinearSolution, LinearSystem};

pub type FieldError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t={t} (h={h:e})")]
    StepUnderflow { t: f64, h: f64, state: Vec<f64> },
    #[error("non-finite derivative in component {component} at t={t}")]
    NonFinite { t: f64, component: usize, state: Vec<f64> },
    #[error("vector field failed at t={t}: {source}")]
    Field {
        t: f64,
        #[source]
        source: FieldError,
    },
    #[error("step budget of {steps} exhausted at t={t}")]
    TooManySteps { t: f64, steps: usize },
    #[error("t={t} outside trajectory span [{t0}, {t1}]")]
    OutOfSpan { t: f64, t0: f64, t1: f64 },
    #[error("invalid time span [{t0}, {t1}]")]
    InvalidSpan { t0: f64, t1: f64 },
    #[error("invalid linear system: {0}")]
    InvalidSystem(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub h0: Option<f64>,
    /// Clamp components in `(−atol, 0)` to zero before each field evaluation.
    pub clamp_negative: bool,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
            h0: None,
            clamp_negative: true,
            max_steps: 2_000_000,
        }
    }
}

impl OdeConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        OdeConfig {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Accepted steps with their dense-output coefficients.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    dense: Vec<f64>,
    pub stats: OdeStats,
}

impl Trajectory {
    fn new(dim: usize, t0: f64, y0: &[f64]) -> Self {
        Trajectory {
            dim,
            times: vec![t0],
            states: y0.to_vec(),
            dense: Vec::new(),
            stats: OdeStats::default(),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], rc: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.dense.extend_from_slice(rc);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// State at knot `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = 1e-12 * (1.0 + t.abs());
        t >= self.t0() - tol && t <= self.t_end() + tol
    }

    /// Dense-output value at `t`. Knot times return the stored state exactly.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.dim];
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        if !self.contains(t) {
            return Err(OdeError::OutOfSpan {
                t,
                t0: self.t0(),
                t1: self.t_end(),
            });
        }
        let t = t.clamp(self.t0(), self.t_end());
        match self.times.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(k) => out.copy_from_slice(self.state(k)),
            Err(k) => {
                // times[k-1] < t < times[k]
                let seg = k - 1;
                let (ta, tb) = (self.times[seg], self.times[k]);
                let theta = (t - ta) / (tb - ta);
                let n = self.dim;
                dopri::dense_eval(&self.dense[seg * 5 * n..(seg + 1) * 5 * n], n, theta, out);
            }
        }
        Ok(())
    }
}

/// Integrates `ẏ = field(t, y)` from `t0` to `t_end`.
///
/// The callback writes the derivative into its third argument.
pub fn integrate<F>(field: F, y0: &[f64], t0: f64, t_end: f64, cfg: &OdeConfig) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), FieldError>,
{
    if !(t0.is_finite() && t_end.is_finite()) || t_end < t0 {
        return Err(OdeError::InvalidSpan { t0, t1: t_end });
    }
    dopri::integrate(field, y0, t0, t_end, cfg)
}

/// Matrix-valued trajectory stored column-major.
#[derive(Debug, Clone)]
pub struct MatrixTrajectory {
    pub rows: usize,
    pub cols: usize,
    pub inner: Trajectory,
}

impl MatrixTrajectory {
    pub fn at(&self, t: f64) -> Result<DMatrix<f64>, OdeError> {
        let v = self.inner.interpolate(t)?;
        Ok(DMatrix::from_column_slice(self.rows, self.cols, &v))
    }
}

/// Solves `V̇ = A(t) V`, `V(t0) = I`.
pub fn fundamental_matrix<A>(a: A, n: usize, t0: f64, t_end: f64, cfg: &OdeConfig) -> Result<MatrixTrajectory, OdeError>
where
    A: Fn(f64) -> DMatrix<f64>,
{
    let id = DMatrix::<f64>::identity(n, n);
    let mut c = *cfg;
    // Propagator entries may legitimately be negative for non-compartmental A.
    c.clamp_negative = false;
    let inner = integrate(
        |t, y, dy| {
            let v = DMatrix::from_column_slice(n, n, y);
            let d = a(t) * v;
            dy.copy_from_slice(d.as_slice());
            Ok(())
        },
        id.as_slice(),
        t0,
        t_end,
        &c,
    )?;
    Ok(MatrixTrajectory {
        rows: n,
        cols: n,
        inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponential_decay() {
        let tr = integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            &[1.0],
            0.0,
            1.0,
            &OdeConfig::default(),
        )
        .unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.t_end(), 1.0);
    }

    #[test]
    fn knots_are_exact_and_span_checked() {
        let tr = integrate(
            |t, _, dy| {
                dy[0] = t.cos();
                Ok(())
            },
            &[0.0],
            0.0,
            5.0,
            &OdeConfig::default(),
        )
        .unwrap();
        for k in 0..tr.len() {
            assert_eq!(tr.interpolate(tr.times()[k]).unwrap(), tr.state(k));
        }
        assert!(matches!(tr.interpolate(6.0), Err(OdeError::OutOfSpan { .. })));
    }

    #[test]
    fn non_finite_and_underflow_errors() {
        let r = integrate(
            |_, y, dy| {
                dy[0] = 1.0 / (1.0 - y[0]);
                Ok(())
            },
            &[0.0],
            0.0,
            1.0,
            &OdeConfig::default(),
        );
        assert!(matches!(
            r,
            Err(OdeError::StepUnderflow { .. }) | Err(OdeError::NonFinite { .. })
        ));
        let r = integrate(
            |_, _, dy| {
                dy[0] = f64::NAN;
                Ok(())
            },
            &[0.0],
            0.0,
            1.0,
            &OdeConfig::default(),
        );
        assert!(matches!(r, Err(OdeError::NonFinite { component: 0, .. })));
    }

    #[test]
    fn clamp_applies_before_evaluation() {
        let mut seen_negative = false;
        let cfg = OdeConfig::default();
        let _ = integrate(
            |_, y, dy| {
                if y[0] < 0.0 && y[0] > -cfg.atol {
                    seen_negative = true;
                }
                dy[0] = 0.0;
                Ok(())
            },
            &[-1e-11],
            0.0,
            1.0,
            &cfg,
        )
        .unwrap();
        assert!(!seen_negative);
    }

    #[test]
    fn fundamental_matrix_cases() {
        let cfg = OdeConfig::default();
        let v = fundamental_matrix(|_| DMatrix::zeros(2, 2), 2, 0.0, 3.0, &cfg).unwrap();
        assert_eq!(v.at(2.0).unwrap(), DMatrix::identity(2, 2));

        let a = DMatrix::from_row_slice(2, 2, &[-5.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, -7.0 / 3.0]);
        let v = fundamental_matrix(|_| a.clone(), 2, 0.0, 5.0, &cfg).unwrap();
        let e1 = (-1.0f64).exp();
        let e3 = (-3.0f64).exp();
        let m = v.at(1.0).unwrap();
        assert!((m[(0, 0)] - (2.0 * e1 + e3) / 3.0).abs() < 1e-8);
        assert!((m[(0, 0)] - 0.261849).abs() < 1e-6);
        assert!((m[(0, 1)] - (e1 - e3) / 3.0).abs() < 1e-8);
        assert!((m[(1, 0)] - (2.0 * e1 - 2.0 * e3) / 3.0).abs() < 1e-8);
        assert!((m[(1, 1)] - (e1 + 2.0 * e3) / 3.0).abs() < 1e-8);
        for &t in &[0.5, 1.0, 2.5, 5.0] {
            let m = v.at(t).unwrap();
            for j in 0..2 {
                let s = m.column(j).sum();
                assert!((0.0..=1.0 + 1e-9).contains(&s));
                assert!(m.column(j).iter().all(|&x| x >= -1e-12));
            }
        }

        let v = fundamental_matrix(|_| DMatrix::from_element(1, 1, -0.7), 1, 1.0, 3.0, &cfg).unwrap();
        assert!((v.at(3.0).unwrap()[(0, 0)] - (-1.4f64).exp()).abs() < 1e-8);
    }

    fn lotka_like(_: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        dy[0] = y[0] * (1.0 - y[1]);
        dy[1] = y[1] * (y[0] - 1.0);
        Ok(())
    }

    #[test]
    fn dense_output_matches_rerun() {
        // Re-run with a step cap at half the typical size as the oracle.
        let cfg = OdeConfig::default();
        let tr = integrate(lotka_like, &[1.5, 0.5], 0.0, 10.0, &cfg).unwrap();
        let mean_h = 10.0 / (tr.len() - 1) as f64;
        let fine = OdeConfig {
            max_step: mean_h / 2.0,
            ..cfg
        };
        let tr2 = integrate(lotka_like, &[1.5, 0.5], 0.0, 10.0, &fine).unwrap();
        let mut rng_t = 0.123456789f64;
        for _ in 0..100 {
            rng_t = (rng_t * 9301.0 + 0.49297).fract();
            let t = rng_t * 10.0;
            let a = tr.interpolate(t).unwrap();
            let b = tr2.interpolate(t).unwrap();
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-6, "t={t} {a:?} {b:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn linear_scalar_matches_closed_form(a in -3.0f64..0.5, y0 in 0.1f64..5.0, t in 0.1f64..4.0) {
            let tr = integrate(|_, y, dy| { dy[0] = a * y[0]; Ok(()) }, &[y0], 0.0, t, &OdeConfig::default()).unwrap();
            let exact = y0 * (a * t).exp();
            prop_assert!((tr.final_state()[0] - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }
}
