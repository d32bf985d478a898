use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{integrate, OdeConfig, OdeError};

const COND_LIMIT: f64 = 1e8;

/// Real eigendecomposition `A = Ω Λ Ω⁻¹`, when it exists and is well conditioned.
struct Eigen {
    omega: DMatrix<f64>,
    omega_inv: DMatrix<f64>,
    lambda: Vec<f64>,
}

fn real_eigen(a: &DMatrix<f64>) -> Option<Eigen> {
    let n = a.nrows();
    if n == 0 {
        return None;
    }
    let ev = a.clone().complex_eigenvalues();
    let mut lambda = Vec::with_capacity(n);
    for c in ev.iter() {
        if c.im.abs() > 1e-12 * c.re.abs().max(1.0) {
            return None;
        }
        lambda.push(c.re);
    }
    let mut omega = DMatrix::zeros(n, n);
    for (k, &l) in lambda.iter().enumerate() {
        let shifted = a - DMatrix::identity(n, n) * l;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v = v_t.row(imin).transpose();
        omega.set_column(k, &v);
    }
    let sv = omega.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || smax / smin > COND_LIMIT {
        return None;
    }
    let omega_inv = omega.clone().try_inverse()?;
    Some(Eigen {
        omega,
        omega_inv,
        lambda,
    })
}

fn with_spectral<F: Fn(f64) -> f64>(e: &Eigen, f: F) -> DMatrix<f64> {
    let d = DVector::from_iterator(e.lambda.len(), e.lambda.iter().map(|&l| f(l)));
    &e.omega * DMatrix::from_diagonal(&d) * &e.omega_inv
}

/// Matrix exponential. Uses the eigendecomposition when `A` has real
/// eigenvalues and a well-conditioned eigenvector matrix, otherwise
/// scaling and squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    match real_eigen(a) {
        Some(e) => with_spectral(&e, f64::exp),
        None => a.clone().exp(),
    }
}

/// `S(τ) = ∫₀^τ e^{sA} ds`.
pub fn scaled_substorage(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if tau == 0.0 {
        return DMatrix::zeros(n, n);
    }
    if let Some(e) = real_eigen(a) {
        return with_spectral(&e, |l| if l == 0.0 { tau } else { (l * tau).exp_m1() / l });
    }
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    block
        .view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * tau));
    let e = block.exp();
    e.view((0, n), (n, n)).into_owned()
}

/// Environmental input for a linear system.
#[derive(Clone)]
pub enum LinearInput {
    Constant(DVector<f64>),
    TimeVarying(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl fmt::Debug for LinearInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinearInput::Constant(z) => f.debug_tuple("Constant").field(z).finish(),
            LinearInput::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

/// `Ẋ = 𝒵(t) + A X`, `ẋ₀ = A x₀` with constant `A`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub input: LinearInput,
}

impl LinearSystem {
    /// Checks the compartmental sign pattern of `A`.
    pub fn new(a: DMatrix<f64>, input: LinearInput) -> Result<Self, OdeError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(OdeError::InvalidSystem("A must be square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                if (i == j && v > 0.0) || (i != j && v < 0.0) {
                    return Err(OdeError::InvalidSystem(format!(
                        "A[{},{}] = {v} violates the compartmental sign pattern",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if let LinearInput::Constant(z) = &input {
            if z.len() != n {
                return Err(OdeError::InvalidSystem("input length differs from A".into()));
            }
        }
        Ok(LinearSystem { a, input })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub x_sub: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LinearSolution {
    pub fn aggregate(&self) -> DVector<f64> {
        &self.x0 + self.x_sub.column_sum()
    }
}

/// Substorage matrix and initial-subsystem vector at `t`.
pub fn linear_solution(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    t0: f64,
    t: f64,
    cfg: &OdeConfig,
) -> Result<LinearSolution, OdeError> {
    let n = sys.n();
    let tau = t - t0;
    if tau < 0.0 {
        return Err(OdeError::InvalidSpan { t0, t1: t });
    }
    let propagator = expm(&(&sys.a * tau));
    let x0_t = &propagator * x0;
    if tau == 0.0 {
        return Ok(LinearSolution {
            x_sub: DMatrix::zeros(n, n),
            x0: x0_t,
        });
    }
    if let LinearInput::Constant(z) = &sys.input {
        if let Some(inv) = invert_checked(&sys.a) {
            let x_sub = inv * (propagator - DMatrix::identity(n, n)) * DMatrix::from_diagonal(z);
            return Ok(LinearSolution { x_sub, x0: x0_t });
        }
    }
    let a = sys.a.clone();
    let input = sys.input.clone();
    let traj = integrate(
        move |s, y, dy| {
            let x = DMatrix::from_column_slice(n, n, y);
            let z = match &input {
                LinearInput::Constant(z) => z.clone(),
                LinearInput::TimeVarying(f) => f(s),
            };
            let d = &a * x + DMatrix::from_diagonal(&z);
            dy.copy_from_slice(d.as_slice());
            Ok(())
        },
        &vec![0.0; n * n],
        t0,
        t,
        cfg,
    )?;
    Ok(LinearSolution {
        x_sub: DMatrix::from_column_slice(n, n, traj.final_state()),
        x0: x0_t,
    })
}

fn invert_checked(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sv = a.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max().max(1e-300) {
        return None;
    }
    a.clone().try_inverse()
}
