//! Dynamic system partitioning: substorages and subthroughflows by input source.
//!
//! The decomposed state holds `n(n+1)` substorages laid out column-major by
//! subsystem: entries `[k*n, (k+1)*n)` are subsystem `k`, with `k = 0` the
//! initial subsystem carrying the initial stocks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{CompartmentalModel, FlowSnapshot, ModelError, StorageIntensities};
use crate::odeint::{integrate, LinearInput, LinearSystem, OdeConfig, OdeError, Trajectory};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("subsystem index {k} out of range 0..={n}")]
    SubsystemOutOfRange { k: usize, n: usize },
    #[error("model is not linear: {0}")]
    NotLinear(String),
}

/// Substorages at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedState {
    pub x0: DVector<f64>,
    /// Column `k-1` is subsystem `k`.
    pub x_sub: DMatrix<f64>,
}

impl DecomposedState {
    pub fn from_slice(n: usize, s: &[f64]) -> Self {
        DecomposedState {
            x0: DVector::from_column_slice(&s[..n]),
            x_sub: DMatrix::from_column_slice(n, n, &s[n..n * (n + 1)]),
        }
    }

    pub fn aggregate(&self) -> DVector<f64> {
        &self.x0 + self.x_sub.column_sum()
    }

    /// Column `k` of `[x0 | X]`.
    pub fn column(&self, k: usize) -> DVector<f64> {
        if k == 0 {
            self.x0.clone()
        } else {
            self.x_sub.column(k - 1).into_owned()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubthroughflowSet {
    /// `Ť = 𝒵 + F𝒳⁻¹X`
    pub t_in: DMatrix<f64>,
    /// `T̂ = 𝒯𝒳⁻¹X`
    pub t_out: DMatrix<f64>,
    pub t_net: DMatrix<f64>,
    /// `T̃ = Ť − 𝒵`
    pub t_tilde: DMatrix<f64>,
    pub tau0_in: DVector<f64>,
    pub tau0_out: DVector<f64>,
    pub diag_tilde: DVector<f64>,
    pub diag_in: DVector<f64>,
    pub diag_out: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct IntensitySet {
    pub a: DMatrix<f64>,
    pub qx: DMatrix<f64>,
    pub qtau: DMatrix<f64>,
    /// Diagonal of the residence time matrix; `+∞` where `τ̂_i = 0`.
    pub r: DVector<f64>,
    pub r_inv: DVector<f64>,
    /// Compartments with zero outward throughflow.
    pub zero_throughflow: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SubsystemMatrices {
    pub f_k: DMatrix<f64>,
    pub x_k: DMatrix<f64>,
    pub z_k: DMatrix<f64>,
    pub y_k: DMatrix<f64>,
    pub t_in_k: DMatrix<f64>,
    pub t_out_k: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_k: DMatrix<f64>,
}

fn intensity_set(si: &StorageIntensities) -> IntensitySet {
    let n = si.r_inv.len();
    let snap = &si.snapshot;
    let mut qtau = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    let mut zero = Vec::new();
    for j in 0..n {
        let out = snap.tau_out[j];
        if out > 0.0 {
            for i in 0..n {
                qtau[(i, j)] = snap.f[(i, j)] / out;
            }
            r[j] = 1.0 / si.r_inv[j];
        } else {
            r[j] = f64::INFINITY;
            zero.push(j);
        }
    }
    let a = &si.qx - DMatrix::from_diagonal(&si.r_inv);
    IntensitySet {
        a,
        qx: si.qx.clone(),
        qtau,
        r,
        r_inv: si.r_inv.clone(),
        zero_throughflow: zero,
    }
}

/// `A`, `Qx`, `Qτ` and `R` of the model at `(t, x)`.
pub fn intensities(model: &CompartmentalModel, t: f64, x: &[f64]) -> Result<IntensitySet, ModelError> {
    Ok(intensity_set(&model.storage_intensities(t, x)?))
}

/// Writes the decomposed right-hand side into `out` and returns the
/// intensities used, so callers can extend the system.
pub fn decomposed_rhs(
    model: &CompartmentalModel,
    t: f64,
    s: &[f64],
    out: &mut [f64],
) -> Result<StorageIntensities, ModelError> {
    let n = model.n;
    let mut x = vec![0.0; n];
    for k in 0..=n {
        for i in 0..n {
            x[i] += s[k * n + i];
        }
    }
    let si = model.storage_intensities(t, &x)?;
    for k in 0..=n {
        let col = &s[k * n..(k + 1) * n];
        for i in 0..n {
            let mut v = -si.r_inv[i] * col[i];
            for (j, c) in col.iter().enumerate() {
                v += si.qx[(i, j)] * c;
            }
            if k >= 1 && i == k - 1 {
                v += si.snapshot.z[i];
            }
            out[k * n + i] = v;
        }
    }
    Ok(si)
}

/// Initial decomposed state: `x0 = x_init`, `X = 0`.
pub fn initial_decomposed(model: &CompartmentalModel) -> Vec<f64> {
    let n = model.n;
    let mut s = vec![0.0; n * (n + 1)];
    s[..n].copy_from_slice(model.x_init.as_slice());
    s
}

/// Integrated decomposed system.
#[derive(Debug, Clone)]
pub struct PartitionTrajectory {
    pub model: Arc<CompartmentalModel>,
    pub traj: Trajectory,
    pub config: OdeConfig,
}

/// Integrates the `n(n+1)` decomposed equations over `[t0, t_end]`.
pub fn decompose(
    model: &CompartmentalModel,
    t0: f64,
    t_end: f64,
    config: &OdeConfig,
) -> Result<PartitionTrajectory, PartitionError> {
    let model = Arc::new(model.clone());
    let m = model.clone();
    let traj = integrate(
        move |t, s, out| {
            decomposed_rhs(&m, t, s, out)?;
            Ok(())
        },
        &initial_decomposed(&model),
        t0,
        t_end,
        config,
    )?;
    Ok(PartitionTrajectory {
        model,
        traj,
        config: *config,
    })
}

impl PartitionTrajectory {
    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn t0(&self) -> f64 {
        self.traj.t0()
    }

    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn state(&self, t: f64) -> Result<DecomposedState, PartitionError> {
        let s = self.traj.interpolate(t)?;
        Ok(DecomposedState::from_slice(self.n(), &s))
    }

    pub fn aggregate(&self, t: f64) -> Result<DVector<f64>, PartitionError> {
        Ok(self.state(t)?.aggregate())
    }

    pub fn snapshot(&self, t: f64) -> Result<FlowSnapshot, PartitionError> {
        let x = self.aggregate(t)?;
        Ok(self.model.evaluate_flows(t, x.as_slice())?)
    }

    fn storage_intensities(&self, t: f64) -> Result<(DecomposedState, StorageIntensities), PartitionError> {
        let st = self.state(t)?;
        let x = st.aggregate();
        let si = self.model.storage_intensities(t, x.as_slice())?;
        Ok((st, si))
    }

    pub fn intensities(&self, t: f64) -> Result<IntensitySet, PartitionError> {
        let (_, si) = self.storage_intensities(t)?;
        Ok(intensity_set(&si))
    }

    pub fn subthroughflows(&self, t: f64) -> Result<SubthroughflowSet, PartitionError> {
        let (st, si) = self.storage_intensities(t)?;
        Ok(subthroughflow_set(&st, &si))
    }

    /// Everything the diact computations need at one instant.
    pub fn frame(&self, t: f64) -> Result<Frame, PartitionError> {
        let (st, si) = self.storage_intensities(t)?;
        let sub = subthroughflow_set(&st, &si);
        Ok(Frame {
            t,
            state: st,
            intensities: si,
            sub,
        })
    }

    pub fn subsystem_matrices(&self, t: f64, k: usize) -> Result<SubsystemMatrices, PartitionError> {
        let n = self.n();
        if k > n {
            return Err(PartitionError::SubsystemOutOfRange { k, n });
        }
        let (st, si) = self.storage_intensities(t)?;
        let snap = &si.snapshot;
        let x = st.aggregate();
        let col = st.column(k);
        let x_k = DMatrix::from_diagonal(&col);
        let f_k = &si.qx * &x_k;
        let mut zk = DVector::zeros(n);
        if k >= 1 {
            zk[k - 1] = snap.z[k - 1];
        }
        let z_k = DMatrix::from_diagonal(&zk);
        let y_k = DMatrix::from_diagonal(&si.y_per_x.component_mul(&col));
        let t_in_k = &z_k + DMatrix::from_diagonal(&f_k.column_sum());
        let t_out_k = DMatrix::from_diagonal(&si.r_inv.component_mul(&col));
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            if x[i] > si.eps {
                for c in 0..n {
                    d[(i, c)] = st.x_sub[(i, c)] / x[i];
                }
            }
        }
        let dk: DVector<f64> = DVector::from_fn(n, |i, _| if x[i] > si.eps { col[i] / x[i] } else { 0.0 });
        Ok(SubsystemMatrices {
            f_k,
            x_k,
            z_k,
            y_k,
            t_in_k,
            t_out_k,
            d,
            d_k: DMatrix::from_diagonal(&dk),
        })
    }
}

/// Decomposed state, intensities and subthroughflows at one time.
#[derive(Debug, Clone)]
pub struct Frame {
    pub t: f64,
    pub state: DecomposedState,
    pub intensities: StorageIntensities,
    pub sub: SubthroughflowSet,
}

impl Frame {
    pub fn snapshot(&self) -> &FlowSnapshot {
        &self.intensities.snapshot
    }
}

pub(crate) fn subthroughflow_set(st: &DecomposedState, si: &StorageIntensities) -> SubthroughflowSet {
    let z = DMatrix::from_diagonal(&si.snapshot.z);
    let t_tilde = &si.qx * &st.x_sub;
    let t_in = &z + &t_tilde;
    let rinv = DMatrix::from_diagonal(&si.r_inv);
    let t_out = &rinv * &st.x_sub;
    let tau0_in = &si.qx * &st.x0;
    let tau0_out = si.r_inv.component_mul(&st.x0);
    SubthroughflowSet {
        t_net: &t_in - &t_out,
        diag_tilde: t_tilde.diagonal(),
        diag_in: t_in.diagonal(),
        diag_out: t_out.diagonal(),
        t_in,
        t_out,
        t_tilde,
        tau0_in,
        tau0_out,
    }
}

/// Constant-coefficient form of a linear model with state-independent inputs.
pub fn linear_system(model: &CompartmentalModel) -> Result<LinearSystem, PartitionError> {
    let n = model.n;
    let ones = vec![1.0; n];
    let probe: Vec<f64> = (0..n).map(|i| 0.5 + 0.37 * (i as f64 + 1.0)).collect();
    let a1 = intensities(model, 0.0, &ones)?.a;
    let a2 = intensities(model, 1.7, &probe)?.a;
    if (&a1 - &a2).abs().max() > 1e-12 * a1.abs().max().max(1.0) {
        return Err(PartitionError::NotLinear(
            "flow intensities depend on state or time".into(),
        ));
    }
    if model.input_exprs.iter().any(|e| e.depends_on_state()) {
        return Err(PartitionError::NotLinear("inputs depend on state".into()));
    }
    let input = if model.input_exprs.iter().any(|e| e.depends_on_time()) {
        let m = model.clone();
        LinearInput::TimeVarying(Arc::new(move |t| {
            m.inputs(t, &vec![0.0; m.n])
                .unwrap_or_else(|_| DVector::from_element(m.n, f64::NAN))
        }))
    } else {
        LinearInput::Constant(model.inputs(0.0, &ones)?)
    };
    Ok(LinearSystem::new(a1, input)?)
}
