//! Steady-state network analysis: static partitioning, cumulative flow and
//! storage distribution matrices, and their output-oriented duals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{CompartmentalModel, ModelError};
use crate::odeint::{integrate, OdeConfig, OdeError};
use crate::pathflow::{PathNode, SubflowPath};

#[derive(Debug, Error)]
pub enum StaticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("steady state not found (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("steady state has negative component {index} = {value}")]
    Negative { index: usize, value: f64 },
    #[error("compartment {0} has zero throughflow")]
    ZeroThroughflow(usize),
    #[error("{0} is singular; the system is not dissipative")]
    Singular(&'static str),
    #[error("output matrix is singular at compartment {0}")]
    SingularOutput(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Horizon of the integration fallback.
    pub horizon: f64,
    /// Time at which inputs are evaluated.
    pub t: f64,
    pub ode: OdeConfig,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 40,
            horizon: 200.0,
            t: 0.0,
            ode: OdeConfig::default(),
        }
    }
}

fn residual(model: &CompartmentalModel, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    model.rhs(t, x.as_slice())
}

fn newton(
    model: &CompartmentalModel,
    guess: &DVector<f64>,
    cfg: &SteadyConfig,
) -> Result<Option<DVector<f64>>, ModelError> {
    let n = model.n;
    let mut x = guess.clone();
    let mut f = residual(model, cfg.t, &x)?;
    for _ in 0..cfg.max_iter {
        let norm = f.amax();
        if norm <= cfg.tol {
            return Ok(Some(x));
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let fp = residual(model, cfg.t, &xp)?;
            jac.set_column(j, &((fp - &f) / h));
        }
        let Some(step) = jac.lu().solve(&(-&f)) else {
            return Ok(None);
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = &x + &step * lambda;
            if trial.iter().all(|v| *v >= 0.0) {
                if let Ok(ft) = residual(model, cfg.t, &trial) {
                    if ft.amax() < norm {
                        x = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
    }
    Ok((f.amax() <= cfg.tol).then_some(x))
}

/// Damped Newton on the aggregate system, with a long-time integration
/// fallback when Newton stalls.
pub fn find_steady_state(
    model: &CompartmentalModel,
    guess: &DVector<f64>,
    cfg: &SteadyConfig,
) -> Result<DVector<f64>, StaticError> {
    let x = match newton(model, guess, cfg)? {
        Some(x) => x,
        None => {
            let m = model.clone();
            let t = cfg.t;
            let traj = integrate(
                move |_, x, dx| {
                    let r = m.rhs(t, x)?;
                    dx.copy_from_slice(r.as_slice());
                    Ok(())
                },
                guess.as_slice(),
                0.0,
                cfg.horizon,
                &cfg.ode,
            )?;
            let start = DVector::from_column_slice(traj.final_state());
            match newton(model, &start, cfg)? {
                Some(x) => x,
                None => {
                    return Err(StaticError::NoConvergence {
                        residual: residual(model, cfg.t, &start)?.amax(),
                    })
                }
            }
        }
    };
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(StaticError::Negative { index, value });
    }
    Ok(x)
}

/// Output-oriented counterparts.
#[derive(Debug, Clone)]
pub struct OutputOriented {
    pub n_bar: DMatrix<f64>,
    pub s_bar: DMatrix<f64>,
    pub x_bar: DVector<f64>,
    /// `X̄ = S̄𝒴`
    pub x_sub_bar: DMatrix<f64>,
    /// `T̄ = N̄𝒴`
    pub t_sub_bar: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct StaticSolution {
    pub x_ss: DVector<f64>,
    pub f: DMatrix<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    /// Throughflow vector.
    pub tau: DVector<f64>,
    pub x_sub: DMatrix<f64>,
    pub t_sub: DMatrix<f64>,
    pub n_mat: DMatrix<f64>,
    pub s_mat: DMatrix<f64>,
    pub r: DVector<f64>,
    pub a: DMatrix<f64>,
    pub dual: Option<OutputOriented>,
}

impl StaticSolution {
    pub fn n(&self) -> usize {
        self.x_ss.len()
    }

    /// `F𝒯⁻¹`
    pub fn transfer(&self) -> DMatrix<f64> {
        let mut p = self.f.clone();
        for j in 0..self.n() {
            p.column_mut(j).unscale_mut(self.tau[j]);
        }
        p
    }
}

fn invert(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, StaticError> {
    let sv = m.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-13 * sv.max() {
        return Err(StaticError::Singular(what));
    }
    m.try_inverse().ok_or(StaticError::Singular(what))
}

/// Static partition at the steady state `x_ss`, inputs evaluated at `t = 0`.
pub fn static_partition(model: &CompartmentalModel, x_ss: &DVector<f64>) -> Result<StaticSolution, StaticError> {
    static_partition_at(model, 0.0, x_ss)
}

pub fn static_partition_at(
    model: &CompartmentalModel,
    t: f64,
    x_ss: &DVector<f64>,
) -> Result<StaticSolution, StaticError> {
    let n = model.n;
    let snap = model.evaluate_flows(t, x_ss.as_slice())?;
    let tau = snap.tau_out.clone();
    if let Some(j) = tau.iter().position(|v| *v <= 0.0) {
        return Err(StaticError::ZeroThroughflow(j));
    }
    let mut p = snap.f.clone();
    for j in 0..n {
        p.column_mut(j).unscale_mut(tau[j]);
    }
    let id = DMatrix::<f64>::identity(n, n);
    let n_mat = invert(&id - &p, "I - F T^-1")?;
    let r = x_ss.component_div(&tau);
    let s_mat = DMatrix::from_diagonal(&r) * &n_mat;
    let si = model.storage_intensities(t, x_ss.as_slice())?;
    let a = &si.qx - DMatrix::from_diagonal(&si.r_inv);
    let zd = DMatrix::from_diagonal(&snap.z);
    let x_sub = &s_mat * &zd;
    let t_sub = &n_mat * &zd;
    let mut sol = StaticSolution {
        x_ss: x_ss.clone(),
        f: snap.f,
        z: snap.z,
        y: snap.y,
        tau,
        x_sub,
        t_sub,
        n_mat,
        s_mat,
        r,
        a,
        dual: None,
    };
    sol.dual = output_oriented(&sol).ok();
    Ok(sol)
}

/// Duals with `F̄ = Fᵀ`, `𝒵̄ = 𝒴`.
pub fn output_oriented(sol: &StaticSolution) -> Result<OutputOriented, StaticError> {
    let n = sol.n();
    if let Some(i) = sol.y.iter().position(|v| *v <= 0.0) {
        return Err(StaticError::SingularOutput(i));
    }
    let mut pt = sol.f.transpose();
    for j in 0..n {
        pt.column_mut(j).unscale_mut(sol.tau[j]);
    }
    let n_bar = invert(DMatrix::identity(n, n) - pt, "I - F^T T^-1")?;
    let s_bar = DMatrix::from_diagonal(&sol.r) * &n_bar;
    let yd = DMatrix::from_diagonal(&sol.y);
    Ok(OutputOriented {
        x_bar: &s_bar * &sol.y,
        x_sub_bar: &s_bar * &yd,
        t_sub_bar: &n_bar * &yd,
        n_bar,
        s_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticNode {
    pub compartment: usize,
    pub inflow: f64,
    pub storage: f64,
    pub outflow: f64,
}

/// Static transient flows chained along the single-pass layout of `path`.
/// The local input defaults to the path's head link at steady state.
pub fn static_transient(
    sol: &StaticSolution,
    path: &SubflowPath,
    inflow: Option<f64>,
) -> Result<Vec<StaticNode>, StaticError> {
    static_chain(sol, path, &path.layout().tracked, &path.layout().next, inflow)
}

/// As [`static_transient`] but over the unrolled path.
pub fn static_cumulative(
    sol: &StaticSolution,
    path: &SubflowPath,
    inflow: Option<f64>,
) -> Result<(Vec<StaticNode>, Vec<usize>), StaticError> {
    let lay = path.unrolled();
    let nodes = static_chain(sol, path, &lay.tracked, &lay.next, inflow)?;
    Ok((nodes, lay.arrivals))
}

fn static_chain(
    sol: &StaticSolution,
    path: &SubflowPath,
    tracked: &[usize],
    next: &[Option<PathNode>],
    inflow: Option<f64>,
) -> Result<Vec<StaticNode>, StaticError> {
    let first = tracked[0];
    let mut f_in = match inflow {
        Some(v) => v,
        None => match path.head() {
            PathNode::Env if path.k >= 1 && path.k - 1 == first => sol.z[first],
            PathNode::Env => 0.0,
            PathNode::Compartment(j) if path.k >= 1 => sol.f[(first, j)] / sol.x_ss[j] * sol.x_sub[(j, path.k - 1)],
            PathNode::Compartment(_) => 0.0,
        },
    };
    let mut out = Vec::with_capacity(tracked.len());
    for (m, &l) in tracked.iter().enumerate() {
        let tau = sol.tau[l];
        if tau <= 0.0 {
            return Err(StaticError::ZeroThroughflow(l));
        }
        let f_out = match next[m] {
            Some(PathNode::Compartment(nx)) => sol.f[(nx, l)] / tau * f_in,
            Some(PathNode::Env) => sol.y[l] / tau * f_in,
            None => 0.0,
        };
        out.push(StaticNode {
            compartment: l,
            inflow: f_in,
            storage: sol.x_ss[l] / tau * f_in,
            outflow: f_out,
        });
        f_in = f_out;
    }
    Ok(out)
}
