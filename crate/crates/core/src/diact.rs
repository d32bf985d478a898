//! Direct, indirect, acyclic, cycling and transfer (diact) flows and storages.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{CompartmentalModel, ModelError, StorageIntensities};
use crate::odeint::{integrate, OdeConfig, OdeError, Trajectory};
use crate::partition::{
    decomposed_rhs, subthroughflow_set, DecomposedState, PartitionError, PartitionTrajectory, SubthroughflowSet,
};
use crate::staticnet::StaticSolution;

#[derive(Debug, Error)]
pub enum DiactError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diact storage integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("activation time {t1} outside partition span [{t0}, {t_end}]")]
    ActivationTime { t1: f64, t0: f64, t_end: f64 },
    #[error("diagonal of N vanishes at compartment {0}")]
    SingularDiagonal(usize),
    #[error("subsystem {l} out of range 0..={n}")]
    SubsystemOutOfRange { l: usize, n: usize },
    #[error("unknown diact kind `{0}`")]
    UnknownKind(String),
    #[error("kind {0} was not integrated")]
    MissingKind(DiactKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiactKind {
    Direct,
    Indirect,
    Acyclic,
    Cycling,
    Transfer,
}

impl DiactKind {
    pub const ALL: [DiactKind; 5] = [
        DiactKind::Direct,
        DiactKind::Indirect,
        DiactKind::Acyclic,
        DiactKind::Cycling,
        DiactKind::Transfer,
    ];

    pub fn symbol(self) -> char {
        match self {
            DiactKind::Direct => 'd',
            DiactKind::Indirect => 'i',
            DiactKind::Acyclic => 'a',
            DiactKind::Cycling => 'c',
            DiactKind::Transfer => 't',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiactKind::Direct => "direct",
            DiactKind::Indirect => "indirect",
            DiactKind::Acyclic => "acyclic",
            DiactKind::Cycling => "cycling",
            DiactKind::Transfer => "transfer",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DiactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiactKind {
    type Err = DiactError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        DiactKind::ALL
            .into_iter()
            .find(|k| s == k.name() || s.len() == 1 && s.starts_with(k.symbol()))
            .ok_or(DiactError::UnknownKind(s))
    }
}

/// Parses a comma-separated list such as `d,i,a` or `all`.
pub fn parse_kinds(s: &str) -> Result<Vec<DiactKind>, DiactError> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(DiactKind::ALL.to_vec());
    }
    let mut v: Vec<DiactKind> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

/// Denominator guard shared with the interaction classifier.
pub fn threshold_epsilon(tau_out: &DVector<f64>) -> f64 {
    1e-10 * tau_out.amax().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowScope {
    /// Generated by all environmental inputs.
    Composite,
    /// Subsystem `ℓ`, with `0` the initial subsystem.
    Subsystem(usize),
    /// Generated by the single input of each source compartment.
    Simple,
}

/// All five distribution matrices at one instant.
#[derive(Debug, Clone)]
pub struct DistributionSet {
    pub t: f64,
    mats: [DMatrix<f64>; 5],
    /// Columns `k` with `T̂_kk ≤ ε_thr`, zeroed in every matrix.
    pub flagged: Vec<usize>,
    pub eps: f64,
    pub tau_in: DVector<f64>,
    /// Outward throughflow and its parts.
    pub tau_out: DVector<f64>,
    pub tau0_out: DVector<f64>,
    pub t_out: DMatrix<f64>,
    pub r_inv: DVector<f64>,
    pub x: DVector<f64>,
}

impl DistributionSet {
    pub fn get(&self, kind: DiactKind) -> &DMatrix<f64> {
        &self.mats[kind.index()]
    }

    fn scale(&self, l: usize) -> DVector<f64> {
        if l == 0 {
            self.tau0_out.clone()
        } else {
            self.t_out.column(l - 1).into_owned()
        }
    }

    pub fn flows(&self, kind: DiactKind, scope: FlowScope) -> Result<DMatrix<f64>, DiactError> {
        let n = self.tau_out.len();
        let d = match scope {
            FlowScope::Composite => &self.tau_out - &self.tau0_out,
            FlowScope::Subsystem(l) if l <= n => self.scale(l),
            FlowScope::Subsystem(l) => return Err(DiactError::SubsystemOutOfRange { l, n }),
            FlowScope::Simple => self.t_out.diagonal(),
        };
        Ok(self.get(kind) * DMatrix::from_diagonal(&d))
    }
}

fn distribution_set(t: f64, si: &StorageIntensities, sub: &SubthroughflowSet, x: DVector<f64>) -> DistributionSet {
    let n = x.len();
    let snap = &si.snapshot;
    let eps = threshold_epsilon(&snap.tau_out);
    let d_out = &sub.diag_out;
    let flagged: Vec<usize> = (0..n).filter(|&k| !(d_out[k] > eps)).collect();
    let inv = |v: f64| if v > eps { 1.0 / v } else { 0.0 };
    let mut nd = DMatrix::zeros(n, n);
    let mut nt = DMatrix::zeros(n, n);
    let mut nc = DMatrix::zeros(n, n);
    for k in 0..n {
        if flagged.contains(&k) {
            continue;
        }
        let ck = 1.0 / d_out[k];
        for i in 0..n {
            nd[(i, k)] = if snap.tau_out[k] > eps {
                snap.f[(i, k)] / snap.tau_out[k]
            } else {
                0.0
            };
            nt[(i, k)] = sub.t_tilde[(i, k)] * ck;
            nc[(i, k)] = sub.diag_tilde[i] * inv(d_out[i]) * sub.t_out[(i, k)] * ck;
        }
    }
    let ni = &nt - &nd;
    let na = &nt - &nc;
    DistributionSet {
        t,
        mats: [nd, ni, na, nc, nt],
        flagged,
        eps,
        tau_in: snap.tau_in.clone(),
        tau_out: snap.tau_out.clone(),
        tau0_out: sub.tau0_out.clone(),
        t_out: sub.t_out.clone(),
        r_inv: si.r_inv.clone(),
        x,
    }
}

/// Distribution matrices of every kind at `t`.
pub fn distributions(part: &PartitionTrajectory, t: f64) -> Result<DistributionSet, DiactError> {
    let fr = part.frame(t)?;
    Ok(distribution_set(t, &fr.intensities, &fr.sub, fr.state.aggregate()))
}

pub fn diact_distribution(part: &PartitionTrajectory, t: f64, kind: DiactKind) -> Result<DMatrix<f64>, DiactError> {
    Ok(distributions(part, t)?.get(kind).clone())
}

pub fn diact_flows(
    part: &PartitionTrajectory,
    t: f64,
    kind: DiactKind,
    scope: FlowScope,
) -> Result<DMatrix<f64>, DiactError> {
    distributions(part, t)?.flows(kind, scope)
}

/// Diact storages from `t1`, integrated alongside the decomposed system.
///
/// State layout after the `n(n+1)` decomposed states: for each kind, the
/// subsystem matrices `ℓ = 0..=n` followed by the simple matrix, each
/// `n×n` column-major.
#[derive(Debug, Clone)]
pub struct DiactStorages {
    pub kinds: Vec<DiactKind>,
    pub t1: f64,
    model: Arc<CompartmentalModel>,
    traj: Trajectory,
}

impl DiactStorages {
    fn n(&self) -> usize {
        self.model.n
    }

    fn block(&self, kind: DiactKind, slot: usize, y: &[f64]) -> Result<DMatrix<f64>, DiactError> {
        let n = self.n();
        let q = self
            .kinds
            .iter()
            .position(|&k| k == kind)
            .ok_or(DiactError::MissingKind(kind))?;
        let nn = n * n;
        let off = n * (n + 1) + (q * (n + 2) + slot) * nn;
        Ok(DMatrix::from_column_slice(n, n, &y[off..off + nn]))
    }

    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn times(&self) -> &[f64] {
        self.traj.times()
    }

    /// `X*_ℓ(t)`.
    pub fn subsystem(&self, kind: DiactKind, l: usize, t: f64) -> Result<DMatrix<f64>, DiactError> {
        let n = self.n();
        if l > n {
            return Err(DiactError::SubsystemOutOfRange { l, n });
        }
        self.block(kind, l, &self.traj.interpolate(t)?)
    }

    /// `X*(t) = Σ_{ℓ≥1} X*_ℓ(t)`.
    pub fn composite(&self, kind: DiactKind, t: f64) -> Result<DMatrix<f64>, DiactError> {
        let y = self.traj.interpolate(t)?;
        let mut acc = DMatrix::zeros(self.n(), self.n());
        for l in 1..=self.n() {
            acc += self.block(kind, l, &y)?;
        }
        Ok(acc)
    }

    /// `X̃*(t)`.
    pub fn simple(&self, kind: DiactKind, t: f64) -> Result<DMatrix<f64>, DiactError> {
        self.block(kind, self.n() + 1, &self.traj.interpolate(t)?)
    }

    /// Decomposed state carried along the storage integration.
    pub fn state(&self, t: f64) -> Result<DecomposedState, DiactError> {
        let y = self.traj.interpolate(t)?;
        Ok(DecomposedState::from_slice(self.n(), &y))
    }

    /// Distribution matrices consistent with the carried decomposed state.
    pub fn distributions(&self, t: f64) -> Result<DistributionSet, DiactError> {
        let n = self.n();
        let y = self.traj.interpolate(t)?;
        let mut ds = vec![0.0; n * (n + 1)];
        let si = decomposed_rhs(&self.model, t, &y[..n * (n + 1)], &mut ds)?;
        let st = DecomposedState::from_slice(n, &y);
        let sub = subthroughflow_set(&st, &si);
        Ok(distribution_set(t, &si, &sub, st.aggregate()))
    }
}

/// Integrates `ẋ* = τ* − r_i⁻¹x*`, `x*(t1) = 0` for every scope of each kind.
pub fn diact_storages(part: &PartitionTrajectory, kinds: &[DiactKind], t1: f64) -> Result<DiactStorages, DiactError> {
    let (t0, t_end) = (part.t0(), part.t_end());
    if !(t1 >= t0 && t1 <= t_end) {
        return Err(DiactError::ActivationTime { t1, t0, t_end });
    }
    let n = part.n();
    let nd = n * (n + 1);
    let nn = n * n;
    let kinds = kinds.to_vec();
    let total = nd + kinds.len() * (n + 2) * nn;
    let mut y0 = part.traj.interpolate(t1)?;
    y0.resize(total, 0.0);
    let model = part.model.clone();
    let m = model.clone();
    let ks = kinds.clone();
    let traj = integrate(
        move |t, y, dy| {
            let (s, xs) = y.split_at(nd);
            let (ds, dxs) = dy.split_at_mut(nd);
            let si = decomposed_rhs(&m, t, s, ds)?;
            let st = DecomposedState::from_slice(n, s);
            let sub = subthroughflow_set(&st, &si);
            let set = distribution_set(t, &si, &sub, DVector::zeros(n));
            for (q, &kind) in ks.iter().enumerate() {
                let nstar = set.get(kind);
                for slot in 0..n + 2 {
                    let scale = match slot {
                        s if s <= n => set.scale(s),
                        _ => sub.diag_out.clone(),
                    };
                    let off = (q * (n + 2) + slot) * nn;
                    for c in 0..n {
                        for i in 0..n {
                            let idx = off + c * n + i;
                            dxs[idx] = nstar[(i, c)] * scale[c] - si.r_inv[i] * xs[idx];
                        }
                    }
                }
            }
            Ok(())
        },
        &y0,
        t1,
        t_end,
        &part.config,
    )?;
    Ok(DiactStorages { kinds, t1, model, traj })
}

/// Storage generated in compartment `i` by an arbitrary inflow series,
/// integrated against the stored partition trajectory.
pub fn storage_of_series<F>(
    part: &PartitionTrajectory,
    i: usize,
    flow: F,
    t1: f64,
    config: &OdeConfig,
) -> Result<Trajectory, DiactError>
where
    F: Fn(f64) -> f64 + 'static,
{
    let (t0, t_end) = (part.t0(), part.t_end());
    if !(t1 >= t0 && t1 <= t_end) {
        return Err(DiactError::ActivationTime { t1, t0, t_end });
    }
    let p = part.clone();
    Ok(integrate(
        move |t, x, dx| {
            let xa = p.aggregate(t)?;
            let si = p.model.storage_intensities(t, xa.as_slice())?;
            dx[0] = flow(t) - si.r_inv[i] * x[0];
            Ok(())
        },
        &[0.0],
        t1,
        t_end,
        config,
    )?)
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// `∫_{t1}^{t} exp(−r⁻¹(t − s)) τ(s) ds` for a constant intensity, by
/// composite five-point Gauss–Legendre quadrature.
pub fn quadrature_storage<F: Fn(f64) -> f64>(flow: F, r_inv: f64, t1: f64, t: f64, panels: usize) -> f64 {
    if t <= t1 {
        return 0.0;
    }
    let h = (t - t1) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = t1 + p as f64 * h;
        let mid = a + 0.5 * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let s = mid + 0.5 * h * x;
            acc += w * 0.5 * h * (-r_inv * (t - s)).exp() * flow(s);
        }
    }
    acc
}

/// Static diact matrices of one kind.
#[derive(Debug, Clone)]
pub struct StaticDiact {
    pub kind: DiactKind,
    pub n_star: DMatrix<f64>,
    pub s_star: DMatrix<f64>,
    pub t_star: DMatrix<f64>,
    /// `T*_ℓ` for `ℓ = 1..=n` at index `ℓ − 1`.
    pub t_star_l: Vec<DMatrix<f64>>,
    pub x_star: DMatrix<f64>,
    pub x_star_l: Vec<DMatrix<f64>>,
    pub t_simple: DMatrix<f64>,
    pub x_simple: DMatrix<f64>,
}

pub fn static_distribution(sol: &StaticSolution, kind: DiactKind) -> Result<DMatrix<f64>, DiactError> {
    let n = sol.n();
    let nm = &sol.n_mat;
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        (0..n)
            .map(|i| {
                let v = nm[(i, i)];
                if v == 0.0 {
                    Err(DiactError::SingularDiagonal(i))
                } else {
                    Ok(1.0 / v)
                }
            })
            .collect::<Result<Vec<_>, _>>()?,
    ));
    let id = DMatrix::<f64>::identity(n, n);
    let nt = (nm - &id) * &dinv;
    let nd = sol.transfer();
    Ok(match kind {
        DiactKind::Direct => nd,
        DiactKind::Indirect => nt - nd,
        DiactKind::Acyclic => (&dinv * nm - id) * &dinv,
        DiactKind::Cycling => (nm - &dinv * nm) * &dinv,
        DiactKind::Transfer => nt,
    })
}

pub fn static_diact(sol: &StaticSolution, kind: DiactKind) -> Result<StaticDiact, DiactError> {
    let n_star = static_distribution(sol, kind)?;
    let s_star = DMatrix::from_diagonal(&sol.r) * &n_star;
    let tau = DMatrix::from_diagonal(&sol.tau);
    let simple = DMatrix::from_diagonal(&sol.t_sub.diagonal());
    let per: Vec<DMatrix<f64>> = (0..sol.n())
        .map(|l| DMatrix::from_diagonal(&sol.t_sub.column(l).into_owned()))
        .collect();
    Ok(StaticDiact {
        kind,
        t_star: &n_star * &tau,
        x_star: &s_star * &tau,
        t_star_l: per.iter().map(|d| &n_star * d).collect(),
        x_star_l: per.iter().map(|d| &s_star * d).collect(),
        t_simple: &n_star * &simple,
        x_simple: &s_star * &simple,
        n_star,
        s_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::decompose;
    use crate::staticnet::{find_steady_state, static_partition, SteadyConfig};

    fn hippe() -> CompartmentalModel {
        CompartmentalModel::from_json(include_str!("../fixtures/hippe.json")).unwrap()
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("c".parse::<DiactKind>().unwrap(), DiactKind::Cycling);
        assert_eq!("Transfer".parse::<DiactKind>().unwrap(), DiactKind::Transfer);
        assert!("x".parse::<DiactKind>().is_err());
        assert_eq!(
            parse_kinds("t,d,d").unwrap(),
            vec![DiactKind::Direct, DiactKind::Transfer]
        );
        assert_eq!(parse_kinds("all").unwrap().len(), 5);
    }

    #[test]
    fn steady_direct_distribution() {
        let p = decompose(&hippe(), 0.0, 50.0, &OdeConfig::default()).unwrap();
        let nd = diact_distribution(&p, 50.0, DiactKind::Direct).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 2.0 / 7.0, 4.0 / 5.0, 0.0]);
        assert!((nd - want).abs().max() < 1e-9);
    }

    #[test]
    fn columns_flagged_at_start() {
        let p = decompose(&hippe(), 0.0, 1.0, &OdeConfig::default()).unwrap();
        let set = distributions(&p, 0.0).unwrap();
        assert_eq!(set.flagged, vec![0, 1]);
        for kind in DiactKind::ALL {
            assert_eq!(set.get(kind), &DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn composite_equals_sum_of_subsystems() {
        let m = hippe().with_input_sources("3+sin(t), 3+sin(2*t)").unwrap();
        let p = decompose(&m, 0.0, 5.0, &OdeConfig::default()).unwrap();
        let set = distributions(&p, 2.0).unwrap();
        for kind in DiactKind::ALL {
            let c = set.flows(kind, FlowScope::Composite).unwrap();
            let s =
                set.flows(kind, FlowScope::Subsystem(1)).unwrap() + set.flows(kind, FlowScope::Subsystem(2)).unwrap();
            assert!((c - s).abs().max() < 1e-12);
        }
        assert!(set.flows(DiactKind::Direct, FlowScope::Subsystem(3)).is_err());
    }

    #[test]
    fn storage_routes_agree_on_linear_model() {
        let m = hippe().with_input_sources("3+sin(t), 3+sin(2*t)").unwrap();
        let p = decompose(&m, 0.0, 5.0, &OdeConfig::default()).unwrap();
        let st = diact_storages(&p, &[DiactKind::Transfer], 0.0).unwrap();
        // τ^t_{1_0 2_0} = (2/3)·x_{2_0}
        let pp = p.clone();
        let flow = move |s: f64| 2.0 / 3.0 * pp.state(s).unwrap().x0[1];
        let want = quadrature_storage(&flow, 5.0 / 3.0, 0.0, 3.0, 400);
        let got = st.subsystem(DiactKind::Transfer, 0, 3.0).unwrap()[(0, 1)];
        assert!((got - want).abs() < 1e-7);
        let by_series = storage_of_series(&p, 0, flow, 0.0, &OdeConfig::default()).unwrap();
        assert!((by_series.interpolate(3.0).unwrap()[0] - want).abs() < 1e-7);
    }

    #[test]
    fn zero_flow_gives_zero_storage() {
        let p = decompose(&hippe(), 0.0, 2.0, &OdeConfig::default()).unwrap();
        let tr = storage_of_series(&p, 1, |_| 0.0, 0.0, &OdeConfig::default()).unwrap();
        assert_eq!(tr.final_state()[0], 0.0);
        assert_eq!(quadrature_storage(|_| 0.0, 1.0, 0.0, 2.0, 10), 0.0);
    }

    #[test]
    fn static_tables() {
        let m = hippe();
        let x = find_steady_state(&m, &m.x_init, &SteadyConfig::default()).unwrap();
        let sol = static_partition(&m, &x).unwrap();
        let get = |k| static_diact(&sol, k).unwrap();
        let (d, i, a, c, t) = (
            get(DiactKind::Direct),
            get(DiactKind::Indirect),
            get(DiactKind::Acyclic),
            get(DiactKind::Cycling),
            get(DiactKind::Transfer),
        );
        assert!((&t.n_star - (&d.n_star + &i.n_star)).abs().max() < 1e-12);
        assert!((&t.n_star - (&a.n_star + &c.n_star)).abs().max() < 1e-12);
        assert!((c.t_simple[(0, 0)] - 8.0 / 27.0).abs() < 1e-12);
        let sum: DMatrix<f64> = t.t_star_l.iter().sum();
        assert!((sum - &t.t_star).abs().max() < 1e-12);
        // Dynamic distribution converges to the static one.
        let p = decompose(&m, 0.0, 50.0, &OdeConfig::default()).unwrap();
        let set = distributions(&p, 50.0).unwrap();
        for (kind, s) in [
            (DiactKind::Transfer, &t),
            (DiactKind::Cycling, &c),
            (DiactKind::Acyclic, &a),
        ] {
            assert!((set.get(kind) - &s.n_star).abs().max() < 1e-6, "{kind}");
        }
    }
}
