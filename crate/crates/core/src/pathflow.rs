//! Transient flows and storages along subflow paths.
//!
//! Path grammar:
//!
//! ```text
//! path    = "k=" int ":" node { "->" node } [ "cycles=" int ]
//! node    = "0" | int | label
//! ```
//!
//! `0` at the head is the environmental input, `0` at the tail the
//! environmental output. Compartments are numbered from 1 or named by label.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{CompartmentalModel, FlowSnapshot, ModelError, StorageIntensities};
use crate::odeint::{integrate, OdeError, Trajectory};
use crate::partition::{decomposed_rhs, PartitionError, PartitionTrajectory};

pub const DEFAULT_CYCLES: usize = 6;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path syntax: {0}")]
    Syntax(String),
    #[error("unknown compartment `{0}` in path")]
    UnknownCompartment(String),
    #[error("no flow from {from} to {to}")]
    Disconnected { from: String, to: String },
    #[error("subsystem index k={k} out of range 0..={n}")]
    KRange { k: usize, n: usize },
    #[error("activation time {t1} outside partition span [{t0}, {t_end}]")]
    ActivationTime { t1: f64, t0: f64, t_end: f64 },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("path integration failed: {0}")]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathNode {
    Env,
    /// 0-based compartment index.
    Compartment(usize),
}

impl fmt::Display for PathNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathNode::Env => f.write_str("0"),
            PathNode::Compartment(i) => write!(f, "{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubflowPath {
    pub k: usize,
    /// Head, tracked nodes, optional environmental tail.
    pub nodes: Vec<PathNode>,
    pub cycles: usize,
}

impl fmt::Display for SubflowPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={}:", self.k)?;
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(" ->")?;
            }
            write!(f, " {n}")?;
        }
        write!(f, " cycles={}", self.cycles)
    }
}

fn resolve_node(tok: &str, model: &CompartmentalModel) -> Result<PathNode, PathError> {
    if tok == "0" {
        return Ok(PathNode::Env);
    }
    if let Ok(i) = tok.parse::<usize>() {
        return if (1..=model.n).contains(&i) {
            Ok(PathNode::Compartment(i - 1))
        } else {
            Err(PathError::UnknownCompartment(tok.to_string()))
        };
    }
    model
        .labels
        .iter()
        .position(|l| l == tok)
        .map(PathNode::Compartment)
        .ok_or_else(|| PathError::UnknownCompartment(tok.to_string()))
}

/// Parses and validates a path against the model's flow graph.
pub fn parse_path(spec: &str, model: &CompartmentalModel) -> Result<SubflowPath, PathError> {
    let spec = spec.trim();
    let rest = spec
        .strip_prefix("k")
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix('='))
        .ok_or_else(|| PathError::Syntax("expected `k=<index>:`".into()))?;
    let (k_txt, body) = rest
        .split_once(':')
        .ok_or_else(|| PathError::Syntax("missing `:` after subsystem index".into()))?;
    let k: usize = k_txt
        .trim()
        .parse()
        .map_err(|_| PathError::Syntax(format!("invalid subsystem index `{}`", k_txt.trim())))?;
    if k > model.n {
        return Err(PathError::KRange { k, n: model.n });
    }
    let (body, cycles) = match body.split_once("cycles") {
        Some((b, c)) => {
            let c = c
                .trim()
                .strip_prefix('=')
                .ok_or_else(|| PathError::Syntax("expected `cycles=<m>`".into()))?;
            let m: usize = c
                .trim()
                .parse()
                .map_err(|_| PathError::Syntax(format!("invalid cycle count `{}`", c.trim())))?;
            if m == 0 {
                return Err(PathError::Syntax("cycle count must be positive".into()));
            }
            (b.trim_end().trim_end_matches(',').trim_end(), m)
        }
        None => (body, DEFAULT_CYCLES),
    };
    let nodes = body
        .split("->")
        .map(|t| {
            let t = t.trim();
            if t.is_empty() {
                Err(PathError::Syntax("empty node".into()))
            } else {
                resolve_node(t, model)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if nodes.len() < 2 {
        return Err(PathError::Syntax("a path needs at least one link".into()));
    }
    let last = nodes.len() - 1;
    for (i, n) in nodes.iter().enumerate() {
        if *n == PathNode::Env && i != 0 && i != last {
            return Err(PathError::Syntax("the environment may only start or end a path".into()));
        }
    }
    if nodes[1] == PathNode::Env {
        return Err(PathError::Syntax("a path must enter at least one compartment".into()));
    }
    let name = |n: PathNode| match n {
        PathNode::Env => "environment".to_string(),
        PathNode::Compartment(i) => model.labels[i].clone(),
    };
    for w in nodes.windows(2).skip(1) {
        let connected = match (w[0], w[1]) {
            (PathNode::Compartment(a), PathNode::Compartment(b)) => model.has_flow(b, a),
            (PathNode::Compartment(a), PathNode::Env) => !model.output_exprs[a].is_zero_literal(),
            _ => false,
        };
        if !connected {
            return Err(PathError::Disconnected {
                from: name(w[0]),
                to: name(w[1]),
            });
        }
    }
    if let (PathNode::Compartment(a), PathNode::Compartment(b)) = (nodes[0], nodes[1]) {
        if !model.has_flow(b, a) {
            return Err(PathError::Disconnected {
                from: name(nodes[0]),
                to: name(nodes[1]),
            });
        }
    }
    Ok(SubflowPath { k, nodes, cycles })
}

impl SubflowPath {
    pub fn head(&self) -> PathNode {
        self.nodes[0]
    }

    /// Compartments carrying a transient storage, in path order.
    pub fn tracked(&self) -> Vec<usize> {
        self.nodes[1..]
            .iter()
            .filter_map(|n| match n {
                PathNode::Compartment(i) => Some(*i),
                PathNode::Env => None,
            })
            .collect()
    }

    pub fn exits(&self) -> bool {
        self.nodes.len() > 2 && *self.nodes.last().unwrap() == PathNode::Env
    }

    /// Single-pass layout: tracked nodes and the downstream node of each.
    pub fn layout(&self) -> PathLayout {
        let tracked = self.tracked();
        let mut next: Vec<Option<PathNode>> = tracked
            .iter()
            .skip(1)
            .map(|&i| Some(PathNode::Compartment(i)))
            .collect();
        next.push(self.exits().then_some(PathNode::Env));
        let last = tracked.len() - 1;
        PathLayout {
            k: self.k,
            head: self.head(),
            tracked,
            next,
            arrivals: vec![last],
        }
    }

    /// Layout unrolled over `cycles` arrivals at the terminal node.
    ///
    /// The closed part runs from the first visit of the terminal to the
    /// end. Entry into the first tracked node is never an arrival.
    pub fn unrolled(&self) -> PathLayout {
        let tracked = self.tracked();
        let last = tracked.len() - 1;
        let terminal = tracked[last];
        let first = tracked.iter().position(|&c| c == terminal).unwrap();
        if self.exits() || first == last {
            return self.layout();
        }
        let period = &tracked[first..last];
        let mut seq: Vec<usize> = tracked[..=first].to_vec();
        let mut arrivals = Vec::new();
        if first > 0 {
            arrivals.push(first);
        }
        while arrivals.len() < self.cycles {
            seq.extend_from_slice(&period[1..]);
            seq.push(terminal);
            arrivals.push(seq.len() - 1);
        }
        arrivals.truncate(self.cycles);
        seq.truncate(arrivals.last().unwrap() + 1);
        seq.push(period[1 % period.len()]);
        let mut next: Vec<Option<PathNode>> = seq.iter().skip(1).map(|&i| Some(PathNode::Compartment(i))).collect();
        next.push(None);
        PathLayout {
            k: self.k,
            head: self.head(),
            tracked: seq,
            next,
            arrivals,
        }
    }
}

/// Path states ready for integration.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLayout {
    pub k: usize,
    pub head: PathNode,
    pub tracked: Vec<usize>,
    /// Downstream node of each tracked node; `None` has no modelled outflow.
    pub next: Vec<Option<PathNode>>,
    /// Indices into `tracked` summed by the cumulative quantities.
    pub arrivals: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeValues {
    pub compartment: usize,
    pub inflow: f64,
    pub outflow: f64,
    pub storage: f64,
}

impl PathLayout {
    pub fn len(&self) -> usize {
        self.tracked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracked.is_empty()
    }

    fn local_input(&self, n: usize, s: &[f64], si: &StorageIntensities) -> f64 {
        let l = self.tracked[0];
        match self.head {
            PathNode::Env => {
                if self.k >= 1 && l == self.k - 1 {
                    si.snapshot.z[l]
                } else {
                    0.0
                }
            }
            PathNode::Compartment(j) => si.qx[(l, j)] * s[self.k * n + j],
        }
    }

    fn outflow(&self, m: usize, xm: f64, si: &StorageIntensities) -> f64 {
        let l = self.tracked[m];
        match self.next[m] {
            Some(PathNode::Env) => si.y_per_x[l] * xm,
            Some(PathNode::Compartment(nx)) => si.qx[(nx, l)] * xm,
            None => 0.0,
        }
    }

    fn rhs(&self, n: usize, s: &[f64], si: &StorageIntensities, p: &[f64], dp: &mut [f64]) {
        let mut inflow = self.local_input(n, s, si);
        for m in 0..self.len() {
            let l = self.tracked[m];
            dp[m] = inflow - si.r_inv[l] * p[m];
            inflow = self.outflow(m, p[m], si);
        }
    }

    fn values(&self, n: usize, s: &[f64], si: &StorageIntensities, p: &[f64]) -> Vec<NodeValues> {
        let mut inflow = self.local_input(n, s, si);
        (0..self.len())
            .map(|m| {
                let outflow = self.outflow(m, p[m], si);
                let v = NodeValues {
                    compartment: self.tracked[m],
                    inflow,
                    outflow,
                    storage: p[m],
                };
                inflow = outflow;
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Path states appended to the decomposed system.
    #[default]
    Simultaneous,
    /// Path states integrated against the stored partition trajectory.
    PostHoc,
}

/// Transient inflows, outflows and storages along a path from `t1`.
#[derive(Debug, Clone)]
pub struct TransientRecord {
    pub path: SubflowPath,
    pub layout: PathLayout,
    pub t1: f64,
    pub mode: SolveMode,
    model: Arc<CompartmentalModel>,
    traj: Trajectory,
    partition: Option<Arc<PartitionTrajectory>>,
}

impl TransientRecord {
    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    /// Integration knots.
    pub fn times(&self) -> &[f64] {
        self.traj.times()
    }

    pub fn nodes_at(&self, t: f64) -> Result<Vec<NodeValues>, PathError> {
        let n = self.model.n;
        let nd = n * (n + 1);
        let (s, p) = match &self.partition {
            None => {
                let y = self.traj.interpolate(t)?;
                let p = y[nd..].to_vec();
                let mut s = y;
                s.truncate(nd);
                (s, p)
            }
            Some(part) => (part.traj.interpolate(t)?, self.traj.interpolate(t)?),
        };
        let si = intensities_of(&self.model, t, &s)?;
        Ok(self.layout.values(n, &s, &si, &p))
    }

    /// Aggregate flow snapshot along the record.
    pub fn snapshot_at(&self, t: f64) -> Result<FlowSnapshot, PathError> {
        let n = self.model.n;
        let s = match &self.partition {
            None => self.traj.interpolate(t)?[..n * (n + 1)].to_vec(),
            Some(part) => part.traj.interpolate(t)?,
        };
        Ok(intensities_of(&self.model, t, &s)?.snapshot)
    }

    /// Sums over the arrival nodes: cumulative storage, inflow and outflow.
    pub fn cumulative_at(&self, t: f64) -> Result<NodeValues, PathError> {
        let nodes = self.nodes_at(t)?;
        let mut acc = NodeValues {
            compartment: self.layout.tracked[*self.layout.arrivals.last().unwrap()],
            inflow: 0.0,
            outflow: 0.0,
            storage: 0.0,
        };
        for &a in &self.layout.arrivals {
            acc.inflow += nodes[a].inflow;
            acc.outflow += nodes[a].outflow;
            acc.storage += nodes[a].storage;
        }
        Ok(acc)
    }
}

fn intensities_of(model: &CompartmentalModel, t: f64, s: &[f64]) -> Result<StorageIntensities, ModelError> {
    let n = model.n;
    let mut x = vec![0.0; n];
    for k in 0..=n {
        for i in 0..n {
            x[i] += s[k * n + i];
        }
    }
    model.storage_intensities(t, &x)
}

fn solve(
    part: &PartitionTrajectory,
    path: &SubflowPath,
    layout: PathLayout,
    t1: f64,
    mode: SolveMode,
) -> Result<TransientRecord, PathError> {
    let (t0, t_end) = (part.t0(), part.t_end());
    if !(t1 >= t0 && t1 <= t_end) {
        return Err(PathError::ActivationTime { t1, t0, t_end });
    }
    let n = part.n();
    let nd = n * (n + 1);
    let np = layout.len();
    let model = part.model.clone();
    let (traj, partition) = match mode {
        SolveMode::Simultaneous => {
            let mut y0 = part.traj.interpolate(t1)?;
            y0.resize(nd + np, 0.0);
            let m = model.clone();
            let lay = layout.clone();
            let traj = integrate(
                move |t, y, dy| {
                    let (s, p) = y.split_at(nd);
                    let (ds, dp) = dy.split_at_mut(nd);
                    let si = decomposed_rhs(&m, t, s, ds)?;
                    lay.rhs(n, s, &si, p, dp);
                    Ok(())
                },
                &y0,
                t1,
                t_end,
                &part.config,
            )?;
            (traj, None)
        }
        SolveMode::PostHoc => {
            let stored = Arc::new(part.clone());
            let inner = stored.clone();
            let m = model.clone();
            let lay = layout.clone();
            let mut s = vec![0.0; nd];
            let traj = integrate(
                move |t, p, dp| {
                    inner.traj.interpolate_into(t, &mut s)?;
                    let si = intensities_of(&m, t, &s)?;
                    lay.rhs(n, &s, &si, p, dp);
                    Ok(())
                },
                &vec![0.0; np],
                t1,
                t_end,
                &part.config,
            )?;
            (traj, Some(stored))
        }
    };
    Ok(TransientRecord {
        path: path.clone(),
        layout,
        t1,
        mode,
        model,
        traj,
        partition,
    })
}

/// Single-pass transient flows along `path`, activated at `t1`.
pub fn transient_flows(
    part: &PartitionTrajectory,
    path: &SubflowPath,
    t1: f64,
    mode: SolveMode,
) -> Result<TransientRecord, PathError> {
    solve(part, path, path.layout(), t1, mode)
}

/// Cumulative transient quantities at the terminal node of a closed path,
/// truncated after `path.cycles` arrivals. Read them with
/// [`TransientRecord::cumulative_at`].
pub fn cumulative_transient(
    part: &PartitionTrajectory,
    path: &SubflowPath,
    t1: f64,
    mode: SolveMode,
) -> Result<TransientRecord, PathError> {
    solve(part, path, path.unrolled(), t1, mode)
}

/// Sum of cumulative terminal inflows over several paths at `t`.
pub fn summed_inflow(records: &[TransientRecord], t: f64) -> Result<f64, PathError> {
    records.iter().map(|r| r.cumulative_at(t).map(|v| v.inflow)).sum()
}

/// Storage vector of all tracked nodes at `t`.
pub fn storages_at(record: &TransientRecord, t: f64) -> Result<DVector<f64>, PathError> {
    let v = record.nodes_at(t)?;
    Ok(DVector::from_iterator(v.len(), v.iter().map(|n| n.storage)))
}
