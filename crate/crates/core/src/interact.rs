//! Sign and strength of pairwise diact interactions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::diact::{DiactError, DiactKind, DiactStorages, FlowScope};
use crate::pathflow::{PathError, TransientRecord};

#[derive(Debug, Error)]
pub enum InteractError {
    #[error(transparent)]
    Diact(#[from] DiactError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("pair ({i}, {j}) out of range for {n} compartments")]
    Pair { i: usize, j: usize, n: usize },
    #[error("grid point t={t} outside [{t0}, {t1}]")]
    Grid { t: f64, t0: f64, t1: f64 },
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Flow,
    Storage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Composite,
    Simple,
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `τ*_ij + τ*_ji`
    PairwiseDiact,
    /// `τ^t_ij + τ^t_ji`
    PairwiseTransfer,
    /// `τ̌_i + τ̌_j`, or `x_i + x_j` on the storage basis.
    #[default]
    PairwiseThroughflow,
    /// `Σ τ̌`, or `Σ x` on the storage basis.
    Global,
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, $($s:literal => $v:expr),+) => {
        impl FromStr for $ty {
            type Err = InteractError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(InteractError::Unknown { what: $what, value: other.to_string() }),
                }
            }
        }
    };
}

parse_enum!(Basis, "basis", "flow" => Basis::Flow, "storage" => Basis::Storage);
parse_enum!(Source, "source", "composite" => Source::Composite, "simple" => Source::Simple,
    "initial" => Source::Initial, "initial-subsystem" => Source::Initial);
parse_enum!(Normalization, "normalization",
    "pairwise-diact" => Normalization::PairwiseDiact,
    "pairwise-transfer" => Normalization::PairwiseTransfer,
    "pairwise-throughflow" => Normalization::PairwiseThroughflow,
    "global" => Normalization::Global,
    "global-throughflow" => Normalization::Global);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Neutral,
    Positive,
}

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Neutral => 0,
            Sign::Positive => 1,
        }
    }

    /// Only the positive and neutral cases carry a name.
    pub fn label(self) -> Option<&'static str> {
        match self {
            Sign::Positive => Some("predation"),
            Sign::Neutral => Some("neutral"),
            Sign::Negative => None,
        }
    }

    fn of(diff: f64, eps: f64) -> Sign {
        if diff > eps {
            Sign::Positive
        } else if diff < -eps {
            Sign::Negative
        } else {
            Sign::Neutral
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Negative => "-",
            Sign::Neutral => "0",
            Sign::Positive => "+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionPoint {
    pub t: f64,
    /// `τ*_ij − τ*_ji` (or the storage analogue).
    pub net: f64,
    pub delta: Sign,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionReport {
    /// 0-based `(i, j)`.
    pub pair: (usize, usize),
    pub kind: DiactKind,
    pub basis: Basis,
    pub source: Source,
    pub normalization: Normalization,
    pub points: Vec<InteractionPoint>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Sign `δ_ij = sgn(τ*_ij − τ*_ji)` and strength `μ_ij` on `grid`.
pub fn classify(
    storages: &DiactStorages,
    pair: (usize, usize),
    kind: DiactKind,
    basis: Basis,
    source: Source,
    normalization: Normalization,
    grid: &[f64],
) -> Result<InteractionReport, InteractError> {
    let (i, j) = pair;
    let state = storages.state(storages.t1)?;
    let n = state.x0.len();
    if i >= n || j >= n {
        return Err(InteractError::Pair { i, j, n });
    }
    let (t0, t1) = (storages.t1, storages.t_end());
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        if !(t >= t0 && t <= t1) {
            return Err(InteractError::Grid { t, t0, t1 });
        }
        let set = storages.distributions(t)?;
        let matrix = |k: DiactKind| -> Result<DMatrix<f64>, DiactError> {
            match (basis, source) {
                (Basis::Flow, Source::Composite) => set.flows(k, FlowScope::Composite),
                (Basis::Flow, Source::Simple) => set.flows(k, FlowScope::Simple),
                (Basis::Flow, Source::Initial) => set.flows(k, FlowScope::Subsystem(0)),
                (Basis::Storage, Source::Composite) => storages.composite(k, t),
                (Basis::Storage, Source::Simple) => storages.simple(k, t),
                (Basis::Storage, Source::Initial) => storages.subsystem(k, 0, t),
            }
        };
        let m = matrix(kind)?;
        let net = m[(i, j)] - m[(j, i)];
        let den = match normalization {
            Normalization::PairwiseDiact => m[(i, j)] + m[(j, i)],
            Normalization::PairwiseTransfer => {
                let tr = matrix(DiactKind::Transfer)?;
                tr[(i, j)] + tr[(j, i)]
            }
            Normalization::PairwiseThroughflow => match basis {
                Basis::Flow => set.tau_in[i] + set.tau_in[j],
                Basis::Storage => set.x[i] + set.x[j],
            },
            Normalization::Global => match basis {
                Basis::Flow => set.tau_in.sum(),
                Basis::Storage => set.x.sum(),
            },
        };
        points.push(InteractionPoint {
            t,
            net,
            delta: Sign::of(net, set.eps),
            mu: ratio(net.abs(), den),
        });
    }
    Ok(InteractionReport {
        pair,
        kind,
        basis,
        source,
        normalization,
        points,
    })
}

/// Sign and strength between the terminal inflows of two chains, the
/// forward one delivering into `i` and the backward one into `j`,
/// normalized by `τ̌_i + τ̌_j`.
pub fn transient_interaction(
    forward: &TransientRecord,
    backward: &TransientRecord,
    grid: &[f64],
) -> Result<Vec<InteractionPoint>, InteractError> {
    let i = *forward.layout.tracked.last().unwrap();
    let j = *backward.layout.tracked.last().unwrap();
    let t0 = forward.t1.max(backward.t1);
    let t1 = forward.t_end().min(backward.t_end());
    grid.iter()
        .map(|&t| {
            if !(t >= t0 && t <= t1) {
                return Err(InteractError::Grid { t, t0, t1 });
            }
            let a = forward.nodes_at(t)?.last().unwrap().inflow;
            let b = backward.nodes_at(t)?.last().unwrap().inflow;
            let snap = forward.snapshot_at(t)?;
            let eps = crate::diact::threshold_epsilon(&snap.tau_out);
            let net = a - b;
            Ok(InteractionPoint {
                t,
                net,
                delta: Sign::of(net, eps),
                mu: ratio(net.abs(), snap.tau_in[i] + snap.tau_in[j]),
            })
        })
        .collect()
}
