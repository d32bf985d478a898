//! Compartmental system definitions, flow snapshots and structural validation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use thiserror::Error;

use crate::expr::{parse_expression, Env, EvalError, Expr, ParseError, Scope};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("cannot parse {location}: {source}")]
    Parse {
        location: String,
        #[source]
        source: ParseError,
    },
    #[error("negative initial stock {value} for compartment `{name}`")]
    NegativeInitial { name: String, value: f64 },
    #[error("evaluating {location}: {source}")]
    Eval {
        location: String,
        #[source]
        source: EvalError,
    },
}

/// A conservative compartmental system with expression-valued rates.
///
/// `flow_exprs[i][j]` is the flow from compartment `j` into compartment `i`.
#[derive(Debug, Clone)]
pub struct CompartmentalModel {
    pub n: usize,
    pub labels: Vec<String>,
    pub flow_exprs: Vec<Vec<Option<Expr>>>,
    pub input_exprs: Vec<Expr>,
    pub output_exprs: Vec<Expr>,
    pub param_names: Vec<String>,
    pub param_values: Vec<f64>,
    pub x_init: DVector<f64>,
}

/// Flow regime evaluated at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSnapshot {
    pub t: f64,
    pub f: DMatrix<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub tau_in: DVector<f64>,
    pub tau_out: DVector<f64>,
}

impl FlowSnapshot {
    /// Right-hand side of the aggregate balance, `τ̌ − τ̂`.
    pub fn net(&self) -> DVector<f64> {
        &self.tau_in - &self.tau_out
    }
}

/// Per-unit-storage rates at one `(t, x)`, with the small-storage guard applied.
#[derive(Debug, Clone)]
pub struct StorageIntensities {
    pub snapshot: FlowSnapshot,
    /// `q_ij = f_ij / x_j`.
    pub qx: DMatrix<f64>,
    /// `r_i⁻¹ = τ̂_i / x_i`.
    pub r_inv: DVector<f64>,
    /// `y_i / x_i`.
    pub y_per_x: DVector<f64>,
    pub eps: f64,
}

/// Storage threshold below which intensities are taken as factored limits.
pub fn storage_epsilon(x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    1e-12 * m.max(1.0)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    compartments: Compartments,
    #[serde(default)]
    flows: Vec<FlowEntry>,
    #[serde(default)]
    inputs: BTreeMap<String, Rate>,
    #[serde(default)]
    outputs: BTreeMap<String, Rate>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    initial: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Compartments {
    Count(usize),
    Names(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowEntry {
    from: String,
    to: String,
    expr: Rate,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Rate {
    Number(f64),
    Text(String),
}

impl Rate {
    fn source(&self) -> String {
        match self {
            Rate::Number(v) => format!("{v:?}"),
            Rate::Text(s) => s.clone(),
        }
    }
}

fn valid_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl CompartmentalModel {
    /// Parses a JSON model document.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        Self::from_document(doc)
    }

    fn from_document(doc: Document) -> Result<Self, ModelError> {
        let labels: Vec<String> = match doc.compartments {
            Compartments::Count(n) => (1..=n).map(|i| format!("x{i}")).collect(),
            Compartments::Names(names) => names,
        };
        let n = labels.len();
        if n == 0 {
            return Err(ModelError::Schema("compartment list is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if !valid_label(l) {
                return Err(ModelError::Schema(format!("invalid compartment name `{l}`")));
            }
            if labels[..i].contains(l) {
                return Err(ModelError::Schema(format!("duplicate compartment `{l}`")));
            }
            if doc.params.contains_key(l) {
                return Err(ModelError::Schema(format!(
                    "`{l}` is both a compartment and a parameter"
                )));
            }
        }
        for p in doc.params.keys() {
            if !valid_label(p) || p == "t" {
                return Err(ModelError::Schema(format!("invalid parameter name `{p}`")));
            }
        }

        let index_of = |name: &str, what: &str| -> Result<usize, ModelError> {
            labels
                .iter()
                .position(|l| l == name)
                .or_else(|| {
                    let i: usize = name.strip_prefix('x')?.parse().ok()?;
                    (1..=n).contains(&i).then(|| i - 1)
                })
                .ok_or_else(|| ModelError::Schema(format!("unknown compartment `{name}` in {what}")))
        };

        let aliases: Vec<(String, usize)> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let param_names: Vec<String> = doc.params.keys().cloned().collect();
        let param_values: Vec<f64> = doc.params.values().copied().collect();
        let scope = Scope::new(n).with_params(param_names.clone()).with_aliases(aliases);
        let compile = |rate: &Rate, location: String| -> Result<Expr, ModelError> {
            match rate {
                Rate::Number(v) => Ok(Expr::constant(*v)),
                Rate::Text(s) => parse_expression(s, &scope).map_err(|source| ModelError::Parse { location, source }),
            }
        };

        let mut flow_exprs = vec![vec![None; n]; n];
        for fe in &doc.flows {
            let j = index_of(&fe.from, "flows")?;
            let i = index_of(&fe.to, "flows")?;
            if flow_exprs[i][j].is_some() {
                return Err(ModelError::Schema(format!("duplicate flow {} -> {}", fe.from, fe.to)));
            }
            let loc = format!("flow {} -> {} (`{}`)", fe.from, fe.to, fe.expr.source());
            flow_exprs[i][j] = Some(compile(&fe.expr, loc)?);
        }

        let mut input_exprs = vec![Expr::constant(0.0); n];
        for (name, rate) in &doc.inputs {
            let i = index_of(name, "inputs")?;
            input_exprs[i] = compile(rate, format!("input of `{name}`"))?;
        }
        let mut output_exprs = vec![Expr::constant(0.0); n];
        for (name, rate) in &doc.outputs {
            let i = index_of(name, "outputs")?;
            output_exprs[i] = compile(rate, format!("output of `{name}`"))?;
        }
        let mut x_init = DVector::zeros(n);
        for (name, &v) in &doc.initial {
            let i = index_of(name, "initial")?;
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::NegativeInitial {
                    name: name.clone(),
                    value: v,
                });
            }
            x_init[i] = v;
        }

        Ok(CompartmentalModel {
            n,
            labels,
            flow_exprs,
            input_exprs,
            output_exprs,
            param_names,
            param_values,
            x_init,
        })
    }

    /// Name-resolution scope for expressions in this model.
    pub fn scope(&self) -> Scope {
        Scope::new(self.n)
            .with_params(self.param_names.clone())
            .with_aliases(self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect())
    }

    /// Replaces the input expressions.
    pub fn with_inputs(mut self, inputs: Vec<Expr>) -> Result<Self, ModelError> {
        if inputs.len() != self.n {
            return Err(ModelError::Schema(format!(
                "expected {} input expressions, got {}",
                self.n,
                inputs.len()
            )));
        }
        self.input_exprs = inputs;
        Ok(self)
    }

    /// Parses comma-separated input expressions and installs them.
    pub fn with_input_sources(self, sources: &str) -> Result<Self, ModelError> {
        let scope = self.scope();
        let parts = split_top_level(sources);
        let exprs = parts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse_expression(s, &scope).map_err(|source| ModelError::Parse {
                    location: format!("input override {}", i + 1),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.with_inputs(exprs)
    }

    pub fn with_initial(mut self, x: DVector<f64>) -> Self {
        self.x_init = x;
        self
    }

    pub fn has_flow(&self, to: usize, from: usize) -> bool {
        self.flow_exprs[to][from].is_some()
    }

    fn env<'a>(&'a self, t: f64, x: &'a [f64]) -> Env<'a> {
        Env {
            t,
            x,
            params: &self.param_values,
        }
    }

    fn flow_value(&self, i: usize, j: usize, env: &Env<'_>) -> Result<f64, ModelError> {
        match &self.flow_exprs[i][j] {
            None => Ok(0.0),
            Some(e) => e.evaluate(env).map_err(|source| ModelError::Eval {
                location: format!("flow {} -> {}", self.labels[j], self.labels[i]),
                source,
            }),
        }
    }

    pub fn inputs(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        let env = self.env(t, x);
        let mut z = DVector::zeros(self.n);
        for (i, e) in self.input_exprs.iter().enumerate() {
            z[i] = e.evaluate(&env).map_err(|source| ModelError::Eval {
                location: format!("input of `{}`", self.labels[i]),
                source,
            })?;
        }
        Ok(z)
    }

    pub fn outputs(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        let env = self.env(t, x);
        let mut y = DVector::zeros(self.n);
        for (i, e) in self.output_exprs.iter().enumerate() {
            y[i] = e.evaluate(&env).map_err(|source| ModelError::Eval {
                location: format!("output of `{}`", self.labels[i]),
                source,
            })?;
        }
        Ok(y)
    }

    pub fn flow_matrix(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let env = self.env(t, x);
        let mut f = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                f[(i, j)] = self.flow_value(i, j, &env)?;
            }
        }
        Ok(f)
    }

    /// Evaluates `F`, `z`, `y` and the throughflow vectors at `(t, x)`.
    pub fn evaluate_flows(&self, t: f64, x: &[f64]) -> Result<FlowSnapshot, ModelError> {
        let f = self.flow_matrix(t, x)?;
        let z = self.inputs(t, x)?;
        let y = self.outputs(t, x)?;
        let tau_in = &z + f.column_sum();
        let tau_out = &y + f.row_sum().transpose();
        Ok(FlowSnapshot {
            t,
            f,
            z,
            y,
            tau_in,
            tau_out,
        })
    }

    /// Aggregate right-hand side `ẋ = τ̌ − τ̂`.
    pub fn rhs(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        Ok(self.evaluate_flows(t, x)?.net())
    }

    /// Per-unit-storage intensities. When `x_j ≤ ε` the ratio `f_ij/x_j` is
    /// taken as `f_ij(x_j = ε)/ε`, and as 0 if that is not finite.
    pub fn storage_intensities(&self, t: f64, x: &[f64]) -> Result<StorageIntensities, ModelError> {
        let n = self.n;
        let snapshot = self.evaluate_flows(t, x)?;
        let eps = storage_epsilon(x);
        let mut qx = DMatrix::zeros(n, n);
        let mut r_inv = DVector::zeros(n);
        let mut y_per_x = DVector::zeros(n);
        let mut probe = x.to_vec();
        for j in 0..n {
            if x[j] > eps {
                for i in 0..n {
                    qx[(i, j)] = snapshot.f[(i, j)] / x[j];
                }
                r_inv[j] = snapshot.tau_out[j] / x[j];
                y_per_x[j] = snapshot.y[j] / x[j];
            } else {
                probe[j] = eps;
                let env = self.env(t, &probe);
                let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
                let mut out = 0.0;
                for i in 0..n {
                    let q = finite(self.flow_value(i, j, &env)? / eps);
                    qx[(i, j)] = q;
                    out += q;
                }
                let yv = self.output_exprs[j].evaluate(&env).map_err(|source| ModelError::Eval {
                    location: format!("output of `{}`", self.labels[j]),
                    source,
                })?;
                y_per_x[j] = finite(yv / eps);
                r_inv[j] = y_per_x[j] + out;
                probe[j] = x[j];
            }
        }
        Ok(StorageIntensities {
            snapshot,
            qx,
            r_inv,
            y_per_x,
            eps,
        })
    }
}

/// Splits on commas that are not nested inside parentheses.
pub fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    parts.push(cur.trim().to_string());
    parts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotRequired,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotRequired => "not-required",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub details: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub conservative: CheckResult,
    pub factorable: CheckResult,
    pub strong_form: CheckResult,
    pub nonnegative: CheckResult,
}

impl ValidationReport {
    /// True when every required check passed.
    pub fn ok(&self) -> bool {
        [
            &self.conservative,
            &self.factorable,
            &self.strong_form,
            &self.nonnegative,
        ]
        .iter()
        .all(|c| c.status != CheckStatus::Fail)
    }

    pub fn checks(&self) -> [&CheckResult; 4] {
        [
            &self.conservative,
            &self.factorable,
            &self.strong_form,
            &self.nonnegative,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    pub require_strong_form: bool,
}

/// `x_init` (if nonzero) plus `count` random positive states at `t = 0`.
pub fn default_probes(model: &CompartmentalModel, count: usize, seed: u64) -> Vec<(f64, DVector<f64>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut probes = Vec::new();
    if model.x_init.iter().all(|&v| v > 0.0) {
        probes.push((0.0, model.x_init.clone()));
    }
    for _ in 0..count {
        let x = DVector::from_fn(model.n, |_, _| rng.random_range(0.1..5.0));
        let t = rng.random_range(0.0..20.0);
        probes.push((t, x));
    }
    probes
}

const SMALL_STEPS: [f64; 3] = [1e-4, 1e-6, 1e-8];

fn ratio_diverges(r: &[f64; 3]) -> bool {
    if r.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let base = r[0].abs().max(1.0);
    r[2].abs() > 100.0 * base
}

/// Sampling-based structural checks. Failures are reported, never raised,
/// except for evaluation errors at the probes themselves.
pub fn validate_model(
    model: &CompartmentalModel,
    probes: &[(f64, DVector<f64>)],
    opts: ValidationOptions,
) -> Result<ValidationReport, ModelError> {
    let n = model.n;
    let mut cons = Vec::new();
    let mut fact = Vec::new();
    let mut strong = Vec::new();
    let mut nonneg = Vec::new();

    for (t, x) in probes {
        let xs = x.as_slice();
        let snap = model.evaluate_flows(*t, xs)?;
        let f = &snap.f;
        // With z = y = 0 the balance is Σ_i (Σ_j f_ij − Σ_j f_ji).
        let internal_in = f.column_sum();
        let internal_out = f.row_sum().transpose();
        let total: f64 = (&internal_in - &internal_out).sum();
        let agg_in = f.sum();
        let agg_out = f.transpose().sum();
        let scale = agg_in.abs().max(1.0);
        if total.abs() > 1e-9 * scale || (agg_in - agg_out).abs() > 1e-9 * scale {
            cons.push(format!("t={t}: internal balance residual {total:e}"));
        }
        for i in 0..n {
            if snap.z[i] < 0.0 || snap.y[i] < 0.0 {
                nonneg.push(format!("t={t}: negative input/output at {}", model.labels[i]));
            }
            for j in 0..n {
                if f[(i, j)] < 0.0 {
                    nonneg.push(format!(
                        "t={t}: negative flow {} -> {}",
                        model.labels[j], model.labels[i]
                    ));
                }
            }
        }

        for i in 0..n {
            for j in 0..n {
                if model.flow_exprs[i][j].is_none() {
                    continue;
                }
                let mut probe = x.clone();
                let mut ratios = [0.0; 3];
                for (s, h) in SMALL_STEPS.iter().enumerate() {
                    probe[j] = *h;
                    let v = model.flow_matrix(*t, probe.as_slice())?[(i, j)];
                    ratios[s] = v / h;
                }
                if ratio_diverges(&ratios) {
                    fact.push(format!(
                        "t={t}: f({} -> {})/x_{} diverges as x_{}→0",
                        model.labels[j],
                        model.labels[i],
                        j + 1,
                        j + 1
                    ));
                }
                if opts.require_strong_form && i != j {
                    let mut probe = x.clone();
                    let mut ratios = [0.0; 3];
                    for (s, h) in SMALL_STEPS.iter().enumerate() {
                        probe[i] = *h;
                        let v = model.flow_matrix(*t, probe.as_slice())?[(i, j)];
                        ratios[s] = v / (h * probe[j]);
                    }
                    if ratio_diverges(&ratios) {
                        strong.push(format!(
                            "t={t}: f({} -> {})/(x_{} x_{}) diverges as x_{}→0",
                            model.labels[j],
                            model.labels[i],
                            i + 1,
                            j + 1,
                            i + 1
                        ));
                    }
                }
            }
        }
    }

    let result = |name, details: Vec<String>| CheckResult {
        name,
        status: if details.is_empty() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        details,
    };
    let strong_form = if opts.require_strong_form {
        result("strong-form", dedup(strong))
    } else {
        CheckResult {
            name: "strong-form",
            status: CheckStatus::NotRequired,
            details: vec![],
        }
    };
    Ok(ValidationReport {
        conservative: result("conservative", cons),
        factorable: result("factorable", dedup(fact)),
        strong_form,
        nonnegative: result("nonnegative", nonneg),
    })
}

fn dedup(mut v: Vec<String>) -> Vec<String> {
    // Keep only the first message per flow; probes repeat the same failure.
    let mut seen = std::collections::BTreeSet::new();
    v.retain(|s| {
        let key = s.split_once(": ").map_or(s.as_str(), |(_, r)| r).to_string();
        seen.insert(key)
    });
    v
}
