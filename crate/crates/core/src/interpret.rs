//! Edge attribution, structural pruning, symbolic regression of edge
//! functions and sampled edge shapes for plotting.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::format::num;
use crate::hazard::clamp_log_hazard;
use crate::kan::{edge_activation_norms, EdgeFunction, KanLayer, KanNetwork};
use crate::linalg::{r_squared, simple_ols, solve};

/// Name used for the time input in formulas and selectors.
pub const TIME_NAME: &str = "time";

/// Penalty subtracted from the R² of every non-linear candidate.
pub const COMPLEXITY_PENALTY: f64 = 0.005;

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttribution {
    pub layer: usize,
    pub output: usize,
    pub input: usize,
    pub score: f64,
}

/// Batch-mean `|phi|` of every edge over normalized `[z, tau]` inputs,
/// highest first.
pub fn attribute(net: &KanNetwork, inputs: &[Vec<f64>]) -> Result<Vec<EdgeAttribution>> {
    let norms = edge_activation_norms(net, inputs)?;
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        for j in 0..layer.out_width() {
            for i in 0..layer.in_width() {
                out.push(EdgeAttribution {
                    layer: l,
                    output: j,
                    input: i,
                    score: norms[l][j * layer.in_width() + i],
                });
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Deactivates every edge whose attribution falls below `threshold` times its
/// layer's largest attribution, then drops hidden nodes left without an
/// incoming or outgoing edge. The input network is not modified.
pub fn prune(net: &KanNetwork, inputs: &[Vec<f64>], threshold: f64) -> Result<KanNetwork> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(invalid(format!("prune threshold must be non-negative, got {threshold}")));
    }
    let norms = edge_activation_norms(net, inputs)?;
    let mut layers: Vec<KanLayer> = net.layers().to_vec();
    for (layer, scores) in layers.iter_mut().zip(&norms) {
        let cutoff = threshold * scores.iter().copied().fold(0.0, f64::max);
        for j in 0..layer.out_width() {
            for i in 0..layer.in_width() {
                let s = scores[j * layer.in_width() + i];
                if s < cutoff || (threshold > 0.0 && s == 0.0) {
                    layer.edge_mut(j, i).deactivate();
                }
            }
        }
    }
    let layers = drop_dead_nodes(layers);
    let alive = layers
        .iter()
        .all(|l| l.edges().iter().any(|e| e.active));
    if !alive {
        return Err(Error::OverPruned(format!("threshold {threshold} leaves no path to the output")));
    }
    KanNetwork::new(layers, net.normalizer().clone(), net.time_scale())
}

fn drop_dead_nodes(mut layers: Vec<KanLayer>) -> Vec<KanLayer> {
    loop {
        let mut changed = false;
        for l in 0..layers.len().saturating_sub(1) {
            let (head, tail) = layers.split_at_mut(l + 1);
            let (left, right) = (&mut head[l], &mut tail[0]);
            let width = left.out_width();
            let keep: Vec<usize> = (0..width)
                .filter(|&h| {
                    let incoming = (0..left.in_width()).any(|i| left.edge(h, i).active);
                    let outgoing = (0..right.out_width()).any(|j| right.edge(j, h).active);
                    incoming && outgoing
                })
                .collect();
            if keep.len() == width || keep.is_empty() {
                continue;
            }
            let new_left: Vec<EdgeFunction> = keep
                .iter()
                .flat_map(|&h| (0..left.in_width()).map(move |i| (h, i)))
                .map(|(h, i)| left.edge(h, i).clone())
                .collect();
            let new_right: Vec<EdgeFunction> = (0..right.out_width())
                .flat_map(|j| keep.iter().map(move |&h| (j, h)))
                .map(|(j, h)| right.edge(j, h).clone())
                .collect();
            *left = KanLayer::new(left.in_width(), keep.len(), new_left).expect("consistent widths");
            *right = KanLayer::new(keep.len(), right.out_width(), new_right).expect("consistent widths");
            changed = true;
        }
        if !changed {
            return layers;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Linear,
    Quadratic,
    Sqrt,
    Exp,
    Log,
    Sin,
    Tanh,
    Abs,
    Reciprocal,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 9] = [
        FunctionKind::Linear,
        FunctionKind::Quadratic,
        FunctionKind::Sqrt,
        FunctionKind::Exp,
        FunctionKind::Log,
        FunctionKind::Sin,
        FunctionKind::Tanh,
        FunctionKind::Abs,
        FunctionKind::Reciprocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::Sqrt => "sqrt",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Sin => "sin",
            Self::Tanh => "tanh",
            Self::Abs => "abs",
            Self::Reciprocal => "reciprocal",
        }
    }

    /// `None` outside the function's domain.
    pub fn apply(self, u: f64) -> Option<f64> {
        let v = match self {
            Self::Linear => u,
            Self::Quadratic => u * u,
            Self::Sqrt if u >= 0.0 => u.sqrt(),
            Self::Exp if u.abs() <= 50.0 => u.exp(),
            Self::Log if u > 0.0 => u.ln(),
            Self::Sin => u.sin(),
            Self::Tanh => u.tanh(),
            Self::Abs => u.abs(),
            Self::Reciprocal if u.abs() >= 1e-8 => 1.0 / u,
            _ => return None,
        };
        v.is_finite().then_some(v)
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `outer_scale * kind(inner_scale * x + inner_shift) + outer_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTerm {
    pub kind: FunctionKind,
    pub input: String,
    pub inner_scale: f64,
    pub inner_shift: f64,
    pub outer_scale: f64,
    pub outer_shift: f64,
    pub r_squared: f64,
}

impl SymbolicTerm {
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind.apply(self.inner_scale * x + self.inner_shift) {
            Some(v) => self.outer_scale * v + self.outer_shift,
            None => f64::NAN,
        }
    }
}

struct Fit {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    r2: f64,
}

fn fit_outer(kind: FunctionKind, a: f64, b: f64, x: &[f64], y: &[f64]) -> Option<Fit> {
    if kind == FunctionKind::Reciprocal {
        // the pole must stay outside the sampled interval, not merely between samples
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if (a * lo + b) * (a * hi + b) <= 0.0 {
            return None;
        }
    }
    let u: Option<Vec<f64>> = x.iter().map(|&v| kind.apply(a * v + b)).collect();
    let u = u?;
    let (c, d) = simple_ols(&u, y)?;
    let fitted: Vec<f64> = u.iter().map(|v| c * v + d).collect();
    let r2 = r_squared(y, &fitted);
    r2.is_finite().then_some(Fit { a, b, c, d, r2 })
}

fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<Fit> {
    // y = alpha x^2 + beta x + gamma = alpha (x + beta / 2 alpha)^2 + const
    let mut ata = vec![vec![0.0; 3]; 3];
    let mut aty = vec![0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let row = [xi * xi, xi, 1.0];
        for r in 0..3 {
            aty[r] += row[r] * yi;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let sol = solve(ata, aty)?;
    let (alpha, beta, gamma) = (sol[0], sol[1], sol[2]);
    if alpha.abs() < 1e-12 {
        return None;
    }
    let b = beta / (2.0 * alpha);
    let d = gamma - alpha * b * b;
    let fitted: Vec<f64> = x.iter().map(|&v| alpha * (v + b).powi(2) + d).collect();
    Some(Fit {
        a: 1.0,
        b,
        c: alpha,
        d,
        r2: r_squared(y, &fitted),
    })
}

/// Starting `(a, b)` pairs for each kind, laid out relative to the sample range.
fn seeds(kind: FunctionKind, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let s = hi - lo;
    let offsets = [0.0, 1e-3, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
    let one_sided = |allow_zero: bool| -> Vec<(f64, f64)> {
        offsets
            .iter()
            .filter(|&&r| allow_zero || r > 0.0)
            .flat_map(|&r| [(1.0 / s, -(lo - r * s) / s), (-1.0 / s, (hi + r * s) / s)])
            .collect()
    };
    match kind {
        FunctionKind::Linear | FunctionKind::Quadratic => Vec::new(),
        FunctionKind::Sqrt => one_sided(true),
        FunctionKind::Log | FunctionKind::Reciprocal => one_sided(false),
        FunctionKind::Exp => [-8.0, -4.0, -2.0, -1.0, -0.3, 0.3, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&w| (w / s, -w / s * 0.5 * (lo + hi)))
            .collect(),
        FunctionKind::Sin => {
            let mut v = Vec::new();
            for w in [0.5, 1.0, 2.0, 3.0, 4.5, 6.0, 8.0] {
                for p in 0..8 {
                    let a = w / s;
                    v.push((a, p as f64 * std::f64::consts::FRAC_PI_4 - a * lo));
                }
            }
            v
        }
        FunctionKind::Tanh => {
            let mut v = Vec::new();
            for w in [1.0, 3.0, 6.0, 12.0] {
                for k in [-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5] {
                    let a = w / s;
                    v.push((a, -a * (lo + k * s)));
                }
            }
            v
        }
        FunctionKind::Abs => (1..10).map(|k| (1.0, -(lo + 0.1 * k as f64 * s))).collect(),
    }
}

/// Nelder-Mead over `(a, b)`, maximizing `score`.
fn refine(start: (f64, f64), step: (f64, f64), score: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let value = |p: [f64; 2]| {
        let v = score(p[0], p[1]);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex = [
        [start.0, start.1],
        [start.0 + step.0, start.1],
        [start.0, start.1 + step.1],
    ];
    let mut f = simplex.map(value);
    for _ in 0..300 {
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| f[i].total_cmp(&f[j]));
        simplex = order.map(|i| simplex[i]);
        f = order.map(|i| f[i]);
        if (f[2] - f[0]).abs() <= 1e-13 * (1.0 + f[0].abs()) && f[0].is_finite() {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| -> [f64; 2] {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let r = along(-1.0);
        let fr = value(r);
        if fr < f[0] {
            let e = along(-2.0);
            let fe = value(e);
            if fe < fr {
                simplex[2] = e;
                f[2] = fe;
            } else {
                simplex[2] = r;
                f[2] = fr;
            }
        } else if fr < f[1] {
            simplex[2] = r;
            f[2] = fr;
        } else {
            let c = if fr < f[2] { along(-0.5) } else { along(0.5) };
            let fc = value(c);
            if fc < f[2].min(fr) {
                simplex[2] = c;
                f[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    f[k] = value(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| f[i].total_cmp(&f[j])).unwrap();
    (simplex[best][0], simplex[best][1])
}

fn fit_kind(kind: FunctionKind, x: &[f64], y: &[f64], lo: f64, hi: f64) -> Option<Fit> {
    match kind {
        FunctionKind::Linear => return fit_outer(kind, 1.0, 0.0, x, y),
        FunctionKind::Quadratic => return quadratic_fit(x, y),
        _ => {}
    }
    let start = seeds(kind, lo, hi)
        .into_iter()
        .filter_map(|(a, b)| fit_outer(kind, a, b, x, y))
        .max_by(|p, q| p.r2.total_cmp(&q.r2))?;
    let s = hi - lo;
    let step = (0.1 * start.a.abs().max(1e-3 / s), 0.1 * (start.a.abs() * s).max(1e-3));
    let (a, b) = refine((start.a, start.b), step, |a, b| {
        fit_outer(kind, a, b, x, y).map_or(f64::NEG_INFINITY, |f| f.r2)
    });
    match fit_outer(kind, a, b, x, y) {
        Some(f) if f.r2 >= start.r2 => Some(f),
        _ => Some(start),
    }
}

/// Fits every kind in the library to the edge sampled at `samples` and keeps
/// the one with the best R² after the non-linear complexity penalty.
pub fn fit_symbolic_term(edge: &EdgeFunction, samples: &[f64]) -> Result<SymbolicTerm> {
    if samples.len() < 20 {
        return Err(invalid(format!("symbolic fit needs at least 20 samples, got {}", samples.len())));
    }
    let y = samples.iter().map(|&x| edge.eval(x)).collect::<Result<Vec<_>>>()?;
    fit_symbolic(samples, &y)
}

/// Best fit of one function kind, without the selection penalty.
pub fn fit_symbolic_kind(kind: FunctionKind, x: &[f64], y: &[f64]) -> Result<SymbolicTerm> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || x.len() != y.len() {
        return Err(Error::Unfittable("samples do not span a range".into()));
    }
    let fit = fit_kind(kind, x, y, lo, hi).ok_or_else(|| Error::Unfittable(format!("{kind} does not fit")))?;
    Ok(SymbolicTerm {
        kind,
        input: String::new(),
        inner_scale: fit.a,
        inner_shift: fit.b,
        outer_scale: fit.c,
        outer_shift: fit.d,
        r_squared: fit.r2,
    })
}

/// Symbolic fit of arbitrary `(x, y)` samples.
pub fn fit_symbolic(x: &[f64], y: &[f64]) -> Result<SymbolicTerm> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs()))) {
        return Err(Error::Unfittable("samples do not span a range".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if y.iter().all(|v| (v - mean).abs() <= 1e-14 * (1.0 + mean.abs())) {
        return Ok(SymbolicTerm {
            kind: FunctionKind::Linear,
            input: String::new(),
            inner_scale: 1.0,
            inner_shift: 0.0,
            outer_scale: 0.0,
            outer_shift: mean,
            r_squared: 1.0,
        });
    }
    let mut best: Option<(f64, FunctionKind, Fit)> = None;
    for kind in FunctionKind::ALL {
        let Some(fit) = fit_kind(kind, x, y, lo, hi) else {
            continue;
        };
        let penalty = if kind == FunctionKind::Linear { 0.0 } else { COMPLEXITY_PENALTY };
        let score = fit.r2 - penalty;
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, kind, fit));
        }
    }
    let (_, kind, fit) = best.ok_or_else(|| Error::Unfittable("no candidate function fits".into()))?;
    Ok(SymbolicTerm {
        kind,
        input: String::new(),
        inner_scale: fit.a,
        inner_shift: fit.b,
        outer_scale: fit.c,
        outer_shift: fit.d,
        r_squared: fit.r2,
    })
}

/// Additive closed-form log-hazard in raw feature and time units:
/// `log h(t | x) = constant + sum_k term_k(input_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub constant: f64,
    pub fidelity: f64,
    pub terms: Vec<SymbolicTerm>,
}

impl SymbolicModel {
    /// `features` and `time` in raw units, ordered as in `feature_names`.
    pub fn eval(&self, feature_names: &[String], features: &[f64], time: f64) -> Result<f64> {
        let mut total = self.constant;
        for t in &self.terms {
            let x = if t.input == TIME_NAME {
                time
            } else {
                let k = feature_names
                    .iter()
                    .position(|n| *n == t.input)
                    .ok_or_else(|| Error::NotFound(format!("input `{}`", t.input)))?;
                features[k]
            };
            total += t.eval(x);
        }
        Ok(total)
    }

    /// `log h(t | x) = ...` in the style of a hand-written formula.
    pub fn to_text(&self) -> String {
        let mut s = String::from("log h(t | x) =");
        let mut first = true;
        let mut push = |s: &mut String, coef: f64, body: String| {
            let sign = if coef < 0.0 { "-" } else { "+" };
            if first {
                let lead = if coef < 0.0 { " -" } else { "" };
                write!(s, "{lead} {} {body}", short(coef.abs())).unwrap();
                first = false;
            } else {
                write!(s, " {sign} {} {body}", short(coef.abs())).unwrap();
            }
        };
        for t in &self.terms {
            if t.outer_scale == 0.0 {
                continue;
            }
            let inner = inner_text(t.inner_scale, t.inner_shift, &t.input);
            match t.kind {
                FunctionKind::Linear => push(&mut s, t.outer_scale * t.inner_scale, format!("({})", t.input)),
                FunctionKind::Quadratic => push(&mut s, t.outer_scale, format!("({inner})^2")),
                FunctionKind::Abs => push(&mut s, t.outer_scale, format!("|{inner}|")),
                FunctionKind::Reciprocal => push(&mut s, t.outer_scale, format!("1/({inner})")),
                k => push(&mut s, t.outer_scale, format!("{}({inner})", k.name())),
            }
        }
        let linear_shift: f64 = self
            .terms
            .iter()
            .filter(|t| t.kind == FunctionKind::Linear)
            .map(|t| t.outer_scale * t.inner_shift)
            .sum();
        let c = self.constant + linear_shift;
        if first {
            write!(s, " {}", short(c)).unwrap();
        } else {
            write!(s, " {} {}", if c < 0.0 { "-" } else { "+" }, short(c.abs())).unwrap();
        }
        s.push('\n');
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("symbolic model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("formula: {e}")))
    }
}

fn short(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn inner_text(a: f64, b: f64, name: &str) -> String {
    let mut s = format!("{} ({name})", short(a));
    if b != 0.0 {
        write!(s, " {} {}", if b < 0.0 { "-" } else { "+" }, short(b.abs())).unwrap();
    }
    s
}

/// Extracts an additive formula from a single-layer network. `inputs` are the
/// normalized `[z, tau]` training rows; each surviving edge is fitted on the
/// values its input takes there, rewritten in raw units, and its outer shift
/// is folded into the constant (together with the `-ln t_max` unit change).
pub fn extract_formula(net: &KanNetwork, inputs: &[Vec<f64>]) -> Result<SymbolicModel> {
    if net.layers().len() != 1 {
        return Err(Error::UnsupportedShape(format!(
            "formula extraction needs a single-layer network, got widths {:?}",
            net.widths()
        )));
    }
    if inputs.is_empty() {
        return Err(invalid("formula extraction needs training inputs"));
    }
    let layer = &net.layers()[0];
    let d = net.feature_count();
    let norm = net.normalizer();
    for row in inputs {
        if row.len() != d + 1 {
            return Err(Error::Dimension {
                context: "formula input row",
                expected: d + 1,
                got: row.len(),
            });
        }
    }
    let mut constant = -net.time_scale().ln();
    let mut terms = Vec::new();
    for i in 0..=d {
        let edge = layer.edge(0, i);
        if !edge.active {
            continue;
        }
        let xs: Vec<f64> = inputs.iter().map(|r| r[i]).collect();
        let mut term = match fit_symbolic_term(edge, &xs) {
            Ok(t) => t,
            // an input that never varies contributes a constant
            Err(Error::Unfittable(_)) => {
                constant += edge.eval(xs[0])?;
                continue;
            }
            Err(e) => return Err(e),
        };
        // a z + b with z = (x - mean) / scale
        let (mean, scale, name) = if i == d {
            (0.0, net.time_scale(), TIME_NAME.to_string())
        } else {
            (norm.means[i], norm.stds[i], norm.names[i].clone())
        };
        term.inner_shift -= term.inner_scale * mean / scale;
        term.inner_scale /= scale;
        term.input = name;
        constant += term.outer_shift;
        term.outer_shift = 0.0;
        terms.push(term);
    }
    let mut model = SymbolicModel {
        constant,
        fidelity: f64::NAN,
        terms,
    };
    model.fidelity = fidelity(net, &model, inputs)?;
    Ok(model)
}

/// R² of the model against the network's raw-time log-hazard on `inputs`.
pub fn fidelity(net: &KanNetwork, model: &SymbolicModel, inputs: &[Vec<f64>]) -> Result<f64> {
    let d = net.feature_count();
    let norm = net.normalizer();
    let mut observed = Vec::with_capacity(inputs.len());
    let mut fitted = Vec::with_capacity(inputs.len());
    for row in inputs {
        observed.push(clamp_log_hazard(net.forward_normalized(row)) - net.time_scale().ln());
        let raw: Vec<f64> = (0..d).map(|k| norm.means[k] + norm.stds[k] * row[k]).collect();
        fitted.push(model.eval(&norm.names, &raw, row[d] * net.time_scale())?);
    }
    Ok(r_squared(&observed, &fitted))
}

/// Which edge to sample: explicit coordinates, or a layer-0 input by name
/// (a feature name or `time`) on output 0.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeSelector {
    Index { layer: usize, output: usize, input: usize },
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSample {
    pub normalized: f64,
    pub raw: f64,
    pub value: f64,
}

fn resolve(net: &KanNetwork, selector: &EdgeSelector) -> Result<(usize, usize, usize)> {
    let (l, j, i) = match selector {
        EdgeSelector::Index { layer, output, input } => (*layer, *output, *input),
        EdgeSelector::Input(name) => {
            let d = net.feature_count();
            let i = if name == TIME_NAME {
                d
            } else {
                net.normalizer()
                    .names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::NotFound(format!("input `{name}`")))?
            };
            (0, 0, i)
        }
    };
    let layer = net
        .layers()
        .get(l)
        .ok_or_else(|| Error::NotFound(format!("layer {l}")))?;
    if j >= layer.out_width() || i >= layer.in_width() {
        return Err(Error::NotFound(format!("edge ({l}, {j}, {i})")));
    }
    Ok((l, j, i))
}

/// `n_points` uniform samples of an edge across its grid domain (the
/// observed input range at initialization).
pub fn export_edge_samples(net: &KanNetwork, selector: &EdgeSelector, n_points: usize) -> Result<Vec<EdgeSample>> {
    if n_points < 2 {
        return Err(invalid("edge export needs at least 2 points"));
    }
    let (l, j, i) = resolve(net, selector)?;
    let edge = net.layers()[l].edge(j, i);
    let (lo, hi) = (edge.grid.lower(), edge.grid.upper());
    let d = net.feature_count();
    let to_raw = |z: f64| match (l, i) {
        (0, i) if i == d => z * net.time_scale(),
        (0, i) => net.normalizer().means[i] + net.normalizer().stds[i] * z,
        _ => z,
    };
    (0..n_points)
        .map(|q| {
            let z = if q == n_points - 1 {
                hi
            } else {
                lo + (hi - lo) * q as f64 / (n_points - 1) as f64
            };
            Ok(EdgeSample {
                normalized: z,
                raw: to_raw(z),
                value: edge.eval(z)?,
            })
        })
        .collect()
}

pub fn edge_samples_table(samples: &[EdgeSample]) -> String {
    let mut s = String::from("x_normalized,x_raw,phi\n");
    for p in samples {
        writeln!(s, "{},{},{}", num(p.normalized), num(p.raw), num(p.value)).unwrap();
    }
    s
}

pub fn attribution_table(net: &KanNetwork, scores: &[EdgeAttribution]) -> String {
    let d = net.feature_count();
    let mut s = String::from("layer,output,input,name,score\n");
    for a in scores {
        let name = match a.layer {
            0 if a.input == d => TIME_NAME.to_string(),
            0 => net.normalizer().names[a.input].clone(),
            _ => format!("h{}", a.input),
        };
        writeln!(s, "{},{},{},{},{}", a.layer, a.output, a.input, csv_field(&name), num(a.score)).unwrap();
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::{Architecture, BaseKind, FeatureNormalizer};
    use crate::splines::SplineGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_net(d: usize, weights: &[f64]) -> KanNetwork {
        let arch = Architecture {
            hidden: 0,
            grid_intervals: 4,
            base: BaseKind::Identity,
        };
        let mut net = KanNetwork::zeros((0..d).map(|k| format!("x{}", k + 1)).collect(), arch, 1.0).unwrap();
        for (i, &w) in weights.iter().enumerate() {
            net.layers_mut()[0].edge_mut(0, i).base_weight = w;
        }
        net
    }

    fn random_inputs(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn random_net(hidden: usize, seed: u64) -> (KanNetwork, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_inputs(40, 4, seed + 1);
        let arch = Architecture {
            hidden,
            grid_intervals: 4,
            base: BaseKind::Silu,
        };
        let norm = FeatureNormalizer::identity(vec!["a".into(), "b".into(), "c".into()]);
        (KanNetwork::initialize(arch, norm, 1.0, &inputs, &mut rng).unwrap(), inputs)
    }

    /// Edge whose spline is the least-squares projection of `f` on `[lo, hi]`.
    fn projected_edge(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> EdgeFunction {
        let grid = SplineGrid::new(lo, hi, 12).unwrap();
        let coefficients = grid.project(&f, 400);
        EdgeFunction::new(grid, coefficients, 0.0, 1.0, BaseKind::Identity).unwrap()
    }

    fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn reciprocal_never_straddles_its_pole() {
        let x: Vec<f64> = (0..60).map(|k| k as f64 / 59.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.0 / (v - 0.505)).collect();
        if let Ok(t) = fit_symbolic_kind(FunctionKind::Reciprocal, &x, &y) {
            let ends = (t.inner_scale * 0.0 + t.inner_shift) * (t.inner_scale + t.inner_shift);
            assert!(ends > 0.0);
        }
    }

    #[test]
    fn attribution_oracles() {
        let zero = identity_net(2, &[0.0, 0.0, 0.0]);
        let inputs = random_inputs(10, 3, 1);
        assert!(attribute(&zero, &inputs).unwrap().iter().all(|a| a.score == 0.0));
        let one = identity_net(2, &[1.0, 0.0, 0.0]);
        let top = attribute(&one, &inputs).unwrap()[0];
        let expect = inputs.iter().map(|r| r[0].abs()).sum::<f64>() / 10.0;
        assert_eq!((top.layer, top.output, top.input), (0, 0, 0));
        assert!((top.score - expect).abs() < 1e-15);
        assert!(attribute(&one, &[]).is_err());
    }

    #[test]
    fn attribution_matches_direct_summation() {
        for hidden in [0, 2] {
            let (net, inputs) = random_net(hidden, 9);
            let scores = attribute(&net, &inputs).unwrap();
            assert!(scores.windows(2).all(|w| w[0].score >= w[1].score));
            for a in &scores {
                let mut sum = 0.0;
                for row in &inputs {
                    // activation entering layer a.layer, computed by hand
                    let mut act = row.clone();
                    for layer in &net.layers()[..a.layer] {
                        act = (0..layer.out_width())
                            .map(|j| (0..layer.in_width()).map(|i| layer.edge(j, i).eval(act[i]).unwrap()).sum())
                            .collect();
                    }
                    sum += net.layers()[a.layer].edge(a.output, a.input).eval(act[a.input]).unwrap().abs();
                }
                assert!((a.score - sum / inputs.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prune_thresholds() {
        let (net, inputs) = random_net(2, 3);
        assert_eq!(prune(&net, &inputs, 0.0).unwrap(), net);
        assert!(matches!(prune(&net, &inputs, 1.0 + 1e-9), Err(Error::OverPruned(_))));
        assert!(prune(&net, &inputs, -0.1).is_err());
    }

    #[test]
    fn prune_removes_weak_edges_and_bounds_deviation() {
        let net = identity_net(3, &[1.0, 0.01, 0.5, 0.02]);
        let inputs = random_inputs(50, 4, 2);
        let pruned = prune(&net, &inputs, 0.05).unwrap();
        let active: Vec<bool> = pruned.layers()[0].edges().iter().map(|e| e.active).collect();
        assert_eq!(active, vec![true, false, true, false]);
        assert!(net.layers()[0].edges().iter().all(|e| e.active));
        // mean absolute deviation is bounded by the pruned scores
        let scores = attribute(&net, &inputs).unwrap();
        let removed: f64 = scores.iter().filter(|a| a.input == 1 || a.input == 3).map(|a| a.score).sum();
        let dev = inputs
            .iter()
            .map(|r| (net.forward_normalized(r) - pruned.forward_normalized(r)).abs())
            .sum::<f64>()
            / inputs.len() as f64;
        assert!(dev <= removed + 1e-12);
    }

    #[test]
    fn dead_hidden_nodes_are_dropped() {
        let (mut net, inputs) = random_net(3, 5);
        // silence everything leaving hidden node 1
        net.layers_mut()[1].edge_mut(0, 1).deactivate();
        let pruned = prune(&net, &inputs, 0.0).unwrap();
        assert_eq!(pruned.widths(), vec![4, 2, 1]);
        for row in &inputs {
            assert!((pruned.forward_normalized(row) - net.forward_normalized(row)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_edge_is_recovered_up_to_gauge() {
        let grid = SplineGrid::new(-1.0, 1.0, 5).unwrap();
        let edge = EdgeFunction::new(grid, vec![0.0; 7], 2.0, 0.0, BaseKind::Identity).unwrap();
        let shifted = EdgeFunction {
            coefficients: vec![1.0; 7],
            spline_weight: 1.0,
            ..edge
        };
        let t = fit_symbolic_term(&shifted, &uniform(-1.0, 1.0, 50)).unwrap();
        assert_eq!(t.kind, FunctionKind::Linear);
        assert!((t.outer_scale * t.inner_scale - 2.0).abs() < 1e-3);
        assert!((t.outer_scale * t.inner_shift + t.outer_shift - 1.0).abs() < 1e-3);
        assert!(t.r_squared >= 0.999);
    }

    #[test]
    fn projected_shapes_are_recognized() {
        let sin = projected_edge(|x| (3.0 * x).sin(), -1.0, 1.0);
        let t = fit_symbolic_term(&sin, &uniform(-1.0, 1.0, 200)).unwrap();
        assert_eq!(t.kind, FunctionKind::Sin);
        assert!(t.r_squared >= 0.99);
        // on [0, 3] a line already explains more than 1 - penalty of sqrt(x + 2),
        // so the kind is checked unpenalized there and selected on a wider range
        let sqrt = projected_edge(|x| (x + 2.0).sqrt(), 0.0, 3.0);
        let x = uniform(0.0, 3.0, 200);
        let y: Vec<f64> = x.iter().map(|&v| sqrt.eval(v).unwrap()).collect();
        let t = fit_symbolic_kind(FunctionKind::Sqrt, &x, &y).unwrap();
        assert!(t.r_squared >= 0.99);
        let line = fit_symbolic_kind(FunctionKind::Linear, &x, &y).unwrap();
        assert!(line.r_squared > 1.0 - COMPLEXITY_PENALTY);
        let wide = projected_edge(|x| (x + 2.0).sqrt(), -2.0, 3.0);
        let t = fit_symbolic_term(&wide, &uniform(-2.0, 3.0, 200)).unwrap();
        assert_eq!(t.kind, FunctionKind::Sqrt, "{t:?}");
        assert!(t.r_squared >= 0.99);
    }

    #[test]
    fn library_functions_fit_themselves() {
        let x = uniform(0.5, 3.0, 120);
        let cases: [(FunctionKind, fn(f64) -> f64); 5] = [
            (FunctionKind::Exp, |x| 0.3 * (1.2 * x).exp()),
            (FunctionKind::Tanh, |x| 2.0 * (3.0 * (x - 1.5)).tanh()),
            (FunctionKind::Abs, |x| (x - 1.7).abs()),
            (FunctionKind::Reciprocal, |x| 1.0 / (x + 0.1)),
            (FunctionKind::Quadratic, |x| (x - 1.0).powi(2)),
        ];
        for (kind, f) in cases {
            let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
            let t = fit_symbolic(&x, &y).unwrap();
            assert_eq!(t.kind, kind, "{t:?}");
            assert!(t.r_squared > 0.9999, "{t:?}");
        }
    }

    #[test]
    fn degenerate_samples_are_unfittable() {
        let edge = projected_edge(|x| x, 0.0, 1.0);
        assert!(matches!(fit_symbolic_term(&edge, &[0.5; 30]), Err(Error::Unfittable(_))));
        assert!(fit_symbolic_term(&edge, &uniform(0.0, 1.0, 10)).is_err());
    }

    #[test]
    fn identity_network_gives_linear_formula() {
        let mut net = identity_net(2, &[0.7, -1.3, 2.0]);
        net = KanNetwork::new(
            net.layers().to_vec(),
            FeatureNormalizer {
                names: vec!["age".into(), "size".into()],
                means: vec![50.0, 20.0],
                stds: vec![10.0, 5.0],
            },
            100.0,
        )
        .unwrap();
        let inputs: Vec<Vec<f64>> = random_inputs(60, 3, 4)
            .into_iter()
            .map(|mut r| {
                r[2] = r[2].abs();
                r
            })
            .collect();
        let model = extract_formula(&net, &inputs).unwrap();
        assert!(model.terms.iter().all(|t| t.kind == FunctionKind::Linear));
        assert!(model.fidelity >= 0.999);
        // raw-unit slopes: w / std, and w / t_max for time
        let slope = |name: &str| {
            let t = model.terms.iter().find(|t| t.input == name).unwrap();
            t.outer_scale * t.inner_scale
        };
        assert!((slope("age") - 0.07).abs() < 1e-9);
        assert!((slope("size") + 0.26).abs() < 1e-9);
        assert!((slope("time") - 0.02).abs() < 1e-9);
        let text = model.to_text();
        assert!(text.starts_with("log h(t | x) = 0.07 (age) - 0.26 (size) + 0.02 (time)"), "{text}");
        assert_eq!(SymbolicModel::from_toml(&model.to_toml()).unwrap(), model);
    }

    #[test]
    fn fidelity_is_honest() {
        let (net, inputs) = random_net(0, 11);
        let model = extract_formula(&net, &inputs).unwrap();
        let mut obs = Vec::new();
        let mut fit = Vec::new();
        for r in &inputs {
            obs.push(net.forward_normalized(r));
            fit.push(model.eval(&net.normalizer().names, &r[..3], r[3]).unwrap());
        }
        // identity normalizer and unit time scale: raw == normalized
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let ss_tot: f64 = obs.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = obs.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((model.fidelity - (1.0 - ss_res / ss_tot)).abs() < 1e-9);
        assert_eq!(extract_formula(&net, &inputs).unwrap(), model);
    }

    #[test]
    fn deep_networks_are_rejected() {
        let (net, inputs) = random_net(1, 2);
        assert!(matches!(extract_formula(&net, &inputs), Err(Error::UnsupportedShape(_))));
    }

    #[test]
    fn edge_export() {
        let grid = SplineGrid::new(0.0, 1.0, 3).unwrap();
        let mut net = identity_net(1, &[0.0, 0.0]);
        *net.layers_mut()[0].edge_mut(0, 0) = EdgeFunction::base_only(grid, BaseKind::Identity, 1.0);
        let s = export_edge_samples(&net, &EdgeSelector::Input("x1".into()), 3).unwrap();
        let pts: Vec<(f64, f64)> = s.iter().map(|p| (p.normalized, p.value)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]);
        let (net, _) = random_net(2, 6);
        let sel = EdgeSelector::Index {
            layer: 1,
            output: 0,
            input: 1,
        };
        for p in export_edge_samples(&net, &sel, 7).unwrap() {
            assert_eq!(p.value, net.layers()[1].edge(0, 1).eval(p.normalized).unwrap());
        }
        assert!(matches!(
            export_edge_samples(&net, &EdgeSelector::Input("nope".into()), 5),
            Err(Error::NotFound(_))
        ));
        assert!(export_edge_samples(&net, &sel, 1).is_err());
    }
}
