//! Kolmogorov-Arnold network: learnable edge functions, layers, the
//! log-hazard network, its structured regularizers and exact reverse-mode
//! gradients.
//!
//! The network input is `[z_1, .., z_d, tau]` where `z` are z-scored features
//! and `tau = t / t_max`. The time slot is always the last input of layer 0.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::splines::{SplineGrid, DEGREE, SUPPORT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Identity,
    #[default]
    Silu,
}

impl BaseKind {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            BaseKind::Identity => x,
            BaseKind::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            BaseKind::Identity => 1.0,
            BaseKind::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Identity => "identity",
            BaseKind::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(BaseKind::Identity),
            "silu" => Ok(BaseKind::Silu),
            other => Err(invalid(format!("unknown base function `{other}`"))),
        }
    }
}

/// `phi(x) = w_b * b(x) + w_s * spline(x)`.
///
/// A pruned edge is kept in place with `active = false`; it evaluates to zero
/// and receives no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunction {
    pub grid: SplineGrid,
    pub coefficients: Vec<f64>,
    pub base_weight: f64,
    pub spline_weight: f64,
    pub base: BaseKind,
    pub active: bool,
}

/// Gradient of a scalar with respect to one edge's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGradient {
    pub coefficients: Vec<f64>,
    pub base_weight: f64,
    pub spline_weight: f64,
}

impl EdgeGradient {
    fn zeros(n: usize) -> Self {
        Self {
            coefficients: vec![0.0; n],
            base_weight: 0.0,
            spline_weight: 0.0,
        }
    }
}

impl EdgeFunction {
    pub fn new(
        grid: SplineGrid,
        coefficients: Vec<f64>,
        base_weight: f64,
        spline_weight: f64,
        base: BaseKind,
    ) -> Result<Self> {
        grid.check_coefficients(&coefficients)?;
        ensure_finite(base_weight, "base weight")?;
        ensure_finite(spline_weight, "spline weight")?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(invalid("spline coefficients must be finite"));
        }
        Ok(Self {
            grid,
            coefficients,
            base_weight,
            spline_weight,
            base,
            active: true,
        })
    }

    pub fn zero(grid: SplineGrid, base: BaseKind) -> Self {
        Self {
            coefficients: vec![0.0; grid.basis_count()],
            grid,
            base_weight: 0.0,
            spline_weight: 0.0,
            base,
            active: true,
        }
    }

    /// Pure base-function edge `w_b * b(x)`.
    pub fn base_only(grid: SplineGrid, base: BaseKind, base_weight: f64) -> Self {
        Self {
            base_weight,
            ..Self::zero(grid, base)
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        ensure_finite(x, "edge input")?;
        Ok(self.value(x))
    }

    #[inline]
    pub(crate) fn value(&self, x: f64) -> f64 {
        if !self.active {
            return 0.0;
        }
        self.base_weight * self.base.value(x)
            + self.spline_weight * self.grid.eval_unchecked(&self.coefficients, x)
    }

    /// Adds `upstream * d phi / d theta` into `grad` and returns
    /// `upstream * d phi / dx`.
    #[inline]
    pub(crate) fn accumulate(&self, x: f64, upstream: f64, grad: &mut EdgeGradient) -> f64 {
        if !self.active || upstream == 0.0 {
            return 0.0;
        }
        let (local, deriv) = self.grid.local_basis_with_derivative(x);
        let c = &self.coefficients[local.first..local.first + SUPPORT];
        let mut spline = 0.0;
        let mut slope = 0.0;
        for r in 0..SUPPORT {
            spline += local.values[r] * c[r];
            slope += deriv[r] * c[r];
            grad.coefficients[local.first + r] += upstream * self.spline_weight * local.values[r];
        }
        grad.base_weight += upstream * self.base.value(x);
        grad.spline_weight += upstream * spline;
        upstream * (self.base_weight * self.base.derivative(x) + self.spline_weight * slope)
    }

    pub fn parameter_count(&self) -> usize {
        self.coefficients.len() + 2
    }

    /// Adds `c` to the edge output; the basis sums to one everywhere,
    /// extension included, so shifting every coefficient is exact.
    pub(crate) fn shift(&mut self, c: f64) {
        if self.spline_weight == 0.0 {
            self.coefficients.iter_mut().for_each(|v| *v = 0.0);
            self.spline_weight = 1.0;
        }
        let k = c / self.spline_weight;
        self.coefficients.iter_mut().for_each(|v| *v += k);
    }

    pub(crate) fn deactivate(&mut self) {
        self.active = false;
        self.base_weight = 0.0;
        self.spline_weight = 0.0;
        self.coefficients.iter_mut().for_each(|c| *c = 0.0);
    }
}

/// Edges of one layer, stored row-major by `(output j, input i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_width: usize,
    out_width: usize,
    edges: Vec<EdgeFunction>,
}

impl KanLayer {
    pub fn new(in_width: usize, out_width: usize, edges: Vec<EdgeFunction>) -> Result<Self> {
        if edges.len() != in_width * out_width {
            return Err(Error::Dimension {
                context: "layer edges",
                expected: in_width * out_width,
                got: edges.len(),
            });
        }
        Ok(Self {
            in_width,
            out_width,
            edges,
        })
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn edge(&self, j: usize, i: usize) -> &EdgeFunction {
        &self.edges[j * self.in_width + i]
    }

    pub fn edge_mut(&mut self, j: usize, i: usize) -> &mut EdgeFunction {
        &mut self.edges[j * self.in_width + i]
    }

    pub fn edges(&self) -> &[EdgeFunction] {
        &self.edges
    }

    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.edges[j * self.in_width..(j + 1) * self.in_width];
            *o = row.iter().zip(input).map(|(e, &x)| e.value(x)).sum();
        }
    }
}

/// Z-score statistics fitted on the training portion.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureNormalizer {
    /// Population mean and standard deviation per column; a constant column
    /// gets unit scale.
    pub fn fit(rows: &[Vec<f64>], names: &[String]) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("cannot fit normalization on zero rows"));
        }
        let d = names.len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            check_len("feature row", d, r.len())?;
            for (m, v) in means.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut stds = vec![0.0; d];
        for r in rows {
            for k in 0..d {
                stds[k] += (r[k] - means[k]).powi(2) / n;
            }
        }
        for s in &mut stds {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self {
            names: names.to_vec(),
            means,
            stds,
        })
    }

    pub fn identity(names: Vec<String>) -> Self {
        let d = names.len();
        Self {
            names,
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

/// Shape and basis choices for a fresh network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    /// Hidden width `m`; zero means a single layer straight to the output.
    pub hidden: usize,
    pub grid_intervals: usize,
    pub base: BaseKind,
}

/// The full log-hazard model `log h(t | x) = KAN([x, t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    layers: Vec<KanLayer>,
    normalizer: FeatureNormalizer,
    time_scale: f64,
}

impl KanNetwork {
    pub fn new(layers: Vec<KanLayer>, normalizer: FeatureNormalizer, time_scale: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        if !(time_scale.is_finite() && time_scale > 0.0) {
            return Err(invalid(format!("time scale must be positive, got {time_scale}")));
        }
        check_len("network input width", normalizer.len() + 1, layers[0].in_width)?;
        for w in layers.windows(2) {
            check_len("layer chaining", w[0].out_width, w[1].in_width)?;
        }
        check_len("network output width", 1, layers.last().unwrap().out_width)?;
        Ok(Self {
            layers,
            normalizer,
            time_scale,
        })
    }

    /// Every edge zero; grids span `[-1, 1]` with `grid_intervals` intervals.
    pub fn zeros(feature_names: Vec<String>, arch: Architecture, time_scale: f64) -> Result<Self> {
        let grid = SplineGrid::new(-1.0, 1.0, arch.grid_intervals)?;
        let widths = Self::widths_for(feature_names.len(), arch.hidden);
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::new(w[0], w[1], vec![EdgeFunction::zero(grid, arch.base); w[0] * w[1]]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, FeatureNormalizer::identity(feature_names), time_scale)
    }

    /// `[d + 1, m, 1]`, or `[d + 1, 1]` when `m = 0`.
    pub fn widths_for(features: usize, hidden: usize) -> Vec<usize> {
        if hidden == 0 {
            vec![features + 1, 1]
        } else {
            vec![features + 1, hidden, 1]
        }
    }

    /// Random initialization. Layer-0 feature grids span the observed range of
    /// the normalized `sample_inputs`, the time grid spans `[0, 1]`, and hidden
    /// grids span the range of hidden activations produced at initialization.
    pub fn initialize<R: Rng>(
        arch: Architecture,
        normalizer: FeatureNormalizer,
        time_scale: f64,
        sample_inputs: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        if sample_inputs.is_empty() {
            return Err(invalid("initialization needs sample inputs"));
        }
        let d = normalizer.len();
        let widths = Self::widths_for(d, arch.hidden);
        let n_basis = arch.grid_intervals + DEGREE;
        let coef_dist = Normal::new(0.0, 0.1 / (n_basis as f64).sqrt()).expect("valid normal");

        let mut current: Vec<Vec<f64>> = sample_inputs.to_vec();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let base_dist = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("valid normal");
            let grids = (0..n_in)
                .map(|i| {
                    if l == 0 && i == d {
                        SplineGrid::new(0.0, 1.0, arch.grid_intervals)
                    } else {
                        let (lo, hi) = padded_range(current.iter().map(|r| r[i]), l > 0);
                        SplineGrid::new(lo, hi, arch.grid_intervals)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let mut edges = Vec::with_capacity(n_in * n_out);
            for _ in 0..n_out {
                for grid in &grids {
                    let coefficients = (0..n_basis).map(|_| coef_dist.sample(rng)).collect();
                    edges.push(EdgeFunction {
                        grid: *grid,
                        coefficients,
                        base_weight: base_dist.sample(rng),
                        spline_weight: 1.0,
                        base: arch.base,
                        active: true,
                    });
                }
            }
            let layer = KanLayer::new(n_in, n_out, edges)?;
            current = current
                .iter()
                .map(|r| {
                    let mut out = vec![0.0; n_out];
                    layer.forward_into(r, &mut out);
                    out
                })
                .collect();
            layers.push(layer);
        }
        Self::new(layers, normalizer, time_scale)
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    /// Moves the mean of every layer-0 feature edge over `inputs` into the
    /// time edge feeding the same node. The network function is unchanged,
    /// but each feature edge's magnitude then reflects its variation only.
    pub fn center_feature_edges(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(invalid("centering needs inputs"));
        }
        let d = self.feature_count();
        let n = inputs.len() as f64;
        let layer = &mut self.layers[0];
        for j in 0..layer.out_width {
            if !layer.edge(j, d).active {
                continue;
            }
            for i in 0..d {
                if !layer.edge(j, i).active {
                    continue;
                }
                let mut mean = 0.0;
                for row in inputs {
                    check_len("centering input row", d + 1, row.len())?;
                    mean += layer.edge(j, i).value(row[i]) / n;
                }
                layer.edge_mut(j, i).shift(-mean);
                layer.edge_mut(j, d).shift(mean);
            }
        }
        Ok(())
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn feature_count(&self) -> usize {
        self.normalizer.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.in_width).collect();
        w.push(1);
        w
    }

    pub fn base_kind(&self) -> BaseKind {
        self.layers[0].edges[0].base
    }

    /// `[z(features), time / t_max]`.
    pub fn normalize_input(&self, features: &[f64], time: f64) -> Result<Vec<f64>> {
        check_len("feature vector", self.feature_count(), features.len())?;
        for &x in features {
            ensure_finite(x, "feature value")?;
        }
        ensure_finite(time, "time")?;
        if time < 0.0 {
            return Err(invalid(format!("time must be non-negative, got {time}")));
        }
        let mut z = self.normalizer.normalize(features);
        z.push(time / self.time_scale);
        Ok(z)
    }

    /// Raw network output (log-hazard before clamping).
    pub fn forward(&self, features: &[f64], time: f64) -> Result<f64> {
        let z = self.normalize_input(features, time)?;
        Ok(self.forward_normalized(&z))
    }

    pub fn forward_batch(&self, feature_rows: &[Vec<f64>], times: &[f64]) -> Result<Vec<f64>> {
        check_len("batch times", feature_rows.len(), times.len())?;
        feature_rows
            .iter()
            .zip(times)
            .map(|(x, &t)| self.forward(x, t))
            .collect()
    }

    /// Forward pass on an already normalized input row.
    pub fn forward_normalized(&self, inputs: &[f64]) -> f64 {
        let mut current = inputs.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_width];
            layer.forward_into(&current, &mut out);
            current = out;
        }
        current[0]
    }

    /// Forward pass keeping every layer's input.
    pub(crate) fn trace(&self, inputs: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_width];
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Backpropagates `d_output` from the network output through a recorded
    /// trace. `injections[l][e]` adds a direct upstream on edge `e`'s output
    /// in layer `l`.
    pub(crate) fn backprop(
        &self,
        acts: &[Vec<f64>],
        d_output: f64,
        injections: Option<&[Vec<f64>]>,
        tape: &mut GradientTape,
    ) {
        let mut g_out = vec![d_output];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let mut g_in = vec![0.0; layer.in_width];
            for j in 0..layer.out_width {
                for i in 0..layer.in_width {
                    let e = j * layer.in_width + i;
                    let mut up = g_out[j];
                    if let Some(inj) = injections {
                        up += inj[l][e];
                    }
                    g_in[i] += layer.edges[e].accumulate(acts[l][i], up, &mut tape.layers[l][e]);
                }
            }
            g_out = g_in;
        }
    }

    /// Evaluator for one subject across many time points.
    pub fn subject(&self, normalized_features: &[f64]) -> SubjectEvaluator<'_> {
        SubjectEvaluator::new(self, normalized_features)
    }

    pub fn zero_tape(&self) -> GradientTape {
        GradientTape {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.edges
                        .iter()
                        .map(|e| EdgeGradient::zeros(e.coefficients.len()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.edges().map(|e| e.parameter_count()).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeFunction> {
        self.layers.iter().flat_map(|l| l.edges.iter())
    }

    /// Flat parameter vector: per edge, coefficients then `w_b` then `w_s`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for e in self.edges() {
            out.extend_from_slice(&e.coefficients);
            out.push(e.base_weight);
            out.push(e.spline_weight);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", self.parameter_count(), params.len())?;
        let mut k = 0;
        for layer in &mut self.layers {
            for e in &mut layer.edges {
                let n = e.coefficients.len();
                e.coefficients.copy_from_slice(&params[k..k + n]);
                e.base_weight = params[k + n];
                e.spline_weight = params[k + n + 1];
                k += n + 2;
            }
        }
        Ok(())
    }

    /// Mask with `false` at parameters of pruned edges.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.edges()
            .flat_map(|e| std::iter::repeat_n(e.active, e.parameter_count()))
            .collect()
    }
}

fn padded_range(values: impl Iterator<Item = f64>, pad: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    if pad {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    } else {
        (lo, hi)
    }
}

/// Gradients shaped like the network that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<Vec<EdgeGradient>>,
}

impl GradientTape {
    pub fn edge(&self, layer: usize, index: usize) -> &EdgeGradient {
        &self.layers[layer][index]
    }

    /// Same ordering as [`KanNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(&g.coefficients);
            out.push(g.base_weight);
            out.push(g.spline_weight);
        }
        out
    }
}

/// Evaluates one subject's network output at many times. Layer-0 edges fed
/// by features are computed once; only the time edges and deeper layers are
/// re-evaluated per time point. Gradient contributions for the feature edges
/// are aggregated and applied in [`SubjectEvaluator::finish_backprop`].
pub struct SubjectEvaluator<'a> {
    net: &'a KanNetwork,
    features: Vec<f64>,
    partial: Vec<f64>,
    acts: Vec<Vec<f64>>,
    feature_upstream: Vec<f64>,
}

impl<'a> SubjectEvaluator<'a> {
    fn new(net: &'a KanNetwork, features: &[f64]) -> Self {
        let first = &net.layers[0];
        let d = net.feature_count();
        let partial = (0..first.out_width)
            .map(|j| (0..d).map(|i| first.edge(j, i).value(features[i])).sum())
            .collect();
        let acts = net.layers.iter().map(|l| vec![0.0; l.out_width]).collect();
        Self {
            net,
            features: features.to_vec(),
            partial,
            acts,
            feature_upstream: vec![0.0; first.out_width],
        }
    }

    /// Network output at normalized time `tau`.
    pub fn eval(&mut self, tau: f64) -> f64 {
        let net = self.net;
        let first = &net.layers[0];
        let d = net.feature_count();
        for j in 0..first.out_width {
            self.acts[0][j] = self.partial[j] + first.edge(j, d).value(tau);
        }
        for l in 1..net.layers.len() {
            let (done, rest) = self.acts.split_at_mut(l);
            net.layers[l].forward_into(&done[l - 1], &mut rest[0]);
        }
        self.acts[net.layers.len() - 1][0]
    }

    /// Backpropagates `upstream` through the latest [`eval`](Self::eval),
    /// which must have been at the same `tau`.
    pub fn backprop(&mut self, tau: f64, upstream: f64, tape: &mut GradientTape) {
        if upstream == 0.0 {
            return;
        }
        let net = self.net;
        let n_layers = net.layers.len();
        let mut g_out = vec![upstream];
        for l in (1..n_layers).rev() {
            let layer = &net.layers[l];
            let input = &self.acts[l - 1];
            let mut g_in = vec![0.0; layer.in_width];
            for j in 0..layer.out_width {
                for i in 0..layer.in_width {
                    let e = j * layer.in_width + i;
                    g_in[i] += layer.edges[e].accumulate(input[i], g_out[j], &mut tape.layers[l][e]);
                }
            }
            g_out = g_in;
        }
        let first = &net.layers[0];
        let d = net.feature_count();
        for (j, &g) in g_out.iter().enumerate() {
            let e = j * first.in_width + d;
            first.edges[e].accumulate(tau, g, &mut tape.layers[0][e]);
            self.feature_upstream[j] += g;
        }
    }

    /// Applies the aggregated upstream to the feature edges of layer 0.
    pub fn finish_backprop(&mut self, tape: &mut GradientTape) {
        let first = &self.net.layers[0];
        for j in 0..first.out_width {
            let g = std::mem::take(&mut self.feature_upstream[j]);
            for (i, &z) in self.features.iter().enumerate() {
                let e = j * first.in_width + i;
                first.edges[e].accumulate(z, g, &mut tape.layers[0][e]);
            }
        }
    }
}

/// Per-term weights inside the structured regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationWeights {
    pub l1: f64,
    pub entropy: f64,
    pub coefficient: f64,
    pub smoothness: f64,
}

impl Default for RegularizationWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            entropy: 2.0,
            coefficient: 0.1,
            smoothness: 0.1,
        }
    }
}

/// Weighted regularizer terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegularizationTerms {
    pub total: f64,
    pub l1: f64,
    pub entropy: f64,
    pub coefficient: f64,
    pub smoothness: f64,
}

/// Mean `|phi_e|` over the batch for every edge, indexed `[layer][edge]`.
/// `batch_inputs` are normalized `[z, tau]` rows.
pub fn edge_activation_norms(net: &KanNetwork, batch_inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if batch_inputs.is_empty() {
        return Err(invalid("edge norms need a non-empty batch"));
    }
    let width = net.layers[0].in_width;
    let n = batch_inputs.len() as f64;
    let mut norms: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.edges.len()]).collect();
    for row in batch_inputs {
        check_len("regularizer input row", width, row.len())?;
        let acts = net.trace(row);
        for (l, layer) in net.layers.iter().enumerate() {
            for j in 0..layer.out_width {
                for i in 0..layer.in_width {
                    let e = j * layer.in_width + i;
                    norms[l][e] += layer.edges[e].value(acts[l][i]).abs() / n;
                }
            }
        }
    }
    Ok(norms)
}

fn entropy(norms: &[f64]) -> f64 {
    let total: f64 = norms.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    norms
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum()
}

fn coefficient_norms(e: &EdgeFunction) -> (f64, f64) {
    let c = &e.coefficients;
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = c.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>().sqrt();
    (norm, diff)
}

pub fn regularization(
    net: &KanNetwork,
    batch_inputs: &[Vec<f64>],
    weights: &RegularizationWeights,
) -> Result<RegularizationTerms> {
    let norms = edge_activation_norms(net, batch_inputs)?;
    Ok(terms_from_norms(net, &norms, weights))
}

fn terms_from_norms(net: &KanNetwork, norms: &[Vec<f64>], w: &RegularizationWeights) -> RegularizationTerms {
    let mut t = RegularizationTerms::default();
    for (layer, layer_norms) in net.layers.iter().zip(norms) {
        t.l1 += layer_norms.iter().sum::<f64>();
        t.entropy += entropy(layer_norms);
        for e in &layer.edges {
            let (c, dc) = coefficient_norms(e);
            t.coefficient += c;
            t.smoothness += dc;
        }
    }
    t.l1 *= w.l1;
    t.entropy *= w.entropy;
    t.coefficient *= w.coefficient;
    t.smoothness *= w.smoothness;
    t.total = t.l1 + t.entropy + t.coefficient + t.smoothness;
    t
}

/// Adds `scale * d(regularizer)/d(theta)` into `tape`.
fn regularization_backward(
    net: &KanNetwork,
    batch_inputs: &[Vec<f64>],
    w: &RegularizationWeights,
    scale: f64,
    tape: &mut GradientTape,
) -> Result<RegularizationTerms> {
    let norms = edge_activation_norms(net, batch_inputs)?;
    let terms = terms_from_norms(net, &norms, w);
    let n = batch_inputs.len() as f64;

    // d reg / d ||phi_e||_1 per edge
    let mut d_norm: Vec<Vec<f64>> = Vec::with_capacity(norms.len());
    for layer_norms in &norms {
        let total: f64 = layer_norms.iter().sum();
        let h = entropy(layer_norms);
        d_norm.push(
            layer_norms
                .iter()
                .map(|&v| {
                    let mut g = w.l1;
                    if total > 0.0 && v > 0.0 {
                        // dH/dv_e = -(ln p_e + H) / S
                        g += w.entropy * (-((v / total).ln() + h) / total);
                    }
                    g * scale
                })
                .collect(),
        );
    }

    let mut injections: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.edges.len()]).collect();
    for row in batch_inputs {
        let acts = net.trace(row);
        for (l, layer) in net.layers.iter().enumerate() {
            for j in 0..layer.out_width {
                for i in 0..layer.in_width {
                    let e = j * layer.in_width + i;
                    let v = layer.edges[e].value(acts[l][i]);
                    injections[l][e] = d_norm[l][e] * sign(v) / n;
                }
            }
        }
        net.backprop(&acts, 0.0, Some(&injections), tape);
    }

    for (l, layer) in net.layers.iter().enumerate() {
        for (e, edge) in layer.edges.iter().enumerate() {
            if !edge.active {
                continue;
            }
            let (c, dc) = coefficient_norms(edge);
            let g = &mut tape.layers[l][e].coefficients;
            let coef = &edge.coefficients;
            if c > 0.0 {
                for (gk, ck) in g.iter_mut().zip(coef) {
                    *gk += scale * w.coefficient * ck / c;
                }
            }
            if dc > 0.0 {
                for k in 0..coef.len() {
                    let before = if k > 0 { coef[k] - coef[k - 1] } else { 0.0 };
                    let after = if k + 1 < coef.len() { coef[k + 1] - coef[k] } else { 0.0 };
                    g[k] += scale * w.smoothness * (before - after) / dc;
                }
            }
        }
    }
    Ok(terms)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// How a network output enters the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputMap {
    Identity,
    /// `clamp(f, lo, hi)`
    Clamp { lo: f64, hi: f64 },
    /// `exp(clamp(f, lo, hi))`
    ExpClamp { lo: f64, hi: f64 },
}

impl OutputMap {
    /// `(value, d value / d f)`; the derivative is zero where the clamp binds.
    #[inline]
    pub fn apply(self, f: f64) -> (f64, f64) {
        match self {
            OutputMap::Identity => (f, 1.0),
            OutputMap::Clamp { lo, hi } => {
                if f < lo {
                    (lo, 0.0)
                } else if f > hi {
                    (hi, 0.0)
                } else {
                    (f, 1.0)
                }
            }
            OutputMap::ExpClamp { lo, hi } => {
                let (c, d) = OutputMap::Clamp { lo, hi }.apply(f);
                let e = c.exp();
                (e, e * d)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct GraphNode {
    tau: f64,
    map: OutputMap,
    weight: f64,
}

#[derive(Debug, Clone)]
struct SubjectTerm {
    features: Vec<f64>,
    nodes: Vec<GraphNode>,
}

#[derive(Debug, Clone)]
struct RegularizerTerm {
    inputs: Vec<Vec<f64>>,
    weights: RegularizationWeights,
    scale: f64,
}

/// A recorded scalar objective:
/// `constant + sum_s sum_k weight_k * map_k(f(z_s, tau_k)) + scale * regularizer(inputs)`.
#[derive(Debug, Clone, Default)]
pub struct LossGraph {
    constant: f64,
    subjects: Vec<SubjectTerm>,
    regularizer: Option<RegularizerTerm>,
}

/// Value of a [`LossGraph`], split into its data and regularization parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub data: f64,
    /// Unscaled regularizer terms, when a regularizer was recorded.
    pub regularizer: Option<RegularizationTerms>,
}

impl LossGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.iter().all(|s| s.nodes.is_empty()) && self.regularizer.is_none()
    }

    /// Starts a subject with normalized features; returns its handle.
    pub fn push_subject(&mut self, normalized_features: Vec<f64>) -> usize {
        self.subjects.push(SubjectTerm {
            features: normalized_features,
            nodes: Vec::new(),
        });
        self.subjects.len() - 1
    }

    pub fn push_node(&mut self, subject: usize, tau: f64, map: OutputMap, weight: f64) {
        self.subjects[subject].nodes.push(GraphNode { tau, map, weight });
    }

    /// Adds a parameter-free offset to the data term.
    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn set_regularizer(&mut self, inputs: Vec<Vec<f64>>, weights: RegularizationWeights, scale: f64) {
        self.regularizer = Some(RegularizerTerm {
            inputs,
            weights,
            scale,
        });
    }

    fn check(&self, net: &KanNetwork) -> Result<()> {
        if self.is_empty() {
            return Err(Error::State("loss graph has no recorded terms".into()));
        }
        for s in &self.subjects {
            check_len("graph subject features", net.feature_count(), s.features.len())?;
        }
        Ok(())
    }

    pub fn evaluate(&self, net: &KanNetwork) -> Result<LossValue> {
        self.check(net)?;
        let mut data = self.constant;
        for s in &self.subjects {
            let mut ev = net.subject(&s.features);
            for node in &s.nodes {
                data += node.weight * node.map.apply(ev.eval(node.tau)).0;
            }
        }
        let mut total = data;
        let mut reg_terms = None;
        if let Some(r) = &self.regularizer {
            let terms = regularization(net, &r.inputs, &r.weights)?;
            total += r.scale * terms.total;
            reg_terms = Some(terms);
        }
        Ok(LossValue {
            total,
            data,
            regularizer: reg_terms,
        })
    }
}

/// Exact gradient of the recorded loss with respect to every parameter.
pub fn backward(net: &KanNetwork, graph: &LossGraph) -> Result<GradientTape> {
    value_and_gradient(net, graph).map(|(_, tape)| tape)
}

pub fn value_and_gradient(net: &KanNetwork, graph: &LossGraph) -> Result<(LossValue, GradientTape)> {
    graph.check(net)?;
    let mut tape = net.zero_tape();
    let mut data = graph.constant;
    for s in &graph.subjects {
        let mut ev = net.subject(&s.features);
        for node in &s.nodes {
            let f = ev.eval(node.tau);
            let (v, dv) = node.map.apply(f);
            data += node.weight * v;
            ev.backprop(node.tau, node.weight * dv, &mut tape);
        }
        ev.finish_backprop(&mut tape);
    }
    let mut total = data;
    let mut reg_terms = None;
    if let Some(r) = &graph.regularizer {
        let terms = regularization_backward(net, &r.inputs, &r.weights, r.scale, &mut tape)?;
        total += r.scale * terms.total;
        reg_terms = Some(terms);
    }
    Ok((
        LossValue {
            total,
            data,
            regularizer: reg_terms,
        },
        tape,
    ))
}
