//! Hazards, cumulative hazards, survival curves and the censored-data
//! negative log-likelihood, all derived from the network's log-hazard.
//!
//! The network output `f(x, tau)` is the log-hazard per unit of normalized
//! time `tau = t / t_max`, so in raw units `log h(t) = f - ln t_max` while
//! `H(t) = int_0^tau exp f(x, u) du` is the same in either unit.

use crate::dataio::SurvivalDataset;
use crate::error::{ensure_finite, invalid, Result};
use crate::kan::{KanNetwork, LossGraph, OutputMap};

/// Log-hazard values are clamped into `[-LOG_HAZARD_BOUND, LOG_HAZARD_BOUND]`.
pub const LOG_HAZARD_BOUND: f64 = 20.0;

/// Trapezoid nodes per `[0, t]` integral.
pub const DEFAULT_INTEGRATION_POINTS: usize = 50;

pub const LOG_HAZARD: OutputMap = OutputMap::Clamp {
    lo: -LOG_HAZARD_BOUND,
    hi: LOG_HAZARD_BOUND,
};

pub const HAZARD: OutputMap = OutputMap::ExpClamp {
    lo: -LOG_HAZARD_BOUND,
    hi: LOG_HAZARD_BOUND,
};

pub fn clamp_log_hazard(f: f64) -> f64 {
    f.clamp(-LOG_HAZARD_BOUND, LOG_HAZARD_BOUND)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardEvaluation {
    pub log_hazard: f64,
    pub hazard: f64,
    pub cumulative_hazard: f64,
}

/// `(node, weight)` pairs of the `k`-point trapezoid rule on `[0, t]`.
pub fn trapezoid_nodes(t: f64, k: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = t / (k - 1) as f64;
    (0..k).map(move |q| {
        let w = if q == 0 || q == k - 1 { 0.5 * h } else { h };
        (t * q as f64 / (k - 1) as f64, w)
    })
}

fn check_time(time: f64) -> Result<()> {
    ensure_finite(time, "time")?;
    if time < 0.0 {
        return Err(invalid(format!("time must be non-negative, got {time}")));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("trapezoid rule needs at least 2 points, got {k}")));
    }
    Ok(())
}

/// Raw-time log-hazard: the clamped network output minus `ln t_max`.
pub fn log_hazard(net: &KanNetwork, features: &[f64], time: f64) -> Result<f64> {
    check_time(time)?;
    Ok(clamp_log_hazard(net.forward(features, time)?) - net.time_scale().ln())
}

pub fn cumulative_hazard(net: &KanNetwork, features: &[f64], time: f64, k: usize) -> Result<f64> {
    check_k(k)?;
    let z = net.normalize_input(features, time)?;
    if time == 0.0 {
        return Ok(0.0);
    }
    let mut ev = net.subject(&z[..net.feature_count()]);
    Ok(trapezoid_nodes(time / net.time_scale(), k)
        .map(|(u, w)| w * HAZARD.apply(ev.eval(u)).0)
        .sum())
}

pub fn evaluate_hazard(net: &KanNetwork, features: &[f64], time: f64, k: usize) -> Result<HazardEvaluation> {
    let log_hazard = log_hazard(net, features, time)?;
    Ok(HazardEvaluation {
        log_hazard,
        hazard: log_hazard.exp(),
        cumulative_hazard: cumulative_hazard(net, features, time, k)?,
    })
}

/// Survival probabilities of one subject on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    survival: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, survival: Vec<f64>) -> Result<Self> {
        check_grid(&times)?;
        if times.len() != survival.len() {
            return Err(invalid("survival curve times and values differ in length"));
        }
        if survival.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(invalid("survival values must lie in [0, 1]"));
        }
        Ok(Self { times, survival })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation on `[0, last grid time]`, with `S(0) = 1`.
    /// `None` beyond the grid.
    pub fn at(&self, t: f64) -> Option<f64> {
        if !(t >= 0.0) || t > *self.times.last()? {
            return None;
        }
        let k = self.times.partition_point(|&g| g < t);
        if k < self.times.len() && self.times[k] == t {
            return Some(self.survival[k]);
        }
        let (t0, s0) = if k == 0 { (0.0, 1.0) } else { (self.times[k - 1], self.survival[k - 1]) };
        let (t1, s1) = (self.times[k], self.survival[k]);
        Some(s0 + (s1 - s0) * (t - t0) / (t1 - t0))
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    for &t in times {
        check_time(t)?;
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Accumulates the cumulative hazard segment by segment across the grid,
/// reusing the hazard at each segment's left end, with `k_per_point`
/// trapezoid nodes per segment.
pub fn survival_curve(net: &KanNetwork, features: &[f64], grid_times: &[f64], k_per_point: usize) -> Result<SurvivalCurve> {
    check_k(k_per_point)?;
    check_grid(grid_times)?;
    let z = net.normalize_input(features, 0.0)?;
    let mut ev = net.subject(&z[..net.feature_count()]);
    let scale = net.time_scale();
    // per unit of raw time
    let mut hazard = |u: f64| HAZARD.apply(ev.eval(u / scale)).0 / scale;

    let mut survival = Vec::with_capacity(grid_times.len());
    let mut prev_t = 0.0;
    let mut prev_h = hazard(0.0);
    let mut cumulative = 0.0;
    for &t in grid_times {
        if t > prev_t {
            let step = (t - prev_t) / (k_per_point - 1) as f64;
            let mut segment = 0.0;
            let mut left = prev_h;
            for q in 1..k_per_point {
                let u = if q == k_per_point - 1 { t } else { prev_t + step * q as f64 };
                let right = hazard(u);
                segment += 0.5 * (left + right) * step;
                left = right;
            }
            cumulative += segment;
            prev_h = left;
            prev_t = t;
        }
        survival.push((-cumulative).exp());
    }
    Ok(SurvivalCurve {
        times: grid_times.to_vec(),
        survival,
    })
}

/// Records `-(1/N) sum_i [delta_i log h(t_i) - H(t_i)]` as a loss graph.
pub fn nll_graph(net: &KanNetwork, data: &SurvivalDataset, k: usize) -> Result<LossGraph> {
    check_k(k)?;
    if data.is_empty() {
        return Err(invalid("negative log-likelihood needs at least one subject"));
    }
    let n = data.len() as f64;
    let scale = net.time_scale();
    let mut graph = LossGraph::new();
    graph.add_constant(data.event_count() as f64 * scale.ln() / n);
    for i in 0..data.len() {
        let t = data.times()[i];
        let z = net.normalize_input(data.row(i), t)?;
        let s = graph.push_subject(z[..net.feature_count()].to_vec());
        if data.events()[i] {
            graph.push_node(s, t / scale, LOG_HAZARD, -1.0 / n);
        }
        if t > 0.0 {
            for (u, w) in trapezoid_nodes(t / scale, k) {
                graph.push_node(s, u, HAZARD, w / n);
            }
        }
    }
    Ok(graph)
}

pub fn negative_log_likelihood(net: &KanNetwork, data: &SurvivalDataset, k: usize) -> Result<f64> {
    let graph = nll_graph(net, data, k)?;
    if graph.is_empty() {
        // every subject censored at t = 0
        return Ok(0.0);
    }
    Ok(graph.evaluate(net)?.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::{backward, Architecture, BaseKind, EdgeFunction};
    use crate::splines::SplineGrid;

    fn empty_net(d: usize, time_scale: f64) -> KanNetwork {
        let arch = Architecture {
            hidden: 0,
            grid_intervals: 4,
            base: BaseKind::Identity,
        };
        KanNetwork::zeros((0..d).map(|i| format!("x{i}")).collect(), arch, time_scale).unwrap()
    }

    /// Single layer whose time edge is the constant `c`.
    fn constant_net(c: f64, time_scale: f64) -> KanNetwork {
        let mut net = empty_net(1, time_scale);
        let e = net.layers_mut()[0].edge_mut(0, 1);
        e.spline_weight = 1.0;
        e.coefficients.iter_mut().for_each(|v| *v = c);
        net
    }

    #[test]
    fn clamping() {
        let net = empty_net(1, 1.0);
        assert_eq!(log_hazard(&net, &[0.3], 0.5).unwrap(), 0.0);
        let mut big = empty_net(1, 1.0);
        big.layers_mut()[0].edge_mut(0, 0).base_weight = 50.0;
        assert_eq!(log_hazard(&big, &[1.0], 0.5).unwrap(), 20.0);
        assert_eq!(log_hazard(&big, &[-1.0], 0.5).unwrap(), -20.0);
        assert!(log_hazard(&net, &[0.3], -1.0).is_err());
    }

    #[test]
    fn constant_hazard_integrates_exactly() {
        // raw-time hazard is exp(c) / t_max
        let net = empty_net(1, 3.0);
        assert!((cumulative_hazard(&net, &[0.0], 2.5, 50).unwrap() - 2.5 / 3.0).abs() < 1e-14);
        let net = constant_net(0.7, 3.0);
        assert!((log_hazard(&net, &[0.0], 1.0).unwrap() - (0.7 - 3.0f64.ln())).abs() < 1e-14);
        for k in [2, 7, 50] {
            let h = cumulative_hazard(&net, &[0.0], 1.9, k).unwrap();
            assert!((h - 1.9 * 0.7f64.exp() / 3.0).abs() < 1e-13);
        }
        assert_eq!(cumulative_hazard(&net, &[0.0], 0.0, 50).unwrap(), 0.0);
        assert!(cumulative_hazard(&net, &[0.0], 1.0, 1).is_err());
    }

    #[test]
    fn trapezoid_is_exact_on_linear_hazard() {
        // log h = ln(a u) has no exact network form; check the rule itself
        let a = 3.0;
        for k in [2, 9, 50] {
            let sum: f64 = trapezoid_nodes(1.0, k).map(|(u, w)| w * a * u).sum();
            assert!((sum - a / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn survival_curve_exponential_law() {
        let net = empty_net(1, 2.0);
        let c = survival_curve(&net, &[0.0], &[0.0, 1.0, 2.0], 5).unwrap();
        let expect = [1.0, (-0.5f64).exp(), (-1.0f64).exp()];
        for (a, e) in c.survival().iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }
        let zero = survival_curve(&net, &[0.0], &[0.0], 5).unwrap();
        assert_eq!(zero.survival(), &[1.0]);
        assert!(survival_curve(&net, &[0.0], &[1.0, 0.5], 5).is_err());
        assert!(survival_curve(&net, &[0.0], &[1.0, 1.0], 5).is_err());
    }

    #[test]
    fn curve_interpolation() {
        let c = SurvivalCurve::new(vec![1.0, 2.0], vec![0.8, 0.4]).unwrap();
        assert_eq!(c.at(1.0), Some(0.8));
        assert!((c.at(1.5).unwrap() - 0.6).abs() < 1e-15);
        assert!((c.at(0.5).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(c.at(2.5), None);
    }

    #[test]
    fn nll_examples() {
        let net = empty_net(1, 1.0);
        let event = SurvivalDataset::from_rows(vec![vec![0.0]], vec![1.0], vec![true]).unwrap();
        assert!((negative_log_likelihood(&net, &event, 50).unwrap() - 1.0).abs() < 1e-14);
        let censored = SurvivalDataset::from_rows(vec![vec![0.0]], vec![1.0], vec![false]).unwrap();
        assert!((negative_log_likelihood(&net, &censored, 50).unwrap() - 1.0).abs() < 1e-14);
        let at_zero = SurvivalDataset::from_rows(vec![vec![0.0]], vec![0.0], vec![true]).unwrap();
        assert_eq!(negative_log_likelihood(&net, &at_zero, 50).unwrap(), 0.0);
    }

    #[test]
    fn clamped_branch_has_zero_gradient() {
        // feature edge saturates the output far above the clamp ceiling
        let mut net = empty_net(1, 1.0);
        let grid = SplineGrid::new(-1.0, 1.0, 4).unwrap();
        *net.layers_mut()[0].edge_mut(0, 0) = EdgeFunction::base_only(grid, BaseKind::Identity, 500.0);
        let data = SurvivalDataset::from_rows(vec![vec![1.0], vec![2.0]], vec![0.4, 0.9], vec![true, false]).unwrap();
        let graph = nll_graph(&net, &data, 50).unwrap();
        let g = backward(&net, &graph).unwrap().flatten();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nll_is_unit_consistent() {
        // constant raw hazard r = 1/t_max: -(1/N) sum [delta ln r - r t]
        let net = empty_net(1, 4.0);
        let data =
            SurvivalDataset::from_rows(vec![vec![0.0], vec![1.0]], vec![2.0, 3.0], vec![true, false]).unwrap();
        let expect = -(0.25f64.ln() - 0.5 - 0.75) / 2.0;
        let nll = negative_log_likelihood(&net, &data, 50).unwrap();
        assert!((nll - expect).abs() < 1e-14, "{nll} vs {expect}");
        let graph = nll_graph(&net, &data, 50).unwrap();
        let (value, _) = crate::kan::value_and_gradient(&net, &graph).unwrap();
        assert_eq!(value.data, nll);
    }
}
