//! Harrell's concordance index, the IPCW Brier score and its integral, and
//! the Kaplan-Meier estimator behind the censoring weights.

use std::fmt::Write as _;

use crate::dataio::SurvivalDataset;
use crate::error::{invalid, Error, Result};
use crate::format::num;
use crate::hazard::{cumulative_hazard, survival_curve, SurvivalCurve, DEFAULT_INTEGRATION_POINTS};
use crate::kan::KanNetwork;

/// Right-continuous step function: `initial_value` before the first jump,
/// `values[k]` on `[jump_times[k], jump_times[k + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub jump_times: Vec<f64>,
    pub values: Vec<f64>,
    pub initial_value: f64,
}

impl StepFunction {
    pub fn constant(value: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            values: Vec::new(),
            initial_value: value,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&j| j <= t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }

    /// `lim_{s -> t-} f(s)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&j| j < t);
        if k == 0 {
            self.initial_value
        } else {
            self.values[k - 1]
        }
    }
}

/// Product-limit estimator; tied event times reduce the risk set together and
/// subjects censored at `t` are still at risk at `t`.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    if times.is_empty() {
        return Err(invalid("Kaplan-Meier needs at least one subject"));
    }
    if times.len() != events.len() {
        return Err(invalid("times and events differ in length"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut out = StepFunction::constant(1.0);
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut deaths = 0;
        let mut total = 0;
        while k < order.len() && times[order[k]] == t {
            deaths += usize::from(events[order[k]]);
            total += 1;
            k += 1;
        }
        if deaths > 0 {
            s *= (at_risk - deaths) as f64 / at_risk as f64;
            out.jump_times.push(t);
            out.values.push(s);
        }
        at_risk -= total;
    }
    Ok(out)
}

/// Kaplan-Meier estimate of the censoring survival `G` (indicator inverted).
pub fn censoring_survival(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    let inverted: Vec<bool> = events.iter().map(|e| !e).collect();
    kaplan_meier(times, &inverted)
}

/// Harrell's C over pairs with `t_i < t_j` and `delta_i = 1`; a pair is
/// concordant when `risk_i > risk_j`, risk ties count one half.
pub fn concordance_index(risk_scores: &[f64], times: &[f64], events: &[bool]) -> Result<(f64, usize)> {
    let n = risk_scores.len();
    if times.len() != n || events.len() != n {
        return Err(invalid("risk scores, times and events differ in length"));
    }
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("concordance needs two subjects, got {n}")));
    }
    let mut score = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                pairs += 1;
                if risk_scores[i] > risk_scores[j] {
                    score += 1.0;
                } else if risk_scores[i] == risk_scores[j] {
                    score += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok((score / pairs as f64, pairs))
}

fn check_subjects(curves: &[SurvivalCurve], times: &[f64], events: &[bool]) -> Result<()> {
    if curves.is_empty() {
        return Err(invalid("Brier score needs at least one subject"));
    }
    if curves.len() != times.len() || times.len() != events.len() {
        return Err(invalid("curves, times and events differ in length"));
    }
    Ok(())
}

/// IPCW Brier score at `eval_time`.
pub fn brier_score(
    curves: &[SurvivalCurve],
    times: &[f64],
    events: &[bool],
    eval_time: f64,
    censor: &StepFunction,
) -> Result<f64> {
    check_subjects(curves, times, events)?;
    let g_tau = censor.value_at(eval_time);
    let mut total = 0.0;
    for ((curve, &t), &e) in curves.iter().zip(times).zip(events) {
        let s = curve
            .at(eval_time)
            .ok_or_else(|| invalid(format!("survival curve does not cover time {eval_time}")))?;
        if t <= eval_time && e {
            let g = censor.left_limit(t);
            if g <= 0.0 {
                return Err(Error::DegenerateWeights(format!("G({t}-) = 0")));
            }
            total += s * s / g;
        } else if t > eval_time {
            if g_tau <= 0.0 {
                return Err(Error::DegenerateWeights(format!("G({eval_time}) = 0")));
            }
            total += (1.0 - s) * (1.0 - s) / g_tau;
        }
    }
    Ok(total / curves.len() as f64)
}

/// Trapezoid average of the Brier score over `grid`.
pub fn integrated_brier_score(
    curves: &[SurvivalCurve],
    times: &[f64],
    events: &[bool],
    grid: &[f64],
    censor: &StepFunction,
) -> Result<f64> {
    if grid.len() < 2 {
        return Err(invalid("integrated Brier score needs at least two grid points"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("Brier grid must be strictly increasing"));
    }
    let scores = grid
        .iter()
        .map(|&tau| brier_score(curves, times, events, tau, censor))
        .collect::<Result<Vec<_>>>()?;
    let area: f64 = grid
        .windows(2)
        .zip(scores.windows(2))
        .map(|(t, b)| 0.5 * (b[0] + b[1]) * (t[1] - t[0]))
        .sum();
    Ok(area / (grid[grid.len() - 1] - grid[0]))
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `n` uniform points between the 1st and 99th percentile of `times`.
pub fn brier_grid(times: &[f64], n: usize) -> Result<Vec<f64>> {
    if times.is_empty() || n < 2 {
        return Err(invalid("Brier grid needs follow-up times and at least two points"));
    }
    let lo = percentile(times, 1.0);
    let hi = percentile(times, 99.0);
    if !(hi > lo) {
        return Err(invalid("follow-up times have no spread for a Brier grid"));
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

/// Survival curve of a step function on `grid`.
pub fn step_curve(step: &StepFunction, grid: &[f64]) -> Result<SurvivalCurve> {
    SurvivalCurve::new(grid.to_vec(), grid.iter().map(|&t| step.value_at(t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Trapezoid points for the risk score `H(t_max | x)`.
    pub integration_k: usize,
    /// Trapezoid points per segment of each predicted curve.
    pub segment_nodes: usize,
    pub grid_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            integration_k: DEFAULT_INTEGRATION_POINTS,
            segment_nodes: 5,
            grid_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub c_index: f64,
    pub ibs: f64,
    pub ibs_grid: Vec<f64>,
    pub comparable_pairs: usize,
}

impl EvaluationReport {
    /// Key-value text with metrics scaled by 100.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "c_index = {}", num(100.0 * self.c_index)).unwrap();
        writeln!(s, "ibs = {}", num(100.0 * self.ibs)).unwrap();
        writeln!(s, "comparable_pairs = {}", self.comparable_pairs).unwrap();
        writeln!(s, "ibs_grid_start = {}", num(self.ibs_grid[0])).unwrap();
        writeln!(s, "ibs_grid_end = {}", num(*self.ibs_grid.last().unwrap())).unwrap();
        writeln!(s, "ibs_grid_points = {}", self.ibs_grid.len()).unwrap();
        s
    }
}

/// Risk score `H(t_max | x)` with `t_max` the network's training horizon.
pub fn risk_scores(net: &KanNetwork, data: &SurvivalDataset, k: usize) -> Result<Vec<f64>> {
    (0..data.len())
        .map(|i| cumulative_hazard(net, data.row(i), net.time_scale(), k))
        .collect()
}

pub fn evaluate(
    net: &KanNetwork,
    test: &SurvivalDataset,
    train_for_censoring: &SurvivalDataset,
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    if test.is_empty() || train_for_censoring.is_empty() {
        return Err(invalid("evaluation needs non-empty test and training data"));
    }
    let risks = risk_scores(net, test, config.integration_k)?;
    let (c_index, comparable_pairs) = concordance_index(&risks, test.times(), test.events())?;
    let grid = brier_grid(test.times(), config.grid_points)?;
    let censor = censoring_survival(train_for_censoring.times(), train_for_censoring.events())?;
    let curves = (0..test.len())
        .map(|i| survival_curve(net, test.row(i), &grid, config.segment_nodes))
        .collect::<Result<Vec<_>>>()?;
    let ibs = integrated_brier_score(&curves, test.times(), test.events(), &grid, &censor)?;
    Ok(EvaluationReport {
        c_index,
        ibs,
        ibs_grid: grid,
        comparable_pairs,
    })
}
