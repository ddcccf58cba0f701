//! Synthetic survival data drawn from a known log-hazard
//! `log h(t | x) = intercept + sum_k beta_k x_k + sum g(x) + t_coef * t + log_t_coef * ln t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp1, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, SurvivalDataset};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureDistribution {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub distribution: FeatureDistribution,
    /// Linear log-hazard coefficient.
    #[serde(default)]
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearKind {
    Sqrt,
    Sin,
}

/// `scale * g(inner_scale * x + inner_shift)` on one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearTerm {
    pub kind: NonlinearKind,
    pub feature: String,
    pub scale: f64,
    #[serde(default = "one")]
    pub inner_scale: f64,
    #[serde(default)]
    pub inner_shift: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Expected fraction of censored subjects, in `[0, 1)`.
    #[serde(default)]
    pub censoring_rate: f64,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub time_coefficient: f64,
    /// Coefficient on `ln t`; `log h = ln 2 + ln t` is a Weibull with shape 2.
    #[serde(default)]
    pub log_time_coefficient: f64,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub terms: Vec<NonlinearTerm>,
}

impl SyntheticSpec {
    /// Constant hazard `rate`, no covariates.
    pub fn exponential(n: usize, rate: f64, censoring_rate: f64, seed: u64) -> Self {
        Self {
            n,
            seed,
            censoring_rate,
            intercept: rate.ln(),
            time_coefficient: 0.0,
            log_time_coefficient: 0.0,
            features: Vec::new(),
            terms: Vec::new(),
        }
    }

    fn validate(&self) -> Result<Vec<usize>> {
        if self.n == 0 {
            return Err(invalid("synthetic spec needs n >= 1"));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return Err(invalid(format!(
                "censoring rate must lie in [0, 1), got {}",
                self.censoring_rate
            )));
        }
        if self.log_time_coefficient <= -1.0 {
            return Err(invalid("log-time coefficient must exceed -1 for a finite cumulative hazard"));
        }
        if self.log_time_coefficient < 0.0 && self.time_coefficient != 0.0 {
            return Err(invalid("negative log-time coefficient cannot be combined with a time coefficient"));
        }
        for f in &self.features {
            match f.distribution {
                FeatureDistribution::Normal { sd, .. } if !(sd > 0.0) => {
                    return Err(invalid(format!("feature {}: sd must be positive", f.name)))
                }
                FeatureDistribution::Uniform { low, high } if !(low < high) => {
                    return Err(invalid(format!("feature {}: empty uniform range", f.name)))
                }
                FeatureDistribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return Err(invalid(format!("feature {}: p outside [0, 1]", f.name)))
                }
                _ => {}
            }
        }
        self.terms
            .iter()
            .map(|t| {
                self.features
                    .iter()
                    .position(|f| f.name == t.feature)
                    .ok_or_else(|| invalid(format!("term references unknown feature `{}`", t.feature)))
            })
            .collect()
    }
}

/// Exact hazard, cumulative hazard and survival of a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct GroundTruth {
    spec: SyntheticSpec,
    term_features: Vec<usize>,
}

impl GroundTruth {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        let term_features = spec.validate()?;
        Ok(Self { spec, term_features })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Time-independent part of the log-hazard.
    pub fn risk(&self, x: &[f64]) -> f64 {
        let s = &self.spec;
        let mut eta = s.intercept;
        for (f, v) in s.features.iter().zip(x) {
            eta += f.coefficient * v;
        }
        for (t, &k) in s.terms.iter().zip(&self.term_features) {
            let u = t.inner_scale * x[k] + t.inner_shift;
            eta += t.scale
                * match t.kind {
                    NonlinearKind::Sqrt => u.max(0.0).sqrt(),
                    NonlinearKind::Sin => u.sin(),
                };
        }
        eta
    }

    pub fn log_hazard(&self, x: &[f64], t: f64) -> f64 {
        let s = &self.spec;
        let mut v = self.risk(x) + s.time_coefficient * t;
        if s.log_time_coefficient != 0.0 {
            v += s.log_time_coefficient * t.ln();
        }
        v
    }

    /// `int_0^t exp(beta u) u^gamma du`.
    fn baseline_cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let beta = self.spec.time_coefficient;
        let gamma = self.spec.log_time_coefficient;
        match (beta == 0.0, gamma == 0.0) {
            (true, true) => t,
            (false, true) => (beta * t).exp_m1() / beta,
            (true, false) => t.powf(gamma + 1.0) / (gamma + 1.0),
            (false, false) => adaptive_simpson(&|u: f64| (beta * u).exp() * u.powf(gamma), 0.0, t, 1e-13, 40),
        }
    }

    pub fn cumulative_hazard(&self, x: &[f64], t: f64) -> f64 {
        self.risk(x).exp() * self.baseline_cumulative(t)
    }

    pub fn survival(&self, x: &[f64], t: f64) -> f64 {
        (-self.cumulative_hazard(x, t)).exp()
    }

    /// Inverts `H(t | x) = target` by bisection to an absolute 1e-10.
    fn invert(&self, x: &[f64], target: f64) -> Result<f64> {
        let h = |t: f64| self.cumulative_hazard(x, t);
        let mut hi = 1.0;
        while h(hi) < target {
            hi *= 2.0;
            if hi > 1e15 {
                return Err(invalid("cumulative hazard stays below the sampled target; event times unbounded"));
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            if hi - lo <= 1e-10 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if h(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Expected censored fraction under exponential censoring with `rate`.
fn expected_censoring(event_times: &[f64], rate: f64) -> f64 {
    event_times.iter().map(|&t| -(-rate * t).exp_m1()).sum::<f64>() / event_times.len() as f64
}

fn calibrate_censoring(event_times: &[f64], target: f64) -> Result<f64> {
    let sup = event_times.iter().filter(|&&t| t > 0.0).count() as f64 / event_times.len() as f64;
    if target >= sup {
        return Err(Error::Calibration(format!(
            "censoring target {target} unattainable (supremum {sup})"
        )));
    }
    let mean = event_times.iter().sum::<f64>() / event_times.len() as f64;
    let mut lo = 1e-6 / mean;
    let mut hi = 1.0 / mean;
    let mut guard = 0;
    while expected_censoring(event_times, hi) < target {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Calibration("upper bracket not found".into()));
        }
    }
    while expected_censoring(event_times, lo) > target {
        lo /= 2.0;
        guard += 1;
        if guard > 4000 {
            return Err(Error::Calibration("lower bracket not found".into()));
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if expected_censoring(event_times, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Draws features, event times by inverse-transform sampling and independent
/// exponential censoring calibrated to the requested censored fraction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SurvivalDataset, GroundTruth)> {
    let truth = GroundTruth::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let samplers: Vec<Box<dyn Fn(&mut ChaCha8Rng) -> f64>> = spec
        .features
        .iter()
        .map(|f| -> Box<dyn Fn(&mut ChaCha8Rng) -> f64> {
            match f.distribution {
                FeatureDistribution::Normal { mean, sd } => {
                    let d = Normal::new(mean, sd).expect("validated");
                    Box::new(move |r| d.sample(r))
                }
                FeatureDistribution::Uniform { low, high } => {
                    let d = Uniform::new(low, high).expect("validated");
                    Box::new(move |r| d.sample(r))
                }
                FeatureDistribution::Bernoulli { p } => {
                    let d = Bernoulli::new(p).expect("validated");
                    Box::new(move |r| f64::from(u8::from(d.sample(r))))
                }
            }
        })
        .collect();

    let mut features = Vec::with_capacity(spec.n);
    let mut event_times = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: Vec<f64> = samplers.iter().map(|s| s(&mut rng)).collect();
        let e: f64 = Exp1.sample(&mut rng);
        event_times.push(truth.invert(&x, e)?);
        features.push(x);
    }

    let (times, events) = if spec.censoring_rate == 0.0 {
        (event_times.clone(), vec![true; spec.n])
    } else {
        let rate = calibrate_censoring(&event_times, spec.censoring_rate)?;
        let mut times = Vec::with_capacity(spec.n);
        let mut events = Vec::with_capacity(spec.n);
        for &t in &event_times {
            let u: f64 = rng.random();
            let c = -(1.0 - u).ln() / rate;
            times.push(t.min(c));
            events.push(t <= c);
        }
        (times, events)
    };

    let names = spec.features.iter().map(|f| f.name.clone()).collect();
    let kinds = vec![ColumnKind::Numeric; spec.features.len()];
    Ok((SurvivalDataset::new(features, times, events, names, kinds)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_exponential_mean() {
        let spec = SyntheticSpec::exponential(10_000, 1.0, 0.0, 11);
        let (d, _) = generate_synthetic(&spec).unwrap();
        let mean = d.times().iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert_eq!(d.event_count(), d.len());
    }

    #[test]
    fn censoring_hits_target_roughly() {
        let spec = SyntheticSpec::exponential(5000, 0.5, 0.3, 3);
        let (d, _) = generate_synthetic(&spec).unwrap();
        let censored = 1.0 - d.event_rate();
        assert!((censored - 0.3).abs() < 0.03, "{censored}");
    }

    #[test]
    fn ground_truth_forms() {
        let mut spec = SyntheticSpec::exponential(1, 1.0, 0.0, 0);
        spec.time_coefficient = 0.7;
        spec.log_time_coefficient = 0.5;
        let truth = GroundTruth::new(spec).unwrap();
        // crude midpoint reference for the mixed case
        let n = 200_000;
        let t = 1.3;
        let reference: f64 = (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) * t / n as f64;
                (0.7 * u).exp() * u.sqrt() * t / n as f64
            })
            .sum();
        assert!((truth.cumulative_hazard(&[], t) - reference).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SyntheticSpec::exponential(10, 1.0, 1.0, 0);
        assert!(generate_synthetic(&spec).is_err());
        spec.censoring_rate = 0.1;
        spec.terms.push(NonlinearTerm {
            kind: NonlinearKind::Sqrt,
            feature: "nope".into(),
            scale: 1.0,
            inner_scale: 1.0,
            inner_shift: 0.0,
        });
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn spec_toml_roundtrip() {
        let text = r#"
            n = 100
            seed = 4
            censoring_rate = 0.2
            intercept = -1.0
            time_coefficient = 1.2
            [[features]]
            name = "x1"
            coefficient = 0.5
            distribution = { kind = "normal", mean = 0.0, sd = 1.0 }
            [[features]]
            name = "x2"
            distribution = { kind = "uniform", low = -3.0, high = 5.0 }
            [[terms]]
            kind = "sqrt"
            feature = "x2"
            scale = 0.8
            inner_shift = 3.0
        "#;
        let spec: SyntheticSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.features.len(), 2);
        assert_eq!(spec.terms[0].inner_scale, 1.0);
        let back: SyntheticSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let (d, truth) = generate_synthetic(&spec).unwrap();
        assert_eq!(d.len(), 100);
        let x = d.row(0);
        let expect = -1.0 + 0.5 * x[0] + 0.8 * (x[1] + 3.0).sqrt() + 1.2 * 0.4;
        assert!((truth.log_hazard(x, 0.4) - expect).abs() < 1e-12);
    }
}
