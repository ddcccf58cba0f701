//! Objective assembly, AdamW optimization with early stopping, and a bounded
//! random hyperparameter search.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{stratified_folds, stratified_split_indices, SurvivalDataset};
use crate::error::{invalid, Error, Result};
use crate::format::num;
use crate::hazard::{negative_log_likelihood, nll_graph, DEFAULT_INTEGRATION_POINTS};
use crate::kan::{
    regularization, value_and_gradient, Architecture, BaseKind, FeatureNormalizer, KanNetwork, LossGraph,
    RegularizationTerms, RegularizationWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden width `m` in `0..=3`.
    pub hidden: usize,
    pub grid_intervals: usize,
    pub base: BaseKind,
    /// Overall regularization strength.
    pub lambda: f64,
    pub regularization: RegularizationWeights,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub early_stop_fraction: f64,
    pub patience: usize,
    pub integration_k: usize,
    pub seed: u64,
    /// Overrides the split seed otherwise derived from `seed`.
    pub split_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 0,
            grid_intervals: 5,
            base: BaseKind::Silu,
            lambda: 1e-3,
            regularization: RegularizationWeights::default(),
            learning_rate: 0.02,
            weight_decay: 1e-5,
            epochs: 500,
            batch_size: None,
            early_stop_fraction: 0.15,
            patience: 20,
            integration_k: DEFAULT_INTEGRATION_POINTS,
            seed: 0,
            split_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.regularization;
        let checks: [(bool, &str); 10] = [
            (self.hidden <= 3, "hidden width must be in 0..=3"),
            (self.grid_intervals >= 1, "grid needs at least one interval"),
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be non-negative"),
            (
                [w.l1, w.entropy, w.coefficient, w.smoothness].iter().all(|v| *v >= 0.0 && v.is_finite()),
                "regularizer weights must be non-negative",
            ),
            (self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning rate must be non-negative"),
            ((0.0..1.0).contains(&self.weight_decay), "weight decay must lie in [0, 1)"),
            (self.batch_size != Some(0), "batch size must be positive"),
            (
                self.early_stop_fraction > 0.0 && self.early_stop_fraction < 1.0,
                "early-stop fraction must lie in (0, 1)",
            ),
            (self.patience >= 1, "patience must be positive"),
            (self.integration_k >= 2, "integration needs at least 2 points"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(invalid(msg));
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden,
            grid_intervals: self.grid_intervals,
            base: self.base,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or_else(|| derive_seed(self.seed, 1))
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    fn shuffle_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }
}

/// SplitMix64 of `seed` mixed with a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalized `[z, t / t_max]` rows.
pub fn normalized_inputs(net: &KanNetwork, data: &SurvivalDataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len())
        .map(|i| net.normalize_input(data.row(i), data.times()[i]))
        .collect()
}

/// `NLL + lambda * regularizer` as a differentiable graph.
pub fn total_loss_graph(net: &KanNetwork, batch: &SurvivalDataset, config: &TrainConfig) -> Result<LossGraph> {
    let mut graph = nll_graph(net, batch, config.integration_k)?;
    if config.lambda > 0.0 {
        graph.set_regularizer(normalized_inputs(net, batch)?, config.regularization, config.lambda);
    }
    Ok(graph)
}

pub fn total_loss(net: &KanNetwork, batch: &SurvivalDataset, config: &TrainConfig) -> Result<f64> {
    let nll = negative_log_likelihood(net, batch, config.integration_k)?;
    if config.lambda == 0.0 {
        return Ok(nll);
    }
    let reg = regularization(net, &normalized_inputs(net, batch)?, &config.regularization)?;
    Ok(nll + config.lambda * reg.total)
}

/// Adam with weight decay decoupled from the gradient step:
/// `theta <- (1 - wd) * theta - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            if !trainable[k] {
                continue;
            }
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let decayed = params[k] * (1.0 - self.weight_decay);
            if self.learning_rate == 0.0 {
                params[k] = decayed;
            } else {
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                params[k] = decayed - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over the epoch's batches (before each update).
    pub train_loss: f64,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 is the initialized network.
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub stopping_epoch: usize,
    pub epochs_run: usize,
    /// Unscaled regularizer terms of the returned network on its training rows.
    pub final_regularization: RegularizationTerms,
    pub duration: Duration,
}

impl TrainReport {
    pub fn best_val_nll(&self) -> f64 {
        self.history[self.stopping_epoch].val_nll
    }

    /// `epoch,train_loss,train_nll,val_nll` table.
    pub fn to_table(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_nll,val_nll\n");
        for r in &self.history {
            writeln!(s, "{},{},{},{}", r.epoch, num(r.train_loss), num(r.train_nll), num(r.val_nll)).unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        let r = &self.final_regularization;
        let mut s = String::new();
        writeln!(s, "stopping_epoch = {}", self.stopping_epoch).unwrap();
        writeln!(s, "epochs_run = {}", self.epochs_run).unwrap();
        writeln!(s, "best_val_nll = {}", num(self.best_val_nll())).unwrap();
        writeln!(s, "reg_l1 = {}", num(r.l1)).unwrap();
        writeln!(s, "reg_entropy = {}", num(r.entropy)).unwrap();
        writeln!(s, "reg_coefficient = {}", num(r.coefficient)).unwrap();
        writeln!(s, "reg_smoothness = {}", num(r.smoothness)).unwrap();
        s
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Trains on `data` with a stratified early-stopping split; normalization
/// statistics and `t_max` come from the training portion only. Returns the
/// parameters of the epoch with the lowest validation NLL.
pub fn fit(data: &SurvivalDataset, config: &TrainConfig) -> Result<(KanNetwork, TrainReport)> {
    config.validate()?;
    if data.len() < 10 {
        return Err(Error::Unfittable(format!("need at least 10 rows, got {}", data.len())));
    }
    if data.event_count() == 0 {
        return Err(Error::Unfittable("no events in training data".into()));
    }
    let started = Instant::now();
    let (train_idx, val_idx) = stratified_split_indices(data.events(), config.early_stop_fraction, config.split_seed())?;
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);
    let time_scale = train.max_time();
    if !(time_scale > 0.0) {
        return Err(Error::Unfittable("all training times are zero".into()));
    }
    let normalizer = FeatureNormalizer::fit(train.features(), train.column_names())?;
    let mut samples = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let mut z = normalizer.normalize(train.row(i));
        z.push(train.times()[i] / time_scale);
        samples.push(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed());
    let mut net = KanNetwork::initialize(config.architecture(), normalizer, time_scale, &samples, &mut rng)?;

    let k = config.integration_k;
    let full_graph = total_loss_graph(&net, &train, config)?;
    let initial = full_graph.evaluate(&net)?;
    let val0 = negative_log_likelihood(&net, &val, k)?;
    if !(initial.total.is_finite() && val0.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            detail: "initial loss is not finite".into(),
        });
    }
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: initial.total,
        train_nll: initial.data,
        val_nll: val0,
    }];
    let mut best = (val0, net.parameters(), 0usize);

    let mask = net.trainable_mask();
    let mut params = net.parameters();
    let mut opt = AdamW::new(params.len(), config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed());
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        let mut loss_sum = 0.0;
        let mut nll_sum = 0.0;
        let batches: Vec<Vec<usize>> = match config.batch_size {
            Some(b) if b < train.len() => {
                order.shuffle(&mut shuffle_rng);
                order.chunks(b).map(<[usize]>::to_vec).collect()
            }
            _ => vec![Vec::new()],
        };
        for batch in &batches {
            let (value, tape) = if batch.is_empty() {
                value_and_gradient(&net, &full_graph)?
            } else {
                let sub = train.subset(batch);
                value_and_gradient(&net, &total_loss_graph(&net, &sub, config)?)?
            };
            let grads = tape.flatten();
            if !value.total.is_finite() || !all_finite(&grads) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss {} with non-finite gradient or value", value.total),
                });
            }
            let weight = if batch.is_empty() { 1.0 } else { batch.len() as f64 / train.len() as f64 };
            loss_sum += weight * value.total;
            nll_sum += weight * value.data;
            opt.step(&mut params, &grads, &mask);
            if !all_finite(&params) {
                return Err(Error::Divergence {
                    epoch,
                    detail: "parameters became non-finite".into(),
                });
            }
            net.set_parameters(&params)?;
        }
        let val_nll = negative_log_likelihood(&net, &val, k)?;
        if !val_nll.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation NLL {val_nll}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum,
            train_nll: nll_sum,
            val_nll,
        });
        if val_nll < best.0 {
            best = (val_nll, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    net.set_parameters(&best.1)?;
    net.center_feature_edges(&samples)?;
    let final_regularization = regularization(&net, &samples, &config.regularization)?;
    Ok((
        net,
        TrainReport {
            history,
            stopping_epoch: best.2,
            epochs_run,
            final_regularization,
            duration: started.elapsed(),
        },
    ))
}

/// Closed interval, sampled uniformly or log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub log: bool,
}

impl Range {
    pub fn point(v: f64) -> Self {
        Self {
            low: v,
            high: v,
            log: false,
        }
    }

    fn validate(&self, name: &str, min_exclusive_zero: bool) -> Result<()> {
        let ok = self.low.is_finite()
            && self.high.is_finite()
            && self.low <= self.high
            && self.low >= 0.0
            && (!self.log || self.low > 0.0)
            && (!min_exclusive_zero || self.high > 0.0);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("search range `{name}` is infeasible: {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            return self.low;
        }
        let u: f64 = rng.random();
        if self.log {
            (self.low.ln() + u * (self.high.ln() - self.low.ln())).exp()
        } else {
            self.low + u * (self.high - self.low)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub hidden: Vec<usize>,
    pub grid_intervals: Vec<usize>,
    pub base: Vec<BaseKind>,
    pub lambda: Range,
    pub learning_rate: Range,
    pub weight_decay: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden: vec![0, 1, 2, 3],
            grid_intervals: vec![3, 5, 8],
            base: vec![BaseKind::Silu, BaseKind::Identity],
            lambda: Range {
                low: 1e-4,
                high: 3e-2,
                log: true,
            },
            learning_rate: Range {
                low: 5e-3,
                high: 5e-2,
                log: true,
            },
            weight_decay: Range {
                low: 1e-6,
                high: 1e-4,
                log: true,
            },
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.grid_intervals.is_empty() || self.base.is_empty() {
            return Err(invalid("search space has an empty choice list"));
        }
        if self.hidden.iter().any(|&m| m > 3) || self.grid_intervals.contains(&0) {
            return Err(invalid("search space contains invalid widths or grid sizes"));
        }
        self.lambda.validate("lambda", false)?;
        self.learning_rate.validate("learning_rate", true)?;
        self.weight_decay.validate("weight_decay", false)?;
        if self.weight_decay.high >= 1.0 {
            return Err(invalid("weight decay must stay below 1"));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, template: &TrainConfig, rng: &mut R) -> TrainConfig {
        let mut c = template.clone();
        c.hidden = *self.hidden.choose(rng).expect("validated");
        c.grid_intervals = *self.grid_intervals.choose(rng).expect("validated");
        c.base = *self.base.choose(rng).expect("validated");
        c.lambda = self.lambda.sample(rng);
        c.learning_rate = self.learning_rate.sample(rng);
        c.weight_decay = self.weight_decay.sample(rng);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub config: TrainConfig,
    /// Mean held-out NLL over folds; infinite when a fold failed.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub trials: Vec<TrialRecord>,
}

fn cross_validated_nll(data: &SurvivalDataset, folds: &[Vec<usize>], config: &TrainConfig) -> f64 {
    let mut total = 0.0;
    for (f, held_out) in folds.iter().enumerate() {
        let mut in_fold = vec![false; data.len()];
        for &i in held_out {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_fold[i]).collect();
        let mut fold_config = config.clone();
        fold_config.seed = derive_seed(config.seed, 100 + f as u64);
        let score = fit(&data.subset(&train_idx), &fold_config)
            .and_then(|(net, _)| negative_log_likelihood(&net, &data.subset(held_out), config.integration_k));
        match score {
            Ok(v) if v.is_finite() => total += v,
            _ => return f64::INFINITY,
        }
    }
    total / folds.len() as f64
}

/// Samples `trials` configurations from `space` (other fields from
/// `template`), scores each by stratified `folds`-fold validation NLL and
/// returns the best. Trials run in parallel; the result does not depend on
/// scheduling.
pub fn random_search(
    data: &SurvivalDataset,
    space: &SearchSpace,
    template: &TrainConfig,
    trials: usize,
    folds: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(invalid("search needs at least one trial"));
    }
    if folds < 2 {
        return Err(invalid("search needs at least two folds"));
    }
    space.validate()?;
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = (0..trials)
        .map(|t| {
            let mut c = space.sample(template, &mut rng);
            c.seed = derive_seed(seed, 1000 + t as u64);
            c
        })
        .collect();
    let fold_sets = stratified_folds(data.events(), folds, derive_seed(seed, 7))?;
    let scores: Vec<f64> = configs
        .par_iter()
        .map(|c| cross_validated_nll(data, &fold_sets, c))
        .collect();
    let trials: Vec<TrialRecord> = configs
        .into_iter()
        .zip(scores)
        .map(|(config, score)| TrialRecord { config, score })
        .collect();
    let best = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.score.is_finite())
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
        .map(|(_, t)| t.config.clone())
        .ok_or_else(|| invalid("every search trial failed or diverged"))?;
    Ok(SearchOutcome { best, trials })
}
