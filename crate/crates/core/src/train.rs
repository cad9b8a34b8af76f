//! Minibatch training with negative sampling and early stopping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, Metric, ALL_RELATIONS, Slot};
use crate::kv;
use crate::model::{EmbeddingModel, RelationForm, SparseGradient};
use crate::negatives::{LabeledTriple, NegativeSampler, SamplerConfig};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng};
use crate::splits::Protocol;
use crate::vocab::{Triple, TripleBag, Vocabulary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adagrad,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adagrad" => Ok(Optimizer::Adagrad),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adagrad => "adagrad",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub negative_ratio: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub filter_negatives: bool,
    pub type_matched_negatives: bool,
    pub relation_form: RelationForm,
    /// L2 penalty on the rows touched by each batch.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            learning_rate: 0.1,
            batch_size: 128,
            max_epochs: 500,
            patience: 10,
            negative_ratio: 9,
            seed: 0,
            optimizer: Optimizer::Adagrad,
            filter_negatives: true,
            type_matched_negatives: false,
            relation_form: RelationForm::Rotational,
            l2: 0.0,
        }
    }
}

const KEYS: [&str; 12] = [
    "dim",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "negative_ratio",
    "seed",
    "optimizer",
    "filter_negatives",
    "type_matched_negatives",
    "relation_form",
    "l2",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.negative_ratio == 0 {
            return bad("negative_ratio must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be a finite non-negative number");
        }
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return bad("dim must be a positive even number");
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            ratio: self.negative_ratio,
            max_attempts: None,
            filter: self.filter_negatives,
            type_matched: self.type_matched_negatives,
        }
    }

    pub fn to_kv(&self) -> String {
        let values = [
            self.dim.to_string(),
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            self.negative_ratio.to_string(),
            self.seed.to_string(),
            self.optimizer.to_string(),
            self.filter_negatives.to_string(),
            self.type_matched_negatives.to_string(),
            self.relation_form.to_string(),
            self.l2.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Reads a `key=value` file; absent keys keep their default.
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown training key `{k}`")));
        }
        let mut c = TrainConfig::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv::get(&map, stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        take!(dim);
        take!(learning_rate);
        take!(batch_size);
        take!(max_epochs);
        take!(patience);
        take!(negative_ratio);
        take!(seed);
        take!(optimizer);
        take!(filter_negatives);
        take!(type_matched_negatives);
        take!(relation_form);
        take!(l2);
        c.validate()?;
        Ok(c)
    }
}

/// Per-parameter optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState<T> {
    Sgd,
    Adagrad { entity: Vec<T>, relation: Vec<T>, eps: T },
}

pub const ADAGRAD_EPS: f64 = 1e-8;

impl<T: Scalar> OptimizerState<T> {
    pub fn new(optimizer: Optimizer, model: &EmbeddingModel<T>) -> Self {
        match optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adagrad => OptimizerState::Adagrad {
                entity: vec![T::zero(); model.entity_params().len()],
                relation: vec![T::zero(); model.relation_params().len()],
                eps: T::from_f64_lossy(ADAGRAD_EPS),
            },
        }
    }
}

fn step<T: Scalar>(theta: &mut [T], g: &[T], lr: T, acc: Option<(&mut [T], T)>) {
    match acc {
        None => {
            for (p, g) in theta.iter_mut().zip(g) {
                *p = *p - lr * *g;
            }
        }
        Some((acc, eps)) => {
            for ((p, g), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a = *a + *g * *g;
                *p = *p - lr * *g / (*a + eps).sqrt();
            }
        }
    }
}

/// Applies one update to the rows present in `grad`.
///
/// SGD: `θ ← θ − lr·g`. Adagrad: `G ← G + g²`, then `θ ← θ − lr·g/√(G + ε)`.
pub fn apply_update<T: Scalar>(
    model: &mut EmbeddingModel<T>,
    grad: &SparseGradient<T>,
    learning_rate: T,
    state: &mut OptimizerState<T>,
) {
    let d = model.dim();
    for (e, g) in &grad.entities {
        let row = model.entity_row_mut(*e);
        match state {
            OptimizerState::Sgd => step(row, g, learning_rate, None),
            OptimizerState::Adagrad { entity, eps, .. } => {
                step(row, g, learning_rate, Some((&mut entity[e.index() * d..(e.index() + 1) * d], *eps)))
            }
        }
    }
    for (r, g) in &grad.relations {
        let row = model.relation_row_mut(*r);
        match state {
            OptimizerState::Sgd => step(row, g, learning_rate, None),
            OptimizerState::Adagrad { relation, eps, .. } => {
                step(row, g, learning_rate, Some((&mut relation[r.index() * d..(r.index() + 1) * d], *eps)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss per training example (positives and negatives).
    pub loss: f64,
    pub val_mrr: f64,
    /// Wall-clock seconds; not reproducible across runs.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// CSV `epoch,loss,val_mrr,seconds`, optionally preceded by `# ` comment
    /// lines. With `timings == false` the seconds column is written as 0 so
    /// the file is reproducible.
    pub fn to_csv(&self, comment: Option<&str>, timings: bool) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                out.push_str(&format!("# {line}\n"));
            }
        }
        out.push_str("epoch,loss,val_mrr,seconds\n");
        for e in &self.epochs {
            let secs = if timings { e.seconds } else { 0.0 };
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.val_mrr, secs));
        }
        out
    }
}

/// Standard MRR of `triples` over all three slots with unfiltered candidates.
pub fn validation_mrr<T: Scalar>(model: &EmbeddingModel<T>, vocab: &Vocabulary, triples: &[Triple]) -> Result<f64> {
    let empty = TripleBag::default();
    let report = eval::evaluate(model, triples, &empty, vocab, Protocol::EnvGen, 0, &EvalConfig::default())?;
    let per_slot: Vec<(f64, usize)> = Slot::ALL
        .iter()
        .filter_map(|s| {
            report
                .cells
                .iter()
                .find(|c| c.relation == ALL_RELATIONS && c.slot == *s && c.metric == Metric::Mrr)
                .map(|c| (c.value, c.n))
        })
        .collect();
    let n: usize = per_slot.iter().map(|x| x.1).sum();
    Ok(per_slot.iter().map(|(v, k)| v * *k as f64).sum::<f64>() / n as f64)
}

/// Trains a model on `train`, early-stopping on validation MRR.
///
/// Each epoch shuffles the training records (repeated observations included),
/// cuts them into batches, draws `negative_ratio` negatives per positive and
/// applies one summed-gradient update per batch. Training stops after
/// `patience` epochs without strict improvement or at `max_epochs`; the
/// parameters of the best epoch are returned. With no validation triples
/// every epoch counts as an improvement, so the final model is returned.
/// Validation triples may also occur in `train` (held-out environments share
/// triples with training ones); disjointness is the caller's choice.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train: &TripleBag,
    val: &[Triple],
) -> Result<(EmbeddingModel<T>, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training bag is empty".into()));
    }

    let mut model = EmbeddingModel::<T>::init(config.dim, vocab, config.relation_form, derive_seed(config.seed, &["train", "init"]))?;
    for r in train.records() {
        model.check_triple(&r.triple)?;
    }
    let mut state = OptimizerState::new(config.optimizer, &model);
    let sampler = NegativeSampler::new(train, vocab, config.sampler())?;
    let mut shuffle_rng = rng(derive_seed(config.seed, &["train", "shuffle"]));
    let mut neg_rng = rng(derive_seed(config.seed, &["train", "negatives"]));
    let lr = T::from_f64_lossy(config.learning_rate);
    let l2 = T::from_f64_lossy(config.l2);

    let mut order: Vec<Triple> = train.records().iter().map(|r| r.triple).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, EmbeddingModel<T>)> = None;
    let mut since_best = 0;
    let mut grad = SparseGradient::new();
    let start = Instant::now();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut examples = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.clear();
            for &pos in batch {
                let negatives = sampler.sample(pos, &mut neg_rng)?;
                for ex in std::iter::once(LabeledTriple::positive(pos)).chain(negatives) {
                    total += model.accumulate_gradient(&ex, T::one(), &mut grad).to_f64_lossy();
                    examples += 1;
                }
            }
            if l2 > T::zero() {
                add_l2(&model, &mut grad, l2);
            }
            apply_update(&mut model, &grad, lr, &mut state);
        }
        let loss = total / examples as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        let val_mrr = if val.is_empty() { 0.0 } else { validation_mrr(&model, vocab, val)? };
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            val_mrr,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: loss {loss:.6} val_mrr {val_mrr:.4}");

        let improved = val.is_empty() || best.as_ref().is_none_or(|(b, _)| val_mrr > *b);
        if improved {
            best = Some((val_mrr, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}

fn add_l2<T: Scalar>(model: &EmbeddingModel<T>, grad: &mut SparseGradient<T>, l2: T) {
    for (e, g) in grad.entities.iter_mut() {
        for (gi, p) in g.iter_mut().zip(model.entity_row(*e)) {
            *gi = *gi + l2 * *p;
        }
    }
    let diagonal = model.form() == RelationForm::Diagonal;
    for (r, g) in grad.relations.iter_mut() {
        for (i, (gi, p)) in g.iter_mut().zip(model.relation_row(*r)).enumerate() {
            if !(diagonal && i % 2 == 1) {
                *gi = *gi + l2 * *p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{EntityId, RelationId};

    fn one_param_model() -> (EmbeddingModel<f64>, SparseGradient<f64>) {
        let v = Vocabulary::from_symbols(vec!["a".into()], vec!["r".into()]).unwrap();
        let mut m = EmbeddingModel::<f64>::zeros(2, &v).unwrap();
        m.entity_row_mut(EntityId(0)).copy_from_slice(&[1.0, 0.0]);
        let mut g = SparseGradient::new();
        g.entities.insert(EntityId(0), vec![0.5, 0.0]);
        (m, g)
    }

    #[test]
    fn sgd_step_arithmetic() {
        let (mut m, g) = one_param_model();
        let mut s = OptimizerState::new(Optimizer::Sgd, &m);
        apply_update(&mut m, &g, 0.1, &mut s);
        assert!((m.entity_row(EntityId(0))[0] - 0.95).abs() < 1e-15);
        assert_eq!(m.entity_row(EntityId(0))[1], 0.0);
    }

    #[test]
    fn adagrad_first_step_is_normalized() {
        let (mut m, g) = one_param_model();
        let mut s = OptimizerState::new(Optimizer::Adagrad, &m);
        apply_update(&mut m, &g, 0.1, &mut s);
        let expected = 1.0 - 0.1 * 0.5 / (0.25f64 + ADAGRAD_EPS).sqrt();
        assert!((m.entity_row(EntityId(0))[0] - expected).abs() < 1e-15);
        assert!((m.entity_row(EntityId(0))[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let (mut m, _) = one_param_model();
        let before = m.clone();
        let mut g = SparseGradient::new();
        g.entities.insert(EntityId(0), vec![0.0, 0.0]);
        g.relations.insert(RelationId(0), vec![0.0, 0.0]);
        for opt in [Optimizer::Sgd, Optimizer::Adagrad] {
            let mut s = OptimizerState::new(opt, &m);
            apply_update(&mut m, &g, 0.1, &mut s);
            assert_eq!(m, before);
        }
    }

    #[test]
    fn config_round_trip() {
        let c = TrainConfig {
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            relation_form: RelationForm::Diagonal,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(TrainConfig::from_kv("batch_size=0\n").is_err());
        assert!(TrainConfig::from_kv("epochs=3\n").is_err());
        assert!(TrainConfig::from_kv("negative_ratio=0\n").is_err());
    }
}
