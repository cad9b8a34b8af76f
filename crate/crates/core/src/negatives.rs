//! Closed-world negative sampling by entity perturbation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::rng;
use crate::vocab::{EntityId, EntityType, Triple, TripleBag, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// `+1` or `-1`.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Positive => T::one(),
            Label::Negative => -T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: Label,
}

impl LabeledTriple {
    pub fn positive(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: Label::Positive,
        }
    }

    pub fn negative(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: Label::Negative,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Negatives per positive.
    pub ratio: usize,
    /// Draw budget per positive; `None` means `100 * ratio`.
    pub max_attempts: Option<usize>,
    /// Reject perturbed triples present in the training bag.
    pub filter: bool,
    /// Draw replacements only among entities of the replaced entity's type.
    pub type_matched: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            ratio: 9,
            max_attempts: None,
            filter: true,
            type_matched: false,
        }
    }
}

/// Perturbs the head or the tail of a positive, chosen uniformly, with a
/// uniformly drawn entity. The relation is never touched and the
/// replacement always differs from the entity it replaces.
#[derive(Debug)]
pub struct NegativeSampler<'a> {
    train: &'a TripleBag,
    config: SamplerConfig,
    all: Vec<EntityId>,
    // Indexed like `EntityType::ALL`; only populated when type-matched.
    by_type: Vec<Vec<EntityId>>,
    types: Vec<Option<EntityType>>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(train: &'a TripleBag, vocab: &Vocabulary, config: SamplerConfig) -> Result<Self> {
        if config.ratio == 0 {
            return Err(Error::Config("negative ratio must be at least 1".into()));
        }
        if vocab.num_entities() < 2 {
            return Err(Error::Config("negative sampling needs at least 2 entities".into()));
        }
        let all = (0..vocab.num_entities() as u32).map(EntityId).collect();
        let (by_type, types) = if config.type_matched {
            (
                EntityType::ALL.iter().map(|t| vocab.entities_of_type(*t)).collect(),
                (0..vocab.num_entities() as u32)
                    .map(|i| vocab.entity_type(EntityId(i)))
                    .collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(NegativeSampler {
            train,
            config,
            all,
            by_type,
            types,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    fn pool(&self, replaced: EntityId) -> &[EntityId] {
        if self.config.type_matched {
            if let Some(ty) = self.types[replaced.index()] {
                let i = EntityType::ALL.iter().position(|t| *t == ty).expect("listed");
                return &self.by_type[i];
            }
        }
        &self.all
    }

    pub fn sample<R: Rng + ?Sized>(&self, positive: Triple, rng: &mut R) -> Result<Vec<LabeledTriple>> {
        let ratio = self.config.ratio;
        let budget = self.config.max_attempts.unwrap_or(100 * ratio);
        // Consecutive misses on one slot before trying the other one.
        let switch_after = (budget / (2 * ratio)).max(1);
        let mut attempts = 0;
        let mut out = Vec::with_capacity(ratio);
        while out.len() < ratio {
            let mut corrupt_head = rng.random_bool(0.5);
            let mut misses = 0;
            loop {
                if attempts == budget {
                    return Err(Error::SamplingExhausted {
                        head: positive.head.index(),
                        relation: positive.relation.index(),
                        tail: positive.tail.index(),
                        attempts,
                    });
                }
                attempts += 1;
                let replaced = if corrupt_head { positive.head } else { positive.tail };
                let pool = self.pool(replaced);
                let e = pool[rng.random_range(0..pool.len())];
                let candidate = if corrupt_head {
                    Triple { head: e, ..positive }
                } else {
                    Triple { tail: e, ..positive }
                };
                if e != replaced && !(self.config.filter && self.train.contains(&candidate)) {
                    out.push(LabeledTriple::negative(candidate));
                    break;
                }
                misses += 1;
                if misses % switch_after == 0 {
                    corrupt_head = !corrupt_head;
                }
            }
        }
        Ok(out)
    }
}

/// Samples `config.ratio` negatives for `positive` from a seeded stream.
pub fn sample_negatives(
    positive: Triple,
    train: &TripleBag,
    vocab: &Vocabulary,
    config: SamplerConfig,
    seed: u64,
) -> Result<Vec<LabeledTriple>> {
    NegativeSampler::new(train, vocab, config)?.sample(positive, &mut rng(seed))
}
