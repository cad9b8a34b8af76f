//! Comparison systems: training-count memorization, static word-vector
//! cosine ranking, and the analytic within-type chance bound.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::eval::{all_candidates, answer_of, EvalConfig, Metric, QueryPattern, RankingReport, ReportCell, Scorer, Slot, ALL_RELATIONS};
use crate::vocab::{EntityId, EntityType, RelationId, Triple, TripleBag, Vocabulary};

/// Scores a completion by how often it was observed in training.
#[derive(Clone, Copy, Debug)]
pub struct FrequencyModel<'a> {
    train: &'a TripleBag,
}

impl<'a> FrequencyModel<'a> {
    pub fn new(train: &'a TripleBag) -> Self {
        FrequencyModel { train }
    }
}

impl Scorer for FrequencyModel<'_> {
    fn score_candidates(&self, query: &QueryPattern, candidates: &[usize]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|&c| f64::from(self.train.count(&query.complete(c))))
            .collect())
    }
}

/// Token vectors read from a text table: a `count dim` header, then one
/// `token v1 … v_dim` line per token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StaticWordVectors {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl StaticWordVectors {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `count dim` header".into(),
        })?;
        let err = |line: usize, m: String| Error::Parse { line, message: m };
        let h: Vec<&str> = header.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match h.as_slice() {
            [c, d] => c.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        let (count, dim) = parsed.ok_or_else(|| err(1, format!("expected `count dim`, found `{header}`")))?;
        let mut vectors = BTreeMap::new();
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("line is not blank");
            let v: Vec<f64> = fields
                .map(|x| x.parse().map_err(|_| err(i + 1, format!("bad number `{x}`"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(err(i + 1, format!("`{token}` has {} components, expected {dim}", v.len())));
            }
            if vectors.insert(token.to_owned(), v).is_some() {
                return Err(err(i + 1, format!("duplicate token `{token}`")));
            }
        }
        if vectors.len() != count {
            return Err(err(1, format!("header declares {count} tokens, found {}", vectors.len())));
        }
        Ok(StaticWordVectors { dim, vectors })
    }

    pub fn from_map(dim: usize, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((t, _)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Config(format!("vector for `{t}` is not {dim}-dimensional")));
        }
        Ok(StaticWordVectors { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn set(&mut self, token: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Config(format!("vector for `{token}` is not {}-dimensional", self.dim)));
        }
        self.vectors.insert(token.to_owned(), v);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.vectors.len(), self.dim);
        for (t, v) in &self.vectors {
            out.push_str(t);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// How the comparison group is summarized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Cosine against the mean vector of the group.
    #[default]
    Mean,
    /// Highest cosine against any group member.
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// What to do with a symbol absent from the vector table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingToken {
    /// Leave it out of the group, score it 0 as a candidate, warn once.
    #[default]
    Skip,
    Error,
}

impl FromStr for MissingToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(MissingToken::Skip),
            "error" => Ok(MissingToken::Error),
            other => Err(Error::Config(format!("unknown missing-token policy `{other}`"))),
        }
    }
}

/// Ranks candidates by similarity to the comparison group `C`: the answers
/// the training bag gives to the query's fixed pair. Members of `C` are
/// excluded (scored `-inf`). When `C` is empty every candidate scores 0 and
/// the fallback counter is incremented.
#[derive(Debug)]
pub struct CosineBaseline<'a> {
    vectors: &'a StaticWordVectors,
    train: &'a TripleBag,
    vocab: &'a Vocabulary,
    aggregation: Aggregation,
    missing: MissingToken,
    fallbacks: AtomicUsize,
    warned: Mutex<BTreeSet<String>>,
}

impl<'a> CosineBaseline<'a> {
    pub fn new(vectors: &'a StaticWordVectors, train: &'a TripleBag, vocab: &'a Vocabulary) -> Self {
        CosineBaseline {
            vectors,
            train,
            vocab,
            aggregation: Aggregation::Mean,
            missing: MissingToken::Skip,
            fallbacks: AtomicUsize::new(0),
            warned: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_missing(mut self, missing: MissingToken) -> Self {
        self.missing = missing;
        self
    }

    /// Queries answered with the empty-group fallback so far.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    /// Training answers to the query's fixed pair.
    pub fn comparison_group(&self, query: &QueryPattern) -> Vec<usize> {
        match *query {
            QueryPattern::Head { relation, tail } => self.train.heads(relation, tail).iter().map(|e| e.index()).collect(),
            QueryPattern::Tail { head, relation } => self.train.tails(head, relation).iter().map(|e| e.index()).collect(),
            QueryPattern::Relation { head, tail } => {
                self.train.relations_between(head, tail).iter().map(|r| r.index()).collect()
            }
        }
    }

    fn symbol(&self, slot: Slot, id: usize) -> &str {
        match slot {
            Slot::Relation => self.vocab.relation_symbol(RelationId(id as u32)),
            Slot::Head | Slot::Tail => self.vocab.entity_symbol(EntityId(id as u32)),
        }
    }

    fn lookup(&self, symbol: &str) -> Result<Option<&[f64]>> {
        match self.vectors.get(symbol) {
            Some(v) => Ok(Some(v)),
            None if self.missing == MissingToken::Error => Err(Error::UnknownSymbol(symbol.to_owned())),
            None => {
                let mut warned = self.warned.lock().expect("warning set is never poisoned");
                if warned.insert(symbol.to_owned()) {
                    log::warn!("no vector for `{symbol}`; skipping it");
                }
                Ok(None)
            }
        }
    }
}

impl Scorer for CosineBaseline<'_> {
    fn score_candidates(&self, query: &QueryPattern, candidates: &[usize]) -> Result<Vec<f64>> {
        let slot = query.slot();
        let group_ids = self.comparison_group(query);
        let mut group = Vec::with_capacity(group_ids.len());
        for &g in &group_ids {
            if let Some(v) = self.lookup(self.symbol(slot, g))? {
                group.push(v);
            }
        }
        if group.is_empty() {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            log::debug!("empty comparison group for {slot} query; scoring all candidates 0");
            return Ok(vec![0.0; candidates.len()]);
        }
        let mean: Vec<f64> = (0..self.vectors.dim())
            .map(|i| group.iter().map(|v| v[i]).sum::<f64>() / group.len() as f64)
            .collect();
        let mut out = Vec::with_capacity(candidates.len());
        for &c in candidates {
            if group_ids.contains(&c) {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let score = match self.lookup(self.symbol(slot, c))? {
                None => 0.0,
                Some(v) => match self.aggregation {
                    Aggregation::Mean => cosine(v, &mean),
                    Aggregation::Max => group.iter().map(|g| cosine(v, g)).fold(f64::NEG_INFINITY, f64::max),
                },
            };
            out.push(score);
        }
        Ok(out)
    }
}

/// Probability that a uniform guess among `type_size` same-typed answers
/// puts the correct one in the top `k`: `min(1, k / type_size)`.
pub fn type_chance_bound(type_size: usize, k: usize) -> Result<f64> {
    if type_size == 0 || k == 0 {
        return Err(Error::Config("type size and k must both be at least 1".into()));
    }
    Ok((k as f64 / type_size as f64).min(1.0))
}

/// Expected reciprocal rank of the correct answer under a uniform guess
/// among `type_size` answers: `H(T) / T`.
pub fn expected_chance_mrr(type_size: usize) -> Result<f64> {
    if type_size == 0 {
        return Err(Error::Config("type size must be at least 1".into()));
    }
    let h: f64 = (1..=type_size).map(|i| 1.0 / i as f64).sum();
    Ok(h / type_size as f64)
}

/// Answer-type pool sizes a typed reasoner would guess among.
///
/// Entity slots guess among all entities sharing the answer's type (all
/// entities when it is untyped). The relation slot guesses among relations
/// whose observed (head type, tail type) signature matches the query.
#[derive(Clone, Debug)]
pub struct TypePools {
    by_type: BTreeMap<EntityType, usize>,
    types: Vec<Option<EntityType>>,
    signatures: BTreeSet<(RelationId, Option<EntityType>, Option<EntityType>)>,
    num_entities: usize,
    num_relations: usize,
}

impl TypePools {
    pub fn new(vocab: &Vocabulary, train: &TripleBag) -> Self {
        let types: Vec<Option<EntityType>> = (0..vocab.num_entities() as u32).map(|i| vocab.entity_type(EntityId(i))).collect();
        let mut by_type = BTreeMap::new();
        for t in types.iter().flatten() {
            *by_type.entry(*t).or_insert(0) += 1;
        }
        let signatures = train
            .records()
            .iter()
            .map(|r| (r.triple.relation, types[r.triple.head.index()], types[r.triple.tail.index()]))
            .collect();
        TypePools {
            by_type,
            types,
            signatures,
            num_entities: vocab.num_entities(),
            num_relations: vocab.num_relations(),
        }
    }

    pub fn size(&self, triple: &Triple, slot: Slot) -> usize {
        match slot {
            Slot::Head | Slot::Tail => match self.types[answer_of(triple, slot)] {
                Some(t) => self.by_type[&t],
                None => self.num_entities,
            },
            Slot::Relation => {
                let (ht, tt) = (self.types[triple.head.index()], self.types[triple.tail.index()]);
                let n = self
                    .signatures
                    .iter()
                    .filter(|(_, h, t)| *h == ht && *t == tt)
                    .map(|(r, _, _)| r)
                    .collect::<BTreeSet<_>>()
                    .len();
                if n == 0 {
                    self.num_relations
                } else {
                    n
                }
            }
        }
    }
}

/// Analytic chance report for `test` in the evaluator's cell layout: mean
/// Hits@K bound and mean expected MRR per relation × slot.
pub fn chance_report(pools: &TypePools, test: &[Triple], vocab: &Vocabulary, fold: usize, config: &EvalConfig) -> Result<RankingReport> {
    let mut groups: BTreeMap<(Option<RelationId>, Slot), Vec<usize>> = BTreeMap::new();
    for t in test {
        for slot in Slot::ALL {
            let size = pools.size(t, slot);
            groups.entry((Some(t.relation), slot)).or_default().push(size);
            groups.entry((None, slot)).or_default().push(size);
        }
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_by_key(|(r, s)| (r.is_none(), *r, *s));
    let mut cells = Vec::new();
    for key in keys {
        let sizes = &groups[&key];
        let relation = key.0.map_or(ALL_RELATIONS.to_owned(), |r| vocab.relation_symbol(r).to_owned());
        let n = sizes.len();
        let mut mrr = 0.0;
        let mut hits = 0.0;
        for &s in sizes {
            mrr += expected_chance_mrr(s)?;
            hits += type_chance_bound(s, config.hits_k)?;
        }
        for (metric, value) in [(Metric::Mrr, mrr / n as f64), (Metric::HitsAt(config.hits_k), hits / n as f64)] {
            cells.push(ReportCell {
                relation: relation.clone(),
                slot: key.1,
                metric,
                value,
                n,
                fold,
            });
        }
    }
    Ok(RankingReport { cells })
}

/// Candidate count for a slot, for uniform-guess comparisons.
pub fn candidate_count(slot: Slot, vocab: &Vocabulary) -> usize {
    all_candidates(slot, vocab.num_entities(), vocab.num_relations()).len()
}
