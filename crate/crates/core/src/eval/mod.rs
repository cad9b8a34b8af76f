//! Query answering, rank computation and fold-level reports.

pub mod metrics;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::scalar::Scalar;
use crate::splits::Protocol;
use crate::vocab::{EntityId, RelationId, Triple, TripleBag, Vocabulary};

pub use metrics::{hits_at_5_star, hits_at_k, hits_star, mrr, mrr_star, RankPair, STAR_HITS_THRESHOLD};
pub use stats::{mann_whitney_u, MannWhitney};

/// The unknown position of a completion query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Head,
    Relation,
    Tail,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Head, Slot::Relation, Slot::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Head => "head",
            Slot::Relation => "relation",
            Slot::Tail => "tail",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Slot::Head),
            "relation" => Ok(Slot::Relation),
            "tail" => Ok(Slot::Tail),
            other => Err(Error::Config(format!("unknown slot `{other}`"))),
        }
    }
}

/// A triple with exactly one unknown position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryPattern {
    /// `(?, r, t)`
    Head { relation: RelationId, tail: EntityId },
    /// `(h, ?, t)`
    Relation { head: EntityId, tail: EntityId },
    /// `(h, r, ?)`
    Tail { head: EntityId, relation: RelationId },
}

impl QueryPattern {
    /// The query obtained by blanking `slot` in `t`.
    pub fn from_triple(t: &Triple, slot: Slot) -> Self {
        match slot {
            Slot::Head => QueryPattern::Head {
                relation: t.relation,
                tail: t.tail,
            },
            Slot::Relation => QueryPattern::Relation {
                head: t.head,
                tail: t.tail,
            },
            Slot::Tail => QueryPattern::Tail {
                head: t.head,
                relation: t.relation,
            },
        }
    }

    pub fn slot(&self) -> Slot {
        match self {
            QueryPattern::Head { .. } => Slot::Head,
            QueryPattern::Relation { .. } => Slot::Relation,
            QueryPattern::Tail { .. } => Slot::Tail,
        }
    }

    /// Fills the unknown position with candidate id `c`.
    pub fn complete(&self, c: usize) -> Triple {
        match *self {
            QueryPattern::Head { relation, tail } => Triple {
                head: EntityId(c as u32),
                relation,
                tail,
            },
            QueryPattern::Relation { head, tail } => Triple {
                head,
                relation: RelationId(c as u32),
                tail,
            },
            QueryPattern::Tail { head, relation } => Triple {
                head,
                relation,
                tail: EntityId(c as u32),
            },
        }
    }

    /// Checks the known ids against the vocabulary sizes.
    pub fn check(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        let (e, r): (Vec<EntityId>, Vec<RelationId>) = match *self {
            QueryPattern::Head { relation, tail } => (vec![tail], vec![relation]),
            QueryPattern::Relation { head, tail } => (vec![head, tail], vec![]),
            QueryPattern::Tail { head, relation } => (vec![head], vec![relation]),
        };
        for id in e {
            if id.index() >= num_entities {
                return Err(Error::UnknownId { id: id.index(), len: num_entities });
            }
        }
        for id in r {
            if id.index() >= num_relations {
                return Err(Error::UnknownId { id: id.index(), len: num_relations });
            }
        }
        Ok(())
    }
}

/// Id of the answer `t` gives to its `slot` query.
pub fn answer_of(t: &Triple, slot: Slot) -> usize {
    match slot {
        Slot::Head => t.head.index(),
        Slot::Relation => t.relation.index(),
        Slot::Tail => t.tail.index(),
    }
}

/// Every entity for entity slots, every relation for the relation slot.
pub fn all_candidates(slot: Slot, num_entities: usize, num_relations: usize) -> Vec<usize> {
    match slot {
        Slot::Relation => (0..num_relations).collect(),
        Slot::Head | Slot::Tail => (0..num_entities).collect(),
    }
}

/// Anything that can score the candidate completions of a query; larger is
/// more plausible.
pub trait Scorer {
    fn score_candidates(&self, query: &QueryPattern, candidates: &[usize]) -> Result<Vec<f64>>;
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

impl<T: Scalar> Scorer for EmbeddingModel<T> {
    fn score_candidates(&self, query: &QueryPattern, candidates: &[usize]) -> Result<Vec<f64>> {
        query.check(self.num_entities(), self.num_relations())?;
        let limit = match query.slot() {
            Slot::Relation => self.num_relations(),
            _ => self.num_entities(),
        };
        if let Some(&c) = candidates.iter().find(|&&c| c >= limit) {
            return Err(Error::UnknownId { id: c, len: limit });
        }
        Ok(match *query {
            QueryPattern::Tail { head, relation } => {
                let p = self.project_head(head, relation);
                candidates
                    .iter()
                    .map(|&c| dot(&p, self.entity_row(EntityId(c as u32))).to_f64_lossy())
                    .collect()
            }
            QueryPattern::Head { relation, tail } => {
                let p = self.project_tail(relation, tail);
                candidates
                    .iter()
                    .map(|&c| dot(&p, self.entity_row(EntityId(c as u32))).to_f64_lossy())
                    .collect()
            }
            QueryPattern::Relation { .. } => candidates
                .iter()
                .map(|&c| self.score_unchecked(&query.complete(c)).to_f64_lossy())
                .collect(),
        })
    }
}

/// Candidates with their scores, best first; equal scores keep ascending id
/// order.
pub fn rank_answers<S: Scorer + ?Sized>(
    scorer: &S,
    query: &QueryPattern,
    candidates: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates to rank".into()));
    }
    let scores = scorer.score_candidates(query, candidates)?;
    let mut ranked: Vec<(usize, f64)> = candidates.iter().copied().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// 1-based position of `answer` in a ranked list.
pub fn inferred_rank(ranked: &[(usize, f64)], answer: usize) -> Option<usize> {
    ranked.iter().position(|(c, _)| *c == answer).map(|p| p + 1)
}

/// Competition rank of `answer`'s score: one plus the number of strictly
/// better scores, so tied candidates share a rank.
pub fn competition_rank(ranked: &[(usize, f64)], answer: usize) -> Option<usize> {
    let score = ranked.iter().find(|(c, _)| *c == answer)?.1;
    Some(1 + ranked.partition_point(|(_, s)| s.total_cmp(&score).is_gt()))
}

/// Competition ranks by observation count in `bag`, aligned with
/// `candidates`: `rank(c) = 1 + |{c' : count(c') > count(c)}|`.
pub fn ground_truth_ranks(bag: &TripleBag, query: &QueryPattern, candidates: &[usize]) -> Vec<usize> {
    let counts: Vec<u32> = candidates.iter().map(|&c| bag.count(&query.complete(c))).collect();
    let mut desc = counts.clone();
    desc.sort_unstable_by(|a, b| b.cmp(a));
    counts
        .iter()
        .map(|&c| 1 + desc.partition_point(|&x| x > c))
        .collect()
}

/// Metric names as they appear in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    MrrStar,
    HitsStar,
    Mrr,
    HitsAt(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::MrrStar => f.write_str("mrr*"),
            Metric::HitsStar => write!(f, "hits@{STAR_HITS_THRESHOLD}*"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::HitsAt(k) => write!(f, "hits@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrr*" => Ok(Metric::MrrStar),
            "mrr" => Ok(Metric::Mrr),
            _ if s == format!("hits@{STAR_HITS_THRESHOLD}*") => Ok(Metric::HitsStar),
            _ => s
                .strip_prefix("hits@")
                .and_then(|k| k.parse().ok())
                .map(Metric::HitsAt)
                .ok_or_else(|| Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

/// Label used for the pooled row over all relations.
pub const ALL_RELATIONS: &str = "all";

/// One report cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub relation: String,
    pub slot: Slot,
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
    pub fold: usize,
}

/// Per relation × slot metrics, one cell per fold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingReport {
    pub cells: Vec<ReportCell>,
}

pub const REPORT_HEADER: &str = "relation,slot,metric,value,n,fold";

impl RankingReport {
    pub fn merge(&mut self, other: RankingReport) {
        self.cells.extend(other.cells);
    }

    /// Per-fold values of one cell, in report order.
    pub fn values(&self, relation: &str, slot: Slot, metric: Metric) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.relation == relation && c.slot == slot && c.metric == metric)
            .map(|c| c.value)
            .collect()
    }

    pub fn mean(&self, relation: &str, slot: Slot, metric: Metric) -> Option<f64> {
        let v = self.values(relation, slot, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// CSV with header; `comment` lines (without `#`) precede the header.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.relation, c.slot, c.metric, c.value, c.n, c.fold
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') || line == REPORT_HEADER {
                continue;
            }
            let err = |m: &str| Error::Parse { line: i + 1, message: m.to_owned() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err("expected 6 comma-separated fields"));
            }
            cells.push(ReportCell {
                relation: f[0].to_owned(),
                slot: f[1].parse()?,
                metric: f[2].parse()?,
                value: f[3].parse().map_err(|_| err("bad value"))?,
                n: f[4].parse().map_err(|_| err("bad n"))?,
                fold: f[5].parse().map_err(|_| err("bad fold"))?,
            });
        }
        Ok(RankingReport { cells })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    /// `K` of the standard Hits@K.
    pub hits_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { hits_k: 5 }
    }
}

/// Inferred (and, for triple generalization, ground-truth) ranks of one
/// test triple's answer in one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryOutcome {
    pub triple: Triple,
    pub slot: Slot,
    pub inferred: usize,
    /// Competition rank of the answer's score, paired with `ground_truth`
    /// so that ties are treated alike on both sides.
    pub inferred_band: usize,
    pub ground_truth: Option<usize>,
}

/// Ranks every test triple's answer in each slot.
///
/// Candidate sets are all entities or all relations. Ground-truth ranks are
/// taken from `full_bag` counts only for [`Protocol::TripleGen`].
pub fn rank_outcomes<S: Scorer + ?Sized>(
    scorer: &S,
    test: &[Triple],
    full_bag: &TripleBag,
    vocab: &Vocabulary,
    protocol: Protocol,
) -> Result<Vec<QueryOutcome>> {
    let mut out = Vec::with_capacity(test.len() * 3);
    for t in test {
        for slot in Slot::ALL {
            let query = QueryPattern::from_triple(t, slot);
            let candidates = all_candidates(slot, vocab.num_entities(), vocab.num_relations());
            let ranked = rank_answers(scorer, &query, &candidates)?;
            let answer = answer_of(t, slot);
            let inferred = inferred_rank(&ranked, answer).expect("answer is a candidate");
            let inferred_band = competition_rank(&ranked, answer).expect("answer is a candidate");
            let ground_truth = (protocol == Protocol::TripleGen)
                .then(|| ground_truth_ranks(full_bag, &query, &candidates)[answer]);
            out.push(QueryOutcome {
                triple: *t,
                slot,
                inferred,
                inferred_band,
                ground_truth,
            });
        }
    }
    Ok(out)
}

/// Aggregates outcomes per relation × slot (plus the pooled `all` row).
pub fn summarize(outcomes: &[QueryOutcome], vocab: &Vocabulary, fold: usize, config: &EvalConfig) -> Result<RankingReport> {
    let mut groups: BTreeMap<(Option<RelationId>, Slot), Vec<&QueryOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((Some(o.triple.relation), o.slot)).or_default().push(o);
        groups.entry((None, o.slot)).or_default().push(o);
    }
    // Relations in id order first, pooled rows last.
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_by_key(|(r, s)| (r.is_none(), *r, *s));
    let mut cells = Vec::new();
    for key in keys {
        let group = &groups[&key];
        let relation = key.0.map_or(ALL_RELATIONS.to_owned(), |r| vocab.relation_symbol(r).to_owned());
        let n = group.len();
        let ranks: Vec<usize> = group.iter().map(|o| o.inferred).collect();
        let pairs: Vec<RankPair> = group
            .iter()
            .filter_map(|o| o.ground_truth.map(|g| RankPair::new(g, o.inferred_band)))
            .collect();
        let mut push = |metric, value| {
            cells.push(ReportCell {
                relation: relation.clone(),
                slot: key.1,
                metric,
                value,
                n,
                fold,
            })
        };
        if !pairs.is_empty() {
            push(Metric::MrrStar, mrr_star::<f64>(&pairs)?);
            push(Metric::HitsStar, hits_at_5_star::<f64>(&pairs)?);
        }
        push(Metric::Mrr, mrr::<f64>(&ranks)?);
        push(Metric::HitsAt(config.hits_k), hits_at_k::<f64>(&ranks, config.hits_k)?);
    }
    Ok(RankingReport { cells })
}

/// Evaluates `scorer` on one fold's test triples.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    test: &[Triple],
    full_bag: &TripleBag,
    vocab: &Vocabulary,
    protocol: Protocol,
    fold: usize,
    config: &EvalConfig,
) -> Result<RankingReport> {
    let outcomes = rank_outcomes(scorer, test, full_bag, vocab, protocol)?;
    summarize(&outcomes, vocab, fold, config)
}

/// Mann–Whitney comparison of two reports, cell by cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceRow {
    pub relation: String,
    pub slot: Slot,
    pub metric: Metric,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub u: f64,
    pub p_value: f64,
}

/// Compares per-fold values of every (relation, slot, metric) present in
/// both reports.
pub fn significance(a: &RankingReport, b: &RankingReport) -> Result<Vec<SignificanceRow>> {
    let mut keys: Vec<(String, Slot, Metric)> = Vec::new();
    for c in &a.cells {
        let k = (c.relation.clone(), c.slot, c.metric);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (relation, slot, metric) in keys {
        let (va, vb) = (a.values(&relation, slot, metric), b.values(&relation, slot, metric));
        if vb.is_empty() {
            continue;
        }
        let mw = mann_whitney_u(&va, &vb)?;
        out.push(SignificanceRow {
            mean_a: va.iter().sum::<f64>() / va.len() as f64,
            mean_b: vb.iter().sum::<f64>() / vb.len() as f64,
            n_a: va.len(),
            n_b: vb.len(),
            relation,
            slot,
            metric,
            u: mw.u,
            p_value: mw.p_value,
        });
    }
    Ok(out)
}

pub fn significance_csv(rows: &[SignificanceRow], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str(&format!("# {line}\n"));
        }
    }
    out.push_str("relation,slot,metric,n_a,n_b,mean_a,mean_b,u,p\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.relation, r.slot, r.metric, r.n_a, r.n_b, r.mean_a, r.mean_b, r.u, r.p_value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{ingest, VocabPolicy};

    /// Scores from a fixed table, keyed by candidate id.
    struct Table(Vec<f64>);

    impl Scorer for Table {
        fn score_candidates(&self, _: &QueryPattern, candidates: &[usize]) -> Result<Vec<f64>> {
            Ok(candidates.iter().map(|&c| self.0[c]).collect())
        }
    }

    fn q() -> QueryPattern {
        QueryPattern::Tail {
            head: EntityId(0),
            relation: RelationId(0),
        }
    }

    #[test]
    fn ranks_by_score_then_id() {
        let r = rank_answers(&Table(vec![0.9, 0.1]), &q(), &[0, 1]).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
        let r = rank_answers(&Table(vec![0.1, 0.5, 0.5, 0.7]), &q(), &[3, 2, 1, 0]).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![3, 1, 2, 0]);
        assert_eq!(inferred_rank(&r, 2), Some(3));
        assert_eq!(competition_rank(&r, 2), Some(2));
        assert_eq!(competition_rank(&r, 0), Some(4));
        assert_eq!(competition_rank(&r, 9), None);
        assert!(rank_answers(&Table(vec![]), &q(), &[]).is_err());
    }

    #[test]
    fn competition_ground_truth_ranks() {
        let text = "fork\tatLocation\tkitchen\tkitchen\tk\n".repeat(5)
            + &"fork\tatLocation\tbathroom\tbathroom\tb\n".repeat(2)
            + &"fork\tatLocation\tbedroom\tbedroom\tc\n".repeat(2);
        let (mut v, bag) = ingest(&text, Vocabulary::new(), VocabPolicy::Extend).unwrap();
        let garage = v.intern_entity("garage");
        let fork = v.entity_id("fork").unwrap();
        let query = QueryPattern::Tail {
            head: fork,
            relation: v.relation_id("atLocation").unwrap(),
        };
        let cands: Vec<usize> = ["kitchen", "bathroom", "bedroom"]
            .iter()
            .map(|s| v.entity_id(s).unwrap().index())
            .chain([garage.index()])
            .collect();
        assert_eq!(ground_truth_ranks(&bag, &query, &cands), vec![1, 2, 2, 4]);
        // All-zero counts share rank 1.
        let empty = TripleBag::default();
        assert_eq!(ground_truth_ranks(&empty, &query, &cands), vec![1, 1, 1, 1]);
    }

    #[test]
    fn query_patterns_round_trip_triples() {
        let t = Triple::new(4, 1, 7);
        for slot in Slot::ALL {
            let q = QueryPattern::from_triple(&t, slot);
            assert_eq!(q.slot(), slot);
            assert_eq!(q.complete(answer_of(&t, slot)), t);
        }
        assert!(QueryPattern::from_triple(&t, Slot::Head).check(5, 1).is_err());
        assert!(QueryPattern::from_triple(&t, Slot::Head).check(8, 2).is_ok());
    }

    #[test]
    fn report_csv_round_trip() {
        let rep = RankingReport {
            cells: vec![
                ReportCell { relation: "atLocation".into(), slot: Slot::Tail, metric: Metric::HitsStar, value: 0.25, n: 4, fold: 0 },
                ReportCell { relation: "all".into(), slot: Slot::Head, metric: Metric::HitsAt(10), value: 1.0 / 3.0, n: 3, fold: 2 },
            ],
        };
        let csv = rep.to_csv(Some("manifest=abc"));
        assert!(csv.starts_with("# manifest=abc\nrelation,slot,metric,value,n,fold\n"));
        assert!(csv.contains("atLocation,tail,hits@5*,0.25,4,0\n"));
        assert_eq!(RankingReport::from_csv(&csv).unwrap(), rep);
    }
}
