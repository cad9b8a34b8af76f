//! Cross-validation folds for the three evaluation protocols.
//!
//! * `triple_gen` holds out unique triples: the unique set is shuffled,
//!   cut into `k` near-equal parts, and each part is halved into validation
//!   and test. Training keeps every record whose triple is not held out.
//! * `env_gen` holds out whole environments, balanced per environment type.
//! * `domain_transfer` trains on all of one corpus and tests on the records
//!   of another that pass a relation filter and exist in the source vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, derive_seed_indexed, rng};
use crate::vocab::{EnvType, ObservationRecord, Triple, TripleBag, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    TripleGen,
    EnvGen,
    DomainTransfer,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::TripleGen => "triple_gen",
            Protocol::EnvGen => "env_gen",
            Protocol::DomainTransfer => "domain_transfer",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triple_gen" => Ok(Protocol::TripleGen),
            "env_gen" => Ok(Protocol::EnvGen),
            "domain_transfer" => Ok(Protocol::DomainTransfer),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

/// One fold: sorted record ids per split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub protocol: Protocol,
    pub fold_index: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn unique_of(bag: &TripleBag, ids: &[usize]) -> Vec<Triple> {
    let set: BTreeSet<Triple> = ids.iter().map(|&i| bag.records()[i].triple).collect();
    set.into_iter().collect()
}

impl FoldSpec {
    pub fn train_bag(&self, bag: &TripleBag) -> TripleBag {
        bag.subset(self.train.iter().copied())
    }

    /// Distinct validation triples, sorted.
    pub fn val_triples(&self, bag: &TripleBag) -> Vec<Triple> {
        unique_of(bag, &self.val)
    }

    /// Distinct test triples, sorted.
    pub fn test_triples(&self, bag: &TripleBag) -> Vec<Triple> {
        unique_of(bag, &self.test)
    }

    /// `# protocol=… fold=… seed=…` header, then `record_id⇥split` rows in
    /// ascending record order.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(usize, &str)> = self
            .train
            .iter()
            .map(|&i| (i, "train"))
            .chain(self.val.iter().map(|&i| (i, "val")))
            .chain(self.test.iter().map(|&i| (i, "test")))
            .collect();
        rows.sort();
        let mut out = format!(
            "# protocol={} fold={} seed={}\n",
            self.protocol, self.fold_index, self.seed
        );
        for (id, split) in rows {
            out.push_str(&format!("{id}\t{split}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# "))
            .ok_or(Error::Parse {
                line: 1,
                message: "missing `# protocol=… fold=… seed=…` header".into(),
            })?;
        let mut fields = BTreeMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or(Error::Parse {
                line: 1,
                message: format!("bad header field `{kv}`"),
            })?;
            fields.insert(k, v);
        }
        let field = |k: &str| {
            fields.get(k).copied().ok_or(Error::Parse {
                line: 1,
                message: format!("header lacks `{k}`"),
            })
        };
        let bad_num = |k: &str| Error::Parse {
            line: 1,
            message: format!("header field `{k}` is not an integer"),
        };
        let mut fold = FoldSpec {
            protocol: field("protocol")?.parse()?,
            fold_index: field("fold")?.parse().map_err(|_| bad_num("fold"))?,
            seed: field("seed")?.parse().map_err(|_| bad_num("seed"))?,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `record_id⇥split`".into()))?;
            let id: usize = id.parse().map_err(|_| parse_err(format!("bad record id `{id}`")))?;
            match split {
                "train" => fold.train.push(id),
                "val" => fold.val.push(id),
                "test" => fold.test.push(id),
                other => return Err(parse_err(format!("unknown split `{other}`"))),
            }
        }
        Ok(fold)
    }
}

/// `n` items cut into `k` contiguous parts whose sizes differ by at most one.
fn partition(n: usize, k: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Folds that hold out unique triples.
pub fn make_triple_gen_folds(bag: &TripleBag, k: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    if k < 2 {
        return Err(Error::Config(format!("need k >= 2 folds, got {k}")));
    }
    let mut unique: Vec<Triple> = bag.unique_triples().into_iter().map(|(t, _)| t).collect();
    if unique.len() < 2 * k {
        return Err(Error::Config(format!(
            "{} unique triples cannot fill {k} folds (need at least {})",
            unique.len(),
            2 * k
        )));
    }
    unique.shuffle(&mut rng(derive_seed(seed, &["triple_gen", "shuffle"])));

    let folds = partition(unique.len(), k)
        .into_iter()
        .enumerate()
        .map(|(f, range)| {
            let part = &unique[range];
            let n_val = part.len().div_ceil(2);
            let val_set: HashSet<Triple> = part[..n_val].iter().copied().collect();
            let test_set: HashSet<Triple> = part[n_val..].iter().copied().collect();
            let mut spec = FoldSpec {
                protocol: Protocol::TripleGen,
                fold_index: f,
                seed,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (id, rec) in bag.records().iter().enumerate() {
                if val_set.contains(&rec.triple) {
                    spec.val.push(id);
                } else if test_set.contains(&rec.triple) {
                    spec.test.push(id);
                } else {
                    spec.train.push(id);
                }
            }
            spec
        })
        .collect();
    Ok(folds)
}

/// Folds that hold out whole environments, balanced across environment types.
///
/// Odd held-out groups alternate which half receives the extra environment
/// (validation when `type_index + fold` is even), so that with one held-out
/// environment per type both validation and test still see every other type.
/// `train_rooms_per_type` subsamples the training environments of each type.
pub fn make_env_gen_folds(
    bag: &TripleBag,
    k: usize,
    seed: u64,
    train_rooms_per_type: Option<usize>,
) -> Result<Vec<FoldSpec>> {
    if k < 2 {
        return Err(Error::Config(format!("need k >= 2 folds, got {k}")));
    }
    let by_type = bag.environments_by_type();
    if by_type.is_empty() {
        return Err(Error::Config("no environments to split".into()));
    }
    let mut shuffled: BTreeMap<EnvType, Vec<String>> = BTreeMap::new();
    for (ty, envs) in by_type {
        if envs.len() < k {
            return Err(Error::Config(format!(
                "{ty} has {} environments, fewer than k = {k}",
                envs.len()
            )));
        }
        let mut envs = envs;
        envs.shuffle(&mut rng(derive_seed(seed, &["env_gen", ty.as_str()])));
        shuffled.insert(ty, envs);
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (mut train_envs, mut val_envs, mut test_envs) = (Vec::new(), Vec::new(), Vec::new());
        for (ti, (ty, envs)) in shuffled.iter().enumerate() {
            let parts = partition(envs.len(), k);
            let held = &envs[parts[f].clone()];
            let n = held.len();
            let n_val = if n % 2 == 1 && (ti + f) % 2 == 1 { n / 2 } else { n.div_ceil(2) };
            val_envs.extend_from_slice(&held[..n_val]);
            test_envs.extend_from_slice(&held[n_val..]);

            let mut rest: Vec<String> = envs
                .iter()
                .enumerate()
                .filter(|(i, _)| !parts[f].contains(i))
                .map(|(_, e)| e.clone())
                .collect();
            if let Some(m) = train_rooms_per_type {
                if m == 0 || m > rest.len() {
                    return Err(Error::Config(format!(
                        "{ty}: cannot keep {m} training environments out of {}",
                        rest.len()
                    )));
                }
                rest.shuffle(&mut rng(derive_seed_indexed(seed, &["env_gen", "subsample", ty.as_str()], f as u64)));
                rest.truncate(m);
            }
            train_envs.extend(rest);
        }
        let ids = |envs: &[String]| {
            let mut v: Vec<usize> = envs
                .iter()
                .flat_map(|e| bag.env_index()[e].iter().copied())
                .collect();
            v.sort_unstable();
            v
        };
        folds.push(FoldSpec {
            protocol: Protocol::EnvGen,
            fold_index: f,
            seed,
            train: ids(&train_envs),
            val: ids(&val_envs),
            test: ids(&test_envs),
        });
    }
    Ok(folds)
}

/// A transfer split. `target` holds the target records re-interned into the
/// source vocabulary; `fold.train` indexes the source bag and `fold.test`
/// indexes `target`.
#[derive(Clone, Debug)]
pub struct TransferSplit {
    pub fold: FoldSpec,
    pub target: TripleBag,
    /// Original target record ids dropped because a symbol is absent from
    /// the source vocabulary.
    pub dropped_oov: Vec<usize>,
    /// Aligned target records excluded by the relation filter.
    pub filtered_out: usize,
}

pub fn make_domain_transfer_split(
    source_vocab: &Vocabulary,
    source: &TripleBag,
    target_vocab: &Vocabulary,
    target: &TripleBag,
    relation_filter: &[String],
) -> Result<TransferSplit> {
    if relation_filter.is_empty() {
        return Err(Error::Config("relation filter is empty".into()));
    }
    let keep: BTreeSet<&str> = relation_filter.iter().map(String::as_str).collect();
    let mut aligned = Vec::new();
    let mut dropped_oov = Vec::new();
    for (id, rec) in target.records().iter().enumerate() {
        let t = rec.triple;
        let mapped = (|| {
            Some(Triple {
                head: source_vocab.entity_id(target_vocab.entity_symbol(t.head)).ok()?,
                relation: source_vocab.relation_id(target_vocab.relation_symbol(t.relation)).ok()?,
                tail: source_vocab.entity_id(target_vocab.entity_symbol(t.tail)).ok()?,
            })
        })();
        match mapped {
            Some(triple) => aligned.push(ObservationRecord {
                triple,
                env_type: rec.env_type,
                env_id: rec.env_id.clone(),
            }),
            None => dropped_oov.push(id),
        }
    }
    let target = TripleBag::from_records(aligned);
    let test: Vec<usize> = target
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| keep.contains(source_vocab.relation_symbol(r.triple.relation)))
        .map(|(i, _)| i)
        .collect();
    if test.is_empty() {
        return Err(Error::Config("no target records survive the relation and vocabulary filters".into()));
    }
    Ok(TransferSplit {
        filtered_out: target.len() - test.len(),
        fold: FoldSpec {
            protocol: Protocol::DomainTransfer,
            fold_index: 0,
            seed: 0,
            train: (0..source.len()).collect(),
            val: Vec::new(),
            test,
        },
        target,
        dropped_oov,
    })
}
