//! Symbol tables and the counted triple store.
//!
//! Observations are ingested from a five-column TSV
//! (`head⇥relation⇥tail⇥env_type⇥env_id`) and entity types from a two-column
//! TSV (`entity⇥type`). Both writers are byte-stable under a read/write
//! round trip.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const AT_LOCATION: &str = "atLocation";
pub const HAS_MATERIAL: &str = "hasMaterial";
pub const HAS_AFFORDANCE: &str = "hasAffordance";

/// Relations for which `head == tail` is rejected on ingestion.
pub const DOMAIN_RELATIONS: [&str; 3] = [AT_LOCATION, HAS_MATERIAL, HAS_AFFORDANCE];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One `(head, relation, tail)` fact. Orders by `(h, r, t)` ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

macro_rules! symbol_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        concat!("invalid ", stringify!($name), " `{}`"),
                        other
                    )),
                }
            }
        }
    };
}

symbol_enum! {
    /// Semantic type tag carried by every entity.
    EntityType {
        Object => "object",
        Room => "room",
        Material => "material",
        Affordance => "affordance",
    }
}

symbol_enum! {
    /// Kind of environment an observation was mined from.
    EnvType {
        Bathroom => "bathroom",
        Bedroom => "bedroom",
        Kitchen => "kitchen",
        Livingroom => "livingroom",
    }
}

/// How [`ingest`] treats symbols that are not yet interned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabPolicy {
    /// Append new symbols in first-seen order.
    Extend,
    /// Reject unknown symbols.
    Strict,
}

/// Interned entity and relation symbols with per-entity type tags.
///
/// Ids are dense and 0-based. Symbols are case-sensitive exact strings.
/// Entities interned while ingesting triples (rather than from a type file)
/// stay untyped until [`Vocabulary::set_entity_type`] is called.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_types: Vec<Option<EntityType>>,
    entity_lookup: HashMap<String, EntityId>,
    relation_lookup: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from explicit symbol lists, as read back from a
    /// checkpoint. Duplicate symbols are rejected.
    pub fn from_symbols(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for e in entities {
            if vocab.entity_lookup.contains_key(&e) {
                return Err(Error::Config(format!("duplicate entity symbol `{e}`")));
            }
            vocab.intern_entity(&e);
        }
        for r in relations {
            if vocab.relation_lookup.contains_key(&r) {
                return Err(Error::Config(format!("duplicate relation symbol `{r}`")));
            }
            vocab.intern_relation(&r);
        }
        Ok(vocab)
    }

    pub fn intern_entity(&mut self, symbol: &str) -> EntityId {
        if let Some(&id) = self.entity_lookup.get(symbol) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(symbol.to_owned());
        self.entity_types.push(None);
        self.entity_lookup.insert(symbol.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, symbol: &str) -> RelationId {
        if let Some(&id) = self.relation_lookup.get(symbol) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(symbol.to_owned());
        self.relation_lookup.insert(symbol.to_owned(), id);
        id
    }

    /// Interns `symbol` with a type tag; an existing tag is overwritten.
    pub fn intern_typed_entity(&mut self, symbol: &str, ty: EntityType) -> EntityId {
        let id = self.intern_entity(symbol);
        self.entity_types[id.index()] = Some(ty);
        id
    }

    pub fn set_entity_type(&mut self, id: EntityId, ty: EntityType) -> Result<()> {
        let slot = self
            .entity_types
            .get_mut(id.index())
            .ok_or(Error::UnknownId {
                id: id.index(),
                len: self.entities.len(),
            })?;
        *slot = Some(ty);
        Ok(())
    }

    pub fn entity_id(&self, symbol: &str) -> Result<EntityId> {
        self.entity_lookup
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_owned()))
    }

    pub fn relation_id(&self, symbol: &str) -> Result<RelationId> {
        self.relation_lookup
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_owned()))
    }

    pub fn entity_symbol(&self, id: EntityId) -> &str {
        &self.entities[id.index()]
    }

    pub fn relation_symbol(&self, id: RelationId) -> &str {
        &self.relations[id.index()]
    }

    pub fn entity_type(&self, id: EntityId) -> Option<EntityType> {
        self.entity_types.get(id.index()).copied().flatten()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Ids of all entities tagged `ty`, ascending.
    pub fn entities_of_type(&self, ty: EntityType) -> Vec<EntityId> {
        self.entity_types
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Some(ty))
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    pub fn is_fully_typed(&self) -> bool {
        self.entity_types.iter().all(Option::is_some)
    }

    /// 64-bit fingerprint of the symbol tables (SHA-256 prefix). Binds model
    /// parameters to the vocabulary they were trained against.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for table in [&self.entities, &self.relations] {
            hasher.update((table.len() as u64).to_le_bytes());
            for s in table.iter() {
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8-byte prefix"))
    }

    /// Parses an `entity⇥type` file into a fresh vocabulary (no relations).
    pub fn parse_types(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for (lineno, line) in data_lines(text) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 2 tab-separated columns, found {}", cols.len()),
                });
            }
            let ty: EntityType = cols[1].parse().map_err(|message| Error::Parse {
                line: lineno,
                message,
            })?;
            if vocab.entity_lookup.contains_key(cols[0]) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate entity `{}`", cols[0]),
                });
            }
            vocab.intern_typed_entity(cols[0], ty);
        }
        Ok(vocab)
    }

    /// Serializes the type table. Untyped entities are omitted.
    pub fn write_types(&self) -> String {
        let mut out = String::new();
        for (symbol, ty) in self.entities.iter().zip(&self.entity_types) {
            if let Some(ty) = ty {
                out.push_str(symbol);
                out.push('\t');
                out.push_str(ty.as_str());
                out.push('\n');
            }
        }
        out
    }
}

/// One observed triple together with its environment provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationRecord {
    pub triple: Triple,
    pub env_type: EnvType,
    pub env_id: String,
}

/// Multiset of observations with count and adjacency indices.
///
/// Immutable once built. Record ids are positions in [`TripleBag::records`].
#[derive(Clone, Debug, Default)]
pub struct TripleBag {
    records: Vec<ObservationRecord>,
    counts: HashMap<Triple, u32>,
    heads_by_rel_tail: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    tails_by_head_rel: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    relations_by_head_tail: HashMap<(EntityId, EntityId), Vec<RelationId>>,
    env_index: BTreeMap<String, Vec<usize>>,
}

impl TripleBag {
    pub fn from_records(records: Vec<ObservationRecord>) -> Self {
        let mut bag = TripleBag {
            records,
            ..Default::default()
        };
        for (id, rec) in bag.records.iter().enumerate() {
            let t = rec.triple;
            let c = bag.counts.entry(t).or_insert(0);
            *c += 1;
            if *c == 1 {
                bag.heads_by_rel_tail
                    .entry((t.relation, t.tail))
                    .or_default()
                    .push(t.head);
                bag.tails_by_head_rel
                    .entry((t.head, t.relation))
                    .or_default()
                    .push(t.tail);
                bag.relations_by_head_tail
                    .entry((t.head, t.tail))
                    .or_default()
                    .push(t.relation);
            }
            bag.env_index.entry(rec.env_id.clone()).or_default().push(id);
        }
        bag.heads_by_rel_tail.values_mut().for_each(|v| v.sort());
        bag.tails_by_head_rel.values_mut().for_each(|v| v.sort());
        bag.relations_by_head_tail.values_mut().for_each(|v| v.sort());
        bag
    }

    /// A new bag holding the given records, renumbered in the order given.
    pub fn subset<I: IntoIterator<Item = usize>>(&self, ids: I) -> TripleBag {
        TripleBag::from_records(ids.into_iter().map(|i| self.records[i].clone()).collect())
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, triple: &Triple) -> u32 {
        self.counts.get(triple).copied().unwrap_or(0)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.counts.contains_key(triple)
    }

    pub fn num_unique(&self) -> usize {
        self.counts.len()
    }

    /// Distinct heads observed with `(relation, tail)`, ascending.
    pub fn heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads_by_rel_tail
            .get(&(relation, tail))
            .map_or(&[], Vec::as_slice)
    }

    /// Distinct tails observed with `(head, relation)`, ascending.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails_by_head_rel
            .get(&(head, relation))
            .map_or(&[], Vec::as_slice)
    }

    /// Distinct relations observed between `head` and `tail`, ascending.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.relations_by_head_tail
            .get(&(head, tail))
            .map_or(&[], Vec::as_slice)
    }

    /// Environment id to the ids of its records.
    pub fn env_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.env_index
    }

    /// Environment ids grouped by environment type, each group sorted.
    pub fn environments_by_type(&self) -> BTreeMap<EnvType, Vec<String>> {
        let mut out: BTreeMap<EnvType, Vec<String>> = BTreeMap::new();
        for (env, ids) in &self.env_index {
            let ty = self.records[ids[0]].env_type;
            out.entry(ty).or_default().push(env.clone());
        }
        out
    }

    /// Distinct triples with their counts, sorted by `(h, r, t)` ids.
    pub fn unique_triples(&self) -> Vec<(Triple, u32)> {
        let mut out: Vec<(Triple, u32)> = self.counts.iter().map(|(t, c)| (*t, *c)).collect();
        out.sort_unstable();
        out
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads observation rows into a bag, interning symbols into `vocab`.
pub fn ingest(text: &str, mut vocab: Vocabulary, policy: VocabPolicy) -> Result<(Vocabulary, TripleBag)> {
    let mut records = Vec::new();
    for (lineno, line) in data_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let env_type: EnvType = cols[3].parse().map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?;
        if cols[0] == cols[2] && DOMAIN_RELATIONS.contains(&cols[1]) {
            return Err(Error::SelfLoop {
                head: cols[0].to_owned(),
                relation: cols[1].to_owned(),
                tail: cols[2].to_owned(),
            });
        }
        let triple = match policy {
            VocabPolicy::Extend => Triple {
                head: vocab.intern_entity(cols[0]),
                relation: vocab.intern_relation(cols[1]),
                tail: vocab.intern_entity(cols[2]),
            },
            VocabPolicy::Strict => Triple {
                head: vocab.entity_id(cols[0])?,
                relation: vocab.relation_id(cols[1])?,
                tail: vocab.entity_id(cols[2])?,
            },
        };
        records.push(ObservationRecord {
            triple,
            env_type,
            env_id: cols[4].to_owned(),
        });
    }
    Ok((vocab, TripleBag::from_records(records)))
}

/// Serializes every record, in record order, as observation TSV.
pub fn write_triples(vocab: &Vocabulary, bag: &TripleBag) -> String {
    let mut out = String::new();
    for rec in bag.records() {
        for field in [
            vocab.entity_symbol(rec.triple.head),
            vocab.relation_symbol(rec.triple.relation),
            vocab.entity_symbol(rec.triple.tail),
            rec.env_type.as_str(),
        ] {
            out.push_str(field);
            out.push('\t');
        }
        out.push_str(&rec.env_id);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag_of(text: &str) -> (Vocabulary, TripleBag) {
        ingest(text, Vocabulary::new(), VocabPolicy::Extend).unwrap()
    }

    #[test]
    fn duplicate_rows_are_counted() {
        let text = "mug\thasAffordance\tfill\tkitchen\tk01\nmug\thasAffordance\tfill\tkitchen\tk01\n";
        let (vocab, bag) = bag_of(text);
        let t = Triple {
            head: vocab.entity_id("mug").unwrap(),
            relation: vocab.relation_id("hasAffordance").unwrap(),
            tail: vocab.entity_id("fill").unwrap(),
        };
        assert_eq!(bag.count(&t), 2);
        assert_eq!(bag.num_unique(), 1);
    }

    #[test]
    fn empty_input_gives_empty_bag() {
        let (vocab, bag) = bag_of("");
        assert!(bag.is_empty());
        assert_eq!(vocab.num_entities(), 0);
        assert_eq!(vocab.num_relations(), 0);
        assert!(bag.unique_triples().is_empty());
    }

    #[test]
    fn env_index_partitions_records() {
        let text = "a\tatLocation\tkitchen\tkitchen\tk1\n\
                    b\tatLocation\tkitchen\tkitchen\tk1\n\
                    a\tatLocation\tbathroom\tbathroom\tb1\n";
        let (_, bag) = bag_of(text);
        let idx = bag.env_index();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx["k1"], vec![0, 1]);
        assert_eq!(idx["b1"], vec![2]);
    }

    #[test]
    fn comments_and_first_seen_order() {
        let text = "# header\nz\tr\ty\tbedroom\te\n\ny\tr\tx\tbedroom\te\n";
        let (vocab, bag) = bag_of(text);
        assert_eq!(vocab.entities(), ["z", "y", "x"]);
        assert_eq!(bag.len(), 2);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let err = ingest("# c\na\tb\tc\tkitchen\n", Vocabulary::new(), VocabPolicy::Extend).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn strict_policy_rejects_unknown_symbols() {
        let (vocab, _) = bag_of("a\tatLocation\tkitchen\tkitchen\tk1\n");
        let err = ingest("a\tatLocation\tgarage\tkitchen\tk1\n", vocab, VocabPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::UnknownSymbol(ref s) if s == "garage"));
    }

    #[test]
    fn self_loops_only_rejected_for_domain_relations() {
        assert!(matches!(
            ingest("a\thasMaterial\ta\tkitchen\tk1\n", Vocabulary::new(), VocabPolicy::Extend).unwrap_err(),
            Error::SelfLoop { .. }
        ));
        let (_, bag) = bag_of("a\tsimilarTo\ta\tkitchen\tk1\n");
        assert_eq!(bag.len(), 1);
    }

    #[test]
    fn unique_triples_sorted_by_ids() {
        // Insert C, A, B, A, A where ids order is A < B < C.
        let mut vocab = Vocabulary::new();
        for e in ["e0", "e1", "e2", "e3"] {
            vocab.intern_entity(e);
        }
        vocab.intern_relation("r");
        let text = "e2\tr\te3\tkitchen\tk\ne0\tr\te1\tkitchen\tk\ne1\tr\te2\tkitchen\tk\n\
                    e0\tr\te1\tkitchen\tk\ne0\tr\te1\tkitchen\tk\n";
        let (_, bag) = ingest(text, vocab, VocabPolicy::Strict).unwrap();
        let got = bag.unique_triples();
        let mut oracle: Vec<(Triple, u32)> = got.clone();
        oracle.sort_by_key(|(t, _)| (t.head.0, t.relation.0, t.tail.0));
        assert_eq!(got, oracle);
        assert_eq!(got.iter().map(|(_, c)| *c).collect::<Vec<_>>(), vec![3, 1, 1]);
    }

    #[test]
    fn types_round_trip() {
        let text = "mug\tobject\nkitchen\troom\nwood\tmaterial\nfill\taffordance\n";
        let vocab = Vocabulary::parse_types(text).unwrap();
        assert_eq!(vocab.write_types(), text);
        assert_eq!(vocab.entity_type(EntityId(1)), Some(EntityType::Room));
        assert!(vocab.is_fully_typed());
        assert!(Vocabulary::parse_types("mug\tgadget\n").is_err());
        assert!(Vocabulary::parse_types("mug\tobject\nmug\troom\n").is_err());
    }

    #[test]
    fn adjacency_indices() {
        let text = "a\tr\tx\tkitchen\tk\nb\tr\tx\tkitchen\tk\na\tr\tx\tkitchen\tk\na\ts\tx\tkitchen\tk\n";
        let (v, bag) = bag_of(text);
        let (a, b, x) = (v.entity_id("a").unwrap(), v.entity_id("b").unwrap(), v.entity_id("x").unwrap());
        let (r, s) = (v.relation_id("r").unwrap(), v.relation_id("s").unwrap());
        assert_eq!(bag.heads(r, x), [a, b]);
        assert_eq!(bag.tails(a, r), [x]);
        assert_eq!(bag.relations_between(a, x), [r, s]);
        assert!(bag.heads(s, a).is_empty());
    }
}
