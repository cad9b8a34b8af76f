//! Seeded synthetic household corpora.
//!
//! A corpus is drawn in two stages. The *world* (seeded by `world_seed`)
//! assigns every object a latent category and per-object preference
//! distributions over environment types, locations, materials and
//! affordances; preferences are Dirichlet draws around a category prototype,
//! so objects of one category behave alike and a few answers dominate each
//! query. The *environments* (seeded by `seed`) then sample objects and
//! observations per room so that per-environment triple counts sit around
//! the configured medians. Two corpora sharing a world but not a seed are
//! different samples of the same household semantics.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::kv;
use crate::seed::{derive_seed, derive_seed_indexed, rng, Rng};
use crate::vocab::{
    write_triples, EntityId, EntityType, EnvType, ObservationRecord, Triple, TripleBag, Vocabulary,
    AT_LOCATION, HAS_AFFORDANCE, HAS_MATERIAL,
};

const OBJECT_NAMES: &[&str] = &[
    "alarmclock", "apple", "armchair", "basketball", "bathtub", "bed", "blinds", "book", "bottle",
    "bowl", "box", "bread", "butterknife", "candle", "cellphone", "chair", "cloth", "coffeemachine",
    "creditcard", "cup", "curtains", "desk", "desklamp", "dishsponge", "egg", "faucet", "floorlamp",
    "fork", "fridge", "garbagecan", "handtowel", "houseplant", "kettle", "keychain", "knife",
    "ladle", "laptop", "laundryhamper", "lettuce", "lightswitch", "microwave", "mirror", "mug",
    "newspaper", "ottoman", "painting", "pan", "papertowel", "pen", "pencil", "peppershaker",
    "pillow", "plate", "plunger", "poster", "pot", "potato", "remotecontrol", "saltshaker",
    "showercurtain", "sink", "soapbar", "soapbottle", "sofa", "spatula", "spoon", "spraybottle",
    "statue", "stoveburner", "television", "tissuebox", "toaster", "toilet", "toiletpaper",
];
// The first four locations are the environment rooms, in `EnvType::ALL` order.
const LOCATION_NAMES: &[&str] = &[
    "bathroom", "bedroom", "kitchen", "livingroom", "cabinet", "countertop", "drawer", "shelf",
    "diningtable",
];
const MATERIAL_NAMES: &[&str] = &[
    "wood", "metal", "plastic", "glass", "ceramic", "fabric", "paper", "leather", "rubber", "stone",
    "food", "wax", "sponge", "cardboard", "porcelain", "soap", "foam",
];
const AFFORDANCE_NAMES: &[&str] = &[
    "pickup", "open", "close", "turnon", "fill", "pour", "slice", "cook", "break", "clean", "sit",
    "lieon", "placeon", "read", "wear", "throw", "plugin",
];

/// Per-environment-type targets: median triple counts per environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvTargets {
    pub location: f64,
    pub material: f64,
    pub affordance: f64,
    /// Median number of distinct objects per environment.
    pub entities: f64,
    pub rooms: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    /// Targets indexed in `EnvType::ALL` order.
    pub targets: [EnvTargets; 4],
    pub objects: usize,
    /// Location pool; the first four are the environment rooms.
    pub locations: usize,
    pub materials: usize,
    pub affordances: usize,
    /// Relative spread of per-environment counts around the medians, in `[0, 1)`.
    pub dispersion: f64,
    /// Number of latent object categories.
    pub categories: usize,
    /// Dirichlet concentration of category prototypes; smaller is more skewed.
    pub prototype_concentration: f64,
    /// How tightly objects follow their category prototype; larger is tighter.
    pub object_concentration: f64,
    pub world_seed: u64,
    pub seed: u64,
}

impl Default for GenParams {
    /// Household-scale defaults: 74 objects + 9 locations = 83 items, 17
    /// materials and 17 affordances (117 entities), 30 rooms per type.
    fn default() -> Self {
        let t = |location, material, affordance, entities| EnvTargets {
            location,
            material,
            affordance,
            entities,
            rooms: 30,
        };
        GenParams {
            targets: [
                t(28.0, 21.0, 46.0, 18.0),
                t(28.5, 16.0, 54.5, 20.0),
                t(59.5, 51.0, 109.0, 27.0),
                t(22.5, 8.0, 37.0, 20.0),
            ],
            objects: 74,
            locations: 9,
            materials: 17,
            affordances: 17,
            dispersion: 0.3,
            categories: 8,
            prototype_concentration: 0.3,
            object_concentration: 8.0,
            world_seed: 0,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn target(&self, env: EnvType) -> &EnvTargets {
        &self.targets[env_index(env)]
    }

    pub fn target_mut(&mut self, env: EnvType) -> &mut EnvTargets {
        &mut self.targets[env_index(env)]
    }

    /// Sets the room count of every environment type.
    pub fn with_rooms(mut self, rooms: usize) -> Self {
        self.targets.iter_mut().for_each(|t| t.rooms = rooms);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dispersion) {
            return bad(format!("dispersion {} outside [0, 1)", self.dispersion));
        }
        if self.locations < 4 {
            return bad("location pool must hold at least the 4 environment rooms".into());
        }
        if self.objects == 0 || self.materials == 0 || self.affordances == 0 || self.categories == 0 {
            return bad("entity pools and category count must be positive".into());
        }
        if !(self.prototype_concentration > 0.0 && self.object_concentration > 0.0) {
            return bad("concentrations must be positive".into());
        }
        for (env, t) in EnvType::ALL.iter().zip(&self.targets) {
            if !(t.location > 0.0 && t.material > 0.0 && t.affordance > 0.0 && t.entities > 0.0)
                || t.rooms == 0
            {
                return bad(format!("{env}: medians and room count must be positive"));
            }
            let most = (t.entities * (1.0 + self.dispersion)).ceil() as usize;
            if most > self.objects {
                return bad(format!(
                    "{env}: up to {most} objects per environment but the object pool holds {}",
                    self.objects
                ));
            }
        }
        Ok(())
    }

    /// `key=value` form, written next to generated corpora.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("seed", self.seed.to_string());
        put("world_seed", self.world_seed.to_string());
        put("dispersion", self.dispersion.to_string());
        put("objects", self.objects.to_string());
        put("locations", self.locations.to_string());
        put("materials", self.materials.to_string());
        put("affordances", self.affordances.to_string());
        put("categories", self.categories.to_string());
        put("prototype_concentration", self.prototype_concentration.to_string());
        put("object_concentration", self.object_concentration.to_string());
        for (env, t) in EnvType::ALL.iter().zip(&self.targets) {
            put(&format!("{env}.location"), t.location.to_string());
            put(&format!("{env}.material"), t.material.to_string());
            put(&format!("{env}.affordance"), t.affordance.to_string());
            put(&format!("{env}.entities"), t.entities.to_string());
            put(&format!("{env}.rooms"), t.rooms.to_string());
        }
        out
    }

    /// Reads a `key=value` file; absent keys keep their default.
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut p = GenParams::default();
        macro_rules! take {
            ($field:expr, $key:expr) => {
                if let Some(v) = kv::get(&map, $key)? {
                    $field = v;
                }
            };
        }
        take!(p.seed, "seed");
        take!(p.world_seed, "world_seed");
        take!(p.dispersion, "dispersion");
        take!(p.objects, "objects");
        take!(p.locations, "locations");
        take!(p.materials, "materials");
        take!(p.affordances, "affordances");
        take!(p.categories, "categories");
        take!(p.prototype_concentration, "prototype_concentration");
        take!(p.object_concentration, "object_concentration");
        for (env, t) in EnvType::ALL.iter().zip(p.targets.iter_mut()) {
            take!(t.location, &format!("{env}.location"));
            take!(t.material, &format!("{env}.material"));
            take!(t.affordance, &format!("{env}.affordance"));
            take!(t.entities, &format!("{env}.entities"));
            take!(t.rooms, &format!("{env}.rooms"));
        }
        let known: BTreeSet<String> = kv::parse(&GenParams::default().to_kv())?.into_keys().collect();
        if let Some(k) = map.keys().find(|k| !known.contains(*k)) {
            return Err(Error::Config(format!("unknown generator key `{k}`")));
        }
        Ok(p)
    }
}

fn env_index(env: EnvType) -> usize {
    EnvType::ALL.iter().position(|e| *e == env).expect("listed")
}

/// A generated corpus: typed vocabulary plus observation bag.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub bag: TripleBag,
}

impl Corpus {
    pub fn triples_tsv(&self) -> String {
        write_triples(&self.vocab, &self.bag)
    }

    pub fn types_tsv(&self) -> String {
        self.vocab.write_types()
    }
}

fn pool_name(names: &[&str], prefix: &str, i: usize) -> String {
    names
        .get(i)
        .map_or_else(|| format!("{prefix}{i}"), |s| (*s).to_owned())
}

fn dirichlet(rng: &mut Rng, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive shape")
                .sample(rng)
                .max(1e-12)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|x| *x /= total);
    draws
}

fn sample_categorical(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Weighted sampling of `k` distinct indices (Efraimidis–Spirakis keys).
fn sample_without_replacement(rng: &mut Rng, weights: &[f64], k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w.max(1e-12), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

struct ObjectProfile {
    env: Vec<f64>,
    location: Vec<f64>,
    material: Vec<f64>,
    affordance: Vec<f64>,
}

fn draw_world(params: &GenParams) -> Vec<ObjectProfile> {
    let mut wrng = rng(derive_seed(params.world_seed, &["world"]));
    let proto = |rng: &mut Rng, n: usize| dirichlet(rng, &vec![params.prototype_concentration; n]);
    let prototypes: Vec<ObjectProfile> = (0..params.categories)
        .map(|_| ObjectProfile {
            env: proto(&mut wrng, 4),
            location: proto(&mut wrng, params.locations),
            material: proto(&mut wrng, params.materials),
            affordance: proto(&mut wrng, params.affordances),
        })
        .collect();
    let around = |rng: &mut Rng, p: &[f64]| {
        let alphas: Vec<f64> = p
            .iter()
            .map(|x| params.object_concentration * x * p.len() as f64 + 0.05)
            .collect();
        dirichlet(rng, &alphas)
    };
    (0..params.objects)
        .map(|_| {
            let c = &prototypes[wrng.random_range(0..params.categories)];
            ObjectProfile {
                env: around(&mut wrng, &c.env),
                location: around(&mut wrng, &c.location),
                material: around(&mut wrng, &c.material),
                affordance: around(&mut wrng, &c.affordance),
            }
        })
        .collect()
}

/// Count for environment `i` of a type: the median exactly when `dispersion`
/// is 0 (half-integer medians alternate floor/ceil so the median is kept),
/// otherwise uniform within `median · (1 ± dispersion)`.
fn env_count(rng: &mut Rng, median: f64, dispersion: f64, i: usize) -> usize {
    let value = if dispersion == 0.0 {
        if i.is_multiple_of(2) {
            median.floor()
        } else {
            median.ceil()
        }
    } else {
        let u: f64 = rng.random_range(-1.0..=1.0);
        (median * (1.0 + dispersion * u)).round()
    };
    value.max(1.0) as usize
}

/// Generates a corpus. Deterministic in `params`.
pub fn generate_corpus(params: &GenParams) -> Result<Corpus> {
    params.validate()?;
    let mut vocab = Vocabulary::new();
    let objects: Vec<EntityId> = (0..params.objects)
        .map(|i| vocab.intern_typed_entity(&pool_name(OBJECT_NAMES, "object", i), EntityType::Object))
        .collect();
    let locations: Vec<EntityId> = (0..params.locations)
        .map(|i| vocab.intern_typed_entity(&pool_name(LOCATION_NAMES, "location", i), EntityType::Room))
        .collect();
    let materials: Vec<EntityId> = (0..params.materials)
        .map(|i| vocab.intern_typed_entity(&pool_name(MATERIAL_NAMES, "material", i), EntityType::Material))
        .collect();
    let affordances: Vec<EntityId> = (0..params.affordances)
        .map(|i| {
            vocab.intern_typed_entity(&pool_name(AFFORDANCE_NAMES, "affordance", i), EntityType::Affordance)
        })
        .collect();
    let at_location = vocab.intern_relation(AT_LOCATION);
    let has_material = vocab.intern_relation(HAS_MATERIAL);
    let has_affordance = vocab.intern_relation(HAS_AFFORDANCE);

    let world = draw_world(params);
    let mut records = Vec::new();
    for (ti, &env_type) in EnvType::ALL.iter().enumerate() {
        let target = params.targets[ti];
        let presence: Vec<f64> = world.iter().map(|o| o.env[ti]).collect();
        // Locations reachable in this environment: its own room plus every
        // non-room location.
        let reachable: Vec<usize> = std::iter::once(ti).chain(4..params.locations).collect();
        for i in 0..target.rooms {
            let mut erng = rng(derive_seed_indexed(params.seed, &["env", env_type.as_str()], i as u64));
            let env_id = format!("{}_{:02}", env_type, i + 1);
            let n_obj = env_count(&mut erng, target.entities, params.dispersion, i).min(params.objects);
            let n_loc = env_count(&mut erng, target.location, params.dispersion, i);
            let n_mat = env_count(&mut erng, target.material, params.dispersion, i);
            let n_aff = env_count(&mut erng, target.affordance, params.dispersion, i);
            let present = sample_without_replacement(&mut erng, &presence, n_obj);

            // Every present object is observed at least once: the first
            // `n_obj` slots (affordances, then locations, then materials)
            // cycle through the object set.
            let total = n_aff + n_loc + n_mat;
            let heads: Vec<usize> = (0..total)
                .map(|s| {
                    if s < present.len() {
                        present[s]
                    } else {
                        present[erng.random_range(0..present.len())]
                    }
                })
                .collect();
            let (aff_heads, rest) = heads.split_at(n_aff);
            let (loc_heads, mat_heads) = rest.split_at(n_loc);

            let mut push = |head: usize, relation, tail: EntityId| {
                records.push(ObservationRecord {
                    triple: Triple {
                        head: objects[head],
                        relation,
                        tail,
                    },
                    env_type,
                    env_id: env_id.clone(),
                });
            };
            for &o in loc_heads {
                let w: Vec<f64> = reachable.iter().map(|&l| world[o].location[l]).collect();
                let l = reachable[sample_categorical(&mut erng, &w)];
                push(o, at_location, locations[l]);
            }
            for &o in mat_heads {
                let m = sample_categorical(&mut erng, &world[o].material);
                push(o, has_material, materials[m]);
            }
            for &o in aff_heads {
                let a = sample_categorical(&mut erng, &world[o].affordance);
                push(o, has_affordance, affordances[a]);
            }
        }
    }
    Ok(Corpus {
        vocab,
        bag: TripleBag::from_records(records),
    })
}

/// Median of a non-empty list; even lengths give the midpoint average.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-environment medians for one row of the statistics table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsRow {
    pub location: f64,
    pub material: f64,
    pub affordance: f64,
    /// Distinct head entities per environment.
    pub entities: f64,
    pub rooms: usize,
}

/// Statistics table: one row per environment type plus the pooled `all` row.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub by_type: BTreeMap<EnvType, StatsRow>,
    pub all: StatsRow,
}

impl CorpusStats {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("env_type\tlocation\tmaterial\taffordance\tentities\trooms\n");
        let rows = self
            .by_type
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("all", &self.all)));
        for (name, r) in rows {
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\n",
                r.location, r.material, r.affordance, r.entities, r.rooms
            ));
        }
        out
    }
}

/// Median per-environment counts, per environment type and pooled. Records
/// whose relation is not one of the three domain relations only contribute
/// to the entity count.
pub fn corpus_stats(vocab: &Vocabulary, bag: &TripleBag) -> CorpusStats {
    let rel = |name| vocab.relation_id(name).ok();
    let (loc, mat, aff) = (rel(AT_LOCATION), rel(HAS_MATERIAL), rel(HAS_AFFORDANCE));
    let mut per_env: BTreeMap<EnvType, Vec<[f64; 4]>> = BTreeMap::new();
    for ids in bag.env_index().values() {
        let mut counts = [0.0; 4];
        let mut heads = BTreeSet::new();
        for &id in ids {
            let t = bag.records()[id].triple;
            heads.insert(t.head);
            if Some(t.relation) == loc {
                counts[0] += 1.0;
            } else if Some(t.relation) == mat {
                counts[1] += 1.0;
            } else if Some(t.relation) == aff {
                counts[2] += 1.0;
            }
        }
        counts[3] = heads.len() as f64;
        per_env
            .entry(bag.records()[ids[0]].env_type)
            .or_default()
            .push(counts);
    }
    let row = |envs: &[[f64; 4]]| {
        let col = |j: usize| median(&envs.iter().map(|c| c[j]).collect::<Vec<_>>());
        StatsRow {
            location: col(0),
            material: col(1),
            affordance: col(2),
            entities: col(3),
            rooms: envs.len(),
        }
    };
    let all: Vec<[f64; 4]> = per_env.values().flatten().copied().collect();
    CorpusStats {
        by_type: per_env.iter().map(|(k, v)| (*k, row(v))).collect(),
        all: if all.is_empty() {
            StatsRow {
                location: 0.0,
                material: 0.0,
                affordance: 0.0,
                entities: 0.0,
                rooms: 0,
            }
        } else {
            row(&all)
        },
    }
}
