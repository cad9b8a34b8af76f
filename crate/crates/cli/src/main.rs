//! `kgemb`: generate corpora, split them, train embeddings, evaluate and
//! query them, and run the reference baselines.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgemb::baselines::{chance_report, CosineBaseline, FrequencyModel, StaticWordVectors, TypePools};
use kgemb::eval::{significance, significance_csv, EvalConfig};
use kgemb::generate::corpus_stats;
use kgemb::splits::{make_domain_transfer_split, make_env_gen_folds, make_triple_gen_folds};
use kgemb::train::Optimizer;
use kgemb::{
    checkpoint, evaluate, generate_corpus, ingest, memory_bytes, rank_answers, train, FoldSpec, GenParams, Model, Protocol,
    QueryPattern, RankingReport, RelationForm, Scorer, TrainConfig, TripleBag, VocabPolicy, Vocabulary,
};
use log::{info, warn};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "kgemb", version, about = "Knowledge-graph embeddings over counted household triples")]
struct Cli {
    /// Log progress (repeat for more detail). `RUST_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: triples.tsv, types.tsv, stats.tsv, params.kv.
    Gen(GenArgs),
    /// Write fold files (fold_<i>.tsv) for one evaluation protocol.
    Split(SplitArgs),
    /// Train on one fold: model.ckpt and history.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one fold (report.csv) and optionally test it
    /// against other fold reports (significance.csv).
    Eval(EvalArgs),
    /// Rank answers to one query; prints `rank⇥symbol⇥score` rows.
    Query(QueryArgs),
    /// Evaluate a reference baseline on one fold (report.csv).
    Baseline(BaselineArgs),
    /// Print the parameter memory in bytes of a model of the given size.
    Memsize(MemsizeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// `key=value` generator settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the latent object world, shared by corpora meant to overlap.
    #[arg(long)]
    world_seed: Option<u64>,
    /// Environments per type.
    #[arg(long)]
    rooms: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Corpus {
    /// Observation file `head⇥relation⇥tail⇥env_type⇥env_id`.
    #[arg(long)]
    triples: PathBuf,
    /// Entity type file `entity⇥type`.
    #[arg(long)]
    types: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    corpus: Corpus,
    #[arg(long, value_parser = parse_from_str::<Protocol>)]
    protocol: Protocol,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment generalization: training environments kept per type.
    #[arg(long)]
    train_rooms: Option<usize>,
    /// Domain transfer: the target observation file.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Domain transfer: relations kept in the target test set.
    #[arg(long, value_delimiter = ',', default_value = "atLocation")]
    relations: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: Corpus,
    /// Fold file whose train and validation ids index `--triples`.
    #[arg(long)]
    fold: PathBuf,
    /// `key=value` training settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    negative_ratio: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_from_str::<Optimizer>)]
    optimizer: Option<Optimizer>,
    #[arg(long, value_parser = parse_from_str::<RelationForm>)]
    relation_form: Option<RelationForm>,
    #[arg(long)]
    l2: Option<f64>,
    /// Record wall-clock seconds per epoch in history.csv (otherwise 0).
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, requires_all = ["triples", "fold"])]
    checkpoint: Option<PathBuf>,
    /// Observation file indexed by the fold's test ids; also the full bag
    /// for ground-truth ranks.
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    fold: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    hits_k: usize,
    /// Further report.csv files of this scorer (other folds) to pool.
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    /// report.csv files of the scorer to compare against.
    #[arg(long)]
    compare_with: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    relation: Option<String>,
    #[arg(long)]
    tail: Option<String>,
    /// Print only the best `top` answers.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    /// Training-bag observation counts.
    Freq,
    /// Cosine similarity to the answers observed for the query.
    Cosine,
    /// Analytic type-constrained chance level.
    Dl,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    kind: BaselineKind,
    #[command(flatten)]
    corpus: Corpus,
    /// Observation file indexed by the fold's test ids (defaults to `--triples`).
    #[arg(long)]
    test_triples: Option<PathBuf>,
    #[arg(long)]
    fold: PathBuf,
    /// Word vectors, `count dim` header then `token v1 … vd` rows.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    hits_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MemsizeArgs {
    #[arg(long)]
    entities: u64,
    #[arg(long)]
    relations: u64,
    #[arg(long)]
    dim: u64,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn csv_with_manifest(manifest: &Manifest, report: &RankingReport) -> String {
    report.to_csv(Some(&manifest.tag()))
}

impl Corpus {
    /// Reads the type table (if any) and the observations into a bag.
    fn load(&self, manifest: &mut Manifest) -> Result<(Vocabulary, TripleBag)> {
        let vocab = match &self.types {
            Some(p) => Vocabulary::parse_types(&manifest.read_input("types", p)?)?,
            None => Vocabulary::new(),
        };
        let text = manifest.read_input("triples", &self.triples)?;
        Ok(ingest(&text, vocab, VocabPolicy::Extend)?)
    }
}

fn gen(args: GenArgs) -> Result<()> {
    let mut m = Manifest::new("gen").config_path(args.config.as_deref()).output(&args.out);
    let mut params = match &args.config {
        Some(p) => GenParams::from_kv(&m.read_input("config", p)?)?,
        None => GenParams::default(),
    };
    if let Some(rooms) = args.rooms {
        params = params.with_rooms(rooms);
    }
    params.seed = args.seed.unwrap_or(params.seed);
    params.world_seed = args.world_seed.unwrap_or(params.world_seed);
    let m = m.settings(params.to_kv()).seed(params.seed);
    m.write(&args.out)?;
    let corpus = generate_corpus(&params)?;
    info!("generated {} observations over {} entities", corpus.bag.len(), corpus.vocab.num_entities());
    write_file(&args.out.join("triples.tsv"), corpus.triples_tsv())?;
    write_file(&args.out.join("types.tsv"), corpus.types_tsv())?;
    write_file(&args.out.join("stats.tsv"), corpus_stats(&corpus.vocab, &corpus.bag).to_tsv())?;
    write_file(&args.out.join("params.kv"), params.to_kv())
}

fn split(args: SplitArgs) -> Result<()> {
    let mut m = Manifest::new("split");
    let (vocab, bag) = args.corpus.load(&mut m)?;
    let target = match (&args.target, args.protocol) {
        (Some(p), Protocol::DomainTransfer) => Some(m.read_input("target", p)?),
        (None, Protocol::DomainTransfer) => bail!(kgemb::Error::Config("domain_transfer needs --target".into())),
        (Some(_), _) => bail!(kgemb::Error::Config("--target only applies to domain_transfer".into())),
        (None, _) => None,
    };
    let settings = format!(
        "protocol={}\nfolds={}\ntrain_rooms={:?}\nrelations={}\n",
        args.protocol,
        args.folds,
        args.train_rooms,
        args.relations.join(",")
    );
    let m = m.settings(settings).seed(args.seed).output(&args.out);
    m.write(&args.out)?;
    match args.protocol {
        Protocol::TripleGen | Protocol::EnvGen => {
            let folds = if args.protocol == Protocol::TripleGen {
                make_triple_gen_folds(&bag, args.folds, args.seed)?
            } else {
                make_env_gen_folds(&bag, args.folds, args.seed, args.train_rooms)?
            };
            for f in &folds {
                write_file(&args.out.join(format!("fold_{}.tsv", f.fold_index)), f.to_tsv())?;
            }
            info!("wrote {} folds", folds.len());
        }
        Protocol::DomainTransfer => {
            let (target_vocab, target_bag) = ingest(&target.expect("checked above"), Vocabulary::new(), VocabPolicy::Extend)?;
            let s = make_domain_transfer_split(&vocab, &bag, &target_vocab, &target_bag, &args.relations)?;
            info!(
                "transfer split: {} test records, {} dropped as out of vocabulary, {} filtered by relation",
                s.fold.test.len(),
                s.dropped_oov.len(),
                s.filtered_out
            );
            write_file(&args.out.join("fold_0.tsv"), s.fold.to_tsv())?;
            write_file(&args.out.join("target.tsv"), kgemb::vocab::write_triples(&vocab, &s.target))?;
        }
    }
    Ok(())
}

fn train_config(args: &TrainArgs, m: &mut Manifest) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => TrainConfig::from_kv(&m.read_input("config", p)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! flag {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field {
                c.$field = v;
            })*
        };
    }
    flag!(dim, learning_rate, batch_size, max_epochs, patience, negative_ratio, seed, optimizer, relation_form, l2);
    c.validate()?;
    Ok(c)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut m = Manifest::new("train").config_path(args.config.as_deref()).output(&args.out);
    let config = train_config(&args, &mut m)?;
    let (vocab, bag) = args.corpus.load(&mut m)?;
    let fold = FoldSpec::from_tsv(&m.read_input("fold", &args.fold)?)?;
    let m = m
        .settings(format!("{}timings={}\n", config.to_kv(), args.timings))
        .seed(config.seed);
    m.write(&args.out)?;
    let train_bag = fold.train_bag(&bag);
    let val = fold.val_triples(&bag);
    info!("training on {} records, validating on {} triples", train_bag.len(), val.len());
    let (model, history) = train::<f64>(&config, &vocab, &train_bag, &val)?;
    info!("stopped after {} epochs, best epoch {}", history.epochs.len(), history.best_epoch);
    checkpoint::save(args.out.join("model.ckpt"), &model, &vocab)?;
    write_file(&args.out.join("history.csv"), history.to_csv(Some(&m.tag()), args.timings))
}

fn read_reports(paths: &[PathBuf], role: &str, m: &mut Manifest) -> Result<RankingReport> {
    let mut all = RankingReport::default();
    for (i, p) in paths.iter().enumerate() {
        all.merge(RankingReport::from_csv(&m.read_input(&format!("{role}{i}"), p)?)?);
    }
    Ok(all)
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let mut m = Manifest::new("eval").output(&args.out);
    let config = EvalConfig { hits_k: args.hits_k };
    let fresh = match (&args.checkpoint, &args.triples, &args.fold) {
        (Some(ckpt), Some(triples), Some(fold)) => {
            let (model, vocab) = checkpoint::from_bytes::<f64>(&m.read_input_bytes("checkpoint", ckpt)?)?;
            let (vocab, bag) = ingest(&m.read_input("triples", triples)?, vocab, VocabPolicy::Strict)?;
            let fold = FoldSpec::from_tsv(&m.read_input("fold", fold)?)?;
            Some((model, vocab, bag, fold))
        }
        _ => None,
    };
    let mut group_a = read_reports(&args.reports, "report", &mut m)?;
    let group_b = read_reports(&args.compare_with, "compare", &mut m)?;
    if fresh.is_none() && group_a.cells.is_empty() {
        bail!(kgemb::Error::Config("nothing to evaluate: give --checkpoint or --report".into()));
    }
    let m = m.settings(format!("hits_k={}\n", args.hits_k));
    m.write(&args.out)?;
    if let Some((model, vocab, bag, fold)) = fresh {
        let test = fold.test_triples(&bag);
        info!("evaluating {} test triples", test.len());
        let report = evaluate(&model, &test, &bag, &vocab, fold.protocol, fold.fold_index, &config)?;
        write_file(&args.out.join("report.csv"), csv_with_manifest(&m, &report))?;
        group_a.merge(report);
    }
    if !args.compare_with.is_empty() {
        let rows = significance(&group_a, &group_b)?;
        write_file(&args.out.join("significance.csv"), significance_csv(&rows, Some(&m.tag())))?;
    }
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let (model, vocab): (Model, Vocabulary) = checkpoint::load(&args.checkpoint)?;
    let entity = |s: &Option<String>| s.as_deref().map(|s| vocab.entity_id(s)).transpose();
    let relation = args.relation.as_deref().map(|s| vocab.relation_id(s)).transpose()?;
    let (head, tail) = (entity(&args.head)?, entity(&args.tail)?);
    let pattern = match (head, relation, tail) {
        (Some(head), Some(relation), None) => QueryPattern::Tail { head, relation },
        (None, Some(relation), Some(tail)) => QueryPattern::Head { relation, tail },
        (Some(head), None, Some(tail)) => QueryPattern::Relation { head, tail },
        _ => bail!(kgemb::Error::Config("give exactly two of --head, --relation, --tail".into())),
    };
    let candidates = kgemb::eval::all_candidates(pattern.slot(), vocab.num_entities(), vocab.num_relations());
    let ranked = rank_answers(&model, &pattern, &candidates)?;
    let mut out = String::new();
    for (i, (c, score)) in ranked.iter().take(args.top.unwrap_or(usize::MAX)).enumerate() {
        let symbol = match pattern {
            QueryPattern::Relation { .. } => vocab.relation_symbol(kgemb::RelationId(*c as u32)),
            _ => vocab.entity_symbol(kgemb::EntityId(*c as u32)),
        };
        let _ = writeln!(out, "{}\t{symbol}\t{score}", i + 1);
    }
    print!("{out}");
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let mut m = Manifest::new("baseline").output(&args.out);
    let (vocab, source) = args.corpus.load(&mut m)?;
    let (vocab, test_bag) = match &args.test_triples {
        Some(p) => ingest(&m.read_input("test_triples", p)?, vocab, VocabPolicy::Extend)?,
        None => (vocab, source.clone()),
    };
    let fold = FoldSpec::from_tsv(&m.read_input("fold", &args.fold)?)?;
    let vectors = match (&args.vectors, args.kind) {
        (Some(p), BaselineKind::Cosine) => Some(StaticWordVectors::parse(&m.read_input("vectors", p)?)?),
        (None, BaselineKind::Cosine) => bail!(kgemb::Error::Config("the cosine baseline needs --vectors".into())),
        _ => None,
    };
    if matches!(args.kind, BaselineKind::Dl) && !vocab.is_fully_typed() {
        bail!(kgemb::Error::Config("the DL baseline needs --types covering every entity".into()));
    }
    let kind = args.kind.to_possible_value().expect("no skipped variants").get_name().to_owned();
    let m = m.settings(format!("kind={kind}\nhits_k={}\n", args.hits_k));
    m.write(&args.out)?;
    let config = EvalConfig { hits_k: args.hits_k };
    let train_bag = fold.train_bag(&source);
    let test = fold.test_triples(&test_bag);
    let run = |scorer: &dyn Scorer| evaluate(scorer, &test, &test_bag, &vocab, fold.protocol, fold.fold_index, &config);
    let report = match args.kind {
        BaselineKind::Freq => run(&FrequencyModel::new(&train_bag))?,
        BaselineKind::Cosine => {
            let vectors = vectors.expect("checked above");
            let cosine = CosineBaseline::new(&vectors, &train_bag, &vocab);
            let report = run(&cosine)?;
            if cosine.fallbacks() > 0 {
                warn!("{} queries had no observed answers and scored all candidates 0", cosine.fallbacks());
            }
            report
        }
        BaselineKind::Dl => chance_report(&TypePools::new(&vocab, &train_bag), &test, &vocab, fold.fold_index, &config)?,
    };
    write_file(&args.out.join("report.csv"), csv_with_manifest(&m, &report))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Query(a) => query(a),
        Command::Baseline(a) => baseline(a),
        Command::Memsize(a) => {
            println!("{}", memory_bytes(a.entities, a.relations, a.dim));
            Ok(())
        }
    }
}

/// Error class for the one-line failure message.
fn class(e: &anyhow::Error) -> &'static str {
    if let Some(k) = e.downcast_ref::<kgemb::Error>() {
        k.class()
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "usage"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", class(&e));
            ExitCode::FAILURE
        }
    }
}
