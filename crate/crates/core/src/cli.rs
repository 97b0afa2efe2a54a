//! The `grnp` command line: ingest, train, rl, generate, revise, eval and
//! gradcheck over a working directory.
//!
//! Every command resolves a flat [`RunConfig`] (defaults, then `--config`,
//! then `GRNP_SEED`, then flags) and writes it to `logs/<command>.config`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_value, read_kv_file, KvConfig};
use crate::corpus::{ingest, parse_corpus, synth, tokenize, DatasetBundle, IngestConfig, Vocab, STATS_FILE};
use crate::detector::{Detector, DetectorConfig};
use crate::env::{
    draft_pool, scheme_targets, DraftMode, Environment, GeneratorDrafts, ReconstructionConfig, ReconstructionEnv,
    RhymeConfig, RhymeEnv, SchemeTarget, UnigramTable, TRACE_HEADER,
};
use crate::error::{Error, Result};
use crate::generator::{gen_examples, generate_draft, DraftOptions, Generator, GeneratorConfig, ModelSize, GENERATOR_STEM};
use crate::lm::{adam_for, fit, perplexity, FitConfig, TokenModel};
use crate::nn::OpKind;
use crate::oracle;
use crate::poem::{truncate_verses, Conditioning, Quatrain, MAX_QUATRAIN_TOKENS};
use crate::prompter::{prompter_config, prompter_examples, Prompter, PrompterConfig, PROMPTER_STEM};
use crate::rhyme::{PhoneticDict, Rhymer, SchemeLabel};
use crate::rl::{revise, train_volleys, write_volley_csv, Algo, DetectorAgent, VolleyConfig, VolleyReport};

#[derive(Parser, Debug)]
#[command(name = "grnp", version, about = "Generate rhyming quatrains and revise them with a learned detector")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// File of key=value lines applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set rl.gamma=0.9`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap. All computation runs on one thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dataset directory from corpus files.
    Ingest(IngestArgs),
    /// Train the generator or the prompter.
    Train(TrainArgs),
    /// Train a detector with VPG or PPO in a revision environment.
    Rl(RlArgs),
    /// Sample drafts from the generator.
    Generate(GenerateArgs),
    /// Revise one draft toward a rhyme scheme.
    Revise(ReviseArgs),
    /// Perplexity of a trained model on a split.
    Eval(EvalArgs),
    /// Finite-difference gradient checks in 64-bit mode.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus file; repeatable.
    #[arg(long, conflicts_with = "desk")]
    corpus: Vec<PathBuf>,
    /// Phonetic dictionary, or `builtin`.
    #[arg(long)]
    dict: Option<String>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the built-in synthetic desk corpus.
    #[arg(long)]
    desk: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Gen,
    Prompter,
}

#[derive(Args, Debug)]
struct Variant {
    /// Drop the author embedding.
    #[arg(long)]
    no_author: bool,
    /// Drop the rhyme-scheme embedding.
    #[arg(long)]
    no_scheme: bool,
}

impl Variant {
    fn name(&self) -> Option<&'static str> {
        match (self.no_author, self.no_scheme) {
            (false, false) => None,
            (true, false) => Some("noauthor"),
            (false, true) => Some("noscheme"),
            (true, true) => Some("vanilla"),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(value_enum)]
    model: ModelKind,
    #[command(flatten)]
    variant: Variant,
    /// Continue from the saved checkpoint and its step counter.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnvKind {
    Reconstruction,
    Rhyme,
}

#[derive(Args, Debug)]
struct RlArgs {
    #[arg(long, value_enum)]
    env: EnvKind,
    #[arg(long, default_value = "ppo")]
    algo: Algo,
    /// Size of the fixed starting-poem pool.
    #[arg(long)]
    poems: Option<usize>,
    /// Corrupted words per reconstruction episode.
    #[arg(long)]
    corrupt: Option<usize>,
    /// Fresh generator draft at every reset (rhyme only).
    #[arg(long)]
    dynamic: bool,
    #[arg(long)]
    volleys: Option<usize>,
    /// Episodes per volley.
    #[arg(long, conflicts_with = "steps")]
    episodes: Option<usize>,
    /// Environment steps per volley.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    author: Option<String>,
    #[arg(long, default_value = "AABB")]
    scheme: String,
    #[arg(short = 'n', long, default_value_t = 1)]
    count: usize,
}

#[derive(Args, Debug)]
struct ReviseArgs {
    /// Text file holding four verse lines.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    draft: Option<PathBuf>,
    /// Draft a fresh poem with the generator.
    #[arg(long)]
    generate: bool,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    author: Option<String>,
    /// Take the most probable action instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Detector checkpoint stem inside the checkpoint directory.
    #[arg(long, default_value = "det_rhyme_ppo")]
    detector: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(value_enum)]
    model: ModelKind,
    #[command(flatten)]
    variant: Variant,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Negate the backward pass of one op kind.
    #[arg(long, hide = true, value_name = "OP")]
    inject_fault: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathsConfig {
    pub corpus: Vec<String>,
    /// Phonetic dictionary file, or `builtin` for the desk dictionary.
    pub dict: String,
    pub data: String,
    pub checkpoints: String,
    pub logs: String,
}

crate::kv_config!(PathsConfig {
    corpus,
    dict,
    data,
    checkpoints,
    logs
});

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: vec!["corpus.txt".into()],
            dict: "builtin".into(),
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            logs: "logs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolConfig {
    pub poems: usize,
}

crate::kv_config!(PoolConfig { poems });

/// Every setting a command can read, addressable as dotted keys.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub size: ModelSize,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub train: FitConfig,
    /// Overrides applied to the generator preset.
    pub gen: BTreeMap<String, String>,
    pub pro: BTreeMap<String, String>,
    pub det: BTreeMap<String, String>,
    pub rl: VolleyConfig,
    pub env: PoolConfig,
    pub reconstruction: ReconstructionConfig,
    pub rhyme: RhymeConfig,
    pub draft: DraftOptions,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 1,
            size: ModelSize::Desk,
            paths: PathsConfig::default(),
            ingest: IngestConfig::default(),
            train: FitConfig::default(),
            gen: BTreeMap::new(),
            pro: BTreeMap::new(),
            det: BTreeMap::new(),
            rl: VolleyConfig::default(),
            env: PoolConfig { poems: 1 },
            reconstruction: ReconstructionConfig::default(),
            rhyme: RhymeConfig::default(),
            draft: DraftOptions::default(),
            explicit: BTreeSet::new(),
        }
    }
}

fn set_known<C: KvConfig>(c: &mut C, key: &str, field: &str, value: &str) -> Result<()> {
    if !c.entries().iter().any(|(k, _)| *k == field) {
        return Err(Error::Config(format!("unknown key `{key}`")));
    }
    c.set(field, value)
}

fn set_override<C: KvConfig>(
    mut probe: C,
    map: &mut BTreeMap<String, String>,
    key: &str,
    field: &str,
    value: &str,
) -> Result<()> {
    set_known(&mut probe, key, field, value)?;
    map.insert(field.to_string(), value.to_string());
    Ok(())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match section {
            "" => match field {
                "seed" => self.seed = parse_value(key, value)?,
                "threads" => self.threads = parse_value(key, value)?,
                "size" => self.size = parse_value(key, value)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
            "paths" => set_known(&mut self.paths, key, field, value)?,
            "ingest" => set_known(&mut self.ingest, key, field, value)?,
            "train" => set_known(&mut self.train, key, field, value)?,
            "gen" => set_override(GeneratorConfig::new(self.size), &mut self.gen, key, field, value)?,
            "pro" => set_override(PrompterConfig::new(self.size), &mut self.pro, key, field, value)?,
            "det" => set_override(DetectorConfig::new(self.size), &mut self.det, key, field, value)?,
            "rl" => set_known(&mut self.rl, key, field, value)?,
            "env" => set_known(&mut self.env, key, field, value)?,
            "reconstruction" => set_known(&mut self.reconstruction, key, field, value)?,
            "rhyme" => set_known(&mut self.rhyme, key, field, value)?,
            "draft" => set_known(&mut self.draft, key, field, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in map {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Whether `key` was set by a file, the environment or a flag.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Seeds of sub-configs that were not set on their own follow `seed`.
    fn finish(&mut self) {
        if !self.is_explicit("train.seed") {
            self.train.seed = self.seed;
        }
        if !self.is_explicit("ingest.seed") {
            self.ingest.seed = self.seed;
        }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        fn section<C: KvConfig>(out: &mut Vec<(String, String)>, name: &str, c: &C) {
            out.extend(c.entries().into_iter().map(|(k, v)| (format!("{name}.{k}"), v)));
        }
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("threads".to_string(), self.threads.to_string()),
            ("size".to_string(), self.size.to_string()),
        ];
        section(&mut out, "paths", &self.paths);
        section(&mut out, "ingest", &self.ingest);
        section(&mut out, "train", &self.train);
        for (name, map) in [("gen", &self.gen), ("pro", &self.pro), ("det", &self.det)] {
            out.extend(map.iter().map(|(k, v)| (format!("{name}.{k}"), v.clone())));
        }
        section(&mut out, "rl", &self.rl);
        section(&mut out, "env", &self.env);
        section(&mut out, "reconstruction", &self.reconstruction);
        section(&mut out, "rhyme", &self.rhyme);
        section(&mut out, "draft", &self.draft);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn rhymer(&self, workdir: &Path) -> Result<Rhymer> {
        if self.paths.dict == "builtin" {
            Ok(synth::desk_rhymer())
        } else {
            Ok(Rhymer::new(PhoneticDict::load(workdir.join(&self.paths.dict))?))
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

/// Parses the process arguments and runs the command; returns the exit code.
pub fn main() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("{msg}");
            2
        }
    }
}

struct Ctx {
    workdir: PathBuf,
    rc: RunConfig,
}

impl Ctx {
    fn path(&self, p: &str) -> PathBuf {
        self.workdir.join(p)
    }

    fn data(&self) -> PathBuf {
        self.path(&self.rc.paths.data)
    }

    fn checkpoints(&self) -> PathBuf {
        self.path(&self.rc.paths.checkpoints)
    }

    fn logs(&self) -> Result<PathBuf> {
        let dir = self.path(&self.rc.paths.logs);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        self.rc.set(key, &value.to_string())
    }

    fn log_config(&self, command: &str) -> Result<()> {
        fs::write(self.logs()?.join(format!("{command}.config")), self.rc.to_text())?;
        Ok(())
    }

    fn bundle(&self) -> std::result::Result<DatasetBundle, Failure> {
        let dir = self.data();
        if !dir.join(crate::corpus::VOCAB_FILE).exists() {
            return usage(format!("no dataset at {}; run `grnp ingest` first", dir.display()));
        }
        Ok(DatasetBundle::load(dir)?)
    }
}

fn run(cli: Cli) -> CmdResult {
    let mut rc = RunConfig::default();
    if let Some(path) = &cli.config {
        rc.apply(&read_kv_file(cli.workdir.join(path))?)?;
    }
    if let Ok(s) = std::env::var("GRNP_SEED") {
        rc.set("seed", &s)?;
    }
    if let Some(s) = cli.seed {
        rc.set("seed", &s.to_string())?;
    }
    if let Some(t) = cli.threads {
        rc.set("threads", &t.to_string())?;
    }
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            return usage(format!("--set expects KEY=VALUE, got `{kv}`"));
        };
        rc.set(k.trim(), v.trim())?;
    }
    if rc.threads == 0 {
        return usage("threads must be at least 1");
    }
    let mut ctx = Ctx { workdir: cli.workdir, rc };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Rl(a) => cmd_rl(&mut ctx, a),
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Revise(a) => cmd_revise(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&mut ctx, a),
    }
}

fn cmd_ingest(ctx: &mut Ctx, a: IngestArgs) -> CmdResult {
    if !a.corpus.is_empty() {
        let list: Vec<String> = a.corpus.iter().map(|p| p.display().to_string()).collect();
        ctx.set("paths.corpus", list.join(","))?;
    }
    if let Some(d) = &a.dict {
        ctx.set("paths.dict", d)?;
    }
    if let Some(o) = &a.out {
        ctx.set("paths.data", o.display())?;
    }
    ctx.rc.finish();
    ctx.log_config("ingest")?;
    let rhymer = ctx.rc.rhymer(&ctx.workdir)?;
    let records = if a.desk {
        synth::desk_corpus(&synth::DeskCorpusConfig::default())?
    } else {
        let paths: Vec<PathBuf> = ctx.rc.paths.corpus.iter().map(|p| ctx.path(p)).collect();
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(Failure::Runtime(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("corpus file {} not found", missing.display()),
            ))));
        }
        parse_corpus(&paths)?
    };
    let ing = ingest(&records, &rhymer, &ctx.rc.ingest)?;
    let bundle = DatasetBundle::from_ingested(&ing)?;
    let out = ctx.data();
    bundle.save(&out)?;
    fs::write(out.join(STATS_FILE), ing.stats.to_string()).map_err(Error::from)?;
    print!("{}", ing.stats);
    Ok(())
}

fn model_dir(ctx: &Ctx, variant: &Variant) -> PathBuf {
    match variant.name() {
        Some(v) => ctx.checkpoints().join(v),
        None => ctx.checkpoints(),
    }
}

fn model_tag(model: ModelKind, variant: &Variant) -> String {
    let base = match model {
        ModelKind::Gen => "gen",
        ModelKind::Prompter => "prompter",
    };
    match variant.name() {
        Some(v) => format!("{base}_{v}"),
        None => base.to_string(),
    }
}

fn has_checkpoint(dir: &Path, stem: &str) -> bool {
    dir.join(format!("{stem}.ckpt")).exists() && dir.join(format!("{stem}.cfg")).exists()
}

/// Fits with per-epoch CSV rows; returns the optimizer step counter.
fn fit_logged<M: TokenModel>(
    model: &mut M,
    steps: u64,
    train: &[M::Item],
    val: &[M::Item],
    cfg: &FitConfig,
    csv_path: &Path,
) -> Result<u64> {
    let mut adam = adam_for(model.store(), cfg.lr);
    adam.set_step_count(steps);
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["epoch", "steps", "train_nll", "val_ppl"])?;
    let mut row_err = None;
    fit(model, &mut adam, train, val, cfg, |m| {
        let r = w.write_record([
            m.epoch.to_string(),
            m.steps.to_string(),
            format!("{:.6}", m.train_nll),
            m.val_ppl.map_or("".into(), |p| format!("{p:.6}")),
        ]);
        if let Err(e) = r {
            row_err.get_or_insert(e);
        }
        println!(
            "epoch {} steps {} train_nll {:.4} val_ppl {}",
            m.epoch,
            m.steps,
            m.train_nll,
            m.val_ppl.map_or("-".into(), |p| format!("{p:.3}"))
        );
    })?;
    if let Some(e) = row_err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(adam.step_count())
}

fn cmd_train(ctx: &mut Ctx, a: TrainArgs) -> CmdResult {
    if let Some(e) = a.epochs {
        ctx.set("train.epochs", e)?;
    }
    ctx.rc.finish();
    let tag = model_tag(a.model, &a.variant);
    ctx.log_config(&format!("train_{tag}"))?;
    let bundle = ctx.bundle()?;
    let dir = model_dir(ctx, &a.variant);
    let csv_path = ctx.logs()?.join(format!("train_{tag}.csv"));
    let rc = &ctx.rc;
    let (n_authors, n_schemes) = (bundle.authors.len(), bundle.schemes.len());
    match a.model {
        ModelKind::Gen => {
            let mut model = if a.resume {
                if !has_checkpoint(&dir, GENERATOR_STEM) {
                    return usage(format!("no generator checkpoint in {} to resume", dir.display()));
                }
                Generator::load(&dir, &bundle.vocab)?
            } else {
                let mut cfg = GeneratorConfig::new(rc.size).with_tables(&bundle.vocab, n_authors, n_schemes);
                cfg.apply(&rc.gen)?;
                cfg.use_author &= !a.variant.no_author;
                cfg.use_scheme &= !a.variant.no_scheme;
                Generator::new(cfg, &bundle.vocab, rc.seed)?
            };
            let train = gen_examples(&bundle.train);
            let val = gen_examples(&bundle.val);
            let steps = model.steps;
            model.steps = fit_logged(&mut model, steps, &train, &val, &rc.train, &csv_path)?;
            model.save(&dir)?;
        }
        ModelKind::Prompter => {
            let mut model = if a.resume {
                if !has_checkpoint(&dir, PROMPTER_STEM) {
                    return usage(format!("no prompter checkpoint in {} to resume", dir.display()));
                }
                Prompter::load(&dir)?
            } else {
                let mut cfg = prompter_config(rc.size, &bundle.vocab, n_authors, n_schemes);
                cfg.apply(&rc.pro)?;
                cfg.use_author &= !a.variant.no_author;
                cfg.use_scheme &= !a.variant.no_scheme;
                Prompter::new(cfg, rc.seed)?
            };
            let train = prompter_examples(&bundle.train);
            let val = prompter_examples(&bundle.val);
            let steps = model.steps;
            model.steps = fit_logged(&mut model, steps, &train, &val, &rc.train, &csv_path)?;
            model.save(&dir)?;
        }
    }
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, a: EvalArgs) -> CmdResult {
    ctx.rc.finish();
    ctx.log_config(&format!("eval_{}", model_tag(a.model, &a.variant)))?;
    let bundle = ctx.bundle()?;
    let dir = model_dir(ctx, &a.variant);
    let ds = match a.split {
        Split::Train => &bundle.train,
        Split::Val => &bundle.val,
        Split::Test => &bundle.test,
    };
    let ppl = match a.model {
        ModelKind::Gen => {
            if !has_checkpoint(&dir, GENERATOR_STEM) {
                return usage(format!("no generator checkpoint in {}", dir.display()));
            }
            perplexity(&Generator::load(&dir, &bundle.vocab)?, &gen_examples(ds))?
        }
        ModelKind::Prompter => {
            if !has_checkpoint(&dir, PROMPTER_STEM) {
                return usage(format!("no prompter checkpoint in {}", dir.display()));
            }
            perplexity(&Prompter::load(&dir)?, &prompter_examples(ds))?
        }
    };
    println!("perplexity\t{ppl:.6}");
    Ok(())
}

fn load_generator(ctx: &Ctx, vocab: &Vocab) -> std::result::Result<Generator, Failure> {
    let dir = ctx.checkpoints();
    if !has_checkpoint(&dir, GENERATOR_STEM) {
        return usage(format!("needs a generator checkpoint in {}; run `grnp train gen`", dir.display()));
    }
    Ok(Generator::load(&dir, vocab)?)
}

fn load_prompter(ctx: &Ctx) -> std::result::Result<Prompter, Failure> {
    let dir = ctx.checkpoints();
    if !has_checkpoint(&dir, PROMPTER_STEM) {
        return usage(format!("needs a prompter checkpoint in {}; run `grnp train prompter`", dir.display()));
    }
    Ok(Prompter::load(&dir)?)
}

/// One verse per line.
pub fn render_poem(q: &Quatrain, vocab: &Vocab) -> String {
    q.verses()
        .iter()
        .map(|v| vocab.decode(v).join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn conditioning(bundle: &DatasetBundle, author: Option<&str>, scheme: &str) -> std::result::Result<(Conditioning, SchemeLabel), Failure> {
    let label = SchemeLabel::parse(scheme)?;
    if let Some(name) = author {
        if bundle.authors.id(Some(name)) == 0 {
            log::warn!("author `{name}` is not in the author table; using the unknown id");
        }
    }
    let cond = Conditioning::new(bundle.authors.id(author), bundle.schemes.id(Some(label.as_str())));
    Ok((cond, label))
}

fn cmd_generate(ctx: &mut Ctx, a: GenerateArgs) -> CmdResult {
    ctx.rc.finish();
    ctx.log_config("generate")?;
    let bundle = ctx.bundle()?;
    let gen = load_generator(ctx, &bundle.vocab)?;
    let (cond, _) = conditioning(&bundle, a.author.as_deref(), &a.scheme)?;
    let table = gen.char_table()?;
    let mut rng = crate::rng_from_seed(ctx.rc.seed);
    for i in 0..a.count {
        if i > 0 {
            println!();
        }
        let q = generate_draft(&gen.net, &gen.store, &[], cond, &ctx.rc.draft, Some(&table), &mut rng)?;
        println!("{}", render_poem(&q, &bundle.vocab));
    }
    Ok(())
}

/// Reads four non-empty verse lines and encodes them with `vocab`.
pub fn read_draft(path: &Path, vocab: &Vocab) -> Result<Quatrain> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut verses: Vec<Vec<usize>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| vocab.encode(&tokenize(l)))
        .filter(|v| !v.is_empty())
        .collect();
    if verses.len() != 4 {
        return Err(Error::Config(format!(
            "{}: a draft needs exactly four verse lines, found {}",
            path.display(),
            verses.len()
        )));
    }
    truncate_verses(&mut verses, MAX_QUATRAIN_TOKENS);
    Quatrain::from_verses(&verses)
}

fn cmd_revise(ctx: &mut Ctx, a: ReviseArgs) -> CmdResult {
    ctx.rc.finish();
    ctx.log_config("revise")?;
    let bundle = ctx.bundle()?;
    let (cond, label) = conditioning(&bundle, a.author.as_deref(), &a.scheme)?;
    if label.len() != 4 {
        return usage(format!("revision target must have four letters, got `{label}`"));
    }
    let pro = load_prompter(ctx)?;
    let det_dir = ctx.checkpoints();
    if !has_checkpoint(&det_dir, &a.detector) {
        return usage(format!("no detector checkpoint `{}` in {}; run `grnp rl` first", a.detector, det_dir.display()));
    }
    let det = Detector::load(&det_dir, &a.detector)?;
    let mut rng = crate::rng_from_seed(ctx.rc.seed);
    let draft = match &a.draft {
        Some(p) => read_draft(&ctx.path(&p.display().to_string()), &bundle.vocab)?,
        None => {
            let gen = load_generator(ctx, &bundle.vocab)?;
            let table = gen.char_table()?;
            generate_draft(&gen.net, &gen.store, &[], cond, &ctx.rc.draft, Some(&table), &mut rng)?
        }
    };
    let targets = vec![SchemeTarget {
        id: cond.scheme,
        label: label.clone(),
    }];
    let mut env = RhymeEnv::new(
        DraftMode::Pool(vec![(draft.clone(), cond)]),
        targets,
        Box::new(pro),
        ctx.rc.rhymer(&ctx.workdir)?,
        bundle.vocab.clone(),
        ctx.rc.rhyme.clone(),
    )?;
    env.start_from(draft.clone(), cond, label.clone());
    let mut agent = DetectorAgent::new(det);
    let trace = if env.start_is_goal() {
        Vec::new()
    } else {
        revise(&mut env, &mut agent, a.greedy, &mut rng)?
    };
    let matched = env.start_is_goal() || trace.last().is_some_and(|s| s.reward > 0.0);
    println!("draft:\n{}\n", render_poem(&draft, &bundle.vocab));
    println!("{TRACE_HEADER}");
    for s in &trace {
        println!("{}", s.to_line(&bundle.vocab));
    }
    println!("\nfinal:\n{}\n", render_poem(&env.state().poem, &bundle.vocab));
    println!("steps\t{}", trace.len());
    println!("verdict\t{}", if matched { "matched" } else { "unmatched" });
    Ok(())
}

/// Volley reports as one row per episode.
pub fn write_episode_csv(path: &Path, reports: &[VolleyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["volley", "episode", "reward", "length", "goal"])?;
    for r in reports {
        for (i, e) in r.episodes.iter().enumerate() {
            w.write_record([
                r.volley.to_string(),
                i.to_string(),
                e.reward.to_string(),
                e.length.to_string(),
                e.goal.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_rl(ctx: &mut Ctx, a: RlArgs) -> CmdResult {
    if a.dynamic && a.poems.is_some() {
        return usage("--dynamic draws a fresh poem per episode and cannot be combined with --poems");
    }
    if a.dynamic && a.env == EnvKind::Reconstruction {
        return usage("--dynamic applies to the rhyme environment only");
    }
    if let Some(n) = a.poems {
        ctx.set("env.poems", n)?;
    }
    if let Some(k) = a.corrupt {
        ctx.set("reconstruction.corruptions", k)?;
    }
    if let Some(v) = a.volleys {
        ctx.set("rl.volleys", v)?;
    }
    if let Some(e) = a.episodes {
        ctx.set("rl.episodes_per_volley", e)?;
    }
    if let Some(s) = a.steps {
        ctx.set("rl.steps_per_volley", s)?;
    }
    let explicit_eps = ctx.rc.is_explicit("rl.episodes_per_volley");
    let explicit_steps = ctx.rc.is_explicit("rl.steps_per_volley");
    match (explicit_eps, explicit_steps) {
        (false, true) => ctx.rc.rl.episodes_per_volley = None,
        (true, false) => ctx.rc.rl.steps_per_volley = None,
        (false, false) if a.env == EnvKind::Rhyme => {
            ctx.rc.rl.episodes_per_volley = None;
            ctx.rc.rl.steps_per_volley = Some(10_000);
        }
        _ => {}
    }
    ctx.rc.finish();
    ctx.rc.rl.validate()?;
    if ctx.rc.env.poems == 0 {
        return usage("env.poems must be positive");
    }
    let env_name = match a.env {
        EnvKind::Reconstruction => "reconstruction",
        EnvKind::Rhyme if a.dynamic => "rhyme_dynamic",
        EnvKind::Rhyme => "rhyme",
    };
    let tag = format!("{env_name}_{}", a.algo);
    ctx.log_config(&format!("rl_{tag}"))?;
    let bundle = ctx.bundle()?;
    let rc = ctx.rc.clone();
    let mut rng = crate::rng_from_seed(rc.seed);

    let pro = match a.env {
        EnvKind::Rhyme => Some(load_prompter(ctx)?),
        EnvKind::Reconstruction => {
            let dir = ctx.checkpoints();
            let sharing = rc.det.get("share_encoder").is_none_or(|v| v != "false" && v != "0");
            if sharing || has_checkpoint(&dir, PROMPTER_STEM) {
                Some(load_prompter(ctx)?)
            } else {
                None
            }
        }
    };
    let det = match &pro {
        Some(p) => {
            let mut cfg = DetectorConfig::matching(rc.size, p);
            cfg.apply(&rc.det)?;
            Detector::from_prompter(cfg, p, rc.seed)?
        }
        None => {
            let mut cfg = DetectorConfig::new(rc.size);
            cfg.vocab_size = bundle.vocab.len();
            cfg.n_authors = bundle.authors.len().max(1);
            cfg.n_schemes = bundle.schemes.len().max(1);
            cfg.apply(&rc.det)?;
            Detector::new(cfg, rc.seed)?
        }
    };

    let mut env: Box<dyn Environment> = match a.env {
        EnvKind::Reconstruction => {
            let pool: Vec<_> = bundle
                .train
                .examples
                .iter()
                .take(rc.env.poems)
                .map(|e| (e.quatrain.clone(), e.cond))
                .collect();
            if pool.len() < rc.env.poems {
                return usage(format!("training split holds only {} poems", pool.len()));
            }
            Box::new(ReconstructionEnv::new(pool, UnigramTable::from_vocab(&bundle.vocab)?, rc.reconstruction.clone())?)
        }
        EnvKind::Rhyme => {
            let gen = load_generator(ctx, &bundle.vocab)?;
            let targets = scheme_targets(&bundle.schemes);
            if targets.is_empty() {
                return usage("the scheme table holds no four-letter schemes");
            }
            let n_authors = bundle.authors.len().max(1);
            let mode = if a.dynamic {
                DraftMode::Dynamic {
                    source: Box::new(GeneratorDrafts::new(gen, rc.draft.clone())?),
                    authors: (0..n_authors).collect(),
                }
            } else {
                DraftMode::Pool(draft_pool(&gen, n_authors, &targets, rc.env.poems, &rc.draft, &mut rng)?)
            };
            Box::new(RhymeEnv::new(
                mode,
                targets,
                Box::new(pro.clone().expect("rhyme loads a prompter")),
                rc.rhymer(&ctx.workdir)?,
                bundle.vocab.clone(),
                rc.rhyme.clone(),
            )?)
        }
    };

    let ckpt_root = ctx.checkpoints().join("rl").join(&tag);
    let mut agent = DetectorAgent::new(det);
    let reports = train_volleys(env.as_mut(), &mut agent, &rc.rl, a.algo, &mut rng, |r, det| {
        det.save(&ckpt_root.join(format!("volley_{}", r.volley)), crate::detector::DETECTOR_STEM)?;
        println!(
            "volley {} episodes {} mean_reward {:.3} mean_length {:.2}",
            r.volley,
            r.episodes.len(),
            r.mean_reward,
            r.mean_length
        );
        Ok(())
    })?;
    let logs = ctx.logs()?;
    write_volley_csv(&logs.join(format!("rl_{tag}.csv")), &reports)?;
    write_episode_csv(&logs.join(format!("rl_{tag}_episodes.csv")), &reports)?;
    agent.detector.save(&ctx.checkpoints(), &format!("det_{tag}"))?;

    let first = reports.first().map_or(f64::NAN, |r| r.mean_reward);
    let last = reports.last().map_or(f64::NAN, |r| r.mean_reward);
    let pool = if a.dynamic { "dynamic".to_string() } else { rc.env.poems.to_string() };
    println!("\nenv\talgo\tpoems\tR_first\tR_last");
    println!("{env_name}\t{}\t{pool}\t{first:.3}\t{last:.3}", a.algo);
    Ok(())
}

fn cmd_gradcheck(ctx: &mut Ctx, a: GradcheckArgs) -> CmdResult {
    ctx.rc.finish();
    let fault: Option<OpKind> = match &a.inject_fault {
        Some(name) => match oracle::parse_op(name) {
            Some(k) => Some(k),
            None => return usage(format!("unknown op `{name}`")),
        },
        None => None,
    };
    let lines = oracle::run_checks(fault)?;
    let mut failed = 0;
    for l in &lines {
        println!("{l}");
        failed += !l.passed() as usize;
    }
    println!("{} checks, {failed} failed", lines.len());
    if failed > 0 {
        return Err(Failure::Failed(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
