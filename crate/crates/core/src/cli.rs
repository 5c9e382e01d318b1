//! Command-line runs: configuration, protein ingestion and result files.
//!
//! Every command is deterministic for a fixed `--seed`; with `--threads 1`
//! repeated runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    build_tasks, run_curriculum, write_teacher_trace, CurriculumConfig, GflowStudent, Preset,
    Schedule, DEFAULT_INTERVALS,
};
use crate::env::CodonDesignEnv;
use crate::error::{Error, Result};
use crate::genetic_code::{design_space_size, translate, AminoAcid, MrnaSequence, Protein};
use crate::metrics::{
    pareto_front, pareto_performance, topk_diversity, topk_reward, uniqueness, SampleSet,
};
use crate::objectives::{
    CodonUsageTable, MfeRaw, ObjectiveConfig, ObjectiveVector, Objectives, WeightVector,
};
use crate::optim::Adam;
use crate::oracle::{DesignSpace, DEFAULT_CAP};
use crate::policy::{MlpConfig, MlpPolicy};
use crate::training::{write_loss_trace, IterationRecord, Trainer, TrainingConfig};
use crate::verify;

/// Version tag written into every output file.
pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit code for an error that ends a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_REFUSED,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Fasta,
    Csv,
}

impl FileFormat {
    /// Guesses the format from a file extension.
    pub fn infer(path: &Path) -> Result<FileFormat> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "fa" | "fasta" | "faa" | "fna" => Ok(FileFormat::Fasta),
            "csv" => Ok(FileFormat::Csv),
            _ => Err(Error::Rejected(format!(
                "cannot tell the format of {} from its extension; pass --format",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Plain training, one protein at a time.
    None,
    Curriculum,
    ShortOnly,
    LongOnly,
    RandomOrder,
}

impl ScheduleKind {
    fn task_schedule(self) -> Option<Schedule> {
        match self {
            ScheduleKind::None => None,
            ScheduleKind::Curriculum => Some(Schedule::Teacher),
            ScheduleKind::ShortOnly => Some(Schedule::ShortOnly),
            ScheduleKind::LongOnly => Some(Schedule::LongOnly),
            ScheduleKind::RandomOrder => Some(Schedule::RandomOrder),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSettings {
    pub n: usize,
    pub top_n: usize,
    pub weights: WeightVector,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SampleSettings {
    fn default() -> Self {
        SampleSettings {
            n: 100,
            top_n: 50,
            weights: WeightVector::new([0.3, 0.3, 0.4]).expect("valid weights"),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnumerateSettings {
    pub cap: u64,
    pub weights: WeightVector,
}

impl Default for EnumerateSettings {
    fn default() -> Self {
        EnumerateSettings {
            cap: DEFAULT_CAP,
            weights: WeightVector::new([0.3, 0.3, 0.4]).expect("valid weights"),
        }
    }
}

/// Settings for every command, read from a TOML file.
///
/// `curriculum` holds overrides applied on top of the named `preset`.
/// The global `seed` drives training, curriculum and sampling streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub preset: Preset,
    pub protein: Option<String>,
    pub proteins: Option<PathBuf>,
    pub format: Option<FileFormat>,
    pub out_dir: PathBuf,
    pub codon_usage: Option<PathBuf>,
    pub intervals: Vec<(usize, usize)>,
    pub objectives: ObjectiveConfig,
    pub model: MlpConfig,
    pub training: TrainingConfig,
    pub curriculum: toml::Table,
    pub sample: SampleSettings,
    pub enumerate: EnumerateSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schedule: ScheduleKind::None,
            preset: Preset::Conservative,
            protein: None,
            proteins: None,
            format: None,
            out_dir: PathBuf::from("codonflow_out"),
            codon_usage: None,
            intervals: DEFAULT_INTERVALS.to_vec(),
            objectives: ObjectiveConfig::default(),
            model: MlpConfig::default(),
            training: TrainingConfig::default(),
            curriculum: toml::Table::new(),
            sample: SampleSettings::default(),
            enumerate: EnumerateSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The preset with this file's overrides applied.
    pub fn curriculum_config(&self) -> Result<CurriculumConfig> {
        let base = toml::Table::try_from(CurriculumConfig::preset(self.preset))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        for (k, v) in &self.curriculum {
            merged.insert(k.clone(), v.clone());
        }
        let mut cfg: CurriculumConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[curriculum] {e}")))?;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn objectives(&self) -> Result<Objectives> {
        let table = match &self.codon_usage {
            Some(p) => CodonUsageTable::from_file(p)?,
            None => CodonUsageTable::human(),
        };
        Objectives::new(table, self.objectives.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.objectives.validate()?;
        self.training.validate()?;
        self.curriculum_config()?;
        if self.model.hidden == 0 || self.model.max_len == 0 {
            return Err(Error::Config(
                "model hidden and max_len must be positive".into(),
            ));
        }
        if self.sample.n == 0 || self.sample.top_n == 0 {
            return Err(Error::Config("sample n and top_n must be positive".into()));
        }
        if self.intervals.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::Config(format!(
                "intervals {:?} must satisfy lo <= hi",
                self.intervals
            )));
        }
        Ok(())
    }
}

/// A protein with the name it was given in its source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedProtein {
    pub name: String,
    #[serde(with = "protein_string")]
    pub protein: Protein,
}

mod protein_string {
    use super::Protein;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Protein, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(p)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Protein, D::Error> {
        let s = String::deserialize(d)?;
        Protein::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Named proteins in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProteinPool {
    records: Vec<NamedProtein>,
}

impl ProteinPool {
    pub fn new(records: Vec<NamedProtein>) -> Result<ProteinPool> {
        if records.is_empty() {
            return Err(Error::Rejected("protein file contains no records".into()));
        }
        Ok(ProteinPool { records })
    }

    pub fn records(&self) -> &[NamedProtein] {
        &self.records
    }

    pub fn proteins(&self) -> Vec<Protein> {
        self.records.iter().map(|r| r.protein.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &NamedProtein {
        &self.records[0]
    }

    /// Record indices grouped by protein length.
    pub fn length_index(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut idx: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            idx.entry(r.protein.len()).or_default().push(i);
        }
        idx
    }
}

struct FastaRecord {
    name: String,
    header_line: usize,
    /// Sequence lines with their 1-based line numbers.
    lines: Vec<(usize, String)>,
}

fn record_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_fasta(path: &Path) -> Result<Vec<FastaRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<FastaRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with(';') {
            continue;
        }
        if let Some(header) = text.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return Err(record_error(path, n, "header without a name"));
            }
            out.push(FastaRecord {
                name,
                header_line: n,
                lines: Vec::new(),
            });
        } else {
            match out.last_mut() {
                Some(r) => r.lines.push((n, text.to_string())),
                None => {
                    return Err(record_error(
                        path,
                        n,
                        "sequence data before the first '>' header",
                    ))
                }
            }
        }
    }
    for r in &out {
        if r.lines.is_empty() {
            return Err(record_error(
                path,
                r.header_line,
                format!("record '{}' has no sequence", r.name),
            ));
        }
    }
    Ok(out)
}

/// Checks residue letters line by line so errors point at the right line.
fn parse_protein_lines(path: &Path, lines: &[(usize, String)]) -> Result<Protein> {
    let last = lines.len() - 1;
    for (k, (n, text)) in lines.iter().enumerate() {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        for (j, &c) in chars.iter().enumerate() {
            let trailing_stop = c == '*' && k == last && j + 1 == chars.len();
            let ok = matches!(AminoAcid::from_one_letter(c), Some(aa) if !aa.is_stop());
            if !ok && !trailing_stop {
                return Err(record_error(
                    path,
                    *n,
                    format!("invalid residue letter '{c}'"),
                ));
            }
        }
    }
    let joined: String = lines.iter().map(|(_, t)| t.as_str()).collect();
    Protein::parse(&joined).map_err(|e| record_error(path, lines[0].0, e.to_string()))
}

fn dna_to_design(text: &str) -> Result<MrnaSequence> {
    let mut x = MrnaSequence::parse(text)?;
    // a single terminal stop codon is part of many coding sequences
    if x.codons().last().is_some_and(|c| c.is_stop()) {
        let mut codons = x.codons().to_vec();
        codons.pop();
        x = MrnaSequence::new(codons);
    }
    Ok(x)
}

const DNA_COLUMNS: [&str; 4] = ["dna", "mrna", "cds", "nucleotides"];

fn load_protein_csv(path: &Path) -> Result<Vec<NamedProtein>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let protein_col =
        col("protein").ok_or_else(|| record_error(path, 1, "missing a 'protein' column"))?;
    let name_col = col("name");
    let dna_cols: Vec<(usize, &str)> = DNA_COLUMNS
        .iter()
        .filter_map(|d| col(d).map(|i| (i, *d)))
        .collect();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let text = row.get(protein_col).unwrap_or("");
        if text.is_empty() {
            return Err(record_error(path, line, "empty protein field"));
        }
        let protein = parse_protein_lines(path, &[(line, text.to_string())])?;
        for &(i, label) in &dna_cols {
            let dna = row.get(i).unwrap_or("");
            if dna.is_empty() {
                continue;
            }
            let design = dna_to_design(dna)
                .map_err(|e| record_error(path, line, format!("{label}: {e}")))?;
            let translated = translate(&design)
                .map_err(|e| record_error(path, line, format!("{label}: {e}")))?;
            if translated != protein {
                return Err(record_error(
                    path,
                    line,
                    format!("{label} column translates to {translated}, which does not match the protein column"),
                ));
            }
        }
        let name = match name_col.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
            Some(n) => n.to_string(),
            None => format!("record_{}", out.len() + 1),
        };
        out.push(NamedProtein { name, protein });
    }
    Ok(out)
}

/// Reads proteins from a FASTA or CSV file.
pub fn load_proteins(path: &Path, format: FileFormat) -> Result<ProteinPool> {
    let records = match format {
        FileFormat::Fasta => read_fasta(path)?
            .into_iter()
            .map(|r| {
                Ok(NamedProtein {
                    protein: parse_protein_lines(path, &r.lines)?,
                    name: r.name,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        FileFormat::Csv => load_protein_csv(path)?,
    };
    ProteinPool::new(records)
}

/// Designs to score, with the names and lines they came from.
fn load_sequences(path: &Path, format: FileFormat) -> Result<Vec<(String, MrnaSequence)>> {
    let mut out = Vec::new();
    match format {
        FileFormat::Fasta => {
            for r in read_fasta(path)? {
                let joined: String = r.lines.iter().map(|(_, t)| t.as_str()).collect();
                let x = dna_to_design(&joined)
                    .map_err(|e| record_error(path, r.lines[0].0, e.to_string()))?;
                translate(&x).map_err(|e| record_error(path, r.lines[0].0, e.to_string()))?;
                out.push((r.name, x));
            }
        }
        FileFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .trim(csv::Trim::All)
                .from_path(path)?;
            let headers: Vec<String> = reader
                .headers()?
                .iter()
                .map(|h| h.to_ascii_lowercase())
                .collect();
            let seq_col = ["sequence"]
                .iter()
                .chain(DNA_COLUMNS.iter())
                .find_map(|c| headers.iter().position(|h| h == c))
                .ok_or_else(|| record_error(path, 1, "missing a 'sequence' column"))?;
            let name_col = headers.iter().position(|h| h == "name");
            for row in reader.records() {
                let row = row?;
                let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
                let x = dna_to_design(row.get(seq_col).unwrap_or(""))
                    .map_err(|e| record_error(path, line, e.to_string()))?;
                translate(&x).map_err(|e| record_error(path, line, e.to_string()))?;
                let name = name_col
                    .and_then(|i| row.get(i))
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("record_{}", out.len() + 1));
                out.push((name, x));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Rejected(format!(
            "{} contains no sequences",
            path.display()
        )));
    }
    Ok(out)
}

/// Model, optimizer and provenance of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: MlpPolicy,
    pub optimizer: Adam,
    pub training: TrainingConfig,
    pub seed: u64,
    pub iteration: u64,
    pub proteins: Vec<NamedProtein>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::Rejected(format!(
                "checkpoint version {} is not {FORMAT_VERSION}",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "codonflow",
    version,
    about = "Synonymous mRNA design with conditional flow networks"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives a fully deterministic schedule.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of the protein or sequence input file.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FileFormat>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Protein given inline as one-letter residues.
    #[arg(long, global = true)]
    pub protein: Option<String>,
    /// FASTA or CSV file of proteins.
    #[arg(long, global = true)]
    pub proteins: Option<PathBuf>,
    /// Preference weights `gc,mfe,cai`.
    #[arg(long, global = true, value_parser = parse_weights)]
    pub weights: Option<WeightVector>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every design of a small protein exactly.
    Enumerate {
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Train a policy, optionally under a task schedule.
    Train {
        #[arg(long, value_enum)]
        schedule: Option<ScheduleKind>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw designs from a trained policy.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Score given nucleotide sequences.
    Score {
        #[arg(long)]
        sequences: PathBuf,
    },
    /// Run the built-in correctness checks.
    Verify,
}

fn parse_weights(s: &str) -> std::result::Result<WeightVector, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let raw: [f64; 3] = parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 weights, got {}", v.len()))?;
    WeightVector::new(raw).map_err(|e| e.to_string())
}

/// Configuration after applying command-line overrides.
fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(f) = g.format {
        cfg.format = Some(f);
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = &g.protein {
        cfg.protein = Some(p.clone());
        cfg.proteins = None;
    }
    if let Some(p) = &g.proteins {
        cfg.proteins = Some(p.clone());
        cfg.protein = None;
    }
    Ok(cfg)
}

fn protein_pool(cfg: &RunConfig) -> Result<ProteinPool> {
    if let Some(seq) = &cfg.protein {
        let protein = Protein::parse(seq)?;
        return ProteinPool::new(vec![NamedProtein {
            name: "protein".into(),
            protein,
        }]);
    }
    let path = cfg
        .proteins
        .as_ref()
        .ok_or_else(|| Error::Rejected("no protein given; use --protein or --proteins".into()))?;
    let format = match cfg.format {
        Some(f) => f,
        None => FileFormat::infer(path)?,
    };
    load_proteins(path, format)
}

/// The single protein a command works on: the first record, with a note
/// when the pool holds more.
fn single_protein(cfg: &RunConfig) -> Result<NamedProtein> {
    let pool = protein_pool(cfg)?;
    if pool.len() > 1 {
        eprintln!(
            "using the first of {} proteins ({})",
            pool.len(),
            pool.first().name
        );
    }
    Ok(pool.first().clone())
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

/// Opens a CSV output file whose first line names its layout version.
fn versioned_csv(path: &Path, kind: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# codonflow {kind} v{FORMAT_VERSION}")?;
    Ok(w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Parses the command line and runs it, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_REFUSED
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Rejected("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Enumerate { cap } => cmd_enumerate(&cfg, cli.global.weights, cap),
        Command::Train {
            schedule,
            preset,
            iterations,
            checkpoint,
        } => {
            let mut cfg = cfg;
            if let Some(s) = schedule {
                cfg.schedule = s;
            }
            if let Some(p) = preset {
                cfg.preset = p;
            }
            if let Some(n) = iterations {
                match cfg.schedule {
                    ScheduleKind::None => cfg.training.n_iterations = n,
                    _ => {
                        cfg.curriculum
                            .insert("n_iterations".into(), toml::Value::Integer(n as i64));
                    }
                }
            }
            cfg.validate()?;
            cmd_train(&cfg, checkpoint.as_deref())
        }
        Command::Sample {
            checkpoint,
            n,
            top_n,
        } => {
            let mut cfg = cfg;
            if let Some(w) = cli.global.weights {
                cfg.sample.weights = w;
            }
            if let Some(c) = checkpoint {
                cfg.sample.checkpoint = Some(c);
            }
            if let Some(n) = n {
                cfg.sample.n = n;
            }
            if let Some(k) = top_n {
                cfg.sample.top_n = k;
            }
            cfg.validate()?;
            cmd_sample(&cfg)
        }
        Command::Score { sequences } => {
            let w = cli.global.weights.unwrap_or(cfg.sample.weights);
            cmd_score(&cfg, &sequences, w)
        }
        Command::Verify => cmd_verify(&cfg),
    }
}

#[derive(Serialize)]
struct ObjectiveRow<'a> {
    sequence: &'a str,
    gc_raw: f64,
    mfe_pairs: Option<u32>,
    mfe_energy: Option<f64>,
    cai: f64,
    phi_gc: f64,
    phi_mfe: f64,
    phi_cai: f64,
    reward: f64,
}

impl<'a> ObjectiveRow<'a> {
    fn new(sequence: &'a str, o: &ObjectiveVector, reward: f64) -> Self {
        let (mfe_pairs, mfe_energy) = match o.mfe_raw {
            MfeRaw::Pairs(p) => (Some(p), None),
            MfeRaw::Energy(e) => (None, Some(e)),
        };
        ObjectiveRow {
            sequence,
            gc_raw: o.gc_raw,
            mfe_pairs,
            mfe_energy,
            cai: o.cai_raw,
            phi_gc: o.phi[0],
            phi_mfe: o.phi[1],
            phi_cai: o.phi[2],
            reward,
        }
    }
}

#[derive(Serialize)]
struct EnumerationSummary {
    version: u32,
    protein: String,
    weights: WeightVector,
    size: String,
    #[serde(rename = "Z")]
    z: f64,
    front_size: usize,
}

fn cmd_enumerate(cfg: &RunConfig, weights: Option<WeightVector>, cap: Option<u64>) -> Result<i32> {
    let named = single_protein(cfg)?;
    let w = weights.unwrap_or(cfg.enumerate.weights);
    let cap = cap.unwrap_or(cfg.enumerate.cap);
    let objectives = cfg.objectives()?;
    let space = DesignSpace::enumerate(&named.protein, &objectives, w, cap)?;
    let out = create_out(cfg)?;
    let mut file = versioned_csv(&out.join("enumeration.csv"), "enumeration")?;
    space.write_csv(&mut file)?;
    file.flush()?;
    let set = SampleSet::score(
        named.protein.clone(),
        space.designs.clone(),
        &objectives,
        w,
        cfg.seed,
    )?;
    let summary = EnumerationSummary {
        version: FORMAT_VERSION,
        protein: named.protein.to_string(),
        weights: w,
        size: design_space_size(&named.protein).to_string(),
        z: space.z,
        front_size: pareto_front(&set).len(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} designs, Z = {}, {} on the Pareto front",
        summary.size, summary.z, summary.front_size
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RunHeader<'a> {
    version: u32,
    command: &'static str,
    seed: u64,
    schedule: ScheduleKind,
    preset: Preset,
    proteins: &'a [NamedProtein],
    objectives: &'a ObjectiveConfig,
    model: MlpConfig,
    training: TrainingConfig,
    curriculum: Option<CurriculumConfig>,
    intervals: &'a [(usize, usize)],
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<i32> {
    let pool = protein_pool(cfg)?;
    let objectives = cfg.objectives()?;
    let training = cfg.training_config();
    let trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            Trainer::from_parts(ck.model, ck.optimizer, training.clone(), ck.iteration)?
        }
        None => Trainer::new(MlpPolicy::new(cfg.model, cfg.seed), training.clone())?,
    };
    let schedule = cfg.schedule.task_schedule();
    let curriculum = match schedule {
        Some(_) => Some(cfg.curriculum_config()?),
        None => None,
    };
    let out = create_out(cfg)?;
    write_json(
        &out.join("run_header.json"),
        &RunHeader {
            version: FORMAT_VERSION,
            command: "train",
            seed: cfg.seed,
            schedule: cfg.schedule,
            preset: cfg.preset,
            proteins: pool.records(),
            objectives: &cfg.objectives,
            model: cfg.model,
            training: training.clone(),
            curriculum: curriculum.clone(),
            intervals: &cfg.intervals,
        },
    )?;

    let mut student = GflowStudent::new(trainer, objectives);
    let outcome = match (schedule, &curriculum) {
        (Some(s), Some(ccfg)) => {
            let tasks = build_tasks(&cfg.intervals, &pool.proteins())?;
            run_curriculum(&tasks, &mut student, ccfg, s).map(Some)
        }
        _ => train_plain(&mut student, &pool, training.n_iterations).map(|_| None),
    };

    let checkpoint_path = out.join("checkpoint.json");
    let checkpoint = Checkpoint {
        version: FORMAT_VERSION,
        model: student.trainer.model.clone(),
        optimizer: student.trainer.optimizer.clone(),
        training,
        seed: cfg.seed,
        iteration: student.trainer.iteration(),
        proteins: pool.records().to_vec(),
    };
    checkpoint.save(&checkpoint_path)?;
    write_trace(&out.join("loss_trace.csv"), &student.loss_trace)?;
    match outcome {
        Ok(run) => {
            if let Some(run) = run {
                let mut w = versioned_csv(&out.join("teacher_trace.csv"), "teacher_trace")?;
                write_teacher_trace(&run.trace, &mut w)?;
                w.flush()?;
            }
            println!(
                "trained {} iterations; checkpoint {}",
                student.trainer.iteration(),
                checkpoint_path.display()
            );
            Ok(EXIT_OK)
        }
        Err(e @ Error::Numeric(_)) => {
            eprintln!("error: {e}");
            eprintln!(
                "checkpoint before the failing step: {}",
                checkpoint_path.display()
            );
            Ok(EXIT_NUMERIC)
        }
        Err(e) => Err(e),
    }
}

/// Cycles through the pool, one protein per iteration.
fn train_plain(student: &mut GflowStudent<MlpPolicy>, pool: &ProteinPool, n: usize) -> Result<()> {
    let envs: Vec<CodonDesignEnv> = pool
        .records()
        .iter()
        .map(|r| CodonDesignEnv::new(r.protein.clone()))
        .collect();
    for i in 0..n {
        let rec = student
            .trainer
            .step(&envs[i % envs.len()], &student.objectives)?;
        student.loss_trace.push(rec);
    }
    Ok(())
}

fn write_trace(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = versioned_csv(path, "loss_trace")?;
    write_loss_trace(records, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SampleMetrics {
    uniqueness: usize,
    topk_reward: f64,
    /// Absent when fewer than two distinct designs were drawn.
    topk_diversity: Option<f64>,
    pareto_performance: f64,
    front_size: usize,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Serialize)]
struct SampleReport {
    version: u32,
    protein_name: String,
    protein: String,
    weights: WeightVector,
    n: usize,
    seed: u64,
    top_n: usize,
    in_training_set: bool,
    metrics: SampleMetrics,
}

fn histogram_csv(path: &Path, set: &SampleSet) -> Result<()> {
    const BINS: usize = 20;
    let mut counts = vec![[0usize; 4]; BINS];
    let bin = |v: f64| ((v * BINS as f64) as usize).min(BINS - 1);
    for s in set.samples() {
        counts[bin(s.reward)][0] += 1;
        for j in 0..3 {
            counts[bin(s.objectives.phi[j])][j + 1] += 1;
        }
    }
    let mut w = versioned_csv(path, "histogram")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["bin_lo", "bin_hi", "reward", "phi_gc", "phi_mfe", "phi_cai"])?;
    for (i, row) in counts.iter().enumerate() {
        let lo = i as f64 / BINS as f64;
        let hi = (i + 1) as f64 / BINS as f64;
        let mut rec = vec![lo.to_string(), hi.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        c.write_record(rec)?;
    }
    c.flush()?;
    drop(c);
    w.flush()?;
    Ok(())
}

fn cmd_sample(cfg: &RunConfig) -> Result<i32> {
    let path = cfg
        .sample
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Rejected("sample needs --checkpoint".into()))?;
    let ck = Checkpoint::load(path)?;
    let named = single_protein(cfg)?;
    let seen = ck.proteins.iter().any(|r| r.protein == named.protein);
    if !seen {
        eprintln!(
            "note: protein '{}' was not in the checkpoint's training set",
            named.name
        );
    }
    let objectives = cfg.objectives()?;
    let env = CodonDesignEnv::new(named.protein.clone());
    let w = cfg.sample.weights;
    let designs = crate::training::sample_from(&env, &ck.model, w, cfg.sample.n, cfg.seed)?;
    let set = SampleSet::score(named.protein.clone(), designs, &objectives, w, cfg.seed)?;

    let out = create_out(cfg)?;
    let mut file = versioned_csv(&out.join("samples.csv"), "samples")?;
    {
        let mut c = csv::Writer::from_writer(&mut file);
        for s in set.samples() {
            let seq = s.sequence.to_string();
            c.serialize(ObjectiveRow::new(&seq, &s.objectives, s.reward))?;
        }
        c.flush()?;
    }
    file.flush()?;
    histogram_csv(&out.join("histograms.csv"), &set)?;

    let u = uniqueness(&set);
    let k = cfg.sample.top_n.min(u);
    let metrics = SampleMetrics {
        uniqueness: u,
        topk_reward: topk_reward(&set, k)?,
        topk_diversity: if k >= 2 {
            Some(topk_diversity(&set, k)?)
        } else {
            None
        },
        pareto_performance: pareto_performance(&set)?,
        front_size: pareto_front(&set).len(),
        k,
    };
    println!(
        "{} samples, {} unique, top-{} reward {:.4}",
        set.len(),
        metrics.uniqueness,
        metrics.k,
        metrics.topk_reward
    );
    write_json(
        &out.join("metrics.json"),
        &SampleReport {
            version: FORMAT_VERSION,
            protein_name: named.name,
            protein: named.protein.to_string(),
            weights: w,
            n: cfg.sample.n,
            seed: cfg.seed,
            top_n: cfg.sample.top_n,
            in_training_set: seen,
            metrics,
        },
    )?;
    Ok(EXIT_OK)
}

fn cmd_score(cfg: &RunConfig, sequences: &Path, w: WeightVector) -> Result<i32> {
    let format = match cfg.format {
        Some(f) => f,
        None => FileFormat::infer(sequences)?,
    };
    let records = load_sequences(sequences, format)?;
    let objectives = cfg.objectives()?;
    let out = create_out(cfg)?;
    let mut file = versioned_csv(&out.join("scores.csv"), "scores")?;
    {
        let scored: Vec<ObjectiveVector> = {
            use rayon::prelude::*;
            records
                .par_iter()
                .map(|(_, x)| objectives.evaluate(x))
                .collect::<Result<_>>()?
        };
        let mut c = csv::Writer::from_writer(&mut file);
        c.write_record([
            "name",
            "length",
            "sequence",
            "gc_raw",
            "mfe_pairs",
            "mfe_energy",
            "cai",
            "phi_gc",
            "phi_mfe",
            "phi_cai",
            "reward",
        ])?;
        for ((name, x), o) in records.iter().zip(&scored) {
            let seq = x.to_string();
            let s = ObjectiveRow::new(&seq, o, objectives.reward_of(o, &w));
            c.write_record([
                name.clone(),
                x.len().to_string(),
                seq.clone(),
                s.gc_raw.to_string(),
                s.mfe_pairs.map(|v| v.to_string()).unwrap_or_default(),
                s.mfe_energy.map(|v| v.to_string()).unwrap_or_default(),
                s.cai.to_string(),
                s.phi_gc.to_string(),
                s.phi_mfe.to_string(),
                s.phi_cai.to_string(),
                s.reward.to_string(),
            ])?;
        }
        c.flush()?;
    }
    file.flush()?;
    println!("scored {} sequences", records.len());
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let report = verify::run_all(cfg.seed)?;
    for c in &report.checks {
        println!(
            "{} {}: measured {:e}, threshold {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    let out = create_out(cfg)?;
    write_json(&out.join("verify_report.json"), &report)?;
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let c = cfg.curriculum_config().unwrap();
        assert_eq!(
            c,
            CurriculumConfig {
                seed: 0,
                ..CurriculumConfig::default()
            }
        );
        assert_eq!(cfg.sample.n, 100);
        assert_eq!(cfg.sample.top_n, 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[training]\nbatchsize = 3").is_err());
        assert!(RunConfig::from_toml("[curriculum]\nlpe_kk = 3").is_err());
    }

    #[test]
    fn preset_overrides_merge() {
        let cfg =
            RunConfig::from_toml("preset = \"aggressive\"\n[curriculum]\nacp_mr_power = 3.0\n")
                .unwrap();
        let c = cfg.curriculum_config().unwrap();
        assert_eq!(c.acp_mr_power, 3.0);
        assert_eq!(c.acp_mr_pot_prop, 0.8);
    }

    #[test]
    fn fasta_pool() {
        let dir = tempfile::tempdir().unwrap();
        let p = temp_file(&dir, "a.fasta", ">one desc\nMFK\n>two\nLL\nW*\n");
        let pool = load_proteins(&p, FileFormat::Fasta).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.records()[1].protein.to_string(), "LLW");
        assert_eq!(pool.length_index()[&3], vec![0, 1]);
    }

    #[test]
    fn fasta_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let bad = temp_file(&dir, "b.fasta", ">one\nMFK\n>two\nMBK\n");
        match load_proteins(&bad, FileFormat::Fasta) {
            Err(Error::Record {
                line: 4, message, ..
            }) => assert!(message.contains("'B'")),
            other => panic!("{other:?}"),
        }
        let empty = temp_file(&dir, "c.fasta", ">one\n>two\nMK\n");
        assert!(matches!(
            load_proteins(&empty, FileFormat::Fasta),
            Err(Error::Record { line: 1, .. })
        ));
        let orphan = temp_file(&dir, "d.fasta", "MK\n");
        assert!(matches!(
            load_proteins(&orphan, FileFormat::Fasta),
            Err(Error::Record { line: 1, .. })
        ));
    }

    #[test]
    fn csv_cross_checks_dna() {
        let dir = tempfile::tempdir().unwrap();
        let good = temp_file(&dir, "g.csv", "name,protein,dna\nmfk,MFK,ATGTTTAAATAA\n");
        let pool = load_proteins(&good, FileFormat::Csv).unwrap();
        assert_eq!(pool.first().name, "mfk");
        let bad = temp_file(
            &dir,
            "h.csv",
            "name,protein,dna\nok,MK,ATGAAA\nmfk,MFK,ATGTTTGGG\n",
        );
        match load_proteins(&bad, FileFormat::Csv) {
            Err(Error::Record {
                line: 3, message, ..
            }) => assert!(message.contains("MFG")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weights_flag() {
        assert_eq!(
            parse_weights("0.3,0.3,0.4").unwrap().as_array(),
            [0.3, 0.3, 0.4]
        );
        assert!(parse_weights("1,2").is_err());
        assert!(parse_weights("-1,1,1").is_err());
    }

    #[test]
    fn format_inference() {
        assert_eq!(
            FileFormat::infer(Path::new("x.fa")).unwrap(),
            FileFormat::Fasta
        );
        assert_eq!(
            FileFormat::infer(Path::new("x.CSV")).unwrap(),
            FileFormat::Csv
        );
        assert!(FileFormat::infer(Path::new("x.txt")).is_err());
    }
}
