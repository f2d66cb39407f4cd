//! Command-line front end: argument parsing, configuration precedence and
//! dispatch to the analysis subcommands.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod report;
mod run;

pub use run::sha256_hex;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] fabrictext::Error),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io(..) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fabrictext", version, about = "Corpus analytics and retrieval evaluation for image-description datasets")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Root for artifacts/<subcommand>/ [default: out]
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed for every randomized step [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: logical cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` settings; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    /// Description records (JSONL or CSV)
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus format, inferred from the extension when omitted
    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub format: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TextArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Surface-to-lemma TSV replacing the bundled dictionary
    #[arg(long)]
    pub lemmas: Option<PathBuf>,
    /// Stop-word list replacing the bundled one
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Part-of-speech annotations (JSONL)
    #[arg(long)]
    pub pos: Option<PathBuf>,
    /// Spelling correction [default: off]
    #[arg(long, value_parser = ["off", "edit1"])]
    pub spell: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct CatalogArgs {
    /// Image metadata CSV `image_id,material_id,geometry,lighting`
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a corpus and write normalized records, image catalog and counts
    Ingest(IngestArgs),
    /// Check collection constraints, optionally after applying audit labels
    Validate(ValidateArgs),
    /// Token, type and lemma statistics, length histogram and POS shares
    Stats(StatsArgs),
    /// Lemma frequency and dispersion ranking, coverage curve and lexicon
    Lexicon(LexiconArgs),
    /// Attribute clustering, probabilities and keyword classification
    Attributes(AttributesArgs),
    /// Rank products and order-of-appearance significance groups
    Structure(StructureArgs),
    /// Intra- versus inter-image description similarity and ANOSIM
    Simstats(SimstatsArgs),
    /// Top-K recall, recall sweeps and image search
    Retrieval(RetrievalArgs),
    /// Embedding similarity across geometry or lighting variants
    Invariance(InvarianceArgs),
    /// Keywords per image from its first descriptions
    Keywords(KeywordsArgs),
    /// GLCM entropy of a directory of PNG/PPM images
    Imagestats(ImagestatsArgs),
    /// Aggregate existing artifacts into report.json and report.md
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Audit labels (JSONL `description_id,status,rating`)
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Rejection-rate threshold for the describer cascade [default: 0.35]
    #[arg(long)]
    pub audit_threshold: Option<f64>,
    /// [default: 20]
    #[arg(long)]
    pub min_words: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    pub max_words: Option<usize>,
    /// Minimum descriptions per describer [default: 10]
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Maximum share of one describer [default: 0.09]
    #[arg(long)]
    pub max_share: Option<f64>,
    /// Descriptions counted for the share [default: valid]
    #[arg(long, value_parser = ["valid", "all"])]
    pub share_basis: Option<String>,
    /// Minimum valid descriptions per image [default: 5]
    #[arg(long)]
    pub min_valid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    #[command(flatten)]
    pub text: TextArgs,
    /// Mean coverage the lexicon must reach [default: 0.95]
    #[arg(long)]
    pub target: Option<f64>,
    /// Coverage denominator [default: occurrences]
    #[arg(long, value_parser = ["occurrences", "distinct"])]
    pub coverage_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttributesArgs {
    /// Lemma embeddings (text or .bin)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Curated `lemma,attribute` CSV; skips clustering
    #[arg(long)]
    pub attribute_csv: Option<PathBuf>,
    /// Lexicon CSV (`rank,lemma,arf,f`) selecting the lemmas to cluster
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// `lemma,attribute` CSV naming clusters by exemplar
    #[arg(long)]
    pub curation: Option<PathBuf>,
    /// [default: 0.9]
    #[arg(long)]
    pub damping: Option<f64>,
    /// `median` or a number [default: median]
    #[arg(long)]
    pub preference: Option<String>,
    /// [default: 1000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    pub conv_iters: Option<usize>,
    /// Labeled keywords CSV `word,attribute,class` for precision
    #[arg(long)]
    pub labeled_keywords: Option<PathBuf>,
    /// Attributes excluded from classification [default: military,sewing,weight]
    #[arg(long)]
    pub exclude: Option<String>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    #[command(flatten)]
    pub text: TextArgs,
    /// `lemma,attribute` CSV
    #[arg(long)]
    pub attribute_csv: Option<PathBuf>,
    /// [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Post-hoc p-value correction [default: holm]
    #[arg(long, value_parser = ["none", "bonferroni", "holm"])]
    pub correction: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimstatsArgs {
    /// Description embeddings keyed by description id
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `key,image_id` CSV; the corpus supplies labels when omitted
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// ANOSIM sample [default: stratified]
    #[arg(long, value_parser = ["stratified", "full", "skip"])]
    pub sampling: Option<String>,
    /// [default: 5]
    #[arg(long)]
    pub per_image: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    pub max_images: Option<usize>,
    /// [default: 999]
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Ranking of pair dissimilarities [default: auto]
    #[arg(long, value_parser = ["auto", "exact", "histogram"])]
    pub rank_mode: Option<String>,
    /// Histogram bins for histogram ranking [default: 1048576]
    #[arg(long)]
    pub bins: Option<usize>,
    /// [default: 512]
    #[arg(long)]
    pub block_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    /// Query (text) embeddings
    #[arg(long)]
    pub text_embeddings: Option<PathBuf>,
    /// Candidate image embeddings keyed by image id
    #[arg(long)]
    pub image_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Retrieval cases (JSONL)
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Comma-separated K values [default: 1,5,10,20,100]
    #[arg(long)]
    pub ks: Option<String>,
    /// Ground-truth granularity [default: material]
    #[arg(long, value_parser = ["material", "image"])]
    pub truth: Option<String>,
    /// Extra `NAME,TEXT_FILE,IMAGE_FILE` snapshot for a recall sweep (repeatable)
    #[arg(long)]
    pub snapshot: Vec<String>,
    /// Key to search for among the image embeddings
    #[arg(long)]
    pub search: Option<String>,
    /// Results kept for --search [default: 10]
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InvarianceArgs {
    /// Image embeddings keyed by image id
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Second store compared by a paired signed-rank test
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Varied dimension [default: geometry]
    #[arg(long, value_parser = ["geometry", "lighting"])]
    pub mode: Option<String>,
    /// Signed-rank p-value method [default: auto]
    #[arg(long, value_parser = ["auto", "exact", "normal"])]
    pub wilcoxon: Option<String>,
}

#[derive(Debug, Args)]
pub struct KeywordsArgs {
    #[command(flatten)]
    pub text: TextArgs,
    /// Lexicon CSV (`rank,lemma,arf,f`)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// `lemma,attribute` CSV
    #[arg(long)]
    pub attribute_csv: Option<PathBuf>,
    /// Rank products (`attribute,psi,group_id`); computed from the corpus when omitted
    #[arg(long)]
    pub rank_product: Option<PathBuf>,
    /// Descriptions used per image [default: 5]
    #[arg(long)]
    pub n_desc: Option<usize>,
    /// Restrict to these image ids (repeatable)
    #[arg(long)]
    pub image: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ImagestatsArgs {
    /// Directory of PNG/PPM images
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Gray levels [default: 64]
    #[arg(long)]
    pub levels: Option<u16>,
    /// Offsets as `dx,dy;dx,dy` [default: 1,0;0,1]
    #[arg(long)]
    pub offsets: Option<String>,
    /// Count each pair in one direction only
    #[arg(long)]
    pub asymmetric: bool,
    /// Histogram bins [default: 50]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Histogram range `lo,hi` [default: data range]
    #[arg(long)]
    pub range: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on data errors, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match commands::execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
