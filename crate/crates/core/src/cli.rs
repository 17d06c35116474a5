//! Command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, DEFAULT_BINS, DEFAULT_TOP_K};
use crate::combiner::{combine_grid, combine_query, CombinationQuery};
use crate::embedding_io::{load_model, load_text_embeddings, save_model};
use crate::error::Error;
use crate::fastica::{Contrast, IcaConfig, IcaModel};
use crate::intruder::{
    generate_items, read_records_jsonl, score_responses, GenerateOptions, ItemSet, PoolDirection, SourceKind,
    DEFAULT_TOP_FRACTION,
};
use crate::service::{component_classes, read_labels_jsonl, serve, ServeConfig};
use crate::stability::{self, LabelClass, StabilityReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wordica", version, about = "Independent component analysis of word embeddings")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit FastICA to word2vec text vectors and save the model.
    Ica(IcaArgs),
    /// Per-component profiles and histograms as JSON.
    Analyze(AnalyzeArgs),
    /// Compare the components of two models fitted on the same vocabulary.
    Stability(StabilityArgs),
    /// Rank words by the product of component values.
    Combine(CombineArgs),
    /// Word intruder test items and scoring.
    #[command(subcommand)]
    Intruder(IntruderCommand),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IcaArgs {
    /// word2vec text file.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of components (defaults to the embedding dimension).
    #[arg(long)]
    pub components: Option<usize>,
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// logcosh, exp or cube.
    #[arg(long, default_value = "logcosh")]
    pub contrast: Contrast,
    /// Random initializations; the most non-Gaussian result is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing model directory.
    #[arg(long)]
    pub force: bool,
    /// Keep the arbitrary component polarity instead of sign-normalizing.
    #[arg(long)]
    pub raw_signs: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON report path; a summary table is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Words listed per component direction.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// First model directory.
    #[arg(long)]
    pub a: PathBuf,
    /// Second model directory.
    #[arg(long)]
    pub b: PathBuf,
    /// JSON report path; a summary is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of per-component max |corr| (defaults to the report path with a
    /// `.csv` extension).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// labels.jsonl from an annotation store, to group run-A components by
    /// class.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Leave the correlation matrix out of the report when either run has
    /// more components than this.
    #[arg(long, default_value_t = 512)]
    pub max_corr_components: usize,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated component indices, e.g. `398,110`.
    #[arg(long, conflicts_with_all = ["grid_rows", "grid_cols"])]
    pub components: Option<String>,
    /// Row components of a grid query.
    #[arg(long, requires = "grid_cols")]
    pub grid_rows: Option<String>,
    /// Column components of a grid query.
    #[arg(long, requires = "grid_rows")]
    pub grid_cols: Option<String>,
    #[arg(long, default_value_t = 15)]
    pub top: usize,
    /// Clamp negative component values to zero before multiplying.
    #[arg(long)]
    pub clamp: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Write JSON to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IntruderCommand {
    /// Generate one item per component direction.
    Gen(IntruderGenArgs),
    /// Score JSON Lines responses against an item file.
    Score(IntruderScoreArgs),
}

#[derive(Debug, Args)]
pub struct IntruderGenArgs {
    /// Model directory (items over independent components).
    #[arg(long, required_unless_present = "embeddings", conflicts_with = "embeddings")]
    pub model: Option<PathBuf>,
    /// word2vec text file (items over raw dimensions).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
    pub top_fraction: f64,
    /// Item file; JSON goes to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntruderScoreArgs {
    #[arg(long)]
    pub items: PathBuf,
    /// responses.jsonl
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub items: PathBuf,
    /// Directory holding responses.jsonl and labels.jsonl.
    #[arg(long)]
    pub store: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Built UI bundle served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Ica(args) => cmd_ica(args, seed),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Stability(args) => cmd_stability(args),
        Command::Combine(args) => cmd_combine(args),
        Command::Intruder(IntruderCommand::Gen(args)) => cmd_intruder_gen(args, seed),
        Command::Intruder(IntruderCommand::Score(args)) => cmd_intruder_score(args),
        Command::Serve(args) => cmd_serve(args),
    }
}

/// Parses `1,2,3` into component indices.
pub fn parse_component_list(s: &str) -> Result<Vec<usize>, String> {
    let ids = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid component index {part:?} in {s:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ids.is_empty() {
        return Err("empty component list".into());
    }
    Ok(ids)
}

fn write_output(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

fn cmd_ica(args: IcaArgs, seed: u64) -> CliResult {
    if args.components == Some(0) {
        return Err(Failure::Usage("--components must be at least 1".into()));
    }
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    if args.max_iter == 0 {
        return Err(Failure::Usage("--max-iter must be at least 1".into()));
    }
    if args.restarts == 0 {
        return Err(Failure::Usage("--restarts must be at least 1".into()));
    }
    if args.out.join("meta.json").exists() && !args.force {
        return Err(Error::WouldOverwrite(args.out.clone()).into());
    }

    let (vocab, embeddings) = load_text_embeddings(&args.input)?;
    let components = args.components.unwrap_or(embeddings.d());
    log::info!("loaded {} words x {} dims; fitting {components} components", embeddings.v(), embeddings.d());
    let config = IcaConfig::new(components)
        .seed(seed)
        .tolerance(args.tol)
        .max_iter(args.max_iter)
        .contrast(args.contrast)
        .restarts(args.restarts);
    let mut model = IcaModel::fit(vocab, &embeddings, &config)?;
    if !args.raw_signs {
        model = analysis::normalize_signs(&model);
    }
    save_model(&model, &args.out, args.force)?;
    eprintln!(
        "fitted {} components in {} iterations ({}); model written to {}",
        model.n_components(),
        model.iterations_run,
        if model.converged { "converged" } else { "not converged" },
        args.out.display()
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    if args.bins == 0 || args.top == 0 {
        return Err(Failure::Usage("--bins and --top must be at least 1".into()));
    }
    let model = load_model(&args.model)?;
    let report = analysis::analyze(&model, args.top, args.bins)?;
    match &args.out {
        Some(path) => write_output(path, &to_json(&report)?)?,
        None => {
            let mut table = String::from("component\tdominant\tone_sidedness\tdirection\ttop_positive\n");
            for p in &report.components {
                let words: Vec<&str> = p.top_positive.iter().take(5).map(|w| w.token.as_str()).collect();
                let _ = writeln!(
                    table,
                    "{}\t{}\t{}\t{}\t{}",
                    p.component_id,
                    p.dominant_words.len(),
                    p.one_sidedness.map_or("-".into(), |r| format!("{r:.3}")),
                    p.dominant_direction.map_or("-".into(), |d| d.to_string()),
                    words.join(", ")
                );
            }
            print!("{table}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StabilityOutput<'a> {
    #[serde(flatten)]
    report: &'a StabilityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_label: Option<BTreeMap<LabelClass, Vec<f64>>>,
}

fn cmd_stability(args: StabilityArgs) -> CliResult {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    if a.vocab.tokens() != b.vocab.tokens() {
        return Err(Error::Shape("the two models were fitted on different vocabularies".into()).into());
    }
    let mut report = StabilityReport::from_sources(a.s.view(), b.s.view())?;
    if a.n_components().max(b.n_components()) > args.max_corr_components {
        report.corr = None;
    }
    let by_label = match &args.labels {
        Some(path) => {
            let classes = component_classes(&read_labels_jsonl(path)?);
            Some(stability::stability_by_label(&report, &classes))
        }
        None => None,
    };
    let output = StabilityOutput {
        report: &report,
        by_label,
    };

    let csv_path = args
        .csv
        .clone()
        .or_else(|| args.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(path) = &csv_path {
        write_output(path, &report.max_abs_csv())?;
    }
    match &args.out {
        Some(path) => write_output(path, &to_json(&output)?)?,
        None => {
            let strong = report.matching.iter().filter(|p| p.abs_corr > 0.9).count();
            println!("matched pairs: {}", report.matching.len());
            println!("pairs with |corr| > 0.9: {strong}");
            println!("a\tb\t|corr|");
            for p in &report.matching {
                println!("{}\t{}\t{:.4}", p.a, p.b, p.abs_corr);
            }
        }
    }
    Ok(())
}

fn cmd_combine(args: CombineArgs) -> CliResult {
    if args.top == 0 {
        return Err(Failure::Usage("--top must be at least 1".into()));
    }
    let grid = match (&args.components, &args.grid_rows, &args.grid_cols) {
        (Some(list), None, None) => Err(parse_component_list(list).map_err(Failure::Usage)?),
        (None, Some(rows), Some(cols)) => Ok((
            parse_component_list(rows).map_err(Failure::Usage)?,
            parse_component_list(cols).map_err(Failure::Usage)?,
        )),
        _ => {
            return Err(Failure::Usage(
                "give either --components or both --grid-rows and --grid-cols".into(),
            ))
        }
    };
    let model = load_model(&args.model)?;

    match grid {
        Err(ids) => {
            let q = CombinationQuery::new(ids, args.top).clamp_negative(args.clamp);
            let words = combine_query(&model, &q)?;
            if let Some(path) = &args.out {
                write_output(path, &to_json(&words)?)?;
            } else if args.json {
                print!("{}", to_json(&words)?);
            } else {
                for w in &words {
                    println!("{}\t{:.6}", w.token, w.score);
                }
            }
        }
        Ok((rows, cols)) => {
            let cells = combine_grid(&model, &rows, &cols, args.top, args.clamp)?;
            if let Some(path) = &args.out {
                write_output(path, &to_json(&cells)?)?;
            } else if args.json {
                print!("{}", to_json(&cells)?);
            } else {
                let mut header = String::from("row\\col");
                for c in &cols {
                    let _ = write!(header, "\tC{c}");
                }
                println!("{header}");
                for (ri, r) in rows.iter().enumerate() {
                    let mut line = format!("C{r}");
                    for cell in &cells[ri * cols.len()..(ri + 1) * cols.len()] {
                        let words: Vec<&str> = cell.words.iter().map(|w| w.token.as_str()).collect();
                        let _ = write!(line, "\t{}", words.join(", "));
                    }
                    println!("{line}");
                }
            }
        }
    }
    Ok(())
}

fn cmd_intruder_gen(args: IntruderGenArgs, seed: u64) -> CliResult {
    if !(args.top_fraction > 0.0 && args.top_fraction <= 1.0) {
        return Err(Failure::Usage("--top-fraction must lie in (0, 1]".into()));
    }
    let set = match (&args.model, &args.embeddings) {
        (Some(dir), _) => {
            let model = load_model(dir)?;
            let pool = if model.is_sign_normalized() {
                PoolDirection::Positive
            } else {
                PoolDirection::MatchItem
            };
            let opts = GenerateOptions::new(SourceKind::Ica, seed)
                .top_fraction(args.top_fraction)
                .pool_direction(pool);
            generate_items(model.s.view(), &model.vocab, &opts)?
        }
        (None, Some(path)) => {
            let (vocab, embeddings) = load_text_embeddings(path)?;
            let opts = GenerateOptions::new(SourceKind::Raw, seed).top_fraction(args.top_fraction);
            generate_items(embeddings.to_f64().view(), &vocab, &opts)?
        }
        (None, None) => return Err(Failure::Usage("give --model or --embeddings".into())),
    };
    let json = set.to_json()?;
    match &args.out {
        Some(path) => {
            write_output(path, &json)?;
            eprintln!("wrote {} items to {}", set.items.len(), path.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_intruder_score(args: IntruderScoreArgs) -> CliResult {
    let set = ItemSet::load(&args.items)?;
    let records = read_records_jsonl(&args.responses)?;
    let stats = score_responses(&set.items, &records)?;
    match &args.out {
        Some(path) => write_output(path, &to_json(&stats)?)?,
        None => print!("{}", to_json(&stats)?),
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> CliResult {
    let config = ServeConfig {
        model_dir: args.model,
        items_file: args.items,
        store_dir: args.store,
        host: args.host,
        port: args.port,
        ui_dir: args.ui_dir,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(serve(config))?;
    Ok(())
}
