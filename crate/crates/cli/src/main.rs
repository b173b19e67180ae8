//! `proxyscope` command line: one subcommand per pipeline stage, plus `run`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use proxyscope::adapters::ResponseCache;
use proxyscope::casegen::read_cases_jsonl;
use proxyscope::ingest::{parse_lastfm, parse_movielens, preprocess, write_store, PreprocessRules};
use proxyscope::pipeline::{
    emit_report, fit_models, load_template, prepare, rank_cases, read_fits, read_scores_csv, run_pipeline,
    score_responses, unscored_tsv, write_fits, write_jsonl, write_scores_csv, PipelineError, RankInputs, RunConfig,
    RunPaths,
};
use proxyscope::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(name = "proxyscope", version, about = "Measure generalization through personalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw dataset into the canonical TSV store.
    Ingest {
        #[arg(long, conflicts_with = "lastfm", required_unless_present = "lastfm")]
        movielens: Option<PathBuf>,
        #[arg(long)]
        lastfm: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Keep the raw dataset as parsed.
        #[arg(long)]
        no_preprocess: bool,
    },
    /// Generate a synthetic population and its ground truth.
    Synth {
        /// Synth spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build the dataset and the evaluation cases.
    GenCases(ConfigArg),
    /// Every stage, end to end.
    Run(ConfigArg),
    /// Rank the generated cases with every model and score them.
    Score(ConfigArg),
    /// Fit curves to the scores.
    Fit(ConfigArg),
    /// Plots and comparison table from fitted curves.
    Report {
        #[arg(short, long, conflicts_with = "fit", required_unless_present = "fit")]
        config: Option<PathBuf>,
        /// A `fit.json` file, used instead of a run config.
        #[arg(long, requires = "out")]
        fit: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.into()),
            other => Failure::Stage(other.into()),
        }
    }
}

fn stage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Stage(e.into())
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::load(path).map_err(|e| Failure::Config(e.into()))?;
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

fn ingest(movielens: Option<PathBuf>, lastfm: Option<PathBuf>, out: &Path, no_preprocess: bool) -> Result<(), Failure> {
    let (raw, rules) = match (movielens, lastfm) {
        (Some(dir), _) => (parse_movielens(&dir).map_err(stage)?, PreprocessRules::movies()),
        (None, Some(dir)) => {
            let (d, skips) = parse_lastfm(&dir).map_err(stage)?;
            if !skips.entries.is_empty() {
                fs::create_dir_all(out).map_err(stage)?;
                fs::write(out.join("skipped.txt"), skips.to_text()).map_err(stage)?;
                log::warn!("skipped {} log rows, see skipped.txt", skips.entries.len());
            }
            (d, PreprocessRules::music())
        }
        (None, None) => return Err(Failure::Config(anyhow::anyhow!("need --movielens or --lastfm"))),
    };
    let dataset = if no_preprocess { raw } else { preprocess(&raw, &rules).map_err(stage)? };
    let m = write_store(&dataset, out).map_err(stage)?;
    println!("{}: {} users, {} items, {} interactions", m.name, m.users, m.items, m.interactions);
    Ok(())
}

fn synth(spec: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(spec)
        .with_context(|| spec.display().to_string())
        .map_err(Failure::Config)?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| Failure::Config(e.into()))?;
    spec.validate().map_err(|e| Failure::Config(e.into()))?;
    let (dataset, truth) = generate(&spec).map_err(stage)?;
    let m = write_store(&dataset, out).map_err(stage)?;
    truth.write(&out.join("ground_truth.json")).map_err(stage)?;
    println!("{}: {} users, {} items, {} interactions", m.name, m.users, m.items, m.interactions);
    Ok(())
}

fn gen_cases(cfg: &RunConfig) -> Result<(), Failure> {
    let (_, _, cases, reused) = prepare(cfg)?;
    let verb = if reused { "reused" } else { "wrote" };
    println!("{verb} {} cases in {}", cases.len(), RunPaths::new(&cfg.output).cases().display());
    Ok(())
}

fn score(cfg: &RunConfig) -> Result<(), Failure> {
    let (dataset, truth, cases, _) = prepare(cfg)?;
    let paths = RunPaths::new(&cfg.output);
    let cache = ResponseCache::open(paths.cache()).map_err(stage)?;
    let template = load_template(cfg, &dataset)?;
    let inputs = RankInputs {
        dataset: &dataset,
        truth: truth.as_ref(),
        cache: &cache,
        template: &template,
        seed: cfg.seed,
        max_in_flight: cfg.max_in_flight,
    };
    let responses = rank_cases(&cfg.models, &cases, &inputs)?;
    write_jsonl(&paths.responses(), &responses).map_err(stage)?;
    let (scored, unscored) = score_responses(&cases, &responses, cfg.policy);
    write_scores_csv(&paths.scores(), &scored).map_err(stage)?;
    fs::write(paths.unscored(), unscored_tsv(&unscored)).map_err(stage)?;
    println!("scored {}, unscored {}", scored.len(), unscored.len());
    Ok(())
}

fn fit(cfg: &RunConfig) -> Result<(), Failure> {
    let paths = RunPaths::new(&cfg.output);
    let scores = read_scores_csv(&paths.scores())
        .with_context(|| paths.scores().display().to_string())
        .map_err(Failure::Stage)?;
    let cases = read_cases_jsonl(paths.cases()).map_err(stage)?;
    let names: Vec<String> = cfg.models.iter().map(|m| m.name.clone()).collect();
    let fits = fit_models(&names, &scores, &cases, &cfg.curves);
    write_fits(&paths, &fits)?;
    for f in &fits {
        match f.inflection {
            Some(i) => println!("{}: x* = {:.4} ({})", f.model, i.x, i.flag.as_str()),
            None => println!("{}: fit skipped", f.model),
        }
    }
    Ok(())
}

fn report(fit_json: &Path, out: &Path) -> Result<(), Failure> {
    let fits = read_fits(fit_json)?;
    let files = emit_report(&fits, out).map_err(stage)?;
    print!("{}", fs::read_to_string(&files.table_txt).map_err(stage)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            movielens,
            lastfm,
            out,
            no_preprocess,
        } => ingest(movielens, lastfm, &out, no_preprocess),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::GenCases(a) => gen_cases(&load(&a.config)?),
        Command::Run(a) => {
            let cfg = load(&a.config)?;
            let s = run_pipeline(&cfg)?;
            println!("{} cases, {} scored, {} unscored", s.cases, s.scored, s.unscored);
            print!("{}", fs::read_to_string(&s.report.table_txt).map_err(stage)?);
            Ok(())
        }
        Command::Score(a) => score(&load(&a.config)?),
        Command::Fit(a) => fit(&load(&a.config)?),
        Command::Report { config, fit, out } => match (config, fit) {
            (Some(c), _) => {
                let cfg = load(&c)?;
                let paths = RunPaths::new(&cfg.output);
                report(&paths.fit(), out.as_deref().unwrap_or(&paths.root))
            }
            (None, Some(f)) => report(&f, out.as_deref().expect("clap requires --out")),
            (None, None) => unreachable!("clap requires --config or --fit"),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
