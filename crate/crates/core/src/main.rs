use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phonoprobe::corpus::{build_inventory, load_alignments};
use phonoprobe::phonepatterns::Place;
use phonoprobe::runner::{
    emit_report, generate_synthetic, match_targets, pool_layers, run_experiment, select_dimensionality, write_outputs,
    ExperimentConfig, ResultsTable, RunError, SynthSpec,
};

#[derive(Parser)]
#[command(
    name = "phonoprobe",
    version,
    about = "Layer-wise phone probing of speech representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, RunError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the target tokens each contrast selects.
    Match(Common),
    /// Write pooled target vectors per model and layer.
    Pool(Common),
    /// Run the full probing experiment.
    Run(Common),
    /// Score the controls over the dimensionality grid and pick d*.
    SelectDim(Common),
    /// Render charts from a results CSV.
    Report {
        /// Results CSV; defaults to `<output>/results.csv` of `--config`.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus, layer stores and a config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    words_per_type: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Comma-separated layer ids.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
    layers: Vec<i32>,
    /// Layers carrying the stimulus signal (default: all).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    signal_layers: Option<Vec<i32>>,
    #[arg(long)]
    planted_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "labial,alveolar,velar")]
    places: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pseudoword_every: usize,
    #[arg(long, default_value = "synthetic")]
    model_id: String,
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn list_targets(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), RunError> {
    let mut corpus = load_alignments(&cfg.alignments)?;
    if !cfg.include_pseudowords {
        corpus = corpus.without_pseudowords();
    }
    let inventory = build_inventory(&corpus)?;
    let matched = match_targets(&corpus, &inventory, &cfg.contrast_specs()?)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
            let path = dir.join("targets.csv");
            let file = std::fs::File::create(&path).map_err(|e| RunError::Io { path, source: e })?;
            Box::new(std::io::BufWriter::new(file))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let fail = |e: csv::Error| RunError::Report(e.to_string());
    w.write_record([
        "contrast",
        "utterance_id",
        "position",
        "phone",
        "class",
        "start_s",
        "end_s",
    ])
    .map_err(fail)?;
    for m in &matched {
        for t in &m.targets {
            w.write_record([
                m.spec.id(),
                t.token.utterance_id.clone(),
                t.position.to_string(),
                t.token.label.clone(),
                t.label.as_str().to_string(),
                t.token.start_s.to_string(),
                t.token.end_s.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| RunError::Report(e.to_string()))
}

fn synth(a: &SynthArgs) -> Result<(), RunError> {
    let places = a
        .places
        .iter()
        .map(|p| p.parse::<Place>().map_err(|e| RunError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SynthSpec {
        model_id: a.model_id.clone(),
        words_per_type: a.words_per_type,
        dim: a.dim,
        separation: a.separation,
        layers: a.layers.clone(),
        signal_layers: a.signal_layers.clone(),
        planted_dim: a.planted_dim,
        places,
        pseudoword_every: a.pseudoword_every,
        ..SynthSpec::default()
    };
    let out = generate_synthetic(&spec, a.seed, &a.out)?;
    println!("{}", out.alignments.display());
    print_paths(&out.stores);
    println!("{}", out.config.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Match(c) => {
            let cfg = c.load()?;
            list_targets(&cfg, c.out.as_deref())
        }
        Command::Pool(c) => {
            let cfg = c.load()?;
            print_paths(&pool_layers(&cfg, &cfg.output)?);
            Ok(())
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let out = run_experiment(&cfg)?;
            print_paths(&write_outputs(&out, &cfg.output)?);
            Ok(())
        }
        Command::SelectDim(c) => {
            let cfg = c.load()?;
            let out = select_dimensionality(&cfg)?;
            for r in out.selection.iter().filter(|r| r.selected) {
                println!("{}\td*={}\tS={}", r.model_id, r.d, r.score);
            }
            print_paths(&write_outputs(&out, &cfg.output)?);
            Ok(())
        }
        Command::Report { results, config, out } => {
            let cfg_out = match &config {
                Some(p) => Some(ExperimentConfig::load(p)?.output),
                None => None,
            };
            let results = results
                .or_else(|| cfg_out.as_ref().map(|o| o.join("results.csv")))
                .ok_or_else(|| RunError::Config("report needs --results or --config".into()))?;
            let dir = out
                .or(cfg_out)
                .or_else(|| results.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            let table = ResultsTable::load(&results)?;
            print_paths(&emit_report(&table, &dir)?);
            Ok(())
        }
        Command::Synth(a) => synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !shown.contains(&text) {
                    eprintln!("  caused by: {text}");
                    shown = text;
                }
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
