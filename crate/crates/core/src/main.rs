use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genpriv::harness::{HarnessError, Pipeline, ReportFormat, ResultsTable, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "genpriv", version, about = "Text classifiers distilled from teachers that see generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and preprocess the dataset into a manifest.
    Ingest(Common),
    /// Generate (or reuse cached) images for every sample.
    Generate(Common),
    /// Train the multimodal teacher for every seed.
    TrainTeacher(Common),
    /// Train the text-only baseline (and the image-only reference) for every seed.
    TrainBaseline(Common),
    /// Distill the text-only student for every seed.
    Distill(Common),
    /// Evaluate all models on the test split and write results.json.
    Evaluate(Common),
    /// Run the four loss-term variants and write the ablation table.
    Ablate(Common),
    /// Render results.json / ablation.json as CSV and Markdown.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, num_args = 1.., default_values = ["csv", "markdown"])]
        format: Vec<ReportFormat>,
    },
    /// The whole pipeline: generate, train, distill, evaluate, report.
    Run(Common),
}

fn open(common: &Common) -> Result<Pipeline, HarnessError> {
    let cfg = RunConfig::load(&common.config)?;
    let out = match (&common.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => return Err(HarnessError::Config("no --out given and config has no output_dir".into())),
    };
    Pipeline::open(cfg, &out)
}

fn each_seed<T>(p: &Pipeline, f: impl Fn(u64) -> Result<T, HarnessError>) -> Result<(), HarnessError> {
    for &seed in &p.config().seeds {
        f(seed)?;
    }
    Ok(())
}

fn report(p: &Pipeline, formats: &[ReportFormat]) -> Result<(), HarnessError> {
    let mut any = false;
    for stem in ["results", "ablation"] {
        let json = p.out_dir().join(format!("{stem}.json"));
        if !json.exists() {
            continue;
        }
        let table = ResultsTable::read_json(&json).map_err(HarnessError::stage(Stage::Report))?;
        for path in p.report(&table, stem, formats)? {
            println!("{}", path.display());
        }
        any = true;
    }
    if any {
        Ok(())
    } else {
        Err(HarnessError::EmptyResults)
    }
}

fn print_table(table: &ResultsTable) {
    print!("{}", genpriv::harness::report::render_markdown(table));
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Ingest(c) => {
            let ds = open(&c)?.ingest()?;
            println!("{}: {} train, {} val, {} test", ds.name, ds.train.len(), ds.val.len(), ds.test.len());
        }
        Command::Generate(c) => {
            let index = open(&c)?.generate()?;
            println!("{} images indexed", index.len());
        }
        Command::TrainTeacher(c) => {
            let p = open(&c)?;
            each_seed(&p, |s| p.train_teacher(s))?;
        }
        Command::TrainBaseline(c) => {
            let p = open(&c)?;
            each_seed(&p, |s| p.train_baseline(s))?;
            if p.config().image_only {
                each_seed(&p, |s| p.train_image_only(s))?;
            }
        }
        Command::Distill(c) => {
            let p = open(&c)?;
            let dcfg = p.config().distill.clone();
            each_seed(&p, |s| p.distill(s, genpriv::harness::pipeline::STUDENT, &dcfg))?;
        }
        Command::Evaluate(c) => print_table(&open(&c)?.evaluate()?),
        Command::Ablate(c) => {
            let p = open(&c)?;
            let table = p.ablate()?;
            p.report(&table, "ablation", &[ReportFormat::Csv, ReportFormat::Markdown])?;
            print_table(&table);
        }
        Command::Report { common, format } => report(&open(&common)?, &format)?,
        Command::Run(c) => {
            let p = open(&c)?;
            let table = p.evaluate()?;
            p.report(&table, "results", &[ReportFormat::Csv, ReportFormat::Markdown])?;
            print_table(&table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
