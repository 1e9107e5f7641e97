//! `claimboost` command line: simulate, train, evaluate, compare, and
//! transform aggregate-claim datasets.
//!
//! Every command is a pure function of its input files and the seed; the
//! same invocation always produces byte-identical outputs.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use claimboost::compositional;
use claimboost::config::{SchemaConfig, SimSpec};
use claimboost::csvio;
use claimboost::cv;
use claimboost::metrics::{self, EvaluationSummary, MetricValue, VuongCell};
use claimboost::model_io;
use claimboost::sim;

#[derive(Parser)]
#[command(
    name = "claimboost",
    about = "Boosted Tweedie and zero-inflated Tweedie models for aggregate insurance claims",
    version
)]
struct Cli {
    /// Worker threads for cross-validation and split search (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic claims dataset and its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Grid-search, cross-validate, and train a model on a CSV dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset (MAD, deviance, Gini).
    Evaluate(EvaluateArgs),
    /// Compare trained models pairwise (Vuong, ordered-Lorenz Gini, min-max).
    Compare(CompareArgs),
    /// Apply declared composition treatments to a dataset.
    Transform(TransformArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path; the truth sidecar lands next to it as `<out>.truth.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Schema/training config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output model path; CV table and log land at `<out>.cv.csv` / `<out>.log.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the held-out split as `<out>.train.csv` / `<out>.test.csv`.
    #[arg(long)]
    emit_split: bool,
    /// Override the CV selection metric (`deviance` or `mad`).
    #[arg(long)]
    select_by: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema config (for column roles).
    #[arg(long)]
    config: PathBuf,
    /// Output report prefix: writes `<out>.txt` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-row predictions to `<out>.predictions.csv`.
    #[arg(long)]
    predictions: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Trained model files (at least two).
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    /// Evaluation data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema config (for column roles).
    #[arg(long)]
    config: PathBuf,
    /// Output report prefix: writes `<out>.txt` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    /// Schema config declaring the composition blocks.
    #[arg(long)]
    config: PathBuf,
    /// Input data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Compare(args) => run_compare(args),
        Command::Transform(args) => run_transform(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Box<dyn Error>> {
    fs::write(path, contents).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_simulate(args: SimulateArgs) -> Result<(), Box<dyn Error>> {
    let mut spec = SimSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = sim::generate(&spec)?;
    let csv = match &out.dataset {
        Some(dataset) => csvio::dataset_to_csv(dataset, &spec.exposure_name, &spec.target_name),
        None => {
            // n = 0: header only
            let mut header = spec.feature_names();
            header.push(spec.exposure_name.clone());
            header.push(spec.target_name.clone());
            format!("{}\n", header.join(","))
        }
    };
    write(&args.out, &csv)?;
    write(
        &with_suffix(&args.out, ".truth.csv"),
        &sim::truth_to_csv(&out.truth),
    )?;
    println!(
        "simulated {} rows -> {} (+ truth sidecar)",
        out.truth.len(),
        args.out.display()
    );
    Ok(())
}

fn training_log_csv(log: &claimboost::train::TrainingLog) -> String {
    let mut out = String::from(
        "iteration,loss_before,loss_after_mean,loss_after_prob,phi,gamma,mean_deviance\n",
    );
    for r in &log.iterations {
        out.push_str(&format!(
            "{},{:?},{:?},{},{:?},{},{:?}\n",
            r.iteration,
            r.loss_before,
            r.loss_after_mean,
            r.loss_after_prob
                .map_or(String::new(), |v| format!("{v:?}")),
            r.phi,
            r.gamma_infl.map_or(String::new(), |v| format!("{v:?}")),
            r.mean_deviance
        ));
    }
    out
}

fn run_train(args: TrainArgs) -> Result<(), Box<dyn Error>> {
    let mut config = SchemaConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.tuning.seed = seed;
    }
    if let Some(select_by) = &args.select_by {
        config.tuning.select_by = match select_by.as_str() {
            "deviance" => claimboost::config::SelectBy::Deviance,
            "mad" => claimboost::config::SelectBy::Mad,
            other => return Err(format!("unknown selection metric {other:?}").into()),
        };
    }
    let dataset = csvio::read_dataset(&args.data, &config.roles())?;
    let outcome = cv::run_protocol(&dataset, &config)?;
    model_io::save_model(&outcome.model, &args.out)?;
    write(&with_suffix(&args.out, ".cv.csv"), &outcome.cv_table.to_csv())?;
    write(
        &with_suffix(&args.out, ".log.csv"),
        &training_log_csv(&outcome.log),
    )?;
    if args.emit_split {
        let train = dataset.select_rows(&outcome.train_rows);
        let test = dataset.select_rows(&outcome.test_rows);
        write(
            &with_suffix(&args.out, ".train.csv"),
            &csvio::dataset_to_csv(&train, &config.data.exposure, &config.data.target),
        )?;
        write(
            &with_suffix(&args.out, ".test.csv"),
            &csvio::dataset_to_csv(&test, &config.data.exposure, &config.data.target),
        )?;
    }
    let best = &outcome.cv_table.cells[outcome.cv_table.winner];
    println!(
        "trained {} on {} rows; winner: learning_rate={} l2_lambda={} (mean CV deviance {:.6})",
        config.model.family,
        outcome.train_rows.len(),
        best.learning_rate,
        best.l2_lambda,
        best.mean_deviance
    );
    let (importance, has_splits) = outcome.model.feature_importance();
    if has_splits {
        println!("feature importance (mean ensemble, sums to 100):");
        let mut sorted = importance;
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite importances"));
        for (name, value) in sorted.iter().filter(|(_, v)| *v > 0.0) {
            println!("  {name}: {value:.2}");
        }
    } else {
        println!("warning: ensemble contains no splits; importances are all zero");
    }
    Ok(())
}

fn evaluate_model(
    model: &claimboost::BoostedModel,
    dataset: &claimboost::Dataset,
) -> Result<(EvaluationSummary, claimboost::train::Prediction), Box<dyn Error>> {
    let pred = model.predict(dataset)?;
    let y = dataset.target();
    let mad = metrics::mad(y, &pred.expected)?;
    let mean_deviance: MetricValue =
        metrics::mean_deviance(y, &pred.mu, &pred.q, model.phi, model.p)?.into();
    let gini_a = match metrics::gini_a(y, &pred.expected) {
        Ok(v) => MetricValue::Value(v),
        Err(metrics::MetricError::Undefined(reason)) => MetricValue::Undefined(reason.to_string()),
        Err(e) => return Err(e.into()),
    };
    Ok((
        EvaluationSummary {
            n_rows: dataset.n_rows(),
            mad,
            mean_deviance,
            gini_a,
        },
        pred,
    ))
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Box<dyn Error>> {
    let config = SchemaConfig::load(&args.config)?;
    let dataset = csvio::read_dataset(&args.data, &config.roles())?;
    let model = model_io::load_model(&args.model)?;
    let (summary, pred) = evaluate_model(&model, &dataset)?;
    let label = args.model.display().to_string();
    write(&with_suffix(&args.out, ".txt"), &summary.to_text(&label))?;
    write(&with_suffix(&args.out, ".csv"), &summary.to_csv())?;
    if args.predictions {
        let mut rows = String::from("mu,q,expected\n");
        for i in 0..dataset.n_rows() {
            rows.push_str(&format!(
                "{:?},{:?},{:?}\n",
                pred.mu[i], pred.q[i], pred.expected[i]
            ));
        }
        write(&with_suffix(&args.out, ".predictions.csv"), &rows)?;
    }
    print!("{}", summary.to_text(&label));
    Ok(())
}

fn vuong_field(cell: &Option<VuongCell>) -> (String, String) {
    match cell {
        None => ("".into(), "".into()),
        Some(VuongCell::Undefined) => ("undefined".into(), "undefined".into()),
        Some(VuongCell::Stat { statistic, p_value }) => {
            (format!("{statistic:?}"), format!("{p_value:?}"))
        }
    }
}

fn run_compare(args: CompareArgs) -> Result<(), Box<dyn Error>> {
    if args.model.len() < 2 {
        return Err("compare needs at least two --model files".into());
    }
    let config = SchemaConfig::load(&args.config)?;
    let dataset = csvio::read_dataset(&args.data, &config.roles())?;
    let y = dataset.target();
    let mut scored = Vec::new();
    for path in &args.model {
        let model = model_io::load_model(path)?;
        let pred = model.predict(&dataset)?;
        let log_likelihood = model.log_likelihoods(&dataset)?;
        scored.push(metrics::ModelScores {
            label: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            log_likelihood,
            expected: pred.expected,
        });
    }
    let report = metrics::compare_models(y, &scored)?;

    let mut text = String::from("pairwise Vuong statistics (row = first model):\n");
    let labels = &report.labels;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if i == j {
                continue;
            }
            let (v, p) = vuong_field(&report.vuong[i][j]);
            text.push_str(&format!("  {li} vs {lj}: V={v} p={p}\n"));
        }
    }
    text.push_str("pairwise Gini (row = base model):\n");
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if i == j {
                continue;
            }
            let g = report.gini_b[i][j].expect("off-diagonal filled");
            text.push_str(&format!("  base {li} vs {lj}: {g:.6}\n"));
        }
    }
    text.push_str(&format!("min-max selection: {}\n", report.minmax_choice));

    let mut csv = String::from("kind,first,second,value\n");
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if i == j {
                continue;
            }
            let (v, p) = vuong_field(&report.vuong[i][j]);
            csv.push_str(&format!("vuong_v,{li},{lj},{v}\n"));
            csv.push_str(&format!("vuong_p,{li},{lj},{p}\n"));
            let g = report.gini_b[i][j].expect("off-diagonal filled");
            csv.push_str(&format!("gini_b,{li},{lj},{g:?}\n"));
        }
    }
    csv.push_str(&format!("minmax_choice,{},,\n", report.minmax_choice));

    write(&with_suffix(&args.out, ".txt"), &text)?;
    write(&with_suffix(&args.out, ".csv"), &csv)?;
    print!("{text}");
    Ok(())
}

fn run_transform(args: TransformArgs) -> Result<(), Box<dyn Error>> {
    let config = SchemaConfig::load(&args.config)?;
    let dataset = csvio::read_dataset(&args.data, &config.roles())?;
    let blocks = config.composition_blocks()?;
    let fitted = compositional::fit_transforms(&dataset, &blocks)?;
    let transformed = compositional::apply_transforms(&dataset, &fitted)?;
    write(
        &args.out,
        &csvio::dataset_to_csv(&transformed, &config.data.exposure, &config.data.target),
    )?;
    println!(
        "transformed {} rows, {} feature columns -> {}",
        transformed.n_rows(),
        transformed.columns().len(),
        args.out.display()
    );
    Ok(())
}
