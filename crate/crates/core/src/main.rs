use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepiris::container::{self, NamedTensor};
use deepiris::dataset::index_dataset;
use deepiris::pipeline::{
    self, extract_features, make_fixtures, FeatureKind, FitScope, PipelineError, RunConfig,
    TrainedModels, FEATURE_MAGIC,
};
use deepiris::svm::Strategy;

#[derive(Parser)]
#[command(
    name = "deepiris",
    version,
    about = "Iris recognition experiments with CNN or scattering features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List subjects and image counts of the dataset.
    Index(Overrides),
    /// Extract features for every image and write them to the output directory.
    Extract(Overrides),
    /// Fit PCA and the SVM on the training split; save the models.
    Train(Overrides),
    /// Score saved models on the test split.
    Evaluate(Overrides),
    /// Train and evaluate in one go.
    Run(Overrides),
    /// Accuracy against PCA dimension.
    SweepPca {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', required = true)]
        k_values: Vec<usize>,
    },
    /// Accuracy against the tapped network layer.
    SweepLayers {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', required = true)]
        taps: Vec<String>,
    },
    /// Accuracy against the number of training images per subject.
    SweepTrainCount {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
    },
    /// Write the synthetic texture dataset, a tiny network and sample configs.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Ova,
    Ovo,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Cnn,
    Scattering,
}

#[derive(Args)]
struct Overrides {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    pca_k: Option<usize>,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    tap: Option<String>,
    #[arg(long)]
    train_per_subject: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit PCA on training and test features together.
    #[arg(long)]
    pca_fit_on_all: bool,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    features: Option<FeaturesArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(k) = self.pca_k {
            cfg.pca.k = k;
        }
        if let Some(c) = self.svm_c {
            cfg.svm.c = c;
        }
        if let Some(t) = &self.tap {
            cfg.cnn.tap.clone_from(t);
        }
        if let Some(n) = self.train_per_subject {
            cfg.split.train_per_subject = n;
        }
        if let Some(s) = self.seed {
            cfg.split.seed = s;
        }
        if self.pca_fit_on_all {
            cfg.pca.fit_scope = FitScope::All;
        }
        if let Some(s) = self.strategy {
            cfg.svm.strategy = match s {
                StrategyArg::Ova => Strategy::OneVsAll,
                StrategyArg::Ovo => Strategy::OneVsOne,
            };
        }
        if let Some(f) = self.features {
            cfg.features = match f {
                FeaturesArg::Cnn => FeatureKind::Cnn,
                FeaturesArg::Scattering => FeatureKind::Scattering,
            };
        }
        if let Some(o) = &self.out {
            cfg.output_dir.clone_from(o);
        }
        Ok(cfg)
    }
}

fn print_report(report: &pipeline::Report) {
    print!("{}", report.to_csv());
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Index(o) => {
            let cfg = o.resolve()?;
            let index = index_dataset(&cfg.dataset_root)?;
            for (subject, images) in index.by_subject() {
                println!("{subject}\t{}", images.len());
            }
            println!(
                "{} subjects, {} images",
                index.subjects().len(),
                index.len()
            );
        }
        Command::Extract(o) => {
            let cfg = o.resolve()?;
            cfg.validate()?;
            let index = index_dataset(&cfg.dataset_root)?;
            let rows = extract_features(&cfg, &index)?;
            let d = rows.first().map_or(0, |r| r.dim());
            let values: Vec<f64> = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
            std::fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::Io {
                path: cfg.output_dir.clone(),
                source,
            })?;
            let path = cfg.output_dir.join("features.feat");
            let bytes = container::encode(
                FEATURE_MAGIC,
                &[NamedTensor::new("features", vec![rows.len(), d], values)],
            )
            .map_err(|e| PipelineError::Cache(e.to_string()))?;
            std::fs::write(&path, bytes).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            let listing = cfg.output_dir.join("features_index.json");
            let text = serde_json::to_string_pretty(index.entries()).expect("entries serialize");
            std::fs::write(&listing, text).map_err(|source| PipelineError::Io {
                path: listing.clone(),
                source,
            })?;
            println!(
                "{} vectors of dimension {d} -> {}",
                rows.len(),
                path.display()
            );
        }
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let models = pipeline::train(&cfg)?;
            println!(
                "trained {} machines on {} PCA dimensions -> {}",
                models.svm.machines.len(),
                models.pca.output_dim(),
                cfg.output_dir.display()
            );
        }
        Command::Evaluate(o) => {
            let cfg = o.resolve()?;
            let models = TrainedModels::load(&cfg.output_dir)?;
            print_report(&pipeline::evaluate(&cfg, &models)?);
        }
        Command::Run(o) => print_report(&pipeline::run_experiment(&o.resolve()?)?),
        Command::SweepPca {
            overrides,
            k_values,
        } => print_report(&pipeline::sweep_pca(&overrides.resolve()?, &k_values)?),
        Command::SweepLayers { overrides, taps } => {
            let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
            print_report(&pipeline::sweep_layers(&overrides.resolve()?, &taps)?)
        }
        Command::SweepTrainCount { overrides, counts } => print_report(
            &pipeline::sweep_train_count(&overrides.resolve()?, &counts)?,
        ),
        Command::MakeFixtures { out, seed } => {
            let set = make_fixtures(&out, seed)?;
            println!("dataset: {}", set.dataset.display());
            println!(
                "configs: {} {}",
                set.scattering_config.display(),
                set.cnn_config.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
