use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tara_calib::calib::InitScheme;
use tara_calib::config::KvFile;
use tara_calib::diagnostics::{block_means, class_similarity, pca_project, spectrum_stats};
use tara_calib::report::{matrix_csv, write_text, Report};
use tara_calib::store::{self, generate_narrow_cone, LabeledDataset, SyntheticConfig};
use tara_calib::train::{ablation_report, evaluate, run_ablation, train, TrainConfig, Variant};
use tara_calib::{Checkpoint, DistanceKind, Matrix, Result};

#[derive(Parser)]
#[command(name = "tara", version, about = "Embedding calibration, hyperbolic metric learning and anisotropy diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic narrow-cone dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_emb: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out_model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a trained model.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Spectrum, token uniformity, PCA and class-similarity exports.
    Diagnose {
        #[arg(long)]
        emb: PathBuf,
        /// Run on calibrated outputs of this model instead of raw inputs.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pca_csv: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        heatmap_csv: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Retrain the full model with each loss term removed.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_orth: bool,
    #[arg(long)]
    no_ratio: bool,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    distance: Option<DistanceKind>,
    #[arg(long)]
    init: Option<InitScheme>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    eps_ball: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// EMB1 file of label-word vectors, one row per fine class.
    #[arg(long)]
    verbalizer: Option<PathBuf>,
    #[arg(long)]
    freeze_verbalizer: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(path) = &self.config {
            c.apply(&KvFile::read(path)?)?;
        }
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        over!(variant => variant, k => directions, lr => learning_rate, epochs => epochs,
              batch => batch_size, seed => seed, l2 => l2_weight, distance => distance,
              init => init, eps_ball => eps_ball, workers => workers);
        if self.k_shot.is_some() {
            c.k_shot = self.k_shot;
        }
        if self.no_orth {
            c.use_orth = false;
        }
        if self.no_ratio {
            c.use_ratio = false;
        }
        if let Some(path) = &self.verbalizer {
            c.verbalizer = Some(store::load_embeddings(path)?);
        }
        if self.freeze_verbalizer {
            c.freeze_verbalizer = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(report: &Report, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => report.write(p),
        None => {
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn config_meta(c: &TrainConfig) -> BTreeMap<String, String> {
    [
        ("variant", c.variant.to_string()),
        ("k", c.directions.to_string()),
        ("seed", c.seed.to_string()),
        ("epochs", c.epochs.to_string()),
        ("lr", c.learning_rate.to_string()),
        ("init", c.init.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out_emb, out_labels } => {
            let mut c = SyntheticConfig::default();
            if let Some(path) = config {
                c.apply(&KvFile::read(&path)?)?;
            }
            let ds = generate_narrow_cone(&c)?;
            store::save_dataset(&ds, &out_emb, &out_labels)?;
            eprintln!("wrote {} rows of dimension {}", ds.len(), ds.dim());
            Ok(())
        }
        Command::Train { data, train: args, out_model, report } => {
            let config = args.resolve()?;
            let ds = store::load_dataset(&data.emb, &data.labels)?;
            let model = train(&config, &ds)?;
            if let Some(path) = out_model {
                Checkpoint {
                    head: model.head,
                    anchors: model.anchors,
                    distance: config.distance,
                    meta: config_meta(&config),
                }
                .save(&path)?;
            }
            let mut r = Report::new();
            r.text("variant", config.variant.to_string());
            r.extend(&model.report.to_report());
            emit(&r, report.as_deref())
        }
        Command::Eval { data, model, report } => {
            let ckpt = Checkpoint::load(&model)?;
            let ds = store::load_dataset(&data.emb, &data.labels)?;
            let eval = evaluate(&ckpt.head, &ds)?;
            let mut r = Report::new();
            r.num("weighted_f1", eval.weighted_f1)
                .num("accuracy", eval.accuracy)
                .int("n", ds.len());
            emit(&r, report.as_deref())
        }
        Command::Diagnose { emb, model, report, pca_csv, heatmap_csv, labels } => {
            let (raw, ds): (Matrix, Option<LabeledDataset>) = match &labels {
                Some(l) => {
                    let ds = store::load_dataset(&emb, l)?;
                    (ds.embeddings().clone(), Some(ds))
                }
                None => (store::load_embeddings(&emb)?, None),
            };
            let reps = match &model {
                Some(path) => Checkpoint::load(path)?.head.represent_all(&raw)?,
                None => raw,
            };
            let mut r = Report::new();
            r.text("source", if model.is_some() { "calibrated" } else { "raw" })
                .int("n", reps.rows())
                .int("d", reps.cols());
            r.extend(&spectrum_stats(&reps)?.to_report());
            if let Some(path) = pca_csv {
                let proj = pca_project(&reps, 2.min(reps.rows()).min(reps.cols()))?;
                let header: Vec<String> = (1..=proj.cols()).map(|i| format!("pc{i}")).collect();
                write_text(&path, &matrix_csv(&header, &proj))?;
            }
            if let (Some(path), Some(ds)) = (heatmap_csv, &ds) {
                let sim = class_similarity(ds, &reps)?;
                let (within, cross) = block_means(&sim, ds.fine_to_coarse());
                r.num("within_block_similarity", within)
                    .num("cross_block_similarity", cross)
                    .num("block_gap", within - cross);
                let header: Vec<String> = (0..sim.cols()).map(|f| format!("fine{f}")).collect();
                write_text(&path, &matrix_csv(&header, &sim))?;
            }
            emit(&r, report.as_deref())
        }
        Command::Ablate { data, train: args, report } => {
            let mut config = args.resolve()?;
            config.variant = Variant::Full;
            let ds = store::load_dataset(&data.emb, &data.labels)?;
            let rows = run_ablation(&config, &ds)?;
            emit(&ablation_report(&rows), report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
