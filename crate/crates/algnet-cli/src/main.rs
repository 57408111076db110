//! Command-line surface: generate synthetic records, train, evaluate a
//! checkpoint, run the variant ablation grid, and verify gradients.
//!
//! Configuration precedence is defaults < `--config` file < explicit flags.
//! Every run artifact (records, checkpoints, logs, metric reports) is a
//! plain file, so runs can be diffed, archived, and reproduced bit for bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use algnet::checkpoint::{load_model, save_model};
use algnet::config::{TrainConfig, Variant};
use algnet::data::{load_ddi_edges, load_records, ddi_from_edges, AdjacencyMatrix, Dataset};
use algnet::metrics::metrics_report;
use algnet::model::{PreparedGraphs, VocabSizes};
use algnet::synth::{synth_generate, SynthConfig};
use algnet::train::{ablate, evaluate_records, toy_gradient_check, AblationRow, Trainer};

// ── Argument grammar ────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "algnet",
    version,
    about = "Medication recommendation from longitudinal EHR records",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EHR corpus with planted prescription rules
    SynthData(SynthDataArgs),
    /// Train a model and write checkpoint, logs, and test metrics
    Train(TrainArgs),
    /// Score a saved checkpoint on one split of a dataset
    Evaluate(EvaluateArgs),
    /// Train every requested variant over several seeds and tabulate metrics
    Ablate(AblateArgs),
    /// Compare analytic gradients against finite differences on a toy model
    Gradcheck(GradcheckArgs),
}

/// Flags that mirror the training configuration. Every field is optional;
/// unset flags keep the value from the config file or the defaults.
#[derive(Args, Clone)]
struct ConfigFlags {
    /// JSON file with training-configuration fields
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// model variant, e.g. ALGNET, RNN_LGNET, A_GCN
    #[arg(long)]
    variant: Option<Variant>,
    /// embedding width (also the per-head attention width)
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// layer weight of the light-graph-convolution combination
    #[arg(long)]
    alpha: Option<f64>,
    /// interaction-graph weight in the medication memory
    #[arg(long)]
    beta: Option<f64>,
    /// sequence-branch weight in the patient representation
    #[arg(long)]
    gamma: Option<f64>,
    /// cross-entropy loss weight; the margin weight becomes 1 - theta0
    #[arg(long)]
    theta0: Option<f64>,
    /// weight of the interaction penalty term (0 = monitor only)
    #[arg(long)]
    w_ddi: Option<f64>,
    /// decision threshold for counting a medication as predicted
    #[arg(long)]
    threshold: Option<f64>,
    /// also mix the unpropagated base embedding into the graph combination
    #[arg(long)]
    include_layer0: Option<bool>,
    /// take an optimizer step after every visit instead of every patient
    #[arg(long)]
    per_visit_step: Option<bool>,
}

impl ConfigFlags {
    /// Defaults, overridden by the config file, overridden by explicit flags.
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)
                .with_context(|| format!("reading config file {}", path.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.theta0 {
            // the two loss weights are constrained to sum to one
            cfg.theta0 = v;
            cfg.theta1 = 1.0 - v;
        }
        if let Some(v) = self.w_ddi {
            cfg.w_ddi = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.include_layer0 {
            cfg.include_layer0 = v;
        }
        if let Some(v) = self.per_visit_step {
            cfg.per_visit_step = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthDataArgs {
    /// directory that receives records.jsonl, ddi.txt, vocab.json, rules.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    patients: usize,
    #[arg(long, default_value_t = 24)]
    diag_count: usize,
    #[arg(long, default_value_t = 10)]
    proc_count: usize,
    #[arg(long, default_value_t = 20)]
    med_count: usize,
    #[arg(long, default_value_t = 1)]
    min_visits: usize,
    #[arg(long, default_value_t = 4)]
    max_visits: usize,
    /// per-visit corruption probability (spurious add / random drop)
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// persistence probability of a condition across visits (0 = off)
    #[arg(long, default_value_t = 0.0)]
    chronic: f64,
    #[arg(long, default_value_t = 20)]
    ddi_edges: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// patient records, one JSON object per line
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// interaction edge list ("CODE CODE" per line); omitted = no edges
    #[arg(long, value_name = "FILE")]
    ddi_file: Option<PathBuf>,
    /// directory that receives checkpoint.bin, runlog.json, epochs.csv,
    /// metrics.json, vocab.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// the dataset the checkpoint was trained on
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    ddi_file: Option<PathBuf>,
    /// which split to score: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    /// write the JSON report here as well as to stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    ddi_file: Option<PathBuf>,
    /// directory that receives ablation.md, ablation.csv, ablation.json
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// comma-separated seeds, one full run per seed per variant
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// comma-separated variant names; default runs the whole grid
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// maximum tolerated relative error per parameter group
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

// ── Subcommands ─────────────────────────────────────────────────────────────

fn cmd_synth_data(args: &SynthDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        patients: args.patients,
        diag_count: args.diag_count,
        proc_count: args.proc_count,
        med_count: args.med_count,
        min_visits: args.min_visits,
        max_visits: args.max_visits,
        diag_per_visit: (1, 3),
        meds_per_diag: (1, 3),
        noise: args.noise,
        chronic: args.chronic,
        ddi_edges: args.ddi_edges,
    };
    let out = synth_generate(&cfg, args.seed)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let records_path = args.out.join("records.jsonl");
    algnet::data::save_records(&records_path, &out.records, &out.vocab)?;
    fs::write(args.out.join("ddi.txt"), out.ddi_file_contents())?;
    out.vocab.save(&args.out.join("vocab.json"))?;
    // the planted diagnosis → medication rules, for inspection and oracles
    fs::write(
        args.out.join("rules.json"),
        serde_json::to_string_pretty(&out.planted)?,
    )?;

    let visits: usize = out.records.iter().map(|r| r.visits.len()).sum();
    println!(
        "wrote {} patients / {} visits to {}",
        out.records.len(),
        visits,
        args.out.display()
    );
    Ok(())
}

fn load_ddi_adjacency(
    ddi_file: Option<&Path>,
    vocab: &algnet::data::CodeVocab,
) -> Result<AdjacencyMatrix> {
    match ddi_file {
        Some(path) => {
            let (adj, skipped) = load_ddi_edges(path, vocab)
                .with_context(|| format!("reading {}", path.display()))?;
            if skipped > 0 {
                eprintln!("note: skipped {skipped} interaction lines with unknown codes");
            }
            Ok(adj)
        }
        None => Ok(ddi_from_edges(vocab.med.len(), &[])),
    }
}

fn load_dataset(
    data: &Path,
    ddi_file: Option<&Path>,
    seed: u64,
    split: [f64; 3],
) -> Result<Dataset> {
    let (vocab, records) =
        load_records(data).with_context(|| format!("reading {}", data.display()))?;
    let ddi_adj = load_ddi_adjacency(ddi_file, &vocab)?;
    Ok(Dataset::build(vocab, records, ddi_adj, seed, split)?)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.flags.resolve()?;
    let data = load_dataset(
        &args.data,
        args.ddi_file.as_deref(),
        config.seed,
        config.split,
    )?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    // keep what the trainer does not hand back: the held-out test split
    let vocab = data.vocab.clone();
    let test_records = data.test.clone();
    let ddi_adj = data.ddi_adj.clone();

    let epochs = config.epochs;
    let mut trainer = Trainer::new(config, data)?;
    for _ in 0..epochs {
        let e = trainer.run_epoch()?;
        println!(
            "epoch {:>3}/{epochs}  loss {:>8.4}  val jaccard {:.4}",
            e.epoch, e.loss_total, e.val_jaccard
        );
    }

    let best = trainer.best_model();
    let log = trainer.log();
    if let Some(epoch) = log.best_epoch {
        println!(
            "best epoch {epoch} with validation jaccard {:.4}",
            log.best_val_jaccard
        );
    }

    let evals = evaluate_records(&best, trainer.graphs(), &test_records);
    let report = metrics_report(
        &evals,
        &ddi_adj,
        best.config.bootstrap_rounds,
        best.config.seed,
    );

    save_model(args.out.join("checkpoint.bin"), &best)?;
    fs::write(args.out.join("runlog.json"), log.to_json())?;
    fs::write(args.out.join("epochs.csv"), log.to_csv())?;
    fs::write(args.out.join("metrics.json"), report.to_json())?;
    vocab.save(&args.out.join("vocab.json"))?;

    println!(
        "test jaccard {:.4}  f1 {:.4}  pr-auc {:.4}  ddi rate {:.4}  avg drugs {:.2}",
        report.jaccard.value,
        report.f1.value,
        report.pr_auc.value,
        report.ddi_rate.value,
        report.avg_drugs.value
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let data = load_dataset(
        &args.data,
        args.ddi_file.as_deref(),
        model.config.seed,
        model.config.split,
    )?;
    if VocabSizes::of(&data.vocab) != model.sizes {
        bail!(
            "vocabulary mismatch: checkpoint was trained on {:?}, data file has {:?}",
            model.sizes,
            VocabSizes::of(&data.vocab)
        );
    }
    let records = data
        .split_named(&args.split)
        .ok_or_else(|| anyhow::anyhow!("unknown split {:?}; use train, val, or test", args.split))?;

    let graphs = PreparedGraphs::new(&data.ehr_adj, &data.ddi_adj);
    let evals = evaluate_records(&model, &graphs, records);
    let report = metrics_report(
        &evals,
        &data.ddi_adj,
        model.config.bootstrap_rounds,
        model.config.seed,
    );
    let json = report.to_json();
    if let Some(path) = &args.out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = args.flags.resolve()?;
    let (vocab, records) =
        load_records(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let ddi_adj = load_ddi_adjacency(args.ddi_file.as_deref(), &vocab)?;
    let variants = args
        .variants
        .clone()
        .unwrap_or_else(|| Variant::all().to_vec());

    let rows = ablate(&base, &vocab, &records, &ddi_adj, &args.seeds, &variants)?;
    let markdown = markdown_table(&rows);
    print!("{markdown}");

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("ablation.md"), &markdown)?;
        fs::write(dir.join("ablation.csv"), csv_table(&rows))?;
        fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
        println!("tables in {}", dir.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let report = toy_gradient_check(args.seed, args.eps, args.tol);
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

// ── Table rendering ─────────────────────────────────────────────────────────

fn fmt_cell(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

fn markdown_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| Variant | DDI Rate | Jaccard | F1 | PR-AUC | Avg. # of Drugs |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.variant,
            fmt_cell(r.ddi_rate.mean, r.ddi_rate.std),
            fmt_cell(r.jaccard.mean, r.jaccard.std),
            fmt_cell(r.f1.mean, r.f1.std),
            fmt_cell(r.pr_auc.mean, r.pr_auc.std),
            fmt_cell(r.avg_drugs.mean, r.avg_drugs.std),
        ));
    }
    s
}

fn csv_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant,ddi_rate_mean,ddi_rate_std,jaccard_mean,jaccard_std,\
         f1_mean,f1_std,pr_auc_mean,pr_auc_std,avg_drugs_mean,avg_drugs_std\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.ddi_rate.mean,
            r.ddi_rate.std,
            r.jaccard.mean,
            r.jaccard.std,
            r.f1.mean,
            r.f1.std,
            r.pr_auc.mean,
            r.pr_auc.std,
            r.avg_drugs.mean,
            r.avg_drugs.std,
        ));
    }
    s
}

// ── Entry point ─────────────────────────────────────────────────────────────

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::SynthData(args) => cmd_synth_data(args).map(|()| ExitCode::SUCCESS),
        Command::Train(args) => cmd_train(args).map(|()| ExitCode::SUCCESS),
        Command::Evaluate(args) => cmd_evaluate(args).map(|()| ExitCode::SUCCESS),
        Command::Ablate(args) => cmd_ablate(args).map(|()| ExitCode::SUCCESS),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
