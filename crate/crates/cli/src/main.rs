use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use phaselab::data::{
    generate_benchmark, read_dataset, read_ids, select, write_dataset, write_ids, BenchmarkConfig, LengthRange,
    SequenceRecord, SplitPlan, DEFAULT_REPEATS, DEFAULT_SIZES,
};
use phaselab::evalreport::{format_table, read_summary_tsv, render_curves, write_metrics_tsv, METRIC_NAMES};
use phaselab::numkernel::RngStream;
use phaselab::pipeline::{
    annotate, assemble_training_union, run_experiment_grid, train_temporal, train_variant, ExperimentPlan,
    Hyperparameters, ModelBundle, Variant,
};

#[derive(Parser)]
#[command(name = "phaselab", version, about = "Temporal phase recognition experiments on synthetic workflow data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset
    GenData(GenData),
    /// Split a dataset into test / validation / pool and sample mini-training sets
    Split(SplitCmd),
    /// Train one model variant
    Train(Train),
    /// Label records with a teacher's predictions
    Annotate(AnnotateCmd),
    /// Teacher on E, annotate F, student on E and F, for one (size, repeat)
    Distill(Distill),
    /// Run the full size x repeat experiment grid
    Grid(Grid),
    /// Evaluate a checkpoint on labeled records
    Evaluate(Evaluate),
    /// Render tables and curves from a grid summary
    Report(Report),
}

#[derive(Args)]
struct GenData {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences
    #[arg(long, default_value_t = 120)]
    n: usize,
    #[arg(long, default_value_t = LengthRange::default().min)]
    len_min: usize,
    #[arg(long, default_value_t = LengthRange::default().max)]
    len_max: usize,
    #[arg(long, default_value_t = BenchmarkConfig::default().feature_dim)]
    feature_dim: usize,
    /// Feature noise scale
    #[arg(long, default_value_t = BenchmarkConfig::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for split.tsv and id lists
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    test: usize,
    #[arg(long, default_value_t = 10)]
    val: usize,
    /// Mini-training-set sizes
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct HyperArgs {
    /// Built-in schedule: table1 or desk
    #[arg(long, default_value = "table1")]
    preset: String,
    /// Key-value file applied on top of the preset
    #[arg(long)]
    config: Option<PathBuf>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<Hyperparameters> {
        let mut hp = Hyperparameters::preset(&self.preset)?;
        if let Some(path) = &self.config {
            hp.apply_file(path)?;
        }
        Ok(hp)
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    dataset: PathBuf,
    /// m1, m2, m3, m4, m5 or student
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    train_ids_file: PathBuf,
    #[arg(long)]
    val_ids_file: Option<PathBuf>,
    /// Output directory for model.ckpt
    #[arg(long)]
    out: PathBuf,
    /// Overrides the epochs of the variant's stages
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the learning rate of the variant's stages
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct AnnotateCmd {
    /// Teacher checkpoint
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Records to label; all records when omitted
    #[arg(long)]
    ids_file: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Distill {
    #[arg(long)]
    dataset: PathBuf,
    /// split.tsv written by `split`
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    repeat: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct Grid {
    #[arg(long)]
    dataset: PathBuf,
    /// split.tsv written by `split`; built from --seed when omitted
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also train on the whole ground-truth pool
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct Evaluate {
    /// Model checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Records to evaluate; all records when omitted
    #[arg(long)]
    ids_file: Option<PathBuf>,
    /// Output directory for metrics.tsv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    /// summary.tsv written by `grid`
    #[arg(long)]
    summary: PathBuf,
    /// Output directory for curves.svg and tables.md
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: phaselab::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Annotate(a) => annotate_cmd(a),
        Command::Distill(a) => distill(a),
        Command::Grid(a) => grid(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn load(dataset: &Path) -> Result<Vec<SequenceRecord>> {
    read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))
}

/// Number of classes implied by the labels present in the dataset.
fn n_classes(records: &[SequenceRecord]) -> Result<usize> {
    let max = records.iter().filter_map(|r| r.tags()).flatten().max().copied();
    match max {
        Some(m) if m >= 1 => Ok(m + 1),
        _ => bail!("dataset has fewer than 2 labeled classes"),
    }
}

fn ids_or_all(path: &Option<PathBuf>, records: &[SequenceRecord]) -> Result<Vec<String>> {
    match path {
        Some(p) => Ok(read_ids(p)?),
        None => Ok(records.iter().map(|r| r.id.clone()).collect()),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = BenchmarkConfig {
        n_sequences: a.n,
        lengths: LengthRange {
            min: a.len_min,
            max: a.len_max,
        },
        feature_dim: a.feature_dim,
        noise: a.noise,
        seed: a.seed,
    };
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        bail!("noise must be a nonnegative number");
    }
    let records = generate_benchmark(&cfg)?;
    write_dataset(&records, &a.out)?;
    info!("wrote {} sequences to {}", records.len(), a.out.display());
    Ok(())
}

fn split(a: SplitCmd) -> Result<()> {
    let records = load(&a.dataset)?;
    let lengths: Vec<(String, usize)> = records.iter().map(|r| (r.id.clone(), r.len())).collect();
    let plan = SplitPlan::build(&lengths, a.test, a.val, &a.sizes, a.repeats, &RngStream::new(a.seed))?;
    create_dir(&a.out)?;
    plan.write(&a.out.join("split.tsv"))?;
    write_ids(&plan.test, &a.out.join("test_ids.txt"))?;
    write_ids(&plan.validation, &a.out.join("val_ids.txt"))?;
    write_ids(&plan.pool, &a.out.join("pool_ids.txt"))?;
    for (&(i, j), ids) in &plan.mini_sets {
        write_ids(ids, &a.out.join(format!("mini_{i}_{j}.txt")))?;
    }
    info!(
        "split {} records: {} test, {} val, {} pool",
        records.len(),
        plan.test.len(),
        plan.validation.len(),
        plan.pool.len()
    );
    Ok(())
}

fn stage_names(variant: Variant) -> &'static [&'static str] {
    match variant {
        Variant::M1 => &["framewise"],
        Variant::M2 => &["crf"],
        Variant::M3 | Variant::Student => &["lstm"],
        Variant::M4 => &["bilstm"],
        Variant::M5 => &["bilstm", "bilstm_crf"],
    }
}

fn train(a: Train) -> Result<()> {
    let mut hp = a.hyper.resolve()?.with_seed(a.seed);
    for stage in stage_names(a.variant) {
        let overrides = [
            ("epochs", a.epochs.map(|v| v.to_string())),
            ("lr", a.lr.map(|v| v.to_string())),
            ("dropout", a.dropout.map(|v| v.to_string())),
            ("wd", a.wd.map(|v| v.to_string())),
        ];
        for (field, value) in overrides {
            if let Some(v) = value {
                hp.set(&format!("{stage}.{field}"), &v)?;
            }
        }
    }
    hp.validate()?;
    let records = load(&a.dataset)?;
    let nc = n_classes(&records)?;
    let train_ids = read_ids(&a.train_ids_file)?;
    let val_ids = match &a.val_ids_file {
        Some(p) => read_ids(p)?,
        None => Vec::new(),
    };
    let train_set = select(&records, &train_ids)?;
    let val_set = select(&records, &val_ids)?;
    let model = train_variant(a.variant, &train_set, &val_set, nc, &hp)?;
    create_dir(&a.out)?;
    let path = a.out.join("model.ckpt");
    model.save(&path)?;
    info!("saved {} to {}", a.variant, path.display());
    Ok(())
}

fn annotate_cmd(a: AnnotateCmd) -> Result<()> {
    let teacher = ModelBundle::load(&a.teacher)?;
    let records = load(&a.dataset)?;
    let ids = ids_or_all(&a.ids_file, &records)?;
    let subset = select(&records, &ids)?;
    let labeled = annotate(&teacher, &subset)?;
    write_dataset(&labeled, &a.out)?;
    info!("annotated {} records into {}", labeled.len(), a.out.display());
    Ok(())
}

fn distill(a: Distill) -> Result<()> {
    let hp = a.hyper.resolve()?.with_seed(a.seed);
    hp.validate()?;
    let records = load(&a.dataset)?;
    let nc = n_classes(&records)?;
    let plan = SplitPlan::read(&a.split)?;
    let e_ids = plan.mini_set(a.size, a.repeat)?.to_vec();
    let f_ids = plan.complement(a.size, a.repeat)?;
    let e = select(&records, &e_ids)?;
    let f = select(&records, &f_ids)?;
    let val = select(&records, &plan.validation)?;
    let test = select(&records, &plan.test)?;
    create_dir(&a.out)?;
    let teacher = train_temporal(Variant::M5, &e, &val, nc, &hp, None)?;
    teacher.save(&a.out.join("teacher.ckpt"))?;
    let synthetic = annotate(&teacher, &f)?;
    write_dataset(&synthetic, &a.out.join("synthetic_labels"))?;
    let synthetic_refs: Vec<&SequenceRecord> = synthetic.iter().collect();
    let g = assemble_training_union(&e, &synthetic_refs, &plan.pool)?;
    let g_refs: Vec<&SequenceRecord> = g.iter().collect();
    let student = train_temporal(Variant::Student, &g_refs, &val, nc, &hp, None)?;
    student.save(&a.out.join("student.ckpt"))?;
    let reports = vec![
        ("m5".to_string(), teacher.evaluate(&test)?),
        ("student".to_string(), student.evaluate(&test)?),
    ];
    write_metrics_tsv(&reports, &a.out.join("metrics.tsv"))?;
    for (name, r) in &reports {
        println!("{name}\taccuracy\t{:.4}\tf1\t{:.4}", r.accuracy, r.macro_f1);
    }
    Ok(())
}

fn grid(a: Grid) -> Result<()> {
    let hp = a.hyper.resolve()?;
    hp.validate()?;
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let records = load(&a.dataset)?;
    let nc = n_classes(&records)?;
    let split = match &a.split {
        Some(p) => SplitPlan::read(p)?,
        None => {
            let lengths: Vec<(String, usize)> = records.iter().map(|r| (r.id.clone(), r.len())).collect();
            SplitPlan::build(&lengths, 30, 10, &a.sizes, a.repeats, &RngStream::new(a.seed))?
        }
    };
    let plan = ExperimentPlan {
        sizes: a.sizes,
        repeats: a.repeats,
        split,
        hyperparameters: hp,
        n_classes: nc,
        seed: a.seed,
        workers: a.workers,
        full_reference: a.full,
        out_dir: a.out,
    };
    let result = run_experiment_grid(&plan, &records)?;
    let failed = result.cells.iter().filter(|c| c.result.is_err()).count();
    println!("{}", format_table(&result.summary, "f1"));
    if failed > 0 {
        bail!("{failed} of {} grid cells failed; see errors.tsv", result.cells.len());
    }
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let model = ModelBundle::load(&a.model)?;
    let records = load(&a.dataset)?;
    let ids = ids_or_all(&a.ids_file, &records)?;
    let subset = select(&records, &ids)?;
    let report = model.evaluate(&subset)?;
    create_dir(&a.out)?;
    write_metrics_tsv(&[(model.variant.to_string(), report.clone())], &a.out.join("metrics.tsv"))?;
    for (name, v) in METRIC_NAMES.iter().zip(report.headline()) {
        println!("{name}\t{v:.6}");
    }
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let rows = read_summary_tsv(&a.summary)?;
    if rows.is_empty() {
        bail!("{} has no rows", a.summary.display());
    }
    create_dir(&a.out)?;
    render_curves(&rows, &a.out.join("curves.svg"))?;
    let tables: String = METRIC_NAMES.iter().map(|m| format!("{}\n", format_table(&rows, m))).collect();
    let path = a.out.join("tables.md");
    fs::write(&path, &tables).with_context(|| format!("cannot write {}", path.display()))?;
    print!("{tables}");
    Ok(())
}
