use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::annotate::{annotate, assemble_training_union};
use super::bundle::{ModelBundle, Variant};
use super::config::Hyperparameters;
use super::train::{train_framewise, train_temporal};
use crate::data::{select, write_dataset, SequenceRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::evalreport::{
    render_timeline, write_metrics_tsv, write_summary_tsv, MetricReport, MetricStats, SummaryRow, METRIC_NAMES,
};
use crate::numkernel::mix_seed;

/// Row labels of the result tables, in output order. `student_e` is the student
/// architecture trained on the annotated set alone, which is exactly M3.
pub const GRID_VARIANTS: [&str; 8] = ["m1", "m2", "m3", "m4", "m5", "student_e", "student", "selflearn"];

/// Size label of the full-supervision reference.
pub const FULL: &str = "full";

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub split: SplitPlan,
    pub hyperparameters: Hyperparameters,
    pub n_classes: usize,
    pub seed: u64,
    pub workers: usize,
    /// Also train M1-M5 on the whole ground-truth pool.
    pub full_reference: bool,
    pub out_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.hyperparameters.validate()?;
        self.split.validate()?;
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        for &i in &self.sizes {
            for j in 0..self.repeats {
                self.split.mini_set(i, j)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    /// Mini-set size, or [`FULL`].
    pub size: String,
    pub repeat: usize,
    /// Test metrics per entry of [`GRID_VARIANTS`], or the failure message.
    pub result: std::result::Result<BTreeMap<String, MetricReport>, String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub cells: Vec<CellOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// Seeds of one cell: framewise, lstm-family, bilstm-family.
fn cell_seeds(plan_seed: u64, size: usize, repeat: usize) -> [u64; 3] {
    let cell = mix_seed(plan_seed, (size as u64) << 16 | repeat as u64);
    [1, 2, 3].map(|k| mix_seed(cell, k))
}

fn hp_with(base: &Hyperparameters, seeds: [u64; 3]) -> Hyperparameters {
    let mut hp = *base;
    hp.framewise.seed = seeds[0];
    hp.crf.seed = seeds[0];
    hp.lstm.seed = seeds[1];
    hp.bilstm.seed = seeds[2];
    hp.bilstm_crf.seed = seeds[2];
    hp
}

struct Data<'a> {
    records: &'a [SequenceRecord],
    val: Vec<&'a SequenceRecord>,
    test: Vec<&'a SequenceRecord>,
}

/// Trains and evaluates every variant for each `(size, repeat)`, writing one directory
/// per cell plus `summary.tsv` and `errors.tsv`. A failing cell is reported and skipped.
pub fn run_experiment_grid(plan: &ExperimentPlan, records: &[SequenceRecord]) -> Result<GridResult> {
    plan.validate()?;
    let data = Data {
        records,
        val: select(records, &plan.split.validation)?,
        test: select(records, &plan.split.test)?,
    };
    crate::data::require_labels(&data.val.iter().map(|r| (*r).clone()).collect::<Vec<_>>())?;
    crate::data::require_labels(&data.test.iter().map(|r| (*r).clone()).collect::<Vec<_>>())?;
    fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
    plan.split.write(&plan.out_dir.join("split.tsv"))?;
    let hp_path = plan.out_dir.join("hyperparameters.cfg");
    fs::write(&hp_path, plan.hyperparameters.to_kv()).map_err(|e| Error::io(&hp_path, e))?;

    let mut jobs: Vec<(Option<usize>, usize)> = Vec::new();
    for &i in &plan.sizes {
        for j in 0..plan.repeats {
            jobs.push((Some(i), j));
        }
    }
    if plan.full_reference {
        jobs.push((None, 0));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let cells: Vec<CellOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(size, repeat)| {
                let label = size.map_or(FULL.to_string(), |i| i.to_string());
                let started = Instant::now();
                let result = match size {
                    Some(i) => run_cell(plan, &data, i, repeat),
                    None => run_full(plan, &data),
                };
                match &result {
                    Ok(_) => info!("cell {label}/{repeat} done in {:.1}s", started.elapsed().as_secs_f64()),
                    Err(e) => warn!("cell {label}/{repeat} failed: {e}"),
                }
                CellOutcome {
                    size: label,
                    repeat,
                    result: result.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });

    let summary = summarize(&cells)?;
    write_summary_tsv(&summary, &plan.out_dir.join("summary.tsv"))?;
    let mut errors = String::from("#size\trepeat\terror\n");
    for c in &cells {
        if let Err(e) = &c.result {
            errors.push_str(&format!("{}\t{}\t{}\n", c.size, c.repeat, e.replace(['\t', '\n'], " ")));
        }
    }
    let err_path = plan.out_dir.join("errors.tsv");
    fs::write(&err_path, errors).map_err(|e| Error::io(&err_path, e))?;
    Ok(GridResult { cells, summary })
}

pub fn cell_dir(out: &Path, size: &str, repeat: usize) -> PathBuf {
    out.join(format!("i{size}_j{repeat}"))
}

fn run_cell(plan: &ExperimentPlan, data: &Data<'_>, size: usize, repeat: usize) -> Result<BTreeMap<String, MetricReport>> {
    let dir = cell_dir(&plan.out_dir, &size.to_string(), repeat);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hp = hp_with(&plan.hyperparameters, cell_seeds(plan.seed, size, repeat));
    let nc = plan.n_classes;
    let e_ids = plan.split.mini_set(size, repeat)?;
    let e = select(data.records, e_ids)?;
    let f_ids = plan.split.complement(size, repeat)?;
    let f_plain = select(data.records, &f_ids)?;

    let mut models: Vec<(&str, ModelBundle, &str)> = Vec::new();
    let m1 = train_framewise(&e, &data.val, nc, &hp.framewise)?;
    let m2 = train_temporal(Variant::M2, &e, &data.val, nc, &hp, Some(&m1))?;
    let m3 = train_temporal(Variant::M3, &e, &data.val, nc, &hp, None)?;
    let m4 = train_temporal(Variant::M4, &e, &data.val, nc, &hp, None)?;
    let teacher = train_temporal(Variant::M5, &e, &data.val, nc, &hp, Some(&m4))?;

    let synthetic = annotate(&teacher, &f_plain)?;
    write_dataset(&synthetic, &dir.join("synthetic_labels"))?;
    let synthetic_refs: Vec<&SequenceRecord> = synthetic.iter().collect();
    let g = assemble_training_union(&e, &synthetic_refs, &plan.split.pool)?;
    let g_refs: Vec<&SequenceRecord> = g.iter().collect();
    let student = train_temporal(Variant::Student, &g_refs, &data.val, nc, &hp, None)?;
    let selflearn = train_temporal(Variant::M5, &g_refs, &data.val, nc, &hp, None)?;

    models.push(("m1", m1, "m1.ckpt"));
    models.push(("m2", m2, "m2.ckpt"));
    models.push(("m3", m3, "m3.ckpt"));
    models.push(("m4", m4, "m4.ckpt"));
    models.push(("m5", teacher, "teacher.ckpt"));
    models.push(("student", student, "student.ckpt"));
    models.push(("selflearn", selflearn, "selflearn.ckpt"));
    finish_cell(&dir, data, models)
}

fn run_full(plan: &ExperimentPlan, data: &Data<'_>) -> Result<BTreeMap<String, MetricReport>> {
    let dir = cell_dir(&plan.out_dir, FULL, 0);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hp = hp_with(&plan.hyperparameters, cell_seeds(plan.seed, 0, usize::MAX >> 48));
    let nc = plan.n_classes;
    let pool = select(data.records, &plan.split.pool)?;
    let m1 = train_framewise(&pool, &data.val, nc, &hp.framewise)?;
    let m2 = train_temporal(Variant::M2, &pool, &data.val, nc, &hp, Some(&m1))?;
    let m3 = train_temporal(Variant::M3, &pool, &data.val, nc, &hp, None)?;
    let m4 = train_temporal(Variant::M4, &pool, &data.val, nc, &hp, None)?;
    let m5 = train_temporal(Variant::M5, &pool, &data.val, nc, &hp, Some(&m4))?;
    let models = vec![
        ("m1", m1, "m1.ckpt"),
        ("m2", m2, "m2.ckpt"),
        ("m3", m3, "m3.ckpt"),
        ("m4", m4, "m4.ckpt"),
        ("m5", m5, "m5.ckpt"),
    ];
    finish_cell(&dir, data, models)
}

fn finish_cell(
    dir: &Path,
    data: &Data<'_>,
    models: Vec<(&str, ModelBundle, &str)>,
) -> Result<BTreeMap<String, MetricReport>> {
    let mut reports = BTreeMap::new();
    let mut rows = Vec::new();
    for (name, model, file) in &models {
        model.save(&dir.join(file))?;
        let report = model.evaluate(&data.test)?;
        rows.push((name.to_string(), report.clone()));
        if *name == "m3" && models.iter().any(|(n, _, _)| *n == "student") {
            rows.push(("student_e".to_string(), report.clone()));
            reports.insert("student_e".to_string(), report.clone());
        }
        reports.insert(name.to_string(), report);
    }
    write_metrics_tsv(&rows, &dir.join("metrics.tsv"))?;
    if let Some(first) = data.test.first() {
        let truth = first.require_tags()?;
        let preds = models
            .iter()
            .map(|(name, m, _)| Ok((name.to_string(), m.predict(&first.features)?)))
            .collect::<Result<Vec<_>>>()?;
        let n_classes = models.first().map_or(0, |(_, m, _)| m.n_classes());
        render_timeline(truth, &preds, n_classes, &dir.join("timeline.svg"))?;
    }
    Ok(reports)
}

/// Mean and population std over the successful repeats of each (size, variant).
pub fn summarize(cells: &[CellOutcome]) -> Result<Vec<SummaryRow>> {
    let mut sizes: Vec<&str> = Vec::new();
    for c in cells {
        if !sizes.contains(&c.size.as_str()) {
            sizes.push(&c.size);
        }
    }
    let mut rows = Vec::new();
    for size in sizes {
        for variant in GRID_VARIANTS {
            let reports: Vec<&MetricReport> = cells
                .iter()
                .filter(|c| c.size == size)
                .filter_map(|c| c.result.as_ref().ok())
                .filter_map(|m| m.get(variant))
                .collect();
            if reports.is_empty() {
                continue;
            }
            for (k, metric) in METRIC_NAMES.iter().enumerate() {
                let values: Vec<f64> = reports.iter().map(|r| r.headline()[k]).collect();
                rows.push(SummaryRow {
                    size: size.to_string(),
                    variant: variant.to_string(),
                    metric: metric.to_string(),
                    stats: MetricStats::of(&values)?,
                    repeats: values.len(),
                });
            }
        }
    }
    Ok(rows)
}
