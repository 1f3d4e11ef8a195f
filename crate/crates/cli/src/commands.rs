use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use deepfld::analysis::{
    pearson_stage, rank_by_pearson, select_indicators, summarize, SelectionConfig, FINAL3, LABEL_TARGET, METADATA8,
};
use deepfld::cohort::{generate_cohort, read_cohort, write_cohort, Cohort, GenerationConfig, ShiftPreset};
use deepfld::model::{Mode, Widths};
use deepfld::trainkit::{
    self, migrate_eval, occlusion_saliency, predict_scores, roc_curve, write_roc_csv, CrossValConfig, Hyperparams,
    MetricsReport, Optimizer,
};
use deepfld::Error;

use crate::args::*;
use crate::files::*;
use crate::{CliError, CliResult};

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let mut config = match &a.config {
        Some(path) => read_json::<GenerationConfig>(path).map_err(|e| match e {
            CliError::Core(Error::Format { file, message }) => {
                CliError::Core(Error::Config(format!("{}: {message}", file.display())))
            }
            other => other,
        })?,
        None => match a.preset {
            CohortPreset::Default => GenerationConfig::default(),
            CohortPreset::Metadata => GenerationConfig::metadata_only(676),
            CohortPreset::Planted7 => GenerationConfig::planted_seven(5000),
            CohortPreset::Reduced => GenerationConfig::reduced_image_signal(),
        },
    };
    if let Some(n) = a.n {
        if n == 0 {
            return Err(CliError::Usage("--n must be positive".into()));
        }
        config.n = n;
    }
    if let Some(tag) = &a.year_tag {
        config.year_tag = tag.clone();
    }
    if let Some(shift) = a.shift_preset {
        config.shift = ShiftPreset::from(shift).shift();
    }
    let cohort = generate_cohort(&config, a.seed)?;
    write_cohort(&cohort, &a.out)?;
    write_run(&a.out, "generate", a, cohort.config())
}

#[derive(Serialize)]
struct Stage1 {
    stage1: Vec<String>,
    stage1_augmented: Vec<String>,
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    ensure_dir(&a.out)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let summary = summarize(&cohort)?;
    write_csv(
        &a.out.join("summary.csv"),
        &["indicator", "negative", "positive", "rho", "p_value"],
        summary
            .iter()
            .map(|r| vec![r.name.clone(), r.negative.display(), r.positive.display(), opt(r.rho), opt(r.p_value)]),
    )?;
    let ranking = rank_by_pearson(&cohort, LABEL_TARGET, cohort.indicators().len())?;
    write_csv(
        &a.out.join("pearson_ranking.csv"),
        &["rank", "indicator", "rho", "abs_rho"],
        ranking
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| vec![(i + 1).to_string(), e.name.clone(), format!("{}", e.rho), format!("{}", e.abs_rho)]),
    )?;
    let stage1 = match pearson_stage(&cohort, a.stage1_k) {
        Ok((_, stage1, stage1_augmented)) => {
            let s = Stage1 { stage1, stage1_augmented };
            write_json(&a.out.join("stage1.json"), &s)?;
            Some(s)
        }
        Err(e) => {
            eprintln!("deepfld: no first selection stage: {e}");
            None
        }
    };
    write_run(&a.out, "analyze", a, &serde_json::json!({ "skipped": ranking.skipped, "stage1": stage1 }))
}

pub fn select(a: &SelectArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    let (model, _) = load_model(&a.checkpoint)?;
    let config = SelectionConfig {
        stage1_k: a.stage1_k,
        explain_samples: a.explain_samples,
        n_perm: a.n_perm,
        seed: a.seed,
        ..SelectionConfig::default()
    };
    let result = select_indicators(&cohort, &model, &config)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("selection.json"), &result)?;
    write_run(&a.out, "select", a, &config)
}

/// Modality and indicator list of a run.
fn resolve_selection(h: &HyperArgs) -> CliResult<(Mode, Vec<String>)> {
    let (mode, key, default): (Mode, &str, Option<&[&str]>) = match h.mode {
        ModeArg::Metadata3 => (Mode::Metadata, "final3", Some(&FINAL3)),
        ModeArg::Metadata8 => (Mode::Metadata, "final8", Some(&METADATA8)),
        ModeArg::Multimodal3 => (Mode::Multimodal, "final3", Some(&FINAL3)),
        ModeArg::Multimodal8 => (Mode::Multimodal, "final8", Some(&METADATA8)),
        ModeArg::Image => return Ok((Mode::Image, vec![])),
        ModeArg::Metadata => (Mode::Metadata, "stage1_augmented", None),
        ModeArg::Multimodal => (Mode::Multimodal, "stage1_augmented", None),
    };
    if let Some(list) = &h.indicators {
        return Ok((mode, list.clone()));
    }
    if let Some(path) = &h.selection {
        let doc: Value = read_json(path)?;
        let names = doc
            .get(key)
            .and_then(Value::as_array)
            .and_then(|v| v.iter().map(|n| n.as_str().map(String::from)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| Error::Config(format!("{} has no string list {key:?}", path.display())))?;
        return Ok((mode, names));
    }
    match default {
        Some(d) => Ok((mode, d.iter().map(|s| s.to_string()).collect())),
        None => Err(CliError::Usage("this mode needs --indicators or --selection".into())),
    }
}

fn resolve_hyper(h: &HyperArgs) -> CliResult<(Hyperparams, Vec<String>)> {
    let (mode, selection) = resolve_selection(h)?;
    let base = match h.width {
        WidthArg::Paper => Hyperparams::default(),
        WidthArg::Desk => Hyperparams::desk(),
    };
    let optimizer = match h.optimizer {
        OptimizerArg::Adam => Optimizer::adam(h.lr),
        OptimizerArg::Sgd => Optimizer::Sgd { lr: h.lr, momentum: h.momentum },
    };
    let hyper = Hyperparams {
        optimizer,
        batch_size: h.batch_size,
        epochs: h.epochs.unwrap_or(base.epochs),
        alpha: h.alpha,
        seed: h.seed,
        mode,
        aux: !h.no_aux,
        widths: if h.width == WidthArg::Desk { Widths::desk() } else { Widths::paper() },
        dropout: h.dropout,
    };
    hyper.validate()?;
    Ok((hyper, selection))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    let (hyper, selection) = resolve_hyper(&a.hyper)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let trained = trainkit::train::<f64>(&cohort, &all, &selection, &hyper)?;
    ensure_dir(&a.out)?;
    let card = ModelCard { config: trained.params.config().clone(), year_tag: cohort.year_tag().to_string(), hyper };
    save_model(&a.out, &trained.params, &card)?;
    write_csv(
        &a.out.join("history.csv"),
        &["epoch", "loss"],
        trained.history.iter().map(|r| vec![r.epoch.to_string(), format!("{}", r.loss)]),
    )?;
    write_run(&a.out, "train", a, &card)
}

#[derive(Serialize)]
struct Evaluation<'a> {
    year_tag: &'a str,
    n: usize,
    metrics: MetricsReport,
}

fn write_scores_roc(out: &Path, name: &str, scores: &[f64], labels: &[u8]) -> CliResult<()> {
    match roc_curve(scores, labels) {
        Ok(points) => Ok(write_roc_csv(&out.join(name), &points)?),
        Err(Error::UndefinedMetric(_)) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    let (model, card) = load_model(&a.checkpoint)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let scores = predict_scores(&model, &cohort, &all)?;
    let labels = cohort.labels();
    let metrics = MetricsReport::from_scores(&scores, &labels, a.threshold)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("metrics.json"), &Evaluation { year_tag: cohort.year_tag(), n: cohort.len(), metrics })?;
    write_scores_roc(&a.out, "roc.csv", &scores, &labels)?;
    write_run(&a.out, "eval", a, &card)
}

pub fn crossval(a: &CrossvalArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    let (hyper, selection) = resolve_hyper(&a.hyper)?;
    let cv = CrossValConfig { k: a.k, repeats: a.repeats, jobs: a.jobs, threshold: a.threshold };
    let result = trainkit::crossval(&cohort, &selection, &hyper, &cv)?;
    for w in &result.warnings {
        eprintln!("deepfld: warning: {w}");
    }
    ensure_dir(&a.out)?;
    write_json(&a.out.join("crossval.json"), &result)?;
    for f in &result.folds {
        if !f.roc.is_empty() {
            write_roc_csv(&a.out.join(format!("roc_r{}_f{}.csv", f.repeat, f.fold)), &f.roc)?;
        }
    }
    write_run(&a.out, "crossval", a, &serde_json::json!({ "hyper": hyper, "selection": selection, "cv": cv }))
}

#[derive(Serialize)]
struct Migration<'a> {
    source_year_tag: &'a str,
    target_year_tag: &'a str,
    shift_preset: ShiftPreset,
    n: usize,
    metrics: MetricsReport,
}

pub fn migrate(a: &MigrateArgs) -> CliResult<()> {
    let (model, card) = load_model(&a.checkpoint)?;
    let target = read_cohort(&a.cohort)?;
    let preset = ShiftPreset::from(a.shift_preset);
    let target: Cohort = match preset {
        ShiftPreset::None => target,
        _ => {
            let tag = a.year_tag.clone().unwrap_or_else(|| target.year_tag().to_string());
            target.shifted(&preset.shift(), &tag)?
        }
    };
    let metrics = migrate_eval(&model, &target, a.threshold)?;
    ensure_dir(&a.out)?;
    let report = Migration {
        source_year_tag: &card.year_tag,
        target_year_tag: target.year_tag(),
        shift_preset: preset,
        n: target.len(),
        metrics,
    };
    write_json(&a.out.join("metrics.json"), &report)?;
    write_run(&a.out, "migrate", a, &card)
}

#[derive(Serialize)]
struct Explained {
    id: String,
    baseline: f64,
    rows: usize,
    cols: usize,
    max_cell: (usize, usize),
    max_center: (f64, f64),
}

pub fn explain(a: &ExplainArgs) -> CliResult<()> {
    let cohort = read_cohort(&a.cohort)?;
    let (model, _) = load_model(&a.checkpoint)?;
    let cols = cohort.indices_of(&model.config().indicators)?;
    ensure_dir(&a.out)?;
    let mut done = Vec::new();
    for id in &a.ids {
        let i = cohort.find(id).ok_or_else(|| Error::Data(format!("no participant {id}")))?;
        let p = cohort.participant(i);
        let image = p.image().ok_or_else(|| Error::Data(format!("participant {id} has no image")))?;
        let meta: Vec<f64> = cols.iter().map(|&j| p.metadata()[j]).collect();
        let metadata = model.config().mode.uses_metadata().then_some(meta.as_slice());
        let map = occlusion_saliency(&model, image, metadata, a.patch, a.stride)?;
        map.write_ppm(&a.out.join(format!("heatmap_{id}.ppm")))?;
        map.write_csv(&a.out.join(format!("heatmap_{id}.csv")))?;
        let max_cell = map.argmax();
        done.push(Explained {
            id: id.clone(),
            baseline: map.baseline,
            rows: map.rows,
            cols: map.cols,
            max_cell,
            max_center: map.cell_center(max_cell.0, max_cell.1),
        });
    }
    write_json(&a.out.join("saliency.json"), &done)?;
    write_run(&a.out, "explain", a, &done.len())
}
