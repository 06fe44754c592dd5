//! In-process experiment drivers shared by the commands and the tests.
//!
//! Every driver fans class-level work out over the rayon pool and collects
//! results in submission order, so outputs do not depend on scheduling.

use std::fmt::Write as _;

use flowam::am::{generate, AmResources, BaselineRegConfig, ExplanationResult, FlowAmConfig, Method, Terms};
use flowam::data::{LabeledDataset, ShapeFamily, Split, SyntheticSpec};
use flowam::flow::{class_profiles, cosine_similarity, AlignmentPlan, ClassProfile};
use flowam::metrics::{evaluate, EvalConfig, LabeledExplanation, MetricsReport};
use flowam::nn::{dropout_parameters, PointNet, TrainConfig};
use flowam::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DESK_INSTANCES: usize = 100;
pub const DESK_POINTS: usize = 256;

/// The eight-class synthetic dataset used by the default experiments.
pub fn desk_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(ShapeFamily::DESK.to_vec(), DESK_INSTANCES, DESK_POINTS, seed)
}

pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

/// A model together with the data it is explained against.
///
/// Class profiles come from the training split. The average initializer
/// and the evaluation references both draw on the test split.
pub struct Workbench {
    pub model: PointNet<f32>,
    pub data: LabeledDataset,
    pub profiles: ClassProfile,
}

impl Workbench {
    pub fn new(model: PointNet<f32>, data: LabeledDataset) -> Result<Self> {
        let profiles = class_profiles(&model, data.split(Split::Train), &data.classes, Split::Train)?;
        Ok(Self { model, data, profiles })
    }

    pub fn with_profiles(model: PointNet<f32>, data: LabeledDataset, profiles: ClassProfile) -> Self {
        Self { model, data, profiles }
    }

    pub fn resources(&self) -> AmResources<'_> {
        AmResources {
            profiles: Some(&self.profiles),
            init_pool: Some(self.data.split(Split::Test)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn evaluate(&self, explanations: &[LabeledExplanation], cfg: &EvalConfig) -> Result<MetricsReport> {
        evaluate(explanations, &self.model, self.data.split(Split::Test), &self.data.classes, cfg)
    }

    /// Same data and references, corrupted model. Profiles are recomputed
    /// from the corrupted model so the explanation draws only on it.
    pub fn dropped_out(&self, p: f64, seed: u64) -> Result<Workbench> {
        let model = dropout_parameters(&self.model, p, seed)?;
        if p == 0.0 {
            return Ok(Workbench::with_profiles(model, self.data.clone(), self.profiles.clone()));
        }
        Workbench::new(model, self.data.clone())
    }
}

/// One explanation to produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    /// Method label used in reports (`flow`, `no-la`, `beta=0.2`, ...).
    pub label: String,
    pub method: Method,
    pub config: FlowAmConfig,
    pub baseline: BaselineRegConfig,
}

/// Runs every job; results come back in job order.
pub fn run_jobs(wb: &Workbench, jobs: &[Job]) -> Result<Vec<ExplanationResult>> {
    let res = wb.resources();
    jobs.par_iter()
        .map(|j| generate(&wb.model, j.method, &j.config, &j.baseline, &res))
        .collect()
}

pub fn labeled(jobs: &[Job], results: &[ExplanationResult]) -> Vec<LabeledExplanation> {
    jobs.iter()
        .zip(results)
        .map(|(j, r)| LabeledExplanation {
            method: j.label.clone(),
            class: r.config.target,
            cloud: r.cloud.clone(),
        })
        .collect()
}

/// One job per (method, class), methods outermost.
pub fn method_jobs(
    methods: &[Method],
    classes: &[usize],
    template: &FlowAmConfig,
    baseline: &BaselineRegConfig,
) -> Vec<Job> {
    methods
        .iter()
        .flat_map(|&m| {
            classes.iter().map(move |&c| Job {
                label: m.name().to_string(),
                method: m,
                config: FlowAmConfig {
                    target: c,
                    ..template.clone()
                },
                baseline: baseline.clone(),
            })
        })
        .collect()
}

/// Mean cosine similarity between the activations of `cloud` and the class
/// means of `class`, over the layers of `plan`.
pub fn plan_cosine(
    model: &PointNet<f32>,
    cloud: &flowam::data::PointCloud,
    profiles: &ClassProfile,
    plan: &AlignmentPlan,
    class: usize,
) -> Result<f64> {
    if plan.is_empty() {
        return Err(Error::Config("empty alignment plan".into()));
    }
    let (_, record) = model.forward(cloud.to_array::<f32>().view(), true)?;
    let record = record.expect("recording requested");
    let mut total = 0.0;
    for e in plan.entries() {
        let mean = profiles.mean_f32(class, &e.layer)?;
        let a = record
            .get(&e.layer)
            .ok_or_else(|| Error::Contract(format!("layer {} missing from record", e.layer)))?;
        total += cosine_similarity(a, mean.view())?.value;
    }
    Ok(total / plan.entries().len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    All,
    NoLa,
    NoC,
    NoLr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::All, Variant::NoLa, Variant::NoC, Variant::NoLr];

    pub fn name(self) -> &'static str {
        match self {
            Variant::All => "all",
            Variant::NoLa => "no-la",
            Variant::NoC => "no-c",
            Variant::NoLr => "no-lr",
        }
    }

    pub fn terms(self) -> Terms {
        let all = Terms::default();
        match self {
            Variant::All => all,
            Variant::NoLa => Terms { alignment: false, ..all },
            Variant::NoC => Terms { continuity: false, ..all },
            Variant::NoLr => Terms { legal: false, ..all },
        }
    }
}

/// Class-averaged metrics of one method label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub logit: f64,
    pub log_softmax: f64,
    pub cd: f64,
    pub fid: f64,
    pub legality: f64,
    /// Fraction of explanations the model assigns to their target class.
    pub correct: f64,
}

pub fn summarize(label: &str, report: &MetricsReport, results: &[&ExplanationResult]) -> Result<Summary> {
    let rows: Vec<_> = report.rows.iter().filter(|r| r.method == label).collect();
    if rows.is_empty() || results.is_empty() {
        return Err(Error::Input(format!("no results for '{label}'")));
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&flowam::metrics::MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let correct = results.iter().filter(|r| r.predicted_class == r.config.target).count();
    Ok(Summary {
        label: label.to_string(),
        logit: mean(&|r| r.logit),
        log_softmax: mean(&|r| r.log_softmax),
        cd: mean(&|r| r.cd),
        fid: mean(&|r| r.fid),
        legality: mean(&|r| r.legality),
        correct: correct as f64 / results.len() as f64,
    })
}

pub fn summaries_csv(rows: &[Summary]) -> String {
    let mut s = String::from("variant,logit,log_softmax,cd,fid,legality,correct\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.label, r.logit, r.log_softmax, r.cd, r.fid, r.legality, r.correct
        );
    }
    s
}

pub struct Outcome {
    pub jobs: Vec<Job>,
    pub results: Vec<ExplanationResult>,
    pub metrics: MetricsReport,
}

impl Outcome {
    pub fn results_for(&self, label: &str) -> Vec<&ExplanationResult> {
        self.jobs
            .iter()
            .zip(&self.results)
            .filter(|(j, _)| j.label == label)
            .map(|(_, r)| r)
            .collect()
    }
}

/// Runs and scores a job list.
pub fn run_and_evaluate(wb: &Workbench, jobs: Vec<Job>, eval: &EvalConfig) -> Result<Outcome> {
    let results = run_jobs(wb, &jobs)?;
    let metrics = wb.evaluate(&labeled(&jobs, &results), eval)?;
    Ok(Outcome { jobs, results, metrics })
}

/// Flow with each loss term removed in turn.
pub fn ablate(
    wb: &Workbench,
    classes: &[usize],
    template: &FlowAmConfig,
    eval: &EvalConfig,
) -> Result<(Outcome, Vec<Summary>)> {
    let jobs: Vec<Job> = Variant::ALL
        .iter()
        .flat_map(|&v| {
            classes.iter().map(move |&c| Job {
                label: v.name().to_string(),
                method: Method::Flow,
                config: FlowAmConfig {
                    target: c,
                    terms: v.terms(),
                    ..template.clone()
                },
                baseline: BaselineRegConfig::default(),
            })
        })
        .collect();
    let out = run_and_evaluate(wb, jobs, eval)?;
    let rows = Variant::ALL
        .iter()
        .map(|v| summarize(v.name(), &out.metrics, &out.results_for(v.name())))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, rows))
}

/// Flow explanations for each trade-off coefficient.
pub fn sweep_beta(
    wb: &Workbench,
    classes: &[usize],
    betas: &[f64],
    template: &FlowAmConfig,
    eval: &EvalConfig,
) -> Result<Outcome> {
    let jobs: Vec<Job> = betas
        .iter()
        .flat_map(|&b| {
            classes.iter().map(move |&c| Job {
                label: format!("beta={b}"),
                method: Method::Flow,
                config: FlowAmConfig {
                    target: c,
                    beta: b,
                    ..template.clone()
                },
                baseline: BaselineRegConfig::default(),
            })
        })
        .collect();
    for j in &jobs {
        j.config.validate()?;
    }
    run_and_evaluate(wb, jobs, eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityRun {
    pub p: f64,
    pub seed: u64,
    pub class: usize,
    pub cd: f64,
    pub predicted_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityPoint {
    pub p: f64,
    pub mean_cd: f64,
    pub var_cd: f64,
    pub runs: usize,
}

pub struct SanityReport {
    pub runs: Vec<SanityRun>,
    pub curve: Vec<SanityPoint>,
    /// Explanations grouped as `(p, seed, results)`.
    pub explanations: Vec<(f64, u64, Vec<ExplanationResult>)>,
}

impl SanityReport {
    pub fn point(&self, p: f64) -> Option<&SanityPoint> {
        self.curve.iter().find(|s| s.p == p)
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("p,seed,class,cd,predicted_class\n");
        for r in &self.runs {
            let _ = writeln!(s, "{},{},{},{},{}", r.p, r.seed, r.class, r.cd, r.predicted_class);
        }
        s
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("p,mean_cd,var_cd,runs\n");
        for r in &self.curve {
            let _ = writeln!(s, "{},{},{},{}", r.p, r.mean_cd, r.var_cd, r.runs);
        }
        s
    }
}

/// Explains parameter-dropout corruptions of the model with `method`.
/// With `p = 0` every dropout seed yields the original model, so that level
/// is run once and shared.
pub fn sanity(
    wb: &Workbench,
    method: Method,
    classes: &[usize],
    probabilities: &[f64],
    dropout_seeds: &[u64],
    template: &FlowAmConfig,
    baseline: &BaselineRegConfig,
    eval: &EvalConfig,
) -> Result<SanityReport> {
    if probabilities.is_empty() || dropout_seeds.is_empty() {
        return Err(Error::Config("sanity check needs at least one probability and one seed".into()));
    }
    let jobs = method_jobs(&[method], classes, template, baseline);
    let mut runs = Vec::new();
    let mut curve = Vec::new();
    let mut explanations = Vec::new();
    for &p in probabilities {
        let seeds: &[u64] = if p == 0.0 { &dropout_seeds[..1] } else { dropout_seeds };
        let mut cds = Vec::new();
        for &seed in seeds {
            let dropped = wb.dropped_out(p, seed)?;
            let results = run_jobs(&dropped, &jobs)?;
            // References and the scoring model stay those of the intact workbench.
            let report = wb.evaluate(&labeled(&jobs, &results), eval)?;
            for r in &results {
                let row = report
                    .row(method.name(), r.config.target)
                    .ok_or_else(|| Error::Contract("missing metrics row".into()))?;
                runs.push(SanityRun {
                    p,
                    seed,
                    class: r.config.target,
                    cd: row.cd,
                    predicted_class: r.predicted_class,
                });
                cds.push(row.cd);
            }
            explanations.push((p, seed, results));
        }
        let n = cds.len() as f64;
        let mean = cds.iter().sum::<f64>() / n;
        let var = cds.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        curve.push(SanityPoint {
            p,
            mean_cd: mean,
            var_cd: var,
            runs: cds.len(),
        });
    }
    Ok(SanityReport {
        runs,
        curve,
        explanations,
    })
}
