use std::fs;
use std::path::Path;

use super::report::{curve_csv, history_csv, RunRecord, RunReport};
use super::spec::{ExperimentKind, ExperimentSpec};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::graph::{filter_edges, make_splits, EdgeClasses, Graph, SplitAssignment};
use crate::metrics::{self, CurvePoint, ScoreKind, ScoredNodes};
use crate::nn::{Architecture, GraphInput, Model, ModelConfig, ParamStore};
use crate::objective::LossWeights;
use crate::train::{
    grid_search, train, GridResult, SplitView, TrainConfig, TrainHistory, TrainedModel,
};

/// How runs are scheduled.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Pool size for parallel runs; 0 lets rayon decide.
    pub workers: usize,
    pub exec: Exec,
}

/// Everything one run produced besides its record.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub history: TrainHistory,
    pub params: ParamStore,
    pub roc: Vec<(ScoreKind, Vec<CurvePoint>)>,
    pub pr: Vec<(ScoreKind, Vec<CurvePoint>)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub artifacts: Vec<RunArtifacts>,
    pub grid: Option<GridResult>,
}

impl ExperimentOutput {
    /// Writes the report plus `history/<run>.csv`, `curves/<run>-{roc,pr}.csv`
    /// and `checkpoints/<run>.params`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.report.write(dir)?;
        let history = dir.join("history");
        let curves = dir.join("curves");
        let checkpoints = dir.join("checkpoints");
        for d in [&history, &curves, &checkpoints] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for a in &self.artifacts {
            let stem = a.record.file_stem();
            let files = [
                (
                    history.join(format!("{stem}.csv")),
                    history_csv(&a.history.records),
                ),
                (
                    curves.join(format!("{stem}-roc.csv")),
                    curve_csv(&a.roc, "fpr", "tpr"),
                ),
                (
                    curves.join(format!("{stem}-pr.csv")),
                    curve_csv(&a.pr, "precision", "recall"),
                ),
            ];
            for (path, body) in files {
                fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            }
            a.params.save(checkpoints.join(format!("{stem}.params")))?;
        }
        if let Some(g) = &self.grid {
            let path = dir.join("grid.json");
            let body = serde_json::to_string_pretty(g).expect("grid serializes");
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// One training run: a condition's graph, configs and (split, seed).
struct Job {
    condition: String,
    graph: usize,
    model: ModelConfig,
    train: TrainConfig,
    split: usize,
    r: usize,
}

/// Test-set evaluation of a trained model.
pub fn evaluate(
    trained: &TrainedModel,
    graph: &Graph,
    input: &GraphInput,
    view: &SplitView,
) -> Result<(
    f64,
    Vec<(
        ScoreKind,
        metrics::DetectionMetrics,
        Vec<CurvePoint>,
        Vec<CurvePoint>,
    )>,
)> {
    let pred = trained.predict(input)?;
    let id_pred: Vec<usize> = pred.probs.row_argmax();
    let accuracy = metrics::accuracy(&id_pred, &view.test_id)?;
    let c = trained.model.num_classes();
    let truth: Vec<usize> = graph
        .local_labels()
        .iter()
        .map(|y| y.unwrap_or(c))
        .collect();
    let mut kinds = vec![ScoreKind::Entropy];
    if pred.layer_scores.is_some() {
        kinds.push(ScoreKind::Attention);
    }
    let mut out = Vec::new();
    for kind in kinds {
        let scores = metrics::ood_scores(&pred, kind)?;
        let det =
            metrics::detection_metrics(&scores, graph.identity(), &view.test, &id_pred, &truth, c)?;
        let s = ScoredNodes::select(&scores, graph.identity(), &view.test)?;
        out.push((kind, det, metrics::roc_curve(&s)?, metrics::pr_curve(&s)?));
    }
    Ok((accuracy, out))
}

fn run_one(
    spec: &ExperimentSpec,
    job: &Job,
    graph: &Graph,
    input: &GraphInput,
    split: &SplitAssignment,
) -> Result<RunArtifacts> {
    let seed = spec.model_seed(job.r);
    let model = Model::for_graph(job.model.clone(), graph)?;
    let cfg = TrainConfig {
        seed,
        ..job.train.clone()
    };
    let (trained, history) = train(&model, graph, input, split, &cfg)?;
    let view = SplitView::new(graph, split)?;
    let (accuracy, evals) = evaluate(&trained, graph, input, &view)?;
    let mut ent = None;
    let mut att = None;
    let mut roc = Vec::new();
    let mut pr = Vec::new();
    for (kind, det, r, p) in evals {
        match kind {
            ScoreKind::Entropy => ent = Some(det),
            ScoreKind::Attention => att = Some(det),
        }
        roc.push((kind, r));
        pr.push((kind, p));
    }
    let record = RunRecord {
        condition: job.condition.clone(),
        run: format!("split{}-seed{}", job.split, job.r),
        split: job.split,
        split_seed: spec.split_seed(job.split),
        seed,
        steps: history.steps_run(),
        best_step: history.best_step,
        accuracy,
        ent: ent.expect("entropy is always evaluated"),
        att,
    };
    log::info!(
        "{} {}: acc {:.4} ent {:.4}{}",
        record.condition,
        record.run,
        record.accuracy,
        record.ent.auroc,
        record
            .att
            .map(|a| format!(" att {:.4}", a.auroc))
            .unwrap_or_default()
    );
    Ok(RunArtifacts {
        record,
        history,
        params: trained.params,
        roc,
        pr,
    })
}

fn make_all_splits(spec: &ExperimentSpec, graph: &Graph) -> Result<Vec<SplitAssignment>> {
    (0..spec.splits)
        .map(|s| {
            make_splits(
                graph,
                spec.train_per_class,
                spec.val_per_class,
                spec.split_seed(s),
            )
        })
        .collect()
}

/// Runs every job over `graphs`, in parallel across runs when allowed.
/// Splits are drawn on `graphs[0]`; filtered variants share its nodes.
fn run_jobs(
    spec: &ExperimentSpec,
    graphs: &[Graph],
    jobs: Vec<Job>,
    opts: RunOptions,
) -> Result<Vec<RunArtifacts>> {
    let splits = make_all_splits(spec, &graphs[0])?;
    let across_runs = opts.exec.is_parallel() && jobs.len() > 1 && opts.workers != 1;
    let inner = if across_runs {
        Exec::Sequential
    } else {
        opts.exec
    };
    let inputs: Vec<GraphInput> = graphs
        .iter()
        .map(|g| GraphInput::new(g).with_exec(inner))
        .collect();
    let outer = if across_runs {
        Exec::Parallel
    } else {
        Exec::Sequential
    };
    let results = exec::with_workers(opts.workers, || {
        exec::map(outer, &jobs, |job| {
            run_one(
                spec,
                job,
                &graphs[job.graph],
                &inputs[job.graph],
                &splits[job.split],
            )
            .map_err(|e| Error::Run {
                run: format!("{}/split{}-seed{}", job.condition, job.split, job.r),
                source: Box::new(e),
            })
        })
    });
    results.into_iter().collect()
}

fn jobs_for(
    spec: &ExperimentSpec,
    condition: &str,
    graph: usize,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Vec<Job> {
    let mut jobs = Vec::new();
    for split in 0..spec.splits {
        for r in 0..spec.seeds_per_split {
            jobs.push(Job {
                condition: condition.to_string(),
                graph,
                model: model.clone(),
                train: train.clone(),
                split,
                r,
            });
        }
    }
    jobs
}

fn finish(
    spec: &ExperimentSpec,
    artifacts: Vec<RunArtifacts>,
    grid: Option<GridResult>,
) -> ExperimentOutput {
    let runs = artifacts.iter().map(|a| a.record.clone()).collect();
    ExperimentOutput {
        report: RunReport::new(spec.clone(), runs),
        artifacts,
        grid,
    }
}

fn load_graph(spec: &ExperimentSpec) -> Result<Graph> {
    spec.dataset
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs a dataset", spec.name)))?
        .load()
}

/// Trains the configured model on every (split, seed) and evaluates on test.
pub fn run_train_eval(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    let graph = load_graph(spec)?;
    let jobs = jobs_for(
        spec,
        spec.model.architecture.as_str(),
        0,
        &spec.model,
        &spec.train,
    );
    let artifacts = run_jobs(spec, &[graph], jobs, opts)?;
    Ok(finish(spec, artifacts, None))
}

/// Condition names of the edge ablation, in run order.
pub fn edge_conditions(fractions: &[f64]) -> Vec<String> {
    let mut out: Vec<String> = fractions
        .iter()
        .map(|f| format!("inter-removed-{f}"))
        .collect();
    out.push("intra-id-only".into());
    out.push("intra-ood-only".into());
    out
}

/// Trains per edge condition: inter edges removed at each fraction, then
/// intra-ID edges only and intra-OOD edges only. Removal draws use the
/// split seed of split 0 so every condition sees one fixed graph.
pub fn run_edge_ablation(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    let base = load_graph(spec)?;
    let seed = spec.split_seed(0);
    let mut graphs = vec![base.clone()];
    let names = edge_conditions(&spec.fractions);
    let mut jobs = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let filtered = if i < spec.fractions.len() {
            filter_edges(&base, EdgeClasses::INTRA, spec.fractions[i], seed)
        } else if i == spec.fractions.len() {
            filter_edges(&base, EdgeClasses::INTRA_ID, 1.0, seed)
        } else {
            filter_edges(&base, EdgeClasses::INTRA_OOD, 1.0, seed)
        };
        if filtered.edgeless {
            log::warn!("{name}: no edges left");
        }
        graphs.push(filtered.graph);
        jobs.extend(jobs_for(
            spec,
            name,
            graphs.len() - 1,
            &spec.model,
            &spec.train,
        ));
    }
    let artifacts = run_jobs(spec, &graphs, jobs, opts)?;
    Ok(finish(spec, artifacts, None))
}

/// Trains MLP and GCN with the spec's shared settings; curves go to `curves/`.
pub fn run_smoothing_roc(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    let graph = load_graph(spec)?;
    let mut jobs = Vec::new();
    for arch in [Architecture::Mlp, Architecture::Gcn] {
        let model = ModelConfig {
            architecture: arch,
            drop_edge: 0.0,
            ..spec.model.clone()
        };
        jobs.extend(jobs_for(spec, arch.as_str(), 0, &model, &spec.train));
    }
    let artifacts = run_jobs(spec, &[graph], jobs, opts)?;
    Ok(finish(spec, artifacts, None))
}

/// The seven regularizer masks, named after their active terms.
pub fn loss_masks(full: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    let with = |con: bool, ent: bool, dis: bool| LossWeights {
        beta: if con { full.beta } else { 0.0 },
        gamma: if ent { full.gamma } else { 0.0 },
        zeta: if dis { full.zeta } else { 0.0 },
        ..*full
    };
    vec![
        ("ce", with(false, false, false)),
        ("ce+con", with(true, false, false)),
        ("ce+ent", with(false, true, false)),
        ("ce+dis", with(false, false, true)),
        ("ce+con+ent", with(true, true, false)),
        ("ce+con+dis", with(true, false, true)),
        ("oodgat", with(true, true, true)),
    ]
}

/// Trains every regularizer mask with otherwise identical settings.
pub fn run_loss_ablation(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    run_loss_masks(spec, opts, &[])
}

/// Like [`run_loss_ablation`] but limited to the named masks (all when empty).
pub fn run_loss_masks(
    spec: &ExperimentSpec,
    opts: RunOptions,
    only: &[&str],
) -> Result<ExperimentOutput> {
    if spec.model.architecture != Architecture::Oodgat {
        return Err(Error::Config("loss ablation needs an oodgat model".into()));
    }
    let graph = load_graph(spec)?;
    let mut jobs = Vec::new();
    for (name, weights) in loss_masks(&spec.train.loss) {
        if !only.is_empty() && !only.contains(&name) {
            continue;
        }
        let train = TrainConfig {
            loss: weights,
            ..spec.train.clone()
        };
        jobs.extend(jobs_for(spec, name, 0, &spec.model, &train));
    }
    if jobs.is_empty() {
        return Err(Error::Config(format!("no loss mask named in {only:?}")));
    }
    let artifacts = run_jobs(spec, &[graph], jobs, opts)?;
    Ok(finish(spec, artifacts, None))
}

/// Ranks the grid on validation, then trains and tests the best cell.
pub fn run_gridsearch(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    let graph = load_graph(spec)?;
    let splits = make_all_splits(spec, &graph)?;
    let seeds: Vec<u64> = (0..spec.seeds_per_split)
        .map(|r| spec.model_seed(r))
        .collect();
    let grid = exec::with_workers(opts.workers, || {
        grid_search(
            &spec.grid,
            &spec.model,
            &spec.train,
            &graph,
            &splits,
            &seeds,
            opts.exec,
        )
    })?;
    let (model, train) = grid.best.apply(&spec.model, &spec.train);
    log::info!("best cell {:?}", grid.best);
    let best = ExperimentSpec {
        model,
        train,
        ..spec.clone()
    };
    let jobs = jobs_for(&best, "best", 0, &best.model, &best.train);
    let artifacts = run_jobs(&best, &[graph], jobs, opts)?;
    Ok(finish(&best, artifacts, Some(grid)))
}

/// Dispatches the run-based experiments.
pub fn run_experiment(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    match spec.name {
        ExperimentKind::TrainEval => run_train_eval(spec, opts),
        ExperimentKind::EdgeAblation => run_edge_ablation(spec, opts),
        ExperimentKind::SmoothingRoc => run_smoothing_roc(spec, opts),
        ExperimentKind::AblateLosses => run_loss_ablation(spec, opts),
        ExperimentKind::Gridsearch => run_gridsearch(spec, opts),
        other => Err(Error::Config(format!("{other} does not train models"))),
    }
}
