//! Prompt optimization from scarce pass/fail signals: score generated tests
//! by how often their failures coincide with task failures, feed the most
//! misleading constraints back to a proposer, and keep prompt sets that do
//! not lower the training score and win on held-out evaluation units.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::dsl::{evaluate_test, DataUnitTest, Status, TestReport};
use crate::error::{Error, Result};
use crate::graph::{AssumptionGraph, Backtrace};
use crate::pipeline::{
    generate_unit_test, placeholders, Backend, GenerationContext, Generator, PipelineConfig, PromptSet, TEMPLATES,
};
use crate::rng::SplitMix64;
use crate::tabular::Dataset;

/// Templates the proposer may rewrite.
pub const TUNABLE: [&str; 5] = [
    "column_dataflow",
    "multi_column_dataflow",
    "summarize_link",
    "gen_column_constraints",
    "gen_multi_column_constraints",
];

/// One observed execution: `outcome` is true when the task ran cleanly
/// (v = 1) and false when it failed (v = 0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub task_id: String,
    pub batch_id: String,
    pub outcome: bool,
}

impl Observation {
    pub fn new(task_id: &str, batch_id: &str, outcome: bool) -> Self {
        Self {
            task_id: task_id.to_owned(),
            batch_id: batch_id.to_owned(),
            outcome,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub train: Vec<Observation>,
    pub eval: Vec<Observation>,
}

impl ObservationSet {
    /// Pairs must be unique within a role and the roles disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for o in self.train.iter().chain(&self.eval) {
            if !seen.insert((&o.task_id, &o.batch_id)) {
                return Err(Error::Config(format!(
                    "observation ({}, {}) appears twice",
                    o.task_id, o.batch_id
                )));
            }
        }
        Ok(())
    }

    fn tasks(obs: &[Observation]) -> Vec<String> {
        obs.iter()
            .map(|o| o.task_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub task_id: String,
    pub column: String,
}

impl Unit {
    pub fn new(task_id: &str, column: &str) -> Self {
        Self {
            task_id: task_id.to_owned(),
            column: column.to_owned(),
        }
    }
}

/// A test's report on one batch next to the task's observed outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub batch_id: String,
    pub report: TestReport,
    pub outcome: bool,
}

/// Everything known about one task under one prompt set.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEvidence {
    pub test: DataUnitTest,
    pub graph: AssumptionGraph,
    pub runs: Vec<Run>,
}

fn status_of<'a>(report: &'a TestReport, constraint_id: &str) -> Option<&'a Status> {
    report
        .outcomes
        .iter()
        .find(|o| o.constraint_id == constraint_id)
        .map(|o| &o.status)
}

/// ŵ: conjunction of the column's constraint outcomes, errors excluded;
/// a column without constraints predicts success.
pub fn column_prediction(test: &DataUnitTest, column: &str, report: &TestReport) -> bool {
    test.constraints_on(column)
        .all(|c| status_of(report, &c.id) != Some(&Status::Fail))
}

/// Failures that coincide with task failures over all failures. `None` when
/// the prediction never fails.
pub fn failure_precision(pairs: impl IntoIterator<Item = (bool, bool)>) -> Option<f64> {
    let (mut failed, mut both) = (0usize, 0usize);
    for (predicted, outcome) in pairs {
        if !predicted {
            failed += 1;
            if !outcome {
                both += 1;
            }
        }
    }
    (failed > 0).then(|| both as f64 / failed as f64)
}

/// Column-level failure precision over the runs; absent when the column
/// never fails.
pub fn compute_cfpr(test: &DataUnitTest, column: &str, runs: &[Run]) -> Option<f64> {
    failure_precision(
        runs.iter()
            .map(|r| (column_prediction(test, column, &r.report), r.outcome)),
    )
}

/// Constraint-level failure precision; 0 when the constraint never fails.
pub fn compute_fpr(constraint_id: &str, runs: &[Run]) -> f64 {
    failure_precision(
        runs.iter()
            .map(|r| (status_of(&r.report, constraint_id) != Some(&Status::Fail), r.outcome)),
    )
    .unwrap_or(0.0)
}

fn failure_count(constraint_id: &str, runs: &[Run]) -> usize {
    runs.iter()
        .filter(|r| status_of(&r.report, constraint_id) == Some(&Status::Fail))
        .count()
}

/// Units with at least one failing constraint on at least one run, ordered
/// by task then column.
pub fn condense(evidence: &BTreeMap<String, TaskEvidence>) -> Vec<Unit> {
    let mut out = BTreeSet::new();
    for (task, ev) in evidence {
        for c in &ev.test.constraints {
            if failure_count(&c.id, &ev.runs) > 0 {
                for col in &c.columns {
                    out.insert(Unit::new(task, col));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Mean over units, absent values counting as 0.
pub fn mean_cfpr(values: &[Option<f64>]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("mean CFPr over no units".into()));
    }
    Ok(values.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFpr {
    pub column: String,
    pub constraint_id: String,
    pub fpr: f64,
    pub failures: usize,
}

/// Ordering for ids such as `c2` < `c10`.
fn id_key(id: &str) -> (&str, u64, &str) {
    let digits = id.len() - id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (head, tail) = id.split_at(id.len() - digits);
    (head, tail.parse().unwrap_or(0), id)
}

/// Per column, the `n_fb` failing constraints with the lowest FPr, ties by
/// constraint id.
pub fn select_bottom_k(fprs: &[ConstraintFpr], n_fb: usize) -> BTreeMap<String, Vec<ConstraintFpr>> {
    let mut by_col: BTreeMap<String, Vec<ConstraintFpr>> = BTreeMap::new();
    for f in fprs.iter().filter(|f| f.failures > 0) {
        by_col.entry(f.column.clone()).or_default().push(f.clone());
    }
    for list in by_col.values_mut() {
        list.sort_by(|a, b| {
            a.fpr
                .total_cmp(&b.fpr)
                .then_with(|| id_key(&a.constraint_id).cmp(&id_key(&b.constraint_id)))
        });
        list.truncate(n_fb);
    }
    by_col
}

/// What the proposer sees about one training unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitFeedback {
    pub unit: Unit,
    pub cfpr: Option<f64>,
    pub failing_batches: usize,
    /// Low-FPr constraints with their rendered text and backtrace.
    pub constraints: Vec<(ConstraintFpr, String, Backtrace)>,
}

fn ratio(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.2}"))
}

/// Structured feedback text; `sources` maps task id to the code the spans
/// point into.
pub fn build_feedback(units: &[UnitFeedback], sources: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (i, u) in units.iter().enumerate() {
        out += &format!(
            "Unit {}: task {}, column {}\n  column failure precision {} over {} failing batches\n",
            i + 1,
            u.unit.task_id,
            u.unit.column,
            ratio(u.cfpr),
            u.failing_batches
        );
        let lines: Vec<&str> = sources.get(&u.unit.task_id).map_or(Vec::new(), |s| s.lines().collect());
        for (f, text, trace) in &u.constraints {
            out += &format!(
                "  constraint {}: {text}\n    failure precision {:.2} over {} failures\n",
                f.constraint_id, f.fpr, f.failures
            );
            for a in &trace.assumptions {
                out += &format!("    assumption {}: {}\n", a.id, a.text);
            }
            for s in &trace.spans {
                out += &format!("    code {s}\n");
                for n in s.lines() {
                    if let Some(l) = lines.get(n - 1) {
                        out += &format!("      {n:>4} | {l}\n");
                    }
                }
            }
        }
    }
    out
}

/// Produces a candidate prompt set from feedback. `Ok(None)` means the
/// proposal was unusable and is skipped.
pub trait Proposer {
    fn propose(&mut self, current: &PromptSet, feedback: &str) -> Result<Option<PromptSet>>;
}

/// Apply `{name: text}` updates, carrying other templates over. Unknown or
/// non-tunable names, empty texts and placeholders outside a template's
/// allowed set are rejected.
pub fn apply_updates(
    current: &PromptSet,
    updates: &BTreeMap<String, String>,
    name: &str,
) -> std::result::Result<PromptSet, String> {
    let mut next = current.clone();
    next.name = name.to_owned();
    for (template, text) in updates {
        if !TUNABLE.contains(&template.as_str()) {
            return Err(format!("template {template:?} cannot be updated"));
        }
        if text.trim().is_empty() {
            return Err(format!("template {template} would be empty"));
        }
        let allowed = TEMPLATES
            .iter()
            .find(|(n, _)| n == template)
            .map(|(_, p)| *p)
            .unwrap_or(&[]);
        if let Some(bad) = placeholders(text).into_iter().find(|p| !allowed.contains(p)) {
            return Err(format!("template {template} uses unknown placeholder {bad}"));
        }
        next.templates.insert(template.clone(), text.clone());
    }
    Ok(next)
}

/// Replays a fixed list of updates, one per call; `None` entries and calls
/// past the end yield no proposal.
pub struct ScriptedProposer {
    script: Vec<Option<BTreeMap<String, String>>>,
    calls: usize,
}

impl ScriptedProposer {
    pub fn new(script: Vec<Option<BTreeMap<String, String>>>) -> Self {
        Self { script, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Proposer for ScriptedProposer {
    fn propose(&mut self, current: &PromptSet, _feedback: &str) -> Result<Option<PromptSet>> {
        self.calls += 1;
        let step = self.script.get(self.calls - 1).cloned().flatten();
        Ok(step.and_then(|u| apply_updates(current, &u, &format!("{}-p{}", current.name, self.calls)).ok()))
    }
}

/// Asks a model through the `proposer_instruction` template for
/// `{"updates": {"<template>": "<text>"}}`.
pub struct ModelProposer<'a> {
    pub backend: &'a dyn Backend,
    pub config: PipelineConfig,
    pub base_name: String,
    calls: usize,
}

impl<'a> ModelProposer<'a> {
    pub fn new(backend: &'a dyn Backend, config: PipelineConfig, base_name: &str) -> Self {
        Self {
            backend,
            config,
            base_name: base_name.to_owned(),
            calls: 0,
        }
    }
}

impl Proposer for ModelProposer<'_> {
    fn propose(&mut self, current: &PromptSet, feedback: &str) -> Result<Option<PromptSet>> {
        self.calls += 1;
        let shown: BTreeMap<&str, &str> = TUNABLE
            .iter()
            .filter_map(|n| current.templates.get(*n).map(|t| (*n, t.as_str())))
            .collect();
        let prompts = serde_json::to_string_pretty(&shown)?;
        let name = format!("{}-p{}", self.base_name, self.calls);
        let gen = Generator::new(self.backend, current, &self.config);
        let result = gen.ask(
            "proposer_instruction",
            "sifta__proposal".into(),
            &[("prompts", &prompts), ("feedback", feedback)],
            |v: &Json| {
                let updates: BTreeMap<String, String> = v
                    .get("updates")
                    .and_then(|u| serde_json::from_value(u.clone()).ok())
                    .ok_or_else(|| "expected {\"updates\": {name: text}}".to_owned())?;
                apply_updates(current, &updates, &name)
            },
        );
        match result {
            Ok(p) => Ok(Some(p)),
            Err(e @ (Error::Generation(_) | Error::Backend(_))) => {
                log::warn!("proposal {} skipped: {e}", self.calls);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Supplies generated tests and batch data to the optimizer.
pub trait SiftaEnv {
    fn generate(&self, prompts: &PromptSet, task_id: &str) -> Result<(DataUnitTest, AssumptionGraph)>;
    fn batch(&self, batch_id: &str) -> Result<Dataset>;
    /// Code that span line numbers refer to.
    fn source(&self, task_id: &str) -> Result<String>;
}

/// One task as the generation pipeline sees it.
#[derive(Clone, Debug)]
pub struct TaskInput {
    pub context: GenerationContext,
    pub sample: Dataset,
}

/// [`SiftaEnv`] backed by the generation pipeline.
pub struct PipelineEnv<'a> {
    pub backend: &'a dyn Backend,
    pub config: PipelineConfig,
    pub tasks: BTreeMap<String, TaskInput>,
    pub batches: BTreeMap<String, Dataset>,
}

impl SiftaEnv for PipelineEnv<'_> {
    fn generate(&self, prompts: &PromptSet, task_id: &str) -> Result<(DataUnitTest, AssumptionGraph)> {
        let t = self
            .tasks
            .get(task_id)
            .ok_or_else(|| Error::Config(format!("unknown task {task_id}")))?;
        let gen = Generator::new(self.backend, prompts, &self.config);
        let out = generate_unit_test(&gen, &t.context, &t.sample)?;
        Ok((out.test, out.graph))
    }

    fn batch(&self, batch_id: &str) -> Result<Dataset> {
        self.batches
            .get(batch_id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown batch {batch_id}")))
    }

    fn source(&self, task_id: &str) -> Result<String> {
        self.tasks
            .get(task_id)
            .map(|t| t.context.source.clone())
            .ok_or_else(|| Error::Config(format!("unknown task {task_id}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftaConfig {
    pub n_round: usize,
    pub b_eval: usize,
    pub n_train: usize,
    pub n_fb: usize,
    pub n_eval: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for SiftaConfig {
    fn default() -> Self {
        Self {
            n_round: 3,
            b_eval: 15,
            n_train: 3,
            n_fb: 2,
            n_eval: 10,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl SiftaConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_round", self.n_round),
            ("b_eval", self.b_eval),
            ("n_train", self.n_train),
            ("n_fb", self.n_fb),
            ("n_eval", self.n_eval),
            ("early_stop_patience", self.early_stop_patience),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("sifta {name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// `⌊b_remain / (n_round − t + 1)⌋` for round `t` (1-based).
pub fn round_budget(b_remain: usize, n_round: usize, t: usize) -> usize {
    b_remain / (n_round - t + 1)
}

/// One line of `sifta_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub budget_remaining: usize,
    pub train_score: f64,
    pub accepted: bool,
    pub eval_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub budget: usize,
    pub train_units: Vec<Unit>,
    pub eval_units: Vec<Unit>,
    pub start_eval_score: f64,
    /// Prompt set names with their eval scores, starting set first.
    pub candidates: Vec<(String, f64)>,
    pub chosen: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: PromptSet,
    pub best_eval_score: f64,
    pub rounds: Vec<RoundTrace>,
    pub log: Vec<LogRecord>,
    /// Candidate eval-sample scorings charged against `b_eval`.
    pub charged: usize,
    pub proposals: usize,
    pub early_stopped: bool,
}

pub fn write_log(records: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text += &serde_json::to_string(r)?;
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    Train,
    Eval,
}

/// Caches generated tests and their reports per prompt fingerprint.
struct Scorer<'a> {
    env: &'a dyn SiftaEnv,
    obs: &'a ObservationSet,
    tests: HashMap<(String, String), (DataUnitTest, AssumptionGraph)>,
    evidence: HashMap<(String, String, Role), TaskEvidence>,
    batches: HashMap<String, Dataset>,
}

impl<'a> Scorer<'a> {
    fn new(env: &'a dyn SiftaEnv, obs: &'a ObservationSet) -> Self {
        Self {
            env,
            obs,
            tests: HashMap::new(),
            evidence: HashMap::new(),
            batches: HashMap::new(),
        }
    }

    fn generated(&mut self, p: &PromptSet, task: &str) -> (DataUnitTest, AssumptionGraph) {
        let key = (p.fingerprint(), task.to_owned());
        if let Some(t) = self.tests.get(&key) {
            return t.clone();
        }
        let t = self.env.generate(p, task).unwrap_or_else(|e| {
            log::warn!("generation for task {task} under {} failed: {e}", p.name);
            (DataUnitTest::new(format!("{task}-test"), task), AssumptionGraph::new())
        });
        self.tests.insert(key, t.clone());
        t
    }

    fn evidence(&mut self, p: &PromptSet, task: &str, role: Role) -> Result<&TaskEvidence> {
        let key = (p.fingerprint(), task.to_owned(), role);
        if !self.evidence.contains_key(&key) {
            let (test, graph) = self.generated(p, task);
            let obs = match role {
                Role::Train => &self.obs.train,
                Role::Eval => &self.obs.eval,
            };
            let mut runs = Vec::new();
            for o in obs.iter().filter(|o| o.task_id == task) {
                if !self.batches.contains_key(&o.batch_id) {
                    let d = self.env.batch(&o.batch_id)?;
                    self.batches.insert(o.batch_id.clone(), d);
                }
                let mut report = evaluate_test(&test, &self.batches[&o.batch_id]);
                report.batch_id = o.batch_id.clone();
                runs.push(Run {
                    batch_id: o.batch_id.clone(),
                    report,
                    outcome: o.outcome,
                });
            }
            self.evidence.insert(key.clone(), TaskEvidence { test, graph, runs });
        }
        Ok(&self.evidence[&key])
    }

    fn cfprs(&mut self, p: &PromptSet, units: &[Unit], role: Role) -> Result<Vec<Option<f64>>> {
        units
            .iter()
            .map(|u| {
                let ev = self.evidence(p, &u.task_id, role)?;
                Ok(compute_cfpr(&ev.test, &u.column, &ev.runs))
            })
            .collect()
    }

    fn mean(&mut self, p: &PromptSet, units: &[Unit], role: Role) -> Result<f64> {
        if units.is_empty() {
            return Ok(0.0);
        }
        mean_cfpr(&self.cfprs(p, units, role)?)
    }

    fn condense(&mut self, p: &PromptSet) -> Result<Vec<Unit>> {
        let mut map = BTreeMap::new();
        for task in ObservationSet::tasks(&self.obs.train) {
            let ev = self.evidence(p, &task, Role::Train)?.clone();
            map.insert(task, ev);
        }
        Ok(condense(&map))
    }

    fn eval_units(&mut self, p: &PromptSet) -> Vec<Unit> {
        let mut out = Vec::new();
        for task in ObservationSet::tasks(&self.obs.eval) {
            let (test, _) = self.generated(p, &task);
            let cols: BTreeSet<String> = test.accessed_columns.iter().cloned().collect();
            out.extend(cols.iter().map(|c| Unit::new(&task, c)));
        }
        out
    }

    fn feedback(&mut self, p: &PromptSet, units: &[Unit], n_fb: usize) -> Result<String> {
        let mut items = Vec::new();
        let mut sources = BTreeMap::new();
        for u in units {
            let ev = self.evidence(p, &u.task_id, Role::Train)?.clone();
            let fprs: Vec<ConstraintFpr> = ev
                .test
                .constraints_on(&u.column)
                .map(|c| ConstraintFpr {
                    column: u.column.clone(),
                    constraint_id: c.id.clone(),
                    fpr: compute_fpr(&c.id, &ev.runs),
                    failures: failure_count(&c.id, &ev.runs),
                })
                .collect();
            let low = select_bottom_k(&fprs, n_fb).remove(&u.column).unwrap_or_default();
            let mut constraints = Vec::new();
            for f in low {
                let text = ev
                    .test
                    .constraint(&f.constraint_id)
                    .map(|c| c.render())
                    .unwrap_or_default();
                let trace = ev.graph.backtrace(&ev.test, &f.constraint_id).unwrap_or_default();
                constraints.push((f, text, trace));
            }
            let failing_batches = ev
                .runs
                .iter()
                .filter(|r| !column_prediction(&ev.test, &u.column, &r.report))
                .count();
            items.push(UnitFeedback {
                unit: u.clone(),
                cfpr: compute_cfpr(&ev.test, &u.column, &ev.runs),
                failing_batches,
                constraints,
            });
            if !sources.contains_key(&u.task_id) {
                sources.insert(u.task_id.clone(), self.env.source(&u.task_id)?);
            }
        }
        Ok(build_feedback(&items, &sources))
    }
}

fn sample_units(units: &[Unit], k: usize, rng: &mut SplitMix64) -> Vec<Unit> {
    let mut idx = rng.sample_indices(units.len(), k);
    idx.sort_unstable();
    idx.into_iter().map(|i| units[i].clone()).collect()
}

/// Rounds of condense, sample, propose and gate, each ending with the best
/// candidate by eval score. Stops early after `early_stop_patience`
/// consecutive proposals that fail to beat the round's best candidate.
pub fn optimize(
    config: &SiftaConfig,
    obs: &ObservationSet,
    initial: &PromptSet,
    env: &dyn SiftaEnv,
    proposer: &mut dyn Proposer,
) -> Result<OptimizeResult> {
    config.validate()?;
    obs.validate()?;
    initial.validate()?;
    let mut scorer = Scorer::new(env, obs);
    let mut current = initial.clone();
    let mut current_score = 0.0;
    let mut b_remain = config.b_eval;
    let mut result = OptimizeResult {
        best: initial.clone(),
        best_eval_score: 0.0,
        rounds: Vec::new(),
        log: Vec::new(),
        charged: 0,
        proposals: 0,
        early_stopped: false,
    };
    let mut stale = 0;

    for t in 1..=config.n_round {
        let mut rng = SplitMix64::new(config.seed.wrapping_add(t as u64));
        let train_cond = scorer.condense(&current)?;
        let all_eval = scorer.eval_units(&current);
        let eval_sample = sample_units(&all_eval, config.n_eval, &mut rng);
        let eval_score = scorer.mean(&current, &eval_sample, Role::Eval)?;
        let mut b_t = round_budget(b_remain, config.n_round, t);
        let budget = b_t;
        let mut candidates = vec![(current.clone(), eval_score)];
        log::info!(
            "round {t}: {} training units, {} eval units, eval score {eval_score:.4}, budget {b_t}",
            train_cond.len(),
            eval_sample.len()
        );

        while b_t > 0 && !train_cond.is_empty() && !result.early_stopped {
            let train_sample = sample_units(&train_cond, config.n_train, &mut rng);
            let train_score = scorer.mean(&current, &train_sample, Role::Train)?;
            let feedback = scorer.feedback(&current, &train_sample, config.n_fb)?;
            result.proposals += 1;
            let best_so_far = candidates.iter().map(|(_, s)| *s).fold(f64::MIN, f64::max);
            let mut improved = false;
            let mut record = LogRecord {
                round: t,
                budget_remaining: b_remain,
                train_score,
                accepted: false,
                eval_score: None,
            };
            if let Some(next) = proposer.propose(&current, &feedback)? {
                let next_train = scorer.mean(&next, &train_sample, Role::Train)?;
                if next_train >= train_score {
                    let next_eval = scorer.mean(&next, &eval_sample, Role::Eval)?;
                    result.charged += 1;
                    b_t -= 1;
                    b_remain -= 1;
                    improved = next_eval > best_so_far;
                    record.accepted = true;
                    record.eval_score = Some(next_eval);
                    record.budget_remaining = b_remain;
                    candidates.push((next, next_eval));
                }
            }
            result.log.push(record);
            stale = if improved { 0 } else { stale + 1 };
            if stale >= config.early_stop_patience {
                log::info!("stopping after {stale} proposals without improvement");
                result.early_stopped = true;
            }
        }

        let (best, best_score) = candidates
            .iter()
            .fold(None::<&(PromptSet, f64)>, |acc, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            })
            .cloned()
            .expect("candidates start non-empty");
        result.rounds.push(RoundTrace {
            round: t,
            budget,
            train_units: train_cond,
            eval_units: eval_sample,
            start_eval_score: eval_score,
            candidates: candidates.iter().map(|(p, s)| (p.name.clone(), *s)).collect(),
            chosen: best.name.clone(),
        });
        current = best;
        current_score = best_score;
        if result.early_stopped {
            break;
        }
    }
    result.best = current;
    result.best_eval_score = current_score;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_constraint, ConstraintOutcome, Verdict};

    fn report(statuses: &[(&str, Status)]) -> TestReport {
        TestReport {
            test_id: "t".into(),
            batch_id: "b".into(),
            outcomes: statuses
                .iter()
                .map(|(id, s)| ConstraintOutcome {
                    constraint_id: id.to_string(),
                    status: *s,
                    measured: None,
                    message: String::new(),
                    error: None,
                })
                .collect(),
            verdict: Verdict::Pass,
        }
    }

    fn test_on_email() -> DataUnitTest {
        let mut t = DataUnitTest::new("t", "t");
        t.push(parse_constraint("isComplete(\"email\")").unwrap().with_id("c1"))
            .unwrap();
        t.push(
            parse_constraint("hasPattern(\"email\", \".*@.*\")")
                .unwrap()
                .with_id("c2"),
        )
        .unwrap();
        t
    }

    #[test]
    fn column_prediction_is_a_conjunction_without_errors() {
        use Status::*;
        let t = test_on_email();
        assert!(column_prediction(&t, "email", &report(&[("c1", Pass), ("c2", Pass)])));
        assert!(!column_prediction(&t, "email", &report(&[("c1", Pass), ("c2", Fail)])));
        assert!(column_prediction(&t, "email", &report(&[("c1", Error), ("c2", Pass)])));
        assert!(column_prediction(&t, "name", &report(&[("c1", Fail)])));
    }

    fn runs(fails: &[bool], outcomes: &[bool]) -> Vec<Run> {
        fails
            .iter()
            .zip(outcomes)
            .enumerate()
            .map(|(i, (f, o))| Run {
                batch_id: format!("D{}", i + 1),
                report: report(&[
                    ("c1", if *f { Status::Fail } else { Status::Pass }),
                    ("c2", Status::Pass),
                ]),
                outcome: *o,
            })
            .collect()
    }

    #[test]
    fn cfpr_and_fpr_examples() {
        let t = test_on_email();
        // ŵ fails on D1 and D3, the task only on D1.
        let r = runs(&[true, false, true], &[false, true, true]);
        assert_eq!(compute_cfpr(&t, "email", &r), Some(0.5));
        assert_eq!(compute_cfpr(&t, "email", &runs(&[false, false], &[false, true])), None);
        assert_eq!(compute_cfpr(&t, "email", &runs(&[true], &[false])), Some(1.0));
        assert_eq!(compute_fpr("c1", &runs(&[false, true], &[true, true])), 0.0);
        assert_eq!(compute_fpr("c2", &r), 0.0);
        assert_eq!(compute_fpr("c1", &runs(&[true, true], &[false, false])), 1.0);
    }

    #[test]
    fn mean_and_bottom_k() {
        assert_eq!(mean_cfpr(&[Some(1.0), Some(0.5)]).unwrap(), 0.75);
        assert_eq!(mean_cfpr(&[None]).unwrap(), 0.0);
        assert!(mean_cfpr(&[]).is_err());
        let f = |id: &str, fpr: f64| ConstraintFpr {
            column: "x".into(),
            constraint_id: id.into(),
            fpr,
            failures: 1,
        };
        let picked = select_bottom_k(&[f("c3", 1.0), f("c2", 0.5), f("c1", 0.0)], 2);
        let ids: Vec<&str> = picked["x"].iter().map(|c| c.constraint_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c2"]);
        let tie = select_bottom_k(&[f("c10", 0.0), f("c4", 0.0), f("c1", 0.0)], 2);
        let ids: Vec<&str> = tie["x"].iter().map(|c| c.constraint_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c4"]);
        assert_eq!(select_bottom_k(&[f("c1", 0.2)], 5)["x"].len(), 1);
    }

    #[test]
    fn budget_schedule() {
        let mut remain = 15;
        let mut got = Vec::new();
        for t in 1..=3 {
            let b = round_budget(remain, 3, t);
            got.push(b);
            remain -= b;
        }
        assert_eq!(got, [5, 5, 5]);
        assert_eq!(round_budget(7, 3, 1), 2);
    }

    #[test]
    fn updates_are_validated() {
        let p = PromptSet::default();
        let mut u = BTreeMap::new();
        u.insert(
            "gen_column_constraints".to_string(),
            "{{column}} {{assumptions}}".to_string(),
        );
        let next = apply_updates(&p, &u, "n").unwrap();
        assert_eq!(next.templates["gen_column_constraints"], "{{column}} {{assumptions}}");
        assert_eq!(next.templates["summarize_link"], p.templates["summarize_link"]);
        assert_eq!(apply_updates(&p, &BTreeMap::new(), "n").unwrap().templates, p.templates);
        u.insert("gen_column_constraints".to_string(), "{{code}}".to_string());
        assert!(apply_updates(&p, &u, "n").is_err());
        let mut other = BTreeMap::new();
        other.insert("discover_column_access".to_string(), "x".to_string());
        assert!(apply_updates(&p, &other, "n").is_err());
    }
}
