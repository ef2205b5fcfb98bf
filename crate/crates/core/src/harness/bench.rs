use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, DecisionMatrix, Metrics};
use super::runner::TaskArtifact;
use super::scenarios::{make_scenarios_grouped, Scenario, ScenarioSpec};
use super::{label_batch, Label, LabelValue};
use crate::dsl::{evaluate_test, DataUnitTest};
use crate::error::{Error, Result};
use crate::errorgen::{inject, ErrorConfig};
use crate::par::fan_out;
use crate::pipeline::{generate_unit_test, suggest_task_agnostic, Generated, GenerationContext, Generator};
use crate::profiler::{ProfileArtifact, ProfileParams};
use crate::sifta::{Observation, ObservationSet, PipelineEnv, TaskInput};
use crate::tabular::{load_table, read_csv, Batch, Dataset, TableFormat};

/// `bench.json`. Paths are relative to the manifest. Clean batches live in
/// `<sample dir>/batches/<id>.csv`; each error config
/// `<sample dir>/errors/<id>.json` is applied to the sample to make a batch
/// with the config's id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    #[serde(default)]
    pub seed: u64,
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Defaults to the sample's directory name.
    #[serde(default)]
    pub name: Option<String>,
    pub sample: PathBuf,
    #[serde(default)]
    pub batches: Vec<String>,
    pub tasks: Vec<TaskArtifact>,
    #[serde(default)]
    pub error_configs: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct BenchDataset {
    pub name: String,
    pub sample: Dataset,
    pub tasks: Vec<TaskArtifact>,
    pub batches: Vec<Batch>,
}

#[derive(Clone, Debug)]
pub struct Bench {
    pub seed: u64,
    pub datasets: Vec<BenchDataset>,
}

/// The batch as a task will read it: serialized to CSV and parsed back.
fn as_read(d: &Dataset) -> Result<Dataset> {
    read_csv(d.to_csv_string().as_bytes())
}

impl Bench {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let path = manifest.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: BenchManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut datasets = Vec::new();
        for entry in m.datasets {
            let sample_path = base.join(&entry.sample);
            let dir = sample_path.parent().unwrap_or(base).to_path_buf();
            let name = entry.name.clone().unwrap_or_else(|| {
                dir.file_name()
                    .map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
            });
            let sample = load_table(&sample_path, TableFormat::Csv)?;
            let mut batches = Vec::new();
            for id in &entry.batches {
                batches.push(Batch::load(dir.join("batches"), id)?);
            }
            for id in &entry.error_configs {
                let cfg = ErrorConfig::load(dir.join("errors").join(format!("{id}.json")))?;
                let mut b = inject(&sample, &cfg, id.clone())?;
                b.data = as_read(&b.data)?;
                batches.push(b);
            }
            let tasks = entry.tasks.into_iter().map(|t| t.resolved(base)).collect();
            datasets.push(BenchDataset {
                name,
                sample,
                tasks,
                batches,
            });
        }
        let bench = Bench { seed: m.seed, datasets };
        bench.check_ids()?;
        Ok(bench)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.datasets {
            for id in d.tasks.iter().map(|t| &t.id).chain(d.batches.iter().map(|b| &b.id)) {
                if !seen.insert(id.clone()) {
                    return Err(Error::Config(format!("id {id:?} is used twice in the manifest")));
                }
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.datasets
            .iter()
            .flat_map(|d| d.tasks.iter().map(|t| t.id.clone()))
            .collect()
    }

    pub fn batch_groups(&self) -> Vec<Vec<String>> {
        self.datasets
            .iter()
            .map(|d| d.batches.iter().map(|b| b.id.clone()).collect())
            .collect()
    }

    pub fn task(&self, id: &str) -> Option<(&BenchDataset, &TaskArtifact)> {
        self.datasets
            .iter()
            .find_map(|d| d.tasks.iter().find(|t| t.id == id).map(|t| (d, t)))
    }

    pub fn batch(&self, id: &str) -> Option<&Batch> {
        self.datasets.iter().flat_map(|d| &d.batches).find(|b| b.id == id)
    }

    pub fn scenarios(&self) -> ScenarioSpec {
        make_scenarios_grouped(&self.task_ids(), &self.batch_groups(), self.seed)
    }

    /// (task, batch) pairs within each dataset, restricted to a scenario's
    /// tasks and batches when one is given.
    pub fn pairs(&self, scenario: Option<Scenario>) -> Vec<(String, String)> {
        let spec = scenario.map(|s| (self.scenarios(), s));
        let keep_task = |id: &String| spec.as_ref().is_none_or(|(sp, s)| sp.tasks_for(*s).contains(id));
        let keep_batch = |id: &String| spec.as_ref().is_none_or(|(sp, s)| sp.batches_for(*s).contains(id));
        let mut out = Vec::new();
        for d in &self.datasets {
            for t in d.tasks.iter().filter(|t| keep_task(&t.id)) {
                for b in d.batches.iter().filter(|b| keep_batch(&b.id)) {
                    out.push((t.id.clone(), b.id.clone()));
                }
            }
        }
        out
    }

    /// Run every pair with assertions enabled, `workers` at a time.
    pub fn label(&self, pairs: &[(String, String)], workers: usize) -> Result<Vec<Label>> {
        fan_out(pairs, workers, |(t, b)| {
            let (_, task) = self.task(t).ok_or_else(|| Error::Config(format!("unknown task {t}")))?;
            let batch = self
                .batch(b)
                .ok_or_else(|| Error::Config(format!("unknown batch {b}")))?;
            label_batch(task, batch)
        })
        .into_iter()
        .collect()
    }

    pub fn context(&self, task_id: &str) -> Result<TaskInput> {
        let (d, task) = self
            .task(task_id)
            .ok_or_else(|| Error::Config(format!("unknown task {task_id}")))?;
        let profile = ProfileArtifact::new(d.name.clone(), &d.sample, ProfileParams::default());
        let file = task
            .script_path
            .file_name()
            .map_or("task.py".into(), |n| n.to_string_lossy().into_owned());
        Ok(TaskInput {
            context: GenerationContext::new(task_id, &file, &task.stripped_source()?, profile),
            sample: d.sample.clone(),
        })
    }

    /// Generated tests for every task, in manifest order.
    pub fn generate(&self, gen: &Generator<'_>) -> Result<BTreeMap<String, Generated>> {
        let mut out = BTreeMap::new();
        for id in self.task_ids() {
            let input = self.context(&id)?;
            out.insert(id, generate_unit_test(gen, &input.context, &input.sample)?);
        }
        Ok(out)
    }

    /// Optimization environment over every task and batch.
    pub fn sifta_env<'a>(&self, gen: &Generator<'a>) -> Result<PipelineEnv<'a>> {
        let mut tasks = BTreeMap::new();
        for id in self.task_ids() {
            tasks.insert(id.clone(), self.context(&id)?);
        }
        let batches = self
            .datasets
            .iter()
            .flat_map(|d| &d.batches)
            .map(|b| (b.id.clone(), b.data.clone()))
            .collect();
        Ok(PipelineEnv {
            backend: gen.backend,
            config: gen.config.clone(),
            tasks,
            batches,
        })
    }

    /// Train observations are train tasks on observed batches, eval
    /// observations eval tasks on observed batches.
    pub fn observations(&self, labels: &[Label]) -> ObservationSet {
        let spec = self.scenarios();
        let pick = |tasks: &[String]| -> Vec<Observation> {
            labels
                .iter()
                .filter(|l| tasks.contains(&l.task_id) && spec.obs_batches.contains(&l.batch_id))
                .map(|l| Observation::new(&l.task_id, &l.batch_id, l.value == LabelValue::Safe))
                .collect()
        };
        ObservationSet {
            train: pick(&spec.train_tasks),
            eval: pick(&spec.eval_tasks),
        }
    }
}

pub fn decide(tests: &BTreeMap<String, DataUnitTest>, bench: &Bench, labels: &[Label]) -> Result<DecisionMatrix> {
    let mut m = DecisionMatrix::default();
    for l in labels {
        let test = tests
            .get(&l.task_id)
            .ok_or_else(|| Error::Config(format!("no test for task {}", l.task_id)))?;
        let batch = bench
            .batch(&l.batch_id)
            .ok_or_else(|| Error::Config(format!("unknown batch {}", l.batch_id)))?;
        m.push(
            &l.task_id,
            &l.batch_id,
            evaluate_test(test, &batch.data).verdict,
            l.value,
        );
    }
    Ok(m)
}

/// Metrics per system for one scenario (`all` for the full matrix).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub decisions: usize,
    pub erroneous: usize,
    pub systems: BTreeMap<String, Metrics>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub labels: Vec<Label>,
    pub matrices: BTreeMap<String, DecisionMatrix>,
    pub generated: BTreeMap<String, Generated>,
}

/// Label the scenario's pairs, generate task-aware tests, and score them
/// next to the task-agnostic baseline.
pub fn run_bench(bench: &Bench, scenario: Option<Scenario>, gen: &Generator<'_>, workers: usize) -> Result<BenchRun> {
    let pairs = bench.pairs(scenario);
    let labels = bench.label(&pairs, workers)?;
    let generated = bench.generate(gen)?;
    let aware: BTreeMap<String, DataUnitTest> = generated.iter().map(|(k, g)| (k.clone(), g.test.clone())).collect();
    let mut agnostic = BTreeMap::new();
    for d in &bench.datasets {
        let profile = ProfileArtifact::new(d.name.clone(), &d.sample, ProfileParams::default());
        let t = suggest_task_agnostic(&profile);
        for task in &d.tasks {
            agnostic.insert(task.id.clone(), t.clone());
        }
    }
    let mut matrices = BTreeMap::new();
    matrices.insert("task_aware".to_owned(), decide(&aware, bench, &labels)?);
    matrices.insert("task_agnostic".to_owned(), decide(&agnostic, bench, &labels)?);
    let report = BenchReport {
        scenario: scenario.map_or("all", Scenario::name).to_owned(),
        decisions: labels.len(),
        erroneous: labels.iter().filter(|l| l.value == LabelValue::Erroneous).count(),
        systems: matrices.iter().map(|(k, m)| (k.clone(), evaluate(m))).collect(),
    };
    Ok(BenchRun {
        report,
        labels,
        matrices,
        generated,
    })
}
