use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Decision;
use super::runner::TaskArtifact;
use super::LabelValue;
use crate::dsl::{evaluate_test, parse_constraint, DataUnitTest};
use crate::error::{Error, Result};
use crate::pipeline::{generate_unit_test, suggest_task_agnostic, GenerationContext, Generator};
use crate::profiler::{ProfileArtifact, ProfileParams};
use crate::tabular::{load_table, Dataset, TableFormat};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct CaseMeta {
    ground_truth: String,
    hidden_assumption: String,
}

/// A data–code pair with one batch that must pass and one that must be
/// rejected. On disk: `<id>/{sample.csv, task.py, pass.csv, reject.csv,
/// case.json}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseFixture {
    pub id: String,
    pub sample: Dataset,
    pub task: TaskArtifact,
    pub data_to_pass: Dataset,
    pub data_to_reject: Dataset,
    pub ground_truth: String,
    pub hidden_assumption: String,
}

impl CaseFixture {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Config(format!("bad case directory {}", dir.display())))?;
        let meta_path = dir.join("case.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CaseMeta = serde_json::from_str(&text)?;
        let table = |name: &str| load_table(dir.join(name), TableFormat::Csv);
        Ok(Self {
            task: TaskArtifact::new(id.clone(), dir.join("task.py")),
            id,
            sample: table("sample.csv")?,
            data_to_pass: table("pass.csv")?,
            data_to_reject: table("reject.csv")?,
            ground_truth: meta.ground_truth,
            hidden_assumption: meta.hidden_assumption,
        })
    }
}

/// Every case directory under `root`, by id.
pub fn load_cases(root: impl AsRef<Path>) -> Result<Vec<CaseFixture>> {
    let root = root.as_ref();
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("case.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(CaseFixture::load).collect()
}

/// Anything that turns a case's sample and code into a test.
pub trait CaseSystem {
    fn name(&self) -> &str;
    fn generate(&self, case: &CaseFixture) -> Result<DataUnitTest>;
}

/// The case's own ground-truth constraint.
pub struct GroundTruthSystem;

impl CaseSystem for GroundTruthSystem {
    fn name(&self) -> &str {
        "ground_truth"
    }

    fn generate(&self, case: &CaseFixture) -> Result<DataUnitTest> {
        let mut t = DataUnitTest::new(format!("{}-truth", case.id), case.id.clone());
        t.push(parse_constraint(&case.ground_truth)?.with_id("c1"))?;
        Ok(t)
    }
}

/// Accepts everything.
pub struct EmptySystem;

impl CaseSystem for EmptySystem {
    fn name(&self) -> &str {
        "empty"
    }

    fn generate(&self, case: &CaseFixture) -> Result<DataUnitTest> {
        Ok(DataUnitTest::new(format!("{}-empty", case.id), case.id.clone()))
    }
}

pub struct TaskAgnosticSystem;

impl CaseSystem for TaskAgnosticSystem {
    fn name(&self) -> &str {
        "task_agnostic"
    }

    fn generate(&self, case: &CaseFixture) -> Result<DataUnitTest> {
        let profile = ProfileArtifact::new(case.id.clone(), &case.sample, ProfileParams::default());
        Ok(suggest_task_agnostic(&profile))
    }
}

pub struct PipelineSystem<'a> {
    pub generator: Generator<'a>,
}

impl CaseSystem for PipelineSystem<'_> {
    fn name(&self) -> &str {
        "pipeline"
    }

    fn generate(&self, case: &CaseFixture) -> Result<DataUnitTest> {
        let profile = ProfileArtifact::new(case.id.clone(), &case.sample, ProfileParams::default());
        let ctx = GenerationContext::new(&case.id, "task.py", &case.task.stripped_source()?, profile);
        Ok(generate_unit_test(&self.generator, &ctx, &case.sample)?.test)
    }
}

/// Generate once, then decide on the pass batch (labelled safe) and the
/// reject batch (labelled erroneous).
pub fn eval_case(case: &CaseFixture, system: &dyn CaseSystem) -> Result<[Decision; 2]> {
    let test = system.generate(case)?;
    let decide = |batch_id: &str, d: &Dataset, label| Decision {
        task_id: case.id.clone(),
        batch_id: batch_id.to_owned(),
        predicted: evaluate_test(&test, d).verdict,
        label,
    };
    Ok([
        decide("pass", &case.data_to_pass, LabelValue::Safe),
        decide("reject", &case.data_to_reject, LabelValue::Erroneous),
    ])
}
