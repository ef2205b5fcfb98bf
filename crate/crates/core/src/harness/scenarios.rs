use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Optimization tasks on batches not seen during optimization.
    NewData,
    /// Held-out tasks on the observed batches.
    NewTasks,
    /// Held-out tasks on unseen batches.
    NewDataNewTasks,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::NewData, Scenario::NewTasks, Scenario::NewDataNewTasks];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::NewData => "new_data",
            Scenario::NewTasks => "new_tasks",
            Scenario::NewDataNewTasks => "new_data_new_tasks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scenario::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Seeded task split (train/eval/test, 3:3:4) and batch split (obs/new, 1:1).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub train_tasks: Vec<String>,
    pub eval_tasks: Vec<String>,
    pub test_tasks: Vec<String>,
    pub obs_batches: Vec<String>,
    pub new_batches: Vec<String>,
}

/// Train and eval each get `⌊0.3·n⌋` tasks, test the rest; the observed
/// half of the batches is `⌈m/2⌉`.
pub fn split_sizes(tasks: usize, batches: usize) -> (usize, usize, usize, usize, usize) {
    let train = tasks * 3 / 10;
    let eval = tasks * 3 / 10;
    let obs = batches.div_ceil(2);
    (train, eval, tasks - train - eval, obs, batches - obs)
}

fn shuffled(ids: &[String], rng: &mut SplitMix64) -> Vec<String> {
    let mut v = ids.to_vec();
    rng.shuffle(&mut v);
    v
}

pub fn make_scenarios(tasks: &[String], batches: &[String], seed: u64) -> ScenarioSpec {
    make_scenarios_grouped(tasks, &[batches.to_vec()], seed)
}

/// As [`make_scenarios`], but batches are split 1:1 within each group (one
/// group per dataset) so every dataset has observed and new batches.
pub fn make_scenarios_grouped(tasks: &[String], batch_groups: &[Vec<String>], seed: u64) -> ScenarioSpec {
    let mut rng = SplitMix64::new(seed);
    let t = shuffled(tasks, &mut rng);
    let (train, eval, ..) = split_sizes(t.len(), 0);
    let mut obs_batches = Vec::new();
    let mut new_batches = Vec::new();
    for group in batch_groups {
        let b = shuffled(group, &mut rng);
        let obs = b.len().div_ceil(2);
        obs_batches.extend_from_slice(&b[..obs]);
        new_batches.extend_from_slice(&b[obs..]);
    }
    ScenarioSpec {
        seed,
        train_tasks: t[..train].to_vec(),
        eval_tasks: t[train..train + eval].to_vec(),
        test_tasks: t[train + eval..].to_vec(),
        obs_batches,
        new_batches,
    }
}

impl ScenarioSpec {
    pub fn tasks_for(&self, s: Scenario) -> Vec<String> {
        match s {
            Scenario::NewData => self.train_tasks.iter().chain(&self.eval_tasks).cloned().collect(),
            Scenario::NewTasks | Scenario::NewDataNewTasks => self.test_tasks.clone(),
        }
    }

    pub fn batches_for(&self, s: Scenario) -> Vec<String> {
        match s {
            Scenario::NewTasks => self.obs_batches.clone(),
            Scenario::NewData | Scenario::NewDataNewTasks => self.new_batches.clone(),
        }
    }

    /// Every (task, batch) pair in the scenario's decision set.
    pub fn decision_set(&self, s: Scenario) -> Vec<(String, String)> {
        let batches = self.batches_for(s);
        self.tasks_for(s)
            .into_iter()
            .flat_map(|t| batches.iter().map(move |b| (t.clone(), b.clone())))
            .collect()
    }
}
