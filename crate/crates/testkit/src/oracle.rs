//! Failure-precision bookkeeping by enumeration over explicit outcome grids.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use taskcheck::dsl::{Constraint, ConstraintOutcome, DataUnitTest, Status, TestReport, Verb, Verdict};
use taskcheck::sifta::Run;

pub const COLUMNS: [&str; 3] = ["x", "y", "z"];

/// One task's constraints (by column) and, per batch, which constraints fail
/// and whether the task ran cleanly.
#[derive(Clone, Debug)]
pub struct TaskGrid {
    pub columns: Vec<&'static str>,
    pub fails: Vec<Vec<bool>>,
    pub clean: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub tasks: Vec<TaskGrid>,
}

pub fn grid(max_tasks: usize, max_batches: usize, max_constraints: usize) -> impl Strategy<Value = Grid> {
    (1..=max_tasks, 1..=max_batches)
        .prop_flat_map(move |(t, b)| {
            let task = (1..=max_constraints).prop_flat_map(move |k| {
                (
                    prop::collection::vec(proptest::sample::select(&COLUMNS[..]), k),
                    prop::collection::vec(prop::collection::vec(any::<bool>(), k), b),
                    prop::collection::vec(any::<bool>(), b),
                )
            });
            prop::collection::vec(task, t)
        })
        .prop_map(|tasks| Grid {
            tasks: tasks
                .into_iter()
                .map(|(columns, fails, clean)| TaskGrid { columns, fails, clean })
                .collect(),
        })
}

impl TaskGrid {
    pub fn test(&self, task: &str) -> DataUnitTest {
        let mut t = DataUnitTest::new(format!("{task}-test"), task);
        for (k, col) in self.columns.iter().enumerate() {
            t.push(Constraint::new(Verb::IsComplete, col, None).with_id(format!("c{}", k + 1)))
                .expect("fresh ids");
        }
        t
    }

    pub fn runs(&self, task: &str) -> Vec<Run> {
        self.fails
            .iter()
            .zip(&self.clean)
            .enumerate()
            .map(|(b, (fails, clean))| {
                let outcomes: Vec<ConstraintOutcome> = fails
                    .iter()
                    .enumerate()
                    .map(|(k, f)| ConstraintOutcome {
                        constraint_id: format!("c{}", k + 1),
                        status: if *f { Status::Fail } else { Status::Pass },
                        measured: None,
                        message: String::new(),
                        error: None,
                    })
                    .collect();
                let verdict = if fails.iter().any(|f| *f) {
                    Verdict::Reject
                } else {
                    Verdict::Pass
                };
                Run {
                    batch_id: format!("b{b}"),
                    report: TestReport {
                        test_id: format!("{task}-test"),
                        batch_id: format!("b{b}"),
                        outcomes,
                        verdict,
                    },
                    outcome: *clean,
                }
            })
            .collect()
    }

    /// Batches where some constraint on `column` fails; of those, the share
    /// where the task failed too. Absent if the column never fails.
    pub fn cfpr(&self, column: &str) -> Option<f64> {
        let mut flagged = 0;
        let mut real = 0;
        for (fails, clean) in self.fails.iter().zip(&self.clean) {
            let column_fails = (0..fails.len()).any(|k| self.columns[k] == column && fails[k]);
            if column_fails {
                flagged += 1;
                if !clean {
                    real += 1;
                }
            }
        }
        if flagged == 0 {
            None
        } else {
            Some(real as f64 / flagged as f64)
        }
    }

    /// Same, for one constraint; 0 when it never fails.
    pub fn fpr(&self, k: usize) -> f64 {
        let flagged: Vec<bool> = self
            .fails
            .iter()
            .zip(&self.clean)
            .filter(|(f, _)| f[k])
            .map(|(_, c)| *c)
            .collect();
        if flagged.is_empty() {
            return 0.0;
        }
        flagged.iter().filter(|c| !**c).count() as f64 / flagged.len() as f64
    }
}

impl Grid {
    pub fn task_id(i: usize) -> String {
        format!("t{i}")
    }

    /// Task-column pairs with at least one failing constraint.
    pub fn informative_units(&self) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            for (k, col) in t.columns.iter().enumerate() {
                if t.fails.iter().any(|f| f[k]) {
                    out.insert((Self::task_id(i), col.to_string()));
                }
            }
        }
        out
    }

    pub fn all_cfpr(&self) -> BTreeMap<(String, String), Option<f64>> {
        let mut out = BTreeMap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            for col in &t.columns {
                out.insert((Self::task_id(i), col.to_string()), t.cfpr(col));
            }
        }
        out
    }
}
