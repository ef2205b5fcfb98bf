use std::collections::HashMap;

use super::*;
use crate::dsl::{evaluate_test, Verdict};
use crate::profiler::ProfileParams;

const SCRIPT: &str = "import sys\nimport pandas as pd\ndf = pd.read_csv(sys.argv[1])\ndone = df[df[\"status\"] == \"COMPLETED\"]\nfor e in done[\"email\"]:\n    send(e.lower())\nprint(df[\"name\"].str.upper())\n";

fn sample() -> Dataset {
    use Value::*;
    Dataset::from_rows(
        &[
            ("name", ValueKind::Text),
            ("email", ValueKind::Text),
            ("status", ValueKind::Text),
        ],
        vec![
            vec![Text("ann".into()), Text("a@x".into()), Text("COMPLETED".into())],
            vec![Text("bob".into()), Null, Text("PENDING".into())],
            vec![Text("cy".into()), Text("c@x".into()), Text("COMPLETED".into())],
        ],
    )
    .unwrap()
}

fn ctx() -> GenerationContext {
    let profile = ProfileArtifact::new("booking", &sample(), ProfileParams::default());
    GenerationContext::new("t1", "task.py", SCRIPT, profile)
}

fn mock(entries: &[(&str, &str)]) -> MockBackend {
    let map: HashMap<String, Transcript> = entries
        .iter()
        .map(|(k, v)| (k.to_string(), Transcript::from_json(v).unwrap()))
        .collect();
    MockBackend::from_transcripts(map)
}

fn one(payload: &str) -> String {
    format!(r#"{{"responses": [{{"payload": {payload}}}]}}"#)
}

#[test]
fn discovery_filters_unknown_columns() {
    let m = mock(&[(
        "discover_column_access/t1__task",
        &one(r#"{"columns": ["status", "foo", "email"]}"#),
    )]);
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    assert_eq!(g.discover_column_access(&ctx()).unwrap(), vec!["email", "status"]);

    let none = mock(&[("discover_column_access/default", &one(r#"{"columns": []}"#))]);
    let g = Generator::new(&none, &p, &cfg);
    assert!(g.discover_column_access(&ctx()).unwrap().is_empty());
}

#[test]
fn joint_sets_are_canonical_and_deduplicated() {
    let m = mock(&[(
        "discover_joint_column_access/t1__task",
        &one(
            r#"{"column_sets": [["status", "email"], ["email", "status"], ["email", "zzz"], ["name", "email", "status"]]}"#,
        ),
    )]);
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    let accessed = vec!["email".to_string(), "status".to_string()];
    let sets = g.discover_joint_column_access(&ctx(), &accessed).unwrap();
    assert_eq!(sets, vec![ColumnNode::set(&["email", "status"])]);
    assert!(g
        .discover_joint_column_access(&ctx(), &accessed[..1])
        .unwrap()
        .is_empty());
    assert_eq!(m.calls(), 1);
}

#[test]
fn spans_out_of_range_are_clipped_or_dropped() {
    let m = mock(&[(
        "column_dataflow/t1__email",
        &one(r#"{"spans": [{"start_line": 5, "end_line": 6}, [6, 40], [9999, 9999], [0, 1]]}"#),
    )]);
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    let spans = g.dataflow(&ctx(), &ColumnNode::single("email")).unwrap();
    let got: Vec<(usize, usize)> = spans.iter().map(|s| (s.start_line, s.end_line)).collect();
    assert_eq!(got, vec![(1, 1), (5, 6), (6, 7)]);
}

#[test]
fn malformed_replies_are_repaired_then_abandoned() {
    let m = mock(&[(
        "discover_column_access/t1__task",
        &format!(
            r#"{{"responses": [{{"when_prompt_contains": "{REPAIR_MARKER}", "payload": "```json\n{{\"columns\": [\"name\"]}}\n```"}}, {{"payload": "I think it reads name"}}]}}"#
        ),
    )]);
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    assert_eq!(g.discover_column_access(&ctx()).unwrap(), vec!["name"]);
    assert_eq!(m.calls(), 2);

    let bad = mock(&[("discover_column_access/default", &one(r#"{"cols": 1}"#))]);
    let g = Generator::new(&bad, &p, &cfg);
    let err = g.discover_column_access(&ctx()).unwrap_err();
    assert_eq!(err.kind(), "generation");
    assert_eq!(bad.calls(), 3);
}

fn booking_mock(constraints: &str) -> MockBackend {
    mock(&[
        (
            "discover_column_access/t1__task",
            &one(r#"{"columns": ["status", "email"]}"#),
        ),
        (
            "discover_joint_column_access/t1__task",
            &one(r#"{"column_sets": [["status", "email"]]}"#),
        ),
        ("column_dataflow/t1__email", &one(r#"{"spans": [[5, 6]]}"#)),
        ("column_dataflow/t1__status", &one(r#"{"spans": [[4, 4]]}"#)),
        ("multi_column_dataflow/t1__email+status", &one(r#"{"spans": [[4, 6]]}"#)),
        (
            "summarize_link/t1__email",
            &one(r#"{"assumptions": [{"text": "email values are strings", "lines": [[6, 6]]}]}"#),
        ),
        ("summarize_link/t1__status", &one(r#"{"assumptions": []}"#)),
        (
            "summarize_link/t1__email+status",
            &one(r#"{"assumptions": [{"text": "rows with status COMPLETED have non-null email"}]}"#),
        ),
        (
            "gen_column_constraints/t1__email",
            &one(r#"{"constraints": ["isContainedIn(\"email\", [\"a@x\"])", "hasPattern(\"email\", \".*@.*\")"]}"#),
        ),
        ("gen_multi_column_constraints/t1__email+status", &one(constraints)),
    ])
}

#[test]
fn end_to_end_with_precheck_and_stats() {
    let m = booking_mock(
        r#"{"constraints": [
            {"text": "isComplete(\"email\").where(status == \"COMPLETED\")", "assumption_ids": ["a2"]},
            {"text": "isComplete( \"email\" ) .where( status == \"COMPLETED\" )", "assumption_ids": ["a9"]},
            {"text": "isComplete(\"email\", \"status\")"}
        ]}"#,
    );
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    let out = generate_unit_test(&g, &ctx(), &sample()).unwrap();
    let rendered: Vec<String> = out
        .test
        .constraints
        .iter()
        .map(|c| format!("{} {}", c.id, c.render()))
        .collect();
    assert_eq!(
        rendered,
        vec![
            "c1 hasPattern(\"email\", \".*@.*\")",
            "c2 isComplete(\"email\").where(status == \"COMPLETED\")",
        ]
    );
    assert_eq!(out.test.constraints[1].assumption_ids, vec!["a2"]);
    assert_eq!(out.test.accessed_columns, vec!["email", "status"]);
    assert_eq!(out.stats.generated, 3);
    assert_eq!(out.stats.discarded, 1);
    assert_eq!(out.stats.non_executable, 1);
    assert_eq!(out.stats.discard_reasons.get("fails_on_sample"), Some(&1));
    assert_eq!(out.graph.assumptions().len(), 2);
    let bt = out.graph.backtrace(&out.test, "c2").unwrap();
    assert_eq!(
        bt.spans.iter().map(|s| (s.start_line, s.end_line)).collect::<Vec<_>>(),
        vec![(4, 6)]
    );

    use Value::*;
    let bad = Dataset::from_rows(
        &[
            ("name", ValueKind::Text),
            ("email", ValueKind::Text),
            ("status", ValueKind::Text),
        ],
        vec![vec![Text("d".into()), Null, Text("COMPLETED".into())]],
    )
    .unwrap();
    assert_eq!(evaluate_test(&out.test, &bad).verdict, Verdict::Reject);

    let again = generate_unit_test(&g, &ctx(), &sample()).unwrap();
    assert_eq!(again.test.to_json(), out.test.to_json());
}

#[test]
fn failing_node_is_skipped() {
    let m = booking_mock(r#"{"nope": 1}"#);
    let (p, cfg) = (
        PromptSet::default(),
        PipelineConfig {
            parallelism: 1,
            ..Default::default()
        },
    );
    let g = Generator::new(&m, &p, &cfg);
    let out = generate_unit_test(&g, &ctx(), &sample()).unwrap();
    assert_eq!(out.stats.failed_nodes, vec!["email+status"]);
    assert_eq!(out.test.constraints.len(), 1);
}

#[test]
fn zero_columns_gives_an_empty_test() {
    let m = mock(&[("discover_column_access/default", &one(r#"{"columns": []}"#))]);
    let (p, cfg) = (PromptSet::default(), PipelineConfig::default());
    let g = Generator::new(&m, &p, &cfg);
    let out = generate_unit_test(&g, &ctx(), &sample()).unwrap();
    assert!(out.test.constraints.is_empty());
    assert_eq!(evaluate_test(&out.test, &sample()).verdict, Verdict::Pass);
}

#[test]
fn task_agnostic_heuristics() {
    use Value::*;
    let d = Dataset::from_rows(
        &[
            ("n", ValueKind::Integer),
            ("cat", ValueKind::Text),
            ("opt", ValueKind::Text),
        ],
        (1..=10)
            .map(|i| {
                vec![
                    Integer(i),
                    Text(if i % 2 == 0 { "A" } else { "B" }.into()),
                    if i <= 7 { Text("x".into()) } else { Null },
                ]
            })
            .collect(),
    )
    .unwrap();
    let profile = ProfileArtifact::new("toy", &d, ProfileParams::default());
    let t = suggest_task_agnostic(&profile);
    let rendered: Vec<String> = t.constraints.iter().map(Constraint::render).collect();
    assert!(rendered.contains(&"isComplete(\"n\")".to_string()), "{rendered:?}");
    assert!(rendered.contains(&"hasMin(\"n\", >= 1.0)".to_string()), "{rendered:?}");
    assert!(rendered.contains(&"hasMax(\"n\", <= 10.0)".to_string()), "{rendered:?}");
    assert!(rendered.contains(&"isUnique(\"n\")".to_string()), "{rendered:?}");
    assert!(
        rendered.contains(&"isContainedIn(\"cat\", [\"A\", \"B\"])".to_string()),
        "{rendered:?}"
    );
    assert!(
        rendered.contains(&"hasCompleteness(\"opt\", >= 0.7)".to_string()),
        "{rendered:?}"
    );
    assert_eq!(evaluate_test(&t, &d).verdict, Verdict::Pass);
    assert_eq!(t.id, "toy-agnostic");
}
