//! wasm-bindgen exports behind `www/index.html`. Every function takes CSV text
//! and returns JSON text, or an error message.

use serde_json::json;
use taskcheck::dsl::{evaluate_test, parse_constraint, DataUnitTest};
use taskcheck::errorgen::{inject, ErrorConfig};
use taskcheck::profiler::{ProfileArtifact, ProfileParams};
use taskcheck::tabular::{read_csv, Dataset};
use wasm_bindgen::prelude::*;

fn table(csv: &str) -> Result<Dataset, String> {
    read_csv(csv.as_bytes()).map_err(|e| format!("csv: {e}"))
}

/// Column profile of `csv`.
#[wasm_bindgen]
pub fn profile_csv(csv: &str) -> Result<String, String> {
    let d = table(csv)?;
    Ok(ProfileArtifact::new("input", &d, ProfileParams::default()).to_json())
}

/// Evaluates one constraint per line of `constraints` against `csv`. Blank
/// lines and lines starting with `#` are skipped.
#[wasm_bindgen]
pub fn check_constraints(csv: &str, constraints: &str) -> Result<String, String> {
    let d = table(csv)?;
    let mut test = DataUnitTest::new("input", "input");
    let mut texts = Vec::new();
    for (n, line) in constraints.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let c = parse_constraint(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        test.constraints.push(c.with_id(format!("line{}", n + 1)));
        texts.push(line.to_owned());
    }
    let report = evaluate_test(&test, &d);
    let outcomes: Vec<_> = report
        .outcomes
        .iter()
        .zip(&texts)
        .map(|(o, text)| {
            json!({
                "constraint": text,
                "status": o.status,
                "measured": o.measured,
                "message": o.message,
                "error": o.error,
            })
        })
        .collect();
    Ok(json!({ "verdict": report.verdict, "outcomes": outcomes }).to_string())
}

/// Applies an error config (JSON) to `csv`. Returns the corrupted CSV with
/// what was changed.
#[wasm_bindgen]
pub fn inject_errors(csv: &str, config: &str) -> Result<String, String> {
    let d = table(csv)?;
    let cfg = ErrorConfig::from_json(config).map_err(|e| e.to_string())?;
    let batch = inject(&d, &cfg, cfg.id.clone()).map_err(|e| e.to_string())?;
    Ok(json!({
        "id": batch.id,
        "rows": batch.data.row_count(),
        "provenance": batch.provenance,
        "csv": batch.data.to_csv_string(),
    })
    .to_string())
}
