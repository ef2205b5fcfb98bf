use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;
use taskcheck::dsl::{evaluate_batch, DataUnitTest, Status, Verdict};
use taskcheck::errorgen::{inject, ErrorConfig};
use taskcheck::harness::{label_batch, run_bench, save_labels, Bench, Scenario, TaskArtifact};
use taskcheck::pipeline::{
    generate_unit_test, Backend, CachedBackend, GenerationContext, Generator, HttpBackend, MockBackend, PipelineConfig,
    PromptSet,
};
use taskcheck::profiler::{ProfileArtifact, ProfileParams};
use taskcheck::sifta::{optimize, write_log, ModelProposer};
use taskcheck::tabular::{load_table, Batch, TableFormat};
use taskcheck::Error;

use crate::config::{BackendChoice, RunConfig};
use crate::{Command, Failure};

type Outcome = Result<u8, Failure>;

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Outcome {
    match command {
        Command::Profile {
            data,
            name,
            histogram_threshold,
        } => cmd_profile(cfg, data, name.as_deref(), *histogram_threshold),
        Command::Generate { task, sample, id } => cmd_generate(cfg, task, sample, id.as_deref()),
        Command::Validate { test, batch } => cmd_validate(cfg, test, batch),
        Command::Inject {
            sample,
            error_config,
            id,
        } => cmd_inject(cfg, sample, error_config, id.as_deref()),
        Command::Label { task, batches, id } => cmd_label(cfg, task, batches, id.as_deref()),
        Command::Optimize { manifest } => cmd_optimize(cfg, manifest),
        Command::Bench { manifest, scenario } => cmd_bench(cfg, manifest, scenario),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or("data".into(), |s| s.to_string_lossy().into_owned())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io(path, e))
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: crate::EXIT_RUNTIME,
        kind: "io".into(),
        message: format!("io error on {}: {e}", path.display()),
    }
}

/// Stdout may be a closed pipe; outputs are already on disk by then.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn print(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json value") + "\n"));
}

fn params(cfg: &RunConfig, threshold: Option<usize>) -> ProfileParams {
    let mut p = ProfileParams::default();
    if let Some(t) = threshold.or(cfg.histogram_threshold) {
        p.histogram_threshold = t;
    }
    p
}

fn task_artifact(cfg: &RunConfig, script: &Path, id: Option<&str>) -> TaskArtifact {
    let t = TaskArtifact::new(id.map_or_else(|| stem(script), str::to_owned), script);
    match cfg.task_timeout {
        Some(secs) => t.with_timeout(secs),
        None => t,
    }
}

fn prompts(cfg: &RunConfig) -> Result<PromptSet, Failure> {
    match &cfg.prompts {
        Some(path) => Ok(PromptSet::load(path)?),
        None => Ok(PromptSet::default()),
    }
}

fn backend(cfg: &RunConfig) -> Result<CachedBackend<Box<dyn Backend>>, Failure> {
    let inner: Box<dyn Backend> = match &cfg.backend {
        BackendChoice::Mock { transcripts } => {
            if !transcripts.is_dir() {
                return Err(Failure::config(format!(
                    "transcripts directory {} not found",
                    transcripts.display()
                )));
            }
            Box::new(MockBackend::from_dir(transcripts))
        }
        BackendChoice::Live { base_url } => Box::new(HttpBackend::new(
            base_url,
            &cfg.token_env,
            Duration::from_secs(cfg.request_timeout),
        )?),
        BackendChoice::Unset => {
            return Err(Failure::config(
                "no model backend: pass --mock with --transcripts, or --base-url",
            ))
        }
    };
    Ok(match &cfg.cache {
        Some(dir) => CachedBackend::persistent(inner, dir),
        None => CachedBackend::new(inner),
    })
}

fn pipeline_config(cfg: &RunConfig) -> Result<PipelineConfig, Failure> {
    let mut p = PipelineConfig {
        parallelism: cfg.parallelism,
        ..PipelineConfig::default()
    };
    match (&cfg.backend, &cfg.model) {
        (_, Some(m)) => p.model = m.clone(),
        (BackendChoice::Live { .. }, None) => return Err(Failure::config("a live backend needs --model")),
        _ => {}
    }
    Ok(p)
}

fn cmd_profile(cfg: &RunConfig, data: &Path, name: Option<&str>, threshold: Option<usize>) -> Outcome {
    let d = load_table(data, TableFormat::Csv)?;
    let name = name.map_or_else(|| stem(data), str::to_owned);
    let profile = ProfileArtifact::new(name, &d, params(cfg, threshold));
    let path = profile.save(cfg.out.join("profiles"))?;
    print(&json!({ "profile": path, "rows": profile.row_count, "columns": profile.columns.len() }));
    Ok(0)
}

fn cmd_generate(cfg: &RunConfig, script: &Path, sample: &Path, id: Option<&str>) -> Outcome {
    let task = task_artifact(cfg, script, id);
    let d = load_table(sample, TableFormat::Csv)?;
    let profile = ProfileArtifact::new(stem(sample), &d, params(cfg, None));
    let file = script
        .file_name()
        .map_or("task.py".into(), |n| n.to_string_lossy().into_owned());
    let ctx = GenerationContext::new(&task.id, &file, &task.stripped_source()?, profile);

    let backend = backend(cfg)?;
    let prompts = prompts(cfg)?;
    let pc = pipeline_config(cfg)?;
    let out = generate_unit_test(&Generator::new(&backend, &prompts, &pc), &ctx, &d)?;
    let test = out.test.save(cfg.out.join("tests"))?;
    let graph = out.graph.save(cfg.out.join("graphs"), &task.id)?;
    print(&json!({
        "task": task.id,
        "test": test,
        "graph": graph,
        "constraints": out.test.constraints.iter().map(|c| c.render()).collect::<Vec<_>>(),
        "stats": out.stats,
    }));
    Ok(0)
}

fn cmd_validate(cfg: &RunConfig, test: &Path, batch: &Path) -> Outcome {
    let t = DataUnitTest::load(test)?;
    let b = Batch::new(
        stem(batch),
        load_table(batch, TableFormat::Csv)?,
        batch.display().to_string(),
    );
    let report = evaluate_batch(&t, &b);
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    write(
        &cfg.out.join("reports").join(format!("{}__{}.json", t.task_id, b.id)),
        &text,
    )?;
    emit(&text);
    let code = match report.verdict {
        Verdict::Reject => 1,
        Verdict::Pass if report.outcomes.iter().any(|o| o.status == Status::Error) => 2,
        Verdict::Pass => 0,
    };
    Ok(code)
}

fn cmd_inject(cfg: &RunConfig, sample: &Path, config: &Path, id: Option<&str>) -> Outcome {
    let d = load_table(sample, TableFormat::Csv)?;
    let mut ec = ErrorConfig::load(config)?;
    if let Some(seed) = cfg.seed {
        ec.seed = seed;
    }
    let id = id.map_or_else(|| ec.id.clone(), str::to_owned);
    let batch = inject(&d, &ec, id)?;
    let dir = cfg.out.join("batches");
    batch.save(&dir)?;
    print(&json!({
        "batch": dir.join(format!("{}.csv", batch.id)),
        "seed": ec.seed,
        "provenance": batch.provenance,
    }));
    Ok(0)
}

fn cmd_label(cfg: &RunConfig, script: &Path, batches: &[PathBuf], id: Option<&str>) -> Outcome {
    let task = task_artifact(cfg, script, id);
    let mut labels = Vec::new();
    for path in batches {
        let b = Batch::new(
            stem(path),
            load_table(path, TableFormat::Csv)?,
            path.display().to_string(),
        );
        labels.push(label_batch(&task, &b)?);
    }
    let path = cfg.out.join("labels.json");
    fs::create_dir_all(&cfg.out).map_err(|e| io(&cfg.out, e))?;
    save_labels(&labels, &path)?;
    print(&serde_json::to_value(&labels).map_err(Error::from)?);
    Ok(0)
}

fn load_bench(cfg: &RunConfig, manifest: &Path) -> Result<Bench, Failure> {
    let mut bench = Bench::load(manifest)?;
    if let Some(secs) = cfg.task_timeout {
        for t in bench.datasets.iter_mut().flat_map(|d| &mut d.tasks) {
            t.timeout = secs;
        }
    }
    Ok(bench)
}

fn cmd_optimize(cfg: &RunConfig, manifest: &Path) -> Outcome {
    let bench = load_bench(cfg, manifest)?;
    let backend = backend(cfg)?;
    let initial = prompts(cfg)?;
    let pc = pipeline_config(cfg)?;
    let gen = Generator::new(&backend, &initial, &pc);

    let labels = bench.label(&bench.pairs(None), cfg.parallelism)?;
    let obs = bench.observations(&labels);
    let env = bench.sifta_env(&gen)?;
    let mut proposer = ModelProposer::new(&backend, pc.clone(), &initial.name);
    let result = optimize(&cfg.sifta, &obs, &initial, &env, &mut proposer)?;

    let prompt_path = result.best.save(cfg.out.join("prompts"))?;
    write_log(&result.log, cfg.out.join("sifta_log.jsonl"))?;
    let summary = json!({
        "best": result.best.name,
        "best_prompts": prompt_path,
        "best_eval_score": result.best_eval_score,
        "charged": result.charged,
        "proposals": result.proposals,
        "early_stopped": result.early_stopped,
        "sifta": cfg.sifta,
        "rounds": result.rounds,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    write(&cfg.out.join("optimize.json"), &text)?;
    emit(&text);
    Ok(0)
}

fn cmd_bench(cfg: &RunConfig, manifest: &Path, scenario: &str) -> Outcome {
    let scenario = match scenario {
        "all" => None,
        s => Some(Scenario::parse(s).ok_or_else(|| Failure::config(format!("unknown scenario {s:?}")))?),
    };
    let bench = load_bench(cfg, manifest)?;
    let backend = backend(cfg)?;
    let prompts = prompts(cfg)?;
    let pc = pipeline_config(cfg)?;
    let run = run_bench(
        &bench,
        scenario,
        &Generator::new(&backend, &prompts, &pc),
        cfg.parallelism,
    )?;

    let out = &cfg.out;
    for (task, g) in &run.generated {
        g.test.save(out.join("tests"))?;
        g.graph.save(out.join("graphs"), task)?;
    }
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    save_labels(&run.labels, out.join("labels.json"))?;
    for (system, matrix) in &run.matrices {
        let name = match system.as_str() {
            "task_aware" => "decisions.csv".to_owned(),
            other => format!("decisions_{other}.csv"),
        };
        matrix.save(out.join(name))?;
    }
    let metrics = run.report.to_json();
    write(&out.join("metrics.json"), &metrics)?;
    emit(&metrics);
    Ok(0)
}
