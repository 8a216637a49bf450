use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use coopt_core::config::{ExperimentConfig, ScheduleKind};
use coopt_core::error::{Error, Result};
use coopt_core::experiments::{self, ArtifactWriter, DEFAULT_SHARED_FRACTIONS};
use coopt_core::format;

#[derive(Parser)]
#[command(name = "coopt", version, about = "Collaborative data optimization runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "coopt-out")]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run participants on N worker threads (N > 1 selects the threaded runtime).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One collaborative round: merged targets, metrics and a manifest.
    Run,
    /// Several rounds with prior upgrades and retain-better selection.
    Continuous {
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        upgrade_fraction: Option<f64>,
    },
    /// One run per shared-set fraction.
    AblateSharedSize {
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// One run per alignment strategy (best, median, worst, none).
    AblateAlignment,
    /// Rank-correlate uniform value with probe accuracy over graded priors.
    CorrelateUniformity {
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Print the headers of CPTD/CPTT files.
    Inspect {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Protocol { .. }
        | Error::Timeout { .. }
        | Error::NotReady { .. }
        | Error::Merge { .. }
        | Error::Selection(_)
        | Error::Alignment(_)
        | Error::IllPosed { .. } => 3,
        Error::Format(_) | Error::Io(_) => 4,
        _ => 1,
    }
}

fn load_config(g: &GlobalArgs, preset: fn() -> ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => preset(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        cfg.protocol.threads = n;
        if n > 1 {
            cfg.protocol.schedule = ScheduleKind::Threaded;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("rows serialize")
}

fn write_config(w: &mut ArtifactWriter, cfg: &ExperimentConfig) -> Result<()> {
    w.write("config.toml", cfg.to_toml_string()?.as_bytes())?;
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let report = experiments::run(cfg)?;
    let m = &report.outcome.metrics;
    let mut w = ArtifactWriter::create(out)?;
    write_config(&mut w, cfg)?;
    w.write("targets.cptt", &format::encode_targets(&report.outcome.merged.as_target_set())?)?;
    w.write_lines("metrics.jsonl", &m.json_lines(&cfg.run_id))?;
    w.write_lines("timings.jsonl", &m.timing_lines(&cfg.run_id))?;
    if let Some(p) = &report.probe {
        w.write("probe.json", serde_json::to_string_pretty(p).expect("probe serializes").as_bytes())?;
    }
    w.finish("run", cfg, json!({ "merged": m.merged_digest }))?;
    print_json(&json!({
        "run_id": cfg.run_id,
        "best_prior_id": m.best_prior_id,
        "n": m.n,
        "uniform_values": m.uniform_values,
        "merged_digest": m.merged_digest,
        "probe_accuracy": m.probe_accuracy,
        "out": out,
    }));
    Ok(())
}

fn cmd_continuous(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = experiments::continuous(cfg)?;
    let mut w = ArtifactWriter::create(out)?;
    write_config(&mut w, cfg)?;
    let mut metrics = Vec::new();
    let mut timings = Vec::new();
    let mut rounds = Vec::new();
    for r in &outcome.rounds {
        metrics.extend(r.metrics.json_lines(&cfg.run_id));
        for (id, v) in &r.retained_values {
            metrics.push(
                json!({"run_id": cfg.run_id, "round": r.metrics.round, "participant": id,
                       "metric": "retained_uniform_value", "value": v})
                .to_string(),
            );
        }
        timings.extend(r.metrics.timing_lines(&cfg.run_id));
        rounds.push(to_json(r).to_string());
    }
    w.write_lines("metrics.jsonl", &metrics)?;
    w.write_lines("timings.jsonl", &timings)?;
    w.write_lines("rounds.jsonl", &rounds)?;
    w.write("targets.cptt", &format::encode_targets(&outcome.final_dataset.as_target_set())?)?;
    let last = &outcome.rounds.last().expect("at least one round").metrics;
    w.finish("continuous", cfg, json!({ "final_merged": last.merged_digest }))?;
    let summary: Vec<_> = outcome
        .rounds
        .iter()
        .map(|r| {
            json!({"round": r.metrics.round, "best_prior_id": r.metrics.best_prior_id,
                   "accepted": r.accepted, "probe_accuracy": r.metrics.probe_accuracy,
                   "merged_digest": r.metrics.merged_digest})
        })
        .collect();
    print_json(&json!({ "run_id": cfg.run_id, "rounds": summary, "out": out }));
    Ok(())
}

fn cmd_ablate_shared_size(cfg: &ExperimentConfig, out: &Path, fractions: &[f64]) -> Result<()> {
    let results = experiments::ablate_shared_size(cfg, fractions)?;
    let mut w = ArtifactWriter::create(out)?;
    write_config(&mut w, cfg)?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (row, report) in &results {
        rows.push(to_json(row).to_string());
        metrics.extend(report.outcome.metrics.json_lines(&format!("{}/shared={}", cfg.run_id, row.fraction)));
        w.write(
            &format!("targets/shared={}.cptt", row.fraction),
            &format::encode_targets(&report.outcome.merged.as_target_set())?,
        )?;
    }
    w.write_lines("results.jsonl", &rows)?;
    w.write_lines("metrics.jsonl", &metrics)?;
    w.finish("ablate-shared-size", cfg, json!({}))?;
    print_json(&json!({ "rows": results.iter().map(|(r, _)| to_json(r)).collect::<Vec<_>>(), "out": out }));
    Ok(())
}

fn cmd_ablate_alignment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let results = experiments::ablate_alignment(cfg)?;
    let mut w = ArtifactWriter::create(out)?;
    write_config(&mut w, cfg)?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (row, report) in &results {
        rows.push(to_json(row).to_string());
        metrics.extend(report.outcome.metrics.json_lines(&format!("{}/align={}", cfg.run_id, row.strategy.name())));
        w.write(
            &format!("targets/{}.cptt", row.strategy.name()),
            &format::encode_targets(&report.outcome.merged.as_target_set())?,
        )?;
    }
    w.write_lines("results.jsonl", &rows)?;
    w.write_lines("metrics.jsonl", &metrics)?;
    w.finish("ablate-alignment", cfg, json!({}))?;
    print_json(&json!({ "rows": results.iter().map(|(r, _)| to_json(r)).collect::<Vec<_>>(), "out": out }));
    Ok(())
}

fn cmd_correlate(cfg: &ExperimentConfig, out: &Path, levels: &[f64]) -> Result<()> {
    let report = experiments::correlate_uniformity(cfg, levels)?;
    let mut w = ArtifactWriter::create(out)?;
    write_config(&mut w, cfg)?;
    let rows: Vec<String> = report.rows.iter().map(|r| to_json(r).to_string()).collect();
    w.write_lines("scatter.jsonl", &rows)?;
    let summary = json!({ "spearman": report.spearman, "degenerate": report.degenerate, "levels": levels });
    w.write("summary.json", serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    w.finish("correlate-uniformity", cfg, json!({}))?;
    if let Some(reason) = &report.degenerate {
        eprintln!("warning: degenerate ranking, spearman undefined: {reason}");
    }
    print_json(&json!({ "rows": to_json(&report.rows), "spearman": report.spearman, "out": out }));
    Ok(())
}

fn cmd_inspect(files: &[PathBuf]) -> Result<()> {
    for f in files {
        let bytes = std::fs::read(f)?;
        let header = format::read_header(&bytes)?;
        print_json(&json!({ "file": f, "header": to_json(&header) }));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Inspect { files } = &cli.command {
        return cmd_inspect(files);
    }
    let preset = match cli.command {
        Command::Continuous { .. } => ExperimentConfig::continuous_preset,
        _ => ExperimentConfig::default,
    };
    let mut cfg = load_config(&cli.global, preset)?;
    let out = cli.global.out.as_path();
    match cli.command {
        Command::Run => cmd_run(&cfg, out),
        Command::Continuous { rounds, upgrade_fraction } => {
            if let Some(r) = rounds {
                cfg.continuous.rounds = r;
            }
            if let Some(p) = upgrade_fraction {
                cfg.continuous.upgrade_fraction = p;
            }
            cfg.validate()?;
            cmd_continuous(&cfg, out)
        }
        Command::AblateSharedSize { fractions } => {
            let fractions = fractions.unwrap_or_else(|| DEFAULT_SHARED_FRACTIONS.to_vec());
            if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
                return Err(Error::Config(format!("shared fraction {f} must lie in (0,1)")));
            }
            cmd_ablate_shared_size(&cfg, out, &fractions)
        }
        Command::AblateAlignment => cmd_ablate_alignment(&cfg, out),
        Command::CorrelateUniformity { levels } => {
            let levels = levels.unwrap_or_else(experiments::default_quality_levels);
            if levels.len() < 5 {
                return Err(Error::Config(format!("need at least 5 quality levels, got {}", levels.len())));
            }
            cmd_correlate(&cfg, out, &levels)
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
