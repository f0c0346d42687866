use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use rbon_core::io::{load_sets, save_csv, save_jsonl, save_sets, InputDigest, Manifest, UtilityCache};
use rbon_core::proximity::{proximity_correlation, proximity_points, ProximityPoint};
use rbon_core::selection::generate_preference_pair;
use rbon_core::synthetic::{generate_sets, BenchConfig, CurvePoint, HackingStudy};
use rbon_core::transport::check_proposition1;
use rbon_core::tuning::{beta_sweep, default_beta_grid, dev_size_ablation};
use rbon_core::{utility_matrix, Beta, CandidateSet, Method, Selector, UtilityMatrix};

use crate::{
    AblateArgs, BenchArgs, Cli, Command, PairgenArgs, ProximityArgs, SelectArgs, SweepArgs, VerificationFailed,
    VerifyArgs,
};

pub(crate) fn dispatch(cli: &Cli) -> Result<()> {
    let cache = cli
        .cache_dir
        .as_ref()
        .map(UtilityCache::new)
        .transpose()
        .context("opening matrix cache")?;
    let cache = cache.as_ref();
    match &cli.command {
        Command::Select(a) => select(a, cache),
        Command::Sweep(a) => sweep(a),
        Command::AblateDev(a) => ablate(a),
        Command::Pairgen(a) => pairgen(a, cache),
        Command::VerifyWd(a) => verify(a, cache),
        Command::AnalyzeProximity(a) => proximity(a),
        Command::Bench(a) => bench(a),
    }
}

fn load(path: &Path) -> Result<Vec<CandidateSet>> {
    let sets = load_sets(path).with_context(|| format!("{}", path.display()))?;
    if sets.is_empty() {
        eprintln!("warning: {} contains no candidates", path.display());
    }
    Ok(sets)
}

fn matrices(sets: &[CandidateSet], cache: Option<&UtilityCache>) -> Result<Vec<UtilityMatrix>> {
    sets.par_iter()
        .map(|s| {
            match cache {
                Some(c) => c.get_or_compute(s),
                None => utility_matrix(s),
            }
            .with_context(|| format!("instruction `{}`", s.instruction_id))
        })
        .collect()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_manifest<C: Serialize>(
    path: PathBuf,
    command: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        tool: "rbon".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: serde_json::to_value(config)?,
        seed,
        inputs: inputs.iter().map(InputDigest::of).collect::<rbon_core::Result<_>>()?,
        outputs: outputs.iter().map(|p| file_name(p)).collect(),
    };
    manifest
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))
}

fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn grid_or_default(grid: &Option<Vec<Beta>>) -> Vec<Beta> {
    grid.clone().unwrap_or_else(default_beta_grid)
}

#[derive(Serialize)]
struct SelectRecord<'a> {
    instruction_id: &'a str,
    method: Method,
    chosen_id: usize,
    chosen_text: &'a str,
    reward_term: f64,
    regularizer_term: f64,
    beta: Beta,
}

fn select(a: &SelectArgs, cache: Option<&UtilityCache>) -> Result<()> {
    let sets = load(&a.input)?;
    let selector = Selector::new(a.method.into(), &a.proxy, a.beta).with_normalized_mbr(a.normalize_mbr);
    let ms = if selector.needs_matrix() {
        Some(matrices(&sets, cache)?)
    } else {
        None
    };
    let results = sets
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            selector
                .select(s, ms.as_ref().map(|m| &m[i]))
                .with_context(|| format!("instruction `{}`", s.instruction_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<SelectRecord> = sets
        .iter()
        .zip(&results)
        .map(|(s, r)| SelectRecord {
            instruction_id: &s.instruction_id,
            method: r.method,
            chosen_id: r.chosen_id,
            chosen_text: &s.candidates[r.chosen_id].text,
            reward_term: r.reward_term,
            regularizer_term: r.regularizer_term,
            beta: r.beta,
        })
        .collect();
    save_jsonl(&a.output, &records).with_context(|| format!("writing {}", a.output.display()))?;
    write_manifest(sidecar(&a.output), "select", a, None, &[&a.input], &[&a.output])
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let sets = load(&a.input)?;
    let grid = grid_or_default(&a.grid);
    let report = beta_sweep(&sets, &a.proxy, &a.gold, &grid, a.normalize_mbr)
        .with_context(|| format!("{}", a.input.display()))?;
    save_csv(&a.output, &report.points).with_context(|| format!("writing {}", a.output.display()))?;
    if report.best_at_upper_edge {
        eprintln!(
            "warning: best beta {} is the largest grid value; the optimum may lie beyond the grid",
            report.best_beta
        );
    }
    println!("best_beta {}", report.best_beta);
    write_manifest(sidecar(&a.output), "sweep", a, None, &[&a.input], &[&a.output])
}

#[derive(Serialize)]
struct AblationCsvRow {
    size: usize,
    mean_gold: f64,
    std_gold: f64,
    seeds: String,
    tuned_betas: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let dev = load(&a.dev)?;
    let eval = load(&a.eval)?;
    let grid = grid_or_default(&a.grid);
    let rows = dev_size_ablation(
        &dev,
        &eval,
        &a.sizes,
        &a.seeds,
        &a.proxy,
        &a.gold,
        &grid,
        a.normalize_mbr,
    )?;
    let csv_rows: Vec<AblationCsvRow> = rows
        .iter()
        .map(|r| AblationCsvRow {
            size: r.size,
            mean_gold: r.mean_gold,
            std_gold: r.std_gold,
            seeds: join(&r.seeds),
            tuned_betas: join(&r.tuned_betas),
        })
        .collect();
    save_csv(&a.output, &csv_rows).with_context(|| format!("writing {}", a.output.display()))?;
    write_manifest(
        sidecar(&a.output),
        "ablate-dev",
        a,
        None,
        &[&a.dev, &a.eval],
        &[&a.output],
    )
}

fn pairgen(a: &PairgenArgs, cache: Option<&UtilityCache>) -> Result<()> {
    let sets = load(&a.input)?;
    let ms = matrices(&sets, cache)?;
    let pairs = sets
        .par_iter()
        .zip(&ms)
        .map(|(s, m)| {
            generate_preference_pair(s, m, &a.proxy, a.beta, a.chooser.into())
                .with_context(|| format!("instruction `{}`", s.instruction_id))
        })
        .collect::<Result<Vec<_>>>()?;
    save_jsonl(&a.output, &pairs).with_context(|| format!("writing {}", a.output.display()))?;
    write_manifest(sidecar(&a.output), "pairgen", a, None, &[&a.input], &[&a.output])
}

#[derive(Serialize)]
struct VerifyRow {
    instruction_id: String,
    n: usize,
    mbr_argmax: String,
    wd_argmin: String,
    max_abs_gap: f64,
    max_plan_error: f64,
    holds: bool,
}

fn verify(a: &VerifyArgs, cache: Option<&UtilityCache>) -> Result<()> {
    let sets = load(&a.input)?;
    let ms = matrices(&sets, cache)?;
    let reports = sets
        .par_iter()
        .zip(&ms)
        .map(|(s, m)| check_proposition1(s, m).with_context(|| format!("instruction `{}`", s.instruction_id)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<VerifyRow> = reports
        .iter()
        .map(|r| VerifyRow {
            instruction_id: r.instruction_id.clone(),
            n: r.n,
            mbr_argmax: join(&r.mbr_argmax),
            wd_argmin: join(&r.wd_argmin),
            max_abs_gap: r.max_abs_gap,
            max_plan_error: r.max_plan_error,
            holds: r.holds(),
        })
        .collect();
    save_csv(&a.output, &rows).with_context(|| format!("writing {}", a.output.display()))?;
    write_manifest(sidecar(&a.output), "verify-wd", a, None, &[&a.input], &[&a.output])?;
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.holds)
        .map(|r| r.instruction_id.as_str())
        .collect();
    let worst = reports.iter().map(|r| r.max_abs_gap).fold(0.0, f64::max);
    println!(
        "verified {} instances, {} violations, max gap {:e}",
        rows.len(),
        failed.len(),
        worst
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(format!("proposition violated on: {}", failed.join(", "))).into())
    }
}

fn proximity(a: &ProximityArgs) -> Result<()> {
    let sets = load(&a.input)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let report = proximity_correlation(&sets, a.k, a.signal.into(), a.norm.into())
        .with_context(|| format!("{}", a.input.display()))?;
    let points: Vec<ProximityPoint> = sets
        .par_iter()
        .map(|s| proximity_points(s).with_context(|| format!("instruction `{}`", s.instruction_id)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let rho_path = a.out_dir.join("proximity_rho.csv");
    let points_path = a.out_dir.join("proximity_points.csv");
    save_csv(&rho_path, &report.per_instruction)?;
    save_csv(&points_path, &points)?;
    println!(
        "mean_rho {} std_rho {} skipped {}",
        report.mean_rho, report.std_rho, report.skipped
    );
    write_manifest(
        a.out_dir.join("manifest.json"),
        "analyze-proximity",
        a,
        None,
        &[&a.input],
        &[&rho_path, &points_path],
    )
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    config: &'a BenchConfig,
    realized_rho: f64,
    tuned_beta: Beta,
    tuned_beta_at_upper_edge: bool,
    bon_peak_n: usize,
    gold_at_max_n: GoldAtMaxN,
}

#[derive(Serialize)]
struct GoldAtMaxN {
    bon: f64,
    mbr: f64,
    mbr_bon: f64,
}

fn last(curve: &[CurvePoint]) -> f64 {
    curve.last().map(|p| p.mean_gold).unwrap_or(f64::NAN)
}

fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        n_instructions: a.n_instructions,
        n_candidates: a.n_candidates,
        embed_dim: a.embed_dim,
        target_rho: a.target_rho,
        noise_scale: a.noise_scale.unwrap_or(0.0),
        seed: a.seed,
        couple_quality: !a.decoupled,
        ..BenchConfig::default()
    };
    let grid = grid_or_default(&a.grid);
    let study = HackingStudy::run(&cfg, a.noise_scale.is_none(), &grid)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let out = |name: &str| a.out_dir.join(name);
    let mut outputs = vec![
        out("curve_bon.csv"),
        out("curve_mbr.csv"),
        out("curve_mbr_bon.csv"),
        out("dev_sweep.csv"),
        out("summary.json"),
    ];
    save_csv(&outputs[0], &study.bon)?;
    save_csv(&outputs[1], &study.mbr)?;
    save_csv(&outputs[2], &study.mbr_bon)?;
    save_csv(&outputs[3], &study.dev_sweep.points)?;
    let peak = study
        .bon
        .iter()
        .fold(None::<&CurvePoint>, |best, p| match best {
            Some(b) if b.mean_gold >= p.mean_gold => Some(b),
            _ => Some(p),
        })
        .map(|p| p.n)
        .unwrap_or(0);
    let summary = BenchSummary {
        config: &study.config,
        realized_rho: study.realized_rho,
        tuned_beta: study.tuned_beta,
        tuned_beta_at_upper_edge: study.dev_sweep.best_at_upper_edge,
        bon_peak_n: peak,
        gold_at_max_n: GoldAtMaxN {
            bon: last(&study.bon),
            mbr: last(&study.mbr),
            mbr_bon: last(&study.mbr_bon),
        },
    };
    fs::write(&outputs[4], serde_json::to_string_pretty(&summary)? + "\n")?;

    if a.emit_sets {
        let n = study.config.n_instructions;
        let eval_path = out("eval_sets.jsonl");
        let dev_path = out("dev_sets.jsonl");
        save_sets(&eval_path, &generate_sets(&study.config, 0..n)?)?;
        save_sets(&dev_path, &generate_sets(&study.config, n..2 * n)?)?;
        outputs.push(eval_path);
        outputs.push(dev_path);
    }

    println!(
        "noise_scale {} realized_rho {:.4} tuned_beta {} gold@N={}: bon {:.4} mbr {:.4} mbr-bon {:.4}",
        study.config.noise_scale,
        study.realized_rho,
        study.tuned_beta,
        study.config.n_candidates,
        summary.gold_at_max_n.bon,
        summary.gold_at_max_n.mbr,
        summary.gold_at_max_n.mbr_bon
    );
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(out("manifest.json"), "bench", a, Some(a.seed), &[], &refs)
}
