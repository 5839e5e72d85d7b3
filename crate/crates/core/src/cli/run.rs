use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CliError, DecodeArgs, EvalArgs, ExportArgs, ExportKind, RunArgs, SweepArgs};
use crate::alignment::{
    AlignmentScorer, RemoteScorer, ReplayScorer, TokenId, DEFAULT_MAX_INFLIGHT,
};
use crate::calibrator::{CalibrationConfig, LambdaMode};
use crate::decoder::{DecodeOptions, DecodeOutput, DecodeTrace, SamplerKind, SamplerSpec};
use crate::sim::{
    candidate_snapshots, ccta_trajectory, decode_image, evaluate, generate_world,
    write_snapshots_csv, write_trajectory_csv, DriftWorld, HallucinationReport, WorldSpec,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";
const SESSION_PREFIX: &str = "session-";

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Where the world comes from: `seed:N` or a spec file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorldChoice {
    Seed(u64),
    File(PathBuf),
}

impl WorldChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.strip_prefix("seed:") {
            Some(n) => n
                .parse()
                .map(WorldChoice::Seed)
                .map_err(|_| config_err(format!("invalid world seed `{n}`"))),
            None if s.is_empty() => Err(config_err("empty --world")),
            None => Ok(WorldChoice::File(PathBuf::from(s))),
        }
    }

    /// A file's own `seed` field seeds the world.
    pub fn load(&self) -> Result<DriftWorld, CliError> {
        let (spec, seed) = match self {
            WorldChoice::Seed(n) => (
                WorldSpec {
                    seed: *n,
                    ..Default::default()
                },
                *n,
            ),
            WorldChoice::File(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| config_err(format!("world spec {}: {e}", p.display())))?;
                let spec = WorldSpec::parse(&text)
                    .map_err(|e| config_err(format!("world spec {}: {e}", p.display())))?;
                let seed = spec.seed;
                (spec, seed)
            }
        };
        generate_world(&spec, seed).map_err(config_err)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerChoice {
    Synthetic,
    Replay { path: PathBuf },
    Remote { url: String },
}

impl ScorerChoice {
    /// `env_url`, when set, replaces the URL of a remote scorer.
    pub fn parse(s: &str, env_url: Option<String>) -> Result<Self, CliError> {
        if s == "synthetic" {
            Ok(ScorerChoice::Synthetic)
        } else if let Some(p) = s.strip_prefix("replay:") {
            Ok(ScorerChoice::Replay {
                path: PathBuf::from(p),
            })
        } else if s == "remote" || s.starts_with("remote:") {
            let url = env_url
                .or_else(|| s.strip_prefix("remote:").map(str::to_owned))
                .filter(|u| !u.is_empty())
                .ok_or_else(|| {
                    config_err("remote scorer needs a URL (remote:<url> or DLC_SCORER_URL)")
                })?;
            Ok(ScorerChoice::Remote { url })
        } else {
            Err(config_err(format!(
                "unknown scorer `{s}` (expected synthetic|replay:<path>|remote:<url>)"
            )))
        }
    }

    pub fn build(&self, world: &DriftWorld) -> Result<Box<dyn AlignmentScorer>, CliError> {
        Ok(match self {
            ScorerChoice::Synthetic => Box::new(world.scorer()),
            ScorerChoice::Replay { path } => Box::new(
                ReplayScorer::from_path(path)
                    .map_err(|e| config_err(format!("replay file {}: {e}", path.display())))?,
            ),
            ScorerChoice::Remote { url } => Box::new(RemoteScorer::new(url, DEFAULT_MAX_INFLIGHT)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub window_n: Vec<usize>,
    pub top_k: Vec<usize>,
    pub sampler: Vec<String>,
}

/// Stamped into every output directory. For sweeps, `calibration` holds
/// the shared settings and `grid` the per-cell overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub world: String,
    pub world_seed: u64,
    pub scorer: ScorerChoice,
    pub vanilla: bool,
    pub calibration: CalibrationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<SweepGrid>,
    pub sessions: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Option<RunManifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub window_n: usize,
    pub top_k: usize,
    pub sampler: String,
    pub c_s: Option<f64>,
    pub c_i: Option<f64>,
    pub mean_latency_per_token: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DecodeSummary<'a> {
    sessions: usize,
    aborted: usize,
    tokens_generated: usize,
    report: &'a HallucinationReport,
}

/// Everything a run needs, resolved and validated up front.
struct Setup {
    world: DriftWorld,
    scorer_choice: ScorerChoice,
    scorer: Box<dyn AlignmentScorer>,
    base: CalibrationConfig,
    pool: rayon::ThreadPool,
}

fn setup(run: &RunArgs, scorer_url: Option<String>) -> Result<Setup, CliError> {
    let world = WorldChoice::parse(&run.world)?.load()?;
    let scorer_choice = ScorerChoice::parse(&run.scorer, scorer_url)?;
    if run.sessions == 0 {
        return Err(config_err("--sessions must be >= 1"));
    }
    if run.max_new_tokens == 0 {
        return Err(config_err("--max-new-tokens must be >= 1"));
    }
    if run.jobs == 0 {
        return Err(config_err("--jobs must be >= 1"));
    }
    if run.disable_ccta && run.disable_ita {
        return Err(config_err(
            "--disable-ccta and --disable-ita are mutually exclusive",
        ));
    }
    let base = CalibrationConfig {
        warmup_steps: run.warmup,
        modulation_mode: run.mode,
        disable_ccta: run.disable_ccta,
        disable_ita: run.disable_ita,
        lambda_mode: if run.constant_lambda {
            LambdaMode::Constant
        } else {
            LambdaMode::Adaptive
        },
        ..Default::default()
    };
    let scorer = scorer_choice.build(&world)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.jobs)
        .build()
        .map_err(failed)?;
    Ok(Setup {
        world,
        scorer_choice,
        scorer,
        base,
        pool,
    })
}

fn calibration(
    base: &CalibrationConfig,
    alpha: f64,
    window_n: usize,
    top_k: usize,
) -> Result<CalibrationConfig, CliError> {
    let cfg = CalibrationConfig {
        alpha,
        window_n,
        top_k,
        ..base.clone()
    };
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn sampler_kind(s: &str) -> Result<SamplerKind, CliError> {
    s.parse().map_err(config_err)
}

/// Creates `dir`, refusing to reuse a stamped directory without `force`.
/// With `force`, previous run outputs are removed first.
fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.join(MANIFEST_FILE).exists() {
        if !force {
            return Err(config_err(format!(
                "{} already holds a run; pass --force to overwrite",
                dir.display()
            )));
        }
        for entry in fs::read_dir(dir).map_err(failed)? {
            let path = entry.map_err(failed)?.path();
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            let owned = (name.starts_with(SESSION_PREFIX) && name.ends_with(".jsonl"))
                || [MANIFEST_FILE, SUMMARY_FILE, SWEEP_FILE].contains(&name);
            if owned {
                fs::remove_file(&path).map_err(failed)?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(failed)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn manifest(run: &RunArgs, s: &Setup, command: &str) -> RunManifest {
    RunManifest {
        command: command.to_owned(),
        world: run.world.clone(),
        world_seed: s.world.seed(),
        scorer: s.scorer_choice.clone(),
        vanilla: run.vanilla,
        calibration: s.base.clone(),
        sampler: None,
        grid: None,
        sessions: run.sessions,
        max_new_tokens: run.max_new_tokens,
        seed: run.seed,
    }
}

fn run_sessions(
    s: &Setup,
    run: &RunArgs,
    opts: &DecodeOptions,
    kind: SamplerKind,
) -> Vec<Result<DecodeOutput, String>> {
    let n_images = s.world.images().len();
    let one = |i: usize| {
        let sampler = SamplerSpec::new(kind, run.seed.wrapping_add(i as u64));
        decode_image(&s.world, s.scorer.as_ref(), i % n_images, opts, sampler)
            .map_err(|e| format!("session {i}: {e}"))
    };
    s.pool
        .install(|| (0..run.sessions).into_par_iter().map(one).collect())
}

fn captions(outputs: &[DecodeOutput]) -> Vec<(String, Vec<TokenId>)> {
    outputs
        .iter()
        .map(|o| (o.trace.header.image_id.clone(), o.tokens.clone()))
        .collect()
}

pub fn decode(
    a: &DecodeArgs,
    scorer_url: Option<String>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let s = setup(&a.run, scorer_url)?;
    let cfg = calibration(&s.base, a.alpha, a.window_n, a.top_k)?;
    let kind = sampler_kind(&a.sampler)?;
    prepare_out(&a.run.out, a.run.force)?;
    let mut m = manifest(&a.run, &s, "decode");
    m.calibration = cfg.clone();
    m.sampler = Some(kind.to_string());
    write_json(&a.run.out.join(MANIFEST_FILE), &m)?;

    let opts = DecodeOptions {
        calibration: cfg,
        vanilla: a.run.vanilla,
        max_new_tokens: a.run.max_new_tokens,
        world_seed: None,
    };
    let outputs = run_sessions(&s, &a.run, &opts, kind)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed)?;
    for (i, o) in outputs.iter().enumerate() {
        let path = a.run.out.join(format!("{SESSION_PREFIX}{i:04}.jsonl"));
        o.trace
            .write_file(&path)
            .map_err(|e| failed(format!("{}: {e}", path.display())))?;
    }
    let report = evaluate(&captions(&outputs), &s.world).map_err(failed)?;
    let aborted = outputs.iter().filter(|o| o.trace.is_aborted()).count();
    let summary = DecodeSummary {
        sessions: outputs.len(),
        aborted,
        tokens_generated: outputs.iter().map(|o| o.tokens.len()).sum(),
        report: &report,
    };
    write_json(&a.run.out.join(SUMMARY_FILE), &summary)?;
    writeln!(out, "{}", serde_json::to_string(&summary).map_err(failed)?).map_err(failed)?;
    if aborted > 0 {
        let first = outputs
            .iter()
            .find_map(|o| o.trace.abort.clone())
            .unwrap_or_default();
        return Err(failed(format!(
            "{aborted} of {} sessions aborted: {first}",
            outputs.len()
        )));
    }
    Ok(())
}

fn sweep_cell(
    s: &Setup,
    run: &RunArgs,
    cfg: &CalibrationConfig,
    kind: SamplerKind,
) -> Option<(f64, f64, f64)> {
    let opts = DecodeOptions {
        calibration: cfg.clone(),
        vanilla: run.vanilla,
        max_new_tokens: run.max_new_tokens,
        world_seed: None,
    };
    let n_images = s.world.images().len();
    let started = Instant::now();
    let mut outputs = Vec::with_capacity(run.sessions);
    for i in 0..run.sessions {
        let sampler = SamplerSpec::new(kind, run.seed.wrapping_add(i as u64));
        let o = decode_image(&s.world, s.scorer.as_ref(), i % n_images, &opts, sampler).ok()?;
        if o.trace.is_aborted() {
            return None;
        }
        outputs.push(o);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let tokens: usize = outputs.iter().map(|o| o.tokens.len()).sum();
    let report = evaluate(&captions(&outputs), &s.world).ok()?;
    Some((report.c_s, report.c_i, elapsed / tokens.max(1) as f64))
}

pub fn sweep(
    a: &SweepArgs,
    scorer_url: Option<String>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let s = setup(&a.run, scorer_url)?;
    if a.alpha.is_empty() || a.window_n.is_empty() || a.top_k.is_empty() || a.sampler.is_empty() {
        return Err(config_err("empty sweep grid"));
    }
    let samplers = a
        .sampler
        .iter()
        .map(|x| sampler_kind(x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for &alpha in &a.alpha {
        for &window_n in &a.window_n {
            for &top_k in &a.top_k {
                let cfg = calibration(&s.base, alpha, window_n, top_k)?;
                cells.extend(samplers.iter().map(|&k| (cfg.clone(), k)));
            }
        }
    }
    prepare_out(&a.run.out, a.run.force)?;
    let mut m = manifest(&a.run, &s, "sweep");
    m.grid = Some(SweepGrid {
        alpha: a.alpha.clone(),
        window_n: a.window_n.clone(),
        top_k: a.top_k.clone(),
        sampler: samplers.iter().map(ToString::to_string).collect(),
    });
    write_json(&a.run.out.join(MANIFEST_FILE), &m)?;

    let results: Vec<_> = s.pool.install(|| {
        cells
            .par_iter()
            .map(|(cfg, k)| sweep_cell(&s, &a.run, cfg, *k))
            .collect()
    });
    let rows: Vec<SweepRow> = cells
        .iter()
        .zip(&results)
        .map(|((cfg, kind), r)| SweepRow {
            alpha: cfg.alpha,
            window_n: cfg.window_n,
            top_k: cfg.top_k,
            sampler: kind.to_string(),
            c_s: r.map(|x| x.0),
            c_i: r.map(|x| x.1),
            mean_latency_per_token: r.map(|x| x.2),
        })
        .collect();

    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).map_err(failed)?;
    let path = a.run.out.join(SWEEP_FILE);
    fs::write(&path, &buf).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    out.write_all(&buf).map_err(failed)?;
    let bad = results.iter().filter(|r| r.is_none()).count();
    if bad > 0 {
        return Err(failed(format!(
            "{bad} of {} sweep cells failed",
            rows.len()
        )));
    }
    Ok(())
}

/// Writes `alpha,window_n,top_k,sampler,c_s,c_i,mean_latency_per_token`;
/// failed cells leave the last three fields empty.
pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "alpha",
        "window_n",
        "top_k",
        "sampler",
        "c_s",
        "c_i",
        "mean_latency_per_token",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_traces(dir: &Path) -> Result<Vec<(PathBuf, DecodeTrace)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let t =
                DecodeTrace::read_file(&p).map_err(|e| failed(format!("{}: {e}", p.display())))?;
            t.audit()
                .map_err(|e| failed(format!("{}: {e}", p.display())))?;
            Ok((p, t))
        })
        .collect()
}

fn eval_world(a: &EvalArgs, traces: &[(PathBuf, DecodeTrace)]) -> Result<WorldChoice, CliError> {
    if let Some(w) = &a.world {
        return WorldChoice::parse(w);
    }
    if let Some(m) = RunManifest::read(&a.traces) {
        return WorldChoice::parse(&m.world);
    }
    let mut seeds = traces.iter().map(|(_, t)| t.header.world_seed);
    match seeds.next() {
        None => Ok(WorldChoice::Seed(0)),
        Some(first) if seeds.all(|s| s == first) => first
            .map(WorldChoice::Seed)
            .ok_or_else(|| config_err("traces carry no world seed; pass --world")),
        Some(_) => Err(config_err(
            "traces come from different worlds; pass --world",
        )),
    }
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let traces = read_traces(&a.traces)?;
    let world = eval_world(a, &traces)?.load()?;
    let captions: Vec<_> = traces
        .iter()
        .map(|(_, t)| (t.header.image_id.clone(), t.tokens()))
        .collect();
    let report = evaluate(&captions, &world).map_err(failed)?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report).map_err(failed)?
    )
    .map_err(failed)?;
    Ok(())
}

pub fn export(a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let p = &a.trace;
    let trace = DecodeTrace::read_file(p).map_err(|e| failed(format!("{}: {e}", p.display())))?;
    let mut buf = Vec::new();
    match a.what {
        ExportKind::Trajectory => {
            let points = ccta_trajectory(&trace).map_err(failed)?;
            write_trajectory_csv(&points, &mut buf).map_err(failed)?;
        }
        ExportKind::Snapshots => {
            let rows = candidate_snapshots(&trace).map_err(failed)?;
            write_snapshots_csv(&rows, &mut buf).map_err(failed)?;
        }
    }
    match &a.out {
        Some(path) => {
            fs::write(path, &buf).map_err(|e| failed(format!("{}: {e}", path.display())))?
        }
        None => out.write_all(&buf).map_err(failed)?,
    }
    Ok(())
}
