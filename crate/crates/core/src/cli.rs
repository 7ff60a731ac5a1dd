//! The `selroll` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{load_with_overrides, RunConfig};
use crate::divergence::annotate;
use crate::gate::{self, GateRule};
use crate::report::{self, Manifest, ReportBundle, RunLock, Stamp, Table};
use crate::simenv::{self, AbTestSummary, CorpusSpec, GateSupervisorConfig};
use crate::stats::{self, bootstrap_ci, BootstrapResult};
use crate::toytrain::{self, Arm, Tier3Config, TrainTelemetry};
use crate::types::{read_corpus, step_tokens, write_corpus, GroupRecord};

#[derive(Parser, Debug)]
#[command(name = "selroll", version, about = "Early rollout gating for group-relative RL on multi-turn tasks")]
pub struct Cli {
    /// Flat key = value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for all outputs
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus of rollout groups
    Rollout(RolloutArgs),
    /// Compute divergence signals at each K of a grid
    Signals(SignalsArgs),
    /// Sweep gate thresholds over a corpus
    Sweep(SweepArgs),
    /// Correlation heatmap and per-task-type breakdown
    Correlate(CorrelateArgs),
    /// Paired baseline/gated rollout comparison
    Abtest(AbtestArgs),
    /// Toy GRPO training, fixed-buffer (2) or online (3)
    Train(TrainArgs),
    /// Percentile bootstrap interval for a step-token saving or a mean
    Bootstrap(BootstrapArgs),
    /// Assemble all tables of a run directory
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct GateFlags {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dl: Option<f64>,
    #[arg(long)]
    pub tau_h: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Calibrated,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long, value_enum, default_value = "calibrated")]
    pub preset: Preset,
    #[arg(long)]
    pub fp_fraction: Option<f64>,
    /// Apply the gate during rollout
    #[arg(long)]
    pub gate: bool,
    #[command(flatten)]
    pub gate_flags: GateFlags,
    #[arg(long, default_value = "rollout.jsonl")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SignalsArgs {
    #[arg(long, default_value = "rollout.jsonl")]
    pub input: PathBuf,
    /// K grid
    #[arg(long = "k", value_delimiter = ',', default_value = "5,10,15,20")]
    pub k_grid: Vec<usize>,
    #[arg(long, default_value = "signals.jsonl")]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
pub enum RuleKind {
    Single,
    Or,
    LowTau,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, default_value = "signals.jsonl")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Sweep every K of this grid instead of a single K
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.08,0.10,0.12,0.14,0.18")]
    pub dl_grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "single")]
    pub rule: RuleKind,
    #[arg(long, default_value_t = 0.9)]
    pub tau_h: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t_l: f64,
    #[arg(long, default_value_t = 0.8)]
    pub precision_floor: f64,
    /// Also emit the baseline-arm comparison at the configured (K, d_L)
    #[arg(long)]
    pub arms: bool,
    /// Search the low-tau mirror over its full grid and report whether any point clears the floor
    #[arg(long)]
    pub low_tau_search: bool,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[arg(long, default_value = "signals.jsonl")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
    pub k_grid: Vec<usize>,
    /// K of the global d_K in the per-type table
    #[arg(long)]
    pub k: Option<usize>,
    /// Score the non-zero-variance class with the negated signal
    #[arg(long)]
    pub flip: bool,
}

#[derive(Args, Debug)]
pub struct AbtestArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub gate_flags: GateFlags,
    #[arg(long, default_value_t = 1000)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
pub enum ArmChoice {
    Baseline,
    Gated,
    Both,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub tier: u8,
    #[arg(long, value_enum, default_value = "both")]
    pub arm: ArmChoice,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub prompts_per_iter: usize,
    /// Tier 2 steps
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub groups_per_step: usize,
    /// Tier 2 buffer corpus; generated from the config when absent
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub gate_flags: GateFlags,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[arg(long, default_value = "abtest_baseline.jsonl")]
    pub baseline: PathBuf,
    #[arg(long, default_value = "abtest_gated.jsonl")]
    pub gated: PathBuf,
    /// One number per line; bootstraps their mean instead of a paired saving
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Defaults to --out-dir
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub precision_floor: f64,
}

/// A summary body with its provenance stamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

fn overrides(cli: &Cli) -> Vec<(&'static str, String)> {
    let mut o: Vec<(&'static str, String)> = vec![];
    if let Some(s) = cli.seed {
        o.push(("seed", s.to_string()));
    }
    let gate = |o: &mut Vec<(&'static str, String)>, g: &GateFlags| {
        if let Some(k) = g.k {
            o.push(("K", k.to_string()));
        }
        if let Some(d) = g.dl {
            o.push(("d_L", d.to_string()));
        }
        if let Some(t) = g.tau_h {
            o.push(("tau_H", t.to_string()));
        }
    };
    match &cli.command {
        Command::Rollout(a) => {
            if let Some(n) = a.n {
                o.push(("N_groups", n.to_string()));
            }
            if let Some(g) = a.g {
                o.push(("G", g.to_string()));
            }
            if let Some(t) = a.tmax {
                o.push(("T_max", t.to_string()));
            }
            if let Some(f) = a.fp_fraction {
                o.push(("fp_fraction", f.to_string()));
            }
            gate(&mut o, &a.gate_flags);
        }
        Command::Abtest(a) => {
            if let Some(n) = a.n {
                o.push(("N_groups", n.to_string()));
            }
            gate(&mut o, &a.gate_flags);
        }
        Command::Train(a) => {
            if let Some(s) = &a.seeds {
                o.push(("seeds", s.iter().map(u64::to_string).collect::<Vec<_>>().join(",")));
            }
            if let Some(lr) = a.lr {
                o.push(("learning_rate", lr.to_string()));
            }
            gate(&mut o, &a.gate_flags);
        }
        Command::Sweep(a) => {
            if let Some(k) = a.k {
                o.push(("K", k.to_string()));
            }
        }
        Command::Correlate(a) => {
            if let Some(k) = a.k {
                o.push(("K", k.to_string()));
            }
        }
        _ => {}
    }
    o
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
    command: &'static str,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    fn stamp(&self) -> Stamp {
        Stamp { config_hash: self.cfg.hash(), seed: self.cfg.seed }
    }

    fn input(&mut self, p: &Path, hash: &str) -> anyhow::Result<()> {
        self.manifest.record(&self.out, p, "input", self.command, hash)?;
        Ok(())
    }

    fn output(&mut self, p: &Path, hash: &str) -> anyhow::Result<()> {
        self.manifest.record(&self.out, p, "output", self.command, hash)?;
        Ok(())
    }

    fn write_table(&mut self, name: &str, table: &Table, stamp: &Stamp) -> anyhow::Result<()> {
        let csv = self.out.join(format!("{name}.csv"));
        let txt = self.out.join(format!("{name}.txt"));
        report::write_text(&csv, &table.to_csv(stamp))?;
        report::write_text(&txt, &format!("{}\n{}", stamp.comment(), table.to_text()))?;
        self.output(&csv, &stamp.config_hash)?;
        self.output(&txt, &stamp.config_hash)?;
        print!("{}", table.to_text());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, body: T, stamp: &Stamp) -> anyhow::Result<PathBuf> {
        let p = self.out.join(name);
        let s = Stamped { config_hash: stamp.config_hash.clone(), seed: stamp.seed, body };
        report::write_text(&p, &(serde_json::to_string_pretty(&s)? + "\n"))?;
        self.output(&p, &stamp.config_hash)?;
        Ok(p)
    }

    fn write_corpus(&mut self, p: &Path, corpus: &[GroupRecord], stamp: &Stamp) -> anyhow::Result<()> {
        write_corpus(p, corpus).with_context(|| format!("writing {}", p.display()))?;
        self.output(p, &stamp.config_hash)
    }

    fn read_corpus(&mut self, p: &Path) -> anyhow::Result<(Vec<GroupRecord>, Stamp)> {
        let p = self.path(p);
        if !p.exists() {
            bail!("input file not found: {}", p.display());
        }
        let corpus = read_corpus(&p).with_context(|| format!("reading corpus {}", p.display()))?;
        if corpus.is_empty() {
            bail!("corpus {} is empty", p.display());
        }
        let stamp = corpus_stamp(&corpus, &self.cfg)?;
        self.input(&p, &stamp.config_hash)?;
        Ok((corpus, stamp))
    }
}

/// Provenance of a corpus: the config hash its records carry (all must
/// agree), or the current config's when they carry none.
pub fn corpus_stamp(corpus: &[GroupRecord], cfg: &RunConfig) -> crate::Result<Stamp> {
    let mut hash: Option<&str> = None;
    for g in corpus {
        if let Some(h) = g.config_hash.as_deref() {
            match hash {
                None => hash = Some(h),
                Some(prev) if prev != h => return Err(crate::Error::ConfigHashMismatch(prev.into(), h.into())),
                _ => {}
            }
        }
    }
    Ok(Stamp { config_hash: hash.map_or_else(|| cfg.hash(), str::to_string), seed: cfg.seed })
}

fn corpus_spec(cfg: &RunConfig) -> CorpusSpec {
    CorpusSpec { g: cfg.G, t_max: cfg.T_max, fp_fraction: cfg.fp_fraction, ..CorpusSpec::calibrated(cfg.N_groups, cfg.seed) }
}

fn ensure_signals(corpus: &mut [GroupRecord], ks: &[usize]) -> crate::Result<()> {
    for g in corpus.iter_mut() {
        let missing: Vec<usize> = ks.iter().copied().filter(|k| !g.divergence.contains_key(k)).collect();
        if !missing.is_empty() {
            annotate(g, &missing)?;
        }
    }
    Ok(())
}

fn stamp_records(corpus: &mut [GroupRecord], hash: &str) {
    for g in corpus {
        g.config_hash = Some(hash.to_string());
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_with_overrides(cli.config.as_deref(), &overrides(&cli)).context("configuration")?;
    let command = match &cli.command {
        Command::Rollout(_) => "rollout",
        Command::Signals(_) => "signals",
        Command::Sweep(_) => "sweep",
        Command::Correlate(_) => "correlate",
        Command::Abtest(_) => "abtest",
        Command::Train(_) => "train",
        Command::Bootstrap(_) => "bootstrap",
        Command::Report(_) => "report",
    };
    let out = match &cli.command {
        Command::Report(ReportArgs { run_dir: Some(d), .. }) => d.clone(),
        _ => cli.out_dir.clone(),
    };
    let _lock = RunLock::acquire(&out)?;
    let manifest = Manifest::load(&out).context("reading manifest")?;
    let mut ctx = Ctx { cfg, out, manifest, command };
    let started = Instant::now();
    match &cli.command {
        Command::Rollout(a) => cmd_rollout(&mut ctx, a)?,
        Command::Signals(a) => cmd_signals(&mut ctx, a)?,
        Command::Sweep(a) => cmd_sweep(&mut ctx, a)?,
        Command::Correlate(a) => cmd_correlate(&mut ctx, a)?,
        Command::Abtest(a) => cmd_abtest(&mut ctx, a)?,
        Command::Train(a) => cmd_train(&mut ctx, a)?,
        Command::Bootstrap(a) => cmd_bootstrap(&mut ctx, a)?,
        Command::Report(a) => cmd_report(&mut ctx, a)?,
    }
    ctx.manifest.save(&ctx.out)?;
    log::info!("{command} finished in {:.2?}", started.elapsed());
    Ok(())
}

fn cmd_rollout(ctx: &mut Ctx, a: &RolloutArgs) -> anyhow::Result<()> {
    let Preset::Calibrated = a.preset;
    let spec = corpus_spec(&ctx.cfg);
    let gate = if a.gate { ctx.cfg.gate() } else { GateSupervisorConfig::disabled() };
    let stamp = ctx.stamp();
    let mut corpus = simenv::generate_corpus(&spec, &gate)?;
    stamp_records(&mut corpus, &stamp.config_hash);
    let p = ctx.path(&a.output);
    ctx.write_corpus(&p, &corpus, &stamp)?;
    let count = |l| corpus.iter().filter(|g| g.label == l).count();
    use crate::types::GroupLabel::*;
    println!(
        "{} groups: {} all_fail, {} mixed, {} all_succeed; {} cut; {} step-tokens -> {}",
        corpus.len(),
        count(AllFail),
        count(Mixed),
        count(AllSucceed),
        corpus.iter().filter(|g| g.is_cut()).count(),
        corpus.iter().map(step_tokens).sum::<usize>(),
        p.display()
    );
    Ok(())
}

fn cmd_signals(ctx: &mut Ctx, a: &SignalsArgs) -> anyhow::Result<()> {
    if a.k_grid.is_empty() || a.k_grid.contains(&0) {
        bail!("--k needs positive values");
    }
    let (mut corpus, stamp) = ctx.read_corpus(&a.input)?;
    for g in corpus.iter_mut() {
        annotate(g, &a.k_grid)?;
    }
    let p = ctx.path(&a.output);
    ctx.write_corpus(&p, &corpus, &stamp)?;
    println!("signals at K = {:?} for {} groups -> {}", a.k_grid, corpus.len(), p.display());
    Ok(())
}

fn cmd_sweep(ctx: &mut Ctx, a: &SweepArgs) -> anyhow::Result<()> {
    let (mut corpus, stamp) = ctx.read_corpus(&a.input)?;
    let ks = a.k_grid.clone().unwrap_or_else(|| vec![ctx.cfg.K]);
    let t_max = corpus[0].t_max;
    if ks.iter().any(|&k| k == 0 || k >= t_max) {
        bail!("K must satisfy 1 <= K < T_max = {t_max}");
    }
    ensure_signals(&mut corpus, &ks)?;
    let rule = match a.rule {
        RuleKind::Single => GateRule::SingleAxis { d_l: 0.0 },
        RuleKind::Or => GateRule::OrRule { d_l: 0.0, tau_h: a.tau_h },
        RuleKind::LowTau => GateRule::LowTauMirror { d_l: 0.0, t_l: a.t_l },
    };
    let mut rows = vec![];
    for &k in &ks {
        let obs = gate::observations(&corpus, k, ctx.cfg.epsilon)?;
        rows.extend(gate::sweep(&obs, rule, k, &a.dl_grid, t_max));
    }
    ctx.write_table("sweep", &report::sweep_table(&rows), &stamp)?;
    let clearing: Vec<String> =
        rows.iter().filter(|r| r.clears(a.precision_floor)).map(|r| format!("(K={}, d_L={:.2})", r.k, r.d_l)).collect();
    if clearing.is_empty() {
        println!("no row clears the {:.2} precision floor", a.precision_floor);
    } else {
        println!("rows clearing the {:.2} precision floor: {}", a.precision_floor, clearing.join(" "));
    }

    if a.arms {
        let k = ctx.cfg.K;
        ensure_signals(&mut corpus, &[k])?;
        let obs = gate::observations(&corpus, k, ctx.cfg.epsilon)?;
        let single = gate::sweep(&obs, GateRule::SingleAxis { d_l: ctx.cfg.d_L }, k, &[ctx.cfg.d_L], t_max);
        let arms = gate::baseline_arms(&obs, k, t_max, ctx.cfg.d_L, ctx.cfg.tau_H.unwrap_or(0.9), single[0].cut, ctx.cfg.seed)?;
        ctx.write_table("arms", &report::arms_table(&arms), &stamp)?;
    }
    if a.low_tau_search {
        ensure_signals(&mut corpus, &gate::K_GRID)?;
        let g = gate::low_tau_mirror_search(
            &corpus,
            &gate::K_GRID,
            &gate::LOW_TAU_TL_GRID,
            &gate::low_tau_dl_grid(),
            t_max,
            ctx.cfg.epsilon,
            a.precision_floor,
        )?;
        ctx.write_table("low_tau_search", &report::sweep_table(&g.rows), &stamp)?;
        println!("{}", report::grid_search_verdict(&g));
    }
    Ok(())
}

fn cmd_correlate(ctx: &mut Ctx, a: &CorrelateArgs) -> anyhow::Result<()> {
    let (mut corpus, stamp) = ctx.read_corpus(&a.input)?;
    let k = ctx.cfg.K;
    let mut ks = a.k_grid.clone();
    if !ks.contains(&k) {
        ks.push(k);
    }
    ensure_signals(&mut corpus, &ks)?;
    let cells = stats::heatmap(&corpus, &a.k_grid, a.flip)?;
    let (rho, au) = report::heatmap_tables(&cells);
    ctx.write_table("heatmap_rho", &rho, &stamp)?;
    ctx.write_table("heatmap_auroc", &au, &stamp)?;
    let pt = stats::per_type_breakdown(&corpus, k, &a.k_grid)?;
    ctx.write_table("per_type", &report::per_type_table(&pt), &stamp)?;
    Ok(())
}

fn cmd_abtest(ctx: &mut Ctx, a: &AbtestArgs) -> anyhow::Result<()> {
    let spec = corpus_spec(&ctx.cfg);
    let gate = ctx.cfg.gate();
    let stamp = ctx.stamp();
    let mut ab = simenv::ab_test(&spec, &gate, a.b, a.level)?;
    stamp_records(&mut ab.baseline, &stamp.config_hash);
    stamp_records(&mut ab.gated, &stamp.config_hash);
    let pb = ctx.out.join("abtest_baseline.jsonl");
    let pg = ctx.out.join("abtest_gated.jsonl");
    ctx.write_corpus(&pb, &ab.baseline, &stamp)?;
    ctx.write_corpus(&pg, &ab.gated, &stamp)?;
    ctx.write_json("abtest.json", &ab.summary, &stamp)?;
    ctx.write_table("abtest", &report::abtest_table(&ab.summary), &stamp)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub tier: u8,
    pub tier2: Option<toytrain::Tier2Result>,
    pub tier3: Option<Tier3Summary>,
}

/// The tier-3 result without its per-iteration telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tier3Summary {
    pub per_seed: Vec<toytrain::SeedSummary>,
    pub mean_grad_l2: [f64; 2],
    pub mean_zero_fraction: [f64; 2],
    pub measured_ratio: f64,
    pub predicted_ratio: f64,
}

impl From<&toytrain::Tier3Result> for Tier3Summary {
    fn from(r: &toytrain::Tier3Result) -> Self {
        Tier3Summary {
            per_seed: r.per_seed.clone(),
            mean_grad_l2: r.mean_grad_l2,
            mean_zero_fraction: r.mean_zero_fraction,
            measured_ratio: r.measured_ratio,
            predicted_ratio: r.predicted_ratio,
        }
    }
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> anyhow::Result<()> {
    let tc = ctx.cfg.train_config();
    let stamp = ctx.stamp();
    let keep = |t: &TrainTelemetry| match a.arm {
        ArmChoice::Both => true,
        ArmChoice::Baseline => t.arm == Arm::Baseline,
        ArmChoice::Gated => t.arm == Arm::Gated,
    };
    let (mut telemetry, summary, table) = if a.tier == 2 {
        let (mut buffer, buffer_stamp) = match &a.input {
            Some(p) => ctx.read_corpus(p)?,
            None => (simenv::generate_corpus(&corpus_spec(&ctx.cfg), &GateSupervisorConfig::disabled())?, stamp.clone()),
        };
        if buffer_stamp.config_hash != stamp.config_hash {
            log::info!("buffer corpus was generated under config {}", buffer_stamp.config_hash);
        }
        ensure_signals(&mut buffer, &[tc.gate.k])?;
        let r = toytrain::run_tier2(&buffer, a.steps, a.groups_per_step, &tc, ctx.cfg.seed)?;
        let table = report::tier2_table(&r);
        (r.telemetry.clone(), TrainSummary { tier: 2, tier2: Some(r), tier3: None }, table)
    } else {
        let t3 = Tier3Config {
            iterations: a.iters,
            prompts_per_iter: a.prompts_per_iter,
            seeds: ctx.cfg.seeds.clone(),
            ..Tier3Config::default()
        };
        let r = toytrain::run_tier3(&tc, &t3)?;
        let table = report::tier3_table(&r);
        (r.telemetry.clone(), TrainSummary { tier: 3, tier2: None, tier3: Some((&r).into()) }, table)
    };
    telemetry.retain(keep);
    for t in telemetry.iter_mut() {
        t.config_hash = Some(stamp.config_hash.clone());
    }
    let p = ctx.out.join("telemetry.jsonl");
    let mut text = String::new();
    for t in &telemetry {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    report::write_text(&p, &text)?;
    ctx.output(&p, &stamp.config_hash)?;
    ctx.write_json("train_summary.json", &summary, &stamp)?;
    ctx.write_table(&format!("tier{}", a.tier), &table, &stamp)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutput {
    pub statistic: String,
    pub n: usize,
    pub result: BootstrapResult,
}

fn cmd_bootstrap(ctx: &mut Ctx, a: &BootstrapArgs) -> anyhow::Result<()> {
    if !(0.0 < a.level && a.level < 1.0) {
        bail!("--level must be in (0, 1)");
    }
    let (out, stamp) = if let Some(vp) = &a.values {
        let p = ctx.path(vp);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let values: Vec<f64> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.parse::<f64>().with_context(|| format!("not a number: {l:?}")))
            .collect::<anyhow::Result<_>>()?;
        let stamp = ctx.stamp();
        ctx.input(&p, &stamp.config_hash)?;
        let r = bootstrap_ci(&values, stats::mean, a.b, a.level, ctx.cfg.seed)?;
        (BootstrapOutput { statistic: "mean".into(), n: values.len(), result: r }, stamp)
    } else {
        let (base, sb) = ctx.read_corpus(&a.baseline)?;
        let (gated, sg) = ctx.read_corpus(&a.gated)?;
        if sb.config_hash != sg.config_hash {
            return Err(crate::Error::ConfigHashMismatch(sb.config_hash, sg.config_hash).into());
        }
        if base.len() != gated.len() || base.iter().zip(&gated).any(|(b, g)| b.prompt_id != g.prompt_id) {
            bail!("baseline and gated corpora are not paired group by group");
        }
        let pairs: Vec<(f64, f64)> =
            base.iter().zip(&gated).map(|(b, g)| (step_tokens(b) as f64, step_tokens(g) as f64)).collect();
        let saving = |s: &[(f64, f64)]| {
            let b: f64 = s.iter().map(|p| p.0).sum();
            let g: f64 = s.iter().map(|p| p.1).sum();
            (b - g) / b * 100.0
        };
        let r = bootstrap_ci(&pairs, saving, a.b, a.level, ctx.cfg.seed)?;
        (BootstrapOutput { statistic: "step_token_saving_pct".into(), n: pairs.len(), result: r }, sb)
    };
    println!(
        "{} = {:.4}, {:.0}% CI [{:.4}, {:.4}] (B = {}, n = {})",
        out.statistic,
        out.result.point_estimate,
        out.result.level * 100.0,
        out.result.ci_low,
        out.result.ci_high,
        out.result.b,
        out.n
    );
    ctx.write_json("bootstrap.json", &out, &stamp)?;
    Ok(())
}

fn read_stamped<T: for<'de> Deserialize<'de>>(p: &Path) -> anyhow::Result<Stamped<T>> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn cmd_report(ctx: &mut Ctx, a: &ReportArgs) -> anyhow::Result<()> {
    let dir = ctx.out.clone();
    let mut bundle = ReportBundle::default();
    let mut hashes: Vec<(String, PathBuf)> = vec![];

    let corpus_file = ["signals.jsonl", "rollout.jsonl"].into_iter().find(|f| dir.join(f).exists());
    if let Some(name) = corpus_file {
        let (mut corpus, stamp) = ctx.read_corpus(Path::new(name))?;
        let p = dir.join(name);
        hashes.push((stamp.config_hash.clone(), p.clone()));
        bundle.sources.push(p);
        let k = ctx.cfg.K;
        let t_max = corpus[0].t_max;
        let mut ks = gate::K_GRID.to_vec();
        if !ks.contains(&k) {
            ks.push(k);
        }
        ensure_signals(&mut corpus, &ks)?;
        let obs = gate::observations(&corpus, k, ctx.cfg.epsilon)?;
        let rows = gate::sweep(&obs, GateRule::SingleAxis { d_l: 0.0 }, k, &[0.05, 0.08, 0.10, 0.12, 0.14, 0.18], t_max);
        bundle.sweep = Some(report::sweep_table(&rows));
        let cells = stats::heatmap(&corpus, &gate::K_GRID, false)?;
        let (rho, au) = report::heatmap_tables(&cells);
        bundle.correlation = vec![rho, au];
        bundle.per_type = Some(report::per_type_table(&stats::per_type_breakdown(&corpus, k, &gate::K_GRID)?));
        let single = gate::sweep(&obs, GateRule::SingleAxis { d_l: ctx.cfg.d_L }, k, &[ctx.cfg.d_L], t_max);
        let arms = gate::baseline_arms(&obs, k, t_max, ctx.cfg.d_L, ctx.cfg.tau_H.unwrap_or(0.9), single[0].cut, ctx.cfg.seed)?;
        bundle.arms = Some(report::arms_table(&arms));
        let g = gate::low_tau_mirror_search(
            &corpus,
            &gate::K_GRID,
            &gate::LOW_TAU_TL_GRID,
            &gate::low_tau_dl_grid(),
            t_max,
            ctx.cfg.epsilon,
            a.precision_floor,
        )?;
        bundle.low_tau = Some(report::grid_search_table(&g));
        bundle.notes.push(report::grid_search_verdict(&g));
    }
    let ab = dir.join("abtest.json");
    if ab.exists() {
        let s: Stamped<AbTestSummary> = read_stamped(&ab)?;
        ctx.input(&ab, &s.config_hash)?;
        hashes.push((s.config_hash.clone(), ab.clone()));
        bundle.sources.push(ab.clone());
        bundle.tiers.push(report::abtest_table(&s.body));
    }
    let tr = dir.join("train_summary.json");
    if tr.exists() {
        let s: Stamped<TrainSummary> = read_stamped(&tr)?;
        ctx.input(&tr, &s.config_hash)?;
        hashes.push((s.config_hash.clone(), tr.clone()));
        bundle.sources.push(tr.clone());
        if let Some(r) = &s.body.tier2 {
            bundle.tiers.push(report::tier2_table(r));
        }
        if let Some(r) = &s.body.tier3 {
            let full = toytrain::Tier3Result {
                telemetry: vec![],
                per_seed: r.per_seed.clone(),
                mean_grad_l2: r.mean_grad_l2,
                mean_zero_fraction: r.mean_zero_fraction,
                measured_ratio: r.measured_ratio,
                predicted_ratio: r.predicted_ratio,
            };
            bundle.tiers.push(report::tier3_table(&full));
        }
    }
    if hashes.is_empty() {
        bail!("nothing to report in {}: no corpus, abtest.json or train_summary.json", dir.display());
    }
    let first = hashes[0].clone();
    for (h, p) in &hashes[1..] {
        if *h != first.0 {
            bail!("refusing to mix runs: {} has config hash {} but {} has {}", first.1.display(), first.0, p.display(), h);
        }
    }
    let stamp = Stamp { config_hash: first.0, seed: ctx.cfg.seed };
    bundle.stamp = Some(stamp.clone());
    let text = bundle.to_text();
    let p = dir.join("report.txt");
    report::write_text(&p, &text)?;
    ctx.output(&p, &stamp.config_hash)?;
    ctx.write_json("report.json", &bundle, &stamp)?;
    print!("{text}");
    Ok(())
}

/// Parses arguments, runs, and maps errors to a non-zero exit status.
pub fn main_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
