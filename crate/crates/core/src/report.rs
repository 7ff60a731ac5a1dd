//! Tables (CSV and aligned text), the run manifest, and the run-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gate::{ArmRow, GridSearch, SweepRow};
use crate::simenv::AbTestSummary;
use crate::stats::{CorrelationCell, PerTypeTable};
use crate::toytrain::{Tier2Result, Tier3Result};

/// Provenance stamped on every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    /// Reads the stamp back from the first line of a CSV file.
    pub fn parse_comment(line: &str) -> Option<Stamp> {
        let rest = line.strip_prefix("# config_hash=")?;
        let (hash, seed) = rest.split_once(" seed=")?;
        Some(Stamp { config_hash: hash.to_string(), seed: seed.trim().parse().ok()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Table {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Table { title: title.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self, stamp: &Stamp) -> String {
        let mut out = stamp.comment();
        out.push('\n');
        for line in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&line.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let mut width = vec![0; ncol];
        for line in std::iter::once(&self.header).chain(&self.rows) {
            for (i, c) in line.iter().enumerate().take(ncol) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let render = |line: &Vec<String>| {
            line.iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&render(&self.header));
        out.push('\n');
        out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&render(r));
            out.push('\n');
        }
        out
    }
}

pub fn f(v: f64, digits: usize) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.digits$}")
    }
}

pub fn fo(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| f(x, digits))
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(
        "Gate sweep",
        &["rule", "K", "d_L", "cut", "TP", "FP", "precision", "recall", "safe %", "raw %", "raw (actual) %", "L2 kept"],
    );
    for r in rows {
        t.push(vec![
            r.rule.clone(),
            r.k.to_string(),
            f(r.d_l, 2),
            r.cut.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            fo(r.precision, 2),
            f(r.recall, 2),
            f(r.safe_pct, 1),
            f(r.raw_pct, 1),
            f(r.raw_actual_pct, 1),
            fo(r.l2_preserved, 3),
        ]);
    }
    t
}

pub fn arms_table(rows: &[ArmRow]) -> Table {
    let mut t = Table::new(
        "Baseline arms",
        &["arm", "cut", "TP", "FP", "precision", "rollout saved %", "saved (actual) %", "L2 preserved %"],
    );
    for r in rows {
        t.push(vec![
            r.arm.clone(),
            r.cut.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            fo(r.precision, 2),
            f(r.rollout_saved_pct, 1),
            f(r.rollout_saved_actual_pct, 1),
            f(r.l2_preserved_pct, 1),
        ]);
    }
    t
}

/// Signals as rows, K as columns; one table for rho (with p) and one for AUROC.
pub fn heatmap_tables(cells: &[CorrelationCell]) -> (Table, Table) {
    let mut ks: Vec<usize> = cells.iter().map(|c| c.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut metrics: Vec<&str> = vec![];
    for c in cells {
        if !metrics.contains(&c.metric.as_str()) {
            metrics.push(&c.metric);
        }
    }
    let n = cells.first().map_or(0, |c| c.n);
    let header: Vec<String> = std::iter::once("metric".to_string()).chain(ks.iter().map(|k| format!("K={k}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rho = Table::new(format!("Spearman rho against reward variance (n = {n})"), &header);
    let mut au = Table::new(format!("AUROC, non-zero-variance class (n = {n})"), &header);
    let by: BTreeMap<(&str, usize), &CorrelationCell> = cells.iter().map(|c| ((c.metric.as_str(), c.k), c)).collect();
    for m in metrics {
        let mut r1 = vec![m.to_string()];
        let mut r2 = vec![m.to_string()];
        for &k in &ks {
            let c = by.get(&(m, k));
            r1.push(match c.and_then(|c| c.spearman_rho.zip(c.p_value)) {
                Some((r, p)) => format!("{r:+.2} (p={p:.1e})"),
                None => "n/a".into(),
            });
            r2.push(fo(c.and_then(|c| c.auroc), 2));
        }
        rho.push(r1);
        au.push(r2);
    }
    (rho, au)
}

pub fn per_type_table(pt: &PerTypeTable) -> Table {
    let mut t = Table::new(
        format!("Per task type AUROC (global d_K at K = {})", pt.k),
        &["task type", "n", "n_zv", "global AUROC", "best (metric, K)", "best AUROC", "note"],
    );
    for r in &pt.rows {
        let best = match (&r.best_metric, r.best_k) {
            (Some(m), Some(k)) => format!("{m}, {k}"),
            _ => "n/a".into(),
        };
        let mut note = r.note.clone().unwrap_or_default();
        if r.single_observation {
            if !note.is_empty() {
                note.push_str("; ");
            }
            note.push_str("single observation");
        }
        t.push(vec![
            r.task_type.to_string(),
            r.n.to_string(),
            r.n_zv.to_string(),
            fo(r.global_auroc, 2),
            best,
            fo(r.best_auroc, 2),
            note,
        ]);
    }
    t.push(vec!["median".into(), "".into(), "".into(), fo(pt.median_global, 2), "".into(), fo(pt.median_best, 2), "".into()]);
    t
}

pub fn grid_search_table(g: &GridSearch) -> Table {
    let mut t = Table::new("Low-tau mirror search", &["points", "best precision", "at", "clears floor"]);
    let at = g.best.as_ref().map_or("n/a".into(), |b| format!("{} (K={})", b.rule, b.k));
    t.push(vec![
        g.rows.len().to_string(),
        fo(g.best.as_ref().and_then(|b| b.precision), 3),
        at,
        if g.any_clears { "yes".into() } else { "no".into() },
    ]);
    t
}

/// The verdict line printed under the low-tau search.
pub fn grid_search_verdict(g: &GridSearch) -> String {
    if g.any_clears {
        format!("low-tau mirror: some operating point reaches the {:.2} precision floor", g.floor)
    } else {
        format!("low-tau mirror: no operating point clears the {:.2} precision floor at any K", g.floor)
    }
}

pub fn abtest_table(s: &AbTestSummary) -> Table {
    let mut t = Table::new(
        "Paired rollout A/B",
        &["groups", "baseline step-tokens", "gated step-tokens", "saving %", "95% CI", "cuts", "TP", "precision", "d_K AUROC"],
    );
    t.push(vec![
        s.n_groups.to_string(),
        s.baseline_step_tokens.to_string(),
        s.gated_step_tokens.to_string(),
        f(s.saving_pct, 2),
        format!("[{:.2}, {:.2}]", s.saving_ci.ci_low, s.saving_ci.ci_high),
        s.cuts.to_string(),
        s.true_positive_cuts.to_string(),
        fo(s.precision, 2),
        fo(s.d_k_auroc, 3),
    ]);
    t
}

pub fn tier2_table(r: &Tier2Result) -> Table {
    let mut t = Table::new("Fixed-buffer training", &["arm", "train items", "mean grad L2", "grad ratio vs baseline"]);
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let gb = mean(r.steps.iter().map(|s| s.baseline_grad_l2).collect());
    let gg = mean(r.steps.iter().filter_map(|s| s.gated_grad_l2).collect());
    t.push(vec!["baseline".into(), r.baseline_items.to_string(), f(gb, 4), "1.000".into()]);
    t.push(vec!["gated".into(), r.gated_items.to_string(), f(gg, 4), fo(r.mean_grad_ratio, 3)]);
    t
}

pub fn tier3_table(r: &Tier3Result) -> Table {
    let mut t = Table::new(
        "Online training",
        &[
            "seed",
            "held-out iter 0",
            "held-out final (b / g)",
            "step-tokens (b / g)",
            "cuts",
            "z (b / g)",
            "grad ratio",
            "predicted",
        ],
    );
    for s in &r.per_seed {
        t.push(vec![
            s.seed.to_string(),
            format!("{:.2} / {:.2}", s.heldout_initial[0], s.heldout_initial[1]),
            format!("{:.2} / {:.2}", s.heldout_final[0], s.heldout_final[1]),
            format!("{} / {}", s.cumulative_step_tokens[0], s.cumulative_step_tokens[1]),
            s.total_cuts.to_string(),
            format!("{:.3} / {:.3}", s.mean_zero_fraction[0], s.mean_zero_fraction[1]),
            f(s.measured_ratio, 3),
            f(s.predicted_ratio, 3),
        ]);
    }
    t.push(vec![
        "pooled".into(),
        "".into(),
        "".into(),
        "".into(),
        "".into(),
        format!("{:.3} / {:.3}", r.mean_zero_fraction[0], r.mean_zero_fraction[1]),
        f(r.measured_ratio, 3),
        f(r.predicted_ratio, 3),
    ]);
    t
}

/// Everything `report` assembles from a run directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportBundle {
    pub stamp: Option<Stamp>,
    pub sweep: Option<Table>,
    pub correlation: Vec<Table>,
    pub per_type: Option<Table>,
    pub arms: Option<Table>,
    pub low_tau: Option<Table>,
    pub tiers: Vec<Table>,
    pub notes: Vec<String>,
    /// Files every table was computed from.
    pub sources: Vec<PathBuf>,
}

impl ReportBundle {
    pub fn tables(&self) -> Vec<&Table> {
        let mut v: Vec<&Table> = vec![];
        v.extend(self.sweep.as_ref());
        v.extend(self.correlation.iter());
        v.extend(self.per_type.as_ref());
        v.extend(self.arms.as_ref());
        v.extend(self.low_tau.as_ref());
        v.extend(self.tiers.iter());
        v
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.stamp {
            out.push_str(&s.comment());
            out.push_str("\n\n");
        }
        for t in self.tables() {
            out.push_str(&t.to_text());
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub role: String,
    pub command: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Adds or replaces the entry for `path` (relative to `dir` when possible).
    pub fn record(&mut self, dir: &Path, path: &Path, role: &str, command: &str, config_hash: &str) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let rel = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned();
        self.entries.retain(|e| !(e.path == rel && e.role == role));
        self.entries.push(ManifestEntry {
            path: rel,
            sha256,
            role: role.into(),
            command: command.into(),
            config_hash: config_hash.into(),
        });
        Ok(())
    }
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".selroll.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidConfig {
                field: "out-dir".into(),
                reason: format!("{} is locked by another process ({})", dir.display(), path.display()),
            }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads the stamp of a CSV file written by `Table::to_csv`.
pub fn csv_stamp(path: &Path) -> Result<Option<Stamp>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().next().and_then(Stamp::parse_comment))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_round_trips() {
        let s = Stamp { config_hash: "abc".into(), seed: 42 };
        assert_eq!(Stamp::parse_comment(&s.comment()), Some(s));
    }

    #[test]
    fn csv_escapes_and_stamps() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec!["x, y".into(), "1".into()]);
        let csv = t.to_csv(&Stamp { config_hash: "h".into(), seed: 1 });
        assert_eq!(csv, "# config_hash=h seed=1\na,b\n\"x, y\",1\n");
    }

    #[test]
    fn text_is_aligned() {
        let mut t = Table::new("t", &["name", "v"]);
        t.push(vec!["long name".into(), "1".into()]);
        t.push(vec!["s".into(), "100".into()]);
        let txt = t.to_text();
        let lines: Vec<&str> = txt.lines().collect();
        assert_eq!(lines[3].len(), lines[4].len());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn manifest_replaces_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        fs::write(&p, "1").unwrap();
        let mut m = Manifest::default();
        m.record(dir.path(), &p, "output", "rollout", "h").unwrap();
        fs::write(&p, "2").unwrap();
        m.record(dir.path(), &p, "output", "rollout", "h").unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].path, "x.txt");
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }
}
