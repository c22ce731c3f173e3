//! The `run`, `sweep` and `report` commands behind the `mtl-sparse-opt`
//! binary. Each returns a library error whose [`Error::exit_code`] the
//! binary turns into the process status.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{train, RunOutput};
use crate::report::{
    conflicts_csv, epochs_csv, fmt_num, write_file, RunReport, CONFLICTS_FILE, EPOCHS_FILE,
    MASK_FILE, REPORT_FILE,
};

/// Environment variable that relocates every output directory.
pub const OUTPUT_ROOT_ENV: &str = "MTL_SPARSE_OPT_OUT";

pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Applies the output-root override: relative directories are placed under
/// the root, absolute ones keep only their final component.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => {
            let root = PathBuf::from(root);
            if dir.is_absolute() {
                root.join(dir.file_name().unwrap_or_default())
            } else {
                root.join(dir)
            }
        }
        _ => dir.to_path_buf(),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

/// Writes `report.json`, `conflicts.csv`, `epochs.csv` and `mask.txt`.
pub fn write_run_artifacts(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(REPORT_FILE), &out.report.to_json())?;
    write_file(&dir.join(CONFLICTS_FILE), &conflicts_csv(&out.records))?;
    write_file(&dir.join(EPOCHS_FILE), &epochs_csv(&out.epochs))?;
    write_file(&dir.join(MASK_FILE), &out.mask.to_text())?;
    Ok(())
}

/// Trains one validated config and writes its artifacts.
pub fn execute(cfg: &RunConfig) -> Result<(PathBuf, RunReport)> {
    let out = train(cfg)?;
    let dir = resolve_output_dir(&cfg.output_dir);
    write_run_artifacts(&dir, &out)?;
    Ok((dir, out.report))
}

/// `run <config>`: returns the directory the artifacts went to.
pub fn cmd_run(config: &Path) -> Result<PathBuf> {
    let cfg = load_config(config)?;
    execute(&cfg).map(|(dir, _)| dir)
}

/// One `key=v1,v2,...` sweep axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::config("axis", format!("expected key=v1,v2,..., got `{s}`")))?;
        let values: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(Error::config("axis", format!("empty axis `{s}`")));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// One planned sweep run.
#[derive(Clone, Debug)]
struct SweepPoint {
    label: String,
    seed: u64,
    config: RunConfig,
}

fn plan(base: &RunConfig, axes: &[Axis], seeds: &[u64]) -> Result<Vec<SweepPoint>> {
    if axes.is_empty() {
        return Err(Error::config("axis", "at least one --axis is required"));
    }
    let mut combos: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((axis.key.as_str(), v.as_str()));
                    next
                })
            })
            .collect();
    }
    let seeds: Vec<u64> = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds.to_vec()
    };
    let root = base.output_dir.join("sweep");
    let mut points = Vec::with_capacity(combos.len() * seeds.len());
    for combo in &combos {
        let label = combo
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let dir_label: String = label
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        for &seed in &seeds {
            let mut cfg = base.clone();
            for (k, v) in combo {
                cfg.set(k, v)?;
            }
            cfg.seed = seed;
            cfg.output_dir = root.join(format!("{dir_label}_{:04}_seed{seed}", points.len()));
            cfg.validate()?;
            points.push(SweepPoint {
                label: label.clone(),
                seed,
                config: cfg,
            });
        }
    }
    Ok(points)
}

const SWEEP_HEADER: &str = "row,override,seed,runs,trainable_fraction,p_all,p_all_std,\
p_last_half,p_last_half_std,p_all_raw,p_all_masked,delta_m,delta_m_std,test_loss,test_loss_std";

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sweep_csv(points: &[SweepPoint], reports: &[RunReport]) -> String {
    let mut s = String::new();
    s.push_str(SWEEP_HEADER);
    s.push('\n');
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for (p, r) in points.iter().zip(reports) {
        let _ = writeln!(
            s,
            "data,{},{},1,{},{},,{},,{},{},{},,{},",
            p.label,
            p.seed,
            fmt_num(r.trainable_fraction),
            fmt_num(r.p_all),
            fmt_num(r.p_last_half),
            fmt_num(r.p_all_raw),
            fmt_num(r.p_all_masked),
            opt(r.delta_m),
            fmt_num(r.mean_test_loss()),
        );
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RunReport>> = BTreeMap::new();
    for (p, r) in points.iter().zip(reports) {
        if !groups.contains_key(p.label.as_str()) {
            order.push(&p.label);
        }
        groups.entry(&p.label).or_default().push(r);
    }
    for label in order {
        let rs = &groups[label];
        let col =
            |f: &dyn Fn(&RunReport) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (frac, _) = col(&|r| r.trainable_fraction);
        let (pa, pa_sd) = col(&|r| r.p_all);
        let (pl, pl_sd) = col(&|r| r.p_last_half);
        let (praw, _) = col(&|r| r.p_all_raw);
        let (pmask, _) = col(&|r| r.p_all_masked);
        let (tl, tl_sd) = col(&|r| r.mean_test_loss());
        let dm: Vec<f64> = rs.iter().filter_map(|r| r.delta_m).collect();
        let (dm_mean, dm_sd) = if dm.len() == rs.len() && !dm.is_empty() {
            let (m, sd) = mean_std(&dm);
            (Some(m), Some(sd))
        } else {
            (None, None)
        };
        let _ = writeln!(
            s,
            "summary,{label},,{},{},{},{},{},{},{},{},{},{},{},{}",
            rs.len(),
            fmt_num(frac),
            fmt_num(pa),
            fmt_num(pa_sd),
            fmt_num(pl),
            fmt_num(pl_sd),
            fmt_num(praw),
            fmt_num(pmask),
            opt(dm_mean),
            opt(dm_sd),
            fmt_num(tl),
            fmt_num(tl_sd),
        );
    }
    s
}

/// `sweep <config> --axis key=v1,... --seeds s1,...`: runs every
/// (override combination, seed) pair on `jobs` workers and writes
/// `sweep.csv` under the base output directory.
pub fn cmd_sweep(config: &Path, axes: &[Axis], seeds: &[u64], jobs: usize) -> Result<PathBuf> {
    let base = load_config(config)?;
    let points = plan(&base, axes, seeds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let reports: Vec<RunReport> = pool.install(|| {
        points
            .par_iter()
            .map(|p| execute(&p.config).map(|(_, r)| r))
            .collect::<Result<_>>()
    })?;
    let root = resolve_output_dir(&base.output_dir);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let path = root.join(SWEEP_FILE);
    write_file(&path, &sweep_csv(&points, &reports))?;
    Ok(path)
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub run_dir: PathBuf,
    pub method: String,
    pub mask_variant: String,
    pub seed: u64,
    pub p_all: f64,
    pub p_last_half: f64,
    pub delta_m: Option<f64>,
    /// Dense minus sparse incidence, for sparse runs with a dense partner.
    pub improvement: Option<(f64, f64)>,
}

/// Pairs every sparse run with the dense run of the same method (same seed
/// when available) and computes the incidence improvement.
pub fn compare(runs: &[(PathBuf, RunReport)]) -> Vec<ComparisonRow> {
    let dense_for = |method: &str, seed: u64| {
        let dense = runs
            .iter()
            .filter(|(_, r)| r.config.method == method && r.config.mask_variant == "dense");
        dense
            .clone()
            .find(|(_, r)| r.config.seed == seed)
            .or_else(|| dense.clone().next())
            .map(|(_, r)| r)
    };
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(dir, r)| {
            let improvement = (r.config.mask_variant != "dense")
                .then(|| dense_for(&r.config.method, r.config.seed))
                .flatten()
                .map(|d| (d.p_all - r.p_all, d.p_last_half - r.p_last_half));
            ComparisonRow {
                run_dir: dir.clone(),
                method: r.config.method.clone(),
                mask_variant: r.config.mask_variant.clone(),
                seed: r.config.seed,
                p_all: r.p_all,
                p_last_half: r.p_last_half,
                delta_m: r.delta_m,
                improvement,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (
            &a.method,
            a.mask_variant != "dense",
            &a.mask_variant,
            a.seed,
        )
            .cmp(&(
                &b.method,
                b.mask_variant != "dense",
                &b.mask_variant,
                b.seed,
            ))
    });
    rows
}

/// Human-readable table; the improvement columns appear only when some
/// row has a dense partner.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let paired = rows.iter().any(|r| r.improvement.is_some());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:>6} {:>18} {:>18} {:>10}",
        "method", "seed", "p_all %", "p_last_half %", "delta_m %"
    );
    for r in rows {
        let name = if r.mask_variant == "dense" {
            r.method.clone()
        } else {
            format!("{} w/ ST ({})", r.method, r.mask_variant)
        };
        let cell = |v: f64, d: Option<f64>| match (paired, d) {
            (true, Some(d)) => format!("{v:.2} ({d:+.2})"),
            _ => format!("{v:.2}"),
        };
        let dm = r
            .delta_m
            .map_or_else(|| "-".to_string(), |d| format!("{d:.2}"));
        let _ = writeln!(
            s,
            "{:<28} {:>6} {:>18} {:>18} {:>10}",
            name,
            r.seed,
            cell(r.p_all, r.improvement.map(|i| i.0)),
            cell(r.p_last_half, r.improvement.map(|i| i.1)),
            dm
        );
    }
    s
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from(
        "method,mask_variant,seed,run_dir,p_all,p_last_half,delta_m,p_all_improvement,p_last_half_improvement\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.mask_variant,
            r.seed,
            r.run_dir.display(),
            fmt_num(r.p_all),
            fmt_num(r.p_last_half),
            r.delta_m.map(fmt_num).unwrap_or_default(),
            r.improvement.map(|i| fmt_num(i.0)).unwrap_or_default(),
            r.improvement.map(|i| fmt_num(i.1)).unwrap_or_default(),
        );
    }
    s
}

/// `report <dir>...`: loads each run's `report.json`, writes
/// `comparison.csv` to `out` and returns the rendered table.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::config(
            "dirs",
            "at least one run directory is required",
        ));
    }
    let runs = dirs
        .iter()
        .map(|d| RunReport::load(d).map(|r| (d.clone(), r)))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare(&runs);
    write_file(out, &comparison_csv(&rows))?;
    Ok(render_table(&rows))
}
