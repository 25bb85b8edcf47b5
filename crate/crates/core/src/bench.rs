//! Experiment orchestration: seeded multi-trial comparisons of signers over
//! an (n, m) grid, with CSV/JSON emission and full reproducibility through
//! instance regeneration from seed coordinates.

use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dist::{sample_instance, BoundedDensity, RngStream};
use crate::error::Error;
use crate::gkk::{gkk_run, GkkConfig};
use crate::instance::{
    brute_force_min, discrepancy, DiscrepancyReport, Signing, VectorSet, BRUTE_FORCE_CAP,
};
use crate::prdc::PhaseDiagnostics;
use crate::reduce::reduce;
use crate::stats::{median, quantile};
use crate::theory::epsilon_threshold;
use crate::Result;

/// The signers the harness can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signer {
    Gkk,
    Random,
    Oracle,
    ReduceOnly,
    Kk1d,
}

impl Signer {
    pub fn name(&self) -> &'static str {
        match self {
            Signer::Gkk => "gkk",
            Signer::Random => "random",
            Signer::Oracle => "oracle",
            Signer::ReduceOnly => "reduce_only",
            Signer::Kk1d => "kk1d",
        }
    }

    fn id(&self) -> u64 {
        match self {
            Signer::Gkk => 1,
            Signer::Random => 2,
            Signer::Oracle => 3,
            Signer::ReduceOnly => 4,
            Signer::Kk1d => 5,
        }
    }
}

/// One (n, m) grid cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
}

/// Density description in the run-config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySpec {
    pub kind: String,
    pub half_width: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub table: Option<String>,
}

impl DensitySpec {
    pub fn build(&self) -> Result<BoundedDensity> {
        match self.kind.as_str() {
            "uniform" => BoundedDensity::uniform(self.half_width),
            "triangular" => BoundedDensity::triangular(self.half_width),
            "truncated_gaussian" => {
                BoundedDensity::truncated_gaussian(self.half_width, self.sigma.unwrap_or(1.0))
            }
            "tabulated" => {
                let path = self.table.as_ref().ok_or_else(|| {
                    Error::Validation("tabulated density needs a table path".into())
                })?;
                let file = std::fs::File::open(path)?;
                BoundedDensity::tabulated_from_csv(std::io::BufReader::new(file))
            }
            other => Err(Error::Validation(format!("unknown density kind {other}"))),
        }
    }
}

/// Parses a compact density spec string, e.g. `uniform:1.0`,
/// `triangular:0.5`, `truncated_gaussian:3.0:1.0` (half-width, then sigma),
/// or `tabulated:path.csv`.
pub fn parse_density_spec(s: &str) -> Result<DensitySpec> {
    let mut parts = s.split(':');
    let kind = parts
        .next()
        .ok_or_else(|| Error::Parse("empty density spec".into()))?
        .to_string();
    let spec = match kind.as_str() {
        "uniform" | "triangular" | "truncated_gaussian" => {
            let hw: f64 = parts
                .next()
                .ok_or_else(|| Error::Parse("missing half-width".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad half-width: {e}")))?;
            let sigma = match parts.next() {
                Some(p) => Some(
                    p.parse()
                        .map_err(|e| Error::Parse(format!("bad sigma: {e}")))?,
                ),
                None => None,
            };
            DensitySpec {
                kind,
                half_width: hw,
                sigma,
                table: None,
            }
        }
        "tabulated" => {
            let path = parts
                .next()
                .ok_or_else(|| Error::Parse("missing table path".into()))?;
            DensitySpec {
                kind,
                half_width: 0.0, // taken from the table
                sigma: None,
                table: Some(path.to_string()),
            }
        }
        other => return Err(Error::Parse(format!("unknown density kind {other}"))),
    };
    Ok(spec)
}

/// A full benchmark configuration, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub signers: Vec<Signer>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    pub density: DensitySpec,
    pub grid: Vec<Cell>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for cell in &self.grid {
            if cell.n == 0 || cell.m == 0 {
                return Err(Error::Validation("grid cells need n, m >= 1".into()));
            }
            if self.signers.contains(&Signer::Oracle) && cell.n > BRUTE_FORCE_CAP {
                return Err(Error::Validation(format!(
                    "oracle scheduled at n = {} > cap {BRUTE_FORCE_CAP}",
                    cell.n
                )));
            }
            if self.signers.contains(&Signer::Kk1d) && cell.m != 1 {
                return Err(Error::Validation(format!(
                    "kk1d scheduled at m = {} (needs m = 1)",
                    cell.m
                )));
            }
        }
        Ok(())
    }
}

/// One (cell, signer, trial) outcome; failures carry NaN plus the error text.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub m: usize,
    pub signer: &'static str,
    pub trial: usize,
    pub sup_norm: f64,
    pub wall_ms: f64,
    pub seed_hi: u64,
    pub seed_lo: u64,
    pub error: Option<String>,
    #[serde(skip)]
    pub phases: Vec<PhaseDiagnostics>,
}

/// Uniform random signing with its full report.
pub fn random_signing(x: &VectorSet, stream: RngStream) -> Result<DiscrepancyReport> {
    use rand::Rng;
    let mut rng = stream.rng();
    let signs: Vec<i8> = (0..x.count())
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect();
    discrepancy(x, &Signing::new(signs)?)
}

/// Max-heap entry ordered by value then (for determinism) by node id.
#[derive(PartialEq)]
struct HeapItem {
    value: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.value
            .partial_cmp(&other.value)
            .unwrap()
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Classic largest-differencing for scalars: repeatedly replace the two
/// largest absolute values by their difference, then reconstruct the signs
/// by walking the difference tree backwards.
pub fn kk1d(values: &[f64]) -> Result<DiscrepancyReport> {
    if values.is_empty() {
        return Err(Error::Validation("need at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value".into()));
    }
    let n = values.len();
    let mut heap: BinaryHeap<HeapItem> = (0..n)
        .map(|i| HeapItem {
            value: values[i].abs(),
            node: i,
        })
        .collect();
    // nodes beyond the n leaves record (kept child, flipped child)
    let mut children: Vec<(usize, usize)> = Vec::with_capacity(n.saturating_sub(1));
    while heap.len() > 1 {
        let a = heap.pop().unwrap();
        let b = heap.pop().unwrap();
        let node = n + children.len();
        children.push((a.node, b.node));
        heap.push(HeapItem {
            value: a.value - b.value,
            node,
        });
    }
    let root = heap.pop().unwrap();

    let total_nodes = n + children.len();
    let mut sign = vec![0i8; total_nodes];
    sign[root.node] = 1;
    for (i, &(kept, flipped)) in children.iter().enumerate().rev() {
        let s = sign[n + i];
        sign[kept] = s;
        sign[flipped] = -s;
    }
    let signs: Vec<i8> = (0..n)
        .map(|i| if values[i] < 0.0 { -sign[i] } else { sign[i] })
        .collect();
    let x = VectorSet::new(1, values.iter().map(|v| vec![*v]).collect())?;
    discrepancy(&x, &Signing::new(signs)?)
}

fn instance_stream(cfg: &RunConfig, cell_idx: usize, trial: usize) -> RngStream {
    RngStream::new(cfg.seed, 0)
        .derive(cell_idx as u64)
        .derive(trial as u64)
        .derive(0)
}

fn signer_stream(cfg: &RunConfig, cell_idx: usize, trial: usize, signer: Signer) -> RngStream {
    RngStream::new(cfg.seed, 0)
        .derive(cell_idx as u64)
        .derive(trial as u64)
        .derive(signer.id())
}

fn run_one(
    x: &VectorSet,
    rho: &BoundedDensity,
    signer: Signer,
    stream: RngStream,
    gkk_cfgs: &mut HashMap<(usize, usize), GkkConfig>,
) -> Result<(DiscrepancyReport, Vec<PhaseDiagnostics>)> {
    match signer {
        Signer::Random => Ok((random_signing(x, stream)?, Vec::new())),
        Signer::Oracle => Ok((brute_force_min(x, BRUTE_FORCE_CAP)?, Vec::new())),
        Signer::ReduceOnly => {
            let sigma = reduce(x)?;
            Ok((discrepancy(x, &sigma)?, Vec::new()))
        }
        Signer::Kk1d => {
            if x.dim() != 1 {
                return Err(Error::Domain("kk1d needs m = 1".into()));
            }
            let values: Vec<f64> = x.columns().iter().map(|c| c[0]).collect();
            Ok((kk1d(&values)?, Vec::new()))
        }
        Signer::Gkk => {
            let key = (x.count(), x.dim());
            if let std::collections::hash_map::Entry::Vacant(slot) = gkk_cfgs.entry(key) {
                let cfg = GkkConfig::for_instance(
                    x.count(),
                    x.dim(),
                    RngStream::new(0xC57A_C57A, key.1 as u64),
                )?;
                slot.insert(cfg);
            }
            let cfg = &gkk_cfgs[&key];
            let res = gkk_run(x, rho, cfg, stream)?;
            Ok((res.report, res.phases))
        }
    }
}

/// Runs every (cell, signer, trial) combination; returns the records sorted
/// by (cell, signer, trial). Individual trial failures become NaN records.
pub fn compare(cfg: &RunConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let rho = cfg.density.build()?;
    let mut gkk_cfgs: HashMap<(usize, usize), GkkConfig> = HashMap::new();
    let mut records = Vec::new();
    for (cell_idx, cell) in cfg.grid.iter().enumerate() {
        for trial in 0..cfg.trials {
            let x = sample_instance(&rho, cell.m, cell.n, instance_stream(cfg, cell_idx, trial))?;
            for &signer in &cfg.signers {
                let stream = signer_stream(cfg, cell_idx, trial, signer);
                let start = Instant::now();
                let outcome = run_one(&x, &rho, signer, stream, &mut gkk_cfgs);
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let (sup_norm, error, phases) = match outcome {
                    Ok((report, phases)) => (report.sup_norm, None, phases),
                    Err(e) => (f64::NAN, Some(e.to_string()), Vec::new()),
                };
                records.push(TrialRecord {
                    n: cell.n,
                    m: cell.m,
                    signer: signer.name(),
                    trial,
                    sup_norm,
                    wall_ms,
                    seed_hi: stream.master_seed,
                    seed_lo: stream.stream_id,
                    error,
                    phases,
                });
            }
        }
    }
    records.sort_by(|a, b| {
        (a.n, a.m, a.signer, a.trial).cmp(&(b.n, b.m, b.signer, b.trial))
    });
    Ok(records)
}

/// Writes `results.csv`, `summary.json` (per-cell medians and quartiles plus
/// the theoretical threshold overlays), and `phases.jsonl`.
pub fn write_outputs(cfg: &RunConfig, records: &[TrialRecord], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let mut csv = std::fs::File::create(out_dir.join("results.csv"))?;
    writeln!(csv, "n,m,signer,trial,sup_norm,wall_ms,seed_hi,seed_lo,error")?;
    for r in records {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            r.signer,
            r.trial,
            r.sup_norm,
            r.wall_ms,
            r.seed_hi,
            r.seed_lo,
            r.error.as_deref().unwrap_or("")
        )?;
    }

    #[derive(Serialize)]
    struct CellSummary {
        n: usize,
        m: usize,
        signer: &'static str,
        trials: usize,
        failures: usize,
        median: f64,
        q1: f64,
        q3: f64,
        thresholds: Vec<(f64, f64)>, // (gamma, epsilon_threshold)
    }
    type CellKey = (usize, usize, &'static str);
    let mut groups: Vec<(CellKey, Vec<f64>)> = Vec::new();
    let mut failures: HashMap<CellKey, usize> = HashMap::new();
    for r in records {
        let key = (r.n, r.m, r.signer);
        if r.sup_norm.is_nan() {
            *failures.entry(key).or_insert(0) += 1;
        }
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.sup_norm),
            None => groups.push((key, vec![r.sup_norm])),
        }
    }
    let summaries: Vec<CellSummary> = groups
        .into_iter()
        .map(|((n, m, signer), sups)| CellSummary {
            n,
            m,
            signer,
            trials: sups.len(),
            failures: failures.get(&(n, m, signer)).copied().unwrap_or(0),
            median: median(&sups),
            q1: quantile(&sups, 0.25),
            q3: quantile(&sups, 0.75),
            thresholds: cfg
                .gammas
                .iter()
                .map(|&g| (g, epsilon_threshold(n, m, g)))
                .collect(),
        })
        .collect();
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "trials": cfg.trials,
        "cells": summaries,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?,
    )?;

    let mut jsonl = std::fs::File::create(out_dir.join("phases.jsonl"))?;
    for r in records {
        for diag in &r.phases {
            let obj = serde_json::json!({
                "n": r.n,
                "m": r.m,
                "trial": r.trial,
                "diag": diag,
            });
            writeln!(
                jsonl,
                "{}",
                serde_json::to_string(&obj).map_err(|e| Error::Parse(e.to_string()))?
            )?;
        }
    }
    Ok(())
}
