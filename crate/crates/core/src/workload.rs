//! Function specifications, Poisson request generation and queue math.
//!
//! Every request stream owns a ChaCha8 generator seeded from its own seed, so
//! two streams never share random state and a stream replays bit-identically.
//! Exponential variates are drawn by inverse CDF.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency class of a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Latency-sensitive.
    LS,
    /// Latency-desirable.
    LD,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::LS => f.write_str("LS"),
            Category::LD => f.write_str("LD"),
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LS" => Ok(Category::LS),
            "LD" => Ok(Category::LD),
            other => Err(Error::invalid(format!("unknown category {other:?}"))),
        }
    }
}

/// A serverless function as seen by the host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: String,
    pub category: Category,
    /// Mean service time in seconds.
    pub mean_service_time: f64,
    /// Mean arrival rate in requests per second.
    pub arrival_rate: f64,
    pub uses_futex_lock: bool,
    /// Instructions per cycle when running alone.
    pub isolated_ipc: f64,
    /// Per-window (cpu wait seconds, nvcs, iTLB misses) of a solo run.
    pub isolated_contention_baseline: [f64; 3],
    /// Code footprint in pages; scales iTLB refill cost.
    pub code_footprint: f64,
    /// Threads the worker fans a request out to. Each thread needs the full
    /// service demand of CPU time; the request completes when all finish.
    pub worker_threads: usize,
}

impl FunctionSpec {
    pub fn new(id: impl Into<String>, category: Category, mu: f64, lambda: f64) -> Self {
        Self {
            id: id.into(),
            category,
            mean_service_time: mu,
            arrival_rate: lambda,
            uses_futex_lock: false,
            isolated_ipc: 1.0,
            isolated_contention_baseline: [0.0; 3],
            code_footprint: 0.0,
            worker_threads: 1,
        }
    }

    pub fn with_lock(mut self, lock: bool) -> Self {
        self.uses_futex_lock = lock;
        self
    }

    pub fn with_ipc(mut self, ipc: f64) -> Self {
        self.isolated_ipc = ipc;
        self
    }

    pub fn with_footprint(mut self, pages: f64) -> Self {
        self.code_footprint = pages;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.worker_threads = threads;
        self
    }

    pub fn is_ls(&self) -> bool {
        self.category == Category::LS
    }

    /// Offered load λ·μ of one server.
    pub fn offered_load(&self) -> f64 {
        self.arrival_rate * self.mean_service_time
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("function id is empty"));
        }
        let positive = [
            ("mean_service_time", self.mean_service_time),
            ("arrival_rate", self.arrival_rate),
            ("isolated_ipc", self.isolated_ipc),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{}: {name} must be > 0, got {v}", self.id)));
            }
        }
        if !(self.code_footprint.is_finite() && self.code_footprint >= 0.0) {
            return Err(Error::invalid(format!("{}: negative code footprint", self.id)));
        }
        if self.worker_threads == 0 {
            return Err(Error::invalid(format!("{}: worker_threads must be >= 1", self.id)));
        }
        Ok(())
    }
}

/// ρ = λ·μ / c.
pub fn queue_utilization(lambda: f64, mu: f64, c: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("arrival rate must be > 0, got {lambda}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("service time must be > 0, got {mu}")));
    }
    if c == 0 {
        return Err(Error::invalid("server count must be >= 1"));
    }
    Ok(lambda * mu / c as f64)
}

/// Smallest server count keeping utilization at or below `rho_target`.
pub fn required_servers(lambda: f64, mu: f64, rho_target: f64) -> Result<usize> {
    if !(rho_target > 0.0 && rho_target <= 1.0) {
        return Err(Error::invalid(format!("rho_target must be in (0, 1], got {rho_target}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("bad rate/service time ({lambda}, {mu})")));
    }
    let exact = lambda * mu / rho_target;
    // Absorb representation error so λμ = ρ·k lands on k, not k + 1.
    let servers = (exact * (1.0 - 1e-9)).ceil();
    Ok((servers as usize).max(1))
}

/// A reproducible Poisson request source for one function.
#[derive(Debug, Clone)]
pub struct RequestStream {
    pub spec: FunctionSpec,
    pub rng_seed: u64,
    pub horizon: f64,
}

/// One generated request: arrival time and CPU demand, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub arrival: f64,
    pub demand: f64,
}

impl RequestStream {
    pub fn new(spec: FunctionSpec, rng_seed: u64, horizon: f64) -> Self {
        Self {
            spec,
            rng_seed,
            horizon,
        }
    }

    pub fn iter(&self) -> TraceIter {
        TraceIter {
            rng: ChaCha8Rng::seed_from_u64(self.rng_seed),
            rate: self.spec.arrival_rate,
            mean_demand: self.spec.mean_service_time,
            now: 0.0,
            horizon: self.horizon,
        }
    }
}

/// Lazy arrival sequence; `generate_trace` is the collected form.
#[derive(Debug, Clone)]
pub struct TraceIter {
    rng: ChaCha8Rng,
    rate: f64,
    mean_demand: f64,
    now: f64,
    horizon: f64,
}

/// Inverse-CDF exponential variate with the given mean.
pub(crate) fn sample_exp(rng: &mut impl Rng, mean: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() * mean
}

impl Iterator for TraceIter {
    type Item = TraceEntry;

    fn next(&mut self) -> Option<TraceEntry> {
        if !(self.horizon > 0.0) || !(self.rate > 0.0) {
            return None;
        }
        let gap = sample_exp(&mut self.rng, 1.0 / self.rate);
        let demand = sample_exp(&mut self.rng, self.mean_demand);
        let arrival = self.now + gap;
        if arrival >= self.horizon {
            self.horizon = 0.0;
            return None;
        }
        self.now = arrival;
        Some(TraceEntry { arrival, demand })
    }
}

pub fn generate_trace(stream: &RequestStream) -> Vec<TraceEntry> {
    stream.iter().collect()
}

/// The ten-application mix: five LS and five LD functions at λμ ≈ 0.9.
///
/// IPC, footprint and thread counts are simulator calibration values.
pub fn builtin_catalog() -> Vec<FunctionSpec> {
    use Category::{LD, LS};
    vec![
        FunctionSpec::new("MR", LS, 0.125, 7.20).with_ipc(1.6).with_footprint(6000.0),
        FunctionSpec::new("EG", LS, 0.220, 4.09).with_ipc(1.4).with_footprint(8000.0),
        FunctionSpec::new("SA", LS, 0.400, 2.25).with_ipc(1.2).with_footprint(12000.0),
        FunctionSpec::new("BS", LS, 0.160, 5.63).with_ipc(1.8).with_footprint(5000.0),
        FunctionSpec::new("OD", LS, 0.300, 3.00)
            .with_lock(true)
            .with_ipc(0.9)
            .with_footprint(10000.0),
        FunctionSpec::new("VP", LD, 13.100, 0.07)
            .with_ipc(1.1)
            .with_footprint(9000.0)
            .with_threads(4),
        FunctionSpec::new("IR", LD, 0.003, 300.00)
            .with_ipc(1.3)
            .with_footprint(4000.0)
            .with_threads(2),
        FunctionSpec::new("PC", LD, 1.450, 0.62)
            .with_ipc(0.8)
            .with_footprint(7000.0)
            .with_threads(2),
        FunctionSpec::new("DV", LD, 0.450, 2.00).with_ipc(1.0).with_footprint(6000.0),
        FunctionSpec::new("PRA", LD, 8.750, 0.10)
            .with_ipc(0.9)
            .with_footprint(8000.0)
            .with_threads(2),
    ]
}

pub fn find_spec<'a>(catalog: &'a [FunctionSpec], id: &str) -> Result<&'a FunctionSpec> {
    catalog
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::config(format!("unknown workload {id:?}")))
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRow {
    id: String,
    category: Category,
    mu: f64,
    lambda: f64,
    lock: bool,
    footprint: f64,
    #[serde(default = "one_thread")]
    threads: usize,
    #[serde(default = "unit_ipc")]
    ipc: f64,
}

fn one_thread() -> usize {
    1
}

fn unit_ipc() -> f64 {
    1.0
}

/// Writes a catalog as CSV: `id,category,mu,lambda,lock,footprint,threads,ipc`.
pub fn write_catalog(path: impl AsRef<Path>, specs: &[FunctionSpec]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for s in specs {
        w.serialize(CatalogRow {
            id: s.id.clone(),
            category: s.category,
            mu: s.mean_service_time,
            lambda: s.arrival_rate,
            lock: s.uses_futex_lock,
            footprint: s.code_footprint,
            threads: s.worker_threads,
            ipc: s.isolated_ipc,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a catalog written by [`write_catalog`]; the last two columns are optional.
pub fn read_catalog(path: impl AsRef<Path>) -> Result<Vec<FunctionSpec>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<CatalogRow>() {
        let row = row?;
        let spec = FunctionSpec::new(row.id, row.category, row.mu, row.lambda)
            .with_lock(row.lock)
            .with_footprint(row.footprint)
            .with_threads(row.threads)
            .with_ipc(row.ipc);
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn utilization_examples() {
        assert!((queue_utilization(7.20, 0.125, 1).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(queue_utilization(1.0, 1.0, 1).unwrap(), 1.0);
        assert!((queue_utilization(300.0, 0.003, 2).unwrap() - 0.45).abs() < 1e-12);
        assert!(queue_utilization(0.0, 1.0, 1).is_err());
        assert!(queue_utilization(1.0, -1.0, 1).is_err());
        assert!(queue_utilization(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn required_servers_examples() {
        assert_eq!(required_servers(7.20, 0.125, 0.9).unwrap(), 1);
        assert_eq!(required_servers(14.4, 0.125, 0.9).unwrap(), 2);
        assert_eq!(required_servers(0.07, 13.1, 1.0).unwrap(), 1);
        assert!(required_servers(1.0, 1.0, 0.0).is_err());
        assert!(required_servers(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn catalog_matches_workload_table() {
        let cat = builtin_catalog();
        assert_eq!(cat.len(), 10);
        assert_eq!(cat.iter().filter(|s| s.is_ls()).count(), 5);
        assert_eq!(cat.iter().filter(|s| !s.is_ls()).count(), 5);
        let locked: Vec<_> = cat.iter().filter(|s| s.uses_futex_lock).map(|s| &s.id).collect();
        assert_eq!(locked, vec!["OD"]);
        for s in &cat {
            s.validate().unwrap();
            let rho = s.offered_load();
            assert!((0.85..=0.95).contains(&rho), "{} rho {rho}", s.id);
            let k = required_servers(s.arrival_rate, s.mean_service_time, 0.9).unwrap();
            assert_eq!(k, if rho > 0.9 + 1e-9 { 2 } else { 1 }, "{}", s.id);
        }
        let mr = find_spec(&cat, "MR").unwrap();
        assert_eq!((mr.mean_service_time, mr.arrival_rate), (0.125, 7.20));
        let pra = find_spec(&cat, "PRA").unwrap();
        assert_eq!((pra.mean_service_time, pra.arrival_rate), (8.750, 0.10));
    }

    #[test]
    fn trace_edge_cases() {
        let spec = FunctionSpec::new("MR", Category::LS, 0.125, 7.2);
        assert!(generate_trace(&RequestStream::new(spec.clone(), 1, 0.0)).is_empty());
        assert!(generate_trace(&RequestStream::new(spec.clone(), 1, -5.0)).is_empty());
        let a = generate_trace(&RequestStream::new(spec.clone(), 9, 100.0));
        let b = generate_trace(&RequestStream::new(spec.clone(), 9, 100.0));
        assert_eq!(a, b);
        let c = generate_trace(&RequestStream::new(spec, 10, 100.0));
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0].arrival <= w[1].arrival));
        assert!(a.iter().all(|e| e.arrival < 100.0 && e.demand > 0.0));
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        let spec = FunctionSpec::new("MR", Category::LS, 0.125, 7.2);
        let n = RequestStream::new(spec, 2024, 10_000.0).iter().count() as f64;
        let expected = 72_000.0;
        assert!((n - expected).abs() <= 3.0 * expected.sqrt(), "count {n}");
    }

    #[test]
    fn demand_mean_converges() {
        let spec = FunctionSpec::new("X", Category::LS, 0.5, 1.0);
        let demands: Vec<f64> = RequestStream::new(spec, 77, 1e9)
            .iter()
            .take(100_000)
            .map(|e| e.demand)
            .collect();
        let mean = demands.iter().sum::<f64>() / demands.len() as f64;
        assert!((mean / 0.5 - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn catalog_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.csv");
        let cat = builtin_catalog();
        write_catalog(&path, &cat).unwrap();
        let back = read_catalog(&path).unwrap();
        assert_eq!(back.len(), cat.len());
        for (a, b) in cat.iter().zip(&back) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn catalog_file_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("user.csv");
        std::fs::write(&path, "id,category,mu,lambda,lock,footprint\nFOO,LS,0.2,4.5,true,100\n")
            .unwrap();
        let specs = read_catalog(&path).unwrap();
        assert_eq!(specs.len(), 1);
        assert!(specs[0].uses_futex_lock);
        assert_eq!(specs[0].worker_threads, 1);
    }

    proptest! {
        #[test]
        fn utilization_is_linear(l in 0.01f64..500.0, m in 0.001f64..20.0, c in 1usize..16, k in 0.1f64..10.0) {
            let base = queue_utilization(l, m, c).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
            prop_assert!(rel(queue_utilization(k * l, m, c).unwrap(), k * base));
            prop_assert!(rel(queue_utilization(l, k * m, c).unwrap(), k * base));
            prop_assert!(rel(queue_utilization(l, m, 2 * c).unwrap(), base / 2.0));
        }
    }
}
