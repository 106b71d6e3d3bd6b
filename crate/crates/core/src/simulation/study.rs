use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::dgp::generate_panel;
use super::scenario::SimulationScenario;
use crate::error::{Error, Result};
use crate::methods::{self, Method, MethodOptions};
use crate::testing::FdrMetrics;

/// What to run in a study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub betas: Vec<f64>,
    pub replications: usize,
    /// Worker threads; `0` uses the global pool.
    pub threads: usize,
    pub options: MethodOptions,
}

/// FDP and power of one method at one level in one replication.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: String,
    pub beta: f64,
    pub nu: f64,
    pub fdp: f64,
    pub power: f64,
    pub rejections: usize,
    pub false_discoveries: usize,
}

/// Mean and standard deviation of FDP and power across replications, in percent.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub beta: f64,
    pub mean_fdr: f64,
    pub sd_fdr: f64,
    pub mean_power: f64,
    pub sd_power: f64,
    /// Successful replications.
    pub replications: usize,
    #[serde(skip)]
    pub failures: usize,
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub reports: Vec<MetricsReport>,
    pub records: Vec<ReplicationRecord>,
    /// `(replication, method, message)` for every failed method run.
    pub failures: Vec<(usize, Method, String)>,
}

/// Generator for replication `rep`: the scenario seed selects the key, `rep` the stream.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

type RepResult = (Vec<ReplicationRecord>, Vec<(usize, Method, String)>);

fn run_replication(sc: &SimulationScenario, cfg: &StudyConfig, rep: usize) -> RepResult {
    let mut rng = replication_rng(sc.seed, rep);
    let panel = match generate_panel(sc, &mut rng) {
        Ok(p) => p,
        Err(e) => {
            return (Vec::new(), cfg.methods.iter().map(|&m| (rep, m, e.to_string())).collect());
        }
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &method in &cfg.methods {
        let stats = match methods::compute(method, &panel.returns, &panel.factors, &cfg.options) {
            Ok(s) => s,
            Err(e) => {
                failures.push((rep, method, e.to_string()));
                continue;
            }
        };
        for &beta in &cfg.betas {
            match stats.decide(method, beta) {
                Ok(out) => {
                    let m = FdrMetrics::from_sets(&out.rejected, &panel.truth);
                    records.push(ReplicationRecord {
                        replication: rep,
                        method: method.name().to_string(),
                        beta,
                        nu: sc.nu,
                        fdp: m.fdp,
                        power: m.power,
                        rejections: m.r_count,
                        false_discoveries: m.v_count,
                    });
                }
                Err(e) => failures.push((rep, method, e.to_string())),
            }
        }
    }
    (records, failures)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every method at every level on `replications` independent panels.
///
/// Output is identical for any thread count: replications own their generator stream
/// and results are aggregated in replication order.
pub fn run_study(sc: &SimulationScenario, cfg: &StudyConfig) -> Result<StudyOutcome> {
    sc.validate()?;
    if cfg.replications == 0 {
        return Err(Error::InvalidParameter("replications must be at least 1".into()));
    }
    if cfg.methods.is_empty() || cfg.betas.is_empty() {
        return Err(Error::InvalidParameter("at least one method and one level are required".into()));
    }
    for &b in &cfg.betas {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!("target FDR level {b} outside (0, 1)")));
        }
    }
    let start = Instant::now();
    let work = || -> Vec<RepResult> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(sc, cfg, rep))
            .collect()
    };
    let results = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    let runtime = start.elapsed().as_secs_f64();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    for (rep, m, msg) in &failures {
        log::warn!("replication {rep}, method {m}: {msg}");
    }

    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let failed = failures.iter().filter(|(_, m, _)| *m == method).count();
        for &beta in &cfg.betas {
            let rows: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.method == method.name() && r.beta == beta)
                .collect();
            let fdp: Vec<f64> = rows.iter().map(|r| 100.0 * r.fdp).collect();
            let power: Vec<f64> = rows.iter().map(|r| 100.0 * r.power).collect();
            let (mean_fdr, sd_fdr) = mean_sd(&fdp);
            let (mean_power, sd_power) = mean_sd(&power);
            if rows.len() == 1 {
                log::info!("{method} at beta {beta}: single replication, standard deviations set to 0");
            }
            reports.push(MetricsReport {
                method: method.name().to_string(),
                beta,
                mean_fdr,
                sd_fdr,
                mean_power,
                sd_power,
                replications: rows.len(),
                failures: failed,
                runtime_secs: runtime,
            });
        }
    }
    Ok(StudyOutcome { reports, records, failures })
}

/// `method,beta,mean_fdr,sd_fdr,mean_power,sd_power,replications`.
pub fn write_reports(reports: &[MetricsReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    if reports.is_empty() {
        w.write_record(["method", "beta", "mean_fdr", "sd_fdr", "mean_power", "sd_power", "replications"])?;
    }
    w.flush()?;
    Ok(())
}

/// `replication,method,beta,nu,fdp,power,rejections,false_discoveries`.
pub fn write_records(records: &[ReplicationRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["replication", "method", "beta", "nu", "fdp", "power", "rejections", "false_discoveries"])?;
    }
    w.flush()?;
    Ok(())
}

impl StudyOutcome {
    pub fn write_reports(&self, out: impl Write) -> Result<()> {
        write_reports(&self.reports, out)
    }

    pub fn write_records(&self, out: impl Write) -> Result<()> {
        write_records(&self.records, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::builtin;

    fn small() -> SimulationScenario {
        let mut sc = builtin::table1_normal();
        sc.p = 120;
        sc.n = 60;
        sc
    }

    fn config(threads: usize, reps: usize) -> StudyConfig {
        StudyConfig {
            methods: vec![Method::Yd, Method::Sbh],
            betas: vec![0.05, 0.1],
            replications: reps,
            threads,
            options: MethodOptions::default(),
        }
    }

    #[test]
    fn mean_sd_conventions() {
        assert_eq!(mean_sd(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_replication_has_zero_sd() {
        let out = run_study(&small(), &config(1, 1)).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert!(out.reports.iter().all(|r| r.sd_fdr == 0.0 && r.sd_power == 0.0 && r.replications == 1));
    }

    #[test]
    fn zero_replications_rejected() {
        assert!(run_study(&small(), &config(1, 0)).is_err());
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let a = run_study(&small(), &config(1, 6)).unwrap();
        let b = run_study(&small(), &config(3, 6)).unwrap();
        let csv = |o: &StudyOutcome| {
            let mut buf = Vec::new();
            o.write_reports(&mut buf).unwrap();
            o.write_records(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn report_header() {
        let out = run_study(&small(), &config(1, 2)).unwrap();
        let mut buf = Vec::new();
        out.write_reports(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,beta,mean_fdr,sd_fdr,mean_power,sd_power,replications\n"));
        let mut buf = Vec::new();
        out.write_records(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replication,method,beta,nu,fdp,power,rejections,false_discoveries\n"));
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let cfg = StudyConfig {
            options: MethodOptions { rank: Some(500), ..Default::default() },
            ..config(1, 2)
        };
        let out = run_study(&small(), &cfg).unwrap();
        assert_eq!(out.failures.len(), 4);
        assert!(out.reports.iter().all(|r| r.replications == 0 && r.failures == 2));
    }
}
