//! Error metrics, boundary diagnostics, timing and report export.
//!
//! `metrics.csv` is long format with header `run_id,iteration,metric,value`.
//! Metric names are `<pollutant>/<name>` or `<pollutant>/<name>/<subdomain>`:
//!
//! | name | unit |
//! |------|------|
//! | `test_mae`, `test_mae_std`, `baseline_mae` | µg/m³ |
//! | `mean_width`, `discontinuity` | normalized |
//! | `discontinuity_ug` | µg/m³ |
//! | `swaps` | count |
//! | `subdomain_mae/<m>`, `subdomain_mae_std/<m>` | µg/m³ |
//! | `train_loss/<m>` | normalized |
//!
//! Wall-clock time goes to `summary.json` only, so reruns produce identical CSV bytes.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ddtrain::{member_predict_at, DdError, Ensemble, QueryInputs};
use crate::geometry::Point;
use crate::plume;
use crate::rng::{stream, tag};
use crate::scenario::Scenario;

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BURN_IN: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} iterations, run has {got}")]
    InsufficientIterations { needed: usize, got: usize },
    #[error("empty benchmark")]
    EmptyBenchmark,
    #[error("no boundary pairs")]
    NoPairs,
    #[error("repetitions must be >= 1")]
    NoRepetitions,
    #[error("{0}")]
    Io(String),
    #[error("metrics.csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub pollutant: String,
    /// Pooled over all test rows, µg/m³.
    pub test_mae: f64,
    pub test_mae_std: f64,
    /// Per-subdomain training-mean predictor on the same test rows.
    pub baseline_mae: f64,
    pub subdomain_mae: Vec<f64>,
    pub subdomain_mae_std: Vec<f64>,
    /// Mean interval width after this iteration's update.
    pub mean_width: f64,
    pub discontinuity: f64,
    pub discontinuity_ug: f64,
    pub train_loss: Vec<f64>,
    pub swaps: usize,
    pub wall_seconds: f64,
}

/// Mean and population standard deviation of `|pred - truth|`.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<(f64, f64), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = pred.len() as f64;
    let errs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub fn mean_abs_difference(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    Ok(mae(a, b)?.0)
}

/// Mean normalized `|f_m(p1, t) - f_n(p2, t)|` over the ensemble's pairs and `times`.
pub fn boundary_discontinuity(ens: &Ensemble, scn: &Scenario, pollutant: &str, times: &[usize]) -> Result<f64, DdError> {
    if ens.pairs.is_empty() {
        return Err(MetricsError::NoPairs.into());
    }
    if times.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let p = ens.pollutant_index(pollutant)?;
    let mut total = 0.0;
    for pair in &ens.pairs {
        let (m, n) = pair.boundary;
        let a = member_predict_at(scn, ens.member(p, m), pair.p1, times)?;
        let b = member_predict_at(scn, ens.member(p, n), pair.p2, times)?;
        total += mean_abs_difference(a.as_slice().unwrap(), b.as_slice().unwrap())?;
    }
    Ok(total / ens.pairs.len() as f64)
}

/// Discontinuity per iteration for one pollutant.
pub fn discontinuity_series(history: &[IterationMetrics], pollutant: &str) -> Vec<f64> {
    history.iter().filter(|h| h.pollutant == pollutant).map(|h| h.discontinuity).collect()
}

/// Mean of `a` over iterations `k >= burn_in` divided by the same mean of `b`. Series are indexed from iteration 1.
pub fn discontinuity_ratio(a: &[f64], b: &[f64], burn_in: usize) -> Result<f64, MetricsError> {
    let from = burn_in.max(1) - 1;
    for s in [a, b] {
        if s.len() < burn_in.max(1) {
            return Err(MetricsError::InsufficientIterations { needed: burn_in.max(1), got: s.len() });
        }
    }
    let mean = |s: &[f64]| s[from..].iter().sum::<f64>() / (s.len() - from) as f64;
    Ok(mean(a) / mean(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub pollutant: String,
    pub n_queries: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub query_set_sha256: String,
    pub solver_seconds: Vec<f64>,
    pub surrogate_seconds: Vec<f64>,
    pub solver_median_seconds: f64,
    pub surrogate_median_seconds: f64,
    pub solver_queries_per_second: f64,
    pub surrogate_queries_per_second: f64,
    /// Solver time over surrogate time.
    pub speedup: f64,
    pub note: Option<String>,
}

/// `(subdomain, receptor, hour)` triples drawn uniformly.
pub fn benchmark_queries(scn: &Scenario, n_queries: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = stream(seed, &[tag::BENCH]);
    (0..n_queries)
        .map(|_| {
            let m = rng.random_range(0..scn.subdomains.len());
            let i = rng.random_range(0..scn.subdomains[m].receptors.len());
            let t = rng.random_range(0..scn.hours());
            (m, i, t)
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Times the plume solver and the surrogate on the same query set.
pub fn timing_benchmark(
    scn: &Scenario,
    ens: &Ensemble,
    pollutant: &str,
    n_queries: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport, DdError> {
    if n_queries == 0 {
        return Err(MetricsError::EmptyBenchmark.into());
    }
    if repetitions == 0 {
        return Err(MetricsError::NoRepetitions.into());
    }
    let p = ens.pollutant_index(pollutant)?;
    let sp = scn.pollutant_index(pollutant).ok_or_else(|| DdError::UnknownPollutant(pollutant.into()))?;
    let queries = benchmark_queries(scn, n_queries, seed);
    let mut hasher = Sha256::new();
    for (m, i, t) in &queries {
        hasher.update(format!("{m},{i},{t}\n"));
    }
    let query_set_sha256 = hex::encode(hasher.finalize());

    let z = scn.config.receptor_height;
    let segs: Vec<_> = (0..scn.subdomains.len()).map(|m| scn.subdomain_sources(m)).collect();
    let traffic_rows: Vec<&[f64]> =
        scn.traffic.rows().into_iter().map(|r| r.to_slice().expect("standard layout")).collect();
    let mut solver_seconds = Vec::with_capacity(repetitions);
    let mut surrogate_seconds = Vec::with_capacity(repetitions);
    let mut checksum = 0.0;
    for _ in 0..repetitions {
        let start = Instant::now();
        let mut vols = Vec::new();
        for &(m, i, t) in &queries {
            vols.clear();
            vols.extend(scn.subdomains[m].line_sources.iter().map(|&id| traffic_rows[t][id]));
            checksum += plume::total_concentration(
                &segs[m],
                scn.subdomains[m].receptors[i].with_height(z),
                &scn.weather[t],
                &vols,
                &scn.pollutants()[sp],
                &scn.plume_params[m],
                false,
            )
            .map_err(|e| DdError::Format(e.to_string()))?;
        }
        solver_seconds.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        let batch: Vec<(Point, QueryInputs<'_>)> = queries
            .iter()
            .map(|&(m, i, t)| {
                let inputs = QueryInputs { timestamp: scn.timestamps[t], weather: &scn.weather[t], volumes: traffic_rows[t] };
                (scn.subdomains[m].receptors[i], inputs)
            })
            .collect();
        checksum += ens.predict_many(p, &batch, false)?.iter().sum::<f64>();
        surrogate_seconds.push(start.elapsed().as_secs_f64());
    }
    std::hint::black_box(checksum);
    let solver_median_seconds = median(&solver_seconds);
    let surrogate_median_seconds = median(&surrogate_seconds);
    Ok(BenchReport {
        schema_version: METRICS_SCHEMA_VERSION,
        pollutant: ens.pollutants[p].name.clone(),
        n_queries,
        repetitions,
        seed,
        query_set_sha256,
        solver_queries_per_second: n_queries as f64 / solver_median_seconds,
        surrogate_queries_per_second: n_queries as f64 / surrogate_median_seconds,
        speedup: solver_median_seconds / surrogate_median_seconds,
        solver_seconds,
        surrogate_seconds,
        solver_median_seconds,
        surrogate_median_seconds,
        note: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
}

pub fn metric_rows(run_id: &str, history: &[IterationMetrics]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for h in history {
        let mut push = |name: String, value: f64| {
            rows.push(MetricRow { run_id: run_id.into(), iteration: h.iteration, metric: format!("{}/{name}", h.pollutant), value })
        };
        push("test_mae".into(), h.test_mae);
        push("test_mae_std".into(), h.test_mae_std);
        push("baseline_mae".into(), h.baseline_mae);
        push("mean_width".into(), h.mean_width);
        push("discontinuity".into(), h.discontinuity);
        push("discontinuity_ug".into(), h.discontinuity_ug);
        push("swaps".into(), h.swaps as f64);
        for (m, v) in h.subdomain_mae.iter().enumerate() {
            push(format!("subdomain_mae/{m}"), *v);
        }
        for (m, v) in h.subdomain_mae_std.iter().enumerate() {
            push(format!("subdomain_mae_std/{m}"), *v);
        }
        for (m, v) in h.train_loss.iter().enumerate() {
            push(format!("train_loss/{m}"), *v);
        }
    }
    rows
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    w.write_record(["run_id", "iteration", "metric", "value"]).map_err(|e| MetricsError::Csv(e.to_string()))?;
    for r in rows {
        w.write_record([r.run_id.clone(), r.iteration.to_string(), r.metric.clone(), r.value.to_string()])
            .map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Io(e.to_string()))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, MetricsError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| MetricsError::Csv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["run_id", "iteration", "metric", "value"] {
        return Err(MetricsError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
            let bad = |c: &str| MetricsError::Csv(format!("row {}: bad {c}", i + 2));
            Ok(MetricRow {
                run_id: rec[0].to_string(),
                iteration: rec[1].parse().map_err(|_| bad("iteration"))?,
                metric: rec[2].to_string(),
                value: rec[3].parse().map_err(|_| bad("value"))?,
            })
        })
        .collect()
}

/// Rebuilds the history of `run_id`. Wall-clock time is not stored in the CSV and comes back as 0.
pub fn history_from_rows(rows: &[MetricRow], run_id: &str) -> Result<Vec<IterationMetrics>, MetricsError> {
    let mut out: Vec<IterationMetrics> = Vec::new();
    for r in rows.iter().filter(|r| r.run_id == run_id) {
        let (pollutant, rest) =
            r.metric.split_once('/').ok_or_else(|| MetricsError::Csv(format!("bad metric name {:?}", r.metric)))?;
        let pos = out.iter().position(|h| h.pollutant == pollutant && h.iteration == r.iteration);
        let h = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(IterationMetrics {
                    iteration: r.iteration,
                    pollutant: pollutant.into(),
                    test_mae: 0.0,
                    test_mae_std: 0.0,
                    baseline_mae: 0.0,
                    subdomain_mae: Vec::new(),
                    subdomain_mae_std: Vec::new(),
                    mean_width: 0.0,
                    discontinuity: 0.0,
                    discontinuity_ug: 0.0,
                    train_loss: Vec::new(),
                    swaps: 0,
                    wall_seconds: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        let v = r.value;
        match rest.split_once('/') {
            None => match rest {
                "test_mae" => h.test_mae = v,
                "test_mae_std" => h.test_mae_std = v,
                "baseline_mae" => h.baseline_mae = v,
                "mean_width" => h.mean_width = v,
                "discontinuity" => h.discontinuity = v,
                "discontinuity_ug" => h.discontinuity_ug = v,
                "swaps" => h.swaps = v as usize,
                _ => return Err(MetricsError::Csv(format!("unknown metric {:?}", r.metric))),
            },
            Some((name, _)) => match name {
                "subdomain_mae" => h.subdomain_mae.push(v),
                "subdomain_mae_std" => h.subdomain_mae_std.push(v),
                "train_loss" => h.train_loss.push(v),
                _ => return Err(MetricsError::Csv(format!("unknown metric {:?}", r.metric))),
            },
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub run_id: String,
    pub config: serde_json::Value,
    pub final_metrics: Vec<IterationMetrics>,
    pub wall_seconds_total: f64,
    pub history: Vec<IterationMetrics>,
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn export_report(
    dir: &Path,
    run_id: &str,
    history: &[IterationMetrics],
    config: serde_json::Value,
) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))?;
    write_metrics_csv(&dir.join("metrics.csv"), &metric_rows(run_id, history))?;
    let mut final_metrics: Vec<IterationMetrics> = Vec::new();
    for h in history {
        match final_metrics.iter_mut().find(|f| f.pollutant == h.pollutant) {
            Some(f) if f.iteration <= h.iteration => *f = h.clone(),
            Some(_) => {}
            None => final_metrics.push(h.clone()),
        }
    }
    let summary = Summary {
        schema_version: METRICS_SCHEMA_VERSION,
        run_id: run_id.into(),
        config,
        final_metrics,
        wall_seconds_total: history.iter().map(|h| h.wall_seconds).sum(),
        history: history.to_vec(),
    };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| MetricsError::Io(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json).map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))
}

pub fn read_summary(dir: &Path) -> Result<Summary, MetricsError> {
    let path = dir.join("summary.json");
    let bytes = std::fs::read(&path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), (1.0, 0.0));
        assert_eq!(mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), (1.0, 1.0));
        assert_eq!(mae(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(mae(&[1.0], &[]), Err(MetricsError::LengthMismatch(1, 0)));
    }

    #[test]
    fn ratio_examples() {
        let a = vec![2.0; 12];
        let b = vec![4.0; 12];
        assert_eq!(discontinuity_ratio(&a, &b, 9).unwrap(), 0.5);
        assert_eq!(discontinuity_ratio(&a, &a, 9).unwrap(), 1.0);
        assert_eq!(
            discontinuity_ratio(&a[..5], &b, 9),
            Err(MetricsError::InsufficientIterations { needed: 9, got: 5 })
        );
        // Only iterations 9..=10 count.
        let c = [100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 1.0, 3.0];
        assert_eq!(discontinuity_ratio(&c, &[2.0; 10], 9).unwrap(), 1.0);
    }

    pub(crate) fn sample_history(pollutant: &str, n: usize) -> Vec<IterationMetrics> {
        (1..=n)
            .map(|k| IterationMetrics {
                iteration: k,
                pollutant: pollutant.into(),
                test_mae: 1.0 / k as f64,
                test_mae_std: 0.1 + 1e-17 * k as f64,
                baseline_mae: 3.3,
                subdomain_mae: vec![0.1 * k as f64, std::f64::consts::PI],
                subdomain_mae_std: vec![1e-300, 2.0],
                mean_width: 1.0 / 3.0,
                discontinuity: 0.123456789012345678,
                discontinuity_ug: 7.0,
                train_loss: vec![0.2, 0.30000000000000004],
                swaps: k % 2,
                wall_seconds: 0.0,
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let h = sample_history("PM2.5", 4);
        let path = dir.path().join("metrics.csv");
        let mut rows = metric_rows("a", &h);
        let other = sample_history("NO2", 2);
        rows.extend(metric_rows("b", &other));
        write_metrics_csv(&path, &rows).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(history_from_rows(&back, "a").unwrap(), h);
        assert_eq!(history_from_rows(&back, "b").unwrap(), other);
    }

    #[test]
    fn report_has_config_echo() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = sample_history("NO2", 3);
        h[2].wall_seconds = 1.5;
        export_report(dir.path(), "run", &h, serde_json::json!({"lambda": 1.0})).unwrap();
        let s = read_summary(dir.path()).unwrap();
        assert_eq!(s.config["lambda"], 1.0);
        assert_eq!(s.final_metrics.len(), 1);
        assert_eq!(s.final_metrics[0].iteration, 3);
        assert_eq!(s.wall_seconds_total, 1.5);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("run_id,iteration,metric,value\n"));
        assert!(!text.contains("wall"));
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        assert!(matches!(export_report(&file.join("sub"), "r", &[], serde_json::Value::Null), Err(MetricsError::Io(_))));
    }

    proptest! {
        #[test]
        fn mae_identity_and_permutation(v in prop::collection::vec(-1e6f64..1e6, 1..40), w in prop::collection::vec(-1e6f64..1e6, 1..40), rot in 0usize..40) {
            let n = v.len().min(w.len());
            let (a, b) = (&v[..n], &w[..n]);
            prop_assert_eq!(mae(a, a).unwrap(), (0.0, 0.0));
            let r = rot % n;
            let ra: Vec<f64> = a.iter().cycle().skip(r).take(n).copied().collect();
            let rb: Vec<f64> = b.iter().cycle().skip(r).take(n).copied().collect();
            let (m1, s1) = mae(a, b).unwrap();
            let (m2, s2) = mae(&ra, &rb).unwrap();
            prop_assert!((m1 - m2).abs() <= 1e-9 * m1.max(1.0));
            prop_assert!((s1 - s2).abs() <= 1e-6 * s1.max(1.0));
        }

        #[test]
        fn ratio_of_identical_runs_is_one(v in prop::collection::vec(1e-3f64..1e3, 9..20)) {
            prop_assert_eq!(discontinuity_ratio(&v, &v, 9).unwrap(), 1.0);
        }

        #[test]
        fn discontinuity_is_symmetric(a in prop::collection::vec(-5f64..5.0, 1..30), b in prop::collection::vec(-5f64..5.0, 1..30)) {
            let n = a.len().min(b.len());
            prop_assert_eq!(mean_abs_difference(&a[..n], &b[..n]).unwrap(), mean_abs_difference(&b[..n], &a[..n]).unwrap());
        }
    }
}
