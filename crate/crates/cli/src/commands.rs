use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde_json::json;

use plume_dd::ddtrain::{run_iterations, DdConfig, DdError, Ensemble, QueryInputs};
use plume_dd::geometry::Point;
use plume_dd::metrics::{
    discontinuity_ratio, discontinuity_series, export_report, history_from_rows, read_metrics_csv, read_summary,
    timing_benchmark, IterationMetrics,
};
use plume_dd::scenario::{export_csv, generate_scenario, ingest_csv, read_traffic, read_weather, ScenarioError, SourceLayout};

use crate::config::{layered, scenario_preset, RunConfig};
use crate::{BenchArgs, EvaluateArgs, Failure, GenerateArgs, Layout, PredictArgs, TrainArgs};

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Config(_) | ScenarioError::LegacyLimit { .. } | ScenarioError::Geometry(_) => {
            Failure::Usage(e.into())
        }
        other => Failure::Runtime(other.into()),
    }
}

fn dd_failure(e: DdError) -> Failure {
    match e {
        DdError::Config(_) | DdError::Untrained | DdError::UnknownPollutant(_) => Failure::Usage(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

fn load_scenario(dir: &Path) -> Result<plume_dd::scenario::Scenario, Failure> {
    ingest_csv(dir).with_context(|| format!("loading scenario {}", dir.display())).map_err(Failure::Runtime)
}

fn load_run(dir: &Path) -> Result<Ensemble, Failure> {
    if !dir.is_dir() {
        return Err(runtime(anyhow!("run directory {} does not exist", dir.display())));
    }
    Ensemble::load(dir).with_context(|| format!("loading run {}", dir.display())).map_err(Failure::Runtime)
}

pub fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut cfg = layered(&scenario_preset(&a.preset)?, a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(h) = a.hours {
        cfg.hours = h;
    }
    if let Some(r) = a.receptors {
        cfg.receptors_per_subdomain = r;
    }
    match a.layout {
        Some(Layout::Uniform) => cfg.layout = SourceLayout::Uniform,
        Some(Layout::Asymmetric) => cfg.layout = SourceLayout::asymmetric(),
        None => {}
    }
    cfg.validate().map_err(scenario_failure)?;
    let scn = generate_scenario(&cfg).map_err(scenario_failure)?;
    export_csv(&scn, &a.out).map_err(runtime)?;
    println!(
        "scenario written to {}: {} subdomains, {} sources, {} hours, hash {}",
        a.out.display(),
        scn.subdomains.len(),
        scn.sources.len(),
        scn.hours(),
        scn.content_hash()
    );
    Ok(())
}

fn fmt_tag(v: f64) -> String {
    v.to_string()
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut dd = layered(&DdConfig::default(), a.config.as_deref())?;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { dd.$field = v; })* };
    }
    set!(zeta => zeta, epsilon => epsilon, iterations => iterations, epochs => epochs, n_b => n_b,
         t_eval => t_eval, seed => seed, batch_size => batch_size, l2 => l2);
    if let Some(lr) = a.lr {
        dd.adam.step_size = lr;
    }
    if a.cold_start {
        dd.cold_start = true;
    }
    if a.boundary_sample.is_some() {
        dd.boundary_sample = a.boundary_sample;
    }
    if !a.pollutant.is_empty() {
        dd.pollutants = a.pollutant.clone();
    }
    let lambdas = if a.lambda.is_empty() { vec![dd.lambda] } else { a.lambda.clone() };
    let kappas = if a.kappa.is_empty() { vec![dd.kappa] } else { a.kappa.clone() };
    let single = lambdas.len() * kappas.len() == 1;
    let mut runs = Vec::new();
    for &lambda in &lambdas {
        for &kappa in &kappas {
            let cfg = DdConfig { lambda, kappa, ..dd.clone() };
            cfg.validate().map_err(dd_failure)?;
            let dir = if single { a.out.clone() } else { a.out.join(format!("lambda{}_kappa{}", fmt_tag(lambda), fmt_tag(kappa))) };
            runs.push((cfg, dir));
        }
    }

    let scn = load_scenario(&a.scenario)?;
    for (cfg, dir) in runs {
        cfg.pollutant_indices(&scn).map_err(dd_failure)?;
        let run_id = match (&a.run_id, single) {
            (Some(id), true) => id.clone(),
            (Some(id), false) => format!("{id}_{}", dir.file_name().unwrap().to_string_lossy()),
            (None, _) => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into()),
        };
        eprintln!("training {run_id}: lambda {} kappa {} for {} iterations", cfg.lambda, cfg.kappa, cfg.iterations);
        let ens = run_iterations(&scn, &cfg).map_err(dd_failure)?;
        let swaps: usize = ens.history.iter().map(|h| h.swaps).sum();
        if swaps > 0 {
            eprintln!("warning: {swaps} interval updates crossed their bounds and were swapped");
        }
        ens.save(&dir).map_err(runtime)?;
        let echo = RunConfig {
            run_id: run_id.clone(),
            out: dir.clone(),
            scenario_dir: a.scenario.clone(),
            scenario_hash: ens.scenario_hash.clone(),
            scenario: scn.config.clone(),
            dd: cfg.clone(),
            pollutants: ens.pollutants.iter().map(|p| p.name.clone()).collect(),
        };
        let echo = serde_json::to_value(&echo).map_err(runtime)?;
        export_report(&dir, &run_id, &ens.history, echo).map_err(runtime)?;
        for p in &ens.pollutants {
            if let Some(last) = ens.history_for(&p.name).last() {
                println!(
                    "{run_id} {}: test MAE {:.4} ± {:.4} µg/m³ (baseline {:.4}), interval width {:.4}, discontinuity {:.5}",
                    p.name, last.test_mae, last.test_mae_std, last.baseline_mae, last.mean_width, last.discontinuity
                );
            }
        }
    }
    Ok(())
}

struct LoadedRun {
    dir: PathBuf,
    run_id: String,
    history: Vec<IterationMetrics>,
}

fn load_history(dir: &Path) -> Result<LoadedRun, Failure> {
    if !dir.is_dir() {
        return Err(runtime(anyhow!("run directory {} does not exist", dir.display())));
    }
    let summary = read_summary(dir).map_err(runtime)?;
    let rows = read_metrics_csv(&dir.join("metrics.csv")).map_err(runtime)?;
    let history = history_from_rows(&rows, &summary.run_id).map_err(runtime)?;
    if history.is_empty() {
        return Err(runtime(anyhow!("{} has no metrics for run {}", dir.display(), summary.run_id)));
    }
    Ok(LoadedRun { dir: dir.to_path_buf(), run_id: summary.run_id, history })
}

fn pollutants_of(history: &[IterationMetrics]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for h in history {
        if !out.contains(&h.pollutant) {
            out.push(h.pollutant.clone());
        }
    }
    out
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let runs = a.runs.iter().map(|d| load_history(d)).collect::<Result<Vec<_>, _>>()?;
    let mut report_runs = Vec::new();
    for run in &runs {
        println!("run {} ({})", run.run_id, run.dir.display());
        println!("  {:<8} {:>5} {:>12} {:>12} {:>12}", "pollutant", "iter", "test_mae", "mae_std", "baseline");
        let mut widths = serde_json::Map::new();
        let mut finals = Vec::new();
        for p in pollutants_of(&run.history) {
            let series: Vec<&IterationMetrics> = run.history.iter().filter(|h| h.pollutant == p).collect();
            let last = series.last().expect("pollutant has rows");
            println!(
                "  {:<8} {:>5} {:>12.5} {:>12.5} {:>12.5}",
                p, last.iteration, last.test_mae, last.test_mae_std, last.baseline_mae
            );
            for (m, (e, s)) in last.subdomain_mae.iter().zip(&last.subdomain_mae_std).enumerate() {
                println!("    subdomain {m}: {e:.5} ± {s:.5}");
            }
            let w: Vec<f64> = series.iter().map(|h| h.mean_width).collect();
            println!(
                "  {p} interval width: {}",
                w.iter().enumerate().map(|(k, v)| format!("{}:{v:.4}", k + 1)).collect::<Vec<_>>().join(" ")
            );
            widths.insert(p.clone(), json!(w));
            finals.push((*last).clone());
        }
        report_runs.push(json!({"run_id": run.run_id, "dir": run.dir, "final": finals, "interval_width": widths}));
    }
    let mut ratios = serde_json::Map::new();
    if let [ra, rb] = &runs[..] {
        println!("discontinuity ratio {} / {} (iterations >= {}):", ra.run_id, rb.run_id, a.burn_in);
        for p in pollutants_of(&ra.history) {
            let sb = discontinuity_series(&rb.history, &p);
            if sb.is_empty() {
                continue;
            }
            let r = discontinuity_ratio(&discontinuity_series(&ra.history, &p), &sb, a.burn_in)
                .map_err(|e| Failure::Usage(e.into()))?;
            println!("  {p}: {r:.4}");
            ratios.insert(p, json!(r));
        }
    }
    if let Some(path) = a.out {
        let ratio = if runs.len() == 2 { serde_json::Value::Object(ratios) } else { serde_json::Value::Null };
        let report = json!({"burn_in": a.burn_in, "runs": report_runs, "discontinuity_ratio": ratio});
        fs::write(&path, serde_json::to_vec_pretty(&report).map_err(runtime)?)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Runtime)?;
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<(), Failure> {
    let ens = load_run(&a.run)?;
    let pollutant = match &a.pollutant {
        Some(p) => ens.pollutant_index(p).map_err(dd_failure)?,
        None => 0,
    };
    let (timestamps, weather) = read_weather(&a.inputs).map_err(runtime)?;
    let traffic = read_traffic(&a.inputs, &timestamps, ens.sources.len()).map_err(runtime)?;
    let hour: HashMap<i64, usize> = timestamps.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut reader = csv::Reader::from_path(&a.queries)
        .with_context(|| format!("reading {}", a.queries.display()))
        .map_err(Failure::Runtime)?;
    let headers = reader.headers().map_err(runtime)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| runtime(anyhow!("{}: missing column {name:?}", a.queries.display())))
    };
    let (cx, cy, ct) = (col("x")?, col("y")?, col("timestamp")?);
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(runtime)?;

    let started = Instant::now();
    let mut errors: Vec<Option<String>> = vec![None; records.len()];
    let mut valid = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let parse = |c: usize, what: &str| rec[c].trim().parse::<f64>().map_err(|_| format!("bad {what} {:?}", &rec[c]));
        let parsed = (|| {
            let (x, y) = (parse(cx, "x")?, parse(cy, "y")?);
            let ts: i64 = rec[ct].trim().parse().map_err(|_| format!("bad timestamp {:?}", &rec[ct]))?;
            let t = *hour.get(&ts).ok_or_else(|| format!("no weather/traffic for timestamp {ts}"))?;
            let p = Point::new(x, y);
            if !ens.bbox.contains(p) {
                return Err(format!("point ({x}, {y}) is outside the domain"));
            }
            Ok((p, t))
        })();
        match parsed {
            Ok(v) => valid.push((r, v)),
            Err(e) => errors[r] = Some(e),
        }
    }
    let traffic_rows: Vec<Vec<f64>> = traffic.rows().into_iter().map(|r| r.to_vec()).collect();
    let batch: Vec<(Point, QueryInputs<'_>)> = valid
        .iter()
        .map(|&(_, (p, t))| {
            (p, QueryInputs { timestamp: timestamps[t], weather: &weather[t], volumes: &traffic_rows[t] })
        })
        .collect();
    let values = ens.predict_many(pollutant, &batch, a.background).map_err(runtime)?;
    let mut conc: Vec<Option<f64>> = vec![None; records.len()];
    for (&(r, _), v) in valid.iter().zip(values) {
        conc[r] = Some(v);
    }
    let elapsed = started.elapsed().as_secs_f64();

    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display())).map_err(Failure::Runtime)?;
    let mut head: Vec<String> = headers.iter().map(String::from).collect();
    head.extend(["conc_ug_m3".to_string(), "error".to_string()]);
    w.write_record(&head).map_err(runtime)?;
    for (r, rec) in records.iter().enumerate() {
        let mut row: Vec<String> = rec.iter().map(String::from).collect();
        row.push(conc[r].map(|v| v.to_string()).unwrap_or_default());
        row.push(errors[r].clone().unwrap_or_default());
        w.write_record(&row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;

    let failed = errors.iter().filter(|e| e.is_some()).count();
    eprintln!(
        "predicted {} of {} rows in {:.3} s ({:.0} rows/s)",
        valid.len(),
        records.len(),
        elapsed,
        valid.len() as f64 / elapsed.max(1e-9)
    );
    if failed > 0 {
        eprintln!("warning: {failed} rows could not be predicted; see the error column of {}", a.out.display());
        if a.strict {
            return Err(runtime(anyhow!("{failed} rows failed in strict mode")));
        }
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.scenario)?;
    let ens = load_run(&a.run)?;
    if ens.scenario_hash != scn.content_hash() {
        eprintln!("warning: run {} was trained on a different scenario", a.run.display());
    }
    let pollutant = a.pollutant.clone().unwrap_or_else(|| ens.pollutants[0].name.clone());
    let mut report =
        timing_benchmark(&scn, &ens, &pollutant, a.queries as usize, a.reps as usize, a.seed).map_err(dd_failure)?;
    report.note = std::env::var("BENCH_NOTE").ok();
    let out = a.out.unwrap_or_else(|| a.run.join("bench.json"));
    fs::write(&out, serde_json::to_vec_pretty(&report).map_err(runtime)?)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(Failure::Runtime)?;
    println!(
        "{} queries x {} reps: solver {:.4} s ({:.0} q/s), surrogate {:.4} s ({:.0} q/s), ratio {:.3}",
        report.n_queries,
        report.repetitions,
        report.solver_median_seconds,
        report.solver_queries_per_second,
        report.surrogate_median_seconds,
        report.surrogate_queries_per_second,
        report.speedup
    );
    if let Some(note) = &report.note {
        println!("note: {note}");
    }
    Ok(())
}
