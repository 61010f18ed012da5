//! Domain-decomposition training.
//!
//! Each subdomain trains its own network. Neighbouring networks are coupled
//! only through intervals `[lo, hi]` attached to shared boundary points: a
//! network pays `λ ε` per unit that its prediction at a boundary point falls
//! outside the interval. After every iteration the intervals move towards the
//! mean pointwise min and max of the two neighbours' predictions:
//!
//! ```text
//! c(k+1) = c(k) + κ/(√k + ζ) · (target - c(k)) + κ√k/(√k + ζ) · (c(k) - c(k-1))
//! ```
//!
//! Intervals live in the globally normalized label space of each pollutant.

mod ensemble;

pub use ensemble::{Ensemble, QueryInputs, ENSEMBLE_FORMAT_VERSION};

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_design_matrix, point_row, DesignMatrix, FeatureError, LabelScale, Normalizer};
use crate::geometry::{sample_boundary, BoundaryPair, GeometryError, Subdomain};
use crate::metrics::{mae, IterationMetrics, MetricsError};
use crate::neural::{
    init_mlp_with, train_epochs, AdamConfig, AdamState, BoundaryTerms, Checkpoint, CheckpointMeta, LossSpec,
    MlpModel, NeuralError,
};
use crate::rng::{stream, stream_key, tag};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum DdError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("at least one iteration is required to obtain trained models")]
    Untrained,
    #[error("unknown pollutant {0:?}")]
    UnknownPollutant(String),
    #[error("empty label set")]
    EmptyLabels,
    #[error("non-finite loss for {pollutant} in subdomain {subdomain} at iteration {iteration}: {source}")]
    NonFiniteLoss { pollutant: String, subdomain: usize, iteration: usize, source: NeuralError },
    #[error("point ({x}, {y}) is outside the domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("query has {got} volumes but the domain has {expected} sources")]
    VolumeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run directory: {0}")]
    Io(String),
    #[error("run manifest: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdConfig {
    pub lambda: f64,
    pub kappa: f64,
    pub zeta: f64,
    /// Multiplies each boundary's own weight.
    pub epsilon: f64,
    pub iterations: usize,
    pub epochs: usize,
    /// Coupling points per shared edge.
    pub n_b: usize,
    /// Timestamps sampled for interval targets and boundary rows.
    pub t_eval: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub l2: f64,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    pub test_fraction: f64,
    /// Re-initialize networks at the start of every iteration.
    pub cold_start: bool,
    /// Boundary pairs per batch; `None` uses every pair of the subdomain.
    pub boundary_sample: Option<usize>,
    /// Pollutant names to train; empty trains all.
    pub pollutants: Vec<String>,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kappa: 0.5,
            zeta: 1.0,
            epsilon: 1.0,
            iterations: 20,
            epochs: 25,
            n_b: 10,
            t_eval: 64,
            seed: 42,
            batch_size: 128,
            l2: 1e-4,
            adam: AdamConfig::default(),
            hidden: crate::neural::DEFAULT_HIDDEN.to_vec(),
            test_fraction: 0.1,
            cold_start: false,
            boundary_sample: None,
            pollutants: Vec::new(),
        }
    }
}

impl DdConfig {
    pub fn validate(&self) -> Result<(), DdError> {
        let bad = |m: String| Err(DdError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta must be > 0, got {}", self.zeta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.iterations == 0 {
            return Err(DdError::Untrained);
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.n_b == 0 || self.t_eval == 0 {
            return bad("n_b and t_eval must be >= 1".into());
        }
        if self.boundary_sample == Some(0) {
            return bad("boundary_sample must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty with nonzero widths".into());
        }
        let a = &self.adam;
        if !(a.step_size > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam settings out of range".into());
        }
        self.loss_spec().validate()?;
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec { lambda: self.lambda, l2: self.l2, batch_size: self.batch_size }
    }

    /// Scenario pollutant indices selected by this config.
    pub fn pollutant_indices(&self, scn: &Scenario) -> Result<Vec<usize>, DdError> {
        if self.pollutants.is_empty() {
            return Ok((0..scn.pollutants().len()).collect());
        }
        self.pollutants
            .iter()
            .map(|name| scn.pollutant_index(name).ok_or_else(|| DdError::UnknownPollutant(name.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInterval {
    pub pair: BoundaryPair,
    pub lower: f64,
    pub upper: f64,
    pub lower_prev: f64,
    pub upper_prev: f64,
    /// Updates applied so far.
    pub k: usize,
    /// Whether the last update crossed the bounds and was swapped back.
    pub swapped: bool,
}

impl BoundaryInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn init_intervals(labels: &[f64], pairs: &[BoundaryPair]) -> Result<Vec<BoundaryInterval>, DdError> {
    if labels.is_empty() {
        return Err(DdError::EmptyLabels);
    }
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(pairs
        .iter()
        .map(|&pair| BoundaryInterval {
            pair,
            lower: lo,
            upper: hi,
            lower_prev: lo,
            upper_prev: hi,
            k: 0,
            swapped: false,
        })
        .collect())
}

fn step(c: f64, prev: f64, target: f64, k: usize, kappa: f64, zeta: f64) -> f64 {
    let sk = (k as f64).sqrt();
    c + kappa / (sk + zeta) * (target - c) + kappa * sk / (sk + zeta) * (c - prev)
}

pub fn update_interval(
    iv: &BoundaryInterval,
    target_lo: f64,
    target_hi: f64,
    k: usize,
    kappa: f64,
    zeta: f64,
) -> BoundaryInterval {
    let mut lower = step(iv.lower, iv.lower_prev, target_lo, k, kappa, zeta);
    let mut upper = step(iv.upper, iv.upper_prev, target_hi, k, kappa, zeta);
    let swapped = lower > upper;
    if swapped {
        std::mem::swap(&mut lower, &mut upper);
    }
    BoundaryInterval {
        pair: iv.pair,
        lower,
        upper,
        lower_prev: iv.lower,
        upper_prev: iv.upper,
        k: iv.k + 1,
        swapped,
    }
}

/// Mean over time of the pointwise min and max of two prediction series.
pub fn aggregate_targets(f_m: &[f64], f_n: &[f64]) -> (f64, f64) {
    assert_eq!(f_m.len(), f_n.len());
    let n = f_m.len() as f64;
    let (lo, hi) = f_m
        .iter()
        .zip(f_n)
        .fold((0.0, 0.0), |(lo, hi), (a, b)| (lo + a.min(*b), hi + a.max(*b)));
    (lo / n, hi / n)
}

/// Interval targets for `pair` from two trained members, each evaluated with its own features.
pub fn boundary_targets(
    scn: &Scenario,
    model_m: &Checkpoint,
    model_n: &Checkpoint,
    pair: &BoundaryPair,
    eval_times: &[usize],
) -> Result<(f64, f64), DdError> {
    if model_m.meta.iterations == 0 || model_n.meta.iterations == 0 {
        return Err(DdError::Untrained);
    }
    let f_m = member_predict_at(scn, model_m, pair.p1, eval_times)?;
    let f_n = member_predict_at(scn, model_n, pair.p2, eval_times)?;
    Ok(aggregate_targets(f_m.as_slice().unwrap(), f_n.as_slice().unwrap()))
}

/// Normalized predictions of one member at point `p` for each listed hour.
pub fn member_predict_at(
    scn: &Scenario,
    member: &Checkpoint,
    p: crate::geometry::Point,
    times: &[usize],
) -> Result<Array1<f64>, DdError> {
    let m = member.meta.subdomain;
    let mut rows = Array2::zeros((times.len(), member.layout.width()));
    for (r, &t) in times.iter().enumerate() {
        let mut row = point_row(scn, m, &member.layout, t, p);
        member.normalizer.apply_row(&mut row)?;
        rows.row_mut(r).assign(&Array1::from(row));
    }
    Ok(member.model.forward_batch(rows.view())?)
}

/// All coupling points, `n_b` per shared edge, ordered by `(m, n)` with `m < n`.
pub fn boundary_pairs(subdomains: &[Subdomain], n_b: usize, epsilon: f64) -> Result<Vec<BoundaryPair>, DdError> {
    let mut out = Vec::new();
    for a in subdomains {
        let mut neighbors: Vec<usize> = a.boundary_refs.iter().map(|b| b.neighbor).filter(|&n| n > a.id).collect();
        neighbors.sort_unstable();
        for n in neighbors {
            for mut pair in sample_boundary(a, &subdomains[n], n_b)? {
                pair.epsilon *= epsilon;
                out.push(pair);
            }
        }
    }
    Ok(out)
}

/// Disjoint sorted `(train, test)` row sets for subdomain `m`.
pub fn split_rows(n_rows: usize, test_fraction: f64, seed: u64, m: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut stream(seed, &[tag::SPLIT, m as u64]));
    let n_test = ((n_rows as f64 * test_fraction).round() as usize).clamp(1.min(n_rows), n_rows.saturating_sub(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Sorted distinct hours used for interval targets.
pub fn eval_times(hours: usize, t_eval: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..hours).collect();
    let mut rng = stream(seed, &[tag::EVAL_TIMES]);
    let (picked, _) = idx.partial_shuffle(&mut rng, t_eval.min(hours));
    let mut out = picked.to_vec();
    out.sort_unstable();
    out
}

pub fn model_seed(seed: u64, pollutant: usize, m: usize) -> u64 {
    stream_key(seed, &[tag::INIT, pollutant as u64, m as u64])
}

pub fn shuffle_seed(seed: u64, pollutant: usize, m: usize, iteration: usize) -> u64 {
    stream_key(seed, &[tag::SHUFFLE, pollutant as u64, m as u64, iteration as u64])
}

/// Training and test data of one subdomain, shared by all pollutants.
#[derive(Debug, Clone)]
pub struct SubdomainData {
    pub design: DesignMatrix,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Feature statistics only; the label scale is set per pollutant.
    pub features: Normalizer,
    pub x_train: Array2<f64>,
    pub x_test: Array2<f64>,
}

impl SubdomainData {
    pub fn labels(&self, p: usize, rows: &[usize]) -> Array1<f64> {
        self.design.labels[p].select(Axis(0), rows)
    }
}

pub fn prepare_subdomains(scn: &Scenario, cfg: &DdConfig) -> Result<Vec<SubdomainData>, DdError> {
    scn.subdomains
        .par_iter()
        .map(|sub| {
            let design = build_design_matrix(sub, scn)?;
            let (train_rows, test_rows) = split_rows(design.n_rows(), cfg.test_fraction, cfg.seed, sub.id);
            let placeholder = LabelScale::new(0.0, 1.0)?;
            let raw_train = design.x.select(Axis(0), &train_rows);
            let features = Normalizer::fit(raw_train.view(), &design.layout.kinds(), placeholder)?;
            let x_train = features.apply(raw_train.view())?;
            let x_test = features.apply(design.x.select(Axis(0), &test_rows).view())?;
            Ok(SubdomainData { design, train_rows, test_rows, features, x_train, x_test })
        })
        .collect()
}

/// Min-max scale over the training labels of every subdomain.
pub fn global_label_scale(data: &[SubdomainData], p: usize) -> Result<LabelScale, DdError> {
    let sets: Vec<Array1<f64>> = data.iter().map(|d| d.labels(p, &d.train_rows)).collect();
    Ok(LabelScale::fit(sets.iter().map(|a| a.as_slice().unwrap()))?)
}

/// Boundary rows a single subdomain contributes to its own loss.
struct LocalBoundary {
    /// Global pair indices involving this subdomain.
    pairs: Vec<usize>,
    /// Normalized rows, `[pair_local * T + time_slot]`.
    rows: Array2<f64>,
}

fn local_boundary(
    scn: &Scenario,
    m: usize,
    data: &SubdomainData,
    pairs: &[BoundaryPair],
    times: &[usize],
) -> Result<LocalBoundary, DdError> {
    let mine: Vec<(usize, crate::geometry::Point)> = pairs
        .iter()
        .enumerate()
        .filter_map(|(j, pr)| match pr.boundary {
            (a, _) if a == m => Some((j, pr.p1)),
            (_, b) if b == m => Some((j, pr.p2)),
            _ => None,
        })
        .collect();
    let width = data.design.layout.width();
    let mut rows = Array2::zeros((mine.len() * times.len(), width));
    for (i, &(_, p)) in mine.iter().enumerate() {
        for (s, &t) in times.iter().enumerate() {
            let mut row = point_row(scn, m, &data.design.layout, t, p);
            data.features.apply_row(&mut row)?;
            rows.row_mut(i * times.len() + s).assign(&Array1::from(row));
        }
    }
    Ok(LocalBoundary { pairs: mine.into_iter().map(|(j, _)| j).collect(), rows })
}

struct Worker {
    model: MlpModel,
    adam: AdamState,
}

/// Full training loop over the selected pollutants.
pub fn run_iterations(scn: &Scenario, cfg: &DdConfig) -> Result<Ensemble, DdError> {
    cfg.validate()?;
    let selected = cfg.pollutant_indices(scn)?;
    let data = prepare_subdomains(scn, cfg)?;
    let pairs = boundary_pairs(&scn.subdomains, cfg.n_b, cfg.epsilon)?;
    let times = eval_times(scn.hours(), cfg.t_eval, cfg.seed);
    let locals: Vec<LocalBoundary> = scn
        .subdomains
        .iter()
        .map(|s| local_boundary(scn, s.id, &data[s.id], &pairs, &times))
        .collect::<Result<_, _>>()?;
    let spec = cfg.loss_spec();

    let mut members = Vec::new();
    let mut all_intervals = Vec::new();
    let mut history = Vec::new();
    for &p in &selected {
        let pollutant = &scn.pollutants()[p];
        let scale = global_label_scale(&data, p)?;
        let y_train: Vec<Array1<f64>> = data.iter().map(|d| d.labels(p, &d.train_rows).mapv(|v| scale.scale(v))).collect();
        let all_train: Vec<f64> = y_train.iter().flat_map(|y| y.iter().copied()).collect();
        let mut intervals = init_intervals(&all_train, &pairs)?;
        let fresh = |m: usize| -> Result<Worker, DdError> {
            let model = init_mlp_with(data[m].design.layout.width(), &cfg.hidden, model_seed(cfg.seed, p, m))?;
            let adam = AdamState::new(&model, cfg.adam);
            Ok(Worker { model, adam })
        };
        let mut workers: Vec<Worker> = (0..data.len()).map(fresh).collect::<Result<_, _>>()?;

        for k in 1..=cfg.iterations {
            let started = Instant::now();
            if cfg.cold_start && k > 1 {
                workers = (0..data.len()).map(fresh).collect::<Result<_, _>>()?;
            }
            let snapshot = &intervals;
            let losses: Vec<f64> = workers
                .par_iter_mut()
                .enumerate()
                .map(|(m, w)| {
                    let d = &data[m];
                    let local = &locals[m];
                    let n_pairs = local.pairs.len();
                    let batches = d.train_rows.len().div_ceil(spec.batch_size);
                    let offset = (k - 1) * cfg.epochs * batches;
                    let t = times.len();
                    let provider = |b: usize| -> Option<BoundaryTerms> {
                        if spec.lambda == 0.0 || n_pairs == 0 {
                            return None;
                        }
                        let g = offset + b;
                        let chosen: Vec<usize> = match cfg.boundary_sample {
                            Some(s) if s < n_pairs => (0..s).map(|i| (g * s + i) % n_pairs).collect(),
                            _ => (0..n_pairs).collect(),
                        };
                        let idx: Vec<usize> = chosen.iter().map(|&i| i * t + (g + i) % t).collect();
                        let ivs: Vec<&BoundaryInterval> = chosen.iter().map(|&i| &snapshot[local.pairs[i]]).collect();
                        Some(BoundaryTerms {
                            rows: local.rows.select(Axis(0), &idx),
                            lower: ivs.iter().map(|iv| iv.lower).collect(),
                            upper: ivs.iter().map(|iv| iv.upper).collect(),
                            epsilon: ivs.iter().map(|iv| iv.pair.epsilon).collect(),
                        })
                    };
                    let trace = train_epochs(
                        &mut w.model,
                        &mut w.adam,
                        d.x_train.view(),
                        y_train[m].view(),
                        &spec,
                        cfg.epochs,
                        shuffle_seed(cfg.seed, p, m, k),
                        provider,
                    )
                    .map_err(|source| DdError::NonFiniteLoss {
                        pollutant: pollutant.name.clone(),
                        subdomain: m,
                        iteration: k,
                        source,
                    })?;
                    let last = *trace.last().expect("epochs >= 1");
                    if !last.is_finite() {
                        return Err(DdError::NonFiniteLoss {
                            pollutant: pollutant.name.clone(),
                            subdomain: m,
                            iteration: k,
                            source: NeuralError::NonFinite("loss"),
                        });
                    }
                    Ok(last)
                })
                .collect::<Result<_, DdError>>()?;

            // Barrier: every member is trained; intervals may now change.
            let boundary_out: Vec<Array1<f64>> = workers
                .par_iter()
                .zip(&locals)
                .map(|(w, l)| w.model.forward_batch(l.rows.view()))
                .collect::<Result<_, _>>()?;
            let t = times.len();
            let side = |m: usize, j: usize| -> &[f64] {
                let i = locals[m].pairs.iter().position(|&x| x == j).expect("pair belongs to subdomain");
                &boundary_out[m].as_slice().unwrap()[i * t..(i + 1) * t]
            };
            let mut disc = 0.0;
            let mut swaps = 0;
            let updated: Vec<BoundaryInterval> = intervals
                .iter()
                .enumerate()
                .map(|(j, iv)| {
                    let (a, b) = iv.pair.boundary;
                    let (fa, fb) = (side(a, j), side(b, j));
                    disc += fa.iter().zip(fb).map(|(x, y)| (x - y).abs()).sum::<f64>();
                    let (lo, hi) = aggregate_targets(fa, fb);
                    let next = update_interval(iv, lo, hi, k, cfg.kappa, cfg.zeta);
                    swaps += usize::from(next.swapped);
                    next
                })
                .collect();
            intervals = updated;
            let disc = if pairs.is_empty() { 0.0 } else { disc / (pairs.len() * t) as f64 };
            let width = if intervals.is_empty() {
                0.0
            } else {
                intervals.iter().map(BoundaryInterval::width).sum::<f64>() / intervals.len() as f64
            };

            let mut sub_mae = Vec::with_capacity(data.len());
            let mut sub_std = Vec::with_capacity(data.len());
            let mut pooled_pred = Vec::new();
            let mut pooled_truth = Vec::new();
            let mut pooled_base = Vec::new();
            for (w, d) in workers.iter().zip(&data) {
                let truth = d.labels(p, &d.test_rows);
                let pred = w.model.forward_batch(d.x_test.view())?.mapv(|v| scale.invert(v));
                let (e, s) = mae(pred.as_slice().unwrap(), truth.as_slice().unwrap())?;
                sub_mae.push(e);
                sub_std.push(s);
                let base = d.labels(p, &d.train_rows).mean().unwrap_or(0.0);
                pooled_pred.extend(pred.iter().copied());
                pooled_truth.extend(truth.iter().copied());
                pooled_base.extend(std::iter::repeat_n(base, truth.len()));
            }
            let (test_mae, test_mae_std) = mae(&pooled_pred, &pooled_truth)?;
            let (baseline_mae, _) = mae(&pooled_base, &pooled_truth)?;
            history.push(IterationMetrics {
                iteration: k,
                pollutant: pollutant.name.clone(),
                test_mae,
                test_mae_std,
                baseline_mae,
                subdomain_mae: sub_mae,
                subdomain_mae_std: sub_std,
                mean_width: width,
                discontinuity: disc,
                discontinuity_ug: disc * scale.range(),
                train_loss: losses,
                swaps,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
        }

        let per_sub: Vec<Checkpoint> = workers
            .into_iter()
            .zip(&data)
            .enumerate()
            .map(|(m, (w, d))| {
                let meta = CheckpointMeta {
                    subdomain: m,
                    pollutant: pollutant.name.clone(),
                    seed: model_seed(cfg.seed, p, m),
                    iterations: cfg.iterations,
                    lambda: cfg.lambda,
                    kappa: cfg.kappa,
                    zeta: cfg.zeta,
                };
                let normalizer = Normalizer { labels: scale, ..d.features.clone() };
                Checkpoint::new(w.model, normalizer, d.design.layout, meta)
            })
            .collect();
        members.push(per_sub);
        all_intervals.push(intervals);
    }

    Ok(Ensemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        config: cfg.clone(),
        scenario_hash: scn.content_hash(),
        bbox: scn.config.bbox,
        subdomains: scn.subdomains.clone(),
        sources: scn.sources.clone(),
        pollutants: selected.iter().map(|&p| scn.pollutants()[p].clone()).collect(),
        pairs,
        eval_times: times,
        intervals: all_intervals,
        history,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn pair() -> BoundaryPair {
        BoundaryPair { boundary: (0, 1), p1: Point::new(0.0, 0.0), p2: Point::new(0.0, 0.0), epsilon: 1.0 }
    }

    #[test]
    fn worked_update() {
        let iv = init_intervals(&[0.0, 0.0], &[pair()]).unwrap()[0];
        let next = update_interval(&iv, 4.0, 4.0, 1, 0.5, 1.0);
        assert_eq!(next.lower, 1.0);
        assert_eq!(next.upper, 1.0);
        assert_eq!(next.lower_prev, 0.0);
    }

    #[test]
    fn fixed_point_and_frozen() {
        let iv = init_intervals(&[0.25, 0.75], &[pair()]).unwrap()[0];
        let same = update_interval(&iv, 0.25, 0.75, 1, 0.5, 1.0);
        assert_eq!((same.lower, same.upper), (0.25, 0.75));
        let mut cur = iv;
        for k in 1..30 {
            cur = update_interval(&cur, -3.0, 9.0, k, 0.0, 1.0);
            assert_eq!((cur.lower, cur.upper), (0.25, 0.75));
        }
    }

    #[test]
    fn first_momentum_term_vanishes() {
        let iv = init_intervals(&[0.0, 1.0], &[pair()]).unwrap()[0];
        assert_eq!((iv.lower_prev, iv.upper_prev), (iv.lower, iv.upper));
        let next = update_interval(&iv, 0.4, 0.6, 1, 0.3, 1.0);
        assert_eq!(next.lower, 0.0 + 0.3 / 2.0 * 0.4);
        assert_eq!(next.upper, 1.0 + 0.3 / 2.0 * (0.6 - 1.0));
    }

    #[test]
    fn crossing_bounds_are_swapped() {
        let iv = init_intervals(&[0.4, 0.6], &[pair()]).unwrap()[0];
        let next = update_interval(&iv, 1.0, 0.0, 1, 1.9, 0.01);
        assert!(next.swapped);
        assert!(next.lower <= next.upper);
    }

    #[test]
    fn init_from_raw_labels() {
        let ivs = init_intervals(&[2.0, 5.0, 3.0], &[pair(), pair()]).unwrap();
        assert!(ivs.iter().all(|iv| iv.lower == 2.0 && iv.upper == 5.0));
        assert!(matches!(init_intervals(&[], &[pair()]), Err(DdError::EmptyLabels)));
    }

    #[test]
    fn target_aggregation() {
        assert_eq!(aggregate_targets(&[0.2; 4], &[0.6; 4]), (0.2, 0.6));
        assert_eq!(aggregate_targets(&[0.3; 3], &[0.3; 3]), (0.3, 0.3));
        let (lo, hi) = aggregate_targets(&[0.1, 0.5], &[0.3, 0.2]);
        assert!((lo - 0.15).abs() < 1e-15);
        assert!((hi - 0.4).abs() < 1e-15);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (tr, te) = split_rows(1000, 0.1, 3, 0);
        assert_eq!(te.len(), 100);
        assert_eq!(tr.len(), 900);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(split_rows(1000, 0.1, 3, 0), (tr.clone(), te.clone()));
        assert_ne!(split_rows(1000, 0.1, 3, 1).1, te);
    }

    #[test]
    fn eval_times_are_distinct() {
        let t = eval_times(500, 64, 1);
        assert_eq!(t.len(), 64);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(eval_times(10, 64, 1), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_checks() {
        assert!(DdConfig::default().validate().is_ok());
        assert!(matches!(DdConfig { iterations: 0, ..DdConfig::default() }.validate(), Err(DdError::Untrained)));
        assert!(matches!(DdConfig { lambda: -1.0, ..DdConfig::default() }.validate(), Err(DdError::Config(_))));
        assert!(matches!(DdConfig { kappa: 0.0, ..DdConfig::default() }.validate(), Err(DdError::Config(_))));
    }
}
