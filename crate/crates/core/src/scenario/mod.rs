//! Synthetic worlds: partitioned region, road segments, hourly traffic and
//! weather series, and background-free ground-truth labels.

mod io;

pub use io::{export_csv, ingest_csv, read_traffic, read_weather, SCENARIO_FORMAT_VERSION};

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{self, BBox, GeometryError, Point, Segment, Subdomain};
use crate::plume::{self, PlumeError, PlumeParams, Pollutant, WeatherSample};
use crate::rng::{self, tag};

/// 2017-07-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_498_867_200;
pub const HOUR: i64 = 3600;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Plume(#[from] PlumeError),
    #[error("subdomain {subdomain} has {n_sources} line sources, above the legacy limit of 20")]
    LegacyLimit { subdomain: usize, n_sources: usize },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}, row {row}, column `{column}`: {message}")]
    Field { file: String, row: usize, column: String, message: String },
    #[error("{file}, row {row}: timestamps not increasing")]
    TimestampsNotIncreasing { file: String, row: usize },
    #[error("{file}: {message}")]
    Schema { file: String, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error in {file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("json error in {file}: {source}")]
    Json { file: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    /// veh/h
    pub base: f64,
    pub amplitude: f64,
    /// Hour of day (UTC) of the diurnal maximum.
    pub peak_hour: f64,
    pub noise_std: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self { base: 600.0, amplitude: 400.0, peak_hour: 14.0, noise_std: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherProcess {
    pub wind_mean: f64,
    pub wind_ar: f64,
    pub wind_noise_std: f64,
    pub dir_initial: f64,
    pub dir_step_std: f64,
    pub dir_std_mean: f64,
    pub dir_std_noise: f64,
    pub temp_mean: f64,
    pub temp_amplitude: f64,
    pub temp_noise_std: f64,
}

impl Default for WeatherProcess {
    fn default() -> Self {
        Self {
            wind_mean: 4.0,
            wind_ar: 0.8,
            wind_noise_std: 0.8,
            dir_initial: 1.5 * PI,
            dir_step_std: 0.2,
            dir_std_mean: 0.25,
            dir_std_noise: 0.05,
            temp_mean: 10.0,
            temp_amplitude: 4.0,
            temp_noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeConfig {
    /// Diffusivity for subdomains away from the region border, m²/s.
    pub k_inner: f64,
    /// Diffusivity for subdomains touching the region border, m²/s.
    pub k_outer: f64,
    pub u_min: f64,
    pub n_quad: usize,
}

impl Default for PlumeConfig {
    fn default() -> Self {
        Self { k_inner: 1.0, k_outer: 2.0, u_min: 0.5, n_quad: 32 }
    }
}

/// Where road segments are placed inside each subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceLayout {
    /// Midpoints uniform over the subdomain.
    Uniform,
    /// Checkerboard of "near" and "far" subdomains: even `ix + iy` tiles put
    /// their roads within `near_band` of a shared edge, roughly parallel to
    /// it; odd tiles keep road midpoints at least `far_margin` from every
    /// shared edge.
    AsymmetricBoundary { near_band: f64, far_margin: f64 },
}

impl SourceLayout {
    /// Near-boundary roads on even tiles, far roads on odd tiles.
    pub fn asymmetric() -> Self {
        SourceLayout::AsymmetricBoundary { near_band: 100.0, far_margin: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bbox: BBox,
    pub gx: usize,
    pub gy: usize,
    /// Inclusive range of line sources per subdomain.
    pub sources_per_subdomain: [usize; 2],
    /// Range of segment lengths, m.
    pub source_length: [f64; 2],
    pub receptors_per_subdomain: usize,
    /// Receptor height above ground, m.
    pub receptor_height: f64,
    pub hours: usize,
    pub start_timestamp: i64,
    pub seed: u64,
    pub layout: SourceLayout,
    pub traffic: TrafficProfile,
    pub weather: WeatherProcess,
    pub pollutants: Vec<Pollutant>,
    pub plume: PlumeConfig,
    /// Enforce the legacy 20-source / 20-receptor run limits.
    pub legacy_caline: bool,
}

pub fn default_pollutants() -> Vec<Pollutant> {
    vec![
        Pollutant { name: "NO2".into(), emission_factor: 80.0, background: 20.0 },
        Pollutant { name: "PM10".into(), emission_factor: 15.0, background: 12.0 },
    ]
}

impl ScenarioConfig {
    /// Two 1 km tiles, minutes-scale end to end.
    pub fn paper_mini() -> Self {
        Self {
            bbox: BBox { x_min: 0.0, y_min: 0.0, x_max: 2000.0, y_max: 1000.0 },
            gx: 2,
            gy: 1,
            sources_per_subdomain: [5, 8],
            source_length: [150.0, 500.0],
            receptors_per_subdomain: 30,
            receptor_height: 2.0,
            hours: 500,
            start_timestamp: DEFAULT_START,
            seed: 42,
            layout: SourceLayout::Uniform,
            traffic: TrafficProfile::default(),
            weather: WeatherProcess::default(),
            pollutants: default_pollutants(),
            plume: PlumeConfig::default(),
            legacy_caline: false,
        }
    }

    /// Full dimensions: 12 tiles, 7-20 roads, 300 receptors, 305 days. Hours-scale.
    pub fn paper_full() -> Self {
        Self {
            bbox: BBox { x_min: 0.0, y_min: 0.0, x_max: 12_000.0, y_max: 9_000.0 },
            gx: 4,
            gy: 3,
            sources_per_subdomain: [7, 20],
            receptors_per_subdomain: 300,
            hours: 7320,
            legacy_caline: true,
            ..Self::paper_mini()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-mini" => Some(Self::paper_mini()),
            "paper-full" => Some(Self::paper_full()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        self.bbox.validate()?;
        if self.gx == 0 || self.gy == 0 {
            return bad(format!("gx and gy must be positive (got {} x {})", self.gx, self.gy));
        }
        let [lo, hi] = self.sources_per_subdomain;
        if lo < 1 || lo > hi {
            return bad(format!("sources_per_subdomain must satisfy 1 <= lo <= hi (got [{lo}, {hi}])"));
        }
        let [l0, l1] = self.source_length;
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return bad(format!("source_length must satisfy 0 < lo <= hi (got [{l0}, {l1}])"));
        }
        if self.receptors_per_subdomain == 0 {
            return bad("receptors_per_subdomain must be positive".into());
        }
        if !(self.receptor_height >= 0.0) {
            return bad("receptor_height must be nonnegative".into());
        }
        if self.hours == 0 {
            return bad("hours must be at least 1".into());
        }
        if self.pollutants.is_empty() {
            return bad("at least one pollutant required".into());
        }
        for p in &self.pollutants {
            if !(p.emission_factor >= 0.0) || !(p.background >= 0.0) {
                return bad(format!("pollutant {}: emission factor and background must be nonnegative", p.name));
            }
        }
        let t = &self.traffic;
        if !(t.noise_std >= 0.0) || !t.base.is_finite() || !t.amplitude.is_finite() {
            return bad("traffic profile must be finite with nonnegative noise".into());
        }
        let w = &self.weather;
        if !(w.wind_noise_std >= 0.0 && w.dir_step_std >= 0.0 && w.temp_noise_std >= 0.0 && w.dir_std_noise >= 0.0) {
            return bad("weather noise scales must be nonnegative".into());
        }
        if !(w.wind_ar.abs() < 1.0) {
            return bad(format!("wind AR coefficient must lie in (-1, 1) (got {})", w.wind_ar));
        }
        if let SourceLayout::AsymmetricBoundary { near_band, far_margin } = self.layout {
            if !(near_band > 0.0 && far_margin >= 0.0) {
                return bad("asymmetric layout needs near_band > 0 and far_margin >= 0".into());
            }
        }
        let pc = &self.plume;
        for k in [pc.k_inner, pc.k_outer] {
            PlumeParams { diffusivity: k, u_min: pc.u_min, n_quad: pc.n_quad }.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub subdomains: Vec<Subdomain>,
    /// Road geometry indexed by global source id.
    pub sources: Vec<Segment>,
    /// Epoch seconds, hourly.
    pub timestamps: Vec<i64>,
    /// `[T x n_sources]`, veh/h.
    pub traffic: Array2<f64>,
    pub weather: Vec<WeatherSample>,
    /// One entry per subdomain.
    pub plume_params: Vec<PlumeParams>,
    /// `labels[pollutant][subdomain]` is `[T x n_receptors]`, µg/m³ without background.
    pub labels: Vec<Vec<Array2<f64>>>,
}

impl Scenario {
    pub fn hours(&self) -> usize {
        self.timestamps.len()
    }

    pub fn pollutants(&self) -> &[Pollutant] {
        &self.config.pollutants
    }

    pub fn pollutant_index(&self, name: &str) -> Option<usize> {
        self.config.pollutants.iter().position(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn subdomain_sources(&self, m: usize) -> Vec<Segment> {
        self.subdomains[m].line_sources.iter().map(|&id| self.sources[id]).collect()
    }

    pub fn subdomain_volumes(&self, m: usize, t: usize) -> Vec<f64> {
        self.subdomains[m].line_sources.iter().map(|&id| self.traffic[[t, id]]).collect()
    }

    pub fn time_index(&self, timestamp: i64) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let off = timestamp - first;
        if off < 0 || off % HOUR != 0 {
            return None;
        }
        let t = (off / HOUR) as usize;
        (t < self.timestamps.len()).then_some(t)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn check_invariants(&self) -> Result<(), ScenarioError> {
        let t = self.timestamps.len();
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.traffic.nrows() != t || self.weather.len() != t {
            return bad("series lengths disagree".into());
        }
        if self.traffic.ncols() != self.sources.len() {
            return bad("traffic columns disagree with source table".into());
        }
        if self.timestamps.windows(2).any(|w| w[1] - w[0] != HOUR) {
            return bad("timestamps must be strictly increasing with a 3600 s stride".into());
        }
        if self.plume_params.len() != self.subdomains.len() {
            return bad("one plume parameter set per subdomain required".into());
        }
        for (p, per_sub) in self.labels.iter().enumerate() {
            for (m, y) in per_sub.iter().enumerate() {
                if y.dim() != (t, self.subdomains[m].receptors.len()) {
                    return bad(format!("label matrix {p}/{m} has wrong shape {:?}", y.dim()));
                }
                if y.iter().any(|v| !(*v >= 0.0)) {
                    return bad(format!("label matrix {p}/{m} has negative or NaN entries"));
                }
            }
        }
        Ok(())
    }
}

/// Diffusivity rule: tiles touching the outer region border are "outer city".
fn subdomain_diffusivity(cfg: &ScenarioConfig, sub: &Subdomain) -> f64 {
    let b = sub.bbox;
    let g = cfg.bbox;
    let touches = b.x_min == g.x_min || b.y_min == g.y_min || b.x_max == g.x_max || b.y_max == g.y_max;
    if touches {
        cfg.plume.k_outer
    } else {
        cfg.plume.k_inner
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn hour_of_day(timestamp: i64) -> f64 {
    (timestamp.rem_euclid(86_400) / HOUR) as f64
}

fn place_source(cfg: &ScenarioConfig, sub: &Subdomain, rng: &mut impl Rng) -> Segment {
    let b = sub.bbox;
    let [l0, l1] = cfg.source_length;
    let length = if l0 == l1 { l0 } else { rng.random_range(l0..l1) };
    let margin_x = 1e-3 * b.width();
    let margin_y = 1e-3 * b.height();
    let uniform_mid = |rng: &mut dyn rand::RngCore| {
        Point::new(
            rng.random_range(b.x_min + margin_x..b.x_max - margin_x),
            rng.random_range(b.y_min + margin_y..b.y_max - margin_y),
        )
    };
    let (mid, angle) = match (&cfg.layout, sub.boundary_refs.is_empty()) {
        (SourceLayout::AsymmetricBoundary { near_band, far_margin }, false) => {
            let (ix, iy) = (sub.id % cfg.gx, sub.id / cfg.gx);
            if (ix + iy) % 2 == 0 {
                let edge = sub.boundary_refs[rng.random_range(0..sub.boundary_refs.len())].edge;
                let along = edge.start.lerp(edge.end, rng.random_range(0.1..0.9));
                let band = near_band.min(0.5 * b.width().min(b.height()));
                let depth = rng.random_range(0.05 * band..band);
                let vertical = edge.start.x == edge.end.x;
                let mid = if vertical {
                    let inward = if (edge.start.x - b.x_min).abs() < (edge.start.x - b.x_max).abs() { 1.0 } else { -1.0 };
                    Point::new(edge.start.x + inward * depth, along.y)
                } else {
                    let inward = if (edge.start.y - b.y_min).abs() < (edge.start.y - b.y_max).abs() { 1.0 } else { -1.0 };
                    Point::new(along.x, edge.start.y + inward * depth)
                };
                let parallel = if vertical { 0.5 * PI } else { 0.0 };
                (mid, parallel + rng.random_range(-PI / 6.0..PI / 6.0))
            } else {
                let shared: Vec<Segment> = sub.boundary_refs.iter().map(|r| r.edge).collect();
                let mut mid = uniform_mid(rng);
                // Rejection sampling; keep the farthest candidate if the margin is unattainable.
                let mut best = (f64::NEG_INFINITY, mid);
                for _ in 0..1000 {
                    let d = shared.iter().map(|e| e.distance_to(mid)).fold(f64::INFINITY, f64::min);
                    if d > best.0 {
                        best = (d, mid);
                    }
                    if d >= *far_margin {
                        break;
                    }
                    mid = uniform_mid(rng);
                }
                (best.1, rng.random_range(0.0..PI))
            }
        }
        _ => (uniform_mid(rng), rng.random_range(0.0..PI)),
    };
    let (s, c) = angle.sin_cos();
    let half = 0.5 * length;
    Segment::new(Point::new(mid.x - half * c, mid.y - half * s), Point::new(mid.x + half * c, mid.y + half * s))
}

/// Builds a deterministic synthetic scenario and its labels.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let mut subdomains = geometry::partition_domain(cfg.bbox, cfg.gx, cfg.gy)?;

    let mut geo_rng = rng::stream(cfg.seed, &[tag::GEOMETRY]);
    let mut sources = Vec::new();
    for sub in subdomains.iter_mut() {
        let [lo, hi] = cfg.sources_per_subdomain;
        let count = geo_rng.random_range(lo..=hi);
        for _ in 0..count {
            let id = sources.len();
            let seg = place_source(cfg, sub, &mut geo_rng);
            // Assignment follows the midpoint, which always lies in this tile.
            debug_assert!(sub.bbox.contains(seg.midpoint()));
            sources.push(seg);
            sub.line_sources.push(id);
        }
        sub.receptors = geometry::place_receptors(sub, cfg.receptors_per_subdomain, cfg.seed)?;
    }

    let timestamps: Vec<i64> = (0..cfg.hours as i64).map(|h| cfg.start_timestamp + h * HOUR).collect();

    let tp = &cfg.traffic;
    let mut traffic = Array2::zeros((cfg.hours, sources.len()));
    for id in 0..sources.len() {
        let mut rng = rng::stream(cfg.seed, &[tag::TRAFFIC, id as u64]);
        for (t, &ts) in timestamps.iter().enumerate() {
            let diurnal = tp.amplitude * (TAU * (hour_of_day(ts) - tp.peak_hour) / 24.0).sin();
            let noise = if tp.noise_std > 0.0 { tp.noise_std * normal(&mut rng) } else { 0.0 };
            traffic[[t, id]] = (tp.base + diurnal + noise).max(0.0);
        }
    }

    let wp = &cfg.weather;
    let mut rng = rng::stream(cfg.seed, &[tag::WEATHER]);
    let mut latent_u = wp.wind_mean;
    let mut dir = wp.dir_initial.rem_euclid(TAU);
    let mut weather = Vec::with_capacity(cfg.hours);
    for (t, &ts) in timestamps.iter().enumerate() {
        if t > 0 {
            latent_u = wp.wind_mean + wp.wind_ar * (latent_u - wp.wind_mean) + wp.wind_noise_std * normal(&mut rng);
            dir = (dir + wp.dir_step_std * normal(&mut rng)).rem_euclid(TAU);
        }
        let dir_std = (wp.dir_std_mean + wp.dir_std_noise * normal(&mut rng)).max(0.0);
        let temperature = wp.temp_mean
            + wp.temp_amplitude * (TAU * (hour_of_day(ts) - 9.0) / 24.0).sin()
            + wp.temp_noise_std * normal(&mut rng);
        weather.push(WeatherSample {
            wind_speed: latent_u.max(cfg.plume.u_min),
            wind_dir: dir,
            wind_dir_std: dir_std,
            temperature,
        });
    }

    let plume_params = subdomains
        .iter()
        .map(|s| PlumeParams {
            diffusivity: subdomain_diffusivity(cfg, s),
            u_min: cfg.plume.u_min,
            n_quad: cfg.plume.n_quad,
        })
        .collect();

    let mut scn = Scenario {
        config: cfg.clone(),
        subdomains,
        sources,
        timestamps,
        traffic,
        weather,
        plume_params,
        labels: Vec::new(),
    };
    scn.labels = compute_labels(&scn)?;
    Ok(scn)
}

/// `labels[p][m][[t, i]]`: background-free concentration of pollutant `p` at receptor `i` of subdomain `m`.
/// In legacy mode receptors are processed in runs of at most 20; results are identical.
pub fn compute_labels(scn: &Scenario) -> Result<Vec<Vec<Array2<f64>>>, ScenarioError> {
    let t_len = scn.timestamps.len();
    if scn.traffic.nrows() != t_len || scn.weather.len() != t_len {
        return Err(ScenarioError::Config("traffic and weather must cover every timestamp".into()));
    }
    let z = scn.config.receptor_height;
    let mut out = Vec::with_capacity(scn.pollutants().len());
    for pollutant in scn.pollutants() {
        let mut per_sub = Vec::with_capacity(scn.subdomains.len());
        for (m, sub) in scn.subdomains.iter().enumerate() {
            let report = plume::caline_mode_check(sub);
            if scn.config.legacy_caline && !report.passes() {
                return Err(ScenarioError::LegacyLimit { subdomain: m, n_sources: report.n_sources });
            }
            let segs = scn.subdomain_sources(m);
            let params = scn.plume_params[m];
            let n_r = sub.receptors.len();
            let runs = if scn.config.legacy_caline { report.runs } else { vec![0..n_r] };
            let rows: Vec<Vec<f64>> = (0..t_len)
                .into_par_iter()
                .map(|t| {
                    let vols = scn.subdomain_volumes(m, t);
                    let w = &scn.weather[t];
                    let mut row = vec![0.0; n_r];
                    for run in &runs {
                        for i in run.clone() {
                            row[i] = plume::total_concentration(
                                &segs,
                                sub.receptors[i].with_height(z),
                                w,
                                &vols,
                                pollutant,
                                &params,
                                false,
                            )?;
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_, PlumeError>>()?;
            let mut y = Array2::zeros((t_len, n_r));
            for (t, row) in rows.into_iter().enumerate() {
                for (i, v) in row.into_iter().enumerate() {
                    y[[t, i]] = v;
                }
            }
            per_sub.push(y);
        }
        out.push(per_sub);
    }
    Ok(out)
}
