use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BoundaryInterval, DdConfig, DdError};
use crate::geometry::{locate_all, BBox, BoundaryPair, Point, Segment, Subdomain};
use crate::metrics::IterationMetrics;
use crate::neural::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::plume::{Pollutant, WeatherSample};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "ensemble.json";
const CHECKPOINT_DIR: &str = "checkpoints";
const INFERENCE_CHUNK: usize = 4096;

/// Trained members for every (pollutant, subdomain) plus the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub format_version: u32,
    pub config: DdConfig,
    pub scenario_hash: String,
    pub bbox: BBox,
    pub subdomains: Vec<Subdomain>,
    pub sources: Vec<Segment>,
    pub pollutants: Vec<Pollutant>,
    pub pairs: Vec<BoundaryPair>,
    pub eval_times: Vec<usize>,
    /// `[pollutant][pair]`.
    pub intervals: Vec<Vec<BoundaryInterval>>,
    pub history: Vec<IterationMetrics>,
    /// `[pollutant][subdomain]`; stored as separate checkpoint files.
    #[serde(skip)]
    pub members: Vec<Vec<Checkpoint>>,
}

/// Hourly inputs shared by a group of queries. `volumes` covers every source of the domain.
#[derive(Debug, Clone, Copy)]
pub struct QueryInputs<'a> {
    pub timestamp: i64,
    pub weather: &'a WeatherSample,
    pub volumes: &'a [f64],
}

impl Ensemble {
    pub fn pollutant_index(&self, name: &str) -> Result<usize, DdError> {
        self.pollutants
            .iter()
            .position(|p| p.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| DdError::UnknownPollutant(name.into()))
    }

    pub fn member(&self, pollutant: usize, m: usize) -> &Checkpoint {
        &self.members[pollutant][m]
    }

    pub fn history_for(&self, pollutant: &str) -> Vec<&IterationMetrics> {
        self.history.iter().filter(|h| h.pollutant == pollutant).collect()
    }

    /// Concentrations in µg/m³ for points sharing one set of hourly inputs.
    pub fn predict(
        &self,
        pollutant: &str,
        points: &[Point],
        inputs: QueryInputs<'_>,
        include_background: bool,
    ) -> Result<Vec<f64>, DdError> {
        let p = self.pollutant_index(pollutant)?;
        let queries: Vec<(Point, QueryInputs<'_>)> = points.iter().map(|&pt| (pt, inputs)).collect();
        self.predict_many(p, &queries, include_background)
    }

    /// Each point is answered by the subdomain containing it; points on a
    /// shared edge or corner get the mean of all abutting members.
    pub fn predict_many(
        &self,
        pollutant: usize,
        queries: &[(Point, QueryInputs<'_>)],
        include_background: bool,
    ) -> Result<Vec<f64>, DdError> {
        let n_sub = self.subdomains.len();
        let mut routed: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
        let mut owners = vec![0usize; queries.len()];
        for (q, (pt, inp)) in queries.iter().enumerate() {
            if inp.volumes.len() != self.sources.len() {
                return Err(DdError::VolumeMismatch { expected: self.sources.len(), got: inp.volumes.len() });
            }
            if !self.bbox.contains(*pt) {
                return Err(DdError::OutsideDomain { x: pt.x, y: pt.y });
            }
            let hits = locate_all(&self.subdomains, *pt);
            if hits.is_empty() {
                return Err(DdError::OutsideDomain { x: pt.x, y: pt.y });
            }
            owners[q] = hits.len();
            for m in hits {
                routed[m].push(q);
            }
        }
        let mut sums = vec![0.0; queries.len()];
        for (m, list) in routed.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let ck = self.member(pollutant, m);
            let sub = &self.subdomains[m];
            let segs: Vec<Segment> = sub.line_sources.iter().map(|&id| self.sources[id]).collect();
            let width = ck.layout.width();
            let mut vols = vec![0.0; segs.len()];
            for chunk in list.chunks(INFERENCE_CHUNK) {
                let mut rows = Array2::zeros((chunk.len(), width));
                for (r, &q) in chunk.iter().enumerate() {
                    let (pt, inp) = &queries[q];
                    for (v, &id) in vols.iter_mut().zip(&sub.line_sources) {
                        *v = inp.volumes[id];
                    }
                    let row = rows.row_mut(r).into_slice().expect("standard layout");
                    ck.layout.fill_row(inp.timestamp, &segs, &vols, inp.weather, *pt, row);
                    ck.normalizer.apply_row(row)?;
                }
                let out = ck.model.forward_batch(rows.view())?;
                for (&q, v) in chunk.iter().zip(out.iter()) {
                    sums[q] += ck.normalizer.labels.invert(*v);
                }
            }
        }
        let background = if include_background { self.pollutants[pollutant].background } else { 0.0 };
        Ok(sums.iter().zip(&owners).map(|(s, &n)| s / n as f64 + background).collect())
    }

    pub fn checkpoint_path(dir: &Path, pollutant: &str, m: usize) -> PathBuf {
        dir.join(CHECKPOINT_DIR).join(format!("{pollutant}_sub{m}.json"))
    }

    pub fn save(&self, dir: &Path) -> Result<(), DdError> {
        let io = |e: std::io::Error| DdError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(io)?;
        let manifest = serde_json::to_vec_pretty(self).map_err(|e| DdError::Format(e.to_string()))?;
        fs::write(dir.join(MANIFEST), manifest).map_err(io)?;
        for (p, per) in self.members.iter().enumerate() {
            for (m, ck) in per.iter().enumerate() {
                save_checkpoint(&Self::checkpoint_path(dir, &self.pollutants[p].name, m), ck)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DdError> {
        let path = dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| DdError::Io(format!("{}: {e}", path.display())))?;
        let mut ens: Ensemble =
            serde_json::from_slice(&bytes).map_err(|e| DdError::Format(format!("{}: {e}", path.display())))?;
        if ens.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(DdError::Format(format!(
                "manifest version {} is not supported (expected {ENSEMBLE_FORMAT_VERSION})",
                ens.format_version
            )));
        }
        ens.members = ens
            .pollutants
            .iter()
            .map(|p| {
                (0..ens.subdomains.len())
                    .map(|m| load_checkpoint(&Self::checkpoint_path(dir, &p.name, m)).map_err(DdError::from))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        for (p, per) in ens.members.iter().enumerate() {
            for (m, ck) in per.iter().enumerate() {
                if ck.meta.subdomain != m || ck.meta.pollutant != ens.pollutants[p].name {
                    return Err(DdError::Format(format!("checkpoint for {} subdomain {m} is mislabeled", ens.pollutants[p].name)));
                }
            }
        }
        Ok(ens)
    }
}
