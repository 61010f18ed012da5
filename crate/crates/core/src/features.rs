//! Design matrices and normalization.
//!
//! One row per (hour, receptor):
//!
//! ```text
//! [timestamp, x0 y0 x1 y1 (per source), volume (per source),
//!  wind_speed, sin(dir), cos(dir), dir_std, temperature, receptor_x, receptor_y]
//! ```
//!
//! Width is `8 + 5 * S` for `S` sources (108 at the 20-source maximum).
//! The timestamp is min-max scaled, padding columns are left at zero and
//! every other column is standardized with training-split statistics.
//! Labels share one min-max scale across all subdomains of a pollutant.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Segment, Subdomain};
use crate::plume::WeatherSample;
use crate::scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit a normalizer on empty input")]
    Empty,
    #[error("scenario has no labels for subdomain {0}")]
    MissingLabels(usize),
    #[error("row width {got} does not match layout width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("layout pads to {padded} sources but subdomain has {actual}")]
    PaddingTooSmall { padded: usize, actual: usize },
    #[error("label range is empty or non-finite: [{0}, {1}]")]
    BadLabelRange(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    MinMax,
    Gaussian,
    /// Always zero.
    Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_sources: usize,
    pub padded_sources: usize,
}

impl FeatureLayout {
    pub const FIXED_COLUMNS: usize = 8;

    pub fn for_subdomain(sub: &Subdomain) -> Self {
        Self { n_sources: sub.line_sources.len(), padded_sources: sub.line_sources.len() }
    }

    pub fn padded(self, padded_sources: usize) -> Result<Self, FeatureError> {
        if padded_sources < self.n_sources {
            return Err(FeatureError::PaddingTooSmall { padded: padded_sources, actual: self.n_sources });
        }
        Ok(Self { padded_sources, ..self })
    }

    pub fn width(&self) -> usize {
        Self::FIXED_COLUMNS + 5 * self.padded_sources
    }

    pub fn kinds(&self) -> Vec<ColumnKind> {
        let s = self.padded_sources;
        let mut k = Vec::with_capacity(self.width());
        k.push(ColumnKind::MinMax);
        for src in 0..s {
            let kind = if src < self.n_sources { ColumnKind::Gaussian } else { ColumnKind::Padding };
            k.extend([kind; 4]);
        }
        for src in 0..s {
            k.push(if src < self.n_sources { ColumnKind::Gaussian } else { ColumnKind::Padding });
        }
        k.extend([ColumnKind::Gaussian; 7]);
        k
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["timestamp".to_string()];
        for s in 0..self.padded_sources {
            names.extend(["x0", "y0", "x1", "y1"].iter().map(|c| format!("src{s}_{c}")));
        }
        names.extend((0..self.padded_sources).map(|s| format!("src{s}_volume")));
        names.extend(
            ["wind_speed", "wind_dir_sin", "wind_dir_cos", "wind_dir_std", "temperature", "receptor_x", "receptor_y"]
                .map(String::from),
        );
        names
    }

    /// Writes one raw (unnormalized) row into `out`.
    pub fn fill_row(
        &self,
        timestamp: i64,
        sources: &[Segment],
        volumes: &[f64],
        weather: &WeatherSample,
        receptor: Point,
        out: &mut [f64],
    ) {
        debug_assert_eq!(out.len(), self.width());
        debug_assert_eq!(sources.len(), self.n_sources);
        let s = self.padded_sources;
        out.fill(0.0);
        out[0] = timestamp as f64;
        for (k, seg) in sources.iter().enumerate() {
            out[1 + 4 * k..5 + 4 * k].copy_from_slice(&[seg.start.x, seg.start.y, seg.end.x, seg.end.y]);
        }
        out[1 + 4 * s..1 + 4 * s + volumes.len()].copy_from_slice(volumes);
        let (sin, cos) = weather.wind_dir.sin_cos();
        let tail = 1 + 5 * s;
        out[tail..tail + 7].copy_from_slice(&[
            weather.wind_speed,
            sin,
            cos,
            weather.wind_dir_std,
            weather.temperature,
            receptor.x,
            receptor.y,
        ]);
    }
}

/// Rows for one subdomain in `t`-major order: row `t * n_r + i` is receptor `i` at hour `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub layout: FeatureLayout,
    pub x: Array2<f64>,
    /// One label column per pollutant, µg/m³.
    pub labels: Vec<Array1<f64>>,
    pub hours: usize,
    pub n_receptors: usize,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn row_origin(&self, row: usize) -> (usize, usize) {
        (row / self.n_receptors, row % self.n_receptors)
    }
}

/// Raw features of subdomain `m` at hour `t` for an arbitrary point.
pub fn point_row(scn: &Scenario, m: usize, layout: &FeatureLayout, t: usize, p: Point) -> Vec<f64> {
    let mut row = vec![0.0; layout.width()];
    layout.fill_row(
        scn.timestamps[t],
        &scn.subdomain_sources(m),
        &scn.subdomain_volumes(m, t),
        &scn.weather[t],
        p,
        &mut row,
    );
    row
}

pub fn build_design_matrix(sub: &Subdomain, scn: &Scenario) -> Result<DesignMatrix, FeatureError> {
    build_design_matrix_with(sub, scn, FeatureLayout::for_subdomain(sub))
}

pub fn build_design_matrix_with(
    sub: &Subdomain,
    scn: &Scenario,
    layout: FeatureLayout,
) -> Result<DesignMatrix, FeatureError> {
    let m = sub.id;
    if scn.labels.is_empty() || scn.labels.iter().any(|per| per.get(m).is_none()) {
        return Err(FeatureError::MissingLabels(m));
    }
    let hours = scn.hours();
    let n_r = sub.receptors.len();
    let width = layout.width();
    let sources = scn.subdomain_sources(m);
    let mut x = Array2::zeros((hours * n_r, width));
    let mut scratch = vec![0.0; width];
    for t in 0..hours {
        let vols = scn.subdomain_volumes(m, t);
        for (i, &p) in sub.receptors.iter().enumerate() {
            layout.fill_row(scn.timestamps[t], &sources, &vols, &scn.weather[t], p, &mut scratch);
            x.row_mut(t * n_r + i).assign(&ArrayView1::from(&scratch[..]));
        }
    }
    let labels = scn
        .labels
        .iter()
        .map(|per| {
            let y = &per[m];
            if y.dim() != (hours, n_r) {
                return Err(FeatureError::MissingLabels(m));
            }
            Ok(Array1::from_iter(y.iter().copied()))
        })
        .collect::<Result<_, _>>()?;
    Ok(DesignMatrix { layout, x, labels, hours, n_receptors: n_r })
}

/// Shared min-max label scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScale {
    pub min: f64,
    pub max: f64,
}

impl LabelScale {
    pub fn new(min: f64, max: f64) -> Result<Self, FeatureError> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(FeatureError::BadLabelRange(min, max));
        }
        Ok(Self { min, max })
    }

    pub fn fit<'a>(sets: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, FeatureError> {
        let (mut lo, mut hi, mut any) = (f64::INFINITY, f64::NEG_INFINITY, false);
        for v in sets.into_iter().flatten() {
            lo = lo.min(*v);
            hi = hi.max(*v);
            any = true;
        }
        if !any {
            return Err(FeatureError::Empty);
        }
        Self::new(lo, hi)
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn scale(&self, y: f64) -> f64 {
        let r = self.range();
        if r > 0.0 {
            (y - self.min) / r
        } else {
            0.0
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * self.range()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kinds: Vec<ColumnKind>,
    /// Mean (Gaussian) or minimum (min-max) per column.
    pub offset: Vec<f64>,
    /// Standard deviation (Gaussian) or range (min-max) per column.
    pub spread: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub labels: LabelScale,
}

impl Normalizer {
    /// Fits column statistics on `x`, which must be the training split only.
    pub fn fit(x: ArrayView2<'_, f64>, kinds: &[ColumnKind], labels: LabelScale) -> Result<Self, FeatureError> {
        if x.nrows() == 0 {
            return Err(FeatureError::Empty);
        }
        if x.ncols() != kinds.len() {
            return Err(FeatureError::WidthMismatch { expected: kinds.len(), got: x.ncols() });
        }
        let n = x.nrows() as f64;
        let mut offset = Vec::with_capacity(kinds.len());
        let mut spread = Vec::with_capacity(kinds.len());
        let mut zero_variance = Vec::with_capacity(kinds.len());
        for (col, kind) in x.axis_iter(Axis(1)).zip(kinds) {
            let (o, s) = match kind {
                ColumnKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                ColumnKind::Gaussian => {
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
                ColumnKind::Padding => (0.0, 0.0),
            };
            let degenerate = !(s > 1e-12 * o.abs().max(1.0));
            offset.push(o);
            spread.push(s);
            zero_variance.push(degenerate);
        }
        Ok(Self { kinds: kinds.to_vec(), offset, spread, zero_variance, labels })
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn apply_row(&self, row: &mut [f64]) -> Result<(), FeatureError> {
        if row.len() != self.width() {
            return Err(FeatureError::WidthMismatch { expected: self.width(), got: row.len() });
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = if self.zero_variance[j] { 0.0 } else { (*v - self.offset[j]) / self.spread[j] };
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, FeatureError> {
        if x.ncols() != self.width() {
            return Err(FeatureError::WidthMismatch { expected: self.width(), got: x.ncols() });
        }
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            self.apply_row(row.as_slice_mut().expect("standard layout"))?;
        }
        Ok(out)
    }

    pub fn scale_labels(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        y.mapv(|v| self.labels.scale(v))
    }

    pub fn invert_labels(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        y.mapv(|v| self.labels.invert(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioConfig};
    use ndarray::array;
    use proptest::prelude::*;

    fn scn(hours: usize, n_r: usize) -> Scenario {
        generate_scenario(&ScenarioConfig { hours, receptors_per_subdomain: n_r, ..ScenarioConfig::paper_mini() }).unwrap()
    }

    #[test]
    fn row_count_and_layout() {
        let s = scn(2, 3);
        let dm = build_design_matrix(&s.subdomains[0], &s).unwrap();
        assert_eq!(dm.n_rows(), 6);
        let n_src = s.subdomains[0].line_sources.len();
        assert_eq!(dm.x.ncols(), 8 + 5 * n_src);
        assert_eq!(dm.layout.column_names().len(), dm.x.ncols());
        assert_eq!(dm.layout.kinds().len(), dm.x.ncols());
        assert_eq!(dm.labels.len(), 2);
        // Receptor rows at the same hour share the source and weather block.
        let block = 1 + 5 * n_src + 5;
        for t in 0..2 {
            for i in 1..3 {
                let a = dm.x.row(t * 3);
                let b = dm.x.row(t * 3 + i);
                assert_eq!(a.slice(ndarray::s![..block]), b.slice(ndarray::s![..block]));
            }
        }
        assert_eq!(dm.labels[0][4], s.labels[0][0][[1, 1]]);
    }

    #[test]
    fn maximum_width_is_108() {
        assert_eq!(FeatureLayout { n_sources: 20, padded_sources: 20 }.width(), 108);
    }

    #[test]
    fn padding_columns_are_zero() {
        let s = scn(3, 2);
        let sub = &s.subdomains[0];
        let layout = FeatureLayout::for_subdomain(sub).padded(20).unwrap();
        let dm = build_design_matrix_with(sub, &s, layout).unwrap();
        let kinds = layout.kinds();
        let norm = Normalizer::fit(dm.x.view(), &kinds, LabelScale::new(0.0, 1.0).unwrap()).unwrap();
        let xn = norm.apply(dm.x.view()).unwrap();
        for (j, k) in kinds.iter().enumerate() {
            if *k == ColumnKind::Padding {
                assert!(dm.x.column(j).iter().all(|v| *v == 0.0));
                assert!(xn.column(j).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let x = array![[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [5.0, 5.0, 9.0]];
        let kinds = [ColumnKind::MinMax, ColumnKind::Gaussian, ColumnKind::Gaussian];
        let n = Normalizer::fit(x.view(), &kinds, LabelScale::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(n.zero_variance, vec![false, true, false]);
        let xn = n.apply(x.view()).unwrap();
        assert_eq!(xn.column(1).to_vec(), vec![0.0; 3]);
        assert_eq!(xn.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn label_endpoints_and_round_trip() {
        let ls = LabelScale::fit([&[2.0, 7.5][..], &[3.0, 12.0][..]]).unwrap();
        assert_eq!((ls.min, ls.max), (2.0, 12.0));
        assert_eq!(ls.scale(2.0), 0.0);
        assert_eq!(ls.scale(12.0), 1.0);
        let n = Normalizer { kinds: vec![], offset: vec![], spread: vec![], zero_variance: vec![], labels: ls };
        let y = array![2.0, 3.3, 7.9, 12.0];
        let back = n.invert_labels(n.scale_labels(y.view()).view());
        for (a, b) in y.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_input_rejected() {
        let x = Array2::<f64>::zeros((0, 2));
        assert_eq!(
            Normalizer::fit(x.view(), &[ColumnKind::Gaussian; 2], LabelScale::new(0.0, 1.0).unwrap()),
            Err(FeatureError::Empty)
        );
        assert_eq!(LabelScale::fit(std::iter::empty::<&[f64]>()), Err(FeatureError::Empty));
    }

    #[test]
    fn refit_on_training_rows_is_reproducible() {
        let s = scn(6, 4);
        let dm = build_design_matrix(&s.subdomains[1], &s).unwrap();
        let train: Vec<usize> = (0..dm.n_rows()).filter(|r| r % 5 != 0).collect();
        let xt = dm.x.select(Axis(0), &train);
        let kinds = dm.layout.kinds();
        let ls = LabelScale::new(0.0, 1.0).unwrap();
        let a = Normalizer::fit(xt.view(), &kinds, ls).unwrap();
        let b = Normalizer::fit(dm.x.select(Axis(0), &train).view(), &kinds, ls).unwrap();
        assert_eq!(a, b);
        let full = Normalizer::fit(dm.x.view(), &kinds, ls).unwrap();
        assert_ne!(a, full, "test rows must change statistics");
    }

    proptest! {
        #[test]
        fn gaussian_columns_are_standardized(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..60)) {
            let x = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
            let kinds = [ColumnKind::Gaussian; 3];
            let n = Normalizer::fit(x.view(), &kinds, LabelScale::new(0.0, 1.0).unwrap()).unwrap();
            let xn = n.apply(x.view()).unwrap();
            for j in 0..3 {
                if n.zero_variance[j] {
                    continue;
                }
                let c = xn.column(j);
                let mean = c.sum() / c.len() as f64;
                let std = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((std - 1.0).abs() <= 1e-9);
            }
        }
    }
}
