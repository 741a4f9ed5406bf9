//! Localization error metrics: Euclidean mean distance error, Haversine
//! great-circle distance, RMSE, empirical error CDFs and environment accuracy.

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the Haversine metric.
pub const EARTH_RADIUS_KM: f64 = 6371.01;

fn check_pairs(pred: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    if pred.ncols() != 2 {
        return Err(Error::Shape(format!("expected N x 2 coordinates, got {:?}", pred.dim())));
    }
    if pred.nrows() == 0 {
        return Err(Error::Empty("no samples"));
    }
    Ok(())
}

/// Per-sample Euclidean distances between predicted and true 2-D positions.
pub fn euclidean_errors(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_pairs(&pred, &truth)?;
    Ok(pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .collect())
}

/// Mean distance error in the units of the inputs.
pub fn mde(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    let errors = euclidean_errors(pred, truth)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn check_lat_lon(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Validation(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Validation(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

/// Great-circle distance in kilometers between two points given in degrees.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    check_lat_lon(lat1, lon1)?;
    check_lat_lon(lat2, lon2)?;
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let gamma = ((phi2 - phi1) / 2.0).sin().powi(2);
    let dlambda = (lon2 - lon1).to_radians();
    let h = gamma + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin())
}

/// Per-sample Haversine distances in meters. Columns are (longitude, latitude)
/// in degrees, the same order the datasets use for labels.
pub fn haversine_errors(pred_deg: ArrayView2<f64>, truth_deg: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_pairs(&pred_deg, &truth_deg)?;
    pred_deg
        .rows()
        .into_iter()
        .zip(truth_deg.rows())
        .map(|(p, t)| haversine(p[1], p[0], t[1], t[0]).map(|km| km * 1000.0))
        .collect()
}

/// Mean Haversine distance error in meters.
pub fn haversine_mde(pred_deg: ArrayView2<f64>, truth_deg: ArrayView2<f64>) -> Result<f64> {
    let errors = haversine_errors(pred_deg, truth_deg)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Root mean squared error over every entry.
pub fn rmse(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    let mut sum = 0.0;
    Zip::from(&pred).and(&truth).for_each(|p, t| sum += (p - t) * (p - t));
    Ok((sum / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub error: f64,
    pub fraction: f64,
}

/// Empirical CDF: sorted distinct errors with the fraction of samples at or
/// below each one.
pub fn build_cdf(errors: &[f64]) -> Result<Vec<CdfPoint>> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors for CDF"));
    }
    if let Some(e) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::Validation(format!("negative or NaN error {e}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut cdf: Vec<CdfPoint> = Vec::new();
    for (k, e) in sorted.into_iter().enumerate() {
        let fraction = (k + 1) as f64 / n;
        match cdf.last_mut() {
            Some(last) if last.error == e => last.fraction = fraction,
            _ => cdf.push(CdfPoint { error: e, fraction }),
        }
    }
    Ok(cdf)
}

/// Smallest error whose cumulative fraction reaches `p`.
pub fn cdf_quantile(cdf: &[CdfPoint], p: f64) -> Option<f64> {
    cdf.iter().find(|pt| pt.fraction >= p - 1e-12).map(|pt| pt.error)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fraction of samples whose thresholded sigmoid matches the 0/1 label.
pub fn env_accuracy(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::Validation("environment labels must be 0 or 1".into()));
    }
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(z, y)| (sigmoid(**z) >= 0.5) == (**y == 1.0))
        .count();
    Ok(correct as f64 / logits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Euclidean distance in the dataset's projected meters.
    Euclidean,
    /// Great-circle distance on (lon, lat) degrees.
    Haversine,
}

/// Evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: DistanceMetric,
    pub mde_m: f64,
    pub rmse_norm: f64,
    pub median_m: f64,
    pub cdf: Vec<CdfPoint>,
    pub cls_accuracy: Option<f64>,
    pub n_samples: usize,
}

impl EvalReport {
    /// Builds a report from denormalized predictions plus the normalized-unit RMSE.
    pub fn from_predictions(
        metric: DistanceMetric,
        pred: ArrayView2<f64>,
        truth: ArrayView2<f64>,
        rmse_norm: f64,
        cls_accuracy: Option<f64>,
    ) -> Result<Self> {
        let errors = match metric {
            DistanceMetric::Euclidean => euclidean_errors(pred, truth)?,
            DistanceMetric::Haversine => haversine_errors(pred, truth)?,
        };
        let cdf = build_cdf(&errors)?;
        Ok(Self {
            metric,
            mde_m: errors.iter().sum::<f64>() / errors.len() as f64,
            rmse_norm,
            median_m: cdf_quantile(&cdf, 0.5).unwrap_or(0.0),
            cdf,
            cls_accuracy,
            n_samples: errors.len(),
        })
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("error_m,fraction\n");
        for p in &self.cdf {
            out.push_str(&format!("{},{}\n", p.error, p.fraction));
        }
        out
    }
}
