//! Fingerprint datasets: CSV ingest for the indoor (Wi-Fi) and outdoor (LoRaWAN)
//! layouts, a log-distance path-loss generator for synthetic data, and seeded
//! train/validation/test splitting.
//!
//! Missing readings are tracked out-of-band in a validity mask. The two public
//! datasets use different markers on disk (`+100` indoor, `-200` outdoor); both
//! are mapped to [`NOT_RECEIVED`] at ingest so downstream code only ever looks at
//! the mask.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EARTH_RADIUS_KM;

/// Canonical in-memory value of a missing cell.
pub const NOT_RECEIVED: f64 = -200.0;
/// On-disk marker for "no signal" in the indoor layout.
pub const INDOOR_FILE_SENTINEL: f64 = 100.0;
/// On-disk marker for "no signal" in the outdoor layout.
pub const OUTDOOR_FILE_SENTINEL: f64 = -200.0;

pub const RSSI_FLOOR_DBM: f64 = -200.0;
pub const RSSI_CEIL_DBM: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Indoor = 0,
    Outdoor = 1,
}

impl Environment {
    /// Class label used by the environment classifier (indoor 0, outdoor 1).
    pub fn label(self) -> f64 {
        self as u8 as f64
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Environment::Indoor => "indoor",
            Environment::Outdoor => "outdoor",
        })
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indoor" => Ok(Environment::Indoor),
            "outdoor" => Ok(Environment::Outdoor),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

/// RSSI fingerprints with their coordinate labels.
///
/// Label column 0 is the x / longitude axis and column 1 the y / latitude axis,
/// regardless of the column order in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDataset {
    features: Array2<f64>,
    valid: Array2<bool>,
    labels: Array2<f64>,
    environment: Environment,
    feature_ids: Vec<String>,
    synthetic_seed: Option<u64>,
}

impl FingerprintDataset {
    /// Builds a dataset from raw parts. Cells whose mask entry is `false` are
    /// rewritten to [`NOT_RECEIVED`].
    pub fn new(
        mut features: Array2<f64>,
        valid: Array2<bool>,
        labels: Array2<f64>,
        environment: Environment,
        feature_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, f) = features.dim();
        if valid.dim() != (n, f) {
            return Err(Error::Shape(format!(
                "validity mask is {:?}, features are {:?}",
                valid.dim(),
                (n, f)
            )));
        }
        if labels.dim() != (n, 2) {
            return Err(Error::Shape(format!(
                "labels must be {n}x2, got {:?}",
                labels.dim()
            )));
        }
        if feature_ids.len() != f {
            return Err(Error::Shape(format!(
                "{} feature ids for {f} feature columns",
                feature_ids.len()
            )));
        }
        for (v, ok) in features.iter_mut().zip(valid.iter()) {
            if !*ok {
                *v = NOT_RECEIVED;
            } else if !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(v) {
                return Err(Error::Validation(format!(
                    "RSSI value {v} outside [{RSSI_FLOOR_DBM}, {RSSI_CEIL_DBM}] dBm"
                )));
            }
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite coordinate label".into()));
        }
        Ok(Self {
            features,
            valid,
            labels,
            environment,
            feature_ids,
            synthetic_seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn valid_mask(&self) -> &Array2<bool> {
        &self.valid
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn environment(&self) -> Environment {
        self.environment
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    /// Value stored in missing cells. Always [`NOT_RECEIVED`] after ingest.
    pub fn missing_sentinel(&self) -> f64 {
        NOT_RECEIVED
    }

    pub fn synthetic_seed(&self) -> Option<u64> {
        self.synthetic_seed
    }

    pub fn with_synthetic_seed(mut self, seed: Option<u64>) -> Self {
        self.synthetic_seed = seed;
        self
    }

    /// Fraction of missing cells per feature column.
    pub fn missing_fractions(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.valid
            .axis_iter(Axis(1))
            .map(|col| col.iter().filter(|ok| !**ok).count() as f64 / n)
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            valid: self.valid.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            environment: self.environment,
            feature_ids: self.feature_ids.clone(),
            synthetic_seed: self.synthetic_seed,
        }
    }

    /// Feature columns at `columns`, in that order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(1), columns),
            valid: self.valid.select(Axis(1), columns),
            labels: self.labels.clone(),
            environment: self.environment,
            feature_ids: columns.iter().map(|&c| self.feature_ids[c].clone()).collect(),
            synthetic_seed: self.synthetic_seed,
        }
    }

    /// Projects onto a named feature set, e.g. the columns kept on the training
    /// split. Fails if an id is not present.
    pub fn select_features(&self, ids: &[String]) -> Result<Self> {
        let columns = ids
            .iter()
            .map(|id| {
                self.feature_ids
                    .iter()
                    .position(|f| f == id)
                    .ok_or_else(|| Error::Schema(format!("feature `{id}` not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&columns))
    }

    /// Replaces feature values (keeping the mask), used by missing-value replacement.
    pub(crate) fn with_features(mut self, features: Array2<f64>) -> Self {
        debug_assert_eq!(features.dim(), self.features.dim());
        self.features = features;
        self
    }
}

// ---------------------------------------------------------------------------
// CSV ingest
// ---------------------------------------------------------------------------

struct Layout {
    feature_prefixes: &'static [&'static str],
    case_insensitive_prefix: bool,
    longitude: &'static str,
    latitude: &'static str,
    file_sentinel: f64,
    environment: Environment,
}

const INDOOR_LAYOUT: Layout = Layout {
    feature_prefixes: &["WAP"],
    case_insensitive_prefix: false,
    longitude: "LONGITUDE",
    latitude: "LATITUDE",
    file_sentinel: INDOOR_FILE_SENTINEL,
    environment: Environment::Indoor,
};

const OUTDOOR_LAYOUT: Layout = Layout {
    feature_prefixes: &["BS", "GW"],
    case_insensitive_prefix: true,
    longitude: "Longitude",
    latitude: "Latitude",
    file_sentinel: OUTDOOR_FILE_SENTINEL,
    environment: Environment::Outdoor,
};

impl Layout {
    fn is_feature(&self, name: &str) -> bool {
        self.feature_prefixes.iter().any(|p| {
            name.len() >= p.len()
                && if self.case_insensitive_prefix {
                    name[..p.len()].eq_ignore_ascii_case(p)
                } else {
                    name.starts_with(p)
                }
        })
    }
}

/// Loads a file in the UJIIndoorLoc layout: `WAP*` RSSI columns (`+100` = missing)
/// plus `LONGITUDE`/`LATITUDE`. Other columns are ignored.
///
/// Synthetic files carry a `# synthetic seed=<s>` comment; an `env=outdoor`
/// token on that line marks outdoor-style synthetic data.
pub fn load_indoor_csv(path: impl AsRef<Path>) -> Result<FingerprintDataset> {
    load_with_layout(path.as_ref(), &INDOOR_LAYOUT)
}

/// Loads a file in the Antwerp LoRaWAN layout: gateway RSSI columns named
/// `BS*`/`GW*` (`-200` = missing) plus `Latitude`/`Longitude` in degrees.
pub fn load_outdoor_csv(path: impl AsRef<Path>) -> Result<FingerprintDataset> {
    load_with_layout(path.as_ref(), &OUTDOOR_LAYOUT)
}

/// Picks the layout from the header: any `WAP*` column means indoor.
pub fn load_csv(path: impl AsRef<Path>) -> Result<FingerprintDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .unwrap_or("");
    let indoor = header
        .split(',')
        .any(|h| INDOOR_LAYOUT.is_feature(clean_header(h).as_str()));
    let layout = if indoor { &INDOOR_LAYOUT } else { &OUTDOOR_LAYOUT };
    parse_with_layout(&text, layout)
}

fn clean_header(h: &str) -> String {
    h.trim().trim_matches(|c| c == '"' || c == '\'').trim().to_string()
}

fn load_with_layout(path: &Path, layout: &Layout) -> Result<FingerprintDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_with_layout(&text, layout)
}

struct Preamble {
    synthetic_seed: Option<u64>,
    environment: Option<Environment>,
    lines: usize,
}

fn parse_preamble(text: &str) -> Result<Preamble> {
    let mut out = Preamble {
        synthetic_seed: None,
        environment: None,
        lines: 0,
    };
    for line in text.lines() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            break;
        };
        out.lines += 1;
        for token in comment.split_whitespace() {
            if let Some(v) = token.strip_prefix("seed=") {
                out.synthetic_seed = Some(v.parse().map_err(|_| Error::Parse {
                    row: out.lines,
                    message: format!("bad seed `{v}` in comment"),
                })?);
            } else if let Some(v) = token.strip_prefix("env=") {
                out.environment = Some(v.parse()?);
            }
        }
    }
    Ok(out)
}

fn parse_with_layout(text: &str, layout: &Layout) -> Result<FingerprintDataset> {
    let preamble = parse_preamble(text)?;
    let body = text.lines().skip(preamble.lines).collect::<Vec<_>>().join("\n");

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: preamble.lines + 1,
            message: e.to_string(),
        })?
        .iter()
        .map(clean_header)
        .collect();

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| layout.is_feature(&headers[i]))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema(format!(
            "no RSSI columns with prefix {:?}",
            layout.feature_prefixes
        )));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing `{name}` column")))
    };
    let lon_col = find(layout.longitude)?;
    let lat_col = find(layout.latitude)?;

    let n_cols = headers.len();
    let n_feat = feature_cols.len();
    let mut features = Vec::new();
    let mut valid = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e
                .position()
                .map(|p| p.line() as usize + preamble.lines)
                .unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = record
            .position()
            .map(|p| p.line() as usize + preamble.lines)
            .unwrap_or(rows + 2 + preamble.lines);
        if record.len() != n_cols {
            return Err(Error::Parse {
                row,
                message: format!("expected {n_cols} columns, found {}", record.len()),
            });
        }
        for &c in &feature_cols {
            let raw = record[c].trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric RSSI `{raw}` in column `{}`", headers[c]),
            })?;
            if v == layout.file_sentinel {
                features.push(NOT_RECEIVED);
                valid.push(false);
            } else if (RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&v) {
                features.push(v);
                valid.push(true);
            } else {
                return Err(Error::Parse {
                    row,
                    message: format!("RSSI {v} out of range in column `{}`", headers[c]),
                });
            }
        }
        for c in [lon_col, lat_col] {
            let raw = record[c].trim();
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("bad coordinate `{raw}` in column `{}`", headers[c]),
                })?;
            labels.push(v);
        }
        rows += 1;
    }

    let shape = (rows, n_feat);
    let features = Array2::from_shape_vec(shape, features).expect("row-major fill");
    let valid = Array2::from_shape_vec(shape, valid).expect("row-major fill");
    let labels = Array2::from_shape_vec((rows, 2), labels).expect("row-major fill");
    let ids = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let environment = preamble.environment.unwrap_or(layout.environment);
    Ok(
        FingerprintDataset::new(features, valid, labels, environment, ids)?
            .with_synthetic_seed(preamble.synthetic_seed),
    )
}

/// Writes a dataset in the layout matching its feature ids: the indoor layout
/// when every id starts with `WAP`, the outdoor layout otherwise. Numbers use the
/// shortest round-tripping representation, so reloading is exact.
pub fn write_csv(dataset: &FingerprintDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let indoor_layout = dataset.feature_ids.iter().all(|id| INDOOR_LAYOUT.is_feature(id));
    let layout = if indoor_layout { &INDOOR_LAYOUT } else { &OUTDOOR_LAYOUT };

    let mut out = String::new();
    match (dataset.synthetic_seed, dataset.environment) {
        (Some(seed), env) => out.push_str(&format!("# synthetic seed={seed} env={env}\n")),
        (None, env) if env != layout.environment => out.push_str(&format!("# env={env}\n")),
        _ => {}
    }
    let mut header: Vec<&str> = dataset.feature_ids.iter().map(String::as_str).collect();
    header.push(layout.longitude);
    header.push(layout.latitude);
    out.push_str(&header.join(","));
    out.push('\n');

    let sentinel = format_number(layout.file_sentinel);
    for i in 0..dataset.len() {
        let mut cells: Vec<String> = (0..dataset.n_features())
            .map(|j| {
                if dataset.valid[[i, j]] {
                    format_number(dataset.features[[i, j]])
                } else {
                    sentinel.clone()
                }
            })
            .collect();
        cells.push(format_number(dataset.labels[[i, 0]]));
        cells.push(format_number(dataset.labels[[i, 1]]));
        out.push_str(&cells.join(","));
        out.push('\n');
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn format_number(v: f64) -> String {
    // `Display` for f64 is the shortest string that parses back to the same bits.
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Reference power at `REFERENCE_DISTANCE_M`.
pub const REFERENCE_POWER_DBM: f64 = -30.0;
pub const REFERENCE_DISTANCE_M: f64 = 1.0;
/// Origin used to place outdoor synthetic scenes on the globe (lon, lat).
pub const OUTDOOR_ORIGIN_DEG: (f64, f64) = (4.40, 51.20);

pub fn path_loss_exponent(env: Environment) -> f64 {
    match env {
        Environment::Indoor => 3.0,
        Environment::Outdoor => 2.7,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_transmitters: usize,
    /// Width and height of the scene in meters.
    pub area_m: (f64, f64),
    pub env: Environment,
    pub noise_std_db: f64,
    pub missing_prob: f64,
    pub seed: u64,
    /// Seed for transmitter placement. Two scenes with the same layout seed and
    /// area share their transmitter geometry. Defaults to `seed`.
    pub layout_seed: Option<u64>,
    /// Overrides the environment's default path-loss exponent.
    pub path_loss_exponent: Option<f64>,
}

impl SyntheticConfig {
    pub fn new(env: Environment, n_samples: usize, n_transmitters: usize, seed: u64) -> Self {
        let area_m = match env {
            Environment::Indoor => (100.0, 60.0),
            Environment::Outdoor => (4000.0, 3000.0),
        };
        Self {
            n_samples,
            n_transmitters,
            area_m,
            env,
            noise_std_db: 2.0,
            missing_prob: 0.1,
            seed,
            layout_seed: None,
            path_loss_exponent: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_transmitters == 0 {
            return Err(Error::Config(
                "synthetic data needs at least one sample and one transmitter".into(),
            ));
        }
        let (w, h) = self.area_m;
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::Config(format!("area extent must be positive, got {w}x{h} m")));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(Error::Config(format!(
                "missing_prob must be in [0, 1), got {}",
                self.missing_prob
            )));
        }
        if !(self.noise_std_db.is_finite() && self.noise_std_db >= 0.0) {
            return Err(Error::Config("noise_std_db must be >= 0".into()));
        }
        if let Some(eta) = self.path_loss_exponent {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::Config("path-loss exponent must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Transmitter layout plus propagation model for one synthetic scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    config: SyntheticConfig,
    transmitters: Vec<(f64, f64)>,
    noise: Normal<f64>,
}

impl SyntheticScene {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.layout_seed.unwrap_or(config.seed));
        let (w, h) = config.area_m;
        let transmitters = (0..config.n_transmitters)
            .map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h)))
            .collect();
        let noise = Normal::new(0.0, config.noise_std_db)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        Ok(Self {
            config,
            transmitters,
            noise,
        })
    }

    pub fn transmitters(&self) -> &[(f64, f64)] {
        &self.transmitters
    }

    pub fn exponent(&self) -> f64 {
        self.config
            .path_loss_exponent
            .unwrap_or_else(|| path_loss_exponent(self.config.env))
    }

    /// Noise-free log-distance RSSI at `position` from transmitter `tx`.
    pub fn mean_rssi(&self, position: (f64, f64), tx: usize) -> f64 {
        let (tx_x, tx_y) = self.transmitters[tx];
        let d = ((position.0 - tx_x).powi(2) + (position.1 - tx_y).powi(2)).sqrt();
        let d = d.max(REFERENCE_DISTANCE_M);
        REFERENCE_POWER_DBM - 10.0 * self.exponent() * (d / REFERENCE_DISTANCE_M).log10()
    }

    /// One fingerprint at `position`: (rssi, valid) per transmitter.
    pub fn observe<R: Rng>(&self, position: (f64, f64), rng: &mut R) -> Vec<(f64, bool)> {
        (0..self.transmitters.len())
            .map(|tx| {
                let rssi = self.mean_rssi(position, tx) + self.noise.sample(rng);
                let missing = self.config.missing_prob > 0.0
                    && rng.random::<f64>() < self.config.missing_prob;
                if missing {
                    (NOT_RECEIVED, false)
                } else {
                    (rssi.clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM), true)
                }
            })
            .collect()
    }

    /// Coordinate label for a scene position: meters indoors, (lon, lat)
    /// degrees outdoors using a local equirectangular projection.
    pub fn label(&self, position: (f64, f64)) -> (f64, f64) {
        match self.config.env {
            Environment::Indoor => position,
            Environment::Outdoor => {
                let m_per_deg = EARTH_RADIUS_KM * 1000.0 * std::f64::consts::PI / 180.0;
                let (lon0, lat0) = OUTDOOR_ORIGIN_DEG;
                (
                    lon0 + position.0 / (m_per_deg * lat0.to_radians().cos()),
                    lat0 + position.1 / m_per_deg,
                )
            }
        }
    }

    pub fn generate(&self) -> Result<FingerprintDataset> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (w, h) = cfg.area_m;
        let f = self.transmitters.len();
        let mut features = Array2::zeros((cfg.n_samples, f));
        let mut valid = Array2::from_elem((cfg.n_samples, f), false);
        let mut labels = Array2::zeros((cfg.n_samples, 2));
        for i in 0..cfg.n_samples {
            let pos = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            for (j, (rssi, ok)) in self.observe(pos, &mut rng).into_iter().enumerate() {
                features[[i, j]] = rssi;
                valid[[i, j]] = ok;
            }
            let (x, y) = self.label(pos);
            labels[[i, 0]] = x;
            labels[[i, 1]] = y;
        }
        let ids = (1..=f).map(|j| format!("WAP{j:03}")).collect();
        Ok(FingerprintDataset::new(features, valid, labels, cfg.env, ids)?
            .with_synthetic_seed(Some(cfg.seed)))
    }
}

/// Deterministic synthetic fingerprints from a log-distance path-loss model.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<FingerprintDataset> {
    SyntheticScene::new(config.clone())?.generate()
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction: 0.15,
            test_fraction: 0.15,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!("split fractions must lie in (0, 1): {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` rows: each split gets `floor(fraction * n)`, the
    /// largest split absorbs the remainder, and no split is left empty.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        let mut sizes = fr.map(|f| (f * n as f64 + 1e-9).floor() as usize);
        let largest = (0..3)
            .max_by(|&a, &b| fr[a].total_cmp(&fr[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        let assigned: usize = sizes.iter().sum();
        sizes[largest] += n - assigned;
        for i in 0..3 {
            if sizes[i] == 0 && sizes[largest] > 1 {
                sizes[i] = 1;
                sizes[largest] -= 1;
            }
        }
        sizes
    }
}

/// Shuffles rows with a seeded permutation and cuts them into train/val/test.
pub fn split(
    dataset: &FingerprintDataset,
    spec: &SplitSpec,
) -> Result<(FingerprintDataset, FingerprintDataset, FingerprintDataset)> {
    spec.validate()?;
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 rows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [n_train, n_val, _] = spec.sizes(n);
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((
        dataset.select_rows(train),
        dataset.select_rows(val),
        dataset.select_rows(test),
    ))
}
