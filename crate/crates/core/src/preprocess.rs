//! Fingerprint preprocessing: sparse-transmitter dropping, missing-value
//! replacement, the MinMax RSSI mapping into `[a, b]` with `0` reserved for
//! "not received", and coordinate scaling to the unit square.
//!
//! Statistics are always fit on the training split ([`fit_normalization`]) and
//! then applied unchanged to validation/test data.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Environment, FingerprintDataset, RSSI_CEIL_DBM, RSSI_FLOOR_DBM};
use crate::error::{Error, Result};

pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.98;
pub const DEFAULT_REPLACEMENT_DBM: f64 = -128.0;
pub const DEFAULT_LOWER: f64 = 0.1;
pub const DEFAULT_UPPER: f64 = 1.0;

/// Removes transmitters whose missing fraction strictly exceeds `missing_threshold`.
/// Returns the reduced dataset and the kept ids in their original order.
pub fn drop_sparse_features(
    dataset: &FingerprintDataset,
    missing_threshold: f64,
) -> Result<(FingerprintDataset, Vec<String>)> {
    if !(missing_threshold > 0.0 && missing_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "missing threshold must be in (0, 1], got {missing_threshold}"
        )));
    }
    let keep: Vec<usize> = dataset
        .missing_fractions()
        .iter()
        .enumerate()
        .filter(|(_, frac)| **frac <= missing_threshold)
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyFeatures {
            threshold: missing_threshold,
        });
    }
    let reduced = dataset.select_columns(&keep);
    let ids = reduced.feature_ids().to_vec();
    Ok((reduced, ids))
}

/// Writes `replacement` into every missing cell. The validity mask is kept so
/// normalization can still map those cells to 0.
pub fn replace_missing(dataset: &FingerprintDataset, replacement: f64) -> Result<FingerprintDataset> {
    if !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&replacement) {
        return Err(Error::Config(format!(
            "replacement {replacement} dBm outside [{RSSI_FLOOR_DBM}, {RSSI_CEIL_DBM}]"
        )));
    }
    let mut features = dataset.features().clone();
    ndarray::Zip::from(&mut features)
        .and(dataset.valid_mask())
        .for_each(|v, ok| {
            if !*ok {
                *v = replacement;
            }
        });
    Ok(dataset.clone().with_features(features))
}

/// Fitted bounds for RSSI and coordinate scaling. Serialized as the
/// `*.norm.json` sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub a: f64,
    pub b: f64,
    pub rssi_min: f64,
    pub rssi_max: f64,
    pub coord_min: [f64; 2],
    pub coord_max: [f64; 2],
    pub fit_seed: u64,
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.rssi_min, self.rssi_max];
        if all.iter().chain(&self.coord_min).chain(&self.coord_max).any(|v| !v.is_finite()) {
            return Err(Error::Config("normalization parameters must be finite".into()));
        }
        if self.a >= self.b {
            return Err(Error::Config(format!("need a < b, got a={} b={}", self.a, self.b)));
        }
        if self.rssi_min >= self.rssi_max {
            return Err(Error::Config(format!(
                "need rssi_min < rssi_max, got [{}, {}]",
                self.rssi_min, self.rssi_max
            )));
        }
        for axis in 0..2 {
            if self.coord_min[axis] >= self.coord_max[axis] {
                return Err(Error::Config(format!(
                    "degenerate coordinate axis {axis}: min {} max {}",
                    self.coord_min[axis], self.coord_max[axis]
                )));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }
}

/// Fits RSSI bounds over valid cells and per-axis coordinate bounds.
pub fn fit_normalization(train: &FingerprintDataset, a: f64, b: f64) -> Result<NormalizationParams> {
    if train.is_empty() {
        return Err(Error::Fit("training split is empty".into()));
    }
    let mut rssi_min = f64::INFINITY;
    let mut rssi_max = f64::NEG_INFINITY;
    ndarray::Zip::from(train.features())
        .and(train.valid_mask())
        .for_each(|v, ok| {
            if *ok {
                rssi_min = rssi_min.min(*v);
                rssi_max = rssi_max.max(*v);
            }
        });
    if !rssi_min.is_finite() {
        return Err(Error::Fit("no valid RSSI cell in the training split".into()));
    }
    let labels = train.labels();
    let col_min = |c: usize| labels.column(c).iter().copied().fold(f64::INFINITY, f64::min);
    let col_max = |c: usize| labels.column(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = NormalizationParams {
        a,
        b,
        rssi_min,
        rssi_max,
        coord_min: [col_min(0), col_min(1)],
        coord_max: [col_max(0), col_max(1)],
        fit_seed: 0,
    };
    params.validate().map_err(|e| Error::Fit(e.to_string()))?;
    Ok(params)
}

/// Maps one RSSI reading into `[a, b]`; missing readings map to exactly 0.
/// Out-of-range valid values are clamped to the fitted bounds first.
pub fn normalize_rssi(value: f64, valid: bool, params: &NormalizationParams) -> f64 {
    if !valid {
        return 0.0;
    }
    let v = value.clamp(params.rssi_min, params.rssi_max);
    params.a + (v - params.rssi_min) / (params.rssi_max - params.rssi_min) * (params.b - params.a)
}

/// Model input matrix for a dataset.
pub fn normalize_features(dataset: &FingerprintDataset, params: &NormalizationParams) -> Array2<f64> {
    let mut out = Array2::zeros(dataset.features().dim());
    ndarray::Zip::from(&mut out)
        .and(dataset.features())
        .and(dataset.valid_mask())
        .for_each(|o, v, ok| *o = normalize_rssi(*v, *ok, params));
    out
}

fn check_coords(labels: &ArrayView2<f64>, params: &NormalizationParams) -> Result<()> {
    if labels.ncols() != 2 {
        return Err(Error::Shape(format!("coordinates must be N x 2, got {:?}", labels.dim())));
    }
    params.validate()
}

pub fn normalize_coords(labels: ArrayView2<f64>, params: &NormalizationParams) -> Result<Array2<f64>> {
    check_coords(&labels, params)?;
    let mut out = labels.to_owned();
    for (axis, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (lo, hi) = (params.coord_min[axis], params.coord_max[axis]);
        col.mapv_inplace(|v| (v - lo) / (hi - lo));
    }
    Ok(out)
}

pub fn denormalize_coords(normalized: ArrayView2<f64>, params: &NormalizationParams) -> Result<Array2<f64>> {
    check_coords(&normalized, params)?;
    let mut out = normalized.to_owned();
    for (axis, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (lo, hi) = (params.coord_min[axis], params.coord_max[axis]);
        col.mapv_inplace(|v| lo + v * (hi - lo));
    }
    Ok(out)
}

/// Model-ready samples: normalized inputs, normalized coordinate targets and a
/// per-sample environment tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub env: Vec<Environment>,
}

impl PreparedData {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, env: Vec<Environment>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() || env.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "inputs {:?}, targets {:?}, {} env tags",
                inputs.dim(),
                targets.dim(),
                env.len()
            )));
        }
        Ok(Self { inputs, targets, env })
    }

    pub fn from_dataset(dataset: &FingerprintDataset, params: &NormalizationParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            inputs: normalize_features(dataset, params),
            targets: normalize_coords(dataset.labels().view(), params)?,
            env: vec![dataset.environment(); dataset.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            env: rows.iter().map(|&r| self.env[r]).collect(),
        }
    }

    /// Right-pads inputs with zeros (the "not received" code) up to `width`.
    pub fn pad_to(&self, width: usize) -> Result<Self> {
        let w = self.width();
        if width < w {
            return Err(Error::Shape(format!("cannot pad width {w} down to {width}")));
        }
        let mut inputs = Array2::zeros((self.len(), width));
        inputs.slice_mut(ndarray::s![.., ..w]).assign(&self.inputs);
        Ok(Self {
            inputs,
            targets: self.targets.clone(),
            env: self.env.clone(),
        })
    }

    /// Environment labels as an N x 1 column (indoor 0, outdoor 1).
    pub fn env_labels(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 1), |(i, _)| self.env[i].label())
    }
}

/// Equal-count indoor/outdoor mix for the unified model. The smaller set is
/// used whole, the larger is subsampled without replacement, outdoor inputs are
/// zero-padded to the indoor width, and rows are shuffled together.
pub fn balance_concat(indoor: &PreparedData, outdoor: &PreparedData, seed: u64) -> Result<PreparedData> {
    if indoor.is_empty() || outdoor.is_empty() {
        return Err(Error::Empty("balance_concat needs both environments"));
    }
    let width = indoor.width();
    let outdoor = if outdoor.width() < width {
        outdoor.pad_to(width)?
    } else {
        outdoor.clone()
    };
    if outdoor.width() != width {
        return Err(Error::Shape(format!(
            "outdoor width {} exceeds indoor width {width}",
            outdoor.width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = indoor.len().min(outdoor.len());
    let pick = |d: &PreparedData, rng: &mut ChaCha8Rng| {
        let mut rows = index::sample(rng, d.len(), n).into_vec();
        rows.sort_unstable();
        d.select_rows(&rows)
    };
    let a = pick(indoor, &mut rng);
    let b = pick(&outdoor, &mut rng);

    let mut order: Vec<usize> = (0..2 * n).collect();
    order.shuffle(&mut rng);
    let inputs = ndarray::concatenate(Axis(0), &[a.inputs.view(), b.inputs.view()])
        .expect("equal widths");
    let targets = ndarray::concatenate(Axis(0), &[a.targets.view(), b.targets.view()])
        .expect("two coordinate columns");
    let env: Vec<Environment> = a.env.into_iter().chain(b.env).collect();
    Ok(PreparedData { inputs, targets, env }.select_rows(&order))
}

/// Knobs for the full preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// `None` keeps every transmitter.
    pub missing_threshold: Option<f64>,
    pub replacement_dbm: f64,
    pub a: f64,
    pub b: f64,
}

impl PreprocessConfig {
    pub fn for_environment(env: Environment) -> Self {
        Self {
            missing_threshold: match env {
                Environment::Indoor => Some(DEFAULT_MISSING_THRESHOLD),
                Environment::Outdoor => None,
            },
            replacement_dbm: DEFAULT_REPLACEMENT_DBM,
            a: DEFAULT_LOWER,
            b: DEFAULT_UPPER,
        }
    }
}

/// Train/val/test after preprocessing, plus what is needed to reproduce it.
#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub train: PreparedData,
    pub val: PreparedData,
    pub test: PreparedData,
    pub params: NormalizationParams,
    pub kept_feature_ids: Vec<String>,
}

/// Feature selection on the training split only, then projection, missing
/// replacement and normalization of all three splits with training statistics.
pub fn reduce_splits(
    train: &FingerprintDataset,
    others: &[&FingerprintDataset],
    config: &PreprocessConfig,
) -> Result<(FingerprintDataset, Vec<FingerprintDataset>, Vec<String>)> {
    let (train, kept) = match config.missing_threshold {
        Some(t) => drop_sparse_features(train, t)?,
        None => (train.clone(), train.feature_ids().to_vec()),
    };
    let others = others
        .iter()
        .map(|d| d.select_features(&kept))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others, kept))
}

pub fn prepare_splits(
    train: &FingerprintDataset,
    val: &FingerprintDataset,
    test: &FingerprintDataset,
    config: &PreprocessConfig,
) -> Result<PreparedSplits> {
    let (train, others, kept) = reduce_splits(train, &[val, test], config)?;
    let train = replace_missing(&train, config.replacement_dbm)?;
    let params = fit_normalization(&train, config.a, config.b)?;
    let prep = |d: &FingerprintDataset| -> Result<PreparedData> {
        PreparedData::from_dataset(&replace_missing(d, config.replacement_dbm)?, &params)
    };
    Ok(PreparedSplits {
        train: prep(&train)?,
        val: prep(&others[0])?,
        test: prep(&others[1])?,
        params,
        kept_feature_ids: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig, NOT_RECEIVED};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(features: Array2<f64>, valid: Array2<bool>) -> FingerprintDataset {
        let n = features.nrows();
        let ids = (0..features.ncols()).map(|j| format!("WAP{:03}", j + 1)).collect();
        let labels = Array2::from_shape_fn((n, 2), |(i, c)| (i * 10 + c) as f64);
        FingerprintDataset::new(features, valid, labels, Environment::Indoor, ids).unwrap()
    }

    fn params() -> NormalizationParams {
        NormalizationParams {
            a: 0.1,
            b: 1.0,
            rssi_min: -120.0,
            rssi_max: -60.0,
            coord_min: [0.0, 10.0],
            coord_max: [100.0, 50.0],
            fit_seed: 0,
        }
    }

    #[test]
    fn drop_sparse_hand_counted() {
        // missing fractions per column: 1.0, 0.5, 0.0
        let features = Array2::from_elem((4, 3), -70.0);
        let valid = array![
            [false, false, true],
            [false, true, true],
            [false, false, true],
            [false, true, true]
        ];
        let (reduced, kept) = drop_sparse_features(&toy(features, valid), 0.98).unwrap();
        assert_eq!(kept, vec!["WAP002".to_string(), "WAP003".to_string()]);
        assert_eq!(reduced.n_features(), 2);
        assert_eq!(reduced.feature_ids(), &kept[..]);
    }

    #[test]
    fn drop_sparse_identity_without_missing() {
        let ds = toy(Array2::from_elem((5, 4), -50.0), Array2::from_elem((5, 4), true));
        let (reduced, kept) = drop_sparse_features(&ds, 0.1).unwrap();
        assert_eq!(reduced, ds);
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn drop_sparse_boundary_is_strict() {
        // exactly half missing survives a 0.5 threshold
        let valid = array![[true, false], [false, false]];
        let (_, kept) = drop_sparse_features(&toy(Array2::from_elem((2, 2), -60.0), valid), 0.5).unwrap();
        assert_eq!(kept, vec!["WAP001".to_string()]);
    }

    #[test]
    fn drop_sparse_all_dropped() {
        let ds = toy(Array2::from_elem((2, 2), -60.0), Array2::from_elem((2, 2), false));
        assert!(matches!(drop_sparse_features(&ds, 0.98), Err(Error::EmptyFeatures { .. })));
        assert!(drop_sparse_features(&ds, 0.0).is_err());
    }

    #[test]
    fn replace_missing_keeps_mask() {
        let valid = array![[true, false], [false, false]];
        let ds = toy(array![[-60.0, 0.0], [0.0, 0.0]], valid.clone());
        assert_eq!(ds.features()[[0, 1]], NOT_RECEIVED);
        let out = replace_missing(&ds, -128.0).unwrap();
        assert_eq!(out.features(), &array![[-60.0, -128.0], [-128.0, -128.0]]);
        assert_eq!(out.valid_mask(), &valid);
        assert!(replace_missing(&ds, 10.0).is_err());

        let full = toy(Array2::from_elem((2, 2), -40.0), Array2::from_elem((2, 2), true));
        assert_eq!(replace_missing(&full, -128.0).unwrap(), full);
    }

    #[test]
    fn normalize_rssi_examples() {
        let p = params();
        assert_eq!(normalize_rssi(-90.0, false, &p), 0.0);
        assert_eq!(normalize_rssi(-120.0, true, &p), 0.1);
        assert_eq!(normalize_rssi(-60.0, true, &p), 1.0);
        assert!((normalize_rssi(-90.0, true, &p) - 0.55).abs() < 1e-12);
        // clamped outside the fitted range
        assert_eq!(normalize_rssi(-130.0, true, &p), 0.1);
        assert_eq!(normalize_rssi(-10.0, true, &p), 1.0);
    }

    #[test]
    fn fit_uses_valid_cells_only() {
        let valid = array![[true, false], [true, true]];
        let ds = toy(array![[-100.0, 0.0], [-70.0, -50.0]], valid);
        let ds = replace_missing(&ds, -128.0).unwrap();
        let p = fit_normalization(&ds, 0.1, 1.0).unwrap();
        assert_eq!((p.rssi_min, p.rssi_max), (-100.0, -50.0));
        assert_eq!(p.coord_min, [0.0, 1.0]);
        assert_eq!(p.coord_max, [10.0, 11.0]);
        assert_eq!(fit_normalization(&ds, 0.1, 1.0).unwrap(), p);
    }

    #[test]
    fn fit_errors() {
        let none = toy(Array2::from_elem((2, 2), 0.0), Array2::from_elem((2, 2), false));
        assert!(matches!(fit_normalization(&none, 0.1, 1.0), Err(Error::Fit(_))));
        let one_row = toy(array![[-60.0, -70.0]], array![[true, true]]);
        // a single row has degenerate coordinate bounds
        assert!(fit_normalization(&one_row, 0.1, 1.0).is_err());
    }

    #[test]
    fn coords_round_trip_and_extremes() {
        let p = params();
        let labels = array![[0.0, 10.0], [100.0, 50.0], [50.0, 30.0]];
        let n = normalize_coords(labels.view(), &p).unwrap();
        assert_eq!(n, array![[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((100, 2), |_| rng.random_range(-500.0..500.0));
        let back = denormalize_coords(normalize_coords(pts.view(), &p).unwrap().view(), &p).unwrap();
        let err = (&back - &pts).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9);

        let mut bad = p;
        bad.coord_max[1] = bad.coord_min[1];
        assert!(matches!(normalize_coords(labels.view(), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn norm_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.norm.json");
        let mut p = params();
        p.fit_seed = 42;
        p.save_json(&path).unwrap();
        assert_eq!(NormalizationParams::load_json(&path).unwrap(), p);
        let text = fs::read_to_string(&path).unwrap();
        for key in ["a", "b", "rssi_min", "rssi_max", "coord_min", "coord_max", "fit_seed"] {
            assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
        }
    }

    fn prepared(n: usize, width: usize, env: Environment) -> PreparedData {
        PreparedData::new(
            Array2::from_elem((n, width), 0.5),
            Array2::from_elem((n, 2), 0.25),
            vec![env; n],
        )
        .unwrap()
    }

    #[test]
    fn balance_concat_equal_counts() {
        let indoor = prepared(1000, 20, Environment::Indoor);
        let outdoor = prepared(5000, 8, Environment::Outdoor);
        let mixed = balance_concat(&indoor, &outdoor, 1).unwrap();
        assert_eq!(mixed.len(), 2000);
        assert_eq!(mixed.width(), 20);
        let outdoor_rows = mixed.env.iter().filter(|e| **e == Environment::Outdoor).count();
        assert_eq!(outdoor_rows, 1000);
        // padded columns of outdoor rows carry the missing code
        for (i, env) in mixed.env.iter().enumerate() {
            if *env == Environment::Outdoor {
                assert!(mixed.inputs.row(i).iter().skip(8).all(|v| *v == 0.0));
            }
        }
        assert_eq!(balance_concat(&indoor, &outdoor, 1).unwrap(), mixed);
        assert_ne!(balance_concat(&indoor, &outdoor, 2).unwrap().env, mixed.env);
    }

    #[test]
    fn balance_concat_rejects_wider_outdoor() {
        let indoor = prepared(10, 4, Environment::Indoor);
        let outdoor = prepared(10, 8, Environment::Outdoor);
        assert!(matches!(balance_concat(&indoor, &outdoor, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn prepare_splits_projects_training_selection() {
        let mut cfg = SyntheticConfig::new(Environment::Indoor, 300, 12, 5);
        cfg.missing_prob = 0.3;
        let ds = generate_synthetic(&cfg).unwrap();
        let (tr, va, te) = crate::dataset::split(&ds, &Default::default()).unwrap();
        let pc = PreprocessConfig {
            missing_threshold: Some(0.98),
            ..PreprocessConfig::for_environment(Environment::Indoor)
        };
        let out = prepare_splits(&tr, &va, &te, &pc).unwrap();
        assert_eq!(out.train.width(), out.val.width());
        assert_eq!(out.test.width(), out.kept_feature_ids.len());
        let min_valid = out
            .train
            .inputs
            .iter()
            .filter(|v| **v != 0.0)
            .fold(f64::INFINITY, |m, v| m.min(*v));
        assert!(min_valid >= pc.a && pc.a > 0.0);
    }

    proptest! {
        #[test]
        fn drop_sparse_idempotent(seed in 0u64..500, threshold in 0.05..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let valid = Array2::from_shape_fn((20, 6), |(_, j)| rng.random::<f64>() > j as f64 / 6.0);
            let ds = toy(Array2::from_elem((20, 6), -70.0), valid);
            if let Ok((once, _)) = drop_sparse_features(&ds, threshold) {
                let (twice, _) = drop_sparse_features(&once, threshold).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn normalization_bounded_and_monotone(v1 in -120.0..-60.0f64, v2 in -120.0..-60.0f64) {
            let p = params();
            let (n1, n2) = (normalize_rssi(v1, true, &p), normalize_rssi(v2, true, &p));
            prop_assert!(n1 >= p.a && n1 <= p.b);
            if v1 < v2 {
                prop_assert!(n1 < n2);
            }
        }
    }
}
