//! End-to-end workflows shared by the commands and the acceptance suite:
//! split, preprocess, build, train, evaluate.

use geoloc::dataset::{split, Environment, FingerprintDataset};
use geoloc::metrics::{env_accuracy, rmse, DistanceMetric, EvalReport};
use geoloc::models::{build_localizer, build_umlp, HeadKind, InputProfile, LocalizerModel, UmlpModel};
use geoloc::nn::Network;
use geoloc::preprocess::{balance_concat, denormalize_coords, prepare_splits, replace_missing, PreparedData, PreparedSplits};
use geoloc::training::{train_localizer, train_umlp, train_with_transfer, LearningCurve};
use geoloc::{Error, Result};

use crate::config::ExperimentConfig;

/// Distance metric that matches an environment's label units.
pub fn default_metric(env: Environment) -> DistanceMetric {
    match env {
        Environment::Indoor => DistanceMetric::Euclidean,
        Environment::Outdoor => DistanceMetric::Haversine,
    }
}

/// One environment's data after splitting and preprocessing.
#[derive(Debug, Clone)]
pub struct EnvData {
    pub env: Environment,
    pub splits: PreparedSplits,
    pub profile: InputProfile,
    /// Raw test rows, kept for metric evaluation in original units.
    pub test_raw: FingerprintDataset,
}

pub fn prepare_env(dataset: &FingerprintDataset, cfg: &ExperimentConfig, seed: u64) -> Result<EnvData> {
    let env = dataset.environment();
    let (train, val, test) = split(dataset, &cfg.split_spec(seed)?)?;
    let pre = cfg.preprocess_config(env);
    let splits = prepare_splits(&train, &val, &test, &pre)?;
    let profile = InputProfile {
        env,
        feature_ids: splits.kept_feature_ids.clone(),
        norm: splits.params.clone(),
        replacement_dbm: pre.replacement_dbm,
    };
    Ok(EnvData {
        env,
        splits,
        profile,
        test_raw: test,
    })
}

/// Projects raw fingerprints through a stored preprocessing profile.
pub fn apply_profile(dataset: &FingerprintDataset, profile: &InputProfile) -> Result<PreparedData> {
    let reduced = dataset.select_features(&profile.feature_ids)?;
    PreparedData::from_dataset(&replace_missing(&reduced, profile.replacement_dbm)?, &profile.norm)
}

pub fn evaluate_localizer(model: &LocalizerModel, data: &FingerprintDataset, metric: DistanceMetric) -> Result<EvalReport> {
    let profile = model
        .profile
        .as_ref()
        .ok_or_else(|| Error::Structure("model carries no preprocessing profile".into()))?;
    let prepared = apply_profile(data, profile)?;
    let pred = model.predict(prepared.inputs.view())?;
    let rmse_norm = rmse(pred.view(), prepared.targets.view())?;
    let pred = denormalize_coords(pred.view(), &profile.norm)?;
    EvalReport::from_predictions(metric, pred.view(), data.labels().view(), rmse_norm, None)
}

pub fn evaluate_umlp(model: &UmlpModel, data: &FingerprintDataset, metric: DistanceMetric) -> Result<EvalReport> {
    let env = data.environment();
    let profile = model
        .profiles
        .iter()
        .find(|p| p.env == env)
        .ok_or_else(|| Error::Structure(format!("model has no {env} preprocessing profile")))?;
    let prepared = apply_profile(data, profile)?.pad_to(model.input_dim())?;
    let (pred, logits) = model.predict(prepared.inputs.view())?;
    let rmse_norm = rmse(pred.view(), prepared.targets.view())?;
    let labels: Vec<f64> = prepared.env.iter().map(|e| e.label()).collect();
    let acc = env_accuracy(logits.as_slice().expect("contiguous"), &labels)?;
    let pred = denormalize_coords(pred.view(), &profile.norm)?;
    EvalReport::from_predictions(metric, pred.view(), data.labels().view(), rmse_norm, Some(acc))
}

#[derive(Debug, Clone)]
pub struct LocalizerRun {
    pub model: LocalizerModel,
    pub curve: LearningCurve,
    pub test_report: EvalReport,
}

/// Trains an environment-specific localizer from scratch.
pub fn run_single(dataset: &FingerprintDataset, cfg: &ExperimentConfig, seed: u64) -> Result<LocalizerRun> {
    let data = prepare_env(dataset, cfg, seed)?;
    let fresh = fresh_localizer(&data, cfg, seed)?;
    let tc = cfg.train_config(Some(data.env), seed);
    let (model, curve) = train_localizer(fresh, &data.splits.train, &data.splits.val, &tc)?;
    finish(model, curve, &data)
}

fn fresh_localizer(data: &EnvData, cfg: &ExperimentConfig, seed: u64) -> Result<LocalizerModel> {
    let mut model = build_localizer(
        data.splits.train.width(),
        HeadKind::for_environment(data.env),
        &cfg.model,
        seed,
    )?;
    model.profile = Some(data.profile.clone());
    Ok(model)
}

fn finish(model: LocalizerModel, curve: LearningCurve, data: &EnvData) -> Result<LocalizerRun> {
    let test_report = evaluate_localizer(&model, &data.test_raw, default_metric(data.env))?;
    Ok(LocalizerRun {
        model,
        curve,
        test_report,
    })
}

#[derive(Debug, Clone)]
pub struct TransferRun {
    pub transfer: LocalizerRun,
    pub scratch: Option<LocalizerRun>,
}

/// Fine-tunes a target localizer initialized with `source_base`, optionally
/// alongside a scratch run from the same fresh initialization and seed.
pub fn run_transfer(
    source_base: &Network,
    target: &FingerprintDataset,
    cfg: &ExperimentConfig,
    seed: u64,
    compare_scratch: bool,
) -> Result<TransferRun> {
    let data = prepare_env(target, cfg, seed)?;
    let fresh = fresh_localizer(&data, cfg, seed)?;
    let tc = cfg.train_config(Some(data.env), seed);
    let scratch = if compare_scratch {
        let (model, curve) = train_localizer(fresh.clone(), &data.splits.train, &data.splits.val, &tc)?;
        Some(finish(model, curve, &data)?)
    } else {
        None
    };
    let (model, curve) = train_with_transfer(source_base, fresh, &data.splits.train, &data.splits.val, &tc)?;
    Ok(TransferRun {
        transfer: finish(model, curve, &data)?,
        scratch,
    })
}

#[derive(Debug, Clone)]
pub struct UnifiedRun {
    pub model: UmlpModel,
    pub curve: LearningCurve,
    pub indoor_report: EvalReport,
    pub outdoor_report: EvalReport,
}

/// Trains the unified model on a balanced indoor/outdoor mix. Indoor inputs
/// must be at least as wide as outdoor ones; outdoor rows are zero-padded.
pub fn run_unified(
    indoor: &FingerprintDataset,
    outdoor: &FingerprintDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<UnifiedRun> {
    if indoor.environment() != Environment::Indoor || outdoor.environment() != Environment::Outdoor {
        return Err(Error::Validation("unified training needs one indoor and one outdoor dataset".into()));
    }
    let i = prepare_env(indoor, cfg, seed)?;
    let o = prepare_env(outdoor, cfg, seed)?;
    let train = balance_concat(&i.splits.train, &o.splits.train, seed)?;
    let val = balance_concat(&i.splits.val, &o.splits.val, seed.wrapping_add(1))?;
    let mut model = build_umlp(train.width(), &cfg.umlp, seed)?;
    model.profiles = vec![i.profile.clone(), o.profile.clone()];
    let (model, curve) = train_umlp(model, &train, &val, &cfg.train_config(None, seed))?;
    Ok(UnifiedRun {
        indoor_report: evaluate_umlp(&model, &i.test_raw, default_metric(Environment::Indoor))?,
        outdoor_report: evaluate_umlp(&model, &o.test_raw, default_metric(Environment::Outdoor))?,
        model,
        curve,
    })
}

/// First epochs at which each curve reaches `reference`'s validation RMSE
/// at `at_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConvergenceComparison {
    pub reference_epoch: usize,
    pub threshold: f64,
    pub reference_epochs_to_reach: Option<usize>,
    pub candidate_epochs_to_reach: Option<usize>,
}

impl ConvergenceComparison {
    pub fn new(reference: &LearningCurve, candidate: &LearningCurve, at_epoch: usize) -> Result<Self> {
        let threshold = reference
            .val_at(at_epoch)
            .ok_or_else(|| Error::Validation(format!("reference curve has no epoch {at_epoch}")))?;
        Ok(Self {
            reference_epoch: at_epoch,
            threshold,
            reference_epochs_to_reach: reference.epochs_to_reach(threshold),
            candidate_epochs_to_reach: candidate.epochs_to_reach(threshold),
        })
    }

    /// The candidate got there in strictly fewer epochs.
    pub fn candidate_faster(&self) -> bool {
        match (self.candidate_epochs_to_reach, self.reference_epochs_to_reach) {
            (Some(c), Some(r)) => c < r,
            _ => false,
        }
    }
}
