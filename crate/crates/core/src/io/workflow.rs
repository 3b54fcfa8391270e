//! Training stages driven by an [`ExperimentConfig`], shared by the command
//! line and the test harnesses.

use crate::completion::{train_completion, CompletionModel, TrainLog};
use crate::forecast::{
    train_entangled, train_global, train_local, EntangledForecaster, GlobalForecaster, LocalForecaster, PreparedSet,
};
use crate::pose::{confidence_filter, LocomotionSequence, Pose};
use crate::synth::{generate_dataset, DatasetSpec, SceneSample};

use super::config::ExperimentConfig;
use super::IoError;

/// Independent seed per stage, so retraining one stage never shifts another.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub const STAGE_TRAIN_DATA: u64 = 1;
pub const STAGE_TEST_DATA: u64 = 2;
pub const STAGE_COMPLETION: u64 = 3;
pub const STAGE_LOCAL: u64 = 4;
pub const STAGE_GLOBAL: u64 = 5;
pub const STAGE_ENTANGLED: u64 = 6;

/// Synthetic dataset of `count` scenes with `t_f` future frames.
pub fn synth_split(cfg: &ExperimentConfig, count: usize, t_f: usize, stage: u64) -> Result<Vec<SceneSample>, IoError> {
    let mut spec = DatasetSpec::new(count, cfg.t_p, t_f, stage_seed(cfg.seed, stage));
    spec.split = cfg.data.split;
    spec.noise = cfg.data.noise.clone();
    Ok(generate_dataset(&spec)?)
}

/// Fully confident frames of the training sequences.
pub fn completion_poses(seqs: &[LocomotionSequence], alpha_c: f64) -> Vec<Pose> {
    seqs.iter().flat_map(|s| confidence_filter(&s.frames, alpha_c)).collect()
}

pub fn fit_completion(cfg: &ExperimentConfig, seqs: &[LocomotionSequence]) -> Result<(CompletionModel, TrainLog), IoError> {
    let first = seqs.first().ok_or_else(|| IoError::Config("empty training set".into()))?;
    let poses = completion_poses(seqs, cfg.alpha_c);
    let (mut m, log) = train_completion(&poses, first.frame_size, &cfg.completion, stage_seed(cfg.seed, STAGE_COMPLETION))?;
    m.alpha_c = cfg.alpha_c;
    Ok((m, log))
}

/// Training records for the stream forecasters.
pub fn prepare(cfg: &ExperimentConfig, seqs: &[LocomotionSequence], completion: Option<&CompletionModel>) -> Result<PreparedSet, IoError> {
    Ok(PreparedSet::new(seqs, completion, cfg.t_p, cfg.t_f)?)
}

pub fn fit_local(cfg: &ExperimentConfig, set: &PreparedSet) -> Result<(LocalForecaster, TrainLog), IoError> {
    let (m, _, log) = train_local(set, &cfg.local, stage_seed(cfg.seed, STAGE_LOCAL))?;
    Ok((m, log))
}

pub fn fit_global(cfg: &ExperimentConfig, set: &PreparedSet) -> Result<(GlobalForecaster, TrainLog), IoError> {
    Ok(train_global(set, &cfg.global, stage_seed(cfg.seed, STAGE_GLOBAL))?)
}

pub fn fit_entangled(cfg: &ExperimentConfig, set: &PreparedSet) -> Result<(EntangledForecaster, TrainLog), IoError> {
    Ok(train_entangled(set, &cfg.entangled, stage_seed(cfg.seed, STAGE_ENTANGLED))?)
}
