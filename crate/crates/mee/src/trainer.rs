//! Epoch loop with validation, checkpointing and resume.

use std::io::Write;
use std::path::{Path, PathBuf};

use mee_core::data::Pair;
use mee_core::eval::text_to_video_eval;
use mee_core::model::{MeeParams, ModelConfig};
use mee_core::train::{epoch_seed, train_epoch};
use mee_core::{init, Error as CoreError};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, TrainState};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::report::RetrievalJson;

const SPLIT_TAG: u64 = 0x5b11;

pub const LAST: &str = "last.ckpt";
pub const BEST: &str = "best.ckpt";
pub const LOG: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Holds out `floor(fraction · n)` pairs chosen by `seed` for validation.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Split {
    let n_val = (fraction * n as f64).floor() as usize;
    let mut val = index::sample(&mut init::rng(init::derive_seed(seed, SPLIT_TAG)), n, n_val).into_vec();
    val.sort_unstable();
    let mut is_val = vec![false; n];
    val.iter().for_each(|&i| is_val[i] = true);
    Split {
        train: (0..n).filter(|&i| !is_val[i]).collect(),
        val,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub loss: f64,
    pub batches: usize,
    pub images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<RetrievalJson>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MeeParams<f32>,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub out_dir: PathBuf,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, out_dir: &Path) -> Self {
        Self {
            config,
            out_dir: out_dir.to_path_buf(),
        }
    }

    /// Fresh parameters, or the contents of `resume`, checked against `model`.
    pub fn initial(&self, model: ModelConfig, resume: Option<Checkpoint>) -> Result<Checkpoint> {
        match resume {
            Some(ck) => {
                if ck.params.config() != &model {
                    return Err(Error::Config("checkpoint architecture differs from the configured model".into()));
                }
                if ck.state.seed != self.config.seed {
                    return Err(Error::Config(format!(
                        "checkpoint was trained with seed {}, config has {}",
                        ck.state.seed, self.config.seed
                    )));
                }
                Ok(ck)
            }
            None => Ok(Checkpoint {
                params: MeeParams::new(model, init::derive_seed(self.config.seed, 0))?,
                state: TrainState {
                    seed: self.config.seed,
                    ..TrainState::default()
                },
            }),
        }
    }

    /// Trains until `config.epochs` epochs are complete. `pairs` is split into
    /// training and validation parts; `images` are mixed in at rate `alpha`.
    pub fn run(
        &self,
        start: Checkpoint,
        pairs: &[Pair<f32>],
        images: &[Pair<f32>],
        log: &mut dyn Write,
    ) -> Result<TrainOutcome> {
        let cfg = self.config;
        let opts = cfg.train_options();
        let split = split_indices(pairs.len(), cfg.val_fraction, cfg.seed);
        let train: Vec<Pair<f32>> = split.train.iter().map(|&i| pairs[i].clone()).collect();
        let val: Vec<Pair<f32>> = split.val.iter().map(|&i| pairs[i].clone()).collect();
        if train.len() < 2 {
            return Err(Error::Config(format!("{} training pairs after the split, need 2", train.len())));
        }
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;

        let Checkpoint { mut params, mut state } = start;
        let mut history = Vec::new();
        while state.epoch < cfg.epochs {
            let epoch = state.epoch;
            let stats = match train_epoch(&mut params, &train, images, &opts, epoch_seed(cfg.seed, epoch)) {
                Err(CoreError::NonFiniteLoss) => return Err(Error::NonFiniteLoss { epoch }),
                other => other?,
            };
            state.epoch += 1;
            state.step += stats.batches as u64;

            let validate = val.len() >= 2 && (state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs);
            let val_report = if validate {
                let r = text_to_video_eval(&params, &val, val.len(), cfg.seed)?;
                Some(RetrievalJson::from(&r))
            } else {
                None
            };
            let improved = match (&val_report, state.best_rsum) {
                (Some(r), Some(best)) => r.rsum() > best,
                (Some(_), None) => true,
                // Without a validation set the latest model is the best one.
                (None, _) => val.len() < 2,
            };
            if improved {
                state.best_rsum = val_report.map(|r| r.rsum());
                state.best_epoch = Some(state.epoch);
                checkpoint::save(&self.out_dir.join(BEST), &params, &state)?;
            }
            checkpoint::save(&self.out_dir.join(LAST), &params, &state)?;

            let entry = EpochLog {
                epoch: state.epoch,
                loss: stats.mean_loss,
                batches: stats.batches,
                images: stats.images,
                val: val_report,
            };
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(self.out_dir.join(LOG), e))?;
            history.push(entry);
        }
        Ok(TrainOutcome {
            params,
            state,
            log: history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_seeded_partition() {
        let s = split_indices(50, 0.1, 3);
        assert_eq!(s.val.len(), 5);
        assert_eq!(s.train.len(), 45);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 0.1, 3), s);
        assert_ne!(split_indices(50, 0.1, 4).val, s.val);
        assert!(split_indices(5, 0.1, 0).val.is_empty());
    }
}
