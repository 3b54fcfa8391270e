//! Minibatch training loop shared by the forecasters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::completion::TrainLog;
use crate::numerics::layers::ModelRng;
use crate::numerics::{decayed_lr, Adam, AdamConfig, Graph, NodeId, NumericsError, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr`.
    pub lr_final_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_final_fraction: 0.05,
            steps: 1500,
            batch_size: 32,
        }
    }
}

impl Schedule {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Runs `schedule.steps` Adam updates. Each step draws a batch of example
/// indices (with replacement) and asks `loss` for a scalar node.
pub fn fit<E>(
    params: &mut ParamStore,
    schedule: &Schedule,
    examples: usize,
    rng: &mut ModelRng,
    mut loss: impl for<'g> FnMut(&mut Graph<'g>, &[usize]) -> Result<NodeId, E>,
) -> Result<TrainLog, E>
where
    E: From<NumericsError>,
{
    let mut adam = Adam::new(AdamConfig::with_lr(schedule.lr), params);
    let mut log = TrainLog::default();
    let mut acc = (0.0, 0);
    for step in 0..schedule.steps {
        adam.config.lr = decayed_lr(schedule.lr, schedule.lr_final_fraction, step, schedule.steps);
        let batch: Vec<usize> = (0..schedule.batch_size.min(examples.max(1)))
            .map(|_| rng.random_range(0..examples))
            .collect();
        let grads = {
            let mut g = Graph::new(params);
            let l = loss(&mut g, &batch)?;
            log.record(&mut acc, g.value(l).data()[0]);
            g.backward(l)?
        };
        adam.step(params, &grads)?;
    }
    log.finish(acc);
    Ok(log)
}
