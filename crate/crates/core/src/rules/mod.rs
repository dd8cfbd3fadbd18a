//! The five training conditions and the shared epoch loop.
//!
//! | rule   | conv layers                         | FC readout |
//! |--------|-------------------------------------|------------|
//! | random | never trained                       | never trained |
//! | bp     | SGD on exact gradients              | same |
//! | fa     | SGD with fixed random error transport | same |
//! | pc     | prediction-error learning after inference | BP on settled representations |
//! | stdp   | first-spike-timing plasticity       | BP on feedforward features |

mod bp;
mod fa;
mod pc;
mod stdp;

pub use bp::bp_step;
pub use fa::{fa_step, FeedbackWeights};
pub use pc::{pc_energy, pc_infer, pc_infer_and_learn, PcState, PcStepReport};
pub use stdp::{first_spike_times, stdp_kernel, stdp_step, stdp_weight_update, NO_SPIKE};

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LabeledImageSet;
use crate::network::{evaluate_accuracy, init_he_normal, Architecture, NetworkState};
use crate::rng;
use crate::tensor::softmax_xent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Random,
    Bp,
    Fa,
    Pc,
    Stdp,
}

impl Rule {
    /// Canonical order used for sorting and report rows.
    pub const ALL: [Rule; 5] = [Rule::Random, Rule::Bp, Rule::Fa, Rule::Pc, Rule::Stdp];

    pub fn tag(self) -> &'static str {
        match self {
            Rule::Random => "random",
            Rule::Bp => "bp",
            Rule::Fa => "fa",
            Rule::Pc => "pc",
            Rule::Stdp => "stdp",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown rule '{s}' (expected random, bp, fa, pc or stdp)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcParams {
    pub t_inf: usize,
    /// Inference rate for representation updates.
    pub alpha: f64,
    /// Weight rate for conv and prediction weights.
    pub eta_w: f64,
}

impl Default for PcParams {
    fn default() -> Self {
        PcParams {
            t_inf: 10,
            alpha: 0.02,
            eta_w: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StdpParams {
    pub timesteps: usize,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub lr: f64,
    pub timestep_ms: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        StdpParams {
            timesteps: 10,
            tau_plus_ms: 20.0,
            tau_minus_ms: 20.0,
            a_plus: 0.003,
            a_minus: 0.003,
            lr: 5e-4,
            timestep_ms: 2.0,
        }
    }
}

/// Which condition to run, with the hyperparameters only that condition uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRule {
    Random,
    Bp,
    Fa,
    Pc(PcParams),
    Stdp(StdpParams),
}

impl LearningRule {
    pub fn from_tag(rule: Rule, pc: PcParams, stdp: StdpParams) -> Self {
        match rule {
            Rule::Random => LearningRule::Random,
            Rule::Bp => LearningRule::Bp,
            Rule::Fa => LearningRule::Fa,
            Rule::Pc => LearningRule::Pc(pc),
            Rule::Stdp => LearningRule::Stdp(stdp),
        }
    }

    pub fn tag(&self) -> Rule {
        match self {
            LearningRule::Random => Rule::Random,
            LearningRule::Bp => Rule::Bp,
            LearningRule::Fa => Rule::Fa,
            LearningRule::Pc(_) => Rule::Pc,
            LearningRule::Stdp(_) => Rule::Stdp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRuleConfig {
    pub rule: LearningRule,
    pub epochs: usize,
    pub batch_size: usize,
    /// SGD rate for BP, FA and every BP-trained readout.
    pub learning_rate: f64,
}

impl LearningRuleConfig {
    pub fn new(rule: LearningRule) -> Self {
        LearningRuleConfig {
            rule,
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        match self.rule {
            LearningRule::Pc(p) => {
                if p.t_inf < 1 || !(p.alpha > 0.0) || !(p.eta_w > 0.0) {
                    return bad("pc needs t_inf >= 1, alpha > 0, eta_w > 0");
                }
            }
            LearningRule::Stdp(s) => {
                if s.timesteps < 1
                    || !(s.tau_plus_ms > 0.0)
                    || !(s.tau_minus_ms > 0.0)
                    || !(s.a_plus > 0.0)
                    || !(s.a_minus > 0.0)
                    || !(s.lr > 0.0)
                    || !(s.timestep_ms > 0.0)
                {
                    return bad("stdp needs timesteps >= 1 and all rates and time constants > 0");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// NaN when no test set was supplied.
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub epochs: Vec<EpochMetrics>,
}

/// Per-batch result shared by every rule step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

pub(crate) fn count_correct(logits: &crate::Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| crate::network::argmax(&logits.data()[i * k..(i + 1) * k]) == l)
        .count()
}

fn eval_loss(state: &NetworkState, set: &LabeledImageSet) -> Result<(f64, f64)> {
    let feats = crate::network::extract_features(state, &set.images, crate::network::Tap::Fc2)?;
    let (loss, _) = softmax_xent(&feats.matrix, &set.labels)?;
    Ok((loss, count_correct(&feats.matrix, &set.labels) as f64 / set.len() as f64))
}

/// Train one condition from He initialization with `seed`.
///
/// Data order, feedback matrices, prediction weights and spike sampling each
/// draw from their own seed-derived stream.
pub fn train(
    cfg: &LearningRuleConfig,
    arch: &Architecture,
    train_set: &LabeledImageSet,
    test_set: Option<&LabeledImageSet>,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut state = init_he_normal(arch, seed)?;
    let test_acc = |s: &NetworkState| -> Result<f64> {
        match test_set {
            Some(t) if !t.is_empty() => evaluate_accuracy(s, &t.images, &t.labels),
            _ => Ok(f64::NAN),
        }
    };

    if cfg.rule == LearningRule::Random {
        let (loss, acc) = eval_loss(&state, train_set)?;
        let tacc = test_acc(&state)?;
        let epochs = (1..=cfg.epochs)
            .map(|epoch| EpochMetrics {
                epoch,
                loss,
                train_acc: acc,
                test_acc: tacc,
            })
            .collect();
        return Ok(TrainOutcome { state, epochs });
    }

    let feedback = match cfg.rule {
        LearningRule::Fa => Some(FeedbackWeights::random(arch, seed)?),
        _ => None,
    };
    let mut pc_state = match cfg.rule {
        LearningRule::Pc(_) => Some(PcState::new(arch, seed)),
        _ => None,
    };
    let mut spike_rng = rng::stream(seed, "spikes");

    let n = train_set.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(seed, "data-order", epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let images = train_set.images.gather_outer(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let step = match cfg.rule {
                LearningRule::Bp => bp_step(&mut state, &images, &labels, cfg.learning_rate)?,
                LearningRule::Fa => fa_step(
                    &mut state,
                    feedback.as_ref().expect("fa feedback"),
                    &images,
                    &labels,
                    cfg.learning_rate,
                )?,
                LearningRule::Pc(p) => {
                    let report = pc_infer_and_learn(
                        &mut state,
                        pc_state.as_mut().expect("pc state"),
                        &images,
                        &labels,
                        &p,
                        cfg.learning_rate,
                    )?;
                    report.step
                }
                LearningRule::Stdp(p) => {
                    stdp_step(&mut state, &images, &labels, &p, cfg.learning_rate, &mut spike_rng)?
                }
                LearningRule::Random => unreachable!("handled above"),
            };
            if !step.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} training diverged at epoch {epoch} (loss {})",
                    cfg.rule.tag(),
                    step.loss
                )));
            }
            loss_sum += step.loss * chunk.len() as f64;
            correct += step.correct;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc: test_acc(&state)?,
        };
        log::info!(
            "{} seed {seed} epoch {epoch}: loss {:.4} train_acc {:.4} test_acc {:.4}",
            cfg.rule.tag(),
            m.loss,
            m.train_acc,
            m.test_acc
        );
        history.push(m);
    }
    Ok(TrainOutcome { state, epochs: history })
}

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,test_acc,rule,seed";

/// Append per-epoch rows to a metrics CSV, writing the header if the file is new.
pub fn append_metrics_csv(path: &Path, rule: Rule, seed: u64, epochs: &[EpochMetrics]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str(METRICS_HEADER);
        out.push('\n');
    }
    for m in epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.loss, m.train_acc, m.test_acc, rule, seed
        ));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
