//! Experiment configuration, read from TOML with one level of sections.
//!
//! Precedence: built-in defaults, then the config file, then CLI flags.
//! Relative paths are resolved against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Roi, SynthSpec};
use crate::network::{Architecture, Tap, SUPPORTED_RESOLUTIONS};
use crate::rules::{LearningRule, LearningRuleConfig, PcParams, Rule, StdpParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CIFAR-10 binary batch files, read in this order.
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    /// 0 means all records.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Directory of `*.ppm` stimuli.
    pub stimuli: PathBuf,
    /// Directory of `<subject>_<ROI>.csv` brain RDMs.
    pub brain: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: vec![PathBuf::from("data/train.bin")],
            test: Vec::new(),
            train_limit: 8000,
            test_limit: 0,
            stimuli: PathBuf::from("data/stimuli"),
            brain: PathBuf::from("data/brain"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_widths: [usize; 3],
    pub fc_width: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::default();
        ModelConfig {
            conv_widths: a.conv_widths,
            fc_width: a.fc_width,
            num_classes: a.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub rules: Vec<Rule>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pc_t_inf: usize,
    pub pc_alpha: f64,
    pub pc_eta_w: f64,
    pub stdp_timesteps: usize,
    pub stdp_timestep_ms: f64,
    pub stdp_tau_plus_ms: f64,
    pub stdp_tau_minus_ms: f64,
    pub stdp_a_plus: f64,
    pub stdp_a_minus: f64,
    pub stdp_lr: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let (pc, stdp) = (PcParams::default(), StdpParams::default());
        let base = LearningRuleConfig::new(LearningRule::Bp);
        TrainingConfig {
            rules: Rule::ALL.to_vec(),
            seeds: (0..5).collect(),
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            pc_t_inf: pc.t_inf,
            pc_alpha: pc.alpha,
            pc_eta_w: pc.eta_w,
            stdp_timesteps: stdp.timesteps,
            stdp_timestep_ms: stdp.timestep_ms,
            stdp_tau_plus_ms: stdp.tau_plus_ms,
            stdp_tau_minus_ms: stdp.tau_minus_ms,
            stdp_a_plus: stdp.a_plus,
            stdp_a_minus: stdp.a_minus,
            stdp_lr: stdp.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub resolution: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { resolution: 224 }
    }
}

/// Which tap is compared with which region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiMap {
    #[serde(rename = "V1")]
    pub v1: Tap,
    #[serde(rename = "V2")]
    pub v2: Tap,
    #[serde(rename = "LOC")]
    pub loc: Tap,
    #[serde(rename = "IT")]
    pub it: Tap,
}

impl Default for RoiMap {
    fn default() -> Self {
        RoiMap {
            v1: Tap::Conv1,
            v2: Tap::Conv1,
            loc: Tap::Conv3,
            it: Tap::Fc1,
        }
    }
}

impl RoiMap {
    pub fn tap(&self, roi: Roi) -> Tap {
        match roi {
            Roi::V1 => self.v1,
            Roi::V2 => self.v2,
            Roi::Loc => self.loc,
            Roi::It => self.it,
        }
    }

    pub fn pairs(&self) -> [(Roi, Tap); 4] {
        Roi::ALL.map(|r| (r, self.tap(r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub n_boot: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub ci_level: f64,
    pub noise_ceiling_splits: usize,
    pub partial_roi: Roi,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            n_boot: 10_000,
            n_perm: 1000,
            alpha: 0.05,
            ci_level: 0.95,
            noise_ceiling_splits: 100,
            partial_roi: Roi::V1,
            seed: 0,
        }
    }
}

/// Parameters for the `synth` verb. Resolution comes from `[extraction]`
/// and the reference architecture from `[model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub num_stimuli: usize,
    pub num_subjects: usize,
    pub noise: f64,
    pub noise_growth: f64,
    pub reference_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_train: 1000,
            num_test: 200,
            num_classes: 10,
            num_stimuli: 200,
            num_subjects: 3,
            noise: 1.0,
            noise_growth: 0.0,
            reference_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write every seed-averaged model RDM as CSV.
    pub write_rdms: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("run"),
            write_rdms: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub extraction: ExtractionConfig,
    pub roi: RoiMap,
    pub stats: StatsConfig,
    pub synth: SynthConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            in_channels: 3,
            conv_widths: self.model.conv_widths,
            fc_width: self.model.fc_width,
            num_classes: self.model.num_classes,
        }
    }

    pub fn rule_config(&self, rule: Rule) -> LearningRuleConfig {
        let t = &self.training;
        let pc = PcParams {
            t_inf: t.pc_t_inf,
            alpha: t.pc_alpha,
            eta_w: t.pc_eta_w,
        };
        let stdp = StdpParams {
            timesteps: t.stdp_timesteps,
            tau_plus_ms: t.stdp_tau_plus_ms,
            tau_minus_ms: t.stdp_tau_minus_ms,
            a_plus: t.stdp_a_plus,
            a_minus: t.stdp_a_minus,
            lr: t.stdp_lr,
            timestep_ms: t.stdp_timestep_ms,
        };
        LearningRuleConfig {
            rule: LearningRule::from_tag(rule, pc, stdp),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }

    /// Rules in canonical order without duplicates.
    pub fn rules(&self) -> Vec<Rule> {
        let mut r = self.training.rules.clone();
        r.sort();
        r.dedup();
        r
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        SynthSpec {
            num_train: s.num_train,
            num_test: s.num_test,
            num_classes: s.num_classes,
            num_stimuli: s.num_stimuli,
            resolution: self.extraction.resolution,
            num_subjects: s.num_subjects,
            noise: s.noise,
            noise_growth: s.noise_growth,
            reference_seed: s.reference_seed,
            arch: self.arch(),
            roi_taps: self.roi.pairs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.arch().validate()?;
        if self.training.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.training.rules.is_empty() {
            return bad("at least one rule is required".into());
        }
        for &r in &self.training.rules {
            self.rule_config(r).validate()?;
        }
        if !SUPPORTED_RESOLUTIONS.contains(&self.extraction.resolution) {
            return bad(format!(
                "extraction resolution {} not in {SUPPORTED_RESOLUTIONS:?}",
                self.extraction.resolution
            ));
        }
        let s = &self.stats;
        if s.n_boot < 2 || s.n_perm < 1 || s.noise_ceiling_splits < 1 {
            return bad("n_boot >= 2, n_perm >= 1 and noise_ceiling_splits >= 1 are required".into());
        }
        if !(s.alpha > 0.0 && s.alpha < 1.0) || !(s.ci_level > 0.0 && s.ci_level < 1.0) {
            return bad("alpha and ci_level must lie in (0, 1)".into());
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.training.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.extraction.resolution, 224);
        assert_eq!(c.roi.pairs()[1], (Roi::V2, Tap::Conv1));
    }

    #[test]
    fn edited_values_round_trip() {
        let mut c = ExperimentConfig::default();
        c.training.rules = vec![Rule::Stdp, Rule::Random];
        c.training.pc_alpha = 0.1 + 0.2;
        c.stats.partial_roi = Roi::It;
        c.roi.it = Tap::Fc2;
        c.data.train_limit = 0;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rules(), vec![Rule::Random, Rule::Stdp]);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml("[training]\nseeds = [7]\nrules = [\"bp\"]\n\n[roi]\nIT = \"conv3\"\n").unwrap();
        assert_eq!(c.training.seeds, vec![7]);
        assert_eq!(c.roi.it, Tap::Conv3);
        assert_eq!(c.stats, StatsConfig::default());
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "[training]\nseeds = []\n",
            "[training]\nrules = [\"hebb\"]\n",
            "[roi]\nV1 = \"conv9\"\n",
            "[extraction]\nresolution = 64\n",
            "[stats]\nalpha = 1.5\n",
            "[nonsense]\nx = 1\n",
            "[training]\nepoch = 3\n",
        ] {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }
}
