//! `plrsa`: command-line front end of the learning-rule RSA pipeline.
//!
//! Settings come from built-in defaults, then `--config`, then flags.
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plrsa::ingest::{
    read_brain_rdm_dir, read_rdm_csv, read_stimulus_dir, synth_dataset, write_rdm_csv, write_synth, Roi,
};
use plrsa::network::{extract_all_features, read_checkpoint, write_checkpoint, Tap};
use plrsa::pipeline::{
    best_layer_sweep, checkpoint_name, read_features_csv, run_experiment, tap_rdm_vectors, write_features_csv,
    write_manifest, BrainVectors, ExperimentConfig,
};
use plrsa::rdm::{pixel_rdm, rdm_from_features, upper_triangle};
use plrsa::rng::derive_seed;
use plrsa::rules::{append_metrics_csv, train, Rule};
use plrsa::stats::{noise_ceiling, null_p_value, rsa, PermutationNull, RankVector};
use plrsa::{filters, Error, Result};

#[derive(Parser)]
#[command(name = "plrsa", version, about = "Compare learning rules by representational similarity to brain RDMs")]
struct Cli {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list (data seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Write a synthetic dataset and a config that points at it.
    Synth,
    /// Train every configured rule x seed and write checkpoints and metrics.
    Train {
        /// Restrict to these rules.
        #[arg(long)]
        rule: Vec<Rule>,
    },
    /// Dump per-tap feature matrices of a checkpoint over the stimuli.
    Extract {
        /// Checkpoint written by `train` or `report`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stimulus directory; defaults to `data.stimuli`.
        #[arg(long)]
        stimuli: Option<PathBuf>,
        /// Taps to write; all when omitted.
        #[arg(long)]
        tap: Vec<Tap>,
    },
    /// Build a correlation-distance RDM from a features CSV or from stimulus pixels.
    Rdm {
        /// `features_<tap>.csv` from `extract`.
        #[arg(long, required_unless_present = "stimuli", conflicts_with = "stimuli")]
        features: Option<PathBuf>,
        /// Stimulus directory for a pixel RDM (use with `--pixel`).
        #[arg(long, requires = "pixel")]
        stimuli: Option<PathBuf>,
        /// Use raw pixels as the feature vectors.
        #[arg(long)]
        pixel: bool,
    },
    /// Score one model RDM against the brain RDMs of every ROI.
    Rsa {
        /// Model RDM CSV, e.g. from `rdm`.
        #[arg(long)]
        model: PathBuf,
        /// Brain RDM directory; defaults to `data.brain`.
        #[arg(long)]
        brain: Option<PathBuf>,
    },
    /// Rho of every tap against every ROI for each checkpoint.
    Sweep {
        /// Checkpoints to score; repeat the flag for several.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Spectral peakedness of Conv1 filters for each checkpoint.
    Filters {
        /// Checkpoints to inspect; repeat the flag for several.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Full experiment: train, extract, RSA statistics and report tables.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.training.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let inputs = match &cli.verb {
        Verb::Synth => synth(&cfg, cli.seed.unwrap_or(0), &out)?,
        Verb::Train { rule } => {
            if !rule.is_empty() {
                cfg.training.rules = rule.clone();
            }
            train_verb(&cfg, &out)?
        }
        Verb::Extract { checkpoint, stimuli, tap } => {
            let dir = stimuli.clone().unwrap_or_else(|| cfg.data.stimuli.clone());
            extract(&cfg, checkpoint, &dir, tap, &out)?;
            vec![checkpoint.clone(), dir]
        }
        Verb::Rdm { features, stimuli, .. } => rdm_verb(&cfg, features.as_deref(), stimuli.as_deref(), &out)?,
        Verb::Rsa { model, brain } => {
            let dir = brain.clone().unwrap_or_else(|| cfg.data.brain.clone());
            rsa_verb(&cfg, model, &dir, &out)?;
            vec![model.clone(), dir]
        }
        Verb::Sweep { checkpoint } => sweep(&cfg, checkpoint, &out)?,
        Verb::Filters { checkpoint } => filters_verb(checkpoint, &out)?,
        Verb::Report => {
            run_experiment(&cfg)?;
            return Ok(());
        }
    };
    write_manifest(&out, verb_name(&cli.verb), &cfg.sha256(), &inputs)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn verb_name(v: &Verb) -> &'static str {
    match v {
        Verb::Synth => "synth",
        Verb::Train { .. } => "train",
        Verb::Extract { .. } => "extract",
        Verb::Rdm { .. } => "rdm",
        Verb::Rsa { .. } => "rsa",
        Verb::Sweep { .. } => "sweep",
        Verb::Filters { .. } => "filters",
        Verb::Report => "report",
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let data = synth_dataset(&cfg.synth_spec(), seed)?;
    let paths = write_synth(&data, out)?;
    let mut run_cfg = cfg.clone();
    run_cfg.data.train = vec![paths.train];
    run_cfg.data.test = vec![paths.test];
    run_cfg.data.train_limit = 0;
    run_cfg.data.test_limit = 0;
    run_cfg.data.stimuli = paths.stimuli;
    run_cfg.data.brain = paths.brain;
    run_cfg.output.dir = out.join("run");
    write(&out.join("config.toml"), run_cfg.to_toml())?;
    Ok(Vec::new())
}

fn train_verb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let inputs = plrsa::pipeline::load_training_data(cfg)?;
    let metrics = out.join("metrics.csv");
    if metrics.exists() {
        std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
    }
    let ckdir = out.join("checkpoints");
    std::fs::create_dir_all(&ckdir).map_err(|e| Error::io(&ckdir, e))?;
    let mut failures = 0;
    let mut seeds = cfg.training.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let total = cfg.rules().len() * seeds.len();
    for rule in cfg.rules() {
        for &seed in &seeds {
            log::info!("training {rule} seed {seed}");
            match train(&cfg.rule_config(rule), &cfg.arch(), &inputs.0, inputs.1.as_ref(), seed) {
                Ok(o) => {
                    write_checkpoint(&ckdir.join(checkpoint_name(rule, seed)), &o.state, rule.tag())?;
                    append_metrics_csv(&metrics, rule, seed, &o.epochs)?;
                }
                Err(e) => {
                    log::error!("{rule} seed {seed} failed: {e}");
                    failures += 1;
                }
            }
        }
    }
    if failures == total {
        return Err(Error::Numerical("every rule x seed cell failed".into()));
    }
    let mut paths = cfg.data.train.clone();
    paths.extend(cfg.data.test.iter().cloned());
    Ok(paths)
}

fn extract(cfg: &ExperimentConfig, checkpoint: &Path, stimuli: &Path, taps: &[Tap], out: &Path) -> Result<()> {
    let (state, _) = read_checkpoint(checkpoint)?;
    let stim = read_stimulus_dir(stimuli, cfg.extraction.resolution)?;
    for f in extract_all_features(&state, &stim.images)? {
        if taps.is_empty() || taps.contains(&f.tap) {
            write_features_csv(&f, &stim.ids, &out.join(format!("features_{}.csv", f.tap)))?;
        }
    }
    Ok(())
}

/// `features_<tap>.csv` names the tap; anything else is labelled conv1.
fn tap_from_name(path: &Path) -> Tap {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("features_"))
        .and_then(|t| t.parse().ok())
        .unwrap_or(Tap::Conv1)
}

fn rdm_verb(cfg: &ExperimentConfig, features: Option<&Path>, stimuli: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let (rdm, input) = match (features, stimuli) {
        (Some(f), _) => {
            let (ids, feats) = read_features_csv(f, tap_from_name(f))?;
            (rdm_from_features(&feats, &ids)?, f.to_path_buf())
        }
        (None, Some(s)) => (pixel_rdm(&read_stimulus_dir(s, cfg.extraction.resolution)?)?, s.to_path_buf()),
        (None, None) => return Err(Error::Config("rdm needs --features or --stimuli with --pixel".into())),
    };
    write_rdm_csv(&rdm, &out.join("rdm.csv"))?;
    Ok(vec![input])
}

fn rsa_verb(cfg: &ExperimentConfig, model: &Path, brain_dir: &Path, out: &Path) -> Result<()> {
    let st = &cfg.stats;
    let model = read_rdm_csv(model)?;
    let brain = read_brain_rdm_dir(brain_dir)?;
    if let Some(b) = brain.iter().find(|b| b.rdm.ids() != model.ids()) {
        return Err(Error::Input(format!(
            "brain RDM {}_{} lists different stimuli than the model RDM",
            b.subject, b.roi
        )));
    }
    let m = upper_triangle(&model);
    let mrv = RankVector::new(&m)?;
    let vectors = BrainVectors::new(&brain)?;
    let mut text = String::from("roi,rho,ci_low,ci_high,p_null,n_subjects,nc_lower,nc_upper\n");
    for (roi, mean, subjects) in &vectors.rois {
        let r = rsa(&m, mean, st.n_boot, st.ci_level, derive_seed(st.seed, &format!("bootstrap-{roi}")))?;
        let null = PermutationNull::new(mean, st.n_perm, derive_seed(st.seed, &format!("permutation-{roi}")))?;
        let (obs, dist) = null.rhos(&[&mrv])?.remove(0);
        let nc = if subjects.len() >= 2 {
            let v: Vec<Vec<f64>> = subjects.iter().map(|s| s.1.clone()).collect();
            let c = noise_ceiling(&v, st.noise_ceiling_splits, derive_seed(st.seed, &format!("ceiling-{roi}")))?;
            format!("{},{}", c.lower, c.upper)
        } else {
            ",".to_string()
        };
        text.push_str(&format!(
            "{roi},{},{},{},{},{},{nc}\n",
            r.rho,
            r.ci_low,
            r.ci_high,
            null_p_value(obs, &dist),
            subjects.len()
        ));
    }
    write(&out.join("rsa.csv"), text)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sweep(cfg: &ExperimentConfig, checkpoints: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let stim = read_stimulus_dir(&cfg.data.stimuli, cfg.extraction.resolution)?;
    let brain = read_brain_rdm_dir(&cfg.data.brain)?;
    plrsa::ingest::check_brain_ids(&brain, &stim)?;
    let vectors = BrainVectors::new(&brain)?;
    let brain_pairs: Vec<(Roi, &[f64])> = vectors.rois.iter().map(|(r, m, _)| (*r, m.as_slice())).collect();
    if brain_pairs.is_empty() {
        return Err(Error::Input(format!("no brain RDMs in {}", cfg.data.brain.display())));
    }
    let mut table = format!(
        "checkpoint,tap,{}\n",
        brain_pairs.iter().map(|r| r.0.to_string()).collect::<Vec<_>>().join(",")
    );
    let mut best = String::from("checkpoint,roi,best_tap\n");
    for ck in checkpoints {
        let (state, _) = read_checkpoint(ck)?;
        let taps = tap_rdm_vectors(&state, &stim)?;
        let model: Vec<(Tap, &[f64])> = Tap::ALL.iter().zip(&taps).map(|(t, v)| (*t, v.as_slice())).collect();
        let s = best_layer_sweep(&model, &brain_pairs)?;
        let name = stem(ck);
        for (tap, row) in s.taps.iter().zip(&s.rho) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            table.push_str(&format!("{name},{tap},{}\n", cells.join(",")));
        }
        for (roi, tap) in s.rois.iter().zip(&s.best) {
            best.push_str(&format!("{name},{roi},{tap}\n"));
        }
    }
    write(&out.join("sweep.csv"), table)?;
    write(&out.join("sweep_best.csv"), best)?;
    let mut inputs = checkpoints.to_vec();
    inputs.push(cfg.data.stimuli.clone());
    inputs.push(cfg.data.brain.clone());
    Ok(inputs)
}

/// Seed from a `<rule>_seed<N>` file stem, else 0.
fn seed_from_name(path: &Path) -> u64 {
    stem(path).rsplit_once("_seed").and_then(|(_, s)| s.parse().ok()).unwrap_or(0)
}

fn filters_verb(checkpoints: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    for ck in checkpoints {
        let (state, tag) = read_checkpoint(ck)?;
        let rule: Rule = tag.parse()?;
        let summary = filters::summarize_filters(&state, rule)?;
        filters::write_filter_grid_csv(&summary.grid, &out.join(format!("grid_{}.csv", stem(ck))))?;
        rows.push((summary.score, seed_from_name(ck)));
    }
    write(&out.join("filters.csv"), filters::filter_scores_csv(&rows))?;
    Ok(checkpoints.to_vec())
}
