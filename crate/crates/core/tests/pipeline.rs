mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::*;
use plrsa::ingest::{synth_dataset, write_synth, BrainRdmFile, Roi, StimulusSet, SynthSpec};
use plrsa::network::{init_he_normal, Tap};
use plrsa::pipeline::{
    analyze, best_layer_sweep, run_experiment, tap_rdm_vectors, BrainVectors, Cell, CellData, ExperimentConfig,
};
use plrsa::rdm::{from_upper_triangle, upper_triangle};
use plrsa::rules::Rule;
use plrsa::stats::sample_sd;
use rand::Rng;

fn tiny_config(dir: &Path, spec: &SynthSpec) -> ExperimentConfig {
    let data = synth_dataset(spec, 0).unwrap();
    let paths = write_synth(&data, &dir.join("data")).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.train = vec![paths.train];
    cfg.data.test = vec![paths.test];
    cfg.data.train_limit = 0;
    cfg.data.stimuli = paths.stimuli;
    cfg.data.brain = paths.brain;
    cfg.model.conv_widths = spec.arch.conv_widths;
    cfg.model.fc_width = spec.arch.fc_width;
    cfg.extraction.resolution = spec.resolution;
    cfg.training.epochs = 1;
    cfg.training.seeds = vec![0, 1];
    cfg.stats.n_boot = 100;
    cfg.stats.n_perm = 99;
    cfg.output.dir = dir.join("run");
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn rerun_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), &SynthSpec::tiny());
    run_experiment(&cfg).unwrap();
    let first = snapshot(&cfg.output.dir);
    run_experiment(&cfg).unwrap();
    let second = snapshot(&cfg.output.dir);
    assert!(first.len() >= 15, "{:?}", first.keys());
    assert_eq!(first, second);
    let rsa = String::from_utf8(first["rsa.csv"].clone()).unwrap();
    assert_eq!(rsa.lines().count(), 1 + 5 * 4);
    assert_eq!(String::from_utf8(first["pairwise.csv"].clone()).unwrap().lines().count(), 1 + 40);
}

fn stimuli(n: usize, seed: u64) -> StimulusSet {
    let mut r = rng(seed);
    StimulusSet {
        images: uniform_tensor(&[n, 3, 32, 32], &mut r).map(|v| v.abs()),
        ids: ids(n),
    }
}

#[test]
fn noise_brain_gives_no_alignment() {
    let arch = SynthSpec::tiny().arch;
    let state = init_he_normal(&arch, 3).unwrap();
    let taps = tap_rdm_vectors(&state, &stimuli(720, 4)).unwrap();
    let model: Vec<(Tap, &[f64])> = Tap::ALL.iter().zip(&taps).map(|(t, v)| (*t, v.as_slice())).collect();
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let brains: Vec<Vec<f64>> = (0..4).map(|_| uniform_vec(taps[0].len(), &mut r)).collect();
        let brain: Vec<(Roi, &[f64])> = Roi::ALL.iter().zip(&brains).map(|(r, v)| (*r, v.as_slice())).collect();
        let s = best_layer_sweep(&model, &brain).unwrap();
        assert_eq!((s.rho.len(), s.rho[0].len()), (5, 4));
        worst = s.rho.iter().flatten().fold(worst, |m, v| m.max(v.abs()));
    }
    assert!(worst < 0.1, "max |rho| {worst}");
}

#[test]
fn sweep_recovers_the_tap_the_brain_was_built_from() {
    let mut spec = SynthSpec::tiny();
    spec.num_stimuli = 40;
    spec.noise = 0.5;
    let data = synth_dataset(&spec, 2).unwrap();
    let reference = init_he_normal(&spec.arch, spec.reference_seed).unwrap();
    let taps = tap_rdm_vectors(&reference, &data.stimuli).unwrap();
    let model: Vec<(Tap, &[f64])> = Tap::ALL.iter().zip(&taps).map(|(t, v)| (*t, v.as_slice())).collect();
    let v1: Vec<BrainRdmFile> = data.brain.iter().filter(|b| b.roi == Roi::V1).cloned().collect();
    let brain = BrainVectors::new(&v1).unwrap();
    let pairs: Vec<(Roi, &[f64])> = brain.rois.iter().map(|(r, m, _)| (*r, m.as_slice())).collect();
    let s = best_layer_sweep(&model, &pairs).unwrap();
    assert_eq!(s.best_for(Roi::V1), Some(Tap::Conv1), "{:?}", s.rho);
}

fn cell(rule: Rule, seed: u64, taps: Vec<Vec<f64>>) -> Cell {
    Cell {
        rule,
        seed,
        outcome: Ok(CellData {
            taps,
            metrics: vec![],
            filters: plrsa::filters::FilterScore {
                rule,
                scores: vec![],
                degenerate: vec![],
                mean: 0.0,
                std: 0.0,
            },
        }),
    }
}

#[test]
fn noisier_subjects_align_less() {
    let mut spec = SynthSpec::tiny();
    spec.num_stimuli = 40;
    spec.noise = 0.3;
    spec.noise_growth = 2.0;
    let data = synth_dataset(&spec, 3).unwrap();
    let reference = init_he_normal(&spec.arch, spec.reference_seed).unwrap();
    let taps = tap_rdm_vectors(&reference, &data.stimuli).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.stats.n_boot = 100;
    cfg.stats.n_perm = 50;
    let brain = BrainVectors::new(&data.brain).unwrap();
    let a = analyze(&cfg, &[cell(Rule::Random, 0, taps)], &brain, None).unwrap();
    for roi in Roi::ALL {
        let r: Vec<f64> = a.per_subject.iter().filter(|s| s.roi == roi).map(|s| s.rho).collect();
        assert_eq!(r.len(), 3);
        assert!(r[0] > r[1] && r[1] > r[2], "{roi}: {r:?}");
    }
}

#[test]
fn duplicate_subjects_give_identical_rows() {
    let mut r = rng(8);
    let n = 12;
    let m = uniform_vec(n * (n - 1) / 2, &mut r);
    let b = uniform_vec(m.len(), &mut r);
    let rdm = from_upper_triangle(ids(n), &b).unwrap();
    let files: Vec<BrainRdmFile> = ["sub01", "sub02"]
        .iter()
        .map(|s| BrainRdmFile {
            subject: s.to_string(),
            roi: Roi::It,
            rdm: rdm.clone(),
        })
        .collect();
    let mut cfg = ExperimentConfig::default();
    cfg.stats.n_boot = 100;
    cfg.stats.n_perm = 50;
    let a = analyze(&cfg, &[cell(Rule::Bp, 0, vec![m; 5])], &BrainVectors::new(&files).unwrap(), None).unwrap();
    assert_eq!(a.per_subject.len(), 2);
    assert_eq!(a.per_subject[0].rho, a.per_subject[1].rho);
    assert_eq!(upper_triangle(&rdm), b);
}

#[test]
fn independent_control_leaves_partial_rho_unchanged() {
    let mut r = rng(9);
    let len = 40 * 39 / 2;
    let brain_v = uniform_vec(len, &mut r);
    let model: Vec<f64> = brain_v.iter().map(|v| v + 0.8 * r.random::<f64>()).collect();
    let control = uniform_vec(len, &mut r);
    let rdm = from_upper_triangle(ids(40), &brain_v).unwrap();
    let files = vec![BrainRdmFile {
        subject: "sub01".into(),
        roi: Roi::V1,
        rdm,
    }];
    let mut cfg = ExperimentConfig::default();
    cfg.stats.n_boot = 100;
    cfg.stats.n_perm = 50;
    let a = analyze(
        &cfg,
        &[cell(Rule::Pc, 0, vec![model; 5])],
        &BrainVectors::new(&files).unwrap(),
        Some(&control),
    )
    .unwrap();
    let p = &a.partial_rsa[0];
    assert!(p.rho_std > 0.5 && p.delta.abs() < 0.02, "{p:?}");
}

#[test]
fn seed_spread_is_sample_standard_deviation() {
    let mut r = rng(10);
    let len = 45;
    let brain_v = uniform_vec(len, &mut r);
    let files = vec![BrainRdmFile {
        subject: "sub01".into(),
        roi: Roi::Loc,
        rdm: from_upper_triangle(ids(10), &brain_v).unwrap(),
    }];
    let cells: Vec<Cell> = (0..3).map(|s| cell(Rule::Fa, s, (0..5).map(|_| uniform_vec(len, &mut r)).collect())).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.stats.n_boot = 100;
    cfg.stats.n_perm = 50;
    let a = analyze(&cfg, &cells, &BrainVectors::new(&files).unwrap(), None).unwrap();
    let row = a.rsa.iter().find(|r| r.roi == Roi::Loc).unwrap();
    let expect: Vec<f64> = cells
        .iter()
        .map(|c| brute_spearman(&c.outcome.as_ref().unwrap().taps[2], &brain_v))
        .collect();
    for (a, b) in row.seed_rhos.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!((row.seed_std.unwrap() - sample_sd(&expect)).abs() < 1e-12);
}
