//! Train, extract, compare: the full experiment and its statistics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{csv, num, write_file, write_manifest};
use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::filters::{filter_scores_csv, summarize_filters, FilterScore};
use crate::ingest::{
    check_brain_ids, read_brain_rdm_dir, read_cifar10_binary, read_stimulus_dir, write_rdm_csv, BrainRdmFile,
    LabeledImageSet, Roi, StimulusSet,
};
use crate::network::{extract_all_features, write_checkpoint, NetworkState, Tap};
use crate::rdm::{average_rdms, from_upper_triangle, pixel_rdm, rdm_from_features, upper_triangle};
use crate::rng::derive_seed;
use crate::rules::{train, EpochMetrics, Rule, METRICS_HEADER};
use crate::stats::{
    bootstrap_ci, cohens_d_paired, delta_p_value, fdr_bh, mean, noise_ceiling, partial_spearman, sample_sd,
    null_p_value, NoiseCeiling, PermutationNull, RankVector,
};

pub struct Inputs {
    pub train: LabeledImageSet,
    pub test: Option<LabeledImageSet>,
    pub stimuli: StimulusSet,
    pub brain: Vec<BrainRdmFile>,
}

impl Inputs {
    pub fn paths(cfg: &ExperimentConfig) -> Vec<PathBuf> {
        let d = &cfg.data;
        let mut p = d.train.clone();
        p.extend(d.test.iter().cloned());
        p.push(d.stimuli.clone());
        p.push(d.brain.clone());
        p
    }
}

fn limit(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

/// Training set and optional test set named by `data`.
pub fn load_training_data(cfg: &ExperimentConfig) -> Result<(LabeledImageSet, Option<LabeledImageSet>)> {
    let d = &cfg.data;
    let train = read_cifar10_binary(&d.train, limit(d.train_limit))?;
    let test = if d.test.is_empty() {
        None
    } else {
        Some(read_cifar10_binary(&d.test, limit(d.test_limit))?)
    };
    Ok((train, test))
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let d = &cfg.data;
    let (train, test) = load_training_data(cfg)?;
    let stimuli = read_stimulus_dir(&d.stimuli, cfg.extraction.resolution)?;
    let brain = read_brain_rdm_dir(&d.brain)?;
    check_brain_ids(&brain, &stimuli)?;
    Ok(Inputs {
        train,
        test,
        stimuli,
        brain,
    })
}

/// Everything later stages need from one trained rule x seed network.
#[derive(Debug, Clone, PartialEq)]
pub struct CellData {
    /// Upper-triangle RDM vector for each tap, in [`Tap::ALL`] order.
    pub taps: Vec<Vec<f64>>,
    pub metrics: Vec<EpochMetrics>,
    pub filters: FilterScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub rule: Rule,
    pub seed: u64,
    /// Failure message when this cell could not be produced.
    pub outcome: std::result::Result<CellData, String>,
}

pub fn tap_index(tap: Tap) -> usize {
    Tap::ALL.iter().position(|&t| t == tap).expect("known tap")
}

/// Upper-triangle RDM vectors of every tap of `state` over `stimuli`.
pub fn tap_rdm_vectors(state: &NetworkState, stimuli: &StimulusSet) -> Result<Vec<Vec<f64>>> {
    extract_all_features(state, &stimuli.images)?
        .iter()
        .map(|f| Ok(upper_triangle(&rdm_from_features(f, &stimuli.ids)?)))
        .collect()
}

pub fn checkpoint_name(rule: Rule, seed: u64) -> String {
    format!("{rule}_seed{seed}.ckpt")
}

/// Train one condition, optionally checkpoint it, and reduce it to RDM vectors.
pub fn run_cell(
    cfg: &ExperimentConfig,
    rule: Rule,
    seed: u64,
    inputs: &Inputs,
    checkpoint_dir: Option<&Path>,
) -> Result<(NetworkState, CellData)> {
    let outcome = train(&cfg.rule_config(rule), &cfg.arch(), &inputs.train, inputs.test.as_ref(), seed)?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_checkpoint(&dir.join(checkpoint_name(rule, seed)), &outcome.state, rule.tag())?;
    }
    let taps = tap_rdm_vectors(&outcome.state, &inputs.stimuli)?;
    let filters = summarize_filters(&outcome.state, rule)?.score;
    Ok((
        outcome.state,
        CellData {
            taps,
            metrics: outcome.epochs,
            filters,
        },
    ))
}

// ---------------------------------------------------------------- analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaRow {
    pub condition: Rule,
    pub roi: Roi,
    pub tap: Tap,
    /// Mean of the per-seed rhos.
    pub rho: Option<f64>,
    /// Bootstrap CI computed on the seed-averaged model RDM.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// One-sided permutation p of rho against the seed-averaged null.
    pub p_null: Option<f64>,
    pub p_vs_random: Option<f64>,
    pub fdr_significant: Option<bool>,
    pub seed_rhos: Vec<f64>,
    pub seed_mean: Option<f64>,
    pub seed_std: Option<f64>,
    pub n_seeds: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub roi: Roi,
    pub condition_a: Rule,
    pub condition_b: Rule,
    pub delta_rho: f64,
    pub p_value: f64,
    pub fdr_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingRow {
    pub roi: Roi,
    pub lower: f64,
    pub upper: f64,
    pub n_splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub condition: Rule,
    pub roi: Roi,
    pub subject: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub roi: Roi,
    pub condition_a: Rule,
    pub condition_b: Rule,
    pub d: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRow {
    pub condition: Rule,
    pub rho_std: f64,
    pub rho_partial: f64,
    pub delta: f64,
    pub degenerate: bool,
}

/// Spearman rho of every tap against every ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub taps: Vec<Tap>,
    pub rois: Vec<Roi>,
    /// `rho[tap][roi]`
    pub rho: Vec<Vec<f64>>,
    /// Highest-rho tap per ROI (first in tap order on ties).
    pub best: Vec<Tap>,
}

impl LayerSweep {
    fn from_matrix(taps: Vec<Tap>, rois: Vec<Roi>, rho: Vec<Vec<f64>>) -> Self {
        let best = (0..rois.len())
            .map(|r| {
                let mut b = 0;
                for t in 1..taps.len() {
                    if rho[t][r] > rho[b][r] {
                        b = t;
                    }
                }
                taps[b]
            })
            .collect();
        LayerSweep { taps, rois, rho, best }
    }

    /// Entrywise mean of sweeps over the same taps and ROIs.
    pub fn mean(sweeps: &[LayerSweep]) -> Result<LayerSweep> {
        let first = sweeps.first().ok_or_else(|| Error::Input("no sweeps to average".into()))?;
        let k = sweeps.len() as f64;
        let mut rho = vec![vec![0.0; first.rois.len()]; first.taps.len()];
        for s in sweeps {
            if s.taps != first.taps || s.rois != first.rois {
                return Err(Error::Input("sweeps cover different taps or ROIs".into()));
            }
            for (acc, row) in rho.iter_mut().zip(&s.rho) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v / k;
                }
            }
        }
        Ok(Self::from_matrix(first.taps.clone(), first.rois.clone(), rho))
    }

    pub fn best_for(&self, roi: Roi) -> Option<Tap> {
        self.rois.iter().position(|&r| r == roi).map(|i| self.best[i])
    }

    pub fn get(&self, tap: Tap, roi: Roi) -> Option<f64> {
        let t = self.taps.iter().position(|&x| x == tap)?;
        let r = self.rois.iter().position(|&x| x == roi)?;
        Some(self.rho[t][r])
    }
}

/// Rho matrix of model RDM vectors (one per tap) against brain RDM vectors
/// (one per ROI), with the argmax tap for each ROI.
pub fn best_layer_sweep(model: &[(Tap, &[f64])], brain: &[(Roi, &[f64])]) -> Result<LayerSweep> {
    let brain_rv: Vec<RankVector> = brain.iter().map(|(_, v)| RankVector::new(v)).collect::<Result<_>>()?;
    let mut rho = Vec::with_capacity(model.len());
    for (_, v) in model {
        let m = RankVector::new(v)?;
        if m.len() != brain_rv[0].len() {
            return Err(Error::Input("model and brain RDM vectors differ in length".into()));
        }
        rho.push(brain_rv.iter().map(|b| m.rho(b)).collect());
    }
    Ok(LayerSweep::from_matrix(
        model.iter().map(|(t, _)| *t).collect(),
        brain.iter().map(|(r, _)| *r).collect(),
        rho,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub condition: Rule,
    pub sweep: LayerSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub condition: Rule,
    pub seed: u64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub rois: Vec<Roi>,
    pub seeds: Vec<u64>,
    pub rsa: Vec<RsaRow>,
    pub pairwise: Vec<PairwiseRow>,
    pub noise_ceiling: Vec<CeilingRow>,
    pub per_subject: Vec<SubjectRow>,
    pub effect_sizes: Vec<EffectRow>,
    pub partial_roi: Roi,
    pub partial_rsa: Vec<PartialRow>,
    pub sweeps: Vec<SweepRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub notes: Vec<String>,
}

/// Mean-brain and per-subject RDM vectors of each ROI present.
pub struct BrainVectors {
    pub rois: Vec<(Roi, Vec<f64>, Vec<(String, Vec<f64>)>)>,
}

impl BrainVectors {
    pub fn new(brain: &[BrainRdmFile]) -> Result<Self> {
        let mut rois = Vec::new();
        for roi in Roi::ALL {
            let files: Vec<&BrainRdmFile> = brain.iter().filter(|b| b.roi == roi).collect();
            if files.is_empty() {
                continue;
            }
            let rdms: Vec<_> = files.iter().map(|b| b.rdm.clone()).collect();
            let mean = upper_triangle(&average_rdms(&rdms)?);
            let subjects = files.iter().map(|b| (b.subject.clone(), upper_triangle(&b.rdm))).collect();
            rois.push((roi, mean, subjects));
        }
        Ok(BrainVectors { rois })
    }

    pub fn mean(&self, roi: Roi) -> Option<&[f64]> {
        self.rois.iter().find(|r| r.0 == roi).map(|r| r.1.as_slice())
    }
}

struct Condition<'a> {
    rule: Rule,
    seeds: Vec<(u64, &'a CellData)>,
    failed: Vec<(u64, &'a str)>,
}

impl Condition<'_> {
    fn status(&self) -> String {
        match (self.seeds.len(), self.failed.len()) {
            (_, 0) => "ok".into(),
            (0, _) => format!("missing: {}", self.failure_text()),
            (n, f) => format!("partial: {n} of {} seeds; {}", n + f, self.failure_text()),
        }
    }

    fn failure_text(&self) -> String {
        self.failed
            .iter()
            .map(|(s, m)| format!("seed {s} failed ({m})"))
            .collect::<Vec<_>>()
            .join("; ")
            .replace(',', ";")
    }

    fn avg_vector(&self, tap: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.seeds[0].1.taps[tap].len()];
        for (_, d) in &self.seeds {
            for (a, v) in acc.iter_mut().zip(&d.taps[tap]) {
                *a += v;
            }
        }
        let k = self.seeds.len() as f64;
        acc.iter_mut().for_each(|v| *v /= k);
        acc
    }
}

fn group(cells: &[Cell]) -> Vec<Condition<'_>> {
    let mut sorted: Vec<&Cell> = cells.iter().collect();
    sorted.sort_by_key(|c| (c.rule, c.seed));
    let mut out: Vec<Condition> = Vec::new();
    for c in sorted {
        if out.last().map(|l| l.rule) != Some(c.rule) {
            out.push(Condition {
                rule: c.rule,
                seeds: Vec::new(),
                failed: Vec::new(),
            });
        }
        let cond = out.last_mut().expect("pushed above");
        match &c.outcome {
            Ok(d) => cond.seeds.push((c.seed, d)),
            Err(m) => cond.failed.push((c.seed, m.as_str())),
        }
    }
    out
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// All statistics of the experiment from per-cell RDM vectors. `pixel` is
/// the pixel RDM vector used as the partial-RSA control.
pub fn analyze(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    brain: &BrainVectors,
    pixel: Option<&[f64]>,
) -> Result<Analysis> {
    let st = &cfg.stats;
    let conditions = group(cells);
    let live: Vec<&Condition> = conditions.iter().filter(|c| !c.seeds.is_empty()).collect();
    let mut rsa = Vec::new();
    let mut pairwise = Vec::new();
    let mut ceilings = Vec::new();
    let mut per_subject = Vec::new();
    let mut effects = Vec::new();
    let mut notes = vec![
        "rho is the mean of per-seed Spearman correlations with the mean-brain RDM".to_string(),
        "bootstrap CIs are computed on the seed-averaged model RDM".to_string(),
        "permutation nulls share one set of brain shuffles per ROI across all conditions".to_string(),
        "FDR correction is applied jointly over every pairwise test in the report".to_string(),
    ];

    let mut all_subjects: Vec<&str> = brain.rois.iter().flat_map(|r| r.2.iter().map(|s| s.0.as_str())).collect();
    all_subjects.sort_unstable();
    all_subjects.dedup();
    for (roi, _, subs) in &brain.rois {
        for s in &all_subjects {
            if !subs.iter().any(|x| x.0 == *s) {
                notes.push(format!("gap: no {roi} RDM for subject {s}"));
            }
        }
    }

    for (roi, tap) in cfg.roi.pairs() {
        let ti = tap_index(tap);
        let Some(bvec) = brain.mean(roi) else {
            notes.push(format!("no brain RDMs for {roi}; its rows are empty"));
            for c in &conditions {
                rsa.push(empty_row(c, roi, tap, "no brain data".into()));
            }
            continue;
        };
        let subjects = &brain.rois.iter().find(|r| r.0 == roi).expect("present").2;

        let null = PermutationNull::new(bvec, st.n_perm, derive_seed(st.seed, &format!("permutation-{roi}")))?;
        let model_rv: Vec<Vec<RankVector>> = live
            .iter()
            .map(|c| c.seeds.iter().map(|(_, d)| RankVector::new(&d.taps[ti])).collect())
            .collect::<Result<_>>()?;
        let flat: Vec<&RankVector> = model_rv.iter().flatten().collect();
        let mut results = null.rhos(&flat)?.into_iter();
        let mut summary = Vec::with_capacity(live.len());
        for rvs in &model_rv {
            let per_seed: Vec<(f64, Vec<f64>)> = results.by_ref().take(rvs.len()).collect();
            let rhos: Vec<f64> = per_seed.iter().map(|p| p.0).collect();
            let null_mean: Vec<f64> = (0..st.n_perm)
                .map(|k| per_seed.iter().map(|p| p.1[k]).sum::<f64>() / rvs.len() as f64)
                .collect();
            summary.push((mean(&rhos), rhos, null_mean));
        }

        let boot_seed = derive_seed(st.seed, &format!("bootstrap-{roi}"));
        let mut rows = Vec::with_capacity(conditions.len());
        for c in &conditions {
            let Some(li) = live.iter().position(|l| l.rule == c.rule) else {
                rows.push(empty_row(c, roi, tap, c.status()));
                continue;
            };
            let (rho, rhos, null) = &summary[li];
            let ci = bootstrap_ci(&c.avg_vector(ti), bvec, st.n_boot, st.ci_level, boot_seed)?;
            rows.push(RsaRow {
                condition: c.rule,
                roi,
                tap,
                rho: Some(*rho),
                ci_low: Some(ci.low),
                ci_high: Some(ci.high),
                p_null: Some(null_p_value(*rho, null)),
                p_vs_random: None,
                fdr_significant: None,
                seed_rhos: rhos.clone(),
                seed_mean: Some(*rho),
                seed_std: Some(if rhos.len() > 1 { sample_sd(rhos) } else { 0.0 }),
                n_seeds: rhos.len(),
                status: c.status(),
            });
        }
        rsa.extend(rows);

        for (i, j) in pairs(live.len()) {
            let (delta, p) = delta_p_value(summary[i].0, &summary[i].2, summary[j].0, &summary[j].2);
            pairwise.push(PairwiseRow {
                roi,
                condition_a: live[i].rule,
                condition_b: live[j].rule,
                delta_rho: delta,
                p_value: p,
                fdr_significant: false,
            });
        }

        let subject_rv: Vec<RankVector> = subjects.iter().map(|(_, v)| RankVector::new(v)).collect::<Result<_>>()?;
        let mut scores: Vec<Vec<f64>> = Vec::with_capacity(live.len());
        for (c, rvs) in live.iter().zip(&model_rv) {
            let s: Vec<f64> = subject_rv
                .iter()
                .map(|srv| rvs.iter().map(|m| m.rho(srv)).sum::<f64>() / rvs.len() as f64)
                .collect();
            for ((name, _), rho) in subjects.iter().zip(&s) {
                per_subject.push(SubjectRow {
                    condition: c.rule,
                    roi,
                    subject: name.clone(),
                    rho: *rho,
                });
            }
            scores.push(s);
        }
        if subjects.len() >= 2 {
            let vecs: Vec<Vec<f64>> = subjects.iter().map(|(_, v)| v.clone()).collect();
            let nc: NoiseCeiling =
                noise_ceiling(&vecs, st.noise_ceiling_splits, derive_seed(st.seed, &format!("ceiling-{roi}")))?;
            ceilings.push(CeilingRow {
                roi,
                lower: nc.lower,
                upper: nc.upper,
                n_splits: nc.n_splits,
            });
            for (i, j) in pairs(live.len()) {
                let d = cohens_d_paired(&scores[i], &scores[j])?;
                effects.push(EffectRow {
                    roi,
                    condition_a: live[i].rule,
                    condition_b: live[j].rule,
                    d: d.d.is_finite().then_some(d.d),
                    degenerate: d.degenerate,
                });
            }
        } else {
            notes.push(format!("{roi}: fewer than 2 subjects, no noise ceiling or effect sizes"));
        }
    }

    let ps: Vec<f64> = pairwise.iter().map(|p| p.p_value).collect();
    for (row, flag) in pairwise.iter_mut().zip(fdr_bh(&ps, st.alpha)?) {
        row.fdr_significant = flag;
    }
    for row in rsa.iter_mut().filter(|r| r.condition != Rule::Random && r.rho.is_some()) {
        if let Some(p) = pairwise.iter().find(|p| {
            p.roi == row.roi
                && ((p.condition_a, p.condition_b) == (Rule::Random, row.condition)
                    || (p.condition_a, p.condition_b) == (row.condition, Rule::Random))
        }) {
            row.p_vs_random = Some(p.p_value);
            row.fdr_significant = Some(p.fdr_significant);
        }
    }

    let partial_roi = st.partial_roi;
    let mut partial_rsa = Vec::new();
    match (brain.mean(partial_roi), pixel) {
        (Some(bvec), Some(px)) => {
            let ti = tap_index(cfg.roi.tap(partial_roi));
            for c in &live {
                let m = c.avg_vector(ti);
                let std = RankVector::new(&m)?.rho(&RankVector::new(bvec)?);
                let p = partial_spearman(&m, bvec, px)?;
                if p.degenerate {
                    log::warn!("{}: model RDM is explained by the pixel RDM, partial rho set to 0", c.rule);
                }
                partial_rsa.push(PartialRow {
                    condition: c.rule,
                    rho_std: std,
                    rho_partial: p.rho,
                    delta: p.rho - std,
                    degenerate: p.degenerate,
                });
            }
            notes.push(format!("partial RSA at {partial_roi} uses the seed-averaged model RDM"));
        }
        _ => notes.push(format!("partial RSA skipped: no brain data for {partial_roi} or no pixel RDM")),
    }

    let brain_pairs: Vec<(Roi, &[f64])> = brain.rois.iter().map(|(r, m, _)| (*r, m.as_slice())).collect();
    let mut sweeps = Vec::new();
    if !brain_pairs.is_empty() {
        for c in &live {
            let per_seed: Vec<LayerSweep> = c
                .seeds
                .iter()
                .map(|(_, d)| {
                    let model: Vec<(Tap, &[f64])> = Tap::ALL.iter().zip(&d.taps).map(|(t, v)| (*t, v.as_slice())).collect();
                    best_layer_sweep(&model, &brain_pairs)
                })
                .collect::<Result<_>>()?;
            sweeps.push(SweepRow {
                condition: c.rule,
                sweep: LayerSweep::mean(&per_seed)?,
            });
        }
    }

    let mut accuracy = Vec::new();
    for c in &conditions {
        for (seed, d) in &c.seeds {
            let last = d.metrics.last();
            accuracy.push(AccuracyRow {
                condition: c.rule,
                seed: *seed,
                train_acc: last.map(|m| m.train_acc).filter(|v| v.is_finite()),
                test_acc: last.map(|m| m.test_acc).filter(|v| v.is_finite()),
                status: "ok".into(),
            });
        }
        for (seed, m) in &c.failed {
            accuracy.push(AccuracyRow {
                condition: c.rule,
                seed: *seed,
                train_acc: None,
                test_acc: None,
                status: format!("failed: {m}"),
            });
        }
    }
    accuracy.sort_by_key(|a| (a.condition, a.seed));

    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(Analysis {
        rois: brain.rois.iter().map(|r| r.0).collect(),
        seeds,
        rsa,
        pairwise,
        noise_ceiling: ceilings,
        per_subject,
        effect_sizes: effects,
        partial_roi,
        partial_rsa,
        sweeps,
        accuracy,
        notes,
    })
}

fn empty_row(c: &Condition, roi: Roi, tap: Tap, status: String) -> RsaRow {
    RsaRow {
        condition: c.rule,
        roi,
        tap,
        rho: None,
        ci_low: None,
        ci_high: None,
        p_null: None,
        p_vs_random: None,
        fdr_significant: None,
        seed_rhos: Vec::new(),
        seed_mean: None,
        seed_std: None,
        n_seeds: c.seeds.len(),
        status,
    }
}

// ---------------------------------------------------------------- output

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_flag(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

pub const RSA_COLUMNS: [&str; 12] = [
    "condition",
    "roi",
    "tap",
    "rho",
    "ci_low",
    "ci_high",
    "p_vs_random",
    "fdr_flag",
    "seed_mean",
    "seed_std",
    "n_seeds",
    "status",
];

pub const PARTIAL_COLUMNS: [&str; 4] = ["condition", "rho_std", "rho_partial", "delta"];

/// CSV tables plus `report.json`, returned as `(file name, contents)`.
pub fn render_analysis(a: &Analysis) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = a
        .rsa
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.roi.to_string(),
                r.tap.to_string(),
                opt(r.rho),
                opt(r.ci_low),
                opt(r.ci_high),
                opt(r.p_vs_random),
                opt_flag(r.fdr_significant),
                opt(r.seed_mean),
                opt(r.seed_std),
                r.n_seeds.to_string(),
                r.status.clone(),
            ]
        })
        .collect();
    files.push(("rsa.csv".into(), csv(&RSA_COLUMNS, &rows)));

    let rows: Vec<Vec<String>> = a
        .pairwise
        .iter()
        .map(|p| {
            vec![
                p.roi.to_string(),
                p.condition_a.to_string(),
                p.condition_b.to_string(),
                num(p.delta_rho),
                num(p.p_value),
                p.fdr_significant.to_string(),
            ]
        })
        .collect();
    files.push((
        "pairwise.csv".into(),
        csv(&["roi", "condition_a", "condition_b", "delta_rho", "p_value", "fdr_significant"], &rows),
    ));

    let rows: Vec<Vec<String>> = a
        .noise_ceiling
        .iter()
        .map(|c| vec![c.roi.to_string(), num(c.lower), num(c.upper), c.n_splits.to_string()])
        .collect();
    files.push(("noise_ceiling.csv".into(), csv(&["roi", "lower", "upper", "n_splits"], &rows)));

    let rows: Vec<Vec<String>> = a
        .per_subject
        .iter()
        .map(|s| vec![s.condition.to_string(), s.roi.to_string(), s.subject.clone(), num(s.rho)])
        .collect();
    files.push(("per_subject.csv".into(), csv(&["condition", "roi", "subject", "rho"], &rows)));

    let rows: Vec<Vec<String>> = a
        .effect_sizes
        .iter()
        .map(|e| {
            let d = match e.d {
                Some(d) => num(d),
                None if e.degenerate => "inf".into(),
                None => String::new(),
            };
            vec![
                e.roi.to_string(),
                e.condition_a.to_string(),
                e.condition_b.to_string(),
                d,
                e.degenerate.to_string(),
            ]
        })
        .collect();
    files.push(("cohens_d.csv".into(), csv(&["roi", "condition_a", "condition_b", "d", "degenerate"], &rows)));

    let rows: Vec<Vec<String>> = a
        .partial_rsa
        .iter()
        .map(|p| vec![p.condition.to_string(), num(p.rho_std), num(p.rho_partial), num(p.delta)])
        .collect();
    files.push(("partial_rsa.csv".into(), csv(&PARTIAL_COLUMNS, &rows)));

    let mut header = vec!["condition".to_string(), "tap".to_string()];
    header.extend(a.rois.iter().map(|r| r.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    let mut best = Vec::new();
    for s in &a.sweeps {
        for (t, tap) in s.sweep.taps.iter().enumerate() {
            let mut row = vec![s.condition.to_string(), tap.to_string()];
            row.extend(s.sweep.rho[t].iter().map(|v| num(*v)));
            rows.push(row);
        }
        for (roi, tap) in s.sweep.rois.iter().zip(&s.sweep.best) {
            best.push(vec![s.condition.to_string(), roi.to_string(), tap.to_string()]);
        }
    }
    files.push(("sweep.csv".into(), csv(&header, &rows)));
    files.push(("sweep_best.csv".into(), csv(&["condition", "roi", "best_tap"], &best)));

    let rows: Vec<Vec<String>> = a
        .accuracy
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.seed.to_string(),
                opt(r.train_acc),
                opt(r.test_acc),
                r.status.replace(',', ";"),
            ]
        })
        .collect();
    files.push(("accuracy.csv".into(), csv(&ACCURACY_COLUMNS, &rows)));
    files.push(("accuracy_table.md".into(), accuracy_table_markdown(&a.accuracy)));

    files.push(("rsa_table.md".into(), rsa_table_markdown(&a.rsa)));
    files.push(("partial_table.md".into(), partial_table_markdown(&a.partial_rsa)));

    let mut json = serde_json::to_string_pretty(a).expect("analysis serializes");
    json.push('\n');
    files.push(("report.json".into(), json));
    files
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(_) => "ns",
        None => "",
    }
}

/// Three decimals without the leading zero: `.072`, `-.009`.
fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    s.replacen("0.", ".", 1)
}

/// ROI x condition table in the layout of a printed results table: rho with
/// CI, significance stars from `p_vs_random`, bold for the best per ROI.
pub fn rsa_table_markdown(rows: &[RsaRow]) -> String {
    let mut conds: Vec<Rule> = rows.iter().map(|r| r.condition).collect();
    conds.sort();
    conds.dedup();
    let mut rois: Vec<(Roi, Tap)> = rows.iter().map(|r| (r.roi, r.tap)).collect();
    rois.sort();
    rois.dedup();
    let mut out = String::from("| ROI | Layer |");
    for c in &conds {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(conds.len()));
    out.push('\n');
    for (roi, tap) in rois {
        let here: Vec<&RsaRow> = rows.iter().filter(|r| r.roi == roi).collect();
        let best = here.iter().filter_map(|r| r.rho).fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!("| {roi} | {tap} |"));
        for c in &conds {
            let cell = match here.iter().find(|r| r.condition == *c) {
                Some(RsaRow {
                    rho: Some(rho),
                    ci_low,
                    ci_high,
                    p_vs_random,
                    ..
                }) => {
                    let v = format!("{rho:.3}");
                    let v = if *rho == best { format!("**{v}**") } else { v };
                    let ci = match (ci_low, ci_high) {
                        (Some(l), Some(h)) => format!(" [{}, {}]", short(*l), short(*h)),
                        _ => String::new(),
                    };
                    format!("{v}{ci}{}", stars(*p_vs_random))
                }
                _ => "n/a".into(),
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

/// Standard vs. partial RSA, ordered by descending standard rho.
pub fn partial_table_markdown(rows: &[PartialRow]) -> String {
    let mut sorted: Vec<&PartialRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.rho_std.total_cmp(&a.rho_std));
    let mut out = String::from("| Condition | rho_std | rho_partial | delta |\n|---|---|---|---|\n");
    for r in sorted {
        out.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} |\n",
            r.condition, r.rho_std, r.rho_partial, r.delta
        ));
    }
    out
}

/// Mean test accuracy per condition in percent, best first. Falls back to
/// training accuracy when no test set was used.
pub fn accuracy_table_markdown(rows: &[AccuracyRow]) -> String {
    let mut conds: Vec<Rule> = rows.iter().map(|r| r.condition).collect();
    conds.sort();
    conds.dedup();
    let mut means: Vec<(Rule, f64)> = conds
        .into_iter()
        .filter_map(|c| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.condition == c)
                .filter_map(|r| r.test_acc.or(r.train_acc))
                .collect();
            (!v.is_empty()).then(|| (c, 100.0 * mean(&v)))
        })
        .collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out = String::from("| Condition | Accuracy (%) |\n|---|---|\n");
    for (c, v) in means {
        out.push_str(&format!("| {c} | {v:.1} |\n"));
    }
    out
}

pub const ACCURACY_COLUMNS: [&str; 5] = ["condition", "seed", "train_acc", "test_acc", "status"];

/// Inverse of the `accuracy.csv` rendering.
pub fn parse_accuracy_csv(text: &str) -> Result<Vec<AccuracyRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header != ACCURACY_COLUMNS {
        return Err(Error::Input(format!("accuracy.csv header must be {}", ACCURACY_COLUMNS.join(","))));
    }
    lines
        .map(|line| {
            let c: Vec<&str> = line.splitn(5, ',').collect();
            let get = |i: usize| c.get(i).copied().unwrap_or("");
            Ok(AccuracyRow {
                condition: get(0).parse()?,
                seed: get(1).parse().map_err(|_| Error::Input(format!("seed: '{}'", get(1))))?,
                train_acc: parse_opt(get(2), "train_acc")?,
                test_acc: parse_opt(get(3), "test_acc")?,
                status: get(4).to_string(),
            })
        })
        .collect()
}

fn field<'a>(cells: &[&'a str], header: &[&str], name: &str) -> &'a str {
    header.iter().position(|h| *h == name).map_or("", |i| cells.get(i).copied().unwrap_or(""))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Input(format!("{what}: '{s}' is not a number")))
}

/// Inverse of the `rsa.csv` rendering (per-seed rhos are not stored there).
pub fn parse_rsa_csv(text: &str) -> Result<Vec<RsaRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header != RSA_COLUMNS {
        return Err(Error::Input(format!("rsa.csv header must be {}", RSA_COLUMNS.join(","))));
    }
    lines
        .map(|line| {
            let c: Vec<&str> = line.splitn(RSA_COLUMNS.len(), ',').collect();
            let f = |n: &str| field(&c, &header, n);
            let flag = match f("fdr_flag") {
                "" => None,
                v => Some(v.parse().map_err(|_| Error::Input(format!("fdr_flag: '{v}'")))?),
            };
            Ok(RsaRow {
                condition: f("condition").parse()?,
                roi: f("roi").parse()?,
                tap: f("tap").parse()?,
                rho: parse_opt(f("rho"), "rho")?,
                ci_low: parse_opt(f("ci_low"), "ci_low")?,
                ci_high: parse_opt(f("ci_high"), "ci_high")?,
                p_null: None,
                p_vs_random: parse_opt(f("p_vs_random"), "p_vs_random")?,
                fdr_significant: flag,
                seed_rhos: Vec::new(),
                seed_mean: parse_opt(f("seed_mean"), "seed_mean")?,
                seed_std: parse_opt(f("seed_std"), "seed_std")?,
                n_seeds: f("n_seeds").parse().map_err(|_| Error::Input(format!("n_seeds: '{}'", f("n_seeds"))))?,
                status: f("status").to_string(),
            })
        })
        .collect()
}

/// Inverse of the `partial_rsa.csv` rendering.
pub fn parse_partial_csv(text: &str) -> Result<Vec<PartialRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header != PARTIAL_COLUMNS {
        return Err(Error::Input(format!("partial_rsa.csv header must be {}", PARTIAL_COLUMNS.join(","))));
    }
    lines
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            let num = |i: usize| parse_opt(c.get(i).copied().unwrap_or(""), PARTIAL_COLUMNS[i])?.ok_or_else(|| Error::Input(format!("{} is empty", PARTIAL_COLUMNS[i])));
            Ok(PartialRow {
                condition: c[0].parse()?,
                rho_std: num(1)?,
                rho_partial: num(2)?,
                delta: num(3)?,
                degenerate: false,
            })
        })
        .collect()
}

pub fn write_analysis(a: &Analysis, out: &Path) -> Result<()> {
    for (name, text) in render_analysis(a) {
        write_file(&out.join(name), text)?;
    }
    Ok(())
}

fn metrics_csv(cells: &[Cell]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for c in cells {
        if let Ok(d) = &c.outcome {
            for m in &d.metrics {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.epoch, m.loss, m.train_acc, m.test_acc, c.rule, c.seed
                ));
            }
        }
    }
    out
}

/// Train every rule x seed cell in `(rule, seed)` order. A failing cell is
/// logged and recorded; the others still run.
pub fn train_cells(cfg: &ExperimentConfig, inputs: &Inputs, checkpoint_dir: Option<&Path>) -> Vec<Cell> {
    let mut seeds = cfg.training.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut cells = Vec::new();
    for rule in cfg.rules() {
        for &seed in &seeds {
            log::info!("training {rule} seed {seed}");
            let outcome = match run_cell(cfg, rule, seed, inputs, checkpoint_dir) {
                Ok((_, d)) => Ok(d),
                Err(e) => {
                    log::error!("{rule} seed {seed} failed: {e}");
                    Err(e.to_string())
                }
            };
            cells.push(Cell { rule, seed, outcome });
        }
    }
    cells
}

/// The whole pipeline from config to report files under `cfg.output.dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Analysis> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    run_experiment_with(cfg, &inputs)
}

/// [`run_experiment`] on already loaded inputs.
pub fn run_experiment_with(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Analysis> {
    let out = &cfg.output.dir;
    let cells = train_cells(cfg, inputs, Some(&out.join("checkpoints")));
    write_file(&out.join("metrics.csv"), metrics_csv(&cells))?;
    let scores: Vec<(FilterScore, u64)> = cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok().map(|d| (d.filters.clone(), c.seed)))
        .collect();
    write_file(&out.join("filters.csv"), filter_scores_csv(&scores))?;

    if cfg.output.write_rdms {
        for c in group(&cells).iter().filter(|c| !c.seeds.is_empty()) {
            for (ti, tap) in Tap::ALL.iter().enumerate() {
                let rdm = from_upper_triangle(inputs.stimuli.ids.clone(), &c.avg_vector(ti))?;
                let p = out.join("rdms").join(format!("{}_{tap}.csv", c.rule));
                write_file(&p, "")?;
                write_rdm_csv(&rdm, &p)?;
            }
        }
    }

    let pixel = match pixel_rdm(&inputs.stimuli) {
        Ok(r) => Some(upper_triangle(&r)),
        Err(e) => {
            log::warn!("pixel RDM unavailable: {e}");
            None
        }
    };
    let brain = BrainVectors::new(&inputs.brain)?;
    let analysis = analyze(cfg, &cells, &brain, pixel.as_deref())?;
    write_analysis(&analysis, out)?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    write_manifest(out, "report", &cfg.sha256(), &Inputs::paths(cfg))?;
    if cells.iter().all(|c| c.outcome.is_err()) {
        return Err(Error::Numerical("every rule x seed cell failed; see report".into()));
    }
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::rng::stream(seed, "test");
        (0..len).map(|_| r.random::<f64>()).collect()
    }

    fn noisy(base: &[f64], sd: f64, seed: u64) -> Vec<f64> {
        base.iter().zip(rand_vec(base.len(), seed)).map(|(b, e)| b + sd * (e - 0.5)).collect()
    }

    fn cell(rule: Rule, seed: u64, taps: Vec<Vec<f64>>) -> Cell {
        Cell {
            rule,
            seed,
            outcome: Ok(CellData {
                taps,
                metrics: vec![],
                filters: FilterScore {
                    rule,
                    scores: vec![],
                    degenerate: vec![],
                    mean: 0.0,
                    std: 0.0,
                },
            }),
        }
    }

    const LEN: usize = 45;

    fn small_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.stats.n_boot = 200;
        c.stats.n_perm = 99;
        c
    }

    fn brain_of(mean: &[f64], subjects: usize) -> BrainVectors {
        BrainVectors {
            rois: Roi::ALL
                .iter()
                .map(|&r| {
                    let subs = (0..subjects)
                        .map(|s| (format!("sub{s:02}"), noisy(mean, 0.2 * (s + 1) as f64, 100 + s as u64)))
                        .collect();
                    (r, mean.to_vec(), subs)
                })
                .collect(),
        }
    }

    fn fake_cells(rules: &[Rule], seeds: &[u64]) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &r in rules {
            for &s in seeds {
                let taps = (0..5).map(|t| rand_vec(LEN, 1000 * r as u64 + 10 * s + t)).collect();
                cells.push(cell(r, s, taps));
            }
        }
        cells
    }

    #[test]
    fn five_conditions_give_forty_pairwise_tests() {
        let brain = brain_of(&rand_vec(LEN, 7), 3);
        let a = analyze(&small_cfg(), &fake_cells(&Rule::ALL, &[0, 1]), &brain, None).unwrap();
        assert_eq!(a.pairwise.len(), 40);
        assert_eq!(a.rsa.len(), 20);
        assert_eq!(a.effect_sizes.len(), 40);
        assert_eq!(a.noise_ceiling.len(), 4);
        for row in &a.rsa {
            let m = row.seed_rhos.iter().sum::<f64>() / row.seed_rhos.len() as f64;
            assert!((row.rho.unwrap() - m).abs() < 1e-12);
        }
        for row in a.rsa.iter().filter(|r| r.condition != Rule::Random) {
            assert!(row.p_vs_random.is_some());
        }
    }

    #[test]
    fn reported_delta_is_difference_of_rhos() {
        let brain = brain_of(&rand_vec(LEN, 7), 2);
        let a = analyze(&small_cfg(), &fake_cells(&[Rule::Random, Rule::Bp], &[0, 1, 2]), &brain, None).unwrap();
        for p in &a.pairwise {
            let rho = |c| a.rsa.iter().find(|r| r.roi == p.roi && r.condition == c).unwrap().rho.unwrap();
            assert!((p.delta_rho - (rho(p.condition_a) - rho(p.condition_b))).abs() < 1e-12);
        }
    }

    #[test]
    fn removing_a_condition_leaves_other_rows_unchanged() {
        let brain = brain_of(&rand_vec(LEN, 7), 3);
        let cfg = small_cfg();
        let full = analyze(&cfg, &fake_cells(&Rule::ALL, &[0]), &brain, None).unwrap();
        let less = analyze(&cfg, &fake_cells(&[Rule::Random, Rule::Bp, Rule::Fa, Rule::Pc], &[0]), &brain, None).unwrap();
        let keep = |r: &RsaRow| RsaRow {
            fdr_significant: None,
            ..r.clone()
        };
        let a: Vec<RsaRow> = full.rsa.iter().filter(|r| r.condition != Rule::Stdp).map(keep).collect();
        let b: Vec<RsaRow> = less.rsa.iter().map(keep).collect();
        assert_eq!(a, b);
        let pa: Vec<(Roi, Rule, Rule, f64, f64)> = full
            .pairwise
            .iter()
            .filter(|p| p.condition_b != Rule::Stdp)
            .map(|p| (p.roi, p.condition_a, p.condition_b, p.delta_rho, p.p_value))
            .collect();
        let pb: Vec<(Roi, Rule, Rule, f64, f64)> =
            less.pairwise.iter().map(|p| (p.roi, p.condition_a, p.condition_b, p.delta_rho, p.p_value)).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn failed_cell_is_flagged_and_excluded() {
        let brain = brain_of(&rand_vec(LEN, 7), 3);
        let mut cells = fake_cells(&[Rule::Random, Rule::Bp, Rule::Fa], &[0, 1]);
        cells[2].outcome = Err("diverged".into());
        cells[3].outcome = Err("diverged".into());
        cells[4].outcome = Err("diverged".into());
        let a = analyze(&small_cfg(), &cells, &brain, None).unwrap();
        let bp = a.rsa.iter().find(|r| r.condition == Rule::Bp).unwrap();
        assert!(bp.rho.is_none() && bp.status.starts_with("missing"));
        let fa = a.rsa.iter().find(|r| r.condition == Rule::Fa).unwrap();
        assert!(fa.status.starts_with("partial") && fa.n_seeds == 1);
        assert_eq!(a.pairwise.len(), 4);
        assert!(a.pairwise.iter().all(|p| p.condition_a != Rule::Bp && p.condition_b != Rule::Bp));
    }

    #[test]
    fn single_subject_table_equals_mean_brain_table() {
        let mean = rand_vec(LEN, 9);
        let brain = BrainVectors {
            rois: Roi::ALL.iter().map(|&r| (r, mean.clone(), vec![("sub01".to_string(), mean.clone())])).collect(),
        };
        let a = analyze(&small_cfg(), &fake_cells(&[Rule::Random, Rule::Pc], &[0, 1]), &brain, None).unwrap();
        for s in &a.per_subject {
            let r = a.rsa.iter().find(|r| r.roi == s.roi && r.condition == s.condition).unwrap();
            assert!((s.rho - r.rho.unwrap()).abs() < 1e-12);
        }
        assert!(a.noise_ceiling.is_empty());
    }

    #[test]
    fn per_subject_rho_falls_with_subject_noise() {
        let mean = rand_vec(LEN * 10, 11);
        let brain = BrainVectors {
            rois: vec![(
                Roi::V1,
                mean.clone(),
                (0..3).map(|s| (format!("sub{s}"), noisy(&mean, [0.1, 1.0, 4.0][s], 50 + s as u64))).collect(),
            )],
        };
        let cells = vec![cell(Rule::Bp, 0, vec![mean.clone(); 5])];
        let a = analyze(&small_cfg(), &cells, &brain, None).unwrap();
        let r: Vec<f64> = a.per_subject.iter().map(|s| s.rho).collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    #[test]
    fn partial_rsa_with_model_equal_to_pixel_is_degenerate() {
        let pixel = rand_vec(LEN, 3);
        let brain = brain_of(&noisy(&pixel, 0.5, 4), 2);
        let cells = vec![cell(Rule::Random, 0, vec![pixel.clone(); 5])];
        let a = analyze(&small_cfg(), &cells, &brain, Some(&pixel)).unwrap();
        let p = &a.partial_rsa[0];
        assert!(p.degenerate && p.rho_partial.abs() < 1e-12);
        let text = render_analysis(&a);
        let csv = &text.iter().find(|f| f.0 == "partial_rsa.csv").unwrap().1;
        assert!(csv.starts_with("condition,rho_std,rho_partial,delta\n"));
    }

    #[test]
    fn sweep_recovers_planted_tap_and_has_shape_5x4() {
        let target = rand_vec(LEN, 21);
        let model: Vec<(Tap, Vec<f64>)> = Tap::ALL
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, if i == 0 { target.clone() } else { rand_vec(LEN, 30 + i as u64) }))
            .collect();
        let model: Vec<(Tap, &[f64])> = model.iter().map(|(t, v)| (*t, v.as_slice())).collect();
        let brains: Vec<Vec<f64>> = (0..4).map(|k| noisy(&target, 0.3, 40 + k)).collect();
        let brain: Vec<(Roi, &[f64])> = Roi::ALL.iter().zip(&brains).map(|(r, v)| (*r, v.as_slice())).collect();
        let s = best_layer_sweep(&model, &brain).unwrap();
        assert_eq!((s.rho.len(), s.rho[0].len()), (5, 4));
        assert!(s.best.iter().all(|&t| t == Tap::Conv1));
    }

    #[test]
    fn rsa_csv_has_contract_columns() {
        let brain = brain_of(&rand_vec(LEN, 7), 2);
        let a = analyze(&small_cfg(), &fake_cells(&[Rule::Random], &[0]), &brain, None).unwrap();
        let files = render_analysis(&a);
        let rsa = &files.iter().find(|f| f.0 == "rsa.csv").unwrap().1;
        assert_eq!(rsa.lines().next().unwrap(), RSA_COLUMNS.join(","));
        assert_eq!(rsa.lines().count(), 5);
        let back: Analysis = serde_json::from_str(&files.iter().find(|f| f.0 == "report.json").unwrap().1).unwrap();
        assert_eq!(back.rsa.len(), a.rsa.len());
    }

    #[test]
    fn smallest_synthetic_run_completes() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = crate::ingest::SynthSpec::tiny();
        spec.num_stimuli = 8;
        let data = crate::ingest::synth_dataset(&spec, 0).unwrap();
        let paths = crate::ingest::write_synth(&data, dir.path()).unwrap();
        let mut cfg = small_cfg();
        cfg.data.train = vec![paths.train];
        cfg.data.test = vec![paths.test];
        cfg.data.stimuli = paths.stimuli;
        cfg.data.brain = paths.brain;
        cfg.model.conv_widths = spec.arch.conv_widths;
        cfg.model.fc_width = spec.arch.fc_width;
        cfg.extraction.resolution = 32;
        cfg.training.rules = vec![Rule::Random];
        cfg.training.seeds = vec![0];
        cfg.output.dir = dir.path().join("run");
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.rsa.len(), 4);
        for f in ["rsa.csv", "report.json", "manifest.json", "metrics.csv", "checkpoints/random_seed0.ckpt"] {
            assert!(cfg.output.dir.join(f).exists(), "{f}");
        }
    }
}
