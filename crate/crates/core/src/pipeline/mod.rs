//! Experiment configuration, orchestration and on-disk artifacts.

mod artifacts;
mod config;
mod experiment;

pub use artifacts::{digest_path, read_features_csv, write_features_csv, write_manifest, FileDigest, Manifest, MANIFEST_FILE};
pub use config::{
    DataConfig, ExperimentConfig, ExtractionConfig, ModelConfig, OutputConfig, RoiMap, StatsConfig, SynthConfig,
    TrainingConfig,
};
pub use experiment::{
    accuracy_table_markdown, analyze, parse_accuracy_csv, best_layer_sweep, checkpoint_name, load_inputs, load_training_data, parse_partial_csv, parse_rsa_csv, partial_table_markdown,
    render_analysis, rsa_table_markdown, run_cell, run_experiment,
    run_experiment_with, tap_index, tap_rdm_vectors, train_cells, write_analysis, AccuracyRow, Analysis,
    BrainVectors, CeilingRow, Cell, CellData, EffectRow, Inputs, LayerSweep, PairwiseRow, PartialRow, RsaRow,
    SubjectRow, SweepRow, ACCURACY_COLUMNS, PARTIAL_COLUMNS, RSA_COLUMNS,
};
