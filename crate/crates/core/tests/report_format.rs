//! The report tables are checked against fixtures that carry reference
//! values as labels. Only the layout is under test, not the numbers.

use plrsa::ingest::Roi;
use plrsa::pipeline::{
    accuracy_table_markdown, parse_accuracy_csv, parse_partial_csv, parse_rsa_csv, partial_table_markdown,
    render_analysis, rsa_table_markdown, Analysis,
};

const RSA: &str = include_str!("fixtures/table2_rsa.csv");
const PARTIAL: &str = include_str!("fixtures/table3_partial.csv");
const ACCURACY: &str = include_str!("fixtures/table1_accuracy.csv");

fn analysis() -> Analysis {
    Analysis {
        rois: Roi::ALL.to_vec(),
        seeds: (0..5).collect(),
        rsa: parse_rsa_csv(RSA).unwrap(),
        pairwise: vec![],
        noise_ceiling: vec![],
        per_subject: vec![],
        effect_sizes: vec![],
        partial_roi: Roi::V1,
        partial_rsa: parse_partial_csv(PARTIAL).unwrap(),
        sweeps: vec![],
        accuracy: parse_accuracy_csv(ACCURACY).unwrap(),
        notes: vec![],
    }
}

fn file(files: &[(String, String)], name: &str) -> String {
    files.iter().find(|f| f.0 == name).unwrap().1.clone()
}

#[test]
fn rsa_table_layout() {
    let a = analysis();
    assert_eq!(a.rsa.len(), 20);
    assert_eq!(rsa_table_markdown(&a.rsa), include_str!("fixtures/table2_expected.md"));
}

#[test]
fn partial_table_layout() {
    assert_eq!(partial_table_markdown(&analysis().partial_rsa), include_str!("fixtures/table3_expected.md"));
}

#[test]
fn accuracy_table_layout() {
    assert_eq!(accuracy_table_markdown(&analysis().accuracy), include_str!("fixtures/table1_expected.md"));
}

#[test]
fn csv_tables_round_trip_through_the_renderer() {
    let files = render_analysis(&analysis());
    assert_eq!(file(&files, "rsa.csv"), RSA);
    assert_eq!(file(&files, "partial_rsa.csv"), PARTIAL);
    assert_eq!(file(&files, "accuracy.csv"), ACCURACY);
    assert_eq!(file(&files, "rsa_table.md"), include_str!("fixtures/table2_expected.md"));
}

#[test]
fn report_json_round_trips() {
    let a = analysis();
    let json = file(&render_analysis(&a), "report.json");
    let back: Analysis = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn wrong_header_is_rejected() {
    assert!(parse_rsa_csv("condition,roi\nrandom,V1\n").is_err());
    assert!(parse_partial_csv("condition,rho,rho_partial,delta\n").is_err());
}
