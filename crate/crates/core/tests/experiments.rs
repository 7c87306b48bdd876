//! End-to-end runs through the TOML spec interface.

use std::fmt::Write as _;
use std::fs;

use sgfd::harness::{run_experiment, EntryStatus, ExperimentReport, ExperimentSpec, Optimizer, REPORT_FILE};
use sgfd::Trace;

const SPEC: &str = r#"
output_dir = "results"
record_stride = 25

[[combination]]
name = "logistic-file"
problem = "logistic"
data = "train.csv"
l2 = 0.1
optimizer = "sgfd"
variant = "minibatch-shared-direction"
batch = 4
beta = 12.0
iterations = 1000
replications = 3
seed = 10

[[combination]]
name = "quad-nested"
problem = "quadratic"
dim = 3
condition = 2.0
noise_sd = 0.3
optimizer = "momentum"
variant = "nested-batch"
batch = 2
inner = 3
directions = "normal"
beta = 5.0
p = 1.0
iterations = 1000
replications = 3
seed = 11

[[combination]]
name = "quad-sgd"
problem = "quadratic"
dim = 3
condition = 2.0
noise_sd = 0.3
optimizer = "reference-sgd"
beta = 2.0
iterations = 1000
seed = 12
"#;

fn dataset() -> String {
    let mut out = String::from("# label, x1, x2\n");
    for i in 0..60 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.91).cos();
        let label = if a + 0.5 * b > 0.1 { 1 } else { -1 };
        writeln!(out, "{label}, {a:.4}, {b:.4}").unwrap();
    }
    out
}

#[test]
fn every_referenced_file_exists_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.csv"), dataset()).unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    let spec = ExperimentSpec::load(&dir.path().join("spec.toml")).unwrap();
    let report = run_experiment(&spec).unwrap();

    assert_eq!(report.entries.len(), 3);
    assert_eq!(report.entries[1].optimizer, Optimizer::Momentum);
    for e in &report.entries {
        assert_eq!(e.status, EntryStatus::Ok, "{}: {:?}", e.name, e.error);
        let path = report.output_dir.join(e.csv.as_ref().unwrap());
        let text = fs::read_to_string(&path).unwrap();
        let trace = Trace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(trace.len(), 40);
        assert_eq!(trace.to_csv_string().unwrap(), text);
    }
    let momentum = Trace::load_csv(&report.output_dir.join("quad-nested.csv")).unwrap();
    assert!(momentum.rows.iter().all(|r| r.var_mk.is_some()));

    let on_disk: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(report.output_dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.entries, report.entries);
}
