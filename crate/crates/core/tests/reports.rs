use biwhiten::io::{
    read_matrix, read_report, write_matrix, write_report, Envelope, MatrixFormat, MatrixSource, Provenance,
    RankReportJson, ReadOptions, DEFAULT_TOP_K,
};
use biwhiten::simulate::{gen_signal, sample_counts, NoiseFamily, SignalSpec};
use biwhiten::{rank, select_beta, AdaptOptions, AdaptReport, BiwhitenOptions, NoiseModel};

fn rank_report() -> (RankReportJson, usize) {
    let x = gen_signal(&SignalSpec::lognormal_uniform(60, 150, 3), 5).unwrap();
    let y = sample_counts(&x, NoiseFamily::Poisson, 5).unwrap();
    let model = NoiseModel::poisson();
    let report = rank(&y, &model, &BiwhitenOptions::default()).unwrap();
    let len = report.largest_block().unwrap().esd.len();
    (RankReportJson::new(&report, &model, Provenance::new("rank"), DEFAULT_TOP_K), len)
}

#[test]
fn rank_report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rank.json");
    let (report, _) = rank_report();
    write_report(&path, &report).unwrap();
    let back: RankReportJson = read_report(&path).unwrap();
    assert_eq!(back, report);
}

#[test]
fn histogram_sidecar_counts_every_eigenvalue() {
    let (report, len) = rank_report();
    let csv = report.histogram_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin,lower,upper,count"));
    let total: usize = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, len);
}

#[test]
fn adapt_report_round_trips_in_an_envelope() {
    let x = gen_signal(&SignalSpec::full_rank(40, 80), 3).unwrap();
    let y = sample_counts(&x, NoiseFamily::Poisson, 3).unwrap();
    let report = select_beta(&y, &[0.0, 0.5, 1.0], &AdaptOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapt.json");
    write_report(&path, &Envelope::new(Provenance::new("adapt"), report.clone())).unwrap();
    let back: Envelope<AdaptReport> = read_report(&path).unwrap();
    assert_eq!(back.result, report);
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("old.json");
    let (mut report, _) = rank_report();
    report.schema_version = "0".into();
    write_report(&path, &report).unwrap();
    assert!(read_report::<RankReportJson>(&path).is_err());
}

#[test]
fn count_matrices_round_trip_through_both_formats() {
    let x = gen_signal(&SignalSpec::lognormal_uniform(20, 30, 2), 1).unwrap();
    let y = sample_counts(&x, NoiseFamily::Poisson, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["y.mtx", "y.csv"] {
        let path = dir.path().join(name);
        write_matrix(&path, &y, MatrixFormat::from_path(&path)).unwrap();
        let back = read_matrix(&MatrixSource::new(&path), &ReadOptions::default()).unwrap();
        assert_eq!(back, y, "{name}");
    }
}
