use std::path::Path;
use std::process::{Command, Output};

fn selinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selinv")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_small_laplacian_on_a_grid() {
    let o = selinv(&["verify", "--gen", "lap2d:4x4", "--grid", "2x2", "--tree", "shifted", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("parallel (2x2 grid, shifted tree, seed 7)"));
}

#[test]
fn verify_single_entry_has_zero_error() {
    let o = selinv(&["verify", "--gen", "lap2d:1x1", "--grid", "1x1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("max relative error 0.000e0"));
}

#[test]
fn singular_matrix_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.mtx");
    std::fs::write(&path, "%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 0\n2 2 0\n3 3 0\n").unwrap();
    let o = selinv(&["verify", "--matrix", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("factorization failed"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_fail_loudly() {
    assert_eq!(selinv(&["verify", "--gen", "lap2d:3x3", "--bogus"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify", "--gen", "lap2d:3x3", "--matrix", "x.mtx"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify", "--gen", "lap2d:3x3", "--grid", "0x2"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify", "--gen", "lap2d:3x3", "--tree", "star"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify", "--gen", "cube:3"]).status.code(), Some(2));
    assert_eq!(selinv(&["verify", "--gen", "tridiag:2001"]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let o = selinv(&["experiment", "--help"]);
    let text = stdout(&o);
    for flag in ["--matrix", "--gen", "--grid", "--tree", "--seed", "--max-supernode", "--out", "--schemes", "--seeds", "--bins", "--threads"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let o = selinv(&["invert", "--help"]);
    assert!(stdout(&o).contains("--verify"));
}

#[test]
fn invert_writes_entries_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inv");
    let o = selinv(&["invert", "--gen", "lap2d:5x4", "--grid", "2x2", "--tree", "binary", "--verify", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let entries = std::fs::read_to_string(out.join("selected_inverse.csv")).unwrap();
    assert!(entries.starts_with("row,col,value\n"));
    let heat = std::fs::read_to_string(out.join("binary_colbcast_sent.csv")).unwrap();
    assert_eq!(heat.lines().count(), 5);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_on_one_rank_writes_zero_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = selinv(&["experiment", "--gen", "lap2d:4x4", "--grid", "1x1", "--seeds", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = read_dir_sorted(&out);
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    for scheme in ["flat", "binary", "shifted"] {
        for stem in ["colbcast_sent", "rowreduce_received"] {
            assert!(names.contains(&format!("{scheme}_{stem}.csv").as_str()));
            assert!(names.contains(&format!("{scheme}_{stem}_hist.csv").as_str()));
        }
    }
    assert!(names.contains(&"comparison.json"));
    let heat = std::fs::read_to_string(out.join("flat_colbcast_sent.csv")).unwrap();
    assert_eq!(heat, "grid_row,grid_col,bytes\n0,0,0\n");
    let hist = std::fs::read_to_string(out.join("shifted_rowreduce_received_hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 17);
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = selinv(&[
            "experiment", "--gen", "lap2d:10x10", "--grid", "3x3", "--seeds", "3", "--seed", "42", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        read_dir_sorted(&out)
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.len(), 13);
    assert_eq!(a, b);
}

#[test]
fn experiment_on_the_8x8_grid_reports_three_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = selinv(&["experiment", "--gen", "lap2d:24x24", "--grid", "8x8", "--seeds", "6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json = std::fs::read_to_string(out.join("comparison.json")).unwrap();
    assert!(json.contains("\"schema_version\": 1"));
    for scheme in ["\"flat\"", "\"binary\"", "\"shifted\""] {
        assert_eq!(json.matches(&format!("\"scheme\": {scheme}")).count(), 1, "{scheme}");
    }
    assert!(json.contains("\"load_balance\": {"));
    assert!(json.contains("\"shifted_stddev_below_binary\": true"));
}
