#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use veriscope::io::{load_database, load_labels, load_truth, read_text};
use veriscope::{evaluate_with_provenance, parse_query, AnnotatedDes, Database, QueryResult, TupleId, World};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn database() -> Arc<Database> {
    Arc::new(load_database(&fixture("schema.toml"), None).unwrap())
}

pub fn labeled(file: &str) -> AnnotatedDes {
    load_labels(&fixture(file), database()).unwrap()
}

/// The running example with its labels.
pub fn des() -> AnnotatedDes {
    labeled("labels.csv")
}

pub fn truth() -> World {
    load_truth(&fixture("truth.csv"), &database()).unwrap()
}

pub fn run(des: &AnnotatedDes, query_file: &str) -> QueryResult {
    let plan = parse_query(&read_text(&fixture(query_file)).unwrap(), des.db()).unwrap();
    evaluate_with_provenance(des, &plan).unwrap()
}

// tuple names of the running example
pub const A: [TupleId; 4] = [TupleId(1), TupleId(2), TupleId(3), TupleId(4)];
pub const R: [TupleId; 4] = [TupleId(5), TupleId(6), TupleId(7), TupleId(8)];
pub const E: [TupleId; 4] = [TupleId(9), TupleId(10), TupleId(11), TupleId(12)];

/// `x1` denotes the first tuple of each relation, like `a1`.
pub fn t(name: &str) -> TupleId {
    let (rel, idx) = name.split_at(1);
    let i: usize = idx.parse::<usize>().unwrap() - 1;
    match rel {
        "a" => A[i],
        "r" => R[i],
        "e" => E[i],
        _ => panic!("unknown tuple {name}"),
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
