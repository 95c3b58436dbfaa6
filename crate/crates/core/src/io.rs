//! On-disk formats: the relation schema file, relation/label/truth CSVs and
//! the report files written by the command-line tool.
//!
//! A schema file is TOML with one `[[relation]]` table per relation:
//!
//! ```toml
//! [[relation]]
//! name = "Roles"
//! file = "roles.csv"
//! key = "Person"          # optional
//! columns = [
//!   { name = "Organization", type = "string" },
//!   { name = "Role", type = "string" },
//!   { name = "Person", type = "string" },
//! ]
//! ```
//!
//! Relation files are CSV with a header naming every column. Tuple ids are
//! assigned densely from 1 in relation order, then row order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{DesError, FormatError};
use crate::experiments::QualityReport;
use crate::mes::MesScore;
use crate::model::{AnnotatedDes, Column, ColumnType, Database, Label, RelationData, Schema, TupleId, Value, World};
use crate::query::{AnnotatedOutput, QueryResult};
use crate::reduce::ReductionTrace;
use crate::risky::RiskReport;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    relation: Vec<RelationSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationSpec {
    name: String,
    file: PathBuf,
    key: Option<String>,
    columns: Vec<ColumnSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnSpec {
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    std::fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, FormatError> {
    let file = std::fs::File::open(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Loads every relation listed in the schema file. Relative file names are
/// resolved against `relations_dir`, or the schema file's directory.
pub fn load_database(schema_path: &Path, relations_dir: Option<&Path>) -> Result<Database, FormatError> {
    let text = read_text(schema_path)?;
    let spec: SchemaFile = toml::from_str(&text).map_err(|e| invalid(schema_path, e.to_string()))?;
    let base = relations_dir
        .map(Path::to_path_buf)
        .or_else(|| schema_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let mut relations = Vec::new();
    for rel in spec.relation {
        let mut columns = Vec::new();
        for c in &rel.columns {
            let ty = ColumnType::parse_name(&c.ty)
                .ok_or_else(|| invalid(schema_path, format!("column {}: unknown type {}", c.name, c.ty)))?;
            columns.push(Column::new(c.name.clone(), ty));
        }
        let mut schema = Schema::new(columns);
        if let Some(key) = &rel.key {
            schema = schema
                .with_key(key)
                .ok_or_else(|| invalid(schema_path, format!("relation {}: no key column {}", rel.name, key)))?;
        }
        let path = base.join(&rel.file);
        let rows = read_rows(&path, &rel.name, &schema)?;
        relations.push(RelationData::new(rel.name, schema, rows));
    }
    Ok(Database::new(relations)?)
}

fn read_rows(path: &Path, relation: &str, schema: &Schema) -> Result<Vec<Vec<Value>>, FormatError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    // position in the file of each schema column
    let mut positions = Vec::new();
    for c in &schema.columns {
        let pos = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(&c.name))
            .ok_or_else(|| invalid(path, format!("missing column {}", c.name)))?;
        positions.push(pos);
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(DesError::Arity {
                relation: relation.to_string(),
                row: i + 1,
                expected: headers.len(),
                found: record.len(),
            }
            .into());
        }
        let mut row = Vec::with_capacity(positions.len());
        for (c, &pos) in schema.columns.iter().zip(&positions) {
            let raw = &record[pos];
            let v = Value::parse(raw, c.ty).ok_or_else(|| DesError::CellType {
                relation: relation.to_string(),
                column: c.name.clone(),
                expected: c.ty.name().to_string(),
                found: raw.to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_id(path: &Path, raw: &str, db: &Database) -> Result<TupleId, FormatError> {
    let id = raw
        .parse::<u32>()
        .map(TupleId)
        .map_err(|_| invalid(path, format!("bad tuple id {raw:?}")))?;
    if !db.contains(id) {
        return Err(DesError::UnknownTuple(id).into());
    }
    Ok(id)
}

fn parse_bool(path: &Path, raw: &str) -> Result<bool, FormatError> {
    match raw {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(invalid(path, format!("bad label {raw:?}"))),
    }
}

/// Reads `tuple_id,label,err` rows; the label is `0`, `1` or `unknown`
/// (an empty label also means unknown) and the error is empty for unknown labels.
pub fn load_labels(path: &Path, db: Arc<Database>) -> Result<AnnotatedDes, FormatError> {
    let mut des = AnnotatedDes::unlabeled(db);
    let mut reader = csv_reader(path)?;
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = parse_id(path, field(0), des.db())?;
        let err = match field(2) {
            "" => None,
            raw => Some(
                raw.parse::<f64>()
                    .map_err(|_| invalid(path, format!("bad error probability {raw:?}")))?,
            ),
        };
        let label = match (field(1).to_ascii_lowercase().as_str(), err) {
            ("unknown" | "" | "⊥", None) => Label::Unknown,
            ("unknown" | "" | "⊥", Some(_)) => return Err(DesError::ErrOnUnlabeled(id).into()),
            (_, None) => return Err(DesError::MissingErr(id).into()),
            (raw, Some(err)) => Label::known(parse_bool(path, raw)?, err),
        };
        des.set_label(id, label)?;
    }
    Ok(des)
}

/// Reads `tuple_id,label` rows with labels `0` or `1`.
pub fn load_truth(path: &Path, db: &Database) -> Result<World, FormatError> {
    let mut world = World::new();
    let mut reader = csv_reader(path)?;
    for record in reader.records() {
        let record = record?;
        let id = parse_id(path, record.get(0).unwrap_or(""), db)?;
        world.set(id, parse_bool(path, record.get(1).unwrap_or(""))?);
    }
    Ok(world)
}

/// Floats in reports: shortest round-trip form, `inf` for infinity, empty when absent.
pub fn fmt_f64(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v == f64::INFINITY => "inf".to_string(),
        Some(v) => format!("{v}"),
    }
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 input")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn output_name(i: usize) -> String {
    format!("o{}", i + 1)
}

pub fn outputs_csv(result: &QueryResult) -> String {
    let mut header = vec!["output".to_string()];
    header.extend(result.columns.iter().cloned());
    let rows = result.outputs.iter().enumerate().map(|(i, o)| {
        let mut row = vec![output_name(i)];
        row.extend(o.values.iter().map(|v| v.to_string()));
        row
    });
    csv_string(&header, rows)
}

pub fn provenance_csv(result: &QueryResult) -> String {
    let rows = result.outputs.iter().enumerate().map(|(i, o)| {
        vec![
            output_name(i),
            o.render_values(),
            o.prov.to_string(),
            o.derived.to_string(),
        ]
    });
    csv_string(&strings(&["output", "values", "provenance", "derived"]), rows)
}

/// One row per scored output: `(index, output, score)`.
pub fn mes_csv(rows: &[(usize, &AnnotatedOutput, &MesScore)]) -> String {
    let header = strings(&[
        "output",
        "derived",
        "mes",
        "log_mes",
        "averaged_mes",
        "method",
        "witness",
        "values",
    ]);
    let rows = rows.iter().map(|(i, o, s)| {
        vec![
            output_name(*i),
            o.derived.to_string(),
            fmt_f64(Some(s.value())),
            format!("{}", s.log_value.ln()),
            fmt_f64(s.averaged()),
            s.method.name().to_string(),
            s.witness.render(),
            o.render_values(),
        ]
    });
    csv_string(&header, rows)
}

pub fn risky_csv(output: usize, reports: &[RiskReport]) -> String {
    let header = strings(&[
        "output",
        "tuple",
        "class",
        "baseline_mes",
        "zero_err_mes",
        "probed_q",
        "impairing_hint",
    ]);
    let rows = reports.iter().map(|r| {
        vec![
            output_name(output),
            r.tuple.0.to_string(),
            r.class.name().to_string(),
            fmt_f64(r.baseline.map(|v| v.prob())),
            fmt_f64(r.zero_err.map(|v| v.prob())),
            fmt_f64(r.probed_q),
            r.impairing_hint.map(|b| b.to_string()).unwrap_or_default(),
        ]
    });
    csv_string(&header, rows)
}

fn render_label(l: Label) -> String {
    match l {
        Label::Unknown => "unknown".to_string(),
        Label::Known { value, err } => format!("{}/{}", u8::from(value), err),
    }
}

pub fn trace_csv(trace: &ReductionTrace) -> String {
    let header = strings(&[
        "step",
        "kind",
        "cost",
        "target",
        "max_mes",
        "log_max_mes",
        "unknown_outputs",
        "changes",
        "derived",
    ]);
    let rows = trace.steps.iter().enumerate().map(|(i, s)| {
        vec![
            i.to_string(),
            s.kind.name().to_string(),
            s.cost.to_string(),
            fmt_f64(s.target),
            fmt_f64(s.max_mes.map(|m| m.prob())),
            s.max_mes.map(|m| format!("{}", m.ln())).unwrap_or_default(),
            s.unknown_outputs.to_string(),
            s.changes
                .iter()
                .map(|(t, l)| format!("{}={}", t.0, render_label(*l)))
                .collect::<Vec<_>>()
                .join(" "),
            s.derived.iter().map(|d| d.symbol()).collect(),
        ]
    });
    csv_string(&header, rows)
}

/// Run summary as JSON. `extra` entries are appended verbatim.
pub fn summary_json(trace: &ReductionTrace, extra: &BTreeMap<String, serde_json::Value>) -> String {
    let mut map = serde_json::Map::new();
    map.insert("termination".into(), trace.termination.name().into());
    map.insert("budget".into(), trace.budget.into());
    map.insert("total_cost".into(), trace.total_cost().into());
    map.insert("steps".into(), (trace.steps.len() - 1).into());
    let prob = |m: Option<crate::model::LogProb>| match m {
        Some(m) => serde_json::Value::from(m.prob()),
        None => serde_json::Value::Null,
    };
    map.insert("initial_max_mes".into(), prob(trace.initial_max_mes()));
    map.insert("final_max_mes".into(), prob(trace.final_max_mes()));
    map.insert(
        "mes_log_ratio".into(),
        match crate::experiments::mes_log_ratio(trace) {
            Some(r) if r.is_finite() => r.into(),
            Some(_) => "inf".into(),
            None => serde_json::Value::Null,
        },
    );
    map.insert(
        "final_unknown_outputs".into(),
        trace.steps.last().map_or(0, |s| s.unknown_outputs).into(),
    );
    for (k, v) in extra {
        map.insert(k.clone(), v.clone());
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("plain json");
    s.push('\n');
    s
}

pub fn aggregate_csv(reports: &[QualityReport]) -> String {
    let header = strings(&[
        "scenario",
        "strategy",
        "repeats",
        "mean_mes_log_ratio",
        "worst_f1_auc",
        "mean_f1_auc",
        "mean_cost",
    ]);
    let rows = reports.iter().map(|r| {
        let mean_cost =
            r.runs.iter().map(|x| x.trace.total_cost() as f64).sum::<f64>() / r.runs.len().max(1) as f64;
        vec![
            r.scenario.name().to_string(),
            r.strategy.name(),
            r.runs.len().to_string(),
            fmt_f64(r.mean_log_ratio()),
            fmt_f64(Some(r.worst_f1_auc())),
            fmt_f64(Some(r.mean_f1_auc())),
            fmt_f64(Some(mean_cost)),
        ]
    });
    csv_string(&header, rows)
}

/// Long-format F1 curves, one row per (scenario, strategy, repeat, step).
pub fn curves_csv(reports: &[QualityReport]) -> String {
    let header = strings(&["scenario", "strategy", "repeat", "cost", "precision", "recall", "f1"]);
    let mut rows = Vec::new();
    for r in reports {
        for run in &r.runs {
            for (cost, f) in &run.curve {
                rows.push(vec![
                    r.scenario.name().to_string(),
                    r.strategy.name(),
                    run.repeat.to_string(),
                    cost.to_string(),
                    fmt_f64(Some(f.precision)),
                    fmt_f64(Some(f.recall)),
                    fmt_f64(Some(f.f1)),
                ]);
            }
        }
    }
    csv_string(&header, rows)
}

/// Writes a labels file in the format [`load_labels`] reads.
pub fn labels_csv(des: &AnnotatedDes) -> String {
    let rows = des.db().tuple_ids().map(|t| match des.label(t) {
        Label::Unknown => vec![t.0.to_string(), "unknown".into(), String::new()],
        Label::Known { value, err } => vec![t.0.to_string(), u8::from(value).to_string(), format!("{err}")],
    });
    csv_string(&strings(&["tuple_id", "label", "err"]), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tri;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("schema.toml"),
            r#"
[[relation]]
name = "R"
file = "r.csv"
key = "Id"
columns = [{ name = "Id", type = "int" }, { name = "When", type = "date" }]
"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("r.csv"), "When,Id\n04.03.2018,1\n2017-04-02,2\n").unwrap();
        let p = dir.path().join("schema.toml");
        (dir, p)
    }

    #[test]
    fn loads_schema_and_rows() {
        let (_d, p) = fixture();
        let db = load_database(&p, None).unwrap();
        let (rel, t) = db.tuple(TupleId(2)).unwrap();
        assert_eq!(rel.name, "R");
        assert_eq!(t.values[0], Value::Int(2));
        assert_eq!(t.values[1].to_string(), "02.04.2017");
    }

    #[test]
    fn bad_cell_is_reported() {
        let (d, p) = fixture();
        std::fs::write(d.path().join("r.csv"), "Id,When\nx,04.03.2018\n").unwrap();
        assert!(matches!(
            load_database(&p, None),
            Err(FormatError::Des(DesError::CellType { .. }))
        ));
        std::fs::write(d.path().join("r.csv"), "Id,Other\n1,2\n").unwrap();
        assert!(matches!(load_database(&p, None), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn labels_round_trip() {
        let (d, p) = fixture();
        let db = Arc::new(load_database(&p, None).unwrap());
        let lp = d.path().join("labels.csv");
        std::fs::write(&lp, "tuple_id,label,err\n1,1,0.3\n2,unknown,\n").unwrap();
        let des = load_labels(&lp, db.clone()).unwrap();
        assert_eq!(des.label(TupleId(1)), Label::known(true, 0.3));
        assert_eq!(des.tri(TupleId(2)), Tri::Unknown);
        std::fs::write(&lp, labels_csv(&des)).unwrap();
        assert_eq!(load_labels(&lp, db.clone()).unwrap().labels(), des.labels());

        std::fs::write(&lp, "tuple_id,label,err\n2,unknown,0.1\n").unwrap();
        assert!(matches!(
            load_labels(&lp, db.clone()),
            Err(FormatError::Des(DesError::ErrOnUnlabeled(_)))
        ));
        std::fs::write(&lp, "tuple_id,label,err\n2,1,0.7\n").unwrap();
        assert!(matches!(
            load_labels(&lp, db.clone()),
            Err(FormatError::Des(DesError::ErrOutOfRange { .. }))
        ));
        std::fs::write(&lp, "tuple_id,label,err\n9,1,0.1\n").unwrap();
        assert!(matches!(
            load_labels(&lp, db),
            Err(FormatError::Des(DesError::UnknownTuple(_)))
        ));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(Some(0.224)), "0.224");
        assert_eq!(fmt_f64(Some(f64::INFINITY)), "inf");
        assert_eq!(fmt_f64(None), "");
    }
}
