//! Snapshot ingest from CSV or JSON lines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AnalysisTable, ArchRules, BenchmarkSchema, DataError, IngestReport, ModelRecord, Result,
    RowIssue, TrainingType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for SnapshotFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(SnapshotFormat::Csv),
            "json-lines" | "jsonl" | "ndjson" => Ok(SnapshotFormat::JsonLines),
            other => Err(format!("unknown snapshot format `{other}`")),
        }
    }
}

impl SnapshotFormat {
    /// Guess from a file extension; defaults to CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "jsonl" || e == "ndjson" || e == "json" => SnapshotFormat::JsonLines,
            _ => SnapshotFormat::Csv,
        }
    }
}

/// Parses a snapshot with the bundled architecture rules.
pub fn parse_snapshot(raw: &[u8], format: SnapshotFormat, schema: &BenchmarkSchema) -> Result<AnalysisTable> {
    parse_snapshot_with_rules(raw, format, schema, &ArchRules::default())
}

pub fn parse_snapshot_with_rules(
    raw: &[u8],
    format: SnapshotFormat,
    schema: &BenchmarkSchema,
    rules: &ArchRules,
) -> Result<AnalysisTable> {
    schema.validate()?;
    let rows = match format {
        SnapshotFormat::Csv => read_csv(raw, schema)?,
        SnapshotFormat::JsonLines => read_json_lines(raw, schema)?,
    };
    if rows.is_empty() {
        return Err(DataError::EmptySnapshot);
    }
    build_table(rows, schema, rules)
}

/// A data row as text cells keyed by column name, with its 1-based source line.
struct RawRow {
    line: usize,
    cells: BTreeMap<String, Option<String>>,
}

fn read_csv(raw: &[u8], schema: &BenchmarkSchema) -> Result<Vec<RawRow>> {
    if raw.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(DataError::EmptySnapshot);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw);
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let header_names: Vec<String> =
        headers.iter().map(|h| h.trim_start_matches('\u{feff}').to_string()).collect();
    check_columns(schema, |c| header_names.iter().any(|h| h == c))?;

    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line() as usize);
                let cells = header_names
                    .iter()
                    .zip(record.iter())
                    .map(|(h, v)| (h.clone(), Some(v.to_string())))
                    .collect();
                rows.push(RawRow { line, cells });
            }
            Err(e) => {
                let fallback = rows.last().map_or(2, |r: &RawRow| r.line + 1);
                return Err(csv_error(e, fallback));
            }
        }
    }
    Ok(rows)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> DataError {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    DataError::FormatError { line, message: e.to_string() }
}

fn read_json_lines(raw: &[u8], schema: &BenchmarkSchema) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    let mut checked = false;
    for (idx, line_bytes) in raw.split(|b| *b == b'\n').enumerate() {
        let line = idx + 1;
        let text = std::str::from_utf8(line_bytes)
            .map_err(|e| DataError::FormatError { line, message: e.to_string() })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(text)
            .map_err(|e| DataError::FormatError { line, message: e.to_string() })?;
        let Value::Object(map) = value else {
            return Err(DataError::FormatError { line, message: "expected a JSON object".into() });
        };
        if !checked {
            check_columns(schema, |c| map.contains_key(c))?;
            checked = true;
        }
        let cells = map
            .into_iter()
            .map(|(k, v)| {
                let cell = match v {
                    Value::Null => None,
                    Value::String(s) => Some(s),
                    other => Some(other.to_string()),
                };
                (k, cell)
            })
            .collect();
        rows.push(RawRow { line, cells });
    }
    Ok(rows)
}

fn check_columns(schema: &BenchmarkSchema, has: impl Fn(&str) -> bool) -> Result<()> {
    let meta = schema.required_meta.names();
    let benches = schema.benchmarks.iter().map(|b| b.column.as_str());
    for name in meta.into_iter().chain(benches) {
        if !has(name) {
            return Err(DataError::MissingColumn(name.to_string()));
        }
    }
    Ok(())
}

fn is_missing_marker(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || ["na", "nan", "null", "none", "-"].iter().any(|m| s.eq_ignore_ascii_case(m))
}

enum RowOutcome {
    Parsed(ModelRecord),
    ZeroParams,
    Skipped(String),
}

fn parse_row(row: &RawRow, schema: &BenchmarkSchema, rules: &ArchRules) -> RowOutcome {
    let meta = &schema.required_meta;
    let cell = |name: &str| row.cells.get(name).cloned().flatten();

    let Some(name) = cell(&meta.model).filter(|s| !s.trim().is_empty()) else {
        return RowOutcome::Skipped(format!("missing `{}`", meta.model));
    };
    let params_text = cell(&meta.params).unwrap_or_default();
    let params_b: f64 = match params_text.trim().parse() {
        Ok(v) if f64::is_finite(v) => v,
        _ => return RowOutcome::Skipped(format!("unparseable `{}` value `{params_text}`", meta.params)),
    };
    if params_b <= 0.0 {
        return RowOutcome::ZeroParams;
    }
    let mut scores = BTreeMap::new();
    for b in &schema.benchmarks {
        let text = cell(&b.column).unwrap_or_default();
        let score = if is_missing_marker(&text) {
            None
        } else {
            match text.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => return RowOutcome::Skipped(format!("unparseable `{}` value `{text}`", b.column)),
            }
        };
        scores.insert(b.column.clone(), score);
    }
    let architecture_raw = cell(&meta.architecture).unwrap_or_default().trim().to_string();
    let optional = |key: &str| cell(key).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
    RowOutcome::Parsed(ModelRecord {
        name: name.trim().to_string(),
        params_b,
        training_type: TrainingType::from_label(&cell(&meta.training_type).unwrap_or_default()),
        arch_category: rules.map(&architecture_raw),
        architecture_raw,
        scores,
        precision: optional("precision"),
        license: optional("license"),
    })
}

fn build_table(rows: Vec<RawRow>, schema: &BenchmarkSchema, rules: &ArchRules) -> Result<AnalysisTable> {
    let mut report = IngestReport { data_rows: rows.len(), ..Default::default() };
    let mut parsed: Vec<(usize, ModelRecord)> = Vec::new();
    for row in &rows {
        match parse_row(row, schema, rules) {
            RowOutcome::Parsed(r) => parsed.push((row.line, r)),
            RowOutcome::ZeroParams => report.dropped_zero_params += 1,
            RowOutcome::Skipped(reason) => report.skipped.push(RowIssue { line: row.line, reason }),
        }
    }

    // Fraction-scale columns (every present value ≤ 1.5) are moved to percent.
    for b in &schema.benchmarks {
        let present: Vec<f64> = parsed.iter().filter_map(|(_, r)| r.score(&b.column)).collect();
        if !present.is_empty() && present.iter().all(|v| *v <= 1.5) {
            for (_, r) in &mut parsed {
                if let Some(Some(v)) = r.scores.get_mut(&b.column) {
                    *v *= 100.0;
                }
            }
            let msg = format!("`{}` looks fraction-scaled (all values <= 1.5); multiplied by 100", b.column);
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
    }

    let mut records = Vec::with_capacity(parsed.len());
    for (line, r) in parsed {
        let out_of_range = schema
            .benchmarks
            .iter()
            .find(|b| r.score(&b.column).is_some_and(|v| !(0.0..=100.0).contains(&v)));
        match out_of_range {
            Some(b) => report.skipped.push(RowIssue {
                line,
                reason: format!("`{}` score {} outside [0, 100]", b.column, r.score(&b.column).unwrap()),
            }),
            None => records.push(r),
        }
    }
    report.skipped.sort_by_key(|i| i.line);
    report.parsed = records.len();
    if records.is_empty() {
        return Err(DataError::EmptySnapshot);
    }
    let mut table = AnalysisTable::from_records(records, schema.clone())?;
    table.set_ingest_report(report);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "model,params_b,type,architecture,ARC,HellaSwag,MMLU,TruthfulQA,Winogrande,GSM8K,precision,license\n";

    fn csv(rows: &[&str]) -> Vec<u8> {
        let mut s = HEADER.to_string();
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s.into_bytes()
    }

    fn schema() -> BenchmarkSchema {
        BenchmarkSchema::default_six()
    }

    #[test]
    fn parses_rows_and_derives_categories() {
        let raw = csv(&[
            "a/llama-7b,6.74,pretrained,LlamaForCausalLM,53.1,78.6,46.9,38.8,74.0,14.5,float16,llama2",
            "b/bloom,0.56,fine-tuned,BloomForCausalLM,30,40,25,40,50,0,bfloat16,",
        ]);
        let t = parse_snapshot(&raw, SnapshotFormat::Csv, &schema()).unwrap();
        assert_eq!(t.len(), 2);
        let r = &t.records()[0];
        assert_eq!(r.arch_category, crate::data::ArchCategory::Llama);
        assert_eq!(r.training_type, TrainingType::Pretrained);
        assert_eq!(r.precision.as_deref(), Some("float16"));
        assert_eq!(t.records()[1].license, None);
        assert_eq!(t.ingest().parsed, 2);
    }

    #[test]
    fn header_only_is_empty_snapshot() {
        assert!(matches!(parse_snapshot(&csv(&[]), SnapshotFormat::Csv, &schema()), Err(DataError::EmptySnapshot)));
        assert!(matches!(parse_snapshot(b"", SnapshotFormat::Csv, &schema()), Err(DataError::EmptySnapshot)));
    }

    #[test]
    fn bad_params_row_is_skipped() {
        let raw = csv(&[
            "a,abc,pretrained,LlamaForCausalLM,50,50,50,50,50,50,,",
            "b,7,pretrained,LlamaForCausalLM,50,50,50,50,50,50,,",
            "c,0,pretrained,LlamaForCausalLM,50,50,50,50,50,50,,",
        ]);
        let t = parse_snapshot(&raw, SnapshotFormat::Csv, &schema()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.ingest().skipped.len(), 1);
        assert_eq!(t.ingest().skipped[0].line, 2);
        assert_eq!(t.ingest().dropped_zero_params, 1);
        assert_eq!(t.ingest().data_rows, 3);
    }

    #[test]
    fn missing_column_is_reported() {
        let raw = b"model,params_b,type,architecture,ARC\nx,1,pretrained,Llama,50\n";
        match parse_snapshot(raw, SnapshotFormat::Csv, &schema()) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "HellaSwag"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_csv_is_format_error() {
        let mut raw = csv(&["a,7,pretrained,LlamaForCausalLM,50,50,50,50,50,50,,"]);
        raw.extend_from_slice(b"b,7,pretrained\n");
        assert!(matches!(
            parse_snapshot(&raw, SnapshotFormat::Csv, &schema()),
            Err(DataError::FormatError { line: 3, .. })
        ));
    }

    #[test]
    fn empty_score_cells_are_missing() {
        let raw = csv(&["a,7,pretrained,LlamaForCausalLM,50,50,50,50,50,,,"]);
        let t = parse_snapshot(&raw, SnapshotFormat::Csv, &schema()).unwrap();
        assert_eq!(t.records()[0].score("GSM8K"), None);
        assert_eq!(t.records()[0].scores.get("GSM8K"), Some(&None));
    }

    #[test]
    fn fraction_scores_are_rescaled_with_warning() {
        let raw = csv(&[
            "a,7,pretrained,LlamaForCausalLM,0.5,50,50,50,50,50,,",
            "b,7,pretrained,LlamaForCausalLM,0.25,50,50,50,50,50,,",
        ]);
        let t = parse_snapshot(&raw, SnapshotFormat::Csv, &schema()).unwrap();
        assert_eq!(t.records()[0].score("ARC"), Some(50.0));
        assert_eq!(t.records()[1].score("ARC"), Some(25.0));
        assert_eq!(t.ingest().warnings.len(), 1);
    }

    #[test]
    fn out_of_range_scores_skip_the_row() {
        let raw = csv(&[
            "a,7,pretrained,LlamaForCausalLM,150,50,50,50,50,50,,",
            "b,7,pretrained,LlamaForCausalLM,50,50,50,50,50,50,,",
        ]);
        let t = parse_snapshot(&raw, SnapshotFormat::Csv, &schema()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.ingest().skipped[0].line, 2);
    }

    #[test]
    fn json_lines_ingest() {
        let raw = br#"{"model":"a","params_b":7,"type":"instruction-tuned","architecture":"MistralForCausalLM","ARC":60,"HellaSwag":80,"MMLU":60,"TruthfulQA":50,"Winogrande":75,"GSM8K":null}

{"model":"b","params_b":"0","type":"","architecture":"x","ARC":1,"HellaSwag":1,"MMLU":1,"TruthfulQA":1,"Winogrande":1,"GSM8K":1}
"#;
        let t = parse_snapshot(raw, SnapshotFormat::JsonLines, &schema()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.ingest().dropped_zero_params, 1);
        assert_eq!(t.records()[0].score("GSM8K"), None);
        assert_eq!(t.records()[0].training_type, TrainingType::InstructionTune);

        let bad = b"{\"model\":\"a\"}\nnot json\n";
        assert!(matches!(
            parse_snapshot(bad, SnapshotFormat::JsonLines, &schema()),
            Err(DataError::MissingColumn(_))
        ));
        let bad = br#"{"model":"a","params_b":7,"type":"","architecture":"x","ARC":1,"HellaSwag":1,"MMLU":1,"TruthfulQA":1,"Winogrande":1,"GSM8K":1}
[1,2]
"#;
        assert!(matches!(
            parse_snapshot(bad, SnapshotFormat::JsonLines, &schema()),
            Err(DataError::FormatError { line: 2, .. })
        ));
    }
}
