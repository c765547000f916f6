use std::fs;
use std::io::Write;
use std::path::Path;

use super::expr::ConstantTable;
use super::problem::{Problem, ProblemRecord};
use crate::error::{Error, Result};

/// How to react to invalid records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strictness {
    /// Report and skip.
    #[default]
    Lenient,
    /// Fail on the first invalid record.
    Strict,
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub problems: Vec<Problem>,
    /// Skipped records, each carrying its line number.
    pub errors: Vec<Error>,
    pub warnings: Vec<String>,
}

/// Parses one JSONL line into a validated problem.
pub fn parse_line(line: &str, constants: &ConstantTable) -> Result<Problem> {
    let rec: ProblemRecord = serde_json::from_str(line)?;
    Problem::from_record(rec, constants)
}

/// Loads a JSONL dataset. Blank lines are ignored.
pub fn load_dataset(path: &Path, constants: &ConstantTable, strictness: Strictness) -> Result<LoadReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_str(&text, &path.display().to_string(), constants, strictness)
}

pub fn load_str(text: &str, origin: &str, constants: &ConstantTable, strictness: Strictness) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, constants) {
            Ok(p) => report.problems.push(p),
            Err(e) => {
                let err = Error::Record {
                    path: origin.to_string(),
                    line: i + 1,
                    msg: e.to_string(),
                };
                if strictness == Strictness::Strict {
                    return Err(err);
                }
                log::warn!("{err}");
                report.errors.push(err);
            }
        }
    }
    if report.problems.is_empty() && report.errors.is_empty() {
        let w = format!("{origin}: dataset is empty");
        log::warn!("{w}");
        report.warnings.push(w);
    }
    Ok(report)
}

pub fn write_dataset(path: &Path, problems: &[Problem]) -> Result<()> {
    let mut out = Vec::new();
    for p in problems {
        serde_json::to_writer(&mut out, &p.to_record())?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"a","tokens":["Tom","has","5","apples"],"pos":["NNP","VBZ","CD","NNS"],"srl":[],"equation":"N0","answer":"5"}"#;

    #[test]
    fn three_lines() {
        let text = format!("{LINE}\n{}\n{}\n", LINE.replace("\"a\"", "\"b\""), LINE.replace("\"a\"", "\"c\""));
        let r = load_str(&text, "mem", &ConstantTable::default(), Strictness::Strict).unwrap();
        assert_eq!(r.problems.len(), 3);
        assert!(r.errors.is_empty());
    }

    #[test]
    fn empty_file_warns() {
        let r = load_str("", "mem", &ConstantTable::default(), Strictness::Strict).unwrap();
        assert!(r.problems.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn bad_slot_reports_line_and_record() {
        let bad = LINE.replace("\"N0\"", "\"N5\"");
        let text = format!("{LINE}\n{bad}\n");
        let r = load_str(&text, "mem", &ConstantTable::default(), Strictness::Lenient).unwrap();
        assert_eq!(r.problems.len(), 1);
        let msg = r.errors[0].to_string();
        assert!(msg.contains("mem:2") && msg.contains("`a`"), "{msg}");
        let strict = load_str(&text, "mem", &ConstantTable::default(), Strictness::Strict);
        assert!(strict.is_err());
    }

    #[test]
    fn malformed_json_and_unknown_keys() {
        let c = ConstantTable::default();
        let r = load_str("{not json\n", "mem", &c, Strictness::Lenient).unwrap();
        assert_eq!(r.errors.len(), 1);
        let extra = LINE.replace("\"srl\"", "\"bogus\":1,\"srl\"");
        assert!(load_str(&extra, "mem", &c, Strictness::Strict).is_err());
    }
}
