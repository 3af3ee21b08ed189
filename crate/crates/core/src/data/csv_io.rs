//! `text,label` CSV files (RFC 4180 quoting). Rows are numbered as in a
//! spreadsheet: the header is row 1, the first example row 2.

use std::io::Read;
use std::path::Path;

use super::{Dataset, Example, Label};
use crate::error::{Error, Result};

const HEADER: [&str; 2] = ["text", "label"];

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, name)
}

pub fn read_csv(reader: impl Read, name: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(1, e))?,
        None => return Err(data_error(1, "missing header row `text,label`")),
    };
    let fields: Vec<&str> = header.iter().collect();
    let first = fields.first().map(|f| f.trim_start_matches('\u{feff}'));
    if fields.len() != 2 || first != Some(HEADER[0]) || fields[1] != HEADER[1] {
        return Err(data_error(1, format!("expected header `text,label`, found {fields:?}")));
    }

    let mut examples = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(row, e))?;
        if rec.len() != 2 {
            return Err(data_error(row, format!("expected 2 fields, found {}", rec.len())));
        }
        let (text, label) = (&rec[0], &rec[1]);
        let label = Label::parse(label)
            .ok_or_else(|| data_error(row, format!("unknown label {label:?}; expected hate or nothate")))?;
        if text.trim().is_empty() {
            return Err(data_error(row, "empty text"));
        }
        examples.push(Example {
            text: text.to_owned(),
            label,
        });
    }
    if examples.is_empty() {
        return Err(data_error(2, "no examples after the header"));
    }
    Dataset::new(name, examples)
}

pub fn serialize_csv(ds: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for ex in ds.examples() {
        w.write_record([ex.text.as_str(), ex.label.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_csv(ds)).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn data_error(row: usize, msg: impl Into<String>) -> Error {
    Error::Data { row, msg: msg.into() }
}

fn csv_error(row: usize, e: csv::Error) -> Error {
    data_error(row, e.to_string())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        read_csv(s.as_bytes(), "t")
    }

    #[test]
    fn sample_rows() {
        let ds = parse("text,label\ndalits are lowlives,hate\ni hate wearing black in the summer!,nothate\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0].label, Label::Hate);
        assert_eq!(ds.examples()[0].text, "dalits are lowlives");
        assert_eq!(ds.examples()[1].label, Label::NotHate);
    }

    #[test]
    fn labels_are_case_insensitive() {
        let ds = parse("text,label\nsomething,HATE\n").unwrap();
        assert_eq!(ds.examples()[0].label, Label::Hate);
    }

    #[test]
    fn errors_carry_row_numbers() {
        match parse("text,label\nfine,hate\nunsure,maybe\n") {
            Err(Error::Data { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("maybe"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("tweet,class\nx,hate\n"), Err(Error::Data { row: 1, .. })));
        assert!(matches!(parse(""), Err(Error::Data { row: 1, .. })));
        assert!(matches!(parse("text,label\n  ,hate\n"), Err(Error::Data { row: 2, .. })));
        assert!(matches!(parse("text,label\na,hate,extra\n"), Err(Error::Data { row: 2, .. })));
    }

    #[test]
    fn quoting() {
        let ds = parse("text,label\n\"a, \"\"quoted\"\"\nline\",nothate\n").unwrap();
        assert_eq!(ds.examples()[0].text, "a, \"quoted\"\nline");
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z ,\"\n!é]{0,30}".prop_filter("non-empty", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn serialize_then_load_is_identity(rows in prop::collection::vec((arb_text(), any::<bool>()), 1..20)) {
            let examples = rows
                .into_iter()
                .map(|(t, h)| Example::new(t, if h { Label::Hate } else { Label::NotHate }).unwrap())
                .collect();
            let ds = Dataset::new("t", examples).unwrap();
            let back = parse(&serialize_csv(&ds)).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
