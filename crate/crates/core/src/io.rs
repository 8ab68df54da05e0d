//! Corpus ingestion (JSON lines) and CheXpert-style label CSVs.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::labeler::{LabelVector, Mention};
use crate::lexicon::{ObservationClass, Polarity};

/// One report of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_position: Option<String>,
    pub text: String,
}

/// Reads a JSON-lines corpus. Blank lines are skipped; order is preserved.
pub fn read_corpus(path: &Path) -> Result<Vec<ReportRecord>> {
    let file = File::open(path).at(path)?;
    parse_corpus(BufReader::new(file), path)
}

pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Vec<ReportRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.at(origin)?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let record: ReportRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.report_id.clone()) {
            return Err(Error::DuplicateReport(record.report_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_corpus(records: &[ReportRecord], path: &Path) -> Result<()> {
    let mut out = File::create(path).at(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").at(path)?;
    }
    Ok(())
}

/// One CSV row: a report id and one cell per observation. `None` is the
/// empty cell (Blank for labeler output, "none" for annotations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub report_id: String,
    pub cells: [Option<Polarity>; ObservationClass::COUNT],
}

impl LabelRow {
    pub fn get(&self, class: ObservationClass) -> Option<Polarity> {
        self.cells[class.index()]
    }
}

impl From<&LabelVector> for LabelRow {
    fn from(v: &LabelVector) -> Self {
        Self {
            report_id: v.report_id.clone(),
            cells: v.labels.map(|l| l.polarity()),
        }
    }
}

pub fn encode_cell(cell: Option<Polarity>) -> &'static str {
    match cell {
        Some(Polarity::Positive) => "1.0",
        Some(Polarity::Negative) => "0.0",
        Some(Polarity::Uncertain) => "-1.0",
        None => "",
    }
}

pub fn decode_cell(cell: &str) -> Option<Option<Polarity>> {
    match cell {
        "1.0" => Some(Some(Polarity::Positive)),
        "0.0" => Some(Some(Polarity::Negative)),
        "-1.0" => Some(Some(Polarity::Uncertain)),
        "" => Some(None),
        _ => None,
    }
}

pub fn csv_header() -> Vec<&'static str> {
    std::iter::once("report_id")
        .chain(ObservationClass::ALL.iter().map(|c| c.snake_name()))
        .collect()
}

pub fn write_labels_to<W: Write>(rows: &[LabelRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    for row in rows {
        w.write_record(
            std::iter::once(row.report_id.as_str()).chain(row.cells.iter().map(|c| encode_cell(*c))),
        )?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_labels(rows: &[LabelRow], path: &Path) -> Result<()> {
    let file = File::create(path).at(path)?;
    write_labels_to(rows, file)
}

pub fn read_labels_from<R: Read>(reader: R) -> Result<Vec<LabelRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(Error::Header(header.join(",")));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let mut cells = [None; ObservationClass::COUNT];
        for (k, cell) in cells.iter_mut().enumerate() {
            let raw = &record[k + 1];
            *cell = decode_cell(raw).ok_or_else(|| {
                Error::Invalid(format!(
                    "row {}: invalid cell {raw:?} for {}",
                    i + 2,
                    ObservationClass::ALL[k]
                ))
            })?;
        }
        rows.push(LabelRow {
            report_id: record[0].to_string(),
            cells,
        });
    }
    Ok(rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let file = File::open(path).at(path)?;
    read_labels_from(file)
}

/// Per-report provenance line for `label --mentions`.
#[derive(Debug, Clone, Serialize)]
pub struct MentionDump<'a> {
    pub report_id: &'a str,
    pub mentions: &'a [Mention],
}

pub fn write_mentions(vectors: &[LabelVector], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).at(path)?);
    for v in vectors {
        serde_json::to_writer(
            &mut out,
            &MentionDump {
                report_id: &v.report_id,
                mentions: &v.mentions,
            },
        )?;
        out.write_all(b"\n").at(path)?;
    }
    out.flush().at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::{derive_no_finding, ObservationLabel};
    use proptest::prelude::*;

    fn corpus(text: &str) -> Result<Vec<ReportRecord>> {
        parse_corpus(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn reads_in_order() {
        let recs = corpus(
            "{\"report_id\":\"b\",\"text\":\"x\"}\n{\"report_id\":\"a\",\"view_position\":\"Thorax im Liegen\",\"text\":\"\"}\n\n{\"report_id\":\"c\",\"text\":\"z\"}\n",
        )
        .unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.report_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(recs[1].view_position.as_deref(), Some("Thorax im Liegen"));
    }

    #[test]
    fn missing_text_names_line() {
        let err = corpus("{\"report_id\":\"a\",\"text\":\"\"}\n{\"report_id\":\"b\"}\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn crlf_equals_lf() {
        let lf = "{\"report_id\":\"a\",\"text\":\"x\"}\n{\"report_id\":\"b\",\"text\":\"y\"}\n";
        assert_eq!(corpus(lf).unwrap(), corpus(&lf.replace('\n', "\r\n")).unwrap());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = corpus("{\"report_id\":\"a\",\"text\":\"\"}\n{\"report_id\":\"a\",\"text\":\"\"}").unwrap_err();
        assert!(matches!(err, Error::DuplicateReport(id) if id == "a"));
    }

    #[test]
    fn support_devices_only_row() {
        let mut labels = [ObservationLabel::Blank; 14];
        labels[ObservationClass::SupportDevices.index()] = ObservationLabel::Positive;
        labels[ObservationClass::NoFinding.index()] = derive_no_finding(&labels);
        let v = LabelVector {
            report_id: "id".into(),
            labels,
            mentions: vec![],
        };
        let mut buf = Vec::new();
        write_labels_to(&[LabelRow::from(&v)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "report_id,atelectasis,cardiomegaly,consolidation,edema,enlarged_cardiomediastinum,fracture,lung_lesion,lung_opacity,no_finding,pleural_effusion,pleural_other,pneumonia,pneumothorax,support_devices"
        );
        assert_eq!(lines.next().unwrap(), "id,,,,,,,,,1.0,,,,,1.0");
    }

    #[test]
    fn uncertain_encodes_minus_one() {
        assert_eq!(encode_cell(Some(Polarity::Uncertain)), "-1.0");
        assert_eq!(decode_cell("-1.0"), Some(Some(Polarity::Uncertain)));
    }

    #[test]
    fn rejects_bad_header_and_cells() {
        let err = read_labels_from("id,foo\nx,1.0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Header(_)));
        let bad = format!("{}\nr,2.0,,,,,,,,,,,,,\n", csv_header().join(","));
        assert!(matches!(read_labels_from(bad.as_bytes()), Err(Error::Invalid(_))));
    }

    fn arb_cell() -> impl Strategy<Value = Option<Polarity>> {
        prop_oneof![
            Just(None),
            Just(Some(Polarity::Positive)),
            Just(Some(Polarity::Negative)),
            Just(Some(Polarity::Uncertain)),
        ]
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(("[a-z0-9_,\" ]{1,8}", prop::array::uniform14(arb_cell())), 0..50)) {
            let rows: Vec<LabelRow> = rows.into_iter().map(|(report_id, cells)| LabelRow { report_id, cells }).collect();
            let mut buf = Vec::new();
            write_labels_to(&rows, &mut buf).unwrap();
            prop_assert_eq!(read_labels_from(buf.as_slice()).unwrap(), rows);
        }
    }
}
