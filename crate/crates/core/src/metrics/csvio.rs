//! `sequence_index,score,label` files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::Label;
use crate::error::{Error, Result};

const HEADER: [&str; 3] = ["sequence_index", "score", "label"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sequence_index: usize,
    pub score: f64,
    pub label: Label,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("{other:?}")),
    }
}

pub fn write_scores_to<W: Write>(out: W, scores: &[f64], label: Label) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for (i, s) in scores.iter().enumerate() {
        // `{}` on f64 is the shortest representation that round-trips
        w.write_record([i.to_string(), s.to_string(), label.as_str().to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[f64], label: Label) -> Result<()> {
    write_scores_to(File::create(path)?, scores, label)
}

/// Parses a scores CSV; rows must be numbered `0, 1, …` in order.
pub fn read_scores_from<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::format(format!("expected header {}, got {:?}", HEADER.join(","), header)));
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != 3 {
            return Err(Error::format(format!("row {line}: expected 3 fields")));
        }
        let sequence_index: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad sequence index {:?}", &record[0])))?;
        if sequence_index != line {
            return Err(Error::format(format!("row {line}: sequence index {sequence_index} out of order")));
        }
        let score: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad score {:?}", &record[1])))?;
        if !score.is_finite() {
            return Err(Error::format(format!("row {line}: non-finite score")));
        }
        let label: Label = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad label {:?}", &record[2])))?;
        rows.push(ScoreRow {
            sequence_index,
            score,
            label,
        });
    }
    Ok(rows)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    read_scores_from(File::open(path)?)
}
