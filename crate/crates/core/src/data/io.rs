use std::io::{Read, Write};
use std::path::Path;

use super::{parse_corpus, Corpus, DataError};

/// One row of the corpus table before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub labels: Option<String>,
}

/// Field delimiter; `.tsv` files use tabs, everything else commas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Comma,
    Tab,
}

impl Delimiter {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => Delimiter::Tab,
            _ => Delimiter::Comma,
        }
    }

    pub fn byte(self) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
        }
    }
}

pub(crate) fn reader<R: Read>(rdr: R, delimiter: Delimiter) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter.byte())
        .flexible(false)
        .from_reader(rdr)
}

pub(crate) fn writer<W: Write>(wtr: W, delimiter: Delimiter) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(delimiter.byte())
        .from_writer(wtr)
}

/// Reads raw records from a headed table with `id`, `text` and optional `labels`.
pub fn read_records<R: Read>(rdr: R, delimiter: Delimiter) -> Result<Vec<RawRecord>, DataError> {
    let mut rdr = reader(rdr, delimiter);
    let headers = rdr.headers()?.clone();
    let col = |name| headers.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or(DataError::MissingColumn("id"))?;
    let text_col = col("text").ok_or(DataError::MissingColumn("text"))?;
    let labels_col = col("labels");

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(RawRecord {
            id: row.get(id_col).unwrap_or_default().to_string(),
            text: row.get(text_col).unwrap_or_default().to_string(),
            labels: labels_col.map(|c| row.get(c).unwrap_or_default().to_string()),
        });
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, DataError> {
    let file = std::fs::File::open(path)?;
    let records = read_records(std::io::BufReader::new(file), Delimiter::for_path(path))?;
    parse_corpus(&records)
}

/// Inverse of [`parse_corpus`] for labeled or unlabeled corpora.
pub fn serialize_corpus(corpus: &Corpus) -> Vec<RawRecord> {
    corpus
        .iter()
        .map(|p| RawRecord {
            id: p.id.clone(),
            text: p.text.clone(),
            labels: p.labels.map(|l| l.to_field()),
        })
        .collect()
}

pub fn write_records<W: Write>(
    wtr: W,
    delimiter: Delimiter,
    records: &[RawRecord],
) -> Result<(), DataError> {
    let with_labels = records.iter().any(|r| r.labels.is_some());
    let mut wtr = writer(wtr, delimiter);
    if with_labels {
        wtr.write_record(["id", "text", "labels"])?;
    } else {
        wtr.write_record(["id", "text"])?;
    }
    for r in records {
        if with_labels {
            wtr.write_record([&r.id, &r.text, r.labels.as_deref().unwrap_or("")])?;
        } else {
            wtr.write_record([&r.id, &r.text])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_records(
        std::io::BufWriter::new(file),
        Delimiter::for_path(path),
        &serialize_corpus(corpus),
    )
}

/// Rewrites one column of a headed table, leaving every other column as is.
pub fn transform_column(
    input: &Path,
    output: &Path,
    column: &'static str,
    f: impl Fn(&str) -> String,
) -> Result<usize, DataError> {
    let mut rdr = reader(std::fs::File::open(input)?, Delimiter::for_path(input));
    let headers = rdr.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or(DataError::MissingColumn(column))?;
    let mut wtr = writer(
        std::io::BufWriter::new(std::fs::File::create(output)?),
        Delimiter::for_path(output),
    );
    wtr.write_record(&headers)?;
    let mut n = 0;
    for row in rdr.records() {
        let row = row?;
        let fields: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, v)| if i == idx { f(v) } else { v.to_string() })
            .collect();
        wtr.write_record(&fields)?;
        n += 1;
    }
    wtr.flush()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_labels_with_embedded_commas() {
        let src = "id,text,labels\n1,\"नमस्ते, दुनिया\",\"fake,hate\"\n2,ok,non-hostile\n";
        let recs = read_records(src.as_bytes(), Delimiter::Comma).unwrap();
        assert_eq!(recs[0].text, "नमस्ते, दुनिया");
        assert_eq!(recs[0].labels.as_deref(), Some("fake,hate"));
        let corpus = parse_corpus(&recs).unwrap();
        assert!(corpus[0].labels.unwrap().hate);
    }

    #[test]
    fn missing_labels_column_means_unlabeled() {
        let src = "text\tid\nहाँ\t7\n";
        let recs = read_records(src.as_bytes(), Delimiter::Tab).unwrap();
        assert_eq!(recs[0].id, "7");
        assert_eq!(recs[0].labels, None);
    }

    #[test]
    fn missing_text_column_is_an_error() {
        let err = read_records("id,labels\n1,fake\n".as_bytes(), Delimiter::Comma).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn("text")));
    }
}
