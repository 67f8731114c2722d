//! CSV interop: `subject_id,sample_id,e0,...,e{D-1}`.

use std::io::{Read, Write};

use super::{EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};

pub fn write_embeddings_csv<W: Write>(set: &EmbeddingSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "sample_id".to_string()];
    header.extend((0..set.dim()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for r in set.records() {
        let mut row = Vec::with_capacity(set.dim() + 2);
        row.push(r.key.subject_id.clone());
        row.push(r.key.sample_id.clone());
        // `Display` for f32 is the shortest string that parses back to the same bits
        row.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv<R: Read>(reader: R, model_id: &str) -> Result<EmbeddingSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "subject_id" || &header[1] != "sample_id" {
        return Err(Error::format("csv header must be subject_id,sample_id,e0..e{D-1}"));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("e{j}") {
            return Err(Error::format(format!("csv column {} should be e{j}, found {name:?}", j + 2)));
        }
    }
    let dim = header.len() - 2;
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != dim + 2 {
            return Err(Error::format(format!("csv row {} has {} fields, expected {}", line + 2, row.len(), dim + 2)));
        }
        let vector = row
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("csv row {}: {e}", line + 2)))?;
        records.push(EmbeddingRecord::new(&row[0], &row[1], vector));
    }
    EmbeddingSet::new(model_id, dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let set = EmbeddingSet::new(
            "m",
            3,
            vec![
                EmbeddingRecord::new("a", "1", vec![0.1, -2.5e-30, 1.0 / 3.0]),
                EmbeddingRecord::new("b,c", "2", vec![7.0, 0.0, -1.0]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_embeddings_csv(&set, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("subject_id,sample_id,e0,e1,e2\n"));
        let back = read_embeddings_csv(buf.as_slice(), "m").unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "id,sample_id,e0\na,1,0.5\n";
        assert!(matches!(read_embeddings_csv(text.as_bytes(), "m"), Err(Error::Format(_))));
    }

    #[test]
    fn csv_rejects_unparseable_value() {
        let text = "subject_id,sample_id,e0\na,1,zero\n";
        assert!(matches!(read_embeddings_csv(text.as_bytes(), "m"), Err(Error::Format(_))));
    }
}
