use std::io::{Read, Write};

use super::MeasurementRecord;
use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 5] = ["sensor", "d_m", "theta_deg", "error_m", "dispersion_m"];
/// Optional trailing column with the interferometer distance `D`.
pub const INTERFEROMETER_COLUMN: &str = "interferometer_m";

/// Reads calibration records from CSV with header [`RECORD_HEADER`],
/// optionally followed by [`INTERFEROMETER_COLUMN`]. Either `error_m` or
/// `interferometer_m` may be left empty, not both.
pub fn read_records<R: Read>(input: R) -> Result<Vec<MeasurementRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let with_interferometer = header.len() == RECORD_HEADER.len() + 1
        && header.iter().take(RECORD_HEADER.len()).eq(RECORD_HEADER)
        && &header[RECORD_HEADER.len()] == INTERFEROMETER_COLUMN;
    if !with_interferometer && header.iter().ne(RECORD_HEADER) {
        return Err(parse(
            1,
            format!(
                "expected header `{}[,{INTERFEROMETER_COLUMN}]`, got `{}`",
                RECORD_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse(line, e.to_string()))?;
        let name = |idx: usize| header.get(idx).unwrap_or("?").to_string();
        let num = |idx: usize| {
            row[idx]
                .parse::<f64>()
                .map_err(|_| parse(line, format!("`{}` is not a number: `{}`", name(idx), &row[idx])))
        };
        let optional = |idx: usize| if row[idx].is_empty() { Ok(None) } else { num(idx).map(Some) };
        let interferometer = if with_interferometer { optional(5)? } else { None };
        let error = if with_interferometer { optional(3)? } else { Some(num(3)?) };
        if error.is_none() && interferometer.is_none() {
            return Err(parse(line, "needs `error_m` or `interferometer_m`".into()));
        }
        let rec = MeasurementRecord {
            sensor: row[0].to_string(),
            depth: num(1)?,
            incidence_deg: num(2)?,
            interferometer,
            error,
            dispersion: num(4)?,
        };
        rec.validate().map_err(|e| parse(line, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records in the [`read_records`] format. The interferometer column
/// is added when any record has a reading.
pub fn write_records<W: Write>(records: &[MeasurementRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let with_interferometer = records.iter().any(|r| r.interferometer.is_some());
    let mut header = RECORD_HEADER.to_vec();
    if with_interferometer {
        header.push(INTERFEROMETER_COLUMN);
    }
    w.write_record(&header).map_err(io)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
    for r in records {
        if r.error.is_none() && r.interferometer.is_none() {
            return Err(Error::Precondition("record has neither an error nor an interferometer reading".into()));
        }
        let mut row = vec![
            r.sensor.clone(),
            format!("{:?}", r.depth),
            format!("{:?}", r.incidence_deg),
            opt(r.error),
            format!("{:?}", r.dispersion),
        ];
        if with_interferometer {
            row.push(opt(r.interferometer));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn parse(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}
