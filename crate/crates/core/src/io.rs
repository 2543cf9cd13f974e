//! Plain-text and binary output shared by the report types.

use std::io::Write;

use nalgebra::DVector;

use crate::error::Result;

/// Full-precision (17 significant digit) rendering used in every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(e.to_string())
}

/// Writes `(index, v_0, v_1, ...)` rows with a `v{j}` header.
pub fn write_vectors_csv<W: Write>(w: W, index_name: &str, rows: &[DVector<f64>]) -> Result<()> {
    let mut out = csv_writer(w);
    let dim = rows.first().map_or(0, |r| r.len());
    let mut header = vec![index_name.to_string()];
    header.extend((0..dim).map(|j| format!("v{j}")));
    out.write_record(&header).map_err(csv_err)?;
    for (n, row) in rows.iter().enumerate() {
        let mut rec = vec![n.to_string()];
        rec.extend(row.iter().map(|&x| fmt_f64(x)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
