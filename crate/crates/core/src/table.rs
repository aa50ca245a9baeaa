//! Minimal CSV output shared by the module exporters and the experiment
//! runner: comma separator, mandatory header, LF line endings.

use std::io::Write;

/// A row type with a fixed column layout.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// Writes a header followed by every row.
pub fn write_csv<W: Write, R: CsvRecord>(out: W, rows: &[R]) -> csv::Result<()> {
    write_rows(out, R::HEADER, rows.iter().map(CsvRecord::fields))
}

/// Writes a header and rows whose layout is only known at run time.
pub fn write_rows<W, H, I>(out: W, header: H, rows: I) -> csv::Result<()>
where
    W: Write,
    H: IntoIterator,
    H::Item: AsRef<[u8]>,
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
