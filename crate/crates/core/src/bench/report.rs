use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::BenchError;
use crate::wssec::Mode;

pub const CSV_HEADER: [&str; 7] = ["size", "mode", "median_s", "throughput_Bps", "first_byte_s", "peak_mem_B", "reps"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: u64,
    pub mode: Mode,
    /// Median session time, connect to response.
    pub median_s: f64,
    /// `size / median_s`.
    pub throughput_bps: f64,
    /// Median time from session start to the first body byte on the socket.
    pub first_byte_s: f64,
    /// Largest peak of tracked allocations on the signing path.
    pub peak_mem_bytes: u64,
    pub repetitions: usize,
    pub wall_times_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub seed: u64,
    pub throttle_rate: Option<f64>,
    /// Ordered by size, then mode.
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, size: u64, mode: Mode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.size == size && r.mode == mode)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes one header row and one row per (size, mode).
pub fn emit_csv(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    if report.rows.is_empty() {
        return Err(BenchError::EmptyReport);
    }
    let mut rows: Vec<&BenchRow> = report.rows.iter().collect();
    rows.sort_by_key(|r| (r.size, r.mode));
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            r.mode.as_str().to_owned(),
            format!("{:.9}", r.median_s),
            format!("{:.3}", r.throughput_bps),
            format!("{:.9}", r.first_byte_s),
            r.peak_mem_bytes.to_string(),
            r.repetitions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated data, one block per mode separated by two blank
/// lines, for plotting tools that index data blocks.
pub fn emit_plot_data(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    if report.rows.is_empty() {
        return Err(BenchError::EmptyReport);
    }
    let mut w = create(path)?;
    writeln!(w, "# seed {}", report.seed)?;
    match report.throttle_rate {
        Some(rate) => writeln!(w, "# throttle {rate} B/s")?,
        None => writeln!(w, "# throttle none")?,
    }
    let mut modes: Vec<Mode> = report.rows.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    for (i, mode) in modes.into_iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# mode {mode}")?;
        writeln!(w, "# size_B throughput_Bps median_s first_byte_s peak_mem_B")?;
        let mut rows: Vec<&BenchRow> = report.rows.iter().filter(|r| r.mode == mode).collect();
        rows.sort_by_key(|r| r.size);
        for r in rows {
            writeln!(
                w,
                "{} {:.3} {:.9} {:.9} {}",
                r.size, r.throughput_bps, r.median_s, r.first_byte_s, r.peak_mem_bytes
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(size: u64, mode: Mode) -> BenchRow {
        BenchRow {
            size,
            mode,
            median_s: 2.0,
            throughput_bps: size as f64 / 2.0,
            first_byte_s: 0.01,
            peak_mem_bytes: 1000,
            repetitions: 3,
            wall_times_s: vec![1.0, 2.0, 3.0],
        }
    }

    fn report() -> BenchReport {
        let mut rows = Vec::new();
        for mode in [Mode::StreamingStrict, Mode::Unsigned, Mode::Blocking] {
            for size in [4096, 1024] {
                rows.push(row(size, mode));
            }
        }
        BenchReport { seed: 42, throttle_rate: Some(1e6), rows }
    }

    #[test]
    fn csv_has_header_and_sorted_rows() {
        let dir = std::env::temp_dir().join(format!("streamsign-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        emit_csv(&report(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "size,mode,median_s,throughput_Bps,first_byte_s,peak_mem_B,reps");
        assert_eq!(lines[1], "1024,unsigned,2.000000000,512.000,0.010000000,1000,3");
        let keys: Vec<(u64, &str)> = lines[1..]
            .iter()
            .map(|l| {
                let mut f = l.split(',');
                (f.next().unwrap().parse().unwrap(), f.next().unwrap())
            })
            .collect();
        assert_eq!(
            keys,
            [
                (1024, "unsigned"),
                (1024, "blocking"),
                (1024, "streaming_strict"),
                (4096, "unsigned"),
                (4096, "blocking"),
                (4096, "streaming_strict")
            ]
        );

        let plot = dir.join("r.dat");
        emit_plot_data(&report(), &plot).unwrap();
        let text = std::fs::read_to_string(&plot).unwrap();
        assert!(text.starts_with("# seed 42\n"));
        assert_eq!(text.matches("# mode ").count(), 3);
        assert_eq!(text.matches("\n\n\n").count(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_report_writes_nothing() {
        let path = std::env::temp_dir().join(format!("streamsign-empty-{}.csv", std::process::id()));
        let empty = BenchReport { seed: 1, throttle_rate: None, rows: vec![] };
        assert!(matches!(emit_csv(&empty, &path), Err(BenchError::EmptyReport)));
        assert!(!path.exists());
        assert!(matches!(emit_plot_data(&empty, &path), Err(BenchError::EmptyReport)));
        assert!(!path.exists());
    }
}
