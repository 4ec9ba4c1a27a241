//! CSV reports and PGM images.
//!
//! Every CSV has a header row and a fixed column order. Floats use Rust's
//! shortest round-trip formatting, so values parse back bit-exactly.

use std::io::{self, Write};

use dcnv3_core::erf::ErfMap;
use dcnv3_core::scaling::SearchEntry;

use crate::bench::BenchResult;

pub const SEARCH_HEADER: [&str; 5] = ["c1", "cprime", "l1", "l3", "params"];
pub const LOSS_HEADER: [&str; 2] = ["step", "loss"];
pub const ERF_HEADER: [&str; 3] = ["y", "x", "value"];
pub const BENCH_HEADER: [&str; 11] =
    ["op", "n", "c", "h", "w", "reps", "min_s", "median_s", "mean_s", "images_per_s", "speedup"];

/// Search-space enumeration; invalid stacks have an empty `params` cell.
pub fn write_search<W: Write>(out: W, entries: &[SearchEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SEARCH_HEADER)?;
    for e in entries {
        let s = e.stack;
        let params = e.params.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([s.c1.to_string(), s.cprime.to_string(), s.l1().to_string(), s.l3().to_string(), params])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_losses<W: Write>(out: W, losses: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_HEADER)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_losses<R: io::Read>(input: R) -> csv::Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(1).unwrap_or("").parse::<f64>().map_err(|e| csv::Error::from(io::Error::other(e)))
        })
        .collect()
}

/// Raw ERF values, one row per pixel in row-major order.
pub fn write_erf_csv<W: Write>(out: W, map: &ErfMap) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ERF_HEADER)?;
    for y in 0..map.height {
        for x in 0..map.width {
            w.write_record([y.to_string(), x.to_string(), map.at(y, x).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench<W: Write>(out: W, rows: &[BenchResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        let [n, c, h, wd] = r.shape.dims();
        w.write_record([
            r.op.clone(),
            n.to_string(),
            c.to_string(),
            h.to_string(),
            wd.to_string(),
            r.reps.to_string(),
            r.min.to_string(),
            r.median.to_string(),
            r.mean.to_string(),
            r.throughput.to_string(),
            r.speedup.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM (P5, maxval 255), scaled so the largest value maps to 255.
pub fn write_pgm<W: Write>(mut out: W, map: &ErfMap) -> io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", map.width, map.height)?;
    let max = map.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let bytes: Vec<u8> = map.values.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    out.write_all(&bytes)
}
