//! Sectioned binary weight files.
//!
//! Layout: the 8-byte magic `DCN3WGT\0`, one version byte, then one record per
//! tensor until end of file:
//!
//! | field      | encoding                    |
//! |------------|-----------------------------|
//! | name len   | u32 LE                      |
//! | name       | UTF-8 bytes                 |
//! | rank       | u8                          |
//! | dims       | rank × u64 LE               |
//! | data       | Π dims × f64 LE             |
//!
//! Records follow the model's parameter visiting order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dcnv3_core::params::Parameters;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DCN3WGT\0";
pub const VERSION: u8 = 1;

/// Upper bound on the elements of one tensor, to reject corrupt headers before allocating.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0} (expected {VERSION})")]
    Version(u8),
    #[error("file ends inside record {index}")]
    Truncated { index: usize },
    #[error("record {index}: name is not UTF-8")]
    BadName { index: usize },
    #[error("record {index}: tensor of {elements} elements is implausibly large")]
    TooLarge { index: usize, elements: u128 },
    #[error("record {index}: expected `{expected}` {expected_dims:?}, found `{found}` {found_dims:?}")]
    Mismatch { index: usize, expected: String, expected_dims: Vec<usize>, found: String, found_dims: Vec<usize> },
    #[error("file has {found} tensors, model has {expected}")]
    Count { expected: usize, found: usize },
}

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_weights<P: Parameters + ?Sized>(out: &mut impl Write, params: &P) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    let mut result = Ok(());
    params.visit("", &mut |name, dims, data| {
        if result.is_err() {
            return;
        }
        result = write_record(out, name, dims, data);
    });
    result
}

fn write_record(out: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> io::Result<()> {
    let len = u32::try_from(name.len()).map_err(|_| io::Error::other("tensor name too long"))?;
    let rank = u8::try_from(dims.len()).map_err(|_| io::Error::other("tensor rank above 255"))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[rank])?;
    for &d in dims {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads every record to end of file.
pub fn read_records(input: &mut impl Read) -> Result<Vec<TensorRecord>, WeightsError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| WeightsError::BadMagic)?;
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version).map_err(|_| WeightsError::BadMagic)?;
    if version[0] != VERSION {
        return Err(WeightsError::Version(version[0]));
    }
    let mut records = Vec::new();
    loop {
        let index = records.len();
        let mut len = [0u8; 4];
        match read_full(input, &mut len)? {
            0 => break,
            4 => {}
            _ => return Err(WeightsError::Truncated { index }),
        }
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => WeightsError::Truncated { index },
            _ => WeightsError::Io(e),
        };
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| WeightsError::BadName { index })?;
        let mut rank = [0u8; 1];
        input.read_exact(&mut rank).map_err(truncated)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut elements: u128 = 1;
        for _ in 0..rank[0] {
            let mut d = [0u8; 8];
            input.read_exact(&mut d).map_err(truncated)?;
            let d = u64::from_le_bytes(d);
            elements *= d as u128;
            if elements > MAX_ELEMENTS as u128 {
                return Err(WeightsError::TooLarge { index, elements });
            }
            dims.push(d as usize);
        }
        let mut bytes = vec![0u8; elements as usize * 8];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        records.push(TensorRecord { name, dims, data });
    }
    Ok(records)
}

/// Like `read_exact`, but reports how many bytes arrived before EOF.
fn read_full(input: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Copies `records` into `params`, requiring identical names, dims and order.
pub fn assign_records<P: Parameters + ?Sized>(params: &mut P, records: &[TensorRecord]) -> Result<(), WeightsError> {
    let specs = params.tensor_specs();
    if specs.len() != records.len() {
        return Err(WeightsError::Count { expected: specs.len(), found: records.len() });
    }
    for (index, ((name, dims), r)) in specs.iter().zip(records).enumerate() {
        if *name != r.name || *dims != r.dims {
            return Err(WeightsError::Mismatch {
                index,
                expected: name.clone(),
                expected_dims: dims.clone(),
                found: r.name.clone(),
                found_dims: r.dims.clone(),
            });
        }
    }
    let flat: Vec<f64> = records.iter().flat_map(|r| r.data.iter().copied()).collect();
    params.assign_flat(&flat);
    Ok(())
}

pub fn save(path: &Path, params: &(impl Parameters + ?Sized)) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_weights(&mut out, params)?;
    out.flush()
}

pub fn load_into(path: &Path, params: &mut (impl Parameters + ?Sized)) -> Result<(), WeightsError> {
    let records = read_records(&mut BufReader::new(File::open(path)?))?;
    assign_records(params, &records)
}
