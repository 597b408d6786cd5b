//! TNSR: a minimal bit-exact tensor file format.
//!
//! Layout: one line of strict JSON terminated by `\n`, then the raw
//! little-endian payload. Header fields:
//!
//! ```json
//! {"magic":"TNSR1","dtype":"f64","order":"LE","shape":[64,32],
//!  "maps":{"seg":0,"img":16384}}
//! ```
//!
//! `maps` is optional; when present the file is a bundle of equally shaped
//! tensors, each starting at the given byte offset within the payload.
//! Without `maps` the payload is a single tensor. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &str = "TNSR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    dtype: Dtype,
    order: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    maps: Option<BTreeMap<String, usize>>,
}

/// An in-memory TNSR file: a shape, a dtype, and one or more named payloads.
#[derive(Debug, Clone)]
pub struct TnsrFile {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Map name -> values (f64 in memory regardless of on-disk dtype).
    /// A single unnamed tensor uses the empty-string key.
    pub maps: BTreeMap<String, Vec<f64>>,
}

impl TnsrFile {
    pub fn single(dtype: Dtype, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut maps = BTreeMap::new();
        maps.insert(String::new(), values);
        let file = TnsrFile { dtype, shape, maps };
        file.check_lengths()?;
        Ok(file)
    }

    pub fn bundle(
        dtype: Dtype,
        shape: Vec<usize>,
        maps: Vec<(&str, Vec<f64>)>,
    ) -> Result<Self> {
        let maps: BTreeMap<String, Vec<f64>> = maps
            .into_iter()
            .map(|(name, values)| (name.to_string(), values))
            .collect();
        let file = TnsrFile { dtype, shape, maps };
        file.check_lengths()?;
        Ok(file)
    }

    pub fn n_values(&self) -> usize {
        self.shape.iter().product()
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.n_values();
        for (name, values) in &self.maps {
            if values.len() != n {
                return Err(Error::ShapeMismatch {
                    context: "tnsr map payload",
                    expected: format!("{n} values"),
                    got: format!("{} in map '{name}'", values.len()),
                });
            }
        }
        Ok(())
    }

    /// The single tensor of a non-bundle file.
    pub fn values(&self) -> Result<&[f64]> {
        self.maps
            .get("")
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::BadHeader("expected a single tensor, found a bundle".into()))
    }

    pub fn map(&self, name: &str) -> Result<&[f64]> {
        self.maps
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::BadHeader(format!("bundle has no map '{name}'")))
    }

    /// Interpret a named map (or the single tensor for `""`) as an nz x nx grid.
    pub fn grid(&self, name: &str) -> Result<Grid> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "tnsr grid view",
                expected: "2-d shape".into(),
                got: format!("{:?}", self.shape),
            });
        }
        Grid::from_vec(self.shape[0], self.shape[1], self.map(name)?.to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.check_lengths()?;
        let n_bytes = self.n_values() * self.dtype.size();
        let (maps_field, order): (Option<BTreeMap<String, usize>>, Vec<&String>) =
            if self.maps.len() == 1 && self.maps.contains_key("") {
                (None, self.maps.keys().collect())
            } else {
                let mut offsets = BTreeMap::new();
                // BTreeMap iteration order is the on-disk order.
                for (i, name) in self.maps.keys().enumerate() {
                    offsets.insert(name.clone(), i * n_bytes);
                }
                (Some(offsets), self.maps.keys().collect())
            };
        let header = Header {
            magic: MAGIC.to_string(),
            dtype: self.dtype,
            order: "LE".to_string(),
            shape: self.shape.clone(),
            maps: maps_field,
        };
        let mut header_line =
            serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
        header_line.push('\n');

        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(header_line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        for name in order {
            write_values(&mut w, self.dtype, &self.maps[name]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            match r.read(&mut byte).map_err(|e| Error::io(path, e))? {
                0 => return Err(Error::BadHeader("missing newline after header".into())),
                _ => {
                    if byte[0] == b'\n' {
                        break;
                    }
                    header_bytes.push(byte[0]);
                    if header_bytes.len() > 1 << 20 {
                        return Err(Error::BadHeader("header exceeds 1 MiB".into()));
                    }
                }
            }
        }
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::BadHeader(format!("header is not valid JSON: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::BadHeader(format!(
                "bad magic '{}' (expected '{MAGIC}')",
                header.magic
            )));
        }
        if header.order != "LE" {
            return Err(Error::BadHeader(format!(
                "unsupported byte order '{}'",
                header.order
            )));
        }

        let n = header.shape.iter().product::<usize>();
        let n_bytes = n * header.dtype.size();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;

        let map_names: Vec<(String, usize)> = match &header.maps {
            None => vec![(String::new(), 0)],
            Some(m) => {
                for (name, &off) in m {
                    if off % n_bytes != 0 || off / n_bytes >= m.len() {
                        return Err(Error::BadHeader(format!(
                            "map '{name}' offset {off} outside payload layout"
                        )));
                    }
                }
                m.iter().map(|(k, &v)| (k.clone(), v)).collect()
            }
        };
        let expected = n_bytes * map_names.len();
        if payload.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                got: payload.len(),
            });
        }

        let mut maps = BTreeMap::new();
        for (name, offset) in map_names {
            let bytes = &payload[offset..offset + n_bytes];
            maps.insert(name, read_values(header.dtype, bytes));
        }
        Ok(TnsrFile {
            dtype: header.dtype,
            shape: header.shape,
            maps,
        })
    }
}

fn write_values(w: &mut impl Write, dtype: Dtype, values: &[f64]) -> std::io::Result<()> {
    match dtype {
        Dtype::F64 => {
            for &v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for &v in values {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::U8 => {
            for &v in values {
                w.write_all(&[v as u8])?;
            }
        }
    }
    Ok(())
}

fn read_values(dtype: Dtype, bytes: &[u8]) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
    }
}
