//! `PathSet` serialization.
//!
//! * CSV: header `path_id,t_index,x_0,...,x_{d-1}`, one row per (path, grid point).
//! * Binary: magic `SPG1`, `u32 H`, `u32 N_T + 1`, `u32 d`, `f64 t0`, `f64 dt`,
//!   then the `f64` tensor path-major. Everything little-endian.
//!
//! Both encodings round-trip every `f64` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PathSet, TimeGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPG1";
const HEADER_LEN: usize = 4 + 3 * 4 + 2 * 8;

impl PathSet {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["path_id".to_string(), "t_index".to_string()];
        header.extend((0..self.dim()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (i, path) in self.paths().enumerate() {
            for (n, row) in path.chunks_exact(self.dim()).enumerate() {
                let mut rec = vec![i.to_string(), n.to_string()];
                // `Display` for f64 prints the shortest string that parses back exactly.
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read the CSV encoding. The CSV carries no time axis, so the grid origin
    /// and step are supplied by the caller; the step count is read from the file.
    pub fn read_csv<R: Read>(reader: R, t0: f64, dt: f64) -> Result<PathSet> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "path_id" || &header[1] != "t_index" {
            return Err(Error::format("CSV header must start with path_id,t_index,x_0"));
        }
        let dim = header.len() - 2;
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("x_{j}") {
                return Err(Error::format(format!("unexpected column {name:?}")));
            }
        }
        let mut data = Vec::new();
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_idx = |k: usize| -> Result<usize> {
                rec[k].parse().map_err(|_| Error::format(format!("row {}: bad index {:?}", line + 2, &rec[k])))
            };
            rows.push((parse_idx(0)?, parse_idx(1)?));
            for k in 2..rec.len() {
                let v: f64 = rec[k]
                    .parse()
                    .map_err(|_| Error::format(format!("row {}: bad value {:?}", line + 2, &rec[k])))?;
                data.push(v);
            }
        }
        if rows.is_empty() {
            return Err(Error::format("CSV has no rows; cannot infer the grid"));
        }
        let n_points = rows.iter().take_while(|(p, _)| *p == 0).count();
        if n_points < 2 || !rows.len().is_multiple_of(n_points) {
            return Err(Error::format("paths in the CSV have inconsistent lengths"));
        }
        for (k, &(p, n)) in rows.iter().enumerate() {
            if p != k / n_points || n != k % n_points {
                return Err(Error::format(format!("row {} is out of order", k + 2)));
            }
        }
        let grid = TimeGrid::new(t0, dt, n_points - 1)?;
        PathSet::from_rows(grid, dim, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.as_slice().len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n_paths() as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid().n_points() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.grid().t0.to_le_bytes());
        out.extend_from_slice(&self.grid().dt.to_le_bytes());
        for v in self.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decode the binary format. An empty set carries no initial state; it is
    /// restored as the zero vector.
    pub fn from_bytes(bytes: &[u8]) -> Result<PathSet> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::format("missing SPG1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (h, n_points, dim) = (u32_at(4), u32_at(8), u32_at(12));
        let (t0, dt) = (f64_at(16), f64_at(24));
        if n_points < 2 {
            return Err(Error::format("grid must have at least two points"));
        }
        let len = h
            .checked_mul(n_points)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::format("tensor size overflows"))?;
        if bytes.len() != HEADER_LEN + len * 8 {
            return Err(Error::format(format!(
                "expected {} payload bytes, found {}",
                len * 8,
                bytes.len() - HEADER_LEN
            )));
        }
        let data: Vec<f64> = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let grid = TimeGrid::new(t0, dt, n_points - 1)?;
        if h == 0 {
            return PathSet::empty(grid, vec![0.0; dim]);
        }
        PathSet::from_rows(grid, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            return self.write_csv(BufWriter::new(File::create(path)?));
        }
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Load the binary format.
    pub fn load(path: impl AsRef<Path>) -> Result<PathSet> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        PathSet::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pathset() -> impl Strategy<Value = PathSet> {
        (1usize..4, 1usize..5, 1usize..3).prop_flat_map(|(h, n, d)| {
            (
                proptest::collection::vec(-1e6f64..1e6, d),
                proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL, h * n * d),
                -10.0f64..10.0,
                1e-4f64..10.0,
            )
                .prop_map(move |(x0, rest, t0, dt)| {
                    let mut data = Vec::new();
                    for i in 0..h {
                        data.extend_from_slice(&x0);
                        data.extend_from_slice(&rest[i * n * d..(i + 1) * n * d]);
                    }
                    PathSet::new(TimeGrid::new(t0, dt, n).unwrap(), d, x0, data).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(p in arb_pathset()) {
            let back = PathSet::from_bytes(&p.to_bytes()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn csv_round_trip_is_exact(p in arb_pathset()) {
            let mut buf = Vec::new();
            p.write_csv(&mut buf).unwrap();
            let back = PathSet::read_csv(&buf[..], p.grid().t0, p.grid().dt).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn csv_layout() {
        let grid = TimeGrid::new(0.0, 0.5, 1).unwrap();
        let p = PathSet::new(grid, 2, vec![1.0, 2.0], vec![1.0, 2.0, 1.5, 2.25]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "path_id,t_index,x_0,x_1\n0,0,1,2\n0,1,1.5,2.25\n");
    }

    #[test]
    fn binary_header_layout() {
        let grid = TimeGrid::new(0.25, 0.5, 2).unwrap();
        let p = PathSet::new(grid, 1, vec![3.0], vec![3.0, 4.0, 5.0]).unwrap();
        let b = p.to_bytes();
        assert_eq!(&b[..4], b"SPG1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 0.5);
        assert_eq!(b.len(), 32 + 3 * 8);
    }

    #[test]
    fn empty_set_has_valid_header() {
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        let p = PathSet::empty(grid, vec![0.0, 0.0]).unwrap();
        let back = PathSet::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back.n_paths(), 0);
        assert_eq!(back.grid().n_points(), 4);
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn truncated_binary_rejected() {
        let grid = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let p = PathSet::new(grid, 1, vec![0.0], vec![0.0, 1.0]).unwrap();
        let b = p.to_bytes();
        assert!(PathSet::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(PathSet::from_bytes(b"XXXX").is_err());
    }
}
