//! Binary trajectory files.
//!
//! Layout: three little-endian `u64` values `P, K, N` (paths, time levels, nodes),
//! then for each path `K` rows of `N` little-endian `f64` values.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_trajectories<W: Write>(mut out: W, paths: &[Vec<Vec<f64>>]) -> Result<()> {
    let p = paths.len();
    let k = paths.first().map_or(0, |x| x.len());
    let n = paths.first().and_then(|x| x.first()).map_or(0, |r| r.len());
    for path in paths {
        if path.len() != k || path.iter().any(|r| r.len() != n) {
            return Err(Error::Data("trajectories must share one shape".into()));
        }
    }
    for v in [p, k, n] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * k * n);
    for path in paths {
        buf.clear();
        for row in path {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_trajectories<R: Read>(mut input: R) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut word = [0u8; 8];
    let mut header = [0usize; 3];
    for h in &mut header {
        input.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word) as usize;
    }
    let [p, k, n] = header;
    let mut paths = Vec::with_capacity(p);
    for _ in 0..p {
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut word)?;
                row.push(f64::from_le_bytes(word));
            }
            rows.push(row);
        }
        paths.push(rows);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let paths = vec![
            vec![vec![1.0, -2.5], vec![0.0, 3.25], vec![1e-300, f64::MAX]],
            vec![vec![4.0, 5.0], vec![6.0, 7.0], vec![8.0, 9.0]],
        ];
        let mut bytes = Vec::new();
        write_trajectories(&mut bytes, &paths).unwrap();
        assert_eq!(bytes.len(), 24 + 2 * 3 * 2 * 8);
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(read_trajectories(&bytes[..]).unwrap(), paths);
    }

    #[test]
    fn ragged_input_is_rejected() {
        let paths = vec![vec![vec![1.0]], vec![vec![1.0, 2.0]]];
        assert!(write_trajectories(Vec::new(), &paths).is_err());
    }
}
