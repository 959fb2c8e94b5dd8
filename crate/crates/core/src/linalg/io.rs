//! Matrix (de)serialization: JSON arrays-of-arrays (row-major) and CSV.
//!
//! Numbers are written with Rust's shortest round-trip `f64` formatting, so
//! a write/read cycle reproduces every entry bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{RealMatrix, SymmetricMatrix};
use crate::error::{Error, Result};

/// Row-major nested-vector form used on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rows(pub Vec<Vec<f64>>);

impl From<&RealMatrix> for Rows {
    fn from(m: &RealMatrix) -> Self {
        Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

impl TryFrom<Rows> for RealMatrix {
    type Error = Error;

    fn try_from(rows: Rows) -> Result<Self> {
        let r = rows.0.len();
        let c = rows.0.first().map_or(0, Vec::len);
        if rows.0.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch {
                context: "matrix rows",
                expected: format!("{c} columns in every row"),
                found: "ragged rows".into(),
            });
        }
        let flat: Vec<f64> = rows.0.into_iter().flatten().collect();
        let m = RealMatrix::from_row_slice(r, c, &flat);
        super::ensure_finite(&m, "deserialized matrix")?;
        Ok(m)
    }
}

impl From<SymmetricMatrix> for Rows {
    fn from(s: SymmetricMatrix) -> Self {
        Rows::from(s.as_matrix())
    }
}

impl TryFrom<Rows> for SymmetricMatrix {
    type Error = Error;

    fn try_from(rows: Rows) -> Result<Self> {
        SymmetricMatrix::new(RealMatrix::try_from(rows)?)
    }
}

/// `#[serde(with = "crate::linalg::io::rows")]` adapter for `RealMatrix` fields.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &RealMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        Rows::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<RealMatrix, D::Error> {
        let rows = Rows::deserialize(d)?;
        RealMatrix::try_from(rows).map_err(serde::de::Error::custom)
    }
}

pub fn to_json(m: &RealMatrix) -> Result<String> {
    Ok(serde_json::to_string(&Rows::from(m))?)
}

pub fn from_json(s: &str) -> Result<RealMatrix> {
    RealMatrix::try_from(serde_json::from_str::<Rows>(s)?)
}

/// One matrix row per CSV record, no header.
pub fn write_csv<W: Write>(m: &RealMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<RealMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    RealMatrix::try_from(Rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn json_is_row_major() {
        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        assert_eq!(to_json(&m).unwrap(), "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_json("[[1.0,2.0],[3.0]]").is_err());
    }

    #[test]
    fn csv_layout() {
        let m = dmatrix![0.1, -2.5e-300; 1.0 / 3.0, 7.0];
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("0.1,-2.5e-300\n"));
    }

    proptest! {
        #[test]
        fn json_and_csv_round_trip_exactly(
            (r, c, v) in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
                (Just(r), Just(c), proptest::collection::vec(proptest::num::f64::NORMAL, r * c))
            })
        ) {
            let m = RealMatrix::from_row_slice(r, c, &v);
            prop_assert_eq!(&from_json(&to_json(&m).unwrap()).unwrap(), &m);
            let mut buf = Vec::new();
            write_csv(&m, &mut buf).unwrap();
            prop_assert_eq!(&read_csv(buf.as_slice()).unwrap(), &m);
        }
    }
}
