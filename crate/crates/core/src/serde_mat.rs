//! JSON-friendly (de)serialization of nalgebra types: vectors as flat arrays,
//! matrices as row-major arrays of rows. Use with `#[serde(with = "...")]`.

pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub mod matrix {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("matrix rows have unequal lengths".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{dmatrix, DMatrix, DVector};
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "super::matrix")]
        m: DMatrix<f64>,
        #[serde(with = "super::vector")]
        v: DVector<f64>,
    }

    #[test]
    fn row_major_round_trip() {
        let h = Holder {
            m: dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0],
            v: DVector::from_vec(vec![7.0, 8.0]),
        };
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]],"v":[7.0,8.0]}"#);
        let back: Holder = serde_json::from_str(&s).unwrap();
        assert_eq!(back.m, h.m);
        assert!(serde_json::from_str::<Holder>(r#"{"m":[[1.0],[2.0,3.0]],"v":[]}"#).is_err());
    }
}
