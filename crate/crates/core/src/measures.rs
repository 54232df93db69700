//! Uniform-weight particle clouds standing in for probability measures on R^d.
//!
//! Every particle carries mass `1/n`, so integrals against a cloud are plain
//! particle averages. Points are stored row-major in one flat buffer.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability measure given by `n` equally weighted atoms in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a cloud from a list of points, validating shape and finiteness.
    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::InvalidParameter("points must have dimension >= 1".into()));
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for (index, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { dim, coords })
    }

    /// Builds a cloud from a row-major buffer of `n * dim` coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if coords.is_empty() {
            return Err(Error::Empty);
        }
        if coords.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(Self { dim, coords })
    }

    /// `n` copies of the origin: the Dirac mass at zero as an `n`-particle cloud.
    pub fn dirac_origin(dim: usize, n: usize) -> Result<Self> {
        Self::from_flat(dim, vec![0.0; dim * n])
    }

    pub(crate) fn from_flat_unchecked(dim: usize, coords: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !coords.is_empty() && coords.len() % dim == 0);
        Self { dim, coords }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false; a cloud holds at least one particle.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinate buffer.
    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn to_points(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    /// First moment (barycenter) of the cloud.
    pub fn mean(&self) -> Vec<f64> {
        mean_of(self.dim, &self.coords)
    }

    /// `(sum_i |x_i|^p / n)^(1/p)`, which is also `W_p(m, delta_0)`.
    pub fn moment_root(&self, p: f64) -> Result<f64> {
        if !(p > 1.0) {
            return Err(Error::InvalidParameter(format!("moment order p must exceed 1, got {p}")));
        }
        Ok(lp_mean_norm(self.dim, &self.coords, p))
    }

    /// Image of the cloud under a pointwise map `h`. The map receives the
    /// source point and writes the image into the output slice.
    pub fn push_forward<F>(&self, mut h: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut out = vec![0.0; self.coords.len()];
        for (index, (x, y)) in self
            .coords
            .chunks_exact(self.dim)
            .zip(out.chunks_exact_mut(self.dim))
            .enumerate()
        {
            h(x, y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { dim: self.dim, coords: out })
    }

    /// `(Id + tau b)# m`: particle `i` moves to `x_i + tau * b_i`.
    pub fn perturb(&self, field: &PerturbationField, tau: f64) -> Result<Self> {
        field.check_matches(self)?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("step tau must be finite and >= 0, got {tau}")));
        }
        let coords: Vec<f64> = self
            .coords
            .iter()
            .zip(&field.values)
            .map(|(x, b)| x + tau * b)
            .collect();
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: pos / self.dim });
        }
        Ok(Self { dim: self.dim, coords })
    }

    /// Reads a headerless CSV cloud, one particle per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (index, record) in rdr.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::InvalidParameter(format!("row {index}: cannot parse {field:?} as a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_points(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in self.points() {
            wtr.write_record(p.iter().map(|v| fmt_f64(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a JSON array of arrays.
    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_reader(reader)?;
        Self::from_points(&rows)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for EmpiricalMeasure {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_points(&rows)
    }
}

impl From<EmpiricalMeasure> for Vec<Vec<f64>> {
    fn from(m: EmpiricalMeasure) -> Self {
        m.to_points()
    }
}

/// A displacement `b(x_i)` attached to each particle of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationField {
    dim: usize,
    values: Vec<f64>,
}

impl PerturbationField {
    pub fn from_vectors<P: AsRef<[f64]>>(vectors: &[P]) -> Result<Self> {
        let m = EmpiricalMeasure::from_points(vectors)?;
        Ok(Self { dim: m.dim, values: m.coords })
    }

    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        let m = EmpiricalMeasure::from_flat(dim, values)?;
        Ok(Self { dim: m.dim, values: m.coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// `||b||_{L_p(m)}` for the uniform weights of the associated measure.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_mean_norm(self.dim, &self.values, p)
    }

    pub(crate) fn check_matches(&self, m: &EmpiricalMeasure) -> Result<()> {
        if self.dim != m.dim {
            return Err(Error::DimensionMismatch { expected: m.dim, found: self.dim });
        }
        if self.len() != m.len() {
            return Err(Error::SizeMismatch { expected: m.len(), found: self.len() });
        }
        Ok(())
    }
}

pub(crate) fn mean_of(dim: usize, coords: &[f64]) -> Vec<f64> {
    let n = coords.len() / dim;
    let mut acc = vec![0.0; dim];
    for p in coords.chunks_exact(dim) {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

pub(crate) fn lp_mean_norm(dim: usize, values: &[f64], p: f64) -> f64 {
    let n = values.len() / dim;
    let total: f64 = values
        .chunks_exact(dim)
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt().powf(p))
        .sum();
    (total / n as f64).powf(1.0 / p)
}

/// Shortest decimal form that round-trips: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_dirac() {
        let m = EmpiricalMeasure::from_points(&[[0.0]]).unwrap();
        assert_eq!((m.len(), m.dim()), (1, 1));
    }

    #[test]
    fn two_point_cloud() {
        let m = EmpiricalMeasure::from_points(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!((m.len(), m.dim()), (2, 2));
        assert_eq!(m.mean(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            EmpiricalMeasure::from_points(&[[1.0], [f64::NAN]]),
            Err(Error::NonFinite { index: 1 })
        ));
        let empty: [[f64; 1]; 0] = [];
        assert!(matches!(EmpiricalMeasure::from_points(&empty), Err(Error::Empty)));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(
            EmpiricalMeasure::from_points(&ragged),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn moment_root_examples() {
        let dirac = EmpiricalMeasure::from_points(&[[0.0]]).unwrap();
        assert_eq!(dirac.moment_root(2.0).unwrap(), 0.0);
        let sym = EmpiricalMeasure::from_points(&[[-1.0], [1.0]]).unwrap();
        assert_abs_diff_eq!(sym.moment_root(2.0).unwrap(), 1.0, epsilon = 1e-15);
        let m = EmpiricalMeasure::from_points(&[[0.0], [2.0]]).unwrap();
        assert_abs_diff_eq!(m.moment_root(2.0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert!(m.moment_root(1.0).is_err());
    }

    #[test]
    fn push_forward_examples() {
        let dirac = EmpiricalMeasure::from_points(&[[0.0]]).unwrap();
        let moved = dirac.push_forward(|x, y| y[0] = x[0] + 1.0).unwrap();
        assert_eq!(moved.point(0), &[1.0]);

        let m = EmpiricalMeasure::from_points(&[[0.0], [2.0]]).unwrap();
        let doubled = m.push_forward(|x, y| y[0] = 2.0 * x[0]).unwrap();
        assert_eq!(doubled.to_points(), vec![vec![0.0], vec![4.0]]);

        let bad = m.push_forward(|_, y| y[0] = f64::INFINITY);
        assert!(matches!(bad, Err(Error::NonFinite { index: 0 })));
    }

    #[test]
    fn perturb_examples() {
        let m = EmpiricalMeasure::from_points(&[[0.0], [2.0]]).unwrap();
        let b = PerturbationField::from_vectors(&[[1.0], [-1.0]]).unwrap();
        assert_eq!(m.perturb(&b, 0.0).unwrap(), m);
        assert_eq!(m.perturb(&b, 0.5).unwrap().to_points(), vec![vec![0.5], vec![1.5]]);

        let dirac = EmpiricalMeasure::from_points(&[[0.0]]).unwrap();
        let one = PerturbationField::from_vectors(&[[1.0]]).unwrap();
        assert_eq!(dirac.perturb(&one, 2.0).unwrap().point(0), &[2.0]);

        assert!(matches!(dirac.perturb(&b, 1.0), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn csv_and_json_readers_validate() {
        let m = EmpiricalMeasure::read_csv("1.0, 2.0\n3,4\n".as_bytes()).unwrap();
        assert_eq!(m.to_points(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(EmpiricalMeasure::read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(EmpiricalMeasure::read_csv("1,NaN\n".as_bytes()).is_err());

        let j = EmpiricalMeasure::read_json("[[0.5],[1e-3]]".as_bytes()).unwrap();
        assert_eq!(j.to_points(), vec![vec![0.5], vec![1e-3]]);
        assert!(EmpiricalMeasure::read_json("[]".as_bytes()).is_err());
        assert!(EmpiricalMeasure::read_json("[[1,2],[3]]".as_bytes()).is_err());

        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(EmpiricalMeasure::read_csv(buf.as_slice()).unwrap(), m);
    }

    fn cloud(dim: usize) -> impl Strategy<Value = EmpiricalMeasure> {
        prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), 1..20)
            .prop_map(|rows| EmpiricalMeasure::from_points(&rows).unwrap())
    }

    proptest! {
        #[test]
        fn moment_root_is_homogeneous(m in cloud(3), c in -5.0..5.0f64, p in 1.1..4.0f64) {
            let scaled = m.push_forward(|x, y| for (yi, xi) in y.iter_mut().zip(x) { *yi = c * xi }).unwrap();
            let lhs = scaled.moment_root(p).unwrap();
            let rhs = c.abs() * m.moment_root(p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn perturbation_moment_bound(
            rows in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 2), prop::collection::vec(-5.0..5.0f64, 2)), 1..20),
            tau in 0.0..3.0f64,
            p in 1.1..4.0f64,
        ) {
            let pts: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
            let disp: Vec<_> = rows.iter().map(|r| r.1.clone()).collect();
            let m = EmpiricalMeasure::from_points(&pts).unwrap();
            let b = PerturbationField::from_vectors(&disp).unwrap();
            let moved = m.perturb(&b, tau).unwrap();
            let bound = m.moment_root(p).unwrap() + tau * b.lp_norm(p);
            prop_assert!(moved.moment_root(p).unwrap() <= bound + 1e-10);
        }

        #[test]
        fn identity_push_forward_is_exact(m in cloud(2)) {
            let same = m.push_forward(|x, y| y.copy_from_slice(x)).unwrap();
            prop_assert_eq!(same, m);
        }
    }
}
