//! Dense real vectors, axis-aligned boxes and the weighted projection.
//!
//! Every [`RealVec`] holds only finite entries; operations that would produce
//! a NaN or an infinity return [`Error::NonFinite`] instead.

use crate::error::{Error, Result};

/// Dense vector of finite `f64` values, dimension at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVec(Vec<f64>);

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

impl RealVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        }
        check_finite(&values)?;
        Ok(RealVec(values))
    }

    /// # Panics
    /// If `dim == 0`.
    pub fn zeros(dim: usize) -> Self {
        Self::filled(dim, 0.0)
    }

    /// # Panics
    /// If `dim == 0` or `value` is not finite.
    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "RealVec dimension must be >= 1");
        assert!(value.is_finite(), "RealVec entries must be finite");
        RealVec(vec![value; dim])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn from_checked(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(RealVec(values))
    }

    fn zip_with(&self, other: &RealVec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_len(self.len(), other.len())?;
        Self::from_checked(self.iter().zip(other.iter()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn square(&self) -> Result<Self> {
        Self::from_checked(self.iter().map(|a| a * a).collect())
    }

    pub fn sqrt(&self) -> Result<Self> {
        if let Some(i) = self.iter().position(|&a| a < 0.0) {
            return Err(Error::Domain(format!(
                "sqrt of negative entry {} at coordinate {i}",
                self.0[i]
            )));
        }
        Ok(RealVec(self.iter().map(|a| a.sqrt()).collect()))
    }

    /// Coordinate-wise maximum.
    pub fn max(&self, other: &RealVec) -> Result<Self> {
        self.zip_with(other, f64::max)
    }

    pub fn add(&self, other: &RealVec) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Self> {
        Self::from_checked(self.iter().map(|a| a + c).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::from_checked(self.iter().map(|a| a * c).collect())
    }

    pub fn dot(&self, other: &RealVec) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }
}

impl std::ops::Index<usize> for RealVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for RealVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RealVec::new(v)
    }
}

/// Element-wise operations, selectable at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwOp {
    Square,
    Sqrt,
    Max,
    Add,
    Scale,
}

/// Second operand of [`ew`]; unary operations ignore it.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    None,
    Vec(&'a RealVec),
    Scalar(f64),
}

pub fn ew(op: EwOp, a: &RealVec, b: Operand<'_>) -> Result<RealVec> {
    match (op, b) {
        (EwOp::Square, _) => a.square(),
        (EwOp::Sqrt, _) => a.sqrt(),
        (EwOp::Max, Operand::Vec(b)) => a.max(b),
        (EwOp::Max, Operand::Scalar(c)) => a.max(&RealVec::new(vec![c; a.len()])?),
        (EwOp::Add, Operand::Vec(b)) => a.add(b),
        (EwOp::Add, Operand::Scalar(c)) => a.add_scalar(c),
        (EwOp::Scale, Operand::Scalar(c)) => a.scale(c),
        (op, _) => Err(Error::Contract(format!("{op:?} needs a matching operand"))),
    }
}

/// `num / den` coordinate-wise, with `0 / 0 = 0`.
pub fn safe_div(num: &RealVec, den: &RealVec) -> Result<RealVec> {
    check_len(num.len(), den.len())?;
    let mut out = Vec::with_capacity(num.len());
    for (index, (&n, &d)) in num.iter().zip(den.iter()).enumerate() {
        if d < 0.0 {
            return Err(Error::Domain(format!("negative denominator {d} at coordinate {index}")));
        }
        if d == 0.0 {
            if n != 0.0 {
                return Err(Error::DivisionDomain { index, num: n });
            }
            out.push(0.0);
        } else {
            out.push(n / d);
        }
    }
    RealVec::from_checked(out)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: RealVec,
    hi: RealVec,
}

impl BoxSet {
    pub fn new(lo: RealVec, hi: RealVec) -> Result<Self> {
        check_len(lo.len(), hi.len())?;
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::Parameter(format!(
                "box has lo[{i}] = {} > hi[{i}] = {}",
                lo[i], hi[i]
            )));
        }
        let b = BoxSet { lo, hi };
        if !b.diameter().is_finite() {
            return Err(Error::Parameter("box diameter overflows".into()));
        }
        Ok(b)
    }

    /// `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Result<Self> {
        if !(r >= 0.0) {
            return Err(Error::Parameter(format!("radius {r} must be >= 0")));
        }
        Self::new(RealVec::new(vec![-r; dim])?, RealVec::new(vec![r; dim])?)
    }

    /// `[-1, 1]`, the feasible set of every one-dimensional scenario.
    pub fn unit_interval() -> Self {
        Self::symmetric(1, 1.0).expect("valid box")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &RealVec {
        &self.lo
    }

    pub fn hi(&self) -> &RealVec {
        &self.hi
    }

    /// L-infinity diameter `max_i (hi_i - lo_i)`.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &RealVec) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }

    pub fn clamp(&self, y: &RealVec) -> Result<RealVec> {
        check_len(self.dim(), y.len())?;
        Ok(RealVec(
            y.iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(self.lo[i], self.hi[i]))
                .collect(),
        ))
    }
}

/// Diagonal of a positive-semidefinite weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagWeights(RealVec);

impl DiagWeights {
    pub fn new(w: RealVec) -> Result<Self> {
        if let Some(i) = w.iter().position(|&x| x < 0.0) {
            return Err(Error::Domain(format!("negative weight {} at coordinate {i}", w[i])));
        }
        Ok(DiagWeights(w))
    }

    pub fn identity(dim: usize) -> Self {
        DiagWeights(RealVec::filled(dim, 1.0))
    }

    pub fn as_vec(&self) -> &RealVec {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weighted squared norm `sum_i w_i (a_i - b_i)^2`.
    pub fn sq_dist(&self, a: &RealVec, b: &RealVec) -> Result<f64> {
        check_len(self.len(), a.len())?;
        check_len(a.len(), b.len())?;
        Ok(self
            .0
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum())
    }
}

/// `argmin_{x in box} sum_i w_i (x_i - y_i)^2`.
///
/// The objective separates per coordinate, so for positive weights the
/// minimizer is the clamp of `y`. Zero-weight coordinates are clamped too.
pub fn project_weighted(bx: &BoxSet, weights: &DiagWeights, y: &RealVec) -> Result<RealVec> {
    check_len(bx.dim(), weights.len())?;
    bx.clamp(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(v: &[f64]) -> RealVec {
        RealVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn projection_clamps_out_of_range_coordinate() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let w = DiagWeights::new(rv(&[1.0, 4.0])).unwrap();
        assert_eq!(project_weighted(&bx, &w, &rv(&[1.5, -0.3])).unwrap(), rv(&[1.0, -0.3]));
    }

    #[test]
    fn projection_is_identity_inside_box() {
        let bx = BoxSet::symmetric(3, 1.0).unwrap();
        let w = DiagWeights::identity(3);
        let y = rv(&[0.25, -0.999, 1.0]);
        assert_eq!(project_weighted(&bx, &w, &y).unwrap(), y);
    }

    #[test]
    fn zero_weight_coordinate_is_clamped() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let w = DiagWeights::new(rv(&[0.0, 1.0])).unwrap();
        assert_eq!(project_weighted(&bx, &w, &rv(&[2.0, 0.5])).unwrap(), rv(&[1.0, 0.5]));
    }

    #[test]
    fn projection_rejects_length_mismatch() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let w = DiagWeights::identity(2);
        assert!(matches!(
            project_weighted(&bx, &w, &rv(&[0.0])),
            Err(Error::Dimension { .. })
        ));
        let w3 = DiagWeights::identity(3);
        assert!(project_weighted(&bx, &w3, &rv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn elementwise_ops() {
        assert_eq!(ew(EwOp::Max, &rv(&[3.0, 1.0]), Operand::Vec(&rv(&[2.0, 5.0]))).unwrap(), rv(&[3.0, 5.0]));
        assert_eq!(ew(EwOp::Square, &rv(&[-2.0, 3.0]), Operand::None).unwrap(), rv(&[4.0, 9.0]));
        assert_eq!(ew(EwOp::Sqrt, &rv(&[4.0, 0.25]), Operand::None).unwrap(), rv(&[2.0, 0.5]));
        assert_eq!(ew(EwOp::Add, &rv(&[1.0, 2.0]), Operand::Scalar(0.5)).unwrap(), rv(&[1.5, 2.5]));
        assert_eq!(ew(EwOp::Scale, &rv(&[1.0, -2.0]), Operand::Scalar(3.0)).unwrap(), rv(&[3.0, -6.0]));
        assert!(matches!(ew(EwOp::Sqrt, &rv(&[-1.0]), Operand::None), Err(Error::Domain(_))));
        assert!(ew(EwOp::Scale, &rv(&[1.0]), Operand::None).is_err());
    }

    #[test]
    fn overflow_is_reported_not_propagated() {
        let big = rv(&[1e200]);
        assert!(matches!(big.square(), Err(Error::NonFinite { index: 0 })));
        assert!(matches!(big.scale(1e200), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn construction_rejects_non_finite_and_empty() {
        assert!(RealVec::new(vec![f64::NAN]).is_err());
        assert!(RealVec::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(RealVec::new(vec![]).is_err());
    }

    #[test]
    fn safe_div_cases() {
        assert_eq!(safe_div(&rv(&[4.0, 0.0]), &rv(&[2.0, 0.0])).unwrap(), rv(&[2.0, 0.0]));
        assert_eq!(safe_div(&rv(&[1.0, 1.0]), &rv(&[2.0, 4.0])).unwrap(), rv(&[0.5, 0.25]));
        assert!(matches!(
            safe_div(&rv(&[1.0, 0.0]), &rv(&[0.0, 1.0])),
            Err(Error::DivisionDomain { index: 0, .. })
        ));
        assert!(safe_div(&rv(&[1.0]), &rv(&[-1.0])).is_err());
    }

    #[test]
    fn box_validation_and_diameter() {
        let bx = BoxSet::new(rv(&[-1.0, 0.0]), rv(&[1.0, 3.0])).unwrap();
        assert_eq!(bx.diameter(), 3.0);
        assert!(BoxSet::new(rv(&[1.0]), rv(&[0.0])).is_err());
        assert!(BoxSet::new(rv(&[-1e308]), rv(&[1e308])).is_err());
        assert!(bx.contains(&rv(&[1.0, 3.0])));
        assert!(!bx.contains(&rv(&[1.0, 3.1])));
        assert!(DiagWeights::new(rv(&[-0.1])).is_err());
    }
}
