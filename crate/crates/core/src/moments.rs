//! Moment vectors and Lagrange multipliers.
//!
//! A moment vector `u` of order `N` collects velocity averages of a kinetic
//! density against the monomial basis; its zero component is the particle
//! density. Lagrange multipliers `alpha` are the dual variables of the
//! entropy minimization problem; the reduced form drops the zero component,
//! which is determined by the unit-mass constraint of normalized moments.

use crate::error::{Error, Result};

/// Velocity-space dimension of a case. 1D uses the interval [-1,1], 2D the
/// projected unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    One,
    Two,
}

impl Dimension {
    pub fn spatial(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
        }
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.spatial())
    }
}

/// Number of basis functions for a (order, dimension) pair.
///
/// 1D uses the monomials `[1, mu, ..., mu^N]`; 2D is restricted to first
/// order with `[1, v_x, v_y]`.
pub fn basis_size(order: usize, dimension: Dimension) -> Result<usize> {
    match dimension {
        Dimension::One => Ok(order + 1),
        Dimension::Two if order == 1 => Ok(3),
        Dimension::Two => Err(Error::Config(format!(
            "2D bases are only defined for order 1, got order {order}"
        ))),
    }
}

/// Moment coordinates `u` with their basis tag.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    pub values: Vec<f64>,
    pub order: usize,
    pub dimension: Dimension,
}

impl MomentVector {
    pub fn new(values: Vec<f64>, order: usize, dimension: Dimension) -> Result<Self> {
        let expected = basis_size(order, dimension)?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "moment vector of order {order} in {dimension}D needs {expected} entries, got {}",
                values.len()
            )));
        }
        Ok(MomentVector {
            values,
            order,
            dimension,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Order-zero density.
    pub fn u0(&self) -> f64 {
        self.values[0]
    }

    /// A vector is in normalized form when its density is exactly one.
    pub fn is_normalized(&self) -> bool {
        self.values[0] == 1.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Dual variables of the entropy minimization problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangeMultipliers {
    pub values: Vec<f64>,
}

impl LagrangeMultipliers {
    pub fn new(values: Vec<f64>) -> Self {
        LagrangeMultipliers { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn alpha0(&self) -> f64 {
        self.values[0]
    }

    /// Reduced multipliers `[alpha_1, ..., alpha_N]`.
    pub fn reduced(&self) -> &[f64] {
        &self.values[1..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Assemble full multipliers from the dependent zero component and the
    /// reduced part.
    pub fn from_reduced(alpha0: f64, reduced: &[f64]) -> Self {
        let mut values = Vec::with_capacity(reduced.len() + 1);
        values.push(alpha0);
        values.extend_from_slice(reduced);
        LagrangeMultipliers { values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes() {
        assert_eq!(basis_size(0, Dimension::One).unwrap(), 1);
        assert_eq!(basis_size(4, Dimension::One).unwrap(), 5);
        assert_eq!(basis_size(1, Dimension::Two).unwrap(), 3);
        assert!(basis_size(2, Dimension::Two).is_err());
    }

    #[test]
    fn moment_vector_shape_checked() {
        assert!(MomentVector::new(vec![1.0, 0.0], 1, Dimension::One).is_ok());
        assert!(MomentVector::new(vec![1.0, 0.0], 2, Dimension::One).is_err());
        assert!(MomentVector::new(vec![1.0, 0.3, 0.3], 1, Dimension::Two).is_ok());
    }

    #[test]
    fn reduced_split() {
        let a = LagrangeMultipliers::new(vec![-0.5, 1.0, 2.0]);
        assert_eq!(a.alpha0(), -0.5);
        assert_eq!(a.reduced(), &[1.0, 2.0]);
        let b = LagrangeMultipliers::from_reduced(-0.5, &[1.0, 2.0]);
        assert_eq!(a, b);
    }
}
