//! Polynomial activation coefficients.
//!
//! The shipped table approximates ReLU on `[-8, 8]` as `x/2` plus an even
//! least-squares fit of `|x|/2`; `scripts/fit_relu_poly.py` regenerates it.

use std::collections::BTreeMap;

use super::MockError;

const SHIPPED: &str = include_str!("../../data/relu_poly.txt");

/// Coefficients (ascending powers) per activation degree.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTable(BTreeMap<u32, Vec<f64>>);

impl Default for PolyTable {
    fn default() -> Self {
        PolyTable::shipped()
    }
}

impl PolyTable {
    /// The shipped ReLU approximations, degrees 1 through 8.
    pub fn shipped() -> Self {
        let mut table = BTreeMap::new();
        for line in SHIPPED.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (degree, coeffs) = line.split_once(':').expect("data lines are `d: c0 ... cd`");
            let degree: u32 = degree.trim().parse().expect("degree is an integer");
            let coeffs: Vec<f64> = coeffs
                .split_whitespace()
                .map(|c| c.parse().expect("coefficient is a float"))
                .collect();
            assert_eq!(coeffs.len(), degree as usize + 1);
            table.insert(degree, coeffs);
        }
        PolyTable(table)
    }

    /// Replace entries with `overrides`.
    pub fn with_overrides(mut self, overrides: &BTreeMap<u32, Vec<f64>>) -> Self {
        for (&d, c) in overrides {
            self.0.insert(d, c.clone());
        }
        self
    }

    pub fn coeffs(&self, degree: u32) -> Result<&[f64], MockError> {
        self.0
            .get(&degree)
            .map(Vec::as_slice)
            .ok_or(MockError::NoActivation { degree })
    }

    pub fn degrees(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.keys().copied()
    }
}

/// Horner evaluation.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}
