//! Synthetic benchmark functions.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

pub const ACKLEY_A: f64 = 20.0;
pub const ACKLEY_B: f64 = 0.2;
pub const ACKLEY_C: f64 = 2.0 * PI;

/// Ackley function with shape parameters `a`, `b`, `c`.
pub fn ackley(x: &[f64], a: f64, b: f64, c: f64) -> f64 {
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cos = x.iter().map(|v| (c * v).cos()).sum::<f64>() / d;
    -a * (-b * sq.sqrt()).exp() - cos.exp() + a + E
}

pub fn griewank(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
    let prod: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    1.0 + sum - prod
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Ackley,
    Griewank,
}

impl TestFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Ackley => ackley(x, ACKLEY_A, ACKLEY_B, ACKLEY_C),
            TestFunction::Griewank => griewank(x),
        }
    }

    /// Evaluates every row of `x`.
    pub fn eval_rows(self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut row = vec![0.0; x.ncols()];
        DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.eval(&row)
            }),
        )
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestFunction::Ackley => "ackley",
            TestFunction::Griewank => "griewank",
        })
    }
}

impl FromStr for TestFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ackley" => Ok(TestFunction::Ackley),
            "griewank" => Ok(TestFunction::Griewank),
            other => Err(format!("unknown test function `{other}`")),
        }
    }
}
