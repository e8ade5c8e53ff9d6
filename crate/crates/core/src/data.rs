//! Observed trial data: outcome, arm indicator, and the two covariate blocks.

use crate::error::{Error, Result};
use crate::expfam::Family;
use nalgebra::{DMatrix, DVector};

/// A complete-case two-arm trial dataset.
///
/// `x_main` enters the linear main-effect term and `x_index` the single-index
/// interaction term; the two blocks may share columns. Randomization
/// probabilities default to the sample arm proportions unless supplied.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    arm: Vec<u8>,
    x_main: DMatrix<f64>,
    x_index: DMatrix<f64>,
    pi0: f64,
    pi1: f64,
    main_names: Vec<String>,
    index_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        arm: Vec<u8>,
        x_main: DMatrix<f64>,
        x_index: DMatrix<f64>,
        main_names: Vec<String>,
        index_names: Vec<String>,
        pi_override: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if arm.len() != n || x_main.nrows() != n || x_index.nrows() != n {
            return Err(Error::Data(format!(
                "length mismatch: y has {n} rows, arm {}, x_main {}, x_index {}",
                arm.len(),
                x_main.nrows(),
                x_index.nrows()
            )));
        }
        if x_main.ncols() != main_names.len() || x_index.ncols() != index_names.len() {
            return Err(Error::Data("column name count does not match matrix width".into()));
        }
        for names in [&main_names, &index_names] {
            let mut seen = std::collections::HashSet::new();
            for name in names {
                if !seen.insert(name) {
                    return Err(Error::Data(format!("duplicate column name `{name}`")));
                }
            }
        }
        if let Some(&bad) = arm.iter().find(|&&a| a > 1) {
            return Err(Error::Data(format!("arm values must be 0 or 1, found {bad}")));
        }
        let n1 = arm.iter().filter(|&&a| a == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::Data("both treatment arms must be present".into()));
        }
        if y.iter().any(|v| !v.is_finite())
            || x_main.iter().any(|v| !v.is_finite())
            || x_index.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        let (pi0, pi1) = match pi_override {
            Some((p0, p1)) => {
                if !(p0 > 0.0 && p1 > 0.0) || (p0 + p1 - 1.0).abs() > 1e-6 {
                    return Err(Error::Data(format!(
                        "pi override ({p0}, {p1}) must be positive and sum to 1"
                    )));
                }
                // renormalize exactly
                (p0 / (p0 + p1), p1 / (p0 + p1))
            }
            None => {
                let p1 = n1 as f64 / n as f64;
                (1.0 - p1, p1)
            }
        };
        Ok(Dataset { y: DVector::from_vec(y), arm, x_main, x_index, pi0, pi1, main_names, index_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn arm(&self) -> &[u8] {
        &self.arm
    }

    pub fn x_main(&self) -> &DMatrix<f64> {
        &self.x_main
    }

    pub fn x_index(&self) -> &DMatrix<f64> {
        &self.x_index
    }

    pub fn pi(&self) -> (f64, f64) {
        (self.pi0, self.pi1)
    }

    pub fn main_names(&self) -> &[String] {
        &self.main_names
    }

    pub fn index_names(&self) -> &[String] {
        &self.index_names
    }

    pub fn p_main(&self) -> usize {
        self.x_main.ncols()
    }

    pub fn p_index(&self) -> usize {
        self.x_index.ncols()
    }

    /// Checks every response value against the family support.
    pub fn check_support(&self, family: &Family) -> Result<()> {
        for (i, &v) in self.y.iter().enumerate() {
            family.check_support(v, i)?;
        }
        Ok(())
    }

    /// Index values βᵀxᵢ for all subjects.
    pub fn index_values(&self, beta: &DVector<f64>) -> Vec<f64> {
        let n = self.n();
        let p = self.p_index();
        let xs = self.x_index.as_slice();
        let bs = beta.as_slice();
        (0..n)
            .map(|i| {
                let mut u = 0.0;
                for j in 0..p {
                    u += xs[j * n + i] * bs[j];
                }
                u
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Vec<f64>, Vec<u8>, DMatrix<f64>, DMatrix<f64>) {
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let arm = vec![0, 1, 1, 0];
        let xm = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 1.0, -0.3, 1.0, 0.5, 1.0, 0.0]);
        let xi = DMatrix::from_row_slice(4, 1, &[0.2, -0.3, 0.5, 0.0]);
        (y, arm, xm, xi)
    }

    #[test]
    fn sample_proportions_fill_pi() {
        let (y, arm, xm, xi) = small();
        let ds = Dataset::new(
            y,
            arm,
            xm,
            xi,
            vec!["intercept".into(), "x1".into()],
            vec!["x1".into()],
            None,
        )
        .unwrap();
        assert_eq!(ds.pi(), (0.5, 0.5));
    }

    #[test]
    fn rejects_single_arm_and_bad_codes() {
        let (y, _, xm, xi) = small();
        let names = (vec!["a".into(), "b".into()], vec!["c".into()]);
        assert!(Dataset::new(
            y.clone(),
            vec![1, 1, 1, 1],
            xm.clone(),
            xi.clone(),
            names.0.clone(),
            names.1.clone(),
            None
        )
        .is_err());
        assert!(Dataset::new(y, vec![0, 1, 2, 0], xm, xi, names.0, names.1, None).is_err());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_pi() {
        let (y, arm, xm, xi) = small();
        assert!(Dataset::new(
            y.clone(),
            arm.clone(),
            xm.clone(),
            xi.clone(),
            vec!["x".into(), "x".into()],
            vec!["c".into()],
            None
        )
        .is_err());
        assert!(Dataset::new(
            y,
            arm,
            xm,
            xi,
            vec!["a".into(), "b".into()],
            vec!["c".into()],
            Some((0.9, 0.9))
        )
        .is_err());
    }
}
