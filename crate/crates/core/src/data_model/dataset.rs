use crate::error::{Error, Result};

/// Columnar dataset of (c1, c2, c3, a, y) with per-cell missingness masks
/// for every column except the always-observed binary confounder c1.
/// Masked cells hold a placeholder value and must not be read by analyses.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub n: usize,
    pub c1: Vec<u8>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub a: Vec<u32>,
    pub y: Vec<u8>,
    pub miss_c2: Vec<bool>,
    pub miss_c3: Vec<bool>,
    pub miss_a: Vec<bool>,
    pub miss_y: Vec<bool>,
    /// True conditional exposure mean per row, when generated.
    pub true_lambda: Option<Vec<f64>>,
    /// True outcome probability per row, when generated.
    pub true_pi: Option<Vec<f64>>,
}

impl Dataset {
    pub fn with_capacity(n: usize) -> Self {
        Dataset {
            n: 0,
            c1: Vec::with_capacity(n),
            c2: Vec::with_capacity(n),
            c3: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            miss_c2: Vec::with_capacity(n),
            miss_c3: Vec::with_capacity(n),
            miss_a: Vec::with_capacity(n),
            miss_y: Vec::with_capacity(n),
            true_lambda: None,
            true_pi: None,
        }
    }

    /// Fully observed dataset from complete columns.
    pub fn complete(c1: Vec<u8>, c2: Vec<f64>, c3: Vec<f64>, a: Vec<u32>, y: Vec<u8>) -> Self {
        let n = c1.len();
        Dataset {
            n,
            c1,
            c2,
            c3,
            a,
            y,
            miss_c2: vec![false; n],
            miss_c3: vec![false; n],
            miss_a: vec![false; n],
            miss_y: vec![false; n],
            true_lambda: None,
            true_pi: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.miss_c2.iter().any(|&m| m)
            && !self.miss_c3.iter().any(|&m| m)
            && !self.miss_a.iter().any(|&m| m)
            && !self.miss_y.iter().any(|&m| m)
    }

    pub fn row_incomplete(&self, i: usize) -> bool {
        self.miss_c2[i] || self.miss_c3[i] || self.miss_a[i] || self.miss_y[i]
    }

    /// Share of rows with at least one missing value.
    pub fn phi_realised(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let incomplete = (0..self.n).filter(|&i| self.row_incomplete(i)).count();
        incomplete as f64 / self.n as f64
    }

    pub fn missing_cells(&self) -> usize {
        let count = |m: &[bool]| m.iter().filter(|&&x| x).count();
        count(&self.miss_c2) + count(&self.miss_c3) + count(&self.miss_a) + count(&self.miss_y)
    }

    /// Shared validator for the dataset invariants. `a_max` is checked when
    /// known to the caller.
    pub fn validate(&self, a_max: Option<u32>) -> Result<()> {
        let n = self.n;
        if self.c1.len() != n
            || self.c2.len() != n
            || self.c3.len() != n
            || self.a.len() != n
            || self.y.len() != n
            || self.miss_c2.len() != n
            || self.miss_c3.len() != n
            || self.miss_a.len() != n
            || self.miss_y.len() != n
        {
            return Err(Error::Validation("column length mismatch".into()));
        }
        for (i, &v) in self.c1.iter().enumerate() {
            if v > 1 {
                return Err(Error::Validation(format!("c1 not binary at row {i}: {v}")));
            }
        }
        for i in 0..n {
            if !self.miss_y[i] && self.y[i] > 1 {
                return Err(Error::Validation(format!(
                    "y not binary at row {i}: {}",
                    self.y[i]
                )));
            }
            if !self.miss_a[i] {
                if let Some(cap) = a_max {
                    if self.a[i] > cap {
                        return Err(Error::Validation(format!(
                            "a exceeds a_max={cap} at row {i}: {}",
                            self.a[i]
                        )));
                    }
                }
            }
            if !self.miss_c2[i] && !self.c2[i].is_finite() {
                return Err(Error::Validation(format!("non-finite c2 at row {i}")));
            }
            if !self.miss_c3[i] && !self.c3[i].is_finite() {
                return Err(Error::Validation(format!("non-finite c3 at row {i}")));
            }
        }
        if let Some(pi) = &self.true_pi {
            if pi.len() != n {
                return Err(Error::Validation("true_pi length mismatch".into()));
            }
            for (i, &p) in pi.iter().enumerate() {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Validation(format!(
                        "true_pi outside (0,1) at row {i}: {p}"
                    )));
                }
            }
        }
        if let Some(lambda) = &self.true_lambda {
            if lambda.len() != n {
                return Err(Error::Validation("true_lambda length mismatch".into()));
            }
            for (i, &l) in lambda.iter().enumerate() {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(Error::Validation(format!(
                        "true_lambda not positive at row {i}: {l}"
                    )));
                }
            }
        }
        Ok(())
    }
}
