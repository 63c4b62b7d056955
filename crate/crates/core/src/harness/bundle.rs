//! Flat packing of the closed-loop state so a single RK4 call advances the
//! plant, the estimator, and every adaptive law together.

use nalgebra::{DMatrix, DVector};

/// Dimensions of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Plant state dimension.
    pub n: usize,
    /// Critic/actor feature count.
    pub p: usize,
    /// Identifier hidden width.
    pub l: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        let Layout { n, p, l } = *self;
        2 * n + 2 * p + p * p + 2 * l * n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 8] {
        let Layout { n, p, l } = *self;
        let mut o = [0; 8];
        let sizes = [n, n, p, p * p, p, l * n, n * l];
        for i in 0..7 {
            o[i + 1] = o[i] + sizes[i];
        }
        o
    }

    pub fn pack(&self, b: &Bundle) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(b.x.as_slice());
        out.extend_from_slice(b.x_hat.as_slice());
        out.extend_from_slice(b.wc.as_slice());
        out.extend_from_slice(b.gamma.as_slice());
        out.extend_from_slice(b.wa.as_slice());
        out.extend_from_slice(b.wf.as_slice());
        out.extend_from_slice(b.vf.as_slice());
        debug_assert_eq!(out.len(), self.len());
        DVector::from_vec(out)
    }

    pub fn unpack(&self, y: &DVector<f64>) -> Bundle {
        let Layout { n, p, l } = *self;
        let o = self.offsets();
        let s = y.as_slice();
        Bundle {
            x: DVector::from_column_slice(&s[o[0]..o[1]]),
            x_hat: DVector::from_column_slice(&s[o[1]..o[2]]),
            wc: DVector::from_column_slice(&s[o[2]..o[3]]),
            gamma: DMatrix::from_column_slice(p, p, &s[o[3]..o[4]]),
            wa: DVector::from_column_slice(&s[o[4]..o[5]]),
            wf: DMatrix::from_column_slice(l, n, &s[o[5]..o[6]]),
            vf: DMatrix::from_column_slice(n, l, &s[o[6]..o[7]]),
        }
    }

    /// Plant state slice of a packed vector.
    pub fn state<'a>(&self, y: &'a DVector<f64>) -> &'a [f64] {
        &y.as_slice()[..self.n]
    }
}

/// Everything integrated in closed loop. Also used for time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub x: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub wc: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub wa: DVector<f64>,
    /// `l x n`
    pub wf: DMatrix<f64>,
    /// `n x l`
    pub vf: DMatrix<f64>,
}

impl Bundle {
    pub fn zeros(layout: Layout) -> Self {
        let Layout { n, p, l } = layout;
        Bundle {
            x: DVector::zeros(n),
            x_hat: DVector::zeros(n),
            wc: DVector::zeros(p),
            gamma: DMatrix::zeros(p, p),
            wa: DVector::zeros(p),
            wf: DMatrix::zeros(l, n),
            vf: DMatrix::zeros(n, l),
        }
    }
}
