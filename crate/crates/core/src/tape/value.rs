//! Node values. Large products with a small inner dimension (the `N × N`
//! similarity matrix) are kept factored as `Σ U Vᵀ + diag(d)`, which lets the
//! margin term and its adjoint run in `O(N D²)` instead of `O(N² D)`.

use std::borrow::Cow;

use crate::tensor::{matmul, Tensor};

/// `Σ_k U_k V_kᵀ (+ diag(d) when square)`, with `U_k: rows × r`, `V_k: cols × r`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    rows: usize,
    cols: usize,
    terms: Vec<(Tensor, Tensor)>,
    diag: Option<Vec<f64>>,
}

impl LowRank {
    pub fn outer(u: Tensor, v: Tensor) -> Self {
        assert_eq!(u.cols(), v.cols(), "factor ranks differ");
        Self {
            rows: u.rows(),
            cols: v.rows(),
            terms: vec![(u, v)],
            diag: None,
        }
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        Self {
            rows: d.len(),
            cols: d.len(),
            terms: vec![],
            diag: Some(d),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn terms(&self) -> &[(Tensor, Tensor)] {
        &self.terms
    }

    pub fn diag(&self) -> Option<&[f64]> {
        self.diag.as_deref()
    }

    /// The single `U Vᵀ` factor pair when there is exactly one term and no diagonal.
    pub fn single_term(&self) -> Option<(&Tensor, &Tensor)> {
        match (&self.terms[..], &self.diag) {
            ([(u, v)], None) => Some((u, v)),
            _ => None,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut terms = self.terms.iter().map(|(u, v)| matmul(u, false, v, true));
        let mut out = terms.next().unwrap_or_else(|| Tensor::zeros(self.rows, self.cols));
        for t in terms {
            out.add_assign(&t);
        }
        if let Some(d) = &self.diag {
            for (i, &di) in d.iter().enumerate() {
                out.set(i, i, out.get(i, i) + di);
            }
        }
        out
    }

    /// `f(self_ij, y_ij)` for every entry, without materializing `self`.
    pub fn zip_dense(&self, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), y.shape(), "zip_dense shape mismatch");
        let mut out = Tensor::zeros(self.rows, self.cols);
        let mut buf = vec![0.0; self.cols];
        for i in 0..self.rows {
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (u, v) in &self.terms {
                let ui = u.row(i);
                for (j, b) in buf.iter_mut().enumerate() {
                    *b += dot(ui, v.row(j));
                }
            }
            if let Some(d) = &self.diag {
                buf[i] += d[i];
            }
            for ((o, &b), &yv) in out.row_mut(i).iter_mut().zip(&buf).zip(y.row(i)) {
                *o = f(b, yv);
            }
        }
        out
    }

    pub fn transpose(&self) -> LowRank {
        LowRank {
            rows: self.cols,
            cols: self.rows,
            terms: self.terms.iter().map(|(u, v)| (v.clone(), u.clone())).collect(),
            diag: self.diag.clone(),
        }
    }

    pub fn scaled(&self, c: f64) -> LowRank {
        LowRank {
            rows: self.rows,
            cols: self.cols,
            terms: self.terms.iter().map(|(u, v)| (u.scaled(c), v.clone())).collect(),
            diag: self.diag.as_ref().map(|d| d.iter().map(|x| x * c).collect()),
        }
    }

    pub fn concat(mut self, other: LowRank) -> LowRank {
        assert_eq!(self.shape(), other.shape());
        self.terms.extend(other.terms);
        self.diag = match (self.diag, other.diag) {
            (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            (a, b) => a.or(b),
        };
        self
    }

    /// `self · x` without materializing `self`.
    pub fn mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(self.cols, x.rows(), "low-rank product shape mismatch");
        let mut out = Tensor::zeros(self.rows, x.cols());
        for (u, v) in &self.terms {
            let vtx = matmul(v, true, x, false);
            out.add_assign(&matmul(u, false, &vtx, false));
        }
        if let Some(d) = &self.diag {
            for (i, &di) in d.iter().enumerate() {
                for (o, &xv) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o += di * xv;
                }
            }
        }
        out
    }

    pub fn diag_entries(&self) -> Vec<f64> {
        let n = self.rows.min(self.cols);
        let mut out = self.diag.clone().unwrap_or_else(|| vec![0.0; n]);
        for (u, v) in &self.terms {
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(u.row(i), v.row(i));
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        let mut s = self.diag.as_ref().map_or(0.0, |d| d.iter().sum());
        for (u, v) in &self.terms {
            let cu = column_sums(u);
            let cv = column_sums(v);
            s += dot(&cu, &cv);
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.terms.iter().all(|(u, v)| u.is_finite() && v.is_finite())
            && self.diag.as_ref().map_or(true, |d| d.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn column_sums(t: &Tensor) -> Vec<f64> {
    let mut s = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (acc, v) in s.iter_mut().zip(t.row(i)) {
            *acc += v;
        }
    }
    s
}

/// The value held by a tape node.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Dense(Tensor),
    LowRank(LowRank),
}

impl From<Tensor> for Value {
    fn from(t: Tensor) -> Self {
        Value::Dense(t)
    }
}

impl Value {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Value::Dense(t) => t.shape(),
            Value::LowRank(l) => l.shape(),
        }
    }

    pub fn dense(&self) -> Cow<'_, Tensor> {
        match self {
            Value::Dense(t) => Cow::Borrowed(t),
            Value::LowRank(l) => Cow::Owned(l.to_dense()),
        }
    }

    pub fn into_dense(self) -> Tensor {
        match self {
            Value::Dense(t) => t,
            Value::LowRank(l) => l.to_dense(),
        }
    }

    pub fn transpose(&self) -> Value {
        match self {
            Value::Dense(t) => Value::Dense(t.transpose()),
            Value::LowRank(l) => Value::LowRank(l.transpose()),
        }
    }

    pub fn scaled(&self, c: f64) -> Value {
        match self {
            Value::Dense(t) => Value::Dense(t.scaled(c)),
            Value::LowRank(l) => Value::LowRank(l.scaled(c)),
        }
    }

    pub fn into_scaled(self, c: f64) -> Value {
        match self {
            Value::Dense(mut t) => {
                t.scale(c);
                Value::Dense(t)
            }
            Value::LowRank(l) => Value::LowRank(l.scaled(c)),
        }
    }

    /// `f(self_ij, y_ij)` elementwise, reusing the buffer when dense.
    pub fn zip_dense(self, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        match self {
            Value::Dense(mut t) => {
                t.zip_apply(y, f);
                t
            }
            Value::LowRank(l) => l.zip_dense(y, f),
        }
    }

    pub fn sum(&self) -> f64 {
        match self {
            Value::Dense(t) => t.sum(),
            Value::LowRank(l) => l.sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Dense(t) => t.is_finite(),
            Value::LowRank(l) => l.is_finite(),
        }
    }

    /// Elementwise sum; two factored values stay factored.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Value) -> Value {
        match (self, other) {
            (Value::Dense(mut a), Value::Dense(b)) => {
                a.add_assign(&b);
                Value::Dense(a)
            }
            (Value::LowRank(a), Value::LowRank(b)) => Value::LowRank(a.concat(b)),
            (Value::Dense(mut a), Value::LowRank(b)) | (Value::LowRank(b), Value::Dense(mut a)) => {
                a.add_assign(&b.to_dense());
                Value::Dense(a)
            }
        }
    }
}

/// `op(lhs) · op(rhs)` as a dense tensor, using factored operands where present.
pub(crate) fn value_matmul(lhs: &Value, trans_l: bool, rhs: &Value, trans_r: bool) -> Tensor {
    match (lhs, rhs) {
        (Value::Dense(a), Value::Dense(b)) => matmul(a, trans_l, b, trans_r),
        (Value::LowRank(l), r) => {
            let l = if trans_l { l.transpose() } else { l.clone() };
            let r = r.dense();
            let r = if trans_r { r.transpose() } else { r.into_owned() };
            l.mul_dense(&r)
        }
        (Value::Dense(a), Value::LowRank(r)) => {
            // op(a)·op(r) = (op(r)ᵀ · op(a)ᵀ)ᵀ
            let rt = if trans_r { r.clone() } else { r.transpose() };
            let at = if trans_l { a.clone() } else { a.transpose() };
            rt.mul_dense(&at).transpose()
        }
    }
}
