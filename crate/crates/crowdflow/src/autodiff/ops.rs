//! The arithmetic op set. Each op validates shapes up front (panicking with a
//! message that names both shapes), computes the forward result, and registers
//! a backward closure when any input tracks gradients.
//!
//! Backward closures read their inputs through the parent list supplied at
//! traversal time; they capture only small derived data (activation outputs,
//! shapes), never `Value` handles and never copies of weight matrices.

use super::value::Value;

fn same_shape(a: &Value, b: &Value, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl Value {
    /// Elementwise sum.
    pub fn add(&self, other: &Value) -> Value {
        same_shape(self, other, "add");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Value) -> Value {
        same_shape(self, other, "sub");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|_, g| {
                vec![Some(g.to_vec()), Some(g.iter().map(|x| -x).collect())]
            }),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Value) -> Value {
        same_shape(self, other, "mul");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|parents, g| {
                let a = parents[0].data();
                let b = parents[1].data();
                vec![
                    Some(g.iter().zip(b.iter()).map(|(gi, bi)| gi * bi).collect()),
                    Some(g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).collect()),
                ]
            }),
        )
    }

    pub fn neg(&self) -> Value {
        self.scale_const(-1.0)
    }

    /// Multiply every element by a constant.
    pub fn scale_const(&self, c: f64) -> Value {
        let data: Vec<f64> = self.data().iter().map(|x| x * c).collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(g.iter().map(|x| x * c).collect())]),
        )
    }

    /// Add a constant to every element.
    pub fn add_const(&self, c: f64) -> Value {
        let data: Vec<f64> = self.data().iter().map(|x| x + c).collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    /// Broadcast-multiply by a scalar-shaped value.
    pub fn scale_by(&self, s: &Value) -> Value {
        assert_eq!(
            s.numel(),
            1,
            "scale_by: scale must be scalar-shaped, got {:?}",
            s.shape()
        );
        let sv = s.item();
        let data: Vec<f64> = self.data().iter().map(|x| x * sv).collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), s.clone()],
            Box::new(move |parents, g| {
                let a = parents[0].data();
                let da: Vec<f64> = g.iter().map(|x| x * sv).collect();
                let ds = g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).sum();
                vec![Some(da), Some(vec![ds])]
            }),
        )
    }

    /// Matrix product of rank-2 values: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Value) -> Value {
        assert_eq!(self.shape().len(), 2, "matmul: lhs must be rank 2, got {:?}", self.shape());
        assert_eq!(other.shape().len(), 2, "matmul: rhs must be rank 2, got {:?}", other.shape());
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(
            k, k2,
            "matmul: inner dimension mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let mut data = vec![0.0; m * n];
        {
            let a = self.data();
            let b = other.data();
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    for j in 0..n {
                        data[i * n + j] += aip * b[p * n + j];
                    }
                }
            }
        }
        Value::from_op(
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |parents, g| {
                let a = parents[0].data();
                let b = parents[1].data();
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * b[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = a[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Value {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape: cannot view shape {:?} as {:?}",
            self.shape(),
            shape
        );
        Value::from_op(
            self.to_vec(),
            shape,
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    /// Contiguous sub-vector of a rank-1 value.
    pub fn slice(&self, start: usize, len: usize) -> Value {
        assert_eq!(self.shape().len(), 1, "slice: rank-1 only, got {:?}", self.shape());
        let n = self.numel();
        assert!(
            start + len <= n,
            "slice: range {start}..{} out of bounds for shape {:?}",
            start + len,
            self.shape()
        );
        let data = self.data()[start..start + len].to_vec();
        Value::from_op(
            data,
            vec![len],
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut dx = vec![0.0; n];
                dx[start..start + len].copy_from_slice(g);
                vec![Some(dx)]
            }),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Value {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Value::from_op(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Value {
        let n = self.numel();
        assert!(n > 0, "mean of empty value");
        let s: f64 = self.data().iter().sum();
        Value::from_op(
            vec![s / n as f64],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    pub fn relu(&self) -> Value {
        let data: Vec<f64> = self.data().iter().map(|v| v.max(0.0)).collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|parents, g| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Value {
        let y: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let yc = y.clone();
        Value::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                vec![Some(
                    g.iter().zip(&yc).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Value {
        let y: Vec<f64> = self
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let yc = y.clone();
        Value::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                vec![Some(
                    g.iter().zip(&yc).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect(),
                )]
            }),
        )
    }

    /// Numerically stable softmax over a rank-1 value.
    pub fn softmax(&self) -> Value {
        assert_eq!(self.shape().len(), 1, "softmax: rank-1 only, got {:?}", self.shape());
        let y: Vec<f64> = {
            let x = self.data();
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        };
        let yc = y.clone();
        Value::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let dot: f64 = g.iter().zip(&yc).map(|(gi, yi)| gi * yi).sum();
                vec![Some(
                    g.iter().zip(&yc).map(|(gi, yi)| yi * (gi - dot)).collect(),
                )]
            }),
        )
    }

    /// Unit-scale by the L2 norm; the zero vector maps to zero.
    pub fn l2_unit(&self) -> Value {
        let r = self.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < 1e-12 {
            let n = self.numel();
            return Value::from_op(
                vec![0.0; n],
                self.shape().to_vec(),
                vec![self.clone()],
                Box::new(move |_, _| vec![Some(vec![0.0; n])]),
            );
        }
        let y: Vec<f64> = self.data().iter().map(|v| v / r).collect();
        let yc = y.clone();
        Value::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let dot: f64 = g.iter().zip(&yc).map(|(gi, yi)| gi * yi).sum();
                vec![Some(
                    g.iter()
                        .zip(&yc)
                        .map(|(gi, yi)| (gi - yi * dot) / r)
                        .collect(),
                )]
            }),
        )
    }

    /// Clamp to `[0, 1]`; gradient passes only through the interior.
    pub fn clamp01(&self) -> Value {
        let data: Vec<f64> = self.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Value::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|parents, g| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(gi, xi)| if *xi > 0.0 && *xi < 1.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Inner product of two rank-1 values, shape `[1]`.
    pub fn dot(&self, other: &Value) -> Value {
        same_shape(self, other, "dot");
        self.mul(other).sum()
    }

    /// Sum of squared elements, shape `[1]`.
    pub fn sq_norm(&self) -> Value {
        self.mul(self).sum()
    }
}

/// Concatenate rank-1 values into one rank-1 value.
pub fn concat(parts: &[&Value]) -> Value {
    assert!(!parts.is_empty(), "concat of nothing");
    for p in parts {
        assert_eq!(p.shape().len(), 1, "concat: rank-1 only, got {:?}", p.shape());
    }
    let lens: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
    let total: usize = lens.iter().sum();
    let mut data = Vec::with_capacity(total);
    for p in parts {
        data.extend_from_slice(&p.data());
    }
    let parents: Vec<Value> = parts.iter().map(|p| (*p).clone()).collect();
    Value::from_op(
        data,
        vec![total],
        parents,
        Box::new(move |_, g| {
            let mut out = Vec::with_capacity(lens.len());
            let mut off = 0;
            for len in &lens {
                out.push(Some(g[off..off + len].to_vec()));
                off += len;
            }
            out
        }),
    )
}
