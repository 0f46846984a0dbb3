use crate::error::{Error, Result};

/// `W x + b` with `W` row-major `dout × din`.
pub fn affine_forward(x: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let din = x.len();
    let dout = b.len();
    if din == 0 || dout == 0 || w.len() != din * dout {
        return Err(Error::Config(format!(
            "affine shape mismatch: x[{din}], W[{}], b[{dout}]",
            w.len()
        )));
    }
    let mut y = b.to_vec();
    affine_accumulate(x, w, &mut y);
    Ok(y)
}

/// `y += W x`; shapes are the caller's responsibility.
#[inline]
pub(crate) fn affine_accumulate(x: &[f64], w: &[f64], y: &mut [f64]) {
    let din = x.len();
    for (yo, row) in y.iter_mut().zip(w.chunks_exact(din)) {
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo += acc;
    }
}

/// Gradients of the affine map given `dy = ∂L/∂y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn affine_backward(x: &[f64], w: &[f64], dy: &[f64]) -> Result<AffineGrads> {
    let din = x.len();
    let dout = dy.len();
    if din == 0 || dout == 0 || w.len() != din * dout {
        return Err(Error::Config(format!(
            "affine shape mismatch: x[{din}], W[{}], dy[{dout}]",
            w.len()
        )));
    }
    let mut dx = vec![0.0; din];
    let mut dw = vec![0.0; din * dout];
    affine_backward_into(x, w, dy, Some(&mut dx), &mut dw);
    Ok(AffineGrads {
        dx,
        dw,
        db: dy.to_vec(),
    })
}

/// Accumulates `dW += dy ⊗ x` and optionally `dx += Wᵀ dy`.
#[inline]
pub(crate) fn affine_backward_into(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    let din = x.len();
    for (g, row) in dy.iter().zip(dw.chunks_exact_mut(din)) {
        if *g == 0.0 {
            continue;
        }
        for (d, xi) in row.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (g, row) in dy.iter().zip(w.chunks_exact(din)) {
            if *g == 0.0 {
                continue;
            }
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}
