//! Local gradient-descent refinement of rotation and scale transforms.
//!
//! Training minimizes the layer's fake-quantized output MSE on the bundled
//! calibration activations. Gradients come from the relaxed objective
//! (rounding treated as identity, see `quantizers::relaxed`); the true
//! quantized loss is evaluated each step and the best iterate wins, so the
//! returned parameters never lose to their initialization. Clip-search
//! policies are resolved once at the starting point and held fixed while
//! training.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{hadamard, random_orthogonal, skew_from_params, solve_general, Matrix, Seed};
use crate::math;
use crate::pipeline::LayerBundle;
use crate::quantizers::relaxed::RelaxedFakeQuant;
use crate::quantizers::{fake_quantize_with_clip, resolve_clip, QuantSpec};
use crate::{Error, Result};

use super::{calibrate_scale, RotationMatrix, ScaleVector};

/// An objective with analytic gradients, checkable against central finite
/// differences.
pub trait DiffObjective {
    fn dim(&self) -> usize;
    fn value(&self, params: &[f64]) -> Result<f64>;
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>>;
}

fn squared_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Rotation objective over skew-symmetric Cayley parameters. The rotation is
/// `O = O0 * (I - A)^-1 (I + A)` with `O0` the Hadamard matrix (seeded random
/// orthogonal when the dimension is not a power of two).
pub struct RotationObjective {
    x: Matrix,
    w: Matrix,
    o0: Matrix,
    w_spec: QuantSpec,
    a_spec: QuantSpec,
    w_clip: f64,
    a_clip: f64,
    y_ref: Matrix,
    inv_denom: f64,
}

impl RotationObjective {
    pub fn new(
        layer: &LayerBundle,
        w_spec: &QuantSpec,
        a_spec: &QuantSpec,
        seed: Seed,
    ) -> Result<Self> {
        w_spec.validate()?;
        a_spec.validate()?;
        if layer.tokens() == 0 {
            return Err(Error::EmptyInput("rotation objective calibration data"));
        }
        let n = layer.c_in();
        let o0 = match hadamard(n) {
            Ok(h) => h,
            Err(_) => random_orthogonal(n, seed)?,
        };
        let x = layer.calib.clone();
        let w = layer.w.clone();
        // Bias cancels in the output difference, so the reference skips it.
        let y_ref = x.matmul(&w)?;
        let x0 = x.matmul(&o0)?;
        let w0_t = o0.transpose().matmul(&w)?.transpose();
        let a_clip = resolve_clip(&x0, a_spec)?;
        let w_clip = resolve_clip(&w0_t, w_spec)?;
        let norm = y_ref.frob_norm();
        Ok(Self {
            x,
            w,
            o0,
            w_spec: w_spec.clone(),
            a_spec: a_spec.clone(),
            w_clip,
            a_clip,
            y_ref,
            inv_denom: 1.0 / (norm * norm).max(1e-30),
        })
    }

    /// `(I - A)^-1`, `Q`, and `O = O0 Q` for the given parameters.
    fn cayley_parts(&self, params: &[f64]) -> Result<(Matrix, Matrix, Matrix)> {
        let n = self.o0.rows();
        let a = skew_from_params(n, params)?;
        let eye = Matrix::identity(n);
        let p = solve_general(&eye.sub(&a)?, &eye)?;
        let q = p.matmul(&eye.add(&a)?)?;
        let o = self.o0.matmul(&q)?;
        Ok((p, q, o))
    }

    pub fn rotation_at(&self, params: &[f64]) -> Result<RotationMatrix> {
        let (_, _, o) = self.cayley_parts(params)?;
        RotationMatrix::new(o)
    }

    pub fn initialization(&self) -> Result<RotationMatrix> {
        RotationMatrix::new(self.o0.clone())
    }

    /// True fake-quantized relative output MSE, used for best-iterate
    /// selection.
    pub fn true_loss(&self, params: &[f64]) -> Result<f64> {
        let (_, _, o) = self.cayley_parts(params)?;
        let xh = self.x.matmul(&o)?;
        let wh_t = o.transpose().matmul(&self.w)?.transpose();
        let xq = fake_quantize_with_clip(&xh, &self.a_spec, self.a_clip)?;
        let wq_t = fake_quantize_with_clip(&wh_t, &self.w_spec, self.w_clip)?;
        let y = xq.matmul(&wq_t.transpose())?;
        Ok(squared_distance(&y, &self.y_ref) * self.inv_denom)
    }
}

impl DiffObjective for RotationObjective {
    fn dim(&self) -> usize {
        let n = self.o0.rows();
        n * (n - 1) / 2
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let (_, _, o) = self.cayley_parts(params)?;
        let xh = self.x.matmul(&o)?;
        let wh_t = o.transpose().matmul(&self.w)?.transpose();
        let rx = RelaxedFakeQuant::forward(&xh, &self.a_spec, self.a_clip)?;
        let rw = RelaxedFakeQuant::forward(&wh_t, &self.w_spec, self.w_clip)?;
        let y = rx.out.matmul(&rw.out.transpose())?;
        Ok(squared_distance(&y, &self.y_ref) * self.inv_denom)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let n = self.o0.rows();
        let (p, q, o) = self.cayley_parts(params)?;
        let xh = self.x.matmul(&o)?;
        let wh_t = o.transpose().matmul(&self.w)?.transpose();
        let rx = RelaxedFakeQuant::forward(&xh, &self.a_spec, self.a_clip)?;
        let rw = RelaxedFakeQuant::forward(&wh_t, &self.w_spec, self.w_clip)?;
        let y = rx.out.matmul(&rw.out.transpose())?;

        // dL/dY, then back through the product and both clamps.
        let g = y.sub(&self.y_ref)?.scale(2.0 * self.inv_denom);
        let g_xq = g.matmul(&rw.out)?;
        let g_wq_t = g.transpose().matmul(&rx.out)?;
        let g_xh = rx.backward(&g_xq);
        let g_wh = rw.backward(&g_wq_t).transpose();

        // dL/dO from X_hat = X O and W_hat = O^T W.
        let g_o = self
            .x
            .transpose()
            .matmul(&g_xh)?
            .add(&self.w.matmul(&g_wh.transpose())?)?;
        // dQ = P dA (Q + I), so dL/dA = P^T G_Q (Q + I)^T.
        let g_q = self.o0.transpose().matmul(&g_o)?;
        let q_plus_i = q.add(&Matrix::identity(n))?;
        let g_a = p.transpose().matmul(&g_q)?.matmul(&q_plus_i.transpose())?;

        let mut grad = Vec::with_capacity(self.dim());
        for i in 0..n {
            for j in (i + 1)..n {
                grad.push(g_a[(i, j)] - g_a[(j, i)]);
            }
        }
        Ok(grad)
    }
}

/// Scale objective in the log domain: `s = exp(rho)` keeps the factors
/// positive unconditionally.
pub struct ScaleObjective {
    x: Matrix,
    w: Matrix,
    w_spec: QuantSpec,
    a_spec: QuantSpec,
    w_clip: f64,
    a_clip: f64,
    y_ref: Matrix,
    inv_denom: f64,
    init_scale: ScaleVector,
}

impl ScaleObjective {
    /// Initialized from the alpha = 0.5 migration calibration.
    pub fn new(layer: &LayerBundle, w_spec: &QuantSpec, a_spec: &QuantSpec) -> Result<Self> {
        w_spec.validate()?;
        a_spec.validate()?;
        if layer.tokens() == 0 {
            return Err(Error::EmptyInput("scale objective calibration data"));
        }
        let x = layer.calib.clone();
        let w = layer.w.clone();
        let init_scale = calibrate_scale(&x, &w, 0.5)?.scale;
        let y_ref = x.matmul(&w)?;
        let (x0, w0) = scaled_tensors(&x, &w, init_scale.values());
        let a_clip = resolve_clip(&x0, a_spec)?;
        let w_clip = resolve_clip(&w0.transpose(), w_spec)?;
        let norm = y_ref.frob_norm();
        Ok(Self {
            x,
            w,
            w_spec: w_spec.clone(),
            a_spec: a_spec.clone(),
            w_clip,
            a_clip,
            y_ref,
            inv_denom: 1.0 / (norm * norm).max(1e-30),
            init_scale,
        })
    }

    pub fn initial_scale(&self) -> &ScaleVector {
        &self.init_scale
    }

    pub fn initial_params(&self) -> Vec<f64> {
        self.init_scale
            .values()
            .iter()
            .map(|s| math::ln(*s))
            .collect()
    }

    pub fn scale_at(&self, params: &[f64]) -> Result<ScaleVector> {
        ScaleVector::new(params.iter().map(|r| math::exp(*r)).collect())
    }

    pub fn true_loss(&self, params: &[f64]) -> Result<f64> {
        let s: Vec<f64> = params.iter().map(|r| math::exp(*r)).collect();
        let (xh, wh) = scaled_tensors(&self.x, &self.w, &s);
        let xq = fake_quantize_with_clip(&xh, &self.a_spec, self.a_clip)?;
        let wq_t = fake_quantize_with_clip(&wh.transpose(), &self.w_spec, self.w_clip)?;
        let y = xq.matmul(&wq_t.transpose())?;
        Ok(squared_distance(&y, &self.y_ref) * self.inv_denom)
    }
}

fn scaled_tensors(x: &Matrix, w: &Matrix, s: &[f64]) -> (Matrix, Matrix) {
    let mut xh = x.clone();
    for i in 0..xh.rows() {
        let row = xh.row_mut(i);
        for (j, sj) in s.iter().enumerate() {
            row[j] /= sj;
        }
    }
    let mut wh = w.clone();
    for (j, sj) in s.iter().enumerate() {
        for v in wh.row_mut(j) {
            *v *= sj;
        }
    }
    (xh, wh)
}

impl DiffObjective for ScaleObjective {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let s: Vec<f64> = params.iter().map(|r| math::exp(*r)).collect();
        let (xh, wh) = scaled_tensors(&self.x, &self.w, &s);
        let rx = RelaxedFakeQuant::forward(&xh, &self.a_spec, self.a_clip)?;
        let rw = RelaxedFakeQuant::forward(&wh.transpose(), &self.w_spec, self.w_clip)?;
        let y = rx.out.matmul(&rw.out.transpose())?;
        Ok(squared_distance(&y, &self.y_ref) * self.inv_denom)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let s: Vec<f64> = params.iter().map(|r| math::exp(*r)).collect();
        let (xh, wh) = scaled_tensors(&self.x, &self.w, &s);
        let rx = RelaxedFakeQuant::forward(&xh, &self.a_spec, self.a_clip)?;
        let rw = RelaxedFakeQuant::forward(&wh.transpose(), &self.w_spec, self.w_clip)?;
        let y = rx.out.matmul(&rw.out.transpose())?;

        let g = y.sub(&self.y_ref)?.scale(2.0 * self.inv_denom);
        let g_xq = g.matmul(&rw.out)?;
        let g_wq_t = g.transpose().matmul(&rx.out)?;
        let g_xh = rx.backward(&g_xq);
        let g_wh = rw.backward(&g_wq_t).transpose();

        // X_hat[t][j] = x[t][j] / s_j, W_hat[j][c] = s_j w[j][c]; chain into
        // rho through ds/drho = s.
        let mut grad = vec![0.0; s.len()];
        for (j, gj) in grad.iter_mut().enumerate() {
            let sj = s[j];
            let mut ds = 0.0;
            for t in 0..self.x.rows() {
                ds += g_xh[(t, j)] * (-self.x[(t, j)] / (sj * sj));
            }
            for c in 0..self.w.cols() {
                ds += g_wh[(j, c)] * self.w[(j, c)];
            }
            *gj = sj * ds;
        }
        Ok(grad)
    }
}

/// Gradient descent on the skew Cayley parameters of a rotation, starting at
/// the Hadamard matrix. Returns the best true-loss iterate; `steps = 0`
/// returns the initialization itself.
pub fn optimize_rotation(
    layer: &LayerBundle,
    w_spec: &QuantSpec,
    a_spec: &QuantSpec,
    steps: usize,
    lr: f64,
    seed: Seed,
) -> Result<RotationMatrix> {
    let obj = RotationObjective::new(layer, w_spec, a_spec, seed)?;
    let mut theta = vec![0.0; obj.dim()];
    let mut best: Option<Vec<f64>> = None;
    let mut best_loss = obj.true_loss(&theta)?;
    for _ in 0..steps {
        let g = obj.gradient(&theta)?;
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= lr * gi;
        }
        let loss = obj.true_loss(&theta)?;
        if loss < best_loss {
            best_loss = loss;
            best = Some(theta.clone());
        }
    }
    match best {
        Some(params) => obj.rotation_at(&params),
        None => obj.initialization(),
    }
}

/// Gradient descent on log-domain scales, starting at the alpha = 0.5
/// calibration. Returns the best true-loss iterate; `steps = 0` returns the
/// calibration itself.
pub fn optimize_scale(
    layer: &LayerBundle,
    w_spec: &QuantSpec,
    a_spec: &QuantSpec,
    steps: usize,
    lr: f64,
) -> Result<ScaleVector> {
    let obj = ScaleObjective::new(layer, w_spec, a_spec)?;
    let mut rho = obj.initial_params();
    let mut best: Option<Vec<f64>> = None;
    let mut best_loss = obj.true_loss(&rho)?;
    for _ in 0..steps {
        let g = obj.gradient(&rho)?;
        for (r, gi) in rho.iter_mut().zip(&g) {
            *r -= lr * gi;
        }
        let loss = obj.true_loss(&rho)?;
        if loss < best_loss {
            best_loss = loss;
            best = Some(rho.clone());
        }
    }
    match best {
        Some(params) => obj.scale_at(&params),
        None => Ok(obj.initial_scale().clone()),
    }
}
