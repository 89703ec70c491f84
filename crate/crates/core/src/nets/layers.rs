use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{Init, LayoutBuilder, Slot};
use super::{real, Real};
use crate::error::{Error, Result};

pub const TIME_EMB_DIM: usize = 16;

/// Sinusoidal features of a time in `[0, 1]`: `sin(w_k t), cos(w_k t)` for
/// eight geometrically spaced frequencies from 1 to 200.
pub fn time_embedding(t: f64) -> [f64; TIME_EMB_DIM] {
    let half = TIME_EMB_DIM / 2;
    let mut out = [0.0; TIME_EMB_DIM];
    for k in 0..half {
        let w = (k as f64 * 200f64.ln() / (half - 1) as f64).exp();
        out[k] = (w * t).sin();
        out[half + k] = (w * t).cos();
    }
    out
}

pub(crate) fn ensure_finite<F: Real>(a: &Array2<F>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub(crate) name: String,
    pub(crate) w: Slot,
    pub(crate) b: Option<Slot>,
    pub(crate) d_in: usize,
    #[allow(dead_code)]
    pub(crate) d_out: usize,
}

impl Linear {
    pub(crate) fn new(lb: &mut LayoutBuilder, name: &str, d_in: usize, d_out: usize, bias: bool, zero: bool) -> Self {
        let init = if zero { Init::Zeros } else { Init::FanIn(d_in) };
        let w = lb.add(format!("{name}.weight"), d_out, d_in, init);
        let b = bias.then(|| lb.add(format!("{name}.bias"), 1, d_out, Init::Zeros));
        Self {
            name: name.to_string(),
            w,
            b,
            d_in,
            d_out,
        }
    }

    pub(crate) fn with_init(lb: &mut LayoutBuilder, name: &str, d_in: usize, d_out: usize, init: Init) -> Self {
        let w = lb.add(format!("{name}.weight"), d_out, d_in, init);
        Self {
            name: name.to_string(),
            w,
            b: None,
            d_in,
            d_out,
        }
    }

    pub(crate) fn forward<F: Real>(&self, p: &[F], x: &ArrayView2<F>) -> Result<Array2<F>> {
        debug_assert_eq!(x.ncols(), self.d_in, "{}", self.name);
        let mut y = x.dot(&self.w.mat(p).t());
        if let Some(b) = self.b {
            y += &b.vec(p);
        }
        ensure_finite(&y, &self.name)?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx` when asked.
    pub(crate) fn backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        x: &ArrayView2<F>,
        dy: &ArrayView2<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        general_mat_mul(F::one(), &dy.t(), x, F::one(), &mut self.w.mat_mut(g));
        if let Some(b) = self.b {
            let mut gb = b.vec_mut(g);
            gb += &dy.sum_axis(Axis(0));
        }
        need_dx.then(|| dy.dot(&self.w.mat(p)))
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub(crate) fn silu<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| v * sigmoid(v))
}

/// `dy * silu'(x)`
pub(crate) fn silu_backward<F: Real>(x: &Array2<F>, dy: &ArrayView2<F>) -> Array2<F> {
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(dy).for_each(|o, &x, &d| {
        let sg = sigmoid(x);
        *o = d * sg * (F::one() + x * (F::one() - sg));
    });
    out
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub(crate) gain: Slot,
    pub(crate) bias: Slot,
    dim: usize,
}

pub(crate) struct LayerNormCache<F> {
    normed: Array2<F>,
    inv_std: Array1<F>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub(crate) fn new(lb: &mut LayoutBuilder, name: &str, dim: usize) -> Self {
        Self {
            gain: lb.add(format!("{name}.gain"), 1, dim, Init::Ones),
            bias: lb.add(format!("{name}.bias"), 1, dim, Init::Zeros),
            dim,
        }
    }

    pub(crate) fn forward<F: Real>(&self, p: &[F], x: &ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let n = real::<F>(self.dim as f64);
        let mut normed = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|&v| v * v).sum::<F>() / n;
            *is = F::one() / (var + real(LN_EPS)).sqrt();
            row *= *is;
        }
        let y = &normed * &self.gain.vec(p) + &self.bias.vec(p);
        (y, LayerNormCache { normed, inv_std })
    }

    pub(crate) fn backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        cache: &LayerNormCache<F>,
        dy: &ArrayView2<F>,
    ) -> Array2<F> {
        {
            let mut gg = self.gain.vec_mut(g);
            gg += &(dy * &cache.normed).sum_axis(Axis(0));
        }
        {
            let mut gb = self.bias.vec_mut(g);
            gb += &dy.sum_axis(Axis(0));
        }
        let n = real::<F>(self.dim as f64);
        let dn = dy * &self.gain.vec(p);
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, dn), xn), &is) in dx
            .rows_mut()
            .into_iter()
            .zip(dn.rows())
            .zip(cache.normed.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_dn = dn.sum() / n;
            let mean_dn_xn = dn.iter().zip(xn.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
            Zip::from(&mut out).and(&dn).and(&xn).for_each(|o, &d, &x| {
                *o = is * (d - mean_dn - x * mean_dn_xn);
            });
        }
        dx
    }
}

/// Single-head self-attention over consecutive groups of `seq` rows.
#[derive(Debug, Clone)]
pub struct Attention {
    pub(crate) q: Linear,
    pub(crate) k: Linear,
    pub(crate) v: Linear,
    pub(crate) o: Linear,
    dim: usize,
}

pub(crate) struct AttentionCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    mixed: Array2<F>,
}

impl Attention {
    pub(crate) fn new(lb: &mut LayoutBuilder, name: &str, dim: usize) -> Self {
        Self {
            q: Linear::new(lb, &format!("{name}.q"), dim, dim, false, false),
            k: Linear::new(lb, &format!("{name}.k"), dim, dim, false, false),
            v: Linear::new(lb, &format!("{name}.v"), dim, dim, false, false),
            o: Linear::new(lb, &format!("{name}.o"), dim, dim, false, false),
            dim,
        }
    }

    pub(crate) fn forward<F: Real>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        seq: usize,
    ) -> Result<(Array2<F>, AttentionCache<F>)> {
        let q = self.q.forward(p, x)?;
        let k = self.k.forward(p, x)?;
        let v = self.v.forward(p, x)?;
        let scale = real::<F>(1.0 / (self.dim as f64).sqrt());
        let groups = x.nrows() / seq;
        let mut mixed = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(groups);
        for gi in 0..groups {
            let r = s![gi * seq..(gi + 1) * seq, ..];
            let mut scores = q.slice(r).dot(&k.slice(r).t()) * scale;
            for mut row in scores.rows_mut() {
                let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let z = row.sum();
                row /= z;
            }
            mixed.slice_mut(r).assign(&scores.dot(&v.slice(r)));
            probs.push(scores);
        }
        let out = self.o.forward(p, &mixed.view())?;
        Ok((
            out,
            AttentionCache {
                x: x.to_owned(),
                q,
                k,
                v,
                probs,
                mixed,
            },
        ))
    }

    pub(crate) fn backward<F: Real>(
        &self,
        p: &[F],
        g: &mut [F],
        cache: &AttentionCache<F>,
        dy: &ArrayView2<F>,
        seq: usize,
    ) -> Array2<F> {
        let dmixed = self
            .o
            .backward(p, g, &cache.mixed.view(), dy, true)
            .expect("dx requested");
        let scale = real::<F>(1.0 / (self.dim as f64).sqrt());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (gi, a) in cache.probs.iter().enumerate() {
            let r = s![gi * seq..(gi + 1) * seq, ..];
            let dm = dmixed.slice(r);
            let da = dm.dot(&cache.v.slice(r).t());
            dv.slice_mut(r).assign(&a.t().dot(&dm));
            // softmax backward, row-wise
            let mut ds = Array2::zeros(a.raw_dim());
            for ((mut out, arow), darow) in ds.rows_mut().into_iter().zip(a.rows()).zip(da.rows()) {
                let dot = arow.iter().zip(darow.iter()).map(|(&x, &y)| x * y).sum::<F>();
                Zip::from(&mut out).and(&arow).and(&darow).for_each(|o, &a, &d| {
                    *o = a * (d - dot) * scale;
                });
            }
            dq.slice_mut(r).assign(&ds.dot(&cache.k.slice(r)));
            dk.slice_mut(r).assign(&ds.t().dot(&cache.q.slice(r)));
        }
        let x = cache.x.view();
        let mut dx = self.q.backward(p, g, &x, &dq.view(), true).unwrap();
        dx += &self.k.backward(p, g, &x, &dk.view(), true).unwrap();
        dx += &self.v.backward(p, g, &x, &dv.view(), true).unwrap();
        dx
    }
}
