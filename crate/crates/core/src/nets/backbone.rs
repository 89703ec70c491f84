use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::layers::{silu, silu_backward, time_embedding, Linear, TIME_EMB_DIM};
use super::params::{Init, LayoutBuilder, Slot};
use super::{real, Real};
use crate::error::{Error, Result};

/// Width of the learned class embedding, including the null class.
pub const COND_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Channels per token.
    pub d_in: usize,
    /// Latent width per token.
    pub d_b: usize,
    pub layers: usize,
    /// Number of classes; 0 for an unconditional model.
    #[serde(default)]
    pub cond_classes: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::invalid("d_in", "must be >= 1"));
        }
        if self.d_b == 0 {
            return Err(Error::invalid("d_b", "must be >= 1"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("layers", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-token encoder `h_t = f_t(X_t, C)`.
///
/// Each token sees its own channels, the mean over all tokens of the state,
/// the time embedding and the class embedding, and goes through `layers`
/// SiLU-activated linear layers of width `d_b`.
#[derive(Debug, Clone)]
pub struct Backbone {
    cfg: BackboneConfig,
    tokens: usize,
    cond_table: Option<Slot>,
    layers: Vec<Linear>,
}

pub struct BackboneCache<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    cond_rows: Vec<usize>,
}

impl Backbone {
    pub(crate) fn new(lb: &mut LayoutBuilder, cfg: &BackboneConfig, tokens: usize) -> Self {
        let cond_table = (cfg.cond_classes > 0)
            .then(|| lb.add("backbone.cond_embedding", cfg.cond_classes + 1, COND_DIM, Init::Normal(1.0)));
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut width = Self::input_width(cfg);
        for l in 0..cfg.layers {
            layers.push(Linear::new(lb, &format!("backbone.l{l}"), width, cfg.d_b, true, false));
            width = cfg.d_b;
        }
        Self {
            cfg: cfg.clone(),
            tokens,
            cond_table,
            layers,
        }
    }

    fn input_width(cfg: &BackboneConfig) -> usize {
        2 * cfg.d_in + TIME_EMB_DIM + if cfg.cond_classes > 0 { COND_DIM } else { 0 }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Maps an optional class to its embedding row (the last row is null).
    fn cond_row(&self, c: Option<usize>) -> Result<usize> {
        let classes = self.cfg.cond_classes;
        match c {
            Some(id) if id >= classes => Err(Error::UnknownClass { id, classes }),
            Some(id) => Ok(id),
            None => Ok(classes),
        }
    }

    /// `x` holds one state per row (`n*d` columns); returns one latent per
    /// token row (`B*n` rows of width `d_b`).
    pub fn forward<F: Real>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        t: &[f64],
        cond: &[Option<usize>],
    ) -> Result<(Array2<F>, BackboneCache<F>)> {
        let (n, d) = (self.tokens, self.cfg.d_in);
        let batch = x.nrows();
        if x.ncols() != n * d {
            return Err(Error::shape(format!("{} columns", n * d), x.ncols()));
        }
        if t.len() != batch {
            return Err(Error::shape(format!("{batch} times"), t.len()));
        }
        if !cond.is_empty() && cond.len() != batch {
            return Err(Error::shape(format!("{batch} conditions"), cond.len()));
        }
        let cond_rows = (0..batch)
            .map(|b| self.cond_row(cond.get(b).copied().flatten()))
            .collect::<Result<Vec<_>>>()?;

        let width = Self::input_width(&self.cfg);
        let inv_n = real::<F>(1.0 / n as f64);
        let mut input = Array2::zeros((batch * n, width));
        for b in 0..batch {
            let state = x.row(b);
            let emb = time_embedding(t[b]);
            let mut mean = vec![F::zero(); d];
            for i in 0..n {
                for c in 0..d {
                    mean[c] += state[i * d + c] * inv_n;
                }
            }
            for i in 0..n {
                let mut row = input.row_mut(b * n + i);
                for c in 0..d {
                    row[c] = state[i * d + c];
                    row[d + c] = mean[c];
                }
                for (k, e) in emb.iter().enumerate() {
                    row[2 * d + k] = real(*e);
                }
                if let Some(table) = self.cond_table {
                    let tab = table.mat(p);
                    let off = 2 * d + TIME_EMB_DIM;
                    row.slice_mut(s![off..off + COND_DIM]).assign(&tab.row(cond_rows[b]));
                }
            }
        }

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut z = input;
        for layer in &self.layers {
            let a = layer.forward(p, &z.view())?;
            let next = silu(&a);
            inputs.push(z);
            pre.push(a);
            z = next;
        }
        Ok((
            z,
            BackboneCache {
                inputs,
                pre,
                cond_rows,
            },
        ))
    }

    pub fn backward<F: Real>(&self, p: &[F], g: &mut [F], cache: &BackboneCache<F>, dh: &ArrayView2<F>) {
        let mut d = dh.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let da = silu_backward(&cache.pre[l], &d.view());
            let need_dx = l > 0 || self.cond_table.is_some();
            match layer.backward(p, g, &cache.inputs[l].view(), &da.view(), need_dx) {
                Some(dx) => d = dx,
                None => return,
            }
        }
        if let Some(table) = self.cond_table {
            let n = self.tokens;
            let off = 2 * self.cfg.d_in + TIME_EMB_DIM;
            let mut gt = table.mat_mut(g);
            for (b, &row) in cache.cond_rows.iter().enumerate() {
                for i in 0..n {
                    let src = d.slice(s![b * n + i, off..off + COND_DIM]);
                    let mut dst = gt.row_mut(row);
                    dst += &src;
                }
            }
        }
    }
}

/// Reshapes `B x (n*w)` into `(B*n) x w` (both row-major).
pub(crate) fn to_token_rows<F: Real>(x: &ArrayView2<F>, width: usize) -> Array2<F> {
    let rows = x.nrows() * x.ncols() / width;
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, width))
        .expect("token reshape")
}

pub(crate) fn from_token_rows<F: Real>(x: Array2<F>, tokens: usize) -> Array2<F> {
    let (rows, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows / tokens, tokens * w))
        .expect("token reshape")
}
