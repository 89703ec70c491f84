use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::backbone::{from_token_rows, to_token_rows};
use super::layers::{
    silu, silu_backward, time_embedding, Attention, AttentionCache, LayerNorm, LayerNormCache, Linear,
    TIME_EMB_DIM,
};
use super::params::{Init, LayoutBuilder};
use super::{real, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadArch {
    /// Acts on every token independently.
    Mlp,
    /// Pre-norm blocks with single-head attention across tokens.
    TransformerLite,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub arch: HeadArch,
    pub d_h: usize,
    pub layers: usize,
    /// Sequence scaling factor `l`: every token is expanded into `l` tokens
    /// before the head and contracted after it.
    #[serde(default = "one")]
    pub seq_scale: usize,
    /// Whether the three scaling maps exist. Defaults to `seq_scale > 1`;
    /// forcing it on with `seq_scale = 1` gives identity-initialized maps.
    #[serde(default)]
    pub scale_maps: Option<bool>,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 {
            return Err(Error::invalid("d_h", "must be >= 1"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("layers", "must be >= 1"));
        }
        let l = self.seq_scale;
        let root = (l as f64).sqrt().round() as usize;
        if l == 0 || root * root != l {
            return Err(Error::invalid("seq_scale", format!("must be a perfect square >= 1, got {l}")));
        }
        Ok(())
    }

    pub fn has_scale_maps(&self) -> bool {
        self.scale_maps.unwrap_or(self.seq_scale > 1)
    }
}

/// Head time `s`: either one value per sequence, or one per token
/// (time-per-token, MLP heads only).
#[derive(Debug, Clone, Copy)]
pub enum HeadTime<'a> {
    Shared(&'a [f64]),
    PerToken(&'a [f64]),
}

#[derive(Debug, Clone)]
struct Scaling {
    in_y: Linear,
    in_h: Linear,
    out_y: Linear,
    l: usize,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
enum Core {
    Mlp {
        hidden: Vec<Linear>,
        out: Linear,
    },
    Transformer {
        input: Linear,
        blocks: Vec<Block>,
        final_ln: LayerNorm,
        out: Linear,
    },
}

struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    normed2: Array2<F>,
    fc1_pre: Array2<F>,
    fc1_act: Array2<F>,
}

enum CoreCache<F> {
    Mlp {
        inputs: Vec<Array2<F>>,
        pre: Vec<Array2<F>>,
        last: Array2<F>,
    },
    Transformer {
        input: Array2<F>,
        blocks: Vec<BlockCache<F>>,
        final_ln: LayerNormCache<F>,
        final_normed: Array2<F>,
    },
}

pub struct HeadCache<F> {
    y: Array2<F>,
    h: Array2<F>,
    core: CoreCache<F>,
    core_out: Option<Array2<F>>,
}

/// Velocity network `u_s(Y_s | h_t)` of the transition head, optionally
/// wrapped in the sequence-scaling maps `L_out,y ∘ u ∘ (L_in,y, L_in,h)`.
#[derive(Debug, Clone)]
pub struct Head {
    cfg: HeadConfig,
    d: usize,
    d_b: usize,
    tokens: usize,
    scaling: Option<Scaling>,
    core: Core,
}

impl Head {
    pub(crate) fn new(lb: &mut LayoutBuilder, cfg: &HeadConfig, d: usize, d_b: usize, tokens: usize) -> Self {
        let l = cfg.seq_scale;
        let scaling = cfg.has_scale_maps().then(|| Scaling {
            in_y: Linear::with_init(lb, "head.scale.in_y", d, l * d, Init::StackedIdentity(1.0)),
            in_h: Linear::with_init(lb, "head.scale.in_h", d_b, l * d_b, Init::StackedIdentity(1.0)),
            out_y: Linear::with_init(lb, "head.scale.out_y", l * d, d, Init::StackedIdentity(1.0 / l as f64)),
            l,
        });
        let in_width = d + TIME_EMB_DIM + d_b;
        let core = match cfg.arch {
            HeadArch::Mlp => {
                let mut hidden = Vec::with_capacity(cfg.layers);
                let mut width = in_width;
                for i in 0..cfg.layers {
                    hidden.push(Linear::new(lb, &format!("head.mlp.l{i}"), width, cfg.d_h, true, false));
                    width = cfg.d_h;
                }
                let out = Linear::new(lb, "head.mlp.out", cfg.d_h, d, true, true);
                Core::Mlp { hidden, out }
            }
            HeadArch::TransformerLite => {
                let input = Linear::new(lb, "head.tf.input", in_width, cfg.d_h, true, false);
                let blocks = (0..cfg.layers)
                    .map(|i| {
                        let name = format!("head.tf.block{i}");
                        Block {
                            ln1: LayerNorm::new(lb, &format!("{name}.ln1"), cfg.d_h),
                            attn: Attention::new(lb, &format!("{name}.attn"), cfg.d_h),
                            ln2: LayerNorm::new(lb, &format!("{name}.ln2"), cfg.d_h),
                            fc1: Linear::new(lb, &format!("{name}.fc1"), cfg.d_h, 2 * cfg.d_h, true, false),
                            fc2: Linear::new(lb, &format!("{name}.fc2"), 2 * cfg.d_h, cfg.d_h, true, false),
                        }
                    })
                    .collect();
                let final_ln = LayerNorm::new(lb, "head.tf.final_ln", cfg.d_h);
                let out = Linear::new(lb, "head.tf.out", cfg.d_h, d, true, true);
                Core::Transformer {
                    input,
                    blocks,
                    final_ln,
                    out,
                }
            }
        };
        Self {
            cfg: cfg.clone(),
            d,
            d_b,
            tokens,
            scaling,
            core,
        }
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    pub fn supports_per_token_time(&self) -> bool {
        self.cfg.arch == HeadArch::Mlp
    }

    /// `y`: token rows (`R x d`), `h`: matching latents (`R x d_b`), where
    /// `R` is a multiple of the token count.
    pub fn forward<F: Real>(
        &self,
        p: &[F],
        y: &ArrayView2<F>,
        h: &ArrayView2<F>,
        time: HeadTime<'_>,
    ) -> Result<(Array2<F>, HeadCache<F>)> {
        let rows = y.nrows();
        if y.ncols() != self.d || h.ncols() != self.d_b || h.nrows() != rows || rows % self.tokens != 0 {
            return Err(Error::shape(
                format!("y: R x {}, h: R x {}, R multiple of {}", self.d, self.d_b, self.tokens),
                format!("y: {:?}, h: {:?}", y.dim(), h.dim()),
            ));
        }
        let per_token: Vec<f64> = match time {
            HeadTime::Shared(s) => {
                if s.len() * self.tokens != rows {
                    return Err(Error::shape(format!("{} head times", rows / self.tokens), s.len()));
                }
                s.iter().flat_map(|&v| std::iter::repeat_n(v, self.tokens)).collect()
            }
            HeadTime::PerToken(s) => {
                if !self.supports_per_token_time() {
                    return Err(Error::invalid(
                        "s",
                        "per-token head times are only defined for token-independent (MLP) heads",
                    ));
                }
                if s.len() != rows {
                    return Err(Error::shape(format!("{rows} head times"), s.len()));
                }
                s.to_vec()
            }
        };

        let (y2, h2, times, seq) = match &self.scaling {
            Some(sc) => {
                let y2 = to_token_rows(&sc.in_y.forward(p, y)?.view(), self.d);
                let h2 = to_token_rows(&sc.in_h.forward(p, h)?.view(), self.d_b);
                let times: Vec<f64> = per_token
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, sc.l))
                    .collect();
                (y2, h2, times, self.tokens * sc.l)
            }
            None => (y.to_owned(), h.to_owned(), per_token, self.tokens),
        };

        let mut emb = Array2::<F>::zeros((times.len(), TIME_EMB_DIM));
        let mut last: Option<(f64, [f64; TIME_EMB_DIM])> = None;
        for (mut row, &t) in emb.rows_mut().into_iter().zip(&times) {
            let e = match last {
                Some((prev, e)) if prev == t => e,
                _ => time_embedding(t),
            };
            last = Some((t, e));
            row.iter_mut().zip(e).for_each(|(o, v)| *o = real(v));
        }
        let core_in = concatenate(Axis(1), &[y2.view(), emb.view(), h2.view()]).expect("same rows");
        let (core_out, core) = self.core_forward(p, &core_in, seq)?;

        let (out, core_out) = match &self.scaling {
            Some(sc) => {
                let merged = from_token_rows(core_out, sc.l);
                (sc.out_y.forward(p, &merged.view())?, Some(merged))
            }
            None => (core_out, None),
        };
        Ok((
            out,
            HeadCache {
                y: y.to_owned(),
                h: h.to_owned(),
                core,
                core_out,
            },
        ))
    }

    fn core_forward<F: Real>(&self, p: &[F], input: &Array2<F>, seq: usize) -> Result<(Array2<F>, CoreCache<F>)> {
        match &self.core {
            Core::Mlp { hidden, out } => {
                let mut inputs = Vec::with_capacity(hidden.len());
                let mut pre = Vec::with_capacity(hidden.len());
                let mut z = input.clone();
                for layer in hidden {
                    let a = layer.forward(p, &z.view())?;
                    let next = silu(&a);
                    inputs.push(z);
                    pre.push(a);
                    z = next;
                }
                let u = out.forward(p, &z.view())?;
                Ok((u, CoreCache::Mlp { inputs, pre, last: z }))
            }
            Core::Transformer {
                input: proj,
                blocks,
                final_ln,
                out,
            } => {
                let mut x = proj.forward(p, &input.view())?;
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (n1, ln1) = b.ln1.forward(p, &x.view());
                    let (a, attn) = b.attn.forward(p, &n1.view(), seq)?;
                    x += &a;
                    let (n2, ln2) = b.ln2.forward(p, &x.view());
                    let fc1_pre = b.fc1.forward(p, &n2.view())?;
                    let fc1_act = silu(&fc1_pre);
                    x += &b.fc2.forward(p, &fc1_act.view())?;
                    caches.push(BlockCache {
                        ln1,
                        attn,
                        ln2,
                        normed2: n2,
                        fc1_pre,
                        fc1_act,
                    });
                }
                let (nf, fc) = final_ln.forward(p, &x.view());
                let u = out.forward(p, &nf.view())?;
                Ok((
                    u,
                    CoreCache::Transformer {
                        input: input.clone(),
                        blocks: caches,
                        final_ln: fc,
                        final_normed: nf,
                    },
                ))
            }
        }
    }

    fn core_backward<F: Real>(&self, p: &[F], g: &mut [F], cache: &CoreCache<F>, du: &ArrayView2<F>, seq: usize) -> Array2<F> {
        match (&self.core, cache) {
            (Core::Mlp { hidden, out }, CoreCache::Mlp { inputs, pre, last }) => {
                let mut d = out.backward(p, g, &last.view(), du, true).unwrap();
                for (l, layer) in hidden.iter().enumerate().rev() {
                    let da = silu_backward(&pre[l], &d.view());
                    d = layer.backward(p, g, &inputs[l].view(), &da.view(), true).unwrap();
                }
                d
            }
            (
                Core::Transformer {
                    input: proj,
                    blocks,
                    final_ln,
                    out,
                },
                CoreCache::Transformer {
                    input,
                    blocks: caches,
                    final_ln: fc,
                    final_normed,
                },
            ) => {
                let dnf = out.backward(p, g, &final_normed.view(), du, true).unwrap();
                let mut dx = final_ln.backward(p, g, fc, &dnf.view());
                for (b, c) in blocks.iter().zip(caches).rev() {
                    let dact = b.fc2.backward(p, g, &c.fc1_act.view(), &dx.view(), true).unwrap();
                    let dpre = silu_backward(&c.fc1_pre, &dact.view());
                    let dn2 = b.fc1.backward(p, g, &c.normed2.view(), &dpre.view(), true).unwrap();
                    dx += &b.ln2.backward(p, g, &c.ln2, &dn2.view());
                    let dn1 = b.attn.backward(p, g, &c.attn, &dx.view(), seq);
                    dx += &b.ln1.backward(p, g, &c.ln1, &dn1.view());
                }
                proj.backward(p, g, &input.view(), &dx.view(), true).unwrap()
            }
            _ => unreachable!("cache built by a different head"),
        }
    }

    /// Accumulates parameter gradients and returns `dL/dh`.
    pub fn backward<F: Real>(&self, p: &[F], g: &mut [F], cache: &HeadCache<F>, du: &ArrayView2<F>) -> Array2<F> {
        let (d_core_out, seq) = match (&self.scaling, &cache.core_out) {
            (Some(sc), Some(merged)) => {
                let dm = sc.out_y.backward(p, g, &merged.view(), du, true).unwrap();
                (to_token_rows(&dm.view(), self.d), self.tokens * sc.l)
            }
            _ => (du.to_owned(), self.tokens),
        };
        let d_in = self.core_backward(p, g, &cache.core, &d_core_out.view(), seq);
        let h_off = self.d + TIME_EMB_DIM;
        let dy2 = d_in.slice(s![.., 0..self.d]);
        let dh2 = d_in.slice(s![.., h_off..h_off + self.d_b]);
        match &self.scaling {
            Some(sc) => {
                let dy2 = from_token_rows(dy2.to_owned(), sc.l);
                let dh2 = from_token_rows(dh2.to_owned(), sc.l);
                sc.in_y.backward(p, g, &cache.y.view(), &dy2.view(), false);
                sc.in_h.backward(p, g, &cache.h.view(), &dh2.view(), true).unwrap()
            }
            None => dh2.to_owned(),
        }
    }
}
