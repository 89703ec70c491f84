use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::backbone::{from_token_rows, Backbone, BackboneCache, BackboneConfig};
use super::head::{Head, HeadCache, HeadConfig, HeadTime};
use super::layers::Linear;
use super::params::{LayoutBuilder, NetParams};
use super::Real;
use crate::error::{Error, Result};
use crate::process::Parameterization;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum ModelKind {
    /// Backbone plus a flow head sampling the posterior of `Y`.
    Dtm {
        parameterization: Parameterization,
        head: HeadConfig,
    },
    /// Backbone plus a linear read-out regressing the configured target.
    Fm {
        #[serde(default = "default_fm_target")]
        target: Parameterization,
    },
}

fn default_fm_target() -> Parameterization {
    Parameterization::Difference
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Tokens per state, `n`.
    pub tokens: usize,
    /// Channels per token, `d`.
    pub channels: usize,
    pub backbone: BackboneConfig,
    pub kind: ModelKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.channels == 0 {
            return Err(Error::invalid("tokens", "tokens and channels must be >= 1"));
        }
        self.backbone.validate()?;
        if self.backbone.d_in != self.channels {
            return Err(Error::invalid(
                "backbone.d_in",
                format!("must equal channels ({}), got {}", self.channels, self.backbone.d_in),
            ));
        }
        if let ModelKind::Dtm { head, .. } = &self.kind {
            head.validate()?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.tokens * self.channels
    }
}

/// Network evaluation counters. A batched call counts once.
#[derive(Debug, Default)]
pub struct Counters {
    backbone: AtomicU64,
    head: AtomicU64,
}

impl Counters {
    pub fn backbone(&self) -> u64 {
        self.backbone.load(Ordering::Relaxed)
    }

    pub fn head(&self) -> u64 {
        self.head.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.backbone.store(0, Ordering::Relaxed);
        self.head.store(0, Ordering::Relaxed);
    }
}

impl Clone for Counters {
    fn clone(&self) -> Self {
        Self {
            backbone: AtomicU64::new(self.backbone()),
            head: AtomicU64::new(self.head()),
        }
    }
}

pub struct FmCache<F> {
    backbone: BackboneCache<F>,
    h: Array2<F>,
}

/// A D-TM or FM network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model<F> {
    config: ModelConfig,
    backbone: Backbone,
    head: Option<Head>,
    fm_out: Option<Linear>,
    params: NetParams<F>,
    counters: Counters,
}

struct Arch {
    backbone: Backbone,
    head: Option<Head>,
    fm_out: Option<Linear>,
    layout: LayoutBuilder,
}

fn build(config: &ModelConfig) -> Result<Arch> {
    config.validate()?;
    let mut lb = LayoutBuilder::default();
    let backbone = Backbone::new(&mut lb, &config.backbone, config.tokens);
    let (head, fm_out) = match &config.kind {
        ModelKind::Dtm { head, .. } => (
            Some(Head::new(&mut lb, head, config.channels, config.backbone.d_b, config.tokens)),
            None,
        ),
        ModelKind::Fm { .. } => (
            None,
            Some(Linear::new(&mut lb, "fm.out", config.backbone.d_b, config.channels, true, true)),
        ),
    };
    Ok(Arch {
        backbone,
        head,
        fm_out,
        layout: lb,
    })
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: Seed) -> Result<Self> {
        let arch = build(&config)?;
        let params = arch.layout.initialize(seed);
        Ok(Self {
            config,
            backbone: arch.backbone,
            head: arch.head,
            fm_out: arch.fm_out,
            params,
            counters: Counters::default(),
        })
    }

    /// Rebuilds a model around existing parameters; the layout must match.
    pub fn from_params(config: ModelConfig, params: NetParams<F>) -> Result<Self> {
        let arch = build(&config)?;
        if arch.layout.specs() != params.layout() {
            return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
        }
        Ok(Self {
            config,
            backbone: arch.backbone,
            head: arch.head,
            fm_out: arch.fm_out,
            params,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &NetParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams<F> {
        &mut self.params
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    /// `Some` for D-TM models.
    pub fn parameterization(&self) -> Option<Parameterization> {
        match self.config.kind {
            ModelKind::Dtm { parameterization, .. } => Some(parameterization),
            ModelKind::Fm { .. } => None,
        }
    }

    pub fn fm_target(&self) -> Option<Parameterization> {
        match self.config.kind {
            ModelKind::Fm { target } => Some(target),
            ModelKind::Dtm { .. } => None,
        }
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            head: self.head.clone(),
            fm_out: self.fm_out.clone(),
            params: self.params.cast(),
            counters: Counters::default(),
        }
    }

    /// States as rows (`B x n*d`) to latents as token rows (`B*n x d_b`).
    pub fn backbone_forward(
        &self,
        x: &ArrayView2<F>,
        t: &[f64],
        cond: &[Option<usize>],
    ) -> Result<(Array2<F>, BackboneCache<F>)> {
        self.counters.backbone.fetch_add(1, Ordering::Relaxed);
        self.backbone.forward(&self.params.values, x, t, cond)
    }

    pub fn backbone_backward(&self, grad: &mut [F], cache: &BackboneCache<F>, dh: &ArrayView2<F>) {
        self.backbone.backward(&self.params.values, grad, cache, dh)
    }

    fn dtm_head(&self) -> Result<&Head> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::invalid("model", "flow-matching models have no head"))
    }

    /// Token rows in, token rows out.
    pub fn head_forward(
        &self,
        y: &ArrayView2<F>,
        h: &ArrayView2<F>,
        s: HeadTime<'_>,
    ) -> Result<(Array2<F>, HeadCache<F>)> {
        let head = self.dtm_head()?;
        self.counters.head.fetch_add(1, Ordering::Relaxed);
        head.forward(&self.params.values, y, h, s)
    }

    pub fn head_backward(&self, grad: &mut [F], cache: &HeadCache<F>, du: &ArrayView2<F>) -> Result<Array2<F>> {
        Ok(self.dtm_head()?.backward(&self.params.values, grad, cache, du))
    }

    /// FM prediction of the configured target, one state per row.
    pub fn fm_forward(
        &self,
        x: &ArrayView2<F>,
        t: &[f64],
        cond: &[Option<usize>],
    ) -> Result<(Array2<F>, FmCache<F>)> {
        let out = self
            .fm_out
            .as_ref()
            .ok_or_else(|| Error::invalid("model", "D-TM models have no flow-matching read-out"))?;
        let (h, backbone) = self.backbone_forward(x, t, cond)?;
        let pred = out.forward(&self.params.values, &h.view())?;
        Ok((from_token_rows(pred, self.config.tokens), FmCache { backbone, h }))
    }

    pub fn fm_backward(&self, grad: &mut [F], cache: &FmCache<F>, dpred: &ArrayView2<F>) -> Result<()> {
        let out = self
            .fm_out
            .as_ref()
            .ok_or_else(|| Error::invalid("model", "D-TM models have no flow-matching read-out"))?;
        let d = self.config.channels;
        let rows = super::backbone::to_token_rows(dpred, d);
        let dh = out
            .backward(&self.params.values, grad, &cache.h.view(), &rows.view(), true)
            .unwrap();
        self.backbone_backward(grad, &cache.backbone, &dh.view());
        Ok(())
    }
}
