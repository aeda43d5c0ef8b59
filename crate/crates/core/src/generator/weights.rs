use std::collections::BTreeMap;
use std::path::Path;

use anim3d_numerics::{AdamConfig, AdamState, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::GeneratorConfig;
use crate::container::Container;
use crate::error::{CoreError, Result};

const CHECKPOINT_KIND: &str = "checkpoint";
/// Scale applied to the initial weights of layers that produce outputs, so an
/// untrained network starts near zero expression and an identity modulation.
const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Every learnable tensor, keyed by a dotted name. Ordered, so iteration and
/// serialization are deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub config: GeneratorConfig,
    pub params: BTreeMap<String, Tensor>,
}

/// Parameter tensors bound into a graph.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("generator parameter `{name}` was not bound"))
    }

    pub fn ids(&self) -> &BTreeMap<String, NodeId> {
        &self.ids
    }
}

struct Init {
    rng: ChaCha8Rng,
    params: BTreeMap<String, Tensor>,
}

impl Init {
    /// He-style uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) * gain`.
    fn weight(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, gain: f64) {
        let bound = (6.0 / fan_in as f64).sqrt() * gain;
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.insert(name.to_string(), Tensor::new(shape, data).expect("init shape"));
    }

    fn fill(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        self.params.insert(name.to_string(), Tensor::full(shape, value));
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
        self.weight(&format!("{name}.w"), vec![fan_in, fan_out], fan_in, gain);
        self.fill(&format!("{name}.b"), vec![fan_out], 0.0);
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) {
        self.weight(&format!("{name}.w"), vec![c_out, c_in, 3, 3], 9 * c_in, 1.0);
        self.fill(&format!("{name}.b"), vec![c_out], 0.0);
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.fill(&format!("{name}.g"), vec![d], 1.0);
        self.fill(&format!("{name}.b"), vec![d], 0.0);
    }
}

impl GeneratorWeights {
    /// Seeded initialization from `config.seed`.
    pub fn init(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params: BTreeMap::new(),
        };
        let ch = &config.encoder_channels;
        init.conv("enc.stem", 1, ch[0]);
        for i in 1..ch.len() {
            init.conv(&format!("enc.down{i}"), ch[i - 1], ch[i]);
            init.conv(&format!("enc.res{i}"), ch[i], ch[i]);
        }
        let d = config.d_model;
        init.linear("in", config.audio_dim(), d, 1.0);
        init.weight("style.table", vec![config.n_styles, config.d_style], 2, 1.0);
        for l in 0..config.n_tsa_layers {
            init.norm(&format!("tsa{l}.ln1"), d);
            for p in ["q", "k", "v"] {
                init.linear(&format!("tsa{l}.{p}"), d, d, 1.0);
            }
            init.linear(&format!("tsa{l}.o"), d, d, 1.0);
            init.norm(&format!("tsa{l}.ln2"), d);
            init.linear(&format!("tsa{l}.ff1"), d, config.mlp_hidden, 1.0);
            init.linear(&format!("tsa{l}.ff2"), config.mlp_hidden, d, OUTPUT_INIT_SCALE);
        }
        init.norm("final_ln", d);
        init.linear("mod.l1", config.d_style, config.mlp_hidden, 1.0);
        init.linear("mod.l2", config.mlp_hidden, 2 * d, OUTPUT_INIT_SCALE);
        // The first half of the modulation output is the scale; start it at 1.
        if let Some(b) = init.params.get_mut("mod.l2.b") {
            b.data_mut()[..d].fill(1.0);
        }
        for (head, out) in [("head_expr", config.d_psi), ("head_jaw", 3)] {
            init.linear(&format!("{head}.l1"), d, config.mlp_hidden, 1.0);
            init.linear(&format!("{head}.l2"), config.mlp_hidden, out, OUTPUT_INIT_SCALE);
        }
        Ok(GeneratorWeights {
            config: config.clone(),
            params: init.params,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| CoreError::arg(format!("no generator parameter named `{name}`")))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| CoreError::arg(format!("no generator parameter named `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(CoreError::arg(format!(
                "`{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `g`, as a trainable leaf or as a constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|(name, t)| {
                let id = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
                (name.clone(), id)
            })
            .collect();
        Bound { ids }
    }

    fn check_against_init(&self) -> Result<()> {
        let reference = GeneratorWeights::init(&self.config)?;
        for (name, t) in &reference.params {
            let got = self
                .params
                .get(name)
                .ok_or_else(|| CoreError::schema(format!("gen.{name}"), "missing from checkpoint"))?;
            if got.shape() != t.shape() {
                return Err(CoreError::schema(
                    format!("gen.{name}"),
                    format!("shape {:?}, config implies {:?}", got.shape(), t.shape()),
                ));
            }
            if !got.all_finite() {
                return Err(CoreError::invalid(format!("gen.{name}"), "non-finite weights"));
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(CoreError::schema(format!("gen.{extra}"), "not part of this configuration"));
        }
        Ok(())
    }
}

/// Trained weights plus optional optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub weights: GeneratorWeights,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::with_kind(CHECKPOINT_KIND);
        c.set_meta(
            "config",
            serde_json::to_value(&self.weights.config).expect("config serializes"),
        );
        for (name, t) in &self.weights.params {
            c.insert(format!("gen.{name}"), t.clone());
        }
        if let Some(adam) = &self.adam {
            let cfg = adam.config;
            c.set_meta("adam_step", Value::from(adam.step));
            c.set_meta(
                "adam_config",
                serde_json::json!({"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps}),
            );
            for (name, t) in &adam.m {
                c.insert(format!("adam.m.{name}"), t.clone());
            }
            for (name, t) in &adam.v {
                c.insert(format!("adam.v.{name}"), t.clone());
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let config: GeneratorConfig = serde_json::from_value(
            c.meta_value("config")
                .cloned()
                .ok_or_else(|| CoreError::schema("config", "missing"))?,
        )
        .map_err(|e| CoreError::schema("config", e.to_string()))?;
        config.validate()?;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in c.arrays() {
            if let Some(rest) = name.strip_prefix("gen.") {
                params.insert(rest.to_string(), t.clone());
            } else if let Some(rest) = name.strip_prefix("adam.m.") {
                m.insert(rest.to_string(), t.clone());
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                v.insert(rest.to_string(), t.clone());
            }
        }
        let weights = GeneratorWeights { config, params };
        weights.check_against_init()?;
        let adam = match c.meta_value("adam_config") {
            Some(cfg) => {
                let f = |k: &str| {
                    cfg.get(k)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| CoreError::schema(format!("adam_config.{k}"), "missing"))
                };
                Some(AdamState {
                    config: AdamConfig {
                        lr: f("lr")?,
                        beta1: f("beta1")?,
                        beta2: f("beta2")?,
                        eps: f("eps")?,
                    },
                    step: c.meta_usize("adam_step")? as u64,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Checkpoint { weights, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_container(&Container::read(path)?)
    }
}
