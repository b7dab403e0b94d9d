//! JSON model files, versioned by a top-level `"schema": 1` field.
//!
//! ```json
//! { "schema": 1, "name": "two-state",
//!   "model": { "kind": "channel",
//!     "states": ["a", "b"],
//!     "construction": { "mode": "generator", "rates": [[0, 1], [2, 0]] },
//!     "classes": [ { "from": "a", "to": "b", "class": 1 },
//!                  { "from": "b", "to": "a", "class": 2 } ],
//!     "joint": { "keep": null, "marks": ["A", "B"], "coarse": [0, 1] },
//!     "output": { "keep": ["b:1"], "marks": ["B"], "coarse": [0] },
//!     "output_mark": "B", "start": "b", "start_augmented": "b:1" } }
//! ```
//!
//! Densities are exp-poly term lists, `{"terms": [{"coeff": [re, im],
//! "power": m, "rate": [re, im]}], "atom": 0}`. Built-in models are
//! available as `{"kind": "gene", "params": {...}}` and
//! `{"kind": "leakage", "params": {...}}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPoly;
use crate::filtering::{MarginalSpec, TransitionClassMap};
use crate::kernels::{smk_from_competing, smk_from_conditional, smk_from_generator, GeneratorSpec, SemiMarkovKernel};
use crate::models::{gene_channel, gene_modulated, leakage_channel, Channel, GeneModelParams, LeakageModelParams, ModulatedChannel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// The repressed promoter; a fixed `concentration` gives a single
    /// channel, otherwise the two-concentration modulated channel.
    Gene {
        params: GeneModelParams,
        #[serde(default)]
        concentration: Option<f64>,
    },
    Leakage {
        params: LeakageModelParams,
    },
    Channel(ChannelSpec),
    Modulated {
        blocks: Vec<BlockSpec>,
        prior: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub label: String,
    pub channel: ChannelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Construction {
    Generator { rates: Vec<Vec<f64>> },
    Conditional { p: Vec<Vec<f64>>, holding: Vec<Vec<Option<ExpPoly>>> },
    Competing { clocks: Vec<Vec<Option<ExpPoly>>> },
    Explicit { q: Vec<Vec<ExpPoly>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub from: String,
    pub to: String,
    pub class: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalConfig {
    #[serde(default)]
    pub keep: Option<Vec<String>>,
    pub marks: Vec<String>,
    pub coarse: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub states: Vec<String>,
    pub construction: Construction,
    pub classes: Vec<ClassEntry>,
    pub joint: MarginalConfig,
    pub output: MarginalConfig,
    pub output_mark: String,
    pub start: String,
    pub start_augmented: String,
}

/// A loaded model.
#[derive(Debug, Clone)]
pub enum Model {
    Channel(Channel),
    Modulated(ModulatedChannel),
}

fn renormalized(d: &ExpPoly) -> ExpPoly {
    ExpPoly::from_terms(d.terms().to_vec())
}

fn renormalized_opt(m: &[Vec<Option<ExpPoly>>]) -> Vec<Vec<Option<ExpPoly>>> {
    m.iter().map(|r| r.iter().map(|d| d.as_ref().map(renormalized)).collect()).collect()
}

impl ChannelSpec {
    pub fn build(&self, name: &str) -> Result<Channel> {
        let states = self.states.clone();
        let kernel = match &self.construction {
            Construction::Generator { rates } => smk_from_generator(&GeneratorSpec { states, rates: rates.clone() })?,
            Construction::Conditional { p, holding } => smk_from_conditional(states, p, &renormalized_opt(holding))?,
            Construction::Competing { clocks } => smk_from_competing(states, &renormalized_opt(clocks))?,
            Construction::Explicit { q } => {
                SemiMarkovKernel::new(states, q.iter().map(|r| r.iter().map(renormalized).collect()).collect())?
            }
        };
        let mut classes = TransitionClassMap::new(kernel.len());
        let idx = |l: &str| kernel.index_of(l).ok_or_else(|| Error::InvalidInput(format!("unknown state {l} in class map")));
        for e in &self.classes {
            classes.set(idx(&e.from)?, idx(&e.to)?, e.class);
        }
        let spec = |m: &MarginalConfig| MarginalSpec {
            classes: classes.clone(),
            keep: m.keep.clone(),
            marks: m.marks.clone(),
            coarse: m.coarse.clone(),
            initial: None,
        };
        let c = Channel {
            name: name.to_string(),
            joint: spec(&self.joint),
            output: spec(&self.output),
            kernel,
            output_mark: self.output_mark.clone(),
            start: self.start.clone(),
            start_augmented: self.start_augmented.clone(),
        };
        c.joint_filter()?;
        c.output_filter()?;
        Ok(c)
    }

    /// Explicit-mode description of a built channel.
    pub fn from_channel(c: &Channel) -> Self {
        let k = &c.kernel;
        let mut classes = Vec::new();
        for y in 0..k.len() {
            for z in 0..k.len() {
                if let Some(class) = c.joint.classes.get(y, z) {
                    classes.push(ClassEntry { from: k.states()[y].clone(), to: k.states()[z].clone(), class });
                }
            }
        }
        let marg = |m: &MarginalSpec| MarginalConfig { keep: m.keep.clone(), marks: m.marks.clone(), coarse: m.coarse.clone() };
        ChannelSpec {
            states: k.states().to_vec(),
            construction: Construction::Explicit { q: k.densities().to_vec() },
            classes,
            joint: marg(&c.joint),
            output: marg(&c.output),
            output_mark: c.output_mark.clone(),
            start: c.start.clone(),
            start_augmented: c.start_augmented.clone(),
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model config: {e}")))?;
        if cfg.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema version {} (expected {SCHEMA_VERSION})", cfg.schema));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn build(&self) -> Result<Model> {
        let name = self.name.clone().unwrap_or_else(|| "model".into());
        match &self.model {
            ModelSpec::Gene { params, concentration: Some(c) } => Ok(Model::Channel(gene_channel(params, *c)?)),
            ModelSpec::Gene { params, concentration: None } => Ok(Model::Modulated(gene_modulated(params)?)),
            ModelSpec::Leakage { params } => Ok(Model::Channel(leakage_channel(params)?)),
            ModelSpec::Channel(spec) => Ok(Model::Channel(spec.build(&name)?)),
            ModelSpec::Modulated { blocks, prior } => {
                let blocks = blocks.iter().map(|b| Ok((b.label.clone(), b.channel.build(&b.label)?))).collect::<Result<Vec<_>>>()?;
                let s: f64 = prior.iter().sum();
                if prior.len() != blocks.len() || prior.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (s - 1.0).abs() > 1e-9 {
                    return invalid("prior must be a probability vector over the blocks");
                }
                Ok(Model::Modulated(ModulatedChannel { name, blocks, prior: prior.clone() }))
            }
        }
    }

    pub fn from_channel(c: &Channel) -> Self {
        ModelConfig { schema: SCHEMA_VERSION, name: Some(c.name.clone()), model: ModelSpec::Channel(ChannelSpec::from_channel(c)) }
    }

    pub fn from_modulated(m: &ModulatedChannel) -> Self {
        let blocks = m.blocks.iter().map(|(l, c)| BlockSpec { label: l.clone(), channel: ChannelSpec::from_channel(c) }).collect();
        ModelConfig { schema: SCHEMA_VERSION, name: Some(m.name.clone()), model: ModelSpec::Modulated { blocks, prior: m.prior.clone() } }
    }
}
