//! JSON checkpoint: config, layer shapes and parameters as decimal strings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, VariationalClassifier};
use crate::adversary::{AdvConfig, LatentDiscriminator, LatentGenerator};
use crate::autodiff::{Activation, DenseLayer, Matrix, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "imb-dpgm-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<String>,
    pub bias: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryRecord {
    pub config: AdvConfig,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub input_dim: usize,
    pub feature_names: Vec<String>,
    /// Path of the normalization sidecar the inputs were prepared with.
    pub norm_stats: Option<String>,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryRecord>,
}

// Debug formatting of f64 is the shortest string that parses back exactly.
fn encode(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:?}")).collect()
}

fn decode(name: &str, values: &[String], rows: usize, cols: usize) -> Result<Matrix> {
    let parsed = values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("layer {name}: bad parameter '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(rows, cols, parsed)
        .map_err(|_| Error::invalid(format!("layer {name}: expected {rows}x{cols} values")))
}

fn layer_record(name: String, l: &DenseLayer) -> LayerRecord {
    LayerRecord {
        name,
        in_dim: l.in_dim(),
        out_dim: l.out_dim(),
        activation: l.activation,
        weights: encode(l.weights.as_slice()),
        bias: encode(l.bias.as_slice()),
    }
}

fn mlp_records(prefix: &str, mlp: &Mlp) -> Vec<LayerRecord> {
    mlp.layers
        .iter()
        .enumerate()
        .map(|(i, l)| layer_record(format!("{prefix}.{i}"), l))
        .collect()
}

fn to_layer(r: &LayerRecord) -> Result<DenseLayer> {
    Ok(DenseLayer {
        weights: decode(&r.name, &r.weights, r.out_dim, r.in_dim)?,
        bias: decode(&r.name, &r.bias, 1, r.out_dim)?,
        activation: r.activation,
    })
}

fn take_mlp(records: &[LayerRecord], prefix: &str) -> Result<Mlp> {
    let mut layers = Vec::new();
    for i in 0.. {
        let name = format!("{prefix}.{i}");
        match records.iter().find(|r| r.name == name) {
            Some(r) => layers.push(to_layer(r)?),
            None => break,
        }
    }
    Ok(Mlp { layers })
}

fn take_layer(records: &[LayerRecord], name: &str) -> Result<DenseLayer> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::invalid(format!("checkpoint lacks layer '{name}'")))
        .and_then(to_layer)
}

impl Checkpoint {
    pub fn from_model(
        model: &VariationalClassifier,
        feature_names: &[String],
        norm_stats: Option<String>,
    ) -> Self {
        let mut layers = mlp_records("encoder", &model.encoder);
        layers.push(layer_record("mu".into(), &model.mu_layer));
        layers.push(layer_record("logvar".into(), &model.logvar_layer));
        layers.extend(mlp_records("head", &model.head));
        if let Some(dec) = &model.decoder {
            layers.extend(mlp_records("decoder", dec));
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config.clone(),
            input_dim: model.input_dim,
            feature_names: feature_names.to_vec(),
            norm_stats,
            layers,
            adversary: None,
        }
    }

    pub fn with_adversary(
        mut self,
        config: &AdvConfig,
        generator: &LatentGenerator,
        discriminator: &LatentDiscriminator,
    ) -> Self {
        let mut layers = mlp_records("generator", &generator.net);
        layers.extend(mlp_records("discriminator", &discriminator.net));
        self.adversary = Some(AdversaryRecord {
            config: config.clone(),
            layers,
        });
        self
    }

    pub fn to_model(&self) -> Result<VariationalClassifier> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("unknown checkpoint format '{}'", self.format)));
        }
        self.config.validate()?;
        let model = VariationalClassifier {
            config: self.config.clone(),
            input_dim: self.input_dim,
            encoder: take_mlp(&self.layers, "encoder")?,
            mu_layer: take_layer(&self.layers, "mu")?,
            logvar_layer: take_layer(&self.layers, "logvar")?,
            head: take_mlp(&self.layers, "head")?,
            decoder: if self.config.has_decoder() {
                Some(take_mlp(&self.layers, "decoder")?)
            } else {
                None
            },
        };
        let expected = VariationalClassifier::zeros(self.input_dim, &self.config)?;
        let shapes = |m: &VariationalClassifier| m.params().iter().map(|p| p.shape()).collect::<Vec<_>>();
        if shapes(&model) != shapes(&expected) {
            return Err(Error::invalid("checkpoint layer shapes do not match its config"));
        }
        Ok(model)
    }

    pub fn adversary_nets(&self) -> Result<Option<(LatentGenerator, LatentDiscriminator)>> {
        self.adversary
            .as_ref()
            .map(|a| {
                Ok((
                    LatentGenerator {
                        net: take_mlp(&a.layers, "generator")?,
                    },
                    LatentDiscriminator {
                        net: take_mlp(&a.layers, "discriminator")?,
                    },
                ))
            })
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
