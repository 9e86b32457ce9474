//! Model checkpoints.
//!
//! Layout (`DRANKCK\0`, version 1, little-endian, counts as `u64`):
//! `str objective, u64 feature_count, u64 hidden_dim, u64 hidden_layers,
//! f64 dropout, u64 label_classes, u8 head (0 logits, 1 score),
//! u8 generative, u64 time_embed_dim, u64 step, f64 val_ndcg10,
//! str dataset, f64 k_fraction, f64 perturb_std, u64 n, f64 × n parameters`.
//! Parameters are flattened in slot order.

use std::fs;
use std::path::Path;

use diffrank_core::model::{DenoiserNet, LabelHead, NetConfig};
use diffrank_core::objectives::ObjectiveKind;

use crate::binfmt::{Reader, Writer};
use crate::{Error, FormatError};

const MAGIC: &[u8; 8] = b"DRANKCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub objective: ObjectiveKind,
    pub config: NetConfig,
    /// Optimizer step at which the parameters were captured.
    pub step: u64,
    pub val_ndcg10: f64,
    pub dataset: String,
    pub k_fraction: f64,
    pub perturb_std: f64,
    pub parameters: Vec<f64>,
}

impl Checkpoint {
    pub fn from_net(
        objective: ObjectiveKind,
        net: &DenoiserNet,
        step: u64,
        val_ndcg10: f64,
        dataset: &str,
        k_fraction: f64,
        perturb_std: f64,
    ) -> Self {
        Self {
            objective,
            config: net.config().clone(),
            step,
            val_ndcg10,
            dataset: dataset.to_string(),
            k_fraction,
            perturb_std,
            parameters: net.flat_parameters(),
        }
    }

    pub fn to_net(&self) -> Result<DenoiserNet, Error> {
        Ok(DenoiserNet::from_flat(self.config.clone(), &self.parameters)?)
    }

    /// Label used for this run in result tables.
    pub fn method_name(&self) -> String {
        if self.perturb_std > 0.0 {
            format!("{} perturbed", self.objective.display_name())
        } else {
            self.objective.display_name().to_string()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(self.objective.as_str());
        w.len(c.feature_count);
        w.len(c.hidden_dim);
        w.len(c.num_hidden_layers);
        w.f64(c.dropout_rate);
        w.len(c.label_classes);
        w.u8(match c.head {
            LabelHead::Logits => 0,
            LabelHead::Score => 1,
        });
        w.u8(u8::from(c.generative));
        w.len(c.time_embed_dim);
        w.u64(self.step);
        w.f64(self.val_ndcg10);
        w.str(&self.dataset);
        w.f64(self.k_fraction);
        w.f64(self.perturb_std);
        w.len(self.parameters.len());
        w.f64s(&self.parameters);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let objective: ObjectiveKind = r.str()?.parse()?;
        let feature_count = r.len()?;
        let hidden_dim = r.len()?;
        let num_hidden_layers = r.len()?;
        let dropout_rate = r.f64()?;
        let label_classes = r.len()?;
        let head = match r.u8()? {
            0 => LabelHead::Logits,
            1 => LabelHead::Score,
            other => return Err(FormatError::Field(format!("head tag {other}")).into()),
        };
        let generative = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Field(format!("generative flag {other}")).into()),
        };
        let time_embed_dim = r.len()?;
        let step = r.u64()?;
        let val_ndcg10 = r.f64()?;
        let dataset = r.str()?;
        let k_fraction = r.f64()?;
        let perturb_std = r.f64()?;
        let n = r.len()?;
        let parameters = r.f64s(n)?;
        r.finish()?;
        let config = NetConfig {
            feature_count,
            hidden_dim,
            num_hidden_layers,
            dropout_rate,
            label_classes,
            head,
            generative,
            time_embed_dim,
        };
        if config.parameter_count() != n {
            return Err(FormatError::Field(format!(
                "{n} parameters stored, configuration needs {}",
                config.parameter_count()
            ))
            .into());
        }
        Ok(Self {
            objective,
            config,
            step,
            val_ndcg10,
            dataset,
            k_fraction,
            perturb_std,
            parameters,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        crate::write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display(), e))?;
        Self::decode(&bytes).map_err(|e| e.context(path))
    }
}
