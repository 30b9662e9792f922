use candle_core::DType;

use crate::config::RunConfig;
use crate::discriminator::Discriminator;
use crate::error::Result;
use crate::generator::Generator;
use crate::params::ParamStore;
use crate::seed::derive_seed;
use crate::training::LoadedCheckpoint;
use crate::vse::{VseModel, VSE_PREFIX};

/// Parameter store holding only the visual-semantic embedding.
pub struct VseBundle {
    pub store: ParamStore,
    pub vse: VseModel,
}

impl VseBundle {
    pub fn new(cfg: &RunConfig, vocab: crate::vse::Vocabulary, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype, derive_seed(cfg.seed, "vse-params"));
        let vse = VseModel::new(&mut store, vocab, &cfg.vse, cfg.data.size)?;
        Ok(Self { store, vse })
    }

    pub fn from_checkpoint(ckpt: &LoadedCheckpoint, dtype: DType) -> Result<Self> {
        let mut cfg = ckpt.config.clone();
        cfg.vse.embeddings = None;
        let bundle = Self::new(&cfg, ckpt.vocab.clone(), dtype)?;
        bundle.store.load_tensors(&ckpt.tensors)?;
        Ok(bundle)
    }
}

/// Text encoder, generator and discriminator sharing one parameter store.
pub struct CanvasModel {
    pub store: ParamStore,
    pub vse: VseModel,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl CanvasModel {
    pub fn new(cfg: &RunConfig, vocab: crate::vse::Vocabulary, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype, derive_seed(cfg.seed, "params"));
        let mut vse_cfg = cfg.vse.clone();
        vse_cfg.embeddings = None;
        let vse = VseModel::new(&mut store, vocab, &vse_cfg, cfg.data.size)?;
        let text_dim = cfg.vse.hidden;
        let generator = Generator::new(&mut store, "generator", &cfg.generator, text_dim)?;
        let discriminator =
            Discriminator::new(&mut store, "discriminator", &cfg.discriminator, cfg.data.size, text_dim)?;
        Ok(Self {
            store,
            vse,
            generator,
            discriminator,
        })
    }

    /// Copy the `vse.*` parameters from a pretrained embedding checkpoint.
    pub fn load_vse(&self, ckpt: &LoadedCheckpoint) -> Result<()> {
        for name in self.store.names().filter(|n| n.starts_with(VSE_PREFIX)) {
            let t = ckpt.tensors.get(name).ok_or_else(|| crate::Error::CorruptFile {
                path: ckpt.dir.clone(),
                detail: format!("missing parameter `{name}`"),
            })?;
            self.store.assign(name, t)?;
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &LoadedCheckpoint, dtype: DType) -> Result<Self> {
        let model = Self::new(&ckpt.config, ckpt.vocab.clone(), dtype)?;
        model.store.load_tensors(&ckpt.tensors)?;
        Ok(model)
    }
}
