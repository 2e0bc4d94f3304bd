use std::io::Read;
use std::path::Path;

use prefmatch_tensor::{NodeId, ParamId, ParamStore, Result as TensorResult, StreamRng, Tape, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Width/depth configuration shared by every module.
#[derive(Clone, Copy, Debug)]
pub struct ModelDims {
    /// Embedding width d.
    pub embed_dim: usize,
    /// Encoder depth; node representations have width `layers * embed_dim`.
    pub layers: usize,
    /// Attention head count.
    pub heads: usize,
}

impl ModelDims {
    pub fn node_width(&self) -> usize {
        self.layers * self.embed_dim
    }

    pub fn head_width(&self) -> usize {
        self.node_width() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err(CoreError::Config("dims must be positive".into()));
        }
        if self.node_width() % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "node width {} must be divisible by {} heads",
                self.node_width(),
                self.heads
            )));
        }
        Ok(())
    }
}

/// A dense layer: `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        Self::init_with_bias(store, rng, name, input, output, 0.0)
    }

    /// ReLU-activated heads start with a small positive bias so no unit is
    /// born dead; everything else uses zero.
    pub fn init_with_bias(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        bias_fill: f64,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::uniform_fan_in(input, output, input, rng),
        );
        let bias = store.register(
            format!("{name}.bias"),
            Tensor::full(1, output, bias_fill),
        );
        Linear { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> TensorResult<NodeId> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        let xw = tape.matmul(x, w)?;
        tape.add_row_bias(xw, b)
    }
}

/// Per-domain graph encoder weights: initial embeddings, the two-hop
/// aggregation maps, and the per-layer mixers.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub user_embeddings: ParamId,
    pub item_embeddings: ParamId,
    pub user_agg: ParamId,
    pub user_agg_out: ParamId,
    pub item_agg: ParamId,
    pub item_agg_out: ParamId,
    /// One `2d -> d` mixer per layer.
    pub mixers: Vec<Linear>,
}

impl EncoderParams {
    fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        users: usize,
        items: usize,
        dims: &ModelDims,
    ) -> Self {
        let d = dims.embed_dim;
        let user_embeddings = store.register(
            format!("{name}.user_embeddings"),
            Tensor::uniform_fan_in(users, d, d, rng),
        );
        let item_embeddings = store.register(
            format!("{name}.item_embeddings"),
            Tensor::uniform_fan_in(items, d, d, rng),
        );
        let user_agg = store.register(
            format!("{name}.user_agg"),
            Tensor::uniform_fan_in(d, d, d, rng),
        );
        let user_agg_out = store.register(
            format!("{name}.user_agg_out"),
            Tensor::uniform_fan_in(d, d, d, rng),
        );
        let item_agg = store.register(
            format!("{name}.item_agg"),
            Tensor::uniform_fan_in(d, d, d, rng),
        );
        let item_agg_out = store.register(
            format!("{name}.item_agg_out"),
            Tensor::uniform_fan_in(d, d, d, rng),
        );
        let mixers = (1..=dims.layers)
            .map(|k| Linear::init(store, rng, &format!("{name}.mixer{k}"), 2 * d, d))
            .collect();
        EncoderParams {
            user_embeddings,
            item_embeddings,
            user_agg,
            user_agg_out,
            item_agg,
            item_agg_out,
            mixers,
        }
    }
}

/// Posterior heads. Level 1 keeps node width; level 2 compresses groups of
/// user latents down to the embedding width. Shared across domains so both
/// map into one latent space.
#[derive(Clone, Debug)]
pub struct IdentifierParams {
    pub user_mean1: Linear,
    pub user_scale1: Linear,
    pub item_mean1: Linear,
    pub item_scale1: Linear,
    pub mean2: Linear,
    pub scale2: Linear,
}

impl IdentifierParams {
    fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, dims: &ModelDims) -> Self {
        let w = dims.node_width();
        let d = dims.embed_dim;
        IdentifierParams {
            user_mean1: Linear::init(store, rng, "identifier.user_mean1", w, w),
            user_scale1: Linear::init(store, rng, "identifier.user_scale1", w, w),
            item_mean1: Linear::init(store, rng, "identifier.item_mean1", w, w),
            item_scale1: Linear::init(store, rng, "identifier.item_scale1", w, w),
            mean2: Linear::init(store, rng, "identifier.mean2", w, d),
            scale2: Linear::init(store, rng, "identifier.scale2", w, d),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Shared projection + self-attention over group rows, with per-view
/// distribution heads.
#[derive(Clone, Debug)]
pub struct MatchingParams {
    /// Joint map from the two concatenated group latents (2d) to node width.
    pub joint: Linear,
    pub heads: Vec<AttentionHead>,
    pub attention_out: Linear,
    pub source_mean: Linear,
    pub source_scale: Linear,
    pub target_mean: Linear,
    pub target_scale: Linear,
}

impl MatchingParams {
    fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, dims: &ModelDims) -> Self {
        let w = dims.node_width();
        let d = dims.embed_dim;
        let hw = dims.head_width();
        let heads = (0..dims.heads)
            .map(|h| AttentionHead {
                query: store.register(
                    format!("matching.head{h}.query"),
                    Tensor::uniform_fan_in(w, hw, w, rng),
                ),
                key: store.register(
                    format!("matching.head{h}.key"),
                    Tensor::uniform_fan_in(w, hw, w, rng),
                ),
                value: store.register(
                    format!("matching.head{h}.value"),
                    Tensor::uniform_fan_in(w, hw, w, rng),
                ),
            })
            .collect();
        MatchingParams {
            joint: Linear::init(store, rng, "matching.joint", 2 * d, w),
            heads,
            attention_out: Linear::init(store, rng, "matching.attention_out", w, w),
            source_mean: Linear::init(store, rng, "matching.source_mean", w, d),
            source_scale: Linear::init(store, rng, "matching.source_scale", w, d),
            target_mean: Linear::init(store, rng, "matching.target_mean", w, d),
            target_scale: Linear::init(store, rng, "matching.target_scale", w, d),
        }
    }
}

/// Optional learned prior head over group-level latents.
#[derive(Clone, Debug)]
pub struct PriorParams {
    pub mean: Linear,
    pub scale: Linear,
}

/// Every trainable weight of the model, grouped by module, plus the flat
/// store backing them.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub source_encoder: EncoderParams,
    pub target_encoder: EncoderParams,
    pub identifier: IdentifierParams,
    pub matching: MatchingParams,
    /// Projects item latents (node width) into the group latent space (d) for
    /// cross-domain scoring.
    pub item_projection: Linear,
    pub learned_prior: Option<PriorParams>,
    pub store: ParamStore,
}

impl ModelParams {
    pub fn init(
        dims: ModelDims,
        source_users: usize,
        source_items: usize,
        target_users: usize,
        target_items: usize,
        learned_prior: bool,
        streams: &StreamRng,
    ) -> Result<Self> {
        dims.validate()?;
        let mut store = ParamStore::new();
        let mut rng = streams.stream("init");
        let source_encoder = EncoderParams::init(
            &mut store,
            &mut rng,
            "encoder.source",
            source_users,
            source_items,
            &dims,
        );
        let target_encoder = EncoderParams::init(
            &mut store,
            &mut rng,
            "encoder.target",
            target_users,
            target_items,
            &dims,
        );
        let identifier = IdentifierParams::init(&mut store, &mut rng, &dims);
        let matching = MatchingParams::init(&mut store, &mut rng, &dims);
        let item_projection = Linear::init(
            &mut store,
            &mut rng,
            "objectives.item_projection",
            dims.node_width(),
            dims.embed_dim,
        );
        let learned_prior = learned_prior.then(|| PriorParams {
            mean: Linear::init(
                &mut store,
                &mut rng,
                "objectives.prior_mean",
                dims.node_width(),
                dims.embed_dim,
            ),
            scale: Linear::init(
                &mut store,
                &mut rng,
                "objectives.prior_scale",
                dims.node_width(),
                dims.embed_dim,
            ),
        });
        Ok(ModelParams {
            dims,
            source_encoder,
            target_encoder,
            identifier,
            matching,
            item_projection,
            learned_prior,
            store,
        })
    }

    /// Parameter ids belonging to the matching path only; useful for checking
    /// that the warmup gate withholds their gradients.
    pub fn matching_param_ids(&self) -> Vec<ParamId> {
        let m = &self.matching;
        let mut ids = vec![
            m.joint.weight,
            m.joint.bias,
            m.attention_out.weight,
            m.attention_out.bias,
            m.source_mean.weight,
            m.source_mean.bias,
            m.source_scale.weight,
            m.source_scale.bias,
            m.target_mean.weight,
            m.target_mean.bias,
            m.target_scale.weight,
            m.target_scale.bias,
        ];
        for head in &m.heads {
            ids.extend([head.query, head.key, head.value]);
        }
        ids
    }

    /// Serialize all parameters as named little-endian f64 blocks.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(b"PMDL0001");
        out.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for (_, name, tensor) in self.store.iter() {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
            out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load previously saved values into this parameter layout.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != b"PMDL0001" {
            return Err(CoreError::Data(format!(
                "{} is not a model file",
                path.display()
            )));
        }
        let count = read_u64(&mut file)? as usize;
        if count != self.store.len() {
            return Err(CoreError::Data(format!(
                "model file has {count} parameters, expected {}",
                self.store.len()
            )));
        }
        for _ in 0..count {
            let name_len = read_u64(&mut file)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            file.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CoreError::Data("invalid parameter name".into()))?;
            let rows = read_u64(&mut file)? as usize;
            let cols = read_u64(&mut file)? as usize;
            let mut data = vec![0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                file.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let id = self.store.lookup(&name).ok_or_else(|| {
                CoreError::Data(format!("model file has unknown parameter {name}"))
            })?;
            let tensor = Tensor::new(rows, cols, data).map_err(CoreError::Tensor)?;
            if !tensor.same_shape(self.store.get(id)) {
                return Err(CoreError::Data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    self.store.get(id).shape()
                )));
            }
            *self.store.get_mut(id) = tensor;
        }
        Ok(())
    }
}

fn read_u64(file: &mut std::fs::File) -> Result<u64> {
    let mut buf = [0u8; 8];
    file.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            embed_dim: 4,
            layers: 2,
            heads: 2,
        }
    }

    #[test]
    fn init_registers_stable_layout() {
        let streams = StreamRng::new(3);
        let a = ModelParams::init(dims(), 6, 5, 7, 4, false, &streams).unwrap();
        let b = ModelParams::init(dims(), 6, 5, 7, 4, false, &streams).unwrap();
        assert_eq!(a.store.len(), b.store.len());
        for (id, name, tensor) in a.store.iter() {
            assert_eq!(name, b.store.name(id));
            assert_eq!(tensor.data(), b.store.get(id).data());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let streams = StreamRng::new(5);
        let model = ModelParams::init(dims(), 6, 5, 7, 4, false, &streams).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();

        let mut other = ModelParams::init(dims(), 6, 5, 7, 4, false, &StreamRng::new(99)).unwrap();
        other.load(&path).unwrap();
        for (id, _, tensor) in model.store.iter() {
            assert_eq!(tensor.data(), other.store.get(id).data());
        }
    }

    #[test]
    fn head_width_must_divide() {
        let bad = ModelDims {
            embed_dim: 3,
            layers: 1,
            heads: 2,
        };
        assert!(bad.validate().is_err());
    }
}
