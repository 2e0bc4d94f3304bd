//! Stochastic latent preference identifier: amortized diagonal-Gaussian
//! posteriors over node latents (level 1) and group-level preference
//! (level 2), with reparameterized sampling.

use prefmatch_tensor::{
    NodeId, Result as TensorResult, Tape, Tensor, TensorError,
};
use rand::Rng;

use crate::encoder::LEAKY_SLOPE;
use crate::error::{CoreError, Result};
use crate::model::IdentifierParams;

/// Smallest admissible scale entry anywhere in the model.
pub const SCALE_FLOOR: f64 = 1e-8;

/// A diagonal Gaussian as tape nodes: `mean` and entrywise `scale` share one
/// shape, and every scale entry is at least [`SCALE_FLOOR`].
#[derive(Clone, Copy, Debug)]
pub struct GaussianNode {
    pub mean: NodeId,
    pub scale: NodeId,
}

/// A diagonal Gaussian as plain values, for oracles and tests.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub scale: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, scale: Tensor) -> Result<Self> {
        if !mean.same_shape(&scale) {
            return Err(CoreError::Data(format!(
                "gaussian mean shape {:?} does not match scale shape {:?}",
                mean.shape(),
                scale.shape()
            )));
        }
        if scale.data().iter().any(|&s| s < SCALE_FLOOR) {
            return Err(CoreError::Data("gaussian scale below floor".into()));
        }
        Ok(DiagGaussian { mean, scale })
    }
}

/// Activation for the level-1 scale head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleActivation {
    /// Softmax over the feature axis times a multiplier, so each row's scales
    /// sum to the multiplier.
    Softmax,
    Softplus,
}

impl Default for ScaleActivation {
    fn default() -> Self {
        ScaleActivation::Softmax
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Level1Config {
    pub activation: ScaleActivation,
    /// Multiplier applied after the softmax; `None` means the feature width,
    /// which makes the mean scale entry 1.
    pub scale_multiplier: Option<f64>,
}

impl Default for Level1Config {
    fn default() -> Self {
        Level1Config {
            activation: ScaleActivation::Softmax,
            scale_multiplier: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    User,
    Item,
}

/// Level-1 posterior over node latents; keeps the input width.
pub fn infer_level1(
    tape: &mut Tape,
    rows: NodeId,
    params: &IdentifierParams,
    kind: NodeKind,
    config: &Level1Config,
) -> TensorResult<GaussianNode> {
    let (mean_head, scale_head) = match kind {
        NodeKind::User => (&params.user_mean1, &params.user_scale1),
        NodeKind::Item => (&params.item_mean1, &params.item_scale1),
    };
    let width = tape.value(rows).cols();
    let expected = tape.param_shape(mean_head.weight)[0];
    if width != expected {
        return Err(TensorError::ShapeMismatch {
            op: "infer_level1",
            lhs: vec![tape.value(rows).rows(), width],
            rhs: vec![expected, expected],
        });
    }
    let mean_linear = mean_head.apply(tape, rows)?;
    let mean = tape.leaky_relu(mean_linear, LEAKY_SLOPE)?;
    let raw = scale_head.apply(tape, rows)?;
    let scale = match config.activation {
        ScaleActivation::Softmax => {
            let soft = tape.softmax(raw, 1)?;
            let multiplier = config.scale_multiplier.unwrap_or(width as f64);
            tape.mul_scalar(soft, multiplier)?
        }
        ScaleActivation::Softplus => tape.softplus(raw)?,
    };
    let scale = tape.clamp_min(scale, SCALE_FLOOR)?;
    Ok(GaussianNode { mean, scale })
}

/// Level-2 posterior over group-level preference; compresses node width to
/// the embedding width. The mean head uses ReLU; the scale head uses softplus
/// so it stays strictly positive.
pub fn infer_level2(
    tape: &mut Tape,
    group_latents: NodeId,
    params: &IdentifierParams,
) -> TensorResult<GaussianNode> {
    let mean_linear = params.mean2.apply(tape, group_latents)?;
    let mean = tape.relu(mean_linear)?;
    let raw = params.scale2.apply(tape, group_latents)?;
    let soft = tape.softplus(raw)?;
    let scale = tape.clamp_min(soft, SCALE_FLOOR)?;
    Ok(GaussianNode { mean, scale })
}

/// Reparameterized draw: `mean + scale .* eps`. Passing `None` takes the
/// posterior mean (deterministic mode). Gradients flow to the mean and scale
/// but never to the noise.
pub fn sample(tape: &mut Tape, g: &GaussianNode, eps: Option<Tensor>) -> TensorResult<NodeId> {
    match eps {
        None => Ok(g.mean),
        Some(noise) => {
            let eps_node = tape.input(noise)?;
            let scaled = tape.mul(g.scale, eps_node)?;
            tape.add(g.mean, scaled)
        }
    }
}

/// Draw standard normal noise shaped like the Gaussian's mean.
pub fn noise_like(tape: &Tape, g: &GaussianNode, rng: &mut impl Rng) -> Tensor {
    let shape = tape.value(g.mean).shape();
    Tensor::randn(shape[0], shape[1], rng)
}

/// Uniform without-replacement sample of `n` user indices.
pub fn sample_group(user_count: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(CoreError::Data("group size must be >= 1".into()));
    }
    if n > user_count {
        return Err(CoreError::Data(format!(
            "group size {n} exceeds user count {user_count}"
        )));
    }
    let mut indices: Vec<usize> = (0..user_count).collect();
    for i in 0..n {
        let j = rng.random_range(i..user_count);
        indices.swap(i, j);
    }
    indices.truncate(n);
    Ok(indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefmatch_tensor::{Mode, StreamRng};

    use crate::model::{ModelDims, ModelParams};

    fn model() -> ModelParams {
        ModelParams::init(
            ModelDims {
                embed_dim: 4,
                layers: 2,
                heads: 2,
            },
            6,
            5,
            6,
            5,
            false,
            &StreamRng::new(17),
        )
        .unwrap()
    }

    fn zero_heads(model: &mut ModelParams) {
        for head in [
            model.identifier.user_mean1,
            model.identifier.user_scale1,
            model.identifier.mean2,
            model.identifier.scale2,
        ] {
            let shape = model.store.get(head.weight).shape();
            *model.store.get_mut(head.weight) = Tensor::zeros(shape[0], shape[1]);
            let bshape = model.store.get(head.bias).shape();
            *model.store.get_mut(head.bias) = Tensor::zeros(bshape[0], bshape[1]);
        }
    }

    #[test]
    fn zero_weights_give_zero_mean_uniform_scale() {
        let mut m = model();
        zero_heads(&mut m);
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let h = tape
            .input(Tensor::from_rows(&[vec![0.3; 8], vec![-0.2; 8]]).unwrap())
            .unwrap();
        let g = infer_level1(
            &mut tape,
            h,
            &m.identifier,
            NodeKind::User,
            &Level1Config::default(),
        )
        .unwrap();
        assert!(tape.value(g.mean).data().iter().all(|&v| v == 0.0));
        // Softmax of constants is uniform; default multiplier is the width,
        // so each scale entry is exactly 1.
        for &s in tape.value(g.scale).data() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level1_shapes() {
        let m = model();
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let h = tape.input(Tensor::zeros(7, 8)).unwrap();
        let g = infer_level1(
            &mut tape,
            h,
            &m.identifier,
            NodeKind::Item,
            &Level1Config::default(),
        )
        .unwrap();
        assert_eq!(tape.value(g.mean).shape(), [7, 8]);
        assert_eq!(tape.value(g.scale).shape(), [7, 8]);
    }

    #[test]
    fn level1_scale_rows_sum_to_multiplier() {
        let m = model();
        let streams = StreamRng::new(3);
        let mut rng = streams.stream("sampling");
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let h = tape.input(Tensor::randn(5, 8, &mut rng)).unwrap();
        let config = Level1Config {
            activation: ScaleActivation::Softmax,
            scale_multiplier: Some(8.0),
        };
        let g = infer_level1(&mut tape, h, &m.identifier, NodeKind::User, &config).unwrap();
        for r in 0..5 {
            let sum: f64 = tape.value(g.scale).row(r).iter().sum();
            assert!((sum - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level1_width_mismatch_errors() {
        let m = model();
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let h = tape.input(Tensor::zeros(3, 5)).unwrap();
        let err = infer_level1(
            &mut tape,
            h,
            &m.identifier,
            NodeKind::User,
            &Level1Config::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("infer_level1"));
    }

    #[test]
    fn level2_zero_weights_softplus_at_zero() {
        let mut m = model();
        zero_heads(&mut m);
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let z1 = tape.input(Tensor::from_rows(&[vec![0.4; 8]]).unwrap()).unwrap();
        let g = infer_level2(&mut tape, z1, &m.identifier).unwrap();
        assert!(tape.value(g.mean).data().iter().all(|&v| v == 0.0));
        for &s in tape.value(g.scale).data() {
            assert!((s - 2.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn level2_shape_contract() {
        let m = model();
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let z1 = tape.input(Tensor::zeros(16, 8)).unwrap();
        let g = infer_level2(&mut tape, z1, &m.identifier).unwrap();
        assert_eq!(tape.value(g.mean).shape(), [16, 4]);
    }

    #[test]
    fn deterministic_sample_is_the_mean() {
        let m = model();
        let mut tape = Tape::new(&m.store, Mode::Eval);
        let mean = tape.input(Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap()).unwrap();
        let scale = tape.input(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        let g = GaussianNode { mean, scale };
        let z = sample(&mut tape, &g, None).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, -2.0]);

        // Zero noise also reproduces the mean.
        let z0 = sample(&mut tape, &g, Some(Tensor::zeros(1, 2))).unwrap();
        assert_eq!(tape.value(z0).data(), &[1.0, -2.0]);
    }

    #[test]
    fn full_group_is_a_permutation() {
        let mut rng = StreamRng::new(5).stream("sampling");
        let mut group = sample_group(9, 9, &mut rng).unwrap();
        group.sort_unstable();
        assert_eq!(group, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_group_errors() {
        let mut rng = StreamRng::new(5).stream("sampling");
        assert!(sample_group(4, 5, &mut rng).is_err());
    }

    #[test]
    fn group_sampling_uniform_by_chi_square() {
        let streams = StreamRng::new(23);
        let trials = 100_000usize;
        let mut counts = vec![0usize; 12];
        for trial in 0..trials {
            let mut rng = streams.stream_at("sampling", trial as u64);
            let group = sample_group(12, 3, &mut rng).unwrap();
            for u in group {
                counts[u] += 1;
            }
        }
        let expected = trials as f64 * 3.0 / 12.0;
        let statistic: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dof = 11.0;
        assert!(
            (statistic - dof).abs() <= 3.0 * (2.0 * dof).sqrt(),
            "chi-square {statistic}"
        );
    }

    #[test]
    fn same_seed_same_group() {
        let streams = StreamRng::new(31);
        let a = sample_group(40, 7, &mut streams.stream_at("sampling", 4)).unwrap();
        let b = sample_group(40, 7, &mut streams.stream_at("sampling", 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn amortization_row_independence() {
        // Applying the heads to stacked batches equals stacking the per-batch
        // outputs.
        let m = model();
        let streams = StreamRng::new(41);
        let mut rng = streams.stream("sampling");
        let top = Tensor::randn(3, 8, &mut rng);
        let bottom = Tensor::randn(2, 8, &mut rng);
        let mut stacked_rows = Vec::new();
        for r in 0..3 {
            stacked_rows.push(top.row(r).to_vec());
        }
        for r in 0..2 {
            stacked_rows.push(bottom.row(r).to_vec());
        }
        let stacked = Tensor::from_rows(&stacked_rows).unwrap();

        let run = |input: Tensor| {
            let mut tape = Tape::new(&m.store, Mode::Eval);
            let h = tape.input(input).unwrap();
            let g = infer_level1(
                &mut tape,
                h,
                &m.identifier,
                NodeKind::User,
                &Level1Config::default(),
            )
            .unwrap();
            (
                tape.value(g.mean).clone(),
                tape.value(g.scale).clone(),
            )
        };
        let (mean_all, scale_all) = run(stacked);
        let (mean_top, _) = run(top);
        let (mean_bot, _) = run(bottom);
        for r in 0..3 {
            assert_eq!(mean_all.row(r), mean_top.row(r));
        }
        for r in 0..2 {
            assert_eq!(mean_all.row(3 + r), mean_bot.row(r));
        }
        assert!(scale_all.data().iter().all(|&s| s >= SCALE_FLOOR));
    }

    #[test]
    fn reparameterized_covariance_is_diagonal() {
        // Empirical covariance of samples from a 2-dim diagonal Gaussian:
        // off-diagonal within 3 standard errors of zero.
        let streams = StreamRng::new(47);
        let mut rng = streams.stream("sampling");
        let (mu1, mu2, s1, s2) = (0.5, -1.0, 0.8, 1.7);
        let n = 100_000;
        let (mut sum1, mut sum2, mut sum12) = (0.0, 0.0, 0.0);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = mu1 + s1 * prefmatch_tensor::standard_normal(&mut rng);
            let z2 = mu2 + s2 * prefmatch_tensor::standard_normal(&mut rng);
            sum1 += z1;
            sum2 += z2;
            draws.push((z1, z2));
        }
        let (m1, m2) = (sum1 / n as f64, sum2 / n as f64);
        for &(z1, z2) in &draws {
            sum12 += (z1 - m1) * (z2 - m2);
        }
        let cov = sum12 / n as f64;
        let se = s1 * s2 / (n as f64).sqrt();
        assert!(cov.abs() <= 3.0 * se, "cov {cov} (se {se})");
    }
}
