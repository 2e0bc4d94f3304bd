//! Deterministic graph encoder.
//!
//! Each node aggregates its two-hop homogeneous neighborhood: users reach
//! users through shared items and items reach items through shared users.
//! Layer 1 mixes that aggregate with the initial embeddings; deeper layers
//! mix the previous two layer outputs. The final representation concatenates
//! all layer outputs, giving width `layers * embed_dim`.

use std::rc::Rc;

use prefmatch_tensor::{NodeId, Result as TensorResult, SparseMatrix, Tape};

use crate::model::EncoderParams;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

/// Encoder outputs for one domain: user and item representations.
#[derive(Clone, Copy, Debug)]
pub struct EncodedNodes {
    pub users: NodeId,
    pub items: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    pub layers: usize,
    /// Re-run the two-hop aggregation inside every layer instead of only the
    /// first; off by default.
    pub reaggregate_per_layer: bool,
}

/// Two-hop neighbor aggregation from the initial embeddings.
///
/// Users: route embeddings through items (`adj^T U W`), activate, and come
/// back (`adj . W'`). Items mirror the path through users.
pub fn two_hop_aggregate(
    tape: &mut Tape,
    adjacency: &Rc<SparseMatrix>,
    params: &EncoderParams,
    side: Side,
) -> TensorResult<NodeId> {
    let embeddings = match side {
        Side::User => tape.param(params.user_embeddings)?,
        Side::Item => tape.param(params.item_embeddings)?,
    };
    two_hop_from(tape, adjacency, params, side, embeddings)
}

fn two_hop_from(
    tape: &mut Tape,
    adjacency: &Rc<SparseMatrix>,
    params: &EncoderParams,
    side: Side,
    input: NodeId,
) -> TensorResult<NodeId> {
    let (w_in, w_out, first_transpose) = match side {
        Side::User => (params.user_agg, params.user_agg_out, true),
        Side::Item => (params.item_agg, params.item_agg_out, false),
    };
    let routed = tape.sparse_matmul(adjacency, input, first_transpose)?;
    let w = tape.param(w_in)?;
    let mixed = tape.matmul(routed, w)?;
    let activated = tape.leaky_relu(mixed, LEAKY_SLOPE)?;
    let back = tape.sparse_matmul(adjacency, activated, !first_transpose)?;
    let w_out_node = tape.param(w_out)?;
    tape.matmul(back, w_out_node)
}

/// Full encoder for one side of the graph.
fn encode_side(
    tape: &mut Tape,
    adjacency: &Rc<SparseMatrix>,
    params: &EncoderParams,
    config: &EncoderConfig,
    side: Side,
) -> TensorResult<NodeId> {
    let initial = match side {
        Side::User => tape.param(params.user_embeddings)?,
        Side::Item => tape.param(params.item_embeddings)?,
    };
    let aggregate = two_hop_aggregate(tape, adjacency, params, side)?;
    let first_in = tape.concat_cols(&[aggregate, initial])?;
    let mixed = params.mixers[0].apply(tape, first_in)?;
    let activated = tape.leaky_relu(mixed, LEAKY_SLOPE)?;
    let first = tape.dropout(activated)?;

    let mut outputs = vec![first];
    let mut prev2 = initial;
    let mut prev1 = first;
    for mixer in params.mixers.iter().skip(1) {
        let left = if config.reaggregate_per_layer {
            two_hop_from(tape, adjacency, params, side, prev1)?
        } else {
            prev1
        };
        let cat = tape.concat_cols(&[left, prev2])?;
        let mixed = mixer.apply(tape, cat)?;
        let activated = tape.leaky_relu(mixed, LEAKY_SLOPE)?;
        let out = tape.dropout(activated)?;
        outputs.push(out);
        prev2 = prev1;
        prev1 = out;
    }
    if outputs.len() == 1 {
        Ok(outputs[0])
    } else {
        tape.concat_cols(&outputs)
    }
}

/// Encode both sides against one normalized adjacency.
pub fn encode(
    tape: &mut Tape,
    adjacency: &Rc<SparseMatrix>,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> TensorResult<EncodedNodes> {
    let users = encode_side(tape, adjacency, params, config, Side::User)?;
    let items = encode_side(tape, adjacency, params, config, Side::Item)?;
    Ok(EncodedNodes { users, items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefmatch_tensor::{Mode, ParamStore, StreamRng, Tensor};

    use crate::model::{ModelDims, ModelParams};

    fn toy_model(users: usize, items: usize, d: usize, layers: usize) -> ModelParams {
        ModelParams::init(
            ModelDims {
                embed_dim: d,
                layers,
                heads: 1,
            },
            users,
            items,
            users,
            items,
            false,
            &StreamRng::new(21),
        )
        .unwrap()
    }

    fn set_identity(store: &mut ParamStore, id: prefmatch_tensor::ParamId, d: usize) {
        let mut eye = Tensor::zeros(d, d);
        for i in 0..d {
            eye.set(i, i, 1.0);
        }
        *store.get_mut(id) = eye;
    }

    #[test]
    fn single_edge_identity_weights_returns_own_embedding() {
        // One user, one item, one edge: the two-hop loop goes user -> item ->
        // user, so with identity weights and unit adjacency entries the user
        // aggregate is its own embedding (the activation never sees negatives
        // if the embedding is positive).
        let mut model = toy_model(1, 1, 3, 1);
        let d = 3;
        set_identity(&mut model.store, model.source_encoder.user_agg, d);
        set_identity(&mut model.store, model.source_encoder.user_agg_out, d);
        *model.store.get_mut(model.source_encoder.user_embeddings) =
            Tensor::from_rows(&[vec![0.5, 1.0, 2.0]]).unwrap();
        let adjacency = Rc::new(SparseMatrix::new(1, 1, vec![(0, 0, 1.0)]).unwrap());

        let mut tape = Tape::new(&model.store, Mode::Eval);
        let agg = two_hop_aggregate(&mut tape, &adjacency, &model.source_encoder, Side::User)
            .unwrap();
        assert_eq!(tape.value(agg).data(), &[0.5, 1.0, 2.0]);
    }

    #[test]
    fn two_users_sharing_an_item_sum_their_embeddings() {
        let mut model = toy_model(2, 1, 2, 1);
        set_identity(&mut model.store, model.source_encoder.user_agg, 2);
        set_identity(&mut model.store, model.source_encoder.user_agg_out, 2);
        *model.store.get_mut(model.source_encoder.user_embeddings) =
            Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        let adjacency =
            Rc::new(SparseMatrix::new(2, 1, vec![(0, 0, 1.0), (1, 0, 1.0)]).unwrap());

        let mut tape = Tape::new(&model.store, Mode::Eval);
        let agg = two_hop_aggregate(&mut tape, &adjacency, &model.source_encoder, Side::User)
            .unwrap();
        // Both rows equal u0 + u1, routed through the shared item.
        assert_eq!(tape.value(agg).row(0), &[4.0, 7.0]);
        assert_eq!(tape.value(agg).row(1), &[4.0, 7.0]);
    }

    #[test]
    fn aggregate_matches_dense_triple_product() {
        use rand::Rng;
        let mut rng = StreamRng::new(8).stream("splits");
        let (users, items, d) = (12, 9, 4);
        let model = toy_model(users, items, d, 1);
        let mut entries = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if rng.random::<f64>() < 0.3 {
                    entries.push((u, i, rng.random_range(0.1..1.0)));
                }
            }
        }
        if !entries.iter().any(|&(u, i, _)| u == 0 && i == 0) {
            entries.push((0, 0, 0.7));
        }
        let adjacency = Rc::new(SparseMatrix::new(users, items, entries).unwrap());

        let mut tape = Tape::new(&model.store, Mode::Eval);
        let agg = two_hop_aggregate(&mut tape, &adjacency, &model.source_encoder, Side::User)
            .unwrap();

        // Dense oracle: adj * leaky(adj^T U W) * W'.
        let dense_adj = adjacency.to_dense();
        let u = model.store.get(model.source_encoder.user_embeddings);
        let w = model.store.get(model.source_encoder.user_agg);
        let w_out = model.store.get(model.source_encoder.user_agg_out);
        let inner = dense_adj.transpose().matmul(u).unwrap().matmul(w).unwrap();
        let activated = inner.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        let expected = dense_adj.matmul(&activated).unwrap().matmul(w_out).unwrap();
        for (a, b) in tape.value(agg).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_shape_contract() {
        let model = toy_model(4, 3, 8, 3);
        let adjacency = Rc::new(
            SparseMatrix::new(
                4,
                3,
                vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 0, 1.0), (1, 2, 1.0)],
            )
            .unwrap(),
        );
        let config = EncoderConfig {
            layers: 3,
            reaggregate_per_layer: false,
        };
        let mut tape = Tape::new(&model.store, Mode::Eval);
        let encoded = encode(&mut tape, &adjacency, &model.source_encoder, &config).unwrap();
        assert_eq!(tape.value(encoded.users).shape(), [4, 24]);
        assert_eq!(tape.value(encoded.items).shape(), [3, 24]);
    }

    #[test]
    fn single_layer_encode_is_layer_one_alone() {
        let model = toy_model(3, 2, 4, 1);
        let adjacency = Rc::new(
            SparseMatrix::new(3, 2, vec![(0, 0, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap(),
        );
        let config = EncoderConfig {
            layers: 1,
            reaggregate_per_layer: false,
        };
        let mut tape = Tape::new(&model.store, Mode::Eval);
        let encoded = encode(&mut tape, &adjacency, &model.source_encoder, &config).unwrap();
        assert_eq!(tape.value(encoded.users).shape(), [3, 4]);
    }

    #[test]
    fn two_hop_locality() {
        // u0-i0, u1-i0 share an item; u2-i1 is isolated from them. Perturbing
        // u2's embedding must not move u0's layer-1 output.
        let mut model = toy_model(3, 2, 4, 1);
        let adjacency = Rc::new(
            SparseMatrix::new(3, 2, vec![(0, 0, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap(),
        );
        let config = EncoderConfig {
            layers: 1,
            reaggregate_per_layer: false,
        };
        let row_before = {
            let mut tape = Tape::new(&model.store, Mode::Eval);
            let encoded = encode(&mut tape, &adjacency, &model.source_encoder, &config).unwrap();
            tape.value(encoded.users).row(0).to_vec()
        };
        model
            .store
            .get_mut(model.source_encoder.user_embeddings)
            .data_mut()[2 * 4] += 10.0;
        let row_after = {
            let mut tape = Tape::new(&model.store, Mode::Eval);
            let encoded = encode(&mut tape, &adjacency, &model.source_encoder, &config).unwrap();
            tape.value(encoded.users).row(0).to_vec()
        };
        assert_eq!(row_before, row_after);
    }

    #[test]
    fn relabeling_users_permutes_rows() {
        let model = toy_model(3, 2, 4, 2);
        let adjacency = Rc::new(
            SparseMatrix::new(3, 2, vec![(0, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0), (2, 1, 1.0)])
                .unwrap(),
        );
        let config = EncoderConfig {
            layers: 2,
            reaggregate_per_layer: false,
        };
        let original = {
            let mut tape = Tape::new(&model.store, Mode::Eval);
            let encoded = encode(&mut tape, &adjacency, &model.source_encoder, &config).unwrap();
            tape.value(encoded.users).clone()
        };

        // Swap users 0 and 2 in both the adjacency and the embeddings.
        let mut permuted = model.clone();
        let emb = permuted
            .store
            .get_mut(permuted.source_encoder.user_embeddings);
        for c in 0..4 {
            let a = emb.get(0, c);
            let b = emb.get(2, c);
            emb.set(0, c, b);
            emb.set(2, c, a);
        }
        let swapped_adj = Rc::new(
            SparseMatrix::new(3, 2, vec![(2, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0), (0, 1, 1.0)])
                .unwrap(),
        );
        let mut tape = Tape::new(&permuted.store, Mode::Eval);
        let encoded = encode(&mut tape, &swapped_adj, &permuted.source_encoder, &config).unwrap();
        let swapped = tape.value(encoded.users);
        assert_eq!(swapped.row(0), original.row(2));
        assert_eq!(swapped.row(1), original.row(1));
        assert_eq!(swapped.row(2), original.row(0));
    }
}
