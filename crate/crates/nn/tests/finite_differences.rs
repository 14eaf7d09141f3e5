use prosody_nn::graph::Conv2dGeometry;
use prosody_nn::gradcheck::check_gradients;
use prosody_nn::{Graph, Init, NodeId, ParamId, ParameterStore, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn store_with(shapes: &[(&str, &[usize])]) -> (ParameterStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParameterStore::new();
    let ids = shapes
        .iter()
        .map(|(name, shape)| store.add(name, shape, Init::Normal(1.0), &mut rng).unwrap())
        .collect();
    (store, ids)
}

/// Reduces an arbitrary node to a scalar with a fixed non-uniform weighting so
/// every output element matters differently.
fn weighted_sum(g: &mut Graph<'_, f64>, x: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let w = g.input(prosody_nn::Tensor::from_vec(&shape, w)?);
    let prod = g.mul(x, w)?;
    Ok(g.sum_all(prod))
}

fn assert_ok(store: &ParameterStore<f64>, build: impl Fn(&mut Graph<'_, f64>) -> Result<NodeId>) {
    let report = check_gradients(store, EPS, build).unwrap();
    assert!(report.checked > 0);
    assert!(
        report.max_rel_error < TOL,
        "relative error {} at {}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn matmul_and_linear() {
    let (store, ids) = store_with(&[("a", &[3, 4]), ("b", &[4, 2]), ("bias", &[2])]);
    assert_ok(&store, |g| {
        let (a, b, bias) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let m = g.matmul(a, b)?;
        let l = g.linear(a, b, Some(bias))?;
        let s = g.add(m, l)?;
        weighted_sum(g, s)
    });
}

#[test]
fn elementwise_ops() {
    let (store, ids) = store_with(&[("a", &[2, 5]), ("b", &[2, 5]), ("r", &[5])]);
    assert_ok(&store, |g| {
        let (a, b, r) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let m = g.mul(a, b)?;
        let s = g.sigmoid(m);
        let w = g.swish(a);
        let sum = g.add(s, w)?;
        let shifted = g.add_row(sum, r)?;
        let scaled = g.scale(shifted, -1.7);
        weighted_sum(g, scaled)
    });
}

#[test]
fn relu_away_from_the_kink() {
    let (mut store, ids) = store_with(&[("a", &[3, 3])]);
    for x in store.get_mut(ids[0]).value.data_mut() {
        if x.abs() < 0.1 {
            *x = 0.5;
        }
    }
    assert_ok(&store, |g| {
        let a = g.param(ids[0]);
        let r = g.relu(a);
        weighted_sum(g, r)
    });
}

#[test]
fn layer_norm_and_softmax() {
    let (store, ids) = store_with(&[("x", &[3, 6]), ("g", &[6]), ("b", &[6])]);
    assert_ok(&store, |g| {
        let (x, gamma, beta) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let n = g.layer_norm(x, gamma, beta, 1e-5)?;
        let s = g.softmax(n);
        weighted_sum(g, s)
    });
}

#[test]
fn multi_head_attention_with_mask() {
    let (store, ids) = store_with(&[("q", &[3, 4]), ("k", &[5, 4]), ("v", &[5, 4])]);
    let mask = [true, false, true, true, false];
    assert_ok(&store, |g| {
        let (q, k, v) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let o = g.attention(q, k, v, 2, Some(&mask))?;
        weighted_sum(g, o)
    });
}

#[test]
fn self_attention_sharing_one_input() {
    let (store, ids) = store_with(&[("x", &[4, 4])]);
    assert_ok(&store, |g| {
        let x = g.param(ids[0]);
        let o = g.attention(x, x, x, 1, None)?;
        weighted_sum(g, o)
    });
}

#[test]
fn glu_slices_and_depthwise_conv() {
    let (store, ids) = store_with(&[("x", &[6, 4]), ("w", &[3, 2]), ("b", &[2])]);
    assert_ok(&store, |g| {
        let (x, w, b) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let left = g.slice_cols(x, 0, 2)?;
        let right = g.slice_cols(x, 2, 2)?;
        let gate = g.sigmoid(right);
        let glu = g.mul(left, gate)?;
        let c = g.depthwise_conv1d(glu, w, b)?;
        weighted_sum(g, c)
    });
}

#[test]
fn unfold_subsampling() {
    let (store, ids) = store_with(&[("x", &[7, 3])]);
    assert_ok(&store, |g| {
        let x = g.param(ids[0]);
        let u = g.unfold1d(x, 3, 2, 1)?;
        assert_eq!(g.shape(u), &[4, 9]);
        weighted_sum(g, u)
    });
}

#[test]
fn conv2d_through_im2col() {
    let geom = Conv2dGeometry {
        h: 5,
        w: 4,
        c: 2,
        kh: 3,
        kw: 3,
        sh: 2,
        sw: 1,
        ph: 1,
        pw: 1,
    };
    let (store, ids) = store_with(&[("x", &[5, 8]), ("k", &[18, 3]), ("b", &[3])]);
    assert_ok(&store, |g| {
        let (x, k, b) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let cols = g.im2col(x, geom)?;
        let y = g.linear(cols, k, Some(b))?;
        let y = g.reshape(y, &[geom.out_h(), geom.out_w() * 3])?;
        weighted_sum(g, y)
    });
}

#[test]
fn embedding_and_row_mask() {
    let (store, ids) = store_with(&[("table", &[5, 3])]);
    assert_ok(&store, |g| {
        let t = g.param(ids[0]);
        let e = g.embedding(t, &[4, 0, 4, 2])?;
        let m = g.mask_rows(e, 3);
        weighted_sum(g, m)
    });
}

#[test]
fn cross_entropy_from_logits() {
    let (store, ids) = store_with(&[("logits", &[4, 5])]);
    assert_ok(&store, |g| {
        let l = g.param(ids[0]);
        g.cross_entropy(l, &[Some(1), None, Some(4), Some(0)])
    });
}
