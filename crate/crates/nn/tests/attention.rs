use prosody_nn::{Graph, ParameterStore, Tensor};
use proptest::prelude::*;

/// Scalar-loop single-head attention with optional key mask.
fn oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let max = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores
                .iter()
                .zip(mask)
                .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = w.iter().sum();
            (0..v[0].len())
                .map(|c| w.iter().zip(v).map(|(wj, vj)| wj * vj[c]).sum::<f64>() / z)
                .collect()
        })
        .collect()
}

fn flat(rows: &[Vec<f64>]) -> Tensor<f64> {
    let cols = rows[0].len();
    Tensor::matrix(rows.len(), cols, &rows.concat()).unwrap()
}

#[test]
fn matches_scalar_oracle() {
    let q = vec![vec![0.2, -1.0, 0.5], vec![1.5, 0.3, -0.7]];
    let k = vec![vec![0.1, 0.4, -0.2], vec![-1.2, 0.9, 0.3], vec![0.6, 0.0, 1.1]];
    let v = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![0.3, -0.3, 2.2]];
    let store = ParameterStore::<f64>::new();
    let mut g = Graph::new(&store);
    let (qn, kn, vn) = (g.input(flat(&q)), g.input(flat(&k)), g.input(flat(&v)));
    let out = g.attention(qn, kn, vn, 1, None).unwrap();
    let want = oracle(&q, &k, &v, &[true; 3]);
    for (got, want) in g.value(out).data().iter().zip(want.concat()) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn equal_values_pass_through() {
    let store = ParameterStore::<f64>::new();
    let mut g = Graph::new(&store);
    let q = g.input(Tensor::matrix(2, 2, &[3.0, -1.0, 0.0, 8.0]).unwrap());
    let k = g.input(Tensor::matrix(3, 2, &[1.0, 2.0, -4.0, 0.1, 0.0, 0.0]).unwrap());
    let v = g.input(Tensor::matrix(3, 2, &[0.25, -2.0, 0.25, -2.0, 0.25, -2.0]).unwrap());
    let out = g.attention(q, k, v, 2, None).unwrap();
    for row in g.value(out).data().chunks(2) {
        assert!((row[0] - 0.25).abs() < 1e-15 && (row[1] + 2.0).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn padded_keys_do_not_change_output(
        seed in 0u64..1000,
        n in 1usize..4,
        m in 1usize..5,
        pad in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let mut rand_rows = |r: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
        };
        let q = rand_rows(n);
        let k = rand_rows(m + pad);
        let v = rand_rows(m + pad);
        let store = ParameterStore::<f64>::new();

        let mut g = Graph::new(&store);
        let (qn, kn, vn) = (g.input(flat(&q)), g.input(flat(&k[..m])), g.input(flat(&v[..m])));
        let short = g.attention(qn, kn, vn, 2, None).unwrap();

        let mask: Vec<bool> = (0..m + pad).map(|j| j < m).collect();
        let (kp, vp) = (g.input(flat(&k)), g.input(flat(&v)));
        let padded = g.attention(qn, kp, vp, 2, Some(&mask)).unwrap();
        for (a, b) in g.value(short).data().iter().zip(g.value(padded).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let single = oracle(&q, &k, &v, &mask);
        let mut g1 = Graph::new(&store);
        let (qn, kp, vp) = (g1.input(flat(&q)), g1.input(flat(&k)), g1.input(flat(&v)));
        let one_head = g1.attention(qn, kp, vp, 1, Some(&mask)).unwrap();
        for (a, b) in g1.value(one_head).data().iter().zip(single.concat()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let store = ParameterStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(3, 4, &values).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
