use jova_core::tensor::{
    check_gradients, recurrent_step, Adam, AdamConfig, GradCheckOptions, Graph, GruWeights,
    ParamId, ParamStore, Tensor, TensorError, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn rand_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    store.add(name, Tensor::uniform(shape.to_vec(), 1.0, rng)).unwrap()
}

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn probe(g: &mut Graph<'_, f64>, x: Var) -> Result<Var, TensorError> {
    let n = g.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let shape = g.value(x).shape().to_vec();
    let wv = g.constant(Tensor::from_f64(shape, &w).unwrap());
    let prod = g.mul(x, wv)?;
    Ok(g.sum_all(prod))
}

fn assert_grad_ok(store: &mut ParamStore<f64>, tol: f64, f: impl Fn(&mut Graph<'_, f64>) -> Result<Var, TensorError>) {
    let report = check_gradients(store, f, GradCheckOptions::default()).unwrap();
    assert!(report.entries_checked > 0);
    assert!(report.max_rel_error < tol, "{report:?}");
}

#[test]
fn masked_softmax_uniform_row() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
    let y = g.masked_softmax(x, Some(&[true, true, true]), 1).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn masked_softmax_zeroes_masked_key() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[1, 3], &[5.0, 5.0, 1e3]));
    let y = g.masked_softmax(x, Some(&[true, true, false]), 1).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.0]);
}

#[test]
fn masked_softmax_masked_key_gets_no_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("x", t(&[2, 3], &[0.3, -1.0, 2.0, 0.1, 0.2, 0.3])).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let y = g.masked_softmax(x, Some(&[true, false, true]), 2).unwrap();
    let l = probe(&mut g, y).unwrap();
    let grads = g.backward(l).unwrap();
    let gx = grads.param(p).unwrap().data();
    assert_eq!(gx[1], 0.0);
    assert_eq!(gx[4], 0.0);
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(t(&[2, 4], &[3.0; 8]));
    let y = g.layer_norm(x, 1e-5);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn mse_against_itself_has_zero_gradient() {
    let mut store = ParamStore::new();
    let vals = [0.5, -2.0, 7.25];
    let p = store.add("x", t(&[3], &vals)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let l = g.mse_loss(x, &vals).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.param(p).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_passes_gradient_in_positive_region() {
    let mut store = ParamStore::new();
    let p = store.add("x", t(&[4], &[0.5, 1.0, 2.0, 3.0])).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let r = g.relu(x);
    let up = g.constant(t(&[4], &[0.1, -0.2, 0.3, 4.0]));
    let prod = g.mul(r, up).unwrap();
    let l = g.sum_all(prod);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param(p).unwrap().data(), &[0.1, -0.2, 0.3, 4.0]);
}

#[test]
fn matmul_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", &[5, 4], &mut rng);
    let b = rand_param(&mut store, "b", &[4, 4], &mut rng);
    let c = rand_param(&mut store, "c", &[4, 3], &mut rng);
    assert_grad_ok(&mut store, 1e-6, |g| {
        let (a, b, c) = (g.param(a), g.param(b), g.param(c));
        let ab = g.matmul(a, b)?;
        let abc = g.matmul(ab, c)?;
        probe(g, abc)
    });
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", &[3, 4], &mut rng);
    let y = rand_param(&mut store, "y", &[3, 4], &mut rng);
    let row = rand_param(&mut store, "row", &[4], &mut rng);
    assert_grad_ok(&mut store, 1e-6, |g| {
        let (x, y, row) = (g.param(x), g.param(y), g.param(row));
        let s = g.sigmoid(x);
        let th = g.tanh(y);
        let m = g.mul(s, th)?;
        let a = g.add(m, x)?;
        let ar = g.add_row(a, row)?;
        let mr = g.mul_row(ar, row)?;
        let ss = g.scale_shift(mr, -1.5, 0.25);
        probe(g, ss)
    });
}

#[test]
fn normalisation_and_softmax_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", &[4, 5], &mut rng);
    let mask = [true, true, false, true, true, false, true, true, true, true];
    assert_grad_ok(&mut store, 1e-6, |g| {
        let x = g.param(x);
        let ln = g.layer_norm(x, 1e-5);
        let sm = g.masked_softmax(ln, Some(&mask), 2)?;
        probe(g, sm)
    });
}

#[test]
fn batch_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", &[2, 3, 4], &mut rng);
    let b = rand_param(&mut store, "b", &[2, 3, 4], &mut rng);
    let c = rand_param(&mut store, "c", &[2, 4, 2], &mut rng);
    assert_grad_ok(&mut store, 1e-6, |g| {
        let (a, b, c) = (g.param(a), g.param(b), g.param(c));
        let s = g.batch_matmul(a, b, true)?;
        let sc = g.batch_matmul(s, a, false)?;
        let out = g.batch_matmul(sc, c, false)?;
        probe(g, out)
    });
}

#[test]
fn structural_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let table = rand_param(&mut store, "table", &[6, 3], &mut rng);
    let x = rand_param(&mut store, "x", &[4, 3], &mut rng);
    let y = rand_param(&mut store, "y", &[4, 2], &mut rng);
    let adjacency = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
    assert_grad_ok(&mut store, 1e-6, |g| {
        let (table, x, y) = (g.param(table), g.param(x), g.param(y));
        let e = g.embedding(table, &[5, 0, 5, 2])?;
        let ns = g.neighbor_sum(x, &adjacency)?;
        let s = g.add(e, ns)?;
        let c = g.concat(&[s, y], 1)?;
        let m = g.mask_rows(c, &[true, false, true, true])?;
        let gathered = g.gather_rows(&[s, e], &[Some((0, 2)), None, Some((1, 1)), Some((0, 0))])?;
        let gathered = g.concat(&[gathered, gathered], 1)?;
        let stacked = g.concat(&[m, m], 0)?;
        let pooled = g.segment_sum(stacked, &[Some(0), None, Some(1), Some(0), Some(1), Some(1), None, Some(0)], 2)?;
        let r = g.reshape(pooled, vec![1, 10])?;
        let l1 = probe(g, r)?;
        let l2 = probe(g, gathered)?;
        let sum = g.add(l1, l2)?;
        let target = [0.3];
        let sr = g.reshape(sum, vec![1])?;
        g.mse_loss(sr, &target)
    });
}

#[test]
fn recurrent_step_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut store = ParamStore::new();
    let names = ["w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n"];
    let ids: Vec<ParamId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let shape: &[usize] = match i {
                0..=2 => &[3, 4],
                3..=5 => &[4, 4],
                _ => &[4],
            };
            rand_param(&mut store, n, shape, &mut rng)
        })
        .collect();
    let x1 = rand_param(&mut store, "x1", &[2, 3], &mut rng);
    let x2 = rand_param(&mut store, "x2", &[2, 3], &mut rng);
    assert_grad_ok(&mut store, 1e-6, |g| {
        let v: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let w = GruWeights {
            w_z: v[0],
            w_r: v[1],
            w_n: v[2],
            u_z: v[3],
            u_r: v[4],
            u_n: v[5],
            b_z: v[6],
            b_r: v[7],
            b_n: v[8],
        };
        let h0 = g.constant(Tensor::zeros(vec![2, 4]));
        let x1 = g.param(x1);
        let x2 = g.param(x2);
        let h1 = recurrent_step(g, x1, h0, &w)?;
        let h2 = recurrent_step(g, x2, h1, &w)?;
        probe(g, h2)
    });
}

#[test]
fn shape_mismatches_are_errors() {
    let mut g = Graph::<f64>::detached();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    assert!(g.masked_softmax(a, Some(&[true]), 1).is_err());
    assert!(g.mse_loss(a, &[0.0]).is_err());
}

#[test]
fn non_finite_loss_is_reported() {
    let mut store = ParamStore::new();
    let p = store.add("x", t(&[1], &[f64::MAX])).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let l = g.mse_loss(x, &[-f64::MAX]).unwrap();
    assert!(matches!(g.backward(l), Err(TensorError::NumericalOverflow(_))));
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", Tensor::uniform(vec![4, 2], 0.5, &mut rng)).unwrap();
        let target: Vec<f32> = vec![1.0, -1.0, 0.5, 0.0, 2.0, 1.0, -0.5, 0.25];
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &store);
        for _ in 0..100 {
            let mut g = Graph::new(&store);
            let x = g.param(w);
            let l = g.mse_loss(x, &target).unwrap();
            let grads = g.backward(l).unwrap();
            grads.write_to(&mut store);
            opt.step(&mut store);
        }
        store.get(w).value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn tape_replay_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f32>::new();
    let a = store.add("a", Tensor::uniform(vec![3, 5], 1.0, &mut rng)).unwrap();
    let b = store.add("b", Tensor::uniform(vec![5, 5], 1.0, &mut rng)).unwrap();
    let run = || {
        let mut g = Graph::new(&store);
        let (a, b) = (g.param(a), g.param(b));
        let y = g.matmul(a, b).unwrap();
        let y = g.layer_norm(y, 1e-5);
        let y = g.masked_softmax(y, None, 1).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}
