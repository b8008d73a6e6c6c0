use ibner::nn::instantiate;
use ibner::optim::{Adam, AdamConfig};
use ibner::vib::{predict, threshold_rows, vib_loss, VibParams};
use ibner::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SPAN: usize = 12;
const HIDDEN: usize = 7;
const LATENT: usize = 4;

fn vib(types: usize, seed: u64) -> (VibParams, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    instantiate(
        &mut store,
        &VibParams::specs(SPAN, HIDDEN, LATENT, types),
        &mut rng,
    )
    .unwrap();
    (
        VibParams::bind(&store, SPAN, HIDDEN, LATENT, types).unwrap(),
        store,
    )
}

fn spans(rows: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(
        rows,
        SPAN,
        (0..rows * SPAN)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn zero(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
}

#[test]
fn zero_parameters_give_standard_normal() {
    let (v, mut store) = vib(2, 1);
    zero(&mut store);
    let mut g = Graph::new();
    let s = g.constant(spans(3, 2));
    let q = v.compress(&mut g, &store, s).unwrap();
    assert_eq!(g.shape(q.mu), &[3, LATENT]);
    assert!(g
        .value(q.mu)
        .data()
        .iter()
        .chain(g.value(q.logvar).data())
        .all(|&x| x == 0.0));
}

#[test]
fn bottleneck_shape_and_size_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    instantiate(&mut store, &VibParams::specs(96, 40, 32, 1), &mut rng).unwrap();
    let v = VibParams::bind(&store, 96, 40, 32, 1).unwrap();
    assert_eq!(v.latent(), 32);

    let mut store = ParamStore::new();
    instantiate(&mut store, &VibParams::specs(6, 4, 8, 1), &mut rng).unwrap();
    assert!(VibParams::bind(&store, 6, 4, 8, 1).is_err());
}

#[test]
fn identical_spans_identical_posteriors() {
    let (v, store) = vib(2, 3);
    let row = spans(1, 5);
    let both = Tensor::matrix(2, SPAN, [row.data(), row.data()].concat()).unwrap();
    let mut g = Graph::new();
    let s = g.constant(both);
    let q = v.compress(&mut g, &store, s).unwrap();
    let mu = g.value(q.mu);
    assert_eq!(mu.row(0), mu.row(1));
    let lv = g.value(q.logvar);
    assert_eq!(lv.row(0), lv.row(1));
}

fn loss_at(
    v: &VibParams,
    store: &ParamStore,
    beta: f64,
    types: usize,
) -> ibner::vib::VibLossValues {
    let mut g = Graph::new();
    let s = g.constant(spans(5, 9));
    let labels: Vec<f64> = (0..5 * types).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Tensor::matrix(
        5,
        LATENT,
        (0..5 * LATENT)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    vib_loss(&mut g, store, v, s, &labels, beta, noise)
        .unwrap()
        .values(&g)
}

#[test]
fn beta_zero_is_prediction_only() {
    let (v, store) = vib(3, 6);
    let l = loss_at(&v, &store, 0.0, 3);
    assert_eq!(l.total, l.prediction);
    assert!(l.compression > 0.0);
}

#[test]
fn untrained_classifier_costs_ln2_per_type() {
    for types in [1, 4] {
        let (v, mut store) = vib(types, 7);
        for id in v.classifier.params() {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        let l = loss_at(&v, &store, 0.0, types);
        assert!((l.prediction - types as f64 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn total_is_monotone_in_beta() {
    let (v, store) = vib(2, 8);
    let totals: Vec<f64> = [0.0, 1e-4, 0.1, 1.0, 3.0]
        .iter()
        .map(|&b| loss_at(&v, &store, b, 2).total)
        .collect();
    assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
}

#[test]
fn threshold_examples() {
    let logits = Tensor::matrix(1, 2, vec![9f64.ln(), (0.2f64 / 0.8).ln()]).unwrap();
    let p = threshold_rows(&logits, 0.5);
    assert_eq!(p[0].types, vec![0]);
    assert!((p[0].probabilities[0] - 0.9).abs() < 1e-12);
    let logits = Tensor::matrix(1, 2, vec![(0.3f64 / 0.7).ln(), (0.4f64 / 0.6).ln()]).unwrap();
    assert!(threshold_rows(&logits, 0.5)[0].types.is_empty());
    let logits = Tensor::matrix(1, 2, vec![(0.6f64 / 0.4).ln(), (0.7f64 / 0.3).ln()]).unwrap();
    assert_eq!(threshold_rows(&logits, 0.5)[0].types, vec![0, 1]);
}

#[test]
fn prediction_is_deterministic() {
    let (v, store) = vib(3, 10);
    let run = || {
        let mut g = Graph::new();
        let s = g.constant(spans(4, 11));
        predict(&mut g, &store, &v, s, 0.5).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn hidden_unit_permutation_is_invariant() {
    let (v, store) = vib(2, 12);
    let perm: Vec<usize> = (0..HIDDEN).rev().collect();
    let mut permuted = store.clone();
    let hw = store.get(v.hidden.w).clone();
    let hb = store.get(v.hidden.b).clone();
    for (new, &old) in perm.iter().enumerate() {
        permuted.get_mut(v.hidden.w).data_mut()[new * SPAN..(new + 1) * SPAN]
            .copy_from_slice(hw.row(old));
        permuted.get_mut(v.hidden.b).data_mut()[new] = hb.data()[old];
    }
    for head in [v.mu.w, v.logvar.w] {
        let w = store.get(head).clone();
        for r in 0..LATENT {
            for (new, &old) in perm.iter().enumerate() {
                permuted.get_mut(head).data_mut()[r * HIDDEN + new] = w.row(r)[old];
            }
        }
    }
    let a = loss_at(&v, &store, 0.5, 2);
    let b = loss_at(&v, &permuted, 0.5, 2);
    assert!((a.total - b.total).abs() < 1e-12);
}

#[test]
fn separates_two_clusters() {
    let (v, mut store) = vib(1, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 40;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let centre = if i % 2 == 0 { 1.0 } else { -1.0 };
        let d = Normal::new(centre, 0.3).unwrap();
        data.extend((0..SPAN).map(|_| d.sample(&mut rng)));
        labels.push((i % 2 == 0) as u8 as f64);
    }
    let x = Tensor::matrix(n, SPAN, data).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let mut last = f64::INFINITY;
    for _ in 0..2000 {
        let mut g = Graph::new();
        let s = g.constant(x.clone());
        let noise = Tensor::matrix(
            n,
            LATENT,
            (0..n * LATENT)
                .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                .collect(),
        )
        .unwrap();
        let l = vib_loss(&mut g, &store, &v, s, &labels, 1e-4, noise).unwrap();
        last = l.values(&g).prediction;
        let grads = g.backward(l.total).unwrap();
        adam.step(&mut store, &grads, |_| 1e-2);
    }
    assert!(last < 0.05, "prediction loss {last}");
    let mut g = Graph::new();
    let s = g.constant(x);
    let pred = predict(&mut g, &store, &v, s, 0.5).unwrap();
    for (p, y) in pred.iter().zip(&labels) {
        assert_eq!(p.types.is_empty(), *y == 0.0);
    }
}
