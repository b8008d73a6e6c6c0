use ibner::autodiff::ParamId;
use ibner::encoder::{
    reparameterize, span_embed, span_embeddings, BiLstmContextualizer, Component, Contextualizer,
    GaussianPosterior, PosteriorHeadSet,
};
use ibner::nn::instantiate;
use ibner::{Error, Graph, ParamStore, SharingMode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const VOCAB: usize = 12;

fn contextualizer(dim: usize) -> (BiLstmContextualizer, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    instantiate(
        &mut store,
        &BiLstmContextualizer::specs(VOCAB, 8, 6, dim, 0.3),
        &mut rng,
    )
    .unwrap();
    (
        BiLstmContextualizer::bind(&store, VOCAB, 8, 6, dim).unwrap(),
        store,
    )
}

#[test]
fn one_vector_per_token() {
    let (ctx, store) = contextualizer(32);
    let mut g = Graph::new();
    let emb = ctx
        .contextualize(&mut g, &store, &[vec![4, 5, 6, 7, 8, 9, 10]])
        .unwrap();
    assert_eq!(g.shape(emb.vectors), &[7, 32]);
    assert_eq!(emb.lens, vec![7]);
}

#[test]
fn single_token_sentence_is_finite() {
    let (ctx, store) = contextualizer(32);
    let mut g = Graph::new();
    let emb = ctx.contextualize(&mut g, &store, &[vec![5]]).unwrap();
    assert_eq!(g.shape(emb.vectors), &[1, 32]);
    assert!(g.value(emb.vectors).is_finite());
}

#[test]
fn vectors_depend_on_neighbours() {
    let (ctx, store) = contextualizer(16);
    let mut g = Graph::new();
    // Token 7 at position 1 in both; only its right neighbour differs.
    let emb = ctx
        .contextualize(&mut g, &store, &[vec![4, 7, 5], vec![4, 7, 6]])
        .unwrap();
    let v = g.value(emb.vectors);
    assert_ne!(v.row(emb.row(0, 1)), v.row(emb.row(1, 1)));
    // The left context is identical, so the first tokens agree in the forward
    // direction only; the full vectors still differ through the backward pass.
    assert_ne!(v.row(emb.row(0, 0)), v.row(emb.row(1, 0)));
}

#[test]
fn batching_matches_single_sentences() {
    let (ctx, store) = contextualizer(16);
    let sents = [vec![4, 7, 5, 9, 10], vec![6, 8]];
    let mut g = Graph::new();
    let batched = ctx.contextualize(&mut g, &store, &sents).unwrap();
    let bv = g.value(batched.vectors).clone();
    for (b, s) in sents.iter().enumerate() {
        let mut g1 = Graph::new();
        let single = ctx
            .contextualize(&mut g1, &store, std::slice::from_ref(s))
            .unwrap();
        let sv = g1.value(single.vectors);
        for t in 0..s.len() {
            for (x, y) in bv.row(batched.row(b, t)).iter().zip(sv.row(t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn unknown_ids_and_empty_sentences_are_rejected() {
    let (ctx, store) = contextualizer(8);
    let mut g = Graph::new();
    assert!(
        matches!(ctx.contextualize(&mut g, &store, &[vec![4, VOCAB]]), Err(Error::UnknownToken(id)) if id == VOCAB)
    );
    assert!(ctx.contextualize(&mut g, &store, &[vec![]]).is_err());
}

fn embeddings(g: &mut Graph, rows: &[&[f64]]) -> ibner::encoder::ContextualEmbeddings {
    let d = rows[0].len();
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let vectors = g.constant(Tensor::matrix(rows.len(), d, data).unwrap());
    ibner::encoder::ContextualEmbeddings {
        vectors,
        offsets: vec![0],
        lens: vec![rows.len()],
        dim: d,
    }
}

#[test]
fn span_embedding_examples() {
    let mut g = Graph::new();
    let emb = embeddings(&mut g, &[&[0.0, 0.0], &[1.0, 1.0], &[3.0, 3.0]]);
    let s = span_embed(&mut g, &emb, 0, 1, 2).unwrap();
    assert_eq!(g.value(s).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    let s = span_embed(&mut g, &emb, 0, 2, 2).unwrap();
    assert_eq!(g.value(s).data(), &[3.0, 3.0, 3.0, 3.0, 3.0, 3.0]);
    assert!(matches!(
        span_embed(&mut g, &emb, 0, 1, 3),
        Err(Error::Index { .. })
    ));
    assert!(span_embed(&mut g, &emb, 0, 2, 1).is_err());
}

#[test]
fn span_embedding_has_three_d() {
    let (ctx, store) = contextualizer(32);
    let mut g = Graph::new();
    let emb = ctx.contextualize(&mut g, &store, &[vec![4, 5, 6]]).unwrap();
    let s = span_embed(&mut g, &emb, 0, 0, 2).unwrap();
    assert_eq!(g.shape(s), &[96]);
}

#[test]
fn span_embedding_is_linear() {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| vec![i as f64 * 0.7 - 1.0, (i * i) as f64 * 0.3])
        .collect();
    let spans = [(0, 0), (1, 3), (2, 4)];
    let c = 2.5;
    let mut g = Graph::new();
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let v = g.constant(Tensor::matrix(5, 2, data.clone()).unwrap());
    let vs = g.constant(Tensor::matrix(5, 2, data.iter().map(|x| x * c).collect()).unwrap());
    let a = span_embeddings(&mut g, v, &spans).unwrap();
    let b = span_embeddings(&mut g, vs, &spans).unwrap();
    for (x, y) in g.value(a).data().iter().zip(g.value(b).data()) {
        assert!((x * c - y).abs() < 1e-12);
    }
}

fn heads(sharing: SharingMode) -> (PosteriorHeadSet, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    instantiate(
        &mut store,
        &PosteriorHeadSet::specs(sharing, true, 6, 3, 0.0),
        &mut rng,
    )
    .unwrap();
    // Give the log-variance biases distinct values so independent heads differ.
    for (k, name) in ["heads.logvar_sr.b", "heads.logvar_sg.b", "heads.logvar.b"]
        .iter()
        .enumerate()
    {
        if let Some(id) = store.id(name) {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.1 * (k as f64 + 1.0));
        }
    }
    (
        PosteriorHeadSet::bind(&store, sharing, true, 6, 3).unwrap(),
        store,
    )
}

fn both_posteriors(
    h: &PosteriorHeadSet,
    store: &ParamStore,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let s = g.constant(Tensor::matrix(2, 6, (0..12).map(|i| (i as f64).sin()).collect()).unwrap());
    let sr = h
        .posterior(&mut g, store, s, Component::SpanReconstruction)
        .unwrap();
    let sg = h
        .posterior(&mut g, store, s, Component::SynonymGeneration)
        .unwrap();
    (
        g.value(sr.mu).data().to_vec(),
        g.value(sr.logvar).data().to_vec(),
        g.value(sg.mu).data().to_vec(),
        g.value(sg.logvar).data().to_vec(),
    )
}

#[test]
fn sharing_modes() {
    let (h, store) = heads(SharingMode::SharedMu);
    let (mu1, lv1, mu2, lv2) = both_posteriors(&h, &store);
    assert_eq!(mu1, mu2);
    assert_ne!(lv1, lv2);

    let (h, store) = heads(SharingMode::SharedMuSigma);
    let (mu1, lv1, mu2, lv2) = both_posteriors(&h, &store);
    assert_eq!((mu1, lv1), (mu2, lv2));

    let (h, store) = heads(SharingMode::Independent);
    let (mu1, lv1, mu2, lv2) = both_posteriors(&h, &store);
    assert_ne!(mu1, mu2);
    assert_ne!(lv1, lv2);
    let sr: Vec<ParamId> = h.param_ids(Component::SpanReconstruction);
    let sg: Vec<ParamId> = h.param_ids(Component::SynonymGeneration);
    assert!(sr.iter().all(|p| !sg.contains(p)));
}

#[test]
fn zero_heads_give_standard_normal() {
    let (h, mut store) = heads(SharingMode::SharedMu);
    for id in store.ids().collect::<Vec<_>>() {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
    let (mu, lv, _, _) = both_posteriors(&h, &store);
    assert!(mu.iter().chain(&lv).all(|&x| x == 0.0));
}

#[test]
fn shared_mu_receives_gradient_from_synonym_path() {
    let (h, store) = heads(SharingMode::SharedMu);
    let mut g = Graph::new();
    let s = g.constant(Tensor::matrix(1, 6, vec![0.3; 6]).unwrap());
    let q = h
        .posterior(&mut g, &store, s, Component::SynonymGeneration)
        .unwrap();
    let loss = g.sum(q.mu);
    let grads = g.backward(loss).unwrap();
    let shared = h.mu_sr.w;
    assert_eq!(shared, h.mu_sg.w);
    assert!(grads.get(shared).unwrap().data().iter().any(|&x| x != 0.0));
}

fn posterior(g: &mut Graph, mu: &[f64], lv: &[f64]) -> GaussianPosterior {
    let mu = g.constant(Tensor::vector(mu.to_vec()));
    let logvar = g.constant(Tensor::vector(lv.to_vec()));
    GaussianPosterior { mu, logvar }
}

#[test]
fn reparameterize_examples() {
    let mut g = Graph::new();
    let q = posterior(&mut g, &[0.4, -1.2], &[0.3, -0.5]);
    let z = reparameterize(&mut g, q, Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(g.value(z).data(), g.value(q.mu).data());

    let q = posterior(&mut g, &[0.0, 0.0], &[0.0, 0.0]);
    let z = reparameterize(&mut g, q, Tensor::vector(vec![1.0, -1.0])).unwrap();
    assert_eq!(g.value(z).data(), &[1.0, -1.0]);

    assert!(matches!(
        reparameterize(&mut g, q, Tensor::vector(vec![1.0])),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn reparameterized_mean_matches_mu() {
    let mu = [0.5, -0.25, 1.5];
    let lv = [0.0, 0.4, -1.0];
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut g = Graph::new();
    let q = posterior(&mut g, &mu, &lv);
    let mut sums = [0.0; 3];
    for _ in 0..n {
        let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut g2 = g.clone();
        let z = reparameterize(&mut g2, q, Tensor::vector(eps)).unwrap();
        for (s, v) in sums.iter_mut().zip(g2.value(z).data()) {
            *s += v;
        }
    }
    for (s, m) in sums.iter().zip(mu) {
        assert!((s / n as f64 - m).abs() < 0.02);
    }
}

#[test]
fn antithetic_noise_averages_to_mu() {
    let mu = [0.7, -3.0, 0.125];
    let lv = [0.2, 1.0, -2.0];
    let eps = [0.9, -1.3, 2.2];
    let mut g = Graph::new();
    let q = posterior(&mut g, &mu, &lv);
    let a = reparameterize(&mut g, q, Tensor::vector(eps.to_vec())).unwrap();
    let b = reparameterize(&mut g, q, Tensor::vector(eps.iter().map(|e| -e).collect())).unwrap();
    for ((x, y), m) in g.value(a).data().iter().zip(g.value(b).data()).zip(mu) {
        assert!(((x + y) / 2.0 - m).abs() <= 4.0 * f64::EPSILON * m.abs().max(1.0));
    }
}
