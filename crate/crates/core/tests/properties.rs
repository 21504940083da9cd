//! Cross-module invariants checked on randomly generated datasets.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagweave::classifier::{self, Classifier, OutputMatrix, TrainingConfig};
use tagweave::dataset::{artist_split, global_popularity, AnnotationSet, TagSystem, TrackRef};
use tagweave::embeddings::{embed_columns, embed_dist, embed_mean, embed_weights, similarity_matrix};
use tagweave::evaluation::{eval_taxonomy, EvalSettings, RankedQuery};
use tagweave::features::{mel_filterbank, FeatureMatrix};
use tagweave::sampling::{balance, duplicate_tags, sample_monolabel};
use tagweave::synthgen::{generate, GeneratorConfig};

const TAGS: [&str; 5] = ["rock", "punk", "jazz", "bop", "pop"];

/// Album-consistent random annotations: artists own albums, albums carry a
/// non-empty tag set shared by their tracks.
fn random_annotations(seed: u64, max_artists: usize) -> AnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_artists = rng.random_range(3..=max_artists);
    let mut tracks = Vec::new();
    let mut rows = Vec::new();
    for a in 0..n_artists {
        for b in 0..rng.random_range(1..=3) {
            let mut tags: Vec<usize> = (0..TAGS.len()).filter(|_| rng.random_bool(0.35)).collect();
            if tags.is_empty() {
                tags.push(rng.random_range(0..TAGS.len()));
            }
            for t in 0..rng.random_range(1..=4) {
                tracks.push(TrackRef::new(format!("t{a}-{b}-{t}"), format!("al{a}-{b}"), format!("ar{a}")));
                rows.push(tags.clone());
            }
        }
    }
    let system = TagSystem::new("random", TAGS.iter().map(|t| t.to_string()).collect()).unwrap();
    AnnotationSet::new(system, tracks, rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn split_partitions_and_closes_over_artists(data_seed in any::<u64>(), seed in any::<u64>()) {
        let ann = random_annotations(data_seed, 30);
        let Ok(split) = artist_split(&ann, [0.7, 0.1, 0.2], seed) else {
            // Too few artists to fill three partitions.
            return Ok(());
        };
        let mut all: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ann.len()).collect::<Vec<_>>());
        let labels = split.labels();
        let mut part: HashMap<&str, _> = HashMap::new();
        for (k, t) in ann.tracks().iter().enumerate() {
            let prev = part.insert(t.artist_id.as_str(), labels[k]);
            prop_assert!(prev.is_none() || prev == Some(labels[k]));
        }
        prop_assert_eq!(artist_split(&ann, [0.7, 0.1, 0.2], seed).unwrap(), split);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn monolabel_is_album_coherent_and_balanced(data_seed in any::<u64>(), seed in any::<u64>(), cap in 1usize..40) {
        let ann = random_annotations(data_seed, 12);
        let drawn = sample_monolabel(&ann, &global_popularity(&ann), seed).unwrap();
        prop_assert_eq!(drawn.entries.len(), ann.len());
        let mut album_tag: HashMap<&str, usize> = HashMap::new();
        for e in &drawn.entries {
            prop_assert!(ann.has_tag(e.track_index, e.tag));
            let prev = album_tag.insert(e.track.album_id.as_str(), e.tag);
            prop_assert!(prev.is_none() || prev == Some(e.tag));
        }
        let balanced = balance(&drawn, cap, seed).unwrap();
        let counts = balanced.counts();
        prop_assert_eq!(counts.len(), TAGS.len());
        for (t, &n) in counts.iter().enumerate() {
            let expected = if balanced.dropped.contains(&t) { 0 } else { cap };
            prop_assert_eq!(n, expected);
        }
        let keys: BTreeSet<_> = balanced.entries.iter().map(|e| (e.track.track_id.clone(), e.track.excerpt_index)).collect();
        prop_assert_eq!(keys.len(), balanced.entries.len());
    }

    #[test]
    fn duplicated_groups_never_share_tracks(data_seed in any::<u64>(), seed in any::<u64>()) {
        let ann = random_annotations(data_seed, 16);
        let (plan, dup) = duplicate_tags(&ann, seed).unwrap();
        let m = dup.dense().mapv(f64::from);
        let sys = dup.tag_system();
        for (a1, _) in &plan.pairs {
            for (_, b2) in &plan.pairs {
                let (i, j) = (sys.index_of(a1).unwrap(), sys.index_of(b2).unwrap());
                prop_assert_eq!(m.column(i).dot(&m.column(j)), 0.0);
            }
        }
        let e = embed_dist(&dup);
        let s = similarity_matrix(&e, &e).unwrap();
        for (a1, _) in &plan.pairs {
            for (_, b2) in &plan.pairs {
                prop_assert_eq!(s.get(a1, b2).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn mean_embedding_rows_are_distributions(data_seed in any::<u64>(), seed in any::<u64>()) {
        let ann = random_annotations(data_seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((ann.len(), TAGS.len()), |_| rng.random_range(0.0..1.0f64));
        let p = OutputMatrix::new(&raw / &raw.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1))).unwrap();
        let e = embed_mean(&p, &ann).unwrap();
        for row in e.vectors.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn flat_spectrum_excites_every_filter(
        n_fft in prop::sample::select(vec![256usize, 512, 1024, 2048]),
        n_mels in 1usize..128,
        f_min in 0.0f64..200.0,
    ) {
        if let Ok(fb) = mel_filterbank(n_fft, 22050.0, n_mels, f_min, 11025.0) {
            let response = fb.apply(&vec![1.0; fb.n_bins()]).unwrap();
            prop_assert!(response.iter().all(|&r| r > 0.0));
        } else {
            // Only over-resolved banks are rejected.
            prop_assert!(n_fft <= 1024 && n_mels > 40);
        }
    }

    #[test]
    fn increasing_transforms_preserve_rankings(
        grid in prop::collection::vec(prop::collection::vec(0i32..9, 4), 3),
        relevant in prop::collection::vec(0usize..4, 3),
    ) {
        let names = ["g0", "g1", "g2", "g3"];
        let rank_all = |f: &dyn Fn(f64) -> f64| -> Vec<RankedQuery> {
            grid.iter().zip(&relevant).enumerate().map(|(q, (row, &r))| {
                let cands: Vec<(&str, f64)> = row.iter().enumerate().map(|(c, &v)| (names[c], f(v as f64 / 8.0))).collect();
                RankedQuery::rank(format!("q{q}"), &cands, &[names[r]]).unwrap()
            }).collect()
        };
        let base = rank_all(&|x| x);
        for f in [&(|x: f64| 3.0 * x - 2.0) as &dyn Fn(f64) -> f64, &|x: f64| x.exp(), &|x: f64| x.powi(3)] {
            let other = rank_all(f);
            for (a, b) in base.iter().zip(&other) {
                prop_assert_eq!(&a.ranked, &b.ranked);
                prop_assert_eq!(&a.relevant_ranks, &b.relevant_ranks);
            }
        }
        for k in 1..4 {
            let hr = |qs: &[RankedQuery], k| tagweave::evaluation::hit_rate_at_k(qs, k).unwrap();
            prop_assert!(hr(&base, k) <= hr(&base, k + 1));
        }
    }
}

/// Taxonomy evaluation does not depend on the order the queries (rows) are
/// stored in.
#[test]
fn query_order_does_not_change_metrics() {
    let corpus = generate(&GeneratorConfig {
        n_genres: 4,
        styles_per_genre: 3,
        tracks_per_style: 20,
        ..Default::default()
    })
    .unwrap();
    let e = embed_dist(&corpus.annotations);
    let s = similarity_matrix(&e, &e).unwrap();
    let mut order: Vec<&str> = e.tags.tags().iter().map(String::as_str).collect();
    order.reverse();
    let reversed = e.subset(&order).unwrap();
    let cols: Vec<&str> = e.tags.tags().iter().map(String::as_str).collect();
    let s2 = similarity_matrix(&reversed, &e.subset(&cols).unwrap()).unwrap();
    let settings = EvalSettings { resamples: 500, ..Default::default() };
    let a = eval_taxonomy(&s, &corpus.taxonomy, &settings).unwrap();
    let b = eval_taxonomy(&s2, &corpus.taxonomy, &settings).unwrap();
    assert_eq!(a.hr, b.hr);
    assert_eq!(a.map, b.map);
    let by_query = |e: &tagweave::RankedEvaluation| -> Vec<(String, Vec<usize>)> {
        let mut v: Vec<_> = e.queries.iter().map(|q| (q.query.clone(), q.relevant_ranks.clone())).collect();
        v.sort();
        v
    };
    assert_eq!(by_query(&a), by_query(&b));
}

fn blobs(seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 300;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((n, 5), |(i, j)| {
        let center = if j == labels[i] { 4.0 } else { 0.0 };
        center + rng.random_range(-1.0..1.0)
    });
    (FeatureMatrix::new(x).unwrap(), labels)
}

#[test]
fn early_stopping_returns_the_best_epoch() {
    for seed in 0..4 {
        let (x, y) = blobs(seed);
        let (vx, vy) = blobs(seed + 100);
        let config = TrainingConfig { hidden: 8, max_epochs: 30, patience: 3, seed, ..Default::default() };
        let model = classifier::train(&x, &y, &vx, &vy, 3, &config).unwrap();
        let log = &model.log;
        let min_valid = log.epochs.iter().map(|e| e.valid_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(log.best().unwrap().valid_loss, min_valid);
        assert!(log.best().unwrap().train_loss < log.epochs[0].train_loss || log.best_epoch == 0);
        assert!(log.best().unwrap().train_loss < log.initial_train_loss);
        assert!(log.min_optimizer_state >= 0.0);
        // The returned parameters reproduce the best validation loss.
        let p = model.predict_proba(&vx).unwrap();
        let loss = -vy.iter().enumerate().map(|(i, &c)| p.values()[[i, c]].ln()).sum::<f64>() / vy.len() as f64;
        assert!((loss - min_valid).abs() < 1e-9, "{loss} vs {min_valid}");
    }
}

/// A fixed lookup "classifier": any implementation works with the embeddings.
struct Table {
    w: Array2<f64>,
}

impl Classifier for Table {
    fn predict_proba(&self, features: &FeatureMatrix) -> tagweave::Result<OutputMatrix> {
        let n = self.w.ncols();
        let rows = features.rows();
        OutputMatrix::new(Array2::from_elem((rows, n), 1.0 / n as f64))
    }

    fn last_layer_weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }
}

#[test]
fn classifier_implementations_are_interchangeable() {
    let tags = TagSystem::new("t", vec!["a".into(), "b".into()]).unwrap();
    let table = Table { w: ndarray::arr2(&[[1.0, 0.0], [0.0, 2.0], [1.0, 0.0]]) };
    let fw = embed_weights(&table, &tags).unwrap();
    assert_eq!(fw.vectors, ndarray::arr2(&[[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]]));
    let p = table.predict_proba(&FeatureMatrix::new(Array2::zeros((4, 3))).unwrap()).unwrap();
    let fc = embed_columns(&p, &tags).unwrap();
    let s = similarity_matrix(&fc, &fc).unwrap();
    assert!((s.get("a", "b").unwrap() - 1.0).abs() < 1e-15);
}
