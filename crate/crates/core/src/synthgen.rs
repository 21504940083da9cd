//! Synthetic corpora with a known two-level genre hierarchy.
//!
//! Genre centers are spherical Gaussians of scale `genre_scale`; each style
//! center is its genre center plus a Gaussian offset of scale `style_scale`;
//! a track is its style center plus noise of scale `noise_scale`. Albums are
//! style-pure and owned by a single artist; every album is annotated with its
//! style and, with probability `parent_prob`, the parent genre.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, TagSystem, TaxonomyEdge, TrackRef};
use crate::error::{Error, Result};
use crate::features::{ExcerptVariation, FeatureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_genres: usize,
    pub styles_per_genre: usize,
    pub dim: usize,
    pub genre_scale: f64,
    pub style_scale: f64,
    pub noise_scale: f64,
    pub excerpt_jitter: f64,
    pub tracks_per_style: usize,
    pub albums_per_artist: usize,
    pub tracks_per_album: usize,
    /// Probability that an album also carries its parent genre tag.
    pub parent_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_genres: 15,
            styles_per_genre: 4,
            dim: 64,
            genre_scale: 10.0,
            style_scale: 2.0,
            noise_scale: 1.0,
            excerpt_jitter: 0.5,
            tracks_per_style: 300,
            albums_per_artist: 1,
            tracks_per_album: 5,
            parent_prob: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_genres,
            self.styles_per_genre,
            self.dim,
            self.tracks_per_style,
            self.albums_per_artist,
            self.tracks_per_album,
        ];
        if counts.contains(&0) {
            return Err(Error::Parameter("all generator counts must be at least 1".into()));
        }
        let scales = [self.genre_scale, self.style_scale, self.noise_scale, self.excerpt_jitter];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Parameter("generator scales must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.parent_prob) {
            return Err(Error::Parameter(format!("parent_prob {} outside [0, 1]", self.parent_prob)));
        }
        Ok(())
    }
}

pub fn genre_name(g: usize) -> String {
    format!("genre{g:02}")
}

pub fn style_name(g: usize, s: usize) -> String {
    format!("genre{g:02}-style{s}")
}

/// Latent structure behind a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub edges: Vec<TaxonomyEdge>,
    /// Cross-system tag pairing (twin corpora only).
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
    /// Latent center per tag, in tag-system order.
    #[serde(skip)]
    pub centers: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub tag_system: TagSystem,
    pub taxonomy: Vec<TaxonomyEdge>,
    pub annotations: AnnotationSet,
    pub features: FeatureMatrix,
    pub ground_truth: GroundTruth,
    pub jitter: ExcerptJitter,
}

/// Deterministic Gaussian perturbation per `(track_id, excerpt_index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcerptJitter {
    pub scale: f64,
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ExcerptVariation for ExcerptJitter {
    fn perturb(&self, track_id: &str, excerpt_index: u32, row: &mut [f64]) {
        if self.scale == 0.0 || excerpt_index == 0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(track_id.as_bytes()));
        rng.set_stream(excerpt_index as u64);
        let noise = Normal::new(0.0, self.scale).expect("finite scale");
        for v in row.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
}

struct Latent {
    genre_centers: Vec<Array1<f64>>,
    style_centers: Vec<Vec<Array1<f64>>>,
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Array1<f64> {
    if scale == 0.0 {
        return Array1::zeros(dim);
    }
    let n = Normal::new(0.0, scale).expect("finite scale");
    Array1::from_shape_simple_fn(dim, || n.sample(rng))
}

fn draw_latent(config: &GeneratorConfig, rng: &mut impl Rng) -> Latent {
    let genre_centers: Vec<Array1<f64>> = (0..config.n_genres)
        .map(|_| gaussian(rng, config.dim, config.genre_scale))
        .collect();
    let style_centers = genre_centers
        .iter()
        .map(|g| {
            (0..config.styles_per_genre)
                .map(|_| g + &gaussian(rng, config.dim, config.style_scale))
                .collect()
        })
        .collect();
    Latent {
        genre_centers,
        style_centers,
    }
}

/// Tag system of a generated corpus: all genres first, then styles grouped
/// by genre.
pub fn base_tag_names(config: &GeneratorConfig) -> Vec<String> {
    let mut names: Vec<String> = (0..config.n_genres).map(genre_name).collect();
    for g in 0..config.n_genres {
        for s in 0..config.styles_per_genre {
            names.push(style_name(g, s));
        }
    }
    names
}

fn emit_tracks(
    config: &GeneratorConfig,
    latent: &Latent,
    tags: TagSystem,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<(AnnotationSet, FeatureMatrix)> {
    let n_styles = config.n_genres * config.styles_per_genre;
    let n_tracks = n_styles * config.tracks_per_style;
    let mut tracks = Vec::with_capacity(n_tracks);
    let mut rows = Vec::with_capacity(n_tracks);
    let mut features = Array2::zeros((n_tracks, config.dim));
    let mut album_counter = 0usize;
    let mut artist_counter = 0usize;
    for g in 0..config.n_genres {
        for s in 0..config.styles_per_genre {
            let style_tag = config.n_genres + g * config.styles_per_genre + s;
            let mut album_tags = Vec::new();
            for t in 0..config.tracks_per_style {
                let album_slot = t / config.tracks_per_album;
                if t % config.tracks_per_album == 0 {
                    if album_slot.is_multiple_of(config.albums_per_artist) {
                        artist_counter += 1;
                    }
                    album_counter += 1;
                    album_tags = vec![style_tag];
                    if rng.random_bool(config.parent_prob) {
                        album_tags.push(g);
                    }
                }
                let k = tracks.len();
                let x = &latent.style_centers[g][s] + &gaussian(rng, config.dim, config.noise_scale);
                features.row_mut(k).assign(&x);
                tracks.push(TrackRef::new(
                    format!("{prefix}track{k:05}"),
                    format!("{prefix}album{album_counter:04}"),
                    format!("{prefix}artist{artist_counter:04}"),
                ));
                rows.push(album_tags.clone());
            }
        }
    }
    Ok((AnnotationSet::new(tags, tracks, rows)?, FeatureMatrix::new(features)?))
}

fn centers_in_tag_order(config: &GeneratorConfig, latent: &Latent) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = latent.genre_centers.iter().map(|c| c.to_vec()).collect();
    for g in 0..config.n_genres {
        for s in 0..config.styles_per_genre {
            out.push(latent.style_centers[g][s].to_vec());
        }
    }
    out
}

fn base_taxonomy(config: &GeneratorConfig) -> Vec<TaxonomyEdge> {
    let mut edges = Vec::new();
    for g in 0..config.n_genres {
        for s in 0..config.styles_per_genre {
            edges.push(TaxonomyEdge::new(style_name(g, s), genre_name(g)));
        }
    }
    edges
}

pub fn generate(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let latent = draw_latent(config, &mut rng);
    let tags = TagSystem::new("synthetic", base_tag_names(config))?;
    let (annotations, features) = emit_tracks(config, &latent, tags.clone(), "", &mut rng)?;
    let taxonomy = base_taxonomy(config);
    Ok(Corpus {
        tag_system: tags,
        taxonomy: taxonomy.clone(),
        annotations,
        features,
        ground_truth: GroundTruth {
            edges: taxonomy,
            pairs: Vec::new(),
            centers: centers_in_tag_order(config, &latent),
        },
        jitter: ExcerptJitter {
            scale: config.excerpt_jitter,
            seed: config.seed,
        },
    })
}

/// Two corpora over the same latent centers with disjoint tracks, artists
/// and albums. System A tags are `A:<name>`; system B tags are `B:<name>`,
/// except that a `rename_fraction` share of B tags get unrelated names.
#[derive(Clone, Debug)]
pub struct TwinCorpus {
    pub a: Corpus,
    pub b: Corpus,
    /// `(A tag, B tag)` for every latent tag.
    pub pairs: Vec<(String, String)>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "ze", "ta", "vo", "ne", "shi", "pa", "do", "yu", "fe", "gri", "bla", "qua",
];

fn pseudo_word(rng: &mut impl Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

pub fn generate_twin_systems(config: &GeneratorConfig, rename_fraction: f64) -> Result<TwinCorpus> {
    config.validate()?;
    if !(0.0..=1.0).contains(&rename_fraction) {
        return Err(Error::Parameter(format!("rename_fraction {rename_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let latent = draw_latent(config, &mut rng);
    let base = base_tag_names(config);
    let centers = centers_in_tag_order(config, &latent);

    let a_names: Vec<String> = base.iter().map(|t| format!("A:{t}")).collect();
    let mut b_names: Vec<String> = base.iter().map(|t| format!("B:{t}")).collect();
    let n_rename = (rename_fraction * base.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut rng);
    let mut used: BTreeSet<String> = base.iter().cloned().collect();
    for &i in &order[..n_rename] {
        let word = loop {
            let w = pseudo_word(&mut rng);
            if used.insert(w.clone()) {
                break w;
            }
        };
        b_names[i] = format!("B:{word}");
    }

    let a_tags = TagSystem::new("A", a_names.clone())?;
    let b_tags = TagSystem::new("B", b_names.clone())?;
    let (a_ann, a_feat) = emit_tracks(config, &latent, a_tags.clone(), "a-", &mut rng)?;
    let (b_ann, b_feat) = emit_tracks(config, &latent, b_tags.clone(), "b-", &mut rng)?;

    let rename = |names: &[String], edges: &[TaxonomyEdge]| -> Vec<TaxonomyEdge> {
        edges
            .iter()
            .map(|e| {
                let c = base.iter().position(|t| *t == e.child).unwrap();
                let p = base.iter().position(|t| *t == e.parent).unwrap();
                TaxonomyEdge::new(names[c].clone(), names[p].clone())
            })
            .collect()
    };
    let edges = base_taxonomy(config);
    let pairs: Vec<(String, String)> = a_names.iter().cloned().zip(b_names.iter().cloned()).collect();
    let corpus = |tags: TagSystem, names: &[String], ann, feat, seed: u64| Corpus {
        tag_system: tags,
        taxonomy: rename(names, &edges),
        annotations: ann,
        features: feat,
        ground_truth: GroundTruth {
            edges: rename(names, &edges),
            pairs: pairs.clone(),
            centers: centers.clone(),
        },
        jitter: ExcerptJitter {
            scale: config.excerpt_jitter,
            seed,
        },
    };
    Ok(TwinCorpus {
        a: corpus(a_tags, &a_names, a_ann, a_feat, config.seed),
        b: corpus(b_tags, &b_names, b_ann, b_feat, config.seed ^ 0xb),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_genres: 3,
            styles_per_genre: 2,
            dim: 8,
            tracks_per_style: 20,
            tracks_per_album: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_spread_collapses_genre_features() {
        let cfg = GeneratorConfig {
            style_scale: 0.0,
            noise_scale: 0.0,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let per_genre = cfg.styles_per_genre * cfg.tracks_per_style;
        for g in 0..cfg.n_genres {
            let first = c.features.values().row(g * per_genre).to_owned();
            for k in g * per_genre..(g + 1) * per_genre {
                assert_eq!(c.features.values().row(k), first);
            }
        }
    }

    #[test]
    fn styles_nest_in_parents_and_albums_are_pure() {
        let c = generate(&small()).unwrap();
        let ann = &c.annotations;
        for e in &c.taxonomy {
            let s = ann.tag_system().index_of(&e.child).unwrap();
            let p = ann.tag_system().index_of(&e.parent).unwrap();
            for k in 0..ann.len() {
                assert!(!ann.has_tag(k, s) || ann.has_tag(k, p));
            }
        }
        assert!(ann.inconsistent_albums().is_empty());
        for (_, members) in ann.artists() {
            let albums: HashSet<_> = members.iter().map(|&k| &ann.tracks()[k].album_id).collect();
            assert_eq!(albums.len(), small().albums_per_artist);
        }
    }

    #[test]
    fn parent_prob_zero_drops_genres() {
        let c = generate(&GeneratorConfig { parent_prob: 0.0, ..small() }).unwrap();
        assert!(c.annotations.rows().iter().all(|r| r.len() == 1));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.annotations, b.annotations);
        let c = generate(&GeneratorConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.ground_truth.centers, c.ground_truth.centers);
    }

    #[test]
    fn jitter_is_deterministic_per_excerpt() {
        let j = ExcerptJitter { scale: 0.5, seed: 3 };
        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        j.perturb("t1", 2, &mut a);
        j.perturb("t1", 2, &mut b);
        assert_eq!(a, b);
        let mut c = vec![0.0; 4];
        j.perturb("t1", 3, &mut c);
        assert_ne!(a, c);
        let mut z = vec![0.0; 4];
        j.perturb("t1", 0, &mut z);
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn twin_systems_rename_and_disjointness() {
        let t0 = generate_twin_systems(&small(), 0.0).unwrap();
        for (a, b) in &t0.pairs {
            assert_eq!(a.strip_prefix("A:"), b.strip_prefix("B:"));
        }
        let t1 = generate_twin_systems(&small(), 1.0).unwrap();
        let a_ids: HashSet<_> = t1.a.annotations.tracks().iter().map(|t| &t.track_id).collect();
        assert!(t1.b.annotations.tracks().iter().all(|t| !a_ids.contains(&t.track_id)));
        let a_names: HashSet<_> = t1.a.tag_system.tags().iter().map(|t| t[2..].to_string()).collect();
        assert!(t1.b.tag_system.tags().iter().all(|t| !a_names.contains(&t[2..])));
        assert_eq!(t1.pairs.len(), t1.a.tag_system.len());
    }
}
