//! Tag embeddings derived from a classifier or from annotations, and cosine
//! similarity between two embedded tag sets.
//!
//! | kind      | vector of tag `i`                                       | dimension |
//! |-----------|---------------------------------------------------------|-----------|
//! | `weights` | column `i` of the last-layer weights `W`                 | `h`       |
//! | `columns` | column `i` of the test posteriors `P`                    | `N_s`     |
//! | `mean`    | mean posterior row over test tracks annotated with `i`  | `N_c`     |
//! | `dist`    | column `i` of the binary occurrence matrix `M`           | `N_s`     |

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, OutputMatrix};
use crate::dataset::{AnnotationSet, TagSystem};
use crate::error::{Error, Result};
use crate::matrix_file;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Weights,
    Columns,
    Mean,
    Dist,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 4] = [
        EmbeddingKind::Weights,
        EmbeddingKind::Columns,
        EmbeddingKind::Mean,
        EmbeddingKind::Dist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Weights => "weights",
            EmbeddingKind::Columns => "columns",
            EmbeddingKind::Mean => "mean",
            EmbeddingKind::Dist => "dist",
        }
    }

    /// Conventional short label (`f_w`, `f_c`, `f_m`, `f_dist`).
    pub fn label(self) -> &'static str {
        match self {
            EmbeddingKind::Weights => "f_w",
            EmbeddingKind::Columns => "f_c",
            EmbeddingKind::Mean => "f_m",
            EmbeddingKind::Dist => "f_dist",
        }
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbeddingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown embedding kind {s:?}")))
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One vector per tag; row `i` of `vectors` belongs to `tags.tag(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TagEmbedding {
    pub kind: EmbeddingKind,
    pub tags: TagSystem,
    pub vectors: Array2<f64>,
    /// Tags of the source system that received no vector.
    pub omitted: Vec<String>,
}

impl TagEmbedding {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector(&self, tag: &str) -> Option<ArrayView1<'_, f64>> {
        self.tags.index_of(tag).map(|i| self.vectors.row(i))
    }

    /// Embedding restricted to `tags`, in that order.
    pub fn subset(&self, tags: &[&str]) -> Result<Self> {
        let system = self.tags.subset(tags)?;
        let idx: Vec<usize> = tags.iter().map(|t| self.tags.index_of(t).unwrap()).collect();
        Ok(Self {
            kind: self.kind,
            tags: system,
            vectors: self.vectors.select(Axis(0), &idx),
            omitted: Vec::new(),
        })
    }

    /// Writes the vectors as a matrix file plus a `.tags` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        matrix_file::write(path, &self.vectors)?;
        self.tags.save(&matrix_file::sidecar(path, "tags"))
    }

    pub fn load(path: &Path, kind: EmbeddingKind) -> Result<Self> {
        let vectors = matrix_file::read(path)?;
        let tags = TagSystem::load(&matrix_file::sidecar(path, "tags"))?;
        if tags.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} has {} rows but {} tags",
                path.display(),
                vectors.nrows(),
                tags.len()
            )));
        }
        Ok(Self {
            kind,
            tags,
            vectors,
            omitted: Vec::new(),
        })
    }
}

/// Columns of the classifier's last-layer weights.
pub fn embed_weights(model: &dyn Classifier, tags: &TagSystem) -> Result<TagEmbedding> {
    let w = model.last_layer_weights();
    if w.ncols() != tags.len() {
        return Err(Error::Shape(format!(
            "W has {} columns for {} tags",
            w.ncols(),
            tags.len()
        )));
    }
    Ok(TagEmbedding {
        kind: EmbeddingKind::Weights,
        tags: tags.clone(),
        vectors: w.t().to_owned(),
        omitted: Vec::new(),
    })
}

/// Columns of the posterior matrix.
pub fn embed_columns(posteriors: &OutputMatrix, tags: &TagSystem) -> Result<TagEmbedding> {
    if posteriors.n_classes() != tags.len() {
        return Err(Error::Shape(format!(
            "P has {} columns for {} tags",
            posteriors.n_classes(),
            tags.len()
        )));
    }
    Ok(TagEmbedding {
        kind: EmbeddingKind::Columns,
        tags: tags.clone(),
        vectors: posteriors.values().t().to_owned(),
        omitted: Vec::new(),
    })
}

fn mean_of_rows(p: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::zeros(p.ncols());
    for &k in rows {
        acc += &p.row(k);
    }
    acc / rows.len() as f64
}

/// Per tag, the mean posterior over test tracks carrying the tag (multilabel:
/// a track counts for every tag it carries). Tags with no track are omitted.
pub fn embed_mean(posteriors: &OutputMatrix, test_annotations: &AnnotationSet) -> Result<TagEmbedding> {
    let tags = test_annotations.tag_system();
    if posteriors.rows() != test_annotations.len() {
        return Err(Error::Shape(format!(
            "P has {} rows for {} annotated tracks",
            posteriors.rows(),
            test_annotations.len()
        )));
    }
    if posteriors.n_classes() != tags.len() {
        return Err(Error::Shape(format!(
            "P has {} columns for {} tags",
            posteriors.n_classes(),
            tags.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tags.len()];
    for (k, row) in test_annotations.rows().iter().enumerate() {
        for &j in row {
            members[j].push(k);
        }
    }
    let mut kept = Vec::new();
    let mut omitted = Vec::new();
    let mut vectors = Vec::new();
    for (j, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            omitted.push(tags.tag(j).to_string());
        } else {
            kept.push(tags.tag(j).to_string());
            vectors.push(mean_of_rows(posteriors.values(), rows));
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset("no tag has a test track".into()));
    }
    if !omitted.is_empty() {
        log::warn!("embed_mean: omitted tags without test tracks: {}", omitted.join(", "));
    }
    let views: Vec<_> = vectors.iter().map(|v| v.view()).collect();
    Ok(TagEmbedding {
        kind: EmbeddingKind::Mean,
        tags: TagSystem::new(tags.name(), kept)?,
        vectors: ndarray::stack(Axis(0), &views).expect("equal lengths"),
        omitted,
    })
}

/// Binary occurrence columns of `M`.
pub fn embed_dist(annotations: &AnnotationSet) -> TagEmbedding {
    let m = annotations.dense();
    TagEmbedding {
        kind: EmbeddingKind::Dist,
        tags: annotations.tag_system().clone(),
        vectors: m.t().mapv(f64::from),
        omitted: Vec::new(),
    }
}

/// Adds a tag to a mean-of-posteriors embedding from the posteriors of
/// tracks annotated with it, scored by the same model. Existing vectors are
/// left untouched.
pub fn incorporate_tag(existing: &TagEmbedding, tag: &str, posteriors: &OutputMatrix) -> Result<TagEmbedding> {
    if existing.kind != EmbeddingKind::Mean {
        return Err(Error::Parameter(format!(
            "only mean embeddings can absorb new tags, got {}",
            existing.kind
        )));
    }
    if existing.tags.contains(tag) {
        return Err(Error::Conflict(format!("tag {tag:?} is already embedded")));
    }
    if posteriors.rows() == 0 {
        return Err(Error::EmptyDataset(format!("no tracks for new tag {tag:?}")));
    }
    if posteriors.n_classes() != existing.dim() {
        return Err(Error::Shape(format!(
            "posteriors have {} classes, embedding dimension is {}",
            posteriors.n_classes(),
            existing.dim()
        )));
    }
    let all: Vec<usize> = (0..posteriors.rows()).collect();
    let v = mean_of_rows(posteriors.values(), &all);
    let mut tags = existing.tags.tags().to_vec();
    tags.push(tag.to_string());
    let mut vectors = existing.vectors.clone();
    vectors.push_row(v.view()).expect("dimension checked");
    Ok(TagEmbedding {
        kind: existing.kind,
        tags: TagSystem::new(existing.tags.name(), tags)?,
        vectors,
        omitted: existing.omitted.iter().filter(|t| *t != tag).cloned().collect(),
    })
}

/// Cosine similarities between the tags of two embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: TagSystem,
    pub cols: TagSystem,
    pub values: Array2<f64>,
    pub warnings: Vec<String>,
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Entry `(i, j)` is `a_i . b_j / (|a_i| |b_j|)`; a zero vector gives 0 and a
/// warning.
pub fn similarity_matrix(a: &TagEmbedding, b: &TagEmbedding) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let norms = |e: &TagEmbedding| -> Vec<f64> {
        e.vectors.axis_iter(Axis(0)).map(|v| dot(v, v).sqrt()).collect()
    };
    let (na, nb) = (norms(a), norms(b));
    let mut warnings = Vec::new();
    for (e, n) in [(a, &na), (b, &nb)] {
        for (i, &norm) in n.iter().enumerate() {
            if norm == 0.0 {
                warnings.push(format!("zero vector for tag {}; similarities set to 0", e.tags.tag(i)));
            }
        }
    }
    warnings.dedup();
    for w in &warnings {
        log::warn!("{w}");
    }
    let rows: Vec<Vec<f64>> = (0..a.tags.len())
        .into_par_iter()
        .map(|i| {
            let ai = a.vectors.row(i);
            (0..b.tags.len())
                .map(|j| {
                    if na[i] == 0.0 || nb[j] == 0.0 {
                        0.0
                    } else {
                        (dot(ai, b.vectors.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    let values = Array2::from_shape_vec(
        (a.tags.len(), b.tags.len()),
        rows.into_iter().flatten().collect(),
    )
    .expect("rectangular");
    Ok(SimilarityMatrix {
        rows: a.tags.clone(),
        cols: b.tags.clone(),
        values,
        warnings,
    })
}

impl SimilarityMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        Some(self.values[[self.rows.index_of(row)?, self.cols.index_of(col)?]])
    }

    /// Same matrix with `f` applied to every entry.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.mapv(f),
            ..self.clone()
        }
    }

    /// `(row, col, similarity)` triples, descending by similarity, ties by
    /// row index then column index.
    pub fn ranked_pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut pairs: Vec<(usize, usize, f64)> = self
            .values
            .indexed_iter()
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        pairs
    }

    /// `row_tag,col_tag,similarity` lines sorted as in [`Self::ranked_pairs`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_tag,col_tag,similarity\n");
        for (i, j, v) in self.ranked_pairs() {
            let _ = writeln!(out, "{},{},{v:.9}", self.rows.tag(i), self.cols.tag(j));
        }
        out
    }

    /// Matrix file plus `.rows` / `.cols` tag sidecars.
    pub fn save(&self, path: &Path) -> Result<()> {
        matrix_file::write(path, &self.values)?;
        self.rows.save(&matrix_file::sidecar(path, "rows"))?;
        self.cols.save(&matrix_file::sidecar(path, "cols"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let values = matrix_file::read(path)?;
        let rows = TagSystem::load(&matrix_file::sidecar(path, "rows"))?;
        let cols = TagSystem::load(&matrix_file::sidecar(path, "cols"))?;
        if values.dim() != (rows.len(), cols.len()) {
            return Err(Error::Shape(format!(
                "{} is {:?} but sidecars list {} x {} tags",
                path.display(),
                values.dim(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            warnings: Vec::new(),
        })
    }
}
