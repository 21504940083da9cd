//! Tracks, tag systems, multilabel annotations and the artist-level split.
//!
//! Tag indices are the contract between every matrix in the crate: column `i`
//! of an annotation, posterior or embedding matrix always refers to
//! `TagSystem::tags()[i]`, and that order is the order of the tag-system file.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One excerpt of one track.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrackRef {
    pub track_id: String,
    pub album_id: String,
    pub artist_id: String,
    /// Which excerpt of the track; 0 unless the track was upsampled.
    pub excerpt_index: u32,
}

impl TrackRef {
    pub fn new(
        track_id: impl Into<String>,
        album_id: impl Into<String>,
        artist_id: impl Into<String>,
    ) -> Self {
        Self {
            track_id: track_id.into(),
            album_id: album_id.into(),
            artist_id: artist_id.into(),
            excerpt_index: 0,
        }
    }
}

/// An ordered vocabulary of unique tag names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSystem {
    name: String,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSystem {
    pub fn new(name: impl Into<String>, tags: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            if tag.is_empty() || tag.contains(['\t', ',', '\n']) || tag.trim() != tag {
                return Err(Error::Parameter(format!("invalid tag name {tag:?}")));
            }
            if index.insert(tag.clone(), i).is_some() {
                return Err(Error::Conflict(format!("duplicate tag name {tag:?}")));
            }
        }
        Ok(Self {
            name: name.into(),
            tags,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Number of tags (N_c).
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index.contains_key(tag)
    }

    /// Copy of this system with every tag renamed to `prefix + tag`.
    pub fn prefixed(&self, prefix: &str) -> Result<Self> {
        Self::new(
            format!("{prefix}{}", self.name),
            self.tags.iter().map(|t| format!("{prefix}{t}")).collect(),
        )
    }

    /// Concatenation of several systems, in argument order.
    pub fn concat(name: impl Into<String>, systems: &[&TagSystem]) -> Result<Self> {
        let tags = systems
            .iter()
            .flat_map(|s| s.tags.iter().cloned())
            .collect();
        Self::new(name, tags)
    }

    /// Sub-vocabulary keeping the given tags, in the order given.
    pub fn subset(&self, tags: &[&str]) -> Result<Self> {
        let missing: Vec<String> = tags
            .iter()
            .filter(|t| !self.contains(t))
            .map(|t| t.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Vocabulary(missing));
        }
        Self::new(
            self.name.clone(),
            tags.iter().map(|t| t.to_string()).collect(),
        )
    }

    /// Parses the one-tag-per-line format. Blank lines are ignored.
    pub fn parse(name: impl Into<String>, text: &str, source: &str) -> Result<Self> {
        let mut tags = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let tag = line.trim();
            if tag.is_empty() {
                continue;
            }
            if let Some(first) = seen.insert(tag.to_string(), lineno + 1) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    message: format!("tag {tag:?} already defined on line {first}"),
                });
            }
            tags.push(tag.to_string());
        }
        if tags.is_empty() {
            return Err(Error::EmptyDataset(format!("{source}: no tags")));
        }
        Self::new(name, tags).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tag in &self.tags {
            out.push_str(tag);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// A `child -> parent` link of a two-level taxonomy.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaxonomyEdge {
    pub child: String,
    pub parent: String,
}

impl TaxonomyEdge {
    pub fn new(child: impl Into<String>, parent: impl Into<String>) -> Self {
        Self {
            child: child.into(),
            parent: parent.into(),
        }
    }
}

/// Parses `child<TAB>parent` lines; both names must belong to `tags`.
pub fn parse_taxonomy(text: &str, source: &str, tags: &TagSystem) -> Result<Vec<TaxonomyEdge>> {
    let mut edges = Vec::new();
    let mut unknown = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        for name in &fields {
            if !tags.contains(name) {
                unknown.push(format!("line {}: {name}", lineno + 1));
            }
        }
        edges.push(TaxonomyEdge::new(fields[0], fields[1]));
    }
    if !unknown.is_empty() {
        return Err(Error::Vocabulary(unknown));
    }
    Ok(edges)
}

pub fn load_taxonomy(path: &Path, tags: &TagSystem) -> Result<Vec<TaxonomyEdge>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_taxonomy(&text, &path.display().to_string(), tags)
}

pub fn taxonomy_to_text(edges: &[TaxonomyEdge]) -> String {
    let mut out = String::new();
    for e in edges {
        let _ = writeln!(out, "{}\t{}", e.child, e.parent);
    }
    out
}

/// Multilabel track-by-tag occurrence matrix `M`, stored row-sparse.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    tag_system: TagSystem,
    tracks: Vec<TrackRef>,
    /// Sorted, deduplicated tag indices of each row.
    rows: Vec<Vec<usize>>,
}

impl AnnotationSet {
    pub fn new(tag_system: TagSystem, tracks: Vec<TrackRef>, rows: Vec<Vec<usize>>) -> Result<Self> {
        if tracks.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} tracks but {} annotation rows",
                tracks.len(),
                rows.len()
            )));
        }
        let n_tags = tag_system.len();
        let mut clean = Vec::with_capacity(rows.len());
        for (track, row) in tracks.iter().zip(rows) {
            let set: BTreeSet<usize> = row.into_iter().collect();
            if set.is_empty() {
                return Err(Error::Parameter(format!(
                    "track {} has no tags",
                    track.track_id
                )));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= n_tags) {
                return Err(Error::Shape(format!(
                    "track {}: tag index {bad} out of range for {n_tags} tags",
                    track.track_id
                )));
            }
            clean.push(set.into_iter().collect());
        }
        Ok(Self {
            tag_system,
            tracks,
            rows: clean,
        })
    }

    pub fn tag_system(&self) -> &TagSystem {
        &self.tag_system
    }

    pub fn tracks(&self) -> &[TrackRef] {
        &self.tracks
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Tag indices carried by track `k`.
    pub fn row(&self, k: usize) -> &[usize] {
        &self.rows[k]
    }

    /// Number of tracks (N_s).
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn has_tag(&self, k: usize, tag: usize) -> bool {
        self.rows[k].binary_search(&tag).is_ok()
    }

    /// Dense binary `N_s x N_c` matrix.
    pub fn dense(&self) -> ndarray::Array2<u8> {
        let mut m = ndarray::Array2::zeros((self.len(), self.tag_system.len()));
        for (k, row) in self.rows.iter().enumerate() {
            for &j in row {
                m[[k, j]] = 1;
            }
        }
        m
    }

    /// Annotation subset with the given rows, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            tag_system: self.tag_system.clone(),
            tracks: indices.iter().map(|&i| self.tracks[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Same tracks and rows over a different (same-sized or larger) vocabulary,
    /// with column `j` moved to `mapping[j]`.
    pub fn remap(&self, tag_system: TagSystem, mapping: &[usize]) -> Result<Self> {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&j| mapping[j]).collect())
            .collect();
        Self::new(tag_system, self.tracks.clone(), rows)
    }

    /// Row-wise concatenation of annotation sets that share one tag system.
    pub fn concat(parts: &[&AnnotationSet]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyDataset("nothing to concatenate".into()))?;
        let mut tracks = Vec::new();
        let mut rows = Vec::new();
        for part in parts {
            if part.tag_system != first.tag_system {
                return Err(Error::Shape("annotation sets use different tag systems".into()));
            }
            tracks.extend(part.tracks.iter().cloned());
            rows.extend(part.rows.iter().cloned());
        }
        Self::new(first.tag_system.clone(), tracks, rows)
    }

    /// Track indices grouped by artist, artists in order of first appearance.
    pub fn artists(&self) -> Vec<(String, Vec<usize>)> {
        group_by_key(&self.tracks, |t| &t.artist_id)
    }

    /// Track indices grouped by album, albums in order of first appearance.
    pub fn albums(&self) -> Vec<(String, Vec<usize>)> {
        group_by_key(&self.tracks, |t| &t.album_id)
    }

    /// Album ids whose tracks do not all carry the same tag set.
    pub fn inconsistent_albums(&self) -> Vec<String> {
        self.albums()
            .into_iter()
            .filter(|(_, members)| {
                let first = &self.rows[members[0]];
                members.iter().any(|&k| &self.rows[k] != first)
            })
            .map(|(album, _)| album)
            .collect()
    }

    /// Serializes to the `track<TAB>album<TAB>artist<TAB>tag,tag` format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, row) in self.tracks.iter().zip(&self.rows) {
            let tags: Vec<&str> = row.iter().map(|&j| self.tag_system.tag(j)).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                t.track_id,
                t.album_id,
                t.artist_id,
                tags.join(",")
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn group_by_key<F>(tracks: &[TrackRef], key: F) -> Vec<(String, Vec<usize>)>
where
    F: Fn(&TrackRef) -> &String,
{
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (k, t) in tracks.iter().enumerate() {
        let id = key(t);
        match slot.get(id.as_str()) {
            Some(&s) => order[s].1.push(k),
            None => {
                slot.insert(id.as_str(), order.len());
                order.push((id.clone(), vec![k]));
            }
        }
    }
    order
}

/// Annotations plus non-fatal findings from ingestion.
#[derive(Clone, Debug)]
pub struct LoadedAnnotations {
    pub annotations: AnnotationSet,
    pub warnings: Vec<String>,
}

/// Parses the annotations format against a fixed vocabulary.
pub fn parse_annotations(text: &str, source: &str, tags: &TagSystem) -> Result<LoadedAnnotations> {
    let mut tracks = Vec::new();
    let mut rows = Vec::new();
    let mut unknown = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(parse_err(lineno, "empty identifier".into()));
        }
        if fields[3].is_empty() {
            return Err(parse_err(lineno, "empty tag list".into()));
        }
        if let Some(prev) = seen_ids.insert(fields[0].to_string(), lineno) {
            return Err(parse_err(
                lineno,
                format!("track {} already listed on line {prev}", fields[0]),
            ));
        }
        let mut row = Vec::new();
        for tag in fields[3].split(',') {
            if tag.is_empty() || tag.contains(' ') {
                return Err(parse_err(lineno, format!("malformed tag list {:?}", fields[3])));
            }
            match tags.index_of(tag) {
                Some(j) => row.push(j),
                None => unknown.push(format!("line {lineno}: {tag}")),
            }
        }
        tracks.push(TrackRef::new(fields[0], fields[1], fields[2]));
        rows.push(row);
    }

    if !unknown.is_empty() {
        return Err(Error::Vocabulary(unknown));
    }
    if tracks.is_empty() {
        return Err(Error::EmptyDataset(format!("{source}: no annotation lines")));
    }
    let annotations = AnnotationSet::new(tags.clone(), tracks, rows)?;
    let warnings: Vec<String> = annotations
        .inconsistent_albums()
        .into_iter()
        .map(|a| format!("album {a}: tracks carry different tag sets"))
        .collect();
    for w in &warnings {
        log::warn!("{source}: {w}");
    }
    Ok(LoadedAnnotations {
        annotations,
        warnings,
    })
}

pub fn load_annotations(path: &Path, tags: &TagSystem) -> Result<LoadedAnnotations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string(), tags)
}

/// Column sums of `M`: how many tracks carry each tag.
pub fn global_popularity(annotations: &AnnotationSet) -> Vec<u64> {
    let mut counts = vec![0u64; annotations.tag_system().len()];
    for row in annotations.rows() {
        for &j in row {
            counts[j] += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Valid, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "valid" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            other => Err(Error::Parameter(format!("unknown partition {other:?}"))),
        }
    }
}

/// Train / validation / test partition of track indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: [f64; 3],
}

impl DatasetSplit {
    pub fn part(&self, p: Partition) -> &[usize] {
        match p {
            Partition::Train => &self.train,
            Partition::Valid => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of tracks in each partition.
    pub fn realized_fractions(&self) -> [f64; 3] {
        let n = self.len() as f64;
        [
            self.train.len() as f64 / n,
            self.validation.len() as f64 / n,
            self.test.len() as f64 / n,
        ]
    }

    /// Partition label per track index.
    pub fn labels(&self) -> Vec<Partition> {
        let mut labels = vec![Partition::Train; self.len()];
        for &i in &self.validation {
            labels[i] = Partition::Valid;
        }
        for &i in &self.test {
            labels[i] = Partition::Test;
        }
        labels
    }

    /// `track_id<TAB>{train|valid|test}` lines, in track order.
    pub fn to_text(&self, annotations: &AnnotationSet) -> String {
        let mut out = String::new();
        for (t, p) in annotations.tracks().iter().zip(self.labels()) {
            let _ = writeln!(out, "{}\t{}", t.track_id, p.as_str());
        }
        out
    }

    /// Reads a split file back against the annotations it was made from.
    pub fn parse(text: &str, source: &str, annotations: &AnnotationSet) -> Result<Self> {
        let index: HashMap<&str, usize> = annotations
            .tracks()
            .iter()
            .enumerate()
            .map(|(k, t)| (t.track_id.as_str(), k))
            .collect();
        let mut labels: Vec<Option<Partition>> = vec![None; annotations.len()];
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                message,
            };
            let (id, part) = line
                .split_once('\t')
                .ok_or_else(|| err("expected track_id<TAB>partition".into()))?;
            let part: Partition = part.parse().map_err(|e: Error| err(e.to_string()))?;
            let k = *index
                .get(id)
                .ok_or_else(|| err(format!("unknown track {id}")))?;
            labels[k] = Some(part);
        }
        let mut split = DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            fractions: [0.0; 3],
        };
        for (k, label) in labels.into_iter().enumerate() {
            match label {
                Some(Partition::Train) => split.train.push(k),
                Some(Partition::Valid) => split.validation.push(k),
                Some(Partition::Test) => split.test.push(k),
                None => {
                    return Err(Error::Parse {
                        path: source.to_string(),
                        line: 0,
                        message: format!(
                            "track {} missing from split",
                            annotations.tracks()[k].track_id
                        ),
                    })
                }
            }
        }
        split.fractions = split.realized_fractions();
        Ok(split)
    }
}

/// Artist-level split: artists are shuffled with the seeded generator, then
/// assigned in order to train, validation and test. An artist goes to the
/// first partition whose cumulative boundary lies beyond the midpoint of the
/// artist's track block, so each boundary is off by at most half an artist.
pub fn artist_split(annotations: &AnnotationSet, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) {
        return Err(Error::Parameter(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    if annotations.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let mut artists = annotations.artists();
    if artists.len() < 3 {
        return Err(Error::SplitInfeasible(format!(
            "{} artist(s); three non-empty partitions need at least 3",
            artists.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    artists.shuffle(&mut rng);

    let n = annotations.len() as f64;
    let boundaries = [fractions[0] * n, (fractions[0] + fractions[1]) * n];
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut cumulative = 0usize;
    for (_, members) in &artists {
        let midpoint = cumulative as f64 + members.len() as f64 / 2.0;
        let p = boundaries
            .iter()
            .position(|&b| midpoint < b)
            .unwrap_or(2);
        parts[p].extend_from_slice(members);
        cumulative += members.len();
    }
    if let Some(p) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::SplitInfeasible(format!(
            "partition {} received no artist",
            Partition::ALL[p].as_str()
        )));
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        fractions,
    })
}
