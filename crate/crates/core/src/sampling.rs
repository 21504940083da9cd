//! Multilabel to monolabel conversion, class balancing, and the artificial
//! artist-level tag duplication used by the deduplication experiment.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationSet, TagSystem, TrackRef};
use crate::error::{Error, Result};

/// One training example: a track excerpt and the single tag it teaches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonolabelEntry {
    pub track: TrackRef,
    /// Row of the track in the annotation set the assignment was drawn from.
    pub track_index: usize,
    pub tag: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonolabelAssignment {
    pub tag_system: TagSystem,
    pub entries: Vec<MonolabelEntry>,
    /// Tags removed by `balance` because nothing was assigned to them.
    pub dropped: Vec<usize>,
}

impl MonolabelAssignment {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.tag_system.len()];
        for e in &self.entries {
            counts[e.tag] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.tag).collect()
    }

    /// `track_id<TAB>excerpt_index<TAB>tag` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.track.track_id,
                e.track.excerpt_index,
                self.tag_system.tag(e.tag)
            ));
        }
        out
    }

    /// Reads an assignment file; track ids are resolved against `annotations`.
    pub fn parse(text: &str, source: &str, annotations: &AnnotationSet) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, usize> = annotations
            .tracks()
            .iter()
            .enumerate()
            .map(|(k, t)| (t.track_id.as_str(), k))
            .collect();
        let tags = annotations.tag_system();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let k = *by_id
                .get(fields[0])
                .ok_or_else(|| err(format!("unknown track {}", fields[0])))?;
            let excerpt: u32 = fields[1]
                .parse()
                .map_err(|_| err(format!("bad excerpt index {:?}", fields[1])))?;
            let tag = tags
                .index_of(fields[2])
                .ok_or_else(|| Error::Vocabulary(vec![format!("line {}: {}", lineno + 1, fields[2])]))?;
            let mut track = annotations.tracks()[k].clone();
            track.excerpt_index = excerpt;
            entries.push(MonolabelEntry {
                track,
                track_index: k,
                tag,
            });
        }
        Ok(Self {
            tag_system: tags.clone(),
            entries,
            dropped: Vec::new(),
        })
    }
}

/// Draw probabilities over an album's tags: proportional to `1 / popularity`.
pub fn album_tag_probabilities(tags: &[usize], popularity: &[u64]) -> Result<Vec<f64>> {
    if tags.is_empty() {
        return Err(Error::Parameter("album has no tags".into()));
    }
    let mut weights = Vec::with_capacity(tags.len());
    for &t in tags {
        let p = *popularity
            .get(t)
            .ok_or_else(|| Error::Shape(format!("no popularity for tag index {t}")))?;
        if p == 0 {
            return Err(Error::Parameter(format!(
                "tag index {t} is annotated but has popularity 0"
            )));
        }
        weights.push(1.0 / p as f64);
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn draw(rng: &mut impl Rng, probabilities: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Per album, draws one tag from the union of the album's tags with
/// probability inversely proportional to its global popularity, and gives
/// that tag to every track of the album.
pub fn sample_monolabel(
    annotations: &AnnotationSet,
    popularity: &[u64],
    seed: u64,
) -> Result<MonolabelAssignment> {
    if popularity.len() != annotations.tag_system().len() {
        return Err(Error::Shape(format!(
            "popularity has {} entries for {} tags",
            popularity.len(),
            annotations.tag_system().len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![usize::MAX; annotations.len()];
    for (album, members) in annotations.albums() {
        let tags: BTreeSet<usize> = members
            .iter()
            .flat_map(|&k| annotations.row(k).iter().copied())
            .collect();
        let tags: Vec<usize> = tags.into_iter().collect();
        let probs = album_tag_probabilities(&tags, popularity)
            .map_err(|e| Error::Parameter(format!("album {album}: {e}")))?;
        let tag = tags[draw(&mut rng, &probs)];
        for k in members {
            chosen[k] = tag;
        }
    }
    let entries = annotations
        .tracks()
        .iter()
        .zip(chosen)
        .enumerate()
        .map(|(k, (track, tag))| MonolabelEntry {
            track: track.clone(),
            track_index: k,
            tag,
        })
        .collect();
    Ok(MonolabelAssignment {
        tag_system: annotations.tag_system().clone(),
        entries,
        dropped: Vec::new(),
    })
}

/// Caps every tag at `cap` entries. Larger tags are downsampled uniformly
/// without replacement; smaller ones are upsampled by cycling through their
/// entries, bumping `excerpt_index` on every reuse. Tags with no entries are
/// dropped and listed in `dropped`. Output is grouped by tag.
pub fn balance(assignment: &MonolabelAssignment, cap: usize, seed: u64) -> Result<MonolabelAssignment> {
    if cap == 0 {
        return Err(Error::Parameter("cap must be at least 1".into()));
    }
    let n_tags = assignment.tag_system.len();
    let mut per_tag: Vec<Vec<&MonolabelEntry>> = vec![Vec::new(); n_tags];
    for e in &assignment.entries {
        per_tag[e.tag].push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(cap * n_tags);
    let mut dropped = Vec::new();
    for (tag, list) in per_tag.iter().enumerate() {
        let n = list.len();
        if n == 0 {
            dropped.push(tag);
            continue;
        }
        if n >= cap {
            let mut keep = index::sample(&mut rng, n, cap).into_vec();
            keep.sort_unstable();
            entries.extend(keep.into_iter().map(|i| list[i].clone()));
        } else {
            for j in 0..cap {
                let mut e = list[j % n].clone();
                e.track.excerpt_index += (j / n) as u32;
                entries.push(e);
            }
        }
    }
    if !dropped.is_empty() {
        let names: Vec<&str> = dropped.iter().map(|&t| assignment.tag_system.tag(t)).collect();
        log::warn!("balance: dropped tags with no entries: {}", names.join(", "));
    }
    Ok(MonolabelAssignment {
        tag_system: assignment.tag_system.clone(),
        entries,
        dropped,
    })
}

/// Artist groups and ground truth of an artificial tag duplication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuplicationPlan {
    pub original_tags: Vec<String>,
    pub duplicated_tags: Vec<String>,
    /// Artist id to group (1 or 2).
    pub artist_groups: BTreeMap<String, u8>,
    /// `(t1, t2)` for every tag that was split.
    pub pairs: Vec<(String, String)>,
    /// Tags left unchanged because their artists all fell in one group.
    pub skipped: Vec<String>,
}

impl DuplicationPlan {
    pub fn duplicated_system(&self) -> Result<TagSystem> {
        TagSystem::new("duplicated", self.duplicated_tags.clone())
    }

    pub fn counterpart(&self, tag: &str) -> Option<&str> {
        self.pairs.iter().find_map(|(a, b)| {
            if a == tag {
                Some(b.as_str())
            } else if b == tag {
                Some(a.as_str())
            } else {
                None
            }
        })
    }
}

/// Splits every tag `t` into `t1` / `t2` according to a global artist group,
/// so all tracks of an artist use subtags of the same group.
///
/// Artists are bucketed by the set of tags they carry; each bucket is
/// shuffled and groups are dealt alternately across buckets, which balances
/// group sizes per tag for artists with a uniform tag profile. A tag whose
/// artists all end up in one group is kept as is and listed in `skipped`.
pub fn duplicate_tags(annotations: &AnnotationSet, seed: u64) -> Result<(DuplicationPlan, AnnotationSet)> {
    let tags = annotations.tag_system();
    let artists = annotations.artists();

    let mut buckets: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (a, (_, members)) in artists.iter().enumerate() {
        let signature: BTreeSet<usize> = members
            .iter()
            .flat_map(|&k| annotations.row(k).iter().copied())
            .collect();
        buckets.entry(signature.into_iter().collect()).or_default().push(a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group = vec![0u8; artists.len()];
    let mut deal = rng.random_range(0..2usize);
    for bucket in buckets.values_mut() {
        bucket.shuffle(&mut rng);
        for &a in bucket.iter() {
            group[a] = 1 + (deal % 2) as u8;
            deal += 1;
        }
    }

    // which groups each tag occurs in
    let mut present = vec![[false; 2]; tags.len()];
    for (a, (_, members)) in artists.iter().enumerate() {
        for &k in members {
            for &j in annotations.row(k) {
                present[j][(group[a] - 1) as usize] = true;
            }
        }
    }

    let mut duplicated = Vec::new();
    let mut mapping = Vec::with_capacity(tags.len());
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (j, tag) in tags.tags().iter().enumerate() {
        if present[j][0] && present[j][1] {
            let (t1, t2) = (format!("{tag}1"), format!("{tag}2"));
            mapping.push(Some(duplicated.len()));
            duplicated.push(t1.clone());
            duplicated.push(t2.clone());
            pairs.push((t1, t2));
        } else {
            mapping.push(None);
            duplicated.push(tag.clone());
            skipped.push(tag.clone());
        }
    }
    let base: Vec<usize> = {
        let mut offset = 0;
        tags.tags()
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let here = offset;
                offset += if mapping[j].is_some() { 2 } else { 1 };
                here
            })
            .collect()
    };
    let dup_system = TagSystem::new(format!("{}-duplicated", tags.name()), duplicated.clone())?;

    let mut rows = vec![Vec::new(); annotations.len()];
    for (a, (_, members)) in artists.iter().enumerate() {
        let offset = (group[a] - 1) as usize;
        for &k in members {
            rows[k] = annotations
                .row(k)
                .iter()
                .map(|&j| if mapping[j].is_some() { base[j] + offset } else { base[j] })
                .collect();
        }
    }
    let rewritten = AnnotationSet::new(dup_system, annotations.tracks().to_vec(), rows)?;

    if !skipped.is_empty() {
        log::warn!("duplicate_tags: not split (single group): {}", skipped.join(", "));
    }
    let plan = DuplicationPlan {
        original_tags: tags.tags().to_vec(),
        duplicated_tags: duplicated,
        artist_groups: artists
            .iter()
            .enumerate()
            .map(|(a, (id, _))| (id.clone(), group[a]))
            .collect(),
        pairs,
        skipped,
    };
    Ok((plan, rewritten))
}
