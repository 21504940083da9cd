//! End-to-end experiments: split, monolabel sampling, training, posterior
//! scoring, the four embeddings, and the three ranking tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Classifier, MlpClassifier, OutputMatrix, TrainingConfig};
use crate::dataset::{artist_split, global_popularity, AnnotationSet, DatasetSplit, TagSystem};
use crate::embeddings::{
    embed_columns, embed_dist, embed_mean, embed_weights, similarity_matrix, EmbeddingKind, SimilarityMatrix,
    TagEmbedding,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    eval_dedup, eval_taxonomy, eval_translation, string_match_hit_rate, EvalSettings, EvaluationReport,
    RankedEvaluation,
};
use crate::features::{ExcerptVariation, FeatureMatrix};
use crate::sampling::{balance, duplicate_tags, sample_monolabel, DuplicationPlan, MonolabelAssignment};
use crate::synthgen::{generate, generate_twin_systems, Corpus, GeneratorConfig, TwinCorpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fractions: [f64; 3],
    /// Per-tag cap for balancing the monolabel training set.
    pub cap: usize,
    pub training: TrainingConfig,
    pub eval: EvalSettings,
    /// Seed for split, sampling and balancing.
    pub seed: u64,
    /// Rows of the unmatched-pairs translation report.
    pub top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            cap: 2000,
            training: TrainingConfig::default(),
            eval: EvalSettings::default(),
            seed: 0,
            top_n: 10,
        }
    }
}

/// Everything produced up to the test-set posteriors.
#[derive(Clone, Debug)]
pub struct TrainedStage {
    pub split: DatasetSplit,
    pub train_assignment: MonolabelAssignment,
    pub model: MlpClassifier,
    pub test_annotations: AnnotationSet,
    pub posteriors: OutputMatrix,
    /// Fraction of test tracks whose arg-max posterior is one of their tags.
    pub test_accuracy: f64,
}

pub fn train_stage(
    annotations: &AnnotationSet,
    features: &FeatureMatrix,
    jitter: Option<&dyn ExcerptVariation>,
    config: &PipelineConfig,
) -> Result<TrainedStage> {
    if features.rows() != annotations.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} tracks",
            features.rows(),
            annotations.len()
        )));
    }
    let popularity = global_popularity(annotations);
    let split = artist_split(annotations, config.fractions, config.seed)?;

    let train_ann = annotations.select(&split.train);
    let sampled = sample_monolabel(&train_ann, &popularity, config.seed.wrapping_add(1))?;
    let train_assignment = balance(&sampled, config.cap, config.seed.wrapping_add(2))?;
    let train_x = features.select(&split.train).gather(&train_assignment.entries, jitter);

    let valid_ann = annotations.select(&split.validation);
    let valid_assignment = sample_monolabel(&valid_ann, &popularity, config.seed.wrapping_add(3))?;
    let valid_x = features.select(&split.validation).gather(&valid_assignment.entries, None);

    let model = classifier::train(
        &train_x,
        &train_assignment.labels(),
        &valid_x,
        &valid_assignment.labels(),
        annotations.tag_system().len(),
        &config.training,
    )?;

    let test_annotations = annotations.select(&split.test);
    let posteriors = model.predict_proba(&features.select(&split.test))?;
    let hits = posteriors
        .values()
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(k, row)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            test_annotations.has_tag(*k, best)
        })
        .count();
    let test_accuracy = hits as f64 / test_annotations.len() as f64;

    Ok(TrainedStage {
        split,
        train_assignment,
        model,
        test_annotations,
        posteriors,
        test_accuracy,
    })
}

impl TrainedStage {
    pub fn embedding(&self, kind: EmbeddingKind) -> Result<TagEmbedding> {
        let tags = self.test_annotations.tag_system();
        match kind {
            EmbeddingKind::Weights => embed_weights(&self.model, tags),
            EmbeddingKind::Columns => embed_columns(&self.posteriors, tags),
            EmbeddingKind::Mean => embed_mean(&self.posteriors, &self.test_annotations),
            EmbeddingKind::Dist => Ok(embed_dist(&self.test_annotations)),
        }
    }

    /// Largest `|row sum - 1|` over posteriors and mean embeddings, and
    /// whether any entry was negative.
    pub fn simplex_check(&self) -> Result<(f64, bool)> {
        let mean = self.embedding(EmbeddingKind::Mean)?;
        let mut worst = 0.0f64;
        let mut negative = false;
        for m in [self.posteriors.values(), &mean.vectors] {
            for row in m.axis_iter(Axis(0)) {
                worst = worst.max((row.sum() - 1.0).abs());
                negative |= row.iter().any(|&v| v < 0.0);
            }
        }
        Ok((worst, negative))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub n_train_entries: usize,
    pub n_test_tracks: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub test_accuracy: f64,
    pub simplex_max_deviation: f64,
    pub simplex_negative: bool,
}

impl StageSummary {
    fn of(stage: &TrainedStage) -> Result<Self> {
        let (dev, neg) = stage.simplex_check()?;
        let log = &stage.model.log;
        Ok(Self {
            n_train_entries: stage.train_assignment.entries.len(),
            n_test_tracks: stage.test_annotations.len(),
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_valid_loss: log.best().map_or(f64::NAN, |e| e.valid_loss),
            test_accuracy: stage.test_accuracy,
            simplex_max_deviation: dev,
            simplex_negative: neg,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub stage: TrainedStage,
    pub summary: StageSummary,
    pub evaluations: Vec<RankedEvaluation>,
    pub similarities: BTreeMap<EmbeddingKind, SimilarityMatrix>,
}

impl ExperimentOutcome {
    pub fn evaluation(&self, kind: EmbeddingKind) -> Option<&RankedEvaluation> {
        self.evaluations
            .iter()
            .find(|e| e.embedding_kind.as_deref() == Some(kind.as_str()))
    }
}

fn self_similarity(stage: &TrainedStage, kind: EmbeddingKind) -> Result<SimilarityMatrix> {
    let e = stage.embedding(kind)?;
    similarity_matrix(&e, &e)
}

/// Style-to-genre ranking with every embedding kind.
pub fn taxonomy_experiment(corpus: &Corpus, config: &PipelineConfig) -> Result<ExperimentOutcome> {
    let stage = train_stage(&corpus.annotations, &corpus.features, Some(&corpus.jitter), config)?;
    let mut evaluations = Vec::new();
    let mut similarities = BTreeMap::new();
    for kind in EmbeddingKind::ALL {
        let sim = self_similarity(&stage, kind)?;
        evaluations.push(eval_taxonomy(&sim, &corpus.taxonomy, &config.eval)?.with_kind(kind.as_str()));
        similarities.insert(kind, sim);
    }
    Ok(ExperimentOutcome {
        summary: StageSummary::of(&stage)?,
        stage,
        evaluations,
        similarities,
    })
}

#[derive(Clone, Debug)]
pub struct DedupOutcome {
    pub plan: DuplicationPlan,
    pub experiment: ExperimentOutcome,
    /// Largest f_dist similarity between a group-1 and a group-2 subtag.
    pub max_cross_group_dist: f64,
}

/// Duplicates every tag at the artist level, retrains, and retrieves each
/// subtag's counterpart.
pub fn dedup_experiment(corpus: &Corpus, config: &PipelineConfig) -> Result<DedupOutcome> {
    let (plan, duplicated) = duplicate_tags(&corpus.annotations, config.seed.wrapping_add(4))?;
    let stage = train_stage(&duplicated, &corpus.features, Some(&corpus.jitter), config)?;
    let mut evaluations = Vec::new();
    let mut similarities = BTreeMap::new();
    for kind in EmbeddingKind::ALL {
        let sim = self_similarity(&stage, kind)?;
        evaluations.push(eval_dedup(&sim, &plan, &config.eval)?.with_kind(kind.as_str()));
        similarities.insert(kind, sim);
    }
    let dist = &similarities[&EmbeddingKind::Dist];
    let mut max_cross = 0.0f64;
    for (a1, _) in &plan.pairs {
        for (_, b2) in &plan.pairs {
            if let Some(v) = dist.get(a1, b2) {
                max_cross = max_cross.max(v);
            }
        }
    }
    Ok(DedupOutcome {
        plan,
        experiment: ExperimentOutcome {
            summary: StageSummary::of(&stage)?,
            stage,
            evaluations,
            similarities,
        },
        max_cross_group_dist: max_cross,
    })
}

#[derive(Clone, Debug)]
pub struct TranslationOutcome {
    pub experiment: ExperimentOutcome,
    pub string_match_hr1: Option<f64>,
}

/// Merges the two corpora into one tag system `A ++ B`.
pub fn merge_twins(twin: &TwinCorpus) -> Result<(AnnotationSet, FeatureMatrix)> {
    let (ta, tb) = (&twin.a.tag_system, &twin.b.tag_system);
    let joint = TagSystem::concat("joint", &[ta, tb])?;
    let a_map: Vec<usize> = (0..ta.len()).collect();
    let b_map: Vec<usize> = (ta.len()..ta.len() + tb.len()).collect();
    let a = twin.a.annotations.remap(joint.clone(), &a_map)?;
    let b = twin.b.annotations.remap(joint, &b_map)?;
    let annotations = AnnotationSet::concat(&[&a, &b])?;
    let features = concatenate(Axis(0), &[twin.a.features.view(), twin.b.features.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((annotations, FeatureMatrix::new(features)?))
}

/// Trains one classifier on the joint A+B tag set and ranks, for each A tag,
/// all B tags by audio-derived similarity.
pub fn translation_experiment(twin: &TwinCorpus, config: &PipelineConfig) -> Result<TranslationOutcome> {
    let (annotations, features) = merge_twins(twin)?;
    let stage = train_stage(&annotations, &features, Some(&twin.a.jitter), config)?;
    let a_tags: Vec<&str> = twin.a.tag_system.tags().iter().map(String::as_str).collect();
    let b_tags: Vec<&str> = twin.b.tag_system.tags().iter().map(String::as_str).collect();
    let mut evaluations = Vec::new();
    let mut similarities = BTreeMap::new();
    for kind in [EmbeddingKind::Weights, EmbeddingKind::Columns, EmbeddingKind::Mean] {
        let e = stage.embedding(kind)?;
        let keep = |names: &[&str]| -> Vec<String> {
            names.iter().filter(|t| e.tags.contains(t)).map(|t| t.to_string()).collect()
        };
        let (ra, rb) = (keep(&a_tags), keep(&b_tags));
        let ra: Vec<&str> = ra.iter().map(String::as_str).collect();
        let rb: Vec<&str> = rb.iter().map(String::as_str).collect();
        let sim = similarity_matrix(&e.subset(&ra)?, &e.subset(&rb)?)?;
        evaluations.push(eval_translation(&sim, &twin.pairs, &config.eval, config.top_n)?.with_kind(kind.as_str()));
        similarities.insert(kind, sim);
    }
    Ok(TranslationOutcome {
        string_match_hr1: string_match_hit_rate(&twin.a.tag_system, &twin.b.tag_system, &twin.pairs),
        experiment: ExperimentOutcome {
            summary: StageSummary::of(&stage)?,
            stage,
            evaluations,
            similarities,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub generator: GeneratorConfig,
    pub pipeline: PipelineConfig,
    pub rename_fraction: f64,
}

impl DemoConfig {
    /// Desk-scale defaults: the default generator with a smaller hidden
    /// layer and per-tag cap than the full training defaults.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            generator: GeneratorConfig {
                seed,
                ..Default::default()
            },
            pipeline: PipelineConfig {
                cap: DEMO_CAP,
                training: TrainingConfig {
                    hidden: DEMO_HIDDEN,
                    seed,
                    ..Default::default()
                },
                eval: EvalSettings {
                    seed,
                    ..Default::default()
                },
                seed,
                ..Default::default()
            },
            rename_fraction: 1.0,
        }
    }
}

pub const DEMO_CAP: usize = 100;
pub const DEMO_HIDDEN: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub stage: StageSummary,
    pub evaluations: Vec<EvaluationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub taxonomy: TaskReport,
    pub dedup: TaskReport,
    pub dedup_skipped_tags: Vec<String>,
    pub dedup_max_cross_group_dist: f64,
    pub translation: TaskReport,
    pub translation_string_match_hr1: Option<f64>,
}

fn task_report(e: &ExperimentOutcome) -> TaskReport {
    TaskReport {
        stage: e.summary.clone(),
        evaluations: e.evaluations.iter().map(RankedEvaluation::report).collect(),
    }
}

/// Full outcome of [`run_demo`], including in-memory intermediates.
pub struct DemoOutcome {
    pub report: DemoReport,
    pub taxonomy: ExperimentOutcome,
    pub dedup: DedupOutcome,
    pub translation: TranslationOutcome,
}

/// Synthesizes a corpus and a twin corpus, then runs all three tasks.
pub fn run_demo(config: &DemoConfig) -> Result<DemoOutcome> {
    let corpus = generate(&config.generator)?;
    let taxonomy = taxonomy_experiment(&corpus, &config.pipeline)?;
    let dedup = dedup_experiment(&corpus, &config.pipeline)?;
    let twin = generate_twin_systems(&config.generator, config.rename_fraction)?;
    let translation = translation_experiment(&twin, &config.pipeline)?;
    let report = DemoReport {
        config: config.clone(),
        taxonomy: task_report(&taxonomy),
        dedup: task_report(&dedup.experiment),
        dedup_skipped_tags: dedup.plan.skipped.clone(),
        dedup_max_cross_group_dist: dedup.max_cross_group_dist,
        translation: task_report(&translation.experiment),
        translation_string_match_hr1: translation.string_match_hr1,
    };
    Ok(DemoOutcome {
        report,
        taxonomy,
        dedup,
        translation,
    })
}

impl DemoReport {
    /// Plain-text table: one row per task and embedding.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<7} {:>8} {:>14} {:>14} {:>14}",
            "task", "embed", "queries", "HR@1", "HR@2", "MAP"
        );
        for (name, task) in [
            ("taxonomy", &self.taxonomy),
            ("dedup", &self.dedup),
            ("translation", &self.translation),
        ] {
            for e in &task.evaluations {
                let cell = |v: Option<f64>, ci: Option<&f64>| match (v, ci) {
                    (Some(v), Some(ci)) => format!("{:.1}±{:.1}", 100.0 * v, 100.0 * ci),
                    (Some(v), None) => format!("{:.1}", 100.0 * v),
                    _ => "-".to_string(),
                };
                let kind = e
                    .embedding_kind
                    .as_deref()
                    .and_then(|k| k.parse::<EmbeddingKind>().ok())
                    .map_or("?", EmbeddingKind::label);
                let _ = writeln!(
                    out,
                    "{:<12} {:<7} {:>8} {:>14} {:>14} {:>14}",
                    name,
                    kind,
                    e.n_queries,
                    cell(e.hr.get("1").copied(), e.ci95.get("hr@1")),
                    cell(e.hr.get("2").copied(), e.ci95.get("hr@2")),
                    cell(e.map, e.ci95.get("map")),
                );
            }
        }
        if let Some(s) = self.translation_string_match_hr1 {
            let _ = writeln!(out, "translation string-matching baseline HR@1: {:.1}", 100.0 * s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> DemoConfig {
        let mut c = DemoConfig::with_seed(seed);
        c.generator.n_genres = 3;
        c.generator.styles_per_genre = 2;
        c.generator.tracks_per_style = 60;
        c.pipeline.cap = 30;
        c.pipeline.training.hidden = 16;
        c.pipeline.eval.resamples = 200;
        c
    }

    #[test]
    fn demo_report_is_reproducible() {
        let a = run_demo(&tiny(1)).unwrap();
        let b = run_demo(&tiny(1)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.report.taxonomy.evaluations.len(), 4);
        assert_eq!(a.report.dedup.evaluations.len(), 4);
        assert_eq!(a.report.translation.evaluations.len(), 3);
        // Header, 11 task rows, baseline line.
        assert_eq!(a.report.summary_table().lines().count(), 13);
        assert_eq!(a.report.dedup_max_cross_group_dist, 0.0);
    }

    #[test]
    fn stage_outputs_are_distributions() {
        let corpus = generate(&tiny(2).generator).unwrap();
        let stage = train_stage(&corpus.annotations, &corpus.features, Some(&corpus.jitter), &tiny(2).pipeline).unwrap();
        assert_eq!(stage.posteriors.rows(), stage.test_annotations.len());
        let (dev, negative) = stage.simplex_check().unwrap();
        assert!(dev < 1e-9 && !negative);
        let counts = stage.train_assignment.counts();
        assert!(counts.iter().all(|&c| c == 0 || c == 30));
    }

    #[test]
    fn merged_twins_keep_both_systems() {
        let twin = generate_twin_systems(&tiny(3).generator, 1.0).unwrap();
        let (ann, features) = merge_twins(&twin).unwrap();
        assert_eq!(ann.len(), twin.a.annotations.len() + twin.b.annotations.len());
        assert_eq!(features.rows(), ann.len());
        assert_eq!(ann.tag_system().len(), 2 * twin.a.tag_system.len());
        let first_b = &ann.rows()[twin.a.annotations.len()];
        assert!(first_b.iter().all(|&t| t >= twin.a.tag_system.len()));
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let corpus = generate(&tiny(4).generator).unwrap();
        let short = corpus.features.select(&[0, 1]);
        let err = train_stage(&corpus.annotations, &short, None, &tiny(4).pipeline).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
