use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use tagweave::classifier::{self, Classifier, MlpClassifier, OutputMatrix, TrainingConfig};
use tagweave::dataset::{self, artist_split, global_popularity, AnnotationSet, Partition, TagSystem, TaxonomyEdge};
use tagweave::embeddings::{self, similarity_matrix, EmbeddingKind, SimilarityMatrix, TagEmbedding};
use tagweave::evaluation::{self, EvalSettings, RankedEvaluation};
use tagweave::features::FeatureMatrix;
use tagweave::pipeline::{self, DemoConfig};
use tagweave::sampling::{self, DuplicationPlan, MonolabelAssignment};
use tagweave::synthgen::{self, ExcerptJitter, GeneratorConfig, GroundTruth};
use tagweave::{Error, Result};

use crate::manifest::{beside, io_error, Run};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a known genre hierarchy.
    Synth(SynthArgs),
    /// Artist-level train/validation/test split.
    Split(SplitArgs),
    /// Popularity-weighted monolabel sampling, optionally balanced.
    Sample(SampleArgs),
    /// Train the reference classifier.
    Train(TrainArgs),
    /// Softmax posteriors for a feature matrix.
    Predict(PredictArgs),
    /// Split every tag in two by artist group.
    Duplicate(DuplicateArgs),
    /// Build a tag embedding.
    Embed(EmbedArgs),
    /// Cosine similarity between two embeddings.
    Similarity(SimilarityArgs),
    /// Rank parent genres for every style.
    EvalTaxonomy(EvalTaxonomyArgs),
    /// Retrieve the counterpart of every duplicated tag.
    EvalDedup(EvalDedupArgs),
    /// Rank system-B tags for every system-A tag.
    EvalTranslate(EvalTranslateArgs),
    /// Synthesize, train and evaluate all three tasks end to end.
    Demo(DemoArgs),
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Duplicate(a) => duplicate(a),
        Command::Embed(a) => embed(a),
        Command::Similarity(a) => similarity(a),
        Command::EvalTaxonomy(a) => eval_taxonomy(a),
        Command::EvalDedup(a) => eval_dedup(a),
        Command::EvalTranslate(a) => eval_translate(a),
        Command::Demo(a) => demo(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn load_annotations(path: &Path, tags: &TagSystem) -> Result<AnnotationSet> {
    let loaded = dataset::load_annotations(path, tags)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.annotations)
}

fn load_assignment(path: &Path, annotations: &AnnotationSet) -> Result<MonolabelAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    MonolabelAssignment::parse(&text, &path.display().to_string(), annotations)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    genres: Option<usize>,
    #[arg(long)]
    styles_per_genre: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    genre_scale: Option<f64>,
    #[arg(long)]
    style_scale: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    excerpt_jitter: Option<f64>,
    #[arg(long)]
    tracks_per_style: Option<usize>,
    #[arg(long)]
    albums_per_artist: Option<usize>,
    #[arg(long)]
    tracks_per_album: Option<usize>,
    /// Probability that an album also carries its parent genre.
    #[arg(long)]
    parent_prob: Option<f64>,
    /// Emit two tag systems over the same latent hierarchy (`a/`, `b/`, `joint/`).
    #[arg(long)]
    twin: bool,
    /// Share of system-B tags given unrelated names (with --twin).
    #[arg(long, default_value_t = 1.0)]
    rename_fraction: f64,
}

impl SynthArgs {
    fn config(&self) -> GeneratorConfig {
        let d = GeneratorConfig::default();
        GeneratorConfig {
            n_genres: self.genres.unwrap_or(d.n_genres),
            styles_per_genre: self.styles_per_genre.unwrap_or(d.styles_per_genre),
            dim: self.dim.unwrap_or(d.dim),
            genre_scale: self.genre_scale.unwrap_or(d.genre_scale),
            style_scale: self.style_scale.unwrap_or(d.style_scale),
            noise_scale: self.noise_scale.unwrap_or(d.noise_scale),
            excerpt_jitter: self.excerpt_jitter.unwrap_or(d.excerpt_jitter),
            tracks_per_style: self.tracks_per_style.unwrap_or(d.tracks_per_style),
            albums_per_artist: self.albums_per_artist.unwrap_or(d.albums_per_artist),
            tracks_per_album: self.tracks_per_album.unwrap_or(d.tracks_per_album),
            parent_prob: self.parent_prob.unwrap_or(d.parent_prob),
            seed: self.seed,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_corpus(
    run: &mut Run,
    dir: &Path,
    tags: &TagSystem,
    taxonomy: &[TaxonomyEdge],
    annotations: &AnnotationSet,
    features: &FeatureMatrix,
    ground_truth: &GroundTruth,
    jitter: &ExcerptJitter,
) -> Result<()> {
    create_dir(dir)?;
    tags.save(run.output(&dir.join("tags.txt")))?;
    write_text(run.output(&dir.join("taxonomy.tsv")), &dataset::taxonomy_to_text(taxonomy))?;
    annotations.save(run.output(&dir.join("annotations.tsv")))?;
    features.save(run.output(&dir.join("features.mx")))?;
    write_json(run.output(&dir.join("ground_truth.json")), ground_truth)?;
    write_json(run.output(&dir.join("jitter.json")), jitter)
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = args.config();
    let mut run = Run::default();
    create_dir(&args.out)?;
    if args.twin {
        let twin = synthgen::generate_twin_systems(&config, args.rename_fraction)?;
        for (name, c) in [("a", &twin.a), ("b", &twin.b)] {
            let gt = GroundTruth {
                pairs: twin.pairs.clone(),
                ..c.ground_truth.clone()
            };
            write_corpus(
                &mut run,
                &args.out.join(name),
                &c.tag_system,
                &c.taxonomy,
                &c.annotations,
                &c.features,
                &gt,
                &c.jitter,
            )?;
        }
        let (annotations, features) = pipeline::merge_twins(&twin)?;
        let taxonomy: Vec<TaxonomyEdge> = twin.a.taxonomy.iter().chain(&twin.b.taxonomy).cloned().collect();
        let gt = GroundTruth {
            edges: taxonomy.clone(),
            pairs: twin.pairs.clone(),
            centers: Vec::new(),
        };
        write_corpus(
            &mut run,
            &args.out.join("joint"),
            annotations.tag_system(),
            &taxonomy,
            &annotations,
            &features,
            &gt,
            &twin.a.jitter,
        )?;
    } else {
        let c = synthgen::generate(&config)?;
        write_corpus(
            &mut run,
            &args.out,
            &c.tag_system,
            &c.taxonomy,
            &c.annotations,
            &c.features,
            &c.ground_truth,
            &c.jitter,
        )?;
    }
    #[derive(Serialize)]
    struct Params {
        generator: GeneratorConfig,
        twin: bool,
        rename_fraction: f64,
    }
    let params = Params {
        generator: config,
        twin: args.twin,
        rename_fraction: args.rename_fraction,
    };
    run.finish("synth", &params, &args.out.join("manifest.json"))
}

// ---------------------------------------------------------------- split

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Features aligned with the annotations; split alongside them if given.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes split.tsv and {train,valid,test}.tsv (and .mx) here.
    #[arg(long)]
    out_dir: PathBuf,
}

fn split(args: SplitArgs) -> Result<()> {
    let mut run = Run::default();
    let tags = TagSystem::load(run.input(&args.tags))?;
    let annotations = load_annotations(run.input(&args.annotations), &tags)?;
    let features = match &args.features {
        Some(p) => Some(FeatureMatrix::load(run.input(p))?),
        None => None,
    };
    let fractions: [f64; 3] = args
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| Error::Parameter("--fractions takes three values".into()))?;
    let split = artist_split(&annotations, fractions, args.seed)?;
    create_dir(&args.out_dir)?;
    write_text(run.output(&args.out_dir.join("split.tsv")), &split.to_text(&annotations))?;
    for p in [Partition::Train, Partition::Valid, Partition::Test] {
        let idx = split.part(p);
        annotations
            .select(idx)
            .save(run.output(&args.out_dir.join(format!("{}.tsv", p.as_str()))))?;
        if let Some(f) = &features {
            if f.rows() != annotations.len() {
                return Err(Error::Shape(format!(
                    "{} feature rows for {} tracks",
                    f.rows(),
                    annotations.len()
                )));
            }
            f.select(idx).save(run.output(&args.out_dir.join(format!("{}.mx", p.as_str()))))?;
        }
    }
    let r = split.realized_fractions();
    log::info!("realized fractions {:.3} / {:.3} / {:.3}", r[0], r[1], r[2]);
    run.finish("split", &args, &args.out_dir.join("manifest.json"))
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    tags: PathBuf,
    /// Partition annotations to sample from.
    #[arg(long)]
    annotations: PathBuf,
    /// Annotations defining global tag popularity (defaults to --annotations).
    #[arg(long)]
    popularity_annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Balance to exactly this many entries per tag.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn sample(args: SampleArgs) -> Result<()> {
    let mut run = Run::default();
    let tags = TagSystem::load(run.input(&args.tags))?;
    let annotations = load_annotations(run.input(&args.annotations), &tags)?;
    let popularity = match &args.popularity_annotations {
        Some(p) => global_popularity(&load_annotations(run.input(p), &tags)?),
        None => global_popularity(&annotations),
    };
    let mut assignment = sampling::sample_monolabel(&annotations, &popularity, args.seed)?;
    if let Some(cap) = args.cap {
        assignment = sampling::balance(&assignment, cap, args.seed.wrapping_add(1))?;
        for &t in &assignment.dropped {
            log::warn!("tag {} has no entries and was dropped", tags.tag(t));
        }
    }
    write_text(run.output(&args.out), &assignment.to_text())?;
    run.finish("sample", &args, &beside(&args.out))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Monolabel assignment of the training tracks.
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    valid_features: PathBuf,
    #[arg(long)]
    valid_annotations: PathBuf,
    #[arg(long)]
    valid_assignment: PathBuf,
    /// Excerpt jitter parameters (jitter.json from `synth`).
    #[arg(long)]
    jitter: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file; the training log goes to `<out>.log.json`.
    #[arg(long)]
    out: PathBuf,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut run = Run::default();
    let tags = TagSystem::load(run.input(&args.tags))?;
    let features = FeatureMatrix::load(run.input(&args.features))?;
    let annotations = load_annotations(run.input(&args.annotations), &tags)?;
    let assignment = load_assignment(run.input(&args.assignment), &annotations)?;
    let valid_features = FeatureMatrix::load(run.input(&args.valid_features))?;
    let valid_annotations = load_annotations(run.input(&args.valid_annotations), &tags)?;
    let valid_assignment = load_assignment(run.input(&args.valid_assignment), &valid_annotations)?;
    let jitter: Option<ExcerptJitter> = match &args.jitter {
        Some(p) => Some(read_json(run.input(p))?),
        None => None,
    };
    for (f, a, what) in [
        (&features, &annotations, "training"),
        (&valid_features, &valid_annotations, "validation"),
    ] {
        if f.rows() != a.len() {
            return Err(Error::Shape(format!("{what}: {} feature rows for {} tracks", f.rows(), a.len())));
        }
    }
    let config = TrainingConfig {
        hidden: args.hidden,
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        patience: args.patience,
        rho: args.rho,
        epsilon: args.epsilon,
        learning_rate: args.learning_rate,
        seed: args.seed,
    };
    let train_x = features.gather(
        &assignment.entries,
        jitter.as_ref().map(|j| j as &dyn tagweave::features::ExcerptVariation),
    );
    let valid_x = valid_features.gather(&valid_assignment.entries, None);
    let model = classifier::train(
        &train_x,
        &assignment.labels(),
        &valid_x,
        &valid_assignment.labels(),
        tags.len(),
        &config,
    )?;
    for w in &model.log.warnings {
        log::warn!("{w}");
    }
    model.save(run.output(&args.out))?;
    let log_path = {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".log.json");
        PathBuf::from(s)
    };
    write_json(run.output(&log_path), &model.log)?;
    run.finish("train", &args, &beside(&args.out))
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn predict(args: PredictArgs) -> Result<()> {
    let mut run = Run::default();
    let model = MlpClassifier::load(run.input(&args.model))?;
    let features = FeatureMatrix::load(run.input(&args.features))?;
    model.predict_proba(&features)?.save(run.output(&args.out))?;
    run.finish("predict", &args, &beside(&args.out))
}

// ---------------------------------------------------------------- duplicate

#[derive(Debug, Args, Serialize)]
pub struct DuplicateArgs {
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes tags.txt, annotations.tsv and plan.json here.
    #[arg(long)]
    out_dir: PathBuf,
}

fn duplicate(args: DuplicateArgs) -> Result<()> {
    let mut run = Run::default();
    let tags = TagSystem::load(run.input(&args.tags))?;
    let annotations = load_annotations(run.input(&args.annotations), &tags)?;
    let (plan, duplicated) = sampling::duplicate_tags(&annotations, args.seed)?;
    for t in &plan.skipped {
        log::warn!("tag {t} was not split: all its artists fell in one group");
    }
    create_dir(&args.out_dir)?;
    duplicated.tag_system().save(run.output(&args.out_dir.join("tags.txt")))?;
    duplicated.save(run.output(&args.out_dir.join("annotations.tsv")))?;
    write_json(run.output(&args.out_dir.join("plan.json")), &plan)?;
    run.finish("duplicate", &args, &args.out_dir.join("manifest.json"))
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long, value_parser = parse_kind)]
    #[serde(serialize_with = "kind_name")]
    kind: EmbeddingKind,
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Model file (weights).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Posterior matrix (columns, mean).
    #[arg(long)]
    posteriors: Option<PathBuf>,
    /// Annotations of the posterior rows (mean, dist).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Embedding file; tag names go to `<out>.tags`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> std::result::Result<EmbeddingKind, String> {
    s.parse::<EmbeddingKind>().map_err(|e| e.to_string())
}

fn kind_name<S: serde::Serializer>(k: &EmbeddingKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(k.as_str())
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, kind: EmbeddingKind) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Parameter(format!("--kind {kind} needs --{flag}")))
}

fn embed(args: EmbedArgs) -> Result<()> {
    let mut run = Run::default();
    let kind = args.kind;
    let tags_path = match &args.tags {
        Some(p) => p.as_path(),
        None => {
            return Err(Error::Parameter("--tags is required".into()));
        }
    };
    let tags = TagSystem::load(run.input(tags_path))?;
    let embedding = match kind {
        EmbeddingKind::Weights => {
            let model = MlpClassifier::load(run.input(require(&args.model, "model", kind)?))?;
            embeddings::embed_weights(&model, &tags)?
        }
        EmbeddingKind::Columns => {
            let p = OutputMatrix::load(run.input(require(&args.posteriors, "posteriors", kind)?))?;
            embeddings::embed_columns(&p, &tags)?
        }
        EmbeddingKind::Mean => {
            let p = OutputMatrix::load(run.input(require(&args.posteriors, "posteriors", kind)?))?;
            let a = load_annotations(run.input(require(&args.annotations, "annotations", kind)?), &tags)?;
            embeddings::embed_mean(&p, &a)?
        }
        EmbeddingKind::Dist => {
            let a = load_annotations(run.input(require(&args.annotations, "annotations", kind)?), &tags)?;
            embeddings::embed_dist(&a)
        }
    };
    for t in &embedding.omitted {
        log::warn!("tag {t} has no tracks and is omitted from the {kind} embedding");
    }
    embedding.save(run.output(&args.out))?;
    run.output(&tagweave::matrix_file::sidecar(&args.out, "tags"));
    run.finish("embed", &args, &beside(&args.out))
}

// ---------------------------------------------------------------- similarity

#[derive(Debug, Args, Serialize)]
pub struct SimilarityArgs {
    /// Row embedding.
    #[arg(long)]
    a: PathBuf,
    /// Column embedding (defaults to --a).
    #[arg(long)]
    b: Option<PathBuf>,
    /// Keep only row tags starting with this prefix, e.g. `A:`.
    #[arg(long)]
    row_prefix: Option<String>,
    /// Keep only column tags starting with this prefix.
    #[arg(long)]
    col_prefix: Option<String>,
    /// Similarity matrix; tag names go to `<out>.rows` / `<out>.cols`.
    #[arg(long)]
    out: PathBuf,
    /// Also write all pairs sorted by descending similarity.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn filter_prefix(e: TagEmbedding, prefix: &Option<String>) -> Result<TagEmbedding> {
    let Some(prefix) = prefix else {
        return Ok(e);
    };
    let keep: Vec<String> = e.tags.tags().iter().filter(|t| t.starts_with(prefix.as_str())).cloned().collect();
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    e.subset(&keep)
}

fn similarity(args: SimilarityArgs) -> Result<()> {
    let mut run = Run::default();
    // The kind does not affect cosine similarity.
    let a = TagEmbedding::load(run.input(&args.a), EmbeddingKind::Columns)?;
    run.input(&tagweave::matrix_file::sidecar(&args.a, "tags"));
    let b = match &args.b {
        Some(p) => {
            run.input(&tagweave::matrix_file::sidecar(p, "tags"));
            TagEmbedding::load(run.input(p), EmbeddingKind::Columns)?
        }
        None => a.clone(),
    };
    let a = filter_prefix(a, &args.row_prefix)?;
    let b = filter_prefix(b, &args.col_prefix)?;
    let sim = similarity_matrix(&a, &b)?;
    for w in &sim.warnings {
        log::warn!("{w}");
    }
    sim.save(run.output(&args.out))?;
    run.output(&tagweave::matrix_file::sidecar(&args.out, "rows"));
    run.output(&tagweave::matrix_file::sidecar(&args.out, "cols"));
    if let Some(csv) = &args.csv {
        write_text(run.output(csv), &sim.to_csv())?;
    }
    run.finish("similarity", &args, &beside(&args.out))
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Args, Serialize)]
pub struct EvalCommon {
    /// Similarity matrix written by `similarity`.
    #[arg(long)]
    sim: PathBuf,
    /// Cutoffs for HR@k.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tag the report with an embedding kind.
    #[arg(long, value_parser = parse_kind)]
    #[serde(serialize_with = "opt_kind_name")]
    kind: Option<EmbeddingKind>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn opt_kind_name<S: serde::Serializer>(k: &Option<EmbeddingKind>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match k {
        Some(k) => s.serialize_some(k.as_str()),
        None => s.serialize_none(),
    }
}

impl EvalCommon {
    fn settings(&self) -> Result<EvalSettings> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Parameter("--k values must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Parameter(format!("--level {} outside (0, 1)", self.level)));
        }
        Ok(EvalSettings {
            ks: self.k.clone(),
            level: self.level,
            resamples: self.resamples,
            seed: self.seed,
        })
    }

    fn load(&self, run: &mut Run) -> Result<SimilarityMatrix> {
        run.input(&tagweave::matrix_file::sidecar(&self.sim, "rows"));
        run.input(&tagweave::matrix_file::sidecar(&self.sim, "cols"));
        SimilarityMatrix::load(run.input(&self.sim))
    }

    fn emit(&self, mut run: Run, command: &str, params: &impl Serialize, eval: RankedEvaluation) -> Result<()> {
        let eval = match self.kind {
            Some(k) => eval.with_kind(k.as_str()),
            None => eval,
        };
        for w in &eval.warnings {
            log::warn!("{w}");
        }
        let text = eval.report_json()?;
        match &self.out {
            Some(out) => {
                write_text(run.output(out), &text)?;
                run.finish(command, params, &beside(out))
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalTaxonomyArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// `style<TAB>genre` edges.
    #[arg(long)]
    taxonomy: PathBuf,
}

fn eval_taxonomy(args: EvalTaxonomyArgs) -> Result<()> {
    let mut run = Run::default();
    let settings = args.common.settings()?;
    let sim = args.common.load(&mut run)?;
    let all = TagSystem::concat("all", &[&sim.rows])?;
    let edges = dataset::load_taxonomy(run.input(&args.taxonomy), &all)?;
    let eval = evaluation::eval_taxonomy(&sim, &edges, &settings)?;
    args.common.emit(run, "eval-taxonomy", &args, eval)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalDedupArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// plan.json written by `duplicate`.
    #[arg(long)]
    plan: PathBuf,
}

fn eval_dedup(args: EvalDedupArgs) -> Result<()> {
    let mut run = Run::default();
    let settings = args.common.settings()?;
    let sim = args.common.load(&mut run)?;
    let plan: DuplicationPlan = read_json(run.input(&args.plan))?;
    let eval = evaluation::eval_dedup(&sim, &plan, &settings)?;
    args.common.emit(run, "eval-dedup", &args, eval)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalTranslateArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// JSON file with a `pairs` list of `[A tag, B tag]`.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Rows of the unmatched-pairs report.
    #[arg(long, default_value_t = 10)]
    top_n: usize,
}

#[derive(Deserialize)]
struct Pairs {
    pairs: Vec<(String, String)>,
}

fn eval_translate(args: EvalTranslateArgs) -> Result<()> {
    let mut run = Run::default();
    let settings = args.common.settings()?;
    let sim = args.common.load(&mut run)?;
    let gt: Pairs = read_json(run.input(&args.ground_truth))?;
    let eval = evaluation::eval_translation(&sim, &gt.pairs, &settings, args.top_n)?;
    args.common.emit(run, "eval-translate", &args, eval)
}

// ---------------------------------------------------------------- demo

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-tag balancing cap.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    tracks_per_style: Option<usize>,
    /// Writes report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn demo(args: DemoArgs) -> Result<()> {
    let mut config = DemoConfig::with_seed(args.seed);
    if let Some(c) = args.cap {
        config.pipeline.cap = c;
    }
    if let Some(h) = args.hidden {
        config.pipeline.training.hidden = h;
    }
    if let Some(p) = args.patience {
        config.pipeline.training.patience = p;
    }
    if let Some(t) = args.tracks_per_style {
        config.generator.tracks_per_style = t;
    }
    let outcome = pipeline::run_demo(&config)?;
    print!("{}", outcome.report.summary_table());
    if let Some(dir) = &args.out_dir {
        let mut run = Run::default();
        create_dir(dir)?;
        let path = dir.join("report.json");
        write_json(run.output(&path), &outcome.report)?;
        run.finish("demo", &config, &dir.join("manifest.json"))?;
    }
    Ok(())
}
