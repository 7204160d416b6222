use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geoevent::autoencoder::{AeModel, Topology};
use geoevent::clustering::{adaptive_threshold, default_step};
use geoevent::coherence::{
    coherence_ratio, generate_crops, image_set_seed, load_image, split_partition, AnnotationSet,
    DirImageSource, ImageData,
};
use geoevent::embedding::{embed_keywords, extract_keywords, TweetVector, VectorTable};
use geoevent::error::Error;
use geoevent::harness::{
    self, evaluate, events_to_jsonl, parse_events_jsonl, parse_truth_jsonl, EventOutput,
    ScenarioConfig,
};
use geoevent::pipeline::Pipeline;
use geoevent::powerlaw::{fit_with_min_tail, goodness_of_fit, CountSample};
use geoevent::quadtree::QuadTree;
use geoevent::stopwords::StopWords;
use geoevent::types::{parse_tweet, DetectorConfig, Tweet};

#[derive(Parser)]
#[command(name = "geoevent", about = "Event detection over geo-tagged tweet streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream, ground truth, vector table, and images.
    Simulate {
        /// Scenario description, JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the detection pipeline over a stream file.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        images_dir: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Flat key=value detector configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Disable the image-coherence stage (ablation).
        #[arg(long)]
        no_image_stage: bool,
        /// Write the final window's quad-tree as indented text.
        #[arg(long)]
        dump_quadtree: Option<PathBuf>,
        /// Write the final window's cluster assignment as CSV.
        #[arg(long)]
        dump_clusters: Option<PathBuf>,
    },
    /// Score detected events against a ground-truth file.
    Evaluate {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Paired detection runs with the image gate on and off.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        images_dir: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a discrete power law to one integer count per input line.
    FitPowerlaw {
        /// Counts file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        bootstraps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Image-coherence analysis of one image set.
    Coherence {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<DetectorConfig, Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            DetectorConfig::from_key_values(&text)
        }
        None => Ok(DetectorConfig::default()),
    }
}

fn load_annotations(path: &Option<PathBuf>) -> Result<AnnotationSet, Error> {
    match path {
        Some(p) => AnnotationSet::load(p),
        None => Ok(AnnotationSet::new()),
    }
}

fn load_stream(path: &Path) -> Result<Vec<Tweet>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut tweets = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        tweets.push(parse_tweet(line)?);
    }
    Ok(tweets)
}

fn dump_debug(
    tweets: &[Tweet],
    config: &DetectorConfig,
    table: &VectorTable,
    quadtree_path: &Option<PathBuf>,
    clusters_path: &Option<PathBuf>,
) -> Result<(), Error> {
    if quadtree_path.is_none() && clusters_path.is_none() {
        return Ok(());
    }
    let tree = QuadTree::build(
        tweets.iter(),
        config.region,
        config.quadtree_max_depth,
        config.quadtree_split_threshold,
    )?;
    if let Some(p) = quadtree_path {
        std::fs::write(p, tree.dump())?;
    }
    if let Some(p) = clusters_path {
        let stop = StopWords::with_extra(config.excluded_region_names.iter());
        let vectors: Vec<TweetVector> = tweets
            .iter()
            .filter_map(|t| {
                let kws = extract_keywords(&t.text, &stop);
                embed_keywords(&t.id, &kws, table)
            })
            .collect();
        let mut csv = String::from("tweet_id,label\n");
        if !vectors.is_empty() {
            let step = default_step(&vectors, config.rng_seed);
            let res = adaptive_threshold(&vectors, step, config.threshold_search_max_steps)?;
            let mut rows: Vec<(&String, &usize)> = res.assignment.labels.iter().collect();
            rows.sort();
            for (id, label) in rows {
                csv.push_str(&format!("{id},{label}\n"));
            }
        }
        std::fs::write(p, csv)?;
    }
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            scenario,
            out_dir,
            seed,
        } => {
            let text = std::fs::read_to_string(&scenario)?;
            let mut scenario: ScenarioConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(s) = seed {
                scenario.seed = s;
            }
            let generated = harness::generate(&scenario)?;
            harness::write_to_dir(&generated, &out_dir)?;
            eprintln!(
                "wrote {} tweets, {} truth events, {} images to {}",
                generated.tweets.len(),
                generated.truth.len(),
                generated.images.len(),
                out_dir.display()
            );
        }
        Command::Detect {
            input,
            vectors,
            images_dir,
            annotations,
            config,
            out,
            no_image_stage,
            dump_quadtree,
            dump_clusters,
        } => {
            let config = load_config(&config)?;
            config.validate()?;
            let table = VectorTable::load(&vectors)?;
            let annotations = load_annotations(&annotations)?;
            let tweets = load_stream(&input)?;
            let source = DirImageSource {
                dir: images_dir.unwrap_or_else(|| PathBuf::from(".")),
            };
            let mut pipeline = Pipeline::new(&config, &table, &source, &annotations);
            pipeline.image_stage_enabled = !no_image_stage;
            let events = pipeline.run_stream(&tweets)?;
            std::fs::write(&out, events_to_jsonl(&events))?;
            dump_debug(&tweets, &config, &table, &dump_quadtree, &dump_clusters)?;
            eprintln!("{} events written to {}", events.len(), out.display());
        }
        Command::Evaluate { events, truth } => {
            let events = parse_events_jsonl(&std::fs::read_to_string(&events)?)?;
            let truth = parse_truth_jsonl(&std::fs::read_to_string(&truth)?)?;
            let result = evaluate(&events, &truth);
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Ablate {
            input,
            vectors,
            images_dir,
            annotations,
            truth,
            config,
        } => {
            let config = load_config(&config)?;
            config.validate()?;
            let table = VectorTable::load(&vectors)?;
            let annotations = load_annotations(&annotations)?;
            let tweets = load_stream(&input)?;
            let truth = parse_truth_jsonl(&std::fs::read_to_string(&truth)?)?;
            let source = DirImageSource {
                dir: images_dir.unwrap_or_else(|| PathBuf::from(".")),
            };
            let run_once = |gate: bool| -> Result<harness::EvalResult, Error> {
                let mut pipeline = Pipeline::new(&config, &table, &source, &annotations);
                pipeline.image_stage_enabled = gate;
                let events = pipeline.run_stream(&tweets)?;
                let outputs: Vec<EventOutput> = events.iter().map(EventOutput::from).collect();
                Ok(evaluate(&outputs, &truth))
            };
            let result = harness::AblationResult {
                with_gate: run_once(true)?,
                without_gate: run_once(false)?,
            };
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::FitPowerlaw {
            input,
            bootstraps,
            seed,
        } => {
            let text = match input {
                Some(p) => std::fs::read_to_string(&p)?,
                None => std::io::read_to_string(std::io::stdin())?,
            };
            let mut counts = Vec::new();
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let v: u64 = line
                    .parse()
                    .map_err(|_| Error::Config(format!("not a positive integer count: {line}")))?;
                counts.push(v);
            }
            let sample = CountSample::new(counts)
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut fit = fit_with_min_tail(&sample, 10.min(sample.len()))?;
            fit.p_value = Some(goodness_of_fit(&sample, &fit, bootstraps, seed));
            println!("{}", serde_json::to_string_pretty(&fit)?);
        }
        Command::Coherence {
            images,
            annotations,
            seed,
            config,
        } => {
            let mut config = load_config(&config)?;
            config.rng_seed = seed;
            let annotations = load_annotations(&annotations)?;
            let mut loaded: Vec<ImageData> = Vec::new();
            for p in &images {
                loaded.push(load_image(p)?);
            }
            // apply the human filter, then the standard split/train/score
            let ids: Vec<String> = loaded
                .iter()
                .filter(|img| {
                    let boxes = annotations.boxes_for(&img.id).unwrap_or(&[]);
                    !geoevent::coherence::is_human_dominated(boxes, &config)
                })
                .map(|img| img.id.clone())
                .collect();
            let analysis_seed = image_set_seed(config.rng_seed, &ids);
            let partition = split_partition(
                &ids,
                config.train_crop_fraction,
                config.crops_per_image,
                config.min_images,
                analysis_seed,
            )
            .ok_or_else(|| {
                Error::Config(format!(
                    "need at least {} non-person images, got {}",
                    config.min_images,
                    ids.len()
                ))
            })?;
            let mut crops: HashMap<String, Vec<_>> = HashMap::new();
            for img in &loaded {
                if ids.contains(&img.id) {
                    crops.insert(
                        img.id.clone(),
                        generate_crops(img, config.crops_per_image, config.crop_size, config.rng_seed)?,
                    );
                }
            }
            let train: Vec<_> = partition
                .train_images
                .iter()
                .flat_map(|id| crops[id].iter().cloned())
                .collect();
            let topo = Topology {
                input_size: config.crop_size,
                ..Topology::standard()
            };
            let mut model = AeModel::init(topo, analysis_seed);
            model.train(
                &train,
                config.train_epochs,
                config.learning_rate,
                config.batch_size,
                analysis_seed,
            )?;
            let report = coherence_ratio(&model, &partition, &crops, config.coherence_threshold)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Json(_) | Error::VectorLoad { .. } | Error::Image { .. } => {
                    ExitCode::from(3)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}
