//! Python bindings: keyword extraction, power-law fitting, coherence
//! scoring, synthetic scenario generation, and the full detection pipeline.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use geoevent::coherence::{coherence_from_errors as core_coherence, AnnotationSet, DirImageSource};
use geoevent::embedding::VectorTable;
use geoevent::harness::{
    evaluate as core_evaluate, events_to_jsonl, generate, parse_events_jsonl, parse_truth_jsonl,
    write_to_dir, EventOutput, ScenarioConfig,
};
use geoevent::pipeline::Pipeline;
use geoevent::powerlaw::{fit_with_min_tail, goodness_of_fit, CountSample};
use geoevent::stopwords::StopWords;
use geoevent::types::{parse_tweet, DetectorConfig};

fn to_py_err(e: geoevent::Error) -> PyErr {
    match e {
        geoevent::Error::Io(_) | geoevent::Error::Json(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Rule-based keyword extraction: hashtags, mentions, and capitalized runs.
#[pyfunction]
fn extract_keywords(text: &str) -> Vec<String> {
    geoevent::embedding::extract_keywords(text, &StopWords::standard())
}

/// Discrete power-law fit of a count sample.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct PowerLawFit {
    #[pyo3(get)]
    alpha: f64,
    #[pyo3(get)]
    xmin: u64,
    #[pyo3(get)]
    ks_stat: f64,
    #[pyo3(get)]
    p_value: Option<f64>,
    #[pyo3(get)]
    n_tail: usize,
    #[pyo3(get)]
    degenerate: bool,
}

#[pymethods]
impl PowerLawFit {
    fn __repr__(&self) -> String {
        format!(
            "PowerLawFit(alpha={:.4}, xmin={}, ks_stat={:.4}, p_value={:?})",
            self.alpha, self.xmin, self.ks_stat, self.p_value
        )
    }
}

/// MLE fit with KS-selected xmin and a semi-parametric bootstrap p-value.
#[pyfunction]
#[pyo3(signature = (counts, bootstraps=100, seed=0))]
fn fit_powerlaw(counts: Vec<u64>, bootstraps: usize, seed: u64) -> PyResult<PowerLawFit> {
    let sample = CountSample::new(counts).map_err(to_py_err)?;
    let mut fit = fit_with_min_tail(&sample, 10.min(sample.len())).map_err(to_py_err)?;
    fit.p_value = Some(goodness_of_fit(&sample, &fit, bootstraps, seed));
    Ok(PowerLawFit {
        alpha: fit.alpha,
        xmin: fit.xmin,
        ks_stat: fit.ks_stat,
        p_value: fit.p_value,
        n_tail: fit.n_tail,
        degenerate: fit.degenerate,
    })
}

/// Outcome of the image-coherence decision rule.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct CoherenceOutcome {
    #[pyo3(get)]
    r_mean: f64,
    #[pyo3(get)]
    r_median: f64,
    #[pyo3(get)]
    r_variance: f64,
    #[pyo3(get)]
    accepted: bool,
    #[pyo3(get)]
    degenerate: bool,
}

#[pymethods]
impl CoherenceOutcome {
    fn __repr__(&self) -> String {
        format!(
            "CoherenceOutcome(r_mean={:.4}, accepted={})",
            self.r_mean, self.accepted
        )
    }
}

/// Mean-ratio coherence decision from raw train/test reconstruction errors.
#[pyfunction]
#[pyo3(signature = (train_errors, test_errors, threshold=1.5))]
fn coherence_from_errors(
    train_errors: Vec<f64>,
    test_errors: Vec<f64>,
    threshold: f64,
) -> PyResult<CoherenceOutcome> {
    if train_errors.is_empty() || test_errors.is_empty() {
        return Err(PyValueError::new_err("error lists must be non-empty"));
    }
    let report = core_coherence(train_errors, test_errors, 0, threshold);
    Ok(CoherenceOutcome {
        r_mean: report.r_mean,
        r_median: report.r_median,
        r_variance: report.r_variance,
        accepted: report.verdict == geoevent::coherence::Verdict::Accept,
        degenerate: report.degenerate,
    })
}

/// Generate a synthetic scenario (JSON description) into a directory;
/// returns (tweets, truth_events, images).
#[pyfunction]
fn generate_scenario(scenario_json: &str, out_dir: &str) -> PyResult<(usize, usize, usize)> {
    let scenario: ScenarioConfig =
        serde_json::from_str(scenario_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let generated = generate(&scenario).map_err(to_py_err)?;
    write_to_dir(&generated, std::path::Path::new(out_dir)).map_err(to_py_err)?;
    Ok((
        generated.tweets.len(),
        generated.truth.len(),
        generated.images.len(),
    ))
}

/// Run the detection pipeline over a stream file; returns events as JSONL.
#[pyfunction]
#[pyo3(signature = (stream_path, vectors_path, images_dir=None, annotations_path=None, config_text=None, image_stage=true))]
fn detect(
    stream_path: &str,
    vectors_path: &str,
    images_dir: Option<&str>,
    annotations_path: Option<&str>,
    config_text: Option<&str>,
    image_stage: bool,
) -> PyResult<String> {
    let config = match config_text {
        Some(t) => DetectorConfig::from_key_values(t).map_err(to_py_err)?,
        None => DetectorConfig::default(),
    };
    config.validate().map_err(to_py_err)?;
    let table = VectorTable::load(std::path::Path::new(vectors_path)).map_err(to_py_err)?;
    let annotations = match annotations_path {
        Some(p) => AnnotationSet::load(std::path::Path::new(p)).map_err(to_py_err)?,
        None => AnnotationSet::new(),
    };
    let text = std::fs::read_to_string(stream_path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let mut tweets = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        tweets.push(parse_tweet(line).map_err(to_py_err)?);
    }
    let source = DirImageSource {
        dir: images_dir.unwrap_or(".").into(),
    };
    let mut pipeline = Pipeline::new(&config, &table, &source, &annotations);
    pipeline.image_stage_enabled = image_stage;
    let events = pipeline.run_stream(&tweets).map_err(to_py_err)?;
    Ok(events_to_jsonl(&events))
}

/// Score an events JSONL file against a ground-truth JSONL file; returns
/// the evaluation result as a JSON string.
#[pyfunction]
fn evaluate(events_path: &str, truth_path: &str) -> PyResult<String> {
    let events_text =
        std::fs::read_to_string(events_path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let truth_text =
        std::fs::read_to_string(truth_path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let events: Vec<EventOutput> = parse_events_jsonl(&events_text).map_err(to_py_err)?;
    let truth = parse_truth_jsonl(&truth_text).map_err(to_py_err)?;
    let result = core_evaluate(&events, &truth);
    serde_json::to_string_pretty(&result).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn geoevent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(extract_keywords, m)?)?;
    m.add_function(wrap_pyfunction!(fit_powerlaw, m)?)?;
    m.add_function(wrap_pyfunction!(coherence_from_errors, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PowerLawFit>()?;
    m.add_class::<CoherenceOutcome>()?;
    Ok(())
}
