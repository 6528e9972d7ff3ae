//! Python bindings. Matrices cross the boundary as lists of rows and labels
//! as lists of ints; anything sequence-like (including numpy arrays) is
//! accepted on input.

use clipxpert::{bgat, boxcox, data_io, gmm1d, metrics, pipeline, scoring};
use clipxpert::{EmbeddingMatrix, LabelVector, Scorer, ThresholdStrategy};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: clipxpert::Error) -> PyErr {
    match err {
        clipxpert::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Packs a list of equal-length rows into a matrix.
pub fn rows_to_matrix(rows: Vec<Vec<f64>>) -> clipxpert::Result<EmbeddingMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(clipxpert::Error::DimMismatch(format!(
            "row {i} has {} values, expected {dim}",
            r.len()
        )));
    }
    let n = rows.len();
    EmbeddingMatrix::from_vec(n, dim, rows.into_iter().flatten().collect())
}

pub fn matrix_to_rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.as_array().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<EmbeddingMatrix> {
    rows_to_matrix(rows).map_err(to_py)
}

fn labels(values: Vec<usize>, num_known: usize) -> PyResult<LabelVector> {
    LabelVector::new(values, num_known).map_err(to_py)
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// Pipeline settings; defaults match the command-line tool.
#[pyclass(name = "PipelineConfig", from_py_object)]
#[derive(Clone)]
pub struct PyPipelineConfig {
    #[pyo3(get, set)]
    scorer: String,
    #[pyo3(get, set)]
    strategy: String,
    #[pyo3(get, set)]
    tau: f64,
    #[pyo3(get, set)]
    temp_eq1: f64,
    #[pyo3(get, set)]
    temp_alpha: f64,
    #[pyo3(get, set)]
    use_boxcox: bool,
    #[pyo3(get, set)]
    use_suff: bool,
    #[pyo3(get, set)]
    min_confident: usize,
    #[pyo3(get, set)]
    seed: u64,
}

impl PyPipelineConfig {
    fn to_core(&self) -> PyResult<pipeline::PipelineConfig> {
        Ok(pipeline::PipelineConfig {
            scorer: parse::<Scorer>(&self.scorer)?,
            strategy: parse::<ThresholdStrategy>(&self.strategy)?,
            tau: self.tau,
            temp_eq1: self.temp_eq1,
            temp_alpha: self.temp_alpha,
            use_boxcox: self.use_boxcox,
            use_suff: self.use_suff,
            min_confident: self.min_confident,
            seed: self.seed,
        })
    }
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (
        scorer = "entropy".to_string(),
        strategy = "bgat".to_string(),
        tau = clipxpert::suff::DEFAULT_TAU,
        temp_eq1 = scoring::DEFAULT_TEMPERATURE,
        temp_alpha = clipxpert::suff::DEFAULT_ALPHA_TEMPERATURE,
        use_boxcox = true,
        use_suff = true,
        min_confident = clipxpert::suff::DEFAULT_MIN_CONFIDENT,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        scorer: String,
        strategy: String,
        tau: f64,
        temp_eq1: f64,
        temp_alpha: f64,
        use_boxcox: bool,
        use_suff: bool,
        min_confident: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = Self {
            scorer,
            strategy,
            tau,
            temp_eq1,
            temp_alpha,
            use_boxcox,
            use_suff,
            min_confident,
            seed,
        };
        cfg.to_core()?.validate().map_err(to_py)?;
        Ok(cfg)
    }

    fn __repr__(&self) -> String {
        format!(
            "PipelineConfig(scorer={:?}, strategy={:?}, tau={}, use_boxcox={}, use_suff={})",
            self.scorer, self.strategy, self.tau, self.use_boxcox, self.use_suff
        )
    }
}

#[pyclass(name = "ThresholdEstimate", frozen)]
pub struct PyThresholdEstimate(bgat::ThresholdEstimate);

#[pymethods]
impl PyThresholdEstimate {
    #[getter]
    fn t_star(&self) -> f64 {
        self.0.t_star
    }
    #[getter]
    fn mu_know(&self) -> f64 {
        self.0.mu_know
    }
    #[getter]
    fn mu_unk(&self) -> f64 {
        self.0.mu_unk
    }
    #[getter]
    fn lambda_star(&self) -> Option<f64> {
        self.0.lambda_star
    }
    #[getter]
    fn shift(&self) -> f64 {
        self.0.shift
    }
    /// One of "bgat", "mean_fallback", "mean", "fixed_half_max", "oracle".
    #[getter]
    fn method(&self) -> String {
        serde_json::to_value(self.0.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    }
    #[getter]
    fn fallback_reason(&self) -> Option<String> {
        self.0.fallback_reason.clone()
    }
    fn __repr__(&self) -> String {
        format!("ThresholdEstimate(t_star={}, method={:?})", self.0.t_star, self.method())
    }
}

#[pyclass(name = "PredictionReport", frozen)]
pub struct PyPredictionReport(pipeline::PredictionReport);

#[pymethods]
impl PyPredictionReport {
    /// Predicted labels; `num_known` marks unknown.
    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.labels().to_vec()
    }
    #[getter]
    fn scores_initial(&self) -> Vec<f64> {
        self.0.scores_initial.values.clone()
    }
    #[getter]
    fn scores_final(&self) -> Vec<f64> {
        self.0.scores_final.values.clone()
    }
    #[getter]
    fn threshold_initial(&self) -> PyThresholdEstimate {
        PyThresholdEstimate(self.0.threshold_initial.clone())
    }
    #[getter]
    fn threshold_final(&self) -> PyThresholdEstimate {
        PyThresholdEstimate(self.0.threshold_final.clone())
    }
    #[getter]
    fn suff_applied(&self) -> bool {
        self.0.suff.applied
    }
    #[getter]
    fn zero_shot(&self) -> Vec<usize> {
        self.0.zero_shot.clone()
    }
    /// The full report as the JSON the command-line tool embeds.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyclass(name = "EvalResult", frozen)]
pub struct PyEvalResult(metrics::EvalResult);

#[pymethods]
impl PyEvalResult {
    #[getter]
    fn acc_known(&self) -> f64 {
        self.0.acc_known
    }
    #[getter]
    fn acc_unknown(&self) -> f64 {
        self.0.acc_unknown
    }
    #[getter]
    fn hos(&self) -> f64 {
        self.0.hos
    }
    /// `(class, accuracy, support)` per known class.
    #[getter]
    fn per_class(&self) -> Vec<(usize, f64, usize)> {
        self.0
            .per_class
            .iter()
            .map(|c| (c.class, c.accuracy, c.support))
            .collect()
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }
    fn __repr__(&self) -> String {
        format!(
            "EvalResult(acc_known={:.4}, acc_unknown={:.4}, hos={:.4})",
            self.0.acc_known, self.0.acc_unknown, self.0.hos
        )
    }
}

#[pyfunction]
fn load_embeddings(path: std::path::PathBuf) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_to_rows(&data_io::load_embeddings(path).map_err(to_py)?))
}

#[pyfunction]
fn save_embeddings(rows: Vec<Vec<f64>>, path: std::path::PathBuf) -> PyResult<()> {
    data_io::save_embeddings(&matrix(rows)?, path).map_err(to_py)
}

/// Returns a dict with `samples`, `anchors`, `labels`, `num_known` and
/// `tendency_targets`.
#[pyfunction]
#[pyo3(signature = (
    c_known = 10,
    c_unknown = 10,
    dim = 256,
    samples_per_class = 50,
    known_noise_sigma = None,
    unknown_noise_sigma = None,
    tendency_fraction = None,
    tendency_distance = None,
    anchor_perturb_sigma = None,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic<'py>(
    py: Python<'py>,
    c_known: usize,
    c_unknown: usize,
    dim: usize,
    samples_per_class: usize,
    known_noise_sigma: Option<f64>,
    unknown_noise_sigma: Option<f64>,
    tendency_fraction: Option<f64>,
    tendency_distance: Option<f64>,
    anchor_perturb_sigma: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = data_io::SyntheticConfig::default();
    let config = data_io::SyntheticConfig {
        c_known,
        c_unknown,
        dim,
        samples_per_class,
        known_noise_sigma: known_noise_sigma.unwrap_or(d.known_noise_sigma),
        unknown_noise_sigma: unknown_noise_sigma.unwrap_or(d.unknown_noise_sigma),
        tendency_fraction: tendency_fraction.unwrap_or(d.tendency_fraction),
        tendency_distance: tendency_distance.unwrap_or(d.tendency_distance),
        anchor_perturb_sigma: anchor_perturb_sigma.unwrap_or(d.anchor_perturb_sigma),
        seed,
    };
    let data = data_io::generate_synthetic(&config).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("samples", matrix_to_rows(&data.samples))?;
    out.set_item("anchors", matrix_to_rows(&data.anchors))?;
    out.set_item("labels", data.labels.labels().to_vec())?;
    out.set_item("num_known", data.labels.num_known())?;
    out.set_item("tendency_targets", data.tendency_targets)?;
    Ok(out)
}

/// Zero-shot class probabilities, one row per sample.
#[pyfunction]
#[pyo3(signature = (samples, anchors, temperature = scoring::DEFAULT_TEMPERATURE))]
fn zero_shot_probs(samples: Vec<Vec<f64>>, anchors: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    let probs = scoring::zero_shot_probs(&matrix(samples)?, &matrix(anchors)?, temperature).map_err(to_py)?;
    Ok(probs.view().rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Unknownness scores (higher means more likely unknown).
#[pyfunction]
#[pyo3(signature = (samples, anchors, scorer = "entropy", temperature = scoring::DEFAULT_TEMPERATURE))]
fn score_samples(samples: Vec<Vec<f64>>, anchors: Vec<Vec<f64>>, scorer: &str, temperature: f64) -> PyResult<Vec<f64>> {
    let (samples, anchors) = (matrix(samples)?, matrix(anchors)?);
    let cos = scoring::cosine_similarities(samples.view(), anchors.view()).map_err(to_py)?;
    let probs = scoring::ProbMatrix::from_cosines(cos.view(), temperature).map_err(to_py)?;
    let scores = scoring::score_samples(&probs, parse(scorer)?, Some(cos.view())).map_err(to_py)?;
    Ok(scores.values)
}

#[pyfunction]
#[pyo3(signature = (scores, use_boxcox = true))]
fn estimate_threshold(scores: Vec<f64>, use_boxcox: bool) -> PyResult<PyThresholdEstimate> {
    bgat::estimate_threshold(&scores, &bgat::BgatOptions::with_boxcox(use_boxcox))
        .map(PyThresholdEstimate)
        .map_err(to_py)
}

#[pyfunction(name = "boxcox")]
fn py_boxcox(value: f64, lam: f64) -> PyResult<f64> {
    boxcox::boxcox(value, lam).map_err(to_py)
}

#[pyfunction]
fn inverse_boxcox(value: f64, lam: f64) -> PyResult<f64> {
    boxcox::inverse_boxcox(value, lam).map_err(to_py)
}

/// Maximum-likelihood lambda; returns `(lambda, shift)`.
#[pyfunction]
fn fit_boxcox(values: Vec<f64>) -> PyResult<(f64, f64)> {
    let fit = boxcox::fit_lambda_mle(&values, boxcox::DEFAULT_SEARCH_RANGE, boxcox::DEFAULT_EPSILON_SHIFT).map_err(to_py)?;
    Ok((fit.lambda, fit.shift))
}

/// `(weight, mean, std)` of one mixture component.
type ComponentTuple = (f64, f64, f64);

/// Two-component mixture; returns `(low, high)` components.
#[pyfunction]
fn fit_gmm2(values: Vec<f64>) -> PyResult<(ComponentTuple, ComponentTuple)> {
    let fit = gmm1d::fit_gmm2(&values, &gmm1d::GmmOptions::default()).map_err(to_py)?;
    let c = |c: gmm1d::Component| (c.weight, c.mean, c.std);
    Ok((c(fit.low), c(fit.high)))
}

#[pyfunction]
fn gaussian_intersection(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> PyResult<f64> {
    gmm1d::gaussian_intersection(&gmm1d::GaussianPair::new(mu1, sigma1, mu2, sigma2))
        .map(|ix| ix.x)
        .map_err(to_py)
}

/// Runs the pipeline. Labels (with `num_known` = number of anchors) are
/// only read by the oracle strategy.
#[pyfunction]
#[pyo3(signature = (samples, anchors, config = None, labels = None))]
fn run_pipeline(
    samples: Vec<Vec<f64>>,
    anchors: Vec<Vec<f64>>,
    config: Option<PyPipelineConfig>,
    labels: Option<Vec<usize>>,
) -> PyResult<PyPredictionReport> {
    let config = match config {
        Some(c) => c.to_core()?,
        None => pipeline::PipelineConfig::default(),
    };
    let anchors = matrix(anchors)?;
    let truth = labels.map(|l| self::labels(l, anchors.rows())).transpose()?;
    pipeline::run_pipeline(&matrix(samples)?, &anchors, &config, truth.as_ref())
        .map(PyPredictionReport)
        .map_err(to_py)
}

#[pyfunction]
fn evaluate(predictions: Vec<usize>, truth: Vec<usize>, num_known: usize) -> PyResult<PyEvalResult> {
    metrics::evaluate(&labels(predictions, num_known)?, &labels(truth, num_known)?)
        .map(PyEvalResult)
        .map_err(to_py)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, truth: Vec<usize>, num_known: usize) -> PyResult<f64> {
    metrics::auroc(&scores, &labels(truth, num_known)?).map_err(to_py)
}

#[pyfunction]
fn hos(acc_known: f64, acc_unknown: f64) -> f64 {
    metrics::hos(acc_known, acc_unknown)
}

#[pymodule]
#[pyo3(name = "clipxpert")]
pub fn clipxpert_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyThresholdEstimate>()?;
    m.add_class::<PyPredictionReport>()?;
    m.add_class::<PyEvalResult>()?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(save_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(zero_shot_probs, m)?)?;
    m.add_function(wrap_pyfunction!(score_samples, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(py_boxcox, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_boxcox, m)?)?;
    m.add_function(wrap_pyfunction!(fit_boxcox, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm2, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_intersection, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(hos, m)?)?;
    Ok(())
}
