//! Python bindings. Results with nested structure (reports, configs, label
//! counts) cross the boundary as JSON and come out as plain dicts.

use std::path::PathBuf;

use hostility::data::{
    label_stats, read_corpus, stratified_split, write_corpus, Corpus as CoreCorpus,
    LabelSet, SplitBundle, SplitRatios,
};
use hostility::encoder::TinyEncoder;
use hostility::metrics::{self, EvalOptions};
use hostility::strategies::{self, load_bundle, save_bundle, StrategyConfig, TrainedBundle};
use hostility::synth::{synthetic_corpus, SynthConfig};
use hostility::textprep;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hostility, HostilityError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    HostilityError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

type Labels = (bool, bool, bool, bool, bool);

fn label_tuple(l: &LabelSet) -> Labels {
    (l.hostile, l.fake, l.hate, l.offensive, l.defamation)
}

/// A set of posts, optionally labeled.
#[pyclass(frozen, module = "hostility")]
struct Corpus {
    inner: CoreCorpus,
}

#[pymethods]
impl Corpus {
    /// Reads a CSV or TSV file with `id`, `text` and optional `labels` columns.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: read_corpus(&path).map_err(err)?,
        })
    }

    /// Keyword-rule synthetic posts.
    #[staticmethod]
    #[pyo3(signature = (posts = 500, seed = 0))]
    fn synthetic(posts: usize, seed: u64) -> Self {
        Corpus {
            inner: synthetic_corpus(&SynthConfig {
                posts,
                seed,
                ..SynthConfig::default()
            }),
        }
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_corpus(&path, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.iter().map(|p| p.id.clone()).collect()
    }

    #[getter]
    fn texts(&self) -> Vec<String> {
        self.inner.iter().map(|p| p.text.clone()).collect()
    }

    /// `(hostile, fake, hate, offensive, defamation)` per post, or `None`
    /// for unlabeled posts.
    #[getter]
    fn labels(&self) -> Vec<Option<Labels>> {
        self.inner.iter().map(|p| p.labels.as_ref().map(label_tuple)).collect()
    }

    fn label_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &label_stats(self.inner.posts()))
    }

    /// Corpus with every text passed through `clean_text`.
    fn cleaned(&self) -> Self {
        Corpus {
            inner: self.inner.map_text(|t| textprep::clean_text(t).into_string()),
        }
    }

    /// Stratified `(train, validation, test)` split.
    #[pyo3(signature = (ratios = (0.7, 0.1, 0.2), seed = 0))]
    fn split(&self, ratios: (f64, f64, f64), seed: u64) -> PyResult<(Corpus, Corpus, Corpus)> {
        let ratios = SplitRatios::new(ratios.0, ratios.1, ratios.2).map_err(err)?;
        let b = stratified_split(&self.inner, ratios, seed).map_err(err)?;
        Ok((
            Corpus { inner: b.train },
            Corpus { inner: b.validation },
            Corpus { inner: b.test },
        ))
    }
}

/// A trained strategy bundle.
#[pyclass(frozen, module = "hostility")]
struct Model {
    inner: TrainedBundle<TinyEncoder>,
}

#[pymethods]
impl Model {
    /// Trains from a config dict; `strategy` is required, other keys default.
    #[staticmethod]
    fn train(py: Python<'_>, config: &Bound<'_, PyDict>, train: &Corpus, validation: &Corpus) -> PyResult<Self> {
        let config: StrategyConfig = from_py(config.as_any())?;
        let splits = SplitBundle {
            train: train.inner.clone(),
            validation: validation.inner.clone(),
            test: CoreCorpus::default(),
            seed: config.seed,
            ratios: SplitRatios::DEFAULT,
            warnings: Vec::new(),
        };
        let inner = py.detach(|| strategies::train(&config, &splits)).map_err(err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: load_bundle(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_bundle(&self.inner, &path).map(drop).map_err(err)
    }

    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.history)
    }

    /// One dict per post with `id`, `coarse`, `fine` and gated `labels`.
    #[pyo3(signature = (corpus, threshold = None))]
    fn predict<'py>(&self, py: Python<'py>, corpus: &Corpus, threshold: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let threshold = threshold.unwrap_or(self.inner.config.threshold);
        let set = py
            .detach(|| strategies::predict(&self.inner, &corpus.inner, threshold))
            .map_err(err)?;
        to_py(py, &set.predictions)
    }

    /// Metrics report dict for a labeled corpus.
    #[pyo3(signature = (corpus, threshold = None))]
    fn evaluate<'py>(&self, py: Python<'py>, corpus: &Corpus, threshold: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let threshold = threshold.unwrap_or(self.inner.config.threshold);
        let report = py
            .detach(|| {
                let set = strategies::predict(&self.inner, &corpus.inner, threshold).map_err(err)?;
                let options = EvalOptions {
                    threshold,
                    ..EvalOptions::default()
                };
                metrics::evaluate(&set, &corpus.inner, &options).map_err(err)
            })?;
        to_py(py, &report)
    }
}

#[pyfunction]
fn clean_text(text: &str) -> String {
    textprep::clean_text(text).into_string()
}

#[pyfunction]
fn weighted_f1(preds: Vec<bool>, golds: Vec<bool>) -> PyResult<f64> {
    metrics::weighted_f1(&preds, &golds).map_err(err)
}

#[pyfunction]
fn weighted_fine_grained(f1s: [f64; 4], supports: [usize; 4]) -> PyResult<f64> {
    metrics::weighted_fine_grained(&f1s, &supports).map_err(err)
}

#[pyfunction]
fn bce(logit: f64, target: bool) -> f64 {
    strategies::bce(logit, target)
}

#[pyfunction]
fn mlc_loss(logits: Vec<f64>, targets: Vec<bool>) -> PyResult<f64> {
    strategies::mlc_loss(&logits, &targets).map_err(err)
}

/// `labels` is `(hostile, fake, hate, offensive, defamation)`.
#[pyfunction]
#[pyo3(signature = (coarse_logit, fine_logits, labels, lambda_fine = 0.5))]
fn mtl_loss(coarse_logit: f64, fine_logits: [f64; 4], labels: Labels, lambda_fine: f64) -> PyResult<f64> {
    let (h, f, ha, o, d) = labels;
    let labels = LabelSet::new(h, f, ha, o, d).map_err(err)?;
    Ok(strategies::mtl_loss(coarse_logit, &fine_logits, &labels, lambda_fine))
}

#[pyfunction]
fn aux_fuse(rep: Vec<f64>, coarse_logit: f64) -> PyResult<Vec<f64>> {
    let rep = ndarray::Array1::from(rep);
    Ok(strategies::aux_fuse(rep.view(), &[coarse_logit]).map_err(err)?.to_vec())
}

#[pymodule]
#[pyo3(name = "hostility")]
fn hostility_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HostilityError", m.py().get_type::<HostilityError>())?;
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_fine_grained, m)?)?;
    m.add_function(wrap_pyfunction!(bce, m)?)?;
    m.add_function(wrap_pyfunction!(mlc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mtl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(aux_fuse, m)?)?;
    Ok(())
}
