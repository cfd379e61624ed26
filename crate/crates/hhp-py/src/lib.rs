//! Python bindings: architectures, workloads, the roofline helpers, and
//! single-pipeline, comparison and experiment runs. Structured results come
//! back as plain dicts and lists.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hhp_core::analysis::{self, default_baseline, Bound as RoofBound, FailureKind, PipelineOptions};
use hhp_core::architecture::{architecture_fixture, architecture_fixtures, dram_words_per_cycle, HHPConfig};
use hhp_core::experiment::{self, ExperimentConfig, RunOverrides, Scale};
use hhp_core::mapper::SearchBudget;
use hhp_core::partitioner::{self, PlanOverrides};
use hhp_core::workload::{build_cascade, workload_fixture, workload_fixtures, Cascade};
use hhp_core::Error;

fn py_err(e: Error) -> PyErr {
    match FailureKind::of(&e) {
        FailureKind::Validation => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// A hierarchical/heterogeneous accelerator configuration.
#[pyclass(name = "Architecture", module = "hhpsim", from_py_object)]
#[derive(Clone)]
struct PyArchitecture {
    inner: HHPConfig,
}

#[pymethods]
impl PyArchitecture {
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        architecture_fixture(name)
            .map(|inner| PyArchitecture { inner })
            .ok_or_else(|| PyKeyError::new_err(format!("unknown architecture fixture `{name}`")))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = HHPConfig::from_json(text).map_err(py_err)?;
        Ok(PyArchitecture { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn total_pes(&self) -> u64 {
        self.inner.total_pes()
    }

    #[getter]
    fn ai_tipping(&self) -> f64 {
        self.inner.ai_tipping()
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.sub_accels.iter().map(|s| s.id.clone()).collect()
    }

    /// `(hierarchy, heterogeneity)` class names.
    fn classify(&self) -> PyResult<(String, String)> {
        let (h, het) = self.inner.classify().map_err(py_err)?;
        Ok((format!("{h:?}"), format!("{het:?}")))
    }

    /// Rule violations as strings; empty when the configuration is valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().iter().map(|v| v.to_string()).collect()
    }

    fn with_dram_bandwidth_bits(&self, bits: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_dram_bandwidth(dram_words_per_cycle(bits));
        PyArchitecture { inner }
    }

    fn __repr__(&self) -> String {
        format!("Architecture({:?})", self.inner.name)
    }
}

/// An operator cascade, optionally built from a scaled transformer fixture.
#[pyclass(name = "Workload", module = "hhpsim", from_py_object)]
#[derive(Clone)]
struct PyWorkload {
    cascade: Cascade,
    scale: Scale,
}

#[pymethods]
impl PyWorkload {
    #[staticmethod]
    #[pyo3(signature = (name, scale = "1/8", decode_stride = 64))]
    fn fixture(name: &str, scale: &str, decode_stride: u64) -> PyResult<Self> {
        let spec = workload_fixture(name)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown workload fixture `{name}`")))?;
        let scale: Scale = scale.parse().map_err(py_err)?;
        let mut spec = spec.scaled(scale.num, scale.den).map_err(py_err)?;
        spec.decode_stride = decode_stride;
        let mut cascade = build_cascade(&spec).map_err(py_err)?;
        if scale != Scale::ONE {
            cascade.name = format!("{}@{scale}", cascade.name);
        }
        Ok(PyWorkload { cascade, scale })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cascade = Cascade::from_json(text).map_err(py_err)?;
        cascade.validate().map_err(py_err)?;
        Ok(PyWorkload { cascade, scale: Scale::ONE })
    }

    fn to_json(&self) -> PyResult<String> {
        self.cascade.to_json().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.cascade.name.clone()
    }

    #[getter]
    fn num_ops(&self) -> usize {
        self.cascade.ops.len()
    }

    #[getter]
    fn total_macs(&self) -> u64 {
        self.cascade.total_macs()
    }

    #[getter]
    fn op_ids(&self) -> Vec<String> {
        self.cascade.ops.iter().map(|o| o.id.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Workload({:?}, {} ops)", self.cascade.name, self.cascade.ops.len())
    }
}

fn options(seed: u64, samples: Option<u64>, bw_fraction_low: Option<f64>, threshold: f64) -> PipelineOptions {
    PipelineOptions {
        threshold: Some(threshold),
        overrides: PlanOverrides { bw_fraction_low, llb_fraction_low: None },
        budget: match samples {
            Some(samples) => SearchBudget::RandomSample { samples, seed },
            None => SearchBudget::Exhaustive,
        },
        ..PipelineOptions::default()
    }
}

/// Partition, map and schedule `workload` on `arch`.
#[pyfunction]
#[pyo3(signature = (arch, workload, seed = 1, samples = Some(2000), bw_fraction_low = None))]
fn run_pipeline(
    py: Python<'_>,
    arch: &PyArchitecture,
    workload: &PyWorkload,
    seed: u64,
    samples: Option<u64>,
    bw_fraction_low: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let threshold = arch.inner.ai_tipping() * workload.scale.as_f64();
    let opts = options(seed, samples, bw_fraction_low, threshold);
    let r = py.detach(|| analysis::run_pipeline(&arch.inner, &workload.cascade, &opts)).map_err(py_err)?;
    to_py(py, &r)
}

/// Runs every architecture on `workload`; speedups are relative to the
/// first leaf-only homogeneous architecture.
#[pyfunction]
#[pyo3(signature = (archs, workload, seed = 1, samples = Some(2000), bw_fraction_low = None))]
fn compare(
    py: Python<'_>,
    archs: Vec<PyArchitecture>,
    workload: &PyWorkload,
    seed: u64,
    samples: Option<u64>,
    bw_fraction_low: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let configs: Vec<HHPConfig> = archs.into_iter().map(|a| a.inner).collect();
    if configs.is_empty() {
        return Err(PyValueError::new_err("no architectures given"));
    }
    let base = default_baseline(&configs);
    let threshold = configs[base].ai_tipping() * workload.scale.as_f64();
    let opts = options(seed, samples, bw_fraction_low, threshold);
    let r = py.detach(|| analysis::compare(&configs, &workload.cascade, &opts, Some(base))).map_err(py_err)?;
    to_py(py, &r)
}

/// Runs (or sweeps) an experiment file and returns the full report; writes
/// the usual output files when `out` is given.
#[pyfunction]
#[pyo3(signature = (path, out = None, seed = None, sweep = false))]
fn run_experiment(
    py: Python<'_>,
    path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    sweep: bool,
) -> PyResult<Py<PyAny>> {
    let exp = ExperimentConfig::load(&path).map_err(py_err)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let o = RunOverrides { seed, energy_table: None, bucket_cycles: exp.bucket_cycles };
    let report = py
        .detach(|| {
            let r = if sweep { experiment::sweep(&exp, &dir, &o) } else { experiment::run(&exp, &dir, &o) }?;
            if let Some(out) = &out {
                experiment::write_outputs(&r, out, o.bucket_cycles, sweep)?;
            }
            Ok::<_, Error>(r)
        })
        .map_err(py_err)?;
    to_py(py, &report)
}

/// `(attainable MACs/cycle, "compute" | "memory")`.
#[pyfunction]
fn roofline(ai: f64, peak_macs_per_cycle: f64, bw_words_per_cycle: f64) -> PyResult<(f64, String)> {
    let p = analysis::roofline(ai, peak_macs_per_cycle, bw_words_per_cycle).map_err(py_err)?;
    let bound = match p.bound {
        RoofBound::ComputeBound => "compute",
        RoofBound::MemoryBound => "memory",
    };
    Ok((p.attainable_macs_per_cycle, bound.to_string()))
}

#[pyfunction]
fn required_bandwidth(ai: f64, peak_macs_per_cycle: f64, bw_peak_words_per_cycle: f64) -> PyResult<f64> {
    partitioner::required_bandwidth(ai, peak_macs_per_cycle, bw_peak_words_per_cycle).map_err(py_err)
}

/// Names of the bundled architecture and workload fixtures.
#[pyfunction]
fn list_fixtures() -> (Vec<String>, Vec<String>) {
    (
        architecture_fixtures().into_iter().map(|a| a.name).collect(),
        workload_fixtures().into_iter().map(|w| w.name).collect(),
    )
}

#[pymodule]
fn hhpsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyWorkload>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(roofline, m)?)?;
    m.add_function(wrap_pyfunction!(required_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(list_fixtures, m)?)?;
    Ok(())
}
