//! Python bindings for the room simulator, front end and experiment grid.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use reverbkit::harness::{run_grid as grid, ExperimentConfig};
use reverbkit::roomsim::{self, Placement, RirOptions, RoomSet, RoomSpec};
use reverbkit::sigproc::{AudioClip, LogMelConfig};
use reverbkit::{Error, ErrorClass};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.code());
    match (e.class(), &e) {
        (_, Error::Io { .. }) => PyOSError::new_err(msg),
        (ErrorClass::Numeric, _) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn placement(name: &str) -> PyResult<Placement> {
    match name {
        "nearest" => Ok(Placement::Nearest),
        "sinc" => Ok(Placement::Sinc),
        other => Err(PyValueError::new_err(format!("unknown placement {other:?}"))),
    }
}

/// Impulse response of a shoebox room by the image method.
#[pyfunction]
#[pyo3(signature = (dims, source, mic, reflection, duration=1.0, max_order=None, placement="nearest", sample_rate=16000))]
#[allow(clippy::too_many_arguments)]
fn image_rir(
    dims: [f64; 3],
    source: [f64; 3],
    mic: [f64; 3],
    reflection: f64,
    duration: f64,
    max_order: Option<usize>,
    placement: &str,
    sample_rate: u32,
) -> PyResult<Vec<f64>> {
    let mut spec = RoomSpec::new(dims, source, mic, reflection);
    spec.sample_rate = sample_rate;
    let options = RirOptions {
        duration_s: duration,
        max_order,
        placement: self::placement(placement)?,
    };
    Ok(roomsim::image_method_with(&spec, &options).map_err(py_err)?.taps)
}

/// Sampled rooms as `(dims, source, mic, reflection)` tuples.
#[pyfunction]
#[pyo3(signature = (room_set, rooms, per_room, seed=0))]
fn sample_rooms(
    room_set: &str,
    rooms: usize,
    per_room: usize,
    seed: u64,
) -> PyResult<Vec<([f64; 3], [f64; 3], [f64; 3], f64)>> {
    let set: RoomSet = room_set.parse().map_err(py_err)?;
    let specs = roomsim::sample_rooms(set, rooms, per_room, seed).map_err(py_err)?;
    Ok(specs.into_iter().map(|s| (s.dims, s.source, s.mic, s.reflection)).collect())
}

/// Reverberation time in seconds from the Schroeder decay.
#[pyfunction]
#[pyo3(signature = (taps, sample_rate=16000))]
fn t60(taps: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    let rir = roomsim::Rir::from_taps(taps, sample_rate).map_err(py_err)?;
    roomsim::t60(&rir).map_err(py_err)
}

/// Full linear convolution.
#[pyfunction]
fn fft_convolve(x: Vec<f64>, h: Vec<f64>) -> Vec<f64> {
    reverbkit::augment::fft_convolve(&x, &h)
}

/// 80-dim log-Mel frames (10 ms shift) of 16 kHz samples.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate=16000))]
fn logmel(samples: Vec<f32>, sample_rate: u32) -> PyResult<Vec<Vec<f32>>> {
    let clip = AudioClip::new("py", samples, sample_rate).map_err(py_err)?;
    let f = reverbkit::sigproc::logmel(&clip, &LogMelConfig::default()).map_err(py_err)?;
    Ok(f.frames.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Percentage of frames whose labels differ.
#[pyfunction]
fn frame_error_rate(hyp: Vec<usize>, reference: Vec<usize>) -> PyResult<f64> {
    reverbkit::models::frame_error_rate(&hyp, &reference).map_err(py_err)
}

/// Runs the grid described by a JSON config and returns the text report.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None))]
fn run_grid(py: Python<'_>, config: PathBuf, output_dir: Option<PathBuf>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::read(&config).map_err(py_err)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let report = py.detach(|| grid(&cfg)).map_err(py_err)?;
    Ok(report.to_text())
}

#[pymodule]
fn reverbkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(image_rir, m)?)?;
    m.add_function(wrap_pyfunction!(sample_rooms, m)?)?;
    m.add_function(wrap_pyfunction!(t60, m)?)?;
    m.add_function(wrap_pyfunction!(fft_convolve, m)?)?;
    m.add_function(wrap_pyfunction!(logmel, m)?)?;
    m.add_function(wrap_pyfunction!(frame_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add("SAMPLE_RATE", reverbkit::sigproc::SAMPLE_RATE)?;
    Ok(())
}
