use maskworld::inference::{self, DecodeConfig, Rect, Task};
use maskworld::{checkpoint, cli, data, formats, masking, tokenizer, training};
use maskworld::{ActionTrack, Mode, ModelConfig, PromptInput};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

fn err(e: maskworld::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py, S: serde::Serialize>(py: Python<'py>, value: &S) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

#[pyclass(name = "Video", from_py_object)]
#[derive(Clone)]
struct PyVideo(tokenizer::Video);

#[pymethods]
impl PyVideo {
    #[new]
    fn new(frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> PyResult<Self> {
        tokenizer::Video::new(frames, height, width, pixels).map(PyVideo).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        formats::read_video(&path).map(PyVideo).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        formats::write_video(&path, &self.0).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &formats::video_to_bytes(&self.0).map_err(err)?))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.frames, self.0.height, self.0.width)
    }

    #[getter]
    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.pixels)
    }

    fn pixel(&self, frame: usize, y: usize, x: usize) -> PyResult<(u8, u8, u8)> {
        if frame >= self.0.frames || y >= self.0.height || x >= self.0.width {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        let [r, g, b] = self.0.pixel(frame, y, x);
        Ok((r, g, b))
    }
}

#[pyclass(name = "TokenGrid", from_py_object)]
#[derive(Clone)]
struct PyTokenGrid(tokenizer::TokenGrid);

#[pymethods]
impl PyTokenGrid {
    #[new]
    fn new(frames: usize, th: usize, tw: usize, vocab: usize, tokens: Vec<u32>) -> PyResult<Self> {
        tokenizer::TokenGrid::new(frames, th, tw, vocab, tokens).map(PyTokenGrid).map_err(err)
    }

    #[staticmethod]
    fn masked(frames: usize, th: usize, tw: usize, vocab: usize) -> Self {
        PyTokenGrid(tokenizer::TokenGrid::masked(frames, th, tw, vocab))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        formats::read_tokens(&path).map(PyTokenGrid).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        formats::write_tokens(&path, &self.0).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.frames, self.0.th, self.0.tw)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.0.vocab
    }

    #[getter]
    fn mask_id(&self) -> u32 {
        self.0.mask_id()
    }

    #[getter]
    fn tokens(&self) -> Vec<u32> {
        self.0.tokens.clone()
    }

    fn masked_count(&self) -> usize {
        self.0.masked_count()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &PyTokenGrid) -> bool {
        self.0 == other.0
    }
}

#[pyclass(name = "Codebook", from_py_object)]
#[derive(Clone)]
struct PyCodebook(tokenizer::Codebook);

#[pymethods]
impl PyCodebook {
    /// Fits a codebook to every patch of the given videos.
    #[staticmethod]
    #[pyo3(signature = (videos, patch_size=8, vocab=512, seed=0))]
    fn fit(videos: Vec<PyVideo>, patch_size: usize, vocab: usize, seed: u64) -> PyResult<Self> {
        let mut patches = Vec::new();
        for v in &videos {
            patches.extend(tokenizer::extract_patches(&v.0, patch_size).map_err(err)?);
        }
        tokenizer::fit_codebook(&patches, patch_size, vocab, seed).map(PyCodebook).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        formats::read_codebook(&path).map(PyCodebook).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        formats::write_codebook(&path, &self.0).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.0.vocab
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.0.patch_size
    }

    fn encode(&self, video: &PyVideo) -> PyResult<PyTokenGrid> {
        tokenizer::encode_video(&video.0, &self.0).map(PyTokenGrid).map_err(err)
    }

    fn decode(&self, tokens: &PyTokenGrid) -> PyResult<PyVideo> {
        tokenizer::decode_tokens(&tokens.0, &self.0).map(PyVideo).map_err(err)
    }
}

#[pyclass(name = "Model")]
struct PyModel(maskworld::Model<f32>);

#[pymethods]
impl PyModel {
    /// Fresh model from an optional JSON model config.
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = parse(config)?;
        maskworld::Model::init(config, seed).map(PyModel).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(&path).map(|c| PyModel(c.model)).map_err(err)
    }

    #[pyo3(signature = (path, step=0))]
    fn save(&self, path: PathBuf, step: u64) -> PyResult<()> {
        checkpoint::save(&path, &self.0, step, None).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0.config)
    }

    fn param_count(&self) -> usize {
        use maskworld::params::Params;
        self.0.params.param_count()
    }

    /// Logits for every position, flattened `[frames * th * tw * vocab]`.
    #[pyo3(signature = (tokens, caption=None, actions=None, image_mode=false))]
    fn forward(
        &self,
        tokens: &PyTokenGrid,
        caption: Option<&str>,
        actions: Option<Vec<(f32, f32)>>,
        image_mode: bool,
    ) -> PyResult<Vec<f32>> {
        let prompt = PromptInput::new(caption, actions.map(|steps| ActionTrack { steps }), &self.0.config.prompt);
        let mode = if image_mode { Mode::Image } else { Mode::Video };
        Ok(self.0.forward(&tokens.0, &prompt, mode).map_err(err)?.0)
    }

    /// Runs one generation task; returns the decoded grid and a report dict.
    #[pyo3(signature = (task, patch_size=8, prompt=None, source=None, region=None, ratio=None, actions=None, decode=None))]
    #[allow(clippy::too_many_arguments)]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        task: &str,
        patch_size: usize,
        prompt: Option<String>,
        source: Option<PyTokenGrid>,
        region: Option<(usize, usize, usize, usize)>,
        ratio: Option<f64>,
        actions: Option<Vec<(f32, f32)>>,
        decode: Option<&str>,
    ) -> PyResult<(PyTokenGrid, Bound<'py, PyAny>)> {
        let task: Task = task.parse().map_err(err)?;
        let req = cli::GenerateRequest {
            task,
            prompt,
            source: source.map(|s| s.0),
            region: region.map(|(x, y, width, height)| Rect { x, y, width, height }),
            ratio,
            actions: actions.map(|steps| ActionTrack { steps }),
            decode: parse::<DecodeConfig>(decode)?,
        };
        let (grid, report) = cli::generate_tokens(&self.0, patch_size, &req).map_err(err)?;
        Ok((PyTokenGrid(grid), json_to_py(py, &report)?))
    }
}

/// One synthetic episode as `(video, caption, actions)`.
#[pyfunction]
#[pyo3(signature = (seed, config=None))]
fn generate_episode(seed: u64, config: Option<&str>) -> PyResult<(PyVideo, String, Vec<(f32, f32)>)> {
    let world: data::WorldConfig = parse(config)?;
    let e = data::generate_episode(&world, seed).map_err(err)?;
    Ok((PyVideo(e.video), e.caption, e.actions.steps))
}

/// `n` training mask rates drawn from a seeded generator.
#[pyfunction]
fn sample_mask_rates(n: usize, seed: u64) -> PyResult<Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| masking::sample_mask_rate(rng.random::<f64>()).map_err(err)).collect()
}

#[pyfunction]
fn inference_unmask_counts(masked: usize, steps: usize) -> PyResult<Vec<usize>> {
    Ok(masking::inference_unmask_counts(masked, steps).map_err(err)?.counts)
}

#[pyfunction]
fn cfg_logits(cond: Vec<f64>, uncond: Vec<f64>, guidance: f64) -> PyResult<Vec<f64>> {
    inference::cfg_logits(&cond, &uncond, guidance).map_err(err)
}

/// Finite-difference gradient check on a small 64-bit model.
#[pyfunction]
#[pyo3(signature = (coords=100, seed=0, eps=1e-5))]
fn gradcheck<'py>(py: Python<'py>, coords: usize, seed: u64, eps: f64) -> PyResult<Bound<'py, PyAny>> {
    let (model, batch) = cli::gradcheck_fixture(seed).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = training::finite_diff_gradcheck(&model, &batch, coords, eps, &mut rng).map_err(err)?;
    json_to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (frames=8, grid=8, steps=10, channels=16, layers=1, vocab=64, seed=0))]
#[allow(clippy::too_many_arguments)]
fn bench_decode<'py>(
    py: Python<'py>,
    frames: usize,
    grid: usize,
    steps: usize,
    channels: usize,
    layers: usize,
    vocab: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let model = cli::bench_model([frames, grid, grid], channels, layers, vocab, seed).map_err(err)?;
    let cfg = DecodeConfig { steps, seed, ..Default::default() };
    json_to_py(py, &inference::bench_decode(&model, frames, &cfg).map_err(err)?)
}

#[pymodule]
#[pyo3(name = "maskworld")]
fn maskworld_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVideo>()?;
    m.add_class::<PyTokenGrid>()?;
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_episode, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mask_rates, m)?)?;
    m.add_function(wrap_pyfunction!(inference_unmask_counts, m)?)?;
    m.add_function(wrap_pyfunction!(cfg_logits, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(bench_decode, m)?)?;
    Ok(())
}
