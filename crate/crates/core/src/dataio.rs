//! Dataset manifests, CSV feature matrices, model files and synthetic data.
//!
//! A manifest is a JSON document
//!
//! ```json
//! { "dimension": 30,
//!   "sets": [ { "id": "alice_01", "label": "alice", "file": "alice_01.csv" } ] }
//! ```
//!
//! where each `file` (relative to the manifest) is a header-less CSV with one
//! row of `dimension` numbers per image. `label` may be omitted for test sets.
//!
//! Model files are versioned JSON (`format_version` 1). Basis matrices are
//! stored row-major with explicit `dimension` and `rank`; floats use the
//! shortest representation that parses back to the same bits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::{AffineHull, ImageSet, SetRepresentation};
use crate::solver::SolverConfig;
use crate::trainer::{SetRecord, Sigma, TrainConfig, TrainDiagnostics, TrainedModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Labeled (or partly unlabeled) collection of image sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sets: Vec<ImageSet>,
    /// Class names indexed by class index.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn dim(&self) -> Option<usize> {
        self.sets.first().map(ImageSet::dim)
    }

    pub fn label_name(&self, set: &ImageSet) -> Option<&str> {
        set.label.map(|l| self.label_names[l].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dimension: usize,
    pub sets: Vec<ManifestEntry>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temporary file and a rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("'{}' is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::input(format!("{}: malformed manifest: {e}", path.display())))?;
    if manifest.dimension == 0 {
        return Err(Error::input(format!("{}: dimension must be at least 1", path.display())));
    }
    let mut seen = HashSet::new();
    for entry in &manifest.sets {
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::input(format!("{}: duplicate set id '{}'", path.display(), entry.id)));
        }
    }
    Ok(manifest)
}

/// Reads a header-less CSV with one image per row into a `dim x rows` matrix.
pub fn read_matrix_csv(path: &Path, dim: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() != dim {
            return Err(Error::input(format!(
                "{}:{line}: expected {dim} values, found {}",
                path.display(),
                record.len()
            )));
        }
        for cell in record.iter() {
            let x: f64 = cell.parse().map_err(|_| {
                Error::input(format!("{}:{line}: non-numeric cell '{cell}'", path.display()))
            })?;
            if !x.is_finite() {
                return Err(Error::input(format!("{}:{line}: non-finite value '{cell}'", path.display())));
            }
            values.push(x);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::input(format!("{}: no rows", path.display())));
    }
    // rows are images, stored as columns
    Ok(DMatrix::from_column_slice(dim, rows, &values))
}

pub fn write_matrix_csv(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for col in data.column_iter() {
        let row: Vec<String> = col.iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads every set listed in the manifest, in manifest order. Labels are
/// mapped to indices in order of first appearance.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut label_names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut sets = Vec::with_capacity(manifest.sets.len());
    for entry in &manifest.sets {
        let label = entry.label.as_ref().map(|name| {
            *index.entry(name.clone()).or_insert_with(|| {
                label_names.push(name.clone());
                label_names.len() - 1
            })
        });
        let data = read_matrix_csv(&base.join(&entry.file), manifest.dimension)?;
        sets.push(ImageSet::new(entry.id.clone(), label, data)?);
    }
    Ok(Dataset { sets, label_names })
}

/// Writes one CSV per set (`<id>.csv`) plus a manifest into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dimension = dataset.dim().ok_or_else(|| Error::input("cannot write an empty dataset"))?;
    let mut entries = Vec::with_capacity(dataset.sets.len());
    for set in &dataset.sets {
        let file = PathBuf::from(format!("{}.csv", set.id));
        write_matrix_csv(&dir.join(&file), &set.data)?;
        entries.push(ManifestEntry {
            id: set.id.clone(),
            label: dataset.label_name(set).map(str::to_string),
            file,
        });
    }
    let manifest = Manifest { dimension, sets: entries };
    let path = dir.join(manifest_name);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    outer_iters: usize,
    lambda: f64,
    gamma: f64,
    eta: f64,
    l0: f64,
    max_inner_iters: usize,
    tol: f64,
    /// `null` means the band-width was chosen automatically.
    sigma: Option<f64>,
    /// Factor on the automatic band-width; `null` for a fixed one.
    sigma_scale: Option<f64>,
    energy: f64,
    seed: u64,
    freeze_probabilities: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile {
    id: String,
    label: usize,
    n_images: usize,
    rank: usize,
    mean: Vec<f64>,
    /// `dimension x rank`, row-major.
    basis: Vec<f64>,
    alpha: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnosticsFile {
    objective_trace: Vec<f64>,
    passes: usize,
    solver_invocations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    dimension: usize,
    labels: Vec<String>,
    sigma: f64,
    config: ConfigFile,
    sets: Vec<SetFile>,
    diagnostics: DiagnosticsFile,
}

fn model_to_file(model: &TrainedModel) -> Result<ModelFile> {
    let c = &model.config;
    let dimension = model.dim();
    let mut sets = Vec::with_capacity(model.records.len());
    for rec in &model.records {
        let rank = rec.hull.rank();
        let mut basis = Vec::with_capacity(dimension * rank);
        for r in 0..dimension {
            basis.extend(rec.hull.basis.row(r).iter());
        }
        sets.push(SetFile {
            id: rec.id.clone(),
            label: rec.label,
            n_images: rec.rep.alpha.len(),
            rank,
            mean: rec.hull.mean.iter().copied().collect(),
            basis,
            alpha: rec.rep.alpha.iter().copied().collect(),
            v: rec.rep.v.iter().copied().collect(),
        });
    }
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dimension,
        labels: model.label_names.clone(),
        sigma: model.sigma,
        config: ConfigFile {
            outer_iters: c.outer_iters,
            lambda: c.solver.lambda,
            gamma: c.solver.gamma,
            eta: c.solver.eta,
            l0: c.solver.l0,
            max_inner_iters: c.solver.max_inner_iters,
            tol: c.solver.tol,
            sigma: match c.sigma {
                Sigma::Auto { .. } => None,
                Sigma::Fixed(s) => Some(s),
            },
            sigma_scale: match c.sigma {
                Sigma::Auto { scale } => Some(scale),
                Sigma::Fixed(_) => None,
            },
            energy: c.energy,
            seed: c.seed,
            freeze_probabilities: c.freeze_probabilities,
        },
        sets,
        diagnostics: DiagnosticsFile {
            objective_trace: model.diagnostics.objective_trace.clone(),
            passes: model.diagnostics.passes,
            solver_invocations: model.diagnostics.solver_invocations,
        },
    };
    let all_finite = file.sets.iter().all(|s| {
        s.mean.iter().chain(&s.basis).chain(&s.alpha).chain(&s.v).all(|x| x.is_finite())
    }) && file.sigma.is_finite()
        && file.diagnostics.objective_trace.iter().all(|x| x.is_finite());
    if !all_finite {
        return Err(Error::input("model contains non-finite values and cannot be saved"));
    }
    Ok(file)
}

fn model_from_file(file: ModelFile) -> Result<TrainedModel> {
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::input(format!(
            "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let dim = file.dimension;
    let mut records = Vec::with_capacity(file.sets.len());
    for s in file.sets {
        let shapes_ok = s.mean.len() == dim
            && s.basis.len() == dim * s.rank
            && s.alpha.len() == s.n_images
            && s.v.len() == s.rank
            && s.label < file.labels.len();
        if !shapes_ok {
            return Err(Error::input(format!("model entry '{}' has inconsistent shapes", s.id)));
        }
        let hull = AffineHull::new(DVector::from_vec(s.mean), DMatrix::from_row_slice(dim, s.rank, &s.basis))?;
        records.push(SetRecord {
            id: s.id,
            label: s.label,
            hull,
            rep: SetRepresentation { alpha: DVector::from_vec(s.alpha), v: DVector::from_vec(s.v) },
        });
    }
    let c = file.config;
    let config = TrainConfig {
        outer_iters: c.outer_iters,
        solver: SolverConfig {
            lambda: c.lambda,
            gamma: c.gamma,
            eta: c.eta,
            l0: c.l0,
            max_inner_iters: c.max_inner_iters,
            tol: c.tol,
        },
        sigma: match (c.sigma, c.sigma_scale) {
            (Some(s), None) => Sigma::Fixed(s),
            (None, Some(scale)) => Sigma::Auto { scale },
            _ => return Err(Error::input("model config must set exactly one of sigma and sigma_scale")),
        },
        energy: c.energy,
        seed: c.seed,
        freeze_probabilities: c.freeze_probabilities,
    };
    config.solver.validate()?;
    Ok(TrainedModel {
        records,
        label_names: file.labels,
        config,
        sigma: file.sigma,
        diagnostics: TrainDiagnostics {
            objective_trace: file.diagnostics.objective_trace,
            passes: file.diagnostics.passes,
            solver_invocations: file.diagnostics.solver_invocations,
        },
    })
}

pub fn model_to_string(model: &TrainedModel) -> Result<String> {
    let file = model_to_file(model)?;
    let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
    text.push('\n');
    Ok(text)
}

pub fn model_from_str(text: &str) -> Result<TrainedModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::input(format!("malformed model file: {e}")))?;
    model_from_file(file)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    write_atomic(path, model_to_string(model)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    model_from_str(&read_to_string(path)?).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parameters of the synthetic image-set generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub sets_per_class: usize,
    /// Additional held-out sets per class, drawn from the same model.
    pub test_sets_per_class: usize,
    pub images_min: usize,
    pub images_max: usize,
    pub dimension: usize,
    pub subspace_rank: usize,
    /// Minimum distance between class centers.
    pub class_separation: f64,
    /// Standard deviation of the isotropic per-pixel noise.
    pub within_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            sets_per_class: 5,
            test_sets_per_class: 5,
            images_min: 8,
            images_max: 12,
            dimension: 30,
            subspace_rank: 3,
            class_separation: 10.0,
            within_noise: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    /// Class centers, one per class.
    pub centers: Vec<DVector<f64>>,
}

/// Scale of subspace coefficients relative to `within_noise`.
const SUBSPACE_SCALE: f64 = 2.0;
const CENTER_RETRIES: usize = 1000;

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.sets_per_class == 0 || self.dimension == 0 || self.images_min == 0 {
            return Err(Error::input("classes, sets_per_class, dimension and images_min must be positive"));
        }
        if self.images_max < self.images_min {
            return Err(Error::input("images_max must be at least images_min"));
        }
        if self.subspace_rank > self.dimension {
            return Err(Error::input("subspace_rank cannot exceed dimension"));
        }
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.class_separation) || !ok(self.within_noise) {
            return Err(Error::input("class_separation and within_noise must be finite and non-negative"));
        }
        Ok(())
    }
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws a dataset in memory.
///
/// Class `c` has a center at distance `class_separation` from the origin
/// (centers pairwise at least `class_separation` apart) and a random
/// orthonormal subspace of rank `subspace_rank`. Each set picks an offset in
/// that subspace; each image adds its own subspace coefficients and isotropic
/// noise. Output is a pure function of the spec.
pub fn synthesize(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dimension;
    let sep = spec.class_separation;

    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut placed = None;
        for _ in 0..CENTER_RETRIES {
            let dir = normal_vector(&mut rng, d);
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let candidate = dir * (sep / norm);
            if centers.iter().all(|o| (o - &candidate).norm() >= sep) {
                placed = Some(candidate);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place class {c} at separation {sep} in dimension {d} after {CENTER_RETRIES} tries"
            ))
        })?;
        centers.push(center);
    }

    let r = spec.subspace_rank;
    let subspaces: Vec<DMatrix<f64>> = (0..spec.classes)
        .map(|_| {
            if r == 0 {
                DMatrix::zeros(d, 0)
            } else {
                DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q()
            }
        })
        .collect();

    let label_names: Vec<String> = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let noise = spec.within_noise;
    let coef_scale = SUBSPACE_SCALE * noise;
    let mut draw_sets = |tag: &str, per_class: usize| -> Result<Vec<ImageSet>> {
        let mut sets = Vec::with_capacity(spec.classes * per_class);
        for c in 0..spec.classes {
            for k in 0..per_class {
                let n = rng.random_range(spec.images_min..=spec.images_max);
                let offset = normal_vector(&mut rng, r) * coef_scale;
                let mut data = DMatrix::zeros(d, n);
                for mut col in data.column_iter_mut() {
                    let coeffs = &offset + normal_vector(&mut rng, r) * coef_scale;
                    let img = &centers[c] + &subspaces[c] * coeffs + normal_vector(&mut rng, d) * noise;
                    col.copy_from(&img);
                }
                sets.push(ImageSet::new(format!("class{c}_{tag}{k:02}"), Some(c), data)?);
            }
        }
        Ok(sets)
    };
    let train = draw_sets("train", spec.sets_per_class)?;
    let test = draw_sets("test", spec.test_sets_per_class)?;

    Ok(SyntheticData {
        train: Dataset { sets: train, label_names: label_names.clone() },
        test: Dataset { sets: test, label_names },
        centers,
    })
}

/// Writes `train.json` (and `test.json` when test sets were requested) plus
/// CSV files into `dir`. Returns the manifest paths.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    let data = synthesize(spec)?;
    let train = write_dataset(&data.train, dir, "train.json")?;
    let test = if data.test.sets.is_empty() {
        None
    } else {
        Some(write_dataset(&data.test, dir, "test.json")?)
    };
    Ok((train, test))
}
