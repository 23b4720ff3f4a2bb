//! Labeled datasets, splits, pixel-permutation tasks and synthetic stand-ins.

pub mod idx;

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{fisher_yates_permutation, Prng};

pub use idx::{load_idx_images, load_idx_labels};

/// Pixels per 28×28 image.
pub const IMAGE_DIM: usize = 784;

/// Task seed reserved for the unpermuted task.
pub const IDENTITY_TASK_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        if inputs.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{name}: {} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label { label, num_classes });
        }
        if let Some(v) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("{name}: input value {v} outside [0, 1]")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Copy of the listed rows, in the given order.
    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("empty subset".into()));
        }
        let (x, y) = gather(self, rows, None)?;
        Ok(Self {
            inputs: x,
            labels: y,
            num_classes: self.num_classes,
            name: name.into(),
        })
    }
}

/// Loads an IDX image/label pair and checks labels against `num_classes`.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    name: &str,
    num_classes: usize,
) -> Result<LabeledDataset> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels)?;
    LabeledDataset::new(name, x, y, num_classes)
}

/// Loads `<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn load_mnist_layout(dir: &Path, name: &str) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_idx_dataset(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        &format!("{name}-train"),
        10,
    )?;
    let test = load_idx_dataset(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        &format!("{name}-test"),
        10,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded shuffle of `0..n` cut into `⌊fraction·n⌋` and the remainder.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let order = fisher_yates_permutation(&mut Prng::new(spec.seed), n)?;
    let cut = (spec.train_fraction * n as f64).floor() as usize;
    let (a, b) = order.split_at(cut);
    Ok((a.to_vec(), b.to_vec()))
}

pub fn split_train_validation(
    ds: &LabeledDataset,
    spec: SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, val) = split_indices(ds.len(), spec)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument(format!(
            "split of {} examples at {} leaves an empty side",
            ds.len(),
            spec.train_fraction
        )));
    }
    Ok((
        ds.subset(&train, format!("{}-train", ds.name))?,
        ds.subset(&val, format!("{}-validation", ds.name))?,
    ))
}

/// `out[i] = image[perm[i]]`.
pub fn apply_permutation(image: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&p| image[p]).collect()
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[derive(Debug, Clone)]
pub struct PermutationTask {
    pub base: Arc<LabeledDataset>,
    pub pixel_permutation: Arc<Vec<usize>>,
    pub task_seed: u64,
}

/// Permutation drawn from `task_seed`; [`IDENTITY_TASK_SEED`] gives the
/// original images.
pub fn make_permuted_task(base: Arc<LabeledDataset>, task_seed: u64) -> Result<PermutationTask> {
    if base.dim() != IMAGE_DIM {
        return Err(Error::shape(
            "make_permuted_task",
            format!("inputs have {} features, expected {IMAGE_DIM}", base.dim()),
        ));
    }
    let perm = if task_seed == IDENTITY_TASK_SEED {
        (0..IMAGE_DIM).collect()
    } else {
        fisher_yates_permutation(&mut Prng::new(task_seed), IMAGE_DIM)?
    };
    Ok(PermutationTask {
        base,
        pixel_permutation: Arc::new(perm),
        task_seed,
    })
}

fn gather(
    ds: &LabeledDataset,
    rows: &[usize],
    perm: Option<&[usize]>,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let dim = ds.dim();
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for &r in rows {
        if r >= ds.len() {
            return Err(Error::Index(format!("row {r} of {} in {}", ds.len(), ds.name)));
        }
        let src = ds.inputs.row(r);
        match perm {
            Some(p) => data.extend(p.iter().map(|&i| src[i])),
            None => data.extend_from_slice(src),
        }
        labels.push(ds.labels[r]);
    }
    Ok((DenseMatrix::new(rows.len(), dim, data)?, labels))
}

/// A read-only window onto a dataset: an optional row subset and an optional
/// pixel permutation applied when rows are read. Images are never copied.
#[derive(Debug, Clone)]
pub struct TaskView {
    dataset: Arc<LabeledDataset>,
    rows: Option<Arc<Vec<usize>>>,
    permutation: Option<Arc<Vec<usize>>>,
}

impl TaskView {
    pub fn new(dataset: Arc<LabeledDataset>) -> Self {
        Self {
            dataset,
            rows: None,
            permutation: None,
        }
    }

    pub fn from_task(task: &PermutationTask) -> Self {
        let identity = task.pixel_permutation.iter().enumerate().all(|(i, &p)| i == p);
        Self {
            dataset: task.base.clone(),
            rows: None,
            permutation: (!identity).then(|| task.pixel_permutation.clone()),
        }
    }

    pub fn with_rows(&self, rows: Vec<usize>) -> Result<Self> {
        let base_rows: Vec<usize> = match &self.rows {
            Some(existing) => rows
                .iter()
                .map(|&r| {
                    existing
                        .get(r)
                        .copied()
                        .ok_or_else(|| Error::Index(format!("view row {r}")))
                })
                .collect::<Result<_>>()?,
            None => rows,
        };
        if let Some(&bad) = base_rows.iter().find(|&&r| r >= self.dataset.len()) {
            return Err(Error::Index(format!("row {bad} of {}", self.dataset.len())));
        }
        Ok(Self {
            dataset: self.dataset.clone(),
            rows: Some(Arc::new(base_rows)),
            permutation: self.permutation.clone(),
        })
    }

    pub fn with_permutation(&self, perm: Arc<Vec<usize>>) -> Result<Self> {
        if perm.len() != self.dataset.dim() {
            return Err(Error::shape(
                "TaskView::with_permutation",
                format!("{} indices for {} features", perm.len(), self.dataset.dim()),
            ));
        }
        Ok(Self {
            dataset: self.dataset.clone(),
            rows: self.rows.clone(),
            permutation: Some(perm),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.as_ref().map_or(self.dataset.len(), |r| r.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes
    }

    pub fn name(&self) -> &str {
        &self.dataset.name
    }

    pub fn dataset(&self) -> &Arc<LabeledDataset> {
        &self.dataset
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref().map(Vec::as_slice)
    }

    /// Rows `positions` of this view (positions are view-relative).
    pub fn batch(&self, positions: &[usize]) -> Result<(DenseMatrix, Vec<usize>)> {
        let base: Vec<usize> = match &self.rows {
            Some(rows) => positions
                .iter()
                .map(|&p| rows.get(p).copied().ok_or_else(|| Error::Index(format!("view row {p}"))))
                .collect::<Result<_>>()?,
            None => positions.to_vec(),
        };
        gather(&self.dataset, &base, self.permutation())
    }

    pub fn label(&self, position: usize) -> usize {
        let r = self.rows.as_ref().map_or(position, |rows| rows[position]);
        self.dataset.labels[r]
    }

    /// Materializes the view as a standalone dataset.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let all: Vec<usize> = (0..self.len()).collect();
        let (inputs, labels) = self.batch(&all)?;
        LabeledDataset::new(self.name(), inputs, labels, self.num_classes())
    }
}

/// Class-conditional generator: each class is a mixture of fixed prototype
/// means, samples add isotropic Gaussian noise and are clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub modes_per_class: usize,
    /// Fraction of non-zero coordinates per prototype; 1.0 draws dense
    /// means uniformly in `[0, 1]`, below that the active coordinates are
    /// drawn from `[0.5, 1]` and the rest are 0.
    pub density: f64,
    /// Standard deviation of the per-coordinate noise.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn gaussians(num_classes: usize, dim: usize, noise: f64) -> Self {
        Self {
            num_classes,
            dim,
            modes_per_class: 1,
            density: 1.0,
            noise,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.modes_per_class == 0 {
            return Err(Error::Argument(format!("synthetic counts must be positive: {self:?}")));
        }
        if !(self.density > 0.0 && self.density <= 1.0) || !(self.noise >= 0.0) {
            return Err(Error::Argument(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SyntheticSpec,
    /// `means[class][mode]`
    means: Vec<Vec<Vec<f64>>>,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSpec, rng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let mut proto = || -> Vec<f64> {
            (0..spec.dim)
                .map(|_| {
                    if spec.density >= 1.0 {
                        rng.next_f64()
                    } else if rng.next_f64() < spec.density {
                        0.5 + 0.5 * rng.next_f64()
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let means = (0..spec.num_classes)
            .map(|_| (0..spec.modes_per_class).map(|_| proto()).collect())
            .collect();
        Ok(Self { spec, means })
    }

    pub fn mean(&self, class: usize, mode: usize) -> &[f64] {
        &self.means[class][mode]
    }

    /// Exactly `per_class` examples of each class, classes interleaved.
    pub fn sample(&self, per_class: usize, name: &str, rng: &mut Prng) -> Result<LabeledDataset> {
        if per_class == 0 {
            return Err(Error::Argument("per_class must be positive".into()));
        }
        let c = self.spec.num_classes;
        let mut data = Vec::with_capacity(per_class * c * self.spec.dim);
        let mut labels = Vec::with_capacity(per_class * c);
        for _ in 0..per_class {
            for class in 0..c {
                let mode = rng.below(self.spec.modes_per_class);
                let mean = &self.means[class][mode];
                data.extend(mean.iter().map(|&m| {
                    let v = if self.spec.noise > 0.0 {
                        m + self.spec.noise * rng.normal()
                    } else {
                        m
                    };
                    v.clamp(0.0, 1.0)
                }));
                labels.push(class);
            }
        }
        let inputs = DenseMatrix::new(labels.len(), self.spec.dim, data)?;
        LabeledDataset::new(name, inputs, labels, c)
    }
}

/// Single-mode Gaussian classes around dense random means.
pub fn synthetic_gaussians(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    noise: f64,
    rng: &mut Prng,
) -> Result<LabeledDataset> {
    let source = SyntheticSource::new(SyntheticSpec::gaussians(num_classes, dim, noise), rng)?;
    source.sample(per_class, "synthetic-gaussians", rng)
}

/// Side length of generated glyph images.
pub const GLYPH_SIDE: usize = 28;

/// Generator of 28×28 stroke images: every class is a fixed set of line
/// strokes; each sample jitters the stroke endpoints, shifts the glyph,
/// scales its intensity and adds pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub num_classes: usize,
    pub strokes_per_class: usize,
    /// Stroke half-width in pixels.
    pub stroke_width: f64,
    /// Per-endpoint jitter, uniform in `±jitter` pixels.
    pub jitter: f64,
    /// Whole-glyph translation, uniform integer in `±max_shift`.
    pub max_shift: i32,
    pub noise: f64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            strokes_per_class: 3,
            stroke_width: 1.2,
            jitter: 1.5,
            max_shift: 2,
            noise: 0.05,
        }
    }
}

type Stroke = [(f64, f64); 2];

#[derive(Debug, Clone)]
pub struct GlyphSource {
    spec: GlyphSpec,
    templates: Vec<Vec<Stroke>>,
}

impl GlyphSource {
    pub fn new(spec: GlyphSpec, rng: &mut Prng) -> Result<Self> {
        if spec.num_classes == 0 || spec.strokes_per_class == 0 {
            return Err(Error::Argument(format!("glyph counts must be positive: {spec:?}")));
        }
        if !(spec.stroke_width > 0.0) || !(spec.jitter >= 0.0) || spec.max_shift < 0 || !(spec.noise >= 0.0) {
            return Err(Error::Argument(format!("invalid glyph spec {spec:?}")));
        }
        let point = |rng: &mut Prng| (6.0 + 16.0 * rng.next_f64(), 6.0 + 16.0 * rng.next_f64());
        let templates = (0..spec.num_classes)
            .map(|_| {
                (0..spec.strokes_per_class)
                    .map(|_| [point(rng), point(rng)])
                    .collect()
            })
            .collect();
        Ok(Self { spec, templates })
    }

    pub fn spec(&self) -> &GlyphSpec {
        &self.spec
    }

    fn render(&self, class: usize, rng: &mut Prng, out: &mut Vec<f64>) {
        let s = &self.spec;
        let span = (2 * s.max_shift + 1) as usize;
        let dx = rng.below(span) as f64 - s.max_shift as f64;
        let dy = rng.below(span) as f64 - s.max_shift as f64;
        let j = |rng: &mut Prng| s.jitter * (2.0 * rng.next_f64() - 1.0);
        let strokes: Vec<Stroke> = self.templates[class]
            .iter()
            .map(|[a, b]| {
                [
                    (a.0 + dx + j(rng), a.1 + dy + j(rng)),
                    (b.0 + dx + j(rng), b.1 + dy + j(rng)),
                ]
            })
            .collect();
        let intensity = 0.7 + 0.3 * rng.next_f64();
        for r in 0..GLYPH_SIDE {
            for c in 0..GLYPH_SIDE {
                let p = (c as f64, r as f64);
                let d = strokes
                    .iter()
                    .map(|st| segment_distance(p, st[0], st[1]))
                    .fold(f64::INFINITY, f64::min);
                let ink = intensity * (-(d * d) / (2.0 * s.stroke_width * s.stroke_width)).exp();
                let v = if s.noise > 0.0 { ink + s.noise * rng.normal() } else { ink };
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }

    /// Exactly `per_class` images of each class, classes interleaved.
    pub fn sample(&self, per_class: usize, name: &str, rng: &mut Prng) -> Result<LabeledDataset> {
        if per_class == 0 {
            return Err(Error::Argument("per_class must be positive".into()));
        }
        let c = self.spec.num_classes;
        let mut data = Vec::with_capacity(per_class * c * IMAGE_DIM);
        let mut labels = Vec::with_capacity(per_class * c);
        for _ in 0..per_class {
            for class in 0..c {
                self.render(class, rng, &mut data);
                labels.push(class);
            }
        }
        let inputs = DenseMatrix::new(labels.len(), IMAGE_DIM, data)?;
        LabeledDataset::new(name, inputs, labels, c)
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * vx - p.0, a.1 + t * vy - p.1);
    (qx * qx + qy * qy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset(n: usize) -> LabeledDataset {
        let inputs =
            DenseMatrix::new(n, 2, (0..2 * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        LabeledDataset::new("small", inputs, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let x = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            LabeledDataset::new("d", x.clone(), vec![0, 5], 3),
            Err(Error::Label { label: 5, .. })
        ));
        assert!(LabeledDataset::new("d", x, vec![0], 3).is_err());
        let big = DenseMatrix::from_rows(&[[1.5]]).unwrap();
        assert!(LabeledDataset::new("d", big, vec![0], 1).is_err());
    }

    #[test]
    fn split_sizes_and_cover() {
        let ds = small_dataset(10);
        let (a, b) = split_indices(10, SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let (t, v) = split_train_validation(&ds, SplitSpec::default()).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!(split_indices(10, SplitSpec::default()).unwrap(), (a, b));
    }

    #[test]
    fn split_depends_on_seed() {
        let a = split_indices(1000, SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        let b = split_indices(1000, SplitSpec { train_fraction: 0.8, seed: 2 }).unwrap();
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn split_errors() {
        assert!(split_indices(0, SplitSpec::default()).is_err());
        assert!(split_indices(5, SplitSpec { train_fraction: 1.0, seed: 0 }).is_err());
    }

    fn image_dataset(n: usize, rng: &mut Prng) -> Arc<LabeledDataset> {
        let data = (0..n * IMAGE_DIM).map(|_| rng.next_f64()).collect();
        Arc::new(
            LabeledDataset::new(
                "img",
                DenseMatrix::new(n, IMAGE_DIM, data).unwrap(),
                vec![0; n],
                10,
            )
            .unwrap(),
        )
    }

    #[test]
    fn permuted_task_conventions() {
        let mut rng = Prng::new(1);
        let base = image_dataset(3, &mut rng);
        let t0 = make_permuted_task(base.clone(), IDENTITY_TASK_SEED).unwrap();
        let view = TaskView::from_task(&t0);
        assert!(view.permutation().is_none());
        assert_eq!(view.batch(&[1]).unwrap().0.row(0), base.inputs.row(1));

        let t1 = make_permuted_task(base.clone(), 11).unwrap();
        let t2 = make_permuted_task(base.clone(), 12).unwrap();
        assert_ne!(t1.pixel_permutation, t2.pixel_permutation);

        let img = base.inputs.row(2);
        let permuted = apply_permutation(img, &t1.pixel_permutation);
        let back = apply_permutation(&permuted, &invert_permutation(&t1.pixel_permutation));
        assert_eq!(back, img);

        let mut a = permuted.clone();
        let mut b = img.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);

        let v1 = TaskView::from_task(&t1);
        assert_eq!(v1.batch(&[2]).unwrap().0.row(0), permuted.as_slice());

        let narrow = Arc::new(small_dataset(4));
        assert!(matches!(make_permuted_task(narrow, 3), Err(Error::Shape { .. })));
    }

    #[test]
    fn views_compose_rows() {
        let ds = Arc::new(small_dataset(9));
        let v = TaskView::new(ds.clone()).with_rows(vec![8, 6, 4, 2]).unwrap();
        let inner = v.with_rows(vec![1, 3]).unwrap();
        let (x, y) = inner.batch(&[0, 1]).unwrap();
        assert_eq!(x.row(0), ds.inputs.row(6));
        assert_eq!(y, vec![ds.labels[6], ds.labels[2]]);
        assert_eq!(inner.label(1), ds.labels[2]);
        assert!(v.with_rows(vec![4]).is_err());
        assert!(inner.batch(&[2]).is_err());
    }

    #[test]
    fn zero_noise_points_sit_on_their_mean() {
        let mut rng = Prng::new(3);
        let src = SyntheticSource::new(SyntheticSpec::gaussians(2, 2, 0.0), &mut rng).unwrap();
        let ds = src.sample(5, "z", &mut rng).unwrap();
        for r in 0..ds.len() {
            assert_eq!(ds.inputs.row(r), src.mean(ds.labels[r], 0));
        }
    }

    #[test]
    fn synthetic_label_histogram_is_exact() {
        let mut rng = Prng::new(4);
        let ds = synthetic_gaussians(4, 13, 5, 0.2, &mut rng).unwrap();
        for c in 0..4 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 13);
        }
        assert!(ds.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(synthetic_gaussians(0, 1, 1, 0.1, &mut rng).is_err());
        assert!(synthetic_gaussians(2, 0, 1, 0.1, &mut rng).is_err());
    }
}
