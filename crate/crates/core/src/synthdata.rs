//! Procedural scenes: filled rotated rectangles on a noisy background, with
//! exact oriented ground truth.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::gaussian_sigma;
use crate::formats::{self, ClassList, FormatError, GrayImage};
use crate::geometry::{quad_to_polar, Point2, QuadBox};
use crate::postprocess::DEFAULT_THRESHOLD;

/// Attempts per object before placement gives up.
pub const PLACEMENT_ATTEMPTS: usize = 2000;
/// Supersampling factor per axis when rendering.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("placed {placed} of {requested} objects before running out of attempts")]
    Placement { placed: usize, requested: usize },
    #[error("malformed dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Size ranges (pixels) and fill intensity for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub intensity: f64,
}

impl ClassStyle {
    fn max_radius(&self) -> f64 {
        0.5 * self.width.1.hypot(self.height.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive object count range.
    pub num_objects: (usize, usize),
    pub classes: Vec<ClassStyle>,
    pub background: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    /// Minimum distance between object centres. `None` means 1.5 times the
    /// largest possible radius.
    pub min_separation: Option<f64>,
    /// Poles of distinct objects must fall in distinct cells of this stride.
    pub stride: usize,
}

impl SceneSpec {
    /// 64×64 scenes with two classes: long bright rectangles and squarer
    /// dim ones.
    pub fn desk(seed: u64) -> Self {
        Self {
            width: 64,
            height: 64,
            num_objects: (1, 3),
            classes: vec![
                ClassStyle {
                    width: (20.0, 28.0),
                    height: (8.0, 12.0),
                    intensity: 0.9,
                },
                ClassStyle {
                    width: (14.0, 20.0),
                    height: (12.0, 18.0),
                    intensity: 0.55,
                },
            ],
            background: 0.15,
            noise: 0.05,
            seed,
            min_separation: None,
            stride: 4,
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.classes
            .iter()
            .map(ClassStyle::max_radius)
            .fold(0.0, f64::max)
    }

    pub fn separation(&self) -> f64 {
        self.min_separation.unwrap_or(1.5 * self.max_radius())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.width == 0 || self.height == 0 || self.stride == 0 {
            return bad("width, height and stride must be positive");
        }
        if self.num_objects.0 > self.num_objects.1 {
            return bad("object count range is reversed");
        }
        if self.num_objects.1 > 0 && self.classes.is_empty() {
            return bad("objects requested but no classes declared");
        }
        for c in &self.classes {
            let ok = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite();
            if !ok(c.width) || !ok(c.height) {
                return bad("class size ranges must be positive and ordered");
            }
            if !(0.0..=1.0).contains(&c.intensity) {
                return bad("class intensity must lie in [0, 1]");
            }
        }
        let r = self.max_radius();
        if 2.0 * r >= self.width.min(self.height) as f64 {
            return bad("largest object does not fit inside the image with its radius as margin");
        }
        if !(0.0..=1.0).contains(&self.background) || !(self.noise >= 0.0 && self.noise.is_finite())
        {
            return bad("background must lie in [0, 1] and noise must be non-negative");
        }
        if self.separation() < 0.0 {
            return bad("separation must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Quantized to 8 bits so the in-memory image equals the file on disk.
    pub image: GrayImage,
    pub annotations: Vec<QuadBox>,
}

fn rectangle(center: Point2, w: f64, h: f64, angle: f64, class_id: usize) -> QuadBox {
    let (s, c) = angle.sin_cos();
    let u = (c * w / 2.0, s * w / 2.0);
    let v = (-s * h / 2.0, c * h / 2.0);
    let corners = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
        .map(|(a, b)| Point2::new(center.x + a * u.0 + b * v.0, center.y + a * u.1 + b * v.1));
    QuadBox::new(corners, class_id).expect("generated rectangle is valid")
}

fn contains(q: &QuadBox, x: f64, y: f64) -> bool {
    (0..4).all(|i| {
        let a = q.corners[i];
        let b = q.corners[(i + 1) % 4];
        (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) >= 0.0
    })
}

fn render(spec: &SceneSpec, objects: &[QuadBox], rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (spec.width, spec.height);
    let mut img = vec![spec.background; w * h];
    let step = 1.0 / SUPERSAMPLE as f64;
    let per_pixel = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for q in objects {
        let intensity = spec.classes[q.class_id].intensity;
        let xs = q.corners.iter().map(|p| p.x);
        let ys = q.corners.iter().map(|p| p.y);
        let x0 = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = (xs.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(w);
        let y0 = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y1 = (ys.fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(h);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = px as f64 + (sx as f64 + 0.5) * step;
                        let y = py as f64 + (sy as f64 + 0.5) * step;
                        hits += usize::from(contains(q, x, y));
                    }
                }
                let f = hits as f64 / per_pixel;
                let v = &mut img[py * w + px];
                *v += f * (intensity - spec.background);
            }
        }
    }
    let noise = Normal::new(0.0, spec.noise).expect("noise is finite and non-negative");
    let pixels = img
        .into_iter()
        .map(|v| {
            let v = (v + noise.sample(rng)).clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        })
        .collect();
    GrayImage {
        width: w,
        height: h,
        pixels,
    }
}

/// Radius in grid cells beyond which an object's target Gaussian stays
/// below the default extraction threshold.
fn blob_radius(quad: &QuadBox, stride: usize) -> f64 {
    let pbox = quad_to_polar(quad).expect("generated rectangle is non-degenerate");
    gaussian_sigma(&pbox, stride) * (2.0 * (1.0 / DEFAULT_THRESHOLD).ln()).sqrt()
}

/// One scene from `spec.seed`.
///
/// Besides the centre separation, same-class objects are kept far enough
/// apart that their target blobs never touch above the default extraction
/// threshold, so each object stays its own connected region.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticSample, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let requested = rng.random_range(spec.num_objects.0..=spec.num_objects.1);
    let sep = spec.separation();
    let d = spec.stride as f64;
    let mut objects: Vec<QuadBox> = Vec::with_capacity(requested);
    // (pole cell, class, radius in cells of the part of its target blob
    // that reaches the extraction threshold)
    let mut placed_cells: Vec<((i64, i64), usize, f64)> = Vec::with_capacity(requested);

    for _ in 0..requested {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class_id = rng.random_range(0..spec.classes.len());
            let style = &spec.classes[class_id];
            let w = rng.random_range(style.width.0..=style.width.1);
            let h = rng.random_range(style.height.0..=style.height.1);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let r = 0.5 * w.hypot(h);
            let cx = rng.random_range(r..=spec.width as f64 - r);
            let cy = rng.random_range(r..=spec.height as f64 - r);
            let center = Point2::new(cx, cy);
            let cell = ((cx / d).floor() as i64, (cy / d).floor() as i64);
            let quad = rectangle(center, w, h, angle, class_id);
            let blob = blob_radius(&quad, spec.stride);
            let clash = placed_cells.iter().any(|&(c, k, r)| {
                let dist = ((c.0 - cell.0) as f64).hypot((c.1 - cell.1) as f64);
                c == cell || (k == class_id && dist <= r + blob + SQRT_2)
            });
            if clash || objects.iter().any(|o| o.center().distance(center) < sep) {
                continue;
            }
            objects.push(quad);
            placed_cells.push((cell, class_id, blob));
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::Placement {
                placed: objects.len(),
                requested,
            });
        }
    }
    let image = render(spec, &objects, &mut rng);
    Ok(SyntheticSample {
        image,
        annotations: objects,
    })
}

/// Seed of image `index` in a dataset with `base_seed`: the first word of
/// ChaCha stream `index`.
pub fn derived_seed(base_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub num_objects: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SyntheticSample>,
    pub manifest: Vec<ManifestEntry>,
}

pub fn sample_name(index: usize) -> String {
    format!("img_{index:05}")
}

/// `n` scenes, image `i` seeded by [`derived_seed`]`(spec.seed, i)`.
pub fn generate_dataset(spec: &SceneSpec, n: usize) -> Result<Dataset, SynthError> {
    if n == 0 {
        return Err(SynthError::InvalidSpec(
            "dataset needs at least one image".into(),
        ));
    }
    let mut samples = Vec::with_capacity(n);
    let mut manifest = Vec::with_capacity(n);
    for i in 0..n {
        let seed = derived_seed(spec.seed, i);
        let sample = generate_scene(&SceneSpec {
            seed,
            ..spec.clone()
        })?;
        manifest.push(ManifestEntry {
            name: sample_name(i),
            seed,
            num_objects: sample.annotations.len(),
        });
        samples.push(sample);
    }
    Ok(Dataset { samples, manifest })
}

pub fn manifest_csv(manifest: &[ManifestEntry]) -> String {
    let mut s = String::from("name,image,labels,seed,objects\n");
    for m in manifest {
        let _ = writeln!(
            s,
            "{0},images/{0}.pgm,labels/{0}.txt,{1},{2}",
            m.name, m.seed, m.num_objects
        );
    }
    s
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || SynthError::Dataset(format!("manifest line {}", i + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(ManifestEntry {
            name: f[0].to_string(),
            seed: f[3].parse().map_err(|_| bad())?,
            num_objects: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Writes `images/`, `labels/`, `classes.txt` and `manifest.csv` under
/// `dir`. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    classes: &ClassList,
) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    fs::write(dir.join("classes.txt"), classes.to_text())?;
    for (sample, entry) in dataset.samples.iter().zip(&dataset.manifest) {
        formats::write_pgm(
            &dir.join("images").join(format!("{}.pgm", entry.name)),
            &sample.image,
        )?;
        let records = sample
            .annotations
            .iter()
            .map(|q| formats::record_from_quad(q, classes))
            .collect::<Result<Vec<_>, _>>()?;
        fs::write(
            dir.join("labels").join(format!("{}.txt", entry.name)),
            formats::format_annotations(&records),
        )?;
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest_csv(&dataset.manifest))?;
    Ok(path)
}

/// A dataset read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub classes: ClassList,
    pub names: Vec<String>,
    pub samples: Vec<SyntheticSample>,
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset, SynthError> {
    let classes = ClassList::parse(&fs::read_to_string(dir.join("classes.txt"))?);
    let manifest = parse_manifest(&fs::read_to_string(dir.join("manifest.csv"))?)?;
    let mut names = Vec::with_capacity(manifest.len());
    let mut samples = Vec::with_capacity(manifest.len());
    for m in manifest {
        let image = formats::read_pgm(&dir.join("images").join(format!("{}.pgm", m.name)))?;
        let parsed = formats::read_annotations(fs::File::open(
            dir.join("labels").join(format!("{}.txt", m.name)),
        )?)?;
        if let Some(w) = parsed.warnings.first() {
            return Err(SynthError::Dataset(format!(
                "{} line {}: {}",
                m.name, w.line, w.message
            )));
        }
        let annotations = parsed
            .records
            .iter()
            .map(|r| formats::quad_from_record(r, &classes))
            .collect::<Result<Vec<_>, _>>()?;
        names.push(m.name);
        samples.push(SyntheticSample { image, annotations });
    }
    Ok(LoadedDataset {
        classes,
        names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_objects_gives_noise_only() {
        let spec = SceneSpec {
            num_objects: (0, 0),
            ..SceneSpec::desk(3)
        };
        let s = generate_scene(&spec).unwrap();
        assert!(s.annotations.is_empty());
        assert_eq!(s.image.pixels.len(), 64 * 64);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::desk(42);
        assert_eq!(
            generate_scene(&spec).unwrap(),
            generate_scene(&spec).unwrap()
        );
        let other = generate_scene(&SceneSpec::desk(43)).unwrap();
        assert_ne!(generate_scene(&spec).unwrap(), other);
    }

    #[test]
    fn annotations_are_exact_rectangles_inside_image() {
        for seed in 0..50 {
            let s = generate_scene(&SceneSpec::desk(seed)).unwrap();
            for q in &s.annotations {
                let c = q.center();
                let radii: Vec<f64> = q.corners.iter().map(|p| p.distance(c)).collect();
                assert!(radii.iter().all(|r| (r - radii[0]).abs() < 1e-9));
                assert!(q
                    .corners
                    .iter()
                    .all(|p| p.x >= 0.0 && p.x <= 64.0 && p.y >= 0.0 && p.y <= 64.0));
            }
        }
    }

    #[test]
    fn object_centres_are_filled() {
        let spec = SceneSpec {
            noise: 0.0,
            ..SceneSpec::desk(11)
        };
        let s = generate_scene(&spec).unwrap();
        assert!(!s.annotations.is_empty());
        for q in &s.annotations {
            let c = q.center();
            let v = s.image.pixels[c.y as usize * 64 + c.x as usize];
            let want = (spec.classes[q.class_id].intensity * 255.0).round() as u8;
            assert_eq!(v, want);
        }
        assert_eq!(s.image.pixels[0], (0.15f64 * 255.0).round() as u8);
    }

    #[test]
    fn impossible_packing_is_placement_error() {
        let spec = SceneSpec {
            num_objects: (40, 40),
            ..SceneSpec::desk(1)
        };
        assert!(matches!(
            generate_scene(&spec),
            Err(SynthError::Placement { .. })
        ));
    }

    #[test]
    fn oversized_class_rejected() {
        let mut spec = SceneSpec::desk(1);
        spec.classes[0].width = (60.0, 70.0);
        assert!(matches!(
            generate_scene(&spec),
            Err(SynthError::InvalidSpec(_))
        ));
    }

    #[test]
    fn dataset_seeds_are_derived_per_image() {
        let spec = SceneSpec::desk(9);
        let d = generate_dataset(&spec, 3).unwrap();
        assert_eq!(d.manifest[1].seed, derived_seed(9, 1));
        let single = generate_scene(&SceneSpec {
            seed: derived_seed(9, 1),
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(d.samples[1], single);
        assert!(generate_dataset(&spec, 0).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(&SceneSpec::desk(5), 4).unwrap();
        let classes = ClassList::numbered(2);
        write_dataset(dir.path(), &d, &classes).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.classes, classes);
        assert_eq!(back.names.len(), 4);
        for (a, b) in back.samples.iter().zip(&d.samples) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.annotations.len(), b.annotations.len());
            for (qa, qb) in a.annotations.iter().zip(&b.annotations) {
                for (pa, pb) in qa.corners.iter().zip(&qb.corners) {
                    assert!(pa.distance(*pb) < 1e-5);
                }
            }
        }
    }
}
