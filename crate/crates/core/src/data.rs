//! Fixation logs, ground-truth maps, per-subject ordering, synthetic
//! two-task datasets and the on-disk dataset layout.
//!
//! A dataset directory holds `images/<image_id>.png`, per-example ground
//! truth maps `maps/<subject_id>__<image_id>__t<task>.png`, the fixation log
//! `fixations.csv` and a `meta` file of `key=value` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_free::{parse_meta, write_meta};

use crate::error::{Error, Result};
use crate::metrics::{Fixation, SaliencyMap};
use crate::raster;

/// Ground-truth blur as a fraction of the image width.
pub const SIGMA_FRACTION: f64 = 0.04;
/// Gaussians are truncated beyond this many standard deviations.
pub const TRUNCATE_SIGMAS: f64 = 3.0;
/// Columns of the fixation log, in order.
pub const FIXATION_HEADER: [&str; 6] = ["image_id", "subject_id", "task_id", "x", "y", "ordinal"];

/// One recorded fixation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixationRecord {
    pub image_id: String,
    pub subject_id: String,
    pub task_id: usize,
    pub x: i64,
    pub y: i64,
    /// Presentation order within the subject's session.
    pub ordinal: u64,
}

/// One (subject, image, task) viewing with its target map.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image_id: String,
    pub subject_id: String,
    pub task: usize,
    /// Rank of this viewing within the subject's session.
    pub ordinal: usize,
    pub fixations: Vec<Fixation>,
    pub gt: SaliencyMap,
}

/// Which fixations a ground-truth map is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtMode {
    /// Each example's own fixations.
    #[default]
    PerSubject,
    /// All subjects' fixations on the same image and task.
    Pooled,
}

/// Images (channel-major RGB planes in `[0, 1]`) and examples at one square size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub size: usize,
    pub n_tasks: usize,
    /// Blur in pixels used for maps built from fixations.
    pub sigma: f64,
    pub images: BTreeMap<String, Vec<f64>>,
    pub examples: Vec<Example>,
}

/// Parses a fixation log. Rows must carry every header column; duplicate
/// `(subject, ordinal)` pairs are rejected.
pub fn load_fixations(path: &Path) -> Result<Vec<FixationRecord>> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_owned(), line, msg };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let mut column = [0usize; 6];
    for (slot, name) in column.iter_mut().zip(FIXATION_HEADER) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))?;
    }
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(column[i]).ok_or_else(|| parse_err(line, format!("missing `{}`", FIXATION_HEADER[i])));
        let number = |i: usize| -> Result<i64> {
            let raw = field(i)?;
            raw.parse().map_err(|_| parse_err(line, format!("`{}` is not an integer: {raw:?}", FIXATION_HEADER[i])))
        };
        let task = number(2)?;
        let ordinal = number(5)?;
        if task < 0 || ordinal < 0 {
            return Err(parse_err(line, "task_id and ordinal must be non-negative".into()));
        }
        let record = FixationRecord {
            image_id: field(0)?.to_owned(),
            subject_id: field(1)?.to_owned(),
            task_id: task as usize,
            x: number(3)?,
            y: number(4)?,
            ordinal: ordinal as u64,
        };
        if !seen.insert((record.subject_id.clone(), record.ordinal)) {
            return Err(parse_err(line, format!("duplicate ordinal {} for subject {}", record.ordinal, record.subject_id)));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records with the canonical header.
pub fn write_fixations(path: &Path, records: &[FixationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FIXATION_HEADER)?;
    for r in records {
        w.write_record([
            r.image_id.clone(),
            r.subject_id.clone(),
            r.task_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.ordinal.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Validates that integer coordinates lie inside a `width x height` image.
pub fn to_fixation(x: i64, y: i64, width: usize, height: usize) -> Result<Fixation> {
    if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
        return Err(Error::OutOfBounds { x, y, width, height });
    }
    Ok(Fixation::new(x as usize, y as usize))
}

/// Sum of unit-height Gaussians of standard deviation `sigma` (truncated at
/// three sigmas) centred on the fixations, max-normalized to `[0, 1]`.
pub fn build_gt_map(fixations: &[Fixation], width: usize, height: usize, sigma: f64) -> Result<SaliencyMap> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    if fixations.is_empty() {
        return Err(Error::DegenerateMap("ground truth needs at least one fixation"));
    }
    for f in fixations {
        to_fixation(f.x as i64, f.y as i64, width, height)?;
    }
    let centres: Vec<(f64, f64)> = fixations.iter().map(|f| (f.x as f64, f.y as f64)).collect();
    gaussian_map(&centres, width, height, sigma)
}

fn gaussian_map(centres: &[(f64, f64)], width: usize, height: usize, sigma: f64) -> Result<SaliencyMap> {
    let mut values = vec![0.0; width * height];
    let reach = TRUNCATE_SIGMAS * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for &(cx, cy) in centres {
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= reach * reach {
                    values[y * width + x] += (-d2 * inv).exp();
                }
            }
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateMap("ground truth has no mass inside the image"));
    }
    values.iter_mut().for_each(|v| *v /= max);
    SaliencyMap::new(width, height, values)
}

/// One subject's examples in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub subject_id: String,
    pub examples: Vec<Example>,
}

/// Splits examples into per-subject streams sorted by ordinal. Streams are
/// ordered by subject id. Ordinals must be unique and contiguous per subject.
pub fn order_for_training(examples: Vec<Example>) -> Result<Vec<Stream>> {
    let mut by_subject: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for e in examples {
        by_subject.entry(e.subject_id.clone()).or_default().push(e);
    }
    by_subject
        .into_iter()
        .map(|(subject_id, mut examples)| {
            examples.sort_by_key(|e| e.ordinal);
            for pair in examples.windows(2) {
                if pair[1].ordinal != pair[0].ordinal + 1 {
                    return Err(Error::Contract(format!(
                        "subject {subject_id}: ordinal {} follows {}",
                        pair[1].ordinal, pair[0].ordinal
                    )));
                }
            }
            Ok(Stream { subject_id, examples })
        })
        .collect()
}

/// Groups each subject's records (in ordinal order) into examples: a run of
/// consecutive records on the same image and task is one viewing.
/// Ground-truth maps are built with `sigma` pixels of blur.
pub fn examples_from_records(
    records: &[FixationRecord],
    width: usize,
    height: usize,
    sigma: f64,
    mode: GtMode,
) -> Result<Vec<Example>> {
    let mut by_subject: BTreeMap<&str, Vec<&FixationRecord>> = BTreeMap::new();
    for r in records {
        by_subject.entry(&r.subject_id).or_default().push(r);
    }
    let mut pooled: BTreeMap<(String, usize), Vec<Fixation>> = BTreeMap::new();
    let mut runs: Vec<(String, String, usize, Vec<Fixation>)> = Vec::new();
    let mut ranks: Vec<usize> = Vec::new();
    for (subject, mut rs) in by_subject {
        rs.sort_by_key(|r| r.ordinal);
        let mut rank = 0;
        for (i, r) in rs.iter().enumerate() {
            let f = to_fixation(r.x, r.y, width, height)?;
            pooled.entry((r.image_id.clone(), r.task_id)).or_default().push(f);
            let continues = i > 0 && rs[i - 1].image_id == r.image_id && rs[i - 1].task_id == r.task_id;
            if continues {
                runs.last_mut().expect("run exists").3.push(f);
            } else {
                runs.push((subject.to_owned(), r.image_id.clone(), r.task_id, vec![f]));
                ranks.push(rank);
                rank += 1;
            }
        }
    }
    runs.into_iter()
        .zip(ranks)
        .map(|((subject_id, image_id, task, fixations), ordinal)| {
            let source = match mode {
                GtMode::PerSubject => &fixations,
                GtMode::Pooled => &pooled[&(image_id.clone(), task)],
            };
            let gt = build_gt_map(source, width, height, sigma)?;
            Ok(Example { image_id, subject_id, task, ordinal, fixations, gt })
        })
        .collect()
}

/// Maps each `(image, task)` to a ground truth built from every subject's
/// fixations on it.
pub fn pooled_ground_truth(dataset: &Dataset) -> Result<BTreeMap<(String, usize), SaliencyMap>> {
    let mut pooled: BTreeMap<(String, usize), Vec<Fixation>> = BTreeMap::new();
    for e in &dataset.examples {
        pooled.entry((e.image_id.clone(), e.task)).or_default().extend_from_slice(&e.fixations);
    }
    pooled
        .into_iter()
        .map(|(key, fix)| Ok((key, build_gt_map(&fix, dataset.size, dataset.size, dataset.sigma)?)))
        .collect()
}

/// Bilinear resize of channel-major planes.
pub fn resize_image(planes: &[f64], channels: usize, size: usize, new_size: usize) -> Result<Vec<f64>> {
    let plane = size * size;
    if planes.len() != channels * plane {
        return Err(Error::shape("resize_image", &[planes.len()], &[channels, size, size]));
    }
    let mut out = Vec::with_capacity(channels * new_size * new_size);
    for c in 0..channels {
        out.extend(raster::resize_bilinear(&planes[c * plane..(c + 1) * plane], size, size, new_size, new_size)?);
    }
    Ok(out)
}

/// Bilinear resize followed by max-normalization.
pub fn resize_map(map: &SaliencyMap, width: usize, height: usize) -> Result<SaliencyMap> {
    if (map.width(), map.height()) == (width, height) {
        return Ok(map.clone());
    }
    let mut v = raster::resize_bilinear(map.values(), map.width(), map.height(), width, height)?;
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let max = v.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateMap("resized map has no mass"));
    }
    v.iter_mut().for_each(|x| *x /= max);
    SaliencyMap::new(width, height, v)
}

/// Rescales a pixel coordinate between image widths, keeping it in bounds.
pub fn resize_coordinate(v: usize, size: usize, new_size: usize) -> usize {
    let scaled = ((v as f64 + 0.5) * new_size as f64 / size as f64 - 0.5).round();
    (scaled.max(0.0) as usize).min(new_size - 1)
}

impl Dataset {
    /// Every image, map and fixation resampled to `new_size`.
    pub fn resized(&self, new_size: usize) -> Result<Dataset> {
        if new_size == self.size {
            return Ok(self.clone());
        }
        let images = self
            .images
            .iter()
            .map(|(k, v)| Ok((k.clone(), resize_image(v, 3, self.size, new_size)?)))
            .collect::<Result<_>>()?;
        let examples = self
            .examples
            .iter()
            .map(|e| {
                Ok(Example {
                    fixations: e
                        .fixations
                        .iter()
                        .map(|f| {
                            Fixation::new(resize_coordinate(f.x, self.size, new_size), resize_coordinate(f.y, self.size, new_size))
                        })
                        .collect(),
                    gt: resize_map(&e.gt, new_size, new_size)?,
                    ..e.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            size: new_size,
            n_tasks: self.n_tasks,
            sigma: self.sigma * new_size as f64 / self.size as f64,
            images,
            examples,
        })
    }

    /// Copy whose examples target the pooled map of their image and task.
    pub fn with_pooled_gt(&self) -> Result<Dataset> {
        let pooled = pooled_ground_truth(self)?;
        let mut out = self.clone();
        for e in &mut out.examples {
            e.gt = pooled[&(e.image_id.clone(), e.task)].clone();
        }
        Ok(out)
    }

    /// Image ids in sorted order.
    pub fn image_ids(&self) -> Vec<String> {
        self.images.keys().cloned().collect()
    }

    /// Splits by image: the last `held_out` image ids (sorted) form the
    /// second dataset. Ordinals are re-ranked per subject in both halves.
    pub fn split_by_image(&self, held_out: usize) -> Result<(Dataset, Dataset)> {
        let ids = self.image_ids();
        if held_out == 0 || held_out >= ids.len() {
            return Err(Error::Config(format!("cannot hold out {held_out} of {} images", ids.len())));
        }
        let test: BTreeSet<&String> = ids[ids.len() - held_out..].iter().collect();
        let part = |keep_test: bool| {
            let images = self.images.iter().filter(|(k, _)| test.contains(k) == keep_test).map(|(k, v)| (k.clone(), v.clone())).collect();
            let mut examples: Vec<Example> =
                self.examples.iter().filter(|e| test.contains(&e.image_id) == keep_test).cloned().collect();
            rerank(&mut examples);
            Dataset { size: self.size, n_tasks: self.n_tasks, sigma: self.sigma, images, examples }
        };
        Ok((part(false), part(true)))
    }

    /// Examples whose task is in `tasks` (all when empty), re-ranked.
    pub fn filter_tasks(&self, tasks: &[usize]) -> Dataset {
        let mut examples: Vec<Example> =
            self.examples.iter().filter(|e| tasks.is_empty() || tasks.contains(&e.task)).cloned().collect();
        rerank(&mut examples);
        Dataset { examples, ..self.clone() }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("maps"))?;
        for (id, planes) in &self.images {
            raster::write_rgb_png(&dir.join("images").join(format!("{id}.png")), planes, self.size, self.size)?;
        }
        let mut records = Vec::new();
        let mut next: BTreeMap<&str, u64> = BTreeMap::new();
        let streams = order_for_training(self.examples.clone())?;
        for s in &streams {
            for e in &s.examples {
                let path = dir.join("maps").join(map_file(&e.subject_id, &e.image_id, e.task));
                raster::write_gray_png(&path, e.gt.values(), self.size, self.size)?;
                for f in &e.fixations {
                    let ord = next.entry(&s.subject_id).or_insert(0);
                    records.push(FixationRecord {
                        image_id: e.image_id.clone(),
                        subject_id: e.subject_id.clone(),
                        task_id: e.task,
                        x: f.x as i64,
                        y: f.y as i64,
                        ordinal: *ord,
                    });
                    *ord += 1;
                }
            }
        }
        write_fixations(&dir.join("fixations.csv"), &records)?;
        let meta = [
            ("size", self.size.to_string()),
            ("n_tasks", self.n_tasks.to_string()),
            ("sigma", format!("{}", self.sigma)),
        ];
        write_meta(&dir.join("meta"), &meta)
    }

    /// Loads a dataset directory. Examples use the stored maps when present
    /// and otherwise maps built from fixations; `GtMode::Pooled` always
    /// builds pooled maps from fixations.
    pub fn load(dir: &Path, mode: GtMode) -> Result<Dataset> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
        }
        let meta = parse_meta(&dir.join("meta"))?;
        let get = |key: &str| {
            meta.get(key).ok_or_else(|| Error::Config(format!("dataset meta lacks `{key}`")))
        };
        let size: usize = get("size")?.parse().map_err(|_| Error::Config("meta `size` is not an integer".into()))?;
        let n_tasks: usize = get("n_tasks")?.parse().map_err(|_| Error::Config("meta `n_tasks` is not an integer".into()))?;
        let sigma: f64 = match meta.get("sigma") {
            Some(s) => s.parse().map_err(|_| Error::Config("meta `sigma` is not a number".into()))?,
            None => SIGMA_FRACTION * size as f64,
        };
        let records = load_fixations(&dir.join("fixations.csv"))?;
        if let Some(r) = records.iter().find(|r| r.task_id >= n_tasks) {
            return Err(Error::Config(format!("task {} outside the {n_tasks} tasks in meta", r.task_id)));
        }
        let mut examples = examples_from_records(&records, size, size, sigma, mode)?;
        if mode == GtMode::PerSubject {
            for e in &mut examples {
                let path = dir.join("maps").join(map_file(&e.subject_id, &e.image_id, e.task));
                if path.is_file() {
                    let (values, w, h) = raster::read_gray_png(&path)?;
                    if (w, h) != (size, size) {
                        return Err(Error::shape("stored map", &[h, w], &[size, size]));
                    }
                    e.gt = SaliencyMap::new(size, size, values)?;
                }
            }
        }
        let mut images = BTreeMap::new();
        for id in examples.iter().map(|e| &e.image_id).collect::<BTreeSet<_>>() {
            let (planes, w, h) = raster::read_rgb_png(&dir.join("images").join(format!("{id}.png")))?;
            if (w, h) != (size, size) {
                return Err(Error::shape("stored image", &[h, w], &[size, size]));
            }
            images.insert(id.clone(), planes);
        }
        Ok(Dataset { size, n_tasks, sigma, images, examples })
    }
}

fn rerank(examples: &mut [Example]) {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| (&examples[a].subject_id, examples[a].ordinal).cmp(&(&examples[b].subject_id, examples[b].ordinal)));
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for i in order {
        let c = counters.entry(examples[i].subject_id.clone()).or_insert(0);
        examples[i].ordinal = *c;
        *c += 1;
    }
}

fn map_file(subject: &str, image: &str, task: usize) -> String {
    format!("{subject}__{image}__t{task}.png")
}

/// Fixations recorded per synthetic viewing.
pub const SYNTH_FIXATIONS: usize = 12;
const BLOB_RADIUS_FRACTION: f64 = 0.06;

/// Two-task synthetic dataset: each image shows one bright blob in its top
/// half and one in its bottom half. Task 0 attends the top blob and task 1
/// the bottom blob. Each subject carries a fixed offset of at most two
/// blur widths applied to both targets. Every subject views every image
/// under both tasks, in a subject-specific order.
pub fn synthesize_two_task_dataset(n_subjects: usize, n_images: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size < 32 {
        return Err(Error::Config(format!("synthetic images need size >= 32, got {size}")));
    }
    if n_subjects == 0 || n_images == 0 {
        return Err(Error::Config("synthetic dataset needs at least one subject and one image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let sigma = SIGMA_FRACTION * s;
    let radius = BLOB_RADIUS_FRACTION * s;

    let mut images = BTreeMap::new();
    let mut centres = BTreeMap::new();
    let width = (n_images - 1).to_string().len().max(3);
    for i in 0..n_images {
        let id = format!("img{i:0width$}");
        let top = (rng.random_range(0.15..0.85) * s, rng.random_range(0.12..0.38) * s);
        let bottom = (rng.random_range(0.15..0.85) * s, rng.random_range(0.62..0.88) * s);
        let tint: [f64; 3] = [rng.random_range(0.2..0.4), rng.random_range(0.2..0.4), rng.random_range(0.2..0.4)];
        let mut planes = vec![0.0; 3 * size * size];
        for y in 0..size {
            for x in 0..size {
                let blob = [top, bottom]
                    .iter()
                    .map(|&(cx, cy)| {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        (-d2 / (2.0 * radius * radius)).exp()
                    })
                    .fold(0.0, f64::max);
                for (c, t) in tint.iter().enumerate() {
                    let noise: f64 = rng.random_range(-0.05..0.05);
                    planes[c * size * size + y * size + x] = (t * (1.0 - blob) + blob + noise).clamp(0.0, 1.0);
                }
            }
        }
        images.insert(id.clone(), planes);
        centres.insert(id, [top, bottom]);
    }

    let spread = Normal::new(0.0, sigma).expect("positive sigma");
    let mut examples = Vec::new();
    let sub_width = (n_subjects - 1).to_string().len().max(2);
    for sub in 0..n_subjects {
        let subject_id = format!("s{sub:0sub_width$}");
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let reach = 2.0 * sigma * rng.random::<f64>().sqrt();
        let offset = (reach * angle.cos(), reach * angle.sin());
        let mut order: Vec<&String> = images.keys().collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut ordinal = 0;
        for id in order {
            let tasks = if rng.random::<bool>() { [0, 1] } else { [1, 0] };
            for task in tasks {
                let (cx, cy) = centres[id][task];
                let target = ((cx + offset.0).clamp(0.0, s - 1.0), (cy + offset.1).clamp(0.0, s - 1.0));
                let fixations = (0..SYNTH_FIXATIONS)
                    .map(|_| {
                        let fx = (target.0 + spread.sample(&mut rng)).round().clamp(0.0, s - 1.0);
                        let fy = (target.1 + spread.sample(&mut rng)).round().clamp(0.0, s - 1.0);
                        Fixation::new(fx as usize, fy as usize)
                    })
                    .collect();
                let gt = gaussian_map(&[target], size, size, sigma)?;
                examples.push(Example {
                    image_id: id.clone(),
                    subject_id: subject_id.clone(),
                    task,
                    ordinal,
                    fixations,
                    gt,
                });
                ordinal += 1;
            }
        }
    }
    Ok(Dataset { size, n_tasks: 2, sigma, images, examples })
}

mod serde_free {
    //! `key=value` text files.

    use std::collections::BTreeMap;
    use std::fs;
    use std::path::Path;

    use crate::error::{Error, Result};

    pub fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>> {
        parse_key_values(&fs::read_to_string(path)?, path)
    }

    pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            out.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        Ok(out)
    }

    pub fn write_meta(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
        let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        fs::write(path, text)?;
        Ok(())
    }
}

pub use serde_free::parse_key_values;
