use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{generate_base_sized, inject_trace, Scenario, TraceKind};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image, Plane, Region};

/// SplitMix64 finalizer over `base ⊕ stream`; used to derive independent
/// per-sample seeds from one global seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0000,
            Split::Test => 0x7465_7374_0000_0000,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// 2 (real vs. manipulated) or 4 (real plus one class per trace kind).
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Standard deviation of optional Gaussian noise added to every image.
    /// Off by default: quantization removes noise outside the trace region
    /// and would raise, not lower, the residual contrast under compression.
    pub noise_std: f64,
    pub region_min: usize,
    pub region_max: usize,
    pub image_size: usize,
    pub scenarios: Vec<Scenario>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 4,
            train_per_class: 500,
            test_per_class: 100,
            amplitude_min: 0.02,
            amplitude_max: 0.05,
            noise_std: 0.0,
            region_min: 24,
            region_max: 48,
            image_size: super::IMAGE_SIZE,
            scenarios: Scenario::ALL.to_vec(),
            seed: 2024,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.classes != 2 && self.classes != 4 {
            return bad(format!("classes must be 2 or 4, got {}", self.classes));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("class sizes must be at least 1".into());
        }
        if !(self.amplitude_min > 0.0
            && self.amplitude_min <= self.amplitude_max
            && self.amplitude_max <= 0.2)
        {
            return bad(format!(
                "amplitude range [{}, {}] must lie in (0, 0.2]",
                self.amplitude_min, self.amplitude_max
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if self.region_min == 0 || self.region_min > self.region_max || self.region_max > self.image_size {
            return bad(format!(
                "region sizes [{}, {}] must lie in 1..={}",
                self.region_min, self.region_max, self.image_size
            ));
        }
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        Ok(())
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Trace kind of the `i`-th sample of class `label`.
    pub fn kind_for(&self, label: usize, i: usize) -> TraceKind {
        match (label, self.classes) {
            (0, _) => TraceKind::None,
            (_, 2) => TraceKind::MANIPULATIONS[i % 3],
            (l, _) => TraceKind::MANIPULATIONS[l - 1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: Image,
    pub label: usize,
    pub trace_kind: TraceKind,
    pub scenario: Scenario,
    pub seed: u64,
    /// Manipulated rectangle; `None` for pristine samples.
    pub region: Option<Region>,
    pub amplitude: f64,
}

impl SampleRecord {
    /// The same sample after `scenario`'s post-processing. Only valid on raw records.
    pub fn degraded(&self, scenario: Scenario) -> Result<SampleRecord> {
        debug_assert_eq!(self.scenario, Scenario::Raw);
        Ok(SampleRecord {
            image: scenario.apply(&self.image)?,
            scenario,
            ..self.clone()
        })
    }
}

fn generate_sample(
    config: &DatasetConfig,
    label: usize,
    kind: TraceKind,
    seed: u64,
) -> Result<SampleRecord> {
    let size = config.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = generate_base_sized(derive_seed(seed, 1), size, size);
    if config.noise_std > 0.0 {
        let normal = Normal::new(0.0, config.noise_std)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut planes: Vec<Plane> = image.into_planes();
        for p in &mut planes {
            for v in p.data_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        image = Image::from_planes(planes)?;
    }
    let (mut region, mut amplitude) = (None, 0.0);
    if kind != TraceKind::None {
        let rw = rng.random_range(config.region_min..=config.region_max);
        let rh = rng.random_range(config.region_min..=config.region_max);
        let r = Region::new(
            rng.random_range(0..=size - rw),
            rng.random_range(0..=size - rh),
            rw,
            rh,
        );
        amplitude = rng.random_range(config.amplitude_min..=config.amplitude_max);
        image = inject_trace(&image, kind, amplitude, &r, derive_seed(seed, 2))?;
        region = Some(r);
    }
    Ok(SampleRecord {
        image,
        label,
        trace_kind: kind,
        scenario: Scenario::Raw,
        seed,
        region,
        amplitude,
    })
}

/// Raw (undegraded) samples of one split, classes interleaved.
pub fn generate_split(config: &DatasetConfig, split: Split) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let n = config.per_class(split);
    let mut out = Vec::with_capacity(n * config.classes);
    for i in 0..n {
        for label in 0..config.classes {
            let index = (i * config.classes + label) as u64;
            let seed = derive_seed(config.seed, split.tag() | index);
            out.push(generate_sample(config, label, config.kind_for(label, i), seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub trace_kind: TraceKind,
    pub scenario: Scenario,
    pub seed: u64,
}

/// Tab-separated sample list of one split.
///
/// ```text
/// # split=train
/// # seed=2024
/// # classes=4
/// train/raw/000000.png<TAB>0<TAB>none<TAB>raw<TAB>1234567
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub seed: u64,
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# split={}\n# seed={}\n# classes={}\n",
            self.split, self.seed, self.classes
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.path.display(),
                e.label,
                e.trace_kind,
                e.scenario,
                e.seed
            ));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_text().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut split = None;
        let mut seed = None;
        let mut classes = None;
        let mut entries = Vec::new();
        for (no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let bad = |m: &str| Error::Manifest(format!("{}:{}: {m}", path.display(), no + 1));
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "split" => {
                            split = Some(match v.trim() {
                                "train" => Split::Train,
                                "test" => Split::Test,
                                _ => return Err(bad("unknown split")),
                            })
                        }
                        "seed" => seed = Some(v.trim().parse().map_err(|_| bad("bad seed"))?),
                        "classes" => {
                            classes = Some(v.trim().parse().map_err(|_| bad("bad classes"))?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                label: fields[1].parse().map_err(|_| bad("bad label"))?,
                trace_kind: fields[2].parse().map_err(|_| bad("bad trace kind"))?,
                scenario: fields[3].parse().map_err(|_| bad("bad scenario"))?,
                seed: fields[4].parse().map_err(|_| bad("bad seed"))?,
            });
        }
        let classes = classes
            .or_else(|| entries.iter().map(|e| e.label + 1).max())
            .unwrap_or(0);
        Ok(DatasetManifest {
            split: split.unwrap_or(Split::Test),
            seed: seed.unwrap_or(0),
            classes,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one scenario.
    pub fn scenario(&self, scenario: Scenario) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.scenario == scenario)
    }

    /// Loads the images of `scenario` with their labels; paths resolve
    /// against `root`.
    pub fn load(&self, root: impl AsRef<Path>, scenario: Scenario) -> Result<Vec<(Image, usize)>> {
        let root = root.as_ref();
        self.scenario(scenario)
            .map(|e| Ok((load_image(root.join(&e.path))?, e.label)))
            .collect()
    }
}

/// Writes every split and scenario under `out_dir` as PNG files and returns
/// the train and test manifests (also written as `train.tsv`/`test.tsv`).
pub fn build_dataset(
    config: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(DatasetManifest, DatasetManifest)> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let mut seen = HashSet::new();
    let mut manifests = Vec::new();
    for split in [Split::Train, Split::Test] {
        let raw = generate_split(config, split)?;
        let mut entries = Vec::new();
        for scenario in &config.scenarios {
            let rel_dir = PathBuf::from(split.as_str()).join(scenario.as_str());
            fs::create_dir_all(out_dir.join(&rel_dir)).map_err(|e| Error::io(out_dir, e))?;
            for (i, rec) in raw.iter().enumerate() {
                let rec = rec.degraded(*scenario)?;
                let rel = rel_dir.join(format!("{i:06}.png"));
                save_image(&rec.image, out_dir.join(&rel))?;
                entries.push(ManifestEntry {
                    path: rel,
                    label: rec.label,
                    trace_kind: rec.trace_kind,
                    scenario: *scenario,
                    seed: rec.seed,
                });
            }
        }
        for rec in &raw {
            if !seen.insert(rec.seed) {
                return Err(Error::Manifest(format!(
                    "sample seed {} occurs twice across splits",
                    rec.seed
                )));
            }
        }
        let manifest = DatasetManifest {
            split,
            seed: config.seed,
            classes: config.classes,
            entries,
        };
        manifest.write(out_dir.join(format!("{split}.tsv")))?;
        manifests.push(manifest);
    }
    let test = manifests.pop().expect("two splits");
    let train = manifests.pop().expect("two splits");
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn small(classes: usize) -> DatasetConfig {
        DatasetConfig {
            classes,
            train_per_class: 3,
            test_per_class: 2,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_is_balanced_and_labelled() {
        let cfg = small(4);
        let recs = generate_split(&cfg, Split::Train).unwrap();
        assert_eq!(recs.len(), 12);
        for r in &recs {
            assert_eq!(r.trace_kind == TraceKind::None, r.label == 0);
            assert_eq!(r.region.is_some(), r.label != 0);
        }
        let mut counts = BTreeMap::new();
        for r in &recs {
            *counts.entry(r.trace_kind).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c == 3));
    }

    #[test]
    fn binary_cycles_trace_kinds() {
        let cfg = DatasetConfig {
            train_per_class: 6,
            ..small(2)
        };
        let recs = generate_split(&cfg, Split::Train).unwrap();
        let mut counts = BTreeMap::new();
        for r in recs.iter().filter(|r| r.label == 1) {
            *counts.entry(r.trace_kind).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn splits_have_disjoint_seeds() {
        let cfg = small(4);
        let train: HashSet<u64> = generate_split(&cfg, Split::Train)
            .unwrap()
            .iter()
            .map(|r| r.seed)
            .collect();
        let test = generate_split(&cfg, Split::Test).unwrap();
        assert!(test.iter().all(|r| !train.contains(&r.seed)));
    }

    #[test]
    fn build_writes_files_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            scenarios: vec![Scenario::Raw, Scenario::Jp60],
            ..small(4)
        };
        let (train, test) = build_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(train.len(), 12 * 2);
        assert_eq!(test.len(), 8 * 2);
        for e in train.entries.iter().chain(&test.entries) {
            assert!(dir.path().join(&e.path).is_file());
        }
        let back = DatasetManifest::read(dir.path().join("train.tsv")).unwrap();
        assert_eq!(back, train);
        let loaded = back.load(dir.path(), Scenario::Jp60).unwrap();
        assert_eq!(loaded.len(), 12);

        let dir2 = tempfile::tempdir().unwrap();
        let (train2, _) = build_dataset(&cfg, dir2.path()).unwrap();
        assert_eq!(train2, train);
        for e in &train.entries {
            assert_eq!(
                fs::read(dir.path().join(&e.path)).unwrap(),
                fs::read(dir2.path().join(&e.path)).unwrap()
            );
        }
    }

    #[test]
    fn manifest_line_format() {
        let m = DatasetManifest {
            split: Split::Test,
            seed: 5,
            classes: 2,
            entries: vec![ManifestEntry {
                path: PathBuf::from("test/raw/000000.png"),
                label: 1,
                trace_kind: TraceKind::Checkerboard,
                scenario: Scenario::Raw,
                seed: 99,
            }],
        };
        assert!(m
            .to_text()
            .ends_with("test/raw/000000.png\t1\tcheckerboard\traw\t99\n"));
    }

    #[test]
    fn invalid_configs() {
        assert!(DatasetConfig { classes: 3, ..small(4) }.validate().is_err());
        assert!(DatasetConfig { train_per_class: 0, ..small(4) }.validate().is_err());
        assert!(DatasetConfig { amplitude_max: 0.3, ..small(4) }.validate().is_err());
        assert!(DatasetConfig { scenarios: vec![], ..small(4) }.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, b"x").unwrap();
        assert!(build_dataset(&small(2), file.join("sub")).is_err());
    }
}
