//! Dataset generation, combination, Test-comb sampling, and the `.vnnd`
//! binary format with its JSON manifest sidecar.

use super::{
    render_with, CameraConfig, Dataset, LabeledSample, LightingProfile, LineImage, Origin, Scene,
    Split, TrackState,
};
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Everything needed to regenerate a train/test pair bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub states: Vec<TrackState>,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub camera: CameraConfig,
    pub lighting: LightingProfile,
    pub origin: Origin,
    pub seed: u64,
}

impl DatasetSpec {
    /// The stock Dset at a given origin: all 7 states, varying lighting,
    /// exposure taken from the origin tag.
    pub fn dset(origin: Origin, per_class_train: usize, per_class_test: usize, seed: u64) -> Self {
        let acq = origin.acquisition_ms().unwrap_or(2.0);
        DatasetSpec {
            states: TrackState::ALL.to_vec(),
            per_class_train,
            per_class_test,
            camera: CameraConfig::with_acquisition(acq),
            lighting: LightingProfile::varying(),
            origin,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.lighting.validate()?;
        if self.states.is_empty() {
            return Err(Error::InvalidConfig("states must be non-empty".into()));
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return Err(Error::InvalidConfig("per-class counts must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestSource {
    Generated { spec: DatasetSpec },
    Combined { parts: Vec<Manifest> },
    TestComb { n_train: usize, n_test: usize, seed: u64 },
    Collected { phase: String },
}

/// Sidecar metadata; for `Generated` sources, `seed` + spec reproduce the
/// dataset bytes exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u8,
    pub split: Split,
    pub width: usize,
    pub class_count: usize,
    pub per_class: BTreeMap<String, usize>,
    pub per_origin: BTreeMap<String, usize>,
    pub source: ManifestSource,
}

impl Manifest {
    fn from_samples(split: Split, width: usize, samples: &[LabeledSample], source: ManifestSource) -> Manifest {
        let mut per_class = BTreeMap::new();
        let mut per_origin = BTreeMap::new();
        for s in samples {
            *per_class.entry(s.label.name().to_string()).or_insert(0) += 1;
            *per_origin.entry(s.origin.tag().to_string()).or_insert(0) += 1;
        }
        Manifest {
            version: 1,
            split,
            width,
            class_count: TrackState::COUNT,
            per_class,
            per_origin,
            source,
        }
    }
}

fn split_domain(split: Split) -> u64 {
    match split {
        Split::Train => domain::TRAIN_SPLIT,
        Split::Test => domain::TEST_SPLIT,
    }
}

fn generate_split(spec: &DatasetSpec, split: Split) -> Dataset {
    let per_class = match split {
        Split::Train => spec.per_class_train,
        Split::Test => spec.per_class_test,
    };
    let mut samples = Vec::with_capacity(per_class * spec.states.len());
    for (ci, &state) in spec.states.iter().enumerate() {
        for i in 0..per_class {
            // One counter-derived stream per sample: order-independent.
            let idx = (ci * per_class + i) as u64;
            let mut rng = stream(spec.seed, split_domain(split), idx);
            let scene = Scene::sample(state, spec.camera.width, &spec.lighting, &mut rng);
            let image = render_with(&scene, &spec.camera, &spec.lighting, &mut rng);
            samples.push(LabeledSample {
                image,
                label: state,
                origin: spec.origin,
            });
        }
    }
    let manifest = Manifest::from_samples(
        split,
        spec.camera.width,
        &samples,
        ManifestSource::Generated { spec: spec.clone() },
    );
    Dataset {
        samples,
        split,
        manifest,
    }
}

/// Generates the train and test splits from disjoint rng streams.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    Ok((generate_split(spec, Split::Train), generate_split(spec, Split::Test)))
}

/// Regenerates a dataset from its manifest; only `Generated` manifests carry
/// enough information.
pub fn regenerate(manifest: &Manifest) -> Result<Dataset> {
    match &manifest.source {
        ManifestSource::Generated { spec } => Ok(generate_split(spec, manifest.split)),
        _ => Err(Error::InvalidConfig(
            "only generated datasets can be regenerated from a manifest".into(),
        )),
    }
}

/// Concatenation preserving origin tags; manifests are kept as parts.
pub fn combine_datasets(parts: &[Dataset]) -> Result<Dataset> {
    if parts.is_empty() {
        return Ok(Dataset {
            samples: Vec::new(),
            split: Split::Train,
            manifest: Manifest {
                version: 1,
                split: Split::Train,
                width: 0,
                class_count: TrackState::COUNT,
                per_class: BTreeMap::new(),
                per_origin: BTreeMap::new(),
                source: ManifestSource::Combined { parts: Vec::new() },
            },
        });
    }
    let width = parts[0].manifest.width;
    for p in parts {
        if p.manifest.width != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: p.manifest.width,
            });
        }
        if p.manifest.class_count != parts[0].manifest.class_count {
            return Err(Error::LabelMismatch(format!(
                "class counts differ: {} vs {}",
                parts[0].manifest.class_count, p.manifest.class_count
            )));
        }
    }
    let samples: Vec<LabeledSample> = parts.iter().flat_map(|p| p.samples.iter().cloned()).collect();
    let manifest = Manifest::from_samples(
        parts[0].split,
        width,
        &samples,
        ManifestSource::Combined {
            parts: parts.iter().map(|p| p.manifest.clone()).collect(),
        },
    );
    Ok(Dataset {
        samples,
        split: parts[0].split,
        manifest,
    })
}

/// Draws the mixed-origin runtime-predictor set from the three Dset test
/// sets: stratified over origins and classes, train/test disjoint, original
/// class labels kept (the origin tag is the selection target).
pub fn sample_test_comb(
    dsets: &[&Dataset; 3],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let total_avail: usize = dsets.iter().map(|d| d.samples.len()).sum();
    if n_train + n_test > total_avail {
        return Err(Error::InsufficientSamples {
            need: n_train + n_test,
            have: total_avail,
        });
    }
    let width = dsets[0].manifest.width;
    for d in dsets {
        if d.manifest.width != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: d.manifest.width,
            });
        }
    }

    // Per-origin quotas: n/3 each, remainder to the lowest origin indices.
    let quota = |n: usize, parts: usize, i: usize| n / parts + usize::from(i < n % parts);

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (oi, dset) in dsets.iter().enumerate() {
        let o_train = quota(n_train, 3, oi);
        let o_test = quota(n_test, 3, oi);
        if o_train + o_test > dset.samples.len() {
            return Err(Error::InsufficientSamples {
                need: o_train + o_test,
                have: dset.samples.len(),
            });
        }
        // Group sample indices by class, shuffle each group, then deal
        // round-robin across classes so every class is represented.
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); TrackState::COUNT];
        for (i, s) in dset.samples.iter().enumerate() {
            by_class[s.label.as_u8() as usize].push(i);
        }
        let mut rng = stream(seed, domain::TEST_COMB, oi as u64);
        for g in by_class.iter_mut() {
            g.shuffle(&mut rng);
        }
        let mut picked = Vec::with_capacity(o_train + o_test);
        let mut cursors = vec![0usize; TrackState::COUNT];
        let mut class = 0usize;
        while picked.len() < o_train + o_test {
            let mut advanced = false;
            for _ in 0..TrackState::COUNT {
                let c = class % TrackState::COUNT;
                class += 1;
                if cursors[c] < by_class[c].len() {
                    picked.push(by_class[c][cursors[c]]);
                    cursors[c] += 1;
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
        for (k, &i) in picked.iter().enumerate() {
            let s = dset.samples[i].clone();
            if k < o_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }

    let source = |_: Split| ManifestSource::TestComb {
        n_train,
        n_test,
        seed,
    };
    let train_manifest = Manifest::from_samples(Split::Train, width, &train, source(Split::Train));
    let test_manifest = Manifest::from_samples(Split::Test, width, &test, source(Split::Test));
    Ok((
        Dataset {
            samples: train,
            split: Split::Train,
            manifest: train_manifest,
        },
        Dataset {
            samples: test,
            split: Split::Test,
            manifest: test_manifest,
        },
    ))
}

const VNND_MAGIC: &[u8; 4] = b"VNND";

impl Dataset {
    /// Serializes to the `.vnnd` binary layout: magic "VNND", u8 version,
    /// u16 width, u8 class_count, u32 sample_count, then per sample
    /// (u8 label, u8 origin, width pixel bytes). Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.manifest.width;
        let mut out = Vec::with_capacity(12 + self.samples.len() * (2 + width));
        out.extend_from_slice(VNND_MAGIC);
        out.push(1u8);
        out.extend_from_slice(&(width as u16).to_le_bytes());
        out.push(self.manifest.class_count as u8);
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        for s in &self.samples {
            out.push(s.label.as_u8());
            out.push(s.origin.as_u8());
            out.extend_from_slice(s.image.pixels());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], split: Split, manifest: Option<Manifest>) -> Result<Dataset> {
        if bytes.len() < 12 || &bytes[0..4] != VNND_MAGIC {
            return Err(Error::Format("not a VNND file".into()));
        }
        if bytes[4] != 1 {
            return Err(Error::Format(format!("unsupported VNND version {}", bytes[4])));
        }
        let width = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let class_count = bytes[7] as usize;
        let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let expected = 12 + count * (2 + width);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "VNND length mismatch: expected {expected}, got {}",
                bytes.len()
            )));
        }
        let mut samples = Vec::with_capacity(count);
        let mut off = 12;
        for _ in 0..count {
            let label = TrackState::from_u8(bytes[off])
                .ok_or_else(|| Error::Format(format!("bad label {}", bytes[off])))?;
            let origin = Origin::from_u8(bytes[off + 1])
                .ok_or_else(|| Error::Format(format!("bad origin {}", bytes[off + 1])))?;
            let pixels = bytes[off + 2..off + 2 + width].to_vec();
            samples.push(LabeledSample {
                image: LineImage::new(pixels),
                label,
                origin,
            });
            off += 2 + width;
        }
        let manifest = manifest.unwrap_or_else(|| {
            let mut m = Manifest::from_samples(
                split,
                width,
                &samples,
                ManifestSource::Collected {
                    phase: "unknown".into(),
                },
            );
            m.class_count = class_count;
            m
        });
        Ok(Dataset {
            samples,
            split,
            manifest,
        })
    }

    /// Writes `<path>` plus the `<path>.json` manifest sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        let manifest_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(manifest_path, json)?;
        Ok(())
    }

    /// Reads `<path>`; picks up the manifest sidecar when present.
    pub fn load(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let manifest_path = sidecar_path(path);
        let manifest: Option<Manifest> = match std::fs::read_to_string(&manifest_path) {
            Ok(s) => Some(serde_json::from_str(&s)?),
            Err(_) => None,
        };
        let split = manifest.as_ref().map(|m| m.split).unwrap_or(Split::Train);
        Dataset::from_bytes(&bytes, split, manifest)
    }

    pub fn width(&self) -> usize {
        self.manifest.width
    }

    pub fn per_class_counts(&self) -> [usize; TrackState::COUNT] {
        let mut counts = [0usize; TrackState::COUNT];
        for s in &self.samples {
            counts[s.label.as_u8() as usize] += 1;
        }
        counts
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(origin: Origin, seed: u64) -> DatasetSpec {
        DatasetSpec::dset(origin, 3, 2, seed)
    }

    #[test]
    fn per_class_counts_are_exact() {
        let (train, test) = generate_dataset(&DatasetSpec::dset(Origin::D20, 10, 4, 1)).unwrap();
        assert_eq!(train.samples.len(), 70);
        assert_eq!(test.samples.len(), 28);
        assert!(train.per_class_counts().iter().all(|&c| c == 10));
        assert!(test.per_class_counts().iter().all(|&c| c == 4));
        // Manifest counts match actual counts.
        for (name, &count) in &train.manifest.per_class {
            let state = TrackState::ALL.iter().find(|s| s.name() == *name).unwrap();
            assert_eq!(count, train.per_class_counts()[state.as_u8() as usize]);
        }
    }

    #[test]
    fn single_class_single_sample() {
        let spec = DatasetSpec {
            states: vec![TrackState::GoStraight],
            per_class_train: 1,
            per_class_test: 1,
            ..DatasetSpec::dset(Origin::D20, 1, 1, 0)
        };
        let (train, test) = generate_dataset(&spec).unwrap();
        assert_eq!(train.samples.len(), 1);
        assert_eq!(test.samples.len(), 1);
    }

    #[test]
    fn generation_is_byte_identical() {
        let spec = tiny_spec(Origin::D15, 99);
        let (a, _) = generate_dataset(&spec).unwrap();
        let (b, _) = generate_dataset(&spec).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn train_and_test_draw_from_disjoint_streams() {
        let (train, test) = generate_dataset(&tiny_spec(Origin::D20, 5)).unwrap();
        assert_ne!(train.samples[0].image, test.samples[0].image);
    }

    #[test]
    fn manifest_regenerates_identical_bytes() {
        let (train, _) = generate_dataset(&tiny_spec(Origin::D10, 7)).unwrap();
        let json = serde_json::to_string(&train.manifest).unwrap();
        let manifest: Manifest = serde_json::from_str(&json).unwrap();
        let again = regenerate(&manifest).unwrap();
        assert_eq!(train.to_bytes(), again.to_bytes());
    }

    #[test]
    fn vnnd_roundtrip() {
        let (train, _) = generate_dataset(&tiny_spec(Origin::D20, 3)).unwrap();
        let bytes = train.to_bytes();
        let back = Dataset::from_bytes(&bytes, Split::Train, Some(train.manifest.clone())).unwrap();
        assert_eq!(train, back);
    }

    #[test]
    fn combine_preserves_origins_and_sums_counts() {
        let (a, _) = generate_dataset(&tiny_spec(Origin::D20, 1)).unwrap();
        let (b, _) = generate_dataset(&tiny_spec(Origin::D15, 2)).unwrap();
        let (c, _) = generate_dataset(&tiny_spec(Origin::D10, 3)).unwrap();
        let all = combine_datasets(&[a.clone(), b, c]).unwrap();
        assert_eq!(all.samples.len(), 63);
        assert_eq!(all.manifest.per_origin.len(), 3);
        // Identity on a single input.
        let one = combine_datasets(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.samples, a.samples);
        // Empty input.
        let empty = combine_datasets(&[]).unwrap();
        assert!(empty.samples.is_empty());
    }

    #[test]
    fn test_comb_is_stratified_and_disjoint() {
        let mk = |origin, seed| {
            let (_, test) = generate_dataset(&DatasetSpec::dset(origin, 2, 30, seed)).unwrap();
            test
        };
        let d20 = mk(Origin::D20, 11);
        let d15 = mk(Origin::D15, 12);
        let d10 = mk(Origin::D10, 13);
        let (train, test) = sample_test_comb(&[&d20, &d15, &d10], 75, 24, 4).unwrap();
        assert_eq!(train.samples.len(), 75);
        assert_eq!(test.samples.len(), 24);
        for origin in Origin::DSETS {
            let n = train.samples.iter().filter(|s| s.origin == origin).count();
            assert!((24..=26).contains(&n), "origin {origin:?}: {n}");
            let m = test.samples.iter().filter(|s| s.origin == origin).count();
            assert_eq!(m, 8);
        }
        // Disjoint: no image drawn into both splits.
        for t in &train.samples {
            assert!(!test.samples.iter().any(|u| u.image == t.image));
        }
    }

    #[test]
    fn test_comb_minimal_case_one_per_origin() {
        let mk = |origin, seed| {
            let (_, test) = generate_dataset(&DatasetSpec::dset(origin, 1, 1, seed)).unwrap();
            test
        };
        let d20 = mk(Origin::D20, 1);
        let d15 = mk(Origin::D15, 2);
        let d10 = mk(Origin::D10, 3);
        let (train, test) = sample_test_comb(&[&d20, &d15, &d10], 3, 3, 0).unwrap();
        for origin in Origin::DSETS {
            assert_eq!(train.samples.iter().filter(|s| s.origin == origin).count(), 1);
            assert_eq!(test.samples.iter().filter(|s| s.origin == origin).count(), 1);
        }
    }

    #[test]
    fn test_comb_insufficient_samples_is_rejected() {
        let mk = |origin, seed| {
            let (_, test) = generate_dataset(&DatasetSpec::dset(origin, 1, 1, seed)).unwrap();
            test
        };
        let d20 = mk(Origin::D20, 1);
        let d15 = mk(Origin::D15, 2);
        let d10 = mk(Origin::D10, 3);
        assert!(sample_test_comb(&[&d20, &d15, &d10], 100, 100, 0).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = generate_dataset(&tiny_spec(Origin::D20, 21)).unwrap();
        let path = dir.path().join("t.vnnd");
        train.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(train, back);
    }
}
