//! MNIST IDX loading, the even-digit task, 1-class-non-IID partitioning,
//! open-set label noise, and scenario construction.
//!
//! Raw MNIST labels live in 0..=9. The even-digit task keeps only the target
//! digits {0,2,4,6,8} and remaps them to contiguous class indices 0..=4 via
//! [`LabelMap`]. Everything inside a [`ScenarioSplit`] (client shards, D_V,
//! D_Test) carries mapped labels; raw labels exist only between loading and
//! scenario construction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Pixels per image (28x28).
pub const IMAGE_PIXELS: usize = 784;
/// IDX magic number for unsigned-byte image files with dims [n, 28, 28].
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic number for unsigned-byte label files with dims [n].
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One normalized grayscale image with its label.
///
/// Pixel buffers are shared (`Arc`) and never mutated after loading; labels
/// are raw digits 0..=9 after [`load_idx`] and mapped class indices inside a
/// scenario.
#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub pixels: Arc<[f64]>,
    pub label: u8,
}

/// An ordered collection of examples.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    /// Examples whose label equals `label`, preserving order.
    pub fn filter_label(&self, label: u8) -> Dataset {
        Dataset::new(
            self.examples
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect(),
        )
    }

    /// Count of examples per label value.
    pub fn label_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.examples {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }
}

/// Bijection between the target digits and contiguous class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    targets: Vec<u8>,
}

impl LabelMap {
    /// The even-digit task: digits [0,2,4,6,8] -> class indices 0..=4.
    pub fn even_digits() -> Self {
        Self {
            targets: vec![0, 2, 4, 6, 8],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }

    /// Class index for a raw digit, or `None` if it is not a target.
    pub fn to_index(&self, raw: u8) -> Option<u8> {
        self.targets.iter().position(|&t| t == raw).map(|i| i as u8)
    }

    /// Raw digit for a class index.
    pub fn to_raw(&self, index: u8) -> Option<u8> {
        self.targets.get(index as usize).copied()
    }

    /// Remaps every label to its class index. Errors on non-target labels.
    pub fn map_dataset(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = Vec::with_capacity(data.len());
        for e in data.iter() {
            let index = self.to_index(e.label).ok_or_else(|| {
                Error::InvalidInput(format!("label {} is not a target label", e.label))
            })?;
            out.push(LabeledExample {
                pixels: e.pixels.clone(),
                label: index,
            });
        }
        Ok(Dataset::new(out))
    }
}

/// How a client's shard was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Relevant,
    Irrelevant,
    Corrupted,
}

/// One client's local shard.
#[derive(Clone, Debug)]
pub struct ClientDataset {
    pub client_id: usize,
    pub examples: Vec<LabeledExample>,
    pub provenance: Provenance,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct labels present, ascending.
    pub fn distinct_labels(&self) -> Vec<u8> {
        let mut labels: Vec<u8> = self.examples.iter().map(|e| e.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Bijective map kappa from odd digits to even digits for open-set noise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseMap {
    mapping: BTreeMap<u8, u8>,
}

impl NoiseMap {
    const ODD: [u8; 5] = [1, 3, 5, 7, 9];
    const EVEN: [u8; 5] = [0, 2, 4, 6, 8];

    /// Builds a map, checking it is a bijection {1,3,5,7,9} -> {0,2,4,6,8}.
    pub fn new(pairs: &[(u8, u8)]) -> Result<Self> {
        let mapping: BTreeMap<u8, u8> = pairs.iter().copied().collect();
        let domain: Vec<u8> = mapping.keys().copied().collect();
        let mut range: Vec<u8> = mapping.values().copied().collect();
        range.sort_unstable();
        if domain != Self::ODD || range != Self::EVEN {
            return Err(Error::InvalidInput(format!(
                "noise map is not a bijection odd->even: {pairs:?}"
            )));
        }
        Ok(Self { mapping })
    }

    /// The worked example map: {1->0, 5->2, 3->4, 9->6, 7->8}.
    pub fn paper_example() -> Self {
        Self::new(&[(1, 0), (5, 2), (3, 4), (9, 6), (7, 8)]).unwrap()
    }

    /// A uniformly random bijection drawn from the given seed.
    pub fn seeded(seed: u64) -> Self {
        let mut evens = Self::EVEN;
        evens.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pairs: Vec<(u8, u8)> = Self::ODD.iter().copied().zip(evens).collect();
        Self::new(&pairs).unwrap()
    }

    pub fn apply(&self, odd_label: u8) -> Option<u8> {
        self.mapping.get(&odd_label).copied()
    }

    pub fn pairs(&self) -> Vec<(u8, u8)> {
        self.mapping.iter().map(|(&k, &v)| (k, v)).collect()
    }
}

/// Which experimental setting to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// All clients hold even-digit data.
    Relevant,
    /// Some clients hold kappa-noised odd-digit data.
    Irrelevant,
}

/// Kappa selection: the worked example map or a fresh seeded bijection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaChoice {
    Paper,
    Seeded,
}

/// A label transposition applied to one client, in raw digit space.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptedClient {
    pub client_id: usize,
    pub label_a: u8,
    pub label_b: u8,
}

fn default_num_clients() -> usize {
    10
}
fn default_num_irrelevant() -> usize {
    4
}
fn default_validation_size() -> usize {
    1000
}
fn default_test_size() -> usize {
    4000
}
fn default_kappa() -> KappaChoice {
    KappaChoice::Seeded
}
fn default_scenario() -> ScenarioKind {
    ScenarioKind::Relevant
}

/// Scenario construction parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioKind,
    /// Clients whose labels get transposed after partitioning (digit space).
    #[serde(default)]
    pub corrupted_clients: Vec<CorruptedClient>,
    #[serde(default = "default_kappa")]
    pub kappa: KappaChoice,
    /// Directory holding the four MNIST IDX files. Falls back to the
    /// FEDSHAP_DATA_DIR environment variable, then ./data/mnist.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    /// Number of irrelevant clients in the irrelevant setting.
    #[serde(default = "default_num_irrelevant")]
    pub num_irrelevant: usize,
    /// |D_V|. The server pool is split validation-first.
    #[serde(default = "default_validation_size")]
    pub validation_size: usize,
    /// |D_Test| cap; a short server pool yields all remaining examples.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: default_scenario(),
            corrupted_clients: Vec::new(),
            kappa: default_kappa(),
            data_dir: None,
            num_clients: default_num_clients(),
            num_irrelevant: default_num_irrelevant(),
            validation_size: default_validation_size(),
            test_size: default_test_size(),
        }
    }
}

impl ScenarioConfig {
    /// Resolves the data directory: explicit config value, then
    /// FEDSHAP_DATA_DIR, then ./data/mnist.
    pub fn resolved_data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.data_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("FEDSHAP_DATA_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from("data/mnist")
    }
}

/// Everything a run needs: client shards plus the server-held D_V and D_Test.
#[derive(Clone, Debug)]
pub struct ScenarioSplit {
    pub clients: Vec<ClientDataset>,
    pub validation: Dataset,
    pub test: Dataset,
    pub label_map: LabelMap,
    /// The noise map used, when the scenario has irrelevant clients.
    pub kappa: Option<NoiseMap>,
}

fn read_be_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| Error::Truncated {
        path: path.display().to_string(),
        expected: 4,
        actual: 0,
    })?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(reader: &mut impl Read, len: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    let mut filled = 0;
    while filled < len {
        let n = reader.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Truncated {
                path: path.display().to_string(),
                expected: len,
                actual: filled,
            });
        }
        filled += n;
    }
    Ok(buf)
}

/// Loads an MNIST image/label file pair, normalizing pixels to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = read_be_u32(&mut images, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            actual: magic,
        });
    }
    let image_count = read_be_u32(&mut images, images_path)? as usize;
    let rows = read_be_u32(&mut images, images_path)? as usize;
    let cols = read_be_u32(&mut images, images_path)? as usize;
    if rows * cols != IMAGE_PIXELS {
        return Err(Error::InvalidInput(format!(
            "unsupported image size {rows}x{cols} in {} (expected 28x28)",
            images_path.display()
        )));
    }
    let pixel_bytes = read_payload(&mut images, image_count * IMAGE_PIXELS, images_path)?;

    let mut labels = BufReader::new(File::open(labels_path)?);
    let magic = read_be_u32(&mut labels, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            actual: magic,
        });
    }
    let label_count = read_be_u32(&mut labels, labels_path)? as usize;
    if label_count != image_count {
        return Err(Error::CountMismatch {
            images: image_count,
            labels: label_count,
        });
    }
    let label_bytes = read_payload(&mut labels, label_count, labels_path)?;

    let mut examples = Vec::with_capacity(image_count);
    for (i, &label) in label_bytes.iter().enumerate() {
        if label > 9 {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range at index {i} in {}",
                labels_path.display()
            )));
        }
        let start = i * IMAGE_PIXELS;
        let pixels: Arc<[f64]> = pixel_bytes[start..start + IMAGE_PIXELS]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        examples.push(LabeledExample { pixels, label });
    }
    Ok(Dataset::new(examples))
}

/// Loads the standard four-file MNIST layout from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Partitions a raw-labeled dataset by label parity.
pub fn split_even_odd(data: &Dataset) -> (Dataset, Dataset) {
    let (even, odd): (Vec<_>, Vec<_>) = data
        .examples
        .iter()
        .cloned()
        .partition(|e| e.label % 2 == 0);
    (Dataset::new(even), Dataset::new(odd))
}

/// 1-class-non-IID partitioning: stable-sort by label, then split into
/// `num_clients` contiguous chunks. The first `len % num_clients` clients
/// absorb the remainder, so shard sizes differ by at most one. With enough
/// data per label each client ends up holding 1-2 consecutive labels.
///
/// The `_seed` parameter is part of the partitioning contract but unused:
/// sorting and chunking are fully deterministic.
pub fn partition_one_class_non_iid(
    data: &Dataset,
    num_clients: usize,
    _seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::InvalidInput("num_clients must be positive".into()));
    }
    if data.len() < num_clients {
        return Err(Error::InvalidInput(format!(
            "{} examples cannot be split across {num_clients} clients",
            data.len()
        )));
    }
    let mut sorted = data.examples.clone();
    sorted.sort_by_key(|e| e.label);

    let base = sorted.len() / num_clients;
    let remainder = sorted.len() % num_clients;
    let mut clients = Vec::with_capacity(num_clients);
    let mut offset = 0;
    for client_id in 0..num_clients {
        let size = base + usize::from(client_id < remainder);
        clients.push(ClientDataset {
            client_id,
            examples: sorted[offset..offset + size].to_vec(),
            provenance: Provenance::Relevant,
        });
        offset += size;
    }
    Ok(clients)
}

/// Flips every odd label to kappa(label). Pixels are shared untouched.
pub fn inject_openset_noise(odd_data: &Dataset, kappa: &NoiseMap) -> Result<Dataset> {
    let mut out = Vec::with_capacity(odd_data.len());
    for e in odd_data.iter() {
        let flipped = kappa.apply(e.label).ok_or_else(|| {
            Error::InvalidInput(format!("even label {} in odd-digit input", e.label))
        })?;
        out.push(LabeledExample {
            pixels: e.pixels.clone(),
            label: flipped,
        });
    }
    Ok(Dataset::new(out))
}

/// Transposes labels `a` and `b` (mapped class indices) across a client's
/// shard and marks it corrupted.
pub fn corrupt_swap_labels(client: &ClientDataset, a: u8, b: u8) -> Result<ClientDataset> {
    if a == b {
        return Err(Error::InvalidInput(format!(
            "cannot swap label {a} with itself"
        )));
    }
    let examples = client
        .examples
        .iter()
        .map(|e| {
            let label = if e.label == a {
                b
            } else if e.label == b {
                a
            } else {
                e.label
            };
            LabeledExample {
                pixels: e.pixels.clone(),
                label,
            }
        })
        .collect();
    Ok(ClientDataset {
        client_id: client.client_id,
        examples,
        provenance: Provenance::Corrupted,
    })
}

/// Builds a scenario by loading MNIST from the configured data directory.
pub fn build_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioSplit> {
    let dir = config.resolved_data_dir();
    let (train, test) = load_mnist_dir(&dir)?;
    build_scenario_from(&train, &test, config, seed)
}

/// Builds a scenario from already-loaded raw train/test pools.
///
/// Relevant setting: all clients get even-digit training data, one-class
/// non-IID. Irrelevant setting: the first `num_clients - num_irrelevant`
/// clients get even data, the rest get kappa-noised odd data. The server
/// pool is the even part of the test split, shuffled by seed and cut into
/// D_V then D_Test (short pools keep |D_V| fixed and shrink D_Test).
pub fn build_scenario_from(
    train: &Dataset,
    test: &Dataset,
    config: &ScenarioConfig,
    seed: u64,
) -> Result<ScenarioSplit> {
    let label_map = LabelMap::even_digits();
    let (even_train, odd_train) = split_even_odd(train);

    let (mut clients, kappa) = match config.scenario {
        ScenarioKind::Relevant => {
            let mapped = label_map.map_dataset(&even_train)?;
            (
                partition_one_class_non_iid(&mapped, config.num_clients, seed)?,
                None,
            )
        }
        ScenarioKind::Irrelevant => {
            if config.num_irrelevant == 0 || config.num_irrelevant >= config.num_clients {
                return Err(Error::InvalidInput(format!(
                    "irrelevant scenario needs 0 < num_irrelevant < num_clients, got {} of {}",
                    config.num_irrelevant, config.num_clients
                )));
            }
            let num_relevant = config.num_clients - config.num_irrelevant;
            let mapped_even = label_map.map_dataset(&even_train)?;
            let mut clients = partition_one_class_non_iid(&mapped_even, num_relevant, seed)?;

            let kappa = match config.kappa {
                KappaChoice::Paper => NoiseMap::paper_example(),
                KappaChoice::Seeded => NoiseMap::seeded(seeds::derive_seed(seed, "kappa", 0, 0)),
            };
            let noised = inject_openset_noise(&odd_train, &kappa)?;
            let mapped_noised = label_map.map_dataset(&noised)?;
            let irrelevant =
                partition_one_class_non_iid(&mapped_noised, config.num_irrelevant, seed)?;
            for mut client in irrelevant {
                client.client_id += num_relevant;
                client.provenance = Provenance::Irrelevant;
                clients.push(client);
            }
            (clients, Some(kappa))
        }
    };

    for corruption in &config.corrupted_clients {
        let a = label_map.to_index(corruption.label_a).ok_or_else(|| {
            Error::InvalidInput(format!("swap label {} is not a target", corruption.label_a))
        })?;
        let b = label_map.to_index(corruption.label_b).ok_or_else(|| {
            Error::InvalidInput(format!("swap label {} is not a target", corruption.label_b))
        })?;
        let client = clients.get_mut(corruption.client_id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "corrupted client {} out of range 0..{}",
                corruption.client_id, config.num_clients
            ))
        })?;
        *client = corrupt_swap_labels(client, a, b)?;
    }

    let (even_test, _) = split_even_odd(test);
    let mut server_pool = label_map.map_dataset(&even_test)?.examples;
    if server_pool.len() <= config.validation_size {
        return Err(Error::InvalidInput(format!(
            "server pool of {} even test digits cannot fill |D_V| = {}",
            server_pool.len(),
            config.validation_size
        )));
    }
    server_pool.shuffle(&mut seeds::stream(seed, "server-split", 0, 0));
    let validation = Dataset::new(server_pool[..config.validation_size].to_vec());
    let test_end = (config.validation_size + config.test_size).min(server_pool.len());
    let test_set = Dataset::new(server_pool[config.validation_size..test_end].to_vec());

    Ok(ScenarioSplit {
        clients,
        validation,
        test: test_set,
        label_map,
        kappa,
    })
}
