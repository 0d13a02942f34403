//! Dataset manifests: directory scanning, category filtering, synthetic
//! dataset generation and the canonical JSON manifest file.
//!
//! Datasets follow a `<root>/<domain>/<category>/<file>` layout. Image ids
//! are `"<domain>/<category>/<filename>"` with domain and category
//! lowercased, and manifests always keep their images sorted by id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::SplitMix64;
use crate::types::{CategoryId, DomainId, ImageRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dataset_name: String,
    pub root: PathBuf,
    images: Vec<ImageRecord>,
    domains: BTreeSet<DomainId>,
    categories: BTreeSet<CategoryId>,
}

impl Manifest {
    /// Builds a manifest from records, sorting them and checking id uniqueness.
    pub fn new(
        dataset_name: impl Into<String>,
        root: impl Into<PathBuf>,
        mut images: Vec<ImageRecord>,
    ) -> Result<Self> {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = images.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id.clone()));
        }
        let domains = images.iter().map(|r| r.domain.clone()).collect();
        let categories = images.iter().filter_map(|r| r.category.clone()).collect();
        Ok(Self {
            dataset_name: dataset_name.into(),
            root: root.into(),
            images,
            domains,
            categories,
        })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn domains(&self) -> &BTreeSet<DomainId> {
        &self.domains
    }

    pub fn categories(&self) -> &BTreeSet<CategoryId> {
        &self.categories
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.images[i])
    }

    pub fn images_in<'a>(&'a self, domain: &'a DomainId) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.images.iter().filter(move |r| &r.domain == domain)
    }

    /// Keeps only the images of the given domains; the domain set shrinks to match.
    pub fn restrict_to_domains(&self, keep: &[&DomainId]) -> Manifest {
        let images: Vec<_> = self
            .images
            .iter()
            .filter(|r| keep.contains(&&r.domain))
            .cloned()
            .collect();
        let domains = self.domains.iter().filter(|d| keep.contains(d)).cloned().collect();
        let categories = images.iter().filter_map(|r| r.category.clone()).collect();
        Manifest {
            dataset_name: self.dataset_name.clone(),
            root: self.root.clone(),
            images,
            domains,
            categories,
        }
    }

    /// Number of labeled images per (domain, category).
    pub fn category_counts(&self) -> BTreeMap<(DomainId, CategoryId), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.images {
            if let Some(c) = &r.category {
                *counts.entry((r.domain.clone(), c.clone())).or_insert(0) += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterScope {
    /// A category must exceed the threshold in every domain of the manifest.
    /// Applied to a two-domain manifest this is the per-pair intersection.
    PerDomain,
    /// Counts are summed across all domains.
    DatasetWide,
}

/// Keeps categories with strictly more than `min_samples` images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryFilter {
    pub min_samples: usize,
    pub scope: FilterScope,
}

pub fn filter_categories(m: &Manifest, f: &CategoryFilter) -> Result<Manifest> {
    if f.min_samples == 0 {
        return Ok(m.clone());
    }
    let counts = m.category_counts();
    let passes = |c: &CategoryId| -> bool {
        match f.scope {
            FilterScope::DatasetWide => {
                let total: usize = m
                    .domains
                    .iter()
                    .map(|d| counts.get(&(d.clone(), c.clone())).copied().unwrap_or(0))
                    .sum();
                total > f.min_samples
            }
            FilterScope::PerDomain => m
                .domains
                .iter()
                .all(|d| counts.get(&(d.clone(), c.clone())).copied().unwrap_or(0) > f.min_samples),
        }
    };
    let kept: BTreeSet<CategoryId> = m.categories.iter().filter(|c| passes(c)).cloned().collect();
    if kept.is_empty() {
        return Err(Error::EmptyResult(f.min_samples));
    }
    let images = m
        .images
        .iter()
        .filter(|r| r.category.as_ref().is_none_or(|c| kept.contains(c)))
        .cloned()
        .collect();
    Ok(Manifest {
        dataset_name: m.dataset_name.clone(),
        root: m.root.clone(),
        images,
        domains: m.domains.clone(),
        categories: kept,
    })
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.retain(|e| !is_hidden(&e.file_name().to_string_lossy()));
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn is_dir(entry: &fs::DirEntry) -> Result<bool> {
    // follow symlinks so linked dataset trees scan like real ones
    fs::metadata(entry.path())
        .map(|m| m.is_dir())
        .map_err(|e| Error::io(entry.path(), e))
}

fn scan_domain(domain_dir: &Path, domain: &DomainId) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    for cat_entry in sorted_entries(domain_dir)? {
        if !is_dir(&cat_entry)? {
            return Err(Error::MalformedLayout(format!(
                "file {} sits at category level",
                cat_entry.path().display()
            )));
        }
        let category = CategoryId::new(cat_entry.file_name().to_string_lossy())?;
        for file in sorted_entries(&cat_entry.path())? {
            if is_dir(&file)? {
                return Err(Error::MalformedLayout(format!(
                    "directory {} below category level",
                    file.path().display()
                )));
            }
            let filename = file.file_name().to_string_lossy().into_owned();
            let id = format!("{domain}/{category}/{filename}");
            out.push(ImageRecord::new(
                id,
                file.path(),
                domain.clone(),
                Some(category.clone()),
            )?);
        }
    }
    Ok(out)
}

/// Scans a `<root>/<domain>/<category>/<file>` tree. Dot-files are ignored.
pub fn scan_directory(root: &Path) -> Result<Manifest> {
    if !root.exists() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut domain_dirs = Vec::new();
    for entry in sorted_entries(root)? {
        if !is_dir(&entry)? {
            return Err(Error::MalformedLayout(format!(
                "file {} sits at domain level",
                entry.path().display()
            )));
        }
        domain_dirs.push((DomainId::new(entry.file_name().to_string_lossy())?, entry.path()));
    }
    let per_domain = domain_dirs
        .par_iter()
        .map(|(domain, dir)| scan_domain(dir, domain))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<ImageRecord> = per_domain.into_iter().flatten().collect();
    if images.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Manifest::new(name, root, images)
}

/// Parameters for [`generate_synthetic_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticParams {
    pub n_domains: usize,
    pub n_categories: usize,
    pub per_cell: usize,
    pub seed: u64,
}

/// Modifier tokens are drawn from `mod0 .. mod{MODIFIER_RANGE-1}`.
pub const MODIFIER_RANGE: u64 = 1_000_000;

/// Writes a synthetic text-file dataset and scans it back.
///
/// Each file `d<i>/c<j>/i<n>.txt` holds `"d<i> c<j> mod<k>"`. The modifier
/// `k` is drawn per (category, file index) from one SplitMix64 stream seeded
/// by `params.seed`, consumed in (category, file) order, and shared by every
/// domain: file `i<n>` of a category is the same instance rendered in each
/// domain.
pub fn generate_synthetic_dataset(out: &Path, params: SyntheticParams) -> Result<Manifest> {
    if params.n_domains == 0 || params.n_categories == 0 || params.per_cell == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset counts must all be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(params.seed);
    let modifiers: Vec<Vec<u64>> = (0..params.n_categories)
        .map(|_| (0..params.per_cell).map(|_| rng.next_u64() % MODIFIER_RANGE).collect())
        .collect();
    for d in 0..params.n_domains {
        for (c, ks) in modifiers.iter().enumerate() {
            let dir = out.join(format!("d{d}")).join(format!("c{c}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, k) in ks.iter().enumerate() {
                let path = dir.join(format!("i{i}.txt"));
                fs::write(&path, format!("d{d} c{c} mod{k}")).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    scan_directory(out)
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    dataset_name: String,
    root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domains: Option<Vec<DomainId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<CategoryId>>,
    images: Vec<ImageEntry>,
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    id: String,
    path: PathBuf,
    domain: DomainId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<CategoryId>,
}

/// Canonical manifest bytes: sorted keys, images sorted by id, paths
/// relative to `root` where possible, trailing newline.
pub fn manifest_to_json(m: &Manifest) -> String {
    let file = ManifestFile {
        dataset_name: m.dataset_name.clone(),
        root: m.root.clone(),
        domains: Some(m.domains.iter().cloned().collect()),
        categories: Some(m.categories.iter().cloned().collect()),
        images: m
            .images
            .iter()
            .map(|r| ImageEntry {
                id: r.id.clone(),
                path: r
                    .path
                    .strip_prefix(&m.root)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| r.path.clone()),
                domain: r.domain.clone(),
                category: r.category.clone(),
            })
            .collect(),
    };
    // Value maps are BTreeMap-backed, so keys come out sorted.
    let value = serde_json::to_value(&file).expect("manifest serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

pub fn manifest_from_json(text: &str, origin: &Path) -> Result<Manifest> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let root = file.root;
    let parse_err = |message: String| Error::Parse {
        path: origin.to_path_buf(),
        line: 0,
        message,
    };
    let mut images = Vec::with_capacity(file.images.len());
    for (i, e) in file.images.into_iter().enumerate() {
        if e.id.is_empty() {
            return Err(parse_err(format!("images[{i}].id is empty")));
        }
        let path = if e.path.is_absolute() {
            e.path
        } else {
            root.join(e.path)
        };
        images.push(ImageRecord {
            id: e.id,
            path,
            domain: e.domain,
            category: e.category,
        });
    }
    let mut m = Manifest::new(file.dataset_name, root, images).map_err(|e| match e {
        Error::DuplicateId(id) => parse_err(format!("duplicate image id {id:?}")),
        other => other,
    })?;
    if let Some(domains) = file.domains {
        let declared: BTreeSet<_> = domains.into_iter().collect();
        if let Some(d) = m.domains.difference(&declared).next() {
            return Err(parse_err(format!("image domain {d:?} missing from domains")));
        }
        m.domains = declared;
    }
    if let Some(categories) = file.categories {
        let declared: BTreeSet<_> = categories.into_iter().collect();
        if let Some(c) = m.categories.difference(&declared).next() {
            return Err(parse_err(format!("image category {c:?} missing from categories")));
        }
        m.categories = declared;
    }
    Ok(m)
}

pub fn save_manifest(m: &Manifest, path: &Path) -> Result<()> {
    fs::write(path, manifest_to_json(m)).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_json(&text, path)
}
