//! `capmatch`: cross-domain image retrieval by caption matching.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use capmatch_core::captions::{load_captions, save_captions};
use capmatch_core::dataset::{
    filter_categories, generate_synthetic_dataset, load_manifest, save_manifest, scan_directory, CategoryFilter,
    FilterScope, Manifest, SyntheticParams,
};
use capmatch_core::eval::{
    export_embeddings_2d, parse_metrics, report_to_csv, report_to_json, resolve_pairs, EvalOptions, Evaluator,
    Providers,
};
use capmatch_core::index::{load_index, save_index, EmbeddingIndex};
use capmatch_core::providers::{ReferenceCaptioner, ReferenceEmbedder, RemoteClient, RemoteEndpoint};
use capmatch_core::retrieval::{
    caption_database, embed_captions, embed_query_images, oracle_captions, query, RetrievalConfig, RetrievalMode,
    CLASS_PLACEHOLDER,
};
use capmatch_core::types::{DomainId, ImageRecord};
use capmatch_core::Error;

#[derive(Parser)]
#[command(
    name = "capmatch",
    version,
    about = "Cross-domain image retrieval by caption matching"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Caption and embedding backend.
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Reference)]
    provider: ProviderKind,
    /// Inference service base URL (remote provider only).
    #[arg(long, global = true, env = "CM_ENDPOINT")]
    endpoint: Option<String>,
    /// Embedding dimension of the reference provider.
    #[arg(long, global = true, default_value_t = 64)]
    dim: usize,
    /// Seed for synthetic data generation.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Per-request timeout in seconds (remote provider).
    #[arg(long, global = true, default_value_t = 120)]
    timeout: u64,
    /// Largest batch sent in one request (remote provider).
    #[arg(long, global = true, default_value_t = 64)]
    max_batch: usize,
    /// Attempts per request on transport errors and 503 (remote provider).
    #[arg(long, global = true, default_value_t = 3)]
    retries: u32,
    /// Caps worker threads and in-flight requests.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Reference,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    PerDomain,
    Dataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a <root>/<domain>/<category>/<image> tree into a manifest.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption every image of one domain.
    Caption {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        out: PathBuf,
        /// Use the class label instead of a generated caption.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = CLASS_PLACEHOLDER)]
        template: String,
        /// Prompt passed to the captioning model.
        #[arg(long, default_value = "")]
        prompt: String,
    },
    /// Build an embedding index from captions or from images.
    Embed {
        #[arg(long, conflicts_with_all = ["images", "manifest", "domain"], required_unless_present = "images")]
        captions: Option<PathBuf>,
        /// Embed the images of a domain instead of captions.
        #[arg(long, requires_all = ["manifest", "domain"])]
        images: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank an index against one query image.
    Query {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Resolves the query to its manifest id so it is excluded from results.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Prints each result's caption.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Evaluate retrieval over domain pairs.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// `all`, `office-home`, `domainnet`, or a list such as `A-B,B-A`.
        #[arg(long, default_value = "all")]
        pairs: String,
        #[arg(long, default_value = "p@1,p@5,p@15,p@50,p@100,p@200,map")]
        metrics: String,
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = CLASS_PLACEHOLDER)]
        template: String,
        #[arg(long, default_value = "")]
        prompt: String,
        /// Keep categories with more than this many images.
        #[arg(long)]
        min_samples: Option<usize>,
        #[arg(long, value_enum, default_value_t = Scope::PerDomain)]
        filter_scope: Scope,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Reuse and store captions and embeddings here.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        allow_same_domain: bool,
    },
    /// Write a synthetic text-file dataset.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        domains: usize,
        #[arg(long, default_value_t = 5)]
        categories: usize,
        #[arg(long, default_value_t = 4)]
        per_cell: usize,
        /// Also write the manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Export raw index vectors with class labels for external projection.
    Export {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Backend {
    Reference(ReferenceEmbedder, ReferenceCaptioner),
    Remote(Box<RemoteClient>),
}

impl Backend {
    fn providers(&self) -> Providers<'_> {
        match self {
            Backend::Reference(e, c) => Providers {
                captioner: c,
                text: e,
                image: e,
            },
            Backend::Remote(r) => Providers {
                captioner: r.as_ref(),
                text: r.as_ref(),
                image: r.as_ref(),
            },
        }
    }
}

impl Global {
    fn backend(&self, manifest: Option<&Manifest>, prompt: &str) -> anyhow::Result<Backend> {
        match self.provider {
            ProviderKind::Reference => {
                let domains = manifest.map(|m| m.domains().clone()).unwrap_or_default();
                Ok(Backend::Reference(
                    ReferenceEmbedder::new(self.dim)?,
                    ReferenceCaptioner::new(domains),
                ))
            }
            ProviderKind::Remote => {
                let url = self
                    .endpoint
                    .as_deref()
                    .context("--provider remote needs --endpoint or CM_ENDPOINT")?;
                let mut e = RemoteEndpoint::new(url)?;
                e.timeout = Duration::from_secs(self.timeout);
                e.max_batch = self.max_batch;
                e.retries = self.retries;
                if let Some(j) = self.jobs {
                    e.max_in_flight = j;
                }
                let client = RemoteClient::connect(e)?;
                info!(
                    "service: captioner {}, encoder {} (dim {})",
                    client.info().caption_model_id,
                    client.info().embed_model_id,
                    client.info().dim
                );
                Ok(Backend::Remote(Box::new(client.with_prompt(prompt))))
            }
        }
    }
}

fn domain_images(m: &Manifest, name: &str) -> anyhow::Result<Vec<ImageRecord>> {
    let domain = DomainId::new(name)?;
    if !m.domains().contains(&domain) {
        bail!("domain {name:?} is not in the manifest");
    }
    Ok(m.images_in(&domain).cloned().collect())
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { root, out } => {
            let m = scan_directory(&root)?;
            save_manifest(&m, &out)?;
            println!(
                "{} domains, {} categories, {} images",
                m.domains().len(),
                m.categories().len(),
                m.images().len()
            );
        }
        Command::Caption {
            manifest,
            domain,
            out,
            oracle,
            template,
            prompt,
        } => {
            let m = load_manifest(&manifest)?;
            let images = domain_images(&m, &domain)?;
            if oracle {
                save_captions(&oracle_captions(&images, &template)?, &out)?;
                println!("{} captions", images.len());
            } else {
                let backend = g.backend(Some(&m), &prompt)?;
                let batch = caption_database(&images, backend.providers().captioner)?;
                save_captions(&batch.records, &out)?;
                println!("{} captions", batch.records.len());
                for (id, e) in &batch.failures {
                    warn!("{id}: {e}");
                }
                batch.check()?;
            }
        }
        Command::Embed {
            captions,
            images: _,
            manifest,
            domain,
            out,
        } => {
            let index = match (captions, manifest, domain) {
                (Some(path), _, _) => {
                    let backend = g.backend(None, "")?;
                    embed_captions(&load_captions(&path)?, backend.providers().text)?
                }
                (None, Some(manifest), Some(domain)) => {
                    let m = load_manifest(&manifest)?;
                    let backend = g.backend(Some(&m), "")?;
                    let embedder = backend.providers().image;
                    let records = domain_images(&m, &domain)?;
                    let vectors = embed_query_images(&records, embedder)?;
                    let rows = records.into_iter().map(|r| r.id).zip(vectors).collect();
                    EmbeddingIndex::build(rows, embedder.provider_id())?
                }
                _ => bail!("embed needs --captions, or --images with --manifest and --domain"),
            };
            save_index(&index, &out)?;
            println!("{} vectors of dim {}", index.len(), index.dim());
        }
        Command::Query {
            image,
            index,
            manifest,
            captions,
            k,
        } => {
            let idx = load_index(&index)?;
            let m = manifest.as_deref().map(load_manifest).transpose()?;
            let record = m
                .as_ref()
                .and_then(|m| m.images().iter().find(|r| r.path == image).cloned())
                .map_or_else(
                    || ImageRecord::new(image.to_string_lossy(), image.clone(), DomainId::new("query")?, None),
                    Ok,
                )?;
            let caption_text: BTreeMap<String, String> = match captions {
                Some(path) => load_captions(&path)?
                    .into_iter()
                    .map(|c| (c.image_id, c.caption))
                    .collect(),
                None => BTreeMap::new(),
            };
            let backend = g.backend(m.as_ref(), "")?;
            let cfg = RetrievalConfig {
                k,
                ..Default::default()
            };
            let result = query(&record, &idx, backend.providers().image, &cfg)?;
            let mut out = String::new();
            for (rank, e) in result.entries.iter().enumerate() {
                out.push_str(&format!("{} {:.6} {}", rank + 1, e.score.value(), e.id));
                if let Some(c) = caption_text.get(&e.id) {
                    out.push(' ');
                    out.push_str(c);
                }
                out.push('\n');
            }
            write_output(None, &out)?;
        }
        Command::Evaluate {
            manifest,
            pairs,
            metrics,
            oracle,
            template,
            prompt,
            min_samples,
            filter_scope,
            out,
            format,
            cache_dir,
            allow_same_domain,
        } => {
            let m = load_manifest(&manifest)?;
            let mut options = EvalOptions::new(parse_metrics(&metrics)?);
            options.retrieval = RetrievalConfig {
                mode: if oracle {
                    RetrievalMode::Oracle
                } else {
                    RetrievalMode::Caption
                },
                oracle_template: template,
                ..Default::default()
            };
            options.allow_same_domain = allow_same_domain;
            options.cache_dir = cache_dir;
            options.filter = min_samples.map(|min_samples| CategoryFilter {
                min_samples,
                scope: match filter_scope {
                    Scope::PerDomain => FilterScope::PerDomain,
                    Scope::Dataset => FilterScope::DatasetWide,
                },
            });
            if let Some(f) = &options.filter {
                // fail early with a clear message when nothing survives
                filter_categories(
                    &m,
                    &CategoryFilter {
                        scope: FilterScope::DatasetWide,
                        ..*f
                    },
                )?;
            }
            let pairs = resolve_pairs(&pairs, m.domains(), allow_same_domain)?;
            if let Some(dir) = &options.cache_dir {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let backend = g.backend(Some(&m), &prompt)?;
            let report = Evaluator::new(&m, backend.providers(), options)?.sweep(&pairs)?;
            let text = match format {
                Format::Csv => report_to_csv(&report)?,
                Format::Json => report_to_json(&report),
            };
            write_output(out.as_deref(), &text)?;
            if let Some(path) = &out {
                eprintln!("{} pairs written to {}", report.pairs.len(), path.display());
            }
        }
        Command::GenSynth {
            out,
            domains,
            categories,
            per_cell,
            manifest,
        } => {
            let params = SyntheticParams {
                n_domains: domains,
                n_categories: categories,
                per_cell,
                seed: g.seed,
            };
            let m = generate_synthetic_dataset(&out, params)?;
            if let Some(path) = manifest {
                save_manifest(&m, &path)?;
            }
            println!(
                "{} domains, {} categories, {} images",
                m.domains().len(),
                m.categories().len(),
                m.images().len()
            );
        }
        Command::Export { index, manifest, out } => {
            let idx = load_index(&index)?;
            let m = load_manifest(&manifest)?;
            let labels: BTreeMap<String, String> = m
                .images()
                .iter()
                .filter_map(|r| r.category.as_ref().map(|c| (r.id.clone(), c.to_string())))
                .collect();
            export_embeddings_2d(&idx, &labels, &out)?;
            println!("{} rows", idx.len());
        }
    }
    Ok(())
}

/// Variant name of the innermost core error, e.g. `EmptyDataset`.
fn error_kind(e: &anyhow::Error) -> Option<String> {
    let core = e.chain().find_map(|c| c.downcast_ref::<Error>())?;
    let debug = format!("{:?}", core.root_cause());
    debug.split(|c: char| !c.is_alphanumeric()).next().map(str::to_owned)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if cli.global.provider == ProviderKind::Reference && cli.global.dim < 2 {
        eprintln!("error: --dim must be at least 2");
        return ExitCode::from(1);
    }
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match error_kind(&e) {
                Some(kind) => eprintln!("error [{kind}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
