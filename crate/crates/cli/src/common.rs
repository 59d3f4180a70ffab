use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;

use climsurr_core::manifest::RunManifest;
use climsurr_core::scenario::baseline::{load_baseline_csv, synthetic_baseline, BaselineConfig};
use climsurr_core::{EmissionTrajectory, EngineParams, Error, SpeciesRegistry};

/// Default output root for commands whose `--out` is omitted.
pub const OUT_ROOT_VAR: &str = "CLIMSURR_OUT";

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MISSING_FILE: u8 = 3;
pub const EXIT_HASH_MISMATCH: u8 = 4;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            match e {
                Error::HashMismatch { .. } => return EXIT_HASH_MISMATCH,
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    return EXIT_MISSING_FILE
                }
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return EXIT_MISSING_FILE;
            }
        }
        if let Some(MissingInput(_)) = cause.downcast_ref::<MissingInput>() {
            return EXIT_MISSING_FILE;
        }
    }
    EXIT_FAILURE
}

#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "input not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn require(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingInput(path.to_path_buf()).into())
    }
}

pub struct Ctx {
    pub force: bool,
    pub jobs: usize,
    out_root: Option<PathBuf>,
}

impl Ctx {
    pub fn new(force: bool, jobs: usize) -> Self {
        Ctx {
            force,
            jobs,
            out_root: std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from),
        }
    }

    /// `given`, or `default` under the output root (or the working directory).
    pub fn out_path(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out_root.clone().unwrap_or_default().join(default))
    }

    /// Refuses to proceed when any of `paths` exists and `--force` is off.
    pub fn guard(&self, paths: &[PathBuf]) -> anyhow::Result<()> {
        if self.force {
            return Ok(());
        }
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!("{} exists; pass --force to overwrite", p.display());
        }
        Ok(())
    }

    pub fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("building worker pool")
    }
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Loads `T` from a TOML (or `.json`) file on top of `T::default()`.
pub fn load_config<T: DeserializeOwned + Default>(file: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = file else {
        return Ok(T::default());
    };
    require(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flag values collected while overriding a config.
#[derive(Default)]
pub struct Overrides(Vec<&'static str>);

impl Overrides {
    pub fn set<T>(&mut self, name: &'static str, slot: &mut T, flag: Option<T>) {
        if let Some(v) = flag {
            *slot = v;
            self.0.push(name);
        }
    }
}

/// Prints the effective configuration and where it came from.
pub fn announce<T: Serialize>(command: &str, file: Option<&Path>, flags: &Overrides, config: &T) {
    let mut layers = vec!["defaults".to_string()];
    if let Some(f) = file {
        layers.push(format!("file {}", f.display()));
    }
    if !flags.0.is_empty() {
        layers.push(format!("flags [{}]", flags.0.join(", ")));
    }
    let json = serde_json::to_string(config).unwrap_or_default();
    eprintln!("{command}: config ({}) {json}", layers.join(" < "));
}

pub fn engine_params(path: Option<&Path>) -> anyhow::Result<EngineParams> {
    match path {
        Some(p) => {
            require(p)?;
            Ok(EngineParams::from_toml_path(p)?)
        }
        None => Ok(EngineParams::default()),
    }
}

/// The baseline from a CSV (year plus one column per gas) or the built-in
/// synthetic one.
pub fn baseline(registry: &SpeciesRegistry, path: Option<&Path>, manifest: &mut RunManifest) -> anyhow::Result<EmissionTrajectory> {
    match path {
        Some(p) => {
            require(p)?;
            manifest.input(p)?;
            Ok(load_baseline_csv(registry, p)?)
        }
        None => Ok(synthetic_baseline(registry, &BaselineConfig::default())?),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Temperature CSV written by `simulate`: `year,delta_t`.
pub fn write_temps(path: &Path, first_year: i32, temps: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["year", "delta_t"])?;
    for (k, t) in temps.iter().enumerate() {
        w.write_record([(first_year + k as i32).to_string(), format!("{t:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_temps(path: &Path) -> anyhow::Result<(i32, Vec<f64>)> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    let mut first = None;
    let mut temps = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let year: i32 = rec.get(0).context("missing year")?.trim().parse()?;
        let t: f64 = rec.get(1).context("missing delta_t")?.trim().parse()?;
        let first = *first.get_or_insert(year);
        if year != first + k as i32 {
            bail!("{}: years are not consecutive at {year}", path.display());
        }
        temps.push(t);
    }
    Ok((first.context("empty temperature file")?, temps))
}

pub fn temps_name(scenario_id: u64) -> String {
    format!("temp_{scenario_id:05}.csv")
}

/// Resolves a directory argument holding `name`, or a direct file path.
pub fn file_in(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}
