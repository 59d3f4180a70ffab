//! Gas universe, controllable subset, and per-species metadata.
//!
//! The registry ordering is the vector layout used by every emission vector in
//! the crate: index `g` of an emission vector is `registry.species()[g]`.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Species table shipped with the crate.
pub const DEFAULT_SPECIES_CSV: &str = include_str!("../data/species.csv");

/// Names of the controllable gases, in vector order.
pub const DEFAULT_CONTROLLABLE: [&str; 5] = ["CO2_FF", "CO2_AFOLU", "CH4", "N2O", "SO2"];

pub const N_GASES: usize = 40;
pub const N_CONTROLLABLE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeciesClass {
    LongLivedGhg,
    VeryLongLivedGhg,
    ShortLivedGhg,
    AerosolPrecursor,
    OzonePrecursor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Treatment {
    CarbonCycle,
    FixedLifetimeDecay,
    MultiTauDecay,
    LinearForcingProxy,
}

impl Treatment {
    pub fn is_decay(self) -> bool {
        matches!(self, Treatment::FixedLifetimeDecay | Treatment::MultiTauDecay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingSign {
    Warming,
    Cooling,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub class: SpeciesClass,
    pub treatment: Treatment,
    pub lifetime_years: Option<f64>,
    pub forcing_sign: ForcingSign,
}

impl Species {
    fn validate(&self) -> Result<()> {
        match self.treatment {
            Treatment::CarbonCycle => {
                if !self.name.starts_with("CO2") {
                    return Err(Error::Config(format!(
                        "{}: carbon-cycle treatment is reserved for CO2 species",
                        self.name
                    )));
                }
                if self.lifetime_years.is_some() {
                    return Err(Error::Config(format!(
                        "{}: carbon-cycle species take pool lifetimes from engine config",
                        self.name
                    )));
                }
            }
            Treatment::FixedLifetimeDecay | Treatment::MultiTauDecay => match self.lifetime_years {
                Some(tau) if tau.is_finite() && tau > 0.0 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{}: decay treatment needs a positive lifetime",
                        self.name
                    )))
                }
            },
            Treatment::LinearForcingProxy => {
                if self.lifetime_years.is_some() {
                    return Err(Error::Config(format!(
                        "{}: linear forcing proxies have no lifetime",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered gas set plus the ordered controllable subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRegistry {
    species: Vec<Species>,
    controllable: Vec<usize>,
}

impl SpeciesRegistry {
    pub fn new(species: Vec<Species>, controllable: &[&str]) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &species {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate species {}", s.name)));
            }
        }
        let mut registry = SpeciesRegistry {
            species,
            controllable: Vec::new(),
        };
        registry.controllable = controllable
            .iter()
            .map(|name| {
                registry
                    .index_of(name)
                    .ok_or_else(|| Error::Config(format!("controllable gas {name} not in registry")))
            })
            .collect::<Result<_>>()?;
        let unique: HashSet<_> = registry.controllable.iter().collect();
        if unique.len() != registry.controllable.len() {
            return Err(Error::Config("controllable subset has duplicates".into()));
        }
        Ok(registry)
    }

    /// Reads the species CSV (`name,class,treatment,lifetime_years,forcing_sign`).
    pub fn from_csv_reader<R: Read>(reader: R, controllable: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["name", "class", "treatment", "lifetime_years", "forcing_sign"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Config(format!(
                "species header must be {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let species = rdr
            .deserialize::<Species>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(species, controllable)
    }

    pub fn from_csv_path(path: &Path, controllable: &[&str]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, controllable)
    }

    pub fn to_csv_string(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for s in &self.species {
            wtr.serialize(s).expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.species.iter().map(|s| s.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    /// Registry indices of the controllable gases, in subset order.
    pub fn controllable(&self) -> &[usize] {
        &self.controllable
    }

    pub fn controllable_names(&self) -> Vec<&str> {
        self.controllable
            .iter()
            .map(|&i| self.species[i].name.as_str())
            .collect()
    }

    pub fn with_controllable(&self, names: &[&str]) -> Result<Self> {
        Self::new(self.species.clone(), names)
    }

    pub fn controllable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.species.len()];
        for &i in &self.controllable {
            mask[i] = true;
        }
        mask
    }

    /// Picks the controllable entries out of a full gas vector.
    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        debug_assert_eq!(full.len(), self.species.len());
        self.controllable.iter().map(|&i| full[i]).collect()
    }

    /// Inverse of [`project`](Self::project) with zeros for the other gases.
    pub fn scatter(&self, sub: &[f64]) -> Vec<f64> {
        debug_assert_eq!(sub.len(), self.controllable.len());
        let mut full = vec![0.0; self.species.len()];
        for (&i, &v) in self.controllable.iter().zip(sub) {
            full[i] = v;
        }
        full
    }

    /// SHA-256 over the canonical CSV form plus the controllable list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_csv_string().as_bytes());
        for name in self.controllable_names() {
            hasher.update(b"|");
            hasher.update(name.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub fn default_registry() -> SpeciesRegistry {
    SpeciesRegistry::from_csv_reader(DEFAULT_SPECIES_CSV.as_bytes(), &DEFAULT_CONTROLLABLE)
        .expect("shipped species table is valid")
}
