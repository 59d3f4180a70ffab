use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::species::SpeciesRegistry;

/// Per-year, per-gas emissions over a contiguous year range. Rows are years,
/// columns follow registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionTrajectory {
    pub scenario_id: u64,
    start_year: i32,
    n_gases: usize,
    values: Vec<f64>,
}

impl EmissionTrajectory {
    pub fn new(scenario_id: u64, start_year: i32, n_gases: usize, values: Vec<f64>) -> Result<Self> {
        if n_gases == 0 {
            return Err(Error::InvalidInput("trajectory needs at least one gas".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("empty trajectory".into()));
        }
        if values.len() % n_gases != 0 {
            return Err(Error::Shape {
                what: "trajectory values",
                expected: (values.len() / n_gases + 1) * n_gases,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "trajectory values must be finite and non-negative, found {v}"
            )));
        }
        Ok(EmissionTrajectory {
            scenario_id,
            start_year,
            n_gases,
            values,
        })
    }

    pub fn from_rows(scenario_id: u64, start_year: i32, rows: &[Vec<f64>]) -> Result<Self> {
        let n_gases = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_gases) {
            return Err(Error::Shape {
                what: "trajectory row",
                expected: n_gases,
                got: bad.len(),
            });
        }
        Self::new(scenario_id, start_year, n_gases, rows.concat())
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.n_years() as i32 - 1
    }

    pub fn n_years(&self) -> usize {
        self.values.len() / self.n_gases
    }

    pub fn n_gases(&self) -> usize {
        self.n_gases
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.start_year..=self.end_year()
    }

    pub fn contains_year(&self, year: i32) -> bool {
        year >= self.start_year && year <= self.end_year()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_at(&self, index: usize) -> &[f64] {
        &self.values[index * self.n_gases..(index + 1) * self.n_gases]
    }

    /// Emission vector for a calendar year.
    pub fn row(&self, year: i32) -> Option<&[f64]> {
        self.contains_year(year)
            .then(|| self.row_at((year - self.start_year) as usize))
    }

    pub fn get(&self, year: i32, gas: usize) -> Option<f64> {
        self.row(year).map(|r| r[gas])
    }

    pub fn rows(&self) -> impl Iterator<Item = (i32, &[f64])> {
        self.values
            .chunks_exact(self.n_gases)
            .enumerate()
            .map(move |(i, r)| (self.start_year + i as i32, r))
    }

    pub fn column(&self, gas: usize) -> Vec<f64> {
        self.values
            .chunks_exact(self.n_gases)
            .map(|r| r[gas])
            .collect()
    }

    /// Sub-range `[first, last]`, inclusive.
    pub fn slice_years(&self, first: i32, last: i32) -> Result<Self> {
        if !(self.contains_year(first) && self.contains_year(last) && first <= last) {
            return Err(Error::InvalidInput(format!(
                "years {first}..={last} not inside {}..={}",
                self.start_year,
                self.end_year()
            )));
        }
        let a = (first - self.start_year) as usize * self.n_gases;
        let b = (last - self.start_year + 1) as usize * self.n_gases;
        Ok(EmissionTrajectory {
            scenario_id: self.scenario_id,
            start_year: first,
            n_gases: self.n_gases,
            values: self.values[a..b].to_vec(),
        })
    }

    /// Writes `year,<gas names...>` CSV using full round-trip float formatting.
    pub fn write_csv<W: Write>(&self, registry: &SpeciesRegistry, out: W) -> Result<()> {
        self.check_registry(registry)?;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["year".to_string()];
        header.extend(registry.names().map(str::to_string));
        wtr.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_gases + 1);
        for (year, row) in self.rows() {
            record.clear();
            record.push(year.to_string());
            record.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&record)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(registry: &SpeciesRegistry, scenario_id: u64, input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("year") {
            return Err(Error::InvalidInput("first CSV column must be `year`".into()));
        }
        // map registry order onto file columns, so column order in the file is free
        let mut column_of = Vec::with_capacity(registry.len());
        for name in registry.names() {
            let col = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("missing gas column {name}")))?;
            column_of.push(col);
        }
        let mut start = None;
        let mut values = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let year: i32 = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad year {:?}", &record[0])))?;
            let first = *start.get_or_insert(year);
            if year != first + i as i32 {
                return Err(Error::YearOrder {
                    expected: first + i as i32,
                    got: year,
                });
            }
            for &col in &column_of {
                let v: f64 = record[col].trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("bad value {:?} in year {year}", &record[col]))
                })?;
                values.push(v);
            }
        }
        let start = start.ok_or_else(|| Error::InvalidInput("empty emission CSV".into()))?;
        Self::new(scenario_id, start, registry.len(), values)
    }

    pub fn to_csv_path(&self, registry: &SpeciesRegistry, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(registry, std::io::BufWriter::new(file))
    }

    pub fn from_csv_path(registry: &SpeciesRegistry, scenario_id: u64, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(registry, scenario_id, std::io::BufReader::new(file))
    }

    fn check_registry(&self, registry: &SpeciesRegistry) -> Result<()> {
        if registry.len() != self.n_gases {
            return Err(Error::Shape {
                what: "gas count",
                expected: registry.len(),
                got: self.n_gases,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::default_registry;

    fn toy(reg: &SpeciesRegistry) -> EmissionTrajectory {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|y| (0..reg.len()).map(|g| 0.1 + y as f64 * 1.3 + g as f64 / 7.0).collect())
            .collect();
        EmissionTrajectory::from_rows(7, 2000, &rows).unwrap()
    }

    #[test]
    fn year_indexing() {
        let reg = default_registry();
        let t = toy(&reg);
        assert_eq!(t.end_year(), 2003);
        assert_eq!(t.n_years(), 4);
        assert_eq!(t.row(2002).unwrap(), t.row_at(2));
        assert!(t.row(1999).is_none());
        let s = t.slice_years(2001, 2002).unwrap();
        assert_eq!(s.start_year(), 2001);
        assert_eq!(s.row(2002), t.row(2002));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let reg = default_registry();
        let t = toy(&reg);
        let mut buf = Vec::new();
        t.write_csv(&reg, &mut buf).unwrap();
        let back = EmissionTrajectory::read_csv(&reg, 7, buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_gaps_and_negatives() {
        let reg = default_registry();
        let t = toy(&reg);
        let mut buf = Vec::new();
        t.write_csv(&reg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\n2001,", "\n2005,");
        assert!(matches!(
            EmissionTrajectory::read_csv(&reg, 0, text.as_bytes()),
            Err(Error::YearOrder { .. })
        ));
        assert!(EmissionTrajectory::new(0, 2000, 2, vec![1.0, -1.0]).is_err());
        assert!(EmissionTrajectory::new(0, 2000, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn missing_gas_column_is_reported() {
        let reg = default_registry();
        let err = EmissionTrajectory::read_csv(&reg, 0, "year,CO2_FF\n2000,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing gas column"));
    }
}
