//! Spectral data ingestion: dispersion tables, colour-matching functions,
//! illuminants, and the uniform wavelength grid everything is sampled on.
//!
//! All tabulated data is interpolated piecewise-linearly in wavelength and is
//! never extrapolated past the first or last row.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Piecewise-linear lookup on strictly increasing `xs`. Returns the stored
/// value bit-for-bit when `x` is a node. `None` outside `[xs[0], xs[last]]`.
fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let first = *xs.first()?;
    let last = *xs.last()?;
    if !(x >= first && x <= last) {
        return None;
    }
    // index of the first node >= x
    let hi = xs.partition_point(|&w| w < x);
    if xs[hi] == x {
        return Some(ys[hi]);
    }
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    Some(ys[lo] + (ys[hi] - ys[lo]) * t)
}

/// Uniform wavelength grid with both endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    min_nm: f64,
    max_nm: f64,
    count: usize,
}

impl SpectralGrid {
    pub fn new(min_nm: f64, max_nm: f64, count: usize) -> Result<Self> {
        if !(min_nm.is_finite() && max_nm.is_finite()) || min_nm <= 0.0 || min_nm >= max_nm {
            return Err(Error::Validation(format!(
                "grid needs 0 < min < max, got [{min_nm}, {max_nm}]"
            )));
        }
        if count < 2 {
            return Err(Error::Validation(format!(
                "grid needs at least 2 samples, got {count}"
            )));
        }
        Ok(Self {
            min_nm,
            max_nm,
            count,
        })
    }

    /// 400-700 nm in 10 nm steps.
    pub fn visible() -> Self {
        Self {
            min_nm: 400.0,
            max_nm: 700.0,
            count: 31,
        }
    }

    pub fn min_nm(&self) -> f64 {
        self.min_nm
    }

    pub fn max_nm(&self) -> f64 {
        self.max_nm
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Wavelength of sample `i` (zero-based). Computed as
    /// `min + (i * span) / (count - 1)` so that a refined grid reproduces the
    /// shared wavelengths of a coarser one exactly.
    pub fn wavelength(&self, i: usize) -> f64 {
        assert!(i < self.count, "grid index {i} out of range");
        if i + 1 == self.count {
            return self.max_nm;
        }
        let span = self.max_nm - self.min_nm;
        self.min_nm + (i as f64 * span) / (self.count - 1) as f64
    }

    pub fn wavelengths(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.wavelength(i))
    }
}

impl Default for SpectralGrid {
    fn default() -> Self {
        Self::visible()
    }
}

/// A real-valued function sampled on a [`SpectralGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    grid: SpectralGrid,
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(grid: SpectralGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "curve has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite curve value at {} nm",
                grid.wavelength(i)
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: SpectralGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.wavelengths().zip(self.values.iter().copied())
    }
}

/// Evaluates `f` at every grid wavelength.
pub fn sample_curve<F>(grid: SpectralGrid, mut f: F) -> Result<SpectralCurve>
where
    F: FnMut(f64) -> Result<f64>,
{
    let values = grid.wavelengths().map(&mut f).collect::<Result<Vec<_>>>()?;
    SpectralCurve::new(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSample {
    pub wavelength_nm: f64,
    pub n: f64,
    pub k: f64,
}

/// Tabulated complex refractive index `n + ik` of one material.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionTable {
    material_id: String,
    wavelengths: Vec<f64>,
    n: Vec<f64>,
    k: Vec<f64>,
}

impl DispersionTable {
    pub fn new(material_id: impl Into<String>, samples: &[DispersionSample]) -> Result<Self> {
        let material_id = material_id.into();
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "`{material_id}`: dispersion table needs at least 2 samples"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.wavelength_nm.is_finite() && s.n.is_finite() && s.k.is_finite()) {
                return Err(Error::Validation(format!(
                    "`{material_id}` row {}: non-finite value",
                    i + 1
                )));
            }
            if s.n <= 0.0 {
                return Err(Error::Validation(format!(
                    "`{material_id}` at {} nm: n must be > 0, got {}",
                    s.wavelength_nm, s.n
                )));
            }
            if s.k < 0.0 {
                return Err(Error::Validation(format!(
                    "`{material_id}` at {} nm: k must be >= 0, got {}",
                    s.wavelength_nm, s.k
                )));
            }
        }
        for pair in samples.windows(2) {
            if pair[1].wavelength_nm == pair[0].wavelength_nm {
                return Err(Error::Validation(format!(
                    "`{material_id}`: duplicate wavelength {} nm",
                    pair[0].wavelength_nm
                )));
            }
            if pair[1].wavelength_nm < pair[0].wavelength_nm {
                return Err(Error::Validation(format!(
                    "`{material_id}`: wavelengths not increasing ({} after {})",
                    pair[1].wavelength_nm, pair[0].wavelength_nm
                )));
            }
        }
        Ok(Self {
            material_id,
            wavelengths: samples.iter().map(|s| s.wavelength_nm).collect(),
            n: samples.iter().map(|s| s.n).collect(),
            k: samples.iter().map(|s| s.k).collect(),
        })
    }

    /// A material with the same index at every wavelength of `[min_nm, max_nm]`.
    pub fn constant(
        material_id: impl Into<String>,
        index: Complex64,
        min_nm: f64,
        max_nm: f64,
    ) -> Result<Self> {
        Self::new(
            material_id,
            &[
                DispersionSample {
                    wavelength_nm: min_nm,
                    n: index.re,
                    k: index.im,
                },
                DispersionSample {
                    wavelength_nm: max_nm,
                    n: index.re,
                    k: index.im,
                },
            ],
        )
    }

    /// Reads a `wavelength_nm,n,k` CSV file. The material id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("material")
            .to_string();
        let rows = read_numeric_csv(path, &["wavelength_nm", "n", "k"])?;
        let samples: Vec<_> = rows
            .iter()
            .map(|r| DispersionSample {
                wavelength_nm: r[0],
                n: r[1],
                k: r[2],
            })
            .collect();
        Self::new(id, &samples)
    }

    pub fn material_id(&self) -> &str {
        &self.material_id
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    pub fn range_nm(&self) -> (f64, f64) {
        (self.wavelengths[0], self.wavelengths[self.wavelengths.len() - 1])
    }

    pub fn samples(&self) -> impl Iterator<Item = DispersionSample> + '_ {
        (0..self.len()).map(|i| DispersionSample {
            wavelength_nm: self.wavelengths[i],
            n: self.n[i],
            k: self.k[i],
        })
    }

    pub fn covers(&self, grid: &SpectralGrid) -> bool {
        let (lo, hi) = self.range_nm();
        grid.min_nm() >= lo && grid.max_nm() <= hi
    }

    /// Interpolated complex index `n + ik` at `lambda_nm`; `n` and `k` are
    /// interpolated independently.
    pub fn index_at(&self, lambda_nm: f64) -> Result<Complex64> {
        let n = interp_linear(&self.wavelengths, &self.n, lambda_nm);
        let k = interp_linear(&self.wavelengths, &self.k, lambda_nm);
        match (n, k) {
            (Some(n), Some(k)) => Ok(Complex64::new(n, k)),
            _ => {
                let (min_nm, max_nm) = self.range_nm();
                Err(Error::Range {
                    material: self.material_id.clone(),
                    lambda_nm,
                    min_nm,
                    max_nm,
                })
            }
        }
    }
}

/// A multi-column spectral table (colour-matching functions, illuminants).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTable {
    name: String,
    wavelengths: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl SpectralTable {
    fn from_rows(name: String, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Validation(format!(
                "`{name}`: spectral table needs at least 2 rows"
            )));
        }
        let width = rows[0].len();
        let wavelengths: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        if let Some(w) = wavelengths.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "`{name}`: wavelengths must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let columns = (1..width)
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect();
        Ok(Self {
            name,
            wavelengths,
            columns,
        })
    }

    /// CIE colour-matching functions, header `wavelength_nm,xbar,ybar,zbar`.
    pub fn load_cmf(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_numeric_csv(path, &["wavelength_nm", "xbar", "ybar", "zbar"])?;
        let table = Self::from_rows(path.display().to_string(), rows)?;
        if table.columns.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::Validation(format!(
                "`{}`: colour-matching functions must be non-negative",
                table.name
            )));
        }
        Ok(table)
    }

    /// Relative spectral power distribution, header `wavelength_nm,power`.
    pub fn load_illuminant(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = read_numeric_csv(path, &["wavelength_nm", "power"])?;
        let table = Self::from_rows(path.display().to_string(), rows)?;
        if table.columns[0].iter().any(|&v| v < 0.0) {
            return Err(Error::Validation(format!(
                "`{}`: illuminant power must be non-negative",
                table.name
            )));
        }
        Ok(table)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn value_at(&self, column: usize, lambda_nm: f64) -> Result<f64> {
        interp_linear(&self.wavelengths, &self.columns[column], lambda_nm).ok_or_else(|| {
            Error::Range {
                material: self.name.clone(),
                lambda_nm,
                min_nm: self.wavelengths[0],
                max_nm: self.wavelengths[self.wavelengths.len() - 1],
            }
        })
    }

    pub fn sample(&self, column: usize, grid: SpectralGrid) -> Result<SpectralCurve> {
        sample_curve(grid, |l| self.value_at(column, l))
    }
}

fn read_numeric_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let context = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(&context, format!("{other:?}")),
        })?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(&context, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::parse(
            &context,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&context, e))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::parse(&context, format!("row {}: bad number `{field}`", i + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Deserialize)]
struct CatalogEntry {
    monolayer_nm: f64,
}

/// Every `<id>.csv` dispersion table found in one directory, plus the optional
/// `catalog.json` of default monolayer thicknesses.
#[derive(Debug, Clone, Default)]
pub struct MaterialLibrary {
    dir: PathBuf,
    tables: BTreeMap<String, Arc<DispersionTable>>,
    monolayer_nm: BTreeMap<String, f64>,
}

impl MaterialLibrary {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut lib = Self {
            dir: dir.clone(),
            ..Self::default()
        };
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        for path in paths {
            let table = DispersionTable::load(&path)?;
            lib.tables
                .insert(table.material_id().to_string(), Arc::new(table));
        }
        let catalog = dir.join("catalog.json");
        if catalog.exists() {
            let text = fs::read_to_string(&catalog).map_err(|e| Error::io(&catalog, e))?;
            let entries: BTreeMap<String, CatalogEntry> = serde_json::from_str(&text)
                .map_err(|e| Error::parse(catalog.display().to_string(), e))?;
            lib.monolayer_nm = entries
                .into_iter()
                .map(|(id, e)| (id, e.monolayer_nm))
                .collect();
        }
        Ok(lib)
    }

    pub fn insert(&mut self, table: DispersionTable) {
        self.tables
            .insert(table.material_id().to_string(), Arc::new(table));
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, id: &str) -> Result<Arc<DispersionTable>> {
        self.tables.get(id).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown material `{id}` (known: {})",
                self.ids().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tables.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    /// Default single-layer thickness in nm, if the catalog lists one.
    pub fn monolayer_nm(&self, id: &str) -> Option<f64> {
        self.monolayer_nm.get(id).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn table(rows: &[(f64, f64, f64)]) -> DispersionTable {
        let samples: Vec<_> = rows
            .iter()
            .map(|&(w, n, k)| DispersionSample {
                wavelength_nm: w,
                n,
                k,
            })
            .collect();
        DispersionTable::new("t", &samples).unwrap()
    }

    #[test]
    fn parses_two_row_file() {
        let f = write_tmp("wavelength_nm,n,k\n400,1.47,0\n700,1.45,0\n");
        let t = DispersionTable::load(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.index_at(400.0).unwrap(), Complex64::new(1.47, 0.0));
    }

    #[test]
    fn rejects_out_of_order_rows() {
        let f = write_tmp("wavelength_nm,n,k\n700,1.45,0\n400,1.47,0\n");
        assert!(matches!(
            DispersionTable::load(f.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_bad_values() {
        for body in [
            "400,0,0\n700,1,0\n",
            "400,1,-0.1\n700,1,0\n",
            "400,1,0\n400,1,0\n",
        ] {
            let f = write_tmp(&format!("wavelength_nm,n,k\n{body}"));
            assert!(
                matches!(DispersionTable::load(f.path()), Err(Error::Validation(_))),
                "{body}"
            );
        }
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let f = write_tmp("wavelength_nm,n,k\n400,abc,0\n700,1,0\n");
        assert!(matches!(
            DispersionTable::load(f.path()),
            Err(Error::Parse { .. })
        ));
        let f = write_tmp("lambda,n,k\n400,1,0\n700,1,0\n");
        assert!(matches!(
            DispersionTable::load(f.path()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn interpolation_examples() {
        let t = table(&[(500.0, 1.5, 0.0), (550.0, 1.46, 0.0), (600.0, 1.7, 0.2)]);
        assert_eq!(t.index_at(550.0).unwrap(), Complex64::new(1.46, 0.0));
        let t = table(&[(500.0, 1.5, 0.0), (600.0, 1.7, 0.2)]);
        let mid = t.index_at(550.0).unwrap();
        assert!((mid.re - 1.6).abs() < 1e-12);
        assert!((mid.im - 0.1).abs() < 1e-12);
        let t = table(&[(400.0, 1.5, 0.0), (700.0, 1.7, 0.0)]);
        assert!(matches!(t.index_at(399.0), Err(Error::Range { .. })));
        assert!(matches!(t.index_at(700.5), Err(Error::Range { .. })));
        assert!(matches!(t.index_at(f64::NAN), Err(Error::Range { .. })));
    }

    #[test]
    fn constant_table_is_constant() {
        let t = DispersionTable::constant("c", Complex64::new(2.0, 0.3), 300.0, 900.0).unwrap();
        for l in [300.0, 333.3, 512.0, 899.99, 900.0] {
            assert_eq!(t.index_at(l).unwrap(), Complex64::new(2.0, 0.3));
        }
    }

    #[test]
    fn grid_endpoints_and_refinement() {
        let g = SpectralGrid::new(400.0, 700.0, 2).unwrap();
        assert_eq!(g.wavelengths().collect::<Vec<_>>(), vec![400.0, 700.0]);
        let c = sample_curve(g, Ok).unwrap();
        assert_eq!(c.values(), &[400.0, 700.0]);

        for d in [2usize, 3, 7, 31, 97] {
            let coarse = SpectralGrid::new(412.3, 687.9, d).unwrap();
            let fine = SpectralGrid::new(412.3, 687.9, 2 * d - 1).unwrap();
            for i in 0..d {
                assert_eq!(
                    coarse.wavelength(i).to_bits(),
                    fine.wavelength(2 * i).to_bits()
                );
            }
        }
        assert!(SpectralGrid::new(700.0, 400.0, 31).is_err());
        assert!(SpectralGrid::new(400.0, 700.0, 1).is_err());
    }

    #[test]
    fn constant_function_curve() {
        let c = sample_curve(SpectralGrid::visible(), |_| Ok(1.0)).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn curve_rejects_wrong_length_and_nan() {
        let g = SpectralGrid::new(400.0, 700.0, 3).unwrap();
        assert!(matches!(
            SpectralCurve::new(g, vec![1.0, 2.0]),
            Err(Error::Shape(_))
        ));
        assert!(SpectralCurve::new(g, vec![1.0, f64::NAN, 2.0]).is_err());
    }
}
