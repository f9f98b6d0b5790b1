//! CSV files exchanged with the outside world. Ids in files are 1-based;
//! patch id 0 in trip records marks the outside option.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use patchfish_core::panel::{CellMap, PortPrice, RosterEntry, TripRecord};
use patchfish_core::Period;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const TRIPS_HEADER: [&str; 6] = ["vessel_id", "port_id", "year", "month", "patch_id", "catch_tons"];
pub const ROSTER_HEADER: [&str; 4] = ["vessel_id", "port_id", "from_ym", "to_ym"];
pub const PRICES_HEADER: [&str; 5] = ["port_id", "year", "month", "landed_price", "fuel_price"];
pub const DISTANCES_HEADER: [&str; 3] = ["port_id", "patch_id", "nmi"];
pub const BIOMASS_HEADER: [&str; 4] = ["patch_id", "year", "month", "biomass_tons"];
pub const TOTALS_HEADER: [&str; 2] = ["year", "total_tons"];

/// A rejected row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub issues: Vec<RowIssue>,
}

impl<T> Parsed<T> {
    /// Fails when any row was rejected, naming the first few.
    pub fn into_strict(self, path: &Path) -> Result<Vec<T>> {
        if self.issues.is_empty() {
            Ok(self.rows)
        } else {
            Err(issues_error(path, &self.issues))
        }
    }
}

fn issues_error(path: &Path, issues: &[RowIssue]) -> CliError {
    let shown: Vec<String> = issues.iter().take(5).map(|i| format!("line {}: {}", i.line, i.message)).collect();
    let more = issues.len().saturating_sub(shown.len());
    let mut message = format!("{} malformed row(s): {}", issues.len(), shown.join("; "));
    if more > 0 {
        message.push_str(&format!("; and {more} more"));
    }
    CliError::data("ingest", message).with_file(path)
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads typed rows, checking that every expected column is present.
/// With `strict`, the first bad row aborts.
fn read_rows<R: DeserializeOwned>(path: &Path, expected: &[&str], strict: bool) -> Result<Parsed<(u64, R)>> {
    let mut reader = open(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data("ingest", format!("unreadable header: {e}")).with_file(path))?
        .clone();
    let missing: Vec<&str> = expected.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(CliError::data("ingest", format!("missing column(s): {}", missing.join(", "))).with_file(path));
    }
    let mut out = Parsed { rows: Vec::new(), issues: Vec::new() };
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                match record.deserialize::<R>(Some(&headers)) {
                    Ok(row) => out.rows.push((line, row)),
                    Err(e) => out.issues.push(RowIssue { line, message: describe(&e) }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.issues.push(RowIssue { line, message: describe(&e) });
            }
        }
        if strict && !out.issues.is_empty() {
            return Err(issues_error(path, &out.issues));
        }
    }
    Ok(out)
}

fn describe(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(field) => format!("field {}: {}", field + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn write_rows<S: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = writer(path)?;
    let fail = |e: csv::Error| CliError::data("ingest", e.to_string()).with_file(path);
    // An explicit header keeps it present when there are no rows.
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn period(year: i32, month: u8) -> std::result::Result<Period, String> {
    Period::new(year, month).ok_or_else(|| format!("month {month} out of range 1..=12"))
}

/// Applies a row check, collecting failures the same way as parse failures.
fn validate<R, T>(
    parsed: Parsed<(u64, R)>,
    strict: bool,
    path: &Path,
    check: impl Fn(R) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut out = Parsed { rows: Vec::new(), issues: parsed.issues };
    for (line, row) in parsed.rows {
        match check(row) {
            Ok(v) => out.rows.push(v),
            Err(message) => {
                out.issues.push(RowIssue { line, message });
                if strict {
                    return Err(issues_error(path, &out.issues));
                }
            }
        }
    }
    out.issues.sort_by_key(|i| i.line);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TripRow {
    vessel_id: u32,
    port_id: u32,
    year: i32,
    month: u8,
    patch_id: u32,
    catch_tons: f64,
}

pub fn parse_trips(path: &Path, strict: bool) -> Result<Parsed<TripRecord>> {
    let raw = read_rows::<TripRow>(path, &TRIPS_HEADER, strict)?;
    validate(raw, strict, path, |r| {
        if r.port_id == 0 {
            return Err("port_id must be >= 1".into());
        }
        if !(r.catch_tons >= 0.0 && r.catch_tons.is_finite()) {
            return Err(format!("catch_tons {} must be finite and >= 0", r.catch_tons));
        }
        if r.patch_id == 0 && r.catch_tons != 0.0 {
            return Err("outside option (patch_id 0) must have zero catch".into());
        }
        Ok(TripRecord {
            vessel_id: r.vessel_id,
            port: r.port_id as usize - 1,
            period: period(r.year, r.month)?,
            patch: (r.patch_id > 0).then(|| r.patch_id as usize - 1),
            catch_tons: r.catch_tons,
        })
    })
}

pub fn write_trips(path: &Path, records: &[TripRecord]) -> Result<()> {
    write_rows(
        path,
        &TRIPS_HEADER,
        records.iter().map(|r| TripRow {
            vessel_id: r.vessel_id,
            port_id: r.port as u32 + 1,
            year: r.period.year,
            month: r.period.month,
            patch_id: r.patch.map_or(0, |k| k as u32 + 1),
            catch_tons: r.catch_tons,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RosterRow {
    vessel_id: u32,
    port_id: u32,
    from_ym: u32,
    to_ym: u32,
}

pub fn parse_roster(path: &Path, strict: bool) -> Result<Parsed<RosterEntry>> {
    let raw = read_rows::<RosterRow>(path, &ROSTER_HEADER, strict)?;
    validate(raw, strict, path, |r| {
        if r.port_id == 0 {
            return Err("port_id must be >= 1".into());
        }
        let from = Period::from_ym(r.from_ym).ok_or_else(|| format!("from_ym {} is not YYYYMM", r.from_ym))?;
        let to = Period::from_ym(r.to_ym).ok_or_else(|| format!("to_ym {} is not YYYYMM", r.to_ym))?;
        if to < from {
            return Err(format!("to_ym {} precedes from_ym {}", r.to_ym, r.from_ym));
        }
        Ok(RosterEntry { vessel_id: r.vessel_id, port: r.port_id as usize - 1, from, to })
    })
}

pub fn write_roster(path: &Path, roster: &[RosterEntry]) -> Result<()> {
    write_rows(
        path,
        &ROSTER_HEADER,
        roster.iter().map(|r| RosterRow {
            vessel_id: r.vessel_id,
            port_id: r.port as u32 + 1,
            from_ym: r.from.ym(),
            to_ym: r.to.ym(),
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PriceRow {
    port_id: u32,
    year: i32,
    month: u8,
    landed_price: f64,
    fuel_price: f64,
}

pub fn parse_prices(path: &Path, strict: bool) -> Result<Parsed<PortPrice>> {
    let raw = read_rows::<PriceRow>(path, &PRICES_HEADER, strict)?;
    validate(raw, strict, path, |r| {
        if r.port_id == 0 {
            return Err("port_id must be >= 1".into());
        }
        if !(r.landed_price > 0.0 && r.fuel_price >= 0.0) {
            return Err("landed_price must be > 0 and fuel_price >= 0".into());
        }
        Ok(PortPrice {
            port: r.port_id as usize - 1,
            period: period(r.year, r.month)?,
            landed_price: r.landed_price,
            fuel_price: r.fuel_price,
        })
    })
}

pub fn write_prices(path: &Path, prices: &[PortPrice]) -> Result<()> {
    write_rows(
        path,
        &PRICES_HEADER,
        prices.iter().map(|p| PriceRow {
            port_id: p.port as u32 + 1,
            year: p.period.year,
            month: p.period.month,
            landed_price: p.landed_price,
            fuel_price: p.fuel_price,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DistanceRow {
    port_id: u32,
    patch_id: u32,
    nmi: f64,
}

/// Distance table as `[port][patch]`; every pair must appear exactly once.
pub fn read_distances(path: &Path, n_patches: usize) -> Result<Vec<Vec<f64>>> {
    let rows = read_rows::<DistanceRow>(path, &DISTANCES_HEADER, true)?.rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let fail = |m: String| CliError::data("ingest", m).with_file(path);
    let n_ports = rows.iter().map(|r| r.port_id as usize).max().unwrap_or(0);
    let mut table = vec![vec![f64::NAN; n_patches]; n_ports];
    for r in &rows {
        if r.port_id == 0 || r.patch_id == 0 || r.patch_id as usize > n_patches {
            return Err(fail(format!("port {} / patch {} out of range", r.port_id, r.patch_id)));
        }
        if !(r.nmi >= 0.0 && r.nmi.is_finite()) {
            return Err(fail(format!("distance {} must be finite and >= 0", r.nmi)));
        }
        let cell = &mut table[r.port_id as usize - 1][r.patch_id as usize - 1];
        if !cell.is_nan() {
            return Err(fail(format!("duplicate distance for port {} patch {}", r.port_id, r.patch_id)));
        }
        *cell = r.nmi;
    }
    for (j, row) in table.iter().enumerate() {
        if let Some(k) = row.iter().position(|d| d.is_nan()) {
            return Err(fail(format!("no distance for port {} patch {}", j + 1, k + 1)));
        }
    }
    if table.is_empty() {
        return Err(fail("no distances".into()));
    }
    Ok(table)
}

pub fn write_distances(path: &Path, table: &[Vec<f64>]) -> Result<()> {
    let rows = table.iter().enumerate().flat_map(|(j, row)| {
        row.iter().enumerate().map(move |(k, d)| DistanceRow { port_id: j as u32 + 1, patch_id: k as u32 + 1, nmi: *d })
    });
    write_rows(path, &DISTANCES_HEADER, rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BiomassRow {
    patch_id: u32,
    year: i32,
    month: u8,
    biomass_tons: f64,
}

pub fn read_biomass(path: &Path) -> Result<CellMap<f64>> {
    let rows = read_rows::<BiomassRow>(path, &BIOMASS_HEADER, true)?.rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let mut out = CellMap::new();
    for r in rows {
        let p = period(r.year, r.month).map_err(|m| CliError::data("ingest", m).with_file(path))?;
        if r.patch_id == 0 {
            return Err(CliError::data("ingest", "patch_id must be >= 1").with_file(path));
        }
        out.insert((p, r.patch_id as usize - 1), r.biomass_tons);
    }
    Ok(out)
}

/// Rows ordered by patch, then month.
pub fn write_biomass(path: &Path, biomass: &CellMap<f64>) -> Result<()> {
    let mut cells: Vec<(&(Period, usize), &f64)> = biomass.iter().collect();
    cells.sort_by_key(|((p, k), _)| (*k, *p));
    write_rows(
        path,
        &BIOMASS_HEADER,
        cells.into_iter().map(|((p, k), x)| BiomassRow {
            patch_id: *k as u32 + 1,
            year: p.year,
            month: p.month,
            biomass_tons: *x,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TotalRow {
    year: i32,
    total_tons: f64,
}

/// Annual whole-fishery totals used to calibrate the biomass level.
pub fn read_annual_totals(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let rows = read_rows::<TotalRow>(path, &TOTALS_HEADER, true)?.rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    Ok(rows.into_iter().map(|r| (r.year, r.total_tons)).collect())
}

pub fn write_annual_totals(path: &Path, totals: &BTreeMap<i32, f64>) -> Result<()> {
    write_rows(path, &TOTALS_HEADER, totals.iter().map(|(y, t)| TotalRow { year: *y, total_tons: *t }))
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
