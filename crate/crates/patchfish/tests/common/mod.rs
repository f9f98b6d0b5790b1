//! Reference tables used as report fixtures, stored as printed. The
//! statistics are taken as given: they are not always the estimate over its
//! standard error.

#![allow(dead_code)]

use patchfish::report::{capacity_table, layout, parameter_table, CapacityRow, EquationRow, ParameterRow};

pub const FIRST_STAGE: [[&str; 4]; 24] = [
    ["alpha0_2001", "4.8311", "0.0576", "83.86"],
    ["alpha0_2002", "5.0050", "0.0579", "86.43"],
    ["alpha0_2003", "5.0164", "0.0474", "105.86"],
    ["alpha0_2004", "4.7792", "0.0492", "97.11"],
    ["alpha1_2001_1", "0.1500", "0.0138", "10.88"],
    ["alpha1_2001_2", "0.0281", "0.0037", "7.62"],
    ["alpha1_2001_3", "0.0612", "0.0036", "17.09"],
    ["alpha1_2001_4", "0.0059", "0.0012", "4.99"],
    ["alpha1_2002_1", "0.1510", "0.0138", "10.98"],
    ["alpha1_2002_2", "0.0292", "0.0036", "8.01"],
    ["alpha1_2002_3", "0.0614", "0.0036", "16.90"],
    ["alpha1_2002_4", "0.0057", "0.0012", "4.81"],
    ["alpha1_2003_1", "0.1450", "0.0138", "10.51"],
    ["alpha1_2003_2", "0.0297", "0.0036", "8.25"],
    ["alpha1_2003_3", "0.0636", "0.0036", "17.92"],
    ["alpha1_2003_4", "0.0061", "0.0011", "5.36"],
    ["alpha1_2004_1", "0.1460", "0.0137", "10.65"],
    ["alpha1_2004_2", "0.0268", "0.0036", "7.55"],
    ["alpha1_2004_3", "0.0596", "0.0035", "17.16"],
    ["alpha1_2004_4", "0.0056", "0.0011", "4.99"],
    ["alpha2_2001", "1.0798", "0.0133", "80.96"],
    ["alpha2_2002", "1.0464", "0.0132", "79.30"],
    ["alpha2_2003", "1.0538", "0.0109", "96.44"],
    ["alpha2_2004", "1.0940", "0.0115", "95.10"],
];

pub const FIRST_STAGE_EQUATIONS: [(&str, usize, usize, f64); 4] = [
    ("Equation 1", 906, 98, 0.79),
    ("Equation 2", 906, 102, 0.08),
    ("Equation 3", 906, 102, 0.45),
    ("Equation 4", 906, 102, 0.24),
];

pub const STRUCTURAL: [[&str; 4]; 29] = [
    ["r", "0.02868", "0.0548", "5.24"],
    ["d_1_1", "0.32227", "0.1580", "-0.22"],
    ["d_2_2", "0.36324", "0.1949", "-0.39"],
    ["d_3_3", "-0.58030", "0.0954", "9.09"],
    ["d_4_4", "-0.57359", "0.1439", "5.98"],
    ["d_5_5", "0.40652", "0.1874", "-0.64"],
    ["d_6_6", "0.20689", "0.1295", "0.62"],
    ["d_7_7", "-0.33636", "0.1378", "4.52"],
    ["d_8_8", "1.12373", "0.2421", "-3.46"],
    ["d_1_2", "-0.03225", "0.0230", "-1.40"],
    ["d_1_3", "0.17289", "0.0764", "2.26"],
    ["d_2_1", "0.56443", "0.0803", "7.02"],
    ["d_2_4", "0.02172", "0.0805", "0.27"],
    ["d_3_1", "-0.10329", "0.0297", "-3.47"],
    ["d_3_4", "0.06132", "0.0304", "2.02"],
    ["d_3_5", "-0.03265", "0.0436", "-0.75"],
    ["d_4_2", "-0.28887", "0.0252", "-11.48"],
    ["d_4_3", "0.43961", "0.0758", "5.80"],
    ["d_4_6", "-0.07317", "0.0249", "-2.94"],
    ["d_5_3", "0.43810", "0.0778", "5.63"],
    ["d_5_6", "-0.10528", "0.0296", "-3.56"],
    ["d_5_7", "0.03319", "0.0877", "0.38"],
    ["d_6_4", "0.20394", "0.0531", "3.84"],
    ["d_6_5", "0.29074", "0.0538", "5.40"],
    ["d_6_8", "-0.15976", "0.0548", "-2.92"],
    ["d_7_5", "0.16404", "0.0494", "3.32"],
    ["d_7_8", "-0.03292", "0.0282", "-1.17"],
    ["d_8_6", "0.87619", "0.1177", "7.45"],
    ["d_8_7", "-0.10154", "0.0463", "-2.19"],
];

/// `[at_80, at_90, mean]` per patch.
pub const CAPACITY: [[&str; 3]; 8] = [
    ["6.736", "6.987", "19.045"],
    ["2.105", "2.325", "4.168"],
    ["1.815", "2.045", "3.309"],
    ["1.459", "1.655", "2.589"],
    ["4.179", "4.470", "9.740"],
    ["2.779", "3.080", "5.386"],
    ["1.821", "2.033", "3.443"],
    ["11.757", "10.056", "-80.330"],
];

fn num(s: &str) -> f64 {
    s.parse().expect("fixture number")
}

pub fn parameter_rows(table: &[[&str; 4]]) -> Vec<ParameterRow> {
    table.iter().map(|[n, e, s, z]| ParameterRow::with_stat(*n, num(e), num(s), num(z))).collect()
}

pub fn equation_rows() -> Vec<EquationRow> {
    FIRST_STAGE_EQUATIONS
        .iter()
        .map(|(n, o, p, r)| EquationRow { name: n.to_string(), obs: *o, parameters: *p, r_squared: *r })
        .collect()
}

pub fn capacity_rows() -> Vec<CapacityRow> {
    CAPACITY
        .iter()
        .enumerate()
        .map(|(i, [a, b, m])| CapacityRow { patch: i + 1, at_80: num(a), at_90: num(b), mean: num(m) })
        .collect()
}

/// Every body line after `header` splits into exactly the expected tokens
/// and is right-aligned to the header width.
pub fn check_text(text: &str, header: &[&str], expected: &[Vec<String>]) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().collect();
    let h = lines
        .iter()
        .position(|l| l.split_whitespace().collect::<Vec<_>>().join(" ") == header.join(" "))
        .ok_or_else(|| format!("header {header:?} not found"))?;
    let body = lines.get(h + 1..h + 1 + expected.len()).ok_or("table is missing rows")?;
    let width = lines[h].len();
    for (line, want) in body.iter().zip(expected) {
        let got: Vec<&str> = line.split_whitespace().collect();
        if got != want.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("row {line:?} != {want:?}"));
        }
        if line.len() != width {
            return Err(format!("row {line:?} is not aligned to the header width {width}"));
        }
    }
    Ok(())
}

/// The CSV starts with `header` and each record parses back to the
/// expected name and values.
pub fn check_csv(csv: &str, header: &str, expected: &[Vec<String>]) -> Result<(), String> {
    let mut lines = csv.lines();
    if lines.next() != Some(header) {
        return Err(format!("csv header is not {header:?}"));
    }
    let rows: Vec<&str> = lines.collect();
    if rows.len() != expected.len() {
        return Err(format!("expected {} csv rows, found {}", expected.len(), rows.len()));
    }
    for (row, want) in rows.iter().zip(expected) {
        let cells: Vec<&str> = row.split(',').collect();
        let same = cells.len() == want.len()
            && cells[0] == want[0]
            && cells[1..].iter().zip(&want[1..]).all(|(c, w)| c.parse::<f64>().ok() == w.parse::<f64>().ok());
        if !same {
            return Err(format!("csv row {row:?} != {want:?}"));
        }
    }
    Ok(())
}

fn strings<const N: usize>(table: &[[&str; N]]) -> Vec<Vec<String>> {
    table.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect()
}

pub fn check_first_stage() -> Result<(), String> {
    let eq = equation_rows();
    let t = parameter_table("First stage", &parameter_rows(&FIRST_STAGE), &eq, "z", layout::STAGE1);
    let expected = strings(&FIRST_STAGE);
    check_text(&t.text, &["Parameter", "Estimate", "St. Error", "z-value"], &expected)?;
    let eq_cells: Vec<Vec<String>> = FIRST_STAGE_EQUATIONS
        .iter()
        .map(|(n, o, p, r)| {
            let mut c: Vec<String> = n.split_whitespace().map(String::from).collect();
            c.extend([o.to_string(), p.to_string(), format!("{r:.2}")]);
            c
        })
        .collect();
    check_text_loose(&t.text, &["Equation", "Obs", "Parameters", "R2"], &eq_cells)?;
    check_csv(&t.csv, "parameter,estimate,std_error,z_value", &expected)
}

/// Like [`check_text`] without the width check, for rows whose first cell
/// contains a space.
fn check_text_loose(text: &str, header: &[&str], expected: &[Vec<String>]) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().collect();
    let h = lines
        .iter()
        .position(|l| l.split_whitespace().collect::<Vec<_>>() == header)
        .ok_or_else(|| format!("header {header:?} not found"))?;
    let body = lines.get(h + 1..h + 1 + expected.len()).ok_or("table is missing rows")?;
    for (line, want) in body.iter().zip(expected) {
        if line.split_whitespace().collect::<Vec<_>>() != want.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("row {line:?} != {want:?}"));
        }
    }
    Ok(())
}

pub fn check_structural() -> Result<(), String> {
    let t = parameter_table("Structural", &parameter_rows(&STRUCTURAL), &[], "t", layout::STRUCTURAL);
    let expected = strings(&STRUCTURAL);
    check_text(&t.text, &["Parameter", "Estimate", "St. Error", "t-value"], &expected)?;
    check_csv(&t.csv, "parameter,estimate,std_error,t_value", &expected)
}

pub fn check_capacity() -> Result<(), String> {
    let t = capacity_table("Capacity", &capacity_rows());
    let expected: Vec<Vec<String>> = CAPACITY
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut c = vec![format!("K_{}", i + 1)];
            c.extend(r.iter().map(|v| v.to_string()));
            c
        })
        .collect();
    check_text(&t.text, &["Patch", "At 80%", "At 90%", "Mean"], &expected)?;
    check_csv(&t.csv, "patch,at_80,at_90,mean", &expected)
}
