//! Ingestion of counts, covariates, and adjacency files.
//!
//! CSV dialect: comma-delimited, header required, UTF-8, `NA` for missing.
//! Rows with missing values are dropped and counted; duplicate keys,
//! non-numeric cells, and empty joins are hard errors with line context.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use zinb_core::model::Dataset;
use zinb_core::numeric;

use crate::error::{CliError, Result};

/// Dataset plus the id labels needed to write reports.
#[derive(Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// County id per county index (sorted lexicographically).
    pub county_ids: Vec<String>,
    /// Year label per year index (sorted ascending).
    pub year_labels: Vec<i64>,
    /// Rows dropped because a cell was NA.
    pub dropped_missing: usize,
    /// Keys present in only one of the two files.
    pub unmatched_keys: usize,
}

struct CsvFile {
    header: Vec<String>,
    /// (line number, cells)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<CsvFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let name = path.display();
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
            Some((_, l)) => break l.split(',').map(|c| c.trim().to_string()).collect::<Vec<_>>(),
            None => return Err(CliError::input(format!("{name}: file is empty"))),
        }
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(CliError::input(format!(
                "{name} line {}: {} fields, header has {}",
                i + 1,
                cells.len(),
                header.len()
            )));
        }
        rows.push((i + 1, cells));
    }
    Ok(CsvFile { header, rows })
}

fn is_na(cell: &str) -> bool {
    cell == "NA"
}

fn parse_year(name: &std::path::Display, line: usize, cell: &str) -> Result<i64> {
    cell.parse().map_err(|_| {
        CliError::input(format!("{name} line {line}: non-integer year `{cell}`"))
    })
}

struct CountRow {
    y: u64,
    population: Option<f64>,
}

/// Joins counts and covariates on (county_id, year), standardizes the
/// non-intercept covariate columns, and orders rows county-major,
/// year-minor with lexicographic county ids and ascending years.
pub fn load_dataset(counts_path: &Path, covariates_path: &Path) -> Result<LoadedData> {
    let counts = read_csv(counts_path)?;
    let cname = counts_path.display();
    if counts.header.len() < 3
        || counts.header[0] != "county_id"
        || counts.header[1] != "year"
        || counts.header[2] != "y"
    {
        return Err(CliError::input(format!(
            "{cname}: header must start `county_id,year,y`"
        )));
    }
    let has_population = match counts.header.len() {
        3 => false,
        4 if counts.header[3] == "population" => true,
        _ => {
            return Err(CliError::input(format!(
                "{cname}: columns after `y` must be exactly `population`"
            )))
        }
    };

    let mut dropped = 0usize;
    let mut count_map: BTreeMap<(String, i64), CountRow> = BTreeMap::new();
    for (line, cells) in &counts.rows {
        if cells.iter().any(|c| is_na(c)) {
            dropped += 1;
            continue;
        }
        let county = cells[0].clone();
        let year = parse_year(&cname, *line, &cells[1])?;
        let y: u64 = cells[2].parse().map_err(|_| {
            CliError::input(format!(
                "{cname} line {line}: non-integer count `{}`",
                cells[2]
            ))
        })?;
        let population = if has_population {
            let p: f64 = cells[3].parse().map_err(|_| {
                CliError::input(format!(
                    "{cname} line {line}: non-numeric population `{}`",
                    cells[3]
                ))
            })?;
            if !(p.is_finite() && p > 0.0) {
                return Err(CliError::input(format!(
                    "{cname} line {line}: population must be positive"
                )));
            }
            Some(p)
        } else {
            None
        };
        if count_map
            .insert((county.clone(), year), CountRow { y, population })
            .is_some()
        {
            return Err(CliError::input(format!(
                "{cname} line {line}: duplicate (county, year) key ({county}, {year})"
            )));
        }
    }

    let covs = read_csv(covariates_path)?;
    let vname = covariates_path.display();
    if covs.header.len() < 3 || covs.header[0] != "county_id" || covs.header[1] != "year" {
        return Err(CliError::input(format!(
            "{vname}: header must start `county_id,year` followed by covariate names"
        )));
    }
    let covariate_names: Vec<String> = covs.header[2..].to_vec();
    let k = covariate_names.len();
    let mut cov_map: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    for (line, cells) in &covs.rows {
        if cells.iter().any(|c| is_na(c)) {
            dropped += 1;
            continue;
        }
        let county = cells[0].clone();
        let year = parse_year(&vname, *line, &cells[1])?;
        let mut values = Vec::with_capacity(k);
        for (j, cell) in cells[2..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::input(format!(
                    "{vname} line {line}: non-numeric value `{cell}` in column `{}`",
                    covariate_names[j]
                ))
            })?;
            values.push(v);
        }
        if cov_map.insert((county.clone(), year), values).is_some() {
            return Err(CliError::input(format!(
                "{vname} line {line}: duplicate (county, year) key ({county}, {year})"
            )));
        }
    }

    // Inner join; BTreeMap iteration gives the deterministic row order.
    type JoinedRow = (String, i64, u64, Option<f64>, Vec<f64>);
    let mut unmatched = 0usize;
    let mut joined: Vec<JoinedRow> = Vec::new();
    for ((county, year), count_row) in &count_map {
        match cov_map.get(&(county.clone(), *year)) {
            Some(values) => joined.push((
                county.clone(),
                *year,
                count_row.y,
                count_row.population,
                values.clone(),
            )),
            None => unmatched += 1,
        }
    }
    unmatched += cov_map
        .keys()
        .filter(|key| !count_map.contains_key(*key))
        .count();
    if joined.is_empty() {
        return Err(CliError::input(format!(
            "joining {cname} with {vname} produced an empty dataset"
        )));
    }

    let mut county_ids: Vec<String> = joined.iter().map(|r| r.0.clone()).collect();
    county_ids.sort();
    county_ids.dedup();
    let mut year_labels: Vec<i64> = joined.iter().map(|r| r.1).collect();
    year_labels.sort_unstable();
    year_labels.dedup();
    let county_index_of: BTreeMap<&str, usize> = county_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let year_index_of: BTreeMap<i64, usize> =
        year_labels.iter().enumerate().map(|(i, y)| (*y, i)).collect();

    let n = joined.len();
    let mut y = Vec::with_capacity(n);
    let mut county_index = Vec::with_capacity(n);
    let mut year_index = Vec::with_capacity(n);
    let mut population: Vec<f64> = Vec::new();
    let mut design = DMatrix::zeros(n, k + 1);
    for (i, (county, year, yi, pop, values)) in joined.iter().enumerate() {
        y.push(*yi);
        county_index.push(county_index_of[county.as_str()]);
        year_index.push(year_index_of[year]);
        if let Some(p) = pop {
            population.push(*p);
        }
        design[(i, 0)] = 1.0;
        for (j, v) in values.iter().enumerate() {
            design[(i, j + 1)] = *v;
        }
    }
    if has_population && population.len() != n {
        return Err(CliError::input(format!(
            "{cname}: population present for only some joined rows"
        )));
    }

    // Standardize covariate columns in place.
    for j in 1..=k {
        let col: Vec<f64> = design.column(j).iter().copied().collect();
        let sd = numeric::sample_variance(&col).sqrt();
        if sd == 0.0 {
            return Err(CliError::input(format!(
                "zero variance column `{}`: it cannot be standardized",
                covariate_names[j - 1]
            )));
        }
        let m = numeric::mean(&col);
        for i in 0..n {
            design[(i, j)] = (design[(i, j)] - m) / sd;
        }
    }

    let mut names = vec!["intercept".to_string()];
    names.extend(covariate_names);
    let dataset = Dataset::new(
        y,
        county_index,
        year_index,
        design,
        if has_population { Some(population) } else { None },
        names,
    )
    .map_err(CliError::from)?;

    Ok(LoadedData {
        dataset,
        county_ids,
        year_labels,
        dropped_missing: dropped,
        unmatched_keys: unmatched,
    })
}

/// Two-column neighbor pair file: header required, `#` comments ignored.
pub fn read_adjacency(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let name = path.display();
    let mut pairs = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if cells.len() != 2 {
            return Err(CliError::input(format!(
                "{name} line {}: expected two comma-separated county ids",
                i + 1
            )));
        }
        if !saw_header {
            saw_header = true; // first data line is the required header
            continue;
        }
        pairs.push((cells[0].to_string(), cells[1].to_string()));
    }
    if !saw_header {
        return Err(CliError::input(format!("{name}: missing header line")));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_complete_two_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(
            &dir,
            "counts.csv",
            "county_id,year,y,population\nA,2000,3,100\nA,2001,0,110\nB,2000,5,200\nB,2001,2,210\n",
        );
        let covs = write_file(
            &dir,
            "covs.csv",
            "county_id,year,inc\nA,2000,1.0\nA,2001,2.0\nB,2000,3.0\nB,2001,5.0\n",
        );
        let loaded = load_dataset(&counts, &covs).unwrap();
        assert_eq!(loaded.dataset.n_units(), 4);
        assert_eq!(loaded.county_ids, vec!["A", "B"]);
        assert_eq!(loaded.year_labels, vec![2000, 2001]);
        assert_eq!(loaded.dataset.y, vec![3, 0, 5, 2]);
        assert_eq!(loaded.dropped_missing, 0);
        assert_eq!(loaded.unmatched_keys, 0);
        assert!(loaded.dataset.population.is_some());
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(&dir, "c.csv", "county_id,year,y\nA,0,1\nB,0,2\n");
        let covs = write_file(&dir, "v.csv", "county_id,year,flat\nA,0,7\nB,0,7\n");
        let err = load_dataset(&counts, &covs).unwrap_err();
        assert!(err.to_string().contains("zero variance column"), "{err}");
    }

    #[test]
    fn missing_cell_drops_row_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(
            &dir,
            "c.csv",
            "county_id,year,y\nA,0,1\nA,1,2\nB,0,3\nB,1,4\n",
        );
        let covs = write_file(
            &dir,
            "v.csv",
            "county_id,year,inc\nA,0,1.0\nA,1,NA\nB,0,3.0\nB,1,4.0\n",
        );
        let loaded = load_dataset(&counts, &covs).unwrap();
        assert_eq!(loaded.dropped_missing, 1);
        assert_eq!(loaded.unmatched_keys, 1); // the dropped key is unmatched on the counts side
        assert_eq!(loaded.dataset.n_units(), 3);
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(&dir, "c.csv", "county_id,year,y\nA,0,1\nA,0,2\nB,0,1\n");
        let covs = write_file(&dir, "v.csv", "county_id,year,inc\nA,0,1.0\nB,0,2.0\n");
        let err = load_dataset(&counts, &covs).unwrap_err();
        assert!(err.to_string().contains("duplicate (county, year)"), "{err}");
    }

    #[test]
    fn empty_join_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(&dir, "c.csv", "county_id,year,y\nA,0,1\nB,0,2\n");
        let covs = write_file(&dir, "v.csv", "county_id,year,inc\nC,0,1.0\nD,0,2.0\n");
        let err = load_dataset(&counts, &covs).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
    }

    #[test]
    fn non_numeric_cell_is_an_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let counts = write_file(&dir, "c.csv", "county_id,year,y\nA,0,xyz\nB,0,2\n");
        let covs = write_file(&dir, "v.csv", "county_id,year,inc\nA,0,1.0\nB,0,2.0\n");
        let err = load_dataset(&counts, &covs).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("xyz"), "{msg}");
    }

    #[test]
    fn adjacency_requires_header_and_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let adj = write_file(
            &dir,
            "adj.txt",
            "# neighbor pairs\ncounty_id_a,county_id_b\nA,B\n\nB,C\n",
        );
        let pairs = read_adjacency(&adj).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0], ("A".to_string(), "B".to_string()));

        let empty = write_file(&dir, "empty.txt", "# nothing\n");
        assert!(read_adjacency(&empty).is_err());
    }
}
