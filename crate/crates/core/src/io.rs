//! CSV input and output: field-data ingestion with hourly aggregation, plus
//! the artifact writers and readers shared by the command-line workflows.
//!
//! All numeric values are written with Rust's shortest round-trip float
//! formatting, so written files parse back to bit-identical values.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::design::{Design, Provenance};
use crate::error::{CalError, Result};
use crate::mcmc::{Chain, PosteriorSummary};
use crate::models::{FieldDataSet, PriorSpec};
use crate::testbed::MorrisResult;
use crate::validate::{PredictiveBand, ValidationReport};

/// Columns a field-data file must provide; anything else is carried through.
pub const REQUIRED_FIELD_COLUMNS: [&str; 5] = ["t", "I_g", "I_d", "T_e", "P"];

/// What ingestion read, grouped, and kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestStats {
    /// Data rows in the file.
    pub raw_rows: usize,
    /// Hour buckets formed.
    pub buckets: usize,
    /// Buckets kept after dropping non-positive mean power.
    pub retained: usize,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CalError::data(format!("cannot open {}: {e}", path.display())))
}

/// Reads a raw field-data CSV and aggregates it into hourly means, dropping
/// hours whose mean power is not strictly positive. The response is the `P`
/// column; every other column is averaged per hour and carried through in
/// file order. Parse failures report the file line number.
pub fn ingest_field_data(path: &Path) -> Result<(FieldDataSet, IngestStats)> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CalError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for required in REQUIRED_FIELD_COLUMNS {
        if !headers.iter().any(|h| h == required) {
            return Err(CalError::data(format!(
                "{}: missing column '{required}'",
                path.display()
            )));
        }
    }
    let t_col = headers.iter().position(|h| h == "t").unwrap();
    let p_col = headers.iter().position(|h| h == "P").unwrap();
    let carried: Vec<usize> = (0..headers.len()).filter(|&j| j != p_col).collect();

    // Bucket accumulator: per hour, column sums and the row count.
    let mut buckets: BTreeMap<i64, (Vec<f64>, f64, usize)> = BTreeMap::new();
    let mut raw_rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CalError::data(format!("{}: {e}", path.display())))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".to_string());
        if record.len() != headers.len() {
            return Err(CalError::data(format!(
                "{} line {line}: {} fields but {} columns declared",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        let parse = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| {
                CalError::data(format!(
                    "{} line {line}: cannot parse '{raw}' in column '{}'",
                    path.display(),
                    headers[j]
                ))
            })
        };
        let t = parse(t_col)?;
        let p = parse(p_col)?;
        let mut values = Vec::with_capacity(carried.len());
        for &j in &carried {
            values.push(parse(j)?);
        }
        let key = (t / 3600.0).floor() as i64;
        let entry = buckets
            .entry(key)
            .or_insert_with(|| (vec![0.0; carried.len()], 0.0, 0));
        for (acc, v) in entry.0.iter_mut().zip(&values) {
            *acc += v;
        }
        entry.1 += p;
        entry.2 += 1;
        raw_rows += 1;
    }
    if raw_rows == 0 {
        return Err(CalError::data(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let n_buckets = buckets.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut power: Vec<f64> = Vec::new();
    for (sums, p_sum, count) in buckets.into_values() {
        let mean_p = p_sum / count as f64;
        if mean_p <= 0.0 {
            continue;
        }
        rows.push(sums.iter().map(|s| s / count as f64).collect());
        power.push(mean_p);
    }
    if rows.is_empty() {
        return Err(CalError::data(format!(
            "{}: every hourly bucket has non-positive mean power",
            path.display()
        )));
    }
    let names: Vec<String> = carried.iter().map(|&j| headers[j].clone()).collect();
    let x = DMatrix::from_fn(rows.len(), carried.len(), |i, j| rows[i][j]);
    let y = DVector::from_vec(power);
    let data = FieldDataSet::new(names, x, y)?;
    let stats = IngestStats {
        raw_rows,
        buckets: n_buckets,
        retained: data.n(),
    };
    Ok((data, stats))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| CalError::data(format!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| CalError::data(format!("cannot flush {}: {e}", path.display())))
}

fn push_record(w: &mut csv::Writer<std::fs::File>, path: &Path, fields: &[String]) -> Result<()> {
    w.write_record(fields)
        .map_err(|e| CalError::data(format!("cannot write {}: {e}", path.display())))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

/// Writes a dataset with its response in a trailing `P` column.
pub fn write_field_csv(path: &Path, data: &FieldDataSet) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = data.names().to_vec();
    header.push("P".to_string());
    push_record(&mut w, path, &header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x().row(i).iter().map(|v| fmt(*v)).collect();
        row.push(fmt(data.y()[i]));
        push_record(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// Writes a chain: iteration index, one column per sampled parameter, and
/// the log posterior.
pub fn write_chain_csv(path: &Path, chain: &Chain) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(chain.names().iter().cloned());
    header.push("log_posterior".to_string());
    push_record(&mut w, path, &header)?;
    for i in 0..chain.len() {
        let mut row = vec![i.to_string()];
        for j in 0..chain.dim() {
            row.push(fmt(chain.samples()[(i, j)]));
        }
        row.push(fmt(chain.log_posterior()[i]));
        push_record(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// Writes a posterior summary, one parameter per row.
pub fn write_summary_csv(path: &Path, summary: &PosteriorSummary) -> Result<()> {
    let mut w = writer(path)?;
    push_record(
        &mut w,
        path,
        &[
            "parameter".into(),
            "map".into(),
            "mean".into(),
            "sd".into(),
            "lower".into(),
            "upper".into(),
            "level".into(),
        ],
    )?;
    for (j, name) in summary.names.iter().enumerate() {
        push_record(
            &mut w,
            path,
            &[
                name.clone(),
                fmt(summary.map[j]),
                fmt(summary.mean[j]),
                fmt(summary.sd[j]),
                fmt(summary.lo[j]),
                fmt(summary.hi[j]),
                fmt(summary.level),
            ],
        )?;
    }
    finish(w, path)
}

/// Writes a predictive band against an index column (typically time).
pub fn write_band_csv(path: &Path, index: &[f64], band: &PredictiveBand) -> Result<()> {
    if index.len() != band.len() {
        return Err(CalError::invalid(format!(
            "{} index values but band covers {} points",
            index.len(),
            band.len()
        )));
    }
    let mut w = writer(path)?;
    push_record(
        &mut w,
        path,
        &[
            "t".into(),
            "lower".into(),
            "median".into(),
            "upper".into(),
            "point".into(),
            "level".into(),
        ],
    )?;
    for i in 0..band.len() {
        push_record(
            &mut w,
            path,
            &[
                fmt(index[i]),
                fmt(band.lower()[i]),
                fmt(band.median()[i]),
                fmt(band.upper()[i]),
                fmt(band.point()[i]),
                fmt(band.level()),
            ],
        )?;
    }
    finish(w, path)
}

/// Writes a validation report, one replicate per row, with the aggregates
/// repeated on every row so the file is self-contained.
pub fn write_report_csv(path: &Path, report: &ValidationReport) -> Result<()> {
    let mut w = writer(path)?;
    push_record(
        &mut w,
        path,
        &[
            "replicate".into(),
            "start_day".into(),
            "coverage".into(),
            "rmse".into(),
            "mean_coverage".into(),
            "mean_rmse".into(),
            "level".into(),
        ],
    )?;
    for r in &report.replicates {
        push_record(
            &mut w,
            path,
            &[
                r.replicate.to_string(),
                r.start_day.to_string(),
                fmt(r.coverage),
                fmt(r.rmse),
                fmt(report.coverage),
                fmt(report.rmse),
                fmt(report.level),
            ],
        )?;
    }
    finish(w, path)
}

/// Writes a training design with its outputs: named variable and parameter
/// columns, provenance, and the code output.
pub fn write_design_csv(
    path: &Path,
    design: &Design,
    var_names: &[String],
    param_names: &[String],
    outputs: &DVector<f64>,
) -> Result<()> {
    if var_names.len() != design.var_dim() || param_names.len() != design.param_dim() {
        return Err(CalError::invalid("design column names do not match dimensions"));
    }
    if outputs.len() != design.len() {
        return Err(CalError::invalid("one output per design point"));
    }
    let mut w = writer(path)?;
    let mut header: Vec<String> = var_names.to_vec();
    header.extend(param_names.iter().cloned());
    header.push("provenance".into());
    header.push("output".into());
    push_record(&mut w, path, &header)?;
    for (i, point) in design.points().iter().enumerate() {
        let mut row: Vec<String> = point.iter().map(|v| fmt(*v)).collect();
        row.push(
            match design.provenance()[i] {
                Provenance::Initial => "initial",
                Provenance::Sequential => "sequential",
            }
            .to_string(),
        );
        row.push(fmt(outputs[i]));
        push_record(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// Writes a two-column name/value table, one pair per row.
pub fn write_pairs_csv(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    push_record(&mut w, path, &["name".into(), "value".into()])?;
    for (name, value) in rows {
        push_record(&mut w, path, &[name.clone(), fmt(*value)])?;
    }
    finish(w, path)
}

/// Writes a screening result, one input per row.
pub fn write_screen_csv(path: &Path, names: &[String], result: &MorrisResult) -> Result<()> {
    if names.len() != result.mu_star.len() {
        return Err(CalError::invalid("one name per screened input"));
    }
    let mut w = writer(path)?;
    push_record(
        &mut w,
        path,
        &["parameter".into(), "mu_star".into(), "sigma".into()],
    )?;
    for (j, name) in names.iter().enumerate() {
        push_record(
            &mut w,
            path,
            &[name.clone(), fmt(result.mu_star[j]), fmt(result.sigma[j])],
        )?;
    }
    finish(w, path)
}

/// One row of a plot-ready density table.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub parameter: String,
    /// Bin center.
    pub value: f64,
    /// Histogram density of the post-burn-in samples.
    pub posterior_density: f64,
    /// Prior density at the bin center; 0 when the parameter has no prior.
    pub prior_density: f64,
    pub has_prior: bool,
}

/// Histogram table of posterior marginals with the prior density evaluated
/// on the same grid, for overlay plots. Constant marginals yield a single
/// point-mass row with density 1.
pub fn density_table(chain: &Chain, priors: &PriorSpec, bins: usize) -> Result<Vec<DensityRow>> {
    if bins < 2 {
        return Err(CalError::invalid("need at least two bins"));
    }
    let mut rows = Vec::new();
    for (j, name) in chain.names().iter().enumerate() {
        let series: Vec<f64> = (chain.burn_in()..chain.len())
            .map(|i| chain.samples()[(i, j)])
            .collect();
        let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prior = priors.get(name);
        if lo == hi {
            rows.push(DensityRow {
                parameter: name.clone(),
                value: lo,
                posterior_density: 1.0,
                prior_density: prior.map_or(0.0, |p| p.log_density(lo).exp()),
                has_prior: prior.is_some(),
            });
            continue;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in &series {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.iter().enumerate() {
            let center = lo + (b as f64 + 0.5) * width;
            rows.push(DensityRow {
                parameter: name.clone(),
                value: center,
                posterior_density: *count as f64 / (series.len() as f64 * width),
                prior_density: prior.map_or(0.0, |p| p.log_density(center).exp()),
                has_prior: prior.is_some(),
            });
        }
    }
    Ok(rows)
}

/// Writes a density table.
pub fn write_densities_csv(path: &Path, rows: &[DensityRow]) -> Result<()> {
    let mut w = writer(path)?;
    push_record(
        &mut w,
        path,
        &[
            "parameter".into(),
            "value".into(),
            "posterior_density".into(),
            "prior_density".into(),
            "has_prior".into(),
        ],
    )?;
    for r in rows {
        push_record(
            &mut w,
            path,
            &[
                r.parameter.clone(),
                fmt(r.value),
                fmt(r.posterior_density),
                fmt(r.prior_density),
                if r.has_prior { "1" } else { "0" }.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

/// Reads back a CSV whose non-header cells are all numeric, as column names
/// plus a value matrix. Used by round-trip checks and file comparisons.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CalError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CalError::data(format!("{}: {e}", path.display())))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".to_string());
        let mut row = Vec::with_capacity(headers.len());
        for (j, raw) in record.iter().enumerate() {
            row.push(raw.trim().parse::<f64>().map_err(|_| {
                CalError::data(format!(
                    "{} line {line}: cannot parse '{raw}' in column '{}'",
                    path.display(),
                    headers.get(j).map(String::as_str).unwrap_or("?")
                ))
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CalError::data(format!("{}: no data rows", path.display())));
    }
    let x = DMatrix::from_fn(rows.len(), headers.len(), |i, j| rows[i][j]);
    Ok((headers, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Prior;
    use approx::assert_relative_eq;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn ingest_averages_an_hour_of_constant_power() {
        let mut content = String::from("t,I_g,I_d,T_e,P\n");
        for k in 0..6 {
            content.push_str(&format!("{},500,100,20,60\n", 7200 + k * 600));
        }
        let f = write_temp(&content);
        let (data, stats) = ingest_field_data(f.path()).unwrap();
        assert_eq!(stats.raw_rows, 6);
        assert_eq!(stats.buckets, 1);
        assert_eq!(stats.retained, 1);
        assert_eq!(data.n(), 1);
        assert_eq!(data.y()[0], 60.0);
        assert_eq!(data.x()[(0, data.column_index("I_g").unwrap())], 500.0);
    }

    #[test]
    fn ingest_drops_non_positive_hours_and_reports_errors() {
        let f = write_temp(
            "t,I_g,I_d,T_e,P\n0,0,0,10,0\n3600,400,80,15,120\n7200,300,60,14,-5\n",
        );
        let (data, stats) = ingest_field_data(f.path()).unwrap();
        assert_eq!(stats.buckets, 3);
        assert_eq!(stats.retained, 1);
        assert_eq!(data.y()[0], 120.0);

        let missing = write_temp("t,I_g,T_e,P\n0,1,2,3\n");
        let err = ingest_field_data(missing.path()).unwrap_err().to_string();
        assert!(err.contains("I_d"), "{err}");

        let bad = write_temp("t,I_g,I_d,T_e,P\n0,1,2,3,4\n3600,x,2,3,4\n");
        let err = ingest_field_data(bad.path()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("I_g"), "{err}");
    }

    #[test]
    fn ingest_matches_an_independent_group_by() {
        // Mixed file: irregular timestamps across several hours.
        let mut content = String::from("t,I_g,I_d,T_e,P\n");
        let mut raw: Vec<(f64, f64)> = Vec::new();
        let mut state = 12345u64;
        for k in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            let t = u * 10.0 * 3600.0;
            let p = ((k % 7) as f64) - 1.0;
            content.push_str(&format!("{t},{},{},{},{p}\n", 100.0 + u, 10.0, 15.0));
            raw.push((t, p));
        }
        let f = write_temp(&content);
        let (data, stats) = ingest_field_data(f.path()).unwrap();

        // Oracle: sort by bucket and scan.
        let mut oracle: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        for (t, p) in &raw {
            let e = oracle.entry((t / 3600.0).floor() as i64).or_insert((0.0, 0));
            e.0 += p;
            e.1 += 1;
        }
        let kept: Vec<f64> = oracle
            .values()
            .map(|(s, c)| s / *c as f64)
            .filter(|m| *m > 0.0)
            .collect();
        assert_eq!(stats.raw_rows, 200);
        assert_eq!(stats.buckets, oracle.len());
        assert_eq!(data.n(), kept.len());
        for (i, m) in kept.iter().enumerate() {
            assert_relative_eq!(data.y()[i], *m, epsilon = 1e-12);
        }
    }

    #[test]
    fn field_csv_round_trips_bit_exactly() {
        let x = DMatrix::from_row_slice(
            2,
            3,
            &[0.1, -2.5e-7, 3.0, 1.0 / 3.0, 7.25e11, -0.0625],
        );
        let y = DVector::from_vec(vec![1.5, 2.5]);
        let data = FieldDataSet::new(
            vec!["t".into(), "a".into(), "b".into()],
            x.clone(),
            y.clone(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        write_field_csv(&path, &data).unwrap();
        let (names, m) = read_numeric_csv(&path).unwrap();
        assert_eq!(names, vec!["t", "a", "b", "P"]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m[(i, j)].to_bits(), x[(i, j)].to_bits());
            }
            assert_eq!(m[(i, 3)].to_bits(), y[i].to_bits());
        }
    }

    #[test]
    fn band_csv_round_trips() {
        let band = PredictiveBand::new(
            vec![0.0, 1.0],
            vec![0.5, 1.5],
            vec![1.0, 2.0],
            vec![0.5, 1.5],
            0.9,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("band.csv");
        write_band_csv(&path, &[10.0, 20.0], &band).unwrap();
        let (names, m) = read_numeric_csv(&path).unwrap();
        assert_eq!(names[0], "t");
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(1, 2)], 1.5);
        assert_eq!(m[(0, 5)], 0.9);
        assert!(write_band_csv(&path, &[1.0], &band).is_err());
    }

    #[test]
    fn density_table_matches_prior_and_integrates_to_one() {
        let n = 4000;
        let samples = DMatrix::from_fn(n, 1, |i, _| {
            // Deterministic spread over [0, 2].
            2.0 * (i as f64 + 0.5) / n as f64
        });
        let chain = Chain::new(
            vec!["theta".into()],
            samples,
            vec![0.0; n],
            vec![vec![true]; n],
            vec!["all".into()],
            0,
            1,
        )
        .unwrap();
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            Prior::Gaussian {
                mean: 1.0,
                variance: 0.25,
            },
        )])
        .unwrap();
        let rows = density_table(&chain, &priors, 20).unwrap();
        assert_eq!(rows.len(), 20);
        let width = rows[1].value - rows[0].value;
        let mass: f64 = rows.iter().map(|r| r.posterior_density * width).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-9);
        for r in &rows {
            assert!(r.has_prior);
            let expect = Prior::Gaussian {
                mean: 1.0,
                variance: 0.25,
            }
            .log_density(r.value)
            .exp();
            assert_relative_eq!(r.prior_density, expect, epsilon = 1e-12);
        }
    }
}
