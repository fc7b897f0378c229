//! Plain-text table formats. All files are comma-separated with a declared
//! header, no quoting, and floats printed with 17 significant digits so a
//! save/load round trip is exact.
//!
//! Schemas:
//! - connectomes: `subject_id,v,v',value`, one row per upper-triangle edge
//!   per subject (v < v'; diagonal and lower triangle are rejected)
//! - genotypes: header `snp_1,...,snp_P`, one row per subject, rows ordered
//!   by ascending subject id of the companion connectome file
//! - SNP sets: `snp_id,set_id` with snp ids matching the genotype header
//! - prior network: `v,v'` edge list
//! - truth: `p,v,v',beta`, every edge of every risk SNP slice
//!
//! Node and predictor indices are 0-based integers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::edges::{edge_count, edge_index, edge_pairs};
use crate::model::{Dataset, PriorNetwork};
use crate::select::TruthTensor;
use crate::{Error, Result};

/// 17 significant digits, locale-free; `str::parse` recovers the exact bits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Lines with the trailing newline (and a Windows `\r`, if any) removed,
/// numbered from 1.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for line in reader.lines() {
        let mut l = line.map_err(|e| Error::io(path, e))?;
        if l.ends_with('\r') {
            l.pop();
        }
        out.push(l);
    }
    Ok(out)
}

fn expect_header(path: &Path, lines: &[String], want: &str) -> Result<()> {
    match lines.first() {
        Some(got) if got == want => Ok(()),
        Some(got) => Err(Error::parse(
            path,
            1,
            format!("expected header '{want}', found '{got}'"),
        )),
        None => Err(Error::parse(path, 1, "file is empty")),
    }
}

fn parse_usize(path: &Path, line_no: usize, field: &str, text: &str) -> Result<usize> {
    text.parse::<usize>()
        .map_err(|_| Error::parse(path, line_no, format!("{field} '{text}' is not a non-negative integer")))
}

fn parse_f64(path: &Path, line_no: usize, field: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::parse(path, line_no, format!("{field} '{text}' is not a number")))
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    want: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != want {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected {want} comma-separated fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

const CONNECTOME_HEADER: &str = "subject_id,v,v',value";

/// Writes the upper-triangle responses, one edge row per subject, with
/// subject ids 0..N-1.
pub fn save_connectomes(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create_writer(path)?;
    let write = |w: &mut BufWriter<File>, s: String| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    };
    write(&mut w, format!("{CONNECTOME_HEADER}\n"))?;
    let a = data.responses();
    for i in 0..data.n_subjects() {
        for (k, (v, v2)) in edge_pairs(data.n_nodes()).enumerate() {
            write(&mut w, format!("{i},{v},{v2},{}\n", fmt_float(a[[i, k]])))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parsed connectome table: node count, ascending subject ids, and the
/// response matrix in that subject order.
#[derive(Debug, Clone)]
pub struct ConnectomeTable {
    pub n_nodes: usize,
    pub subject_ids: Vec<usize>,
    pub responses: Array2<f64>,
}

pub fn load_connectomes(path: &Path) -> Result<ConnectomeTable> {
    let lines = read_lines(path)?;
    expect_header(path, &lines, CONNECTOME_HEADER)?;
    let mut rows: Vec<(usize, usize, usize, f64, usize)> = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut n_nodes = 0usize;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(path, line_no, line, 4)?;
        let subject = parse_usize(path, line_no, "subject_id", f[0])?;
        let v = parse_usize(path, line_no, "v", f[1])?;
        let v2 = parse_usize(path, line_no, "v'", f[2])?;
        let value = parse_f64(path, line_no, "value", f[3])?;
        if v == v2 {
            return Err(Error::parse(
                path,
                line_no,
                format!("diagonal entry ({v},{v2}) is not allowed"),
            ));
        }
        if v > v2 {
            return Err(Error::parse(
                path,
                line_no,
                format!("lower-triangle entry ({v},{v2}): rows must have v < v'"),
            ));
        }
        n_nodes = n_nodes.max(v2 + 1);
        rows.push((subject, v, v2, value, line_no));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    let ne = edge_count(n_nodes);
    let mut subject_ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    subject_ids.sort_unstable();
    subject_ids.dedup();
    let row_of: BTreeMap<usize, usize> =
        subject_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();

    let n = subject_ids.len();
    let mut a = Array2::<f64>::zeros((n, ne));
    let mut seen = vec![false; n * ne];
    for (subject, v, v2, value, line_no) in rows {
        let r = row_of[&subject];
        let k = edge_index(n_nodes, v, v2);
        if seen[r * ne + k] {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate entry for subject {subject}, edge ({v},{v2})"),
            ));
        }
        seen[r * ne + k] = true;
        a[[r, k]] = value;
    }
    for (r, &id) in subject_ids.iter().enumerate() {
        for (k, (v, v2)) in edge_pairs(n_nodes).enumerate() {
            if !seen[r * ne + k] {
                return Err(Error::parse(
                    path,
                    0,
                    format!("subject {id} is missing edge ({v},{v2})"),
                ));
            }
        }
    }
    Ok(ConnectomeTable { n_nodes, subject_ids, responses: a })
}

fn snp_name(j: usize) -> String {
    format!("snp_{}", j + 1)
}

/// One row per subject, header `snp_1,...,snp_P`.
pub fn save_genotypes(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = create_writer(path)?;
    let header: Vec<String> = (0..x.ncols()).map(snp_name).collect();
    let mut buf = header.join(",");
    buf.push('\n');
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
        buf.push_str(&cells.join(","));
        buf.push('\n');
    }
    w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_genotypes(path: &Path) -> Result<Array2<f64>> {
    let lines = read_lines(path)?;
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(path, 1, "file is empty"))?;
    let names: Vec<&str> = header.split(',').collect();
    for (j, name) in names.iter().enumerate() {
        let want = snp_name(j);
        if *name != want {
            return Err(Error::parse(
                path,
                1,
                format!("column {} must be named '{want}', found '{name}'", j + 1),
            ));
        }
    }
    let p = names.len();
    let mut values = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(path, line_no, line, p)?;
        for (j, cell) in f.iter().enumerate() {
            values.push(parse_f64(path, line_no, &snp_name(j), cell)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    Array2::from_shape_vec((n, p), values).map_err(|e| Error::dim(e.to_string()))
}

const SNP_SET_HEADER: &str = "snp_id,set_id";

pub fn save_snp_sets(path: &Path, set_of: &[usize]) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut buf = String::from(SNP_SET_HEADER);
    buf.push('\n');
    for (j, q) in set_of.iter().enumerate() {
        buf.push_str(&format!("{},{q}\n", snp_name(j)));
    }
    w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the SNP-to-set partition. Set labels are mapped to contiguous ids
/// by first appearance in column order; every genotype column must appear
/// exactly once.
pub fn load_snp_sets(path: &Path, n_predictors: usize) -> Result<Vec<usize>> {
    let lines = read_lines(path)?;
    expect_header(path, &lines, SNP_SET_HEADER)?;
    let mut label_of: Vec<Option<(String, usize)>> = vec![None; n_predictors];
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(path, line_no, line, 2)?;
        let name = f[0];
        let col = name
            .strip_prefix("snp_")
            .and_then(|suffix| suffix.parse::<usize>().ok())
            .and_then(|k| k.checked_sub(1))
            .ok_or_else(|| {
                Error::parse(path, line_no, format!("unknown snp_id '{name}'"))
            })?;
        if col >= n_predictors {
            return Err(Error::parse(
                path,
                line_no,
                format!("snp_id '{name}' exceeds the {n_predictors} genotype columns"),
            ));
        }
        if let Some((prev, _)) = &label_of[col] {
            return Err(Error::parse(
                path,
                line_no,
                format!("'{name}' is listed in two sets ('{prev}' and '{}')", f[1]),
            ));
        }
        label_of[col] = Some((f[1].to_string(), line_no));
    }
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut next = 0usize;
    let mut set_of = Vec::with_capacity(n_predictors);
    for (col, entry) in label_of.iter().enumerate() {
        match entry {
            Some((label, _)) => {
                let id = *ids.entry(label.clone()).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                });
                set_of.push(id);
            }
            None => {
                return Err(Error::parse(
                    path,
                    0,
                    format!("'{}' has no set assignment: the map must partition all SNPs", snp_name(col)),
                ));
            }
        }
    }
    Ok(set_of)
}

const NETWORK_HEADER: &str = "v,v'";

pub fn save_network(path: &Path, net: &PriorNetwork) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut buf = String::from(NETWORK_HEADER);
    buf.push('\n');
    for &(a, b) in net.support_edges() {
        buf.push_str(&format!("{a},{b}\n"));
    }
    w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path, n_nodes: usize) -> Result<PriorNetwork> {
    let lines = read_lines(path)?;
    expect_header(path, &lines, NETWORK_HEADER)?;
    let mut edges = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(path, line_no, line, 2)?;
        let a = parse_usize(path, line_no, "v", f[0])?;
        let b = parse_usize(path, line_no, "v'", f[1])?;
        if a >= b {
            return Err(Error::parse(
                path,
                line_no,
                format!("edge ({a},{b}) must satisfy v < v'"),
            ));
        }
        if b >= n_nodes {
            return Err(Error::parse(
                path,
                line_no,
                format!("edge ({a},{b}) references node {b} but the data has {n_nodes} nodes"),
            ));
        }
        if edges.contains(&(a, b)) {
            return Err(Error::parse(path, line_no, format!("duplicate edge ({a},{b})")));
        }
        edges.push((a, b));
    }
    PriorNetwork::from_edge_list(n_nodes, &edges)
}

const TRUTH_HEADER: &str = "p,v,v',beta";

/// Every edge of every risk slice, zeros included, so the risk set is
/// recoverable from the file alone.
pub fn save_truth(path: &Path, truth: &TruthTensor) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut buf = String::from(TRUTH_HEADER);
    buf.push('\n');
    for p in truth.risk_snps() {
        let slice = truth.slice_edges(p).expect("risk SNP has a slice");
        for (k, (v, v2)) in edge_pairs(truth.n_nodes()).enumerate() {
            buf.push_str(&format!("{p},{v},{v2},{}\n", fmt_float(slice[k])));
        }
    }
    w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path, n_nodes: usize, n_predictors: usize) -> Result<TruthTensor> {
    let lines = read_lines(path)?;
    expect_header(path, &lines, TRUTH_HEADER)?;
    let ne = edge_count(n_nodes);
    let mut slices: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(path, line_no, line, 4)?;
        let p = parse_usize(path, line_no, "p", f[0])?;
        let v = parse_usize(path, line_no, "v", f[1])?;
        let v2 = parse_usize(path, line_no, "v'", f[2])?;
        let beta = parse_f64(path, line_no, "beta", f[3])?;
        if p >= n_predictors {
            return Err(Error::parse(
                path,
                line_no,
                format!("predictor {p} out of range (P = {n_predictors})"),
            ));
        }
        if v >= v2 || v2 >= n_nodes {
            return Err(Error::parse(
                path,
                line_no,
                format!("edge ({v},{v2}) invalid for {n_nodes} nodes"),
            ));
        }
        let slice = slices.entry(p).or_insert_with(|| Array1::zeros(ne));
        slice[edge_index(n_nodes, v, v2)] = beta;
    }
    TruthTensor::new(n_nodes, n_predictors, slices)
}

/// Assembles a Dataset from the three input tables. Genotype rows must line
/// up with ascending subject ids from the connectome file.
pub fn load_dataset(
    connectomes: &Path,
    genotypes: &Path,
    snp_sets: &Path,
    unpenalized: &[usize],
) -> Result<Dataset> {
    let table = load_connectomes(connectomes)?;
    let x = load_genotypes(genotypes)?;
    if x.nrows() != table.subject_ids.len() {
        return Err(Error::dim(format!(
            "{} genotype rows but {} subjects in the connectome file",
            x.nrows(),
            table.subject_ids.len()
        )));
    }
    let set_of = load_snp_sets(snp_sets, x.ncols())?;
    Dataset::new(table.n_nodes, table.responses, x, set_of, unpenalized)
}

/// Loading matrix written as CSV with the genotype header, one row per node.
pub fn save_loadings(path: &Path, u: &Array2<f64>) -> Result<()> {
    save_genotypes(path, u)
}

/// Intercept edges in the connectome edge layout.
pub fn save_intercept(path: &Path, b0: &Array1<f64>, n_nodes: usize) -> Result<()> {
    if b0.len() != edge_count(n_nodes) {
        return Err(Error::dim("intercept length does not match the node count"));
    }
    let mut w = create_writer(path)?;
    let mut buf = String::from("v,v',value\n");
    for (k, (v, v2)) in edge_pairs(n_nodes).enumerate() {
        buf.push_str(&format!("{v},{v2},{}\n", fmt_float(b0[k])));
    }
    w.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
