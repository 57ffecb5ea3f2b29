//! File formats: comma-separated with a header row, UTF-8, `.` decimals.
//! Every output goes through [`write_atomic`] so a failed command never
//! leaves a partial file behind.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use dpsan::analytics::{SubgroupRow, SubgroupTable};
use dpsan::histogram::TreeSpec;
use dpsan::GeoPoint;

use crate::error::{CliError, CliResult};

/// Writes `contents` to a temporary file next to `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Appends `suffix` to the full file name: `out.csv` + `.json` → `out.csv.json`.
pub fn sidecar(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers(path: &Path, reader: &mut csv::Reader<File>) -> CliResult<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    CliError::parse(path, line, e.to_string())
}

fn records(path: &Path, reader: &mut csv::Reader<File>) -> CliResult<Vec<(u64, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn column(path: &Path, headers: &[String], names: &[&str]) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| names.contains(&h.as_str()))
        .ok_or_else(|| CliError::parse(path, 1, format!("missing column {}", names.join(" or "))))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: u64, field: &str, what: &str) -> CliResult<T> {
    field
        .parse()
        .map_err(|_| CliError::parse(path, line, format!("cannot parse {what} from '{field}'")))
}

/// Reads `(id, x, y)` rows. Columns named `x*`/`y*` are accepted as well,
/// so released doppelganger files can be read back.
pub fn read_locations(path: &Path) -> CliResult<Vec<(String, GeoPoint)>> {
    let mut rdr = open_csv(path)?;
    let hdr = headers(path, &mut rdr)?;
    let ix = column(path, &hdr, &["x", "x*"])?;
    let iy = column(path, &hdr, &["y", "y*"])?;
    let iid = column(path, &hdr, &["id", "origin-id"]).ok();
    let mut out = Vec::new();
    for (n, (line, rec)) in records(path, &mut rdr)?.into_iter().enumerate() {
        let x: f64 = parse_num(path, line, &rec[ix], "x")?;
        let y: f64 = parse_num(path, line, &rec[iy], "y")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(CliError::parse(path, line, "non-finite coordinate"));
        }
        let id = iid.map(|i| rec[i].clone()).unwrap_or_else(|| n.to_string());
        out.push((id, GeoPoint::new(x, y)));
    }
    if out.is_empty() {
        return Err(CliError::parse(path, 1, "no locations"));
    }
    Ok(out)
}

pub fn locations_csv(locations: &[(String, GeoPoint)]) -> String {
    let mut s = String::from("id,x,y\n");
    for (id, p) in locations {
        s.push_str(&format!("{id},{},{}\n", p.x, p.y));
    }
    s
}

/// Edge list `(i, j)`, 0-indexed.
pub fn read_edges(path: &Path) -> CliResult<Vec<(usize, usize)>> {
    let mut rdr = open_csv(path)?;
    let hdr = headers(path, &mut rdr)?;
    let ii = column(path, &hdr, &["i"])?;
    let ij = column(path, &hdr, &["j"])?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, rec)| {
            Ok((parse_num(path, line, &rec[ii], "i")?, parse_num(path, line, &rec[ij], "j")?))
        })
        .collect()
}

pub fn edges_csv(edges: &[(usize, usize)]) -> String {
    let mut s = String::from("i,j\n");
    for (i, j) in edges {
        s.push_str(&format!("{i},{j}\n"));
    }
    s
}

pub fn read_tree_spec(path: &Path) -> CliResult<TreeSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let spec: TreeSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::parse(path, e.line() as u64, e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Reads one row per leaf (attribute columns plus `count`) and returns the
/// counts in the tree's leaf order. Every leaf must appear exactly once.
pub fn read_leaf_counts(path: &Path, spec: &TreeSpec) -> CliResult<Vec<u64>> {
    let mut rdr = open_csv(path)?;
    let hdr = headers(path, &mut rdr)?;
    let icount = column(path, &hdr, &["count"])?;
    let attr_cols = spec
        .attributes
        .iter()
        .map(|a| column(path, &hdr, &[a.name.as_str()]))
        .collect::<CliResult<Vec<_>>>()?;
    let mut counts: Vec<Option<u64>> = vec![None; spec.leaf_count()];
    for (line, rec) in records(path, &mut rdr)? {
        let mut index = 0;
        for (a, &col) in spec.attributes.iter().zip(&attr_cols) {
            let level = a.levels.iter().position(|l| *l == rec[col]).ok_or_else(|| {
                CliError::parse(path, line, format!("'{}' is not a level of '{}'", rec[col], a.name))
            })?;
            index = index * a.levels.len() + level;
        }
        if counts[index].is_some() {
            return Err(CliError::parse(path, line, "duplicate subgroup"));
        }
        counts[index] = Some(parse_num(path, line, &rec[icount], "count")?);
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| CliError::parse(path, 0, format!("leaf {i} missing"))))
        .collect()
}

/// Factor columns followed by `count` and `population`.
pub fn read_subgroups(path: &Path) -> CliResult<SubgroupTable> {
    let mut rdr = open_csv(path)?;
    let hdr = headers(path, &mut rdr)?;
    let icount = column(path, &hdr, &["count"])?;
    let ipop = column(path, &hdr, &["population"])?;
    let factor_cols: Vec<usize> = (0..hdr.len()).filter(|&i| i != icount && i != ipop).collect();
    let mut rows = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        rows.push(SubgroupRow {
            values: factor_cols.iter().map(|&i| rec[i].clone()).collect(),
            count: parse_num(path, line, &rec[icount], "count")?,
            population: parse_num(path, line, &rec[ipop], "population")?,
        });
    }
    Ok(SubgroupTable::new(factor_cols.iter().map(|&i| hdr[i].clone()).collect(), rows)?)
}
