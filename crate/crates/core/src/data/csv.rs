use std::path::Path;

use crate::error::{Error, Result};

/// Rows read from a CSV file, restricted to the declared domains and kept as
/// opaque strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub domains: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Rows dropped because a declared cell was missing or empty.
    pub dropped: usize,
}

pub fn load_csv(path: impl AsRef<Path>, declared_domains: &[String]) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, declared_domains)
}

pub fn read_csv(reader: impl std::io::Read, declared_domains: &[String]) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let columns = declared_domains
        .iter()
        .map(|d| {
            header
                .iter()
                .position(|h| h.trim() == d)
                .ok_or_else(|| Error::MissingDomain(d.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let row: Option<Vec<String>> = columns
            .iter()
            .map(|&c| rec.get(c).map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned))
            .collect();
        match row {
            Some(r) => rows.push(r),
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::NoRows { dropped });
    }
    Ok(RawTable {
        domains: declared_domains.to_vec(),
        rows,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domains(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reads_all_complete_rows() {
        let csv = "Port,Carrier,Extra\na,x,1\nb,y,2\nc,x,3\n";
        let t = read_csv(csv.as_bytes(), &domains(&["Port", "Carrier"])).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.dropped, 0);
        assert_eq!(t.rows[1], vec!["b", "y"]);
    }

    #[test]
    fn drops_rows_with_empty_cells() {
        let csv = "Port,Carrier\na,x\n,y\nc,x\n";
        let t = read_csv(csv.as_bytes(), &domains(&["Port", "Carrier"])).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.dropped, 1);
    }

    #[test]
    fn short_rows_count_as_missing() {
        let csv = "Port,Carrier\na,x\nb\n";
        let t = read_csv(csv.as_bytes(), &domains(&["Port", "Carrier"])).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.dropped, 1);
    }

    #[test]
    fn missing_declared_domain_is_an_error() {
        let csv = "Port,Vessel\na,x\n";
        let err = read_csv(csv.as_bytes(), &domains(&["Port", "Carrier"])).unwrap_err();
        assert!(matches!(err, Error::MissingDomain(d) if d == "Carrier"));
    }

    #[test]
    fn zero_surviving_rows_is_an_error() {
        let csv = "Port,Carrier\n,x\n";
        let err = read_csv(csv.as_bytes(), &domains(&["Port", "Carrier"])).unwrap_err();
        assert!(matches!(err, Error::NoRows { dropped: 1 }));
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = load_csv("/nonexistent/file.csv", &domains(&["a", "b"])).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
