use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.split('#').next().unwrap_or("").trim().to_string();
        if !trimmed.is_empty() {
            out.push((idx + 1, trimmed));
        }
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a graph from text files.
///
/// - edge file: `u,v[,weight]` per line, `#` comments allowed
/// - feature file: one node per line of comma-separated floats; the row
///   index is the node id and fixes the node count
/// - optional label file: `node_id,class_id` per line
pub fn load_graph(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    node_label_path: Option<&Path>,
) -> Result<Graph> {
    let feature_path = feature_path.as_ref();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim = None;
    for (lineno, line) in read_lines(feature_path)? {
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(feature_path, lineno, format!("bad float '{tok}'")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(parse_err(
                    feature_path,
                    lineno,
                    format!("expected {d} columns, got {}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(feature_path, 0, "empty feature file"));
    }
    let n = rows.len();
    let d = dim.unwrap();
    let features = Tensor::matrix(n, d, rows.into_iter().flatten().collect())?;

    let edge_path = edge_path.as_ref();
    let mut edges = Vec::new();
    for (lineno, line) in read_lines(edge_path)? {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(parse_err(edge_path, lineno, format!("expected u,v[,w], got '{line}'")));
        }
        let u: usize = parts[0]
            .parse()
            .map_err(|_| parse_err(edge_path, lineno, format!("bad node id '{}'", parts[0])))?;
        let v: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(edge_path, lineno, format!("bad node id '{}'", parts[1])))?;
        let w: f64 = if parts.len() == 3 {
            parts[2]
                .parse()
                .map_err(|_| parse_err(edge_path, lineno, format!("bad weight '{}'", parts[2])))?
        } else {
            1.0
        };
        if u >= n || v >= n {
            return Err(parse_err(
                edge_path,
                lineno,
                format!("node id {} out of range (n = {n})", u.max(v)),
            ));
        }
        if u == v {
            return Err(parse_err(edge_path, lineno, format!("self-loop on node {u}")));
        }
        if w < 0.0 {
            return Err(parse_err(edge_path, lineno, format!("negative weight {w}")));
        }
        edges.push((u, v, w));
    }

    let node_labels = match node_label_path {
        None => None,
        Some(label_path) => {
            let mut labels = vec![None; n];
            for (lineno, line) in read_lines(label_path)? {
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(parse_err(label_path, lineno, "expected node_id,class_id"));
                }
                let id: usize = parts[0]
                    .parse()
                    .map_err(|_| parse_err(label_path, lineno, format!("bad node id '{}'", parts[0])))?;
                let class: usize = parts[1]
                    .parse()
                    .map_err(|_| parse_err(label_path, lineno, format!("bad class id '{}'", parts[1])))?;
                if id >= n {
                    return Err(parse_err(label_path, lineno, format!("node id {id} out of range")));
                }
                labels[id] = Some(class);
            }
            let missing = labels.iter().position(Option::is_none);
            if let Some(id) = missing {
                return Err(parse_err(label_path, 0, format!("node {id} has no label")));
            }
            Some(labels.into_iter().map(Option::unwrap).collect())
        }
    };

    Graph::new(n, edges, features, node_labels)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the canonical edge/feature(/label) files for a graph. Loading the
/// written files reproduces the graph exactly.
pub fn save_graph(
    g: &Graph,
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    node_label_path: Option<&Path>,
) -> Result<()> {
    let mut edges = String::new();
    for &(u, v, w) in g.edges() {
        if w == 1.0 {
            edges.push_str(&format!("{u},{v}\n"));
        } else {
            edges.push_str(&format!("{u},{v},{w}\n"));
        }
    }
    write_file(edge_path.as_ref(), &edges)?;

    let mut feats = String::new();
    for i in 0..g.n() {
        let row: Vec<String> = g.features().row(i).iter().map(|x| format!("{x}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write_file(feature_path.as_ref(), &feats)?;

    if let (Some(path), Some(labels)) = (node_label_path, g.node_labels()) {
        let mut body = String::new();
        for (id, class) in labels.iter().enumerate() {
            body.push_str(&format!("{id},{class}\n"));
        }
        write_file(path, &body)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_edge_file() {
        let dir = tempfile::tempdir().unwrap();
        let ep = dir.path().join("edges.csv");
        let fp = dir.path().join("feats.csv");
        std::fs::write(&ep, "0,1\n").unwrap();
        std::fs::write(&fp, "1.0,2.0\n3.0,4.0\n").unwrap();
        let g = load_graph(&ep, &fp, None).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1, 1.0)]);
    }

    #[test]
    fn explicit_weight_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let ep = dir.path().join("edges.csv");
        let fp = dir.path().join("feats.csv");
        std::fs::write(&ep, "# header\n0,1,2.5\n").unwrap();
        std::fs::write(&fp, "1.0\n2.0\n").unwrap();
        let g = load_graph(&ep, &fp, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1, 2.5)]);
    }

    #[test]
    fn out_of_range_id_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let ep = dir.path().join("edges.csv");
        let fp = dir.path().join("feats.csv");
        std::fs::write(&ep, "0,1\n2,4\n").unwrap();
        std::fs::write(&fp, "1\n2\n3\n").unwrap();
        let err = load_graph(&ep, &fp, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number: {msg}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(
            3,
            vec![(0, 1, 1.0), (1, 2, 0.5)],
            Tensor::matrix(3, 2, vec![1.0, 0.25, -3.5, 0.0, 2.0, 7.125]).unwrap(),
            Some(vec![0, 1, 0]),
        )
        .unwrap();
        let ep = dir.path().join("e.csv");
        let fp = dir.path().join("f.csv");
        let lp = dir.path().join("l.csv");
        save_graph(&g, &ep, &fp, Some(&lp)).unwrap();
        let g2 = load_graph(&ep, &fp, Some(&lp)).unwrap();
        assert_eq!(g, g2);
    }
}
