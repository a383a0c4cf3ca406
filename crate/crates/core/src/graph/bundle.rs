//! Directory bundle format:
//!
//! * `edges.tsv`: `u<TAB>v` per line, undirected, 0-based node ids
//! * `features.csv`: one comma-separated row of reals per node
//! * `labels.tsv`: one class id per line
//! * `splits.tsv` (optional): `node<TAB>train|val|test` per line

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{EdgeCleanup, Graph, SplitAssignment, SplitRole};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// A loaded bundle plus what was cleaned up on the way in.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub graph: Graph,
    pub cleanup: EdgeCleanup,
    pub splits: Option<SplitAssignment>,
}

pub fn load_graph_bundle(dir: impl AsRef<Path>, ood_classes: &[usize]) -> Result<LoadedBundle> {
    let dir = dir.as_ref();
    let labels = parse_lines(&dir.join("labels.tsv"), |line| {
        line.trim().parse::<usize>().map_err(|e| e.to_string())
    })?;
    let features = read_features(&dir.join("features.csv"))?;
    let edges = parse_lines(&dir.join("edges.tsv"), |line| {
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err("expected two tab-separated node ids".to_string());
        };
        let u = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
        let v = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
        Ok((u, v))
    })?;
    if features.rows() != labels.len() {
        return Err(Error::Graph(format!(
            "features.csv has {} rows, labels.tsv has {}",
            features.rows(),
            labels.len()
        )));
    }
    let (graph, cleanup) = Graph::new(features, labels, edges, ood_classes)?;
    if cleanup.self_loops + cleanup.duplicates > 0 {
        log::warn!(
            "{}: dropped {} self loops and {} duplicate edges",
            dir.display(),
            cleanup.self_loops,
            cleanup.duplicates
        );
    }
    let splits_path = dir.join("splits.tsv");
    let splits = if splits_path.exists() {
        Some(read_splits(&splits_path, graph.num_nodes())?)
    } else {
        None
    };
    Ok(LoadedBundle {
        graph,
        cleanup,
        splits,
    })
}

/// Writes `graph` (and optionally `splits`) in bundle format. Features are
/// printed with shortest round-trip formatting so reloading is exact.
pub fn write_graph_bundle(
    graph: &Graph,
    dir: impl AsRef<Path>,
    splits: Option<&SplitAssignment>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_with(&dir.join("edges.tsv"), |w| {
        for &(u, v) in graph.edges() {
            writeln!(w, "{u}\t{v}")?;
        }
        Ok(())
    })?;
    write_with(&dir.join("labels.tsv"), |w| {
        for y in graph.labels() {
            writeln!(w, "{y}")?;
        }
        Ok(())
    })?;
    let x = graph.features();
    write_with(&dir.join("features.csv"), |w| {
        for r in 0..x.rows() {
            for (j, v) in x.row(r).iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    if let Some(s) = splits {
        write_with(&dir.join("splits.tsv"), |w| {
            for v in 0..s.len() {
                if let Some(role) = s.role(v) {
                    writeln!(w, "{v}\t{}", role.as_str())?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<T>(path: &Path, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>> {
    let text = read(path)?;
    let name = file_name(path);
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            f(l).map_err(|msg| Error::Parse {
                file: name.clone(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

fn read_features(path: &Path) -> Result<Matrix> {
    let text = read(path)?;
    let name = file_name(path);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Parse {
                    file: name.clone(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse {
                    file: name,
                    line: i + 1,
                    msg: format!("ragged row: {width} values, expected {c}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn read_splits(path: &Path, num_nodes: usize) -> Result<SplitAssignment> {
    let entries = parse_lines(path, |line| {
        let mut it = line.split('\t');
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err("expected `node<TAB>role`".to_string());
        };
        let v = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
        let role = SplitRole::parse(b.trim()).ok_or_else(|| format!("unknown split role {b:?}"))?;
        if v >= num_nodes {
            return Err(format!("node {v} out of range"));
        }
        Ok((v, role))
    })?;
    Ok(SplitAssignment::from_roles(num_nodes, entries))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn tiny_bundle_dedups_and_drops_self_loop() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0\t1\n1\t0\n2\t2\n");
        write(dir.path(), "features.csv", "1,0\n0,1\n0.5,0.5\n");
        write(dir.path(), "labels.tsv", "0\n1\n2\n");
        let b = load_graph_bundle(dir.path(), &[2]).unwrap();
        assert_eq!(b.graph.edges(), &[(0, 1)]);
        assert_eq!(b.cleanup.self_loops, 1);
        assert_eq!(b.cleanup.duplicates, 1);
        assert!(b.splits.is_none());
    }

    #[test]
    fn empty_ood_set_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0\t1\n");
        write(dir.path(), "features.csv", "1\n0\n");
        write(dir.path(), "labels.tsv", "0\n1\n");
        let err = load_graph_bundle(dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("ood_classes empty"));
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.tsv", "0\n1\n");
        write(dir.path(), "features.csv", "1,2\n3\n");
        write(dir.path(), "edges.tsv", "0\t1\n");
        let err = load_graph_bundle(dir.path(), &[1]).unwrap_err();
        assert!(err.to_string().contains("ragged"), "{err}");

        write(dir.path(), "features.csv", "1\n3\n");
        write(dir.path(), "edges.tsv", "0\t7\n");
        assert!(matches!(
            load_graph_bundle(dir.path(), &[1]),
            Err(Error::Graph(_))
        ));

        fs::remove_file(dir.path().join("edges.tsv")).unwrap();
        assert!(matches!(
            load_graph_bundle(dir.path(), &[1]),
            Err(Error::Io { .. })
        ));
    }
}
