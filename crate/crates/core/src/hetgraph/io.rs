//! Graph file formats.
//!
//! - nodes:    UTF-8 TSV, `node_id<TAB>node_type[<TAB>label]`
//! - edges:    TSV, `src_id<TAB>dst_id<TAB>relation_name<TAB>{directed|bidirectional}`
//! - features: per node type, TSV `node_id<TAB>v1,v2,...`, constant arity
//! - labels:   optional TSV `node_id<TAB>label` (alternative to the inline column)
//! - splits:   the edges file with a `{train|val|test}` column appended
//!
//! Lines starting with `#` and blank lines are ignored everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::hetgraph::split::SplitSet;
use crate::hetgraph::{GraphBuilder, HetGraph};

fn data_err(path: &Path, line_no: usize, msg: impl std::fmt::Display) -> CoreError {
    CoreError::GraphData(format!("{}:{line_no}: {msg}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| {
        CoreError::GraphData(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

/// Load and validate a graph from its on-disk parts. `feature_files` maps a
/// node type name to its feature file.
pub fn load_graph(
    node_file: &Path,
    edge_file: &Path,
    feature_files: &BTreeMap<String, std::path::PathBuf>,
    label_file: Option<&Path>,
) -> Result<HetGraph> {
    let mut b = GraphBuilder::default();

    for (no, line) in read_lines(node_file)? {
        let cols: Vec<&str> = line.split('\t').collect();
        match cols.as_slice() {
            [id, ty] => b.nodes.push((id.to_string(), ty.to_string(), None)),
            [id, ty, label] => {
                b.nodes
                    .push((id.to_string(), ty.to_string(), Some(label.to_string())))
            }
            _ => return Err(data_err(node_file, no, "expected 2 or 3 columns")),
        }
    }

    for (no, line) in read_lines(edge_file)? {
        let cols: Vec<&str> = line.split('\t').collect();
        let [src, dst, rel, dir] = cols.as_slice() else {
            return Err(data_err(edge_file, no, "expected 4 columns"));
        };
        let bidi = match *dir {
            "directed" => false,
            "bidirectional" => true,
            other => {
                return Err(data_err(
                    edge_file,
                    no,
                    format!("unknown direction token: {other}"),
                ))
            }
        };
        b.edges
            .push((src.to_string(), dst.to_string(), rel.to_string(), bidi));
    }

    for (ty, path) in feature_files {
        let mut rows = Vec::new();
        for (no, line) in read_lines(path)? {
            let Some((id, vals)) = line.split_once('\t') else {
                return Err(data_err(path, no, "expected `id<TAB>v1,v2,...`"));
            };
            let parsed: std::result::Result<Vec<f64>, _> =
                vals.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let parsed =
                parsed.map_err(|e| data_err(path, no, format!("bad feature value: {e}")))?;
            rows.push((id.to_string(), parsed));
        }
        b.features.insert(ty.clone(), rows);
    }

    if let Some(path) = label_file {
        let mut labels: BTreeMap<String, String> = BTreeMap::new();
        for (no, line) in read_lines(path)? {
            let Some((id, label)) = line.split_once('\t') else {
                return Err(data_err(path, no, "expected `id<TAB>label`"));
            };
            labels.insert(id.to_string(), label.to_string());
        }
        for (id, _, slot) in &mut b.nodes {
            if let Some(l) = labels.remove(id.as_str()) {
                *slot = Some(l);
            }
        }
        if let Some(id) = labels.keys().next() {
            return Err(CoreError::GraphData(format!(
                "label file references missing node: {id}"
            )));
        }
    }

    b.build()
}

/// Write the graph back out in canonical order. Produces `nodes.tsv`,
/// `edges.tsv` and `features_<type>.tsv` under `dir`.
pub fn save_graph(g: &HetGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut nf = fs::File::create(dir.join("nodes.tsv"))?;
    for n in g.nodes() {
        match n.label {
            Some(l) => writeln!(
                nf,
                "{}\t{}\t{}",
                n.id,
                g.type_names()[n.ty],
                g.label_names()[l]
            )?,
            None => writeln!(nf, "{}\t{}", n.id, g.type_names()[n.ty])?,
        }
    }

    let mut ef = fs::File::create(dir.join("edges.tsv"))?;
    for r in g.relations() {
        let dir_tok = if r.bidirectional {
            "bidirectional"
        } else {
            "directed"
        };
        for &(u, v) in &r.edges {
            writeln!(
                ef,
                "{}\t{}\t{}\t{}",
                g.nodes()[u].id,
                g.nodes()[v].id,
                r.name,
                dir_tok
            )?;
        }
    }

    for ty in 0..g.type_count() {
        let Some(feat) = g.features(ty) else { continue };
        let mut ff = fs::File::create(dir.join(format!("features_{}.tsv", g.type_names()[ty])))?;
        let range = g.type_range(ty);
        for (local, global) in range.enumerate() {
            let vals: Vec<String> = feat.row(local).iter().map(|v| format!("{v}")).collect();
            writeln!(ff, "{}\t{}", g.nodes()[global].id, vals.join(","))?;
        }
    }
    Ok(())
}

/// Edges file with the split assignment appended as a fifth column.
pub fn export_splits(g: &HetGraph, splits: &SplitSet, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (ri, r) in g.relations().iter().enumerate() {
        let dir_tok = if r.bidirectional {
            "bidirectional"
        } else {
            "directed"
        };
        let rs = &splits.relations[ri];
        for (part, edges) in [
            ("train", &rs.train),
            ("val", &rs.val),
            ("test", &rs.test),
        ] {
            for &(u, v) in edges {
                writeln!(
                    f,
                    "{}\t{}\t{}\t{}\t{}",
                    g.nodes()[u].id,
                    g.nodes()[v].id,
                    r.name,
                    dir_tok,
                    part
                )?;
            }
        }
    }
    Ok(())
}
