//! Typed knowledge graph in CSR layout, TSV loading, and DOT export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GraphError, Result};

/// Dense node index, assigned in node-file row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

/// Index of a directed arc in the CSR arc arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArcId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Phenotype,
    Gene,
    Disease,
    Other,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Phenotype => "phenotype",
            NodeType::Gene => "gene",
            NodeType::Disease => "disease",
            NodeType::Other => "other",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "phenotype" => Ok(NodeType::Phenotype),
            "gene" => Ok(NodeType::Gene),
            "disease" => Ok(NodeType::Disease),
            "other" => Ok(NodeType::Other),
            _ => Err(s.to_string()),
        }
    }
}

/// Immutable typed graph. Every undirected edge is stored as two arcs;
/// arcs leaving a node occupy one contiguous range sorted by destination.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    keys: Vec<String>,
    types: Vec<NodeType>,
    names: Vec<String>,
    key_index: HashMap<String, NodeId>,
    offsets: Vec<usize>,
    arc_src: Vec<NodeId>,
    arc_dst: Vec<NodeId>,
    arc_relation: Vec<u32>,
    relations: Vec<String>,
}

/// One node-file row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub key: String,
    pub node_type: NodeType,
    pub name: String,
}

/// One edge-file row (undirected).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRecord {
    pub src: String,
    pub relation: String,
    pub dst: String,
}

fn content_lines<R: Read>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

pub fn parse_node_records<R: Read>(reader: R, file: &str) -> Result<Vec<NodeRecord>> {
    let mut out = Vec::new();
    for (line_no, line) in content_lines(reader) {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(GraphError::Malformed {
                file: file.to_string(),
                line: line_no,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            }
            .into());
        }
        let node_type = fields[1]
            .parse::<NodeType>()
            .map_err(|token| GraphError::UnknownNodeType {
                file: file.to_string(),
                line: line_no,
                token,
            })?;
        out.push(NodeRecord {
            key: fields[0].to_string(),
            node_type,
            name: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn parse_edge_records<R: Read>(reader: R, file: &str) -> Result<Vec<(usize, EdgeRecord)>> {
    let mut out = Vec::new();
    for (line_no, line) in content_lines(reader) {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[2].is_empty() {
            return Err(GraphError::Malformed {
                file: file.to_string(),
                line: line_no,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            }
            .into());
        }
        out.push((
            line_no,
            EdgeRecord {
                src: fields[0].to_string(),
                relation: fields[1].to_string(),
                dst: fields[2].to_string(),
            },
        ));
    }
    Ok(out)
}

impl KnowledgeGraph {
    /// Loads and validates a node TSV and an edge TSV.
    pub fn load(node_file: &Path, edge_file: &Path) -> Result<Self> {
        let nodes = parse_node_records(fs::File::open(node_file)?, &node_file.display().to_string())?;
        let edges = parse_edge_records(fs::File::open(edge_file)?, &edge_file.display().to_string())?;
        Self::from_records(nodes, &edges, &edge_file.display().to_string())
    }

    /// Builds a graph from parsed rows. `edges` carry their source line numbers
    /// for error reporting.
    pub fn from_records(
        nodes: Vec<NodeRecord>,
        edges: &[(usize, EdgeRecord)],
        edge_file: &str,
    ) -> Result<Self> {
        let mut key_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if key_index.insert(n.key.clone(), NodeId(i)).is_some() {
                return Err(GraphError::DuplicateNode(n.key.clone()).into());
            }
        }
        let mut relations: Vec<String> = Vec::new();
        let mut relation_ids: HashMap<String, u32> = HashMap::new();
        // (u, v) with u < v → relation id; first listing wins.
        let mut undirected: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for (line, e) in edges {
            let lookup = |key: &str| {
                key_index.get(key).copied().ok_or_else(|| GraphError::UndeclaredNode {
                    file: edge_file.to_string(),
                    line: *line,
                    key: key.to_string(),
                })
            };
            let u = lookup(&e.src)?;
            let v = lookup(&e.dst)?;
            if u == v {
                return Err(GraphError::SelfEdge {
                    file: edge_file.to_string(),
                    line: *line,
                    key: e.src.clone(),
                }
                .into());
            }
            let rel = *relation_ids.entry(e.relation.clone()).or_insert_with(|| {
                relations.push(e.relation.clone());
                (relations.len() - 1) as u32
            });
            let key = (u.0.min(v.0), u.0.max(v.0));
            undirected.entry(key).or_insert(rel);
        }

        let n = nodes.len();
        let mut adjacency: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];
        for (&(u, v), &rel) in &undirected {
            adjacency[u].push((v, rel));
            adjacency[v].push((u, rel));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut arc_src = Vec::with_capacity(undirected.len() * 2);
        let mut arc_dst = Vec::with_capacity(undirected.len() * 2);
        let mut arc_relation = Vec::with_capacity(undirected.len() * 2);
        offsets.push(0);
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            for &(v, rel) in list.iter() {
                arc_src.push(NodeId(u));
                arc_dst.push(NodeId(v));
                arc_relation.push(rel);
            }
            offsets.push(arc_dst.len());
        }

        let (keys, types, names) = nodes.into_iter().fold(
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)),
            |(mut k, mut t, mut nm), r| {
                k.push(r.key);
                t.push(r.node_type);
                nm.push(r.name);
                (k, t, nm)
            },
        );
        Ok(Self {
            keys,
            types,
            names,
            key_index,
            offsets,
            arc_src,
            arc_dst,
            arc_relation,
            relations,
        })
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arc_dst.len()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.0 < self.node_count()
    }

    pub fn node_type(&self, v: NodeId) -> NodeType {
        self.types[v.0]
    }

    pub fn node_key(&self, v: NodeId) -> &str {
        &self.keys[v.0]
    }

    pub fn node_name(&self, v: NodeId) -> &str {
        &self.names[v.0]
    }

    pub fn node_by_key(&self, key: &str) -> Option<NodeId> {
        self.key_index.get(key).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }

    pub fn nodes_of_type(&self, t: NodeType) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&v| self.types[v.0] == t)
    }

    pub fn arc_endpoints(&self, a: ArcId) -> (NodeId, NodeId) {
        (self.arc_src[a.0], self.arc_dst[a.0])
    }

    pub fn arc_relation(&self, a: ArcId) -> &str {
        &self.relations[self.arc_relation[a.0] as usize]
    }

    /// Contiguous arc range leaving `v` (unchecked).
    pub fn arc_range(&self, v: NodeId) -> std::ops::Range<usize> {
        self.offsets[v.0]..self.offsets[v.0 + 1]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.arc_range(v).len()
    }

    /// Arcs leaving `v` as `(arc, destination)`, ascending destination.
    pub fn neighbors(&self, v: NodeId) -> Result<Vec<(ArcId, NodeId)>> {
        if !self.contains(v) {
            return Err(GraphError::NodeOutOfRange {
                node: v.0,
                count: self.node_count(),
            }
            .into());
        }
        Ok(self.neighbor_iter(v).collect())
    }

    pub(crate) fn neighbor_iter(&self, v: NodeId) -> impl Iterator<Item = (ArcId, NodeId)> + '_ {
        self.arc_range(v).map(move |a| (ArcId(a), self.arc_dst[a]))
    }

    /// Arc `(u, v)` if present.
    pub fn find_arc(&self, u: NodeId, v: NodeId) -> Option<ArcId> {
        let range = self.arc_range(u);
        self.arc_dst[range.clone()]
            .binary_search(&v)
            .ok()
            .map(|i| ArcId(range.start + i))
    }

    pub fn node_records(&self) -> Vec<NodeRecord> {
        self.nodes()
            .map(|v| NodeRecord {
                key: self.keys[v.0].clone(),
                node_type: self.types[v.0],
                name: self.names[v.0].clone(),
            })
            .collect()
    }

    /// Each undirected edge once, as the arc with the smaller source ID.
    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        (0..self.arc_count())
            .filter(|&a| self.arc_src[a] < self.arc_dst[a])
            .map(|a| EdgeRecord {
                src: self.keys[self.arc_src[a].0].clone(),
                relation: self.arc_relation(ArcId(a)).to_string(),
                dst: self.keys[self.arc_dst[a].0].clone(),
            })
            .collect()
    }

    pub fn write_node_file(&self, path: &Path) -> Result<()> {
        fs::write(path, render_node_file(&self.node_records()))?;
        Ok(())
    }

    pub fn write_edge_file(&self, path: &Path) -> Result<()> {
        fs::write(path, render_edge_file(&self.edge_records()))?;
        Ok(())
    }
}

pub fn render_node_file(nodes: &[NodeRecord]) -> String {
    let mut out = String::new();
    for n in nodes {
        let _ = writeln!(out, "{}\t{}\t{}", n.key, n.node_type, n.name);
    }
    out
}

pub fn render_edge_file(edges: &[EdgeRecord]) -> String {
    let mut out = String::from("# src\trelation\tdst\n");
    for e in edges {
        let _ = writeln!(out, "{}\t{}\t{}", e.src, e.relation, e.dst);
    }
    out
}

/// A node/arc selection of a [`KnowledgeGraph`] with optional per-node labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubgraphExport {
    pub nodes: BTreeSet<NodeId>,
    pub arcs: BTreeSet<ArcId>,
    pub node_annotations: BTreeMap<NodeId, String>,
}

impl SubgraphExport {
    pub fn validate(&self, g: &KnowledgeGraph) -> Result<()> {
        for &v in &self.nodes {
            if !g.contains(v) {
                return Err(GraphError::NodeOutOfRange {
                    node: v.0,
                    count: g.node_count(),
                }
                .into());
            }
        }
        for &a in &self.arcs {
            if a.0 >= g.arc_count() {
                return Err(GraphError::InvalidExport(format!("arc {} does not exist", a.0)).into());
            }
            let (u, v) = g.arc_endpoints(a);
            if !self.nodes.contains(&u) || !self.nodes.contains(&v) {
                return Err(GraphError::InvalidExport(format!(
                    "arc {} has an endpoint outside the node set",
                    a.0
                ))
                .into());
            }
        }
        Ok(())
    }

    /// Export of `nodes` with every graph arc between them.
    pub fn induced(g: &KnowledgeGraph, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let arcs = nodes
            .iter()
            .flat_map(|&u| g.neighbor_iter(u))
            .filter(|(_, v)| nodes.contains(v))
            .map(|(a, _)| a)
            .collect();
        Self {
            nodes,
            arcs,
            node_annotations: BTreeMap::new(),
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn dot_style(t: NodeType) -> (&'static str, &'static str) {
    match t {
        NodeType::Phenotype => ("ellipse", "steelblue"),
        NodeType::Gene => ("box", "firebrick"),
        NodeType::Disease => ("diamond", "darkgreen"),
        NodeType::Other => ("circle", "gray50"),
    }
}

/// Renders an undirected DOT document; arcs `(u,v)` and `(v,u)` collapse to one edge.
pub fn render_dot(g: &KnowledgeGraph, s: &SubgraphExport, graph_name: &str) -> Result<String> {
    s.validate(g)?;
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{}\" {{", dot_escape(graph_name));
    for &v in &s.nodes {
        let (shape, color) = dot_style(g.node_type(v));
        let mut label = dot_escape(g.node_name(v));
        if let Some(note) = s.node_annotations.get(&v) {
            label.push_str("\\n");
            label.push_str(&dot_escape(note));
        }
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\", shape={}, color={}];",
            v.0,
            label,
            shape,
            color
        );
    }
    let pairs: BTreeSet<(NodeId, NodeId)> = s
        .arcs
        .iter()
        .map(|&a| {
            let (u, v) = g.arc_endpoints(a);
            (u.min(v), u.max(v))
        })
        .collect();
    for (u, v) in pairs {
        let _ = writeln!(out, "  n{} -- n{};", u.0, v.0);
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_dot(g: &KnowledgeGraph, s: &SubgraphExport, out: &Path) -> Result<()> {
    let doc = render_dot(g, s, "subgraph")?;
    fs::write(out, doc).map_err(|e| GraphError::Unwritable {
        path: out.display().to_string(),
        source: e,
    })?;
    Ok(())
}
