//! Reading data sets and writing trees and run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::tree::{NodeId, TreeArena};

/// Per-column affine map applied to the features: `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub labels: Option<Vec<String>>,
    /// Feature column names, when the file has a header.
    pub names: Option<Vec<String>>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(points: Points) -> Self {
        Dataset {
            points,
            labels: None,
            names: None,
            standardization: None,
        }
    }

    /// Rescales every feature to zero mean and unit sample standard
    /// deviation. Constant columns keep scale 1.
    pub fn standardize(&mut self) {
        let (n, d) = (self.points.len(), self.points.dims());
        let mut means = vec![0.0; d];
        let mut scales = vec![1.0; d];
        for k in 0..d {
            let col: Vec<f64> = self.points.rows().map(|r| r[k]).collect();
            means[k] = crate::stats::mean(&col);
            if n > 1 {
                let sd = crate::stats::variance(&col).sqrt();
                if sd > 0.0 {
                    scales[k] = sd;
                }
            }
        }
        for i in 0..n {
            for (k, v) in self.points.row_mut(i).iter_mut().enumerate() {
                *v = (*v - means[k]) / scales[k];
            }
        }
        self.standardization = Some(Standardization { means, scales });
    }
}

/// Which column holds class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based.
    Index(usize),
}

impl LabelColumn {
    /// A number is read as a zero-based index, anything else as a name.
    pub fn parse(s: &str) -> Self {
        match s.parse() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvOptions {
    /// `None` detects a header: the first row is one when none of its cells
    /// parses as a number.
    pub header: Option<bool>,
    pub label: Option<LabelColumn>,
    pub standardize: bool,
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, options).map_err(|e| match e {
        Error::Csv {
            row,
            column,
            message,
            ..
        } => Error::Csv {
            path: path.to_path_buf(),
            row,
            column,
            message,
        },
        other => other,
    })
}

/// [`load_csv`] on in-memory text. Rows and columns in errors are 1-based.
pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<Dataset> {
    let err = |row: usize, column: usize, message: String| Error::Csv {
        path: "<input>".into(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, 0, e.to_string())
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    let width = records[0].1.len();
    let has_header = options
        .header
        .unwrap_or_else(|| records[0].1.iter().all(|c| c.parse::<f64>().is_err()));
    let header: Option<Vec<String>> = has_header.then(|| records[0].1.iter().map(str::to_string).collect());
    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::EmptyData);
    }

    let label_idx = match &options.label {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(Error::Config(format!("label column {i} is out of range ({width} columns)")))
        }
        Some(LabelColumn::Name(name)) => {
            let names = header
                .as_ref()
                .ok_or_else(|| Error::Config(format!("label column {name:?} named but the file has no header")))?;
            Some(
                names
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Config(format!("no column named {name:?}")))?,
            )
        }
    };
    let dims = width - usize::from(label_idx.is_some());
    if dims == 0 {
        return Err(Error::Config("no feature columns".into()));
    }

    let mut values = Vec::with_capacity(body.len() * dims);
    let mut labels = label_idx.map(|_| Vec::with_capacity(body.len()));
    for (line, rec) in body {
        if rec.len() != width {
            return Err(err(*line, rec.len().min(width) + 1, format!("expected {width} fields, found {}", rec.len())));
        }
        for (col, cell) in rec.iter().enumerate() {
            if Some(col) == label_idx {
                labels.as_mut().expect("label column").push(cell.to_string());
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| err(*line, col + 1, format!("{cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err(*line, col + 1, format!("{cell:?} is not finite")));
            }
            values.push(v);
        }
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx)
            .map(|(_, s)| s)
            .collect()
    });
    let mut ds = Dataset {
        points: Points::new(values, dims)?,
        labels,
        names,
        standardization: None,
    };
    if options.standardize {
        ds.standardize();
    }
    Ok(ds)
}

/// Writes points (and labels as a last column, if given) with a header.
/// Values use the shortest representation that parses back exactly.
pub fn write_points_csv(points: &Points, labels: Option<&[String]>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=points.dims()).map(|k| format!("x{k}")).collect();
    out.push_str(&header.join(","));
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in points.rows().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    out
}

fn address(path: &[u32]) -> String {
    path.iter().map(u32::to_string).collect::<Vec<_>>().join(".")
}

/// Newick text for `tree`, one unit of branch length per level. Internal
/// nodes are named `N<address>`, leaves `L<address>_n<count>`, the root
/// `root`. Comments carry the descendant count, the root's comment the
/// depth, and `phi` (6 decimals) where set. Children appear in creation
/// order.
pub fn export_newick(tree: &TreeArena) -> String {
    let mut out = String::new();
    write_newick_node(tree, tree.root(), &mut out);
    out.push(';');
    out
}

fn write_newick_node(tree: &TreeArena, id: NodeId, out: &mut String) {
    let node = tree.node(id);
    if !node.children().is_empty() {
        out.push('(');
        for (j, &c) in node.children().iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write_newick_node(tree, c, out);
        }
        out.push(')');
    }
    let addr = address(node.path());
    if id == tree.root() {
        out.push_str("root");
    } else if tree.is_leaf_level(id) {
        let _ = write!(out, "L{addr}_n{}", node.n_here());
    } else {
        let _ = write!(out, "N{addr}");
    }
    let _ = write!(out, "[&n={}", node.n_desc());
    if id == tree.root() {
        let _ = write!(out, ",depth={}", tree.depth());
    }
    if let Some(phi) = node.phi() {
        let vals: Vec<String> = phi.iter().map(|v| format!("{v:.6}")).collect();
        let _ = write!(out, ",phi={{{}}}", vals.join(","));
    }
    out.push(']');
    if id != tree.root() {
        out.push_str(":1.0");
    }
}

/// A parsed Newick node, independent of the tree model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewickNode {
    pub name: String,
    /// Raw `key=value` pairs of the bracketed comment.
    pub comment: Vec<(String, String)>,
    pub length: Option<f64>,
    pub children: Vec<NewickNode>,
}

impl NewickNode {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.comment.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Newick {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn node(&mut self) -> Result<NewickNode> {
        self.skip_ws();
        let mut node = NewickNode::default();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                node.children.push(self.node()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.error("expected ',' or ')'"),
                }
            }
        }
        let start = self.pos;
        while self.peek().is_some_and(|b| !b"()[],:;".contains(&b)) {
            self.pos += 1;
        }
        node.name = String::from_utf8_lossy(&self.text[start..self.pos]).trim().to_string();
        if self.peek() == Some(b'[') {
            node.comment = self.comment()?;
        }
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            let start = self.pos;
            while self.peek().is_some_and(|b| !b"()[],;".contains(&b)) {
                self.pos += 1;
            }
            let s = String::from_utf8_lossy(&self.text[start..self.pos]).trim().to_string();
            match s.parse() {
                Ok(v) => node.length = Some(v),
                Err(_) => return self.error(format!("bad branch length {s:?}")),
            }
        }
        Ok(node)
    }

    fn comment(&mut self) -> Result<Vec<(String, String)>> {
        let start = self.pos + 1;
        let Some(len) = self.text[start..].iter().position(|&b| b == b']') else {
            return self.error("unterminated comment");
        };
        let body = String::from_utf8_lossy(&self.text[start..start + len]).to_string();
        self.pos = start + len + 1;
        let body = body.strip_prefix('&').unwrap_or(&body);
        // split on commas outside braces
        let mut parts = Vec::new();
        let (mut depth, mut current) = (0i32, String::new());
        for ch in body.chars() {
            match ch {
                '{' => depth += 1,
                '}' => depth -= 1,
                ',' if depth == 0 => {
                    parts.push(std::mem::take(&mut current));
                    continue;
                }
                _ => {}
            }
            current.push(ch);
        }
        parts.push(current);
        Ok(parts
            .into_iter()
            .filter(|p| !p.trim().is_empty())
            .map(|p| match p.split_once('=') {
                Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
                None => (p.trim().to_string(), String::new()),
            })
            .collect())
    }
}

/// Parses one Newick tree into its generic node structure.
pub fn parse_newick(text: &str) -> Result<NewickNode> {
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
    };
    let root = p.node()?;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return p.error("expected ';'");
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.text.len() {
        return p.error("trailing text after ';'");
    }
    Ok(root)
}

/// Rebuilds a tree written by [`export_newick`].
pub fn tree_from_newick(text: &str) -> Result<TreeArena> {
    let root = parse_newick(text)?;
    let bad = |m: String| Error::Newick { offset: 0, message: m };
    let depth: usize = root
        .get("depth")
        .ok_or_else(|| bad("root comment lacks depth".into()))?
        .parse()
        .map_err(|_| bad("bad depth".into()))?;
    let mut tree = TreeArena::new(depth)?;
    let mut stack = vec![(&root, tree.root())];
    while let Some((node, id)) = stack.pop() {
        if let Some(phi) = node.get("phi") {
            let inner = phi
                .strip_prefix('{')
                .and_then(|s| s.strip_suffix('}'))
                .ok_or_else(|| bad(format!("bad phi {phi:?}")))?;
            let vals = inner
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad phi {phi:?}")))?;
            tree.set_phi(id, vals);
        }
        if tree.is_leaf_level(id) {
            let n: usize = node
                .get("n")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("leaf {} lacks a count", node.name)))?;
            for _ in 0..n {
                tree.increment(id);
            }
            continue;
        }
        for child in node.children.iter() {
            let label = child
                .name
                .trim_start_matches(['N', 'L'])
                .split('_')
                .next()
                .and_then(|a| a.rsplit('.').next())
                .and_then(|l| l.parse::<u32>().ok())
                .ok_or_else(|| bad(format!("cannot read an address from {:?}", child.name)))?;
            let cid = tree.add_child_labeled(id, label)?;
            stack.push((child, cid));
        }
    }
    // counts are rebuilt from the leaves; the comments must agree
    let mut check = vec![(&root, tree.root())];
    while let Some((node, id)) = check.pop() {
        let want: Option<usize> = node.get("n").and_then(|v| v.parse().ok());
        if want != Some(tree.node(id).n_desc()) {
            return Err(bad(format!("count of {} does not match its leaves", node.name)));
        }
        check.extend(node.children.iter().zip(tree.children(id).to_vec()));
    }
    Ok(tree)
}

/// Nested-object form of a tree for the run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub path: Vec<u32>,
    pub n: usize,
    pub n_here: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    pub children: Vec<TreeJson>,
}

impl TreeJson {
    pub fn from_tree(tree: &TreeArena) -> Self {
        Self::from_node(tree, tree.root())
    }

    fn from_node(tree: &TreeArena, id: NodeId) -> Self {
        let node = tree.node(id);
        TreeJson {
            path: node.path().to_vec(),
            n: node.n_desc(),
            n_here: node.n_here(),
            phi: node.phi().map(<[f64]>::to_vec),
            children: node.children().iter().map(|&c| Self::from_node(tree, c)).collect(),
        }
    }
}

pub const RUN_SCHEMA: &str = "dfp-run/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub c: f64,
    pub tau: f64,
    pub obs_tau: f64,
}

/// Machine-readable summary of one fitted chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub seed: u64,
    pub config: crate::eval::RunConfig,
    pub trace: Vec<crate::inference::TraceRow>,
    pub final_state: FinalState,
    pub tree: TreeJson,
    /// Leaf address of each datum, in input order.
    pub assignments: Vec<Vec<u32>>,
}

pub fn export_run_json(record: &RunRecord) -> Result<String> {
    Ok(serde_json::to_string_pretty(record)?)
}

pub fn read_run_json(text: &str) -> Result<RunRecord> {
    let record: RunRecord = serde_json::from_str(text)?;
    if record.schema != RUN_SCHEMA {
        return Err(Error::Format(format!(
            "unsupported run schema {:?}, expected {RUN_SCHEMA:?}",
            record.schema
        )));
    }
    Ok(record)
}
