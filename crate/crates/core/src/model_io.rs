//! Versioned structured-text model files.
//!
//! One line per record, whitespace-separated tokens, strings quoted with
//! backslash escapes, floats in shortest round-trip form. The layout is
//! header fields, the feature schema with encoder state, optional fitted
//! composition transforms, then the tree ensembles as flat node lists
//! (node id, kind, feature, threshold, children, gain | leaf value).
//! Writing is deterministic: the same model always produces the same
//! bytes, and load(save(m)) == m.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::compositional::{
    CompositionBlock, ContrastMatrix, FittedBlock, FittedTransforms, Ppca, Treatment,
};
use crate::encoder::OrderedTsEncoder;
use crate::train::{BoostedModel, Family, FeatureSpec};
use crate::tree::{BoostConfig, DecisionTree, TreeNode};

const FORMAT_HEADER: &str = "claimboost-model v1";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported format header {0:?}")]
    BadHeader(String),
    #[error("model file incomplete: missing {0}")]
    Missing(&'static str),
}

fn syntax(line: usize, message: impl Into<String>) -> ModelIoError {
    ModelIoError::Syntax {
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Token helpers
// ---------------------------------------------------------------------------

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

/// Split a line into tokens; quoted tokens may contain spaces and escapes.
fn tokens(line: &str, line_no: usize) -> Result<Vec<String>, ModelIoError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '"' => {
                chars.next();
                let mut tok = String::new();
                loop {
                    match chars.next() {
                        None => return Err(syntax(line_no, "unterminated quoted token")),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('"') => tok.push('"'),
                            Some('\\') => tok.push('\\'),
                            Some('n') => tok.push('\n'),
                            Some('r') => tok.push('\r'),
                            other => {
                                return Err(syntax(
                                    line_no,
                                    format!("bad escape {other:?} in quoted token"),
                                ))
                            }
                        },
                        Some(other) => tok.push(other),
                    }
                }
                out.push(tok);
            }
            _ => {
                let mut tok = String::new();
                while let Some(&c) = chars.peek() {
                    if c == ' ' || c == '\t' {
                        break;
                    }
                    tok.push(c);
                    chars.next();
                }
                out.push(tok);
            }
        }
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

struct FieldParser<'a> {
    toks: &'a [String],
    pos: usize,
    line: usize,
}

impl<'a> FieldParser<'a> {
    fn new(toks: &'a [String], line: usize) -> Self {
        Self { toks, pos: 0, line }
    }

    fn str(&mut self) -> Result<&'a str, ModelIoError> {
        let t = self
            .toks
            .get(self.pos)
            .ok_or_else(|| syntax(self.line, "missing token"))?;
        self.pos += 1;
        Ok(t)
    }

    fn f64(&mut self) -> Result<f64, ModelIoError> {
        let t = self.str()?;
        t.parse()
            .map_err(|_| syntax(self.line, format!("expected a number, got {t:?}")))
    }

    fn usize(&mut self) -> Result<usize, ModelIoError> {
        let t = self.str()?;
        t.parse()
            .map_err(|_| syntax(self.line, format!("expected an integer, got {t:?}")))
    }

    fn u64(&mut self) -> Result<u64, ModelIoError> {
        let t = self.str()?;
        t.parse()
            .map_err(|_| syntax(self.line, format!("expected an integer, got {t:?}")))
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        let t = self.str()?;
        t.parse()
            .map_err(|_| syntax(self.line, format!("expected an integer, got {t:?}")))
    }
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

/// Serialize a model to its structured-text form.
pub fn model_to_string(model: &BoostedModel) -> String {
    let mut out = String::new();
    let push = |out: &mut String, line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push(&mut out, FORMAT_HEADER.to_string());
    push(&mut out, format!("family {}", model.family.as_str()));
    push(&mut out, format!("p {}", fmt(model.p)));
    push(&mut out, format!("phi {}", fmt(model.phi)));
    if let Some(g) = model.gamma_infl {
        push(&mut out, format!("gamma {}", fmt(g)));
    }
    let c = &model.config;
    push(
        &mut out,
        format!(
            "config {} {} {} {} {} {} {}",
            c.n_trees,
            fmt(c.learning_rate),
            fmt(c.l2_lambda),
            c.max_depth,
            c.min_samples_leaf,
            fmt(c.hessian_floor),
            fmt(c.max_leaf)
        ),
    );
    push(&mut out, format!("features {}", model.features.len()));
    for (i, f) in model.features.iter().enumerate() {
        push(
            &mut out,
            format!(
                "feature {i} {} {}",
                if f.categorical { "categorical" } else { "numeric" },
                quote(&f.name)
            ),
        );
        if let Some(enc) = &model.encoders[i] {
            push(
                &mut out,
                format!(
                    "encoder {i} {} {} {}",
                    enc.seed(),
                    enc.n_buckets(),
                    fmt(enc.prior())
                ),
            );
            let edges: Vec<String> = enc.bucket_edges().iter().map(|v| fmt(*v)).collect();
            push(
                &mut out,
                format!("encoder-edges {i} {} {}", edges.len(), edges.join(" ")).trim_end().to_string(),
            );
            for (class, label) in enc.labels().iter().enumerate() {
                let counts: Vec<String> = enc.class_counts()[class]
                    .iter()
                    .map(u32::to_string)
                    .collect();
                push(
                    &mut out,
                    format!(
                        "encoder-class {i} {} {} {}",
                        quote(label),
                        enc.class_totals()[class],
                        counts.join(" ")
                    ),
                );
            }
        }
    }
    if let Some(t) = &model.transforms {
        push(&mut out, format!("transforms {}", t.blocks.len()));
        for (bi, fb) in t.blocks.iter().enumerate() {
            let b = &fb.block;
            let treatment = match &b.treatment {
                Treatment::None => "none".to_string(),
                Treatment::Alr { reference } => format!("alr {reference}"),
                Treatment::Clr => "clr".to_string(),
                Treatment::Ilr => "ilr".to_string(),
                Treatment::ClrPpca { components } => format!("clr-ppca {components}"),
            };
            let cols: Vec<String> = b.columns.iter().map(|c| quote(c)).collect();
            push(
                &mut out,
                format!(
                    "block {bi} {} {} {} {} columns {} {}",
                    quote(&b.name),
                    fmt(b.closure),
                    fmt(b.epsilon),
                    treatment,
                    b.columns.len(),
                    cols.join(" ")
                ),
            );
            let derived: Vec<String> = fb.derived_names.iter().map(|c| quote(c)).collect();
            push(
                &mut out,
                format!("block-derived {bi} {} {}", derived.len(), derived.join(" ")),
            );
            if let Some(contrast) = &fb.contrast {
                push(
                    &mut out,
                    format!("block-contrast {bi} {}", contrast.rows().len()),
                );
                for (ri, row) in contrast.rows().iter().enumerate() {
                    let vals: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
                    push(
                        &mut out,
                        format!("contrast-row {bi} {ri} {}", vals.join(" ")),
                    );
                }
            }
            if let Some(ppca) = &fb.ppca {
                let mean: Vec<String> = ppca.mean.iter().map(|v| fmt(*v)).collect();
                push(
                    &mut out,
                    format!(
                        "block-ppca {bi} {} {} {} {}",
                        ppca.mean.len(),
                        ppca.components(),
                        fmt(ppca.noise_variance),
                        mean.join(" ")
                    ),
                );
                for (di, row) in ppca.loadings.iter().enumerate() {
                    let vals: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
                    push(&mut out, format!("ppca-row {bi} {di} {}", vals.join(" ")));
                }
            }
        }
    }
    write_ensemble(&mut out, "mean", &model.mean_trees);
    if let Some(prob) = &model.prob_trees {
        write_ensemble(&mut out, "prob", prob);
    }
    out.push_str("end\n");
    out
}

fn write_ensemble(out: &mut String, label: &str, trees: &[DecisionTree]) {
    out.push_str(&format!("ensemble {label} {}\n", trees.len()));
    for (ti, tree) in trees.iter().enumerate() {
        out.push_str(&format!("tree {ti} {}\n", tree.nodes().len()));
        for (ni, node) in tree.nodes().iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                } => out.push_str(&format!(
                    "node {ni} split {feature} {} {left} {right} {}\n",
                    fmt(*threshold),
                    fmt(*gain)
                )),
                TreeNode::Leaf { value } => {
                    out.push_str(&format!("node {ni} leaf {}\n", fmt(*value)))
                }
            }
        }
    }
}

/// Write a model file.
pub fn save_model(model: &BoostedModel, path: &Path) -> Result<(), ModelIoError> {
    fs::write(path, model_to_string(model)).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

/// Parse a model from its structured-text form.
pub fn model_from_str(text: &str) -> Result<BoostedModel, ModelIoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ModelIoError::Missing("header"))?;
    if header.trim() != FORMAT_HEADER {
        return Err(ModelIoError::BadHeader(header.to_string()));
    }

    let mut family: Option<Family> = None;
    let mut p = None;
    let mut phi = None;
    let mut gamma = None;
    let mut config: Option<BoostConfig> = None;
    let mut features: Vec<FeatureSpec> = Vec::new();

    let mut enc_parts: Vec<Option<EncParts>> = Vec::new();
    let mut blocks: Vec<BlockParts> = Vec::new();
    let mut have_transforms = false;
    let mut mean_trees: Option<Vec<DecisionTree>> = None;
    let mut prob_trees: Option<Vec<DecisionTree>> = None;
    let mut current_ensemble: Option<(String, Vec<DecisionTree>, usize)> = None;
    let mut current_tree: Option<(Vec<TreeNode>, usize)> = None;
    let mut saw_end = false;

    struct EncParts {
        seed: u64,
        buckets: usize,
        prior: f64,
        edges: Vec<f64>,
        labels: Vec<String>,
        counts: Vec<Vec<u32>>,
        totals: Vec<u32>,
    }

    struct BlockParts {
        block: Option<CompositionBlock>,
        derived: Vec<String>,
        contrast_rows: Vec<Vec<f64>>,
        contrast_expected: usize,
        ppca: Option<(usize, usize, f64, Vec<f64>)>,
        ppca_rows: Vec<Vec<f64>>,
    }

    let finish_tree =
        |ens: &mut Option<(String, Vec<DecisionTree>, usize)>,
         tree: &mut Option<(Vec<TreeNode>, usize)>,
         line: usize|
         -> Result<(), ModelIoError> {
            if let Some((nodes, expected)) = tree.take() {
                if nodes.len() != expected {
                    return Err(syntax(
                        line,
                        format!("tree declared {expected} nodes, found {}", nodes.len()),
                    ));
                }
                ens.as_mut()
                    .ok_or_else(|| syntax(line, "tree outside ensemble"))?
                    .1
                    .push(DecisionTree::from_nodes(nodes));
            }
            Ok(())
        };
    let finish_ensemble = |ens: &mut Option<(String, Vec<DecisionTree>, usize)>,
                           mean: &mut Option<Vec<DecisionTree>>,
                           prob: &mut Option<Vec<DecisionTree>>,
                           line: usize|
     -> Result<(), ModelIoError> {
        if let Some((label, trees, expected)) = ens.take() {
            if trees.len() != expected {
                return Err(syntax(
                    line,
                    format!("ensemble declared {expected} trees, found {}", trees.len()),
                ));
            }
            match label.as_str() {
                "mean" => *mean = Some(trees),
                "prob" => *prob = Some(trees),
                other => return Err(syntax(line, format!("unknown ensemble {other:?}"))),
            }
        }
        Ok(())
    };

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let toks = tokens(line, line_no)?;
        let mut f = FieldParser::new(&toks, line_no);
        match f.str()? {
            "family" => {
                let name = f.str()?;
                family = Some(
                    Family::parse(name)
                        .ok_or_else(|| syntax(line_no, format!("unknown family {name:?}")))?,
                );
            }
            "p" => p = Some(f.f64()?),
            "phi" => phi = Some(f.f64()?),
            "gamma" => gamma = Some(f.f64()?),
            "config" => {
                config = Some(BoostConfig {
                    n_trees: f.usize()?,
                    learning_rate: f.f64()?,
                    l2_lambda: f.f64()?,
                    max_depth: f.usize()?,
                    min_samples_leaf: f.usize()?,
                    hessian_floor: f.f64()?,
                    max_leaf: f.f64()?,
                });
            }
            "features" => {
                let n = f.usize()?;
                features.reserve(n);
                enc_parts.resize_with(n, || None);
            }
            "feature" => {
                let i = f.usize()?;
                if i != features.len() {
                    return Err(syntax(line_no, "feature records out of order"));
                }
                let kind = f.str()?;
                let name = f.str()?.to_string();
                features.push(FeatureSpec {
                    name,
                    categorical: match kind {
                        "categorical" => true,
                        "numeric" => false,
                        other => {
                            return Err(syntax(line_no, format!("unknown feature kind {other:?}")))
                        }
                    },
                });
            }
            "encoder" => {
                let i = f.usize()?;
                let parts = EncParts {
                    seed: f.u64()?,
                    buckets: f.usize()?,
                    prior: f.f64()?,
                    edges: Vec::new(),
                    labels: Vec::new(),
                    counts: Vec::new(),
                    totals: Vec::new(),
                };
                *enc_parts
                    .get_mut(i)
                    .ok_or_else(|| syntax(line_no, "encoder index out of range"))? = Some(parts);
            }
            "encoder-edges" => {
                let i = f.usize()?;
                let n = f.usize()?;
                let parts = enc_parts
                    .get_mut(i)
                    .and_then(Option::as_mut)
                    .ok_or_else(|| syntax(line_no, "edges before encoder record"))?;
                for _ in 0..n {
                    parts.edges.push(f.f64()?);
                }
            }
            "encoder-class" => {
                let i = f.usize()?;
                let label = f.str()?.to_string();
                let total = f.u32()?;
                let parts = enc_parts
                    .get_mut(i)
                    .and_then(Option::as_mut)
                    .ok_or_else(|| syntax(line_no, "class before encoder record"))?;
                let mut counts = Vec::with_capacity(parts.buckets);
                for _ in 0..parts.buckets {
                    counts.push(f.u32()?);
                }
                parts.labels.push(label);
                parts.totals.push(total);
                parts.counts.push(counts);
            }
            "transforms" => {
                have_transforms = true;
                let n = f.usize()?;
                blocks.resize_with(n, || BlockParts {
                    block: None,
                    derived: Vec::new(),
                    contrast_rows: Vec::new(),
                    contrast_expected: 0,
                    ppca: None,
                    ppca_rows: Vec::new(),
                });
            }
            "block" => {
                let bi = f.usize()?;
                let name = f.str()?.to_string();
                let closure = f.f64()?;
                let epsilon = f.f64()?;
                let treatment = match f.str()? {
                    "none" => Treatment::None,
                    "alr" => Treatment::Alr { reference: f.usize()? },
                    "clr" => Treatment::Clr,
                    "ilr" => Treatment::Ilr,
                    "clr-ppca" => Treatment::ClrPpca { components: f.usize()? },
                    other => {
                        return Err(syntax(line_no, format!("unknown treatment {other:?}")))
                    }
                };
                let kw = f.str()?;
                if kw != "columns" {
                    return Err(syntax(line_no, "expected 'columns'"));
                }
                let n = f.usize()?;
                let mut columns = Vec::with_capacity(n);
                for _ in 0..n {
                    columns.push(f.str()?.to_string());
                }
                blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?
                    .block = Some(CompositionBlock {
                    name,
                    columns,
                    closure,
                    treatment,
                    epsilon,
                });
            }
            "block-derived" => {
                let bi = f.usize()?;
                let n = f.usize()?;
                let b = blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?;
                for _ in 0..n {
                    b.derived.push(f.str()?.to_string());
                }
            }
            "block-contrast" => {
                let bi = f.usize()?;
                let rows = f.usize()?;
                blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?
                    .contrast_expected = rows;
            }
            "contrast-row" => {
                let bi = f.usize()?;
                let _ri = f.usize()?;
                let b = blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?;
                let mut row = Vec::new();
                while f.pos < toks.len() {
                    row.push(f.f64()?);
                }
                b.contrast_rows.push(row);
            }
            "block-ppca" => {
                let bi = f.usize()?;
                let j = f.usize()?;
                let k = f.usize()?;
                let noise = f.f64()?;
                let mut mean = Vec::with_capacity(j);
                for _ in 0..j {
                    mean.push(f.f64()?);
                }
                blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?
                    .ppca = Some((j, k, noise, mean));
            }
            "ppca-row" => {
                let bi = f.usize()?;
                let _di = f.usize()?;
                let b = blocks
                    .get_mut(bi)
                    .ok_or_else(|| syntax(line_no, "block index out of range"))?;
                let mut row = Vec::new();
                while f.pos < toks.len() {
                    row.push(f.f64()?);
                }
                b.ppca_rows.push(row);
            }
            "ensemble" => {
                finish_tree(&mut current_ensemble, &mut current_tree, line_no)?;
                finish_ensemble(&mut current_ensemble, &mut mean_trees, &mut prob_trees, line_no)?;
                let label = f.str()?.to_string();
                let count = f.usize()?;
                current_ensemble = Some((label, Vec::with_capacity(count), count));
            }
            "tree" => {
                finish_tree(&mut current_ensemble, &mut current_tree, line_no)?;
                let _ti = f.usize()?;
                let nodes = f.usize()?;
                current_tree = Some((Vec::with_capacity(nodes), nodes));
            }
            "node" => {
                let (nodes, _) = current_tree
                    .as_mut()
                    .ok_or_else(|| syntax(line_no, "node outside tree"))?;
                let ni = f.usize()?;
                if ni != nodes.len() {
                    return Err(syntax(line_no, "node records out of order"));
                }
                match f.str()? {
                    "split" => nodes.push(TreeNode::Split {
                        feature: f.usize()?,
                        threshold: f.f64()?,
                        left: f.usize()?,
                        right: f.usize()?,
                        gain: f.f64()?,
                    }),
                    "leaf" => nodes.push(TreeNode::Leaf { value: f.f64()? }),
                    other => return Err(syntax(line_no, format!("unknown node kind {other:?}"))),
                }
            }
            "end" => {
                finish_tree(&mut current_ensemble, &mut current_tree, line_no)?;
                finish_ensemble(&mut current_ensemble, &mut mean_trees, &mut prob_trees, line_no)?;
                saw_end = true;
            }
            other => return Err(syntax(line_no, format!("unknown record {other:?}"))),
        }
    }
    if !saw_end {
        return Err(ModelIoError::Missing("end marker"));
    }

    let encoders_built: Vec<Option<OrderedTsEncoder>> = enc_parts
        .into_iter()
        .map(|opt| {
            opt.map(|e| {
                OrderedTsEncoder::from_parts(
                    e.seed, e.buckets, e.prior, e.edges, e.labels, e.counts, e.totals,
                )
            })
        })
        .collect();
    let encoders = encoders_built;

    let transforms = if have_transforms {
        let mut fitted = Vec::with_capacity(blocks.len());
        for (bi, b) in blocks.into_iter().enumerate() {
            let block = b
                .block
                .ok_or_else(|| syntax(0, format!("missing block record {bi}")))?;
            let contrast = if b.contrast_expected > 0 {
                Some(
                    ContrastMatrix::new(b.contrast_rows)
                        .map_err(|e| syntax(0, format!("block {bi}: {e}")))?,
                )
            } else {
                None
            };
            let ppca = match b.ppca {
                None => None,
                Some((j, k, noise, mean)) => {
                    if b.ppca_rows.len() != j || b.ppca_rows.iter().any(|r| r.len() != k) {
                        return Err(syntax(0, format!("block {bi}: ppca loading shape")));
                    }
                    Some(Ppca {
                        mean,
                        loadings: b.ppca_rows,
                        noise_variance: noise,
                    })
                }
            };
            fitted.push(FittedBlock {
                block,
                contrast,
                ppca,
                derived_names: b.derived,
            });
        }
        Some(FittedTransforms { blocks: fitted })
    } else {
        None
    };

    let family = family.ok_or(ModelIoError::Missing("family"))?;
    Ok(BoostedModel {
        family,
        p: p.ok_or(ModelIoError::Missing("p"))?,
        phi: phi.ok_or(ModelIoError::Missing("phi"))?,
        gamma_infl: gamma,
        config: config.ok_or(ModelIoError::Missing("config"))?,
        features,
        encoders,
        mean_trees: mean_trees.ok_or(ModelIoError::Missing("mean ensemble"))?,
        prob_trees,
        transforms,
    })
}

/// Read a model file.
pub fn load_model(path: &Path) -> Result<BoostedModel, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_str(&text)
}
