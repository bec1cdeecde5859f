//! Network architecture as data: stage wiring, shape inference, parameter
//! accounting and gradient-path depth.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::layers::{ConvSpec, FcSpec};
use crate::tensor::Shape;

/// Per-image input extents `(c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl InputShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn batch(&self, n: usize) -> Shape {
        Shape { n, c: self.c, h: self.h, w: self.w }
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

impl FromStr for InputShape {
    type Err = Error;

    /// Parses `CxHxW`, e.g. `3x32x32`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("input shape `{s}` is not CxHxW")))?;
        match parts[..] {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Self { c, h, w }),
            _ => Err(Error::Config(format!("input shape `{s}` is not CxHxW"))),
        }
    }
}

/// Tunable architecture knobs. `Default` gives the reference network:
/// 6 stages of 64-filter branches, FC 400 → 100, 10 classes on 3×32×32.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub input: InputShape,
    pub stages: usize,
    pub branch_width: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub classes: usize,
    pub ablation: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input: InputShape::new(3, 32, 32),
            stages: 6,
            branch_width: 64,
            fc1: 400,
            fc2: 100,
            classes: 10,
            ablation: false,
        }
    }
}

impl ArchConfig {
    pub const KEYS: [&'static str; 7] = ["input", "stages", "branch_width", "fc1", "fc2", "classes", "ablation"];

    /// Canonical `key = value` text; the checkpoint fingerprint hashes this.
    pub fn canonical_text(&self) -> String {
        format!(
            "input = {}\nstages = {}\nbranch_width = {}\nfc1 = {}\nfc2 = {}\nclasses = {}\nablation = {}\n",
            self.input, self.stages, self.branch_width, self.fc1, self.fc2, self.classes, self.ablation
        )
    }

    /// Overrides fields from architecture keys present in `cfg`; other keys
    /// are left for the caller to validate.
    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.get("input") {
            self.input = v.parse()?;
        }
        if let Some(v) = cfg.value::<usize>("stages")? {
            self.stages = v;
        }
        if let Some(v) = cfg.value::<usize>("branch_width")? {
            self.branch_width = v;
        }
        if let Some(v) = cfg.value::<usize>("fc1")? {
            self.fc1 = v;
        }
        if let Some(v) = cfg.value::<usize>("fc2")? {
            self.fc2 = v;
        }
        if let Some(v) = cfg.value::<usize>("classes")? {
            self.classes = v;
        }
        if let Some(v) = cfg.value::<bool>("ablation")? {
            self.ablation = v;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = FlatConfig::from_text(text)?;
        cfg.reject_unknown(&Self::KEYS)?;
        let mut out = Self::default();
        out.apply(&cfg)?;
        Ok(out)
    }
}

/// One fast-forwarding stage: a three-conv deep branch (3×3 unpadded,
/// 3×3 unpadded, 3×3 padded by 1) and, unless ablated, a parallel unpadded
/// 5×5 branch. Outputs are concatenated deep-first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub in_channels: usize,
    pub branch_width: usize,
    pub deep: [ConvSpec; 3],
    pub ff: Option<ConvSpec>,
}

impl StageSpec {
    pub fn new(in_channels: usize, branch_width: usize, fast_forward: bool) -> Self {
        Self {
            in_channels,
            branch_width,
            deep: [
                ConvSpec::new(3, in_channels, branch_width, 0),
                ConvSpec::new(3, branch_width, branch_width, 0),
                ConvSpec::new(3, branch_width, branch_width, 1),
            ],
            ff: fast_forward.then(|| ConvSpec::new(5, in_channels, branch_width, 0)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branch_width * if self.ff.is_some() { 2 } else { 1 }
    }

    /// Deep-branch extents after each conv, or `None` if any reaches zero.
    pub fn deep_extents(&self, n: usize) -> Option<[usize; 3]> {
        let a = self.deep[0].output_extent(n)?;
        let b = self.deep[1].output_extent(a)?;
        let c = self.deep[2].output_extent(b)?;
        Some([a, b, c])
    }

    pub fn output_extent(&self, n: usize) -> Option<usize> {
        let deep = self.deep_extents(n)?[2];
        match &self.ff {
            Some(ff) if ff.output_extent(n)? != deep => None,
            _ => Some(deep),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvSpec),
    Fc(FcSpec),
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match self {
            LayerKind::Conv(c) => c.param_count(),
            LayerKind::Fc(f) => f.param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub arch: ArchConfig,
    pub stages: Vec<StageSpec>,
    /// FC 1, FC 2 and the output layer.
    pub head: [FcSpec; 3],
}

pub fn deep_name(stage: usize, j: usize) -> String {
    format!("stage{}.deep{}", stage + 1, j + 1)
}

pub fn ff_name(stage: usize) -> String {
    format!("stage{}.ff", stage + 1)
}

pub const HEAD_NAMES: [&str; 3] = ["fc1", "fc2", "fc3"];

/// Reference network for `input` and `num_classes` with `stages` stages.
pub fn build_ffnet(input: InputShape, num_classes: usize, stages: usize, ablation: bool) -> Result<NetworkSpec> {
    NetworkSpec::build(&ArchConfig { input, classes: num_classes, stages, ablation, ..ArchConfig::default() })
}

impl NetworkSpec {
    pub fn build(arch: &ArchConfig) -> Result<Self> {
        let a = arch;
        if a.stages == 0 || a.branch_width == 0 || a.fc1 == 0 || a.fc2 == 0 || a.classes == 0 {
            return Err(Error::Config("stages, branch_width, fc1, fc2 and classes must all be positive".into()));
        }
        if a.input.h != a.input.w {
            return Err(Error::Config(format!("input {} must be square", a.input)));
        }
        let mut stages = Vec::with_capacity(a.stages);
        let mut channels = a.input.c;
        let mut extent = a.input.h;
        for i in 0..a.stages {
            let stage = StageSpec::new(channels, a.branch_width, !a.ablation);
            extent = stage.output_extent(extent).ok_or_else(|| {
                Error::Size(format!(
                    "input {} too small for {} stages: stage {} has no output from a {extent}x{extent} input",
                    a.input,
                    a.stages,
                    i + 1
                ))
            })?;
            channels = stage.out_channels();
            stages.push(stage);
        }
        let flat = channels * extent * extent;
        Ok(Self {
            arch: a.clone(),
            stages,
            head: [FcSpec::new(flat, a.fc1), FcSpec::new(a.fc1, a.fc2), FcSpec::new(a.fc2, a.classes)],
        })
    }

    pub fn input_shape(&self) -> InputShape {
        self.arch.input
    }

    pub fn num_classes(&self) -> usize {
        self.arch.classes
    }

    pub fn is_ablation(&self) -> bool {
        self.arch.ablation
    }

    /// SHA-256 of the canonical architecture text.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.arch.canonical_text().as_bytes()).into()
    }

    /// Every parameterized layer in canonical order.
    pub fn layers(&self) -> Vec<(String, LayerKind)> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            for (j, c) in st.deep.iter().enumerate() {
                out.push((deep_name(i, j), LayerKind::Conv(*c)));
            }
            if let Some(ff) = st.ff {
                out.push((ff_name(i), LayerKind::Conv(ff)));
            }
        }
        for (name, fc) in HEAD_NAMES.iter().zip(&self.head) {
            out.push((name.to_string(), LayerKind::Fc(*fc)));
        }
        out
    }

    pub fn conv_layer_count(&self) -> (usize, usize) {
        let deep = self.stages.len() * 3;
        let ff = self.stages.iter().filter(|s| s.ff.is_some()).count();
        (deep, ff)
    }

    /// Spatial extent entering each stage, followed by the final extent.
    pub fn spatial_trace(&self) -> Vec<usize> {
        let mut extents = vec![self.arch.input.h];
        for st in &self.stages {
            let last = *extents.last().unwrap();
            extents.push(st.output_extent(last).expect("validated at build"));
        }
        extents
    }

    /// Output shape (batch 1) of every node, including concat and flatten.
    pub fn infer_shapes(&self) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        let mut extent = self.arch.input.h;
        for (i, st) in self.stages.iter().enumerate() {
            let deep = st.deep_extents(extent).expect("validated at build");
            for (j, e) in deep.iter().enumerate() {
                out.push((deep_name(i, j), Shape { n: 1, c: st.branch_width, h: *e, w: *e }));
            }
            if let Some(ff) = &st.ff {
                let e = ff.output_extent(extent).expect("validated at build");
                out.push((ff_name(i), Shape { n: 1, c: st.branch_width, h: e, w: e }));
                out.push((format!("stage{}.concat", i + 1), Shape { n: 1, c: st.out_channels(), h: e, w: e }));
            }
            extent = deep[2];
        }
        out.push(("flatten".into(), Shape { n: 1, c: self.head[0].inputs, h: 1, w: 1 }));
        for (name, fc) in HEAD_NAMES.iter().zip(&self.head) {
            out.push((name.to_string(), Shape { n: 1, c: fc.outputs, h: 1, w: 1 }));
        }
        out
    }

    pub fn count_params(&self) -> ParamCount {
        let per_layer: Vec<(String, usize)> =
            self.layers().into_iter().map(|(name, kind)| (name, kind.param_count())).collect();
        let total = per_layer.iter().map(|(_, c)| c).sum();
        ParamCount { per_layer, total }
    }

    /// Fewest and most parameterized layers on any input → loss path.
    pub fn gradient_path_depth(&self) -> PathDepth {
        // Layer-level DAG: node 0 is the input; every stage adds its branch
        // nodes and a merge node; the head is a chain. Edge weight is 1 when
        // the edge enters a parameterized layer.
        let mut shortest = vec![0usize];
        let mut longest = vec![0usize];
        let mut edges: Vec<(usize, usize, usize)> = Vec::new();
        let mut push = |from: usize, weight: usize, edges: &mut Vec<(usize, usize, usize)>| {
            let to = shortest.len();
            shortest.push(usize::MAX);
            longest.push(0);
            edges.push((from, to, weight));
            to
        };
        let mut cur = 0;
        for st in &self.stages {
            let mut tail = cur;
            for _ in &st.deep {
                tail = push(tail, 1, &mut edges);
            }
            let ff = st.ff.map(|_| push(cur, 1, &mut edges));
            let merge = push(tail, 0, &mut edges);
            if let Some(ff) = ff {
                edges.push((ff, merge, 0));
            }
            cur = merge;
        }
        for _ in &self.head {
            cur = push(cur, 1, &mut edges);
        }
        // Nodes are created in topological order; sorting edges by target
        // relaxes every predecessor before its successors.
        edges.sort_by_key(|e| e.1);
        for (from, to, w) in edges {
            shortest[to] = shortest[to].min(shortest[from] + w);
            longest[to] = longest[to].max(longest[from] + w);
        }
        PathDepth { shortest: shortest[cur], longest: longest[cur] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCount {
    /// Storage at 4 bytes per parameter.
    pub fn size_bytes(&self) -> usize {
        self.total * 4
    }

    pub fn size_mb(&self) -> f64 {
        self.size_bytes() as f64 / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathDepth {
    pub shortest: usize,
    pub longest: usize,
}
