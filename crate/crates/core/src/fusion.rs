//! Encoder and decoder stages that couple the stroke and point graphs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{segment_ids, SketchBatch};
use crate::dgraph::{dgraph_init, interpolate_dense, DDown, DGraph, DGraphUpdate, DUp, NFusionDense, TemporalEncoder};
use crate::nn::{Linear};
use crate::sgraph::{SDown, SGraph, SGraphUpdate, SUp, SampleMap, StrokeEncoder, UpWeights};
use crate::tensor::{Groups, ParamStore, Tape, TensorError, Var};

/// Which architectural blocks are present: stroke graph, stroke sampling,
/// point graph, point sampling, information fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchToggles {
    pub sgraph: bool,
    pub s_sample: bool,
    pub dgraph: bool,
    pub d_sample: bool,
    pub fusion: bool,
}

impl ArchToggles {
    pub const FULL: Self = Self {
        sgraph: true,
        s_sample: true,
        dgraph: true,
        d_sample: true,
        fusion: true,
    };

    pub fn validate(&self) -> Result<(), String> {
        if !self.sgraph && !self.dgraph {
            return Err("at least one of SG and DG is required".into());
        }
        if self.s_sample && !self.sgraph {
            return Err("SS requires SG".into());
        }
        if self.d_sample && !self.dgraph {
            return Err("PS requires DG".into());
        }
        if self.fusion && !(self.sgraph && self.dgraph) {
            return Err("IF requires both SG and DG".into());
        }
        Ok(())
    }
}

impl fmt::Display for ArchToggles {
    /// `(SG + SS) + (DG + PS) + IF` style labels.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.sgraph {
            parts.push(if self.s_sample { "(SG + SS)" } else { "SG" });
        }
        if self.dgraph {
            parts.push(if self.d_sample { "(DG + PS)" } else { "DG" });
        }
        if self.fusion {
            parts.push("IF");
        }
        f.write_str(&parts.join(" + "))
    }
}

impl FromStr for ArchToggles {
    type Err = String;

    /// Parses a `+`-separated set such as `SG+SS+DG` (parentheses and
    /// spaces ignored).
    fn from_str(s: &str) -> Result<Self, String> {
        let mut t = ArchToggles {
            sgraph: false,
            s_sample: false,
            dgraph: false,
            d_sample: false,
            fusion: false,
        };
        let cleaned: String = s.chars().filter(|c| !matches!(c, '(' | ')' | ' ')).collect();
        for part in cleaned.split('+').filter(|p| !p.is_empty()) {
            match part.to_ascii_uppercase().as_str() {
                "SG" => t.sgraph = true,
                "SS" => t.s_sample = true,
                "DG" => t.dgraph = true,
                "PS" => t.d_sample = true,
                "IF" => t.fusion = true,
                "FULL" => t = Self::FULL,
                other => return Err(format!("unknown module {other:?}")),
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// Effective-information manipulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    /// Reduces the model to the plain point graph: no stroke graph, no
    /// fusion, no sampling of either graph.
    pub exclude_sgraph: bool,
    /// Stroke-graph updates see only the node itself.
    pub disable_inter_stroke_edges: bool,
    /// Points of each stroke are shuffled before temporal encoding.
    pub random_temporal_neighborhoods: bool,
    /// Resampling keeps the input's point density (a preprocessing switch;
    /// carried here so one flag set describes a run).
    pub preserve_point_frequency: bool,
}

impl AblationFlags {
    pub fn apply(&self, t: ArchToggles) -> ArchToggles {
        if self.exclude_sgraph {
            ArchToggles {
                sgraph: false,
                s_sample: false,
                d_sample: false,
                fusion: false,
                dgraph: true,
            }
        } else {
            t
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    /// Stroke feature width entering each stage, then the final width.
    pub sparse_widths: Vec<usize>,
    /// Point feature width after each stage's updates, then the final width.
    pub dense_widths: Vec<usize>,
    pub stroke_hidden: usize,
    pub k_sparse: usize,
    pub k_dense: usize,
    pub d_stride: usize,
    pub toggles: ArchToggles,
    pub ablation: AblationFlags,
    /// Width of the time embedding injected at every stage input
    /// (generation only).
    pub time_dim: Option<usize>,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            sparse_widths: vec![128, 192, 256],
            dense_widths: vec![64, 128, 256],
            stroke_hidden: 64,
            k_sparse: 3,
            k_dense: 10,
            d_stride: 2,
            toggles: ArchToggles::FULL,
            ablation: AblationFlags::default(),
            time_dim: None,
        }
    }
}

impl StageConfig {
    pub fn num_stages(&self) -> usize {
        self.sparse_widths.len().saturating_sub(1)
    }

    /// Toggles after the ablation flags are applied.
    pub fn effective(&self) -> ArchToggles {
        self.ablation.apply(self.toggles)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sparse_widths.len() < 2 || self.sparse_widths.len() != self.dense_widths.len() {
            return Err("need ≥ 1 stage and equally many sparse and dense widths".into());
        }
        if self.sparse_widths.iter().chain(&self.dense_widths).any(|&w| w == 0) || self.stroke_hidden == 0 {
            return Err("widths must be positive".into());
        }
        if self.k_sparse == 0 || self.k_dense == 0 {
            return Err("neighbour counts must be positive".into());
        }
        if self.d_stride < 2 {
            return Err("d_stride must be at least 2".into());
        }
        if self.time_dim.is_some_and(|t| t == 0 || t % 2 == 1) {
            return Err("time embedding width must be even".into());
        }
        self.effective().validate()
    }

    /// Width of [`global_feature`].
    pub fn global_width(&self) -> usize {
        let t = self.effective();
        let n = self.num_stages();
        (if t.sgraph { self.sparse_widths[n] } else { 0 }) + (if t.dgraph { self.dense_widths[n] } else { 0 })
    }
}

/// Appends each point's stroke feature and mixes.
#[derive(Debug, Clone)]
pub struct FuseSToD {
    mix: Linear,
}

impl FuseSToD {
    pub fn new(store: &mut ParamStore, name: &str, d_dim: usize, s_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mix: Linear::new(store, name, d_dim + s_dim, d_dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, s: &SGraph, d: &DGraph) -> Result<DGraph, TensorError> {
        if s.counts != d.counts {
            return Err(crate::tensor::shape_err("fuse_s_to_d", "stroke layouts differ"));
        }
        let rep = tape.gather_rows(s.feats, d.stroke_of_point())?;
        let cat = tape.concat_cols(&[d.feats, rep])?;
        let feats = self.mix.forward_act(tape, cat)?;
        Ok(DGraph { feats, ..d.clone() })
    }
}

/// Temporal encoding of each stroke's points, pooled and appended to the
/// stroke feature.
#[derive(Debug, Clone)]
pub struct FuseDToS {
    temporal: TemporalEncoder,
    mix: Linear,
}

impl FuseDToS {
    pub fn new(store: &mut ParamStore, name: &str, s_dim: usize, d_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            temporal: TemporalEncoder::new(store, &format!("{name}.temporal"), d_dim, d_dim, rng),
            mix: Linear::new(store, &format!("{name}.mix"), s_dim + d_dim, s_dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, d: &DGraph, s: &SGraph, shuffle: Option<&mut ChaCha8Rng>) -> Result<SGraph, TensorError> {
        if s.counts != d.counts {
            return Err(crate::tensor::shape_err("fuse_d_to_s", "stroke layouts differ"));
        }
        let enc = self.temporal.forward(tape, d, shuffle)?;
        let pooled = tape.max_gather(enc, &Groups::contiguous(&d.lens))?;
        let cat = tape.concat_cols(&[s.feats, pooled])?;
        let feats = self.mix.forward_act(tape, cat)?;
        Ok(SGraph { feats, ..s.clone() })
    }
}

/// Adds a per-sketch time projection to every row of a graph.
fn add_time(tape: &mut Tape, x: Var, proj: &Linear, temb: Var, row_sketch: Vec<usize>) -> Result<Var, TensorError> {
    let p = proj.forward(tape, temb)?;
    let rows = tape.gather_rows(p, row_sketch)?;
    tape.add(x, rows)
}

#[derive(Debug, Clone)]
enum Resize {
    Sample(DDown),
    Linear(Linear),
}

#[derive(Debug, Clone)]
struct EncoderStage {
    s_upd: Option<[SGraphUpdate; 2]>,
    d_upd: Option<[DGraphUpdate; 2]>,
    s_to_d: Option<FuseSToD>,
    d_to_s: Option<FuseDToS>,
    d_down: Option<Resize>,
    s_down: Option<SDown>,
    s_linear: Option<Linear>,
    d_fuse: Option<NFusionDense>,
    time_s: Option<Linear>,
    time_d: Option<Linear>,
}

/// Values an encoder stage hands to its mirrored decoder stage.
#[derive(Debug, Clone)]
pub struct StageSkip {
    pub s: Option<SGraph>,
    pub d_pre: Option<DGraph>,
    pub d_mid: Option<DGraph>,
    pub map: Option<SampleMap>,
    pub up: Option<UpWeights>,
}

/// Graphs after the last encoder stage.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub s: Option<SGraph>,
    pub d: Option<DGraph>,
    pub skips: Vec<StageSkip>,
}

/// Stroke encoding followed by a stack of encoder stages, each running
/// stroke updates ×2 → point updates ×2 → fusion both ways → point
/// down-sampling → stroke down-sampling (which also coarsens the points).
#[derive(Debug, Clone)]
pub struct SdEncoder {
    pub cfg: StageConfig,
    stroke_enc: Option<StrokeEncoder>,
    stages: Vec<EncoderStage>,
}

impl SdEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: StageConfig, rng: &mut impl Rng) -> Self {
        let t = cfg.effective();
        let (sw, dw) = (&cfg.sparse_widths, &cfg.dense_widths);
        let stroke_enc = t
            .sgraph
            .then(|| StrokeEncoder::new(store, &format!("{name}.stroke_enc"), cfg.stroke_hidden, sw[0], rng));
        let mut stages = Vec::new();
        for e in 0..cfg.num_stages() {
            let p = format!("{name}.stage{e}");
            let (cs, cs_out) = (sw[e], sw[e + 1]);
            let cd_in = if e == 0 { 2 } else { dw[e] };
            let (cd, cd_out) = (dw[e], dw[e + 1]);
            let time = |store: &mut ParamStore, rng: &mut _, tag: &str, w: usize, on: bool| {
                cfg.time_dim
                    .filter(|_| on)
                    .map(|td| Linear::new(store, &format!("{p}.time_{tag}"), td, w, true, rng))
            };
            stages.push(EncoderStage {
                time_s: time(store, rng, "s", cs, t.sgraph),
                time_d: time(store, rng, "d", cd_in, t.dgraph),
                s_upd: t.sgraph.then(|| {
                    [
                        SGraphUpdate::new(store, &format!("{p}.s_upd0"), cs, cs, rng),
                        SGraphUpdate::new(store, &format!("{p}.s_upd1"), cs, cs, rng),
                    ]
                }),
                d_upd: t.dgraph.then(|| {
                    [
                        DGraphUpdate::new(store, &format!("{p}.d_upd0"), cd_in, cd, rng),
                        DGraphUpdate::new(store, &format!("{p}.d_upd1"), cd, cd, rng),
                    ]
                }),
                s_to_d: t.fusion.then(|| FuseSToD::new(store, &format!("{p}.s_to_d"), cd, cs, rng)),
                d_to_s: t.fusion.then(|| FuseDToS::new(store, &format!("{p}.d_to_s"), cs, cd, rng)),
                d_down: t.dgraph.then(|| {
                    if t.d_sample {
                        Resize::Sample(DDown::new(store, &format!("{p}.d_down"), cd, cd_out, cfg.d_stride, rng))
                    } else {
                        Resize::Linear(Linear::new(store, &format!("{p}.d_proj"), cd, cd_out, true, rng))
                    }
                }),
                s_down: (t.sgraph && t.s_sample).then(|| SDown::new(store, &format!("{p}.s_down"), cs, cs_out, rng)),
                s_linear: (t.sgraph && !t.s_sample).then(|| Linear::new(store, &format!("{p}.s_proj"), cs, cs_out, true, rng)),
                d_fuse: (t.s_sample && t.dgraph).then(|| NFusionDense::new(store, &format!("{p}.d_fuse"), cd_out, cd_out, rng)),
            });
        }
        Self { cfg, stroke_enc, stages }
    }

    /// `temb` is a `B × time_dim` matrix of per-sketch time embeddings
    /// (required iff the config has a time width).
    pub fn forward(&self, tape: &mut Tape, batch: &SketchBatch, temb: Option<Var>, rng: &mut ChaCha8Rng) -> Result<Encoded, TensorError> {
        let cfg = &self.cfg;
        let t = cfg.effective();
        let d0 = dgraph_init(tape, batch)?;
        let mut s = match &self.stroke_enc {
            Some(enc) => Some(enc.forward(tape, d0.feats, &batch.lens, &batch.counts)?),
            None => None,
        };
        let mut d = t.dgraph.then_some(d0);
        let mut skips = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            if let (Some(temb), Some(g)) = (temb, s.as_mut()) {
                if let Some(p) = &st.time_s {
                    g.feats = add_time(tape, g.feats, p, temb, segment_ids(&g.counts))?;
                }
            }
            if let (Some(temb), Some(g)) = (temb, d.as_mut()) {
                if let Some(p) = &st.time_d {
                    g.feats = add_time(tape, g.feats, p, temb, g.sketch_of_point())?;
                }
            }
            if let (Some(g), Some(upd)) = (s.as_mut(), &st.s_upd) {
                let inter = !cfg.ablation.disable_inter_stroke_edges;
                for u in upd {
                    *g = u.forward(tape, g, cfg.k_sparse, inter)?;
                }
            }
            if let (Some(g), Some(upd)) = (d.as_mut(), &st.d_upd) {
                for u in upd {
                    *g = u.forward(tape, g, cfg.k_dense)?;
                }
            }
            if let (Some(sg), Some(dg), Some(f1), Some(f2)) = (s.as_mut(), d.as_mut(), &st.s_to_d, &st.d_to_s) {
                *dg = f1.forward(tape, sg, dg)?;
                let shuffle = cfg.ablation.random_temporal_neighborhoods.then_some(&mut *rng);
                *sg = f2.forward(tape, dg, sg, shuffle)?;
            }
            let d_pre = d.clone();
            if let (Some(dg), Some(r)) = (d.as_mut(), &st.d_down) {
                *dg = match r {
                    Resize::Sample(down) => down.forward(tape, dg)?,
                    Resize::Linear(l) => DGraph {
                        feats: l.forward_act(tape, dg.feats)?,
                        ..dg.clone()
                    },
                };
            }
            let d_mid = d.clone();
            let s_pre = s.clone();
            let mut map = None;
            let mut up = None;
            if let Some(sg) = s.as_mut() {
                if let Some(down) = &st.s_down {
                    let m = SampleMap::select(sg, cfg.k_sparse)?;
                    if let (Some(dg), Some(fuse)) = (d.as_mut(), &st.d_fuse) {
                        *dg = fuse.forward(tape, dg, &m)?;
                    }
                    *sg = down.forward(tape, sg, &m)?;
                    up = Some(m.up_weights());
                    map = Some(m);
                } else if let Some(l) = &st.s_linear {
                    let feats = l.forward_act(tape, sg.feats)?;
                    *sg = SGraph {
                        coords: tape.value(feats).data().to_vec(),
                        coord_dim: l.out_dim,
                        feats,
                        counts: sg.counts.clone(),
                    };
                }
            }
            skips.push(StageSkip {
                s: s_pre,
                d_pre,
                d_mid,
                map,
                up,
            });
        }
        Ok(Encoded { s, d, skips })
    }
}

/// Max over each sketch's stroke nodes concatenated with the max over its
/// points: one `1 × (C_s + C_d)` row per sketch.
pub fn global_feature(tape: &mut Tape, s: Option<&SGraph>, d: Option<&DGraph>) -> Result<Var, TensorError> {
    let mut parts = Vec::with_capacity(2);
    if let Some(s) = s {
        parts.push(tape.max_gather(s.feats, &Groups::contiguous(&s.counts))?);
    }
    if let Some(d) = d {
        parts.push(tape.max_gather(d.feats, &Groups::contiguous(&d.point_counts()))?);
    }
    match parts.len() {
        0 => Err(TensorError::EmptyReduction("global_feature")),
        1 => Ok(parts[0]),
        _ => tape.concat_cols(&parts),
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    time_s: Option<Linear>,
    time_d: Option<Linear>,
    s_up: Option<SUp>,
    s_mix: Option<Linear>,
    d_interp_mix: Option<Linear>,
    d_up: Option<DUp>,
    d_mix: Option<Linear>,
    s_upd: Option<SGraphUpdate>,
    d_upd: Option<DGraphUpdate>,
    s_to_d: Option<FuseSToD>,
}

/// Mirrors an [`SdEncoder`]: per stage (deepest first) stroke up-sampling
/// with skip → point up-sampling with skip → one update of each graph →
/// stroke-to-point fusion. Ends with [`pointwise_features`].
#[derive(Debug, Clone)]
pub struct SdDecoder {
    stages: Vec<DecoderStage>,
    final_fuse: Option<FuseSToD>,
    head: Linear,
}

impl SdDecoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &StageConfig, out_dim: usize, rng: &mut impl Rng) -> Self {
        let t = cfg.effective();
        let (sw, dw) = (&cfg.sparse_widths, &cfg.dense_widths);
        let mut stages = Vec::new();
        for e in 0..cfg.num_stages() {
            let p = format!("{name}.stage{e}");
            let (cs, cs_out, cd, cd_out) = (sw[e], sw[e + 1], dw[e], dw[e + 1]);
            let time = |store: &mut ParamStore, rng: &mut _, tag: &str, w: usize, on: bool| {
                cfg.time_dim
                    .filter(|_| on)
                    .map(|td| Linear::new(store, &format!("{p}.time_{tag}"), td, w, true, rng))
            };
            stages.push(DecoderStage {
                time_s: time(store, rng, "s", cs_out, t.sgraph),
                time_d: time(store, rng, "d", cd_out, t.dgraph),
                s_up: (t.sgraph && t.s_sample).then(|| SUp::new(store, &format!("{p}.s_up"), cs_out, cs, cs, rng)),
                s_mix: (t.sgraph && !t.s_sample).then(|| Linear::new(store, &format!("{p}.s_mix"), cs_out + cs, cs, true, rng)),
                d_interp_mix: t.dgraph.then(|| Linear::new(store, &format!("{p}.d_interp"), 2 * cd_out, cd_out, true, rng)),
                d_up: (t.dgraph && t.d_sample).then(|| DUp::new(store, &format!("{p}.d_up"), cd_out, cd, cd, cfg.d_stride, rng)),
                d_mix: (t.dgraph && !t.d_sample).then(|| Linear::new(store, &format!("{p}.d_mix"), cd_out + cd, cd, true, rng)),
                s_upd: t.sgraph.then(|| SGraphUpdate::new(store, &format!("{p}.s_upd"), cs, cs, rng)),
                d_upd: t.dgraph.then(|| DGraphUpdate::new(store, &format!("{p}.d_upd"), cd, cd, rng)),
                s_to_d: t.fusion.then(|| FuseSToD::new(store, &format!("{p}.s_to_d"), cd, cs, rng)),
            });
        }
        Self {
            stages,
            final_fuse: t.fusion.then(|| FuseSToD::new(store, &format!("{name}.final_fuse"), dw[0], sw[0], rng)),
            head: Linear::new(store, &format!("{name}.head"), dw[0], out_dim, true, rng),
        }
    }

    /// Returns one `out_dim` row per point, in the batch's packed order.
    pub fn forward(&self, tape: &mut Tape, enc: &Encoded, cfg: &StageConfig, temb: Option<Var>) -> Result<Var, TensorError> {
        let mut s = enc.s.clone();
        let mut d = enc.d.clone();
        for (st, skip) in self.stages.iter().zip(&enc.skips).rev() {
            if let (Some(temb), Some(g), Some(p)) = (temb, s.as_mut(), &st.time_s) {
                g.feats = add_time(tape, g.feats, p, temb, segment_ids(&g.counts))?;
            }
            if let (Some(temb), Some(g), Some(p)) = (temb, d.as_mut(), &st.time_d) {
                g.feats = add_time(tape, g.feats, p, temb, g.sketch_of_point())?;
            }
            if let (Some(sg), Some(sk)) = (s.as_mut(), &skip.s) {
                *sg = match (&st.s_up, &st.s_mix, &skip.up) {
                    (Some(up), _, Some(w)) => up.forward(tape, sg, sk, w)?,
                    (None, Some(mix), _) => {
                        let cat = tape.concat_cols(&[sg.feats, sk.feats])?;
                        SGraph {
                            feats: mix.forward_act(tape, cat)?,
                            ..sk.clone()
                        }
                    }
                    _ => return Err(crate::tensor::shape_err("sd_decoder", "missing stroke sample map")),
                };
            }
            if let (Some(dg), Some(mid), Some(pre)) = (d.as_mut(), &skip.d_mid, &skip.d_pre) {
                // Back to the stroke layout before stroke down-sampling.
                let interp = match &skip.up {
                    Some(w) => interpolate_dense(tape, dg, &mid.lens, w)?,
                    None => dg.feats,
                };
                let cat = tape.concat_cols(&[interp, mid.feats])?;
                let mixer = st.d_interp_mix.as_ref().expect("dense decoder stage");
                let at_mid = DGraph {
                    feats: mixer.forward_act(tape, cat)?,
                    ..mid.clone()
                };
                *dg = match (&st.d_up, &st.d_mix) {
                    (Some(up), _) => up.forward(tape, &at_mid, pre)?,
                    (None, Some(mix)) => {
                        let cat = tape.concat_cols(&[at_mid.feats, pre.feats])?;
                        DGraph {
                            feats: mix.forward_act(tape, cat)?,
                            ..pre.clone()
                        }
                    }
                    _ => unreachable!("dense stage has an up-sampler"),
                };
            }
            if let (Some(g), Some(u)) = (s.as_mut(), &st.s_upd) {
                *g = u.forward(tape, g, cfg.k_sparse, !cfg.ablation.disable_inter_stroke_edges)?;
            }
            if let (Some(g), Some(u)) = (d.as_mut(), &st.d_upd) {
                *g = u.forward(tape, g, cfg.k_dense)?;
            }
            if let (Some(sg), Some(dg), Some(f)) = (s.as_ref(), d.as_mut(), &st.s_to_d) {
                *dg = f.forward(tape, sg, dg)?;
            }
        }
        let d = d.ok_or(TensorError::EmptyReduction("decoder without point graph"))?;
        pointwise_features(tape, s.as_ref(), &d, self.final_fuse.as_ref(), &self.head)
    }
}

/// Stroke-to-point fusion (when available) followed by a linear head.
pub fn pointwise_features(
    tape: &mut Tape,
    s: Option<&SGraph>,
    d: &DGraph,
    fuse: Option<&FuseSToD>,
    head: &Linear,
) -> Result<Var, TensorError> {
    let d = match (s, fuse) {
        (Some(s), Some(f)) => f.forward(tape, s, d)?,
        _ => d.clone(),
    };
    head.forward(tape, d.feats)
}
