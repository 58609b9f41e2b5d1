use serde::{Deserialize, Serialize};

use super::{neighborhood_maxpool, vector_attention, MlpSpec, SharedMlp};
use crate::error::{shape_err, Result};
use crate::geometry::{NeighborIndex, Point};
use crate::params::{Builder, Ctx};
use crate::tensor::{Tape, Tensor, Var};

/// Which attention heads a layer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    Both,
    GeometricOnly,
    LatentOnly,
    /// Both heads replaced by a channel-wise max over the neighbourhood.
    MlpPool,
}

impl HeadMode {
    fn uses_geometric(self) -> bool {
        !matches!(self, HeadMode::LatentOnly)
    }

    fn uses_latent(self) -> bool {
        !matches!(self, HeadMode::GeometricOnly)
    }

    fn attends(self) -> bool {
        !matches!(self, HeadMode::MlpPool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeLattoConfig {
    pub dim: usize,
    /// Channels sharing one attention score (1 = full vector attention).
    pub group_size: usize,
    pub heads: HeadMode,
    pub transform: MlpSpec,
}

/// Two-headed geometric/latent local attention layer.
///
/// Transforms that a head mask makes unnecessary are not created.
#[derive(Clone, Debug)]
pub struct GeLatto {
    pub config: GeLattoConfig,
    pub latent_centroid: SharedMlp,
    pub latent_relative: SharedMlp,
    pub latent_neighbor: Option<SharedMlp>,
    pub geo_centroid: SharedMlp,
    pub geo_relative: SharedMlp,
    pub geo_neighbor: SharedMlp,
    pub latent_to_geo: SharedMlp,
    pub geo_to_latent: Option<SharedMlp>,
    pub geo_out: Option<SharedMlp>,
    pub latent_out: Option<SharedMlp>,
    pub geo_score: Option<SharedMlp>,
    pub latent_score: Option<SharedMlp>,
    pub mixer: SharedMlp,
}

/// Positions and features seen by one layer.
pub struct GroupedInput<'a> {
    pub centroid_positions: &'a [Point],
    pub parent_positions: &'a [Point],
    pub neighbors: &'a NeighborIndex,
    /// `[M, D]`
    pub centroid_features: Var,
    /// `[N, D]`
    pub parent_features: Var,
}

pub struct GeLattoOutput {
    /// `[M, D]`
    pub features: Var,
    /// Post-softmax geometric scores `[M, K, D]`, when that head attends.
    pub geometric_scores: Option<Var>,
    /// Post-softmax latent scores `[M, K, D]`, when that head attends.
    pub latent_scores: Option<Var>,
}

impl GeLatto {
    pub fn new(b: &mut Builder, name: &str, config: GeLattoConfig) -> Result<Self> {
        let d = config.dim;
        if config.group_size == 0 || d % config.group_size != 0 {
            return shape_err(format!("group size {} does not divide width {d}", config.group_size));
        }
        let heads = config.heads;
        let t = config.transform;
        let mut b = b.child(name);
        let mut mlp = |name: &str, din: usize, dout: usize| SharedMlp::new(&mut b, name, din, dout, t);
        let scores = d / config.group_size;
        let latent = heads.uses_latent();
        let geometric = heads.uses_geometric();
        Ok(Self {
            latent_centroid: mlp("latent_centroid", d, d),
            latent_relative: mlp("latent_relative", d, d),
            latent_neighbor: latent.then(|| mlp("latent_neighbor", d, d)),
            geo_centroid: mlp("geo_centroid", 3, d),
            geo_relative: mlp("geo_relative", 3, d),
            geo_neighbor: mlp("geo_neighbor", 3, d),
            latent_to_geo: mlp("latent_to_geo", d, d),
            geo_to_latent: latent.then(|| mlp("geo_to_latent", d, d)),
            geo_out: geometric.then(|| mlp("geo_out", d, d)),
            latent_out: latent.then(|| mlp("latent_out", d, d)),
            geo_score: (geometric && heads.attends()).then(|| mlp("geo_score", d, scores)),
            latent_score: (latent && heads.attends()).then(|| mlp("latent_score", d, scores)),
            mixer: {
                let din = if geometric && latent { 2 * d } else { d };
                mlp("mixer", din, d)
            },
            config,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, input: &GroupedInput) -> Result<GeLattoOutput> {
        let d = self.config.dim;
        let nb = input.neighbors;
        let (m, k) = (nb.len(), nb.k);
        let rs = ctx.tape.shape(input.centroid_features).to_vec();
        let ps = ctx.tape.shape(input.parent_features).to_vec();
        if rs != [m, d] || ps != [input.parent_positions.len(), d] || input.centroid_positions.len() != m {
            return shape_err(format!(
                "layer of width {d} with {m} centroids got centroid features {rs:?} and parent features {ps:?}"
            ));
        }

        let (centroid_pos, neighbor_pos, relative_pos) = geometry_tensors(&mut ctx.tape, input)?;
        let neighbor_feat = ctx.tape.gather_rows(input.parent_features, &nb.neighbors, &[m, k])?;
        let centroid_rep = ctx.tape.repeat_rows(input.centroid_features, k)?;

        // H = f_r(Kr) + f_rs(S - Kr); f_r is pointwise, so it is applied before replication.
        let a = self.latent_centroid.forward(ctx, input.centroid_features)?;
        let a = ctx.tape.repeat_rows(a, k)?;
        let diff = ctx.tape.sub(neighbor_feat, centroid_rep)?;
        let b = self.latent_relative.forward(ctx, diff)?;
        let latent = ctx.tape.add(a, b)?;

        // G = f_p(Kp) + f_pq(Q - Kp) + f_q(Q) + f_hg(H)
        let p = self.geo_centroid.forward(ctx, centroid_pos)?;
        let p = ctx.tape.repeat_rows(p, k)?;
        let pq = self.geo_relative.forward(ctx, relative_pos)?;
        let q = self.geo_neighbor.forward(ctx, neighbor_pos)?;
        let hg = self.latent_to_geo.forward(ctx, latent)?;
        let g = ctx.tape.add(p, pq)?;
        let g = ctx.tape.add(g, q)?;
        let geometric = ctx.tape.add(g, hg)?;

        let heads = self.config.heads;
        let geo_proj = match &self.geo_out {
            Some(f) => Some(f.forward(ctx, geometric)?),
            None => None,
        };
        let latent_proj = match (&self.latent_neighbor, &self.geo_to_latent, &self.latent_out) {
            (Some(fs), Some(fgh), Some(fhh)) => {
                // H' = H + f_s(S) + f_gh(G)
                let s = fs.forward(ctx, neighbor_feat)?;
                let gh = fgh.forward(ctx, geometric)?;
                let h = ctx.tape.add(latent, s)?;
                let h = ctx.tape.add(h, gh)?;
                Some(fhh.forward(ctx, h)?)
            }
            _ => None,
        };

        let group = self.config.group_size;
        let mut parts = Vec::with_capacity(2);
        let mut geometric_scores = None;
        let mut latent_scores = None;
        if let Some(gv) = geo_proj {
            if let Some(scorer) = &self.geo_score {
                let (agg, s) = vector_attention(ctx, gv, scorer, group)?;
                geometric_scores = Some(s);
                parts.push(agg);
            } else {
                parts.push(neighborhood_maxpool(ctx, gv)?);
            }
        }
        if let Some(hv) = latent_proj {
            if let Some(scorer) = &self.latent_score {
                let (agg, s) = vector_attention(ctx, hv, scorer, group)?;
                latent_scores = Some(s);
                parts.push(agg);
            } else {
                parts.push(neighborhood_maxpool(ctx, hv)?);
            }
        }
        debug_assert_eq!(parts.len(), if heads == HeadMode::Both || heads == HeadMode::MlpPool { 2 } else { 1 });
        let joined = if parts.len() == 1 { parts[0] } else { ctx.tape.concat(&parts)? };
        let features = self.mixer.forward(ctx, joined)?;
        Ok(GeLattoOutput { features, geometric_scores, latent_scores })
    }
}

/// Constant tensors `p: [M, 3]`, `Q: [M, K, 3]` and `Q - Kp: [M, K, 3]`.
fn geometry_tensors(tape: &mut Tape, input: &GroupedInput) -> Result<(Var, Var, Var)> {
    let nb = input.neighbors;
    let (m, k) = (nb.len(), nb.k);
    let mut q = Vec::with_capacity(m * k * 3);
    let mut rel = Vec::with_capacity(m * k * 3);
    for (row, c) in input.centroid_positions.iter().enumerate() {
        for &j in nb.row(row) {
            let s = input
                .parent_positions
                .get(j)
                .ok_or(crate::Error::Index { index: j, bound: input.parent_positions.len() })?;
            q.extend_from_slice(s);
            rel.extend_from_slice(&[s[0] - c[0], s[1] - c[1], s[2] - c[2]]);
        }
    }
    let p = tape.constant(Tensor::from_points(input.centroid_positions));
    let q = tape.constant(Tensor::new(vec![m, k, 3], q)?);
    let rel = tape.constant(Tensor::new(vec![m, k, 3], rel)?);
    Ok((p, q, rel))
}

/// Post-softmax scores of one layer, copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub geometric: Option<Vec<f64>>,
    pub latent: Option<Vec<f64>>,
}

impl AttentionTrace {
    pub fn capture(tape: &Tape, out: &GeLattoOutput) -> Self {
        let grab = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec());
        let shape = out
            .geometric_scores
            .or(out.latent_scores)
            .map(|v| tape.shape(v).to_vec())
            .unwrap_or_else(|| vec![0, 0, 0]);
        Self {
            m: shape[0],
            k: shape[1],
            d: shape[2],
            geometric: grab(out.geometric_scores),
            latent: grab(out.latent_scores),
        }
    }

    /// Scores of centroid `m` at channel `channel`, one per neighbour slot.
    pub fn column(scores: &[f64], k: usize, d: usize, m: usize, channel: usize) -> Vec<f64> {
        (0..k).map(|j| scores[(m * k + j) * d + channel]).collect()
    }
}
