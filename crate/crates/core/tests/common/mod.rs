//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use gelatto_core::geometry::{dist2, lex_cmp, NeighborIndex, Point, PointCloud};
use gelatto_core::layers::{AttentionTrace, GeLatto, GeLattoConfig, GroupedInput, HeadMode, MlpSpec, SharedMlp};
use gelatto_core::params::{param_gradcheck, Builder, Ctx, ParamStore};
use gelatto_core::tensor::{finite_diff_gradcheck_many, ReduceKind, Tape, Tensor, Var};
use gelatto_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn mlp(store: &mut ParamStore, seed: u64, din: usize, dout: usize, spec: MlpSpec) -> SharedMlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(store, &mut rng);
    SharedMlp::new(&mut b, "mlp", din, dout, spec)
}

/// Randomises every parameter (biases included) so that no test depends on
/// zero-initialised biases.
pub fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.param_ids().collect::<Vec<_>>() {
        for v in store.param_mut(id).data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
}

pub struct Scene {
    pub centroid_pos: Vec<Point>,
    pub parent_pos: Vec<Point>,
    pub neighbors: NeighborIndex,
    pub parent_feat: Tensor,
    pub centroids: Vec<usize>,
}

pub fn scene(n: usize, m: usize, k: usize, d: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parent_pos: Vec<Point> = (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let centroids: Vec<usize> = (0..m).collect();
    let mut neighbors = Vec::new();
    for c in 0..m {
        neighbors.push(c);
        for _ in 1..k {
            neighbors.push(rng.gen_range(0..n));
        }
    }
    Scene {
        centroid_pos: centroids.iter().map(|&c| parent_pos[c]).collect(),
        parent_feat: random(&[n, d], &mut rng),
        parent_pos,
        neighbors: NeighborIndex { centroids: centroids.clone(), neighbors, radius: 10.0, k },
        centroids,
    }
}

pub fn run_layer(ctx: &mut Ctx, layer: &GeLatto, s: &Scene) -> Result<(Var, AttentionTrace)> {
    let parent = ctx.tape.constant(s.parent_feat.clone());
    let centroid = ctx.tape.gather_rows(parent, &s.centroids, &[s.centroids.len()])?;
    let input = GroupedInput {
        centroid_positions: &s.centroid_pos,
        parent_positions: &s.parent_pos,
        neighbors: &s.neighbors,
        centroid_features: centroid,
        parent_features: parent,
    };
    let out = layer.forward(ctx, &input)?;
    let trace = AttentionTrace::capture(&ctx.tape, &out);
    Ok((out.features, trace))
}

pub fn layer(d: usize, group: usize, heads: HeadMode, seed: u64) -> (ParamStore, GeLatto) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GeLattoConfig { dim: d, group_size: group, heads, transform: MlpSpec::AFFINE };
    let layer = GeLatto::new(&mut Builder::new(&mut store, &mut rng), "gl", cfg).unwrap();
    randomize(&mut store, seed + 100);
    (store, layer)
}


/// Independent scalar evaluation of the layer for D = 1, written directly
/// from the defining equations without the tape.
pub fn straight_line_oracle(store: &ParamStore, gl: &GeLatto, s: &Scene) -> Vec<f64> {
    let aff = |mlp: &SharedMlp, x: &[f64]| -> f64 {
        let a = &mlp.affines[0];
        let w = store.param(a.weight).data();
        let b = store.param(a.bias).data()[0];
        x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() + b
    };
    let aff2 = |mlp: &SharedMlp, x: [f64; 2]| -> f64 { aff(mlp, &x) };
    let k = s.neighbors.k;
    let mut out = Vec::new();
    for m in 0..s.neighbors.len() {
        let p = s.centroid_pos[m];
        let r = s.parent_feat.row(s.centroids[m])[0];
        let mut g2 = Vec::new();
        let mut h2 = Vec::new();
        for &j in s.neighbors.row(m) {
            let q = s.parent_pos[j];
            let sv = s.parent_feat.row(j)[0];
            let h = aff(&gl.latent_centroid, &[r]) + aff(&gl.latent_relative, &[sv - r]);
            let rel = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
            let g = aff(&gl.geo_centroid, &p)
                + aff(&gl.geo_relative, &rel)
                + aff(&gl.geo_neighbor, &q)
                + aff(&gl.latent_to_geo, &[h]);
            let hp = h
                + aff(gl.latent_neighbor.as_ref().unwrap(), &[sv])
                + aff(gl.geo_to_latent.as_ref().unwrap(), &[g]);
            g2.push(aff(gl.geo_out.as_ref().unwrap(), &[g]));
            h2.push(aff(gl.latent_out.as_ref().unwrap(), &[hp]));
        }
        let attend = |vals: &[f64], scorer: &SharedMlp| -> f64 {
            let raw: Vec<f64> = vals.iter().map(|v| aff(scorer, &[*v])).collect();
            let mx = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = raw.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..k).map(|i| e[i] / z * vals[i]).sum()
        };
        let gi = attend(&g2, gl.geo_score.as_ref().unwrap());
        let hi = attend(&h2, gl.latent_score.as_ref().unwrap());
        out.push(aff2(&gl.mixer, [gi, hi]));
    }
    out
}

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = PointCloud::new(
        (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)])
            .collect(),
    );
    c.colors = Some((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
    c.labels = Some((0..n).map(|_| rng.gen_range(0..3)).collect());
    c
}

/// Greedy farthest point sampling written without any shared helpers.
pub fn fps_oracle(points: &[Point], m: usize) -> Vec<usize> {
    let n = points.len();
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(lex_cmp);
    let mut c = [0.0; 3];
    for p in &sorted {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|v| v / n as f64);
    let better = |i: usize, di: f64, j: usize, dj: f64, want_max: bool| {
        let ord = if want_max { dj.total_cmp(&di) } else { di.total_cmp(&dj) };
        ord.then_with(|| lex_cmp(&points[i], &points[j])).then(i.cmp(&j)).is_lt()
    };
    let mut seed = 0;
    for i in 1..n {
        if better(i, dist2(&points[i], &c), seed, dist2(&points[seed], &c), false) {
            seed = i;
        }
    }
    let mut picked = vec![seed];
    while picked.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if picked.contains(&i) {
                continue;
            }
            let d = picked.iter().map(|&p| dist2(&points[i], &points[p])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(j, dj)| better(i, d, j, dj, true)) {
                best = Some((i, d));
            }
        }
        picked.push(best.unwrap().0);
    }
    picked
}

/// Label-smoothed cross-entropy computed directly from logit rows.
pub fn ce_oracle(logits: &Tensor, labels: &[usize], eps: f64) -> f64 {
    let c = logits.last_dim();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (j, v) in row.iter().enumerate() {
            let t = if j == l { 1.0 - eps } else { eps / (c - 1) as f64 };
            total -= t * (v - lse);
        }
    }
    total / labels.len() as f64
}

/// Ball members of `q` by linear scan, ordered nearest first (position, then index, on ties).
pub fn ball_oracle(points: &[Point], q: &Point, radius: f64) -> Vec<usize> {
    let mut ball: Vec<usize> = (0..points.len()).filter(|&j| dist2(&points[j], q) <= radius * radius).collect();
    ball.sort_by(|&a, &b| {
        dist2(&points[a], q)
            .total_cmp(&dist2(&points[b], q))
            .then(lex_cmp(&points[a], &points[b]))
            .then(a.cmp(&b))
    });
    ball
}

/// Relative finite-difference error of every differentiable tape op, per input.
pub fn op_gradient_errors() -> Vec<(&'static str, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let wide = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    };
    type Case = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);
    let cases: Vec<Case> = vec![
        (
            "linear",
            vec![vec![2, 3, 4], vec![4, 5], vec![5]],
            Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))),
        ),
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![vec![3, 4]], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("softmax0", vec![vec![4, 3, 2]], Box::new(|t, v| t.softmax(v[0], 0))),
        ("softmax1", vec![vec![4, 3, 2]], Box::new(|t, v| t.softmax(v[0], 1))),
        ("softmax2", vec![vec![4, 3, 2]], Box::new(|t, v| t.softmax(v[0], 2))),
        (
            "gather",
            vec![vec![5, 3]],
            Box::new(|t, v| t.gather_rows(v[0], &[0, 4, 4, 2, 1, 0], &[2, 3])),
        ),
        (
            "weighted_gather",
            vec![vec![5, 3]],
            Box::new(|t, v| t.weighted_gather(v[0], vec![0, 3, 4, 4, 1, 2], vec![0.2, 0.5, 0.3, 0.6, 0.3, 0.1], 3)),
        ),
        ("repeat_rows", vec![vec![3, 4]], Box::new(|t, v| t.repeat_rows(v[0], 3))),
        ("repeat_channels", vec![vec![3, 2]], Box::new(|t, v| t.repeat_channels(v[0], 3))),
        ("sum1", vec![vec![3, 4, 2]], Box::new(|t, v| t.reduce(v[0], 1, ReduceKind::Sum))),
        ("mean0", vec![vec![3, 4, 2]], Box::new(|t, v| t.reduce(v[0], 0, ReduceKind::Mean))),
        ("max1", vec![vec![3, 4, 2]], Box::new(|t, v| t.reduce(v[0], 1, ReduceKind::Max))),
        ("concat", vec![vec![3, 2], vec![3, 4]], Box::new(|t, v| t.concat(&[v[0], v[1]]))),
        ("slice", vec![vec![3, 5]], Box::new(|t, v| t.slice_last(v[0], 1, 3))),
        ("reshape", vec![vec![3, 4]], Box::new(|t, v| t.reshape(v[0], &[2, 6]))),
        (
            "batch_norm_train",
            vec![vec![6, 3], vec![3], vec![3]],
            Box::new(|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)),
        ),
        (
            "batch_norm_eval",
            vec![vec![6, 3], vec![3], vec![3]],
            Box::new(|t, v| t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)),
        ),
        (
            "cross_entropy",
            vec![vec![4, 3]],
            Box::new(|t, v| t.smoothed_cross_entropy(v[0], &[0, 2, 1, 2], 0.1)),
        ),
    ];
    let mut out = Vec::new();
    for (name, shapes, op) in cases {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| wide(s, &mut rng)).collect();
        let errs = finite_diff_gradcheck_many(
            |t, v| {
                let y = op(t, v)?;
                if t.value(y).len() == 1 {
                    Ok(y)
                } else {
                    weighted_sum(t, y, 11, &wide)
                }
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        out.extend(errs.into_iter().enumerate().map(|(i, e)| (name, i, e)));
    }
    out
}

fn weighted_sum(tape: &mut Tape, y: Var, seed: u64, random: &dyn Fn(&[usize], &mut ChaCha8Rng) -> Tensor) -> Result<Var> {
    let w = random(tape.shape(y), &mut ChaCha8Rng::seed_from_u64(seed));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

/// Finite-difference errors of every layer parameter and of the layer input,
/// for all head modes and group sizes 1 and 2.
pub fn layer_gradient_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for heads in [HeadMode::Both, HeadMode::GeometricOnly, HeadMode::LatentOnly, HeadMode::MlpPool] {
        for group in [1, 2] {
            let (store, gl) = layer(4, group, heads, 61);
            let s = scene(12, 4, 3, 4, 62);
            let weights = random(&[4, 4], &mut ChaCha8Rng::seed_from_u64(63));
            let objective = |ctx: &mut Ctx| -> Result<Var> {
                let (out, _) = run_layer(ctx, &gl, &s)?;
                let w = ctx.tape.constant(weights.clone());
                let p = ctx.tape.mul(out, w)?;
                ctx.tape.sum_all(p)
            };
            let reports = param_gradcheck(&store, 1e-5, objective).unwrap();
            out.extend(reports.into_iter().map(|r| (format!("{heads:?}/{group}: {}", r.name), r.max_rel_error)));

            // gradients with respect to the input features
            let errs = finite_diff_gradcheck_many(
                |tape, vars| {
                    let mut ctx = Ctx::new(&store, false, 0);
                    std::mem::swap(&mut ctx.tape, tape);
                    let centroid = ctx.tape.gather_rows(vars[0], &s.centroids, &[s.centroids.len()])?;
                    let input = GroupedInput {
                        centroid_positions: &s.centroid_pos,
                        parent_positions: &s.parent_pos,
                        neighbors: &s.neighbors,
                        centroid_features: centroid,
                        parent_features: vars[0],
                    };
                    let out = gl.forward(&mut ctx, &input)?.features;
                    let w = ctx.tape.constant(weights.clone());
                    let p = ctx.tape.mul(out, w)?;
                    let l = ctx.tape.sum_all(p)?;
                    std::mem::swap(&mut ctx.tape, tape);
                    Ok(l)
                },
                std::slice::from_ref(&s.parent_feat),
                1e-5,
            )
            .unwrap();
            out.push((format!("{heads:?}/{group}: input"), errs[0]));
        }
    }
    out
}
