//! Individual–group interaction: the k-nearest-neighbor graph, the three
//! pairwise/group similarity measures, and the message-passing network that
//! turns them into a per-pedestrian social feature.
//!
//! Similarities map a cosine onto `[0, 1]`; degenerate inputs (zero-norm
//! vectors, coincident positions, empty neighborhoods) return the neutral
//! midpoint `0.5`. Edge features have a static layout — relative motion
//! (4), approach tendency, motion alignment, group conformity — with
//! disabled terms zeroed in place.

use crate::autodiff::{concat, Activation, Mlp, ParamSet, Value};
use crate::scene::Vec2;
use rand::Rng;

/// Per-pedestrian neighbor lists at one frame: `(index, distance)` sorted by
/// distance, ties broken by lower pedestrian index, self excluded. Entries
/// exist only for valid pedestrians.
#[derive(Clone, Debug, Default)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

/// Euclidean k-nearest neighbors among valid pedestrians.
pub fn build_knn(positions: &[Option<Vec2>], top_k: usize) -> NeighborGraph {
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        let Some(pi) = positions[i] else { continue };
        let mut candidates: Vec<(usize, f64)> = positions
            .iter()
            .enumerate()
            .filter(|(j, p)| *j != i && p.is_some())
            .map(|(j, p)| (j, pi.distance(p.unwrap())))
            .collect();
        candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        candidates.truncate(top_k);
        neighbors[i] = candidates;
    }
    NeighborGraph { neighbors }
}

/// Map a cosine value onto `[0, 1]`.
fn half_shift(cos: f64) -> f64 {
    (0.5 * (cos + 1.0)).clamp(0.0, 1.0)
}

/// Approach tendency: cosine between the normalized offset `p_j - p_i` and
/// the neighbor's velocity direction, mapped onto `[0, 1]`.
pub fn sim1(delta_p: Vec2, v_j: Vec2) -> f64 {
    if delta_p.norm() < 1e-12 || v_j.norm() < 1e-12 {
        return 0.5;
    }
    half_shift(delta_p.unit_or_zero().dot(v_j.unit_or_zero()))
}

/// Motion alignment: cosine between the two velocity directions on `[0, 1]`.
pub fn sim2(v_i: Vec2, v_j: Vec2) -> f64 {
    if v_i.norm() < 1e-12 || v_j.norm() < 1e-12 {
        return 0.5;
    }
    half_shift(v_i.unit_or_zero().dot(v_j.unit_or_zero()))
}

/// Group conformity: cosine between a pedestrian's motion state `v ++ a` and
/// the neighborhood average of the same, on `[0, 1]`.
pub fn sim3(w_i: [f64; 4], g_i: [f64; 4]) -> f64 {
    let norm = |x: &[f64; 4]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (nw, ng) = (norm(&w_i), norm(&g_i));
    if nw < 1e-12 || ng < 1e-12 {
        return 0.5;
    }
    let dot: f64 = w_i.iter().zip(&g_i).map(|(a, b)| a * b).sum();
    half_shift(dot / (nw * ng))
}

/// Graph version of the cosine-to-unit-interval map used by all three
/// similarities: `clamp01((unit(a) . unit(b) + 1) / 2)`, with zero-safe
/// normalization returning the neutral 0.5 on degenerate input.
pub fn sim_value(a: &Value, b: &Value) -> Value {
    let degenerate = {
        let sq = |v: &Value| v.data().iter().map(|x| x * x).sum::<f64>();
        sq(a).sqrt() < 1e-12 || sq(b).sqrt() < 1e-12
    };
    if degenerate {
        return Value::scalar(0.5);
    }
    a.l2_unit()
        .dot(&b.l2_unit())
        .add_const(1.0)
        .scale_const(0.5)
        .clamp01()
}

/// Kinematic state of one pedestrian as graph values.
#[derive(Clone)]
pub struct AgentNodes {
    pub position: Value,
    pub velocity: Value,
    pub acceleration: Value,
}

impl AgentNodes {
    pub fn from_parts(position: Vec2, velocity: Vec2, acceleration: Vec2) -> Self {
        AgentNodes {
            position: Value::vector(vec![position.x, position.y]),
            velocity: Value::vector(vec![velocity.x, velocity.y]),
            acceleration: Value::vector(vec![acceleration.x, acceleration.y]),
        }
    }

    pub fn position_vec2(&self) -> Vec2 {
        let d = self.position.data();
        Vec2::new(d[0], d[1])
    }

    /// `[p, v, a]` as one six-vector.
    pub fn state6(&self) -> Value {
        concat(&[&self.position, &self.velocity, &self.acceleration])
    }

    /// Motion state `v ++ a`.
    pub fn motion4(&self) -> Value {
        concat(&[&self.velocity, &self.acceleration])
    }
}

/// Which edge-feature terms are active.
#[derive(Clone, Copy, Debug)]
pub struct IgiToggles {
    pub use_relative_motion: bool,
    pub use_sim1: bool,
    pub use_sim2: bool,
    pub use_sim3: bool,
}

impl Default for IgiToggles {
    fn default() -> Self {
        IgiToggles {
            use_relative_motion: true,
            use_sim1: true,
            use_sim2: true,
            use_sim3: true,
        }
    }
}

/// Dimension configuration for the interaction network.
#[derive(Clone, Copy, Debug)]
pub struct IgiSettings {
    pub layers: usize,
    pub hidden: usize,
    pub message_dim: usize,
    pub out_dim: usize,
    pub noise_dim: usize,
    pub toggles: IgiToggles,
}

/// Message-passing network over the neighbor graph. The edge MLP is shared
/// across layers (edge features are static within a frame, so messages are
/// computed once); node MLPs are per-layer.
pub struct IgiModule {
    pub settings: IgiSettings,
    mlp_init: Mlp,
    mlp_edge: Mlp,
    mlp_nodes: Vec<Mlp>,
    mlp_out: Mlp,
}

impl IgiModule {
    pub fn new(params: &mut ParamSet, settings: IgiSettings, rng: &mut impl Rng) -> Self {
        assert!(settings.layers >= 1, "interaction network needs at least one layer");
        let h = settings.hidden;
        let m = settings.message_dim;
        let mlp_init = Mlp::init(
            params,
            "igi.init",
            &[6 + settings.noise_dim + 4, h, h],
            Activation::Tanh,
            rng,
        );
        let mlp_edge = Mlp::init(params, "igi.edge", &[7, m, m], Activation::Tanh, rng);
        let mlp_nodes = (0..settings.layers)
            .map(|l| {
                Mlp::init(
                    params,
                    &format!("igi.node.{l}"),
                    &[h + m + 4, h, h],
                    Activation::Tanh,
                    rng,
                )
            })
            .collect();
        let mlp_out = Mlp::init(
            params,
            "igi.out",
            &[h, settings.out_dim],
            Activation::Tanh,
            rng,
        );
        IgiModule {
            settings,
            mlp_init,
            mlp_edge,
            mlp_nodes,
            mlp_out,
        }
    }

    /// Edge feature `r_ij ++ sim1 ++ sim2 ++ sim3_i` with disabled terms
    /// zeroed. `g_i` is the neighborhood-average motion of pedestrian `i`.
    fn edge_feature(&self, node_i: &AgentNodes, node_j: &AgentNodes, g_i: &Value) -> Value {
        let t = self.settings.toggles;
        let zero2 = Value::vector(vec![0.0, 0.0]);
        let (dp, dv) = if t.use_relative_motion {
            (
                node_j.position.sub(&node_i.position),
                node_j.velocity.sub(&node_i.velocity),
            )
        } else {
            (zero2.clone(), zero2)
        };
        let s1 = if t.use_sim1 {
            sim_value(&node_j.position.sub(&node_i.position), &node_j.velocity)
        } else {
            Value::scalar(0.0)
        };
        let s2 = if t.use_sim2 {
            sim_value(&node_i.velocity, &node_j.velocity)
        } else {
            Value::scalar(0.0)
        };
        let s3 = if t.use_sim3 {
            sim_value(&node_i.motion4(), g_i)
        } else {
            Value::scalar(0.0)
        };
        concat(&[&dp, &dv, &s1, &s2, &s3])
    }

    /// Social feature per pedestrian. `nodes[i]` is `None` for pedestrians
    /// that are invalid this frame (they produce no output and are skipped as
    /// neighbors by the graph). `noise[i]` must be `noise_dim` long.
    pub fn forward(
        &self,
        nodes: &[Option<AgentNodes>],
        graph: &NeighborGraph,
        noise: &[Vec<f64>],
        ) -> Vec<Option<Value>> {
        let n = nodes.len();
        assert_eq!(graph.neighbors.len(), n, "graph built for a different frame");
        assert_eq!(noise.len(), n, "noise entries must match pedestrians");

        // Neighborhood-average motion g_i (zero for empty neighborhoods).
        let g: Vec<Option<Value>> = (0..n)
            .map(|i| {
                nodes[i].as_ref()?;
                let members: Vec<&AgentNodes> = graph.neighbors[i]
                    .iter()
                    .filter_map(|(j, _)| nodes[*j].as_ref())
                    .collect();
                if members.is_empty() {
                    return Some(Value::vector(vec![0.0; 4]));
                }
                let mut acc = members[0].motion4();
                for m in &members[1..] {
                    acc = acc.add(&m.motion4());
                }
                Some(acc.scale_const(1.0 / members.len() as f64))
            })
            .collect();

        // Messages are independent of hidden state, so one pass serves all
        // layers: mean over neighbors of MLP_edge(e_ij).
        let messages: Vec<Option<Value>> = (0..n)
            .map(|i| {
                let node_i = nodes[i].as_ref()?;
                let g_i = g[i].as_ref().unwrap();
                let edges: Vec<Value> = graph.neighbors[i]
                    .iter()
                    .filter_map(|(j, _)| nodes[*j].as_ref().map(|nj| (nj, j)))
                    .map(|(node_j, _)| self.mlp_edge.apply(&self.edge_feature(node_i, node_j, g_i)))
                    .collect();
                if edges.is_empty() {
                    return Some(Value::vector(vec![0.0; self.settings.message_dim]));
                }
                let mut acc = edges[0].clone();
                for e in &edges[1..] {
                    acc = acc.add(e);
                }
                Some(acc.scale_const(1.0 / edges.len() as f64))
            })
            .collect();

        (0..n)
            .map(|i| {
                let node_i = nodes[i].as_ref()?;
                let g_i = g[i].as_ref().unwrap();
                let g_norm = g_i.l2_unit();
                let eps = Value::vector(noise[i].clone());
                let mut h = self
                    .mlp_init
                    .apply(&concat(&[&node_i.state6(), &eps, g_i]));
                for layer in &self.mlp_nodes {
                    h = layer.apply(&concat(&[&h, messages[i].as_ref().unwrap(), &g_norm]));
                }
                Some(self.mlp_out.apply(&h))
            })
            .collect()
    }
}
