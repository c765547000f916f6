//! Word initialization, stacked structure layers, and the sequence encoder.
//!
//! Each structure layer first updates edge vectors on the line graph and
//! then updates node vectors on the origin graph with the fresh edge
//! vectors. Tokens that are not graph nodes skip the structure layers.

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{NodeType, EdgeType};
use crate::numeric::nn::{FeedForward, Gru};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

use super::instance::Instance;

/// Typed multi-head attention over the origin graph.
#[derive(Clone, Debug)]
pub struct OriginLayer {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    uo: Vec<ParamId>,
    psi: ParamId,
    phi: ParamId,
    /// One pre-sigmoid gate scalar per type slot, `[slots, 1]`.
    gate: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

/// Multi-head attention over the line graph.
#[derive(Clone, Debug)]
pub struct LineLayer {
    s: ParamId,
    /// Scoring vectors, one column per head over `[S z_i ‖ S z_j ‖ ρ]`.
    a: ParamId,
    sv: ParamId,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: ModelConfig,
    embed: ParamId,
    gru1: [Gru; 2],
    gru2: [Gru; 2],
    seq: [Gru; 2],
    edge_embed: ParamId,
    origin: Vec<OriginLayer>,
    line: Vec<LineLayer>,
}

/// Encoder outputs for one problem; all values live on the tape.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[n, 2d]` concatenated forward/backward states of the init BiGRU.
    pub h_x: Var,
    /// `[n, d]` forward + backward states of the init BiGRU.
    pub h_b: Var,
    pub h_str: Var,
    pub h_seq: Var,
    /// `[n, 2d]` = `[h_seq ‖ h_str]`.
    pub h_f: Var,
    /// Final forward and backward states of the sequence encoder.
    pub seq_final: (Var, Var),
    /// Edge vectors consumed by the origin layer of each structure layer.
    pub z_layers: Vec<Var>,
    /// `[edges, heads]` attention of each layer, `None` without edges.
    pub origin_attention: Vec<Option<Var>>,
    /// `[line edges, heads]` attention of each layer.
    pub line_attention: Vec<Option<Var>>,
}

fn slot_name(slot: usize, shared: bool) -> &'static str {
    if shared {
        "shared"
    } else {
        NodeType::ALL[slot].name()
    }
}

/// `[d, heads]` indicator mapping feature columns to their head.
fn head_blocks(d: usize, heads: usize) -> Tensor {
    let width = d / heads;
    let mut t = Tensor::zeros(&[d, heads]);
    for c in 0..d {
        t.data_mut()[c * heads + c / width] = 1.0;
    }
    t
}

fn column(values: impl IntoIterator<Item = f64>) -> Tensor {
    let data: Vec<f64> = values.into_iter().collect();
    Tensor::matrix(data.len(), 1, data)
}

/// Multiplies each row of `x` by the matrix of its slot.
fn typed_matmul(tape: &mut Tape, store: &ParamStore, x: Var, slots: &[usize], mats: &[ParamId]) -> Result<Var> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &s) in slots.iter().enumerate() {
        groups.entry(s).or_default().push(r);
    }
    if groups.len() == 1 {
        let s = *groups.keys().next().expect("one group");
        let w = tape.param(store, mats[s]);
        return tape.matmul(x, w);
    }
    let mut parts = Vec::with_capacity(groups.len());
    let mut pos = vec![0usize; slots.len()];
    let mut offset = 0;
    for (s, rows) in groups {
        let xs = tape.gather_rows(x, &rows)?;
        let w = tape.param(store, mats[s]);
        parts.push(tape.matmul(xs, w)?);
        for (k, &r) in rows.iter().enumerate() {
            pos[r] = offset + k;
        }
        offset += rows.len();
    }
    let cat = tape.concat_rows(&parts)?;
    tape.gather_rows(cat, &pos)
}

impl Encoder {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.hidden;
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(Error::Config(format!("heads ({}) must divide hidden ({d})", cfg.heads)));
        }
        let embed = store.init_table("enc.embed", vocab_size, d, rng);
        let gru = |store: &mut ParamStore, name: &str, input: usize, rng: &mut _| {
            [
                Gru::register(store, &format!("{name}.fwd"), input, d, rng),
                Gru::register(store, &format!("{name}.bwd"), input, d, rng),
            ]
        };
        let gru1 = gru(store, "enc.gru1", d, rng);
        let gru2 = gru(store, "enc.gru2", 2 * d, rng);
        let seq = gru(store, "enc.seq", d, rng);
        let edge_embed = store.init_table("enc.edge_embed", EdgeType::COUNT, d, rng);

        let shared = cfg.ablate.node_type;
        let slots = if shared { 1 } else { NodeType::COUNT };
        let mut origin = Vec::new();
        let mut line = Vec::new();
        for l in 0..cfg.layers {
            if !cfg.ablate.line_graph {
                let p = format!("enc.l{l}.line");
                line.push(LineLayer {
                    s: store.init_matrix(format!("{p}.s"), d, d, rng),
                    a: store.init_matrix(format!("{p}.a"), 3 * d, cfg.heads, rng),
                    sv: store.init_matrix(format!("{p}.sv"), 2 * d, d, rng),
                    ffn: FeedForward::register(store, &format!("{p}.ffn"), d, d, rng),
                });
            }
            let p = format!("enc.l{l}.origin");
            let typed = |what: &str, store: &mut ParamStore, rng: &mut _| -> Vec<ParamId> {
                (0..slots)
                    .map(|s| store.init_matrix(format!("{p}.{}.{what}", slot_name(s, shared)), d, d, rng))
                    .collect()
            };
            let wq = typed("wq", store, rng);
            let wk = typed("wk", store, rng);
            let wv = typed("wv", store, rng);
            let uo = typed("uo", store, rng);
            origin.push(OriginLayer {
                wq,
                wk,
                wv,
                uo,
                psi: store.init_matrix(format!("{p}.psi"), d, d, rng),
                phi: store.init_matrix(format!("{p}.phi"), d, d, rng),
                gate: store.init_const(format!("{p}.gate"), slots, 1, 0.0),
                ln_gain: store.init_const(format!("{p}.ln.gain"), 1, d, 1.0),
                ln_bias: store.init_const(format!("{p}.ln.bias"), 1, d, 0.0),
            });
        }
        Ok(Encoder {
            cfg: cfg.clone(),
            embed,
            gru1,
            gru2,
            seq,
            edge_embed,
            origin,
            line,
        })
    }

    fn slot(&self, t: NodeType) -> usize {
        if self.cfg.ablate.node_type {
            0
        } else {
            t.index()
        }
    }

    /// Two-layer BiGRU over word embeddings. Returns `(h_x, h_b)`.
    pub fn init_word_reps(&self, tape: &mut Tape, store: &ParamStore, token_ids: &[usize]) -> Result<(Var, Var)> {
        if token_ids.is_empty() {
            return Err(Error::shape("init_word_reps", "empty token list"));
        }
        let table = tape.param(store, self.embed);
        let emb = tape.gather_rows(table, token_ids)?;
        let (f1, _) = self.gru1[0].run(tape, store, emb, false)?;
        let (b1, _) = self.gru1[1].run(tape, store, emb, true)?;
        let x2 = tape.concat_cols(&[f1, b1])?;
        let (f2, _) = self.gru2[0].run(tape, store, x2, false)?;
        let (b2, _) = self.gru2[1].run(tape, store, x2, true)?;
        let h_x = tape.concat_cols(&[f2, b2])?;
        let h_b = tape.add(f2, b2)?;
        Ok((h_x, h_b))
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, inst: &Instance) -> Result<Encoded> {
        let (h_x, h_b) = self.init_word_reps(tape, store, &inst.token_ids)?;
        let (fs, f_last) = self.seq[0].run(tape, store, h_b, false)?;
        let (bs, b_last) = self.seq[1].run(tape, store, h_b, true)?;
        let h_seq = tape.add(fs, bs)?;

        let g = &inst.graph;
        let mut z_layers = Vec::new();
        let mut origin_attention = Vec::new();
        let mut line_attention = Vec::new();
        let h_str = if g.nodes.is_empty() || self.origin.is_empty() {
            h_b
        } else {
            let node_tok: Vec<usize> = g.nodes.iter().map(|n| n.token_index).collect();
            let mut h = tape.gather_rows(h_b, &node_tok)?;
            let z_static = if g.edges.is_empty() {
                None
            } else {
                let table = tape.param(store, self.edge_embed);
                let types: Vec<usize> = g.edges.iter().map(|e| e.kind.index()).collect();
                Some(tape.gather_rows(table, &types)?)
            };
            let mut z = z_static;
            for (l, origin) in self.origin.iter().enumerate() {
                if let (Some(layer), Some(zc), Some(zs)) = (self.line.get(l), z, z_static) {
                    let (zn, att) = self.line_layer(tape, store, layer, zc, zs, h, inst)?;
                    z = Some(zn);
                    line_attention.push(att);
                }
                if let Some(zc) = z {
                    z_layers.push(zc);
                }
                let (hn, att) = self.origin_layer(tape, store, origin, h, z, inst)?;
                h = hn;
                origin_attention.push(att);
            }
            let n = inst.len();
            let mut map: Vec<usize> = (0..n).collect();
            for (k, &t) in node_tok.iter().enumerate() {
                map[t] = n + k;
            }
            let all = tape.concat_rows(&[h_b, h])?;
            tape.gather_rows(all, &map)?
        };
        let h_f = tape.concat_cols(&[h_seq, h_str])?;
        Ok(Encoded {
            h_x,
            h_b,
            h_str,
            h_seq,
            h_f,
            seq_final: (f_last, b_last),
            z_layers,
            origin_attention,
            line_attention,
        })
    }

    /// One origin-graph update. `h` is `[nodes, d]`, `z` is `[edges, d]`.
    pub fn origin_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &OriginLayer,
        h: Var,
        z: Option<Var>,
        inst: &Instance,
    ) -> Result<(Var, Option<Var>)> {
        let g = &inst.graph;
        let (n, d) = tape.shape(h);
        let m = self.cfg.heads;
        let slots: Vec<usize> = g.nodes.iter().map(|nd| self.slot(nd.kind)).collect();
        let gain = tape.param(store, p.ln_gain);
        let bias = tape.param(store, p.ln_bias);
        let Some(z) = z.filter(|_| !g.edges.is_empty()) else {
            return Ok((tape.layer_norm(h, gain, bias)?, None));
        };
        let src: Vec<usize> = g.edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = g.edges.iter().map(|e| e.dst).collect();

        let q = typed_matmul(tape, store, h, &slots, &p.wq)?;
        let k = typed_matmul(tape, store, h, &slots, &p.wk)?;
        let v = typed_matmul(tape, store, h, &slots, &p.wv)?;
        let psi = tape.param(store, p.psi);
        let phi = tape.param(store, p.phi);
        let zk = tape.matmul(z, psi)?;
        let zv = tape.matmul(z, phi)?;

        // Per head: <q_i, k_j ⊙ ψ(z_ji)> / sqrt(d / M).
        let qe = tape.gather_rows(q, &dst)?;
        let ke = tape.gather_rows(k, &src)?;
        let ke = tape.mul(ke, zk)?;
        let prod = tape.mul(qe, ke)?;
        let blocks = head_blocks(d, m);
        let spread = tape.constant(blocks.transpose())?;
        let blocks = tape.constant(blocks)?;
        let scores = tape.matmul(prod, blocks)?;
        let scores = tape.scale(scores, 1.0 / ((d / m) as f64).sqrt());
        let att = tape.group_softmax(scores, &dst)?;

        let ve = tape.gather_rows(v, &src)?;
        let ve = tape.mul(ve, zv)?;
        let weights = tape.matmul(att, spread)?;
        let msg = tape.mul(weights, ve)?;
        let agg = tape.scatter_add_rows(msg, &dst, n)?;
        let out = typed_matmul(tape, store, agg, &slots, &p.uo)?;

        // Gate sigmoid(δ_τ); nodes without in-edges keep gate 1.
        let mut has_in = vec![0.0; n];
        for &t in &dst {
            has_in[t] = 1.0;
        }
        let gate_table = tape.param(store, p.gate);
        let gate = tape.gather_rows(gate_table, &slots)?;
        let gate = tape.sigmoid(gate);
        let mask = tape.constant(column(has_in.iter().copied()))?;
        let gate = tape.mul(gate, mask)?;
        let fill = tape.constant(column(has_in.iter().map(|&x| 1.0 - x)))?;
        let gate = tape.add(gate, fill)?;
        let keep = tape.mul_col(h, gate)?;
        let rest = tape.one_minus(gate);
        let upd = tape.mul_col(out, rest)?;
        let mixed = tape.add(keep, upd)?;
        Ok((tape.layer_norm(mixed, gain, bias)?, Some(att)))
    }

    /// One line-graph update. `z` is the dynamic state, `z_static` the type
    /// embeddings read whenever an edge acts as a message source.
    #[allow(clippy::too_many_arguments)]
    pub fn line_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &LineLayer,
        z: Var,
        z_static: Var,
        h: Var,
        inst: &Instance,
    ) -> Result<(Var, Option<Var>)> {
        let lg = &inst.line;
        let n_nodes = inst.graph.nodes.len();
        if let Some(e) = lg.edges.iter().find(|e| e.shared >= n_nodes) {
            return Err(Error::Graph(format!("line edge references missing node {}", e.shared)));
        }
        let (e_count, d) = tape.shape(z);
        let m = self.cfg.heads;
        let mut isolated = vec![1.0; e_count];
        for e in &lg.edges {
            isolated[e.to] = 0.0;
        }
        let iso = tape.constant(column(isolated))?;
        let carried = tape.mul_col(z, iso)?;
        let (agg, att) = if lg.edges.is_empty() {
            (carried, None)
        } else {
            let from: Vec<usize> = lg.edges.iter().map(|e| e.from).collect();
            let to: Vec<usize> = lg.edges.iter().map(|e| e.to).collect();
            let shared: Vec<usize> = lg.edges.iter().map(|e| e.shared).collect();
            let s = tape.param(store, p.s);
            let s_dyn = tape.matmul(z, s)?;
            let s_stat = tape.matmul(z_static, s)?;
            let tgt = tape.gather_rows(s_dyn, &to)?;
            let src = tape.gather_rows(s_stat, &from)?;
            let rho = tape.gather_rows(h, &shared)?;
            let x = tape.concat_cols(&[tgt, src, rho])?;
            let a = tape.param(store, p.a);
            let scores = tape.matmul(x, a)?;
            let scores = tape.leaky_relu(scores);
            let att = tape.group_softmax(scores, &to)?;

            let zsrc = tape.gather_rows(z_static, &from)?;
            let vin = tape.concat_cols(&[zsrc, rho])?;
            let sv = tape.param(store, p.sv);
            let vals = tape.matmul(vin, sv)?;
            let spread = tape.constant(head_blocks(d, m).transpose())?;
            let weights = tape.matmul(att, spread)?;
            let msg = tape.mul(weights, vals)?;
            let sum = tape.scatter_add_rows(msg, &to, e_count)?;
            (tape.add(sum, carried)?, Some(att))
        };
        let out = p.ffn.forward(tape, store, agg)?;
        Ok((out, att))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ablations, ModelConfig};
    use crate::data::{generate_synthetic, ConstantTable};
    use crate::model::vocab::Vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(ablate: Ablations) -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            layers: 2,
            max_len: 30,
            allow_pow: true,
            ablate,
        }
    }

    fn setup(ablate: Ablations) -> (Encoder, ParamStore, Vec<Instance>) {
        let ps = generate_synthetic(4, 10);
        let vocab = Vocab::build(&ps);
        let consts = ConstantTable::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::register(&mut store, &cfg(ablate), vocab.len(), &mut rng).unwrap();
        let insts = ps.iter().map(|p| Instance::new(p, &vocab, consts.len(), true).unwrap()).collect();
        (enc, store, insts)
    }

    #[test]
    fn zero_weights_give_zero_base_vectors() {
        let (enc, mut store, insts) = setup(Ablations::default());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.name(id).starts_with("enc.gru") {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
        let mut t = Tape::new();
        let (_, hb) = enc.init_word_reps(&mut t, &store, &insts[0].token_ids).unwrap();
        assert!(t.value(hb).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn base_vectors_sum_directions() {
        let mut t = Tape::new();
        let f = t.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::row(vec![3.0, 4.0])).unwrap();
        let hb = t.add(f, b).unwrap();
        assert_eq!(t.value(hb).data(), &[4.0, 6.0]);
    }

    #[test]
    fn tied_directions_are_mirror_images() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gru = Gru::register(&mut store, "g", 3, 4, &mut rng);
        let xs: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let mut rev = Vec::new();
        for r in (0..5).rev() {
            rev.extend_from_slice(&xs[r * 3..r * 3 + 3]);
        }
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(5, 3, xs)).unwrap();
        let b = t.constant(Tensor::matrix(5, 3, rev)).unwrap();
        let (fwd, _) = gru.run(&mut t, &store, a, false).unwrap();
        let (bwd, _) = gru.run(&mut t, &store, b, true).unwrap();
        for r in 0..5 {
            assert_eq!(t.value(fwd).row_slice(r), t.value(bwd).row_slice(4 - r));
        }
    }

    #[test]
    fn shapes_and_attention_rows() {
        let (enc, store, insts) = setup(Ablations::default());
        for inst in &insts {
            let mut t = Tape::new();
            let e = enc.encode(&mut t, &store, inst).unwrap();
            let n = inst.len();
            assert_eq!(t.shape(e.h_f), (n, 16));
            assert_eq!(t.shape(e.h_str), (n, 8));
            for att in e.origin_attention.iter().chain(&e.line_attention).flatten() {
                let v = t.value(*att);
                assert_eq!(v.cols(), 2);
                assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn non_graph_tokens_bypass_structure_layers() {
        let (enc, store, insts) = setup(Ablations::default());
        let inst = &insts[0];
        let mut t = Tape::new();
        let e = enc.encode(&mut t, &store, inst).unwrap();
        for tok in 0..inst.len() {
            let in_graph = inst.graph.node_of_token(tok).is_some();
            let same = t.value(e.h_str).row_slice(tok) == t.value(e.h_b).row_slice(tok);
            assert_eq!(same, !in_graph, "token {tok}");
        }
    }

    #[test]
    fn zero_layers_pass_base_vectors_through() {
        let ps = generate_synthetic(4, 2);
        let vocab = Vocab::build(&ps);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = ModelConfig {
            layers: 0,
            ..cfg(Ablations::default())
        };
        let enc = Encoder::register(&mut store, &c, vocab.len(), &mut rng).unwrap();
        let inst = Instance::new(&ps[0], &vocab, 3, true).unwrap();
        let mut t = Tape::new();
        let e = enc.encode(&mut t, &store, &inst).unwrap();
        assert_eq!(t.value(e.h_str), t.value(e.h_b));
    }

    #[test]
    fn line_ablation_keeps_static_edges() {
        let (enc, store, insts) = setup(Ablations {
            line_graph: true,
            ..Default::default()
        });
        assert!(!store.iter().any(|(_, name, _)| name.contains(".line.")));
        let table = store.by_name("enc.edge_embed").unwrap();
        for inst in &insts {
            let mut t = Tape::new();
            let e = enc.encode(&mut t, &store, inst).unwrap();
            for z in &e.z_layers {
                for (r, edge) in inst.graph.edges.iter().enumerate() {
                    assert_eq!(t.value(*z).row_slice(r), table.row_slice(edge.kind.index()));
                }
            }
        }
    }

    #[test]
    fn heads_must_divide_hidden() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = ModelConfig {
            heads: 3,
            ..cfg(Ablations::default())
        };
        assert!(Encoder::register(&mut store, &c, 5, &mut rng).is_err());
    }

    #[test]
    fn head_block_layout() {
        let b = head_blocks(4, 2);
        assert_eq!(b.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
