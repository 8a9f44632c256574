use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, ParamGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Offsets {
    pub text_emb: usize,
    pub codebook_emb: Vec<usize>,
    pub pad_emb: usize,
    pub pos: usize,
    pub spk_w: usize,
    pub spk_b: usize,
    pub ad_w1: usize,
    pub ad_b1: usize,
    pub ad_w2: usize,
    pub ad_b2: usize,
    pub layers: Vec<LayerIdx>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head0_w: usize,
    pub head0_b: usize,
    pub heads_w: Vec<usize>,
    pub heads_b: Vec<usize>,
}

/// Ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: Vec<ParamInfo>,
    pub(crate) offsets: Offsets,
    pub total: usize,
}

/// How a tensor is initialized.
#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    params: Vec<ParamInfo>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, group: ParamGroup, init: Init) -> usize {
        let offset = self.total;
        self.params.push(ParamInfo { name: name.into(), offset, rows, cols, group });
        self.inits.push(init);
        self.total += rows * cols;
        offset
    }
}

fn build(cfg: &ModelConfig) -> (Layout, Vec<Init>) {
    use Init::*;
    use ParamGroup::*;
    let d = cfg.d_model;
    let v = &cfg.vocab;
    let mut b = Builder { params: Vec::new(), inits: Vec::new(), total: 0 };
    let text_emb = b.add("embed.text", v.text_size as usize, d, Embedding, Normal);
    let codebook_emb = (0..v.j())
        .map(|j| b.add(format!("embed.codebook.{j}"), v.codebook_size(j), d, Embedding, Normal))
        .collect();
    let pad_emb = b.add("embed.pad", 1, d, Embedding, Normal);
    let pos = b.add("embed.pos", cfg.max_seq, d, Backbone, Normal);
    let spk_w = b.add("speaker.w", d, cfg.speaker_dim, Speaker, Normal);
    let spk_b = b.add("speaker.b", 1, d, Speaker, Zeros);
    let ad_w1 = b.add("adapter.w1", d, cfg.adapter_in_dim, Adapter, Normal);
    let ad_b1 = b.add("adapter.b1", 1, d, Adapter, Zeros);
    let ad_w2 = b.add("adapter.w2", d, d, Adapter, Normal);
    let ad_b2 = b.add("adapter.b2", 1, d, Adapter, Zeros);
    let h = cfg.mlp_dim();
    let layers = (0..cfg.layers)
        .map(|l| LayerIdx {
            ln1_g: b.add(format!("block.{l}.ln1.g"), 1, d, Backbone, Ones),
            ln1_b: b.add(format!("block.{l}.ln1.b"), 1, d, Backbone, Zeros),
            wq: b.add(format!("block.{l}.attn.wq"), d, d, Backbone, Normal),
            wk: b.add(format!("block.{l}.attn.wk"), d, d, Backbone, Normal),
            wv: b.add(format!("block.{l}.attn.wv"), d, d, Backbone, Normal),
            wo: b.add(format!("block.{l}.attn.wo"), d, d, Backbone, Normal),
            ln2_g: b.add(format!("block.{l}.ln2.g"), 1, d, Backbone, Ones),
            ln2_b: b.add(format!("block.{l}.ln2.b"), 1, d, Backbone, Zeros),
            w1: b.add(format!("block.{l}.mlp.w1"), h, d, Backbone, Normal),
            b1: b.add(format!("block.{l}.mlp.b1"), 1, h, Backbone, Zeros),
            w2: b.add(format!("block.{l}.mlp.w2"), d, h, Backbone, Normal),
            b2: b.add(format!("block.{l}.mlp.b2"), 1, d, Backbone, Zeros),
        })
        .collect();
    let lnf_g = b.add("final_norm.g", 1, d, Backbone, Ones);
    let lnf_b = b.add("final_norm.b", 1, d, Backbone, Zeros);
    let head0_w = b.add("head.0.w", v.head0_size(), d, Heads, Normal);
    let head0_b = b.add("head.0.b", 1, v.head0_size(), Heads, Zeros);
    let mut heads_w = Vec::new();
    let mut heads_b = Vec::new();
    for j in 1..v.j() {
        heads_w.push(b.add(format!("head.{j}.w"), v.codebook_size(j), d, Heads, Normal));
        heads_b.push(b.add(format!("head.{j}.b"), 1, v.codebook_size(j), Heads, Zeros));
    }
    let offsets = Offsets {
        text_emb,
        codebook_emb,
        pad_emb,
        pos,
        spk_w,
        spk_b,
        ad_w1,
        ad_b1,
        ad_w2,
        ad_b2,
        layers,
        lnf_g,
        lnf_b,
        head0_w,
        head0_b,
        heads_w,
        heads_b,
    };
    let total = b.total;
    (Layout { params: b.params, offsets, total }, b.inits)
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        build(cfg).0
    }

    pub fn find(&self, name: &str) -> Option<&ParamInfo> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Model weights: a config echo plus one flat vector addressed by `layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl Parameters {
    /// Seeded initialization; identical seeds give bit-identical weights.
    pub fn init(config: &ModelConfig) -> Self {
        let (layout, inits) = build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).expect("valid std");
        let mut data = vec![0.0; layout.total];
        for (info, init) in layout.params.iter().zip(inits) {
            let slot = &mut data[info.range()];
            match init {
                Init::Normal => slot.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
                Init::Zeros => {}
                Init::Ones => slot.iter_mut().for_each(|x| *x = 1.0),
            }
        }
        Parameters { config: config.clone(), layout, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|p| &self.data[p.range()])
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        self.layout
            .params
            .iter()
            .find(|p| p.range().contains(&index))
            .map(|p| p.group)
            .expect("index inside layout")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_space::VocabSpec;

    #[test]
    fn layout_is_contiguous_and_named() {
        let cfg = ModelConfig::tiny(VocabSpec::uniform(16, 8, 3));
        let layout = Layout::new(&cfg);
        let mut next = 0;
        for p in &layout.params {
            assert_eq!(p.offset, next, "{}", p.name);
            next += p.len();
        }
        assert_eq!(next, layout.total);
        assert_eq!(layout.find("head.0.w").unwrap().rows, 16 + 8);
        assert!(layout.find("head.2.w").is_some());
        assert!(layout.find("head.3.w").is_none());
    }

    #[test]
    fn init_is_seeded() {
        let mut cfg = ModelConfig::tiny(VocabSpec::uniform(16, 8, 2));
        let a = Parameters::init(&cfg);
        let b = Parameters::init(&cfg);
        assert_eq!(a.data, b.data);
        cfg.seed = 1;
        assert_ne!(Parameters::init(&cfg).data, a.data);
        assert_eq!(a.tensor("block.0.ln1.g").unwrap(), &[1.0; 32][..]);
    }
}
