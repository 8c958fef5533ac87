use super::ModelError;
use crate::nn::GraphLayerKind;

/// Which rows query the knowledge nodes when pooling them into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgQuery {
    /// Question token embeddings.
    Text,
    /// Visual adapter output; falls back to the question when there is no
    /// image.
    Image,
}

impl KgQuery {
    pub fn as_str(&self) -> &'static str {
        match self {
            KgQuery::Text => "text",
            KgQuery::Image => "image",
        }
    }
}

impl std::str::FromStr for KgQuery {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(KgQuery::Text),
            "image" => Ok(KgQuery::Image),
            other => Err(format!("unknown knowledge query {other:?}; expected text or image")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Width of entity embeddings and of every graph layer.
    pub d_kg: usize,
    pub d_vis: usize,
    /// Pseudo patch features per image.
    pub n_patches: usize,
    pub decoder_layers: usize,
    pub rgat_layers: usize,
    pub kge_kind: GraphLayerKind,
    pub lambda: f64,
    pub alpha: f64,
    pub m_align: usize,
    pub use_kg: bool,
    pub use_mmkg: bool,
    pub use_alignment: bool,
    /// Rows of the token embedding and output head.
    pub vocab: usize,
    pub max_answer_len: usize,
    pub kg_query: KgQuery,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    /// Seed of the pseudo embeddings for entities, queries and patches.
    pub embed_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            d_kg: 32,
            d_vis: 16,
            n_patches: 4,
            decoder_layers: 2,
            rgat_layers: 2,
            kge_kind: GraphLayerKind::Rgat,
            lambda: 1.0,
            alpha: 1.0,
            m_align: 4,
            use_kg: true,
            use_mmkg: true,
            use_alignment: true,
            vocab: 64,
            max_answer_len: 8,
            kg_query: KgQuery::Text,
            leaky_slope: 0.2,
            elu_alpha: 1.0,
            embed_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_kg", self.d_kg),
            ("d_vis", self.d_vis),
            ("n_patches", self.n_patches),
            ("decoder_layers", self.decoder_layers),
            ("rgat_layers", self.rgat_layers),
            ("m_align", self.m_align),
            ("max_answer_len", self.max_answer_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.vocab < 2 {
            return bad("vocab must hold at least <unk> and <eos>".into());
        }
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("elu_alpha", self.elu_alpha)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite".into());
        }
        if self.use_mmkg && !self.use_kg {
            return bad("use_mmkg requires use_kg".into());
        }
        if self.use_alignment && !self.use_mmkg {
            return bad("use_alignment requires use_mmkg".into());
        }
        Ok(())
    }
}
